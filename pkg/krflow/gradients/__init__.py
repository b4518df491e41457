from .adjoint import GradientBundle, AdjointState, CacheLedger, backprop_grad, adjoint_grad, reparam_grad, grad_check, compare_paths
