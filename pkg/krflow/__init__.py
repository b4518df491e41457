"""
_____________________________________________________________________________________________
|                                                                                           |
|       krflow package: KRnet normalizing flows with augmented dimensions                   |
|                                                                                           |
| This package provides invertible transport maps built on the Knothe-Rosenblatt            |
| rearrangement for density estimation and density approximation, with exact inverses,     |
| closed-form log-determinants and exact gradients by the discrete adjoint method.          |
|___________________________________________________________________________________________|

CONTENTS

Layers:
    -Affine coupling (discrete and ODE step), scale and bias, rotation, squeezing, nonlinear CDF layer, logistic
     preprocessing

Models:
    -KRnet, augmented KRnet, KRnet_ODE, real NVP equivalent, parameter-count audit, marginal densities of augmented
     models

Gradients:
    -Cached backpropagation, discrete adjoint, reparameterized reverse KL, finite-difference audit

Targets:
    -Logistic, lognormal, uniform, uniform with a hole, 2D mixture of Gaussians, logistic with elliptic holes

Training:
    -ADAM, estimation and approximation losses, relative error and relative KL metrics, FlowTrainer

Command line:
    -python -m krflow {fit, approx, eval, gradcheck, paramcount, repro}
"""
from .flow import (FlowConfig, FlowModel, build_model, forward_logdensity, sample, marginal_logdensity, count_params,
                   ode_limit_probe, volume_preserving_trajectory)
from .datasets import (TargetDistribution, HoleSpec, get_target, logistic_target, lognormal_target, uniform_target,
                       uniform_hole_target, mixture_target, gaussian_target, holes_target, sample_target,
                       logpdf_target, analytic_entropy, estimate_entropy_mc, estimate_normalizer, export_samples)
from .calc import make_rng, split_rng
from .gradients import backprop_grad, adjoint_grad, reparam_grad, grad_check
from .train import (AdamState, adam_step, estimation_loss, approximation_loss, metric_delta, metric_rel_kl,
                    FlowTrainer, train)
from .base import ExperimentConfig, variant_model

import krflow.calc
import krflow.layers
import krflow.graphics
import krflow.cli

from .version import __version__
