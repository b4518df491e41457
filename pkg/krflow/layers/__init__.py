from .network import MlpParams, MlpCache, mlp_init, mlp_forward, mlp_vjp
from .bijections import (Bijection, ActiveMask, prefix_mask, AffineCoupling, ScaleBias, Rotation, Squeeze, CdfLayer,
                         LogitTransform, nonuniform_mesh, coupling_forward, coupling_inverse, scale_bias_apply,
                         rotation_apply, squeeze_apply, cdf_forward, cdf_inverse, logit_preprocess, layer_vjp)
