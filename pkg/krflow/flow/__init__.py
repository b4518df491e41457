from .KRnet import (FlowConfig, FlowModel, ParameterRegistry, ParamEntry, build_model, forward_logdensity, sample,
                    marginal_logdensity, count_params, ode_limit_probe, volume_preserving_trajectory)
