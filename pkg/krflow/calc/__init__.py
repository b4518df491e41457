from .utils import (MCEstimate, check_positivity_or_throw, check_finite_or_throw, as_batch, make_rng, split_rng,
                    rng_state, restore_rng, gauss_sample, finite_diff_jacobian, logsumexp, std_normal_logpdf, mc_mean)
