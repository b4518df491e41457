from .distributions import (TargetDistribution, HoleSpec, Normalizer, SENTINEL, logistic_target, lognormal_target,
                            uniform_target, uniform_hole_target, mixture_target, mixture_centers, gaussian_target,
                            hole_spec, hole_region, holes_target, sample_target, logpdf_target, analytic_entropy,
                            estimate_entropy_mc, estimate_normalizer, cached_normalizer, normalized_target, get_target,
                            export_samples)
