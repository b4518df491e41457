from .optimizer import AdamState, adam_step
from .losses import estimation_loss, validation_loss, approximation_loss, approximation_grad_check
from .metrics import metric_delta, metric_rel_kl, model_logdensity, mode_coverage, hole_violation
from .trainer import (FlowTrainer, Experiment, prepare_experiment, trainer_from_config, run_experiment, train,
                      generation_rng)
