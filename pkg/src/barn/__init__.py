"""BARN: additive ensembles of small neural nets, sampled by MCMC over architectures."""

from .callbacks import (CallbackContext, StopSignal, check_every_default,
                        make_stop_callback, rfwsr_stop, t_critical,
                        trans_enough, validation_stop, wasserstein1,
                        wasserstein_stop)
from .classify import fit_bin, norm_cdf, predict_proba, predict_z, sample_latent
from .datasets import (Dataset, bignn_fit, destandardize_y, gen_friedman,
                       gen_linear, load_csv, ols_fit, save_csv, standardize,
                       train_test_split)
from .ensemble import (BarnConfig, EnsembleState, TraceRecord, batch_means,
                       fit, gibbs_sweep, load_model, load_trace,
                       model_from_json, model_to_json, predict, save_model,
                       save_trace)
from .mcmc import (PriorConfig, SamplerError, accept, log_accept_ratio,
                   log_evidence, log_prior, log_transition, poisson_log_pmf,
                   propose_size, sample_sigma)
from .mlp import (SmallNet, TrainConfig, TrainingError, donate_weights,
                  forward, loss_and_grad, select_solver, train)
from .tuning import (CvResult, Poisson, Uniform, UniformInt, apply_params,
                     grid_search, kfold_split, random_search)

__version__ = "0.1.0"
