"""Desk-scale contrastive representation learning laboratory.

A numpy implementation of a contrastive loss family (NT-Xent, decoupled,
balanced, generalized), numerical verification of the attract/repel upper
bounds and the smooth-max lemmas behind them, synthetic vector datasets
with label-preserving augmentations, a small exactly-differentiated MLP
encoder, frozen-representation evaluation, and a deterministic experiment
harness with a CLI.
"""

from .diagnostics import (AttractBoundReport, BiasReport, RepelBoundReport,
                          SuiteResult, SUITE_NAMES, attract_bound_gap,
                          check_lemma1, check_lemma2, check_lemma3,
                          checkpoint_gaps, fraction_of_decreases, gap_curve,
                          prototype_bias, repel_bound_gap, run_all_suites,
                          run_suite)
from .encoder import (EncoderConfig, MlpParams, OptimizerConfig, cosine_lr,
                      encoder_forward, forward_batch, init_params,
                      load_checkpoint, parameter_gradients, save_checkpoint,
                      train_step)
from .errors import (ConfigInvalid, ContrastiveLabError, DimensionMismatch,
                     EmptyInput, KTooLarge, NearZeroNorm, NonPositiveAlpha,
                     PreconditionViolated, SingletonClass, UnbalancedClasses)
from .evaluation import EvalReport, knn_eval, linear_probe
from .geometry import (cosine_similarity, lse_scaled, neg_sq_euclidean,
                       normalize)
from .harness import (DEFAULT_CONFIG, ExperimentConfig, MetricsRow,
                      TrainResult, config_from_dict, load_config, run_bias,
                      run_eval, run_gaps, run_grid, run_train, run_verify)
from .losses import (LOSS_KINDS, BatchViews, LossBreakdown, LossParams,
                     RepGradients, balanced_contrastive_loss, decoupled_loss,
                     generalized_ntxent_loss, loss_by_name,
                     loss_grad_wrt_reps, ntxent_loss, total_loss_theoretical)
from .seeding import derive_seed
from .synthdata import (AugmentationSpec, Dataset, DatasetSpec, LabeledSample,
                        augment, augment_batch, augment_pair_batch,
                        generate_dataset, pareto_counts, resample_balanced)

__version__ = "0.1.0"
