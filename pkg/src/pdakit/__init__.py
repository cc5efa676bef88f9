"""Partial domain adaptation on pre-extracted feature vectors.

The pipeline estimates the target label distribution from black-box
predictions, redraws a labeled sampling domain as within-class convex
combinations of source pairs with those estimated class frequencies, and
aligns per-class feature distributions across domains with an
optimal-transport independence criterion whose two-column fixed point runs in
O(n^2) per iteration.  Diagnostics include an additive error-gap bound
between the sampling and target domains and a class-conditional
domain-discrepancy probe.
"""

from ._backend import active_backend, compiled_available
from .core import (
    FeatureDataset,
    LabelDistribution,
    PdakitError,
    PdaTask,
    RandomSource,
    empirical_label_distribution,
    l1_distance,
    validate_task,
)
from .etic import (
    EticConfig,
    alignment_loss,
    etic_gradient,
    etic_per_class,
    hsic_per_class,
    sinkhorn_cost_estimate,
    sinkhorn_scaling,
    tensor_sinkhorn_reference,
)
from .labelshift import bbse_estimate, confusion_matrix, pseudo_label_marginal, target_label_distribution
from .sampling import SamplingConfig, build_sampling_domain, draw_mix_ratio
from .synthetic import ConvexStudyConfig, GaussianPdaConfig, generate_convex_study, generate_gaussian_pda
from .trainer import TrainConfig, train, train_baseline, train_is2c, warm_start
from .evaluation import (
    BoundReport,
    balanced_prediction_error,
    bound_report,
    class_conditional_a_distance,
    conditional_error_gap,
    convexity_experiment,
    estimate_lipschitz,
    model_error,
    source_norm_constant,
)

__version__ = "0.1.0"
