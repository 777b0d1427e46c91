"""Stability certification for mask-based feature-attribution explanations."""

from .adapters import (
    ConjunctionModel,
    ExternalProcessAdapter,
    FunctionAdapter,
    LookupTableModel,
    MajorityModel,
    ModelAdapter,
    ProtocolError,
    adapter_from_descriptor,
)
from .core import (
    ArgmaxEqual,
    Attribution,
    InvariantViolation,
    Mask,
    PredictionRelation,
    ScalarGap,
    apply_mask,
    binarize_top_fraction,
    decision_gap,
    predicts_same,
)
from .perturb import (
    PerturbationSpace,
    RankingPerturbation,
    delta_size,
    enumerate_masks,
    perturb_ranking,
    sample_uniform,
    sample_uniform_sized,
)
from .sca import (
    CertificateReport,
    certify_hard,
    estimate_stability,
    estimate_stability_per_k,
    exact_stability,
    hard_sample_size,
    per_size_sample_size,
    soft_sample_size,
    stability_curve,
)
from .smoothing import (
    MusRadius,
    SmoothedModel,
    SmoothingConfig,
    mus_hard_radius,
    smooth_eval,
    wrap_smoothed,
)

__version__ = "0.1.0"
