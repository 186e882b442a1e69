"""Co-occurrence histograms under pure local differential privacy.

Analytic mean/covariance of perturbed multi-dimensional co-occurrence
counts, their closed-form inversion back to true-count estimates with error
bars, and the simulators and enumeration oracles used to validate both.
"""

from .errors import (
    CapacityError,
    DegenerateProtocolError,
    DependentColumnsError,
    IncompleteHistogramError,
    InconsistentHistogramError,
    InputError,
    LdpHistError,
    SingularUpdateError,
)
from .pmdh import (
    ForwardOperator,
    Histogram,
    NormalParams,
    apply_linear_constraint,
    build_forward_operator,
    count_pmdh,
    cov_c,
    expected_c,
    pmdh_normal_params,
)
from .protocols import (
    DatasetSchema,
    Encoding,
    EvidenceMatrix,
    FeatureSpec,
    ProtocolParams,
    cross_support_probability,
    encode_dataset,
    encode_row,
    epsilon_of,
    perturb_row,
    randomize_dataset,
    rr_compose,
)
from .setops import (
    EMPTY,
    ColumnSet,
    GradedIndex,
    build_K,
    incidence,
    kappa,
    stirling2,
    subsets_of,
    varkappa,
)
from .sim import (
    ConditionalMoments,
    RowTypeHistogram,
    TruthSpec,
    conditional_checks,
    cooccurrences_from_rowtypes,
    exact_moments_oracle,
    full_simulation,
    rowtype_probability,
    rowtypes_from_cooccurrences,
    sample_pmdh_multinomial,
    sample_pmdh_vectors,
)
from .tmdh import (
    EstimateDiagnostics,
    LinearConstraint,
    TmdhEstimate,
    build_inverse_operator,
    constrained_estimate,
    cov_t,
    estimate_t,
    tmdh_estimate,
)

__version__ = "0.1.0"

__all__ = [
    "CapacityError",
    "ColumnSet",
    "ConditionalMoments",
    "DatasetSchema",
    "DegenerateProtocolError",
    "DependentColumnsError",
    "EMPTY",
    "Encoding",
    "EstimateDiagnostics",
    "EvidenceMatrix",
    "FeatureSpec",
    "ForwardOperator",
    "GradedIndex",
    "Histogram",
    "IncompleteHistogramError",
    "InconsistentHistogramError",
    "InputError",
    "LdpHistError",
    "LinearConstraint",
    "NormalParams",
    "ProtocolParams",
    "RowTypeHistogram",
    "SingularUpdateError",
    "TmdhEstimate",
    "TruthSpec",
    "apply_linear_constraint",
    "build_K",
    "build_forward_operator",
    "build_inverse_operator",
    "conditional_checks",
    "constrained_estimate",
    "cooccurrences_from_rowtypes",
    "count_pmdh",
    "cov_c",
    "cov_t",
    "cross_support_probability",
    "encode_dataset",
    "encode_row",
    "epsilon_of",
    "estimate_t",
    "exact_moments_oracle",
    "expected_c",
    "full_simulation",
    "incidence",
    "kappa",
    "perturb_row",
    "pmdh_normal_params",
    "randomize_dataset",
    "rowtype_probability",
    "rowtypes_from_cooccurrences",
    "rr_compose",
    "sample_pmdh_multinomial",
    "sample_pmdh_vectors",
    "stirling2",
    "subsets_of",
    "tmdh_estimate",
    "varkappa",
]
