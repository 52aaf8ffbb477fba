"""Spatial fluctuations of supercritical branching Ornstein-Uhlenbeck systems
with heavy-tailed ((1+beta)-stable domain) offspring laws."""

from .offspring import OffspringLaw, build_offspring_law, evaluate_pgf, sample_offspring, survival
from .ou_hermite import (
    OUParams,
    PolynomialFn,
    QuadratureError,
    expand_in_hermite,
    generator_apply,
    hermite_basis_eval,
    hermite_poly,
    ou_transition_sample,
    quadrature_expectation,
    semigroup_apply,
)
from .simulator import (
    DecompositionTable,
    MartingaleTrack,
    PopulationCapExceeded,
    SimConfig,
    SnapshotSet,
    decompose,
    functional,
    run_replicate,
    simulate,
    simulate_gw_counts,
    track_martingales,
)
from .stable_limits import (
    RegimeMismatch,
    RegimeReport,
    StableLimitParams,
    classify_regime,
    complex_power_1pbeta,
    compute_m_bar,
    compute_m_k,
    compute_m_series,
    compute_Z,
    limit_cf,
)

__version__ = "0.1.0"
