"""Convolutional analysis operator learning with filter-error bounds.

Train orthogonal convolutional filter banks by exact alternating
minimization (hard-threshold sparse coding and scaled-Procrustes filter
updates), compute deterministic / expected / high-probability bounds on the
filter estimation error, and validate those bounds with Monte Carlo
harnesses on controlled synthetic ensembles.
"""

from ._kernels import backend
from .bounds import (
    BoundReport,
    EnsembleStats,
    MismatchSet,
    compile_report,
    det_error_bound,
    estimate_ensemble,
    expected_bound,
    hp_bound,
    mismatch_from_codes,
    rho_bar_chi_bar,
    rho_sq_from_gram,
    rho_squared,
    sigma_bar_sq,
)
from .ingest import (
    DatasetManifest,
    load_pgm,
    load_raw_tensor,
    load_signal,
    patchify,
    preprocess,
    write_pgm,
    write_raw_tensor,
)
from .learn import (
    CodeSet,
    FilterBank,
    TrainConfig,
    TrainTrace,
    caol_train,
    filter_update,
    objective,
    polar_factor,
    sparse_code_update,
)
from .lifting import LiftedOperator, adjoint_apply, build_lift, convolve, gram_accumulate
from .signals import Grid, Line, OffsetPattern, Signal, cyclic_shift
from .synth import (
    SynthSpec,
    VerifyReport,
    chi_track,
    ensemble_signals,
    monte_carlo_expected,
    monte_carlo_hp,
    random_orthogonal_filters,
    rho_scan,
    synth_instance,
    verify_det_bound,
)

__version__ = "0.1.0"

__all__ = [
    "__version__",
    "backend",
    # signals and lifting
    "Line",
    "Grid",
    "Signal",
    "OffsetPattern",
    "cyclic_shift",
    "LiftedOperator",
    "build_lift",
    "convolve",
    "gram_accumulate",
    "adjoint_apply",
    # learning
    "FilterBank",
    "CodeSet",
    "TrainConfig",
    "TrainTrace",
    "objective",
    "sparse_code_update",
    "polar_factor",
    "filter_update",
    "caol_train",
    # bounds
    "MismatchSet",
    "EnsembleStats",
    "BoundReport",
    "det_error_bound",
    "rho_squared",
    "rho_sq_from_gram",
    "sigma_bar_sq",
    "expected_bound",
    "estimate_ensemble",
    "rho_bar_chi_bar",
    "hp_bound",
    "mismatch_from_codes",
    "compile_report",
    # synthetic harnesses
    "SynthSpec",
    "VerifyReport",
    "random_orthogonal_filters",
    "ensemble_signals",
    "synth_instance",
    "verify_det_bound",
    "monte_carlo_expected",
    "monte_carlo_hp",
    "rho_scan",
    "chi_track",
    # ingestion
    "load_pgm",
    "write_pgm",
    "load_raw_tensor",
    "write_raw_tensor",
    "load_signal",
    "preprocess",
    "patchify",
    "DatasetManifest",
]
