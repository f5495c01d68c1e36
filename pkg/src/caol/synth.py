"""Synthetic instances and Monte Carlo validation of the error bounds.

Instances follow the mismatch model Z_l = Psi_l D_true + E_l: signals come
from a chosen ensemble, D_true is a random feasible bank, and E_l comes from
a chosen mismatch model.  The harnesses then check, trial by trial, that the
exact filter update lands within the deterministic, expected, and
high-probability bounds computed by :mod:`caol.bounds`.

Every random draw is tied to (seed, purpose tag, trial, attempt), so trials
are independent, reorderable, and reproducible.
"""

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .bounds import (
    EnsembleStats,
    MismatchSet,
    det_error_bound,
    expected_bound,
    hp_bound,
    rho_sq_from_gram,
)
from .errors import (
    ConfigError,
    DimensionMismatch,
    EmptyDataset,
    MissingSnapshots,
    RankDeficient,
    RankHypothesisUnsatisfiable,
    VacuousProbability,
)
from .learn import EPS_RANK, CodeSet, FilterBank, filter_update, initial_bank, polar_factor
from .lifting import build_lift
from .signals import Line, OffsetPattern, Signal

__all__ = [
    "SIGNAL_MODELS",
    "MISMATCH_MODELS",
    "HOLD_SLACK",
    "SynthSpec",
    "SynthInstance",
    "VerifyReport",
    "random_orthogonal_filters",
    "ensemble_signals",
    "synth_instance",
    "verify_det_bound",
    "monte_carlo_expected",
    "monte_carlo_hp",
    "rho_scan",
    "chi_track",
]

SIGNAL_MODELS = ("gaussian", "impulse-ensemble", "loaded-dataset")
MISMATCH_MODELS = ("zero", "iid-gaussian", "bounded-ball", "correlated")

# slack for per-trial inequality checks: error <= bound + HOLD_SLACK
HOLD_SLACK = 1e-9

_MAX_ATTEMPTS = 100

# rng purpose tags; every substream is seeded with [seed, tag, ...indices]
_T_FILTERS, _T_SIGNALS, _T_MISMATCH, _T_CORR_P, _T_SUBSET, _T_HOLDOUT = range(1, 7)


def _rng(seed, *path):
    return np.random.default_rng([int(seed)] + [int(p) for p in path])


@dataclass(frozen=True)
class SynthSpec:
    """Dimensions, ensembles, and replication plan for one experiment.

    mismatch_scale is the model parameter: the entry standard deviation for
    iid-gaussian, the radius for bounded-ball, and the correlation strength
    for correlated.  ``dataset`` (a sequence of Signals) and ``pattern`` are
    only consulted by the loaded-dataset signal model.
    """

    n: int
    r: int
    k: int
    l: int
    signal_model: str = "gaussian"
    mismatch_model: str = "iid-gaussian"
    mismatch_scale: float = 0.1
    seed: int = 0
    trials: int = 1
    dataset: tuple = None
    pattern: OffsetPattern = None

    def __post_init__(self):
        if self.signal_model not in SIGNAL_MODELS:
            raise ConfigError(f"unknown signal model {self.signal_model!r}")
        if self.mismatch_model not in MISMATCH_MODELS:
            raise ConfigError(f"unknown mismatch model {self.mismatch_model!r}")
        if not (1 <= self.r <= self.k):
            raise ConfigError(f"need 1 <= R <= K, got R={self.r}, K={self.k}")
        if self.n < self.r:
            raise ConfigError(f"need N >= R, got N={self.n}, R={self.r}")
        if self.l < 1 or self.trials < 1:
            raise ConfigError("L and trials must be >= 1")
        if self.mismatch_scale < 0:
            raise ConfigError("mismatch_scale must be >= 0")
        if self.seed < 0:
            raise ConfigError("seed must be >= 0")
        if self.signal_model == "loaded-dataset":
            if not self.dataset:
                raise ConfigError("loaded-dataset needs a nonempty dataset")
            object.__setattr__(self, "dataset", tuple(self.dataset))
            for x in self.dataset:
                if x.n != self.n:
                    raise ConfigError(
                        f"dataset signal size {x.n} does not match N={self.n}"
                    )
        elif self.dataset is not None:
            raise ConfigError("dataset is only valid with loaded-dataset signals")

    def offsets(self):
        """The lift pattern: explicit if given, else line shifts 0..R-1."""
        if self.pattern is not None:
            if self.pattern.r != self.r:
                raise ConfigError(
                    f"pattern size {self.pattern.r} does not match R={self.r}"
                )
            return self.pattern
        return OffsetPattern.line(self.r)


def random_orthogonal_filters(r, k, seed):
    """Random feasible bank: scaled polar factor of a seeded K x R Gaussian.

    Deterministic per seed; K >= R required.
    """
    if k < r:
        raise DimensionMismatch(f"need K >= R, got K={k}, R={r}")
    return initial_bank(r, k, seed)


def _draw_positions(spec, rng):
    return rng.integers(0, spec.n, size=spec.l)

def _signals_from_positions(positions, n):
    out = []
    for j in positions:
        v = np.zeros(n)
        v[int(j)] = 1.0
        out.append(Signal.line(v))
    return out


def ensemble_signals(spec, trial=0):
    """One trial's worth of signals from the spec's signal model."""
    return _draw_signals(spec, _rng(spec.seed, _T_SIGNALS, trial, 0))


def _draw_signals(spec, rng):
    if spec.signal_model == "gaussian":
        return [Signal.line(rng.standard_normal(spec.n)) for _ in range(spec.l)]
    if spec.signal_model == "impulse-ensemble":
        return _signals_from_positions(_draw_positions(spec, rng), spec.n)
    available = len(spec.dataset)
    if spec.l > available:
        raise EmptyDataset(f"need L={spec.l} samples, dataset has {available}")
    if spec.l == available:
        return list(spec.dataset)
    idx = rng.choice(available, size=spec.l, replace=False)
    return [spec.dataset[i] for i in idx]


def _ball_stack(rng, l, n, k, radius):
    """Draws with ||E_l||_F = radius * u^(1/(N K)), u uniform: a.s. bounded
    by ``radius``, zero mean by sign symmetry."""
    g = rng.standard_normal((l, n, k))
    norms = np.sqrt(np.einsum("lnk,lnk->l", g, g))
    norms[norms == 0.0] = 1.0
    radii = radius * rng.uniform(size=l) ** (1.0 / (n * k))
    return g * (radii / norms)[:, None, None]


def _corr_p(spec):
    """The fixed unit-norm R x K matrix of the correlated mismatch model."""
    g = _rng(spec.seed, _T_CORR_P).standard_normal((spec.r, spec.k))
    return g / np.linalg.norm(g)


def _draw_mismatch(spec, rng, psi_stack=None, positions=None):
    """(L, N, K) mismatch stack for one trial.

    The correlated model is E_l = c Psi_l P + ball(c/2) noise, so it stays
    almost surely bounded while forcing E(Psi^T E) away from zero; it needs
    either the lift stack or, for impulse signals, the impulse positions.
    """
    l, n, k = spec.l, spec.n, spec.k
    model, s = spec.mismatch_model, spec.mismatch_scale
    if model == "zero":
        return np.zeros((l, n, k))
    if model == "iid-gaussian":
        return s * rng.standard_normal((l, n, k))
    if model == "bounded-ball":
        return _ball_stack(rng, l, n, k, s)
    p = _corr_p(spec)
    e = _ball_stack(rng, l, n, k, 0.5 * s)
    if psi_stack is not None:
        e += s * np.einsum("lnr,rk->lnk", psi_stack, p)
    elif positions is not None:
        # impulse lifts: column r of Psi_l is the impulse at (j_l - r) mod N,
        # so Psi_l P scatters row r of P into that row
        rows = (positions[:, None] - np.arange(spec.r)[None, :]) % n
        e[np.arange(l)[:, None], rows, :] += s * p[None, :, :]
    else:
        raise ValueError("correlated mismatch needs psi_stack or positions")
    return e


def _full_row_rank(m):
    s = np.linalg.svd(m, compute_uv=False)
    return s[0] > 0.0 and s[-1] > EPS_RANK * s[0]


def _full_rank_sym(gram):
    eigs = np.linalg.eigvalsh(gram)
    return eigs[-1] > 0.0 and eigs[0] > EPS_RANK * eigs[-1]


def _sq_error(d_star, d_true):
    return _kernels.residual_sqnorm(d_star.matrix, d_true.matrix)


@dataclass
class SynthInstance:
    """One generated instance; codes satisfy Z_l = Psi_l D_true + E_l."""

    signals: list
    lifts: list
    d_true: FilterBank
    codes: CodeSet
    mismatches: MismatchSet
    rejections: int


def synth_instance(spec, trial=0):
    """Generate one instance, rejection-sampling until the rank hypotheses
    of the deterministic bound hold.

    Both sum Psi^T Z and sum Psi^T Psi D_true must have full row rank R;
    signals and mismatches are redrawn together up to 100 times, and the
    rejection count is recorded on the instance.
    """
    d_true = random_orthogonal_filters(
        spec.r, spec.k, [spec.seed, _T_FILTERS, int(trial)]
    )
    pattern = spec.offsets()
    for attempt in range(_MAX_ATTEMPTS):
        signals = _draw_signals(spec, _rng(spec.seed, _T_SIGNALS, trial, attempt))
        lifts = [build_lift(x, pattern) for x in signals]
        psi = np.stack([lift.matrix for lift in lifts])
        e = _draw_mismatch(
            spec, _rng(spec.seed, _T_MISMATCH, trial, attempt), psi_stack=psi
        )
        z = np.einsum("lnr,rk->lnk", psi, d_true.matrix) + e
        gram = np.einsum("lnr,lnm->rm", psi, psi)
        if _full_row_rank(np.einsum("lnk,lnr->rk", z, psi)) and _full_row_rank(
            gram @ d_true.matrix
        ):
            return SynthInstance(
                signals, lifts, d_true, CodeSet(z), MismatchSet(e), attempt
            )
    raise RankHypothesisUnsatisfiable(
        f"rank hypotheses still failing after {_MAX_ATTEMPTS} attempts "
        f"(trial {trial}); the signal ensemble is pathological"
    )


@dataclass
class VerifyReport:
    """Per-trial errors against a bound, plus the aggregate verdicts.

    ``kind`` is one of deterministic / expected / high-probability.  For the
    deterministic kind the bound varies per trial; for the other two it is
    the single ensemble-level bound broadcast across trials.
    """

    kind: str
    errors: np.ndarray
    bounds: np.ndarray
    rejections: int = 0
    delta: float = None
    probability: float = None
    vacuous: bool = False
    details: dict = field(default_factory=dict)
    notes: list = field(default_factory=list)

    @property
    def trials(self):
        return len(self.errors)

    @property
    def holds(self):
        return self.errors <= self.bounds + HOLD_SLACK

    @property
    def max_violation(self):
        return float(np.max(self.errors - self.bounds))

    @property
    def mean_error(self):
        return float(np.mean(self.errors))

    @property
    def stderr(self):
        """Standard error of the mean trial error."""
        if self.trials < 2:
            return 0.0
        return float(np.std(self.errors, ddof=1) / math.sqrt(self.trials))

    @property
    def coverage(self):
        return float(np.mean(self.holds))

    def ratios(self):
        """Per-trial tightness error/bound; 0/0 counts as 0."""
        out = np.zeros_like(self.errors)
        np.divide(self.errors, self.bounds, out=out, where=self.bounds > 0)
        out[(self.bounds == 0) & (self.errors > 0)] = np.inf
        return out

    def ok(self):
        """Did this run validate its bound?

        deterministic: every trial within bound; expected: mean error within
        the bound plus two standard errors; high-probability: coverage at
        least the tail probability (trivially true when vacuous).
        """
        if self.kind == "deterministic":
            return bool(np.all(self.holds))
        if self.kind == "expected":
            return self.mean_error <= self.bounds[0] + 2.0 * self.stderr + HOLD_SLACK
        if self.vacuous:
            return True
        return self.coverage >= self.probability

    def rows(self):
        """Per-trial (trial, error, bound, holds) rows for table output."""
        holds = self.holds
        return [
            (t, float(self.errors[t]), float(self.bounds[t]), int(holds[t]))
            for t in range(self.trials)
        ]

    def summary(self):
        out = {
            "kind": self.kind,
            "trials": self.trials,
            "mean_error": self.mean_error,
            "stderr": self.stderr,
            "max_violation": self.max_violation,
            "coverage": self.coverage,
            "bound": float(self.bounds[0]) if self.trials else float("nan"),
            "rejections": self.rejections,
            "ok": self.ok(),
        }
        if self.delta is not None:
            out["delta"] = self.delta
        if self.probability is not None:
            out["probability"] = self.probability
            out["vacuous"] = self.vacuous
        out.update(self.details)
        if self.notes:
            out["notes"] = list(self.notes)
        return out


def verify_det_bound(spec):
    """Check the deterministic bound trial by trial on fresh instances.

    Each trial generates a full instance, runs the exact filter update on
    its (lifts, codes), and compares the squared filter error against the
    deterministic bound from the instance's own mismatches.
    """
    errors = np.empty(spec.trials)
    bnds = np.empty(spec.trials)
    rejections = 0
    for t in range(spec.trials):
        try:
            inst = synth_instance(spec, trial=t)
            d_star = filter_update(inst.lifts, inst.codes)
            bound, _, _ = det_error_bound(inst.lifts, inst.mismatches)
        except (RankDeficient, RankHypothesisUnsatisfiable) as exc:
            raise type(exc)(f"trial {t}: {exc}") from exc
        rejections += inst.rejections
        errors[t] = _sq_error(d_star, inst.d_true)
        bnds[t] = bound
    report = VerifyReport("deterministic", errors, bnds, rejections=rejections)
    ratios = report.ratios()
    report.details["mean_tightness"] = float(np.mean(ratios))
    report.details["max_tightness"] = float(np.max(ratios))
    return report


def _sigma_bar_sq_analytic(spec):
    """Exact sigma-bar^2 for the zero-mean mismatch models.

    iid entries of variance s^2 give E(E E^T) = K s^2 I; the bounded-ball
    draw is isotropic with E||E||_F^2 = s^2 N K/(N K + 2), so its second
    moment is that over N times the identity.
    """
    s = spec.mismatch_scale
    if spec.mismatch_model == "zero":
        return 0.0
    if spec.mismatch_model == "iid-gaussian":
        return spec.k * s * s
    nk = spec.n * spec.k
    return s * s * spec.k / (nk + 2.0)


def monte_carlo_expected(spec):
    """Validate the expected-error bound: fixed signals, mismatch redrawn
    per trial, mean squared error against 5 sigma_bar^2 rho^2.

    The mismatch model must be zero-mean (zero, iid-gaussian, or
    bounded-ball); sigma_bar^2 is exact for these, not estimated.
    """
    if spec.mismatch_model == "correlated":
        raise ConfigError(
            "the expected-error bound assumes zero-mean mismatch; "
            "the correlated model is not (conditioned on the signals)"
        )
    d_true = random_orthogonal_filters(spec.r, spec.k, [spec.seed, _T_FILTERS, 0])
    for attempt in range(_MAX_ATTEMPTS):
        signals = _draw_signals(spec, _rng(spec.seed, _T_SIGNALS, 0, attempt))
        psi = np.stack([build_lift(x, spec.offsets()).matrix for x in signals])
        gram = np.einsum("lnr,lnm->rm", psi, psi)
        if _full_rank_sym(gram):
            rejections = attempt
            break
    else:
        raise RankHypothesisUnsatisfiable(
            f"no full-rank signal draw in {_MAX_ATTEMPTS} attempts"
        )
    rho2 = rho_sq_from_gram(gram)
    sbar2 = _sigma_bar_sq_analytic(spec)
    bound = expected_bound(sbar2, rho2)
    z0 = np.einsum("lnr,rk->lnk", psi, d_true.matrix)
    errors = np.empty(spec.trials)
    for t in range(spec.trials):
        e = _draw_mismatch(spec, _rng(spec.seed, _T_MISMATCH, t), psi_stack=psi)
        a = np.einsum("lnk,lnr->kr", z0 + e, psi)
        try:
            d_star = FilterBank(polar_factor(a).T / math.sqrt(spec.r))
        except RankDeficient as exc:
            raise RankDeficient(f"trial {t}: {exc}") from exc
        errors[t] = _sq_error(d_star, d_true)
    report = VerifyReport(
        "expected",
        errors,
        np.full(spec.trials, bound),
        rejections=rejections,
        details={"sigma_bar_sq": sbar2, "rho_sq": rho2},
    )
    return report


def _analytic_hp_stats(spec):
    """Population EnsembleStats when they are closed-form, else None.

    Impulse signals give E(Psi^T Psi) = I_R and ||x|| = 1 exactly; the
    mismatch side is closed-form for the bounded models (sigma is the ball
    radius; the correlated model adds c P to every Psi^T E, so the
    correlation term is c P with norm c and sigma is c ||Psi P||_F + c/2 =
    3c/2).
    """
    if spec.signal_model != "impulse-ensemble":
        return None
    lam = np.eye(spec.r)
    s = spec.mismatch_scale
    if spec.mismatch_model == "zero":
        return EnsembleStats(lam, 1.0, 0.0, np.zeros((spec.r, spec.k)), spec.l)
    if spec.mismatch_model == "bounded-ball":
        return EnsembleStats(lam, 1.0, s, np.zeros((spec.r, spec.k)), spec.l)
    if spec.mismatch_model == "correlated":
        return EnsembleStats(lam, 1.0, 1.5 * s, s * _corr_p(spec), spec.l)
    return None  # iid-gaussian has no almost-sure bound on ||E||_F


def _estimated_hp_stats(spec, holdout):
    """Plug-in EnsembleStats from held-out draws of (x, E) pairs.

    Used when no closed form exists.  gamma and sigma are sample maxima of
    almost-surely-unbounded quantities for gaussian ensembles, so the
    resulting bound is approximate; reports carry a note saying so.
    """
    pattern = spec.offsets()
    batch = 1000
    lam = np.zeros((spec.r, spec.r))
    corr = np.zeros((spec.r, spec.k))
    gamma = 0.0
    sigma = 0.0
    done = 0
    hold_spec = _replace_l(spec, min(batch, holdout))
    b = 0
    while done < holdout:
        take = min(batch, holdout - done)
        if take != hold_spec.l:
            hold_spec = _replace_l(spec, take)
        sig_rng = _rng(spec.seed, _T_HOLDOUT, 0, b)
        mis_rng = _rng(spec.seed, _T_HOLDOUT, 1, b)
        signals = _draw_signals(hold_spec, sig_rng)
        psi = np.stack([build_lift(x, pattern).matrix for x in signals])
        e = _draw_mismatch(hold_spec, mis_rng, psi_stack=psi)
        lam += np.einsum("lnr,lnm->rm", psi, psi)
        corr += np.einsum("lnr,lnk->rk", psi, e)
        gamma = max(gamma, math.sqrt(float(np.max(np.einsum("lnr,lnr->l", psi, psi)) / spec.r)))
        sigma = max(sigma, float(np.max(np.sqrt(np.einsum("lnk,lnk->l", e, e)))))
        done += take
        b += 1
    lam /= holdout
    corr /= holdout
    return EnsembleStats((lam + lam.T) / 2.0, gamma, sigma, corr, spec.l)


def _replace_l(spec, l):
    return SynthSpec(
        spec.n, spec.r, spec.k, l, spec.signal_model, spec.mismatch_model,
        spec.mismatch_scale, spec.seed, 1, spec.dataset, spec.pattern,
    )


def monte_carlo_hp(spec, delta, holdout=100_000):
    """Validate the high-probability bound: fresh (signal, mismatch) pairs
    every trial, empirical coverage against the tail probability.

    Population quantities are exact for impulse-ensemble signals with
    bounded mismatch models and otherwise estimated from ``holdout``
    held-out draws.  A nonpositive tail probability raises the
    VacuousProbability warning and skips the coverage verdict.
    """
    stats = _analytic_hp_stats(spec)
    analytic = stats is not None
    if not analytic:
        stats = _estimated_hp_stats(spec, holdout)
    bound, prob, vacuous = hp_bound(stats, delta, spec.l)
    if vacuous:
        warnings.warn(
            VacuousProbability(
                f"tail probability {prob:.3e} <= 0 at delta={delta}, "
                f"L={spec.l}; coverage carries no information"
            )
        )
    d_true = random_orthogonal_filters(spec.r, spec.k, [spec.seed, _T_FILTERS, 0])
    impulse = spec.signal_model == "impulse-ensemble"
    pattern = spec.offsets()
    errors = np.empty(spec.trials)
    notes = []
    for t in range(spec.trials):
        sig_rng = _rng(spec.seed, _T_SIGNALS, t)
        mis_rng = _rng(spec.seed, _T_MISMATCH, t)
        try:
            if impulse:
                pos = _draw_positions(spec, sig_rng)
                e = _draw_mismatch(spec, mis_rng, positions=pos)
                acc = _kernels.impulse_adjoint_accumulate(e, pos, spec.r)
                # impulse lifts have orthonormal columns, so the accumulated
                # Gram is exactly L I and A = L D_true^T + (sum Psi^T E)^T
                a = spec.l * d_true.matrix.T + acc.T
            else:
                signals = _draw_signals(spec, sig_rng)
                psi = np.stack([build_lift(x, pattern).matrix for x in signals])
                e = _draw_mismatch(spec, mis_rng, psi_stack=psi)
                z = np.einsum("lnr,rk->lnk", psi, d_true.matrix) + e
                a = np.einsum("lnk,lnr->kr", z, psi)
            d_star = FilterBank(polar_factor(a).T / math.sqrt(spec.r))
        except RankDeficient:
            errors[t] = np.inf
            notes.append(f"trial {t}: rank-deficient update counted as uncovered")
            continue
        errors[t] = _sq_error(d_star, d_true)
    if not analytic:
        notes.append(
            f"population quantities estimated from {holdout} held-out draws; "
            "gamma/sigma are sample maxima"
        )
    report = VerifyReport(
        "high-probability",
        errors,
        np.full(spec.trials, bound),
        delta=float(delta),
        probability=prob,
        vacuous=vacuous,
        details={
            "sigma": stats.sigma,
            "gamma": stats.gamma,
            "lambda_bar_min": float(np.linalg.eigvalsh(stats.lambda_bar)[0]),
            "corr_fro": float(np.linalg.norm(stats.corr)),
        },
        notes=notes,
    )
    return report


def rho_scan(signals, pattern, l_grid, subset_replicates=50, seed=0):
    """Mean and spread of rho^2 over random size-L subsets of a dataset.

    Returns a row (L, mean, std) per grid entry.  Subsets are drawn without
    replacement, ``subset_replicates`` times per L; when L equals the full
    dataset size there is exactly one subset, so the std is 0.
    """
    signals = list(signals)
    if not signals:
        raise EmptyDataset("no samples")
    if subset_replicates < 1:
        raise ValueError("subset_replicates must be >= 1")
    available = len(signals)
    psi = np.stack([build_lift(x, pattern).matrix for x in signals])
    grams = np.einsum("lnr,lnm->lrm", psi, psi)
    rng = _rng(seed, _T_SUBSET)
    rows = []
    for l in l_grid:
        l = int(l)
        if not 1 <= l <= available:
            raise EmptyDataset(
                f"subset size {l} outside [1, {available}] available samples"
            )
        if l == available:
            vals = np.array([rho_sq_from_gram(grams.sum(axis=0))])
        else:
            vals = np.empty(subset_replicates)
            for i in range(subset_replicates):
                idx = rng.choice(available, size=l, replace=False)
                vals[i] = rho_sq_from_gram(grams[idx].sum(axis=0))
        std = float(np.std(vals, ddof=1)) if len(vals) > 1 else 0.0
        rows.append((l, float(np.mean(vals)), std))
    return rows


def chi_track(trace, lifts, d_ref, stride=50):
    """Normalized mismatch correlation at every recorded stride multiple.

    For each snapshot bank the codes are recomputed exactly (they are the
    hard-threshold output for that bank, so filter snapshots suffice), the
    mismatch E = Z - Psi d_ref is formed against the reference bank, and
    chi-bar = ||mean Psi^T E||_F / lambda_min(mean Psi^T Psi) is reported as
    an (iteration, value) row.
    """
    if stride < 1:
        raise ValueError("stride must be >= 1")
    lifts = list(lifts)
    if not lifts:
        raise EmptyDataset("no samples")
    picked = [
        (i, bank)
        for i, bank in zip(trace.iterations, trace.filters)
        if i % stride == 0
    ]
    if not picked:
        raise MissingSnapshots(
            f"no recorded iterations are multiples of stride {stride} "
            f"(recorded: {trace.iterations})"
        )
    psi = np.stack([lift.matrix for lift in lifts])
    l = len(lifts)
    lam_bar = np.einsum("lnr,lnm->rm", psi, psi) / l
    eigs = np.linalg.eigvalsh(lam_bar)
    if eigs[-1] <= 0.0 or eigs[0] <= EPS_RANK * eigs[-1]:
        raise RankDeficient(
            f"mean Gram fails the rank test: lambda_min={eigs[0]:.3e}"
        )
    d = d_ref.matrix if isinstance(d_ref, FilterBank) else np.asarray(d_ref)
    ref_codes = np.einsum("lnr,rk->lnk", psi, d)
    rows = []
    for i, bank in picked:
        z, _ = _kernels.hard_threshold(
            np.einsum("lnr,rk->lnk", psi, bank.matrix), trace.alpha
        )
        corr = np.einsum("lnr,lnk->rk", psi, z - ref_codes) / l
        rows.append((i, float(np.linalg.norm(corr) / eigs[0])))
    return rows
