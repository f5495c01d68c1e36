"""Filter-error bound quantities.

Given lifts Psi_l and model mismatches E_l = Z_l - Psi_l D_true, this module
computes

* the deterministic bound 5 ||sum Psi^T E||_F^2 / lambda_min^2(sum Psi^T Psi)
  on ||D* - D_true||_F^2;
* its expected-error form 5 sigma_bar^2 rho^2 for zero-mean mismatch, with
  rho^2 = tr(sum Psi^T Psi) / lambda_min^2(sum Psi^T Psi);
* the high-probability bound driven by rho_bar = sqrt(tr(Lambda)/L) /
  lambda_min(Lambda) and chi_bar = ||E(Psi^T E)||_F / lambda_min(Lambda),
  where Lambda = E(Psi^T Psi), valid for any 0 < delta <
  lambda_min(Lambda) / (2 R gamma^2) with tail probability
  1 - 3 R exp(-L (delta^2/2) / (3 + delta/3)).

Population quantities (Lambda, E(Psi^T E)) are reported as plug-in
empirical estimates; reports carry the sample count so readers can judge
estimator noise.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from ._stack import MatrixStack
from .errors import DeltaOutOfRange, DimensionMismatch, EmptyDataset, RankDeficient
from .learn import EPS_RANK, FilterBank
from .lifting import adjoint_apply, build_lift, gram_accumulate

__all__ = [
    "MismatchSet",
    "EnsembleStats",
    "BoundReport",
    "det_error_bound",
    "rho_squared",
    "rho_sq_from_gram",
    "sigma_bar_sq",
    "expected_bound",
    "estimate_ensemble",
    "ensemble_from_lifts",
    "rho_bar_chi_bar",
    "hp_bound",
    "hp_probability",
    "mismatch_from_codes",
    "compile_report",
]


class MismatchSet(MatrixStack):
    """Per-sample mismatch matrices E_l, stacked as an (L, N, K) array."""

    def fro_norms(self):
        """||E_l||_F per sample."""
        return np.sqrt(np.einsum("lnk,lnk->l", self.stack, self.stack))


@dataclass(frozen=True)
class EnsembleStats:
    """Plug-in estimates of the population quantities behind the
    high-probability bound.

    lambda_bar estimates E(Psi^T Psi); corr estimates E(Psi^T E); gamma and
    sigma are the observed almost-sure bounds max ||x||_2 and max ||E||_F.
    L is the sample count the estimates came from.
    """

    lambda_bar: np.ndarray
    gamma: float
    sigma: float
    corr: np.ndarray
    l: int

    def __post_init__(self):
        lam = np.asarray(self.lambda_bar, dtype=np.float64)
        if lam.ndim != 2 or lam.shape[0] != lam.shape[1]:
            raise DimensionMismatch("lambda_bar must be square")
        asym = np.max(np.abs(lam - lam.T))
        scale = max(1.0, float(np.max(np.abs(lam))))
        if asym > 1e-12 * scale:
            raise ValueError(f"lambda_bar is not symmetric: asymmetry {asym:.3e}")
        eigs = np.linalg.eigvalsh(lam)
        if eigs[0] < -1e-10 * max(eigs[-1], 0.0):
            raise ValueError(f"lambda_bar has negative eigenvalue {eigs[0]:.3e}")
        if self.gamma < 0 or self.sigma < 0:
            raise ValueError("gamma and sigma must be >= 0")
        if self.l < 1:
            raise EmptyDataset("ensemble stats need L >= 1")

    @property
    def r(self):
        return self.lambda_bar.shape[0]


def _min_max_eig(sym):
    eigs = np.linalg.eigvalsh(sym)
    return float(eigs[0]), float(eigs[-1])


def _require_full_rank(lam_min, lam_max, what):
    if lam_max <= 0.0 or lam_min <= EPS_RANK * lam_max:
        raise RankDeficient(
            f"{what} fails the rank test: lambda_min={lam_min:.3e}, "
            f"lambda_max={lam_max:.3e}"
        )


def _check_pairing(lifts, mismatches):
    lifts = list(lifts)
    if len(lifts) != mismatches.l:
        raise DimensionMismatch(
            f"{len(lifts)} lifts vs {mismatches.l} mismatch samples"
        )
    for lift in lifts:
        if lift.n != mismatches.n:
            raise DimensionMismatch(
                f"lift length {lift.n} vs mismatch rows {mismatches.n}"
            )
    return lifts


def adjoint_accumulate(lifts, mismatches):
    """sum_l Psi_l^T E_l as an (R, K) matrix."""
    lifts = _check_pairing(lifts, mismatches)
    acc = np.zeros((lifts[0].r, mismatches.k))
    for lift, e in zip(lifts, mismatches.stack):
        acc += adjoint_apply(lift, e)
    return acc


def det_error_bound(lifts, mismatches):
    """Deterministic filter-error bound and its two ingredients.

    Returns (bound, numerator, lambda_min) with
    bound = 5 * numerator / lambda_min^2, numerator = ||sum Psi^T E||_F^2,
    lambda_min the smallest eigenvalue of the accumulated Gram.  Raises
    RankDeficient when the Gram fails the relative rank test.
    """
    lifts = list(lifts)
    gram = gram_accumulate(lifts)
    lam_min, lam_max = _min_max_eig(gram)
    _require_full_rank(lam_min, lam_max, "accumulated Gram")
    acc = adjoint_accumulate(lifts, mismatches)
    numerator = float(np.sum(acc * acc))
    return 5.0 * numerator / lam_min**2, numerator, lam_min


def rho_sq_from_gram(gram):
    """trace over squared smallest eigenvalue of a (valid) Gram matrix."""
    lam_min, lam_max = _min_max_eig(gram)
    _require_full_rank(lam_min, lam_max, "Gram matrix")
    return float(np.trace(gram)) / lam_min**2


def rho_squared(lifts):
    """Data-conditioning ratio of the accumulated Gram."""
    return rho_sq_from_gram(gram_accumulate(lifts))


def sigma_bar_sq(mismatches, trials=None):
    """max over samples of lambda_max(E{E_l E_l^T}).

    With a fixed MismatchSet each E_l is treated as its own degenerate
    distribution, giving max_l sigma_max^2(E_l).  With a callable sampler
    (trial index -> MismatchSet or (L, N, K) array) the expectation is a
    Monte Carlo average over ``trials`` replicates.
    """
    if callable(mismatches):
        if trials is None or trials < 1:
            raise ValueError("a mismatch sampler needs trials >= 1")
        acc = None
        for t in range(trials):
            draw = mismatches(t)
            stack = draw.stack if isinstance(draw, MatrixStack) else np.asarray(draw)
            if stack.ndim != 3:
                raise DimensionMismatch("sampler must return an (L, N, K) stack")
            second_moment = np.einsum("lnk,lmk->lnm", stack, stack)
            acc = second_moment if acc is None else acc + second_moment
        acc /= trials
        return max(float(np.linalg.eigvalsh(m)[-1]) for m in acc)
    top = 0.0
    for e in mismatches.stack:
        s = np.linalg.svd(e, compute_uv=False)
        top = max(top, float(s[0]) ** 2)
    return top


def expected_bound(sigma_bar_squared, rho_squared_value):
    """Expected-error bound 5 * sigma_bar^2 * rho^2."""
    if sigma_bar_squared < 0 or rho_squared_value < 0:
        raise ValueError("bound ingredients must be >= 0")
    return 5.0 * sigma_bar_squared * rho_squared_value


def ensemble_from_lifts(lifts, mismatches):
    """Plug-in EnsembleStats from materialized lifts and their mismatches."""
    lifts = _check_pairing(lifts, mismatches)
    if not lifts:
        raise EmptyDataset("no samples")
    L = len(lifts)
    lambda_bar = gram_accumulate(lifts) / L
    corr = adjoint_accumulate(lifts, mismatches) / L
    # every lift column is a cyclic shift of the source, so its norm is ||x||
    gamma = max(float(np.linalg.norm(lift.matrix[:, 0])) for lift in lifts)
    sigma = float(np.max(mismatches.fro_norms()))
    return EnsembleStats(lambda_bar, gamma, sigma, corr, L)


def estimate_ensemble(signals, mismatches, pattern):
    """EnsembleStats from raw signals (lifts are built internally)."""
    signals = list(signals)
    if not signals:
        raise EmptyDataset("no samples")
    lifts = [build_lift(x, pattern) for x in signals]
    return ensemble_from_lifts(lifts, mismatches)


def rho_bar_chi_bar(stats):
    """Population-style conditioning and correlation ratios.

    rho_bar = sqrt(tr(lambda_bar) / L) / lambda_min(lambda_bar);
    chi_bar = ||corr||_F / lambda_min(lambda_bar).
    """
    lam_min, lam_max = _min_max_eig(stats.lambda_bar)
    _require_full_rank(lam_min, lam_max, "lambda_bar")
    rho_bar = math.sqrt(float(np.trace(stats.lambda_bar)) / stats.l) / lam_min
    chi_bar = float(np.linalg.norm(stats.corr)) / lam_min
    return rho_bar, chi_bar


def hp_probability(r, l, delta):
    """Tail probability 1 - 3 R exp(-L (delta^2/2) / (3 + delta/3))."""
    return 1.0 - 3.0 * r * math.exp(-l * (delta**2 / 2.0) / (3.0 + delta / 3.0))


def delta_upper(stats):
    """Open-interval endpoint lambda_min(lambda_bar) / (2 R gamma^2)."""
    lam_min, lam_max = _min_max_eig(stats.lambda_bar)
    _require_full_rank(lam_min, lam_max, "lambda_bar")
    if stats.gamma <= 0:
        raise RankDeficient("gamma = 0 implies an all-zero ensemble")
    return lam_min / (2.0 * stats.r * stats.gamma**2)


def hp_bound(stats, delta, l):
    """High-probability bound for L i.i.d. samples at concentration delta.

    Returns (bound, prob, vacuous).  The bound is

        5 * [ (sigma sqrt(tr/L) + ||corr||_F + 2 sigma gamma sqrt(R) delta)
              / (lambda_min - 2 gamma^2 R delta) ]^2

    holding with the probability from :func:`hp_probability`; ``vacuous``
    flags prob <= 0 (reported as-is, never clamped).  Raises
    DeltaOutOfRange unless 0 < delta < lambda_min / (2 R gamma^2).
    """
    upper = delta_upper(stats)
    if not 0.0 < delta < upper:
        raise DeltaOutOfRange(
            f"delta={delta} outside the admissible open interval (0, {upper})"
        )
    lam_min, _ = _min_max_eig(stats.lambda_bar)
    r = stats.r
    tr = float(np.trace(stats.lambda_bar))
    numerator = (
        stats.sigma * math.sqrt(tr / l)
        + float(np.linalg.norm(stats.corr))
        + 2.0 * stats.sigma * stats.gamma * math.sqrt(r) * delta
    )
    denominator = lam_min - 2.0 * stats.gamma**2 * r * delta
    bound = 5.0 * (numerator / denominator) ** 2
    prob = hp_probability(r, l, delta)
    return bound, prob, prob <= 0.0


def mismatch_from_codes(codes, lifts, d_ref):
    """Mismatch set E_l = Z_l - Psi_l D_ref.

    d_ref may be a FilterBank or a raw R x K matrix (e.g. the zero matrix as
    a degenerate reference).
    """
    d = d_ref.matrix if isinstance(d_ref, FilterBank) else np.asarray(d_ref, dtype=np.float64)
    lifts = list(lifts)
    if len(lifts) != codes.l:
        raise DimensionMismatch(f"{len(lifts)} lifts vs {codes.l} code samples")
    if d.ndim != 2 or d.shape[1] != codes.k:
        raise DimensionMismatch(
            f"reference bank {d.shape} vs codes K={codes.k}"
        )
    out = np.empty_like(codes.stack)
    for i, (lift, z) in enumerate(zip(lifts, codes.stack)):
        if lift.r != d.shape[0] or lift.n != z.shape[0]:
            raise DimensionMismatch(
                f"lift ({lift.n},{lift.r}) vs bank {d.shape} vs codes {z.shape}"
            )
        out[i] = z - lift.matrix @ d
    return MismatchSet(out)


@dataclass
class HpEntry:
    delta: float
    bound: float
    prob: float
    vacuous: bool


@dataclass
class BoundReport:
    """Every bound quantity for one dataset, plus the diagnostics behind it.

    sigma_bar_sq is computed from the fixed mismatch set via degenerate
    per-sample distributions; when the zero-mean hypothesis of the expected
    bound is in doubt (e.g. mismatches from a real training trace), the
    note list says so.
    """

    l: int
    n: int
    r: int
    k: int
    det_bound: float
    det_numerator: float
    gram_lambda_min: float
    gram_lambda_max: float
    gram_trace: float
    rho_sq: float
    sigma_bar_sq: float
    expected_bound: float
    lambda_bar_min: float
    lambda_bar_max: float
    lambda_bar_trace: float
    gamma: float
    sigma: float
    corr_fro: float
    rho_bar: float
    chi_bar: float
    delta_max: float
    hp: list = field(default_factory=list)
    notes: list = field(default_factory=list)

    def to_dict(self):
        d = {k: v for k, v in self.__dict__.items() if k not in ("hp", "notes")}
        d["hp"] = [vars(e) for e in self.hp]
        d["notes"] = list(self.notes)
        return d

    def flat_items(self):
        """(key, value) pairs covering every numeric field, hp included."""
        items = [
            (k, v)
            for k, v in self.__dict__.items()
            if isinstance(v, (int, float)) and not isinstance(v, bool)
        ]
        for e in self.hp:
            items.append((f"hp_bound[delta={e.delta:.17g}]", e.bound))
            items.append((f"hp_prob[delta={e.delta:.17g}]", e.prob))
            items.append((f"hp_vacuous[delta={e.delta:.17g}]", int(e.vacuous)))
        return items


def compile_report(lifts, mismatches, deltas=(), notes=()):
    """Assemble the full BoundReport for one (lifts, mismatches) dataset."""
    lifts = _check_pairing(lifts, mismatches)
    gram = gram_accumulate(lifts)
    lam_min, lam_max = _min_max_eig(gram)
    _require_full_rank(lam_min, lam_max, "accumulated Gram")
    det, numerator, _ = det_error_bound(lifts, mismatches)
    rho2 = rho_sq_from_gram(gram)
    sbar2 = sigma_bar_sq(mismatches)
    stats = ensemble_from_lifts(lifts, mismatches)
    lb_min, lb_max = _min_max_eig(stats.lambda_bar)
    rho_b, chi_b = rho_bar_chi_bar(stats)
    d_max = delta_upper(stats)
    hp_entries = []
    for delta in deltas:
        b, p, vac = hp_bound(stats, delta, stats.l)
        hp_entries.append(HpEntry(float(delta), b, p, vac))
    all_notes = list(notes) + [
        "sigma_bar_sq treats each fixed E_l as a degenerate distribution; "
        "the expected bound assumes zero-mean mismatch",
        "lambda_bar, corr, gamma, sigma are plug-in estimates from L samples",
    ]
    return BoundReport(
        l=stats.l,
        n=mismatches.n,
        r=stats.r,
        k=mismatches.k,
        det_bound=det,
        det_numerator=numerator,
        gram_lambda_min=lam_min,
        gram_lambda_max=lam_max,
        gram_trace=float(np.trace(gram)),
        rho_sq=rho2,
        sigma_bar_sq=sbar2,
        expected_bound=expected_bound(sbar2, rho2),
        lambda_bar_min=lb_min,
        lambda_bar_max=lb_max,
        lambda_bar_trace=float(np.trace(stats.lambda_bar)),
        gamma=stats.gamma,
        sigma=stats.sigma,
        corr_fro=float(np.linalg.norm(stats.corr)),
        rho_bar=rho_b,
        chi_bar=chi_b,
        delta_max=d_max,
        hp=hp_entries,
        notes=all_notes,
    )
