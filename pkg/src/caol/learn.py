"""Convolutional analysis operator learning with orthogonal filters.

Learns a bank of K >= R filters that sparsify training signals, alternating
two exact subproblem solutions:

* sparse-code update: elementwise hard thresholding of the filter responses
  (the exact l0-prox minimizer, keep v iff v^2 > alpha);
* filter update: a scaled orthogonal Procrustes problem over banks with
  D D^T = (1/R) I, solved by the polar factor of the accumulated
  code/lift product.
"""

import numpy as np

from . import _kernels
from ._stack import MatrixStack
from .errors import DimensionMismatch, EmptyDataset, RankDeficient
from .lifting import build_lift

EPS_RANK = 1e-10          # relative singular/eigen threshold for rank tests
ORTHO_TOL = 1e-10         # per-entry tolerance on D D^T = (1/R) I


class FilterBank:
    """R x K filter matrix D = [d_1 ... d_K] with D D^T = (1/R) I.

    K >= R always; when R == K the columns are mutually orthogonal too
    (D^T D = (1/K) I), so each pair of filters is incoherent.
    """

    __slots__ = ("matrix",)

    def __init__(self, matrix):
        matrix = np.ascontiguousarray(matrix, dtype=np.float64)
        if matrix.ndim != 2:
            raise DimensionMismatch("filter bank must be a 2-D matrix")
        r, k = matrix.shape
        if k < r:
            raise DimensionMismatch(f"need K >= R filters, got R={r}, K={k}")
        gram = matrix @ matrix.T
        dev = np.max(np.abs(gram - np.eye(r) / r))
        if dev > ORTHO_TOL:
            raise ValueError(
                f"filter rows are not tight-frame orthogonal: max deviation {dev:.3e}"
            )
        if r == k:
            dev = np.max(np.abs(matrix.T @ matrix - np.eye(k) / k))
            if dev > ORTHO_TOL:
                raise ValueError(
                    f"square bank is not column-orthogonal: max deviation {dev:.3e}"
                )
        matrix.setflags(write=False)
        object.__setattr__(self, "matrix", matrix)

    def __setattr__(self, name, value):
        raise AttributeError("FilterBank is immutable")

    @property
    def r(self):
        return self.matrix.shape[0]

    @property
    def k(self):
        return self.matrix.shape[1]

    def filter(self, k):
        """Single filter d_k as a length-R vector."""
        return self.matrix[:, k]

    def __repr__(self):
        return f"FilterBank(R={self.r}, K={self.k})"


class CodeSet(MatrixStack):
    """Per-sample sparse code matrices Z_l, stacked as an (L, N, K) array."""

    def nonzero_count(self):
        return int(np.count_nonzero(self.stack))

    def sparsity(self):
        """Fraction of nonzero code entries."""
        return self.nonzero_count() / self.stack.size


class TrainConfig:
    """Knobs for the alternating trainer."""

    def __init__(self, alpha, max_iters=1000, rel_tol=1e-8, seed=0, record_every=1):
        if alpha <= 0:
            raise ValueError(f"alpha must be > 0, got {alpha}")
        if max_iters < 1:
            raise ValueError(f"max_iters must be >= 1, got {max_iters}")
        if rel_tol < 0:
            raise ValueError(f"rel_tol must be >= 0, got {rel_tol}")
        if record_every < 1:
            raise ValueError(f"record_every must be >= 1, got {record_every}")
        self.alpha = float(alpha)
        self.max_iters = int(max_iters)
        self.rel_tol = float(rel_tol)
        self.seed = seed
        self.record_every = int(record_every)


class TrainTrace:
    """Recorded diagnostics: objective, sparsity, and filter snapshots.

    Objectives are nonincreasing across records because both subproblems are
    solved exactly.  Snapshots allow post-hoc recomputation of the codes at
    any recorded iteration (codes are a deterministic function of the
    filters and the data).
    """

    def __init__(self, alpha):
        self.alpha = alpha
        self.iterations = []
        self.objectives = []
        self.sparsities = []
        self.filters = []
        self.chi = None

    def record(self, iteration, objective_value, sparsity, bank):
        self.iterations.append(int(iteration))
        self.objectives.append(float(objective_value))
        self.sparsities.append(float(sparsity))
        self.filters.append(bank)

    def __len__(self):
        return len(self.iterations)


def objective(bank, lifts, codes, alpha):
    """CAOL objective: sum_l sum_k ||Psi_l d_k - z_{l,k}||^2 + alpha * nnz.

    The l0 term counts exactly-zero entries; lifts and codes are paired by
    index.
    """
    lifts = list(lifts)
    if len(lifts) != codes.l:
        raise DimensionMismatch(
            f"{len(lifts)} lifts vs {codes.l} code samples"
        )
    if alpha < 0:
        raise ValueError("alpha must be >= 0")
    total = 0.0
    for lift, z in zip(lifts, codes.stack):
        if lift.r != bank.r or lift.n != z.shape[0] or bank.k != z.shape[1]:
            raise DimensionMismatch(
                f"inconsistent dimensions: lift ({lift.n},{lift.r}), "
                f"bank ({bank.r},{bank.k}), codes {z.shape}"
            )
        total += _kernels.residual_sqnorm(lift.matrix @ bank.matrix, z)
    return total + alpha * codes.nonzero_count()


def sparse_code_update(bank, x, pattern, alpha):
    """Exact sparse-code minimizer for one signal: hard threshold of Psi D.

    Entry (i, k) keeps v = (Psi d_k)_i iff v^2 > alpha; the tie v^2 == alpha
    breaks toward zero.  Returns the N x K code matrix.
    """
    if alpha <= 0:
        raise ValueError(f"alpha must be > 0, got {alpha}")
    lift = build_lift(x, pattern)
    if lift.r != bank.r:
        raise DimensionMismatch(
            f"pattern size {lift.r} does not match bank R={bank.r}"
        )
    out, _ = _kernels.hard_threshold(lift.matrix @ bank.matrix, alpha)
    return out


def polar_factor(a):
    """Polar factor Q of a K x R matrix with K >= R and full column rank.

    Q = W V^T from the thin SVD A = W S V^T; Q^T Q = I and A = Q H with
    H = Q^T A symmetric positive definite.  Raises RankDeficient when
    sigma_R <= EPS_RANK * sigma_1 (the polar factor is then not unique).
    """
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] < a.shape[1]:
        raise DimensionMismatch(
            f"polar factor needs a tall K x R matrix, got {a.shape}"
        )
    w, s, vt = np.linalg.svd(a, full_matrices=False)
    if s[0] <= 0.0 or s[-1] <= EPS_RANK * s[0]:
        raise RankDeficient(
            f"matrix is (numerically) column rank deficient: "
            f"sigma_min/sigma_max = {0.0 if s[0] == 0 else s[-1] / s[0]:.3e}"
        )
    return w @ vt


def filter_update(lifts, codes):
    """Exact filter update: the scaled-Procrustes global minimizer.

    Minimizes sum_l ||Psi_l D - Z_l||_F^2 over D D^T = (1/R) I.  With
    A = sum_l Z_l^T Psi_l, the solution is D = (1/sqrt(R)) Q(A)^T.  Raises
    RankDeficient when A fails the full-rank test (non-unique solution).
    """
    lifts = list(lifts)
    if len(lifts) != codes.l:
        raise DimensionMismatch(f"{len(lifts)} lifts vs {codes.l} code samples")
    if not lifts:
        raise EmptyDataset("no samples")
    r = lifts[0].r
    k = codes.k
    a = np.zeros((k, r))
    for lift, z in zip(lifts, codes.stack):
        if lift.n != z.shape[0]:
            raise DimensionMismatch(
                f"lift length {lift.n} vs code rows {z.shape[0]}"
            )
        a += z.T @ lift.matrix
    q = polar_factor(a)
    return FilterBank(q.T / np.sqrt(r))


def initial_bank(r, k, seed):
    """Seeded feasible starting bank: scaled polar factor of a Gaussian."""
    rng = np.random.default_rng(seed)
    g = rng.standard_normal((k, r))
    return FilterBank(polar_factor(g).T / np.sqrt(r))


def caol_train(signals, pattern, k, config, d_init=None):
    """Alternating minimization for the CAOL objective.

    Runs exact code and filter updates until the objective change falls
    below ``config.rel_tol`` (relative) or ``config.max_iters`` is hit.
    Returns (final bank, final CodeSet, TrainTrace); the trace records
    iteration 0 (the initial bank with its codes) and every
    ``config.record_every``-th iteration plus the final one.
    """
    signals = list(signals)
    if not signals:
        raise EmptyDataset("no training signals")
    r = pattern.r
    if k < r:
        raise DimensionMismatch(f"need K >= R, got K={k}, R={r}")
    lifts = [build_lift(x, pattern) for x in signals]
    bank = d_init if d_init is not None else initial_bank(r, k, config.seed)
    if bank.r != r or bank.k != k:
        raise DimensionMismatch(
            f"initial bank is {bank.r}x{bank.k}, expected {r}x{k}"
        )

    trace = TrainTrace(config.alpha)

    def codes_for(b):
        stack = np.empty((len(lifts), lifts[0].n, k))
        nnz = 0
        for i, lift in enumerate(lifts):
            out, cnt = _kernels.hard_threshold(lift.matrix @ b.matrix, config.alpha)
            stack[i] = out
            nnz += cnt
        return CodeSet(stack), nnz

    codes, nnz = codes_for(bank)
    f_prev = objective(bank, lifts, codes, config.alpha)
    trace.record(0, f_prev, nnz / codes.stack.size, bank)

    last_iter = 0
    for it in range(1, config.max_iters + 1):
        try:
            bank = filter_update(lifts, codes)
        except RankDeficient as exc:
            raise RankDeficient(f"iteration {it}: {exc}") from exc
        f_it = objective(bank, lifts, codes, config.alpha)
        if it % config.record_every == 0:
            trace.record(it, f_it, codes.sparsity(), bank)
        last_iter = it
        converged = abs(f_prev - f_it) <= config.rel_tol * max(1.0, abs(f_prev))
        f_prev = f_it
        if converged:
            break
        if it < config.max_iters:
            codes, _ = codes_for(bank)

    if trace.iterations[-1] != last_iter:
        trace.record(last_iter, f_prev, codes.sparsity(), bank)
    return bank, codes, trace
