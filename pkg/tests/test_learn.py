"""Objective, sparse-code update, polar factor, filter update, trainer."""

import numpy as np
import pytest

from caol.errors import DimensionMismatch, EmptyDataset, RankDeficient
from caol.learn import (
    CodeSet,
    FilterBank,
    TrainConfig,
    caol_train,
    filter_update,
    initial_bank,
    objective,
    polar_factor,
    sparse_code_update,
)
from caol.lifting import build_lift
from caol.signals import OffsetPattern, Signal

from conftest import feasible_bank_oracle


def _random_lifts(rng, l, n, r):
    pattern = OffsetPattern.line(r)
    return [
        build_lift(Signal.line(rng.standard_normal(n)), pattern) for _ in range(l)
    ], pattern


# --- FilterBank invariants -----------------------------------------------------


def test_bank_accepts_feasible_matrices(rng):
    bank = FilterBank(feasible_bank_oracle(rng, 3, 5))
    assert (bank.r, bank.k) == (3, 5)
    np.testing.assert_allclose(
        bank.matrix @ bank.matrix.T, np.eye(3) / 3.0, atol=1e-12
    )


def test_bank_rejects_non_orthogonal_rows():
    with pytest.raises(ValueError):
        FilterBank(np.array([[1.0, 0.0], [0.0, 0.5]]))


def test_bank_rejects_more_rows_than_columns():
    with pytest.raises(DimensionMismatch):
        FilterBank(np.eye(3)[:, :2])


def test_square_bank_columns_are_orthogonal_too(rng):
    bank = FilterBank(feasible_bank_oracle(rng, 4, 4))
    np.testing.assert_allclose(
        bank.matrix.T @ bank.matrix, np.eye(4) / 4.0, atol=1e-12
    )


def test_bank_matrix_is_immutable(rng):
    bank = FilterBank(feasible_bank_oracle(rng, 2, 3))
    with pytest.raises(ValueError):
        bank.matrix[0, 0] = 1.0
    assert bank.filter(1).shape == (2,)


# --- objective ------------------------------------------------------------------


def test_objective_exact_fit_leaves_only_the_sparsity_term(rng):
    lifts, _ = _random_lifts(rng, 3, 10, 2)
    bank = FilterBank(feasible_bank_oracle(rng, 2, 2))
    codes = CodeSet(np.stack([lift.matrix @ bank.matrix for lift in lifts]))
    alpha = 0.3
    expected = alpha * codes.nonzero_count()
    assert objective(bank, lifts, codes, alpha) == pytest.approx(expected, rel=1e-12)


def test_objective_with_zero_codes_totals_signal_energy(rng):
    signals = [Signal.line(rng.standard_normal(12)) for _ in range(4)]
    pattern = OffsetPattern.line(3)
    lifts = [build_lift(x, pattern) for x in signals]
    bank = FilterBank(feasible_bank_oracle(rng, 3, 6))
    codes = CodeSet(np.zeros((4, 12, 6)))
    energy = sum(x.norm() ** 2 for x in signals)
    # the residual collapses to the energy-preservation identity of the bank
    assert objective(bank, lifts, codes, 1.0) == pytest.approx(energy, rel=1e-9)


def test_objective_single_entry_case():
    x = Signal.line([1.0, 0.0])
    lifts = [build_lift(x, OffsetPattern([0]))]
    bank = FilterBank(np.array([[1.0]]))
    codes = CodeSet(np.zeros((1, 2, 1)))
    assert objective(bank, lifts, codes, 0.5) == pytest.approx(1.0, abs=1e-15)


def test_objective_validates_shapes_and_alpha(rng):
    lifts, _ = _random_lifts(rng, 2, 8, 2)
    bank = FilterBank(feasible_bank_oracle(rng, 2, 2))
    codes = CodeSet(np.zeros((3, 8, 2)))
    with pytest.raises(DimensionMismatch):
        objective(bank, lifts, codes, 1.0)
    good = CodeSet(np.zeros((2, 8, 2)))
    with pytest.raises(ValueError):
        objective(bank, lifts, good, -1.0)


# --- sparse-code update ----------------------------------------------------------


def test_threshold_keeps_large_and_kills_small_responses():
    x = Signal.line([0.5, 0.01])
    bank = FilterBank(np.array([[1.0]]))
    out = sparse_code_update(bank, x, OffsetPattern([0]), 1e-3)
    np.testing.assert_array_equal(out, [[0.5], [0.0]])


def test_threshold_tie_breaks_toward_zero():
    x = Signal.line([0.5, 2.0])
    bank = FilterBank(np.array([[1.0]]))
    out = sparse_code_update(bank, x, OffsetPattern([0]), 0.25)
    np.testing.assert_array_equal(out, [[0.0], [2.0]])


def test_tiny_alpha_keeps_every_nonzero_response(rng):
    x = Signal.line(rng.standard_normal(16))
    bank = initial_bank(4, 6, seed=3)
    pattern = OffsetPattern.line(4)
    out = sparse_code_update(bank, x, pattern, 1e-300)
    responses = build_lift(x, pattern).matrix @ bank.matrix
    np.testing.assert_array_equal(out, responses)


def test_threshold_output_beats_both_per_entry_candidates(rng):
    x = Signal.line(rng.standard_normal(32))
    bank = initial_bank(3, 5, seed=9)
    pattern = OffsetPattern.line(3)
    alpha = 0.05
    z = sparse_code_update(bank, x, pattern, alpha)
    v = build_lift(x, pattern).matrix @ bank.matrix
    cost = (v - z) ** 2 + alpha * (z != 0)
    best = np.minimum(v**2, alpha)  # the cheaper of zeroing vs keeping
    assert np.all(cost <= best + 1e-15)


def test_threshold_requires_positive_alpha(rng):
    x = Signal.line(rng.standard_normal(8))
    bank = initial_bank(2, 2, seed=0)
    with pytest.raises(ValueError):
        sparse_code_update(bank, x, OffsetPattern.line(2), 0.0)


def test_threshold_rejects_mismatched_pattern(rng):
    x = Signal.line(rng.standard_normal(8))
    bank = initial_bank(2, 2, seed=0)
    with pytest.raises(DimensionMismatch):
        sparse_code_update(bank, x, OffsetPattern.line(3), 0.1)


# --- polar factor -----------------------------------------------------------------


def test_polar_factor_of_identity_is_identity():
    np.testing.assert_allclose(polar_factor(np.eye(3)), np.eye(3), atol=1e-14)


def test_polar_factor_of_positive_diagonal_is_identity():
    np.testing.assert_allclose(
        polar_factor(np.diag([3.0, 5.0])), np.eye(2), atol=1e-14
    )


def test_polar_factor_properties_on_random_input(rng):
    for _ in range(20):
        a = rng.standard_normal((4, 2))
        if np.linalg.cond(a) > 100:
            continue
        q = polar_factor(a)
        np.testing.assert_allclose(q.T @ q, np.eye(2), atol=1e-10)
        h = q.T @ a
        np.testing.assert_allclose(h, h.T, atol=1e-10)
        assert np.all(np.linalg.eigvalsh((h + h.T) / 2.0) > 0)
        np.testing.assert_allclose(q @ h, a, atol=1e-10)


def test_polar_factor_is_idempotent_and_scale_invariant(rng):
    a = rng.standard_normal((5, 3))
    q = polar_factor(a)
    np.testing.assert_allclose(polar_factor(q), q, atol=1e-12)
    np.testing.assert_allclose(polar_factor(7.5 * a), q, atol=1e-12)


def test_polar_factor_rejects_rank_deficient_and_wide_inputs(rng):
    col = rng.standard_normal((4, 1))
    with pytest.raises(RankDeficient):
        polar_factor(np.hstack([col, col]))
    with pytest.raises(RankDeficient):
        polar_factor(np.zeros((3, 2)))
    with pytest.raises(DimensionMismatch):
        polar_factor(rng.standard_normal((2, 3)))


# --- filter update ----------------------------------------------------------------


def test_filter_update_recovers_true_bank_from_exact_codes(rng):
    lifts, _ = _random_lifts(rng, 4, 20, 3)
    d_true = FilterBank(feasible_bank_oracle(rng, 3, 5))
    codes = CodeSet(np.stack([lift.matrix @ d_true.matrix for lift in lifts]))
    d_star = filter_update(lifts, codes)
    assert np.linalg.norm(d_star.matrix - d_true.matrix) <= 1e-8


def test_filter_update_scalar_case_returns_the_sign():
    x = Signal.line([1.0, 2.0, -1.0])
    lift = build_lift(x, OffsetPattern([0]))
    codes = CodeSet((3.0 * lift.matrix)[None, :, :])
    d_star = filter_update([lift], codes)
    np.testing.assert_allclose(d_star.matrix, [[1.0]], atol=1e-15)


def test_filter_update_beats_random_feasible_banks(rng):
    lifts, _ = _random_lifts(rng, 3, 12, 2)
    z = np.stack([lift.matrix for lift in lifts]) @ feasible_bank_oracle(rng, 2, 4)
    z += 0.1 * rng.standard_normal(z.shape)
    codes = CodeSet(z)
    d_star = filter_update(lifts, codes)
    best = objective(d_star, lifts, codes, 1e-6)
    for _ in range(200):
        other = FilterBank(feasible_bank_oracle(rng, 2, 4))
        assert best <= objective(other, lifts, codes, 1e-6) + 1e-9


def test_filter_update_requires_samples_and_consistent_shapes(rng):
    with pytest.raises(DimensionMismatch):
        filter_update([], CodeSet(np.zeros((1, 4, 2))))
    lifts, _ = _random_lifts(rng, 2, 8, 2)
    with pytest.raises(DimensionMismatch):
        filter_update(lifts, CodeSet(np.zeros((3, 8, 2))))
    with pytest.raises(DimensionMismatch):
        filter_update(lifts, CodeSet(np.zeros((2, 9, 2))))


def test_filter_update_flags_rank_deficient_accumulation(rng):
    lifts, _ = _random_lifts(rng, 2, 8, 2)
    with pytest.raises(RankDeficient):
        filter_update(lifts, CodeSet(np.zeros((2, 8, 2))))


# --- trainer ----------------------------------------------------------------------


def test_train_reaches_fixed_point_on_impulses_in_one_iteration():
    n, r = 8, 2
    signals = [
        Signal.line(np.eye(n)[j]) for j in (0, 3, 5)
    ]
    pattern = OffsetPattern.line(r)
    d_true = initial_bank(r, r, seed=11)
    alpha = 1e-8  # below every squared response that matters
    config = TrainConfig(alpha=alpha, max_iters=10, rel_tol=0.0)
    bank, codes, trace = caol_train(signals, pattern, r, config, d_init=d_true)
    # exact alternation from the fixed point: objective never moves
    assert trace.objectives[-1] == pytest.approx(trace.objectives[0], rel=1e-12)
    assert np.linalg.norm(bank.matrix - d_true.matrix) <= 1e-10


def test_train_objective_is_nonincreasing(rng):
    signals = [Signal.line(rng.standard_normal(24)) for _ in range(5)]
    config = TrainConfig(alpha=0.05, max_iters=40, rel_tol=0.0, seed=2)
    _, _, trace = caol_train(signals, OffsetPattern.line(3), 4, config)
    diffs = np.diff(trace.objectives)
    assert np.all(diffs <= 1e-10 * np.maximum(1.0, np.abs(trace.objectives[:-1])))


def test_train_is_deterministic_per_seed(rng):
    signals = [Signal.line(rng.standard_normal(16)) for _ in range(3)]
    config = TrainConfig(alpha=0.02, max_iters=15, rel_tol=0.0, seed=7)
    bank_a, _, trace_a = caol_train(signals, OffsetPattern.line(2), 3, config)
    bank_b, _, trace_b = caol_train(signals, OffsetPattern.line(2), 3, config)
    np.testing.assert_array_equal(bank_a.matrix, bank_b.matrix)
    assert trace_a.objectives == trace_b.objectives


def test_train_records_requested_iterations(rng):
    signals = [Signal.line(rng.standard_normal(16)) for _ in range(3)]
    config = TrainConfig(alpha=0.02, max_iters=9, rel_tol=0.0, record_every=3)
    _, _, trace = caol_train(signals, OffsetPattern.line(2), 2, config)
    assert trace.iterations == [0, 3, 6, 9]
    assert len(trace.filters) == len(trace.objectives) == 4


def test_train_validates_inputs(rng):
    with pytest.raises(EmptyDataset):
        caol_train([], OffsetPattern.line(2), 2, TrainConfig(alpha=0.1))
    signals = [Signal.line(rng.standard_normal(8))]
    with pytest.raises(DimensionMismatch):
        caol_train(signals, OffsetPattern.line(3), 2, TrainConfig(alpha=0.1))
    bad_init = initial_bank(2, 2, seed=0)
    with pytest.raises(DimensionMismatch):
        caol_train(
            signals, OffsetPattern.line(2), 3, TrainConfig(alpha=0.1), d_init=bad_init
        )


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(alpha=0.0)
    with pytest.raises(ValueError):
        TrainConfig(alpha=1.0, max_iters=0)
    with pytest.raises(ValueError):
        TrainConfig(alpha=1.0, rel_tol=-1.0)
    with pytest.raises(ValueError):
        TrainConfig(alpha=1.0, record_every=0)


def test_initial_bank_is_feasible_and_seeded():
    a = initial_bank(3, 5, seed=4)
    b = initial_bank(3, 5, seed=4)
    c = initial_bank(3, 5, seed=5)
    np.testing.assert_array_equal(a.matrix, b.matrix)
    assert np.linalg.norm(a.matrix - c.matrix) > 1e-6
    np.testing.assert_allclose(a.matrix @ a.matrix.T, np.eye(3) / 3.0, atol=1e-12)


def test_codeset_counts_nonzeros():
    codes = CodeSet(np.array([[[0.0, 1.0], [2.0, 0.0]]]))
    assert codes.nonzero_count() == 2
    assert codes.sparsity() == pytest.approx(0.5)
    assert (codes.l, codes.n, codes.k) == (1, 2, 2)
