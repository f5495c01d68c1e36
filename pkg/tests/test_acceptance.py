"""Acceptance gate: the twelve core guarantees, one pass/fail line each.

Every test prints a single [PASS]/[FAIL] line (visible even under pytest's
capture) and then asserts, so a plain ``pytest`` run both reports and
enforces the full contract: exact alternating minimization, the three
filter-error bounds, the Monte Carlo studies behind them, and the
serialization / replay guarantees of the CLI.
"""

import csv
import json
import math
import os
import time

import numpy as np
import pytest

from caol._kernels import hard_threshold
from caol.bounds import adjoint_accumulate  # noqa: F401  (re-exported seam)
from caol.cli import main
from caol.errors import DeltaOutOfRange
from caol.ingest import (
    DatasetManifest,
    load_pgm,
    load_raw_tensor,
    write_pgm,
    write_raw_tensor,
)
from caol.learn import (
    CodeSet,
    FilterBank,
    TrainConfig,
    caol_train,
    filter_update,
    initial_bank,
    objective,
)
from caol.lifting import build_lift, convolve, gram_accumulate
from caol.signals import OffsetPattern, Signal
from caol.synth import (
    SynthSpec,
    monte_carlo_expected,
    monte_carlo_hp,
    rho_scan,
    synth_instance,
)


def _criterion(capsys, num, desc, ok, detail=""):
    tag = "PASS" if ok else "FAIL"
    line = f"[{tag}] criterion {num:02d}: {desc}"
    if detail:
        line += f" ({detail})"
    with capsys.disabled():
        print(line)
    assert ok, line


def test_criterion_01_deterministic_bound_on_the_default_spec(capsys, tmp_path):
    start = time.perf_counter()
    out = tmp_path / "verify"
    code = main(["verify", "--out", str(out)])
    elapsed = time.perf_counter() - start
    doc = json.loads((out / "verify.json").read_text())["summary"]
    held = int(round(doc["coverage"] * doc["trials"]))
    ok = (
        code == 0
        and doc["trials"] == 100
        and held == 100
        and doc["ok"] is True
        and elapsed < 30.0
    )
    _criterion(
        capsys,
        1,
        "deterministic bound holds on every default-spec trial",
        ok,
        f"{held}/{doc['trials']} trials, {elapsed:.1f}s < 30s",
    )


def test_criterion_02_zero_mismatch_recovers_the_filters_exactly(capsys):
    spec = SynthSpec(
        n=64, r=8, k=8, l=8, signal_model="gaussian", mismatch_model="zero", seed=5
    )
    inst = synth_instance(spec)
    d_star = filter_update(inst.lifts, inst.codes)
    err = float(np.linalg.norm(d_star.matrix - inst.d_true.matrix))
    ok = err <= 1e-8
    _criterion(
        capsys,
        2,
        "zero-mismatch codes reproduce the true bank",
        ok,
        f"|D* - D_true|_F = {err:.2e} <= 1e-8",
    )


def test_criterion_03_expected_bound_tracks_five_r_over_l(capsys):
    start = time.perf_counter()
    reports = []
    for l in (8, 32, 128):
        spec = SynthSpec(
            n=32,
            r=4,
            k=4,
            l=l,
            signal_model="impulse-ensemble",
            mismatch_model="iid-gaussian",
            mismatch_scale=0.5,  # sigma_bar^2 = K s^2 = 1 exactly
            seed=7,
            trials=500,
        )
        reports.append((l, monte_carlo_expected(spec)))
    elapsed = time.perf_counter() - start
    within = all(
        r.mean_error <= 5.0 * 4 / l + 2.0 * r.stderr for l, r in reports
    )
    exact_bounds = all(
        r.bounds[0] == pytest.approx(5.0 * 4 / l, rel=1e-12) for l, r in reports
    )
    means = [r.mean_error for _, r in reports]
    decreasing = means[0] > means[1] > means[2]
    ok = within and exact_bounds and decreasing and elapsed < 120.0
    _criterion(
        capsys,
        3,
        "mean error stays within 5R/L + 2 stderr and decays with L",
        ok,
        "means "
        + " > ".join(f"{m:.4f}" for m in means)
        + f", 500 trials each, {elapsed:.1f}s < 120s",
    )


def test_criterion_04_high_probability_coverage_and_delta_interval(capsys):
    start = time.perf_counter()
    spec = SynthSpec(
        n=16,
        r=4,
        k=4,
        l=10_000,
        signal_model="impulse-ensemble",
        mismatch_model="bounded-ball",
        mismatch_scale=0.5,
        seed=11,
        trials=1000,
    )
    report = monte_carlo_hp(spec, delta=0.05)
    rejected = 0
    for delta in (0.125, 0.2):  # the endpoint lambda_min/(2 R gamma^2) and beyond
        try:
            monte_carlo_hp(spec, delta=delta)
        except DeltaOutOfRange:
            rejected += 1
    elapsed = time.perf_counter() - start
    ok = (
        not report.vacuous
        and report.probability > 0.0
        and report.coverage >= report.probability
        and report.ok()
        and rejected == 2
        and elapsed < 300.0
    )
    _criterion(
        capsys,
        4,
        "coverage beats the tail probability; delta interval is enforced",
        ok,
        f"coverage {report.coverage:.3f} >= prob {report.probability:.4f}, "
        f"1000 trials, {elapsed:.1f}s < 300s",
    )


def test_criterion_05_conditioning_ratio_scaling(capsys, rng):
    start = time.perf_counter()
    r = 4
    impulses = [Signal.line(np.eye(512)[j % 512]) for j in range(256)]
    grid = [1, 2, 3, 4, 8, 16, 32, 64, 100, 128, 256]
    rows = rho_scan(impulses, OffsetPattern.line(r), grid, seed=2)
    exact = all(
        abs(mean - r / l) <= 1e-12 * (r / l) and std <= 1e-12 * (r / l)
        for l, mean, std in rows
    )
    gaussians = [Signal.line(rng.standard_normal(64)) for _ in range(256)]
    g_rows = rho_scan(
        gaussians, OffsetPattern.line(r), [8, 16, 32, 64, 128, 256], seed=3
    )
    slope = float(
        np.polyfit(
            np.log([row[0] for row in g_rows]),
            np.log([row[1] for row in g_rows]),
            1,
        )[0]
    )
    elapsed = time.perf_counter() - start
    ok = exact and -1.3 <= slope <= -0.7 and elapsed < 30.0
    _criterion(
        capsys,
        5,
        "rho^2 is exactly R/L on impulses and decays like 1/L on gaussians",
        ok,
        f"max impulse rel err <= 1e-12, gaussian slope {slope:.2f} in [-1.3,-0.7], "
        f"{elapsed:.1f}s < 30s",
    )


def test_criterion_06_training_shrinks_the_mismatch_correlation(capsys, tmp_path, rng):
    start = time.perf_counter()
    data = tmp_path / "data"
    data.mkdir()
    names = []
    for i in range(10):
        noise = rng.standard_normal((100, 100))
        smooth = sum(
            np.roll(np.roll(noise, dy, 0), dx, 1)
            for dy in (-2, -1, 0, 1, 2)
            for dx in (-2, -1, 0, 1, 2)
        ) / 25.0
        img = smooth + 0.3 * rng.standard_normal((100, 100))
        q = np.rint((img - img.min()) / (img.max() - img.min()) * 255.0)
        write_pgm(data / f"im{i}.pgm", Signal.grid(q))
        names.append(f"im{i}.pgm")
    DatasetManifest.from_files(names, data, preprocessing=["standardize"]).save(
        data / "manifest.json"
    )
    run = tmp_path / "run"
    train_code = main(
        [
            "train",
            "--data", str(data / "manifest.json"),
            "--filters", "5x5",
            "--alpha", "1e-3",
            "--iters", "150",
            "--record-every", "50",
            "--seed", "0",
            "--out", str(run),
        ]
    )
    scan = tmp_path / "scan"
    scan_code = main(
        ["scan", "--mode", "chi", "--run", str(run), "--stride", "50",
         "--out", str(scan)]
    )
    with open(scan / "chi_track.csv", newline="") as f:
        rows = list(csv.reader(f))[1:]
    values = [float(v) for _, v in rows]
    elapsed = time.perf_counter() - start
    ok = (
        train_code == 0
        and scan_code == 0
        and [int(i) for i, _ in rows] == [0, 50, 100, 150]
        and values[-1] <= values[0]
        and elapsed < 300.0
    )
    _criterion(
        capsys,
        6,
        "chi-bar falls from the first to the last recorded iteration",
        ok,
        f"chi {values[0]:.4f} -> {values[-1]:.5f} on 10 images at N=10^4, R=5x5, "
        f"{elapsed:.1f}s < 300s",
    )


def test_criterion_07_filter_update_beats_random_search(capsys, rng):
    start = time.perf_counter()
    shapes = [(1, 1), (1, 2), (1, 3), (2, 2), (2, 3), (3, 3)]
    pools = {}
    for r, k in shapes:
        g = rng.standard_normal((100_000, r, k))
        u, _, vh = np.linalg.svd(g, full_matrices=False)
        pools[(r, k)] = (u @ vh) / math.sqrt(r)
    margin = 0.0
    cross_checked = False
    for i in range(50):
        r, k = shapes[i % len(shapes)]
        pattern = OffsetPattern.line(r)
        lifts = [
            build_lift(Signal.line(rng.standard_normal(12)), pattern)
            for _ in range(2)
        ]
        psi = np.stack([lift.matrix for lift in lifts])
        codes = CodeSet(rng.standard_normal((2, 12, k)))
        gram = gram_accumulate(lifts)
        b_acc = np.einsum("lnr,lnk->rk", psi, codes.stack)
        d_star = filter_update(lifts, codes)
        banks = pools[(r, k)]
        pool_vals = np.einsum("brk,rs,bsk->b", banks, gram, banks) - 2.0 * np.einsum(
            "brk,rk->b", banks, b_acc
        )
        star_val = float(
            np.einsum("rk,rs,sk->", d_star.matrix, gram, d_star.matrix)
            - 2.0 * np.einsum("rk,rk->", d_star.matrix, b_acc)
        )
        margin = max(margin, star_val - float(pool_vals.min()))
        if not cross_checked:
            # the quadratic expansion must agree with the full objective
            const = float(np.sum(codes.stack**2))
            nnz = codes.nonzero_count()
            full = objective(d_star, lifts, codes, alpha=1.0)
            assert full - nnz - const == pytest.approx(star_val, rel=1e-9, abs=1e-9)
            sample = FilterBank(banks[123])
            full_s = objective(sample, lifts, codes, alpha=1.0)
            assert full_s - nnz - const == pytest.approx(
                float(pool_vals[123]), rel=1e-9, abs=1e-9
            )
            cross_checked = True
    elapsed = time.perf_counter() - start
    ok = margin <= 1e-9 and cross_checked and elapsed < 60.0
    _criterion(
        capsys,
        7,
        "the polar filter update is optimal against 10^5 random banks per shape",
        ok,
        f"worst margin {margin:.2e} <= 1e-9 over 50 instances, {elapsed:.1f}s < 60s",
    )


def test_criterion_08_hard_threshold_matches_the_two_candidate_oracle(capsys, rng):
    start = time.perf_counter()
    alpha = 0.25
    v = 0.7 * rng.standard_normal(1_000_000)
    v[:1000] = 0.5  # v^2 == alpha: exact ties must zero out
    v[1000:2000] = -0.5
    v[2000:3000] = 0.0
    out, count = hard_threshold(v, alpha)
    out = np.asarray(out)
    oracle = np.where(v * v > alpha, v, 0.0)
    agree = int(np.sum(out == oracle))
    elapsed = time.perf_counter() - start
    ok = (
        agree == v.size
        and count == int(np.count_nonzero(oracle))
        and np.all(out[:3000] == 0.0)
        and elapsed < 10.0
    )
    _criterion(
        capsys,
        8,
        "the l0 prox agrees with the keep-or-zero oracle on 10^6 scalars",
        ok,
        f"{agree}/{v.size} agree, ties zeroed, {elapsed:.1f}s < 10s",
    )


def test_criterion_09_concentration_machinery(capsys, rng):
    start = time.perf_counter()
    # (a) variance identity E|A - EA|^2 = E|A|^2 - |EA|^2 via paired trials
    n, r, k, l, c = 16, 4, 4, 32, 0.3
    p = rng.standard_normal((r, k))
    p /= np.linalg.norm(p)
    ea = l * c * p
    diffs = np.empty(500)
    for t in range(500):
        pos = rng.integers(0, n, size=l)
        g = rng.standard_normal((l, n, k))
        norms = np.sqrt(np.einsum("lnk,lnk->l", g, g))
        radii = 0.5 * c * rng.uniform(size=l) ** (1.0 / (n * k))
        e = g * (radii / norms)[:, None, None]
        rows = (pos[:, None] - np.arange(r)[None, :]) % n
        e[np.arange(l)[:, None], rows, :] += c * p[None, :, :]
        a = e[np.arange(l)[:, None], rows, :].sum(axis=0)
        diffs[t] = np.sum((a - ea) ** 2) - (np.sum(a**2) - np.sum(ea**2))
    stderr = float(np.std(diffs, ddof=1)) / math.sqrt(diffs.size)
    variance_ok = abs(float(np.mean(diffs))) <= 3.0 * stderr

    # (b) Weyl lower bound and (c) the denominator identity, 100 ensembles
    weyl_ok = True
    denom_err = 0.0
    lam_pop = 32.0 * np.eye(4)
    for _ in range(100):
        lifts = [
            build_lift(Signal.line(rng.standard_normal(32)), OffsetPattern.line(4))
            for _ in range(8)
        ]
        gram = gram_accumulate(lifts)
        lam_min = float(np.linalg.eigvalsh(gram)[0])
        spectral = float(np.max(np.abs(np.linalg.eigvalsh(gram - 8.0 * lam_pop))))
        rhs = 8.0 * 32.0 - spectral
        weyl_ok &= lam_min >= rhs - 1e-8 * max(1.0, abs(rhs))
        d_true = initial_bank(4, 6, int(rng.integers(1 << 31)))
        sigma_r = float(np.linalg.svd(gram @ d_true.matrix, compute_uv=False)[-1])
        target = lam_min**2 / 4.0
        denom_err = max(denom_err, abs(sigma_r**2 - target) / target)
    elapsed = time.perf_counter() - start
    ok = variance_ok and weyl_ok and denom_err <= 1e-8 and elapsed < 60.0
    _criterion(
        capsys,
        9,
        "variance identity, Weyl bound, and denominator identity all hold",
        ok,
        f"|mean paired diff| <= 3 stderr, worst denominator rel err "
        f"{denom_err:.1e} <= 1e-8, {elapsed:.1f}s < 60s",
    )


def test_criterion_10_objective_is_monotone_across_the_suite(capsys, rng):
    worst = -np.inf
    steps = 0
    runs = [
        (
            [Signal.line(rng.standard_normal(64)) for _ in range(6)],
            OffsetPattern.line(4),
            6,
            1e-2,
            30,
        ),
        (
            [Signal.line(rng.standard_normal(32)) for _ in range(3)],
            OffsetPattern.line(2),
            2,
            1e-4,
            40,
        ),
        (
            [Signal.line(np.eye(24)[j]) for j in range(5)],
            OffsetPattern.line(3),
            4,
            1e-3,
            20,
        ),
        (
            [Signal.grid(rng.standard_normal((8, 8))) for _ in range(3)],
            OffsetPattern.square(2, 2),
            4,
            1e-3,
            25,
        ),
    ]
    for signals, pattern, k, alpha, iters in runs:
        config = TrainConfig(
            alpha=alpha, max_iters=iters, rel_tol=0.0, seed=9, record_every=1
        )
        _, _, trace = caol_train(signals, pattern, k, config)
        for prev, cur in zip(trace.objectives, trace.objectives[1:]):
            worst = max(worst, (cur - prev) / max(1.0, abs(prev)))
            steps += 1
    ok = worst <= 1e-10 and steps > 80
    _criterion(
        capsys,
        10,
        "the objective never increases between recorded iterations",
        ok,
        f"worst relative step {worst:.1e} <= 1e-10 over {steps} steps in 4 runs",
    )


def test_criterion_11_tight_frame_energy_identity(capsys, rng):
    worst = 0.0
    for i in range(50):
        r = int(rng.integers(1, 7))
        k = r + int(rng.integers(0, 4))
        bank = initial_bank(r, k, int(rng.integers(1 << 31)))
        x = Signal.line(rng.standard_normal(40))
        pattern = OffsetPattern.line(r)
        total = sum(
            float(np.sum(convolve(x, bank.filter(j), pattern).values ** 2))
            for j in range(k)
        )
        worst = max(worst, abs(total - x.norm() ** 2) / x.norm() ** 2)
    for i in range(50):
        h, w = int(rng.integers(1, 4)), int(rng.integers(1, 4))
        k = h * w + int(rng.integers(0, 3))
        bank = initial_bank(h * w, k, int(rng.integers(1 << 31)))
        x = Signal.grid(rng.standard_normal((8, 9)))
        pattern = OffsetPattern.square(h, w)
        total = sum(
            float(np.sum(convolve(x, bank.filter(j), pattern).values ** 2))
            for j in range(k)
        )
        worst = max(worst, abs(total - x.norm() ** 2) / x.norm() ** 2)
    ok = worst <= 1e-9
    _criterion(
        capsys,
        11,
        "filter banks pass signal energy through unchanged on 100 pairs",
        ok,
        f"worst relative energy error {worst:.1e} <= 1e-9",
    )


def test_criterion_12_serialization_and_replay(capsys, tmp_path, rng):
    img = Signal.grid(np.float64(rng.integers(0, 256, size=(6, 7))))
    wide = Signal.grid(np.float64(rng.integers(0, 40_000, size=(3, 4))))
    roundtrips = True
    for name, sig, kwargs in (
        ("p5.pgm", img, {}),
        ("p2.pgm", img, {"ascii_format": True}),
        ("p5w.pgm", wide, {"maxval": 65535}),
    ):
        path = tmp_path / name
        write_pgm(path, sig, **kwargs)
        back = load_pgm(path)
        write_pgm(tmp_path / ("again_" + name), back, **kwargs)
        roundtrips &= bool(np.all(back.values == sig.values))
        roundtrips &= (
            path.read_bytes() == (tmp_path / ("again_" + name)).read_bytes()
        )
    tricky = np.array([0.1 + 0.2, -0.0, 5e-324, np.pi, -1e308])
    write_raw_tensor(tmp_path / "t.tnsr", Signal.line(tricky))
    roundtrips &= (
        load_raw_tensor(tmp_path / "t.tnsr").values.tobytes() == tricky.tobytes()
    )

    data = tmp_path / "lines"
    data.mkdir()
    names = []
    for i in range(5):
        write_raw_tensor(data / f"s{i}.tnsr", Signal.line(rng.standard_normal(32)))
        names.append(f"s{i}.tnsr")
    DatasetManifest.from_files(names, data).save(data / "manifest.json")
    first, second = tmp_path / "first", tmp_path / "second"
    assert (
        main(
            [
                "train",
                "--data", str(data / "manifest.json"),
                "--filters", "4x3",
                "--alpha", "1e-3",
                "--iters", "5",
                "--out", str(first),
            ]
        )
        == 0
    )
    assert (
        main(["train", "--config", str(first / "run.json"), "--out", str(second)])
        == 0
    )

    def read_trace(path):
        with open(path, newline="") as f:
            return [
                (int(r[0]), float(r[1]), float(r[2]))
                for r in list(csv.reader(f))[1:]
            ]

    a, b = read_trace(first / "trace.csv"), read_trace(second / "trace.csv")
    replay_ok = len(a) == len(b) and all(
        ra[0] == rb[0]
        and abs(ra[1] - rb[1]) <= 1e-10 * max(1.0, abs(ra[1]))
        and abs(ra[2] - rb[2]) <= 1e-10 * max(1.0, abs(ra[2]))
        for ra, rb in zip(a, b)
    )
    bits_ok = (first / "filters.tnsr").read_bytes() == (
        second / "filters.tnsr"
    ).read_bytes()
    ok = roundtrips and replay_ok and bits_ok
    _criterion(
        capsys,
        12,
        "image/tensor roundtrips are bit-exact and replays match the original",
        ok,
        "PGM+tensor bytes stable, replayed trace within 1e-10 "
        "(filters bit-identical)",
    )
