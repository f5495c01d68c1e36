"""Command-line interface: train, bounds, verify, scan.

Exit codes are stable API: 0 success, 2 configuration error, 3 data error,
4 numerical failure, 5 validation failure.  Every command embeds its
resolved parameters, seed, and the library version into a JSON artifact in
--out, and `--config <that json>` replays the run.

CAOL_THREADS caps BLAS/OpenMP parallelism and must take effect before numpy
loads, so this module exports the thread env vars at import time and defers
every numeric import into the command handlers.
"""

import argparse
import json
import os
import sys

_threads = os.environ.get("CAOL_THREADS", "").strip()
if _threads and _threads != "0":
    for _var in (
        "OMP_NUM_THREADS",
        "OPENBLAS_NUM_THREADS",
        "MKL_NUM_THREADS",
        "NUMEXPR_NUM_THREADS",
        "VECLIB_MAXIMUM_THREADS",
    ):
        os.environ[_var] = _threads

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERICAL = 4
EXIT_VALIDATION = 5


# --- emission helpers --------------------------------------------------------

def _fmt_cell(v):
    import numpy as np

    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, str):
        return v
    return format(float(v), ".17g")


def _write_csv(path, header, rows):
    from .ingest import atomic_write_bytes

    lines = [",".join(header)]
    lines.extend(",".join(_fmt_cell(v) for v in row) for row in rows)
    atomic_write_bytes(path, ("\n".join(lines) + "\n").encode("utf-8"))


def _jsonable(v):
    import numpy as np

    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, (bool, np.bool_)):
        return bool(v)
    if isinstance(v, (int, np.integer)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        return float(v)
    if isinstance(v, np.ndarray):
        return [_jsonable(x) for x in v.tolist()]
    return v


def _write_json(path, doc):
    from .ingest import atomic_write_bytes

    atomic_write_bytes(
        path, (json.dumps(_jsonable(doc), indent=2) + "\n").encode("utf-8")
    )


def _artifact(command, params, body):
    from . import __version__
    from ._kernels import backend

    doc = {
        "command": command,
        "version": __version__,
        "backend": backend(),
        "params": _jsonable(params),
    }
    doc.update(_jsonable(body))
    return doc


def _ensure_out(params):
    out = params.get("out")
    if out:
        os.makedirs(out, exist_ok=True)
    return out


def _params(args, names):
    """Resolved command parameters: either replayed from --config or taken
    from the flags; --out on the command line always wins."""
    if getattr(args, "config", None):
        with open(args.config, "r", encoding="utf-8") as f:
            doc = json.load(f)
        params = dict(doc.get("params", {}))
        if getattr(args, "out", None):
            params["out"] = args.out
        return params
    return {name: getattr(args, name) for name in names}


# --- shared flag groups ------------------------------------------------------

def _add_synth_flags(p):
    p.add_argument("--n", type=int, default=256, help="signal length N")
    p.add_argument("--r", type=int, default=8, help="filter length R")
    p.add_argument("--k", type=int, default=8, help="filter count K")
    p.add_argument("--l", type=int, default=32, help="sample count L")
    p.add_argument(
        "--signal-model",
        default="gaussian",
        choices=("gaussian", "impulse-ensemble"),
        help="synthetic signal ensemble",
    )
    p.add_argument(
        "--mismatch-model",
        default="iid-gaussian",
        choices=("zero", "iid-gaussian", "bounded-ball", "correlated"),
        help="mismatch ensemble for the codes",
    )
    p.add_argument(
        "--scale", type=float, default=0.1, help="mismatch model parameter"
    )
    p.add_argument("--seed", type=int, default=0, help="master RNG seed")
    p.add_argument("--trials", type=int, default=100, help="Monte Carlo trials")


_SYNTH_NAMES = (
    "n", "r", "k", "l", "signal_model", "mismatch_model", "scale", "seed", "trials"
)


def _spec_from(params):
    from .synth import SynthSpec

    return SynthSpec(
        n=int(params["n"]),
        r=int(params["r"]),
        k=int(params["k"]),
        l=int(params["l"]),
        signal_model=params["signal_model"],
        mismatch_model=params["mismatch_model"],
        mismatch_scale=float(params["scale"]),
        seed=int(params["seed"]),
        trials=int(params["trials"]),
    )


def _parse_filters(text, grid):
    """Filter geometry grammar: KxR for 1-D data; HxW or KxHxW for 2-D.

    Returns (K, pattern).  2-D sizes default K to H*W (a square bank).
    """
    from .errors import ConfigError
    from .signals import OffsetPattern

    try:
        dims = [int(p) for p in text.lower().split("x")]
    except ValueError:
        raise ConfigError(f"--filters {text!r} is not a list of integers") from None
    if grid:
        if len(dims) == 2:
            (h, w), k = dims, dims[0] * dims[1]
        elif len(dims) == 3:
            k, h, w = dims
        else:
            raise ConfigError(
                f"--filters {text!r}: 2-D data expects HxW or KxHxW"
            )
        return k, OffsetPattern.square(h, w)
    if len(dims) != 2:
        raise ConfigError(f"--filters {text!r}: 1-D data expects KxR")
    k, r = dims
    return k, OffsetPattern.line(r)


def _parse_grid(text):
    from .errors import ConfigError

    try:
        values = [int(p) for p in text.split(",") if p.strip()]
    except ValueError:
        raise ConfigError(f"grid {text!r} is not a comma-separated int list") from None
    if not values:
        raise ConfigError("empty grid")
    return values


def _load_dataset(manifest_path):
    from .errors import ConfigError
    from .ingest import DatasetManifest
    from .signals import Grid

    manifest = DatasetManifest.load(manifest_path)
    signals = manifest.load_signals(os.path.dirname(os.path.abspath(manifest_path)))
    first = signals[0].geometry
    for x in signals[1:]:
        if type(x.geometry) is not type(first):
            raise ConfigError("manifest mixes 1-D and 2-D signals")
    return manifest, signals, isinstance(first, Grid)


def _bank_signal(bank):
    from .signals import Signal

    return Signal.grid(bank.matrix)


def _bank_from_file(path):
    from .learn import FilterBank

    return FilterBank(load_grid_matrix(path))


def load_grid_matrix(path):
    from .errors import MalformedHeader
    from .ingest import load_raw_tensor
    from .signals import Grid

    x = load_raw_tensor(path)
    if not isinstance(x.geometry, Grid):
        raise MalformedHeader(f"{path} does not hold a matrix")
    return x.as_grid()


# --- train -------------------------------------------------------------------

_TRAIN_NAMES = (
    "data", "filters", "alpha", "iters", "tol", "seed", "record_every", "out"
)


def cmd_train(args):
    from .errors import ConfigError

    params = _params(args, _TRAIN_NAMES)
    for flag in ("data", "filters", "alpha"):
        if params.get(flag) is None:
            raise ConfigError(f"train needs --{flag} (or --config)")
    params["data"] = os.path.abspath(params["data"])
    out = _ensure_out(params)
    if not out:
        raise ConfigError("train needs --out")

    from .ingest import write_raw_tensor
    from .learn import TrainConfig, caol_train

    manifest, signals, grid = _load_dataset(params["data"])
    k, pattern = _parse_filters(params["filters"], grid)
    config = TrainConfig(
        alpha=float(params["alpha"]),
        max_iters=int(params["iters"]),
        rel_tol=float(params["tol"]),
        seed=int(params["seed"]),
        record_every=int(params["record_every"]),
    )
    bank, codes, trace = caol_train(signals, pattern, k, config)

    write_raw_tensor(os.path.join(out, "filters.tnsr"), _bank_signal(bank))
    snap_dir = os.path.join(out, "snapshots")
    os.makedirs(snap_dir, exist_ok=True)
    for i, snap in zip(trace.iterations, trace.filters):
        write_raw_tensor(
            os.path.join(snap_dir, f"iter_{i:06d}.tnsr"), _bank_signal(snap)
        )
    _write_csv(
        os.path.join(out, "trace.csv"),
        ("iteration", "objective", "sparsity"),
        zip(trace.iterations, trace.objectives, trace.sparsities),
    )
    summary = {
        "iterations": trace.iterations[-1],
        "final_objective": trace.objectives[-1],
        "final_sparsity": trace.sparsities[-1],
        "l": len(signals),
        "n": signals[0].n,
        "r": pattern.r,
        "k": k,
        "preprocessing": manifest.preprocessing,
    }
    _write_json(
        os.path.join(out, "run.json"), _artifact("train", params, {"summary": summary})
    )
    print(
        f"trained {k} filters (R={pattern.r}) on {len(signals)} signals: "
        f"objective {trace.objectives[-1]:.6g} after {trace.iterations[-1]} iterations"
    )
    return EXIT_OK


# --- bounds ------------------------------------------------------------------

_BOUNDS_NAMES = (
    "run", "synth", "deltas", "out",
) + _SYNTH_NAMES


def cmd_bounds(args):
    params = _params(args, _BOUNDS_NAMES)
    out = _ensure_out(params)

    import numpy as np

    from .bounds import compile_report, mismatch_from_codes
    from .errors import ConfigError
    from .learn import CodeSet, sparse_code_update
    from .lifting import build_lift
    from .synth import synth_instance

    deltas = [float(d) for d in params.get("deltas") or []]
    if params.get("run") and params.get("synth"):
        raise ConfigError("--run and --synth are mutually exclusive")
    if params.get("run"):
        run_dir = params["run"]
        with open(os.path.join(run_dir, "run.json"), "r", encoding="utf-8") as f:
            run_doc = json.load(f)
        run_params = run_doc["params"]
        _, signals, grid = _load_dataset(run_params["data"])
        k, pattern = _parse_filters(run_params["filters"], grid)
        bank = _bank_from_file(os.path.join(run_dir, "filters.tnsr"))
        alpha = float(run_params["alpha"])
        lifts = [build_lift(x, pattern) for x in signals]
        codes = CodeSet(
            np.stack([sparse_code_update(bank, x, pattern, alpha) for x in signals])
        )
        mismatches = mismatch_from_codes(codes, lifts, bank)
        notes = ["mismatches taken against the trained filters of " + run_dir]
    elif params.get("synth"):
        inst = synth_instance(_spec_from(params))
        lifts, mismatches = inst.lifts, inst.mismatches
        notes = ["synthetic instance; mismatches against the true filters"]
    else:
        raise ConfigError("bounds needs --run <dir> or --synth")

    report = compile_report(lifts, mismatches, deltas=deltas, notes=notes)
    flat = report.flat_items()
    if out:
        _write_json(
            os.path.join(out, "bounds.json"),
            _artifact("bounds", params, {"report": report.to_dict()}),
        )
        _write_csv(os.path.join(out, "bounds.csv"), ("key", "value"), flat)
    print(
        f"det bound {report.det_bound:.6g}, expected bound "
        f"{report.expected_bound:.6g}, rho^2 {report.rho_sq:.6g}"
        + "".join(
            f", hp[delta={e.delta:g}] {e.bound:.6g} (p={e.prob:.4g}"
            + (", vacuous)" if e.vacuous else ")")
            for e in report.hp
        )
    )
    return EXIT_OK


# --- verify ------------------------------------------------------------------

_VERIFY_NAMES = (
    "mode", "delta", "perturb_bound", "out",
) + _SYNTH_NAMES


def cmd_verify(args):
    params = _params(args, _VERIFY_NAMES)
    out = _ensure_out(params)

    from .errors import ConfigError, ValidationFailure
    from .synth import monte_carlo_expected, monte_carlo_hp, verify_det_bound

    spec = _spec_from(params)
    mode = params["mode"]
    if mode == "thm2":
        if params.get("delta") is None:
            raise ConfigError("--thm2 needs --delta")
        report = monte_carlo_hp(spec, float(params["delta"]))
    elif mode == "cor1":
        report = monte_carlo_expected(spec)
    else:
        report = verify_det_bound(spec)

    perturb = float(params.get("perturb_bound") or 0.0)
    if perturb:
        report.bounds = report.bounds + perturb
        report.notes.append(f"bounds perturbed by {perturb:+g} (test hook)")

    summary = report.summary()
    if out:
        _write_json(
            os.path.join(out, "verify.json"),
            _artifact("verify", params, {"summary": summary}),
        )
        _write_csv(
            os.path.join(out, "trials.csv"),
            ("trial", "error", "bound", "holds"),
            report.rows(),
        )
    line = (
        f"{mode}: {int(report.coverage * report.trials)}/{report.trials} trials "
        f"within bound, mean error {report.mean_error:.6g}"
    )
    if report.probability is not None:
        line += f", coverage {report.coverage:.4g} vs probability {report.probability:.4g}"
        if report.vacuous:
            line += " (vacuous)"
    print(line + (" -> ok" if report.ok() else " -> FAIL"))
    if not report.ok():
        bad = [row for row in report.rows() if not row[3]][:20]
        doc = {
            "params": _jsonable(params),
            "summary": _jsonable(summary),
            "offending_trials": [
                {"trial": t, "error": e, "bound": b} for t, e, b, _ in bad
            ],
        }
        print(json.dumps(doc), file=sys.stderr)
        if out:
            _write_json(os.path.join(out, "failure.json"), doc)
        return EXIT_VALIDATION
    return EXIT_OK


# --- scan --------------------------------------------------------------------

_SCAN_NAMES = (
    "mode", "data", "run", "pattern", "l_grid", "replicates", "available",
    "stride", "out",
) + _SYNTH_NAMES


def _pattern_from(text, grid):
    from .errors import ConfigError
    from .signals import OffsetPattern

    dims = _parse_grid(text.replace("x", ","))
    if grid:
        if len(dims) != 2:
            raise ConfigError(f"--pattern {text!r}: 2-D data expects HxW")
        return OffsetPattern.square(dims[0], dims[1])
    if len(dims) != 1:
        raise ConfigError(f"--pattern {text!r}: 1-D data expects a length R")
    return OffsetPattern.line(dims[0])


def cmd_scan(args):
    params = _params(args, _SCAN_NAMES)
    out = _ensure_out(params)

    from .errors import ConfigError
    from .synth import SynthSpec, chi_track, ensemble_signals, rho_scan

    if params["mode"] == "rho":
        grid_values = _parse_grid(params["l_grid"])
        if params.get("data"):
            _, signals, grid = _load_dataset(params["data"])
            if not params.get("pattern"):
                raise ConfigError("rho scan over a dataset needs --pattern")
            pattern = _pattern_from(params["pattern"], grid)
        else:
            available = int(params.get("available") or max(grid_values))
            spec = SynthSpec(
                n=int(params["n"]),
                r=int(params["r"]),
                k=max(int(params["k"]), int(params["r"])),
                l=available,
                signal_model=params["signal_model"],
                mismatch_model="zero",
                seed=int(params["seed"]),
            )
            signals = ensemble_signals(spec)
            pattern = spec.offsets()
        if max(grid_values) > len(signals):
            raise ConfigError(
                f"L grid up to {max(grid_values)} exceeds the {len(signals)} "
                "available signals"
            )
        rows = rho_scan(
            signals,
            pattern,
            grid_values,
            subset_replicates=int(params["replicates"]),
            seed=int(params["seed"]),
        )
        header = ("L", "rho_sq_mean", "rho_sq_std")
        name = "rho_scan.csv"
        line = ", ".join(f"rho^2(L={l}) = {m:.6g}" for l, m, _ in rows)
    else:
        if not params.get("run"):
            raise ConfigError("chi scan needs --run <training output dir>")
        rows = _chi_rows(params["run"], int(params["stride"]))
        header = ("iteration", "chi_bar")
        name = "chi_track.csv"
        line = ", ".join(f"chi(it={i}) = {c:.6g}" for i, c in rows)
    if out:
        _write_csv(os.path.join(out, name), header, rows)
        _write_json(
            os.path.join(out, "scan.json"),
            _artifact(
                "scan", params, {"table": [list(r) for r in rows], "columns": header}
            ),
        )
    print(line)
    return EXIT_OK


def _chi_rows(run_dir, stride):
    import glob

    from .errors import MissingSnapshots
    from .learn import FilterBank, TrainTrace
    from .lifting import build_lift
    from .synth import chi_track

    with open(os.path.join(run_dir, "run.json"), "r", encoding="utf-8") as f:
        run_doc = json.load(f)
    run_params = run_doc["params"]
    _, signals, grid = _load_dataset(run_params["data"])
    _, pattern = _parse_filters(run_params["filters"], grid)
    lifts = [build_lift(x, pattern) for x in signals]
    d_ref = _bank_from_file(os.path.join(run_dir, "filters.tnsr"))
    trace = TrainTrace(float(run_params["alpha"]))
    snaps = sorted(glob.glob(os.path.join(run_dir, "snapshots", "iter_*.tnsr")))
    if not snaps:
        raise MissingSnapshots(f"no snapshots under {run_dir}")
    for path in snaps:
        iteration = int(os.path.basename(path)[5:-5])
        trace.record(iteration, 0.0, 0.0, FilterBank(load_grid_matrix(path)))
    return chi_track(trace, lifts, d_ref, stride=stride)


# --- parser and dispatch -----------------------------------------------------

def build_parser():
    parser = argparse.ArgumentParser(
        prog="caol",
        description=(
            "Convolutional analysis operator learning: train orthogonal "
            "filter banks, compute filter-error bounds, and validate them "
            "on synthetic ensembles."
        ),
    )
    from . import __version__

    parser.add_argument("--version", action="version", version=f"caol {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser(
        "train",
        help="alternating minimization on a dataset manifest",
        description=(
            "Writes filters.tnsr, snapshots/iter_*.tnsr, trace.csv "
            "(columns: iteration,objective,sparsity), and run.json into --out."
        ),
    )
    p.add_argument("--data", help="dataset manifest JSON")
    p.add_argument(
        "--filters", help="KxR for 1-D data, HxW or KxHxW for 2-D"
    )
    p.add_argument("--alpha", type=float, help="sparsity weight")
    p.add_argument("--iters", type=int, default=1000, help="max iterations")
    p.add_argument("--tol", type=float, default=0.0, help="relative stop tolerance")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--record-every", type=int, default=1, dest="record_every")
    p.add_argument("--out", required=False)
    p.add_argument("--config", help="replay a saved run.json")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser(
        "bounds",
        help="error-bound report for a run or synthetic spec",
        description=(
            "Emits bounds.json and bounds.csv (columns: key,value; identical "
            "numbers in both files)."
        ),
    )
    p.add_argument("--run", help="training output directory")
    p.add_argument("--synth", action="store_true", help="use a synthetic spec")
    p.add_argument(
        "--delta",
        action="append",
        dest="deltas",
        default=None,
        help="concentration parameter for the high-probability bound (repeatable)",
    )
    p.add_argument("--out")
    p.add_argument("--config")
    _add_synth_flags(p)
    p.set_defaults(func=cmd_bounds)

    p = sub.add_parser(
        "verify",
        help="Monte Carlo validation of the error bounds",
        description=(
            "Emits verify.json and trials.csv (columns: trial,error,bound,"
            "holds); exit 5 when a validated inequality fails."
        ),
    )
    mode = p.add_mutually_exclusive_group()
    mode.add_argument(
        "--thm1", dest="mode", action="store_const", const="thm1",
        help="deterministic bound, fresh instance per trial (default)",
    )
    mode.add_argument(
        "--cor1", dest="mode", action="store_const", const="cor1",
        help="expected bound, fixed signals, mismatch redrawn per trial",
    )
    mode.add_argument(
        "--thm2", dest="mode", action="store_const", const="thm2",
        help="high-probability bound, fresh signal/mismatch pairs per trial",
    )
    p.add_argument("--delta", type=float, help="concentration parameter for --thm2")
    p.add_argument(
        "--perturb-bound", type=float, default=0.0, dest="perturb_bound",
        help="test hook: additively shift every bound before checking",
    )
    p.add_argument("--out")
    p.add_argument("--config")
    _add_synth_flags(p)
    p.set_defaults(func=cmd_verify, mode="thm1")

    p = sub.add_parser(
        "scan",
        help="conditioning and correlation studies",
        description=(
            "rho mode emits rho_scan.csv (columns: L,rho_sq_mean,rho_sq_std), "
            "one row per grid value; chi mode emits chi_track.csv (columns: "
            "iteration,chi_bar), one row per recorded stride multiple."
        ),
    )
    p.add_argument("--mode", choices=("rho", "chi"), required=True)
    p.add_argument("--data", help="dataset manifest (rho mode)")
    p.add_argument("--run", help="training output directory (chi mode)")
    p.add_argument("--pattern", help="lift pattern: R for 1-D data, HxW for 2-D")
    p.add_argument("--l-grid", dest="l_grid", default="", help="comma list of L values")
    p.add_argument("--replicates", type=int, default=50)
    p.add_argument(
        "--available", type=int, help="synthetic signals to draw (rho mode)"
    )
    p.add_argument("--stride", type=int, default=50)
    p.add_argument("--out")
    p.add_argument("--config")
    _add_synth_flags(p)
    p.set_defaults(func=cmd_scan)

    return parser


def _blame(exc):
    tb = exc.__traceback__
    name = "caol"
    while tb is not None:
        mod = tb.tb_frame.f_globals.get("__name__", "")
        if mod.startswith("caol"):
            name = mod
        tb = tb.tb_next
    return name


def main(argv=None):
    from . import errors as E

    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except E.ValidationFailure as exc:
        print(f"caol {args.command}: validation error in {_blame(exc)}: {exc}",
              file=sys.stderr)
        return EXIT_VALIDATION
    except E.DeltaOutOfRange as exc:
        print(f"caol {args.command}: config error in {_blame(exc)}: {exc}",
              file=sys.stderr)
        return EXIT_CONFIG
    except (E.ConfigError, E.InvalidOffset, E.DimensionMismatch, ValueError) as exc:
        print(f"caol {args.command}: config error in {_blame(exc)}: {exc}",
              file=sys.stderr)
        return EXIT_CONFIG
    except (E.DataError, E.EmptyDataset, E.MissingSnapshots, OSError) as exc:
        print(f"caol {args.command}: data error in {_blame(exc)}: {exc}",
              file=sys.stderr)
        return EXIT_DATA
    except (E.RankDeficient, E.RankHypothesisUnsatisfiable, FloatingPointError) as exc:
        print(f"caol {args.command}: numerical error in {_blame(exc)}: {exc}",
              file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
