"""Command-line front end: ``train``, ``sample``, ``simulate`` and ``report``.

Exit codes: 0 success, 1 usage/input error, 2 numeric or certification
failure, 3 training stopped before converging (model still written).
"""

from __future__ import annotations

import argparse
import csv
import math
import sys
import warnings
from pathlib import Path

import numpy as np

from . import __version__
from .config import REFERENCE, load_config
from .errors import (CertificationError, ClusterError, ConfigError, DivergenceError, DomainError,
                     SynthesisError, TopologyError, TraceFormatError, UnderflowError)
from .netsim import load_trace, save_trace
from .presets import reference_model
from .runtime import run_simulation, threshold_reference, time_to_threshold
from .schmm import (DEFAULT_MASK, em_converged, em_fit, init_model, load_model, model_drift,
                    sample_trace, save_model)

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC, EXIT_NONCONVERGED = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _err(msg: str) -> None:
    print(f"error: {msg}", file=sys.stderr)


# --------------------------------------------------------------------------
# train / sample
# --------------------------------------------------------------------------

def cmd_train(args) -> int:
    try:
        trace = load_trace(args.trace, args.mask)
    except (OSError, TraceFormatError, DomainError) as exc:
        _err(str(exc))
        return EXIT_USAGE
    if len(trace) == 0:
        _err(f"{args.trace}: trace is empty")
        return EXIT_USAGE
    try:
        model0 = init_model(args.states, args.mixtures, trace, args.mask, rng_seed=args.seed)
    except (ClusterError, DomainError) as exc:
        _err(str(exc))
        return EXIT_USAGE
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            model, history = em_fit(model0, trace, args.max_iters, args.tol)
    except UnderflowError as exc:
        _err(str(exc))
        return EXIT_NUMERIC
    for it, ll in enumerate(history):
        print(f"iter {it:3d}  loglik {ll:.10f}")
    save_model(model, args.out)
    print(f"model written to {args.out}")
    if not em_converged(history, args.tol):
        print(f"warning: not converged within {args.max_iters} iterations (tol {args.tol:g})",
              file=sys.stderr)
        return EXIT_NONCONVERGED
    return EXIT_OK


def cmd_sample(args) -> int:
    try:
        model = reference_model() if args.model == REFERENCE else load_model(args.model)
    except (OSError, ValueError, KeyError) as exc:
        _err(f"cannot load model {args.model}: {exc}")
        return EXIT_USAGE
    trace = sample_trace(model, args.length, args.seed)
    save_trace(trace, args.out, header=f"{args.length} delays in ms sampled with seed {args.seed}")
    print(f"{args.length} samples ({trace.dropout_rate:.4f} dropout rate) written to {args.out}")
    return EXIT_OK


# --------------------------------------------------------------------------
# simulate
# --------------------------------------------------------------------------

def cmd_simulate(args) -> int:
    try:
        cfg = load_config(args.config)
        overrides = {}
        if args.steps is not None:
            overrides["simulation__steps"] = args.steps
        if args.seed is not None:
            overrides["simulation__seed"] = args.seed
        if args.out is not None:
            overrides["simulation__output"] = str(args.out)
        if overrides:
            cfg = cfg.with_overrides(**overrides)
    except ConfigError as exc:
        _err(f"invalid configuration: {exc}")
        return EXIT_USAGE
    try:
        result = run_simulation(cfg)
    except (TopologyError, TraceFormatError, OSError, ValueError) as exc:
        if isinstance(exc, DomainError) or not isinstance(exc, (TopologyError, TraceFormatError, OSError)):
            _err(f"invalid input: {exc}")
        else:
            _err(str(exc))
        return EXIT_USAGE
    except (SynthesisError, CertificationError, DivergenceError) as exc:
        _err(str(exc))
        return EXIT_NUMERIC
    out = result.write(cfg.output_dir)
    cfg.with_absolute_inputs().save(out / "config.cfg")
    k = time_to_threshold(result.e_norm, result.delta_max)
    ttt = "not reached" if k is None else f"{k * cfg.ts / 1000.0:.2f} s"
    print(f"{result.steps} steps, {result.states.shape[1]} agents -> {out}")
    print(f"final max error norm {result.e_norm[-1].max():.6g}; 1% threshold: {ttt}")
    return EXIT_OK


# --------------------------------------------------------------------------
# report
# --------------------------------------------------------------------------

def _read_csv(path: Path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def summarize(run_dir, ratio: float = 0.01) -> dict:
    run = Path(run_dir)
    needed = ["errors.csv", "delta_max.csv", "delays.csv"]
    missing = [n for n in needed if not (run / n).is_file()]
    if missing:
        raise FileNotFoundError(f"{run}: not a simulation output directory (missing {', '.join(missing)})")
    err = _read_csv(run / "errors.csv")
    dm = _read_csv(run / "delta_max.csv")
    if not err or not dm:
        raise FileNotFoundError(f"{run}: simulation output is empty")
    steps = max(int(r["step"]) for r in err) + 1
    agents = max(int(r["agent"]) for r in err) + 1
    e = np.zeros((steps, agents))
    for r in err:
        e[int(r["step"]), int(r["agent"])] = float(r["e_norm"])
    dmax = np.array([float(r["delta_max"]) for r in dm])
    times = [float(r["time_s"]) for r in dm]
    ts_s = times[1] - times[0] if len(times) > 1 else float("nan")
    k = time_to_threshold(e, dmax, ratio)

    delays = _read_csv(run / "delays.csv")
    dropped = np.array([int(r["dropped"]) for r in delays], dtype=bool)
    pred = np.array([float(r["predicted"]) for r in delays])
    real = np.array([float(r["realized"]) for r in delays])
    mask = float(real[dropped][0]) if dropped.any() else DEFAULT_MASK
    usable = ~dropped & (pred != mask)
    summary = {
        "steps": steps,
        "agents": agents,
        "final_max_error_norm": float(e[-1].max()),
        "initial_max_error_norm": float(e[0].max()),
        "final_delta_max": float(dmax[-1]),
        "delta_max_reference": threshold_reference(e, dmax),
        "threshold_ratio": ratio,
        "time_to_threshold_s": float("nan") if k is None else k * ts_s,
        "packets_sent": int(len(delays)),
        "dropout_rate": float(dropped.mean()) if len(delays) else float("nan"),
        "mean_abs_delay_error_ms": float(np.abs(pred[usable] - real[usable]).mean()) if usable.any() else float("nan"),
    }
    models = run / "models"
    if models.is_dir():
        snaps: dict = {}
        for f in models.glob("agent*_neighbor*_step*.model"):
            a, rest = f.stem[len("agent"):].split("_neighbor")
            nb, step = rest.split("_step")
            snaps.setdefault((int(a), int(nb)), []).append((int(step), f))
        drifts = []
        for files in snaps.values():
            files.sort()
            if len(files) > 1:
                drifts.append(model_drift(load_model(files[0][1]), load_model(files[-1][1])))
        if drifts:
            summary["max_model_drift"] = max(drifts)
    return summary


def cmd_report(args) -> int:
    try:
        summary = summarize(args.indir, args.threshold)
    except (FileNotFoundError, ValueError, KeyError) as exc:
        _err(str(exc))
        return EXIT_USAGE
    width = max(len(k) for k in summary)
    for key, val in summary.items():
        text = f"{val:.6g}" if isinstance(val, float) and not math.isnan(val) else (
            "not reached" if key == "time_to_threshold_s" else str(val))
        print(f"{key:<{width}}  {text}")
    gains = Path(args.indir) / "gains.txt"
    if gains.is_file() and args.gains:
        print()
        print(gains.read_text(encoding="utf-8"), end="")
    with open(Path(args.indir) / "summary.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["metric", "value"])
        for key, val in summary.items():
            w.writerow([key, repr(val) if isinstance(val, float) else val])
    return EXIT_OK


# --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="schmm-lmpc", description="Delay-model training and multi-agent consensus simulation.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    t = sub.add_parser("train", help="fit a delay model to a trace with EM")
    t.add_argument("--trace", required=True, type=Path, help="delay trace file (ms, one per line)")
    t.add_argument("--states", type=int, default=3, help="hidden states (default 3)")
    t.add_argument("--mixtures", type=int, default=4, help="codebook size incl. dropout (default 4)")
    t.add_argument("--max-iters", type=int, default=50, help="EM iterations (default 50)")
    t.add_argument("--tol", type=float, default=1e-8, help="log-likelihood tolerance (default 1e-8)")
    t.add_argument("--mask", type=float, default=DEFAULT_MASK, help="dropout marker (default 100000)")
    t.add_argument("--seed", type=int, default=0, help="k-means seed (default 0)")
    t.add_argument("--out", required=True, type=Path, help="model file to write")
    t.set_defaults(func=cmd_train)

    s = sub.add_parser("sample", help="draw a delay trace from a model")
    s.add_argument("--model", default=REFERENCE, help="model file or 'reference' (default)")
    s.add_argument("--length", type=int, default=10000)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True, type=Path)
    s.set_defaults(func=cmd_sample)

    m = sub.add_parser("simulate", help="run a consensus simulation from a config file")
    m.add_argument("--config", required=True, type=Path)
    m.add_argument("--out", type=Path, help="override simulation.output")
    m.add_argument("--steps", type=int, help="override simulation.steps")
    m.add_argument("--seed", type=int, help="override simulation.seed")
    m.set_defaults(func=cmd_simulate)

    r = sub.add_parser("report", help="summarize a simulation output directory")
    r.add_argument("--in", dest="indir", required=True, type=Path)
    r.add_argument("--threshold", type=float, default=0.01, help="consensus ratio (default 0.01)")
    r.add_argument("--gains", action="store_true", help="also print the gain certificates")
    r.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if getattr(args, "states", 1) < 1 or getattr(args, "max_iters", 1) < 1 or getattr(args, "length", 1) < 1:
        _err("counts must be positive")
        return EXIT_USAGE
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
