"""Command line entry point ``lavreg``.

``lavreg run CONFIG`` runs one experiment and writes ``report.json``, one CSV
per curve and ``run_meta.json`` (timestamp, duration) into the output
directory. ``lavreg list`` prints the experiment registry.

Exit codes: 0 when every invariant holds, 2 when an invariant fails or a
gamma window is unusable, 1 on configuration or runtime errors.
"""

import argparse
import json
import logging
import math
import sys
import time
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from .config import ConfigError, load_config
from .errors import LavregError, WindowError
from .experiments import REGISTRY, list_text, run_experiment

logger = logging.getLogger("lavreg")

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_INVARIANT = 2


def to_jsonable(obj):
    """Plain JSON types; non-finite floats become the strings ``inf``/``-inf``/``nan``."""
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else repr(x)
    if obj is None or isinstance(obj, str):
        return obj
    return repr(obj)


def dump_json(obj, path):
    text = json.dumps(to_jsonable(obj), sort_keys=True, indent=2, allow_nan=False)
    Path(path).write_text(text + "\n", encoding="utf-8")


def write_curve(path, xs, ys):
    data = np.column_stack([np.asarray(xs, float), np.asarray(ys, float)])
    np.savetxt(path, data, delimiter=",", header="x,y", comments="", fmt="%.17g")


def _headline(summary):
    keys = [k for k, v in sorted(summary.items())
            if isinstance(v, float) and k.endswith(("slope", "floor", "max"))]
    return "".join(f"{k}={summary[k]:.4g} " for k in keys[:4])


def _run(args):
    t0 = time.monotonic()
    stamp = datetime.now(timezone.utc).isoformat()
    cfg = load_config(args.config, registry=REGISTRY)
    out = Path(args.out or cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    report = {"experiment": cfg.experiment, "verifies": REGISTRY[cfg.experiment].verifies,
              "config": {k: v for k, v in cfg.as_dict().items() if k != "output_dir"}}
    try:
        _, res = run_experiment(cfg, jobs=args.jobs)
    except WindowError as exc:
        report.update(passed=False, error={"type": "WindowError", "message": str(exc),
                                           "trace": [list(t) for t in exc.trace]})
        code = EXIT_INVARIANT
        line = f"{cfg.experiment}: FAIL (window error: {exc})"
    else:
        curves = {}
        for name, (xs, ys) in sorted(res.curves.items()):
            fname = f"{name}.csv"
            write_curve(out / fname, xs, ys)
            curves[name] = fname
        report.update(
            passed=res.passed,
            summary=res.summary,
            invariants=[{"name": n, "passed": p, "detail": d} for n, p, d in res.invariants],
            curves=curves,
            details=res.details,
        )
        code = EXIT_OK if res.passed else EXIT_INVARIANT
        failed = [n for n, p, _ in res.invariants if not p]
        verdict = "PASS" if res.passed else "FAIL (" + ", ".join(failed) + ")"
        line = (f"{cfg.experiment}: {_headline(res.summary)}{verdict}, "
                f"{sum(p for _, p, _ in res.invariants)}/{len(res.invariants)} invariants")
    dump_json(report, out / "report.json")
    dump_json({"timestamp": stamp, "duration_s": time.monotonic() - t0,
               "jobs": args.jobs}, out / "run_meta.json")
    print(f"{line} -> {out}")
    return code


def build_parser():
    parser = argparse.ArgumentParser(prog="lavreg",
                                     description="Lavrentiev regularization experiments")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run one experiment from a JSON config")
    run.add_argument("config", help="path to the JSON config")
    run.add_argument("--jobs", type=int, default=1, help="worker threads (default 1)")
    run.add_argument("--out", help="output directory (overrides output_dir)")
    sub.add_parser("list", help="list the available experiments")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "list":
        sys.stdout.write(list_text())
        return EXIT_OK
    if args.jobs < 1:
        print("error: --jobs: must be >= 1", file=sys.stderr)
        return EXIT_ERROR
    try:
        return _run(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except (LavregError, ValueError, np.linalg.LinAlgError, OSError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
