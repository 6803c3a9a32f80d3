"""Command-line entry point: ``formflow <subcommand> --config run.json --out dir``."""

from __future__ import annotations

import argparse
import datetime as dt
import logging
import platform
import sys
import time
from pathlib import Path

import numpy as np
import scipy

from . import acceptance
from .config import ConfigError, load_config
from .pipelines import PIPELINES
from .report import write_json

SUBCOMMANDS = list(PIPELINES) + ["all"]


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="formflow", description="Spectral and stochastic checks of "
                                "flows acting on differential forms.")
    p.add_argument("subcommand", choices=SUBCOMMANDS)
    p.add_argument("--config", type=Path, help="run configuration (JSON)")
    p.add_argument("--out", type=Path, default=Path("formflow-out"), help="output directory")
    p.add_argument("--threads", type=int, default=None, help="worker threads for independent jobs")
    p.add_argument("--seed", type=int, default=None, help="base seed (u64), overrides the config")
    p.add_argument("--tol-zero", type=float, default=None, dest="tol_zero",
                   help="relative zero-eigenvalue tolerance, overrides the config")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def _metadata(args, seconds: float) -> dict:
    return {
        "timestamp": dt.datetime.now(dt.timezone.utc).isoformat(timespec="seconds"),
        "runtime_seconds": round(seconds, 3),
        "argv": sys.argv[1:],
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "platform": platform.platform(),
        "threads": args.threads,
    }


def _run_all(args) -> dict:
    kw = {"threads": args.threads}
    if args.seed is not None:
        kw["seed"] = args.seed
    results = []
    for n in range(1, len(acceptance.CRITERIA) + 1):
        res = acceptance.run_criterion(n, **kw)
        print(res.line(), flush=True)
        results.append(res)
    failures = [{"invariant": f"criterion_{r.number}", "title": r.title, "measured": r.measured}
                for r in results if not r.passed]
    return {"subcommand": "all",
            "results": {"criteria": [r.to_dict() for r in results]},
            "failures": failures}


def run(args) -> int:
    out: Path = args.out
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    if args.subcommand == "all" and args.config is None:
        report = _run_all(args)
    else:
        if args.config is None:
            print("error: --config is required for this subcommand", file=sys.stderr)
            return 2
        try:
            cfg = load_config(args.config, seed=args.seed, tol_zero=args.tol_zero)
        except ConfigError as exc:
            write_json(out / "report.json", {
                "subcommand": args.subcommand, "pass": False,
                "failures": [{"invariant": "config_schema", "pointer": exc.pointer, "detail": exc.detail}],
            })
            print(f"config error at {exc.pointer}: {exc.detail}", file=sys.stderr)
            return 2
        if args.subcommand == "all":
            report = _run_all(args)
            jobs = {}
            failures = list(report["failures"])
            wanted = {"cpd-check" if j == "cpd" else j for j in cfg.jobs} | {"spectrum"}
            for name, fn in PIPELINES.items():
                if name not in wanted:
                    continue
                sub = out / name
                sub.mkdir(exist_ok=True)
                o = fn(cfg, sub, args.threads)
                jobs[name] = o.results
                failures += [{**f, "job": name} for f in o.failures]
            report["results"]["jobs"] = jobs
            report["failures"] = failures
            report["config"] = cfg.raw
        else:
            o = PIPELINES[args.subcommand](cfg, out, args.threads)
            report = {"subcommand": args.subcommand, "config": cfg.raw, "seed": cfg.seed,
                      "results": o.results, "failures": o.failures}
    report["pass"] = not report["failures"]
    write_json(out / "report.json", report)
    write_json(out / "metadata.json", _metadata(args, time.perf_counter() - t0))
    for f in report["failures"]:
        print(f"FAIL {f.get('invariant')}: {f.get('measured', f.get('detail', ''))}", file=sys.stderr)
    return 0 if report["pass"] else 1


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return run(args)


if __name__ == "__main__":
    sys.exit(main())
