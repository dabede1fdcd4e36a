"""Command line entry point.

Exit codes: 0 success, 2 configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .config import ConfigError, RunConfig
from .detect import DetectorError, load_image
from .lma import LatticeError, RankDeficientError
from .multislice import PropagationError
from .optics import OpticsError
from .scheduler import ScheduleError

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3

log = logging.getLogger("lmastem")


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="YAML run configuration")
    common.add_argument("--workers", type=int, default=os.cpu_count() or 1,
                        help="worker threads (default: available CPUs)")
    common.add_argument("--out", type=Path, help="output directory (overrides output.dir)")
    common.add_argument("--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="lmastem", description="STEM image simulation")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("simulate", parents=[common], help="simulate STEM images")
    c = sub.add_parser("compare", parents=[common], help="relative errors between two runs")
    c.add_argument("run", type=Path)
    c.add_argument("reference", type=Path)
    sub.add_parser("probe-approx", parents=[common], help="probe fit error versus L and f")
    sub.add_parser("partition-report", parents=[common], help="partition maps and costs")
    sub.add_parser("recompute-demo", parents=[common], help="local-change recompute check")
    x = sub.add_parser("crossover", parents=[common], help="real-space versus Fourier crossover f")
    x.add_argument("--nx", type=int, default=2048)
    x.add_argument("--ny", type=int, default=2048)
    x.add_argument("--kernel", type=int, nargs=2, default=(25, 25), metavar=("K1", "K2"))
    return p


def _load(args) -> RunConfig:
    if args.config is None:
        raise ConfigError("--config is required for this command")
    return RunConfig.load(args.config)


def _outdir(args, cfg: RunConfig) -> Path:
    if args.out is not None:
        return args.out
    return cfg.base_dir / cfg["output"]["dir"]


def _read_run(path: Path) -> dict:
    files = sorted(path.glob("*.lmaimg"))
    if not files:
        raise ConfigError(f"no .lmaimg images in {path}")
    return {f.stem: load_image(f) for f in files}


def _dispatch(args) -> int:
    from . import run

    if args.command == "crossover":
        rep = run.crossover_report(args.nx, args.ny, *args.kernel)
        print(f"XY={args.nx}x{args.ny} K1K2={args.kernel[0]}x{args.kernel[1]} "
              f"bound={rep['bound']:.4f} realspace cheaper iff f >= {rep['min_f']}")
        return EXIT_OK
    if args.command == "compare":
        rows = run.compare_images(_read_run(args.run), _read_run(args.reference))
        print("detector  euclid_error  sup_error")
        for r in rows:
            print(f"{r['detector']:<8}  {r['euclid_error']:.6e}  {r['sup_error']:.6e}")
        return EXIT_OK

    cfg = _load(args)
    out = _outdir(args, cfg)
    workers = max(1, args.workers)
    if args.command == "simulate":
        res = run.simulate(cfg, workers)
        run.write_simulation(cfg, res, out)
        for line in run.summary_lines(res):
            print(line)
    elif args.command == "probe-approx":
        rows = run.probe_approx(cfg, out)
        print("f,L,euclid_error,sup_error")
        for r in rows:
            print(f"{r['f']},{r['L']},{r['euclid_error']:.6e},{r['sup_error']:.6e}")
    elif args.command == "partition-report":
        print(run.partition_report(cfg, out), end="")
    elif args.command == "recompute-demo":
        rep = run.recompute_demo(cfg, out, workers)
        print(json.dumps(rep, indent=2, sort_keys=True))
    return EXIT_OK


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return _dispatch(args)
    except (ConfigError, LatticeError, ScheduleError, DetectorError, OpticsError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (PropagationError, RankDeficientError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
