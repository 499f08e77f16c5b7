"""Command line entry point: ``fracocp {disc-qu,disc-graded,lshape,plot}``."""
import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from .control import OptimizationError
from .experiments import default_config, emit_plots, load_config, read_records, run
from .solver import SolverError

log = logging.getLogger("fracocp")

_COMMANDS = {"disc-qu": "disc_quasiuniform", "disc-graded": "disc_graded", "lshape": "lshape"}


def build_parser():
    p = argparse.ArgumentParser(prog="fracocp", description="Fractional optimal control convergence studies.")
    sub = p.add_subparsers(dest="command", required=True)
    for name, exp in list(_COMMANDS.items()) + [("plot", None)]:
        sp = sub.add_parser(name, help=f"run the {exp} study" if exp else "plot CSV records from a directory")
        sp.add_argument("--config", type=Path, help="JSON config (defaults are used for missing keys)")
        sp.add_argument("--out", type=Path, help="output directory (overrides the config)")
        sp.add_argument("--threads", type=int, default=1, help="BLAS threads for the dense solves")
        sp.add_argument("--seed", type=int, default=None, help="seed for randomized components")
        sp.add_argument("-v", "--verbose", action="store_true")
    return p


def _set_threads(k):
    # pair kernels are serial; the thread count caps the BLAS pool used by the dense factorizations
    from threadpoolctl import threadpool_limits

    if k < 1:
        raise ValueError("--threads must be positive")
    return threadpool_limits(k)


def _run_study(args):
    exp = _COMMANDS[args.command]
    cfg = load_config(args.config, exp) if args.config else default_config(exp)
    if args.out is not None:
        cfg.output_dir = str(args.out)
    if args.seed is not None:
        cfg.seed = args.seed
    np.random.seed(cfg.seed)
    records = run(cfg)
    emit_plots({r.label: r for r in records.values()}, cfg.output_dir, prefix=cfg.experiment)
    for s, rec in records.items():
        if len(rec) >= 2:
            print(f"s={s:.2f}  energy rate {rec.fitted('e_energy'):.3f}  control rate {rec.fitted('e_l2_control'):.3f}"
                  f"  ({'slope vs N' if rec.basis == 'N' else 'EOC vs h'})")
    print(f"results written to {cfg.output_dir}")


def _plot(args):
    directory = args.out
    if directory is None and args.config is not None:
        directory = Path(load_config(args.config).output_dir)
    if directory is None:
        raise ValueError("plot needs --out DIR or --config PATH")
    records = read_records(directory)
    files = emit_plots(records, directory)
    for f in files:
        print(f)


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        with _set_threads(args.threads):
            if args.command == "plot":
                _plot(args)
            else:
                _run_study(args)
    except (OptimizationError, SolverError, FloatingPointError, MemoryError) as exc:
        print(f"error: solve failed: {exc}", file=sys.stderr)
        return 2
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
