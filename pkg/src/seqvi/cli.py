"""Command-line entry point: ``seqvi run | sweep | grid``."""

import argparse
import dataclasses
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from seqvi.data import input_bounds, load_sequence
from seqvi.harness import RunConfig, build_spec, export_grid, load_checkpoint, run
from seqvi.trainers import STREAM_EVAL, subkey

log = logging.getLogger("seqvi")


def _configure(path, seed=None, out=None):
    cfg = RunConfig.load(path)
    if seed is not None:
        cfg = cfg.with_seed(seed)
    if out is not None:
        cfg = dataclasses.replace(cfg, out=str(out))
    return cfg


def _run_one(path, seed, out):
    cfg = _configure(path, seed, out)
    result = run(cfg)
    return str(path), result.error, result.faa if result.error is None else None


def cmd_run(args):
    name, error, faa = _run_one(args.config, args.seed, args.out)
    if error:
        print(f"{name}: diverged: {error}", file=sys.stderr)
        return 2
    print(f"{name}: final average accuracy {faa:.4f}")
    return 0


def cmd_sweep(args):
    paths = sorted(Path(args.config_dir).glob("*.y*ml"))
    if not paths:
        print(f"no configs in {args.config_dir}", file=sys.stderr)
        return 1
    # each config keeps its own out directory; --out becomes a parent
    outs = [None if args.out is None else Path(args.out) / p.stem for p in paths]
    jobs = [(p, args.seed, o) for p, o in zip(paths, outs)]
    if args.jobs > 1:
        with ProcessPoolExecutor(args.jobs) as pool:
            results = list(pool.map(_run_one, *zip(*jobs)))
    else:
        results = [_run_one(*j) for j in jobs]
    status = 0
    for name, error, faa in results:
        if error:
            print(f"{name}: diverged: {error}", file=sys.stderr)
            status = 2
        else:
            print(f"{name}: final average accuracy {faa:.4f}")
    return status


def cmd_grid(args):
    cfg = _configure(args.config, args.seed, None)
    seq = load_sequence(cfg.sequence, cfg.seed, cfg.iris_path, **cfg.sequence_params)
    spec, head = build_spec(seq, cfg.hidden)
    state = load_checkpoint(args.checkpoint, spec, head)
    out = Path(args.out) if args.out else Path(args.checkpoint).with_suffix(".grid.csv")
    key = subkey(cfg.seed, STREAM_EVAL, len(seq) + 1)
    names = list(seq.class_universe) if seq.setting == "class-incremental" else None
    resolution = args.resolution or cfg.eval.grid_resolution
    export_grid(state, input_bounds(seq), resolution, out, cfg.eval.n_samples, key, names)
    print(out)
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="seqvi", description="Sequential variational continual learning experiments")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="train one configured method through its sequence")
    r.add_argument("config")
    r.set_defaults(func=cmd_run)

    s = sub.add_parser("sweep", help="run every config in a directory")
    s.add_argument("config_dir")
    s.add_argument("--jobs", type=int, default=1)
    s.set_defaults(func=cmd_sweep)

    g = sub.add_parser("grid", help="export a prediction-probability grid from a checkpoint")
    g.add_argument("checkpoint")
    g.add_argument("config")
    g.add_argument("--resolution", type=int, default=None)
    g.set_defaults(func=cmd_grid)

    for sp in (r, s, g):
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--out", default=None)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
