"""Command line driver: gen, corrupt, train, denoise, upsample, eval.

Exit codes: 0 success, 1 usage error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys

from .degradation import NOISE_ALIASES, NoiseSpec, apply_noise
from .errors import InvalidArgumentError, InvalidInputError, NumericalFailureError, ParseError
from .geometry import PointCloud
from .io import load_checkpoint, read_ply, read_points, save_checkpoint, write_ply, write_points
from .metrics import evaluate, format_report
from .resample import REGULARIZERS, ResampleConfig, ResampleStats, denoise, upsample
from .shapes import DEFAULT_PARAMS, SAMPLERS, SHAPE_KINDS, AnalyticSurface, ShapeSpec, TriangleMesh, sample_shape
from .training import TrainConfig, train, write_loss_trace

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def parse_params(items):
    """``key=value`` pairs; ``a/b/c`` values become tuples (box half extents)."""
    out = {}
    for item in items or []:
        if "=" not in item:
            raise UsageError(f"parameter {item!r} is not key=value")
        key, val = item.split("=", 1)
        try:
            out[key] = tuple(float(v) for v in val.split("/")) if "/" in val else float(val)
        except ValueError:
            raise UsageError(f"parameter {key!r} has a non-numeric value {val!r}") from None
    return out


def parse_surface(text):
    """``kind`` or ``kind:key=value,key=value`` (defaults fill missing keys)."""
    kind, _, rest = text.partition(":")
    if kind not in SHAPE_KINDS:
        raise UsageError(f"unknown surface kind {kind!r}")
    params = {**DEFAULT_PARAMS[kind], **parse_params([p for p in rest.split(",") if p])}
    return AnalyticSurface(kind, params)


def _resample_flags(p):
    p.add_argument("--steps", type=int, default=50)
    p.add_argument("--alpha", type=float, default=0.15)
    p.add_argument("--decay", type=float, default=0.95)
    p.add_argument("--reg", choices=REGULARIZERS, default="none")
    p.add_argument("--lambda", dest="lam", type=float, default=0.1)
    p.add_argument("--graph-k", type=int, default=8)
    p.add_argument("--dump-every", type=int, default=0, help="also write every J-th iterate next to --out")


def build_parser():
    parser = _Parser(prog="pointresample", description="Gradient-field point cloud denoising and upsampling.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen", help="sample a synthetic shape")
    p.add_argument("--shape", choices=SHAPE_KINDS, required=True)
    p.add_argument("--points", type=int, default=2048)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--sampler", choices=SAMPLERS, default="uniform-area")
    p.add_argument("--param", action="append", metavar="KEY=VALUE", help="shape parameter, e.g. radius=0.5")
    p.add_argument("--mesh", help="also write a reference triangle mesh (PLY)")
    p.add_argument("--mesh-resolution", type=int, default=64)
    p.add_argument("--out", required=True)

    p = sub.add_parser("corrupt", help="add synthetic noise")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--noise", choices=sorted(NOISE_ALIASES), default="gaussian")
    p.add_argument("--level", type=float, required=True, help="noise scale relative to the bounding radius")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("train", help="train a gradient-field model")
    p.add_argument("--shapes-dir", required=True, help="directory of clean .xyz/.ply clouds")
    p.add_argument("--iters", type=int, default=20000)
    p.add_argument("--lr", type=float, default=5e-4)
    p.add_argument("--patch", type=int, default=512)
    p.add_argument("--noise-lo", type=float, default=0.005)
    p.add_argument("--noise-hi", type=float, default=0.03)
    p.add_argument("--task", choices=("denoise", "upsample"), default="denoise")
    p.add_argument("--ratio", type=int, default=4, help="upsampling ratio for --task upsample")
    p.add_argument("--precision", choices=("float32", "float64"), default="float64")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--loss-trace", help="write 'iteration loss' lines here")
    p.add_argument("--ckpt", required=True)

    p = sub.add_parser("denoise", help="denoise a cloud with a trained model")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--ckpt", required=True)
    _resample_flags(p)
    p.add_argument("--out", required=True)

    p = sub.add_parser("upsample", help="upsample a sparse cloud with a trained model")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--ratio", type=int, default=4)
    p.add_argument("--init-sigma", type=float, default=0.02)
    p.add_argument("--seed", type=int, default=0)
    _resample_flags(p)
    p.add_argument("--out", required=True)

    p = sub.add_parser("eval", help="CD / HD / P2M between two clouds")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    g = p.add_mutually_exclusive_group()
    g.add_argument("--mesh", help="reference mesh (ASCII PLY with faces)")
    g.add_argument("--surface", help="analytic reference, e.g. sphere or torus:radius=0.7,tube=0.3")
    p.add_argument("--no-normalize", action="store_true", help="compare in the input frame")
    p.add_argument("--machine", action="store_true", help="tab-separated output")
    return parser


def _resample_config(args):
    try:
        return ResampleConfig(alpha1=args.alpha, decay=args.decay, steps=args.steps, regularizer=args.reg,
                              lam=args.lam, graph_k=args.graph_k)
    except InvalidArgumentError as exc:
        raise UsageError(str(exc)) from None


def _dump(stats, out):
    root, ext = os.path.splitext(out)
    for t, pts in stats.trajectory:
        write_points(f"{root}.t{t:03d}{ext}", PointCloud(pts))


def cmd_gen(args):
    try:
        spec = ShapeSpec(args.shape, parse_params(args.param), count=args.points, sampler=args.sampler, seed=args.seed)
    except InvalidArgumentError as exc:
        raise UsageError(str(exc)) from None
    cloud, _, mesh = sample_shape(spec, with_mesh=bool(args.mesh), mesh_resolution=args.mesh_resolution)
    write_points(args.out, cloud)
    if args.mesh:
        write_ply(args.mesh, mesh)


def cmd_corrupt(args):
    cloud = read_points(args.inp)
    try:
        spec = NoiseSpec(args.noise, args.level, args.seed)
    except InvalidArgumentError as exc:
        raise UsageError(str(exc)) from None
    write_points(args.out, apply_noise(cloud, spec))


def cmd_train(args):
    if not os.path.isdir(args.shapes_dir):
        raise FileNotFoundError(f"no such directory: {args.shapes_dir}")
    names = sorted(f for f in os.listdir(args.shapes_dir) if f.lower().endswith((".xyz", ".ply")))
    if not names:
        raise InvalidInputError(f"{args.shapes_dir}: no .xyz or .ply files")
    clouds = [read_points(os.path.join(args.shapes_dir, f)) for f in names]
    try:
        cfg = TrainConfig(lr=args.lr, iterations=args.iters, patch_size=args.patch, noise_lo=args.noise_lo,
                          noise_hi=args.noise_hi, seed=args.seed, task=args.task, upsample_ratio=args.ratio,
                          dtype=args.precision, log_every=500 if args.verbose else 0)
    except InvalidArgumentError as exc:
        raise UsageError(str(exc)) from None
    result = train(clouds, cfg)
    save_checkpoint(args.ckpt, result.model)
    if args.loss_trace:
        write_loss_trace(args.loss_trace, result.losses)


def cmd_denoise(args):
    cfg = _resample_config(args)
    cloud = read_points(args.inp)
    model = load_checkpoint(args.ckpt)
    stats = ResampleStats()
    out = denoise(model, cloud, cfg, stats, dump_every=args.dump_every)
    write_points(args.out, out)
    _dump(stats, args.out)


def cmd_upsample(args):
    cfg = _resample_config(args)
    cloud = read_points(args.inp)
    model = load_checkpoint(args.ckpt)
    stats = ResampleStats()
    try:
        out = upsample(model, cloud, args.ratio, args.init_sigma, args.seed, cfg, stats, dump_every=args.dump_every)
    except InvalidArgumentError as exc:
        raise UsageError(str(exc)) from None
    write_points(args.out, out)
    _dump(stats, args.out)


def cmd_eval(args):
    pred, gt = read_points(args.pred), read_points(args.gt)
    mesh = surface = None
    if args.mesh:
        mesh = read_ply(args.mesh)
        if not isinstance(mesh, TriangleMesh):
            raise InvalidInputError(f"{args.mesh}: no face element")
    elif args.surface:
        surface = parse_surface(args.surface)
    metrics = evaluate(pred, gt, mesh=mesh, surface=surface, normalize=not args.no_normalize)
    print(format_report(metrics, machine=args.machine))


COMMANDS = {
    "gen": cmd_gen,
    "corrupt": cmd_corrupt,
    "train": cmd_train,
    "denoise": cmd_denoise,
    "upsample": cmd_upsample,
    "eval": cmd_eval,
}


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
        COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, ParseError, InvalidInputError, InvalidArgumentError, NumericalFailureError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except SystemExit as exc:
        # --help and friends
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
