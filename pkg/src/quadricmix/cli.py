"""Command-line interface: generate, fit, eval, compare, export, ablate-eps.

Errors print a single ``error: <kind>: <message>`` line to stderr and exit
nonzero (2 for usage errors, 1 otherwise).
"""

from __future__ import annotations

import argparse
import logging
import os
import sys

import numpy as np

from . import io as qio
from .mesh import export_mesh
from .metrics import evaluate
from .optimizer import FitConfig, fit, predict_grid
from .primitives import DEFAULT_EPS_BOUNDS, ConfigurationError
from .rasterizer import DEFAULT_TAU, OccupancyGrid, discretize, rasterize
from .scenegen import CLASS_NAMES, generate_scene, load_manifest, preset_grid, preset_scenes, \
    save_manifest
from .sweeps import ablate_eps, compare, format_table

log = logging.getLogger("quadricmix")

KIND_ALIASES = {"quadric": "superquadric", "superquadric": "superquadric", "sq": "superquadric",
                "gaussian": "gaussian"}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _int_list(text):
    try:
        vals = [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")
    if not vals or min(vals) < 1:
        raise argparse.ArgumentTypeError("counts must be positive integers")
    return vals


def _float_list(text):
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _kind_list(text):
    kinds = []
    for t in text.split(","):
        t = t.strip()
        if t not in KIND_ALIASES:
            raise argparse.ArgumentTypeError(f"unknown primitive kind {t!r}")
        kinds.append(KIND_ALIASES[t])
    return kinds


def _ranges(text):
    out = []
    for part in text.split(","):
        try:
            lo, hi = (float(v) for v in part.split(":"))
        except ValueError:
            raise argparse.ArgumentTypeError(f"expected lo:hi ranges, got {part!r}")
        out.append((lo, hi))
    return out


def _kind(text):
    if text not in KIND_ALIASES:
        raise argparse.ArgumentTypeError(f"unknown primitive kind {text!r}")
    return KIND_ALIASES[text]


def load_scene(ref, seed=0) -> OccupancyGrid:
    """A grid file, a scene manifest (.json) or a preset name."""
    if os.path.exists(ref):
        if ref.endswith(".json"):
            shapes, spec, class_count = load_manifest(ref)
            return generate_scene(shapes, spec, class_count)
        return qio.load_grid(ref)
    try:
        return preset_grid(ref, seed)
    except ValueError:
        raise FileNotFoundError(f"no such scene file or preset: {ref}") from None


def _fit_options(p, iters=2000, batch=16384):
    p.add_argument("--iters", type=int, default=iters)
    p.add_argument("--eps-lo", type=float, default=DEFAULT_EPS_BOUNDS[0])
    p.add_argument("--eps-hi", type=float, default=DEFAULT_EPS_BOUNDS[1])
    p.add_argument("--prune-split", type=int, default=None,
                   help="primitives pruned and split once (default: count/2; 0 disables)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--lr", type=float, default=0.05)
    p.add_argument("--batch", type=int, default=batch, help="voxels sampled per step")
    p.add_argument("--tau", type=float, default=DEFAULT_TAU)
    p.add_argument("--literal-z", action="store_true",
                   help="use the second exponent in the z term of the implicit function")


def _config(args, kind, count, **kw):
    opts = dict(primitive_count=count, primitive_kind=kind, iterations=args.iters,
                learning_rate=args.lr, eps_bounds=(args.eps_lo, args.eps_hi),
                prune_split_count=args.prune_split, rng_seed=args.seed,
                batch_points=args.batch, tau=args.tau, literal_z=args.literal_z)
    opts.update(kw)
    return FitConfig(**opts)


def build_parser():
    parser = _Parser(prog="quadricmix", description="Fit primitive mixtures to occupancy grids.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("generate", help="write a synthetic scene grid")
    p.add_argument("--preset", default="street")
    p.add_argument("--manifest", help="scene manifest (JSON) used instead of --preset")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--save-manifest", help="also write the shape list as a manifest")

    p = sub.add_parser("fit", help="fit primitives to a scene")
    p.add_argument("--scene", required=True)
    p.add_argument("--kind", type=_kind, default="superquadric")
    p.add_argument("--count", type=int, default=1600)
    _fit_options(p)
    p.add_argument("--out", required=True)
    p.add_argument("--checkpoint-every", type=int, default=0)

    p = sub.add_parser("eval", help="score a prediction against ground truth")
    p.add_argument("--pred", required=True, help="grid file or primitive file")
    p.add_argument("--gt", required=True)
    p.add_argument("--tau", type=_float_list, default=[DEFAULT_TAU],
                   help="occupancy threshold(s) for primitive predictions")

    p = sub.add_parser("compare", help="paired kind x count sweep")
    p.add_argument("--scene", required=True)
    p.add_argument("--counts", type=_int_list, default=[200, 400, 800, 1600])
    p.add_argument("--kinds", type=_kind_list, default=["superquadric", "gaussian"])
    _fit_options(p, iters=500, batch=8192)
    p.add_argument("--delimiter", default=",")

    p = sub.add_parser("export", help="write primitive surfaces as an OBJ mesh")
    p.add_argument("--primitives", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--resolution", type=int, default=24)

    p = sub.add_parser("ablate-eps", help="superquadric fits over several eps ranges")
    p.add_argument("--scene", required=True)
    p.add_argument("--ranges", type=_ranges, default=_ranges("0.01:2,0.01:5,0.1:2,0.1:5"))
    p.add_argument("--count", type=int, default=200)
    _fit_options(p, iters=500, batch=8192)
    p.add_argument("--delimiter", default=",")
    return parser


def cmd_generate(args):
    if args.manifest:
        shapes, spec, class_count = load_manifest(args.manifest)
    else:
        shapes, spec = preset_scenes(args.preset, args.seed)
        class_count = len(CLASS_NAMES) - 1
    grid = generate_scene(shapes, spec, class_count)
    qio.save_grid(args.out, grid)
    if args.save_manifest:
        save_manifest(args.save_manifest, shapes, spec, class_count)
    print(f"dims={','.join(map(str, spec.dims))} occupied={int(grid.occupied.sum())} "
          f"shapes={len(shapes)} out={args.out}")


def cmd_fit(args):
    scene = load_scene(args.scene, args.seed)
    cfg = _config(args, args.kind, args.count, checkpoint_every=args.checkpoint_every,
                  checkpoint_path=args.out if args.checkpoint_every else None)
    lo, hi = cfg.eps_bounds
    print(f"kind={cfg.primitive_kind} count={cfg.primitive_count} iters={cfg.iterations} "
          f"eps_bounds=({lo:g}, {hi:g}) seed={cfg.rng_seed}")
    result = fit(scene, cfg)
    qio.save_primitives(args.out, result.primitives, cfg)
    m = evaluate(predict_grid(result.primitives, scene.spec, cfg), scene)
    print(f"iou={m['iou']:.6f} miou={m['miou']:.6f} seconds={result.seconds:.1f} out={args.out}")


def _per_class_lines(per_class):
    for k, v in enumerate(per_class):
        name = CLASS_NAMES[k + 1] if len(per_class) == len(CLASS_NAMES) - 1 else f"class_{k + 1}"
        yield f"iou_{name}={'nan' if np.isnan(v) else f'{v:.6f}'}"


def cmd_eval(args):
    gt = qio.load_grid(args.gt)
    if args.pred.endswith(".json"):
        pset = qio.load_primitives(args.pred)
        prob = rasterize(pset, gt.spec)
        preds = [(tau, discretize(prob, tau)) for tau in args.tau]
    else:
        preds = [(None, qio.load_grid(args.pred))]
    for tau, pred in preds:
        m = evaluate(pred, gt)
        if tau is not None:
            print(f"tau={tau:g}")
        print(f"iou={m['iou']:.6f}")
        print(f"miou={m['miou']:.6f}")
        for line in _per_class_lines(m["per_class_iou"]):
            print(line)


def cmd_compare(args):
    scene = load_scene(args.scene, args.seed)
    rows = compare(scene, args.counts, args.kinds, _config(args, "superquadric", args.counts[0]))
    sys.stdout.write(format_table(rows, ["kind", "count", "iou", "miou", "seconds"],
                                  args.delimiter))


def cmd_export(args):
    pset = qio.load_primitives(args.primitives)
    n = export_mesh(pset, args.out, args.resolution)
    print(f"primitives={len(pset)} vertices={n} out={args.out}")


def cmd_ablate(args):
    scene = load_scene(args.scene, args.seed)
    rows = ablate_eps(scene, args.ranges, _config(args, "superquadric", args.count))
    sys.stdout.write(format_table(rows, ["eps_lo", "eps_hi", "iou", "miou", "seconds"],
                                  args.delimiter))


COMMANDS = {"generate": cmd_generate, "fit": cmd_fit, "eval": cmd_eval, "compare": cmd_compare,
            "export": cmd_export, "ablate-eps": cmd_ablate}


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
    except UsageError as e:
        print(f"error: usage: {e}", file=sys.stderr)
        return 2
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        COMMANDS[args.command](args)
    except FileNotFoundError as e:
        print(f"error: usage: file not found: {e.filename or e}", file=sys.stderr)
        return 2
    except (ConfigurationError, qio.FormatError, ValueError, OSError) as e:
        print(f"error: {type(e).__name__}: {' '.join(str(e).split())}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
