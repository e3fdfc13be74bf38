"""Command-line interface: ``nfps fixtures|render|reconstruct|evaluate``.

Exit codes are 0 on success, 2 for usage errors, 3 for data errors and 4
when the integrator fails to converge.
"""

from __future__ import annotations

import argparse
import glob
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import io
from .errors import ConvergenceError, NfpsError
from .estimator import EstimatorConfig
from .geometry import depth_to_mesh
from .metrics import score
from .pipeline import PipelineConfig, ReconstructionResult, reconstruct, upsample_eval
from .renderer import FIXTURES, NoiseConfig, make_fixture, render

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_CONVERGENCE = 0, 2, 3, 4

logger = logging.getLogger("nfps")


def _fixture_size(text: str) -> int:
    n = int(text)
    if n < 64 or n & (n - 1):
        raise argparse.ArgumentTypeError(f"size must be a power of two >= 64, got {n}")
    return n


def _positive_int(text: str) -> int:
    n = int(text)
    if n < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {n}")
    return n


def _positive_float(text: str) -> float:
    x = float(text)
    if not x > 0:
        raise argparse.ArgumentTypeError(f"expected a positive number, got {text}")
    return x


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nfps", description="Near-field photometric stereo toolkit")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    fx = sub.add_parser("fixtures", help="render a synthetic fixture with ground truth")
    fx.add_argument("--name", choices=FIXTURES, required=True)
    fx.add_argument("--size", type=_fixture_size, default=256)
    fx.add_argument("--lights", type=int, default=10)
    fx.add_argument("--seed", type=int, default=0)
    fx.add_argument("--noise", type=float, default=0.0, help="noise sigma relative to the image maximum")
    fx.add_argument("--zero-patches", type=int, default=0)
    fx.add_argument("--out", type=Path, required=True)

    rd = sub.add_parser("render", help="render a scene description")
    rd.add_argument("--scene", type=Path, required=True)
    rd.add_argument("--out", type=Path, required=True)

    rc = sub.add_parser("reconstruct", help="recover normals, depth and albedo")
    rc.add_argument("--images", required=True, help="glob of PFM images, sorted by name")
    rc.add_argument("--lights", type=Path, required=True)
    rc.add_argument("--camera", type=Path, required=True)
    rc.add_argument("--mask", type=Path)
    rc.add_argument("--iters", type=_positive_int, default=1, help="passes per scale")
    rc.add_argument("--ablation", choices=["global-lights"], help="light every scale as the depth-one plane")
    rc.add_argument("--scale", type=_positive_float, default=1.0,
                    help="mean object distance in the units of lights.json")
    rc.add_argument("--gamma", type=_positive_float, default=1.0, help="raise images to this power first")
    rc.add_argument("--r0", type=int, default=64, help="base resolution")
    rc.add_argument("--trim-high", type=int, default=1)
    rc.add_argument("--trim-low", type=int, default=0)
    rc.add_argument("--workers", type=_positive_int, default=1)
    rc.add_argument("--no-scales", action="store_true", help="skip writing per-scale maps")
    rc.add_argument("--out", type=Path, required=True)

    ev = sub.add_parser("evaluate", help="score a reconstruction against ground truth")
    ev.add_argument("--pred", type=Path, required=True)
    ev.add_argument("--gt", type=Path, required=True)
    ev.add_argument("--align", choices=["none", "mean"], default="none")
    return parser


# -- commands ----------------------------------------------------------------


def cmd_fixtures(args) -> int:
    if args.lights < 3:
        raise _Usage(f"--lights must be >= 3, got {args.lights}")
    scene = make_fixture(args.name, args.size, args.lights, args.seed)
    noise = NoiseConfig(sigma=args.noise, zero_patches=args.zero_patches, seed=args.seed)
    stack, depth, normals = render(scene, noise)
    io.write_image_stack(args.out, stack, depth, normals)
    return EXIT_OK


def cmd_render(args) -> int:
    scene, noise = io.read_scene(args.scene)
    stack, depth, normals = render(scene, noise)
    io.write_image_stack(args.out, stack, depth, normals)
    return EXIT_OK


def cmd_reconstruct(args) -> int:
    paths = sorted(glob.glob(args.images))
    if not paths:
        raise FileNotFoundError(f"no images match {args.images!r}")
    lights = io.read_lights(args.lights)
    if len(paths) != len(lights):
        raise ValueError(f"{len(paths)} images but {len(lights)} lights")
    if len(paths) < 3:
        raise ValueError(f"need at least 3 images, got {len(paths)}")
    K = io.read_camera(args.camera)
    images = np.stack([io.read_pfm(p).astype(np.float64) for p in paths])
    if images.ndim != 3:
        raise ValueError("images must be single-channel PFM files")
    if args.gamma != 1.0:
        images = np.maximum(images, 0.0) ** args.gamma
    mask = io.read_mask(args.mask) if args.mask else None
    cfg = PipelineConfig(
        r0=args.r0,
        iterations_per_scale=args.iters,
        estimator=EstimatorConfig(trim_low=args.trim_low, trim_high=args.trim_high),
        ablation_mode="global_lights" if args.ablation else "per_pixel",
        workers=args.workers,
    )
    result = reconstruct(images, lights, K, cfg, mask=mask, mean_depth=args.scale)

    out = args.out
    out.mkdir(parents=True, exist_ok=True)
    normals, depth, albedo = result.normals, result.depth, result.albedo
    io.write_normals(out / "normals.pfm", normals)
    io.write_depth(out / "depth.pfm", depth)
    io.write_pfm(out / "albedo.pfm", np.where(albedo.mask, albedo.data, 0.0))
    io.write_mask(out / "mask.png", normals.mask & depth.mask)
    io.write_png(out / "normals_preview.png", io.normals_preview(normals))
    io.write_obj(out / "mesh.obj", depth_to_mesh(depth, K))
    if not args.no_scales:
        (out / "scales").mkdir(exist_ok=True)
        for i, (n, d) in enumerate(zip(result.normals_per_scale, result.depth_per_scale)):
            io.write_normals(out / "scales" / f"normals_{i}.pfm", n)
            io.write_depth(out / "scales" / f"depth_{i}.pfm", d)
    diag = dict(result.diagnostics)
    diag.update(crop=list(result.crop), mean_depth=result.mean_depth, images=[Path(p).name for p in paths])
    (out / "diagnostics.json").write_text(json.dumps(diag, indent=2, sort_keys=True) + "\n")
    return EXIT_OK


def _load_scales(pred_dir: Path) -> ReconstructionResult | None:
    diag_path, scale_dir = pred_dir / "diagnostics.json", pred_dir / "scales"
    if not (diag_path.exists() and scale_dir.is_dir()):
        return None
    diag = json.loads(diag_path.read_text())
    normals, depths = [], []
    for i in range(len(diag["scales"])):
        normals.append(io.read_normals(scale_dir / f"normals_{i}.pfm"))
        depths.append(io.read_depth(scale_dir / f"depth_{i}.pfm"))
    return ReconstructionResult(normals, depths, None, [], tuple(diag["crop"]), diag["mean_depth"], diag)


def evaluate_dirs(pred_dir: Path, gt_dir: Path, align: str = "none") -> dict:
    """Metrics dictionary printed by ``evaluate``."""
    pred_n, pred_d = io.read_maps(pred_dir)
    gt_n, gt_d = io.read_maps(gt_dir)
    out = score(pred_n, gt_n, pred_d, gt_d, align)
    out["per_scale"] = []
    scales = _load_scales(Path(pred_dir))
    if scales is not None:
        out["per_scale"] = upsample_eval(scales, gt_n, gt_d, align)
    return out


def cmd_evaluate(args) -> int:
    for d in (args.pred, args.gt):
        if not d.is_dir():
            raise FileNotFoundError(f"{d} is not a directory")
    print(json.dumps(evaluate_dirs(args.pred, args.gt, args.align), indent=2, sort_keys=True))
    return EXIT_OK


class _Usage(Exception):
    pass


COMMANDS = {
    "fixtures": cmd_fixtures,
    "render": cmd_render,
    "reconstruct": cmd_reconstruct,
    "evaluate": cmd_evaluate,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except _Usage as exc:
        parser.print_usage(sys.stderr)
        print(f"nfps: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ConvergenceError as exc:
        print(f"nfps: integration did not converge: {exc}", file=sys.stderr)
        return EXIT_CONVERGENCE
    except (NfpsError, OSError, ValueError, KeyError, TypeError) as exc:
        print(f"nfps: error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
