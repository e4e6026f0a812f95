"""``occbokeh`` command line.

Every run ends with one summary line on stdout::

    status=<ok|fail> cmd=<name> wall_ms=<int> key=val ...

Exit codes: 0 success, 1 usage, 2 validation, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path
from typing import List, Optional

import numpy as np

from . import dfd, fixtures, gradcheck, oracle
from . import io as bio
from .render import render, set_threads
from .scene import ApertureKernel, BokehError, Mode, validate_scene

EXIT_OK, EXIT_USAGE, EXIT_VALIDATION, EXIT_NUMERICAL = 0, 1, 2, 3
NUMERICAL_ERRORS = {"GRADCHECK_FAILED", "DIVERGED", "ZERO_VARIANCE"}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _floats(text: str) -> List[float]:
    return [float(v) for v in text.split(",") if v.strip()]


def _ints(text: str) -> List[int]:
    return [int(v) for v in text.split(",") if v.strip()]


def _summary(status: str, cmd: str, t0: float, **kv) -> str:
    parts = [f"status={status}", f"cmd={cmd}", f"wall_ms={int(round((time.time() - t0) * 1000))}"]
    for k, v in kv.items():
        if isinstance(v, float):
            v = f"{v:.6g}"
        parts.append(f"{k}={v}")
    return " ".join(parts)


def _lens_overrides(lens, args):
    changes = {}
    if getattr(args, "mode", None):
        changes["mode"] = Mode(args.mode)
    if getattr(args, "focus", None) is not None:
        changes["focus_disparity"] = args.focus
    if getattr(args, "radius", None) is not None:
        changes["blur_scale"] = args.radius
    if getattr(args, "max_radius", None) is not None:
        changes["max_radius"] = args.max_radius
    if getattr(args, "kernel", None):
        if args.kernel == "circle":
            changes["kernel"] = ApertureKernel.circle()
        else:
            changes["kernel"] = ApertureKernel.from_mask(bio.load_png(args.kernel, "gray"))
    if getattr(args, "no_occlusion", False):
        changes["occlusion"] = False
    try:
        return lens.with_(**changes)
    except (TypeError, ValueError) as exc:
        raise BokehError("INVALID_PARAM", str(exc)) from exc


# -- subcommands -------------------------------------------------------------------

def cmd_render(args):
    scene, lens = bio.load_scene(args.scene)
    lens = _lens_overrides(lens, args)
    out = render(scene, lens)
    bio.save_image(args.out, out.bokeh, "color")
    if args.debug:
        stem = Path(args.out).with_suffix("")
        for l in range(scene.n):
            bio.save_pfm(f"{stem}_weight{l}.pfm", out.weights[l])
    return {"out": args.out, "layers": scene.n, "max_radius": out.lens.max_radius}


def cmd_validate(args):
    scene, lens = bio.load_scene(args.scene, validate=False)
    try:
        validate_scene(scene)
    except BokehError as exc:
        raise BokehError("SCENE_INVALID", str(exc)) from exc
    h, w = scene.shape
    return {"layers": scene.n, "height": h, "width": w, "mode": lens.mode.value}


def cmd_gradcheck(args):
    scene, lens = bio.load_scene(args.scene)
    lens = _lens_overrides(lens, args)
    report = gradcheck.check_gradients(scene, lens, eps=args.eps, tol=args.tol, seed=args.seed)
    worst = 0.0
    for name, rep in report.items():
        print(f"{name}\tmax_rel={rep.max_rel:.3e}\tmedian_rel={rep.median_rel:.3e}"
              f"\twithin_tol={rep.frac_within:.4f}\tentries={rep.count}")
        worst = max(worst, rep.max_rel)
    if worst > args.tol:
        raise BokehError("GRADCHECK_FAILED", f"max relative error {worst:.3e} > tol {args.tol:g}")
    return {"max_rel": worst, "tol": args.tol}


def cmd_oracle(args):
    if args.recipe == "default":
        recipe = oracle.default_recipe()
        base = Path(".")
    else:
        recipe = oracle.load_recipe(args.recipe)
        base = Path(args.recipe).resolve().parent
    lens = dict(recipe.get("lens", {}))
    if args.spp is not None:
        lens["samples_per_pixel"] = args.spp
    if args.seed is not None:
        lens["rng_seed"] = args.seed
    if args.resolution is not None:
        lens["sensor_resolution"] = [args.resolution, args.resolution]
    recipe = {**recipe, "lens": lens}
    if args.scenes is not None:
        recipe["scenes"] = recipe["scenes"][: args.scenes]
    dirs = oracle.generate_benchmark(recipe, args.out, base)
    return {"out": args.out, "scenes": len(dirs)}


def cmd_benchmark(args):
    engine, flat = oracle.evaluate_dataset(args.dataset, baseline=args.baseline is not None)
    text = engine.to_text()
    Path(args.out).write_text(text)
    sys.stdout.write(text)
    agg = engine.aggregate()
    kv = {"out": args.out, "scenes": len(engine.rows), "psnr_mean": agg["psnr"][0],
          "rmse_mean": agg["rmse"][0]}
    if flat is not None:
        Path(args.baseline).write_text(flat.to_text())
        kv["baseline_rmse_mean"] = flat.aggregate()["rmse"][0]
    return kv


def cmd_dfd(args):
    conf = {}
    if args.config:
        conf = json.loads(Path(args.config).read_text())
    lens = bio.lens_from_dict(conf.get("lens", {"focus_disparity": 0.0, "blur_scale": 10.0}),
                              Path(args.config).parent if args.config else Path("."))
    lens = _lens_overrides(lens.with_(mode=Mode.SOFT), args)
    image = bio.load_image(args.image, "color")
    target = bio.load_image(args.target, "color")
    init = args.init if args.init is not None else float(conf.get("init_disparity", 0.0))
    problem = dfd.DfdProblem(image, target, lens, init,
                             weights=tuple(args.weights) if args.weights else dfd.DEFAULT_WEIGHTS,
                             windows=tuple(args.windows) if args.windows else dfd.DEFAULT_WINDOWS,
                             lr=args.lr, max_iter=args.iters, tol=args.tol,
                             patience=args.patience)
    result = dfd.optimize(problem)
    bio.save_pfm(args.out, result.disparity)
    csv_path = args.loss_csv or str(Path(args.out).with_suffix(".csv"))
    running = result.running_min()
    rows = [(r["iteration"], r["total"], float(m), r["l1"], r["grad"], r["hssim"])
            for r, m in zip(result.loss_trace, running)]
    bio.write_csv(csv_path, ("iteration", "total", "running_min", "l1", "grad", "hssim"), rows)
    if args.render_out:
        bio.save_image(args.render_out, result.render, "color")
    kv = {"out": args.out, "iterations": result.iterations, "best_loss": result.best_loss,
          "loss_csv": csv_path}
    if args.gt:
        gt = bio.load_pfm(args.gt)
        kv["disparity_rmse"] = float(np.sqrt(np.mean((result.disparity - gt) ** 2)))
    return kv


# -- parser ----------------------------------------------------------------------

def _add_lens_flags(p, mode=True):
    if mode:
        p.add_argument("--mode", choices=[m.value for m in Mode])
    p.add_argument("--focus", type=float, help="focus disparity")
    p.add_argument("--radius", type=float, help="blur scale, CoC pixels per unit disparity")
    p.add_argument("--max-radius", type=int, dest="max_radius")
    p.add_argument("--kernel", help="'circle' or a grayscale PNG aperture mask")
    p.add_argument("--no-occlusion", action="store_true", dest="no_occlusion")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="occbokeh", description="Occlusion-aware bokeh rendering toolkit.")
    parser.add_argument("--threads", type=int, default=None,
                        help="worker threads (default: all logical cores)")
    sub = parser.add_subparsers(dest="cmd", parser_class=_Parser)

    p = sub.add_parser("render", help="render a layered scene manifest")
    p.add_argument("--scene", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--debug", action="store_true", help="also write composite weights as PFM")
    _add_lens_flags(p)
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("validate", help="check a scene manifest")
    p.add_argument("--scene", required=True)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("gradcheck", help="compare analytic and numeric gradients")
    p.add_argument("--scene", default=str(fixtures.GRADCHECK_DIR / "scene.json"))
    p.add_argument("--eps", type=float, default=1e-3)
    p.add_argument("--tol", type=float, default=1e-3)
    p.add_argument("--seed", type=int, default=0)
    _add_lens_flags(p)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("oracle", help="ray-trace a benchmark dataset from a recipe")
    p.add_argument("--recipe", required=True, help="recipe JSON, or 'default'")
    p.add_argument("--out", required=True)
    p.add_argument("--spp", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--resolution", type=int)
    p.add_argument("--scenes", type=int, help="only the first N scenes")
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("benchmark", help="score engine renders against traced ground truth")
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--baseline", help="also write the no-occlusion baseline report here")
    p.set_defaults(func=cmd_benchmark)

    p = sub.add_parser("dfd", help="recover disparity from a defocused target")
    p.add_argument("--image", required=True)
    p.add_argument("--target", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config", help="JSON with 'lens' and 'init_disparity'")
    p.add_argument("--init", type=float)
    p.add_argument("--iters", type=int, default=2000)
    p.add_argument("--lr", type=float, default=0.01)
    p.add_argument("--tol", type=float, default=1e-5)
    p.add_argument("--patience", type=int, default=50)
    p.add_argument("--weights", type=_floats, help="l1,grad,hssim")
    p.add_argument("--windows", type=_ints, help="SSIM windows, e.g. 11,21,31")
    p.add_argument("--loss-csv", dest="loss_csv")
    p.add_argument("--render-out", dest="render_out")
    p.add_argument("--gt", help="ground-truth disparity PFM for reporting")
    _add_lens_flags(p, mode=False)
    p.set_defaults(func=cmd_dfd)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    t0 = time.time()
    cmd = "none"
    try:
        args = build_parser().parse_args(argv)
        cmd = args.cmd or "none"
        if args.cmd is None:
            raise UsageError("a subcommand is required")
        set_threads(args.threads)
        kv = args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        print(_summary("fail", cmd, t0, error="USAGE"))
        return EXIT_USAGE
    except BokehError as exc:
        print(str(exc), file=sys.stderr)
        print(_summary("fail", cmd, t0, error=exc.code))
        return EXIT_NUMERICAL if exc.code in NUMERICAL_ERRORS else EXIT_VALIDATION
    print(_summary("ok", cmd, t0, **kv))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
