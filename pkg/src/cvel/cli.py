"""Command-line interface.

Subcommands: segment (one run, full report), compare (all four modes on
the same input), synth (deterministic scenario files), baseline (explicit
gradient-descent reference), serve (HTTP session service). Exit codes:
0 on success (including runs that stop at max_outer without converging),
1 on runtime errors, 2 on usage errors.
"""

import argparse
import json
import sys
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from . import pipeline, report as report_mod
from .model import LandmarkSet, ModelParams, PRESETS, landmark_mask, preset_params
from .solver import run_admm, run_cv_gradient_descent

MODES = ("cv", "cvl", "cve", "cvel")


def _add_param_flags(sub, with_mode=True):
    sub.add_argument("--preset", choices=sorted(PRESETS))
    if with_mode:
        sub.add_argument("--mode", choices=MODES)
    for name in ("mu", "a", "b", "gamma", "eps", "gamma1", "gamma2", "gamma3",
                 "gamma4", "alpha1", "alpha2", "tol"):
        sub.add_argument(f"--{name}", type=float)
    sub.add_argument("--max-iters", type=int)
    sub.add_argument("--sweeps", type=int)


def _params_from_args(args, parser):
    kwargs = dict(PRESETS[args.preset]) if args.preset else {}
    for name in ("mu", "a", "b", "gamma", "eps", "gamma1", "gamma2", "gamma3",
                 "gamma4", "alpha1", "alpha2", "tol"):
        value = getattr(args, name, None)
        if value is not None:
            kwargs[name] = value
    if getattr(args, "max_iters", None) is not None:
        kwargs["max_outer"] = args.max_iters
    if getattr(args, "sweeps", None) is not None:
        kwargs["sweeps_phi"] = args.sweeps
        kwargs["sweeps_n"] = args.sweeps
    mode = getattr(args, "mode", None)
    if mode is not None:
        if args.mu is not None or args.b is not None:
            parser.error("--mode fixes mu and b; drop --mu/--b or drop --mode")
        if mode in ("cv", "cve"):
            kwargs["mu"] = 0.0
        if mode in ("cv", "cvl"):
            kwargs["b"] = 0.0
    try:
        return ModelParams(**kwargs)
    except ValueError as exc:
        parser.error(str(exc))


def _load_inputs(args):
    image = pipeline.load_image(args.image)
    landmarks = (pipeline.load_landmarks(args.landmarks)
                 if getattr(args, "landmarks", None) else LandmarkSet())
    truth = pipeline.load_image(args.truth) if getattr(args, "truth", None) else None
    phi0 = pipeline.init_phi(args.init, image.shape)
    return image, landmarks, truth, phi0


def _write_run_outputs(out, image, landmarks, truth, params, state, report):
    out.mkdir(parents=True, exist_ok=True)
    mask = pipeline.mask_from_phi(state.phi)
    contour = pipeline.extract_contour(state.phi)
    pipeline.save_image(mask, out / "mask.png")
    pipeline.save_contour(contour, out / "contour.json")
    pipeline.export_trace(report, out / "trace.csv")
    report_mod.render_trace_plots(report, params.tol, out / "trace.png")
    pipeline.render_overlay(image, contour, landmarks, out / "overlay.png")
    summary = {
        "mode": params.mode,
        "params": asdict(params),
        "converged": report.converged,
        "iterations": report.iterations,
        "final_energy": report.energy[-1] if report.energy else None,
        "dice": pipeline.dice(mask, truth) if truth is not None else None,
        "landmark_max_abs_phi": _landmark_max_abs_phi(state.phi, landmarks),
    }
    with open(out / "summary.json", "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return summary


def _landmark_max_abs_phi(phi, landmarks):
    if not landmarks.points:
        return None
    eta = landmark_mask(landmarks, phi.shape) > 0
    return float(np.abs(phi[eta]).max())


def _cmd_segment(args, parser):
    params = _params_from_args(args, parser)
    image, landmarks, truth, phi0 = _load_inputs(args)
    state, report = run_admm(image, landmarks, phi0, params)
    summary = _write_run_outputs(Path(args.out), image, landmarks, truth,
                                 params, state, report)
    print(f"mode={summary['mode']} converged={summary['converged']} "
          f"iterations={summary['iterations']} energy={summary['final_energy']}")
    return 0


def _cmd_compare(args, parser):
    base = _params_from_args(args, parser)
    image, landmarks, truth, phi0 = _load_inputs(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    mu = base.mu if base.mu > 0 else ModelParams().mu
    b = base.b if base.b > 0 else ModelParams().b
    forced = {"cv": dict(mu=0.0, b=0.0), "cvl": dict(mu=mu, b=0.0),
              "cve": dict(mu=0.0, b=b), "cvel": dict(mu=mu, b=b)}
    rows = ["mode,iterations,dice,landmark_max_abs_phi"]
    for mode in MODES:
        params = replace(base, **forced[mode])
        state, report = run_admm(image, landmarks, phi0, params)
        summary = _write_run_outputs(out / mode, image, landmarks, truth,
                                     params, state, report)
        dice_s = repr(summary["dice"]) if summary["dice"] is not None else ""
        lm_s = (repr(summary["landmark_max_abs_phi"])
                if summary["landmark_max_abs_phi"] is not None else "")
        rows.append(f"{mode},{report.iterations},{dice_s},{lm_s}")
        print(rows[-1])
    with open(out / "compare.csv", "w", newline="") as fh:
        fh.write("\n".join(rows) + "\n")
    return 0


def _cmd_synth(args, parser):
    try:
        m, n = (int(x) for x in args.dims.lower().split("x"))
    except ValueError:
        parser.error(f"bad --dims {args.dims!r}, want MxN")
    scenario = pipeline.synth_scenario(args.name, (m, n), args.noise_sigma,
                                       args.seed, args.count)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    pipeline.save_image(scenario.image, out / "image.pgm")
    pipeline.save_image(scenario.truth_mask, out / "truth.pgm")
    pipeline.save_landmarks(scenario.suggested_landmarks, out / "landmarks.json")
    meta = {"name": scenario.name, "dims": [m, n], "noise_sigma": args.noise_sigma,
            "seed": args.seed, "geometry": scenario.geometry}
    with open(out / "scenario.json", "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"wrote {scenario.name} scenario to {out}")
    return 0


def _cmd_baseline(args, parser):
    kwargs = {}
    for name in ("alpha1", "alpha2", "eps"):
        if getattr(args, name) is not None:
            kwargs[name] = getattr(args, name)
    params = ModelParams(mu=0.0, b=0.0, **kwargs)
    image = pipeline.load_image(args.image)
    truth = pipeline.load_image(args.truth) if args.truth else None
    phi0 = pipeline.init_phi(args.init, image.shape)
    phi = run_cv_gradient_descent(image, phi0, params, dt=args.dt, steps=args.steps)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    mask = pipeline.mask_from_phi(phi)
    contour = pipeline.extract_contour(phi)
    pipeline.save_image(mask, out / "mask.png")
    pipeline.save_contour(contour, out / "contour.json")
    pipeline.render_overlay(image, contour, LandmarkSet(), out / "overlay.png")
    summary = {"method": "gradient_descent", "dt": args.dt, "steps": args.steps,
               "dice": pipeline.dice(mask, truth) if truth is not None else None}
    with open(out / "summary.json", "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"baseline finished after {args.steps} steps")
    return 0


def _cmd_serve(args, parser):
    import uvicorn

    from .service import create_app

    app = create_app(ttl_seconds=args.ttl, ui_dir=args.ui_dir)
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(prog="cvel",
                                     description="Two-phase variational segmentation "
                                                 "with elastica and landmark constraints")
    sub = parser.add_subparsers(dest="command", required=True)

    seg = sub.add_parser("segment", help="run one segmentation and write a report")
    seg.add_argument("--image", required=True)
    seg.add_argument("--init", required=True, help="circle:row,col,r or box:r0,c0,r1,c1")
    seg.add_argument("--landmarks")
    seg.add_argument("--truth")
    seg.add_argument("--out", required=True)
    _add_param_flags(seg)
    seg.set_defaults(func=_cmd_segment)

    cmp_ = sub.add_parser("compare", help="run cv, cvl, cve and cvel on one input")
    cmp_.add_argument("--image", required=True)
    cmp_.add_argument("--init", required=True)
    cmp_.add_argument("--landmarks")
    cmp_.add_argument("--truth")
    cmp_.add_argument("--out", required=True)
    _add_param_flags(cmp_, with_mode=False)
    cmp_.set_defaults(func=_cmd_compare)

    syn = sub.add_parser("synth", help="generate a synthetic scenario")
    syn.add_argument("--name", required=True,
                     choices=("disk", "broken_circle", "broken_triangle", "broken_letters"))
    syn.add_argument("--dims", default="128x128")
    syn.add_argument("--seed", type=int, default=0)
    syn.add_argument("--noise-sigma", type=float, default=0.0)
    syn.add_argument("--count", type=int, help="number of suggested landmarks")
    syn.add_argument("--out", required=True)
    syn.set_defaults(func=_cmd_synth)

    base = sub.add_parser("baseline", help="gradient-descent reference segmentation")
    base.add_argument("--image", required=True)
    base.add_argument("--init", required=True)
    base.add_argument("--truth")
    base.add_argument("--out", required=True)
    base.add_argument("--dt", type=float, default=0.1)
    base.add_argument("--steps", type=int, default=2000)
    for name in ("alpha1", "alpha2", "eps"):
        base.add_argument(f"--{name}", type=float)
    base.set_defaults(func=_cmd_baseline)

    srv = sub.add_parser("serve", help="run the HTTP session service")
    srv.add_argument("--host", default="127.0.0.1")
    srv.add_argument("--port", type=int, default=8000)
    srv.add_argument("--ttl", type=float, default=3600.0,
                     help="idle session lifetime in seconds")
    srv.add_argument("--ui-dir", help="directory of static UI assets to serve at /ui")
    srv.set_defaults(func=_cmd_serve)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args, parser)
    except (OSError, ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
