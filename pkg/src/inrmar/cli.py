"""Command line entry point: ``inrmar <subcommand> [--config FILE] [--seed N] [--deterministic] [--out DIR]``."""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import inr, pipeline
from .config import ConfigError, RunConfig, dump_config, load_config
from .consistency import UnsupportedModeError, artifact_from_mismatch, consistency_residual, moment0, moment0_spread
from .fbp import fbp
from .mbhc import mbhc_reconstruct
from .metrics import export_image, mae, mse
from .phantoms import Image
from .projector import RayMask, read_sinogram, rays_through_mask
from .toy import build_toy, toy_report

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3

log = logging.getLogger("inrmar")


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="INI run configuration (defaults are used when omitted)")
    p.add_argument("--seed", type=int, help="override the noise and training seeds")
    p.add_argument("--deterministic", action="store_true", help="pin BLAS to one thread")
    p.add_argument("--out", type=Path, help="output directory (overrides [run] out)")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="inrmar", description="Polychromatic CT simulation and metal artifact reduction.")
    sub = ap.add_subparsers(dest="command", required=True)
    for name, help_ in (("simulate", "write the polychromatic sinogram and ground truth"),
                        ("fbp", "filtered backprojection"),
                        ("mbhc", "FBP with the metal beam-hardening corrector"),
                        ("inr-train", "train the neural field on a sinogram"),
                        ("analyze", "range-space residual, zeroth moments and artifact image"),
                        ("toy", "3x3 bichromatic example report"),
                        ("pipeline", "simulate, reconstruct with every method, score"),
                        ("starvation", "full-ray versus metal-free-ray training")):
        p = sub.add_parser(name, help=help_)
        _common(p)
        if name in ("fbp", "mbhc", "inr-train", "analyze"):
            p.add_argument("--sinogram", type=Path, help="read this sinogram instead of simulating")
        if name == "inr-train":
            p.add_argument("--rays", choices=("full", "starved"), default="full",
                           help="train on every ray or only rays missing the metal")
            p.add_argument("--resume", type=Path, help="checkpoint to continue from")
    return ap


def resolve_config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    if args.seed is not None:
        cfg = replace(cfg, run=replace(cfg.run, seed=args.seed), inr=replace(cfg.inr, seed=args.seed))
    if args.deterministic:
        cfg = cfg.with_section("run", deterministic=True)
    if args.out is not None:
        cfg = cfg.with_section("run", out=str(args.out))
    return cfg


def _sinogram(args, cfg: RunConfig, scene: pipeline.Scene):
    if getattr(args, "sinogram", None):
        return read_sinogram(args.sinogram)
    return pipeline.simulate(scene, cfg)[1]


def _score(name: str, img: Image, scene: pipeline.Scene, from_file: bool) -> None:
    if from_file:
        return
    mu_t, _ = scene.truth()
    bg = scene.background_mask()
    print(f"{name},background_mae,{mae(img, mu_t, bg):.6g},background_mse,{mse(img, mu_t, bg):.6g}")


def _export(out: Path, method: str, img: Image) -> None:
    d = out / "recon" / method
    d.mkdir(parents=True, exist_ok=True)
    hi = float(np.percentile(img.values, 99.9))
    export_image(img, d / "mu.pgm", (0.0, hi if hi > 0 else 1.0), csv=True)


def cmd_simulate(args, cfg):
    cfg = replace(cfg, methods=replace(cfg.methods, run=("fbp",)))
    pipeline.run_pipeline(cfg)
    print(f"wrote {Path(cfg.run.out) / 'sinogram'}")


def cmd_fbp(args, cfg):
    scene = pipeline.build_scene(cfg)
    with pipeline.stage("fbp", {}):
        img = fbp(_sinogram(args, cfg, scene), scene.grid)
    _export(Path(cfg.run.out), "fbp", img)
    _score("fbp", img, scene, bool(args.sinogram))


def cmd_mbhc(args, cfg):
    scene = pipeline.build_scene(cfg)
    with pipeline.stage("mbhc", {}):
        res = mbhc_reconstruct(_sinogram(args, cfg, scene), scene.grid, pipeline._param(cfg.mbhc.threshold),
                               pipeline._param(cfg.mbhc.kappa), floor=pipeline._floor_value(cfg, scene.E0))
    _export(Path(cfg.run.out), "mbhc", res.image)
    print(f"mbhc,threshold,{res.threshold:.6g},kappa,{res.kappa:.6g},metal_pixels,{res.mask.n_pixels}")
    _score("mbhc", res.image, scene, bool(args.sinogram))


def cmd_inr(args, cfg):
    scene = pipeline.build_scene(cfg)
    sino = _sinogram(args, cfg, scene)
    mask = RayMask.full(sino.geometry)
    if args.rays == "starved":
        mask = rays_through_mask(scene.metal, sino.geometry, cfg.starvation.threshold_mm)
    state = inr.init_state(inr.load_checkpoint(args.resume)[0]) if args.resume else None
    with pipeline._threads(cfg), pipeline.stage("inr", {}):
        state = inr.train(sino, mask, cfg.inr, scene.grid, state=state)
    out = Path(cfg.run.out) / "recon" / "inr"
    out.mkdir(parents=True, exist_ok=True)
    inr.save_checkpoint(state, out / "checkpoint.bin")
    inr.write_loss_history(state.history, out / "loss.csv")
    img = inr.render(state.params, scene.grid)[0]
    _export(Path(cfg.run.out), "inr", img)
    print(f"inr,steps,{state.step},running_loss,{inr.running_loss(state.history, cfg.inr.stop_window):.6g}")
    _score("inr", img, scene, bool(args.sinogram))


def cmd_analyze(args, cfg):
    scene = pipeline.build_scene(cfg)
    sino = _sinogram(args, cfg, scene)
    out = Path(cfg.run.out) / "analysis"
    out.mkdir(parents=True, exist_ok=True)
    m = moment0(sino)
    np.savetxt(out / "moment0.csv", np.column_stack([np.degrees(sino.geometry.angles), m]),
               delimiter=",", fmt="%.17g", header="angle_deg,moment0", comments="")
    print(f"moment0_spread,{moment0_spread(sino):.6g}")
    print(f"moment0_argmax_deg,{np.degrees(sino.geometry.angles[np.argmax(np.abs(m - np.median(m)))]):.4g}")
    dec = consistency_residual(sino, scene.grid)
    print(f"perp_ratio,{dec.perp_ratio():.6g}")
    art = artifact_from_mismatch(dec.p_perp, scene.grid)
    lim = float(np.abs(art.values).max()) or 1.0
    export_image(art, out / "artifact.pgm", (-lim, lim), csv=True)


def cmd_toy(args, cfg):
    text = toy_report(build_toy())
    out = Path(cfg.run.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "toy.csv").write_text(text)
    print(text, end="")


def cmd_pipeline(args, cfg):
    report = pipeline.run_pipeline(cfg)
    print(report.to_csv(), end="")


def cmd_starvation(args, cfg):
    report = pipeline.photon_starvation_pipeline(cfg)
    print(report.to_csv(), end="")


COMMANDS = {"simulate": cmd_simulate, "fbp": cmd_fbp, "mbhc": cmd_mbhc, "inr-train": cmd_inr,
            "analyze": cmd_analyze, "toy": cmd_toy, "pipeline": cmd_pipeline, "starvation": cmd_starvation}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        Path(cfg.run.out).mkdir(parents=True, exist_ok=True)
        if args.command != "pipeline":
            (Path(cfg.run.out) / "config.lock").write_text(dump_config(cfg))
        COMMANDS[args.command](args, cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (inr.TrainingDivergedError, FloatingPointError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except pipeline.StageError as exc:
        cause = exc.__cause__
        if isinstance(cause, ConfigError):
            print(f"config error: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        if isinstance(cause, FloatingPointError):
            print(f"numeric failure: {exc}", file=sys.stderr)
            return EXIT_NUMERIC
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL
    except (UnsupportedModeError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
