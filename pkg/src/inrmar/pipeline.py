"""End-to-end experiments: simulate a scene, reconstruct with each method,
score against the rasterized truth and write every artifact to disk."""

from __future__ import annotations

import contextlib
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import __version__, inr
from .config import RunConfig, dump_config
from .fbp import fbp
from .geometry import GridSpec, ScanGeometry, default_fan, default_parallel
from .mbhc import MetalMask, mbhc_reconstruct
from .metrics import export_image, mae, mask_digest, mse, write_image_csv
from .phantoms import (DentalLayout, Disk, Image, PhantomSpec, Primitive, dental_layout,
                       material_mask, rasterize_pair, two_disk_phantom)
from .physics import (Spectrum, attenuation_at, bundled_material, bundled_spectrum, load_spectrum,
                      make_uniform_gauss)
from .projector import (RayMask, Sinogram, apply_noise, project_poly, rays_through_mask,
                        write_sinogram)

log = logging.getLogger(__name__)


class StageError(RuntimeError):
    def __init__(self, stage: str, exc: BaseException):
        super().__init__(f"[{stage}] {type(exc).__name__}: {exc}")
        self.stage = stage
        self.__cause__ = exc


@contextlib.contextmanager
def stage(name: str, timings: dict):
    t = time.perf_counter()
    try:
        yield
    except StageError:
        raise
    except Exception as exc:
        raise StageError(name, exc) from exc
    finally:
        timings[name] = timings.get(name, 0.0) + time.perf_counter() - t


@dataclass(eq=False)
class Scene:
    phantom: PhantomSpec
    grid: GridSpec
    geometry: ScanGeometry
    spectrum: Spectrum
    E0: float
    metal_names: tuple
    layout: DentalLayout | None = None

    @property
    def metal(self) -> PhantomSpec:
        return self.phantom.subset(self.metal_names)

    def truth(self) -> tuple[Image, Image]:
        return rasterize_pair(self.phantom, self.grid, self.E0)

    def background_mask(self) -> np.ndarray:
        mu, sg = self.truth()
        return (mu.values == 0) & (sg.values == 0)

    def metal_mask(self) -> np.ndarray:
        return material_mask(self.phantom, self.grid, self.metal_names)


def build_spectrum(cfg: RunConfig) -> Spectrum:
    s = cfg.spectrum
    if s.kind == "bundled":
        return bundled_spectrum()
    if s.kind == "file":
        return load_spectrum(s.path)
    E = s.energy or bundled_spectrum().mean_energy
    if s.kind == "mono":
        return Spectrum(np.array([E]), np.array([1.0]))
    return make_uniform_gauss(E, s.half_width)


def build_scene(cfg: RunConfig) -> Scene:
    sc = cfg.scene
    grid = GridSpec(cfg.grid.nx, cfg.grid.ny, cfg.grid.pixel_mm)
    g = cfg.geometry
    if g.mode == "parallel":
        geometry = default_parallel(grid, g.n_views, g.n_bins)
    else:
        geometry = default_fan(grid, g.n_views, g.n_bins, g.source_axis_distance)
    spectrum = build_spectrum(cfg)
    E0 = cfg.spectrum.energy or spectrum.mean_energy
    layout = None
    if sc.kind == "dental":
        layout = dental_layout(sc.n_teeth, sc.crowns, grid, sc.wall_mm)
        phantom = layout.phantom
        metal = tuple(sc.metal)
    elif sc.kind == "two_disk":
        phantom = two_disk_phantom(sc.radius, sc.separation, bundled_material(sc.material))
        metal = (sc.material,)
    else:
        phantom = PhantomSpec((Primitive(Disk((0.0, 0.0), sc.radius), bundled_material(sc.material)),))
        metal = (sc.material,)
    return Scene(phantom, grid, geometry, spectrum, E0, metal, layout)


def simulate(scene: Scene, cfg: RunConfig) -> tuple[Sinogram, Sinogram]:
    clean = project_poly(scene.phantom, scene.geometry, scene.spectrum)
    if not cfg.noise.enabled:
        return clean, clean
    noisy = apply_noise(clean, cfg.noise.photons, cfg.noise.electronic_sd, cfg.run.seed)
    return clean, noisy


def _floor_value(cfg: RunConfig, E0: float) -> float:
    try:
        return float(cfg.mbhc.floor)
    except ValueError:
        return attenuation_at(bundled_material(cfg.mbhc.floor), E0)


def _param(v: str):
    return v if v == "auto" else float(v)


@dataclass(eq=False)
class MetricsReport:
    rows: dict = field(default_factory=dict)  # method -> {"mae": , "mse": , ...}
    mask_sha256: str = ""
    n_background: int = 0
    runtimes: dict = field(default_factory=dict)
    extras: dict = field(default_factory=dict)
    images: dict = field(default_factory=dict)
    states: dict = field(default_factory=dict)

    def mae(self, method: str) -> float:
        return self.rows[method]["mae"]

    def to_csv(self) -> str:
        lines = ["method,background_mae,background_mse,background_pixels,mask_sha256"]
        for m, r in self.rows.items():
            lines.append(f"{m},{r['mae']:.10g},{r['mse']:.10g},{self.n_background},{self.mask_sha256}")
        return "\n".join(lines) + "\n"


def _write_recon(out: Path | None, method: str, image: Image, window, extra: dict | None = None):
    if out is None:
        return
    d = out / "recon" / method
    d.mkdir(parents=True, exist_ok=True)
    export_image(image, d / "mu.pgm", window, csv=True)
    for name, img in (extra or {}).items():
        export_image(img, d / f"{name}.pgm", (0.0, max(float(img.values.max()), 1e-12)), csv=True)


def _inr_config(cfg: RunConfig) -> inr.TrainConfig:
    return cfg.inr


def _threads(cfg: RunConfig):
    return threadpool_limits(limits=1) if cfg.run.deterministic else contextlib.nullcontext()


def run_pipeline(cfg: RunConfig, out_dir=None) -> MetricsReport:
    """Simulate, reconstruct with every configured method, score and export."""
    out = Path(out_dir) if out_dir is not None else (Path(cfg.run.out) if cfg.run.out else None)
    timings: dict = {}
    report = MetricsReport(runtimes=timings)
    with _threads(cfg):
        if out is not None:
            (out / "sinogram").mkdir(parents=True, exist_ok=True)
            (out / "config.lock").write_text(f"# inrmar {__version__}\n" + dump_config(cfg))
        with stage("scene", timings):
            scene = build_scene(cfg)
            mu_t, sg_t = scene.truth()
            bg = scene.background_mask()
            window = (0.0, float(mu_t.values.max()) or 1.0)
        report.mask_sha256 = mask_digest(bg)
        report.n_background = int(bg.sum())
        report.images["truth_mu"], report.images["truth_sigma"] = mu_t, sg_t
        with stage("simulate", timings):
            clean, sino = simulate(scene, cfg)
            if out is not None:
                write_sinogram(sino, out / "sinogram" / "measured.bin")
                write_sinogram(clean, out / "sinogram" / "clean.bin")
                t = out / "truth"
                t.mkdir(exist_ok=True)
                export_image(mu_t, t / "mu.pgm", window, csv=True)
                export_image(sg_t, t / "sigma.pgm", (0.0, max(float(sg_t.values.max()), 1e-12)), csv=True)
                export_image(Image(scene.grid, bg.astype(float), "mask"), t / "background_mask.pgm", (0.0, 1.0))
        base = None
        for method in cfg.methods.run:
            with stage(method, timings):
                extra = {}
                if method == "fbp":
                    img = base = fbp(sino, scene.grid) if base is None else base
                elif method == "mbhc":
                    base = fbp(sino, scene.grid) if base is None else base
                    res = mbhc_reconstruct(sino, scene.grid, _param(cfg.mbhc.threshold), _param(cfg.mbhc.kappa),
                                           base=base, floor=_floor_value(cfg, scene.E0))
                    img = res.image
                    report.extras["mbhc_threshold"] = res.threshold
                    report.extras["mbhc_kappa"] = res.kappa
                    extra["metal_mask"] = res.mask.as_image()
                else:
                    state = inr.train(sino, RayMask.full(sino.geometry), _inr_config(cfg), scene.grid)
                    img, sig = inr.render(state.params, scene.grid)
                    extra["sigma"] = sig
                    report.states["inr"] = state
                    report.extras["inr_steps"] = state.step
                    if out is not None:
                        d = out / "recon" / "inr"
                        d.mkdir(parents=True, exist_ok=True)
                        inr.save_checkpoint(state, d / "checkpoint.bin")
                        inr.write_loss_history(state.history, d / "loss.csv")
                report.images[method] = img
                report.rows[method] = {"mae": mae(img, mu_t, bg), "mse": mse(img, mu_t, bg)}
                _write_recon(out, method, img, window, extra)
        if out is not None:
            (out / "metrics.csv").write_text(report.to_csv())
            _write_timing(out, timings)
            _write_extras(out, report.extras)
    return report


def _write_timing(out: Path, timings: dict) -> None:
    lines = ["stage,seconds"] + [f"{k},{v:.3f}" for k, v in timings.items()]
    (out / "timing.csv").write_text("\n".join(lines) + "\n")


def _write_extras(out: Path, extras: dict) -> None:
    if extras:
        lines = ["key,value"] + [f"{k},{v!r}" for k, v in extras.items()]
        (out / "parameters.csv").write_text("\n".join(lines) + "\n")


# --- photon starvation ---------------------------------------------------------------

def tooth_errors(image: Image, truth: Image, layout: DentalLayout) -> np.ndarray:
    """Mean |image - truth| inside each tooth disk (NaN for crowned teeth)."""
    X, Y = image.grid.pixel_centers()
    err = np.abs(image.values - truth.values)
    out = np.full(len(layout.tooth_centers), np.nan)
    for i, (cx, cy) in enumerate(layout.tooth_centers):
        if i in layout.crown_indices:
            continue
        m = (X - cx) ** 2 + (Y - cy) ** 2 <= layout.tooth_radius ** 2
        if m.any():
            out[i] = err[m].mean()
    return out


def crown_adjacent(layout: DentalLayout) -> set:
    n = len(layout.tooth_centers)
    adj = set()
    for c in layout.crown_indices:
        adj.update(i for i in (c - 1, c + 1) if 0 <= i < n and i not in layout.crown_indices)
    return adj


@dataclass(eq=False)
class StarvationReport:
    mae_full: float
    mae_starved: float
    tooth_errors_full: np.ndarray
    tooth_errors_starved: np.ndarray
    worst_tooth: int
    adjacent: set
    n_excluded: int
    images: dict = field(default_factory=dict)

    @property
    def ratio(self) -> float:
        return self.mae_starved / self.mae_full

    @property
    def worst_is_adjacent(self) -> bool:
        return self.worst_tooth in self.adjacent

    def to_csv(self) -> str:
        lines = ["quantity,value",
                 f"nonmetal_mae_full,{self.mae_full:.10g}",
                 f"nonmetal_mae_starved,{self.mae_starved:.10g}",
                 f"ratio,{self.ratio:.10g}",
                 f"excluded_rays,{self.n_excluded}",
                 f"worst_tooth,{self.worst_tooth}",
                 f"worst_tooth_crown_adjacent,{str(self.worst_is_adjacent).lower()}"]
        lines.append("")
        lines.append("tooth,error_full,error_starved")
        for i, (a, b) in enumerate(zip(self.tooth_errors_full, self.tooth_errors_starved)):
            lines.append(f"{i},{a:.10g},{b:.10g}")
        return "\n".join(lines) + "\n"


def photon_starvation_pipeline(cfg: RunConfig, out_dir=None, full_state: inr.TrainState | None = None,
                               sino: Sinogram | None = None) -> StarvationReport:
    """Train on all rays and on the metal-free subset S_t, paste metal back into the
    S_t result, and compare errors outside the metal."""
    if cfg.scene.kind != "dental":
        raise StageError("scene", ValueError("photon starvation needs the dental scene"))
    out = Path(out_dir) if out_dir is not None else (Path(cfg.run.out) if cfg.run.out else None)
    timings: dict = {}
    with _threads(cfg):
        with stage("scene", timings):
            scene = build_scene(cfg)
            if not scene.metal.primitives:
                raise ValueError("scene contains no metal")
            mu_t, _ = scene.truth()
            metal_px = scene.metal_mask()
            window = (0.0, float(mu_t.values.max()))
        with stage("simulate", timings):
            if sino is None:
                sino = simulate(scene, cfg)[1]
            full = RayMask.full(sino.geometry)
            starved = rays_through_mask(scene.metal, sino.geometry, cfg.starvation.threshold_mm)
        tcfg = _inr_config(cfg)
        with stage("inr_full", timings):
            if full_state is None:
                full_state = inr.train(sino, full, tcfg, scene.grid)
            mu_full = inr.render(full_state.params, scene.grid)[0]
        with stage("inr_starved", timings):
            st_state = inr.train(sino, starved, tcfg, scene.grid)
            mu_st = inr.render(st_state.params, scene.grid)[0]
            metal_value = attenuation_at(bundled_material(scene.metal_names[0]), scene.E0)
            mu_st = inr.compose_with_metal(mu_st, MetalMask(scene.grid, metal_px), metal_value)
        nonmetal = ~metal_px
        te_full = tooth_errors(mu_full, mu_t, scene.layout)
        te_st = tooth_errors(mu_st, mu_t, scene.layout)
        report = StarvationReport(
            mae_full=mae(mu_full, mu_t, nonmetal), mae_starved=mae(mu_st, mu_t, nonmetal),
            tooth_errors_full=te_full, tooth_errors_starved=te_st,
            worst_tooth=int(np.nanargmax(te_st)), adjacent=crown_adjacent(scene.layout),
            n_excluded=int((~starved.included).sum()),
            images={"inr_full": mu_full, "inr_starved": mu_st})
        if out is not None:
            out.mkdir(parents=True, exist_ok=True)
            (out / "config.lock").write_text(f"# inrmar {__version__}\n" + dump_config(cfg))
            for name, img, state in (("inr_full", mu_full, full_state), ("inr_starved", mu_st, st_state)):
                _write_recon(out, name, img, window)
                inr.save_checkpoint(state, out / "recon" / name / "checkpoint.bin")
                inr.write_loss_history(state.history, out / "recon" / name / "loss.csv")
            write_image_csv(starved.included.astype(float), out / "starved_ray_mask.csv")
            (out / "starvation.csv").write_text(report.to_csv())
            _write_timing(out, timings)
    return report
