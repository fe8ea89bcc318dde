"""Sinusoidal coordinate network for (mu, sigma~) fields, trained on polychromatic
line-integral data through the log-sinh projection model.

Forward and backward passes are written out by hand in numpy.  Training runs
in float32; passing float64 parameters gives a float64 path (used for
gradient checks).
"""

from __future__ import annotations

import json
import logging
import math
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .geometry import GridSpec, Ray, ScanGeometry, clip_arrays, ray_arrays
from .mbhc import MetalMask, dlnsinhc, lnsinhc
from .phantoms import Image
from .projector import RayMask, Sinogram

log = logging.getLogger(__name__)

CKPT_MAGIC = b"INRCKPT1"


class TrainingDivergedError(FloatingPointError):
    def __init__(self, step: int, loss: float):
        super().__init__(f"loss became non-finite ({loss}) at step {step}")
        self.step = step


@dataclass(eq=False)
class MLPParams:
    """Weights ``W[i]`` of shape (fan_in, fan_out) and biases ``b[i]``; all but
    the last layer are ``sin(w0 * (x W + b))``."""

    weights: list
    biases: list
    w0: float = 30.0

    def __post_init__(self):
        if len(self.weights) != len(self.biases) or len(self.weights) < 2:
            raise ValueError("need matching weight/bias lists with at least two layers")
        for W, b in zip(self.weights, self.biases):
            if W.ndim != 2 or b.shape != (W.shape[1],):
                raise ValueError("inconsistent layer shapes")

    @property
    def sizes(self) -> list[int]:
        return [self.weights[0].shape[0]] + [W.shape[1] for W in self.weights]

    @property
    def dtype(self):
        return self.weights[0].dtype

    def arrays(self) -> list[np.ndarray]:
        out = []
        for W, b in zip(self.weights, self.biases):
            out += [W, b]
        return out

    def n_params(self) -> int:
        return sum(a.size for a in self.arrays())

    def astype(self, dtype) -> "MLPParams":
        return MLPParams([W.astype(dtype) for W in self.weights],
                         [b.astype(dtype) for b in self.biases], self.w0)

    def copy(self) -> "MLPParams":
        return self.astype(self.dtype)

    def ravel(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays()])

    def with_flat(self, flat: np.ndarray) -> "MLPParams":
        arrays, k = [], 0
        for a in self.arrays():
            arrays.append(np.asarray(flat[k:k + a.size], dtype=a.dtype).reshape(a.shape))
            k += a.size
        return MLPParams(arrays[0::2], arrays[1::2], self.w0)

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(a)) for a in self.arrays())


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 5e-4
    lambda_tilde: float = 3.0
    epsilon: float = 1e-6
    samples_per_ray: int = 256
    rays_per_batch: int = 2048
    stop_loss: float = 5e-3
    max_steps: int = 50_000
    seed: int = 0
    jitter: bool = True
    w0: float = 30.0
    hidden: int = 128
    depth: int = 5
    stop_window: int = 200
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    lr_final: float | None = None  # cosine decay target; None keeps the rate fixed
    output_scale: float = 0.01  # output layer init factor; 1.0 is the plain sinusoidal init
    dtype: str = "float32"

    def __post_init__(self):
        for name in ("learning_rate", "lambda_tilde", "epsilon", "samples_per_ray", "rays_per_batch",
                     "stop_loss", "max_steps", "w0", "hidden", "depth", "stop_window", "output_scale"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.dtype not in ("float32", "float64"):
            raise ValueError("dtype must be float32 or float64")


@dataclass(eq=False)
class TrainState:
    params: MLPParams
    m: list
    v: list
    step: int = 0
    history: list = field(default_factory=list)


def init_siren(seed: int = 0, w0: float = 30.0, hidden: int = 128, depth: int = 5,
               dtype=np.float64, output_scale: float = 1.0) -> MLPParams:
    """First layer U(-1/2, 1/2); later layers U(+-sqrt(6/fan_in)/w0).

    The affine output layer is additionally multiplied by ``output_scale`` so
    training can start from near-zero fields.
    """
    if not w0 > 0:
        raise ValueError("w0 must be positive")
    if not output_scale > 0:
        raise ValueError("output_scale must be positive")
    rng = np.random.Generator(np.random.Philox(seed))
    sizes = [2] + [hidden] * depth + [2]
    weights, biases = [], []
    for i, (n_in, n_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        bound = 0.5 if i == 0 else math.sqrt(6.0 / n_in) / w0
        weights.append(rng.uniform(-bound, bound, (n_in, n_out)).astype(dtype))
        biases.append(rng.uniform(-bound, bound, n_out).astype(dtype))
    weights[-1] = (weights[-1] * output_scale).astype(dtype)
    biases[-1] = (biases[-1] * output_scale).astype(dtype)
    return MLPParams(weights, biases, w0)


def _forward(params: MLPParams, X: np.ndarray):
    """Returns the output and the per-layer inputs and pre-activations for backprop."""
    h = X
    inputs, pre = [], []
    w0 = params.dtype.type(params.w0)
    for W, b in zip(params.weights[:-1], params.biases[:-1]):
        inputs.append(h)
        z = h @ W
        z += b
        z *= w0
        pre.append(z)
        h = np.sin(z)
    inputs.append(h)
    out = h @ params.weights[-1] + params.biases[-1]
    return out, inputs, pre


def _backward(params: MLPParams, g_out: np.ndarray, inputs, pre):
    n = len(params.weights)
    gW, gb = [None] * n, [None] * n
    gW[-1] = inputs[-1].T @ g_out
    gb[-1] = g_out.sum(axis=0)
    gh = g_out @ params.weights[-1].T
    w0 = params.dtype.type(params.w0)
    for i in range(n - 2, -1, -1):
        gz = gh * np.cos(pre[i])
        gz *= w0
        gW[i] = inputs[i].T @ gz
        gb[i] = gz.sum(axis=0)
        if i:
            gh = gz @ params.weights[i].T
    return gW, gb


def mlp_forward(params: MLPParams, points) -> np.ndarray:
    """Raw network output ``(mu_raw, sigma_raw)`` per normalized point, shape (N, 2)."""
    X = np.asarray(points, dtype=params.dtype).reshape(-1, 2)
    return _forward(params, X)[0]


def input_jacobian(params: MLPParams, points) -> np.ndarray:
    """d output / d input, shape (N, 2 outputs, 2 inputs), by forward-mode chain rule."""
    X = np.asarray(points, dtype=params.dtype).reshape(-1, 2)
    h = X
    J = np.broadcast_to(np.eye(2, dtype=X.dtype), (X.shape[0], 2, 2)).copy()  # dh/dx, (N, width, 2)
    for W, b in zip(params.weights[:-1], params.biases[:-1]):
        z = params.w0 * (h @ W + b)
        J = params.w0 * np.cos(z)[..., None] * np.einsum("nij,ik->nkj", J, W)
        h = np.sin(z)
    return np.einsum("nij,ik->nkj", J, params.weights[-1])


# --- rays -------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class RayTable:
    """Grid-clipped rays of a geometry, flattened view-major."""

    geometry: ScanGeometry
    grid: GridSpec
    origins: np.ndarray
    dirs: np.ndarray
    t0: np.ndarray
    t1: np.ndarray

    @classmethod
    def build(cls, geometry: ScanGeometry, grid: GridSpec) -> "RayTable":
        o, d, _ = ray_arrays(geometry)
        t0, t1 = clip_arrays(o, d, grid)
        return cls(geometry, grid, o.reshape(-1, 2), d.reshape(-1, 2), t0.ravel(), t1.ravel())

    @property
    def lengths(self) -> np.ndarray:
        return self.t1 - self.t0

    def sample(self, idx: np.ndarray, n: int, rng=None, dtype=np.float64):
        """Normalized sample points (B, n, 2) and step lengths dt (B,) in mm."""
        L = self.lengths[idx]
        if np.any(L <= 0):
            raise ValueError("cannot sample a ray that misses the grid")
        dt = L / n
        if rng is None:
            frac = np.broadcast_to((np.arange(n) + 0.5) / n, (idx.size, n))
        else:
            frac = (np.arange(n) + rng.random((idx.size, n))) / n
        t = self.t0[idx, None] + frac * L[:, None]
        pts = self.origins[idx, None, :] + t[..., None] * self.dirs[idx, None, :]
        c = np.asarray(self.grid.center)
        half = np.asarray(self.grid.half_extent)
        return ((pts - c) / half).astype(dtype), dt


def _field_integrals(params, X, dt):
    """Run the net on (B, n, 2) points; return (I_mu, I_sigma, out, cache)."""
    B, n, _ = X.shape
    out, inputs, pre = _forward(params, X.reshape(-1, 2))
    o = out.reshape(B, n, 2).astype(np.float64)
    I_mu = o[..., 0].sum(axis=1) * dt
    I_sg = np.abs(o[..., 1]).sum(axis=1) * dt
    return I_mu, I_sg, o, (inputs, pre)


def projection_model(I_mu, I_sigma, cfg: TrainConfig):
    y = cfg.lambda_tilde * (np.asarray(I_sigma) + cfg.epsilon)
    return I_mu - lnsinhc(y)


def predict_projection(params: MLPParams, ray: Ray, cfg: TrainConfig, grid: GridSpec) -> float:
    """Model value for a single (already clipped) ray, midpoint quadrature."""
    if not ray.length > 0:
        raise ValueError("empty ray")
    n = cfg.samples_per_ray
    t = ray.t_range[0] + (np.arange(n) + 0.5) * (ray.length / n)
    pts = np.asarray(ray.origin) + t[:, None] * np.asarray(ray.direction)
    X = (pts - np.asarray(grid.center)) / np.asarray(grid.half_extent)
    I_mu, I_sg, _, _ = _field_integrals(params, X[None].astype(params.dtype), np.array([ray.length / n]))
    return float(projection_model(I_mu, I_sg, cfg)[0])


def _check_batch(batch, mask: RayMask, table: RayTable) -> np.ndarray:
    idx = np.asarray(batch, dtype=np.int64).ravel()
    if idx.size == 0:
        raise ValueError("empty batch")
    if idx.min() < 0 or idx.max() >= mask.included.size:
        raise IndexError("batch index outside the sinogram")
    if not mask.included.ravel()[idx].all():
        raise ValueError("batch contains rays excluded by the mask")
    return idx


def _loss_and_grad(params, table: RayTable, target: np.ndarray, idx, cfg, rng=None, need_grad=True):
    X, dt = table.sample(idx, cfg.samples_per_ray, rng, params.dtype)
    I_mu, I_sg, o, (inputs, pre) = _field_integrals(params, X, dt)
    y = cfg.lambda_tilde * (I_sg + cfg.epsilon)
    resid = I_mu - lnsinhc(y) - target[idx]
    loss = float(np.abs(resid).mean())
    if not need_grad:
        return loss, None
    g_ray = np.sign(resid) / idx.size
    g_mu = (g_ray * dt)[:, None] * np.ones_like(o[..., 0])
    g_sg = (-g_ray * cfg.lambda_tilde * dlnsinhc(y) * dt)[:, None] * np.sign(o[..., 1])
    g_out = np.stack([g_mu, g_sg], axis=-1).reshape(-1, 2).astype(params.dtype)
    gW, gb = _backward(params, g_out, inputs, pre)
    return loss, MLPParams(gW, gb, params.w0)


def loss_batch(params, sino: Sinogram, mask: RayMask, batch, cfg: TrainConfig, grid: GridSpec,
               table: RayTable | None = None) -> float:
    """Mean |P_hat - P| over the batch (midpoint quadrature, no jitter)."""
    table = table or RayTable.build(sino.geometry, grid)
    idx = _check_batch(batch, mask, table)
    return _loss_and_grad(params, table, sino.values.ravel(), idx, cfg, need_grad=False)[0]


def grad_batch(params, sino: Sinogram, mask: RayMask, batch, cfg: TrainConfig, grid: GridSpec,
               table: RayTable | None = None) -> tuple[float, MLPParams]:
    """Loss and its exact gradient w.r.t. every weight and bias."""
    table = table or RayTable.build(sino.geometry, grid)
    idx = _check_batch(batch, mask, table)
    return _loss_and_grad(params, table, sino.values.ravel(), idx, cfg)


# --- optimisation -------------------------------------------------------------------

def init_state(params: MLPParams) -> TrainState:
    zeros = [np.zeros_like(a) for a in params.arrays()]
    return TrainState(params, zeros, [z.copy() for z in zeros])


def _lr_at(cfg: TrainConfig, step: int) -> float:
    if cfg.lr_final is None:
        return cfg.learning_rate
    frac = min(step / cfg.max_steps, 1.0)
    return cfg.lr_final + 0.5 * (cfg.learning_rate - cfg.lr_final) * (1.0 + math.cos(math.pi * frac))


def adam_step(state: TrainState, grad: MLPParams, cfg: TrainConfig) -> TrainState:
    """One bias-corrected Adam update; returns the advanced state."""
    step = state.step + 1
    lr = _lr_at(cfg, state.step)
    b1, b2 = cfg.beta1, cfg.beta2
    c1 = 1.0 - b1 ** step
    c2 = 1.0 - b2 ** step
    new_p, new_m, new_v = [], [], []
    for p, m, v, g in zip(state.params.arrays(), state.m, state.v, grad.arrays()):
        if g.shape != p.shape:
            raise ValueError("gradient shape does not match parameters")
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * (g * g)
        upd = (lr / c1) * m / (np.sqrt(v / c2) + cfg.adam_eps)
        new_p.append((p - upd).astype(p.dtype))
        new_m.append(m.astype(p.dtype))
        new_v.append(v.astype(p.dtype))
    params = MLPParams(new_p[0::2], new_p[1::2], state.params.w0)
    return TrainState(params, new_m, new_v, step, state.history)


def usable_mask(mask: RayMask, table: RayTable) -> np.ndarray:
    """Flat indices of included rays that intersect the grid."""
    return np.flatnonzero(mask.included.ravel() & (table.lengths > 0))


def train(sino: Sinogram, mask: RayMask, cfg: TrainConfig, grid: GridSpec,
          state: TrainState | None = None, callback=None) -> TrainState:
    """Adam on shuffled batches of included rays until the running loss drops below
    ``stop_loss`` (mean over ``stop_window`` batches) or ``max_steps`` is reached."""
    table = RayTable.build(sino.geometry, grid)
    pool = usable_mask(mask, table)
    if pool.size == 0:
        raise ValueError("mask leaves no ray crossing the grid")
    dtype = np.dtype(cfg.dtype)
    if state is None:
        state = init_state(init_siren(cfg.seed, cfg.w0, cfg.hidden, cfg.depth, dtype, cfg.output_scale))
    target = sino.values.ravel()
    rng = np.random.Generator(np.random.Philox(cfg.seed))
    order = rng.permutation(pool)
    pos = 0
    bs = min(cfg.rays_per_batch, pool.size)
    while state.step < cfg.max_steps:
        if pos + bs > order.size:
            order = rng.permutation(pool)
            pos = 0
        idx = order[pos:pos + bs]
        pos += bs
        loss, grad = _loss_and_grad(state.params, table, target, idx, cfg, rng if cfg.jitter else None)
        if not math.isfinite(loss) or not grad.all_finite():
            raise TrainingDivergedError(state.step, loss)
        state = adam_step(state, grad, cfg)
        state.history.append(loss)
        if callback is not None:
            callback(state)
        if state.step % 500 == 0:
            log.info("step %d loss %.5f", state.step, running_loss(state.history, cfg.stop_window))
        if len(state.history) >= cfg.stop_window and running_loss(state.history, cfg.stop_window) < cfg.stop_loss:
            break
    return state


def running_loss(history, window: int) -> float:
    h = history[-window:]
    return float(np.mean(h)) if h else math.inf


def render(params: MLPParams, grid: GridSpec, chunk: int = 65536) -> tuple[Image, Image]:
    """(mu, sigma~) images at pixel centres; sigma~ is |sigma_raw|."""
    X, Y = grid.pixel_centers()
    pts = np.stack([(X - grid.center[0]) / grid.half_extent[0],
                    (Y - grid.center[1]) / grid.half_extent[1]], axis=-1).reshape(-1, 2)
    out = np.concatenate([mlp_forward(params, pts[s:s + chunk]) for s in range(0, pts.shape[0], chunk)])
    out = out.astype(np.float64)
    mu = out[:, 0].reshape(grid.shape)
    sg = np.abs(out[:, 1]).reshape(grid.shape)
    return Image(grid, mu, "mu"), Image(grid, sg, "sigma")


def compose_with_metal(mu_image: Image, metal_mask: MetalMask, metal_value: float) -> Image:
    if metal_mask.mask.shape != mu_image.values.shape:
        raise ValueError("metal mask does not match image")
    out = mu_image.values.copy()
    out[metal_mask.mask] = metal_value
    return Image(mu_image.grid, out, mu_image.kind)


# --- files -----------------------------------------------------------------------

def save_checkpoint(state_or_params, path) -> None:
    """Magic, uint32 header length, JSON header, then little-endian float64 weights."""
    if isinstance(state_or_params, TrainState):
        params, step = state_or_params.params, state_or_params.step
    else:
        params, step = state_or_params, 0
    header = json.dumps({"sizes": params.sizes, "w0": params.w0, "step": step,
                         "dtype": str(params.dtype)}, sort_keys=True).encode()
    blob = params.ravel().astype("<f8").tobytes()
    Path(path).write_bytes(CKPT_MAGIC + struct.pack("<I", len(header)) + header + blob)


def load_checkpoint(path) -> tuple[MLPParams, dict]:
    raw = Path(path).read_bytes()
    if raw[:8] != CKPT_MAGIC:
        raise ValueError(f"{path}: not a checkpoint file")
    (n,) = struct.unpack("<I", raw[8:12])
    header = json.loads(raw[12:12 + n])
    flat = np.frombuffer(raw[12 + n:], dtype="<f8")
    sizes = header["sizes"]
    if flat.size != sum(a * b + b for a, b in zip(sizes[:-1], sizes[1:])):
        raise ValueError(f"{path}: weight blob does not match header")
    template = init_siren(0, header["w0"], sizes[1], len(sizes) - 2)
    if template.sizes != sizes:
        raise ValueError(f"{path}: unsupported architecture {sizes}")
    params = template.with_flat(flat).astype(np.dtype(header["dtype"]))
    return params, header


def write_loss_history(history, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("step,loss\n")
        for i, v in enumerate(history, start=1):
            fh.write(f"{i},{v!r}\n")


def with_overrides(cfg: TrainConfig, **kw) -> TrainConfig:
    return replace(cfg, **kw)
