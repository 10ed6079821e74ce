"""Reconstruction algorithms and evaluation metrics.

Three reconstructors share the fan-beam projector: filtered backprojection
for densely sampled data, a primal-dual fixed-point solver minimizing
``1/2 ||A f - m||^2 + alpha ||W f||_1`` over nonnegative images, and a
low-rank plus sparse split minimizing
``1/2 ||A (L + S) - m||^2 + mu_L ||L||_* + mu_S sum_t ||W S_t||_1``.
Metrics compare reconstructed stacks against rasterized ground truth.
"""

import math
import time
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError, ShapeError
from .geometry import COUNTER_CLOCKWISE
from .projector import (
    FanBeamProjector,
    LinearOperator,
    make_temporal_operator,
    operator_norm_estimate,
)
from .transforms import (
    WaveletSpec,
    default_levels,
    forward_coeffs,
    inverse_coeffs,
    soft_threshold,
    svt,
)

STOP_CONVERGED = "converged"
STOP_MAX_ITERS = "max_iters"
STOP_DIVERGED = "diverged"

DIVERGENCE_FACTOR = 10.0


@dataclass(frozen=True)
class FramePartition:
    """How a sinogram was split into per-frame windows."""

    n_frames: int
    per_frame: int
    stride: int

    def to_dict(self) -> dict:
        return {"n_frames": self.n_frames, "per_frame": self.per_frame,
                "stride": self.stride}


@dataclass(frozen=True)
class ReconVolume:
    """A reconstructed animation on a fixed pixel grid."""

    frames: np.ndarray  # (T, n, n) float64
    pixel_size_mm: float
    partition: "FramePartition | None" = None

    def __post_init__(self):
        f = np.asarray(self.frames, dtype=np.float64)
        if f.ndim == 2:
            f = f[None]
        if f.ndim != 3 or f.shape[1] != f.shape[2]:
            raise ShapeError(f"frames must be (T, n, n), got {f.shape}")
        if not np.all(np.isfinite(f)):
            raise DataError("reconstruction contains non-finite values")
        object.__setattr__(self, "frames", f)

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def grid_n(self) -> int:
        return self.frames.shape[1]


@dataclass(frozen=True)
class SolverReport:
    """Iteration bookkeeping emitted once per solver run.

    ``objectives[k]`` is the objective after iteration k+1;
    ``initial_objective`` is the value at the zero start. Wall time is kept
    for display only and deliberately left out of to_dict so that persisted
    reports are reproducible byte for byte.
    """

    algorithm: str
    iterations: int
    objectives: tuple
    initial_objective: float
    step_size: float
    stop_reason: str
    wall_time_s: float

    def __post_init__(self):
        if len(self.objectives) != self.iterations:
            raise ConfigError("need one objective value per iteration")
        if self.stop_reason not in (STOP_CONVERGED, STOP_MAX_ITERS, STOP_DIVERGED):
            raise ConfigError(f"unknown stop reason {self.stop_reason!r}")

    def to_dict(self) -> dict:
        return {
            "algorithm": self.algorithm,
            "iterations": self.iterations,
            "objectives": [float(v) for v in self.objectives],
            "initial_objective": float(self.initial_objective),
            "step_size": float(self.step_size),
            "stop_reason": self.stop_reason,
        }


# --- filtered backprojection ---

def _ramp_kernel(n_det: int, delta: float, fft_len: int) -> np.ndarray:
    """Band-limited ramp filter sampled in the spatial domain."""
    h = np.zeros(fft_len)
    h[0] = 1.0 / (4.0 * delta * delta)
    odd = np.arange(1, n_det, 2)
    vals = -1.0 / (np.pi * odd * delta) ** 2
    h[odd] = vals
    h[fft_len - odd] = vals
    return h


def fbp(sino, n: int, pixel_size_mm: "float | None" = None,
        filter_name: str = "ramlak", fov_mask: bool = True) -> np.ndarray:
    """Fan-beam filtered backprojection onto an n x n grid.

    Detector rows are cosine-weighted, ramp-filtered through a zero-padded
    FFT (length >= 2 D), then backprojected with inverse-square distance
    weights. Assumes the schedule covers the circle roughly uniformly.

    The default grid spans the scan field of view (pixel size
    fan_width_at_origin / n). Pixels outside the scan circle are seen by
    only a fraction of the fans and reconstruct to garbage; ``fov_mask``
    zeroes them, like the circle option of parallel-beam iradon codes.
    """
    if n < 8:
        raise ConfigError(f"n must be >= 8, got {n}")
    if filter_name not in ("ramlak", "hamming"):
        raise ConfigError(f"unknown filter {filter_name!r}")
    geo = sino.geometry
    if pixel_size_mm is None:
        pixel_size_mm = geo.fan_width_at_origin_mm / n
    P, D = sino.data.shape
    sod = geo.sod_mm

    # detector coordinates rescaled to the plane through the rotation centre
    u = geo.element_offsets_mm() * (sod / geo.sdd_mm)
    delta = geo.pitch_at_origin_mm
    weighted = sino.data * (sod / np.sqrt(sod * sod + u * u))[None, :]

    fft_len = 1 << int(math.ceil(math.log2(2 * D)))
    kernel_f = np.fft.rfft(_ramp_kernel(D, delta, fft_len))
    if filter_name == "hamming":
        freq = np.fft.rfftfreq(fft_len, d=delta)
        kernel_f = kernel_f * (0.54 + 0.46 * np.cos(np.pi * freq * 2.0 * delta))
    filtered = np.fft.irfft(np.fft.rfft(weighted, fft_len, axis=1) * kernel_f[None],
                            fft_len, axis=1)[:, :D] * delta

    c = (n - 1) / 2.0
    ix = np.arange(n, dtype=np.float64)
    x = (ix - c) * pixel_size_mm
    y = x.copy()
    xg = x[None, :]
    yg = y[:, None]

    sense = 1.0 if geo.rotation_sense == COUNTER_CLOCKWISE else -1.0
    angles = np.deg2rad(sino.angles_deg()) * sense
    acc = np.zeros((n, n))
    for i in range(P):
        ca, sa = math.cos(angles[i]), math.sin(angles[i])
        denom = sod - (xg * ca + yg * sa)
        tang = -xg * sa + yg * ca
        safe = denom > 1e-9
        up = np.where(safe, sod * tang / np.where(safe, denom, 1.0), 0.0)
        vals = np.interp(up, u, filtered[i], left=0.0, right=0.0)
        w2 = np.where(safe, (sod / np.where(safe, denom, 1.0)) ** 2, 0.0)
        acc += vals * w2
    acc *= math.pi / P
    if fov_mask:
        r_fov = geo.fan_width_at_origin_mm / 2.0
        acc[xg * xg + yg * yg >= r_fov * r_fov] = 0.0
    return acc


def fbp_volume(sino, n: int, pixel_size_mm=None, filter_name="ramlak",
               fov_mask: bool = True) -> ReconVolume:
    img = fbp(sino, n, pixel_size_mm=pixel_size_mm, filter_name=filter_name,
              fov_mask=fov_mask)
    if pixel_size_mm is None:
        pixel_size_mm = sino.geometry.fan_width_at_origin_mm / n
    return ReconVolume(frames=img[None], pixel_size_mm=float(pixel_size_mm))


# --- shared solver plumbing ---

def _build_operator(parts, n, pixel_size_mm, backend=None):
    geo = parts[0].geometry
    for p in parts:
        if p.geometry != geo:
            raise ConfigError("all frame sinograms must share one geometry")
    ops = [FanBeamProjector(geo, p.angles_deg(), n, pixel_size_mm, backend=backend)
           for p in parts]
    op = make_temporal_operator(ops)
    m = np.concatenate([p.data.reshape(-1) for p in parts])
    return op, m


def _wavelet_pair(spec: WaveletSpec, shape):
    """Forward/inverse closures matching a (T, n, n) iterate."""
    T = shape[0]
    if spec.dims == 3:
        spec.validate_shape(shape)
        return (lambda z: forward_coeffs(spec, z),
                lambda z: inverse_coeffs(spec, z))
    if spec.dims == 2 and T == 1:
        spec.validate_shape(shape[1:])
        return (lambda z: forward_coeffs(spec, z[0])[None],
                lambda z: inverse_coeffs(spec, z[0])[None])
    raise ShapeError(
        f"wavelet dims {spec.dims} does not fit a stack of {T} frames"
    )


def tune_alpha_sparsity(coefficients, target_fraction: float) -> float:
    """Threshold keeping ceil(target_fraction * len) coefficients nonzero.

    This is the (1 - target_fraction) quantile of the magnitudes; an all-zero
    input returns 0.
    """
    if not (0.0 < target_fraction < 1.0):
        raise ConfigError(
            f"target_fraction must lie in (0, 1), got {target_fraction}"
        )
    a = np.abs(np.asarray(coefficients, dtype=np.float64).reshape(-1))
    keep = int(math.ceil(target_fraction * a.size))
    if keep >= a.size:
        return 0.0
    # value at descending rank `keep`: survivors are strictly above it
    return float(np.partition(a, a.size - keep - 1)[a.size - keep - 1])


def _pdfp_core(op: LinearOperator, m: np.ndarray, shape, wavelet: WaveletSpec,
               alpha: float, alpha_mode: str, sparsity_fraction: float,
               max_iters: int, tol: float, gamma, nonneg: bool):
    if alpha_mode not in ("fixed", "sparsity_target"):
        raise ConfigError(f"unknown alpha_mode {alpha_mode!r}")
    if alpha_mode == "fixed" and alpha < 0:
        raise ConfigError(f"alpha must be nonnegative, got {alpha}")
    if max_iters < 1:
        raise ConfigError(f"max_iters must be >= 1, got {max_iters}")
    wf, wi = _wavelet_pair(wavelet, shape)
    t_start = time.perf_counter()
    norm = operator_norm_estimate(op, iters=30)
    if gamma is None:
        gamma = 1.99 / (norm * norm) if norm > 0 else 1.0
    project = (lambda z: np.maximum(z, 0.0)) if nonneg else (lambda z: z)

    x = np.zeros(shape)
    v = np.zeros(shape)
    residual = op.apply(x.reshape(-1)) - m
    initial_obj = 0.5 * float(residual @ residual)
    objectives = []
    stop = STOP_MAX_ITERS
    iters = 0
    for _ in range(max_iters):
        grad = op.adjoint_apply(residual).reshape(shape)
        base = x - gamma * grad
        y = project(base - wi(v))
        w = wf(y) + v
        if alpha_mode == "sparsity_target":
            tau = tune_alpha_sparsity(w, sparsity_fraction)
            alpha_now = tau / gamma
        else:
            tau = gamma * alpha
            alpha_now = alpha
        v = w - soft_threshold(w, tau)
        x_new = project(base - wi(v))

        residual = op.apply(x_new.reshape(-1)) - m
        obj = 0.5 * float(residual @ residual)
        if alpha_now > 0:
            obj += alpha_now * float(np.abs(wf(x_new)).sum())
        objectives.append(obj)
        iters += 1

        denom = np.linalg.norm(x)
        rel = np.linalg.norm(x_new - x) / denom if denom > 0 else np.inf
        x = x_new
        if initial_obj > 0 and obj > DIVERGENCE_FACTOR * initial_obj:
            stop = STOP_DIVERGED
            break
        if rel < tol:
            stop = STOP_CONVERGED
            break

    report = SolverReport(
        algorithm="pdfp", iterations=iters, objectives=tuple(objectives),
        initial_objective=initial_obj, step_size=float(gamma),
        stop_reason=stop, wall_time_s=time.perf_counter() - t_start,
    )
    return x, report


def pdfp_wavelet(parts, n: int, pixel_size_mm: float,
                 wavelet: "WaveletSpec | None" = None, alpha: float = 0.0,
                 alpha_mode: str = "fixed", sparsity_fraction: float = 0.25,
                 max_iters: int = 500, tol: float = 1e-5, gamma=None,
                 nonneg: bool = True, partition: "FramePartition | None" = None,
                 backend=None):
    """Primal-dual fixed-point reconstruction of partitioned sinograms.

    ``parts`` is one Sinogram per frame (same geometry). The iterate is the
    whole (T, n, n) animation; with T > 1 the sparsifying transform runs over
    all three axes. Steps: gradient of the data term (step gamma, default
    1.99 / |A|^2), projection onto the nonnegative orthant, and a dual
    soft-threshold through the wavelet transform. Returns the stack and a
    SolverReport; on divergence the partial iterate is still returned with
    stop_reason "diverged".
    """
    parts = list(parts)
    if not parts:
        raise ConfigError("need at least one frame sinogram")
    T = len(parts)
    if wavelet is None:
        dims = 3 if T > 1 else 2
        wavelet = WaveletSpec(family="haar", levels=default_levels(dims), dims=dims)
    op, m = _build_operator(parts, n, pixel_size_mm, backend=backend)
    x, report = _pdfp_core(op, m, (T, n, n), wavelet, alpha, alpha_mode,
                           sparsity_fraction, max_iters, tol, gamma, nonneg)
    vol = ReconVolume(frames=x, pixel_size_mm=float(pixel_size_mm),
                      partition=partition)
    return vol, report


def _nuclear_norm_tall(mat: np.ndarray) -> float:
    w = np.linalg.eigvalsh(mat.T @ mat)
    return float(np.sqrt(np.clip(w, 0.0, None)).sum())


def _lps_core(op: LinearOperator, m: np.ndarray, shape, wavelet: WaveletSpec,
              mu_l: float, mu_s: float, max_iters: int, tol: float, step):
    T, n, _ = shape
    if T < 2:
        raise ConfigError(f"low-rank split needs at least 2 frames, got {T}")
    if mu_l < 0 or mu_s < 0:
        raise ConfigError("mu_l and mu_s must be nonnegative")
    if max_iters < 1:
        raise ConfigError(f"max_iters must be >= 1, got {max_iters}")
    if wavelet.dims != 2:
        raise ConfigError("the sparse component uses a per-frame 2D transform")
    wavelet.validate_shape(shape[1:])

    t_start = time.perf_counter()
    norm = operator_norm_estimate(op, iters=30)
    if step is None:
        step = 1.0 / (norm * norm) if norm > 0 else 1.0

    low = np.zeros(shape)
    sparse = np.zeros(shape)
    residual = op.apply((low + sparse).reshape(-1)) - m
    initial_obj = 0.5 * float(residual @ residual)
    objectives = []
    stop = STOP_MAX_ITERS
    iters = 0
    for _ in range(max_iters):
        grad = op.adjoint_apply(residual).reshape(shape)
        mid = (low + sparse) - step * grad

        mat = (mid - sparse).reshape(T, n * n).T  # columns are time steps
        low_new = svt(mat, mu_l * step).T.reshape(shape)

        sparse_new = np.empty(shape)
        l1_sum = 0.0
        for t in range(T):
            coeff = forward_coeffs(wavelet, mid[t] - low_new[t])
            shrunk = soft_threshold(coeff, mu_s * step)
            l1_sum += float(np.abs(shrunk).sum())
            sparse_new[t] = inverse_coeffs(wavelet, shrunk)

        residual = op.apply((low_new + sparse_new).reshape(-1)) - m
        obj = 0.5 * float(residual @ residual)
        if mu_l > 0:
            obj += mu_l * _nuclear_norm_tall(low_new.reshape(T, n * n).T)
        if mu_s > 0:
            obj += mu_s * l1_sum
        objectives.append(obj)
        iters += 1

        denom = math.hypot(np.linalg.norm(low), np.linalg.norm(sparse))
        delta = math.hypot(np.linalg.norm(low_new - low),
                           np.linalg.norm(sparse_new - sparse))
        rel = delta / denom if denom > 0 else np.inf
        low, sparse = low_new, sparse_new
        if initial_obj > 0 and obj > DIVERGENCE_FACTOR * initial_obj:
            stop = STOP_DIVERGED
            break
        if rel < tol:
            stop = STOP_CONVERGED
            break

    report = SolverReport(
        algorithm="lps", iterations=iters, objectives=tuple(objectives),
        initial_objective=initial_obj, step_size=float(step),
        stop_reason=stop, wall_time_s=time.perf_counter() - t_start,
    )
    return low, sparse, report


def lps(parts, n: int, pixel_size_mm: float,
        wavelet: "WaveletSpec | None" = None, mu_l: float = 0.0,
        mu_s: float = 0.0, max_iters: int = 120, tol: float = 1e-5,
        step=None, partition: "FramePartition | None" = None, backend=None):
    """Low-rank plus sparse decomposition of a partitioned acquisition.

    Proximal-gradient alternation with step 1 / |A|^2: a gradient step on the
    joint variable, singular-value thresholding of the background matrix
    (pixels x time, so the SVD cost is tiny), then per-frame 2D wavelet
    shrinkage of the remainder. Neither component is forced nonnegative.
    Returns (low ReconVolume, sparse ReconVolume, SolverReport).
    """
    parts = list(parts)
    if len(parts) < 2:
        raise ConfigError("low-rank split needs at least 2 frame sinograms")
    T = len(parts)
    if wavelet is None:
        wavelet = WaveletSpec(family="db4", levels=default_levels(2), dims=2)
    op, m = _build_operator(parts, n, pixel_size_mm, backend=backend)
    low, sparse, report = _lps_core(op, m, (T, n, n), wavelet, mu_l, mu_s,
                                    max_iters, tol, step)
    low_vol = ReconVolume(frames=low, pixel_size_mm=float(pixel_size_mm),
                          partition=partition)
    sparse_vol = ReconVolume(frames=sparse, pixel_size_mm=float(pixel_size_mm),
                             partition=partition)
    return low_vol, sparse_vol, report


# --- metrics ---

def dilate_mask(mask: np.ndarray, radius: int) -> np.ndarray:
    """Binary dilation by a (2 radius + 1) square structuring element."""
    if radius < 0:
        raise ConfigError(f"radius must be >= 0, got {radius}")
    out = mask.astype(bool).copy()
    src = mask.astype(bool)
    ny, nx = mask.shape
    for dy in range(-radius, radius + 1):
        for dx in range(-radius, radius + 1):
            if dy == 0 and dx == 0:
                continue
            ys = slice(max(dy, 0), ny + min(dy, 0))
            xs = slice(max(dx, 0), nx + min(dx, 0))
            yd = slice(max(-dy, 0), ny + min(-dy, 0))
            xd = slice(max(-dx, 0), nx + min(-dx, 0))
            out[yd, xd] |= src[ys, xs]
    return out


def block_mask(truth, t: int, dilate_px: int = 0) -> np.ndarray:
    """Pixel mask of the moving block in ground-truth frame t."""
    if truth.block is None or truth.block_centers_mm is None:
        raise ConfigError("ground truth carries no block trajectory")
    n = truth.grid_n
    p = truth.pixel_size_mm
    c = (n - 1) / 2.0
    coords = (np.arange(n) - c) * p
    offset = truth.block_centers_mm[t] - truth.block_centers_mm[0]
    prim = truth.block.translated(tuple(offset))
    mask = prim.covers(coords[None, :], coords[:, None])
    if dilate_px > 0:
        mask = dilate_mask(mask, dilate_px)
    return mask


def _weighted_centroid_mm(frame: np.ndarray, mask: np.ndarray,
                          pixel_size_mm: float):
    w = np.where(mask, np.maximum(frame, 0.0), 0.0)
    total = w.sum()
    if total <= 0:
        return None
    n = frame.shape[0]
    c = (n - 1) / 2.0
    coords = (np.arange(n) - c) * pixel_size_mm
    cx = float((w * coords[None, :]).sum() / total)
    cy = float((w * coords[:, None]).sum() / total)
    return (cx, cy)


def metrics(recon: ReconVolume, truth, dilate_px: int = 2) -> dict:
    """Per-frame PSNR, relative L2 error and block-centroid error.

    The centroid comparison restricts the reconstruction to the true block
    footprint dilated by ``dilate_px`` pixels and weights pixel positions by
    the (clipped nonnegative) reconstructed intensity; it is skipped when the
    truth has no block trajectory.
    """
    r = recon.frames
    t = truth.frames
    if r.shape != t.shape:
        raise ShapeError(f"reconstruction {r.shape} vs truth {t.shape}")
    peak = float(t.max())
    if peak <= 0:
        raise DataError("ground truth has no positive values")

    T = r.shape[0]
    psnr = np.empty(T)
    rel = np.empty(T)
    for k in range(T):
        diff = r[k] - t[k]
        rmse = float(np.sqrt(np.mean(diff * diff)))
        psnr[k] = np.inf if rmse == 0 else 20.0 * math.log10(peak / rmse)
        tn = float(np.linalg.norm(t[k]))
        dn = float(np.linalg.norm(diff))
        rel[k] = dn / tn if tn > 0 else (0.0 if dn == 0 else np.inf)

    out = {"psnr_db": psnr, "rel_l2": rel, "centroid_err_mm": None}
    if getattr(truth, "block", None) is not None and \
            truth.block_centers_mm is not None:
        errs = np.empty(T)
        for k in range(T):
            mask = block_mask(truth, k, dilate_px=dilate_px)
            cen = _weighted_centroid_mm(r[k], mask, truth.pixel_size_mm)
            if cen is None:
                errs[k] = np.inf
                continue
            true_c = truth.block_centers_mm[k]
            errs[k] = math.hypot(cen[0] - true_c[0], cen[1] - true_c[1])
        out["centroid_err_mm"] = errs
    return out


def _center_pad_crop(frames: np.ndarray, n_target: int) -> np.ndarray:
    T, ny, nx = frames.shape
    out = frames
    for axis, size in ((1, ny), (2, nx)):
        cur = out.shape[axis]
        if cur > n_target:
            lo = (cur - n_target) // 2
            sl = [slice(None)] * 3
            sl[axis] = slice(lo, lo + n_target)
            out = out[tuple(sl)]
        elif cur < n_target:
            lo = (n_target - cur) // 2
            pad = [(0, 0)] * 3
            pad[axis] = (lo, n_target - cur - lo)
            out = np.pad(out, pad)
    return out


def crop_pad_resample(frames: np.ndarray, n_target: int, factor: int,
                      margin_target_px: int = 10) -> np.ndarray:
    """Bring a finer-grid stack onto a coarser grid without stretching.

    ``factor`` is the integer pixel-size ratio (source finer). For factor > 1
    a border of ``margin_target_px`` coarse pixels is cropped away first, the
    remainder is block-averaged, and the result is centre-padded back to
    ``n_target``; a 560 grid to a 280 grid goes 560 -> 520 -> 260 -> 280.
    Factor 1 is a plain centre pad/crop.
    """
    frames = np.asarray(frames, dtype=np.float64)
    squeeze = frames.ndim == 2
    if squeeze:
        frames = frames[None]
    if frames.ndim != 3:
        raise ShapeError(f"expected (T, n, n) frames, got {frames.shape}")
    if factor < 1:
        raise ConfigError(f"factor must be >= 1, got {factor}")
    if factor > 1:
        ny = frames.shape[1]
        crop = margin_target_px * factor
        keep = ny - 2 * crop
        if keep <= 0 or keep % factor != 0:
            raise ConfigError(
                f"grid of {ny} cannot be reduced by factor {factor} "
                f"with a {margin_target_px}-pixel margin"
            )
        trimmed = frames[:, crop:ny - crop, crop:ny - crop]
        small = keep // factor
        frames = trimmed.reshape(frames.shape[0], small, factor, small,
                                 factor).mean(axis=(2, 4))
    out = _center_pad_crop(frames, n_target)
    return out[0] if squeeze else out
