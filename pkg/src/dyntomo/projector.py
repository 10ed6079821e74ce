"""Matrix-free fan-beam projection operators.

The forward operator integrates an image along source-to-detector-element rays
(Joseph-style: bilinear interpolation at midpoint samples spaced at most one
pixel apart); the adjoint scatters the same weights back, so the pair is an
exact algebraic transpose. A block-diagonal wrapper stacks per-frame operators
for dynamic problems.
"""

from dataclasses import dataclass

import numpy as np

from . import backends
from .errors import ConfigError, ShapeError
from .geometry import COUNTER_CLOCKWISE, FanBeamGeometry


class LinearOperator:
    """Minimal matrix-free operator: flat vectors in, flat vectors out."""

    rows: int
    cols: int

    def apply(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def adjoint_apply(self, y: np.ndarray) -> np.ndarray:
        raise NotImplementedError


@dataclass(frozen=True)
class RayTable:
    """Per-ray sampling data shared by both kernel backends."""

    src_x: np.ndarray
    src_y: np.ndarray
    dir_x: np.ndarray
    dir_y: np.ndarray
    t0: np.ndarray
    step: np.ndarray
    nsamp: np.ndarray  # int64


def build_ray_table(geometry: FanBeamGeometry, angles_deg, n: int,
                    pixel_size_mm: float) -> RayTable:
    """Clip every source->element ray against the image square and fix its sampling.

    Samples are midpoints of ``nsamp = ceil(len/pixel)`` equal slices of the
    clipped segment, so the step never exceeds one pixel size.
    """
    angles = np.asarray(angles_deg, dtype=np.float64)
    sense = 1.0 if geometry.rotation_sense == COUNTER_CLOCKWISE else -1.0
    a = np.deg2rad(angles) * sense
    cos_a, sin_a = np.cos(a), np.sin(a)

    sod, sdd = geometry.sod_mm, geometry.sdd_mm
    u = geometry.element_offsets_mm()  # (D,)

    src_x = (sod * cos_a)[:, None] + 0.0 * u[None, :]
    src_y = (sod * sin_a)[:, None] + 0.0 * u[None, :]
    end_x = (-(sdd - sod) * cos_a)[:, None] + u[None, :] * (-sin_a)[:, None]
    end_y = (-(sdd - sod) * sin_a)[:, None] + u[None, :] * cos_a[:, None]

    dx = end_x - src_x
    dy = end_y - src_y
    length = np.hypot(dx, dy)
    dir_x = dx / length
    dir_y = dy / length

    half_w = n * pixel_size_mm / 2.0
    with np.errstate(divide="ignore", invalid="ignore"):
        tx1 = (-half_w - src_x) / dir_x
        tx2 = (half_w - src_x) / dir_x
        ty1 = (-half_w - src_y) / dir_y
        ty2 = (half_w - src_y) / dir_y
    tx_lo = np.nan_to_num(np.minimum(tx1, tx2), nan=-np.inf)
    tx_hi = np.nan_to_num(np.maximum(tx1, tx2), nan=np.inf)
    ty_lo = np.nan_to_num(np.minimum(ty1, ty2), nan=-np.inf)
    ty_hi = np.nan_to_num(np.maximum(ty1, ty2), nan=np.inf)
    t_lo = np.maximum(np.maximum(tx_lo, ty_lo), 0.0)
    t_hi = np.minimum(np.minimum(tx_hi, ty_hi), length)

    seg = np.maximum(t_hi - t_lo, 0.0)
    nsamp = np.ceil(seg / pixel_size_mm).astype(np.int64)
    with np.errstate(divide="ignore", invalid="ignore"):
        step = np.where(nsamp > 0, seg / np.maximum(nsamp, 1), 0.0)

    flat = lambda z: np.ascontiguousarray(z.reshape(-1))
    return RayTable(
        src_x=flat(src_x), src_y=flat(src_y),
        dir_x=flat(dir_x), dir_y=flat(dir_y),
        t0=flat(t_lo), step=flat(step), nsamp=flat(nsamp),
    )


class FanBeamProjector(LinearOperator):
    """Fan-beam projection of an n x n image onto P x D detector rows.

    Parameters
    ----------
    geometry : FanBeamGeometry
    angles_deg : sequence of float
        Source position angles, one per projection.
    n : int
        Image grid side length.
    pixel_size_mm : float
        Image pixel size; also the ray sampling interval.
    """

    def __init__(self, geometry: FanBeamGeometry, angles_deg, n: int,
                 pixel_size_mm: float, backend: "str | None" = None):
        if n < 1:
            raise ConfigError(f"n must be >= 1, got {n}")
        if pixel_size_mm <= 0:
            raise ConfigError(f"pixel_size_mm must be positive, got {pixel_size_mm}")
        angles = np.atleast_1d(np.asarray(angles_deg, dtype=np.float64))
        if angles.size < 1:
            raise ConfigError("need at least one projection angle")
        self.geometry = geometry
        self.angles_deg = angles
        self.n = int(n)
        self.pixel_size_mm = float(pixel_size_mm)
        self.n_proj = angles.size
        self.n_det = geometry.detector_count
        self.rows = self.n_proj * self.n_det
        self.cols = self.n * self.n
        self._table = build_ray_table(geometry, angles, self.n, self.pixel_size_mm)
        self._kernels = backends.get_kernels(backend)

    def forward(self, image: np.ndarray) -> np.ndarray:
        if image.shape != (self.n, self.n):
            raise ShapeError(f"expected image {(self.n, self.n)}, got {image.shape}")
        img = np.ascontiguousarray(image, dtype=np.float64)
        flat = self._kernels.forward(img, self._table, self.pixel_size_mm, self.n)
        return flat.reshape(self.n_proj, self.n_det)

    def adjoint(self, sino: np.ndarray) -> np.ndarray:
        if sino.shape != (self.n_proj, self.n_det):
            raise ShapeError(
                f"expected sinogram {(self.n_proj, self.n_det)}, got {sino.shape}"
            )
        s = np.ascontiguousarray(sino, dtype=np.float64).reshape(-1)
        return self._kernels.adjoint(s, self._table, self.pixel_size_mm, self.n)

    def apply(self, x: np.ndarray) -> np.ndarray:
        return self.forward(np.asarray(x).reshape(self.n, self.n)).reshape(-1)

    def adjoint_apply(self, y: np.ndarray) -> np.ndarray:
        return self.adjoint(np.asarray(y).reshape(self.n_proj, self.n_det)).reshape(-1)


class BlockDiagonalOperator(LinearOperator):
    """Stack of independent operators acting on concatenated vectors."""

    def __init__(self, blocks):
        blocks = list(blocks)
        if not blocks:
            raise ConfigError("block-diagonal operator needs at least one block")
        self.blocks = blocks
        self.rows = sum(b.rows for b in blocks)
        self.cols = sum(b.cols for b in blocks)
        self._row_splits = np.cumsum([b.rows for b in blocks])[:-1]
        self._col_splits = np.cumsum([b.cols for b in blocks])[:-1]

    def apply(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x).reshape(-1)
        if x.size != self.cols:
            raise ShapeError(f"expected {self.cols} entries, got {x.size}")
        parts = np.split(x, self._col_splits)
        return np.concatenate([b.apply(p) for b, p in zip(self.blocks, parts)])

    def adjoint_apply(self, y: np.ndarray) -> np.ndarray:
        y = np.asarray(y).reshape(-1)
        if y.size != self.rows:
            raise ShapeError(f"expected {self.rows} entries, got {y.size}")
        parts = np.split(y, self._row_splits)
        return np.concatenate([b.adjoint_apply(p) for b, p in zip(self.blocks, parts)])


def make_temporal_operator(per_frame_ops) -> BlockDiagonalOperator:
    """Block-diagonal operator over time steps, one projector per frame."""
    return BlockDiagonalOperator(per_frame_ops)


def operator_norm_estimate(op: LinearOperator, iters: int = 30, seed: int = 0) -> float:
    """Largest singular value of ``op`` by the power method on the normal operator.

    The returned Rayleigh-quotient estimate is nondecreasing in ``iters`` and
    approaches the true norm from below. Deterministic for a fixed seed.
    """
    if iters < 1:
        raise ConfigError(f"iters must be >= 1, got {iters}")
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(op.cols)
    nx = np.linalg.norm(x)
    if nx == 0.0:
        return 0.0
    x /= nx
    est = 0.0
    for _ in range(iters):
        ax = op.apply(x)
        est = float(np.linalg.norm(ax))
        if est == 0.0:
            return 0.0
        x = op.adjoint_apply(ax)
        nx = np.linalg.norm(x)
        if nx == 0.0:
            return est
        x /= nx
    return est
