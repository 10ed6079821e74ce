"""Synthetic dynamic phantom: analytic primitives, block motion, rasterization.

The scene mimics a rotating test object: a plastic pipe annulus, a static
L-shaped insert, and a square block that translates between frames. Frames are
rasterized on the reconstruction grid by supersampled point sampling; where
primitives overlap, the one painted last wins, so the moving block occludes
whatever it passes over instead of adding to it.

Image array convention: ``frame[iy, ix]`` holds the pixel centred at
``x = (ix - (n-1)/2) * pixel_size`` and ``y = (iy - (n-1)/2) * pixel_size`` mm.
"""

import math
import warnings
from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigError

DEFAULT_CLEAN_FLOOR = 1.9e-3


class OutOfFieldWarning(UserWarning):
    """The moving block extends beyond the rasterized image field."""


# ---------------------------------------------------------------------------
# primitives


@dataclass(frozen=True)
class Disk:
    center_mm: tuple
    radius_mm: float
    attenuation: float

    def __post_init__(self):
        if self.radius_mm <= 0:
            raise ConfigError(f"disk radius must be positive, got {self.radius_mm}")

    def covers(self, x, y):
        dx = x - self.center_mm[0]
        dy = y - self.center_mm[1]
        return dx * dx + dy * dy <= self.radius_mm * self.radius_mm

    def bbox_mm(self):
        cx, cy = self.center_mm
        r = self.radius_mm
        return (cx - r, cy - r, cx + r, cy + r)

    def translated(self, delta_mm):
        cx, cy = self.center_mm
        return replace(self, center_mm=(cx + delta_mm[0], cy + delta_mm[1]))


@dataclass(frozen=True)
class Annulus:
    center_mm: tuple
    r_inner_mm: float
    r_outer_mm: float
    attenuation: float

    def __post_init__(self):
        if not 0 <= self.r_inner_mm < self.r_outer_mm:
            raise ConfigError(
                f"need 0 <= r_inner < r_outer, got {self.r_inner_mm}, {self.r_outer_mm}"
            )

    def covers(self, x, y):
        dx = x - self.center_mm[0]
        dy = y - self.center_mm[1]
        d2 = dx * dx + dy * dy
        return (d2 >= self.r_inner_mm * self.r_inner_mm) & (
            d2 <= self.r_outer_mm * self.r_outer_mm
        )

    def bbox_mm(self):
        cx, cy = self.center_mm
        r = self.r_outer_mm
        return (cx - r, cy - r, cx + r, cy + r)

    def translated(self, delta_mm):
        cx, cy = self.center_mm
        return replace(self, center_mm=(cx + delta_mm[0], cy + delta_mm[1]))


@dataclass(frozen=True)
class Rectangle:
    center_mm: tuple
    width_mm: float
    height_mm: float
    attenuation: float
    rotation_deg: float = 0.0

    def __post_init__(self):
        if self.width_mm <= 0 or self.height_mm <= 0:
            raise ConfigError("rectangle sides must be positive")

    def covers(self, x, y):
        dx = x - self.center_mm[0]
        dy = y - self.center_mm[1]
        th = math.radians(self.rotation_deg)
        c, s = math.cos(th), math.sin(th)
        lx = c * dx + s * dy
        ly = -s * dx + c * dy
        return (np.abs(lx) <= self.width_mm / 2.0) & (np.abs(ly) <= self.height_mm / 2.0)

    def bbox_mm(self):
        th = math.radians(self.rotation_deg)
        c, s = abs(math.cos(th)), abs(math.sin(th))
        hx = (self.width_mm * c + self.height_mm * s) / 2.0
        hy = (self.width_mm * s + self.height_mm * c) / 2.0
        cx, cy = self.center_mm
        return (cx - hx, cy - hy, cx + hx, cy + hy)

    def translated(self, delta_mm):
        cx, cy = self.center_mm
        return replace(self, center_mm=(cx + delta_mm[0], cy + delta_mm[1]))


@dataclass(frozen=True)
class Polygon:
    """Simple polygon, vertices in order; interior by even-odd rule."""

    vertices_mm: tuple
    attenuation: float

    def __post_init__(self):
        if len(self.vertices_mm) < 3:
            raise ConfigError("polygon needs at least 3 vertices")

    def covers(self, x, y):
        inside = np.zeros(np.broadcast(x, y).shape, dtype=bool)
        verts = self.vertices_mm
        j = len(verts) - 1
        for i in range(len(verts)):
            xi, yi = verts[i]
            xj, yj = verts[j]
            crosses = (yi > y) != (yj > y)
            with np.errstate(divide="ignore", invalid="ignore"):
                xint = (xj - xi) * (y - yi) / (yj - yi) + xi
            inside ^= crosses & (x < xint)
            j = i
        return inside

    def bbox_mm(self):
        xs = [v[0] for v in self.vertices_mm]
        ys = [v[1] for v in self.vertices_mm]
        return (min(xs), min(ys), max(xs), max(ys))

    def translated(self, delta_mm):
        verts = tuple((vx + delta_mm[0], vy + delta_mm[1]) for vx, vy in self.vertices_mm)
        return replace(self, vertices_mm=verts)


def primitive_to_dict(prim) -> dict:
    """Serialize a shape primitive to plain types for container headers."""
    if isinstance(prim, Disk):
        return {"type": "disk", "center_mm": list(prim.center_mm),
                "radius_mm": prim.radius_mm, "attenuation": prim.attenuation}
    if isinstance(prim, Annulus):
        return {"type": "annulus", "center_mm": list(prim.center_mm),
                "r_inner_mm": prim.r_inner_mm, "r_outer_mm": prim.r_outer_mm,
                "attenuation": prim.attenuation}
    if isinstance(prim, Rectangle):
        return {"type": "rectangle", "center_mm": list(prim.center_mm),
                "width_mm": prim.width_mm, "height_mm": prim.height_mm,
                "attenuation": prim.attenuation,
                "rotation_deg": prim.rotation_deg}
    if isinstance(prim, Polygon):
        return {"type": "polygon",
                "vertices_mm": [list(v) for v in prim.vertices_mm],
                "attenuation": prim.attenuation}
    raise ConfigError(f"cannot serialize primitive {type(prim).__name__}")


def primitive_from_dict(d: dict):
    kind = d.get("type")
    if kind == "disk":
        return Disk(center_mm=tuple(d["center_mm"]),
                    radius_mm=d["radius_mm"], attenuation=d["attenuation"])
    if kind == "annulus":
        return Annulus(center_mm=tuple(d["center_mm"]),
                       r_inner_mm=d["r_inner_mm"], r_outer_mm=d["r_outer_mm"],
                       attenuation=d["attenuation"])
    if kind == "rectangle":
        return Rectangle(center_mm=tuple(d["center_mm"]),
                         width_mm=d["width_mm"], height_mm=d["height_mm"],
                         attenuation=d["attenuation"],
                         rotation_deg=d.get("rotation_deg", 0.0))
    if kind == "polygon":
        return Polygon(vertices_mm=tuple(tuple(v) for v in d["vertices_mm"]),
                       attenuation=d["attenuation"])
    raise ConfigError(f"unknown primitive type {kind!r}")


# ---------------------------------------------------------------------------
# motion profiles


def _unit(direction):
    d = np.asarray(direction, dtype=np.float64)
    n = float(np.hypot(d[0], d[1]))
    if n == 0.0:
        raise ConfigError("motion direction must be a nonzero vector")
    return (d[0] / n, d[1] / n)


@dataclass(frozen=True)
class Static:
    pass


@dataclass(frozen=True)
class ConstantStep:
    direction: tuple
    step_mm: float

    def __post_init__(self):
        object.__setattr__(self, "direction", _unit(self.direction))


@dataclass(frozen=True)
class Periodic:
    direction: tuple
    amplitude_mm: float
    period_frames: float

    def __post_init__(self):
        object.__setattr__(self, "direction", _unit(self.direction))
        if self.period_frames <= 0:
            raise ConfigError(f"period must be positive, got {self.period_frames}")


@dataclass(frozen=True)
class Jump:
    direction: tuple
    offset_mm: float
    jump_frame: int

    def __post_init__(self):
        object.__setattr__(self, "direction", _unit(self.direction))
        if self.jump_frame < 0:
            raise ConfigError(f"jump_frame must be >= 0, got {self.jump_frame}")


def block_position(profile, t: int, origin_mm) -> tuple:
    """Block centre at frame t for a motion profile anchored at origin_mm."""
    if t < 0:
        raise ConfigError(f"frame index must be >= 0, got {t}")
    ox, oy = origin_mm
    if isinstance(profile, Static):
        return (ox, oy)
    if isinstance(profile, ConstantStep):
        dx, dy = profile.direction
        s = profile.step_mm * t
        return (ox + s * dx, oy + s * dy)
    if isinstance(profile, Periodic):
        dx, dy = profile.direction
        s = profile.amplitude_mm * math.sin(2.0 * math.pi * t / profile.period_frames)
        return (ox + s * dx, oy + s * dy)
    if isinstance(profile, Jump):
        if t < profile.jump_frame:
            return (ox, oy)
        dx, dy = profile.direction
        return (ox + profile.offset_mm * dx, oy + profile.offset_mm * dy)
    raise ConfigError(f"unknown motion profile {type(profile).__name__}")


# ---------------------------------------------------------------------------
# scene and rasterization


@dataclass(frozen=True)
class PhantomScene:
    """Ordered static primitives plus one moving block painted on top.

    ``block`` may be None for a fully static scene; its own centre is the
    motion origin (position at t=0 for every shipped profile).
    """

    primitives: tuple
    block: "Rectangle | Disk | Polygon | None"
    motion: "Static | ConstantStep | Periodic | Jump"

    def block_center_at(self, t: int):
        if self.block is None:
            return None
        return block_position(self.motion, t, _shape_center(self.block))

    def block_at(self, t: int):
        if self.block is None:
            return None
        origin = _shape_center(self.block)
        cx, cy = block_position(self.motion, t, origin)
        return self.block.translated((cx - origin[0], cy - origin[1]))


def _shape_center(prim):
    if isinstance(prim, Polygon):
        xs = [v[0] for v in prim.vertices_mm]
        ys = [v[1] for v in prim.vertices_mm]
        return (sum(xs) / len(xs), sum(ys) / len(ys))
    return prim.center_mm


def _subpixel_offsets(pixel_size_mm: float, supersample: int):
    if supersample < 1:
        raise ConfigError(f"supersample must be >= 1, got {supersample}")
    k = np.arange(supersample, dtype=np.float64)
    return ((k + 0.5) / supersample - 0.5) * pixel_size_mm


def _paint(prims, xs, ys):
    """Sample the scene at points (xs, ys): value of the last covering primitive."""
    out = np.zeros(np.broadcast(xs, ys).shape, dtype=np.float64)
    for prim in prims:
        out = np.where(prim.covers(xs, ys), prim.attenuation, out)
    return out


def _grid_coords(n: int, pixel_size_mm: float):
    c = (np.arange(n, dtype=np.float64) - (n - 1) / 2.0) * pixel_size_mm
    return c


def _rasterize(prims, n, pixel_size_mm, supersample, ix_lo=0, ix_hi=None, iy_lo=0, iy_hi=None):
    """Supersampled rasterization of an ordered primitive list on a grid window."""
    if ix_hi is None:
        ix_hi = n
    if iy_hi is None:
        iy_hi = n
    coords = _grid_coords(n, pixel_size_mm)
    cx = coords[ix_lo:ix_hi]
    cy = coords[iy_lo:iy_hi]
    offs = _subpixel_offsets(pixel_size_mm, supersample)
    acc = np.zeros((len(cy), len(cx)), dtype=np.float64)
    for oy in offs:
        ysub = (cy + oy)[:, None]
        for ox in offs:
            xsub = (cx + ox)[None, :]
            acc += _paint(prims, xsub, ysub)
    acc /= supersample * supersample
    return acc


def _block_window(block, n, pixel_size_mm):
    """Pixel index window that can be touched by the block, one pixel of slack."""
    x0, y0, x1, y1 = block.bbox_mm()
    half = (n - 1) / 2.0
    ix_lo = int(np.floor(x0 / pixel_size_mm + half)) - 1
    ix_hi = int(np.ceil(x1 / pixel_size_mm + half)) + 2
    iy_lo = int(np.floor(y0 / pixel_size_mm + half)) - 1
    iy_hi = int(np.ceil(y1 / pixel_size_mm + half)) + 2
    clipped = ix_lo < -1 or iy_lo < -1 or ix_hi > n + 1 or iy_hi > n + 1
    return (
        max(ix_lo, 0),
        min(ix_hi, n),
        max(iy_lo, 0),
        min(iy_hi, n),
        clipped,
    )


def rasterize_frame(scene: PhantomScene, n: int, pixel_size_mm: float, t: int,
                    supersample: int = 4) -> np.ndarray:
    """Rasterize one frame of the scene onto an n x n grid.

    Returns an (n, n) float64 image of attenuation values. A moving block that
    extends beyond the image field raises :class:`OutOfFieldWarning` but the
    frame is still produced (the block is clipped by the field edge).
    """
    if n < 1 or pixel_size_mm <= 0:
        raise ConfigError("need n >= 1 and a positive pixel size")
    prims = list(scene.primitives)
    blk = scene.block_at(t)
    if blk is not None:
        prims.append(blk)
        *_, clipped = _block_window(blk, n, pixel_size_mm)
        if clipped:
            warnings.warn(
                f"moving block leaves the image field at frame {t}", OutOfFieldWarning
            )
    return _rasterize(prims, n, pixel_size_mm, supersample)


@dataclass(frozen=True)
class GroundTruth:
    """Rasterized animation plus the block trajectory that generated it."""

    frames: np.ndarray  # (T, n, n) float64
    pixel_size_mm: float
    block_centers_mm: "np.ndarray | None"  # (T, 2) or None
    block: "Rectangle | Disk | Polygon | None" = None
    out_of_field_frames: tuple = ()

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def grid_n(self) -> int:
        return self.frames.shape[1]


def generate_ground_truth(scene: PhantomScene, n: int, pixel_size_mm: float,
                          n_frames: int, supersample: int = 4) -> GroundTruth:
    """Rasterize all frames of a scene.

    The static layer is rasterized once; each frame re-rasterizes only the
    window of pixels the block can touch, with the full primitive stack, so the
    result is identical to calling :func:`rasterize_frame` per frame.
    """
    if n_frames < 1:
        raise ConfigError(f"n_frames must be >= 1, got {n_frames}")
    static_img = _rasterize(list(scene.primitives), n, pixel_size_mm, supersample)
    frames = np.empty((n_frames, n, n), dtype=np.float64)
    centers = None
    oof = []
    if scene.block is None:
        frames[:] = static_img[None]
    else:
        centers = np.empty((n_frames, 2), dtype=np.float64)
        prims = list(scene.primitives)
        for t in range(n_frames):
            blk = scene.block_at(t)
            centers[t] = _shape_center(blk)
            ix_lo, ix_hi, iy_lo, iy_hi, clipped = _block_window(blk, n, pixel_size_mm)
            if clipped:
                oof.append(t)
            frames[t] = static_img
            if ix_hi > ix_lo and iy_hi > iy_lo:
                frames[t, iy_lo:iy_hi, ix_lo:ix_hi] = _rasterize(
                    prims + [blk], n, pixel_size_mm, supersample,
                    ix_lo, ix_hi, iy_lo, iy_hi,
                )
    if oof:
        warnings.warn(
            f"moving block leaves the image field in {len(oof)} frame(s)",
            OutOfFieldWarning,
        )
    return GroundTruth(
        frames=frames,
        pixel_size_mm=pixel_size_mm,
        block_centers_mm=centers,
        block=scene.block,
        out_of_field_frames=tuple(oof),
    )


def threshold_clean(frames: np.ndarray, floor: float = DEFAULT_CLEAN_FLOOR) -> np.ndarray:
    """Zero every entry below the floor; removes rasterization dust.

    Idempotent: applying it twice equals applying it once.
    """
    if floor < 0:
        raise ConfigError(f"floor must be >= 0, got {floor}")
    out = np.asarray(frames, dtype=np.float64).copy()
    out[out < floor] = 0.0
    return out


# ---------------------------------------------------------------------------
# reference scene

PIPE_R_OUTER_MM = 40.0
PIPE_R_INNER_MM = 36.0
BLOCK_SIDE_MM = 15.0

# L-shaped insert standing in for the cut static object, upper half of the bore
_L_SHAPE_VERTICES = (
    (-22.0, 4.0),
    (22.0, 4.0),
    (22.0, 16.0),
    (6.0, 16.0),
    (6.0, 10.0),
    (-22.0, 10.0),
)


def stempo_scene(motion, mu_pipe: float = 0.8, mu_hdpe: float = 1.0,
                 block_start_mm=(-17.95, -12.0)) -> PhantomScene:
    """Reference scene: pipe annulus, static L insert, moving square block.

    The default block start centres a 35.9 mm constant-step run (360 frames at
    0.10 mm) inside the pipe bore with clearance from the wall.
    """
    return PhantomScene(
        primitives=(
            Annulus((0.0, 0.0), PIPE_R_INNER_MM, PIPE_R_OUTER_MM, mu_pipe),
            Polygon(_L_SHAPE_VERTICES, mu_hdpe),
        ),
        block=Rectangle(tuple(block_start_mm), BLOCK_SIDE_MM, BLOCK_SIDE_MM, mu_hdpe),
        motion=motion,
    )
