"""Measured data containers and the intensity -> attenuation pipeline.

An IntensityStack holds raw (or simulated) photon counts, one detector row per
projection. Log-transforming against a per-projection flat-region mean gives a
Sinogram of line integrals. Binning always happens on intensities, before the
log transform.
"""

import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import (
    AngleLookupError,
    ConfigError,
    DataError,
    PartitionError,
    ShapeError,
)
from .geometry import Custom, FanBeamGeometry, SamplingSchedule
from .phantom import GroundTruth
from .projector import FanBeamProjector

ANGLE_MATCH_TOL_DEG = 1e-9


@dataclass(frozen=True)
class Sinogram:
    """Log-transformed projection data, one detector row per projection."""

    data: np.ndarray  # (P, D) float64
    geometry: FanBeamGeometry
    schedule: SamplingSchedule
    binning: int = 1
    frame_of_projection: "np.ndarray | None" = None

    def __post_init__(self):
        d = np.asarray(self.data, dtype=np.float64)
        object.__setattr__(self, "data", d)
        if d.ndim != 2:
            raise ShapeError(f"sinogram data must be 2D, got shape {d.shape}")
        if d.shape[0] != self.schedule.n_proj:
            raise ShapeError(
                f"{d.shape[0]} rows but schedule has {self.schedule.n_proj} projections"
            )
        if d.shape[1] != self.geometry.detector_count:
            raise ShapeError(
                f"{d.shape[1]} columns but geometry has "
                f"{self.geometry.detector_count} detector elements"
            )
        if not np.all(np.isfinite(d)):
            raise DataError("sinogram contains non-finite values")
        if self.frame_of_projection is not None:
            f = np.asarray(self.frame_of_projection, dtype=np.int64)
            object.__setattr__(self, "frame_of_projection", f)
            if f.shape != (d.shape[0],):
                raise ShapeError("frame_of_projection must have one entry per row")

    @property
    def n_proj(self) -> int:
        return self.data.shape[0]

    @property
    def n_det(self) -> int:
        return self.data.shape[1]

    def angles_deg(self) -> np.ndarray:
        return self.schedule.angles_deg()


def default_flat_region(detector_count: int) -> tuple:
    """Leftmost detector columns clear of the reference object's shadow.

    The 80 mm reference phantom leaves roughly 1.1 mm of fan margin per side,
    about detector_count/128 columns, so the default band stays inside that.
    Wider objects need an explicit flat_region.
    """
    width = max(1, detector_count // 128)
    return (0, width)


@dataclass(frozen=True)
class IntensityStack:
    """Photon-count rows before the log transform.

    ``flat_region`` is a (start, stop) column span known to lie outside the
    object shadow; its per-projection mean estimates the unattenuated intensity.
    """

    projections: np.ndarray  # (P, D) float64, counts
    flat_region: tuple
    binning: int = 1

    def __post_init__(self):
        p = np.asarray(self.projections, dtype=np.float64)
        object.__setattr__(self, "projections", p)
        if p.ndim != 2:
            raise ShapeError(f"intensity stack must be 2D, got {p.shape}")
        lo, hi = self.flat_region
        if not (0 <= lo < hi <= p.shape[1]):
            raise ConfigError(
                f"flat region [{lo}, {hi}) outside detector width {p.shape[1]}"
            )
        if np.any(~np.isfinite(p)) or np.any(p < 0):
            raise DataError("intensities must be finite and nonnegative")

    @property
    def n_proj(self) -> int:
        return self.projections.shape[0]


def to_sinogram(stack: IntensityStack, geometry: FanBeamGeometry,
                schedule: SamplingSchedule,
                frame_of_projection=None) -> Sinogram:
    """Log transform: data[i, j] = ln(I0_i / I[i, j]).

    I0_i is the flat-region mean of projection i. Any non-positive intensity
    makes the log undefined and raises DataError naming the element.
    """
    p = stack.projections
    if p.shape[1] != geometry.detector_count:
        raise ShapeError(
            f"stack width {p.shape[1]} != detector count {geometry.detector_count}"
        )
    if p.shape[0] != schedule.n_proj:
        raise ShapeError(
            f"stack has {p.shape[0]} projections, schedule {schedule.n_proj}"
        )
    bad = np.argwhere(p <= 0.0)
    if bad.size:
        i, j = bad[0]
        raise DataError(f"non-positive intensity at projection {i}, element {j}")
    lo, hi = stack.flat_region
    i0 = p[:, lo:hi].mean(axis=1)
    if np.any(i0 <= 0.0):
        i = int(np.argmax(i0 <= 0.0))
        raise DataError(f"non-positive flat-region mean at projection {i}")
    data = np.log(i0[:, None] / p)
    return Sinogram(data=data, geometry=geometry, schedule=schedule,
                    binning=stack.binning, frame_of_projection=frame_of_projection)


def bin_intensities(stack: IntensityStack, factor: int) -> IntensityStack:
    """Sum factor x factor detector blocks into one element.

    Each stored row stands for a band of ``factor`` identical physical detector
    rows (the synthetic object is uniform along the collapsed axis), so the
    block sum is ``factor`` times the horizontal group sum. Output width is
    input width / factor; factor 1 is the identity.
    """
    if factor < 1:
        raise ConfigError(f"factor must be >= 1, got {factor}")
    if factor == 1:
        return stack
    p = stack.projections
    if p.shape[1] % factor != 0:
        raise ShapeError(f"width {p.shape[1]} not divisible by factor {factor}")
    grouped = p.reshape(p.shape[0], p.shape[1] // factor, factor).sum(axis=2)
    lo, hi = stack.flat_region
    new_lo = lo // factor
    new_hi = max(new_lo + 1, hi // factor)
    return IntensityStack(projections=factor * grouped,
                          flat_region=(new_lo, new_hi),
                          binning=stack.binning * factor)


def simulate_measurement(gt: GroundTruth, geometry: FanBeamGeometry,
                         schedule: SamplingSchedule, photons_i0: float = 1e5,
                         seed: int = 0, frame_of_projection=None,
                         flat_region=None, backend=None):
    """Forward-project a ground-truth animation and sample Poisson counts.

    Projection i sees frame ``frame_of_projection[i]`` (default: frame i, or
    frame 0 for a single-frame truth). ``photons_i0 = math.inf`` skips noise:
    intensities are exp(-s) with a unit flat field, so the returned sinogram
    equals the clean line integrals exactly. Counts are drawn from one
    counter-based stream per projection, so the realisation for a given seed
    does not depend on evaluation order.

    Returns (IntensityStack, Sinogram).
    """
    P = schedule.n_proj
    T = gt.n_frames
    if frame_of_projection is None:
        if T == 1:
            fmap = np.zeros(P, dtype=np.int64)
        else:
            if P > T:
                raise ConfigError(
                    f"schedule has {P} projections but ground truth only {T} frames"
                )
            fmap = np.arange(P, dtype=np.int64)
    else:
        fmap = np.asarray(frame_of_projection, dtype=np.int64)
        if fmap.shape != (P,):
            raise ShapeError("frame_of_projection must have one entry per projection")
        if fmap.min() < 0 or fmap.max() >= T:
            raise ConfigError("frame_of_projection index outside ground truth")
    if not (photons_i0 > 0):
        raise ConfigError(f"photons_i0 must be positive, got {photons_i0}")

    n = gt.grid_n
    D = geometry.detector_count
    angles = np.array([schedule.angle_of(i) for i in range(P)])
    clean = np.empty((P, D), dtype=np.float64)
    for f in np.unique(fmap):
        rows = np.nonzero(fmap == f)[0]
        proj = FanBeamProjector(geometry, angles[rows], n, gt.pixel_size_mm,
                                backend=backend)
        clean[rows] = proj.forward(gt.frames[f])

    if flat_region is None:
        flat_region = default_flat_region(D)

    if math.isinf(photons_i0):
        intensities = np.exp(-clean)
    else:
        intensities = np.empty_like(clean)
        lam = photons_i0 * np.exp(-clean)
        for i in range(P):
            rng = np.random.Generator(np.random.Philox(np.random.SeedSequence((seed, i))))
            intensities[i] = rng.poisson(lam[i])

    stack = IntensityStack(projections=intensities, flat_region=tuple(flat_region),
                           binning=1)
    sino = to_sinogram(stack, geometry, schedule, frame_of_projection=fmap)
    return stack, sino


def _match_angle(sched_angles, wanted_deg, consumed, occurrence):
    """Index of the matching projection, honouring occurrence selection."""
    w = wanted_deg % 360.0
    diff = np.abs(sched_angles - w)
    diff = np.minimum(diff, 360.0 - diff)  # wrap-around distance
    hits = np.nonzero(diff <= ANGLE_MATCH_TOL_DEG)[0]
    if occurrence is not None:
        if occurrence < 0 or occurrence >= hits.size:
            raise AngleLookupError(
                f"angle {wanted_deg} deg has {hits.size} occurrence(s), "
                f"requested occurrence {occurrence}"
            )
        return int(hits[occurrence])
    for h in hits:
        if not consumed[h]:
            return int(h)
    raise AngleLookupError(
        f"no unconsumed projection at angle {wanted_deg} deg"
        if hits.size else f"no projection at angle {wanted_deg} deg"
    )


def subsample(sino: Sinogram, angles_deg, occurrence: "int | None" = None) -> Sinogram:
    """Extract the projections at the requested angles.

    Matching tolerance is 1e-9 degrees. By default repeated requests for the
    same angle consume successive acquisitions in schedule order; passing
    ``occurrence`` always picks that occurrence (0-based) instead, which selects
    a single rotation out of a repeated sequential schedule.
    """
    sched_angles = sino.angles_deg()
    consumed = np.zeros(sino.n_proj, dtype=bool)
    rows = []
    for a in angles_deg:
        i = _match_angle(sched_angles, float(a), consumed, occurrence)
        consumed[i] = True
        rows.append(i)
    rows = np.array(rows, dtype=np.int64)
    fmap = None
    if sino.frame_of_projection is not None:
        fmap = sino.frame_of_projection[rows]
    return Sinogram(
        data=sino.data[rows].copy(),
        geometry=sino.geometry,
        schedule=Custom([float(sched_angles[i]) for i in rows]),
        binning=sino.binning,
        frame_of_projection=fmap,
    )


def partition_frames(sino: Sinogram, n_frames: int, per_frame: int,
                     stride: int) -> list:
    """Sliding-window split: frame k owns rows [k*stride, k*stride + per_frame).

    Returns a list of (Sinogram, frame_index) pairs. Raises PartitionError,
    reporting the required row count, when the last window does not fit.
    """
    if n_frames < 1 or per_frame < 1 or stride < 1:
        raise ConfigError("n_frames, per_frame and stride must all be >= 1")
    needed = (n_frames - 1) * stride + per_frame
    if needed > sino.n_proj:
        raise PartitionError(
            f"partition needs {needed} projections, sinogram has {sino.n_proj}"
        )
    sched_angles = sino.angles_deg()
    out = []
    for k in range(n_frames):
        lo = k * stride
        hi = lo + per_frame
        fmap = None
        if sino.frame_of_projection is not None:
            fmap = sino.frame_of_projection[lo:hi].copy()
        sub = Sinogram(
            data=sino.data[lo:hi].copy(),
            geometry=sino.geometry,
            schedule=Custom([float(a) for a in sched_angles[lo:hi]]),
            binning=sino.binning,
            frame_of_projection=fmap,
        )
        out.append((sub, k))
    return out
