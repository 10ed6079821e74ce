"""Fan-beam acquisition geometry and projection-angle schedules.

Conventions used throughout the package:

* right-handed image coordinates, origin at the rotation centre, units mm;
* the source sits at radius ``sod_mm`` and the flat detector line at
  ``sdd_mm - sod_mm`` beyond the origin, both rotating together;
* a projection's angle is the source position angle, measured
  counter-clockwise from the +x axis in degrees.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ScheduleIndexError

# base pitch of the physical detector before binning, mm
BASE_DETECTOR_PITCH_MM = 0.05
BASE_DETECTOR_COUNT = 2240

VALID_BINNINGS = (1, 2, 4, 8, 16, 32)

COUNTER_CLOCKWISE = "counter_clockwise"
CLOCKWISE = "clockwise"


@dataclass(frozen=True)
class FanBeamGeometry:
    """Distances and detector layout of a 2D fan-beam scanner.

    Parameters
    ----------
    sod_mm : float
        Source-to-origin (rotation centre) distance.
    sdd_mm : float
        Source-to-detector distance, must exceed ``sod_mm``.
    detector_count : int
        Number of detector elements in the fan.
    detector_pitch_mm : float
        Physical element spacing on the detector line.
    rotation_sense : str
        ``"counter_clockwise"`` (default) or ``"clockwise"``; the direction in
        which the source-detector pair advances for increasing angles.
    """

    sod_mm: float
    sdd_mm: float
    detector_count: int
    detector_pitch_mm: float
    rotation_sense: str = COUNTER_CLOCKWISE

    def __post_init__(self):
        if not (0.0 < self.sod_mm < self.sdd_mm):
            raise ConfigError(
                f"need 0 < sod < sdd, got sod={self.sod_mm}, sdd={self.sdd_mm}"
            )
        if self.detector_count < 1:
            raise ConfigError(f"detector_count must be >= 1, got {self.detector_count}")
        if self.detector_pitch_mm <= 0.0:
            raise ConfigError(
                f"detector_pitch_mm must be positive, got {self.detector_pitch_mm}"
            )
        if self.rotation_sense not in (COUNTER_CLOCKWISE, CLOCKWISE):
            raise ConfigError(f"unknown rotation_sense {self.rotation_sense!r}")

    @property
    def magnification(self) -> float:
        return self.sdd_mm / self.sod_mm

    @property
    def pitch_at_origin_mm(self) -> float:
        """Detector pitch rescaled to the virtual detector through the origin."""
        return self.detector_pitch_mm / self.magnification

    @property
    def fan_width_at_origin_mm(self) -> float:
        return self.detector_count * self.pitch_at_origin_mm

    def element_offsets_mm(self) -> np.ndarray:
        """Signed lateral offsets of element centres on the physical detector."""
        j = np.arange(self.detector_count, dtype=np.float64)
        return (j - (self.detector_count - 1) / 2.0) * self.detector_pitch_mm

    def to_dict(self) -> dict:
        return {
            "sod_mm": self.sod_mm,
            "sdd_mm": self.sdd_mm,
            "detector_count": self.detector_count,
            "detector_pitch_mm": self.detector_pitch_mm,
            "rotation_sense": self.rotation_sense,
        }

    @staticmethod
    def from_dict(d: dict) -> "FanBeamGeometry":
        return FanBeamGeometry(
            sod_mm=float(d["sod_mm"]),
            sdd_mm=float(d["sdd_mm"]),
            detector_count=int(d["detector_count"]),
            detector_pitch_mm=float(d["detector_pitch_mm"]),
            rotation_sense=d.get("rotation_sense", COUNTER_CLOCKWISE),
        )


def stempo_geometry(binning: int = 8) -> FanBeamGeometry:
    """Scanner geometry of the reference micro-CT rig at a given detector binning."""
    if binning not in VALID_BINNINGS:
        raise ConfigError(f"binning must be one of {VALID_BINNINGS}, got {binning}")
    return FanBeamGeometry(
        sod_mm=410.66,
        sdd_mm=553.74,
        detector_count=BASE_DETECTOR_COUNT // binning,
        detector_pitch_mm=BASE_DETECTOR_PITCH_MM * binning,
    )


def effective_pixel_size(geometry: FanBeamGeometry, binning: int) -> float:
    """Image pixel size implied by a binning level: (0.05 * binning) / magnification."""
    if binning not in VALID_BINNINGS:
        raise ConfigError(f"binning must be one of {VALID_BINNINGS}, got {binning}")
    return (BASE_DETECTOR_PITCH_MM * binning) / geometry.magnification


class SamplingSchedule:
    """Base class: a finite ordered list of projection angles."""

    n_proj: int

    def angle_of(self, i: int) -> float:
        raise NotImplementedError

    def angles_deg(self) -> np.ndarray:
        return np.array([self.angle_of(i) for i in range(self.n_proj)])

    def _check_index(self, i: int):
        if not 0 <= i < self.n_proj:
            raise ScheduleIndexError(
                f"projection index {i} outside schedule of {self.n_proj}"
            )

    def to_dict(self) -> dict:
        raise NotImplementedError

    @staticmethod
    def from_dict(d: dict) -> "SamplingSchedule":
        kind = d["type"]
        if kind == "continuous":
            return Continuous(int(d["n_proj"]), float(d["step_deg"]))
        if kind == "sequential":
            return Sequential(
                int(d["n_proj"]), float(d["step_deg"]), int(d["rotations"])
            )
        if kind == "custom":
            return Custom([float(a) for a in d["angles_deg"]])
        raise ConfigError(f"unknown schedule type {kind!r}")


@dataclass(frozen=True)
class Continuous(SamplingSchedule):
    """Single sweep: projection i at (i * step_deg) mod 360."""

    n_proj: int
    step_deg: float

    def __post_init__(self):
        if self.n_proj < 1:
            raise ConfigError(f"n_proj must be >= 1, got {self.n_proj}")
        if self.step_deg <= 0.0:
            raise ConfigError(f"step_deg must be positive, got {self.step_deg}")

    def angle_of(self, i: int) -> float:
        self._check_index(i)
        return (i * self.step_deg) % 360.0

    def to_dict(self) -> dict:
        return {"type": "continuous", "n_proj": self.n_proj, "step_deg": self.step_deg}


@dataclass(frozen=True)
class Sequential(SamplingSchedule):
    """Repeated sparse sweeps: `rotations` full turns sharing one angle grid.

    Consistency requires n_proj * step_deg == rotations * 360, so the grid of
    360/step distinct angles is revisited exactly `rotations` times.
    """

    n_proj: int
    step_deg: float
    rotations: int

    def __post_init__(self):
        if self.n_proj < 1:
            raise ConfigError(f"n_proj must be >= 1, got {self.n_proj}")
        if self.step_deg <= 0.0:
            raise ConfigError(f"step_deg must be positive, got {self.step_deg}")
        if self.rotations < 1:
            raise ConfigError(f"rotations must be >= 1, got {self.rotations}")
        if abs(self.n_proj * self.step_deg - self.rotations * 360.0) > 1e-9:
            raise ConfigError(
                "inconsistent sequential schedule: "
                f"{self.n_proj} * {self.step_deg} deg != {self.rotations} * 360 deg"
            )

    def angle_of(self, i: int) -> float:
        self._check_index(i)
        return (i * self.step_deg) % 360.0

    @property
    def angles_per_rotation(self) -> int:
        return self.n_proj // self.rotations

    def to_dict(self) -> dict:
        return {
            "type": "sequential",
            "n_proj": self.n_proj,
            "step_deg": self.step_deg,
            "rotations": self.rotations,
        }


@dataclass(frozen=True)
class Custom(SamplingSchedule):
    """Explicit angle list, normalised to [0, 360)."""

    raw_angles_deg: list = field(default_factory=list)

    def __post_init__(self):
        if len(self.raw_angles_deg) < 1:
            raise ConfigError("custom schedule needs at least one angle")

    @property
    def n_proj(self) -> int:
        return len(self.raw_angles_deg)

    def angle_of(self, i: int) -> float:
        self._check_index(i)
        return float(self.raw_angles_deg[i]) % 360.0

    def to_dict(self) -> dict:
        return {
            "type": "custom",
            "angles_deg": [float(a) % 360.0 for a in self.raw_angles_deg],
        }


def seq8x45() -> Sequential:
    """The 8-degree, 8-rotation sequential schedule: 360 projections, 45 per turn."""
    return Sequential(n_proj=360, step_deg=8.0, rotations=8)


def cont360() -> Continuous:
    """One full turn at 1-degree steps."""
    return Continuous(n_proj=360, step_deg=1.0)
