"""DTOMO1 container: a text header plus a raw binary payload.

A dataset is a file pair: ``<base>.dtomo1`` holds a JSON key-value tree with
the magic string, payload kind, dimensions, element type and acquisition
metadata; ``<base>.dtomo1.bin`` holds the row-major little-endian array bytes.
Payload kinds are "sinogram" (projection-major), "image_stack" and
"intensity_stack" (frame-major). Saving then loading returns bit-identical
arrays; header writing is deterministic (sorted keys, fixed separators) so
reruns of a pipeline produce byte-identical files.
"""

import json
import os
from dataclasses import dataclass

import numpy as np

from .errors import DataError, ShapeError
from .geometry import FanBeamGeometry, SamplingSchedule
from .phantom import primitive_from_dict, primitive_to_dict
from .sinogram import IntensityStack, Sinogram

MAGIC = "DTOMO1"
HEADER_SUFFIX = ".dtomo1"
PAYLOAD_SUFFIX = ".dtomo1.bin"

_DTYPES = {"f32le": "<f4", "f64le": "<f8"}
_DTYPE_NAMES = {np.dtype("<f4"): "f32le", np.dtype("<f8"): "f64le"}

KINDS = ("sinogram", "image_stack", "intensity_stack")


def _base_path(path: str) -> str:
    if path.endswith(PAYLOAD_SUFFIX):
        return path[: -len(PAYLOAD_SUFFIX)]
    if path.endswith(HEADER_SUFFIX):
        return path[: -len(HEADER_SUFFIX)]
    return path


def _write_pair(base: str, header: dict, array: np.ndarray):
    arr = np.ascontiguousarray(array)
    if arr.dtype not in _DTYPE_NAMES:
        arr = arr.astype("<f8")
    header = dict(header)
    header["magic"] = MAGIC
    header["dims"] = list(arr.shape)
    header["element_type"] = _DTYPE_NAMES[arr.dtype.newbyteorder("<")]
    header["payload_file"] = os.path.basename(base) + PAYLOAD_SUFFIX
    header["payload_bytes"] = arr.nbytes
    text = json.dumps(header, sort_keys=True, indent=1, separators=(",", ": "))
    with open(base + HEADER_SUFFIX, "w") as f:
        f.write(text)
        f.write("\n")
    with open(base + PAYLOAD_SUFFIX, "wb") as f:
        f.write(arr.astype(arr.dtype.newbyteorder("<"), copy=False).tobytes())


def _read_pair(path: str):
    base = _base_path(path)
    header_path = base + HEADER_SUFFIX
    if not os.path.exists(header_path):
        raise FileNotFoundError(header_path)
    with open(header_path) as f:
        header = json.load(f)
    if header.get("magic") != MAGIC:
        raise DataError(f"{header_path}: bad magic {header.get('magic')!r}")
    kind = header.get("kind")
    if kind not in KINDS:
        raise DataError(f"{header_path}: unknown payload kind {kind!r}")
    et = header.get("element_type")
    if et not in _DTYPES:
        raise DataError(f"{header_path}: unknown element type {et!r}")
    payload_path = os.path.join(os.path.dirname(base) or ".", header["payload_file"])
    with open(payload_path, "rb") as f:
        raw = f.read()
    if len(raw) != header["payload_bytes"]:
        raise DataError(
            f"{payload_path}: expected {header['payload_bytes']} bytes, "
            f"got {len(raw)}"
        )
    arr = np.frombuffer(raw, dtype=_DTYPES[et]).reshape(header["dims"]).copy()
    return header, arr


def _geometry_block(g: FanBeamGeometry) -> dict:
    return g.to_dict()


def _schedule_block(s: SamplingSchedule) -> dict:
    return s.to_dict()


def save_sinogram(base: str, sino: Sinogram):
    header = {
        "kind": "sinogram",
        "geometry": _geometry_block(sino.geometry),
        "schedule": _schedule_block(sino.schedule),
        "binning": sino.binning,
    }
    if sino.frame_of_projection is not None:
        header["frame_of_projection"] = [int(v) for v in sino.frame_of_projection]
    _write_pair(_base_path(base), header, sino.data)


def load_sinogram(path: str) -> Sinogram:
    header, arr = _read_pair(path)
    if header["kind"] != "sinogram":
        raise DataError(f"expected a sinogram, found {header['kind']}")
    fmap = header.get("frame_of_projection")
    return Sinogram(
        data=arr.astype(np.float64, copy=False),
        geometry=FanBeamGeometry.from_dict(header["geometry"]),
        schedule=SamplingSchedule.from_dict(header["schedule"]),
        binning=int(header.get("binning", 1)),
        frame_of_projection=None if fmap is None else np.asarray(fmap),
    )


@dataclass(frozen=True)
class ImageStackPayload:
    """Loaded image stack with whatever metadata the header carried."""

    frames: np.ndarray  # (T, n, n)
    pixel_size_mm: float
    block_centers_mm: "np.ndarray | None" = None
    block: "object | None" = None  # shape primitive, for ground-truth stacks
    geometry: "FanBeamGeometry | None" = None
    schedule: "SamplingSchedule | None" = None
    binning: "int | None" = None


def save_image_stack(base: str, frames: np.ndarray, pixel_size_mm: float,
                     block_centers_mm=None, block=None, geometry=None,
                     schedule=None, binning=None, dtype=None):
    frames = np.asarray(frames)
    if frames.ndim == 2:
        frames = frames[None]
    if frames.ndim != 3:
        raise ShapeError(f"image stack must be (T, n, n), got {frames.shape}")
    header = {"kind": "image_stack", "pixel_size_mm": float(pixel_size_mm)}
    if block_centers_mm is not None:
        header["block_centers_mm"] = np.asarray(block_centers_mm).tolist()
    if block is not None:
        header["block"] = primitive_to_dict(block)
    if geometry is not None:
        header["geometry"] = _geometry_block(geometry)
    if schedule is not None:
        header["schedule"] = _schedule_block(schedule)
    if binning is not None:
        header["binning"] = int(binning)
    if dtype is not None:
        frames = frames.astype(dtype)
    _write_pair(_base_path(base), header, frames)


def load_image_stack(path: str) -> ImageStackPayload:
    header, arr = _read_pair(path)
    if header["kind"] != "image_stack":
        raise DataError(f"expected an image stack, found {header['kind']}")
    bc = header.get("block_centers_mm")
    blk = header.get("block")
    g = header.get("geometry")
    s = header.get("schedule")
    b = header.get("binning")
    return ImageStackPayload(
        frames=arr,
        pixel_size_mm=float(header["pixel_size_mm"]),
        block_centers_mm=None if bc is None else np.asarray(bc, dtype=np.float64),
        block=None if blk is None else primitive_from_dict(blk),
        geometry=None if g is None else FanBeamGeometry.from_dict(g),
        schedule=None if s is None else SamplingSchedule.from_dict(s),
        binning=None if b is None else int(b),
    )


def save_intensity_stack(base: str, stack: IntensityStack,
                         geometry: FanBeamGeometry, schedule: SamplingSchedule):
    header = {
        "kind": "intensity_stack",
        "geometry": _geometry_block(geometry),
        "schedule": _schedule_block(schedule),
        "binning": stack.binning,
        "flat_region": list(stack.flat_region),
    }
    _write_pair(_base_path(base), header, stack.projections)


def load_intensity_stack(path: str):
    """Returns (IntensityStack, FanBeamGeometry, SamplingSchedule)."""
    header, arr = _read_pair(path)
    if header["kind"] != "intensity_stack":
        raise DataError(f"expected an intensity stack, found {header['kind']}")
    stack = IntensityStack(
        projections=arr.astype(np.float64, copy=False),
        flat_region=tuple(header["flat_region"]),
        binning=int(header.get("binning", 1)),
    )
    return (stack, FanBeamGeometry.from_dict(header["geometry"]),
            SamplingSchedule.from_dict(header["schedule"]))


def load_kind(path: str) -> str:
    """Peek at the payload kind without reading the binary payload."""
    base = _base_path(path)
    with open(base + HEADER_SUFFIX) as f:
        header = json.load(f)
    if header.get("magic") != MAGIC:
        raise DataError(f"{base + HEADER_SUFFIX}: bad magic")
    return header["kind"]
