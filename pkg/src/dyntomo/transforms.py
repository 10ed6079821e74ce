"""Orthogonal wavelet transforms, soft thresholding and singular value
thresholding.

The wavelet transform is separable, multi-level and periodic, over 1, 2 or 3
axes. Coefficients live in a packed array the same shape as the input: after
each level the low-pass (approximation) part occupies the leading half of
every transformed axis and the next level recurses on that corner. Periodic
extension keeps the transform exactly orthogonal, so the inverse is the
adjoint and energy is preserved.
"""

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError, ShapeError

_SQRT3 = math.sqrt(3.0)

# orthonormal low-pass filters; high-pass follows by alternating-sign reversal
_LOWPASS = {
    "haar": np.array([1.0, 1.0]) / math.sqrt(2.0),
    "db4": np.array([1.0 + _SQRT3, 3.0 + _SQRT3, 3.0 - _SQRT3, 1.0 - _SQRT3])
    / (4.0 * math.sqrt(2.0)),
}

_FAMILY_ALIASES = {
    "haar": "haar",
    "db4": "db4",
    "daubechies4": "db4",
}


def _highpass(h: np.ndarray) -> np.ndarray:
    L = h.size
    m = np.arange(L)
    return ((-1.0) ** m) * h[L - 1 - m]


def default_levels(dims: int) -> int:
    """Decomposition depth used when none is requested."""
    return 2 if dims == 3 else 3


@dataclass(frozen=True)
class WaveletSpec:
    """Transform family, depth and dimensionality.

    The input array must have exactly ``dims`` axes and every axis length must
    be divisible by 2**levels. Only periodic boundary handling is supported.
    """

    family: str = "haar"
    levels: int = 3
    dims: int = 2
    boundary: str = "periodic"

    def __post_init__(self):
        fam = _FAMILY_ALIASES.get(str(self.family).lower())
        if fam is None:
            raise ConfigError(
                f"unknown wavelet family {self.family!r}; "
                f"choose from {sorted(set(_FAMILY_ALIASES))}"
            )
        object.__setattr__(self, "family", fam)
        if self.levels < 1:
            raise ConfigError(f"levels must be >= 1, got {self.levels}")
        if self.dims not in (1, 2, 3):
            raise ConfigError(f"dims must be 1, 2 or 3, got {self.dims}")
        if self.boundary != "periodic":
            raise ConfigError(f"only periodic boundary supported, got {self.boundary!r}")
        h = _LOWPASS[fam]
        g = _highpass(h)
        # orthonormality of the filter pair
        if abs(h @ h - 1.0) > 1e-12 or abs(h @ g) > 1e-12:
            raise ConfigError(f"filter pair for {fam!r} is not orthonormal")

    @property
    def lowpass(self) -> np.ndarray:
        return _LOWPASS[self.family].copy()

    @property
    def highpass(self) -> np.ndarray:
        return _highpass(_LOWPASS[self.family])

    def required_divisor(self) -> int:
        return 1 << self.levels

    def validate_shape(self, shape):
        if len(shape) != self.dims:
            raise ShapeError(
                f"expected a {self.dims}D array, got shape {tuple(shape)}"
            )
        div = self.required_divisor()
        for ax, s in enumerate(shape):
            if s % div != 0 or s == 0:
                raise ShapeError(
                    f"axis {ax} length {s} not divisible by 2^levels = {div}"
                )

    def to_dict(self) -> dict:
        return {"family": self.family, "levels": self.levels, "dims": self.dims}

    @staticmethod
    def from_dict(d: dict) -> "WaveletSpec":
        return WaveletSpec(
            family=d.get("family", "haar"),
            levels=int(d.get("levels", 3)),
            dims=int(d.get("dims", 2)),
        )


def _analysis_axis(x, h, g, axis):
    x = np.moveaxis(x, axis, -1)
    N = x.shape[-1]
    half = N // 2
    idx = (2 * np.arange(half)[:, None] + np.arange(h.size)[None, :]) % N
    windows = x[..., idx]
    out = np.concatenate([windows @ h, windows @ g], axis=-1)
    return np.moveaxis(out, -1, axis)


def _synthesis_axis(y, h, g, axis):
    y = np.moveaxis(y, axis, -1)
    N = y.shape[-1]
    half = N // 2
    a = y[..., :half]
    d = y[..., half:]
    out = np.zeros_like(y)
    n = np.arange(N)
    for m in range(h.size):
        # tap m feeds outputs of matching parity: x[n] += h[m] a[(n-m)/2 mod half]
        sel = np.nonzero((n - m) % 2 == 0)[0]
        k = ((sel - m) // 2) % half
        out[..., sel] += a[..., k] * h[m] + d[..., k] * g[m]
    return np.moveaxis(out, -1, axis)


def forward_coeffs(spec: WaveletSpec, x: np.ndarray) -> np.ndarray:
    """Packed multi-level transform; output array has the input's shape."""
    x = np.asarray(x, dtype=np.float64)
    spec.validate_shape(x.shape)
    h = spec.lowpass
    g = spec.highpass
    out = x.copy()
    sizes = list(x.shape)
    for _ in range(spec.levels):
        region = tuple(slice(0, s) for s in sizes)
        sub = out[region]
        for ax in range(x.ndim):
            sub = _analysis_axis(sub, h, g, ax)
        out[region] = sub
        sizes = [s // 2 for s in sizes]
    return out


def inverse_coeffs(spec: WaveletSpec, y: np.ndarray) -> np.ndarray:
    """Exact inverse of forward_coeffs (the transform is orthogonal)."""
    y = np.asarray(y, dtype=np.float64)
    spec.validate_shape(y.shape)
    h = spec.lowpass
    g = spec.highpass
    out = y.copy()
    for lev in reversed(range(spec.levels)):
        sizes = [s >> lev for s in y.shape]
        region = tuple(slice(0, s) for s in sizes)
        sub = out[region]
        for ax in reversed(range(y.ndim)):
            sub = _synthesis_axis(sub, h, g, ax)
        out[region] = sub
    return out


@dataclass(frozen=True)
class Subband:
    """One orientation at one level of the packed layout."""

    level: int  # 1 = finest
    orientation: str  # 'a'/'d' per axis, e.g. "ad" or "ddd"
    slices: tuple


@dataclass(frozen=True)
class CoefficientBlock:
    """Wavelet coefficients with their subband layout.

    ``packed`` is the in-place layout produced by forward_coeffs; ``coeffs``
    exposes the same memory as a flat vector. Subbands are addressed by level
    (1 = finest) and an orientation string with one 'a' (low-pass) or 'd'
    (high-pass) letter per axis; the all-'a' band exists only at the deepest
    level.
    """

    packed: np.ndarray
    spec: WaveletSpec

    def __post_init__(self):
        p = np.ascontiguousarray(self.packed, dtype=np.float64)
        object.__setattr__(self, "packed", p)
        self.spec.validate_shape(p.shape)

    @property
    def coeffs(self) -> np.ndarray:
        return self.packed.reshape(-1)

    @property
    def shape(self) -> tuple:
        return self.packed.shape

    def layout(self) -> list:
        out = []
        shape = self.packed.shape
        d = len(shape)
        for lev in range(1, self.spec.levels + 1):
            halves = [s >> lev for s in shape]
            for code in range(1 << d):
                orient = "".join("d" if code >> (d - 1 - ax) & 1 else "a"
                                 for ax in range(d))
                if "d" not in orient and lev != self.spec.levels:
                    continue
                slices = tuple(
                    slice(halves[ax], 2 * halves[ax]) if o == "d"
                    else slice(0, halves[ax])
                    for ax, o in enumerate(orient)
                )
                out.append(Subband(level=lev, orientation=orient, slices=slices))
        return out

    def subband(self, level: int, orientation: str) -> np.ndarray:
        for sb in self.layout():
            if sb.level == level and sb.orientation == orientation:
                return self.packed[sb.slices]
        raise ShapeError(
            f"no subband at level {level} with orientation {orientation!r}"
        )


def dwt_forward(spec: WaveletSpec, x: np.ndarray) -> CoefficientBlock:
    return CoefficientBlock(packed=forward_coeffs(spec, x), spec=spec)


def dwt_inverse(spec: WaveletSpec, c) -> np.ndarray:
    if isinstance(c, CoefficientBlock):
        if c.spec != spec:
            raise ShapeError(
                f"coefficient layout {c.spec} does not match requested {spec}"
            )
        c = c.packed
    return inverse_coeffs(spec, c)


def soft_threshold(x, lam: float):
    """Elementwise shrink toward zero: sign(x) * max(|x| - lam, 0)."""
    if lam < 0:
        raise ConfigError(f"threshold must be nonnegative, got {lam}")
    x = np.asarray(x, dtype=np.float64)
    return np.sign(x) * np.maximum(np.abs(x) - lam, 0.0)


def svt(M: np.ndarray, lam: float) -> np.ndarray:
    """Singular value thresholding of a tall matrix via its small Gram matrix.

    Soft-thresholds the singular values: U max(S - lam, 0) V^T. The thin SVD
    comes from the T x T eigendecomposition of M^T M, so cost scales with the
    number of columns, not rows.
    """
    if lam < 0:
        raise ConfigError(f"threshold must be nonnegative, got {lam}")
    M = np.asarray(M, dtype=np.float64)
    if M.ndim != 2:
        raise ShapeError(f"expected a matrix, got shape {M.shape}")
    if not np.all(np.isfinite(M)):
        raise DataError("matrix contains non-finite entries")
    gram = M.T @ M
    w, V = np.linalg.eigh(gram)
    sig = np.sqrt(np.clip(w, 0.0, None))
    keep = np.maximum(sig - lam, 0.0)
    # columns of M @ V are U_i * sig_i; rescale to U_i * keep_i
    scale = np.divide(keep, sig, out=np.zeros_like(sig), where=sig > 0)
    return (M @ V) @ (scale[:, None] * V.T)
