import numpy as np
import pytest

from dyntomo.errors import ConfigError, DataError, ShapeError
from dyntomo.transforms import (
    CoefficientBlock,
    WaveletSpec,
    default_levels,
    dwt_forward,
    dwt_inverse,
    forward_coeffs,
    inverse_coeffs,
    soft_threshold,
    svt,
)

SQRT2 = np.sqrt(2.0)


# --- spec construction ---

def test_spec_validation():
    WaveletSpec("haar", 2, 3)
    WaveletSpec("daubechies4", 1, 1)
    with pytest.raises(ConfigError):
        WaveletSpec("coiflet", 1, 2)
    with pytest.raises(ConfigError):
        WaveletSpec("haar", 0, 2)
    with pytest.raises(ConfigError):
        WaveletSpec("haar", 1, 4)
    with pytest.raises(ConfigError):
        WaveletSpec("haar", 1, 2, boundary="zero")


def test_family_aliases_normalise():
    assert WaveletSpec("Daubechies4", 1, 1).family == "db4"
    assert WaveletSpec("HAAR", 1, 1).family == "haar"


def test_filters_are_orthonormal():
    for fam in ("haar", "db4"):
        spec = WaveletSpec(fam, 1, 1)
        h, g = spec.lowpass, spec.highpass
        assert h @ h == pytest.approx(1.0, abs=1e-14)
        assert g @ g == pytest.approx(1.0, abs=1e-14)
        assert h @ g == pytest.approx(0.0, abs=1e-14)
        # low-pass DC gain sqrt(2), high-pass kills DC
        assert h.sum() == pytest.approx(SQRT2, abs=1e-14)
        assert g.sum() == pytest.approx(0.0, abs=1e-14)


def test_default_levels():
    assert default_levels(1) == 3
    assert default_levels(2) == 3
    assert default_levels(3) == 2


def test_shape_divisibility_enforced():
    spec = WaveletSpec("haar", 3, 2)
    with pytest.raises(ShapeError, match="2\\^levels = 8"):
        forward_coeffs(spec, np.zeros((12, 16)))
    with pytest.raises(ShapeError):
        forward_coeffs(spec, np.zeros(16))  # 1D array for a 2D spec
    forward_coeffs(spec, np.zeros((16, 24)))


# --- hand-checked values ---

def test_haar_one_level_hand_values():
    spec = WaveletSpec("haar", 1, 1)
    out = forward_coeffs(spec, np.array([1.0, 1.0, -1.0, -1.0]))
    assert np.allclose(out[:2], [SQRT2, -SQRT2], atol=1e-14)
    assert np.allclose(out[2:], [0.0, 0.0], atol=1e-14)


def test_constant_array_concentrates_in_deepest_scaling():
    for fam in ("haar", "db4"):
        for dims, shape in ((1, (32,)), (2, (16, 32)), (3, (8, 16, 16))):
            levels = 2
            spec = WaveletSpec(fam, levels, dims)
            c = 0.7
            out = forward_coeffs(spec, np.full(shape, c))
            expected_peak = c * 2.0 ** (levels * dims / 2.0)
            deep = tuple(slice(0, s >> levels) for s in shape)
            assert np.allclose(out[deep], expected_peak, atol=1e-10)
            rest = out.copy()
            rest[deep] = 0.0
            assert np.max(np.abs(rest)) < 1e-10


def test_perfect_reconstruction_random():
    rng = np.random.default_rng(0)
    cases = [
        ("haar", 1, 1, (64,)),
        ("haar", 3, 2, (64, 64)),
        ("haar", 2, 3, (16, 32, 32)),
        ("db4", 1, 1, (64,)),
        ("db4", 3, 2, (64, 64)),
        ("db4", 2, 3, (16, 32, 32)),
    ]
    for fam, levels, dims, shape in cases:
        spec = WaveletSpec(fam, levels, dims)
        for _ in range(5):
            x = rng.normal(size=shape)
            y = forward_coeffs(spec, x)
            back = inverse_coeffs(spec, y)
            scale = np.linalg.norm(x)
            assert np.linalg.norm(back - x) <= 1e-10 * scale
            # Parseval
            assert abs(np.linalg.norm(y) - scale) <= 1e-10 * scale


def test_forward_preserves_inner_products():
    rng = np.random.default_rng(1)
    spec = WaveletSpec("db4", 2, 2)
    for _ in range(5):
        x = rng.normal(size=(32, 32))
        y = rng.normal(size=(32, 32))
        wx = forward_coeffs(spec, x)
        wy = forward_coeffs(spec, y)
        lhs = float(np.vdot(wx, wy))
        rhs = float(np.vdot(x, y))
        assert lhs == pytest.approx(rhs, rel=1e-10, abs=1e-10)


def test_inverse_is_adjoint():
    # orthogonality: <Wx, y> == <x, W^-1 y>
    rng = np.random.default_rng(2)
    spec = WaveletSpec("db4", 2, 2)
    x = rng.normal(size=(32, 32))
    y = rng.normal(size=(32, 32))
    lhs = float(np.vdot(forward_coeffs(spec, x), y))
    rhs = float(np.vdot(x, inverse_coeffs(spec, y)))
    assert lhs == pytest.approx(rhs, rel=1e-12)


def test_time_constant_animation_has_zero_temporal_details():
    rng = np.random.default_rng(3)
    frame = rng.normal(size=(16, 16))
    movie = np.repeat(frame[None], 8, axis=0)
    spec = WaveletSpec("haar", 2, 3)
    block = dwt_forward(spec, movie)
    for sb in block.layout():
        if sb.orientation[0] == "d":
            band = block.packed[sb.slices]
            assert np.max(np.abs(band)) < 1e-12


def test_zero_coefficients_invert_to_zero():
    spec = WaveletSpec("haar", 2, 2)
    out = inverse_coeffs(spec, np.zeros((16, 16)))
    assert np.all(out == 0.0)


# --- coefficient block plumbing ---

def test_block_layout_counts_and_coverage():
    spec = WaveletSpec("haar", 2, 2)
    block = dwt_forward(spec, np.random.default_rng(4).normal(size=(16, 16)))
    layout = block.layout()
    # 3 detail orientations per level plus one deepest approximation
    assert len(layout) == 2 * 3 + 1
    seen = np.zeros((16, 16), dtype=int)
    for sb in layout:
        seen[sb.slices] += 1
    assert np.all(seen == 1)
    assert block.coeffs.shape == (256,)


def test_block_subband_lookup():
    spec = WaveletSpec("haar", 2, 2)
    x = np.random.default_rng(5).normal(size=(16, 16))
    block = dwt_forward(spec, x)
    assert block.subband(1, "dd").shape == (8, 8)
    assert block.subband(2, "aa").shape == (4, 4)
    with pytest.raises(ShapeError):
        block.subband(1, "aa")  # recursion corner, not a stored band
    with pytest.raises(ShapeError):
        block.subband(3, "dd")


def test_dwt_inverse_checks_layout():
    spec = WaveletSpec("haar", 2, 2)
    other = WaveletSpec("db4", 2, 2)
    x = np.random.default_rng(6).normal(size=(16, 16))
    block = dwt_forward(spec, x)
    assert np.allclose(dwt_inverse(spec, block), x, atol=1e-12)
    with pytest.raises(ShapeError):
        dwt_inverse(other, block)


# --- soft threshold ---

def test_soft_threshold_values():
    assert soft_threshold(np.array(3.0), 1.0) == pytest.approx(2.0)
    assert soft_threshold(np.array(-0.5), 1.0) == pytest.approx(0.0)
    x = np.array([-2.0, -1.0, 0.0, 0.5, 4.0])
    assert np.allclose(soft_threshold(x, 0.0), x)
    assert np.allclose(soft_threshold(x, 1.0), [-1.0, 0.0, 0.0, 0.0, 3.0])
    with pytest.raises(ConfigError):
        soft_threshold(x, -0.1)


def test_soft_threshold_is_the_l1_prox():
    # brute-force scan of (1/2)(y-x)^2 + lam*|y|
    rng = np.random.default_rng(7)
    grid = np.linspace(-6.0, 6.0, 240001)
    for _ in range(20):
        x = float(rng.uniform(-4, 4))
        lam = float(rng.uniform(0, 2))
        obj = 0.5 * (grid - x) ** 2 + lam * np.abs(grid)
        best = grid[np.argmin(obj)]
        assert soft_threshold(np.array(x), lam) == pytest.approx(best, abs=1e-4)


def test_soft_threshold_nonexpansive():
    rng = np.random.default_rng(8)
    for _ in range(10):
        x = rng.normal(size=50)
        y = rng.normal(size=50)
        lam = float(rng.uniform(0, 3))
        d_out = np.linalg.norm(soft_threshold(x, lam) - soft_threshold(y, lam))
        assert d_out <= np.linalg.norm(x - y) + 1e-12


# --- singular value thresholding ---

def full_svd_svt(M, lam):
    U, s, Vt = np.linalg.svd(M, full_matrices=False)
    return (U * np.maximum(s - lam, 0.0)) @ Vt


def test_svt_zero_threshold_is_identity():
    M = np.random.default_rng(9).normal(size=(40, 6))
    out = svt(M, 0.0)
    assert np.linalg.norm(out - M) <= 1e-10 * np.linalg.norm(M)


def test_svt_diag_example():
    M = np.zeros((10, 2))
    M[0, 0] = 3.0
    M[1, 1] = 1.0
    out = svt(M, 2.0)
    s = np.linalg.svd(out, compute_uv=False)
    assert np.allclose(s, [1.0, 0.0], atol=1e-12)
    expected = np.zeros((10, 2))
    expected[0, 0] = 1.0
    assert np.allclose(out, expected, atol=1e-12)


def test_svt_matches_full_svd_on_random_matrices():
    rng = np.random.default_rng(10)
    for _ in range(50):
        rank = rng.integers(1, 5)
        A = rng.normal(size=(100, rank)) @ rng.normal(size=(rank, 8))
        A += 0.05 * rng.normal(size=(100, 8))
        lam = float(rng.uniform(0.0, 5.0))
        ours = svt(A, lam)
        ref = full_svd_svt(A, lam)
        assert np.linalg.norm(ours - ref) <= 1e-8 * max(1.0, np.linalg.norm(ref))


def test_svt_reduces_rank():
    rng = np.random.default_rng(11)
    A = rng.normal(size=(60, 2)) @ rng.normal(size=(2, 5))
    A += 0.01 * rng.normal(size=(60, 5))
    s = np.linalg.svd(A, compute_uv=False)
    lam = float(s[1] + 1.0)  # kill all but the leading one
    out = svt(A, lam)
    assert np.linalg.matrix_rank(out, tol=1e-8) <= 1


def test_svt_input_validation():
    with pytest.raises(DataError):
        svt(np.array([[np.nan, 1.0]]), 1.0)
    with pytest.raises(ShapeError):
        svt(np.zeros(5), 1.0)
    with pytest.raises(ConfigError):
        svt(np.zeros((5, 2)), -1.0)
