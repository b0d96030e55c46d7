import numpy as np
import pytest
from hypothesis import given, settings
import hypothesis.strategies as st
from hypothesis.extra.numpy import arrays

from core.numerics import E4M3_GRID, FP4_GRID, Precision, SimMatrix
from core.utils import NumericError, ShapeError

finite32 = st.floats(allow_nan=False, allow_infinity=False, width=32)


def test_bf16_truncate_drops_low_mantissa_bits():
    assert Precision.bf16_truncate(1.0 + 2.0 ** -10) == np.float32(1.0)
    assert Precision.bf16_truncate(-1.0 - 2.0 ** -10) == np.float32(-1.0)
    # 1 + 2^-7 is the first BF16 value above one and survives
    assert Precision.bf16_truncate(1.0 + 2.0 ** -7) == np.float32(1.0 + 2.0 ** -7)


@given(arrays(np.float32, st.integers(1, 64), elements=finite32))
@settings(max_examples=200)
def test_bf16_truncate_rounds_toward_zero(x):
    t = Precision.bf16_truncate(x)
    assert t.dtype == np.float32
    assert np.all(np.abs(t) <= np.abs(x)), "truncation must never grow a magnitude"
    assert np.all((t == 0) | (np.sign(t) == np.sign(x)))
    assert Precision.is_bf16(t)
    np.testing.assert_array_equal(Precision.bf16_truncate(t), t)


normal32 = st.one_of(st.floats(2.0 ** -126, float(np.float32(3.0e38)), width=32), st.floats(-float(np.float32(3.0e38)), -(2.0 ** -126), width=32))


@given(arrays(np.float32, st.integers(1, 256), elements=normal32))
@settings(max_examples=200)
def test_bf16_truncate_relative_error_below_2_pow_minus_7(x):
    t = Precision.bf16_truncate(x).astype(np.float64)
    rel = np.abs(x.astype(np.float64) - t) / np.abs(x.astype(np.float64))
    assert np.max(rel) < 2.0 ** -7


def test_bf16_truncate_rejects_non_finite():
    with pytest.raises(NumericError):
        Precision.bf16_truncate(np.array([1.0, np.nan], dtype=np.float32))
    with pytest.raises(NumericError):
        Precision.bf16_truncate(np.float32(np.inf))


def test_round_half_even_ties():
    assert Precision.round_half_even(2.5) == 2
    assert Precision.round_half_even(3.5) == 4
    assert Precision.round_half_even(-2.5) == -2
    np.testing.assert_array_equal(Precision.round_half_even(np.array([0.5, 1.5, -0.5])), [0, 2, 0])


def test_matmul_fp32_matches_exact_integer_product():
    rng = np.random.default_rng(7)
    a = rng.integers(-8, 8, size=(5, 12)).astype(np.float32)
    b = rng.integers(-8, 8, size=(12, 3)).astype(np.float32)
    out = Precision.matmul_fp32(a, b)
    assert out.dtype == np.float32
    np.testing.assert_array_equal(out, (a.astype(np.int64) @ b.astype(np.int64)).astype(np.float32))


def test_matmul_fp32_accumulates_in_k_order():
    # 2^24 + 1 + 1 is lost term by term in binary32 but not in one fused sum
    a = np.array([[2.0 ** 24, 1.0, 1.0]], dtype=np.float32)
    b = np.ones((3, 1), dtype=np.float32)
    assert Precision.matmul_fp32(a, b)[0, 0] == np.float32(2.0 ** 24)


def test_matmul_fp32_shape_mismatch():
    with pytest.raises(ShapeError):
        Precision.matmul_fp32(np.ones((2, 3)), np.ones((4, 2)))


def test_sim_matrix_truncated_marks_bf16():
    m = SimMatrix.wrap([[1.0 + 2.0 ** -10, 3.0]])
    assert not m.bf16
    t = m.truncated()
    assert t.bf16 and Precision.is_bf16(t.values)
    assert t.truncated() is t
    assert SimMatrix.wrap(t) is t
    assert t.shape == (1, 2)


def test_fp4_grid_rounding_and_saturation():
    np.testing.assert_array_equal(
        FP4_GRID.round_value([0.125, 0.375, 0.6, -0.6, 5.0, -9.0]),
        np.array([0.0, 0.5, 0.5, -0.5, 1.75, -1.75], dtype=np.float32))
    assert FP4_GRID.encode(-1.75) == 15
    assert FP4_GRID.encode(1.75) == 7


def test_e4m3_grid_range():
    assert E4M3_GRID.max_value == 448.0
    assert E4M3_GRID.round_value(1000.0) == np.float32(448.0)
    assert E4M3_GRID.round_value(2.0 ** -9) == np.float32(2.0 ** -9)
    # 243.2 sits in the [128, 256) binade where the step is 16
    assert E4M3_GRID.round_value(243.2) == np.float32(240.0)


@given(arrays(np.float64, st.integers(1, 32), elements=st.floats(-448, 448)))
def test_e4m3_round_is_nearest(x):
    rounded = E4M3_GRID.round_value(x).astype(np.float64)
    grid = np.concatenate([-E4M3_GRID.magnitudes, E4M3_GRID.magnitudes])
    best = np.min(np.abs(x[:, None] - grid[None, :]), axis=1)
    np.testing.assert_allclose(np.abs(x - rounded), best, rtol=0, atol=0)
