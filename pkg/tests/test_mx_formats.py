import numpy as np
import pytest
from hypothesis import assume, given, settings
import hypothesis.strategies as st
from hypothesis.extra.numpy import arrays

from config.settings import Config
from core.utils import NumericError, ShapeError
from quantizers.mx_formats import (MXFP4_VARIANTS, Mxfp4Msd, Mxfp4WeightQuantizer, Mxfp8Quantizer,
                                   MxScaling, MxStorage)

blocks = arrays(np.float32, st.tuples(st.integers(1, 8), st.just(32)),
                elements=st.floats(-1e3, 1e3, width=32))


@given(blocks)
@settings(max_examples=300)
def test_v3_error_within_alpha_over_64(x):
    assume(np.all((np.max(np.abs(x), axis=1) == 0) | (np.max(np.abs(x), axis=1) > 1e-30)))
    batch = Mxfp4Msd.decompose_blocks(x, "v3")
    err = np.abs(x.astype(np.float64) - Mxfp4Msd.reconstruct_blocks(batch, np.float64))
    assert np.all(err <= batch.alpha()[:, None] / 64.0), "MSD-MXFP4 error above alpha/64"


def test_v3_bound_is_reached():
    # x/alpha = 0.125 ties down to zero, leaving a residual of 2 beta that saturates at 1.75
    x = np.zeros(32, dtype=np.float32)
    x[0], x[1] = 1.0, 0.125
    pair = Mxfp4Msd.decompose_block(x)
    assert pair.alpha.value == 1.0 and pair.beta.value == 2.0 ** -4
    err = np.max(np.abs(x - Mxfp4Msd.reconstruct(pair)))
    assert err == pytest.approx(1.0 / 64.0, abs=0)


@given(blocks, st.sampled_from(sorted(MXFP4_VARIANTS)))
@settings(max_examples=200)
def test_first_pass_residual_within_alpha_over_8(x, variant):
    assume(np.all((np.max(np.abs(x), axis=1) == 0) | (np.max(np.abs(x), axis=1) > 1e-30)))
    batch = Mxfp4Msd.decompose_blocks(x, variant)
    residual = x.astype(np.float64) - batch.coarse()
    assert np.all(np.abs(residual) <= batch.alpha()[:, None] / 8.0), "clipped elements included"


def test_single_element_on_grid_is_exact():
    x = np.zeros(32, dtype=np.float32)
    x[0] = 1.75
    pair = Mxfp4Msd.decompose_block(x)
    assert pair.alpha.value == 1.0
    assert pair.q1[0] == 7
    np.testing.assert_array_equal(pair.q2, 0)
    np.testing.assert_array_equal(Mxfp4Msd.reconstruct(pair), x)


def test_clipped_extremum_is_recovered_by_second_pass():
    x = np.zeros(32, dtype=np.float32)
    x[0] = 1.859375
    pair = Mxfp4Msd.decompose_block(x)
    assert pair.alpha.exponent == 0 and pair.q1[0] == 7
    residual = 1.859375 - pair.alpha.value * 1.75
    assert residual == 0.109375 and residual < pair.alpha.value / 8
    np.testing.assert_array_equal(Mxfp4Msd.reconstruct(pair), x)


def test_alpha_examples():
    alpha = MxScaling.mxfp4_alpha(3.0)
    assert alpha.exponent == 1 and alpha.value == 2.0
    assert MxScaling.mxfp4_alpha(1.859375).exponent == 0


def test_variant_scales():
    x = np.linspace(-1.8, 1.8, 32, dtype=np.float32)
    for variant, (bound, shift) in MXFP4_VARIANTS.items():
        batch = Mxfp4Msd.decompose_blocks(x, variant)
        assert batch.beta_exp[0] == batch.alpha_exp[0] - shift, variant
        assert np.max(np.abs(x)) <= bound * batch.alpha()[0]


def test_alpha_uses_extended_bound():
    # 1.8 fits under 1.859375 * 2^0 but not under 1.75 * 2^0
    assert MxScaling.mxfp4_alpha(1.8).exponent == 0
    assert MxScaling.ceil_exponents(1.8, Config.FP4_MAX) == 1
    assert MxScaling.ceil_exponents(1.859375, Config.MXFP4_ALPHA_BOUND) == 0
    assert MxScaling.ceil_exponents(0.0, 1.75) == Config.E8M0_ZERO_SENTINEL


def test_zero_block_uses_sentinel():
    pair = Mxfp4Msd.decompose_block(np.zeros(32, dtype=np.float32))
    assert pair.alpha.exponent == Config.E8M0_ZERO_SENTINEL
    assert pair.beta.exponent == Config.E8M0_ZERO_SENTINEL
    np.testing.assert_array_equal(pair.q1, 0)
    np.testing.assert_array_equal(pair.q2, 0)
    np.testing.assert_array_equal(Mxfp4Msd.reconstruct(pair), 0)


def test_scale_shift_holds_except_for_zero_blocks():
    x = np.zeros((3, 32), dtype=np.float32)
    x[0, :] = 0.5
    x[2, 5] = -40.0
    batch = Mxfp4Msd.decompose_blocks(x, "v3")
    live = np.array([True, False, True])
    np.testing.assert_array_equal(batch.beta_exp[live], batch.alpha_exp[live] - 4)
    assert batch.alpha_exp[1] == batch.beta_exp[1] == Config.E8M0_ZERO_SENTINEL


def test_block_shape_and_range_errors():
    with pytest.raises(ShapeError):
        Mxfp4Msd.decompose_block(np.ones(31, dtype=np.float32))
    with pytest.raises(ShapeError):
        Mxfp4Msd.decompose_rows(np.ones((2, 40), dtype=np.float32))
    with pytest.raises(NumericError, match="E8M0 overflow"):
        MxScaling.ceil_exponents(2.0 ** 200, 1.75)
    with pytest.raises(ValueError):
        Mxfp4Msd.decompose_blocks(np.ones(32), "v9")


def test_round_to_fp4_saturates():
    np.testing.assert_array_equal(Mxfp4Msd.round_to_fp4([2.0, -3.0, 0.25]), [7, 15, 1])
    np.testing.assert_array_equal(Mxfp4Msd.round_to_fp4([0.37, -1.80]), [1, 15])


def test_mxfp8_ceil_and_floor_rules():
    x = np.zeros(32, dtype=np.float32)
    x[0] = 1.9
    ceil = Mxfp8Quantizer.dequantize_block(Mxfp8Quantizer.quantize_block(x, "ceil"))
    floor = Mxfp8Quantizer.dequantize_block(Mxfp8Quantizer.quantize_block(x, "floor"))
    assert ceil[0] == np.float32(1.875)
    assert floor[0] == np.float32(1.75), "floor rule saturates the block maximum"
    with pytest.raises(ValueError):
        Mxfp8Quantizer.quantize_blocks(x, "nearest")


@given(blocks)
@settings(max_examples=100)
def test_mxfp8_ceil_never_saturates(x):
    assume(np.all(np.max(np.abs(x), axis=1) > 1e-20))
    batch = Mxfp8Quantizer.quantize_blocks(x, "ceil")
    scaled = np.abs(x.astype(np.float64)) / np.ldexp(1.0, batch.scale_exp.astype(np.int64))[:, None]
    assert np.all(scaled <= Config.E4M3_MAX)


def test_mxfp8_rows_keep_shape():
    x = np.random.default_rng(1).normal(size=(3, 64)).astype(np.float32)
    y = Mxfp8Quantizer.quantize_rows(x)
    assert y.shape == x.shape and y.dtype == np.float32
    assert np.max(np.abs(y - x)) < 0.1 * np.max(np.abs(x))


def test_weight_on_grid_is_exact():
    row = np.array([1.75, 0.5, -0.25, 0.0] * 8, dtype=np.float32) * 4
    w = np.stack([row, row / 8])
    w_mx4 = Mxfp4WeightQuantizer.quantize_weight(w)
    assert w_mx4.shape == (2, 32)
    assert w_mx4.exponents.shape == (2, 1)
    np.testing.assert_array_equal(w_mx4.dequantize(), w)


def test_weight_needs_whole_blocks():
    with pytest.raises(ShapeError):
        Mxfp4WeightQuantizer.quantize_weight(np.ones((4, 48), dtype=np.float32))


def test_storage_bits():
    assert MxStorage.bits_per_element("mxfp4") == 4.25
    assert MxStorage.bits_per_element("mxfp8") == 8.25
    assert MxStorage.bits_per_element("msd_mxfp4") == 8.5
    assert MxStorage.bits_per_element("bf16") == 16.0
    with pytest.raises(ValueError):
        MxStorage.bits_per_element("fp6")
