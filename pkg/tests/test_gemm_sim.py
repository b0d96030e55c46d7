import numpy as np
import pytest

from config.settings import Config
from core.gemm_sim import GemmPipelineKind, GemmSimulator
from core.metrics import ErrorMetrics
from core.numerics import Precision
from core.utils import NumericError, ShapeError
from models.datagen import DataGenerator, DistributionSpec, ExperimentSeed, QuantizedWeight
from quantizers.msd_int8 import Int8Msd, OperationCounter
from quantizers.mx_formats import Mxfp4WeightQuantizer, Mxfp8Quantizer


@pytest.fixture
def operands():
    x = DataGenerator.gen_activation((8, 256), DistributionSpec("gaussian"), ExperimentSeed(1, 0), truncate=False)
    w = DataGenerator.gen_int8_weight(32, 256, ExperimentSeed(1, 1))
    return x, w


def test_msd_beats_dequant(operands):
    x, w = operands
    gemm = GemmSimulator()
    y_ref = gemm.fp32_oracle(x, w)
    assert y_ref.dtype == np.float64
    dequant = ErrorMetrics.l2_relative(gemm.dequant(x, w), y_ref)
    msd = ErrorMetrics.l2_relative(gemm.msd_int8(x, w), y_ref)
    single = ErrorMetrics.l2_relative(gemm.single_scale(x, w), y_ref)
    assert msd < 1e-4, f"MSD error {msd}"
    assert dequant > 10 * msd
    assert single > 10 * msd


def test_fused_matches_separate_passes(operands):
    x, w = operands
    gemm = GemmSimulator()
    np.testing.assert_array_equal(gemm.msd_int8(x, w, fused=True), gemm.msd_int8(x, w))


def test_k2_matches_two_pass(operands):
    x, w = operands
    gemm = GemmSimulator()
    np.testing.assert_array_equal(gemm.msd_k(x, w, 2), gemm.msd_int8(x, w))


def test_k3_is_no_worse(operands):
    x, w = operands
    gemm = GemmSimulator()
    y_ref = gemm.fp32_oracle(x, w)
    assert ErrorMetrics.l2_relative(gemm.msd_k(x, w, 3), y_ref) <= 1e-4


def test_one_max_reduction_per_msd_gemm(operands):
    x, w = operands
    counter = OperationCounter()
    GemmSimulator(counter).msd_int8(x, w)
    assert counter.max_reductions == 1


def test_integer_gemm_is_exact():
    rng = np.random.default_rng(0)
    a = rng.integers(-127, 128, size=(4, 300)).astype(np.int8)
    b = rng.integers(-127, 128, size=(6, 300)).astype(np.int8)
    out = GemmSimulator.integer_gemm(a, b)
    assert out.dtype == np.int64
    np.testing.assert_array_equal(out, a.astype(np.int64) @ b.astype(np.int64).T)


def test_integer_gemm_refuses_inexact_lengths(monkeypatch):
    monkeypatch.setattr(Config, "FLOAT64_EXACT_LIMIT", 1000)
    with pytest.raises(NumericError):
        GemmSimulator.integer_gemm(np.ones((1, 1), dtype=np.int8), np.ones((1, 1), dtype=np.int8))


def test_shape_and_finite_checks(operands):
    x, w = operands
    gemm = GemmSimulator()
    with pytest.raises(ShapeError):
        gemm.msd_int8(np.ones((2, 128), dtype=np.float32), w)
    bad = x.values.copy()
    bad[0, 0] = np.nan
    with pytest.raises(NumericError):
        gemm.dequant(bad, w)


def test_run_dispatch(operands):
    x, w = operands
    gemm = GemmSimulator()
    np.testing.assert_array_equal(gemm.run("msd_int8", x, w), gemm.msd_int8(x, w))
    np.testing.assert_array_equal(gemm.run(GemmPipelineKind.MSD_INT8_FRACTIONAL, x, w),
                                  gemm.msd_int8(x, w, fractional=True))
    np.testing.assert_array_equal(gemm.run("fp32_oracle", x, w), gemm.fp32_oracle(x, w))
    with pytest.raises(ValueError):
        gemm.run("int4", x, w)


def test_msd_mxfp4_beats_mxfp8():
    x = DataGenerator.gen_activation((16, 256), DistributionSpec("gaussian", {"std": 0.5}),
                                     ExperimentSeed(2, 0), truncate=False)
    w = Mxfp4WeightQuantizer.quantize_weight(
        DataGenerator.gen_float_weight(64, 256, DistributionSpec("gaussian"), ExperimentSeed(2, 1)))
    gemm = GemmSimulator()
    y_ref = gemm.mxfp4_reference(x, w)
    msd = ErrorMetrics.l2_relative(gemm.mxfp4(x, w, "msd_mxfp4"), y_ref)
    mxfp8 = ErrorMetrics.l2_relative(gemm.mxfp4(x, w, "mxfp8_baseline"), y_ref)
    single = ErrorMetrics.l2_relative(gemm.mxfp4(x, w, "mxfp4_single"), y_ref)
    assert msd < mxfp8 < single
    np.testing.assert_array_equal(gemm.run("fp32_oracle", x, w), y_ref)
    with pytest.raises(ValueError):
        gemm.mxfp4(x, w, "mxfp6")


def identity_weight(n, scale=1.0):
    return QuantizedWeight(np.eye(n, dtype=np.int8), np.full(n, scale, dtype=np.float32), channel_axis=0)


def test_identity_weight_returns_activations():
    x = np.random.default_rng(6).normal(size=(5, 48)).astype(np.float32)
    gemm = GemmSimulator()
    np.testing.assert_array_equal(gemm.fp32_oracle(x, identity_weight(48)), x.astype(np.float64))
    np.testing.assert_array_equal(gemm.fp32_oracle(np.zeros_like(x), identity_weight(48)), 0.0)
    y = gemm.msd_int8(x, identity_weight(48)).astype(np.float64)
    max_abs = np.max(np.abs(x), axis=1, keepdims=True).astype(np.float64)
    # binary32 combination adds a few ulps on top of the decomposition bound
    slack = max_abs * 2.0 ** -21
    assert np.all(np.abs(y - x) <= Int8Msd.bound(max_abs) + slack)


def test_dequant_bit_equals_oracle_on_exact_inputs():
    rng = np.random.default_rng(12)
    x = rng.integers(-8, 9, size=(4, 64)).astype(np.float32)
    codes = rng.integers(-127, 128, size=(16, 64)).astype(np.int8)
    w = QuantizedWeight(codes, np.full(16, 0.5, dtype=np.float32), channel_axis=0)
    gemm = GemmSimulator()
    np.testing.assert_array_equal(gemm.dequant(x, w).astype(np.float64), gemm.fp32_oracle(x, w))


def test_msd_error_within_oracle_bound(operands):
    x, w = operands
    gemm = GemmSimulator()
    err = np.abs(gemm.msd_int8(x, w).astype(np.float64) - gemm.fp32_oracle(x, w))
    row_max = np.max(np.abs(x.values), axis=1).astype(np.float64)[:, None]
    weight_sum = np.sum(np.abs(w.dequantize().astype(np.float64)), axis=1)[None, :]
    bound = row_max * weight_sum * (1.0 / Config.INT8_BOUND_DIVISOR + 2.0 ** -20)
    assert np.all(err <= bound), f"worst err/bound {np.max(err / bound):.3f}"


def test_mxfp4_on_grid_activations_are_exact():
    grid_row = np.array([0.5, -1.0, 1.5, 0.25] * 16, dtype=np.float32)
    x = np.stack([grid_row, -grid_row / 4])
    w = Mxfp4WeightQuantizer.quantize_weight(np.stack([grid_row, grid_row[::-1], grid_row * 2]))
    gemm = GemmSimulator()
    y_ref = gemm.mxfp4_reference(x, w)
    for method in ("msd_mxfp4", "mxfp8_baseline", "mxfp4_single"):
        y = gemm.mxfp4(x, w, method)
        assert y.dtype == np.float32
        np.testing.assert_array_equal(y.astype(np.float64), y_ref, err_msg=method)


def test_mxfp4_accumulates_sequentially():
    x = DataGenerator.gen_activation((4, 64), DistributionSpec("gaussian"), ExperimentSeed(3, 0), truncate=False)
    w = Mxfp4WeightQuantizer.quantize_weight(
        DataGenerator.gen_float_weight(8, 64, DistributionSpec("gaussian"), ExperimentSeed(3, 1)))
    expected = Precision.matmul_fp32(Mxfp8Quantizer.quantize_rows(x.values), w.dequantize().T)
    np.testing.assert_array_equal(GemmSimulator().mxfp4(x, w, "mxfp8_baseline"), expected)
