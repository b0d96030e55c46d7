import logging
import numpy as np
from enum import Enum
from typing import Optional

from config.settings import Config
from core.numerics import Precision, SimMatrix
from core.utils import NumericError, ValidationUtils
from quantizers.msd_int8 import Int8Msd, OperationCounter
from quantizers.mx_formats import (Mxfp4Msd, Mxfp4Weight, Mxfp4WeightQuantizer,
                                   Mxfp8Quantizer, MxScaling)

logger = logging.getLogger(__name__)


class GemmPipelineKind(str, Enum):
    FP32_ORACLE = "fp32_oracle"
    DEQUANT_BF16 = "dequant_bf16"
    SINGLE_SCALE_INT8 = "single_scale_int8"
    MSD_INT8 = "msd_int8"
    MSD_INT8_FRACTIONAL = "msd_int8_fractional"
    MXFP8_BASELINE = "mxfp8_baseline"
    MSD_MXFP4 = "msd_mxfp4"
    MXFP4_SINGLE = "mxfp4_single"


class GemmSimulator:
    """Linear-layer pipelines y = x @ W^T over an INT8 or MXFP4 weight"""

    def __init__(self, counter: Optional[OperationCounter] = None):
        self.counter = counter or OperationCounter()

    # INT8 weight pipelines

    def fp32_oracle(self, x, w) -> np.ndarray:
        """Unquantized reference; binary64 accumulation, binary64 result"""
        xv = self._activations(x)
        w_deq = w.dequantize()
        ValidationUtils.require_conformant(xv.shape, w_deq.shape)
        return xv.astype(np.float64) @ w_deq.astype(np.float64).T

    def dequant(self, x, w) -> np.ndarray:
        """BF16 dequant baseline: truncated operands, binary32 sequential accumulation"""
        xv = self._activations(x)
        ValidationUtils.require_conformant(xv.shape, w.shape)
        w_bf16 = Precision.bf16_truncate(w.dequantize())
        x_bf16 = Precision.bf16_truncate(xv)
        return Precision.matmul_fp32(x_bf16, w_bf16.T)

    def msd_int8(self, x, w, fractional: bool = False, fused: bool = False) -> np.ndarray:
        """Two-pass INT8 decomposition followed by native integer GEMMs"""
        xv = self._activations(x)
        ValidationUtils.require_conformant(xv.shape, w.shape)
        d = Int8Msd.decompose2(xv, fractional=fractional, counter=self.counter)
        if fused:
            stacked = self.integer_gemm(np.concatenate([d.x1, d.x2], axis=0), w.values)
            y1, y2 = stacked[: xv.shape[0]], stacked[xv.shape[0]:]
        else:
            y1 = self.integer_gemm(d.x1, w.values)
            y2 = self.integer_gemm(d.x2, w.values)
        combined = d.alpha[:, None] * y1.astype(np.float32) + d.beta[:, None] * y2.astype(np.float32)
        return (combined * w.scales[None, :]).astype(np.float32)

    def single_scale(self, x, w) -> np.ndarray:
        """Coarse-scale INT8 only (K=1)"""
        xv = self._activations(x)
        ValidationUtils.require_conformant(xv.shape, w.shape)
        d = Int8Msd.decompose_k(xv, 1, counter=self.counter)
        y1 = self.integer_gemm(d.components[0], w.values)
        return (d.scales[0][:, None] * y1.astype(np.float32) * w.scales[None, :]).astype(np.float32)

    def msd_k(self, x, w, k: int) -> np.ndarray:
        """K-pass generalization, one integer GEMM per component"""
        xv = self._activations(x)
        ValidationUtils.require_conformant(xv.shape, w.shape)
        d = Int8Msd.decompose_k(xv, k, counter=self.counter)
        combined = np.zeros((xv.shape[0], w.shape[0]), dtype=np.float32)
        for scale, codes in zip(d.scales, d.components):
            combined += scale[:, None] * self.integer_gemm(codes, w.values).astype(np.float32)
        return (combined * w.scales[None, :]).astype(np.float32)

    @staticmethod
    def integer_gemm(codes: np.ndarray, weight_codes: np.ndarray) -> np.ndarray:
        """Exact integer GEMM codes @ weight_codes^T with a 64-bit result"""
        n = codes.shape[1]
        if 128 * 128 * n >= Config.FLOAT64_EXACT_LIMIT:
            raise NumericError(f"reduction length {n} exceeds the exact integer range")
        acc = codes.astype(np.float64) @ weight_codes.astype(np.float64).T
        peak = float(np.max(np.abs(acc))) if acc.size else 0.0
        if peak > Config.INT32_LIMIT:
            logger.warning("integer accumulator %.0f exceeds the INT32 range", peak)
        return acc.astype(np.int64)

    # MXFP4 weight pipelines

    def mxfp4_reference(self, x, w_mx4: Mxfp4Weight) -> np.ndarray:
        """FP32 activations against the dequantized MXFP4 weight"""
        xv = self._activations(x)
        w_hat = w_mx4.dequantize()
        ValidationUtils.require_conformant(xv.shape, w_hat.shape)
        return xv.astype(np.float64) @ w_hat.astype(np.float64).T

    def mxfp4(self, x, w_mx4: Mxfp4Weight, method: str = "msd_mxfp4", variant: str = "v3",
              scale_rule: str = Config.MXFP8_SCALE_RULE) -> np.ndarray:
        """Activation-side MX quantization against an MXFP4 weight, binary32 sequential accumulation"""
        xv = self._activations(x)
        w_hat = w_mx4.dequantize()
        ValidationUtils.require_conformant(xv.shape, w_hat.shape)
        MxScaling.as_blocks(xv)
        if method == GemmPipelineKind.MSD_MXFP4.value:
            batch = Mxfp4Msd.decompose_rows(xv, variant)
            x1 = batch.coarse().reshape(xv.shape).astype(np.float32)
            x2 = batch.fine().reshape(xv.shape).astype(np.float32)
            return Precision.matmul_fp32(x1, w_hat.T) + Precision.matmul_fp32(x2, w_hat.T)
        if method == GemmPipelineKind.MXFP8_BASELINE.value:
            return Precision.matmul_fp32(Mxfp8Quantizer.quantize_rows(xv, scale_rule), w_hat.T)
        if method == GemmPipelineKind.MXFP4_SINGLE.value:
            return Precision.matmul_fp32(Mxfp4WeightQuantizer.quantize_rows(xv), w_hat.T)
        raise ValueError(f"unknown MXFP4 GEMM method {method!r}")

    def run(self, kind, x, w, **options) -> np.ndarray:
        """Dispatch a pipeline by kind"""
        kind = GemmPipelineKind(kind)
        if kind is GemmPipelineKind.FP32_ORACLE:
            if isinstance(w, Mxfp4Weight):
                return self.mxfp4_reference(x, w)
            return self.fp32_oracle(x, w)
        if kind is GemmPipelineKind.DEQUANT_BF16:
            return self.dequant(x, w)
        if kind is GemmPipelineKind.SINGLE_SCALE_INT8:
            return self.single_scale(x, w)
        if kind is GemmPipelineKind.MSD_INT8:
            return self.msd_int8(x, w, fused=options.get("fused", False))
        if kind is GemmPipelineKind.MSD_INT8_FRACTIONAL:
            return self.msd_int8(x, w, fractional=True, fused=options.get("fused", False))
        return self.mxfp4(x, w, method=kind.value, variant=options.get("variant", "v3"),
                          scale_rule=options.get("scale_rule", Config.MXFP8_SCALE_RULE))

    @staticmethod
    def _activations(x) -> np.ndarray:
        values = np.asarray(SimMatrix.wrap(x).values, dtype=np.float32)
        ValidationUtils.require_matrix(values, "activations")
        ValidationUtils.require_finite(values, "activations")
        return values
