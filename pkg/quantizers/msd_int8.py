import logging
import numpy as np
from dataclasses import dataclass, field
from typing import Optional

from config.settings import Config
from core.utils import NumericError, ValidationUtils

logger = logging.getLogger(__name__)


@dataclass
class OperationCounter:
    """Counts scale-producing reductions so callers can assert where maxima are taken"""
    max_reductions: int = 0
    fixed_scale_decompositions: int = 0

    def reset(self):
        self.max_reductions = 0
        self.fixed_scale_decompositions = 0


@dataclass(frozen=True)
class Int8Decomposition:
    """x ~ alpha * x1 + beta * x2 with scales per row (last axis is the vector)"""
    alpha: np.ndarray
    beta: np.ndarray
    x1: np.ndarray
    x2: np.ndarray
    fractional: bool = False


@dataclass(frozen=True)
class KDecomposition:
    scales: np.ndarray  # (K, *rows)
    components: np.ndarray = field(repr=False)  # (K, *rows, n)

    @property
    def passes(self) -> int:
        return int(self.scales.shape[0])


class Int8Msd:
    @staticmethod
    def decompose2(x, fractional: bool = False,
                   counter: Optional[OperationCounter] = None) -> Int8Decomposition:
        """Two-pass INT8 decomposition of each row of x"""
        values = Int8Msd._prepare(x)
        alpha_div, beta_div = Int8Msd._divisors(fractional)
        max_abs = Int8Msd._row_max(values, counter)
        alpha = Int8Msd.scale_toward_zero(max_abs, alpha_div)
        Int8Msd._check_underflow(max_abs, alpha)
        beta = Int8Msd.scale_toward_zero(alpha, beta_div)
        x1, residual = Int8Msd._quantize_pass(values, alpha)
        x2, _ = Int8Msd._quantize_pass(residual, beta)
        return Int8Decomposition(alpha, beta, x1, x2, fractional)

    @staticmethod
    def decompose_with_scales(x, alpha: float, beta: float,
                              counter: Optional[OperationCounter] = None) -> Int8Decomposition:
        """Two-pass decomposition under caller-supplied constant scales (no max over x)"""
        values = Int8Msd._prepare(x)
        rows = values.shape[:-1]
        alpha_arr = np.full(rows, alpha, dtype=np.float32)
        beta_arr = np.full(rows, beta, dtype=np.float32)
        x1, residual = Int8Msd._quantize_pass(values, alpha_arr)
        x2, _ = Int8Msd._quantize_pass(residual, beta_arr)
        if counter is not None:
            counter.fixed_scale_decompositions += 1
        return Int8Decomposition(alpha_arr, beta_arr, x1, x2, False)

    @staticmethod
    def reconstruct(d: Int8Decomposition, dtype=np.float32) -> np.ndarray:
        """alpha * x1 + beta * x2 elementwise; binary64 output is exact"""
        alpha = np.asarray(d.alpha, dtype=np.float64)[..., None]
        beta = np.asarray(d.beta, dtype=np.float64)[..., None]
        exact = alpha * d.x1.astype(np.float64) + beta * d.x2.astype(np.float64)
        return exact.astype(dtype)

    @staticmethod
    def decompose_k(x, k: int, counter: Optional[OperationCounter] = None) -> KDecomposition:
        """K-pass decomposition; each scale is the previous one divided by 254"""
        if int(k) < 1:
            raise ValueError(f"k must be >= 1, got {k}")
        values = Int8Msd._prepare(x)
        max_abs = Int8Msd._row_max(values, counter)
        scale = Int8Msd.scale_toward_zero(max_abs, Config.INT8_ALPHA_DIVISOR)
        Int8Msd._check_underflow(max_abs, scale)

        scales, components = [], []
        residual = values
        for _ in range(int(k)):
            codes, residual = Int8Msd._quantize_pass(residual, scale)
            scales.append(scale)
            components.append(codes)
            scale = Int8Msd.scale_toward_zero(scale, Config.INT8_RESIDUAL_DIVISOR)
        return KDecomposition(np.stack(scales), np.stack(components))

    @staticmethod
    def reconstruct_k(d: KDecomposition, dtype=np.float32) -> np.ndarray:
        total = np.zeros(d.components.shape[1:], dtype=np.float64)
        for scale, codes in zip(d.scales, d.components):
            total += np.asarray(scale, dtype=np.float64)[..., None] * codes.astype(np.float64)
        return total.astype(dtype)

    @staticmethod
    def bound(max_abs, fractional: bool = False):
        """Worst-case elementwise reconstruction error for the two-pass scheme"""
        divisor = Config.FRACTIONAL_BOUND_DIVISOR if fractional else Config.INT8_BOUND_DIVISOR
        return np.asarray(max_abs, dtype=np.float64) / divisor

    @staticmethod
    def scale_toward_zero(numerator, divisor: float) -> np.ndarray:
        """numerator / divisor rounded toward zero into binary32"""
        exact = np.asarray(numerator, dtype=np.float64) / float(divisor)
        nearest = np.asarray(exact, dtype=np.float32)
        over = nearest.astype(np.float64) > exact
        lowered = np.nextafter(nearest, np.float32(0))
        return np.asarray(np.where(over, lowered, nearest), dtype=np.float32)

    @staticmethod
    def _prepare(x) -> np.ndarray:
        values = np.asarray(getattr(x, "values", x), dtype=np.float32)
        if values.ndim == 0 or values.shape[-1] < 1:
            raise ValueError("decomposition needs a vector of length >= 1")
        ValidationUtils.require_finite(values, "decomposition input")
        return values.astype(np.float64)

    @staticmethod
    def _divisors(fractional: bool):
        if fractional:
            return Config.FRACTIONAL_ALPHA_DIVISOR, Config.FRACTIONAL_RESIDUAL_DIVISOR
        return Config.INT8_ALPHA_DIVISOR, Config.INT8_RESIDUAL_DIVISOR

    @staticmethod
    def _row_max(values: np.ndarray, counter: Optional[OperationCounter]) -> np.ndarray:
        if counter is not None:
            counter.max_reductions += 1
        return np.max(np.abs(values), axis=-1)

    @staticmethod
    def _check_underflow(max_abs: np.ndarray, alpha: np.ndarray):
        if np.any((np.asarray(max_abs) > 0) & (alpha == 0)):
            raise NumericError("scale underflow: row maximum too small for a binary32 scale")

    @staticmethod
    def _quantize_pass(values: np.ndarray, scale: np.ndarray):
        # Quotients are taken in binary64 so ties are decided on exact values;
        # the residual is exact and fits binary32.
        scale64 = np.asarray(scale, dtype=np.float64)[..., None]
        live = scale64 > 0
        divisor = np.where(live, scale64, 1.0)
        codes = np.clip(np.rint(values / divisor), Config.INT8_QMIN, Config.INT8_QMAX)
        codes = np.where(live, codes, 0.0)
        residual = values - scale64 * codes
        return codes.astype(np.int8), residual
