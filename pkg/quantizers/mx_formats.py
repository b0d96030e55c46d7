import logging
import numpy as np
from dataclasses import dataclass, field
from typing import Dict, Tuple

from config.settings import Config
from core.numerics import E4M3_GRID, FP4_GRID
from core.utils import NumericError, ShapeError, ValidationUtils

logger = logging.getLogger(__name__)

BLOCK = Config.MX_BLOCK_SIZE

# variant -> (alpha bound, log2 of alpha/beta)
MXFP4_VARIANTS: Dict[str, Tuple[float, int]] = {
    "v1": (Config.FP4_MAX, 3),
    "v2": (Config.FP4_MAX, 4),
    "v3": (Config.MXFP4_ALPHA_BOUND, 4),
}

# bits per stored element, scales amortized over a 32-element block
STORAGE_BITS = {
    "bf16": 16.0,
    "int8": 8.0,
    "mxfp8": 8.0 + 8.0 / BLOCK,
    "mxfp4": 4.0 + 8.0 / BLOCK,
    "msd_mxfp4": 2 * 4.0 + 2 * 8.0 / BLOCK,
}


@dataclass(frozen=True)
class E8m0Scale:
    exponent: int

    @property
    def value(self) -> float:
        return float(np.ldexp(1.0, self.exponent))


@dataclass(frozen=True)
class MxBlockPair:
    alpha: E8m0Scale
    beta: E8m0Scale
    q1: np.ndarray = field(repr=False)
    q2: np.ndarray = field(repr=False)


@dataclass(frozen=True)
class MxBlockBatch:
    """Many MSD-MXFP4 blocks in struct-of-arrays form

    beta_exp == alpha_exp - shift for every non-zero block; all-zero blocks carry
    the E8M0 zero sentinel in both exponents and zero codes.
    """
    alpha_exp: np.ndarray  # (B,)
    beta_exp: np.ndarray   # (B,)
    q1: np.ndarray = field(repr=False)  # (B, 32) uint8
    q2: np.ndarray = field(repr=False)
    variant: str = "v3"

    def __len__(self):
        return int(self.alpha_exp.shape[0])

    def block(self, index: int) -> MxBlockPair:
        return MxBlockPair(E8m0Scale(int(self.alpha_exp[index])), E8m0Scale(int(self.beta_exp[index])),
                           self.q1[index].copy(), self.q2[index].copy())

    def alpha(self) -> np.ndarray:
        return np.ldexp(1.0, self.alpha_exp.astype(np.int64))

    def beta(self) -> np.ndarray:
        return np.ldexp(1.0, self.beta_exp.astype(np.int64))

    def coarse(self) -> np.ndarray:
        """alpha * decode(q1) per block, binary64"""
        return self.alpha()[:, None] * FP4_GRID.decode(self.q1).astype(np.float64)

    def fine(self) -> np.ndarray:
        return self.beta()[:, None] * FP4_GRID.decode(self.q2).astype(np.float64)


@dataclass(frozen=True)
class Mxfp8Block:
    scale: E8m0Scale
    elems: np.ndarray = field(repr=False)


@dataclass(frozen=True)
class Mxfp8Batch:
    scale_exp: np.ndarray  # (B,)
    codes: np.ndarray = field(repr=False)  # (B, 32) uint8

    def dequantize(self) -> np.ndarray:
        scale = np.ldexp(1.0, self.scale_exp.astype(np.int64))[:, None]
        return (scale * E4M3_GRID.decode(self.codes).astype(np.float64)).astype(np.float32)


@dataclass(frozen=True)
class Mxfp4Weight:
    """Single-pass MXFP4 matrix with blocks along the reduction (last) dimension"""
    exponents: np.ndarray  # (m, n/32)
    codes: np.ndarray = field(repr=False)  # (m, n) uint8

    @property
    def shape(self):
        return self.codes.shape

    def dequantize(self) -> np.ndarray:
        m, n = self.codes.shape
        scale = np.ldexp(1.0, self.exponents.astype(np.int64)).reshape(-1, 1)
        blocks = FP4_GRID.decode(self.codes.reshape(-1, BLOCK)).astype(np.float64)
        return (scale * blocks).reshape(m, n).astype(np.float32)


class MxScaling:
    @staticmethod
    def ceil_exponents(max_abs, bound: float) -> np.ndarray:
        """Smallest e with max_abs <= bound * 2**e; zero maps to the sentinel"""
        m = np.asarray(max_abs, dtype=np.float64)
        if np.any(m < 0) or not np.all(np.isfinite(m)):
            raise NumericError("block maximum must be finite and non-negative")
        frac, exp = np.frexp(m)
        # m = (2*frac) * 2**(exp-1) with 2*frac in [1, 2)
        exponent = (exp.astype(np.int64) - 1) + (2.0 * frac > bound)
        exponent = np.where(m == 0, Config.E8M0_ZERO_SENTINEL, exponent)
        MxScaling.check_range(exponent[m > 0])
        return exponent.astype(np.int32)

    @staticmethod
    def floor_log2(max_abs) -> np.ndarray:
        m = np.asarray(max_abs, dtype=np.float64)
        _, exp = np.frexp(m)
        return np.where(m == 0, Config.E8M0_ZERO_SENTINEL, exp.astype(np.int64) - 1)

    @staticmethod
    def check_range(exponents) -> None:
        e = np.asarray(exponents)
        if e.size and (e.min() < Config.E8M0_MIN_EXPONENT or e.max() > Config.E8M0_MAX_EXPONENT):
            raise NumericError("E8M0 overflow")

    @staticmethod
    def mxfp4_alpha(max_abs: float) -> E8m0Scale:
        """alpha = 2**ceil(log2(max_abs / 1.859375)) by exponent inspection"""
        return E8m0Scale(int(MxScaling.ceil_exponents(np.float32(max_abs), Config.MXFP4_ALPHA_BOUND)))

    @staticmethod
    def as_blocks(x) -> np.ndarray:
        values = np.asarray(getattr(x, "values", x), dtype=np.float32)
        ValidationUtils.require_block_aligned(values.shape[-1], BLOCK, "reduction dimension")
        ValidationUtils.require_finite(values, "MX block input")
        return values.reshape(-1, BLOCK)


class Mxfp4Msd:
    @staticmethod
    def round_to_fp4(s) -> np.ndarray:
        """FP4 code of the nearest grid value; |s| > 1.75 saturates to +/-1.75"""
        ValidationUtils.require_finite(np.asarray(s), "round_to_fp4")
        return FP4_GRID.encode(s)

    @staticmethod
    def decompose_blocks(blocks, variant: str = "v3") -> MxBlockBatch:
        if variant not in MXFP4_VARIANTS:
            raise ValueError(f"unknown MXFP4 variant {variant!r}")
        bound, shift = MXFP4_VARIANTS[variant]
        x = np.asarray(blocks, dtype=np.float32).reshape(-1, BLOCK).astype(np.float64)
        max_abs = np.max(np.abs(x), axis=1)
        alpha_exp = MxScaling.ceil_exponents(max_abs, bound)
        zero = max_abs == 0
        # beta is a fixed power-of-two step below alpha, never a max over r;
        # a zero block stores the sentinel in both scales since alpha - shift
        # would fall below the E8M0 range
        beta_exp = np.where(zero, Config.E8M0_ZERO_SENTINEL, alpha_exp - shift).astype(np.int32)
        MxScaling.check_range(beta_exp[~zero])

        alpha = np.ldexp(1.0, alpha_exp.astype(np.int64))[:, None]
        q1 = FP4_GRID.encode(x / alpha)
        residual = x - alpha * FP4_GRID.decode(q1).astype(np.float64)
        beta = np.ldexp(1.0, beta_exp.astype(np.int64))[:, None]
        q2 = FP4_GRID.encode(residual / beta)
        return MxBlockBatch(alpha_exp, beta_exp, q1, q2, variant)

    @staticmethod
    def decompose_block(x, variant: str = "v3") -> MxBlockPair:
        values = np.asarray(x, dtype=np.float32)
        if values.shape != (BLOCK,):
            raise ShapeError(f"MX block must have exactly {BLOCK} elements, got shape {values.shape}")
        ValidationUtils.require_finite(values, "MX block")
        return Mxfp4Msd.decompose_blocks(values[None, :], variant).block(0)

    @staticmethod
    def reconstruct(pair: MxBlockPair) -> np.ndarray:
        coarse = pair.alpha.value * FP4_GRID.decode(pair.q1).astype(np.float64)
        fine = pair.beta.value * FP4_GRID.decode(pair.q2).astype(np.float64)
        return (coarse + fine).astype(np.float32)

    @staticmethod
    def reconstruct_blocks(batch: MxBlockBatch, dtype=np.float32) -> np.ndarray:
        return (batch.coarse() + batch.fine()).astype(dtype)

    @staticmethod
    def decompose_rows(x, variant: str = "v3") -> MxBlockBatch:
        """Decompose a rows x n matrix; blocks run along each row"""
        return Mxfp4Msd.decompose_blocks(MxScaling.as_blocks(x), variant)


class Mxfp8Quantizer:
    @staticmethod
    def quantize_blocks(blocks, scale_rule: str = Config.MXFP8_SCALE_RULE) -> Mxfp8Batch:
        x = np.asarray(blocks, dtype=np.float32).reshape(-1, BLOCK).astype(np.float64)
        max_abs = np.max(np.abs(x), axis=1)
        if scale_rule == "ceil":
            # block maximum lands at or below 448, nothing saturates
            scale_exp = MxScaling.ceil_exponents(max_abs, 1.75) - 8
        elif scale_rule == "floor":
            scale_exp = MxScaling.floor_log2(max_abs) - 8
        else:
            raise ValueError(f"unknown MXFP8 scale rule {scale_rule!r}")
        zero = max_abs == 0
        scale_exp = np.where(zero, Config.E8M0_ZERO_SENTINEL, scale_exp).astype(np.int32)
        MxScaling.check_range(scale_exp[~zero])
        scale = np.ldexp(1.0, scale_exp.astype(np.int64))[:, None]
        return Mxfp8Batch(scale_exp, E4M3_GRID.encode(x / scale))

    @staticmethod
    def quantize_block(x, scale_rule: str = Config.MXFP8_SCALE_RULE) -> Mxfp8Block:
        values = np.asarray(x, dtype=np.float32)
        if values.shape != (BLOCK,):
            raise ShapeError(f"MX block must have exactly {BLOCK} elements, got shape {values.shape}")
        ValidationUtils.require_finite(values, "MX block")
        batch = Mxfp8Quantizer.quantize_blocks(values[None, :], scale_rule)
        return Mxfp8Block(E8m0Scale(int(batch.scale_exp[0])), batch.codes[0].copy())

    @staticmethod
    def dequantize_block(block: Mxfp8Block) -> np.ndarray:
        return (block.scale.value * E4M3_GRID.decode(block.elems).astype(np.float64)).astype(np.float32)

    @staticmethod
    def quantize_rows(x, scale_rule: str = Config.MXFP8_SCALE_RULE) -> np.ndarray:
        """Quantize-dequantize a rows x n matrix through MXFP8"""
        values = np.asarray(getattr(x, "values", x), dtype=np.float32)
        batch = Mxfp8Quantizer.quantize_blocks(MxScaling.as_blocks(values), scale_rule)
        return batch.dequantize().reshape(values.shape)


class Mxfp4WeightQuantizer:
    @staticmethod
    def quantize_weight(w) -> Mxfp4Weight:
        """Single-pass MXFP4 with alpha = 2**ceil(log2(M_b / 1.75))"""
        values = ValidationUtils.require_matrix(np.asarray(w, dtype=np.float32), "weight")
        m, n = values.shape
        blocks = MxScaling.as_blocks(values).astype(np.float64)
        exponents = MxScaling.ceil_exponents(np.max(np.abs(blocks), axis=1), Config.FP4_MAX)
        scale = np.ldexp(1.0, exponents.astype(np.int64))[:, None]
        codes = FP4_GRID.encode(blocks / scale)
        return Mxfp4Weight(exponents.reshape(m, n // BLOCK), codes.reshape(m, n))

    @staticmethod
    def quantize_rows(x) -> np.ndarray:
        """Quantize-dequantize activations through single-pass MXFP4"""
        values = np.asarray(getattr(x, "values", x), dtype=np.float32)
        flat = values.reshape(-1, values.shape[-1])
        return Mxfp4WeightQuantizer.quantize_weight(flat).dequantize().reshape(values.shape)


class MxStorage:
    @staticmethod
    def bits_per_element(fmt: str) -> float:
        if fmt not in STORAGE_BITS:
            raise ValueError(f"unknown storage format {fmt!r}")
        return STORAGE_BITS[fmt]
