import numpy as np
from dataclasses import dataclass
from typing import Union

from core.utils import ShapeError, ValidationUtils

ArrayLike = Union[np.ndarray, float, int]

BF16_MASK = np.uint32(0xFFFF0000)


class Precision:
    @staticmethod
    def bf16_truncate(values: ArrayLike) -> Union[np.ndarray, np.float32]:
        """Zero the low 16 bits of each binary32 pattern (round toward zero to BF16)"""
        arr = np.asarray(values, dtype=np.float32)
        ValidationUtils.require_finite(arr, "bf16_truncate")
        flat = np.ascontiguousarray(arr).reshape(-1)
        masked = (flat.view(np.uint32) & BF16_MASK).view(np.float32).reshape(arr.shape)
        if masked.ndim == 0:
            return np.float32(masked[()])
        return masked

    @staticmethod
    def is_bf16(values: ArrayLike) -> bool:
        """Check that every element already lies on the BF16 grid"""
        flat = np.ascontiguousarray(np.asarray(values, dtype=np.float32)).reshape(-1)
        return bool(np.all((flat.view(np.uint32) & np.uint32(0xFFFF)) == 0))

    @staticmethod
    def round_half_even(values: ArrayLike) -> Union[np.ndarray, int]:
        """Nearest integer with ties to even"""
        rounded = np.rint(np.asarray(values, dtype=np.float64)).astype(np.int64)
        if rounded.ndim == 0:
            return int(rounded)
        return rounded

    @staticmethod
    def matmul_fp32(a: np.ndarray, b: np.ndarray) -> np.ndarray:
        """a (r x k) @ b (k x c), binary32 products accumulated in ascending k order"""
        a32 = np.asarray(a, dtype=np.float32)
        b32 = np.asarray(b, dtype=np.float32)
        if a32.ndim != 2 or b32.ndim != 2 or a32.shape[1] != b32.shape[0]:
            raise ShapeError(f"matmul shape mismatch: {a32.shape} @ {b32.shape}")
        acc = np.zeros((a32.shape[0], b32.shape[1]), dtype=np.float32)
        term = np.empty_like(acc)
        for k in range(a32.shape[1]):
            np.multiply(a32[:, k, None], b32[None, k, :], out=term)
            acc += term
        return acc


@dataclass(frozen=True)
class SimMatrix:
    """binary32 matrix that records whether its entries sit on the BF16 grid"""
    values: np.ndarray
    bf16: bool = False

    @classmethod
    def wrap(cls, values) -> "SimMatrix":
        if isinstance(values, SimMatrix):
            return values
        return cls(np.asarray(values, dtype=np.float32), bf16=False)

    @property
    def shape(self):
        return self.values.shape

    def truncated(self) -> "SimMatrix":
        if self.bf16:
            return self
        return SimMatrix(Precision.bf16_truncate(self.values), bf16=True)


class MiniFloatGrid:
    """Sign-magnitude code book with nearest rounding, ties to even code, saturation"""

    def __init__(self, name: str, magnitudes, sign_shift: int):
        self.name = name
        self.magnitudes = np.asarray(magnitudes, dtype=np.float64)
        if np.any(np.diff(self.magnitudes) <= 0):
            raise ValueError(f"{name} magnitudes must be strictly increasing")
        self.sign_bit = 1 << sign_shift
        self.max_value = float(self.magnitudes[-1])
        table = np.full(self.sign_bit, np.nan)
        table[: self.magnitudes.size] = self.magnitudes
        self._decode_table = table

    def encode(self, values: ArrayLike) -> np.ndarray:
        """Round each value to the nearest code; magnitudes above the grid saturate"""
        v = np.asarray(values, dtype=np.float64)
        mag = np.abs(v)
        top = self.magnitudes.size - 1
        hi = np.minimum(np.searchsorted(self.magnitudes, mag, side="left"), top)
        lo = np.maximum(hi - 1, 0)
        d_lo = mag - self.magnitudes[lo]
        d_hi = self.magnitudes[hi] - mag
        pick_hi = (d_hi < d_lo) | ((d_hi == d_lo) & (hi % 2 == 0))
        index = np.where(pick_hi, hi, lo)
        codes = index | np.where(np.signbit(v), self.sign_bit, 0)
        return codes.astype(np.uint8)

    def decode(self, codes: np.ndarray) -> np.ndarray:
        c = np.asarray(codes, dtype=np.int64)
        mag = self._decode_table[c & (self.sign_bit - 1)]
        return np.where(c & self.sign_bit, -mag, mag).astype(np.float32)

    def round_value(self, values: ArrayLike) -> np.ndarray:
        return self.decode(self.encode(values))


def _e4m3_magnitudes() -> np.ndarray:
    # codes 0..126; 127 is NaN in E4M3
    mags = []
    for code in range(127):
        exponent, mantissa = code >> 3, code & 7
        if exponent == 0:
            mags.append(mantissa * 2.0 ** -9)
        else:
            mags.append((8 + mantissa) * 2.0 ** (exponent - 10))
    return np.asarray(mags)


FP4_GRID = MiniFloatGrid("fp4_e1m2", np.arange(8) * 0.25, sign_shift=3)
E4M3_GRID = MiniFloatGrid("fp8_e4m3", _e4m3_magnitudes(), sign_shift=7)
