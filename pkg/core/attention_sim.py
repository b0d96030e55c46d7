import logging
import math
import numpy as np
from dataclasses import dataclass
from typing import Callable, Optional

from config.settings import Config
from core.gemm_sim import GemmSimulator
from core.numerics import Precision
from core.utils import ShapeError, ValidationUtils
from quantizers.msd_int8 import Int8Msd, OperationCounter

logger = logging.getLogger(__name__)

ATTENTION_METHODS = ("oracle", "dequant", "flash_dequant", "flash_msd")


@dataclass(frozen=True)
class AttentionConfig:
    N: int
    M: int
    d: int
    Bc: int = Config.DEFAULT_BLOCK_COLS
    method: str = "flash_msd"

    def __post_init__(self):
        ValidationUtils.require_positive((self.N, self.M, self.d, self.Bc), ("N", "M", "d", "Bc"))
        if self.M % self.Bc != 0:
            raise ShapeError(f"tile size Bc={self.Bc} does not divide M={self.M}")
        if self.method not in ATTENTION_METHODS:
            raise ValueError(f"unknown attention method {self.method!r}")

    @property
    def tiles(self) -> int:
        return self.M // self.Bc

    @property
    def softmax_scale(self) -> np.float32:
        return np.float32(1.0 / math.sqrt(self.d))


@dataclass
class OnlineSoftmaxState:
    """Running row max, normalizer and unnormalized output across KV tiles"""
    m: np.ndarray
    l: np.ndarray
    acc: np.ndarray

    @classmethod
    def start(cls, rows: int, cols: int, dtype=np.float32) -> "OnlineSoftmaxState":
        return cls(np.full(rows, -np.inf, dtype=dtype), np.zeros(rows, dtype=dtype),
                   np.zeros((rows, cols), dtype=dtype))

    def absorb_scores(self, scores: np.ndarray):
        """Update m and l for one tile of scores; returns exp(S - m_new) and the rescale factor"""
        m_new = np.maximum(self.m, np.max(scores, axis=1))
        corr = np.exp(self.m - m_new)
        p = np.exp(scores - m_new[:, None])
        self.l = self.l * corr + np.sum(p, axis=1)
        self.m = m_new
        return p, corr

    def absorb_output(self, contribution: np.ndarray, corr: np.ndarray):
        self.acc = self.acc * corr[:, None] + contribution

    def finish(self) -> np.ndarray:
        return self.acc / self.l[:, None]


class AttentionSimulator:
    """Single-head attention over an INT8 KV cache with per-channel scales"""

    def __init__(self, counter: Optional[OperationCounter] = None,
                 query_block_rows: int = Config.QUERY_BLOCK_ROWS):
        self.counter = counter or OperationCounter()
        self.query_block_rows = int(query_block_rows)
        self.alpha_p = Int8Msd.scale_toward_zero(1.0, Config.INT8_ALPHA_DIVISOR)
        self.beta_p = Int8Msd.scale_toward_zero(self.alpha_p, Config.INT8_RESIDUAL_DIVISOR)

    def oracle(self, Q, K, V, config: AttentionConfig) -> np.ndarray:
        """Binary64 softmax(Q K^T / sqrt(d)) V on the dequantized caches"""
        k64 = K.dequantize().astype(np.float64)
        v64 = V.dequantize().astype(np.float64)

        def block(q):
            return self.softmax_weights(q, k64, config) @ v64

        return self._by_query_blocks(Q, K, V, config, block)

    @staticmethod
    def softmax_weights(q, k64: np.ndarray, config: AttentionConfig) -> np.ndarray:
        s = np.asarray(q, dtype=np.float64) @ k64.T / math.sqrt(config.d)
        e = np.exp(s - np.max(s, axis=1, keepdims=True))
        return e / np.sum(e, axis=1, keepdims=True)

    def dequant(self, Q, K, V, config: AttentionConfig) -> np.ndarray:
        """Monolithic BF16 dequant attention with an FP32 softmax"""
        k_bf16 = Precision.bf16_truncate(K.dequantize())
        v_bf16 = Precision.bf16_truncate(V.dequantize())

        def block(q):
            s = Precision.matmul_fp32(Precision.bf16_truncate(q), k_bf16.T) * config.softmax_scale
            p = np.exp(s - np.max(s, axis=1)[:, None])
            l = np.sum(p, axis=1)
            return Precision.matmul_fp32(Precision.bf16_truncate(p), v_bf16) / l[:, None]

        return self._by_query_blocks(Q, K, V, config, block)

    def flash(self, Q, K, V, config: AttentionConfig, bf16: bool = True) -> np.ndarray:
        """Tiled attention with online softmax; bf16=False keeps binary64 inside tiles"""
        if bf16:
            k_deq = Precision.bf16_truncate(K.dequantize())
            v_deq = Precision.bf16_truncate(V.dequantize())
        else:
            k_deq = K.dequantize().astype(np.float64)
            v_deq = V.dequantize().astype(np.float64)

        def block(q):
            if bf16:
                q_in = Precision.bf16_truncate(q)
                state = OnlineSoftmaxState.start(q.shape[0], config.d, np.float32)
            else:
                q_in = np.asarray(q, dtype=np.float64)
                state = OnlineSoftmaxState.start(q.shape[0], config.d, np.float64)
            for j in range(config.tiles):
                cols = slice(j * config.Bc, (j + 1) * config.Bc)
                if bf16:
                    s = Precision.matmul_fp32(q_in, k_deq[cols].T) * config.softmax_scale
                    p, corr = state.absorb_scores(s)
                    state.absorb_output(Precision.matmul_fp32(Precision.bf16_truncate(p), v_deq[cols]), corr)
                else:
                    s = q_in @ k_deq[cols].T / math.sqrt(config.d)
                    p, corr = state.absorb_scores(s)
                    state.absorb_output(p @ v_deq[cols], corr)
            return state.finish()

        return self._by_query_blocks(Q, K, V, config, block)

    def flash_msd(self, Q, K, V, config: AttentionConfig) -> np.ndarray:
        """Flash attention with MSD on both GEMMs; P uses the constant alpha_P = 1/127"""
        s_k = K.scales.astype(np.float32)
        s_v = V.scales.astype(np.float32)

        def block(q):
            # the K scale is absorbed into Q so S comes from integer codes only
            dq = Int8Msd.decompose2(np.asarray(q, dtype=np.float32) * s_k[None, :], counter=self.counter)
            state = OnlineSoftmaxState.start(q.shape[0], config.d, np.float32)
            for j in range(config.tiles):
                rows = slice(j * config.Bc, (j + 1) * config.Bc)
                k_codes = K.values[rows]
                s1 = GemmSimulator.integer_gemm(dq.x1, k_codes).astype(np.float32)
                s2 = GemmSimulator.integer_gemm(dq.x2, k_codes).astype(np.float32)
                s = (dq.alpha[:, None] * s1 + dq.beta[:, None] * s2) * config.softmax_scale
                p, corr = state.absorb_scores(s)

                dp = Int8Msd.decompose_with_scales(p, self.alpha_p, self.beta_p, counter=self.counter)
                v_codes = V.values[rows].T
                o1 = GemmSimulator.integer_gemm(dp.x1, v_codes).astype(np.float32)
                o2 = GemmSimulator.integer_gemm(dp.x2, v_codes).astype(np.float32)
                state.absorb_output((self.alpha_p * o1 + self.beta_p * o2) * s_v[None, :], corr)
            return state.finish()

        return self._by_query_blocks(Q, K, V, config, block)

    def run(self, Q, K, V, config: AttentionConfig) -> np.ndarray:
        if config.method == "oracle":
            return self.oracle(Q, K, V, config)
        if config.method == "dequant":
            return self.dequant(Q, K, V, config)
        if config.method == "flash_dequant":
            return self.flash(Q, K, V, config)
        return self.flash_msd(Q, K, V, config)

    def _by_query_blocks(self, Q, K, V, config: AttentionConfig,
                         fn: Callable[[np.ndarray], np.ndarray]) -> np.ndarray:
        q = np.asarray(getattr(Q, "values", Q), dtype=np.float32)
        self._check_shapes(q, K, V, config)
        outputs = []
        for start in range(0, q.shape[0], self.query_block_rows):
            outputs.append(fn(q[start:start + self.query_block_rows]))
        logger.debug("attention %s: %d query blocks, %d tiles", config.method, len(outputs), config.tiles)
        return np.concatenate(outputs, axis=0)

    @staticmethod
    def _check_shapes(q: np.ndarray, K, V, config: AttentionConfig):
        ValidationUtils.require_finite(q, "queries")
        if q.shape != (config.N, config.d):
            raise ShapeError(f"Q shape {q.shape} does not match N={config.N}, d={config.d}")
        for name, cache in (("K", K), ("V", V)):
            if cache.values.shape != (config.M, config.d) or cache.scales.shape != (config.d,):
                raise ShapeError(f"{name} cache shape {cache.values.shape} does not match M={config.M}, d={config.d}")
