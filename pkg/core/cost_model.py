import logging
from dataclasses import dataclass
from typing import Dict, Optional, Tuple

from core.utils import ConfigError, ShapeError, ValidationUtils

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class AttnCostInput:
    N: int
    M: int
    d: int
    Bc: int

    def __post_init__(self):
        ValidationUtils.require_positive((self.M, self.d, self.Bc), ("M", "d", "Bc"))
        if self.N < 0:
            raise ShapeError(f"N must be non-negative, got {self.N}")
        if self.M % self.Bc != 0:
            raise ShapeError(f"tile size Bc={self.Bc} does not divide M={self.M}")

    @property
    def Tc(self) -> int:
        return self.M // self.Bc


@dataclass(frozen=True)
class LinearCostInput:
    b: int
    m: int
    n: int

    def __post_init__(self):
        ValidationUtils.require_positive((self.m, self.n), ("m", "n"))
        if self.b < 0:
            raise ShapeError(f"b must be non-negative, got {self.b}")


@dataclass(frozen=True)
class ThroughputProfile:
    """Illustrative rates in ops/s; GEMM rates default to multiples of BF16"""
    R_vector: float = 2.0e12
    R_gemm_bf16: float = 1.0e14
    int8_ratio: float = 2.0
    fp8_ratio: float = 2.0
    fp4_ratio: float = 4.0
    T_sync: float = 0.0
    bandwidth: Optional[float] = None  # bytes/s; None leaves HBM time out

    def __post_init__(self):
        for name in ("R_vector", "R_gemm_bf16", "int8_ratio", "fp8_ratio", "fp4_ratio"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        if self.T_sync < 0 or (self.bandwidth is not None and self.bandwidth <= 0):
            raise ConfigError("T_sync must be >= 0 and bandwidth positive when given")

    @property
    def R_gemm_int8(self) -> float:
        return self.R_gemm_bf16 * self.int8_ratio

    @property
    def R_gemm_fp8(self) -> float:
        return self.R_gemm_bf16 * self.fp8_ratio

    @property
    def R_gemm_fp4(self) -> float:
        return self.R_gemm_bf16 * self.fp4_ratio


@dataclass(frozen=True)
class SpecDecodeInput:
    N_spec: int
    G: int

    def __post_init__(self):
        if self.N_spec < 0 or self.G < 1:
            raise ShapeError(f"need N_spec >= 0 and G >= 1, got {self.N_spec}, {self.G}")


# Vector-side ops per activation row for the two-pass INT8 scheme
LINEAR_MSD_OPS = {"pass1": 3, "pass2": 5, "reconstruct": 2}

LATENCY_METHODS = ("dequant", "msd_int8", "msd_mxfp4", "fp8", "bf16")


class CostModel:
    @staticmethod
    def attn_vector_ops(inp: AttnCostInput, method: str) -> int:
        """Vector-core op count for one attention head"""
        N, M, d, Tc = inp.N, inp.M, inp.d, inp.Tc
        if method == "dequant":
            return 4 * M * d + 4 * N * M + 3 * N * d * Tc
        if method == "msd":
            return 6 * N * d + 12 * N * M + 7 * N * d * Tc
        raise ValueError(f"unknown attention method {method!r}")

    @staticmethod
    def attn_crossover(M: int, d: int, Bc: int) -> Tuple[float, float]:
        """(approximate, exact) query count where dequant and MSD vector costs meet"""
        Tc = AttnCostInput(0, M, d, Bc).Tc
        approx = 4 * M * d / (12 * M + 7 * d * Tc)
        exact = 4 * M * d / (6 * d + 8 * M + 4 * d * Tc)
        return approx, exact

    @staticmethod
    def linear_hbm_traffic(inp: LinearCostInput, method: str) -> int:
        """Bytes moved through HBM for one linear layer"""
        b, m, n = inp.b, inp.m, inp.n
        if method == "dequant":
            return 3 * m * n + 2 * b * n + 2 * b * m
        if method == "msd_resident":
            return m * n + 4 * b * n + 2 * b * m
        if method == "msd_conservative":
            return 2 * m * n + 4 * b * n + 2 * b * m
        if method == "bf16":
            return 2 * m * n + 2 * b * n + 2 * b * m
        raise ValueError(f"unknown linear traffic method {method!r}")

    @staticmethod
    def linear_hbm_ratios(inp: LinearCostInput) -> Dict[str, float]:
        """Full-formula and dominant-term ratios of dequant traffic over each MSD variant"""
        dequant = CostModel.linear_hbm_traffic(inp, "dequant")
        out = {}
        for method, weight_bytes in (("msd_resident", 1), ("msd_conservative", 2)):
            out[method] = dequant / CostModel.linear_hbm_traffic(inp, method)
            out[f"{method}_dominant"] = 3.0 / weight_bytes
        return out

    @staticmethod
    def attn_hbm_traffic(M: int, d: int, method: str) -> int:
        ValidationUtils.require_positive((M, d), ("M", "d"))
        if method == "dequant":
            return 5 * M * d
        if method == "msd":
            return 2 * M * d
        raise ValueError(f"unknown attention traffic method {method!r}")

    @staticmethod
    def vector_flops_linear(n: int, m: int, method: str) -> int:
        """Vector ops per layer (per activation row for MSD)"""
        if method == "msd":
            return LINEAR_MSD_OPS["pass1"] * n + LINEAR_MSD_OPS["pass2"] * n + LINEAR_MSD_OPS["reconstruct"] * m
        if method == "dequant":
            return 2 * m * n
        raise ValueError(f"unknown linear method {method!r}")

    @staticmethod
    def cube_flops_linear(inp: LinearCostInput, method: str) -> int:
        """Matrix-core ops; MSD methods run two GEMM passes"""
        single = 2 * inp.b * inp.m * inp.n
        if method in ("msd_int8", "msd_mxfp4"):
            return 2 * single
        if method in ("dequant", "fp8", "bf16"):
            return single
        raise ValueError(f"unknown linear method {method!r}")

    @staticmethod
    def linear_latency(inp: LinearCostInput, profile: ThroughputProfile,
                       method: str) -> Tuple[float, float, float]:
        """(T_vector, T_cube, T_total) with T_total = max(T_vector, T_cube) + T_sync"""
        b, m, n = inp.b, inp.m, inp.n
        cube = CostModel.cube_flops_linear(inp, method)
        if method == "dequant":
            t_vector = m * n / profile.R_vector
            t_cube = cube / profile.R_gemm_bf16
            traffic = CostModel.linear_hbm_traffic(inp, "dequant")
        elif method in ("msd_int8", "msd_mxfp4"):
            t_vector = b * CostModel.vector_flops_linear(n, m, "msd") / profile.R_vector
            rate = profile.R_gemm_int8 if method == "msd_int8" else profile.R_gemm_fp4
            t_cube = cube / rate
            traffic = CostModel.linear_hbm_traffic(inp, "msd_resident") if method == "msd_int8" else None
        elif method == "fp8":
            t_vector = b * (3 * n + 2 * m) / profile.R_vector
            t_cube = cube / profile.R_gemm_fp8
            traffic = None
        elif method == "bf16":
            t_vector = 0.0
            t_cube = cube / profile.R_gemm_bf16
            traffic = CostModel.linear_hbm_traffic(inp, "bf16")
        else:
            raise ValueError(f"unknown latency method {method!r}")
        t_total = max(t_vector, t_cube) + profile.T_sync
        if profile.bandwidth is not None and traffic is not None:
            t_total += traffic / profile.bandwidth
        return t_vector, t_cube, t_total

    @staticmethod
    def effective_queries(inp: SpecDecodeInput) -> int:
        return (1 + inp.N_spec) * inp.G

    @staticmethod
    def format_millions(count: float) -> str:
        return f"{count / 1e6:.1f}M"
