import logging
import math
import numpy as np
from dataclasses import dataclass, field
from typing import Dict, Tuple

from config.settings import Config
from core.numerics import Precision, SimMatrix
from core.utils import ConfigError, ValidationUtils

logger = logging.getLogger(__name__)

# kind -> default parameters
DISTRIBUTION_DEFAULTS: Dict[str, Dict[str, float]] = {
    "gaussian": {"mean": 0.0, "std": 1.0},
    "uniform": {"low": -1.0, "high": 1.0},
    "laplacian": {"loc": 0.0, "scale": 1.0},
    "exponential": {"rate": 1.0},
    "student_t": {"df": 3.0},
    "cauchy": {},
    "gaussian_with_outliers": {"rate": 0.01, "magnitude": 20.0, "std": 1.0},
}


@dataclass(frozen=True)
class DistributionSpec:
    kind: str
    params: Dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in DISTRIBUTION_DEFAULTS:
            raise ConfigError(f"unknown distribution kind {self.kind!r}")
        merged = dict(DISTRIBUTION_DEFAULTS[self.kind])
        for key, value in self.params.items():
            if key not in merged:
                raise ConfigError(f"{self.kind} has no parameter {key!r}")
            merged[key] = float(value)
        object.__setattr__(self, "params", merged)
        self._validate()

    def _validate(self):
        p = self.params
        if not all(math.isfinite(v) for v in p.values()):
            raise ConfigError(f"{self.kind} parameters must be finite: {p}")
        if p.get("std", 0.0) < 0 or p.get("scale", 1.0) <= 0:
            raise ConfigError(f"{self.kind} spread must be non-negative: {p}")
        if self.kind == "uniform" and p["high"] < p["low"]:
            raise ConfigError(f"uniform needs low <= high: {p}")
        if self.kind == "exponential" and p["rate"] <= 0:
            raise ConfigError("exponential rate must be positive")
        if self.kind == "student_t" and p["df"] <= 0:
            raise ConfigError("student_t df must be positive")
        if self.kind == "gaussian_with_outliers" and not 0.0 <= p["rate"] <= 1.0:
            raise ConfigError("outlier rate must lie in [0, 1]")

    @classmethod
    def from_dict(cls, data) -> "DistributionSpec":
        if isinstance(data, str):
            return cls(data)
        if not isinstance(data, dict) or "kind" not in data:
            raise ConfigError(f"distribution must be a kind name or an object with 'kind': {data!r}")
        params = {k: v for k, v in data.items() if k != "kind"}
        return cls(data["kind"], params)

    def to_dict(self) -> Dict[str, float]:
        out = {"kind": self.kind}
        out.update(self.params)
        return out

    @property
    def label(self) -> str:
        if not self.params:
            return self.kind
        args = ",".join(f"{v:g}" for v in self.params.values())
        return f"{self.kind}({args})"


@dataclass(frozen=True)
class ExperimentSeed:
    seed: int
    stream_id: int = 0

    def __post_init__(self):
        for name in ("seed", "stream_id"):
            value = int(getattr(self, name))
            if value < 0 or value >= 2**64:
                raise ConfigError(f"{name} must be a 64-bit unsigned integer, got {value}")

    def generator(self) -> np.random.Generator:
        """Counter-based Philox stream keyed by (seed, stream_id)"""
        sequence = np.random.SeedSequence(int(self.seed), spawn_key=(int(self.stream_id),))
        return np.random.Generator(np.random.Philox(sequence))


@dataclass(frozen=True)
class QuantizedWeight:
    """INT8 codes with one binary32 scale per channel along channel_axis"""
    values: np.ndarray = field(repr=False)
    scales: np.ndarray = field(repr=False)
    channel_axis: int = 0

    @property
    def shape(self):
        return self.values.shape

    def dequantize(self) -> np.ndarray:
        scales = self.scales.astype(np.float32)
        if self.channel_axis == 0:
            return self.values.astype(np.float32) * scales[:, None]
        return self.values.astype(np.float32) * scales[None, :]


class DataGenerator:
    @staticmethod
    def sample(spec: DistributionSpec, shape: Tuple[int, ...], rng: np.random.Generator) -> np.ndarray:
        """Draw binary64 samples, clipped to the heavy-tail limit"""
        p = spec.params
        if spec.kind == "gaussian":
            values = rng.normal(p["mean"], p["std"], shape)
        elif spec.kind == "uniform":
            values = rng.uniform(p["low"], p["high"], shape)
        elif spec.kind == "laplacian":
            values = rng.laplace(p["loc"], p["scale"], shape)
        elif spec.kind == "exponential":
            values = rng.exponential(1.0 / p["rate"], shape)
        elif spec.kind == "student_t":
            values = rng.standard_t(p["df"], shape)
        elif spec.kind == "cauchy":
            values = rng.standard_cauchy(shape)
        else:
            values = rng.normal(0.0, p["std"], shape)
            outlier = rng.random(shape) < p["rate"]
            magnitude = p["magnitude"] * (1.0 + rng.random(shape))
            sign = np.where(rng.random(shape) < 0.5, -1.0, 1.0)
            values = np.where(outlier, sign * magnitude, values)
        return np.clip(values, -Config.HEAVY_TAIL_CLIP, Config.HEAVY_TAIL_CLIP)

    @staticmethod
    def gen_activation(shape: Tuple[int, int], spec: DistributionSpec, seed: ExperimentSeed,
                       truncate: bool = True) -> SimMatrix:
        """Activation matrix, BF16-truncated unless truncate is False"""
        ValidationUtils.require_positive(shape, ("rows", "cols")[: len(shape)])
        values = DataGenerator.sample(spec, tuple(int(s) for s in shape), seed.generator())
        values = values.astype(np.float32)
        if truncate:
            return SimMatrix(Precision.bf16_truncate(values), bf16=True)
        return SimMatrix(values, bf16=False)

    @staticmethod
    def gen_int8_weight(m: int, n: int, seed: ExperimentSeed,
                        scale_range: Tuple[float, float] = Config.SCALE_RANGE) -> QuantizedWeight:
        """Uniform INT8 codes in [-127, 127] with one scale per output row"""
        ValidationUtils.require_positive((m, n), ("m", "n"))
        rng = seed.generator()
        values = rng.integers(-127, 128, size=(m, n), dtype=np.int64).astype(np.int8)
        scales = rng.uniform(scale_range[0], scale_range[1], size=m).astype(np.float32)
        return QuantizedWeight(values, scales, channel_axis=0)

    @staticmethod
    def gen_kv_cache(tokens: int, head_dim: int, seed: ExperimentSeed,
                     scale_range: Tuple[float, float] = Config.SCALE_RANGE):
        """K and V caches (tokens x head_dim) with per-channel scales of length head_dim"""
        ValidationUtils.require_positive((tokens, head_dim), ("M", "d"))
        rng = seed.generator()
        caches = []
        for _ in range(2):
            values = rng.integers(-127, 128, size=(tokens, head_dim), dtype=np.int64).astype(np.int8)
            scales = rng.uniform(scale_range[0], scale_range[1], size=head_dim).astype(np.float32)
            caches.append(QuantizedWeight(values, scales, channel_axis=1))
        return caches[0], caches[1]

    @staticmethod
    def gen_float_weight(m: int, n: int, spec: DistributionSpec, seed: ExperimentSeed) -> np.ndarray:
        """binary32 weight matrix for the MX experiments"""
        ValidationUtils.require_positive((m, n), ("m", "n"))
        return DataGenerator.sample(spec, (int(m), int(n)), seed.generator()).astype(np.float32)
