import logging
import math
import numpy as np
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Tuple

from config.settings import Config
from core.utils import NumericError, ShapeError

logger = logging.getLogger(__name__)


@dataclass
class ErrorReport:
    l2_rel: float
    exceed: Dict[float, float] = field(default_factory=dict)
    eff_bits: float = math.inf
    excluded: int = 0
    max_bound_ratio: Optional[float] = None
    clip_rate: Optional[float] = None

    def to_dict(self) -> Dict:
        out = {"l2_rel": self.l2_rel, "eff_bits": self.eff_bits, "excluded": self.excluded}
        for threshold, fraction in sorted(self.exceed.items()):
            out[f"exceed_{threshold:g}"] = fraction
        if self.max_bound_ratio is not None:
            out["max_bound_ratio"] = self.max_bound_ratio
        if self.clip_rate is not None:
            out["clip_rate"] = self.clip_rate
        return out


class ErrorMetrics:
    @staticmethod
    def _pair(y, y_ref) -> Tuple[np.ndarray, np.ndarray]:
        a = np.asarray(getattr(y, "values", y), dtype=np.float64)
        b = np.asarray(getattr(y_ref, "values", y_ref), dtype=np.float64)
        if a.shape != b.shape:
            raise ShapeError(f"metric operands differ in shape: {a.shape} vs {b.shape}")
        return a, b

    @staticmethod
    def l2_relative(y, y_ref) -> float:
        """Calculate ||y - y_ref||_2 / ||y_ref||_2 in binary64"""
        a, b = ErrorMetrics._pair(y, y_ref)
        ref_norm = np.linalg.norm(b.ravel())
        if ref_norm == 0:
            raise NumericError("degenerate reference: zero norm")
        return float(np.linalg.norm((a - b).ravel()) / ref_norm)

    @staticmethod
    def excluded_count(y_ref) -> int:
        """Elements with a zero reference value, left out of pointwise ratios"""
        return int(np.count_nonzero(np.asarray(getattr(y_ref, "values", y_ref)) == 0))

    @staticmethod
    def exceed_fraction(y, y_ref, threshold: float) -> float:
        """Fraction of elements whose pointwise relative error exceeds threshold"""
        a, b = ErrorMetrics._pair(y, y_ref)
        live = b != 0
        total = int(np.count_nonzero(live))
        if total == 0:
            return 0.0
        rel = np.abs(a[live] - b[live]) / np.abs(b[live])
        return float(np.count_nonzero(rel > threshold) / total)

    @staticmethod
    def effective_bits(l2_rel: float) -> float:
        if l2_rel < 0:
            raise ValueError(f"l2_rel must be non-negative, got {l2_rel}")
        if l2_rel == 0:
            return math.inf
        return -math.log2(l2_rel)

    @staticmethod
    def report(y, y_ref, thresholds: Iterable[float] = Config.EXCEED_THRESHOLDS) -> ErrorReport:
        """Build a full ErrorReport for one output against its reference"""
        l2 = ErrorMetrics.l2_relative(y, y_ref)
        exceed = {float(t): ErrorMetrics.exceed_fraction(y, y_ref, t) for t in thresholds}
        return ErrorReport(l2, exceed, ErrorMetrics.effective_bits(l2), ErrorMetrics.excluded_count(y_ref))

    @staticmethod
    def bound_ratio_report(batch, originals) -> Tuple[float, float]:
        """Max |x - recon| / (alpha/64) over blocks, and the pass-2 clip rate"""
        x = np.asarray(originals, dtype=np.float32).reshape(-1, Config.MX_BLOCK_SIZE).astype(np.float64)
        if len(batch) == 0 or x.shape[0] != len(batch):
            raise ShapeError(f"bound report needs one original per block: {x.shape[0]} vs {len(batch)}")
        coarse = batch.coarse()
        err = np.abs(x - (coarse + batch.fine()))
        bound = batch.alpha()[:, None] / 64.0
        live = np.max(np.abs(x), axis=1) > 0
        ratio = float(np.max(err[live] / bound[live])) if np.any(live) else 0.0

        beta = batch.beta()[:, None]
        scaled = np.abs(x - coarse)[live] / beta[live]
        clip = float(np.count_nonzero(scaled > Config.FP4_MAX) / x.size)
        return ratio, clip

    @staticmethod
    def mean_reports(reports: List[ErrorReport]) -> ErrorReport:
        """Average trial reports; effective bits come from the mean L2"""
        if not reports:
            raise ValueError("no reports to average")
        l2 = float(np.mean([r.l2_rel for r in reports]))
        thresholds = sorted(reports[0].exceed)
        exceed = {t: float(np.mean([r.exceed[t] for r in reports])) for t in thresholds}
        ratios = [r.max_bound_ratio for r in reports if r.max_bound_ratio is not None]
        clips = [r.clip_rate for r in reports if r.clip_rate is not None]
        return ErrorReport(
            l2_rel=l2,
            exceed=exceed,
            eff_bits=ErrorMetrics.effective_bits(l2),
            excluded=int(sum(r.excluded for r in reports)),
            max_bound_ratio=max(ratios) if ratios else None,
            clip_rate=float(np.mean(clips)) if clips else None,
        )
