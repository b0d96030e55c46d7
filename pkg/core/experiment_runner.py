import json
import logging
import math
import os
import time
import numpy as np
from collections import defaultdict
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Dict, List, Optional

from config.settings import Config
from core.attention_sim import AttentionConfig, AttentionSimulator
from core.cost_model import (AttnCostInput, CostModel, LinearCostInput, SpecDecodeInput,
                             ThroughputProfile)
from core.gemm_sim import GemmPipelineKind, GemmSimulator
from core.metrics import ErrorMetrics, ErrorReport
from core.utils import ConfigError, NumericError
from data.logger import ResultRecord
from models.datagen import DataGenerator, DistributionSpec, ExperimentSeed
from quantizers.msd_int8 import Int8Msd, OperationCounter
from quantizers.mx_formats import (MXFP4_VARIANTS, Mxfp4Msd, Mxfp4WeightQuantizer,
                                   Mxfp8Quantizer, MxStorage, STORAGE_BITS)

logger = logging.getLogger(__name__)

# stream ids are trial * 16 + role
ROLE_ACTIVATION = 0
ROLE_WEIGHT = 1
ROLE_QUERY = 2
ROLE_KV = 3

EXPERIMENTS = (
    "gemm_int8", "ablation", "size_sweep", "distribution_sweep", "flash_attention",
    "mxfp4_decomp", "mxfp4_gemm", "mxfp4_size_sweep", "bound_verify", "mxfp4_evolution",
    "cost_tables",
)

GEMM_METHODS = {
    "dequant": GemmPipelineKind.DEQUANT_BF16,
    "msd_int8": GemmPipelineKind.MSD_INT8,
    "msd_int8_fractional": GemmPipelineKind.MSD_INT8_FRACTIONAL,
    "single_scale": GemmPipelineKind.SINGLE_SCALE_INT8,
}

# Distributions of the block bound table
BOUND_DISTRIBUTIONS = [
    {"kind": "gaussian", "std": 0.5},
    {"kind": "gaussian", "std": 1.0},
    {"kind": "uniform", "low": -1.0, "high": 1.0},
    {"kind": "uniform", "low": -3.0, "high": 3.0},
    {"kind": "laplacian", "scale": 1.0},
    {"kind": "student_t", "df": 3.0},
    {"kind": "cauchy"},
]

COST_DEFAULTS = {
    "d": [128, 576],
    "M": 8192,
    "Bc": 64,
    "N": [1, 4, 12, 24, 32, 48],
    "m": 4096,
    "n": 4096,
    "b": 8,
    "spec_decode": [[0, 1], [2, 4], [5, 8]],
    "R_vector": 2.0e12,
    "R_gemm_bf16": 1.0e14,
    "T_sync": 0.0,
    "bandwidth": None,
}

OUTPUT_DEFAULTS = {"dir": None, "formats": list(Config.OUTPUT_FORMATS), "charts": []}
CHART_KEYS = {"file", "metric", "x", "series", "kind", "log_y", "where", "title", "names"}

K3_BOUND_DIVISOR = 127.0 * 254.0 * 254.0 * 2.0


@dataclass
class ExperimentConfig:
    experiment: str
    name: str = ""
    seed: int = Config.DEFAULT_SEED
    trials: int = Config.DEFAULT_TRIALS
    rows: int = Config.DEFAULT_BATCH_ROWS
    sizes: List[int] = field(default_factory=lambda: [4096])
    distributions: List[Dict] = field(default_factory=lambda: [{"kind": "gaussian"}])
    activation_storage: str = "fp32"
    variants: List[str] = field(default_factory=lambda: ["v1", "v2", "v3"])
    seq_lengths: List[int] = field(default_factory=lambda: [4096])
    queries: Optional[int] = None
    head_dim: int = 64
    block_cols: List[int] = field(default_factory=lambda: [Config.DEFAULT_BLOCK_COLS])
    query_dist: Dict = field(default_factory=lambda: {"kind": "gaussian", "std": 0.05})
    kv_scale_range: List[float] = field(default_factory=lambda: list(Config.SCALE_RANGE))
    weight_dist: Dict = field(default_factory=lambda: {"kind": "gaussian"})
    blocks: int = 100000
    samples: int = 1000000
    vector_lengths: List[int] = field(default_factory=lambda: [32, 257, 1024, 4096])
    include_k3: bool = False
    cost: Dict = field(default_factory=dict)
    outputs: Dict = field(default_factory=dict)

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise ConfigError(f"unknown experiment {self.experiment!r}; expected one of {', '.join(EXPERIMENTS)}")
        self.name = self.name or self.experiment
        for name in ("seed", "trials", "rows", "head_dim", "blocks", "samples"):
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, int):
                raise ConfigError(f"{name} must be an integer, got {value!r}")
        if self.seed < 0 or self.seed >= 2**64:
            raise ConfigError(f"seed out of 64-bit unsigned range: {self.seed}")
        for name in ("trials", "rows", "head_dim", "blocks", "samples"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        for name in ("sizes", "seq_lengths", "block_cols", "vector_lengths"):
            values = getattr(self, name)
            if not isinstance(values, list) or not values or not all(
                    isinstance(v, int) and not isinstance(v, bool) and v > 0 for v in values):
                raise ConfigError(f"{name} must be a non-empty list of positive integers")
        if self.queries is not None and (not isinstance(self.queries, int) or self.queries <= 0):
            raise ConfigError("queries must be a positive integer or null")
        if self.activation_storage not in ("fp32", "bf16"):
            raise ConfigError(f"activation_storage must be 'fp32' or 'bf16', got {self.activation_storage!r}")
        unknown = [v for v in self.variants if v not in MXFP4_VARIANTS]
        if unknown:
            raise ConfigError(f"unknown MXFP4 variants {unknown}")
        if len(self.kv_scale_range) != 2 or not 0 < self.kv_scale_range[0] <= self.kv_scale_range[1]:
            raise ConfigError("kv_scale_range must be [low, high] with 0 < low <= high")
        if not isinstance(self.include_k3, bool):
            raise ConfigError("include_k3 must be true or false")
        # parse eagerly so bad specs fail at load time
        self.distribution_specs()
        DistributionSpec.from_dict(self.query_dist)
        DistributionSpec.from_dict(self.weight_dist)
        self.cost = self._merge("cost", self.cost, COST_DEFAULTS)
        self.outputs = self._merge("outputs", self.outputs, OUTPUT_DEFAULTS)
        bad_formats = [f for f in self.outputs["formats"] if f not in Config.OUTPUT_FORMATS]
        if bad_formats:
            raise ConfigError(f"unknown output formats {bad_formats}")
        for chart in self.outputs["charts"]:
            if not isinstance(chart, dict) or "file" not in chart or set(chart) - CHART_KEYS:
                raise ConfigError(f"chart entries need 'file' and only keys {sorted(CHART_KEYS)}: {chart!r}")

    @staticmethod
    def _merge(name: str, given: Dict, defaults: Dict) -> Dict:
        if not isinstance(given, dict):
            raise ConfigError(f"{name} must be an object")
        unknown = sorted(set(given) - set(defaults))
        if unknown:
            raise ConfigError(f"unknown {name} keys {unknown}")
        merged = json.loads(json.dumps(defaults))
        merged.update(given)
        return merged

    @classmethod
    def from_dict(cls, data: Dict) -> "ExperimentConfig":
        if not isinstance(data, dict):
            raise ConfigError("experiment config must be a JSON object")
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown config keys {unknown}")
        if "experiment" not in data:
            raise ConfigError("config is missing 'experiment'")
        return cls(**data)

    @classmethod
    def from_file(cls, path: str) -> "ExperimentConfig":
        """Load a config from a JSON document"""
        try:
            with open(path, "r", encoding="utf-8") as handle:
                data = json.load(handle)
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path}: invalid JSON ({e})")
        except OSError as e:
            raise ConfigError(f"cannot read config {path}: {e}")
        return cls.from_dict(data)

    def to_dict(self) -> Dict:
        return asdict(self)

    def distribution_specs(self) -> List[DistributionSpec]:
        return [DistributionSpec.from_dict(d) for d in self.distributions]

    def with_desk_scale(self) -> "ExperimentConfig":
        """Cap sequence lengths (and query rows) at the desk-scale limit"""
        capped = sorted({min(s, Config.DESK_MAX_SEQ) for s in self.seq_lengths})
        queries = None if self.queries is None else min(self.queries, Config.DESK_MAX_SEQ)
        if capped != sorted(self.seq_lengths) or queries != self.queries:
            logger.warning("desk scale: %s sequence lengths capped at %d", self.name, Config.DESK_MAX_SEQ)
        return replace(self, seq_lengths=capped, queries=queries)


class ExperimentRunner:
    def __init__(self, config: ExperimentConfig):
        self.config = config
        self.seed = Config.resolve_seed(config.seed)
        self.counter = OperationCounter()
        self.gemm = GemmSimulator(self.counter)
        self.attention = AttentionSimulator(self.counter)
        self.generator = DataGenerator()

    def stream(self, trial: int, role: int) -> ExperimentSeed:
        return ExperimentSeed(self.seed, trial * 16 + role)

    def run(self) -> List[ResultRecord]:
        """Execute the configured experiment and return its records"""
        cfg = self.config
        logger.info("running %s (%s), seed %d", cfg.name, cfg.experiment, self.seed)
        start = time.perf_counter()
        records = getattr(self, f"_run_{cfg.experiment}")()
        elapsed = time.perf_counter() - start
        echo = cfg.to_dict()
        echo["seed"] = self.seed
        for record in records:
            record.config = echo
            record.seeds = [self.seed]
            record.wall_time = elapsed
        logger.info("%s finished in %.1fs", cfg.name, elapsed)
        return records

    def _record(self, title: str) -> ResultRecord:
        return ResultRecord(experiment=self.config.experiment, title=title)

    @staticmethod
    def _add_report(record: ResultRecord, method: str, report: ErrorReport, **keys):
        for metric, value in report.to_dict().items():
            record.add(method, metric, value, **keys)

    @staticmethod
    def _pct(value: float, digits: int = 3) -> str:
        return f"{value * 100:.{digits}f}%"

    # INT8 GEMM experiments

    def _gemm_method(self, method: str, x, w):
        if method == "msd_k3":
            return self.gemm.msd_k(x, w, 3)
        return self.gemm.run(GEMM_METHODS[method], x, w)

    def _gemm_reports(self, record: ResultRecord, n: int, spec: DistributionSpec,
                      methods: List[str]) -> Dict[str, ErrorReport]:
        cfg = self.config
        per_method = defaultdict(list)
        for trial in range(cfg.trials):
            try:
                x = self.generator.gen_activation((cfg.rows, n), spec, self.stream(trial, ROLE_ACTIVATION),
                                                  truncate=cfg.activation_storage == "bf16")
                w = self.generator.gen_int8_weight(n, n, self.stream(trial, ROLE_WEIGHT))
                y_ref = self.gemm.fp32_oracle(x, w)
                reports = {m: ErrorMetrics.report(self._gemm_method(m, x, w), y_ref) for m in methods}
            except NumericError as e:
                record.errors.append(f"trial {trial} size {n} {spec.label}: {e}")
                logger.warning("trial %d failed: %s", trial, e)
                continue
            for method, report in reports.items():
                per_method[method].append(report)
        return {m: ErrorMetrics.mean_reports(r) for m, r in per_method.items()}

    def _run_gemm_int8(self) -> List[ResultRecord]:
        cfg = self.config
        methods = ["dequant", "msd_int8", "msd_int8_fractional"]
        records = []
        for n in cfg.sizes:
            for spec in cfg.distribution_specs():
                record = self._record(f"INT8 GEMM accuracy {n}x{n}, {spec.label}")
                reports = self._gemm_reports(record, n, spec, methods)
                for method, report in reports.items():
                    self._add_report(record, method, report, size=n, distribution=spec.label)
                    record.table.append({
                        "Method": method,
                        "L2 Error": self._pct(report.l2_rel),
                        **{f">{t * 100:g}%": self._pct(v, 1) for t, v in sorted(report.exceed.items())},
                    })
                if "dequant" in reports and "msd_int8" in reports and reports["msd_int8"].l2_rel > 0:
                    ratio = reports["dequant"].l2_rel / reports["msd_int8"].l2_rel
                    record.add("improvement_ratio", "ratio", ratio, size=n, distribution=spec.label)
                records.append(record)
        return records

    def _run_ablation(self) -> List[ResultRecord]:
        cfg = self.config
        methods = ["single_scale", "dequant", "msd_int8"] + (["msd_k3"] if cfg.include_k3 else [])
        labels = {"single_scale": "Single-Scale (K=1)", "dequant": "Dequant (BF16)",
                  "msd_int8": "MSD (K=2)", "msd_k3": "MSD (K=3)"}
        records = []
        for n in cfg.sizes:
            spec = cfg.distribution_specs()[0]
            record = self._record(f"Decomposition ablation {n}x{n}")
            reports = self._gemm_reports(record, n, spec, methods)
            for method in methods:
                if method in reports:
                    self._add_report(record, method, reports[method], size=n)
                    record.table.append({"Configuration": labels[method],
                                         "L2 Error": self._pct(reports[method].l2_rel, 4)})
            records.append(record)
        return records

    def _run_size_sweep(self) -> List[ResultRecord]:
        cfg = self.config
        spec = cfg.distribution_specs()[0]
        record = self._record("INT8 GEMM accuracy vs matrix size")
        for n in cfg.sizes:
            reports = self._gemm_reports(record, n, spec, ["dequant", "msd_int8"])
            for method, report in reports.items():
                self._add_report(record, method, report, size=n)
            if len(reports) == 2 and reports["msd_int8"].l2_rel > 0:
                ratio = reports["dequant"].l2_rel / reports["msd_int8"].l2_rel
                record.add("improvement_ratio", "ratio", ratio, size=n)
                record.table.append({"Size": f"{n}x{n}", "Dequant L2": self._pct(reports["dequant"].l2_rel, 2),
                                     "MSD L2": self._pct(reports["msd_int8"].l2_rel, 4),
                                     "Improvement": f"{ratio:.0f}x"})
        return [record]

    def _run_distribution_sweep(self) -> List[ResultRecord]:
        cfg = self.config
        n = cfg.sizes[0]
        record = self._record(f"INT8 GEMM error by activation distribution ({n}x{n})")
        for spec in cfg.distribution_specs():
            reports = self._gemm_reports(record, n, spec, ["dequant", "msd_int8"])
            for method, report in reports.items():
                self._add_report(record, method, report, distribution=spec.label)
            if len(reports) == 2:
                record.table.append({
                    "Distribution": spec.label,
                    "Dequant L2": self._pct(reports["dequant"].l2_rel, 3),
                    "MSD L2": self._pct(reports["msd_int8"].l2_rel, 4),
                    "Dequant >1%": self._pct(reports["dequant"].exceed[0.01], 1),
                    "MSD >1%": self._pct(reports["msd_int8"].exceed[0.01], 1),
                })
        return [record]

    # Attention

    def _run_flash_attention(self) -> List[ResultRecord]:
        cfg = self.config
        d = cfg.head_dim
        q_spec = DistributionSpec.from_dict(cfg.query_dist)
        record = self._record(f"Flash attention accuracy (d={d}, INT8 KV)")
        for seq in cfg.seq_lengths:
            N = cfg.queries or seq
            per_method = defaultdict(list)
            for trial in range(cfg.trials):
                try:
                    q = self.generator.gen_activation((N, d), q_spec, self.stream(trial, ROLE_QUERY),
                                                      truncate=cfg.activation_storage == "bf16")
                    k, v = self.generator.gen_kv_cache(seq, d, self.stream(trial, ROLE_KV),
                                                       tuple(cfg.kv_scale_range))
                    base = AttentionConfig(N, seq, d, seq, "oracle")
                    o_ref = self.attention.oracle(q, k, v, base)
                    trial_reports = {("dequant", None): ErrorMetrics.report(self.attention.dequant(q, k, v, base), o_ref)}
                    for bc in cfg.block_cols:
                        if seq % bc:
                            logger.debug("skipping Bc=%d for seq %d", bc, seq)
                            continue
                        tiled = AttentionConfig(N, seq, d, bc, "flash_dequant")
                        trial_reports[("flash_dequant", bc)] = ErrorMetrics.report(
                            self.attention.flash(q, k, v, tiled), o_ref)
                        trial_reports[("flash_msd", bc)] = ErrorMetrics.report(
                            self.attention.flash_msd(q, k, v, replace(tiled, method="flash_msd")), o_ref)
                except NumericError as e:
                    record.errors.append(f"trial {trial} seq {seq}: {e}")
                    logger.warning("trial %d failed: %s", trial, e)
                    continue
                for key, report in trial_reports.items():
                    per_method[key].append(report)
            for (method, bc), reports in sorted(per_method.items(), key=lambda kv: (kv[0][0], kv[0][1] or 0)):
                mean = ErrorMetrics.mean_reports(reports)
                keys = {"seq": seq} if bc is None else {"seq": seq, "block_cols": bc}
                self._add_report(record, method, mean, **keys)
                record.table.append({
                    "Seq": seq, "Bc": "-" if bc is None else bc, "Method": method,
                    "L2 Error": self._pct(mean.l2_rel, 2), ">1%": self._pct(mean.exceed[0.01], 1),
                    ">5%": self._pct(mean.exceed[0.05], 1),
                })
            logger.info("flash attention seq %d done", seq)
        return [record]

    # MXFP4 experiments

    def _mx_decomposition_reports(self, x: np.ndarray) -> Dict[str, ErrorReport]:
        msd = Mxfp4Msd.reconstruct_blocks(Mxfp4Msd.decompose_rows(x, "v3")).reshape(x.shape)
        return {
            "msd_mxfp4_v3": ErrorMetrics.report(msd, x),
            "mxfp8_ceil": ErrorMetrics.report(Mxfp8Quantizer.quantize_rows(x, "ceil"), x),
            "mxfp8_floor": ErrorMetrics.report(Mxfp8Quantizer.quantize_rows(x, "floor"), x),
            "mxfp4_single": ErrorMetrics.report(Mxfp4WeightQuantizer.quantize_rows(x), x),
        }

    def _run_mxfp4_decomp(self) -> List[ResultRecord]:
        cfg = self.config
        n = cfg.sizes[0]
        record = self._record(f"MXFP4 activation decomposition ({cfg.rows}x{n}, 32-element blocks)")
        baseline = f"mxfp8_{Config.MXFP8_SCALE_RULE}"
        for spec in cfg.distribution_specs():
            per_method = defaultdict(list)
            for trial in range(cfg.trials):
                try:
                    x = self.generator.gen_activation((cfg.rows, n), spec, self.stream(trial, ROLE_ACTIVATION),
                                                      truncate=False).values
                    reports = self._mx_decomposition_reports(x)
                except NumericError as e:
                    record.errors.append(f"trial {trial} {spec.label}: {e}")
                    continue
                for method, report in reports.items():
                    per_method[method].append(report)
            if not per_method:
                continue
            means = {m: ErrorMetrics.mean_reports(r) for m, r in per_method.items()}
            for method, report in means.items():
                self._add_report(record, method, report, distribution=spec.label)
            ratio = means[baseline].l2_rel / means["msd_mxfp4_v3"].l2_rel
            record.add("ratio", "ratio", ratio, distribution=spec.label)
            record.table.append({
                "Distribution": spec.label,
                "MSD L2": f"{means['msd_mxfp4_v3'].l2_rel:.4f}",
                "MSD Eff. Bits": f"{means['msd_mxfp4_v3'].eff_bits:.2f}",
                "MXFP8 L2": f"{means[baseline].l2_rel:.4f}",
                "MXFP8 Eff. Bits": f"{means[baseline].eff_bits:.2f}",
                "MSD / MXFP8": f"{ratio:.2f}x",
            })
        return [record]

    def _mx_gemm_reports(self, record: ResultRecord, n: int, spec: DistributionSpec,
                         variants: List[str]) -> Dict[str, ErrorReport]:
        cfg = self.config
        w_spec = DistributionSpec.from_dict(cfg.weight_dist)
        per_method = defaultdict(list)
        for trial in range(cfg.trials):
            try:
                x = self.generator.gen_activation((cfg.rows, n), spec, self.stream(trial, ROLE_ACTIVATION),
                                                  truncate=False)
                w_mx4 = Mxfp4WeightQuantizer.quantize_weight(
                    self.generator.gen_float_weight(n, n, w_spec, self.stream(trial, ROLE_WEIGHT)))
                y_ref = self.gemm.mxfp4_reference(x, w_mx4)
                reports = {f"msd_mxfp4_{v}": ErrorMetrics.report(self.gemm.mxfp4(x, w_mx4, "msd_mxfp4", v), y_ref)
                           for v in variants}
                reports["mxfp8_baseline"] = ErrorMetrics.report(self.gemm.mxfp4(x, w_mx4, "mxfp8_baseline"), y_ref)
            except NumericError as e:
                record.errors.append(f"trial {trial} size {n} {spec.label}: {e}")
                continue
            for method, report in reports.items():
                per_method[method].append(report)
        return {m: ErrorMetrics.mean_reports(r) for m, r in per_method.items()}

    def _mx_gemm_table_row(self, record, label_key, label, reports, **keys):
        msd, base = reports["msd_mxfp4_v3"], reports["mxfp8_baseline"]
        ratio = base.l2_rel / msd.l2_rel
        record.add("ratio", "ratio", ratio, **keys)
        record.table.append({
            label_key: label,
            "MSD L2": f"{msd.l2_rel:.4f}", ">5%": self._pct(msd.exceed[0.05], 1),
            "MXFP8 L2": f"{base.l2_rel:.4f}", "MXFP8 >5%": self._pct(base.exceed[0.05], 1),
            "MSD/MXFP8": f"{ratio:.2f}x",
        })

    def _run_mxfp4_gemm(self) -> List[ResultRecord]:
        cfg = self.config
        n = cfg.sizes[0]
        record = self._record(f"MXFP4 GEMM accuracy ({n}x{n}, MXFP4 weight)")
        for spec in cfg.distribution_specs():
            reports = self._mx_gemm_reports(record, n, spec, ["v3"])
            if len(reports) < 2:
                continue
            for method, report in reports.items():
                self._add_report(record, method, report, distribution=spec.label)
            self._mx_gemm_table_row(record, "Distribution", spec.label, reports, distribution=spec.label)
        return [record]

    def _run_mxfp4_size_sweep(self) -> List[ResultRecord]:
        cfg = self.config
        spec = cfg.distribution_specs()[0]
        record = self._record(f"MXFP4 GEMM accuracy vs matrix size ({spec.label} activation)")
        for n in cfg.sizes:
            reports = self._mx_gemm_reports(record, n, spec, ["v3"])
            if len(reports) < 2:
                continue
            for method, report in reports.items():
                self._add_report(record, method, report, size=n)
            self._mx_gemm_table_row(record, "Size", f"{n}x{n}", reports, size=n)
        return [record]

    def _run_mxfp4_evolution(self) -> List[ResultRecord]:
        cfg = self.config
        n = cfg.sizes[0]
        spec = cfg.distribution_specs()[0]
        record = self._record(f"MXFP4 decomposition design evolution ({n}x{n} GEMM, {spec.label})")
        decomp = defaultdict(list)
        for trial in range(cfg.trials):
            try:
                x = self.generator.gen_activation((cfg.rows, n), spec, self.stream(trial, ROLE_ACTIVATION),
                                                  truncate=False).values
                for variant in cfg.variants:
                    batch = Mxfp4Msd.decompose_rows(x, variant)
                    report = ErrorMetrics.report(Mxfp4Msd.reconstruct_blocks(batch).reshape(x.shape), x)
                    _, report.clip_rate = ErrorMetrics.bound_ratio_report(batch, x)
                    decomp[variant].append(report)
            except NumericError as e:
                record.errors.append(f"trial {trial}: {e}")
        gemm = self._mx_gemm_reports(record, n, spec, cfg.variants)
        if "mxfp8_baseline" in gemm:
            self._add_report(record, "mxfp8_baseline", gemm["mxfp8_baseline"], stage="gemm")
        for variant in cfg.variants:
            bound, shift = MXFP4_VARIANTS[variant]
            if not decomp[variant] or f"msd_mxfp4_{variant}" not in gemm:
                continue
            mean = ErrorMetrics.mean_reports(decomp[variant])
            g = gemm[f"msd_mxfp4_{variant}"]
            ratio = gemm["mxfp8_baseline"].l2_rel / g.l2_rel
            record.add(variant, "eff_bits", mean.eff_bits, stage="decomposition")
            record.add(variant, "l2_rel", mean.l2_rel, stage="decomposition")
            record.add(variant, "clip_rate", mean.clip_rate, stage="decomposition")
            record.add(variant, "l2_rel", g.l2_rel, stage="gemm")
            record.add(variant, "ratio", ratio, stage="gemm")
            record.table.append({
                "Config.": variant, "Alpha Bound": f"{bound:g}", "Beta": f"alpha/{2 ** shift}",
                "Clip%": self._pct(mean.clip_rate, 1), "Eff. Bits": f"{mean.eff_bits:.2f}",
                "L2 Error": f"{g.l2_rel:.4f}", "vs. MXFP8": f"{ratio:.1f}x",
            })
        return [record]

    # Bound verification

    def _run_bound_verify(self) -> List[ResultRecord]:
        return [self._verify_block_bound(), self._verify_int8_bound()]

    def _verify_block_bound(self) -> ResultRecord:
        cfg = self.config
        record = self._record("MXFP4 block bound: max error / (alpha/64)")
        specs = [DistributionSpec.from_dict(d) for d in BOUND_DISTRIBUTIONS]
        for index, spec in enumerate(specs):
            x = self.generator.gen_activation((cfg.blocks, Config.MX_BLOCK_SIZE), spec,
                                              ExperimentSeed(self.seed, 1024 + index), truncate=False).values
            try:
                batch = Mxfp4Msd.decompose_blocks(x, "v3")
            except NumericError as e:
                record.errors.append(f"{spec.label}: {e}")
                continue
            ratio, clip = ErrorMetrics.bound_ratio_report(batch, x)
            err = np.abs(x.astype(np.float64) - batch.coarse() - batch.fine())
            violations = int(np.count_nonzero(err > batch.alpha()[:, None] / 64.0))
            l2 = ErrorMetrics.l2_relative(Mxfp4Msd.reconstruct_blocks(batch), x)
            keys = {"distribution": spec.label}
            record.add("msd_mxfp4_v3", "max_bound_ratio", ratio, **keys)
            record.add("msd_mxfp4_v3", "clip_rate", clip, **keys)
            record.add("msd_mxfp4_v3", "violations", violations, **keys)
            record.add("msd_mxfp4_v3", "eff_bits", ErrorMetrics.effective_bits(l2), **keys)
            record.table.append({
                "Distribution": spec.label, "max err/(alpha/64)": f"{ratio:.4f}",
                "Pass 2 clip rate": self._pct(clip, 2), "Eff. Bits": f"{ErrorMetrics.effective_bits(l2):.2f}",
                "Violations": violations,
            })
        return record

    def _verify_int8_bound(self) -> ResultRecord:
        """Check |x - recon|_inf <= M / divisor on vectors of several lengths"""
        cfg = self.config
        record = self._record("INT8 two-pass bound: max error / (M/64516)")
        specs = [DistributionSpec(kind) for kind in ("gaussian", "uniform", "laplacian", "exponential",
                                                      "student_t", "cauchy", "gaussian_with_outliers")]
        modes = [("int8_standard", False), ("int8_fractional", True)] + ([("int8_k3", None)] if cfg.include_k3 else [])
        weight_sum = sum(1.0 / length for length in cfg.vector_lengths)
        chunk_elements = 1 << 22
        for li, length in enumerate(cfg.vector_lengths):
            count = max(1, int(round(cfg.samples / len(specs) / length / weight_sum)))
            worst = {mode: 0.0 for mode, _ in modes}
            violations = {mode: 0 for mode, _ in modes}
            for si, spec in enumerate(specs):
                rng = ExperimentSeed(self.seed, 4096 + li * 64 + si).generator()
                done = 0
                while done < count:
                    rows = min(count - done, max(1, chunk_elements // length))
                    x = DataGenerator.sample(spec, (rows, length), rng).astype(np.float32)
                    done += rows
                    x64 = x.astype(np.float64)
                    max_abs = np.max(np.abs(x64), axis=1)
                    live = max_abs > 0
                    for mode, fractional in modes:
                        try:
                            if fractional is None:
                                recon = Int8Msd.reconstruct_k(Int8Msd.decompose_k(x, 3), np.float64)
                                bound = max_abs / K3_BOUND_DIVISOR
                            else:
                                recon = Int8Msd.reconstruct(Int8Msd.decompose2(x, fractional), np.float64)
                                bound = Int8Msd.bound(max_abs, fractional)
                        except NumericError as e:
                            record.errors.append(f"{mode} length {length} {spec.label}: {e}")
                            continue
                        err = np.max(np.abs(x64 - recon), axis=1)
                        if np.any(live):
                            worst[mode] = max(worst[mode], float(np.max(err[live] / bound[live])))
                        violations[mode] += int(np.count_nonzero(err > bound))
            for mode, _ in modes:
                record.add(mode, "max_bound_ratio", worst[mode], length=length)
                record.add(mode, "violations", violations[mode], length=length)
                record.add(mode, "vectors", count * len(specs), length=length)
                record.table.append({"Mode": mode, "Length": length, "Vectors": count * len(specs),
                                     "max err/bound": f"{worst[mode]:.4f}", "Violations": violations[mode]})
            logger.info("int8 bound check length %d: %d vectors per distribution", length, count)
        return record

    # Analytical cost tables

    def _run_cost_tables(self) -> List[ResultRecord]:
        c = self.config.cost
        records = []
        primary_d = c["d"][0]

        for d in c["d"]:
            record = self._record(f"Attention vector ops (d={d}, M={c['M']}, Bc={c['Bc']})")
            for N in c["N"]:
                inp = AttnCostInput(N, c["M"], d, c["Bc"])
                dequant = CostModel.attn_vector_ops(inp, "dequant")
                msd = CostModel.attn_vector_ops(inp, "msd")
                record.add("dequant", "vector_ops", dequant, N=N, d=d)
                record.add("msd", "vector_ops", msd, N=N, d=d)
                record.add("ratio", "ratio", dequant / msd, N=N, d=d)
                record.table.append({"N": N, "Dequant": CostModel.format_millions(dequant),
                                     "MSD": CostModel.format_millions(msd), "Ratio": f"{dequant / msd:.1f}x"})
            records.append(record)

        record = self._record("Crossover query count N*")
        for d in c["d"]:
            approx, exact = CostModel.attn_crossover(c["M"], d, c["Bc"])
            record.add("approx", "crossover", approx, d=d)
            record.add("exact", "crossover", exact, d=d)
            record.table.append({"d": d, "Approx N*": f"{approx:.1f}", "Exact N*": f"{exact:.1f}"})
        records.append(record)

        record = self._record(f"Linear layer vector ops (n={c['n']}, m={c['m']})")
        n, m = c["n"], c["m"]
        parts = [("pass1", 3 * n), ("pass2", 5 * n), ("reconstruct", 2 * m)]
        for name, ops in parts:
            record.add("msd", "vector_ops", ops, stage=name)
            record.table.append({"Stage": name, "MSD ops": ops})
        msd_total = CostModel.vector_flops_linear(n, m, "msd")
        dequant_total = CostModel.vector_flops_linear(n, m, "dequant")
        record.add("msd", "vector_ops", msd_total, stage="total")
        record.add("dequant", "vector_ops", dequant_total, stage="total")
        record.table.append({"Stage": "total", "MSD ops": msd_total, "Dequant ops": dequant_total})
        records.append(record)

        record = self._record(f"HBM traffic (b={c['b']}, m={m}, n={n}; attention M={c['M']}, d={primary_d})")
        linear = LinearCostInput(c["b"], m, n)
        for method in ("dequant", "msd_resident", "msd_conservative", "bf16"):
            traffic = CostModel.linear_hbm_traffic(linear, method)
            record.add(method, "bytes", traffic, layer="linear")
            record.table.append({"Layer": "linear", "Method": method, "Bytes": traffic})
        for name, ratio in CostModel.linear_hbm_ratios(linear).items():
            record.add(name, "ratio", ratio, layer="linear")
        for method in ("dequant", "msd"):
            traffic = CostModel.attn_hbm_traffic(c["M"], primary_d, method)
            record.add(method, "bytes", traffic, layer="attention")
            record.table.append({"Layer": "attention", "Method": method, "Bytes": traffic})
        record.add("ratio", "ratio", CostModel.attn_hbm_traffic(c["M"], primary_d, "dequant")
                   / CostModel.attn_hbm_traffic(c["M"], primary_d, "msd"), layer="attention")
        records.append(record)

        record = self._record("Linear layer latency model")
        profile = ThroughputProfile(R_vector=c["R_vector"], R_gemm_bf16=c["R_gemm_bf16"],
                                    T_sync=c["T_sync"], bandwidth=c["bandwidth"])
        for method in ("dequant", "msd_int8", "msd_mxfp4", "fp8", "bf16"):
            t_vector, t_cube, t_total = CostModel.linear_latency(linear, profile, method)
            record.add(method, "t_vector", t_vector)
            record.add(method, "t_cube", t_cube)
            record.add(method, "t_total", t_total)
            record.table.append({"Method": method, "T_vector (us)": f"{t_vector * 1e6:.3f}",
                                 "T_cube (us)": f"{t_cube * 1e6:.3f}", "T_total (us)": f"{t_total * 1e6:.3f}"})
        records.append(record)

        record = self._record("Storage bits per element")
        for fmt in STORAGE_BITS:
            bits = MxStorage.bits_per_element(fmt)
            record.add(fmt, "bits_per_element", bits)
            record.table.append({"Format": fmt, "Bits/element": f"{bits:g}"})
        records.append(record)

        record = self._record("Speculative decoding query count")
        for n_spec, g in c["spec_decode"]:
            N = CostModel.effective_queries(SpecDecodeInput(n_spec, g))
            inp = AttnCostInput(N, c["M"], primary_d, c["Bc"])
            ratio = CostModel.attn_vector_ops(inp, "dequant") / CostModel.attn_vector_ops(inp, "msd")
            record.add("effective_queries", "N", N, n_spec=n_spec, g=g)
            record.add("ratio", "ratio", ratio, n_spec=n_spec, g=g)
            record.table.append({"N_spec": n_spec, "G": g, "N": N, "Dequant/MSD": f"{ratio:.1f}x"})
        records.append(record)

        record = self._record("Worst-case precision summary")
        for scheme, divisor in (("msd_int8", Config.INT8_BOUND_DIVISOR),
                                ("msd_int8_fractional", Config.FRACTIONAL_BOUND_DIVISOR),
                                ("msd_int8_k3", K3_BOUND_DIVISOR), ("msd_mxfp4", 64.0)):
            relative_to = "alpha" if scheme == "msd_mxfp4" else "M"
            record.add(scheme, "bound_divisor", divisor, relative_to=relative_to)
            record.add(scheme, "bits", math.log2(divisor), relative_to=relative_to)
            record.table.append({"Scheme": scheme, "Bound": f"{relative_to}/{divisor:g}",
                                 "Bits": f"{math.log2(divisor):.2f}"})
        records.append(record)
        return records


class AcceptanceChecker:
    """Compare records against the configured tolerance bands"""

    def __init__(self, bands: Optional[Dict] = None):
        self.bands = bands or Config.ACCEPTANCE_BANDS

    def check(self, records: List[ResultRecord], desk: bool = False) -> List[str]:
        """Return failure messages; an empty list means every band holds"""
        failures = []
        by_experiment = defaultdict(list)
        for record in records:
            by_experiment[record.experiment].append(record)
        for experiment, group in by_experiment.items():
            bands = self.bands.get(experiment, {})
            try:
                failures.extend(getattr(self, f"_check_{experiment}")(group, bands, desk))
            except KeyError as e:
                failures.append(f"{experiment}: missing result {e}")
        return failures

    @staticmethod
    def _within(name: str, value: float, band) -> List[str]:
        low, high = band
        if not low <= value <= high:
            return [f"{name} = {value:.6g} outside [{low:.6g}, {high:.6g}]"]
        return []

    @staticmethod
    def _rows(group: List[ResultRecord], method: str, metric: str):
        return [row for record in group for row in record.rows
                if row["method"] == method and row["metric"] == metric]

    def _check_gemm_int8(self, group, bands, desk):
        failures = []
        for record in group:
            dequant = record.value("dequant", "l2_rel")
            msd = record.value("msd_int8", "l2_rel")
            failures += self._within(f"{record.title}: dequant L2", dequant, bands["dequant_l2"])
            if msd > bands["msd_l2_max"]:
                failures.append(f"{record.title}: msd L2 {msd:.3g} above {bands['msd_l2_max']:g}")
            if dequant / msd < bands["ratio_min"]:
                failures.append(f"{record.title}: improvement {dequant / msd:.1f}x below {bands['ratio_min']:g}x")
            if record.value("msd_int8", "exceed_0.001") > bands["msd_exceed_0.001_max"]:
                failures.append(f"{record.title}: msd exceed(>0.1%) too high")
            if record.value("dequant", "exceed_0.001") < bands["dequant_exceed_0.001_min"]:
                failures.append(f"{record.title}: dequant exceed(>0.1%) too low")
        return failures

    def _check_ablation(self, group, bands, desk):
        failures = []
        for record in group:
            single = record.value("single_scale", "l2_rel")
            ratio = single / record.value("dequant", "l2_rel")
            failures += self._within(f"{record.title}: single/dequant", ratio, bands["single_over_dequant"])
            if single / record.value("msd_int8", "l2_rel") < bands["single_over_msd_min"]:
                failures.append(f"{record.title}: K=2 is not {bands['single_over_msd_min']:g}x below K=1")
        return failures

    def _check_size_sweep(self, group, bands, desk):
        failures = []
        for row in self._rows(group, "improvement_ratio", "ratio"):
            if row["value"] < bands["ratio_min"]:
                failures.append(f"size {row['size']}: improvement {row['value']:.1f}x below {bands['ratio_min']:g}x")
        msd = sorted((row["size"], row["value"]) for row in self._rows(group, "msd_int8", "l2_rel"))
        for (n0, v0), (n1, v1) in zip(msd, msd[1:]):
            if v1 > v0 * bands["msd_trend_slack"]:
                failures.append(f"msd L2 rises from {v0:.3g} at {n0} to {v1:.3g} at {n1}")
        return failures

    def _check_distribution_sweep(self, group, bands, desk):
        failures = []
        dequant = {row["distribution"]: row["value"] for row in self._rows(group, "dequant", "l2_rel")}
        for row in self._rows(group, "msd_int8", "l2_rel"):
            if bands.get("msd_below_dequant") and not row["value"] < dequant[row["distribution"]]:
                failures.append(f"{row['distribution']}: msd L2 not below dequant")
        return failures

    def _check_flash_attention(self, group, bands, desk):
        failures = []
        record = group[0]
        seqs = sorted({row["seq"] for row in record.rows})
        bcs = sorted({row["block_cols"] for row in record.rows if "block_cols" in row})
        for seq in seqs:
            for bc in bcs:
                flash = record.value("flash_dequant", "l2_rel", seq=seq, block_cols=bc)
                msd = record.value("flash_msd", "l2_rel", seq=seq, block_cols=bc)
                if not msd < flash:
                    failures.append(f"seq {seq} Bc {bc}: flash_msd L2 not below flash_dequant")
        top = seqs[-1]
        bc = Config.DEFAULT_BLOCK_COLS if Config.DEFAULT_BLOCK_COLS in bcs else bcs[0]
        flash = record.value("flash_dequant", "l2_rel", seq=top, block_cols=bc)
        msd = record.value("flash_msd", "l2_rel", seq=top, block_cols=bc)
        mono = record.value("dequant", "l2_rel", seq=top)
        if msd > bands["msd_over_flash_max"] * flash:
            failures.append(f"seq {top}: flash_msd {msd:.4g} above {bands['msd_over_flash_max']:g} x flash_dequant")
        failures += self._within(f"seq {top}: flash_dequant L2", flash, bands["flash_dequant_l2"])
        if abs(flash - mono) / mono > bands["flash_vs_monolithic"]:
            failures.append(f"seq {top}: flash and monolithic dequant differ by more than "
                            f"{bands['flash_vs_monolithic']:.0%}")
        if top >= 16384 and not desk:
            tol = bands["full_scale_tolerance"]
            observed = {"dequant": mono, "flash_dequant": flash}
            for method, target in bands["full_scale_targets"].items():
                failures += self._within(f"full scale {method} L2", observed[method],
                                         (target * (1 - tol), target * (1 + tol)))
            failures += self._within("full scale flash_msd L2", msd, bands["flash_msd_full_scale_l2"])
        return failures

    def _check_mxfp4_decomp(self, group, bands, desk):
        record = group[0]
        baseline = f"mxfp8_{Config.MXFP8_SCALE_RULE}"
        gaussian = DistributionSpec("gaussian").label
        failures = []
        failures += self._within("gaussian MSD bits", record.value("msd_mxfp4_v3", "eff_bits", distribution=gaussian),
                                 bands["gaussian_msd_bits"])
        failures += self._within("gaussian MXFP8 bits", record.value(baseline, "eff_bits", distribution=gaussian),
                                 bands["gaussian_mxfp8_bits"])
        failures += self._within("gaussian ratio", record.value("ratio", "ratio", distribution=gaussian),
                                 bands["gaussian_ratio"])
        uniform3 = DistributionSpec("uniform", {"low": -3, "high": 3}).label
        student3 = DistributionSpec("student_t", {"df": 3}).label
        failures += self._within("uniform(-3,3) ratio", record.value("ratio", "ratio", distribution=uniform3),
                                 bands["uniform3_ratio"])
        failures += self._within("t(3) ratio", record.value("ratio", "ratio", distribution=student3),
                                 bands["student_t3_ratio"])
        return failures

    def _check_mxfp4_gemm(self, group, bands, desk):
        record = group[0]
        label = DistributionSpec("gaussian", {"std": 0.5}).label
        return (self._within("MSD-MXFP4 GEMM L2", record.value("msd_mxfp4_v3", "l2_rel", distribution=label),
                             bands["msd_l2"])
                + self._within("MXFP8 GEMM L2", record.value("mxfp8_baseline", "l2_rel", distribution=label),
                               bands["mxfp8_l2"])
                + self._within("MXFP4 GEMM ratio", record.value("ratio", "ratio", distribution=label),
                               bands["ratio"]))

    def _check_mxfp4_size_sweep(self, group, bands, desk):
        ratios = [row["value"] for row in self._rows(group, "ratio", "ratio")]
        if not ratios:
            return ["no size-sweep ratios recorded"]
        spread = max(ratios) - min(ratios)
        if spread > bands["ratio_spread_max"]:
            return [f"MXFP4 ratio spread {spread:.3f} above {bands['ratio_spread_max']:g}"]
        return []

    def _check_bound_verify(self, group, bands, desk):
        failures = []
        ratios = self._rows(group, "msd_mxfp4_v3", "max_bound_ratio")
        if not ratios or max(row["value"] for row in ratios) < bands["tightness_min"]:
            failures.append(f"no distribution reaches bound tightness {bands['tightness_min']:g}")
        for row in self._rows(group, "msd_mxfp4_v3", "clip_rate"):
            failures += self._within(f"{row['distribution']} clip rate", row["value"], bands["clip_rate"])
        for record in group:
            for row in record.rows:
                if row["metric"] == "violations" and row["value"] != 0:
                    failures.append(f"{record.title}: {row['value']} bound violations ({row['method']})")
        return failures

    def _check_mxfp4_evolution(self, group, bands, desk):
        record = group[0]
        failures = []
        bits = []
        for variant in ("v1", "v2", "v3"):
            value = record.value(variant, "eff_bits", stage="decomposition")
            failures += self._within(f"{variant} effective bits", value, bands[f"{variant}_bits"])
            bits.append(value)
        if not bits[0] < bits[1] < bits[2]:
            failures.append(f"effective bits not strictly increasing: {bits}")
        return failures

    def _check_cost_tables(self, group, bands, desk):
        failures = []
        rows = [row for record in group for row in record.rows]

        def find(method, metric, **keys):
            for row in rows:
                if row["method"] == method and row["metric"] == metric and all(row.get(k) == v for k, v in keys.items()):
                    return row["value"]
            raise KeyError(f"{method}/{metric} {keys}")

        dequant, msd = bands["vector_ops_n1"]
        if find("dequant", "vector_ops", N=1, d=128) != dequant or find("msd", "vector_ops", N=1, d=128) != msd:
            failures.append("attention vector ops at N=1 do not match the exact integers")
        ratios = [(N, 128, target) for N, target in bands["vector_ops_ratio_d128"].items()]
        ratios.append((12, 576, bands["vector_ops_ratio_d576_n12"]))
        for N, d, target in ratios:
            value = find("ratio", "ratio", N=N, d=d)
            if round(value, 1) != target:
                failures.append(f"vector op ratio at N={N}, d={d}: {value:.2f} != {target}")
        for key, method, d in (("crossover_approx_d128", "approx", 128), ("crossover_exact_d128", "exact", 128),
                               ("crossover_approx_d576", "approx", 576)):
            if round(find(method, "crossover", d=d), 1) != bands[key]:
                failures.append(f"{key}: {find(method, 'crossover', d=d):.2f} != {bands[key]}")
        if find("ratio", "ratio", layer="attention") != bands["attention_hbm_ratio"]:
            failures.append("attention HBM ratio is not 2.5")
        tol = bands["linear_hbm_ratio_tolerance"]
        for method, target in (("msd_resident", 3.0), ("msd_conservative", 1.5)):
            value = find(method, "ratio", layer="linear")
            if abs(value - target) / target > tol:
                failures.append(f"linear HBM {method} ratio {value:.3f} not within {tol:.0%} of {target}")
        t_cube = {method: find(method, "t_cube") for method in ("dequant", "msd_int8", "msd_mxfp4", "fp8")}
        if t_cube["msd_int8"] != t_cube["dequant"] or t_cube["msd_mxfp4"] != t_cube["fp8"]:
            failures.append("latency cube-time identities do not hold")
        return failures


def default_config_paths(config_dir: Optional[str] = None) -> List[str]:
    """Bundled experiment configs in name order"""
    directory = config_dir or Config.CONFIG_DIR
    if not os.path.isdir(directory):
        raise ConfigError(f"config directory {directory} does not exist")
    return [os.path.join(directory, name) for name in sorted(os.listdir(directory)) if name.endswith(".json")]
