import json
import logging
import math
import os
import pandas as pd
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional

from config.settings import Config
from core.utils import ConfigError, FileUtils

logger = logging.getLogger(__name__)

LEADING_COLUMNS = ["method", "metric", "value"]
NON_FINITE_NAMES = {True: "inf", False: "-inf"}
NON_FINITE_VALUES = {"inf": math.inf, "-inf": -math.inf}


@dataclass
class ResultRecord:
    experiment: str
    title: str
    config: Dict = field(default_factory=dict)
    seeds: List[int] = field(default_factory=list)
    version: str = Config.ARTIFACT_VERSION
    rows: List[Dict] = field(default_factory=list)
    table: List[Dict] = field(default_factory=list)
    errors: List[str] = field(default_factory=list)
    wall_time: float = field(default=0.0, compare=False)

    def add(self, method: str, metric: str, value, **keys):
        """Append one long-format row"""
        row = {"method": method, "metric": metric, "value": _plain(value)}
        row.update({k: _plain(v) for k, v in keys.items()})
        self.rows.append(row)

    def value(self, method: str, metric: str, **keys):
        """Look up a single value; raises KeyError when absent"""
        for row in self.rows:
            if row["method"] == method and row["metric"] == metric and all(row.get(k) == v for k, v in keys.items()):
                return row["value"]
        raise KeyError(f"{self.title}: no row for {method}/{metric} {keys}")

    def to_dict(self) -> Dict:
        return {
            "experiment": self.experiment,
            "title": self.title,
            "config": self.config,
            "seeds": list(self.seeds),
            "version": self.version,
            "rows": self.rows,
            "table": self.table,
            "errors": self.errors,
        }

    @classmethod
    def from_dict(cls, data: Dict) -> "ResultRecord":
        missing = {"experiment", "title", "rows"} - set(data)
        if missing:
            raise ConfigError(f"result record is missing {sorted(missing)}")
        return cls(
            experiment=data["experiment"],
            title=data["title"],
            config=data.get("config", {}),
            seeds=list(data.get("seeds", [])),
            version=data.get("version", Config.ARTIFACT_VERSION),
            rows=[_restore_row(row) for row in data["rows"]],
            table=list(data.get("table", [])),
            errors=list(data.get("errors", [])),
        )


def _plain(value):
    """Convert numpy scalars to JSON-native Python values"""
    if hasattr(value, "item") and not isinstance(value, (list, dict, str)):
        value = value.item()
    if value is None or isinstance(value, (bool, int, float, str)):
        return value
    return float(value)


def _json_safe(value):
    """Strict JSON: infinities become "inf"/"-inf", NaN becomes null"""
    if isinstance(value, float) and not math.isfinite(value):
        return None if math.isnan(value) else NON_FINITE_NAMES[value > 0]
    if isinstance(value, dict):
        return {k: _json_safe(v) for k, v in value.items()}
    if isinstance(value, list):
        return [_json_safe(v) for v in value]
    return value


def _restore_row(row: Dict) -> Dict:
    value = row.get("value")
    if isinstance(value, str) and value in NON_FINITE_VALUES:
        return {**row, "value": NON_FINITE_VALUES[value]}
    return dict(row)


def _cell(value) -> str:
    if isinstance(value, str):
        return value
    if isinstance(value, bool) or isinstance(value, int):
        return str(value)
    if value is None or (isinstance(value, float) and math.isnan(value)):
        return ""
    if isinstance(value, float) and math.isinf(value):
        return NON_FINITE_NAMES[value > 0]
    return f"{value:.4g}"


class ResultLogger:
    def __init__(self, output_dir: Optional[str] = None):
        self.output_dir = output_dir or Config.OUTPUT_DIR

    def records_frame(self, records: Iterable[ResultRecord]) -> pd.DataFrame:
        """Long-format rows of all records with a stable column order"""
        rows = []
        for record in records:
            for row in record.rows:
                rows.append({"record": record.title, **row})
        if not rows:
            return pd.DataFrame(columns=LEADING_COLUMNS)
        df = pd.DataFrame(rows)
        extra = sorted(c for c in df.columns if c not in LEADING_COLUMNS)
        return df[LEADING_COLUMNS + extra]

    def emit_table(self, records: List[ResultRecord], fmt: str, path: Optional[str] = None) -> str:
        """Write records as csv, json or markdown and return the path"""
        if not records:
            raise ConfigError("no result records to emit")
        if fmt not in Config.OUTPUT_FORMATS:
            raise ConfigError(f"unknown output format {fmt!r}")
        suffix = {"csv": ".csv", "json": ".json", "markdown": ".md"}[fmt]
        if path is None:
            path = os.path.join(self.output_dir, f"{records[0].experiment}{suffix}")
        FileUtils.ensure_parent(path)

        if fmt == "csv":
            self.records_frame(records).to_csv(path, index=False, lineterminator="\r\n")
        elif fmt == "json":
            payload = [r.to_dict() for r in records]
            with open(path, "w", encoding="utf-8", newline="\n") as handle:
                handle.write(json.dumps(_json_safe(payload), sort_keys=True, indent=2, allow_nan=False))
                handle.write("\n")
        else:
            with open(path, "w", encoding="utf-8", newline="\n") as handle:
                handle.write(self.markdown(records))
        logger.info("wrote %s", path)
        return path

    def emit_all(self, records: List[ResultRecord], formats: Iterable[str] = Config.OUTPUT_FORMATS,
                 stem: Optional[str] = None) -> List[str]:
        paths = []
        for fmt in formats:
            path = None
            if stem:
                suffix = {"csv": ".csv", "json": ".json", "markdown": ".md"}.get(fmt, "")
                path = os.path.join(self.output_dir, stem + suffix)
            paths.append(self.emit_table(records, fmt, path))
        return paths

    @staticmethod
    def markdown(records: List[ResultRecord]) -> str:
        """Render each record's wide table (or its long rows) as a Markdown section"""
        sections = []
        for record in records:
            lines = [f"## {record.title}", ""]
            table = record.table or record.rows
            if table:
                columns = list(table[0].keys())
                for row in table[1:]:
                    columns.extend(c for c in row if c not in columns)
                lines.append("| " + " | ".join(columns) + " |")
                lines.append("|" + "|".join("---" for _ in columns) + "|")
                for row in table:
                    lines.append("| " + " | ".join(_cell(row.get(c)) for c in columns) + " |")
            for error in record.errors:
                lines.append(f"\n> error: {error}")
            sections.append("\n".join(lines))
        return "\n\n".join(sections) + "\n"

    @staticmethod
    def load_json(path: str) -> List[ResultRecord]:
        """Load records previously written by emit_table(..., 'json')"""
        with open(path, "r", encoding="utf-8") as handle:
            try:
                payload = json.load(handle)
            except json.JSONDecodeError as e:
                raise ConfigError(f"{path} is not valid JSON: {e}")
        if isinstance(payload, dict):
            payload = [payload]
        return [ResultRecord.from_dict(item) for item in payload]
