import logging
from collections import defaultdict
from typing import Dict, List, Optional, Sequence

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt

from core.utils import ConfigError, FileUtils
from data.logger import ResultRecord

logger = logging.getLogger(__name__)

# fixed ids and text-as-text keep the SVG bytes stable between runs
SVG_RC = {"svg.hashsalt": "msd-sim", "svg.fonttype": "none"}
COLORS = ["red", "orange", "blue", "purple", "green", "brown", "gray"]


class ResultDashboard:
    @staticmethod
    def collect_series(records: List[ResultRecord], metric: str, x: str, series: str = "method",
                       where: Optional[Dict] = None):
        """Group rows carrying `metric` and an `x` key into {series: [(x, value)]}"""
        grouped = defaultdict(list)
        for record in records:
            for row in record.rows:
                if row.get("metric") != metric or x not in row or series not in row:
                    continue
                # filters only apply to rows that carry the key
                if where and any(k in row and row[k] != v for k, v in where.items()):
                    continue
                grouped[str(row[series])].append((row[x], row["value"]))
        return {name: sorted(points, key=lambda p: (isinstance(p[0], str), p[0]))
                for name, points in grouped.items()}

    @staticmethod
    def emit_chart(records: List[ResultRecord], out_path: str, metric: str = "l2_rel", x: str = "seq",
                   series: str = "method", kind: str = "line", log_y: bool = False,
                   names: Optional[Sequence[str]] = None, title: Optional[str] = None,
                   where: Optional[Dict] = None) -> str:
        """Render one metric against an x key as an SVG line or bar chart"""
        if kind not in ("line", "bar"):
            raise ConfigError(f"unknown chart kind {kind!r}")
        data = ResultDashboard.collect_series(records, metric, x, series, where)
        if names:
            missing = [n for n in names if n not in data]
            if missing:
                raise ConfigError(f"missing series {missing} for metric {metric!r}")
            data = {n: data[n] for n in names}
        if not data:
            raise ConfigError(f"missing series: no rows with metric {metric!r} and key {x!r}")

        with plt.rc_context(SVG_RC):
            fig, ax = plt.subplots(figsize=(8, 5))
            if kind == "line":
                for i, (name, points) in enumerate(sorted(data.items())):
                    xs = [p[0] for p in points]
                    ys = [p[1] for p in points]
                    ax.plot(xs, ys, marker="o", color=COLORS[i % len(COLORS)], label=name)
            else:
                labels = sorted({p[0] for points in data.values() for p in points}, key=str)
                width = 0.8 / len(data)
                for i, (name, points) in enumerate(sorted(data.items())):
                    lookup = dict(points)
                    positions = [j + i * width for j in range(len(labels))]
                    heights = [lookup.get(label, 0.0) for label in labels]
                    ax.bar(positions, heights, width, color=COLORS[i % len(COLORS)], label=name)
                ax.set_xticks([j + 0.4 - width / 2 for j in range(len(labels))])
                ax.set_xticklabels([str(label) for label in labels])
                ax.tick_params(axis="x", rotation=45)

            if log_y:
                ax.set_yscale("log")
            ax.set_xlabel(x)
            ax.set_ylabel(metric)
            ax.set_title(title or f"{metric} by {x}")
            ax.legend()
            plt.tight_layout()

            FileUtils.ensure_parent(out_path)
            fig.savefig(out_path, format="svg", metadata={"Date": None})
            plt.close(fig)
        logger.info("chart written to %s", out_path)
        return out_path
