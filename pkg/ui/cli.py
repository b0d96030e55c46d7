import argparse
import logging
import os
import sys
from typing import List, Optional

from config.settings import Config
from core.cost_model import (AttnCostInput, CostModel, LinearCostInput, SpecDecodeInput,
                             ThroughputProfile)
from core.experiment_runner import (AcceptanceChecker, ExperimentConfig, ExperimentRunner,
                                    default_config_paths)
from core.utils import ConfigError, NumericError
from data.dashboard import ResultDashboard
from data.logger import ResultLogger, ResultRecord

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_CHECK_FAILED = 2
EXIT_NUMERIC = 3


class CliArgumentParser(argparse.ArgumentParser):
    """Usage errors surface as ConfigError so they share exit code 1"""

    def error(self, message):
        raise ConfigError(f"{self.prog}: {message}")


class MsdCommandLine:
    def __init__(self, checker: Optional[AcceptanceChecker] = None):
        self.checker = checker or AcceptanceChecker()

    def run_config(self, path: str, out: Optional[str] = None, check: bool = False,
                   desk: bool = False) -> int:
        """Run one experiment config and write its tables and charts"""
        cfg = ExperimentConfig.from_file(path)
        if desk:
            cfg = cfg.with_desk_scale()
        print(f"🧪 Running {cfg.name} ({cfg.experiment}) from {os.path.basename(path)}")
        records = ExperimentRunner(cfg).run()
        out_dir = out or cfg.outputs["dir"] or Config.OUTPUT_DIR
        self.write_outputs(cfg, records, out_dir)

        code = EXIT_OK
        if any(record.errors for record in records):
            for record in records:
                for error in record.errors:
                    print(f"❌ {record.title}: {error}")
            code = EXIT_NUMERIC
        if check:
            failures = self.checker.check(records, desk=desk)
            if failures:
                for failure in failures:
                    print(f"⚠️ {cfg.name}: {failure}")
                if code == EXIT_OK:
                    code = EXIT_CHECK_FAILED
            else:
                print(f"✅ {cfg.name}: all acceptance bands hold")
        return code

    @staticmethod
    def write_outputs(cfg: ExperimentConfig, records: List[ResultRecord], out_dir: str) -> List[str]:
        result_logger = ResultLogger(Config.ensure_output_dir(out_dir))
        paths = result_logger.emit_all(records, cfg.outputs["formats"], stem=cfg.name)
        for chart in cfg.outputs["charts"]:
            options = dict(chart)
            target = os.path.join(out_dir, options.pop("file"))
            paths.append(ResultDashboard.emit_chart(records, target, **options))
        wall = records[0].wall_time if records else 0.0
        print(f"📁 Wrote {len(paths)} files to {out_dir} ({wall:.1f}s)")
        return paths

    def run_all(self, config_dir: Optional[str] = None, out: Optional[str] = None,
                check: bool = False, desk: bool = False) -> int:
        paths = default_config_paths(config_dir)
        if not paths:
            raise ConfigError(f"no configs found in {config_dir or Config.CONFIG_DIR}")
        codes = [self.run_config(path, out, check, desk) for path in paths]
        if EXIT_NUMERIC in codes:
            return EXIT_NUMERIC
        return max(codes)

    @staticmethod
    def cost(args) -> int:
        """Print the analytical cost model for user-supplied parameters"""
        print(f"📊 Attention vector ops (d={args.d}, M={args.M}, Bc={args.Bc})")
        for N in args.N:
            inp = AttnCostInput(N, args.M, args.d, args.Bc)
            dequant = CostModel.attn_vector_ops(inp, "dequant")
            msd = CostModel.attn_vector_ops(inp, "msd")
            print(f"   N={N:<4} dequant {dequant:>12,}  msd {msd:>12,}  ratio {dequant / msd:.1f}x")
        approx, exact = CostModel.attn_crossover(args.M, args.d, args.Bc)
        print(f"   crossover N*: approx {approx:.2f}, exact {exact:.2f}")
        if args.n_spec is not None:
            N = CostModel.effective_queries(SpecDecodeInput(args.n_spec, args.g))
            print(f"   speculative decoding: N = (1 + {args.n_spec}) x {args.g} = {N}")

        linear = LinearCostInput(args.b, args.m, args.n)
        print(f"📦 HBM traffic (b={args.b}, m={args.m}, n={args.n})")
        for method in ("dequant", "msd_resident", "msd_conservative", "bf16"):
            print(f"   {method:<17} {CostModel.linear_hbm_traffic(linear, method):>14,} bytes")
        print(f"   attention: dequant {CostModel.attn_hbm_traffic(args.M, args.d, 'dequant'):,} "
              f"vs msd {CostModel.attn_hbm_traffic(args.M, args.d, 'msd'):,} bytes")

        profile = ThroughputProfile()
        print("⏱️ Latency model (us)")
        for method in ("dequant", "msd_int8", "msd_mxfp4", "fp8", "bf16"):
            t_vector, t_cube, t_total = CostModel.linear_latency(linear, profile, method)
            print(f"   {method:<10} vector {t_vector * 1e6:9.3f}  cube {t_cube * 1e6:9.3f}  "
                  f"total {t_total * 1e6:9.3f}")
        return EXIT_OK

    def verify_bounds(self, samples: int, blocks: int, out: Optional[str] = None) -> int:
        """Check both decomposition bounds over large random samples"""
        cfg = ExperimentConfig("bound_verify", name="verify_bounds", samples=samples, blocks=blocks,
                               include_k3=True)
        print(f"🔍 Verifying bounds over {samples:,} vectors and {blocks:,} blocks per distribution")
        records = ExperimentRunner(cfg).run()
        self.write_outputs(cfg, records, out or Config.OUTPUT_DIR)
        if any(record.errors for record in records):
            return EXIT_NUMERIC
        violations = sum(row["value"] for record in records for row in record.rows
                         if row["metric"] == "violations")
        failures = self.checker.check(records)
        for failure in failures:
            print(f"⚠️ {failure}")
        if violations == 0:
            print("✅ No bound violations")
        return EXIT_CHECK_FAILED if failures else EXIT_OK

    @staticmethod
    def chart(args) -> int:
        records = ResultLogger.load_json(args.results)
        where = {}
        for item in args.where or []:
            key, sep, value = item.partition("=")
            if not sep:
                raise ConfigError(f"--where expects key=value, got {item!r}")
            try:
                where[key] = int(value)
            except ValueError:
                where[key] = value
        ResultDashboard.emit_chart(records, args.out, metric=args.metric, x=args.x, series=args.series,
                                   kind=args.kind, log_y=args.log_y, names=args.names, where=where or None)
        print(f"📈 Chart written to {args.out}")
        return EXIT_OK


def create_parser() -> argparse.ArgumentParser:
    parser = CliArgumentParser(prog="msd-sim", description="Multi-scale dequant simulation and reproduction")
    parser.add_argument("--verbose", "-v", action="count", default=0, help="More logging (repeatable)")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="Run one experiment config")
    run.add_argument("config", help="Experiment config JSON")
    run.add_argument("--out", default=None, help="Output directory")
    run.add_argument("--check", action="store_true", help="Compare results against acceptance bands")
    run.add_argument("--scale", choices=["full", "desk"], default="full")

    run_all = sub.add_parser("run-all", help="Run every bundled config")
    run_all.add_argument("--configs", default=None, help="Directory of configs")
    run_all.add_argument("--out", default=None, help="Output directory")
    run_all.add_argument("--check", action="store_true")
    run_all.add_argument("--scale", choices=["full", "desk"], default="full")

    cost = sub.add_parser("cost", help="Evaluate the analytical cost model")
    cost.add_argument("--d", type=int, default=128, help="Head dimension")
    cost.add_argument("--M", type=int, default=8192, help="KV length")
    cost.add_argument("--Bc", type=int, default=64, help="KV tile size")
    cost.add_argument("--N", type=int, nargs="+", default=[1, 4, 12, 24, 32], help="Queries per KV head")
    cost.add_argument("--m", type=int, default=4096)
    cost.add_argument("--n", type=int, default=4096)
    cost.add_argument("--b", type=int, default=8)
    cost.add_argument("--n-spec", type=int, default=None, help="Speculative tokens")
    cost.add_argument("--g", type=int, default=1, help="GQA group size")

    verify = sub.add_parser("verify-bounds", help="Check the INT8 and MXFP4 error bounds")
    verify.add_argument("--samples", type=int, default=1000000, help="Random INT8 vectors")
    verify.add_argument("--blocks", type=int, default=100000, help="MXFP4 blocks per distribution")
    verify.add_argument("--out", default=None)

    chart = sub.add_parser("chart", help="Render results JSON as an SVG chart")
    chart.add_argument("results", help="JSON written by run")
    chart.add_argument("--out", required=True, help="SVG path")
    chart.add_argument("--metric", default="l2_rel")
    chart.add_argument("--x", default="seq")
    chart.add_argument("--series", default="method")
    chart.add_argument("--names", nargs="+", default=None, help="Series to draw")
    chart.add_argument("--kind", choices=["line", "bar"], default="line")
    chart.add_argument("--log-y", action="store_true")
    chart.add_argument("--where", nargs="+", default=None, help="Row filters as key=value")
    return parser


def dispatch(args, cli: Optional[MsdCommandLine] = None) -> int:
    cli = cli or MsdCommandLine()
    desk = getattr(args, "scale", "full") == "desk"
    if args.command == "run":
        return cli.run_config(args.config, args.out, args.check, desk)
    if args.command == "run-all":
        return cli.run_all(args.configs, args.out, args.check, desk)
    if args.command == "cost":
        return cli.cost(args)
    if args.command == "verify-bounds":
        if args.samples <= 0 or args.blocks <= 0:
            raise ConfigError("--samples and --blocks must be positive")
        return cli.verify_bounds(args.samples, args.blocks, args.out)
    return cli.chart(args)


def run_cli(argv: Optional[List[str]] = None) -> int:
    """Parse argv, run the command and map failures to exit codes"""
    try:
        args = create_parser().parse_args(argv)
        level = logging.WARNING - 10 * min(args.verbose, 2)
        logging.getLogger().setLevel(level)
        return dispatch(args)
    except SystemExit as e:
        return int(e.code or 0)
    except ConfigError as e:
        print(f"❌ {e}", file=sys.stderr)
        return EXIT_USAGE
    except NumericError as e:
        print(f"❌ numeric error: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except (OSError, ValueError) as e:
        print(f"❌ {e}", file=sys.stderr)
        return EXIT_USAGE
