import os

import pytest

from config.settings import Config
from core.experiment_runner import (AcceptanceChecker, EXPERIMENTS, ExperimentConfig, ExperimentRunner,
                                    default_config_paths)
from core.utils import ConfigError
from data.logger import ResultRecord


def small(experiment, **overrides):
    options = {"trials": 2, "rows": 4, "sizes": [64]}
    options.update(overrides)
    return ExperimentConfig(experiment, **options)


def test_bundled_configs_load():
    paths = default_config_paths()
    assert len(paths) == 12
    experiments = {ExperimentConfig.from_file(path).experiment for path in paths}
    assert experiments == set(EXPERIMENTS)


def test_config_validation():
    with pytest.raises(ConfigError):
        ExperimentConfig("gemm_fp16")
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"experiment": "gemm_int8", "trails": 3})
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"trials": 3})
    with pytest.raises(ConfigError):
        small("gemm_int8", trials=0)
    with pytest.raises(ConfigError):
        small("gemm_int8", distributions=[{"kind": "zipf"}])
    with pytest.raises(ConfigError):
        small("gemm_int8", sizes=[])
    with pytest.raises(ConfigError):
        small("cost_tables", cost={"heads": 8})
    with pytest.raises(ConfigError):
        small("size_sweep", outputs={"charts": [{"file": "a.svg", "colour": "red"}]})
    with pytest.raises(ConfigError):
        small("mxfp4_evolution", variants=["v4"])


def test_config_file_errors(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("[1, 2")
    with pytest.raises(ConfigError):
        ExperimentConfig.from_file(str(bad))
    with pytest.raises(ConfigError):
        ExperimentConfig.from_file(str(tmp_path / "missing.json"))


def test_desk_scale_caps_sequences():
    cfg = small("flash_attention", seq_lengths=[1024, 16384], queries=8192).with_desk_scale()
    assert cfg.seq_lengths == [1024, Config.DESK_MAX_SEQ]
    assert cfg.queries == Config.DESK_MAX_SEQ


def test_gemm_int8_records():
    records = ExperimentRunner(small("gemm_int8")).run()
    assert len(records) == 1
    record = records[0]
    label = "gaussian(0,1)"
    dequant = record.value("dequant", "l2_rel", size=64, distribution=label)
    msd = record.value("msd_int8", "l2_rel", size=64, distribution=label)
    assert msd < dequant
    assert record.value("improvement_ratio", "ratio", size=64) == pytest.approx(dequant / msd)
    assert record.value("msd_int8_fractional", "exceed_0.01", size=64) >= 0.0
    assert record.config["seed"] == record.seeds[0] == Config.DEFAULT_SEED
    assert [row["Method"] for row in record.table] == ["dequant", "msd_int8", "msd_int8_fractional"]


def test_runs_are_reproducible():
    first = ExperimentRunner(small("size_sweep", sizes=[32, 64])).run()
    second = ExperimentRunner(small("size_sweep", sizes=[32, 64])).run()
    assert first == second


def test_seed_override(monkeypatch):
    monkeypatch.setenv(Config.SEED_ENV_VAR, "77")
    record = ExperimentRunner(small("ablation", include_k3=True)).run()[0]
    assert record.seeds == [77]
    assert record.value("msd_k3", "l2_rel") <= record.value("msd_int8", "l2_rel") * 1.5
    monkeypatch.setenv(Config.SEED_ENV_VAR, "seven")
    with pytest.raises(ConfigError):
        ExperimentRunner(small("ablation"))


def test_flash_attention_skips_non_dividing_tiles():
    cfg = small("flash_attention", trials=1, seq_lengths=[128], queries=8, head_dim=16, block_cols=[32, 48])
    record = ExperimentRunner(cfg).run()[0]
    assert record.value("flash_msd", "l2_rel", seq=128, block_cols=32) < \
        record.value("flash_dequant", "l2_rel", seq=128, block_cols=32)
    assert not [row for row in record.rows if row.get("block_cols") == 48]
    assert "block_cols" not in [row for row in record.rows if row["method"] == "dequant"][0]


def test_mxfp4_decomposition_records():
    record = ExperimentRunner(small("mxfp4_decomp", rows=8, trials=1)).run()[0]
    label = "gaussian(0,1)"
    assert record.value("ratio", "ratio", distribution=label) > 1.0
    assert record.value("msd_mxfp4_v3", "eff_bits", distribution=label) > \
        record.value("mxfp8_floor", "eff_bits", distribution=label)


def test_mxfp4_evolution_records():
    record = ExperimentRunner(small("mxfp4_evolution", rows=8, trials=1)).run()[0]
    bits = [record.value(v, "eff_bits", stage="decomposition") for v in ("v1", "v2", "v3")]
    assert bits[0] < bits[2]
    assert record.value("v3", "ratio", stage="gemm") > 1.0
    assert 0.0 < record.value("v3", "clip_rate", stage="decomposition") < 0.5


def test_bound_verify_has_no_violations():
    cfg = ExperimentConfig("bound_verify", blocks=200, samples=3000, vector_lengths=[32, 96], include_k3=True)
    block_record, int8_record = ExperimentRunner(cfg).run()
    for record in (block_record, int8_record):
        assert not record.errors
        for row in record.rows:
            if row["metric"] == "violations":
                assert row["value"] == 0, row
            if row["metric"] == "max_bound_ratio":
                assert row["value"] <= 1.0, row
    modes = {row["method"] for row in int8_record.rows}
    assert modes == {"int8_standard", "int8_fractional", "int8_k3"}


def test_cost_tables_pass_acceptance():
    records = ExperimentRunner(ExperimentConfig("cost_tables")).run()
    assert AcceptanceChecker().check(records) == []
    titles = [record.title for record in records]
    assert "Crossover query count N*" in titles


def test_cost_checker_covers_every_query_count():
    records = ExperimentRunner(ExperimentConfig("cost_tables")).run()
    for record in records:
        for row in record.rows:
            if row["method"] == "ratio" and row.get("N") == 12 and row.get("d") == 128:
                row["value"] = 2.4
    failures = AcceptanceChecker().check(records)
    assert failures == ["vector op ratio at N=12, d=128: 2.40 != 2.0"]


def test_checker_reports_failures():
    record = ResultRecord(experiment="gemm_int8", title="t")
    for method, l2, exceed in (("dequant", 0.02, 0.9), ("msd_int8", 5e-5, 0.0)):
        record.add(method, "l2_rel", l2)
        record.add(method, "exceed_0.001", exceed)
    failures = AcceptanceChecker().check([record])
    assert len(failures) == 1 and "dequant L2" in failures[0]

    partial = ResultRecord(experiment="ablation", title="t")
    partial.add("dequant", "l2_rel", 0.006)
    assert "missing result" in AcceptanceChecker().check([partial])[0]


def test_default_config_paths_missing_dir(tmp_path):
    with pytest.raises(ConfigError):
        default_config_paths(str(tmp_path / "nowhere"))
    (tmp_path / "a.json").write_text("{}")
    (tmp_path / "notes.txt").write_text("")
    assert default_config_paths(str(tmp_path)) == [os.path.join(str(tmp_path), "a.json")]


def full_scale_flash_record(flash_msd):
    record = ResultRecord(experiment="flash_attention", title="t")
    record.add("dequant", "l2_rel", 0.0141, seq=16384)
    record.add("flash_dequant", "l2_rel", 0.0138, seq=16384, block_cols=64)
    record.add("flash_msd", "l2_rel", flash_msd, seq=16384, block_cols=64)
    return record


def test_full_scale_flash_msd_band():
    checker = AcceptanceChecker()
    assert checker.check([full_scale_flash_record(0.0006)]) == []
    failures = checker.check([full_scale_flash_record(0.006)])
    assert len(failures) == 1 and failures[0].startswith("full scale flash_msd L2")
    assert checker.check([full_scale_flash_record(0.006)], desk=True) == []


def test_bf16_activation_storage_hides_activation_truncation():
    label = "gaussian(0,1)"
    fp32 = ExperimentRunner(small("gemm_int8", rows=8, sizes=[128])).run()[0]
    bf16 = ExperimentRunner(small("gemm_int8", rows=8, sizes=[128], activation_storage="bf16")).run()[0]
    stored = bf16.value("dequant", "l2_rel", size=128, distribution=label)
    full = fp32.value("dequant", "l2_rel", size=128, distribution=label)
    # only the weight side is truncated once the activation is already BF16
    assert stored < 0.8 * full
