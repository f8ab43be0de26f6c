import json

import pytest

from servescore import cli, pipeline


def write_config(tmp_path, data_dir, out, datasets=("wimbledon-M",), **extra):
    lines = [f"data_dir = {data_dir}", f"out = {out}", "years = 2018, 2019", "seed = 11",
             f"datasets = {', '.join(datasets)}"]
    lines += [f"{k} = {v}" for k, v in extra.items()]
    p = tmp_path / "run.cfg"
    p.write_text("# test run\n" + "\n".join(lines) + "\n")
    return p


def hashes(out):
    manifest = json.loads((out / "manifest.json").read_text())
    return {a["path"]: a["sha256"] for a in manifest["artifacts"]}


@pytest.fixture(scope="module")
def full_run(demo_data, tmp_path_factory):
    tmp = tmp_path_factory.mktemp("full")
    cfg = write_config(tmp, demo_data, tmp / "out")
    assert cli.main(["all", "--config", str(cfg)]) == 0
    return tmp / "out"


def test_all_writes_every_artifact(full_run):
    files = hashes(full_run)
    assert len(files) >= 7
    ds = full_run / "wimbledon-M"
    for name in ("points_clean.csv", "features_s1.csv", "fit_s1.json", "sqs_s2.csv", "welo_ratings.csv",
                 "eval.csv", "eval.txt", "top10.txt", "figures/scatter_s1.png", "figures/top10_s2.png"):
        assert (ds / name).exists(), name
    fit = json.loads((ds / "fit_s1.json").read_text())
    assert fit["provenance"]["seed"] == 11 and fit["provenance"]["stage"] == "fit"
    rows = json.loads((ds / "eval.json").read_text())["rows"]
    assert len(rows) == 8


def test_stage_by_stage_matches_all(full_run, demo_data, tmp_path):
    cfg = write_config(tmp_path, demo_data, tmp_path / "out")
    for stage in pipeline.STAGES:
        assert cli.main([stage, "--config", str(cfg)]) == 0
    assert hashes(tmp_path / "out") == hashes(full_run)


def test_evaluate_without_fit_is_missing_artifact(demo_data, tmp_path):
    cfg = write_config(tmp_path, demo_data, tmp_path / "out")
    assert cli.main(["ingest", "--config", str(cfg)]) == 0
    assert cli.main(["evaluate", "--config", str(cfg)]) == 1
    outcome = pipeline.run_dataset(cli.build_config(cli.make_parser().parse_args(
        ["evaluate", "--config", str(cfg)])), "wimbledon-M", ["evaluate"])
    assert not outcome.ok and outcome.failed_stage == "evaluate"
    assert "MissingArtifact" in outcome.error or "fit_s1.json" in outcome.error


def test_missing_input_fails_one_dataset_only(demo_data, tmp_path, capsys):
    cfg = write_config(tmp_path, demo_data, tmp_path / "out", datasets=("wimbledon-W", "usopen-W"))
    assert cli.main(["ingest", "--config", str(cfg)]) == 1
    out = capsys.readouterr().out
    assert "wimbledon-W: ok" in out and "usopen-W: FAILED at ingest" in out
    assert (tmp_path / "out" / "wimbledon-W" / "points_clean.csv").exists()


@pytest.mark.parametrize("argv", [
    ["all"],
    ["all", "--data-dir", "d"],
    ["all", "--data-dir", "d", "--out", "o", "--dataset", "rolandgarros-M"],
    ["all", "--data-dir", "d", "--out", "o", "--split-fraction", "1.5"],
    ["all", "--data-dir", "d", "--out", "o", "--jobs", "0"],
    [],
])
def test_config_errors_exit_two(argv):
    assert cli.main(argv) == 2


def test_unknown_config_key(tmp_path):
    p = tmp_path / "bad.cfg"
    p.write_text("data_dir = d\nout = o\ncolour = blue\n")
    assert cli.main(["all", "--config", str(p)]) == 2


def test_config_file_parsing(tmp_path):
    p = tmp_path / "c.cfg"
    p.write_text("data_dir = d  # inline comment\nyears = 2018,2019\ncolumn_map.player1 = p1\n")
    assert cli.parse_config_file(p) == {"data_dir": "d", "years": ["2018", "2019"],
                                        "column_map": {"player1": "p1"}}


def test_flags_override_file(tmp_path, demo_data):
    cfg = write_config(tmp_path, demo_data, tmp_path / "out")
    args = cli.make_parser().parse_args(["all", "--config", str(cfg), "--seed", "5", "--min-serves", "3"])
    c = cli.build_config(args)
    assert (c.seed, c.min_serves, c.years) == (5, 3, [2018, 2019])


def test_config_hash_ignores_output_location(tmp_path):
    a = pipeline.PipelineConfig(tmp_path, tmp_path / "a")
    b = pipeline.PipelineConfig(tmp_path, tmp_path / "b", jobs=4)
    assert a.config_hash() == b.config_hash()
    assert a.config_hash() != pipeline.PipelineConfig(tmp_path, tmp_path / "a", seed=1).config_hash()


def test_demo_data_command(tmp_path):
    assert cli.main(["demo-data"]) == 2
    assert cli.main(["demo-data", "--data-dir", str(tmp_path), "--seed", "1"]) == 0
    assert (tmp_path / "2024-usopen-points.csv").exists()
