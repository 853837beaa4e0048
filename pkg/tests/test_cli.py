import json

import pytest
import yaml

from transnar.cli import (
    EXIT_CONFIG,
    EXIT_INCOMPLETE,
    EXIT_OK,
    EXIT_PREREQUISITE,
    EXIT_USAGE,
    main,
)
from transnar.data import sha256_file

TINY = ["data.samples_per_size=16", "data.eval_samples_per_size=3", "nar.steps=10", "nar.hidden=16",
        "nar.samples_per_size=10", "nar.eval_sizes=[]", "lm.width=16", "train.batch_size=8", "eval.batch_size=4"]


def cli(out, *args):
    return main([*args, "--config", "smoke", "--out", str(out), "--quiet", *TINY])


@pytest.fixture(scope="module")
def flow(tmp_path_factory):
    out = tmp_path_factory.mktemp("cli")
    codes = {cmd: cli(out, cmd) for cmd in ("gen-data", "pretrain-nar", "train", "evaluate")}
    return out, codes


def test_full_flow_and_report(flow, capsys):
    out, codes = flow
    assert set(codes.values()) == {EXIT_OK}
    assert cli(out, "report") == EXIT_OK
    report = json.loads((out / "report" / "report.json").read_text())
    assert {r["size"] for r in report["rows"]} == {10, 12, 14}
    assert {r["variant"] for r in report["rows"]} == {"baseline", "transnar"}
    assert report["missing"] == [] and report["chain_violations"] == 0
    assert (out / "report" / "clrs_score.png").exists()
    assert "extrapolation" in capsys.readouterr().out


def test_every_invocation_leaves_a_config_snapshot(flow):
    out, _ = flow
    for cmd in ("gen-data", "pretrain-nar", "train", "evaluate"):
        snap = yaml.safe_load((out / "invocations" / f"{cmd}.yaml").read_text())
        assert snap["data"]["samples_per_size"] == 16
    assert (out / "config.yaml").exists()


def test_regenerating_data_is_byte_identical(flow):
    out, _ = flow
    manifest = json.loads((out / "data" / "manifest.json").read_text())
    assert cli(out, "gen-data") == EXIT_OK
    assert all(sha256_file(out / "data" / rel) == h for rel, h in manifest["files"].items())


def test_missing_cells_exit_incomplete(flow):
    out, _ = flow
    assert main(["report", "--config", "smoke", "--out", str(out), "--quiet", "--no-plots",
                 *TINY, "train.seeds=[0, 1, 2]"]) == EXIT_INCOMPLETE


def test_single_cell_selection(flow, capsys):
    out, _ = flow
    assert cli(out, "evaluate", "--seed", "1", "--variant", "baseline") == EXIT_OK
    lines = capsys.readouterr().out.strip().splitlines()
    assert len(lines) == 1 and lines[0].startswith("baseline-seed1")


@pytest.mark.parametrize("argv", [[], ["frobnicate"], ["train", "--variant", "hybrid"], ["train", "--seed", "x"]])
def test_usage_errors(argv):
    assert main(argv) == EXIT_USAGE


@pytest.mark.parametrize("override", ["train.epochs=many", "lm.depth=3", "positional=alibi"])
def test_config_errors(tmp_path, override):
    assert main(["train", "--out", str(tmp_path), "--config", "smoke", override]) == EXIT_CONFIG


def test_missing_config_file(tmp_path):
    assert main(["train", "--out", str(tmp_path), "--config", str(tmp_path / "nope.yaml")]) == EXIT_CONFIG


@pytest.mark.parametrize("cmd", ["train", "evaluate", "report"])
def test_missing_prerequisites(tmp_path, cmd):
    assert cli(tmp_path, cmd) == EXIT_PREREQUISITE


def test_nar_pretraining_needs_no_dataset(tmp_path):
    assert cli(tmp_path, "pretrain-nar") == EXIT_OK
    assert (tmp_path / "checkpoints" / "nar.pt").exists()


def test_transnar_needs_the_nar(tmp_path):
    assert cli(tmp_path, "gen-data") == EXIT_OK
    assert cli(tmp_path, "train", "--variant", "transnar") == EXIT_PREREQUISITE
    assert cli(tmp_path, "train", "--variant", "baseline", "--seed", "0") == EXIT_OK
