import csv
import json

import pytest

from tactfl import config as config_mod
from tactfl.cli import main

SMALL = [
    "--set", "samples_per_class=10", "--set", "dim_a=4", "--set", "dim_b=3",
    "--set", "latent_dim=3", "--set", "private_dim=0", "--set", "num_clients=3",
    "--set", "alpha=1.0", "--set", "hidden=6", "--set", "embed=4", "--set", "rounds=2",
]


@pytest.fixture
def cfg_file(tmp_path):
    path = tmp_path / "exp.ini"
    path.write_text("[train]\nrounds = 3\nbatch_size = 8\n\n[run]\nseed = 4\n")
    return path


def test_run_writes_artifacts(tmp_path, cfg_file):
    out = tmp_path / "run"
    assert main(["run", "--config", str(cfg_file), *SMALL, "--set", "rounds=1", "--out", str(out)]) == 0
    lines = (out / "metrics.jsonl").read_text().splitlines()
    assert len(lines) == 1
    assert json.loads(lines[0])["round"] == 0
    summary = json.loads((out / "summary.json").read_text())
    manifest = json.loads((out / "run_manifest.json").read_text())
    assert summary["fingerprint"] == manifest["fingerprint"]
    assert summary["seed"] == 4
    # the resolved config re-parses to the config that ran
    resolved = config_mod.loads(manifest["config"])
    assert resolved == config_mod.loads((out / "config.resolved.ini").read_text())
    assert resolved.rounds == 1 and resolved.batch_size == 8
    with open(out / "timing.csv") as fh:
        assert next(csv.reader(fh)) == ["round", "ms"]


def test_identical_runs_identical_metrics(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["run", *SMALL, "--out", str(a)]) == 0
    assert main(["run", *SMALL, "--workers", "3", "--out", str(b)]) == 0
    assert (a / "metrics.jsonl").read_bytes() == (b / "metrics.jsonl").read_bytes()


def test_missing_config_file_is_usage_error(tmp_path, capsys):
    missing = tmp_path / "nope.ini"
    assert main(["run", "--config", str(missing)]) == 2
    assert str(missing) in capsys.readouterr().err


def test_bad_override_is_usage_error(capsys):
    assert main(["run", "--set", "no_such_key=1"]) == 2
    assert main(["run", "--set", "r_l=1.5"]) == 2
    assert "r_l" in capsys.readouterr().err
    assert main(["run", "--set", "rounds"]) == 2


def test_unknown_subcommand_is_usage_error():
    assert main(["bogus"]) == 2


def test_runtime_failure_exit_code(tmp_path):
    bad = tmp_path / "broken.bin"
    bad.write_bytes(b"junk")
    assert main(["run", "--set", f"feature_file={bad}", "--out", str(tmp_path / "o")]) == 1


def test_ablate_table(tmp_path):
    out = tmp_path / "abl"
    assert main(["ablate", *SMALL, "--out", str(out)]) == 0
    with open(out / "ablation.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert [r["mode"] for r in rows] == ["ssfl_only", "tct_only", "full", "supervised"]
    assert len({r["fingerprint"] for r in rows}) == 1
    # table values come straight from the per-mode logs
    for r in rows:
        last = (out / r["mode"] / "metrics.jsonl").read_text().splitlines()[-1]
        assert float(r["accuracy"]) == pytest.approx(json.loads(last)["accuracy"], abs=5e-3)


def test_ablate_multiple_seeds_reports_median(tmp_path):
    out = tmp_path / "abl"
    assert main(["ablate", *SMALL, "--set", "rounds=1", "--seeds", "0,1,2", "--out", str(out)]) == 0
    with open(out / "ablation.csv") as fh:
        rows = list(csv.DictReader(fh))
    for r in rows:
        accs = sorted(float(a) for a in r["per_seed_accuracy"].split())
        assert float(r["accuracy"]) == pytest.approx(accs[1], abs=5e-3)
    assert main(["ablate", "--seeds", "x", "--out", str(out)]) == 2


def test_sweep_rows(tmp_path):
    out = tmp_path / "sw"
    assert main(["sweep", *SMALL, "--set", "rounds=1", "--param", "window_fraction",
                 "--values", "0.5,0.6,0.7,0.8,0.9", "--out", str(out)]) == 0
    with open(out / "sweep.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert [float(r["window_fraction"]) for r in rows] == [0.5, 0.6, 0.7, 0.8, 0.9]


def test_sweep_usage_errors(tmp_path):
    assert main(["sweep", "--param", "window_fraction", "--values", "", "--out", str(tmp_path)]) == 2
    assert main(["sweep", "--param", "hidden", "--values", "3", "--out", str(tmp_path)]) == 2
    assert main(["sweep", "--param", "r_l", "--values", "1.0", "--out", str(tmp_path)]) == 2


def test_partition_inspect(tmp_path, capsys):
    out = tmp_path / "split.csv"
    assert main(["partition-inspect", *SMALL, "--out", str(out)]) == 0
    text = capsys.readouterr().out
    assert "client:0" in text and "fingerprint" in text
    assert out.read_text().startswith("# sample_id,shard,label,modalities")
