"""CLI: flags, config files, deterministic outputs."""
from __future__ import annotations

from pathlib import Path

import pytest

from bicolor.cli import main

CONFIG = """\
n = 3
strategy = "subset_k_natural"
seeds = [0]
max_iters = 30
record_every = 1

[synthetic]
kind = "quadratic"
d = 6
kappa = 25.0
"""


@pytest.fixture
def config_file(tmp_path):
    path = tmp_path / "exp.toml"
    path.write_text(CONFIG)
    return path


def test_run_writes_csv(config_file, tmp_path, capsys):
    out = tmp_path / "out"
    assert main(["run", str(config_file), "--out", str(out)]) == 0
    printed = capsys.readouterr().out.strip().splitlines()
    path = Path(printed[-1])
    assert path.exists()
    header = path.read_text().split("\n", 1)[0]
    assert header.startswith("t,communicated,up_bits")


def test_run_svg_format(config_file, tmp_path):
    out = tmp_path / "svg"
    main(["run", str(config_file), "--out", str(out), "--format", "svg"])
    assert (out / "curves.svg").exists()


def test_seed_and_iteration_overrides(config_file, tmp_path):
    out = tmp_path / "o"
    main(["run", str(config_file), "--out", str(out), "--seed", "5", "--seed", "6",
          "--max-iters", "10"])
    text = (out / "records.csv").read_text()
    seeds = {line.rsplit(",", 1)[1] for line in text.strip().split("\n")[1:]}
    assert seeds == {"5", "6"}
    max_t = max(int(line.split(",", 1)[0]) for line in text.strip().split("\n")[1:])
    assert max_t == 10


def test_identical_invocations_identical_bytes(config_file, tmp_path):
    main(["run", str(config_file), "--out", str(tmp_path / "a")])
    main(["run", str(config_file), "--out", str(tmp_path / "b")])
    a = (tmp_path / "a" / "records.csv").read_bytes()
    b = (tmp_path / "b" / "records.csv").read_bytes()
    assert a == b


def test_sweep_flag(config_file, tmp_path, capsys):
    config = config_file.read_text() + 'gamma_grid = [0.5, 1.0]\nstop_metric = "psi"\n'
    path = config_file.parent / "sweep.toml"
    path.write_text(config)
    main(["run", str(path), "--out", str(tmp_path / "s"), "--sweep"])
    printed = capsys.readouterr().out
    assert "best gamma" in printed


def test_bit_budget_flag(config_file, tmp_path):
    out = tmp_path / "bb"
    main(["run", str(config_file), "--out", str(out), "--bit-budget", "2000",
          "--max-iters", "5000"])
    rows = (out / "records.csv").read_text().strip().split("\n")[1:]
    total = float(rows[-1].split(",")[4])
    assert total >= 2000.0


def test_worker_pool_matches_sequential(config_file, tmp_path, monkeypatch):
    main(["run", str(config_file), "--out", str(tmp_path / "seq"),
          "--seed", "1", "--seed", "2"])
    monkeypatch.setenv("BICOLOR_WORKERS", "2")
    main(["run", str(config_file), "--out", str(tmp_path / "par"),
          "--seed", "1", "--seed", "2"])
    a = (tmp_path / "seq" / "records.csv").read_bytes()
    b = (tmp_path / "par" / "records.csv").read_bytes()
    assert a == b
