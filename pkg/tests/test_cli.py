import subprocess
import sys

from raga.cli import main

QUAD = """
dataset: {kind: quadratic, dim: 2, per_shard: 4, noise_std: 0.0}
model: {kind: quadratic}
partition: {clients: 4}
trainer:
  rounds: 3
  local_steps: 1
  global_lr: {kind: constant, eta0: 0.5}
  local_lr: {kind: constant, eta0: 0.5}
output_dir: out
seeds: [0, 1]
"""


def write(tmp_path, text=QUAD):
    path = tmp_path / "c.yaml"
    path.write_text(text)
    return path


def test_run_writes_into_config_relative_dir(tmp_path, capsys):
    assert main(["run", str(write(tmp_path))]) == 0
    assert sorted(p.name for p in (tmp_path / "out").iterdir()) == [
        "config.yaml", "metrics_seed0.csv", "metrics_seed1.csv", "summary.csv",
    ]


def test_seed_flag_and_env_override(tmp_path, monkeypatch):
    monkeypatch.setenv("RAGA_OUTPUT_DIR", str(tmp_path / "env"))
    assert main(["--seed", "7", "run", str(write(tmp_path))]) == 0
    assert sorted(p.name for p in (tmp_path / "env").iterdir()) == ["config.yaml", "metrics_seed7.csv", "summary.csv"]


def test_sweep(tmp_path, monkeypatch):
    monkeypatch.setenv("RAGA_OUTPUT_DIR", str(tmp_path / "sw"))
    cfg = write(tmp_path)
    assert main(["sweep", str(cfg), "--vary", "byz_fraction=0,0.25", "--vary", "attack=gaussian,lie"]) == 0
    cells = sorted(p.name for p in (tmp_path / "sw").iterdir() if p.is_dir())
    assert len(cells) == 4 and "byz_fraction=0.25_attack=lie" in cells


def test_config_errors_exit_2(tmp_path, capsys):
    assert main(["run", str(write(tmp_path, "byz_fraction: 0.7\n"))]) == 2
    assert "honest fraction must exceed 0.5" in capsys.readouterr().err
    assert main(["run", str(tmp_path / "missing.yaml")]) == 2


def test_gradcheck_and_bench(capsys):
    assert main(["gradcheck", "--cases", "10"]) == 0
    out = capsys.readouterr().out
    assert out.count("PASS") == 3
    assert main(["median-bench", "--trials", "2", "--dim", "10"]) == 0
    assert "iterations" in capsys.readouterr().out


def test_verify_bounds_cli(tmp_path, capsys):
    cfg = write(tmp_path, QUAD.replace("rounds: 3", "rounds: 12"))
    assert main(["verify-bounds", str(cfg)]) == 0
    out = capsys.readouterr().out
    assert "PASS theorem1 T=10" in out and "FAIL" not in out


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "raga.cli", "--help"], capture_output=True, text=True)
    assert res.returncode == 0 and "verify-bounds" in res.stdout
