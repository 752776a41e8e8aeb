import json
import subprocess
import sys

import yaml

from seqvi.cli import main


def write_config(path, method, **trainer):
    doc = {
        "sequence": {"name": "ci-split-iris-2d"},
        "trainer": {"method": method, "epochs": 2, "n_train_samples": 2, **trainer},
        "eval": {"n_samples": 4, "grid_resolution": 3},
        "out": f"runs/{method}",
    }
    path.write_text(yaml.safe_dump(doc))
    return path


def test_run_with_overrides(tmp_path, capsys):
    cfg = write_config(tmp_path / "ft.yaml", "fine-tune")
    assert main(["run", str(cfg), "--seed", "2", "--out", str(tmp_path / "o")]) == 0
    manifest = json.loads((tmp_path / "o/manifest.json").read_text())
    assert manifest["seed"] == 2
    assert "final average accuracy" in capsys.readouterr().out


def test_out_root_from_environment(tmp_path, monkeypatch):
    cfg = write_config(tmp_path / "ft.yaml", "fine-tune")
    monkeypatch.setenv("SEQVI_OUT", str(tmp_path / "root"))
    assert main(["run", str(cfg)]) == 0
    assert (tmp_path / "root/runs/fine-tune/metrics.csv").exists()


def test_sweep_and_grid(tmp_path):
    d = tmp_path / "cfgs"
    d.mkdir()
    write_config(d / "a.yaml", "fine-tune")
    write_config(d / "b.yaml", "er")
    assert main(["sweep", str(d), "--out", str(tmp_path / "s")]) == 0
    ck = tmp_path / "s/b/checkpoints/er_task2.npz"
    assert ck.exists()
    assert main(["grid", str(ck), str(d / "b.yaml"), "--resolution", "4", "--out", str(tmp_path / "g.csv")]) == 0
    assert len((tmp_path / "g.csv").read_text().splitlines()) == 17


def test_divergence_exit_status(tmp_path):
    cfg = write_config(tmp_path / "bad.yaml", "fine-tune", base_lr=1e300)
    proc = subprocess.run(
        [sys.executable, "-m", "seqvi.cli", "run", str(cfg), "--out", str(tmp_path / "bad")],
        capture_output=True, text=True,
    )
    assert proc.returncode != 0
    assert "diverged" in proc.stderr
    assert (tmp_path / "bad/metrics.csv").exists()


def test_shipped_configs_load():
    from importlib import resources

    from seqvi.harness import RunConfig

    root = resources.files("seqvi") / "configs"
    paths = [p for d in ("iris", "sinusoid") for p in (root / d).iterdir()]
    assert len(paths) == 26
    for p in paths:
        cfg = RunConfig.load(p)
        t = cfg.trainer
        assert (t.base_lr, t.batch_size, t.epochs, t.coreset_per_task, t.k) == (0.1, 16, 100, 16, 3)
