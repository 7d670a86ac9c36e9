import csv
import os

import pytest

from gvcl.cli import main
from gvcl.config import (
    ExperimentConfig,
    from_ini,
    load_config,
    save_config,
    to_ini,
)
from gvcl.objectives import GVCLConfig
from gvcl.runner import RunnerConfig


def rich_config():
    return ExperimentConfig(
        name="round_trip",
        dataset="synthetic_pair",
        methods=("gvcl_film", "ewc"),
        seeds=(0, 3, 7),
        data_seed=42,
        runner=RunnerConfig(
            gvcl=GVCLConfig(beta=0.2, lam=5.0, mc_samples=2, lr=5e-4, epochs=17,
                            batch_size=32, eval_samples=25, film=True),
            prior0_var=2.0,
            map_lr=0.01,
            map_epochs=33,
            fisher_samples=111,
            ewc_lam=10.0,
        ),
    )


def test_ini_round_trip_is_lossless():
    cfg = rich_config()
    assert from_ini(to_ini(cfg)) == cfg


def test_file_round_trip(tmp_path):
    cfg = rich_config()
    path = tmp_path / "exp.ini"
    save_config(cfg, path)
    assert load_config(path) == cfg


def test_config_validation():
    with pytest.raises(ValueError):
        ExperimentConfig(dataset="imagenet")
    with pytest.raises(ValueError):
        ExperimentConfig(methods=("gvcl", "bogus"))
    with pytest.raises(ValueError):
        ExperimentConfig(seeds=())


def test_missing_experiment_section():
    with pytest.raises(ValueError):
        from_ini("[runner]\nprior0_var = 1.0\n")


def test_defaults_fill_missing_sections():
    cfg = from_ini("[experiment]\nname = 'x'\ndataset = 'toy_clusters'\n")
    assert cfg.name == "x"
    assert cfg.runner == RunnerConfig()


# -- CLI ----------------------------------------------------------------------


def test_cli_verify_exits_zero(capsys):
    assert main(["verify"]) == 0
    out = capsys.readouterr().out
    assert "FAIL" not in out
    assert out.count("PASS") == 7


def test_cli_toy_film_scale(tmp_path, capsys):
    assert main(["toy", "film_scale", "--out", str(tmp_path)]) == 0
    with open(tmp_path / "film_scale.csv") as f:
        rows = list(csv.reader(f))
    assert rows[0] == ["instance", "c_analytic", "c_grid", "gap"]
    assert len(rows) == 101
    assert all(float(r[3]) <= 0.011 for r in rows[1:])


@pytest.mark.parametrize("jobs", [1, 2])
def test_cli_run_toy_clusters(tmp_path, jobs):
    cfg = ExperimentConfig(
        name="smoke",
        dataset="toy_clusters",
        methods=("gvcl", "map_sgd"),
        seeds=(0,),
        data_seed=5,
        runner=RunnerConfig(
            gvcl=GVCLConfig(epochs=2, batch_size=50, eval_samples=3),
            map_epochs=3,
            fisher_samples=10,
        ),
    )
    ini = tmp_path / "smoke.ini"
    save_config(cfg, ini)
    out = tmp_path / "runs"
    assert main(["run", str(ini), "--jobs", str(jobs), "--out", str(out)]) == 0

    exp = out / "smoke"
    for m in ("gvcl", "map_sgd"):
        assert (exp / m / "0" / "record.json").exists()
    with open(exp / "summary.csv") as f:
        rows = list(csv.reader(f))
    assert rows[0] == ["method", "seed", "acc", "bwt", "ece", "error"]
    assert len(rows) == 3
    for r in rows[1:]:
        assert r[5] == ""  # no errors
        assert 0.0 <= float(r[2]) <= 1.0
    with open(exp / "calibration.csv") as f:
        cal = list(csv.reader(f))
    assert cal[0][0] == "method"
    assert len(cal) > 1


def test_cli_run_split_mnist_needs_data_root(tmp_path):
    cfg = ExperimentConfig(name="m", dataset="split_mnist", methods=("gvcl",), seeds=(0,))
    ini = tmp_path / "m.ini"
    save_config(cfg, ini)
    with pytest.raises(ValueError):
        main(["run", str(ini), "--out", str(tmp_path / "r")])
    with pytest.raises(FileNotFoundError):
        main(["run", str(ini), "--data-root", str(tmp_path), "--out", str(tmp_path / "r")])
