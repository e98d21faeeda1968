import csv

import numpy as np
import pytest

from alcc.cli import main
from alcc.config import ConfigError, RunConfig, dump_config, load_config, loads_config
from alcc.pipeline import heldout_profiles, training_pool, training_profile

TINY = """
[run]
seed = 3

[ddpg]
hidden = 16, 8
batch_size = 32
update_every = 4

[data]
population_size = 60
corpus_episodes = 3

[ga]
generations = 10

[env]
online_fit = false

[evaluation]
drivers = 4
seed_offsets = 0, 1
"""


# ------------------------------------------------------------------- config


def test_default_config_round_trips():
    cfg = RunConfig()
    assert loads_config(dump_config(cfg)) == cfg


def test_partial_config_keeps_defaults_and_seeds_everything():
    cfg = loads_config(TINY)
    assert cfg.seed == cfg.ga.seed == cfg.ddpg.seed == 3
    assert cfg.ddpg.hidden == (16, 8) and cfg.ddpg.gamma == 0.9
    assert cfg.env.online_fit is False and cfg.env.dt == 0.1
    assert loads_config(dump_config(cfg)) == cfg


def test_energy_and_bounds_overrides():
    cfg = loads_config("[energy]\np00 = 0.0\nclamp_negative = no\n[ga.bounds]\nv0 = 5, 35\n[idm]\ns0 = 3\n")
    assert cfg.energy.p[0][0] == 0.0 and cfg.energy.clamp_negative is False
    assert cfg.ga.bounds["v0"] == (5.0, 35.0)
    assert cfg.ga.fixed.s0 == 3.0 == cfg.idm.s0


@pytest.mark.parametrize(
    "text",
    [
        "[nonsense]\nx = 1\n",
        "[ddpg]\nlearning_rate = 1\n",
        "[ddpg]\nepisodes = many\n",
        "[env]\nonline_fit = maybe\n",
        "[ddpg]\ngamma = 2.0\n",
        "[data]\ntrain_profiles = 0\n",
        "[data]\ntrain_pool_seed = 100\n",
        "[run]\nseed = 1\nextra = 2\n",
        "not an ini file",
    ],
)
def test_bad_configs_rejected(text):
    with pytest.raises(ConfigError):
        loads_config(text)


def test_training_pool_starts_with_the_evaluation_profile():
    cfg = loads_config("[data]\ntrain_profiles = 3\n")
    pool = training_pool(cfg)
    assert len(pool) == 3 and np.array_equal(pool[0], training_profile(cfg))
    assert not any(np.array_equal(p, h) for p in pool for h in heldout_profiles(cfg))


def test_missing_config_file(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "none.ini")


# ---------------------------------------------------------------------- CLI


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    (root / "tiny.ini").write_text(TINY)
    out = root / "run"
    args = ["--config", str(root / "tiny.ini"), "--out", str(out)]
    assert main(["gen-data", *args]) == 0
    assert main(["calibrate", *args]) == 0
    assert main(["train", *args, "--mode", "reference", "--episodes", "3"]) == 0
    assert main(["train", *args, "--mode", "proposed", "--episodes", "3"]) == 0
    assert main(["evaluate", *args]) == 0
    assert main(["simulate", *args, "--driver", "2"]) == 0
    return root, out, args


def test_pipeline_artifacts(workdir):
    _, out, _ = workdir
    with open(out / "population.csv") as fh:
        assert sum(1 for _ in fh) == 61
    assert len(list((out / "corpus").glob("*.csv"))) == 3
    with open(out / "calibrated_population_local.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["v0", "T"] and len(rows) == 4
    for mode in ("proposed", "reference"):
        assert (out / "checkpoints" / f"{mode}.npz").exists()
        with open(out / f"training_log_{mode}.csv") as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["episode", "reward", "rolling_mean", "driver_v0", "driver_T", "done_reason"]
        assert len(rows) == 4
    # Three-episode agents still collide, so only the report structure is checked here.
    summary = (out / "reports" / "summary.txt").read_text()
    assert summary.count("drivers evaluated: 4") == 2 * 4 and "[ddpg]" in summary
    with open(out / "reports" / "energy_table.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0][:3] == ["report", "condition", "driver"]
    assert len(rows) == 1 + 2 * 4 * 2 * 4
    with open(out / "trace_proposed.csv") as fh:
        assert next(fh).strip() == "t,v_pv,v_cav,v_hdv,a_cav,a_hdv,gap01,gap12,r_safe,r_eff,r_cav,r_hdv"
    echo = load_config(out / "effective_train.ini")
    assert echo.seed == 3 and echo.ddpg.episodes == 3


def test_reruns_are_byte_identical(workdir, tmp_path):
    root, out, _ = workdir
    again = tmp_path / "again"
    args = ["--config", str(root / "tiny.ini"), "--out", str(again)]
    for cmd in (["gen-data"], ["calibrate"], ["train", "--mode", "reference", "--episodes", "3"],
                ["train", "--mode", "proposed", "--episodes", "3"], ["evaluate"], ["simulate", "--driver", "2"]):
        assert main([*cmd, *args]) == 0
    first = sorted(p.relative_to(out) for p in out.rglob("*") if p.is_file())
    second = sorted(p.relative_to(again) for p in again.rglob("*") if p.is_file())
    assert first == second
    for rel in first:
        assert (out / rel).read_bytes() == (again / rel).read_bytes(), rel


def test_seed_is_printed(workdir, capsys):
    _, _, args = workdir
    assert main(["simulate", *args, "--seed", "11", "--v0", "28", "--T", "1.0", "--no-noise"]) == 0
    assert "seed: 11" in capsys.readouterr().out


@pytest.mark.parametrize(
    "argv",
    [
        [],
        ["launch"],
        ["train", "--mode", "other"],
        ["train", "--episodes", "x"],
        ["train", "--unknown-flag"],
        ["evaluate", "--workers", "0"],
    ],
)
def test_usage_errors_exit_1(argv, tmp_path):
    assert main([*argv, "--out", str(tmp_path)] if argv else argv) == 1


def test_bad_config_is_a_usage_error(tmp_path):
    (tmp_path / "bad.ini").write_text("[ddpg]\nbogus = 1\n")
    assert main(["train", "--config", str(tmp_path / "bad.ini"), "--out", str(tmp_path)]) == 1


def test_runtime_errors_exit_2(tmp_path, capsys):
    assert main(["evaluate", "--out", str(tmp_path / "empty")]) == 2
    err = capsys.readouterr().err.strip().splitlines()
    assert len(err) == 1 and err[0].startswith("error:")
    assert main(["calibrate", "--out", str(tmp_path), "--corpus", str(tmp_path / "nothing")]) == 2


def test_wrong_mode_checkpoint_is_rejected(workdir, tmp_path):
    _, out, args = workdir
    (out / "checkpoints" / "proposed.npz").rename(out / "checkpoints" / "keep.npz")
    try:
        (out / "checkpoints" / "proposed.npz").write_bytes((out / "checkpoints" / "reference.npz").read_bytes())
        assert main(["simulate", *args, "--mode", "proposed"]) == 2
    finally:
        (out / "checkpoints" / "keep.npz").replace(out / "checkpoints" / "proposed.npz")
