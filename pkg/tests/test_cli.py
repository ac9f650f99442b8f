"""Command-line layer: config assembly, subcommands, exit codes."""

import os
import shutil

import numpy as np
import pytest

from motionfill.cli import ExperimentConfig, experiment_config, main
from motionfill.config import apply_config, parse_config_text, serialize_config
from motionfill.errors import SchemaError
from motionfill.metrics import report_from_text
from motionfill.training import load_checkpoint


def test_experiment_config_defaults():
    cfg = ExperimentConfig()
    assert cfg.profile == "desk"
    assert cfg.data.n_scenes == 12
    assert cfg.data.train_windows == 2000
    assert cfg.data.test_windows == 200
    assert cfg.train.channels_dim == 128
    assert cfg.sampler.guidance_weight == 2.5
    assert cfg.metrics.collision_eps == 0.01


def test_experiment_config_profile_and_seed():
    cfg = experiment_config(profile="paper", seed=7)
    assert cfg.profile == "paper"
    assert cfg.train.batch_size == 256
    assert cfg.train.channels_dim == 256
    assert cfg.seed == 7
    assert cfg.train.seed == 7
    assert cfg.sampler.seed == 7
    with pytest.raises(SchemaError):
        experiment_config(profile="phone")


def test_experiment_config_round_trip():
    cfg = experiment_config(
        sets=[("train.learning_rate", "0.0002"), ("data.stride", "60"), ("seed", "5")]
    )
    text = serialize_config(cfg)
    again = apply_config(ExperimentConfig(), parse_config_text(text))
    assert again == cfg
    assert serialize_config(again) == text


def test_experiment_config_precedence(tmp_path):
    path = tmp_path / "exp.cfg"
    path.write_text("profile paper\ntrain.batch_size 16\n")
    cfg = experiment_config(str(path))
    assert cfg.profile == "paper" and cfg.train.batch_size == 16
    cfg = experiment_config(str(path), sets=[("train.batch_size", "8")])
    assert cfg.train.batch_size == 8
    cfg = experiment_config(str(path), profile="cpu")
    assert cfg.profile == "cpu"
    assert cfg.train.channels_dim == 64
    assert cfg.train.batch_size == 16
    with pytest.raises(SchemaError):
        experiment_config(sets=[("data.nscenes", "4")])


TINY_GEN = [
    "--set", "data.n_scenes", "3",
    "--set", "data.train_windows", "4",
    "--set", "data.test_windows", "2",
    "--set", "data.test_scenes", "1",
    "--set", "data.stride", "60",
]


def test_gen_data_is_byte_deterministic(tmp_path):
    a, b, c = (str(tmp_path / d) for d in ("a", "b", "c"))
    assert main(["gen-data", "--out", a, "--seed", "4"] + TINY_GEN) == 0
    assert main(["gen-data", "--out", b, "--seed", "4"] + TINY_GEN) == 0
    assert main(["gen-data", "--out", c, "--seed", "5"] + TINY_GEN) == 0

    wid = open(os.path.join(a, "train.txt")).read().split()[0]
    frames = os.path.join("motions", wid, "frames.f32")
    blob_a = open(os.path.join(a, frames), "rb").read()
    assert blob_a == open(os.path.join(b, frames), "rb").read()
    assert open(os.path.join(a, "manifest.txt")).read() == open(
        os.path.join(b, "manifest.txt")
    ).read()
    assert open(os.path.join(a, "manifest.txt")).read() != open(
        os.path.join(c, "manifest.txt")
    ).read()


TINY_TRAIN = [
    "--profile", "cpu",
    "--set", "train.diffusion_steps", "100",
    "--set", "train.batch_size", "4",
    "--set", "train.log_every", "5",
]


@pytest.fixture(scope="module")
def cli_run(tiny_root, tmp_path_factory):
    """One trained checkpoint + one sampled window via the CLI."""
    base = tmp_path_factory.mktemp("cli")
    run = str(base / "run")
    out = str(base / "out")
    assert main(["train", "--data", tiny_root, "--out", run, "--steps", "8",
                 "--seed", "1"] + TINY_TRAIN) == 0
    wid = open(os.path.join(tiny_root, "train.txt")).read().split()[0]
    assert main(["sample", "--checkpoint", os.path.join(run, "ckpt_final"),
                 "--data", tiny_root, "--window", wid, "--interval", "60",
                 "--out", out, "--seed", "0"]) == 0
    return dict(run=run, out=out, wid=wid)


def test_train_writes_checkpoint_log_and_provenance(cli_run):
    run = cli_run["run"]
    assert os.path.exists(os.path.join(run, "ckpt_final.bin"))
    assert load_checkpoint(os.path.join(run, "ckpt_final")).step == 8
    log = open(os.path.join(run, "loss_log.txt")).read().splitlines()
    assert [int(l.split()[0]) for l in log] == [1, 5]
    prov = open(os.path.join(run, "provenance.txt")).read()
    assert "checkpoint " in prov and "config " in prov and "seed 1" in prov


def test_sample_output_container(cli_run, tiny_root, tiny_bank):
    folder = os.path.join(cli_run["out"], "motions", cli_run["wid"])
    raw = np.frombuffer(open(os.path.join(folder, "frames.f32"), "rb").read(), "<f4")
    assert raw.size == 121 * 201
    assert np.isfinite(raw).all()
    prov = open(os.path.join(folder, "provenance.txt")).read()
    assert "keys 0 60 120" in prov
    assert "guidance_weight 2.5" in prov


def test_cli_resume_continues_step_count(cli_run, tiny_root, tmp_path):
    out = str(tmp_path / "resumed")
    rc = main(["train", "--data", tiny_root, "--out", out, "--steps", "2", "--seed", "1",
               "--resume", os.path.join(cli_run["run"], "ckpt_final")] + TINY_TRAIN)
    assert rc == 0
    assert load_checkpoint(os.path.join(out, "ckpt_final")).step == 10


def test_evaluate_self_and_pred(cli_run, tiny_root, tiny_bank, tmp_path):
    from motionfill.nn.extractor import save_extractor, train_feature_extractor

    ex_base = str(tmp_path / "extractor")
    save_extractor(train_feature_extractor(tiny_bank, seed=0, steps=40), ex_base)

    fast = ["--set", "metrics.surface_points", "512"]
    report_path = str(tmp_path / "pred_report.txt")
    rc = main(["evaluate", "--pred", cli_run["out"], "--ref", tiny_root,
               "--data", tiny_root, "--extractor", ex_base, "--out", report_path]
              + fast)
    assert rc == 0
    report = report_from_text(open(report_path).read())
    assert report.mjpe_key == 0.0
    assert np.isfinite(report.mjpe_all) and report.mjpe_all > 0.0
    assert len(report.per_sequence) == 1

    self_path = str(tmp_path / "self_report.txt")
    rc = main(["evaluate", "--pred", os.path.join(tiny_root, "motions"),
               "--ref", tiny_root, "--data", tiny_root,
               "--extractor", ex_base, "--out", self_path] + fast)
    assert rc == 0
    report = report_from_text(open(self_path).read())
    assert report.mjpe_all == 0.0
    assert report.fid < 0.5
    assert report.collision_frame_ratio == 0.0


def test_evaluate_missing_id_lists_it(cli_run, tiny_root, tmp_path, capsys):
    pred = str(tmp_path / "pred")
    wid = cli_run["wid"]
    shutil.copytree(
        os.path.join(cli_run["out"], "motions", wid),
        os.path.join(pred, "motions", "w_unknown"),
    )
    rc = main(["evaluate", "--pred", pred, "--ref", tiny_root, "--data", tiny_root,
               "--extractor", "unused", "--out", str(tmp_path / "r.txt")])
    assert rc == 2
    assert "w_unknown" in capsys.readouterr().err


def test_export_round_trip(cli_run, tmp_path):
    from motionfill.dataset import load_motion_dir
    from motionfill.kinematics import forward_kinematics, pose_unpack

    folder = os.path.join(cli_run["out"], "motions", cli_run["wid"])
    out = str(tmp_path / "exp")
    assert main(["export", "--motion", folder, "--out", out]) == 0

    table = np.loadtxt(os.path.join(out, "joints.txt"))
    assert table.shape == (121, 67)
    assert np.array_equal(table[:, 0], np.arange(121))
    window, _ = load_motion_dir(folder)
    pose, _ = pose_unpack(window.motion.frames)
    fk = forward_kinematics(pose, window.motion.skeleton).reshape(121, 66)
    assert np.allclose(table[:, 1:], fk, atol=1e-6)

    png = os.path.join(out, "trajectory.png")
    assert os.path.getsize(png) > 0


def test_exit_codes(cli_run, tiny_root, tmp_path):
    assert main(["gen-data", "--out", str(tmp_path / "x"),
                 "--set", "data.nscenes", "1"]) == 2
    assert main(["train", "--data", tiny_root, "--out", str(tmp_path / "y"),
                 "--set", "train.optimizer", "sgd"]) == 2
    assert main(["export", "--motion", os.path.join(cli_run["out"], "motions",
                 cli_run["wid"]), "--out", str(tmp_path / "z"),
                 "--format", "gif"]) == 2
    assert main(["sample", "--checkpoint", os.path.join(cli_run["run"], "ckpt_final"),
                 "--data", tiny_root, "--window", cli_run["wid"], "--long", "100",
                 "--out", str(tmp_path / "w")]) == 2


def test_numeric_failure_exit_code(tiny_root, tmp_path):
    broken = str(tmp_path / "broken")
    shutil.copytree(tiny_root, broken)
    wid = open(os.path.join(broken, "train.txt")).read().split()[0]
    frames_path = os.path.join(broken, "motions", wid, "frames.f32")
    frames = np.fromfile(frames_path, dtype="<f4").reshape(-1, 201)
    frames[:, :66] = np.nan  # poison joints, keep rotation blocks decodable
    frames.tofile(frames_path)
    shutil.rmtree(os.path.join(broken, "cache"), ignore_errors=True)
    rc = main(["train", "--data", broken, "--out", str(tmp_path / "run"),
               "--steps", "3", "--seed", "0"] + TINY_TRAIN)
    assert rc == 4
    assert os.path.exists(str(tmp_path / "run" / "diagnostic_dump.txt"))