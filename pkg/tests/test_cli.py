import hashlib

import numpy as np
import pytest

from mpkrbm import pnm
from mpkrbm.cli import main
from mpkrbm.config import RunConfig, load_run_config, parse_run_config, save_run_config
from mpkrbm.errors import ConfigError


def checksum(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


def smooth_image(shape, seed, channels=3):
    """Low-pass random image so patches carry correlated structure."""
    rng = np.random.default_rng(seed)
    img = rng.standard_normal(shape + (channels,))
    for _ in range(6):
        img = (img + np.roll(img, 1, 0) + np.roll(img, -1, 0)
               + np.roll(img, 1, 1) + np.roll(img, -1, 1)) / 5.0
    img -= img.min()
    img *= 255.0 / max(img.max(), 1e-9)
    return img if channels == 3 else img[:, :, 0]


def write_images(directory, n=3, channels=3):
    directory.mkdir(parents=True, exist_ok=True)
    for i in range(n):
        img = smooth_image((40, 40), seed=i, channels=channels)
        pnm.write_pnm(directory / f"img{i}.{'ppm' if channels == 3 else 'pgm'}", img)


def base_config(tmp_path, **data_overrides):
    config = RunConfig()
    config.paths.data_dir = str(tmp_path / "images")
    config.paths.out_dir = str(tmp_path / "out")
    config.data.patch_size = 6
    config.data.n_patches = 800
    config.data.variance_fraction = 0.95
    for key, value in data_overrides.items():
        setattr(config.data, key, value)
    # tiny model so CLI train runs fast
    config.model.n_subspaces = 3
    config.model.n_pool_hidden = 3
    config.model.n_mean_hidden = 2
    config.model.n_phase_factors = 4
    config.model.n_phase_hidden = 2
    config.trainer.batch_size = 16
    config.trainer.stage_iterations = (3, 3, 3, 3, 3)
    config.trainer.checkpoint_every = 5
    config.synth.patch_size = 6
    config.synth.n_subspaces = 3
    config.synth.n_patches = 300
    config.synth.coupled_pairs = "0:2:3.0:0.0"
    path = tmp_path / "run.cfg"
    save_run_config(config, path)
    return path, config


def test_config_round_trip(tmp_path):
    path, config = base_config(tmp_path)
    back = load_run_config(path)
    assert back.to_text() == config.to_text()
    assert back.trainer.stage_iterations == (3, 3, 3, 3, 3)


def test_config_unknown_key_rejected():
    with pytest.raises(ConfigError):
        parse_run_config("[model]\nn_subspaces = 4\nbogus = 1\n")
    with pytest.raises(ConfigError):
        parse_run_config("[nosuchsection]\nx = 1\n")
    with pytest.raises(ConfigError):
        parse_run_config("orphan = 1\n")


def test_config_comments_and_blanks_ok():
    config = parse_run_config("# comment\n\n[model]\n# another\nn_subspaces = 7\n")
    assert config.model.n_subspaces == 7


def test_preprocess_prints_and_writes(tmp_path, capsys):
    path, config = base_config(tmp_path)
    write_images(tmp_path / "images")
    assert main(["preprocess", "--config", str(path)]) == 0
    out = capsys.readouterr().out
    assert "whitened dimensionality D = " in out
    fraction = float(out.split("retained variance fraction = ")[1].split()[0])
    assert fraction >= 0.95
    assert (tmp_path / "out" / "patches.mpk").exists()
    assert (tmp_path / "out" / "whitening.mpk").exists()


def test_preprocess_empty_dir_exit_2(tmp_path):
    path, _ = base_config(tmp_path)
    (tmp_path / "images").mkdir()
    assert main(["preprocess", "--config", str(path)]) == 2


def test_preprocess_deterministic_checksums(tmp_path):
    path, _ = base_config(tmp_path)
    write_images(tmp_path / "images")
    assert main(["preprocess", "--config", str(path)]) == 0
    first = checksum(tmp_path / "out" / "patches.mpk")
    assert main(["preprocess", "--config", str(path)]) == 0
    assert checksum(tmp_path / "out" / "patches.mpk") == first
    assert main(["preprocess", "--config", str(path), "--seed", "123"]) == 0
    assert checksum(tmp_path / "out" / "patches.mpk") != first


def test_synth_writes_dataset_and_is_deterministic(tmp_path):
    path, _ = base_config(tmp_path)
    assert main(["synth", "--config", str(path)]) == 0
    out = tmp_path / "out" / "synthetic.mpk"
    first = checksum(out)
    assert main(["synth", "--config", str(path)]) == 0
    assert checksum(out) == first

    from mpkrbm.container import read_container
    data = read_container(out)
    assert data["patches"].shape == (300, 36)
    assert data["ground_truth.pairs"].shape == (1, 2)


def test_train_then_resume_and_export(tmp_path, capsys):
    cfg_path, config = base_config(tmp_path)
    write_images(tmp_path / "images")
    assert main(["preprocess", "--config", str(cfg_path)]) == 0

    assert main(["train", "--config", str(cfg_path)]) == 0
    out = capsys.readouterr().out
    assert "stage 0" in out and "stage 4" in out
    ck = tmp_path / "out" / "checkpoint.mpk"
    assert ck.exists()
    full_digest = checksum(ck)

    metrics = (tmp_path / "out" / "metrics.csv").read_text().splitlines()
    assert len(metrics) == 16     # header + 15 iterations
    stages = [int(line.split(",")[1]) for line in metrics[1:]]
    assert stages == [0] * 3 + [1] * 3 + [2] * 3 + [3] * 3 + [4] * 3

    # interrupted run + resume reproduces the uninterrupted checkpoint
    half_dir = tmp_path / "half"
    assert main(["train", "--config", str(cfg_path), "--iterations", "5",
                 "--out", str(half_dir)]) == 0
    assert main(["train", "--config", str(cfg_path),
                 "--resume", str(half_dir / "checkpoint.mpk"),
                 "--out", str(half_dir)]) == 0
    assert checksum(half_dir / "checkpoint.mpk") == full_digest

    assert main(["export", "--config", str(cfg_path), "--what", "amplitude"]) == 0
    exported = tmp_path / "out" / "filters_amplitude.ppm"
    assert exported.exists()
    img = pnm.read_pnm(exported)
    assert img.ndim == 3


def test_train_without_patches_exit_4(tmp_path):
    path, _ = base_config(tmp_path)
    assert main(["train", "--config", str(path)]) == 4


def test_train_shape_mismatch_exit_3(tmp_path):
    cfg_path, config = base_config(tmp_path)
    write_images(tmp_path / "images")
    assert main(["preprocess", "--config", str(cfg_path)]) == 0
    config.model.n_visible = 9999
    save_run_config(config, cfg_path)
    assert main(["train", "--config", str(cfg_path)]) == 3


def test_export_missing_whitening_exit_4(tmp_path):
    cfg_path, config = base_config(tmp_path)
    assert main(["synth", "--config", str(cfg_path)]) == 0
    # fabricate a checkpoint but no whitening file
    from mpkrbm.params import init_params, save_checkpoint
    params = init_params(config.model.shape_for(36), seed=0)
    ck = tmp_path / "out" / "checkpoint.mpk"
    save_checkpoint(params, {}, ck)
    assert main(["export", "--config", str(cfg_path)]) == 4


def test_check_json(tmp_path, capsys):
    import json

    assert main(["check", "--json"]) == 0
    report = json.loads(capsys.readouterr().out)
    assert report["passed"] is True
    assert set(report["checks"]) == {"gradients", "free_energy_enumeration", "hmc_gaussian"}


def test_check_detects_injected_bug(monkeypatch, capsys):
    import mpkrbm.grad as grad_module

    original = grad_module.grad_free_energy_v

    def broken(v, params, with_phase=True):
        return original(v, params, with_phase=with_phase) * 1.001

    monkeypatch.setattr(grad_module, "grad_free_energy_v", broken)
    assert main(["check"]) == 1
    assert "FAIL" in capsys.readouterr().out


def test_sample_command(tmp_path, capsys):
    from mpkrbm.params import init_params, save_checkpoint

    params = init_params(
        __import__("mpkrbm.params", fromlist=["ModelShape"]).ModelShape(6, 2, 2, 2, 2, 2, 2),
        seed=0)
    ck = tmp_path / "ck.mpk"
    save_checkpoint(params, {"step_size": 0.05}, ck)
    assert main(["sample", "--resume", str(ck), "--iterations", "10",
                 "--out", str(tmp_path)]) == 0
    out = capsys.readouterr().out
    assert out.startswith("step_size,rejection_rate,mean_delta_h")
    assert (tmp_path / "samples.mpk").exists()
    assert main(["sample", "--resume", str(tmp_path / "missing.mpk")]) == 4
