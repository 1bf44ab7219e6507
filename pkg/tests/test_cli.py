import numpy as np
import pytest

from ccvc.cli import _parse_rates, main
from ccvc.errors import CcvcError
from ccvc.metrics import ms_ssim
from ccvc.nets import Model, NetworkConfig, save_checkpoint
from ccvc.video import (Frame, FrameType, Sequence, downsample_444_to_420,
                        read_yuv420, write_yuv420)


@pytest.fixture(scope="module")
def checkpoint(tmp_path_factory):
    path = str(tmp_path_factory.mktemp("ckpt") / "m.ccvc")
    save_checkpoint(Model(NetworkConfig(f=4, depth=3), seed=7), path)
    return path


@pytest.fixture(scope="module")
def yuv_file(tmp_path_factory):
    rng = np.random.default_rng(21)
    base = rng.uniform(0.3, 0.7, size=(3, 16, 16))
    frames = [downsample_444_to_420(Frame.from_array(
        np.clip(base + 0.01 * i, 0, 1), FrameType.I, i)) for i in range(3)]
    path = str(tmp_path_factory.mktemp("data") / "clip_16x16.yuv")
    write_yuv420(Sequence(frames, 30.0), path)
    return path


class TestParseRates:
    def test_comma_list(self):
        assert _parse_rates("1,2.5,4") == [1.0, 2.5, 4.0]

    def test_range(self):
        assert _parse_rates("1:2:0.5") == [1.0, 1.5, 2.0]

    def test_bad_range(self):
        with pytest.raises(CcvcError):
            _parse_rates("1:2")

    def test_zero_step(self):
        with pytest.raises(CcvcError):
            _parse_rates("1:2:0")


class TestEncodeDecode:
    def test_round_trip(self, checkpoint, yuv_file, tmp_path, capsys):
        stream = str(tmp_path / "out.ccv")
        code = main(["encode", "--input", yuv_file, "--width", "16",
                     "--height", "16", "--checkpoint", checkpoint,
                     "--rate", "2.0", "--gop", "2", "--output", stream])
        assert code == 0
        assert "Mbit/s" in capsys.readouterr().out
        recon = str(tmp_path / "rec.yuv")
        assert main(["decode", "--input", stream, "--checkpoint", checkpoint,
                     "--output", recon]) == 0
        out = read_yuv420(recon, 16, 16)
        assert len(out) == 3

    def test_wrong_checkpoint_rejected(self, yuv_file, checkpoint, tmp_path, capsys):
        stream = str(tmp_path / "out.ccv")
        main(["encode", "--input", yuv_file, "--width", "16", "--height", "16",
              "--checkpoint", checkpoint, "--rate", "2.0", "--output", stream])
        other = str(tmp_path / "other.ccvc")
        save_checkpoint(Model(NetworkConfig(f=4, depth=3), seed=8), other)
        code = main(["decode", "--input", stream, "--checkpoint", other,
                     "--output", str(tmp_path / "rec.yuv")])
        assert code == 1
        assert "model mismatch" in capsys.readouterr().err


class TestMetricsCommand:
    def test_identical_files(self, yuv_file, capsys):
        assert main(["metrics", "--reference", yuv_file, "--test", yuv_file,
                     "--width", "16", "--height", "16"]) == 0
        out = capsys.readouterr().out
        assert "ms-ssim 1.000000" in out
        assert "mean" in out


class TestTrainCommand:
    def test_toml_config_run(self, tmp_path, capsys):
        cfg = tmp_path / "train.toml"
        cfg.write_text(
            "steps = 2\ncrop_size = 16\nf = 4\n"
            f'out_dir = "{tmp_path / "run"}"\n')
        assert main(["train", "--config", str(cfg)]) == 0
        assert (tmp_path / "run" / "model.ccvc").exists()
        assert (tmp_path / "run" / "train_log.csv").exists()

    def test_unknown_key_rejected(self, tmp_path, capsys):
        cfg = tmp_path / "train.toml"
        cfg.write_text("bogus_field = 3\n")
        assert main(["train", "--config", str(cfg)]) == 1
        assert "bogus_field" in capsys.readouterr().err


class TestEvalCommand:
    def test_report_written(self, checkpoint, yuv_file, tmp_path, capsys):
        import os
        out_dir = str(tmp_path / "report")
        assert main(["eval", "--input", os.path.dirname(yuv_file),
                     "--checkpoint", checkpoint, "--rates", "2,4",
                     "--gops", "2", "--out", out_dir]) == 0
        assert (tmp_path / "report" / "rd_curves.csv").exists()
        assert (tmp_path / "report" / "gain_vectors.csv").exists()
        assert "best gop" in capsys.readouterr().out
