import numpy as np
import pytest

from ccvc.errors import CheckpointError, ShapeError
from ccvc.metrics import distortion
from ccvc.nets import (Model, ModelTables, NetworkConfig, code_frame_train,
                       combine_modes, load_checkpoint, save_checkpoint,
                       split_motion_head, temporal_prediction)
from ccvc.tensor import Tensor
from ccvc.video import FrameType

from conftest import numerical_grad, rel_err


@pytest.fixture(scope="module")
def model():
    return Model(NetworkConfig(f=4, depth=3), seed=3)


@pytest.fixture(scope="module")
def hyper_model():
    return Model(NetworkConfig(f=4, depth=3, use_hyperprior=True), seed=3)


class TestShortcut:
    def test_zero_conditioning_deterministic(self, model):
        cond = np.zeros((3, 16, 16))
        a = model.codecnet.shortcut(Tensor(cond)).data
        b = model.codecnet.shortcut(Tensor(cond)).data
        np.testing.assert_array_equal(a, b)
        assert a.shape == (model.cfg.latent_channels, 2, 2)

    def test_spatial_reduction(self, model, rng):
        cond = rng.uniform(size=(3, 32, 32))
        out = model.codecnet.shortcut(Tensor(cond)).data
        assert out.shape[1:] == (4, 4)

    def test_shortcut_latents_carry_no_rate(self, model, rng):
        # rate comes only from coded latents: identical target with very
        # different conditioning yields chunks covering exactly C_y symbols
        tables = ModelTables()
        x = rng.uniform(size=(3, 16, 16))
        for cond in (np.zeros((3, 16, 16)), rng.uniform(size=(3, 16, 16))):
            _, chunks, _ = model.codecnet.code_test(x, cond, model, FrameType.I, 3.0, tables)
            assert sum(c.symbol_count for c in chunks) == model.cfg.latent_channels * 4


class TestConditionalCode:
    def test_decoder_replay_bit_exact(self, model, rng):
        tables = ModelTables()
        x = rng.uniform(size=(3, 16, 16))
        cond = rng.uniform(size=(3, 16, 16))
        out, chunks, bits = model.codecnet.code_test(x, cond, model, FrameType.P, 2.5, tables)
        replay = model.codecnet.decode(chunks, cond, model, FrameType.P, 2.5, tables)
        np.testing.assert_array_equal(out, replay)
        assert bits == sum(c.bits for c in chunks)

    def test_hyper_decoder_replay_bit_exact(self, hyper_model, rng):
        tables = ModelTables()
        x = rng.uniform(size=(3, 32, 32))
        cond = rng.uniform(size=(3, 32, 32))
        out, chunks, _ = hyper_model.codecnet.code_test(x, cond, hyper_model,
                                                        FrameType.P, 2.0, tables)
        assert len(chunks) == 2  # hyper latents + main latents
        replay = hyper_model.codecnet.decode(chunks, cond, hyper_model,
                                             FrameType.P, 2.0, tables)
        np.testing.assert_array_equal(out, replay)

    def test_rate_positive_when_symbols_nonzero(self, model, rng):
        tables = ModelTables()
        x = rng.uniform(size=(3, 16, 16)) * 4
        _, chunks, bits = model.codecnet.code_test(x, np.zeros((3, 16, 16)),
                                                   model, FrameType.I, 1.0, tables)
        assert bits > 0

    def test_shape_mismatch(self, model, rng):
        with pytest.raises(ShapeError):
            model.codecnet.code_train(Tensor(np.zeros((3, 16, 16))),
                                      Tensor(np.zeros((3, 8, 8))),
                                      model, FrameType.I, 1, rng)


class TestMotionSideInfo:
    def test_head_shapes_and_ranges(self, model, rng):
        raw = rng.normal(size=(6, 16, 16)) * 3
        side = split_motion_head(raw, 16.0)
        assert side.v_p.shape == (2, 16, 16) and side.v_f.shape == (2, 16, 16)
        assert side.beta.shape == (1, 16, 16) and side.alpha.shape == (1, 16, 16)
        for m in (side.beta, side.alpha):
            assert (m.data >= 0).all() and (m.data <= 1).all()
        assert (np.abs(side.v_p.data) <= 16.0).all()


class TestTemporalPrediction:
    def test_beta_one_selects_past(self, rng):
        rp = Tensor(rng.uniform(size=(3, 8, 8)))
        rf = Tensor(rng.uniform(size=(3, 8, 8)))
        zero = Tensor(np.zeros((2, 8, 8)))
        pred = temporal_prediction(rp, rf, zero, zero, Tensor(np.ones((1, 8, 8))))
        np.testing.assert_array_equal(pred.data, rp.data)

    def test_equal_refs_zero_flow(self, rng):
        x = Tensor(rng.uniform(size=(3, 8, 8)))
        zero = Tensor(np.zeros((2, 8, 8)))
        pred = temporal_prediction(x, x, zero, zero, Tensor(np.full((1, 8, 8), 0.5)))
        np.testing.assert_allclose(pred.data, x.data, atol=1e-15)

    def test_constant_blend(self):
        rp = Tensor(np.zeros((3, 4, 4)))
        rf = Tensor(np.ones((3, 4, 4)))
        zero = Tensor(np.zeros((2, 4, 4)))
        pred = temporal_prediction(rp, rf, zero, zero, Tensor(np.full((1, 4, 4), 0.25)))
        np.testing.assert_allclose(pred.data, 0.75)


class TestCombineModes:
    def test_pure_skip(self, rng):
        pred = Tensor(rng.uniform(size=(3, 4, 4)))
        out = combine_modes(Tensor(np.zeros((1, 4, 4))), pred, Tensor(np.zeros((3, 4, 4))))
        np.testing.assert_array_equal(out.data, pred.data)

    def test_pure_codec(self, rng):
        c = Tensor(rng.uniform(size=(3, 4, 4)))
        out = combine_modes(Tensor(np.ones((1, 4, 4))), Tensor(rng.uniform(size=(3, 4, 4))), c)
        np.testing.assert_array_equal(out.data, c.data)

    def test_half_mix(self):
        out = combine_modes(Tensor(np.full((1, 2, 2), 0.5)),
                            Tensor(np.full((3, 2, 2), 0.4)),
                            Tensor(np.full((3, 2, 2), 0.3)))
        np.testing.assert_allclose(out.data, 0.5)


class TestTrainPath:
    def test_rate_accounting_identity(self, model, rng):
        x = Tensor(rng.uniform(size=(3, 16, 16)))
        ref = Tensor(rng.uniform(size=(3, 16, 16)))
        recon, total, mof, codec = code_frame_train(model, x, ref, None,
                                                    FrameType.P, 2, rng)
        assert total.item() == mof.item() + codec.item()
        assert recon.shape == (3, 16, 16)

    def test_intra_has_no_mofnet_rate(self, model, rng):
        x = Tensor(rng.uniform(size=(3, 16, 16)))
        _, total, mof, codec = code_frame_train(model, x, None, None,
                                                FrameType.I, 1, rng)
        assert mof.item() == 0.0
        assert total.item() == codec.item()

    def test_missing_reference_raises(self, model, rng):
        with pytest.raises(ShapeError, match="reference"):
            code_frame_train(model, Tensor(np.zeros((3, 16, 16))), None, None,
                             FrameType.B, 1, rng)

    def test_full_graph_gradients_match_fd(self):
        # end-to-end: I + P + B toy graph, finite differences on a random
        # subsample of parameters
        model = Model(NetworkConfig(f=4, depth=3), seed=11)
        params = model.parameters()
        frames = np.random.default_rng(5).uniform(0.2, 0.8, size=(3, 3, 16, 16))
        lam = 0.7

        def loss_value():
            rng = np.random.default_rng(77)
            xs = [Tensor(f) for f in frames]
            # ste=False keeps the graph smooth for finite differences
            r0, rate0, _, _ = code_frame_train(model, xs[0], None, None,
                                               FrameType.I, 3, rng, ste=False)
            r2, rate2, _, _ = code_frame_train(model, xs[2], r0, None,
                                               FrameType.P, 3, rng, ste=False)
            r1, rate1, _, _ = code_frame_train(model, xs[1], r0, r2,
                                               FrameType.B, 3, rng, ste=False)
            total = None
            for rec, x, rate in ((r0, xs[0], rate0), (r2, xs[2], rate2), (r1, xs[1], rate1)):
                term = distortion(rec, x) + (lam / 768.0) * rate
                total = term if total is None else total + term
            return total

        loss = loss_value()
        loss.backward()
        picker = np.random.default_rng(13)
        # only the sampled rate index's gain vectors join the graph
        touched = sorted(n for n, p in params.items() if p.grad is not None)
        assert any(n.startswith("gains/") and n.endswith("/3/enc") for n in touched)
        names = picker.choice(touched, size=12, replace=False)
        for name in names:
            p = params[name]
            flat = picker.choice(p.data.size, size=min(2, p.data.size), replace=False)
            indices = [np.unravel_index(i, p.data.shape) for i in flat]
            fd = numerical_grad(lambda: loss_value().item(), p.data, indices=indices)
            for idx in indices:
                err = abs(p.grad[idx] - fd[idx]) / max(abs(p.grad[idx]), abs(fd[idx]), 1e-4)
                assert err < 1e-4, (name, idx, p.grad[idx], fd[idx])


class TestCheckpoint:
    def test_roundtrip(self, model, tmp_path):
        path = str(tmp_path / "m.ccvc")
        save_checkpoint(model, path)
        loaded = load_checkpoint(path)
        assert loaded.model_id() == model.model_id()
        for name, p in model.parameters().items():
            np.testing.assert_array_equal(loaded.parameters()[name].data, p.data)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.ccvc"
        path.write_bytes(b"NOPE" + bytes(64))
        with pytest.raises(CheckpointError, match="magic"):
            load_checkpoint(str(path))

    def test_truncated(self, model, tmp_path):
        path = str(tmp_path / "m.ccvc")
        save_checkpoint(model, path)
        data = open(path, "rb").read()
        open(path, "wb").write(data[:len(data) // 2])
        with pytest.raises(CheckpointError):
            load_checkpoint(path)
