import numpy as np
import pytest

from ccvc.errors import ShapeError
from ccvc.tensor import Tensor, avg_pool2, bilinear_warp, concat, conv2d, conv2d_transpose

from conftest import numerical_grad, rel_err


def check_grad(build_loss, params, tol=1e-4, h=1e-5, rng=None, max_entries=None):
    """Compare backward() grads against central finite differences."""
    loss = build_loss()
    loss.backward()
    for p in params:
        indices = None
        if max_entries is not None and p.data.size > max_entries:
            r = rng or np.random.default_rng(0)
            flat = r.choice(p.data.size, size=max_entries, replace=False)
            indices = [np.unravel_index(i, p.data.shape) for i in flat]
        fd = numerical_grad(lambda: build_loss().item(), p.data, h=h, indices=indices)
        got = p.grad if indices is None else np.where(fd != fd, fd, p.grad)
        if indices is not None:
            sel = np.zeros(p.data.shape, dtype=bool)
            for idx in indices:
                sel[idx] = True
            assert rel_err(p.grad[sel], fd[sel]) < tol
        else:
            assert rel_err(got, fd) < tol


class TestConv2d:
    def test_identity_kernel(self):
        x = Tensor(np.arange(9.0).reshape(1, 3, 3))
        k = Tensor(np.ones((1, 1, 1, 1)))
        out = conv2d(x, k, stride=1, padding=0)
        np.testing.assert_array_equal(out.data, x.data)

    def test_corner_receptive_field(self):
        # hand-unrolled sliding window: 3x3 ones kernel over 4x4 ones,
        # stride 2 pad 1 -> top-left output sees a 2x2 corner = 4
        x = Tensor(np.ones((1, 4, 4)))
        k = Tensor(np.ones((1, 1, 3, 3)))
        out = conv2d(x, k, stride=2, padding=1)
        assert out.data.shape == (1, 2, 2)
        assert out.data[0, 0, 0] == 4.0

    def test_output_shape_contract(self, rng):
        x = Tensor(rng.normal(size=(3, 9, 7)))
        k = Tensor(rng.normal(size=(5, 3, 5, 5)))
        out = conv2d(x, k, stride=2, padding=2)
        assert out.data.shape == (5, (9 + 4 - 5) // 2 + 1, (7 + 4 - 5) // 2 + 1)

    def test_channel_mismatch_raises(self, rng):
        with pytest.raises(ShapeError, match="channels"):
            conv2d(Tensor(np.zeros((2, 4, 4))), Tensor(np.zeros((1, 3, 3, 3))))

    def test_kernel_gradient_matches_fd(self, rng):
        x = Tensor(rng.normal(size=(1, 5, 5)))
        k = Tensor(rng.normal(size=(2, 1, 3, 3)), requires_grad=True)
        check_grad(lambda: conv2d(x, k, stride=1, padding=1).sum(), [k], tol=1e-6)

    @pytest.mark.parametrize("stride", [1, 2])
    def test_input_gradient_matches_fd(self, rng, stride):
        x = Tensor(rng.normal(size=(2, 6, 6)), requires_grad=True)
        k = Tensor(rng.normal(size=(3, 2, 3, 3)), requires_grad=True)
        check_grad(lambda: (conv2d(x, k, stride=stride, padding=1) ** 2.0).sum(), [x, k])


class TestConvTranspose:
    def test_identity(self):
        x = Tensor(np.arange(12.0).reshape(1, 3, 4))
        k = Tensor(np.ones((1, 1, 1, 1)))
        np.testing.assert_array_equal(conv2d_transpose(x, k, stride=1).data, x.data)

    def test_stride2_shape(self, rng):
        x = Tensor(rng.normal(size=(1, 4, 4)))
        k = Tensor(rng.normal(size=(1, 2, 5, 5)))
        assert conv2d_transpose(x, k, stride=2).data.shape == (2, 8, 8)

    @pytest.mark.parametrize("stride", [1, 2])
    def test_adjoint_dot_product(self, rng, stride):
        # <conv(x), y> == <x, convT(y)> with the same kernel
        k = Tensor(rng.normal(size=(3, 2, 5, 5)))
        x = Tensor(rng.normal(size=(2, 8, 8)))
        hy = 8 // stride
        y = Tensor(rng.normal(size=(3, hy, hy)))
        lhs = float((conv2d(x, k, stride=stride, padding=2).data * y.data).sum())
        rhs = float((x.data * conv2d_transpose(y, k, stride=stride).data).sum())
        assert abs(lhs - rhs) < 1e-9 * max(1.0, abs(lhs))

    def test_gradients_match_fd(self, rng):
        x = Tensor(rng.normal(size=(2, 4, 4)), requires_grad=True)
        k = Tensor(rng.normal(size=(2, 3, 5, 5)), requires_grad=True)
        check_grad(lambda: (conv2d_transpose(x, k, stride=2) ** 2.0).sum(), [x, k])


class TestBilinearWarp:
    def test_zero_flow_identity(self, rng):
        im = Tensor(rng.uniform(size=(3, 6, 7)))
        out = bilinear_warp(im, Tensor(np.zeros((2, 6, 7))))
        np.testing.assert_array_equal(out.data, im.data)

    def test_integer_shift_oracle(self, rng):
        im = Tensor(rng.uniform(size=(2, 8, 8)))
        flow = np.zeros((2, 8, 8))
        flow[0] = 1.0  # +1 horizontal
        out = bilinear_warp(im, Tensor(flow))
        np.testing.assert_allclose(out.data[:, :, :-1], im.data[:, :, 1:], rtol=0, atol=0)

    def test_any_integer_flow_is_exact_gather(self, rng):
        im = rng.uniform(size=(1, 6, 6))
        fx = rng.integers(-5, 6, size=(6, 6)).astype(float)
        fy = rng.integers(-5, 6, size=(6, 6)).astype(float)
        out = bilinear_warp(Tensor(im), Tensor(np.stack([fx, fy]))).data
        jj, ii = np.meshgrid(np.arange(6), np.arange(6))
        xs = np.clip(jj + fx, 0, 5).astype(int)
        ys = np.clip(ii + fy, 0, 5).astype(int)
        np.testing.assert_array_equal(out[0], im[0][ys, xs])

    def test_flow_shape_error(self):
        with pytest.raises(ShapeError, match="flow"):
            bilinear_warp(Tensor(np.zeros((1, 4, 4))), Tensor(np.zeros((3, 4, 4))))

    def test_flow_gradient_matches_fd(self, rng):
        im = Tensor(rng.uniform(size=(2, 7, 7)))
        flow = Tensor(rng.uniform(-1.3, 1.3, size=(2, 7, 7)), requires_grad=True)
        check_grad(lambda: (bilinear_warp(im, flow) ** 2.0).sum(), [flow], tol=1e-5)

    def test_image_gradient_matches_fd(self, rng):
        im = Tensor(rng.uniform(size=(1, 6, 6)), requires_grad=True)
        flow = Tensor(rng.uniform(-0.8, 0.8, size=(2, 6, 6)))
        check_grad(lambda: (bilinear_warp(im, flow) ** 2.0).sum(), [im])


class TestPointwise:
    def test_sigmoid_at_zero(self):
        assert Tensor(0.0).sigmoid().item() == 0.5

    def test_concat_shape(self, rng):
        a = Tensor(rng.normal(size=(2, 4, 4)))
        b = Tensor(rng.normal(size=(3, 4, 4)))
        assert concat([a, b]).data.shape == (5, 4, 4)

    def test_concat_mismatch(self):
        with pytest.raises(ShapeError):
            concat([Tensor(np.zeros((1, 4, 4))), Tensor(np.zeros((1, 3, 4)))])

    def test_square_derivative(self):
        x = Tensor(3.0, requires_grad=True)
        (x * x).backward()
        assert x.grad == 6.0

    def test_backward_on_nonscalar_raises(self, rng):
        x = Tensor(rng.normal(size=(2, 2)), requires_grad=True)
        with pytest.raises(ShapeError, match="scalar"):
            (x * 2.0).backward()

    def test_sum_grad_is_ones(self, rng):
        x = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
        x.sum().backward()
        np.testing.assert_array_equal(x.grad, np.ones((3, 4)))

    def test_bilinear_form_grad(self, rng):
        x = Tensor(rng.normal(size=(2, 3)), requires_grad=True)
        y = Tensor(rng.normal(size=(2, 3)))
        (x * y).sum().backward()
        np.testing.assert_array_equal(x.grad, y.data)

    def test_grad_accumulates_across_backward(self):
        x = Tensor(2.0, requires_grad=True)
        (x * x).backward()
        (x * x).backward()
        assert x.grad == 8.0

    @pytest.mark.parametrize("fn,arg", [
        (lambda t: t.sigmoid(), 0.3), (lambda t: t.tanh(), -0.7),
        (lambda t: t.exp(), 0.4), (lambda t: t.log(), 1.7),
        (lambda t: t.softplus(), -0.2), (lambda t: t.erf(), 0.9),
        (lambda t: t.leaky_relu(0.01), -0.5), (lambda t: t ** 3.0, 1.1),
        (lambda t: t.sqrt(), 2.3), (lambda t: t.clamp_min(0.1), 0.5),
    ])
    def test_unary_grads_match_fd(self, fn, arg, rng):
        x = Tensor(np.full((3, 3), arg) + rng.normal(size=(3, 3)) * 0.01, requires_grad=True)
        check_grad(lambda: fn(x).sum(), [x])

    def test_broadcast_channel_gain_grad(self, rng):
        x = Tensor(rng.normal(size=(4, 5, 5)), requires_grad=True)
        g = Tensor(rng.uniform(0.5, 2.0, size=(4, 1, 1)), requires_grad=True)
        check_grad(lambda: ((x * g) ** 2.0).sum(), [x, g])

    def test_div_grad(self, rng):
        a = Tensor(rng.uniform(1.0, 2.0, size=(3, 3)), requires_grad=True)
        b = Tensor(rng.uniform(1.0, 2.0, size=(3, 3)), requires_grad=True)
        check_grad(lambda: (a / b).sum(), [a, b])

    def test_tile_and_group_sum_roundtrip(self, rng):
        x = Tensor(rng.normal(size=(2, 3, 3)), requires_grad=True)
        w = Tensor(rng.normal(size=(6, 1, 1)), requires_grad=True)
        check_grad(lambda: (x.tile_channels(3) * w).sum_channel_groups(1, 3).sum(), [x, w])

    def test_avg_pool_constant(self):
        x = Tensor(np.full((1, 4, 4), 0.7))
        np.testing.assert_allclose(avg_pool2(x).data, np.full((1, 2, 2), 0.7))

    def test_avg_pool_grad(self, rng):
        x = Tensor(rng.normal(size=(2, 6, 6)), requires_grad=True)
        check_grad(lambda: (avg_pool2(x) ** 2.0).sum(), [x])

    def test_narrow_grad(self, rng):
        x = Tensor(rng.normal(size=(5, 3, 3)), requires_grad=True)
        check_grad(lambda: (x.narrow(1, 4) ** 2.0).sum(), [x])


class TestAdam:
    def test_first_step_moves_by_lr(self):
        from ccvc.optim import Adam
        p = Tensor(1.0, requires_grad=True)
        opt = Adam({"p": p}, lr=0.1)
        p.grad = np.array(1.0)
        opt.step()
        # bias-corrected first step: delta = lr * g / (|g| + eps) ~ lr
        assert p.item() == pytest.approx(1.0 - 0.1, rel=1e-6)
        assert opt.step_count == 1

    def test_zero_grad_keeps_param(self):
        from ccvc.optim import Adam
        p = Tensor(2.5, requires_grad=True)
        opt = Adam({"p": p}, lr=0.1)
        p.grad = np.array(0.0)
        opt.step()
        assert p.item() == 2.5
        assert opt.step_count == 1

    def test_converges_on_quadratic(self):
        from ccvc.optim import Adam
        w = Tensor(0.0, requires_grad=True)
        opt = Adam({"w": w}, lr=0.1)
        for _ in range(200):
            opt.zero_grad()
            loss = (w - 3.0) ** 2.0
            loss.backward()
            opt.step()
        assert abs(w.item() - 3.0) < 1e-2

    def test_missing_grad_names_parameter(self):
        from ccvc.errors import CcvcError
        from ccvc.optim import Adam
        p = Tensor(1.0, requires_grad=True)
        opt = Adam({"theta": p}, lr=0.1)
        with pytest.raises(CcvcError, match="theta"):
            opt.step()
