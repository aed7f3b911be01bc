import numpy as np
import pytest

from blenda import autodiff as ad
from blenda.autodiff import Tensor


def finite_difference(f, x, h=1e-5):
    """Central-difference gradient oracle for scalar-valued f."""
    grad = np.zeros_like(x)
    flat = grad.ravel()
    xf = x.ravel()
    for i in range(x.size):
        orig = xf[i]
        xf[i] = orig + h
        hi = f(x)
        xf[i] = orig - h
        lo = f(x)
        xf[i] = orig
        flat[i] = (hi - lo) / (2.0 * h)
    return grad


def check_grad(build, x, rtol=1e-5):
    """Compare tape gradient of scalar build(Tensor) against the oracle."""
    leaf = Tensor(x.copy())
    out = build(leaf)
    assert out.value.ndim == 0
    out.backward()

    def f(arr):
        return build(Tensor(arr)).item()

    expected = finite_difference(f, x.copy())
    scale = np.maximum(np.abs(expected), 1.0)
    assert np.all(np.abs(leaf.grad - expected) / scale < rtol)


class TestCoreOps:
    def test_sigmoid_at_zero(self):
        x = Tensor(np.zeros(1))
        out = ad.mean(ad.sigmoid(x))
        assert out.item() == 0.5
        out.backward()
        assert x.grad == pytest.approx([0.25])

    def test_mean_gradient(self):
        x = Tensor(np.array([1.0, 2.0, 3.0]))
        out = ad.mean(x)
        assert out.item() == 2.0
        out.backward()
        assert x.grad == pytest.approx([1 / 3, 1 / 3, 1 / 3])

    def test_log_rejects_nonpositive(self):
        with pytest.raises(ValueError):
            ad.log(Tensor(np.array([1.0, 0.0])))

    @pytest.mark.parametrize(
        "build",
        [
            lambda x: ad.mean(ad.relu(x)),
            lambda x: ad.mean(ad.sigmoid(x)),
            lambda x: ad.mean(ad.exp(x)),
            lambda x: ad.mean(ad.mul(x, x)),
            lambda x: ad.mean(ad.sub(x, ad.mul(2.0, x))),
            lambda x: ad.mean(ad.div(x, ad.add(ad.mul(x, x), 1.0))),
            lambda x: ad.sum_(ad.mul(x, 0.5)),
            lambda x: ad.mean(ad.log(ad.add(ad.mul(x, x), 0.1))),
            lambda x: ad.mean(ad.clip(x, -0.5, 0.5)),
            lambda x: ad.mean(ad.transpose(x)),
        ],
    )
    def test_elementwise_ops_finite_difference(self, build):
        rng = np.random.default_rng(0)
        x = rng.normal(size=(4, 5))
        check_grad(build, x)

    def test_matmul_finite_difference(self):
        rng = np.random.default_rng(1)
        w = rng.normal(size=(5, 3))

        def build(x):
            return ad.mean(ad.matmul(x, w))

        check_grad(build, rng.normal(size=(4, 5)))

    def test_matmul_shape_errors(self):
        a = Tensor(np.zeros((2, 3)))
        b = Tensor(np.zeros((4, 2)))
        with pytest.raises(ValueError):
            ad.matmul(a, b)

    def test_broadcast_add_bias(self):
        rng = np.random.default_rng(2)
        b = Tensor(rng.normal(size=(1, 4)))
        x = Tensor(rng.normal(size=(3, 4)))
        out = ad.sum_(ad.add(x, b))
        out.backward()
        assert b.grad == pytest.approx(np.full((1, 4), 3.0))

    def test_axis_reductions(self):
        x = Tensor(np.arange(6.0).reshape(2, 3))
        out = ad.sum_(ad.mean(x, axis=1, keepdims=True))
        out.backward()
        assert x.grad == pytest.approx(np.full((2, 3), 1 / 3))


class TestComposedNets:
    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_random_three_layer_net(self, seed):
        rng = np.random.default_rng(seed)
        sizes = [6, 8, 5, 1]
        weights = [rng.normal(size=(a, b)) for a, b in zip(sizes, sizes[1:])]
        x = rng.normal(size=(3, sizes[0]))

        def build(w0):
            h = ad.relu(ad.matmul(Tensor(x), w0))
            h = ad.sigmoid(ad.matmul(h, weights[1]))
            return ad.mean(ad.matmul(h, weights[2]))

        check_grad(build, weights[0])


class TestGrl:
    def test_forward_identity_bitwise(self):
        rng = np.random.default_rng(3)
        for shape in [(3,), (2, 4), (1, 1)]:
            x = Tensor(rng.normal(size=shape))
            assert np.array_equal(ad.grl(x).value, x.value)

    def test_backward_negation(self):
        x = Tensor(np.ones((2, 3)))
        ad.sum_(ad.grl(x)).backward()
        assert x.grad == pytest.approx(np.full((2, 3), -1.0))

    def test_scale(self):
        x = Tensor(np.ones(4))
        ad.sum_(ad.grl(x, scale=2.5)).backward()
        assert x.grad == pytest.approx(np.full(4, -2.5))

    def test_loss_through_grl_negates_gradient(self):
        rng = np.random.default_rng(4)
        w = rng.normal(size=(5, 2))

        def loss(x, reversed_):
            h = ad.matmul(x, Tensor(w))
            h = ad.grl(h) if reversed_ else h
            return ad.mean(ad.sigmoid(h))

        x1 = Tensor(rng.normal(size=(3, 5)))
        x2 = Tensor(x1.value.copy())
        loss(x1, False).backward()
        loss(x2, True).backward()
        assert x2.grad == pytest.approx(-x1.grad, abs=1e-12)

    def test_invalid_scale(self):
        with pytest.raises(ValueError):
            ad.grl(Tensor(np.ones(2)), scale=0.0)


class TestTapeSemantics:
    def test_disconnected_tensor_grad_stays_zero(self):
        x = Tensor(np.ones(3))
        unrelated = Tensor(np.ones(3))
        ad.sum_(ad.mul(x, 2.0)).backward()
        assert np.array_equal(unrelated.grad, np.zeros(3))

    def test_repeated_backward_with_zeroing_is_identical(self):
        rng = np.random.default_rng(5)
        x = Tensor(rng.normal(size=(3, 3)))
        out = ad.mean(ad.sigmoid(ad.mul(x, x)))
        out.backward()
        first = x.grad.copy()
        x.zero_grad()
        for t in _all_tensors(out):
            t.zero_grad()
        out.backward()
        assert np.array_equal(x.grad, first)

    def test_gradients_finite_after_backward(self):
        rng = np.random.default_rng(6)
        x = Tensor(rng.normal(size=(4, 4)))
        ad.mean(ad.exp(ad.clip(x, -5, 5))).backward()
        assert np.all(np.isfinite(x.grad))

    def test_shared_subexpression_accumulates(self):
        x = Tensor(np.array(2.0))
        y = ad.mul(x, x)  # x appears twice
        y.backward()
        assert x.grad == pytest.approx(4.0)


def _all_tensors(root):
    seen, stack, out = set(), [root], []
    while stack:
        t = stack.pop()
        if id(t) in seen:
            continue
        seen.add(id(t))
        out.append(t)
        stack.extend(t.parents)
    return out
