import numpy as np
import pytest

from dib import autodiff as ad
from dib.autodiff import AutodiffError, Tape, Tensor
from dib.entropy import KernelConfig

RNG = np.random.default_rng(123)


def finite_diff(f, x, h=1e-5):
    grad = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        xp, xm = x.copy(), x.copy()
        xp[idx] += h
        xm[idx] -= h
        grad[idx] = (f(xp) - f(xm)) / (2 * h)
    return grad


def check_op_gradient(build, x0, rtol=1e-4, h=1e-5):
    """FD check of a scalar-valued graph built from one leaf tensor."""
    leaf = Tensor(x0, requires_grad=True)
    with Tape() as tape:
        out = build(leaf)
        loss = ad.reduce_sum(out) if out.data.ndim else out
    tape.backward(loss)

    def value(x):
        return float(np.sum(build(Tensor(x)).data))

    numeric = finite_diff(value, x0, h=h)
    analytic = leaf.grad
    mask = np.abs(analytic) > 1e-6
    if mask.any():
        rel = np.abs(analytic[mask] - numeric[mask]) / np.maximum(np.abs(numeric[mask]), 1e-6)
        assert rel.max() <= rtol, f"max rel err {rel.max():.2e}"


W_A = RNG.standard_normal((4, 3))
W_B = RNG.standard_normal((3, 5))
EPS = RNG.standard_normal((4, 3))
MASK = (RNG.random((4, 3)) > 0.5).astype(float)

PRIMITIVES = {
    "matmul": lambda x: ad.matmul(x, Tensor(W_B.copy())),
    "matmul_batched": lambda x: ad.matmul(ad.concat([ad.slice_(x, (None,)), ad.slice_(x, (None,))], axis=0), Tensor(W_B.copy())),
    "add": lambda x: ad.add(x, Tensor(W_A.copy())),
    "add_broadcast": lambda x: ad.add(x, Tensor(np.arange(3.0))),
    "sub": lambda x: ad.sub(Tensor(W_A.copy()), x),
    "mul": lambda x: ad.mul(x, Tensor(W_A.copy() + 2.0)),
    "mul_broadcast_scalar_param": lambda x: ad.mul(x, Tensor(np.array([1.7]))),
    "scalar_mul": lambda x: ad.scalar_mul(x, -2.5),
    "concat": lambda x: ad.concat([x, ad.scalar_mul(x, 2.0)], axis=1),
    "slice": lambda x: ad.slice_(x, (slice(1, 3), slice(0, 2))),
    "mean_pool": lambda x: ad.mean_pool(x, axis=1),
    "reduce_sum": lambda x: ad.reduce_sum(x),
    "reduce_mean": lambda x: ad.reduce_mean(x),
    "relu": lambda x: ad.relu(x),
    "sigmoid": lambda x: ad.sigmoid(x),
    "exp": lambda x: ad.exp(ad.scalar_mul(x, 0.3)),
    "log": lambda x: ad.log(ad.add(ad.mul(x, x), Tensor(np.ones_like(W_A)))),
    "abs": lambda x: ad.abs_(x),
    "clip": lambda x: ad.clip(x, -0.5, 0.5),
    "softmax": lambda x: ad.softmax(x, axis=-1, scale=0.7),
    "swapaxes_last": lambda x: ad.matmul(x, ad.swapaxes_last(x)),
    "expand_batch": lambda x: ad.expand_batch(x, 3),
    "gaussian_sample": lambda x: ad.gaussian_sample(x, ad.scalar_mul(x, 0.1), EPS),
    "dropout": lambda x: ad.dropout(x, 0.5, MASK),
}


@pytest.mark.parametrize("name", sorted(PRIMITIVES))
def test_primitive_gradients(name):
    rng = np.random.default_rng(abs(hash(name)) % 2**32)
    x0 = rng.standard_normal((4, 3)) * 0.9
    if name in ("relu", "abs", "clip"):
        # keep away from the kink so finite differences are clean
        x0 = np.where(np.abs(x0) < 0.05, 0.2, x0)
        if name == "clip":
            x0 = np.where(np.abs(np.abs(x0) - 0.5) < 0.05, 0.3, x0)
    check_op_gradient(PRIMITIVES[name], x0)


def test_softmax_single_element_axis():
    x = Tensor(np.array([[3.7]]), requires_grad=True)
    with Tape() as tape:
        y = ad.softmax(x, axis=-1)
    assert y.data[0, 0] == 1.0
    tape.backward(y)
    np.testing.assert_array_equal(x.grad, np.zeros((1, 1)))


def test_gaussian_sample_zero_eps_returns_mu():
    mu = Tensor(RNG.standard_normal((3, 2)))
    log_sigma = Tensor(RNG.standard_normal((3, 2)))
    out = ad.gaussian_sample(mu, log_sigma, np.zeros((3, 2)))
    np.testing.assert_array_equal(out.data, mu.data)


def test_relu_saturation_zero_gradient():
    x = Tensor(np.array([-1.0, -0.5, 2.0]), requires_grad=True)
    with Tape() as tape:
        loss = ad.reduce_sum(ad.relu(x))
    tape.backward(loss)
    np.testing.assert_array_equal(x.grad, [0.0, 0.0, 1.0])


def test_sigmoid_gradient_identity():
    x = Tensor(np.array([0.3, -1.2]), requires_grad=True)
    with Tape() as tape:
        y = ad.sigmoid(x)
        loss = ad.reduce_sum(y)
    tape.backward(loss)
    np.testing.assert_allclose(x.grad, y.data * (1 - y.data), rtol=1e-12)


def test_dropout_eval_mode_is_identity():
    x = Tensor(RNG.standard_normal((4, 4)))
    assert ad.dropout(x, 0.5, None) is x


def test_dropout_inverted_scaling():
    x = Tensor(np.ones((2, 2)))
    mask = np.array([[1.0, 0.0], [0.0, 1.0]])
    out = ad.dropout(x, 0.5, mask)
    np.testing.assert_array_equal(out.data, mask * 2.0)


def test_gradient_accumulation_fanout():
    # grad of f + g on a shared input equals grad f + grad g
    x0 = RNG.standard_normal((3, 3))
    x = Tensor(x0, requires_grad=True)
    with Tape() as tape:
        f = ad.reduce_sum(ad.mul(x, x))
        g = ad.reduce_sum(ad.relu(x))
        loss = ad.add(f, g)
    tape.backward(loss)
    combined = x.grad.copy()

    parts = []
    for build in (lambda t: ad.reduce_sum(ad.mul(t, t)), lambda t: ad.reduce_sum(ad.relu(t))):
        t = Tensor(x0, requires_grad=True)
        with Tape() as tape:
            loss = build(t)
        tape.backward(loss)
        parts.append(t.grad)
    np.testing.assert_allclose(combined, parts[0] + parts[1], atol=1e-12)


def test_determinism_bitwise():
    def run():
        rng = np.random.default_rng(55)
        x = Tensor(rng.standard_normal((5, 4)), requires_grad=True)
        w = Tensor(rng.standard_normal((4, 4)), requires_grad=True)
        with Tape() as tape:
            h = ad.relu(ad.matmul(x, w))
            s = ad.softmax(h, axis=-1, scale=0.5)
            loss = ad.reduce_mean(ad.mul(s, h))
        tape.backward(loss)
        return loss.data.copy(), x.grad.copy(), w.grad.copy()

    a, b = run(), run()
    for left, right in zip(a, b):
        np.testing.assert_array_equal(left, right)


def test_shape_mismatch_names_op():
    with pytest.raises(AutodiffError, match="matmul"):
        ad.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((4, 2))))
    with pytest.raises(AutodiffError, match="add"):
        ad.add(Tensor(np.ones((2, 3))), Tensor(np.ones((4, 5))))


def test_nan_forward_fails_at_producing_node():
    x = Tensor(np.array([-1.0]))
    with pytest.raises(AutodiffError, match="log"):
        ad.log(x)


def test_no_tape_means_no_recording():
    x = Tensor(np.ones((2, 2)), requires_grad=True)
    y = ad.relu(x)  # outside any tape: plain evaluation
    assert y.data.sum() == 4.0
    assert x.grad is None


def test_entropy_node_matches_entropy_module():
    from dib.entropy import entropy_value_and_grad

    rng = np.random.default_rng(77)
    x0 = rng.standard_normal((8, 3))
    cfg = KernelConfig(alpha=1.9, k_rank=5)
    x = Tensor(x0, requires_grad=True)
    with Tape() as tape:
        h = ad.entropy_node(x, cfg)
    tape.backward(h)
    value, grad = entropy_value_and_grad(x0, cfg, k=5)
    assert float(h.data) == value
    np.testing.assert_array_equal(x.grad, grad)


def test_mutual_information_node_matches_entropy_module():
    from dib.entropy import mutual_information_value_and_grads

    rng = np.random.default_rng(78)
    x0 = rng.standard_normal((8, 3))
    y0 = rng.standard_normal((8, 4))
    cfg = KernelConfig(alpha=1.9, k_rank=5)
    x = Tensor(x0, requires_grad=True)
    y = Tensor(y0, requires_grad=True)
    with Tape() as tape:
        mi = ad.mutual_information_node(x, y, cfg)
        loss = ad.scalar_mul(mi, 2.0)
    tape.backward(loss)
    value, gx, gy = mutual_information_value_and_grads(x0, y0, cfg)
    assert float(mi.data) == value
    np.testing.assert_array_equal(x.grad, 2.0 * gx)
    np.testing.assert_array_equal(y.grad, 2.0 * gy)


def test_random_composed_graphs_depth_12():
    # random chains of unary/binary ops up to depth 12, FD-checked
    unary = [
        lambda t: ad.relu(t),
        lambda t: ad.sigmoid(t),
        lambda t: ad.exp(ad.scalar_mul(t, 0.2)),
        lambda t: ad.softmax(t, axis=-1, scale=0.9),
        lambda t: ad.scalar_mul(t, -1.3),
        lambda t: ad.abs_(ad.add(t, Tensor(np.full(t.shape, 0.31)))),
    ]
    for trial in range(6):
        rng = np.random.default_rng(900 + trial)
        depth = int(rng.integers(4, 13))
        ops = [int(rng.integers(0, len(unary))) for _ in range(depth)]
        x0 = rng.standard_normal((3, 4)) * 0.7

        def build(leaf, ops=ops):
            t = leaf
            for i in ops:
                t = unary[i](t)
            return ad.reduce_mean(ad.mul(t, t))

        check_op_gradient(build, x0, rtol=2e-4, h=1e-5)
