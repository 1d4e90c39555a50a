import numpy as np
import pytest

from dispscan import mlp
from dispscan.errors import DimensionMismatch


def numeric_gradient(loss_fn, arrays, step=1e-5):
    """Central finite differences over every scalar parameter."""
    grads = []
    for arr in arrays:
        g = np.zeros_like(arr)
        it = np.nditer(arr, flags=["multi_index"])
        while not it.finished:
            i = it.multi_index
            orig = arr[i]
            arr[i] = orig + step
            up = loss_fn()
            arr[i] = orig - step
            down = loss_fn()
            arr[i] = orig
            g[i] = (up - down) / (2.0 * step)
            it.iternext()
        grads.append(g)
    return grads


def relative_errors(analytic, numeric):
    out = []
    for a, n in zip(analytic, numeric):
        denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-6)
        out.append(np.abs(a - n) / denom)
    return out


def test_zero_net_gives_zero_output():
    params = mlp.MlpParams([np.zeros((3, 2))], [np.zeros(2)], [mlp.ACT_LINEAR])
    out, _ = mlp.mlp_forward(params, np.ones(3))
    assert np.array_equal(out, np.zeros(2))


def test_identity_layer():
    params = mlp.MlpParams([np.eye(4)], [np.zeros(4)], [mlp.ACT_LINEAR])
    x = np.array([1.0, -2.0, 3.0, 0.5])
    out, _ = mlp.mlp_forward(params, x)
    assert np.array_equal(out, x)


def test_dimension_mismatch():
    params = mlp.MlpParams([np.zeros((3, 2))], [np.zeros(2)], [mlp.ACT_LINEAR])
    with pytest.raises(DimensionMismatch):
        mlp.mlp_forward(params, np.ones(4))


def test_softplus_stable_for_large_inputs():
    big = np.array([800.0, -800.0])
    out = mlp.softplus(big)
    assert out[0] == pytest.approx(800.0)
    assert out[1] == pytest.approx(0.0, abs=1e-300)
    s = mlp.sigmoid(big)
    assert s[0] == pytest.approx(1.0)
    assert s[1] == pytest.approx(0.0, abs=1e-300)


@pytest.mark.parametrize("seed", range(5))
def test_analytic_gradient_matches_finite_differences(seed):
    rng = np.random.default_rng(seed)
    net = mlp.init_mlp((4, 5, 3), rng)
    x = rng.normal(size=(6, 4))
    target = rng.normal(size=(6, 3))

    def loss_value():
        out, _ = mlp.mlp_forward(net, x)
        return 0.5 * float(np.mean((out - target) ** 2))

    out, cache = mlp.mlp_forward(net, x)
    grads, _ = mlp.mlp_backward(net, cache, (out - target) / out.size)
    numeric = numeric_gradient(loss_value, net.arrays())
    for err in relative_errors(grads.arrays(), numeric):
        assert np.max(err) < 1e-4


def test_backward_input_gradient():
    rng = np.random.default_rng(42)
    net = mlp.init_mlp((3, 4, 2), rng)
    x = rng.normal(size=(1, 3))

    def loss_value():
        out, _ = mlp.mlp_forward(net, x)
        return float(np.sum(out ** 2))

    out, cache = mlp.mlp_forward(net, x)
    _, dx = mlp.mlp_backward(net, cache, 2.0 * out)
    numeric = numeric_gradient(loss_value, [x])[0]
    denom = np.maximum(np.maximum(np.abs(dx), np.abs(numeric)), 1e-6)
    assert np.max(np.abs(dx - numeric) / denom) < 1e-4


def test_bce_with_logits_matches_naive():
    logits = np.array([-3.0, -0.2, 0.0, 1.7, 9.0])
    targets = np.array([0.0, 1.0, 1.0, 0.0, 1.0])
    p = 1.0 / (1.0 + np.exp(-logits))
    naive = float(np.mean(-(targets * np.log(p) + (1 - targets) * np.log(1 - p))))
    loss, grad = mlp.bce_with_logits(logits, targets)
    assert loss == pytest.approx(naive, rel=1e-12)
    assert np.allclose(grad, (p - targets) / len(logits), rtol=1e-12)


def test_bce_extreme_logits_finite():
    loss, grad = mlp.bce_with_logits(np.array([5000.0, -5000.0]), np.array([0.0, 1.0]))
    assert np.isfinite(loss)
    assert np.all(np.isfinite(grad))


def test_adam_zero_gradient_keeps_parameters():
    arrays = [np.ones((2, 2)), np.ones(2)]
    before = [a.copy() for a in arrays]
    opt = mlp.Adam(arrays)
    opt.step(arrays, [np.zeros_like(a) for a in arrays])
    for a, b in zip(arrays, before):
        assert np.array_equal(a, b)


def test_adam_descends_quadratic():
    arrays = [np.array([5.0])]
    opt = mlp.Adam(arrays, lr=0.1)
    for _ in range(300):
        opt.step(arrays, [2.0 * arrays[0]])
    assert abs(arrays[0][0]) < 1e-2
