import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import optimize

from taa_onet.errors import FormatError, StructuralError
from taa_onet.nn import (
    AdamState, Conv2D, Dense, Flatten, LBFGSState, MaxPool, Sequential, adam_step, cnn,
    finite_diff_grad, fnn, lbfgs_minimize, load_checkpoint, relative_error, save_checkpoint,
    strong_wolfe, xavier_bound, xavier_init,
)

SEEDS = range(20)


def layer_gradcheck(layer, x, seed):
    """Max relative error of parameter and input gradients of sum(R * layer(x))."""
    rng = np.random.default_rng(seed)
    params = [p + 0.1 * rng.standard_normal(p.shape) for p in layer.init_params(rng)]
    y, cache = layer.forward(params, x)
    r = rng.standard_normal(y.shape)
    dx, grads = layer.backward(params, cache, r)
    errs = []
    for k, p in enumerate(params):
        def f(v, k=k):
            ps = list(params)
            ps[k] = v
            return float(np.sum(r * layer.forward(ps, x)[0]))

        errs.append(relative_error(grads[k], finite_diff_grad(f, p)))
    fd_x = finite_diff_grad(lambda v: float(np.sum(r * layer.forward(params, v)[0])), x)
    errs.append(relative_error(dx, fd_x))
    return max(errs)


def direct_conv(x, w, b, stride, pad):
    """Loop oracle for channels-last cross-correlation."""
    n, h, wd, c = x.shape
    f, kh, kw, _ = w.shape
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad), (0, 0)))
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (wd + 2 * pad - kw) // stride + 1
    out = np.zeros((n, ho, wo, f))
    for i in range(ho):
        for j in range(wo):
            patch = xp[:, i * stride : i * stride + kh, j * stride : j * stride + kw, :]
            for q in range(f):
                out[:, i, j, q] = np.sum(patch * w[q], axis=(1, 2, 3)) + b[q]
    return out


# -- layers -------------------------------------------------------------------


@pytest.mark.parametrize("seed", SEEDS)
def test_dense_gradient(seed):
    x = np.random.default_rng(100 + seed).standard_normal((4, 5))
    assert layer_gradcheck(Dense(5, 3, "tanh"), x, seed) < 1e-6


@pytest.mark.parametrize("seed", SEEDS)
def test_conv_gradient(seed):
    x = np.random.default_rng(200 + seed).standard_normal((2, 6, 5, 2))
    assert layer_gradcheck(Conv2D(2, 3, (3, 3), 1, 1, "tanh"), x, seed) < 1e-6


@pytest.mark.parametrize("seed", range(5))
def test_strided_conv_gradient(seed):
    x = np.random.default_rng(300 + seed).standard_normal((2, 7, 6, 2))
    assert layer_gradcheck(Conv2D(2, 2, (3, 2), 2, 1, "identity"), x, seed) < 1e-6


@pytest.mark.parametrize("seed", SEEDS)
def test_maxpool_gradient(seed):
    # continuous inputs have no ties, so the max is differentiable
    x = np.random.default_rng(400 + seed).standard_normal((2, 5, 6, 3))
    assert layer_gradcheck(MaxPool(2), x, seed) < 1e-6


def test_flatten_gradient():
    x = np.random.default_rng(0).standard_normal((2, 3, 2, 2))
    assert layer_gradcheck(Flatten(), x, 0) < 1e-6


@pytest.mark.parametrize("stride,pad", [(1, 0), (1, 1), (2, 1)])
def test_conv_matches_loop_oracle(stride, pad):
    rng = np.random.default_rng(stride + 3 * pad)
    layer = Conv2D(3, 4, (3, 3), stride, pad, "identity")
    w, b = layer.init_params(rng)
    b = rng.standard_normal(4)
    x = rng.standard_normal((2, 7, 8, 3))
    y, _ = layer.forward([w, b], x)
    assert y.shape == (2, *layer.out_shape(x.shape[1:]))
    np.testing.assert_allclose(y, direct_conv(x, w, b, stride, pad), rtol=1e-12, atol=1e-12)


def test_maxpool_matches_loop_oracle():
    x = np.random.default_rng(5).standard_normal((2, 5, 7, 3))
    y, _ = MaxPool(2).forward([], x)
    assert y.shape == (2, 2, 3, 3)
    for i in range(2):
        for j in range(3):
            np.testing.assert_array_equal(y[:, i, j], x[:, 2 * i : 2 * i + 2, 2 * j : 2 * j + 2].max(axis=(1, 2)))


def test_maxpool_tie_goes_to_first_entry():
    x = np.ones((1, 2, 2, 1))
    y, cache = MaxPool(2).forward([], x)
    dx, _ = MaxPool(2).backward([], cache, np.ones_like(y))
    assert dx.sum() == 1.0 and dx[0, 0, 0, 0] == 1.0


def test_first_layer_skips_input_gradient():
    layer = Dense(3, 2)
    p = layer.init_params(np.random.default_rng(0))
    x = np.ones((2, 3))
    _, cache = layer.forward(p, x)
    dx, grads = layer.backward(p, cache, np.ones((2, 2)), need_dx=False)
    assert dx is None and len(grads) == 2


@pytest.mark.parametrize("bad", [
    lambda: Dense(0, 3), lambda: Dense(2, 3, "relu"), lambda: Conv2D(1, 2, (0, 3)),
    lambda: Conv2D(1, 2, pad=-1), lambda: MaxPool(0),
])
def test_invalid_layers_rejected(bad):
    with pytest.raises(StructuralError):
        bad()


def test_shape_errors_at_assembly():
    with pytest.raises(StructuralError):
        Sequential([Conv2D(2, 4)], (5, 5, 1))
    with pytest.raises(StructuralError):
        Sequential([MaxPool(4)], (3, 3, 1))
    with pytest.raises(StructuralError):
        Sequential([Conv2D(1, 2, (5, 5))], (3, 3, 1))
    net = fnn(4, 2, 2, 8)
    with pytest.raises(StructuralError):
        net.forward(np.zeros(net.size), np.zeros((1, 5)))


# -- initialization -----------------------------------------------------------


def test_xavier_bound_and_spread():
    assert xavier_bound(3, 5) == pytest.approx(np.sqrt(6 / 8))
    w = xavier_init((200, 300), np.random.default_rng(0))
    b = np.sqrt(6 / 500)
    assert np.abs(w).max() <= b
    # uniform on [-b, b] has variance b^2 / 3
    assert w.var() == pytest.approx(b * b / 3, rel=0.02)
    with pytest.raises(StructuralError):
        xavier_bound(0, 3)


def test_conv_fans_include_receptive_field():
    layer = Conv2D(2, 4, (3, 3))
    w, b = layer.init_params(np.random.default_rng(0))
    assert np.abs(w).max() <= xavier_bound(18, 36) and not b.any()


# -- networks -----------------------------------------------------------------


def test_fnn_param_count_by_hand():
    # 3 -> 5 -> 5 -> 2
    net = fnn(3, 2, 3, 5)
    assert net.size == (3 * 5 + 5) + (5 * 5 + 5) + (5 * 2 + 2)


def test_cnn_param_count_by_hand():
    net = cnn((10, 10, 1), 4, filters=(2, 3), kernel=3)
    # (10,10,1) conv pad1 -> (10,10,2), pool -> (5,5,2), conv -> (3,3,3), pool -> (1,1,3), dense 3 -> 4
    assert net.output_shape == (4,)
    assert net.size == (2 * 9 * 1 + 2) + (3 * 9 * 2 + 3) + (3 * 4 + 4)


def test_sequential_gradient_through_stack():
    net = cnn((10, 11, 1), 3, filters=(2, 2), kernel=3)
    rng = np.random.default_rng(3)
    theta = np.zeros(net.size)
    net.init(theta, rng)
    x = rng.standard_normal((3, 10, 11, 1))
    y, caches = net.forward(theta, x)
    r = rng.standard_normal(y.shape)
    grad = np.zeros_like(theta)
    dx = net.backward(theta, caches, r, grad)
    fd = finite_diff_grad(lambda t: float(np.sum(r * net.forward(t, x)[0])), theta)
    assert relative_error(grad, fd) < 1e-6
    fd_x = finite_diff_grad(lambda v: float(np.sum(r * net.forward(theta, v)[0])), x)
    assert relative_error(dx, fd_x) < 1e-6


def test_networks_share_one_vector():
    a = fnn(2, 3, 2, 4)
    b = fnn(3, 1, 2, 4, offset=a.end)
    theta = np.zeros(b.end)
    a.init(theta, np.random.default_rng(0))
    assert not theta[a.end :].any()
    b.init(theta, np.random.default_rng(1))
    assert theta[a.end :].any()


@given(st.integers(1, 6), st.integers(0, 10_000))
def test_batch_rows_are_independent(n, seed):
    rng = np.random.default_rng(seed)
    net = fnn(4, 3, 3, 6)
    theta = np.zeros(net.size)
    net.init(theta, rng)
    x = rng.standard_normal((n, 4))
    y, _ = net.forward(theta, x)
    for i in range(n):
        np.testing.assert_allclose(net.forward(theta, x[i : i + 1])[0][0], y[i], rtol=1e-13, atol=1e-14)


def test_spec_roundtrip():
    net = cnn((10, 11, 1), 3, filters=(2, 2), kernel=3, offset=5)
    again = Sequential.from_spec(net.spec(), offset=5)
    assert again.spec() == net.spec() and again.size == net.size


# -- optimizers ---------------------------------------------------------------


def test_adam_first_step_by_hand():
    g = np.array([0.5, -2.0, 1e-3])
    st_ = AdamState.fresh(3, lr=0.1)
    x = adam_step(st_, np.zeros(3), g)
    # bias correction makes m_hat = g and v_hat = g^2 on the first step
    np.testing.assert_allclose(x, -0.1 * g / (np.abs(g) + 1e-8), rtol=1e-14)
    assert st_.t == 1


def test_adam_two_steps_by_hand():
    g1, g2 = np.array([1.0]), np.array([3.0])
    s = AdamState.fresh(1, lr=0.01)
    x = adam_step(s, np.zeros(1), g1)
    x = adam_step(s, x, g2)
    m = 0.9 * 0.1 * 1.0 + 0.1 * 3.0
    v = 0.999 * 0.001 * 1.0 + 0.001 * 9.0
    step2 = 0.01 * (m / (1 - 0.81)) / (np.sqrt(v / (1 - 0.999**2)) + 1e-8)
    np.testing.assert_allclose(x, -0.01 / (1 + 1e-8) - step2, rtol=1e-12)


def test_adam_minimizes_quadratic():
    a = np.diag([1.0, 10.0, 0.5])
    x = np.array([1.0, -1.0, 2.0])
    s = AdamState.fresh(3, lr=0.05)
    for _ in range(2000):
        x = adam_step(s, x, a @ x)
    assert np.linalg.norm(x) < 1e-3


def quadratic(n, seed, centered=True, cond=10.0):
    """Random SPD quadratic; the centered form has minimum value 0 so every decrease is resolvable."""
    rng = np.random.default_rng(seed)
    q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    a = q @ np.diag(np.logspace(0, np.log10(cond), n)) @ q.T
    x_star = rng.standard_normal(n)
    if centered:
        return a, x_star, lambda x: (0.5 * (x - x_star) @ a @ (x - x_star), a @ (x - x_star))
    b = a @ x_star
    return a, x_star, lambda x: (0.5 * x @ a @ x - b @ x, a @ x - b)


@pytest.mark.parametrize("seed", range(20))
def test_lbfgs_quadratic_convergence(seed):
    a, x_star, fg = quadratic(5, seed)
    x, state, trace = lbfgs_minimize(fg, np.zeros(5), max_iter=25, gtol=1e-10)
    assert np.linalg.norm(state.g) < 1e-10
    assert state.n_iter <= 25
    f0 = fg(np.zeros(5))[0]
    assert all(t1 < t0 for t0, t1 in zip([f0] + trace, trace))
    np.testing.assert_allclose(x, x_star, rtol=1e-9, atol=1e-10)


@pytest.mark.parametrize("seed", range(10))
def test_lbfgs_ill_conditioned_quadratic(seed):
    _, x_star, fg = quadratic(5, seed, cond=100.0)
    x, state, trace = lbfgs_minimize(fg, np.zeros(5), max_iter=40, gtol=1e-10)
    assert np.linalg.norm(state.g) < 1e-10
    assert np.all(np.diff(trace) < 0)


def test_lbfgs_offset_quadratic_reaches_rounding_floor():
    # with a nonzero minimum the loss stops resolving progress near the optimum
    a, x_star, fg = quadratic(5, 1, centered=False)
    x, state, trace = lbfgs_minimize(fg, np.zeros(5), max_iter=50, gtol=1e-10)
    np.testing.assert_allclose(x, x_star, atol=1e-8)
    assert np.all(np.diff(trace) <= 1e-14)


def test_lbfgs_matches_scipy_on_rosenbrock():
    fg = lambda x: (optimize.rosen(x), optimize.rosen_der(x))
    x0 = np.array([-1.2, 1.0, -0.5, 0.8])
    x, state, trace = lbfgs_minimize(fg, x0, max_iter=500, gtol=1e-9)
    ref = optimize.minimize(optimize.rosen, x0, jac=optimize.rosen_der, method="L-BFGS-B", tol=1e-14).x
    np.testing.assert_allclose(x, ref, atol=1e-6)
    assert all(t1 <= t0 for t0, t1 in zip(trace, trace[1:]))


def test_lbfgs_stops_at_stationary_point():
    fg = lambda x: (float(x @ x), 2 * x)
    x, state, trace = lbfgs_minimize(fg, np.zeros(3), max_iter=10)
    assert trace == [] and not x.any()


def test_strong_wolfe_conditions_hold():
    f = lambda x: (x[0] - 3.0) ** 4 + x[1] ** 2
    g = lambda x: np.array([4 * (x[0] - 3.0) ** 3, 2 * x[1]])
    x0 = np.array([0.0, 1.0])
    d = -g(x0)
    phi = lambda t: (f(x0 + t * d), float(g(x0 + t * d) @ d), t)
    f0, s0 = f(x0), float(g(x0) @ d)
    t, ft, _, _ = strong_wolfe(phi, f0, s0, step0=1.0)
    assert t is not None
    assert ft <= f0 + 1e-4 * t * s0
    assert abs(float(g(x0 + t * d) @ d)) <= 0.9 * abs(s0)


def test_lbfgs_memory_is_bounded():
    _, _, fg = quadratic(12, 0)
    state = LBFGSState(m=3)
    lbfgs_minimize(fg, np.zeros(12), max_iter=20, gtol=0.0, state=state)
    assert len(state.s_hist) <= 3


# -- checkpoints --------------------------------------------------------------


def test_checkpoint_roundtrip_bitwise(tmp_path):
    rng = np.random.default_rng(0)
    params = rng.standard_normal(1000) * 10.0 ** rng.integers(-300, 300, 1000)
    topo = {"layers": [{"kind": "dense", "n_in": 3}], "note": "x"}
    save_checkpoint(tmp_path / "m.ckpt", topo, params, {"seed": 4})
    t2, p2, meta = load_checkpoint(tmp_path / "m.ckpt")
    assert t2 == topo and meta == {"seed": 4}
    assert p2.tobytes() == params.tobytes()


def test_checkpoint_rejects_garbage(tmp_path):
    path = tmp_path / "bad.ckpt"
    path.write_bytes(b"NOTACKPT" + b"\0" * 32)
    with pytest.raises(FormatError):
        load_checkpoint(path)
    save_checkpoint(tmp_path / "ok.ckpt", {}, np.ones(4))
    data = (tmp_path / "ok.ckpt").read_bytes()
    (tmp_path / "cut.ckpt").write_bytes(data[:-8])
    with pytest.raises(FormatError):
        load_checkpoint(tmp_path / "cut.ckpt")
