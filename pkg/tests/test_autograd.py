import numpy as np
import pytest

from crossfid import autograd as ag
from crossfid.autograd import Tensor, gradient_check
from crossfid.nn import (
    MLP,
    Adam,
    BatchNorm1d,
    Conv1d,
    Linear,
    Module,
    Parameter,
    adam_update,
    load_checkpoint,
    save_checkpoint,
)

GRAD_TOL = 1e-4


def _leaf(rng, shape):
    return Tensor(rng.normal(size=shape), requires_grad=True)


# --------------------------------------------------------------------------
# per-op finite-difference suite


@pytest.mark.parametrize("seed", range(10))
def test_gradcheck_arithmetic_and_matmul(seed):
    rng = np.random.default_rng(seed)
    a = _leaf(rng, (3, 4))
    b = _leaf(rng, (3, 4))
    w = _leaf(rng, (4, 2))
    bias = _leaf(rng, (2,))
    coeff = Tensor(rng.normal(size=(3, 2)))

    def f():
        z = (a * b + a - b / (b * b + 3.0)) @ w + bias
        return (z * coeff).sum()

    err, report = gradient_check(f, [a, b, w, bias], rtol=GRAD_TOL)
    assert err <= GRAD_TOL, report


@pytest.mark.parametrize("seed", range(10))
def test_gradcheck_nonlinearities(seed):
    rng = np.random.default_rng(100 + seed)
    x = _leaf(rng, (4, 3))
    # keep clear of the relu kink: the finite-difference step is 1e-5
    x.data[np.abs(x.data) < 1e-3] += 0.01
    coeff = Tensor(rng.normal(size=(4, 3)))

    def f():
        z = ag.relu(x) + ag.tanh(x) * 0.5 + ag.sqrt(x * x + 1.0)
        return (z * coeff).sum()

    err, report = gradient_check(f, [x], rtol=GRAD_TOL)
    assert err <= GRAD_TOL, report


@pytest.mark.parametrize("axis", [0, 1])
def test_gradcheck_softmax(axis):
    rng = np.random.default_rng(7)
    x = _leaf(rng, (3, 5))
    coeff = Tensor(rng.normal(size=(3, 5)))

    def f():
        return (ag.softmax(x, axis=axis) * coeff).sum()

    err, report = gradient_check(f, [x], rtol=GRAD_TOL)
    assert err <= GRAD_TOL, report


def test_gradcheck_reductions_and_shapes():
    rng = np.random.default_rng(8)
    x = _leaf(rng, (2, 4, 3))
    coeff = Tensor(rng.normal(size=(2, 3)))
    coeff2 = Tensor(rng.normal(size=(6,)))

    def f():
        pooled = ag.mean_pool(x, axis=1)  # (2, 3)
        flat = x.reshape(8, 3)
        stacked = ag.concat([flat, flat], axis=1)  # (8, 6)
        return (
            (pooled * coeff).sum()
            + (stacked.sum(axis=0) * coeff2).sum() * 0.25
            + x.sum() * 0.1
            + x.mean() * 2.0
        )

    err, report = gradient_check(f, [x], rtol=GRAD_TOL)
    assert err <= GRAD_TOL, report


def test_gradcheck_transpose_concat():
    rng = np.random.default_rng(9)
    a = _leaf(rng, (3, 2))
    b = _leaf(rng, (3, 2))
    coeff = Tensor(rng.normal(size=(2, 9)))

    def f():
        joined = ag.concat([a, b, a], axis=0)  # (9, 2), a used twice
        return (joined.transpose() @ joined @ joined.transpose() * coeff).sum()

    err, report = gradient_check(f, [a, b], rtol=GRAD_TOL)
    assert err <= GRAD_TOL, report


def test_gradcheck_cosine_and_mse():
    rng = np.random.default_rng(10)
    u = _leaf(rng, (4, 5))
    v = _leaf(rng, (4, 5))
    target = Tensor(rng.uniform(0.2, 0.9, size=(4,)))

    def f():
        return ag.mse_loss(ag.cosine_similarity(u, v), target)

    err, report = gradient_check(f, [u, v], rtol=GRAD_TOL)
    assert err <= GRAD_TOL, report


def test_gradcheck_batchnorm_training_mode():
    rng = np.random.default_rng(11)
    bn = BatchNorm1d(3)
    x = _leaf(rng, (6, 3))
    coeff = Tensor(rng.normal(size=(6, 3)))

    def f():
        bn.running_mean = np.zeros(3)
        bn.running_var = np.ones(3)
        return (bn(x) * coeff).sum()

    err, report = gradient_check(f, [x, bn.gamma, bn.beta], rtol=GRAD_TOL)
    assert err <= GRAD_TOL, report


def test_gradcheck_layers():
    rng = np.random.default_rng(12)
    lin = Linear(4, 3, rng=np.random.default_rng(1))
    conv = Conv1d(3, 2, rng=np.random.default_rng(2))
    x = Tensor(rng.normal(size=(5, 4)))
    coeff = Tensor(rng.normal(size=(5, 2)))

    def f():
        return (conv(ag.relu(lin(x))) * coeff).sum()

    params = [lin.weight, lin.bias, conv.weight, conv.bias]
    err, report = gradient_check(f, params, rtol=GRAD_TOL)
    assert err <= GRAD_TOL, report


# --------------------------------------------------------------------------
# backward semantics


def test_sum_of_squares_gradient_analytic():
    w = Tensor(np.array([1.0, 2.0]), requires_grad=True)
    (w * w).sum().backward()
    np.testing.assert_allclose(w.grad, [2.0, 4.0], atol=1e-12)


def test_mse_loss_reference_values():
    assert ag.mse_loss(Tensor([0.3, 0.7]), Tensor([0.3, 0.7])).item() == 0.0
    assert ag.mse_loss(Tensor([0.5]), Tensor([1.0])).item() == pytest.approx(0.25)
    with pytest.raises(ValueError):
        ag.mse_loss(Tensor(np.zeros(0)), Tensor(np.zeros(0)))
    with pytest.raises(ValueError):
        ag.mse_loss(Tensor([0.5]), Tensor([1.0, 2.0]))


def test_backward_requires_scalar():
    w = Tensor(np.ones((2, 2)), requires_grad=True)
    with pytest.raises(ValueError):
        (w * 2).backward()


def test_detached_tensor_gets_no_grad():
    w = Tensor(np.array([3.0]), requires_grad=True)
    frozen = w.detach()
    loss = (w * w).sum() + (frozen * frozen).sum()
    loss.backward()
    np.testing.assert_allclose(w.grad, [6.0])
    assert frozen.grad is None


def test_grad_accumulates_across_backward_calls():
    w = Tensor(np.array([2.0]), requires_grad=True)
    (w * w).sum().backward()
    (w * w).sum().backward()
    np.testing.assert_allclose(w.grad, [8.0])


def test_no_grad_skips_graph_building():
    w = Tensor(np.array([2.0]), requires_grad=True)
    with ag.no_grad():
        out = (w * w).sum()
    assert out._ctx is None


def test_relu_subgradient_zero_at_kink():
    x = Tensor(np.array([0.0, -1.0, 2.0]), requires_grad=True)
    ag.relu(x).sum().backward()
    np.testing.assert_allclose(x.grad, [0.0, 0.0, 1.0])


def test_matmul_shape_error_names_both_shapes():
    a = Tensor(np.ones((2, 3)))
    b = Tensor(np.ones((4, 2)))
    with pytest.raises(ValueError, match=r"\(2, 3\).*\(4, 2\)"):
        a @ b


def test_softmax_is_shift_guarded():
    x = Tensor(np.array([[1000.0, 1001.0, 999.0]]))
    out = ag.softmax(x, axis=1)
    assert np.isfinite(out.data).all()
    assert out.data.sum() == pytest.approx(1.0)


def test_cosine_is_finite_for_tiny_norms():
    u = Tensor(np.full((1, 3), 1e-30))
    v = Tensor(np.full((1, 3), 1e-30))
    out = ag.cosine_similarity(u, v)
    assert np.isfinite(out.data).all()


def test_cosine_exact_symmetry_and_unit_self():
    rng = np.random.default_rng(13)
    u = Tensor(rng.normal(size=(6, 4)))
    v = Tensor(rng.normal(size=(6, 4)))
    ab = ag.cosine_similarity(u, v).data
    ba = ag.cosine_similarity(v, u).data
    assert np.array_equal(ab, ba)
    self_sim = ag.cosine_similarity(u, u).data
    np.testing.assert_allclose(self_sim, 1.0, atol=1e-12)


# --------------------------------------------------------------------------
# optimizer


def test_adam_zero_gradient_keeps_parameters():
    p = Parameter(np.array([1.0, -2.0]))
    opt = Adam([p], lr=1e-3)
    p.grad = np.zeros(2)
    opt.step()
    np.testing.assert_allclose(p.data, [1.0, -2.0])


def test_adam_first_step_matches_hand_computation():
    # loss = w^2 at w=3: g=6, m_hat=6, v_hat=36, step = lr*6/(6+eps)
    p = Parameter(np.array([3.0]))
    opt = Adam([p], lr=1e-3)
    p.grad = np.array([6.0])
    opt.step()
    expected = 3.0 - 1e-3 * 6.0 / (6.0 + 1e-8)
    assert p.data[0] == pytest.approx(expected, rel=1e-12)


def test_adam_deterministic():
    def run():
        p = Parameter(np.array([1.0, 2.0, 3.0]))
        opt = Adam([p], lr=1e-2)
        for step in range(5):
            p.grad = p.data * 0.1 + step
            opt.step()
        return p.data.copy()

    np.testing.assert_array_equal(run(), run())


def test_adam_rejects_nonpositive_lr():
    with pytest.raises(ValueError):
        Adam([Parameter(np.zeros(1))], lr=0.0)
    with pytest.raises(ValueError):
        adam_update(np.zeros(1), np.zeros(1), np.zeros(1), np.zeros(1), 0, lr=-1.0)


def test_functional_adam_matches_class():
    p = Parameter(np.array([0.5, -0.25]))
    opt = Adam([p], lr=5e-3)
    value = p.data.copy()
    m = np.zeros(2)
    v = np.zeros(2)
    t = 0
    for step in range(4):
        g = value * 0.3 + step * 0.1
        p.grad = p.data * 0.3 + step * 0.1
        opt.step()
        value, m, v, t = adam_update(value, g, m, v, t, lr=5e-3)
    np.testing.assert_allclose(p.data, value, atol=1e-15)


# --------------------------------------------------------------------------
# modules and checkpoints


def test_module_parameter_discovery_and_names():
    class Net(Module):
        def __init__(self):
            self.first = Linear(2, 3, rng=np.random.default_rng(0))
            self.blocks = [Linear(3, 3, rng=np.random.default_rng(1))]
            self.loose = [Parameter(np.zeros(2)), Parameter(np.ones(3))]

    names = dict(Net().named_parameters())
    assert set(names) == {
        "first.weight", "first.bias", "blocks.0.weight", "blocks.0.bias",
        "loose.0", "loose.1",
    }


def test_batchnorm_eval_uses_running_stats():
    bn = BatchNorm1d(2)
    rng = np.random.default_rng(14)
    x = Tensor(rng.normal(loc=5.0, size=(64, 2)))
    bn.train()
    bn(x)
    bn.eval()
    out1 = bn(Tensor(np.array([[5.0, 5.0]])))
    out2 = bn(Tensor(np.array([[5.0, 5.0]])))
    np.testing.assert_array_equal(out1.data, out2.data)
    assert bn.running_mean[0] != 0.0


def test_checkpoint_round_trip(tmp_path):
    rng = np.random.default_rng(15)
    arrays = {
        "alpha": rng.normal(size=(3, 4)),
        "beta": rng.normal(size=(7,)),
        "nested.weight": rng.normal(size=(2, 2, 2)),
    }
    save_checkpoint(tmp_path / "ckpt", arrays, extra={"note": "test"})
    loaded, manifest = load_checkpoint(tmp_path / "ckpt")
    assert manifest["note"] == "test"
    assert set(loaded) == set(arrays)
    for name in arrays:
        np.testing.assert_array_equal(loaded[name], arrays[name])


def test_module_state_round_trip(tmp_path):
    net = MLP([3, 4, 2], rng=np.random.default_rng(16))
    save_checkpoint(tmp_path / "m", net.state_arrays())
    arrays, _ = load_checkpoint(tmp_path / "m")
    clone = MLP([3, 4, 2], rng=np.random.default_rng(99))
    clone.load_state_arrays(arrays)
    x = Tensor(np.random.default_rng(17).normal(size=(5, 3)))
    np.testing.assert_array_equal(net(x).data, clone(x).data)
    with pytest.raises(KeyError):
        clone.load_state_arrays({"bogus": np.zeros(1)})
