import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from conftest import central_diff, rel_err
from equivcnp import autodiff as ad
from equivcnp.autodiff import Adam, AdamState, Tensor, adam_step, parameter
from equivcnp.autodiff.checkpoint import dumps, loads
from equivcnp.errors import ContractError, DimensionError, DomainError

LOG_2PI = np.log(2 * np.pi)


def grad_of(fn, *arrays):
    """Analytic gradients of scalar ``fn(*tensors)`` for each input array."""
    ts = [parameter(a.copy()) for a in arrays]
    fn(*ts).backward()
    return [t.grad for t in ts]


def numeric_grads(fn, *arrays):
    out = []
    for k in range(len(arrays)):
        def f(x, k=k):
            args = [Tensor(a) for a in arrays]
            args[k] = Tensor(x)
            return float(fn(*args).data)
        out.append(central_diff(f, arrays[k]))
    return out


def check(fn, *arrays, tol=1e-4):
    for a, n in zip(grad_of(fn, *arrays), numeric_grads(fn, *arrays)):
        assert rel_err(a, n) < tol


# -- matmul -------------------------------------------------------------------------
def test_matmul_identity():
    b = np.arange(6.0).reshape(2, 3)
    np.testing.assert_array_equal(ad.matmul(np.eye(2), b).data, b)


def test_matmul_hand_example():
    out = ad.matmul(np.array([[1.0, 2], [3, 4]]), np.array([[0.0], [1]]))
    np.testing.assert_array_equal(out.data, [[2], [4]])


def test_matmul_gradient(rng):
    a, b = rng.normal(size=(3, 3)), rng.normal(size=(3, 3))
    ga, gb = grad_of(lambda x, y: ad.matmul(x, y).sum(), a, b)
    na, nb = numeric_grads(lambda x, y: ad.matmul(x, y).sum(), a, b)
    assert rel_err(ga, na) < 1e-6 and rel_err(gb, nb) < 1e-6
    np.testing.assert_allclose(ga, np.ones((3, 3)) @ b.T)


def test_matmul_shape_mismatch():
    with pytest.raises(DimensionError):
        ad.matmul(np.ones((2, 3)), np.ones((2, 3)))
    with pytest.raises(DimensionError):
        ad.matmul(np.ones(3), np.ones((3, 1)))


# -- softplus -----------------------------------------------------------------------
def test_softplus_values():
    assert ad.softplus(Tensor(0.0)).data == pytest.approx(np.log(2))
    assert ad.softplus(Tensor(50.0)).data == pytest.approx(50.0)
    small = float(ad.softplus(Tensor(-50.0)).data)
    assert small == pytest.approx(1.9287498479639178e-22, rel=1e-9)


@given(st.floats(-700, 700))
def test_softplus_positive(x):
    assert ad.softplus(Tensor(x)).data > 0


# -- gaussian log-likelihood ---------------------------------------------------------
def test_gaussian_ll_values():
    z = Tensor(np.zeros((1, 1)))
    one = Tensor(np.ones((1, 1)))
    assert float(ad.gaussian_log_likelihood(z, z, one).data) == pytest.approx(-0.5 * LOG_2PI)
    assert float(ad.gaussian_log_likelihood(one, z, one).data) == pytest.approx(-1.4189385332)


def test_gaussian_ll_sums_over_entries(rng):
    y, mu = rng.normal(size=(4, 2)), rng.normal(size=(4, 2))
    sig = rng.uniform(0.5, 2, size=(4, 2))
    ref = np.sum(-0.5 * np.log(2 * np.pi * sig ** 2) - (y - mu) ** 2 / (2 * sig ** 2))
    assert float(ad.gaussian_log_likelihood(y, mu, sig).data) == pytest.approx(ref)


def test_gaussian_ll_mu_gradient(rng):
    y, mu = rng.normal(size=(5, 1)), rng.normal(size=(5, 1))
    sig = rng.uniform(0.5, 2, size=(5, 1))
    (g,) = grad_of(lambda m: ad.gaussian_log_likelihood(Tensor(y), m, Tensor(sig)), mu)
    np.testing.assert_allclose(g, (y - mu) / sig ** 2, rtol=1e-12)
    check(lambda m, s: ad.gaussian_log_likelihood(Tensor(y), m, s), mu, sig)


def test_gaussian_ll_rejects_nonpositive_sigma():
    with pytest.raises(DomainError):
        ad.gaussian_log_likelihood(np.zeros(2), np.zeros(2), np.array([1.0, 0.0]))


# -- backward -----------------------------------------------------------------------
def test_backward_sum_gives_ones(rng):
    p = parameter(rng.normal(size=(3, 4)))
    p.sum().backward()
    np.testing.assert_array_equal(p.grad, np.ones((3, 4)))


def test_backward_square():
    p = parameter(np.array([1.0, 2.0]))
    (p * p).sum().backward()
    np.testing.assert_array_equal(p.grad, [2.0, 4.0])


def test_backward_accumulates_until_zeroed():
    p = parameter(np.array([1.0, 2.0]))
    (p * 3.0).sum().backward()
    (p * 3.0).sum().backward()
    np.testing.assert_array_equal(p.grad, [6.0, 6.0])
    p.zero_grad()
    (p * 3.0).sum().backward()
    np.testing.assert_array_equal(p.grad, [3.0, 3.0])


def test_backward_two_consumers():
    p = parameter(np.array([0.5, -1.5]))
    a = ad.exp(p)
    (a * 2.0 + a * a).sum().backward()
    np.testing.assert_allclose(p.grad, 2 * np.exp(p.data) + 2 * np.exp(2 * p.data))


def test_backward_rejects_non_scalar():
    p = parameter(np.ones(3))
    with pytest.raises(ContractError):
        (p * 2.0).backward()


def test_no_grad_records_nothing():
    p = parameter(np.ones(2))
    with ad.no_grad():
        y = (p * 2.0).sum()
    assert y.is_leaf


def test_log_domain():
    with pytest.raises(DomainError):
        ad.log(Tensor(np.array([1.0, 0.0])))


# -- finite differences for every op on random inputs in [-2, 2] ---------------------
finite = arrays(np.float64, (3, 4), elements=st.floats(-2, 2))


@settings(max_examples=15, deadline=None)
@given(finite, finite)
def test_elementwise_binary_gradients(a, b):
    check(lambda x, y: (x + y * x - y).sum(), a, b)
    check(lambda x, y: ad.mul(x, y).sum(), a, b)
    check(lambda x, y: ad.div(x, ad.exp(y)).sum(), a, b)


@settings(max_examples=15, deadline=None)
@given(finite)
def test_elementwise_unary_gradients(a):
    check(lambda x: ad.exp(x).sum(), a)
    check(lambda x: ad.softplus(x).sum(), a)
    check(lambda x: ad.log(x * x + 0.5).sum(), a)
    check(lambda x: ad.sqrt(x * x + 0.5).sum(), a)
    check(lambda x: ad.power(x * x + 0.5, 1.5).sum(), a)
    check(lambda x: (-x).mean(), a)


def test_relu_and_clamp_gradients(rng):
    a = rng.uniform(-2, 2, size=(4, 5))
    a[np.abs(a) < 1e-3] = 0.5
    check(lambda x: (ad.relu(x) * x).sum(), a)
    check(lambda x: (ad.clamp_min(x, 0.1) * x).sum(), a)


def test_shape_op_gradients(rng):
    a = rng.uniform(-2, 2, size=(3, 4))
    w = rng.normal(size=(3, 4))
    check(lambda x: (x.reshape(4, 3) * w.reshape(4, 3)).sum(), a)
    check(lambda x: (x.T * w.T).sum(), a)
    check(lambda x: (x[1:, ::2] * w[1:, ::2]).sum(), a)
    check(lambda x: (ad.take(x, [0, 2, 2], axis=0) ** 2).sum(), a)
    check(lambda x: (ad.concat([x, x * 2.0], axis=1) ** 2).sum(), a)
    check(lambda x: (ad.tsum(x, axis=0) ** 2).sum(), a)


def test_linear_algebra_gradients(rng):
    x = rng.uniform(-2, 2, size=(5, 3))
    w = rng.uniform(-2, 2, size=(3, 4))
    b = rng.uniform(-2, 2, size=4)
    check(lambda x_, w_, b_: (ad.affine(x_, w_, b_) ** 2).sum(), x, w, b)
    k = rng.uniform(-2, 2, size=(5, 2, 3))
    v = rng.uniform(-2, 2, size=(5, 4, 3))
    check(lambda k_, v_: (ad.batched_matvec(k_, v_) ** 2).sum(), k, v)
    check(lambda k_, x_: (ad.batched_matvec(k_, x_) ** 2).sum(), k, x)
    check(lambda a_, c_: (ad.einsum("ij,jk->ik", a_, c_) ** 2).sum(), x, w)
    m = sp.random(4, 5, density=0.5, random_state=0, format="csr")
    check(lambda x_: (ad.sparse_matmul(m, x_) ** 2).sum(), x)


def test_affine_matches_matmul_plus_bias(rng):
    x, w, b = rng.normal(size=(2, 5, 3)), rng.normal(size=(3, 4)), rng.normal(size=4)
    np.testing.assert_allclose(ad.affine(x, w, b).data, x @ w + b, atol=1e-14)


# -- Adam ---------------------------------------------------------------------------
def test_adam_zero_grad_leaves_params():
    p = np.array([1.0, -2.0])
    state = AdamState(lr=0.1)
    adam_step([p], [np.zeros(2)], state)
    np.testing.assert_array_equal(p, [1.0, -2.0])


def test_adam_first_step_hand_trace():
    p = np.array([0.0])
    state = AdamState(lr=0.1)
    adam_step([p], [np.array([1.0])], state)
    # m_hat = 1, v_hat = 1, so the step is lr / (1 + eps)
    assert p[0] == pytest.approx(-0.1 / (1 + 1e-8), rel=1e-12)
    assert state.step == 1


def test_adam_matches_reference_recursion(rng):
    p = rng.normal(size=3)
    ref = p.copy()
    m = np.zeros(3)
    v = np.zeros(3)
    state = AdamState(lr=0.01)
    for t in range(1, 6):
        g = rng.normal(size=3)
        adam_step([p], [g], state)
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        ref -= 0.01 * (m / (1 - 0.9 ** t)) / (np.sqrt(v / (1 - 0.999 ** t)) + 1e-8)
    np.testing.assert_allclose(p, ref, rtol=1e-13)


def test_adam_converges_on_quadratic():
    p = parameter(np.array(0.0))
    opt = Adam([p], lr=1e-2)
    for _ in range(2000):
        opt.zero_grad()
        ((p - 3.0) ** 2).backward()
        opt.step()
    assert abs(float(p.data) - 3.0) < 1e-3


def test_adam_shape_mismatch():
    with pytest.raises(DimensionError):
        adam_step([np.zeros(2)], [np.zeros(3)], AdamState())


# -- checkpoint container -----------------------------------------------------------
def test_checkpoint_roundtrip_and_determinism(rng):
    params = {"b": rng.normal(size=(2, 3)), "a": np.array(1.5), "c": rng.normal(size=4)}
    blob = dumps(params, {"tag": "T1"})
    assert blob == dumps(dict(reversed(list(params.items()))), {"tag": "T1"})
    assert blob[:8] == b"EQCNPCKP"
    back, cfg = loads(blob)
    assert cfg == {"tag": "T1"}
    for k, v in params.items():
        assert back[k].shape == np.shape(v)
        np.testing.assert_array_equal(back[k], v)


def test_checkpoint_rejects_bad_magic():
    with pytest.raises(ValueError):
        loads(b"NOTACKPT" + bytes(16))
