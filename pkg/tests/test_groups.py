import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, settings
from hypothesis import strategies as st

from equivcnp.errors import ContractError, DegenerateInputError
from equivcnp.groups import (GROUPS, AlgebraVector, GroupElement, GroupTag, LiftedPoint,
                             act_on_point, compose, group_exp, group_log, inverse, lift,
                             lift_points, matrix_of, orbit_distance, pseudo_distance,
                             total_distance)

TAGS = list(GroupTag)


def el(tag, *params):
    return GroupElement.of(tag, np.array(params, dtype=float))


def random_elements(tag, rng, n):
    g = GROUPS[tag]
    return [GroupElement.of(tag, p) for p in g.random(rng, n)]


# -- lift ---------------------------------------------------------------------------
def test_lift_origin_t2_is_identity():
    (p,) = lift([0.0, 0.0], "T2")
    np.testing.assert_array_equal(p.u.array, [0.0, 0.0])
    assert p.q == ()


def test_lift_so2_quarter_turn():
    (p,) = lift([0.0, 2.0], "SO2")
    assert p.u.array[0] == pytest.approx(np.pi / 2)
    assert p.q == pytest.approx((2.0,))


def test_lift_se2_three_elements(rng):
    pts = lift([1.0, 1.0], "SE2", k_lift=3, rng=rng)
    assert len(pts) == 3
    for p in pts:
        np.testing.assert_allclose(act_on_point(p.u, [0.0, 0.0]), [1.0, 1.0], atol=1e-12)
    assert len({round(float(p.u.array[0]), 12) for p in pts}) == 3


def test_lift_rxso2_rejects_origin():
    with pytest.raises(DegenerateInputError):
        lift([0.0, 0.0], "RxSO2")


def test_lift_collapses_k_for_unique_lifts(rng):
    for tag in ("T1", "T2", "SO2", "RxSO2"):
        dim = GROUPS[GroupTag.parse(tag)].space_dim
        assert len(lift(np.ones(dim) * 0.3, tag, k_lift=4, rng=rng)) == 1


@pytest.mark.parametrize("tag", TAGS)
def test_lift_reproduces_input(tag, rng):
    g = GROUPS[tag]
    x = rng.uniform(-2, 2, size=(200, g.space_dim))
    pts = lift_points(x, tag, k_lift=3, rng=rng)
    back = g.act(pts.u, g.origin)
    if g.orbit_dim:
        back = back * pts.q
    np.testing.assert_allclose(back, x[pts.src], atol=1e-9)


# -- log / exp ------------------------------------------------------------------------
@pytest.mark.parametrize("tag", TAGS)
def test_log_identity_is_zero(tag):
    np.testing.assert_array_equal(group_log(GroupElement.identity(tag)).array, 0.0)
    ident = group_exp(AlgebraVector(tag, np.zeros(GROUPS[tag].alg_dim)))
    np.testing.assert_array_equal(ident.array, GroupElement.identity(tag).array)


def test_log_examples():
    assert group_log(el("SO2", np.pi / 3)).array == pytest.approx([np.pi / 3])
    np.testing.assert_allclose(group_log(el("SE2", 0.0, 2.0, -1.0)).array, [0, 2, -1])


def test_exp_wraps_angle():
    assert group_exp(AlgebraVector(GroupTag.SO2, np.array([3 * np.pi]))).array[0] == \
        pytest.approx(np.pi)


@pytest.mark.parametrize("tag", TAGS)
def test_exp_log_round_trip(tag, rng):
    g = GROUPS[tag]
    u = g.random(rng, 1000)
    back = g.exp(g.log(u))
    diff = back - u
    if tag in (GroupTag.SO2, GroupTag.RxSO2, GroupTag.SE2):
        col = 0 if tag is not GroupTag.RxSO2 else 1
        diff[:, col] = np.angle(np.exp(1j * diff[:, col]))
    assert np.max(np.abs(diff)) < 1e-9
    v = g.log(u)
    assert np.max(np.abs(g.log(g.exp(v)) - v)) < 1e-9


@pytest.mark.parametrize("tag", TAGS)
def test_log_matches_matrix_logarithm(tag, rng):
    """Closed forms against scipy's general matrix logarithm."""
    g = GROUPS[tag]
    for p in g.random(rng, 25):
        u = GroupElement.of(tag, p)
        ref = scipy.linalg.logm(matrix_of(u)).real
        np.testing.assert_allclose(g.hat(group_log(u).array), ref, atol=1e-8)


def test_se2_log_near_pi_branch():
    g = GROUPS[GroupTag.SE2]
    u = np.array([[np.pi, 0.7, -0.3], [-np.pi + 1e-12, 0.1, 0.2]])
    np.testing.assert_allclose(g.exp(g.log(u))[:, 1:], u[:, 1:], atol=1e-9)


# -- compose / inverse / act -----------------------------------------------------------
def test_compose_examples():
    u = el("T2", 1.0, 2.0)
    np.testing.assert_array_equal(compose(u, el("T2", 3.0, 4.0)).array, [4.0, 6.0])
    np.testing.assert_array_equal(compose(u, GroupElement.identity("T2")).array, u.array)


def test_se2_inverse_closed_form():
    th, t = 0.8, np.array([1.5, -2.0])
    inv = inverse(el("SE2", th, *t))
    c, s = np.cos(-th), np.sin(-th)
    np.testing.assert_allclose(inv.array, [-th, *(-np.array([[c, -s], [s, c]]) @ t)])
    np.testing.assert_allclose(compose(inv, el("SE2", th, *t)).array, 0.0, atol=1e-12)


def test_compose_rejects_mixed_tags():
    with pytest.raises(ContractError):
        compose(el("SO2", 0.1), el("T1", 0.1))
    with pytest.raises(ContractError):
        pseudo_distance(el("SO2", 0.1), el("T1", 0.1))


@pytest.mark.parametrize("tag", TAGS)
def test_group_axioms(tag, rng):
    g = GROUPS[tag]
    a, b, c = (g.random(rng, 500) for _ in range(3))
    lhs = g.matrix(g.compose(g.compose(a, b), c))
    rhs = g.matrix(g.compose(a, g.compose(b, c)))
    assert np.max(np.abs(lhs - rhs)) < 1e-12
    np.testing.assert_allclose(g.matrix(g.compose(a, g.inverse(a))),
                               np.broadcast_to(np.eye(lhs.shape[-1]), lhs.shape), atol=1e-12)
    np.testing.assert_allclose(g.matrix(g.compose(a, b)), g.matrix(a) @ g.matrix(b), atol=1e-12)


def test_matrix_properties(rng):
    for tag in TAGS:
        for u in random_elements(tag, rng, 20):
            m = matrix_of(u)
            assert abs(np.linalg.det(m)) > 1e-12
            if tag is GroupTag.SO2:
                assert np.linalg.det(m) == pytest.approx(1.0)


def test_act_examples():
    np.testing.assert_allclose(act_on_point(el("SO2", np.pi / 2), [1.0, 0.0]), [0, 1], atol=1e-15)
    np.testing.assert_allclose(act_on_point(el("RxSO2", np.log(2), np.pi), [1.0, 1.0]),
                               [-2, -2], atol=1e-12)
    x = np.array([0.3, -0.4])
    for tag in ("T2", "SO2", "RxSO2", "SE2"):
        np.testing.assert_array_equal(act_on_point(GroupElement.identity(tag), x), x)


# -- distances ------------------------------------------------------------------------
def test_pseudo_distance_examples(rng):
    for tag in TAGS:
        u = random_elements(tag, rng, 1)[0]
        assert pseudo_distance(u, u) < 1e-14
    for th in np.linspace(-np.pi, np.pi, 9)[1:]:
        d = pseudo_distance(el("SO2", 0.0), el("SO2", th))
        frob = np.linalg.norm(np.array([[0, -th], [th, 0]]))
        assert d == pytest.approx(np.sqrt(2) * abs(th)) and d == pytest.approx(frob)


@pytest.mark.parametrize("tag", TAGS)
def test_pseudo_distance_is_frobenius_of_logm(tag, rng):
    for u, v in zip(random_elements(tag, rng, 20), random_elements(tag, rng, 20)):
        rel = np.linalg.inv(matrix_of(u)) @ matrix_of(v)
        ref = np.linalg.norm(scipy.linalg.logm(rel).real)
        assert pseudo_distance(u, v) == pytest.approx(ref, abs=1e-8)


@pytest.mark.parametrize("tag", TAGS)
def test_left_invariance(tag, rng):
    g = GROUPS[tag]
    u, v, w = (g.random(rng, 1000) for _ in range(3))
    d0 = g.alg_norm(g.rel_log(u, v))
    d1 = g.alg_norm(g.rel_log(g.compose(w, u), g.compose(w, v)))
    assert np.max(np.abs(d0 - d1)) < 1e-9


def test_orbit_and_total_distance():
    p = LiftedPoint(el("SO2", 0.4), (1.0,), (np.cos(0.4), np.sin(0.4)))
    q = LiftedPoint(el("SO2", 0.4), (3.0,), (3 * np.cos(0.4), 3 * np.sin(0.4)))
    assert total_distance(p, p) == 0.0
    assert orbit_distance((1.0,), (3.0,)) == 2.0
    assert total_distance(p, q, alpha=1.0) == pytest.approx(2.0)
    r = LiftedPoint(el("SO2", 1.0), (3.0,), (3 * np.cos(1.0), 3 * np.sin(1.0)))
    assert total_distance(p, r, alpha=0.0) == pytest.approx(pseudo_distance(p.u, r.u))
    assert orbit_distance((), ()) == 0.0


@settings(max_examples=50, deadline=None)
@given(st.floats(-3, 3), st.floats(-3, 3), st.floats(-3, 3))
def test_se2_lifts_agree_on_point(x, y, angle):
    pts = lift([x, y], "SE2", k_lift=4, rng=np.random.default_rng(int(abs(angle) * 1e6)))
    for p in pts:
        np.testing.assert_allclose(act_on_point(p.u, [0.0, 0.0]), [x, y], atol=1e-12)
