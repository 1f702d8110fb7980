"""Closed-form matrix Lie groups T(1), T(2), SO(2), R>0 x SO(2) and SE(2).

Elements are stored in canonical coordinates rather than as matrices:

========  ====================  ===============  ==============
tag       element params        algebra coords   acts on
========  ====================  ===============  ==============
T1        (t,)                  (t,)             R
T2        (tx, ty)              (tx, ty)         R^2
SO2       (theta,)              (theta,)         R^2, orbit = radius
RxSO2     (log s, theta)        (log s, theta)   R^2 minus origin
SE2       (theta, tx, ty)       (theta, rx, ry)  R^2
========  ====================  ===============  ==============

Angles live on (-pi, pi].  The array kernels on :class:`Group` are vectorized
over leading axes; the functions at module level (``compose``, ``group_log``,
``pseudo_distance``...) are the element-wise API used by callers and tests.
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import ContractError, DegenerateInputError

PI = np.pi


class GroupTag(str, Enum):
    T1 = "T1"
    T2 = "T2"
    SO2 = "SO2"
    RxSO2 = "RxSO2"
    SE2 = "SE2"

    @classmethod
    def parse(cls, value) -> "GroupTag":
        if isinstance(value, GroupTag):
            return value
        for tag in cls:
            if tag.value.lower() == str(value).lower():
                return tag
        raise ValueError(f"unknown group tag {value!r}")


def wrap_angle(theta):
    """Reduce angles to (-pi, pi]."""
    return PI - np.mod(PI - np.asarray(theta, dtype=np.float64), 2.0 * PI)


def _rot(theta):
    c, s = np.cos(theta), np.sin(theta)
    return c, s


def _se2_v_coeffs(theta):
    """A = sin(t)/t and B = (1 - cos(t))/t, with series near zero."""
    theta = np.asarray(theta, dtype=np.float64)
    small = np.abs(theta) < 1e-4
    t = np.where(small, 1.0, theta)
    t2 = theta * theta
    a = np.where(small, 1.0 - t2 / 6.0 + t2 * t2 / 120.0, np.sin(t) / t)
    b = np.where(small, theta / 2.0 - theta * t2 / 24.0 + theta * t2 * t2 / 720.0,
                 (1.0 - np.cos(t)) / t)
    return a, b


class Group:
    """Vectorized kernels for one group; arrays carry params on the last axis."""

    tag: GroupTag
    n_params: int
    alg_dim: int
    space_dim: int
    orbit_dim: int = 0
    origin: np.ndarray
    # ||hat(v)||_F^2 = sum_i frob_weights[i] * v_i^2
    frob_weights: np.ndarray

    def identity(self):
        return np.zeros(self.n_params)

    def compose(self, a, b):
        raise NotImplementedError

    def inverse(self, a):
        raise NotImplementedError

    def log(self, a):
        return np.array(a, dtype=np.float64, copy=True)

    def exp(self, v):
        return np.array(v, dtype=np.float64, copy=True)

    def act(self, a, x):
        raise NotImplementedError

    def matrix(self, a):
        raise NotImplementedError

    def hat(self, v):
        raise NotImplementedError

    def orbit(self, x):
        return np.zeros(np.shape(x)[:-1] + (0,))

    def lift(self, x, k_lift, rng):
        """Return (u, q, src) for inputs ``x`` of shape (N, space_dim)."""
        x = np.asarray(x, dtype=np.float64).reshape(-1, self.space_dim)
        u = self._lift_unique(x)
        return u, self.orbit(x), np.arange(len(x))

    def random(self, rng, n=None, scale=1.0):
        raise NotImplementedError

    def alg_norm(self, v):
        v = np.asarray(v, dtype=np.float64)
        return np.sqrt(np.sum(self.frob_weights * v * v, axis=-1))

    def rel_log(self, u, v):
        """Algebra coords of ``v^{-1} u`` (broadcasting over leading axes)."""
        return self.log(self.compose(self.inverse(v), u))


class _T(Group):
    def compose(self, a, b):
        return np.asarray(a) + np.asarray(b)

    def inverse(self, a):
        return -np.asarray(a, dtype=np.float64)

    def act(self, a, x):
        return np.asarray(x, dtype=np.float64) + a

    def _lift_unique(self, x):
        return x - self.origin

    def matrix(self, a):
        a = np.asarray(a, dtype=np.float64)
        m = np.broadcast_to(np.eye(self.space_dim + 1), a.shape[:-1] + (self.space_dim + 1,) * 2).copy()
        m[..., :-1, -1] = a
        return m

    def hat(self, v):
        v = np.asarray(v, dtype=np.float64)
        m = np.zeros(v.shape[:-1] + (self.space_dim + 1,) * 2)
        m[..., :-1, -1] = v
        return m

    def random(self, rng, n=None, scale=1.0):
        size = (self.n_params,) if n is None else (n, self.n_params)
        return rng.normal(scale=scale, size=size)


class T1Group(_T):
    tag = GroupTag.T1
    n_params = alg_dim = space_dim = 1
    origin = np.zeros(1)
    frob_weights = np.ones(1)


class T2Group(_T):
    tag = GroupTag.T2
    n_params = alg_dim = space_dim = 2
    origin = np.zeros(2)
    frob_weights = np.ones(2)


class SO2Group(Group):
    tag = GroupTag.SO2
    n_params = alg_dim = 1
    space_dim = 2
    orbit_dim = 1
    origin = np.array([1.0, 0.0])
    frob_weights = np.array([2.0])

    def compose(self, a, b):
        return wrap_angle(np.asarray(a) + np.asarray(b))

    def inverse(self, a):
        return wrap_angle(-np.asarray(a, dtype=np.float64))

    def log(self, a):
        return wrap_angle(a)

    def exp(self, v):
        return wrap_angle(v)

    def act(self, a, x):
        c, s = _rot(np.asarray(a)[..., 0])
        x = np.asarray(x, dtype=np.float64)
        return np.stack([c * x[..., 0] - s * x[..., 1], s * x[..., 0] + c * x[..., 1]], axis=-1)

    def orbit(self, x):
        return np.linalg.norm(np.asarray(x, dtype=np.float64), axis=-1, keepdims=True)

    def _lift_unique(self, x):
        return np.arctan2(x[:, 1], x[:, 0])[:, None]

    def matrix(self, a):
        c, s = _rot(np.asarray(a, dtype=np.float64)[..., 0])
        return np.stack([np.stack([c, -s], -1), np.stack([s, c], -1)], -2)

    def hat(self, v):
        t = np.asarray(v, dtype=np.float64)[..., 0]
        z = np.zeros_like(t)
        return np.stack([np.stack([z, -t], -1), np.stack([t, z], -1)], -2)

    def random(self, rng, n=None, scale=1.0):
        size = (1,) if n is None else (n, 1)
        return rng.uniform(-PI, PI, size=size)


class RxSO2Group(Group):
    tag = GroupTag.RxSO2
    n_params = alg_dim = space_dim = 2
    origin = np.array([1.0, 0.0])
    frob_weights = np.array([2.0, 2.0])

    def compose(self, a, b):
        a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
        return np.stack([a[..., 0] + b[..., 0], wrap_angle(a[..., 1] + b[..., 1])], -1)

    def inverse(self, a):
        a = np.asarray(a, dtype=np.float64)
        return np.stack([-a[..., 0], wrap_angle(-a[..., 1])], -1)

    def log(self, a):
        a = np.asarray(a, dtype=np.float64)
        return np.stack([a[..., 0], wrap_angle(a[..., 1])], -1)

    exp = log

    def act(self, a, x):
        a = np.asarray(a, dtype=np.float64)
        s = np.exp(a[..., 0])
        c, sn = _rot(a[..., 1])
        x = np.asarray(x, dtype=np.float64)
        return np.stack([s * (c * x[..., 0] - sn * x[..., 1]),
                         s * (sn * x[..., 0] + c * x[..., 1])], axis=-1)

    def _lift_unique(self, x):
        r = np.linalg.norm(x, axis=-1)
        if np.any(r == 0.0):
            raise DegenerateInputError("R>0 x SO(2) cannot lift the origin")
        return np.stack([np.log(r), np.arctan2(x[:, 1], x[:, 0])], -1)

    def matrix(self, a):
        a = np.asarray(a, dtype=np.float64)
        return np.exp(a[..., 0])[..., None, None] * SO2Group().matrix(a[..., 1:])

    def hat(self, v):
        v = np.asarray(v, dtype=np.float64)
        eye = np.eye(2) * v[..., 0][..., None, None]
        return eye + SO2Group().hat(v[..., 1:])

    def random(self, rng, n=None, scale=1.0):
        shape = () if n is None else (n,)
        return np.stack([rng.normal(scale=scale, size=shape),
                         rng.uniform(-PI, PI, size=shape)], -1)


class SE2Group(Group):
    tag = GroupTag.SE2
    n_params = alg_dim = 3
    space_dim = 2
    origin = np.zeros(2)
    frob_weights = np.array([2.0, 1.0, 1.0])

    def compose(self, a, b):
        a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
        c, s = _rot(a[..., 0])
        tx = a[..., 1] + c * b[..., 1] - s * b[..., 2]
        ty = a[..., 2] + s * b[..., 1] + c * b[..., 2]
        return np.stack([wrap_angle(a[..., 0] + b[..., 0]), tx, ty], -1)

    def inverse(self, a):
        a = np.asarray(a, dtype=np.float64)
        c, s = _rot(a[..., 0])
        # -R(-theta) t
        tx = -(c * a[..., 1] + s * a[..., 2])
        ty = -(-s * a[..., 1] + c * a[..., 2])
        return np.stack([wrap_angle(-a[..., 0]), tx, ty], -1)

    def log(self, a):
        a = np.asarray(a, dtype=np.float64)
        theta = wrap_angle(a[..., 0])
        A, B = _se2_v_coeffs(theta)
        det = A * A + B * B
        rx = (A * a[..., 1] + B * a[..., 2]) / det
        ry = (-B * a[..., 1] + A * a[..., 2]) / det
        return np.stack([theta, rx, ry], -1)

    def exp(self, v):
        v = np.asarray(v, dtype=np.float64)
        A, B = _se2_v_coeffs(v[..., 0])
        tx = A * v[..., 1] - B * v[..., 2]
        ty = B * v[..., 1] + A * v[..., 2]
        return np.stack([wrap_angle(v[..., 0]), tx, ty], -1)

    def act(self, a, x):
        a = np.asarray(a, dtype=np.float64)
        rotated = SO2Group().act(a[..., :1], x)
        return rotated + a[..., 1:]

    def lift(self, x, k_lift, rng, angles=None):
        x = np.asarray(x, dtype=np.float64).reshape(-1, 2)
        n = len(x)
        if angles is None:
            rng = np.random.default_rng() if rng is None else rng
            angles = wrap_angle(rng.uniform(-PI, PI, size=(n, k_lift)))
        angles = np.asarray(angles, dtype=np.float64).reshape(n, k_lift)
        u = np.concatenate([angles.reshape(-1, 1), np.repeat(x, k_lift, axis=0)], axis=1)
        return u, np.zeros((n * k_lift, 0)), np.repeat(np.arange(n), k_lift)

    def matrix(self, a):
        a = np.asarray(a, dtype=np.float64)
        m = np.zeros(a.shape[:-1] + (3, 3))
        m[..., :2, :2] = SO2Group().matrix(a[..., :1])
        m[..., :2, 2] = a[..., 1:]
        m[..., 2, 2] = 1.0
        return m

    def hat(self, v):
        v = np.asarray(v, dtype=np.float64)
        m = np.zeros(v.shape[:-1] + (3, 3))
        m[..., :2, :2] = SO2Group().hat(v[..., :1])
        m[..., :2, 2] = v[..., 1:]
        return m

    def random(self, rng, n=None, scale=1.0):
        shape = () if n is None else (n,)
        return np.stack([rng.uniform(-PI, PI, size=shape),
                         rng.normal(scale=scale, size=shape),
                         rng.normal(scale=scale, size=shape)], -1)


GROUPS: dict[GroupTag, Group] = {
    GroupTag.T1: T1Group(),
    GroupTag.T2: T2Group(),
    GroupTag.SO2: SO2Group(),
    GroupTag.RxSO2: RxSO2Group(),
    GroupTag.SE2: SE2Group(),
}


def get_group(tag) -> Group:
    return GROUPS[GroupTag.parse(tag)]


# -- element-level API --------------------------------------------------------
@dataclass(frozen=True)
class GroupElement:
    tag: GroupTag
    params: tuple

    @property
    def array(self):
        return np.array(self.params, dtype=np.float64)

    @classmethod
    def of(cls, tag, params) -> "GroupElement":
        tag = GroupTag.parse(tag)
        arr = np.asarray(params, dtype=np.float64).reshape(GROUPS[tag].n_params)
        return cls(tag, tuple(float(v) for v in arr))

    @classmethod
    def identity(cls, tag) -> "GroupElement":
        return cls.of(tag, GROUPS[GroupTag.parse(tag)].identity())


@dataclass(frozen=True)
class AlgebraVector:
    tag: GroupTag
    coords: tuple

    @property
    def array(self):
        return np.array(self.coords, dtype=np.float64)


@dataclass(frozen=True)
class LiftedPoint:
    u: GroupElement
    q: tuple
    x_src: tuple
    feature: int = 0


def _same_tag(*elements):
    tags = {e.tag for e in elements}
    if len(tags) != 1:
        raise ContractError(f"group tags differ: {sorted(t.value for t in tags)}")
    return GROUPS[tags.pop()]


def matrix_of(u: GroupElement) -> np.ndarray:
    return GROUPS[u.tag].matrix(u.array)


def compose(u: GroupElement, v: GroupElement) -> GroupElement:
    g = _same_tag(u, v)
    return GroupElement.of(u.tag, g.compose(u.array, v.array))


def inverse(u: GroupElement) -> GroupElement:
    return GroupElement.of(u.tag, GROUPS[u.tag].inverse(u.array))


def group_log(u: GroupElement) -> AlgebraVector:
    return AlgebraVector(u.tag, tuple(float(c) for c in GROUPS[u.tag].log(u.array)))


def group_exp(v: AlgebraVector) -> GroupElement:
    return GroupElement.of(v.tag, GROUPS[v.tag].exp(v.array))


def act_on_point(u: GroupElement, x) -> np.ndarray:
    g = GROUPS[u.tag]
    x = np.asarray(x, dtype=np.float64).reshape(g.space_dim)
    return g.act(u.array, x)


def pseudo_distance(u: GroupElement, v: GroupElement) -> float:
    """``||log(u^{-1} v)||_F`` from the closed-form algebra coordinates."""
    g = _same_tag(u, v)
    return float(g.alg_norm(g.log(g.compose(g.inverse(u.array), v.array))))


def orbit_distance(q_i, q_j, alpha: float = 1.0) -> float:
    """Distance between orbit coordinates (0 for transitive actions).

    ``alpha`` is accepted for signature symmetry with :func:`total_distance`;
    the weight is applied there.
    """
    q_i = np.asarray(q_i, dtype=np.float64).ravel()
    q_j = np.asarray(q_j, dtype=np.float64).ravel()
    if q_i.size == 0:
        return 0.0
    return float(np.linalg.norm(q_i - q_j))


def total_distance(p_i: LiftedPoint, p_j: LiftedPoint, alpha: float = 1.0) -> float:
    d = pseudo_distance(p_i.u, p_j.u)
    d_o = orbit_distance(p_i.q, p_j.q)
    return float(np.sqrt(d * d + alpha * d_o * d_o))


def lift(x, tag, k_lift: int = 1, rng=None) -> list[LiftedPoint]:
    """All lifts of one input location ``x``.

    Transitive lifts are unique, so ``k_lift`` only matters for SE2 where the
    SO(2) stabilizer of the origin is sampled ``k_lift`` times.
    """
    if k_lift < 1:
        raise ValueError("k_lift must be >= 1")
    g = get_group(tag)
    x = np.asarray(x, dtype=np.float64).reshape(1, g.space_dim)
    k = k_lift if g.tag is GroupTag.SE2 else 1
    u, q, _ = g.lift(x, k, rng)
    return [LiftedPoint(GroupElement.of(g.tag, u[i]), tuple(q[i]), tuple(x[0]), 0)
            for i in range(len(u))]


def reconstruct(p: LiftedPoint) -> np.ndarray:
    """Map a lifted point back to its input location (``u . o``, scaled by the
    radius orbit for SO2)."""
    g = GROUPS[p.u.tag]
    x = g.act(p.u.array, g.origin)
    if g.orbit_dim:
        x = x * p.q[0]
    return x


@dataclass
class LiftedSet:
    """Array form of many lifted points; row ``i`` came from input ``src[i]``."""

    tag: GroupTag
    u: np.ndarray
    q: np.ndarray
    x: np.ndarray
    src: np.ndarray

    def __len__(self):
        return len(self.u)

    @property
    def group(self) -> Group:
        return GROUPS[self.tag]

    def points(self) -> list[LiftedPoint]:
        return [LiftedPoint(GroupElement.of(self.tag, self.u[i]), tuple(self.q[i]),
                            tuple(self.x[self.src[i]]), int(self.src[i]))
                for i in range(len(self))]

    def transformed(self, g) -> "LiftedSet":
        """Left-translate every element by ``g``; orbit labels are G-invariant."""
        grp = self.group
        g = g.array if isinstance(g, GroupElement) else np.asarray(g, dtype=np.float64)
        return LiftedSet(self.tag, grp.compose(g[None, :], self.u), self.q.copy(),
                         grp.act(g[None, :], self.x), self.src.copy())

    def subset(self, rows) -> "LiftedSet":
        rows = np.asarray(rows)
        return LiftedSet(self.tag, self.u[rows], self.q[rows], self.x, self.src[rows])


def lift_points(x, tag, k_lift: int = 1, rng=None, angles=None) -> LiftedSet:
    """Vectorized :func:`lift` for an (N, d) array of locations."""
    g = get_group(tag)
    x = np.asarray(x, dtype=np.float64).reshape(-1, g.space_dim)
    if g.tag is GroupTag.SE2:
        u, q, src = g.lift(x, k_lift, rng, angles=angles)
    else:
        u, q, src = g.lift(x, 1, rng)
    return LiftedSet(g.tag, u, q, x, src)
