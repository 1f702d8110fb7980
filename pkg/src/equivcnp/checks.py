"""Symmetry checks shared by the CLI and the test suite.

Each function returns the worst absolute error it saw; callers compare it to
a tolerance.
"""
from __future__ import annotations

import numpy as np

from .data import TaskConfig1D, sample_task_1d
from .groups import GROUPS, GroupTag, lift_points, wrap_angle
from .lieconv import LieConv, SeparableLieConv
from .model import EquivCNP, predict


def _relift(x, tag, g, angles=None):
    """Lift ``g . x``; for SE2 the stabilizer angles move with ``g``."""
    grp = GROUPS[tag]
    gx = grp.act(g[None, :], x)
    if tag is GroupTag.SE2:
        return lift_points(gx, tag, angles=wrap_angle(angles + g[0]))
    return lift_points(gx, tag)


def layer_equivariance_error(tag, n_elements=20, n_points=60, c_in=3, c_out=4, seed=0,
                             separable=False, fraction=0.2) -> float:
    """max |f(lift(g x)) - f(lift(x))| for one LieConv layer, full neighborhoods.

    Inputs are lifted afresh after moving them, so the check covers the lift
    as well as the convolution. Rows correspond one to one, so no permutation
    is needed.
    """
    tag = GroupTag.parse(tag)
    grp = GROUPS[tag]
    rng = np.random.default_rng(seed)
    x = rng.uniform(-1.0, 1.0, size=(n_points, grp.space_dim))
    angles = rng.uniform(-np.pi, np.pi, size=n_points) if tag is GroupTag.SE2 else None
    pts = lift_points(x, tag, angles=angles)
    cls = SeparableLieConv if separable else LieConv
    layer = cls(tag, c_in, c_out, np.random.default_rng(seed + 1), fraction=fraction,
                n_mc=None, bias=True)
    layer.calibrate(pts)
    f = rng.normal(size=(n_points, c_in))
    ref = layer(pts, pts, f, exact=True).data
    worst = 0.0
    for _ in range(n_elements):
        g = grp.random(rng)
        moved = _relift(x, tag, g, angles)
        out = layer(moved, moved, f, exact=True).data
        worst = max(worst, float(np.max(np.abs(out - ref))))
    return worst


def distance_invariance_error(tag, n_triples=10**4, seed=0, alpha=1.0) -> float:
    """max |d(wu, wv) - d(u, v)| over random triples (u, v, w)."""
    grp = GROUPS[GroupTag.parse(tag)]
    rng = np.random.default_rng(seed)
    u, v, w = (grp.random(rng, n_triples) for _ in range(3))
    before = grp.alg_norm(grp.rel_log(u, v))
    after = grp.alg_norm(grp.rel_log(grp.compose(w, u), grp.compose(w, v)))
    return float(np.max(np.abs(after - before)))


def orbit_preservation_error(tag="SO2", n_points=1000, seed=0) -> float:
    """max |q(g x) - q(x)|: orbit labels are invariant under the group."""
    grp = GROUPS[GroupTag.parse(tag)]
    rng = np.random.default_rng(seed)
    x = rng.uniform(-1.0, 1.0, size=(n_points, grp.space_dim))
    g = grp.random(rng, n_points)
    return float(np.max(np.abs(grp.orbit(grp.act(g, x)) - grp.orbit(x)), initial=0.0))


def permutation_invariance_error(model=None, n_tasks=5, seed=0) -> float:
    """max change of (mu, sigma) when the context order is shuffled."""
    model = model or EquivCNP()
    rng = np.random.default_rng(seed)
    cfg = TaskConfig1D()
    worst = 0.0
    for _ in range(n_tasks):
        task = sample_task_1d(cfg, rng)
        perm = rng.permutation(task.n_context)
        a = predict(model, task, rng=np.random.default_rng(1))
        b = predict(model, task.permuted_context(perm), rng=np.random.default_rng(1))
        worst = max(worst, float(np.max(np.abs(a.mu.data - b.mu.data))),
                    float(np.max(np.abs(a.sigma.data - b.sigma.data))))
    return worst


def translation_equivariance_error(model=None, n_tasks=5, seed=0, max_shift=3.0) -> float:
    """T1 model: predictions move with the data (exact neighborhoods)."""
    model = model or EquivCNP()
    rng = np.random.default_rng(seed)
    cfg = TaskConfig1D()
    worst = 0.0
    for _ in range(n_tasks):
        task = sample_task_1d(cfg, rng)
        c = rng.uniform(-max_shift, max_shift)
        moved = type(task)(task.x_context + c, task.y_context, task.x_target + c, task.y_target)
        a = predict(model, task, exact=True)
        b = predict(model, moved, exact=True)
        worst = max(worst, float(np.max(np.abs(a.mu.data - b.mu.data))),
                    float(np.max(np.abs(a.sigma.data - b.sigma.data))))
    return worst


TOLERANCES = {"layer": 1e-6, "distance": 1e-9, "orbit": 1e-12, "permutation": 1e-9,
              "translation": 1e-4}


def run_suite(tags=None, seed=0):
    """Rows of (check, group, max_error, tolerance, passed)."""
    tags = [GroupTag.parse(t) for t in (tags or list(GroupTag))]
    rows = []
    for tag in tags:
        rows.append(("layer", tag.value, layer_equivariance_error(tag, seed=seed)))
        rows.append(("separable", tag.value,
                     layer_equivariance_error(tag, seed=seed, separable=True)))
        rows.append(("distance", tag.value, distance_invariance_error(tag, seed=seed)))
        if GROUPS[tag].orbit_dim:
            rows.append(("orbit", tag.value, orbit_preservation_error(tag, seed=seed)))
    rows.append(("permutation", "T1", permutation_invariance_error(seed=seed)))
    rows.append(("translation", "T1", translation_equivariance_error(seed=seed)))
    out = []
    for name, group, err in rows:
        tol = TOLERANCES.get(name, TOLERANCES["layer"])
        out.append((name, group, err, tol, err < tol))
    return out
