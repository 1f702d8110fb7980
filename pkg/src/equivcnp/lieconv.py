"""Monte Carlo Lie group convolution over lifted point clouds.

For every center ``u_i`` the layer averages ``g(a_ij) f_j`` over the sources
in its neighborhood, where ``a_ij = [log(v_j^-1 u_i), q_i, q_j]`` and ``g`` is
a small MLP emitting a ``c_out x c_in`` matrix (full variant) or a ``c_in``
vector applied elementwise and followed by a pointwise channel mix
(separable variant).

Features use a points-first layout: ``(N, c)`` or batched ``(N, B, c)``.
"""
from __future__ import annotations

import hashlib
import threading
from collections import OrderedDict

import numpy as np
import scipy.sparse as sp

from . import autodiff as ad
from .autodiff import MLP, Module, Tensor, parameter
from .autodiff.module import uniform_init
from .errors import ContractError, DegenerateInputError, DimensionError
from .groups import GROUPS, GroupTag, LiftedPoint, LiftedSet

KERNEL_HIDDEN = (32, 32, 32)


def _as_set(points) -> LiftedSet:
    if isinstance(points, LiftedSet):
        return points
    points = list(points)
    if not points:
        raise ValueError("empty point list")
    tag = points[0].u.tag
    if any(p.u.tag is not tag for p in points):
        raise ContractError("mixed group tags in one point set")
    u = np.array([p.u.params for p in points], dtype=np.float64)
    q = np.array([p.q for p in points], dtype=np.float64).reshape(len(points), -1)
    x = np.array([p.x_src for p in points], dtype=np.float64)
    return LiftedSet(tag, u, q, x, np.arange(len(points)))


def pair_distances(centers: LiftedSet, sources: LiftedSet, alpha=1.0, rows=None, cols=None):
    """Total distance between ``centers[rows]`` and ``sources[cols]`` (broadcast)."""
    g = centers.group
    ui = centers.u if rows is None else centers.u[rows]
    vj = sources.u if cols is None else sources.u[cols]
    qi = centers.q if rows is None else centers.q[rows]
    qj = sources.q if cols is None else sources.q[cols]
    d2 = g.alg_norm(g.rel_log(ui, vj)) ** 2
    if g.orbit_dim:
        d2 = d2 + alpha * np.sum((qi - qj) ** 2, axis=-1)
    return np.sqrt(d2)


def distance_matrix(centers, sources, alpha=1.0, chunk=256) -> np.ndarray:
    centers, sources = _as_set(centers), _as_set(sources)
    if centers.tag is not sources.tag:
        raise ContractError("centers and sources use different groups")
    out = np.empty((len(centers), len(sources)))
    cols = np.arange(len(sources))[None, :]
    for start in range(0, len(centers), chunk):
        rows = np.arange(start, min(start + chunk, len(centers)))[:, None]
        out[rows[:, 0]] = pair_distances(centers, sources, alpha, rows, cols)
    return out


def calibrate_radius(points, fraction: float, alpha: float = 1.0, rng=None,
                     max_pairs: int = 10**6) -> float:
    """Radius whose ball holds ``fraction`` of all points on average.

    Takes the ``fraction`` quantile of the pooled pairwise distances (self
    pairs included, subsampled to ``max_pairs``) and nudges it up by a relative
    1e-9 so that distances tied with the quantile fall inside the strict
    ``d < r`` test.
    """
    pts = _as_set(points)
    n = len(pts)
    if n < 2:
        raise ValueError("need at least two points to calibrate a radius")
    if not 0.0 < fraction <= 1.0:
        raise ValueError("fraction must lie in (0, 1]")
    if n * n <= max_pairs:
        d = distance_matrix(pts, pts, alpha).ravel()
    else:
        rng = np.random.default_rng(0) if rng is None else rng
        rows = rng.integers(0, n, size=max_pairs)
        cols = rng.integers(0, n, size=max_pairs)
        d = pair_distances(pts, pts, alpha, rows, cols)
    if np.max(d) <= 0.0:
        raise DegenerateInputError("all points coincide; radius would be zero")
    r = float(np.quantile(d, fraction, method="higher"))
    if r <= 0.0:
        raise DegenerateInputError("fraction too small: quantile distance is zero")
    return r * (1.0 + 1e-9)


def neighborhood(center, points, radius: float, alpha: float = 1.0) -> list[int]:
    """Indices ``j`` with ``d(center, points[j]) < radius``."""
    pts = _as_set(points)
    c = _as_set([center]) if isinstance(center, LiftedPoint) else center
    d = distance_matrix(c, pts, alpha)[0]
    return [int(j) for j in np.flatnonzero(d < radius)]


def mc_subsample(indices, n_mc, rng) -> np.ndarray:
    """At most ``n_mc`` indices drawn uniformly without replacement."""
    indices = np.asarray(indices)
    if n_mc is None or len(indices) <= n_mc:
        return indices.copy()
    if n_mc < 1:
        raise ValueError("n_mc must be >= 1")
    return np.sort(rng.choice(indices, size=n_mc, replace=False))


class _NeighborCache:
    """Candidate tables keyed by the exact bytes of the lifted clouds."""

    def __init__(self, size=32):
        self.size = size
        self.store = OrderedDict()
        self.lock = threading.Lock()

    @staticmethod
    def key(centers, sources, radius, alpha):
        h = hashlib.blake2b(digest_size=16)
        for arr in (centers.u, centers.q, sources.u, sources.q):
            h.update(np.ascontiguousarray(arr).tobytes())
            h.update(str(arr.shape).encode())
        h.update(np.float64(radius).tobytes())
        h.update(np.float64(alpha).tobytes())
        return h.hexdigest()

    def get(self, centers, sources, radius, alpha):
        k = self.key(centers, sources, radius, alpha)
        with self.lock:
            hit = self.store.get(k)
            if hit is not None:
                self.store.move_to_end(k)
                return hit
        table = _candidate_table(centers, sources, radius, alpha)
        with self.lock:
            self.store[k] = table
            if len(self.store) > self.size:
                self.store.popitem(last=False)
        return table


def _candidate_table(centers, sources, radius, alpha, chunk=256):
    """Padded (Nc, max_count) table of in-radius source indices plus counts."""
    rows_idx, counts = [], np.zeros(len(centers), dtype=np.int64)
    cols = np.arange(len(sources))[None, :]
    for start in range(0, len(centers), chunk):
        rows = np.arange(start, min(start + chunk, len(centers)))[:, None]
        inside = pair_distances(centers, sources, alpha, rows, cols) < radius
        for r, mask in zip(rows[:, 0], inside):
            nz = np.flatnonzero(mask)
            rows_idx.append(nz)
            counts[r] = len(nz)
    width = max(1, int(counts.max()) if len(counts) else 1)
    table = np.full((len(centers), width), -1, dtype=np.int64)
    for r, nz in enumerate(rows_idx):
        table[r, :len(nz)] = nz
    return table, counts


NEIGHBOR_CACHE = _NeighborCache()


def neighbor_pairs(centers: LiftedSet, sources: LiftedSet, radius, alpha, n_mc, rng):
    """Flattened (center, source) pairs after MC subsampling, sorted by center.

    Returns ``(ci, sj, counts)`` where ``counts[i]`` is the number of summed
    neighbors of center ``i``.
    """
    table, counts = NEIGHBOR_CACHE.get(centers, sources, radius, alpha)
    valid = table >= 0
    if n_mc is not None and table.shape[1] > n_mc:
        rng = np.random.default_rng() if rng is None else rng
        keys = np.where(valid, rng.random(table.shape), np.inf)
        pick = np.argpartition(keys, n_mc - 1, axis=1)[:, :n_mc]
        pick.sort(axis=1)
        table = np.take_along_axis(table, pick, axis=1)
        valid = table >= 0
    ci = np.nonzero(valid)[0]
    sj = table[valid]
    used = valid.sum(axis=1)
    return ci, sj, used


def pair_embeddings(centers: LiftedSet, sources: LiftedSet, ci, sj) -> np.ndarray:
    """Rows ``Concat(log(v_j^-1 u_i), q_i, q_j)`` for the given pairs."""
    g = centers.group
    a = g.rel_log(centers.u[ci], sources.u[sj])
    if g.orbit_dim:
        a = np.concatenate([a, centers.q[ci], sources.q[sj]], axis=1)
    return a


def embedding_dim(tag) -> int:
    g = GROUPS[GroupTag.parse(tag)]
    return g.alg_dim + 2 * g.orbit_dim


def averaging_matrix(ci, used, n_centers, n_pairs):
    """Sparse (Nc, P) matrix with entry 1/n_i at (i, p) for every pair p of i."""
    w = 1.0 / np.maximum(used[ci], 1)
    return sp.csr_matrix((w, (ci, np.arange(n_pairs))), shape=(n_centers, n_pairs))


def kernel_mlp(n_in, hidden, n_out, rng, out_fan=1):
    """Kernel network with variance-preserving init.

    Hidden layers use the ReLU gain (uniform, bound sqrt(6 / fan_in)) and the
    output layer is scaled so that a kernel summed over ``out_fan`` input
    channels keeps unit variance. With the plain 1/sqrt(fan_in) bound the
    signal shrinks by roughly 50x per convolution and a 4-layer decoder
    starts out as a constant.
    """
    mlp = MLP(n_in, hidden, n_out, rng)
    for layer in mlp.layers[:-1]:
        layer.weight.data *= np.sqrt(6.0)
    last = mlp.layers[-1]
    last.weight.data *= np.sqrt(3.0 / out_fan)
    return mlp


class _LieConvBase(Module):
    def __init__(self, tag, c_in, c_out, fraction=5 / 32, n_mc=25, alpha=1.0,
                 radius=None):
        self.tag = GroupTag.parse(tag)
        self.c_in, self.c_out = int(c_in), int(c_out)
        self.fraction = float(fraction)
        self.n_mc = None if n_mc is None else int(n_mc)
        self.alpha = float(alpha)
        self.radius = radius

    def calibrate(self, points, rng=None) -> float:
        self.radius = calibrate_radius(points, self.fraction, self.alpha, rng)
        return self.radius

    def _prepare(self, centers, sources, f, rng, exact):
        centers, sources = _as_set(centers), _as_set(sources)
        if centers.tag is not self.tag or sources.tag is not self.tag:
            raise ContractError(f"layer is {self.tag.value}, points are "
                                f"{centers.tag.value}/{sources.tag.value}")
        f = ad.as_tensor(f)
        if f.shape[0] != len(sources):
            raise DimensionError(f"{f.shape[0]} feature rows for {len(sources)} sources")
        if f.shape[-1] != self.c_in:
            raise DimensionError(f"expected {self.c_in} input channels, got {f.shape[-1]}")
        if self.radius is None:
            self.calibrate(sources)
        n_mc = None if exact else self.n_mc
        ci, sj, used = neighbor_pairs(centers, sources, self.radius, self.alpha, n_mc, rng)
        emb = self.kernel_input(pair_embeddings(centers, sources, ci, sj))
        avg = averaging_matrix(ci, used, len(centers), len(ci))
        return centers, sources, f, sj, emb, avg

    def kernel_input(self, emb):
        """Pair embeddings as fed to the kernel MLP: the algebra part is
        measured in units of the radius so inputs are O(1)."""
        emb = np.array(emb, dtype=np.float64, ndmin=2)
        emb[:, :GROUPS[self.tag].alg_dim] /= self.radius
        return emb

    @staticmethod
    def _reduce(avg, per_pair, n_centers):
        tail = per_pair.shape[1:]
        flat = per_pair.reshape(per_pair.shape[0], int(np.prod(tail, dtype=np.int64)))
        return ad.sparse_matmul(avg, flat).reshape((n_centers,) + tail)


class LieConv(_LieConvBase):
    """Full LieConv: kernel MLP emits a ``c_out x c_in`` matrix per pair."""

    def __init__(self, tag, c_in, c_out, rng, fraction=5 / 32, n_mc=25, alpha=1.0,
                 hidden=KERNEL_HIDDEN, bias=False, radius=None):
        super().__init__(tag, c_in, c_out, fraction, n_mc, alpha, radius)
        self.kernel = kernel_mlp(embedding_dim(self.tag), hidden, self.c_out * self.c_in, rng,
                                 out_fan=self.c_in)
        self.bias = parameter(np.zeros(self.c_out)) if bias else None

    def __call__(self, centers, sources, f, rng=None, exact=False):
        return lieconv_forward(self, centers, sources, f, rng=rng, exact=exact)


class SeparableLieConv(_LieConvBase):
    """Depthwise LieConv (kernel MLP emits ``c_in`` weights, applied with an
    elementwise product) followed by a pointwise ``c_in -> c_out`` map."""

    def __init__(self, tag, c_in, c_out, rng, fraction=1 / 15, n_mc=81, alpha=1.0,
                 hidden=KERNEL_HIDDEN, bias=False, radius=None):
        super().__init__(tag, c_in, c_out, fraction, n_mc, alpha, radius)
        self.kernel = kernel_mlp(embedding_dim(self.tag), hidden, self.c_in, rng)
        self.pointwise = parameter(uniform_init(rng, self.c_in, (self.c_in, self.c_out)))
        self.bias = parameter(np.zeros(self.c_out)) if bias else None

    def __call__(self, centers, sources, f, rng=None, exact=False):
        return separable_lieconv_forward(self, centers, sources, f, rng=rng, exact=exact)


def lieconv_forward(layer: LieConv, centers, sources, f, rng=None, exact=False) -> Tensor:
    """``h_i = 1/n_i sum_j g(a_ij) f_j`` over the (subsampled) neighborhood.

    ``exact=True`` disables Monte Carlo subsampling. Centers with an empty
    neighborhood get zeros (plus bias, if the layer has one).
    """
    centers, sources, f, sj, emb, avg = layer._prepare(centers, sources, f, rng, exact)
    n_pairs = len(sj)
    k = layer.kernel(Tensor(emb)).reshape(n_pairs, layer.c_out, layer.c_in)
    fj = ad.take(f, sj, axis=0)
    msg = ad.batched_matvec(k, fj)
    h = layer._reduce(avg, msg, len(centers))
    return h + layer.bias if layer.bias is not None else h


def kernel_matrices(layer: LieConv, emb) -> np.ndarray:
    """Evaluate the kernel on raw pair embeddings: (P, c_out, c_in) matrices."""
    with ad.no_grad():
        out = layer.kernel(Tensor(layer.kernel_input(emb))).data
    return out.reshape(len(out), layer.c_out, layer.c_in)


def separable_lieconv_forward(layer: SeparableLieConv, centers, sources, f, rng=None,
                              exact=False) -> Tensor:
    centers, sources, f, sj, emb, avg = layer._prepare(centers, sources, f, rng, exact)
    k = layer.kernel(Tensor(emb))
    fj = ad.take(f, sj, axis=0)
    if f.ndim == 3:
        k = k.reshape(len(sj), 1, layer.c_in)
    depthwise = layer._reduce(avg, k * fj, len(centers))
    h = ad.matmul(depthwise, layer.pointwise)
    return h + layer.bias if layer.bias is not None else h
