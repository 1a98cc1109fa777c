"""Extremely randomized regression trees.

At every node each candidate feature gets one cut drawn uniformly between
its min and max within the node; the cut with the lowest summed children
SSE wins (ties: lowest feature index). No bootstrap. Tree ``t`` draws its
randomness from a splitmix64 stream keyed on ``(seed, t)``, so results do not
depend on the order trees are built in.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .errors import ModelStateError

_MASK64 = (1 << 64) - 1
# Split scoring sums centred targets as integers on a grid of 2**-40 times the
# node's largest deviation: exact, so the result cannot depend on summation
# order or vectorization. int64 then holds sums over fewer than 2**22 rows.
_QUANT = 2.0 ** -40
MAX_ROWS = 1 << 22


@dataclass(frozen=True)
class ForestParams:
    n_trees: int = 100
    min_samples_leaf: int = 2
    max_features: str = "all"  # "all" or "sqrt"
    seed: int = 0

    def __post_init__(self):
        if int(self.n_trees) < 1:
            raise ValueError("n_trees must be >= 1")
        if int(self.min_samples_leaf) < 1:
            raise ValueError("min_samples_leaf must be >= 1")
        if self.max_features not in ("all", "sqrt"):
            raise ValueError("max_features must be 'all' or 'sqrt'")


@njit(cache=True)
def _splitmix(state):
    state[0] += np.uint64(0x9E3779B97F4A7C15)
    z = state[0]
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


@njit(cache=True)
def _uniform(state):
    return float(_splitmix(state) >> np.uint64(11)) * (1.0 / 9007199254740992.0)


@njit(cache=True, fastmath=True)
def _range(row, lo, hi):
    """(min, max) of ``row[lo:hi]`` (non-empty); unrolled so LLVM vectorizes it.
    Indexes directly: slicing inside the hot loop costs a refcount per view."""
    a0 = a1 = a2 = a3 = row[lo]
    b0 = b1 = b2 = b3 = row[lo]
    r = lo
    while r + 4 <= hi:
        v0 = row[r]
        v1 = row[r + 1]
        v2 = row[r + 2]
        v3 = row[r + 3]
        a0 = v0 if v0 < a0 else a0
        a1 = v1 if v1 < a1 else a1
        a2 = v2 if v2 < a2 else a2
        a3 = v3 if v3 < a3 else a3
        b0 = v0 if v0 > b0 else b0
        b1 = v1 if v1 > b1 else b1
        b2 = v2 if v2 > b2 else b2
        b3 = v3 if v3 > b3 else b3
        r += 4
    while r < hi:
        v = row[r]
        a0 = v if v < a0 else a0
        b0 = v if v > b0 else b0
        r += 1
    return min(min(a0, a1), min(a2, a3)), max(max(b0, b1), max(b2, b3))


@njit(cache=True, inline="always")
def _constant(row, lo, hi):
    v = row[lo]
    for r in range(lo + 1, hi):
        if row[r] != v:
            return False
    return True


@njit(cache=True, inline="always")
def _score_cut(row, yq, m, cut):
    """Row count and quantized target sum at or left of ``cut``."""
    nl = 0
    sl = 0
    for r in range(m):
        if row[r] <= cut:
            nl += 1
            sl += yq[r]
    return nl, sl


@njit(cache=True)
def _fit_forest(X, y, n_trees, min_leaf, n_sub, seed):
    n, d = X.shape
    max_nodes = 2 * n - 1
    feat = np.empty(n_trees * max_nodes, dtype=np.int32)
    thr = np.empty(n_trees * max_nodes)
    left = np.empty(n_trees * max_nodes, dtype=np.int32)
    right = np.empty(n_trees * max_nodes, dtype=np.int32)
    value = np.empty(n_trees * max_nodes)
    roots = np.zeros(n_trees, dtype=np.int64)

    # Working copies: buffer 2 holds the training data and feeds every root;
    # below that, a node's rows form a contiguous block in buffer 0 or 1 and
    # its children's rows are scattered into the other one.
    W = np.empty((3, d, n))
    W[2] = X.T
    yw = np.empty((3, n))
    yw[2] = y
    yc = np.empty(n)
    yq = np.empty(n, dtype=np.int64)
    # per-node feature ranges travel on the stack; children get theirs during the partition
    stack_node = np.empty(n, dtype=np.int64)
    stack_lo = np.empty(n, dtype=np.int64)
    stack_hi = np.empty(n, dtype=np.int64)
    stack_buf = np.empty(n, dtype=np.int64)
    stack_min = np.empty((n, d))
    stack_max = np.empty((n, d))
    root_min = np.empty(d)
    root_max = np.empty(d)
    for f in range(d):
        root_min[f], root_max[f] = _range(W[2, f], 0, n)
    fmin = np.empty(d)
    fmax = np.empty(d)
    cand = np.empty(d, dtype=np.int64)
    dest = np.empty(n, dtype=np.int64)
    state = np.zeros(1, dtype=np.uint64)

    pos = 0
    for t in range(n_trees):
        state[0] = seed
        state[0] = _splitmix(state) ^ (np.uint64(t) * np.uint64(0xD1B54A32D192ED03))
        roots[t] = pos
        pos += 1
        stack_node[0] = roots[t]
        stack_lo[0] = 0
        stack_hi[0] = n
        stack_buf[0] = 2
        for f in range(d):
            stack_min[0, f] = root_min[f]
            stack_max[0, f] = root_max[f]
        sp = 1
        while sp > 0:
            sp -= 1
            node = stack_node[sp]
            lo = stack_lo[sp]
            hi = stack_hi[sp]
            b = stack_buf[sp]
            m = hi - lo
            yn = yw[b, lo:hi]
            s = 0.0
            for r in range(m):
                s += yn[r]
            mean = s / m
            value[node] = mean
            feat[node] = -1
            thr[node] = 0.0
            left[node] = -1
            right[node] = -1
            if m < 2 * min_leaf or _constant(yn, 0, m):
                continue
            n_cand = 0
            for f in range(d):
                fmin[f] = stack_min[sp, f]
                fmax[f] = stack_max[sp, f]
                if fmax[f] > fmin[f]:
                    cand[n_cand] = f
                    n_cand += 1
            if n_cand == 0:
                continue
            if n_sub < n_cand:
                # partial Fisher-Yates, then restore ascending order
                for i in range(n_sub):
                    j = i + int(_uniform(state) * (n_cand - i))
                    tmp = cand[i]
                    cand[i] = cand[j]
                    cand[j] = tmp
                cand[:n_sub].sort()
                n_cand = n_sub
            amax = 0.0
            for r in range(m):
                v = yn[r] - mean
                yc[r] = v
                amax = max(amax, abs(v))
            # integer partial sums are exact, so their order cannot matter
            step = amax * _QUANT
            if not step > 0.0:  # deviations near the subnormal range
                step = amax
            st = 0
            for r in range(m):
                yq[r] = int(np.rint(yc[r] / step))
                st += yq[r]
            best_f = -1
            best_cut = 0.0
            best_gain = -np.inf
            for c in range(n_cand):
                f = cand[c]
                cut = fmin[f] + _uniform(state) * (fmax[f] - fmin[f])
                nl, slq = _score_cut(W[b, f, lo:hi], yq, m, cut)
                nr = m - nl
                if nl < min_leaf or nr < min_leaf:
                    continue
                # children SSE is the node's SSE minus this gain; a single sum
                # keeps mirrored partitions (left and right swapped) bitwise tied
                sl = slq * step
                sr = (st - slq) * step
                gain = sl * sl / nl + sr * sr / nr
                if gain > best_gain:
                    best_gain = gain
                    best_f = f
                    best_cut = cut
            if best_f < 0:
                continue
            # stable partition: destinations computed once, then scattered per row
            split_row = W[b, best_f, lo:hi]
            nl = 0
            for r in range(m):
                nl += 1 if split_row[r] <= best_cut else 0
            li = 0
            ri = nl
            for r in range(m):
                go = 1 if split_row[r] <= best_cut else 0
                dest[r] = go * li + (1 - go) * ri
                li += go
                ri += 1 - go
            nb = 1 if b == 0 else 0
            ychild = yw[nb, lo:hi]
            for r in range(m):
                ychild[dest[r]] = yn[r]
            # children that will stop at their own pop never read W or their ranges again
            grow_l = nl >= 2 * min_leaf and not _constant(ychild, 0, nl)
            grow_r = m - nl >= 2 * min_leaf and not _constant(ychild, nl, m)
            r_slot = sp
            l_slot = sp + 1
            if grow_l or grow_r:
                for f in range(d):
                    if not fmax[f] > fmin[f]:
                        # constant here, so never split on again: no need to move its values
                        stack_min[l_slot, f] = stack_min[r_slot, f] = fmin[f]
                        stack_max[l_slot, f] = stack_max[r_slot, f] = fmax[f]
                        continue
                    src = W[b, f, lo:hi]
                    dst = W[nb, f, lo:hi]
                    for r in range(m):
                        dst[dest[r]] = src[r]
                    if grow_l:
                        stack_min[l_slot, f], stack_max[l_slot, f] = _range(dst, 0, nl)
                    if grow_r:
                        stack_min[r_slot, f], stack_max[r_slot, f] = _range(dst, nl, m)
            i = lo + nl
            feat[node] = best_f
            thr[node] = best_cut
            left[node] = pos
            right[node] = pos + 1
            stack_node[r_slot] = pos + 1
            stack_lo[r_slot] = i
            stack_hi[r_slot] = hi
            stack_buf[r_slot] = nb
            stack_node[l_slot] = pos
            stack_lo[l_slot] = lo
            stack_hi[l_slot] = i
            stack_buf[l_slot] = nb
            sp += 2
            pos += 2
    return feat[:pos].copy(), thr[:pos].copy(), left[:pos].copy(), right[:pos].copy(), value[:pos].copy(), roots


@njit(cache=True)
def _predict_forest(feat, thr, left, right, value, roots, Xq):
    nq = Xq.shape[0]
    nt = roots.shape[0]
    out = np.empty((nq, nt))
    for q in range(nq):
        for t in range(nt):
            node = roots[t]
            while feat[node] >= 0:
                if Xq[q, feat[node]] <= thr[node]:
                    node = left[node]
                else:
                    node = right[node]
            out[q, t] = value[node]
    return out


@dataclass(frozen=True)
class ForestModel:
    params: ForestParams
    feature_dim: int
    feature: np.ndarray = field(repr=False)
    threshold: np.ndarray = field(repr=False)
    left: np.ndarray = field(repr=False)
    right: np.ndarray = field(repr=False)
    value: np.ndarray = field(repr=False)
    roots: np.ndarray = field(repr=False)

    @property
    def n_trees(self) -> int:
        return len(self.roots)

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    def tree_predictions(self, X) -> np.ndarray:
        """Per-tree predictions, shape (n_queries, n_trees)."""
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if X.shape[1] != self.feature_dim:
            raise ValueError(f"expected {self.feature_dim} features, got {X.shape[1]}")
        if not np.all(np.isfinite(X)):
            raise ValueError("query features must be finite")
        return _predict_forest(self.feature, self.threshold, self.left, self.right,
                               self.value, self.roots, np.ascontiguousarray(X))

    def predict(self, X) -> tuple:
        per_tree = self.tree_predictions(X)
        # shift by the first tree so agreeing trees give an exact mean and zero variance
        first = per_tree[:, :1]
        dev = per_tree - first
        return first[:, 0] + dev.mean(axis=1), dev.var(axis=1)


def forest_fit(X, y, params: ForestParams = ForestParams()) -> ForestModel:
    X = np.ascontiguousarray(np.atleast_2d(np.asarray(X, dtype=np.float64)))
    y = np.ascontiguousarray(np.asarray(y, dtype=np.float64).ravel())
    if len(y) == 0 or X.shape[0] == 0:
        raise ValueError("cannot fit a forest on an empty training set")
    if X.shape[0] != len(y):
        raise ValueError("X and y have different lengths")
    if len(y) >= MAX_ROWS:
        raise ValueError(f"at most {MAX_ROWS - 1} training rows are supported")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise ValueError("training data must be finite")
    d = X.shape[1]
    n_sub = d if params.max_features == "all" else max(1, int(math.ceil(math.sqrt(d))))
    seed = np.uint64(int(params.seed) & _MASK64)
    arrays = _fit_forest(X, y, int(params.n_trees), int(params.min_samples_leaf), n_sub, seed)
    return ForestModel(params, d, *arrays)


def forest_predict(m, x) -> tuple:
    """(mean, population variance) of the per-tree predictions at one input."""
    if m is None:
        raise ModelStateError("forest has not been fitted")
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError("forest_predict expects a single feature vector")
    mean, var = m.predict(x[None, :])
    return float(mean[0]), float(var[0])
