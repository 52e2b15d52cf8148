"""Least-squares gradient boosting over regression trees.

Split search is exact greedy: every midpoint between consecutive distinct
values a feature takes inside a node is a candidate. It is implemented with
one histogram bin per distinct value of each feature, which visits the same
candidates as a sorted scan but lets a whole tree level be evaluated with a
couple of ``np.bincount`` calls over the nonzero entries of a sparse matrix.
Implicit zeros are folded into their bin by subtraction from node totals.

Rows go left when ``x <= threshold``. Gains within a small tolerance of the
best (relative to the node's centred sum of squares, plus a floor for
rounding noise) count as ties; ties go to the lowest feature index, then the
lowest threshold.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import sparse

TIE_RTOL = 1e-10
NOISE_RTOL = 1e-12


class TrainingError(ValueError):
    pass


@dataclass
class Tree:
    """Flat array form; ``feature[i] == -1`` marks a leaf."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    def depth(self) -> int:
        def d(i):
            if self.feature[i] < 0:
                return 0
            return 1 + max(d(self.left[i]), d(self.right[i]))

        return d(0)

    def leaf_for(self, x) -> int:
        """``x`` is any mapping/sequence indexable by feature id (missing -> 0)."""
        i = 0
        get = x.get if hasattr(x, "get") else None
        while self.feature[i] >= 0:
            f = int(self.feature[i])
            v = get(f, 0.0) if get else x[f]
            i = int(self.left[i]) if v <= self.threshold[i] else int(self.right[i])
        return i

    def predict_one(self, x) -> float:
        return float(self.value[self.leaf_for(x)])

    def predict(self, X) -> np.ndarray:
        cols = np.unique(self.feature[self.feature >= 0])
        n = X.shape[0]
        if cols.size == 0:
            return np.full(n, self.value[0])
        sub = X[:, cols]
        sub = sub.toarray() if sparse.issparse(sub) else np.asarray(sub, dtype=float)
        colpos = np.full(int(self.feature.max()) + 1, -1)
        colpos[cols] = np.arange(cols.size)
        node = np.zeros(n, dtype=np.int64)
        rows = np.arange(n)
        while True:
            f = self.feature[node]
            inner = f >= 0
            if not inner.any():
                break
            r, nd = rows[inner], node[inner]
            xv = sub[r, colpos[f[inner]]]
            node[inner] = np.where(xv <= self.threshold[nd], self.left[nd], self.right[nd])
        return self.value[node]

    def to_dict(self) -> dict:
        return {
            "feature": self.feature.tolist(),
            "threshold": self.threshold.tolist(),
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "value": self.value.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Tree":
        t = cls(
            np.array(d["feature"], dtype=np.int64),
            np.array(d["threshold"], dtype=float),
            np.array(d["left"], dtype=np.int64),
            np.array(d["right"], dtype=np.int64),
            np.array(d["value"], dtype=float),
        )
        n = t.n_nodes
        if n == 0 or not (len(t.threshold) == len(t.left) == len(t.right) == len(t.value) == n):
            raise ValueError("inconsistent tree arrays")
        inner = t.feature >= 0
        for arr in (t.left[inner], t.right[inner]):
            if arr.size and (arr.min() <= 0 or arr.max() >= n):
                raise ValueError("tree child index out of range")
        return t


class BinnedMatrix:
    """Feature matrix re-expressed as (row, global bin) entries."""

    def __init__(self, X):
        if sparse.issparse(X):
            coo = sparse.coo_matrix(X)
        else:
            coo = sparse.coo_matrix(np.asarray(X, dtype=float))
        coo.sum_duplicates()
        nz = coo.data != 0
        rows, cols, vals = coo.row[nz].astype(np.int64), coo.col[nz].astype(np.int64), coo.data[nz].astype(float)
        if not np.all(np.isfinite(vals)):
            raise TrainingError("feature matrix contains non-finite values")
        self.n_rows, self.n_features = coo.shape
        n, F = self.n_rows, self.n_features

        order = np.lexsort((vals, cols))
        rows, cols, vals = rows[order], cols[order], vals[order]
        nnz_per_col = np.bincount(cols, minlength=F)
        has_zero = nnz_per_col < n

        # distinct explicit values per column
        new = np.ones(len(vals), dtype=bool)
        new[1:] = (cols[1:] != cols[:-1]) | (vals[1:] != vals[:-1])
        u_cols, u_vals = cols[new], vals[new]
        distinct_rank = np.cumsum(new) - 1  # global index into (u_cols, u_vals)

        # merge in one zero bin per column that has implicit zeros, keeping value order
        z_cols = np.flatnonzero(has_zero)
        all_cols = np.concatenate([u_cols, z_cols])
        all_vals = np.concatenate([u_vals, np.zeros(len(z_cols))])
        bin_order = np.lexsort((all_vals, all_cols))
        bin_of_item = np.empty(len(bin_order), dtype=np.int64)
        bin_of_item[bin_order] = np.arange(len(bin_order))

        self.bin_feature = all_cols[bin_order]
        self.bin_value = all_vals[bin_order]
        self.n_bins = len(bin_order)
        counts = np.bincount(self.bin_feature, minlength=F)
        self.offsets = np.concatenate([[0], np.cumsum(counts)[:-1]]).astype(np.int64)
        self.seg_end = self.offsets + counts
        self.zero_cols = z_cols
        self.zero_bin = bin_of_item[len(u_cols):]

        self.entry_rows = rows
        self.entry_bins = bin_of_item[distinct_rank]
        self._csc = sparse.csc_matrix((vals, (rows, cols)), shape=(n, F))

    def column(self, j: int) -> np.ndarray:
        x = np.zeros(self.n_rows)
        lo, hi = self._csc.indptr[j], self._csc.indptr[j + 1]
        x[self._csc.indices[lo:hi]] = self._csc.data[lo:hi]
        return x


@dataclass(frozen=True)
class Split:
    feature: int
    threshold: float
    gain: float


def best_splits(bm: BinnedMatrix, slot: np.ndarray, n_slots: int, r: np.ndarray, min_samples_leaf: int) -> list:
    """Best exact split per slot (``None`` where no valid, improving split exists).

    ``slot[i]`` is the active node of row ``i`` or -1 for rows not being split.
    """
    m, B = n_slots, bm.n_bins
    live = slot >= 0
    G = np.bincount(slot[live], weights=r[live], minlength=m)
    C = np.bincount(slot[live], minlength=m).astype(float)
    SS = np.bincount(slot[live], weights=r[live] ** 2, minlength=m)

    es = slot[bm.entry_rows]
    keep = es >= 0
    idx = es[keep] * B + bm.entry_bins[keep]
    hg = np.bincount(idx, weights=r[bm.entry_rows[keep]], minlength=m * B).reshape(m, B)
    hc = np.bincount(idx, minlength=m * B).reshape(m, B).astype(float)
    if bm.zero_cols.size:
        eg = np.add.reduceat(hg, bm.offsets, axis=1)[:, bm.zero_cols]
        ec = np.add.reduceat(hc, bm.offsets, axis=1)[:, bm.zero_cols]
        hg[:, bm.zero_bin] = G[:, None] - eg
        hc[:, bm.zero_bin] = C[:, None] - ec

    cg = np.cumsum(hg, axis=1)
    cc = np.cumsum(hc, axis=1)
    before = bm.offsets - 1
    zero_pad = np.zeros((m, 1))
    cg_before = np.hstack([zero_pad, cg])[:, before + 1]
    cc_before = np.hstack([zero_pad, cc])[:, before + 1]
    GL = cg - cg_before[:, bm.bin_feature]
    CL = cc - cc_before[:, bm.bin_feature]

    nonempty = hc > 0
    pos = np.where(nonempty, np.arange(B), B)
    nxt = np.minimum.accumulate(pos[:, ::-1], axis=1)[:, ::-1]
    nxt_gt = np.hstack([nxt[:, 1:], np.full((m, 1), B)])
    seg_end = bm.seg_end[bm.bin_feature]
    CR = C[:, None] - CL
    valid = nonempty & (nxt_gt < seg_end[None, :]) & (CL >= min_samples_leaf) & (CR >= min_samples_leaf)

    s_idx, b_idx = np.nonzero(valid)
    out: list = [None] * m
    if s_idx.size == 0:
        return out
    gl, cl = GL[s_idx, b_idx], CL[s_idx, b_idx]
    gr, cr = G[s_idx] - gl, C[s_idx] - cl
    gain = gl * gl / cl + gr * gr / cr - G[s_idx] ** 2 / C[s_idx]

    bounds = np.flatnonzero(np.diff(s_idx)) + 1
    starts = np.concatenate([[0], bounds])
    ends = np.concatenate([bounds, [s_idx.size]])
    for a, b in zip(starts, ends):
        s = int(s_idx[a])
        g = gain[a:b]
        best = g.max()
        tol = TIE_RTOL * max(SS[s] - G[s] ** 2 / C[s], 0.0) + NOISE_RTOL * SS[s]
        if not best > tol:
            continue
        k = a + int(np.flatnonzero(g >= best - tol)[0])
        bin_k = int(b_idx[k])
        bin_n = int(nxt_gt[s, bin_k])
        lo, hi = bm.bin_value[bin_k], bm.bin_value[bin_n]
        thr = (lo + hi) / 2.0
        if not lo <= thr < hi:
            thr = lo
        out[s] = Split(int(bm.bin_feature[bin_k]), float(thr), float(gain[k]))
    return out


def grow_tree(bm: BinnedMatrix, r: np.ndarray, max_depth: int, min_samples_leaf: int) -> tuple[Tree, np.ndarray]:
    """Fit one tree to residuals ``r``; returns the tree and each row's leaf id."""
    feature, threshold, left, right, value = [-1], [0.0], [0], [0], [0.0]
    slot = np.zeros(bm.n_rows, dtype=np.int64)
    active = [0]
    leaf_of_row = np.zeros(bm.n_rows, dtype=np.int64)
    for depth in range(max_depth + 1):
        m = len(active)
        live = slot >= 0
        G = np.bincount(slot[live], weights=r[live], minlength=m)
        C = np.bincount(slot[live], minlength=m)
        for s, node in enumerate(active):
            value[node] = float(G[s] / C[s])
        splits = best_splits(bm, slot, m, r, min_samples_leaf) if depth < max_depth else [None] * m

        new_slot = np.full(bm.n_rows, -1, dtype=np.int64)
        new_active = []
        for s, node in enumerate(active):
            members = np.flatnonzero(slot == s)
            sp = splits[s]
            if sp is None:
                leaf_of_row[members] = node
                continue
            go_left = bm.column(sp.feature)[members] <= sp.threshold
            li, ri = len(feature), len(feature) + 1
            feature[node], threshold[node], left[node], right[node] = sp.feature, sp.threshold, li, ri
            for child, rows in ((li, members[go_left]), (ri, members[~go_left])):
                feature.append(-1)
                threshold.append(0.0)
                left.append(0)
                right.append(0)
                value.append(0.0)
                new_slot[rows] = len(new_active)
                new_active.append(child)
        if not new_active:
            break
        slot, active = new_slot, new_active
    tree = Tree(
        np.array(feature, dtype=np.int64),
        np.array(threshold, dtype=float),
        np.array(left, dtype=np.int64),
        np.array(right, dtype=np.int64),
        np.array(value, dtype=float),
    )
    return tree, leaf_of_row


@dataclass
class BoostResult:
    base_score: float
    trees: list
    train_rmse: list = field(default_factory=list)  # entry 0 is the base-score-only model


def boost(X, y, rounds: int, max_depth: int, learning_rate: float, min_samples_leaf: int) -> BoostResult:
    """Squared-error boosting: base = mean(y), each tree fits current residuals.

    Boosting stops early if a round would not lower training squared error
    (this only happens once residuals are at floating-point noise level).
    """
    y = np.asarray(y, dtype=float)
    if y.size == 0:
        raise TrainingError("no training data")
    if not np.all(np.isfinite(y)):
        raise TrainingError("non-finite target")
    if y.size < 2 * min_samples_leaf:
        raise TrainingError(f"need at least {2 * min_samples_leaf} rows for min_samples_leaf={min_samples_leaf}")
    if rounds < 1 or max_depth < 1 or min_samples_leaf < 1:
        raise TrainingError("rounds, max_depth and min_samples_leaf must be >= 1")
    if not 0.0 < learning_rate <= 1.0:
        raise TrainingError("learning_rate must be in (0, 1]")
    bm = BinnedMatrix(X)
    if bm.n_rows != y.size:
        raise TrainingError("X and y disagree on row count")

    base = float(y.mean())
    F = np.full(y.size, base)
    sse = float(np.sum((y - F) ** 2))
    result = BoostResult(base, [], [float(np.sqrt(sse / y.size))])
    for _ in range(rounds):
        r = y - F
        tree, leaf = grow_tree(bm, r, max_depth, min_samples_leaf)
        if tree.n_nodes == 1:
            break
        F_new = F + learning_rate * tree.value[leaf]
        sse_new = float(np.sum((y - F_new) ** 2))
        if sse_new > sse:
            break
        F, sse = F_new, sse_new
        result.trees.append(tree)
        result.train_rmse.append(float(np.sqrt(sse / y.size)))
    return result
