"""Weighted supervised fitting of each policy class.

All fitters are deterministic functions of (data, seed).  Sample weights obey
the replication axiom: weight k behaves like k unit-weight copies.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass

import numpy as np

from . import nn
from .errors import ConfigError, ValidationError
from .policies import (
    CLASSIFY,
    REGRESS,
    AxisTree,
    Leaf,
    LinearPolicy,
    ObliqueSplit,
    ObliqueTree,
    Policy,
    ReluMlp,
    Split,
)
from .rng import named_rng

TREE_KINDS = ("axis_tree", "oblique_tree")
KINDS = ("linear",) + TREE_KINDS + ("relu_mlp",)

# grids used by the sweeps
TREE_NODE_GRID = (4, 8, 16, 64, 128)
MLP_HIDDEN_GRID = ((2, 2), (4, 4), (8, 8), (16, 16))

_GAIN_EPS = 1e-12  # absorbs float dust so pure nodes never split


@dataclass
class LabeledSet:
    """States with target actions and nonnegative sample weights."""

    states: np.ndarray
    labels: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=np.float64)
        self.labels = np.asarray(self.labels)
        self.weights = np.asarray(self.weights, dtype=np.float64)
        n = len(self.states)
        if len(self.labels) != n or len(self.weights) != n:
            raise ValidationError("states, labels, weights must have equal length")
        if n == 0:
            raise ValidationError("empty labeled set")
        if not np.all(np.isfinite(self.states)) or not np.all(np.isfinite(self.weights)):
            raise ValidationError("non-finite states or weights")
        if np.any(self.weights < 0) or not np.any(self.weights > 0):
            raise ValidationError("weights must be >= 0 with at least one > 0")

    def __len__(self) -> int:
        return len(self.states)

    @staticmethod
    def concat(parts) -> "LabeledSet":
        return LabeledSet(
            np.concatenate([p.states for p in parts]),
            np.concatenate([p.labels for p in parts]),
            np.concatenate([p.weights for p in parts]),
        )


@dataclass(frozen=True)
class ClassSpec:
    """Which policy class to fit and at what size.

    size: internal-node budget for trees, (h1, h2) hidden widths for the mlp,
    None for linear.
    """

    kind: str
    size: object = None
    n_directions: int = 8
    iters: int = 500

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown policy class {self.kind!r}")
        if self.kind == "linear" and self.size is not None:
            raise ConfigError("linear policies take no size")
        if self.kind in TREE_KINDS and (not isinstance(self.size, int) or self.size < 1):
            raise ConfigError(f"tree node budget must be a positive int, got {self.size!r}")
        if self.kind == "relu_mlp":
            size = self.size
            if not (isinstance(size, tuple) and size and all(isinstance(h, int) and h >= 1 for h in size)):
                raise ConfigError(f"mlp hidden sizes must be a tuple of positive ints, got {size!r}")

    def label(self) -> str:
        if self.kind == "linear":
            return "linear"
        if self.kind == "relu_mlp":
            return "relu_mlp-" + "x".join(str(h) for h in self.size)
        return f"{self.kind}-{self.size}"


def class_spec_from_label(label: str) -> ClassSpec:
    """Inverse of ClassSpec.label(): 'axis_tree-16', 'relu_mlp-8x8', 'linear'."""
    label = label.strip()
    if label == "linear":
        return ClassSpec("linear")
    kind, sep, size = label.rpartition("-")
    if not sep or not size:
        raise ConfigError(f"cannot parse class label {label!r}")
    try:
        if kind == "relu_mlp":
            return ClassSpec(kind, tuple(int(h) for h in size.split("x")))
        return ClassSpec(kind, int(size))
    except (ValueError, ConfigError) as exc:
        raise ConfigError(f"cannot parse class label {label!r}: {exc}") from None


def fit(data: LabeledSet, task: str, spec: ClassSpec, seed: int = 0,
        n_classes: int | None = None) -> Policy:
    """Dispatch to the fitter for spec.kind."""
    if spec.kind == "linear":
        return fit_linear(data, task, n_classes=n_classes)
    if spec.kind == "axis_tree":
        return fit_cart(data, task, spec.size, n_classes=n_classes)
    if spec.kind == "oblique_tree":
        return fit_oblique(data, task, spec.size, spec.n_directions, seed,
                           n_classes=n_classes)
    return fit_mlp(data, task, spec.size, iters=spec.iters, seed=seed,
                   n_classes=n_classes)


# ---------------------------------------------------------------------------
# linear
# ---------------------------------------------------------------------------

def _class_count(labels: np.ndarray, n_classes: int | None) -> int:
    k = int(labels.max()) + 1 if len(labels) else 1
    return max(k, n_classes or 1, 2)


def _weighted_moments(x: np.ndarray, w: np.ndarray):
    total = w.sum()
    mu = (w[:, None] * x).sum(axis=0) / total
    var = (w[:, None] * (x - mu) ** 2).sum(axis=0) / total
    sd = np.sqrt(var)
    sd[sd < 1e-12] = 1.0
    return mu, sd


def fit_linear(data: LabeledSet, task: str, n_classes: int | None = None,
               max_steps: int = 2000, tol: float = 1e-6) -> LinearPolicy:
    """Classify: one-vs-rest logistic regression by plain gradient descent.
    Regress: weighted least squares via ridge normal equations.
    """
    x = data.states
    w = data.weights
    n, d = x.shape
    if task == REGRESS:
        y = np.asarray(data.labels, dtype=np.float64)
        if y.ndim == 1:
            y = y[:, None]
        xa = np.concatenate([x, np.ones((n, 1))], axis=1)
        a = xa.T @ (w[:, None] * xa) + 1e-8 * np.eye(d + 1)
        b = xa.T @ (w[:, None] * y)
        beta = np.linalg.solve(a, b)
        return LinearPolicy(beta[:d].T, beta[d], REGRESS)

    labels = np.asarray(data.labels, dtype=np.int64)
    k = _class_count(labels, n_classes)
    mu, sd = _weighted_moments(x, w)
    xs = (x - mu) / sd
    xa = np.concatenate([xs, np.ones((n, 1))], axis=1)
    total = w.sum()
    # guaranteed-stable step size: 1 / Lipschitz bound of the weighted BCE grad
    hess_bound = 0.25 * (xa.T @ ((w / total)[:, None] * xa))
    lip = float(np.linalg.eigvalsh(hess_bound)[-1])
    lr = 1.0 / max(lip, 1e-12)
    weights_rows = []
    bias_rows = []
    for cls in range(k):
        target = (labels == cls).astype(np.float64)
        beta = np.zeros(d + 1)
        for _ in range(max_steps):
            p = 1.0 / (1.0 + np.exp(-(xa @ beta)))
            grad = xa.T @ (w * (p - target)) / total
            if float(np.linalg.norm(grad)) < tol:
                break
            beta = beta - lr * grad
        weights_rows.append(beta[:d] / sd)
        bias_rows.append(beta[d] - float(np.sum(beta[:d] * mu / sd)))
    return LinearPolicy(np.array(weights_rows), np.array(bias_rows), CLASSIFY)


# ---------------------------------------------------------------------------
# trees: best-first CART over axis or projected features
# ---------------------------------------------------------------------------

def _leaf_for(y, w, task: str, k: int):
    if task == CLASSIFY:
        counts = np.zeros(k)
        np.add.at(counts, y, w)
        return Leaf(int(np.argmax(counts)))
    mean = (w[:, None] * y).sum(axis=0) / w.sum()
    return Leaf(tuple(float(v) for v in mean))


def _node_impurity(y, w, task: str, k: int) -> float:
    total = w.sum()
    if total <= 0:
        return 0.0
    if task == CLASSIFY:
        counts = np.zeros(k)
        np.add.at(counts, y, w)
        return float(1.0 - np.sum((counts / total) ** 2))
    mean = (w[:, None] * y).sum(axis=0) / total
    return float(np.sum((w[:, None] * (y - mean) ** 2).sum(axis=0)) / total)


def _best_split(z, y, w, task: str, k: int):
    """Best (column, threshold, gain) over the feature matrix z, or None.

    gain is the unscaled impurity decrease at this node.  Ties break toward
    the lowest column then the lowest threshold.
    """
    n, cols = z.shape
    total = w.sum()
    parent = _node_impurity(y, w, task, k)
    best = None
    for col in range(cols):
        xs = z[:, col]
        order = np.argsort(xs, kind="stable")
        xo = xs[order]
        wo = w[order]
        cuts = np.nonzero(xo[:-1] < xo[1:])[0]
        if len(cuts) == 0:
            continue
        wl = np.cumsum(wo)[cuts]
        wr = total - wl
        ok = (wl > 0) & (wr > 0)
        if not np.any(ok):
            continue
        if task == CLASSIFY:
            onehot = wo[:, None] * (y[order][:, None] == np.arange(k))
            cl = np.cumsum(onehot, axis=0)[cuts]
            cr = onehot.sum(axis=0) - cl
            with np.errstate(divide="ignore", invalid="ignore"):
                il = 1.0 - np.sum((cl / wl[:, None]) ** 2, axis=1)
                ir = 1.0 - np.sum((cr / wr[:, None]) ** 2, axis=1)
        else:
            yo = y[order]
            sy = np.cumsum(wo[:, None] * yo, axis=0)
            sy2 = np.cumsum(wo[:, None] * yo * yo, axis=0)
            tl, tl2 = sy[cuts], sy2[cuts]
            tr, tr2 = sy[-1] - tl, sy2[-1] - tl2
            with np.errstate(divide="ignore", invalid="ignore"):
                il = np.sum(np.maximum(tl2 / wl[:, None] - (tl / wl[:, None]) ** 2, 0.0), axis=1)
                ir = np.sum(np.maximum(tr2 / wr[:, None] - (tr / wr[:, None]) ** 2, 0.0), axis=1)
        gains = parent - (wl * il + wr * ir) / total
        gains[~ok] = -np.inf
        pos = int(np.argmax(gains))
        gain = float(gains[pos])
        if gain <= _GAIN_EPS:
            continue
        if best is None or gain > best[2]:
            cut = cuts[pos]
            lo, hi = float(xo[cut]), float(xo[cut + 1])
            t = (lo + hi) / 2.0
            if t >= hi:  # adjacent floats: keep the boundary below hi
                t = lo
            best = (col, t, gain)
    return best


def _grow_tree(z, y, w, task: str, k: int, max_nodes: int):
    """Best-first growth; returns the node list (columns of z as features)."""
    nodes = [None]
    root_idx = np.arange(len(z))
    total = w.sum()
    heap = []
    counter = 0

    def consider(slot: int, idx: np.ndarray):
        nonlocal counter
        nodes[slot] = _leaf_for(y[idx], w[idx], task, k)
        if len(idx) < 2:
            return
        found = _best_split(z[idx], y[idx], w[idx], task, k)
        if found is None:
            return
        col, t, gain = found
        key = gain * (w[idx].sum() / total)
        heapq.heappush(heap, (-key, counter, slot, col, t, idx))
        counter += 1

    consider(0, root_idx)
    leaves = 1
    while heap and leaves < 2 * max_nodes:
        _, _, slot, col, t, idx = heapq.heappop(heap)
        mask = z[idx, col] <= t
        left_idx, right_idx = idx[mask], idx[~mask]
        li, ri = len(nodes), len(nodes) + 1
        nodes.extend([None, None])
        nodes[slot] = (col, t, li, ri)
        consider(li, left_idx)
        consider(ri, right_idx)
        leaves += 1
    return nodes


def _as_regression(labels) -> np.ndarray:
    y = np.asarray(labels, dtype=np.float64)
    return y[:, None] if y.ndim == 1 else y


def fit_cart(data: LabeledSet, task: str, max_nodes: int,
             n_classes: int | None = None) -> AxisTree:
    """Greedy CART limited to 2*max_nodes leaves."""
    if task == CLASSIFY:
        y = np.asarray(data.labels, dtype=np.int64)
        k = _class_count(y, n_classes)
    else:
        y = _as_regression(data.labels)
        k = y.shape[1]
    raw = _grow_tree(data.states, y, data.weights, task, k, max_nodes)
    nodes = [n if isinstance(n, Leaf) else Split(n[0], n[1], n[2], n[3]) for n in raw]
    return AxisTree(nodes, task)


def fit_oblique(data: LabeledSet, task: str, max_nodes: int,
                n_directions: int = 8, seed: int = 0,
                n_classes: int | None = None,
                extra_directions=None) -> ObliqueTree:
    """CART skeleton over axis directions plus seeded random unit directions.

    extra_directions: optional (m, d) array of additional candidate split
    directions, used as given.
    """
    x = data.states
    d = x.shape[1]
    dirs = [np.eye(d)]
    if n_directions > 0:
        rng = named_rng("fit_oblique", seed, "directions")
        extra = rng.normal(size=(n_directions, d))
        norms = np.linalg.norm(extra, axis=1, keepdims=True)
        norms[norms < 1e-12] = 1.0
        dirs.append(extra / norms)
    if extra_directions is not None:
        dirs.append(np.asarray(extra_directions, dtype=np.float64).reshape(-1, d))
    directions = np.concatenate(dirs, axis=0)
    z = x @ directions.T
    if task == CLASSIFY:
        y = np.asarray(data.labels, dtype=np.int64)
        k = _class_count(y, n_classes)
    else:
        y = _as_regression(data.labels)
        k = y.shape[1]
    raw = _grow_tree(z, y, data.weights, task, k, max_nodes)
    nodes = [
        n if isinstance(n, Leaf)
        else ObliqueSplit(tuple(float(v) for v in directions[n[0]]), n[1], n[2], n[3])
        for n in raw
    ]
    return ObliqueTree(nodes, task)


# ---------------------------------------------------------------------------
# mlp
# ---------------------------------------------------------------------------

MLP_BATCH_SIZE = 200


def fit_mlp(data: LabeledSet, task: str, hidden, iters: int = 500,
            seed: int = 0, n_classes: int | None = None) -> ReluMlp:
    """Minibatch Adam from a He-uniform init.

    `iters` counts epochs: each epoch visits every sample once in a seeded
    shuffled order, in batches of at most 200, with Adam state carried
    across batches.  Datasets of up to 200 samples therefore train exactly
    as full-batch gradient descent would.
    """
    x = data.states
    w = data.weights
    d = x.shape[1]
    if task == CLASSIFY:
        labels = np.asarray(data.labels, dtype=np.int64)
        out = _class_count(labels, n_classes)
    else:
        targets = _as_regression(data.labels)
        out = targets.shape[1]
    sizes = [d, *hidden, out]
    rng = named_rng("fit_mlp", seed)
    layers = nn.he_uniform_init(sizes, rng)
    opt = nn.Adam(layers)
    n = x.shape[0]
    batch = min(MLP_BATCH_SIZE, n)
    for _ in range(iters):
        order = rng.permutation(n) if n > batch else np.arange(n)
        for start in range(0, n, batch):
            idx = order[start:start + batch]
            scores, acts = nn.forward(layers, x[idx])
            if task == CLASSIFY:
                _, dout = nn.weighted_softmax_ce(scores, labels[idx], w[idx])
            else:
                _, dout = nn.weighted_mse(scores, targets[idx], w[idx])
            grads = nn.backward(layers, acts, dout)
            layers = opt.step(layers, grads)
    return ReluMlp(layers, task)


def training_loss(policy: ReluMlp, data: LabeledSet, task: str) -> float:
    """Weighted loss of an mlp on a labeled set (descent sanity checks)."""
    scores, _ = nn.forward(policy.layers, data.states)
    if task == CLASSIFY:
        loss, _ = nn.weighted_softmax_ce(scores, np.asarray(data.labels, dtype=np.int64), data.weights)
    else:
        loss, _ = nn.weighted_mse(scores, _as_regression(data.labels), data.weights)
    return loss
