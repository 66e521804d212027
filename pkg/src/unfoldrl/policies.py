"""The four baseline policy classes and their folded (native) inference.

Numeric contract: every affine map is evaluated as "products, then a strict
left-to-right sum, then the bias term".  The vectorized paths below use
``cumsum`` for the reduction, which numpy performs sequentially, so folded
inference is bit-identical to the unrolled straight-line programs produced
by :mod:`unfoldrl.unfold`.  Do not replace these reductions with ``dot`` or
``sum``; both reorder the additions.

Discrete policies break score ties toward the lowest action index.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np

from .errors import FormatError, ShapeError, ValidationError

CLASSIFY = "classify"
REGRESS = "regress"


def _affine_sequential(weights: np.ndarray, bias: np.ndarray, x: np.ndarray) -> np.ndarray:
    """rows of (w . x) + b with a sequential per-row sum (see module docstring)."""
    prods = weights * x
    acc = np.cumsum(prods, axis=1)[:, -1]
    return acc + bias


def _check_state(state, dim: int) -> np.ndarray:
    x = np.asarray(state, dtype=np.float64)
    if x.shape != (dim,):
        raise ShapeError(f"expected state of length {dim}, got shape {x.shape}")
    return x


@dataclass(frozen=True)
class LinearPolicy:
    """One affine score per output; argmax for classify, raw scores for regress."""

    weights: np.ndarray  # (outputs, state_dim)
    bias: np.ndarray  # (outputs,)
    task: str = CLASSIFY

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        b = np.asarray(self.bias, dtype=np.float64)
        if w.ndim != 2 or b.ndim != 1 or w.shape[0] != b.shape[0]:
            raise ValidationError(f"inconsistent linear shapes {w.shape} / {b.shape}")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "bias", b)

    @property
    def state_dim(self) -> int:
        return self.weights.shape[1]

    def predict(self, state):
        x = _check_state(state, self.state_dim)
        scores = _affine_sequential(self.weights, self.bias, x)
        if self.task == CLASSIFY:
            return int(np.argmax(scores))
        return scores

    def param_count(self) -> int:
        return self.weights.size + self.bias.size


@dataclass(frozen=True)
class Split:
    """Axis-aligned test: go left iff state[feature] <= threshold."""

    feature: int
    threshold: float
    left: int
    right: int

    is_leaf = False


@dataclass(frozen=True)
class ObliqueSplit:
    """Linear test: go left iff w . state <= threshold (sequential dot)."""

    weights: tuple
    threshold: float
    left: int
    right: int

    is_leaf = False

    def project(self, x) -> float:
        ws = self.weights
        acc = ws[0] * x[0]
        for i in range(1, len(ws)):
            acc = acc + ws[i] * x[i]
        return acc


@dataclass(frozen=True)
class Leaf:
    """Terminal prediction: an action index (classify) or a value tuple (regress)."""

    value: object

    is_leaf = True


def _validate_tree(nodes) -> None:
    if not nodes:
        raise ValidationError("empty tree")
    seen = set()
    stack = [0]
    while stack:
        idx = stack.pop()
        if idx in seen:
            raise ValidationError(f"node {idx} reached twice; not a tree")
        if not 0 <= idx < len(nodes):
            raise ValidationError(f"child index {idx} out of range")
        seen.add(idx)
        node = nodes[idx]
        if not node.is_leaf:
            stack.append(node.left)
            stack.append(node.right)
    if len(seen) != len(nodes):
        raise ValidationError("unreachable nodes present")


class _TreeBase:
    def __init__(self, nodes, task: str = CLASSIFY):
        self.nodes = tuple(nodes)
        self.task = task
        _validate_tree(self.nodes)

    def __eq__(self, other):
        return (
            type(self) is type(other)
            and self.task == other.task
            and self.nodes == other.nodes
        )

    def param_count(self) -> int:
        return len(self.nodes)

    def depth(self) -> int:
        def rec(idx):
            node = self.nodes[idx]
            if node.is_leaf:
                return 0
            return 1 + max(rec(node.left), rec(node.right))

        return rec(0)

    def leaf_count(self) -> int:
        return sum(1 for n in self.nodes if n.is_leaf)

    def _leaf_value(self, leaf):
        if self.task == CLASSIFY:
            return int(leaf.value)
        return np.asarray(leaf.value, dtype=np.float64)


class AxisTree(_TreeBase):
    """Decision tree over single features."""

    def predict(self, state):
        x = np.asarray(state, dtype=np.float64)
        nodes = self.nodes
        node = nodes[0]
        while not node.is_leaf:
            try:
                v = x[node.feature]
            except IndexError:
                raise ShapeError(
                    f"state of length {len(x)} but split on feature {node.feature}"
                ) from None
            node = nodes[node.left] if v <= node.threshold else nodes[node.right]
        return self._leaf_value(node)


class ObliqueTree(_TreeBase):
    """Decision tree over linear combinations of features."""

    def predict(self, state):
        x = np.asarray(state, dtype=np.float64)
        nodes = self.nodes
        node = nodes[0]
        while not node.is_leaf:
            if len(node.weights) != len(x):
                raise ShapeError(
                    f"state of length {len(x)} but split weights of length {len(node.weights)}"
                )
            node = nodes[node.left] if node.project(x) <= node.threshold else nodes[node.right]
        return self._leaf_value(node)


class ReluMlp:
    """Fully connected net, relu on hidden layers, identity output."""

    def __init__(self, layers, task: str = CLASSIFY):
        fixed = []
        for w, b in layers:
            w = np.asarray(w, dtype=np.float64)
            b = np.asarray(b, dtype=np.float64)
            if w.ndim != 2 or b.shape != (w.shape[0],):
                raise ValidationError(f"bad layer shapes {w.shape} / {b.shape}")
            if fixed and w.shape[1] != fixed[-1][0].shape[0]:
                raise ValidationError("layer shapes do not chain")
            fixed.append((w, b))
        if not fixed:
            raise ValidationError("mlp needs at least one layer")
        self.layers = fixed
        self.task = task

    def __eq__(self, other):
        return (
            isinstance(other, ReluMlp)
            and self.task == other.task
            and len(self.layers) == len(other.layers)
            and all(
                np.array_equal(w1, w2) and np.array_equal(b1, b2)
                for (w1, b1), (w2, b2) in zip(self.layers, other.layers)
            )
        )

    @property
    def state_dim(self) -> int:
        return self.layers[0][0].shape[1]

    @property
    def hidden_sizes(self) -> tuple:
        return tuple(w.shape[0] for w, _ in self.layers[:-1])

    def predict(self, state):
        x = _check_state(state, self.state_dim)
        last = len(self.layers) - 1
        for i, (w, b) in enumerate(self.layers):
            z = _affine_sequential(w, b, x)
            x = z if i == last else np.where(z > 0.0, z, 0.0)
        if self.task == CLASSIFY:
            return int(np.argmax(x))
        return x

    def param_count(self) -> int:
        return sum(w.size + b.size for w, b in self.layers)


Policy = Union[LinearPolicy, AxisTree, ObliqueTree, ReluMlp]


def predict(policy: Policy, state):
    """Folded (native) inference for any policy class."""
    return policy.predict(state)


def param_count(policy: Policy) -> int:
    return policy.param_count()


# ---------------------------------------------------------------------------
# serialization: a self-describing plain-text format, documented in
# docs/policy-format.md.  Floats are written with repr() so a round trip is
# bit exact.
# ---------------------------------------------------------------------------

_CLASS_TAGS = {
    LinearPolicy: "linear",
    AxisTree: "axis_tree",
    ObliqueTree: "oblique_tree",
    ReluMlp: "relu_mlp",
}

_MAGIC = "unfoldrl-policy v1"


def _floats(values) -> str:
    return " ".join(repr(float(v)) for v in values)


def dumps(policy: Policy) -> str:
    lines = [_MAGIC, f"class {_CLASS_TAGS[type(policy)]}", f"task {policy.task}"]
    if isinstance(policy, LinearPolicy):
        k, d = policy.weights.shape
        lines.append(f"shape {k} {d}")
        for row in policy.weights:
            lines.append("row " + _floats(row))
        lines.append("bias " + _floats(policy.bias))
    elif isinstance(policy, (AxisTree, ObliqueTree)):
        lines.append(f"nodes {len(policy.nodes)}")
        for node in policy.nodes:
            if node.is_leaf:
                if policy.task == CLASSIFY:
                    lines.append(f"leaf {int(node.value)}")
                else:
                    lines.append("leaf " + _floats(node.value))
            elif isinstance(node, Split):
                lines.append(
                    f"split {node.feature} {node.left} {node.right} {repr(float(node.threshold))}"
                )
            else:
                lines.append(
                    f"osplit {node.left} {node.right} {repr(float(node.threshold))} "
                    + _floats(node.weights)
                )
    elif isinstance(policy, ReluMlp):
        lines.append(f"layers {len(policy.layers)}")
        for w, b in policy.layers:
            lines.append(f"layer {w.shape[0]} {w.shape[1]}")
            for row in w:
                lines.append("row " + _floats(row))
            lines.append("bias " + _floats(b))
    else:
        raise ValidationError(f"unknown policy type {type(policy)!r}")
    lines.append("end")
    return "\n".join(lines) + "\n"


def save(policy: Policy, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps(policy))


class _Reader:
    def __init__(self, text: str):
        self.lines = [ln for ln in text.splitlines()]
        self.pos = 0

    def next(self) -> str:
        if self.pos >= len(self.lines):
            raise FormatError("unexpected end of policy file")
        line = self.lines[self.pos]
        self.pos += 1
        return line

    def expect(self, key: str) -> list:
        line = self.next()
        parts = line.split()
        if not parts or parts[0] != key:
            raise FormatError(f"expected {key!r}, got {line!r}")
        return parts[1:]


def _parse_floats(tokens, n: int | None = None) -> np.ndarray:
    try:
        vals = np.array([float(t) for t in tokens], dtype=np.float64)
    except ValueError as exc:
        raise FormatError(f"bad float token: {exc}") from None
    if n is not None and len(vals) != n:
        raise FormatError(f"expected {n} floats, got {len(vals)}")
    return vals


def loads(text: str) -> Policy:
    r = _Reader(text)
    if r.next() != _MAGIC:
        raise FormatError("not a policy file (bad magic line)")
    (tag,) = r.expect("class")
    (task,) = r.expect("task")
    if task not in (CLASSIFY, REGRESS):
        raise FormatError(f"unknown task {task!r}")
    try:
        if tag == "linear":
            k, d = (int(t) for t in r.expect("shape"))
            rows = [_parse_floats(r.expect("row"), d) for _ in range(k)]
            bias = _parse_floats(r.expect("bias"), k)
            policy = LinearPolicy(np.array(rows).reshape(k, d), bias, task)
        elif tag in ("axis_tree", "oblique_tree"):
            (count,) = r.expect("nodes")
            nodes = []
            for _ in range(int(count)):
                parts = r.next().split()
                if not parts:
                    raise FormatError("empty node line")
                if parts[0] == "leaf":
                    if task == CLASSIFY:
                        nodes.append(Leaf(int(parts[1])))
                    else:
                        nodes.append(Leaf(tuple(float(t) for t in parts[1:])))
                elif parts[0] == "split" and tag == "axis_tree":
                    nodes.append(
                        Split(int(parts[1]), float(parts[4]), int(parts[2]), int(parts[3]))
                    )
                elif parts[0] == "osplit" and tag == "oblique_tree":
                    nodes.append(
                        ObliqueSplit(
                            tuple(float(t) for t in parts[4:]),
                            float(parts[3]),
                            int(parts[1]),
                            int(parts[2]),
                        )
                    )
                else:
                    raise FormatError(f"bad node line {parts!r}")
            cls = AxisTree if tag == "axis_tree" else ObliqueTree
            policy = cls(nodes, task)
        elif tag == "relu_mlp":
            (count,) = r.expect("layers")
            layers = []
            for _ in range(int(count)):
                k, d = (int(t) for t in r.expect("layer"))
                rows = [_parse_floats(r.expect("row"), d) for _ in range(k)]
                bias = _parse_floats(r.expect("bias"), k)
                layers.append((np.array(rows).reshape(k, d), bias))
            policy = ReluMlp(layers, task)
        else:
            raise FormatError(f"unknown policy class {tag!r}")
    except (ValueError, IndexError, ValidationError) as exc:
        raise FormatError(f"malformed policy file: {exc}") from None
    if r.next() != "end":
        raise FormatError("missing end marker")
    return policy


def load(path) -> Policy:
    with open(path, "r", encoding="utf-8") as fh:
        return loads(fh.read())
