"""Local explainability queries over policies.

A query asks: does any state inside a given box map to an action inside a
given target set?  Axis-aligned trees are decided exactly by intersecting
the box with each root-to-leaf path.  Linear policies, oblique trees and
relu MLPs go through an input-splitting branch-and-bound with interval
bound propagation; pruning is conservative, SAT witnesses are re-checked
with the policy's own predict, and searches that exhaust the resolution
floor or the time budget return UNKNOWN.

Everything here is single-threaded on purpose: per-query wall time is one
of the quantities the toolkit reports, so a search must not share its
clock with anything else.  Query sets are independent; callers may farm
them out across processes.
"""

from __future__ import annotations

import math
import time
from dataclasses import InitVar, dataclass

import numpy as np

from .envs import Discrete, EnvSpec
from .errors import UnsupportedError, ValidationError
from .policies import AxisTree, LinearPolicy, ObliqueTree, ReluMlp, predict
from .rng import named_rng

SAT = "SAT"
UNSAT = "UNSAT"
UNKNOWN = "UNKNOWN"

# Resolution floor: a box dimension narrower than this fraction of the
# query box's own width in that dimension is never split again.
EPS_FRACTION = 1e-3
DEFAULT_TIMEOUT_S = 60.0
DEFAULT_QUERY_COUNT = 500


@dataclass(frozen=True)
class Query:
    """A state box plus a target action set (discrete) or box (continuous)."""

    state_lo: np.ndarray
    state_hi: np.ndarray
    action_set: tuple = ()
    n_actions: int = 0
    action_lo: object = None
    action_hi: object = None

    def __post_init__(self):
        lo = np.asarray(self.state_lo, dtype=np.float64)
        hi = np.asarray(self.state_hi, dtype=np.float64)
        if lo.ndim != 1 or lo.shape != hi.shape:
            raise ValidationError(f"inconsistent box shapes {lo.shape} / {hi.shape}")
        if not np.all(np.isfinite(lo)) or not np.all(np.isfinite(hi)):
            raise ValidationError("state box bounds must be finite")
        if np.any(lo > hi):
            raise ValidationError("empty state box")
        object.__setattr__(self, "state_lo", lo)
        object.__setattr__(self, "state_hi", hi)
        if self.action_set:
            acts = tuple(sorted(int(a) for a in self.action_set))
            if len(set(acts)) != len(acts):
                raise ValidationError("duplicate actions in target set")
            if self.n_actions < 2:
                raise ValidationError("discrete target needs n_actions >= 2")
            if not all(0 <= a < self.n_actions for a in acts):
                raise ValidationError("target action out of range")
            if len(acts) >= self.n_actions:
                raise ValidationError("target set must be a proper subset")
            if self.action_lo is not None or self.action_hi is not None:
                raise ValidationError("query cannot carry both target kinds")
            object.__setattr__(self, "action_set", acts)
        else:
            if self.action_lo is None or self.action_hi is None:
                raise ValidationError("query needs an action target")
            alo = np.asarray(self.action_lo, dtype=np.float64)
            ahi = np.asarray(self.action_hi, dtype=np.float64)
            if alo.ndim != 1 or alo.shape != ahi.shape:
                raise ValidationError("inconsistent action box shapes")
            if np.any(alo > ahi):
                raise ValidationError("empty action box")
            object.__setattr__(self, "action_lo", alo)
            object.__setattr__(self, "action_hi", ahi)

    @property
    def discrete(self) -> bool:
        return bool(self.action_set)

    @property
    def state_dim(self) -> int:
        return self.state_lo.shape[0]

    def contains_state(self, state) -> bool:
        s = np.asarray(state, dtype=np.float64)
        return bool(np.all(s >= self.state_lo) and np.all(s <= self.state_hi))

    def accepts(self, action) -> bool:
        if self.discrete:
            return int(action) in self.action_set
        a = np.atleast_1d(np.asarray(action, dtype=np.float64))
        if a.shape != self.action_lo.shape:
            return False
        return bool(np.all(a >= self.action_lo) and np.all(a <= self.action_hi))


@dataclass(frozen=True)
class Verdict:
    """Outcome of one query: SAT with a checked witness, UNSAT, or UNKNOWN."""

    status: str
    wall_time_s: float
    nodes_explored: int
    witness: object = None
    policy: InitVar[object] = None
    query: InitVar[Query] = None

    def __post_init__(self, policy, query):
        if self.status not in (SAT, UNSAT, UNKNOWN):
            raise ValidationError(f"unknown verdict status {self.status!r}")
        if self.status != SAT:
            if self.witness is not None:
                raise ValidationError("only SAT verdicts carry a witness")
            return
        if self.witness is None or policy is None or query is None:
            raise ValidationError("SAT verdict needs witness, policy and query")
        w = np.asarray(self.witness, dtype=np.float64)
        object.__setattr__(self, "witness", w)
        if not query.contains_state(w):
            raise ValidationError("witness outside the query box")
        if not query.accepts(predict(policy, w)):
            raise ValidationError("witness does not map into the target")


def gen_queries(spec: EnvSpec, n: int = DEFAULT_QUERY_COUNT, seed: int = 0) -> list:
    """Sample n random box queries inside the env's state bounds."""
    if n < 1:
        raise ValidationError("need at least one query")
    rng = named_rng("verify", "gen_queries", spec.name, seed)
    bounds = spec.bounds_array()
    queries = []
    for _ in range(n):
        draws = rng.uniform(bounds[:, 0], bounds[:, 1], size=(2, spec.state_dim))
        lo = np.minimum(draws[0], draws[1])
        hi = np.maximum(draws[0], draws[1])
        if isinstance(spec.action_kind, Discrete):
            k = spec.action_kind.n
            while True:
                mask = rng.integers(0, 2, size=k).astype(bool)
                if 0 < mask.sum() < k:
                    break
            queries.append(
                Query(lo, hi, action_set=tuple(np.flatnonzero(mask)), n_actions=k)
            )
        else:
            a_lo = np.asarray(spec.action_kind.low, dtype=np.float64)
            a_hi = np.asarray(spec.action_kind.high, dtype=np.float64)
            adraws = rng.uniform(a_lo, a_hi, size=(2, spec.action_kind.dim))
            queries.append(
                Query(
                    lo,
                    hi,
                    action_lo=np.minimum(adraws[0], adraws[1]),
                    action_hi=np.maximum(adraws[0], adraws[1]),
                )
            )
    return queries


def _box_center(lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    return np.clip(lo + 0.5 * (hi - lo), lo, hi)


def _leaf_hits(query: Query, value) -> bool:
    if query.discrete:
        return int(value) in query.action_set
    return query.accepts(np.asarray(value, dtype=np.float64))


def verify_tree(tree: AxisTree, query: Query) -> Verdict:
    """Exact SAT/UNSAT for an axis-aligned tree by path-box intersection."""
    if not isinstance(tree, AxisTree):
        raise UnsupportedError("verify_tree handles axis-aligned trees only")
    t0 = time.perf_counter()
    nodes = tree.nodes
    explored = 0
    stack = [(0, query.state_lo.copy(), query.state_hi.copy())]
    while stack:
        idx, lo, hi = stack.pop()
        explored += 1
        node = nodes[idx]
        if node.is_leaf:
            if _leaf_hits(query, node.value):
                witness = _box_center(lo, hi)
                return Verdict(
                    SAT,
                    time.perf_counter() - t0,
                    explored,
                    witness=witness,
                    policy=tree,
                    query=query,
                )
            continue
        f, t = node.feature, node.threshold
        if lo[f] <= t:
            left_hi = hi.copy()
            left_hi[f] = min(hi[f], t)
            stack.append((node.left, lo.copy(), left_hi))
        # right branch keeps states with state[f] > t; the smallest float
        # above t keeps the box closed without admitting t itself
        above = math.nextafter(t, math.inf)
        if hi[f] >= above:
            right_lo = lo.copy()
            right_lo[f] = max(lo[f], above)
            stack.append((node.right, right_lo, hi.copy()))
    return Verdict(UNSAT, time.perf_counter() - t0, explored)


def _affine_interval(weights, bias, lo, hi):
    """Interval image of W x + b over the box [lo, hi]."""
    w_pos = np.maximum(weights, 0.0)
    w_neg = np.minimum(weights, 0.0)
    out_lo = w_pos @ lo + w_neg @ hi + bias
    out_hi = w_pos @ hi + w_neg @ lo + bias
    return out_lo, out_hi


def _output_interval(policy, lo, hi):
    """Interval enclosure of the policy's raw score/output vector."""
    if isinstance(policy, LinearPolicy):
        return _affine_interval(policy.weights, policy.bias, lo, hi)
    out_lo, out_hi = lo, hi
    for i, (w, b) in enumerate(policy.layers):
        out_lo, out_hi = _affine_interval(w, b, out_lo, out_hi)
        if i < len(policy.layers) - 1:
            out_lo = np.maximum(out_lo, 0.0)
            out_hi = np.maximum(out_hi, 0.0)
    return out_lo, out_hi


def _reachable_leaves(tree, lo, hi) -> list:
    """Values of every leaf some point of the box can reach."""
    values = []
    stack = [0]
    while stack:
        node = tree.nodes[stack.pop()]
        if node.is_leaf:
            values.append(node.value)
            continue
        if hasattr(node, "feature"):
            p_lo, p_hi = lo[node.feature], hi[node.feature]
        else:
            w = np.asarray(node.weights, dtype=np.float64)
            p_lo, p_hi = _affine_interval(w[None, :], np.zeros(1), lo, hi)
            p_lo, p_hi = p_lo[0], p_hi[0]
        if p_lo <= node.threshold:
            stack.append(node.left)
        if p_hi > node.threshold:
            stack.append(node.right)
    return values


def _score_box_misses(query: Query, out_lo, out_hi) -> bool:
    """True when bounds prove no point of the box can hit the target."""
    if query.discrete:
        # action t is ruled out when some other score provably beats it;
        # strict > stays conservative under the lowest-index tie-break
        for t in query.action_set:
            beaten = False
            for a in range(out_lo.shape[0]):
                if a != t and out_lo[a] > out_hi[t]:
                    beaten = True
                    break
            if not beaten:
                return False
        return True
    return bool(
        np.any(out_hi < query.action_lo) or np.any(out_lo > query.action_hi)
    )


def _box_pruned(policy, query: Query, lo, hi) -> bool:
    if isinstance(policy, (AxisTree, ObliqueTree)):
        values = _reachable_leaves(policy, lo, hi)
        return not any(_leaf_hits(query, v) for v in values)
    out_lo, out_hi = _output_interval(policy, lo, hi)
    return _score_box_misses(query, out_lo, out_hi)


def verify_bnb(
    policy,
    query: Query,
    eps: float = EPS_FRACTION,
    timeout_s: float = DEFAULT_TIMEOUT_S,
) -> Verdict:
    """Branch and bound over the query box with interval bounds.

    eps is the resolution floor as a fraction of the query box's width in
    each dimension; boxes at the floor that neither prune nor yield a
    witness leave the verdict UNKNOWN.
    """
    if not isinstance(policy, (LinearPolicy, ObliqueTree, ReluMlp, AxisTree)):
        raise UnsupportedError(f"cannot verify {type(policy).__name__}")
    if eps <= 0.0:
        raise ValidationError("eps must be positive")
    t0 = time.perf_counter()
    widths0 = query.state_hi - query.state_lo
    floor = eps * widths0
    explored = 0
    hit_floor = False
    stack = [(query.state_lo.copy(), query.state_hi.copy())]
    while stack:
        elapsed = time.perf_counter() - t0
        if elapsed > timeout_s:
            return Verdict(UNKNOWN, elapsed, explored)
        lo, hi = stack.pop()
        explored += 1
        if _box_pruned(policy, query, lo, hi):
            continue
        center = _box_center(lo, hi)
        if query.accepts(predict(policy, center)):
            return Verdict(
                SAT,
                time.perf_counter() - t0,
                explored,
                witness=center,
                policy=policy,
                query=query,
            )
        # split the dimension that is widest relative to its floor so
        # every dimension reaches the resolution floor together
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.where(floor > 0.0, (hi - lo) / floor, 0.0)
        d = int(np.argmax(ratio))
        if ratio[d] <= 1.0:
            hit_floor = True
            continue
        mid = lo[d] + 0.5 * (hi[d] - lo[d])
        left_hi = hi.copy()
        left_hi[d] = mid
        right_lo = lo.copy()
        right_lo[d] = mid
        stack.append((lo, left_hi))
        stack.append((right_lo, hi))
    status = UNKNOWN if hit_floor else UNSAT
    return Verdict(status, time.perf_counter() - t0, explored)


def verify_policy(
    policy,
    query: Query,
    eps: float = EPS_FRACTION,
    timeout_s: float = DEFAULT_TIMEOUT_S,
) -> Verdict:
    """Route a query to the exact tree decider or the interval search."""
    if isinstance(policy, AxisTree):
        return verify_tree(policy, query)
    return verify_bnb(policy, query, eps=eps, timeout_s=timeout_s)
