"""k-ary tree geometry, broadcast sampling and brute-force oracles.

Vertices are indexed breadth-first: the root is 0 and the children of ``v``
are ``k*v + 1, ..., k*v + k``.  Configurations serialize as 0/1 strings in
that order.
"""
from __future__ import annotations

import enum
import itertools
from dataclasses import dataclass
from functools import lru_cache
from typing import Iterator, Sequence

import numpy as np

from .errors import CapacityError, ConditioningError, ParameterError
from .model import ModelParams

MAX_ENUM_LEAVES = 20
MAX_ENUM_VERTICES = 24

# odd 64-bit constant used to spread worker indices over the seed space
_SEED_MIX = 0x9E3779B97F4A7C15
_MASK64 = (1 << 64) - 1


def worker_seed(master_seed: int, worker: int) -> int:
    """Seed of stream ``worker``: master_seed XOR (worker * 0x9E3779B97F4A7C15 mod 2**64)."""
    return (int(master_seed) ^ ((int(worker) * _SEED_MIX) & _MASK64)) & _MASK64


def worker_rngs(master_seed: int, workers: int) -> list[np.random.Generator]:
    return [np.random.default_rng(worker_seed(master_seed, i)) for i in range(workers)]


class RootCondition(str, enum.Enum):
    FREE = "free"
    ZERO = "zero"
    ONE = "one"


@dataclass(frozen=True)
class TreeShape:
    k: int
    depth: int

    def __post_init__(self):
        if int(self.k) != self.k or self.k < 1:
            raise ParameterError(f"k must be an integer >= 1, got {self.k!r}")
        if int(self.depth) != self.depth or self.depth < 0:
            raise ParameterError(f"depth must be an integer >= 0, got {self.depth!r}")

    def level_start(self, d: int) -> int:
        if self.k == 1:
            return d
        return (self.k**d - 1) // (self.k - 1)

    @property
    def n_vertices(self) -> int:
        return self.level_start(self.depth + 1)

    @property
    def n_leaves(self) -> int:
        return self.k**self.depth

    @property
    def n_internal(self) -> int:
        return self.n_vertices - self.n_leaves

    @property
    def leaf_start(self) -> int:
        return self.level_start(self.depth)

    def parent(self, v: int) -> int:
        return (v - 1) // self.k

    def children(self, v: int) -> range:
        if v >= self.leaf_start:
            return range(0)
        return range(self.k * v + 1, self.k * v + self.k + 1)


@dataclass(frozen=True)
class Configuration:
    shape: TreeShape
    states: tuple[int, ...]

    def __post_init__(self):
        if len(self.states) != self.shape.n_vertices:
            raise ParameterError(
                f"configuration has {len(self.states)} states, shape needs "
                f"{self.shape.n_vertices}"
            )

    @classmethod
    def from_string(cls, shape: TreeShape, text: str) -> "Configuration":
        return cls(shape, tuple(int(c) for c in text.strip()))

    def to_string(self) -> str:
        return "".join(str(s) for s in self.states)

    @property
    def root(self) -> int:
        return self.states[0]

    @property
    def leaves(self) -> tuple[int, ...]:
        return self.states[self.shape.leaf_start:]

    def violations(self) -> list[tuple[int, int]]:
        """Edges (parent, child) with both endpoints occupied."""
        s = self.states
        return [
            (self.shape.parent(v), v)
            for v in range(1, len(s))
            if s[v] == 1 and s[self.shape.parent(v)] == 1
        ]

    def is_independent(self) -> bool:
        return not self.violations()


@dataclass(frozen=True)
class FugacityAssignment:
    shape: TreeShape
    values: tuple[float, ...]

    def __post_init__(self):
        if len(self.values) != self.shape.n_vertices:
            raise ParameterError("one fugacity per vertex is required")
        for f in self.values:
            if not (np.isfinite(f) and f > 0):
                raise ParameterError(f"fugacities must be positive and finite, got {f}")


def site_fugacities(params: ModelParams, shape: TreeShape, root: str = "root") -> FugacityAssignment:
    """Site weights under which the Gibbs measure equals the broadcast measure.

    Internal vertices get ``lambda_internal``, leaves get ``omega`` and the
    root gets ``lambda_root`` (``root="root"``) or ``lambda_internal``
    (``root="internal"``).  A depth-0 tree is a lone leaf-root whose
    broadcast weight is pi1/pi0 = omega/(1+omega).
    """
    if root not in ("root", "internal"):
        raise ParameterError(f"root must be 'root' or 'internal', got {root!r}")
    n = shape.n_vertices
    vals = [params.lambda_internal] * n
    for v in range(shape.leaf_start, n):
        vals[v] = params.omega
    if shape.depth == 0:
        vals[0] = params.omega / (1.0 + params.omega)
    elif root == "root":
        vals[0] = params.lambda_root
    return FugacityAssignment(shape, tuple(vals))


def _root_state(cond: RootCondition | str, params: ModelParams, n: int, rng) -> np.ndarray:
    cond = RootCondition(cond)
    if cond is RootCondition.ONE:
        return np.ones(n, dtype=np.int8)
    if cond is RootCondition.ZERO:
        return np.zeros(n, dtype=np.int8)
    return (rng.random(n) < params.pi1).astype(np.int8)


def sample_broadcast_batch(
    params: ModelParams,
    shape: TreeShape,
    n: int,
    root_condition: RootCondition | str = RootCondition.FREE,
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """Draw ``n`` broadcast configurations as an ``(n, n_vertices)`` int8 array."""
    rng = np.random.default_rng() if rng is None else rng
    if params.k != shape.k:
        raise ParameterError(f"params.k={params.k} does not match shape.k={shape.k}")
    out = np.empty((n, shape.n_vertices), dtype=np.int8)
    out[:, 0] = _root_state(root_condition, params, n, rng)
    p01 = params.p(0, 1)
    for d in range(1, shape.depth + 1):
        a, b = shape.level_start(d), shape.level_start(d + 1)
        pa, pb = shape.level_start(d - 1), a
        parents = np.repeat(out[:, pa:pb], shape.k, axis=1)
        u = rng.random((n, b - a))
        # parent 1 forces 0; parent 0 gives 1 with probability p01
        out[:, a:b] = ((parents == 0) & (u < p01)).astype(np.int8)
    return out


def sample_broadcast(
    params: ModelParams,
    shape: TreeShape,
    root_condition: RootCondition | str = RootCondition.FREE,
    rng: np.random.Generator | None = None,
) -> Configuration:
    arr = sample_broadcast_batch(params, shape, 1, root_condition, rng)
    return Configuration(shape, tuple(int(x) for x in arr[0]))


def _independent_sets(shape: TreeShape, fixed: dict[int, int] | None = None) -> Iterator[tuple[int, ...]]:
    """Valid configurations in lexicographic order of the breadth-first string."""
    n = shape.n_vertices
    fixed = fixed or {}
    states = [0] * n

    def rec(v: int):
        if v == n:
            yield tuple(states)
            return
        options = (fixed[v],) if v in fixed else (0, 1)
        for s in options:
            if s == 1 and v > 0 and states[shape.parent(v)] == 1:
                continue
            states[v] = s
            yield from rec(v + 1)
        states[v] = 0

    yield from rec(0)


def enumerate_configurations(shape: TreeShape, leaves_only: bool = False):
    """Exhaustive listing in lexicographic order.

    With ``leaves_only`` the result is every 0/1 leaf pattern (tuples);
    otherwise every valid independent set as a :class:`Configuration`.
    """
    if leaves_only:
        if shape.n_leaves > MAX_ENUM_LEAVES:
            raise CapacityError(
                f"{shape.n_leaves} leaves exceeds the enumeration cap of {MAX_ENUM_LEAVES}"
            )
        return list(itertools.product((0, 1), repeat=shape.n_leaves))
    if shape.n_vertices > MAX_ENUM_VERTICES:
        raise CapacityError(
            f"{shape.n_vertices} vertices exceeds the enumeration cap of {MAX_ENUM_VERTICES}"
        )
    return [Configuration(shape, s) for s in _independent_sets(shape)]


def _edge_product(params: ModelParams, shape: TreeShape, states: Sequence[int]) -> float:
    prob = 1.0
    for v in range(1, len(states)):
        prob *= params.p(states[shape.parent(v)], states[v])
        if prob == 0.0:
            break
    return prob


def broadcast_probability(
    params: ModelParams,
    config: Configuration,
    root_condition: RootCondition | str = RootCondition.FREE,
) -> float:
    """pi(root) * prod over edges of M[parent][child]; clamped roots drop pi."""
    cond = RootCondition(root_condition)
    root = config.root
    if cond is RootCondition.FREE:
        head = params.prior(root)
    elif cond is RootCondition.ONE:
        head = 1.0 if root == 1 else 0.0
    else:
        head = 1.0 if root == 0 else 0.0
    if head == 0.0:
        return 0.0
    return head * _edge_product(params, config.shape, config.states)


@lru_cache(maxsize=64)
def _partition(fug: FugacityAssignment) -> float:
    z = 0.0
    for s in _independent_sets(fug.shape):
        w = 1.0
        for v, x in enumerate(s):
            if x:
                w *= fug.values[v]
        z += w
    return z


def gibbs_probability(fugacities: FugacityAssignment, config: Configuration) -> tuple[float, float]:
    """Return ``(probability, Z)`` of ``config`` under site-dependent fugacities."""
    if fugacities.shape != config.shape:
        raise ParameterError("fugacity assignment and configuration shapes differ")
    if config.shape.n_vertices > MAX_ENUM_VERTICES:
        raise CapacityError(
            f"{config.shape.n_vertices} vertices exceeds the enumeration cap of {MAX_ENUM_VERTICES}"
        )
    z = _partition(fugacities)
    if not config.is_independent():
        return 0.0, z
    w = 1.0
    for v, x in enumerate(config.states):
        if x:
            w *= fugacities.values[v]
    return w / z, z


def brute_force_posterior(params: ModelParams, shape: TreeShape, leaf_config: Sequence[int]) -> float:
    """P(root = 1 | leaves) by summing broadcast probabilities over internal states."""
    if shape.n_leaves > MAX_ENUM_LEAVES:
        raise CapacityError(f"{shape.n_leaves} leaves exceeds the oracle cap")
    leaf_config = tuple(int(x) for x in leaf_config)
    if len(leaf_config) != shape.n_leaves:
        raise ParameterError("leaf configuration length does not match the shape")
    start = shape.leaf_start
    fixed = {start + i: s for i, s in enumerate(leaf_config)}
    num = den = 0.0
    for states in _independent_sets(shape, fixed):
        p = params.prior(states[0]) * _edge_product(params, shape, states)
        den += p
        if states[0] == 1:
            num += p
    if den == 0.0:
        raise ConditioningError(f"leaf pattern {leaf_config} has probability zero")
    return num / den


def leaf_joint_table(params: ModelParams, shape: TreeShape) -> dict[tuple[int, ...], tuple[float, float]]:
    """Map each leaf pattern A to (P(A, root=1), P(A, root=0)) by full enumeration."""
    if shape.n_vertices > MAX_ENUM_VERTICES:
        raise CapacityError(f"{shape.n_vertices} vertices exceeds the enumeration cap")
    table: dict[tuple[int, ...], list[float]] = {}
    start = shape.leaf_start
    for states in _independent_sets(shape):
        p = params.prior(states[0]) * _edge_product(params, shape, states)
        row = table.setdefault(states[start:], [0.0, 0.0])
        row[0 if states[0] == 1 else 1] += p
    return {a: (r[0], r[1]) for a, r in table.items()}
