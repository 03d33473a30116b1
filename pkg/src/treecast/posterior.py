"""Exact inference at the root: likelihood pass, fugacity recursion, atom laws.

Two posterior modes are supported.  ``exact`` is Bayes under the broadcast
measure.  ``paper`` runs the fugacity recursion

    P[root = 0 | A] = 1 / (1 + lam * prod_i P[child_i = 0 | A_i])

with the same ``lam = omega (1+omega)^k`` at every vertex, the root included.
Below the root the two agree; at the root the paper-mode odds are larger by a
factor ``1 + omega`` because the root of a k-ary tree has one neighbour
fewer than an internal vertex.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import CapacityError, ConditioningError, ParameterError
from .model import ModelParams
from .tree import TreeShape, _independent_sets, leaf_joint_table, site_fugacities, worker_seed

MERGE_RTOL = 1e-13
DEFAULT_ATOM_CAP = 2_000_000


class PosteriorMode(str, enum.Enum):
    EXACT = "exact"
    PAPER = "paper"


def _leaf_array(shape: TreeShape, leaves) -> np.ndarray:
    arr = np.atleast_2d(np.asarray(leaves, dtype=np.int8))
    if arr.shape[1] != shape.n_leaves:
        raise ParameterError(
            f"expected {shape.n_leaves} leaf states, got {arr.shape[1]}"
        )
    if np.any((arr != 0) & (arr != 1)):
        raise ParameterError("leaf states must be 0 or 1")
    return arr


# ---------------------------------------------------------------------------
# likelihood pass (exact mode)


def upward_log_likelihood(params: ModelParams, shape: TreeShape, leaves) -> np.ndarray:
    """Root log-likelihoods ``log P(A | root = s)`` as an ``(n, 2)`` array, column s.

    Impossible evidence is carried as ``-inf``.
    """
    arr = _leaf_array(shape, leaves)
    log_m = params.log_transition
    ll = np.full(arr.shape + (2,), -np.inf)
    ll[..., 1][arr == 1] = 0.0
    ll[..., 0][arr == 0] = 0.0
    k = shape.k
    for _ in range(shape.depth):
        n, width, _ = ll.shape
        up = np.empty((n, width, 2))
        for s in (0, 1):
            up[..., s] = np.logaddexp(log_m[s, 0] + ll[..., 0], log_m[s, 1] + ll[..., 1])
        ll = up.reshape(n, width // k, k, 2).sum(axis=2)
    return ll[:, 0, :]


def posterior_from_loglik(params: ModelParams, root_ll: np.ndarray) -> np.ndarray:
    a = math.log(params.pi1) + root_ll[:, 1]
    b = math.log(params.pi0) + root_ll[:, 0]
    norm = np.logaddexp(a, b)
    if np.any(np.isneginf(norm)):
        raise ConditioningError("leaf pattern has probability zero")
    return np.exp(a - norm)


def likelihood_pass_batch(params: ModelParams, shape: TreeShape, leaves) -> np.ndarray:
    return posterior_from_loglik(params, upward_log_likelihood(params, shape, leaves))


def likelihood_pass(params: ModelParams, shape: TreeShape, leaf_config: Sequence[int]) -> float:
    """P(root = 1 | leaves) under the broadcast measure."""
    return float(likelihood_pass_batch(params, shape, [leaf_config])[0])


# ---------------------------------------------------------------------------
# fugacity recursion (paper mode)


def q_recursion_batch(shape: TreeShape, leaves, internal_fugacity: float,
                      root_fugacity: float | None = None) -> np.ndarray:
    """Root Q = P(root = 0 | leaves) by the fugacity recursion, batched."""
    arr = _leaf_array(shape, leaves)
    q = 1.0 - arr.astype(float)
    if shape.depth == 0:
        return q[:, 0]
    k = shape.k
    for level in range(shape.depth):
        f = internal_fugacity
        if level == shape.depth - 1 and root_fugacity is not None:
            f = root_fugacity
        n, width = q.shape
        q = 1.0 / (1.0 + f * q.reshape(n, width // k, k).prod(axis=2))
    return q[:, 0]


def paper_posterior_recursion(params: ModelParams, shape: TreeShape, leaf_config: Sequence[int]) -> float:
    """P(root = 0 | leaves) with uniform fugacity ``lambda_internal``."""
    return float(q_recursion_batch(shape, [leaf_config], params.lambda_internal)[0])


def posterior_batch(params: ModelParams, shape: TreeShape, leaves,
                    mode: PosteriorMode | str = PosteriorMode.EXACT) -> np.ndarray:
    """P(root = 1 | leaves) in either mode."""
    if PosteriorMode(mode) is PosteriorMode.EXACT:
        return likelihood_pass_batch(params, shape, leaves)
    return 1.0 - q_recursion_batch(shape, leaves, params.lambda_internal)


def root_odds(p1):
    """P(root=1|A) / P(root=0|A); inf where p1 == 1."""
    p1 = np.asarray(p1, dtype=float)
    with np.errstate(divide="ignore"):
        return p1 / (1.0 - p1)


# ---------------------------------------------------------------------------
# magnetization


def magnetization_of(params: ModelParams, posterior_p1):
    """X = (P(root=1|A)/pi1 - 1) / pi01.  Accepts scalars or arrays."""
    p = np.asarray(posterior_p1, dtype=float)
    if np.any(~np.isfinite(p)) or np.any(p < 0.0) or np.any(p > 1.0):
        raise ParameterError("posterior probability must lie in [0, 1]")
    x = (p / params.pi1 - 1.0) / params.pi01
    x = np.where(p == 1.0, 1.0, x)
    return float(x) if x.ndim == 0 else x


def posterior_of_magnetization(params: ModelParams, x):
    """Inverse of :func:`magnetization_of`: P(root=1|A) = pi1 + pi0 * X."""
    return params.pi1 + params.pi0 * np.asarray(x, dtype=float)


# ---------------------------------------------------------------------------
# atom laws


@dataclass(frozen=True, eq=False)
class AtomDistribution:
    """Finite law: sorted ``values`` with probabilities ``probs``."""

    values: np.ndarray
    probs: np.ndarray
    quantity: str = "Q"        # "Q" (posterior of 0) or "X" (magnetization)
    condition: str = "1"       # "1", "0" or "stationary"
    depth: int = 0
    mode: str = "exact"

    def __len__(self) -> int:
        return len(self.values)

    def mean(self, f=None) -> float:
        v = self.values if f is None else f(self.values)
        return float(np.dot(self.probs, v))

    def prob_of(self, value: float, rtol: float = 1e-12) -> float:
        hit = np.abs(self.values - value) <= rtol * max(abs(value), 1e-300)
        return float(self.probs[hit].sum())

    def check(self, tol: float = 1e-12) -> None:
        if np.any(self.probs < 0) or abs(self.probs.sum() - 1.0) > tol:
            raise ParameterError("atom probabilities must be >= 0 and sum to 1")
        if not np.all(np.isfinite(self.values)):
            raise ParameterError("atom values must be finite")
        if self.quantity == "X" and np.any(self.values > 1.0 + 1e-12):
            raise ParameterError("magnetization atoms must not exceed 1")
        if self.quantity == "Q" and (np.any(self.values < 0) or np.any(self.values > 1)):
            raise ParameterError("posterior atoms must lie in [0, 1]")

    def rows(self):
        for v, p in zip(self.values, self.probs):
            yield float(v), float(p)


def merge_atoms(values, probs, rtol: float = MERGE_RTOL) -> tuple[np.ndarray, np.ndarray]:
    """Sort, drop null atoms, coalesce runs closer than ``rtol`` (relative).

    A coalesced run keeps its probability-weighted mean; runs of identical
    values keep the value bit-for-bit.
    """
    values = np.asarray(values, dtype=float).ravel()
    probs = np.asarray(probs, dtype=float).ravel()
    keep = probs > 0.0
    values, probs = values[keep], probs[keep]
    if values.size == 0:
        return values, probs
    order = np.argsort(values, kind="stable")
    v, p = values[order], probs[order]
    gap = np.diff(v)
    scale = np.maximum(np.abs(v[1:]), np.abs(v[:-1]))
    starts = np.concatenate(([0], np.flatnonzero(gap > rtol * scale) + 1))
    mass = np.add.reduceat(p, starts)
    first = v[starts]
    offset = np.add.reduceat(p * (v - np.repeat(first, np.diff(np.append(starts, v.size)))), starts)
    return first + offset / mass, mass


def _mix(laws: dict[int, tuple[np.ndarray, np.ndarray]], weights: dict[int, float]):
    vs, ps = [], []
    for s, w in weights.items():
        if w > 0.0:
            vs.append(laws[s][0])
            ps.append(laws[s][1] * w)
    return merge_atoms(np.concatenate(vs), np.concatenate(ps))


def _product_power(law: tuple[np.ndarray, np.ndarray], n: int, cap: int):
    """Law of the product of ``n`` iid draws (empty product is 1)."""
    acc = (np.array([1.0]), np.array([1.0]))
    v, p = law
    for _ in range(n):
        size = acc[0].size * v.size
        if size > cap:
            raise CapacityError(
                f"atom recursion would create {size} atoms (cap {cap}); "
                f"use population dynamics instead"
            )
        acc = merge_atoms(np.multiply.outer(acc[0], v), np.multiply.outer(acc[1], p))
    return acc


def compose_root(
    params: ModelParams,
    child_q: dict[int, tuple[np.ndarray, np.ndarray]],
    n_children: int,
    root_fugacity: float,
    cap: int = DEFAULT_ATOM_CAP,
) -> dict[int, tuple[np.ndarray, np.ndarray]]:
    """Q laws at a root with ``n_children`` independent children, per root state.

    ``child_q[s]`` is the law of the child's fugacity-recursion Q given the
    child's state ``s``.
    """
    out = {}
    for s in (1, 0):
        mix = _mix(child_q, {1: params.p(s, 1), 0: params.p(s, 0)})
        pv, pp = _product_power(mix, n_children, cap)
        out[s] = merge_atoms(1.0 / (1.0 + root_fugacity * pv), pp)
    return out


def paper_q_laws(params: ModelParams, depth: int, cap: int = DEFAULT_ATOM_CAP):
    """Fugacity-recursion Q laws for depths 0..depth (list of {state: law})."""
    laws = [{1: (np.array([0.0]), np.array([1.0])), 0: (np.array([1.0]), np.array([1.0]))}]
    for _ in range(depth):
        laws.append(compose_root(params, laws[-1], params.k, params.lambda_internal, cap))
    return laws


def exact_root_fugacity(params: ModelParams, n_children: int) -> float:
    """Root weight turning the fugacity recursion into broadcast Bayes: omega (1+omega)^(j-1)."""
    return params.omega * math.exp((n_children - 1) * math.log1p(params.omega))


def _x_law(params: ModelParams, q_law) -> tuple[np.ndarray, np.ndarray]:
    qv, qp = q_law
    p1 = np.clip(1.0 - qv, 0.0, 1.0)
    return merge_atoms(magnetization_of(params, p1), qp)


@dataclass(frozen=True, eq=False)
class AtomLaws:
    q1: AtomDistribution
    q0: AtomDistribution
    x1: AtomDistribution
    x0: AtomDistribution

    def all(self) -> list[AtomDistribution]:
        return [self.q1, self.q0, self.x1, self.x0]


def laws_to_atoms(params: ModelParams, q: dict, depth: int, mode: str) -> AtomLaws:
    mk = lambda law, quantity, cond: AtomDistribution(law[0], law[1], quantity, cond, depth, mode)
    return AtomLaws(
        q1=mk(q[1], "Q", "1"),
        q0=mk(q[0], "Q", "0"),
        x1=mk(_x_law(params, q[1]), "X", "1"),
        x0=mk(_x_law(params, q[0]), "X", "0"),
    )


def atom_recursion(params: ModelParams, depth: int,
                   mode: PosteriorMode | str = PosteriorMode.EXACT,
                   cap: int = DEFAULT_ATOM_CAP) -> AtomLaws:
    """Exact conditioned laws of the root posterior Q and magnetization X."""
    mode = PosteriorMode(mode)
    if depth < 0:
        raise ParameterError("depth must be >= 0")
    if depth == 0:
        q = paper_q_laws(params, 0)[0]
    else:
        below = paper_q_laws(params, depth - 1, cap)[-1]
        f = params.lambda_internal if mode is PosteriorMode.PAPER else params.lambda_root
        q = compose_root(params, below, params.k, f, cap)
    return laws_to_atoms(params, q, depth, mode.value)


def partial_tree_laws(params: ModelParams, depth: int, n_children: int,
                      cap: int = DEFAULT_ATOM_CAP) -> AtomLaws:
    """Exact-mode laws at a root carrying ``n_children`` (<= k or more) depth-(depth-1) subtrees."""
    below = paper_q_laws(params, depth - 1, cap)[-1]
    q = compose_root(params, below, n_children, exact_root_fugacity(params, n_children), cap)
    return laws_to_atoms(params, q, depth, "exact")


# ---------------------------------------------------------------------------
# moments


@dataclass(frozen=True)
class MagnetizationMoments:
    xbar: float
    xbar1: float
    xbar0: float
    e1x: float
    e0x: float
    depth: int
    stderr: float | None = None
    stderr1: float | None = None
    stderr0: float | None = None

    def as_dict(self) -> dict:
        return {
            "depth": self.depth,
            "xbar": self.xbar,
            "xbar1": self.xbar1,
            "xbar0": self.xbar0,
            "e1x": self.e1x,
            "e0x": self.e0x,
            "stderr": self.stderr,
        }


def moments_from_atoms(x_law_1: AtomDistribution, x_law_0: AtomDistribution,
                       params: ModelParams, depth: int) -> MagnetizationMoments:
    sq = np.square
    xbar1 = x_law_1.mean(sq)
    xbar0 = x_law_0.mean(sq)
    return MagnetizationMoments(
        xbar=params.pi1 * xbar1 + params.pi0 * xbar0,
        xbar1=xbar1,
        xbar0=xbar0,
        e1x=x_law_1.mean(),
        e0x=x_law_0.mean(),
        depth=depth,
    )


def moments_from_laws(params: ModelParams, laws: AtomLaws) -> MagnetizationMoments:
    return moments_from_atoms(laws.x1, laws.x0, params, laws.x1.depth)


def exact_moments(params: ModelParams, depth: int, mode=PosteriorMode.EXACT,
                  cap: int = DEFAULT_ATOM_CAP) -> MagnetizationMoments:
    return moments_from_laws(params, atom_recursion(params, depth, mode, cap))


def enumeration_moments(params: ModelParams, depth: int,
                        mode: PosteriorMode | str = PosteriorMode.EXACT) -> MagnetizationMoments:
    """Brute-force moments: every leaf pattern weighted by enumerated probabilities.

    The exact-mode posterior is plain Bayes over the enumerated joint; the
    paper-mode posterior is read off Gibbs weights with fugacity
    ``lambda_internal`` at every non-leaf vertex.
    """
    mode = PosteriorMode(mode)
    shape = TreeShape(params.k, depth)
    table = leaf_joint_table(params, shape)
    if mode is PosteriorMode.PAPER and depth > 0:
        fug = site_fugacities(params, shape, root="internal").values
        start = shape.leaf_start
        weights: dict[tuple, list[float]] = {}
        for states in _independent_sets(shape):
            w = 1.0
            for v in range(start):
                if states[v]:
                    w *= fug[v]
            row = weights.setdefault(states[start:], [0.0, 0.0])
            row[0 if states[0] == 1 else 1] += w
        post = {a: r[0] / (r[0] + r[1]) for a, r in weights.items()}
    else:
        post = {a: j1 / (j1 + j0) for a, (j1, j0) in table.items()}
    e1 = e0 = s1 = s0 = 0.0
    for a, (j1, j0) in table.items():
        x = magnetization_of(params, post[a])
        c1, c0 = j1 / params.pi1, j0 / params.pi0
        e1 += c1 * x
        e0 += c0 * x
        s1 += c1 * x * x
        s0 += c0 * x * x
    return MagnetizationMoments(params.pi1 * s1 + params.pi0 * s0, s1, s0, e1, e0, depth)


# ---------------------------------------------------------------------------
# closed-form checks


def middle_atom(params: ModelParams) -> float:
    """Q value 1/2 (1 + 1/(1 + 2 lam)) of one uninformative child at depth 2."""
    return 0.5 * (1.0 + 1.0 / (1.0 + 2.0 * params.lambda_internal))


@dataclass(frozen=True)
class CalARatio:
    lhs: float
    rhs: float
    rhs_bridged: float
    p0: float
    p1: float


def calA_ratio_check(params: ModelParams, depth: int = 2, cap: int = DEFAULT_ATOM_CAP) -> CalARatio:
    """P0[leaves in A] / P1[leaves in A] for A = {paper-mode Q == middle atom}.

    ``rhs`` is (pi1/pi0)(1+lam)/lam.  ``rhs_bridged`` multiplies it by the
    root-odds factor (1 + omega) that separates the fugacity recursion from
    broadcast Bayes; the leaf laws are broadcast laws, so ``lhs`` equals
    ``rhs_bridged``.
    """
    laws = atom_recursion(params, depth, PosteriorMode.PAPER, cap)
    target = middle_atom(params)
    p1 = laws.q1.prob_of(target)
    p0 = laws.q0.prob_of(target)
    lam = params.lambda_internal
    rhs = params.pi1 / params.pi0 * (1.0 + lam) / lam
    lhs = p0 / p1 if p1 > 0 else math.nan
    return CalARatio(lhs=lhs, rhs=rhs, rhs_bridged=rhs * (1.0 + params.omega), p0=p0, p1=p1)


def t1_closed_form(params: ModelParams) -> dict[str, list[tuple[float, float]]]:
    """Depth-1 paper-mode Q atoms as (value, prob) per root state."""
    lam, a = params.lambda_internal, math.exp(-params.k * math.log1p(params.omega))
    return {
        "1": [(1.0 / (1.0 + lam), 1.0)],
        "0": [(1.0 / (1.0 + lam), a), (1.0, 1.0 - a)],
    }


def t2_closed_form(params: ModelParams) -> list[tuple[float, float]]:
    """The two explicit depth-2 atoms given root 1 (value, prob)."""
    lam, k = params.lambda_internal, params.k
    a = math.exp(-k * math.log1p(params.omega))
    return [
        (1.0 / (1.0 + lam), (1.0 - a) ** k),
        (middle_atom(params), (1.0 - a) ** (k - 1) * a * k),
    ]


@dataclass(frozen=True)
class ExpectedPosterior:
    value: float
    stderr: float
    method: str
    mode: str
    xbar3: float | None = None


def t3_expected_posterior(params: ModelParams, mode: PosteriorMode | str = PosteriorMode.PAPER,
                          method: str = "atoms", *, population=None, pop_size: int = 100_000,
                          seed: int = 0xC0FFEE, workers: int = 1, replicates: int = 1,
                          cap: int = DEFAULT_ATOM_CAP) -> ExpectedPosterior:
    """E^1[P(root = 1 | leaves)] on the depth-3 tree.

    ``method="popdyn"`` evolves (or reuses) a population to depth 3 and maps
    its exact-mode root odds to the requested mode.  With ``replicates > 1``
    independent pools are averaged; replicate r is seeded with
    ``worker_seed(seed, r)`` and the reported error is the between-pool one.
    ``method="hybrid"`` uses the exact depth-2 law and Monte Carlo over the
    k root children, ``pop_size`` draws.
    """
    mode = PosteriorMode(mode)
    if method == "atoms":
        laws = atom_recursion(params, 3, mode, cap)
        xbar3 = exact_moments(params, 3, cap=cap).xbar if mode is PosteriorMode.PAPER \
            else moments_from_laws(params, laws).xbar
        return ExpectedPosterior(1.0 - laws.q1.mean(), 0.0, method, mode.value, xbar3)
    if method == "hybrid":
        return _t3_hybrid(params, mode, pop_size, seed, cap)
    if method != "popdyn":
        raise ParameterError(f"unknown method {method!r}")
    from .popdyn import Population, estimate_moments, evolve_level, recenter

    if population is not None:
        pools = [population]
    else:
        if replicates < 1:
            raise ParameterError("replicates must be >= 1")
        pools = [Population.leaves(params, pop_size, seed=worker_seed(seed, r), workers=workers)
                 for r in range(replicates)]
    values, naive, xbars = [], [], []
    for pop in pools:
        if pop.depth > 3:
            raise ParameterError("population must be at depth <= 3")
        while pop.depth < 3:
            pop = recenter(evolve_level(pop))
        log_odds = pop.log_odds(1)
        if mode is PosteriorMode.PAPER:
            log_odds = log_odds + math.log1p(params.omega)
        p = 1.0 / (1.0 + np.exp(-log_odds))
        values.append(float(p.mean()))
        naive.append(float(p.std(ddof=1) / math.sqrt(p.size)) if p.size > 1 else 0.0)
        xbars.append(estimate_moments(pop).xbar)
    if len(values) > 1:
        # every sample of one pool shares the same parent pool, so only the
        # spread between independent pools measures the error
        se = float(np.std(values, ddof=1) / math.sqrt(len(values)))
    else:
        se = naive[0]
    return ExpectedPosterior(float(np.mean(values)), se, method, mode.value, float(np.mean(xbars)))


def _t3_hybrid(params: ModelParams, mode: PosteriorMode, samples: int, seed: int,
               cap: int, chunk: int = 200_000) -> ExpectedPosterior:
    """Exact depth-2 child laws, Monte Carlo over the k children of the root."""
    below = paper_q_laws(params, 2, cap)[-1]
    v, p = _mix(below, {1: params.p(1, 1), 0: params.p(1, 0)})
    log_v = np.log(v)
    f = params.lambda_internal if mode is PosteriorMode.PAPER else params.lambda_root
    rng = np.random.default_rng(seed)
    total = total_sq = 0.0
    done = 0
    while done < samples:
        c = min(chunk, samples - done)
        counts = rng.multinomial(params.k, p / p.sum(), size=c)
        post1 = 1.0 - 1.0 / (1.0 + f * np.exp(counts @ log_v))
        total += post1.sum()
        total_sq += np.square(post1).sum()
        done += c
    mean = total / samples
    var = max(total_sq / samples - mean * mean, 0.0)
    return ExpectedPosterior(float(mean), math.sqrt(var / samples), "hybrid", mode.value)
