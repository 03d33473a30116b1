"""Population dynamics for the conditioned magnetization laws.

Each pool holds root log-likelihood ratios ``u = log P(A|root=1)/P(A|root=0)``
for trees whose root is clamped to 1 (``loglik1``) or 0 (``loglik0``).  The
magnetization is a monotone function of ``u``.  One level of the tree
recursion multiplies, over the k children, the edge-transformed ratios

    lhat = (1 + omega) / (1 + omega * l)

which is the add-edge/merge fold carried out in log space.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import brentq

from .errors import NumericError, ParameterError
from .model import ModelParams, derive_from_lambda
from .posterior import MagnetizationMoments
from .tree import worker_rngs

JACKKNIFE_BLOCKS = 50
MIN_RUN_POP = 1000
EARLY_STOP = 1e-12
# recenter only when the stationary mean of X is this many standard errors off zero
RECENTER_Z = 3.0
# rows per vectorised chunk in the direct sampler (rows * k draws)
_CHUNK_DRAWS = 4_000_000


def magnetization_from_loglik(params: ModelParams, u: np.ndarray) -> np.ndarray:
    """X = pi1 (l - 1) / (pi1 l + pi0), evaluated without overflow."""
    u = np.asarray(u, dtype=float)
    pi1, pi0 = params.pi1, params.pi0
    with np.errstate(over="ignore", invalid="ignore"):
        pos = pi1 * -np.expm1(-u) / (pi1 + pi0 * np.exp(-u))
        neg = pi1 * np.expm1(u) / (pi1 * np.exp(u) + pi0)
    return np.where(u >= 0, pos, neg)


def magnetization_slope(params: ModelParams, u: np.ndarray) -> np.ndarray:
    """dX/du = pi1 l / (pi1 l + pi0)^2, zero at u = +-inf."""
    u = np.asarray(u, dtype=float)
    pi1, pi0 = params.pi1, params.pi0
    with np.errstate(over="ignore", invalid="ignore"):
        e = np.exp(-np.abs(u))
        pos = pi1 * e / (pi1 + pi0 * e) ** 2
        neg = pi1 * e / (pi1 * e + pi0) ** 2
    out = np.where(u >= 0, pos, neg)
    return np.where(np.isfinite(u), out, 0.0)


def edge_loglik(params: ModelParams, u: np.ndarray) -> np.ndarray:
    """log lhat for child log-ratios ``u`` (the add-edge step)."""
    w = params.omega
    return math.log1p(w) - np.logaddexp(0.0, math.log(w) + u)


@dataclass(frozen=True, eq=False)
class Population:
    params: ModelParams
    loglik1: np.ndarray
    loglik0: np.ndarray
    depth: int
    seed: int
    workers: int = 1
    rngs: list = field(default_factory=list, repr=False)
    recentered: bool = False

    @classmethod
    def leaves(cls, params: ModelParams, size: int, seed: int = 0xC0FFEE, workers: int = 1) -> "Population":
        """Depth-0 pools: the leaf is the root, so X = 1 given 1 and X = theta given 0."""
        if size < 1:
            raise ParameterError("population size must be >= 1")
        if workers < 1:
            raise ParameterError("workers must be >= 1")
        return cls(
            params=params,
            loglik1=np.full(size, np.inf),
            loglik0=np.full(size, -np.inf),
            depth=0,
            seed=int(seed),
            workers=int(workers),
            rngs=worker_rngs(seed, workers),
        )

    @property
    def size(self) -> int:
        return self.loglik1.size

    @property
    def samples1(self) -> np.ndarray:
        return magnetization_from_loglik(self.params, self.loglik1)

    @property
    def samples0(self) -> np.ndarray:
        return magnetization_from_loglik(self.params, self.loglik0)

    def log_odds(self, state: int) -> np.ndarray:
        """Exact-mode posterior log-odds of root = 1 for the pool clamped at ``state``."""
        u = self.loglik1 if state == 1 else self.loglik0
        return math.log(self.params.pi1 / self.params.pi0) + u


def _blocks(n: int, workers: int) -> list[int]:
    base, extra = divmod(n, workers)
    return [base + (1 if i < extra else 0) for i in range(workers)]


def _sum_counts(counts: np.ndarray, values: np.ndarray) -> np.ndarray:
    finite = np.isfinite(values)
    total = counts[:, finite] @ values[finite] if finite.any() else np.zeros(counts.shape[0])
    if (~finite).any():
        total = np.where(counts[:, ~finite].sum(axis=1) > 0, -np.inf, total)
    return total


def _draw_compressed(rng, n, k, p_one, uniq1, freq1, uniq0, freq0) -> np.ndarray:
    """Resample via multinomial counts over the distinct pool values."""
    m = rng.binomial(k, p_one, size=n) if p_one > 0 else np.zeros(n, dtype=np.int64)
    total = _sum_counts(rng.multinomial(k - m, freq0), uniq0)
    if p_one > 0:
        total = total + _sum_counts(rng.multinomial(m, freq1), uniq1)
    return total


def _draw_direct(rng, n, k, p_one, lhat1, lhat0) -> np.ndarray:
    """Resample child by child: uniform pool index, child state from M."""
    size = lhat0.size
    out = np.empty(n)
    rows = max(1, _CHUNK_DRAWS // k)
    for a in range(0, n, rows):
        c = min(rows, n - a)
        idx = rng.integers(0, size, size=(c, k))
        if p_one > 0:
            ones = rng.random((c, k)) < p_one
            vals = np.where(ones, lhat1[idx], lhat0[idx])
        else:
            vals = lhat0[idx]
        out[a:a + c] = vals.sum(axis=1)
    return out


def evolve_level(pop: Population) -> Population:
    """Advance both pools by one level, preserving the population size.

    Output samples are split into contiguous blocks, one per worker, each
    drawn from that worker's own stream; concatenation is in worker order,
    so the result depends only on (seed, workers).
    """
    params = pop.params
    k = params.k
    n = pop.size
    lhat = {1: edge_loglik(params, pop.loglik1), 0: edge_loglik(params, pop.loglik0)}
    uniq = {s: np.unique(lhat[s], return_counts=True) for s in (1, 0)}
    compressed = len(uniq[1][0]) + len(uniq[0][0]) <= k
    sizes = _blocks(n, pop.workers)

    def work(w: int) -> dict[int, np.ndarray]:
        rng = pop.rngs[w]
        res = {}
        for s in (1, 0):
            p_one = params.p(s, 1)
            if compressed:
                res[s] = _draw_compressed(
                    rng, sizes[w], k, p_one,
                    uniq[1][0], uniq[1][1] / n, uniq[0][0], uniq[0][1] / n,
                )
            else:
                res[s] = _draw_direct(rng, sizes[w], k, p_one, lhat[1], lhat[0])
        return res

    if pop.workers == 1:
        parts = [work(0)]
    else:
        with ThreadPoolExecutor(max_workers=pop.workers) as ex:
            parts = list(ex.map(work, range(pop.workers)))
    return replace(
        pop,
        loglik1=np.concatenate([p[1] for p in parts]),
        loglik0=np.concatenate([p[0] for p in parts]),
        depth=pop.depth + 1,
    )


def stationary_mean(params: ModelParams, u1: np.ndarray, u0: np.ndarray, shift: float = 0.0) -> float:
    """pi1 E1[X] + pi0 E0[X] for pools shifted by ``shift``; zero for an exact law."""
    return (params.pi1 * float(magnetization_from_loglik(params, u1 + shift).mean())
            + params.pi0 * float(magnetization_from_loglik(params, u0 + shift).mean()))


def recenter(pop: Population, z: float = RECENTER_Z) -> Population:
    """Shift both pools by one constant so that the stationary mean of X is zero.

    A common offset in the log-ratios is multiplied by k*theta per level
    while X-bar shrinks like k*theta^2, so pool noise in that direction
    dominates at depth (and blows up once |k*theta| > 1).  The exact law
    has zero stationary mean.  The shift is applied only when the measured
    mean is more than ``z`` standard errors from zero; below that the
    offset is ordinary sampling noise and shifting would only add a
    coherent error to the next level.
    """
    if pop.depth == 0:
        return pop
    params = pop.params
    x1, x0 = pop.samples1, pop.samples0
    mean = params.pi1 * x1.mean() + params.pi0 * x0.mean()
    se = math.sqrt((params.pi1 ** 2 * x1.var() + params.pi0 ** 2 * x0.var()) / pop.size)
    if abs(mean) <= z * se:
        return pop

    def g(d: float) -> float:
        return stationary_mean(params, pop.loglik1, pop.loglik0, d)

    lo, hi = -1.0, 1.0
    for _ in range(60):
        if g(lo) < 0.0 < g(hi):
            break
        lo, hi = 2.0 * lo, 2.0 * hi
    else:
        raise NumericError("could not bracket the recentering shift")
    d = brentq(g, lo, hi, xtol=1e-15, maxiter=200)
    return replace(pop, loglik1=pop.loglik1 + d, loglik0=pop.loglik0 + d, recentered=True)


def _jackknife(stat, cols1: np.ndarray, cols0: np.ndarray, blocks: int) -> np.ndarray:
    """Block jackknife errors of the vector ``stat(mean1, mean0)``.

    ``cols1``/``cols0`` hold one row of per-sample features per pool entry.
    """
    n1, n0 = cols1.shape[0], cols0.shape[0]
    b = min(blocks, n1, n0)
    if b < 2:
        return np.zeros_like(stat(cols1.mean(axis=0), cols0.mean(axis=0)))
    sum1, sum0 = cols1.sum(axis=0), cols0.sum(axis=0)
    loo = []
    for a, c in zip(np.array_split(cols1, b), np.array_split(cols0, b)):
        loo.append(stat((sum1 - a.sum(axis=0)) / (n1 - a.shape[0]),
                        (sum0 - c.sum(axis=0)) / (n0 - c.shape[0])))
    loo = np.asarray(loo)
    return np.sqrt((b - 1) / b * np.sum((loo - loo.mean(axis=0)) ** 2, axis=0))


def estimate_moments(pop: Population, blocks: int = JACKKNIFE_BLOCKS) -> MagnetizationMoments:
    """Plug-in moments with jackknife standard errors over contiguous blocks.

    For a recentered population each jackknife replicate re-imposes the
    zero stationary mean to first order, so the error bars include the
    noise of the shift itself.
    """
    params = pop.params
    pi1, pi0 = params.pi1, params.pi0
    x1, x0 = pop.samples1, pop.samples0
    q1, q0 = x1 * x1, x0 * x0
    xbar1, xbar0 = float(q1.mean()), float(q0.mean())
    if pop.recentered:
        s1 = magnetization_slope(params, pop.loglik1)
        s0 = magnetization_slope(params, pop.loglik0)
        cols1 = np.column_stack([q1, x1, s1, 2 * x1 * s1])
        cols0 = np.column_stack([q0, x0, s0, 2 * x0 * s0])
    else:
        cols1 = q1[:, None]
        cols0 = q0[:, None]

    def stat(m1, m0):
        a, b = m1[0], m0[0]
        if pop.recentered:
            slope = pi1 * m1[2] + pi0 * m0[2]
            d = -(pi1 * m1[1] + pi0 * m0[1]) / slope if slope > 0 else 0.0
            a, b = a + d * m1[3], b + d * m0[3]
        return np.array([pi1 * a + pi0 * b, a, b])

    se, se1, se0 = (float(v) for v in _jackknife(stat, cols1, cols0, blocks))
    return MagnetizationMoments(
        xbar=pi1 * xbar1 + pi0 * xbar0,
        xbar1=xbar1,
        xbar0=xbar0,
        e1x=float(x1.mean()),
        e0x=float(x0.mean()),
        depth=pop.depth,
        stderr=se,
        stderr1=se1,
        stderr0=se0,
    )


@dataclass(frozen=True)
class DecayTrace:
    params: ModelParams
    moments: list[MagnetizationMoments]
    pop_size: int
    seed: int
    workers: int
    stopped_early: bool

    @property
    def terminal(self) -> MagnetizationMoments:
        return self.moments[-1]

    def rows(self):
        for m in self.moments:
            yield m.depth, m.xbar, m.xbar1, m.xbar0, m.stderr

    def as_dict(self) -> dict:
        return {
            "schema_version": "1",
            "params": self.params.as_dict(),
            "pop_size": self.pop_size,
            "seed": self.seed,
            "workers": self.workers,
            "stopped_early": self.stopped_early,
            "moments": [m.as_dict() for m in self.moments],
        }


def run_decay(params: ModelParams, max_depth: int, pop_size: int, seed: int = 0xC0FFEE,
              workers: int = 1, stop_below: float = EARLY_STOP,
              stabilize: bool = True) -> DecayTrace:
    """Evolve from the leaves, recording moments at every depth 0..max_depth.

    With ``stabilize`` each level is passed through :func:`recenter`.
    """
    if pop_size < MIN_RUN_POP:
        raise ParameterError(f"pop_size must be >= {MIN_RUN_POP}")
    pop = Population.leaves(params, pop_size, seed, workers)
    moments = [estimate_moments(pop)]
    stopped = False
    while pop.depth < max_depth:
        pop = evolve_level(pop)
        if stabilize:
            pop = recenter(pop)
        moments.append(estimate_moments(pop))
        if moments[-1].xbar < stop_below:
            stopped = pop.depth < max_depth
            break
    return DecayTrace(params, moments, pop_size, int(seed), workers, stopped)


@dataclass(frozen=True)
class ScanResult:
    k: int
    grid: list[float]
    omegas: list[float]
    terminal_xbar: list[float]
    stderr: list[float]
    reconstructs: list[bool]
    bracket: tuple[float, float] | None
    lambda_r: float | None
    eps_rec: float
    pop_size: int
    depth: int
    seed: int
    workers: int
    note: str = ""

    def as_dict(self) -> dict:
        return {
            "schema_version": "1",
            "k": self.k,
            "grid": self.grid,
            "omegas": self.omegas,
            "estimates": [
                {"lambda": g, "xbar": x, "stderr": s, "reconstructs": r}
                for g, x, s, r in zip(self.grid, self.terminal_xbar, self.stderr, self.reconstructs)
            ],
            "bracket": list(self.bracket) if self.bracket else None,
            "lambda_r": self.lambda_r,
            "parameters": {
                "eps_rec": self.eps_rec,
                "pop_size": self.pop_size,
                "depth": self.depth,
                "workers": self.workers,
            },
            "seed": self.seed,
            "note": self.note,
        }


def scan_threshold(k: int, lambda_grid, pop_size: int, depth: int, seed: int = 0xC0FFEE,
                   eps_rec: float = 1e-6, workers: int = 1) -> ScanResult:
    """Classify each fugacity by its terminal X-bar and bracket the first crossing.

    Every grid point reuses the same seed.
    """
    grid = [float(x) for x in lambda_grid]
    if not grid:
        raise ParameterError("lambda grid is empty")
    if any(b < a for a, b in zip(grid, grid[1:])):
        raise ParameterError("lambda grid must be sorted ascending")
    omegas, xs, ses, flags = [], [], [], []
    for lam in grid:
        params = derive_from_lambda(k, lam)
        trace = run_decay(params, depth, pop_size, seed, workers)
        term = trace.terminal
        omegas.append(params.omega)
        xs.append(term.xbar)
        ses.append(term.stderr)
        flags.append(term.xbar > eps_rec)
    bracket = None
    note = "no crossing inside the grid"
    if True in flags:
        i = flags.index(True)
        if i > 0:
            bracket = (grid[i - 1], grid[i])
            note = "crossing bracketed"
        else:
            note = "first grid point already reconstructs"
    return ScanResult(
        k=k, grid=grid, omegas=omegas, terminal_xbar=xs, stderr=ses, reconstructs=flags,
        bracket=bracket, lambda_r=None if bracket is None else 0.5 * (bracket[0] + bracket[1]),
        eps_rec=eps_rec, pop_size=pop_size, depth=depth, seed=int(seed), workers=workers, note=note,
    )
