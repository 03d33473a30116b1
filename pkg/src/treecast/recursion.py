"""Magnetization algebra and the second-moment recursion.

Adding an edge above a subtree multiplies its root magnetization by theta;
merging two trees at a common root combines magnetizations ``Y`` and ``Yhat``
into ``(Y + Yhat + delta*Y*Yhat) / (1 + pi01*Y*Yhat)``.  Folding these over
the children of a vertex reproduces the exact posterior.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import gammaln, logsumexp

from .errors import NumericError, ParameterError
from .model import BETA_STAR, ModelParams, contraction_factor
from .posterior import MagnetizationMoments

SINGULAR_TOL = 1e-12


def merge_magnetization(y, yhat, params: ModelParams):
    """Magnetization of two trees glued at their roots.  Works elementwise."""
    y = np.asarray(y, dtype=float)
    yhat = np.asarray(yhat, dtype=float)
    prod = y * yhat
    den = 1.0 + params.pi01 * prod
    if np.any(np.abs(den) < SINGULAR_TOL):
        raise NumericError("merge denominator 1 + pi01*Y*Yhat is numerically zero")
    x = (y + yhat + params.delta * prod) / den
    return float(x) if x.ndim == 0 else x


def add_edge(z, params: ModelParams):
    """Magnetization seen one edge above a subtree root."""
    out = params.theta * np.asarray(z, dtype=float)
    return float(out) if out.ndim == 0 else out


def fold_children(child_x_values: Sequence, params: ModelParams):
    """Left fold of merge over add_edge of each child (children along axis 0).

    ``child_x_values`` may be a sequence of scalars or of equally-shaped
    arrays, in which case the fold is done elementwise.
    """
    x = np.zeros_like(np.asarray(child_x_values[0], dtype=float)) if len(child_x_values) else 0.0
    for z in child_x_values:
        x = merge_magnetization(x, add_edge(z, params), params)
    return x


def fold_tree_batch(params: ModelParams, k: int, depth: int, leaves) -> np.ndarray:
    """Root magnetization of each leaf pattern by folding level by level."""
    arr = np.atleast_2d(np.asarray(leaves))
    x = np.where(arr == 1, 1.0, params.theta)
    for _ in range(depth):
        n, width = x.shape
        x = x.reshape(n, width // k, k)
        x = fold_children([x[:, :, i] for i in range(k)], params)
    return x[:, 0]


def child_moment_relations(subtree: MagnetizationMoments, params: ModelParams) -> tuple[float, float, float, float]:
    """Predicted (E1[Y], E0[Y], E1[Y^2], E0[Y^2]) for a child Y one level below the root."""
    th = params.theta
    return (
        th * subtree.e1x,
        th * subtree.e0x,
        (1.0 - th) * subtree.xbar + th * subtree.xbar1,
        (1.0 - th) * subtree.xbar + th * subtree.xbar0,
    )


def child_moments_direct(subtree: MagnetizationMoments, params: ModelParams) -> tuple[float, float, float, float]:
    """Same four quantities by conditioning on the child state through M."""
    out = []
    for first in (subtree.e1x, subtree.e0x), (subtree.xbar1, subtree.xbar0):
        for s in (1, 0):
            out.append(params.p(s, 1) * first[0] + params.p(s, 0) * first[1])
    return out[0], out[1], out[2], out[3]


@dataclass(frozen=True)
class RecursionCoefficients:
    rho1: float
    rho2: float
    calA: float
    calB: float

    def violations(self, params: ModelParams, tol: float = 1e-12) -> list[str]:
        cap = (1.0 + 2.0 * params.omega) / params.omega
        bad = []
        if not (-tol <= self.rho1 <= cap * (1 + tol)):
            bad.append(f"rho1={self.rho1} outside [0, {cap}]")
        if not (-tol <= self.rho2 <= cap * (1 + tol)):
            bad.append(f"rho2={self.rho2} outside [0, {cap}]")
        if self.calA < -tol:
            bad.append(f"calA={self.calA} < 0")
        if self.calB > 1.0 + tol:
            bad.append(f"calB={self.calB} > 1")
        if (1.0 - params.theta) + params.theta * self.rho2 < -tol:
            bad.append("(1 - theta) + theta*rho2 < 0")
        return bad


def recursion_coefficients(y: MagnetizationMoments, z: MagnetizationMoments,
                           params: ModelParams) -> RecursionCoefficients:
    """Coefficients of the merged second-moment expansion from the moments of Y and Z."""
    rho1 = y.xbar1 / y.xbar if y.xbar > 0 else 0.0
    rho2 = z.xbar1 / z.xbar if z.xbar > 0 else 0.0
    th = params.theta
    mix = (1.0 - th) + th * rho2
    return RecursionCoefficients(
        rho1=rho1,
        rho2=rho2,
        calA=rho1 + (1.0 - rho1) * mix,
        calB=1.0 - params.omega / (1.0 + params.omega) * rho1 * mix,
    )


def merged_second_moment_expansion(ybar: float, zbar: float, coeffs: RecursionCoefficients,
                                   params: ModelParams) -> float:
    """Ybar + theta^2 Zbar - pi01 theta^2 Ybar Zbar [calA - delta calB]."""
    th2 = params.theta ** 2
    return ybar + th2 * zbar - params.pi01 * th2 * ybar * zbar * (coeffs.calA - params.delta * coeffs.calB)


def one_step_bound(ybar: float, zbar: float, params: ModelParams) -> float:
    return ybar + params.theta ** 2 * zbar + ybar * zbar / (1.0 + params.omega)


def level_bound(xbar_n: float, params: ModelParams) -> float:
    """(1+omega) theta^2 [(1 + xbar/(1+omega))^k - 1] via expm1/log1p."""
    if xbar_n < 0:
        raise ParameterError("xbar must be non-negative")
    w = params.omega
    return (1.0 + w) * params.theta ** 2 * math.expm1(params.k * math.log1p(xbar_n / (1.0 + w)))


@dataclass(frozen=True)
class DecayBoundTrace:
    depths: list[int]
    xbar_measured: list[float | None]
    xbar_bound: list[float]
    xbar_linear: list[float]
    contraction: float
    seed_ok: bool
    verdict: str
    params: dict = field(default_factory=dict)

    def rows(self):
        for d, m, b in zip(self.depths, self.xbar_measured, self.xbar_bound):
            yield d, m, b

    def verdict_record(self) -> dict:
        return {
            "schema_version": "1",
            "contraction": self.contraction,
            "seed_ok": self.seed_ok,
            "verdict": self.verdict,
            "final_bound": self.xbar_bound[-1],
            "final_linear": self.xbar_linear[-1],
            "levels": len(self.depths) - 1,
            "params": self.params,
        }


def contraction_iterate(xbar_seed: float, params: ModelParams, max_depth: int,
                        seed_depth: int = 3, measured: Sequence[float] | None = None) -> DecayBoundTrace:
    """Iterate the linear contraction and the level bound from a seed value.

    ``measured`` optionally supplies X-bar values for depths seed_depth, seed_depth+1, ...
    """
    factor = contraction_factor(params.k, params.omega)
    seed_ok = xbar_seed <= params.omega / 2.0
    depths = [seed_depth]
    bound = [float(xbar_seed)]
    linear = [float(xbar_seed)]
    for i in range(max_depth):
        depths.append(seed_depth + i + 1)
        bound.append(min(level_bound(bound[-1], params), 1.0))
        linear.append(linear[-1] * factor)
    meas: list[float | None] = [None] * len(depths)
    if measured is not None:
        for i, m in enumerate(measured[: len(depths)]):
            meas[i] = float(m)
    if factor < 1.0 and seed_ok:
        verdict = "non-reconstruction certified (numeric)"
    elif not seed_ok:
        verdict = "no certificate: seed exceeds omega/2 (level bound only)"
    else:
        verdict = "no certificate: contraction factor >= 1"
    return DecayBoundTrace(depths, meas, bound, linear, factor, seed_ok, verdict,
                           {"k": params.k, "omega": params.omega, "xbar_seed": float(xbar_seed)})


def binomial_tail(n: int, p: float, threshold: float) -> float:
    """Exact P(Bin(n, p) < threshold), summed in log space."""
    if not (0.0 <= p <= 1.0):
        raise ParameterError("p must lie in [0, 1]")
    n = int(n)
    top = min(n, math.ceil(threshold) - 1)
    if top < 0:
        return 0.0
    if p == 0.0:
        return 1.0
    if p == 1.0:
        return 1.0 if top >= n else 0.0
    i = np.arange(top + 1, dtype=float)
    log_terms = (gammaln(n + 1) - gammaln(i + 1) - gammaln(n - i + 1)
                 + i * math.log(p) + (n - i) * math.log1p(-p))
    return float(min(1.0, math.exp(logsumexp(log_terms))))


def chernoff_step(k: int, omega: float, beta: float = BETA_STAR) -> dict:
    """Instantiate the binomial concentration step of the depth-3 argument.

    Returns p, the threshold e^beta lnln k - 2 sqrt(e^beta lnln k) and the
    exact tail P(Bin(k, p) < threshold).
    """
    lam = omega * math.exp(k * math.log1p(omega))
    a = math.exp(-k * math.log1p(omega))
    p = omega * (1.0 + lam) / (lam * (1.0 + omega)) * (1.0 - a) ** (k - 1) * a * k
    m = math.exp(beta) * math.log(math.log(k))
    threshold = m - 2.0 * math.sqrt(m)
    return {"p": p, "threshold": threshold, "tail": binomial_tail(k, p, threshold),
            "p_lower": m / k}
