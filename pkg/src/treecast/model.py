"""Parametrization of the hardcore broadcast model and its closed-form bounds.

The canonical tree is the k-ary tree (every vertex has k children).  A model
instance is fixed by ``(k, omega)``; the fugacity seen by an internal vertex is
``omega * (1 + omega) ** k`` and the root of a k-ary tree (which has one
neighbour fewer) sees ``omega * (1 + omega) ** (k - 1)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from .errors import DomainError, NumericError, ParameterError

#: Boundary value ln 2 - ln ln 2 of the admissible beta range.
BETA_STAR = math.log(2.0) - math.log(math.log(2.0))

#: Non-reconstruction is known below this fugacity for every k.
MARTIN_LAMBDA = math.e - 1.0


def _check_k(k: int) -> int:
    if isinstance(k, bool) or int(k) != k or k < 1:
        raise ParameterError(f"k must be an integer >= 1, got {k!r}")
    return int(k)


def _pow1p(omega: float, n: float) -> float:
    """(1 + omega) ** n evaluated as exp(n * log1p(omega))."""
    try:
        return math.exp(n * math.log1p(omega))
    except OverflowError:
        raise ParameterError(f"(1+omega)^{n} overflows a double at omega={omega}") from None


@dataclass(frozen=True)
class ModelParams:
    """All scalar parameters of one ``(k, omega)`` instance.

    Rows of ``transition`` are indexed by the parent state, columns by the
    child state, both in the order ``(1, 0)``::

        [[p11, p10],      [[0,         1        ],
         [p01, p00]]  ==   [w/(1+w),   1/(1+w)  ]]
    """

    k: int
    omega: float
    lambda_internal: float
    lambda_root: float
    pi1: float
    pi0: float
    pi01: float
    delta: float
    theta: float
    transition: tuple[tuple[float, float], tuple[float, float]] = field(repr=False)

    @property
    def lam(self) -> float:
        return self.lambda_internal

    def p(self, parent: int, child: int) -> float:
        """Transition probability M[parent -> child]."""
        row = self.transition[0] if parent == 1 else self.transition[1]
        return row[0] if child == 1 else row[1]

    def prior(self, state: int) -> float:
        return self.pi1 if state == 1 else self.pi0

    @property
    def log_transition(self) -> np.ndarray:
        """log M as a 2x2 array indexed ``[parent, child]`` with 0/1 indices."""
        m = np.array(
            [[self.p(0, 0), self.p(0, 1)], [self.p(1, 0), self.p(1, 1)]], dtype=float
        )
        with np.errstate(divide="ignore"):
            return np.log(m)

    def as_dict(self) -> dict:
        return {
            "k": self.k,
            "omega": self.omega,
            "lambda": self.lambda_internal,
            "lambda_internal": self.lambda_internal,
            "lambda_root": self.lambda_root,
            "pi1": self.pi1,
            "pi0": self.pi0,
            "pi01": self.pi01,
            "delta": self.delta,
            "theta": self.theta,
            "transition": [list(r) for r in self.transition],
        }


def derive_from_omega(k: int, omega: float) -> ModelParams:
    k = _check_k(k)
    try:
        omega = float(omega)
    except (TypeError, ValueError) as exc:
        raise ParameterError(f"omega must be a real number, got {omega!r}") from exc
    if not math.isfinite(omega) or omega <= 0.0:
        raise ParameterError(f"omega must be positive and finite, got {omega!r}")

    p01 = omega / (1.0 + omega)
    p00 = 1.0 / (1.0 + omega)
    return ModelParams(
        k=k,
        omega=omega,
        lambda_internal=omega * _pow1p(omega, k),
        lambda_root=omega * _pow1p(omega, k - 1),
        pi1=omega / (1.0 + 2.0 * omega),
        pi0=(1.0 + omega) / (1.0 + 2.0 * omega),
        pi01=(1.0 + omega) / omega,
        delta=1.0 / omega,
        theta=-p01,
        transition=((0.0, 1.0), (p01, p00)),
    )


def derive_from_lambda(k: int, lam: float) -> ModelParams:
    """Invert ``lam = omega * (1 + omega) ** k`` for omega.

    The map is strictly increasing so the root is unique.  It is bracketed
    in ``u = log(omega)`` (which keeps huge k from underflowing), located by
    Brent's method and polished by Newton steps.
    """
    k = _check_k(k)
    try:
        lam = float(lam)
    except (TypeError, ValueError) as exc:
        raise ParameterError(f"lambda must be a real number, got {lam!r}") from exc
    if not math.isfinite(lam) or lam <= 0.0:
        raise ParameterError(f"lambda must be positive and finite, got {lam!r}")

    log_lam = math.log(lam)

    def f(u: float) -> float:
        return u + k * math.log1p(math.exp(u)) - log_lam

    # omega <= lam, and omega >= lam / (1 + lam) ** k
    hi = log_lam
    lo = log_lam - k * math.log1p(lam) - 1.0
    try:
        u, info = brentq(f, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps,
                         maxiter=500, full_output=True)
    except (ValueError, RuntimeError) as exc:
        raise NumericError(f"could not invert lambda={lam} at k={k}") from exc
    if not info.converged:
        raise NumericError(f"bisection did not converge for lambda={lam}, k={k}")

    for _ in range(3):
        w = math.exp(u)
        step = f(u) / (1.0 + k * w / (1.0 + w))
        u -= step
        if abs(step) < 1e-17:
            break
    return derive_from_omega(k, math.exp(u))


def omega_bar(k: float, beta: float = BETA_STAR) -> float:
    """Non-reconstruction boundary in omega with the o(1) term dropped."""
    if k < 16:
        raise DomainError(
            f"omega_bar needs k >= 16 so that ln ln ln k is defined and the "
            f"bracket is positive; got k={k}"
        )
    lk = math.log(k)
    llk = math.log(lk)
    lllk = math.log(llk)
    value = (lk + llk - lllk - beta) / k
    if value <= 0.0:
        raise DomainError(f"omega_bar(k={k}, beta={beta}) is not positive")
    return value


def contraction_factor(k: float, omega: float) -> float:
    """Linear factor omega^2 * exp(omega*k/2) * k of the second-moment recursion."""
    return omega * omega * math.exp(0.5 * omega * k) * k


def ks_value(k: float, omega: float) -> float:
    """theta^2 * k; reconstruction holds when this exceeds 1."""
    t = omega / (1.0 + omega)
    return t * t * k


def ks_lambda(k: int) -> float:
    """Fugacity at which theta^2 * k = 1 on the k-ary tree."""
    s = 1.0 / math.sqrt(k)
    omega = s / (1.0 - s) if s < 1.0 else math.inf
    if not math.isfinite(omega):
        return math.inf
    return omega * _pow1p(omega, k)


def main_lambda(k: float) -> float:
    lk = math.log(k)
    return math.log(2.0) * lk * lk / (2.0 * math.log(lk))


def bw_lambda(k: float) -> float:
    lk = math.log(k)
    return math.e * lk * lk


@dataclass(frozen=True)
class BoundsReport:
    """Closed-form bounds at one k.  ``omega_bar`` is None when k < 16."""

    k: int
    beta: float
    omega: float | None
    omega_bar: float | None
    ks_value: float | None
    martin_lambda: float
    bw_lambda: float
    main_lambda: float | None
    contraction_factor: float | None
    note: str = "asymptotic bound, o(1) dropped"

    def as_dict(self) -> dict:
        return {
            "k": self.k,
            "beta": self.beta,
            "omega": self.omega,
            "omega_bar": self.omega_bar,
            "ks_value": self.ks_value,
            "martin_lambda": self.martin_lambda,
            "bw_lambda": self.bw_lambda,
            "main_lambda": self.main_lambda,
            "contraction_factor": self.contraction_factor,
            "note": self.note,
        }


def bounds_report(k: int, beta: float = BETA_STAR, omega: float | None = None) -> BoundsReport:
    """Evaluate every bound at ``k``.

    ks_value and contraction_factor use ``omega`` when given, else omega_bar(k).
    For k < 16 omega_bar is absent and so are the omega-dependent fields
    unless ``omega`` is passed explicitly.
    """
    k = _check_k(k)
    if k < 2:
        raise ParameterError("bounds_report needs k >= 2")
    wbar = omega_bar(k, beta) if k >= 16 else None
    w = wbar if omega is None else derive_from_omega(k, omega).omega
    return BoundsReport(
        k=k,
        beta=float(beta),
        omega=w,
        omega_bar=wbar,
        ks_value=None if w is None else ks_value(k, w),
        martin_lambda=MARTIN_LAMBDA,
        bw_lambda=bw_lambda(k),
        main_lambda=main_lambda(k) if k >= 3 else None,
        contraction_factor=None if w is None else contraction_factor(k, w),
    )


def contraction_crossing_k(beta: float = BETA_STAR, lo: int = 16, hi: int = 10**7) -> int:
    """Smallest k in [lo, hi] with contraction_factor(k, omega_bar(k)) < 1.

    Assumes a single crossing inside the interval (checked at both ends).
    """
    def below(k: int) -> bool:
        return contraction_factor(k, omega_bar(k, beta)) < 1.0

    if below(lo):
        return lo
    if not below(hi):
        raise DomainError(f"no crossing of the contraction factor below k={hi}")
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if below(mid):
            hi = mid
        else:
            lo = mid
    return hi
