from __future__ import annotations

import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from treecast.errors import DomainError, ParameterError
from treecast.model import (
    BETA_STAR,
    bounds_report,
    contraction_crossing_k,
    contraction_factor,
    derive_from_lambda,
    derive_from_omega,
    ks_lambda,
    ks_value,
    omega_bar,
)


def test_k2_omega1():
    p = derive_from_omega(2, 1.0)
    assert p.lambda_internal == pytest.approx(4.0)
    assert p.lambda_root == pytest.approx(2.0)
    assert (p.pi1, p.pi0) == pytest.approx((1 / 3, 2 / 3))
    assert p.theta == pytest.approx(-0.5)
    assert p.delta == pytest.approx(1.0)
    assert p.pi01 == pytest.approx(2.0)


def test_k1_transition():
    p = derive_from_omega(1, 1.0)
    assert p.lambda_internal == pytest.approx(2.0)
    np.testing.assert_allclose(p.transition, [[0, 1], [0.5, 0.5]])


def test_small_omega_limit():
    w = 1e-9
    p = derive_from_omega(2, w)
    assert p.lambda_internal == pytest.approx(w, rel=1e-6)
    assert p.pi1 == pytest.approx(w, rel=1e-6)
    assert p.theta == pytest.approx(-w, rel=1e-6)


@pytest.mark.parametrize("bad", [0.0, -1.0, math.inf, math.nan])
def test_bad_omega(bad):
    with pytest.raises(ParameterError):
        derive_from_omega(2, bad)


def test_bad_k():
    with pytest.raises(ParameterError):
        derive_from_omega(0, 1.0)
    with pytest.raises(ParameterError):
        derive_from_lambda(2, 0.0)
    with pytest.raises(ParameterError):
        derive_from_lambda(2, math.inf)


@pytest.mark.parametrize("k,lam", [(2, 4.0), (1, 2.0)])
def test_inverse_simple(k, lam):
    assert derive_from_lambda(k, lam).omega == pytest.approx(1.0, rel=1e-14)


def test_inverse_k20():
    p = derive_from_lambda(20, 1.7)
    assert p.omega * (1 + p.omega) ** 20 == pytest.approx(1.7, rel=1e-12)
    assert derive_from_omega(20, p.omega).lambda_internal == pytest.approx(1.7, rel=1e-12)


def test_large_lambda_converges():
    p = derive_from_lambda(3, 1e12)
    assert p.lambda_internal == pytest.approx(1e12, rel=1e-10)


@given(k=st.integers(1, 50), logw=st.floats(math.log(1e-6), math.log(1e3)))
@settings(max_examples=200, deadline=None)
def test_round_trip(k, logw):
    w = math.exp(logw)
    lam = derive_from_omega(k, w).lambda_internal
    assert derive_from_lambda(k, lam).omega == pytest.approx(w, rel=1e-10)


@given(k=st.integers(1, 50), a=st.floats(1e-6, 1e3), b=st.floats(1e-6, 1e3))
def test_lambda_monotone(k, a, b):
    if a == b:
        return
    lo, hi = sorted((a, b))
    assert derive_from_omega(k, lo).lambda_internal < derive_from_omega(k, hi).lambda_internal


@given(k=st.integers(1, 200), w=st.floats(1e-6, 1e3))
def test_invariants(k, w):
    if k * math.log1p(w) > 709:
        # (1+w)^k overflows a double somewhere past here
        try:
            derive_from_omega(k, w)
        except ParameterError:
            return
    p = derive_from_omega(k, w)
    assert p.pi1 + p.pi0 == pytest.approx(1.0, abs=1e-15)
    np.testing.assert_allclose(np.asarray(p.transition).sum(axis=1), 1.0, atol=1e-15)
    assert p.p(1, 1) == 0.0
    assert p.p(0, 1) == pytest.approx(w / (1 + w), rel=1e-15)
    assert p.pi1 * p.p(1, 0) == pytest.approx(p.pi0 * p.p(0, 1), rel=1e-15)
    assert p.theta == pytest.approx(p.p(0, 0) - p.p(1, 0), rel=1e-12)
    assert p.theta == pytest.approx(p.p(1, 1) - p.p(0, 1), rel=1e-12)
    assert p.pi01 - 1 == pytest.approx(p.delta, rel=1e-12)
    assert p.lambda_root * (1 + w) == pytest.approx(p.lambda_internal, rel=1e-12)
    assert ks_value(k, w) == pytest.approx(p.theta ** 2 * k, rel=1e-14)


def test_bounds_k1000():
    rep = bounds_report(1000)
    assert rep.omega_bar == pytest.approx(7.1218e-3, rel=1e-4)
    assert rep.contraction_factor == pytest.approx(1.79, abs=0.01)
    assert rep.contraction_factor > 1
    assert contraction_factor(1e5, omega_bar(1e5)) < 1


def test_bounds_k20():
    rep = bounds_report(20)
    assert rep.main_lambda == pytest.approx(2.835, abs=1e-3)
    assert rep.bw_lambda == pytest.approx(24.39, abs=1e-2)
    assert rep.martin_lambda == pytest.approx(math.e - 1)


def test_omega_bar_domain():
    with pytest.raises(DomainError):
        omega_bar(15)
    rep = bounds_report(10)
    assert rep.omega_bar is None and rep.contraction_factor is None
    rep = bounds_report(10, omega=0.1)
    assert rep.contraction_factor > 0


def test_crossing_k():
    kc = contraction_crossing_k(BETA_STAR)
    assert contraction_factor(kc, omega_bar(kc)) < 1 <= contraction_factor(kc - 1, omega_bar(kc - 1))
    assert 1e4 < kc < 3e4


@pytest.mark.parametrize("k,w,val", [(100, 0.05, 3.0456), (100, 0.01, 0.01649)])
def test_contraction_examples(k, w, val):
    assert contraction_factor(k, w) == pytest.approx(val, rel=2e-4)


def test_contraction_vs_mpmath():
    rng = np.random.default_rng(1)
    mpmath.mp.dps = 50
    for _ in range(20):
        k = int(rng.integers(1, 10**6))
        w = float(10 ** rng.uniform(-6, math.log10(100.0 / k)))
        ref = mpmath.mpf(w) ** 2 * mpmath.exp(mpmath.mpf(w) * k / 2) * k
        assert contraction_factor(k, w) == pytest.approx(float(ref), rel=1e-12)


def test_ks_lambda_k20():
    lam = ks_lambda(20)
    p = derive_from_lambda(20, lam)
    assert p.theta ** 2 * 20 == pytest.approx(1.0, rel=1e-10)
    assert 45.4 < lam < 45.6
