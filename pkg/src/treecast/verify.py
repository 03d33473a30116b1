"""Batch verification of every identity and inequality on one model instance."""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import CapacityError
from .model import ModelParams
from .popdyn import run_decay
from .posterior import (
    PosteriorMode,
    atom_recursion,
    calA_ratio_check,
    enumeration_moments,
    likelihood_pass_batch,
    magnetization_of,
    moments_from_laws,
    posterior_from_loglik,
    partial_tree_laws,
    q_recursion_batch,
    t1_closed_form,
    t2_closed_form,
    upward_log_likelihood,
)
from .recursion import (
    add_edge,
    child_moment_relations,
    child_moments_direct,
    fold_tree_batch,
    level_bound,
    one_step_bound,
    recursion_coefficients,
)
from .tree import (
    MAX_ENUM_LEAVES,
    MAX_ENUM_VERTICES,
    TreeShape,
    brute_force_posterior,
    broadcast_probability,
    enumerate_configurations,
    gibbs_probability,
    sample_broadcast_batch,
    site_fugacities,
)

# leaf patterns checked exhaustively against brute force; beyond this a sample
MAX_ORACLE_PATTERNS = 4096


@dataclass
class CheckRecord:
    name: str
    lhs: float | None
    rhs: float | None
    tolerance: float | None
    passed: bool
    status: str = "checked"   # "checked" or "skipped"
    reason: str = ""

    def as_dict(self) -> dict:
        return {
            "name": self.name,
            "lhs": self.lhs,
            "rhs": self.rhs,
            "tolerance": self.tolerance,
            "pass": self.passed,
            "status": self.status,
            "reason": self.reason,
        }


@dataclass
class VerifyReport:
    params: ModelParams
    depth: int
    seed: int
    samples: int
    pop_size: int
    workers: int
    records: list[CheckRecord] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.records if r.status == "checked")

    def summary(self) -> dict:
        checked = [r for r in self.records if r.status == "checked"]
        return {
            "checks": len(self.records),
            "passed": sum(r.passed for r in checked),
            "failed": sum(not r.passed for r in checked),
            "skipped": len(self.records) - len(checked),
            "overall_pass": self.passed,
        }

    def as_dict(self) -> dict:
        return {
            "params": self.params.as_dict(),
            "depth": self.depth,
            "seed": self.seed,
            "samples": self.samples,
            "pop_size": self.pop_size,
            "workers": self.workers,
            "summary": self.summary(),
            "records": [r.as_dict() for r in self.records],
        }


class _Recorder:
    def __init__(self, report: VerifyReport):
        self.report = report

    def close(self, name, lhs, rhs, tol, rel=False):
        lhs, rhs = float(lhs), float(rhs)
        err = abs(lhs - rhs)
        if rel:
            err /= max(abs(rhs), 1e-300)
        self._add(CheckRecord(name, lhs, rhs, tol, bool(err <= tol)))

    def le(self, name, lhs, rhs, tol):
        """lhs <= rhs + tol."""
        self._add(CheckRecord(name, float(lhs), float(rhs), tol, bool(lhs <= rhs + tol)))

    def skip(self, name, reason):
        self._add(CheckRecord(name, None, None, None, True, "skipped", reason))

    def _add(self, rec):
        self.report.records.append(rec)


def _leaf_patterns(shape: TreeShape, rng) -> np.ndarray:
    if shape.n_leaves <= 12 and 2**shape.n_leaves <= MAX_ORACLE_PATTERNS:
        return np.array(list(itertools.product((0, 1), repeat=shape.n_leaves)), dtype=np.int8)
    return rng.integers(0, 2, size=(MAX_ORACLE_PATTERNS // 16, shape.n_leaves)).astype(np.int8)


def _check_model(rec: _Recorder, p: ModelParams):
    rec.close("model.reversibility", p.pi1 * p.p(1, 0), p.pi0 * p.p(0, 1), 1e-15, rel=True)
    rec.close("model.theta", p.theta, p.p(0, 0) - p.p(1, 0), 1e-15)
    rec.close("model.pi01_minus_delta", p.pi01 - 1.0, p.delta, 1e-12, rel=True)


def _check_enumeration(rec: _Recorder, p: ModelParams, depth: int):
    for d in range(1, depth + 1):
        shape = TreeShape(p.k, d)
        name = f"broadcast_gibbs_equivalence.depth{d}"
        if shape.n_vertices > MAX_ENUM_VERTICES:
            rec.skip(name, f"{shape.n_vertices} vertices exceeds enumeration cap {MAX_ENUM_VERTICES}")
            continue
        fug = site_fugacities(p, shape)
        worst, total = 0.0, 0.0
        for c in enumerate_configurations(shape):
            b = broadcast_probability(p, c)
            g, _ = gibbs_probability(fug, c)
            worst = max(worst, abs(b - g))
            total += b
        rec.close(name, worst, 0.0, 1e-12)
        rec.close(f"broadcast_normalization.depth{d}", total, 1.0, 1e-12)


def _check_oracles(rec: _Recorder, p: ModelParams, depth: int, rng):
    for d in range(1, depth + 1):
        shape = TreeShape(p.k, d)
        if shape.n_leaves > MAX_ENUM_LEAVES or shape.n_vertices > MAX_ENUM_VERTICES:
            rec.skip(f"likelihood_vs_brute_force.depth{d}", "tree exceeds oracle cap")
            rec.skip(f"mode_bridge.depth{d}", "tree exceeds oracle cap")
            continue
        leaves = _leaf_patterns(shape, rng)
        fast = likelihood_pass_batch(p, shape, leaves)
        slow = np.array([brute_force_posterior(p, shape, a) for a in leaves])
        rec.close(f"likelihood_vs_brute_force.depth{d}", np.max(np.abs(fast - slow)), 0.0, 1e-10)
        # paper odds = (1 + omega) * exact odds, compared on the probability scale
        q_paper = q_recursion_batch(shape, leaves, p.lambda_internal)
        with np.errstate(divide="ignore"):
            odds = fast / (1.0 - fast)
        bridged = np.where(np.isinf(odds), 1.0, (1 + p.omega) * odds / (1.0 + (1 + p.omega) * odds))
        rec.close(f"mode_bridge.depth{d}", np.max(np.abs((1.0 - q_paper) - bridged)), 0.0, 1e-10)


def _check_closed_forms(rec: _Recorder, p: ModelParams):
    l1 = atom_recursion(p, 1, PosteriorMode.PAPER)
    t1 = t1_closed_form(p)
    for cond, law in (("1", l1.q1), ("0", l1.q0)):
        for v, pr in t1[cond]:
            rec.close(f"t1_atom_prob.root{cond}.q={v:.6g}", law.prob_of(v), pr, 1e-12)
    l2 = atom_recursion(p, 2, PosteriorMode.PAPER)
    for i, (v, pr) in enumerate(t2_closed_form(p)):
        rec.close(f"t2_atom_prob.root1.atom{i}", l2.q1.prob_of(v), pr, 1e-12)
    ratio = calA_ratio_check(p)
    rec.close("calA_ratio.broadcast_root_odds", ratio.lhs, ratio.rhs_bridged, 1e-12, rel=True)


def _check_atoms(rec: _Recorder, p: ModelParams, depth: int):
    laws = {}
    for d in range(0, depth + 1):
        try:
            laws[d] = atom_recursion(p, d, PosteriorMode.EXACT)
        except CapacityError as exc:
            for name in ("mean_zero", "xbar_mixture", "conditional_means", "atoms_vs_enumeration", "child_moments",
                         "level_bound", "monotone_decay", "one_step_bound"):
                rec.skip(f"{name}.depth{d}", str(exc))
            continue
        m = moments_from_laws(p, laws[d])
        rec.close(f"mean_zero.depth{d}", p.pi1 * m.e1x + p.pi0 * m.e0x, 0.0, 1e-10)
        rec.close(f"xbar_mixture.depth{d}", m.xbar, p.pi1 * m.xbar1 + p.pi0 * m.xbar0, 1e-12)
        rec.close(f"conditional_means.e1.depth{d}", m.e1x, p.pi01 * m.xbar, 1e-10)
        rec.close(f"conditional_means.e0.depth{d}", m.e0x, -m.xbar, 1e-10)
        shape = TreeShape(p.k, d)
        if shape.n_vertices <= MAX_ENUM_VERTICES:
            e = enumeration_moments(p, d)
            worst = max(abs(a - b) for a, b in zip(
                (m.xbar, m.xbar1, m.xbar0, m.e1x, m.e0x), (e.xbar, e.xbar1, e.xbar0, e.e1x, e.e0x)))
            rec.close(f"atoms_vs_enumeration.depth{d}", worst, 0.0, 1e-9)
        else:
            rec.skip(f"atoms_vs_enumeration.depth{d}", "tree exceeds enumeration cap")
        if d == 0:
            continue
        if d - 1 not in laws:
            continue
        sub = moments_from_laws(p, laws[d - 1])
        pred = child_moment_relations(sub, p)
        direct = child_moments_direct(sub, p)
        rec.close(f"child_moments.depth{d}", max(abs(a - b) for a, b in zip(pred, direct)), 0.0, 1e-10)
        rec.le(f"level_bound.depth{d}", m.xbar, level_bound(sub.xbar, p), 1e-12)
        rec.le(f"monotone_decay.depth{d}", m.xbar, sub.xbar, 1e-12)
        worst_gap, bad = -math.inf, []
        try:
            for j in range(p.k):
                y = moments_from_laws(p, partial_tree_laws(p, d, j))
                merged = moments_from_laws(p, partial_tree_laws(p, d, j + 1))
                worst_gap = max(worst_gap, merged.xbar - one_step_bound(y.xbar, sub.xbar, p))
                bad += recursion_coefficients(y, sub, p).violations(p)
        except CapacityError as exc:
            rec.skip(f"one_step_bound.depth{d}", str(exc))
            continue
        rec.le(f"one_step_bound.depth{d}", worst_gap, 0.0, 1e-12)
        rec.close(f"recursion_coefficients.depth{d}", len(bad), 0, 0)


def _check_pointwise(rec: _Recorder, p: ModelParams, depth: int, samples: int, rng):
    shape = TreeShape(p.k, depth)
    configs = sample_broadcast_batch(p, shape, samples, "free", rng)
    leaves = configs[:, shape.leaf_start:]
    x_direct = magnetization_of(p, likelihood_pass_batch(p, shape, leaves))
    x_fold = fold_tree_batch(p, p.k, depth, leaves)
    rec.close("fold_vs_likelihood", np.max(np.abs(x_fold - x_direct)), 0.0, 1e-10)
    # reverse the child order at every level
    rev = leaves.reshape(samples, *([p.k] * depth))[(slice(None),) + (slice(None, None, -1),) * depth]
    x_rev = fold_tree_batch(p, p.k, depth, rev.reshape(samples, -1))
    rec.close("fold_permutation_invariance", np.max(np.abs(x_rev - x_fold)), 0.0, 1e-10)
    if depth >= 1:
        sub = TreeShape(p.k, depth - 1)
        sub_leaves = sample_broadcast_batch(p, sub, samples, "free", rng)[:, sub.leaf_start:]
        ll = upward_log_likelihood(p, sub, sub_leaves)
        z = magnetization_of(p, posterior_from_loglik(p, ll))
        log_m = p.log_transition
        above = np.stack(
            [np.logaddexp(log_m[s, 0] + ll[:, 0], log_m[s, 1] + ll[:, 1]) for s in (0, 1)], axis=1
        )
        yhat = magnetization_of(p, posterior_from_loglik(p, above))
        rec.close("add_edge", np.max(np.abs(yhat - add_edge(z, p))), 0.0, 1e-10)


def _check_sampled_decay(rec: _Recorder, p: ModelParams, depth: int, pop: int, seed: int, workers: int):
    trace = run_decay(p, depth, pop, seed, workers, stop_below=0.0)
    worst_mono = worst_bound = -math.inf
    for prev, cur in zip(trace.moments, trace.moments[1:]):
        slack = 4.0 * math.hypot(cur.stderr or 0.0, prev.stderr or 0.0)
        worst_mono = max(worst_mono, cur.xbar - prev.xbar - slack)
        worst_bound = max(worst_bound, cur.xbar - level_bound(prev.xbar, p) - 4.0 * (cur.stderr or 0.0))
    rec.le("popdyn.monotone_decay_4sigma", worst_mono, 0.0, 0.0)
    rec.le("popdyn.level_bound_4sigma", worst_bound, 0.0, 0.0)


def cmd_verify(params: ModelParams, depth: int, seed: int = 0xC0FFEE, samples: int = 10_000,
               pop_size: int = 20_000, workers: int = 1) -> VerifyReport:
    report = VerifyReport(params, depth, int(seed), samples, pop_size, workers)
    rec = _Recorder(report)
    rng = np.random.default_rng(seed)
    _check_model(rec, params)
    _check_enumeration(rec, params, depth)
    _check_oracles(rec, params, depth, rng)
    _check_closed_forms(rec, params)
    _check_atoms(rec, params, depth)
    _check_pointwise(rec, params, depth, samples, rng)
    if depth >= 1:
        _check_sampled_decay(rec, params, depth, pop_size, seed, workers)
    return report
