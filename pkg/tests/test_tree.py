from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from treecast.errors import CapacityError, ParameterError
from treecast.model import derive_from_omega
from treecast.tree import (
    Configuration,
    FugacityAssignment,
    TreeShape,
    broadcast_probability,
    brute_force_posterior,
    enumerate_configurations,
    gibbs_probability,
    sample_broadcast,
    sample_broadcast_batch,
    site_fugacities,
    worker_seed,
)

P21 = derive_from_omega(2, 1.0)
SMALL = [(1, 1), (1, 3), (2, 1), (2, 2), (2, 3), (3, 1), (3, 2), (4, 1)]


@pytest.mark.parametrize("k,depth", [(1, 0), (1, 4), (2, 0), (2, 3), (3, 2), (5, 2)])
def test_shape_counts(k, depth):
    s = TreeShape(k, depth)
    expect = depth + 1 if k == 1 else (k ** (depth + 1) - 1) // (k - 1)
    assert s.n_vertices == expect
    assert s.n_leaves == k ** depth
    for v in range(1, s.n_vertices):
        assert v in s.children(s.parent(v))


def test_shape_rejects_bad():
    with pytest.raises(ParameterError):
        TreeShape(0, 1)
    with pytest.raises(ParameterError):
        TreeShape(2, -1)


def test_enumeration_examples():
    assert len(enumerate_configurations(TreeShape(2, 1), leaves_only=True)) == 4
    full = enumerate_configurations(TreeShape(2, 1))
    assert len(full) == 5
    assert sum(c.root for c in full) == 1
    path = enumerate_configurations(TreeShape(1, 2))
    assert sorted(c.to_string() for c in path) == ["000", "001", "010", "100", "101"]


def test_enumeration_cap():
    with pytest.raises(CapacityError):
        enumerate_configurations(TreeShape(2, 4))
    with pytest.raises(CapacityError):
        enumerate_configurations(TreeShape(2, 5), leaves_only=True)


def test_broadcast_probability_examples():
    s = TreeShape(2, 1)
    assert broadcast_probability(P21, Configuration(s, (1, 0, 0))) == pytest.approx(1 / 3)
    assert broadcast_probability(P21, Configuration(s, (0, 0, 1))) == pytest.approx(1 / 6)
    assert broadcast_probability(P21, Configuration(s, (1, 1, 0))) == 0.0


@pytest.mark.parametrize("k,depth", SMALL)
@pytest.mark.parametrize("omega", [0.3, 1.0])
def test_broadcast_gibbs_equivalence(k, depth, omega):
    params = derive_from_omega(k, omega)
    shape = TreeShape(k, depth)
    fug = site_fugacities(params, shape)
    total = 0.0
    for c in enumerate_configurations(shape):
        b = broadcast_probability(params, c)
        g, _ = gibbs_probability(fug, c)
        assert abs(b - g) < 1e-12
        total += b
    assert total == pytest.approx(1.0, abs=1e-12)


def test_gibbs_uniform_example():
    shape = TreeShape(2, 1)
    fug = FugacityAssignment(shape, (4.0, 4.0, 4.0))
    p, z = gibbs_probability(fug, Configuration(shape, (1, 0, 0)))
    assert z == pytest.approx(1 + 3 * 4 + 16)
    assert p == pytest.approx(4 / z)
    p0, _ = gibbs_probability(fug, Configuration(shape, (0, 0, 0)))
    assert p0 == pytest.approx(1 / z)


def test_gibbs_zero_fugacity_limit():
    shape = TreeShape(2, 1)
    fug = FugacityAssignment(shape, (1e-12,) * 3)
    p, _ = gibbs_probability(fug, Configuration(shape, (0, 0, 0)))
    assert p == pytest.approx(1.0, abs=1e-11)


def test_brute_force_examples():
    s = TreeShape(2, 1)
    assert brute_force_posterior(P21, s, (0, 0)) == pytest.approx(2 / 3)
    assert brute_force_posterior(P21, s, (0, 1)) == 0.0
    assert brute_force_posterior(derive_from_omega(1, 1.0), TreeShape(1, 1), (0,)) == pytest.approx(0.5)


def test_every_leaf_pattern_possible():
    # all-zero internals are compatible with any leaf pattern
    shape = TreeShape(2, 2)
    for leaves in enumerate_configurations(shape, leaves_only=True):
        assert 0.0 <= brute_force_posterior(P21, shape, leaves) <= 1.0


def test_sample_root_one_forces_children_zero():
    shape = TreeShape(3, 2)
    arr = sample_broadcast_batch(derive_from_omega(3, 2.0), shape, 500, "one", np.random.default_rng(1))
    assert (arr[:, 0] == 1).all()
    assert (arr[:, 1:4] == 0).all()


def test_sample_frequencies():
    rng = np.random.default_rng(11)
    n = 100_000
    shape = TreeShape(2, 1)
    arr = sample_broadcast_batch(P21, shape, n, "zero", rng)
    sigma = np.sqrt(0.25 / n)
    assert abs(arr[:, 1].mean() - 0.5) < 3 * sigma
    assert abs(arr[:, 2].mean() - 0.5) < 3 * sigma
    arr = sample_broadcast_batch(P21, shape, n, "free", rng)
    sigma = np.sqrt(2 / 9 / n)
    assert abs(arr[:, 0].mean() - 1 / 3) < 3 * sigma


@pytest.mark.parametrize("k,depth,omega", [(2, 2, 1.0), (3, 1, 0.3)])
def test_sample_matches_probabilities(k, depth, omega):
    params = derive_from_omega(k, omega)
    shape = TreeShape(k, depth)
    n = 100_000
    arr = sample_broadcast_batch(params, shape, n, "free", np.random.default_rng(5))
    assert not ((arr[:, 1:] == 1) & (arr[:, [shape.parent(v) for v in range(1, shape.n_vertices)]] == 1)).any()
    keys, counts = np.unique(arr, axis=0, return_counts=True)
    seen = {tuple(int(x) for x in key): c for key, c in zip(keys, counts)}
    for c in enumerate_configurations(shape):
        p = broadcast_probability(params, c)
        sigma = np.sqrt(p * (1 - p) / n)
        assert abs(seen.get(c.states, 0) / n - p) < 4 * sigma + 1e-12


def test_sample_single_is_independent():
    c = sample_broadcast(P21, TreeShape(2, 4), rng=np.random.default_rng(3))
    assert c.is_independent()


def test_configuration_round_trip():
    shape = TreeShape(2, 2)
    c = Configuration.from_string(shape, "0101000")
    assert c.to_string() == "0101000"
    assert c.leaves == (1, 0, 0, 0)
    bad = Configuration.from_string(shape, "1100000")
    assert bad.violations() == [(0, 1)]
    with pytest.raises(ParameterError):
        Configuration.from_string(shape, "010")


@given(master=st.integers(0, 2**64 - 1), i=st.integers(0, 1000), j=st.integers(0, 1000))
@settings(max_examples=200)
def test_worker_seeds_distinct(master, i, j):
    s = worker_seed(master, i)
    assert 0 <= s < 2**64
    assert worker_seed(master, 0) == master
    if i != j:
        assert s != worker_seed(master, j)
