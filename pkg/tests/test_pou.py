import itertools

import numpy as np
import pytest
from scipy.stats import qmc

from conftest import random_mesh
from nird.mesh import MeshForest, unit_square_macro
from nird.pou import (PartitionOfUnity, chi_eval, greedy_contiguous, hilbert_index, partition_home_domains,
                      vertex_neighbours)

TOL = {"discontinuous": 1e-12, "C0": 1e-12, "Cinf": 1e-10}


def halton(n=10_000):
    return qmc.Halton(d=2, scramble=False).random(n + 1)[1:]


@pytest.fixture(scope="module")
def partitions():
    out = {}
    for P in (4, 16):
        mesh = random_mesh(P, steps=5)
        errors = np.random.default_rng(P).random(mesh.nleaves)
        out[P] = partition_home_domains(mesh, errors, P)
    return out


@pytest.mark.parametrize("P", [4, 16])
@pytest.mark.parametrize("kind", ["discontinuous", "C0", "Cinf"])
def test_sums_to_one_and_nonnegative(partitions, P, kind):
    pou = PartitionOfUnity(kind, partitions[P])
    chi = pou.values(halton())
    assert np.all(chi >= 0)
    assert np.abs(chi.sum(axis=1) - 1).max() <= TOL[kind]


@pytest.mark.parametrize("P", [4, 16])
@pytest.mark.parametrize("kind", ["discontinuous", "C0", "Cinf"])
def test_support_confinement(partitions, P, kind):
    pou = PartitionOfUnity(kind, partitions[P])
    pts = halton()
    coarse = pou.mesh.locate_points(pts)
    chi = pou.values(pts, coarse)
    violations = 0
    for l in range(P):
        allowed = np.zeros(pou.mesh.nleaves, dtype=bool)
        allowed[pou.support_elements(l)] = True
        violations += int(np.sum((chi[:, l] > 0) & ~allowed[coarse]))
        # support is inside home domain plus its vertex neighbours
        home = np.flatnonzero(pou.owner == l)
        nb = set(pou.neighbours[home].ravel().tolist()) - {-1}
        assert set(pou.support_elements(l).tolist()) <= nb
    assert violations == 0
    # ranks_touching agrees with the evaluated support
    for k in range(0, pou.mesh.nleaves, 7):
        inside = coarse == k
        if inside.any():
            seen = set(np.flatnonzero(chi[inside].max(axis=0) > 0).tolist())
            assert seen <= pou.ranks_touching(k)


def test_rank_values_match_values(partitions):
    pts = halton(500)
    for kind in ("discontinuous", "C0", "Cinf"):
        pou = PartitionOfUnity(kind, partitions[4])
        coarse = pou.mesh.locate_points(pts)
        full = pou.values(pts, coarse)
        for l in range(4):
            assert np.allclose(pou.rank_values(l, pts, coarse), full[:, l], atol=1e-15)
        assert np.isclose(chi_eval(pou, 2, pts[0]), full[0, 2])


def test_bump_value_at_centroid():
    # exp(-1 / sqrt(lambda1 lambda2 lambda3)) with all lambdas 1/3 is exp(-sqrt 27);
    # reference value from 30-digit decimal arithmetic
    expected = 5.53783071438247e-3
    assert np.isclose(np.exp(-1 / np.sqrt(1 / 27)), expected, rtol=1e-12)
    mesh = MeshForest.from_macro(unit_square_macro(2))
    part = partition_home_domains(mesh, np.ones(8), 4)
    pou = PartitionOfUnity("Cinf", part)
    # at the centroid of the extended triangle all its coordinates are 1/3
    ext = pou.extended[0]
    c = ext.mean(axis=0)[None]
    w, cand = pou.bump_weights(c, np.array([0]))
    assert np.isclose(w[0][cand[0] == 0][0], expected, rtol=1e-10)


def test_C0_value_at_shared_vertex():
    mesh = MeshForest.from_macro(unit_square_macro(2))
    part = partition_home_domains(mesh, np.ones(8), 4)
    # all eight macro triangles meet at the centre, and each rank owns two of them
    assert sorted(np.bincount(part.owner).tolist()) == [2, 2, 2, 2]
    pou = PartitionOfUnity("C0", part)
    assert np.allclose(pou.values([[0.5, 0.5]]), 0.25)


def test_discontinuous_is_indicator(partitions):
    pou = PartitionOfUnity("discts", partitions[4])
    c = pou.mesh.centroids()
    chi = pou.values(c, np.arange(len(c)))
    assert np.array_equal(chi.argmax(axis=1), pou.owner)
    assert set(np.unique(chi).tolist()) == {0.0, 1.0}


def brute_contiguous(w, P):
    """Smallest achievable maximum run weight over all contiguous splits."""
    n = len(w)
    best = None
    for cuts in itertools.combinations(range(1, n), P - 1):
        b = (0,) + cuts + (n,)
        m = max(sum(w[b[i]:b[i + 1]]) for i in range(P))
        best = m if best is None else min(best, m)
    return best


def test_greedy_partition_within_factor_two():
    w = [4, 1, 1, 1, 1, 1, 1, 2]
    owner = greedy_contiguous(w, 4)
    assert np.all(np.diff(owner) >= 0) and len(set(owner.tolist())) == 4
    greedy_max = max(np.bincount(owner, w))
    assert greedy_max <= 2 * brute_contiguous(w, 4)
    rng = np.random.default_rng(0)
    for _ in range(30):
        w = rng.random(10).tolist()
        owner = greedy_contiguous(w, 4)
        assert max(np.bincount(owner, w)) <= 2 * brute_contiguous(w, 4) + 1e-12
    with pytest.raises(ValueError):
        greedy_contiguous([1.0, 1.0], 4)


def test_partition_is_balanced_and_deterministic():
    mesh = random_mesh(9, steps=6)
    e = np.random.default_rng(1).random(mesh.nleaves)
    a = partition_home_domains(mesh, e, 8)
    b = partition_home_domains(mesh, e.copy(), 8)
    assert np.array_equal(a.owner, b.owner)
    share = np.bincount(a.owner, e ** 2) / np.sum(e ** 2)
    assert share.max() < 2.5 / 8
    with pytest.raises(ValueError):
        partition_home_domains(mesh, e, 3)
    with pytest.raises(ValueError):
        partition_home_domains(MeshForest.from_macro(unit_square_macro(2)), np.ones(8), 16)


def test_hilbert_curve_is_a_bijection_on_a_grid():
    n = 8
    g = (np.stack(np.meshgrid(np.arange(n), np.arange(n)), -1).reshape(-1, 2) + 0.5) / n
    d = hilbert_index(g, order=3)
    assert sorted(d.tolist()) == list(range(n * n))
    # consecutive cells are grid neighbours
    pos = g[np.argsort(d)] * n
    assert np.all(np.abs(np.diff(pos, axis=0)).sum(axis=1) == 1)


def test_vertex_neighbours_include_self():
    mesh = random_mesh(2, steps=3)
    nb = vertex_neighbours(mesh)
    for k in range(mesh.nleaves):
        assert k in nb[k]


def test_unknown_kind():
    mesh = MeshForest.from_macro(unit_square_macro(2))
    with pytest.raises(ValueError):
        PartitionOfUnity("smooth", partition_home_domains(mesh, np.ones(8), 2))
