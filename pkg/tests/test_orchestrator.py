import math

import numpy as np
import pytest

from nird.fosls import ProblemRHS, lsf, prolong, solve_field
from nird.mesh import MeshForest, unit_square_macro
from nird.orchestrator import (CommLedger, NirdConfig, StageError, butterfly_sum, input_hash, manifest, nird_run,
                               preprocess, subproblem_rhs, subproblem_solve)
from nird.problems import instantiate


@pytest.fixture(scope="module")
def small_run():
    return nird_run(instantiate("poisson_smooth"), NirdConfig(P=4, E=300, iterations=2))


def test_config_validation():
    for bad in ({"P": 3}, {"P": 8, "E": 4}, {"degree": 0}, {"iterations": -1}, {"functional": "x"},
                {"preprocess": "x"}, {"pou": "x"}):
        with pytest.raises(ValueError):
            NirdConfig(**bad)
    assert NirdConfig(pou="cinf").pou_kind == "Cinf"
    NirdConfig(P=1)


@pytest.mark.parametrize("kind", ["discontinuous", "C0", "Cinf"])
def test_identity_decomposition(kind):
    """Sum over ranks of f_l equals the global residual F - L u_i pointwise."""
    prob = instantiate("advdiff_in")
    cfg = NirdConfig(P=4, E=400, pou=kind)
    pre = preprocess(prob, cfg)
    fine = pre.mesh.refine(range(0, pre.mesh.nleaves, 2))
    pts = np.random.default_rng(0).random((400, 2))
    elems = fine.locate_points(pts)
    rhs = [subproblem_rhs(l, prob, pre.field, pre.pou) for l in range(4)]
    total = sum(r.evaluate(fine, elems, pts) for r in rhs)
    glob = rhs[0].residual(fine, elems, pts)
    assert np.abs(total - glob).max() <= 1e-12 * max(1.0, np.abs(glob).max())
    # the residual row structure: f enters only the divergence row
    ref = np.zeros_like(glob)
    ref[:, 2] = prob.f_at(pts)
    assert np.allclose(glob, ref - pre.field.L_at_points(pts), atol=1e-12)


def test_preprocessing_predicate(small_run):
    pre = small_run.pre
    cfg = small_run.config
    assert pre.n_coarse >= cfg.P
    assert pre.n_coarse >= cfg.coarse_fraction * cfg.E or pre.eta_ratio <= cfg.ratio_threshold
    assert len(pre.partition.domains) == cfg.P and all(len(d) for d in pre.partition.domains)


def test_uniform_preprocessing_stops_at_P():
    pre = preprocess(instantiate("poisson_localized"), NirdConfig(P=16, E=2000, preprocess="uniform"))
    assert pre.n_coarse == 16
    assert preprocess(instantiate("poisson_smooth"), NirdConfig(P=16, E=16)).n_coarse == 16


@pytest.mark.parametrize("P,alpha", [(1, 2), (2, 1), (4, 2), (8, 3)])
def test_ledger_counts(P, alpha):
    run = nird_run(instantiate("poisson_smooth"), NirdConfig(P=P, E=64 * P, iterations=alpha))
    lg = run.ledger
    logp = int(math.log2(P))
    assert lg.total_rounds == alpha * logp
    assert lg.total_messages == alpha * P * logp
    for i in range(1, alpha + 1):
        rounds = lg.rounds_in(i)
        assert [c.round for c in rounds] == list(range(logp))
        for c in rounds:
            assert c.partner == [l ^ (1 << c.round) for l in range(P)]
            assert c.sent == [1] * P and c.received == [1] * P
    assert lg.messages_per_rank() == [alpha * logp] * P


def test_zero_iterations():
    run = nird_run(instantiate("poisson_smooth"), NirdConfig(P=4, E=300, iterations=0))
    assert len(run.states) == 1 and run.ledger.total_rounds == 0
    assert np.isclose(run.final.lsf, lsf(run.pre.field))


def test_butterfly_matches_sequential_fold(small_run):
    fields = [r.field for r in small_run.states[1].ranks]
    ledger = CommLedger(4)
    tree = butterfly_sum(fields, ledger, 1)
    mesh = fields[0].mesh
    for f in fields[1:]:
        mesh = mesh.union(f.mesh)
    seq = prolong(fields[0], mesh)
    for f in fields[1:]:
        seq = seq + prolong(f, mesh)
    assert tree.mesh == mesh
    assert np.allclose(tree.coeffs, seq.coeffs, rtol=0, atol=1e-13)
    assert ledger.total_rounds == 2
    # reversed order gives the same union
    assert butterfly_sum(fields[::-1]).mesh == mesh
    with pytest.raises(ValueError):
        butterfly_sum(fields[:3])


def test_forced_shared_mesh_reproduces_direct_solve():
    prob = instantiate("poisson_smooth")
    fine = MeshForest.uniform(unit_square_macro(2), 7)
    cfg = NirdConfig(P=4, E=fine.nleaves, iterations=1)
    run = nird_run(prob, cfg, forced_mesh=fine)
    assert run.final.mesh == fine
    direct = solve_field(prob, fine, 1)[0]
    assert abs(run.final.lsf - lsf(direct)) <= 1e-8
    assert np.allclose(run.final.field.coeffs, direct.coeffs, atol=1e-8)


def test_two_ranks_with_identical_meshes_sum_exactly():
    prob = instantiate("poisson_smooth")
    fine = MeshForest.uniform(unit_square_macro(2), 5)
    cfg = NirdConfig(P=2, E=fine.nleaves, iterations=1)
    pre = preprocess(prob, cfg)
    res = [subproblem_solve(l, subproblem_rhs(l, prob, pre.field, pre.pou), cfg, pre.mesh, fine) for l in range(2)]
    total = butterfly_sum([r.field for r in res])
    assert total.mesh == fine
    whole = solve_field(prob, fine, 1, rhs=_Residual(prob, pre.field))[0]
    assert np.allclose(total.coeffs, whole.coeffs, atol=1e-10)


class _Residual:
    def __init__(self, prob, u):
        self.prob, self.u = prob, u

    def evaluate(self, mesh, elems, pts):
        flat = pts.reshape(-1, 2)
        out = ProblemRHS(self.prob).evaluate(mesh, elems, pts).reshape(-1, 4)
        out -= self.u.L_at_points(flat)
        return out.reshape(pts.shape[:-1] + (4,))


def test_serial_and_threaded_runs_are_bitwise_equal(monkeypatch):
    prob = instantiate("advdiff_in")
    a = nird_run(prob, NirdConfig(P=4, E=300, pou="cinf", threads=1))
    b = nird_run(prob, NirdConfig(P=4, E=300, pou="cinf", threads=4))
    monkeypatch.setenv("NIRD_THREADS", "3")
    c = nird_run(prob, NirdConfig(P=4, E=300, pou="cinf"))
    for other in (b, c):
        assert other.final.mesh == a.final.mesh
        assert np.array_equal(other.final.field.coeffs, a.final.field.coeffs)
        assert other.final.lsf == a.final.lsf


def test_global_functional_decreases(small_run):
    lsfs = [s.lsf for s in small_run.states]
    assert lsfs[1] < lsfs[0] and lsfs[2] < lsfs[1]
    for s in small_run.states[1:]:
        assert s.n_total == sum(r.nleaves for r in s.ranks)
        assert all(r.nleaves <= small_run.config.E for r in s.ranks)
        assert s.mesh.refines(small_run.pre.mesh)


def test_manifest_and_hash(small_run):
    m = manifest(small_run, {"metrics": "metrics.csv"})
    assert m["ledger"]["messages"] == 2 * 4 * 2
    assert m["hash"] == input_hash(small_run.problem, small_run.config)
    other = NirdConfig(P=4, E=301, iterations=2)
    assert input_hash(small_run.problem, other) != m["hash"]


def test_stage_errors_name_the_stage():
    prob = instantiate("poisson_smooth").with_rhs(lambda x: np.full(len(x), np.nan))
    with pytest.raises(StageError) as info:
        nird_run(prob, NirdConfig(P=4, E=100))
    assert info.value.stage == "preprocess"
    assert "[preprocess]" in str(info.value)
