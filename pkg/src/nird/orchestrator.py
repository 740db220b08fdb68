"""NIRD driver: preprocessing, per-rank subproblems and union-mesh recombination.

All ranks live in one process. Communication is only counted: every
recombination follows a butterfly schedule (round ``r`` pairs rank ``l``
with ``l XOR 2**r``) and the ledger records one send and one receive per
rank and round.
"""
from __future__ import annotations

import hashlib
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .fosls import (NCOMP, DiscreteField, ProblemRHS, ProblemSpec, element_lsf_squared, kernel_component,
                    prolong)
from .mesh import MeshError, MeshForest, ancestor_index, unit_square_macro
from .pou import HomePartition, PartitionOfUnity, partition_home_domains
from .refine import AceModel, LevelSolve, NIRecord, ace_select, ni_solve, solve_level

PREPROCESS_MODES = ("auto", "adaptive", "uniform")


class StageError(RuntimeError):
    """A failure inside one stage of a run; ``stage`` names where."""

    def __init__(self, stage: str, message: str):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage


def is_power_of_two(n: int) -> bool:
    return n >= 1 and not n & (n - 1)


@dataclass(frozen=True)
class NirdConfig:
    """Parameters of one NIRD run.

    ``E`` is the leaf budget of every rank; subproblems start from the
    preprocessing mesh and may grow to ``E`` leaves. ``preprocess`` selects
    ACE refinement (``adaptive``), refinement to ``P`` elements only
    (``uniform``), or ``auto``: adaptive except for oscillatory right-hand
    sides, which are refined uniformly under the same stopping rule.
    """

    P: int = 4
    E: int = 2000
    degree: int = 1
    pou: str = "discontinuous"
    iterations: int = 2
    functional: str = "kernel"
    coarse_fraction: float = 0.1
    ratio_threshold: float = 10.0
    macro_n: int = 2
    preprocess: str = "auto"
    seed: int = 0
    threads: int | None = None

    def __post_init__(self):
        if not is_power_of_two(self.P):
            raise ValueError("P must be a power of two")
        if self.E < self.P:
            raise ValueError("E must be at least P")
        if self.degree < 1:
            raise ValueError("degree must be >= 1")
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")
        if self.functional not in ("naive", "kernel"):
            raise ValueError("functional must be 'naive' or 'kernel'")
        if self.preprocess not in PREPROCESS_MODES:
            raise ValueError(f"preprocess must be one of {PREPROCESS_MODES}")
        from .pou import ALIASES
        if self.pou not in ALIASES:
            raise ValueError(f"unknown partition of unity {self.pou!r}")

    @property
    def pou_kind(self) -> str:
        from .pou import ALIASES
        return ALIASES[self.pou]

    def as_dict(self) -> dict:
        d = asdict(self)
        d.pop("threads")
        d["pou"] = self.pou_kind
        return d


def thread_count(config: NirdConfig) -> int:
    if config.threads is not None:
        return max(1, int(config.threads))
    env = os.environ.get("NIRD_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ValueError(f"NIRD_THREADS must be an integer, got {env!r}") from None
    return 1


# -- communication ledger -------------------------------------------------------

@dataclass
class CommRound:
    iteration: int
    round: int
    partner: list
    sent: list
    received: list


@dataclass
class CommLedger:
    P: int
    rounds: list = field(default_factory=list)

    def record_round(self, iteration: int, r: int):
        partner = [l ^ (1 << r) for l in range(self.P)]
        sent = [0] * self.P
        received = [0] * self.P
        for l in range(self.P):
            sent[l] += 1
            received[partner[l]] += 1
        self.rounds.append(CommRound(iteration, r, partner, sent, received))

    def rounds_in(self, iteration: int) -> list:
        return [c for c in self.rounds if c.iteration == iteration]

    @property
    def total_rounds(self) -> int:
        return len(self.rounds)

    @property
    def total_messages(self) -> int:
        return sum(sum(c.sent) for c in self.rounds)

    def messages_per_rank(self) -> list:
        out = [0] * self.P
        for c in self.rounds:
            for l, s in enumerate(c.sent):
                out[l] += s
        return out

    def summary(self, iteration: int | None = None) -> dict:
        rs = self.rounds if iteration is None else self.rounds_in(iteration)
        return {"rounds": len(rs), "messages": sum(sum(c.sent) for c in rs),
                "received": sum(sum(c.received) for c in rs)}


# -- preprocessing ----------------------------------------------------------------

@dataclass
class Preprocessed:
    mesh: MeshForest
    field: DiscreteField
    level: LevelSolve
    partition: HomePartition
    pou: PartitionOfUnity
    eta_ratio: float
    history: list

    @property
    def n_coarse(self) -> int:
        return self.mesh.nleaves


def domain_errors(leaf_e2, owner, P: int) -> np.ndarray:
    """Per-home-domain functional from per-leaf squared values."""
    return np.sqrt(np.bincount(owner, leaf_e2, minlength=P))


def eta_ratio(eta) -> float:
    eta = np.asarray(eta, dtype=float)
    lo, hi = eta.min(), eta.max()
    if lo <= 0.0:
        return math.inf if hi > 0 else 1.0
    return float(hi / lo)


def _uniform_preprocessing(problem: ProblemSpec, config: NirdConfig) -> str:
    if config.preprocess != "auto":
        return config.preprocess
    return "uniform_rule" if problem.params.get("rhs") == "oscillatory" else "adaptive"


def preprocess(problem: ProblemSpec, config: NirdConfig, macro=None) -> Preprocessed:
    """Coarse mesh, initial iterate ``u_0``, home partition and PoU.

    Refinement continues while ``N_c < P`` or (``N_c < fraction * E`` and
    the max/min home-domain functional ratio exceeds the threshold); the
    ratio uses a provisional partition rebuilt on every level.
    """
    macro = macro or unit_square_macro(config.macro_n)
    mode = _uniform_preprocessing(problem, config)
    model = AceModel(rate=float(config.degree))
    mesh = MeshForest.from_macro(macro)
    history = []
    while True:
        cur = solve_level(problem, mesh, config.degree, None, "naive")
        n = mesh.nleaves
        ratio = math.inf
        part = None
        if n >= config.P:
            part = partition_home_domains(mesh, cur.errors, config.P)
            ratio = eta_ratio(domain_errors(cur.naive_e2, part.owner, config.P))
        history.append(NIRecord(len(history), n, cur.naive, cur.naive, None))
        if mode == "uniform":
            go = n < config.P
        else:
            go = n < config.P or (n < config.coarse_fraction * config.E and ratio > config.ratio_threshold)
        if not go:
            break
        if mode == "adaptive":
            marked = ace_select(cur.errors, model)
            if len(marked) == 0:
                marked = np.arange(n)
        else:
            marked = np.arange(n)
        new = mesh.refine(marked)
        if new.nleaves > config.E:
            if n < config.P:
                raise ValueError(f"budget E={config.E} exhausted before the coarse mesh reached P={config.P}")
            break
        mesh = new
    pou = PartitionOfUnity(config.pou_kind, part)
    return Preprocessed(mesh, cur.field, cur, part, pou, ratio, history)


# -- subproblems ---------------------------------------------------------------------

class SubproblemRHS:
    """``f_l = chi_l (F - L u_i)`` evaluated at points of refinements of the coarse mesh."""

    def __init__(self, rank: int, problem: ProblemSpec, u: DiscreteField | None,
                 pou: PartitionOfUnity):
        self.rank = rank
        self.problem = problem
        self.u = u
        self.pou = pou
        self._anc = {}

    def _coarse_of(self, mesh: MeshForest) -> np.ndarray:
        key = mesh.keys.tobytes()
        if key not in self._anc:
            self._anc = {key: ancestor_index(mesh.keys, self.pou.mesh)}
        return self._anc[key]

    def residual(self, mesh, elems, pts) -> np.ndarray:
        """``F - L u_i`` at points inside the given leaves of ``mesh``."""
        out = np.zeros((len(pts), NCOMP))
        out[:, 2] = self.problem.f_at(pts)
        if self.u is not None and len(pts):
            out -= self.u.L_at_points(pts, start_elems=elems, start_mesh=mesh)
        return out

    def evaluate(self, mesh, elems, pts):
        shape = pts.shape[:-1]
        flat_pts = pts.reshape(-1, 2)
        flat_el = np.asarray(elems).reshape(-1)
        coarse = self._coarse_of(mesh)[flat_el]
        chi = self.pou.rank_values(self.rank, flat_pts, coarse)
        out = np.zeros((len(flat_pts), NCOMP))
        nz = np.flatnonzero(chi != 0.0)
        if len(nz):
            out[nz] = chi[nz, None] * self.residual(mesh, flat_el[nz], flat_pts[nz])
        return out.reshape(shape + (NCOMP,))


def subproblem_rhs(rank: int, problem: ProblemSpec, u: DiscreteField | None,
                   pou: PartitionOfUnity) -> SubproblemRHS:
    return SubproblemRHS(rank, problem, u, pou)


@dataclass
class RankResult:
    """Outcome of one rank's subproblem solve.

    ``leaf_e2`` holds the kernel-corrected squared functional per leaf of the
    final mesh, ``coarse`` the coarse ancestor of each of those leaves.
    """

    rank: int
    field: DiscreteField
    history: list
    leaf_e2: np.ndarray
    naive_e2: np.ndarray
    coarse: np.ndarray

    @property
    def mesh(self) -> MeshForest:
        return self.field.mesh

    @property
    def nleaves(self) -> int:
        return self.field.mesh.nleaves

    def coarse_e2(self, n_coarse: int) -> np.ndarray:
        return np.bincount(self.coarse, self.leaf_e2, minlength=n_coarse)


def subproblem_solve(rank: int, rhs: SubproblemRHS, config: NirdConfig, start: MeshForest,
                     forced_mesh: MeshForest | None = None) -> RankResult:
    """Adaptive NI solve of ``L du = f_l`` with zero boundary data.

    ``forced_mesh`` skips adaptivity and solves once on that mesh.
    """
    problem = rhs.problem
    if forced_mesh is not None:
        cur = solve_level(problem, forced_mesh, config.degree, rhs, "kernel")
        history = [NIRecord(0, forced_mesh.nleaves, cur.modified, cur.naive, cur.modified)]
    else:
        res = ni_solve(problem, start, config.E, config.degree, rhs, config.functional,
                       AceModel(rate=float(config.degree)))
        cur, history = res.final, res.history
    if cur.modified_e2 is None:
        kc = kernel_component(problem, cur.field.mesh, config.degree, qd=cur.qd, rhs_values=cur.rhs_values)
        cur.kernel = kc
        cur.modified_e2 = element_lsf_squared(cur.field, cur.rhs_values - kc.values_on(cur.qd), cur.qd)
    coarse = ancestor_index(cur.field.mesh.keys, rhs.pou.mesh)
    return RankResult(rank, cur.field, history, cur.modified_e2, cur.naive_e2, coarse)


# -- recombination -------------------------------------------------------------------

def _sum_on_union(a: DiscreteField, b: DiscreteField) -> DiscreteField:
    mesh = a.mesh.union(b.mesh)
    return prolong(a, mesh) + prolong(b, mesh)


def butterfly_sum(fields: list, ledger: CommLedger | None = None, iteration: int = 0) -> DiscreteField:
    """Sum rank fields on their union mesh in ``log2 P`` pairwise rounds.

    After round ``r`` every group of ``2**(r+1)`` ranks holds the same
    partial sum, so each distinct pair is combined once.
    """
    P = len(fields)
    if not is_power_of_two(P):
        raise ValueError("number of ranks must be a power of two")
    for f in fields[1:]:
        if not f.mesh.same_macro(fields[0].mesh):
            raise MeshError("rank meshes are built on different macro meshes")
    groups = list(fields)
    for r in range(int(math.log2(P))):
        if ledger is not None:
            ledger.record_round(iteration, r)
        groups = [_sum_on_union(groups[2 * g], groups[2 * g + 1]) for g in range(len(groups) // 2)]
    return groups[0]


@dataclass
class NirdState:
    iteration: int
    mesh: MeshForest
    field: DiscreteField
    lsf: float
    ranks: list = field(default_factory=list)
    n_total: int | None = None

    @property
    def n_union(self) -> int:
        return self.mesh.nleaves


def global_lsf(problem: ProblemSpec, u: DiscreteField) -> float:
    from .fosls import lsf
    return lsf(u, ProblemRHS(problem))


def recombine(state: NirdState, results: list, problem: ProblemSpec, ledger: CommLedger) -> NirdState:
    """``u_{i+1} = u_i + sum_l du_l`` on the union of all meshes."""
    results = sorted(results, key=lambda r: r.rank)
    if len(results) != ledger.P:
        raise ValueError(f"expected {ledger.P} rank results, got {len(results)}")
    it = state.iteration + 1
    total = butterfly_sum([r.field for r in results], ledger, it)
    # u_i is known to every rank; folding its mesh in needs no messages
    mesh = total.mesh.union(state.mesh)
    u = prolong(state.field, mesh) + prolong(total, mesh)
    n_total = int(sum(r.nleaves for r in results))
    return NirdState(it, mesh, u, global_lsf(problem, u), results, n_total)


# -- main loop ------------------------------------------------------------------------

@dataclass
class NirdRun:
    problem: ProblemSpec
    config: NirdConfig
    pre: Preprocessed
    states: list
    ledger: CommLedger
    report: object = None

    @property
    def final(self) -> NirdState:
        return self.states[-1]


def nird_run(problem: ProblemSpec, config: NirdConfig, forced_mesh: MeshForest | None = None,
             measure: bool = False) -> NirdRun:
    """Preprocess, then ``config.iterations`` rounds of decompose/solve/recombine.

    With ``measure`` the metrics report (including the traditional baseline
    solves) is attached as ``run.report``.
    """
    try:
        pre = preprocess(problem, config)
    except Exception as exc:
        raise StageError("preprocess", str(exc)) from exc
    ledger = CommLedger(config.P)
    state = NirdState(0, pre.mesh, pre.field, global_lsf(problem, pre.field))
    states = [state]
    nthreads = thread_count(config)
    for i in range(config.iterations):
        rhs = [subproblem_rhs(l, problem, state.field, pre.pou) for l in range(config.P)]

        def work(l, rhs=rhs):
            return subproblem_solve(l, rhs[l], config, pre.mesh, forced_mesh)

        try:
            if nthreads > 1:
                with ThreadPoolExecutor(max_workers=nthreads) as pool:
                    results = list(pool.map(work, range(config.P)))
            else:
                results = [work(l) for l in range(config.P)]
        except Exception as exc:
            raise StageError(f"subproblem (iteration {i + 1})", str(exc)) from exc
        try:
            state = recombine(state, results, problem, ledger)
        except Exception as exc:
            raise StageError(f"recombine (iteration {i + 1})", str(exc)) from exc
        states.append(state)
    run = NirdRun(problem, config, pre, states, ledger)
    if measure:
        from .metrics import measure_run
        try:
            run.report = measure_run(run)
        except Exception as exc:
            raise StageError("metrics", str(exc)) from exc
    return run


# -- manifest ----------------------------------------------------------------------------

def input_hash(problem: ProblemSpec, config: NirdConfig) -> str:
    payload = json.dumps({"problem": problem.params, "config": config.as_dict()}, sort_keys=True)
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


def manifest(run: NirdRun, artifacts: dict | None = None) -> dict:
    iters = []
    for s in run.states:
        entry = {"iteration": s.iteration, "N_U": s.n_union, "N_T": s.n_total, "lsf": float(f"{s.lsf:.16e}"),
                 "ledger": run.ledger.summary(s.iteration)}
        iters.append(entry)
    return {
        "format": "NIRD-MANIFEST v1",
        "hash": input_hash(run.problem, run.config),
        "problem": run.problem.params,
        "config": run.config.as_dict(),
        "preprocessing": {"N_c": run.pre.n_coarse, "eta_ratio": _json_float(run.pre.eta_ratio)},
        "iterations": iters,
        "ledger": run.ledger.summary(),
        "artifacts": artifacts or {},
    }


def _json_float(x: float):
    return "inf" if math.isinf(x) else float(f"{x:.16e}")
