"""Measured constants of a NIRD run.

Continuum errors ``||L(v^h - v)||_R`` are not available for most problems;
they are replaced throughout by kernel-corrected local residual functionals,
which are equivalent by the FOSLS norm equivalence.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from .fosls import ProblemRHS, ProblemSpec, QuadData, element_lsf_squared
from .mesh import MeshForest, ancestor_index, unit_square_macro
from .refine import ni_solve

PROXY_NOTE = "error proxies: kernel-corrected local residual functionals"
CSV_COLUMNS = ("pou", "P", "eta_ratio", "N_c", "C0", "Q1", "K1", "Q2", "K2")
DENOM_TOL = 1e-14


@dataclass
class IterationMetrics:
    iteration: int
    n_union: int
    n_total: int
    lsf: float
    baseline_lsf: float

    @property
    def Q(self) -> float:
        return self.n_union / self.n_total

    @property
    def K(self) -> float:
        return self.lsf / self.baseline_lsf


@dataclass
class Table1:
    C_s: float
    C_s_tilde: float
    C_rho: float
    Q_hat: float
    C_b: float
    C_b_tilde: float
    skipped: int = 0

    def as_dict(self) -> dict:
        return {"C_s": self.C_s, "C_s_tilde": self.C_s_tilde, "C_rho": self.C_rho, "Q_hat": self.Q_hat,
                "C_b": self.C_b, "C_b_tilde": self.C_b_tilde, "skipped": self.skipped}


@dataclass
class MetricsReport:
    problem: str
    pou: str
    P: int
    eta_ratio: float
    n_coarse: int
    C0: float | None = None
    iterations: list = field(default_factory=list)
    table1: Table1 | None = None
    note: str = PROXY_NOTE

    def QK(self, i: int):
        for m in self.iterations:
            if m.iteration == i:
                return m.Q, m.K
        return None, None

    def row(self) -> dict:
        q1, k1 = self.QK(1)
        q2, k2 = self.QK(2)
        return {"pou": self.pou, "P": self.P, "eta_ratio": self.eta_ratio, "N_c": self.n_coarse,
                "C0": self.C0, "Q1": q1, "K1": k1, "Q2": q2, "K2": k2}


def format_value(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (int, np.integer)) and not isinstance(v, bool):
        return str(int(v))
    if isinstance(v, float) and math.isinf(v):
        return "inf"
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.16e}"
    return str(v)


def write_rows(rows, path=None, columns=CSV_COLUMNS) -> str:
    """CSV text (UTF-8, LF) for metric rows; also written to ``path`` if given."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([format_value(r.get(c)) for c in columns])
    text = buf.getvalue()
    if path is not None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    return text


# -- building blocks ------------------------------------------------------------------

def union_coarse_e2(problem: ProblemSpec, state, coarse: MeshForest) -> np.ndarray:
    """``||L u_i - F||^2`` of the global iterate, gathered per coarse element."""
    u = state.field
    qd = QuadData.for_problem(problem, u.mesh, u.degree)
    e2 = element_lsf_squared(u, qd.rhs_values(ProblemRHS(problem)), qd)
    anc = ancestor_index(u.mesh.keys, coarse)
    return np.bincount(anc, e2, minlength=coarse.nleaves)


def rank_coarse_e2(results, n_coarse: int) -> np.ndarray:
    """``T[l, c]``: rank ``l``'s squared modified functional over coarse element ``c``."""
    return np.array([r.coarse_e2(n_coarse) for r in sorted(results, key=lambda r: r.rank)])


def measure_C0(run, iteration: int = 1) -> float | None:
    """``max_k ||L u_1 - f||_tau_k / sum_{l in L_k} ||L du_l - (f_l - phi_l)||_tau_k``."""
    state = run.states[iteration]
    pou = run.pre.pou
    coarse = run.pre.mesh
    num = np.sqrt(union_coarse_e2(run.problem, state, coarse))
    T = np.sqrt(rank_coarse_e2(state.ranks, coarse.nleaves))
    best = None
    for k in range(coarse.nleaves):
        den = sum(T[l, k] for l in pou.ranks_touching(k))
        if den < DENOM_TOL:
            continue
        v = num[k] / den
        if best is None or v > best:
            best = v
    return None if best is None else float(best)


def baseline_lsf(problem: ProblemSpec, budget: int, degree: int, macro_n: int, cache: dict | None = None) -> float:
    """Global functional of a traditional adaptive NI solve with ``budget`` leaves."""
    key = (budget, degree, macro_n)
    if cache is not None and key in cache:
        return cache[key]
    start = MeshForest.from_macro(unit_square_macro(macro_n))
    res = ni_solve(problem, start, budget, degree)
    val = res.history[-1].lsf
    if cache is not None:
        cache[key] = val
    return val


def measure_KQ(run, cache: dict | None = None) -> list:
    cache = {} if cache is None else cache
    out = []
    cfg = run.config
    for s in run.states[1:]:
        base = baseline_lsf(run.problem, s.n_total, cfg.degree, cfg.macro_n, cache)
        out.append(IterationMetrics(s.iteration, s.n_union, s.n_total, s.lsf, base))
    return out


def measure_table1(run, iteration: int = 1) -> Table1:
    """Constants of the earlier convergence argument, measured directly."""
    state = run.states[iteration]
    owner = run.pre.partition.owner
    P = run.config.P
    results = sorted(state.ranks, key=lambda r: r.rank)
    T = rank_coarse_e2(results, run.pre.n_coarse)
    # M[l, k]: rank l's error over home domain k
    M = np.sqrt(np.stack([np.bincount(owner, T[l], minlength=P) for l in range(P)]))
    skipped = 0

    C_s = 0.0
    for l in range(P):
        for k in range(P):
            if l == k:
                continue
            if M[k, l] < DENOM_TOL:
                skipped += 1
                continue
            C_s = max(C_s, M[l, k] / M[k, l])

    C_s_tilde, C_rho = 0.0, 0.0
    for k in range(P):
        others = [l for l in range(P) if l != k]
        num = sum(M[l, k] for l in others)
        den = sum(M[k, l] for l in others)
        if den < DENOM_TOL:
            skipped += 1
            continue
        C_s_tilde = max(C_s_tilde, num / den)
        sq = sum(M[k, l] ** 2 for l in others)
        C_rho = max(C_rho, den ** 2 / sq)

    Q_hat = math.inf
    for r in results:
        e = np.sqrt(r.leaf_e2)
        home = owner[r.coarse] == r.rank
        Qk = home.mean()
        top = e.max()
        if not home.any() or top < DENOM_TOL:
            skipped += 1
            continue
        Q_hat = min(Q_hat, Qk * (e[home].min() / top) ** 2)

    if Q_hat > 0 and math.isfinite(Q_hat):
        C_b = 1.0 + C_s * math.sqrt(C_rho * (1.0 - Q_hat) / Q_hat)
    else:
        C_b = math.inf

    U = np.sqrt(np.bincount(owner, union_coarse_e2(run.problem, state, run.pre.mesh), minlength=P))
    C_b_tilde = 0.0
    for k in range(P):
        if M[k, k] < DENOM_TOL:
            skipped += 1
            continue
        C_b_tilde = max(C_b_tilde, U[k] / M[k, k])
    return Table1(C_s, C_s_tilde, C_rho, Q_hat, C_b, C_b_tilde, skipped)


def measure_run(run, table1: bool = False, cache: dict | None = None) -> MetricsReport:
    cfg = run.config
    rep = MetricsReport(run.problem.name, cfg.pou_kind, cfg.P, run.pre.eta_ratio, run.pre.n_coarse)
    if len(run.states) > 1:
        rep.C0 = measure_C0(run)
        rep.iterations = measure_KQ(run, cache)
        if table1:
            rep.table1 = measure_table1(run)
    return rep
