"""ACE marking and the nested-iteration (NI) adaptive solve."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .fosls import (DiscreteField, KernelComponent, ProblemSpec, QuadData, element_lsf_squared,
                    kernel_component, prolong, solve_field)
from .mesh import MeshForest
from .solver import SolverError

FRACTIONS = tuple(round(0.05 * i, 2) for i in range(1, 21))
# relative resolution used to order element errors; values closer than this
# count as ties and fall back to leaf order, which keeps marking stable when
# symmetric meshes produce errors equal up to rounding
ORDER_DIGITS = 10


@dataclass(frozen=True)
class AceModel:
    """Expected reduction and work model behind ACE marking.

    Refining an element is assumed to cut its squared error by
    ``2**(-2*rate)``; the work of the next solve is ``N (1 + 3 r)``.
    """

    rate: float = 1.0
    fractions: tuple = FRACTIONS

    def __post_init__(self):
        if not self.rate > 0:
            raise ValueError("rate must be positive")
        if not self.fractions or any(not (0 < r <= 1) for r in self.fractions):
            raise ValueError("candidate fractions must lie in (0, 1]")

    def work(self, n: int, r: float) -> float:
        return n * (1.0 + 3.0 * r)

    @property
    def reduction(self) -> float:
        return 2.0 ** (-2.0 * self.rate)


def error_order(errors) -> np.ndarray:
    """Leaf ids sorted by descending error, ties by ascending id."""
    e = np.asarray(errors, dtype=float)
    top = e.max() if len(e) else 0.0
    scaled = np.round(e / top, ORDER_DIGITS) if top > 0 else e
    return np.lexsort((np.arange(len(e)), -scaled))


def marked_count(r: float, n: int) -> int:
    return max(1, math.ceil(r * n - 1e-9))


def ace_objective(errors, model: AceModel):
    """``log(gamma(r)) / W(r)`` for every candidate fraction."""
    e = np.asarray(errors, dtype=float)
    n = len(e)
    order = error_order(e)
    e2 = e[order] ** 2
    csum = np.cumsum(e2)
    total = csum[-1]
    out = []
    for r in model.fractions:
        k = marked_count(r, n)
        gamma = (csum[k - 1] * model.reduction + (total - csum[k - 1])) / total
        out.append(math.log(gamma) / model.work(n, r))
    return np.array(out), order


def ace_select(errors, model: AceModel | None = None) -> np.ndarray:
    """Leaf ids ACE refines: the top ``ceil(r N)`` errors for the best ``r``."""
    model = model or AceModel()
    e = np.asarray(errors, dtype=float)
    if len(e) == 0:
        return np.zeros(0, dtype=np.int64)
    if np.any(e < 0) or not np.all(np.isfinite(e)):
        raise ValueError("errors must be finite and non-negative")
    if not np.any(e > 0):
        return np.zeros(0, dtype=np.int64)
    obj, order = ace_objective(e, model)
    best = 0
    for i in range(1, len(obj)):
        if obj[i] < obj[best]:
            best = i
    k = marked_count(model.fractions[best], len(e))
    return np.sort(order[:k])


# -- nested iteration ---------------------------------------------------------

@dataclass
class LevelSolve:
    field: DiscreteField
    qd: QuadData
    rhs_values: np.ndarray
    naive_e2: np.ndarray
    modified_e2: np.ndarray | None = None
    kernel: KernelComponent | None = None

    @property
    def errors(self) -> np.ndarray:
        e2 = self.modified_e2 if self.modified_e2 is not None else self.naive_e2
        return np.sqrt(e2)

    @property
    def naive(self) -> float:
        return float(np.sqrt(self.naive_e2.sum()))

    @property
    def modified(self) -> float | None:
        if self.modified_e2 is None:
            return None
        return float(np.sqrt(self.modified_e2.sum()))


def solve_level(problem: ProblemSpec, mesh: MeshForest, degree: int, rhs=None,
                functional: str = "naive") -> LevelSolve:
    """Solve on one mesh and measure the per-leaf functionals."""
    if functional not in ("naive", "kernel"):
        raise ValueError("functional must be 'naive' or 'kernel'")
    u, qd, F = solve_field(problem, mesh, degree, rhs)
    naive = element_lsf_squared(u, F, qd)
    out = LevelSolve(u, qd, F, naive)
    if functional == "kernel":
        kc = kernel_component(problem, mesh, degree, qd=qd, rhs_values=F)
        out.kernel = kc
        out.modified_e2 = element_lsf_squared(u, F - kc.values_on(qd), qd)
    return out


@dataclass
class NIRecord:
    level: int
    n: int
    lsf: float
    naive: float
    modified: float | None


@dataclass
class NIResult:
    field: DiscreteField
    final: LevelSolve
    history: list = field(default_factory=list)
    meshes: list = field(default_factory=list)

    @property
    def mesh(self) -> MeshForest:
        return self.field.mesh

    def series(self, attr="lsf"):
        return np.array([r.n for r in self.history]), np.array([getattr(r, attr) for r in self.history])


def ni_solve(problem: ProblemSpec, start_mesh: MeshForest, budget: int, degree: int = 1,
             rhs=None, functional: str = "naive", model: AceModel | None = None,
             keep_meshes: bool = False) -> NIResult:
    """Adaptive nested iteration on ``start_mesh`` up to ``budget`` leaves.

    Each level solves, measures per-leaf functionals (kernel-corrected when
    ``functional == "kernel"``), marks with ACE and refines; it stops when
    the next refinement would exceed ``budget`` or nothing is marked.
    """
    if budget < start_mesh.nleaves:
        raise ValueError("budget is smaller than the start mesh")
    model = model or AceModel(rate=float(degree))
    mesh = start_mesh
    result = None
    level = 0
    while True:
        try:
            cur = solve_level(problem, mesh, degree, rhs, functional)
        except SolverError as exc:
            raise SolverError(f"NI level {level}: {exc}", exc.residual) from exc
        rec = NIRecord(level, mesh.nleaves, float(np.sqrt((cur.errors ** 2).sum())), cur.naive, cur.modified)
        if result is None:
            result = NIResult(cur.field, cur)
        result.field, result.final = cur.field, cur
        result.history.append(rec)
        if keep_meshes:
            result.meshes.append(mesh)
        marked = ace_select(cur.errors, model)
        if len(marked) == 0:
            break
        new = mesh.refine(marked)
        if new.nleaves > budget:
            break
        mesh = new
        level += 1
    return result


def interpolated_guess(prev: DiscreteField, mesh: MeshForest) -> np.ndarray:
    """Previous level's solution on the refined mesh (iterative warm start)."""
    return prolong(prev, mesh).coeffs


def write_trace(history, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["level", "N", "lsf"])
        for r in history:
            w.writerow([r.level, r.n, f"{r.lsf:.16e}"])
