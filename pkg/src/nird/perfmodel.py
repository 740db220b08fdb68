"""Latency models: communications of traditional NI versus NIRD."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, replace


@dataclass(frozen=True)
class MachineProblemParams:
    """Inputs of the latency models.

    ``nu`` communications per V-cycle level, V-cycle convergence factor
    ``rho``, per-level error reduction ``beta``, refinement/coarsening factor
    ``c``, ``E`` elements per processor, ``P`` processors and ``alpha``
    NIRD iterations.
    """

    nu: float = 20.0
    rho: float = 0.1
    beta: float = 9.0
    c: float = 4.0
    E: float = 1e6
    P: int = 1024
    alpha: int = 2

    def __post_init__(self):
        if not 0.0 < self.rho < 1.0:
            raise ValueError("rho must lie in (0, 1)")
        if not self.beta > 1.0:
            raise ValueError("beta must exceed 1")
        if not self.c > 1.0:
            raise ValueError("c must exceed 1")
        if not self.nu >= 1.0:
            raise ValueError("nu must be at least 1")
        if self.P < 1 or int(self.P) & (int(self.P) - 1):
            raise ValueError("P must be a power of two")
        if self.E < 1:
            raise ValueError("E must be positive")

    def with_(self, **kw) -> "MachineProblemParams":
        return replace(self, **kw)


PRESETS = {
    "easy": MachineProblemParams(nu=20.0, rho=0.1, beta=9.0, c=4.0),
    "hard": MachineProblemParams(nu=40.0, rho=0.8, beta=9.0, c=2.0),
}


def comm_cost_traditional(p: MachineProblemParams) -> float:
    """Sum over NI levels of ``nu log_{1/rho}(beta) i`` for ``i`` from ``log_c E`` to ``log_c EP``."""
    cycles = math.log(p.beta) / math.log(1.0 / p.rho)
    le = math.log(p.E) / math.log(p.c)
    lp = math.log(p.P) / math.log(p.c)
    return p.nu * cycles * (le * lp + 0.5 * lp ** 2 + le + 0.5 * lp)


def comm_cost_nird(p: MachineProblemParams) -> float:
    return p.alpha * math.log2(p.P)


def sweep(p: MachineProblemParams, Ps) -> list[dict]:
    rows = []
    for P in Ps:
        q = p.with_(P=int(P))
        ct, cn = comm_cost_traditional(q), comm_cost_nird(q)
        rows.append({"P": int(P), "C_T": ct, "C_N": cn, "ratio": ct / cn if cn else math.inf})
    return rows


def sweep_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["P", "C_T", "C_N", "ratio"])
    for r in rows:
        w.writerow([r["P"], f"{r['C_T']:.16e}", f"{r['C_N']:.16e}",
                    "inf" if math.isinf(r["ratio"]) else f"{r['ratio']:.16e}"])
    return buf.getvalue()
