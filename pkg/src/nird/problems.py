"""Catalog of test problems on the unit square."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .fosls import ProblemSpec

NAMES = (
    "poisson_smooth",
    "poisson_oscillatory",
    "poisson_localized",
    "advdiff_in",
    "advdiff_out",
    "jump_checkerboard",
    "anisotropic",
    "wavefront",
)

# problems that come in a smooth (f0) and an oscillatory (f1) flavour
_RHS_DEFAULT = {
    "poisson_smooth": "smooth",
    "poisson_oscillatory": "oscillatory",
    "advdiff_in": "smooth",
    "advdiff_out": "smooth",
    "jump_checkerboard": "smooth",
    "anisotropic": "smooth",
}

WAVEFRONT_R0 = 0.3
WAVEFRONT_A = 100.0
WAVEFRONT_CENTERS = ((0.65, 0.65), (0.35, 0.35))
R_CLAMP = 1e-12
LOCALIZED_BOX = (0.49, 0.51)
ADVECTION = 15.0


@dataclass(frozen=True)
class ProblemId:
    name: str
    P: int = 16
    seed: int = 0
    rhs: str | None = None

    def __post_init__(self):
        if self.name not in NAMES:
            raise ValueError(f"unknown problem {self.name!r}; choose from {', '.join(NAMES)}")
        if self.rhs is not None:
            if self.name not in _RHS_DEFAULT:
                raise ValueError(f"problem {self.name!r} has a fixed right-hand side")
            if self.rhs not in ("smooth", "oscillatory"):
                raise ValueError("rhs must be 'smooth' or 'oscillatory'")

    @property
    def rhs_kind(self) -> str:
        if self.rhs is not None:
            return self.rhs
        return _RHS_DEFAULT.get(self.name, self.name.split("_")[-1])

    def as_dict(self) -> dict:
        return {"name": self.name, "P": self.P, "seed": self.seed, "rhs": self.rhs_kind}


def f_smooth(x):
    return np.sin(np.pi * x[:, 0]) * np.sin(np.pi * x[:, 1])


def oscillation_count(P: int) -> int:
    """Number of sine half-waves per direction, ``3 sqrt(P)`` rounded."""
    return int(round(3.0 * np.sqrt(P)))


def oscillatory_amplitudes(P: int, seed: int) -> np.ndarray:
    m = oscillation_count(P)
    rng = np.random.Generator(np.random.PCG64(seed))
    return rng.uniform(-1.0, 1.0, size=(m, m))


def make_oscillatory(P: int, seed: int):
    m = oscillation_count(P)
    amp = oscillatory_amplitudes(P, seed)

    def f(x):
        i = np.clip((x[:, 0] * m).astype(np.int64), 0, m - 1)
        j = np.clip((x[:, 1] * m).astype(np.int64), 0, m - 1)
        return amp[i, j] * np.sin(m * np.pi * x[:, 0]) * np.sin(m * np.pi * x[:, 1])

    return f


def f_localized(x):
    lo, hi = LOCALIZED_BOX
    inside = (x[:, 0] >= lo) & (x[:, 0] <= hi) & (x[:, 1] >= lo) & (x[:, 1] <= hi)
    return np.where(inside, 100.0, 0.0)


def f_wavefront(x, a=WAVEFRONT_A, r0=WAVEFRONT_R0):
    out = np.zeros(len(x))
    for cx, cy in WAVEFRONT_CENTERS:
        r = np.hypot(x[:, 0] - cx, x[:, 1] - cy)
        r = np.maximum(r, R_CLAMP)
        out -= (a + a ** 3 * (r0 ** 2 - r ** 2)) / (r * (1.0 + a ** 2 * (r0 - r) ** 2) ** 2)
    return out


def alpha_checkerboard(x):
    lo_x = x[:, 0] <= 0.5
    lo_y = x[:, 1] <= 0.5
    return np.where(lo_x == lo_y, 1.0, 100.0)


def instantiate(pid: ProblemId | str, **kw) -> ProblemSpec:
    if isinstance(pid, str):
        pid = ProblemId(pid, **kw)
    name = pid.name
    kind = pid.rhs_kind
    raise_by = 0
    lines = ()
    if kind == "oscillatory":
        f = make_oscillatory(pid.P, pid.seed)
        raise_by = 2
    elif name == "poisson_localized":
        f = f_localized
        lines = tuple((axis, v) for axis in (0, 1) for v in LOCALIZED_BOX)
    elif name == "wavefront":
        f = f_wavefront
        raise_by = 2
    else:
        f = f_smooth

    alpha, eps, b, dirichlet = 1.0, 1.0, (0.0, 0.0), "SENW"
    if name == "advdiff_in":
        b, dirichlet = (-ADVECTION, 0.0), "SNW"
    elif name == "advdiff_out":
        b, dirichlet = (ADVECTION, 0.0), "SNW"
    elif name == "jump_checkerboard":
        alpha = alpha_checkerboard
        lines = ((0, 0.5), (1, 0.5))
    elif name == "anisotropic":
        eps = 1e-3
    params = pid.as_dict()
    params.update(epsilon=eps, b=list(b), dirichlet="".join(sorted(dirichlet)))
    return ProblemSpec(name, f, alpha, eps, b, frozenset(dirichlet), quad_raise=raise_by, params=params,
                       breaklines=lines)


def catalog() -> list[dict]:
    return [ProblemId(n).as_dict() for n in NAMES]
