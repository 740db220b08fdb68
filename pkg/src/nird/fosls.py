"""
First-order system least-squares discretisation of

    -div(A grad p) + b . grad p = f,   A = alpha * diag(1, eps)

recast with the flux ``u = A grad p`` as ``L U = F`` where

    L (p, u) = ( u - A grad p,  -div u + b . grad p,  curl(A^-1 u) )
    F        = ( 0, 0,          f,                    0 )

The unknown ``U = (p, u1, u2)`` uses continuous degree-q Lagrange elements
for every component. Residuals are 4-vectors at each point.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp

from .fem import (DofMap, ElementMaps, crossed_elements, eval_basis, lagrange_nodes, n_local, quadrature_order,
                  split_triangle, transfer_matrix, triangle_quadrature)
from .mesh import MeshError, MeshForest, ancestor_index, descend_to_leaves, MACRO_BITS, MACRO_MASK
from .solver import solve_spd

NCOMP = 4
_CHUNK = 4096


@dataclass
class ProblemSpec:
    """Coefficients, boundary tags and right-hand side of one elliptic problem.

    ``alpha`` and ``f`` are vectorised callables taking ``(n, 2)`` points.
    ``dirichlet`` lists the sides of the unit square (``S``, ``E``, ``N``,
    ``W``) carrying ``p = 0``; the remaining sides are Neumann.
    """

    name: str
    f: Callable[[np.ndarray], np.ndarray]
    alpha: Callable[[np.ndarray], np.ndarray] | float = 1.0
    epsilon: float = 1.0
    b: tuple = (0.0, 0.0)
    dirichlet: frozenset = frozenset("SENW")
    exact_p: Callable | None = None
    quad_raise: int = 0
    params: dict = field(default_factory=dict)
    breaklines: tuple = ()

    def __post_init__(self):
        self.dirichlet = frozenset(self.dirichlet)
        if not self.dirichlet <= set("SENW"):
            raise ValueError(f"unknown boundary side in {sorted(self.dirichlet)}")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        self.b = (float(self.b[0]), float(self.b[1]))

    @property
    def neumann(self) -> frozenset:
        return frozenset("SENW") - self.dirichlet

    def alpha_at(self, pts) -> np.ndarray:
        pts = np.asarray(pts, dtype=float)
        if callable(self.alpha):
            a = np.asarray(self.alpha(pts.reshape(-1, 2)), dtype=float).reshape(pts.shape[:-1])
        else:
            a = np.full(pts.shape[:-1], float(self.alpha))
        if np.any(a <= 0):
            raise ValueError("alpha must be positive")
        return a

    def f_at(self, pts) -> np.ndarray:
        pts = np.asarray(pts, dtype=float)
        return np.asarray(self.f(pts.reshape(-1, 2)), dtype=float).reshape(pts.shape[:-1])

    def with_rhs(self, f, name=None) -> "ProblemSpec":
        return ProblemSpec(name or self.name, f, self.alpha, self.epsilon, self.b,
                           self.dirichlet, None, self.quad_raise, dict(self.params), self.breaklines)

    def scaled(self, factor: float) -> "ProblemSpec":
        f = self.f
        return self.with_rhs(lambda x: factor * f(x), self.name)


# -- right-hand sides ---------------------------------------------------------

class ProblemRHS:
    """The original right-hand side ``F = (0, 0, f, 0)``."""

    def __init__(self, problem: ProblemSpec):
        self.problem = problem

    def evaluate(self, mesh, elems, pts):
        out = np.zeros(pts.shape[:-1] + (NCOMP,))
        out[..., 2] = self.problem.f_at(pts)
        return out


class PointRHS:
    """Wraps a vectorised callable ``x -> (n, 4)``."""

    def __init__(self, func):
        self.func = func

    def evaluate(self, mesh, elems, pts):
        flat = np.asarray(self.func(pts.reshape(-1, 2)), dtype=float)
        return flat.reshape(pts.shape[:-1] + (NCOMP,))


class ZeroRHS:
    def evaluate(self, mesh, elems, pts):
        return np.zeros(pts.shape[:-1] + (NCOMP,))


# -- quadrature data on a mesh -------------------------------------------------

class QuadData:
    """Quadrature on every leaf of a mesh.

    Integration runs over cells: a leaf not crossed by any of the problem's
    discontinuity lines is its own cell, a crossed leaf is tiled by cells
    that each see smooth data. ``cell_elem`` maps cells to leaves and
    ``transfer`` carries leaf-local coefficients to cell-local ones.
    """

    def __init__(self, mesh: MeshForest, degree: int, raise_by: int = 0, lines=()):
        self.mesh = mesh
        self.degree = degree
        self.order = quadrature_order(degree, raise_by)
        self.ref_pts, w = triangle_quadrature(self.order)
        ne = mesh.nleaves
        cut = crossed_elements(mesh.coords, lines) if lines else np.zeros(0, dtype=np.int64)
        coords = mesh.coords
        self.cell_elem = np.arange(ne)
        self.cut_pos = np.full(ne, -1, dtype=np.int64)
        transfers = []
        if len(cut):
            parent_maps = ElementMaps(mesh.coords)
            keep = np.ones(ne, dtype=bool)
            keep[cut] = False
            cells, parents = [coords[keep]], [np.flatnonzero(keep)]
            for e in cut:
                pieces = split_triangle(coords[e], lines)
                cells.append(np.array(pieces))
                parents.append(np.full(len(pieces), e))
                transfers.extend(transfer_matrix(degree, parent_maps, e, c) for c in pieces)
            coords = np.concatenate(cells)
            self.cell_elem = np.concatenate(parents)
            nplain = int(keep.sum())
            self.cut_pos = np.full(len(coords), -1, dtype=np.int64)
            self.cut_pos[nplain:] = np.arange(len(coords) - nplain)
        self.transfer = np.array(transfers) if transfers else np.zeros((0, n_local(degree), n_local(degree)))
        self.maps = ElementMaps(coords)
        self.points = self.maps.to_physical(self.ref_pts)
        self.wdet = w[None, :] * np.abs(self.maps.det)[:, None]
        self.phi, self.grad_ref = eval_basis(degree, self.ref_pts)
        self.elems = np.broadcast_to(self.cell_elem[:, None], self.points.shape[:2])

    @classmethod
    def for_problem(cls, problem, mesh: MeshForest, degree: int) -> "QuadData":
        return cls(mesh, degree, problem.quad_raise, problem.breaklines)

    @property
    def nelem(self) -> int:
        return self.mesh.nleaves

    @property
    def ncell(self) -> int:
        return len(self.cell_elem)

    def chunks(self):
        for start in range(0, self.ncell, _CHUNK):
            yield slice(start, min(start + _CHUNK, self.ncell))

    def grads(self, sl=slice(None)) -> np.ndarray:
        """Physical basis gradients ``(nc, nq, nloc, 2)`` on cells."""
        return np.einsum("qlr,nrs->nqls", self.grad_ref, self.maps.inv[sl])

    def to_cells(self, loc, sl, blocks: int = 1) -> np.ndarray:
        """Leaf-local coefficients ``(nc, blocks*nloc)`` -> cell-local ones."""
        pos = self.cut_pos[sl]
        m = np.flatnonzero(pos >= 0)
        if not len(m):
            return loc
        loc = np.array(loc, dtype=float)
        R = self.transfer[pos[m]]
        nl = R.shape[-1]
        v = loc[m].reshape(len(m), blocks, nl)
        loc[m] = np.einsum("nij,nbj->nbi", R, v).reshape(len(m), blocks * nl)
        return loc

    def from_cells(self, mat, sl, blocks: int = 1) -> np.ndarray:
        """Apply ``R^T`` (block-wise) to cell vectors ``(nc, k)`` or matrices ``(nc, k, k)``."""
        pos = self.cut_pos[sl]
        m = np.flatnonzero(pos >= 0)
        if not len(m):
            return mat
        mat = np.array(mat, dtype=float)
        R = self.transfer[pos[m]]
        Rb = np.zeros((len(m), blocks * R.shape[-1], blocks * R.shape[-1]))
        nl = R.shape[-1]
        for b in range(blocks):
            Rb[:, b * nl:(b + 1) * nl, b * nl:(b + 1) * nl] = R
        if mat.ndim == 2:
            mat[m] = np.einsum("nji,nj->ni", Rb, mat[m])
        else:
            mat[m] = np.einsum("nki,nkl,nlj->nij", Rb, mat[m], Rb)
        return mat

    def to_elements(self, cell_values) -> np.ndarray:
        """Sum per-cell values into their leaves."""
        if self.ncell == self.nelem:
            return cell_values
        return np.bincount(self.cell_elem, cell_values, minlength=self.nelem)

    def rhs_values(self, rhs) -> np.ndarray:
        return rhs.evaluate(self.mesh, self.elems, self.points)


def _operator_rows(problem: ProblemSpec, phi, grads, pts):
    """Columns of L applied to each local basis function.

    ``phi`` ``(n, nloc)`` or ``(nq, nloc)``; ``grads`` ``(..., nloc, 2)``.
    Returns ``B`` of shape ``(..., 4, 3*nloc)``.
    """
    alpha = problem.alpha_at(pts)[..., None]
    eps = problem.epsilon
    bx, by = problem.b
    gx, gy = grads[..., 0], grads[..., 1]
    phi = np.broadcast_to(phi, gx.shape)
    zero = np.zeros_like(gx)
    p_col = np.stack((-alpha * gx, -alpha * eps * gy, bx * gx + by * gy, zero), axis=-2)
    u1_col = np.stack((phi, zero, -gx, -gy / alpha), axis=-2)
    u2_col = np.stack((zero, phi, -gy, gx / (alpha * eps)), axis=-2)
    return np.concatenate((p_col, u1_col, u2_col), axis=-1)


def _global_local_dofs(dofmap: DofMap, sl=slice(None)):
    """Global indices of the 3-block local dofs of leaves ``sl`` (slice or ids)."""
    ed = dofmap.elem_dofs[sl]
    n = dofmap.ndofs
    return np.concatenate((ed, ed + n, ed + 2 * n), axis=1)


@dataclass
class SparseSystem:
    matrix: sp.csr_matrix
    load: np.ndarray
    free: np.ndarray
    size: int


def assemble(problem: ProblemSpec, mesh: MeshForest, degree: int, rhs=None,
             qd: QuadData | None = None, rhs_values=None, dofmap: DofMap | None = None):
    """Normal equations of the least-squares minimisation.

    Returns ``(system, dofmap, qd, rhs_values)``. The p-dofs on Dirichlet
    sides are eliminated (homogeneous data); ``system.free`` lists the
    retained global dofs.
    """
    if qd is None:
        qd = QuadData.for_problem(problem, mesh, degree)
    if dofmap is None:
        dofmap = DofMap(mesh, degree)
    if rhs_values is None:
        if rhs is None:
            rhs = ProblemRHS(problem)
        try:
            rhs_values = qd.rhs_values(rhs)
        except Exception as exc:  # noqa: BLE001 - re-tagged for callers
            raise ValueError(f"right-hand side not evaluable: {exc}") from exc
    if not np.all(np.isfinite(rhs_values)):
        raise ValueError("right-hand side is not finite at quadrature points")

    nl = 3 * n_local(degree)
    ntot = 3 * dofmap.ndofs
    rows, cols, vals = [], [], []
    load = np.zeros(ntot)
    for sl in qd.chunks():
        B = _operator_rows(problem, qd.phi, qd.grads(sl), qd.points[sl])
        w = qd.wdet[sl]
        ke = qd.from_cells(np.einsum("nq,nqci,nqcj->nij", w, B, B), sl, 3)
        fe = qd.from_cells(np.einsum("nq,nqci,nqc->ni", w, B, rhs_values[sl]), sl, 3)
        gd = _global_local_dofs(dofmap, qd.cell_elem[sl])
        rows.append(np.repeat(gd, nl, axis=1).ravel())
        cols.append(np.tile(gd, (1, nl)).ravel())
        vals.append(ke.ravel())
        load += np.bincount(gd.ravel(), fe.ravel(), minlength=len(load))
    mat = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                        shape=(ntot, ntot)).tocsr()
    fixed = dofmap.boundary_dofs(problem.dirichlet)
    mask = np.ones(ntot, dtype=bool)
    mask[fixed] = False
    free = np.flatnonzero(mask)
    sub = mat[free][:, free]
    # symmetrise exactly: summation order can leave 1-ulp asymmetries
    sub = ((sub + sub.T) * 0.5).tocsr()
    system = SparseSystem(sub, load[free], free, ntot)
    return system, dofmap, qd, rhs_values


# -- discrete fields -------------------------------------------------------------

class DiscreteField:
    """Coefficients of ``(p, u1, u2)`` on a mesh, stored block-wise."""

    def __init__(self, problem: ProblemSpec, mesh: MeshForest, degree: int,
                 coeffs=None, dofmap: DofMap | None = None):
        self.problem = problem
        self.mesh = mesh
        self.degree = degree
        self.dofmap = dofmap if dofmap is not None else DofMap(mesh, degree)
        n = 3 * self.dofmap.ndofs
        if coeffs is None:
            coeffs = np.zeros(n)
        coeffs = np.asarray(coeffs, dtype=float)
        if coeffs.shape != (n,):
            raise ValueError(f"expected {n} coefficients, got {coeffs.shape}")
        self.coeffs = coeffs

    @property
    def ndofs(self) -> int:
        return len(self.coeffs)

    def local(self, sl=slice(None)) -> np.ndarray:
        return self.coeffs[_global_local_dofs(self.dofmap, sl)]

    def __add__(self, other: "DiscreteField") -> "DiscreteField":
        if other.mesh != self.mesh or other.degree != self.degree:
            raise MeshError("fields live on different spaces")
        return DiscreteField(self.problem, self.mesh, self.degree, self.coeffs + other.coeffs, self.dofmap)

    def scaled(self, c: float) -> "DiscreteField":
        return DiscreteField(self.problem, self.mesh, self.degree, c * self.coeffs, self.dofmap)

    # pointwise evaluation ----------------------------------------------------
    def values_at(self, elems, ref_pts) -> np.ndarray:
        """``(p, u1, u2)`` at reference points of the given leaves."""
        phi, _ = eval_basis(self.degree, ref_pts)
        loc = self.local(elems).reshape(len(elems), 3, -1)
        return np.einsum("nl,ncl->nc", phi, loc)

    def L_at(self, elems, ref_pts, phys_pts=None) -> np.ndarray:
        """``L u`` evaluated at reference points inside the given leaves."""
        elems = np.asarray(elems, dtype=np.int64)
        phi, gref = eval_basis(self.degree, ref_pts)
        maps = self.dofmap.maps
        grads = np.einsum("nlr,nrs->nls", gref, maps.inv[elems])
        if phys_pts is None:
            phys_pts = maps.v0[elems] + np.einsum("nij,nj->ni", maps.jac[elems], ref_pts)
        B = _operator_rows(self.problem, phi, grads, phys_pts)
        return np.einsum("nci,ni->nc", B, self.local(elems))

    def L_on(self, qd: QuadData) -> np.ndarray:
        """``L u`` at every quadrature point of ``qd`` (same mesh)."""
        out = np.empty(qd.points.shape[:2] + (NCOMP,))
        for sl in qd.chunks():
            B = _operator_rows(self.problem, qd.phi, qd.grads(sl), qd.points[sl])
            out[sl] = np.einsum("nqci,ni->nqc", B, qd.to_cells(self.local(qd.cell_elem[sl]), sl, 3))
        return out

    def L_at_points(self, pts, start_elems=None, start_mesh: MeshForest | None = None) -> np.ndarray:
        """``L u`` at physical points.

        When the points are known to lie in leaves of ``start_mesh`` (another
        mesh over the same forest), ``start_elems`` gives those leaves and
        location is a short walk down or up the forest.
        """
        pts = np.asarray(pts, dtype=float).reshape(-1, 2)
        if start_mesh is None:
            elems = self.mesh.locate_points(pts)
        else:
            elems = locate_from(self.mesh, start_mesh, np.asarray(start_elems).ravel(), pts)
        ref = self.dofmap.maps.to_reference(elems, pts)
        return self.L_at(elems, ref, pts)


def locate_from(target: MeshForest, source: MeshForest, src_elems, pts) -> np.ndarray:
    """Leaves of ``target`` containing ``pts``, given their ``source`` leaves."""
    if not target.same_macro(source):
        raise MeshError("meshes are built on different macro meshes")
    src_keys = source.keys[src_elems]
    # leaves of source that are refined in target: walk down from them
    idx = np.searchsorted(target.keys, src_keys)
    idx = np.minimum(idx, len(target.keys) - 1)
    out = np.full(len(pts), -1, dtype=np.int64)
    same = target.keys[idx] == src_keys
    out[same] = idx[same]
    rest = np.flatnonzero(~same)
    if len(rest):
        up = _ancestor_or_none(src_keys[rest], target)
        has_up = up >= 0
        out[rest[has_up]] = up[has_up]
        down = rest[~has_up]
        if len(down):
            keys = src_keys[down]
            leaf_keys = descend_to_leaves(target.keys, keys & MACRO_MASK, keys >> MACRO_BITS,
                                          source.coords[src_elems[down]], pts[down])
            out[down] = target.index_of(leaf_keys)
    return out


def _ancestor_or_none(keys, coarse: MeshForest) -> np.ndarray:
    keys = np.asarray(keys, dtype=np.int64)
    macro = keys & MACRO_MASK
    codes = keys >> MACRO_BITS
    out = np.full(len(keys), -1, dtype=np.int64)
    pending = np.arange(len(keys))
    shift = 0
    while len(pending):
        c = codes[pending] >> shift
        alive = c >= 1
        pending, c = pending[alive], c[alive]
        if not len(pending):
            break
        k = (c << MACRO_BITS) | macro[pending]
        pos = np.minimum(np.searchsorted(coarse.keys, k), len(coarse.keys) - 1)
        hit = coarse.keys[pos] == k
        out[pending[hit]] = pos[hit]
        pending = pending[~hit]
        shift += 1
    return out


def apply_L(field: DiscreteField, x) -> np.ndarray:
    """``L u`` at a single point, inside the leaf returned by ``locate``."""
    leaf, lam = field.mesh.locate(x)
    ref = lam[1:][None, :]
    return field.L_at(np.array([leaf]), ref, np.asarray(x, dtype=float)[None, :])[0]


def solve_field(problem: ProblemSpec, mesh: MeshForest, degree: int, rhs=None,
                qd=None, rhs_values=None, x0=None, tol=1e-10):
    """Discrete least-squares minimiser on ``mesh``; returns ``(field, qd, F)``."""
    system, dofmap, qd, rhs_values = assemble(problem, mesh, degree, rhs, qd, rhs_values)
    coeffs = np.zeros(system.size)
    if len(system.free):
        guess = None if x0 is None else x0[system.free]
        coeffs[system.free] = solve_spd(system.matrix, system.load, tol=tol, x0=guess)
    return DiscreteField(problem, mesh, degree, coeffs, dofmap), qd, rhs_values


# -- functionals ------------------------------------------------------------------

def element_lsf_squared(field: DiscreteField, rhs_values, qd: QuadData) -> np.ndarray:
    r = field.L_on(qd) - rhs_values
    return qd.to_elements(np.einsum("nq,nqc,nqc->n", qd.wdet, r, r))


def lsf(field: DiscreteField, rhs=None, region=None, qd: QuadData | None = None,
        rhs_values=None) -> float:
    """Least-squares functional over ``region`` (leaf ids; default all)."""
    if region is not None and len(region) == 0:
        return 0.0
    if qd is None:
        qd = QuadData.for_problem(field.problem, field.mesh, field.degree)
    if rhs_values is None:
        rhs_values = qd.rhs_values(rhs if rhs is not None else ProblemRHS(field.problem))
    e2 = element_lsf_squared(field, rhs_values, qd)
    if region is not None:
        e2 = e2[np.asarray(region, dtype=np.int64)]
    return float(np.sqrt(e2.sum()))


@dataclass
class KernelComponent:
    """Discrete Ker(L*) part ``phi = (-A^-1 rot psi, 0, psi)`` with
    ``rot psi = (psi_y, -psi_x)``; reduces to ``(-grad_perp psi, 0, psi)``
    for ``A = I``."""

    problem: ProblemSpec
    mesh: MeshForest
    degree: int
    psi: np.ndarray
    dofmap: DofMap

    def values_on(self, qd: QuadData) -> np.ndarray:
        out = np.empty(qd.points.shape[:2] + (NCOMP,))
        for sl in qd.chunks():
            loc = qd.to_cells(self.psi[self.dofmap.elem_dofs[qd.cell_elem[sl]]], sl)
            out[sl] = np.einsum("nqci,ni->nqc", _kernel_rows(self.problem, qd, sl), loc)
        return out


def _kernel_rows(problem: ProblemSpec, qd: QuadData, sl):
    g = qd.grads(sl)
    alpha = problem.alpha_at(qd.points[sl])[..., None]
    eps = problem.epsilon
    gx, gy = g[..., 0], g[..., 1]
    phi = np.broadcast_to(qd.phi, gx.shape)
    zero = np.zeros_like(gx)
    return np.stack((-gy / alpha, gx / (alpha * eps), zero, phi), axis=-2)


def kernel_component(problem: ProblemSpec, mesh: MeshForest, degree: int, rhs=None,
                     qd: QuadData | None = None, rhs_values=None, tol=1e-10) -> KernelComponent:
    """Least-squares fit of the Ker(L*) family to the right-hand side.

    ``psi`` is sought in the degree-q scalar space vanishing on the whole
    boundary, where the family is exactly orthogonal to the range of L.
    """
    if qd is None:
        qd = QuadData.for_problem(problem, mesh, degree)
    if rhs_values is None:
        rhs_values = qd.rhs_values(rhs)
    dofmap = DofMap(mesh, degree)
    nl = n_local(degree)
    rows, cols, vals = [], [], []
    load = np.zeros(dofmap.ndofs)
    for sl in qd.chunks():
        K = _kernel_rows(problem, qd, sl)
        w = qd.wdet[sl]
        ke = qd.from_cells(np.einsum("nq,nqci,nqcj->nij", w, K, K), sl)
        fe = qd.from_cells(np.einsum("nq,nqci,nqc->ni", w, K, rhs_values[sl]), sl)
        gd = dofmap.elem_dofs[qd.cell_elem[sl]]
        rows.append(np.repeat(gd, nl, axis=1).ravel())
        cols.append(np.tile(gd, (1, nl)).ravel())
        vals.append(ke.ravel())
        load += np.bincount(gd.ravel(), fe.ravel(), minlength=len(load))
    mat = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                        shape=(dofmap.ndofs,) * 2).tocsr()
    fixed = dofmap.boundary_dofs("SENW")
    mask = np.ones(dofmap.ndofs, dtype=bool)
    mask[fixed] = False
    free = np.flatnonzero(mask)
    psi = np.zeros(dofmap.ndofs)
    if len(free):
        sub = mat[free][:, free]
        sub = ((sub + sub.T) * 0.5).tocsr()
        if np.any(load[free]):
            psi[free] = solve_spd(sub, load[free], tol=tol)
    return KernelComponent(problem, mesh, degree, psi, dofmap)


def modified_lsf(field: DiscreteField, rhs_values, kernel: KernelComponent, qd: QuadData,
                 region=None) -> float:
    """``|| L u - (f_l - phi_l) ||`` over ``region``."""
    if kernel.mesh != field.mesh:
        raise MeshError("kernel and field live on different meshes")
    e2 = element_lsf_squared(field, rhs_values - kernel.values_on(qd), qd)
    if region is not None:
        e2 = e2[np.asarray(region, dtype=np.int64)]
    return float(np.sqrt(e2.sum()))


# -- transfer between nested meshes ----------------------------------------------

def prolong(field: DiscreteField, fine: MeshForest, dofmap: DofMap | None = None) -> DiscreteField:
    """Exact interpolation of ``field`` onto a refinement ``fine`` of its mesh."""
    if fine == field.mesh:
        return field
    if dofmap is None:
        dofmap = DofMap(fine, field.degree)
    anc = ancestor_index(fine.keys, field.mesh)
    ref_nodes = lagrange_nodes(field.degree)
    phys = dofmap.maps.to_physical(ref_nodes)
    nloc = len(ref_nodes)
    elems = np.repeat(anc, nloc)
    pts = phys.reshape(-1, 2)
    cref = field.dofmap.maps.to_reference(elems, pts)
    vals = field.values_at(elems, cref)
    n = dofmap.ndofs
    coeffs = np.empty(3 * n)
    gd = dofmap.elem_dofs.ravel()
    for c in range(3):
        coeffs[c * n + gd] = vals[:, c]
    return DiscreteField(field.problem, fine, field.degree, coeffs, dofmap)


def interpolate(problem: ProblemSpec, mesh: MeshForest, degree: int, func) -> DiscreteField:
    """Nodal interpolant of ``func: (n, 2) -> (n, 3)`` giving ``(p, u1, u2)``."""
    dofmap = DofMap(mesh, degree)
    vals = np.asarray(func(dofmap.points), dtype=float)
    return DiscreteField(problem, mesh, degree, vals.T.ravel(), dofmap)


# -- text dump ----------------------------------------------------------------------

FIELD_HEADER = "NIRD-FIELD v1"


def dump_field(field: DiscreteField) -> str:
    """Mesh dump followed by a ``NIRD-FIELD v1`` block of coefficients.

    Coefficients are listed block-wise (p, u1, u2) in the order of the
    scalar dofs, which are numbered by sorted node coordinates.
    """
    from .mesh import dump_mesh
    lines = [FIELD_HEADER, f"degree {field.degree}", f"ndofs {field.dofmap.ndofs}"]
    lines.extend(f"c {c:.16e}" for c in field.coeffs)
    return dump_mesh(field.mesh) + "\n".join(lines) + "\n"


def load_field(text: str, problem: ProblemSpec) -> DiscreteField:
    from .mesh import load_mesh
    head, sep, tail = text.partition(FIELD_HEADER)
    if not sep:
        raise ValueError(f"missing {FIELD_HEADER} header")
    mesh = load_mesh(head)
    degree, ndofs, coeffs = None, None, []
    for ln in tail.splitlines():
        tok = ln.split()
        if not tok:
            continue
        if tok[0] == "degree":
            degree = int(tok[1])
        elif tok[0] == "ndofs":
            ndofs = int(tok[1])
        elif tok[0] == "c":
            coeffs.append(float(tok[1]))
        else:
            raise ValueError(f"unknown record {tok[0]!r}")
    if degree is None or ndofs is None or len(coeffs) != 3 * ndofs:
        raise ValueError("incomplete field block")
    return DiscreteField(problem, mesh, degree, np.array(coeffs))
