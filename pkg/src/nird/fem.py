"""Lagrange elements of arbitrary degree on triangles, quadrature and DOF maps."""
from __future__ import annotations

from functools import lru_cache

import numpy as np

from .mesh import MeshForest

_KEY_SCALE = float(2 ** 40)


@lru_cache(maxsize=None)
def triangle_quadrature(order: int):
    """Collapsed Gauss rule on the reference triangle, exact to ``order``.

    Returns ``(points, weights)`` with points ``(n, 2)`` in reference
    coordinates and weights summing to 1/2.
    """
    n = max(1, int(np.ceil((order + 2) / 2.0)))
    g, w = np.polynomial.legendre.leggauss(n)
    s = 0.5 * (g + 1.0)
    ws = 0.5 * w
    pts, wts = [], []
    for i in range(n):
        for j in range(n):
            t = s[j]
            pts.append((s[i] * (1.0 - t), t))
            wts.append(ws[i] * ws[j] * (1.0 - t))
    pts = np.array(pts)
    wts = np.array(wts)
    pts.setflags(write=False)
    wts.setflags(write=False)
    return pts, wts


def quadrature_order(degree: int, raise_by: int = 0) -> int:
    return max(2 * degree, 4) + raise_by


def _monomials(degree):
    return [(a, b) for total in range(degree + 1) for a in range(total, -1, -1) for b in [total - a]]


@lru_cache(maxsize=None)
def lagrange_nodes(degree: int) -> np.ndarray:
    """Reference nodes: vertices, then edge interiors, then the interior.

    Edge ``e`` joins local vertices ``e`` and ``e+1`` (mod 3) in NVB order.
    """
    q = degree
    ref = np.array([(0.0, 0.0), (1.0, 0.0), (0.0, 1.0)])
    nodes = [tuple(r) for r in ref]
    for e in range(3):
        a, b = ref[e], ref[(e + 1) % 3]
        for i in range(1, q):
            t = i / q
            nodes.append(tuple((1 - t) * a + t * b))
    for j in range(1, q):
        for i in range(1, q - j):
            nodes.append((i / q, j / q))
    out = np.array(nodes)
    out.setflags(write=False)
    return out


@lru_cache(maxsize=None)
def _basis_coefficients(degree: int) -> np.ndarray:
    nodes = lagrange_nodes(degree)
    mono = _monomials(degree)
    vander = np.array([[x ** a * y ** b for (a, b) in mono] for x, y in nodes])
    return np.linalg.inv(vander)


def eval_basis(degree: int, ref_pts):
    """Basis values ``(n, nloc)`` and reference gradients ``(n, nloc, 2)``."""
    ref_pts = np.atleast_2d(ref_pts)
    x, y = ref_pts[:, 0], ref_pts[:, 1]
    mono = _monomials(degree)
    coef = _basis_coefficients(degree)
    m = np.stack([x ** a * y ** b for (a, b) in mono], axis=1)
    mx = np.stack([a * x ** max(a - 1, 0) * y ** b if a else np.zeros_like(x) for (a, b) in mono], axis=1)
    my = np.stack([b * x ** a * y ** max(b - 1, 0) if b else np.zeros_like(x) for (a, b) in mono], axis=1)
    phi = m @ coef
    grad = np.stack((mx @ coef, my @ coef), axis=-1)
    return phi, grad


def n_local(degree: int) -> int:
    return (degree + 1) * (degree + 2) // 2


class ElementMaps:
    """Affine maps of all leaves: ``x = v0 + J xi``."""

    def __init__(self, coords: np.ndarray):
        v = np.asarray(coords, dtype=float)
        self.v0 = v[:, 0]
        jac = np.stack((v[:, 1] - v[:, 0], v[:, 2] - v[:, 0]), axis=-1)
        self.jac = jac
        self.det = jac[:, 0, 0] * jac[:, 1, 1] - jac[:, 0, 1] * jac[:, 1, 0]
        if np.any(np.abs(self.det) <= 0.0):
            raise ValueError("zero-area element")
        inv = np.empty_like(jac)
        inv[:, 0, 0] = jac[:, 1, 1]
        inv[:, 1, 1] = jac[:, 0, 0]
        inv[:, 0, 1] = -jac[:, 0, 1]
        inv[:, 1, 0] = -jac[:, 1, 0]
        self.inv = inv / self.det[:, None, None]

    def to_physical(self, ref_pts, elems=None):
        """Reference points ``(nq, 2)`` -> physical ``(ne, nq, 2)``."""
        v0 = self.v0 if elems is None else self.v0[elems]
        jac = self.jac if elems is None else self.jac[elems]
        return v0[:, None, :] + np.einsum("nij,qj->nqi", jac, ref_pts)

    def to_reference(self, elems, pts):
        """Physical points ``(n, 2)`` in elements ``elems`` -> reference coords."""
        return np.einsum("nij,nj->ni", self.inv[elems], pts - self.v0[elems])


class DofMap:
    """Continuous scalar Lagrange numbering of degree ``q`` on a mesh.

    Global nodes are identified by their coordinates snapped to a 2^-40
    grid, so two meshes that share a node agree on it exactly.
    """

    def __init__(self, mesh: MeshForest, degree: int):
        if degree < 1:
            raise ValueError("degree must be >= 1")
        self.mesh = mesh
        self.degree = degree
        self.maps = ElementMaps(mesh.coords)
        nodes = self.maps.to_physical(lagrange_nodes(degree))
        ikeys = np.rint(nodes.reshape(-1, 2) * _KEY_SCALE).astype(np.int64)
        uniq, inv = np.unique(ikeys, axis=0, return_inverse=True)
        self.elem_dofs = inv.reshape(len(mesh.keys), -1)
        self.points = uniq / _KEY_SCALE
        self.ndofs = len(uniq)

    def boundary_dofs(self, sides) -> np.ndarray:
        """Scalar dofs lying on any of the named sides of the unit square."""
        x, y = self.points[:, 0], self.points[:, 1]
        mask = np.zeros(self.ndofs, dtype=bool)
        tests = {"S": y == 0.0, "E": x == 1.0, "N": y == 1.0, "W": x == 0.0}
        for s in sides:
            mask |= tests[s]
        return np.flatnonzero(mask)


# -- elements cut by coefficient or data discontinuities -------------------------

def _split_polygon(poly, axis: int, value: float, tol: float):
    """Split a convex polygon by the line ``x[axis] = value``; ``None`` if not crossed."""
    d = poly[:, axis] - value
    if d.min() >= -tol or d.max() <= tol:
        return None
    lo, hi = [], []
    n = len(poly)
    for i in range(n):
        a, b = poly[i], poly[(i + 1) % n]
        da, db = d[i], d[(i + 1) % n]
        if da <= tol:
            lo.append(a)
        if da >= -tol:
            hi.append(a)
        if (da < -tol and db > tol) or (da > tol and db < -tol):
            t = da / (da - db)
            p = a + t * (b - a)
            p[axis] = value
            lo.append(p)
            hi.append(p)
    return np.array(lo), np.array(hi)


def split_triangle(tri, lines, tol: float = 1e-12) -> list:
    """Triangles tiling ``tri`` with none crossing any ``(axis, value)`` line.

    Returns ``[tri]`` when no line crosses the interior.
    """
    pieces = [np.asarray(tri, dtype=float)]
    for axis, value in lines:
        nxt = []
        for poly in pieces:
            parts = _split_polygon(poly, axis, value, tol)
            if parts is None:
                nxt.append(poly)
            else:
                nxt.extend(p for p in parts if len(p) >= 3)
        pieces = nxt
    if len(pieces) == 1:
        return [np.asarray(tri, dtype=float)]
    out = []
    for poly in pieces:
        for k in range(1, len(poly) - 1):
            t = np.array([poly[0], poly[k], poly[k + 1]])
            area = 0.5 * abs((t[1, 0] - t[0, 0]) * (t[2, 1] - t[0, 1]) - (t[1, 1] - t[0, 1]) * (t[2, 0] - t[0, 0]))
            if area > tol * tol:
                out.append(t)
    return out


def crossed_elements(coords, lines, tol: float = 1e-12) -> np.ndarray:
    """Ids of elements whose interior is crossed by one of ``lines``."""
    coords = np.asarray(coords)
    hit = np.zeros(len(coords), dtype=bool)
    for axis, value in lines:
        c = coords[:, :, axis]
        hit |= (c.min(axis=1) < value - tol) & (c.max(axis=1) > value + tol)
    return np.flatnonzero(hit)


def transfer_matrix(degree: int, parent_maps: ElementMaps, elem: int, cell) -> np.ndarray:
    """``R`` with ``c_cell = R c_parent`` for the degree-q basis restricted to ``cell``."""
    cmap = ElementMaps(np.asarray(cell)[None])
    nodes = cmap.to_physical(lagrange_nodes(degree))[0]
    ref = parent_maps.to_reference(np.full(len(nodes), elem), nodes)
    phi, _ = eval_basis(degree, ref)
    return phi
