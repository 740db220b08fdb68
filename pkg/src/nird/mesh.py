"""
Conforming triangular meshes of the unit square under newest-vertex bisection.

Every mesh is a set of leaves of a binary bisection forest rooted at the
triangles of a fixed macro mesh. A tree node is encoded as one integer key::

    key = (code << MACRO_BITS) | macro

where ``code`` is the root-to-node path with a leading 1 bit (the root has
code 1, its children 2 and 3, ...). Because all meshes built over the same
macro mesh share this key space, union and nesting reduce to set operations
on keys.

Element vertices are stored in NVB order ``(v0, v1, v2)``: the refinement
edge is ``v0-v1`` and ``v2`` is the newest vertex. Bisection at the midpoint
``m`` of the refinement edge yields the children ``(v2, v0, m)`` (bit 0) and
``(v1, v2, m)`` (bit 1).
"""
from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np

MACRO_BITS = 12
MACRO_MASK = (1 << MACRO_BITS) - 1
MAX_LEVEL = 50
GEOM_TOL = 1e-12

SIDES = ("S", "E", "N", "W")


class MeshError(ValueError):
    """Raised for invalid mesh operations (mismatched macros, bad points)."""


def make_key(macro: int, code: int) -> int:
    return (code << MACRO_BITS) | macro


def key_macro(key: int) -> int:
    return key & MACRO_MASK


def key_code(key: int) -> int:
    return key >> MACRO_BITS


def key_level(key: int) -> int:
    return (key >> MACRO_BITS).bit_length() - 1


def child_key(key: int, bit: int) -> int:
    code = key >> MACRO_BITS
    return make_key(key & MACRO_MASK, 2 * code + bit)


def parent_key(key: int) -> int:
    code = key >> MACRO_BITS
    if code <= 1:
        raise MeshError("root node has no parent")
    return make_key(key & MACRO_MASK, code >> 1)


def key_address(key: int) -> str:
    """Human readable tree address ``m<macro>.<bits>`` used in mesh dumps."""
    code = key_code(key)
    bits = bin(code)[3:]
    return f"m{key_macro(key)}.{bits}"


def parse_address(text: str) -> int:
    head, _, bits = text.partition(".")
    if not head.startswith("m"):
        raise MeshError(f"bad tree address {text!r}")
    code = int("1" + bits, 2)
    return make_key(int(head[1:]), code)


def _mid(a, b):
    return ((a[0] + b[0]) * 0.5, (a[1] + b[1]) * 0.5)


def bisect_vertices(verts, bit: int):
    v0, v1, v2 = verts
    m = _mid(v0, v1)
    if bit == 0:
        return (v2, v0, m)
    return (v1, v2, m)


@dataclass(frozen=True)
class MacroMesh:
    """Root triangulation shared by every mesh in a run.

    ``triangles[t]`` lists vertex indices in NVB order, i.e. the first two
    entries span the refinement edge. ``boundary_tags`` maps each boundary
    edge (sorted vertex pair) to the side of the square it lies on.
    """

    vertices: np.ndarray
    triangles: np.ndarray
    boundary_tags: dict = field(default_factory=dict, compare=False)
    n: int | None = None

    def __post_init__(self):
        if len(self.triangles) > MACRO_MASK:
            raise MeshError("too many macro triangles for the key layout")

    @property
    def ntri(self) -> int:
        return len(self.triangles)

    def root_vertices(self, t: int):
        return tuple(tuple(float(c) for c in self.vertices[i]) for i in self.triangles[t])

    def fingerprint(self) -> tuple:
        return (self.vertices.tobytes(), self.triangles.tobytes())


def unit_square_macro(n: int = 2) -> MacroMesh:
    """Uniform ``n x n`` grid of squares, each cut into two triangles.

    The diagonal of each square is the refinement edge of both halves, so
    the initial labelling is compatible.
    """
    if n < 1:
        raise MeshError("macro grid size must be positive")
    xs = np.linspace(0.0, 1.0, n + 1)
    vertices = np.array([(x, y) for y in xs for x in xs], dtype=float)

    def vid(i, j):
        return j * (n + 1) + i

    tris = []
    for j in range(n):
        for i in range(n):
            a, b = vid(i, j), vid(i + 1, j)
            c, d = vid(i + 1, j + 1), vid(i, j + 1)
            # diagonal a-c is the refinement edge of both halves
            tris.append((a, c, b))
            tris.append((c, a, d))
    triangles = np.array(tris, dtype=np.int64)

    tags = {}
    for t in tris:
        for e in ((t[0], t[1]), (t[1], t[2]), (t[2], t[0])):
            p, q = vertices[e[0]], vertices[e[1]]
            side = _boundary_side(p, q)
            if side is not None:
                tags[tuple(sorted(e))] = side
    return MacroMesh(vertices, triangles, tags, n=n)


def _boundary_side(p, q):
    if p[1] == 0.0 and q[1] == 0.0:
        return "S"
    if p[0] == 1.0 and q[0] == 1.0:
        return "E"
    if p[1] == 1.0 and q[1] == 1.0:
        return "N"
    if p[0] == 0.0 and q[0] == 0.0:
        return "W"
    return None


@dataclass(frozen=True)
class ElementGeometry:
    vertices: np.ndarray
    area: float
    inscribed_diameter: float
    jacobian: np.ndarray

    @classmethod
    def from_vertices(cls, verts) -> "ElementGeometry":
        v = np.asarray(verts, dtype=float)
        jac = np.column_stack((v[1] - v[0], v[2] - v[0]))
        area = 0.5 * abs(np.linalg.det(jac))
        if area <= 0.0:
            raise MeshError("zero-area element")
        edges = [np.linalg.norm(v[(i + 1) % 3] - v[i]) for i in range(3)]
        diam = 4.0 * area / sum(edges)
        return cls(v, area, diam, jac)

    def barycentric(self, x) -> np.ndarray:
        return barycentric(self.vertices, x)


def barycentric(verts, x) -> np.ndarray:
    v = np.asarray(verts, dtype=float)
    jac = np.column_stack((v[1] - v[0], v[2] - v[0]))
    xi = np.linalg.solve(jac, np.asarray(x, dtype=float) - v[0])
    return np.array([1.0 - xi[0] - xi[1], xi[0], xi[1]])


def extended_barycentric(tau: ElementGeometry, d_min: float, x) -> np.ndarray:
    """Barycentric coordinates of ``x`` in the triangle obtained by moving
    each vertex of ``tau`` away from its centroid by ``d_min``."""
    if not d_min > 0:
        raise MeshError("d_min must be positive")
    ext = extend_triangle(tau.vertices, d_min)
    jac = np.column_stack((ext[1] - ext[0], ext[2] - ext[0]))
    if abs(np.linalg.det(jac)) <= 1e-300:
        raise MeshError("degenerate extended triangle")
    return barycentric(ext, x)


def extend_triangle(verts, d_min: float) -> np.ndarray:
    v = np.asarray(verts, dtype=float)
    c = v.mean(axis=0)
    out = v - c
    out = out / np.linalg.norm(out, axis=-1, keepdims=True)
    return v + d_min * out


class MeshForest:
    """Immutable conforming NVB mesh.

    Leaves are enumerated in ascending key order; that enumeration is the
    leaf id used everywhere else (element arrays, partitions, dumps).
    """

    def __init__(self, macro: MacroMesh, leaves: dict):
        self.macro = macro
        self._leaves = leaves
        keys = np.array(sorted(leaves), dtype=np.int64)
        self.keys = keys
        self.coords = np.array([leaves[int(k)] for k in keys], dtype=float).reshape(-1, 3, 2)
        self.keys.setflags(write=False)
        self.coords.setflags(write=False)
        self._index = None

    # -- construction -------------------------------------------------
    @classmethod
    def from_macro(cls, macro: MacroMesh) -> "MeshForest":
        leaves = {make_key(t, 1): macro.root_vertices(t) for t in range(macro.ntri)}
        return cls(macro, leaves)

    @classmethod
    def uniform(cls, macro: MacroMesh, bisections: int) -> "MeshForest":
        mesh = cls.from_macro(macro)
        for _ in range(bisections):
            mesh = mesh.refine(range(mesh.nleaves))
        return mesh

    # -- basic queries ------------------------------------------------
    @property
    def nleaves(self) -> int:
        return len(self.keys)

    def __len__(self):
        return len(self.keys)

    @property
    def levels(self) -> np.ndarray:
        codes = self.keys >> MACRO_BITS
        return np.array([int(c).bit_length() - 1 for c in codes], dtype=np.int64)

    @property
    def macro_ids(self) -> np.ndarray:
        return self.keys & MACRO_MASK

    def leaf_items(self):
        return self._leaves.items()

    def vertices_of(self, key: int):
        return self._leaves[key]

    def index_of(self, keys) -> np.ndarray:
        """Leaf ids for an array of leaf keys (all must be leaves)."""
        keys = np.asarray(keys, dtype=np.int64)
        idx = np.searchsorted(self.keys, keys)
        idx = np.minimum(idx, len(self.keys) - 1)
        if not np.all(self.keys[idx] == keys):
            raise MeshError("key is not a leaf of this mesh")
        return idx

    def geometry(self, leaf: int) -> ElementGeometry:
        return ElementGeometry.from_vertices(self.coords[leaf])

    def areas(self) -> np.ndarray:
        v = self.coords
        d1 = v[:, 1] - v[:, 0]
        d2 = v[:, 2] - v[:, 0]
        return 0.5 * np.abs(d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    def centroids(self) -> np.ndarray:
        return self.coords.mean(axis=1)

    def inscribed_diameters(self) -> np.ndarray:
        v = self.coords
        per = sum(np.linalg.norm(v[:, (i + 1) % 3] - v[:, i], axis=1) for i in range(3))
        return 4.0 * self.areas() / per

    def vertex_table(self):
        """Unique vertices and per-leaf vertex indices (in NVB order)."""
        pts = self.coords.reshape(-1, 2)
        uniq, inv = np.unique(pts, axis=0, return_inverse=True)
        return uniq, inv.reshape(-1, 3)

    def same_macro(self, other: "MeshForest") -> bool:
        return self.macro is other.macro or self.macro.fingerprint() == other.macro.fingerprint()

    def __eq__(self, other):
        if not isinstance(other, MeshForest):
            return NotImplemented
        return self.same_macro(other) and np.array_equal(self.keys, other.keys)

    def __hash__(self):
        return hash(self.keys.tobytes())

    def __repr__(self):
        return f"MeshForest(nleaves={self.nleaves}, max_level={int(self.levels.max())})"

    # -- refinement ---------------------------------------------------
    def refine(self, marked) -> "MeshForest":
        """Bisect every marked leaf once, then close to conformity."""
        marked = [int(m) for m in marked]
        if not marked:
            return self
        if min(marked) < 0 or max(marked) >= self.nleaves:
            raise MeshError("marked leaf id out of range")
        leaves = dict(self._leaves)
        work = [int(self.keys[m]) for m in sorted(set(marked))]
        _close(leaves, work, check_all=False)
        return MeshForest(self.macro, leaves)

    def union(self, other: "MeshForest") -> "MeshForest":
        """Coarsest conforming mesh refining both ``self`` and ``other``."""
        if not self.same_macro(other):
            raise MeshError("meshes are built on different macro meshes")
        if np.array_equal(self.keys, other.keys):
            return self
        leaves = {}
        inner_a = _internal_nodes(self.keys)
        inner_b = _internal_nodes(other.keys)
        for k, v in self._leaves.items():
            if k not in inner_b:
                leaves[k] = v
        for k, v in other._leaves.items():
            if k not in inner_a:
                leaves[k] = v
        _close(leaves, None, check_all=True)
        return MeshForest(self.macro, leaves)

    def refines(self, coarse: "MeshForest") -> bool:
        """True when every leaf of ``self`` lies inside a leaf of ``coarse``."""
        try:
            ancestor_index(self.keys, coarse)
        except MeshError:
            return False
        return True

    def is_conforming(self) -> bool:
        verts = set(map(tuple, self.coords.reshape(-1, 2)))
        for tri in self.coords:
            for i in range(3):
                a, b = tri[i], tri[(i + 1) % 3]
                if _mid(a, b) in verts:
                    return False
        return True

    # -- point location -----------------------------------------------
    def locate(self, x):
        """Leaf id and barycentric coordinates of the leaf containing ``x``.

        Points shared by several leaves resolve to the lowest leaf id.
        """
        x = np.asarray(x, dtype=float)
        if x.shape != (2,) or np.any(x < -GEOM_TOL) or np.any(x > 1 + GEOM_TOL):
            raise MeshError(f"point {x} outside the domain")
        found = []
        for t in range(self.macro.ntri):
            verts = self.macro.root_vertices(t)
            if np.all(barycentric(verts, x) >= -GEOM_TOL):
                self._descend(make_key(t, 1), verts, x, found)
        if not found:
            raise MeshError(f"point {x} outside the domain")
        leaf = min(int(i) for i in self.index_of(found))
        return leaf, barycentric(self.coords[leaf], x)

    def _descend(self, key, verts, x, found):
        if key in self._leaves:
            found.append(key)
            return
        if key_level(key) > MAX_LEVEL:
            raise MeshError("descent below the maximum level")
        for bit in (0, 1):
            cv = bisect_vertices(verts, bit)
            if np.all(barycentric(cv, x) >= -GEOM_TOL):
                self._descend(child_key(key, bit), cv, x, found)

    def locate_points(self, pts) -> np.ndarray:
        """Vectorised location; exact ties go to the first macro / bit 0."""
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        if np.any(pts < -GEOM_TOL) or np.any(pts > 1 + GEOM_TOL):
            raise MeshError("point outside the domain")
        n = len(pts)
        macro = np.full(n, -1, dtype=np.int64)
        for t in range(self.macro.ntri - 1, -1, -1):
            lam = _bary_many(np.broadcast_to(np.array(self.macro.root_vertices(t)), (n, 3, 2)), pts)
            macro[np.all(lam >= -GEOM_TOL, axis=1)] = t
        if np.any(macro < 0):
            raise MeshError("point outside the domain")
        roots = np.array([self.macro.root_vertices(t) for t in range(self.macro.ntri)])
        codes = np.ones(n, dtype=np.int64)
        verts = roots[macro].copy()
        return self.index_of(descend_to_leaves(self.keys, macro, codes, verts, pts))


def _bary_many(verts, pts):
    """Barycentric coordinates of ``pts[i]`` in triangle ``verts[i]``."""
    v0 = verts[:, 0]
    d1 = verts[:, 1] - v0
    d2 = verts[:, 2] - v0
    det = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]
    r = pts - v0
    l1 = (r[:, 0] * d2[:, 1] - r[:, 1] * d2[:, 0]) / det
    l2 = (d1[:, 0] * r[:, 1] - d1[:, 1] * r[:, 0]) / det
    return np.column_stack((1.0 - l1 - l2, l1, l2))


def descend_to_leaves(target_keys, macro, codes, verts, pts) -> np.ndarray:
    """Walk points down the forest until they reach a leaf of ``target_keys``.

    ``macro``/``codes``/``verts`` describe the starting node of each point,
    which must be an ancestor-or-self of the leaf that contains it.
    """
    macro = np.asarray(macro, dtype=np.int64)
    codes = np.array(codes, dtype=np.int64)
    verts = np.array(verts, dtype=float)
    out = np.empty(len(codes), dtype=np.int64)
    active = np.arange(len(codes))
    for _ in range(MAX_LEVEL + 2):
        keys = (codes[active] << MACRO_BITS) | macro[active]
        hit = _isin_sorted(keys, target_keys)
        out[active[hit]] = keys[hit]
        active = active[~hit]
        if len(active) == 0:
            return out
        v = verts[active]
        m = 0.5 * (v[:, 0] + v[:, 1])
        v2 = v[:, 2]
        p = pts[active]
        # side of the bisection line v2-m: bit 0 holds v0
        side_p = (m[:, 0] - v2[:, 0]) * (p[:, 1] - v2[:, 1]) - (m[:, 1] - v2[:, 1]) * (p[:, 0] - v2[:, 0])
        side_0 = (m[:, 0] - v2[:, 0]) * (v[:, 0, 1] - v2[:, 1]) - (m[:, 1] - v2[:, 1]) * (v[:, 0, 0] - v2[:, 0])
        bit = np.where(side_p * side_0 >= 0, 0, 1)
        new = np.empty_like(v)
        b0 = bit == 0
        new[b0, 0], new[b0, 1], new[b0, 2] = v2[b0], v[b0, 0], m[b0]
        b1 = ~b0
        new[b1, 0], new[b1, 1], new[b1, 2] = v[b1, 1], v2[b1], m[b1]
        verts[active] = new
        codes[active] = 2 * codes[active] + bit
    raise MeshError("point descent did not reach a leaf")


def _isin_sorted(keys, sorted_keys):
    idx = np.searchsorted(sorted_keys, keys)
    idx = np.minimum(idx, len(sorted_keys) - 1)
    return sorted_keys[idx] == keys


def ancestor_index(keys, coarse: MeshForest) -> np.ndarray:
    """For each key, the id of the ``coarse`` leaf that is its ancestor-or-self."""
    keys = np.asarray(keys, dtype=np.int64)
    macro = keys & MACRO_MASK
    codes = keys >> MACRO_BITS
    out = np.full(len(keys), -1, dtype=np.int64)
    pending = np.arange(len(keys))
    shift = 0
    while len(pending):
        c = codes[pending] >> shift
        alive = c >= 1
        if not np.any(alive):
            break
        pending = pending[alive]
        c = c[alive]
        k = (c << MACRO_BITS) | macro[pending]
        hit = _isin_sorted(k, coarse.keys)
        out[pending[hit]] = np.searchsorted(coarse.keys, k[hit])
        pending = pending[~hit]
        shift += 1
    if np.any(out < 0):
        raise MeshError("mesh does not refine the coarse mesh")
    return out


def _internal_nodes(keys) -> set:
    seen = set()
    for k in keys:
        k = int(k)
        code = k >> MACRO_BITS
        macro = k & MACRO_MASK
        code >>= 1
        while code >= 1:
            pk = (code << MACRO_BITS) | macro
            if pk in seen:
                break
            seen.add(pk)
            code >>= 1
    return seen


def _close(leaves: dict, work, check_all: bool):
    """Bisect queued leaves and every leaf with a hanging node, in place."""
    vertset = set()
    edge_mid = defaultdict(list)
    for k, (a, b, c) in leaves.items():
        vertset.update((a, b, c))
        edge_mid[_mid(a, b)].append(k)
        edge_mid[_mid(b, c)].append(k)
        edge_mid[_mid(c, a)].append(k)
    if check_all:
        work = [k for k, (a, b, c) in leaves.items()
                if _mid(a, b) in vertset or _mid(b, c) in vertset or _mid(c, a) in vertset]
        work.sort(reverse=True)
    else:
        work = list(reversed(work))
    while work:
        k = work.pop()
        verts = leaves.pop(k, None)
        if verts is None:
            continue
        if key_level(k) >= MAX_LEVEL:
            raise MeshError("maximum refinement level exceeded")
        v0, v1, v2 = verts
        m = _mid(v0, v1)
        for bit, cv in ((0, (v2, v0, m)), (1, (v1, v2, m))):
            ck = child_key(k, bit)
            leaves[ck] = cv
            a, b, c = cv
            for mm in (_mid(a, b), _mid(b, c), _mid(c, a)):
                edge_mid[mm].append(ck)
                if mm in vertset:
                    work.append(ck)
        if m not in vertset:
            vertset.add(m)
            for nk in edge_mid.get(m, ()):
                if nk in leaves:
                    work.append(nk)


# -- text dump ------------------------------------------------------------

def dump_mesh(mesh: MeshForest) -> str:
    """Line-based dump: header, macro block, vertices, leaves.

    Leaf lines are ``t i j k level address``; the address makes the forest
    reconstructible so the round trip is exact.
    """
    lines = ["NIRD-MESH v1"]
    for x, y in mesh.macro.vertices:
        lines.append(f"mv {x:.16e} {y:.16e}")
    for i, j, k in mesh.macro.triangles:
        lines.append(f"mt {i} {j} {k}")
    verts, tri = mesh.vertex_table()
    for x, y in verts:
        lines.append(f"v {x:.16e} {y:.16e}")
    for leaf, (i, j, k) in enumerate(tri):
        key = int(mesh.keys[leaf])
        lines.append(f"t {i} {j} {k} {key_level(key)} {key_address(key)}")
    return "\n".join(lines) + "\n"


def load_mesh(text: str, macro: MacroMesh | None = None) -> MeshForest:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines or lines[0].strip() != "NIRD-MESH v1":
        raise MeshError("missing NIRD-MESH v1 header")
    mv, mt, vs, ts = [], [], [], []
    for ln in lines[1:]:
        tok = ln.split()
        if tok[0] == "mv":
            mv.append((float(tok[1]), float(tok[2])))
        elif tok[0] == "mt":
            mt.append(tuple(int(t) for t in tok[1:4]))
        elif tok[0] == "v":
            vs.append((float(tok[1]), float(tok[2])))
        elif tok[0] == "t":
            ts.append((tuple(int(t) for t in tok[1:4]), tok[5]))
        elif tok[0] == "NIRD-FIELD":
            break
        else:
            raise MeshError(f"unknown record {tok[0]!r}")
    if macro is None:
        vertices = np.array(mv, dtype=float)
        triangles = np.array(mt, dtype=np.int64)
        tags = {}
        for t in triangles:
            for e in ((t[0], t[1]), (t[1], t[2]), (t[2], t[0])):
                side = _boundary_side(vertices[e[0]], vertices[e[1]])
                if side is not None:
                    tags[tuple(sorted(int(i) for i in e))] = side
        macro = MacroMesh(vertices, triangles, tags)
    leaves = {}
    for (i, j, k), addr in ts:
        leaves[parse_address(addr)] = (vs[i], vs[j], vs[k])
    return MeshForest(macro, leaves)
