"""Home-domain partitioning and partition-of-unity characteristic functions."""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .mesh import MeshForest, _bary_many, extend_triangle

KINDS = ("discontinuous", "C0", "Cinf")
ALIASES = {"discts": "discontinuous", "discontinuous": "discontinuous", "c0": "C0", "C0": "C0",
           "cinf": "Cinf", "Cinf": "Cinf"}
BUMP_POWER = 0.5
HILBERT_ORDER = 16


def hilbert_index(pts, order: int = HILBERT_ORDER) -> np.ndarray:
    """Position of points in [0,1]^2 along a Hilbert curve of ``2**order`` cells."""
    pts = np.asarray(pts, dtype=float)
    n = 1 << order
    x = np.clip((pts[:, 0] * n).astype(np.int64), 0, n - 1)
    y = np.clip((pts[:, 1] * n).astype(np.int64), 0, n - 1)
    d = np.zeros(len(pts), dtype=np.int64)
    s = n >> 1
    while s > 0:
        rx = ((x & s) > 0).astype(np.int64)
        ry = ((y & s) > 0).astype(np.int64)
        d += s * s * ((3 * rx) ^ ry)
        flip = (ry == 0) & (rx == 1)
        x = np.where(flip, n - 1 - x, x)
        y = np.where(flip, n - 1 - y, y)
        swap = ry == 0
        x, y = np.where(swap, y, x), np.where(swap, x, y)
        s >>= 1
    return d


def greedy_contiguous(weights, P: int) -> np.ndarray:
    """Split a sequence into ``P`` non-empty contiguous runs of similar weight.

    Cut ``r`` is placed where the running sum is closest to ``r/P`` of the
    total (ties toward the earlier cut). Returns the run index of each item.
    """
    w = np.asarray(weights, dtype=float)
    n = len(w)
    if P > n:
        raise ValueError(f"cannot split {n} elements among {P} ranks")
    csum = np.concatenate(([0.0], np.cumsum(w)))
    total = csum[-1]
    cuts = [0]
    for r in range(1, P):
        lo = cuts[-1] + 1
        hi = n - (P - r)
        target = total * r / P
        cand = np.arange(lo, hi + 1)
        best = cand[np.argmin(np.abs(csum[cand] - target))]
        cuts.append(int(best))
    cuts.append(n)
    owner = np.empty(n, dtype=np.int64)
    for r in range(P):
        owner[cuts[r]:cuts[r + 1]] = r
    return owner


@dataclass
class HomePartition:
    mesh: MeshForest
    owner: np.ndarray
    P: int

    @property
    def domains(self) -> list:
        return [np.flatnonzero(self.owner == l) for l in range(self.P)]

    def write_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["element", "rank"])
            for k, r in enumerate(self.owner):
                w.writerow([k, int(r)])


def partition_home_domains(mesh: MeshForest, errors, P: int) -> HomePartition:
    """Hilbert-ordered greedy split of the coarse elements by squared error."""
    if P < 1 or P & (P - 1):
        raise ValueError("P must be a power of two")
    if P > mesh.nleaves:
        raise ValueError(f"P={P} exceeds the {mesh.nleaves} coarse elements")
    errors = np.asarray(errors, dtype=float)
    order = np.lexsort((np.arange(mesh.nleaves), hilbert_index(mesh.centroids())))
    run = greedy_contiguous(errors[order] ** 2, P)
    owner = np.empty(mesh.nleaves, dtype=np.int64)
    owner[order] = run
    return HomePartition(mesh, owner, P)


def vertex_neighbours(mesh: MeshForest):
    """Padded array of leaves sharing a vertex with each leaf (self included)."""
    _, tri = mesh.vertex_table()
    nv = tri.max() + 1
    incident = [[] for _ in range(nv)]
    for k, t in enumerate(tri):
        for v in t:
            incident[v].append(k)
    nbs = []
    for t in tri:
        s = set()
        for v in t:
            s.update(incident[v])
        nbs.append(sorted(s))
    width = max(len(s) for s in nbs)
    out = np.full((len(nbs), width), -1, dtype=np.int64)
    for k, s in enumerate(nbs):
        out[k, :len(s)] = s
    return out


class PartitionOfUnity:
    """Characteristic functions ``chi_l`` over a coarse home partition."""

    def __init__(self, kind: str, partition: HomePartition):
        kind = ALIASES.get(kind, kind)
        if kind not in KINDS:
            raise ValueError(f"unknown partition-of-unity kind {kind!r}")
        self.kind = kind
        self.partition = partition
        self.mesh = partition.mesh
        self.P = partition.P
        self.owner = partition.owner
        self.neighbours = vertex_neighbours(self.mesh)
        verts, tri = self.mesh.vertex_table()
        self.vertex_ids = tri
        if kind == "C0":
            nodal = np.zeros((len(verts), self.P))
            for k, t in enumerate(tri):
                nodal[t, self.owner[k]] = 1.0
            counts = nodal.sum(axis=1, keepdims=True)
            self.nodal = nodal / counts
        elif kind == "Cinf":
            diam = self.mesh.inscribed_diameters()
            nb = self.neighbours
            d = np.where(nb >= 0, diam[np.maximum(nb, 0)], np.inf)
            self.d_min = d.min(axis=1)
            self.extended = np.array([extend_triangle(v, dm) for v, dm in zip(self.mesh.coords, self.d_min)])

    # -- support bookkeeping --------------------------------------------
    def ranks_touching(self, k: int) -> set:
        """Ranks whose chi is non-zero somewhere inside coarse element ``k``."""
        if self.kind == "discontinuous":
            return {int(self.owner[k])}
        nb = self.neighbours[k]
        return {int(self.owner[j]) for j in nb[nb >= 0]}

    def support_elements(self, l: int) -> np.ndarray:
        """Coarse elements where ``chi_l`` may be non-zero."""
        own = self.owner == l
        if self.kind == "discontinuous":
            return np.flatnonzero(own)
        nb = self.neighbours
        hit = np.zeros(len(own), dtype=bool)
        for k in np.flatnonzero(own):
            js = nb[k]
            hit[js[js >= 0]] = True
        return np.flatnonzero(hit)

    # -- evaluation -----------------------------------------------------
    def bump_weights(self, pts, coarse) -> tuple[np.ndarray, np.ndarray]:
        """Bump values ``w_j`` for the neighbour candidates of each point."""
        cand = self.neighbours[coarse]
        valid = cand >= 0
        safe = np.maximum(cand, 0)
        npts, width = cand.shape
        ext = self.extended[safe].reshape(-1, 3, 2)
        lam = _bary_many(ext, np.repeat(pts, width, axis=0)).reshape(npts, width, 3)
        inside = np.all(lam > 0, axis=-1) & valid
        prod = np.where(inside, np.prod(np.where(inside[..., None], lam, 1.0), axis=-1), 1.0)
        with np.errstate(divide="ignore", over="ignore"):
            w = np.where(inside, np.exp(-1.0 / prod ** BUMP_POWER), 0.0)
        return w, cand

    def values(self, pts, coarse=None) -> np.ndarray:
        """All ``chi_l`` at ``pts``: array ``(npts, P)``.

        ``coarse`` gives the coarse leaf containing each point when known.
        """
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        if coarse is None:
            coarse = self.mesh.locate_points(pts)
        coarse = np.asarray(coarse, dtype=np.int64)
        out = np.zeros((len(pts), self.P))
        rows = np.arange(len(pts))
        if self.kind == "discontinuous":
            out[rows, self.owner[coarse]] = 1.0
        elif self.kind == "C0":
            lam = _bary_many(self.mesh.coords[coarse], pts)
            vid = self.vertex_ids[coarse]
            out = np.einsum("ni,nip->np", lam, self.nodal[vid])
        else:
            w, cand = self.bump_weights(pts, coarse)
            den = w.sum(axis=1)
            if np.any(den <= 0):
                raise AssertionError("Shepard denominator vanished")
            owners = np.where(cand >= 0, self.owner[np.maximum(cand, 0)], 0)
            for j in range(cand.shape[1]):
                np.add.at(out, (rows, owners[:, j]), w[:, j])
            out /= den[:, None]
        return out

    def rank_values(self, l: int, pts, coarse) -> np.ndarray:
        """``chi_l`` only, at points with known coarse leaves."""
        coarse = np.asarray(coarse, dtype=np.int64)
        if self.kind == "discontinuous":
            return (self.owner[coarse] == l).astype(float)
        if self.kind == "C0":
            lam = _bary_many(self.mesh.coords[coarse], pts)
            return np.einsum("ni,ni->n", lam, self.nodal[self.vertex_ids[coarse], l])
        w, cand = self.bump_weights(pts, coarse)
        den = w.sum(axis=1)
        if np.any(den <= 0):
            raise AssertionError("Shepard denominator vanished")
        mine = (cand >= 0) & (self.owner[np.maximum(cand, 0)] == l)
        return (w * mine).sum(axis=1) / den


def chi_eval(pou: PartitionOfUnity, l: int, x) -> float:
    """``chi_l(x)``; points on coarse edges use the leaf chosen by ``locate``."""
    leaf, _ = pou.mesh.locate(x)
    return float(pou.rank_values(l, np.asarray(x, dtype=float)[None, :], np.array([leaf]))[0])


def make_pou(kind: str, partition: HomePartition) -> PartitionOfUnity:
    return PartitionOfUnity(kind, partition)
