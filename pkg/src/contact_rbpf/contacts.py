"""Vertex/edge contact candidates between convex polygons."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .bodies import RigidBody2D, check_convex_ccw


@dataclass(frozen=True)
class ContactCandidate:
    """One vertex of ``body_a`` against one edge of ``body_b``.

    The normal is the outward normal of the edge, so it points from b into a.
    ``gap`` is signed (negative means penetration).
    """

    id: int
    body_a: int
    body_b: int
    vertex: int
    edge: int
    point: np.ndarray
    normal: np.ndarray
    gap: float
    mu: float

    @property
    def tangent(self) -> np.ndarray:
        return np.array([-self.normal[1], self.normal[0]])

    @property
    def key(self) -> tuple:
        """Feature-pair identity, stable across steps."""
        return (self.body_a, self.body_b, self.vertex, self.edge)


def pair_friction(a: RigidBody2D, b: RigidBody2D) -> float:
    return math.sqrt(a.friction * b.friction)


def _world(body: RigidBody2D, pose: np.ndarray):
    """Vertices, unit edge directions and outward normals for stacked poses (n, 3)."""
    c, s = np.cos(pose[:, 2]), np.sin(pose[:, 2])
    R = np.stack([np.stack([c, -s], -1), np.stack([s, c], -1)], -2)      # (n, 2, 2)
    d, nrm, _, _ = body._edges
    verts = np.einsum("nij,kj->nki", R, body.vertices) + pose[:, None, :2]
    return verts, np.einsum("nij,kj->nki", R, d), np.einsum("nij,kj->nki", R, nrm)


def _vertex_edge(a, b, pa, pb, margin, rows, out) -> None:
    """Vertices of ``a`` against edges of ``b`` for the particles in ``rows``."""
    va, _, _ = _world(a, pa)
    vb, d, nrm = _world(b, pb)
    lengths = b._edges[2]
    # signed distance of every vertex of a to every edge line of b
    dist = np.einsum("nik,njk->nij", va, nrm) - np.einsum("njk,njk->nj", vb, nrm)[:, None, :]
    best = dist.argmax(axis=2)
    bd = np.take_along_axis(dist, best[:, :, None], axis=2)[:, :, 0]
    mu = pair_friction(a, b)
    for r, i in zip(*np.nonzero(bd < margin)):
        j = best[r, i]
        s = (va[r, i] - vb[r, j]) @ d[r, j]
        if s < -1e-9 or s > lengths[j] + 1e-9:
            continue
        out[rows[r]].append((a.id, b.id, int(i), int(j), va[r, i].copy(), nrm[r, j].copy(),
                             float(bd[r, i]), mu))


def detect_contacts_batch(bodies, poses: dict, margin: float = 0.01, static_only: bool = False):
    """Candidates for many configurations at once.

    ``poses`` maps body id to an (n, 3) array of poses; bodies not in it keep
    their own pose. With ``static_only`` only pairs involving a static body
    are checked. Returns one candidate list per configuration.
    """
    n = len(next(iter(poses.values()))) if poses else 1
    P = {b.id: np.asarray(poses[b.id], dtype=float) if b.id in poses else np.tile(b.pose, (n, 1))
         for b in bodies}
    found = [[] for _ in range(n)]
    for a in bodies:
        for b in bodies:
            if a is b or (a.is_static and b.is_static):
                continue
            if static_only and not (a.is_static or b.is_static):
                continue
            pa, pb = P[a.id], P[b.id]
            # cheap bounding-circle rejection
            dc = np.hypot(pa[:, 0] - pb[:, 0], pa[:, 1] - pb[:, 1])
            rows = np.flatnonzero(dc <= a.radius + b.radius + margin)
            if rows.size:
                _vertex_edge(a, b, pa[rows], pb[rows], margin, rows, found)
    out = []
    for f in found:
        f.sort(key=lambda c: c[:4])
        out.append([ContactCandidate(k, *c) for k, c in enumerate(f)])
    return out


def detect_contacts(bodies, margin: float = 0.01, validate: bool = True) -> list[ContactCandidate]:
    """Return vertex-edge candidates with signed gap below ``margin``.

    Candidates are ordered by (body_a, body_b, vertex, edge) and numbered in
    that order. Raises ValueError on a non-convex or clockwise polygon.
    """
    if validate:
        for b in bodies:
            check_convex_ccw(b.vertices)
    return detect_contacts_batch(bodies, {}, margin)[0]


def min_gap(bodies, body_id: int, margin: float = 0.05) -> float:
    """Smallest signed gap involving ``body_id`` (``margin`` if nothing is near)."""
    gaps = [c.gap for c in detect_contacts(bodies, margin, validate=False)
            if body_id in (c.body_a, c.body_b)]
    return min(gaps) if gaps else margin
