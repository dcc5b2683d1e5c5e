"""Planar rigid bodies with convex polygon shapes."""
from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np


def _as_vec(x, n):
    a = np.asarray(x, dtype=float).reshape(-1)
    if a.shape != (n,):
        raise ValueError(f"expected a {n}-vector, got shape {a.shape}")
    return a


def check_convex_ccw(vertices: np.ndarray) -> None:
    """Raise ValueError unless the polygon is counter-clockwise and strictly convex."""
    v = np.asarray(vertices, dtype=float)
    if v.ndim != 2 or v.shape[1] != 2 or v.shape[0] < 3:
        raise ValueError("polygon needs at least 3 vertices of shape (k, 2)")
    e = np.roll(v, -1, axis=0) - v
    e_next = np.roll(e, -1, axis=0)
    cross = e[:, 0] * e_next[:, 1] - e[:, 1] * e_next[:, 0]
    if np.any(cross <= 0.0):
        raise ValueError("polygon must be strictly convex with counter-clockwise vertices")


def rotation(theta: float) -> np.ndarray:
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s], [s, c]])


@dataclass
class RigidBody2D:
    """A rigid polygon in the plane.

    ``pose`` is (x, y, theta) of the centre of mass and ``velocity`` is
    (vx, vy, omega). Static bodies carry no degrees of freedom; a static body
    with nonzero velocity is kinematically scripted (infinite mass).
    """

    id: int
    mass: float
    inertia: float
    pose: np.ndarray
    velocity: np.ndarray
    vertices: np.ndarray
    is_static: bool = False
    friction: float = 0.5
    name: str = ""
    _world_cache: tuple = field(default=None, repr=False, compare=False)
    _edges: tuple = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.pose = _as_vec(self.pose, 3)
        self.velocity = _as_vec(self.velocity, 3)
        self.vertices = np.asarray(self.vertices, dtype=float)
        check_convex_ccw(self.vertices)
        if self.friction < 0:
            raise ValueError("friction coefficient must be non-negative")
        if not self.is_static and (self.mass <= 0 or self.inertia <= 0):
            raise ValueError(f"body {self.id}: mass and inertia must be positive")
        v = self.vertices
        e = np.roll(v, -1, axis=0) - v
        lengths = np.hypot(e[:, 0], e[:, 1])
        d = e / lengths[:, None]
        # body-frame unit edge directions, outward normals, lengths, bounding radius
        self._edges = (d, np.column_stack([d[:, 1], -d[:, 0]]), lengths,
                       float(np.max(np.hypot(v[:, 0], v[:, 1]))))

    @property
    def radius(self) -> float:
        return self._edges[3]

    def world_edges(self):
        """Unit edge directions, outward normals and lengths in the world frame."""
        R = rotation(self.pose[2])
        d, n, lengths, _ = self._edges
        return d @ R.T, n @ R.T, lengths

    def world_vertices(self) -> np.ndarray:
        key = (self.pose[0], self.pose[1], self.pose[2])
        if self._world_cache is not None and self._world_cache[0] == key:
            return self._world_cache[1]
        w = self.vertices @ rotation(self.pose[2]).T + self.pose[:2]
        self._world_cache = (key, w)
        return w

    def point_velocity(self, p: np.ndarray) -> np.ndarray:
        r = p - self.pose[:2]
        vx, vy, w = self.velocity
        return np.array([vx - w * r[1], vy + w * r[0]])

    def mass_block(self) -> np.ndarray:
        return np.diag([self.mass, self.mass, self.inertia])

    def moved(self, pose=None, velocity=None) -> "RigidBody2D":
        """Copy with a new pose and/or velocity (shape is shared)."""
        out = copy.copy(self)
        out.pose = self.pose.copy() if pose is None else _as_vec(pose, 3)
        out.velocity = self.velocity.copy() if velocity is None else _as_vec(velocity, 3)
        out._world_cache = None
        return out


def box(id, width, height, mass=1.0, pose=(0.0, 0.0, 0.0), velocity=(0.0, 0.0, 0.0),
        is_static=False, friction=0.5, name="") -> RigidBody2D:
    hw, hh = 0.5 * width, 0.5 * height
    verts = np.array([[-hw, -hh], [hw, -hh], [hw, hh], [-hw, hh]])
    inertia = mass * (width**2 + height**2) / 12.0 if not is_static else np.inf
    return RigidBody2D(id, mass if not is_static else np.inf, inertia, pose, velocity, verts,
                       is_static=is_static, friction=friction, name=name)


def triangle(id, base, height, mass=1.0, pose=(0.0, 0.0, 0.0), velocity=(0.0, 0.0, 0.0),
             friction=0.5, name="") -> RigidBody2D:
    """Isosceles triangle, apex up, vertices given about the centroid."""
    verts = np.array([[-base / 2, -height / 3], [base / 2, -height / 3], [0.0, 2 * height / 3]])
    # polar moment of a triangle about its centroid: m (a^2 + b^2 + c^2) / 36
    sides = np.linalg.norm(np.roll(verts, -1, axis=0) - verts, axis=1)
    inertia = mass * np.sum(sides**2) / 36.0
    return RigidBody2D(id, mass, inertia, pose, velocity, verts, friction=friction, name=name)


def dynamic_bodies(bodies) -> list[RigidBody2D]:
    return [b for b in bodies if not b.is_static]
