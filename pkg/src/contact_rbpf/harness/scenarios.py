"""Scenario definitions and config loading.

Config files are TOML with a top-level ``scenario`` name and optional
tables ``[params]`` (geometry and schedule), ``[noise]`` (measurement and
process noise) and ``[filter]`` (particle filter settings). Any key left
out takes the default below.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

import numpy as np

from ..bodies import box, rotation, triangle

SCENARIOS = ("block_wall", "gripper_triangle")


class ConfigError(ValueError):
    pass


@dataclass
class Keyframes:
    """Piecewise scripted pose of a kinematic body.

    ``frames`` is a list of (step, pose, pivot) with pose (x, y, theta);
    between frames the angle is interpolated linearly and, when the later
    frame has a pivot, the body turns rigidly about that world point.
    """

    frames: list

    def pose(self, k: int) -> np.ndarray:
        fr = self.frames
        if k <= fr[0][0]:
            return np.array(fr[0][1], dtype=float)
        for (k0, p0, _), (k1, p1, pivot) in zip(fr, fr[1:]):
            if k <= k1:
                s = (k - k0) / (k1 - k0)
                p0 = np.asarray(p0, dtype=float)
                p1 = np.asarray(p1, dtype=float)
                if pivot is None:
                    return p0 + s * (p1 - p0)
                th = p0[2] + s * (p1[2] - p0[2])
                c = np.asarray(pivot) + rotation(th - p0[2]) @ (p0[:2] - np.asarray(pivot))
                return np.array([c[0], c[1], th])
        return np.array(fr[-1][1], dtype=float)

    def velocity(self, k: int, h: float) -> np.ndarray:
        """Velocity over step k -> k+1; exact rigid rotation on pivot segments."""
        fr = self.frames
        for (k0, p0, _), (k1, p1, pivot) in zip(fr, fr[1:]):
            if k0 <= k < k1:
                if pivot is None:
                    return (np.asarray(p1, dtype=float) - np.asarray(p0, dtype=float)) / ((k1 - k0) * h)
                w = (p1[2] - p0[2]) / ((k1 - k0) * h)
                c = self.pose(k)
                r = c[:2] - np.asarray(pivot)
                return np.array([-w * r[1], w * r[0], w])
        return np.zeros(3)


@dataclass
class Scenario:
    name: str
    bodies: list
    h: float
    n_steps: int
    forces: dict                     # body id -> wrench, constant
    gravity: tuple = (0.0, 0.0)
    scripted: dict = field(default_factory=dict)   # body id -> Keyframes
    sigma_pos: float = 0.01
    sigma_theta: float = 0.01
    sigma_v: float = 1.0             # process noise std on each velocity component (per step)
    sigma_omega: float = 1.0
    n_particles: int = 50
    seed: int = 0
    init_sigma_pos: float = 0.01
    init_sigma_v: float = 0.1
    resample_threshold: float = 0.5
    W: str = "prior_inverse"
    likelihood: str = "predictive"
    margin: float = 0.01
    # step windows for the metrics: name -> (start, stop)
    windows: dict = field(default_factory=dict)
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.n_steps < 1:
            raise ConfigError("n_steps must be >= 1")
        if not self.h > 0:
            raise ConfigError("h must be positive")

    @property
    def tracked(self) -> list:
        return [b.id for b in self.bodies if not b.is_static]

    def R_diag(self) -> np.ndarray:
        return np.tile([self.sigma_pos ** 2, self.sigma_pos ** 2, self.sigma_theta ** 2],
                       len(self.tracked))

    def Q_diag(self) -> np.ndarray:
        return np.tile([self.sigma_v ** 2, self.sigma_v ** 2, self.sigma_omega ** 2],
                       len(self.tracked))

    def bodies_at(self, k: int, bodies) -> list:
        """Apply the scripted poses/velocities of kinematic bodies at step k."""
        out = []
        for b in bodies:
            kf = self.scripted.get(b.id)
            if kf is None:
                out.append(b)
                continue
            out.append(b.moved(pose=kf.pose(k), velocity=kf.velocity(k, self.h)))
        return out


BLOCK_WALL = dict(size=1.0, mass=1.0, mu=0.5, theta0=0.04, force_x=1.0, force_y=0.3,
                  gap0=0.32, wall_width=1.0, wall_height=6.0, h=0.01, n_steps=300, gravity=0.0)

GRIPPER = dict(base=1.0, height=0.8, mass=1.0, mu=0.5, push=0.2, gap_upper=0.4, h=0.01,
               n_steps=1400, finger_width=2.0, finger_height=0.4, finger_tilt=0.15,
               lower_gap=0.6, touch_step=950, flush_step=1000, flush_gap=1e-5, gravity=0.0)

NOISE = dict(sigma_pos=0.01, sigma_theta=0.01, sigma_v=None, sigma_omega=None,
             init_sigma_pos=0.01, init_sigma_v=0.1)
PROCESS_DEFAULTS = {"block_wall": (0.3, 0.6), "gripper_triangle": (2.5, 5.0)}

FILTER = dict(particles=50, resample_threshold=0.5, W="prior_inverse", likelihood="predictive",
              margin=0.01, seed=0)


def _merge(defaults, given, table):
    unknown = set(given) - set(defaults)
    if unknown:
        raise ConfigError(f"unknown key(s) in [{table}]: {', '.join(sorted(unknown))}")
    out = dict(defaults)
    out.update(given)
    return out


def block_wall(params=None) -> tuple:
    p = _merge(BLOCK_WALL, params or {}, "params")
    s = p["size"]
    block = box(1, s, s, mass=p["mass"], pose=(0.0, 0.0, p["theta0"]), friction=p["mu"], name="block")
    reach = np.max(block.world_vertices()[:, 0])
    face = reach + p["gap0"]
    wall = box(0, p["wall_width"], p["wall_height"], pose=(face + 0.5 * p["wall_width"], 0.0, 0.0),
               is_static=True, friction=p["mu"], name="wall")
    forces = {1: np.array([p["force_x"], p["force_y"], 0.0])}
    return [wall, block], forces, {}, p


def gripper_triangle(params=None) -> tuple:
    p = _merge(GRIPPER, params or {}, "params")
    tri = triangle(2, p["base"], p["height"], mass=p["mass"], friction=p["mu"], name="object")
    apex_y = 2.0 * p["height"] / 3.0
    fh, fw = p["finger_height"], p["finger_width"]
    upper = box(0, fw, fh, pose=(0.0, apex_y + p["gap_upper"] + 0.5 * fh, 0.0), is_static=True,
                friction=p["mu"], name="upper_finger")
    # the object reaches the upper finger after rising gap_upper; its rest pose
    y_rest = p["gap_upper"]
    base_y = y_rest - p["height"] / 3.0
    v_left = np.array([-0.5 * p["base"], base_y])
    tilt = p["finger_tilt"]
    # lower finger: top face sloping down towards +x so that it meets the left
    # base vertex first; the face point at local x = -base/2 lands on that vertex
    local = np.array([-0.5 * p["base"], 0.5 * fh])
    c_touch = v_left - rotation(-tilt) @ local
    c_start = c_touch - np.array([0.0, p["lower_gap"]])
    # turning about the vertex by +tilt lays the face flat against the base; the
    # turn stops flush_gap short at the far vertex (the object is held, so an
    # exactly closing scripted face would jam it)
    turn = tilt - math.asin(p["flush_gap"] / p["base"])
    c_flush = v_left + rotation(turn) @ (c_touch - v_left)
    kf = Keyframes([(0, (c_start[0], c_start[1], -tilt), None),
                    (p["touch_step"], (c_touch[0], c_touch[1], -tilt), None),
                    (p["flush_step"], (c_flush[0], c_flush[1], turn - tilt), tuple(v_left))])
    lower = box(1, fw, fh, pose=kf.pose(0), is_static=True, friction=p["mu"], name="lower_finger")
    forces = {2: np.array([0.0, p["push"], 0.0])}
    return [upper, lower, tri], forces, {1: kf}, p


BUILDERS = {"block_wall": block_wall, "gripper_triangle": gripper_triangle}


def build_scenario(name: str, params=None, noise=None, filt=None) -> Scenario:
    if name not in BUILDERS:
        raise ConfigError(f"unknown scenario {name!r}; expected one of {', '.join(SCENARIOS)}")
    bodies, forces, scripted, p = BUILDERS[name](params)
    nz = _merge(NOISE, noise or {}, "noise")
    fl = _merge(FILTER, filt or {}, "filter")
    sv, so = PROCESS_DEFAULTS[name]
    sc = Scenario(name=name, bodies=bodies, h=float(p["h"]), n_steps=int(p["n_steps"]), forces=forces,
                  scripted=scripted, gravity=(0.0, -float(p["gravity"])), sigma_pos=float(nz["sigma_pos"]), sigma_theta=float(nz["sigma_theta"]),
                  sigma_v=float(sv if nz["sigma_v"] is None else nz["sigma_v"]),
                  sigma_omega=float(so if nz["sigma_omega"] is None else nz["sigma_omega"]),
                  init_sigma_pos=float(nz["init_sigma_pos"]), init_sigma_v=float(nz["init_sigma_v"]),
                  n_particles=int(fl["particles"]), seed=int(fl["seed"]),
                  resample_threshold=float(fl["resample_threshold"]), W=str(fl["W"]),
                  likelihood=str(fl["likelihood"]), margin=float(fl["margin"]), params=p)
    if name == "gripper_triangle":
        sc.windows = {"pre_grasp": (0, int(p["touch_step"])),
                      "grasped": (int(p["flush_step"]), sc.n_steps)}
    if sc.n_particles < 1:
        raise ConfigError("particles must be >= 1")
    return sc


def load_config(path) -> Scenario:
    try:
        with open(path, "rb") as fh:
            cfg = tomllib.load(fh)
    except (OSError, tomllib.TOMLDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return scenario_from_dict(cfg)


def scenario_from_dict(cfg: dict) -> Scenario:
    unknown = set(cfg) - {"scenario", "params", "noise", "filter"}
    if unknown:
        raise ConfigError(f"unknown top-level key(s): {', '.join(sorted(unknown))}")
    if "scenario" not in cfg:
        raise ConfigError("config needs a 'scenario' name")
    if not isinstance(cfg["scenario"], str):
        raise ConfigError("'scenario' must be a string such as \"block_wall\"")
    for t in ("params", "noise", "filter"):
        if not isinstance(cfg.get(t, {}), dict):
            raise ConfigError(f"[{t}] must be a table")
    try:
        return build_scenario(cfg["scenario"], cfg.get("params"), cfg.get("noise"), cfg.get("filter"))
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from exc


def scenario_config(sc: Scenario) -> dict:
    """The config dict that rebuilds ``sc`` (echoed into reports)."""
    return {"scenario": sc.name,
            "params": dict(sc.params),
            "noise": {"sigma_pos": sc.sigma_pos, "sigma_theta": sc.sigma_theta, "sigma_v": sc.sigma_v,
                      "sigma_omega": sc.sigma_omega, "init_sigma_pos": sc.init_sigma_pos,
                      "init_sigma_v": sc.init_sigma_v},
            "filter": {"particles": sc.n_particles, "resample_threshold": sc.resample_threshold,
                       "W": sc.W, "likelihood": sc.likelihood, "margin": sc.margin, "seed": sc.seed}}


def resolve_scenario(spec: str) -> Scenario:
    """A built-in scenario name or the path of a TOML config."""
    if spec in BUILDERS:
        return build_scenario(spec)
    return load_config(spec)
