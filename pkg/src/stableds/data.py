"""Trajectory ingestion, normalization, synthetic datasets and metrics.

Positions are kept in original task-space units (e.g. mm) until
``normalize`` maps them into [-1,1]^d; the affine map is stored so SEA and
velocity RMSE can be reported back in original units.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import ContractError, DataError


@dataclass
class Trajectory:
    dt: float
    positions: np.ndarray   # (K, d)
    velocities: np.ndarray  # (K, d)

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=np.float64)
        self.velocities = np.asarray(self.velocities, dtype=np.float64)
        if self.positions.ndim != 2 or len(self.positions) < 2:
            raise DataError("a trajectory needs at least 2 points")
        if self.positions.shape != self.velocities.shape:
            raise DataError("positions and velocities must have matching shape")
        if self.dt <= 0:
            raise DataError("dt must be positive")
        if not (np.all(np.isfinite(self.positions)) and np.all(np.isfinite(self.velocities))):
            raise DataError("NaN/inf entries in trajectory")

    @property
    def dim(self):
        return self.positions.shape[1]

    @property
    def duration(self):
        return (len(self.positions) - 1) * self.dt


@dataclass
class AffineMap:
    """x_norm = (x - offset) / scale, per dimension; velocities scale only."""

    scale: np.ndarray
    offset: np.ndarray

    def __post_init__(self):
        self.scale = np.asarray(self.scale, dtype=np.float64)
        self.offset = np.asarray(self.offset, dtype=np.float64)
        if np.any(self.scale <= 0):
            raise DataError("normalization scale must be positive")

    def forward_pos(self, x):
        return (np.asarray(x) - self.offset) / self.scale

    def forward_vel(self, v):
        return np.asarray(v) / self.scale

    def inverse_pos(self, x):
        return np.asarray(x) * self.scale + self.offset

    def inverse_vel(self, v):
        return np.asarray(v) * self.scale

    def apply(self, traj: Trajectory) -> Trajectory:
        return Trajectory(traj.dt, self.forward_pos(traj.positions),
                          self.forward_vel(traj.velocities))

    def invert(self, traj: Trajectory) -> Trajectory:
        return Trajectory(traj.dt, self.inverse_pos(traj.positions),
                          self.inverse_vel(traj.velocities))


@dataclass
class DemonstrationSet:
    trajectories: list          # normalized trajectories
    normalization: AffineMap
    kind: str                   # "p2p" | "cycle"
    raw: list = field(default_factory=list)  # original-unit trajectories

    @property
    def dim(self):
        return self.trajectories[0].dim

    def samples(self):
        """All (position, velocity) pairs, normalized, stacked."""
        xs = np.concatenate([t.positions for t in self.trajectories])
        vs = np.concatenate([t.velocities for t in self.trajectories])
        return xs, vs


@dataclass
class MetricsReport:
    sea: float
    v_rmse: float
    convergence_rate: float
    per_trajectory: list

    def to_dict(self):
        return {"sea": self.sea, "v_rmse": self.v_rmse,
                "convergence_rate": self.convergence_rate,
                "per_trajectory": self.per_trajectory}


def central_difference_velocities(positions, dt):
    """Central differences, one-sided at the endpoints; exact for quadratics
    at interior points."""
    p = np.asarray(positions, dtype=np.float64)
    v = np.empty_like(p)
    v[1:-1] = (p[2:] - p[:-2]) / (2.0 * dt)
    v[0] = (p[1] - p[0]) / dt
    v[-1] = (p[-1] - p[-2]) / dt
    return v


def ingest_csv(path) -> Trajectory:
    """Read one demonstration CSV with header t,x1..xd[,v1..vd].

    Velocities are computed by central differences when absent.  The time
    column must be uniform to 1%.
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file")
        rows = [row for row in reader if row]
    header = [h.strip() for h in header]
    if not header or header[0] != "t":
        raise DataError(f"{path}: first column must be 't'")
    xcols = [h for h in header if h.startswith("x")]
    vcols = [h for h in header if h.startswith("v")]
    d = len(xcols)
    if d == 0 or (vcols and len(vcols) != d):
        raise DataError(f"{path}: expected columns t,x1..xd[,v1..vd]")
    if len(rows) < 2:
        raise DataError(f"{path}: need at least 2 rows")
    try:
        data = np.array([[float(c) for c in row] for row in rows])
    except ValueError as e:
        raise DataError(f"{path}: {e}")
    t = data[:, 0]
    steps = np.diff(t)
    if np.any(steps <= 0):
        raise DataError(f"{path}: rows must be strictly time-ordered")
    dt = float(np.median(steps))
    bad = np.nonzero(np.abs(steps - dt) > 0.01 * dt)[0]
    if bad.size:
        raise DataError(f"{path}: non-uniform dt at row {int(bad[0]) + 2}")
    pos = data[:, 1:1 + d]
    if vcols:
        vel = data[:, 1 + d:1 + 2 * d]
    else:
        vel = central_difference_velocities(pos, dt)
    return Trajectory(dt, pos, vel)


def write_csv(path, traj: Trajectory):
    d = traj.dim
    header = ["t"] + [f"x{i+1}" for i in range(d)] + [f"v{i+1}" for i in range(d)]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for k in range(len(traj.positions)):
            row = [repr(k * traj.dt)]
            row += [repr(float(c)) for c in traj.positions[k]]
            row += [repr(float(c)) for c in traj.velocities[k]]
            w.writerow(row)


def normalize(trajectories, kind) -> DemonstrationSet:
    """Translate (p2p: common endpoint to the origin) and scale into [-1,1]^d."""
    if not trajectories:
        raise DataError("no trajectories to normalize")
    d = trajectories[0].dim
    if any(t.dim != d for t in trajectories):
        raise DataError("trajectories disagree on dimension")

    if kind == "p2p":
        finals = np.array([t.positions[-1] for t in trajectories])
        target = finals.mean(axis=0)
        all_pos = np.concatenate([t.positions for t in trajectories])
        radius = float(np.max(np.linalg.norm(all_pos - target, axis=1)))
        offenders = [i for i, f in enumerate(finals)
                     if np.linalg.norm(f - target) > 0.05 * max(radius, 1e-12)]
        if offenders:
            raise DataError(f"final points disagree beyond 5% of data radius: "
                            f"trajectories {offenders}")
        # per-trajectory endpoint translation: each demo ends exactly at 0
        shifted = [Trajectory(t.dt, t.positions - t.positions[-1], t.velocities)
                   for t in trajectories]
        scale = np.max(np.abs(np.concatenate([t.positions for t in shifted])), axis=0)
        scale = np.where(scale > 0, scale, 1.0)
        # per-trajectory endpoint residuals are removed above; the stored
        # offset is the common target so original-unit states round-trip
        amap = AffineMap(scale, target)
        normed = [Trajectory(t.dt, t.positions / scale, t.velocities / scale)
                  for t in shifted]
    elif kind == "cycle":
        all_pos = np.concatenate([t.positions for t in trajectories])
        lo, hi = all_pos.min(axis=0), all_pos.max(axis=0)
        offset = 0.5 * (lo + hi)
        scale = np.max(np.abs(all_pos - offset), axis=0)
        scale = np.where(scale > 0, scale, 1.0)
        amap = AffineMap(scale, offset)
        normed = [amap.apply(t) for t in trajectories]
    else:
        raise DataError(f"unknown kind {kind!r}")
    return DemonstrationSet(normed, amap, kind, raw=list(trajectories))


# synthetic datasets ----------------------------------------------------------

def synth_p2p(shape="s_curve", n_demos=3, noise_seed=0, n_points=200,
              duration=2.0, scale_mm=50.0) -> DemonstrationSet:
    """Closed-form point-to-point curves ending exactly at the origin."""
    rng = np.random.default_rng(noise_seed)
    trajectories = []
    dt = duration / (n_points - 1)
    for i in range(n_demos):
        amp = 0.35 + 0.1 * i
        phase = 0.3 * i
        # u runs 1 -> 0 so the endpoint is the origin
        u = np.linspace(1.0, 0.0, n_points)
        du_dt = -1.0 / duration
        if shape == "s_curve":
            xs = scale_mm * u
            ys = scale_mm * amp * np.sin(2.0 * np.pi * u + phase) * u
            dxs = scale_mm * du_dt * np.ones_like(u)
            dys = scale_mm * amp * du_dt * (
                2.0 * np.pi * np.cos(2.0 * np.pi * u + phase) * u
                + np.sin(2.0 * np.pi * u + phase))
        elif shape == "sine":
            xs = scale_mm * u
            ys = scale_mm * amp * np.sin(np.pi * u)
            dxs = scale_mm * du_dt * np.ones_like(u)
            dys = scale_mm * amp * np.pi * np.cos(np.pi * u) * du_dt
        else:
            raise DataError(f"unknown p2p shape {shape!r}")
        pos = np.stack([xs, ys], axis=1)
        # noise fades toward the endpoint so every demo still ends at 0;
        # noise_seed 0 means noiseless analytic curves
        if noise_seed:
            noise = rng.normal(0.0, 0.002 * scale_mm, size=pos.shape) * u[:, None]
            pos = pos + noise
        trajectories.append(Trajectory(dt, pos, np.stack([dxs, dys], axis=1)))
    return normalize(trajectories, "p2p")


def synth_cycle(shape="ellipse", n_periods=2, noise_seed=0, n_per_period=314,
                period=2.0 * math.pi, scale_mm=50.0) -> DemonstrationSet:
    """Parametric closed curves traversed n_periods times.

    A nonzero noise_seed adds a small seeded harmonic perturbation of the
    radius, periodic in phase so the curve still closes exactly.
    """
    rng = np.random.default_rng(noise_seed or 0)
    n = n_per_period * n_periods
    dt = period / n_per_period
    t = np.arange(n + 1) * dt
    omega = 2.0 * math.pi / period
    phi = omega * t
    if shape == "ellipse":
        xs = scale_mm * 0.9 * np.cos(phi)
        ys = scale_mm * 0.45 * np.sin(phi)
        dxs = -scale_mm * 0.9 * omega * np.sin(phi)
        dys = scale_mm * 0.45 * omega * np.cos(phi)
    elif shape == "limacon":
        a, b = 2.0, 1.0
        if a <= b:
            raise DataError("limacon requires a > b (simple closed curve)")
        r = (a + b * np.cos(phi)) / (a + b) * 0.9
        dr = -b * omega * np.sin(phi) / (a + b) * 0.9
        xs = scale_mm * r * np.cos(phi)
        ys = scale_mm * r * np.sin(phi)
        dxs = scale_mm * (dr * np.cos(phi) - r * omega * np.sin(phi))
        dys = scale_mm * (dr * np.sin(phi) + r * omega * np.cos(phi))
    else:
        raise DataError(f"unknown cycle shape {shape!r}")
    if noise_seed:
        coeffs = rng.normal(0.0, 0.01, size=3)
        bump = sum(c * np.sin((k + 2) * phi) for k, c in enumerate(coeffs))
        dbump = sum(c * (k + 2) * omega * np.cos((k + 2) * phi)
                    for k, c in enumerate(coeffs))
        # radial perturbation x' = x (1+bump): product rule keeps velocities analytic
        dxs = dxs * (1.0 + bump) + xs * dbump
        dys = dys * (1.0 + bump) + ys * dbump
        xs = xs * (1.0 + bump)
        ys = ys * (1.0 + bump)
    pos = np.stack([xs, ys], axis=1)
    vel = np.stack([dxs, dys], axis=1)
    traj = Trajectory(dt, pos, vel)
    return normalize([traj], "cycle")


# metrics ---------------------------------------------------------------------

def _triangle_area(p, q, r):
    return 0.5 * abs((q[0] - p[0]) * (r[1] - p[1]) - (r[0] - p[0]) * (q[1] - p[1]))


def sea(demo: Trajectory, repro: Trajectory) -> float:
    """Swept error area: per-step tetragon split into two unsigned triangles."""
    if len(demo.positions) != len(repro.positions):
        raise ContractError("SEA requires equal point counts")
    x = demo.positions
    y = repro.positions
    total = 0.0
    for k in range(len(x) - 1):
        total += _triangle_area(x[k], y[k], y[k + 1])
        total += _triangle_area(x[k], y[k + 1], x[k + 1])
    return total


def v_rmse(model, demo: Trajectory) -> float:
    """Velocity RMSE of the model at the demonstration's own points,
    reported in original units."""
    amap = model.normalization
    err = 0.0
    K = len(demo.positions)
    for k in range(K):
        xn = amap.forward_pos(demo.positions[k])
        vn = model.velocity(xn)
        v = amap.inverse_vel(vn)
        e = v - demo.velocities[k]
        err += float(e @ e)
    return math.sqrt(err / K)


def convergence_stats(model, starts, dt, horizon_steps):
    """Fraction of rollouts reaching the goal (p2p: ||x|| < 0.05 normalized)
    or the cycle (|g - delta| < 0.05 delta); normalized-coordinate starts."""
    distances = []
    hits = 0
    for x0 in starts:
        x = np.asarray(x0, dtype=np.float64).copy()
        for _ in range(horizon_steps):
            x = x + dt * model.velocity(x)
        if model.kind == "p2p":
            dist = float(np.linalg.norm(x))
            ok = dist < 0.05
        else:
            dist = abs(model.g_value(x) - model.constants.delta)
            ok = dist < 0.05 * model.constants.delta
        distances.append(dist)
        hits += ok
    return hits / len(distances), distances
