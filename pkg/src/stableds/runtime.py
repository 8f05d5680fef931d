"""Model persistence, numerical integration, field export and SVG plots.

Model files are JSON; parameters are serialized through Python float repr,
which round-trips binary64 exactly, so a reloaded model evaluates
bit-identically.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .autodiff import ParamVector
from .cycle import CycleModel
from .data import AffineMap, Trajectory
from .errors import ConfigError, DataError, NumericError
from .networks import MlpSpec, ModelConstants
from .p2p import NET_NAMES, P2pModel

FORMAT_VERSION = 1
DIVERGENCE_BOX = 10.0  # normalized coordinates


# persistence -----------------------------------------------------------------

def model_to_dict(model):
    nets = {}
    for name in NET_NAMES:
        spec = model.specs[name]
        nets[name] = {
            "spec": {"input_dim": spec.input_dim, "hidden": list(spec.hidden),
                     "output_dim": spec.output_dim, "output_head": spec.output_head},
            "params": [float(v) for v in model.params[name].values],
        }
    return {
        "format_version": FORMAT_VERSION,
        "kind": model.kind,
        "dim": model.dim,
        "nets": nets,
        "constants": model.constants.to_dict(),
        "normalization": None if model.normalization is None else {
            "scale": [float(v) for v in model.normalization.scale],
            "offset": [float(v) for v in model.normalization.offset],
        },
        "train_config": model.train_config,
        "rng": {"algorithm": "numpy-default_rng-PCG64", "seed": model.rng_seed},
    }


def save_model(model, path):
    with open(path, "w") as fh:
        json.dump(model_to_dict(model), fh, indent=1)
        fh.write("\n")


def load_model(path):
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("format_version") != FORMAT_VERSION:
        raise DataError(f"unknown model format_version {doc.get('format_version')!r}")
    specs, params = {}, {}
    for name in NET_NAMES:
        net = doc["nets"][name]
        spec = MlpSpec(net["spec"]["input_dim"], tuple(net["spec"]["hidden"]),
                       net["spec"]["output_dim"], net["spec"]["output_head"])
        specs[name] = spec
        layout = []
        off = 0
        for seg_name, shape in spec.layout():
            layout.append((seg_name, off, shape))
            off += int(np.prod(shape))
        values = np.array(net["params"], dtype=np.float64)
        params[name] = ParamVector(values, layout)
    constants = ModelConstants(**doc["constants"])
    cls = P2pModel if doc["kind"] == "p2p" else CycleModel
    model = cls(specs, params, constants)
    if doc.get("normalization"):
        model.normalization = AffineMap(np.array(doc["normalization"]["scale"]),
                                        np.array(doc["normalization"]["offset"]))
    model.train_config = doc.get("train_config")
    model.rng_seed = (doc.get("rng") or {}).get("seed")
    return model


# integration -----------------------------------------------------------------

@dataclass
class RolloutSpec:
    start: np.ndarray            # original units
    dt: float
    steps: int
    integrator: str = "euler"
    perturbations: list = field(default_factory=list)  # (step, displacement) pairs

    def __post_init__(self):
        if self.dt <= 0:
            raise ConfigError("dt must be positive")
        if self.steps < 1:
            raise ConfigError("steps must be >= 1")
        if self.integrator not in ("euler", "rk4"):
            raise ConfigError(f"unknown integrator {self.integrator!r}")


def rollout(model, spec: RolloutSpec) -> Trajectory:
    """Integrate the model field; start and output are in original units,
    perturbation displacements in normalized units, applied to the state
    before the field is evaluated at that step."""
    amap = model.normalization
    if amap is None:
        amap = AffineMap(np.ones(model.dim), np.zeros(model.dim))
    x = np.asarray(amap.forward_pos(np.asarray(spec.start, dtype=np.float64)))
    perturb = {int(k): np.asarray(d, dtype=np.float64) for k, d in spec.perturbations}
    dt = spec.dt
    positions = [x.copy()]
    velocities = []
    for k in range(spec.steps):
        if k in perturb:
            x = x + perturb[k]
        v = model.velocity(x)
        if spec.integrator == "rk4":
            k1 = v
            k2 = model.velocity(x + 0.5 * dt * k1)
            k3 = model.velocity(x + 0.5 * dt * k2)
            k4 = model.velocity(x + dt * k3)
            step = (k1 + 2.0 * k2 + 2.0 * k3 + k4) / 6.0
        else:
            step = v
        velocities.append(v)
        x = x + dt * step
        if np.any(np.abs(x) > DIVERGENCE_BOX):
            raise NumericError(f"rollout diverged at step {k}: |x| > {DIVERGENCE_BOX}")
        positions.append(x.copy())
    velocities.append(model.velocity(x))
    pos = np.array(positions)
    vel = np.array(velocities)
    return Trajectory(dt, amap.inverse_pos(pos), amap.inverse_vel(vel))


def field_grid(model, resolution, bounds):
    """Sample the field on an n x n grid over original-unit bounds.

    Returns header and rows: x1,x2,dx1,dx2,V[,T] in original units (V and
    T are evaluated in normalized coordinates).
    """
    if resolution < 2:
        raise ConfigError("grid resolution must be >= 2")
    if model.dim != 2:
        raise DataError("field grids are 2-D only")
    (x1min, x1max), (x2min, x2max) = bounds
    amap = model.normalization
    if amap is None:
        amap = AffineMap(np.ones(2), np.zeros(2))
    header = ["x1", "x2", "dx1", "dx2", "V"] + (["T"] if model.kind == "cycle" else [])
    rows = []
    for x2 in np.linspace(x2min, x2max, resolution):
        for x1 in np.linspace(x1min, x1max, resolution):
            xo = np.array([x1, x2])
            xn = amap.forward_pos(xo)
            if model.kind == "cycle":
                report, vn = model.gate(xn)
                g = model.g_value(xn)
                V = 0.5 * (g - model.constants.delta) ** 2
                extra = [report.T_value]
            else:
                vn = model.velocity(xn)
                V = model.lyapunov(xn)
                extra = []
            vo = amap.inverse_vel(vn)
            rows.append([x1, x2, vo[0], vo[1], V] + extra)
    return header, rows


def write_grid_csv(path, header, rows):
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")


# SVG export ------------------------------------------------------------------

@dataclass
class PlotStyle:
    width: int = 640
    height: int = 640
    margin: float = 30.0
    demo_color: str = "#888888"
    repro_color: str = "#cc2222"
    field_color: str = "#4477aa"
    target_color: str = "#000000"


def _fmt(v):
    return f"{v:.3f}"


def plot_svg(demos=None, repros=None, field_rows=None, style=None) -> str:
    """Standalone SVG: demonstrations dotted, reproductions solid, field as
    arrow glyphs, target as a dot.  Deterministic for identical input."""
    demos = demos or []
    repros = repros or []
    field_rows = field_rows or []
    style = style or PlotStyle()

    pts = []
    for t in list(demos) + list(repros):
        if t.dim != 2:
            raise DataError("plotting is 2-D only")
        pts.append(t.positions)
    if field_rows:
        pts.append(np.array([[r[0], r[1]] for r in field_rows]))
    if not pts:
        raise DataError("nothing to plot")
    allp = np.concatenate(pts)
    lo, hi = allp.min(axis=0), allp.max(axis=0)
    span = np.where(hi - lo > 0, hi - lo, 1.0)

    W, H, M = style.width, style.height, style.margin

    def to_px(p):
        x = M + (p[0] - lo[0]) / span[0] * (W - 2 * M)
        y = H - M - (p[1] - lo[1]) / span[1] * (H - 2 * M)
        return x, y

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" '
           f'viewBox="0 0 {W} {H}">',
           f'<rect width="{W}" height="{H}" fill="#ffffff"/>']

    arrow_len = 0.35 * min((W - 2 * M) / max(1, int(np.sqrt(len(field_rows))) - 1) if field_rows else 1.0,
                           (H - 2 * M) / max(1, int(np.sqrt(len(field_rows))) - 1) if field_rows else 1.0)
    for r in field_rows:
        x, y = to_px((r[0], r[1]))
        v = np.array([r[2], -r[3]])  # y axis flips
        nv = np.linalg.norm(v)
        if nv == 0:
            continue
        v = v / nv * arrow_len
        out.append(f'<line class="arrow" x1="{_fmt(x)}" y1="{_fmt(y)}" '
                   f'x2="{_fmt(x + v[0])}" y2="{_fmt(y + v[1])}" '
                   f'stroke="{style.field_color}" stroke-width="1"/>')

    def polyline(traj, color, dashed):
        p = " ".join(f"{_fmt(px)},{_fmt(py)}" for px, py in map(to_px, traj.positions))
        dash = ' stroke-dasharray="4 4"' if dashed else ""
        return (f'<polyline points="{p}" fill="none" stroke="{color}" '
                f'stroke-width="2"{dash}/>')

    for t in demos:
        out.append(polyline(t, style.demo_color, dashed=True))
    for t in repros:
        out.append(polyline(t, style.repro_color, dashed=False))

    if demos or repros:
        # target marker: the common demo endpoint (or repro endpoint)
        ref = (demos or repros)[0]
        tx, ty = to_px(ref.positions[-1])
        out.append(f'<circle cx="{_fmt(tx)}" cy="{_fmt(ty)}" r="4" '
                   f'fill="{style.target_color}"/>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
