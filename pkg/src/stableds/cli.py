"""Command-line surface.

Subcommands: convert, train, rollout, eval, field, plot.
Exit codes: 0 success, 1 usage error, 2 data/contract error, 3 numerical
divergence.  STABLEDS_CONFIG names a default training config file.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import data as dm
from . import runtime
from .errors import ConfigError, ContractError, DataError, NumericError
from .train import TrainConfig, train

MANIFEST_VERSION = 1


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage errors exit 1, not argparse's 2
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        sys.exit(1)


def _load_manifest(path):
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("format_version") != MANIFEST_VERSION:
        raise DataError(f"unknown manifest format_version {doc.get('format_version')!r}")
    base = os.path.dirname(os.path.abspath(path))
    trajs = [dm.ingest_csv(os.path.join(base, p)) for p in doc["trajectories"]]
    return dm.normalize(trajs, doc["kind"]), doc


def _parse_vec(text):
    try:
        return np.array([float(v) for v in text.split(",")])
    except ValueError:
        raise ConfigError(f"expected comma-separated numbers, got {text!r}")


def cmd_convert(args):
    out_dir = os.path.dirname(os.path.abspath(args.output))
    rel = [os.path.relpath(os.path.abspath(p), out_dir) for p in args.csvs]
    trajs = [dm.ingest_csv(p) for p in args.csvs]
    dm.normalize(trajs, args.kind)  # validates endpoint agreement up front
    doc = {"format_version": MANIFEST_VERSION, "kind": args.kind,
           "trajectories": rel, "normalization_policy":
           "translate-common-endpoint+per-dim-max" if args.kind == "p2p"
           else "center-midrange+per-dim-max"}
    with open(args.output, "w") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")
    return 0


def cmd_train(args):
    dataset, doc = _load_manifest(args.manifest)
    cfg_path = args.config or os.environ.get("STABLEDS_CONFIG")
    cfg = TrainConfig.from_file(cfg_path) if cfg_path else TrainConfig()
    overrides = {}
    for name in ("seed", "iterations", "lr", "batch_size"):
        val = getattr(args, name)
        if val is not None:
            overrides[{"iterations": "max_iterations", "lr": "learning_rate"}.get(name, name)] = val
    if overrides or cfg.kind != doc["kind"]:
        d = cfg.to_dict()
        d.update(overrides)
        d["kind"] = doc["kind"]
        cfg = TrainConfig(**d)
    model, record = train(dataset, cfg)
    if record.aborted:
        print(f"training aborted: {record.abort_reason}", file=sys.stderr)
    runtime.save_model(model, args.output)
    if args.record:
        with open(args.record, "w") as fh:
            json.dump({"losses": record.losses, "learning_rates": record.learning_rates,
                       "wall_time": record.wall_time, "aborted": record.aborted,
                       "abort_reason": record.abort_reason}, fh, indent=1)
            fh.write("\n")
    if record.aborted:
        return 3
    print(f"trained {cfg.kind} model: final loss "
          f"{record.losses[-1] if record.losses else float('nan'):.6g}, "
          f"{len(record.losses)} iterations, {record.wall_time:.1f}s")
    return 0


def cmd_rollout(args):
    if args.steps < 1 or args.dt <= 0:
        print("error: --steps must be >= 1 and --dt positive", file=sys.stderr)
        return 1
    model = runtime.load_model(args.model)
    perturbations = []
    for p in args.perturb or []:
        step, disp = p.split(":", 1)
        perturbations.append((int(step), _parse_vec(disp)))
    spec = runtime.RolloutSpec(start=_parse_vec(args.start), dt=args.dt,
                               steps=args.steps, integrator=args.integrator,
                               perturbations=perturbations)
    traj = runtime.rollout(model, spec)
    dm.write_csv(args.output, traj)
    return 0


def cmd_eval(args):
    model = runtime.load_model(args.model)
    dataset, doc = _load_manifest(args.manifest)
    per_traj = []
    seas, rmses = [], []
    converged = 0
    for i, raw in enumerate(dataset.raw):
        steps = len(raw.positions) - 1
        spec = runtime.RolloutSpec(start=raw.positions[0], dt=raw.dt, steps=steps)
        repro = runtime.rollout(model, spec)
        s = dm.sea(raw, repro)
        r = dm.v_rmse(model, raw)
        seas.append(s)
        rmses.append(r)
        xn = model.normalization.forward_pos(repro.positions[-1])
        if model.kind == "p2p":
            ok = bool(np.linalg.norm(xn) < 0.05)
        else:
            ok = bool(abs(model.g_value(xn) - model.constants.delta)
                      < 0.05 * model.constants.delta)
        converged += ok
        per_traj.append({"index": i, "sea": s, "v_rmse": r, "converged": ok})
    report = dm.MetricsReport(float(np.mean(seas)), float(np.mean(rmses)),
                              converged / len(per_traj), per_traj)
    doc = report.to_dict()
    text = json.dumps(doc, indent=1) + "\n"
    if args.output:
        with open(args.output, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return 0


def cmd_field(args):
    model = runtime.load_model(args.model)
    b = _parse_vec(args.bounds)
    if b.size != 4:
        raise ConfigError("--bounds needs x1min,x1max,x2min,x2max")
    header, rows = runtime.field_grid(model, args.grid, ((b[0], b[1]), (b[2], b[3])))
    runtime.write_grid_csv(args.output, header, rows)
    return 0


def cmd_plot(args):
    demos = [dm.ingest_csv(p) for p in args.demo or []]
    repros = [dm.ingest_csv(p) for p in args.repro or []]
    field_rows = []
    if args.field:
        with open(args.field) as fh:
            next(fh)
            for line in fh:
                field_rows.append([float(v) for v in line.strip().split(",")])
    svg = runtime.plot_svg(demos, repros, field_rows)
    with open(args.output, "w") as fh:
        fh.write(svg)
    return 0


def build_parser():
    p = _Parser(prog="stableds",
                description="Stable motion learning: train, roll out, "
                            "evaluate and plot learned vector fields.")
    sub = p.add_subparsers(dest="command", required=True)

    c = sub.add_parser("convert", help="CSV demonstrations -> dataset manifest")
    c.add_argument("csvs", nargs="+")
    c.add_argument("--kind", choices=("p2p", "cycle"), required=True)
    c.add_argument("-o", "--output", required=True)
    c.set_defaults(fn=cmd_convert)

    c = sub.add_parser("train", help="manifest + config -> model file")
    c.add_argument("--manifest", required=True)
    c.add_argument("--config", help="key=value config file")
    c.add_argument("--seed", type=int)
    c.add_argument("--iterations", type=int)
    c.add_argument("--lr", type=float)
    c.add_argument("--batch-size", dest="batch_size", type=int)
    c.add_argument("-o", "--output", required=True)
    c.add_argument("--record", help="write the per-iteration train record JSON")
    c.set_defaults(fn=cmd_train)

    c = sub.add_parser("rollout", help="model + start -> trajectory CSV")
    c.add_argument("--model", required=True)
    c.add_argument("--start", required=True, help="comma-separated, original units")
    c.add_argument("--dt", type=float, default=0.01)
    c.add_argument("--steps", type=int, default=1000)
    c.add_argument("--integrator", choices=("euler", "rk4"), default="euler")
    c.add_argument("--perturb", action="append",
                   help="step:dx1,dx2 displacement (normalized), repeatable")
    c.add_argument("-o", "--output", required=True)
    c.set_defaults(fn=cmd_rollout)

    c = sub.add_parser("eval", help="model + manifest -> metrics report JSON")
    c.add_argument("--model", required=True)
    c.add_argument("--manifest", required=True)
    c.add_argument("-o", "--output")
    c.set_defaults(fn=cmd_eval)

    c = sub.add_parser("field", help="model -> vector-field grid CSV")
    c.add_argument("--model", required=True)
    c.add_argument("--grid", type=int, default=20)
    c.add_argument("--bounds", required=True, help="x1min,x1max,x2min,x2max")
    c.add_argument("-o", "--output", required=True)
    c.set_defaults(fn=cmd_field)

    c = sub.add_parser("plot", help="trajectory/field CSVs -> SVG")
    c.add_argument("--demo", action="append")
    c.add_argument("--repro", action="append")
    c.add_argument("--field")
    c.add_argument("-o", "--output", required=True)
    c.set_defaults(fn=cmd_plot)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (DataError, ConfigError, ContractError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except NumericError as e:
        print(f"numerical error: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
