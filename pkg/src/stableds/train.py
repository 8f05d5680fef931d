"""Joint training of the four nets against the velocity-matching objective.

AdamW with decoupled weight decay, minibatch sampling without replacement
per epoch, per-epoch learning-rate decay, best-loss checkpointing.  The
whole loop is deterministic for a fixed (dataset, config, seed).
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tape
from .cycle import CycleModel, gated_velocity, cycle_field_ungated
from .data import DemonstrationSet
from .errors import ConfigError, NumericError
from .networks import ModelConstants, default_specs
from .p2p import NET_NAMES, P2pModel, stable_velocity


@dataclass
class TrainConfig:
    learning_rate: float = 1e-5
    lr_decay: float = 0.99          # per epoch (per iteration with decay_per_iteration)
    max_iterations: int = 2000
    batch_size: int = 64
    weight_decay: float = 1e-4
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    kind: str = "p2p"
    train_on_gated: bool = True     # cycle only
    decay_per_iteration: bool = False

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")
        if not 0.0 < self.lr_decay <= 1.0:
            raise ConfigError("lr_decay must be in (0,1]")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.kind not in ("p2p", "cycle"):
            raise ConfigError(f"unknown kind {self.kind!r}")

    def to_dict(self):
        return dict(self.__dict__)

    @classmethod
    def from_file(cls, path):
        """Plain-text key=value config; every default is overridable."""
        kwargs = {}
        bools = {"train_on_gated", "decay_per_iteration"}
        ints = {"max_iterations", "batch_size", "seed"}
        with open(path) as fh:
            for lineno, line in enumerate(fh, 1):
                line = line.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise ConfigError(f"{path}:{lineno}: expected key=value")
                key, val = (s.strip() for s in line.split("=", 1))
                if key not in cls.__dataclass_fields__:
                    raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
                if key in bools:
                    kwargs[key] = val.lower() in ("1", "true", "yes")
                elif key in ints:
                    kwargs[key] = int(val)
                elif key == "kind":
                    kwargs[key] = val
                else:
                    kwargs[key] = float(val)
        return cls(**kwargs)


@dataclass
class TrainRecord:
    losses: list = field(default_factory=list)
    learning_rates: list = field(default_factory=list)
    wall_time: float = 0.0
    aborted: bool = False
    abort_reason: str = ""


class AdamWState:
    def __init__(self, n):
        self.m = np.zeros(n)
        self.v = np.zeros(n)
        self.t = 0


def adamw_step(params, grads, state: AdamWState, lr, config: TrainConfig):
    """One decoupled-weight-decay Adam update, in place."""
    if params.shape != grads.shape:
        raise ConfigError("state/grads dimension mismatch")
    b1, b2 = config.adam_beta1, config.adam_beta2
    state.t += 1
    state.m = b1 * state.m + (1.0 - b1) * grads
    state.v = b2 * state.v + (1.0 - b2) * grads * grads
    m_hat = state.m / (1.0 - b1 ** state.t)
    v_hat = state.v / (1.0 - b2 ** state.t)
    params -= lr * (m_hat / (np.sqrt(v_hat) + config.adam_eps)
                    + config.weight_decay * params)
    return params


def _model_output(tape, model, x_val):
    x = tape.input(x_val)
    if model.kind == "p2p":
        return stable_velocity(tape, model, x)
    if getattr(model, "_train_on_gated", True):
        return gated_velocity(tape, model, x)
    return cycle_field_ungated(tape, model, x)[0]


def velocity_loss(model, batch):
    """Mean squared velocity error over the batch, on a fresh tape."""
    if not batch:
        raise ConfigError("empty batch")
    tape = Tape()
    total = None
    for i, (x_val, v_val) in enumerate(batch):
        try:
            pred = _model_output(tape, model, x_val)
        except NumericError as e:
            raise NumericError(f"forward pass failed at sample {i}: {e}")
        diff = pred - tape.const(np.asarray(v_val, dtype=np.float64))
        sq = tape.record("sum", tape.record("square", diff))
        total = sq if total is None else total + sq
    loss = tape.record("scale", tape.const(1.0 / len(batch)), total)
    return tape, loss


def stability_identity_residual(model, xs):
    """Max relative residual of a . xdot = -(alpha s^2 + beta) (p2p) or its
    cycle analogue over the given points; structural, holds at any params."""
    worst = 0.0
    for x in xs:
        if model.kind == "p2p":
            vel, a, s, alpha, beta, a_sq, degen = model.velocity_parts(x)
            if degen:
                continue
            lhs = float(a @ vel)
            rhs = -(alpha * s * s + beta)
        else:
            u, b, s, g, alpha, beta, f3, b_sq, degen = model.ungated_parts(x)
            if degen:
                continue
            e = g - model.constants.delta
            lhs = e * float(b @ u)
            rhs = -(alpha * s * s + beta) * e * e
        worst = max(worst, abs(lhs - rhs) / (1.0 + abs(rhs)))
    return worst


def train(dataset: DemonstrationSet, config: TrainConfig, constants=None,
          specs=None, identity_check_every=100):
    """Optimize a fresh model on the demonstration set.

    Returns (model, TrainRecord); the model carries the best-loss
    parameters seen and the dataset normalization.
    """
    if dataset.kind != config.kind:
        raise ConfigError(f"dataset kind {dataset.kind!r} != config kind {config.kind!r}")
    dim = dataset.dim
    if config.kind == "cycle" and dim != 2:
        raise ConfigError("cycle training requires 2-D data")

    specs = specs or default_specs(dim)
    constants = constants or ModelConstants.for_kind(config.kind)
    if config.kind == "p2p":
        model = P2pModel.create(dim, seed=config.seed, constants=constants, specs=specs)
    else:
        model = CycleModel.create(seed=config.seed, constants=constants, specs=specs)
        model._train_on_gated = config.train_on_gated
    model.rng_seed = config.seed
    model.train_config = config.to_dict()
    model.normalization = dataset.normalization

    xs, vs = dataset.samples()
    n = len(xs)
    rng = np.random.default_rng(config.seed)
    states = {name: AdamWState(model.params[name].values.size) for name in NET_NAMES}

    record = TrainRecord()
    lr = config.learning_rate
    best_loss = np.inf
    best_params = None
    order = rng.permutation(n)
    cursor = 0
    t0 = time.perf_counter()

    for it in range(config.max_iterations):
        if cursor >= n:  # epoch boundary: reshuffle, decay lr
            order = rng.permutation(n)
            cursor = 0
            if not config.decay_per_iteration:
                lr *= config.lr_decay
        idx = order[cursor:cursor + config.batch_size]
        cursor += config.batch_size

        batch = [(xs[i], vs[i]) for i in idx]
        try:
            tape, loss = velocity_loss(model, batch)
        except NumericError as e:
            record.aborted = True
            record.abort_reason = f"iteration {it}: {e}"
            break
        loss_val = float(loss.value)
        if not np.isfinite(loss_val) or loss_val > 1e6:
            record.aborted = True
            record.abort_reason = f"iteration {it}: divergence (loss={loss_val})"
            break
        record.losses.append(loss_val)
        record.learning_rates.append(lr)
        if loss_val < best_loss:
            best_loss = loss_val
            best_params = {name: model.params[name].values.copy() for name in NET_NAMES}

        grads = tape.backward(loss)
        for name in NET_NAMES:
            pv = model.params[name]
            g = grads.get(id(pv))
            if g is None:
                g = np.zeros_like(pv.values)
            adamw_step(pv.values, g, states[name], lr, config)
        if config.decay_per_iteration:
            lr *= config.lr_decay

        if identity_check_every and it % identity_check_every == 0:
            res = stability_identity_residual(model, [xs[i] for i in idx[:4]])
            if res > 1e-8:
                raise NumericError(f"stability identity violated at iteration {it}: {res}")

    record.wall_time = time.perf_counter() - t0
    if best_params is not None:
        for name in NET_NAMES:
            model.params[name].values[:] = best_params[name]
    return model, record
