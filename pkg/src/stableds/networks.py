"""The four networks of the method and their parameter handling.

g shapes the Lyapunov landscape, f proposes raw velocities, and the two
scalar nets behind alpha/beta scale the stabilizing correction.  All nets
are plain dense MLPs with tanh hidden layers; g, alpha and beta carry a
softplus (or sigmoid) head so their outputs are non-negative everywhere.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import ParamVector, Tape, Value, input_gradient
from .errors import ConfigError

HEADS = ("linear", "softplus", "sigmoid")
ALPHA_FLOOR = 1e-6


@dataclass(frozen=True)
class MlpSpec:
    input_dim: int
    hidden: tuple
    output_dim: int
    output_head: str = "linear"

    def __post_init__(self):
        if self.output_head not in HEADS:
            raise ConfigError(f"unknown output head {self.output_head!r}")
        if self.input_dim < 1 or self.output_dim < 1:
            raise ConfigError("dimensions must be positive")

    def layer_dims(self):
        dims = [self.input_dim, *self.hidden, self.output_dim]
        return list(zip(dims[1:], dims[:-1]))  # (fan_out, fan_in) per layer

    def layout(self):
        segs = []
        for i, (out, inp) in enumerate(self.layer_dims()):
            segs.append((f"W{i}", (out, inp)))
            segs.append((f"b{i}", (out,)))
        return segs

    def n_params(self):
        return sum(int(np.prod(shape)) for _, shape in self.layout())


def default_specs(dim):
    """Architecture used throughout: d x 64 x 64 x 1 for g/alpha/beta,
    d x 64 x 64 x d for f."""
    return {
        "g": MlpSpec(dim, (64, 64), 1, "softplus"),
        "f": MlpSpec(dim, (64, 64), dim, "linear"),
        "alpha": MlpSpec(dim, (64, 64), 1, "softplus"),
        "beta": MlpSpec(dim, (64, 64), 1, "softplus"),
    }


@dataclass
class ModelConstants:
    delta: float = 0.01          # Lyapunov offset (p2p) or cycle level
    sigma_contraction: float = 0.1
    xi: float = 0.99             # gate suppression factor, close to one
    eps_grad: float = 1e-6       # ||grad||^2 degeneracy threshold
    eps_s: float = 1e-8          # scalar-s regularization floor
    fd_step: float = 1e-4        # Jacobian FD step, normalized coordinates

    def __post_init__(self):
        if self.delta <= 0 or self.sigma_contraction <= 0:
            raise ConfigError("delta and contraction margin must be positive")
        if not 0.0 < self.xi < 1.0:
            raise ConfigError("xi must lie in (0,1)")
        if min(self.eps_grad, self.eps_s, self.fd_step) <= 0:
            raise ConfigError("epsilons must be positive")

    @classmethod
    def for_kind(cls, kind):
        return cls(delta=0.01 if kind == "p2p" else 1.0)

    def to_dict(self):
        return dict(self.__dict__)


def init_params(spec: MlpSpec, seed: int) -> ParamVector:
    """Glorot-uniform weights, zero biases, deterministic per seed."""
    rng = np.random.default_rng(seed)
    segs = []
    for i, (out, inp) in enumerate(spec.layer_dims()):
        bound = np.sqrt(6.0 / (inp + out))
        segs.append((f"W{i}", rng.uniform(-bound, bound, size=(out, inp))))
        segs.append((f"b{i}", np.zeros(out)))
    return ParamVector.from_segments(segs)


def check_layout(spec: MlpSpec, pv: ParamVector):
    expected = [(name, shape) for name, shape in spec.layout()]
    got = [(n, s) for n, _, s in pv.layout]
    if expected != got:
        raise ConfigError(f"parameter layout does not match spec: {got} != {expected}")


def mlp_forward(tape: Tape, spec: MlpSpec, pv: ParamVector, x: Value) -> Value:
    """Dense forward pass recorded on the tape; scalar output is squeezed."""
    check_layout(spec, pv)
    h = x
    n_layers = len(spec.layer_dims())
    for i in range(n_layers):
        W = tape.param(pv, f"W{i}")
        b = tape.param(pv, f"b{i}")
        z = tape.record("matvec", W, h) + b
        if i < n_layers - 1:
            h = tape.record("tanh", z)
        else:
            h = z
    if spec.output_head == "softplus":
        h = tape.record("softplus", h)
    elif spec.output_head == "sigmoid":
        h = tape.record("sigmoid", h)
    if spec.output_dim == 1:
        h = tape.record("sum", h)
    return h


def mlp_input_gradient(tape: Tape, spec: MlpSpec, pv: ParamVector, x: Value) -> Value:
    """grad_x of a scalar-output net, emitted as tape primitives."""
    if spec.output_dim != 1:
        raise ConfigError("input gradient requires a scalar-output net")
    out = mlp_forward(tape, spec, pv, x)
    return input_gradient(tape, out, x)


def alpha_beta_eval(tape: Tape, alpha_spec, theta_alpha, beta_spec, theta_beta,
                    x: Value, kind: str):
    """Positive scale factors: alpha > 0 always; beta >= 0, vanishing
    quadratically at the origin for point-to-point motions so the target
    stays an equilibrium."""
    alpha = mlp_forward(tape, alpha_spec, theta_alpha, x) + tape.const(ALPHA_FLOOR)
    beta_raw = mlp_forward(tape, beta_spec, theta_beta, x)
    if kind == "p2p":
        beta = beta_raw * tape.record("dot", x, x)
    elif kind == "cycle":
        beta = beta_raw + tape.const(ALPHA_FLOOR)
    else:
        raise ConfigError(f"unknown kind {kind!r}")
    return alpha, beta
