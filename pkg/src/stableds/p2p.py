"""Point-to-point stable vector field with the target at the origin.

The Lyapunov surface is V(x) = (g(x)+delta) * x'x, radially unbounded and
zero only at the target.  The raw velocity proposal f is split into a
component tangent to the level sets (kept verbatim) and a component along
grad V, which is replaced by a term that forces V' = -(alpha s^2 + beta).
The division by s in the literal construction cancels algebraically; the
cancelled, division-free form is the production path and
``stable_velocity_direct`` keeps the literal variant for comparisons.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import kernels
from .autodiff import ParamVector, Tape, Value, input_gradient
from .errors import ConfigError
from .networks import MlpSpec, ModelConstants, alpha_beta_eval, default_specs, \
    init_params, mlp_forward

NET_NAMES = ("g", "f", "alpha", "beta")


@dataclass
class StableDsModel:
    """Trained model: four nets, constants, and the data normalization."""

    kind: str
    dim: int
    specs: dict            # name -> MlpSpec
    params: dict           # name -> ParamVector
    constants: ModelConstants
    normalization: Optional[object] = None  # AffineMap, set after training
    train_config: Optional[dict] = None
    rng_seed: Optional[int] = None
    _packed: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        missing = [n for n in NET_NAMES if n not in self.specs or n not in self.params]
        if missing:
            raise ConfigError(f"model missing nets: {missing}")

    def packed(self, name):
        # weight views stay aligned with in-place parameter updates
        if name not in self._packed:
            spec, pv = self.specs[name], self.params[name]
            n = len(spec.layer_dims())
            Ws = tuple(pv.segment(f"W{i}") for i in range(n))
            bs = tuple(pv.segment(f"b{i}") for i in range(n))
            self._packed[name] = (Ws, bs)
        return self._packed[name]

    def kernel_args(self):
        gWs, gbs = self.packed("g")
        fWs, fbs = self.packed("f")
        aWs, abs_ = self.packed("alpha")
        bWs, bbs = self.packed("beta")
        return gWs, gbs, fWs, fbs, aWs, abs_, bWs, bbs

    def head_codes(self):
        return (kernels.head_code(self.specs["g"].output_head),
                kernels.head_code(self.specs["alpha"].output_head),
                kernels.head_code(self.specs["beta"].output_head))

    def invalidate_cache(self):
        self._packed.clear()


class P2pModel(StableDsModel):

    def __init__(self, specs, params, constants, **kw):
        super().__init__(kind="p2p", dim=specs["g"].input_dim, specs=specs,
                         params=params, constants=constants, **kw)

    @classmethod
    def create(cls, dim, seed=0, constants=None, specs=None):
        specs = specs or default_specs(dim)
        params = {name: init_params(specs[name], seed + i)
                  for i, name in enumerate(NET_NAMES)}
        return cls(specs, params, constants or ModelConstants.for_kind("p2p"))

    # fast numeric paths ------------------------------------------------------

    def velocity(self, x):
        """Stable velocity at a normalized state (kernel path)."""
        x = np.ascontiguousarray(x, dtype=np.float64)
        gh, ah, bh = self.head_codes()
        return kernels.p2p_velocity(*self.kernel_args(), x,
                                    self.constants.delta, self.constants.eps_grad,
                                    gh, ah, bh)

    def velocity_parts(self, x):
        x = np.ascontiguousarray(x, dtype=np.float64)
        gh, ah, bh = self.head_codes()
        return kernels.p2p_parts(*self.kernel_args(), x,
                                 self.constants.delta, self.constants.eps_grad,
                                 gh, ah, bh)

    def lyapunov(self, x):
        x = np.ascontiguousarray(x, dtype=np.float64)
        gh, _, _ = self.head_codes()
        gWs, gbs = self.packed("g")
        g = kernels.mlp_forward(gWs, gbs, x, gh)[0]
        return (g + self.constants.delta) * float(x @ x)


# tape builders (training path) ----------------------------------------------

def lyapunov_value(tape: Tape, m: P2pModel, x: Value) -> Value:
    """V(x) = (g(x)+delta) * x'x."""
    g = mlp_forward(tape, m.specs["g"], m.params["g"], x)
    xx = tape.record("dot", x, x)
    return tape.record("scale", g + tape.const(m.constants.delta), xx)


def lyapunov_grad(tape: Tape, m: P2pModel, x: Value) -> Value:
    """a = grad V = (grad g) x'x + 2 (g+delta) x, differentiable w.r.t. params."""
    g = mlp_forward(tape, m.specs["g"], m.params["g"], x)
    ggrad = input_gradient(tape, g, x)
    xx = tape.record("dot", x, x)
    term1 = tape.record("scale", xx, ggrad)
    coeff = tape.record("scale", tape.const(2.0), g + tape.const(m.constants.delta))
    term2 = tape.record("scale", coeff, x)
    return term1 + term2


def projections(a, eps_grad):
    """Projectors onto the level-set tangent (R1) and the gradient line (R2)."""
    a = np.asarray(a, dtype=np.float64)
    d = a.size
    a_sq = float(a @ a)
    if a_sq < eps_grad:
        return np.eye(d), np.zeros((d, d)), True
    R2 = np.outer(a, a) / a_sq
    return np.eye(d) - R2, R2, False


def stable_velocity(tape: Tape, m: P2pModel, x: Value) -> Value:
    """Production output: f1 + f2 in the cancelled, division-free form."""
    a = lyapunov_grad(tape, m, x)
    a_sq_v = tape.record("dot", a, a)
    a_sq = a_sq_v.value
    x_np = np.asarray(x.value)
    if a_sq < m.constants.eps_grad:
        # measure-zero fallback: hold at the target, weak pull elsewhere
        if np.linalg.norm(x_np) < 1e-3:
            return tape.const(np.zeros(m.dim))
        return tape.const(-0.1 * x_np)
    f = mlp_forward(tape, m.specs["f"], m.params["f"], x)
    alpha, beta = alpha_beta_eval(tape, m.specs["alpha"], m.params["alpha"],
                                  m.specs["beta"], m.params["beta"], x, "p2p")
    s = tape.record("dot", a, f)
    f1 = f - tape.record("scale", s / a_sq_v, a)
    mag = alpha * tape.record("square", s) + beta
    f2 = -tape.record("scale", mag / a_sq_v, a)
    return f1 + f2


def stable_velocity_direct(tape: Tape, m: P2pModel, x: Value) -> Value:
    """Literal unprojected construction, with s regularized away from zero;
    kept for fidelity experiments only."""
    a = lyapunov_grad(tape, m, x)
    f = mlp_forward(tape, m.specs["f"], m.params["f"], x)
    alpha, beta = alpha_beta_eval(tape, m.specs["alpha"], m.params["alpha"],
                                  m.specs["beta"], m.params["beta"], x, "p2p")
    s = tape.record("dot", a, f)
    s_val = s.value
    eps_s = m.constants.eps_s
    if abs(s_val) < eps_s:
        sign = 1.0 if s_val >= 0.0 else -1.0
        s_reg = tape.const(sign * eps_s)
    else:
        s_reg = s
    t1 = tape.record("scale", alpha * s, f)
    t2 = tape.record("scale", beta / s_reg, f)
    return -t1 - t2
