"""Two-dimensional limit-cycle field with a transverse-contraction gate.

The target set is the level set {g(x) = delta} of the learned shape net;
V(x) = (g-delta)^2 / 2 decreases along the ungated field, which pushes the
error g-delta to zero exponentially.  On top of that, a pointwise test T(x)
checks the contraction inequality for the metric g(x)*I; where the test
fails the stabilizing component is removed and the circulation component is
scaled down by (1-xi).  T is evaluated on the pre-correction field and its
Jacobian term is a finite-difference constant with respect to parameters.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .autodiff import Tape, Value, input_gradient
from .errors import ConfigError
from .networks import ModelConstants, alpha_beta_eval, default_specs, init_params, \
    mlp_forward
from .p2p import NET_NAMES, StableDsModel


@dataclass
class GateReport:
    T_value: float
    lambda_max: float
    gated: bool


class CycleModel(StableDsModel):

    def __init__(self, specs, params, constants, **kw):
        if specs["g"].input_dim != 2:
            raise ConfigError("limit-cycle models are two-dimensional")
        super().__init__(kind="cycle", dim=2, specs=specs, params=params,
                         constants=constants, **kw)

    @classmethod
    def create(cls, seed=0, constants=None, specs=None):
        specs = specs or default_specs(2)
        params = {name: init_params(specs[name], seed + i)
                  for i, name in enumerate(NET_NAMES)}
        return cls(specs, params, constants or ModelConstants.for_kind("cycle"))

    # fast numeric paths ------------------------------------------------------

    def g_value(self, x):
        x = np.ascontiguousarray(x, dtype=np.float64)
        gh, _, _ = self.head_codes()
        gWs, gbs = self.packed("g")
        return kernels.mlp_forward(gWs, gbs, x, gh)[0]

    def ungated_velocity(self, x):
        x = np.ascontiguousarray(x, dtype=np.float64)
        gh, ah, bh = self.head_codes()
        c = self.constants
        return kernels.cycle_ungated(*self.kernel_args(), x, c.delta,
                                     c.eps_grad, gh, ah, bh)

    def ungated_parts(self, x):
        x = np.ascontiguousarray(x, dtype=np.float64)
        gh, ah, bh = self.head_codes()
        c = self.constants
        return kernels.cycle_parts(*self.kernel_args(), x, c.delta,
                                   c.eps_grad, gh, ah, bh)

    def velocity(self, x):
        return self.gate(x)[1]

    def gate(self, x):
        """Contraction test plus gated output: (GateReport, velocity)."""
        x = np.ascontiguousarray(x, dtype=np.float64)
        gh, ah, bh = self.head_codes()
        c = self.constants
        vel, T, lam, g, gated = kernels.cycle_gate(
            *self.kernel_args(), x, c.delta, c.sigma_contraction, c.xi,
            c.eps_grad, c.fd_step, gh, ah, bh)
        return GateReport(T, lam, gated), vel


# numeric helpers -------------------------------------------------------------

def lambda_max_2x2(M):
    """Largest eigenvalue of a symmetric 2x2 matrix, closed form."""
    M = np.asarray(M, dtype=np.float64)
    if M.shape != (2, 2):
        raise ConfigError("expected a 2x2 matrix")
    return kernels.lambda_max_2x2(float(M[0, 0]), float(0.5 * (M[0, 1] + M[1, 0])),
                                  float(M[1, 1]))


def cycle_lyapunov(m: CycleModel, x):
    e = m.g_value(x) - m.constants.delta
    return 0.5 * e * e


def transverse_gate(m: CycleModel, x):
    return m.gate(x)


# tape builders (training path) ----------------------------------------------

def cycle_field_ungated(tape: Tape, m: CycleModel, x: Value):
    """Ungated output f3 + f4 on the tape; returns (u, f3, f4_or_None)."""
    g = mlp_forward(tape, m.specs["g"], m.params["g"], x)
    b = input_gradient(tape, g, x)
    b_sq_v = tape.record("dot", b, b)
    if b_sq_v.value < m.constants.eps_grad:
        # interior extremum of g: keep the raw learned motion
        f = mlp_forward(tape, m.specs["f"], m.params["f"], x)
        return f, f, None
    f = mlp_forward(tape, m.specs["f"], m.params["f"], x)
    alpha, beta = alpha_beta_eval(tape, m.specs["alpha"], m.params["alpha"],
                                  m.specs["beta"], m.params["beta"], x, "cycle")
    s = tape.record("dot", b, f)
    f3 = f - tape.record("scale", s / b_sq_v, b)
    mag = (alpha * tape.record("square", s) + beta) * \
        (g - tape.const(m.constants.delta))
    f4 = -tape.record("scale", mag / b_sq_v, b)
    return f3 + f4, f3, f4


def gated_velocity(tape: Tape, m: CycleModel, x: Value):
    """Training output with the gate applied; the gate decision comes from
    the kernel path and is constant for parameter gradients."""
    u, f3, f4 = cycle_field_ungated(tape, m, x)
    report, _ = m.gate(np.asarray(x.value))
    if report.gated and f4 is not None:
        # u - (xi f3 + f4) == (1 - xi) f3
        return tape.record("scale", tape.const(1.0 - m.constants.xi), f3)
    return u


def poincare_return(field, section, x0, dt, max_steps):
    """Directed crossings of a section under Euler integration.

    `section` is a (point, normal) pair; a crossing is recorded when the
    signed distance goes from negative to positive, with the crossing point
    linearly interpolated.  Returns (crossings, period_estimate); the period
    is NaN when fewer than two crossings occur (diagnostic, not an error).
    """
    point = np.asarray(section[0], dtype=np.float64)
    normal = np.asarray(section[1], dtype=np.float64)
    nn = np.linalg.norm(normal)
    if nn == 0.0:
        raise ConfigError("section normal must be nonzero")
    normal = normal / nn
    x = np.asarray(x0, dtype=np.float64).copy()
    prev_side = float((x - point) @ normal)
    crossings, times = [], []
    for k in range(max_steps):
        v = np.asarray(field(x))
        x_new = x + dt * v
        side = float((x_new - point) @ normal)
        if prev_side < 0.0 <= side:
            frac = -prev_side / (side - prev_side)
            crossings.append(x + frac * (x_new - x))
            times.append((k + frac) * dt)
        prev_side = side
        x = x_new
    if len(times) >= 2:
        period = float(np.mean(np.diff(times)))
    else:
        period = float("nan")
    return crossings, period
