"""Hot numeric kernels: closed-form model evaluation without the tape.

Rollouts, field grids, metric sweeps and gate checks evaluate the model
millions of times; doing that through the autodiff tape is an order of
magnitude too slow.  These kernels recompute the same arithmetic directly
on packed weight tuples.  They are compiled with numba's @njit when
available; setting STABLEDS_NO_NUMBA=1 selects the pure-numpy fallback
(same source, no compilation).  benchmarks/bench_kernels.py compares the
two paths.

Weight packing: each net is a (Ws, bs) pair of tuples, Ws[i] of shape
(fan_out, fan_in), bs[i] of shape (fan_out,).  Heads are integer coded.
"""

from __future__ import annotations

import math
import os

import numpy as np

HEAD_LINEAR = 0
HEAD_SOFTPLUS = 1
HEAD_SIGMOID = 2

_HEAD_CODE = {"linear": HEAD_LINEAR, "softplus": HEAD_SOFTPLUS, "sigmoid": HEAD_SIGMOID}

NUMBA_DISABLED = os.environ.get("STABLEDS_NO_NUMBA", "").lower() in ("1", "true", "yes")
try:
    if NUMBA_DISABLED:
        raise ImportError
    from numba import njit as _njit
    NUMBA_ENABLED = True
except ImportError:
    NUMBA_ENABLED = False

    def _njit(*args, **kwargs):
        if args and callable(args[0]):
            return args[0]
        return lambda fn: fn


def head_code(name):
    return _HEAD_CODE[name]


def _jit(fn):
    return _njit(cache=True, fastmath=False)(fn)


def _apply_head_py(z, head):
    out = np.empty_like(z)
    for i in range(z.size):
        v = z[i]
        if head == HEAD_SOFTPLUS:
            out[i] = math.log1p(math.exp(-abs(v))) + max(v, 0.0)
        elif head == HEAD_SIGMOID:
            if v >= 0.0:
                out[i] = 1.0 / (1.0 + math.exp(-v))
            else:
                e = math.exp(v)
                out[i] = e / (1.0 + e)
        else:
            out[i] = v
    return out


def _head_deriv_py(z, head):
    # derivative of the head w.r.t. its pre-activation
    out = np.empty_like(z)
    for i in range(z.size):
        v = z[i]
        if head == HEAD_SOFTPLUS:
            if v >= 0.0:
                out[i] = 1.0 / (1.0 + math.exp(-v))
            else:
                e = math.exp(v)
                out[i] = e / (1.0 + e)
        elif head == HEAD_SIGMOID:
            if v >= 0.0:
                s = 1.0 / (1.0 + math.exp(-v))
            else:
                e = math.exp(v)
                s = e / (1.0 + e)
            out[i] = s * (1.0 - s)
        else:
            out[i] = 1.0
    return out


def _mlp_forward_py(Ws, bs, x, head):
    h = x
    n = len(Ws)
    for i in range(n - 1):
        h = np.tanh(np.dot(Ws[i], h) + bs[i])
    z = np.dot(Ws[n - 1], h) + bs[n - 1]
    return _apply_head(z, head)


def _mlp_value_grad_py(Ws, bs, x, head):
    """Scalar net value and its input gradient via the layer chain."""
    n = len(Ws)
    hs = [x]
    h = x
    for i in range(n - 1):
        h = np.tanh(np.dot(Ws[i], h) + bs[i])
        hs.append(h)
    z = np.dot(Ws[n - 1], h) + bs[n - 1]
    y = _apply_head(z, head)[0]
    v = _head_deriv(z, head)[0] * Ws[n - 1][0]
    for i in range(n - 2, -1, -1):
        hi = hs[i + 1]
        v = np.dot((1.0 - hi * hi) * v, Ws[i])
    return y, v


def _p2p_parts_py(gWs, gbs, fWs, fbs, aWs, abs_, bWs, bbs, x,
                  delta, eps_grad, g_head, a_head, b_head):
    """Velocity plus the pieces the stability identity is made of.

    Returns (vel, a, s, alpha, beta, a_sq, degenerate) where a is the
    Lyapunov gradient row, s = a . f, a_sq = ||a||^2.
    """
    g, ggrad = _mlp_value_grad(gWs, gbs, x, g_head)
    xx = float(np.dot(x, x))
    a = ggrad * xx + (2.0 * (g + delta)) * x
    a_sq = float(np.dot(a, a))
    f = _mlp_forward(fWs, fbs, x, HEAD_LINEAR)
    alpha = _mlp_forward(aWs, abs_, x, a_head)[0] + 1e-6
    beta = _mlp_forward(bWs, bbs, x, b_head)[0] * xx
    s = float(np.dot(a, f))
    if a_sq >= eps_grad:
        vel = f - a * (s / a_sq) - a * ((alpha * s * s + beta) / a_sq)
        degenerate = False
    else:
        degenerate = True
        if math.sqrt(xx) < 1e-3:
            vel = 0.0 * x
        else:
            vel = -0.1 * x
    return vel, a, s, alpha, beta, a_sq, degenerate


def _p2p_velocity_py(gWs, gbs, fWs, fbs, aWs, abs_, bWs, bbs, x,
                     delta, eps_grad, g_head, a_head, b_head):
    return _p2p_parts(gWs, gbs, fWs, fbs, aWs, abs_, bWs, bbs, x,
                      delta, eps_grad, g_head, a_head, b_head)[0]


def _cycle_parts_py(gWs, gbs, fWs, fbs, aWs, abs_, bWs, bbs, x,
                    delta, eps_grad, g_head, a_head, b_head):
    """Ungated limit-cycle field pieces.

    Returns (u, b, s, g, alpha, beta, f3, b_sq, degenerate) with
    u = f3 + f4 the ungated output and b = grad g.
    """
    g, b = _mlp_value_grad(gWs, gbs, x, g_head)
    b_sq = float(np.dot(b, b))
    f = _mlp_forward(fWs, fbs, x, HEAD_LINEAR)
    alpha = _mlp_forward(aWs, abs_, x, a_head)[0] + 1e-6
    beta = _mlp_forward(bWs, bbs, x, b_head)[0] + 1e-6
    s = float(np.dot(b, f))
    if b_sq >= eps_grad:
        f3 = f - b * (s / b_sq)
        f4 = -b * ((alpha * s * s + beta) * (g - delta) / b_sq)
        u = f3 + f4
        degenerate = False
    else:
        degenerate = True
        f3 = f
        u = f
    return u, b, s, g, alpha, beta, f3, b_sq, degenerate


def _cycle_ungated_py(gWs, gbs, fWs, fbs, aWs, abs_, bWs, bbs, x,
                      delta, eps_grad, g_head, a_head, b_head):
    return _cycle_parts(gWs, gbs, fWs, fbs, aWs, abs_, bWs, bbs, x,
                        delta, eps_grad, g_head, a_head, b_head)[0]


def _lambda_max_2x2_py(a, b, c):
    # largest eigenvalue of the symmetric matrix [[a, b], [b, c]]
    half_tr = 0.5 * (a + c)
    half_diff = 0.5 * (a - c)
    return half_tr + math.sqrt(half_diff * half_diff + b * b)


def _cycle_gate_py(gWs, gbs, fWs, fbs, aWs, abs_, bWs, bbs, x,
                   delta, sigma, xi, eps_grad, fd_step,
                   g_head, a_head, b_head):
    """Gated field: (vel, T, lam, g, gated_flag).

    T is evaluated on the ungated field; the Jacobian entering lambda_max
    is a central finite difference and acts as a constant.
    """
    u, b, s, g, alpha, beta, f3, b_sq, degen = _cycle_parts(
        gWs, gbs, fWs, fbs, aWs, abs_, bWs, bbs, x,
        delta, eps_grad, g_head, a_head, b_head)
    h = fd_step
    J = np.empty((2, 2))
    for j in range(2):
        e = np.zeros(2)
        e[j] = h
        up = _cycle_ungated(gWs, gbs, fWs, fbs, aWs, abs_, bWs, bbs, x + e,
                            delta, eps_grad, g_head, a_head, b_head)
        um = _cycle_ungated(gWs, gbs, fWs, fbs, aWs, abs_, bWs, bbs, x - e,
                            delta, eps_grad, g_head, a_head, b_head)
        J[0, j] = (up[0] - um[0]) / (2.0 * h)
        J[1, j] = (up[1] - um[1]) / (2.0 * h)
    S00 = 2.0 * J[0, 0]
    S11 = 2.0 * J[1, 1]
    S01 = J[0, 1] + J[1, 0]
    lam = _lambda_max_2x2(S00, S01, S11)
    T = float(np.dot(b, u)) + (lam - sigma) * g
    if T > 0.0:
        vel = (1.0 - xi) * f3
        gated = True
    else:
        vel = u
        gated = False
    return vel, T, lam, g, gated


def _rollout_p2p_py(gWs, gbs, fWs, fbs, aWs, abs_, bWs, bbs, x0,
                    delta, eps_grad, g_head, a_head, b_head,
                    dt, max_steps, tol):
    """Euler rollout until ||x|| < tol; returns (x, steps, degenerate_visits)."""
    x = x0.copy()
    degen_visits = 0
    k = 0
    while k < max_steps:
        if math.sqrt(float(np.dot(x, x))) < tol:
            break
        vel, a, s, alpha, beta, a_sq, degen = _p2p_parts(
            gWs, gbs, fWs, fbs, aWs, abs_, bWs, bbs, x,
            delta, eps_grad, g_head, a_head, b_head)
        if degen:
            degen_visits += 1
        x = x + dt * vel
        k += 1
    return x, k, degen_visits


def _rollout_cycle_py(gWs, gbs, fWs, fbs, aWs, abs_, bWs, bbs, x0,
                      delta, sigma, xi, eps_grad, fd_step,
                      g_head, a_head, b_head, dt, steps):
    """Euler rollout of the gated field; returns the state history."""
    x = x0.copy()
    out = np.empty((steps + 1, 2))
    out[0] = x
    for k in range(steps):
        vel, T, lam, g, gated = _cycle_gate(
            gWs, gbs, fWs, fbs, aWs, abs_, bWs, bbs, x,
            delta, sigma, xi, eps_grad, fd_step, g_head, a_head, b_head)
        x = x + dt * vel
        out[k + 1] = x
    return out


# pure-python (numpy) bindings, always importable for benchmarking
_apply_head = _apply_head_py
_head_deriv = _head_deriv_py
_mlp_forward = _mlp_forward_py
_mlp_value_grad = _mlp_value_grad_py
_p2p_parts = _p2p_parts_py
_p2p_velocity = _p2p_velocity_py
_cycle_parts = _cycle_parts_py
_cycle_ungated = _cycle_ungated_py
_lambda_max_2x2 = _lambda_max_2x2_py
_cycle_gate = _cycle_gate_py
_rollout_p2p = _rollout_p2p_py
_rollout_cycle = _rollout_cycle_py

if NUMBA_ENABLED:
    # jit-compile the whole chain; inner helpers must be rebound before the
    # callers are compiled so the jitted versions call each other
    _apply_head = _jit(_apply_head_py)
    _head_deriv = _jit(_head_deriv_py)
    _mlp_forward = _jit(_mlp_forward_py)
    _mlp_value_grad = _jit(_mlp_value_grad_py)
    _p2p_parts = _jit(_p2p_parts_py)
    _p2p_velocity = _jit(_p2p_velocity_py)
    _cycle_parts = _jit(_cycle_parts_py)
    _cycle_ungated = _jit(_cycle_ungated_py)
    _lambda_max_2x2 = _jit(_lambda_max_2x2_py)
    _cycle_gate = _jit(_cycle_gate_py)
    _rollout_p2p = _jit(_rollout_p2p_py)
    _rollout_cycle = _jit(_rollout_cycle_py)


# public names
mlp_forward = _mlp_forward
mlp_value_grad = _mlp_value_grad
p2p_parts = _p2p_parts
p2p_velocity = _p2p_velocity
cycle_parts = _cycle_parts
cycle_ungated = _cycle_ungated
lambda_max_2x2 = _lambda_max_2x2
cycle_gate = _cycle_gate
rollout_p2p = _rollout_p2p
rollout_cycle = _rollout_cycle
