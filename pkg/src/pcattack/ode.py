"""Fixed-step ODE integrators and the gradient-field view of FGSM.

The attack code treats the input gradient of the loss as a vector field; the
one-step Euler solution of that field with step ``epsilon`` is exactly the
unsigned, unclipped FGSM update. :func:`fgsm_correspondence_demo` makes that
executable.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable

import numpy as np

from . import autodiff as ad


class IntegrationError(RuntimeError):
    """The derivative field produced a non-finite value."""


class ImplicitSolveError(RuntimeError):
    """Fixed-point iteration of an implicit step did not converge."""


@dataclass(frozen=True)
class OdeProblem:
    f: Callable  # f(t, u) -> array shaped like u
    t0: float
    u0: np.ndarray
    t_end: float
    n_steps: int

    def __post_init__(self):
        if not self.t_end > self.t0:
            raise ValueError("interval must have t_end > t0")
        if self.n_steps < 1:
            raise ValueError("need at least one step")
        object.__setattr__(self, "u0", np.asarray(self.u0, dtype=np.float64))

    @property
    def h(self):
        return (self.t_end - self.t0) / self.n_steps

    def nodes(self):
        return [self.t0 + n * self.h for n in range(self.n_steps + 1)]


@dataclass
class SolverRun:
    nodes: list
    values: list
    scheme: str

    @property
    def final(self):
        return self.values[-1]


def _eval(p, t, u, n):
    out = np.asarray(p.f(t, u), dtype=np.float64)
    if not np.all(np.isfinite(out)):
        raise IntegrationError(f"non-finite derivative at node {n} (t={t!r})")
    return out


def euler(p):
    h, ts = p.h, p.nodes()
    us = [p.u0]
    for n in range(p.n_steps):
        us.append(us[n] + h * _eval(p, ts[n], us[n], n))
    return SolverRun(ts, us, "euler")


def trapezoid(p, tol=1e-12, max_iter=100):
    """Implicit trapezoidal rule, each step solved by fixed-point iteration
    seeded with the explicit Euler predictor."""
    if tol <= 0 or max_iter < 1:
        raise ValueError("need tol > 0 and max_iter >= 1")
    h, ts = p.h, p.nodes()
    us = [p.u0]
    for n in range(p.n_steps):
        fn = _eval(p, ts[n], us[n], n)
        u = us[n] + h * fn
        for _ in range(max_iter):
            nxt = us[n] + (h / 2) * (fn + _eval(p, ts[n + 1], u, n + 1))
            done = np.max(np.abs(nxt - u)) < tol
            u = nxt
            if done:
                break
        else:
            raise ImplicitSolveError(f"no convergence within {max_iter} iterations at node {n + 1}")
        us.append(u)
    return SolverRun(ts, us, "trapezoid")


def improved_euler(p):
    """Heun's predictor-corrector: Euler prediction, trapezoidal correction."""
    h, ts = p.h, p.nodes()
    us = [p.u0]
    for n in range(p.n_steps):
        fn = _eval(p, ts[n], us[n], n)
        pred = us[n] + h * fn
        us.append(us[n] + (h / 2) * (fn + _eval(p, ts[n + 1], pred, n + 1)))
    return SolverRun(ts, us, "improved_euler")


SCHEMES = {"euler": euler, "improved_euler": improved_euler, "trapezoid": trapezoid}


def endpoint_error(scheme, p, exact):
    run = scheme(p)
    return float(np.max(np.abs(run.final - np.asarray(exact(p.t_end)))))


def convergence_order(scheme, p, exact, h_list):
    """Least-squares slope of log(endpoint error) against log(h).

    Returns ``None`` when the scheme is exact on the problem (zero error), in
    which case no order can be fitted.
    """
    if len(h_list) < 4:
        raise ValueError("need at least four step sizes")
    hs, errs = [], []
    span = p.t_end - p.t0
    for h in h_list:
        n = int(round(span / h))
        hs.append(span / n)
        errs.append(endpoint_error(scheme, replace(p, n_steps=n), exact))
    if min(errs) == 0.0:
        return None
    slope, _ = np.polyfit(np.log(hs), np.log(errs), 1)
    return float(slope)


def order_table(h_list=(1 / 8, 1 / 16, 1 / 32, 1 / 64, 1 / 128), rate=-2.0):
    """Rows ``(scheme, h, error, slope)`` for u' = rate * u, u(0) = 1 on [0, 1]."""
    p = OdeProblem(lambda t, u: rate * u, 0.0, np.array(1.0), 1.0, 1)

    def exact(t):
        return np.exp(rate * t)

    rows = []
    for name, scheme in SCHEMES.items():
        slope = convergence_order(scheme, p, exact, h_list)
        for h in h_list:
            q = replace(p, n_steps=int(round(1 / h)))
            rows.append((name, h, endpoint_error(scheme, q, exact), slope))
    return rows


def gradient_field(model, y):
    """The autonomous field f(t, u) = grad_u L(u, y)."""
    return lambda t, u: ad.loss_gradient(model, u, y)


def fgsm_correspondence_demo(model, x, y, epsilon):
    """One Euler step of the loss-gradient field versus ``x + epsilon * grad``.

    Both outputs are returned; they agree bit for bit.
    """
    x = np.asarray(x, dtype=np.float64)
    field = gradient_field(model, y)
    if epsilon > 0:
        euler_step = euler(OdeProblem(field, 0.0, x, float(epsilon), 1)).final
    else:
        # empty interval: the zero-length Euler step
        euler_step = x + 0.0 * field(0.0, x)
    unsigned_fgsm = x + epsilon * ad.loss_gradient(model, x, y)
    return euler_step, unsigned_fgsm
