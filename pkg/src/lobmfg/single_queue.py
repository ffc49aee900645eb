"""One-sided queue: entry decisions of sellers facing an exogenous service rate.

A seller arriving at queue size ``x`` joins when the value ``u(x)`` is
positive. Service at rate ``mu(x)`` fills the order with probability ``q/x``
at price ``P(x)``; waiting costs ``c q`` per unit time.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.optimize import brentq


class ConvergenceError(RuntimeError):
    def __init__(self, msg, residual=None, iterations=None):
        super().__init__(msg)
        self.residual = residual
        self.iterations = iterations


def step_intensity(mu1: float, mu2: float, S: float) -> Callable:
    """``mu1`` below the threshold ``S``, ``mu2`` from ``S`` on."""
    return lambda x: np.where(np.asarray(x) < S, mu1, mu2).astype(float)


def constant(value: float) -> Callable:
    return lambda x: np.full(np.shape(x), float(value))


@dataclass(frozen=True)
class SingleQueueParams:
    """Parameters of the one-sided model.

    ``mu`` and ``payoff`` are vectorized callables of the queue size.
    """

    lam: float
    mu: Callable
    payoff: Callable
    c: float
    q: float
    x_max: float
    tol: float = 1e-10
    omega: float = 0.5
    max_iterations: int = 2_000_000

    def __post_init__(self):
        if not (self.q > 0 and self.c > 0 and self.lam > 0):
            raise ValueError("q, c and lam must be positive")
        r = self.x_max / self.q
        if abs(r - round(r)) > 1e-9 or round(r) < 2:
            raise ValueError("x_max must be a multiple of q (at least 2q)")
        if np.any(self.mu(self.grid) >= self.lam):
            raise ValueError("arrival intensity must exceed the service intensity")

    @property
    def grid(self) -> np.ndarray:
        return self.q * np.arange(1, int(round(self.x_max / self.q)) + 1)


@dataclass(frozen=True)
class SingleQueueValue:
    x: np.ndarray
    u: np.ndarray
    iterations: int
    residual: float

    def sign_switches(self):
        """Sizes where the sign of ``u`` changes, as (midpoint, '+-' or '-+')."""
        pos = self.u > 0
        out = []
        for k in np.flatnonzero(pos[1:] != pos[:-1]):
            out.append((0.5 * (self.x[k] + self.x[k + 1]), "+-" if pos[k] else "-+"))
        return out


def _iterate(update, u0, tol, omega, max_iterations):
    u = u0.copy()
    for it in range(1, max_iterations + 1):
        new = update(u)
        if not np.all(np.isfinite(new)):
            raise ConvergenceError("non-finite value", iterations=it)
        res = float(np.abs(new - u).max())
        u = (1 - omega) * u + omega * new
        if res < tol:
            return u, it, res
    raise ConvergenceError(f"no convergence after {max_iterations} sweeps", res, max_iterations)


def _select(u, lam, up, base, mu, p, mu_bar, floor):
    """Entry-consistent update of ``(lam * theta * up + base) / (lam * theta + mu)``.

    Entering (``theta = 1``) is kept when it leaves the value positive, staying
    out (``theta = 0``) when it leaves it nonpositive; when both are consistent
    the current sign decides. When neither is, newcomers are indifferent and
    randomize with the ``theta`` that makes the value exactly zero.
    Returns ``(value, theta)``.
    """
    den_in = lam + mu
    with np.errstate(divide="ignore", invalid="ignore"):
        u_in = np.where(den_in > 0, (base + lam * up) / np.where(den_in > 0, den_in, 1.0), -np.inf)
        dead = mu <= 0
        u_out = np.where(dead, np.maximum(u - p.c * p.q / (p.lam + mu_bar), floor),
                         base / np.where(dead, 1.0, mu))
        th_mix = np.where(lam * up != 0, -base / np.where(lam * up != 0, lam * up, 1.0), 0.0)
    ok_in = u_in > 0
    ok_out = u_out <= 0
    use_in = np.where(ok_in & ok_out, u > 0, ok_in)
    use_out = ~use_in & ok_out
    value = np.where(use_in, u_in, np.where(use_out, u_out, 0.0))
    theta = np.where(use_in, 1.0, np.where(use_out, 0.0, np.clip(th_mix, 0.0, 1.0)))
    return value, theta


def solve_single_queue(p: SingleQueueParams, u0: float | np.ndarray = 0.0) -> SingleQueueValue:
    """Damped value iteration of the one-sided equilibrium equation.

    Nodes where nobody enters and nothing is served only pay the waiting
    cost; they decrease by ``c q / (lam + max mu)`` per sweep and are floored at
    ``-c q x_max / lam``.
    """
    x = p.grid
    m = len(x)
    mu = p.mu(x)
    pay = p.payoff(x)
    floor = -p.c * p.q * p.x_max / p.lam
    mu_bar = float(mu.max())
    lam = np.full(m, p.lam)
    lam[-1] = 0.0

    def update(u):
        up = np.append(u[1:], 0.0)
        down = np.concatenate([[0.0], u[:-1]])
        base = mu * (p.q / x * pay + (1 - p.q / x) * down) - p.c * p.q
        return _select(u, lam, up, base, mu, p, mu_bar, floor)[0]

    u0 = np.broadcast_to(np.asarray(u0, float), (m,)).copy()
    u, it, res = _iterate(update, u0, p.tol, p.omega, p.max_iterations)
    return SingleQueueValue(x, u, it, res)


def first_order_switch_points(mu1: float, mu2: float, price, c: float, x_max: float = 1e6):
    """Roots of ``x c = mu P(x)`` for the two service levels.

    ``price`` is a constant or a callable of the queue size.
    """
    if callable(price):
        out = []
        for mu in (mu1, mu2):
            g = lambda x: x * c - mu * price(x)
            lo, hi = 1e-12, x_max
            if np.sign(g(lo)) == np.sign(g(hi)):
                raise ValueError(f"no root of x c = {mu} P(x) in (0, {x_max}]")
            out.append(brentq(g, lo, hi, xtol=1e-14, rtol=1e-14))
        return tuple(out)
    x1, x2 = mu1 * price / c, mu2 * price / c
    for v in (x1, x2):
        if not 0 < v <= x_max:
            raise ValueError("switch point outside (0, x_max]")
    return x1, x2


@dataclass(frozen=True)
class FifoValue:
    """``u[z, x]`` for position ``z`` in a queue of size ``x`` (NaN when ``z > x``)."""

    x: np.ndarray
    u: np.ndarray
    iterations: int
    residual: float

    def value(self, z: float, x: float) -> float:
        q = self.x[0]
        return float(self.u[int(round(z / q)) - 1, int(round(x / q)) - 1])


def solve_fifo(p: SingleQueueParams, u0: float = 0.0) -> FifoValue:
    """Damped iteration of the FIFO system; the entry decision reads ``u(x, x)``."""
    x = p.grid
    m = len(x)
    mu = p.mu(x)
    pay = p.payoff(x)
    iz, ix = np.meshgrid(np.arange(m), np.arange(m), indexing="ij")
    valid = iz <= ix
    floor = -p.c * p.q * p.x_max / p.lam
    mu_bar = float(mu.max())

    lam = np.full(m, p.lam)
    lam[-1] = 0.0
    diag = (np.arange(m), np.arange(m))

    def update(u):
        up = np.zeros_like(u)
        up[:, :-1] = u[:, 1:]
        served = np.zeros_like(u)
        served[1:, 1:] = u[:-1, :-1]
        served[0, :] = pay
        base = mu[None, :] * served - p.c * p.q
        # entry at queue size x is decided by the back-of-queue value u(x, x)
        d, theta = _select(u[diag], lam, up[diag], base[diag], mu, p, mu_bar, floor)
        rate = (lam * theta)[None, :]
        den = rate + mu[None, :]
        dead = den <= 0
        out = np.where(dead, np.maximum(u - p.c * p.q / (p.lam + mu_bar), floor),
                       (base + rate * up) / np.where(dead, 1.0, den))
        out[diag] = d
        return np.where(valid, out, 0.0)

    u0a = np.where(valid, float(u0), 0.0)
    u, it, res = _iterate(update, u0a, p.tol, p.omega, p.max_iterations)
    return FifoValue(x, np.where(valid, u, np.nan), it, res)
