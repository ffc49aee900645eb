"""First-order switching curves and their numerical counterparts.

Below the diagonal (ask longer than bid) sellers stop providing on the curve
M0 and buyers stop providing on the curve M1. Coordinates are ``(x, y)`` =
(ask size, bid size). Curves above the diagonal are mirror images.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from .model import DecisionField, MarketConfig

log = logging.getLogger(__name__)


class FrontierError(ValueError):
    pass


@dataclass(frozen=True)
class FrontierCurve:
    kind: str
    points: np.ndarray  # shape (m, 2): columns x, y

    def mirrored(self) -> "FrontierCurve":
        return FrontierCurve(self.kind, self.points[:, ::-1].copy())

    def __len__(self):
        return len(self.points)


def _params(config, i):
    k = config.classes[i]
    if k.lam_minus <= 0:
        raise FrontierError("first-order curves need a positive non-routed intensity")
    return k.q, k.lam, k.lam_minus, config.eta(i), config.delta


def x0_star(q: float, eta: float) -> float:
    """Diagonal point of M0: root of ``eta * x = 2 / (x - q)`` above ``q``."""
    if not eta > 0:
        raise FrontierError("eta must be positive")
    return (q + np.sqrt(q * q + 8.0 / eta)) / 2.0


def l_of(x0, q: float, eta: float):
    """Bid coordinate of M0 above ask coordinate ``x0``."""
    x0 = np.asarray(x0, dtype=float)
    g = eta * x0 - 1.0 / (x0 - q)
    if np.any(g <= 0):
        raise FrontierError("x0 below the diagonal point of M0")
    return q + 1.0 / g


def m0_curve(config: MarketConfig, x0_values, i: int = 0) -> FrontierCurve:
    q, _, _, eta, _ = _params(config, i)
    x0 = np.asarray(x0_values, dtype=float)
    if np.any(x0 < x0_star(q, eta) * (1 - 1e-12)):
        raise FrontierError("x0 below the diagonal point of M0")
    return FrontierCurve("M0", np.column_stack([x0, l_of(x0, q, eta)]))


@dataclass(frozen=True)
class Characteristic:
    """``f(y) = C y**-a - b/(a-1) / y - d/(a+1) * y`` along ``x = y + k``."""

    x0: float
    k: float
    a: float
    b: float
    d: float
    C: float

    def __call__(self, y):
        y = np.asarray(y, dtype=float)
        return self.C * y ** (-self.a) - self.b / (self.a - 1) / y - self.d / (self.a + 1) * y

    def derivative(self, y):
        y = np.asarray(y, dtype=float)
        return -self.a * self.C * y ** (-self.a - 1) + self.b / (self.a - 1) / y**2 - self.d / (self.a + 1)

    def ode_residual(self, y):
        """``f' + a f / y + b / y**2 + d`` (zero up to rounding)."""
        y = np.asarray(y, dtype=float)
        return self.derivative(y) + self.a / y * self(y) + self.b / y**2 + self.d


def characteristic_constant(x0, lo, a, b, d):
    """Constant making ``f(lo) = -f(x0)``.

    The integration constant follows from integrating the ODE; the coefficient
    of the linear term is ``d / (a + 1)``.
    """
    num = b / (a - 1) * (1.0 / x0 + 1.0 / lo) + d / (a + 1) * (x0 + lo)
    return num / (x0 ** (-a) + lo ** (-a))


def characteristic_solution(x0: float, config: MarketConfig, i: int = 0) -> Characteristic:
    q, lam, lm, eta, delta = _params(config, i)
    lo = float(l_of(x0, q, eta))
    a = 1.0 + lam / lm
    b = delta * a
    d = -delta * eta
    return Characteristic(float(x0), float(x0 - lo), a, b, d, characteristic_constant(x0, lo, a, b, d))


def m1_point(x0: float, config: MarketConfig, i: int = 0, y_max: float | None = None, step: float | None = None):
    """First root ``y1 >= l(x0)`` of ``f(y1) = delta / (y1 + k - q)``, or None."""
    q, _, _, eta, delta = _params(config, i)
    f = characteristic_solution(x0, config, i)
    lo = x0 - f.k
    y_max = config.q_max if y_max is None else y_max
    step = config.h if step is None else step
    g = lambda y: f(y) - delta / (y + f.k - q)
    ys = np.arange(lo, y_max + step / 2, step)
    if len(ys) < 2:
        return None
    gs = g(ys)
    flips = np.flatnonzero(np.sign(gs[:-1]) * np.sign(gs[1:]) <= 0)
    if len(flips) == 0:
        log.debug("no M1 root on the characteristic through x0=%g", x0)
        return None
    if len(flips) > 1:
        log.debug("%d M1 roots on the characteristic through x0=%g; keeping the first", len(flips), x0)
    j = flips[0]
    if gs[j] == 0:
        y1 = ys[j]
    else:
        y1 = brentq(g, ys[j], ys[j + 1], xtol=1e-13, rtol=1e-14)
    return float(y1 + f.k), float(y1)


def m1_curve(config: MarketConfig, x0_values, i: int = 0) -> FrontierCurve:
    pts = [m1_point(x0, config, i) for x0 in x0_values]
    pts = [p for p in pts if p is not None]
    return FrontierCurve("M1", np.array(pts, dtype=float).reshape(-1, 2))


def numeric_switches(decisions: DecisionField, config: MarketConfig, i: int = 0):
    """Numeric P->C (sellers) and C->P (buyers) curves below the diagonal.

    Along each line ``x - y = const`` the first seller switch from providing
    to consuming, and the first buyer switch after it, are recorded as the
    midpoint between the two lattice nodes.
    """
    n, h = config.n, config.h
    s_lp = decisions.lp_sell[i]
    b_lp = decisions.lp_buy[i]
    m0, m1 = [], []
    for off in range(n):
        ia = np.arange(off, n)
        ib = ia - off
        s = s_lp[ia, ib]
        b = b_lp[ia, ib]
        first = None
        for t in range(len(ia) - 1):
            if s[t] and not s[t + 1]:
                first = t
                m0.append(((ia[t] + 1.5) * h, (ib[t] + 1.5) * h))
                break
        if first is None:
            continue
        for t in range(first, len(ia) - 1):
            if b[t] and not b[t + 1]:
                m1.append(((ia[t] + 1.5) * h, (ib[t] + 1.5) * h))
                break
    return (FrontierCurve("numeric-P->C", np.array(m0, float).reshape(-1, 2)),
            FrontierCurve("numeric-C->P", np.array(m1, float).reshape(-1, 2)))


def _point_segment(p, a, b):
    ab = b - a
    L = float(ab @ ab)
    t = 0.0 if L == 0 else min(1.0, max(0.0, float((p - a) @ ab) / L))
    return float(np.linalg.norm(p - (a + t * ab)))


def boundary_distance(numeric: FrontierCurve, analytic: FrontierCurve, unit: float = 1.0):
    """Mean and max distance from numeric points to the analytic polyline.

    Distances are divided by ``unit`` (pass the lattice step for grid units).
    """
    if len(numeric) == 0 or len(analytic) == 0:
        raise FrontierError("empty curve")
    A = analytic.points
    d = []
    for p in numeric.points:
        if len(A) == 1:
            d.append(float(np.linalg.norm(p - A[0])))
        else:
            d.append(min(_point_segment(p, A[k], A[k + 1]) for k in range(len(A) - 1)))
    d = np.array(d) / unit
    return {"mean": float(d.mean()), "max": float(d.max()), "count": int(len(d))}


def second_order_residual(values, decisions: DecisionField, config: MarketConfig, i: int = 0):
    """Residuals of the local second-order equations, per region.

    Central differences in the interior, one-sided at the lattice edges.
    Returns ``(res_u, res_v)`` grids (NaN where a neighbor is missing).
    """
    k = config.classes[i]
    lam, lm, q, c = k.lam, k.lam_minus, k.q, k.c
    Lam = lam + lm
    h, P, delta = config.h, config.P, config.delta
    X, Y = config.grids()
    reg = decisions.regions(i)
    out = []
    for side, w in (("u", values.u[i]), ("v", values.v[i])):
        wx, wy = np.gradient(w, h, h, edge_order=2)
        wxx = np.gradient(wx, h, axis=0, edge_order=2)
        wyy = np.gradient(wy, h, axis=1, edge_order=2)
        lap = wxx + wyy
        res = np.full(w.shape, np.nan)
        with np.errstate(divide="ignore", invalid="ignore"):
            if side == "u":
                pb = P + delta * q / (X - q)
                for code, (r_cons, drift, diff) in {
                    0: (lm, lam - lm, lambda: q * (lm / X * wx + Lam / 2 * lap)),
                    2: (lm, -lm, lambda: q * (lm / X * wx + lm / 2 * lap + lam * wyy)),
                    1: (Lam, -lm, lambda: q * (Lam / X * wx + lm / 2 * lap + lam * wxx)),
                    3: (Lam, -Lam, lambda: q * (Lam / X * wx + Lam / 2 * lap)),
                }.items():
                    m = reg == code
                    r = r_cons / X * (pb - w) - c + drift * (wx + wy) + diff()
                    res[m] = r[m]
            else:
                ps = P - delta * q / (Y - q)
                for code, (r_cons, drift, diff) in {
                    0: (lm, lam - lm, lambda: q * (lm / Y * wy + Lam / 2 * lap)),
                    2: (Lam, -lm, lambda: q * (Lam / Y * wy + lm / 2 * lap + lam * wyy)),
                    1: (lm, -lm, lambda: q * (lm / Y * wy + lm / 2 * lap + lam * wxx)),
                    3: (Lam, -Lam, lambda: q * (Lam / Y * wy + Lam / 2 * lap)),
                }.items():
                    m = reg == code
                    r = r_cons / Y * (ps - w) + c + drift * (wx + wy) + diff()
                    res[m] = r[m]
        res[(X <= q) | (Y <= q)] = np.nan
        out.append(res)
    return tuple(out)
