"""Domain types, execution prices, routing predicates and boundary rules.

Arrays over the lattice are shaped ``(n, n)`` and indexed ``[ask, bid]``;
index ``i`` stands for queue size ``(i + 1) * h``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from functools import reduce
from math import gcd

import numpy as np

_TOL = 1e-9


class DomainError(ValueError):
    """Raised when a price is requested at a queue size that cannot trade."""


@dataclass(frozen=True)
class AgentClass:
    """One trader population.

    Parameters
    ----------
    q : float
        Order size.
    lam : float
        Intensity of order-routed (strategic) arrivals, per side.
    lam_minus : float
        Intensity of non-routed arrivals, which always consume, per side.
    c : float
        Waiting cost per share and unit time.
    label : str
        Free-form identifier.
    """

    q: float
    lam: float
    lam_minus: float
    c: float
    label: str = "class"

    def __post_init__(self):
        if not self.q > 0:
            raise ValueError(f"order size must be positive, got {self.q}")
        if self.lam < 0 or self.lam_minus < 0:
            raise ValueError("intensities must be nonnegative")
        if not self.c > 0:
            raise ValueError(f"waiting cost must be positive, got {self.c}")
        if not self.lam + self.lam_minus > 0:
            raise ValueError("class has no arrivals")

    @property
    def total_intensity(self) -> float:
        return self.lam + self.lam_minus


def lattice_step(sizes) -> float:
    """Greatest common divisor of positive real order sizes (via rationals)."""
    fr = [Fraction(s).limit_denominator(10**6) for s in sizes]
    den = reduce(lambda a, b: a * b // gcd(a, b), (f.denominator for f in fr))
    num = reduce(gcd, (int(f * den) for f in fr))
    return num / den


@dataclass(frozen=True)
class MarketConfig:
    """Market and solver settings.

    ``q_max`` is rounded to a multiple of the lattice step. ``q_max=None``
    picks ``40 * max(q)``.
    """

    classes: tuple
    P: float = 100.0
    delta: float = 2.0
    q_max: float | None = None
    tol: float = 1e-9
    max_iterations: int = 10_000
    omega: float = 0.5
    h: float = field(init=False)
    n: int = field(init=False)

    def __post_init__(self):
        classes = tuple(self.classes)
        if not 1 <= len(classes) <= 2:
            raise ValueError("one or two agent classes are supported")
        if not self.delta > 0:
            raise ValueError("market depth must be positive")
        if not self.P > self.delta:
            raise ValueError("fair price must exceed the market depth")
        if not 0 < self.omega <= 1:
            raise ValueError("relaxation weight must lie in (0, 1]")
        h = lattice_step([k.q for k in classes])
        for k in classes:
            r = k.q / h
            if abs(r - round(r)) > _TOL:
                raise ValueError(f"order size {k.q} is not a multiple of the lattice step {h}")
        qmax = 40 * max(k.q for k in classes) if self.q_max is None else self.q_max
        n = int(round(qmax / h))
        if abs(n * h - qmax) > _TOL * max(1.0, qmax):
            raise ValueError(f"q_max={qmax} is not a multiple of the lattice step {h}")
        if n * h <= 2 * max(k.q for k in classes):
            raise ValueError("q_max too small for the order sizes")
        object.__setattr__(self, "classes", classes)
        object.__setattr__(self, "q_max", n * h)
        object.__setattr__(self, "h", h)
        object.__setattr__(self, "n", n)

    @property
    def sizes(self) -> np.ndarray:
        """Queue sizes ``h, 2h, ..., q_max``."""
        return self.h * np.arange(1, self.n + 1)

    def grids(self):
        """Ask and bid size grids, each shaped ``(n, n)``."""
        Q = self.sizes
        return np.meshgrid(Q, Q, indexing="ij")

    def steps(self, i: int) -> int:
        """Order size of class ``i`` in lattice units."""
        return int(round(self.classes[i].q / self.h))

    def eta(self, i: int = 0) -> float:
        k = self.classes[i]
        if k.lam_minus <= 0:
            raise ValueError("eta needs a positive non-routed intensity")
        return k.c / (self.delta * k.q * k.lam_minus)

    def with_qmax(self, q_max: float) -> "MarketConfig":
        return MarketConfig(self.classes, self.P, self.delta, q_max, self.tol,
                            self.max_iterations, self.omega)

    def index(self, Q: float) -> int:
        i = int(round(Q / self.h)) - 1
        if not 0 <= i < self.n or abs((i + 1) * self.h - Q) > _TOL:
            raise ValueError(f"{Q} is not a lattice size")
        return i


def buy_price(Qa, q, P, delta):
    """Execution price of a consuming buy of size ``q`` against ask size ``Qa``."""
    Qa = np.asarray(Qa, dtype=float)
    if np.any(Qa <= q):
        raise DomainError(f"buy price undefined for ask size <= order size {q}")
    out = P + delta * q / (Qa - q)
    return out if out.ndim else float(out)


def sell_price(Qb, q, P, delta):
    """Execution price of a consuming sell of size ``q`` against bid size ``Qb``."""
    Qb = np.asarray(Qb, dtype=float)
    if np.any(Qb <= q):
        raise DomainError(f"sell price undefined for bid size <= order size {q}")
    out = P - delta * q / (Qb - q)
    return out if out.ndim else float(out)


def _safe_buy(Qa, q, P, delta):
    # +inf where no trade is possible, used for routing comparisons
    with np.errstate(divide="ignore"):
        return np.where(Qa > q + _TOL, P + delta * q / np.where(Qa > q + _TOL, Qa - q, 1.0), np.inf)


def _safe_sell(Qb, q, P, delta):
    with np.errstate(divide="ignore"):
        return np.where(Qb > q + _TOL, P - delta * q / np.where(Qb > q + _TOL, Qb - q, 1.0), -np.inf)


def lp_buy_indicator(v_after, Qa, q, P, delta) -> bool:
    """True when joining the bid (value ``v_after`` at ``(Qa, Qb + q)``) beats buying now."""
    return bool(v_after < _safe_buy(np.asarray(Qa, float), q, P, delta))


def lp_sell_indicator(u_after, Qb, q, P, delta) -> bool:
    """True when joining the ask (value ``u_after`` at ``(Qa + q, Qb)``) beats selling now."""
    return bool(u_after > _safe_sell(np.asarray(Qb, float), q, P, delta))


@dataclass(frozen=True)
class ValueField:
    """Seller values ``u[i]`` and buyer values ``v[i]`` per class."""

    u: tuple
    v: tuple


REGION_LABELS = ("++", "+-", "-+", "--")  # (seller, buyer): + provides, - consumes


@dataclass(frozen=True)
class DecisionField:
    """Routing decisions per class.

    ``p_sell[i]`` and ``p_buy[i]`` hold the probability of providing
    liquidity at each node. Pure equilibria have entries in {0, 1}; the
    solver may leave a handful of contested nodes strictly inside.
    """

    p_sell: tuple
    p_buy: tuple

    @property
    def lp_sell(self):
        return tuple(p >= 0.5 for p in self.p_sell)

    @property
    def lp_buy(self):
        return tuple(p >= 0.5 for p in self.p_buy)

    @property
    def lc_sell(self):
        return tuple(~a for a in self.lp_sell)

    @property
    def lc_buy(self):
        return tuple(~a for a in self.lp_buy)

    def regions(self, i: int = 0) -> np.ndarray:
        """Per-node region code for class ``i``: 0 '++', 1 '+-', 2 '-+', 3 '--'."""
        s, b = self.lp_sell[i], self.lp_buy[i]
        return (~s).astype(int) * 2 + (~b).astype(int)

    def combined_regions(self) -> np.ndarray:
        """Two-class region code ``4 * r1 + r2`` (one class: same as ``regions(0)``)."""
        if len(self.p_sell) == 1:
            return self.regions(0)
        return 4 * self.regions(0) + self.regions(1)

    def mixed_count(self) -> int:
        return int(sum(((p > 0) & (p < 1)).sum() for p in self.p_sell + self.p_buy))


def forced_masks(config: MarketConfig, i: int):
    """Boundary-forced decisions for class ``i``.

    Returns ``(sell, buy)`` arrays holding 1.0 (forced provide), 0.0 (forced
    consume) or NaN (free). A thin opposite queue forces providing; an
    insertion past ``q_max`` is forbidden. The thin-queue rule wins in the
    corners so that no consumption at a non-positive price is ever routed.
    """
    n, s = config.n, config.steps(i)
    q = config.classes[i].q
    X, Y = config.grids()
    fs = np.full((n, n), np.nan)
    fb = np.full((n, n), np.nan)
    fs[n - s:, :] = 0.0
    fb[:, n - s:] = 0.0
    fs[Y <= q + _TOL] = 1.0
    fb[X <= q + _TOL] = 1.0
    return fs, fb


def apply_boundary(decision: DecisionField, config: MarketConfig) -> DecisionField:
    """Overwrite boundary nodes with their forced decisions."""
    ps, pb = [], []
    for i in range(len(config.classes)):
        fs, fb = forced_masks(config, i)
        ps.append(np.where(np.isnan(fs), decision.p_sell[i], fs))
        pb.append(np.where(np.isnan(fb), decision.p_buy[i], fb))
    return DecisionField(tuple(ps), tuple(pb))
