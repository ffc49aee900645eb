"""Flow-weighted trade statistics under the stationary measure.

Seller side, class ``i`` (the buyer side mirrors it):

* consuming volume ``M-`` integrates ``(lam_i (1 - p_sell) + lam_i^-) q_i``;
* providing volume ``M+`` integrates ``gamma_i * sum_j xi_j``, where
  ``gamma_i`` is the class share of new ask liquidity and ``xi_j`` the rate
  at which class-``j`` consumers eat a unit share of the ask queue,
  ``(lam_j (1 - p_buy_j) + lam_j^-) q_j / Q_a``;
* prices weight the same integrands by the execution price paid.

With pure decisions the region-by-region table of class shares and traded
quantities is recovered exactly.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .model import DecisionField, MarketConfig, _TOL


class MetricsError(ValueError):
    pass


@dataclass(frozen=True)
class SideMetrics:
    lc_volume: float
    lp_volume: float
    lc_price: float
    lp_price: float
    average_price: float


@dataclass(frozen=True)
class TradeMetrics:
    """Per-class summary. Spreads are in price units; ``*_bps`` relative to P."""

    label: str
    sell: SideMetrics
    buy: SideMetrics
    spread: float
    spread_bps: float
    effective_spread: float

    def as_dict(self):
        return asdict(self)


def _check(measure, config):
    if measure.shape != (config.n, config.n):
        raise MetricsError(f"measure shape {measure.shape} does not match the lattice ({config.n}, {config.n})")


def _flows(decisions, config):
    X, Y = config.grids()
    out = []
    for j, k in enumerate(config.classes):
        q = k.q
        ps, pb = decisions.p_sell[j], decisions.p_buy[j]
        s_ok, b_ok = Y > q + _TOL, X > q + _TOL
        out.append(dict(
            sell_lc=np.where(s_ok, k.lam * (1 - ps) + k.lam_minus, 0.0),
            buy_lc=np.where(b_ok, k.lam * (1 - pb) + k.lam_minus, 0.0),
            sell_lp=k.lam * ps,
            buy_lp=k.lam * pb,
            sell_px=np.where(s_ok, config.P - config.delta * q / np.where(s_ok, Y - q, 1.0), 0.0),
            buy_px=np.where(b_ok, config.P + config.delta * q / np.where(b_ok, X - q, 1.0), 0.0),
        ))
    return out


def class_shares(decisions: DecisionField, config: MarketConfig, side: str = "sell"):
    """``gamma_i`` per node: share of class ``i`` in newly provided liquidity."""
    fl = _flows(decisions, config)
    key = f"{side}_lp"
    tot = sum(f[key] for f in fl)
    safe = np.where(tot > 0, tot, 1.0)
    return [np.where(tot > 0, f[key] / safe, 0.0) for f in fl]


def traded_quantity(decisions: DecisionField, config: MarketConfig, side: str = "sell"):
    """``xi_j`` per node: per-unit fill rate of resting liquidity from class ``j``."""
    X, Y = config.grids()
    out = []
    for f, k in zip(_flows(decisions, config), config.classes):
        if side == "sell":
            out.append(f["buy_lc"] * k.q / X)
        else:
            out.append(f["sell_lc"] * k.q / Y)
    return out


def lc_volume(measure, decisions, config, i: int, side: str = "sell") -> float:
    _check(measure, config)
    f = _flows(decisions, config)[i]
    return float((measure * f[f"{side}_lc"]).sum() * config.classes[i].q)


def lp_volume(measure, decisions, config, i: int, side: str = "sell") -> float:
    _check(measure, config)
    g = class_shares(decisions, config, side)[i]
    xi = sum(traded_quantity(decisions, config, side))
    return float((measure * g * xi).sum())


def _side(measure, decisions, config, i, side):
    fl = _flows(decisions, config)
    f = fl[i]
    q = config.classes[i].q
    lc_w = measure * f[f"{side}_lc"] * q
    Mm = float(lc_w.sum())
    own_px = f["sell_px"] if side == "sell" else f["buy_px"]
    pm = float((lc_w * own_px).sum() / Mm) if Mm > 0 else float("nan")
    g = class_shares(decisions, config, side)[i]
    xi = traded_quantity(decisions, config, side)
    other_px = [ff["buy_px"] if side == "sell" else ff["sell_px"] for ff in fl]
    Mp = float((measure * g * sum(xi)).sum())
    pp = float((measure * g * sum(x * p for x, p in zip(xi, other_px))).sum() / Mp) if Mp > 0 else float("nan")
    if Mm + Mp <= 0:
        raise MetricsError(f"class {i} has no {side} trades")
    avg = (pm * Mm + (pp * Mp if Mp > 0 else 0.0)) / (Mm + Mp)
    return SideMetrics(Mm, Mp, pm, pp, avg)


def effective_spread(measure, decisions, config, i: int) -> float:
    """``delta * E[q/Q_a | buy consumes] + delta * E[q/Q_b | sell consumes]``.

    Expectations are per transaction: stationary mass times consuming rate.
    """
    _check(measure, config)
    X, Y = config.grids()
    f = _flows(decisions, config)[i]
    q = config.classes[i].q
    wb = measure * f["buy_lc"]
    ws = measure * f["sell_lc"]
    if wb.sum() <= 0 or ws.sum() <= 0:
        raise MetricsError(f"class {i} never consumes on one side")
    return float(config.delta * ((wb * q / X).sum() / wb.sum() + (ws * q / Y).sum() / ws.sum()))


def trade_metrics(measure, decisions, config, i: int) -> TradeMetrics:
    _check(measure, config)
    sell = _side(measure, decisions, config, i, "sell")
    buy = _side(measure, decisions, config, i, "buy")
    psi = buy.average_price - sell.average_price
    return TradeMetrics(config.classes[i].label, sell, buy, psi, 1e4 * psi / config.P,
                        effective_spread(measure, decisions, config, i))


def mixed_metrics(per_class) -> dict:
    """Volume-weighted combination across classes."""
    def avg(side):
        w = [getattr(m, side).lc_volume + getattr(m, side).lp_volume for m in per_class]
        return sum(wi * getattr(m, side).average_price for wi, m in zip(w, per_class)) / sum(w)
    sell, buy = avg("sell"), avg("buy")
    return {"sell_average": sell, "buy_average": buy, "spread": buy - sell}


def all_metrics(measure, decisions, config):
    per = [trade_metrics(measure, decisions, config, i) for i in range(len(config.classes))]
    out = {"classes": [m.as_dict() for m in per]}
    if len(per) > 1:
        mix = mixed_metrics(per)
        mix["spread_bps"] = 1e4 * mix["spread"] / config.P
        out["mix"] = mix
    return out
