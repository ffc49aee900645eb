"""Queue-size jump process induced by routing decisions.

Each class contributes four moves per node:

    ask  +q  sellers provide         rate lam * p_sell
    ask  -q  buyers consume          rate lam * (1 - p_buy) + lam_minus
    bid  +q  buyers provide          rate lam * p_buy
    bid  -q  sellers consume         rate lam * (1 - p_sell) + lam_minus

Moves that would leave the lattice, or consume a queue no longer than the
order, are censored.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.sparse.csgraph import connected_components

from .model import DecisionField, MarketConfig, _TOL

EVENT_KINDS = ("lp_sell", "lc_sell", "lp_buy", "lc_buy")


class ChainError(RuntimeError):
    pass


def move_rates(decisions: DecisionField, config: MarketConfig):
    """List of ``(class, kind, di, dj, rate)`` with censored rates zeroed."""
    n = config.n
    X, Y = config.grids()
    out = []
    for j, k in enumerate(config.classes):
        s, q = config.steps(j), k.q
        ps, pb = decisions.p_sell[j], decisions.p_buy[j]
        table = (
            ("lp_sell", s, 0, k.lam * ps),
            ("lc_buy", -s, 0, np.where(X > q + _TOL, k.lam * (1 - pb) + k.lam_minus, 0.0)),
            ("lp_buy", 0, s, k.lam * pb),
            ("lc_sell", 0, -s, np.where(Y > q + _TOL, k.lam * (1 - ps) + k.lam_minus, 0.0)),
        )
        for kind, di, dj, rate in table:
            r = np.zeros((n, n))
            wi = slice(max(0, -di), n - max(0, di))
            wj = slice(max(0, -dj), n - max(0, dj))
            r[wi, wj] = np.broadcast_to(rate, (n, n))[wi, wj]
            out.append((j, kind, di, dj, r))
    return out


def build_generator(decisions: DecisionField, config: MarketConfig) -> sp.csr_matrix:
    """Sparse generator over ``n * n`` states (row-major ``[ask, bid]``)."""
    n = config.n
    idx = np.arange(n * n).reshape(n, n)
    rows, cols, vals = [], [], []
    total = np.zeros((n, n))
    for _, _, di, dj, r in move_rates(decisions, config):
        wi = slice(max(0, -di), n - max(0, di))
        wj = slice(max(0, -dj), n - max(0, dj))
        ti = slice(wi.start + di, wi.stop + di)
        tj = slice(wj.start + dj, wj.stop + dj)
        rows.append(idx[wi, wj].ravel())
        cols.append(idx[ti, tj].ravel())
        vals.append(r[wi, wj].ravel())
        total += r
    if np.any(total <= 0):
        a, b = np.argwhere(total <= 0)[0]
        raise ChainError(f"absorbing state at ask={(a + 1) * config.h}, bid={(b + 1) * config.h}")
    rows.append(idx.ravel())
    cols.append(idx.ravel())
    vals.append(-total.ravel())
    G = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(n * n, n * n))
    G.eliminate_zeros()
    return G


def recurrent_class(G: sp.spmatrix) -> np.ndarray:
    """Boolean mask of the unique closed communicating class.

    Raises if the chain has several closed classes.
    """
    ncomp, labels = connected_components(G, directed=True, connection="strong")
    A = G.tocoo()
    off = A.row != A.col
    leaving = np.zeros(ncomp, bool)
    cross = off & (labels[A.row] != labels[A.col]) & (A.data > 0)
    leaving[labels[A.row[cross]]] = True
    closed = np.flatnonzero(~leaving)
    if len(closed) != 1:
        raise ChainError(f"{len(closed)} closed classes; the stationary measure is not unique")
    return labels == closed[0]


def _direct(G, keep):
    sub = G[keep][:, keep].T.tolil()
    m = sub.shape[0]
    sub[0, :] = np.ones(m)
    b = np.zeros(m)
    b[0] = 1.0
    A = sub.tocsc()
    lu = spla.splu(A, permc_spec="MMD_AT_PLUS_A")
    x = lu.solve(b)
    for _ in range(3):
        x = x + lu.solve(b - A @ x)
    return x


def _power(G, keep, tol, max_iter, x0=None):
    sub = G[keep][:, keep].tocsr()
    lam = float(-sub.diagonal().min()) * 1.05
    T = (sp.identity(sub.shape[0], format="csr") + sub / lam).T.tocsr()
    x = np.full(sub.shape[0], 1.0 / sub.shape[0]) if x0 is None else x0.copy()
    for it in range(max_iter):
        y = T @ x
        y /= y.sum()
        if it % 50 == 0 and np.abs(y - x).sum() < tol:
            return y, it
        x = y
    raise ChainError(f"power iteration stalled, last step change {np.abs(y - x).sum():.3e}")


def stationary_measure(G: sp.spmatrix, n: int | None = None, method: str = "direct",
                       tol: float = 1e-13, max_iter: int = 2_000_000) -> np.ndarray:
    """Solve ``m G = 0``, ``sum(m) = 1``.

    Parameters
    ----------
    G : sparse generator
    n : int, optional
        Reshape the result to ``(n, n)``.
    method : {"direct", "power"}
        Sparse LU with iterative refinement, or uniformized power iteration
        stopped when the step change in l1 falls below ``tol``.

    Transient states get zero mass.
    """
    keep = recurrent_class(G)
    if method == "direct":
        x = _direct(G, keep)
    elif method == "power":
        x, _ = _power(G, keep, tol, max_iter)
    else:
        raise ValueError(f"unknown method {method!r}")
    x = np.clip(x, 0.0, None)
    x /= x.sum()
    m = np.zeros(G.shape[0])
    m[keep] = x
    return m.reshape(n, n) if n else m


def generator_residual(m: np.ndarray, G: sp.spmatrix) -> float:
    """``|| m G ||_1``."""
    return float(np.abs(G.T @ m.ravel()).sum())


def total_variation(a: np.ndarray, b: np.ndarray) -> float:
    return 0.5 * float(np.abs(np.asarray(a) - np.asarray(b)).sum())


def embed(m: np.ndarray, n: int) -> np.ndarray:
    """Zero-pad a measure on a smaller lattice to ``(n, n)``."""
    out = np.zeros((n, n))
    out[: m.shape[0], : m.shape[1]] = m
    return out


@dataclass
class Trajectory:
    """Event-by-event path. ``ask[k], bid[k]`` is the state after event ``k``."""

    time: np.ndarray
    ask: np.ndarray
    bid: np.ndarray
    kind: np.ndarray
    cls: np.ndarray
    price: np.ndarray
    start: tuple

    def occupation(self, config: MarketConfig) -> np.ndarray:
        """Time-weighted empirical measure over the lattice."""
        n, h = config.n, config.h
        a = np.concatenate([[self.start[0]], self.ask[:-1]])
        b = np.concatenate([[self.start[1]], self.bid[:-1]])
        dt = np.diff(np.concatenate([[0.0], self.time]))
        ia = np.rint(a / h).astype(int) - 1
        ib = np.rint(b / h).astype(int) - 1
        occ = np.zeros((n, n))
        np.add.at(occ, (ia, ib), dt)
        return occ / occ.sum()


def simulate(decisions: DecisionField, config: MarketConfig, n_events: int, seed: int = 0,
             start: tuple | None = None) -> Trajectory:
    """Exact event-driven simulation with a seeded generator."""
    n, h = config.n, config.h
    moves = move_rates(decisions, config)
    R = np.stack([r.ravel() for *_, r in moves], axis=1)
    total = R.sum(1)
    if np.any(total <= 0):
        raise ChainError("absorbing state")
    cum = np.cumsum(R, axis=1) / total[:, None]
    shift = np.array([di * n + dj for _, _, di, dj, _ in moves])
    kind_code = np.array([EVENT_KINDS.index(kind) for _, kind, _, _, _ in moves])
    cls = np.array([j for j, *_ in moves])
    if start is None:
        mid = (n // 2) * h
        start = (mid, mid)
    state = config.index(start[0]) * n + config.index(start[1])
    rng = np.random.default_rng(seed)
    expo = rng.standard_exponential(n_events)
    unif = rng.random(n_events)
    states = np.empty(n_events, np.int64)
    events = np.empty(n_events, np.int64)
    cum_l = cum.tolist()
    rate_l = total.tolist()
    shift_l = shift.tolist()
    waits = np.empty(n_events)
    m = len(moves)
    for k in range(n_events):
        row = cum_l[state]
        u = unif[k]
        e = 0
        while e < m - 1 and row[e] <= u:
            e += 1
        waits[k] = expo[k] / rate_l[state]
        state += shift_l[e]
        states[k] = state
        events[k] = e
    ask = (states // n + 1) * h
    bid = (states % n + 1) * h
    prev_a = np.concatenate([[start[0]], ask[:-1]])
    prev_b = np.concatenate([[start[1]], bid[:-1]])
    kinds = kind_code[events]
    classes = cls[events]
    q = np.array([config.classes[j].q for j in range(len(config.classes))])[classes]
    P, d = config.P, config.delta
    price = np.full(n_events, np.nan)
    sell = kinds == EVENT_KINDS.index("lc_sell")
    buy = kinds == EVENT_KINDS.index("lc_buy")
    price[sell] = P - d * q[sell] / (prev_b[sell] - q[sell])
    price[buy] = P + d * q[buy] / (prev_a[buy] - q[buy])
    return Trajectory(np.cumsum(waits), ask, bid, kinds, classes, price, tuple(start))
