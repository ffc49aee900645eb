"""Equilibrium value functions and routing decisions.

For a fixed decision field the seller values ``u_i`` and buyer values ``v_i``
solve linear systems in generator form: at each node, for every active event
``e`` with rate ``r_e`` and continuation ``T_e``,

    sum_e r_e * (w - T_e) = payoff - cost.

Events whose target leaves the lattice, or which would trade at an undefined
price, are censored (nothing happens). All seller systems share one matrix, as
do all buyer systems; classes differ only through the constant cost term.

The equilibrium is a fixed point of "evaluate values, then best-respond". On
the lattice that map often has no pure fixed point: best response falls into
a short decision cycle. The cycle is resolved by letting the few contested
nodes randomize between providing and consuming, and solving the resulting
complementarity problem with a semismooth Newton method.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .model import (DecisionField, MarketConfig, ValueField, _safe_buy,
                    _safe_sell, _TOL, forced_masks)

log = logging.getLogger(__name__)


class EquilibriumError(RuntimeError):
    """Solver failure; ``info`` carries the diagnostics gathered so far."""

    def __init__(self, msg, info=None):
        super().__init__(msg)
        self.info = info or {}


@dataclass
class EquilibriumResult:
    values: ValueField
    decisions: DecisionField
    info: dict = field(default_factory=dict)


# ---------------------------------------------------------------------------
# linear systems


def _events(config: MarketConfig, dec: DecisionField, side: str):
    """Yield ``(rate, di, dj, factor, payoff_rate)`` for every move type."""
    X, Y = config.grids()
    P, d = config.P, config.delta
    for j, k in enumerate(config.classes):
        s, q = config.steps(j), k.q
        ps, pb = dec.p_sell[j], dec.p_buy[j]
        sell_ok = Y > q + _TOL
        buy_ok = X > q + _TOL
        r_slc = np.where(sell_ok, k.lam * (1 - ps) + k.lam_minus, 0.0)
        r_blc = np.where(buy_ok, k.lam * (1 - pb) + k.lam_minus, 0.0)
        r_slp = k.lam * ps
        r_blp = k.lam * pb
        if side == "u":
            fac = np.where(buy_ok, 1 - q / X, 0.0)
            pay = np.where(buy_ok, q / X * _safe_buy(X, q, P, d), 0.0)
            yield r_slc, 0, -s, None, None
            yield r_slp, s, 0, None, None
            yield r_blc, -s, 0, fac, r_blc * pay
            yield r_blp, 0, s, None, None
        else:
            fac = np.where(sell_ok, 1 - q / Y, 0.0)
            pay = np.where(sell_ok, q / Y * _safe_sell(Y, q, P, d), 0.0)
            yield r_blc, -s, 0, None, None
            yield r_blp, 0, s, None, None
            yield r_slc, 0, -s, fac, r_slc * pay
            yield r_slp, s, 0, None, None


def _window(n, di, dj):
    return slice(max(0, -di), n - max(0, di)), slice(max(0, -dj), n - max(0, dj))


def assemble(config: MarketConfig, dec: DecisionField, side: str):
    """Return ``(A, rhs0)``: sparse generator-form matrix and trade payoff.

    The right-hand side for class ``i`` is ``rhs0 - c_i q_i`` for sellers and
    ``rhs0 + c_i q_i`` for buyers (a buyer's value is a price to pay, so
    waiting makes it larger).
    """
    n = config.n
    idx = np.arange(n * n).reshape(n, n)
    diag = np.zeros((n, n))
    rhs = np.zeros((n, n))
    rows, cols, vals = [], [], []
    for rate, di, dj, fac, pay in _events(config, dec, side):
        wi, wj = _window(n, di, dj)
        r = np.zeros((n, n))
        r[wi, wj] = rate[wi, wj]
        diag += r
        w = r if fac is None else r * fac
        ti = slice(wi.start + di, wi.stop + di)
        tj = slice(wj.start + dj, wj.stop + dj)
        rows.append(idx[wi, wj].ravel())
        cols.append(idx[ti, tj].ravel())
        vals.append(-w[wi, wj].ravel())
        if pay is not None:
            rhs[wi, wj] += pay[wi, wj]
    rows.append(idx.ravel())
    cols.append(idx.ravel())
    vals.append(diag.ravel())
    A = sp.csc_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(n * n, n * n))
    return A, rhs


def _sign(side):
    return -1.0 if side == "u" else 1.0


def class_rhs(config, rhs0, side, i):
    k = config.classes[i]
    return (rhs0 + _sign(side) * k.c * k.q).ravel()


class PolicyEvaluator:
    """Solve the value systems for a decision field.

    Keeps one sparse LU per side and reuses it as a GMRES preconditioner for
    nearby decision fields; refactors when the preconditioned solve slows.
    """

    def __init__(self, config: MarketConfig, max_krylov: int = 40, symmetric: bool = False):
        self.config = config
        self.symmetric = symmetric
        self.max_krylov = max_krylov
        self.lu = {"u": None, "v": None}
        self.factorizations = 0
        self.krylov_iterations = 0

    def _factor(self, side, A):
        self.lu[side] = spla.splu(A, permc_spec="MMD_AT_PLUS_A")
        self.factorizations += 1

    def _solve(self, side, A, b, x0):
        lu = self.lu[side]
        if lu is not None and x0 is not None:
            M = spla.LinearOperator(A.shape, lu.solve)
            count = [0]

            def cb(_):
                count[0] += 1

            x, info = spla.gmres(A, b, x0=x0, M=M, rtol=1e-14, atol=0.0,
                                 restart=self.max_krylov, maxiter=1, callback=cb,
                                 callback_type="pr_norm")
            self.krylov_iterations += count[0]
            scale = max(1.0, np.abs(b).max())
            if np.abs(A @ x - b).max() < 1e-11 * scale:
                return x
        self._factor(side, A)
        return self.lu[side].solve(b)

    def __call__(self, dec: DecisionField, guess: ValueField | None = None,
                 refactor: bool = False) -> ValueField:
        n, nc = self.config.n, len(self.config.classes)
        out = {}
        for side in ("u",) if self.symmetric else ("u", "v"):
            A, rhs0 = assemble(self.config, dec, side)
            if refactor:
                self._factor(side, A)
            ws = []
            for i in range(nc):
                b = class_rhs(self.config, rhs0, side, i)
                x0 = None if guess is None else getattr(guess, side)[i].ravel()
                ws.append(self._solve(side, A, b, x0).reshape(n, n))
            out[side] = tuple(ws)
        if self.symmetric:
            out["v"] = tuple(2 * self.config.P - w.T for w in out["u"])
        return ValueField(out["u"], out["v"])


def evaluate(config: MarketConfig, dec: DecisionField) -> ValueField:
    """Exact values of a decision field (direct sparse solve)."""
    return PolicyEvaluator(config)(dec)


# ---------------------------------------------------------------------------
# best response


def margins(config: MarketConfig, values: ValueField):
    """Per class ``(sell, buy)`` margins of providing over consuming.

    Positive means providing is strictly better. NaN at boundary-forced nodes.
    """
    n = config.n
    X, Y = config.grids()
    P, d = config.P, config.delta
    out = []
    for i, k in enumerate(config.classes):
        s, q = config.steps(i), k.q
        fs, fb = forced_masks(config, i)
        u, v = values.u[i], values.v[i]
        ms = np.full((n, n), np.nan)
        mb = np.full((n, n), np.nan)
        with np.errstate(invalid="ignore"):
            ms[: n - s, :] = u[s:, :] - _safe_sell(Y[: n - s, :], q, P, d)
            mb[:, : n - s] = _safe_buy(X[:, : n - s], q, P, d) - v[:, s:]
        ms[~np.isnan(fs)] = np.nan
        mb[~np.isnan(fb)] = np.nan
        out.append((ms, mb))
    return out


def extract_decisions(values: ValueField, config: MarketConfig) -> DecisionField:
    """Pure best response to ``values``, boundary rules applied.

    Providing requires a strict gain; ties consume.
    """
    ps, pb = [], []
    for (ms, mb), (fs, fb) in zip(margins(config, values),
                                  (forced_masks(config, i) for i in range(len(config.classes)))):
        ps.append(np.where(np.isnan(fs), (ms > 0).astype(float), fs))
        pb.append(np.where(np.isnan(fb), (mb > 0).astype(float), fb))
    return DecisionField(tuple(ps), tuple(pb))


def _sweep(config, values, dec, side):
    A, rhs0 = assemble(config, dec, side)
    dg = A.diagonal()
    off = A - sp.diags(dg)
    out = []
    for i, w in enumerate(getattr(values, side)):
        b = class_rhs(config, rhs0, side, i)
        x = w.ravel()
        new = np.where(dg > 0, (b - off @ x) / np.where(dg > 0, dg, 1.0), x)
        if not np.all(np.isfinite(new)):
            raise EquilibriumError("non-finite value during sweep")
        out.append(new.reshape(w.shape))
    return tuple(out)


def update_u(values: ValueField, config: MarketConfig, dec: DecisionField | None = None):
    """One Jacobi sweep of the seller equations (decisions from ``values`` by default)."""
    dec = extract_decisions(values, config) if dec is None else dec
    return _sweep(config, values, dec, "u")


def update_v(values: ValueField, config: MarketConfig, dec: DecisionField | None = None):
    """One Jacobi sweep of the buyer equations."""
    dec = extract_decisions(values, config) if dec is None else dec
    return _sweep(config, values, dec, "v")


def fixed_point_residual(values: ValueField, dec: DecisionField, config: MarketConfig) -> float:
    """Max violation of the value equations under ``dec``."""
    res = 0.0
    for side in ("u", "v"):
        A, rhs0 = assemble(config, dec, side)
        for i, w in enumerate(getattr(values, side)):
            res = max(res, float(np.abs(A @ w.ravel() - class_rhs(config, rhs0, side, i)).max()))
    return res


def equilibrium_gap(values: ValueField, dec: DecisionField, config: MarketConfig) -> float:
    """Largest margin a player forgoes by following ``dec``.

    Zero for an equilibrium: pure nodes follow the sign of the margin and
    mixed nodes sit at zero margin.
    """
    gap = 0.0
    for (ms, mb), ps, pb in zip(margins(config, values), dec.p_sell, dec.p_buy):
        for m, p in ((ms, ps), (mb, pb)):
            ok = ~np.isnan(m)
            g = np.where(m > 0, (1 - p) * m, -p * m)
            if ok.any():
                gap = max(gap, float(g[ok].max()))
    return gap


# ---------------------------------------------------------------------------
# mixed refinement


def _continuation_gap(config, side, w, j, kind, node):
    """``lam_j * (T_consume - T_provide)`` for decision (j, kind) at node."""
    k = config.classes[j]
    s, q = config.steps(j), k.q
    a, b = node
    Qa, Qb = (a + 1) * config.h, (b + 1) * config.h
    P, d = config.P, config.delta
    if kind == "s":
        t_lp = w[a + s, b]
        t_lc = w[a, b - s] if side == "u" else (1 - q / Qb) * w[a, b - s] + q / Qb * (P - d * q / (Qb - q))
    else:
        t_lp = w[a, b + s]
        t_lc = w[a - s, b] if side == "v" else (1 - q / Qa) * w[a - s, b] + q / Qa * (P + d * q / (Qa - q))
    return k.lam * (t_lc - t_lp)


def _target(config, j, kind, node):
    s = config.steps(j)
    return (node[0] + s, node[1]) if kind == "s" else (node[0], node[1] + s)


def _members(entry, symmetric):
    """Decisions moved by one unknown: the seller and, if tied, the mirrored buyer."""
    j, kind, (a, b) = entry
    return [entry, (j, "b", (b, a))] if symmetric else [entry]


def mirror_decisions(dec: DecisionField) -> DecisionField:
    """Buyers copy the mirrored seller decisions."""
    return DecisionField(dec.p_sell, tuple(p.T.copy() for p in dec.p_sell))


class _LocalModel:
    """Exact values for decision fields that differ from a reference at few nodes.

    Changing decisions at a node only changes that row of each value system,
    so with ``A = A0 + E dR`` the Woodbury identity gives the solution from
    one factorization of ``A0`` and the columns ``Z = A0^-1 E``.
    """

    def __init__(self, config, dec0, symmetric):
        self.config = config
        self.symmetric = symmetric
        self.nodes = np.zeros(0, dtype=np.int64)
        self.pos = {}
        self.sides = ("u",) if symmetric else ("u", "v")
        self.lu, self.A0, self.b0, self.ref = {}, {}, {}, {}
        for side in self.sides:
            A0, r0 = assemble(config, dec0, side)
            self.A0[side] = A0.tocsr()
            self.lu[side] = spla.splu(A0, permc_spec="MMD_AT_PLUS_A")
            self.b0[side] = [class_rhs(config, r0, side, i) for i in range(len(config.classes))]
            self.ref[side] = (self.A0[side][self.nodes], np.zeros((config.n ** 2, 0)),
                              [self.lu[side].solve(b) for b in self.b0[side]],
                              [b[self.nodes] for b in self.b0[side]])
        self.K = {}

    def extend(self, nodes):
        """Make room for decision changes at ``nodes`` (flat indices)."""
        new = np.array(sorted(set(int(v) for v in nodes) - set(self.pos)), dtype=np.int64)
        if not len(new):
            return
        m = self.config.n ** 2
        E = np.zeros((m, len(new)))
        E[new, np.arange(len(new))] = 1.0
        for k, v in enumerate(new):
            self.pos[int(v)] = len(self.nodes) + k
        self.nodes = np.concatenate([self.nodes, new])
        for side in self.sides:
            _, Z, y0, _ = self.ref[side]
            Z = np.ascontiguousarray(np.hstack([Z, self.lu[side].solve(E)]))
            self.ref[side] = (self.A0[side][self.nodes], Z, y0, [b[self.nodes] for b in self.b0[side]])

    def __call__(self, dec):
        n, P = self.config.n, self.config.P
        out = {}
        for side in self.sides:
            R0, Z, y0, b0 = self.ref[side]
            A, r = assemble(self.config, dec, side)
            dR = A.tocsr()[self.nodes] - R0
            K = np.eye(len(self.nodes)) + (dR @ Z)
            self.K[side] = K
            ws = []
            for i in range(len(self.config.classes)):
                db = class_rhs(self.config, r, side, i)[self.nodes] - b0[i]
                y = y0[i] + Z @ db
                ws.append((y - Z @ np.linalg.solve(K, dR @ y)).reshape(n, n))
            out[side] = tuple(ws)
        if self.symmetric:
            out["v"] = tuple(2 * P - w.T for w in out["u"])
        return ValueField(out["u"], out["v"])

    def inverse_rows(self, side, rows):
        """Rows ``rows`` of ``A^-1 E`` for the last evaluated decision field."""
        Z = self.ref[side][1]
        return np.linalg.solve(self.K[side].T, Z[rows].T).T


def _jacobian(config, local, values, C, symmetric):
    """Derivative of the contested margins with respect to the contested unknowns."""
    n = config.n
    cols = [m for e in C for m in _members(e, symmetric)]
    owner = np.repeat(np.arange(len(C)), 2 if symmetric else 1)
    where = [local.pos[nd[0] * n + nd[1]] for _, _, nd in cols]
    J = np.zeros((len(C), len(C)))
    for side in local.sides:
        ws = getattr(values, side)
        for j2 in range(len(config.classes)):
            rr = [r for r, (c2, k2, _) in enumerate(C) if c2 == j2 and (k2 == "s") == (side == "u")]
            if not rr:
                continue
            tg = [_target(config, *C[r]) for r in rr]
            W = local.inverse_rows(side, [t[0] * n + t[1] for t in tg])[:, where]
            gap = np.array([_continuation_gap(config, side, ws[j2], j, kind, node) for j, kind, node in cols])
            full = -W * gap[None, :]
            folded = np.zeros((len(C), len(rr)))
            np.add.at(folded, owner, full.T)
            J[rr, :] = folded.T if side == "u" else -folded.T
    return J


def _newton(config, dec, C, local=None, kappa=1.0, tol=1e-10, maxit=40, patience=8, symmetric=False):
    """Semismooth Newton on ``pi - clip(pi + kappa * margin, 0, 1)`` over ``C``.

    Backtracking on the residual norm globalizes the step. Returns early
    (unconverged) when progress stalls, which happens when the contested set
    itself must change.
    """
    nC = len(C)
    n = config.n
    if local is None:
        local = _LocalModel(config, dec, symmetric)
    local.extend([nd[0] * n + nd[1] for e in C for _, _, nd in _members(e, symmetric)])

    def state(ps, pb):
        d = DecisionField(tuple(ps), tuple(pb))
        w = local(d)
        M = margins(config, w)
        F = np.array([M[j][0 if kind == "s" else 1][node] for j, kind, node in C])
        pi = np.array([(ps if kind == "s" else pb)[j][node] for j, kind, node in C])
        z = pi + kappa * F
        return d, w, z, pi - np.clip(z, 0.0, 1.0)

    def moved(ps, pb, step, t):
        ps2 = [p.copy() for p in ps]
        pb2 = [p.copy() for p in pb]
        for e, st in zip(C, step):
            j, kind, node = e
            x = min(1.0, max(0.0, (ps if kind == "s" else pb)[j][node] + t * st))
            for j, kind, node in _members(e, symmetric):
                (ps2 if kind == "s" else pb2)[j][node] = x
        return ps2, pb2

    ps = [p.copy() for p in dec.p_sell]
    pb = [p.copy() for p in dec.p_buy]
    dec, values, z, phi = state(ps, pb)
    hist = []
    for it in range(maxit):
        err = float(np.linalg.norm(phi)) if nC else 0.0
        hist.append(err)
        if err < tol:
            return dec, values, it, True
        if it >= patience and err > 0.5 * min(hist[:-patience]):
            return dec, values, it, False
        J = _jacobian(config, local, values, C, symmetric)
        act = (z > 0) & (z < 1)
        G = np.eye(nC) - np.where(act[:, None], np.eye(nC) + kappa * J, 0.0)
        try:
            step = np.linalg.solve(G, -phi)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(G, -phi, rcond=None)[0]
        t = 1.0
        for _ in range(12):
            ps2, pb2 = moved(ps, pb, step, t)
            trial = state(ps2, pb2)
            if np.linalg.norm(trial[3]) < (1 - 1e-4 * t) * err:
                break
            t *= 0.5
        ps, pb = ps2, pb2
        dec, values, z, phi = trial
    return dec, values, maxit, False


def lemke(M, q, max_pivots=None, tol=1e-12):
    """Solve the linear complementarity problem ``w = M z + q >= 0``, ``z >= 0``, ``w'z = 0``.

    Lemke's complementary pivoting with a unit covering vector. Returns ``z``
    or None on ray termination.
    """
    M = np.asarray(M, float)
    q = np.asarray(q, float)
    n = len(q)
    if np.all(q >= 0):
        return np.zeros(n)
    T = np.hstack([np.eye(n), -M, -np.ones((n, 1)), q[:, None]])
    basis = list(range(n))
    z0 = 2 * n

    def pivot(r, c):
        T[r] /= T[r, c]
        col = T[:, c].copy()
        col[r] = 0.0
        T[:] -= np.outer(col, T[r])

    r = int(np.argmin(q))
    pivot(r, z0)
    leaving, basis[r] = basis[r], z0
    for _ in range(max_pivots or 50 * n):
        entering = leaving + n if leaving < n else leaving - n
        c = T[:, entering]
        ok = c > tol
        if not ok.any():
            return None
        ratio = np.where(ok, T[:, -1] / np.where(ok, c, 1.0), np.inf)
        best = ratio.min()
        cand = np.flatnonzero(ratio <= best + tol * max(1.0, abs(best)))
        zrow = [i for i in cand if basis[i] == z0]
        r = zrow[0] if zrow else int(cand[0])
        pivot(r, entering)
        leaving, basis[r] = basis[r], entering
        if leaving == z0:
            z = np.zeros(2 * n + 1)
            z[basis] = T[:, -1]
            return np.clip(z[n:2 * n], 0.0, None)
    return None


def _box_residual(pi, F):
    """Margin violation: providing with negative margin, consuming with positive."""
    return np.where(pi <= 0, np.maximum(F, 0.0), np.where(pi >= 1, np.maximum(-F, 0.0), np.abs(F)))


def _josephy(config, dec, C, local, tol=1e-10, maxit=30, symmetric=False):
    """Josephy-Newton: solve the linearized box complementarity problem exactly.

    Used when the semismooth iteration stalls on a degenerate active set.
    """
    n = config.n

    def evaluate(ps, pb):
        d = DecisionField(tuple(ps), tuple(pb))
        w = local(d)
        M = margins(config, w)
        F = np.array([M[j][0 if kind == "s" else 1][node] for j, kind, node in C])
        pi = np.array([(ps if kind == "s" else pb)[j][node] for j, kind, node in C])
        return d, w, F, pi

    ps = [p.copy() for p in dec.p_sell]
    pb = [p.copy() for p in dec.p_buy]
    dec, values, F, pi = evaluate(ps, pb)
    k = len(C)
    for it in range(maxit):
        if _box_residual(pi, F).max(initial=0.0) < tol:
            return dec, values, it, True
        J = _jacobian(config, local, values, C, symmetric)
        scale = max(np.abs(J).max(), 1e-300)
        Mb = -J / scale
        qb = (-F + J @ pi) / scale
        z = lemke(np.block([[Mb, np.eye(k)], [-np.eye(k), np.zeros((k, k))]]),
                  np.concatenate([qb, np.ones(k)]))
        if z is None:
            return dec, values, it, False
        new = np.clip(z[:k], 0.0, 1.0)
        for e, x in zip(C, new):
            for j, kind, node in _members(e, symmetric):
                (ps if kind == "s" else pb)[j][node] = x
        dec, values, F, pi = evaluate(ps, pb)
    return dec, values, maxit, _box_residual(pi, F).max(initial=0.0) < tol


def _contested(config, dec, values, C, symmetric=False):
    """Revise the contested set from the margins at the current solution."""
    Cset = set(C)
    M = margins(config, values)
    newC, changed = [], 0
    for j in range(len(config.classes)):
        for ki, kind in enumerate("s" if symmetric else "sb"):
            mg = M[j][ki]
            p = (dec.p_sell if kind == "s" else dec.p_buy)[j]
            for a, b in zip(*np.nonzero(~np.isnan(mg))):
                key = (j, kind, (int(a), int(b)))
                g, x = mg[a, b], p[a, b]
                if key in Cset:
                    if (x <= 0 and g < -1e-9) or (x >= 1 and g > 1e-9):
                        changed += 1
                        continue
                    newC.append(key)
                elif (x == 1 and g <= 0) or (x == 0 and g > 0):
                    newC.append(key)
                    changed += 1
    return newC, changed


def solve_equilibrium(config: MarketConfig, init_offset: float = 0.0, max_best_response: int = 30,
                      window: int = 20, max_rounds: int = 30, symmetric: bool = True) -> EquilibriumResult:
    """Compute equilibrium values and decisions.

    Parameters
    ----------
    config : MarketConfig
    init_offset : float
        Initial values are ``P + init_offset`` for sellers and buyers alike.
    max_best_response : int
        Cap on relaxed best-response steps before the mixed refinement.
    window : int
        Averaging window used to seed mixed probabilities when no short
        decision cycle is detected.
    max_rounds : int
        Cap on contested-set revisions.
    symmetric : bool
        Look for an equilibrium in which buyers mirror sellers. Only the
        seller systems are solved during the search; the final values come
        from solving both sides independently.

    Returns
    -------
    EquilibriumResult
        ``info`` records iteration counts, residuals and timings.
    """
    t0 = time.perf_counter()
    nc = len(config.classes)
    omega = config.omega
    ev = PolicyEvaluator(config, symmetric=symmetric)
    tie = mirror_decisions if symmetric else (lambda d: d)
    base = np.full((config.n, config.n), config.P + init_offset)
    rel = ValueField(tuple(base.copy() for _ in range(nc)), tuple(base.copy() for _ in range(nc)))
    exact = None
    hist, keys = [], []
    period = None
    for step in range(max_best_response):
        dec = tie(extract_decisions(rel, config))
        key = b"".join(np.packbits(a >= 0.5).tobytes() for a in dec.p_sell + dec.p_buy)
        hist.append(dec)
        keys.append(key)
        exact = ev(dec, exact, refactor=True)
        rel = ValueField(tuple((1 - omega) * a + omega * b for a, b in zip(rel.u, exact.u)),
                         tuple((1 - omega) * a + omega * b for a, b in zip(rel.v, exact.v)))
        for p in range(1, 5):
            if len(keys) >= 3 * p and all(keys[-1 - t] == keys[-1 - t - p] for t in range(2 * p)):
                period = p
                break
        if period:
            break
    span = period if period else min(window, len(hist))
    recent = hist[-span:]
    avg = DecisionField(tuple(np.mean([h.p_sell[j] for h in recent], 0) for j in range(nc)),
                        tuple(np.mean([h.p_buy[j] for h in recent], 0) for j in range(nc)))
    C = [(j, kind, (int(a), int(b))) for j in range(nc)
         for kind, arr in (("s", avg.p_sell[j]), ("b", avg.p_buy[j]))[: 1 if symmetric else 2]
         for a, b in np.argwhere((arr > 0) & (arr < 1))]
    log.info("best response: %d steps, period %s, %d contested", len(hist), period, len(C))
    dec, values = avg, exact
    local = _LocalModel(config, dec, symmetric)
    newton_its = []
    for rnd in range(max_rounds):
        dec, values, its, ok = _newton(config, dec, C, local, symmetric=symmetric)
        if not ok:
            dec, values, extra, ok = _josephy(config, dec, C, local, symmetric=symmetric)
            log.info("linearized complementarity fallback: %d its (converged %s)", extra, ok)
            its += extra
        newton_its.append(its)
        C, changed = _contested(config, dec, values, C, symmetric)
        log.info("round %d: newton %d its (converged %s), %d contested, %d changed", rnd, its, ok, len(C), changed)
        if ok and changed == 0:
            break
    else:
        raise EquilibriumError("contested set did not settle", {"rounds": max_rounds})
    values = PolicyEvaluator(config)(dec)
    info = {
        "best_response_steps": len(hist),
        "cycle_period": period,
        "newton_iterations": newton_its,
        "rounds": rnd + 1,
        "mixed_nodes": dec.mixed_count(),
        "residual": fixed_point_residual(values, dec, config),
        "equilibrium_gap": equilibrium_gap(values, dec, config),
        "factorizations": ev.factorizations + 2 * len(local.sides),
        "krylov_iterations": ev.krylov_iterations,
        "seconds": time.perf_counter() - t0,
    }
    if info["equilibrium_gap"] > 1e-8:
        raise EquilibriumError("equilibrium gap too large", info)
    return EquilibriumResult(values, dec, info)


def antisymmetry_error(values: ValueField, config: MarketConfig, i: int = 0) -> float:
    """``max |(u - P)(x, y) + (v - P)(y, x)|`` for class ``i``."""
    P = config.P
    return float(np.abs((values.u[i] - P) + (values.v[i] - P).T).max())
