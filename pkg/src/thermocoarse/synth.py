"""Compile feasible transitions into coarse-operation protocols.

Three routes are provided:

* same beta-order pairs: partial level thermalizations only (block procedure
  or two-level T-transform style steps);
* general pairs: append a thermal qubit, slide non-elbows with PITRs so that
  both curves share one level layout, thermalize, slide back, discard;
* general pairs without infinite energies: the same route with every
  "sent to infinity" replaced by parking the level just below an energy cap.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cmp_to_key

import numpy as np

from .core import (
    InfeasibleError,
    ThermoSystem,
    beta_order,
    build_curve,
    curve_pieces,
    curve_value_at,
    elbows,
    gibbs_state,
    log_keys,
    majorization_gap,
    tensor,
    qubit,
    thermo_majorizes,
)
from .ops import (
    PITR,
    PLT,
    AppendThermalQubit,
    DiscardLevels,
    Protocol,
    apply_pitr,
    apply_plt,
    apply_protocol,
)

EQ_TOL = 1e-12
CLAMP_TOL = 1e-12
ORDER_RTOL = 1e-9
RESIDUAL_TOL = 1e-9


@dataclass
class SynthesisReport:
    protocol: Protocol
    plt_count: int
    used_infinite_levels: bool
    residual_error: float
    iterations: int = 0
    final: ThermoSystem | None = None
    info: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "plt_count": self.plt_count,
            "used_infinite_levels": self.used_infinite_levels,
            "residual_error": self.residual_error,
            "iterations": self.iterations,
        }


def _target_populations(rho: ThermoSystem, sigma) -> np.ndarray:
    if isinstance(sigma, ThermoSystem):
        if sigma.n != rho.n or not np.array_equal(sigma.energies, rho.energies):
            raise ValueError("target must live on the input Hamiltonian")
        return sigma.populations
    return rho.with_populations(sigma).populations


def _require_feasible(rho: ThermoSystem, zeta: np.ndarray):
    sigma = rho.with_populations(zeta)
    gap, x = majorization_gap(rho, sigma)
    if gap < -1e-9:
        raise InfeasibleError(f"input does not thermo-majorize the target (dip {gap:.3g} at x={x:.6g})")
    return sigma


def _keys_close(a: float, b: float, rtol: float) -> bool:
    if a == b:
        return True
    if not (np.isfinite(a) and np.isfinite(b)):
        return False
    return abs(a - b) <= rtol * max(1.0, abs(a), abs(b))


def common_order(rho: ThermoSystem, sigma: ThermoSystem, rtol: float = ORDER_RTOL):
    """A permutation that is a beta-order of both systems, or None."""
    kr, ks = log_keys(rho), log_keys(sigma)
    for first, second in ((ks, kr), (kr, ks)):
        def cmp(i, j):
            if not _keys_close(first[i], first[j], rtol):
                return -1 if first[i] > first[j] else 1
            if not _keys_close(second[i], second[j], rtol):
                return -1 if second[i] > second[j] else 1
            return i - j
        order = sorted(range(rho.n), key=cmp_to_key(cmp))
        if all(_non_increasing(k, order, rtol) for k in (kr, ks)):
            return np.array(order, dtype=int)
    return None


def _non_increasing(keys, order, rtol):
    for a, b in zip(order[:-1], order[1:]):
        if keys[b] > keys[a] and not _keys_close(keys[a], keys[b], rtol):
            return False
    return True


def _solve_lambda(num: float, den: float, mass: float = 0.0) -> float:
    """num/den clamped to [0, 1]; the tolerance applies to the population
    mismatch num - lam*den, not to lam itself.  Keys tied within ORDER_RTOL
    count as one order, so a mismatch of that relative size on ``mass`` is
    clamped too."""
    tol = max(CLAMP_TOL, ORDER_RTOL * mass)
    if num < -tol or num > den + tol:
        raise InfeasibleError(f"thermalization weight {num / den} outside [0, 1]")
    return min(max(num / den, 0.0), 1.0)


def _block_plts(eta, zeta, w, order, max_iter=None):
    """Block procedure on a shared order.  Returns ([(subset, lam)], iterations).

    ``eta``, ``zeta`` and ``w`` are full-length arrays; only levels listed in
    ``order`` are touched.
    """
    order = np.asarray(order, dtype=int)
    n = order.size
    eta = np.array(eta, dtype=float)
    ops = []
    iterations = 0
    max_iter = n if max_iter is None else max_iter
    cz = np.cumsum(zeta[order])
    while True:
        ce = np.cumsum(eta[order])
        diff = ce - cz
        if (np.abs(diff) <= EQ_TOL).all() and np.abs(eta[order] - zeta[order]).max() <= EQ_TOL:
            break
        if iterations >= max_iter:
            raise RuntimeError("block procedure did not converge")
        iterations += 1
        before = len(ops)
        eq = np.flatnonzero(np.abs(diff) <= EQ_TOL)
        eq = sorted(set(eq.tolist()) | {n - 1})
        start = 0
        for t in eq:
            block = order[start:t + 1]
            lo = start
            start = t + 1
            if block.size < 2:
                continue
            e, z, g = eta[block], zeta[block], w[block]
            if np.abs(e - z).max() <= EQ_TOL:
                continue
            N, G = e.sum(), g.sum()
            A = np.cumsum(e)[:-1]
            Q = np.cumsum(z)[:-1]
            B = N * np.cumsum(g)[:-1] / G
            den = A - B
            ok = den > EQ_TOL
            if not ok.any():
                # block already at its restricted Gibbs ratio
                continue
            num = (A - Q)[ok]
            m = int(np.argmin(num / den[ok]))
            lam = _solve_lambda(num[m], den[ok][m], N)
            if lam <= 0:
                continue
            ops.append((tuple(sorted(block.tolist())), float(lam)))
            eta[block] = (1 - lam) * e + lam * g / G * N
        if len(ops) == before:
            # only clamped leftovers inside the order tie tolerance remain
            iterations -= 1
            break
    return ops, iterations


def _two_level_plts(eta, zeta, w, order):
    """T-transform steps on a shared order.  Returns [(pair, lam)]."""
    order = np.asarray(order, dtype=int)
    eta = np.array(eta, dtype=float)
    ops = []
    for _ in range(order.size):
        d = eta[order] - zeta[order]
        hi = np.flatnonzero(d > 1e-13)
        if hi.size == 0:
            break
        a = int(hi[-1])
        lo = np.flatnonzero(d[a + 1:] < -1e-13)
        if lo.size == 0:
            raise InfeasibleError("no deficient level after the last surplus level")
        b = a + 1 + int(lo[0])
        j, k = int(order[a]), int(order[b])
        c = (eta[j] + eta[k]) / (w[j] + w[k])
        num1, den1 = eta[j] - zeta[j], eta[j] - c * w[j]
        num2, den2 = zeta[k] - eta[k], c * w[k] - eta[k]
        lam1 = num1 / den1 if den1 > 0 else math.inf
        lam2 = num2 / den2 if den2 > 0 else math.inf
        first = lam1 <= lam2
        mass = eta[j] + eta[k]
        lam = _solve_lambda(num1, den1, mass) if first else _solve_lambda(num2, den2, mass)
        ops.append(((min(j, k), max(j, k)), float(lam)))
        pj = (1 - lam) * eta[j] + lam * w[j] / (w[j] + w[k]) * mass
        eta[k] = mass - pj
        eta[j] = pj
        # pin the level that the step was solved for
        if first:
            eta[j], eta[k] = zeta[j], mass - zeta[j]
        else:
            eta[k], eta[j] = zeta[k], mass - zeta[k]
    if np.abs(eta[order] - zeta[order]).max() > 1e-9:
        raise RuntimeError("two-level procedure did not reach the target")
    return ops


def _same_order_setup(rho, sigma_target):
    zeta = _target_populations(rho, sigma_target)
    if not np.isfinite(rho.energies).all():
        raise ValueError("same-order synthesis needs finite energies")
    sigma = _require_feasible(rho, zeta)
    order = common_order(rho, sigma)
    if order is None:
        raise ValueError("input and target do not share a beta-order")
    return zeta, sigma, order


def _finish_same_order(rho, zeta, plts, iterations):
    ops = [PLT(sub, lam) for sub, lam in plts]
    protocol = Protocol(ops, "same-order")
    final, _, _ = apply_protocol(rho, protocol)
    residual = float(np.abs(final.populations - zeta).max())
    if residual > RESIDUAL_TOL:
        raise RuntimeError(f"same-order protocol misses the target by {residual:.3e}")
    return SynthesisReport(protocol, len(ops), False, residual, iterations, final)


def synth_same_order(rho: ThermoSystem, sigma_target) -> SynthesisReport:
    """Protocol of block thermalizations taking ``rho`` to a same-order target."""
    zeta, _, order = _same_order_setup(rho, sigma_target)
    plts, iterations = _block_plts(rho.populations, zeta, rho.weights, order)
    return _finish_same_order(rho, zeta, plts, iterations)


def synth_same_order_two_level(rho: ThermoSystem, sigma_target) -> SynthesisReport:
    """Same as :func:`synth_same_order` but every thermalization touches two levels."""
    zeta, _, order = _same_order_setup(rho, sigma_target)
    plts = _two_level_plts(rho.populations, zeta, rho.weights, order)
    return _finish_same_order(rho, zeta, plts, len(plts))


# ------------------------------------------------------------ flow planner

class _Planner:
    """Rearranges levels along a fixed curve with PITRs.

    Targets map a level to (x position inside the wanted piece, width).
    In exact mode unneeded levels are sent to infinite energy; in approximate
    mode they are parked at Gibbs weight ``w_min`` and moved between pieces
    with a full thermalization against the receiving hub ("hop").
    """

    def __init__(self, s: ThermoSystem, targets: dict, mode="exact", e_cap=None,
                 reference=None):
        self.s = s
        self.mode = mode
        self.ops = []
        self.e_cap = e_cap
        self.w_min = math.exp(-s.beta * e_cap) if mode == "approx" else 0.0
        pieces = curve_pieces(reference if reference is not None else build_curve(s))
        self.bounds = np.array([p[1] for p in pieces])
        with np.errstate(divide="ignore"):
            self.slopes = np.array([math.log((p[3] - p[2]) / (p[1] - p[0])) if p[3] > p[2]
                                    else -math.inf for p in pieces])
        self.npieces = len(pieces)
        self.target_piece = {}
        self.target_width = {}
        for lvl, (x, width) in targets.items():
            P = int(np.searchsorted(self.bounds, x))
            self.target_piece[int(lvl)] = min(P, self.npieces - 1)
            self.target_width[int(lvl)] = float(width)

    # -- state helpers
    def _pitr(self, j, k, kappa):
        op = PITR(int(j), int(k), float(kappa))
        self.s, _ = apply_pitr(self.s, op.j, op.k, op.kappa, work=False)
        self.ops.append(op)

    def _hop(self, t, h):
        op = PLT((min(t, h), max(t, h)), 1.0)
        self.s = apply_plt(self.s, op.subset, 1.0)
        self.ops.append(op)

    def _give(self, h, t, need):
        """PITR raising hub ``h`` so that ``t`` gains Gibbs weight ``need``."""
        wh = self.s.weights[h]
        if need >= wh * (1 - 1e-15):
            if need > wh * (1 + 1e-12):
                raise RuntimeError("hub too narrow for the requested width")
            self._pitr(h, t, math.inf)
            return
        kappa = -math.log1p(-need / wh) / self.s.beta
        if kappa > 0:
            self._pitr(h, t, kappa)

    def free(self, i) -> bool:
        if self.mode == "exact":
            return not np.isfinite(self.s.energies[i])
        return self.s.weights[i] <= self.w_min * (1 + 1e-9)

    def membership(self):
        """Piece index of every finite level, matched by beta-order key."""
        keys = log_keys(self.s)
        out = {}
        for i in range(self.s.n):
            if not np.isfinite(self.s.energies[i]):
                continue
            k = keys[i]
            if k == -math.inf:
                cand = np.flatnonzero(self.slopes == -math.inf)
                out[i] = int(cand[0]) if cand.size else int(np.argmin(self.slopes))
                continue
            fin = np.where(np.isfinite(self.slopes), self.slopes, math.inf)
            out[i] = int(np.argmin(np.abs(fin - k)))
        return out

    # -- phases
    def run(self):
        member = self.membership()
        hub = {}
        for P in range(self.npieces):
            lv = [i for i, q in member.items() if q == P]
            if not lv:
                raise RuntimeError(f"piece {P} holds no level")
            good = [i for i in lv if self.target_piece.get(i) == P]
            if good:
                hub[P] = max(good, key=lambda i: self.target_width[i])
            else:
                hub[P] = max(lv, key=lambda i: self.s.weights[i])
            for i in lv:
                if i != hub[P]:
                    self._park(i, hub[P])
        self._fix_hubs(hub)
        for P in range(self.npieces):
            h = hub[P]
            for t, Q in self.target_piece.items():
                if Q != P or t == h:
                    continue
                if not self.free(t):
                    raise RuntimeError(f"level {t} is still in use")
                if self.mode == "approx":
                    self._hop(t, h)
                need = self.target_width[t] - self.s.weights[t]
                self._give(h, t, need)
        return self.s, self.ops, hub

    def _park(self, i, h):
        if self.mode == "exact":
            self._pitr(i, h, math.inf)
        else:
            kappa = self.e_cap - self.s.energies[i]
            if kappa > 0:
                self._pitr(i, h, kappa)

    def _move_hub(self, hub, P, t):
        h = hub[P]
        if self.mode == "approx":
            self._hop(t, h)
            self._pitr(h, t, self.e_cap - self.s.energies[h])
        else:
            self._pitr(h, t, math.inf)
        hub[P] = t

    def _fix_hubs(self, hub):
        for _ in range(4 * self.s.n + 4):
            wrong = [P for P in range(self.npieces) if self.target_piece.get(hub[P]) != P]
            if not wrong:
                return
            busy = set(hub.values())
            progress = False
            for P in wrong:
                cand = [t for t, Q in self.target_piece.items()
                        if Q == P and t not in busy and self.free(t)]
                if cand:
                    self._move_hub(hub, P, cand[0])
                    busy = set(hub.values())
                    progress = True
            if progress:
                continue
            # every target of P is a hub elsewhere: release one of them
            P = wrong[0]
            t = next((t for t, Q in self.target_piece.items() if Q == P), None)
            if t is None:
                raise RuntimeError(f"piece {P} has no target level")
            Q = next(q for q, h in hub.items() if h == t)
            spare = [f for f in range(self.s.n) if f not in busy and self.free(f)]
            if not spare:
                raise RuntimeError("no spare level to reroute a hub")
            pref = [f for f in spare if self.target_piece.get(f) == Q]
            self._move_hub(hub, Q, (pref or spare)[0])
        raise RuntimeError("hub assignment did not settle")


def plan_flow(s: ThermoSystem, targets: dict, mode: str = "exact", e_cap=None,
              reference=None):
    """Curve-preserving PITR sequence placing levels per ``targets``.

    ``reference`` is the curve whose straight pieces the targets refer to
    (default: the curve of ``s``).  Returns ``(final system, ops)``.
    """
    if mode not in ("exact", "approx"):
        raise ValueError("mode must be 'exact' or 'approx'")
    if mode == "approx" and e_cap is None:
        raise ValueError("approximate flows need an energy cap")
    final, ops, _ = _Planner(s, targets, mode, e_cap, reference).run()
    return final, ops


# --------------------------------------------------------- general synthesis

def _intervals(s: ThermoSystem):
    """x-interval of every level along the beta-order."""
    order = beta_order(s)
    w = s.weights
    start = np.zeros(s.n)
    start[order] = np.concatenate([[0.0], np.cumsum(w[order])[:-1]])
    return start, start + w


def _cells(cr, cs, Z, split_to=None):
    xs = np.union1d(elbows(cr), elbows(cs))
    xs = np.concatenate([[0.0], xs[xs > 0]])
    xs[-1] = Z
    keep = [0]
    for i in range(1, xs.size):
        if xs[i] - xs[keep[-1]] > 1e-12 * Z:
            keep.append(i)
    xs = xs[keep]
    xs[-1] = Z
    cells = list(zip(xs[:-1], xs[1:]))
    if split_to is not None:
        while len(cells) < split_to:
            i = max(range(len(cells)), key=lambda c: cells[c][1] - cells[c][0])
            a, b = cells[i]
            cells[i:i + 1] = [(a, (a + b) / 2), ((a + b) / 2, b)]
    return cells


def _assign(s: ThermoSystem, cells):
    """Greedy left-to-right match of cells to levels by interval overlap."""
    lo, hi = _intervals(s)
    free = set(range(s.n))
    out = {}
    for c, (a, b) in enumerate(cells):
        best = max(free, key=lambda i: (max(0.0, min(b, hi[i]) - max(a, lo[i])), -i))
        out[best] = c
        free.discard(best)
    return out


def _curve_increments(c, s_layout: ThermoSystem, order):
    w = s_layout.weights[order]
    x = np.concatenate([[0.0], np.cumsum(w)])
    x[-1] = min(x[-1], c.Z)
    y = np.array([curve_value_at(c, min(v, c.Z)) for v in x])
    out = np.zeros(s_layout.n)
    out[order] = np.diff(y)
    return np.clip(out, 0.0, None)


def _interior_gap(a: ThermoSystem, b: ThermoSystem) -> float:
    ca, cb = build_curve(a), build_curve(b)
    Z = min(ca.Z, cb.Z)
    xs = np.union1d(ca.x, cb.x)
    xs = xs[(xs > 1e-12 * Z) & (xs < Z * (1 - 1e-12))]
    if xs.size == 0:
        return math.inf
    return min(curve_value_at(ca, x) - curve_value_at(cb, x) for x in xs)


def _general(rho, sigma_target, ancilla_gap, mode, e_cap=None):
    zeta = _target_populations(rho, sigma_target)
    if not np.isfinite(rho.energies).all():
        raise ValueError("general synthesis needs finite energies")
    if ancilla_gap is None:
        ancilla_gap = math.log(2) / rho.beta
    if not ancilla_gap > 0 or not np.isfinite(ancilla_gap):
        raise ValueError(f"ancilla gap must be positive, got {ancilla_gap}")
    sigma = _require_feasible(rho, zeta)
    beta = rho.beta
    tau = qubit(ancilla_gap, beta)
    rA, sA = tensor(rho, tau), tensor(sigma, tau)
    cr, cs = build_curve(rA), build_curve(sA)
    Z = rA.Z

    if mode == "exact" and common_order(rho, sigma) is not None:
        order = common_order(rA, sA)
        plts, iterations = _block_plts(rA.populations, sA.populations, rA.weights, order)
        mid = [PLT(sub, lam) for sub, lam in plts]
        return _wrap(rho, zeta, tau, ancilla_gap, mid, iterations, False, mode)

    cells = _cells(cr, cs, Z, split_to=rA.n if mode == "approx" else None)
    if mode == "approx":
        w_min = math.exp(-beta * e_cap)
        if min(b - a for a, b in cells) <= 4 * w_min:
            raise InfeasibleError("energy cap too low for the required level widths")
    assign = _assign(rA, cells)
    targets = {lvl: ((cells[c][0] + cells[c][1]) / 2, cells[c][1] - cells[c][0])
               for lvl, c in assign.items()}
    mid_sys, fwd = plan_flow(rA, targets, mode, e_cap)

    # shared layout: cell order, then whatever is left over
    order = sorted(assign, key=lambda lvl: assign[lvl])
    rest = [i for i in range(rA.n) if i not in assign]
    full_order = np.array(order + rest, dtype=int)
    zeta_mid = _curve_increments(cs, mid_sys, full_order)
    zeta_mid = zeta_mid / zeta_mid.sum()
    plts, iterations = _block_plts(mid_sys.populations, zeta_mid, mid_sys.weights,
                                   np.array(order, dtype=int))
    mid_ops = [PLT(sub, lam) for sub, lam in plts]
    s2 = mid_sys
    for op in mid_ops:
        s2 = apply_plt(s2, op.subset, op.lam)

    lo, hi = _intervals(sA)
    back_targets = {i: ((lo[i] + hi[i]) / 2, hi[i] - lo[i]) for i in range(sA.n)}
    _, back = plan_flow(s2, back_targets, mode, e_cap, reference=cs)
    return _wrap(rho, zeta, tau, ancilla_gap, fwd + mid_ops + back, iterations,
                 mode == "exact", mode)


def _wrap(rho, zeta, tau, gap, mid, iterations, infinite, mode):
    ops = [AppendThermalQubit(gap)] + list(mid) + [DiscardLevels((1,))]
    protocol = Protocol(ops, f"general-{mode}")
    final, dist, trace = apply_protocol(rho, protocol)
    residual = float(np.abs(final.populations - zeta).max())
    pre = trace[-2]
    anc = pre.populations.reshape(rho.n, 2).sum(axis=0)
    info = {
        "worst_case_work": dist.worst_case,
        "ancilla_error": float(np.abs(anc - tau.populations).max()),
        "max_energy": float(max(t.energies.max() for t in trace)),
        "op_count": len(ops),
    }
    used_inf = any(not np.isfinite(t.energies).all() for t in trace)
    plt_count = sum(isinstance(op, PLT) for op in ops)
    return SynthesisReport(protocol, plt_count, used_inf, residual, iterations, final, info)


def synth_general(rho: ThermoSystem, sigma_target, ancilla_gap: float | None = None) -> SynthesisReport:
    """Work-free protocol for any feasible pair, using one thermal qubit."""
    rep = _general(rho, sigma_target, ancilla_gap, "exact")
    if rep.residual_error > RESIDUAL_TOL or rep.info["ancilla_error"] > RESIDUAL_TOL:
        raise RuntimeError(f"compiled protocol misses the target by {rep.residual_error:.3g}")
    return rep


def synth_general_approx(rho: ThermoSystem, sigma_target, ancilla_gap: float | None = None,
                         e_cap: float = 40.0, delta: float = 1e-6) -> SynthesisReport:
    """Like :func:`synth_general` but every energy stays at or below ``e_cap``."""
    zeta = _target_populations(rho, sigma_target)
    sigma = rho.with_populations(zeta)
    if not np.isfinite(e_cap):
        raise ValueError("energy cap must be finite")
    if not np.isfinite(rho.energies).all() or rho.energies.max() > e_cap:
        raise ValueError(f"all energies must lie below the cap {e_cap}")
    _require_feasible(rho, zeta)
    if _interior_gap(rho, sigma) <= 1e-9:
        raise InfeasibleError("curves touch away from the end points")
    try:
        rep = _general(rho, zeta, ancilla_gap, "approx", e_cap)
    except (InfeasibleError, ValueError) as exc:
        raise InfeasibleError(f"delta={delta} not reachable with e_cap={e_cap}: {exc}") from exc
    if rep.residual_error > delta:
        raise InfeasibleError(
            f"delta={delta} not reachable with e_cap={e_cap}; achieved {rep.residual_error:.3g}")
    return rep
