"""Coarse operations: partial level thermalizations, level transformations,
the PITR macro, points flows, and sequential protocol application.

Work values follow the gain convention: positive numbers are work delivered
to the work reservoir, negative numbers are costs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Union

import numpy as np

from .core import ThermoSystem, beta_order, log_keys, gibbs_state, qubit, tensor, TOL_NORM

MERGE_TOL = 1e-12
MAX_BRANCHES = 10**6
DEFAULT_STEPS = 1000


class WorkDistribution:
    """Discrete distribution of work values (extended reals).

    When the branch count would exceed ``MAX_BRANCHES`` the branches are
    dropped and only the worst case and the moments of the finite part are
    kept.  ``mean`` and ``variance`` are conditional on the finite branches.
    """

    def __init__(self, probs, values, *, _summary=None):
        if _summary is not None:
            self.probs = None
            self.values = None
            self._worst, self._fmass, self._mean, self._var = _summary
            return
        p = np.asarray(probs, dtype=float).ravel()
        v = np.asarray(values, dtype=float).ravel()
        if p.shape != v.shape:
            raise ValueError("probabilities and values differ in length")
        if (p < 0).any() or abs(p.sum() - 1.0) > 1e-9:
            raise ValueError(f"branch probabilities must be a distribution, sum={p.sum()}")
        keep = p > 0
        p, v = _merge(p[keep], v[keep])
        self.probs, self.values = p, v
        self._worst = float(v.min())
        fin = np.isfinite(v)
        self._fmass = float(p[fin].sum())
        if self._fmass > 0:
            pf = p[fin] / self._fmass
            self._mean = float(pf @ v[fin])
            self._var = float(pf @ (v[fin] - self._mean) ** 2)
        else:
            self._mean, self._var = math.nan, math.nan

    @classmethod
    def point(cls, value: float = 0.0) -> "WorkDistribution":
        return cls([1.0], [value])

    @classmethod
    def summary(cls, worst, finite_mass, mean, variance) -> "WorkDistribution":
        return cls(None, None, _summary=(worst, finite_mass, mean, variance))

    @property
    def truncated(self) -> bool:
        return self.probs is None

    @property
    def branches(self) -> list[tuple[float, float]]:
        if self.truncated:
            return []
        return list(zip(self.probs.tolist(), self.values.tolist()))

    @property
    def worst_case(self) -> float:
        return self._worst

    @property
    def mean(self) -> float:
        return self._mean

    @property
    def variance(self) -> float:
        return self._var

    def convolve(self, other: "WorkDistribution", max_branches: int = MAX_BRANCHES):
        """Distribution of the sum of two independent work values."""
        worst = self._worst + other._worst
        if self.truncated or other.truncated or self.probs.size * other.probs.size > max_branches:
            return WorkDistribution.summary(
                worst, self._fmass * other._fmass,
                self._mean + other._mean, self._var + other._var)
        p = np.outer(self.probs, other.probs).ravel()
        v = np.add.outer(self.values, other.values).ravel()
        p = p / p.sum()
        return WorkDistribution(p, v)

    def __repr__(self):
        if self.truncated:
            return (f"WorkDistribution(worst={self._worst}, mean={self._mean}, "
                    f"var={self._var}, truncated)")
        return f"WorkDistribution({self.branches})"


def _merge(p: np.ndarray, v: np.ndarray):
    if p.size <= 1:
        return p, v
    idx = np.argsort(v, kind="stable")
    p, v = p[idx], v[idx]
    with np.errstate(invalid="ignore"):
        gaps = np.diff(v)
    new = np.ones(v.size, dtype=bool)
    new[1:] = ~(gaps <= MERGE_TOL)
    new[1:] &= ~((v[1:] == v[:-1]) & np.isinf(v[1:]))
    starts = np.flatnonzero(new)
    return np.add.reduceat(p, starts), v[starts]


# ---------------------------------------------------------------- operations

@dataclass(frozen=True)
class PLT:
    subset: tuple
    lam: float


@dataclass(frozen=True)
class LT:
    shifts: tuple


@dataclass(frozen=True)
class AppendThermalQubit:
    gap: float


@dataclass(frozen=True)
class DiscardLevels:
    factor: tuple


@dataclass(frozen=True)
class PITR:
    j: int
    k: int
    kappa: float
    steps: int = DEFAULT_STEPS


CoarseOp = Union[PLT, LT, AppendThermalQubit, DiscardLevels, PITR]


@dataclass
class Protocol:
    ops: list = field(default_factory=list)
    label: str = ""

    def __len__(self):
        return len(self.ops)

    def __iter__(self):
        return iter(self.ops)

    def __add__(self, other: "Protocol") -> "Protocol":
        return Protocol(list(self.ops) + list(other.ops), self.label or other.label)


def _indices(s: ThermoSystem, idx) -> np.ndarray:
    idx = np.asarray(sorted(set(int(i) for i in idx)), dtype=int)
    if idx.size == 0:
        raise ValueError("empty level subset")
    if idx.min() < 0 or idx.max() >= s.n:
        raise ValueError(f"level index out of range for a {s.n}-level system")
    return idx


def apply_plt(s: ThermoSystem, subset, lam: float) -> ThermoSystem:
    """Mix the populations on ``subset`` towards their restricted Gibbs ratio."""
    lam = float(lam)
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"lambda={lam} outside [0, 1]")
    P = _indices(s, subset)
    if not np.isfinite(s.energies[P]).all():
        raise ValueError("a partial level thermalization cannot touch an infinite level")
    eta = s.populations.copy()
    w = s.weights[P]
    mass = eta[P].sum()
    eta[P] = (1 - lam) * eta[P] + lam * w / w.sum() * mass
    return s.with_populations(eta)


def _check_shifts(s: ThermoSystem, shifts) -> np.ndarray:
    h = np.asarray(shifts, dtype=float).ravel()
    if h.size != s.n:
        raise ValueError(f"{h.size} shifts for a {s.n}-level system")
    if np.isnan(h).any() or (h == -np.inf).any():
        raise ValueError("shifts must be finite or +inf")
    return h


def apply_lt(s: ThermoSystem, shifts):
    """Shift the energy levels; returns the new system and its worst-case work."""
    h = _check_shifts(s, shifts)
    occ = s.populations > 0
    work = -float(h[occ].max())
    return s.with_energies(s.energies + h), work


def lt_work_distribution(s: ThermoSystem, shifts) -> WorkDistribution:
    h = _check_shifts(s, shifts)
    occ = s.populations > 0
    return WorkDistribution(s.populations[occ], -h[occ])


def _pitr_check(s: ThermoSystem, j: int, k: int):
    j, k = int(j), int(k)
    if j == k:
        raise ValueError("PITR needs two distinct levels")
    for i in (j, k):
        if not 0 <= i < s.n:
            raise ValueError(f"level {i} out of range")
    if not np.isfinite(s.energies[j]):
        raise ValueError(f"PITR level j={j} must have finite energy")
    if not np.isfinite(s.energies[k]) and s.populations[k] > 0:
        raise ValueError(f"PITR level k={k} is infinitely excited")
    return j, k


def apply_pitr(s: ThermoSystem, j: int, k: int, kappa: float,
               steps: int = DEFAULT_STEPS, work: bool = True):
    """Raise level ``j`` by ``kappa`` while keeping (j, k) in partial equilibrium.

    The pair is first brought to its Gibbs ratio (a free thermalization).
    The returned state is exact and independent of ``steps``; the work
    distribution is that of the ``steps``-step LT/thermalization ladder.
    ``kappa`` may be negative or ``inf``; level ``k`` may start at infinite
    energy when unoccupied.
    """
    j, k = _pitr_check(s, j, k)
    kappa = float(kappa)
    if math.isnan(kappa) or kappa == -math.inf:
        raise ValueError("kappa must be a real number or +inf")
    beta = s.beta
    w = s.weights
    wj, wk = w[j], w[k]
    total = s.populations[j] + s.populations[k]
    wsum = wj + wk
    eta_j = wj / wsum * total
    eta_k = wk / wsum * total
    decay = 0.0 if kappa == math.inf else math.exp(-beta * kappa)
    # 1 - decay without cancellation for tiny kappa
    moved = 1.0 if kappa == math.inf else -math.expm1(-beta * kappa)
    wj_new = wj * decay
    wk_new = wk + wj * moved
    if wk_new < -1e-12 * wsum:
        raise ValueError(f"kappa={kappa} would push level {k} below the pair's partition function")
    wk_new = max(wk_new, 0.0)
    eta = s.populations.copy()
    e = s.energies.copy()
    eta[j] = eta_j * decay
    eta[k] = eta_k + moved * eta_j
    e[j] = s.energies[j] + kappa
    e[k] = -math.log(wk_new) / beta if wk_new > 0 else math.inf
    if wk_new == 0:
        eta[k] = 0.0
        eta[j] = total
    out = ThermoSystem(e, eta, beta)
    if not work:
        return out, WorkDistribution.point(0.0)
    return out, pitr_work_distribution(s, j, k, kappa, steps)


def pitr_step_branches(s: ThermoSystem, j: int, k: int, kappa: float, steps: int):
    """Per-step (probabilities, values) of the t-step PITR ladder.

    Each step raises ``j`` by kappa/t, lowers ``k`` to keep the pair's
    partition function, then thermalizes the pair.  For infinite kappa the
    ladder climbs to E_j + ln(t)/beta.
    """
    steps = int(steps)
    if steps < 1:
        raise ValueError("steps must be a positive integer")
    beta = s.beta
    w = s.weights
    wj, wk = w[j], w[k]
    C = (s.populations[j] + s.populations[k]) / (wj + wk)
    height = math.log(steps) / beta if kappa == math.inf else kappa
    r = np.arange(steps + 1)
    wj_r = wj * np.exp(-beta * height * r / steps)
    wk_r = wk + wj - wj_r
    eps = height / steps
    with np.errstate(divide="ignore"):
        ek_r = -np.log(wk_r) / beta
    pj = C * wj_r[:-1]
    pk = C * wk_r[:-1]
    hk = np.diff(ek_r)
    hk[pk <= 0] = 0.0
    rest = 1.0 - pj - pk
    return pj, pk, rest, -eps, -hk


def pitr_work_distribution(s: ThermoSystem, j: int, k: int, kappa: float,
                           steps: int = DEFAULT_STEPS) -> WorkDistribution:
    """Work of the ``steps``-step ladder.

    Population outside the pair stays outside for the whole ladder and
    earns nothing, so the result mixes a zero branch (weight 1 - q) with the
    ladder conditioned on the pair (weight q), whose steps are independent.
    """
    pj, pk, _, wj, wk = pitr_step_branches(s, j, k, kappa, steps)
    q = float(pj[0] + pk[0])
    if q <= 0:
        return WorkDistribution.point(0.0)
    a, b = pj / q, pk / q
    if 2 ** min(len(a), 40) <= MAX_BRANCHES:
        dist = WorkDistribution.point(0.0)
        for x, y, vk in zip(a, b, wk):
            dist = dist.convolve(WorkDistribution([x, y], [wj, vk]))
        if q >= 1 - 1e-15:
            return dist
        return WorkDistribution(np.concatenate([q * dist.probs, [1 - q]]),
                                np.concatenate([dist.values, [0.0]]))
    means = a * wj + b * wk
    var = a * wj**2 + b * wk**2 - means**2
    lows = np.minimum(np.where(a > 0, wj, np.inf), np.where(b > 0, wk, np.inf))
    worst = float(lows.sum())
    m = float(means.sum())
    if q < 1 - 1e-15:
        worst = min(worst, 0.0)
        return WorkDistribution.summary(worst, 1.0, q * m, q * float(var.sum()) + q * (1 - q) * m * m)
    return WorkDistribution.summary(worst, 1.0, m, float(var.sum()))


def transfer_width(s: ThermoSystem, j: int, k: int, new_weight: float) -> PITR:
    """PITR on (j, k) that leaves level ``j`` with Gibbs weight ``new_weight``."""
    w = s.weights
    if new_weight <= 0:
        return PITR(j, k, math.inf)
    return PITR(j, k, -math.log(new_weight / w[j]) / s.beta)


def _key_ratio(s: ThermoSystem, a: int, b: int) -> float:
    w = s.weights
    ka, kb = s.populations[a] / w[a], s.populations[b] / w[b]
    return abs(ka - kb) / max(ka, kb)


def exact_points_flow_ops(s: ThermoSystem, j: int, k: int, l: int, width=None) -> list:
    """Ops moving the non-elbow between ``j`` and ``k`` into the segment of ``l``.

    Level ``j`` is sent to infinite energy (merging into ``k``) and then
    brought back down inside ``l``'s segment with Gibbs weight ``width``
    (default: half of ``l``'s weight).
    """
    if l in (j, k) or j == k:
        raise ValueError("exact points flow needs three distinct levels")
    if not np.isfinite(s.energies[[j, k, l]]).all():
        raise ValueError("exact points flow needs finite levels")
    if _key_ratio(s, j, k) > 1e-9:
        raise ValueError(f"levels {j} and {k} do not form a non-elbow")
    first = PITR(j, k, math.inf)
    mid, _ = apply_pitr(s, j, k, math.inf, work=False)
    wl = mid.weights[l]
    if width is None:
        width = wl / 2
    if not 0 < width < wl:
        raise ValueError(f"width {width} must lie strictly inside (0, {wl})")
    return [first, transfer_width(mid, l, j, wl - width)]


def exact_points_flow(s: ThermoSystem, j: int, k: int, l: int, width=None) -> ThermoSystem:
    for op in exact_points_flow_ops(s, j, k, l, width):
        s, _ = apply_pitr(s, op.j, op.k, op.kappa, work=False)
    return s


def approx_points_flow(s: ThermoSystem, j: int, k: int, e_cap: float, target=None,
                       direction: str = "right"):
    """Move the non-elbow (k, j) into a neighbouring segment without infinite levels.

    ``direction`` picks the next segment of lower ("right") or higher
    ("left") beta-order key.  Returns ``(system, deviation, ops)`` where
    ``deviation`` is the largest vertical change of the curve, which occurs
    at the temporary elbow cut by the thermalization.  ``target`` is the
    final Gibbs weight of ``j`` inside the merged segment.
    """
    if direction not in ("right", "left"):
        raise ValueError("direction must be 'right' or 'left'")
    if _key_ratio(s, j, k) > 1e-9:
        raise ValueError(f"levels {j} and {k} do not form a non-elbow")
    if not e_cap > s.energies[j]:
        raise ValueError(f"cap {e_cap} must exceed the current energy {s.energies[j]}")
    w0 = s.weights
    ops = [PITR(j, k, e_cap - s.energies[j])]
    s1, _ = apply_pitr(s, j, k, ops[0].kappa, work=False)
    keys = log_keys(s1)
    order = list(beta_order(s1))
    if direction == "left":
        order = order[::-1]
        side = [i for i in order if i not in (j, k) and keys[i] > keys[k] + 1e-9]
    else:
        side = [i for i in order if i not in (j, k) and keys[i] < keys[k] - 1e-9
                and np.isfinite(s1.energies[i])]
    if not side:
        raise ValueError(f"no segment to the {direction} of the non-elbow")
    m = side[0]
    if not np.isfinite(s1.energies[m]):
        raise ValueError("neighbouring segment is an infinite level")
    wj, wm = s1.weights[j], s1.weights[m]
    ej, em = s1.populations[j], s1.populations[m]
    deviation = abs(ej * wm - em * wj) / (wj + wm)
    ops.append(PLT((min(j, m), max(j, m)), 1.0))
    s2 = apply_plt(s1, [j, m], 1.0)
    if target is None:
        target = min(w0[j], (wj + wm) / 2)
    if not 0 < target < wj + wm:
        raise ValueError(f"target weight {target} outside (0, {wj + wm})")
    # grow j by drawing weight from m
    ops.append(transfer_width(s2, m, j, wj + wm - target))
    s3, _ = apply_pitr(s2, m, j, ops[-1].kappa, work=False)
    return s3, deviation, ops


# --------------------------------------------------------------- protocols

def append_thermal_qubit(s: ThermoSystem, gap: float) -> ThermoSystem:
    return tensor(s, qubit(gap, s.beta))


def discard_factor(s: ThermoSystem, dims: list, factor, tol: float = 1e-9):
    """Trace out the tensor factors listed in ``factor`` (positions in ``dims``).

    Only product states on separable Hamiltonians may be split.  Returns the
    reduced system and the remaining dims.
    """
    factor = sorted(set(int(f) for f in factor))
    if not factor or factor[0] < 0 or factor[-1] >= len(dims) or len(factor) == len(dims):
        raise ValueError(f"cannot discard factors {factor} of {dims}")
    if int(np.prod(dims)) != s.n:
        raise ValueError(f"dims {dims} inconsistent with {s.n} levels")
    keep = [i for i in range(len(dims)) if i not in factor]
    nk = int(np.prod([dims[i] for i in keep]))
    nd = int(np.prod([dims[i] for i in factor]))
    perm = keep + factor
    p = s.populations.reshape(dims).transpose(perm).reshape(nk, nd)
    e = s.energies.reshape(dims).transpose(perm).reshape(nk, nd)
    pk, pd = p.sum(axis=1), p.sum(axis=0)
    if np.abs(p - np.outer(pk, pd)).max() > tol:
        raise ValueError("discarded factor is correlated with the rest")
    # separability: E[a, b] = E_keep[a] + E_disc[b]
    ref_a = int(np.argmax(np.isfinite(e).all(axis=1))) if np.isfinite(e).all(axis=1).any() else None
    if ref_a is None:
        raise ValueError("no finite row to split the Hamiltonian")
    e_disc = e[ref_a] - e[ref_a, 0]
    e_keep = e[:, 0]
    with np.errstate(invalid="ignore"):
        rebuilt = np.add.outer(e_keep, e_disc)
    fin = np.isfinite(rebuilt) | np.isfinite(e)
    if not (np.isinf(rebuilt) == np.isinf(e)).all() or \
            np.abs(np.where(fin & np.isfinite(e), rebuilt - e, 0.0)).max() > tol * max(1.0, np.abs(e[np.isfinite(e)]).max()):
        raise ValueError("Hamiltonian does not split across the discarded factor")
    reduced = ThermoSystem(e_keep, pk, s.beta, tol=max(TOL_NORM, tol))
    return reduced, [dims[i] for i in keep]


def apply_op(s: ThermoSystem, op, dims: list, pitr_work: str = "ideal"):
    """Apply one op; returns (system, dims, work distribution)."""
    zero = WorkDistribution.point(0.0)
    if isinstance(op, PLT):
        return apply_plt(s, op.subset, op.lam), dims, zero
    if isinstance(op, LT):
        out, _ = apply_lt(s, op.shifts)
        return out, dims, lt_work_distribution(s, op.shifts)
    if isinstance(op, PITR):
        out, dist = apply_pitr(s, op.j, op.k, op.kappa, op.steps, work=pitr_work == "simulate")
        return out, dims, dist if pitr_work == "simulate" else zero
    if isinstance(op, AppendThermalQubit):
        return append_thermal_qubit(s, op.gap), dims + [2], zero
    if isinstance(op, DiscardLevels):
        out, rest = discard_factor(s, dims, op.factor)
        return out, rest, zero
    raise TypeError(f"unknown operation {op!r}")


def apply_protocol(s: ThermoSystem, protocol, pitr_work: str = "ideal"):
    """Fold a protocol over a system.

    Returns ``(final system, work distribution, trace)``; the trace holds the
    system after every op.  PITRs contribute zero work by default (their
    quasi-static limit); ``pitr_work="simulate"`` convolves the ladder.
    """
    if pitr_work not in ("ideal", "simulate"):
        raise ValueError("pitr_work must be 'ideal' or 'simulate'")
    ops = protocol.ops if isinstance(protocol, Protocol) else list(protocol)
    dims = [s.n]
    dist = WorkDistribution.point(0.0)
    trace = []
    for op in ops:
        s, dims, d = apply_op(s, op, dims, pitr_work)
        dist = dist.convolve(d)
        trace.append(s)
    return s, dist, trace
