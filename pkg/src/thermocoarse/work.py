"""Work of distillation, formation and transition.

All work values are in energy units with the gain convention (positive =
extracted).  Multiply by beta for units of kT.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import (
    ThermoSystem,
    beta_order,
    build_curve,
    gibbs_state,
    horizontal_distance,
    log_keys,
    qubit,
    tensor,
    thermo_majorizes,
)
from .ops import (
    LT,
    PITR,
    PLT,
    AppendThermalQubit,
    DiscardLevels,
    Protocol,
    WorkDistribution,
    apply_op,
    apply_protocol,
)
from .synth import plan_flow

PARK_HEIGHT = 40.0


def _check_epsilon(epsilon: float) -> float:
    epsilon = float(epsilon)
    if not 0.0 <= epsilon < 1.0:
        raise ValueError(f"epsilon={epsilon} outside [0, 1)")
    return epsilon


def distillable_work(s: ThermoSystem, epsilon: float = 0.0) -> float:
    """Work extractable except with probability ``epsilon``."""
    epsilon = _check_epsilon(epsilon)
    L = horizontal_distance(build_curve(s), 1.0 - epsilon)
    return -(math.log(L) - math.log(s.Z)) / s.beta


def work_of_formation(s: ThermoSystem) -> float:
    """Work needed to form ``s`` from the Gibbs state (negative = cost)."""
    key = float(log_keys(s).max())
    return -(key + math.log(s.Z)) / s.beta


# ------------------------------------------------------------- extraction

@dataclass
class ExtractionOutcome:
    success_prob: float
    success_work: float
    failure_work: float
    protocol: Protocol
    ledger: WorkDistribution | None = None
    final: ThermoSystem | None = None


def extraction_yield(s: ThermoSystem, epsilon: float, v_penalty: float) -> float:
    """Success-branch yield of the finite-penalty extraction protocol."""
    epsilon = _check_epsilon(epsilon)
    c = build_curve(s)
    Ze = horizontal_distance(c, 1.0 - epsilon)
    L1 = horizontal_distance(c, 1.0)
    tail = 0.0 if v_penalty == -math.inf else math.exp(s.beta * v_penalty) * (L1 - Ze)
    return math.log(s.Z / (Ze + tail)) / s.beta


def _split_point(s: ThermoSystem, x: float):
    """Level whose curve interval strictly contains ``x``, or None."""
    order = beta_order(s)
    w = s.weights[order]
    ends = np.cumsum(w)
    starts = ends - w
    tol = 1e-12 * max(1.0, s.Z)
    for pos, i in enumerate(order):
        if starts[pos] + tol < x < ends[pos] - tol:
            return int(i), float(starts[pos])
    return None


def extraction_protocol(s: ThermoSystem, epsilon: float, v_penalty: float = -math.inf,
                        ancilla_gap: float | None = None) -> ExtractionOutcome:
    """Protocol extracting work except with probability ``epsilon``.

    ``v_penalty`` (<= 0) is the work spent raising the occupied tail.  With
    ``v_penalty = -inf`` the failure branch ends with population stranded on
    infinite levels, so the ledger's success branch is simulated on the
    state conditioned on success.
    """
    epsilon = _check_epsilon(epsilon)
    V = float(v_penalty)
    if math.isnan(V) or V > 0:
        raise ValueError(f"v_penalty={V} must be <= 0")
    beta = s.beta
    ops = []
    work_sys = s
    reference_w = s.weights
    dims_ancilla = False
    Ze = horizontal_distance(build_curve(s), 1.0 - epsilon)
    if epsilon > 0 and _split_point(s, Ze) is not None:
        gap = math.log(2) / beta if ancilla_gap is None else float(ancilla_gap)
        tau = qubit(gap, beta)
        work_sys = tensor(s, tau)
        reference_w = work_sys.weights
        i, x0 = _split_point(s, Ze)
        a, b = 2 * i, 2 * i + 1
        want = (Ze - x0) * tau.Z
        op_pitr = PITR(a, b, -math.log(want / work_sys.weights[a]) / beta)
        ops += [AppendThermalQubit(gap), op_pitr]
        work_sys = apply_op(work_sys, op_pitr, [s.n, 2])[0]
        dims_ancilla = True

    Zw = work_sys.Z
    c = build_curve(work_sys)
    Zew = horizontal_distance(c, 1.0 - epsilon)
    order = beta_order(work_sys)
    w = work_sys.weights
    ends = np.cumsum(w[order])
    tol = 1e-12 * max(1.0, Zw)
    left = [int(i) for i, e in zip(order, ends) if e <= Zew + tol]
    right = [int(i) for i in order if int(i) not in left]
    r_occ = [i for i in right if work_sys.populations[i] > 0]
    r_un = [i for i in right if work_sys.populations[i] == 0]
    n = work_sys.n

    if r_un:
        h = np.zeros(n)
        h[r_un] = math.inf
        ops.append(LT(tuple(h.tolist())))
    strand = bool(r_occ) and V == -math.inf
    if r_occ and V != 0:
        h = np.zeros(n)
        h[r_occ] = -V
        ops.append(LT(tuple(h.tolist())))
    tail_op = len(ops) - 1

    # simulate up to here to plan the rest
    sim = s
    dims = [s.n]
    for op in ops:
        sim, dims, _ = apply_op(sim, op, dims)
    if strand:
        eta = sim.populations.copy()
        eta[r_occ] = 0.0
        sim = sim.with_populations(eta / eta.sum())
    finite = [i for i in range(n) if np.isfinite(sim.energies[i])]
    plt_op = PLT(tuple(finite), 1.0)
    ops.append(plt_op)
    sim, dims, _ = apply_op(sim, plt_op, dims)
    Z1 = sim.Z
    target_w = reference_w * Z1 / Zw
    if np.abs(sim.weights - target_w).max() > 1e-13 * Z1:
        targets = {i: (Z1 / 2, target_w[i]) for i in range(n)}
        sim, flow = plan_flow(sim, targets, "exact")
        ops += flow
    shift = -math.log(Zw / Z1) / beta
    ops.append(LT(tuple([shift] * n)))
    if dims_ancilla:
        ops.append(DiscardLevels((1,)))
    protocol = Protocol(ops, "extraction")

    success = extraction_yield(s, epsilon, V)
    failure = success + V if r_occ else success
    if strand:
        final, ledger = _conditional_run(s, protocol, tail_op, r_occ, epsilon)
    else:
        final, ledger, _ = apply_protocol(s, protocol)
    return ExtractionOutcome(1.0 - epsilon, success, failure if epsilon > 0 else success,
                             protocol, ledger, final)


def _conditional_run(s, protocol, tail_op, r_occ, epsilon):
    dims = [s.n]
    dist = WorkDistribution.point(0.0)
    for k, op in enumerate(protocol.ops):
        s, dims, d = apply_op(s, op, dims)
        if k == tail_op:
            eta = s.populations.copy()
            eta[r_occ] = 0.0
            s = s.with_populations(eta / eta.sum())
            continue
        dist = dist.convolve(d)
    if epsilon > 0:
        p = np.concatenate([(1 - epsilon) * dist.probs, [epsilon]])
        v = np.concatenate([dist.values, [-math.inf]])
        dist = WorkDistribution(p, v)
    return s, dist


# -------------------------------------------------------------- formation

def formation_protocol(s_target: ThermoSystem):
    """Protocol forming ``s_target`` from the Gibbs state of its Hamiltonian.

    Returns ``(protocol, work distribution)``.  Levels the target leaves
    empty are parked at a high finite energy instead of infinity, so the
    output matches the target up to exp(-PARK_HEIGHT) relative weight.
    """
    s = s_target
    if not np.isfinite(s.energies).all():
        raise ValueError("formation needs a finite Hamiltonian")
    beta = s.beta
    tau = s.gibbs()
    if np.abs(tau.populations - s.populations).max() <= 1e-12:
        return Protocol([], "formation"), WorkDistribution.point(0.0)
    Z = s.Z
    eta = s.populations
    empty = eta == 0
    w_park = math.exp(-beta * (s.energies.max() + PARK_HEIGHT / beta))
    P = w_park * empty.sum()
    target_w = np.where(empty, w_park, eta * (Z - P))
    targets = {i: (Z / 2, target_w[i]) for i in range(s.n)}
    mid, ops = plan_flow(tau, targets, "exact")
    h = s.energies - mid.energies
    top = float(h.max())
    ops = list(ops) + [LT(tuple([top] * s.n)), LT(tuple((h - top).tolist()))]
    protocol = Protocol(ops, "formation")
    _, dist, _ = apply_protocol(tau, protocol)
    return protocol, dist


# ------------------------------------------------------------- transition

def wit_composite(s: ThermoSystem, populations, W: float, wit_state: int) -> ThermoSystem:
    """System plus a wit of gap ``W``; population sits on ``wit_state``."""
    eta = np.asarray(populations, dtype=float)
    e = np.empty(2 * s.n)
    e[0::2] = s.energies
    e[1::2] = s.energies + W
    p = np.zeros(2 * s.n)
    p[int(wit_state)::2] = eta
    return ThermoSystem(e, p, s.beta)


def _bracket(Z: float, n: int, beta: float) -> float:
    return (math.log(Z) + math.log(n) + 40.0) / beta


def _bisect(feasible, w_max: float, tol_w: float):
    lo, hi = -w_max, w_max
    if not feasible(lo):
        raise ValueError(f"transition infeasible even at W={lo} (bracket [{lo}, {hi}])")
    if feasible(hi):
        raise ValueError(f"transition still feasible at W={hi} (bracket [{lo}, {hi}])")
    while hi - lo > tol_w:
        mid = 0.5 * (lo + hi)
        if feasible(mid):
            lo = mid
        else:
            hi = mid
    return lo


def transition_feasible(rho: ThermoSystem, sigma_pops, W: float) -> bool:
    a = wit_composite(rho, rho.populations, W, 0)
    b = wit_composite(rho, sigma_pops, W, 1)
    return thermo_majorizes(a, b)


def work_of_transition(rho: ThermoSystem, sigma, tol_w: float = 1e-6) -> float:
    """Largest W such that rho (wit empty) can reach sigma (wit charged with W)."""
    zeta = sigma.populations if isinstance(sigma, ThermoSystem) else np.asarray(sigma, float)
    zeta = rho.with_populations(zeta).populations
    if not np.isfinite(rho.energies).all():
        raise ValueError("work of transition needs a finite Hamiltonian")
    w_max = _bracket(rho.Z, rho.n, rho.beta)
    return _bisect(lambda W: transition_feasible(rho, zeta, W), w_max, tol_w)


def switch_composite(populations, h1, h2, beta: float, switch_state: int) -> ThermoSystem:
    """Block Hamiltonian H1 (switch 0) and H2 (switch 1); index = switch * n + level."""
    h1 = np.asarray(h1, dtype=float).ravel()
    h2 = np.asarray(h2, dtype=float).ravel()
    if h1.size != h2.size:
        raise ValueError("switch blocks must have the same number of levels")
    eta = np.asarray(populations, dtype=float).ravel()
    if eta.size != h1.size:
        raise ValueError(f"{eta.size} populations for {h1.size}-level blocks")
    if switch_state not in (0, 1):
        raise ValueError("switch state must be 0 or 1")
    p = np.zeros(2 * h1.size)
    p[switch_state * h1.size:(switch_state + 1) * h1.size] = eta
    return ThermoSystem(np.concatenate([h1, h2]), p, beta)


def work_of_transition_with_hamiltonian_change(rho, h1, sigma, h2, beta: float,
                                               tol_w: float = 1e-6) -> float:
    """Work of (rho, H1) -> (sigma, H2) through a switch qubit and a wit."""
    rho = np.asarray(rho, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    a = switch_composite(rho, h1, h2, beta, 0)
    b = switch_composite(sigma, h1, h2, beta, 1)
    if not np.isfinite(a.energies).all():
        raise ValueError("work of transition needs finite Hamiltonians")
    w_max = _bracket(a.Z, a.n, beta)
    return _bisect(lambda W: transition_feasible(a, b.populations, W), w_max, tol_w)
