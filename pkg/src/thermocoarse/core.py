"""States, Hamiltonians, beta-ordering and thermo-majorization curves.

Systems are diagonal: a vector of energy levels (``+inf`` allowed) and a
vector of level populations at a fixed inverse temperature.  Levels are
indexed from 0.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

TOL_NORM = 1e-12
TOL_CURVE = 1e-9
# relative tolerance under which two beta-order keys count as tied
TIE_RTOL = 1e-12


class InfeasibleError(ValueError):
    """A requested transition is not allowed by thermo-majorization."""


def _as_energies(energies) -> np.ndarray:
    e = np.array(energies, dtype=float).ravel()
    if e.size == 0:
        raise ValueError("a Hamiltonian needs at least one level")
    if np.isnan(e).any() or (e == -np.inf).any():
        raise ValueError("energies must be finite or +inf")
    if not np.isfinite(e).any():
        raise ValueError("at least one energy level must be finite")
    return e


def gibbs_weights(energies, beta: float) -> np.ndarray:
    """Boltzmann factors exp(-beta E); infinite levels get weight 0."""
    e = _as_energies(energies)
    w = np.zeros_like(e)
    fin = np.isfinite(e)
    w[fin] = np.exp(-beta * e[fin])
    return w


def partition_function(energies, beta: float) -> float:
    return float(gibbs_weights(energies, beta).sum())


def gibbs_state(energies, beta: float) -> np.ndarray:
    w = gibbs_weights(energies, beta)
    return w / w.sum()


def _check_beta(beta) -> float:
    beta = float(beta)
    if not np.isfinite(beta) or beta <= 0:
        raise ValueError(f"beta must be positive and finite, got {beta}")
    return beta


def _as_populations(populations, tol: float = TOL_NORM) -> np.ndarray:
    p = np.array(populations, dtype=float).ravel()
    if np.isnan(p).any() or np.isinf(p).any():
        raise ValueError("populations must be finite")
    if (p < -tol).any():
        raise ValueError(f"negative population {p.min()!r}")
    p = np.clip(p, 0.0, None)
    total = p.sum()
    if abs(total - 1.0) > tol:
        raise ValueError(f"populations sum to {total!r}, not 1")
    return p / total


@dataclass(frozen=True, eq=False)
class ThermoSystem:
    """A diagonal state on a Hamiltonian at inverse temperature ``beta``."""

    energies: np.ndarray
    populations: np.ndarray
    beta: float

    def __init__(self, energies, populations, beta: float = 1.0, tol: float = TOL_NORM):
        e = _as_energies(energies)
        p = _as_populations(populations, tol)
        if e.shape != p.shape:
            raise ValueError(f"{e.size} energies but {p.size} populations")
        e.setflags(write=False)
        p.setflags(write=False)
        object.__setattr__(self, "energies", e)
        object.__setattr__(self, "populations", p)
        object.__setattr__(self, "beta", _check_beta(beta))

    @property
    def n(self) -> int:
        return self.energies.size

    @property
    def weights(self) -> np.ndarray:
        return gibbs_weights(self.energies, self.beta)

    @property
    def Z(self) -> float:
        return float(self.weights.sum())

    @property
    def infinitely_excited(self) -> np.ndarray:
        """Indices of occupied levels sitting at infinite energy."""
        return np.flatnonzero(np.isinf(self.energies) & (self.populations > 0))

    def with_populations(self, populations) -> "ThermoSystem":
        return ThermoSystem(self.energies, populations, self.beta)

    def with_energies(self, energies) -> "ThermoSystem":
        return ThermoSystem(energies, self.populations, self.beta)

    def gibbs(self) -> "ThermoSystem":
        return self.with_populations(gibbs_state(self.energies, self.beta))

    def __repr__(self):
        return (f"ThermoSystem(energies={self.energies.tolist()}, "
                f"populations={self.populations.tolist()}, beta={self.beta})")


def log_keys(s: ThermoSystem) -> np.ndarray:
    """log(eta_i e^{beta E_i}), with the conventions for infinite levels.

    Occupied infinite levels get +inf, unoccupied levels -inf.
    """
    eta, e = s.populations, s.energies
    keys = np.full(s.n, -np.inf)
    occ = eta > 0
    keys[occ] = np.log(eta[occ]) + s.beta * e[occ]
    return keys


def beta_order(s: ThermoSystem) -> np.ndarray:
    """Permutation listing levels by non-increasing eta_i e^{beta E_i}.

    Keys equal within ``TIE_RTOL`` are ordered by ascending index, so the
    Gibbs state of any Hamiltonian gives the identity.
    """
    keys = log_keys(s)
    order = np.argsort(-keys, kind="stable")
    out = []
    group = [order[0]]
    for prev, cur in zip(order[:-1], order[1:]):
        a, b = keys[prev], keys[cur]
        tied = a == b or (np.isfinite(a) and np.isfinite(b) and a - b <= TIE_RTOL)
        if tied:
            group.append(cur)
        else:
            out.extend(sorted(group))
            group = [cur]
    out.extend(sorted(group))
    return np.array(out, dtype=int)


@dataclass(frozen=True, eq=False)
class ThermoCurve:
    """Breakpoints of a thermo-majorization curve, starting at (0, 0)."""

    x: np.ndarray
    y: np.ndarray

    @property
    def Z(self) -> float:
        return float(self.x[-1])

    @property
    def points(self) -> list[tuple[float, float]]:
        return list(zip(self.x.tolist(), self.y.tolist()))

    def value_at(self, x: float) -> float:
        return curve_value_at(self, x)

    def horizontal_distance(self, y: float) -> float:
        return horizontal_distance(self, y)


def build_curve(s: ThermoSystem, order=None) -> ThermoCurve:
    """Cumulative (Gibbs weight, population) along ``order`` (default: beta-order)."""
    if order is None:
        order = beta_order(s)
    order = np.asarray(order, dtype=int)
    x = np.concatenate([[0.0], np.cumsum(s.weights[order])])
    y = np.concatenate([[0.0], np.cumsum(s.populations[order])])
    x.setflags(write=False)
    y.setflags(write=False)
    return ThermoCurve(x, y)


def curve_value_at(c: ThermoCurve, x: float) -> float:
    """Height of the curve at ``x``; the top of a vertical segment is returned."""
    x = float(x)
    Z = c.Z
    slack = 1e-12 * max(1.0, Z)
    if x < -slack or x > Z + slack:
        raise ValueError(f"x={x} outside [0, {Z}]")
    x = min(max(x, 0.0), Z)
    i = int(np.searchsorted(c.x, x, side="right")) - 1
    if c.x[i] == x or i == c.x.size - 1:
        return float(c.y[i])
    x0, x1 = c.x[i], c.x[i + 1]
    y0, y1 = c.y[i], c.y[i + 1]
    return float(y0 + (y1 - y0) * (x - x0) / (x1 - x0))


def horizontal_distance(c: ThermoCurve, y: float) -> float:
    """Smallest x at which the curve reaches height ``y``."""
    y = float(y)
    if y < 0 or y > 1 + TOL_NORM:
        raise ValueError(f"y={y} outside [0, 1]")
    if y <= 0:
        return 0.0
    k = int(np.argmax(c.y >= y - 1e-14)) if (c.y >= y - 1e-14).any() else c.y.size - 1
    if k == 0:
        return 0.0
    y0, y1 = c.y[k - 1], c.y[k]
    x0, x1 = c.x[k - 1], c.x[k]
    if y1 <= y0:
        return float(x1)
    frac = min(max((y - y0) / (y1 - y0), 0.0), 1.0)
    return float(x0 + frac * (x1 - x0))


def curve_pieces(c: ThermoCurve, rtol: float = 1e-9) -> list[tuple[float, float, float, float]]:
    """Maximal straight pieces of a curve as (x0, x1, y0, y1).

    Zero-width zero-height steps are dropped; a vertical segment at the
    origin is its own piece.
    """
    pieces: list[list[float]] = []
    slope_prev = None
    for x0, x1, y0, y1 in zip(c.x[:-1], c.x[1:], c.y[:-1], c.y[1:]):
        dx, dy = x1 - x0, y1 - y0
        if dx <= 0 and dy <= 0:
            continue
        slope = dy / dx if dx > 0 else np.inf
        if pieces and slope_prev is not None and _same_slope(slope, slope_prev, rtol):
            pieces[-1][1] = x1
            pieces[-1][3] = y1
        else:
            pieces.append([x0, x1, y0, y1])
            slope_prev = slope
    return [tuple(p) for p in pieces]


def _same_slope(a: float, b: float, rtol: float) -> bool:
    if np.isinf(a) or np.isinf(b):
        return a == b
    return abs(a - b) <= rtol * max(abs(a), abs(b), 1e-300)


def elbows(c: ThermoCurve, rtol: float = 1e-9) -> np.ndarray:
    """x-positions of the curve's elbows, including the end point."""
    return np.array([p[1] for p in curve_pieces(c, rtol)])


def _check_comparable(a: ThermoSystem, b: ThermoSystem, tol: float):
    if not np.isclose(a.beta, b.beta, rtol=1e-12, atol=0):
        raise ValueError(f"mismatched beta: {a.beta} vs {b.beta}")
    if abs(a.Z - b.Z) > tol * max(1.0, a.Z):
        raise ValueError(f"mismatched partition functions: {a.Z} vs {b.Z}")


def majorization_gap(a: ThermoSystem, b: ThermoSystem, tol: float = TOL_CURVE):
    """Minimum of curve(a) - curve(b) over all breakpoints, and where it occurs."""
    _check_comparable(a, b, tol)
    ca, cb = build_curve(a), build_curve(b)
    hi = min(ca.Z, cb.Z)
    xs = np.unique(np.concatenate([ca.x, cb.x]))
    xs = np.clip(xs, 0.0, hi)
    gaps = [curve_value_at(ca, x) - curve_value_at(cb, x) for x in xs]
    i = int(np.argmin(gaps))
    return float(gaps[i]), float(xs[i])


def thermo_majorizes(a: ThermoSystem, b: ThermoSystem, tol: float = TOL_CURVE) -> bool:
    """True if the curve of ``a`` never lies below the curve of ``b``."""
    gap, _ = majorization_gap(a, b, tol)
    return gap >= -tol


def tensor(a: ThermoSystem, b: ThermoSystem) -> ThermoSystem:
    """Composite system; level (i, j) sits at index i * b.n + j."""
    if not np.isclose(a.beta, b.beta, rtol=1e-12, atol=0):
        raise ValueError(f"mismatched beta: {a.beta} vs {b.beta}")
    e = np.add.outer(a.energies, b.energies).ravel()
    p = np.outer(a.populations, b.populations).ravel()
    return ThermoSystem(e, p, a.beta)


def qubit(gap: float, beta: float) -> ThermoSystem:
    """Thermal two-level system with energies (0, gap)."""
    if not np.isfinite(gap) or gap <= 0:
        raise ValueError(f"ancilla gap must be positive and finite, got {gap}")
    e = np.array([0.0, gap])
    return ThermoSystem(e, gibbs_state(e, beta), beta)
