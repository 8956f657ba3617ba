"""Brute-force cross-checks.

* Gibbs-stochastic feasibility by a dense phase-one simplex (Bland's rule),
  run in floating point or exactly over ``fractions.Fraction``.
* A partial level thermalization realized as an explicit energy-conserving
  permutation on system + Gibbs ancilla + maximally mixed register.
* Grid search for the work of transition.
"""

from __future__ import annotations

from fractions import Fraction

import numpy as np

from .core import ThermoSystem, thermo_majorizes
from .work import _bracket, transition_feasible

LP_TOL = 1e-8
MAX_LP_DIM = 6
MAX_BATH_SIZE = 200_000


class SimplexCycling(RuntimeError):
    pass


def _phase_one(A, b, tol, max_pivots=5000) -> bool:
    """True if {x >= 0 : A x = b} is nonempty.

    ``A`` and ``b`` are numpy arrays of float or of Fraction objects.
    """
    m, N = A.shape
    A = A.copy()
    b = b.copy()
    neg = b < 0
    A[neg] = -A[neg]
    b[neg] = -b[neg]
    zero, one = (Fraction(0), Fraction(1)) if A.dtype == object else (0.0, 1.0)
    T = np.empty((m + 1, N + m + 1), dtype=A.dtype)
    T[:] = zero
    T[:m, :N] = A
    for r in range(m):
        T[r, N + r] = one
    T[:m, -1] = b
    # objective row: minimize sum of artificials, written in reduced form
    T[m, :] = zero
    for r in range(m):
        T[m, :N] -= T[r, :N]
        T[m, -1] -= T[r, -1]
    basis = list(range(N, N + m))
    for _ in range(max_pivots):
        col = next((c for c in range(N + m) if T[m, c] < -tol), None)
        if col is None:
            return -T[m, -1] <= tol * max(1.0, float(abs(b).max()) if A.dtype != object else 1)
        best, row = None, None
        for r in range(m):
            if T[r, col] > tol:
                ratio = T[r, -1] / T[r, col]
                if best is None or ratio < best - (tol if A.dtype != object else 0) or \
                        (abs(ratio - best) <= (tol if A.dtype != object else 0) and basis[r] < basis[row]):
                    best, row = ratio, r
        if row is None:
            # phase one is bounded below by 0, so this cannot happen
            raise RuntimeError("unbounded phase-one problem")
        piv = T[row, col]
        T[row] = T[row] / piv
        for r in range(m + 1):
            if r != row and T[r, col] != zero:
                T[r] = T[r] - T[r, col] * T[row]
        basis[row] = col
    raise SimplexCycling(f"simplex did not finish within {max_pivots} pivots")


def feasibility_lp(g, eta, zeta):
    """Constraint matrix over G (row-major, G[i, j] = G_ij) for the three families."""
    n = len(g)
    rows, rhs = [], []
    dtype = object if isinstance(g[0], Fraction) else float
    for j in range(n):
        r = np.zeros(n * n, dtype=dtype) if dtype is float else np.array([Fraction(0)] * (n * n), dtype=object)
        r[j::n] = Fraction(1) if dtype is object else 1.0
        rows.append(r)
        rhs.append(Fraction(1) if dtype is object else 1.0)
    for vec, out in ((g, g), (eta, zeta)):
        for i in range(n):
            r = np.zeros(n * n, dtype=dtype) if dtype is float else np.array([Fraction(0)] * (n * n), dtype=object)
            r[i * n:(i + 1) * n] = np.array(vec, dtype=dtype)
            rows.append(r)
            rhs.append(out[i])
    return np.array(rows, dtype=dtype), np.array(rhs, dtype=dtype)


def gibbs_stochastic_feasible(rho: ThermoSystem, sigma, tol: float = LP_TOL,
                              max_dim: int = MAX_LP_DIM) -> bool:
    """Is there a column-stochastic G with G g = g and G eta = zeta?"""
    zeta = sigma.populations if isinstance(sigma, ThermoSystem) else np.asarray(sigma, float)
    if rho.n > max_dim:
        raise ValueError(f"dimension {rho.n} above the oracle cap {max_dim}")
    if not np.isfinite(rho.energies).all():
        raise ValueError("oracle needs finite energies")
    g = rho.weights
    A, b = feasibility_lp(g, rho.populations, zeta)
    return _phase_one(A, b, tol)


def exact_feasible(g, eta, zeta) -> bool:
    """Rational version of :func:`gibbs_stochastic_feasible` on the given floats."""
    g, eta, zeta = ([Fraction(float(v)) for v in arr] for arr in (g, eta, zeta))
    # rescale so both vectors carry exactly the same mass
    se, sz = sum(eta), sum(zeta)
    zeta = [z * se / sz for z in zeta]
    A, b = feasibility_lp(g, eta, zeta)
    return _phase_one(A, b, Fraction(0))


def exact_majorizes(g, eta, zeta) -> bool:
    """Rational curve comparison on the given floats (eta and zeta normalized exactly)."""
    g = [Fraction(float(v)) for v in g]
    eta = [Fraction(float(v)) for v in eta]
    zeta = [Fraction(float(v)) for v in zeta]

    def curve(p):
        order = sorted(range(len(g)), key=lambda i: (-(p[i] / g[i]), i))
        xs, ys = [Fraction(0)], [Fraction(0)]
        for i in order:
            xs.append(xs[-1] + g[i])
            ys.append(ys[-1] + p[i])
        return xs, ys

    def value(xs, ys, x):
        for k in range(1, len(xs)):
            if x <= xs[k]:
                if xs[k] == xs[k - 1]:
                    return ys[k]
                return ys[k - 1] + (ys[k] - ys[k - 1]) * (x - xs[k - 1]) / (xs[k] - xs[k - 1])
        return ys[-1]

    ce, cz = curve(eta), curve(zeta)
    # total mass may differ by float rounding; compare each curve scaled to 1
    se, sz = ce[1][-1], cz[1][-1]
    for x in set(ce[0]) | set(cz[0]):
        if value(*ce, x) / se < value(*cz, x) / sz:
            return False
    return True


# ---------------------------------------------------------------- PLT bath

def plt_via_bath(s: ThermoSystem, subset, a: int, b: int, max_size: int = MAX_BATH_SIZE,
                 return_check: bool = False):
    """Partial level thermalization with weight a/b as a thermal operation.

    The system is joined with a Gibbs ancilla carrying the subset's energies
    and a b-level maximally mixed register; levels (r, s, t) with r in the
    subset and t < a are swapped to (s, r, t); the ancillas are traced out.
    """
    a, b = int(a), int(b)
    if b < 1 or not 0 <= a <= b:
        raise ValueError(f"need 0 <= a <= b with b >= 1, got a={a}, b={b}")
    P = sorted(set(int(i) for i in subset))
    if not P or P[0] < 0 or P[-1] >= s.n:
        raise ValueError("invalid subset")
    E = s.energies
    if not np.isfinite(E[P]).all():
        raise ValueError("subset touches an infinite level")
    n, d = s.n, len(P)
    if n * d * b > max_size:
        raise ValueError(f"bath of size {n * d * b} above cap {max_size}")
    wA = np.exp(-s.beta * (E[P] - E[P].min()))
    tauA = wA / wA.sum()
    joint = np.einsum("r,s,t->rst", s.populations, tauA, np.full(b, 1.0 / b))
    energy = np.add.outer(E, E[P])
    pos = {r: k for k, r in enumerate(P)}
    out = joint.copy()
    moved = 0
    shell_err = 0.0
    for r in P:
        for si in range(d):
            dest = P[si]
            # the map is an involution, so writing the swapped block suffices
            out[dest, pos[r], :a] = joint[r, si, :a]
            shell_err = max(shell_err, abs(energy[r, si] - energy[dest, pos[r]]))
            moved += a
    if shell_err > 1e-12 * max(1.0, np.abs(energy).max()):
        raise RuntimeError("bath permutation does not conserve energy")
    if abs(out.sum() - joint.sum()) > 1e-14:
        raise RuntimeError("bath permutation does not conserve population")
    result = s.with_populations(out.sum(axis=(1, 2)))
    if return_check:
        return result, {"moved": moved, "shell_error": shell_err}
    return result


# ------------------------------------------------------- transition search

def brute_force_transition_work(rho: ThermoSystem, sigma, grid: int = 2001) -> float:
    """Largest feasible W on a uniform grid over the bisection bracket."""
    if rho.n > 3:
        raise ValueError("grid oracle limited to n <= 3")
    zeta = sigma.populations if isinstance(sigma, ThermoSystem) else np.asarray(sigma, float)
    w_max = _bracket(rho.Z, rho.n, rho.beta)
    Ws = np.linspace(-w_max, w_max, int(grid))
    best = None
    for W in Ws:
        if transition_feasible(rho, zeta, float(W)):
            best = float(W)
    if best is None:
        raise ValueError("no feasible grid point")
    return best


def grid_step(rho: ThermoSystem, grid: int) -> float:
    return 2 * _bracket(rho.Z, rho.n, rho.beta) / (int(grid) - 1)


# ------------------------------------------------------------- corpus

def _gibbs_mix(rng, eta, g, steps):
    eta = eta.copy()
    n = eta.size
    for _ in range(steps):
        i, j = rng.choice(n, 2, replace=False)
        amax = min(1.0, g[j] / g[i])
        x = rng.uniform(0, amax)
        y = x * g[i] / g[j]
        ei, ej = eta[i], eta[j]
        eta[i] = (1 - x) * ei + y * ej
        eta[j] = x * ei + (1 - y) * ej
    eta = np.clip(eta, 0, None)
    return eta / eta.sum()


def _lift(rng, rho, zeta):
    """Raise one population above what rho's curve allows at that level's width.

    rho's curve lies below x * max(eta/g), so zeta_i > max(eta/g) * g_i puts
    zeta's curve above rho's at x = g_i.  Returns None when no level admits it.
    """
    g = rho.weights
    slope = float((rho.populations / g).max())
    for i in rng.permutation(rho.n):
        bound = slope * g[i]
        if bound >= 0.95:
            continue
        target = bound + rng.uniform(0.02, 1.0) * (1.0 - bound)
        rest = np.delete(zeta, i)
        if rest.sum() <= 0:
            rest = np.ones_like(rest)
        out = np.insert(rest / rest.sum() * (1.0 - target), i, target)
        return out
    return None


def random_pair(rng, n: int, feasible: bool, beta: float = 1.0):
    """A random (rho, sigma) pair.  Feasible pairs come from Gibbs-stochastic
    mixing; infeasible ones lift one population past rho's slope bound."""
    while True:
        e = rng.uniform(0.0, 2.0, n)
        rho = ThermoSystem(e, rng.dirichlet(np.ones(n)), beta)
        zeta = _gibbs_mix(rng, rho.populations, rho.weights, 2 * n)
        if feasible:
            return rho, zeta
        lifted = _lift(rng, rho, zeta)
        if lifted is not None:
            return rho, lifted


def oracle_corpus(trials: int = 1000, seed: int = 0, n_range=(2, 5), tol: float = 1e-9) -> dict:
    """Compare thermo_majorizes with the LP oracle on random pairs."""
    rng = np.random.default_rng(seed)
    agreements = 0
    disagreements = []
    adjudicated = []
    for k in range(trials):
        n = int(rng.integers(n_range[0], n_range[1] + 1))
        rho, zeta = random_pair(rng, n, feasible=(k % 2 == 0))
        sigma = rho.with_populations(zeta)
        tm = thermo_majorizes(rho, sigma, tol)
        lp = gibbs_stochastic_feasible(rho, sigma)
        if tm == lp:
            agreements += 1
            continue
        g = rho.weights
        ex_lp = exact_feasible(g, rho.populations, sigma.populations)
        ex_tm = exact_majorizes(g, rho.populations, sigma.populations)
        entry = {"trial": k, "n": n, "thermo_majorizes": tm, "lp": lp,
                 "exact_lp": ex_lp, "exact_curve": ex_tm}
        if ex_lp == ex_tm:
            adjudicated.append(entry)
            agreements += 1
        else:
            disagreements.append(entry)
    return {"trials": trials, "seed": seed, "agreements": agreements,
            "disagreements": disagreements, "adjudicated": adjudicated}
