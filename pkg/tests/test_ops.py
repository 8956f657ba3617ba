import math

import numpy as np
import pytest

from thermocoarse import (
    LT,
    PITR,
    PLT,
    AppendThermalQubit,
    DiscardLevels,
    Protocol,
    ThermoSystem,
    WorkDistribution,
    apply_lt,
    apply_pitr,
    apply_plt,
    apply_protocol,
    approx_points_flow,
    build_curve,
    curve_value_at,
    exact_points_flow,
    lt_work_distribution,
    pitr_work_distribution,
    thermo_majorizes,
)
from thermocoarse.ops import discard_factor, exact_points_flow_ops, transfer_width
from randsys import rand_system

LN2 = math.log(2)


# ----------------------------------------------------------- distributions

def test_work_distribution_merges_and_moments():
    d = WorkDistribution([0.25, 0.25, 0.5], [1.0, 1.0 + 1e-14, -2.0])
    assert len(d.branches) == 2
    assert d.worst_case == -2.0
    assert d.mean == pytest.approx(-0.5)
    assert d.variance == pytest.approx(0.5 * 1.5**2 + 0.5 * 1.5**2)


def test_work_distribution_infinite_branch():
    d = WorkDistribution([0.9, 0.1], [1.0, -math.inf])
    assert d.worst_case == -math.inf
    # moments are conditional on the finite part
    assert d.mean == 1.0 and d.variance == 0.0


def test_convolution_and_truncation():
    a = WorkDistribution([0.5, 0.5], [0.0, 1.0])
    b = a.convolve(a)
    assert [v for _, v in b.branches] == [0.0, 1.0, 2.0]
    assert b.mean == pytest.approx(1.0)
    t = b.convolve(a, max_branches=2)
    assert t.truncated and t.branches == []
    assert t.worst_case == 0.0
    assert t.mean == pytest.approx(1.5)
    assert t.variance == pytest.approx(0.75)


def test_distribution_rejects_bad_probabilities():
    with pytest.raises(ValueError):
        WorkDistribution([0.5, 0.4], [0, 1])


# -------------------------------------------------------------------- PLT

def test_plt_full_subset_reaches_gibbs():
    s = ThermoSystem([0.0, 1.0, 2.5], [0.1, 0.2, 0.7])
    assert np.allclose(apply_plt(s, [0, 1, 2], 1.0).populations, s.gibbs().populations)


def test_plt_restricted_ratio():
    s = ThermoSystem([0.0, LN2, 5.0], [0.6, 0.0, 0.4])
    out = apply_plt(s, [0, 1], 0.5)
    # restricted Gibbs on {0,1} is (2/3, 1/3) of the 0.6 mass
    assert out.populations == pytest.approx([0.5, 0.1, 0.4])


def test_plt_lambda_zero_is_identity_and_errors():
    s = ThermoSystem([0.0, 1.0, math.inf], [0.5, 0.5, 0.0])
    assert np.array_equal(apply_plt(s, [0, 1], 0.0).populations, s.populations)
    with pytest.raises(ValueError):
        apply_plt(s, [1, 2], 0.5)
    with pytest.raises(ValueError):
        apply_plt(s, [0, 1], 1.5)


def test_plt_is_thermo_monotone():
    rng = np.random.default_rng(3)
    for _ in range(200):
        s = rand_system(rng, 5)
        sub = rng.choice(5, int(rng.integers(2, 6)), replace=False)
        t = apply_plt(s, sub, rng.uniform())
        assert thermo_majorizes(s, t)


# --------------------------------------------------------------------- LT

def test_lt_worst_case_work():
    s = ThermoSystem([0.0, 1.0, 2.0], [0.5, 0.5, 0.0])
    out, w = apply_lt(s, [0.3, -0.2, math.inf])
    assert w == pytest.approx(-0.3)
    assert out.energies[2] == math.inf
    d = lt_work_distribution(s, [0.3, -0.2, math.inf])
    assert d.branches == [(0.5, -0.3), (0.5, 0.2)]


def test_lt_rejects_minus_infinity():
    s = ThermoSystem([0.0, 1.0], [1, 0])
    with pytest.raises(ValueError):
        apply_lt(s, [0.0, -math.inf])


def test_lt_uniform_shift_on_infinite_level():
    s = ThermoSystem([0.0, math.inf], [1, 0])
    out, w = apply_lt(s, [1.0, 1.0])
    assert out.energies.tolist() == [1.0, math.inf]
    assert w == -1.0


def test_raising_occupied_level_to_infinity_costs_infinite_work():
    s = ThermoSystem([0.0, 1.0], [0.9, 0.1])
    _, w = apply_lt(s, [0.0, math.inf])
    assert w == -math.inf


# ------------------------------------------------------------------- PITR

def _pitr_invariants(s, j, k, kappa):
    out, _ = apply_pitr(s, j, k, kappa, work=False)
    w0, w1 = s.weights, out.weights
    assert w1[j] + w1[k] == pytest.approx(w0[j] + w0[k], rel=1e-12)
    assert out.Z == pytest.approx(s.Z, rel=1e-12)
    if out.populations[k] > 0 and out.populations[j] > 0:
        cj = out.populations[j] / w1[j]
        ck = out.populations[k] / w1[k]
        assert cj == pytest.approx(ck, rel=1e-12)
    rest = [i for i in range(s.n) if i not in (j, k)]
    assert np.allclose(out.populations[rest], s.populations[rest], rtol=0, atol=1e-15)
    return out


def test_pitr_closed_form_random():
    rng = np.random.default_rng(4)
    for _ in range(100):
        s = rand_system(rng, 4)
        j, k = rng.choice(4, 2, replace=False)
        out = _pitr_invariants(s, j, k, rng.uniform(0.01, 3.0))
        assert thermo_majorizes(s, out)


def test_pitr_infinite_kappa_merges_into_k():
    s = ThermoSystem([0.0, 1.0, 2.0], [0.2, 0.3, 0.5])
    out = _pitr_invariants(s, 0, 1, math.inf)
    assert out.energies[0] == math.inf and out.populations[0] == 0.0
    assert out.populations[1] == pytest.approx(0.5)
    assert out.weights[1] == pytest.approx(1 + math.exp(-1))


def test_pitr_negative_kappa_and_infinite_k():
    s = ThermoSystem([0.0, 1.0, math.inf], [0.4, 0.6, 0.0])
    # bring an empty infinite level down by drawing weight from level 1
    out = _pitr_invariants(s, 1, 2, 0.5)
    assert np.isfinite(out.energies[2])
    back = _pitr_invariants(out, 1, 2, -0.5)
    assert back.energies[2] == pytest.approx(math.inf) or back.weights[2] < 1e-12
    with pytest.raises(ValueError):
        apply_pitr(s, 2, 1, 0.5)


def test_pitr_work_distribution_is_small():
    s = ThermoSystem([0.0, 0.7, 1.5], [0.5, 0.3, 0.2])
    d = pitr_work_distribution(s, 0, 1, 1.0, steps=1000)
    assert abs(d.mean) < 1e-3
    coarse = pitr_work_distribution(s, 0, 1, 1.0, steps=10)
    assert d.variance < coarse.variance
    assert d.worst_case <= d.mean


def test_transfer_width_hits_requested_weight():
    s = ThermoSystem([0.0, 0.5, 1.0], [0.5, 0.3, 0.2])
    op = transfer_width(s, 0, 1, 0.25)
    out, _ = apply_pitr(s, op.j, op.k, op.kappa, work=False)
    assert out.weights[0] == pytest.approx(0.25)


# ------------------------------------------------------------ points flow

def _non_elbow_system():
    # levels 0 and 1 share the key 0.4 / 0.2 == 0.2 / 0.1; level 2 is below
    return ThermoSystem(-np.log([0.2, 0.1, 0.7]), [0.4, 0.2, 0.4])


def test_exact_points_flow_preserves_curve():
    s = _non_elbow_system()
    out = exact_points_flow(s, 1, 0, 2)
    c0, c1 = build_curve(s), build_curve(out)
    for x in np.linspace(0, s.Z, 41):
        assert curve_value_at(c1, x) == pytest.approx(curve_value_at(c0, x), abs=1e-12)
    # level 1 now sits inside level 2's segment
    k = out.populations / out.weights
    assert k[1] == pytest.approx(k[2], rel=1e-9)
    assert np.isfinite(out.energies).all()
    ops = exact_points_flow_ops(s, 1, 0, 2)
    assert any(isinstance(op, PITR) and op.kappa == math.inf for op in ops)


def test_approx_points_flow_deviation_shrinks_with_cap():
    s = _non_elbow_system()
    devs = []
    for cap in (5.0, 10.0, 20.0):
        out, dev, ops = approx_points_flow(s, 1, 0, cap)
        assert np.isfinite(out.energies).all()
        assert all(not (isinstance(o, PITR) and o.kappa == math.inf) for o in ops)
        assert thermo_majorizes(s, out)
        devs.append(dev)
    assert devs[0] > devs[1] > devs[2]
    assert devs[2] < 1e-8


# ------------------------------------------------------------- protocols

def test_append_and_discard_round_trip():
    s = ThermoSystem([0.0, 1.0], [0.3, 0.7])
    p = Protocol([AppendThermalQubit(LN2), DiscardLevels((1,))])
    out, dist, trace = apply_protocol(s, p)
    assert out.populations == pytest.approx(s.populations)
    assert trace[0].n == 4
    assert dist.worst_case == 0.0


def test_discard_rejects_correlations():
    s = ThermoSystem([0.0, 1.0, LN2, 1 + LN2], [0.5, 0.0, 0.0, 0.5])
    with pytest.raises(ValueError):
        discard_factor(s, [2, 2], (1,))


def test_protocol_work_adds_up():
    s = ThermoSystem([0.0, 1.0], [1.0, 0.0])
    p = Protocol([LT((0.5, 0.0)), PLT((0, 1), 1.0), LT((-0.5, 0.0))])
    out, dist, _ = apply_protocol(s, p)
    assert out.energies == pytest.approx([0.0, 1.0])
    assert dist.worst_case == pytest.approx(-0.5 - 0.0)
    assert dist.mean == pytest.approx(-0.5 + 0.5 * 1 / (1 + math.exp(-0.5)))


def test_simulated_pitr_work_in_protocol():
    s = ThermoSystem([0.0, 1.0], [0.7, 0.3])
    p = Protocol([PITR(0, 1, 0.8, steps=200)])
    _, ideal, _ = apply_protocol(s, p)
    _, sim, _ = apply_protocol(s, p, pitr_work="simulate")
    assert ideal.worst_case == 0.0
    assert sim.worst_case < 0 and abs(sim.mean) < 1e-2


def _ladder_paths(s, j, k, kappa, t):
    """Enumerate every level path of the t-step ladder by direct simulation."""
    import itertools

    beta = s.beta
    e = s.energies.astype(float).copy()
    mass = s.populations[j] + s.populations[k]
    # per step: occupation odds after thermalizing, and the two shifts
    steps = []
    for _ in range(t):
        wj, wk = math.exp(-beta * e[j]), math.exp(-beta * e[k])
        pj = wj / (wj + wk)
        new_ej = e[j] + kappa / t
        new_wk = wj + wk - math.exp(-beta * new_ej)
        new_ek = -math.log(new_wk) / beta
        steps.append((pj, new_ej - e[j], new_ek - e[k]))
        e[j], e[k] = new_ej, new_ek
    probs, values = [1 - mass], [0.0]
    for path in itertools.product((0, 1), repeat=t):
        p, w = mass, 0.0
        for (pj, hj, hk), in_j in zip(steps, path):
            p *= pj if in_j else 1 - pj
            w -= hj if in_j else hk
        probs.append(p)
        values.append(w)
    return WorkDistribution(probs, values)


def test_pitr_ladder_matches_path_enumeration():
    rng = np.random.default_rng(6)
    for _ in range(10):
        s = rand_system(rng, 4)
        j, k = (int(v) for v in rng.choice(4, 2, replace=False))
        kappa = rng.uniform(0.1, 2.0)
        t = 7
        got = pitr_work_distribution(s, j, k, kappa, steps=t)
        ref = _ladder_paths(s, j, k, kappa, t)
        assert len(got.branches) == len(ref.branches)
        for (p1, v1), (p2, v2) in zip(got.branches, ref.branches):
            assert p1 == pytest.approx(p2, abs=1e-12)
            assert v1 == pytest.approx(v2, abs=1e-12)


def test_pitr_summary_moments_match_exact_at_switch_over():
    # 19 steps enumerate (2**19 < 1e6), 20 steps switch to summary moments
    s = ThermoSystem([0.0, 0.7, 1.5], [0.5, 0.3, 0.2])
    exact = pitr_work_distribution(s, 0, 1, 1.0, steps=20)
    assert exact.truncated
    ref = _ladder_paths(s, 0, 1, 1.0, 14)
    approx14 = pitr_work_distribution(s, 0, 1, 1.0, steps=14)
    assert approx14.mean == pytest.approx(ref.mean, abs=1e-12)
    assert approx14.variance == pytest.approx(ref.variance, abs=1e-12)
    from thermocoarse import ops
    saved = ops.MAX_BRANCHES
    try:
        ops.MAX_BRANCHES = 10
        summ = pitr_work_distribution(s, 0, 1, 1.0, steps=14)
    finally:
        ops.MAX_BRANCHES = saved
    assert summ.truncated
    assert summ.mean == pytest.approx(ref.mean, abs=1e-12)
    assert summ.variance == pytest.approx(ref.variance, abs=1e-12)
    assert summ.worst_case == pytest.approx(ref.worst_case, abs=1e-12)
