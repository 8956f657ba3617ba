import math

import numpy as np
import pytest

from thermocoarse import (
    PITR,
    PLT,
    AppendThermalQubit,
    DiscardLevels,
    InfeasibleError,
    ThermoSystem,
    apply_protocol,
    beta_order,
    synth_general,
    synth_general_approx,
    synth_same_order,
    synth_same_order_two_level,
    thermo_majorizes,
)
from thermocoarse.ops import apply_op
from thermocoarse.synth import common_order
from randsys import rand_feasible, rand_system

LN2 = math.log(2)
QUBIT_RHO = ThermoSystem([0.0, LN2], [0.5, 0.5])
QUBIT_SIGMA = QUBIT_RHO.with_populations([0.7, 0.3])


def _same_order_pair(rng, n):
    for _ in range(1000):
        s = rand_system(rng, n)
        t = s.with_populations(rand_feasible(rng, s, steps=int(rng.integers(1, 8))))
        if common_order(s, t) is not None:
            return s, t
    raise RuntimeError("no same-order pair found")


def test_same_order_trivial():
    s = ThermoSystem([0.0, 1.0, 2.0], [0.5, 0.3, 0.2])
    assert synth_same_order(s, s).protocol.ops == []
    assert synth_same_order_two_level(s, s).protocol.ops == []


def test_same_order_two_level_degenerate_example():
    s = ThermoSystem([0.0, 0.0], [0.9, 0.1])
    t = s.with_populations([0.7, 0.3])
    for fn in (synth_same_order, synth_same_order_two_level):
        rep = fn(s, t)
        assert len(rep.protocol.ops) == 1
        op = rep.protocol.ops[0]
        assert isinstance(op, PLT)
        assert sorted(op.subset) == [0, 1]
        assert op.lam == pytest.approx(0.5, abs=1e-15)


def test_same_order_random_bounds():
    rng = np.random.default_rng(10)
    for _ in range(100):
        n = int(rng.integers(2, 9))
        s, t = _same_order_pair(rng, n)
        rep = synth_same_order(s, t)
        assert rep.iterations <= n - 1
        assert rep.residual_error <= 1e-9
        assert all(isinstance(op, PLT) for op in rep.protocol.ops)
        two = synth_same_order_two_level(s, t)
        assert two.plt_count <= n - 1
        assert two.residual_error <= 1e-9
        assert all(len(op.subset) == 2 for op in two.protocol.ops)


def test_two_level_step_progress():
    rng = np.random.default_rng(11)
    for _ in range(100):
        s, t = _same_order_pair(rng, 5)
        rep = synth_same_order_two_level(s, t)
        cur = s
        for m, op in enumerate(rep.protocol.ops, start=1):
            cur, _, _ = apply_op(cur, op, [cur.n])
            assert (np.abs(cur.populations - t.populations) <= 1e-12).sum() >= m


def test_same_order_refuses_order_mismatch_and_infeasible():
    with pytest.raises((ValueError, InfeasibleError)):
        synth_same_order(QUBIT_RHO, QUBIT_SIGMA)
    s = ThermoSystem([0.0, 1.0], [0.6, 0.4])
    with pytest.raises(InfeasibleError):
        synth_same_order(s.gibbs(), s)


def test_general_qubit_order_change():
    assert list(beta_order(QUBIT_RHO)) != list(beta_order(QUBIT_SIGMA))
    assert thermo_majorizes(QUBIT_RHO, QUBIT_SIGMA)
    rep = synth_general(QUBIT_RHO, QUBIT_SIGMA)
    ops = rep.protocol.ops
    assert isinstance(ops[0], AppendThermalQubit) and isinstance(ops[-1], DiscardLevels)
    assert rep.used_infinite_levels
    assert rep.residual_error <= 1e-9
    final, dist, trace = apply_protocol(QUBIT_RHO, rep.protocol)
    assert final.populations == pytest.approx([0.7, 0.3], abs=1e-9)
    assert dist.worst_case == 0.0
    # the state right before the discard is sigma x tau_A
    pre = trace[-2]
    q = np.array([2 / 3, 1 / 3])
    assert pre.populations == pytest.approx(np.kron([0.7, 0.3], q), abs=1e-9)


def test_general_random_pairs():
    rng = np.random.default_rng(12)
    done = 0
    while done < 60:
        n = int(rng.integers(2, 6))
        s = rand_system(rng, n, sparse=0.2)
        t = s.with_populations(rand_feasible(rng, s))
        if common_order(s, t) is not None:
            continue
        rep = synth_general(s, t)
        final, dist, _ = apply_protocol(s, rep.protocol)
        assert np.abs(final.populations - t.populations).max() <= 1e-9
        assert dist.worst_case == 0.0
        assert rep.info["ancilla_error"] <= 1e-9
        done += 1


def test_general_refuses_infeasible():
    with pytest.raises(InfeasibleError):
        synth_general(QUBIT_SIGMA, QUBIT_RHO.with_populations([0.05, 0.95]))


def test_general_custom_gap():
    rep = synth_general(QUBIT_RHO, QUBIT_SIGMA, ancilla_gap=1.7)
    assert rep.protocol.ops[0].gap == 1.7
    assert rep.residual_error <= 1e-9
    with pytest.raises(ValueError):
        synth_general(QUBIT_RHO, QUBIT_SIGMA, ancilla_gap=-1.0)


def test_approx_qubit_instance():
    rep = synth_general_approx(QUBIT_RHO, QUBIT_SIGMA, e_cap=40.0, delta=1e-6)
    assert rep.residual_error <= 1e-6
    assert not rep.used_infinite_levels
    final, _, trace = apply_protocol(QUBIT_RHO, rep.protocol)
    assert np.abs(final.populations - QUBIT_SIGMA.populations).max() <= 1e-6
    for s in trace:
        assert np.isfinite(s.energies).all()
        assert s.energies.max() <= 40.0 + 1e-9
    assert not any(isinstance(op, PITR) and op.kappa == math.inf for op in rep.protocol.ops)


def test_approx_refuses_interior_touch():
    # sigma shares the first elbow with rho
    s = ThermoSystem([0.0, 0.0, 0.0], [0.5, 0.3, 0.2])
    t = s.with_populations([0.5, 0.25, 0.25])
    with pytest.raises(InfeasibleError, match="touch"):
        synth_general_approx(s, t)


def test_approx_residual_monotone_in_cap():
    rng = np.random.default_rng(5)
    s = rand_system(rng, 4)
    t = s.with_populations(rand_feasible(rng, s))
    res = []
    for cap in (12.0, 22.0, 32.0):
        rep = synth_general_approx(s, t, e_cap=cap, delta=1e-2)
        res.append(rep.residual_error)
    assert res[1] <= res[0] and res[2] <= res[1]


def test_approx_reports_unreachable_delta():
    rng = np.random.default_rng(5)
    s = rand_system(rng, 4)
    t = s.with_populations(rand_feasible(rng, s))
    with pytest.raises(InfeasibleError, match="achieved"):
        synth_general_approx(s, t, e_cap=6.0, delta=1e-9)


def test_report_dict_fields():
    d = synth_general(QUBIT_RHO, QUBIT_SIGMA).to_dict()
    for key in ("plt_count", "used_infinite_levels", "residual_error"):
        assert key in d


def test_same_order_target_just_past_gibbs():
    # keys tie within the order tolerance but the target overshoots Gibbs by 3.5e-11
    s = ThermoSystem([1.6856153035073675, 0.44276593524400987], [0.0, 1.0])
    t = s.with_populations([0.2239404014380213, 0.7760595985619788])
    for fn in (synth_same_order, synth_same_order_two_level):
        rep = fn(s, t)
        assert rep.plt_count == 1
        assert rep.residual_error <= 1e-9
