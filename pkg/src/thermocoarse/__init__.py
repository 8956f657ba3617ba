"""Thermo-majorization decisions, coarse-operation protocol synthesis and
work accounting for diagonal states."""

from .core import (
    InfeasibleError,
    ThermoCurve,
    ThermoSystem,
    beta_order,
    build_curve,
    curve_pieces,
    curve_value_at,
    elbows,
    gibbs_state,
    gibbs_weights,
    horizontal_distance,
    log_keys,
    majorization_gap,
    partition_function,
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
    apply_lt,
    apply_pitr,
    apply_plt,
    apply_protocol,
    approx_points_flow,
    exact_points_flow,
    lt_work_distribution,
    pitr_work_distribution,
)
from .synth import (
    SynthesisReport,
    synth_general,
    synth_general_approx,
    synth_same_order,
    synth_same_order_two_level,
)
from .work import (
    distillable_work,
    extraction_protocol,
    formation_protocol,
    work_of_formation,
    work_of_transition,
    work_of_transition_with_hamiltonian_change,
)

__version__ = "0.1.0"
