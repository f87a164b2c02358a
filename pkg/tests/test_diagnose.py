import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from eulerci.calculus import div_sym_arr
from eulerci.convexint import SubsolutionState, init_schedule, step
from eulerci.diagnose import (
    BOUND_NAMES,
    SWEEP_METRICS,
    SweepTable,
    bound_report,
    euler_reynolds_residual,
    is_nonincreasing,
    lambda_sweep,
    residual_field,
    stationary_phase_decay,
    tensor_moment,
    thresholds,
)
from eulerci.grid import Field, GridSpec
from eulerci.matgeom import packaged_families
from eulerci.stationary import assemble_W

from conftest import random_bandlimited

FAM2 = packaged_families(2, 1)
DESK = {"mollify_const": 1.0, "frequency_const": 1.0}


def _schedule(state):
    return init_schedule(state.gap + state.energy, state, FAM2, overrides=DESK)


# ---------------------------------------------------------------- residual


def test_residual_stationary_pair():
    spec = GridSpec(2, 32, 1)
    coeffs = {(1, 2): 0.3 + 0.1j, (2, -1): -0.2j}
    coeffs.update({tuple(-c for c in k): np.conj(a) for k, a in list(coeffs.items())})
    W, _, Q = assemble_W(coeffs, spec)
    r = residual_field(W, Field.zeros(spec, "symtensor"), Q)
    assert np.max(np.abs(r)) <= 1e-9


def test_residual_trivial_state_is_zero():
    st_ = SubsolutionState.trivial(GridSpec(2, 16, 4), 1.0)
    assert euler_reynolds_residual(st_) == 0.0


def test_residual_zero_velocity_gives_stress_divergence(rng):
    spec = GridSpec(2, 16, 2)
    data = random_bandlimited(rng, 2, 16, 3, nt=2)
    stress = Field(spec, "symtensor", data)
    r = residual_field(Field.zeros(spec, "vector"), stress, Field.zeros(spec, "scalar"))
    for j in range(2):
        assert np.max(np.abs(r[:, j] + div_sym_arr(data[:, j], 2))) <= 1e-12


@given(seed=st.integers(0, 2**31 - 1), a=st.floats(-3, 3), b=st.floats(-3, 3))
def test_residual_affine_in_stress(seed, a, b):
    rng = np.random.default_rng(seed)
    spec = GridSpec(2, 16, 2)
    v = Field(spec, "vector", random_bandlimited(rng, 2, 16, 2, nt=2))
    p = Field(spec, "scalar", random_bandlimited(rng, 2, 16, 1, nt=2))
    s1 = Field(spec, "symtensor", random_bandlimited(rng, 2, 16, 3, nt=2))
    s2 = Field(spec, "symtensor", random_bandlimited(rng, 2, 16, 3, nt=2))
    base = residual_field(v, Field.zeros(spec, "symtensor"), p)
    lhs = residual_field(v, s1 * a + s2 * b, p) - base
    rhs = a * (residual_field(v, s1, p) - base) + b * (residual_field(v, s2, p) - base)
    assert np.max(np.abs(lhs - rhs)) <= 1e-12 * max(1.0, abs(a) + abs(b)) * 10


# ---------------------------------------------------------------- bounds


def test_thresholds_pure_and_formula():
    st_ = SubsolutionState.trivial(GridSpec(2, 16, 4), 1.0)
    sch = _schedule(st_)
    gap = np.full(4, 1.0)
    t1 = thresholds(sch, 0.5, 3.0, gap)
    t2 = thresholds(sch, 0.5, 3.0, gap)
    for k in BOUND_NAMES:
        assert np.array_equal(t1[k], t2[k])
    dbar = sch.contraction * 0.5**1.5
    assert t1["c1_next"] == sch.amplitude_const * 0.5**1.5 * (3.0 / dbar**2) ** (1.0 + sch.eps)
    assert t1["velocity_increment"] == pytest.approx(sch.velocity_const * np.sqrt(0.5), rel=1e-15)
    assert np.allclose(t1["energy_gap"], 0.5 * sch.contraction * dbar)


def test_bound_report_zero_injection_passes():
    from eulerci.convexint import build_perturbation, compose_step, mollify_state, step_params

    spec = GridSpec(2, 64, 8)
    st_ = SubsolutionState.trivial(spec, 1.0)
    sch = _schedule(st_)
    p = step_params(1.0, st_.c1_bound, sch, frequency=4, mollify_scale=0.5)
    m = mollify_state(st_, p)
    out = compose_step(st_, build_perturbation(m, p, FAM2, amplitude_scale=0.0), m, p)
    rep = bound_report(st_, out, sch)
    for name in ("stress_sup", "velocity_increment", "h_minus1", "pressure_increment"):
        assert rep.row(name).passed and rep.row(name).measured == 0.0
    csv = rep.to_csv().splitlines()
    assert csv[0] == "name,measured,threshold,pass" and len(csv) == 1 + len(BOUND_NAMES)


def test_bound_report_energy_row_matches_step():
    spec = GridSpec(2, 64, 32)
    st_ = SubsolutionState.trivial(spec, 1.0 + 0.1 * np.sin(spec.times()))
    sch = _schedule(st_)
    out = step(st_, sch, FAM2, frequency=4, mollify_scale=0.5)
    rep = bound_report(st_, out, sch, step_index=0)
    assert rep.row("energy_gap").passed and rep.row("energy_gap").measured <= 1e-12
    assert rep.frequency == 4 and rep.delta == 1.0 and rep.next_delta == 0.5
    with pytest.raises(KeyError):
        rep.row("missing")


# ---------------------------------------------------------------- tensor moment


def test_tensor_moment_zero_case():
    spec = GridSpec(2, 16, 2)
    z = Field.zeros(spec, "vector")
    tm = tensor_moment(z, z, Field.zeros(spec, "symtensor"), np.zeros(2))
    assert tm.deviation == 0.0 and np.all(tm.per_time == 0)


def test_tensor_moment_isotropic_shear():
    spec = GridSpec(2, 16, 1)
    x = spec.coords()
    # mean of (sin x2, sin x1) outer itself is Id/2
    v = np.stack([np.sin(x[1]) + 0 * x[0], np.sin(x[0]) + 0 * x[1]])[:, None]
    tm = tensor_moment(Field(spec, "vector", v), Field.zeros(spec, "vector"), Field.zeros(spec, "symtensor"), np.ones(1))
    assert tm.deviation <= 1e-15
    assert tm.velocity_diagonal(0)[0] == pytest.approx(0.5) and tm.diagonal(1)[0] == pytest.approx(0.0, abs=1e-15)
    assert tm.matrix(0).full.shape == (2, 2)


# ---------------------------------------------------------------- stationary phase


def test_stationary_phase_constant_amplitude_vanishes():
    tab = stationary_phase_decay(np.ones((64, 64)), (1, 0), [4, 8, 16])
    assert max(tab.values) <= 1e-15


def test_stationary_phase_smooth_amplitude_decays():
    n = 256
    x = np.arange(n) * 2 * np.pi / n
    a = np.exp(np.cos(x))[:, None] + 0 * x[None, :]
    tab = stationary_phase_decay(a, (1, 0), [4, 8, 16, 32])
    assert tab.slope <= -2.75 and tab.passed
    assert is_nonincreasing(tab.values, slack=1e-15)


def test_stationary_phase_resonance_does_not_decay():
    n = 64
    x = np.arange(n) * 2 * np.pi / n
    a = np.cos(8 * x)[:, None] + 0 * x[None, :]
    tab = stationary_phase_decay(a, (1, 0), [4, 8, 16])
    assert tab.values[1] == pytest.approx(0.5, abs=1e-12) and not tab.passed


# ---------------------------------------------------------------- sweeps


def test_is_nonincreasing():
    assert is_nonincreasing([3, 2, 2, 1])
    assert not is_nonincreasing([1, 2])
    assert is_nonincreasing([1.0, 1.0 + 1e-13], slack=1e-12)
    assert is_nonincreasing([])


def test_sweep_table_csv():
    tab = SweepTable([4, 8], {m: [1.0, 0.5] for m in SWEEP_METRICS}, [0.0, 0.0])
    lines = tab.to_csv().splitlines()
    assert lines[0] == "lambda,metric,value" and len(lines) == 1 + 2 * len(SWEEP_METRICS)
    assert lines[1] == "4,energy_deviation,1.0"
    assert all(tab.monotone(m) for m in SWEEP_METRICS)


def test_lambda_sweep_small_and_empty():
    spec = GridSpec(2, 64, 8)
    st_ = SubsolutionState.trivial(spec, 1.0)
    sch = _schedule(st_)
    tab = lambda_sweep(st_, sch, FAM2, [4], mollify_scale=0.5)
    assert tab.lambdas == [4] and tab.residuals[0] <= 1e-10
    with pytest.raises(ValueError):
        lambda_sweep(st_, sch, FAM2, [], mollify_scale=0.5)
