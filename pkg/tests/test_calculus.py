import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import random_bandlimited
from eulerci.calculus import (
    MollifierSpec,
    curl,
    div_inverse,
    div_inverse_arr,
    div_sym_arr,
    divergence,
    gradient,
    leray_P,
    leray_Q,
    mollify,
    time_derivative,
)
from eulerci.grid import Field, GridSpec, sup_norm, sym_trace
from eulerci.stationary import make_block

S2 = GridSpec(2, 32, 4)
S3 = GridSpec(3, 16, 2)


def vec(spec, fn):
    return Field.from_function(spec, "vector", fn)


def zero(x):
    return 0 * sum(x)


def test_divergence_examples():
    shear = vec(S2, lambda x, t: [zero(x), np.sin(x[0]) + zero(x)])
    assert sup_norm(divergence(shear)) < 1e-13
    f = vec(S2, lambda x, t: [np.cos(x[0]) + zero(x), zero(x)])
    x = S2.coords()
    assert np.max(np.abs(divergence(f).data[0, 0] + np.sin(x[0]) + zero(x))) < 1e-13
    m = Field.from_function(S2, "symtensor", lambda x, t: [zero(x), -np.cos(x[1]) + zero(x), zero(x)])
    out = divergence(m).data[:, 0]
    assert np.max(np.abs(out[0] - np.sin(x[1]) - zero(x))) < 1e-13 and np.max(np.abs(out[1])) < 1e-13


def test_curl_2d_scalar():
    x = S2.coords()
    f = Field.from_function(S2, "scalar", lambda x, t: np.cos(x[0]) + zero(x))
    out = curl(f).data[:, 0]
    assert np.max(np.abs(out[0])) < 1e-13
    assert np.max(np.abs(out[1] + np.sin(x[0]) + zero(x))) < 1e-13


def test_curl_2d_vector_rank_overload():
    f = vec(S2, lambda x, t: [zero(x), np.sin(x[0]) + zero(x)])
    out = curl(f)
    assert out.rank == "scalar"
    x = S2.coords()
    assert np.max(np.abs(out.data[0, 0] - np.cos(x[0]) - zero(x))) < 1e-13


@pytest.mark.parametrize("k", [(1, 1, 0), (1, -2, 1), (0, 0, 2), (-1, 1, 1)])
def test_curl_3d_potential_gives_block(k):
    blk = make_block(3, k)
    x = S3.coords()
    e = np.exp(1j * sum(k[i] * x[i] for i in range(3)))
    pot = np.stack([np.real(blk.potential[i] * e) for i in range(3)])
    want = np.stack([np.real(blk.amplitude[i] * e) for i in range(3)])
    f = Field(S3, "vector", np.broadcast_to(pot[:, None], (3,) + S3.shape).copy())
    assert np.max(np.abs(curl(f).data[:, 0] - want)) < 1e-12


def test_curl_of_gradient_vanishes(rng):
    s = Field(S3, "scalar", random_bandlimited(rng, 3, 16, 1, nt=2))
    assert sup_norm(curl(gradient(s))) < 1e-12
    with pytest.raises(ValueError):
        curl(s)


def test_leray_examples():
    g = vec(S2, lambda x, t: [np.cos(x[0]) + zero(x), zero(x)])
    assert sup_norm(leray_Q(g) - g) < 1e-13 and sup_norm(leray_P(g)) < 1e-13
    sh = vec(S2, lambda x, t: [zero(x), np.sin(x[0]) + zero(x)])
    assert sup_norm(leray_P(sh) - sh) < 1e-13 and sup_norm(leray_Q(sh)) < 1e-13
    c = vec(S2, lambda x, t: [0.7 + zero(x), -0.2 + zero(x)])
    assert sup_norm(leray_Q(c) - c) < 1e-14 and sup_norm(leray_P(c)) < 1e-14


def test_div_inverse_examples():
    c = vec(S2, lambda x, t: [0.7 + zero(x), -0.2 + zero(x)])
    assert sup_norm(div_inverse(c)) == 0.0
    v = vec(S2, lambda x, t: [np.sin(x[1]) + zero(x), zero(x)])
    R = div_inverse(v).data[:, 0]
    x = S2.coords()
    want = -np.cos(x[1]) + zero(x)
    assert np.max(np.abs(R[0])) < 1e-13 and np.max(np.abs(R[2])) < 1e-13
    assert np.max(np.abs(R[1] - want)) < 1e-13


@given(seed=st.integers(0, 10_000), d=st.sampled_from([2, 3]))
def test_operator_identities(seed, d):
    rng = np.random.default_rng(seed)
    n = 16 if d == 2 else 8
    spec = GridSpec(d, n, 1)
    v = Field(spec, "vector", random_bandlimited(rng, d, n, d))
    # P + Q = identity; P v divergence-free and mean-free
    assert sup_norm(leray_P(v) + leray_Q(v) - v) <= 1e-12
    assert sup_norm(divergence(leray_P(v))) <= 1e-12
    assert np.max(np.abs(leray_P(v).data.reshape(d, -1).mean(axis=1))) <= 1e-13
    # R v: symmetric by storage, trace-free, right inverse of div on mean-free part
    R = div_inverse_arr(v.data, d)
    assert np.max(np.abs(sym_trace(R, d))) <= 1e-13
    mean = v.data.reshape(d, -1).mean(axis=1).reshape((d,) + (1,) * (d + 1))
    assert np.max(np.abs(div_sym_arr(R, d) - (v.data - mean))) <= 1e-10


def test_time_derivative_of_trig():
    spec = GridSpec(2, 8, 16)
    f = Field.from_function(spec, "scalar", lambda x, t: np.sin(2 * t) + zero(x))
    t = spec.times().reshape(-1, 1, 1)
    assert np.max(np.abs(time_derivative(f).data[0] - 2 * np.cos(2 * t))) < 1e-12


# ---------------------------------------------------------------- mollifier

SM = GridSpec(2, 64, 64)


def test_mollifier_weights_unit_mass():
    _, w = MollifierSpec(0.25).weights(64)
    assert np.sum(w) == pytest.approx(1.0, abs=1e-15) and np.all(w >= 0)


def test_mollifier_rejects_bad_scales():
    with pytest.raises(ValueError):
        MollifierSpec(0.75)
    with pytest.raises(ValueError, match="need n >= 64"):
        MollifierSpec(0.125).weights(32)


def test_mollify_constant_exact():
    f = Field.from_function(SM, "scalar", lambda x, t: 0.3 + zero(x) + 0 * t)
    assert np.array_equal(mollify(f, MollifierSpec(0.25)).data, f.data)


def test_mollify_cosine_is_damped_multiple():
    f = Field.from_function(SM, "scalar", lambda x, t: np.cos(x[0]) + zero(x) + 0 * t)
    betas = []
    for ell in (0.5, 0.25, 0.125):
        g = mollify(f, MollifierSpec(ell)).data
        # direct convolution oracle: cos is an eigenfunction of any even kernel
        beta = g[0, 0, 0, 0] / f.data[0, 0, 0, 0]
        assert np.max(np.abs(g - beta * f.data)) < 1e-13
        assert 0 < beta <= 1
        betas.append(beta)
    assert betas[0] < betas[1] < betas[2]
    assert 1 - betas[2] < 0.05


def test_mollify_sup_and_rate():
    f = Field.from_function(SM, "scalar", lambda x, t: np.sin(x[0]) * np.sin(t) + zero(x))
    ratios = []
    for ell in (0.5, 0.25, 0.125):
        g = mollify(f, MollifierSpec(ell))
        assert sup_norm(g) <= sup_norm(f) + 1e-15
        ratios.append(sup_norm(g - f) / ell)
    assert max(ratios) < 2.0 and ratios[2] <= ratios[0]


@given(seed=st.integers(0, 1000), sx=st.integers(0, 63), sy=st.integers(0, 63), stt=st.integers(0, 7))
def test_mollify_commutes_with_grid_shifts(seed, sx, sy, stt):
    rng = np.random.default_rng(seed)
    spec = GridSpec(2, 64, 8)
    # time-constant data: only the spatial kernel acts
    base = rng.normal(size=(1, 1, 64, 64))
    data = np.broadcast_to(base, (1,) + spec.shape).copy()
    f = Field(spec, "scalar", data)
    m = MollifierSpec(0.125)
    shifted = np.roll(data, (stt, sx, sy), axis=(1, 2, 3))
    a = np.roll(mollify(f, m).data, (stt, sx, sy), axis=(1, 2, 3))
    b = mollify(Field(spec, "scalar", shifted), m).data
    assert np.array_equal(a, b)


def test_mollify_space_time_shift_equivariance(rng):
    data = rng.normal(size=(1,) + SM.shape)
    f = Field(SM, "scalar", data)
    m = MollifierSpec(0.25)
    a = np.roll(mollify(f, m).data, (5, 3, 11), axis=(1, 2, 3))
    b = mollify(Field(SM, "scalar", np.roll(data, (5, 3, 11), axis=(1, 2, 3))), m).data
    assert np.array_equal(a, b)
