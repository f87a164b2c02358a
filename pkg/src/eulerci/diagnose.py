"""Measured counterparts of the step bounds, decay sweeps and moment checks.

Nothing here asserts; each function returns numbers (and pass flags where a
threshold exists) so runs can be inspected after the fact.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .calculus import div_outer_arr, div_sym_arr, grad_arr, time_derivative_arr
from .grid import Field, pointwise_norm, sym_identity, sym_pairs
from .matgeom import DirectionFamilies, SymMatrix

# ---------------------------------------------------------------- residual


def residual_field(v: Field, stress: Field, p: Field, dvdt: np.ndarray | None = None) -> np.ndarray:
    """Samples of dt v + div(v (x) v) + grad p - div stress, shape (d, nt, *space)."""
    d = v.d
    dv = time_derivative_arr(v.data, axis=1) if dvdt is None else dvdt
    out = np.empty_like(v.data)
    for j in range(v.spec.n_time):
        vj = v.at(j)
        out[:, j] = dv[:, j] + div_outer_arr(vj, vj, d) + grad_arr(p.at(j)[0], d) - div_sym_arr(stress.at(j), d)
    return out


def euler_reynolds_residual(state, use_stored_derivative: bool = False) -> float:
    """Sup norm of the Euler-Reynolds defect; time derivative from the samples by default."""
    dvdt = state.dvdt.data if (use_stored_derivative and state.dvdt is not None) else None
    r = residual_field(state.v, state.stress, state.p, dvdt)
    return float(np.max(np.sqrt(np.sum(r * r, axis=0))))


# ---------------------------------------------------------------- bound report


@dataclass
class BoundRow:
    name: str
    measured: float
    threshold: float
    passed: bool


@dataclass
class StepReport:
    step: int
    delta: float
    next_delta: float
    mollify_scale: float
    phase_scale: int
    frequency: int
    c1_bound: float
    rows: list[BoundRow] = field(default_factory=list)

    def row(self, name: str) -> BoundRow:
        for r in self.rows:
            if r.name == name:
                return r
        raise KeyError(name)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["name", "measured", "threshold", "pass"])
        for r in self.rows:
            w.writerow([r.name, repr(float(r.measured)), repr(float(r.threshold)), str(bool(r.passed)).lower()])
        return buf.getvalue()


BOUND_NAMES = ("energy_gap", "stress_sup", "velocity_increment", "h_minus1", "pressure_increment", "c1_next")


def thresholds(schedule, delta: float, c1_bound: float, gap: np.ndarray) -> dict:
    """Bound thresholds as a pure function of (schedule, delta, D); energy row is per time sample."""
    zeta, eps = schedule.contraction, schedule.eps
    dbar = zeta * delta**1.5
    M = schedule.velocity_const
    return {
        "energy_gap": 0.5 * zeta * dbar * np.asarray(gap, dtype=float),
        "stress_sup": schedule.stress_target * dbar,
        "velocity_increment": M * math.sqrt(delta),
        "h_minus1": schedule.ball_radius * delta**0.25,
        "pressure_increment": M * M * delta,
        "c1_next": schedule.amplitude_const * delta**1.5 * (c1_bound / dbar**2) ** (1.0 + eps),
    }


def bound_report(prev, outcome, schedule, step_index: int = 0) -> StepReport:
    nxt, params, rec = outcome.state, outcome.params, outcome.record
    thr = thresholds(schedule, params.gap_fraction, params.c1_bound, prev.gap)
    target = prev.energy + prev.gap * (1.0 - params.next_gap_fraction)
    dev = np.abs(nxt.kinetic() - target)
    e_thr = thr["energy_gap"]
    s_sup = float(np.max(pointwise_norm(nxt.stress.data, "symtensor", nxt.d)))
    dv = float(np.max(np.sqrt(np.sum((nxt.v.data - prev.v.data) ** 2, axis=0))))
    dp = float(np.max(np.abs(nxt.p.data - prev.p.data)))
    measured = {
        "energy_gap": (float(dev.max()), float(e_thr.min()), bool(np.all(dev <= e_thr))),
        "stress_sup": s_sup,
        "velocity_increment": dv,
        "h_minus1": float(np.max(rec["h_minus1"])),
        "pressure_increment": dp,
        "c1_next": nxt.c1_bound,
    }
    rows = []
    for name in BOUND_NAMES:
        m = measured[name]
        if isinstance(m, tuple):
            rows.append(BoundRow(name, *m))
        else:
            rows.append(BoundRow(name, m, float(thr[name]), bool(m <= thr[name])))
    return StepReport(
        step_index,
        params.gap_fraction,
        params.next_gap_fraction,
        params.mollify_scale,
        params.phase_scale,
        params.frequency,
        params.c1_bound,
        rows,
    )


# ---------------------------------------------------------------- tensor moment


@dataclass
class TensorMoment:
    per_time: np.ndarray  # (nt, ncomp) symmetric storage
    deviation: float
    d: int
    second_moment: np.ndarray  # mean_x(v (x) v), (nt, ncomp)

    def matrix(self, j: int) -> SymMatrix:
        return SymMatrix(self.d, tuple(float(x) for x in self.per_time[j]))

    def diagonal(self, i: int) -> np.ndarray:
        return self.per_time[:, _diag_index(self.d, i)]

    def velocity_diagonal(self, i: int) -> np.ndarray:
        """mean_x v_i^2 per time; in 3D a positive third entry rules out a flow depending on two coordinates."""
        return self.second_moment[:, _diag_index(self.d, i)]


def _diag_index(d: int, i: int) -> int:
    return [n for n, (a, b) in enumerate(sym_pairs(d)) if a == b == i][0]


def _mean_outer(v: np.ndarray, d: int) -> np.ndarray:
    nt = v.shape[1]
    return np.stack([(v[a] * v[b]).reshape(nt, -1).mean(axis=1) for a, b in sym_pairs(d)], axis=1)


def tensor_moment(v: Field, v0: Field, stress0: Field, gap: np.ndarray) -> TensorMoment:
    """mean_x(v (x) v - v0 (x) v0 + stress0) - gap/d Id per time sample, and its sup norm.

    For a single step pass the pumped part of the gap, gap * (1 - next fraction).
    """
    d, nt = v.d, v.spec.n_time
    vv = _mean_outer(v.data, d)
    m = vv - _mean_outer(v0.data, d)
    m = m + stress0.data.reshape(stress0.ncomp, nt, -1).mean(axis=2).T
    m = m - sym_identity(d, 1.0, ())[None, :] * (np.asarray(gap, dtype=float)[:, None] / d)
    dev = float(np.max(pointwise_norm(m.T, "symtensor", d)))
    return TensorMoment(m, dev, d, vv)


# ---------------------------------------------------------------- stationary phase


@dataclass
class DecayTable:
    lambdas: list[int]
    values: list[float]
    slope: float
    order: int
    passed: bool


def stationary_phase_decay(a: np.ndarray, k: Sequence[int], lambdas: Sequence[int], order: int = 3) -> DecayTable:
    """|mean_x a(x) exp(i lam k.x)| over lam, with a fitted log-log slope."""
    a = np.asarray(a, dtype=float)
    d = a.ndim
    n = a.shape[0]
    x = np.arange(n) * (2.0 * np.pi / n)
    phase_unit = np.zeros(a.shape)
    for ax in range(d):
        shape = [1] * d
        shape[ax] = n
        phase_unit = phase_unit + int(k[ax]) * x.reshape(shape)
    vals = [float(abs(np.mean(a * np.exp(1j * lam * phase_unit)))) for lam in lambdas]
    logs = np.log(np.maximum(vals, 1e-300))
    slope = float(np.polyfit(np.log(np.asarray(lambdas, dtype=float)), logs, 1)[0]) if len(lambdas) > 1 else float("nan")
    return DecayTable(list(map(int, lambdas)), vals, slope, order, bool(slope <= -order + 0.25))


# ---------------------------------------------------------------- sweeps

SWEEP_METRICS = ("energy_deviation", "zero_mode", "corrector_ratio", "h_minus1_scaled")


@dataclass
class SweepTable:
    lambdas: list[int]
    metrics: dict[str, list[float]]
    residuals: list[float]

    def rows(self) -> list[tuple[int, str, float]]:
        out = []
        for name in SWEEP_METRICS:
            for lam, val in zip(self.lambdas, self.metrics[name]):
                out.append((lam, name, val))
        return out

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["lambda", "metric", "value"])
        for lam, name, val in self.rows():
            w.writerow([lam, name, repr(float(val))])
        return buf.getvalue()

    def monotone(self, name: str, slack: float = 1e-12) -> bool:
        return is_nonincreasing(self.metrics[name], slack)


def is_nonincreasing(values: Sequence[float], slack: float = 0.0) -> bool:
    """Each value at most the previous one plus an absolute slack."""
    return all(b <= a + slack for a, b in zip(values, values[1:]))


def sweep_metrics(prev, outcome) -> dict[str, float]:
    rec, params = outcome.record, outcome.params
    target = prev.energy + prev.gap * (1.0 - params.next_gap_fraction)
    return {
        "energy_deviation": float(np.max(np.abs(rec["kinetic"] - target))),
        "zero_mode": float(np.max(rec["zero_mode"])),
        "corrector_ratio": rec["sup_w_c"] / rec["sup_w_o"] if rec["sup_w_o"] > 0 else 0.0,
        "h_minus1_scaled": float(np.max(rec["h_minus1"])) / params.gap_fraction**0.25,
    }


def lambda_sweep(
    state,
    schedule,
    families: DirectionFamilies,
    lambdas: Sequence[int],
    mollify_scale: float | None = None,
    tolerance: float | None = None,
) -> SweepTable:
    """One step per frequency from the same slow data and mollification scale."""
    from .convexint import step

    if len(lambdas) == 0:
        raise ValueError("empty frequency list")
    metrics = {m: [] for m in SWEEP_METRICS}
    residuals = []
    for lam in lambdas:
        out = step(state, schedule, families, frequency=int(lam), mollify_scale=mollify_scale, tolerance=tolerance)
        for name, val in sweep_metrics(state, out).items():
            metrics[name].append(val)
        residuals.append(out.record["residual_max"])
    return SweepTable(list(map(int, lambdas)), metrics, residuals)
