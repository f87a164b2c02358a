"""One convex-integration step and the parameter schedule driving the iteration.

A step takes a subsolution ``(v, stress, p)`` with energy data, mollifies it,
adds a high-frequency Beltrami-type perturbation whose average reproduces the
mollified Reynolds stress, and returns the corrected triple with a smaller
stress. Everything is sampled on one space-time grid; the perturbation's fast
time phases are kept in closed form so time derivatives are exact.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .calculus import (
    MollifierSpec,
    div_arr,
    div_inverse_arr,
    div_outer_arr,
    div_sym_arr,
    grad_arr,
    leray_Q_arr,
    mollify_arr,
    sym_outer,
    time_derivative_arr,
    time_derivative_slice,
)
from .grid import (
    Field,
    GridSpec,
    ModulatedField,
    c1_arr,
    h_minus1_arr,
    pointwise_norm,
    sym_identity,
    sym_pairs,
    sym_trace,
)
from .matgeom import DirectionFamilies, InadmissibleMatrix, conic_margin_ball_radius
from .stationary import PhasePartition, class_index, make_block

# ---------------------------------------------------------------- errors


class ResolutionError(ValueError):
    def __init__(self, message: str, required_n_space: int):
        super().__init__(message)
        self.required_n_space = required_n_space


class NotStrong(ValueError):
    """The stress does not fit inside the admissible cone for any allowed contraction."""


class MissingFamily(ValueError):
    """An active phase class has no direction family assigned."""


class StepAborted(RuntimeError):
    def __init__(self, message: str, breakdown: dict):
        super().__init__(message)
        self.breakdown = breakdown


# ---------------------------------------------------------------- matrix-field helpers


def _sym_eigs(comps: np.ndarray, d: int) -> np.ndarray:
    """Eigenvalues of symmetric storage, ascending along the last axis."""
    if d == 2:
        a, b, c = comps
        m = 0.5 * (a + c)
        r = np.hypot(0.5 * (a - c), b)
        return np.stack([m - r, m + r], axis=-1)
    from .grid import sym_to_matrix

    mat = np.moveaxis(sym_to_matrix(comps, d), (0, 1), (-2, -1))
    return np.linalg.eigvalsh(mat)


def md_margin_field(comps: np.ndarray, d: int) -> tuple[float, float]:
    """Pointwise membership in the cone: returns (min eigenvalue, min cone margin) over samples."""
    ev = _sym_eigs(comps, d)
    tr = ev.sum(axis=-1, keepdims=True)
    return float(ev.min()), float((tr / (d - 1) - ev).min())


def _sym_dot(W: np.ndarray, comps: np.ndarray) -> np.ndarray:
    """Apply (npairs, ncomp) functionals to symmetric storage ``(ncomp, ...)``."""
    return np.tensordot(W, comps, axes=([1], [0]))


# ---------------------------------------------------------------- state


@dataclass
class SubsolutionState:
    """Velocity, trace-free stress and pressure with energy data and step scalars.

    ``energy`` is the spatial mean of |v_0|^2 of the initial subsolution and
    ``gap`` is e - energy, both sampled in time; ``delta`` is the current gap
    fraction. ``dvdt`` optionally stores an exact time derivative of v.
    """

    v: Field
    stress: Field
    p: Field
    energy: np.ndarray
    gap: np.ndarray
    delta: float = 1.0
    dvdt: Field | None = None

    @property
    def spec(self) -> GridSpec:
        return self.v.spec

    @property
    def d(self) -> int:
        return self.v.spec.d

    @property
    def c1_bound(self) -> float:
        nt = self.spec.n_time
        cv = max(c1_arr(self.v.at(j), "vector", self.d) for j in range(nt))
        cr = max(c1_arr(self.stress.at(j), "symtensor", self.d) for j in range(nt))
        return max(1.0, cv, cr)

    @classmethod
    def trivial(cls, spec: GridSpec, e: np.ndarray) -> "SubsolutionState":
        e = np.broadcast_to(np.asarray(e, dtype=float), (spec.n_time,)).copy()
        return cls(
            Field.zeros(spec, "vector"),
            Field.zeros(spec, "symtensor"),
            Field.zeros(spec, "scalar"),
            np.zeros(spec.n_time),
            e,
            1.0,
            Field.zeros(spec, "vector"),
        )

    def time_derivative(self, j: int) -> np.ndarray:
        if self.dvdt is not None:
            return self.dvdt.at(j)
        return time_derivative_slice(self.v.data, j, axis=1)

    def kinetic(self) -> np.ndarray:
        """Spatial mean of |v|^2 per time sample."""
        nt = self.spec.n_time
        return np.sum(self.v.data**2, axis=0).reshape(nt, -1).mean(axis=1)

    def energy_band(self, contraction: float) -> tuple[float, float, bool]:
        """(max deviation, min threshold, pointwise pass) of the energy-gap hypothesis."""
        dev = np.abs(self.energy + self.gap * (1.0 - self.delta) - self.kinetic())
        thr = 0.5 * contraction * self.delta * self.gap
        return float(dev.max()), float(thr.min()), bool(np.all(dev <= thr + 1e-14))

    def invariants(self) -> dict:
        nt, d = self.spec.n_time, self.d
        div_v = max(float(np.max(np.abs(div_arr(self.v.at(j), d)))) for j in range(nt))
        tr = float(np.max(np.abs(sym_trace(self.stress.data, d))))
        pmean = float(np.max(np.abs(self.p.data[0].reshape(nt, -1).mean(axis=1))))
        return {"div_v": div_v, "trace_stress": tr, "mean_p": pmean}


# ---------------------------------------------------------------- schedule


def _dyadic_at_least(x: float) -> float:
    """Smallest power of two >= max(x, 1)."""
    if x <= 1.0:
        return 1.0
    return 2.0 ** math.ceil(math.log2(x) - 1e-12)


def delta_recursion(contraction: float, n: int) -> list[float]:
    """Gap fractions delta_0 .. delta_n with delta_{m+1} = contraction * delta_m^{3/2}."""
    out = [1.0]
    for _ in range(n):
        out.append(contraction * out[-1] ** 1.5)
    return out


def delta_closed_form(contraction: float, n: int) -> float:
    if n == 0:
        return 1.0
    return contraction**-2 * contraction ** (3.0 * 1.5 ** (n - 1))


def exponents(eps: float) -> tuple[float, float]:
    """(omega, alpha) from the frequency exponent eps."""
    omega = eps / (2.0 + eps)
    return omega, omega / (2.0 * (1.0 + omega))


@dataclass
class Check:
    param: str
    name: str
    lhs: float
    rhs: float
    relation: str
    passed: bool

    @classmethod
    def make(cls, param, name, lhs, rhs, relation):
        lhs, rhs = float(lhs), float(rhs)
        ok = {"<=": lhs <= rhs, "<": lhs < rhs, ">=": lhs >= rhs, ">": lhs > rhs}[relation]
        return cls(param, name, lhs, rhs, relation, bool(ok))


@dataclass
class Schedule:
    contraction: float
    eps: float
    omega: float
    alpha: float
    stress_target: float
    ball_radius: float
    cone_radius: float
    family_radius: float
    velocity_const: float
    mollify_const: float
    frequency_const: float
    sigma: float
    theta_target: float
    amplitude_const: float
    checks: list[Check] = field(default_factory=list)
    overrides: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["checks"] = [asdict(c) for c in self.checks]
        return out

    @classmethod
    def from_dict(cls, obj: dict) -> "Schedule":
        obj = dict(obj)
        obj["checks"] = [Check(**c) for c in obj.get("checks", [])]
        return cls(**obj)


def _amplitude_sum(families: DirectionFamilies, radius: float) -> float:
    """max over families of sum_k max gamma_k on the radius-ball around Id (per point)."""
    best = 0.0
    for fam in families.families:
        base = fam.pair_coeffs(np.eye(families.d))
        nuc = np.array([np.sum(np.abs(np.linalg.eigvalsh(g))) for g in fam.G])
        gmax = np.sqrt(np.maximum(base + radius * nuc, 0.0) / 2.0)
        best = max(best, 2.0 * float(np.sum(gmax)))
    return best


def _strong_margin(stress: Field, gap: np.ndarray, contraction: float) -> float:
    d = stress.d
    nt = stress.spec.n_time
    lo = math.inf
    for j in range(nt):
        comps = sym_identity(d, (1.0 - contraction) * gap[j] / d, stress.spec.space_shape) - stress.at(j)
        ev_min, cone = md_margin_field(comps, d)
        lo = min(lo, ev_min, cone)
    return lo


def init_schedule(
    e: np.ndarray,
    state: SubsolutionState,
    families: DirectionFamilies,
    eps: float = 1.0,
    sigma: float = 1.0,
    overrides: dict | None = None,
    n_series: int = 40,
) -> Schedule:
    """Fix constants in the order velocity -> contraction -> ball radius -> mollify -> frequency.

    Each parameter is the first dyadic value meeting its predicates unless an
    override is supplied; every predicate is recorded with its pass flag.
    """
    overrides = dict(overrides or {})
    d = state.d
    e = np.broadcast_to(np.asarray(e, dtype=float), state.gap.shape)
    omega, alpha = exponents(eps)
    gap_min = float(state.gap.min())
    checks: list[Check] = []
    amp_scale = 1.0 if d == 2 else math.sqrt(2.0)

    cone_radius = conic_margin_ball_radius(d)
    family_radius = min(f.admissible_radius() for f in families.families)

    # velocity constant: sup |w| <= 2 sqrt(max e / d) * amplitude sum * sqrt(delta)
    gamma_sum = _amplitude_sum(families, min(cone_radius, family_radius))
    M = max(1.0, 2.0 * math.sqrt(float(np.max(e)) / d) * amp_scale * gamma_sum)
    if "velocity_const" in overrides:
        M = float(overrides["velocity_const"])
    checks.append(Check.make("velocity_const", "M >= 1", M, 1.0, ">="))
    C = M  # surrogate for the uncertified estimate constants

    # contraction: first dyadic <= 1/2 with (1 - z) gap/d Id - stress inside the cone
    if "contraction" in overrides:
        zeta = float(overrides["contraction"])
    else:
        zeta = None
        z = 0.5
        while z >= 2.0**-20:
            if _strong_margin(state.stress, state.gap, z) > 0.0:
                zeta = z
                break
            z /= 2.0
        if zeta is None:
            raise NotStrong("no contraction <= 1/2 places the initial stress inside the cone")
    checks.append(Check.make("contraction", "contraction <= 1/2", zeta, 0.5, "<="))
    checks.append(Check.make("contraction", "strong subsolution margin > 0", _strong_margin(state.stress, state.gap, zeta), 0.0, ">"))

    # ball radius
    series = sum(d_n**0.25 for d_n in delta_recursion(zeta, n_series))
    cap = min(cone_radius, family_radius, sigma / series)
    if "ball_radius" in overrides:
        r0 = float(overrides["ball_radius"])
    else:
        r0 = 2.0 ** math.floor(math.log2(cap))
    checks.append(Check.make("ball_radius", "r0 <= cone radius", r0, cone_radius, "<="))
    checks.append(Check.make("ball_radius", "r0 <= family radius", r0, family_radius, "<="))
    checks.append(Check.make("ball_radius", "r0 * sum delta_n^(1/4) <= sigma", r0 * series, sigma, "<="))
    eta = gap_min / (4.0 * d) * r0

    # mollification constant
    energy_budget = 0.5 * zeta * gap_min
    need_L = max(1.0 / eta, 2.0 * C / energy_budget, 2.0 * C / eta, 4.0 * C)
    L = float(overrides.get("mollify_const", _dyadic_at_least(need_L)))
    checks.append(Check.make("mollify_const", "L_v >= 1/eta", L, 1.0 / eta, ">="))
    checks.append(Check.make("mollify_const", "C/L_v <= half energy budget", C / L, 0.5 * energy_budget, "<="))
    checks.append(Check.make("mollify_const", "C/L_v <= half stress target", C / L, 0.5 * eta, "<="))

    # frequency constant
    e1 = (1.0 + omega) ** 2 / (1.0 - omega)

    def log2_need(budget, power):
        # log2 of (C / budget)^power; infinite when the mollification share exhausts the budget
        return math.inf if budget <= 0.0 else power * math.log2(max(C / budget, 1e-300))

    needs = [
        e1 * math.log2(zeta) + (1.0 + omega) * math.log2(L),
        log2_need(energy_budget - C / L, 2.0 * (1.0 + omega)),
        log2_need(eta - C / L, 2.0 * (1.0 + eps)),
        log2_need(1.0 - C / L, 2.0 * (1.0 + omega) / (1.0 - omega)),
        log2_need(0.5 * r0 / 1.0, 2.0),
    ]
    if "frequency_const" not in overrides:
        top = max(needs)
        if not math.isfinite(top) or top > 1000:
            raise ValueError(f"frequency constant unattainable (log2 requirement {top})")
    Lam = float(overrides["frequency_const"]) if "frequency_const" in overrides else 2.0 ** max(0, math.ceil(max(needs) - 1e-12))
    checks.append(Check.make("frequency_const", "Lambda_v >= zeta^e L_v^(1+omega)", Lam, zeta**e1 * L ** (1.0 + omega), ">="))
    checks.append(
        Check.make("frequency_const", "energy gap budget", C / L + C / Lam ** (1.0 / (2.0 * (1.0 + omega))), energy_budget, "<=")
    )
    checks.append(Check.make("frequency_const", "stress target budget", C / L + C / Lam ** (1.0 / (2.0 * (1.0 + eps))), eta, "<="))
    checks.append(
        Check.make("frequency_const", "C1 stress budget", C / L + C / Lam ** ((1.0 - omega) / (2.0 * (1.0 + omega))), 1.0, "<")
    )
    checks.append(Check.make("frequency_const", "H-1 budget", C / math.sqrt(Lam), r0, "<"))

    return Schedule(
        contraction=zeta,
        eps=eps,
        omega=omega,
        alpha=alpha,
        stress_target=eta,
        ball_radius=r0,
        cone_radius=cone_radius,
        family_radius=family_radius,
        velocity_const=M,
        mollify_const=L,
        frequency_const=Lam,
        sigma=sigma,
        theta_target=(1.0 - 2.0 * eps) / (10.0 + 16.0 * eps),
        amplitude_const=2.0 * C * Lam,
        checks=checks,
        overrides=overrides,
    )


@dataclass
class StepParams:
    gap_fraction: float
    next_gap_fraction: float
    c1_bound: float
    mollify_scale: float
    frequency: int
    phase_scale: int
    frequency_raw: float
    phase_scale_raw: float
    checks: list[Check] = field(default_factory=list)

    @property
    def fast_ratio(self) -> int:
        return self.frequency // self.phase_scale

    def to_dict(self) -> dict:
        out = asdict(self)
        out["checks"] = [asdict(c) for c in self.checks]
        return out


def _nearest_divisor(n: int, target: float) -> int:
    divs = [m for m in range(1, n + 1) if n % m == 0]
    return min(divs, key=lambda m: (abs(m - target), m))


def step_params(
    gap_fraction: float,
    c1_bound: float,
    schedule: Schedule,
    frequency: int | None = None,
    mollify_scale: float | None = None,
    n_space: int | None = None,
    kmax: int | None = None,
) -> StepParams:
    """Per-step scales. ``frequency``/``mollify_scale`` override the schedule (desk runs)."""
    delta, D = float(gap_fraction), float(c1_bound)
    if not 0.0 < delta <= 1.0 or D < 1.0:
        raise ValueError("need 0 < delta <= 1 and D >= 1")
    zeta, eps, omega = schedule.contraction, schedule.eps, schedule.omega
    dbar = zeta * delta**1.5
    ell = dbar / (schedule.mollify_const * D) if mollify_scale is None else float(mollify_scale)
    lam_raw = schedule.frequency_const * (D * delta / dbar**2) ** (1.0 + eps)
    mu_raw = math.sqrt(lam_raw / D)
    if frequency is None:
        mu = max(1, math.ceil(mu_raw - 1e-9))
        # integer ceil-division stays exact at large magnitudes
        lam = -(-math.ceil(lam_raw - 1e-9) // mu) * mu
        floor = max((mu * D) ** (1.0 + omega), ell ** -(1.0 + omega))
        if lam < floor:
            lam = -(-math.ceil(floor) // mu) * mu
    else:
        lam = int(frequency)
        mu = _nearest_divisor(lam, math.sqrt(lam / D))
    checks = [
        Check.make("step", "mu >= 1/delta", mu, 1.0 / delta, ">="),
        Check.make("step", "1/ell >= D/(eta delta)", 1.0 / ell, D / (schedule.stress_target * delta), ">="),
        Check.make("step", "lambda >= (mu D)^(1+omega)", lam, (mu * D) ** (1.0 + omega), ">="),
        Check.make("step", "lambda >= ell^-(1+omega)", lam, ell ** -(1.0 + omega), ">="),
    ]
    if n_space is not None and kmax is not None:
        need = 4 * lam * kmax
        if n_space <= need:
            req = 1 << int(math.floor(math.log2(need)) + 1)
            raise ResolutionError(
                f"frequency {lam} with |k_i| <= {kmax} needs n_space > {need} (use n_space = {req})", req
            )
    return StepParams(delta, dbar, D, ell, int(lam), int(mu), lam_raw, mu_raw, checks)


# ---------------------------------------------------------------- mollification


@dataclass
class Mollified:
    spec: GridSpec
    v: np.ndarray  # (d, nt, *space)
    stress: np.ndarray  # (ncomp, nt, *space)
    rho: np.ndarray  # (nt,)
    rho_dot: np.ndarray  # (nt,)

    def target(self, j: int) -> np.ndarray:
        """R_ell = rho Id - stress_ell at slice j."""
        d = self.spec.d
        return sym_identity(d, self.rho[j], self.spec.space_shape) - self.stress[:, j]

    def target_field(self) -> Field:
        return Field(self.spec, "symtensor", np.stack([self.target(j) for j in range(self.spec.n_time)], axis=1))


def mollify_state(state: SubsolutionState, params: StepParams) -> Mollified:
    spec = state.spec
    m = MollifierSpec(params.mollify_scale)
    v_l = mollify_arr(state.v.data, spec, m)
    s_l = mollify_arr(state.stress.data, spec, m)
    axes = tuple(range(1, 1 + spec.d))
    kin = np.sum(v_l**2, axis=0).mean(axis=axes)
    rho = (state.energy + state.gap * (1.0 - params.next_gap_fraction) - kin) / spec.d
    if np.any(rho <= 0.0):
        j = int(np.argmin(rho))
        raise ValueError(f"energy density nonpositive at t-index {j} (rho = {rho[j]:.3e})")
    return Mollified(spec, v_l, s_l, rho, time_derivative_arr(rho, axis=0))


@dataclass
class WellDefinedReport:
    cone_margin: float
    min_eigenvalue: float
    coeff_margin: float
    worst_family: int
    worst_t_index: int
    passed: bool

    def to_dict(self) -> dict:
        return asdict(self)


def check_well_defined(mollified: Mollified, families: DirectionFamilies, raise_on_fail: bool = True) -> WellDefinedReport:
    """Every rescaled sample R_ell/rho must lie in the cone and above each family's floor."""
    d = mollified.spec.d
    cone, ev_min, coeff = math.inf, math.inf, math.inf
    worst_fam, worst_t = -1, -1
    for j in range(mollified.spec.n_time):
        X = mollified.target(j) / mollified.rho[j]
        e_min, c_m = md_margin_field(X, d)
        cone, ev_min = min(cone, c_m), min(ev_min, e_min)
        for fi, fam in enumerate(families.families):
            c = _sym_dot(fam.pair_functional_sym(), X)
            m = float(c.min()) - fam.floor
            if m < coeff:
                coeff, worst_fam, worst_t = m, fi, j
    ok = cone > 0.0 and ev_min > 0.0 and coeff > 0.0
    rep = WellDefinedReport(cone, ev_min, coeff, worst_fam, worst_t, ok)
    if raise_on_fail and not ok:
        raise InadmissibleMatrix(
            f"rescaled stress leaves the admissible set: cone margin {cone:.3e}, "
            f"coefficient margin {coeff:.3e} (family {worst_fam}, t-index {worst_t})",
            min(cone, coeff),
        )
    return rep


# ---------------------------------------------------------------- perturbation


@dataclass
class _Term:
    k: np.ndarray
    velocity: np.ndarray  # complex (d,)
    potential: np.ndarray  # complex (1,) or (3,)
    family: int
    slot: int  # index into the family's pair list


class Perturbation:
    """Oscillatory correction with amplitudes evaluated one time slice at a time."""

    def __init__(
        self,
        mollified: Mollified,
        params: StepParams,
        families: DirectionFamilies,
        partition: PhasePartition,
        amplitude_scale: float = 1.0,
    ):
        spec = mollified.spec
        self.spec = spec
        self.mollified = mollified
        self.params = params
        self.families = families
        self.partition = partition
        self.amplitude_scale = float(amplitude_scale)
        self.frequency = params.frequency
        d = spec.d
        self.norm_const = 1.0 / math.sqrt(make_block(d, (1,) + (0,) * (d - 1)).pair_weight)
        self.sites = partition.sites(mollified.v)
        active = sorted({class_index(l) for l in self.sites})
        for c in active:
            if c >= families.N:
                raise MissingFamily(f"phase class {c} is active but only {families.N} families are available")
        self.active_classes = active
        self.terms: list[_Term] = []
        for c in active:
            fam = families.families[c]
            for slot, k in enumerate(fam.pairs):
                blk = make_block(d, k)
                self.terms.append(_Term(np.array(k), blk.amplitude, blk.potential, c, slot))
        self.functionals = {c: families.families[c].pair_functional_sym() for c in active}
        self._carriers = None

    @property
    def nu(self) -> int:
        return self.families.nu

    def carriers(self) -> list[np.ndarray]:
        if self._carriers is None:
            xs = self.spec.coords()
            self._carriers = [
                np.exp(1j * self.frequency * sum(int(t.k[i]) * xs[i] for i in range(self.spec.d))) for t in self.terms
            ]
        return self._carriers

    def amplitudes(self, j: int) -> tuple[np.ndarray, np.ndarray]:
        """Complex a_k and their exact time derivatives at slice j, shape (nterms, *space)."""
        m, spec, d = self.mollified, self.spec, self.spec.d
        t = spec.times()[j]
        rho, rho_dot = m.rho[j], m.rho_dot[j]
        X = m.target(j) / rho
        Rdot = sym_identity(d, rho_dot, spec.space_shape) - time_derivative_slice(m.stress, j, axis=1)
        Xdot = Rdot / rho - X * (rho_dot / rho)
        v = m.v[:, j]
        vdot = time_derivative_slice(m.v, j, axis=1)
        scale = self.amplitude_scale * self.norm_const
        sr = math.sqrt(rho)
        slow, slow_dot = {}, {}
        for c in self.active_classes:
            cp = _sym_dot(self.functionals[c], X)
            cdot = _sym_dot(self.functionals[c], Xdot)
            gam = np.sqrt(np.maximum(cp, 0.0) / 2.0)
            with np.errstate(divide="ignore", invalid="ignore"):
                gdot = np.where(gam > 0.0, cdot / (4.0 * np.where(gam > 0.0, gam, 1.0)), 0.0)
            slow[c] = scale * sr * gam
            slow_dot[c] = scale * (0.5 * rho_dot / sr * gam + sr * gdot)
        weights = []
        for l in self.sites:
            a = self.partition.alpha(l, v)
            g = self.partition.alpha_grad(l, v)
            weights.append((l, a, np.sum(g * vdot, axis=0)))
        n = len(self.terms)
        A = np.zeros((n,) + spec.space_shape, dtype=complex)
        Adot = np.zeros_like(A)
        ratio = self.params.fast_ratio
        for i, term in enumerate(self.terms):
            phi = np.zeros(spec.space_shape, dtype=complex)
            phi_dot = np.zeros(spec.space_shape, dtype=complex)
            for l, a, adot in weights:
                if class_index(l) != term.family:
                    continue
                omega = ratio * int(np.dot(term.k, l))
                ph = np.exp(-1j * omega * t)
                phi += a * ph
                phi_dot += (adot - 1j * omega * a) * ph
            s, sd = slow[term.family][term.slot], slow_dot[term.family][term.slot]
            A[i] = s * phi
            Adot[i] = sd * phi + s * phi_dot
        return A, Adot

    def slice_fields(self, j: int) -> dict:
        """w_o, its time derivative, the potential and the fast pressure at slice j."""
        d = self.spec.d
        A, Adot = self.amplitudes(j)
        car = self.carriers()
        w = np.zeros((d,) + self.spec.space_shape)
        wdot = np.zeros_like(w)
        npot = 1 if d == 2 else 3
        pot = np.zeros((npot,) + self.spec.space_shape)
        mean_sq = np.zeros(self.spec.space_shape)
        for i, term in enumerate(self.terms):
            ae, ade = A[i] * car[i], Adot[i] * car[i]
            for c in range(d):
                w[c] += 2.0 * np.real(term.velocity[c] * ae)
                wdot[c] += 2.0 * np.real(term.velocity[c] * ade)
            for c in range(npot):
                pot[c] += 2.0 * np.real(term.potential[c] * ae)
            mean_sq += 2.0 * np.abs(A[i]) ** 2 * float(np.sum(np.abs(term.velocity) ** 2))
        speed2 = np.sum(w * w, axis=0)
        if d == 2:
            q = -0.5 * speed2 - 0.5 * self.nu * pot[0] ** 2 + mean_sq
        else:
            q = -0.5 * speed2 + 0.5 * mean_sq
        return {"w_o": w, "dt_w_o": wdot, "psi_o": pot, "q": q, "amps": A}

    # materialized views (small grids, tests)
    @property
    def w_o(self) -> ModulatedField:
        nt = self.spec.n_time
        amps = [self.amplitudes(j)[0] for j in range(nt)]
        per_term = [np.stack([a[i] for a in amps]) for i in range(len(self.terms))]
        ks = np.array([t.k for t in self.terms]).reshape(-1, self.spec.d)
        vecs = np.array([t.velocity for t in self.terms]).reshape(len(self.terms), self.spec.d)
        return ModulatedField(self.spec, self.frequency, ks, vecs, per_term, "vector")

    def fields(self) -> dict[str, Field]:
        nt, d = self.spec.n_time, self.spec.d
        slices = [self.slice_fields(j) for j in range(nt)]
        w = np.stack([s["w_o"] for s in slices], axis=1)
        wc = np.stack([-leray_Q_arr(s["w_o"], d) for s in slices], axis=1)
        psi = np.stack([s["psi_o"] for s in slices], axis=1)
        return {
            "w_o": Field(self.spec, "vector", w),
            "w_c": Field(self.spec, "vector", wc),
            "psi_o": Field(self.spec, "scalar" if d == 2 else "vector", psi),
        }


def build_perturbation(
    mollified: Mollified,
    params: StepParams,
    families: DirectionFamilies,
    partition: PhasePartition | None = None,
    amplitude_scale: float = 1.0,
) -> Perturbation:
    if partition is None:
        partition = PhasePartition(mollified.spec.d, params.phase_scale)
    return Perturbation(mollified, params, families, partition, amplitude_scale)


# ---------------------------------------------------------------- composition

TERM_NAMES = (
    "mollification",
    "transport_low",
    "oscillation",
    "corrector_time",
    "corrector_quadratic",
    "transport_high",
    "advection",
)


@dataclass
class StepOutcome:
    state: SubsolutionState
    params: StepParams
    record: dict


def _op_norm_sym(comps: np.ndarray, d: int) -> float:
    return float(np.max(pointwise_norm(comps.reshape(comps.shape[0], -1), "symtensor", d)))


def compose_step(
    state: SubsolutionState,
    pert: Perturbation,
    mollified: Mollified,
    params: StepParams,
    tolerance: float | None = None,
) -> StepOutcome:
    """Assemble (v1, stress1, p1) and check the Euler-Reynolds identity slice by slice."""
    spec, d = state.spec, state.d
    nt = spec.n_time
    D = params.c1_bound
    tol = 1e-6 * (1.0 + D * D) if tolerance is None else float(tolerance)
    v1 = np.empty_like(state.v.data)
    s1 = np.empty_like(state.stress.data)
    p1 = np.empty_like(state.p.data)
    dv1 = np.empty_like(state.v.data)
    term_sup = dict.fromkeys(TERM_NAMES, 0.0)
    rec = {
        "residual": np.zeros(nt),
        "kinetic": np.zeros(nt),
        "zero_mode": np.zeros(nt),
        "h_minus1": np.zeros(nt),
        "sup_w_o": 0.0,
        "sup_w_c": 0.0,
        "sup_w": 0.0,
        "sup_dp": 0.0,
    }
    I = sym_identity(d, 1.0, ())
    for j in range(nt):
        f = pert.slice_fields(j)
        w_o, dt_w_o, q = f["w_o"], f["dt_w_o"], f["q"]
        w_c = -leray_Q_arr(w_o, d)
        dt_w_c = -leray_Q_arr(dt_w_o, d)
        w = w_o + w_c
        v, s, p = state.v.at(j), state.stress.at(j), state.p.at(j)[0]
        v_l, s_l = mollified.v[:, j], mollified.stress[:, j]
        dv = v - v_l
        u = v_l + w
        dot = np.sum(dv * w, axis=0)
        t1 = s - s_l
        t2 = sym_outer(w, dv, d) - (2.0 / d) * dot * I.reshape((-1,) + (1,) * d)
        t3 = div_inverse_arr(div_outer_arr(w_o, w_o, d) + div_sym_arr(s_l, d) + grad_arr(q, d), d)
        t4 = div_inverse_arr(dt_w_c, d)
        t5 = div_inverse_arr(div_outer_arr(u, w_c, d) + div_outer_arr(w_c, u, d) - div_outer_arr(w_c, w_c, d), d)
        t6 = div_inverse_arr(div_outer_arr(w_o, v_l, d), d)
        t7 = div_inverse_arr(dt_w_o + div_outer_arr(v_l, w_o, d), d)
        terms = (t1, t2, t3, t4, t5, t6, t7)
        for name, t in zip(TERM_NAMES, terms):
            term_sup[name] = max(term_sup[name], _op_norm_sym(t, d))
        s1[:, j] = sum(terms)
        v1[:, j] = v + w
        pj = p + q - (2.0 / d) * dot
        p1[0, j] = pj - pj.mean()
        dv1[:, j] = state.time_derivative(j) + dt_w_o + dt_w_c
        r = dv1[:, j] + div_outer_arr(v1[:, j], v1[:, j], d) + grad_arr(p1[0, j], d) - div_sym_arr(s1[:, j], d)
        rec["residual"][j] = float(np.max(np.sqrt(np.sum(r * r, axis=0))))
        rec["kinetic"][j] = float(np.sum(v1[:, j] ** 2, axis=0).mean())
        mww = np.stack([np.mean(w_o[a] * w_o[b]) for a, b in sym_pairs(d)])
        target = mollified.target(j)
        target_mean = target.reshape(target.shape[0], -1).mean(axis=1)
        rec["zero_mode"][j] = _op_norm_sym((mww - target_mean)[:, None], d)
        rec["h_minus1"][j] = h_minus1_arr(w, d)
        rec["sup_w_o"] = max(rec["sup_w_o"], float(np.max(np.sqrt(np.sum(w_o**2, axis=0)))))
        rec["sup_w_c"] = max(rec["sup_w_c"], float(np.max(np.sqrt(np.sum(w_c**2, axis=0)))))
        rec["sup_w"] = max(rec["sup_w"], float(np.max(np.sqrt(np.sum(w**2, axis=0)))))
        rec["sup_dp"] = max(rec["sup_dp"], float(np.max(np.abs(p1[0, j] - p))))
    rec["terms"] = term_sup
    worst = float(rec["residual"].max())
    rec["residual_max"] = worst
    rec["tolerance"] = tol
    if worst > tol:
        raise StepAborted(
            f"Euler-Reynolds residual {worst:.3e} exceeds tolerance {tol:.3e}",
            {"residual": worst, "tolerance": tol, **term_sup},
        )
    nxt = SubsolutionState(
        Field(spec, "vector", v1),
        Field(spec, "symtensor", s1),
        Field(spec, "scalar", p1),
        state.energy.copy(),
        state.gap.copy(),
        params.next_gap_fraction,
        Field(spec, "vector", dv1),
    )
    return StepOutcome(nxt, params, rec)


def step(
    state: SubsolutionState,
    schedule: Schedule,
    families: DirectionFamilies,
    frequency: int | None = None,
    mollify_scale: float | None = None,
    tolerance: float | None = None,
    amplitude_scale: float = 1.0,
) -> StepOutcome:
    """mollify -> admissibility -> perturbation -> composition, with the resolution guard."""
    params = step_params(
        state.delta,
        state.c1_bound,
        schedule,
        frequency=frequency,
        mollify_scale=mollify_scale,
        n_space=state.spec.n_space,
        kmax=families.kmax(),
    )
    moll = mollify_state(state, params)
    report = check_well_defined(moll, families)
    pert = build_perturbation(moll, params, families, amplitude_scale=amplitude_scale)
    out = compose_step(state, pert, moll, params, tolerance)
    out.record["well_defined"] = report.to_dict()
    out.record["active_classes"] = list(pert.active_classes)
    out.record["rho"] = moll.rho.copy()
    return out


# ---------------------------------------------------------------- driver


@dataclass
class Trajectory:
    states: list[SubsolutionState]
    outcomes: list[StepOutcome]
    schedule: Schedule
    reports: list = field(default_factory=list)


def run(
    state: SubsolutionState,
    schedule: Schedule,
    families: DirectionFamilies,
    n_steps: int,
    frequencies: Sequence[int] | None = None,
    mollify_scales: Sequence[float] | None = None,
    tolerance: float | None = None,
) -> Trajectory:
    from .diagnose import bound_report

    traj = Trajectory([state], [], schedule)
    for n in range(n_steps):
        lam = None if frequencies is None else int(frequencies[n])
        ell = None if mollify_scales is None else float(mollify_scales[n])
        out = step(traj.states[-1], schedule, families, lam, ell, tolerance)
        traj.reports.append(bound_report(traj.states[-1], out, schedule, step_index=n))
        traj.outcomes.append(out)
        traj.states.append(out.state)
    return traj


# ---------------------------------------------------------------- periodization


def time_cutoff(t: np.ndarray, T: float) -> np.ndarray:
    """Smooth periodic cutoff: 1 on [0, T], 0 on the middle third of the remaining arc."""
    from .stationary import smooth_step

    t = np.mod(np.asarray(t, dtype=float), 2.0 * math.pi)
    if T >= 2.0 * math.pi:
        return np.ones_like(t)
    tau = (2.0 * math.pi - T) / 3.0
    out = np.ones_like(t)
    fall = (t > T) & (t < T + tau)
    out[fall] = smooth_step(0.25 + 0.5 * (T + tau - t[fall]) / tau)
    mid = (t >= T + tau) & (t <= 2.0 * math.pi - tau)
    out[mid] = 0.0
    rise = t > 2.0 * math.pi - tau
    out[rise] = smooth_step(0.25 + 0.5 * (t[rise] - (2.0 * math.pi - tau)) / tau)
    return out


def extend_periodic(v0_fn, p0_fn, e_fn, T: float, spec: GridSpec, contraction: float | None = None) -> SubsolutionState:
    """Cut a solution on [0, T] off in time and rebuild the stress from the equation.

    ``v0_fn(xs, t)`` and ``p0_fn(xs, t)`` must accept times in [-(2pi - T)/3, T + (2pi - T)/3];
    samples beyond the midpoint of the outer arc are read at t - 2pi.
    """
    d = spec.d
    t = spec.times()
    half = 0.5 * (T + 2.0 * math.pi)
    ts = np.where((T < 2.0 * math.pi) & (t > half), t - 2.0 * math.pi, t)
    chi = time_cutoff(t, T)
    xs = spec.coords()
    shape_t = (spec.n_time,) + (1,) * d
    tt = ts.reshape(shape_t)
    vc = [np.broadcast_to(np.asarray(c, dtype=float), spec.shape) for c in v0_fn(xs, tt)]
    pc = p0_fn(xs, tt)
    pc = np.broadcast_to(np.asarray(pc[0] if isinstance(pc, (list, tuple)) else pc, dtype=float), spec.shape)
    chi_b = chi.reshape(shape_t)
    v = np.stack(vc) * chi_b
    p = pc * chi_b**2
    p = p - p.reshape(spec.n_time, -1).mean(axis=1).reshape(shape_t)
    dvdt = time_derivative_arr(v, axis=1)
    stress = np.empty((d * (d + 1) // 2,) + spec.shape)
    for j in range(spec.n_time):
        f = dvdt[:, j] + div_outer_arr(v[:, j], v[:, j], d) + grad_arr(p[j], d)
        stress[:, j] = div_inverse_arr(f, d)
    e = np.asarray(e_fn(t), dtype=float) * np.ones(spec.n_time)
    kin = np.sum(v**2, axis=0).reshape(spec.n_time, -1).mean(axis=1)
    gap = e - kin
    if np.any(gap <= 0.0):
        raise NotStrong("prescribed energy does not exceed the kinetic energy of the extension")
    state = SubsolutionState(
        Field(spec, "vector", v), Field(spec, "symtensor", stress), Field(spec, "scalar", p[None]), kin, gap, 1.0,
        Field(spec, "vector", dvdt),
    )
    z = 0.5 if contraction is None else contraction
    while z >= 2.0**-20:
        if _strong_margin(state.stress, gap, z) > 0.0:
            return state
        if contraction is not None:
            break
        z /= 2.0
    raise NotStrong("extended stress leaves the cone for every admissible contraction")
