"""Stationary building-block flows and the smooth partition of velocity space.

A building block on the shell ``|k|^2 = nu`` is a divergence-free plane wave
``b_k(xi) = amplitude_k * exp(i k.xi)`` together with a potential whose curl
reproduces it. Superpositions ``W = sum_k a_k b_k`` over a single shell are
stationary Euler flows with an explicit pressure.

The phase partition splits velocity space into overlapping cubes indexed by
``l in Z^d``; squared weights sum to one and sites of the same parity class
never overlap, which is what makes the modulus of each class phase independent
of the fast time variable.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .grid import Field, GridSpec
from .matgeom import SymMatrix

# ---------------------------------------------------------------- building blocks


@dataclass(frozen=True)
class BuildingBlock:
    d: int
    k: tuple[int, ...]
    amplitude: np.ndarray  # complex velocity profile, shape (d,)
    potential: np.ndarray  # complex potential profile: (1,) in 2D, (3,) in 3D

    @property
    def norm2(self) -> float:
        return float(np.sum(np.abs(self.amplitude) ** 2))

    @property
    def zero_mode(self) -> np.ndarray:
        """Re(amplitude (x) conj(amplitude)): the average of b_k (x) b_-k."""
        return np.real(np.outer(self.amplitude, np.conj(self.amplitude)))

    @property
    def pair_weight(self) -> float:
        """Scalar c with zero_mode = c (Id - k^ (x) k^): 1 in 2D, |B|^2/2 in 3D."""
        return float(np.trace(self.zero_mode)) / (self.d - 1)

    def velocity(self, spec: GridSpec, a: complex = 1.0) -> np.ndarray:
        """Complex samples of ``a * b_k`` on the spatial grid, shape ``(d, *space)``."""
        e = _plane_wave(spec, self.k)
        return np.stack([a * self.amplitude[i] * e for i in range(self.d)])

    def potential_values(self, spec: GridSpec, a: complex = 1.0) -> np.ndarray:
        e = _plane_wave(spec, self.k)
        return np.stack([a * c * e for c in self.potential])


def _plane_wave(spec: GridSpec, k: Sequence[int], scale: int = 1) -> np.ndarray:
    xs = spec.coords()
    return np.exp(1j * scale * sum(k[i] * xs[i] for i in range(spec.d)))


def _is_rep(k: Sequence[int]) -> bool:
    for c in k:
        if c != 0:
            return c > 0
    return False


def _frame(k: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Orthonormal e1, e2 with (e1, e2, k/|k|) right-handed."""
    khat = k / np.linalg.norm(k)
    # reference axis: coordinate direction least aligned with k, lowest index on ties
    ref = int(np.argmin(np.round(np.abs(khat), 12)))
    e = np.zeros(3)
    e[ref] = 1.0
    e1 = e - np.dot(e, khat) * khat
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(khat, e1)
    return e1, e2


def make_block(d: int, k: Sequence[int]) -> BuildingBlock:
    k = tuple(int(c) for c in k)
    if len(k) != d:
        raise ValueError("wavevector dimension mismatch")
    if not any(k):
        raise ValueError("building block needs k != 0")
    kv = np.array(k, dtype=float)
    kn = float(np.linalg.norm(kv))
    if d == 2:
        perp = np.array([-kv[1], kv[0]])
        amp = 1j * perp / kn
        pot = np.array([1.0 / kn + 0j])
        return BuildingBlock(2, k, amp, pot)
    if d != 3:
        raise ValueError("d must be 2 or 3")
    if not _is_rep(k):
        twin = make_block(3, tuple(-c for c in k))
        return BuildingBlock(3, k, np.conj(twin.amplitude), np.conj(twin.potential))
    e1, e2 = _frame(kv)
    B = (e1 + 1j * e2) / np.sqrt(2.0)
    D = 1j * np.cross(kv, B) / kn**2
    return BuildingBlock(3, k, B, D)


# ---------------------------------------------------------------- assembled flows


def _check_coeffs(coeffs: Mapping[tuple[int, ...], complex], d: int) -> int:
    if not coeffs:
        raise ValueError("empty coefficient map")
    shells = {sum(c * c for c in k) for k in coeffs}
    if len(shells) != 1:
        raise ValueError(f"coefficients mix shells {sorted(shells)}")
    for k, a in coeffs.items():
        if len(k) != d:
            raise ValueError("wavevector dimension mismatch")
        mk = tuple(-c for c in k)
        if mk not in coeffs or abs(coeffs[mk] - np.conj(a)) > 1e-14 * (1.0 + abs(a)):
            raise ValueError(f"coefficients not conjugate-symmetric at k={k}")
    return shells.pop()


def assemble_W(coeffs: Mapping[tuple[int, ...], complex], spec: GridSpec) -> tuple[Field, Field, Field]:
    """Velocity, potential and pressure of ``sum_k a_k b_k`` (constant in time)."""
    d = spec.d
    nu = _check_coeffs(coeffs, d)
    W = np.zeros((d,) + spec.space_shape, dtype=complex)
    P = np.zeros((1 if d == 2 else 3,) + spec.space_shape, dtype=complex)
    mean_sq = 0.0
    for k, a in coeffs.items():
        blk = make_block(d, k)
        W += blk.velocity(spec, a)
        P += blk.potential_values(spec, a)
        mean_sq += abs(a) ** 2 * blk.norm2
    W, P = W.real, P.real
    speed2 = np.sum(W**2, axis=0)
    if d == 2:
        # div(W (x) W) = grad(|W|^2/2 + nu Psi^2/2) for a single-shell stream function
        q = -0.5 * speed2 - 0.5 * nu * P[0] ** 2 + mean_sq
    else:
        q = -0.5 * speed2 + 0.5 * mean_sq

    def lift(a, rank):
        return Field(spec, rank, np.broadcast_to(a[:, None], (a.shape[0],) + spec.shape).copy())

    return lift(W, "vector"), lift(P, "scalar" if d == 2 else "vector"), lift(q[None], "scalar")


def mean_WW(coeffs: Mapping[tuple[int, ...], complex], d: int) -> SymMatrix:
    """Closed-form spatial average of W (x) W."""
    out = np.zeros((d, d))
    if coeffs:
        _check_coeffs(coeffs, d)
    for k, a in coeffs.items():
        out += abs(a) ** 2 * make_block(d, k).zero_mode
    return SymMatrix.from_array(out)


# ---------------------------------------------------------------- phase partition


def _rise(y: np.ndarray) -> np.ndarray:
    out = np.zeros_like(y)
    pos = y > 0
    out[pos] = np.exp(-1.0 / y[pos])
    return out


def smooth_step(x) -> np.ndarray:
    """C-infinity step: 0 for x <= 1/4, 1 for x >= 3/4, and S(x) + S(1-x) = 1."""
    y = 2.0 * (np.asarray(x, dtype=float) - 0.25)
    f, g = _rise(y), _rise(1.0 - y)
    return f / (f + g)


def smooth_step_deriv(x) -> np.ndarray:
    y = 2.0 * (np.asarray(x, dtype=float) - 0.25)
    f, g = _rise(y), _rise(1.0 - y)
    with np.errstate(divide="ignore", invalid="ignore"):
        fp = np.where(y > 0, f / np.where(y > 0, y, 1.0) ** 2, 0.0)
        gp = np.where(1.0 - y > 0, g / np.where(1.0 - y > 0, 1.0 - y, 1.0) ** 2, 0.0)
    den = (f + g) ** 2
    return 2.0 * (fp * g + f * gp) / den


def beta(s) -> np.ndarray:
    """1D profile: 1 on |s| <= 1/4, 0 on |s| >= 3/4, squares of unit shifts sum to 1."""
    s = np.asarray(s, dtype=float)
    return np.sin(0.5 * np.pi * smooth_step(1.0 - np.abs(s)))


def beta_deriv(s) -> np.ndarray:
    s = np.asarray(s, dtype=float)
    u = 1.0 - np.abs(s)
    return -np.sign(s) * np.cos(0.5 * np.pi * smooth_step(u)) * 0.5 * np.pi * smooth_step_deriv(u)


def class_index(l: Sequence[int]) -> int:
    """Parity class of a lattice site, in 0 .. 2^d - 1."""
    return sum((int(c) % 2) << i for i, c in enumerate(l))


@dataclass(frozen=True)
class PhasePartition:
    d: int
    mu: int

    def __post_init__(self):
        if self.mu < 1 or int(self.mu) != self.mu:
            raise ValueError("mu must be a positive integer")

    @property
    def n_classes(self) -> int:
        return 2**self.d

    def alpha(self, l: Sequence[int], v: np.ndarray) -> np.ndarray:
        """Weight of site ``l`` at velocities ``v`` of shape ``(d, ...)``."""
        v = np.asarray(v, dtype=float)
        out = np.ones(v.shape[1:])
        for i in range(self.d):
            out = out * beta(self.mu * v[i] - l[i])
        return out

    def alpha_grad(self, l: Sequence[int], v: np.ndarray) -> np.ndarray:
        """Gradient of ``alpha`` with respect to v, shape ``(d, ...)``."""
        v = np.asarray(v, dtype=float)
        b = [beta(self.mu * v[i] - l[i]) for i in range(self.d)]
        db = [self.mu * beta_deriv(self.mu * v[i] - l[i]) for i in range(self.d)]
        out = []
        for i in range(self.d):
            g = db[i]
            for j in range(self.d):
                if j != i:
                    g = g * b[j]
            out.append(g)
        return np.stack(out)

    def sites(self, v: np.ndarray) -> list[tuple[int, ...]]:
        """Lattice sites whose support meets the sampled velocities."""
        v = np.asarray(v, dtype=float).reshape(self.d, -1)
        lo = np.floor(self.mu * v.min(axis=1) - 1).astype(int)
        hi = np.ceil(self.mu * v.max(axis=1) + 1).astype(int)
        cand = itertools.product(*[range(a, b + 1) for a, b in zip(lo, hi)])
        out = []
        for l in cand:
            if np.any(self.alpha(l, v) != 0.0):
                out.append(tuple(int(c) for c in l))
        return out

    def phase_rate(self, k: Sequence[int], l: Sequence[int]) -> float:
        """Fast-time frequency of site ``l`` for wavevector ``k``: (k.l)/mu."""
        return float(np.dot(k, l)) / self.mu

    def phi(self, j: int, k: Sequence[int], v: np.ndarray, tau) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        out = np.zeros(np.broadcast(v[0], np.asarray(tau)).shape, dtype=complex)
        for l in self.sites(v):
            if class_index(l) != j:
                continue
            out = out + self.alpha(l, v) * np.exp(-1j * self.phase_rate(k, l) * np.asarray(tau))
        return out
