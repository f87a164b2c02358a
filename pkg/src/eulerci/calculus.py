"""Differential and inverse operators on periodic fields.

All spatial operators act on arrays whose last ``d`` axes are space, so they
work equally on whole fields ``(ncomp, nt, *space)`` and on single time slices
``(ncomp, *space)``. First-derivative symbols vanish on Nyquist modes; the
same modified wavenumbers are used in every Poisson solve so that the discrete
identities (div R v = v - mean v, div P v = 0) hold for band-limited data.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .grid import Field, GridSpec, sym_index, sym_pairs


class Spectral:
    """Wavenumbers for the real-FFT layout over the trailing ``d`` axes."""

    def __init__(self, d: int, n: int):
        self.d = d
        self.n = n
        self.axes = tuple(range(-d, 0))
        full = np.fft.fftfreq(n, 1.0 / n)
        half = np.fft.rfftfreq(n, 1.0 / n)
        ks = []
        for ax in range(d):
            k = (full if ax < d - 1 else half).copy()
            k[np.abs(k) == n // 2] = 0.0
            shape = [1] * d
            shape[ax] = len(k)
            ks.append(k.reshape(shape))
        self.k = ks
        k2 = sum(k**2 for k in ks)
        self.zero = k2 == 0.0
        self.k2 = k2
        self.inv_k2 = np.where(self.zero, 0.0, 1.0 / np.where(self.zero, 1.0, k2))
        self.space_shape = (n,) * d

    def fft(self, a: np.ndarray) -> np.ndarray:
        return np.fft.rfftn(a, axes=self.axes)

    def ifft(self, a: np.ndarray) -> np.ndarray:
        return np.fft.irfftn(a, s=self.space_shape, axes=self.axes)


@lru_cache(maxsize=16)
def spectral(d: int, n: int) -> Spectral:
    return Spectral(d, n)


def _sp(a: np.ndarray, d: int) -> Spectral:
    return spectral(d, a.shape[-1])


# ---------------------------------------------------------------- array kernels

def grad_arr(s: np.ndarray, d: int) -> np.ndarray:
    """Gradient of a scalar array ``(..., *space)`` -> ``(d, ..., *space)``."""
    sp = _sp(s, d)
    h = sp.fft(s)
    return np.stack([sp.ifft(1j * sp.k[i] * h) for i in range(d)])


def div_arr(v: np.ndarray, d: int) -> np.ndarray:
    """Divergence of ``(d, ..., *space)`` -> ``(..., *space)``."""
    sp = _sp(v, d)
    acc = 0.0
    for i in range(d):
        acc = acc + 1j * sp.k[i] * sp.fft(v[i])
    return sp.ifft(acc)


def div_sym_arr(m: np.ndarray, d: int) -> np.ndarray:
    """Row-wise divergence of symmetric storage ``(ncomp, ..., *space)``."""
    sp = _sp(m, d)
    idx = sym_index(d)
    hats = [sp.fft(m[c]) for c in range(m.shape[0])]
    out = []
    for i in range(d):
        acc = 0.0
        for j in range(d):
            acc = acc + 1j * sp.k[j] * hats[idx[i, j]]
        out.append(sp.ifft(acc))
    return np.stack(out)


def div_outer_arr(a: np.ndarray, b: np.ndarray, d: int) -> np.ndarray:
    """div(a (x) b)_i = sum_j d_j (a_i b_j)."""
    sp = _sp(a, d)
    out = []
    for i in range(d):
        acc = 0.0
        for j in range(d):
            acc = acc + 1j * sp.k[j] * sp.fft(a[i] * b[j])
        out.append(sp.ifft(acc))
    return np.stack(out)


def sym_outer(a: np.ndarray, b: np.ndarray, d: int) -> np.ndarray:
    """Symmetric storage of a (x) b + b (x) a."""
    return np.stack([a[i] * b[j] + b[i] * a[j] for i, j in sym_pairs(d)])


def curl_arr(f: np.ndarray, d: int, rank: str) -> tuple[np.ndarray, str]:
    sp = _sp(f, d)
    if d == 2 and rank == "scalar":
        h = sp.fft(f[0])
        return np.stack([sp.ifft(-1j * sp.k[1] * h), sp.ifft(1j * sp.k[0] * h)]), "vector"
    if d == 2 and rank == "vector":
        h0, h1 = sp.fft(f[0]), sp.fft(f[1])
        return sp.ifft(1j * sp.k[0] * h1 - 1j * sp.k[1] * h0)[None], "scalar"
    if d == 3 and rank == "vector":
        h = [sp.fft(f[i]) for i in range(3)]
        k = sp.k
        out = [
            sp.ifft(1j * (k[1] * h[2] - k[2] * h[1])),
            sp.ifft(1j * (k[2] * h[0] - k[0] * h[2])),
            sp.ifft(1j * (k[0] * h[1] - k[1] * h[0])),
        ]
        return np.stack(out), "vector"
    raise ValueError(f"curl undefined for rank {rank!r} in dimension {d}")


def _mean(a: np.ndarray, d: int) -> np.ndarray:
    return a.mean(axis=tuple(range(-d, 0)), keepdims=True)


def leray_Q_arr(v: np.ndarray, d: int) -> np.ndarray:
    """Gradient part plus spatial mean: grad(phi) + mean(v) with lap(phi) = div v."""
    sp = _sp(v, d)
    hats = [sp.fft(v[i]) for i in range(d)]
    kv = sum(sp.k[i] * hats[i] for i in range(d))
    out = []
    for i in range(d):
        g = sp.ifft(sp.k[i] * kv * sp.inv_k2)
        out.append(g + _mean(v[i], d))
    return np.stack(out)


def leray_P_arr(v: np.ndarray, d: int) -> np.ndarray:
    return v - leray_Q_arr(v, d)


def div_inverse_arr(v: np.ndarray, d: int) -> np.ndarray:
    """Symmetric trace-free R v with div(R v) = v - mean(v); storage ``(ncomp, ...)``."""
    sp = _sp(v, d)
    uh = [-sp.fft(v[i]) * sp.inv_k2 for i in range(d)]
    ku = sum(sp.k[i] * uh[i] for i in range(d))
    divu_h = 1j * ku
    c_p = (d - 2) / (2.0 * (d - 1))
    c_u = d / (2.0 * (d - 1))
    c_d = 1.0 / (1.0 - d)
    pu = [uh[i] - sp.k[i] * ku * sp.inv_k2 for i in range(d)] if d > 2 else None
    out = []
    for i, j in sym_pairs(d):
        h = c_u * 1j * (sp.k[j] * uh[i] + sp.k[i] * uh[j])
        if pu is not None:
            h = h + c_p * 1j * (sp.k[j] * pu[i] + sp.k[i] * pu[j])
        if i == j:
            h = h + c_d * divu_h
        out.append(sp.ifft(h))
    return np.stack(out)


def time_derivative_arr(a: np.ndarray, axis: int = 1) -> np.ndarray:
    """Spectral derivative along the periodic time axis (Nyquist zeroed)."""
    nt = a.shape[axis]
    h = np.fft.rfft(a, axis=axis)
    w = np.fft.rfftfreq(nt, 1.0 / nt)
    if nt % 2 == 0:
        w[-1] = 0.0
    shape = [1] * a.ndim
    shape[axis] = len(w)
    return np.fft.irfft(1j * w.reshape(shape) * h, n=nt, axis=axis)


@lru_cache(maxsize=8)
def time_derivative_matrix(nt: int) -> np.ndarray:
    """Dense spectral differentiation matrix on ``nt`` periodic samples."""
    eye = np.eye(nt)
    mat = time_derivative_arr(eye, axis=0)
    mat.flags.writeable = False
    return mat


def time_derivative_slice(a: np.ndarray, j: int, axis: int = 1) -> np.ndarray:
    """Spectral time derivative at sample ``j`` without materializing the full derivative."""
    row = time_derivative_matrix(a.shape[axis])[j]
    return np.tensordot(row, a, axes=([0], [axis]))


# ---------------------------------------------------------------- field-level API

def gradient(f: Field) -> Field:
    if f.rank != "scalar":
        raise ValueError("gradient expects a scalar field")
    return Field(f.spec, "vector", grad_arr(f.data[0], f.d))


def divergence(f: Field) -> Field:
    if f.rank == "vector":
        return Field(f.spec, "scalar", div_arr(f.data, f.d)[None])
    if f.rank == "symtensor":
        return Field(f.spec, "vector", div_sym_arr(f.data, f.d))
    raise ValueError("divergence expects a vector or symtensor field")


def curl(f: Field) -> Field:
    data, rank = curl_arr(f.data, f.d, f.rank)
    return Field(f.spec, rank, data)


def leray_Q(v: Field) -> Field:
    _need_vector(v)
    return Field(v.spec, "vector", leray_Q_arr(v.data, v.d))


def leray_P(v: Field) -> Field:
    _need_vector(v)
    return Field(v.spec, "vector", leray_P_arr(v.data, v.d))


def div_inverse(v: Field) -> Field:
    _need_vector(v)
    return Field(v.spec, "symtensor", div_inverse_arr(v.data, v.d))


def time_derivative(f: Field) -> Field:
    return f.with_data(time_derivative_arr(f.data, axis=1))


def _need_vector(v: Field):
    if v.rank != "vector":
        raise ValueError("expected a vector field")


# ---------------------------------------------------------------- mollifier

def bump(s: np.ndarray) -> np.ndarray:
    """exp(-1/(1-s^2)) on |s| < 1, zero elsewhere."""
    s = np.asarray(s, dtype=float)
    out = np.zeros_like(s)
    inside = np.abs(s) < 1.0
    out[inside] = np.exp(-1.0 / (1.0 - s[inside] ** 2))
    return out


@dataclass(frozen=True)
class MollifierSpec:
    """Tensorized bump of support ``[-pi*ell, pi*ell]`` per axis, unit discrete mass."""

    ell: float
    min_cells: int = 4

    def __post_init__(self):
        if not 0.0 < self.ell < 1.0:
            raise ValueError("ell must lie in (0, 1)")
        if self.ell > 0.5:
            raise ValueError("scaled support must fit within half the grid period")

    def weights(self, n: int) -> tuple[np.ndarray, np.ndarray]:
        """Offsets (in cells) and normalized 1D weights on an ``n``-point circle."""
        h = 2.0 * np.pi / n
        radius = np.pi * self.ell / h
        if radius < self.min_cells:
            raise ValueError(
                f"mollifier under-resolved: support radius {radius:.2f} cells < {self.min_cells} "
                f"(need n >= {int(np.ceil(2 * self.min_cells / self.ell))})"
            )
        m = int(np.floor(radius))
        offsets = np.arange(-m, m + 1)
        w = bump(offsets / radius)
        w = w / np.sum(w)
        return offsets, w


def _convolve_axis(a: np.ndarray, axis: int, offsets: np.ndarray, w: np.ndarray) -> np.ndarray:
    # f + sum_m w_m (f(x - m) - f(x)): constants pass through bit-for-bit
    acc = np.zeros_like(a)
    for m, wm in zip(offsets, w):
        if m == 0 or wm == 0.0:
            continue
        acc += wm * (np.roll(a, m, axis=axis) - a)
    return a + acc


def mollify_arr(data: np.ndarray, spec: GridSpec, m: MollifierSpec) -> np.ndarray:
    """Space-time convolution of ``(ncomp, nt, *space)`` samples."""
    out = np.empty_like(data)
    w_t = w_x = None
    for c in range(data.shape[0]):
        a = data[c]
        if np.all(a == a.flat[0]):
            out[c] = a
            continue
        # time-independent components skip the time axis (the kernel has unit mass)
        if not np.all(a == a[:1]):
            w_t = w_t or m.weights(spec.n_time)
            a = _convolve_axis(a, 0, *w_t)
        w_x = w_x or m.weights(spec.n_space)
        for ax in range(spec.d):
            a = _convolve_axis(a, 1 + ax, *w_x)
        out[c] = a
    return out


def mollify(f: Field, m: MollifierSpec) -> Field:
    return f.with_data(mollify_arr(f.data, f.spec, m))
