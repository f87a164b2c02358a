"""Periodic space-time grids, real fields, and norm estimators.

Fields live on ``T^d x S^1`` with period 2*pi on every axis. Samples are stored
component-major, then time, then space with the last spatial axis fastest, so a
field array has shape ``(ncomp, n_time, n_space, ..., n_space)``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field as dc_field
from functools import cached_property, lru_cache
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

TWO_PI = 2.0 * np.pi
RANKS = ("scalar", "vector", "symtensor")


def _is_pow2(n: int) -> bool:
    return n >= 1 and (n & (n - 1)) == 0


@dataclass(frozen=True)
class GridSpec:
    d: int
    n_space: int
    n_time: int

    def __post_init__(self):
        if self.d not in (2, 3):
            raise ValueError(f"d must be 2 or 3, got {self.d}")
        if not _is_pow2(self.n_space) or not _is_pow2(self.n_time):
            raise ValueError("n_space and n_time must be powers of two")

    @property
    def period(self) -> float:
        return TWO_PI

    @property
    def dx(self) -> float:
        return TWO_PI / self.n_space

    @property
    def dt(self) -> float:
        return TWO_PI / self.n_time

    @property
    def space_shape(self) -> tuple[int, ...]:
        return (self.n_space,) * self.d

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.n_time,) + self.space_shape

    def times(self) -> np.ndarray:
        return np.arange(self.n_time) * self.dt

    def coords(self) -> list[np.ndarray]:
        """Spatial coordinate arrays, broadcastable to ``space_shape``."""
        x = np.arange(self.n_space) * self.dx
        out = []
        for ax in range(self.d):
            shape = [1] * self.d
            shape[ax] = self.n_space
            out.append(x.reshape(shape))
        return out

    def mesh(self) -> list[np.ndarray]:
        return [np.broadcast_to(c, self.space_shape) for c in self.coords()]

    def to_dict(self) -> dict:
        return {"d": self.d, "n_space": self.n_space, "n_time": self.n_time, "period": "2pi"}

    @classmethod
    def from_dict(cls, obj: dict) -> "GridSpec":
        return cls(int(obj["d"]), int(obj["n_space"]), int(obj["n_time"]))


def ncomp(rank: str, d: int) -> int:
    if rank == "scalar":
        return 1
    if rank == "vector":
        return d
    if rank == "symtensor":
        return d * (d + 1) // 2
    raise ValueError(f"unknown rank {rank!r}")


@lru_cache(maxsize=None)
def sym_pairs(d: int) -> tuple[tuple[int, int], ...]:
    """Upper-triangular (i, j) index pairs in storage order."""
    return tuple((i, j) for i in range(d) for j in range(i, d))


@lru_cache(maxsize=None)
def sym_index(d: int) -> np.ndarray:
    """``idx[i, j]`` gives the storage slot of matrix entry (i, j)."""
    idx = np.zeros((d, d), dtype=int)
    for c, (i, j) in enumerate(sym_pairs(d)):
        idx[i, j] = idx[j, i] = c
    return idx


def component_names(rank: str, d: int) -> list[str]:
    if rank == "scalar":
        return ["s"]
    if rank == "vector":
        return [f"v{i + 1}" for i in range(d)]
    return [f"m{i + 1}{j + 1}" for i, j in sym_pairs(d)]


def sym_to_matrix(comps: np.ndarray, d: int) -> np.ndarray:
    """(ncomp, ...) symmetric storage -> (d, d, ...) full matrices."""
    idx = sym_index(d)
    return comps[idx]


def matrix_to_sym(mat: np.ndarray, d: int) -> np.ndarray:
    """(d, d, ...) -> (ncomp, ...) using the symmetric part."""
    return np.stack([0.5 * (mat[i, j] + mat[j, i]) for i, j in sym_pairs(d)])


def sym_trace(comps: np.ndarray, d: int) -> np.ndarray:
    idx = sym_index(d)
    return sum(comps[idx[i, i]] for i in range(d))


def sym_identity(d: int, scale, shape=()) -> np.ndarray:
    out = np.zeros((ncomp("symtensor", d),) + tuple(shape))
    idx = sym_index(d)
    for i in range(d):
        out[idx[i, i]] = scale
    return out


@dataclass(frozen=True, eq=False)
class Field:
    """Real samples of a scalar, vector or symmetric-tensor field."""

    spec: GridSpec
    rank: str
    data: np.ndarray = dc_field(repr=False)

    def __post_init__(self):
        if self.rank not in RANKS:
            raise ValueError(f"unknown rank {self.rank!r}")
        arr = np.asarray(self.data, dtype=np.float64)
        expected = (ncomp(self.rank, self.spec.d),) + self.spec.shape
        if arr.shape != expected:
            raise ValueError(f"data shape {arr.shape} != {expected}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("field samples must be finite")
        if arr.flags.writeable:
            arr = arr.view()
            arr.flags.writeable = False
        object.__setattr__(self, "data", arr)

    @property
    def ncomp(self) -> int:
        return self.data.shape[0]

    @property
    def d(self) -> int:
        return self.spec.d

    def at(self, t_index: int) -> np.ndarray:
        """Samples at one time slice, shape ``(ncomp, *space)``."""
        return self.data[:, t_index]

    def matrix(self) -> np.ndarray:
        if self.rank != "symtensor":
            raise ValueError("matrix() needs a symtensor field")
        return sym_to_matrix(self.data, self.d)

    @cached_property
    def spectrum(self) -> np.ndarray:
        """Spatial real-FFT coefficients (unnormalized), computed once."""
        axes = tuple(range(-self.d, 0))
        out = np.fft.rfftn(self.data, axes=axes)
        out.flags.writeable = False
        return out

    def with_data(self, data: np.ndarray) -> "Field":
        return Field(self.spec, self.rank, data)

    def __add__(self, other: "Field") -> "Field":
        _check_compatible(self, other)
        return self.with_data(self.data + other.data)

    def __sub__(self, other: "Field") -> "Field":
        _check_compatible(self, other)
        return self.with_data(self.data - other.data)

    def __mul__(self, s: float) -> "Field":
        return self.with_data(self.data * s)

    __rmul__ = __mul__

    # construction helpers
    @classmethod
    def zeros(cls, spec: GridSpec, rank: str) -> "Field":
        return cls(spec, rank, np.zeros((ncomp(rank, spec.d),) + spec.shape))

    @classmethod
    def from_function(cls, spec: GridSpec, rank: str, fn: Callable) -> "Field":
        """``fn(x_list, t)`` returns a sequence of components broadcastable to the grid."""
        xs = spec.coords()
        t = spec.times().reshape((spec.n_time,) + (1,) * spec.d)
        comps = fn(xs, t)
        if rank == "scalar" and not isinstance(comps, (list, tuple)):
            comps = [comps]
        data = np.stack([np.broadcast_to(np.asarray(c, dtype=float), spec.shape) for c in comps])
        return cls(spec, rank, data)


def _check_compatible(a: Field, b: Field):
    if a.spec != b.spec or a.rank != b.rank:
        raise ValueError("fields live on different grids or have different ranks")


# ---------------------------------------------------------------- norms

def pointwise_norm(comps: np.ndarray, rank: str, d: int) -> np.ndarray:
    """Euclidean norm for vectors, operator norm for symmetric tensors."""
    if rank == "scalar":
        return np.abs(comps[0])
    if rank == "vector":
        return np.sqrt(np.sum(comps * comps, axis=0))
    if d == 2:
        a, b, c = comps
        m = 0.5 * (a + c)
        r = np.hypot(0.5 * (a - c), b)
        return np.abs(m) + r
    mat = np.moveaxis(sym_to_matrix(comps, d), (0, 1), (-2, -1))
    ev = np.linalg.eigvalsh(mat)
    return np.max(np.abs(ev), axis=-1)


def _slices(f: Field, t_index):
    return range(f.spec.n_time) if t_index is None else [t_index]


def sup_norm(f: Field, t_index: int | None = None) -> float:
    """Max over samples of the pointwise norm (all times unless a slice is given)."""
    best = 0.0
    for j in _slices(f, t_index):
        best = max(best, float(np.max(pointwise_norm(f.at(j), f.rank, f.d))))
    return best


def spatial_gradient(comps: np.ndarray, d: int) -> list[np.ndarray]:
    """Spectral first derivatives along each spatial axis of ``(..., *space)`` arrays."""
    from .calculus import spectral

    sp = spectral(d, comps.shape[-1])
    hat = sp.fft(comps)
    return [sp.ifft(1j * sp.k[i] * hat) for i in range(d)]


def c1_arr(comps: np.ndarray, rank: str, d: int) -> float:
    """Sup plus max first spatial derivative of one slice ``(ncomp, *space)``."""
    val = float(np.max(pointwise_norm(comps, rank, d)))
    grads = spatial_gradient(comps, d)
    return val + max(float(np.max(pointwise_norm(g, rank, d))) for g in grads)


def c1_space_norm(f: Field, t_index: int | None = None) -> float:
    """Sup norm plus max over first spatial derivatives at one slice (or sup over t)."""
    return max(c1_arr(f.at(j), f.rank, f.d) for j in _slices(f, t_index))


def holder_seminorm(f: Field, theta: float, t_index: int | None = None) -> float:
    """Dyadic, axis-aligned lower bound of the spatial Holder seminorm."""
    if not 0.0 < theta < 1.0:
        raise ValueError("theta must lie in (0, 1)")
    n = f.spec.n_space
    best = 0.0
    for j in _slices(f, t_index):
        comps = f.at(j)
        shift = 1
        while shift <= n // 2:
            h = shift * f.spec.dx
            for ax in range(f.d):
                diff = np.roll(comps, -shift, axis=1 + ax) - comps
                q = float(np.max(pointwise_norm(diff, f.rank, f.d))) / h**theta
                best = max(best, q)
            shift *= 2
    return best


def h_minus1_arr(comps: np.ndarray, d: int) -> float:
    """Homogeneous H^-1 norm of one slice ``(ncomp, *space)``, mean added in quadrature."""
    n = comps.shape[-1]
    axes = tuple(range(1, d + 1))
    hat = np.fft.fftn(comps, axes=axes) / n**d
    k1 = np.fft.fftfreq(n, 1.0 / n)
    k2 = np.zeros((n,) * d)
    for ax in range(d):
        shape = [1] * d
        shape[ax] = n
        k2 = k2 + k1.reshape(shape) ** 2
    power = np.sum(np.abs(hat) ** 2, axis=0)
    zero = (0,) * d
    mean_sq = float(power[zero])
    k2[zero] = 1.0
    power[zero] = 0.0
    return float(np.sqrt(np.sum(power / k2) + mean_sq))


def h_minus1_norm(f: Field, t_index: int) -> float:
    """Homogeneous H^-1 norm with unit-normalized modes, mean added in quadrature."""
    return h_minus1_arr(f.at(t_index), f.d)


def space_mean(f: Field, t_index: int) -> np.ndarray | float:
    """Arithmetic mean over spatial samples at one time slice."""
    comps = f.at(t_index)
    m = comps.reshape(comps.shape[0], -1).mean(axis=1)
    return float(m[0]) if f.rank == "scalar" else m


def space_mean_series(f: Field) -> np.ndarray:
    """Spatial means for every time sample, shape ``(ncomp, n_time)``."""
    return f.data.reshape(f.ncomp, f.spec.n_time, -1).mean(axis=2)


# ---------------------------------------------------------------- modulated fields

@dataclass(frozen=True, eq=False)
class ModulatedField:
    """Sum of slow complex amplitudes times fast carriers ``exp(i*lam*k.x)``.

    Only one representative of each conjugate pair is stored; the ``-k`` term
    is implied with the conjugate amplitude, so evaluation is real by design.
    Each term carries a complex vector (or scalar) profile ``vec`` so that the
    term is ``amp(x, t) * vec * exp(i*lam*k.x)``.
    """

    spec: GridSpec
    carrier: int
    ks: np.ndarray  # (m, d) integer wavevectors, one per conjugate pair
    vecs: np.ndarray  # (m, ncomp) complex profiles
    amps: Sequence[np.ndarray]  # each broadcastable to spec.shape
    rank: str = "vector"

    def __post_init__(self):
        if self.carrier < 1 or int(self.carrier) != self.carrier:
            raise ValueError("carrier must be a positive integer")
        ks = np.asarray(self.ks, dtype=int).reshape(-1, self.spec.d)
        object.__setattr__(self, "ks", ks)
        if len(self.amps) != len(ks) or len(self.vecs) != len(ks):
            raise ValueError("one amplitude and profile per wavevector")
        for k in ks:
            if not np.any(k):
                raise ValueError("zero wavevector")

    def pairs(self):
        """All terms including the implied conjugates, as (k, vec, amp)."""
        for k, v, a in zip(self.ks, self.vecs, self.amps):
            yield k, v, a
            yield -k, np.conj(v), np.conj(a)

    def _amp_at(self, a: np.ndarray, j: int) -> np.ndarray:
        a = np.asarray(a)
        if a.ndim == 0:
            return a
        return a[j] if a.shape[0] == self.spec.n_time else a[0]

    def slice_values(self, j: int, amp_fn=None) -> np.ndarray:
        """Real samples at time index ``j``; ``amp_fn`` may replace amplitudes."""
        xs = self.spec.coords()
        ncomp = self.vecs.shape[1]
        out = np.zeros((ncomp,) + self.spec.space_shape)
        for idx, (k, v) in enumerate(zip(self.ks, self.vecs)):
            a = self._amp_at(self.amps[idx], j) if amp_fn is None else amp_fn(idx, j)
            phase = sum(self.carrier * k[ax] * xs[ax] for ax in range(self.spec.d))
            carrier = np.exp(1j * phase)
            term = a * carrier
            for c in range(ncomp):
                out[c] += 2.0 * np.real(v[c] * term)
        return out

    def evaluate(self) -> Field:
        data = np.stack([self.slice_values(j) for j in range(self.spec.n_time)], axis=1)
        return Field(self.spec, self.rank, data)

    def evaluate_at(self, points: np.ndarray, t_index: int, amp_values=None) -> np.ndarray:
        """Direct summation at arbitrary points; ``amp_values[idx]`` gives a_k there."""
        pts = np.atleast_2d(points)
        ncomp = self.vecs.shape[1]
        out = np.zeros((ncomp, len(pts)))
        for idx, (k, v) in enumerate(zip(self.ks, self.vecs)):
            a = amp_values[idx] if amp_values is not None else self._amp_at(self.amps[idx], t_index)
            a = np.broadcast_to(a, (len(pts),)) if np.ndim(a) == 0 else a
            phase = self.carrier * pts @ k
            for c in range(ncomp):
                out[c] += 2.0 * np.real(v[c] * a * np.exp(1j * phase))
        return out

    def spatial_derivative(self, axis: int, amp_grads: Sequence[np.ndarray] | None = None) -> "ModulatedField":
        """Exact derivative: (d_axis a + i*lam*k_axis*a) on each term."""
        new = []
        for idx, (k, a) in enumerate(zip(self.ks, self.amps)):
            da = 0.0 if amp_grads is None else amp_grads[idx]
            new.append(da + 1j * self.carrier * k[axis] * np.asarray(a))
        return ModulatedField(self.spec, self.carrier, self.ks, self.vecs, new, self.rank)


# ---------------------------------------------------------------- file format

def save_fields(path_stem: str | Path, spec: GridSpec, fields: dict[str, Field], extra: dict | None = None):
    """JSON sidecar plus flat little-endian float64 binary (component-major, t, x-last)."""
    stem = Path(path_stem)
    stem.parent.mkdir(parents=True, exist_ok=True)
    header = {"spec": spec.to_dict(), "dtype": "<f8", "order": "component,t,x", "fields": []}
    offset = 0
    with open(stem.with_suffix(".bin"), "wb") as fh:
        for name, f in fields.items():
            if f.spec != spec:
                raise ValueError(f"field {name} has a different grid")
            arr = np.ascontiguousarray(f.data, dtype="<f8")
            fh.write(arr.tobytes())
            header["fields"].append({
                "name": name,
                "rank": f.rank,
                "components": component_names(f.rank, spec.d),
                "offset": offset,
                "count": int(arr.size),
            })
            offset += int(arr.size)
    if extra:
        header.update(extra)
    stem.with_suffix(".json").write_text(json.dumps(header, indent=2, sort_keys=True) + "\n")


def load_fields(path_stem: str | Path) -> tuple[GridSpec, dict[str, Field], dict]:
    stem = Path(path_stem)
    header = json.loads(stem.with_suffix(".json").read_text())
    spec = GridSpec.from_dict(header["spec"])
    raw = np.fromfile(stem.with_suffix(".bin"), dtype="<f8")
    out = {}
    for entry in header["fields"]:
        n = ncomp(entry["rank"], spec.d)
        chunk = raw[entry["offset"]: entry["offset"] + entry["count"]]
        out[entry["name"]] = Field(spec, entry["rank"], chunk.reshape((n,) + spec.shape).astype(np.float64))
    return spec, out, header


def save_field(path_stem: str | Path, f: Field):
    save_fields(path_stem, f.spec, {"field": f})


def load_field(path_stem: str | Path) -> Field:
    return load_fields(path_stem)[1]["field"]
