"""Symmetric-matrix geometry: the admissible cone, lattice shells, direction families,
and positive coefficients reconstructing a matrix from rank-deficient projectors.

A family is a set of lattice directions closed under negation. Each conjugate
pair ``{k, -k}`` contributes the generator ``Id - khat (x) khat``. Coefficients
come from the minimum-norm solution of ``sum_p c_p M_p = R``; this is linear in
``R`` and hence smooth, and ``R`` is admissible for the family exactly when every
``c_p`` stays above the family's floor. Per-point coefficients are
``gamma_k^2 = c_p / 2`` for both members of the pair.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .grid import matrix_to_sym, sym_pairs, sym_to_matrix


# ---------------------------------------------------------------- matrices

@dataclass(frozen=True)
class SymMatrix:
    """Symmetric matrix stored by its upper triangle."""

    d: int
    entries: tuple[float, ...]

    @classmethod
    def from_array(cls, a) -> "SymMatrix":
        a = np.asarray(a, dtype=float)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise ValueError("expected a square matrix")
        d = a.shape[0]
        return cls(d, tuple(float(0.5 * (a[i, j] + a[j, i])) for i, j in sym_pairs(d)))

    @property
    def full(self) -> np.ndarray:
        return sym_to_matrix(np.asarray(self.entries), self.d)

    def eigenvalues(self) -> np.ndarray:
        return np.linalg.eigvalsh(self.full)


def _as_array(R) -> np.ndarray:
    if isinstance(R, SymMatrix):
        return R.full
    a = np.asarray(R, dtype=float)
    return 0.5 * (a + a.T)


def in_Md(R) -> tuple[bool, float]:
    """Membership in the admissible cone: R > 0 and tr R/(d-1) Id - R > 0; margin is the latter's min eigenvalue."""
    a = _as_array(R)
    d = a.shape[0]
    shifted = np.trace(a) / (d - 1) * np.eye(d) - a
    margin = float(np.linalg.eigvalsh(shifted)[0])
    pos = float(np.linalg.eigvalsh(a)[0]) > 0.0
    return (pos and margin > 0.0), margin


def conic_margin_ball_radius(d: int, floor: float = 0.1, samples: int = 64, seed: int = 0) -> float:
    """Largest dyadic r whose 2r-ball boundary around Id keeps margin >= floor, halved once."""
    rng = np.random.default_rng(seed)
    dirs = []
    # extreme boundary points: eigenvalue patterns of +-1 under random rotations
    for signs in itertools.product((-1.0, 1.0), repeat=d):
        for _ in range(max(1, samples // 2**d)):
            q, _ = np.linalg.qr(rng.standard_normal((d, d)))
            dirs.append(q @ np.diag(signs) @ q.T)
    for _ in range(samples):
        h = rng.standard_normal((d, d))
        h = h + h.T
        dirs.append(h / np.max(np.abs(np.linalg.eigvalsh(h))))

    def ok(r: float) -> bool:
        for h in dirs:
            inside, margin = in_Md(np.eye(d) + 2.0 * r * h)
            if not inside or margin < floor:
                return False
        return True

    r = 1.0
    while r > 2.0**-30 and not ok(r):
        r /= 2.0
    return r / 2.0


# ---------------------------------------------------------------- shells

@dataclass(frozen=True)
class Shell:
    d: int
    nu: int
    points: tuple[tuple[int, ...], ...]

    def __len__(self):
        return len(self.points)

    def pairs(self) -> list[tuple[int, ...]]:
        """One representative per conjugate pair (first nonzero coordinate positive)."""
        return [p for p in self.points if _is_rep(p)]


def _is_rep(k: Sequence[int]) -> bool:
    for c in k:
        if c != 0:
            return c > 0
    return False


def enumerate_shell(d: int, nu: int) -> Shell:
    """All k in Z^d with |k|^2 = nu, by bounded brute force, in lexicographic order."""
    if nu < 1:
        raise ValueError("nu must be >= 1")
    m = math.isqrt(nu)
    rng = range(-m, m + 1)
    pts = tuple(k for k in itertools.product(rng, repeat=d) if sum(c * c for c in k) == nu)
    return Shell(d, nu, pts)


# ---------------------------------------------------------------- generators

def _svec_basis(d: int) -> np.ndarray:
    """Weights turning symmetric storage into a Frobenius-isometric vector."""
    return np.array([1.0 if i == j else math.sqrt(2.0) for i, j in sym_pairs(d)])


def projector_generator(k: Sequence[int]) -> np.ndarray:
    k = np.asarray(k, dtype=float)
    kh = k / np.linalg.norm(k)
    return np.eye(len(k)) - np.outer(kh, kh)


def solver_matrices(pairs: Sequence[Sequence[int]], d: int) -> tuple[np.ndarray, int]:
    """Functionals G_p (as symmetric matrices) with c_p(R) = <G_p, R>_F, plus matrix rank."""
    w = _svec_basis(d)
    cols = [matrix_to_sym(projector_generator(k), d) * w for k in pairs]
    A = np.stack(cols, axis=1)
    rank = int(np.linalg.matrix_rank(A, tol=1e-12))
    pinv = np.linalg.pinv(A)
    G = np.stack([sym_to_matrix(row * w / (w * w), d) for row in pinv])
    # rows of pinv act on weighted vectors; <G, R>_F = sum_ij G_ij R_ij
    return G, rank


@dataclass
class Family:
    """One direction family with its fixed generator set and admissibility floor."""

    d: int
    pairs: list[tuple[int, ...]]
    floor: float = 0.0
    margin: float = float("nan")
    G: np.ndarray = field(default=None, repr=False)
    rank: int = 0

    def __post_init__(self):
        self.pairs = [tuple(int(c) for c in k) for k in self.pairs]
        if self.G is None:
            self.G, self.rank = solver_matrices(self.pairs, self.d)

    @property
    def points(self) -> list[tuple[int, ...]]:
        out = []
        for k in self.pairs:
            out.append(k)
            out.append(tuple(-c for c in k))
        return out

    @property
    def spans(self) -> bool:
        return self.rank == self.d * (self.d + 1) // 2

    def pair_coeffs(self, R) -> np.ndarray:
        """c_p(R) for one matrix."""
        a = _as_array(R)
        return np.einsum("pij,ij->p", self.G, a)

    def pair_coeffs_field(self, comps: np.ndarray) -> np.ndarray:
        """c_p for symmetric storage ``(ncomp, ...)`` -> ``(npairs, ...)``."""
        out = np.zeros((len(self.pairs),) + comps.shape[1:])
        for p in range(len(self.pairs)):
            for c, (i, j) in enumerate(sym_pairs(self.d)):
                g = self.G[p, i, j] if i == j else 2.0 * self.G[p, i, j]
                if g != 0.0:
                    out[p] += g * comps[c]
        return out

    def pair_functional_sym(self) -> np.ndarray:
        """(npairs, ncomp) weights with c_p = sum_c W[p, c] * comps[c]."""
        W = np.zeros((len(self.pairs), self.d * (self.d + 1) // 2))
        for p in range(len(self.pairs)):
            for c, (i, j) in enumerate(sym_pairs(self.d)):
                W[p, c] = self.G[p, i, j] if i == j else 2.0 * self.G[p, i, j]
        return W

    def ball_margin(self, radius: float, center=None) -> float:
        """min_p min_{|R - C|_op <= radius} c_p(R), exact via nuclear norms."""
        if not self.spans:
            return -math.inf
        c = np.eye(self.d) if center is None else _as_array(center)
        base = self.pair_coeffs(c)
        nuc = np.array([np.sum(np.abs(np.linalg.eigvalsh(g))) for g in self.G])
        return float(np.min(base - radius * nuc))

    def admissible_radius(self, center=None) -> float:
        """Largest r with every c_p >= floor on the r-ball around ``center``."""
        c = np.eye(self.d) if center is None else _as_array(center)
        base = self.pair_coeffs(c)
        nuc = np.array([np.sum(np.abs(np.linalg.eigvalsh(g))) for g in self.G])
        return float(np.min((base - self.floor) / nuc))

    def to_dict(self) -> dict:
        return {
            "pairs": [list(k) for k in self.pairs],
            "floor": self.floor,
            "margin": self.margin,
            "generators": [[list(map(float, row)) for row in g] for g in self.G],
        }


class InadmissibleMatrix(ValueError):
    """Raised when a matrix lies outside a family's admissible set."""

    def __init__(self, message: str, margin: float):
        super().__init__(message)
        self.margin = margin


def gamma_coeffs(R, family: Family) -> dict[tuple[int, ...], float]:
    """Per-point gamma_k >= 0 with sum_k gamma_k^2 (Id - khat khat) = R."""
    inside, m = in_Md(R)
    if not inside:
        raise InadmissibleMatrix(f"matrix outside the admissible cone (margin {m:.3e})", m)
    if not family.spans:
        raise InadmissibleMatrix("family generators do not span the symmetric matrices", -math.inf)
    c = family.pair_coeffs(R)
    lowest = float(np.min(c))
    if lowest <= family.floor:
        raise InadmissibleMatrix(
            f"coefficient {lowest:.3e} below family floor {family.floor:.3e}", lowest - family.floor
        )
    out = {}
    for k, cp in zip(family.pairs, c):
        g = math.sqrt(cp / 2.0)
        out[k] = g
        out[tuple(-x for x in k)] = g
    return out


def reconstruct(gammas: dict[tuple[int, ...], float], d: int) -> np.ndarray:
    out = np.zeros((d, d))
    for k, g in gammas.items():
        out += g * g * projector_generator(k)
    return out


# ---------------------------------------------------------------- family selection

@dataclass(frozen=True)
class KSpec:
    """Compact set to cover: closed ball around Id plus extra sampled matrices."""

    ball_radius: float = 0.0
    extra: tuple = ()
    nu_max: int = 2000

    def to_dict(self) -> dict:
        return {
            "ball_radius": self.ball_radius,
            "extra": [np.asarray(m, dtype=float).tolist() for m in self.extra],
            "nu_max": self.nu_max,
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "KSpec":
        return cls(
            float(obj.get("ball_radius", 0.0)),
            tuple(np.asarray(m, dtype=float) for m in obj.get("extra", [])),
            int(obj.get("nu_max", 2000)),
        )


@dataclass
class DirectionFamilies:
    d: int
    nu: int
    families: list[Family]
    kspec: KSpec = field(default_factory=KSpec)

    @property
    def N(self) -> int:
        return len(self.families)

    @property
    def shell(self) -> Shell:
        return enumerate_shell(self.d, self.nu)

    def kmax(self) -> int:
        return max(max(abs(c) for c in k) for f in self.families for k in f.pairs)

    def to_dict(self) -> dict:
        return {
            "d": self.d,
            "nu": self.nu,
            "N": self.N,
            "K": self.kspec.to_dict(),
            "families": [f.to_dict() for f in self.families],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, obj: dict) -> "DirectionFamilies":
        d = int(obj["d"])
        fams = []
        for fo in obj["families"]:
            fam = Family(d, [tuple(k) for k in fo["pairs"]], float(fo["floor"]), float(fo["margin"]))
            stored = np.asarray(fo.get("generators", fam.G))
            if not np.allclose(stored, fam.G, atol=1e-12):
                raise ValueError("stored solver basis disagrees with the recomputed one")
            fams.append(fam)
        return cls(d, int(obj["nu"]), fams, KSpec.from_dict(obj.get("K", {})))

    @classmethod
    def load(cls, path: str | Path) -> "DirectionFamilies":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def save(self, path: str | Path):
        Path(path).write_text(self.to_json())


class FamilySearchExhausted(RuntimeError):
    def __init__(self, message: str, best_margin: float):
        super().__init__(message)
        self.best_margin = best_margin


def _family_score(pairs, d, kspec: KSpec) -> float:
    if len(pairs) < d * (d + 1) // 2:
        return -math.inf
    fam = Family(d, list(pairs))
    if not fam.spans:
        return -math.inf
    score = fam.ball_margin(kspec.ball_radius)
    for m in kspec.extra:
        score = min(score, float(np.min(fam.pair_coeffs(m))))
    return score


def _spread_order(pairs: list[tuple[int, ...]]) -> list[tuple[int, ...]]:
    """Deterministic ordering that interleaves directions across the sphere."""
    def key(k):
        kh = np.asarray(k, float) / np.linalg.norm(k)
        return tuple(np.round(np.abs(kh), 12)) + tuple(k)
    return sorted(pairs, key=key)


def _partition(pairs, d, N, kspec: KSpec, max_sweeps: int = 50):
    """Local search over assignments of directions to N families (or unused)."""
    s = d * (d + 1) // 2
    order = _spread_order(pairs)
    assign = [i % N for i in range(len(order))]

    def groups(a):
        gs = [[] for _ in range(N)]
        for k, g in zip(order, a):
            if g >= 0:
                gs[g].append(k)
        return gs

    def scores(a):
        return [_family_score(g, d, kspec) for g in groups(a)]

    cur = scores(assign)

    def objective(sc):
        return (min(sc), sum(x for x in sc if x > -math.inf))

    best = objective(cur)
    for _ in range(max_sweeps):
        improved = False
        worst = int(np.argmin(cur))
        members = [i for i, g in enumerate(assign) if g == worst]
        # moves touching the worst family: swap with any other direction, or pull one in
        candidates = []
        for i in members:
            for j, gj in enumerate(assign):
                if gj != worst:
                    candidates.append((i, j))
        for i, j in candidates:
            trial = list(assign)
            trial[i], trial[j] = trial[j], trial[i]
            sc = list(cur)
            for g in {trial[i], trial[j]}:
                if g >= 0:
                    sc[g] = _family_score(groups(trial)[g], d, kspec)
            obj = objective(sc)
            if obj > best:
                assign, cur, best, improved = trial, sc, obj, True
                break
        if not improved:
            for i in members:
                if len(members) <= s:
                    break
                trial = list(assign)
                trial[i] = -1
                sc = list(cur)
                sc[worst] = _family_score(groups(trial)[worst], d, kspec)
                obj = objective(sc)
                if obj > best:
                    assign, cur, best, improved = trial, sc, obj, True
                    break
        if not improved:
            break
    return groups(assign), cur


def _tetra_rotations() -> list[np.ndarray]:
    mats = []
    for shift in range(3):
        perm = [(i + shift) % 3 for i in range(3)]
        for signs in itertools.product((1, -1), repeat=3):
            if signs[0] * signs[1] * signs[2] != 1:
                continue
            m = np.zeros((3, 3), dtype=int)
            for i in range(3):
                m[i, perm[i]] = signs[i]
            mats.append(m)
    return mats


def _canon(k) -> tuple[int, ...]:
    k = tuple(int(c) for c in k)
    return k if _is_rep(k) else tuple(-c for c in k)


def _orbit_groups(pairs, d: int) -> list[list[tuple[int, ...]]]:
    """Orbits of lines under the tetrahedral rotations (d = 3); they partition the shell."""
    if d != 3:
        return []
    rots = _tetra_rotations()
    seen, out = set(), []
    for k in pairs:
        if k in seen:
            continue
        orb = sorted({_canon(m @ np.array(k)) for m in rots})
        seen.update(orb)
        out.append(orb)
    return out


def _orbit_selection(pairs, d, N, kspec: KSpec):
    scored = [(_family_score(g, d, kspec), g) for g in _orbit_groups(pairs, d)]
    good = sorted((x for x in scored if x[0] > 0.0), key=lambda x: (-x[0], x[1]))
    if len(good) < N:
        return None
    chosen = sorted(good[:N], key=lambda x: x[1])
    return [g for _, g in chosen], [m for m, _ in chosen]


def select_families(d: int, N: int, kspec: KSpec | None = None, nu_min: int = 1) -> DirectionFamilies:
    """Smallest shell nu admitting N disjoint families that all cover K with positive margin."""
    kspec = kspec or KSpec()
    s = d * (d + 1) // 2
    best_seen = -math.inf
    for nu in range(nu_min, kspec.nu_max + 1):
        shell = enumerate_shell(d, nu)
        pairs = shell.pairs()
        if len(pairs) < N * s:
            continue
        if N == 1:
            groups, sc = [list(pairs)], [_family_score(pairs, d, kspec)]
        else:
            # symmetric orbits first: each orbit inherits the symmetry of the ball around Id
            found = _orbit_selection(pairs, d, N, kspec)
            groups, sc = found if found is not None else _partition(pairs, d, N, kspec)
        best_seen = max(best_seen, min(sc))
        if min(sc) > 0.0:
            fams = []
            for g, m in zip(groups, sc):
                fam = Family(d, sorted(g), floor=0.5 * m, margin=m)
                fams.append(fam)
            return DirectionFamilies(d, nu, fams, kspec)
    raise FamilySearchExhausted(
        f"no admissible families up to nu = {kspec.nu_max} (best margin {best_seen:.3e})", best_seen
    )


def canonical_family(d: int) -> Family:
    """Coordinate directions; they reconstruct diagonal matrices only."""
    pairs = [tuple(1 if i == j else 0 for j in range(d)) for i in range(d)]
    return Family(d, pairs)


DATA_DIR = Path(__file__).resolve().parent / "data"


def packaged_families(d: int, N: int) -> DirectionFamilies:
    """Load a shipped family fixture (d=2: N in {1, 4}; d=3: N in {1, 8})."""
    path = DATA_DIR / f"families_d{d}_N{N}.json"
    if not path.exists():
        raise FileNotFoundError(f"no packaged families for d={d}, N={N}")
    return DirectionFamilies.load(path)
