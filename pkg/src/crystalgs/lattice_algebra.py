"""Bravais lattices in d <= 3: reciprocal bases, shortest vectors, ball
enumeration, named lattices and the threshold densities at which the shortest
reciprocal vector reaches the cutoff K0.

Generators are stored as matrix rows.  Offsets of a periodic configuration are
cartesian vectors.
"""
from __future__ import annotations

import csv
import itertools
import json
import math
from dataclasses import dataclass
from functools import cached_property
from typing import NamedTuple

import numpy as np
from scipy.optimize import minimize

from .errors import DegenerateBasis, InvalidParameter, OptimizerFailed, UnknownLattice

TWO_PI = 2.0 * math.pi
# relative slack used for the closed boundary |k| >= K0
BOUNDARY_RTOL = 1e-12


def _as_matrix(generators) -> np.ndarray:
    a = np.atleast_2d(np.asarray(generators, dtype=float))
    if a.shape[0] != a.shape[1] or a.shape[0] not in (1, 2, 3):
        raise InvalidParameter(f"generators must be a d x d matrix with d <= 3, got {a.shape}")
    return a


def _check_independent(a: np.ndarray) -> float:
    det = abs(float(np.linalg.det(a)))
    scale = float(np.prod(np.linalg.norm(a, axis=1)))
    if not np.isfinite(det) or det <= 1e-12 * scale or scale == 0:
        raise DegenerateBasis("generators are linearly dependent")
    return det


@dataclass(frozen=True, eq=False)
class LatticeBasis:
    generators: np.ndarray

    def __post_init__(self):
        a = _as_matrix(self.generators)
        object.__setattr__(self, "generators", a)
        _check_independent(a)

    @property
    def dimension(self) -> int:
        return self.generators.shape[0]

    @cached_property
    def volume(self) -> float:
        return abs(float(np.linalg.det(self.generators)))

    @property
    def density(self) -> float:
        return 1.0 / self.volume

    @property
    def gram(self) -> np.ndarray:
        return self.generators @ self.generators.T

    def scaled(self, s: float) -> "LatticeBasis":
        return LatticeBasis(self.generators * s)

    def to_fractional(self, points) -> np.ndarray:
        """Coordinates ``u`` with ``points = u @ generators``."""
        return np.linalg.solve(self.generators.T, np.atleast_2d(points).T).T

    def reciprocal(self) -> "ReciprocalBasis":
        return reciprocal(self)


@dataclass(frozen=True, eq=False)
class ReciprocalBasis:
    generators: np.ndarray
    shortest_norm: float
    shortest_coefficients: np.ndarray

    @property
    def dimension(self) -> int:
        return self.generators.shape[0]


def reciprocal(basis: LatticeBasis) -> ReciprocalBasis:
    """``b_beta`` with ``a_alpha . b_beta = 2 pi delta``; caches ``q_B*``."""
    a = basis.generators
    _check_independent(a)
    b = TWO_PI * np.linalg.inv(a).T
    q, n = shortest_vector(b)
    return ReciprocalBasis(b, q, n)


def reduce_basis(generators) -> tuple[np.ndarray, np.ndarray]:
    """Greedy pairwise/triple reduction.  Returns ``(R, U)`` with ``R = U @ B``,
    ``U`` unimodular, rows sorted by length."""
    b = _as_matrix(generators).copy()
    d = b.shape[0]
    # work at unit scale so squared norms neither underflow nor overflow
    scale = float(np.max(np.abs(b)))
    if not (scale > 0 and math.isfinite(scale)):
        raise DegenerateBasis("generators are zero or not finite")
    b /= scale
    u = np.eye(d, dtype=np.int64)
    for _ in range(10_000):
        order = np.argsort(np.einsum("ij,ij->i", b, b), kind="stable")
        b, u = b[order], u[order]
        changed = False
        for i in range(d):
            for j in range(d):
                if i == j:
                    continue
                nj = b[j] @ b[j]
                m = round(float(b[i] @ b[j]) / nj)
                if m != 0:
                    cand = b[i] - m * b[j]
                    if cand @ cand < (b[i] @ b[i]) * (1.0 - 1e-14):
                        b[i], u[i] = cand, u[i] - m * u[j]
                        changed = True
        if d == 3:
            for i in range(3):
                j, k = [x for x in range(3) if x != i]
                for sj, sk in ((1, 1), (1, -1), (-1, 1), (-1, -1)):
                    cand = b[i] + sj * b[j] + sk * b[k]
                    if cand @ cand < (b[i] @ b[i]) * (1.0 - 1e-14):
                        b[i], u[i] = cand, u[i] + sj * u[j] + sk * u[k]
                        changed = True
        if not changed:
            order = np.argsort(np.einsum("ij,ij->i", b, b), kind="stable")
            return b[order] * scale, u[order]
    raise RuntimeError("basis reduction did not terminate")


def _box_bounds(reduced: np.ndarray, radius: float) -> np.ndarray:
    """``|n_alpha| <= radius * |b*_alpha|`` for every lattice vector ``n @ R``
    of norm at most ``radius`` (dual-basis bound)."""
    scale = float(np.max(np.abs(reduced)))
    unit = reduced / scale
    ginv = np.linalg.inv(unit @ unit.T)
    return np.floor(radius / scale * np.sqrt(np.diag(ginv)) * (1.0 + 1e-12)).astype(int)


def _box(bounds) -> np.ndarray:
    axes = [np.arange(-m, m + 1) for m in bounds]
    return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, len(bounds))


def shortest_vector(generators) -> tuple[float, np.ndarray]:
    """Norm and integer coefficients (w.r.t. ``generators``) of a shortest
    nonzero lattice vector.  Exhaustive search in the reduced basis; the box is
    enlarged if the dual-basis bound asks for it."""
    b = generators.generators if isinstance(generators, LatticeBasis) else _as_matrix(generators)
    red, u = reduce_basis(b)
    bounds = np.full(red.shape[0], 2)
    while True:
        n = _box(bounds)
        n = n[np.any(n != 0, axis=1)]
        norms = np.linalg.norm(n @ red, axis=1)
        i = int(np.argmin(norms))
        need = _box_bounds(red, float(norms[i]))
        if np.all(need <= bounds):
            return float(norms[i]), n[i] @ u
        bounds = np.maximum(bounds, need)


def enumerate_in_ball(generators, radius: float, strict: bool = True,
                      rtol: float = BOUNDARY_RTOL) -> tuple[np.ndarray, np.ndarray]:
    """All lattice vectors with ``|v| < radius`` (``<=`` if not strict), each
    exactly once and including 0.  Returns ``(vectors, coefficients)`` sorted by
    norm, then coefficients.  Vectors within ``rtol`` of the sphere count as on
    it."""
    b = _as_matrix(generators)
    if radius <= 0:
        return np.zeros((0, b.shape[0])), np.zeros((0, b.shape[0]), dtype=np.int64)
    red, u = reduce_basis(b)
    n = _box(_box_bounds(red, radius))
    v = n @ red
    norms = np.linalg.norm(v, axis=1)
    limit = radius * (1.0 - rtol) if strict else radius * (1.0 + rtol)
    keep = norms < limit if strict else norms <= limit
    coeffs = n[keep] @ u
    norms = norms[keep]
    order = np.lexsort(tuple(coeffs[:, i] for i in reversed(range(coeffs.shape[1]))) + (np.round(norms, 12),))
    coeffs = coeffs[order]
    return coeffs @ b, coeffs


def enumerate_reciprocal_in_ball(basis: LatticeBasis, radius: float):
    """Reciprocal vectors of ``basis`` with ``|k| < radius`` (see
    :func:`enumerate_in_ball`)."""
    return enumerate_in_ball(reciprocal(basis).generators, radius)


# ---------------------------------------------------------------------------
# configurations and cells
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class PeriodicConfiguration:
    """``X = union_j (B + y_j)``; ``offsets[0]`` is 0 by convention."""

    basis: LatticeBasis
    offsets: np.ndarray
    name: str | None = None

    def __post_init__(self):
        d = self.basis.dimension
        y = np.atleast_2d(np.asarray(self.offsets, dtype=float)).reshape(-1, d)
        if y.shape[0] == 0:
            y = np.zeros((1, d))
        object.__setattr__(self, "offsets", y)
        u = self.fractional_offsets
        diff = u[:, None, :] - u[None, :, :]
        close = np.all(np.abs(diff - np.round(diff)) < 1e-9, axis=-1)
        if np.any(close[~np.eye(len(u), dtype=bool)]):
            raise InvalidParameter("offsets coincide modulo the lattice")

    @property
    def dimension(self) -> int:
        return self.basis.dimension

    @property
    def n_offsets(self) -> int:
        return self.offsets.shape[0]

    @property
    def density(self) -> float:
        return self.n_offsets * self.basis.density

    @cached_property
    def fractional_offsets(self) -> np.ndarray:
        return self.basis.to_fractional(self.offsets)

    @cached_property
    def reciprocal(self) -> ReciprocalBasis:
        return reciprocal(self.basis)

    @property
    def q(self) -> float:
        return self.reciprocal.shortest_norm

    def is_admissible(self, cutoff: float) -> bool:
        """``q_B* >= K0`` (closed inequality, relative slack 1e-12)."""
        return self.q >= cutoff * (1.0 - BOUNDARY_RTOL)

    def c_type(self) -> float:
        """``rho(B) / q_B*^d``: the shape constant linking density and q."""
        return self.basis.density / self.q ** self.dimension

    def transformed(self, matrix) -> "PeriodicConfiguration":
        """Apply the linear map ``x -> M x`` to generators and offsets."""
        m = np.asarray(matrix, dtype=float)
        return PeriodicConfiguration(LatticeBasis(self.basis.generators @ m.T),
                                     self.offsets @ m.T, self.name)

    def scaled(self, s: float) -> "PeriodicConfiguration":
        return PeriodicConfiguration(self.basis.scaled(s), self.offsets * s, self.name)

    def is_minimal(self) -> bool:
        """True if no translation outside ``B`` maps ``X`` onto itself, i.e. the
        number of offsets J is minimal for this lattice."""
        u = self.fractional_offsets
        for t in u[1:] - u[0]:
            shifted = u + t
            diff = shifted[:, None, :] - u[None, :, :]
            hit = np.all(np.abs(diff - np.round(diff)) < 1e-9, axis=-1)
            if np.all(hit.any(axis=1)):
                return False
        return True


@dataclass(frozen=True, eq=False)
class PeriodCell:
    """``Lambda = {sum x_a L_a a_a : 0 <= x_a < 1}`` with dual grid
    ``Lambda* = {sum (n_a / L_a) b_a}``."""

    basis: LatticeBasis
    multipliers: tuple

    def __post_init__(self):
        m = tuple(int(x) for x in np.atleast_1d(self.multipliers))
        if len(m) != self.basis.dimension or any(x < 1 for x in m):
            raise InvalidParameter(f"need {self.basis.dimension} positive multipliers, got {m}")
        object.__setattr__(self, "multipliers", m)

    @property
    def dimension(self) -> int:
        return self.basis.dimension

    @property
    def generators(self) -> np.ndarray:
        return self.basis.generators * np.asarray(self.multipliers, dtype=float)[:, None]

    @property
    def volume(self) -> float:
        return self.basis.volume * float(np.prod(self.multipliers))

    @property
    def n_lattice_points(self) -> int:
        return int(np.prod(self.multipliers))

    @cached_property
    def dual_generators(self) -> np.ndarray:
        return reciprocal(self.basis).generators / np.asarray(self.multipliers, dtype=float)[:, None]

    def dual_in_ball(self, radius: float) -> tuple[np.ndarray, np.ndarray]:
        """Dual-grid vectors with ``|k| < radius`` and their integer labels
        ``n`` (``k . r = 2 pi n . x`` for fractional cell coordinates ``x``)."""
        return enumerate_in_ball(self.dual_generators, radius)

    def to_fractional(self, points) -> np.ndarray:
        """Cell coordinates reduced into ``[0, 1)^d``."""
        x = np.linalg.solve(self.generators.T, np.atleast_2d(points).T).T
        x = x - np.floor(x)
        x[x >= 1.0] = 0.0
        return x

    def to_cartesian(self, frac) -> np.ndarray:
        return np.atleast_2d(frac) @ self.generators

    def configuration_points(self, config: PeriodicConfiguration) -> np.ndarray:
        """Fractional cell coordinates of ``X cap Lambda`` (``J * prod L`` points)."""
        if config.basis is not self.basis and not np.allclose(config.basis.generators, self.basis.generators):
            raise InvalidParameter("configuration and cell use different lattices")
        L = np.asarray(self.multipliers)
        m = np.array(list(itertools.product(*[range(x) for x in L])), dtype=float)
        u = config.fractional_offsets
        x = (m[None, :, :] + u[:, None, :]) / L
        x = x.reshape(-1, self.dimension)
        x = x - np.floor(x)
        x[x >= 1.0] = 0.0
        return x


# ---------------------------------------------------------------------------
# named lattices and thresholds
# ---------------------------------------------------------------------------

NAMES = ("chain", "square", "triangular", "sc", "bcc", "fcc", "sh", "hcp")
IDEAL_HCP = math.sqrt(8.0 / 3.0)
OPTIMAL_SH = math.sqrt(3.0) / 2.0
_DIMENSION = {"chain": 1, "square": 2, "triangular": 2, "sc": 3, "bcc": 3, "fcc": 3, "sh": 3, "hcp": 3}


def named_lattice(name: str, scale: float = 1.0, c_over_a: float | None = None) -> PeriodicConfiguration:
    """Conventional generators with lattice constant ``scale``.

    bcc/fcc use primitive generators of the cube of side ``scale``; ``sh`` and
    ``hcp`` use a 60-degree in-plane pair.  hcp defaults to the ideal
    ``c/a = sqrt(8/3)``, sh to ``sqrt(3)/2``.
    """
    a = float(scale)
    if a <= 0:
        raise InvalidParameter("scale must be positive")
    s3 = math.sqrt(3.0)
    offsets = None
    if name == "chain":
        g = [[a]]
    elif name == "square":
        g = [[a, 0], [0, a]]
    elif name == "triangular":
        g = [[a, 0], [a / 2, a * s3 / 2]]
    elif name == "sc":
        g = np.eye(3) * a
    elif name == "bcc":
        g = 0.5 * a * np.array([[-1, 1, 1], [1, -1, 1], [1, 1, -1]], dtype=float)
    elif name == "fcc":
        g = 0.5 * a * np.array([[0, 1, 1], [1, 0, 1], [1, 1, 0]], dtype=float)
    elif name in ("sh", "hcp"):
        ratio = c_over_a if c_over_a is not None else (OPTIMAL_SH if name == "sh" else IDEAL_HCP)
        if ratio <= 0:
            raise InvalidParameter("c/a must be positive")
        g = np.array([[a, 0, 0], [a / 2, a * s3 / 2, 0], [0, 0, ratio * a]])
        if name == "hcp":
            offsets = [np.zeros(3), (g[0] + g[1]) / 3.0 + g[2] / 2.0]
    else:
        raise UnknownLattice(name)
    basis = LatticeBasis(np.asarray(g, dtype=float))
    return PeriodicConfiguration(basis, offsets if offsets is not None else np.zeros((1, basis.dimension)), name)


def scale_to_density(config: PeriodicConfiguration, rho: float) -> PeriodicConfiguration:
    """Uniform dilation by ``s = (rho(X) / rho)^(1/d)``."""
    if rho <= 0:
        raise InvalidParameter("target density must be positive")
    return config.scaled((config.density / rho) ** (1.0 / config.dimension))


def threshold_closed_form(name: str, cutoff: float, c_over_a: float | None = None) -> float:
    """Smallest density at which lattice ``name`` has ``q_B* = K0``."""
    x = cutoff / math.pi
    s3, s2 = math.sqrt(3.0), math.sqrt(2.0)
    simple = {
        "chain": cutoff / TWO_PI,
        "square": x ** 2 / 4.0,
        "triangular": s3 / 8.0 * x ** 2,
        "sc": x ** 3 / 8.0,
        "bcc": x ** 3 / (8.0 * s2),
        "fcc": x ** 3 / (6.0 * s3),
    }
    if name in simple:
        return simple[name]
    if name in ("sh", "hcp"):
        t = c_over_a if c_over_a is not None else (OPTIMAL_SH if name == "sh" else IDEAL_HCP)
        # q = min(4 pi / (sqrt3 a), 2 pi / c) = K0 fixes the largest admissible a
        a = min(4.0 * math.pi / (s3 * cutoff), TWO_PI / (t * cutoff))
        rho_b = 2.0 / (s3 * a ** 2 * t * a)
        return rho_b * (2 if name == "hcp" else 1)
    raise UnknownLattice(name)


class ThresholdDensity(NamedTuple):
    name: str
    closed_form: float
    computed: float

    @property
    def relative_difference(self) -> float:
        return abs(self.computed - self.closed_form) / abs(self.closed_form)


def threshold_density(name: str, cutoff: float, c_over_a: float | None = None) -> ThresholdDensity:
    """Closed form plus an independent value: scale the lattice until its
    shortest reciprocal vector equals ``K0``."""
    config = named_lattice(name, 1.0, c_over_a)
    q = shortest_vector(reciprocal(config.basis).generators)[0]
    # dilation by s maps q -> q / s and rho -> rho / s^d
    s = q / cutoff
    computed = config.scaled(s).density
    return ThresholdDensity(name, threshold_closed_form(name, cutoff, c_over_a), computed)


def threshold_table(cutoff: float) -> list[ThresholdDensity]:
    return [threshold_density(n, cutoff) for n in NAMES]


def shell_norms(generators, count: int = 30) -> np.ndarray:
    """The ``count`` smallest nonzero vector norms of a lattice (with repeats)."""
    b = _as_matrix(generators)
    q = shortest_vector(b)[0]
    radius = q
    while True:
        radius *= 1.5
        v, _ = enumerate_in_ball(b, radius)
        norms = np.sort(np.linalg.norm(v, axis=1))[1:]
        if norms.size >= count:
            return norms[:count]


class MinimalBravais(NamedTuple):
    dimension: int
    name: str
    density: float
    closed_form: float
    reciprocal_gram: np.ndarray
    shortest_norm: float

    @property
    def relative_error(self) -> float:
        return abs(self.density - self.closed_form) / self.closed_form


def _identify(basis: LatticeBasis, dimension: int) -> str:
    candidates = {1: ["chain"], 2: ["triangular", "square"], 3: ["bcc", "fcc", "sc", "sh", "hcp"]}[dimension]
    target = shell_norms(basis.generators) * basis.density ** (1.0 / dimension)
    best, err = "unknown", math.inf
    for name in candidates:
        ref = named_lattice(name)
        if ref.n_offsets != 1:
            continue
        norms = shell_norms(ref.basis.generators) * ref.basis.density ** (1.0 / dimension)
        e = float(np.max(np.abs(norms - target) / target))
        if e < err:
            best, err = name, e
    return best if err < 1e-4 else "unknown"


def minimal_bravais_check(dimension: int, cutoff: float, restarts: int = 64,
                          seed: int = 0) -> MinimalBravais:
    """Minimise ``rho(B) = |det b| / (2 pi)^d`` over reciprocal bases subject to
    ``|n . b| >= K0`` for all small integer ``n``, from random starts, and name
    the winning direct lattice.

    The reciprocal basis is parameterised by its Cholesky factor (positive
    diagonal), which keeps the Gram matrix positive definite.
    """
    d = int(dimension)
    if d not in (1, 2, 3):
        raise InvalidParameter("dimension must be 1, 2 or 3")
    if d == 1:
        rho = cutoff / TWO_PI
        return MinimalBravais(1, "chain", rho, threshold_closed_form("chain", cutoff),
                              np.array([[cutoff ** 2]]), cutoff)
    rng = np.random.default_rng(seed)
    ns = _box(np.full(d, 2))
    ns = ns[np.any(ns != 0, axis=1)]
    ns = ns[[tuple(n) > tuple(-n) for n in ns]]  # one of each +/- pair
    tril = np.tril_indices(d)
    diag = [i for i, (r, c) in enumerate(zip(*tril)) if r == c]

    def unpack(p):
        lower = np.zeros((d, d))
        vals = p.copy()
        vals[diag] = np.exp(vals[diag])
        lower[tril] = vals
        return lower

    def objective(p):
        return float(np.sum(p[diag]))  # log det(L) = 0.5 log det(G)

    def grad(p):
        g = np.zeros_like(p)
        g[diag] = 1.0
        return g

    def cons(p):
        v = ns @ unpack(p)  # rows of L are reciprocal generators: G = L L^T
        return np.einsum("ij,ij->i", v, v) / cutoff ** 2 - 1.0

    best = None
    for _ in range(restarts):
        b0 = rng.normal(size=(d, d))
        red, _u = reduce_basis(b0)
        red *= 1.5 * cutoff / shortest_vector(red)[0]
        lower = np.linalg.cholesky(red @ red.T)
        p0 = lower[tril].copy()
        p0[diag] = np.log(p0[diag])
        with np.errstate(all="ignore"):
            res = minimize(objective, p0, jac=grad, method="SLSQP",
                           constraints=[{"type": "ineq", "fun": cons}],
                           options={"maxiter": 500, "ftol": 1e-15})
        if not np.all(np.isfinite(res.x)) or np.max(np.abs(res.x)) > 50:
            continue
        b = unpack(res.x)
        try:
            q = shortest_vector(b)[0]
        except (DegenerateBasis, InvalidParameter, ValueError):
            continue
        b = b * cutoff / q  # enforce q = K0 exactly for the reported point
        rho = abs(np.linalg.det(b)) / TWO_PI ** d
        if best is None or rho < best[0]:
            best = (rho, b)
    if best is None:
        raise OptimizerFailed("no restart produced a valid lattice")
    rho, b = best
    q = shortest_vector(b)[0]
    if abs(q - cutoff) > 1e-9 * cutoff:
        raise OptimizerFailed(f"constraint q = K0 violated: q = {q}")
    direct = LatticeBasis(TWO_PI * np.linalg.inv(b).T)
    name = _identify(direct, d)
    closed = threshold_closed_form({2: "triangular", 3: "bcc"}[d], cutoff)
    return MinimalBravais(d, name, float(rho), closed, b @ b.T, q)


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

def config_to_dict(config: PeriodicConfiguration) -> dict:
    out = {"dimension": config.dimension, "generators": config.basis.generators.tolist(),
           "offsets": config.offsets.tolist()}
    if config.name:
        out["name"] = config.name
    return out


def config_from_dict(spec: dict) -> PeriodicConfiguration:
    """Lattice definition: ``{dimension, generators, offsets, name?}``, or a
    named lattice ``{name, scale? | density?, c_over_a?}``."""
    if "generators" in spec:
        basis = LatticeBasis(spec["generators"])
        if "dimension" in spec and int(spec["dimension"]) != basis.dimension:
            raise InvalidParameter("dimension does not match generators")
        return PeriodicConfiguration(basis, spec.get("offsets", np.zeros((1, basis.dimension))),
                                     spec.get("name"))
    config = named_lattice(spec["name"], float(spec.get("scale", 1.0)), spec.get("c_over_a"))
    if "density" in spec:
        config = scale_to_density(config, float(spec["density"]))
    return config


def load_config(path) -> PeriodicConfiguration:
    with open(path) as fh:
        return config_from_dict(json.load(fh))


def write_shells_csv(path, basis: LatticeBasis, radius: float) -> None:
    """Reciprocal shells inside ``radius``: ``|k|``, multiplicity, coefficients."""
    vectors, coeffs = enumerate_reciprocal_in_ball(basis, radius)
    norms = np.linalg.norm(vectors, axis=1)
    keys = np.round(norms / max(radius, 1e-300), 10)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["k_norm", "multiplicity", "coefficients"])
        for key in np.unique(keys):
            sel = keys == key
            w.writerow([repr(float(norms[sel][0])), int(sel.sum()),
                        " ".join("(" + ",".join(str(int(c)) for c in n) + ")" for n in coeffs[sel])])
