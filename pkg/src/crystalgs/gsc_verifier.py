"""Randomised checks that admissible periodic configurations are ground states.

Nothing here is a proof: each routine samples perturbations, deformations or
competitors and reports the worst energy difference it saw.
"""
from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np
from scipy.linalg import expm
from scipy.spatial import cKDTree

from .energy_engine import (
    as_potential,
    box_energy,
    energy_density,
    mu_lambda,
    realspace_tail_bound,
    union_field,
)
from .errors import HypothesisViolation, InvalidParameter, WindowTooSmall
from .lattice_algebra import (
    TWO_PI,
    LatticeBasis,
    PeriodCell,
    PeriodicConfiguration,
    enumerate_in_ball,
    named_lattice,
    reduce_basis,
    scale_to_density,
    threshold_closed_form,
)

GRAND_FLOOR = 1e-9


def nearest_neighbor_distance(config: PeriodicConfiguration) -> float:
    """Smallest distance between two distinct points of ``X``."""
    red, _ = reduce_basis(config.basis.generators)
    u = config.offsets @ np.linalg.inv(red)
    diff = u[None, :, :] - u[:, None, :]
    diff = (diff - np.round(diff)) @ red
    reach = float(np.min(np.linalg.norm(red, axis=1))) + float(np.max(np.linalg.norm(diff, axis=-1)))
    t, _ = enumerate_in_ball(red, reach, strict=False)
    dist = np.linalg.norm(diff[:, :, None, :] + t[None, None, :, :], axis=-1)
    return float(dist[dist > 1e-12 * reach].min())


# ---------------------------------------------------------------------------
# perturbation trials in a period cell
# ---------------------------------------------------------------------------

CANONICAL_MIX = (("displace", 0.4), ("cluster", 0.2), ("teleport", 0.2), ("collapse", 0.2))
GRAND_MIX = (("displace", 0.4), ("cluster", 0.2), ("teleport", 0.2), ("insert_delete", 0.2))


@dataclass
class PerturbationTrial:
    index: int
    seed: list
    kind: str
    delta_n: int
    moved: int
    gap: float

    def to_json(self) -> str:
        return json.dumps(asdict(self))


@dataclass
class PerturbationResult:
    mode: str
    mu: float | None
    mu_lambda: float | None
    n_reference: int
    volume: float
    tolerance: float
    trials: list[PerturbationTrial] = field(repr=False)

    @property
    def worst_gap(self) -> float:
        return min((t.gap for t in self.trials), default=0.0)

    @property
    def passed(self) -> bool:
        return self.worst_gap >= -self.tolerance

    def counts(self) -> dict:
        out: dict = {}
        for t in self.trials:
            out[t.kind] = out.get(t.kind, 0) + 1
        return out

    def summary(self) -> dict:
        return {"mode": self.mode, "mu": self.mu, "mu_lambda": self.mu_lambda,
                "n_reference": self.n_reference, "trials": len(self.trials),
                "worst_gap": self.worst_gap, "tolerance": self.tolerance,
                "passed": self.passed, "kinds": self.counts()}

    def write_jsonl(self, path) -> None:
        with open(path, "w") as fh:
            for t in self.trials:
                fh.write(t.to_json() + "\n")

    def write_summary_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["kind", "count", "min_gap", "max_gap"])
            for kind in sorted(self.counts()):
                gaps = [t.gap for t in self.trials if t.kind == kind]
                w.writerow([kind, len(gaps), repr(min(gaps)), repr(max(gaps))])


class _CellState:
    """Structure factors of the reference configuration on in-ball dual
    vectors, so a trial only pays for the particles it changes."""

    def __init__(self, pot, cell: PeriodCell, frac: np.ndarray):
        self.cell = cell
        self.frac = frac
        ref = box_energy(pot, cell, frac, fractional=True)
        keep = ref.k_norms > 0
        self.labels = ref.labels[keep].astype(float)
        self.weights = ref.phi_hat[keep]
        self.sum_weights = math.fsum(ref.phi_hat)
        self.phi_hat0 = pot.phi_hat_at_zero
        phase = TWO_PI * (self.labels @ frac.T)
        self.s = np.cos(phase).sum(axis=1) + 1j * np.sin(phase).sum(axis=1)
        self.structure = ref.structure_term
        self.energy = ref.energy

    def _plane_waves(self, frac: np.ndarray) -> np.ndarray:
        if frac.size == 0:
            return np.zeros(len(self.labels), dtype=complex)
        phase = TWO_PI * (self.labels @ frac.T)
        return np.cos(phase).sum(axis=1) + 1j * np.sin(phase).sum(axis=1)

    def constant(self, n: int) -> float:
        return n / (2.0 * self.cell.volume) * (n * self.phi_hat0 - self.sum_weights)

    def gap(self, removed: np.ndarray, added: np.ndarray, mu_l: float) -> float:
        s = self.s - self._plane_waves(self.frac[removed]) + self._plane_waves(added)
        structure = math.fsum(self.weights * (s.real ** 2 + s.imag ** 2)) / (2.0 * self.cell.volume)
        n_x = self.frac.shape[0]
        n_r = n_x - len(removed) + added.shape[0]
        return math.fsum([structure, -self.structure, self.constant(n_r), -self.constant(n_x),
                          -mu_l * (n_r - n_x)])


def _min_image(cell: PeriodCell, frac: np.ndarray, origin: np.ndarray) -> np.ndarray:
    d = frac - origin
    return (d - np.round(d)) @ cell.generators


def _draw_trial(kind: str, rng: np.random.Generator, cell: PeriodCell, frac: np.ndarray,
                sigma: float, spacing: float) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(removed indices, added fractional points)``."""
    n, d = frac.shape
    inv = np.linalg.inv(cell.generators)
    if kind == "displace":
        i = int(rng.integers(n))
        new = frac[i] + rng.normal(0.0, sigma, d) @ inv
        return np.array([i]), (new - np.floor(new))[None, :]
    if kind == "teleport":
        i = int(rng.integers(n))
        return np.array([i]), rng.random((1, d))
    if kind == "cluster":
        c = int(rng.integers(n))
        radius = spacing * rng.uniform(1.0, 2.0)
        idx = np.flatnonzero(np.linalg.norm(_min_image(cell, frac, frac[c]), axis=1) <= radius)
        shift = rng.normal(0.0, sigma, d) @ inv
        new = frac[idx] + shift
        return idx, new - np.floor(new)
    if kind == "collapse":
        c = int(rng.integers(n))
        dist = np.linalg.norm(_min_image(cell, frac, frac[c]), axis=1)
        m = int(rng.integers(2, min(5, n) + 1))
        idx = np.argsort(dist, kind="stable")[:m]
        new = frac[c] + rng.normal(0.0, 0.05 * sigma, (m, d)) @ inv
        return idx, new - np.floor(new)
    if kind == "insert_delete":
        if rng.random() < 0.5 or n == 0:
            return np.array([], dtype=int), rng.random((1, d))
        return np.array([int(rng.integers(n))]), np.zeros((0, d))
    raise InvalidParameter(f"unknown trial kind {kind!r}")


def _pick_kind(rng: np.random.Generator, mix) -> str:
    x = rng.random()
    acc = 0.0
    for kind, p in mix:
        acc += p
        if x < acc:
            return kind
    return mix[-1][0]


def perturbation_test(potential, config: PeriodicConfiguration, multipliers=(3, 3, 3),
                      mode: str = "canonical", mu: float | None = None, trials: int = 10_000,
                      seed: int = 0, workers: int = 1, check_hypotheses: bool = True,
                      floor_scale: float = GRAND_FLOOR) -> PerturbationResult:
    """Sample bounded perturbations ``R`` of ``X cap Lambda`` and record
    ``[U(R) - mu_L N_R] - [U(X) - mu_L N_X]`` (``mu_L = 0`` in canonical mode).

    Each trial draws from its own generator ``default_rng([seed, index])`` so
    the log does not depend on ``workers``.  The tolerance is
    ``floor_scale * N * |phi(0)|``."""
    pot = as_potential(potential)
    if mode not in ("canonical", "grand"):
        raise InvalidParameter(f"mode must be 'canonical' or 'grand', got {mode!r}")
    d = config.dimension
    mult = (int(multipliers),) * d if np.ndim(multipliers) == 0 else tuple(multipliers)
    cell = PeriodCell(config.basis, mult)
    a, b = pot.phi_hat_at_zero, pot.phi_at_zero
    if check_hypotheses and not config.is_admissible(pot.cutoff):
        raise HypothesisViolation(f"q = {config.q:.6g} is below K0 = {pot.cutoff:.6g}")
    mu_l = 0.0
    if mode == "grand":
        if mu is None:
            mu = a * config.density - 0.5 * b
        if check_hypotheses:
            if a <= 0:
                raise HypothesisViolation("grand mode needs phi_hat(0) > 0")
            want = (mu + 0.5 * b) / a
            if abs(want - config.density) > 1e-9 * config.density:
                raise HypothesisViolation(
                    f"density {config.density:.12g} differs from (mu + phi(0)/2)/phi_hat(0) = {want:.12g}")
        mu_l = mu_lambda(pot, cell, mu)
    frac = cell.configuration_points(config)
    state = _CellState(pot, cell, frac)
    spacing = nearest_neighbor_distance(config)
    sigma = 0.5 * spacing
    mix = CANONICAL_MIX if mode == "canonical" else GRAND_MIX

    def run(index: int) -> PerturbationTrial:
        rng = np.random.default_rng([seed, index])
        kind = _pick_kind(rng, mix)
        removed, added = _draw_trial(kind, rng, cell, frac, sigma, spacing)
        gap = state.gap(removed, added, mu_l)
        return PerturbationTrial(index, [seed, index], kind, int(added.shape[0] - removed.size),
                                 int(max(removed.size, added.shape[0])), gap)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            log = list(pool.map(run, range(trials)))
    else:
        log = [run(i) for i in range(trials)]
    n = frac.shape[0]
    scale = n * abs(b) if b != 0 else n * a / cell.volume
    return PerturbationResult(mode, mu, mu_l if mode == "grand" else None, n, cell.volume,
                              floor_scale * scale, log)


def predicted_particle_gap(potential, config: PeriodicConfiguration, multipliers, mu: float,
                           delta_n: int, structure: float = 0.0) -> float:
    """Closed-form grand-canonical gap for a trial with ``delta_n`` extra particles
    and nonzero-``k`` structure energy ``structure``:
    ``structure + dn [rho phi_hat(0) - mu - phi(0)/2] + dn^2 phi_hat(0) / 2V``."""
    pot = as_potential(potential)
    cell = PeriodCell(config.basis, multipliers)
    a, b = pot.phi_hat_at_zero, pot.phi_at_zero
    return math.fsum([structure, delta_n * (config.density * a - mu - 0.5 * b),
                      delta_n ** 2 * a / (2.0 * cell.volume)])


# ---------------------------------------------------------------------------
# volume-preserving deformations
# ---------------------------------------------------------------------------

@dataclass
class DeformationSample:
    matrix: np.ndarray
    determinant: float
    q: float
    admissible: bool
    energy_density: float
    excess: float

    def to_dict(self) -> dict:
        out = asdict(self)
        out["matrix"] = self.matrix.tolist()
        return out


@dataclass
class DeformationScan:
    plateau: float
    samples: list[DeformationSample] = field(repr=False)
    rtol: float = 1e-12

    @property
    def admissible(self) -> list[DeformationSample]:
        return [s for s in self.samples if s.admissible]

    @property
    def max_plateau_deviation(self) -> float:
        return max((abs(s.excess) for s in self.admissible), default=0.0) / abs(self.plateau)

    @property
    def min_inadmissible_excess(self) -> float | None:
        vals = [s.excess for s in self.samples if not s.admissible]
        return min(vals) if vals else None

    @property
    def passed(self) -> bool:
        low = self.min_inadmissible_excess
        return self.max_plateau_deviation <= self.rtol and (low is None or low >= -self.rtol * abs(self.plateau))


def unimodular_step(rng: np.random.Generator, d: int, step: float) -> np.ndarray:
    """``exp(A)`` for a random traceless ``A`` with ``Normal(0, step^2)`` entries."""
    a = rng.normal(0.0, step, (d, d))
    a -= np.trace(a) / d * np.eye(d)
    return expm(a)


def _project_unimodular(m: np.ndarray) -> np.ndarray:
    det = np.linalg.det(m)
    return m / abs(det) ** (1.0 / m.shape[0])


def uniaxial_deformation(direction, factor: float) -> np.ndarray:
    """Volume-preserving map scaling reciprocal components along ``direction``
    by ``factor`` (real space stretched by ``1/factor`` there)."""
    u = np.asarray(direction, dtype=float)
    u = u / np.linalg.norm(u)
    d = u.size
    proj = np.outer(u, u)
    if d == 1:
        raise InvalidParameter("no volume-preserving deformation in one dimension")
    return (1.0 / factor) * proj + factor ** (1.0 / (d - 1)) * (np.eye(d) - proj)


def deform(potential, config: PeriodicConfiguration, matrix) -> DeformationSample:
    pot = as_potential(potential)
    m = np.asarray(matrix, dtype=float)
    x = config.transformed(m)
    rep = energy_density(pot, x)
    return DeformationSample(m, float(np.linalg.det(m)), x.q, x.is_admissible(pot.cutoff),
                             rep.energy_density, rep.energy_density - rep.plateau)


def deformation_scan(potential, config: PeriodicConfiguration, samples: int = 1000,
                     step: float = 0.02, seed: int = 0, walk_length: int = 50) -> DeformationScan:
    """Random walks in the determinant-one group starting at the identity;
    each step is recorded as one sample.  A fresh walk starts every
    ``walk_length`` steps."""
    pot = as_potential(potential)
    rng = np.random.default_rng(seed)
    d = config.dimension
    plateau = energy_density(pot, config).plateau
    out = [deform(pot, config, np.eye(d))]
    m = np.eye(d)
    for i in range(1, samples):
        if i % walk_length == 0:
            m = np.eye(d)
        m = _project_unimodular(unimodular_step(rng, d, step) @ m)
        out.append(deform(pot, config, m))
    return DeformationScan(plateau, out)


# ---------------------------------------------------------------------------
# uniqueness at the threshold density
# ---------------------------------------------------------------------------

_REFERENCE = {1: "chain", 2: "triangular", 3: "bcc"}
_NAMED_COMPETITORS = {1: (), 2: ("square",), 3: ("fcc", "sc", "sh", "hcp")}


@dataclass
class Competitor:
    name: str
    n_offsets: int
    q: float
    energy_density: float
    gap: float
    relative_gap: float


@dataclass
class ThresholdOrdering:
    dimension: int
    density: float
    reference: str
    reference_energy: float
    competitors: list[Competitor]

    @property
    def min_gap(self) -> float:
        return min((c.gap for c in self.competitors), default=math.inf)

    @property
    def min_relative_gap(self) -> float:
        return min((c.relative_gap for c in self.competitors), default=math.inf)

    def passed(self, margin: float = 0.0) -> bool:
        return all(c.relative_gap > margin for c in self.competitors)

    def to_dict(self) -> dict:
        return asdict(self)


def random_bravais(rng: np.random.Generator, d: int, min_condition: float = 0.2) -> LatticeBasis:
    """Random lattice basis with rows well away from degenerate."""
    while True:
        a = rng.normal(size=(d, d))
        s = np.linalg.svd(a, compute_uv=False)
        if s[-1] / s[0] > min_condition:
            return LatticeBasis(a)


def _is_reference_shape(basis: LatticeBasis, d: int, cutoff: float) -> bool:
    cfg = scale_to_density(PeriodicConfiguration(basis, np.zeros((1, d))),
                           threshold_closed_form(_REFERENCE[d], cutoff))
    return cfg.is_admissible(cutoff)


def default_competitors(d: int, cutoff: float, n_random: int = 20, n_pairs: int = 5,
                        seed: int = 0) -> list[tuple[str, PeriodicConfiguration]]:
    """Named lattices other than the threshold lattice, random Bravais
    lattices (none in 1D) and random two-point configurations."""
    rng = np.random.default_rng(seed)
    out = [(name, named_lattice(name)) for name in _NAMED_COMPETITORS[d]]
    if d == 1:
        n_random = 0  # every 1D lattice is the chain after rescaling
    while sum(1 for n, _ in out if n.startswith("random-bravais")) < n_random:
        b = random_bravais(rng, d)
        if not _is_reference_shape(b, d, cutoff):
            out.append((f"random-bravais-{len(out)}", PeriodicConfiguration(b, np.zeros((1, d)))))
    for i in range(n_pairs):
        b = random_bravais(rng, d)
        y = rng.random(d) @ b.generators
        out.append((f"random-pair-{i}", PeriodicConfiguration(b, np.vstack([np.zeros(d), y]))))
    return out


def uniqueness_at_threshold(potential, dimension: int | None = None,
                            competitors: Sequence[tuple[str, PeriodicConfiguration]] | None = None,
                            n_random: int = 20, seed: int = 0,
                            check_positive: bool = True) -> ThresholdOrdering:
    """Energy densities at ``rho_d`` of competitors against the threshold lattice."""
    pot = as_potential(potential)
    d = dimension or pot.dimension
    if d != pot.dimension:
        raise InvalidParameter("dimension does not match the potential")
    k0 = pot.cutoff
    if check_positive:
        ks = np.linspace(0.0, k0, 2001)[1:-1]
        if np.any(np.asarray(pot.phi_hat(ks)) <= 0):
            raise HypothesisViolation("phi_hat must be strictly positive on (0, K0)")
    rho = threshold_closed_form(_REFERENCE[d], k0)
    ref = energy_density(pot, scale_to_density(named_lattice(_REFERENCE[d]), rho)).energy_density
    if competitors is None:
        competitors = default_competitors(d, k0, n_random, seed=seed)
    rows = []
    for name, cfg in competitors:
        c = scale_to_density(cfg, rho)
        e = energy_density(pot, c).energy_density
        rows.append(Competitor(name, c.n_offsets, c.q, e, e - ref, (e - ref) / abs(ref)))
    return ThresholdOrdering(d, rho, _REFERENCE[d], ref, rows)


# ---------------------------------------------------------------------------
# finite windows in real space
# ---------------------------------------------------------------------------

def points_in_ball(config: PeriodicConfiguration, radius: float, center=None) -> np.ndarray:
    """Points of ``X`` with ``|x - center| < radius``."""
    d = config.dimension
    c = np.zeros(d) if center is None else np.asarray(center, dtype=float)
    red, _ = reduce_basis(config.basis.generators)
    reach = radius + float(np.max(np.linalg.norm(config.offsets, axis=1))) + float(np.linalg.norm(c))
    t, _ = enumerate_in_ball(red, reach, strict=False)
    pts = (t[None, :, :] + config.offsets[:, None, :]).reshape(-1, d)
    return pts[np.linalg.norm(pts - c, axis=1) < radius]


class _PairSums:
    """Truncated real-space pair sums with a spline of ``phi``."""

    def __init__(self, pot, cutoff_radius: float):
        self.pot = pot
        self.rc = cutoff_radius
        self.phi = pot.spline(cutoff_radius * 1.01, points_per_wavelength=256)

    def self_energy(self, pts: np.ndarray) -> float:
        if len(pts) < 2:
            return 0.0
        tree = cKDTree(pts)
        pairs = tree.query_pairs(self.rc, output_type="ndarray")
        if len(pairs) == 0:
            return 0.0
        r = np.linalg.norm(pts[pairs[:, 0]] - pts[pairs[:, 1]], axis=1)
        return float(np.sum(self.phi(r)))

    def cross_energy(self, a: np.ndarray, b: np.ndarray) -> float:
        if len(a) == 0 or len(b) == 0:
            return 0.0
        m = cKDTree(a).sparse_distance_matrix(cKDTree(b), self.rc, output_type="ndarray")
        r = m["v"]
        r = r[r > 0]
        return float(np.sum(self.phi(r)))


@dataclass
class WindowGap:
    radius: float
    volume: float
    n_x: int
    n_y: int
    gap: float
    tail: float

    @property
    def gap_per_volume(self) -> float:
        return self.gap / self.volume


@dataclass
class GlobalMinimality:
    expected: float
    windows: list[WindowGap]
    fitted: float

    @property
    def relative_error(self) -> float:
        if self.expected == 0:
            return abs(self.fitted)
        return abs(self.fitted - self.expected) / abs(self.expected)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["relative_error"] = self.relative_error
        return out


def _ball_volume(d: int, r: float) -> float:
    return math.pi ** (d / 2) / math.gamma(d / 2 + 1) * r ** d


def global_minimality_check(potential, x: PeriodicConfiguration, y: PeriodicConfiguration,
                            radii: Sequence[float], cutoff_radius: float | None = None,
                            centers: int = 1, seed: int = 0,
                            require_resolved: bool = False) -> GlobalMinimality:
    """Compare ``U(X cap W | X minus W)`` and ``U(Y cap W | X minus W)`` on balls
    ``W`` of the given radii.  The gap ``U(X...) - U(Y...)`` should grow like
    ``V [e(X) - e(Y)]``; the coefficient is fitted together with a surface term
    ``V^((d-1)/d)``.

    With ``centers > 1`` each gap is averaged over balls centred at random
    points of a primitive cell of ``X``, which smooths the surface term.

    With ``require_resolved`` a :class:`WindowTooSmall` is raised when the
    truncation estimate at the largest window is not below ``|gap|``."""
    pot = as_potential(potential)
    if abs(x.density - y.density) > 1e-9 * x.density:
        raise HypothesisViolation("X and Y must have equal density")
    d = pot.dimension
    rc = cutoff_radius if cutoff_radius is not None else 40.0 / pot.cutoff
    sums = _PairSums(pot, rc)
    tail_density = realspace_tail_bound(pot, x.density, rc)
    rng = np.random.default_rng(seed)
    shifts = [np.zeros(d)] + [rng.random(d) @ x.basis.generators for _ in range(centers - 1)]
    rows = []
    for radius in radii:
        gaps, n_x, n_y = [], 0, 0
        for c in shifts:
            xin = points_in_ball(x, radius, c)
            yin = points_in_ball(y, radius, c)
            xall = points_in_ball(x, radius + rc, c)
            xout = xall[np.linalg.norm(xall - c, axis=1) >= radius]
            ux = sums.self_energy(xin) + sums.cross_energy(xin, xout)
            uy = sums.self_energy(yin) + sums.cross_energy(yin, xout)
            gaps.append(ux - uy)
            n_x, n_y = n_x + len(xin), n_y + len(yin)
        vol = _ball_volume(d, radius)
        # each configuration loses at most twice its per-volume tail
        tail = 4.0 * tail_density * _ball_volume(d, radius + rc)
        rows.append(WindowGap(float(radius), vol, round(n_x / len(shifts)), round(n_y / len(shifts)),
                              float(np.mean(gaps)), tail))
    vols = np.array([r.volume for r in rows])
    gaps = np.array([r.gap for r in rows])
    if len(rows) >= 2:
        design = np.stack([vols, vols ** ((d - 1) / d)], axis=1)
        coef = np.linalg.lstsq(design, gaps, rcond=None)[0]
        fitted = float(coef[0])
    else:
        fitted = float(gaps[0] / vols[0])
    expected = energy_density(pot, x).energy_density - energy_density(pot, y).energy_density
    if require_resolved and rows and abs(rows[-1].gap) <= rows[-1].tail:
        raise WindowTooSmall(f"tail estimate {rows[-1].tail:.3g} exceeds gap {rows[-1].gap:.3g}")
    return GlobalMinimality(expected, rows, fitted)


@dataclass
class UnionReport:
    field_reference: float
    field_max_deviation: float
    mu: float
    n_window: int
    worst_gap: float
    tolerance: float
    gaps: list[float] = field(repr=False)

    @property
    def passed(self) -> bool:
        return self.worst_gap >= -self.tolerance

    def to_dict(self) -> dict:
        out = asdict(self)
        out["passed"] = self.passed
        return out


def union_window_check(potential, configs: Sequence[PeriodicConfiguration], radius: float,
                       test_points: int = 100, trials: int = 200, seed: int = 0,
                       cutoff_radius: float | None = None) -> UnionReport:
    """Field and windowed grand-canonical stability for a union of admissible
    configurations.

    The field of the union at random points is compared with
    ``sum_i rho_i phi_hat(0)``.  Trials then move, insert or delete particles
    inside the window and record the change of
    ``U(R) + W(R, Z outside) - mu N_R`` with ``mu = rho_Z phi_hat(0) - phi(0)/2``."""
    pot = as_potential(potential)
    for c in configs:
        if not c.is_admissible(pot.cutoff):
            raise HypothesisViolation("every component must have q >= K0")
    d = pot.dimension
    rng = np.random.default_rng(seed)
    probe = (rng.random((test_points, d)) - 0.5) * 2.0 * radius
    fld = union_field(pot, configs, probe)
    rho = math.fsum(c.density for c in configs)
    mu = rho * pot.phi_hat_at_zero - 0.5 * pot.phi_at_zero
    rc = cutoff_radius if cutoff_radius is not None else 40.0 / pot.cutoff
    sums = _PairSums(pot, rc)
    pts = np.vstack([points_in_ball(c, radius + rc) for c in configs])
    inside = np.linalg.norm(pts, axis=1) < radius
    tree = cKDTree(pts)
    inner = np.flatnonzero(np.linalg.norm(pts, axis=1) < radius - rc)
    if inner.size == 0:
        raise WindowTooSmall("window must exceed the interaction cutoff")
    spacing = min(nearest_neighbor_distance(c) for c in configs)

    def local(i_removed: np.ndarray, added: np.ndarray) -> float:
        keep = np.ones(len(pts), dtype=bool)
        keep[i_removed] = False
        e = 0.0
        for i in i_removed:
            nb = np.array(tree.query_ball_point(pts[i], rc), dtype=int)
            nb = nb[keep[nb]]
            e -= float(np.sum(sums.phi(np.linalg.norm(pts[nb] - pts[i], axis=1))))
        e -= sums.self_energy(pts[i_removed])
        for yv in added:
            nb = np.array(tree.query_ball_point(yv, rc), dtype=int)
            nb = nb[keep[nb]]
            e += float(np.sum(sums.phi(np.linalg.norm(pts[nb] - yv, axis=1))))
        e += sums.self_energy(added)
        return e - mu * (len(added) - len(i_removed))

    gaps = []
    for t in range(trials):
        kind = t % 4
        i = int(rng.choice(inner))
        if kind == 0:
            gaps.append(local(np.array([i]), pts[i] + rng.normal(0.0, 0.5 * spacing, (1, d))))
        elif kind == 1:
            nb = np.array(tree.query_ball_point(pts[i], 1.5 * spacing), dtype=int)
            gaps.append(local(nb, pts[nb] + rng.normal(0.0, 0.5 * spacing, d)))
        elif kind == 2:
            gaps.append(local(np.array([], dtype=int), pts[i] + rng.uniform(-spacing, spacing, (1, d))))
        else:
            gaps.append(local(np.array([i]), np.zeros((0, d))))
    per_particle_tail = 2.0 * realspace_tail_bound(pot, rho, rc) / rho
    tol = 8.0 * per_particle_tail + 1e-9 * abs(pot.phi_at_zero)
    return UnionReport(fld.reference, fld.max_deviation, mu, int(inside.sum()), min(gaps), tol, gaps)
