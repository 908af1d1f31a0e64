"""Minimisation of the periodized box energy over particle positions.

Positions live in fractional cell coordinates in ``[0, 1)^d``; phases are
``2 pi n . x`` with integer dual labels ``n``.  The energy only involves dual
vectors inside the ball ``|k| < K0``, so energy and gradient are finite sums.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .energy_engine import as_potential, structure_factors
from .errors import InvalidParameter, OptimizerFailed
from .lattice_algebra import TWO_PI, PeriodCell, PeriodicConfiguration

METHODS = ("descent", "anneal")


class BoxModel:
    """Energy ``U_Lambda`` and its gradient for ``n`` particles in ``cell``."""

    def __init__(self, potential, cell: PeriodCell):
        self.pot = as_potential(potential)
        self.cell = cell
        k, n = cell.dual_in_ball(self.pot.cutoff)
        norms = np.linalg.norm(k, axis=1)
        w = np.asarray(self.pot.phi_hat(norms), dtype=float)
        self.sum_weights = math.fsum(w)
        keep = norms > 0
        self.labels = n[keep].astype(float)
        self.k = k[keep]
        self.weights = w[keep]
        self.volume = cell.volume

    def floor(self, n: int) -> float:
        return n / (2.0 * self.volume) * (n * self.pot.phi_hat_at_zero - self.sum_weights)

    def s(self, frac: np.ndarray) -> np.ndarray:
        return structure_factors(self.labels, frac)

    def structure_energy(self, s: np.ndarray) -> float:
        return math.fsum(self.weights * (s.real ** 2 + s.imag ** 2)) / (2.0 * self.volume)

    def energy(self, frac: np.ndarray) -> float:
        return self.structure_energy(self.s(frac)) + self.floor(frac.shape[0])

    def excess_and_gradient(self, frac: np.ndarray) -> tuple[float, np.ndarray]:
        """Energy above the floor (the nonzero-``k`` sum) and the Cartesian
        gradient ``-(1/V) sum_k phi_hat k Im(conj(S) e^{ik.r_j})``."""
        phase = TWO_PI * (self.labels @ frac.T)
        c, sn = np.cos(phase), np.sin(phase)
        s = c.sum(axis=1) + 1j * sn.sum(axis=1)
        # Im(conj(S) e^{i phase}) = Re(S) sin - Im(S) cos
        im = s.real[:, None] * sn - s.imag[:, None] * c
        grad = -((self.weights[:, None] * im).T @ self.k) / self.volume
        return self.structure_energy(s), grad

    def energy_and_gradient(self, frac: np.ndarray) -> tuple[float, np.ndarray]:
        excess, grad = self.excess_and_gradient(frac)
        return excess + self.floor(frac.shape[0]), grad


def gradient(potential, cell: PeriodCell, points, fractional: bool = False) -> np.ndarray:
    """Per-particle Cartesian gradient of ``U_Lambda``."""
    model = BoxModel(potential, cell)
    pts = np.asarray(points, dtype=float).reshape(-1, cell.dimension)
    frac = pts - np.floor(pts) if fractional else cell.to_fractional(pts)
    return model.energy_and_gradient(frac)[1]


def energy(potential, cell: PeriodCell, points, fractional: bool = False) -> float:
    model = BoxModel(potential, cell)
    pts = np.asarray(points, dtype=float).reshape(-1, cell.dimension)
    frac = pts - np.floor(pts) if fractional else cell.to_fractional(pts)
    return model.energy(frac)


# ---------------------------------------------------------------------------
# runs
# ---------------------------------------------------------------------------

@dataclass
class MinimizationRun:
    cell: PeriodCell = field(repr=False)
    n: int
    seed: int
    method: str
    initial: np.ndarray = field(repr=False)
    final: np.ndarray = field(repr=False)
    trajectory: list[float] = field(repr=False)
    floor: float
    final_energy: float
    residual: float
    iterations: int
    converged: bool
    floor_gap: float

    def to_dict(self) -> dict:
        return {"seed": self.seed, "N": self.n, "method": self.method,
                "cell": {"generators": self.cell.basis.generators.tolist(),
                         "multipliers": list(self.cell.multipliers)},
                "final_energy": self.final_energy, "floor": self.floor,
                "floor_gap": self.floor_gap, "residual": self.residual,
                "iterations": self.iterations, "converged": self.converged}

    def write_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)

    def write_positions_csv(self, path) -> None:
        cart = self.cell.to_cartesian(self.final)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            d = self.cell.dimension
            w.writerow([f"x{i}" for i in range(d)] + [f"u{i}" for i in range(d)])
            for c, f in zip(cart, self.final):
                w.writerow([repr(float(v)) for v in c] + [repr(float(v)) for v in f])

    def write_trajectory_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["step", "energy"])
            for i, e in enumerate(self.trajectory):
                w.writerow([i, repr(e)])


class _FloorGuard:
    """Checks every evaluated energy against the floor.  The optimiser works
    with the excess over the floor, which must never be negative."""

    def __init__(self, floor: float):
        self.floor = floor

    def __call__(self, excess: float) -> float:
        if excess < 0.0:
            raise OptimizerFailed(f"energy fell below the floor {self.floor!r} by {-excess!r}")
        return excess


def _wrap(frac: np.ndarray) -> np.ndarray:
    out = frac - np.floor(frac)
    out[out >= 1.0] = 0.0
    return out


def _descent(model: BoxModel, frac: np.ndarray, guard: _FloorGuard, max_iter: int,
             gtol: float, step0: float, trajectory: list[float]) -> tuple[np.ndarray, int, bool]:
    """Steepest descent with backtracking Armijo steps (factor 0.5) on the
    excess energy, which keeps full relative precision near the floor."""
    inv = np.linalg.inv(model.cell.generators)
    floor = model.floor(frac.shape[0])
    u, g = model.excess_and_gradient(frac)
    guard(u)
    trajectory.append(u + floor)
    gmax = float(np.max(np.abs(g))) if g.size else 0.0
    alpha = step0 / gmax if gmax > 0 else 0.0
    for it in range(max_iter):
        gmax = float(np.max(np.abs(g))) if g.size else 0.0
        if gmax < gtol:
            return frac, it, True
        g2 = float(np.sum(g * g))
        while True:
            trial = _wrap(frac - alpha * g @ inv)
            u_new, g_new = model.excess_and_gradient(trial)
            guard(u_new)
            if u_new <= u - 1e-4 * alpha * g2:
                break
            alpha *= 0.5
            if alpha * gmax < 1e-300:
                return frac, it, False
        frac, u, g = trial, u_new, g_new
        trajectory.append(u + floor)
        alpha *= 2.0
    gmax = float(np.max(np.abs(g))) if g.size else 0.0
    return frac, max_iter, gmax < gtol


def _anneal(model: BoxModel, frac: np.ndarray, rng: np.random.Generator, guard: _FloorGuard,
            sigma: float, trajectory: list[float], max_sweeps: int = 500) -> np.ndarray:
    """Metropolis single-particle moves; temperature x0.95 per sweep, stop when
    fewer than 5% of moves are accepted."""
    n, d = frac.shape
    inv = np.linalg.inv(model.cell.generators)
    s = model.s(frac)
    u = model.structure_energy(s)
    floor = model.floor(n)

    def plane(x):
        ph = TWO_PI * (model.labels @ x)
        return np.cos(ph) + 1j * np.sin(ph)

    probes = []
    for _ in range(20):
        i = int(rng.integers(n))
        x = _wrap(frac[i] + rng.normal(0.0, sigma, d) @ inv)
        probes.append(abs(model.structure_energy(s - plane(frac[i]) + plane(x)) - u))
    temp = max(float(np.mean(probes)), 1e-300)
    for _ in range(max_sweeps):
        accepted = 0
        for _ in range(n):
            i = int(rng.integers(n))
            x = _wrap(frac[i] + rng.normal(0.0, sigma, d) @ inv)
            s_new = s - plane(frac[i]) + plane(x)
            u_new = model.structure_energy(s_new)
            guard(u_new)
            if u_new <= u or rng.random() < math.exp(-(u_new - u) / temp):
                frac[i], s, u = x, s_new, u_new
                accepted += 1
        trajectory.append(u + floor)
        temp *= 0.95
        if accepted < 0.05 * n:
            break
    return frac


def minimize(potential, cell: PeriodCell, n: int, method: str = "descent", seed: int = 0,
             max_iter: int = 100_000, gtol: float | None = None, initial=None) -> MinimizationRun:
    """Minimise ``U_Lambda`` over ``n`` positions from a seeded random start.

    The run stops when the largest gradient component is below ``gtol``
    (default ``1e-10 phi_hat(0) N / V``) or after ``max_iter`` steps; in the
    latter case ``converged`` is False and the best positions are returned."""
    if n < 1:
        raise InvalidParameter("need at least one particle")
    if method not in METHODS:
        raise InvalidParameter(f"method must be one of {METHODS}, got {method!r}")
    model = BoxModel(potential, cell)
    rng = np.random.default_rng(seed)
    d = cell.dimension
    if initial is None:
        frac = rng.random((n, d))
    else:
        frac = _wrap(np.asarray(initial, dtype=float).reshape(n, d))
    start = frac.copy()
    floor = model.floor(n)
    guard = _FloorGuard(floor)
    if gtol is None:
        gtol = 1e-10 * model.pot.phi_hat_at_zero * n / model.volume
    spacing = (model.volume / n) ** (1.0 / d)
    trajectory: list[float] = []
    if method == "anneal":
        frac = _anneal(model, frac, rng, guard, 0.1 * spacing, trajectory)
    frac, iters, ok = _descent(model, frac, guard, max_iter, gtol, 0.1 * spacing, trajectory)
    s = model.s(frac)
    resid = float(np.max(s.real ** 2 + s.imag ** 2)) / n ** 2 if s.size else 0.0
    excess = guard(model.structure_energy(s))
    return MinimizationRun(cell, n, seed, method, start, frac, trajectory, floor,
                           floor + excess, resid, iters, ok, excess)


# ---------------------------------------------------------------------------
# structure-factor tables
# ---------------------------------------------------------------------------

@dataclass
class StructureFactorMap:
    k_norms: np.ndarray
    labels: np.ndarray
    s2: np.ndarray
    n: int

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["k_norm", "labels", "s2"])
            for k, lab, v in zip(self.k_norms, self.labels, self.s2):
                w.writerow([repr(float(k)), " ".join(str(int(x)) for x in lab), repr(float(v))])


def structure_factor_map(cell: PeriodCell, points, cutoff: float, fractional: bool = False) -> StructureFactorMap:
    """``|S(k)|^2`` for every dual-grid vector with ``|k| < cutoff``."""
    pts = np.asarray(points, dtype=float).reshape(-1, cell.dimension)
    frac = _wrap(pts) if fractional else cell.to_fractional(pts)
    k, labels = cell.dual_in_ball(cutoff)
    s = structure_factors(labels, frac)
    return StructureFactorMap(np.linalg.norm(k, axis=1), labels, s.real ** 2 + s.imag ** 2, frac.shape[0])


@dataclass
class FactorizationCheck:
    max_deviation: float
    n_lattice_points: int
    in_sublattice: int
    total: int


def factorization_check(cell: PeriodCell, config: PeriodicConfiguration, cutoff: float) -> FactorizationCheck:
    """Compare ``|S(k)|^2`` of ``X cap Lambda`` with ``N_B^2 |sum_j e^{ik.y_j}|^2``
    on ``B*`` and with 0 elsewhere on the dual grid.  The deviation is
    reported relative to ``N^2``."""
    frac = cell.configuration_points(config)
    sf = structure_factor_map(cell, frac, cutoff, fractional=True)
    mult = np.asarray(cell.multipliers)
    on_b = np.all(sf.labels % mult == 0, axis=1)
    coarse = sf.labels // mult
    y = structure_factors(coarse, config.fractional_offsets)
    nb = cell.n_lattice_points
    predicted = np.where(on_b, nb ** 2 * (y.real ** 2 + y.imag ** 2), 0.0)
    dev = float(np.max(np.abs(sf.s2 - predicted))) / sf.n ** 2 if sf.s2.size else 0.0
    return FactorizationCheck(dev, nb, int(on_b.sum()), int(on_b.size))
