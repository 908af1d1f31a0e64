"""Finite reciprocal-space energies for band-limited pair potentials.

Every sum over a dual lattice is restricted to the open ball ``|k| < K0``
because ``phi_hat`` vanishes outside it, so all quantities here are finite
sums computed exactly up to rounding.  Phases are evaluated from integer
labels and fractional coordinates (``k . r = 2 pi n . x``) to keep them exact
for points far from the origin.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import InvalidParameter, ToleranceUnreachable, Unsupported
from .lattice_algebra import (
    TWO_PI,
    PeriodCell,
    PeriodicConfiguration,
    enumerate_in_ball,
    reduce_basis,
)
from .spectral_profile import PairPotential, SpectralProfile, unit_sphere_area


def as_potential(potential) -> PairPotential:
    if isinstance(potential, PairPotential):
        return potential
    if isinstance(potential, SpectralProfile):
        return PairPotential(potential)
    raise InvalidParameter(f"expected a PairPotential or SpectralProfile, got {type(potential).__name__}")


def structure_factors(labels: np.ndarray, frac: np.ndarray) -> np.ndarray:
    """``S(k) = sum_j exp(2 pi i n . x_j)`` for every label row ``n``.

    The reduction over particles uses numpy's pairwise summation."""
    labels = np.atleast_2d(labels)
    frac = np.atleast_2d(frac)
    if frac.shape[0] == 0:
        return np.zeros(labels.shape[0], dtype=complex)
    phase = TWO_PI * (labels.astype(float) @ frac.T)
    return np.cos(phase).sum(axis=1) + 1j * np.sin(phase).sum(axis=1)


def _dual_ball(potential: PairPotential, cell: PeriodCell):
    k, n = cell.dual_in_ball(potential.cutoff)
    norms = np.linalg.norm(k, axis=1)
    return k, n, norms, np.asarray(potential.phi_hat(norms), dtype=float)


# ---------------------------------------------------------------------------
# periodized potential and box energy
# ---------------------------------------------------------------------------

def periodized_phi(potential, cell: PeriodCell, r) -> np.ndarray | float:
    """``phi_Lambda(r) = V^-1 sum_{k in Lambda*, |k| < K0} phi_hat(k) cos(k . r)``.

    ``r`` may be a single d-vector or an ``(m, d)`` array."""
    pot = as_potential(potential)
    r_arr = np.asarray(r, dtype=float)
    single = r_arr.ndim == 1
    x = np.linalg.solve(cell.generators.T, np.atleast_2d(r_arr).T).T
    _, n, _, w = _dual_ball(pot, cell)
    phase = TWO_PI * (x @ n.T.astype(float))
    out = (np.cos(phase) * w).sum(axis=1) / cell.volume
    return float(out[0]) if single else out


def periodized_phi_direct(potential, cell: PeriodCell, r, images: int) -> np.ndarray | float:
    """Real-space image sum ``sum_{|n_a| <= images} phi(|r + n . C|)`` with
    ``C`` the cell generators.  Slow; meant as a cross-check."""
    pot = as_potential(potential)
    r_arr = np.asarray(r, dtype=float)
    single = r_arr.ndim == 1
    pts = np.atleast_2d(r_arr)
    d = cell.dimension
    grid = np.stack(np.meshgrid(*[np.arange(-images, images + 1)] * d, indexing="ij"), -1).reshape(-1, d)
    shifts = grid @ cell.generators
    dist = np.linalg.norm(pts[:, None, :] + shifts[None, :, :], axis=-1)
    uniq, inv = np.unique(dist, return_inverse=True)
    vals = np.asarray(pot(uniq))[inv.reshape(dist.shape)]
    out = vals.sum(axis=1)
    return float(out[0]) if single else out


@dataclass
class BoxEnergy:
    """``U_Lambda(R)`` split into its structure-factor and constant parts."""

    energy: float
    structure_term: float
    constant_term: float
    n_particles: int
    volume: float
    k_norms: np.ndarray = field(repr=False)
    labels: np.ndarray = field(repr=False)
    phi_hat: np.ndarray = field(repr=False)
    s2: np.ndarray = field(repr=False)

    @property
    def floor(self) -> float:
        return self.constant_term

    def residual(self) -> float:
        """``max |S(k)|^2 / N^2`` over nonzero in-ball dual vectors."""
        mask = self.k_norms > 0
        if self.n_particles == 0 or not mask.any():
            return 0.0
        return float(self.s2[mask].max()) / self.n_particles ** 2


def box_floor(potential, cell: PeriodCell, n_particles: int) -> float:
    """``(N / 2V) [N phi_hat(0) - sum_{k in Lambda* cap ball} phi_hat(k)]``."""
    pot = as_potential(potential)
    _, _, _, w = _dual_ball(pot, cell)
    return n_particles / (2.0 * cell.volume) * (n_particles * pot.phi_hat_at_zero - math.fsum(w))


def box_energy(potential, cell: PeriodCell, points, fractional: bool = False) -> BoxEnergy:
    """``U_Lambda(R)`` via the finite dual sum.  Cartesian ``points`` are
    reduced into the cell first."""
    pot = as_potential(potential)
    pts = np.asarray(points, dtype=float).reshape(-1, cell.dimension)
    frac = pts - np.floor(pts) if fractional else cell.to_fractional(pts) if len(pts) else pts
    _, n, norms, w = _dual_ball(pot, cell)
    s = structure_factors(n, frac)
    s2 = s.real ** 2 + s.imag ** 2
    nonzero = norms > 0
    vol = cell.volume
    n_r = frac.shape[0]
    structure = math.fsum(w[nonzero] * s2[nonzero]) / (2.0 * vol)
    constant = n_r / (2.0 * vol) * (n_r * pot.phi_hat_at_zero - math.fsum(w))
    return BoxEnergy(structure + constant, structure, constant, n_r, vol, norms, n, w, s2)


def mu_lambda(potential, cell: PeriodCell, mu: float) -> float:
    """``mu + (phi(0) - V^-1 sum_{k in Lambda* cap ball} phi_hat(k)) / 2``."""
    pot = as_potential(potential)
    _, _, _, w = _dual_ball(pot, cell)
    return mu + 0.5 * (pot.phi_at_zero - math.fsum(w) / cell.volume)


# ---------------------------------------------------------------------------
# energy density of a periodic configuration
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ShellTerm:
    k_norm: float
    coefficients: tuple
    phi_hat: float
    weight: float
    contribution: float


@dataclass
class EnergyReport:
    energy_density: float
    density: float
    k0_term: float
    phi0_term: float
    shells: list[ShellTerm]
    phi_hat_at_zero: float
    phi_at_zero: float

    def parts(self) -> list[float]:
        return [self.k0_term, self.phi0_term] + [s.contribution for s in self.shells]

    @property
    def plateau(self) -> float:
        """``rho/2 [rho phi_hat(0) - phi(0)]``."""
        return 0.5 * self.density * (self.density * self.phi_hat_at_zero - self.phi_at_zero)

    @property
    def excess(self) -> float:
        return math.fsum(s.contribution for s in self.shells)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["shells"] = [dict(asdict(s), coefficients=list(s.coefficients)) for s in self.shells]
        out["plateau"] = self.plateau
        return out

    def write_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))

    def write_shell_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["k_norm", "coefficients", "phi_hat", "s2", "contribution"])
            for s in self.shells:
                w.writerow([repr(s.k_norm), " ".join(str(c) for c in s.coefficients),
                            repr(s.phi_hat), repr(s.weight), repr(s.contribution)])


def energy_density(potential, config: PeriodicConfiguration) -> EnergyReport:
    """``e(X) = rho_B^2/2 sum_{k in B*, |k| < K0} phi_hat(k) |sum_j e^{ik.y_j}|^2 - phi(0) rho / 2``."""
    pot = as_potential(potential)
    rho_b = config.basis.density
    k, n = enumerate_in_ball(config.reciprocal.generators, pot.cutoff)
    norms = np.linalg.norm(k, axis=1)
    w = np.asarray(pot.phi_hat(norms), dtype=float)
    s = structure_factors(n, config.fractional_offsets)
    s2 = s.real ** 2 + s.imag ** 2
    contrib = 0.5 * rho_b ** 2 * w * s2
    zero = norms == 0
    k0_term = float(contrib[zero].sum())
    rho = config.density
    phi0 = pot.phi_at_zero
    phi0_term = -0.5 * phi0 * rho
    shells = [ShellTerm(float(norms[i]), tuple(int(c) for c in n[i]), float(w[i]), float(s2[i]), float(contrib[i]))
              for i in np.flatnonzero(~zero)]
    total = math.fsum([k0_term, phi0_term] + [t.contribution for t in shells])
    return EnergyReport(total, rho, k0_term, phi0_term, shells, pot.phi_hat_at_zero, phi0)


def energy_density_from_box(potential, config: PeriodicConfiguration, multipliers) -> float:
    """``e(X)`` recomputed from ``U_Lambda(X cap Lambda)`` on a period cell:
    ``U/V + N phi_Lambda(0) / 2V - phi(0) rho / 2``."""
    pot = as_potential(potential)
    cell = PeriodCell(config.basis, multipliers)
    frac = cell.configuration_points(config)
    u = box_energy(pot, cell, frac, fractional=True)
    phi_l0 = periodized_phi(pot, cell, np.zeros(cell.dimension))
    n = frac.shape[0]
    return u.energy / cell.volume + n * phi_l0 / (2 * cell.volume) - 0.5 * pot.phi_at_zero * config.density


# ---------------------------------------------------------------------------
# real-space oracle
# ---------------------------------------------------------------------------

@dataclass
class RealSpaceEnergy:
    value: float
    tail_bound: float
    cutoff: float
    pairs: int
    distinct_distances: int


def decay_exponent(profile: SpectralProfile) -> float:
    """Power ``p`` with ``|phi(r)| = O(r^-p)``.

    For piecewise polynomial profiles it follows from the lowest derivative
    order ``m`` that jumps at a breakpoint (K0 included): ``p = (d+1)/2 + m``.
    Grid (mollified) profiles decay faster than any power; ``d + 1`` is returned
    as a conservative stand-in."""
    d = profile.dimension
    if profile.is_grid:
        return float(d + 1)
    breaks = profile.breakpoints
    pieces = list(profile.pieces) + [np.zeros(1)]
    m_min = None
    scale = max(1.0, max(float(np.max(np.abs(p))) for p in profile.pieces))
    for i, b in enumerate(breaks[1:]):
        left, right = pieces[i], pieces[i + 1]
        for m in range(0, max(len(left), len(right)) + 1):
            dl = np.polynomial.polynomial.polyder(left, m) if m < len(left) else np.zeros(1)
            dr = np.polynomial.polynomial.polyder(right, m) if m < len(right) else np.zeros(1)
            jump = abs(np.polynomial.polynomial.polyval(b, dl) - np.polynomial.polynomial.polyval(b, dr))
            if jump > 1e-9 * scale * max(1.0, b) ** m:
                m_min = m if m_min is None else min(m_min, m)
                break
    if m_min is None:
        return float("inf")
    return (d + 1) / 2.0 + m_min


def _covering_offsets(config: PeriodicConfiguration) -> np.ndarray:
    """Offset differences ``y_j - y_i`` folded near the origin."""
    red, _ = reduce_basis(config.basis.generators)
    u = config.offsets @ np.linalg.inv(red)
    diff = u[None, :, :] - u[:, None, :]
    diff = diff - np.round(diff)
    return diff @ red, red


def realspace_tail_bound(potential, density: float, cutoff_radius: float,
                         safety: float = 2.0) -> float:
    """Estimate of ``(1/2V) sum |phi|`` over pairs beyond ``cutoff_radius``.

    Long-range 3D profiles use ``|phi| <= C / r^4`` with ``C`` the largest
    ``r^4 |phi|`` on ``[20/K0, 200/K0]``.  Otherwise the running-maximum
    envelope of ``|phi|`` is integrated out to ``4 R`` and continued as
    ``r^-p`` with ``p`` from :func:`decay_exponent`."""
    pot = as_potential(potential)
    d = pot.dimension
    k0 = pot.cutoff
    sd = unit_sphere_area(d)
    pref = 0.5 * density ** 2 * sd * safety
    if pot.profile.supports_partial_integration:
        r = np.linspace(20.0 / k0, 200.0 / k0, 20000)
        c = max(float(np.max(r ** 4 * np.abs(pot(r)))), abs(pot.asymptotic_amplitude))
        return pref * c / cutoff_radius
    p = decay_exponent(pot.profile)
    if p <= d:
        raise ToleranceUnreachable(f"|phi| ~ r^-{p:g} is not summable in {d} dimensions")
    r_max = 4.0 * cutoff_radius
    r, env = pot.envelope(cutoff_radius, r_max)
    body = float(np.trapezoid(env * r ** (d - 1), r))
    rest = env[-1] * r_max ** d / (p - d) if math.isfinite(p) else 0.0
    return pref * (body + rest)


def realspace_energy_oracle(potential, config: PeriodicConfiguration, cutoff_radius: float,
                            tolerance: float | None = None) -> RealSpaceEnergy:
    """Direct pair sum ``(1/2V_B) sum_i sum_{x' != y_i, |x' - y_i| < R} phi``
    minus the self term, with a tail estimate from :func:`realspace_tail_bound`.

    Raises :class:`ToleranceUnreachable` if ``tolerance`` (relative) is given
    and the tail estimate exceeds it."""
    pot = as_potential(potential)
    diffs, red = _covering_offsets(config)
    reach = cutoff_radius + float(np.max(np.linalg.norm(diffs, axis=-1)))
    t, _ = enumerate_in_ball(red, reach, strict=False)
    disp = diffs[:, :, None, :] + t[None, None, :, :]
    dist = np.linalg.norm(disp, axis=-1).ravel()
    dist = dist[(dist > 0) & (dist < cutoff_radius)]
    key = np.round(dist, 12)
    uniq, counts = np.unique(key, return_counts=True)
    vals = np.asarray(pot(uniq), dtype=float)
    value = math.fsum(counts * vals) / (2.0 * config.basis.volume)
    tail = realspace_tail_bound(pot, config.density, cutoff_radius)
    if tolerance is not None and tail > tolerance * abs(value):
        raise ToleranceUnreachable(
            f"tail estimate {tail:.3g} exceeds {tolerance:g} relative at R={cutoff_radius:g}")
    return RealSpaceEnergy(value, tail, cutoff_radius, int(dist.size), int(uniq.size))


# ---------------------------------------------------------------------------
# external field
# ---------------------------------------------------------------------------

@dataclass
class FieldReport:
    values: np.ndarray
    reference: float

    @property
    def deviation(self) -> np.ndarray:
        return self.values - self.reference

    @property
    def max_deviation(self) -> float:
        return float(np.max(np.abs(self.deviation))) if self.values.size else 0.0


def external_field(potential, config: PeriodicConfiguration, r) -> FieldReport:
    """``U(r|X) = sum_{x in X} phi(r - x)`` evaluated on the primitive cell as
    ``V_B^-1 sum_{k in B*} phi_hat(k) sum_j cos(k . (r - y_j))``.  The reference
    value is ``rho phi_hat(0)``."""
    pot = as_potential(potential)
    pts = np.atleast_2d(np.asarray(r, dtype=float))
    x = config.basis.to_fractional(pts)
    _, n = enumerate_in_ball(config.reciprocal.generators, pot.cutoff)
    w = np.asarray(pot.phi_hat(np.linalg.norm(n @ config.reciprocal.generators, axis=1)), dtype=float)
    u = config.fractional_offsets
    rel = x[:, None, :] - u[None, :, :]
    phase = TWO_PI * np.einsum("kd,mjd->mjk", n.astype(float), rel)
    vals = (np.cos(phase).sum(axis=1) * w).sum(axis=1) / config.basis.volume
    return FieldReport(vals, config.density * pot.phi_hat_at_zero)


def union_field(potential, configs: Sequence[PeriodicConfiguration], r) -> FieldReport:
    """Field of a union of configurations: the sum of the individual fields."""
    reports = [external_field(potential, c, r) for c in configs]
    return FieldReport(np.sum([rep.values for rep in reports], axis=0),
                       math.fsum(rep.reference for rep in reports))


# ---------------------------------------------------------------------------
# thermodynamics
# ---------------------------------------------------------------------------

@dataclass
class Thermodynamics:
    phi_hat_at_zero: float
    phi_at_zero: float
    mu: float
    rho: float
    e_rho: float
    e_mu: float | None
    mu_lambda: float | None = None


def e_rho(rho: float, phi_hat0: float, phi0: float) -> float:
    return 0.5 * rho * (rho * phi_hat0 - phi0)


def e_mu(mu: float, phi_hat0: float, phi0: float) -> float:
    if phi_hat0 <= 0:
        raise Unsupported("e_mu is undefined when phi_hat(0) = 0")
    return -((mu + 0.5 * phi0) ** 2) / (2.0 * phi_hat0)


def thermodynamics(potential, rho: float | None = None, mu: float | None = None,
                   cell: PeriodCell | None = None) -> Thermodynamics:
    """Plateau energies at a given ``rho`` or ``mu`` (the other is derived from
    ``mu + phi(0)/2 = phi_hat(0) rho``)."""
    pot = as_potential(potential)
    a, b = pot.phi_hat_at_zero, pot.phi_at_zero
    if (rho is None) == (mu is None):
        raise InvalidParameter("give exactly one of rho and mu")
    if rho is None:
        if a <= 0:
            raise Unsupported("cannot infer rho from mu when phi_hat(0) = 0")
        rho = (mu + 0.5 * b) / a
    else:
        mu = a * rho - 0.5 * b
    emu = e_mu(mu, a, b) if a > 0 else None
    ml = mu_lambda(pot, cell, mu) if cell is not None else None
    return Thermodynamics(a, b, mu, rho, e_rho(rho, a, b), emu, ml)


@dataclass
class LegendreRow:
    given: float
    exact: float
    numeric: float
    argopt: float
    predicted: float
    resolution: float = 0.0

    @property
    def error(self) -> float:
        return abs(self.numeric - self.exact)

    @property
    def stationary(self) -> bool:
        """Whether the located optimiser agrees with the predicted one to
        within the flatness of the objective at rounding level."""
        return abs(self.argopt - self.predicted) <= self.resolution


@dataclass
class LegendreReport:
    phi_hat_at_zero: float
    phi_at_zero: float
    by_rho: list[LegendreRow]
    by_mu: list[LegendreRow]
    mu_step: float
    rho_step: float

    @property
    def max_error(self) -> float:
        return max((r.error for r in self.by_rho + self.by_mu), default=0.0)

    @property
    def max_stationarity_error(self) -> float:
        return max((abs(r.argopt - r.predicted) for r in self.by_rho + self.by_mu), default=0.0)

    @property
    def stationary(self) -> bool:
        return all(r.stationary for r in self.by_rho + self.by_mu)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["max_error"] = self.max_error
        out["max_stationarity_error"] = self.max_stationarity_error
        out["stationary"] = self.stationary
        return out


def _grid_optimum(f, lo: float, hi: float, points: int, maximize: bool,
                  rounds: int = 12) -> tuple[float, float, float]:
    """Optimum of ``f`` on a uniform grid over ``[lo, hi]``, re-gridded around
    the best node up to ``rounds`` times.  Returns ``(value, argopt, step)``."""
    for _ in range(rounds):
        x = np.linspace(lo, hi, points)
        v = f(x)
        i = int(np.argmax(v) if maximize else np.argmin(v))
        h = x[1] - x[0]
        lo, hi = x[max(i - 2, 0)], x[min(i + 2, points - 1)]
        if hi - lo <= 4.0 * np.spacing(max(abs(lo), abs(hi))):
            break
    return float(v[i]), float(x[i]), float(h)


def _flat_width(magnitude: float, curvature: float, step: float) -> float:
    # half-width over which a parabola of this curvature moves by less than a
    # few ulps of its largest term; the argopt cannot be located more finely
    return max(math.sqrt(2.0 * 16.0 * np.spacing(max(magnitude, 1.0)) / curvature), 2.0 * step)


def legendre_check(potential, rho_values, mu_range=None, rho_range=None,
                   grid_points: int = 2001, rounds: int = 12) -> LegendreReport:
    """Check ``e_rho = max_mu (e_mu + mu rho)`` and ``e_mu = min_rho (e_rho - mu rho)``
    numerically, with the optimiser compared to ``mu = phi_hat(0) rho - phi(0)/2``.

    Each optimum is located on a ``grid_points`` grid over the given range and
    then on successively finer grids around the best node.  ``potential`` may
    also be a ``(phi_hat(0), phi(0))`` pair.  The ``mu`` values checked are the
    ones linked to ``rho_values``."""
    if isinstance(potential, tuple):
        a, b = (float(v) for v in potential)
    else:
        pot = as_potential(potential)
        a, b = pot.phi_hat_at_zero, pot.phi_at_zero
    if a <= 0:
        raise Unsupported("Legendre check needs phi_hat(0) > 0")
    rhos = np.asarray(rho_values, dtype=float)
    mus = a * rhos - 0.5 * b
    if mu_range is None:
        pad = max(1.0, float(np.ptp(mus)), abs(b))
        mu_range = (float(mus.min()) - pad, float(mus.max()) + pad)
    if rho_range is None:
        pad = max(1.0, float(np.ptp(rhos)))
        rho_range = (float(rhos.min()) - pad, float(rhos.max()) + pad)
    by_rho, by_mu = [], []
    mu_step = rho_step = 0.0
    for rho, mu in zip(rhos, mus):
        val, arg, h = _grid_optimum(lambda m: -((m + 0.5 * b) ** 2) / (2.0 * a) + m * rho,
                                    *mu_range, grid_points, True, rounds)
        mu_step = max(mu_step, h)
        size = max((arg + 0.5 * b) ** 2 / (2.0 * a), abs(arg * rho))
        by_rho.append(LegendreRow(float(rho), e_rho(rho, a, b), val, arg, float(mu),
                                  _flat_width(size, 1.0 / a, h)))
        val, arg, h = _grid_optimum(lambda r: 0.5 * r * (r * a - b) - mu * r,
                                    *rho_range, grid_points, False, rounds)
        rho_step = max(rho_step, h)
        size = max(0.5 * a * arg ** 2, abs(0.5 * b * arg), abs(mu * arg))
        by_mu.append(LegendreRow(float(mu), e_mu(mu, a, b), val, arg, float(rho),
                                 _flat_width(size, a, h)))
    return LegendreReport(a, b, by_rho, by_mu, mu_step, rho_step)
