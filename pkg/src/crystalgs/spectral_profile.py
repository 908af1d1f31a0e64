"""Band-limited spectral profiles and their real-space pair potentials.

A profile stores the radial Fourier transform ``phi_hat(|k|)`` on ``[0, K0]``;
it is identically zero for ``|k| >= K0``.  Everything else in the package
(energies, fields, optimisation) reads the interaction from a profile.

Conventions::

    phi_hat(k) = int phi(r) exp(-i k.r) d^d r
    phi(r)     = (2 pi)^-d int phi_hat(k) exp(i k.r) d^d k
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from functools import cached_property, lru_cache
from typing import Callable, NamedTuple, Union

import numpy as np
from numpy.polynomial import polynomial as npoly
from scipy.interpolate import CubicSpline
from scipy.special import j0

from .errors import ConstraintViolation, InvalidParameter, InvalidProfile, Unsupported

GRID_POINTS = 4096
# K0*r above which the 3D long-range family is evaluated in partially integrated form
PARTIAL_INTEGRATION_SWITCH = 30.0
CONSTRAINT_TOL = 1e-10
KINDS = ("piecewise", "polynomial", "mollified", "tabulated")

BaseProfile = Union[float, Callable[[np.ndarray], np.ndarray], "SpectralProfile"]


@lru_cache(maxsize=None)
def _leggauss(n: int) -> tuple[np.ndarray, np.ndarray]:
    return np.polynomial.legendre.leggauss(n)


def unit_sphere_area(d: int) -> float:
    """Surface measure of the unit sphere in ``d`` dimensions (2, 2pi, 4pi)."""
    return {1: 2.0, 2: 2.0 * math.pi, 3: 4.0 * math.pi}[d]


def bump(k, eps: float) -> np.ndarray:
    """Mollifier ``exp(-1/(1 - k^2/eps^2))`` for ``|k| < eps``, else 0."""
    k = np.abs(np.asarray(k, dtype=float))
    out = np.zeros_like(k)
    inside = k < eps
    u = k[inside] / eps
    out[inside] = np.exp(-1.0 / (1.0 - u * u))
    return out


@dataclass(frozen=True, eq=False)
class SpectralProfile:
    """Radial representation of a nonnegative, compactly supported ``phi_hat``.

    Piecewise kinds ("piecewise", "polynomial") keep polynomial pieces between
    ``breaks``; grid kinds ("tabulated", "mollified") keep samples on a uniform
    grid over ``[0, cutoff]`` and interpolate with a cubic spline.
    """

    dimension: int
    cutoff: float
    kind: str
    parameters: dict = field(default_factory=dict)
    breaks: np.ndarray | None = None
    pieces: tuple = ()
    values: np.ndarray | None = None

    def __post_init__(self):
        if self.dimension not in (1, 2, 3):
            raise InvalidParameter(f"dimension must be 1, 2 or 3, got {self.dimension}")
        if not (self.cutoff > 0 and math.isfinite(self.cutoff)):
            raise InvalidParameter(f"cutoff must be positive, got {self.cutoff}")
        if self.kind not in KINDS:
            raise InvalidParameter(f"unknown profile kind {self.kind!r}")
        if self.is_grid:
            if self.values is None or len(self.values) < 2:
                raise InvalidProfile("grid profiles need at least two samples")
        elif self.breaks is None or len(self.pieces) != len(self.breaks) - 1:
            raise InvalidProfile("piecewise profile needs len(breaks) - 1 pieces")

    @property
    def is_grid(self) -> bool:
        return self.kind in ("tabulated", "mollified")

    @cached_property
    def grid(self) -> np.ndarray | None:
        if not self.is_grid:
            return None
        return np.linspace(0.0, self.cutoff, len(self.values))

    @cached_property
    def interpolant(self) -> CubicSpline | None:
        """Cubic spline through grid samples with zero slope at ``k = 0`` (so
        the radial function has no cone at the origin) and, for mollified
        profiles, at ``K0``."""
        if not self.is_grid:
            return None
        right = (1, 0.0) if self.kind == "mollified" else "not-a-knot"
        return CubicSpline(self.grid, self.values, bc_type=((1, 0.0), right))

    @property
    def breakpoints(self) -> np.ndarray:
        return self.grid if self.is_grid else self.breaks

    @cached_property
    def max_degree(self) -> int:
        if self.is_grid:
            return 3
        return max(len(c) - 1 for c in self.pieces)

    @cached_property
    def phi_hat_at_zero(self) -> float:
        return float(self(0.0))

    @property
    def supports_partial_integration(self) -> bool:
        return (self.kind == "polynomial" and self.dimension == 3
                and bool(self.parameters.get("longrange")))

    def __call__(self, k) -> np.ndarray | float:
        return eval_phi_hat(self, k)


def eval_phi_hat(profile: SpectralProfile, k) -> np.ndarray | float:
    """Evaluate ``phi_hat`` at wave number(s) ``k``; exactly 0 for ``|k| >= K0``."""
    scalar = np.ndim(k) == 0
    k = np.abs(np.asarray(k, dtype=float))
    out = np.zeros_like(k)
    inside = k < profile.cutoff
    ki = k[inside]
    if profile.is_grid:
        out[inside] = np.maximum(profile.interpolant(ki), 0.0)
    else:
        idx = np.clip(np.searchsorted(profile.breaks, ki, side="right") - 1,
                      0, len(profile.pieces) - 1)
        vals = np.empty_like(ki)
        for i, coeffs in enumerate(profile.pieces):
            m = idx == i
            if m.any():
                vals[m] = npoly.polyval(ki[m], coeffs)
        out[inside] = vals
    return float(out) if scalar else out


# ---------------------------------------------------------------------------
# constructors
# ---------------------------------------------------------------------------

def _check_nonnegative(profile: SpectralProfile, samples: int = 4001) -> None:
    k = np.union1d(np.linspace(0.0, profile.cutoff, samples), profile.breakpoints)
    k = k[k < profile.cutoff]
    v = eval_phi_hat(profile, k)
    scale = max(float(np.max(np.abs(v))), 1e-300)
    if np.min(v) < -1e-12 * scale:
        i = int(np.argmin(v))
        raise InvalidProfile(f"phi_hat is negative at k={k[i]:.6g}: {v[i]:.3e}")


def piecewise_profile(breaks, coefficients, dimension: int) -> SpectralProfile:
    """Piecewise polynomial profile; ``coefficients[i]`` are ascending powers of k
    valid on ``[breaks[i], breaks[i+1])``.  ``breaks`` must start at 0."""
    breaks = np.asarray(breaks, dtype=float)
    if breaks[0] != 0.0 or np.any(np.diff(breaks) <= 0):
        raise InvalidParameter("breaks must start at 0 and increase strictly")
    pieces = tuple(np.asarray(c, dtype=float) for c in coefficients)
    prof = SpectralProfile(
        dimension, float(breaks[-1]), "piecewise",
        {"breakpoints": breaks.tolist(), "coefficients": [p.tolist() for p in pieces]},
        breaks=breaks, pieces=pieces)
    _check_nonnegative(prof)
    return prof


def polynomial_profile(coefficients, cutoff: float, dimension: int,
                       _longrange: bool = False) -> SpectralProfile:
    coeffs = np.trim_zeros(np.asarray(coefficients, dtype=float), "b")
    if coeffs.size == 0:
        coeffs = np.zeros(1)
    params = {"coefficients": coeffs.tolist()}
    if _longrange:
        params["longrange"] = True
    prof = SpectralProfile(dimension, float(cutoff), "polynomial", params,
                           breaks=np.array([0.0, float(cutoff)]), pieces=(coeffs,))
    _check_nonnegative(prof)
    return prof


def tabulated_profile(values, cutoff: float, dimension: int) -> SpectralProfile:
    """Samples on the uniform grid ``linspace(0, cutoff, len(values))``."""
    values = np.asarray(values, dtype=float)
    if values.ndim != 1 or values.size < 2:
        raise InvalidProfile("need a 1D array of at least two samples")
    if np.any(values < 0):
        raise InvalidProfile("tabulated phi_hat has negative samples")
    return SpectralProfile(dimension, float(cutoff), "tabulated", {}, values=values)


def triangle_profile(cutoff: float, dimension: int = 1) -> SpectralProfile:
    """``phi_hat(k) = K0 - |k|``; in 1D ``phi(x) = (1 - cos K0 x) / (pi x^2)``."""
    return polynomial_profile([cutoff, -1.0], cutoff, dimension)


def build_longrange_3d(coefficients, cutoff: float) -> SpectralProfile:
    """3D rotation-invariant profile ``phi_hat(k) = f(k)`` with polynomial ``f``.

    ``f`` must be nonnegative on ``[0, K0]`` with ``f(K0) = f'(K0) = 0`` so that
    ``phi`` decays like ``cos(K0 r) / r^4``.
    """
    c = np.asarray(coefficients, dtype=float)
    scale = float(np.max(np.abs(c) * cutoff ** np.arange(c.size))) if c.size else 0.0
    f_end = npoly.polyval(cutoff, c)
    df_end = npoly.polyval(cutoff, npoly.polyder(c)) if c.size > 1 else 0.0
    tol = CONSTRAINT_TOL * scale
    if abs(f_end) > tol:
        raise ConstraintViolation(f"f(K0) = {f_end:.3e} is not zero")
    if abs(df_end) * cutoff > tol:
        raise ConstraintViolation(f"f'(K0) = {df_end:.3e} is not zero")
    return polynomial_profile(c, cutoff, 3, _longrange=True)


def cos_r4_profile(cutoff: float) -> SpectralProfile:
    """``f(k) = pi^2 (k+z)(k+conj z)(k-K0)^2`` with ``z = (K0/10)(1+3i)``.

    Its potential behaves like ``1.3 K0^3 cos(K0 r) / r^4`` at large r.
    """
    z = complex(cutoff / 10.0, 3.0 * cutoff / 10.0)
    quad = [abs(z) ** 2, 2.0 * z.real, 1.0]
    sq = [cutoff ** 2, -2.0 * cutoff, 1.0]
    coeffs = math.pi ** 2 * npoly.polymul(quad, sq)
    prof = build_longrange_3d(coeffs, cutoff)
    prof.parameters["preset"] = "cos_r4"
    return prof


def _smooth_base(g: BaseProfile) -> BaseProfile:
    """Grid profiles used as a base are resampled through a cubic spline so the
    convolution integrand has no interpolation kinks (they cost accuracy in the
    Gauss-Legendre sums)."""
    if not (isinstance(g, SpectralProfile) and g.is_grid):
        return g
    spline = CubicSpline(g.grid, g.values)
    cutoff = g.cutoff

    def smooth(k):
        k = np.abs(k)
        return np.where(k < cutoff, np.maximum(spline(np.minimum(k, cutoff)), 0.0), 0.0)

    return smooth


def _sample_base(g: BaseProfile, k: np.ndarray) -> np.ndarray:
    if isinstance(g, SpectralProfile):
        return eval_phi_hat(g, k)
    if callable(g):
        return np.asarray(g(k), dtype=float) * np.ones_like(k)
    return np.full_like(k, float(g))


def _composite(lo: np.ndarray, hi: np.ndarray, cuts: list[np.ndarray], n: int, panels: int):
    """Gauss-Legendre nodes/weights on [lo, hi] split at ``cuts`` (per row)."""
    x, w = _leggauss(n)
    edges = [lo] + [np.clip(c, lo, hi) for c in cuts] + [hi]
    edges = np.sort(np.stack(edges, axis=1), axis=1)
    nodes, weights = [], []
    for a, b in zip(edges[:, :-1].T, edges[:, 1:].T):
        for p in range(panels):
            pa = a + (b - a) * p / panels
            pb = a + (b - a) * (p + 1) / panels
            half = 0.5 * (pb - pa)
            nodes.append(0.5 * (pa + pb)[:, None] + half[:, None] * x[None, :])
            weights.append(half[:, None] * w[None, :])
    return np.concatenate(nodes, axis=1), np.concatenate(weights, axis=1)


@lru_cache(maxsize=16)
def _bump_moment_table(eps: float, n: int = 20001) -> CubicSpline:
    u = np.linspace(0.0, eps, n)
    x, w = _leggauss(10)
    half = 0.5 * (u[1] - u[0])
    t = (u[:-1] + half)[:, None] + half * x
    cells = half * np.sum(w * t * bump(t, eps), axis=1)
    return CubicSpline(u, np.concatenate([[0.0], np.cumsum(cells)]))


def _bump_moment(u: np.ndarray, eps: float) -> np.ndarray:
    """``C(u) = int_0^u t * bump(t) dt`` (constant for ``u >= eps``), read off
    a cumulative table."""
    return _bump_moment_table(float(eps))(np.clip(u, 0.0, eps))


def _convolve(g: BaseProfile, eps: float, inner: float, d: int, k: np.ndarray) -> np.ndarray:
    """Radial d-dimensional convolution of ``g * 1[|k'| < inner]`` with the bump."""
    out = np.zeros_like(k)
    zeros = np.zeros_like(k)
    if d == 1:
        s, w = _composite(np.maximum(0.0, k - eps), np.minimum(inner, k + eps), [], 24, 4)
        out += np.sum(w * _sample_base(g, s) * bump(k[:, None] - s, eps), axis=1)
        s, w = _composite(zeros, np.clip(eps - k, 0.0, inner), [], 24, 4)
        out += np.sum(w * _sample_base(g, s) * bump(k[:, None] + s, eps), axis=1)
        return out
    lo, hi = np.maximum(0.0, k - eps), np.minimum(inner, k + eps)
    s, w = _composite(lo, np.maximum(lo, hi), [k, eps - k], 24, 2)
    kk = k[:, None]
    gs = _sample_base(g, s)
    if d == 3:
        pos = kk[:, 0] > 0
        safe_k = np.where(kk > 0, kk, 1.0)
        diff = _bump_moment(np.minimum(kk + s, eps), eps) - _bump_moment(np.abs(kk - s), eps)
        val = 2.0 * math.pi / safe_k * np.sum(w * s * gs * np.maximum(diff, 0.0), axis=1, keepdims=True)
        out[pos] = val[pos, 0]
        if np.any(~pos):
            s0, w0 = _composite(np.zeros(1), np.array([min(inner, eps)]), [], 24, 4)
            out[~pos] = 4.0 * math.pi * np.sum(w0 * s0 ** 2 * _sample_base(g, s0) * bump(s0, eps))
        return out
    # d == 2: inner angular integral per (k, s) node
    x, wt = _leggauss(32)
    with np.errstate(invalid="ignore", divide="ignore"):
        c = (kk ** 2 + s ** 2 - eps ** 2) / (2.0 * kk * s)
    theta_max = np.arccos(np.clip(np.nan_to_num(c, nan=1.0, posinf=1.0, neginf=-1.0), -1.0, 1.0))
    theta = 0.5 * theta_max[..., None] * (x + 1.0)
    dist = np.sqrt(np.maximum(kk[..., None] ** 2 + s[..., None] ** 2
                              - 2.0 * kk[..., None] * s[..., None] * np.cos(theta), 0.0))
    ang = theta_max * np.sum(wt * bump(dist, eps), axis=-1)
    return np.sum(w * s * gs * ang, axis=1)


def build_mollified(g: BaseProfile, eps: float, cutoff: float, dimension: int,
                    n_grid: int = GRID_POINTS) -> SpectralProfile:
    """Convolve a nonnegative radial ``g`` (restricted to ``|k| < K0 - eps``) with
    the bump of width ``eps``.  The result is supported in ``[0, K0)`` and stored
    on an ``n_grid``-point uniform grid.

    ``g`` may be a constant, a vectorised callable or another profile.
    """
    if dimension not in (1, 2, 3):
        raise InvalidParameter(f"dimension must be 1, 2 or 3, got {dimension}")
    if not (0.0 < eps < cutoff):
        raise InvalidParameter(f"need 0 < eps < K0, got eps={eps}, K0={cutoff}")
    inner = cutoff - eps
    probe = np.linspace(0.0, inner, 2001)
    gv = _sample_base(g, probe)
    if np.any(~np.isfinite(gv)) or np.any(gv < 0):
        raise InvalidProfile("base profile g must be finite and nonnegative")
    grid = np.linspace(0.0, cutoff, n_grid)
    values = np.empty_like(grid)
    base_fn = _smooth_base(g)
    chunk = 256 if dimension != 2 else 64
    for i in range(0, n_grid, chunk):
        values[i:i + chunk] = _convolve(base_fn, eps, inner, dimension, grid[i:i + chunk])
    values[-1] = 0.0
    values = np.maximum(values, 0.0)
    if isinstance(g, SpectralProfile):
        base = {"kind": g.kind, "cutoff": g.cutoff, "dimension": g.dimension}
    elif callable(g):
        base = getattr(g, "__name__", "callable")
    else:
        base = float(g)
    params = {"eps": float(eps), "base": base, "n_grid": int(n_grid)}
    return SpectralProfile(dimension, float(cutoff), "mollified", params, values=values)


def bump_stack_profile(cutoff: float, dimension: int = 3, n_bumps: int = 7,
                       n_grid: int = GRID_POINTS) -> SpectralProfile:
    """``n_bumps``-fold convolution of bumps of width ``K0 / n_bumps``.

    The base ``g`` of the final mollification is itself a mollified profile, so
    ``phi`` is a product of several bump transforms and decays much faster
    than a single mollifier would give.
    """
    if n_bumps < 2:
        raise InvalidParameter("n_bumps must be at least 2")
    eps = cutoff / n_bumps

    def first_bump(k):
        return bump(k, eps)

    prof: BaseProfile = first_bump
    for m in range(2, n_bumps + 1):
        prof = build_mollified(prof, eps, m * eps, dimension, n_grid)
    params = dict(prof.parameters, preset="bump_stack", n_bumps=n_bumps)
    # overall amplitude is arbitrary; normalise to phi_hat(0) = 1
    return SpectralProfile(dimension, prof.cutoff, "mollified", params,
                           values=prof.values / prof.values[0])


# ---------------------------------------------------------------------------
# real space
# ---------------------------------------------------------------------------

def _radial_nodes(profile: SpectralProfile, r_max: float):
    """Composite GL nodes on [0, K0] aligned with the profile breakpoints, with
    at most a quarter period of ``cos(k r_max)`` per panel."""
    brk = profile.breakpoints
    lengths = np.diff(brk)
    order = 8 if profile.is_grid else max(8, (profile.max_degree + 4) // 2 + 4)
    if r_max > 0:
        n_sub = np.maximum(1, np.ceil(lengths * r_max / (0.5 * math.pi))).astype(int)
    else:
        n_sub = np.ones(len(lengths), dtype=int)
    starts = np.repeat(brk[:-1], n_sub)
    widths = np.repeat(lengths / n_sub, n_sub)
    offs = np.concatenate([np.arange(n) for n in n_sub])
    a = starts + offs * widths
    x, w = _leggauss(order)
    half = 0.5 * widths
    k = (a + half)[:, None] + half[:, None] * x[None, :]
    wk = half[:, None] * w[None, :]
    return k.ravel(), wk.ravel()


def _radial_kernel(d: int, k: np.ndarray, r: np.ndarray) -> np.ndarray:
    kr = np.multiply.outer(r, k)
    if d == 1:
        return np.cos(kr) / math.pi
    if d == 2:
        return k * j0(kr) / (2.0 * math.pi)
    return k * k * np.sinc(kr / math.pi) / (2.0 * math.pi ** 2)


def _phi_direct(profile: SpectralProfile, r: np.ndarray) -> np.ndarray:
    out = np.empty_like(r)
    if r.size == 0:
        return out
    order = np.argsort(r)
    rs = r[order]
    i = 0
    # batch distances of similar size so that the panel count follows r
    while i < rs.size:
        k, w = _radial_nodes(profile, float(rs[min(i + 255, rs.size - 1)]))
        wf = w * eval_phi_hat(profile, k)
        batch = max(1, min(256, 4_000_000 // k.size))
        seg = rs[i:i + batch]
        out[order[i:i + seg.size]] = _radial_kernel(profile.dimension, k, seg) @ wf
        i += seg.size
    return out


def _h_poly(profile: SpectralProfile) -> np.ndarray:
    """Coefficients of ``h(k) = k f(k)`` for the 3D polynomial family."""
    return npoly.polymulx(profile.pieces[0])


def _phi_partial(profile: SpectralProfile, r: np.ndarray) -> np.ndarray:
    """Three integrations by parts of the 3D radial transform::

        phi(r) = [ h''(K0) cos(K0 r) - h''(0) - int_0^K0 h''' cos(k r) dk ] / (2 pi^2 r^4)
    """
    K0 = profile.cutoff
    h = _h_poly(profile)
    h2 = npoly.polyder(h, 2) if h.size > 2 else np.zeros(1)
    h3 = npoly.polyder(h, 3) if h.size > 3 else np.zeros(1)
    out = np.empty_like(r)
    for i, ri in enumerate(r):
        n_pan = max(1, math.ceil(K0 * ri / (0.5 * math.pi)))
        edges = np.linspace(0.0, K0, n_pan + 1)
        x, w = _leggauss(12)
        half = 0.5 * np.diff(edges)
        k = (edges[:-1] + half)[:, None] + half[:, None] * x
        integral = np.sum(half[:, None] * w * npoly.polyval(k, h3) * np.cos(k * ri))
        out[i] = (npoly.polyval(K0, h2) * math.cos(K0 * ri) - npoly.polyval(0.0, h2)
                  - integral) / (2.0 * math.pi ** 2 * ri ** 4)
    return out


def eval_phi(profile: SpectralProfile, r, method: str = "auto"):
    """Real-space potential ``phi(|r|)`` by radial inverse transform.

    ``method`` is ``"direct"`` (composite Gauss-Legendre), ``"partial"``
    (3D polynomial family only) or ``"auto"``, which switches to the partial
    form for ``K0 r > 30``.
    """
    scalar = np.ndim(r) == 0
    r = np.abs(np.asarray(r, dtype=float)).ravel()
    if method not in ("auto", "direct", "partial"):
        raise InvalidParameter(f"unknown method {method!r}")
    if method == "partial" and not profile.supports_partial_integration:
        raise Unsupported("partial-integration form needs the 3D long-range polynomial family")
    if method == "direct" or not profile.supports_partial_integration:
        use_partial = np.zeros(r.shape, dtype=bool)
    elif method == "partial":
        use_partial = r > 0
    else:
        use_partial = profile.cutoff * r > PARTIAL_INTEGRATION_SWITCH
    out = np.empty_like(r)
    out[~use_partial] = _phi_direct(profile, r[~use_partial])
    if use_partial.any():
        out[use_partial] = _phi_partial(profile, r[use_partial])
    return float(out[0]) if scalar else out


def phi_hat_integral(profile: SpectralProfile) -> float:
    """``phi(0) = (2 pi)^-d |S^{d-1}| int_0^K0 phi_hat(k) k^{d-1} dk``."""
    k, w = _radial_nodes(profile, 0.0)
    d = profile.dimension
    integral = math.fsum(w * eval_phi_hat(profile, k) * k ** (d - 1))
    return unit_sphere_area(d) * integral / (2.0 * math.pi) ** d


class Asymptotics(NamedTuple):
    amplitude: float  # coefficient of cos(K0 r) / r^4
    constant: float   # coefficient of the non-oscillatory 1/r^4 term


def asymptotic_amplitude_3d(profile: SpectralProfile) -> Asymptotics:
    """Leading large-r behaviour ``phi ~ (A cos(K0 r) + C) / r^4`` of the 3D
    polynomial family: ``A = (kf)''(K0) / 2pi^2``, ``C = -(kf)''(0) / 2pi^2``."""
    if profile.kind != "polynomial" or profile.dimension != 3:
        raise Unsupported("asymptotics are defined for 3D polynomial profiles only")
    h = _h_poly(profile)
    h2 = npoly.polyder(h, 2) if h.size > 2 else np.zeros(1)
    two_pi2 = 2.0 * math.pi ** 2
    return Asymptotics(float(npoly.polyval(profile.cutoff, h2)) / two_pi2,
                       -float(npoly.polyval(0.0, h2)) / two_pi2)


class PairPotential:
    """Real-space pair potential derived from a :class:`SpectralProfile`."""

    def __init__(self, profile: SpectralProfile):
        self.profile = profile

    @property
    def dimension(self) -> int:
        return self.profile.dimension

    @property
    def cutoff(self) -> float:
        return self.profile.cutoff

    @property
    def phi_hat_at_zero(self) -> float:
        return self.profile.phi_hat_at_zero

    @cached_property
    def phi_at_zero(self) -> float:
        return phi_hat_integral(self.profile)

    @cached_property
    def asymptotic_amplitude(self) -> float | None:
        if self.profile.kind == "polynomial" and self.dimension == 3:
            return asymptotic_amplitude_3d(self.profile).amplitude
        return None

    def phi_hat(self, k):
        return eval_phi_hat(self.profile, k)

    def __call__(self, r, method: str = "auto"):
        return eval_phi(self.profile, r, method)

    def spline(self, r_max: float, points_per_wavelength: int = 64) -> CubicSpline:
        """Cubic spline of ``phi`` on ``[0, r_max]`` for bulk pair sums."""
        n = max(256, int(points_per_wavelength * self.cutoff * r_max / (2 * math.pi)))
        r = np.linspace(0.0, r_max, n)
        return CubicSpline(r, self(r))

    def envelope(self, r_min: float, r_max: float, samples: int = 2048) -> tuple[np.ndarray, np.ndarray]:
        """Nonincreasing envelope ``E(r) = max_{s >= r} |phi(s)|`` sampled on
        ``[r_min, r_max]`` (points per wavelength permitting)."""
        n = max(samples, int(16 * self.cutoff * (r_max - r_min) / (2 * math.pi)))
        r = np.linspace(r_min, r_max, n)
        env = np.maximum.accumulate(np.abs(self(r))[::-1])[::-1]
        return r, env


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

def profile_to_dict(profile: SpectralProfile) -> dict:
    out = {"dimension": profile.dimension, "cutoff": profile.cutoff, "kind": profile.kind,
           "parameters": dict(profile.parameters)}
    if profile.is_grid:
        out["parameters"]["values"] = profile.values.tolist()
    return out


def profile_from_dict(spec: dict) -> SpectralProfile:
    """Inverse of :func:`profile_to_dict`; also understands presets.

    Presets: ``{"preset": "triangle" | "cos_r4" | "bump_stack", "cutoff": K0,
    "dimension": d, ...}``.  A "mollified" entry without stored ``values`` is
    rebuilt from ``eps`` and ``base`` (a number or a nested profile).
    """
    params = dict(spec.get("parameters", {}))
    preset = spec.get("preset")
    d = int(spec.get("dimension", 3))
    cutoff = float(spec["cutoff"])
    if preset == "triangle":
        return triangle_profile(cutoff, d)
    if preset == "cos_r4":
        return cos_r4_profile(cutoff)
    if preset == "bump_stack":
        return bump_stack_profile(cutoff, d, int(params.get("n_bumps", spec.get("n_bumps", 7))),
                                  int(params.get("n_grid", spec.get("n_grid", GRID_POINTS))))
    if preset is not None:
        raise InvalidParameter(f"unknown preset {preset!r}")
    kind = spec["kind"]
    if kind == "polynomial":
        if params.get("longrange"):
            prof = build_longrange_3d(params["coefficients"], cutoff)
        else:
            prof = polynomial_profile(params["coefficients"], cutoff, d)
        return prof
    if kind == "piecewise":
        return piecewise_profile(params["breakpoints"], params["coefficients"], d)
    if kind == "tabulated":
        return tabulated_profile(params["values"], cutoff, d)
    if kind == "mollified":
        if "values" in params:
            values = np.asarray(params.pop("values"), dtype=float)
            return SpectralProfile(d, cutoff, "mollified", params, values=values)
        base = params.get("base", 1.0)
        if isinstance(base, dict):
            base = profile_from_dict(base)
        return build_mollified(base, float(params["eps"]), cutoff, d,
                               int(params.get("n_grid", GRID_POINTS)))
    raise InvalidParameter(f"unknown profile kind {kind!r}")


def load_profile(path) -> SpectralProfile:
    with open(path) as fh:
        return profile_from_dict(json.load(fh))


def save_profile(profile: SpectralProfile, path) -> None:
    with open(path, "w") as fh:
        json.dump(profile_to_dict(profile), fh, indent=2)


def write_two_column_csv(path, header: tuple[str, str], x, y) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for a, b in zip(np.asarray(x, dtype=float), np.asarray(y, dtype=float)):
            writer.writerow([repr(float(a)), repr(float(b))])
