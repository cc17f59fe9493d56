"""Frequency functions, their derivative formula, stress tensor and scale detectors.

All quantities are ball and sphere integrals around a base point p in R^4
(or in a four-torus).  Inputs are field sources: closed-form samplers that
return exact values at quadrature nodes, or :class:`GridSampler`, which
interpolates a grid configuration.  A source exposes

* ``a(x)``: the 1-form, shape ``(..., 4, L)``,
* ``grad(x)``: its covariant derivative, shape ``(..., 4, 4, L)`` with the
  derivative index first,
* ``curvature(x)``: the curvature, shape ``(..., 6, L)`` (increasing pairs),
* ``r``: the configuration scale.

``L`` is 3 for su(2)-valued fields and 1 for real-valued limit forms.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass
from typing import Callable, Protocol, Sequence

import numpy as np

from . import grid
from .errors import DomainError, UndefinedFrequencyError
from .fields import Configuration, cov_grad, curvature
from .grid import DEFAULT_RULE, BallSpec, DomainKind, QuadratureRule, multi_indices
from .liealg import bracket

_PAIRS = multi_indices(4, 2)


@dataclass(frozen=True)
class AnalysisParams:
    """Analysis constants.

    ``ric`` is an optional constant symmetric 4x4 Ricci tensor.  The toolkit
    is flat, so it is zero unless a test feeds a synthetic one to exercise
    the wiring of the ``vartheta`` term.  ``kappa_theta`` is the distance
    factor used when sampling balls away from a concentration set; the
    construction guarantees the curvature bound for any value above 4.
    """

    c: float = 128.0
    E: float = 1.0
    kappa_U: float = 1.0
    z_U: float | None = None
    mu: float = 0.25
    ric: tuple[tuple[float, ...], ...] | None = None
    kappa_theta: float = 5.0

    def __post_init__(self):
        if not self.c > 100:
            raise ValueError(f"c must exceed 100, got {self.c}")
        if not self.E >= 1:
            raise ValueError(f"E must be at least 1, got {self.E}")
        if not 0 < self.mu <= 0.25:
            raise ValueError(f"mu must lie in (0, 1/4], got {self.mu}")
        if not self.kappa_U > 0:
            raise ValueError("kappa_U must be positive")
        if not self.kappa_theta > 0:
            raise ValueError("kappa_theta must be positive")
        z = 100.0 * self.kappa_U
        if self.z_U is None:
            object.__setattr__(self, "z_U", z)
        elif not math.isclose(self.z_U, z, rel_tol=1e-12):
            raise ValueError("z_U must equal 100 kappa_U")
        if self.ric is not None:
            R = np.asarray(self.ric, dtype=float)
            if R.shape != (4, 4) or not np.allclose(R, R.T):
                raise ValueError("ric must be a symmetric 4x4 matrix")
            object.__setattr__(self, "ric", tuple(map(tuple, R)))

    @property
    def is_flat(self) -> bool:
        return self.ric is None or not np.any(np.asarray(self.ric))

    @staticmethod
    def cutoff(t):
        """Smoothstep: 1 for t <= 1/4, 0 for t >= 3/4, C^1 in between."""
        u = np.clip((np.asarray(t, dtype=float) - 0.25) / 0.5, 0.0, 1.0)
        return 1.0 - u * u * (3.0 - 2.0 * u)


class FieldSource(Protocol):
    r: float

    def a(self, x: np.ndarray) -> np.ndarray: ...

    def grad(self, x: np.ndarray) -> np.ndarray: ...

    def curvature(self, x: np.ndarray) -> np.ndarray: ...


def wedge_norm2(a: np.ndarray) -> np.ndarray:
    """Pointwise |a ^ a|^2 for point values of shape (..., 4, L)."""
    if a.shape[-1] != 3:
        return np.zeros(a.shape[:-2])
    total = 0.0
    for i, j in _PAIRS:
        b = bracket(a[..., i, :], a[..., j, :])
        total = total + np.sum(b * b, axis=-1)
    return total


def _norm2(x: np.ndarray, n_axes: int) -> np.ndarray:
    return np.sum(x * x, axis=tuple(range(-n_axes, 0)))


# -- sources ------------------------------------------------------------------


@dataclass(frozen=True)
class ExactFormSampler:
    """a = df (x) direction with df, Hess f supplied in closed form.

    ``direction`` is a Lie vector (length 3) or ``(1.0,)`` for a real form.
    Such fields have vanishing a ^ a and, with A = 0, vanishing curvature.
    They solve the second order equation when f is harmonic.
    """

    grad_f: Callable[[np.ndarray], np.ndarray]
    hess_f: Callable[[np.ndarray], np.ndarray]
    direction: tuple[float, ...] = (1.0, 0.0, 0.0)
    r: float = 1.0
    scale: float = 1.0

    def a(self, x):
        return self.scale * self.grad_f(x)[..., :, None] * np.asarray(self.direction)

    def grad(self, x):
        return self.scale * self.hess_f(x)[..., :, :, None] * np.asarray(self.direction)

    def curvature(self, x):
        return np.zeros((*np.shape(x)[:-1], 6, len(self.direction)))


def _monomial_sampler(idx: tuple[int, ...], direction, r) -> ExactFormSampler:
    """f = product of the listed coordinates (distinct indices, so harmonic)."""

    def grad_f(x):
        out = np.zeros(x.shape)
        for k in idx:
            out[..., k] = np.prod([x[..., j] for j in idx if j != k], axis=0) if len(idx) > 1 else 1.0
        return out

    def hess_f(x):
        out = np.zeros((*x.shape[:-1], 4, 4))
        for k in idx:
            for m in idx:
                if k != m:
                    rest = [x[..., j] for j in idx if j not in (k, m)]
                    out[..., k, m] = np.prod(rest, axis=0) if rest else 1.0
        return out

    return ExactFormSampler(grad_f, hess_f, tuple(direction), r)


def homogeneous_harmonic(degree: int, direction=(1.0, 0.0, 0.0), r: float = 1.0) -> ExactFormSampler:
    """a = d(x1), d(x1 x2) or d(x1 x2 x3): homogeneous of the given degree 0, 1 or 2."""
    if degree not in (0, 1, 2):
        raise ValueError("degree must be 0, 1 or 2")
    return _monomial_sampler(tuple(range(degree + 1)), direction, r)


def constant_sampler(coeffs, direction=(1.0, 0.0, 0.0), r: float = 1.0) -> ExactFormSampler:
    """a = (sum c_mu dx^mu) (x) direction."""
    c = np.asarray(coeffs, dtype=float)
    return ExactFormSampler(lambda x: np.broadcast_to(c, x.shape).copy(),
                            lambda x: np.zeros((*x.shape[:-1], 4, 4)), tuple(direction), r)


def random_harmonic(rng: np.random.Generator, degrees: Sequence[int] = (1, 2, 3),
                    n_terms: int = 3, direction=(1.0, 0.0, 0.0), r: float = 1.0) -> ExactFormSampler:
    """a = df with f = sum of c Re((w . x)^k) for random null vectors w = u + i v.

    Powers of a null linear form are harmonic, so a solves the abelian
    second order equation.
    """
    terms = []
    for _ in range(n_terms):
        for k in degrees:
            q, _ = np.linalg.qr(rng.standard_normal((4, 2)))
            w = q[:, 0] + 1j * q[:, 1]
            terms.append((k, w, rng.standard_normal()))

    def grad_f(x):
        out = np.zeros(x.shape)
        for k, w, c in terms:
            z = x @ w
            out += c * (k * z[..., None] ** (k - 1) * w).real
        return out

    def hess_f(x):
        out = np.zeros((*x.shape[:-1], 4, 4))
        for k, w, c in terms:
            if k < 2:
                continue
            z = x @ w
            out += c * (k * (k - 1) * z[..., None, None] ** (k - 2) * np.outer(w, w)).real
        return out

    return ExactFormSampler(grad_f, hess_f, tuple(direction), r)


@dataclass(frozen=True)
class Z2ModelSampler:
    """The two-valued harmonic 1-form nu = Re(sqrt(z) dz), z = x1 + i x2.

    With ``lie=True`` the sign ambiguity is absorbed by the rotating Lie
    direction s(theta/2) = cos(theta/2) s1 + sin(theta/2) s2, giving a
    single-valued su(2) form that is parallel for the flat connection
    -(1/4) dtheta s3 away from {z = 0}; its covariant derivative is
    grad(nu) (x) s(theta/2).  With ``lie=False`` a real branch of nu is
    returned (only |nu| and |grad nu| are branch independent).
    """

    lie: bool = True
    r: float = 1.0
    center: tuple[float, float] = (0.0, 0.0)

    def _z(self, x):
        return (x[..., 0] - self.center[0]) + 1j * (x[..., 1] - self.center[1])

    def _frame(self, z):
        if not self.lie:
            return np.ones((*z.shape, 1))
        half = 0.5 * np.angle(z)
        return np.stack([np.cos(half), np.sin(half), np.zeros_like(half)], axis=-1)

    def nu(self, x):
        f = np.sqrt(self._z(x))
        out = np.zeros(x.shape)
        out[..., 0], out[..., 1] = f.real, -f.imag
        return out

    def grad_nu(self, x):
        z = self._z(x)
        with np.errstate(divide="ignore", invalid="ignore"):
            fp = np.where(z == 0, 0.0, 0.5 / np.sqrt(np.where(z == 0, 1.0, z)))
        out = np.zeros((*x.shape[:-1], 4, 4))
        out[..., 0, 0], out[..., 1, 0] = fp.real, -fp.imag
        out[..., 0, 1], out[..., 1, 1] = -fp.imag, -fp.real
        return out

    def a(self, x):
        return self.nu(x)[..., :, None] * self._frame(self._z(x))[..., None, :]

    def grad(self, x):
        return self.grad_nu(x)[..., None] * self._frame(self._z(x))[..., None, None, :]

    def curvature(self, x):
        return np.zeros((*np.shape(x)[:-1], 6, 3 if self.lie else 1))


@dataclass(frozen=True)
class ScaledSource:
    """lambda times a source (connection unchanged)."""

    base: FieldSource
    lam: float

    @property
    def r(self):
        return self.base.r

    def a(self, x):
        return self.lam * self.base.a(x)

    def grad(self, x):
        return self.lam * self.base.grad(x)

    def curvature(self, x):
        return self.base.curvature(x)


class GridSampler:
    """A four-torus configuration evaluated at arbitrary points by interpolation."""

    def __init__(self, cfg: Configuration):
        if cfg.domain.kind is not DomainKind.TORUS4:
            raise DomainError("grid sampling for frequency functions needs a four-torus")
        self.cfg = cfg
        self.domain = cfg.domain
        self.r = cfg.r
        self._a = cfg.a.data
        self._grad = np.moveaxis(cov_grad(cfg, cfg.a), 0, -3)
        self._F = curvature(cfg).data

    def a(self, x):
        return grid.interpolate(self.domain, self._a, x)

    def grad(self, x):
        return grid.interpolate(self.domain, self._grad, x)

    def curvature(self, x):
        return grid.interpolate(self.domain, self._F, x)


def _check_radius(source, p, rho):
    dom = getattr(source, "domain", None)
    grid._check_ball(dom, BallSpec(tuple(p), rho))


# -- profiles -----------------------------------------------------------------


@dataclass
class FrequencyProfile:
    p: tuple[float, ...]
    radii: np.ndarray
    h: np.ndarray
    vartheta: np.ndarray
    K: np.ndarray
    N: np.ndarray
    source: str
    limit: bool = False

    @property
    def undefined(self) -> np.ndarray:
        return ~np.isfinite(self.N)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(("r", "h", "vartheta", "K", "N"))
        for row in zip(self.radii, self.h, self.vartheta, self.K, self.N):
            writer.writerow([repr(float(v)) for v in row])
        return buf.getvalue()


def _source_tag(source) -> str:
    return "GridConfig" if isinstance(source, GridSampler) else "AnalyticSampler"


def _sphere_h(source, p, rho, rule) -> float:
    pts, w = rule.sphere_nodes(BallSpec(tuple(p), rho))
    return float(np.sum(w * _norm2(source.a(pts), 2)))


def _energy(source, p, rho, rule, limit: bool) -> float:
    """int_B |grad a|^2 + 2 r^2 |a ^ a|^2 (the second term dropped for limit forms)."""
    pts, w = rule.ball_nodes(BallSpec(tuple(p), rho))
    dens = _norm2(source.grad(pts), 3)
    if not limit:
        dens = dens + 2.0 * source.r**2 * wedge_norm2(source.a(pts))
    return float(np.sum(w * dens))


def _ricci_ball(source, p, rho, ric: np.ndarray, rule) -> float:
    pts, w = rule.ball_nodes(BallSpec(tuple(p), rho))
    a = source.a(pts)
    return float(np.sum(w * np.einsum("ab,...al,...bl->...", ric, a, a)))


def _vartheta(source, p, rho, params: AnalysisParams, rule, n_nodes: int = 12) -> float:
    """int_0^rho (1/h(s)) int_{B_s} Ric(<a (x) a>) ds; M = 0 on flat spheres."""
    if params.is_flat:
        return 0.0
    ric = np.asarray(params.ric)
    t, wt = np.polynomial.legendre.leggauss(n_nodes)
    s = 0.5 * rho * (t + 1.0)
    vals = [_ricci_ball(source, p, si, ric, rule) / _sphere_h(source, p, si, rule) for si in s]
    return float(0.5 * rho * np.dot(wt, vals))


def _profile(source, p, radii, params, rule, limit) -> FrequencyProfile:
    params = params or AnalysisParams()
    radii = np.asarray(radii, dtype=float)
    if np.any(radii <= 0) or np.any(np.diff(radii) <= 0):
        raise ValueError("radii must be positive and ascending")
    h, th, K, N = (np.empty_like(radii) for _ in range(4))
    for i, rho in enumerate(radii):
        _check_radius(source, p, rho)
        h[i] = _sphere_h(source, p, rho, rule)
        if h[i] <= 0.0:
            th[i], K[i], N[i] = np.nan, 0.0, np.nan
            continue
        th[i] = _vartheta(source, p, rho, params, rule)
        K[i] = math.sqrt(math.exp(-2.0 * th[i]) * h[i] / rho**3)
        N[i] = _energy(source, p, rho, rule, limit) / (rho**2 * K[i] ** 2)
    return FrequencyProfile(tuple(map(float, p)), radii, h, th, K, N, _source_tag(source), limit)


def profile(source: FieldSource | Configuration, p, radii, params: AnalysisParams | None = None,
            rule: QuadratureRule = DEFAULT_RULE) -> FrequencyProfile:
    """h, vartheta, K and N at the given radii around p.

    Radii where h vanishes get N = nan (see :attr:`FrequencyProfile.undefined`).
    """
    if isinstance(source, Configuration):
        source = GridSampler(source)
    return _profile(source, p, radii, params, rule, limit=False)


def limit_profile(source: FieldSource, p, radii, params: AnalysisParams | None = None,
                  rule: QuadratureRule = DEFAULT_RULE) -> FrequencyProfile:
    """The limit-form variant: N = (1/(r^2 K^2)) int_B |grad nu|^2, no quadratic term."""
    return _profile(source, p, radii, params, rule, limit=True)


def frequency_at(source, p, rho, params=None, rule=DEFAULT_RULE, limit=False) -> float:
    prof = _profile(source, p, [rho], params, rule, limit)
    if prof.undefined[0]:
        raise UndefinedFrequencyError(f"h vanishes at radius {rho}")
    return float(prof.N[0])


def ode_residuals(prof: FrequencyProfile) -> np.ndarray:
    """|dK/dr - (N/r) K| at the interior radii, dK/dr by centred differences."""
    r = prof.radii
    if len(r) < 3:
        raise ValueError("need at least three radii")
    dK = np.gradient(prof.K, r)
    return np.abs(dK - prof.N / r * prof.K)[1:-1]


def ode_check_3_6(prof: FrequencyProfile) -> float:
    """max over interior radii of |dK/dr - (N/r) K|."""
    return float(np.nanmax(ode_residuals(prof)))


def near_monotonicity_gap(prof: FrequencyProfile, kappa: float = 0.0) -> float:
    """min over s <= r of N(r) - N(s) + kappa (r^2 - s^2); >= 0 when the bound holds."""
    N, r = prof.N, prof.radii
    gap = N[None, :] - N[:, None] + kappa * (r[None, :] ** 2 - r[:, None] ** 2)
    mask = np.triu(np.ones_like(gap, dtype=bool))
    return float(np.min(gap[mask]))


# -- derivative formula ---------------------------------------------------------


@dataclass(frozen=True)
class DerivativeCheck:
    dN_direct: float
    dN_formula: float
    terms: tuple[float, float, float]

    @property
    def gap(self) -> float:
        return abs(self.dN_direct - self.dN_formula)


def _radial_contraction(F: np.ndarray, xhat: np.ndarray) -> np.ndarray:
    """E_nu = sum_alpha xhat_alpha F_{alpha nu}, shape (..., 4, L)."""
    E = np.zeros((*F.shape[:-2], 4, F.shape[-1]))
    for c, (i, j) in enumerate(_PAIRS):
        E[..., j, :] += xhat[..., i, None] * F[..., c, :]
        E[..., i, :] -= xhat[..., j, None] * F[..., c, :]
    return E


def dN_formula_5_2(source: FieldSource | Configuration, p, rho: float,
                   params: AnalysisParams | None = None, dr: float = 1e-3,
                   rule: QuadratureRule = DEFAULT_RULE) -> DerivativeCheck:
    """Centred difference of N against the boundary-integral formula at radius rho.

    The formula is

        (2/(rho^2 K^2)) int_S |grad_r a - (N/rho) a|^2
        + (r^2/(rho^2 K^2)) int_S |a ^ a|^2
        + (1/(rho^2 K^2 r^2)) int_S (2|E|^2 - |F|^2)

    with r the configuration scale and E the radial contraction of F.  It
    needs a flat metric, so a nonzero ``params.ric`` is rejected.
    """
    params = params or AnalysisParams()
    if not params.is_flat:
        raise DomainError("the derivative formula is implemented for flat balls only")
    if isinstance(source, Configuration):
        source = GridSampler(source)
    prof = _profile(source, p, [rho - dr, rho, rho + dr], params, rule, False)
    if np.any(prof.undefined):
        raise UndefinedFrequencyError(f"h vanishes near radius {rho}")
    direct = (prof.N[2] - prof.N[0]) / (2.0 * dr)
    N, K2 = prof.N[1], prof.K[1] ** 2
    pts, w = rule.sphere_nodes(BallSpec(tuple(p), rho))
    xhat = (pts - np.asarray(p)) / rho
    a, g, F = source.a(pts), source.grad(pts), source.curvature(pts)
    grad_r = np.einsum("...a,...anl->...nl", xhat, g)
    r = source.r
    t1 = 2.0 / (rho**2 * K2) * np.sum(w * _norm2(grad_r - N / rho * a, 2))
    t2 = r**2 / (rho**2 * K2) * np.sum(w * wedge_norm2(a))
    E = _radial_contraction(F, xhat)
    t3 = 1.0 / (rho**2 * K2 * r**2) * np.sum(w * (2.0 * _norm2(E, 2) - _norm2(F, 2)))
    return DerivativeCheck(float(direct), float(t1 + t2 + t3), (float(t1), float(t2), float(t3)))


# -- stress tensor --------------------------------------------------------------


def stress_tensor(cfg: Configuration) -> np.ndarray:
    """T_{ab} per site, shape (*sites, 4, 4).

    T_ab = <(grad_a a)_v, (grad_b a)_v> + r^-2 <F_av, F_bv>
           - 1/2 delta_ab (|grad a|^2 + r^2 |a ^ a|^2 + r^-2 |F|^2),
    with |F|^2 over increasing index pairs.
    """
    if cfg.domain.ndim != 4:
        raise DomainError("the stress tensor is four-dimensional")
    r = cfg.r
    g = cov_grad(cfg, cfg.a)  # (alpha, *sites, nu, L)
    Fc = curvature(cfg).data
    Ffull = np.zeros((*cfg.domain.sites, 4, 4, 3))
    for c, (i, j) in enumerate(_PAIRS):
        Ffull[..., i, j, :] = Fc[..., c, :]
        Ffull[..., j, i, :] = -Fc[..., c, :]
    T = np.einsum("a...vl,b...vl->...ab", g, g)
    T += np.einsum("...avl,...bvl->...ab", Ffull, Ffull) / r**2
    grad2 = np.sum(g * g, axis=(0, -2, -1))
    wedge2 = grid.wedge_sq(cfg.a).pointwise_norm2()
    F2 = np.sum(Fc * Fc, axis=(-2, -1))
    T -= 0.5 * (grad2 + r**2 * wedge2 + F2 / r**2)[..., None, None] * np.eye(4)
    return T


def stress_divergence_field(cfg: Configuration) -> np.ndarray:
    """(grad^dagger T)_b = -sum_a D_a T_ab per site, shape (*sites, 4)."""
    T = stress_tensor(cfg)
    out = np.zeros((*cfg.domain.sites, 4))
    for a in range(4):
        out -= grid.diff(cfg.domain, T[..., a, :], a)
    return out


def stress_divergence(cfg: Configuration, region=None) -> float:
    """max |grad^dagger T| over ``region`` (an index expression or boolean mask)."""
    div = np.linalg.norm(stress_divergence_field(cfg), axis=-1)
    if region is not None:
        div = div[region]
    return float(np.max(div))


# -- scale detectors ------------------------------------------------------------


@dataclass(frozen=True)
class DetectorResult:
    r_c_wedge: float
    r_c_F: float
    r_c_diamond: float
    r_star: float
    r_star_found: bool
    r_max: float

    def to_json(self) -> str:
        return json.dumps(self.__dict__, sort_keys=True)


def _largest_admissible(g: Callable[[float], float], bound: float, r_max: float,
                        rtol: float = 1e-4) -> float:
    """Largest r in (0, r_max] with g(r) <= bound, for g non-decreasing with g(0) = 0."""
    if g(r_max) <= bound:
        return r_max
    lo, hi = 0.0, r_max
    while hi - lo > rtol * hi:
        mid = 0.5 * (lo + hi)
        if g(mid) <= bound:
            lo = mid
        else:
            hi = mid
    return lo


def _ball_density(source, p, rho, rule, density) -> float:
    pts, w = rule.ball_nodes(BallSpec(tuple(p), rho))
    return float(np.sum(w * density(pts)))


def wedge_mass(source, p, rho, rule=DEFAULT_RULE) -> float:
    """r^4 int_B |a ^ a|^2."""
    return source.r**4 * _ball_density(source, p, rho, rule, lambda x: wedge_norm2(source.a(x)))


def curvature_mass(source, p, rho, rule=DEFAULT_RULE) -> float:
    """int_B |F|^2."""
    return _ball_density(source, p, rho, rule, lambda x: _norm2(source.curvature(x), 2))


def scale_detectors(source: FieldSource | Configuration, p, params: AnalysisParams | None = None,
                    r_max: float = 1.0, rule: QuadratureRule = DEFAULT_RULE) -> DetectorResult:
    """Largest radii below which the quadratic and curvature masses stay small.

    r_c_wedge: r^4 int |a^a|^2 <= c^-2; r_c_F: int |F|^2 <= c^-2;
    r_c_diamond: r^4 int |a^a|^2 <= c^-4; r_star: the radius where
    rho K(rho) r = 1/z_U, when it exists in (0, r_max].
    """
    params = params or AnalysisParams()
    if isinstance(source, Configuration):
        source = GridSampler(source)
    _check_radius(source, p, r_max)
    c = params.c
    rw = _largest_admissible(lambda s: wedge_mass(source, p, s, rule), c**-2, r_max)
    rF = _largest_admissible(lambda s: curvature_mass(source, p, s, rule), c**-2, r_max)
    rd = _largest_admissible(lambda s: wedge_mass(source, p, s, rule), c**-4, r_max)

    def rk(s):
        h = _sphere_h(source, p, s, rule)
        return s * math.sqrt(h / s**3) * source.r

    target = 1.0 / params.z_U
    if rk(r_max) < target:
        r_star, found = r_max, False
    else:
        r_star, found = _largest_admissible(rk, target, r_max), True
    return DetectorResult(rw, rF, rd, r_star, found, r_max)


def radius_scan(g: Callable[[float], float], bound: float, radii: np.ndarray) -> float:
    """Brute-force counterpart of the bisection: the last scanned radius with g <= bound."""
    ok = [r for r in radii if g(r) <= bound]
    return float(max(ok)) if ok else 0.0
