"""Gauge configurations, curvature, covariant calculus and gauge fixing.

The bundle is trivial, so a connection is a global su(2)-valued 1-form
``A`` and the Higgs-type field is an su(2)-valued 1-form ``a``.  The
physical section is ``r * a``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import grid
from .errors import ConvergenceError, DegreeError, DomainError
from .grid import (Domain, FormField, ValueKind, codiff, ext_d, hodge_star, lie_wedge,
                   sd_project, wedge_sq)
from .liealg import LIE_DIM, bracket, double_ad, inner, quat_conj, quat_exp, quat_mul, quat_rotate


@dataclass(frozen=True)
class Configuration:
    """The pair (A, a) with scale ``r >= 1`` and parameter ``tau`` in [0, 1]."""

    A: FormField
    a: FormField
    r: float = 1.0
    tau: float = 1.0

    def __post_init__(self):
        if self.A.domain != self.a.domain:
            raise DomainError("A and a live on different domains")
        if self.A.degree != 1 or self.a.degree != 1:
            raise DegreeError("A and a must be 1-forms")
        if not self.r >= 1.0:
            raise ValueError(f"r must be at least 1, got {self.r}")
        if not 0.0 <= self.tau <= 1.0:
            raise ValueError(f"tau must lie in [0, 1], got {self.tau}")

    @property
    def domain(self) -> Domain:
        return self.A.domain

    @classmethod
    def zero(cls, domain: Domain, r: float = 1.0, tau: float = 1.0) -> "Configuration":
        return cls(FormField.zeros(domain, 1), FormField.zeros(domain, 1), r, tau)

    @classmethod
    def flat(cls, domain: Domain, coeffs, direction=(1.0, 0.0, 0.0), r: float = 1.0,
             tau: float = 1.0) -> "Configuration":
        """A = 0 and a = (sum_mu c_mu dx^mu) times a fixed Lie vector.

        Such pairs make A + i r a a flat complex connection.
        """
        coeffs = np.asarray(coeffs, dtype=float)
        values = coeffs[:, None] * np.asarray(direction, dtype=float)[None, :]
        data = np.broadcast_to(values, (*domain.sites, *values.shape)).copy()
        return cls(FormField.zeros(domain, 1), FormField(domain, 1, ValueKind.LIE, data), r, tau)

    def with_fields(self, A: FormField | None = None, a: FormField | None = None) -> "Configuration":
        return replace(self, A=self.A if A is None else A, a=self.a if a is None else a)

    @property
    def section(self) -> FormField:
        """The unrescaled section r * a."""
        return self.a * self.r


@dataclass(frozen=True, eq=False)
class GaugeField:
    """Per-site unit quaternion acting on su(2) by conjugation."""

    domain: Domain
    q: np.ndarray = field(repr=False)

    def __post_init__(self):
        q = np.asarray(self.q, dtype=float)
        if q.shape != (*self.domain.sites, 4):
            raise ValueError(f"gauge array shape {q.shape} does not match the domain")
        if np.max(np.abs(np.sum(q * q, axis=-1) - 1.0)) > 1e-12:
            raise ValueError("gauge quaternions must have unit norm")
        object.__setattr__(self, "q", q)

    @classmethod
    def identity(cls, domain: Domain) -> "GaugeField":
        q = np.zeros((*domain.sites, 4))
        q[..., 0] = 1.0
        return cls(domain, q)

    @classmethod
    def exp(cls, domain: Domain, xi: np.ndarray) -> "GaugeField":
        """exp of a per-site su(2) array of shape ``(*sites, 3)``."""
        return cls(domain, quat_exp(np.broadcast_to(xi, (*domain.sites, LIE_DIM))))

    def __matmul__(self, other: "GaugeField") -> "GaugeField":
        q = quat_mul(self.q, other.q)
        return GaugeField(self.domain, q / np.linalg.norm(q, axis=-1, keepdims=True))


def _conn(x) -> FormField:
    return x.A if isinstance(x, Configuration) else x


# -- curvature and covariant derivatives -----------------------------------


def curvature(cfg: Configuration | FormField) -> FormField:
    """F = dA + A ^ A, with (A ^ A)_{mu nu} = [A_mu, A_nu]."""
    A = _conn(cfg)
    return ext_d(A) + wedge_sq(A)


def cov_d(cfg: Configuration | FormField, q: FormField) -> FormField:
    """d_A q = dq + [A ^ q]."""
    return ext_d(q) + lie_wedge(_conn(cfg), q)


def cov_codiff(cfg: Configuration | FormField, q: FormField) -> FormField:
    """Exact adjoint of :func:`cov_d` for the grid inner product."""
    A = _conn(cfg)
    out = codiff(q)
    n, k = q.domain.ndim, q.degree
    data = out.data.copy()
    # <[A_I, x_J], y_K> = -<x_J, [A_I, y_K]>
    for I, J, K, sign in grid._wedge_table(n, 1, k - 1):
        term = bracket(A.data[..., I, :], q.data[..., K, :])
        if sign > 0:
            data[..., J, :] -= term
        else:
            data[..., J, :] += term
    return out.with_data(data, kind=ValueKind.CLIE if np.iscomplexobj(data) else out.kind)


def cov_grad(cfg: Configuration | FormField, q: FormField) -> np.ndarray:
    """Full covariant derivative, shape ``(n, *sites, C(n, k), 3)``.

    Slot alpha holds ``D_alpha q + [A_alpha, q]`` componentwise.
    """
    A = _conn(cfg)
    out = []
    for axis in range(q.domain.ndim):
        Aa = A.data[..., axis, None, :]
        out.append(grid.diff(q.domain, q.data, axis) + bracket(Aa, q.data))
    return np.stack(out)


def cov_grad_adjoint(cfg: Configuration | FormField, T: np.ndarray, degree: int) -> FormField:
    """Adjoint of :func:`cov_grad`: sum_alpha D_alpha^T T_alpha - [A_alpha, T_alpha]."""
    A = _conn(cfg)
    domain = A.domain
    total = 0.0
    for axis in range(domain.ndim):
        Aa = A.data[..., axis, None, :]
        total = total + grid.diff_transpose(domain, T[axis], axis) - bracket(Aa, T[axis])
    kind = ValueKind.CLIE if np.iscomplexobj(total) else ValueKind.LIE
    return FormField(domain, degree, kind, total)


def grad_norm2(T: np.ndarray) -> np.ndarray:
    """Pointwise |T|^2 for a :func:`cov_grad` array."""
    if np.iscomplexobj(T):
        return np.sum(T.real**2 + T.imag**2, axis=(0, -2, -1))
    return np.sum(T * T, axis=(0, -2, -1))


# -- equation residuals ------------------------------------------------------


def w_form(cfg: Configuration) -> FormField:
    """W = F_A - r^2 a ^ a."""
    return curvature(cfg) - wedge_sq(cfg.a) * cfg.r**2


def v_form(cfg: Configuration) -> FormField:
    """V = r d_A a."""
    return cov_d(cfg, cfg.a) * cfg.r


def residuals_asd(cfg: Configuration, orientation: int = +1):
    """(W^+, (d_A a)^-, d_A^dagger a); ``orientation=-1`` swaps the projections."""
    s = orientation
    return (sd_project(w_form(cfg), s), sd_project(cov_d(cfg, cfg.a), -s),
            cov_codiff(cfg, cfg.a))


def residuals_kw(cfg: Configuration):
    """(tau W^+ - (1 - tau) V^+, (1 - tau) W^- + tau V^-, d_A^dagger a)."""
    t = cfg.tau
    W, V = w_form(cfg), v_form(cfg)
    first = sd_project(W * t - V * (1.0 - t), +1)
    second = sd_project(W * (1.0 - t) + V * t, -1)
    return first, second, cov_codiff(cfg, cfg.a)


def single_equation_form(cfg: Configuration) -> FormField:
    """W - sinh(theta) V - cosh(theta) *V with e^theta = (1 - tau) / tau.

    For tau in (0, 1) its self-dual part times tau and its anti-self-dual
    part times (1 - tau) are the first two components of :func:`residuals_kw`.
    """
    t = cfg.tau
    if not 0.0 < t < 1.0:
        raise ValueError("the single-equation form needs tau strictly inside (0, 1)")
    theta = math.log((1.0 - t) / t)
    W, V = w_form(cfg), v_form(cfg)
    return W - V * math.sinh(theta) - hodge_star(V) * math.cosh(theta)


# -- second-order identities -------------------------------------------------


def bochner_residual(cfg: Configuration) -> FormField:
    """nabla_A^dagger nabla_A a + r^2 sum_alpha [a_alpha, [a, a_alpha]] (flat, no Ricci term)."""
    a = cfg.a
    lap = cov_grad_adjoint(cfg, cov_grad(cfg, a), 1)
    quartic = np.zeros_like(a.data)
    for alpha in range(a.domain.ndim):
        quartic += double_ad(a.data[..., alpha, None, :], a.data)
    return lap + a.with_data(quartic * cfg.r**2)


def bochner_scalar_sides(cfg: Configuration) -> tuple[np.ndarray, np.ndarray]:
    """Pointwise sides of the |a|^2 equation.

    Returns ``(1/2 d^dagger d |a|^2 + |nabla_A a|^2 + 2 r^2 |a ^ a|^2, <a, bochner_residual>)``.
    """
    a = cfg.a
    dom = a.domain
    norm = FormField(dom, 0, ValueKind.REAL, a.pointwise_norm2()[..., None, None])
    lhs = (0.5 * codiff(ext_d(norm)).data[..., 0, 0] + grad_norm2(cov_grad(cfg, a))
           + 2.0 * cfg.r**2 * wedge_sq(a).pointwise_norm2())
    rhs = np.sum(inner(a.data, bochner_residual(cfg).data), axis=-1)
    return lhs, rhs


def cov_div_of_F(cfg: Configuration) -> FormField:
    """*d_A*F_A, evaluated literally."""
    F = curvature(cfg)
    return hodge_star(cov_d(cfg, hodge_star(F)))


def cov_div_of_F_rhs(cfg: Configuration) -> FormField:
    """r^2 sum_alpha [a_alpha, nabla_beta a_alpha] in component beta.

    Equal to :func:`cov_div_of_F` on flat-space solutions.
    """
    a = cfg.a
    grad = cov_grad(cfg, a)  # (beta, *sites, alpha, 3)
    out = np.zeros_like(a.data)
    for beta in range(a.domain.ndim):
        out[..., beta, :] = np.sum(bracket(a.data, grad[beta]), axis=-2)
    return a.with_data(out * cfg.r**2)


# -- gauge transformations ---------------------------------------------------


def gauge_connection(A: FormField, g: GaugeField) -> FormField:
    """g A g^{-1} - (dg) g^{-1} in su(2) coordinates."""
    if A.domain != g.domain:
        raise DomainError("gauge and connection live on different domains")
    data = quat_rotate(g.q[..., None, :], A.data)
    qbar = quat_conj(g.q)
    for axis in range(A.domain.ndim):
        dq = grid.diff(A.domain, g.q, axis)
        data[..., axis, :] -= quat_mul(dq, qbar)[..., 1:]
    return A.with_data(data)


def gauge_section(a: FormField, g: GaugeField) -> FormField:
    """g a g^{-1} for any Lie-valued form."""
    return a.with_data(quat_rotate(g.q[..., None, :], a.data))


def gauge_apply(cfg: Configuration, g: GaugeField) -> Configuration:
    return cfg.with_fields(gauge_connection(cfg.A, g), gauge_section(cfg.a, g))


@dataclass(frozen=True)
class CoulombReport:
    iterations: int
    residual: float
    norm_before: float
    norm_after: float
    history: tuple[float, ...]
    norms: tuple[float, ...] = ()


def coulomb_fix(cfg: Configuration, tol: float = 1e-6, max_iter: int = 200,
                return_report: bool = False):
    """Gauge transform ``cfg`` so that d^dagger A vanishes to ``tol`` relative.

    Each step solves (d^dagger d) xi = d^dagger A^g spectrally and updates
    g <- exp(t xi) g, halving t until the L^2 norm of A^g does not grow.
    Critical points of the norm are exactly the Coulomb gauges.
    """
    dom = cfg.domain
    if not dom.is_torus:
        raise DomainError("Coulomb fixing needs a torus")
    A0 = cfg.A
    g = GaugeField.identity(dom)
    Ag = A0
    norm_before = A0.norm()
    norm2 = A0.norm2()
    history, norms = [], []
    # rounding floor for inputs that are pure gauge, where A^g itself goes to zero
    floor = 1e-13 * norm_before / min(dom.spacing)
    residual = codiff(Ag).norm()
    for it in range(max_iter + 1):
        residual = codiff(Ag).norm()
        history.append(residual)
        norms.append(Ag.norm())
        if residual <= tol * Ag.norm() + floor or Ag.norm2() == 0.0:
            fixed = Configuration(Ag, gauge_section(cfg.a, g), cfg.r, cfg.tau)
            report = CoulombReport(it, residual / max(Ag.norm(), 1e-300), norm_before,
                                   Ag.norm(), tuple(history), tuple(norms))
            return (fixed, g, report) if return_report else (fixed, g)
        if it == max_iter:
            break
        xi = grid.solve_laplacian(dom, codiff(Ag).data[..., 0, :])
        step = 1.0
        while True:
            trial = GaugeField.exp(dom, step * xi) @ g
            At = gauge_connection(A0, trial)
            if At.norm2() <= norm2 * (1.0 + 1e-14) or step < 1e-8:
                break
            step *= 0.5
        if step < 1e-8:
            break
        g, Ag, norm2 = trial, At, At.norm2()
    rel = residual / max(Ag.norm(), 1e-300)
    raise ConvergenceError(f"Coulomb fixing stalled at relative residual {rel:.3e}", rel)
