"""Chern-Simons functional, Chern-Weil integrals and integral identities.

Also hosts the constant-coefficient model operator L acting on pairs of
su(2)-valued 1-forms orthogonal to a fixed unit vector.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from . import grid
from .errors import DomainError
from .fields import Configuration, cov_grad, curvature, grad_norm2, v_form, w_form
from .grid import (Domain, DomainKind, FormField, ValueKind, codiff, ext_d, hodge_star,
                   inner_wedge, scalar_integral, scalar_wedge, sd_project, wedge_sq)
from .liealg import bracket, inner

THIRTY_TWO_PI_SQ = 32.0 * math.pi**2


def tau_coefficients(tau: float) -> tuple[float, float, float]:
    """(c, s, N) with c = tau^2 - (1-tau)^2, s = 2 tau (1-tau), N = tau^2 + (1-tau)^2.

    (tau + i(1 - tau))^2 = c + i s and c^2 + s^2 = N^2.
    """
    c = tau**2 - (1.0 - tau) ** 2
    s = 2.0 * tau * (1.0 - tau)
    return c, s, tau**2 + (1.0 - tau) ** 2


@dataclass(frozen=True)
class CSValue:
    value: complex
    weighted_real: float
    tau: float

    @classmethod
    def from_value(cls, value: complex, tau: float) -> "CSValue":
        c, s, N = tau_coefficients(tau)
        return cls(complex(value), float(((c + 1j * s) / N * value).real), tau)


def _require_slice(domain: Domain):
    if domain.kind is not DomainKind.TORUS3:
        raise DomainError("Chern-Simons needs a three-dimensional periodic slice")


def chern_simons_value(Ahat: FormField) -> complex:
    """1/2 sum eps <a_i, D_j a_k> + 1/6 sum eps <a_i, [a_j, a_k]>, times h^3.

    The pairing is complex bilinear; the fiducial connection is the trivial one.
    """
    _require_slice(Ahat.domain)
    dom = Ahat.domain
    a = Ahat.data
    total = 0.0
    for (i, j, k), sign in _EPS3:
        total += 0.5 * sign * np.sum(inner(a[..., i, :], grid.diff(dom, a[..., k, :], j)))
        total += sign / 6.0 * np.sum(inner(a[..., i, :], bracket(a[..., j, :], a[..., k, :])))
    return complex(total * dom.cell_volume)


_EPS3 = tuple(((p[0], p[1], p[2]), grid.perm_sign(p))
              for p in ((0, 1, 2), (1, 2, 0), (2, 0, 1), (0, 2, 1), (2, 1, 0), (1, 0, 2)))


def complex_connection(cfg: Configuration) -> FormField:
    """A + i r a as a complexified 1-form."""
    return FormField(cfg.domain, 1, ValueKind.CLIE, cfg.A.data + 1j * cfg.r * cfg.a.data)


def chern_simons(x: FormField | Configuration, tau: float | None = None) -> CSValue:
    if isinstance(x, Configuration):
        tau = x.tau if tau is None else tau
        x = complex_connection(x)
    return CSValue.from_value(chern_simons_value(x), 1.0 if tau is None else tau)


def cs_gradient(cfg: Configuration) -> tuple[FormField, FormField]:
    """Exact L^2 gradient of the weighted real part with respect to (A, r a).

    The complex gradient of the discrete functional is *F for F = W + iV, so
    grad_A = (c *W - s *V) / N and grad_{ra} = -(s *W + c *V) / N.
    """
    _require_slice(cfg.domain)
    c, s, N = tau_coefficients(cfg.tau)
    sW, sV = hodge_star(w_form(cfg)), hodge_star(v_form(cfg))
    return (sW * c - sV * s) / N, -(sW * s + sV * c) / N


def pontrjagin_integral(Ahat: FormField):
    """(1/32 pi^2) sum_sites h^4 <F ^ F> for a real or complexified connection."""
    if not Ahat.domain.is_torus or Ahat.domain.ndim != 4:
        raise DomainError("the Pontrjagin integral is taken over a four-torus")
    F = curvature(Ahat)
    val = scalar_integral(Ahat.domain, inner_wedge(F, F).data[..., 0, 0]) / THIRTY_TWO_PI_SQ
    return complex(val) if Ahat.kind is ValueKind.CLIE else float(val)


# -- identities ---------------------------------------------------------------


@dataclass(frozen=True)
class IdentityReport:
    identity_id: str
    lhs: float
    rhs: float
    grid: tuple[int, ...]

    @property
    def abs_gap(self) -> float:
        return abs(self.lhs - self.rhs)

    @property
    def rel_gap(self) -> float:
        scale = max(abs(self.lhs), abs(self.rhs))
        return self.abs_gap / scale if scale > 0 else 0.0

    def as_dict(self) -> dict:
        return {"identity_id": self.identity_id, "lhs": self.lhs, "rhs": self.rhs,
                "abs_gap": self.abs_gap, "rel_gap": self.rel_gap, "grid": list(self.grid)}


def identity_2_16(cfg: Configuration) -> tuple[float, float]:
    """(|W|^2 + |V|^2 integrated, ((1 - 2 tau) / N) 32 pi^2 p(A))."""
    _require_torus4(cfg.domain)
    c, s, N = tau_coefficients(cfg.tau)
    lhs = w_form(cfg).norm2() + v_form(cfg).norm2()
    rhs = (1.0 - 2.0 * cfg.tau) / N * THIRTY_TWO_PI_SQ * pontrjagin_integral(cfg.A)
    return lhs, rhs


def pointwise_2_17(cfg: Configuration) -> tuple[np.ndarray, np.ndarray]:
    """Both sides of the exact algebraic identity behind the energy identity.

    With F = W + iV, X = tau W - (1-tau) V, Y = (1-tau) W + tau V,
    X' = (1-tau) W + tau V and Y' = tau W - (1-tau) V:

        Re((tau + i(1-tau))^2 <F ^ F>) = |X^+|^2 + |Y^-|^2 - |X'^+|^2 - |Y'^-|^2.

    Returns (left density, right density); no equation is assumed.
    """
    _require_torus4(cfg.domain)
    t = cfg.tau
    c, s, _ = tau_coefficients(t)
    W, V = w_form(cfg), v_form(cfg)
    F = FormField(cfg.domain, 2, ValueKind.CLIE, W.data + 1j * V.data)
    lhs = ((c + 1j * s) * inner_wedge(F, F).data[..., 0, 0]).real
    X, Y = W * t - V * (1 - t), W * (1 - t) + V * t
    Xp, Yp = W * (1 - t) + V * t, W * t - V * (1 - t)
    rhs = (sd_project(X, 1).pointwise_norm2() + sd_project(Y, -1).pointwise_norm2()
           - sd_project(Xp, 1).pointwise_norm2() - sd_project(Yp, -1).pointwise_norm2())
    return lhs, rhs


def identity_2_17(cfg: Configuration) -> tuple[float, float]:
    """Integrated :func:`pointwise_2_17`."""
    lhs, rhs = pointwise_2_17(cfg)
    return float(scalar_integral(cfg.domain, lhs)), float(scalar_integral(cfg.domain, rhs))


def _energy_density(cfg: Configuration) -> np.ndarray:
    return grad_norm2(cov_grad(cfg, cfg.a)) + 2.0 * cfg.r**2 * wedge_sq(cfg.a).pointwise_norm2()


def green_identity_2_10(cfg: Configuration, p) -> tuple[float, float]:
    """(1/2 |a|^2(p) + sum G_p (|nabla a|^2 + 2 r^2 |a^a|^2) h^4, sum G_p |a|^2/2 h^4)."""
    _require_torus4(cfg.domain)
    G = grid.green_dtd1(cfg.domain, p).data[..., 0, 0]
    a2 = cfg.a.pointwise_norm2()
    lhs = 0.5 * a2[tuple(p)] + scalar_integral(cfg.domain, G * _energy_density(cfg))
    rhs = scalar_integral(cfg.domain, G * 0.5 * a2)
    return float(lhs), float(rhs)


def integral_identity_2_7(cfg: Configuration) -> float:
    """sum (|nabla_A a|^2 + 2 r^2 |a ^ a|^2) h^4; zero on solutions over a closed domain."""
    return float(scalar_integral(cfg.domain, _energy_density(cfg)))


def _require_torus4(domain: Domain):
    if domain.kind is not DomainKind.TORUS4:
        raise DomainError("identity needs a four-torus")


# -- model operator -----------------------------------------------------------


@dataclass(frozen=True)
class ModelOperatorSpec:
    sigma0: tuple[float, float, float]
    e: tuple[float, float, float, float]
    m: float

    def __post_init__(self):
        s = np.asarray(self.sigma0, dtype=float)
        e = np.asarray(self.e, dtype=float)
        if abs(np.linalg.norm(s) - 1.0) > 1e-12 or abs(np.linalg.norm(e) - 1.0) > 1e-12:
            raise ValueError("sigma0 and e must be unit vectors")
        if not self.m > 0:
            raise ValueError("the mass m must be positive")
        object.__setattr__(self, "sigma0", tuple(map(float, s)))
        object.__setattr__(self, "e", tuple(map(float, e)))


def _project_perp(spec: ModelOperatorSpec, x: FormField) -> FormField:
    s = np.asarray(spec.sigma0)
    along = inner(x.data, s)
    if np.max(np.abs(along)) > 1e-12 * max(1.0, x.sup_norm()):
        warnings.warn("model operator input has a component along sigma0; projecting it out",
                      stacklevel=3)
        return x.with_data(x.data - along[..., None] * s)
    return x


def model_L_apply(spec: ModelOperatorSpec, p: FormField, q: FormField):
    """The four blocks of L(p, q).

    Returns ((dq - m e^[s,p])^+, div q + m sum e_a [s, p_a],
             (dp + m e^[s,q])^-, div p - m sum e_a [s, q_a]) with div = -d^dagger.
    """
    p, q = _project_perp(spec, p), _project_perp(spec, q)
    dom = p.domain
    s = np.asarray(spec.sigma0)
    e_form = FormField(dom, 1, ValueKind.REAL,
                       np.broadcast_to(np.asarray(spec.e)[:, None], (*dom.sites, 4, 1)).copy())
    sp, sq = p.with_data(bracket(s, p.data)), q.with_data(bracket(s, q.data))
    m = spec.m
    e = np.asarray(spec.e)[:, None]
    top2 = sd_project(ext_d(q) - scalar_wedge(e_form, sp) * m, +1)
    top0 = -codiff(q).data[..., 0, :] + m * np.sum(e * sp.data, axis=-2)
    bot2 = sd_project(ext_d(p) + scalar_wedge(e_form, sq) * m, -1)
    bot0 = -codiff(p).data[..., 0, :] - m * np.sum(e * sq.data, axis=-2)
    return top2, FormField(dom, 0, ValueKind.LIE, top0[..., None, :]), \
        bot2, FormField(dom, 0, ValueKind.LIE, bot0[..., None, :])


def model_weitzenbock(spec: ModelOperatorSpec, p: FormField, q: FormField,
                      derivative: str = "spectral") -> tuple[float, float]:
    """(integral of |Lx|^2, integral of |nabla x|^2 + 4 m^2 |x|^2).

    2-form blocks are measured with the full-tensor norm (twice the
    increasing-index norm).  ``derivative`` selects centred differences
    (``"discrete"``, for which the identity holds to rounding) or exact
    derivatives of the trigonometric interpolant (``"spectral"``).
    """
    p, q = _project_perp(spec, p), _project_perp(spec, q)
    top2, top0, bot2, bot0 = model_L_apply(spec, p, q)
    lhs = 2.0 * top2.norm2() + top0.norm2() + 2.0 * bot2.norm2() + bot0.norm2()
    dom = p.domain
    op = {"spectral": grid.spectral_diff, "discrete": grid.diff}[derivative]
    grad2 = 0.0
    for x in (p, q):
        for axis in range(dom.ndim):
            grad2 += np.sum(op(dom, x.data, axis) ** 2)
    rhs = dom.cell_volume * grad2 + 4.0 * spec.m**2 * (p.norm2() + q.norm2())
    return float(lhs), float(rhs)
