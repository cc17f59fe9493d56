"""Periodic grids, discrete differential forms and ball quadrature.

Forms live at the grid sites (collocated storage).  A ``FormField`` of
degree k on an n-dimensional domain stores an array of shape
``(*sites, C(n, k), lie_dim)`` whose middle axis runs over strictly
increasing multi-indices in lexicographic order.  The exterior derivative
uses second-order centred differences; its adjoint is the exact transpose
with respect to ``sum_sites h^n <., .>``.
"""

from __future__ import annotations

import itertools
import math
import struct
from dataclasses import dataclass, field
from enum import Enum
from functools import lru_cache
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .errors import BallTooLargeError, DegreeError, DomainError, NonPeriodicFieldError
from .liealg import LIE_DIM, bracket, inner


class DomainKind(str, Enum):
    TORUS4 = "torus4"
    SLAB_T3 = "slab_t3"
    TORUS3 = "torus3"


_KIND_NDIM = {DomainKind.TORUS4: 4, DomainKind.SLAB_T3: 4, DomainKind.TORUS3: 3}


@dataclass(frozen=True)
class Domain:
    """A flat rectangular grid.

    ``extents`` and ``sites`` have one entry per axis; the spacing on axis i is
    ``extents[i] / sites[i]`` and site j sits at ``origin[i] + j * h_i``.  On a
    slab, axis 0 is the flow parameter and is not periodic.
    """

    kind: DomainKind
    extents: tuple[float, ...]
    sites: tuple[int, ...]
    origin: tuple[float, ...] = ()

    def __post_init__(self):
        kind = DomainKind(self.kind)
        object.__setattr__(self, "kind", kind)
        n = _KIND_NDIM[kind]
        ext = tuple(float(e) for e in self.extents)
        sites = tuple(int(s) for s in self.sites)
        origin = tuple(float(o) for o in self.origin) if self.origin else (0.0,) * n
        if len(ext) != n or len(sites) != n or len(origin) != n:
            raise DomainError(f"{kind.value} needs {n} extents, sites and origin entries")
        if any(e <= 0 for e in ext):
            raise DomainError(f"extents must be positive, got {ext}")
        if any(s < 4 or s % 2 for s in sites):
            raise DomainError(f"site counts must be even and >= 4, got {sites}")
        object.__setattr__(self, "extents", ext)
        object.__setattr__(self, "sites", sites)
        object.__setattr__(self, "origin", origin)

    @classmethod
    def torus4(cls, sites: int | Sequence[int], extent: float | Sequence[float] = 2 * math.pi,
               origin: Sequence[float] = ()) -> "Domain":
        return cls(DomainKind.TORUS4, _expand(extent, 4), _expand(sites, 4), tuple(origin))

    @classmethod
    def torus3(cls, sites: int | Sequence[int], extent: float | Sequence[float] = 2 * math.pi,
               origin: Sequence[float] = ()) -> "Domain":
        return cls(DomainKind.TORUS3, _expand(extent, 3), _expand(sites, 3), tuple(origin))

    @classmethod
    def slab(cls, s_sites: int, s_extent: float, sites: int | Sequence[int],
             extent: float | Sequence[float] = 2 * math.pi) -> "Domain":
        return cls(
            DomainKind.SLAB_T3,
            (s_extent, *_expand(extent, 3)),
            (s_sites, *_expand(sites, 3)),
        )

    @property
    def ndim(self) -> int:
        return len(self.sites)

    @property
    def spacing(self) -> tuple[float, ...]:
        return tuple(e / s for e, s in zip(self.extents, self.sites))

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    @property
    def periodic(self) -> tuple[bool, ...]:
        if self.kind is DomainKind.SLAB_T3:
            return (False, True, True, True)
        return (True,) * self.ndim

    @property
    def is_torus(self) -> bool:
        return self.kind in (DomainKind.TORUS4, DomainKind.TORUS3)

    def axis_coords(self, axis: int) -> np.ndarray:
        return self.origin[axis] + self.spacing[axis] * np.arange(self.sites[axis])

    def mesh(self) -> np.ndarray:
        """Site coordinates, shape ``(*sites, ndim)``."""
        grids = np.meshgrid(*[self.axis_coords(i) for i in range(self.ndim)], indexing="ij")
        return np.stack(grids, axis=-1)

    def site_position(self, site: Sequence[int]) -> np.ndarray:
        return np.array([self.origin[i] + self.spacing[i] * site[i] for i in range(self.ndim)])

    def refined(self, factor: int = 2) -> "Domain":
        """Same extents with ``factor`` times as many sites per axis."""
        return Domain(self.kind, self.extents, tuple(s * factor for s in self.sites), self.origin)

    def displacement(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        """y - x, wrapped to the nearest periodic image on periodic axes."""
        d = np.asarray(y, dtype=float) - np.asarray(x, dtype=float)
        for i, per in enumerate(self.periodic):
            if per:
                L = self.extents[i]
                d[..., i] -= L * np.round(d[..., i] / L)
        return d


def _expand(v, n):
    if np.ndim(v) == 0:
        return (v,) * n
    v = tuple(v)
    if len(v) != n:
        raise DomainError(f"expected {n} entries, got {len(v)}")
    return v


class ValueKind(str, Enum):
    REAL = "real"
    LIE = "lie"
    CLIE = "clie"

    @property
    def lie_dim(self) -> int:
        return 1 if self is ValueKind.REAL else LIE_DIM

    @property
    def dtype(self):
        return complex if self is ValueKind.CLIE else float


# -- multi-index bookkeeping ---------------------------------------------


@lru_cache(maxsize=None)
def multi_indices(n: int, k: int) -> tuple[tuple[int, ...], ...]:
    return tuple(itertools.combinations(range(n), k))


@lru_cache(maxsize=None)
def _index_of(n: int, k: int) -> dict[tuple[int, ...], int]:
    return {I: c for c, I in enumerate(multi_indices(n, k))}


def component_index(n: int, I: Sequence[int]) -> int:
    return _index_of(n, len(I))[tuple(I)]


def perm_sign(seq: Sequence[int]) -> int:
    """Sign of the permutation sorting ``seq`` (entries distinct)."""
    seq = list(seq)
    sign = 1
    for i in range(len(seq)):
        for j in range(i + 1, len(seq)):
            if seq[i] > seq[j]:
                sign = -sign
    return sign


@lru_cache(maxsize=None)
def _d_table(n: int, k: int) -> tuple[tuple[int, int, int, int], ...]:
    """Entries (target, axis, source, sign) with (dw)_J = sum sign * D_axis w_source."""
    idx_k = _index_of(n, k)
    rows = []
    for t, J in enumerate(multi_indices(n, k + 1)):
        for m, axis in enumerate(J):
            rest = J[:m] + J[m + 1:]
            rows.append((t, axis, idx_k[rest], -1 if m % 2 else 1))
    return tuple(rows)


@lru_cache(maxsize=None)
def _star_table(n: int, k: int) -> tuple[tuple[int, int, int], ...]:
    """Entries (source, target, sign) with (*w)_J = sign * w_I, J = complement of I."""
    idx = _index_of(n, n - k)
    rows = []
    for s, I in enumerate(multi_indices(n, k)):
        J = tuple(i for i in range(n) if i not in I)
        rows.append((s, idx[J], perm_sign(I + J)))
    return tuple(rows)


@lru_cache(maxsize=None)
def _wedge_table(n: int, j: int, k: int) -> tuple[tuple[int, int, int, int], ...]:
    """Entries (I, J, K, sign): (a ^ b)_K gets sign * a_I b_J."""
    idx_j, idx_k, idx_jk = _index_of(n, j), _index_of(n, k), _index_of(n, j + k)
    rows = []
    for I in multi_indices(n, j):
        for J in multi_indices(n, k):
            if set(I) & set(J):
                continue
            K = tuple(sorted(I + J))
            rows.append((idx_j[I], idx_k[J], idx_jk[K], perm_sign(I + J)))
    return tuple(rows)


# -- form fields ---------------------------------------------------------


@dataclass(frozen=True, eq=False)
class FormField:
    """A k-form on a :class:`Domain` with real, su(2) or complexified values.

    Treated as immutable: operators always return new fields.
    """

    domain: Domain
    degree: int
    kind: ValueKind
    data: np.ndarray = field(repr=False)

    def __post_init__(self):
        kind = ValueKind(self.kind)
        object.__setattr__(self, "kind", kind)
        n = self.domain.ndim
        if not 0 <= self.degree <= n:
            raise DegreeError(f"degree {self.degree} outside 0..{n}")
        shape = (*self.domain.sites, math.comb(n, self.degree), kind.lie_dim)
        data = np.asarray(self.data)
        if np.iscomplexobj(data) and kind is ValueKind.LIE:
            raise ValueError("complex data needs the complexified value kind")
        # real scalar forms may carry complex coefficients (pairings of complex fields)
        data = data.astype(complex if np.iscomplexobj(data) else kind.dtype, copy=False)
        if data.shape != shape:
            raise ValueError(f"data shape {data.shape} does not match {shape}")
        object.__setattr__(self, "data", data)

    # construction

    @classmethod
    def zeros(cls, domain: Domain, degree: int, kind: ValueKind | str = ValueKind.LIE) -> "FormField":
        kind = ValueKind(kind)
        shape = (*domain.sites, math.comb(domain.ndim, degree), kind.lie_dim)
        return cls(domain, degree, kind, np.zeros(shape, dtype=kind.dtype))

    @classmethod
    def from_function(cls, domain: Domain, degree: int, kind: ValueKind | str,
                      func: Callable[[np.ndarray], np.ndarray], check_periodic: bool = True,
                      rtol: float = 1e-9) -> "FormField":
        """Sample ``func`` at the sites.

        ``func`` maps points of shape ``(..., n)`` to values of shape
        ``(..., C(n, k), lie_dim)``; a scalar-valued ``func`` is accepted for
        real 0-forms.  Periodicity is checked by re-evaluating on shifted
        copies of the mesh.  A ``func`` with an ``on_grid(domain)`` method
        returning an array (not None) is sampled through that method instead.
        """
        kind = ValueKind(kind)
        on_grid = getattr(func, "on_grid", None)
        fast = on_grid(domain) if callable(on_grid) else None
        if fast is not None:
            # periodic by construction
            return cls(domain, degree, kind, _shape_values(fast, domain, degree, kind))
        x = domain.mesh()
        values = _shape_values(np.asarray(func(x)), domain, degree, kind)
        if check_periodic:
            scale = max(float(np.max(np.abs(values))), 1.0)
            for axis, per in enumerate(domain.periodic):
                if not per:
                    continue
                shifted = x.copy()
                shifted[..., axis] += domain.extents[axis]
                other = _shape_values(np.asarray(func(shifted)), domain, degree, kind)
                if np.max(np.abs(other - values)) > rtol * scale:
                    raise NonPeriodicFieldError(f"field is not periodic along axis {axis}")
        return cls(domain, degree, kind, values)

    def with_data(self, data: np.ndarray, degree: int | None = None,
                  kind: ValueKind | None = None) -> "FormField":
        return FormField(self.domain, self.degree if degree is None else degree,
                         self.kind if kind is None else kind, data)

    # components

    def component(self, I: Sequence[int]) -> np.ndarray:
        return self.data[..., component_index(self.domain.ndim, I), :]

    @property
    def real(self) -> "FormField":
        kind = ValueKind.LIE if self.kind is ValueKind.CLIE else self.kind
        return FormField(self.domain, self.degree, kind, self.data.real.copy())

    @property
    def imag(self) -> "FormField":
        kind = ValueKind.LIE if self.kind is ValueKind.CLIE else self.kind
        return FormField(self.domain, self.degree, kind, self.data.imag.copy())

    # arithmetic

    def _check(self, other: "FormField"):
        if other.domain != self.domain or other.degree != self.degree:
            raise DomainError("form fields differ in domain or degree")

    def _combine(self, other, data):
        kind = self.kind
        if ValueKind.CLIE in (self.kind, getattr(other, "kind", None)) or np.iscomplexobj(data):
            kind = ValueKind.CLIE
        return FormField(self.domain, self.degree, kind, data)

    def __add__(self, other: "FormField") -> "FormField":
        self._check(other)
        return self._combine(other, self.data + other.data)

    def __sub__(self, other: "FormField") -> "FormField":
        self._check(other)
        return self._combine(other, self.data - other.data)

    def __neg__(self) -> "FormField":
        return self.with_data(-self.data)

    def __mul__(self, c) -> "FormField":
        # a per-site array multiplies every component
        if np.ndim(c) == self.domain.ndim:
            c = np.asarray(c)[..., None, None]
        return self._combine(None, self.data * c)

    __rmul__ = __mul__

    def __truediv__(self, c) -> "FormField":
        return self * (1.0 / c)

    # norms

    def pointwise_norm2(self) -> np.ndarray:
        """|w|^2 per site, summing over increasing multi-indices."""
        d = self.data
        if np.iscomplexobj(d):
            return np.sum(d.real**2 + d.imag**2, axis=(-2, -1))
        return np.sum(d * d, axis=(-2, -1))

    def norm2(self) -> float:
        """Grid L^2 norm squared."""
        return float(self.domain.cell_volume * np.sum(self.pointwise_norm2()))

    def norm(self) -> float:
        return math.sqrt(self.norm2())

    def sup_norm(self) -> float:
        return float(np.sqrt(np.max(self.pointwise_norm2())))


def _shape_values(values, domain, degree, kind):
    n = domain.ndim
    shape = (*domain.sites, math.comb(n, degree), kind.lie_dim)
    if values.shape == tuple(domain.sites) and shape[-2:] == (1, 1):
        values = values[..., None, None]
    return np.broadcast_to(values, shape).astype(kind.dtype, copy=True)


def grid_inner(alpha: FormField, beta: FormField):
    """sum_sites h^n <alpha, beta>; complex bilinear when either is complex."""
    alpha._check(beta)
    return alpha.domain.cell_volume * np.sum(alpha.data * beta.data)


def scalar_integral(domain: Domain, f: np.ndarray):
    """sum_sites h^n f for a per-site array ``f``."""
    return domain.cell_volume * np.sum(f)


# -- difference operators ------------------------------------------------


@lru_cache(maxsize=None)
def _slab_matrix(n_sites: int, h: float) -> np.ndarray:
    """Centred first difference with second-order one-sided end rows."""
    D = np.zeros((n_sites, n_sites))
    for i in range(1, n_sites - 1):
        D[i, i - 1], D[i, i + 1] = -1.0, 1.0
    D[0, :3] = (-3.0, 4.0, -1.0)
    D[-1, -3:] = (1.0, -4.0, 3.0)
    D /= 2.0 * h
    D.setflags(write=False)
    return D


def diff(domain: Domain, arr: np.ndarray, axis: int) -> np.ndarray:
    """Centred first difference along a site axis of ``arr``."""
    h = domain.spacing[axis]
    if domain.periodic[axis]:
        return (np.roll(arr, -1, axis=axis) - np.roll(arr, 1, axis=axis)) / (2.0 * h)
    D = _slab_matrix(domain.sites[axis], h)
    return np.moveaxis(np.tensordot(D, arr, axes=([1], [axis])), 0, axis)


def diff_transpose(domain: Domain, arr: np.ndarray, axis: int) -> np.ndarray:
    """Transpose of :func:`diff` (equal to its negative on periodic axes)."""
    if domain.periodic[axis]:
        return -diff(domain, arr, axis)
    D = _slab_matrix(domain.sites[axis], domain.spacing[axis])
    return np.moveaxis(np.tensordot(D.T, arr, axes=([1], [axis])), 0, axis)


def spectral_diff(domain: Domain, arr: np.ndarray, axis: int) -> np.ndarray:
    """Exact derivative of the trigonometric interpolant (periodic axes only).

    The Nyquist mode is dropped, so the result is exact for fields whose
    spectrum stays below it.
    """
    if not domain.periodic[axis]:
        raise DomainError("spectral derivative needs a periodic axis")
    n = domain.sites[axis]
    k = 2 * np.pi * np.fft.fftfreq(n, d=domain.spacing[axis])
    k[n // 2] = 0.0
    shape = [1] * arr.ndim
    shape[axis] = n
    out = np.fft.ifft(np.fft.fft(arr, axis=axis) * (1j * k).reshape(shape), axis=axis)
    return out if np.iscomplexobj(arr) else out.real


def ext_d(omega: FormField) -> FormField:
    """Exterior derivative by centred differences."""
    n, k = omega.domain.ndim, omega.degree
    if k >= n:
        raise DegreeError(f"d of a {k}-form on a {n}-dimensional domain")
    out = np.zeros((*omega.domain.sites, math.comb(n, k + 1), omega.kind.lie_dim),
                   dtype=omega.data.dtype)
    for t, axis, s, sign in _d_table(n, k):
        term = diff(omega.domain, omega.data[..., s, :], axis)
        if sign > 0:
            out[..., t, :] += term
        else:
            out[..., t, :] -= term
    return FormField(omega.domain, k + 1, omega.kind, out)


def codiff(omega: FormField) -> FormField:
    """Exact adjoint of :func:`ext_d` for the grid inner product."""
    n, k = omega.domain.ndim, omega.degree
    if k < 1:
        raise DegreeError("codifferential of a 0-form")
    out = np.zeros((*omega.domain.sites, math.comb(n, k - 1), omega.kind.lie_dim),
                   dtype=omega.data.dtype)
    for t, axis, s, sign in _d_table(n, k - 1):
        term = diff_transpose(omega.domain, omega.data[..., t, :], axis)
        if sign > 0:
            out[..., s, :] += term
        else:
            out[..., s, :] -= term
    return FormField(omega.domain, k - 1, omega.kind, out)


def hodge_star(omega: FormField) -> FormField:
    """Euclidean Hodge star for the orientation dx1 ^ ... ^ dxn."""
    n, k = omega.domain.ndim, omega.degree
    out = np.empty((*omega.domain.sites, math.comb(n, n - k), omega.kind.lie_dim),
                   dtype=omega.data.dtype)
    for s, t, sign in _star_table(n, k):
        out[..., t, :] = sign * omega.data[..., s, :]
    return FormField(omega.domain, n - k, omega.kind, out)


def sd_project(omega: FormField, sign: int = +1) -> FormField:
    """Self-dual (sign=+1) or anti-self-dual (sign=-1) part of a 2-form in 4D."""
    if omega.domain.ndim != 4 or omega.degree != 2:
        raise DegreeError("self-duality is defined for 2-forms in four dimensions")
    if sign not in (1, -1):
        raise ValueError("sign must be +1 or -1")
    star = hodge_star(omega)
    return omega.with_data(0.5 * (omega.data + sign * star.data))


# -- wedge products ------------------------------------------------------


def _wedge(alpha: FormField, beta: FormField, op, kind: ValueKind) -> FormField:
    if alpha.domain != beta.domain:
        raise DomainError("wedge of fields on different domains")
    n, j, k = alpha.domain.ndim, alpha.degree, beta.degree
    if j + k > n:
        raise DegreeError(f"wedge of degrees {j} and {k} exceeds {n}")
    dtype = np.result_type(alpha.data, beta.data)
    out = np.zeros((*alpha.domain.sites, math.comb(n, j + k), kind.lie_dim), dtype=dtype)
    for I, J, K, sign in _wedge_table(n, j, k):
        term = op(alpha.data[..., I, :], beta.data[..., J, :])
        if sign > 0:
            out[..., K, :] += term
        else:
            out[..., K, :] -= term
    if np.iscomplexobj(out) and kind is ValueKind.LIE:
        kind = ValueKind.CLIE
    return FormField(alpha.domain, j + k, kind, out)


def lie_wedge(alpha: FormField, beta: FormField) -> FormField:
    """Wedge with the bracket as coefficient product.

    For 1-forms ``(alpha ^ beta)_{mu nu} = [alpha_mu, beta_nu] - [alpha_nu, beta_mu]``.
    The matrix-product square ``a ^ a`` is half of ``lie_wedge(a, a)``; see
    :func:`wedge_sq`.
    """
    return _wedge(alpha, beta, bracket, ValueKind.LIE)


def wedge_sq(a: FormField) -> FormField:
    """a ^ a for a Lie-valued 1-form: component [a_mu, a_nu]."""
    if a.degree != 1:
        raise DegreeError("wedge_sq expects a 1-form")
    n = a.domain.ndim
    out = np.empty((*a.domain.sites, math.comb(n, 2), LIE_DIM), dtype=a.data.dtype)
    for c, (mu, nu) in enumerate(multi_indices(n, 2)):
        out[..., c, :] = bracket(a.data[..., mu, :], a.data[..., nu, :])
    return FormField(a.domain, 2, a.kind, out)


def inner_wedge(alpha: FormField, beta: FormField) -> FormField:
    """Wedge with the invariant pairing as coefficient product (a real form)."""

    def op(u, v):
        return inner(u, v)[..., None]

    return _wedge(alpha, beta, op, ValueKind.REAL)


def scalar_wedge(alpha: FormField, beta: FormField) -> FormField:
    """Wedge of a real form with a real or Lie-valued form."""
    kind = beta.kind if alpha.kind is ValueKind.REAL else alpha.kind
    return _wedge(alpha, beta, lambda u, v: u * v, kind)


# -- Green's function ----------------------------------------------------


def laplacian_symbol(domain: Domain) -> np.ndarray:
    """Symbol of d^dagger d on 0-forms: sum_i sin^2(k_i h_i) / h_i^2."""
    lam = np.zeros(domain.sites)
    for i, (n, h) in enumerate(zip(domain.sites, domain.spacing)):
        k = 2 * np.pi * np.fft.fftfreq(n, d=h)
        shape = [1] * domain.ndim
        shape[i] = n
        lam = lam + (np.sin(k * h) ** 2 / h**2).reshape(shape)
    return lam


def green_dtd1(domain: Domain, p: Sequence[int]) -> FormField:
    """Discrete Green's function of d^dagger d + 1 with pole at site ``p``."""
    if not domain.is_torus:
        raise DomainError("the spectral Green's function needs a torus")
    delta = np.zeros(domain.sites)
    delta[tuple(p)] = 1.0 / domain.cell_volume
    G = np.fft.ifftn(np.fft.fftn(delta) / (laplacian_symbol(domain) + 1.0)).real
    return FormField(domain, 0, ValueKind.REAL, G[..., None, None])


def solve_laplacian(domain: Domain, rhs: np.ndarray, axes: int | None = None) -> np.ndarray:
    """Least-squares solution of (d^dagger d) u = rhs on a torus, per trailing component.

    Modes where the centred-difference symbol vanishes are set to zero.
    """
    if not domain.is_torus:
        raise DomainError("the spectral solver needs a torus")
    n = domain.ndim
    lam = laplacian_symbol(domain)
    lam = lam.reshape(lam.shape + (1,) * (rhs.ndim - n))
    ax = tuple(range(n))
    rh = np.fft.fftn(rhs, axes=ax)
    with np.errstate(divide="ignore", invalid="ignore"):
        uh = np.where(lam > 1e-12 * lam.max(), rh / lam, 0.0)
    u = np.fft.ifftn(uh, axes=ax)
    return u if np.iscomplexobj(rhs) else u.real


# -- interpolation and quadrature ----------------------------------------


def interpolate(domain: Domain, arr: np.ndarray, points: np.ndarray) -> np.ndarray:
    """Multilinear interpolation of a per-site array at arbitrary points.

    ``arr`` has shape ``(*sites, ...)``; the result has shape
    ``(*points.shape[:-1], ...)``.  Periodic axes wrap, others clamp.
    """
    n = domain.ndim
    pts = np.asarray(points, dtype=float)
    lead = pts.shape[:-1]
    pts = pts.reshape(-1, n)
    idx0, frac = [], []
    for i in range(n):
        u = (pts[:, i] - domain.origin[i]) / domain.spacing[i]
        N = domain.sites[i]
        if not domain.periodic[i]:
            u = np.clip(u, 0.0, N - 1 - 1e-12)
        f = np.floor(u)
        idx0.append(f.astype(np.int64))
        frac.append(u - f)
    tail = arr.shape[n:]
    out = np.zeros((pts.shape[0], *tail), dtype=arr.dtype)
    for corner in itertools.product((0, 1), repeat=n):
        w = np.ones(pts.shape[0])
        index = []
        for i, c in enumerate(corner):
            w = w * (frac[i] if c else 1.0 - frac[i])
            j = idx0[i] + c
            j = np.mod(j, domain.sites[i]) if domain.periodic[i] else np.minimum(j, domain.sites[i] - 1)
            index.append(j)
        out += w.reshape((-1,) + (1,) * len(tail)) * arr[tuple(index)]
    return out.reshape(*lead, *tail)


@dataclass(frozen=True)
class BallSpec:
    center: tuple[float, ...]
    radius: float

    def __post_init__(self):
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))
        if self.radius <= 0:
            raise ValueError("ball radius must be positive")


@dataclass(frozen=True)
class QuadratureRule:
    """Product rule on B_r subset R^4.

    Radius: Gauss-Legendre with weight rho^3.  Sphere S^3: Hopf coordinates
    x = (c cos a, c sin a, s cos b, s sin b) with c = cos(eta); Gauss-Legendre
    in c with weight c, and the trapezoid rule (spectrally accurate) in a and b.
    The (x1, x2)-plane singularities of the two-valued model forms sit at
    c = 0, where the weight makes the integrands polynomial in c.
    """

    n_radial: int = 16
    n_polar: int = 16
    n_azimuth: int = 24

    @property
    def _sphere(self):
        return _sphere_rule(self.n_polar, self.n_azimuth)

    def sphere_nodes(self, ball: BallSpec) -> tuple[np.ndarray, np.ndarray]:
        """Points on the sphere of radius ``ball.radius`` and area weights."""
        dirs, w = self._sphere
        r = ball.radius
        return np.asarray(ball.center) + r * dirs, w * r**3

    def ball_nodes(self, ball: BallSpec) -> tuple[np.ndarray, np.ndarray]:
        dirs, w = self._sphere
        t, wt = np.polynomial.legendre.leggauss(self.n_radial)
        rho = 0.5 * ball.radius * (t + 1.0)
        wr = 0.5 * ball.radius * wt * rho**3
        pts = np.asarray(ball.center) + rho[:, None, None] * dirs[None, :, :]
        weights = wr[:, None] * w[None, :]
        return pts.reshape(-1, 4), weights.reshape(-1)


@lru_cache(maxsize=None)
def _sphere_rule(n_polar: int, n_azimuth: int):
    t, wt = np.polynomial.legendre.leggauss(n_polar)
    c = 0.5 * (t + 1.0)
    wc = 0.5 * wt * c
    ang = 2 * np.pi * np.arange(n_azimuth) / n_azimuth + np.pi / n_azimuth
    wa = 2 * np.pi / n_azimuth
    C, A, B = np.meshgrid(c, ang, ang, indexing="ij")
    S = np.sqrt(1.0 - C * C)
    dirs = np.stack([C * np.cos(A), C * np.sin(A), S * np.cos(B), S * np.sin(B)], axis=-1)
    w = np.broadcast_to(wc[:, None, None] * wa * wa, C.shape)
    dirs = dirs.reshape(-1, 4)
    dirs.setflags(write=False)
    w = np.ascontiguousarray(w).reshape(-1)
    w.setflags(write=False)
    return dirs, w


DEFAULT_RULE = QuadratureRule()

Sampler = Callable[[np.ndarray], np.ndarray]


def _check_ball(domain: Domain | None, ball: BallSpec):
    if domain is None:
        return
    if domain.ndim != 4:
        raise DomainError("ball quadrature is four-dimensional")
    if ball.radius >= 0.5 * min(domain.extents):
        raise BallTooLargeError(
            f"radius {ball.radius} is not below half the smallest extent {min(domain.extents)}")


def _evaluate(f, points: np.ndarray) -> np.ndarray:
    if isinstance(f, FormField):
        if f.degree != 0 or f.kind is not ValueKind.REAL:
            raise DegreeError("quadrature integrates real 0-forms")
        return interpolate(f.domain, f.data[..., 0, 0], points)
    return np.asarray(f(points))


def ball_integrate(f: FormField | Sampler, ball: BallSpec,
                   rule: QuadratureRule = DEFAULT_RULE) -> float:
    """Integral of a real 0-form (grid field or sampler) over the ball."""
    _check_ball(f.domain if isinstance(f, FormField) else None, ball)
    pts, w = rule.ball_nodes(ball)
    return float(np.sum(w * _evaluate(f, pts)))


def sphere_integrate(f: FormField | Sampler, ball: BallSpec,
                     rule: QuadratureRule = DEFAULT_RULE) -> float:
    """Integral over the boundary sphere with the round measure."""
    _check_ball(f.domain if isinstance(f, FormField) else None, ball)
    pts, w = rule.sphere_nodes(ball)
    return float(np.sum(w * _evaluate(f, pts)))


# -- field dumps ---------------------------------------------------------

_MAGIC = b"KWF1"
_HEADER = struct.Struct("<4sII4I4dI")
_KIND_CODE = {ValueKind.REAL: 0, ValueKind.LIE: 1, ValueKind.CLIE: 2}
_DOMAIN_CODE = {DomainKind.TORUS4: 0, DomainKind.SLAB_T3: 1, DomainKind.TORUS3: 2}
assert _HEADER.size == 64


def dump_bytes(omega: FormField) -> bytes:
    """Serialise a field: 64-byte header then little-endian f64 data.

    A 3-dimensional field is written with a leading site axis of length 1
    and extent 0.  Complex values are stored as 6 reals (real parts first).
    """
    dom = omega.domain
    sites, extents = list(dom.sites), list(dom.extents)
    if dom.ndim == 3:
        sites, extents = [1] + sites, [0.0] + extents
    header = _HEADER.pack(_MAGIC, omega.degree, _KIND_CODE[omega.kind], *sites, *extents,
                          _DOMAIN_CODE[dom.kind])
    data = omega.data
    if omega.kind is ValueKind.CLIE:
        data = np.concatenate([data.real, data.imag], axis=-1)
    return header + np.ascontiguousarray(data, dtype="<f8").tobytes()


def load_bytes(buf: bytes) -> FormField:
    magic, degree, kcode, *rest = _HEADER.unpack(buf[:_HEADER.size])
    if magic != _MAGIC:
        raise ValueError("not a field dump")
    sites, extents, dcode = rest[:4], rest[4:8], rest[8]
    dkind = {v: k for k, v in _DOMAIN_CODE.items()}[dcode]
    kind = {v: k for k, v in _KIND_CODE.items()}[kcode]
    if dkind is DomainKind.TORUS3:
        sites, extents = sites[1:], extents[1:]
    dom = Domain(dkind, tuple(extents), tuple(sites))
    width = 2 * LIE_DIM if kind is ValueKind.CLIE else kind.lie_dim
    shape = (*dom.sites, math.comb(dom.ndim, degree), width)
    data = np.frombuffer(buf, dtype="<f8", offset=_HEADER.size).reshape(shape)
    if kind is ValueKind.CLIE:
        data = data[..., :LIE_DIM] + 1j * data[..., LIE_DIM:]
    return FormField(dom, degree, kind, data.astype(kind.dtype))


def save_field(path: str | Path, omega: FormField) -> None:
    Path(path).write_bytes(dump_bytes(omega))


def load_field(path: str | Path) -> FormField:
    return load_bytes(Path(path).read_bytes())
