"""Sequences of configurations and their limits.

Tools for the analysis of a family ``a_n``: rescaling by ``max(1, |a_n|_2)``,
pointwise limsup fields and their zero sets, the Gram endomorphism of a
Lie-valued 1-form and the splitting ``a = nu sigma + frak`` along its top
eigenvector, the +-1 transition data of the resulting line bundle over a
ball cover, curvature concentration sets and Holder exponents near the
zero set.
"""

from __future__ import annotations

import json
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.ndimage import distance_transform_edt

from .errors import AmbiguousOverlapError, DegreeError, DomainError, FitRangeError
from .fields import Configuration, curvature, w_form
from .frequency import AnalysisParams
from .grid import BallSpec, Domain, FormField, ValueKind, codiff, ext_d, wedge_sq

# -- Gram endomorphism and eigen-splitting ---------------------------------------


def _require_lie_1form(a: FormField):
    if a.degree != 1 or a.kind is not ValueKind.LIE:
        raise DegreeError("expected a Lie-valued 1-form")


def t_endomorphism(a: FormField) -> np.ndarray:
    """Per-site Gram matrix sum_alpha a_alpha a_alpha^T, shape ``(*sites, 3, 3)``.

    As an endomorphism of the Lie algebra it sends s to
    sum_alpha a_alpha <a_alpha, s>.
    """
    _require_lie_1form(a)
    return np.einsum("...ai,...aj->...ij", a.data, a.data)


def sym3_eigh(T: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Closed-form eigen-decomposition of symmetric 3x3 matrices.

    Returns eigenvalues in decreasing order, shape ``(..., 3)``, and the unit
    eigenvector of the largest one, shape ``(..., 3)``.  The roots come from
    the trigonometric solution of the characteristic cubic; the eigenvector
    is the largest cross product of two rows of ``T - lam_1``.
    """
    T = np.asarray(T, dtype=float)
    q = np.trace(T, axis1=-2, axis2=-1) / 3.0
    off = T[..., 0, 1] ** 2 + T[..., 0, 2] ** 2 + T[..., 1, 2] ** 2
    diag = (T[..., 0, 0] - q) ** 2 + (T[..., 1, 1] - q) ** 2 + (T[..., 2, 2] - q) ** 2
    p = np.sqrt((diag + 2.0 * off) / 6.0)
    eye = np.eye(3)
    safe = np.where(p > 0, p, 1.0)
    B = (T - q[..., None, None] * eye) / safe[..., None, None]
    half_det = np.clip(np.linalg.det(B) / 2.0, -1.0, 1.0)
    phi = np.arccos(half_det) / 3.0
    l1 = q + 2.0 * p * np.cos(phi)
    l3 = q + 2.0 * p * np.cos(phi + 2.0 * np.pi / 3.0)
    l2 = 3.0 * q - l1 - l3
    lam = np.stack([l1, l2, l3], axis=-1)

    M = T - l1[..., None, None] * eye
    crosses = np.stack([np.cross(M[..., 0, :], M[..., 1, :]),
                        np.cross(M[..., 0, :], M[..., 2, :]),
                        np.cross(M[..., 1, :], M[..., 2, :])], axis=-2)
    sizes = np.sum(crosses**2, axis=-1)
    best = np.argmax(sizes, axis=-1)
    v = np.take_along_axis(crosses, best[..., None, None], axis=-2)[..., 0, :]
    size = np.sqrt(np.take_along_axis(sizes, best[..., None], axis=-1))
    # a multiple of the identity has every direction as eigenvector
    degenerate = size[..., 0] == 0
    v = np.where(degenerate[..., None], np.array([1.0, 0.0, 0.0]), v / np.where(size > 0, size, 1.0))
    return lam, v


def _canonical_sign(v: np.ndarray) -> np.ndarray:
    """Flip each vector so its largest-magnitude coordinate is positive."""
    k = np.argmax(np.abs(v), axis=-1)
    lead = np.take_along_axis(v, k[..., None], axis=-1)
    return np.where(lead < 0, -v, v)


@dataclass(frozen=True, eq=False)
class DecompositionField:
    """a = nu sigma + frak along the top eigenvector sigma of the Gram matrix.

    ``mask`` marks sites whose eigen-gap is below the threshold.  There
    ``sigma``, ``nu`` and ``frak`` hold NaN; ``lam`` and ``gap`` are always
    filled.  ``sigma`` carries the canonical sign of :func:`_canonical_sign`;
    it is defined only up to sign.
    """

    domain: Domain
    lam: np.ndarray
    gap: np.ndarray
    sigma: np.ndarray
    nu: np.ndarray
    frak: np.ndarray
    mask: np.ndarray
    gap_threshold: float

    @property
    def valid(self) -> np.ndarray:
        return ~self.mask

    def nu_form(self) -> FormField:
        """nu as a real 1-form, zero on masked sites."""
        data = np.where(self.mask[..., None], 0.0, self.nu)[..., None]
        return FormField(self.domain, 1, ValueKind.REAL, data)

    def sigma_form(self) -> FormField:
        data = np.where(self.mask[..., None], 0.0, self.sigma)[..., None, :]
        return FormField(self.domain, 0, ValueKind.LIE, data)

    def frak_form(self) -> FormField:
        data = np.where(self.mask[..., None, None], 0.0, self.frak)
        return FormField(self.domain, 1, ValueKind.LIE, data)

    def mask_form(self) -> FormField:
        """1 on masked sites, 0 elsewhere."""
        return FormField(self.domain, 0, ValueKind.REAL, self.mask.astype(float)[..., None, None])

    def invariant_gaps(self, a: FormField) -> dict[str, float]:
        """Largest violations of the four splitting identities on unmasked sites.

        eigenvalue: |lam - |nu|^2| relative to max(1, lam); orthogonal:
        |<sigma, frak_alpha>|; balanced: |sum_alpha nu_alpha frak_alpha|;
        wedge: ||a^a|^2 - 4|nu|^2|frak|^2 - |frak^frak|^2|.
        """
        ok = self.valid
        if not np.any(ok):
            return {"eigenvalue": 0.0, "orthogonal": 0.0, "balanced": 0.0, "wedge": 0.0}
        nu2 = np.sum(self.nu**2, axis=-1)
        frak = self.frak_form()
        frak2 = frak.pointwise_norm2()
        eig = np.abs(self.lam - nu2) / np.maximum(1.0, self.lam)
        orth = np.abs(np.einsum("...i,...ai->...a", self.sigma, self.frak))
        bal = np.sqrt(np.sum(np.einsum("...a,...ai->...i", self.nu, self.frak) ** 2, axis=-1))
        lhs = wedge_sq(a).pointwise_norm2()
        rhs = 4.0 * nu2 * frak2 + wedge_sq(frak).pointwise_norm2()
        return {
            "eigenvalue": float(np.max(eig[ok])),
            "orthogonal": float(np.max(orth[ok])),
            "balanced": float(np.max(bal[ok])),
            "wedge": float(np.max(np.abs(lhs - rhs)[ok])),
        }


def decompose(a: FormField, gap_threshold: float = 0.0) -> DecompositionField:
    """Split a along the top eigenvector of its Gram matrix.

    Sites where ``lam_1 - lam_2 < gap_threshold`` (and sites where a = 0) are
    masked.  ``lam`` is the Rayleigh quotient of sigma, which equals |nu|^2;
    it agrees with the closed-form root to rounding.
    """
    _require_lie_1form(a)
    T = t_endomorphism(a)
    roots, sigma = sym3_eigh(T)
    sigma = _canonical_sign(sigma)
    gap = roots[..., 0] - roots[..., 1]
    mask = (gap < gap_threshold) | (roots[..., 0] <= 0)
    nu = np.einsum("...ai,...i->...a", a.data, sigma)
    lam = np.sum(nu * nu, axis=-1)
    frak = a.data - nu[..., None] * sigma[..., None, :]
    nan = np.nan
    return DecompositionField(
        domain=a.domain,
        lam=np.where(mask, roots[..., 0], lam),
        gap=gap,
        sigma=np.where(mask[..., None], nan, sigma),
        nu=np.where(mask[..., None], nan, nu),
        frak=np.where(mask[..., None, None], nan, frak),
        mask=mask,
        gap_threshold=float(gap_threshold),
    )


# -- local signs and the cocycle ---------------------------------------------------


def ball_sites(domain: Domain, ball: BallSpec) -> np.ndarray:
    """Boolean mask of sites within ``ball`` (periodic distance)."""
    d = domain.displacement(np.asarray(ball.center), domain.mesh())
    return np.sum(d * d, axis=-1) <= ball.radius**2 * (1.0 + 1e-12)


def _nearest_site(domain: Domain, point, region: np.ndarray) -> tuple[int, ...]:
    d = domain.displacement(np.asarray(point, dtype=float), domain.mesh())
    dist = np.where(region, np.sum(d * d, axis=-1), np.inf)
    return tuple(int(i) for i in np.unravel_index(np.argmin(dist), dist.shape))


def local_signs(dec: DecompositionField, region: np.ndarray, start=None) -> np.ndarray:
    """A sign per region site making sigma continuous along grid edges.

    Breadth-first propagation from ``start`` (default: the first region site
    in lexicographic order): each site takes the sign that makes its sigma
    pair non-negatively with the already-signed sigma of the site it was
    reached from.  Returns an int array, 0 outside the region.
    """
    domain = dec.domain
    region = np.asarray(region, dtype=bool)
    if np.any(region & dec.mask):
        raise DomainError("region contains masked sites")
    if not np.any(region):
        raise DomainError("empty region")
    if start is None:
        start = tuple(int(i) for i in np.argwhere(region)[0])
    signs = np.zeros(domain.sites, dtype=int)
    signs[start] = 1
    queue = deque([start])
    while queue:
        site = queue.popleft()
        ref = signs[site] * dec.sigma[site]
        for axis in range(domain.ndim):
            for step in (-1, 1):
                j = site[axis] + step
                if domain.periodic[axis]:
                    j %= domain.sites[axis]
                elif not 0 <= j < domain.sites[axis]:
                    continue
                nb = site[:axis] + (j,) + site[axis + 1:]
                if region[nb] and signs[nb] == 0:
                    signs[nb] = 1 if float(np.dot(dec.sigma[nb], ref)) >= 0 else -1
                    queue.append(nb)
    if np.any(region & (signs == 0)):
        raise DomainError("region is not connected along grid edges")
    return signs


@dataclass
class SignCocycle:
    """Transition signs between the local sign choices on a ball cover.

    ``iota[(i, j)]`` (i < j) is the sign of the mean of
    <s_i sigma, s_j sigma> over the overlap of balls i and j; ``overlap_mean``
    holds that mean.  Pairs with |mean| < 0.5 are listed in ``ambiguous``.
    """

    cover: list[BallSpec]
    iota: dict[tuple[int, int], int]
    overlap_mean: dict[tuple[int, int], float]
    ambiguous: list[tuple[int, int]]
    triples: dict[tuple[int, int, int], int]
    signs: list[np.ndarray] = field(repr=False)

    def transition(self, i: int, j: int) -> int:
        if i == j:
            return 1
        key = (min(i, j), max(i, j))
        if key not in self.iota:
            raise DomainError(f"balls {i} and {j} do not overlap")
        if key in self.ambiguous:
            raise AmbiguousOverlapError(f"overlap of balls {i} and {j} has mean {self.overlap_mean[key]:.3f}")
        return self.iota[key]

    def holonomy(self, chain: Sequence[int]) -> int:
        """Product of transitions along a closed chain of overlapping balls."""
        chain = list(chain)
        if len(chain) < 2:
            raise ValueError("a loop needs at least two balls")
        out = 1
        for i, j in zip(chain, chain[1:] + chain[:1]):
            out *= self.transition(i, j)
        return out

    @property
    def triple_violations(self) -> list[tuple[int, int, int]]:
        return [k for k, v in self.triples.items() if v != 1]

    def to_json(self) -> str:
        return json.dumps({
            "balls": [{"center": list(b.center), "radius": b.radius} for b in self.cover],
            "iota": [[i, j, s] for (i, j), s in sorted(self.iota.items())],
            "ambiguous": [list(k) for k in self.ambiguous],
            "triple_violations": [list(k) for k in self.triple_violations],
        }, indent=2)


def sign_cocycle(dec: DecompositionField, cover: Sequence[BallSpec]) -> SignCocycle:
    """Local signs per ball (propagated from the site nearest its centre) and
    their transition signs on overlaps."""
    cover = list(cover)
    masks = [ball_sites(dec.domain, b) for b in cover]
    signs = []
    for b, m in zip(cover, masks):
        signs.append(local_signs(dec, m, start=_nearest_site(dec.domain, b.center, m)))
    iota, means, ambiguous = {}, {}, []
    for i in range(len(cover)):
        for j in range(i + 1, len(cover)):
            both = masks[i] & masks[j]
            if not np.any(both):
                continue
            # |sigma| = 1, so <s_i sigma, s_j sigma> = s_i s_j
            mean = float(np.mean(signs[i][both] * signs[j][both]))
            means[(i, j)] = mean
            iota[(i, j)] = 1 if mean >= 0 else -1
            if abs(mean) < 0.5:
                ambiguous.append((i, j))
    triples = {}
    for i, j, k in ((i, j, k) for i in range(len(cover)) for j in range(i + 1, len(cover))
                    for k in range(j + 1, len(cover))):
        if (i, j) in iota and (j, k) in iota and (i, k) in iota and np.any(masks[i] & masks[j] & masks[k]):
            triples[(i, j, k)] = iota[(i, j)] * iota[(j, k)] * iota[(i, k)]
    return SignCocycle(cover, iota, means, ambiguous, triples, signs)


def _interior(region: np.ndarray, domain: Domain) -> np.ndarray:
    """Region sites whose nearest neighbours along every axis are in the region."""
    out = region.copy()
    for axis in range(domain.ndim):
        for step in (-1, 1):
            shifted = np.roll(region, -step, axis=axis)
            if not domain.periodic[axis]:
                edge = [slice(None)] * domain.ndim
                edge[axis] = -1 if step > 0 else 0
                shifted[tuple(edge)] = False
            out &= shifted
    return out


@dataclass(frozen=True)
class BoxRegion:
    """An axis-aligned box; ``None`` bounds leave an axis unrestricted.

    Faces should lie on grid lines so that norms use trapezoid weights.
    """

    bounds: tuple[tuple[float, float] | None, ...]

    def masks(self, domain: Domain) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(sites padded by one spacing, evaluation sites, trapezoid weights)."""
        if len(self.bounds) != domain.ndim:
            raise DomainError("box needs one bound per axis")
        x = domain.mesh()
        padded = np.ones(domain.sites, dtype=bool)
        inside = np.ones(domain.sites, dtype=bool)
        weight = np.ones(domain.sites)
        for axis, b in enumerate(self.bounds):
            if b is None:
                continue
            lo, hi = b
            h = domain.spacing[axis]
            tol = 1e-9 * h
            c = x[..., axis]
            padded &= (c >= lo - h - tol) & (c <= hi + h + tol)
            inside &= (c >= lo - tol) & (c <= hi + tol)
            face = (np.abs(c - lo) < tol) | (np.abs(c - hi) < tol)
            weight = np.where(face, 0.5 * weight, weight)
        return padded, inside, weight


def harmonicity_check(dec: DecompositionField,
                      region: np.ndarray | BallSpec | BoxRegion) -> tuple[float, float]:
    """(|d nu|, |d^dagger nu|) over a simply connected region.

    nu is made single valued with :func:`local_signs`.  For a ball or a site
    mask the norms run over sites whose whole difference stencil lies in the
    region.  For a box, signs are set on the box padded by one spacing and
    the norms use trapezoid weights over the box, which keeps them second
    order accurate.
    """
    if isinstance(region, BoxRegion):
        signed, inside, weight = region.masks(dec.domain)
    else:
        if isinstance(region, BallSpec):
            region = ball_sites(dec.domain, region)
        signed = np.asarray(region, dtype=bool)
        inside = _interior(signed, dec.domain)
        weight = np.ones(dec.domain.sites)
    signs = local_signs(dec, signed)
    nu = np.where(signed[..., None], signs[..., None] * np.nan_to_num(dec.nu), 0.0)
    form = FormField(dec.domain, 1, ValueKind.REAL, nu[..., None])
    dv = dec.domain.cell_volume
    d_nu = math.sqrt(dv * np.sum((weight * ext_d(form).pointwise_norm2())[inside]))
    co_nu = math.sqrt(dv * np.sum((weight * codiff(form).pointwise_norm2())[inside]))
    return d_nu, co_nu


# -- ball masses and concentration sets -------------------------------------------


def _ball_kernel(domain: Domain, radius: float) -> np.ndarray:
    origin = np.asarray(domain.origin)
    d = domain.displacement(origin, domain.mesh())
    return (np.sum(d * d, axis=-1) <= radius**2 * (1.0 + 1e-12)).astype(float)


def _check_mass_radius(domain: Domain, radius: float):
    if not domain.is_torus:
        raise DomainError("ball masses need a periodic domain")
    if radius >= 0.5 * min(domain.extents):
        raise DomainError(f"radius {radius} wraps around the torus")


def ball_masses(density: np.ndarray, domain: Domain, radius: float) -> np.ndarray:
    """h^n sum of ``density`` over the radius ball about every site.

    A circular convolution with the ball indicator, evaluated by FFT.
    """
    _check_mass_radius(domain, radius)
    K = np.fft.rfftn(_ball_kernel(domain, radius))
    axes = tuple(range(density.ndim))
    out = np.fft.irfftn(np.fft.rfftn(density) * K, s=density.shape, axes=axes)
    return domain.cell_volume * out


def ball_mass_direct(density: np.ndarray, domain: Domain, center, radius: float) -> float:
    """Direct site sum over one ball (any centre)."""
    return float(domain.cell_volume * np.sum(density[ball_sites(domain, BallSpec(tuple(center), radius))]))


def _density(x) -> tuple[np.ndarray, Domain]:
    if isinstance(x, Configuration):
        return w_form(x).pointwise_norm2(), x.domain
    if isinstance(x, FormField):
        if x.degree != 0 or x.kind is not ValueKind.REAL:
            raise DegreeError("a density is a real 0-form")
        return np.real(x.data[..., 0, 0]), x.domain
    raise TypeError(f"expected a Configuration or a density, got {type(x).__name__}")


def site_radii(domain: Domain, r_max: float) -> np.ndarray:
    """Distinct site-to-site distances up to ``r_max``, starting at 0.

    Ball site sets change only at these radii.
    """
    origin = np.asarray(domain.origin)
    d = np.sqrt(np.sum(domain.displacement(origin, domain.mesh()) ** 2, axis=-1)).ravel()
    d = np.unique(np.round(d[d <= r_max * (1.0 + 1e-12)], 12))
    return d


@dataclass
class ConcentrationSet:
    """Centres of heavy balls with their attached radii and masses.

    ``stage`` is 0 for points found at the base radius and k for points
    found at radius 2^k times it.  ``base_radius`` is the smallest site
    radius at which some ball reaches ``threshold`` (``None`` when none
    does up to ``r_max``).
    """

    domain: Domain
    points: np.ndarray
    sites: list[tuple[int, ...]]
    radii: np.ndarray
    masses: np.ndarray
    stage: np.ndarray
    threshold: float
    base_radius: float | None
    r_max: float

    def __len__(self) -> int:
        return len(self.sites)

    def distance_to(self, x) -> np.ndarray:
        """Distance from each point in ``x`` (shape (..., n)) to the set; inf if empty."""
        x = np.asarray(x, dtype=float)
        if not len(self):
            return np.full(x.shape[:-1], np.inf)
        d = [np.sqrt(np.sum(self.domain.displacement(p, x) ** 2, axis=-1)) for p in self.points]
        return np.min(np.stack(d), axis=0)

    def disjoint(self) -> bool:
        """Whether the attached closed balls are pairwise disjoint."""
        for i in range(len(self)):
            for j in range(i + 1, len(self)):
                dist = np.sqrt(np.sum(self.domain.displacement(self.points[i], self.points[j]) ** 2))
                if dist <= self.radii[i] + self.radii[j]:
                    return False
        return True

    def to_json(self) -> str:
        return json.dumps({
            "threshold": self.threshold,
            "base_radius": self.base_radius,
            "r_max": self.r_max,
            "points": [{"x": [float(v) for v in p], "radius": float(r), "mass": float(m), "stage": int(s)}
                       for p, r, m, s in zip(self.points, self.radii, self.masses, self.stage)],
        }, indent=2)


def _select(masses: np.ndarray, domain: Domain, threshold: float, sep: float,
            taken: list[np.ndarray]) -> list[tuple[int, ...]]:
    """Greedy maximal set of heavy sites, pairwise and from ``taken`` farther than ``sep``.

    Candidates are visited by decreasing mass, ties in lexicographic order.
    Masses are compared after rounding to 1e-12 of the largest one, so
    symmetric ties do not depend on summation order.
    """
    mesh = domain.mesh()
    eligible = masses >= threshold
    for p in taken:
        eligible &= np.sum(domain.displacement(p, mesh) ** 2, axis=-1) > sep**2
    idx = np.argwhere(eligible)
    if not len(idx):
        return []
    key = np.round(masses[tuple(idx.T)] * (1e12 / np.max(masses)))
    order = np.lexsort((*idx.T[::-1], -key))
    chosen: list[tuple[int, ...]] = []
    chosen_pts: list[np.ndarray] = []
    for k in order:
        site = tuple(int(i) for i in idx[k])
        x = mesh[site]
        if all(np.sum(domain.displacement(q, x) ** 2) > sep**2 for q in chosen_pts):
            chosen.append(site)
            chosen_pts.append(x)
    return chosen


def theta_c_construct(w_density: FormField | Configuration, params: AnalysisParams | None = None,
                      r_max: float | None = None) -> ConcentrationSet:
    """Concentration set of a non-negative density at level c^-2 / 8.

    Stage 0: R0 is the smallest site radius at which some ball reaches the
    level (so every smaller ball stays below it); keep a maximal set of
    heavy R0-balls with centres more than 2 R0 apart.  Stage k: keep a
    maximal set of heavy 2^k R0-balls whose centres are more than
    2^(k+1) R0 from each other and from all earlier points.  Stop once
    2^(k-1) R0 exceeds ``r_max`` (default: a quarter of the smallest extent,
    minus one spacing).
    """
    params = params or AnalysisParams()
    w, domain = _density(w_density)
    if np.any(w < 0):
        raise ValueError("density must be non-negative")
    if r_max is None:
        r_max = 0.25 * min(domain.extents) - max(domain.spacing)
    _check_mass_radius(domain, 2.0 * r_max)
    thr = params.c**-2 / 8.0
    empty = ConcentrationSet(domain, np.zeros((0, domain.ndim)), [], np.zeros(0), np.zeros(0),
                             np.zeros(0, dtype=int), thr, None, r_max)
    radii = site_radii(domain, r_max)

    def worst(i):
        return float(np.max(ball_masses(w, domain, radii[i])))

    if worst(len(radii) - 1) < thr:
        return empty
    lo, hi = -1, len(radii) - 1  # worst(lo) < thr <= worst(hi); lo = -1 means none
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if worst(mid) < thr:
            lo = mid
        else:
            hi = mid
    # a single heavy site still gets a ball of positive radius
    R0 = float(radii[hi]) if radii[hi] > 0 else float(radii[1])

    mesh = domain.mesh()
    sites, pts, rad, mass, stage = [], [], [], [], []
    k = 0
    while k == 0 or 2.0 ** (k - 1) * R0 <= r_max:
        R = 2.0**k * R0
        M = ball_masses(w, domain, R)
        for s in _select(M, domain, thr, 2.0 * R, pts):
            sites.append(s)
            pts.append(mesh[s])
            rad.append(R)
            mass.append(M[s])
            stage.append(k)
        k += 1
    return ConcentrationSet(domain, np.array(pts).reshape(-1, domain.ndim), sites, np.array(rad),
                            np.array(mass), np.array(stage, dtype=int), thr, R0, r_max)


def _bound_densities(cfg: Configuration) -> tuple[np.ndarray, np.ndarray]:
    return curvature(cfg).pointwise_norm2(), wedge_sq(cfg.a).pointwise_norm2()


def curvature_bound_sides(cfg: Configuration, center, radius: float,
                          params: AnalysisParams | None = None,
                          densities: tuple[np.ndarray, np.ndarray] | None = None) -> tuple[float, float]:
    """(int_B |F|^2, 2 r^4 int_B |a^a|^2 + c^-2 / 4) over one grid ball."""
    params = params or AnalysisParams()
    F2, q2 = densities if densities is not None else _bound_densities(cfg)
    lhs = ball_mass_direct(F2, cfg.domain, center, radius)
    rhs = 2.0 * cfg.r**4 * ball_mass_direct(q2, cfg.domain, center, radius) + 0.25 * params.c**-2
    return lhs, rhs


def sample_curvature_bound(cfg: Configuration, theta: ConcentrationSet, n: int,
                           rng: np.random.Generator, params: AnalysisParams | None = None,
                           r_min: float | None = None) -> list[tuple[tuple[int, ...], float, float, float]]:
    """``n`` random (site, radius, lhs, rhs) with dist(site, theta) >= kappa_theta radius.

    Radii are uniform in [r_min, theta.r_max]; r_min defaults to one spacing.
    """
    params = params or AnalysisParams()
    dens = _bound_densities(cfg)
    mesh = cfg.domain.mesh()
    r_min = max(cfg.domain.spacing) if r_min is None else r_min
    out = []
    while len(out) < n:
        site = tuple(int(rng.integers(0, s)) for s in cfg.domain.sites)
        radius = float(rng.uniform(r_min, theta.r_max))
        if theta.distance_to(mesh[site]) < params.kappa_theta * radius:
            continue
        lhs, rhs = curvature_bound_sides(cfg, mesh[site], radius, params, dens)
        out.append((site, radius, lhs, rhs))
    return out


# -- sequences ---------------------------------------------------------------------


def rescale(a: FormField) -> tuple[float, FormField]:
    """(r_n, a / r_n) with r_n = max(1, |a|_2)."""
    r = max(1.0, a.norm())
    return r, a / r


def _tail(n: int, tail: int | None) -> list[int]:
    if n < 1:
        raise ValueError("empty family")
    if tail is None:
        tail = max(1, n - n // 2)
    if not 1 <= tail <= n:
        raise ValueError(f"tail must lie in 1..{n}")
    return list(range(n - tail, n))


@dataclass(frozen=True)
class ThetaCandidate:
    """A flagged point with its limsup mass curve over decreasing radii."""

    site: tuple[int, ...]
    point: tuple[float, ...]
    radii: tuple[float, ...]
    masses: tuple[float, ...]


@dataclass
class SequenceReport:
    """Limit data of a finite family.

    ``limsup`` is the per-site maximum of |a_n| over the members listed in
    ``selected`` (the tail); ``zero_mask`` marks sites where it is at most
    ``z_tol``.
    """

    domain: Domain
    scales: list[float]
    limsup: np.ndarray
    zero_mask: np.ndarray
    z_tol: float
    theta: list[ThetaCandidate]
    selected: list[int]

    def to_json(self) -> str:
        return json.dumps({
            "scales": self.scales,
            "selected": self.selected,
            "z_tol": self.z_tol,
            "limsup_max": float(np.max(self.limsup)),
            "zero_sites": int(np.sum(self.zero_mask)),
            "theta": [{"x": list(c.point), "radii": list(c.radii), "masses": list(c.masses)}
                      for c in self.theta],
        }, indent=2)


def limsup_field(seq: Sequence[FormField], tail: int | None = None,
                 z_tol: float | None = None) -> SequenceReport:
    """Pointwise limsup of |a_n| over the tail of a (pre-rescaled) family.

    The tail defaults to the last half of the members.  ``z_tol`` defaults
    to 1e-6 times the largest limsup value.  ``scales`` reports
    max(1, |a_n|_2) of the members as given.
    """
    seq = list(seq)
    selected = _tail(len(seq), tail)
    domain = seq[0].domain
    if any(a.domain != domain for a in seq):
        raise DomainError("members live on different domains")
    norms = np.stack([np.sqrt(seq[i].pointwise_norm2()) for i in selected])
    top = np.max(norms, axis=0)
    if z_tol is None:
        z_tol = 1e-6 * float(np.max(top))
    return SequenceReport(domain, [max(1.0, a.norm()) for a in seq], top, top <= z_tol,
                          float(z_tol), [], selected)


def theta_detect(seq: Sequence[Configuration | FormField], params: AnalysisParams | None = None,
                 threshold: float | None = None, r_max: float | None = None,
                 tail: int | None = None) -> list[ThetaCandidate]:
    """Points where the limsup curvature mass refuses to drop below ``threshold``.

    For dyadic radii r_max, r_max / 2, ... down to the grid spacing, the
    limsup over the tail of int_{B_r(p)} |F - r^2 a^a|^2 is computed at every
    site; sites whose mass at the smallest radius is still at least
    ``threshold`` are flagged and merged (non-maximum suppression within two
    smallest radii).  ``threshold`` defaults to c^-2 / 8; the choice is a
    parameter, not a theorem.
    """
    seq = list(seq)
    if len(seq) < 2:
        raise ValueError("need at least two members")
    params = params or AnalysisParams()
    if threshold is None:
        threshold = params.c**-2 / 8.0
    dens = [_density(x) for x in seq]
    domain = dens[0][1]
    if any(d != domain for _, d in dens):
        raise DomainError("members live on different domains")
    if r_max is None:
        r_max = 0.25 * min(domain.extents)
    h = max(domain.spacing)
    radii = [r_max]
    while radii[-1] / 2 >= h:
        radii.append(radii[-1] / 2)
    chosen = _tail(len(seq), tail)
    curves = np.stack([np.max(np.stack([ball_masses(dens[i][0], domain, r) for i in chosen]), axis=0)
                       for r in radii], axis=-1)
    final = curves[..., -1]
    flagged = np.argwhere(final >= threshold)
    mesh = domain.mesh()
    free = np.ones(domain.sites, dtype=bool)
    out: list[ThetaCandidate] = []
    key = np.round(final[tuple(flagged.T)] * (1e12 / max(np.max(final), 1e-300)))
    for k in np.lexsort((*flagged.T[::-1], -key)):
        site = tuple(int(i) for i in flagged[k])
        if not free[site]:
            continue
        x = mesh[site]
        free &= np.sum(domain.displacement(x, mesh) ** 2, axis=-1) > (2 * radii[-1]) ** 2
        out.append(ThetaCandidate(site, tuple(float(v) for v in x), tuple(radii),
                                  tuple(float(m) for m in curves[site])))
    return out


def analyze_sequence(seq: Sequence[Configuration], params: AnalysisParams | None = None,
                     tail: int | None = None, z_tol: float | None = None,
                     threshold: float | None = None) -> SequenceReport:
    """Rescale each a_n by r_n, take the limsup field and flag concentration points."""
    seq = list(seq)
    scaled = [rescale(cfg.a) for cfg in seq]
    report = limsup_field([a for _, a in scaled], tail=tail, z_tol=z_tol)
    report.scales = [r for r, _ in scaled]
    if len(seq) >= 2:
        report.theta = theta_detect(seq, params, threshold, tail=tail)
    return report


# -- Holder exponent ---------------------------------------------------------------


@dataclass(frozen=True)
class HolderFit:
    """Least-squares slope of log sup|f| against log distance to the zero set."""

    exponent: float
    residual: float
    deltas: tuple[float, ...]
    sups: tuple[float, ...]


def holder_fit(f: FormField | np.ndarray, zero_mask: np.ndarray, ball: BallSpec,
               domain: Domain | None = None, min_levels: int = 3) -> HolderFit:
    """Growth exponent of a scalar field away from its zero set inside a ball.

    Distances to the zero set are Euclidean distances to the nearest masked
    site.  For dyadic delta from radius / sqrt(2) down to sqrt(2) grid
    spacings, the sup of |f| is taken over the octave band
    delta / sqrt(2) <= dist < delta sqrt(2); each
    level contributes the point (dist, |f|) at the band maximiser.  The fit
    is the least-squares line through the logs.
    """
    if isinstance(f, FormField):
        if f.degree != 0 or f.kind is not ValueKind.REAL:
            raise DegreeError("holder_fit takes a real scalar field")
        domain = f.domain
        values = np.abs(np.real(f.data[..., 0, 0]))
    else:
        if domain is None:
            raise ValueError("a bare array needs its domain")
        values = np.abs(np.asarray(f, dtype=float))
    zero_mask = np.asarray(zero_mask, dtype=bool)
    inside = ball_sites(domain, ball)
    if not np.any(zero_mask & inside):
        raise FitRangeError("no zero set inside the ball")
    dist = distance_transform_edt(~zero_mask, sampling=domain.spacing)
    h = max(domain.spacing)
    deltas, sups = [], []
    delta = ball.radius / math.sqrt(2.0)
    while delta >= math.sqrt(2.0) * h * (1.0 - 1e-12):
        band = inside & (dist >= delta / math.sqrt(2.0)) & (dist < delta * math.sqrt(2.0))
        if np.any(band):
            k = np.argmax(np.where(band, values, -np.inf))
            if values.flat[k] > 0:
                deltas.append(float(dist.flat[k]))
                sups.append(float(values.flat[k]))
        delta /= 2.0
    if len(deltas) < min_levels:
        raise FitRangeError(f"only {len(deltas)} distance levels, need {min_levels}")
    x, y = np.log(deltas), np.log(sups)
    slope, icpt = np.polyfit(x, y, 1)
    resid = float(np.sqrt(np.mean((y - (slope * x + icpt)) ** 2)))
    return HolderFit(float(slope), resid, tuple(deltas[::-1]), tuple(sups[::-1]))


# -- model fields ------------------------------------------------------------------


def z2_model_domain(n: int = 24, half_width: float = 1.2, transverse: float = 0.4) -> Domain:
    """A four-torus centred on the origin whose (x1, x2) grid contains z = 0.

    The (x3, x4) extent is ``transverse`` with the same spacing as (x1, x2),
    rounded to an even site count of at least 4.
    """
    h = 2 * half_width / n
    m = max(4, 2 * int(round(transverse / (2 * h))))
    ext_t = m * h
    return Domain.torus4((n, n, m, m), (2 * half_width, 2 * half_width, ext_t, ext_t),
                         origin=(-half_width, -half_width, -ext_t / 2, -ext_t / 2))


def z2_model_field(domain: Domain) -> FormField:
    """Re(sqrt(z) dz) (x) (cos(theta/2) s1 + sin(theta/2) s2), z = x1 + i x2, on the grid."""
    from .frequency import Z2ModelSampler

    return FormField.from_function(domain, 1, ValueKind.LIE, Z2ModelSampler().a, check_periodic=False)


def ring_cover(n_balls: int, ring_radius: float, ball_radius: float,
               center=(0.0, 0.0)) -> list[BallSpec]:
    """Balls centred on a circle in the (x1, x2)-plane, in angular order."""
    t = 2 * np.pi * np.arange(n_balls) / n_balls
    return [BallSpec((center[0] + ring_radius * math.cos(a), center[1] + ring_radius * math.sin(a), 0.0, 0.0),
                     ball_radius) for a in t]
