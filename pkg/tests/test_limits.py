import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import richardson_ratio
from kwflow import limits as L
from kwflow.errors import AmbiguousOverlapError, DomainError, FitRangeError
from kwflow.fields import Configuration, curvature, w_form
from kwflow.frequency import AnalysisParams, Z2ModelSampler
from kwflow.grid import BallSpec, Domain, FormField, ValueKind, load_field, save_field, wedge_sq
from kwflow.samples import band_limited, random_field

D4 = Domain.torus4(4)
PARAMS = AnalysisParams()
THR = PARAMS.c**-2 / 8.0


def constant_lie(domain, rows):
    """A constant Lie-valued 1-form; rows[alpha] is the coefficient of dx^alpha."""
    data = np.broadcast_to(np.asarray(rows, dtype=float), (*domain.sites, 4, 3)).copy()
    return FormField(domain, 1, ValueKind.LIE, data)


# -- Gram endomorphism -------------------------------------------------------------


def test_gram_of_single_term():
    T = L.t_endomorphism(constant_lie(D4, [[1, 0, 0], [0, 0, 0], [0, 0, 0], [0, 0, 0]]))
    assert np.array_equal(T[0, 0, 0, 0], np.diag([1.0, 0.0, 0.0]))


def test_gram_of_two_terms():
    eps = 0.3
    T = L.t_endomorphism(constant_lie(D4, [[1, 0, 0], [0, eps, 0], [0, 0, 0], [0, 0, 0]]))
    assert np.allclose(T[1, 2, 3, 0], np.diag([1.0, eps**2, 0.0]), atol=1e-15)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_gram_trace_and_positivity(seed):
    a = random_field(D4, 1, "lie", np.random.default_rng(seed))
    T = L.t_endomorphism(a)
    assert np.max(np.abs(np.trace(T, axis1=-2, axis2=-1) - a.pointwise_norm2())) <= 1e-12
    assert np.allclose(T, np.swapaxes(T, -1, -2))
    assert np.min(np.linalg.eigvalsh(T)) >= -1e-12


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_closed_form_eigen_against_lapack(seed):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(64, 3, 3))
    T = X + np.swapaxes(X, -1, -2)
    lam, v = L.sym3_eigh(T)
    ref = np.linalg.eigvalsh(T)[..., ::-1]
    scale = np.max(np.abs(ref), axis=-1, keepdims=True)
    assert np.max(np.abs(lam - ref) / scale) <= 1e-12
    assert np.allclose(np.sum(v * v, axis=-1), 1.0, atol=1e-14)
    resid = np.einsum("...ij,...j->...i", T, v) - lam[..., :1] * v
    gap = (ref[..., 0] - ref[..., 1])[:, None]
    assert np.max(np.abs(resid) * gap / scale**2) <= 1e-12


def test_closed_form_eigen_degenerate_cases():
    lam, v = L.sym3_eigh(np.stack([np.zeros((3, 3)), 2.0 * np.eye(3), np.diag([5.0, 5.0, 1.0])]))
    assert np.allclose(lam, [[0, 0, 0], [2, 2, 2], [5, 5, 1]], atol=1e-14)
    assert np.allclose(np.sum(v * v, axis=-1), 1.0)


# -- splitting -----------------------------------------------------------------------


def test_rank_one_split():
    dec = L.decompose(constant_lie(D4, [[1, 0, 0], [0, 0, 0], [0, 0, 0], [0, 0, 0]]), 0.5)
    assert not dec.mask.any()
    assert np.allclose(np.abs(dec.sigma), [1, 0, 0])
    assert np.allclose(dec.lam, 1.0)
    assert np.max(np.abs(dec.frak)) == 0.0


def test_two_term_split_pins_wedge_norm():
    a = constant_lie(D4, [[1, 0, 0], [0, 0.1, 0], [0, 0, 0], [0, 0, 0]])
    dec = L.decompose(a, 0.5)
    assert np.allclose(dec.lam, 1.0, atol=1e-15)
    assert np.allclose(np.sqrt(dec.frak_form().pointwise_norm2()), 0.1, atol=1e-15)
    direct = wedge_sq(a).pointwise_norm2()
    split = 4.0 * np.sum(dec.nu**2, -1) * dec.frak_form().pointwise_norm2()
    assert np.allclose(direct, 0.04, atol=1e-15)
    assert np.allclose(split, 0.04, atol=1e-15)


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_split_identities_on_random_fields(seed):
    a = random_field(Domain.torus4(6), 1, "lie", np.random.default_rng(seed))
    dec = L.decompose(a, 0.1)
    assert np.all(dec.gap[dec.valid] >= 0.1)
    gaps = dec.invariant_gaps(a)
    assert gaps["eigenvalue"] <= 4 * np.finfo(float).eps
    assert gaps["orthogonal"] <= 1e-12
    assert gaps["balanced"] <= 1e-12
    assert gaps["wedge"] <= 1e-11
    # the Rayleigh quotient and the closed-form root agree
    roots, _ = L.sym3_eigh(L.t_endomorphism(a))
    assert np.max(np.abs(dec.lam - roots[..., 0])) <= 1e-12 * max(1.0, np.max(roots))


def test_masked_sites_are_not_filled(rng):
    a = random_field(D4, 1, "lie", rng)
    dec = L.decompose(a, 1e9)
    assert dec.mask.all()
    assert np.isnan(dec.sigma).all() and np.isnan(dec.nu).all() and np.isnan(dec.frak).all()
    assert np.array_equal(dec.mask_form().data[..., 0, 0], np.ones(D4.sites))
    assert L.decompose(FormField.zeros(D4, 1), 0.0).mask.all()


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), lam=st.floats(1e-3, 1e3))
def test_sigma_direction_is_scale_invariant(seed, lam):
    a = random_field(D4, 1, "lie", np.random.default_rng(seed))
    base = L.decompose(a, 0.0)
    scaled = L.decompose(a * lam, 0.0)
    ok = base.valid & scaled.valid
    assert np.max(np.abs(np.abs(np.sum(base.sigma * scaled.sigma, -1)) - 1.0)[ok]) <= 1e-12
    # powers of two scale every intermediate exactly
    exact = L.decompose(a * 2.0 ** round(math.log2(lam)), 0.0)
    assert np.array_equal(exact.sigma[ok], base.sigma[ok])


def test_z2_model_split():
    dom = L.z2_model_domain(24)
    a = L.z2_model_field(dom)
    dec = L.decompose(a, 0.15)
    x = dom.mesh()
    z = np.abs(x[..., 0] + 1j * x[..., 1])
    # the gap is |nu|^2 = |z|; no site sits on |z| = 0.15
    assert np.array_equal(dec.mask, z < 0.15)
    assert np.max(np.abs(dec.frak[dec.valid])) <= 1e-10
    model = Z2ModelSampler(lie=False).nu(x)
    err = np.minimum(np.max(np.abs(dec.nu - model), -1), np.max(np.abs(dec.nu + model), -1))
    assert np.max(err[dec.valid]) <= 1e-12
    gaps = dec.invariant_gaps(a)
    assert max(gaps.values()) <= 1e-12


def test_split_fields_dump(tmp_path):
    dom = L.z2_model_domain(24)
    dec = L.decompose(L.z2_model_field(dom), 0.1)
    for name, f in [("sigma", dec.sigma_form()), ("nu", dec.nu_form()), ("mask", dec.mask_form())]:
        save_field(tmp_path / f"{name}.kwf", f)
        back = load_field(tmp_path / f"{name}.kwf")
        assert back.degree == f.degree and back.kind is f.kind
        assert np.array_equal(back.data, f.data)


# -- sign cocycle --------------------------------------------------------------------


def test_consistent_sigma_has_trivial_cocycle(rng):
    dom = L.z2_model_domain(24)
    cfg = Configuration.flat(dom, [0.4, -0.3, 0.2, 0.5], direction=(0.0, 0.6, -0.8))
    dec = L.decompose(cfg.a, 0.1)
    cover = L.ring_cover(8, 0.6, 0.35) + [BallSpec((0.0, 0.0, 0.0, 0.0), 0.3)]
    cc = L.sign_cocycle(dec, cover)
    assert set(cc.iota.values()) == {1}
    assert cc.holonomy(range(8)) == 1
    assert not cc.triple_violations


@pytest.mark.parametrize("n", [24, 48])
def test_z2_holonomy_stable_under_refinement(n):
    dec = L.decompose(L.z2_model_field(L.z2_model_domain(n)), 0.1)
    for balls in (8, 16, 32):  # each cover contains the previous one
        around = L.sign_cocycle(dec, L.ring_cover(balls, 0.6, 0.35))
        assert around.holonomy(range(balls)) == -1
        assert not around.ambiguous and not around.triple_violations
        assert len(around.triples) > 0 or balls == 8
        away = L.sign_cocycle(dec, L.ring_cover(balls, 0.3, 0.2, center=(0.75, 0.0)))
        assert away.holonomy(range(balls)) == 1
        assert not away.triple_violations


def test_cocycle_is_symmetric():
    dec = L.decompose(L.z2_model_field(L.z2_model_domain(24)), 0.1)
    cc = L.sign_cocycle(dec, L.ring_cover(8, 0.6, 0.35))
    for i, j in cc.iota:
        assert cc.transition(i, j) == cc.transition(j, i)
    assert cc.holonomy(list(range(8))[::-1]) == -1
    json.loads(cc.to_json())


def test_cocycle_errors(rng):
    dec = L.decompose(L.z2_model_field(L.z2_model_domain(24)), 0.1)
    with pytest.raises(DomainError):
        L.sign_cocycle(dec, [BallSpec((0.05, 0.0, 0.0, 0.0), 0.3)])
    cc = L.sign_cocycle(dec, L.ring_cover(8, 0.6, 0.35))
    with pytest.raises(DomainError):
        cc.transition(0, 4)
    # both balls contain the zero line (offset off the sites, so nothing is
    # masked): each local sign has a cut, and the overlap sees both sides
    dom = L.z2_model_domain(24)
    a = FormField.from_function(dom, 1, "lie", Z2ModelSampler(center=(0.05, 0.05)).a, check_periodic=False)
    cc = L.sign_cocycle(L.decompose(a, 0.0), [BallSpec((-0.2, -0.1, 0.0, 0.0), 0.6),
                                              BallSpec((0.0, 0.3, 0.0, 0.0), 0.6)])
    assert cc.ambiguous == [(0, 1)]
    with pytest.raises(AmbiguousOverlapError):
        cc.holonomy([0, 1])


# -- harmonicity ---------------------------------------------------------------------


def test_constant_nu_is_harmonic():
    dom = L.z2_model_domain(24)
    dec = L.decompose(constant_lie(dom, [[1, 0, 0], [0, 0, 0], [0, 0, 0], [0, 0, 0]]), 0.1)
    box = L.BoxRegion(((-0.5, 0.5), (-0.5, 0.5), None, None))
    assert L.harmonicity_check(dec, box) == (0.0, 0.0)


def test_exact_polynomial_nu_is_harmonic():
    # nu = d(x1 x2): centred differences are exact on linear coefficients
    dom = L.z2_model_domain(24)

    def f(x):
        out = np.zeros((*x.shape[:-1], 4, 3))
        out[..., 0, 0], out[..., 1, 0] = x[..., 1], x[..., 0]
        return out

    dec = L.decompose(FormField.from_function(dom, 1, "lie", f, check_periodic=False), 0.01)
    for region in (L.BoxRegion(((0.3, 0.9), (0.2, 0.8), None, None)), BallSpec((-0.6, 0.5, 0.0, 0.0), 0.3)):
        d_nu, co_nu = L.harmonicity_check(dec, region)
        assert d_nu <= 1e-12 and co_nu <= 1e-12


def test_z2_nu_harmonic_to_second_order():
    # the box straddles the branch cut of the rotating frame
    box = L.BoxRegion(((-1.0, -0.4), (-0.3, 0.3), None, None))
    norms = [L.harmonicity_check(L.decompose(L.z2_model_field(L.z2_model_domain(n)), 0.1), box)
             for n in (24, 48)]
    for k in range(2):
        assert norms[1][k] < norms[0][k] < 1e-2
        assert 3.5 <= richardson_ratio(norms[0][k], norms[1][k]) <= 4.5


# -- concentration sets --------------------------------------------------------------

BUMP_DOMAIN = Domain.torus4(16, 4.0, origin=(-2.0,) * 4)


def bump(center, width=0.3, mass=10 * THR, domain=BUMP_DOMAIN):
    d = domain.displacement(np.asarray(center, dtype=float), domain.mesh())
    g = np.exp(-np.sum(d * d, -1) / (2 * width**2))
    return g * mass / (domain.cell_volume * g.sum())


def density(arr, domain=BUMP_DOMAIN):
    return FormField(domain, 0, ValueKind.REAL, arr[..., None, None])


def test_ball_masses_match_direct_sums(rng):
    w = bump((0.1, -0.2, 0.3, 0.0)) + rng.random(BUMP_DOMAIN.sites) * THR / 64
    mesh = BUMP_DOMAIN.mesh()
    for radius in (0.3, 0.6, 0.95):
        M = L.ball_masses(w, BUMP_DOMAIN, radius)
        for _ in range(10):
            site = tuple(rng.integers(0, 16, size=4))
            assert M[site] == pytest.approx(L.ball_mass_direct(w, BUMP_DOMAIN, mesh[site], radius),
                                            rel=1e-12, abs=1e-20)


def brute_force_stage0(w, domain, r_max):
    """Pairwise-distance oracle for the base radius and the first selection."""
    x = domain.mesh().reshape(-1, 4)
    flat = w.ravel()
    diff = x[:, None, :] - x[None, :, :]
    L_ = np.asarray(domain.extents)
    diff -= L_ * np.round(diff / L_)
    dist = np.sqrt(np.sum(diff**2, -1))
    for R in np.unique(np.round(dist[0][dist[0] <= r_max], 12)):
        masses = domain.cell_volume * ((dist <= R * (1 + 1e-12)) @ flat)
        if masses.max() >= THR:
            break
    else:
        return None, []
    chosen = []
    key = np.round(masses * (1e12 / masses.max()))
    for i in sorted(range(len(flat)), key=lambda i: (-key[i], i)):
        if masses[i] >= THR and all(dist[i, j] > 2 * R for j in chosen):
            chosen.append(i)
    return R, [tuple(x[i]) for i in chosen]


@pytest.mark.parametrize("centers", [[(0.0, 0.25, 0.0, -0.25)], [(-1.0, -1.0, 0.0, 0.0), (1.0, 1.0, 0.5, 0.5)]])
def test_theta_matches_brute_force(centers):
    dom = Domain.torus4(8, 4.0, origin=(-2.0,) * 4)
    w = sum(bump(c, width=0.5, domain=dom) for c in centers)
    theta = L.theta_c_construct(density(w, dom), PARAMS, r_max=0.5)
    R, pts = brute_force_stage0(w, dom, 0.5)
    assert theta.base_radius == pytest.approx(R)
    assert sorted(map(tuple, theta.points[theta.stage == 0])) == sorted(pts)
    assert len(theta) == len(centers)


def test_theta_empty_for_light_density():
    w = np.full(BUMP_DOMAIN.sites, 0.5 * THR / 4.0**4)
    theta = L.theta_c_construct(density(w), PARAMS)
    assert len(theta) == 0 and theta.base_radius is None


def test_theta_single_bump():
    center = np.array([0.1, -0.05, 0.0, 0.1])
    theta = L.theta_c_construct(density(bump(center)), PARAMS)
    assert len(theta) == 1
    assert np.linalg.norm(theta.points[0] - center) <= max(BUMP_DOMAIN.spacing)
    assert theta.masses[0] >= THR


def test_theta_two_bumps():
    centers = [(-1.0, -1.0, 0.0, 0.0), (1.0, 1.0, 0.5, 0.5)]
    w = bump(centers[0]) + bump(centers[1])
    theta = L.theta_c_construct(density(w), PARAMS)
    assert len(theta) == 2 <= PARAMS.E**2 * PARAMS.c**2
    assert theta.disjoint()
    for c in centers:
        assert np.min(np.linalg.norm(theta.points - np.asarray(c), axis=1)) <= max(BUMP_DOMAIN.spacing)
    report = json.loads(theta.to_json())
    assert len(report["points"]) == 2


def test_theta_cardinality_and_disjointness_on_rough_density(rng):
    w = rng.random(BUMP_DOMAIN.sites) ** 8 * THR * 40
    theta = L.theta_c_construct(density(w), PARAMS)
    assert 0 < len(theta) <= PARAMS.E**2 * PARAMS.c**2
    assert theta.disjoint()
    assert np.all(theta.masses >= THR)


def bump_configuration(centers, amplitude, width=0.3, domain=BUMP_DOMAIN, a=None, r=1.0):
    """A = g dx2 (x) s3 with g a sum of Gaussians: an abelian curvature bump."""
    A = np.zeros((*domain.sites, 4, 3))
    for c in centers:
        d = domain.displacement(np.asarray(c, dtype=float), domain.mesh())
        A[..., 1, 2] += amplitude * np.exp(-np.sum(d * d, -1) / (2 * width**2))
    a = FormField.zeros(domain, 1) if a is None else a
    return Configuration(FormField(domain, 1, ValueKind.LIE, A), a, r)


def test_curvature_bound_away_from_theta(rng):
    a = band_limited(BUMP_DOMAIN, 1, "lie", rng, amplitude=2e-3)
    cfg = bump_configuration([(-1.0, -1.0, 0.0, 0.0), (1.0, 0.5, -0.5, 0.5)], 5e-3, a=a, r=1.5)
    # a light curvature background so that balls far from the bumps are not empty
    cfg = cfg.with_fields(A=cfg.A + band_limited(BUMP_DOMAIN, 1, "lie", rng, amplitude=1e-3))
    theta = L.theta_c_construct(cfg, PARAMS)
    assert len(theta) >= 2
    F2 = curvature(cfg).pointwise_norm2()
    assert BUMP_DOMAIN.cell_volume * F2.sum() > 20 * THR
    samples = L.sample_curvature_bound(cfg, theta, 100, rng, PARAMS)
    assert len(samples) == 100
    for site, radius, lhs, rhs in samples:
        assert theta.distance_to(BUMP_DOMAIN.mesh()[site]) >= PARAMS.kappa_theta * radius
        assert lhs <= rhs
    # the sampled balls are not all trivially light
    assert max(lhs for *_, lhs, _ in samples) > 0.01 * THR
    # a spot check against an independent evaluation
    site, radius, lhs, rhs = samples[0]
    assert (lhs, rhs) == L.curvature_bound_sides(cfg, BUMP_DOMAIN.mesh()[site], radius, PARAMS)


def test_theta_rejects_negative_density():
    with pytest.raises(ValueError):
        L.theta_c_construct(density(-np.ones(BUMP_DOMAIN.sites)), PARAMS)


# -- concentration detection over sequences -------------------------------------------


def test_detect_flat_sequence_is_empty():
    seq = [Configuration.flat(BUMP_DOMAIN, [0.2, 0.1, 0.0, -0.3], direction=(0.0, 0.0, 1.0))] * 3
    assert L.theta_detect(seq, PARAMS) == []


def test_detect_fixed_bump():
    p0 = (0.25, -0.25, 0.0, 0.5)
    seq = [bump_configuration([p0], 1e-2 * (1 + 0.1 * k), width=0.2) for k in range(4)]
    # the last member dominates; its mass in the smallest dyadic ball at p0
    site = tuple(int(i) for i in np.round((np.asarray(p0) + 2.0) / 0.25))
    mass = L.ball_masses(w_form(seq[-1]).pointwise_norm2(), BUMP_DOMAIN, 0.25)[site]
    found = L.theta_detect(seq, PARAMS, threshold=0.5 * mass)
    assert [c.point for c in found] == [p0]
    curve = found[0].masses
    assert all(x >= y for x, y in zip(curve, curve[1:]))
    assert L.theta_detect(seq, PARAMS, threshold=2.0 * mass) == []


def test_detect_needs_two_members():
    with pytest.raises(ValueError):
        L.theta_detect([Configuration.zero(BUMP_DOMAIN)], PARAMS)


# -- limsup fields -------------------------------------------------------------------


def test_limsup_of_constant_family(rng):
    dom = L.z2_model_domain(24)
    a = L.z2_model_field(dom)
    rep = L.limsup_field([a] * 4)
    assert np.array_equal(rep.limsup, np.sqrt(a.pointwise_norm2()))
    assert np.array_equal(rep.zero_mask, a.pointwise_norm2() == 0)
    assert rep.selected == [2, 3]


def test_limsup_of_increasing_family():
    dom = L.z2_model_domain(24)
    a = L.z2_model_field(dom)
    n_max = 10
    rep = L.limsup_field([a * (1 - 1 / n) for n in range(1, n_max + 1)])
    n_min = n_max - len(rep.selected) + 1
    target = np.sqrt(a.pointwise_norm2())
    assert np.max(np.abs(rep.limsup - target)) <= np.max(target) / n_min


def test_limsup_of_alternating_family(rng):
    a = random_field(D4, 1, "lie", rng)
    rep = L.limsup_field([a, a / 2, a, a / 2, a, a / 2])
    assert np.allclose(rep.limsup, np.sqrt(a.pointwise_norm2()), rtol=1e-15)
    rep = L.limsup_field([a, a / 2, a, a / 2], tail=1)
    assert np.allclose(rep.limsup, 0.5 * np.sqrt(a.pointwise_norm2()), rtol=1e-15)
    with pytest.raises(ValueError):
        L.limsup_field([a, a], tail=3)


def test_zero_tolerance_is_scale_covariant():
    dom = L.z2_model_domain(24)
    a = L.z2_model_field(dom)
    masks = [L.limsup_field([a * s, a * s]).zero_mask for s in (1e-3, 1.0, 1e3)]
    assert np.array_equal(masks[0], masks[1]) and np.array_equal(masks[1], masks[2])
    assert masks[0].any()


def test_rescale_and_sequence_report(rng):
    a = band_limited(BUMP_DOMAIN, 1, "lie", rng, amplitude=0.5)
    r, b = L.rescale(a * 10.0)
    assert r == pytest.approx(10.0 * a.norm()) and b.norm() == pytest.approx(1.0)
    assert L.rescale(a * 1e-3)[0] == 1.0
    seq = [bump_configuration([(0.0, 0.0, 0.0, 0.0)], 1e-2, a=a * s) for s in (5.0, 6.0, 7.0)]
    rep = L.analyze_sequence(seq, PARAMS, threshold=1e300)
    assert all(s >= 1 for s in rep.scales) and rep.theta == []
    out = json.loads(rep.to_json())
    assert out["selected"] == [1, 2]


# -- Holder exponents ----------------------------------------------------------------


def test_holder_linear():
    dom = L.z2_model_domain(48)
    f = np.abs(dom.mesh()[..., 0])
    fit = L.holder_fit(f, f <= 1e-6 * f.max(), BallSpec((0.0, 0.2, 0.0, 0.0), 1.0), domain=dom)
    assert fit.exponent == pytest.approx(1.0, abs=0.05)
    assert len(fit.deltas) >= 3


def test_holder_z2_model():
    dom = L.z2_model_domain(48)
    rep = L.limsup_field([L.z2_model_field(dom)] * 2)
    fit = L.holder_fit(FormField(dom, 0, "real", rep.limsup[..., None, None]), rep.zero_mask,
                       BallSpec((0.0, 0.0, 0.0, 0.0), 1.0))
    assert fit.exponent == pytest.approx(0.5, abs=0.05)
    assert fit.residual < 1e-3


def test_holder_errors():
    dom = L.z2_model_domain(24)
    f = 1.0 + np.abs(dom.mesh()[..., 0])
    with pytest.raises(FitRangeError):
        L.holder_fit(f, f <= 1e-6, BallSpec((0.0, 0.0, 0.0, 0.0), 1.0), domain=dom)
    g = np.abs(dom.mesh()[..., 0])
    with pytest.raises(FitRangeError):
        L.holder_fit(g, g == 0, BallSpec((0.0, 0.0, 0.0, 0.0), 0.25), domain=dom)
