import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import richardson_ratio
from kwflow import frequency as fq
from kwflow.errors import BallTooLargeError, DomainError, UndefinedFrequencyError
from kwflow.fields import Configuration
from kwflow.grid import Domain, FormField
from kwflow.samples import band_limited, random_field

ORIGIN = (0.0, 0.0, 0.0, 0.0)
RADII = np.linspace(0.1, 0.4, 16)


def test_params_validation():
    with pytest.raises(ValueError):
        fq.AnalysisParams(c=50)
    with pytest.raises(ValueError):
        fq.AnalysisParams(E=0.5)
    with pytest.raises(ValueError):
        fq.AnalysisParams(mu=0.3)
    with pytest.raises(ValueError):
        fq.AnalysisParams(kappa_U=2.0, z_U=100.0)
    assert fq.AnalysisParams(kappa_U=2.0).z_U == 200.0
    with pytest.raises(ValueError):
        fq.AnalysisParams(ric=np.arange(16.0).reshape(4, 4))


def test_cutoff_profile():
    chi = fq.AnalysisParams.cutoff
    assert chi(0.1) == 1.0 and chi(0.25) == 1.0
    assert chi(0.75) == 0.0 and chi(2.0) == 0.0
    assert chi(0.5) == pytest.approx(0.5)
    t = np.linspace(0, 1, 101)
    assert np.all(np.diff(chi(t)) <= 0)


def test_constant_field_profile():
    coeffs = np.array([1.0, 2.0, 0.0, 0.5])
    prof = fq.profile(fq.constant_sampler(coeffs), (0.3, -0.1, 0.0, 0.2), RADII)
    assert np.max(np.abs(prof.N)) == 0.0
    assert np.allclose(prof.K**2, 2 * math.pi**2 * coeffs @ coeffs, rtol=1e-13)
    assert np.all(prof.vartheta == 0.0)
    assert fq.ode_check_3_6(prof) < 1e-12


@pytest.mark.parametrize("degree", [0, 1, 2])
def test_homogeneous_harmonic_frequency(degree):
    prof = fq.profile(fq.homogeneous_harmonic(degree), ORIGIN, RADII)
    assert np.max(np.abs(prof.N - degree)) < 1e-3
    assert np.all(prof.h > 0)


def test_degree_one_closed_forms():
    prof = fq.profile(fq.homogeneous_harmonic(1), ORIGIN, RADII)
    assert np.allclose(prof.h, math.pi**2 * RADII**5, rtol=1e-12)
    assert np.allclose(prof.K, math.pi * RADII, rtol=1e-12)
    radii = np.linspace(0.1, 0.4, 64)
    assert fq.ode_check_3_6(fq.profile(fq.homogeneous_harmonic(1), ORIGIN, radii)) <= 1e-4


def test_z2_model_half():
    prof = fq.profile(fq.Z2ModelSampler(), ORIGIN, RADII)
    assert np.max(np.abs(prof.N - 0.5)) < 1e-3
    # K^2 = (4 pi^2 / 3) r for |nu|^2 = |z|
    assert np.allclose(prof.K**2, 4 * math.pi**2 / 3 * RADII, rtol=1e-10)


def test_z2_limit_profile():
    prof = fq.limit_profile(fq.Z2ModelSampler(lie=False), ORIGIN, RADII)
    assert np.max(np.abs(prof.N - 0.5)) < 1e-3
    assert np.all(np.diff(prof.N) >= -1e-4)
    assert fq.near_monotonicity_gap(prof) >= -1e-4
    assert prof.limit


def test_limit_profile_constant_and_d_x1x2():
    const = fq.limit_profile(fq.constant_sampler([0, 1.0, 0, 0], direction=(1.0,)), ORIGIN, RADII)
    assert np.max(np.abs(const.N)) < 1e-12
    # the constant value recovers K(0)^2 = 2 pi^2 |nu(p)|^2
    assert const.K[0] ** 2 == pytest.approx(2 * math.pi**2)
    lin = fq.limit_profile(fq.homogeneous_harmonic(1, direction=(1.0,)), ORIGIN, RADII)
    assert np.max(np.abs(lin.N - 1.0)) < 1e-3


def test_ode_residual_second_order_in_radial_step():
    coarse = fq.limit_profile(fq.Z2ModelSampler(lie=False), ORIGIN, np.linspace(0.1, 0.4, 16))
    fine = fq.limit_profile(fq.Z2ModelSampler(lie=False), ORIGIN, np.linspace(0.1, 0.4, 31))
    # compare at the shared interior radii
    rc = fq.ode_residuals(coarse)
    rf = fq.ode_residuals(fine)[1::2]
    assert 3.5 <= richardson_ratio(np.max(rc), np.max(rf)) <= 4.5


def test_scaling_covariance():
    base = fq.random_harmonic(np.random.default_rng(4))
    p = (0.05, -0.1, 0.2, 0.0)
    one = fq.profile(base, p, RADII[::3])
    three = fq.profile(fq.ScaledSource(base, 3.0), p, RADII[::3])
    assert np.allclose(three.N, one.N, rtol=1e-12)
    assert np.allclose(three.K, 3.0 * one.K, rtol=1e-12)


def test_monotone_on_flat_harmonic_examples():
    rng = np.random.default_rng(8)
    for _ in range(2):
        prof = fq.profile(fq.random_harmonic(rng), tuple(rng.uniform(-0.2, 0.2, 4)), RADII[::2])
        assert np.all(np.diff(prof.N) >= -1e-4)
        assert np.all(np.diff(prof.K) >= 0)


def test_vartheta_wiring_with_synthetic_ricci():
    # constant a, constant Ric: vartheta = Ric(a, a) r^2 / (8 |a|^2)
    a = np.array([1.0, 0.5, 0.0, -0.25])
    ric = np.diag([0.3, -0.1, 0.2, 0.05])
    params = fq.AnalysisParams(ric=ric)
    radii = RADII[::5]
    prof = fq.profile(fq.constant_sampler(a), ORIGIN, radii, params)
    expected = (a @ ric @ a) * radii**2 / (8 * a @ a)
    assert np.allclose(prof.vartheta, expected, rtol=1e-10)
    assert np.allclose(prof.K**2, np.exp(-2 * expected) * 2 * math.pi**2 * (a @ a), rtol=1e-10)


def test_undefined_frequency_reported():
    zero = fq.constant_sampler([0.0, 0.0, 0.0, 0.0])
    prof = fq.profile(zero, ORIGIN, [0.1, 0.2])
    assert np.all(prof.undefined)
    with pytest.raises(UndefinedFrequencyError):
        fq.frequency_at(zero, ORIGIN, 0.1)


def test_profile_csv():
    prof = fq.profile(fq.homogeneous_harmonic(1), ORIGIN, [0.1, 0.2, 0.3])
    lines = prof.to_csv().splitlines()
    assert lines[0] == "r,h,vartheta,K,N"
    assert len(lines) == 4


def test_radii_validation():
    with pytest.raises(ValueError):
        fq.profile(fq.homogeneous_harmonic(1), ORIGIN, [0.2, 0.1])


# -- grid sources ---------------------------------------------------------------


def test_grid_constant_configuration():
    dom = Domain.torus4(8)
    cfg = Configuration.flat(dom, [0.4, 0.0, -0.3, 0.1], direction=(0.0, 1.0, 0.0), r=2.0)
    prof = fq.profile(cfg, (1.0, 1.0, 1.0, 1.0), [0.5, 1.0, 1.5])
    assert prof.source == "GridConfig"
    assert np.max(np.abs(prof.N)) < 1e-12
    assert np.allclose(prof.K**2, 2 * math.pi**2 * 0.26, rtol=1e-12)


def test_grid_profile_converges_to_analytic():
    # a = d(sin x1 sin x2) sigma_1: grid sampling error is O(h^2)
    def grad_f(x):
        out = np.zeros(x.shape)
        out[..., 0] = np.cos(x[..., 0]) * np.sin(x[..., 1])
        out[..., 1] = np.sin(x[..., 0]) * np.cos(x[..., 1])
        return out

    def hess_f(x):
        out = np.zeros((*x.shape[:-1], 4, 4))
        s = -np.sin(x[..., 0]) * np.sin(x[..., 1])
        c = np.cos(x[..., 0]) * np.cos(x[..., 1])
        out[..., 0, 0] = out[..., 1, 1] = s
        out[..., 0, 1] = out[..., 1, 0] = c
        return out

    exact = fq.ExactFormSampler(grad_f, hess_f)
    p = (1.0, 2.0, 0.5, 0.5)
    radii = [0.6, 1.2]
    ref = fq.profile(exact, p, radii)
    gaps = []
    for n in (16, 32):
        dom = Domain("torus4", (2 * math.pi,) * 4, (n, n, 4, 4))
        a = FormField.from_function(dom, 1, "lie", exact.a)
        prof = fq.profile(Configuration(FormField.zeros(dom, 1), a), p, radii)
        gaps.append(np.max(np.abs(prof.N - ref.N)))
    assert 3.0 <= richardson_ratio(*gaps) <= 5.0


def test_ball_must_fit_in_torus():
    cfg = Configuration.zero(Domain.torus4(8))
    with pytest.raises(BallTooLargeError):
        fq.profile(cfg, ORIGIN, [3.5])


def test_grid_sampler_needs_four_torus():
    with pytest.raises(DomainError):
        fq.GridSampler(Configuration.zero(Domain.torus3(4)))


# -- derivative formula ------------------------------------------------------------


@pytest.mark.parametrize("degree", [0, 1, 2])
def test_dN_homogeneous(degree):
    check = fq.dN_formula_5_2(fq.homogeneous_harmonic(degree), ORIGIN, 0.25)
    assert abs(check.dN_direct) < 1e-3 and abs(check.dN_formula) < 1e-3
    assert check.gap < 1e-3


def test_dN_z2_model():
    check = fq.dN_formula_5_2(fq.Z2ModelSampler(), ORIGIN, 0.25)
    assert check.gap < 1e-3


def test_dN_random_harmonic_second_order():
    src = fq.random_harmonic(np.random.default_rng(1))
    p = (0.1, 0.0, 0.2, 0.0)
    gaps = [fq.dN_formula_5_2(src, p, 0.3, dr=dr).gap for dr in (0.02, 0.01)]
    assert fq.dN_formula_5_2(src, p, 0.3, dr=0.01).dN_formula > 0
    assert 3.5 <= richardson_ratio(*gaps) <= 4.5


def test_dN_needs_flat():
    with pytest.raises(DomainError):
        fq.dN_formula_5_2(fq.homogeneous_harmonic(1), ORIGIN, 0.2,
                          fq.AnalysisParams(ric=np.eye(4)))


def test_radial_contraction_oracle(rng):
    F = rng.standard_normal((5, 6, 3))
    xhat = rng.standard_normal((5, 4))
    full = np.zeros((5, 4, 4, 3))
    for c, (i, j) in enumerate(fq._PAIRS):
        full[:, i, j] = F[:, c]
        full[:, j, i] = -F[:, c]
    expected = np.einsum("pa,pavl->pvl", xhat, full)
    assert np.allclose(fq._radial_contraction(F, xhat), expected, atol=1e-14)


# -- stress tensor -------------------------------------------------------------------


def test_stress_tensor_symmetric_with_trace(rng):
    dom = Domain.torus4(4)
    cfg = Configuration(random_field(dom, 1, "lie", rng), random_field(dom, 1, "lie", rng), r=1.7)
    T = fq.stress_tensor(cfg)
    assert np.allclose(T, np.swapaxes(T, -1, -2), atol=1e-12)
    from kwflow.fields import cov_grad, grad_norm2
    from kwflow.grid import wedge_sq
    expected = -(grad_norm2(cov_grad(cfg, cfg.a)) + 2 * cfg.r**2 * wedge_sq(cfg.a).pointwise_norm2())
    assert np.allclose(np.trace(T, axis1=-2, axis2=-1), expected, atol=1e-11)


def test_stress_divergence_flat_configuration():
    cfg = Configuration.flat(Domain.torus4(6), [0.5, -1.0, 0.25, 2.0], r=3.0)
    assert fq.stress_divergence(cfg) <= 1e-10


def _harmonic_abelian(n):
    # a = d(cos x1 cosh(x2 - pi)) sigma_1 / cosh(pi), harmonic but not periodic in x2
    dom = Domain("torus4", (2 * math.pi,) * 4, (n, n, 4, 4))
    x = dom.mesh()
    data = np.zeros((*dom.sites, 4, 3))
    data[..., 0, 0] = -np.sin(x[..., 0]) * np.cosh(x[..., 1] - math.pi) / math.cosh(math.pi)
    data[..., 1, 0] = np.cos(x[..., 0]) * np.sinh(x[..., 1] - math.pi) / math.cosh(math.pi)
    return Configuration(FormField.zeros(dom, 1), FormField(dom, 1, "lie", data))


def test_stress_divergence_abelian_second_order():
    divs = []
    for n in (16, 32):
        # stay away from the seam in x2
        divs.append(fq.stress_divergence(_harmonic_abelian(n), (slice(None), slice(n // 4, 3 * n // 4))))
    assert 3.5 <= richardson_ratio(*divs) <= 4.5


def test_stress_divergence_random_nonzero(rng):
    dom = Domain.torus4(6)
    cfg = Configuration(band_limited(dom, 1, "lie", rng), band_limited(dom, 1, "lie", rng))
    assert fq.stress_divergence(cfg) > 1e-3


# -- scale detectors -------------------------------------------------------------------


class CurvatureBump:
    r = 1.0

    def __init__(self, mass, width=0.15, center=(0.1, 0.0, 0.0, 0.0)):
        self.mass, self.width, self.center = mass, width, np.asarray(center)

    def a(self, x):
        return np.zeros((*x.shape[:-1], 4, 3))

    def grad(self, x):
        return np.zeros((*x.shape[:-1], 4, 4, 3))

    def curvature(self, x):
        out = np.zeros((*x.shape[:-1], 6, 3))
        d2 = np.sum((x - self.center) ** 2, axis=-1)
        out[..., 0, 0] = self.mass * np.exp(-d2 / (2 * self.width**2))
        return out


def test_detector_bisection_matches_scan():
    src = CurvatureBump(mass=0.2)
    params = fq.AnalysisParams()
    r_max = 0.8
    assert fq.curvature_mass(src, ORIGIN, r_max) > params.c**-2
    res = fq.scale_detectors(src, ORIGIN, params, r_max=r_max)
    radii = np.linspace(r_max / 200, r_max, 200)
    scan = fq.radius_scan(lambda s: fq.curvature_mass(src, ORIGIN, s), params.c**-2, radii)
    assert abs(res.r_c_F - scan) <= r_max / 200
    assert res.r_c_wedge == r_max


def test_detector_monotone_in_c():
    src = CurvatureBump(mass=0.2)
    r1 = fq.scale_detectors(src, ORIGIN, fq.AnalysisParams(c=128), r_max=0.8).r_c_F
    r2 = fq.scale_detectors(src, ORIGIN, fq.AnalysisParams(c=256), r_max=0.8).r_c_F
    assert r2 <= r1


def test_detectors_on_flat_configuration():
    src = fq.constant_sampler([1e-5, 0.0, 0.0, 0.0])
    res = fq.scale_detectors(src, ORIGIN, r_max=0.5)
    assert res.r_c_wedge == res.r_c_F == res.r_c_diamond == 0.5
    assert not res.r_star_found and res.r_star == 0.5
    assert json.loads(res.to_json())["r_c_F"] == 0.5


class ConstantNonabelian:
    # a = dx1 s1 + dx2 s2: |a ^ a|^2 = 4, |a|^2 = 2

    def __init__(self, r):
        self.r = r

    def a(self, x):
        out = np.zeros((*x.shape[:-1], 4, 3))
        out[..., 0, 0] = out[..., 1, 1] = 1.0
        return out

    def grad(self, x):
        return np.zeros((*x.shape[:-1], 4, 4, 3))

    def curvature(self, x):
        return np.zeros((*x.shape[:-1], 6, 3))


def test_detector_closed_forms():
    params = fq.AnalysisParams(c=200.0, kappa_U=0.01)
    src = ConstantNonabelian(r=1.5)
    res = fq.scale_detectors(src, ORIGIN, params, r_max=1.0)
    # r^4 * 4 * (pi^2 rho^4 / 2) = c^-k
    wedge = (params.c**-2 / (2 * math.pi**2 * src.r**4)) ** 0.25
    diamond = (params.c**-4 / (2 * math.pi**2 * src.r**4)) ** 0.25
    assert res.r_c_wedge == pytest.approx(wedge, rel=2e-4)
    assert res.r_c_diamond == pytest.approx(diamond, rel=2e-4)
    # rho K r = 1 / z_U with K = sqrt(2 pi^2 * 2)
    star = 1.0 / (params.z_U * src.r * math.sqrt(4 * math.pi**2))
    assert res.r_star_found
    assert res.r_star == pytest.approx(star, rel=2e-4)


@settings(max_examples=10, deadline=None)
@given(lam=st.floats(0.1, 10.0), seed=st.integers(0, 1000))
def test_scaling_covariance_property(lam, seed):
    base = fq.random_harmonic(np.random.default_rng(seed), degrees=(1, 2), n_terms=1)
    one = fq.profile(base, ORIGIN, [0.2])
    scaled = fq.profile(fq.ScaledSource(base, lam), ORIGIN, [0.2])
    assert scaled.N[0] == pytest.approx(one.N[0], rel=1e-12)
    assert scaled.K[0] == pytest.approx(lam * one.K[0], rel=1e-12)
