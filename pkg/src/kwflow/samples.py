"""Field generators used by tests, presets and the command line.

Band-limited random fields are defined as explicit trigonometric sums, so
the same continuum field can be sampled on grids of different resolution
(Richardson pairs).
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .grid import Domain, FormField, ValueKind


_CHUNK = 1 << 22


@dataclass(frozen=True)
class TrigField:
    """sum_m A_m cos(k_m . x) + B_m sin(k_m . x) with per-mode component amplitudes."""

    wavevectors: np.ndarray  # (M, n) integer modes
    cos_amp: np.ndarray  # (M, C, lie_dim)
    sin_amp: np.ndarray  # (M, C, lie_dim)
    extents: tuple[float, ...]

    def __call__(self, x: np.ndarray) -> np.ndarray:
        k = 2 * np.pi * self.wavevectors / np.asarray(self.extents)
        lead = x.shape[:-1]
        pts = x.reshape(-1, x.shape[-1])
        out = np.empty((pts.shape[0], *self.cos_amp.shape[1:]), dtype=self.cos_amp.dtype)
        # chunked so the (points, modes) phase table stays small
        step = max(1, _CHUNK // max(len(k), 1))
        for i in range(0, pts.shape[0], step):
            phase = pts[i:i + step] @ k.T
            out[i:i + step] = (np.tensordot(np.cos(phase), self.cos_amp, axes=([-1], [0]))
                               + np.tensordot(np.sin(phase), self.sin_amp, axes=([-1], [0])))
        return out.reshape(*lead, *out.shape[1:])

    def on_grid(self, domain: Domain) -> np.ndarray | None:
        """Values at the sites of a torus with the same extents, by one inverse FFT.

        Each mode is a lattice character on the grid, so this equals pointwise
        evaluation up to rounding.  Returns None for other domains.
        """
        if not domain.is_torus or tuple(domain.extents) != tuple(self.extents):
            return None
        n = np.array(domain.sites)
        m = np.rint(self.wavevectors).astype(int)
        k = 2 * np.pi * self.wavevectors / np.asarray(self.extents)
        shift = np.exp(1j * (k @ np.asarray(domain.origin)))[:, None, None]
        coef = np.zeros((*domain.sites, *self.cos_amp.shape[1:]), dtype=complex)
        np.add.at(coef, tuple((m % n).T), 0.5 * (self.cos_amp - 1j * self.sin_amp) * shift)
        np.add.at(coef, tuple((-m % n).T), 0.5 * (self.cos_amp + 1j * self.sin_amp) * np.conj(shift))
        axes = tuple(range(domain.ndim))
        vals = np.fft.ifftn(coef, axes=axes) * float(np.prod(n))
        return vals if np.iscomplexobj(self.cos_amp) else vals.real

    def gradient(self, x: np.ndarray) -> np.ndarray:
        """Exact partial derivatives, shape ``(n, ..., C, lie_dim)``."""
        k = 2 * np.pi * self.wavevectors / np.asarray(self.extents)
        phase = np.tensordot(x, k.T, axes=([-1], [0]))
        grads = []
        for i in range(k.shape[1]):
            g = np.tensordot(-np.sin(phase) * k[:, i], self.cos_amp, axes=([-1], [0]))
            g += np.tensordot(np.cos(phase) * k[:, i], self.sin_amp, axes=([-1], [0]))
            grads.append(g)
        return np.stack(grads)


def random_trig(domain: Domain, degree: int, kind: ValueKind | str, rng: np.random.Generator,
                max_mode: int = 1, amplitude: float = 1.0, n_modes: int | None = None) -> TrigField:
    """Random trigonometric field with integer modes |m_i| <= max_mode.

    Amplitudes decay like 1/(1 + |m|^2) so the field is smooth.  Modes are
    half-space representatives (the first nonzero entry positive) plus the
    constant mode, which keeps the field real.
    """
    kind = ValueKind(kind)
    n = domain.ndim
    modes = [m for m in itertools.product(range(-max_mode, max_mode + 1), repeat=n)
             if _half_space(m)]
    if n_modes is not None and n_modes < len(modes):
        pick = rng.choice(len(modes), size=n_modes, replace=False)
        modes = [modes[i] for i in sorted(pick)]
    modes = np.array(modes, dtype=float).reshape(-1, n)
    C = math.comb(n, degree)
    ld = kind.lie_dim
    decay = 1.0 / (1.0 + np.sum(modes**2, axis=1))[:, None, None]
    shape = (len(modes), C, ld)
    ca = rng.standard_normal(shape) * decay
    sa = rng.standard_normal(shape) * decay
    if kind is ValueKind.CLIE:
        ca = ca + 1j * rng.standard_normal(shape) * decay
        sa = sa + 1j * rng.standard_normal(shape) * decay
    scale = amplitude / math.sqrt(max(len(modes), 1))
    return TrigField(modes, ca * scale, sa * scale, domain.extents)


def _half_space(m) -> bool:
    for v in m:
        if v != 0:
            return v > 0
    return True


def band_limited(domain: Domain, degree: int, kind: ValueKind | str, rng: np.random.Generator,
                 max_mode: int = 1, amplitude: float = 1.0) -> FormField:
    """Sample a fresh :func:`random_trig` field on ``domain``."""
    f = random_trig(domain, degree, kind, rng, max_mode=max_mode, amplitude=amplitude)
    return FormField.from_function(domain, degree, kind, f, check_periodic=False)


def random_field(domain: Domain, degree: int, kind: ValueKind | str,
                 rng: np.random.Generator, scale: float = 1.0) -> FormField:
    """Independent Gaussian values at every site (not smooth)."""
    kind = ValueKind(kind)
    shape = (*domain.sites, math.comb(domain.ndim, degree), kind.lie_dim)
    data = rng.standard_normal(shape) * scale
    if kind is ValueKind.CLIE:
        data = data + 1j * rng.standard_normal(shape) * scale
    return FormField(domain, degree, kind, data)


def constant_form(domain: Domain, degree: int, values) -> FormField:
    """Constant Lie-valued form; ``values`` has shape (C(n, k), 3)."""
    values = np.asarray(values)
    kind = ValueKind.CLIE if np.iscomplexobj(values) else ValueKind.LIE
    data = np.broadcast_to(values, (*domain.sites, *values.shape)).copy()
    return FormField(domain, degree, kind, data)


def project_coclosed(a: FormField) -> FormField:
    """Remove the gradient part of a periodic 1-form, componentwise in Lie space.

    Uses exact Fourier multipliers, so the result is coclosed for the
    trigonometric interpolant; fields with modes |m_i| <= 1 are also coclosed
    for centred differences.
    """
    dom = a.domain
    if not dom.is_torus or a.degree != 1:
        raise ValueError("coclosed projection needs a 1-form on a torus")
    n = dom.ndim
    axes = tuple(range(n))
    ks = np.meshgrid(*[2 * np.pi * np.fft.fftfreq(s, d=h) for s, h in zip(dom.sites, dom.spacing)],
                     indexing="ij")
    k = np.stack(ks, axis=-1)
    k2 = np.sum(k * k, axis=-1)
    k2[(0,) * n] = 1.0
    hat = np.fft.fftn(a.data, axes=axes)
    div = np.einsum("...m,...ml->...l", k, hat)
    hat = hat - k[..., :, None] * (div / k2[..., None])[..., None, :]
    out = np.fft.ifftn(hat, axes=axes)
    return a.with_data(out if np.iscomplexobj(a.data) else out.real)
