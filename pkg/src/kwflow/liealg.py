"""Arithmetic on su(2) and its complexification.

Elements are stored as arrays whose last axis holds the three coordinates
in the orthonormal basis sigma_j = -i * Pauli_j.  In that basis the
invariant pairing -1/2 trace(uv) is the Euclidean dot product and the
commutator is twice the cross product, so every function here is a thin
vectorised wrapper over numpy.  Complex arrays represent the
complexification; the pairing is then complex *bilinear* (no conjugation).
"""

from __future__ import annotations

import numpy as np

LIE_DIM = 3

PAULI = np.array(
    [
        [[0, 1], [1, 0]],
        [[0, -1j], [1j, 0]],
        [[1, 0], [0, -1]],
    ],
    dtype=complex,
)

# sigma_j = -i * Pauli_j
SIGMA = -1j * PAULI

LieVec = np.ndarray
CLieVec = np.ndarray


def basis(j: int) -> LieVec:
    """Coordinate vector of sigma_{j+1} (zero-based index)."""
    e = np.zeros(LIE_DIM)
    e[j] = 1.0
    return e


def bracket(u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Lie bracket [u, v] = 2 (u x v), broadcast over leading axes."""
    return 2.0 * np.cross(u, v)


def inner(u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Invariant pairing <u, v> = -1/2 trace(uv); bilinear on complex input."""
    return np.sum(u * v, axis=-1)


def norm2(u: np.ndarray) -> np.ndarray:
    """|u|^2.  For complex input this is the Hermitian norm sum |u_j|^2."""
    if np.iscomplexobj(u):
        return np.sum(u.real**2 + u.imag**2, axis=-1)
    return np.sum(u * u, axis=-1)


def double_ad(u: np.ndarray, q: np.ndarray) -> np.ndarray:
    """[u, [q, u]]."""
    return bracket(u, bracket(q, u))


def to_matrix(u: np.ndarray) -> np.ndarray:
    """2x2 matrix realisation sum_j u_j sigma_j."""
    return np.tensordot(np.asarray(u), SIGMA, axes=([-1], [0]))


def from_matrix(m: np.ndarray) -> np.ndarray:
    """Inverse of :func:`to_matrix` via the trace pairing.

    Returns complex coordinates; they are real when ``m`` lies in su(2).
    """
    m = np.asarray(m)
    return np.stack(
        [-0.5 * np.einsum("...ij,ji->...", m, SIGMA[j]) for j in range(LIE_DIM)],
        axis=-1,
    )


def matrix_inner(u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """-1/2 trace of the matrix product; reference for :func:`inner`."""
    mu, mv = to_matrix(u), to_matrix(v)
    return -0.5 * np.einsum("...ij,...ji->...", mu, mv)


def matrix_bracket(u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Commutator computed with 2x2 matrices; reference for :func:`bracket`."""
    mu, mv = to_matrix(u), to_matrix(v)
    return from_matrix(mu @ mv - mv @ mu)


# -- unit quaternions acting on su(2) ------------------------------------
#
# A unit quaternion q = (q0, q1, q2, q3) is the SU(2) element
# q0 * 1 + sum_j q_j sigma_j.  Since sigma_1 sigma_2 = sigma_3 (and cyclic)
# these multiply like the Hamilton units i, j, k.


def quat_mul(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Hamilton product, broadcast over leading axes."""
    p0, pv = p[..., :1], p[..., 1:]
    q0, qv = q[..., :1], q[..., 1:]
    w = p0 * q0 - np.sum(pv * qv, axis=-1, keepdims=True)
    v = p0 * qv + q0 * pv + np.cross(pv, qv)
    return np.concatenate([w, v], axis=-1)


def quat_conj(q: np.ndarray) -> np.ndarray:
    out = -np.asarray(q, dtype=float).copy()
    out[..., 0] *= -1.0
    return out


def quat_exp(xi: np.ndarray) -> np.ndarray:
    """exp of the su(2) element with coordinates ``xi`` as a unit quaternion."""
    xi = np.asarray(xi, dtype=float)
    t = np.sqrt(np.sum(xi * xi, axis=-1, keepdims=True))
    # sin(t)/t, continuous at t = 0
    sinc = np.sinc(t / np.pi)
    return np.concatenate([np.cos(t), sinc * xi], axis=-1)


def quat_rotate(q: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Adjoint action g u g^{-1} on su(2) coordinates."""
    q0 = q[..., :1]
    qv = q[..., 1:]
    t = 2.0 * np.cross(qv, u)
    return u + q0 * t + np.cross(qv, t)
