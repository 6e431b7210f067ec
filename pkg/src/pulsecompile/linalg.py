"""Dense complex linear algebra for small Hermitian generators.

Operators are plain ``numpy`` complex arrays of shape ``(d, d)``; most helpers
also broadcast over leading stack dimensions ``(..., d, d)`` so that a whole
pulse (one generator per time slice) can be handled in one call.

Both the propagator and its derivative go through one Hermitian
eigendecomposition ``h = V diag(lam) V^dagger``:

* ``exp(-i tau h) = V diag(exp(-i tau lam)) V^dagger``
* the Frechet derivative of ``X -> exp(X)`` at ``X = -i tau h`` in direction
  ``-i tau e`` is ``V (K o (V^dagger e V)) V^dagger`` where ``K`` holds the
  divided differences of ``lam -> exp(-i tau lam)`` (Daleckii-Krein).
"""

from __future__ import annotations

import numpy as np

from .errors import DimensionMismatch, NotHermitian

HERMITIAN_TOL = 1e-10


def dagger(a: np.ndarray) -> np.ndarray:
    return np.conj(np.swapaxes(a, -1, -2))


def _check_square(a: np.ndarray) -> None:
    if a.ndim < 2 or a.shape[-1] != a.shape[-2]:
        raise DimensionMismatch(f"expected square matrix, got shape {a.shape}")


def is_hermitian(a, tol: float = HERMITIAN_TOL) -> bool:
    a = np.asarray(a)
    _check_square(a)
    return bool(np.all(np.linalg.norm(a - dagger(a), axis=(-2, -1)) <= tol))


def is_unitary(a, tol: float = HERMITIAN_TOL) -> bool:
    a = np.asarray(a)
    _check_square(a)
    eye = np.eye(a.shape[-1])
    return bool(np.all(np.linalg.norm(dagger(a) @ a - eye, axis=(-2, -1)) <= tol))


def kron(a, b) -> np.ndarray:
    """Kronecker product with ``a`` as the most-significant factor."""
    return np.kron(np.asarray(a, dtype=complex), np.asarray(b, dtype=complex))


def kron_all(*factors) -> np.ndarray:
    out = np.ones((1, 1), dtype=complex)
    for f in factors:
        out = kron(out, f)
    return out


def herm_eig(h, tol: float = HERMITIAN_TOL):
    """Eigendecomposition of a Hermitian matrix (or stack of them).

    Returns ``(lam, V)`` with ascending eigenvalues and unitary ``V`` such
    that ``h = V diag(lam) V^dagger``.
    """
    h = np.asarray(h, dtype=complex)
    if not is_hermitian(h, tol):
        raise NotHermitian("generator is not Hermitian within tolerance")
    return np.linalg.eigh(h)


def expm_from_eig(lam: np.ndarray, vecs: np.ndarray, tau) -> np.ndarray:
    """``exp(-i tau h)`` from a precomputed eigendecomposition.

    ``tau`` may be a scalar or broadcast against the stack shape of ``lam``.
    """
    tau = np.asarray(tau, dtype=float)[..., None]
    phases = np.exp(-1j * tau * lam)
    return (vecs * phases[..., None, :]) @ dagger(vecs)


def frechet_kernel(lam: np.ndarray, tau) -> np.ndarray:
    """Divided differences of ``f(x) = exp(-i tau x)`` on the spectrum.

    ``K[i, j] = (f(lam_i) - f(lam_j)) / (lam_i - lam_j)``, with the
    confluent value ``f'(lam_i) = -i tau f(lam_i)`` on coincident
    eigenvalues. Written through ``sinc`` so the confluent limit is reached
    continuously instead of through a 0/0 branch.
    """
    tau = np.asarray(tau, dtype=float)[..., None, None]
    li = lam[..., :, None]
    lj = lam[..., None, :]
    mid = 0.5 * (li + lj)
    half = 0.5 * (li - lj)
    # sin(tau*half)/(tau*half) == np.sinc(tau*half/pi)
    return -1j * tau * np.exp(-1j * tau * mid) * np.sinc(tau * half / np.pi)


def expm_antiherm(h, tau: float) -> np.ndarray:
    """Unitary ``exp(-i tau h)`` for Hermitian ``h``."""
    if not np.isfinite(tau):
        raise ValueError("tau must be finite")
    lam, vecs = herm_eig(h)
    return expm_from_eig(lam, vecs, tau)


def expm_frechet(h, e, tau: float) -> np.ndarray:
    """Derivative of ``eps -> exp(-i tau (h + eps e))`` at ``eps = 0``.

    Equivalently the Frechet derivative of the matrix exponential at
    ``X = -i tau h`` applied to the direction ``E = -i tau e``.
    """
    if not np.isfinite(tau):
        raise ValueError("tau must be finite")
    e = np.asarray(e, dtype=complex)
    if not is_hermitian(e):
        raise NotHermitian("direction is not Hermitian within tolerance")
    lam, vecs = herm_eig(h)
    if e.shape != vecs.shape:
        raise DimensionMismatch(f"direction shape {e.shape} != generator shape {vecs.shape}")
    e_eig = dagger(vecs) @ e @ vecs
    return vecs @ (frechet_kernel(lam, tau) * e_eig) @ dagger(vecs)
