"""Exact gradients of the fidelity loss with respect to per-slice controls.

With ``U = U_T ... U_1`` and ``M_t = U_{t-1:1} U_F^dagger U_{T:t+1}``,

    dF/dphi_t = (2/d^2) Re( conj(Tr(U_F^dagger U)) * Tr(M_t dU_t/dphi_t) )

and ``Tr(M_t dU_t)`` is evaluated in the eigenbasis of ``H(t)`` where the
Frechet derivative of the slice exponential is a Hadamard product with the
divided-difference kernel. The loss is ``1 - F``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import linalg, physics
from .errors import DimensionMismatch
from .physics import PulseSequence, SystemParams
from .uncertainty import EffectivePulse, Scenario, apply_scenario


@dataclass
class GradientTape:
    """Forward-pass record.

    ``prefix_products[k]`` is the product of the first ``k`` slices and
    ``suffix_products[k]`` the product of slices ``k+1 .. T`` (1-based), so
    ``suffix[t] @ slice_unitaries[t-1] @ prefix[t-1] == final_propagator``.
    """

    slice_unitaries: np.ndarray
    prefix_products: np.ndarray
    suffix_products: np.ndarray
    final_propagator: np.ndarray
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray


def _running_products(u: np.ndarray):
    """Prefix and suffix products over axis -3 of ``u`` (shape ``(..., T, d, d)``)."""
    *lead, t_slices, d, _ = u.shape
    eye = np.broadcast_to(np.eye(d, dtype=complex), (*lead, d, d))
    prefix = np.empty((*lead, t_slices + 1, d, d), dtype=complex)
    suffix = np.empty_like(prefix)
    prefix[..., 0, :, :] = eye
    suffix[..., t_slices, :, :] = eye
    for k in range(t_slices):
        prefix[..., k + 1, :, :] = u[..., k, :, :] @ prefix[..., k, :, :]
    for k in range(t_slices - 1, -1, -1):
        suffix[..., k, :, :] = suffix[..., k + 1, :, :] @ u[..., k, :, :]
    return prefix, suffix


def _tape(drift, phases, amps, dts, n_qubits) -> GradientTape:
    h = physics.slice_hamiltonians(drift, phases, amps, n_qubits)
    lam, vecs = np.linalg.eigh(h)
    u = linalg.expm_from_eig(lam, vecs, dts)
    prefix, suffix = _running_products(u)
    return GradientTape(u, prefix, suffix, prefix[..., -1, :, :], lam, vecs)


def forward_with_tape(p: SystemParams, pulse: PulseSequence) -> GradientTape:
    return _tape(physics.build_drift(p), pulse.phases, pulse.amplitude, pulse.dt, p.n_qubits)


def _control_gradients(tape: GradientTape, u_target, phases, amps, dts, n_qubits, with_amplitude=False):
    """Loss ``1 - F`` and its gradients; broadcasts over leading batch dims."""
    u_target = np.asarray(u_target, dtype=complex)
    d = tape.final_propagator.shape[-1]
    if u_target.shape[-2:] != (d, d):
        raise DimensionMismatch(f"target shape {u_target.shape} does not match dimension {d}")
    overlap = np.einsum("...ij,...ij->...", np.conj(u_target), tape.final_propagator)
    loss = 1.0 - np.abs(overlap) ** 2 / d**2

    # M_t = prefix[t-1] U_F^dagger suffix[t], expressed in the eigenbasis of H(t).
    m = tape.prefix_products[..., :-1, :, :] @ (linalg.dagger(u_target)[..., None, :, :] @ tape.suffix_products[..., 1:, :, :])
    vecs = tape.eigenvectors
    vh = linalg.dagger(vecs)
    m_eig = vh @ m @ vecs
    kernel = linalg.frechet_kernel(tape.eigenvalues, dts)
    # Tr(M dU) = sum_ij M~_ji K_ij E~_ij
    weight = np.swapaxes(m_eig, -1, -2) * kernel

    hx, hy = physics.collective_ops(n_qubits)
    hx_eig = vh @ hx @ vecs
    hy_eig = vh @ hy @ vecs
    tr_x = np.einsum("...ij,...ij->...", weight, hx_eig)
    tr_y = np.einsum("...ij,...ij->...", weight, hy_eig)

    scale = -(2.0 / d**2) * np.conj(overlap)[..., None]
    cphi, sphi = np.cos(phases), np.sin(phases)
    grad_phi = np.real(scale * amps * (-sphi * tr_x + cphi * tr_y))
    if not with_amplitude:
        return loss, grad_phi
    grad_amp = np.real(scale * (cphi * tr_x + sphi * tr_y))
    return loss, grad_phi, grad_amp


def loss_and_phase_gradient(p: SystemParams, pulse: PulseSequence, u_target, with_amplitude: bool = False):
    """``(1 - F, dloss/dphi)``; with ``with_amplitude`` also the per-slice amplitude gradient."""
    tape = forward_with_tape(p, pulse)
    t = pulse.t_slices
    out = _control_gradients(
        tape, u_target, pulse.phases, np.full(t, pulse.amplitude), np.full(t, pulse.dt), p.n_qubits, with_amplitude
    )
    return (float(out[0]),) + tuple(out[1:])


def loss_and_phase_gradient_effective(p_eff: SystemParams, eff: EffectivePulse, u_target, with_amplitude=False):
    tape = _tape(physics.build_drift(p_eff), eff.phases, eff.amplitudes, eff.dts, p_eff.n_qubits)
    out = _control_gradients(tape, u_target, eff.phases, eff.amplitudes, eff.dts, p_eff.n_qubits, with_amplitude)
    return (float(out[0]),) + tuple(out[1:])


def loss_and_phase_gradient_scenario(
    p: SystemParams, pulse: PulseSequence, u_target, sc: Scenario, coupling_model=None, with_amplitude=False
):
    """Scenario version; the effective phase shifts by constants so the chain rule is unchanged."""
    p_eff, eff = apply_scenario(p, pulse, sc, coupling_model)
    return loss_and_phase_gradient_effective(p_eff, eff, u_target, with_amplitude)


def batch_loss_and_phase_gradient(drifts, phases, amps, dts, targets, n_qubits: int):
    """Vectorised loss and phase gradient for a stack of independent problems.

    ``drifts`` has shape ``(B, d, d)`` (or ``(d, d)``), control arrays
    ``(B, T)`` and ``targets`` ``(B, d, d)``. Each row is computed
    independently of the others, so results do not depend on how a larger
    problem set is split into batches.
    """
    drifts = np.asarray(drifts, dtype=complex)
    if drifts.ndim == 3:
        drifts = drifts[:, None]
    phases = np.asarray(phases, dtype=float)
    amps = np.broadcast_to(np.asarray(amps, dtype=float), phases.shape)
    dts = np.broadcast_to(np.asarray(dts, dtype=float), phases.shape)
    tape = _tape(drifts, phases, amps, dts, n_qubits)
    return _control_gradients(tape, targets, phases, amps, dts, n_qubits)
