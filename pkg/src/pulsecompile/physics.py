"""Spin Hamiltonians, target gates, the sliced propagator and gate fidelity.

Unit convention: frequencies (Zeeman ``v``, couplings ``j``, RF amplitude)
are in kHz and slice durations in ms, so ``frequency * duration`` is a
dimensionless phase. The drift carries the ``pi`` prefactors; the RF term
does not.

Qubit 1 is the most-significant Kronecker factor.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from functools import lru_cache

import numpy as np

from . import linalg
from .errors import DimensionMismatch

SIGMA_X = np.array([[0, 1], [1, 0]], dtype=complex)
SIGMA_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
SIGMA_Z = np.array([[1, 0], [0, -1]], dtype=complex)
IDENTITY_2 = np.eye(2, dtype=complex)

# Nominal register (kHz); qubit indices are 1-based in coupling keys.
NOMINAL_V = (-0.921, 0.04075, 0.7)
NOMINAL_J = {(1, 2): -0.064, (1, 3): 0.0244, (2, 3): 0.0341}
NOMINAL_DT_MS = 0.035
NOMINAL_T_SLICES = 300
NOMINAL_AMPLITUDE_KHZ = 1.0


class CouplingModel(str, Enum):
    HEISENBERG = "heisenberg"
    ZZ = "zz"


@dataclass(frozen=True)
class SystemParams:
    n_qubits: int = 3
    v: tuple = NOMINAL_V
    j: dict = field(default_factory=lambda: dict(NOMINAL_J))
    coupling_model: CouplingModel = CouplingModel.HEISENBERG

    def __post_init__(self):
        object.__setattr__(self, "v", tuple(float(x) for x in self.v))
        object.__setattr__(self, "coupling_model", CouplingModel(self.coupling_model))
        if self.n_qubits < 1:
            raise ValueError("n_qubits must be >= 1")
        if len(self.v) != self.n_qubits:
            raise ValueError(f"expected {self.n_qubits} Zeeman terms, got {len(self.v)}")
        jj = {}
        for key, val in self.j.items():
            a, b = (int(k) for k in key)
            if not 1 <= a < b <= self.n_qubits:
                raise ValueError(f"coupling key {key} is not an ordered qubit pair")
            jj[(a, b)] = float(val)
        object.__setattr__(self, "j", jj)
        if not all(math.isfinite(x) for x in (*self.v, *jj.values())):
            raise ValueError("system parameters must be finite")

    @property
    def dim(self) -> int:
        return 2**self.n_qubits

    def scaled(self, v_scale: float = 1.0, j_scale: float = 1.0, coupling_model=None) -> "SystemParams":
        return SystemParams(
            n_qubits=self.n_qubits,
            v=tuple(v_scale * x for x in self.v),
            j={k: j_scale * x for k, x in self.j.items()},
            coupling_model=self.coupling_model if coupling_model is None else coupling_model,
        )

    def __hash__(self):
        return hash((self.n_qubits, self.v, tuple(sorted(self.j.items())), self.coupling_model))


@dataclass(frozen=True)
class GateSpec:
    """Axis-angle rotation: angle ``gamma`` about the axis at polar ``theta``, azimuth ``alpha`` (radians)."""

    gamma: float
    theta: float
    alpha: float

    @classmethod
    def from_degrees(cls, gamma, theta, alpha) -> "GateSpec":
        return cls(math.radians(gamma), math.radians(theta), math.radians(alpha))

    def degrees(self) -> tuple:
        return tuple(math.degrees(x) for x in (self.gamma, self.theta, self.alpha))


@dataclass
class PulseSequence:
    phases: np.ndarray
    amplitude: float = NOMINAL_AMPLITUDE_KHZ
    dt: float = NOMINAL_DT_MS

    def __post_init__(self):
        self.phases = np.asarray(self.phases, dtype=float).reshape(-1)
        if self.amplitude < 0:
            raise ValueError("amplitude must be non-negative")
        if not self.dt > 0:
            raise ValueError("dt must be positive")

    @property
    def t_slices(self) -> int:
        return self.phases.shape[0]


def single_qubit_op(op, qubit: int, n_qubits: int) -> np.ndarray:
    """Embed a 2x2 operator on ``qubit`` (0-based) of an ``n_qubits`` register."""
    return linalg.kron_all(*(op if k == qubit else IDENTITY_2 for k in range(n_qubits)))


@lru_cache(maxsize=None)
def collective_ops(n_qubits: int):
    """Return read-only ``(H_x, H_y)``, the sums of sigma_x / sigma_y over all spins."""
    hx = sum(single_qubit_op(SIGMA_X, q, n_qubits) for q in range(n_qubits))
    hy = sum(single_qubit_op(SIGMA_Y, q, n_qubits) for q in range(n_qubits))
    hx.setflags(write=False)
    hy.setflags(write=False)
    return hx, hy


def build_drift(p: SystemParams) -> np.ndarray:
    n = p.n_qubits
    h = np.zeros((p.dim, p.dim), dtype=complex)
    for i, vi in enumerate(p.v):
        h += np.pi * vi * single_qubit_op(SIGMA_Z, i, n)
    paulis = (SIGMA_Z,) if p.coupling_model is CouplingModel.ZZ else (SIGMA_X, SIGMA_Y, SIGMA_Z)
    for (a, b), jab in p.j.items():
        for s in paulis:
            h += np.pi * jab * single_qubit_op(s, a - 1, n) @ single_qubit_op(s, b - 1, n)
    return h


def build_control(phase: float, amplitude: float, n_qubits: int) -> np.ndarray:
    if amplitude < 0:
        raise ValueError("amplitude must be non-negative")
    hx, hy = collective_ops(n_qubits)
    return amplitude * (math.cos(phase) * hx + math.sin(phase) * hy)


def slice_hamiltonians(drift: np.ndarray, phases, amplitudes, n_qubits: int) -> np.ndarray:
    """Per-slice ``H(t) = H0 + A(t)(cos phi(t) H_x + sin phi(t) H_y)``; phases broadcast over leading dims."""
    hx, hy = collective_ops(n_qubits)
    phases = np.asarray(phases, dtype=float)
    amps = np.broadcast_to(np.asarray(amplitudes, dtype=float), phases.shape)
    c = (amps * np.cos(phases))[..., None, None]
    s = (amps * np.sin(phases))[..., None, None]
    return drift + c * hx + s * hy


def ordered_product(slices: np.ndarray) -> np.ndarray:
    """``U_T ... U_2 U_1`` over axis -3 (slice 1 acts first)."""
    out = np.broadcast_to(np.eye(slices.shape[-1], dtype=complex), slices.shape[:-3] + slices.shape[-2:]).copy()
    for t in range(slices.shape[-3]):
        out = slices[..., t, :, :] @ out
    return out


def slice_unitaries(drift, phases, amplitudes, dts, n_qubits):
    h = slice_hamiltonians(drift, phases, amplitudes, n_qubits)
    lam, vecs = np.linalg.eigh(h)
    return linalg.expm_from_eig(lam, vecs, dts)


def propagate(p: SystemParams, pulse: PulseSequence) -> np.ndarray:
    h = slice_hamiltonians(build_drift(p), pulse.phases, pulse.amplitude, p.n_qubits)
    lam, vecs = linalg.herm_eig(h)
    return ordered_product(linalg.expm_from_eig(lam, vecs, pulse.dt))


def target_su2(g: GateSpec) -> np.ndarray:
    nx = math.sin(g.theta) * math.cos(g.alpha)
    ny = math.sin(g.theta) * math.sin(g.alpha)
    nz = math.cos(g.theta)
    return math.cos(g.gamma / 2) * IDENTITY_2 - 1j * math.sin(g.gamma / 2) * (
        nx * SIGMA_X + ny * SIGMA_Y + nz * SIGMA_Z
    )


def lift_target(u2, n_qubits: int) -> np.ndarray:
    u2 = np.asarray(u2, dtype=complex)
    if u2.shape != (2, 2):
        raise DimensionMismatch(f"expected a 2x2 gate, got {u2.shape}")
    return linalg.kron(u2, np.eye(2 ** (n_qubits - 1)))


def gate_target(g: GateSpec, n_qubits: int = 3) -> np.ndarray:
    return lift_target(target_su2(g), n_qubits)


def fidelity(u_target, u) -> float:
    """Global-phase-insensitive ``|Tr(U_t^dagger U)|^2 / d^2``; broadcasts over stacks."""
    u_target = np.asarray(u_target)
    u = np.asarray(u)
    if u_target.shape[-2:] != u.shape[-2:] or u.shape[-1] != u.shape[-2]:
        raise DimensionMismatch(f"shape mismatch {u_target.shape} vs {u.shape}")
    d = u.shape[-1]
    overlap = np.einsum("...ij,...ij->...", np.conj(u_target), u)
    return np.abs(overlap) ** 2 / d**2

