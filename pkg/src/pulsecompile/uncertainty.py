"""Prescribed uncertainty set: eight Gaussian knobs and their effect on a pulse.

Two knobs perturb the drift quasi-statically (relative Zeeman and coupling
scales); six perturb the control chain, either once per sequence (gain,
phase offset, timing scale) or independently per slice (jitters).

Randomness is drawn from counter-based Philox streams addressed by an
integer path, so a draw depends only on ``(master_seed, path)`` and never on
evaluation order or worker count.
"""

from __future__ import annotations

import math
import struct
from dataclasses import asdict, dataclass, fields
from typing import Callable, Sequence

import numpy as np

from . import physics
from .errors import ConfigError, NegativeDuration, UnknownChannel
from .physics import GateSpec, PulseSequence, SystemParams

# Top-level stream namespaces.
DOMAIN_GATES = 1
DOMAIN_DROPOUT = 2
DOMAIN_SCENARIO = 3
DOMAIN_SWEEP = 4
DOMAIN_INIT = 5
DOMAIN_VALIDATION = 6

KNOBS = ("dv", "dj", "alpha_g", "alpha_j", "phi0", "phi_j", "beta_dt", "dt_jit")
KNOB_ID = {name: i for i, name in enumerate(KNOBS)}
MAX_RESAMPLE = 64


@dataclass(frozen=True)
class RngStream:
    master_seed: int
    path: tuple = ()

    def child(self, *indices: int) -> "RngStream":
        return RngStream(self.master_seed, self.path + tuple(int(i) for i in indices))

    def generator(self) -> np.random.Generator:
        seq = np.random.SeedSequence(entropy=int(self.master_seed) % 2**64, spawn_key=self.path)
        return np.random.Generator(np.random.Philox(seq))


@dataclass(frozen=True)
class NoiseConfig:
    """Standard deviations of the eight knobs. Phase entries are radians."""

    sigma_v: float = 0.002
    sigma_j: float = 0.005
    sigma_a_bias: float = 0.03
    sigma_a_jit: float = 0.02
    sigma_phi0: float = math.radians(2.0)
    sigma_phi_jit: float = math.radians(0.5)
    sigma_dt: float = 0.005
    sigma_dt_jit: float = 0.002

    def __post_init__(self):
        for f in fields(self):
            val = getattr(self, f.name)
            if not (math.isfinite(val) and val >= 0):
                raise ConfigError(f"{f.name} must be a finite non-negative number, got {val}")

    @classmethod
    def zero(cls) -> "NoiseConfig":
        return cls(**{f.name: 0.0 for f in fields(cls)})

    @classmethod
    def from_dict(cls, d: dict) -> "NoiseConfig":
        """Build from a config block; ``*_deg`` keys are converted to radians."""
        kw = {}
        names = {f.name for f in fields(cls)}
        for key, val in d.items():
            if key.endswith("_deg") and key[:-4] in names:
                kw[key[:-4]] = math.radians(float(val))
            elif key in names:
                kw[key] = float(val)
            else:
                raise ConfigError(f"unknown noise field {key!r}")
        return cls(**kw)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["sigma_phi0_deg"] = math.degrees(d.pop("sigma_phi0"))
        d["sigma_phi_jit_deg"] = math.degrees(d.pop("sigma_phi_jit"))
        return d


@dataclass(frozen=True)
class Scenario:
    dv: float
    dj: float
    alpha_g: float
    alpha_j: np.ndarray
    phi0: float
    phi_j: np.ndarray
    beta_dt: float
    dt_jit: np.ndarray

    @classmethod
    def nominal(cls, t_slices: int, **overrides) -> "Scenario":
        base = dict(
            dv=0.0,
            dj=0.0,
            alpha_g=1.0,
            alpha_j=np.ones(t_slices),
            phi0=0.0,
            phi_j=np.zeros(t_slices),
            beta_dt=1.0,
            dt_jit=np.zeros(t_slices),
        )
        base.update(overrides)
        return cls(**base)

    @property
    def t_slices(self) -> int:
        return len(self.alpha_j)


@dataclass(frozen=True)
class EffectivePulse:
    """Per-slice controls that actually reach the spins."""

    phases: np.ndarray
    amplitudes: np.ndarray
    dts: np.ndarray

    @classmethod
    def from_pulse(cls, pulse: PulseSequence) -> "EffectivePulse":
        t = pulse.t_slices
        return cls(pulse.phases.copy(), np.full(t, float(pulse.amplitude)), np.full(t, float(pulse.dt)))


def _gauss(rng: RngStream, knob: str, sigma: float, size=None):
    if sigma == 0.0:
        return 0.0 if size is None else np.zeros(size)
    z = rng.child(KNOB_ID[knob]).generator().standard_normal(size)
    return sigma * (float(z) if size is None else z)


def sample_scenario(cfg: NoiseConfig, t_slices: int, rng: RngStream) -> Scenario:
    """Draw one scenario; redraws (on a fresh sub-path) while any slice duration is non-positive."""
    for attempt in range(MAX_RESAMPLE):
        r = rng.child(attempt)
        sc = Scenario(
            dv=_gauss(r, "dv", cfg.sigma_v),
            dj=_gauss(r, "dj", cfg.sigma_j),
            alpha_g=1.0 + _gauss(r, "alpha_g", cfg.sigma_a_bias),
            alpha_j=1.0 + _gauss(r, "alpha_j", cfg.sigma_a_jit, t_slices),
            phi0=_gauss(r, "phi0", cfg.sigma_phi0),
            phi_j=_gauss(r, "phi_j", cfg.sigma_phi_jit, t_slices),
            beta_dt=1.0 + _gauss(r, "beta_dt", cfg.sigma_dt),
            dt_jit=_gauss(r, "dt_jit", cfg.sigma_dt_jit, t_slices),
        )
        if np.all(sc.beta_dt + sc.dt_jit > 0):
            return sc
    raise NegativeDuration("could not draw a scenario with positive slice durations")


def apply_scenario(p: SystemParams, pulse: PulseSequence, sc: Scenario, coupling_model=None):
    """Return ``(p_eff, EffectivePulse)`` for one scenario.

    The drift keeps ``p.coupling_model`` unless ``coupling_model`` is given.
    """
    if sc.t_slices != pulse.t_slices:
        raise ValueError(f"scenario has {sc.t_slices} slices, pulse has {pulse.t_slices}")
    p_eff = p.scaled(1.0 + sc.dv, 1.0 + sc.dj, coupling_model)
    dts = pulse.dt * (sc.beta_dt + sc.dt_jit)
    if np.any(dts <= 0):
        raise NegativeDuration("scenario produces a non-positive slice duration")
    eff = EffectivePulse(
        phases=pulse.phases + sc.phi0 + sc.phi_j,
        amplitudes=pulse.amplitude * sc.alpha_g * sc.alpha_j,
        dts=dts,
    )
    return p_eff, eff


def propagate_effective(p: SystemParams, eff: EffectivePulse) -> np.ndarray:
    drift = physics.build_drift(p)
    u = physics.slice_unitaries(drift, eff.phases, eff.amplitudes, eff.dts, p.n_qubits)
    return physics.ordered_product(u)


def propagate_scenario(p: SystemParams, pulse: PulseSequence, sc: Scenario, coupling_model=None) -> np.ndarray:
    p_eff, eff = apply_scenario(p, pulse, sc, coupling_model)
    return propagate_effective(p_eff, eff)


# -- single-channel sweeps ---------------------------------------------------

DETERMINISTIC_CHANNELS = ("alpha_g", "phi0", "v_scale", "j_scale", "dt_scale")
STOCHASTIC_CHANNELS = ("a_jit_std", "phi_jit_std", "dt_jit_std")
CHANNELS = DETERMINISTIC_CHANNELS + STOCHASTIC_CHANNELS
# Nominal (unperturbed) value of each channel, in internal units.
CHANNEL_NOMINAL = {
    "alpha_g": 1.0,
    "phi0": 0.0,
    "v_scale": 1.0,
    "j_scale": 1.0,
    "dt_scale": 1.0,
    "a_jit_std": 0.0,
    "phi_jit_std": 0.0,
    "dt_jit_std": 0.0,
}
# Channels whose human-facing value is in degrees.
DEGREE_CHANNELS = ("phi0", "phi_jit_std")


def check_channel(channel: str) -> str:
    if channel not in CHANNELS:
        raise UnknownChannel(f"unknown channel {channel!r}; expected one of {', '.join(CHANNELS)}")
    return channel


def _value_key(value: float) -> int:
    return struct.unpack("<Q", struct.pack("<d", float(value)))[0]


def channel_scenario(channel: str, value: float, t_slices: int, rng: RngStream | None = None) -> Scenario:
    """Scenario with one channel set to ``value`` and every other knob nominal."""
    check_channel(channel)
    if channel == "alpha_g":
        return Scenario.nominal(t_slices, alpha_g=float(value))
    if channel == "phi0":
        return Scenario.nominal(t_slices, phi0=float(value))
    if channel == "v_scale":
        return Scenario.nominal(t_slices, dv=float(value) - 1.0)
    if channel == "j_scale":
        return Scenario.nominal(t_slices, dj=float(value) - 1.0)
    if channel == "dt_scale":
        return Scenario.nominal(t_slices, beta_dt=float(value))
    if rng is None:
        raise ValueError(f"stochastic channel {channel!r} needs an RngStream")
    zero = NoiseConfig.zero()
    sigma = {"a_jit_std": "sigma_a_jit", "phi_jit_std": "sigma_phi_jit", "dt_jit_std": "sigma_dt_jit"}[channel]
    cfg = NoiseConfig(**{**asdict(zero), sigma: float(value)})
    return sample_scenario(cfg, t_slices, rng)


def _scenario_stack(p: SystemParams, pulses: Sequence[PulseSequence], scenarios: Sequence[Scenario]):
    """Stack effective controls; returns (drift per item, phases, amps, dts)."""
    drifts, ph, am, dt = [], [], [], []
    cache = {}
    for pulse, sc in zip(pulses, scenarios):
        p_eff, eff = apply_scenario(p, pulse, sc)
        if p_eff not in cache:
            cache[p_eff] = physics.build_drift(p_eff)
        drifts.append(cache[p_eff])
        ph.append(eff.phases)
        am.append(eff.amplitudes)
        dt.append(eff.dts)
    return np.stack(drifts)[:, None], np.stack(ph), np.stack(am), np.stack(dt)


def scenario_fidelities(p: SystemParams, pulses, targets, scenarios, chunk: int = 32) -> np.ndarray:
    """Fidelity of each (pulse, target, scenario) triple."""
    out = np.empty(len(pulses))
    for lo in range(0, len(pulses), chunk):
        hi = min(lo + chunk, len(pulses))
        drift, ph, am, dt = _scenario_stack(p, pulses[lo:hi], scenarios[lo:hi])
        u = physics.ordered_product(physics.slice_unitaries(drift, ph, am, dt, p.n_qubits))
        out[lo:hi] = physics.fidelity(np.stack(targets[lo:hi]), u)
    return out


def sweep_fidelities(
    channel: str,
    value: float,
    gates: Sequence[GateSpec],
    pulse_source,
    p: SystemParams,
    repeats: int = 16,
    seed: int = 0,
    gate_offset: int = 0,
) -> np.ndarray:
    """Per-gate fidelity with one channel set to ``value`` (internal units).

    ``pulse_source`` is either a sequence of pulses aligned with ``gates`` or
    a callable ``gate -> PulseSequence``. Stochastic channels average
    ``repeats`` draws per gate; draws are keyed by ``gate_offset`` plus the
    position in ``gates`` so a gate set can be processed in slices.
    """
    check_channel(channel)
    pulses = list(pulse_source) if not callable(pulse_source) else [pulse_source(g) for g in gates]
    if len(pulses) != len(gates):
        raise ValueError("pulse_source must provide one pulse per gate")
    targets = [physics.gate_target(g, p.n_qubits) for g in gates]
    t_slices = pulses[0].t_slices
    if channel in DETERMINISTIC_CHANNELS:
        sc = channel_scenario(channel, value, t_slices)
        return scenario_fidelities(p, pulses, targets, [sc] * len(gates))
    base = RngStream(seed, (DOMAIN_SWEEP, CHANNELS.index(channel), _value_key(value)))
    rep_pulses, rep_targets, rep_sc = [], [], []
    for gi in range(len(gates)):
        for r in range(repeats):
            rep_pulses.append(pulses[gi])
            rep_targets.append(targets[gi])
            rep_sc.append(channel_scenario(channel, value, t_slices, base.child(gate_offset + gi, r)))
    fids = scenario_fidelities(p, rep_pulses, rep_targets, rep_sc)
    return fids.reshape(len(gates), repeats).mean(axis=1)


def sweep_channel(channel, value, gates, pulse_source, p: SystemParams, repeats: int = 16, seed: int = 0) -> float:
    """Mean fidelity over ``gates`` with one channel perturbed."""
    return float(np.mean(sweep_fidelities(channel, value, gates, pulse_source, p, repeats, seed)))

