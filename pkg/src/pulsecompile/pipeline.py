"""End-to-end workflows: nominal training, risk-aware re-training, evaluation, sweeps.

Physics evaluations are split into fixed-size chunks and dispatched to a
thread pool; results are gathered back in index order and every random draw
is addressed by an RngStream path, so outputs do not depend on the number of
workers.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from . import __version__, adjoint, physics, risk, uncertainty
from . import neuralnet as nn
from .errors import ConfigError
from .physics import CouplingModel, GateSpec, PulseSequence, SystemParams
from .risk import RiskConfig
from .uncertainty import NoiseConfig, RngStream

log = logging.getLogger(__name__)

CHUNK = 16
DOMAIN_SHUFFLE = 7
DOMAIN_SWEEP_GATES = 8


@dataclass(frozen=True)
class TrainConfig:
    stage: str = "nominal"
    seed: int = 0
    n_gates: int = 512
    batch_size: int = 512
    epochs: int = 500
    lr: float = 5e-4
    weight_decay: float = 1e-3
    degmax: float = 90.0  # degrees
    dropout: float = 0.5
    width: int = 256
    hidden_layers: int = 5
    t_slices: int = physics.NOMINAL_T_SLICES
    amplitude: float = physics.NOMINAL_AMPLITUDE_KHZ
    dt: float = physics.NOMINAL_DT_MS
    system: SystemParams = field(default_factory=SystemParams)
    scenarios_per_example: int = 32
    risk: RiskConfig = field(default_factory=RiskConfig)
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    robust_coupling: CouplingModel = CouplingModel.ZZ
    validation_gates: int = 64
    validate_every: int = 10
    workers: int = 1

    def __post_init__(self):
        if self.stage not in ("nominal", "robust"):
            raise ConfigError(f"stage must be 'nominal' or 'robust', got {self.stage!r}")
        for name in ("n_gates", "batch_size", "width", "hidden_layers", "t_slices", "scenarios_per_example"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if self.epochs < 0 or self.validation_gates < 0 or self.workers < 1:
            raise ConfigError("epochs/validation_gates must be >= 0 and workers >= 1")
        if not 0.0 < self.degmax <= 180.0:
            raise ConfigError("degmax must lie in (0, 180] degrees")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must lie in [0, 1)")
        if self.amplitude < 0 or not self.dt > 0:
            raise ConfigError("amplitude must be >= 0 and dt > 0")
        object.__setattr__(self, "robust_coupling", CouplingModel(self.robust_coupling))

    @property
    def layer_dims(self) -> tuple:
        return nn.default_layer_dims(self.t_slices, self.width, self.hidden_layers)

    def to_dict(self) -> dict:
        return {
            "stage": self.stage,
            "seed": self.seed,
            "n_gates": self.n_gates,
            "batch_size": self.batch_size,
            "epochs": self.epochs,
            "lr": self.lr,
            "weight_decay": self.weight_decay,
            "degmax": self.degmax,
            "dropout": self.dropout,
            "width": self.width,
            "hidden_layers": self.hidden_layers,
            "t_slices": self.t_slices,
            "amplitude": self.amplitude,
            "dt": self.dt,
            "system": system_to_dict(self.system),
            "scenarios_per_example": self.scenarios_per_example,
            "risk": {**asdict(self.risk), "kind": self.risk.kind.value},
            "noise": self.noise.to_dict(),
            "robust_coupling": self.robust_coupling.value,
            "validation_gates": self.validation_gates,
            "validate_every": self.validate_every,
        }

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        """Inverse of :meth:`to_dict`."""
        d = dict(d)
        try:
            d["system"] = system_from_dict(d.get("system", {}))
            d["risk"] = RiskConfig(**d.get("risk", {}))
            d["noise"] = NoiseConfig.from_dict(d.get("noise", {}))
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(f"invalid training config: {exc}") from exc


def system_to_dict(p: SystemParams) -> dict:
    return {
        "n_qubits": p.n_qubits,
        "v": list(p.v),
        "j": {f"{a}-{b}": val for (a, b), val in sorted(p.j.items())},
        "coupling_model": p.coupling_model.value,
    }


def system_from_dict(d: dict) -> SystemParams:
    try:
        j = {tuple(int(x) for x in k.split("-")): v for k, v in d.get("j", {}).items()}
        kw = {k: d[k] for k in ("n_qubits", "v", "coupling_model") if k in d}
        if j:
            kw["j"] = j
        return SystemParams(**kw)
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"invalid system block: {exc}") from exc


@dataclass
class TrainResult:
    params: nn.MlpParams
    state: nn.AdamWState
    curve: list  # one dict per epoch
    best_validation: dict | None = None


@dataclass
class EvalReport:
    gates: list  # GateSpec per evaluated point
    fidelities: np.ndarray
    metadata: dict = field(default_factory=dict)

    @property
    def summary(self) -> dict:
        return summarize(self.fidelities)


def summarize(values) -> dict:
    v = np.asarray(values, dtype=float)
    return {
        "mean": float(np.mean(v)),
        "median": float(np.median(v)),
        "min": float(np.min(v)),
        "max": float(np.max(v)),
        "count": int(v.size),
    }


# -- helpers ------------------------------------------------------------------


def sample_gates(n: int, degmax: float, rng: RngStream) -> list:
    """``n`` gates with each angle independently uniform on ``[0, degmax]`` degrees."""
    if n < 1:
        raise ValueError("n must be >= 1")
    angles = rng.generator().uniform(0.0, math.radians(degmax), size=(n, 3))
    return [GateSpec(*map(float, row)) for row in angles]


def _run_chunks(fn: Callable, n_items: int, workers: int) -> list:
    """Evaluate ``fn(lo, hi)`` over fixed-size chunks, returning results in order."""
    bounds = [(lo, min(lo + CHUNK, n_items)) for lo in range(0, n_items, CHUNK)]
    if workers <= 1 or len(bounds) <= 1:
        return [fn(lo, hi) for lo, hi in bounds]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda b: fn(*b), bounds))


def _gate_targets(gates, n_qubits) -> np.ndarray:
    return np.stack([physics.gate_target(g, n_qubits) for g in gates])


def nominal_losses_and_grads(phases, targets, cfg: TrainConfig, system: SystemParams | None = None):
    """Per-gate ``(1 - F)`` and phase gradients under the nominal model."""
    system = cfg.system if system is None else system
    drift = physics.build_drift(system)

    def work(lo, hi):
        return adjoint.batch_loss_and_phase_gradient(
            drift, phases[lo:hi], cfg.amplitude, cfg.dt, targets[lo:hi], system.n_qubits
        )

    parts = _run_chunks(work, len(phases), cfg.workers)
    return np.concatenate([p[0] for p in parts]), np.concatenate([p[1] for p in parts])


def nominal_fidelities(phases, targets, cfg: TrainConfig, system: SystemParams | None = None) -> np.ndarray:
    system = cfg.system if system is None else system
    drift = physics.build_drift(system)

    def work(lo, hi):
        u = physics.ordered_product(
            physics.slice_unitaries(drift, phases[lo:hi], cfg.amplitude, cfg.dt, system.n_qubits)
        )
        return physics.fidelity(targets[lo:hi], u)

    return np.concatenate(_run_chunks(work, len(phases), cfg.workers))


def scenario_losses_and_grads(phases, targets, scenarios, system: SystemParams, cfg: TrainConfig):
    """Losses ``(B, S)`` and gradients ``(B, S, T)`` for ``scenarios[b][s]``."""
    b, s = len(scenarios), len(scenarios[0])
    flat = [(i, sc) for i in range(b) for sc in scenarios[i]]

    def work(lo, hi):
        drift_cache = {}
        drifts, ph, am, dts, tg = [], [], [], [], []
        for i, sc in flat[lo:hi]:
            pulse = PulseSequence(phases[i], cfg.amplitude, cfg.dt)
            p_eff, eff = uncertainty.apply_scenario(system, pulse, sc)
            if p_eff not in drift_cache:
                drift_cache[p_eff] = physics.build_drift(p_eff)
            drifts.append(drift_cache[p_eff])
            ph.append(eff.phases)
            am.append(eff.amplitudes)
            dts.append(eff.dts)
            tg.append(targets[i])
        return adjoint.batch_loss_and_phase_gradient(
            np.stack(drifts), np.stack(ph), np.stack(am), np.stack(dts), np.stack(tg), system.n_qubits
        )

    parts = _run_chunks(work, len(flat), cfg.workers)
    losses = np.concatenate([p[0] for p in parts]).reshape(b, s)
    grads = np.concatenate([p[1] for p in parts]).reshape(b, s, -1)
    return losses, grads


def _batches(cfg: TrainConfig, epoch: int):
    order = RngStream(cfg.seed, (DOMAIN_SHUFFLE, epoch)).generator().permutation(cfg.n_gates)
    return [order[lo : lo + cfg.batch_size] for lo in range(0, cfg.n_gates, cfg.batch_size)]


def training_gates(cfg: TrainConfig) -> list:
    return sample_gates(cfg.n_gates, cfg.degmax, RngStream(cfg.seed, (uncertainty.DOMAIN_GATES,)))


def validation_gates(cfg: TrainConfig) -> list:
    if cfg.validation_gates == 0:
        return []
    return sample_gates(cfg.validation_gates, cfg.degmax, RngStream(cfg.seed, (uncertainty.DOMAIN_VALIDATION,)))


def _validate(params, gates, targets, cfg) -> float:
    phases, _ = nn.mlp_forward(params, nn.encode_batch(gates))
    return float(np.mean(nominal_fidelities(phases, targets, cfg)))


def _check_dims(params: nn.MlpParams, cfg: TrainConfig) -> None:
    if params.layer_dims[0] != nn.N_FEATURES or params.layer_dims[-1] != cfg.t_slices:
        raise ConfigError(f"network dims {params.layer_dims} inconsistent with T={cfg.t_slices}")


def _train(cfg: TrainConfig, params, state, step_grad, progress=None) -> TrainResult:
    """Shared epoch/mini-batch loop; ``step_grad(params, idx, epoch)`` returns (grads, batch_loss)."""
    _check_dims(params, cfg)
    val_g = validation_gates(cfg)
    val_t = _gate_targets(val_g, cfg.system.n_qubits) if val_g else None
    curve, best = [], None
    for epoch in range(cfg.epochs):
        losses = []
        for idx in _batches(cfg, epoch):
            grads, batch_loss = step_grad(params, idx, epoch)
            params, state = nn.adamw_step(params, grads, state)
            losses.append(batch_loss)
        row = {"epoch": epoch + 1, "loss": float(np.mean(losses))}
        if val_g and ((epoch + 1) % cfg.validate_every == 0 or epoch + 1 == cfg.epochs):
            row["val_fidelity"] = _validate(params, val_g, val_t, cfg)
            if best is None or row["val_fidelity"] > best["val_fidelity"]:
                best = {"epoch": epoch + 1, "val_fidelity": row["val_fidelity"]}
        curve.append(row)
        log.info("epoch %d loss %.6f %s", epoch + 1, row["loss"], row.get("val_fidelity", ""))
        if progress is not None:
            progress(row)
    return TrainResult(params, state, curve, best)


def _dropout(params, cfg: TrainConfig, epoch, idx):
    return nn.sample_dropout(params, cfg.dropout, nn.dropout_streams(cfg.seed, epoch, idx))


def train_nominal(cfg: TrainConfig, init: nn.MlpParams | None = None, progress=None) -> TrainResult:
    """Fidelity-driven training under the nominal Hamiltonian (loss ``mean(1 - F)``)."""
    if cfg.stage != "nominal":
        raise ConfigError("train_nominal needs stage='nominal'")
    gates = training_gates(cfg)
    x = nn.encode_batch(gates)
    targets = _gate_targets(gates, cfg.system.n_qubits)
    params = nn.init_params(cfg.seed, cfg.layer_dims) if init is None else init.copy()
    state = nn.AdamWState.fresh(params, lr=cfg.lr, weight_decay=cfg.weight_decay)

    def step_grad(params, idx, epoch):
        phases, cache = nn.mlp_forward(params, x[idx], _dropout(params, cfg, epoch, idx))
        losses, grads = nominal_losses_and_grads(phases, targets[idx], cfg)
        return nn.mlp_backward(params, cache, grads / len(idx)), float(losses.mean())

    return _train(cfg, params, state, step_grad, progress)


def robust_scenarios(cfg: TrainConfig, epoch: int, idx) -> list:
    return [
        [
            uncertainty.sample_scenario(
                cfg.noise, cfg.t_slices, RngStream(cfg.seed, (uncertainty.DOMAIN_SCENARIO, epoch, int(i), s))
            )
            for s in range(cfg.scenarios_per_example)
        ]
        for i in idx
    ]


def robust_batch_gradient(params, cache, phases, losses, grads, cfg: TrainConfig):
    """Backprop the batch objective: risk weights on scenario gradients plus regularizers."""
    w = risk.aggregate_gradient(losses, cfg.risk)
    grad_phases = np.einsum("bs,bst->bt", w, grads) + risk.regularizer_gradient(phases, cfg.risk)
    return nn.mlp_backward(params, cache, grad_phases)


def train_robust(cfg: TrainConfig, init: nn.MlpParams, progress=None) -> TrainResult:
    """Scenario-based re-training from a nominal network with the risk objective."""
    if cfg.stage != "robust":
        raise ConfigError("train_robust needs stage='robust'")
    if init is None:
        raise ConfigError("robust training needs an initial network")
    gates = training_gates(cfg)
    x = nn.encode_batch(gates)
    targets = _gate_targets(gates, cfg.system.n_qubits)
    system = cfg.system.scaled(coupling_model=cfg.robust_coupling)
    params = init.copy()
    state = nn.AdamWState.fresh(params, lr=cfg.lr, weight_decay=cfg.weight_decay)

    def step_grad(params, idx, epoch):
        phases, cache = nn.mlp_forward(params, x[idx], _dropout(params, cfg, epoch, idx))
        scenarios = robust_scenarios(cfg, epoch, idx)
        losses, grads = scenario_losses_and_grads(phases, targets[idx], scenarios, system, cfg)
        value = risk.objective(losses, phases, cfg.risk)
        return robust_batch_gradient(params, cache, phases, losses, grads, cfg), value

    return _train(cfg, params, state, step_grad, progress)


# -- inference ----------------------------------------------------------------


def compile_gates(params: nn.MlpParams, gates: Sequence[GateSpec], cfg: TrainConfig):
    """Inference-mode pulses and nominal fidelities for many gates."""
    phases, _ = nn.mlp_forward(params, nn.encode_batch(list(gates)))
    fids = nominal_fidelities(phases, _gate_targets(gates, cfg.system.n_qubits), cfg)
    return phases, fids


def compile_gate(params: nn.MlpParams, g: GateSpec, cfg: TrainConfig):
    phases, fids = compile_gates(params, [g], cfg)
    return PulseSequence(phases[0], cfg.amplitude, cfg.dt), float(fids[0])


def grid_gates(mesh: float, degmax: float) -> list:
    """All mesh points of ``[0, degmax]^3`` (degrees), endpoints included, gamma slowest."""
    steps = degmax / mesh
    n = int(round(steps))
    if n < 1 or abs(steps - n) > 1e-9:
        raise ConfigError(f"mesh {mesh} does not divide degmax {degmax}")
    axis = [i * mesh for i in range(n + 1)]
    return [GateSpec.from_degrees(a, b, c) for a in axis for b in axis for c in axis]


def eval_grid(params: nn.MlpParams, mesh: float, degmax: float, cfg: TrainConfig) -> EvalReport:
    gates = grid_gates(mesh, degmax)
    _, fids = compile_gates(params, gates, cfg)
    meta = {
        "mesh_deg": mesh,
        "degmax_deg": degmax,
        "model_hash": params.digest()[:16],
        "config_hash": cfg.digest(),
        "seed": cfg.seed,
        "revision": f"pulsecompile-{__version__}",
    }
    return EvalReport(gates, fids, meta)


def channel_value_internal(channel: str, value: float) -> float:
    """Human-facing sweep value (degrees for phase channels) -> internal units."""
    return math.radians(value) if channel in uncertainty.DEGREE_CHANNELS else float(value)


def sweep_study(
    models: dict,
    channels: Sequence[str],
    grids: dict,
    cfg: TrainConfig,
    gate_set_size: int = 128,
    seed: int = 0,
    repeats: int = 16,
    system: SystemParams | None = None,
):
    """Mean fidelity of every model on every channel/grid value over a shared random gate set.

    ``grids`` maps channel -> values in human units (degrees for phase
    channels). Returns ``(rows, summary)``: ``rows`` holds one dict per
    (model, channel, value) with gate statistics, ``summary`` one dict per
    (model, channel) with statistics of the mean-fidelity curve.
    """
    for ch in channels:
        uncertainty.check_channel(ch)
    system = cfg.system if system is None else system
    gates = sample_gates(gate_set_size, cfg.degmax, RngStream(seed, (DOMAIN_SWEEP_GATES,)))
    rows, summary = [], []
    for name, params in models.items():
        phases, _ = nn.mlp_forward(params, nn.encode_batch(gates))
        pulses = [PulseSequence(ph, cfg.amplitude, cfg.dt) for ph in phases]
        for ch in channels:
            means = []
            for value in grids[ch]:
                fids = _sweep_parallel(ch, channel_value_internal(ch, value), gates, pulses, system, repeats, seed, cfg)
                stats = summarize(fids)
                rows.append({"model": name, "channel": ch, "value": float(value), **stats})
                means.append(stats["mean"])
            summary.append({"model": name, "channel": ch, **summarize(means)})
    return rows, summary


def _sweep_parallel(ch, value, gates, pulses, system, repeats, seed, cfg: TrainConfig) -> np.ndarray:
    def work(lo, hi):
        return uncertainty.sweep_fidelities(ch, value, gates[lo:hi], pulses[lo:hi], system, repeats, seed, gate_offset=lo)

    return np.concatenate(_run_chunks(work, len(gates), cfg.workers))


def with_overrides(cfg: TrainConfig, **kw) -> TrainConfig:
    return replace(cfg, **kw)
