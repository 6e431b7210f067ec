"""Acceptance suite: one test per criterion, each reporting a single PASS/FAIL line.

The desk-scale training runs (criteria 4 and 6) take tens of minutes on one core.
"""

import json
import time

import numpy as np
import pytest

from pulsecompile import adjoint, cli, physics, pipeline as pl, risk
from pulsecompile import neuralnet as nn
from pulsecompile.physics import CouplingModel, GateSpec, PulseSequence, SystemParams
from pulsecompile.risk import RiskConfig
from pulsecompile.uncertainty import NoiseConfig, RngStream, propagate_scenario, sample_scenario

from oracles import expected_shortfall, random_unitary, spectral_bruteforce, tv_bruteforce

# fourth-order central stencil; at 1e-3 its truncation and rounding errors both stay near 1e-13
DELTA = 1e-3

DESK_NOMINAL = dict(seed=0, n_gates=128, batch_size=16, epochs=150, lr=5e-4, dropout=0.0, t_slices=300,
                    validation_gates=64, validate_every=10)
DESK_ROBUST = dict(stage="robust", epochs=100, lr=1e-3, scenarios_per_example=8, risk=RiskConfig(alpha=0.5),
                   robust_coupling=CouplingModel.HEISENBERG)
SWEEP_GRIDS = {"alpha_g": [0.85, 0.9, 0.95, 1.0, 1.05, 1.1, 1.15], "dt_scale": [0.9, 0.95, 1.0, 1.05, 1.1]}

# single-gate run: 20 slices of 0.25 ms at 2.5 kHz, the best direct-optimization setting found for 20 slices
SINGLE_GATE = dict(n_gates=1, batch_size=1, epochs=200, dropout=0.0, t_slices=20, dt=0.25, amplitude=2.5,
                   lr=1e-3, validation_gates=0)


@pytest.fixture
def report(request):
    term = request.config.pluginmanager.get_plugin("terminalreporter")

    def emit(number, ok, detail):
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'} {detail}"
        if term is not None:
            term.write_line("")
            term.write_line(line)
        else:
            print(line)
        return ok

    return emit


@pytest.fixture(scope="session")
def nominal_run():
    cfg = pl.TrainConfig(**DESK_NOMINAL)
    return cfg, pl.train_nominal(cfg)


@pytest.fixture(scope="session")
def robust_run(nominal_run):
    cfg, nominal = nominal_run
    rcfg = pl.with_overrides(cfg, **DESK_ROBUST)
    return rcfg, pl.train_robust(rcfg, nominal.params)


def fd_gradient(loss_fn, phases):
    g = np.empty_like(phases)
    for t in range(phases.size):
        e = np.zeros_like(phases)
        e[t] = DELTA
        g[t] = (loss_fn(phases - 2 * e) - 8 * loss_fn(phases - e) + 8 * loss_fn(phases + e) - loss_fn(phases + 2 * e)) / (
            12 * DELTA
        )
    return g


def test_criterion_1_gradient_matches_finite_differences(report):
    start = time.perf_counter()
    p = SystemParams()
    noise = NoiseConfig(sigma_v=0.1, sigma_j=0.2, sigma_a_bias=0.1, sigma_a_jit=0.1, sigma_phi0=0.3,
                        sigma_phi_jit=0.2, sigma_dt=0.1, sigma_dt_jit=0.05)
    worst = 0.0
    for case in range(40):
        rng = np.random.default_rng(5000 + case)
        amp, dt = rng.uniform(0.5, 4.0), rng.uniform(0.05, 0.4)
        phases = rng.uniform(-np.pi, np.pi, 8)
        target = physics.gate_target(GateSpec(*rng.uniform(0, np.pi / 2, 3)))
        if case < 20:
            _, g = adjoint.loss_and_phase_gradient(p, PulseSequence(phases, amp, dt), target)

            def loss(ph):
                return 1.0 - physics.fidelity(target, physics.propagate(p, PulseSequence(ph, amp, dt)))
        else:
            sc = sample_scenario(noise, 8, RngStream(case, (11,)))
            model = CouplingModel.ZZ
            _, g = adjoint.loss_and_phase_gradient_scenario(p, PulseSequence(phases, amp, dt), target, sc, model)

            def loss(ph):
                return 1.0 - physics.fidelity(target, propagate_scenario(p, PulseSequence(ph, amp, dt), sc, model))

        fd = fd_gradient(loss, phases)
        worst = max(worst, float(np.max(np.abs(g - fd) / np.abs(fd))))
    elapsed = time.perf_counter() - start
    ok = report(1, worst < 1e-6 and elapsed < 60.0, f"max rel err {worst:.2e}, {elapsed:.1f} s")
    assert ok


def test_criterion_2_unitarity_and_fidelity_properties(report):
    rng = np.random.default_rng(77)
    p = SystemParams()
    worst_unit = worst_phase = 0.0
    in_range = True
    for _ in range(1000):
        t = int(rng.integers(1, 12))
        pulse = PulseSequence(rng.uniform(-np.pi, np.pi, t), rng.uniform(0.0, 5.0), rng.uniform(0.01, 0.5))
        u = physics.propagate(p, pulse)
        worst_unit = max(worst_unit, float(np.linalg.norm(u.conj().T @ u - np.eye(8))))
        target = random_unitary(rng, 8)
        f = physics.fidelity(target, u)
        phase = np.exp(1j * rng.uniform(0, 2 * np.pi))
        worst_phase = max(worst_phase, abs(physics.fidelity(target, phase * u) - f))
        in_range &= 0.0 <= f <= 1.0
    ok = worst_unit < 1e-9 and worst_phase < 1e-12 and in_range
    assert report(2, ok, f"unitarity {worst_unit:.1e}, phase {worst_phase:.1e}, range ok={in_range}")


def test_criterion_3_rucvar_oracle_and_monotone_chain(report):
    worst, chain_ok = 0.0, True
    for seed in range(100):
        rng = np.random.default_rng(seed)
        n = int(rng.choice([10, 20, 40, 80]))
        losses = rng.random(n)
        rho = {a: risk.rucvar(losses, a)[0] for a in (0.2, 0.5, 0.8)}
        for a in rho:
            worst = max(worst, abs(rho[a] - expected_shortfall(losses, a)))
        chain_ok &= rho[0.2] >= rho[0.5] >= rho[0.8] >= losses.mean()
    assert report(3, worst < 1e-12 and chain_ok, f"max |rucvar - ES| {worst:.1e}, chain ok={chain_ok}")


def test_criterion_4_desk_scale_nominal_compilation(nominal_run, report):
    cfg, res = nominal_run
    stats = pl.eval_grid(res.params, 9.0, 90.0, cfg).summary
    ok = stats["count"] == 1331 and stats["mean"] >= 0.95 and stats["median"] >= 0.96
    assert report(4, ok, f"mean {stats['mean']:.4f}, median {stats['median']:.4f}, n={stats['count']}")


def test_criterion_5_single_gate(report):
    start = time.perf_counter()
    cfg = pl.TrainConfig(**SINGLE_GATE)
    res = pl.train_nominal(cfg)
    gate = pl.training_gates(cfg)[0]
    _, fid = pl.compile_gate(res.params, gate, cfg)
    elapsed = time.perf_counter() - start
    degrees = ", ".join(f"{d:.1f}" for d in gate.degrees())
    ok = fid > 0.99 and elapsed < 120.0
    assert report(5, ok, f"gate ({degrees}) deg fidelity {fid:.4f}, {elapsed:.1f} s")


def test_criterion_6_robustness_ordering(nominal_run, robust_run, report):
    cfg, nominal = nominal_run
    _, robust = robust_run
    models = {"nominal": nominal.params, "robust": robust.params}
    rows, _ = pl.sweep_study(models, list(SWEEP_GRIDS), SWEEP_GRIDS, cfg, gate_set_size=128, seed=0)
    floor = {(m, ch): min(r["mean"] for r in rows if r["model"] == m and r["channel"] == ch)
             for m in models for ch in SWEEP_GRIDS}
    overall = {m: min(floor[m, ch] for ch in SWEEP_GRIDS) for m in models}
    at_nominal = {m: next(r["mean"] for r in rows if r["model"] == m and r["channel"] == "alpha_g" and r["value"] == 1.0)
                  for m in models}
    ordered = overall["robust"] > overall["nominal"] and all(
        floor["robust", ch] > floor["nominal", ch] for ch in SWEEP_GRIDS)
    ok = ordered and at_nominal["nominal"] > 0.95 and at_nominal["robust"] >= at_nominal["nominal"] - 0.05
    per_channel = ", ".join(f"{ch} {floor['robust', ch]:.4f} vs {floor['nominal', ch]:.4f}" for ch in SWEEP_GRIDS)
    detail = (f"min mean robust vs nominal: {per_channel}; at nominal knobs "
              f"nominal {at_nominal['nominal']:.4f}, robust {at_nominal['robust']:.4f}")
    assert report(6, ok, detail)


def test_criterion_7_robust_reduces_to_nominal(report):
    base = pl.TrainConfig(seed=3, n_gates=32, batch_size=32, t_slices=300, dropout=0.5, scenarios_per_example=2,
                          validation_gates=0)
    zero = dict(stage="robust", noise=NoiseConfig.zero(), risk=RiskConfig(alpha=1.0, lambda_tv=0.0, lambda_spec=0.0),
                robust_coupling=CouplingModel.HEISENBERG)
    init = nn.init_params(base.seed, base.layer_dims)
    worst = 0.0
    for steps in range(1, 6):
        a = pl.train_nominal(pl.with_overrides(base, epochs=steps), init)
        b = pl.train_robust(pl.with_overrides(base, epochs=steps, **zero), init)
        worst = max(worst, max(float(np.abs(x - y).max()) for x, y in zip(a.params.arrays(), b.params.arrays())))
    assert report(7, worst < 1e-12, f"max parameter gap over 5 steps {worst:.1e}")


DET_CONFIG = {
    "system": {"t_slices": 24},
    "network": {"n_gates": 40, "batch_size": 16, "epochs": 3, "width": 16, "hidden_layers": 2, "dropout": 0.5,
                "validation_gates": 8, "validate_every": 1},
    "robust": {"epochs": 2, "batch_size": 8, "scenarios_per_example": 4, "alpha": 0.5},
}


def _cli_artifacts(root, workers):
    root.mkdir(parents=True)
    cfg = root / "cfg.json"
    cfg.write_text(json.dumps(DET_CONFIG))
    w = ["--workers", str(workers)]
    nom, rob = root / "nom", root / "rob"
    assert cli.main(["train", "--config", str(cfg), "--seed", "11", "--out", str(nom), "--quiet", *w]) == 0
    assert cli.main(["train", "--config", str(cfg), "--stage", "robust", "--seed", "11", "--init", str(nom / "model.json"),
                     "--out", str(rob), "--quiet", *w]) == 0
    assert cli.main(["eval", "--model", str(nom / "model.json"), "--mesh-deg", "30", "--out", str(root / "eval"), *w]) == 0
    assert cli.main(["sweep", "--models", f"nominal={nom / 'model.json'},robust={rob / 'model.json'}",
                     "--channel", "alpha_g", "--channel", "phi_jit_std", "--seed", "5", "--gates", "20", "--repeats", "3",
                     "--out", str(root / "sweep"), *w]) == 0
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def test_criterion_8_cli_artifacts_independent_of_workers(tmp_path, report):
    one = _cli_artifacts(tmp_path / "w1", 1)
    eight = _cli_artifacts(tmp_path / "w8", 8)
    differing = sorted(k for k in one.keys() | eight.keys() if one.get(k) != eight.get(k))
    ok = not differing and len(one) >= 10
    assert report(8, ok, f"{len(one)} artifacts compared, differing: {differing or 'none'}")


def test_criterion_9_regularizer_oracles(report):
    rng = np.random.default_rng(99)
    worst = 0.0
    for _ in range(100):
        x = rng.uniform(-np.pi, np.pi, int(rng.integers(2, 64)))
        cutoff = float(rng.uniform(0.05, 0.95))
        worst = max(worst, abs(risk.tv_penalty(x) - tv_bruteforce(x)))
        worst = max(worst, abs(risk.spectral_penalty(x, cutoff) - spectral_bruteforce(x, cutoff)))
    constant = risk.spectral_penalty(np.full(40, 1.3), 0.2)
    assert report(9, worst < 1e-10 and abs(constant) < 1e-10, f"max oracle gap {worst:.1e}, constant sequence {constant!r}")
