import numpy as np
import pytest

from pulsecompile import adjoint, physics
from pulsecompile.errors import DimensionMismatch
from pulsecompile.physics import GateSpec, PulseSequence, SystemParams
from pulsecompile.uncertainty import (
    EffectivePulse,
    NoiseConfig,
    RngStream,
    Scenario,
    propagate_effective,
    propagate_scenario,
    sample_scenario,
)

from oracles import random_unitary

DELTA = 1e-6


def fd_phase_gradient(loss_fn, phases):
    g = np.empty_like(phases)
    for t in range(phases.size):
        up, dn = phases.copy(), phases.copy()
        up[t] += DELTA
        dn[t] -= DELTA
        g[t] = (loss_fn(up) - loss_fn(dn)) / (2 * DELTA)
    return g


def max_rel_err(got, want):
    return float(np.max(np.abs(got - want) / np.abs(want)))


def nominal_loss(p, amp, dt, target):
    return lambda ph: 1.0 - physics.fidelity(target, physics.propagate(p, PulseSequence(ph, amp, dt)))


def test_tape_single_slice():
    pulse = PulseSequence([0.4], amplitude=2.0, dt=0.3)
    tape = adjoint.forward_with_tape(SystemParams(), pulse)
    np.testing.assert_array_equal(tape.prefix_products[0], np.eye(8))
    np.testing.assert_array_equal(tape.suffix_products[1], np.eye(8))
    np.testing.assert_allclose(tape.final_propagator, tape.slice_unitaries[0], atol=1e-15)


def test_tape_splice_identity(rng):
    pulse = PulseSequence(rng.uniform(-3, 3, 3), amplitude=2.0, dt=0.3)
    tape = adjoint.forward_with_tape(SystemParams(), pulse)
    u = tape.slice_unitaries
    np.testing.assert_allclose(tape.final_propagator, u[2] @ u[1] @ u[0], atol=1e-14)
    for t in range(1, 4):
        spliced = tape.suffix_products[t] @ u[t - 1] @ tape.prefix_products[t - 1]
        assert np.linalg.norm(spliced - tape.final_propagator) < 1e-9


def test_tape_matches_propagate(rng):
    p = SystemParams()
    pulse = PulseSequence(rng.uniform(-3, 3, 20), amplitude=1.0, dt=0.035)
    tape = adjoint.forward_with_tape(p, pulse)
    assert np.abs(tape.final_propagator - physics.propagate(p, pulse)).max() < 1e-12


def test_tape_zero_hamiltonian():
    p = SystemParams(v=(0, 0, 0), j={})
    tape = adjoint.forward_with_tape(p, PulseSequence(np.zeros(4), amplitude=0.0, dt=0.2))
    for arr in (tape.slice_unitaries, tape.prefix_products, tape.suffix_products):
        np.testing.assert_allclose(arr, np.broadcast_to(np.eye(8), arr.shape), atol=1e-15)


def test_zero_amplitude_gives_zero_gradient(rng):
    pulse = PulseSequence(rng.uniform(-3, 3, 6), amplitude=0.0, dt=0.2)
    _, g = adjoint.loss_and_phase_gradient(SystemParams(), pulse, random_unitary(rng, 8))
    assert np.all(g == 0.0)


def test_stationary_at_own_propagator(rng):
    p = SystemParams()
    pulse = PulseSequence(rng.uniform(-3, 3, 8), amplitude=2.0, dt=0.2)
    loss, g = adjoint.loss_and_phase_gradient(p, pulse, physics.propagate(p, pulse))
    assert abs(loss) < 1e-10
    assert np.abs(g).max() < 1e-10


@pytest.mark.parametrize("case", range(10))
@pytest.mark.parametrize("t_slices", [4, 8])
def test_phase_gradient_matches_central_difference(case, t_slices):
    rng = np.random.default_rng(1000 + case)
    p = SystemParams()
    amp, dt = rng.uniform(0.5, 4.0), rng.uniform(0.05, 0.4)
    phases = rng.uniform(-np.pi, np.pi, t_slices)
    target = physics.gate_target(GateSpec(*rng.uniform(0, np.pi / 2, 3)))
    loss, g = adjoint.loss_and_phase_gradient(p, PulseSequence(phases, amp, dt), target)
    fd = fd_phase_gradient(nominal_loss(p, amp, dt, target), phases)
    assert max_rel_err(g, fd) < 1e-6


def test_amplitude_gradient_matches_central_difference(rng):
    p = SystemParams()
    phases = rng.uniform(-np.pi, np.pi, 5)
    target = physics.gate_target(GateSpec(0.7, 0.4, 1.1))
    amps = rng.uniform(1.0, 3.0, 5)
    dts = np.full(5, 0.2)
    _, _, ga = adjoint.loss_and_phase_gradient_effective(
        p, EffectivePulse(phases, amps, dts), target, with_amplitude=True
    )
    def loss(a):
        return 1.0 - physics.fidelity(target, propagate_effective(p, EffectivePulse(phases, a, dts)))

    fd = fd_phase_gradient(loss, amps)
    assert max_rel_err(ga, fd) < 1e-6


def test_target_dimension_checked(rng):
    with pytest.raises(DimensionMismatch):
        adjoint.loss_and_phase_gradient(SystemParams(), PulseSequence(np.zeros(3)), np.eye(2))


def test_scenario_nominal_reduction(rng):
    p = SystemParams()
    pulse = PulseSequence(rng.uniform(-3, 3, 10), amplitude=1.5, dt=0.1)
    target = physics.gate_target(GateSpec(1.0, 0.5, 0.2))
    l0, g0 = adjoint.loss_and_phase_gradient(p, pulse, target)
    l1, g1 = adjoint.loss_and_phase_gradient_scenario(p, pulse, target, Scenario.nominal(10))
    assert abs(l0 - l1) < 1e-14
    assert np.abs(g0 - g1).max() < 1e-14


def test_scenario_phase_offset_is_substitution(rng):
    p = SystemParams()
    phases = rng.uniform(-3, 3, 10)
    target = physics.gate_target(GateSpec(1.0, 0.5, 0.2))
    _, g_sc = adjoint.loss_and_phase_gradient_scenario(
        p, PulseSequence(phases, 1.5, 0.1), target, Scenario.nominal(10, phi0=0.3)
    )
    _, g_shift = adjoint.loss_and_phase_gradient(p, PulseSequence(phases + 0.3, 1.5, 0.1), target)
    np.testing.assert_allclose(g_sc, g_shift, atol=1e-13)


@pytest.mark.parametrize("case", range(10))
def test_scenario_gradient_matches_central_difference(case):
    rng = np.random.default_rng(2000 + case)
    t_slices = 4 if case % 2 else 8
    p = SystemParams()
    big = NoiseConfig(sigma_v=0.1, sigma_j=0.2, sigma_a_bias=0.1, sigma_a_jit=0.1, sigma_phi0=0.3,
                      sigma_phi_jit=0.2, sigma_dt=0.1, sigma_dt_jit=0.05)
    sc = sample_scenario(big, t_slices, RngStream(case, (9,)))
    amp, dt = rng.uniform(0.5, 4.0), rng.uniform(0.05, 0.4)
    phases = rng.uniform(-np.pi, np.pi, t_slices)
    target = physics.gate_target(GateSpec(*rng.uniform(0, np.pi / 2, 3)))
    model = physics.CouplingModel.ZZ
    _, g = adjoint.loss_and_phase_gradient_scenario(p, PulseSequence(phases, amp, dt), target, sc, model)

    def loss(ph):
        return 1.0 - physics.fidelity(target, propagate_scenario(p, PulseSequence(ph, amp, dt), sc, model))

    assert max_rel_err(g, fd_phase_gradient(loss, phases)) < 1e-6


def test_batch_matches_single_and_split_invariant(rng):
    p = SystemParams()
    drift = physics.build_drift(p)
    phases = rng.uniform(-3, 3, (6, 12))
    targets = np.stack([physics.gate_target(GateSpec(*rng.uniform(0, 1.5, 3))) for _ in range(6)])
    loss, g = adjoint.batch_loss_and_phase_gradient(drift, phases, 1.0, 0.035, targets, 3)
    for b in range(6):
        lb, gb = adjoint.loss_and_phase_gradient(p, PulseSequence(phases[b], 1.0, 0.035), targets[b])
        assert abs(loss[b] - lb) < 1e-13
        assert np.abs(g[b] - gb).max() < 1e-13
    l2, g2 = adjoint.batch_loss_and_phase_gradient(drift, phases[2:5], 1.0, 0.035, targets[2:5], 3)
    assert np.array_equal(l2, loss[2:5]) and np.array_equal(g2, g[2:5])
