from math import comb

import numpy as np
import pytest

from vibrocorr import (
    AdoHierarchy,
    Drive,
    HeomPropagator,
    PropagationError,
    PropagatorConfig,
    VibronicParams,
    adiabatize,
    build_system,
    enumerate_hierarchy,
    equilibrate,
    expansion_coeffs,
    hierarchy_rhs,
    load_checkpoint,
    matsubara_tail,
    propagate,
    save_checkpoint,
    thermal_state,
)
from vibrocorr.correlations import detection_series


def _system(params):
    ops = build_system(params)
    rho = thermal_state(params, adiabatize(ops.h_sys))
    return ops, rho


class TestEnumeration:
    def test_binomial_count(self):
        assert enumerate_hierarchy(3, 4).size == 35
        assert enumerate_hierarchy(3, 4).size == comb(3 + 4, 4)
        assert enumerate_hierarchy(5, 4).size == comb(9, 4)

    def test_depth_zero_single_index(self):
        space = enumerate_hierarchy(3, 0)
        assert space.size == 1
        assert space.indices[0].counts == (0, 0, 0)

    def test_raise_links_below_top_tier(self):
        space = enumerate_hierarchy(3, 4)
        for i, idx in enumerate(space.indices):
            expected = 3 if idx.tier < 4 else 0
            links = sum(1 for k in range(3) if space.raise_links[k, i] < space.size)
            assert links == expected

    def test_raise_then_lower_is_identity(self):
        space = enumerate_hierarchy(2, 3)
        for i in range(space.size):
            for k in range(2):
                j = space.raise_links[k, i]
                if j < space.size:
                    assert space.lower_links[k, j] == i

    def test_physical_index_first(self):
        space = enumerate_hierarchy(4, 2)
        assert space.indices[0].tier == 0

    def test_cap_rejected(self):
        with pytest.raises(ValueError, match="cap"):
            enumerate_hierarchy(10, 10, max_ados=1000)

    def test_rejects_no_modes(self):
        with pytest.raises(ValueError):
            enumerate_hierarchy(0, 3)


class TestRhs:
    def test_closed_system_is_von_neumann(self, small_params):
        ops, rho = _system(small_params)
        prop = HeomPropagator(ops, [], PropagatorConfig(dt_fs=0.25, depth=1))
        state = prop.initial_state(rho)
        deriv = hierarchy_rhs(state, 0.0, ops, [])
        from vibrocorr.units import RAD_FS_PER_CM1
        h = ops.h_sys * RAD_FS_PER_CM1
        expected = -1j * (h @ rho.elements - rho.elements @ h)
        assert np.allclose(deriv.rho, expected, atol=1e-15)

    def test_stationary_state_zero_derivative(self, small_params):
        # thermal state commutes with H_S, so the drive-off derivative vanishes
        ops, rho = _system(small_params)
        prop = HeomPropagator(ops, [], PropagatorConfig(dt_fs=0.25, depth=1))
        state = prop.initial_state(rho)
        deriv = hierarchy_rhs(state, 0.0, ops, [])
        assert np.max(np.abs(deriv.stack)) < 1e-15

    def test_physical_derivative_traceless(self, small_params, small_bath):
        ops, rho = _system(small_params)
        modes = expansion_coeffs(small_bath)
        tail = matsubara_tail(small_bath)
        prop = HeomPropagator(ops, modes, PropagatorConfig(dt_fs=0.25, depth=2),
                              drive=Drive(small_params.drive_amp, small_params.omega_eg),
                              terminator_cm1=tail)
        state = prop.initial_state(rho)
        # populate the hierarchy so couplings feed back
        prop.propagate(state, 25.0)
        deriv = hierarchy_rhs(state, state.time_fs, ops, modes,
                              drive=Drive(small_params.drive_amp, small_params.omega_eg),
                              terminator_cm1=tail)
        assert abs(np.trace(deriv.rho)) < 1e-12

    def test_equilibrated_state_nearly_stationary(self, small_params, small_bath):
        ops, rho = _system(small_params)
        modes = expansion_coeffs(small_bath)
        tail = matsubara_tail(small_bath)
        cfg = PropagatorConfig(dt_fs=0.25, depth=2)
        state = equilibrate(rho, ops, modes, cfg, duration_fs=1500.0,
                            terminator_cm1=tail)
        deriv = hierarchy_rhs(state, 0.0, ops, modes, terminator_cm1=tail)
        from vibrocorr.units import RAD_FS_PER_CM1
        scale = np.linalg.norm(ops.h_sys * RAD_FS_PER_CM1) * np.linalg.norm(rho.elements)
        assert np.linalg.norm(deriv.rho) < 1e-3 * scale


class TestPropagation:
    def test_trace_and_hermiticity_conserved(self, small_params, small_bath,
                                             small_config):
        ops, rho = _system(small_params)
        modes = expansion_coeffs(small_bath)
        prop = HeomPropagator(ops, modes, small_config,
                              drive=Drive(small_params.drive_amp, small_params.omega_eg),
                              terminator_cm1=matsubara_tail(small_bath))
        state = prop.initial_state(rho)
        traj = prop.propagate(state, 500.0)
        traces = np.einsum("tii->t", traj.states)
        assert np.max(np.abs(traces - 1.0)) < 1e-10
        for s in traj.states[:: len(traj.states) // 5 + 1]:
            assert np.max(np.abs(s - s.conj().T)) < 1e-12

    def test_segments_match_single_run(self, small_params, small_bath, small_config):
        ops, rho = _system(small_params)
        modes = expansion_coeffs(small_bath)
        drive = Drive(small_params.drive_amp, small_params.omega_eg)
        prop = HeomPropagator(ops, modes, small_config, drive=drive)
        one = prop.initial_state(rho)
        prop.propagate(one, 100.0)
        two = prop.initial_state(rho)
        prop.propagate(two, 40.0)
        prop.propagate(two, 100.0)
        assert np.array_equal(one.stack, two.stack)
        assert one.time_fs == two.time_fs

    def test_sample_grid(self, small_params, small_config):
        ops, rho = _system(small_params)
        prop = HeomPropagator(ops, [], small_config)
        state = prop.initial_state(rho)
        traj = prop.propagate(state, 10.0, record_stride=8)
        # dt = 0.25 fs, stride 8 -> every 2 fs, plus the initial sample
        assert np.allclose(traj.times_fs, np.arange(0.0, 10.1, 2.0))
        assert traj.states.shape[0] == traj.times_fs.size

    def test_rejects_backward_or_misaligned_windows(self, small_params, small_config):
        ops, rho = _system(small_params)
        prop = HeomPropagator(ops, [], small_config)
        state = prop.initial_state(rho, time_fs=50.0)
        with pytest.raises(ValueError, match="not ahead"):
            prop.propagate(state, 50.0)
        with pytest.raises(ValueError, match="integer number"):
            prop.propagate(state, 50.37)

    def test_instability_detected(self, small_params, small_bath):
        ops, rho = _system(small_params)
        modes = expansion_coeffs(small_bath)
        config = PropagatorConfig(dt_fs=40.0, depth=2, record_stride=1)
        prop = HeomPropagator(ops, modes, config,
                              drive=Drive(small_params.drive_amp, small_params.omega_eg))
        state = prop.initial_state(rho)
        with pytest.raises(PropagationError):
            prop.propagate(state, 4000.0)

    def test_step_convergence(self, small_params, small_bath):
        # halving dt changes the sampled observable by far less than 1e-4
        ops, rho = _system(small_params)
        modes = expansion_coeffs(small_bath)
        tail = matsubara_tail(small_bath)
        drive = Drive(small_params.drive_amp, small_params.omega_eg)
        results = []
        for dt, stride in ((0.25, 20), (0.125, 40)):
            cfg = PropagatorConfig(dt_fs=dt, depth=2, record_stride=stride)
            prop = HeomPropagator(ops, modes, cfg, drive=drive, terminator_cm1=tail)
            state = prop.initial_state(rho)
            traj = prop.propagate(state, 200.0)
            results.append(detection_series(ops.a_op, traj.states))
        rel = np.max(np.abs(results[0] - results[1])) / np.max(np.abs(results[1]))
        assert rel < 1e-4

    def test_module_level_propagate(self, small_params, small_config):
        ops, rho = _system(small_params)
        state = AdoHierarchy.from_density(rho, HeomPropagator(ops, [], small_config).space)
        traj = propagate(state, 20.0, small_config, ops, [])
        assert traj.times_fs[-1] == 20.0

    def test_depth_and_scaling_consistency(self, small_params, small_bath):
        # scaled and unscaled ADOs must give the same physical matrix
        ops, rho = _system(small_params)
        modes = expansion_coeffs(small_bath)
        tail = matsubara_tail(small_bath)
        drive = Drive(small_params.drive_amp, small_params.omega_eg)
        rhos = []
        for scaled in (True, False):
            cfg = PropagatorConfig(dt_fs=0.25, depth=2, use_scaled_ados=scaled)
            prop = HeomPropagator(ops, modes, cfg, drive=drive, terminator_cm1=tail)
            state = prop.initial_state(rho)
            prop.propagate(state, 100.0)
            rhos.append(state.rho.copy())
        assert np.allclose(rhos[0], rhos[1], atol=1e-10)


class TestCheckpoint:
    def test_round_trip(self, small_params, small_bath, small_config, tmp_path):
        ops, rho = _system(small_params)
        modes = expansion_coeffs(small_bath)
        prop = HeomPropagator(ops, modes, small_config,
                              drive=Drive(small_params.drive_amp, small_params.omega_eg))
        state = prop.initial_state(rho)
        prop.propagate(state, 25.0)
        path = tmp_path / "state.heom"
        save_checkpoint(state, path)
        loaded = load_checkpoint(path)
        assert np.array_equal(loaded.stack, state.stack)
        assert loaded.time_fs == state.time_fs
        assert loaded.space.position == state.space.position

    def test_resume_from_checkpoint(self, small_params, small_bath, small_config,
                                    tmp_path):
        ops, rho = _system(small_params)
        modes = expansion_coeffs(small_bath)
        drive = Drive(small_params.drive_amp, small_params.omega_eg)
        prop = HeomPropagator(ops, modes, small_config, drive=drive)
        state = prop.initial_state(rho)
        prop.propagate(state, 50.0)
        path = tmp_path / "mid.heom"
        save_checkpoint(state, path)
        prop.propagate(state, 100.0)
        resumed = load_checkpoint(path)
        prop.propagate(resumed, 100.0)
        assert np.array_equal(resumed.stack, state.stack)

    def test_rejects_foreign_file(self, tmp_path):
        path = tmp_path / "junk.heom"
        path.write_bytes(b"not a checkpoint at all, wrong magic")
        with pytest.raises(ValueError, match="checkpoint"):
            load_checkpoint(path)

    def test_rejects_truncated_payload(self, small_params, small_config, tmp_path):
        ops, rho = _system(small_params)
        prop = HeomPropagator(ops, [], small_config)
        state = prop.initial_state(rho)
        path = tmp_path / "trunc.heom"
        save_checkpoint(state, path)
        data = path.read_bytes()
        path.write_bytes(data[:-16])
        with pytest.raises(ValueError, match="payload"):
            load_checkpoint(path)


class TestConfigValidation:
    @pytest.mark.parametrize("kwargs", [
        {"dt_fs": 0.0},
        {"dt_fs": -1.0},
        {"depth": 0},
        {"record_stride": 0},
    ])
    def test_invalid_config_rejected(self, kwargs):
        with pytest.raises(ValueError):
            PropagatorConfig(**kwargs)
