"""Independent brute-force references for the propagator and regression engine.

These deliberately avoid the production code paths: the closed-system
two-time correlator evolves wavefunctions with Gauss-Magnus matrix
exponentials, and the hierarchy single-step reference exponentiates the full
dense generator with the drive frozen at midpoint. Both are slow, exact on
small instances, and used to bound the RK4 regression machinery.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .bath import BathParams, ExponentialMode, expansion_coeffs, matsubara_tail
from .correlations import CorrelationTrace, MonomerSimulation
from .heom import (
    AdoHierarchy,
    HeomPropagator,
    PropagatorConfig,
    hierarchy_generator,
    _drive_generator,
)
from .model import Drive, OperatorSet, VibronicParams, adiabatize, build_system
from .units import KB_CM1_PER_K, RAD_FS_PER_CM1

ORACLE_ADO_CAP = 60
ORACLE_DIM_CAP = 12


@dataclass
class OracleReport:
    """Outcome of one oracle check; passed iff max_rel_err <= tolerance."""

    name: str
    max_rel_err: float
    passed: bool
    details: str = ""

    def to_json(self) -> str:
        return json.dumps({
            "name": self.name,
            "max_rel_err": self.max_rel_err,
            "pass": self.passed,
            "details": self.details,
        })


def _resolve_op(ops: OperatorSet, op) -> np.ndarray:
    if isinstance(op, str):
        if op == "photon":
            return ops.a_op
        if op == "phonon":
            return ops.b_sys
        raise ValueError(f"unknown operator {op!r}")
    return np.asarray(op, dtype=complex)


_GL_OFFSET = np.sqrt(3.0) / 6.0


def _evolve_columns(psi, t0_fs, n_steps, dt_fs, h_rad, v_rad, omega_rad):
    """Fourth-order Magnus (two-point Gauss) exponential stepping.

    Each step exponentiates the effective Hermitian generator
    dt*(H1+H2)/2 - i*sqrt(3)*dt^2/12*[H2, H1] built from the Hamiltonian at
    the two Gauss nodes; for a time-independent Hamiltonian this reduces to
    the exact propagator.
    """
    if v_rad is None:
        evals, evecs = np.linalg.eigh(h_rad)
        u = (evecs * np.exp(-1j * evals * dt_fs)) @ evecs.conj().T
        for _ in range(n_steps):
            psi = u @ psi
        return psi
    comm_hv = h_rad @ v_rad - v_rad @ h_rad
    for i in range(n_steps):
        t_mid = t0_fs + (i + 0.5) * dt_fs
        c1 = np.cos(omega_rad * (t_mid - _GL_OFFSET * dt_fs))
        c2 = np.cos(omega_rad * (t_mid + _GL_OFFSET * dt_fs))
        m = dt_fs * (h_rad + 0.5 * (c1 + c2) * v_rad) \
            - 1j * (np.sqrt(3.0) / 12.0) * dt_fs**2 * (c1 - c2) * comm_hv
        evals, evecs = np.linalg.eigh(m)
        u = (evecs * np.exp(-1j * evals)) @ evecs.conj().T
        psi = u @ psi
    return psi


def unitary_two_time(
    params: VibronicParams,
    t_anchor_ps: float,
    tau_grid_ps,
    op_first,
    op_second,
    bath: BathParams | None = None,
    dt_fs: float = 0.02,
) -> CorrelationTrace:
    """Closed-system two-time correlator by direct dense propagation.

    Valid only without a bath (eta = 0). The thermal state is decomposed
    over its eigenvectors and each weighted wavefunction is evolved under
    the driven Hamiltonian; the operator insertion at the anchor produces
    the seeded bundle whose first-operator detection probability is the
    unnormalized correlator.
    """
    if bath is not None and bath.eta > 0:
        raise ValueError("the unitary brute-force oracle requires eta = 0")
    tau_grid_ps = np.asarray(tau_grid_ps, dtype=float)
    if tau_grid_ps[0] != 0.0:
        raise ValueError("tau grid must start at 0")
    ops = build_system(params)
    transform = adiabatize(ops.h_sys)
    kt = KB_CM1_PER_K * params.temperature
    shifted = transform.energies - transform.energies[0]
    weights = np.exp(-shifted / kt)
    weights /= weights.sum()

    h_rad = ops.h_sys * RAD_FS_PER_CM1
    drive = Drive(params.drive_amp, params.omega_eg)
    v_rad = drive.coupling_matrix(params.n_levels) * RAD_FS_PER_CM1 \
        if params.drive_amp else None
    omega_rad = params.omega_eg * RAD_FS_PER_CM1

    anchor_fs = t_anchor_ps * 1000.0
    n_anchor = int(round(anchor_fs / dt_fs))
    if abs(n_anchor * dt_fs - anchor_fs) > 1e-6:
        raise ValueError(f"anchor {t_anchor_ps} ps not commensurate with dt={dt_fs} fs")
    steps = np.diff(tau_grid_ps) * 1000.0
    stride = int(round(steps[0] / dt_fs))
    if not np.allclose(steps, steps[0], rtol=1e-9, atol=1e-9) or \
            abs(stride * dt_fs - steps[0]) > 1e-6:
        raise ValueError("tau grid must be uniform and commensurate with dt")

    c1 = _resolve_op(ops, op_first)
    c2 = _resolve_op(ops, op_second)

    psi = transform.u_ad.astype(complex)
    psi = _evolve_columns(psi, 0.0, n_anchor, dt_fs, h_rad, v_rad, omega_rad)
    phi = c2 @ psi

    values = np.empty(tau_grid_ps.size)
    meas = c1 @ phi
    values[0] = float(np.sum(weights * np.sum(np.abs(meas) ** 2, axis=0)))
    t_run = anchor_fs
    for j in range(1, tau_grid_ps.size):
        phi = _evolve_columns(phi, t_run, stride, dt_fs, h_rad, v_rad, omega_rad)
        t_run += stride * dt_fs
        meas = c1 @ phi
        values[j] = float(np.sum(weights * np.sum(np.abs(meas) ** 2, axis=0)))

    return CorrelationTrace(
        axis="tau", grid_ps=tau_grid_ps, values=values,
        op_first=op_first if isinstance(op_first, str) else None,
        op_second=op_second if isinstance(op_second, str) else None,
        t_anchor_ps=t_anchor_ps,
    )


def piecewise_exponential_step(
    ops: OperatorSet,
    modes: list[ExponentialMode],
    state: AdoHierarchy,
    dt_fs: float,
    drive: Drive | None = None,
    terminator_cm1: float = 0.0,
    use_scaled_ados: bool = True,
) -> AdoHierarchy:
    """One exact step of the full hierarchy with the drive frozen at midpoint.

    Dense exponentiation of the complete generator matrix; capped to tiny
    instances (<= 60 ADOs, dimension <= 12) and used to bound the RK4
    integrator error.
    """
    if state.space.size > ORACLE_ADO_CAP:
        raise ValueError(
            f"instance has {state.space.size} ADOs, above the oracle cap of {ORACLE_ADO_CAP}"
        )
    if state.dim > ORACLE_DIM_CAP:
        raise ValueError(
            f"dimension {state.dim} above the oracle cap of {ORACLE_DIM_CAP}"
        )
    gen = hierarchy_generator(ops, modes, state.space,
                              use_scaled_ados=use_scaled_ados,
                              terminator_cm1=terminator_cm1).toarray()
    if drive is not None:
        t_mid = state.time_fs + 0.5 * dt_fs
        phase = np.cos(drive.omega_cm1 * RAD_FS_PER_CM1 * t_mid)
        gen = gen + phase * _drive_generator(drive, ops.dim // 2,
                                             state.space.size).toarray()
    u = scipy.linalg.expm(gen * dt_fs)
    y = u @ state.stack.reshape(-1)
    return AdoHierarchy(state.space, y.reshape(state.stack.shape),
                        time_fs=state.time_fs + dt_fs)


def _small_instance():
    params = VibronicParams(omega_eg=100.0, omega_0=50.0, delta=0.8,
                            drive_amp=10.0, n_levels=3, temperature=298.0)
    bath = BathParams(eta=5.0, big_lambda=50.0, temperature=298.0, n_matsubara=1)
    config = PropagatorConfig(dt_fs=0.05, depth=2, record_stride=1)
    return params, bath, config


def _rk4_vs_exponential(n_steps: int, tolerance: float, name: str) -> OracleReport:
    params, bath, config = _small_instance()
    ops = build_system(params)
    transform = adiabatize(ops.h_sys)
    from .model import thermal_state
    rho0 = thermal_state(params, transform)
    modes = expansion_coeffs(bath)
    tail = matsubara_tail(bath)
    drive = Drive(params.drive_amp, params.omega_eg)

    prop = HeomPropagator(ops, modes, config, drive=drive, terminator_cm1=tail)
    state_rk4 = prop.initial_state(rho0)
    state_exp = state_rk4.copy()
    prop.propagate(state_rk4, n_steps * config.dt_fs, record_stride=n_steps)
    for _ in range(n_steps):
        state_exp = piecewise_exponential_step(ops, modes, state_exp, config.dt_fs,
                                               drive=drive, terminator_cm1=tail)
    err = np.linalg.norm(state_rk4.stack - state_exp.stack) / \
        np.linalg.norm(state_exp.stack)
    return OracleReport(
        name=name, max_rel_err=float(err), passed=bool(err <= tolerance),
        details=f"{n_steps} step(s) of dt={config.dt_fs} fs on a "
                f"{state_exp.space.size}-ADO, dim-{state_exp.dim} instance; "
                f"tolerance {tolerance:g}",
    )


def _regression_vs_unitary(tolerance: float = 1e-6) -> list[OracleReport]:
    # engine dt refined below the default so RK4 truncation stays well under
    # the machinery-equivalence tolerance
    params = VibronicParams()
    config = PropagatorConfig(dt_fs=0.0125, depth=1, record_stride=80)
    anchor_ps, tau_max_ps, tau_step_ps = 0.3, 0.3, 0.005
    tau_grid = np.arange(0.0, tau_max_ps + 1e-12, tau_step_ps)

    sim = MonomerSimulation(params, bath=None, config=config, t_step_ps=0.01,
                            equilibration_ps=0.1)
    reports = []
    for seed_op in ("photon", "phonon"):
        oracle_runs = {
            meas: unitary_two_time(params, anchor_ps, tau_grid, meas, seed_op)
            for meas in ("photon", "phonon")
        }
        for meas in ("photon", "phonon"):
            engine = sim.g2(meas, seed_op, t_anchor=anchor_ps,
                            tau_max_ps=tau_max_ps, tau_step_ps=tau_step_ps,
                            normalized=False)
            reference = oracle_runs[meas]
            scale = np.max(np.abs(reference.values))
            err = np.max(np.abs(engine.values - reference.values)) / scale
            reports.append(OracleReport(
                name=f"regression_vs_unitary_{meas}_{seed_op}",
                max_rel_err=float(err), passed=bool(err <= tolerance),
                details=f"eta=0, anchor {anchor_ps} ps, tau window {tau_max_ps} ps; "
                        f"tolerance {tolerance:g}",
            ))
    return reports


def _trace_preservation(tolerance: float = 1e-8) -> OracleReport:
    params = VibronicParams()
    config = PropagatorConfig(dt_fs=0.05, depth=1, record_stride=20)
    sim = MonomerSimulation(params, bath=None, config=config, t_step_ps=0.01,
                            equilibration_ps=0.1)
    from .correlations import seed as seed_state
    anchor = sim.state_at(0.2)
    seeded = seed_state(anchor, sim.operator("phonon"))
    traj = sim._prop.propagate(seeded, anchor.time_fs + 1000.0, record_stride=100)
    traces = np.einsum("tii->t", traj.states).real
    drift_per_ps = np.max(np.abs(traces - traces[0])) / abs(traces[0])
    return OracleReport(
        name="regression_trace_invariance",
        max_rel_err=float(drift_per_ps), passed=bool(drift_per_ps <= tolerance),
        details=f"Tr[e^(L tau)(c rho c^dag)] drift over 1 ps; tolerance {tolerance:g}",
    )


def run_oracle_suite(report_path=None) -> list[OracleReport]:
    """Run every oracle check; optionally write a JSON-lines report file."""
    reports = [
        _rk4_vs_exponential(1, 1e-10, "rk4_single_step_vs_exponential"),
        _rk4_vs_exponential(1000, 1e-6, "rk4_drift_1000_steps"),
        *_regression_vs_unitary(),
        _trace_preservation(),
    ]
    if report_path is not None:
        with open(report_path, "w") as fh:
            for report in reports:
                fh.write(report.to_json() + "\n")
    return reports
