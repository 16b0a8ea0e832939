"""Detection probabilities and two-time correlation functions.

Second-order correlations follow the regression protocol: evolve the driven
hierarchy to an anchor time t, sandwich every auxiliary matrix with the
second detection operator, then re-propagate the seeded hierarchy over the
delay tau (the drive phase keeps running on absolute time) and read the
first operator's detection probability along the way:

    G2(t, tau) = Tr[ c1^dag c1  e^{L tau} ( c2 rho(t) c2^dag ) ]

Normalized variants divide by the product of the two single-detection
reference values from :func:`normalization_reference`.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .bath import BathParams, expansion_coeffs, matsubara_tail
from .heom import AdoHierarchy, HeomPropagator, PropagatorConfig, Trajectory
from .model import Drive, VibronicParams, adiabatize, build_system, thermal_state
from .units import period_fs

OPERATOR_NAMES = ("photon", "phonon")
DEGENERATE_DENOMINATOR = 1e-14


class SteadyStateNotFound(RuntimeError):
    """The run ended before the steady-state detector fired; extend t_end."""


@dataclass
class CorrelationTrace:
    """A sampled correlation or detection trace with its metadata.

    axis is "t" for detection-probability traces and "tau" for two-time
    delays; grid_ps is strictly increasing. op_first is the measured
    operator, op_second the seeded one (None for single-detection traces).
    reference_value records the normalization denominator actually applied.
    """

    axis: str
    grid_ps: np.ndarray
    values: np.ndarray
    op_first: str | None = None
    op_second: str | None = None
    normalized: bool = False
    reference_value: float | None = None
    t_anchor_ps: float | None = None

    def __post_init__(self):
        self.grid_ps = np.asarray(self.grid_ps, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if self.grid_ps.shape != self.values.shape:
            raise ValueError("grid and values must have matching shapes")
        if self.grid_ps.size > 1 and not np.all(np.diff(self.grid_ps) > 0):
            raise ValueError("grid must be strictly increasing")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("trace values must be finite")
        if self.normalized and not (self.reference_value and self.reference_value > 0):
            raise ValueError("normalized traces must carry a positive reference_value")


def detection_probability(op: np.ndarray, rho) -> float:
    """Tr(c rho c^dag) for a detection operator c; non-negative."""
    elements = getattr(rho, "elements", rho)
    val = np.einsum("ij,jk,ik->", op, elements, op.conj())
    return float(val.real)


def detection_series(op: np.ndarray, states: np.ndarray) -> np.ndarray:
    """Tr(c rho c^dag) over a stack of sampled density matrices."""
    return np.einsum("ij,tjk,ik->t", op, states, op.conj()).real


def zero_delay_cross_series(op1: np.ndarray, op2: np.ndarray,
                            states: np.ndarray) -> np.ndarray:
    """Unnormalized G2(t, tau=0) = Tr[op1^dag op1 op2 rho op2^dag] over samples."""
    measure = op1.conj().T @ op1
    seeded = np.matmul(np.matmul(op2, states), op2.conj().T)
    return np.einsum("ij,tji->t", measure, seeded).real


def seed(state: AdoHierarchy, op: np.ndarray) -> AdoHierarchy:
    """Sandwich every ADO with the detection operator: rho_n -> c rho_n c^dag.

    The time stamp is preserved; the result is the tau = 0 initial condition
    for the regression propagation.
    """
    stack = np.matmul(np.matmul(op, state.stack), op.conj().T)
    return AdoHierarchy(state.space, stack, state.time_fs)


def steady_state_time(times_ps, values, window_ps: float = 1.0,
                      level: float = 0.05) -> float | None:
    """Earliest window-end time where peak-to-peak < level * window mean.

    Returns None when no sliding window of the given width qualifies.
    """
    times_ps = np.asarray(times_ps, dtype=float)
    values = np.asarray(values, dtype=float)
    start = 0
    for end in range(1, len(times_ps)):
        while times_ps[end] - times_ps[start] > window_ps + 1e-12:
            start += 1
        if times_ps[end] - times_ps[start] < window_ps - 1e-9:
            continue
        window = values[start:end + 1]
        mean = window.mean()
        if mean > 0 and np.ptp(window) < level * mean:
            return float(times_ps[end])
    return None


def normalization_reference(
    trace: CorrelationTrace,
    eta: float,
    lambda_reorg: float,
    omega0_cm1: float = 500.0,
    search_start_ps: float = 3.5,
    window_ps: float = 1.0,
    level: float = 0.05,
):
    """Reference time and value used as the normalization denominator.

    For a dissipative run (eta > 0) the reference is the steady-state value:
    the mean over one vibrational period following steady-state detection.
    Without dissipation (eta = 0) the reference is the half-amplitude level
    (max+min)/2 of the persistent oscillation, timed at the first crossing
    after search_start_ps, which is unique for each system reorganization
    energy. A constant trace short-circuits to its first sample.
    """
    t = trace.grid_ps
    v = trace.values
    scale = np.max(np.abs(v)) if v.size else 0.0
    if v.size and np.ptp(v) <= 1e-10 * max(scale, 1e-300):
        return float(t[0]), float(v[0])
    if eta > 0:
        t_ss = steady_state_time(t, v, window_ps=window_ps, level=level)
        if t_ss is None:
            raise SteadyStateNotFound(
                f"no steady state detected within {t[-1]:.2f} ps; extend t_end"
            )
        period_ps = period_fs(omega0_cm1) / 1000.0
        sel = (t >= t_ss) & (t <= t_ss + period_ps)
        return float(t_ss), float(v[sel].mean())
    mid = 0.5 * (v.max() + v.min())
    for j in range(len(t) - 1):
        if t[j] < search_start_ps:
            continue
        if (v[j] - mid) * (v[j + 1] - mid) <= 0:
            frac = 0.0
            if v[j + 1] != v[j]:
                frac = (mid - v[j]) / (v[j + 1] - v[j])
            return float(t[j] + frac * (t[j + 1] - t[j])), float(mid)
    raise SteadyStateNotFound(
        f"no half-amplitude crossing found after {search_start_ps} ps; extend t_end"
    )


def classify_bunching(trace: CorrelationTrace, window_ps: float | None = None,
                      tolerance: float = 1e-6) -> str:
    """Label a normalized tau-trace as bunched, antibunched or flat.

    Antibunched when g(0) sits below g(tau) for every tau in the comparison
    window (by more than the tolerance band), bunched in the mirrored case,
    flat otherwise. The window defaults to the whole trace; pass one
    vibrational period for the mode-resolved classification.
    """
    if trace.grid_ps[0] != 0.0:
        raise ValueError("classification needs the tau = 0 sample")
    g0 = trace.values[0]
    if window_ps is None:
        sel = slice(1, None)
    else:
        idx = np.nonzero(trace.grid_ps <= window_ps + 1e-12)[0]
        sel = slice(1, int(idx[-1]) + 1)
    rest = trace.values[sel]
    if rest.size == 0:
        return "flat"
    if np.all(rest - g0 > tolerance):
        return "antibunched"
    if np.all(g0 - rest > tolerance):
        return "bunched"
    return "flat"


class MonomerSimulation:
    """Driven-monomer pipeline: equilibration, timeline, g1 and g2 traces.

    Owns one hierarchy advancing monotonically along the drive-on timeline
    (sampled every t_step_ps) plus the prebuilt propagators. A bath with
    eta = 0 contributes nothing to the dynamics, so the hierarchy collapses
    to the physical matrix alone and runs correspondingly faster.
    """

    def __init__(
        self,
        params: VibronicParams,
        bath: BathParams | None = None,
        config: PropagatorConfig | None = None,
        t_step_ps: float = 0.01,
        equilibration_ps: float = 6.0,
        phonon_basis: str = "diabatic",
    ):
        self.params = params
        self.bath = bath
        self.config = config or PropagatorConfig()
        self.t_step_ps = float(t_step_ps)
        self.equilibration_ps = float(equilibration_ps)
        if phonon_basis not in ("diabatic", "adiabatic"):
            raise ValueError(f"unknown phonon_basis {phonon_basis!r}")
        self.phonon_basis = phonon_basis

        self.ops = build_system(params)
        self.transform = adiabatize(self.ops.h_sys)
        self.rho0 = thermal_state(params, self.transform)
        self.drive = Drive(params.drive_amp, params.omega_eg) if params.drive_amp else None

        if bath is not None and bath.eta > 0:
            self.modes = expansion_coeffs(bath)
            self.terminator_cm1 = matsubara_tail(bath)
        else:
            self.modes = []
            self.terminator_cm1 = 0.0

        self._stride = int(round(self.t_step_ps * 1000.0 / self.config.dt_fs))
        if abs(self._stride * self.config.dt_fs - self.t_step_ps * 1000.0) > 1e-9:
            raise ValueError(
                f"t_step_ps={t_step_ps} is not a multiple of dt={self.config.dt_fs} fs"
            )
        self._prop = HeomPropagator(self.ops, self.modes, self.config,
                                    drive=self.drive,
                                    terminator_cm1=self.terminator_cm1)
        self._eq_state = None
        self._eq_trajectory = None
        self._timeline = None
        self._times_ps: list[float] = []
        self._states: list[np.ndarray] = []
        self._anchors: dict[float, AdoHierarchy] = {}
        self._tau_runs: dict[tuple, Trajectory] = {}

    @property
    def eta(self) -> float:
        return self.bath.eta if self.bath is not None else 0.0

    def operator(self, name: str) -> np.ndarray:
        """Detection operator matrix for 'photon' or 'phonon'."""
        if name == "photon":
            return self.ops.a_op
        if name == "phonon":
            if self.phonon_basis == "adiabatic":
                u = self.transform.u_ad
                return u @ self.ops.b_sys @ u.conj().T
            return self.ops.b_sys
        raise ValueError(f"unknown operator {name!r}, expected one of {OPERATOR_NAMES}")

    def equilibrated(self) -> AdoHierarchy:
        """Bath-correlated t = 0 hierarchy (drive off from the thermal state)."""
        if self._eq_state is None:
            prop = HeomPropagator(self.ops, self.modes, self.config, drive=None,
                                  terminator_cm1=self.terminator_cm1)
            state = prop.initial_state(self.rho0, time_fs=-self.equilibration_ps * 1000.0)
            if self.equilibration_ps > 0:
                self._eq_trajectory = prop.propagate(state, 0.0, record_stride=self._stride)
            else:
                self._eq_trajectory = Trajectory(
                    times_fs=np.array([0.0]), states=state.stack[:1].copy())
            self._eq_state = state
        return self._eq_state.copy()

    def equilibration_trajectory(self) -> Trajectory:
        self.equilibrated()
        return self._eq_trajectory

    def advance_to(self, t_ps: float):
        """Advance the drive-on timeline to t_ps, accumulating samples."""
        if self._timeline is None:
            self._timeline = self.equilibrated()
            self._times_ps = [0.0]
            self._states = [self._timeline.rho.copy()]
        n_target = int(round(t_ps / self.t_step_ps))
        if abs(n_target * self.t_step_ps - t_ps) > 1e-9:
            raise ValueError(f"t={t_ps} ps is not on the {self.t_step_ps} ps sample grid")
        while len(self._times_ps) - 1 < n_target:
            t_next = len(self._times_ps) * self.t_step_ps
            self._prop.propagate(self._timeline, t_next * 1000.0,
                                 record_stride=self._stride)
            self._times_ps.append(t_next)
            self._states.append(self._timeline.rho.copy())

    def timeline(self, t_end_ps: float) -> Trajectory:
        """Sampled physical matrices over [0, t_end_ps] of the driven run."""
        self.advance_to(t_end_ps)
        n = int(round(t_end_ps / self.t_step_ps)) + 1
        return Trajectory(
            times_fs=np.array(self._times_ps[:n]) * 1000.0,
            states=np.array(self._states[:n]),
        )

    def state_at(self, t_ps: float) -> AdoHierarchy:
        """Copy of the full hierarchy at an on-grid time of the timeline."""
        if t_ps in self._anchors:
            return self._anchors[t_ps].copy()
        self.advance_to(t_ps)
        current_ps = self._timeline.time_fs / 1000.0
        if abs(current_ps - t_ps) < 1e-9:
            snap = self._timeline.copy()
        else:
            # timeline has moved past; rebuild from equilibrium
            fresh = self.equilibrated()
            if t_ps > 0:
                self._prop.propagate(fresh, t_ps * 1000.0, record_stride=self._stride)
            snap = fresh
        self._anchors[t_ps] = snap
        return snap.copy()

    def detection_trace(self, op_name: str, t_end_ps: float) -> CorrelationTrace:
        traj = self.timeline(t_end_ps)
        values = detection_series(self.operator(op_name), traj.states)
        return CorrelationTrace(axis="t", grid_ps=traj.times_ps, values=values,
                                op_first=op_name, op_second=None)

    def g1(self, op_name: str, t_end_ps: float, normalized: bool = False,
           search_start_ps: float = 3.5) -> CorrelationTrace:
        """Detection probability D_c(t) = Tr(c rho(t) c^dag), optionally normalized."""
        trace = self.detection_trace(op_name, t_end_ps)
        if not normalized:
            return trace
        _, ref = normalization_reference(
            trace, self.eta, self.params.lambda_reorg,
            omega0_cm1=self.params.omega_0, search_start_ps=search_start_ps)
        if ref < DEGENERATE_DENOMINATOR:
            warnings.warn("degenerate normalization reference; returning "
                          "unnormalized trace", stacklevel=2)
            return trace
        return CorrelationTrace(axis="t", grid_ps=trace.grid_ps,
                                values=trace.values / ref, op_first=op_name,
                                normalized=True, reference_value=ref)

    def resolve_anchor(self, t_anchor, horizon_ps: float = 10.0,
                       search_start_ps: float = 3.5) -> float:
        """Resolve 'auto' anchors: steady state for eta > 0, preset otherwise."""
        if t_anchor != "auto":
            return float(t_anchor)
        if self.eta == 0:
            return search_start_ps
        self.advance_to(min(1.0 + self.t_step_ps, horizon_ps))
        while True:
            times = np.array(self._times_ps)
            values = detection_series(self.operator("photon"), np.array(self._states))
            t_ss = steady_state_time(times, values)
            if t_ss is not None:
                return float(t_ss)
            reached = times[-1]
            if reached >= horizon_ps - 1e-9:
                raise SteadyStateNotFound(
                    f"no steady state detected within {horizon_ps} ps; extend t_end"
                )
            self.advance_to(min(reached + 0.25, horizon_ps))

    def g2(
        self,
        op_first: str,
        op_second: str,
        t_anchor="auto",
        tau_max_ps: float = 4.0,
        tau_step_ps: float = 0.005,
        normalized: bool = True,
        horizon_ps: float = 10.0,
        search_start_ps: float = 3.5,
    ) -> CorrelationTrace:
        """Regression-protocol G2/g2 over a tau grid starting at zero.

        op_second is the detection AT the anchor (the earlier event): it
        sandwiches every auxiliary matrix. op_first is measured a delay tau
        later on the re-propagated hierarchy, with the drive phase continuing
        from the anchor time. In the usual subscript notation g2_xy, where x
        is detected first, this is ``g2(op_first=y, op_second=x)``.

        Normalization divides by the product of the two operators' reference
        values; a degenerate denominator falls back to the raw trace.
        """
        anchor_ps = self.resolve_anchor(t_anchor, horizon_ps=horizon_ps,
                                        search_start_ps=search_start_ps)
        tau_stride = int(round(tau_step_ps * 1000.0 / self.config.dt_fs))
        if abs(tau_stride * self.config.dt_fs - tau_step_ps * 1000.0) > 1e-9:
            raise ValueError(
                f"tau_step_ps={tau_step_ps} is not a multiple of dt={self.config.dt_fs} fs"
            )
        # one seeded tau propagation serves every measured operator
        key = (op_second, round(anchor_ps, 9), round(tau_max_ps, 9), tau_stride)
        traj = self._tau_runs.get(key)
        if traj is None:
            anchor_state = self.state_at(anchor_ps)
            seeded = seed(anchor_state, self.operator(op_second))
            traj = self._prop.propagate(seeded, (anchor_ps + tau_max_ps) * 1000.0,
                                        record_stride=tau_stride)
            self._tau_runs[key] = traj
        numer = detection_series(self.operator(op_first), traj.states)
        tau_ps = traj.times_ps - anchor_ps
        tau_ps[0] = 0.0
        if not normalized:
            return CorrelationTrace(axis="tau", grid_ps=tau_ps, values=numer,
                                    op_first=op_first, op_second=op_second,
                                    t_anchor_ps=anchor_ps)
        denom = 1.0
        norm_end_ps = self._norm_horizon(anchor_ps, horizon_ps, search_start_ps)
        for name in (op_first, op_second):
            trace = self.detection_trace(name, norm_end_ps)
            _, ref = normalization_reference(
                trace, self.eta, self.params.lambda_reorg,
                omega0_cm1=self.params.omega_0, search_start_ps=search_start_ps)
            denom *= ref
        if denom < DEGENERATE_DENOMINATOR:
            warnings.warn(
                f"degenerate g2 denominator {denom:.3e}; returning unnormalized trace",
                stacklevel=2)
            return CorrelationTrace(axis="tau", grid_ps=tau_ps, values=numer,
                                    op_first=op_first, op_second=op_second,
                                    normalized=False, reference_value=denom,
                                    t_anchor_ps=anchor_ps)
        return CorrelationTrace(axis="tau", grid_ps=tau_ps, values=numer / denom,
                                op_first=op_first, op_second=op_second,
                                normalized=True, reference_value=denom,
                                t_anchor_ps=anchor_ps)

    def _norm_horizon(self, anchor_ps, horizon_ps, search_start_ps) -> float:
        period_ps = period_fs(self.params.omega_0) / 1000.0
        if self.eta == 0:
            need = search_start_ps + 2.5
        else:
            current = self._times_ps[-1] if self._times_ps else 0.0
            t_ss = None
            if current >= 1.0:
                t_ss = steady_state_time(
                    np.array(self._times_ps),
                    detection_series(self.operator("photon"), np.array(self._states)))
            need = (t_ss + period_ps) if t_ss is not None else horizon_ps
        need = max(need, anchor_ps)
        return round(need / self.t_step_ps) * self.t_step_ps


def g1(op_name, t_end_ps, params, bath=None, config=None, normalized=False,
       equilibration_ps=6.0, t_step_ps=0.01) -> CorrelationTrace:
    """One-shot detection-probability trace; see :meth:`MonomerSimulation.g1`."""
    sim = MonomerSimulation(params, bath, config, t_step_ps=t_step_ps,
                            equilibration_ps=equilibration_ps)
    return sim.g1(op_name, t_end_ps, normalized=normalized)


def g2(op_first, op_second, t_anchor, tau_grid_ps, params, bath=None, config=None,
       normalized=True, equilibration_ps=6.0, t_step_ps=0.01,
       horizon_ps=10.0) -> CorrelationTrace:
    """One-shot two-time correlation over an explicit tau grid.

    The grid must start at zero and be uniform; it is realized by sampling
    the regression propagation at the matching stride.
    """
    tau_grid_ps = np.asarray(tau_grid_ps, dtype=float)
    if tau_grid_ps[0] != 0.0:
        raise ValueError("tau grid must start at 0")
    steps = np.diff(tau_grid_ps)
    if tau_grid_ps.size < 2 or not np.allclose(steps, steps[0], rtol=1e-9, atol=1e-12):
        raise ValueError("tau grid must be uniform with at least two points")
    sim = MonomerSimulation(params, bath, config, t_step_ps=t_step_ps,
                            equilibration_ps=equilibration_ps)
    return sim.g2(op_first, op_second, t_anchor=t_anchor,
                  tau_max_ps=float(tau_grid_ps[-1]), tau_step_ps=float(steps[0]),
                  normalized=normalized, horizon_ps=horizon_ps)
