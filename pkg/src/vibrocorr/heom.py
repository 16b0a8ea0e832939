"""Hierarchical propagation of the driven monomer plus its auxiliary matrices.

The physical density matrix rides at the root of a tier-structured family of
auxiliary density operators (ADOs), one occupation number per exponential
bath mode. The full family evolves under a single sparse generator

    d rho_n/dt = -i[H(t), rho_n] - sum_k n_k nu_k rho_n
                 - i sum_k [Q, rho_{n+e_k}]
                 - i sum_k n_k (c_k Q rho_{n-e_k} - c_k* rho_{n-e_k} Q)
                 - Xi [Q, [Q, rho_n]]

with the double-commutator terminator absorbing the truncated Matsubara
tail Xi. Shi-style scaled ADOs (default) replace the raise/lower factors by
sqrt((n_k+1)|c_k|) and sqrt(n_k/|c_k|) c_k for better conditioning; the
physical matrix is unaffected. All cm^-1 inputs are converted to angular
rates once, when the generator is assembled; time is in fs throughout.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from math import comb

import numpy as np
import scipy.sparse as sp

from .bath import ExponentialMode
from .model import DensityMatrix, Drive, OperatorSet
from .units import RAD_FS_PER_CM1

ADO_NORM_LIMIT = 1.0e6

_CHECKPOINT_MAGIC = b"VCHEOM01"
_CHECKPOINT_HEADER = "<8sIIId"  # magic, n_modes, depth, dim, time_fs


class PropagationError(RuntimeError):
    """Numerical instability (NaN or runaway ADO norm) during propagation."""


@dataclass(frozen=True)
class HierarchyIndex:
    """Occupation counts, one per exponential bath mode."""

    counts: tuple[int, ...]

    @property
    def tier(self) -> int:
        return sum(self.counts)


@dataclass(frozen=True)
class HierarchySpace:
    """Enumerated hierarchy indices with precomputed raise/lower links.

    raise_links[k][i] (lower_links[k][i]) is the position of the neighbour of
    index i with one more (fewer) quantum in mode k, or ``size`` when that
    neighbour does not exist; the sentinel makes zero-padded gathers safe.
    """

    indices: tuple[HierarchyIndex, ...]
    depth: int
    n_modes: int
    raise_links: np.ndarray
    lower_links: np.ndarray
    position: dict = field(repr=False)

    @property
    def size(self) -> int:
        return len(self.indices)


def enumerate_hierarchy(n_modes: int, depth: int, max_ados: int = 100_000) -> HierarchySpace:
    """Enumerate all occupation vectors with tier <= depth, plus their links.

    Indices come out tier by tier, lexicographically inside each tier, so the
    physical (all-zero) index is first and the ordering is deterministic.
    """
    if n_modes < 1:
        raise ValueError(f"n_modes must be >= 1, got {n_modes}")
    if depth < 0:
        raise ValueError(f"depth must be >= 0, got {depth}")
    total = comb(n_modes + depth, depth)
    if total > max_ados:
        raise ValueError(
            f"hierarchy would hold {total} ADOs, above the cap of {max_ados}"
        )
    tiers: list[list[tuple[int, ...]]] = [[(0,) * n_modes]]
    for _ in range(depth):
        nxt = set()
        for counts in tiers[-1]:
            for k in range(n_modes):
                up = list(counts)
                up[k] += 1
                nxt.add(tuple(up))
        tiers.append(sorted(nxt))
    flat = [c for tier in tiers for c in tier]
    return _space_from_counts(flat, depth, n_modes)


def _space_from_counts(flat, depth, n_modes) -> HierarchySpace:
    position = {c: i for i, c in enumerate(flat)}
    size = len(flat)
    raise_links = np.full((max(n_modes, 1), size), size, dtype=np.intp)
    lower_links = np.full((max(n_modes, 1), size), size, dtype=np.intp)
    for i, counts in enumerate(flat):
        for k in range(n_modes):
            up = list(counts)
            up[k] += 1
            j = position.get(tuple(up))
            if j is not None:
                raise_links[k, i] = j
            if counts[k] > 0:
                dn = list(counts)
                dn[k] -= 1
                lower_links[k, i] = position[tuple(dn)]
    return HierarchySpace(
        indices=tuple(HierarchyIndex(c) for c in flat),
        depth=depth,
        n_modes=n_modes,
        raise_links=raise_links,
        lower_links=lower_links,
        position=position,
    )


def _space_for(n_modes: int, depth: int, max_ados: int) -> HierarchySpace:
    # A bathless run keeps only the physical matrix.
    if n_modes == 0:
        return _space_from_counts([()], 0, 0)
    return enumerate_hierarchy(n_modes, depth, max_ados)


@dataclass(frozen=True)
class PropagatorConfig:
    """Fixed-step RK4 settings: step dt (fs), hierarchy depth L, sampling
    interval in steps, and whether to use scaled ADOs."""

    dt_fs: float = 0.05
    depth: int = 4
    record_stride: int = 20
    use_scaled_ados: bool = True
    max_ados: int = 100_000

    def __post_init__(self):
        if self.dt_fs <= 0:
            raise ValueError(f"dt_fs must be positive, got {self.dt_fs}")
        if self.depth < 1:
            raise ValueError(f"depth must be >= 1, got {self.depth}")
        if self.record_stride < 1:
            raise ValueError(f"record_stride must be >= 1, got {self.record_stride}")


class AdoHierarchy:
    """Full hierarchy state: a (size, dim, dim) stack of complex matrices.

    stack[0] is the physical density matrix; the remaining entries follow the
    enumeration order of ``space``. Propagation mutates the stack in place,
    so a hierarchy is resumable and must be copied before branching.
    """

    def __init__(self, space: HierarchySpace, stack: np.ndarray, time_fs: float = 0.0):
        if stack.shape[0] != space.size or stack.shape[1] != stack.shape[2]:
            raise ValueError(f"stack shape {stack.shape} does not match space")
        self.space = space
        self.stack = np.ascontiguousarray(stack, dtype=complex)
        self.time_fs = float(time_fs)

    @classmethod
    def from_density(cls, rho, space: HierarchySpace, time_fs: float = 0.0) -> "AdoHierarchy":
        elements = rho.elements if isinstance(rho, DensityMatrix) else np.asarray(rho)
        dim = elements.shape[0]
        stack = np.zeros((space.size, dim, dim), dtype=complex)
        stack[0] = elements
        return cls(space, stack, time_fs)

    @property
    def dim(self) -> int:
        return self.stack.shape[1]

    @property
    def depth(self) -> int:
        return self.space.depth

    @property
    def rho(self) -> np.ndarray:
        return self.stack[0]

    def ado(self, index: HierarchyIndex) -> np.ndarray:
        return self.stack[self.space.position[index.counts]]

    def density_matrix(self) -> DensityMatrix:
        return DensityMatrix(elements=self.stack[0].copy(), basis_tag="diabatic")

    def copy(self) -> "AdoHierarchy":
        return AdoHierarchy(self.space, self.stack.copy(), self.time_fs)


@dataclass
class Trajectory:
    """Physical-matrix samples from one propagation segment."""

    times_fs: np.ndarray
    states: np.ndarray  # (n_samples, dim, dim)

    @property
    def times_ps(self) -> np.ndarray:
        return self.times_fs / 1000.0


def _spre(a: np.ndarray) -> sp.csr_matrix:
    dim = a.shape[0]
    return sp.kron(sp.csr_matrix(a), sp.identity(dim, dtype=complex, format="csr"),
                   format="csr")


def _spost(a: np.ndarray) -> sp.csr_matrix:
    # row-major vec convention: vec(rho A) = kron(I, A.T) vec(rho)
    dim = a.shape[0]
    return sp.kron(sp.identity(dim, dtype=complex, format="csr"), sp.csr_matrix(a.T),
                   format="csr")


def _commutator_super(a: np.ndarray) -> sp.csr_matrix:
    return _spre(a) - _spost(a)


def hierarchy_generator(
    ops: OperatorSet,
    modes: list[ExponentialMode],
    space: HierarchySpace,
    use_scaled_ados: bool = True,
    terminator_cm1: float = 0.0,
):
    """Assemble the static generator as one CSR matrix over the stacked state.

    Returns the generator in 1/fs units; the drive block, if any, is built
    separately by the propagator since it carries the time-dependent cosine.
    """
    if len(modes) != space.n_modes:
        raise ValueError(
            f"{len(modes)} modes supplied for a {space.n_modes}-mode hierarchy"
        )
    dim = ops.dim
    h_rad = ops.h_sys * RAD_FS_PER_CM1
    q = ops.q_op
    rates = np.array([m.rate for m in modes]) * RAD_FS_PER_CM1
    coeffs = np.array([m.coeff for m in modes]) * RAD_FS_PER_CM1**2

    comm_h = _commutator_super(h_rad)
    comm_q = _commutator_super(q)
    pre_q = _spre(q)
    post_q = _spost(q)
    ident = sp.identity(dim * dim, dtype=complex, format="csr")

    local = -1j * comm_h
    if terminator_cm1 != 0.0:
        local = local - (terminator_cm1 * RAD_FS_PER_CM1) * (comm_q @ comm_q)

    size = space.size
    blocks = [[None] * size for _ in range(size)]
    for i, idx in enumerate(space.indices):
        counts = idx.counts
        decay = float(np.dot(counts, rates)) if counts else 0.0
        blocks[i][i] = local - decay * ident
        for k in range(space.n_modes):
            j_up = space.raise_links[k, i]
            if j_up < size:
                scale = np.sqrt((counts[k] + 1) * abs(coeffs[k])) if use_scaled_ados else 1.0
                if scale != 0.0:
                    blocks[i][j_up] = -1j * scale * comm_q
            j_dn = space.lower_links[k, i]
            if j_dn < size:
                scale = np.sqrt(counts[k] / abs(coeffs[k])) if use_scaled_ados and abs(coeffs[k]) > 0 else counts[k]
                left = scale * coeffs[k]
                right = scale * np.conj(coeffs[k])
                if left != 0.0 or right != 0.0:
                    blocks[i][j_dn] = -1j * (left * pre_q - right * post_q)
    return sp.bmat(blocks, format="csr")


def _drive_generator(drive: Drive, n_levels: int, size: int) -> sp.csr_matrix:
    v_rad = drive.coupling_matrix(n_levels) * RAD_FS_PER_CM1
    return sp.kron(sp.identity(size, dtype=complex, format="csr"),
                   -1j * _commutator_super(v_rad), format="csr")


class HeomPropagator:
    """Owns the assembled generator and advances one hierarchy exclusively."""

    def __init__(
        self,
        ops: OperatorSet,
        modes: list[ExponentialMode],
        config: PropagatorConfig,
        drive: Drive | None = None,
        terminator_cm1: float = 0.0,
    ):
        self.ops = ops
        self.modes = list(modes)
        self.config = config
        self.drive = drive
        self.space = _space_for(len(self.modes), config.depth, config.max_ados)
        self.generator = hierarchy_generator(
            ops, self.modes, self.space,
            use_scaled_ados=config.use_scaled_ados,
            terminator_cm1=terminator_cm1,
        )
        if drive is not None:
            self.drive_generator = _drive_generator(drive, ops.dim // 2, self.space.size)
            self.omega_rad = drive.omega_cm1 * RAD_FS_PER_CM1
        else:
            self.drive_generator = None
            self.omega_rad = 0.0

    def initial_state(self, rho, time_fs: float = 0.0) -> AdoHierarchy:
        return AdoHierarchy.from_density(rho, self.space, time_fs)

    def rhs(self, t_fs: float, y: np.ndarray) -> np.ndarray:
        out = self.generator @ y
        if self.drive_generator is not None:
            out += np.cos(self.omega_rad * t_fs) * (self.drive_generator @ y)
        return out

    def propagate(self, state: AdoHierarchy, t_end_fs: float,
                  record_stride: int | None = None) -> Trajectory:
        """Fixed-step RK4 to t_end_fs, sampling the physical matrix.

        The sample list starts with the current state and then records every
        record_stride steps; ``state`` itself is advanced in place and stays
        usable for a subsequent segment.
        """
        if state.space is not self.space and state.space.position != self.space.position:
            raise ValueError("hierarchy state does not belong to this propagator's space")
        cfg = self.config
        stride = cfg.record_stride if record_stride is None else int(record_stride)
        if stride < 1:
            raise ValueError(f"record_stride must be >= 1, got {stride}")
        t0 = state.time_fs
        if t_end_fs <= t0:
            raise ValueError(f"t_end {t_end_fs} fs is not ahead of state time {t0} fs")
        span = t_end_fs - t0
        n_steps = int(round(span / cfg.dt_fs))
        if abs(n_steps * cfg.dt_fs - span) > 1e-6 * cfg.dt_fs * max(1, n_steps):
            raise ValueError(
                f"window {span} fs is not an integer number of dt={cfg.dt_fs} fs steps"
            )
        dim = state.dim
        y = state.stack.reshape(-1)
        dt = cfg.dt_fs
        times = [t0]
        samples = [y[: dim * dim].reshape(dim, dim).copy()]
        for step in range(n_steps):
            t = t0 + step * dt
            k1 = self.rhs(t, y)
            k2 = self.rhs(t + 0.5 * dt, y + (0.5 * dt) * k1)
            k3 = self.rhs(t + 0.5 * dt, y + (0.5 * dt) * k2)
            k4 = self.rhs(t + dt, y + dt * k3)
            y += (dt / 6.0) * (k1 + 2.0 * (k2 + k3) + k4)
            if (step + 1) % stride == 0:
                t_now = t0 + (step + 1) * dt
                self._check_stable(y, t_now)
                times.append(t_now)
                samples.append(y[: dim * dim].reshape(dim, dim).copy())
        state.time_fs = t0 + n_steps * dt
        self._check_stable(y, state.time_fs)
        return Trajectory(times_fs=np.array(times), states=np.array(samples))

    @staticmethod
    def _check_stable(y: np.ndarray, t_fs: float):
        peak = np.max(np.abs(y))
        if not np.isfinite(peak):
            raise PropagationError(f"NaN/Inf in hierarchy state at t = {t_fs:.3f} fs")
        if peak > ADO_NORM_LIMIT:
            raise PropagationError(
                f"ADO norm {peak:.3e} exceeds {ADO_NORM_LIMIT:.0e} at t = {t_fs:.3f} fs; "
                "reduce dt or check parameters"
            )


def hierarchy_rhs(
    state: AdoHierarchy,
    t_fs: float,
    ops: OperatorSet,
    modes: list[ExponentialMode],
    drive: Drive | None = None,
    terminator_cm1: float = 0.0,
    use_scaled_ados: bool = True,
) -> AdoHierarchy:
    """Time derivative of a hierarchy state, returned as a hierarchy.

    Pure function; assembles a generator on the fly, so prefer
    :class:`HeomPropagator` for repeated evaluation.
    """
    gen = hierarchy_generator(ops, modes, state.space,
                              use_scaled_ados=use_scaled_ados,
                              terminator_cm1=terminator_cm1)
    y = state.stack.reshape(-1)
    dy = gen @ y
    if drive is not None:
        dgen = _drive_generator(drive, ops.dim // 2, state.space.size)
        dy += np.cos(drive.omega_cm1 * RAD_FS_PER_CM1 * t_fs) * (dgen @ y)
    return AdoHierarchy(state.space, dy.reshape(state.stack.shape), time_fs=t_fs)


def propagate(
    state: AdoHierarchy,
    t_end_fs: float,
    config: PropagatorConfig,
    ops: OperatorSet,
    modes: list[ExponentialMode],
    drive: Drive | None = None,
    terminator_cm1: float = 0.0,
) -> Trajectory:
    """One-shot propagation; see :meth:`HeomPropagator.propagate`."""
    prop = HeomPropagator(ops, modes, config, drive=drive, terminator_cm1=terminator_cm1)
    return prop.propagate(state, t_end_fs)


def save_checkpoint(state: AdoHierarchy, path):
    """Binary hierarchy snapshot.

    Layout: 8-byte magic ``VCHEOM01``; little-endian u32 n_modes, u32 depth,
    u32 dim; f64 time (fs); then size*dim*dim little-endian complex doubles
    in hierarchy enumeration order.
    """
    header = struct.pack(
        _CHECKPOINT_HEADER, _CHECKPOINT_MAGIC,
        state.space.n_modes, state.space.depth, state.dim, state.time_fs,
    )
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(state.stack, dtype="<c16").tobytes())


def load_checkpoint(path, max_ados: int = 100_000) -> AdoHierarchy:
    """Rebuild a hierarchy saved by :func:`save_checkpoint`."""
    with open(path, "rb") as fh:
        raw = fh.read()
    head_size = struct.calcsize(_CHECKPOINT_HEADER)
    magic, n_modes, depth, dim, time_fs = struct.unpack(_CHECKPOINT_HEADER, raw[:head_size])
    if magic != _CHECKPOINT_MAGIC:
        raise ValueError(f"{path} is not a hierarchy checkpoint")
    space = _space_for(n_modes, depth, max_ados)
    expected = space.size * dim * dim
    stack = np.frombuffer(raw[head_size:], dtype="<c16")
    if stack.size != expected:
        raise ValueError(
            f"checkpoint payload holds {stack.size} values, expected {expected}"
        )
    stack = stack.astype(complex).reshape(space.size, dim, dim)
    return AdoHierarchy(space, stack, time_fs)


def equilibrate(
    rho0,
    ops: OperatorSet,
    modes: list[ExponentialMode],
    config: PropagatorConfig,
    duration_fs: float = 6000.0,
    terminator_cm1: float = 0.0,
) -> AdoHierarchy:
    """Drive-off relaxation of the full hierarchy, ending at t = 0.

    Starting from a bare density matrix at t = -duration with empty ADOs,
    this lets the auxiliary matrices settle to their stationary values so
    the t = 0 state carries the system-bath correlations.
    """
    prop = HeomPropagator(ops, modes, config, drive=None, terminator_cm1=terminator_cm1)
    state = prop.initial_state(rho0, time_fs=-abs(duration_fs))
    if duration_fs > 0:
        prop.propagate(state, 0.0)
    state.time_fs = 0.0
    return state
