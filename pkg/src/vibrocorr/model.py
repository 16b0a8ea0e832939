"""Vibronic monomer: parameters, operators, bases and thermal initial state.

The monomer has two electronic levels, each dressed with a truncated ladder
of vibrational levels. Everything is constructed in the diabatic product
basis ordered (g,0 .. g,N-1, e,0 .. e,N-1); the adiabatic (eigen-) basis is
reached through :func:`adiabatize`.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .units import KB_CM1_PER_K, rad_per_fs

HERMITICITY_TOL = 1e-12


@dataclass(frozen=True)
class VibronicParams:
    """Physical constants of the driven monomer.

    All energies in cm^-1, temperature in K. The system reorganization
    energy is tied to the displacement by lambda = omega_0 * delta**2 / 2
    and may only be passed explicitly if it satisfies that relation.
    """

    omega_eg: float = 1.0e4
    omega_0: float = 500.0
    delta: float = 1.2
    drive_amp: float = 16.68
    n_levels: int = 10
    temperature: float = 298.0
    lambda_reorg: float | None = None

    def __post_init__(self):
        if self.n_levels < 2:
            raise ValueError(f"n_levels must be >= 2, got {self.n_levels}")
        if self.omega_eg <= 0 or self.omega_0 <= 0:
            raise ValueError("omega_eg and omega_0 must be positive")
        if self.delta < 0:
            raise ValueError("delta must be non-negative")
        if self.temperature <= 0:
            raise ValueError(f"temperature must be positive, got {self.temperature}")
        derived = self.omega_0 * self.delta**2 / 2.0
        if self.lambda_reorg is None:
            object.__setattr__(self, "lambda_reorg", derived)
        elif not np.isclose(self.lambda_reorg, derived, rtol=1e-9, atol=1e-9):
            raise ValueError(
                f"lambda_reorg is derived, not free: omega_0*delta^2/2 = {derived:g}"
                f" cm^-1, got {self.lambda_reorg:g}"
            )

    @property
    def dim(self) -> int:
        """Dimension of the full electronic x vibrational space."""
        return 2 * self.n_levels


def ladder_ops(n_levels: int):
    """Annihilation/creation pair (b, b_dag) on the vibrational space.

    <n-1|b|n> = sqrt(n); [b, b_dag] = 1 on the subspace below the top level.
    """
    if n_levels < 2:
        raise ValueError(f"n_levels must be >= 2, got {n_levels}")
    b = np.diag(np.sqrt(np.arange(1, n_levels, dtype=float)), k=1).astype(complex)
    return b, b.conj().T


@dataclass(frozen=True)
class OperatorSet:
    """Concrete matrices of the monomer in the diabatic basis.

    b, b_dag act on the vibrational space alone; all other operators act on
    the full 2*n_levels space. a_op is the photon annihilation operator
    mu_eg |g><e| x 1 (mu_eg = 1), b_sys the system phonon annihilation
    1 x b, and q_op the dimensionless coupling coordinate 1 x (b+b_dag)/sqrt(2).
    """

    b: np.ndarray
    b_dag: np.ndarray
    h_g: np.ndarray
    h_e: np.ndarray
    h_sys: np.ndarray
    a_op: np.ndarray
    b_sys: np.ndarray
    q_op: np.ndarray

    def __post_init__(self):
        for m in (self.b, self.b_dag, self.h_g, self.h_e, self.h_sys,
                  self.a_op, self.b_sys, self.q_op):
            m.setflags(write=False)

    @property
    def dim(self) -> int:
        return self.h_sys.shape[0]


def build_system(params: VibronicParams) -> OperatorSet:
    """Construct the monomer operator set from its physical parameters."""
    n = params.n_levels
    b, b_dag = ladder_ops(n)
    number = b_dag @ b
    ident = np.eye(n, dtype=complex)

    h_g = params.omega_0 * (number + 0.5 * ident)
    h_e = (
        (params.omega_eg + params.lambda_reorg) * ident
        + params.omega_0 * (number + 0.5 * ident)
        - np.sqrt(params.omega_0 * params.lambda_reorg) * (b + b_dag)
    )

    h_sys = np.zeros((2 * n, 2 * n), dtype=complex)
    h_sys[:n, :n] = h_g
    h_sys[n:, n:] = h_e

    lower_el = np.array([[0.0, 1.0], [0.0, 0.0]], dtype=complex)  # |g><e|
    a_op = np.kron(lower_el, np.eye(n, dtype=complex))
    b_sys = np.kron(np.eye(2, dtype=complex), b)
    q_op = np.kron(np.eye(2, dtype=complex), (b + b_dag) / np.sqrt(2.0))

    return OperatorSet(b=b, b_dag=b_dag, h_g=h_g, h_e=h_e, h_sys=h_sys,
                       a_op=a_op, b_sys=b_sys, q_op=q_op)


@dataclass(frozen=True)
class Drive:
    """Continuous monochromatic drive, resonant with the electronic gap.

    The lab-frame coupling is cos(omega*t) * coupling_matrix with both
    rotating and counter-rotating terms kept.
    """

    amplitude_cm1: float
    omega_cm1: float

    def coupling_matrix(self, n_levels: int) -> np.ndarray:
        """Bare coupling 2*V0*(|e><g| + |g><e|) x 1, in cm^-1."""
        sigma_x = np.array([[0.0, 1.0], [1.0, 0.0]], dtype=complex)
        return 2.0 * self.amplitude_cm1 * np.kron(sigma_x, np.eye(n_levels, dtype=complex))


def drive_hamiltonian(params: VibronicParams, time_fs: float) -> np.ndarray:
    """Lab-frame drive Hamiltonian V0*2cos(omega_eg t)(|e><g|+|g><e|) x 1 at time_fs."""
    drive = Drive(params.drive_amp, params.omega_eg)
    phase = np.cos(rad_per_fs(params.omega_eg) * time_fs)
    return phase * drive.coupling_matrix(params.n_levels)


@dataclass(frozen=True)
class BasisTransform:
    """Unitary from the diabatic to the adiabatic basis.

    Columns of u_ad are the adiabatic eigenvectors expressed in diabatic
    coordinates; energies is the matching ascending eigenvalue list (cm^-1).
    """

    u_ad: np.ndarray
    energies: np.ndarray

    def __post_init__(self):
        self.u_ad.setflags(write=False)
        self.energies.setflags(write=False)

    def to_diabatic(self, rho_adiabatic: np.ndarray) -> np.ndarray:
        return self.u_ad @ rho_adiabatic @ self.u_ad.conj().T

    def to_adiabatic(self, rho_diabatic: np.ndarray) -> np.ndarray:
        return self.u_ad.conj().T @ rho_diabatic @ self.u_ad


def adiabatize(hamiltonian: np.ndarray) -> BasisTransform:
    """Diagonalize a Hermitian operator, with a fixed eigenvector phase gauge.

    Energies come out ascending. Each eigenvector is rotated so its
    largest-magnitude component is real and positive (ties resolved to the
    lowest index, which is what argmax yields).
    """
    h = np.asarray(hamiltonian, dtype=complex)
    dev = np.max(np.abs(h - h.conj().T))
    if dev > 1e-9:
        raise ValueError(f"matrix is not Hermitian (max deviation {dev:.3e})")
    try:
        energies, vecs = np.linalg.eigh(h)
    except np.linalg.LinAlgError as exc:
        raise RuntimeError(f"eigensolver failed to converge: {exc}") from exc
    for k in range(vecs.shape[1]):
        lead = vecs[np.argmax(np.abs(vecs[:, k])), k]
        if abs(lead) > 0:
            vecs[:, k] *= lead.conj() / abs(lead)
    return BasisTransform(u_ad=vecs, energies=energies.real)


@dataclass
class DensityMatrix:
    """A density matrix with its basis label.

    Physical states are Hermitian, unit-trace and positive semidefinite;
    auxiliary hierarchy matrices reuse the container without those
    guarantees.
    """

    elements: np.ndarray
    basis_tag: str = "diabatic"

    def hermiticity_error(self) -> float:
        return float(np.max(np.abs(self.elements - self.elements.conj().T)))

    def trace(self) -> complex:
        return complex(np.trace(self.elements))

    def smallest_eigenvalue(self) -> float:
        return float(np.linalg.eigvalsh(self.elements)[0])

    def validate(self, herm_tol=1e-12, trace_tol=1e-10, psd_tol=1e-10):
        """Raise if the physical-state invariants are violated."""
        herm = self.hermiticity_error()
        if herm > herm_tol:
            raise ValueError(f"not Hermitian: max deviation {herm:.3e}")
        tr = self.trace()
        if abs(tr - 1.0) > trace_tol:
            raise ValueError(f"trace {tr} deviates from 1")
        lo = self.smallest_eigenvalue()
        if lo < -psd_tol:
            raise ValueError(f"not positive semidefinite: lowest eigenvalue {lo:.3e}")
        return self


def thermal_state(params: VibronicParams, transform: BasisTransform) -> DensityMatrix:
    """Boltzmann state over the adiabatic spectrum, returned in the diabatic basis.

    Weights P_k = exp(-eps_k / kT) / Z run over every eigenstate; the
    excited-manifold weights are ~exp(-omega_eg/kT) and numerically
    negligible. Energies are measured from the ground eigenvalue so the
    exponentials stay representable at any temperature.
    """
    if params.temperature <= 0:
        raise ValueError(f"temperature must be positive, got {params.temperature}")
    kt = KB_CM1_PER_K * params.temperature
    shifted = transform.energies - transform.energies[0]
    weights = np.exp(-shifted / kt)
    weights /= weights.sum()
    rho_ad = np.diag(weights).astype(complex)
    rho_d = transform.to_diabatic(rho_ad)
    rho_d = 0.5 * (rho_d + rho_d.conj().T)
    return DensityMatrix(elements=rho_d, basis_tag="diabatic")
