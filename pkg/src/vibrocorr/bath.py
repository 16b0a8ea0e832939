"""Overdamped Brownian (Drude-Lorentz) environment.

The bath enters the dynamics only through its spectral density
J(w) = 2*eta*w*Lambda / (w^2 + Lambda^2) and the exponential expansion of
the corresponding correlation function, C(t>0) = sum_k c_k exp(-nu_k t).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .units import KB_CM1_PER_K


@dataclass(frozen=True)
class BathParams:
    """Bath reorganization energy eta and dissipation rate Lambda (cm^-1),
    temperature (K) and the number K of retained Matsubara terms."""

    eta: float = 5.0
    big_lambda: float = 200.0
    temperature: float = 298.0
    n_matsubara: int = 2

    def __post_init__(self):
        if self.eta < 0:
            raise ValueError(f"eta must be >= 0, got {self.eta}")
        if self.big_lambda <= 0:
            raise ValueError(f"big_lambda must be positive, got {self.big_lambda}")
        if self.temperature <= 0:
            raise ValueError(f"temperature must be positive, got {self.temperature}")
        if self.n_matsubara < 0:
            raise ValueError(f"n_matsubara must be >= 0, got {self.n_matsubara}")

    @property
    def beta(self) -> float:
        """Inverse temperature in cm (1 / (k_B T in cm^-1))."""
        return 1.0 / (KB_CM1_PER_K * self.temperature)


@dataclass(frozen=True)
class ExponentialMode:
    """One exponential term of the bath correlation function.

    coeff is the complex prefactor c_k in cm^-2 and rate the decay nu_k in
    cm^-1; the k=0 (Drude) mode carries Im(coeff) = -eta*Lambda, Matsubara
    modes are real.
    """

    coeff: complex
    rate: float

    def __post_init__(self):
        if self.rate <= 0:
            raise ValueError(f"mode rate must be positive, got {self.rate}")


def spectral_density(bath: BathParams, omega):
    """J(omega) = 2*eta*omega*Lambda / (omega^2 + Lambda^2), odd in omega."""
    omega = np.asarray(omega, dtype=float)
    out = 2.0 * bath.eta * omega * bath.big_lambda / (omega**2 + bath.big_lambda**2)
    return out if out.ndim else float(out)


def expansion_coeffs(bath: BathParams) -> list[ExponentialMode]:
    """Drude plus Matsubara exponential decomposition of the correlation function.

    Mode 0 is (eta*Lambda*(cot(beta*Lambda/2) - i), Lambda); modes k >= 1 are
    (4*eta*Lambda*nu_k / (beta*(nu_k^2 - Lambda^2)), nu_k) with
    nu_k = 2*pi*k/beta. A Matsubara rate degenerate with Lambda is handled by
    perturbing Lambda by 1e-6 relative (reported through a warning).
    """
    beta = bath.beta
    lam = bath.big_lambda
    for k in range(1, bath.n_matsubara + 1):
        if abs(2.0 * np.pi * k / beta - lam) < 1e-9 * lam:
            warnings.warn(
                f"Matsubara rate nu_{k} degenerate with Lambda={lam:g} cm^-1; "
                "perturbing Lambda by 1e-6 relative",
                stacklevel=2,
            )
            lam = lam * (1.0 + 1e-6)
            break

    c0 = bath.eta * lam * (1.0 / np.tan(beta * lam / 2.0) - 1.0j)
    modes = [ExponentialMode(coeff=c0, rate=lam)]
    for k in range(1, bath.n_matsubara + 1):
        nu_k = 2.0 * np.pi * k / beta
        c_k = 4.0 * bath.eta * lam * nu_k / (beta * (nu_k**2 - lam**2))
        modes.append(ExponentialMode(coeff=complex(c_k), rate=nu_k))
    return modes


def matsubara_tail(bath: BathParams) -> float:
    """Residual sum_{k>K} c_k/nu_k folded into the hierarchy terminator (cm^-1).

    The full sum over all modes is 2*eta/(beta*Lambda) - i*eta; the imaginary
    part sits entirely in the Drude mode, so the retained-mode subtraction
    leaves a real, positive tail that shrinks as K grows.
    """
    beta = bath.beta
    lam = bath.big_lambda
    total = 2.0 * bath.eta / (beta * lam)
    tail = total - bath.eta / np.tan(beta * lam / 2.0)
    for k in range(1, bath.n_matsubara + 1):
        nu_k = 2.0 * np.pi * k / beta
        tail -= 4.0 * bath.eta * lam / (beta * (nu_k**2 - lam**2))
    return float(tail)
