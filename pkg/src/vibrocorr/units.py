"""Unit conventions and conversion constants.

Energies are stored in wavenumbers (cm^-1) and time in femtoseconds, with
hbar = 1. A quantity given in cm^-1 converts to an angular rate in rad/fs
through multiplication by 2*pi*c, with c in cm/fs.
"""

import numpy as np

# speed of light in cm/fs
C_CM_PER_FS = 2.99792458e-5

# angular rate (rad/fs) per cm^-1
RAD_FS_PER_CM1 = 2.0 * np.pi * C_CM_PER_FS

# Boltzmann constant in cm^-1 per Kelvin (CODATA k_B / hc)
KB_CM1_PER_K = 0.6950348004


def rad_per_fs(energy_cm1):
    """Angular rate in rad/fs for an energy in cm^-1."""
    return energy_cm1 * RAD_FS_PER_CM1


def thermal_energy_cm1(temperature_k):
    """k_B * T in cm^-1."""
    return KB_CM1_PER_K * temperature_k


def period_fs(energy_cm1):
    """Oscillation period in fs of a transition energy in cm^-1."""
    return 2.0 * np.pi / rad_per_fs(energy_cm1)
