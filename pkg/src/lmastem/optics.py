"""Probe formation: aberration phase, objective aperture and the focused probe.

All lengths are in Angstrom (including ``cs`` and ``z``); angles in radians.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import ComplexField, GridGeometry, frequency_grid

# physical constants (SI)
_H = 6.62607015e-34
_C = 299792458.0
_M0 = 9.1093837015e-31
_E = 1.602176634e-19


class OpticsError(ValueError):
    pass


@dataclass(frozen=True)
class MicroscopeParams:
    """Electron-optical settings.

    Parameters
    ----------
    lam : float
        Electron wavelength (Angstrom).
    cs : float
        Third-order spherical aberration (Angstrom).
    z : float
        Focus (Angstrom).
    alpha_max : float
        Objective aperture semiangle (rad).
    sigma : float
        Beam-sample interaction constant (rad / (V Angstrom)).
    """

    lam: float
    cs: float
    z: float
    alpha_max: float
    sigma: float

    def __post_init__(self):
        if not self.lam > 0:
            raise OpticsError("wavelength must be positive")
        if not self.alpha_max > 0:
            raise OpticsError("aperture semiangle must be positive")
        if not self.sigma > 0:
            raise OpticsError("interaction constant must be positive")

    @property
    def k_max(self) -> float:
        """Aperture cut-off frequency alpha_max / lambda (1/Angstrom)."""
        return self.alpha_max / self.lam

    @classmethod
    def from_voltage(cls, voltage: float, cs: float, z: float, alpha_max: float) -> "MicroscopeParams":
        return cls(electron_wavelength(voltage), cs, z, alpha_max, interaction_constant(voltage))


def electron_wavelength(voltage: float) -> float:
    """Relativistic electron wavelength in Angstrom for an accelerating voltage in V."""
    ev = _E * voltage
    return _H / np.sqrt(2 * _M0 * ev * (1 + ev / (2 * _M0 * _C**2))) * 1e10


def interaction_constant(voltage: float) -> float:
    """Interaction constant sigma in rad / (V Angstrom)."""
    lam = electron_wavelength(voltage)
    mc2 = _M0 * _C**2 / _E  # rest energy in eV
    return 2 * np.pi / (lam * voltage) * (mc2 + voltage) / (2 * mc2 + voltage)


def _k_squared(k) -> np.ndarray:
    k = np.asarray(k, dtype=float)
    if k.shape and k.shape[-1] == 2:
        return k[..., 0] ** 2 + k[..., 1] ** 2
    raise OpticsError("frequency must have a trailing axis of length 2")


def aberration_chi(k, params: MicroscopeParams) -> np.ndarray:
    """Wave aberration phase 1/2 pi Cs lam^3 |k|^4 - pi Z lam |k|^2.

    ``k`` is an array whose last axis holds (kx, ky) in 1/Angstrom.
    """
    k2 = _k_squared(k)
    lam = params.lam
    return 0.5 * np.pi * params.cs * lam**3 * k2**2 - np.pi * params.z * lam * k2


def aperture(k, params: MicroscopeParams) -> np.ndarray:
    """Ideal objective aperture: 1 where lam |k| < alpha_max, else 0."""
    kk = np.sqrt(_k_squared(k))
    return (params.lam * kk < params.alpha_max).astype(float)


def aperture_mask(geom: GridGeometry, params: MicroscopeParams) -> np.ndarray:
    """Boolean aperture over the grid's FFT-ordered frequencies."""
    kx, ky = frequency_grid(geom)
    mask = aperture(np.stack([kx, ky], axis=-1), params) > 0
    if mask.sum() < 2:
        raise OpticsError(
            f"aperture radius {params.k_max:.4g} 1/A is below one Fourier pixel "
            f"({min(geom.qx, geom.qy):.4g} 1/A); the probe would be a plane wave"
        )
    return mask


def probe_spectrum(geom: GridGeometry, params: MicroscopeParams, pixel=(0, 0)) -> np.ndarray:
    """FFT-ordered DFT values of the unit-norm probe centred on ``pixel``.

    exp(-i chi(k)) A(k) exp(-2 pi i k.p), scaled so the inverse DFT has unit
    euclidean norm.
    """
    kx, ky = frequency_grid(geom)
    mask = aperture_mask(geom, params)
    chi = aberration_chi(np.stack([kx, ky], axis=-1), params)
    x, y = geom.position(pixel)
    spec = np.where(mask, np.exp(-1j * chi - 2j * np.pi * (kx * x + ky * y)), 0)
    spec *= np.sqrt(geom.nx * geom.ny / mask.sum())
    return spec


def build_probe(p, params: MicroscopeParams, geom: GridGeometry) -> ComplexField:
    """Unit-norm STEM probe at physical position ``p`` (snapped to the nearest pixel)."""
    pixel = geom.snap(p)
    return ComplexField(geom, np.fft.ifft2(probe_spectrum(geom, params, pixel)))


def build_probe_at_pixel(pixel, params: MicroscopeParams, geom: GridGeometry) -> ComplexField:
    return ComplexField(geom, np.fft.ifft2(probe_spectrum(geom, params, pixel)))
