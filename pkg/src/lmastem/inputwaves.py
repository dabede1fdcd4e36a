"""Localized input waves and the trigonometric change-of-basis matrices."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import ComplexField, GridGeometry, real_space_coords
from .optics import MicroscopeParams, build_probe_at_pixel

KINDS = ("probe", "trig_tensor", "trig_radial", "gaussian", "pixel_delta")


class InputWaveError(ValueError):
    pass


@dataclass(frozen=True)
class InputWaveKind:
    """Which generator u is translated over the input-wave lattice.

    ``n`` is the trigonometric degree (trig kinds); ``sigma_g`` the Gaussian
    width in Angstrom. ``pixel_delta`` is supported but needs one input per
    grid pixel, so it only makes sense for tiny grids.
    """

    tag: str
    n: int | None = None
    sigma_g: float | None = None

    def __post_init__(self):
        if self.tag not in KINDS:
            raise InputWaveError(f"unknown input wave kind {self.tag!r}")
        if self.tag.startswith("trig") and (self.n is None or self.n < 1):
            raise InputWaveError("trigonometric input waves need degree n >= 1")
        if self.tag == "gaussian" and not (self.sigma_g and self.sigma_g > 0):
            raise InputWaveError("gaussian input waves need sigma_g > 0")

    @classmethod
    def probe(cls):
        return cls("probe")

    @classmethod
    def trig_tensor(cls, n: int):
        return cls("trig_tensor", n=int(n))

    @classmethod
    def trig_radial(cls, n: int):
        return cls("trig_radial", n=int(n))

    @classmethod
    def gaussian(cls, sigma_g: float):
        return cls("gaussian", sigma_g=float(sigma_g))

    @classmethod
    def pixel_delta(cls):
        return cls("pixel_delta")

    def label(self) -> str:
        if self.tag.startswith("trig"):
            return f"{self.tag}(n={self.n})"
        if self.tag == "gaussian":
            return f"gaussian(sigma={self.sigma_g:.4g})"
        return self.tag


def trig_poly_phi(n: int, t) -> np.ndarray:
    """phi_n(t) = sum_{k=-n}^{n} e^{ikt} cos(k pi / (2n + 2)).

    The coefficients are real and even in k, so the result is real.
    """
    t = np.asarray(t, dtype=float)
    k = np.arange(1, n + 1)
    c = np.cos(k * np.pi / (2 * n + 2))
    # pair k with -k: e^{ikt} + e^{-ikt} = 2 cos(kt)
    return 1.0 + 2.0 * np.tensordot(np.cos(np.multiply.outer(t, k)), c, axes=([-1], [0]))


@dataclass(frozen=True)
class ModulationMatrices:
    """M maps the elementary waves e^{ikt} to the translates phi_n(t - 2 pi j / (2n+1)).

    Row j of ``m`` holds the coefficients of translate j; rows and columns
    run over -n..n.
    """

    n: int
    w: np.ndarray
    m: np.ndarray
    m_inv: np.ndarray


def modulation_matrices(n: int) -> ModulationMatrices:
    """M = W diag(cos(k pi / (2n+2))) and its closed-form inverse.

    W_{k,j} = exp(-2 pi i jk / (2n + 1)) satisfies W W* = (2n + 1) I, so
    M^{-1} = diag(1 / cos(k pi / (2n+2))) W* / (2n + 1).
    """
    if n < 0:
        raise InputWaveError("degree must be >= 0")
    idx = np.arange(-n, n + 1)
    size = 2 * n + 1
    w = np.exp(-2j * np.pi * np.outer(idx, idx) / size)
    c = np.cos(idx * np.pi / (2 * n + 2))
    m = w @ np.diag(c)
    m_inv = np.diag(1.0 / c) @ w.conj().T / size
    err = np.max(np.abs(m @ m_inv - np.eye(size)))
    if err > 1e-10:
        raise InputWaveError(f"modulation matrix inverse check failed ({err:.2e})")
    return ModulationMatrices(n, w, m, m_inv)


def trig_degree_from_probe(params: MicroscopeParams, q: float) -> int:
    """Degree n = alpha_max / (lam q) matching the probe's frequency range."""
    if not q > 0:
        raise InputWaveError("Fourier pixel size must be positive")
    return max(1, int(round(params.alpha_max / (params.lam * q))))


def gaussian_width(params: MicroscopeParams) -> float:
    """Gaussian width lam / (2 alpha_max) matched to the probe bandwidth."""
    return params.lam / (2 * params.alpha_max)


def make_input_wave(kind: InputWaveKind, params: MicroscopeParams, geom: GridGeometry) -> ComplexField:
    """Unit-norm input wave centred on grid pixel (0, 0).

    Trigonometric kinds use t = 2 pi x / lx (and y / ly), so one period spans
    the window and phi_n's frequencies fall on grid Fourier pixels.
    """
    if kind.tag == "probe":
        return build_probe_at_pixel((0, 0), params, geom)
    if kind.tag == "pixel_delta":
        data = np.zeros(geom.shape, dtype=np.complex128)
        data[0, 0] = 1.0
        return ComplexField(geom, data)
    x, y = real_space_coords(geom)
    if kind.tag in ("trig_tensor", "trig_radial"):
        n = kind.n
        if 2 * n + 1 > min(geom.nx, geom.ny):
            raise InputWaveError(
                f"degree {n} needs {2 * n + 1} Fourier pixels per axis; grid is {geom.shape}"
            )
        if kind.tag == "trig_tensor":
            xs = np.arange(geom.nx) * geom.px
            ys = np.arange(geom.ny) * geom.py
            u = np.outer(trig_poly_phi(n, 2 * np.pi * xs / geom.lx),
                         trig_poly_phi(n, 2 * np.pi * ys / geom.ly))
        else:
            r = np.hypot(x, y)
            u = trig_poly_phi(n, 2 * np.pi * r / geom.lx)
    else:
        u = np.exp(-(x**2 + y**2) / (2 * kind.sigma_g**2))
    u = u.astype(np.complex128)
    return ComplexField(geom, u / np.linalg.norm(u))
