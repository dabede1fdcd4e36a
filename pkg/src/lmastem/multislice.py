"""Split-step multislice solver (Fourier-space and real-space propagation)."""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np
from scipy.signal import convolve2d

from .grid import ComplexField, GridError, GridGeometry, frequency_grid, window_indices
from .optics import MicroscopeParams
from .specimen import Specimen, transmission


class PropagationError(RuntimeError):
    pass


@dataclass(frozen=True)
class PropagatorSpec:
    """How the propagation step is carried out.

    ``variant`` is ``"fourier"`` (pointwise product after an FFT) or
    ``"realspace"`` (direct convolution with a ``kernel_size`` sampled
    Fresnel kernel). ``window`` restricts a real-space run to an
    ``(X', Y')`` window with zero boundary outside it.
    """

    variant: str = "fourier"
    kernel_size: tuple[int, int] | None = None
    window: tuple[int, int] | None = None
    bandlimit: bool = False

    def __post_init__(self):
        if self.variant not in ("fourier", "realspace"):
            raise ValueError(f"unknown propagator variant {self.variant!r}")
        if self.variant == "realspace":
            if self.kernel_size is None:
                raise ValueError("realspace propagation needs kernel_size")
            k1, k2 = self.kernel_size
            if k1 < 3 or k2 < 3 or k1 % 2 == 0 or k2 % 2 == 0:
                raise ValueError(f"kernel sides must be odd and >= 3, got {self.kernel_size}")
        if self.window is not None:
            object.__setattr__(self, "window", (int(self.window[0]), int(self.window[1])))

    def window_for(self, geom: GridGeometry) -> tuple[int, int] | None:
        """The effective window, or None when the run covers the full grid."""
        if self.window is None or tuple(self.window) == geom.shape:
            return None
        wx, wy = self.window
        if wx > geom.nx or wy > geom.ny or wx < 1 or wy < 1:
            raise GridError(f"window {self.window} does not fit grid {geom.shape}")
        if self.variant == "fourier":
            raise ValueError(
                "a reduced window is only supported for realspace propagation; "
                "the periodic DFT would wrap the wave around the window"
            )
        return (wx, wy)


@dataclass
class OpCounters:
    """Operation tallies accumulated over solver runs."""

    multislice_calls: int = 0
    fft_count: int = 0
    pointwise_mul_count: int = 0
    convolution_mac_count: int = 0
    # linear-combination work in PRISM / LMA reconstruction
    combination_mac_count: int = 0
    coefficient_eval_count: int = 0

    def merge(self, other: "OpCounters") -> "OpCounters":
        for f in fields(self):
            setattr(self, f.name, getattr(self, f.name) + getattr(other, f.name))
        return self

    def as_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


def fourier_propagator(geom: GridGeometry, lam: float, eps: float, bandlimit: bool = False) -> ComplexField:
    """Frequency response exp(-i pi lam eps |k|^2) of the Fresnel propagator, FFT order."""
    if not eps > 0:
        raise ValueError("slice thickness must be positive")
    kx, ky = frequency_grid(geom)
    k2 = kx**2 + ky**2
    p = np.exp(-1j * np.pi * lam * eps * k2)
    if bandlimit:
        kcut = (2.0 / 3.0) * min(0.5 / geom.px, 0.5 / geom.py)
        p = np.where(k2 < kcut**2, p, 0)
    return ComplexField(geom, p)


def realspace_kernel(geom: GridGeometry, lam: float, eps: float, k1: int, k2: int) -> np.ndarray:
    """Central ``k1`` x ``k2`` samples of the Fresnel kernel times the pixel area.

    q(x, y) = -i / (lam eps) exp(i pi (x^2 + y^2) / (lam eps)); element
    ``[k1 // 2, k2 // 2]`` is the origin.
    """
    x = (np.arange(k1) - k1 // 2) * geom.px
    y = (np.arange(k2) - k2 // 2) * geom.py
    r2 = x[:, None] ** 2 + y[None, :] ** 2
    q = -1j / (lam * eps) * np.exp(1j * np.pi * r2 / (lam * eps))
    return q * geom.px * geom.py


class MultisliceSolver:
    """Multislice propagation through one specimen, with cached operators.

    Transmission functions and the propagator are built once; ``solve`` and
    ``solve_batch`` then run the slice loop: transmit, then propagate, for
    every slice in order.
    """

    def __init__(self, specimen: Specimen, params: MicroscopeParams, prop: PropagatorSpec | None = None):
        self.specimen = specimen
        self.params = params
        self.prop = prop or PropagatorSpec()
        self.geom = specimen.geom
        self.window = self.prop.window_for(self.geom)
        self._trans = np.stack([transmission(v, params.sigma) for v in specimen.slices])
        if self.prop.variant == "fourier":
            self._p = fourier_propagator(self.geom, params.lam, specimen.eps, self.prop.bandlimit).data
        else:
            k1, k2 = self.prop.kernel_size
            self._kernel = realspace_kernel(self.geom, params.lam, specimen.eps, k1, k2)

    @property
    def n_slices(self) -> int:
        return self.specimen.n_slices

    def _count(self, counters: OpCounters | None, nwaves: int, shape) -> None:
        if counters is None:
            return
        xy = shape[0] * shape[1]
        n = self.n_slices
        counters.multislice_calls += nwaves
        if self.prop.variant == "fourier":
            counters.fft_count += 2 * n * nwaves
            counters.pointwise_mul_count += 2 * n * xy * nwaves
        else:
            k1, k2 = self.prop.kernel_size
            counters.pointwise_mul_count += n * xy * nwaves
            counters.convolution_mac_count += n * xy * k1 * k2 * nwaves

    def _check(self, psi: np.ndarray, j: int) -> None:
        if not np.all(np.isfinite(psi)):
            raise PropagationError(f"non-finite wave values after slice {j}")

    def solve_batch(self, waves: np.ndarray, counters: OpCounters | None = None) -> np.ndarray:
        """Propagate a stack ``(B, nx, ny)`` of full-grid waves."""
        if self.window is not None:
            raise ValueError("solve_batch runs on the full grid; use solve_window")
        psi = np.array(waves, dtype=np.complex128, copy=True)
        if psi.ndim == 2:
            psi = psi[None]
        if psi.shape[1:] != self.geom.shape:
            raise GridError(f"wave shape {psi.shape[1:]} does not match grid {self.geom.shape}")
        for j in range(self.n_slices):
            psi *= self._trans[j]
            if self.prop.variant == "fourier":
                psi = np.fft.ifft2(np.fft.fft2(psi) * self._p)
            else:
                psi = np.stack([
                    convolve2d(w, self._kernel, mode="same", boundary="wrap") for w in psi
                ])
            self._check(psi, j)
        self._count(counters, psi.shape[0], self.geom.shape)
        return psi

    def solve(self, init: ComplexField, counters: OpCounters | None = None, center=None) -> ComplexField:
        """Exit wave for one initial wave.

        With a reduced real-space window the result is the window centred on
        ``center`` (default: the pixel of maximum modulus of ``init``).
        """
        if init.geometry != self.geom:
            raise GridError("initial wave and specimen grids differ")
        if self.window is not None:
            if center is None:
                center = np.unravel_index(np.argmax(np.abs(init.data)), init.data.shape)
            return self.solve_window(init.data, center, counters)
        return ComplexField(self.geom, self.solve_batch(init.data, counters)[0])

    def solve_window(self, wave: np.ndarray, center, counters: OpCounters | None = None) -> ComplexField:
        """Real-space run restricted to the window centred on ``center``.

        The wave and potential are cut out periodically; outside the window
        the wave is taken as zero during every convolution.
        """
        wx, wy = self.window or self.geom.shape
        cx, cy = int(center[0]), int(center[1])
        ix = window_indices(self.geom.nx, cx, wx)
        iy = window_indices(self.geom.ny, cy, wy)
        sel = np.ix_(ix, iy)
        psi = np.asarray(wave, dtype=np.complex128)[sel].copy()
        boundary = "fill" if self.window is not None else "wrap"
        for j in range(self.n_slices):
            psi *= self._trans[j][sel]
            if self.prop.variant == "fourier":
                psi = np.fft.ifft2(np.fft.fft2(psi) * self._p)
            else:
                psi = convolve2d(psi, self._kernel, mode="same", boundary=boundary)
            self._check(psi, j)
        self._count(counters, 1, (wx, wy))
        return ComplexField(self.geom.sub(wx, wy), psi, (int(ix[0]), int(iy[0])))


def multislice_solve(
    init: ComplexField,
    spec: Specimen,
    params: MicroscopeParams,
    prop: PropagatorSpec | None = None,
    counters: OpCounters | None = None,
    center=None,
) -> ComplexField:
    """Exit wave of ``init`` after transmission through ``spec``."""
    return MultisliceSolver(spec, params, prop).solve(init, counters, center)
