"""PRISM: probes rebuilt from propagated plane waves inside the aperture."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import ComplexField, GridGeometry, frequency_index_grid, window_indices
from .multislice import MultisliceSolver, OpCounters, PropagatorSpec
from .optics import MicroscopeParams, aperture_mask, probe_spectrum
from .specimen import Specimen


@dataclass(frozen=True)
class FrequencySet:
    """Aperture-passing frequencies, as signed indices (mx, my) with k = (mx/lx, my/ly).

    A signed index m corresponds to the 1-based centred pixel m + 1 + n // 2.
    """

    entries: tuple[tuple[int, int], ...]
    f: int

    def __len__(self) -> int:
        return len(self.entries)

    def fft_indices(self, geom: GridGeometry) -> tuple[np.ndarray, np.ndarray]:
        e = np.asarray(self.entries, dtype=np.int64).reshape(-1, 2)
        return e[:, 0] % geom.nx, e[:, 1] % geom.ny


def build_frequency_set(geom: GridGeometry, params: MicroscopeParams, f: int = 1) -> FrequencySet:
    """Frequencies inside the aperture, keeping only every ``f``-th in each direction."""
    if f < 1:
        raise ValueError("interpolation factor must be >= 1")
    mask = aperture_mask(geom, params)
    mx, my = frequency_index_grid(geom)
    keep = mask & (mx % f == 0) & (my % f == 0)
    entries = sorted(zip(mx[keep].tolist(), my[keep].tolist()))
    return FrequencySet(tuple(entries), f)


def plane_wave(entry, geom: GridGeometry) -> ComplexField:
    """Inverse DFT of the discrete delta at frequency index ``entry``."""
    spec = np.zeros(geom.shape, dtype=np.complex128)
    spec[entry[0] % geom.nx, entry[1] % geom.ny] = 1.0
    return ComplexField(geom, np.fft.ifft2(spec))


def _plane_wave_stack(fs: FrequencySet, geom: GridGeometry) -> np.ndarray:
    ix, iy = fs.fft_indices(geom)
    x = np.arange(geom.nx)
    y = np.arange(geom.ny)
    ex = np.exp(2j * np.pi * np.outer(ix, x) / geom.nx)
    ey = np.exp(2j * np.pi * np.outer(iy, y) / geom.ny)
    return ex[:, :, None] * ey[:, None, :] / (geom.nx * geom.ny)


def propagate_plane_waves(fs: FrequencySet, solver: MultisliceSolver,
                          counters: OpCounters | None = None, batch: int = 32) -> np.ndarray:
    """Exit waves W_k for every frequency of ``fs``, shape (|K_f|, nx, ny)."""
    geom = solver.geom
    waves = _plane_wave_stack(fs, geom)
    out = np.empty_like(waves)
    for s in range(0, len(waves), batch):
        out[s:s + batch] = solver.solve_batch(waves[s:s + batch], counters)
    return out


def prism_coefficients(fs: FrequencySet, geom: GridGeometry, params: MicroscopeParams, pixel) -> np.ndarray:
    """Probe DFT values at the frequencies of ``fs`` (analytic, no numerical DFT)."""
    ix, iy = fs.fft_indices(geom)
    return probe_spectrum(geom, params, pixel)[ix, iy]


def prism_reconstruct_init(fs: FrequencySet, geom: GridGeometry, params: MicroscopeParams, pixel) -> ComplexField:
    """The probe approximation sum_k c_k w_k before propagation."""
    c = prism_coefficients(fs, geom, params, pixel)
    return ComplexField(geom, np.tensordot(c, _plane_wave_stack(fs, geom), axes=1))


def prism_simulate(
    spec: Specimen,
    params: MicroscopeParams,
    geom: GridGeometry,
    f: int,
    probes,
    crop: bool = False,
    prop: PropagatorSpec | None = None,
    counters: OpCounters | None = None,
) -> list[ComplexField]:
    """Exit waves for probe pixels ``probes`` via plane-wave decomposition.

    All |K_f| propagated plane waves are held in memory. With ``crop`` each
    result is the (X/f, Y/f) window centred on its probe; the window's
    ``origin`` records its placement on the full grid.
    """
    if spec.geom != geom:
        raise ValueError("specimen grid differs from simulation grid")
    counters = counters if counters is not None else OpCounters()
    fs = build_frequency_set(geom, params, f)
    solver = MultisliceSolver(spec, params, prop)
    W = propagate_plane_waves(fs, solver, counters)
    wx, wy = (geom.nx // f, geom.ny // f) if crop else geom.shape
    results = []
    for pixel in probes:
        pixel = (int(pixel[0]) % geom.nx, int(pixel[1]) % geom.ny)
        c = prism_coefficients(fs, geom, params, pixel)
        counters.coefficient_eval_count += len(fs)
        if crop:
            ix = window_indices(geom.nx, pixel[0], wx)
            iy = window_indices(geom.ny, pixel[1], wy)
            data = np.tensordot(c, W[:, ix][:, :, iy], axes=1)
            results.append(ComplexField(geom.sub(wx, wy), data, (int(ix[0]), int(iy[0]))))
        else:
            results.append(ComplexField(geom, np.tensordot(c, W, axes=1)))
        counters.combination_mac_count += len(fs) * wx * wy
    return results
