"""Floating-point operation models for the three solvers.

Logarithms are base 2, the usual convention for FFT operation counts; with
it the real-space/Fourier crossover for a 2048 x 2048 grid and a 25 x 25
kernel falls at f = 4.
"""

from __future__ import annotations

import math


def t_multislice(n_slices: int, nx: int, ny: int) -> float:
    """One Fourier-space multislice run: N (2XY + 2XY log XY)."""
    xy = nx * ny
    return n_slices * (2 * xy + 2 * xy * math.log2(xy))


def t_multislice_realspace(n_slices: int, nx: int, ny: int, k1: int, k2: int) -> float:
    """One real-space multislice run: N (XY + XY K1 K2)."""
    xy = nx * ny
    return n_slices * (xy + xy * k1 * k2)


def t_prism(n_freq: int, n_probes: int, n_slices: int, nx: int, ny: int, f: int) -> dict:
    propagation = n_freq * t_multislice(n_slices, nx, ny)
    combination = n_probes * n_freq * nx * ny / f**2
    return {"propagation": propagation, "combination": combination, "total": propagation + combination}


def t_lma(n_inputs: int, n_probes: int, L: int, n_slices: int, nx: int, ny: int,
          wx: int, wy: int, kernel: tuple[int, int] | None = None) -> dict:
    """LMA cost; ``kernel`` selects the real-space variant on the (wx, wy) window."""
    if kernel is None:
        propagation = n_inputs * t_multislice(n_slices, nx, ny)
    else:
        propagation = n_inputs * t_multislice_realspace(n_slices, wx, wy, *kernel)
    combination = n_probes * L * wx * wy
    return {"propagation": propagation, "combination": combination, "total": propagation + combination}


def crossover_bound(nx: int, ny: int, k1: int, k2: int) -> float:
    """sqrt(1/2 (1 + K1 K2) / (1 + log XY)): real space wins for f at or above this."""
    return math.sqrt(0.5 * (1 + k1 * k2) / (1 + math.log2(nx * ny)))


def crossover_bound_approx(nx: int, ny: int, k1: int, k2: int) -> float:
    return math.sqrt(k1 * k2 / (2 * math.log2(nx * ny)))


def crossover_min_f(nx: int, ny: int, k1: int, k2: int) -> int:
    """Smallest integer f for which real-space propagation on X/f windows is cheaper."""
    return max(1, math.ceil(crossover_bound(nx, ny, k1, k2) - 1e-12))
