"""Detector models over exit waves and STEM image assembly."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .grid import ComplexField, frequency_grid

MODES = ("2d", "3d", "4d")


class DetectorError(ValueError):
    pass


class NyquistWarning(UserWarning):
    """The detector reaches beyond the frequencies the grid can represent."""


@dataclass(frozen=True)
class DetectorConfig:
    """Detector geometry; all angles in mrad.

    2d: annulus [r1, r2). 3d: A + 1 annuli [a r, (a + 1) r). 4d: samples at
    angles (a dx, b dy) for a = -A..A, b = -B..B.
    """

    mode: str
    r1: float = 0.0
    r2: float = 0.0
    A: int = 0
    r: float = 0.0
    B: int = 0
    dx: float = 0.0
    dy: float = 0.0
    name: str = ""

    def __post_init__(self):
        if self.mode not in MODES:
            raise DetectorError(f"unknown detector mode {self.mode!r}")
        if self.mode == "2d" and not 0 <= self.r1 < self.r2:
            raise DetectorError(f"need 0 <= r1 < r2, got [{self.r1}, {self.r2})")
        if self.mode == "3d" and (self.A < 1 or not self.r > 0):
            raise DetectorError("3d detector needs A >= 1 and r > 0")
        if self.mode == "4d" and (self.A < 0 or self.B < 0 or not self.dx > 0 or not self.dy > 0):
            raise DetectorError("4d detector needs A, B >= 0 and dx, dy > 0")

    @classmethod
    def annular(cls, r1: float, r2: float, name: str = ""):
        return cls("2d", r1=r1, r2=r2, name=name)

    @classmethod
    def segmented(cls, A: int, r: float, name: str = ""):
        return cls("3d", A=A, r=r, name=name)

    @classmethod
    def pixelated(cls, A: int, B: int, dx: float, dy: float, name: str = ""):
        return cls("4d", A=A, B=B, dx=dx, dy=dy, name=name)

    @property
    def size(self) -> int:
        """Number of values per probe."""
        if self.mode == "2d":
            return 1
        if self.mode == "3d":
            return self.A + 1
        return (2 * self.A + 1) * (2 * self.B + 1)


def standard_detectors() -> list[DetectorConfig]:
    """Bright field, annular dark field and high-angle annular dark field."""
    return [
        DetectorConfig.annular(0, 15, "BF"),
        DetectorConfig.annular(16, 40, "ADF"),
        DetectorConfig.annular(41, 200, "HAADF"),
    ]


def intensity_spectrum(exit: ComplexField) -> np.ndarray:
    """|F psi|^2 sampled at the grid frequencies, scaled so that its sum equals the integral over k."""
    if not np.all(np.isfinite(exit.data)):
        raise DetectorError("exit wave has non-finite values")
    g = exit.geometry
    return np.abs(np.fft.fft2(exit.data)) ** 2 * (g.px * g.py / (g.nx * g.ny))


def _nyquist_check(g, kmax: float) -> None:
    knyq = min(0.5 / g.px, 0.5 / g.py)
    if kmax > knyq:
        warnings.warn(
            f"detector reaches |k| = {kmax:.4g} 1/A beyond the grid Nyquist {knyq:.4g} 1/A; "
            "the integral is partial",
            NyquistWarning,
            stacklevel=3,
        )


def detect(exit: ComplexField, cfg: DetectorConfig, lam: float):
    """Detector reading of one exit wave; float for 2d, array for 3d/4d.

    Fourier pixels belong to an annulus by the radius of their centre,
    lower bound inclusive and upper bound exclusive. ``lam`` converts angles
    to spatial frequencies, k = theta / lam.
    """
    g = exit.geometry
    spec = intensity_spectrum(exit)
    kx, ky = frequency_grid(g)
    theta = np.hypot(kx, ky) * lam * 1e3
    if cfg.mode == "2d":
        _nyquist_check(g, cfg.r2 * 1e-3 / lam)
        return float(spec[(theta >= cfg.r1) & (theta < cfg.r2)].sum())
    if cfg.mode == "3d":
        _nyquist_check(g, (cfg.A + 1) * cfg.r * 1e-3 / lam)
        bins = np.floor(theta / cfg.r).astype(np.int64)
        keep = bins <= cfg.A
        return np.bincount(bins[keep], weights=spec[keep], minlength=cfg.A + 1)
    a = np.arange(-cfg.A, cfg.A + 1)
    b = np.arange(-cfg.B, cfg.B + 1)
    fx = a * cfg.dx * 1e-3 / lam
    fy = b * cfg.dy * 1e-3 / lam
    _nyquist_check(g, max(np.abs(fx).max(), np.abs(fy).max()))
    ix = np.rint(fx * g.lx).astype(np.int64) % g.nx
    iy = np.rint(fy * g.ly).astype(np.int64) % g.ny
    return spec[np.ix_(ix, iy)].ravel()


def detect_all(exit: ComplexField, detectors, lam: float) -> list:
    return [detect(exit, d, lam) for d in detectors]


@dataclass
class STEMImage:
    """Detector values on the probe lattice, shape (P_x, P_y, size)."""

    values: np.ndarray
    probe_spacing: tuple[float, float]
    name: str = ""
    filled: np.ndarray = field(default=None)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim == 2:
            self.values = self.values[:, :, None]
        if self.filled is None:
            self.filled = np.ones(self.values.shape[:2], dtype=bool)

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape[:2]

    def scalar(self) -> np.ndarray:
        """The (P_x, P_y) image of a 2d detector (or the sum over channels)."""
        return self.values.sum(axis=2)


def assemble_image(outputs, indices, probe_counts, probe_spacing, prior: STEMImage | None = None,
                   name: str = "") -> STEMImage:
    """Place per-probe detector values at their lattice indices.

    Probes absent from ``indices`` keep the value of ``prior`` (if given) or
    stay unfilled at zero.
    """
    outputs = list(outputs)
    indices = [tuple(int(v) for v in i) for i in indices]
    if len(outputs) != len(indices):
        raise DetectorError(f"{len(outputs)} outputs for {len(indices)} probes")
    size = np.atleast_1d(outputs[0]).size if outputs else (prior.values.shape[2] if prior else 1)
    px, py = probe_counts
    if prior is not None:
        if prior.shape != (px, py) or prior.values.shape[2] != size:
            raise DetectorError("prior image does not match the lattice")
        values = prior.values.copy()
        filled = prior.filled.copy()
    else:
        values = np.zeros((px, py, size))
        filled = np.zeros((px, py), dtype=bool)
    for (a, b), v in zip(indices, outputs):
        v = np.atleast_1d(np.asarray(v, dtype=np.float64))
        if v.size != size:
            raise DetectorError("detector outputs differ in length")
        values[a, b] = v
        filled[a, b] = True
    return STEMImage(values, tuple(probe_spacing), name, filled)


def save_image(img: STEMImage, path) -> None:
    """LMAIMG text header followed by little-endian float64 values, row-major (P_x, P_y, size)."""
    px, py, size = img.values.shape
    header = f"LMAIMG {px} {py} {size} {img.probe_spacing[0]!r} {img.probe_spacing[1]!r} {img.name or '-'}\n"
    Path(path).write_bytes(header.encode("ascii") + img.values.astype("<f8").tobytes())


def load_image(path) -> STEMImage:
    raw = Path(path).read_bytes()
    nl = raw.find(b"\n")
    parts = raw[:nl].decode("ascii", errors="replace").split() if nl >= 0 else []
    if len(parts) != 7 or parts[0] != "LMAIMG":
        raise DetectorError("not an LMAIMG file")
    px, py, size = (int(v) for v in parts[1:4])
    data = raw[nl + 1:]
    if len(data) != px * py * size * 8:
        raise DetectorError("LMAIMG payload size does not match header")
    values = np.frombuffer(data, dtype="<f8").reshape(px, py, size).astype(np.float64)
    name = "" if parts[6] == "-" else parts[6]
    return STEMImage(values, (float(parts[4]), float(parts[5])), name)


def save_pgm(img: STEMImage, path, channel: int | None = None) -> None:
    """16-bit PGM with min-max scaling; rows run along y."""
    data = img.scalar() if channel is None else img.values[:, :, channel]
    lo, hi = float(data.min()), float(data.max())
    scaled = np.zeros_like(data) if hi == lo else (data - lo) / (hi - lo)
    pix = np.rint(scaled.T * 65535).astype(">u2")
    header = f"P5\n{pix.shape[1]} {pix.shape[0]}\n65535\n".encode("ascii")
    Path(path).write_bytes(header + pix.tobytes())
