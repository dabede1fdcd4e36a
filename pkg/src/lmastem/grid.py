"""Complex fields on a periodic 2D grid.

Arrays are indexed ``data[ix, iy]`` with shape ``(nx, ny)``. Frequencies are
stored in FFT order; ``frequency_grid`` returns them in that order and
``centered``/``uncentered`` convert to and from the centered layout in which
pixel ``m`` holds frequency ``(m - nx // 2) / lx``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class GridError(ValueError):
    pass


@dataclass(frozen=True)
class GridGeometry:
    """Pixel counts and physical extent (Angstrom) of a periodic grid."""

    nx: int
    ny: int
    lx: float
    ly: float

    def __post_init__(self):
        if int(self.nx) != self.nx or int(self.ny) != self.ny:
            raise GridError("pixel counts must be integers")
        if self.nx < 2 or self.ny < 2:
            raise GridError(f"grid must be at least 2x2, got {self.nx}x{self.ny}")
        if not (self.lx > 0 and self.ly > 0):
            raise GridError(f"extent must be positive, got {self.lx}x{self.ly}")
        object.__setattr__(self, "nx", int(self.nx))
        object.__setattr__(self, "ny", int(self.ny))
        object.__setattr__(self, "lx", float(self.lx))
        object.__setattr__(self, "ly", float(self.ly))

    @property
    def shape(self) -> tuple[int, int]:
        return (self.nx, self.ny)

    @property
    def px(self) -> float:
        return self.lx / self.nx

    @property
    def py(self) -> float:
        return self.ly / self.ny

    @property
    def qx(self) -> float:
        """Fourier pixel size along x."""
        return 1.0 / self.lx

    @property
    def qy(self) -> float:
        return 1.0 / self.ly

    def sub(self, sx: int, sy: int) -> "GridGeometry":
        """Geometry of an ``sx`` x ``sy`` window with the same pixel size.

        Windows may be a single pixel wide, unlike simulation grids.
        """
        if sx >= 2 and sy >= 2:
            return GridGeometry(sx, sy, sx * self.px, sy * self.py)
        if sx < 1 or sy < 1:
            raise GridError(f"window {sx}x{sy} is empty")
        g = object.__new__(GridGeometry)
        for name, value in (("nx", int(sx)), ("ny", int(sy)), ("lx", sx * self.px), ("ly", sy * self.py)):
            object.__setattr__(g, name, value)
        return g

    def snap(self, position) -> tuple[int, int]:
        """Nearest grid pixel (wrapped) of a physical position."""
        x, y = position
        return (int(round(x / self.px)) % self.nx, int(round(y / self.py)) % self.ny)

    def position(self, pixel) -> tuple[float, float]:
        return (pixel[0] * self.px, pixel[1] * self.py)


@dataclass(frozen=True)
class ComplexField:
    """A complex wave sampled on ``geometry``.

    ``origin`` records where pixel (0, 0) of a cropped field sits on the
    parent grid; it is (0, 0) for full-grid fields.
    """

    geometry: GridGeometry
    data: np.ndarray
    origin: tuple[int, int] = field(default=(0, 0))

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.complex128)
        if data.shape != self.geometry.shape:
            raise GridError(
                f"data shape {data.shape} does not match geometry {self.geometry.shape}"
            )
        if not np.all(np.isfinite(data)):
            raise GridError("field contains non-finite values")
        data.setflags(write=False)
        object.__setattr__(self, "data", data)

    def norm(self) -> float:
        return float(np.linalg.norm(self.data))

    def __add__(self, other: "ComplexField") -> "ComplexField":
        _check_same(self, other)
        return ComplexField(self.geometry, self.data + other.data, self.origin)

    def __sub__(self, other: "ComplexField") -> "ComplexField":
        _check_same(self, other)
        return ComplexField(self.geometry, self.data - other.data, self.origin)

    def __mul__(self, scalar) -> "ComplexField":
        return ComplexField(self.geometry, self.data * scalar, self.origin)

    __rmul__ = __mul__


def _check_same(a: ComplexField, b: ComplexField) -> None:
    if a.geometry != b.geometry:
        raise GridError(f"geometry mismatch: {a.geometry} vs {b.geometry}")


def dft2(f: ComplexField, direction: str = "forward") -> ComplexField:
    """Unnormalized forward DFT, or inverse DFT carrying the 1/(nx*ny) factor."""
    if not np.all(np.isfinite(f.data)):
        raise GridError("dft2 input is not finite")
    if direction == "forward":
        out = np.fft.fft2(f.data)
    elif direction == "inverse":
        out = np.fft.ifft2(f.data)
    else:
        raise ValueError(f"direction must be 'forward' or 'inverse', not {direction!r}")
    return ComplexField(f.geometry, out, f.origin)


def rel_error(a: ComplexField | np.ndarray, b: ComplexField | np.ndarray, norm: str = "euclidean") -> float:
    """Relative error ``|a - b| / |b|`` in the euclidean or supremum norm."""
    if isinstance(a, ComplexField) and isinstance(b, ComplexField):
        _check_same(a, b)
    da = a.data if isinstance(a, ComplexField) else np.asarray(a)
    db = b.data if isinstance(b, ComplexField) else np.asarray(b)
    if da.shape != db.shape:
        raise GridError(f"shape mismatch: {da.shape} vs {db.shape}")
    if norm == "euclidean":
        ref = np.linalg.norm(db)
        diff = np.linalg.norm(da - db)
    elif norm == "supremum":
        ref = np.max(np.abs(db)) if db.size else 0.0
        diff = np.max(np.abs(da - db)) if db.size else 0.0
    else:
        raise ValueError(f"unknown norm {norm!r}")
    if ref == 0:
        raise GridError("reference field has zero norm")
    return float(diff / ref)


def periodic_translate(f: ComplexField, shift) -> ComplexField:
    """Circular shift by an integer pixel pair: out[i + s] = in[i]."""
    sx, sy = (int(s) for s in shift)
    return ComplexField(f.geometry, np.roll(f.data, (sx, sy), axis=(0, 1)), f.origin)


def window_indices(n: int, center: int, size: int) -> np.ndarray:
    """Periodic indices of a ``size``-pixel window centred on ``center``."""
    start = center - size // 2
    return (start + np.arange(size)) % n


def crop_window(f: ComplexField, center, size) -> ComplexField:
    """Periodic extraction of a ``size`` window centred on pixel ``center``.

    Pixel ``size // 2`` of the output is the centre pixel.
    """
    sx, sy = (int(s) for s in size)
    g = f.geometry
    if sx < 1 or sy < 1 or sx > g.nx or sy > g.ny:
        raise GridError(f"crop size {size} invalid for grid {g.shape}")
    cx, cy = (int(c) for c in center)
    ix = window_indices(g.nx, cx, sx)
    iy = window_indices(g.ny, cy, sy)
    data = f.data[np.ix_(ix, iy)]
    origin = ((f.origin[0] + ix[0]) % g.nx, (f.origin[1] + iy[0]) % g.ny)
    return ComplexField(g.sub(sx, sy), data, origin)


def frequency_grid(geom: GridGeometry) -> tuple[np.ndarray, np.ndarray]:
    """Spatial frequencies (1/Angstrom) of every pixel, FFT order, shape (nx, ny)."""
    kx = np.fft.fftfreq(geom.nx, d=geom.px)
    ky = np.fft.fftfreq(geom.ny, d=geom.py)
    return np.meshgrid(kx, ky, indexing="ij")


def frequency_index_grid(geom: GridGeometry) -> tuple[np.ndarray, np.ndarray]:
    """Signed integer frequency indices m with k = m / l, FFT order."""
    mx = np.fft.fftfreq(geom.nx, d=1.0 / geom.nx).round().astype(np.int64)
    my = np.fft.fftfreq(geom.ny, d=1.0 / geom.ny).round().astype(np.int64)
    return np.meshgrid(mx, my, indexing="ij")


def centered(a: np.ndarray) -> np.ndarray:
    """FFT order -> centered order (zero frequency at pixel n // 2)."""
    return np.fft.fftshift(a, axes=(-2, -1))


def uncentered(a: np.ndarray) -> np.ndarray:
    return np.fft.ifftshift(a, axes=(-2, -1))


def wrapped_offset(d, n):
    """Signed representative of ``d`` modulo ``n`` in ``[-n//2, n - n//2)``."""
    return (np.asarray(d) + n // 2) % n - n // 2


def real_space_coords(geom: GridGeometry) -> tuple[np.ndarray, np.ndarray]:
    """Minimum-image coordinates (Angstrom) of every pixel relative to pixel (0, 0)."""
    x = wrapped_offset(np.arange(geom.nx), geom.nx) * geom.px
    y = wrapped_offset(np.arange(geom.ny), geom.ny) * geom.py
    return np.meshgrid(x, y, indexing="ij")


# --- serialization -------------------------------------------------------

_FIELD_MAGIC = "LMAFIELD"


def save_field(f: ComplexField, path) -> None:
    g = f.geometry
    header = f"{_FIELD_MAGIC} {g.nx} {g.ny} {g.lx!r} {g.ly!r}\n".encode("ascii")
    payload = np.ascontiguousarray(f.data, dtype="<c16").tobytes()
    Path(path).write_bytes(header + payload)


def load_field(path) -> ComplexField:
    raw = Path(path).read_bytes()
    nl = raw.find(b"\n")
    if nl < 0:
        raise GridError("missing header line")
    parts = raw[:nl].decode("ascii", errors="replace").split()
    if len(parts) != 5 or parts[0] != _FIELD_MAGIC:
        raise GridError(f"malformed field header: {raw[:nl]!r}")
    try:
        nx, ny = int(parts[1]), int(parts[2])
        lx, ly = float(parts[3]), float(parts[4])
    except ValueError as exc:
        raise GridError(f"malformed field header: {raw[:nl]!r}") from exc
    body = raw[nl + 1:]
    if len(body) != nx * ny * 16:
        raise GridError(f"payload has {len(body)} bytes, expected {nx * ny * 16}")
    data = np.frombuffer(body, dtype="<c16").reshape(nx, ny)
    return ComplexField(GridGeometry(nx, ny, lx, ly), data.astype(np.complex128))
