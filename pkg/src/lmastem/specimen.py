"""Projected-potential slice stacks and transmission functions."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .grid import GridGeometry, wrapped_offset

#: Gaussian atoms are cut off at this many widths.
TRUNCATION_WIDTHS = 4.0


class SpecimenError(ValueError):
    pass


@dataclass(frozen=True)
class AtomSpec:
    """Synthetic atom: a Gaussian blob of projected potential (V Angstrom)."""

    x: float
    y: float
    z: float
    amplitude: float
    width: float

    def __post_init__(self):
        if not self.width > 0:
            raise SpecimenError("atom width must be positive")
        if not self.amplitude > 0:
            raise SpecimenError("atom amplitude must be positive")

    @property
    def reach(self) -> float:
        """Radius beyond which the atom deposits nothing."""
        return TRUNCATION_WIDTHS * self.width


@dataclass(frozen=True)
class Specimen:
    """Stack of projected-potential slices ``slices[j, ix, iy]`` of thickness ``eps``."""

    geom: GridGeometry
    eps: float
    slices: np.ndarray
    atoms: tuple[AtomSpec, ...] | None = field(default=None, compare=False)

    def __post_init__(self):
        s = np.asarray(self.slices, dtype=np.float64)
        if s.ndim != 3 or s.shape[0] < 1:
            raise SpecimenError("specimen needs at least one slice")
        if s.shape[1:] != self.geom.shape:
            raise SpecimenError(f"slice shape {s.shape[1:]} does not match grid {self.geom.shape}")
        if not self.eps > 0:
            raise SpecimenError("slice thickness must be positive")
        if not np.all(np.isfinite(s)):
            raise SpecimenError("potential contains non-finite values")
        if np.any(s < 0):
            raise SpecimenError("projected potential must be non-negative")
        s = s.copy()
        s.setflags(write=False)
        object.__setattr__(self, "slices", s)

    @property
    def n_slices(self) -> int:
        return self.slices.shape[0]

    @property
    def thickness(self) -> float:
        return self.n_slices * self.eps

    def __eq__(self, other):
        if not isinstance(other, Specimen):
            return NotImplemented
        return (
            self.geom == other.geom
            and self.eps == other.eps
            and np.array_equal(self.slices, other.slices)
        )

    __hash__ = None


def _deposit(slab: np.ndarray, atom: AtomSpec, geom: GridGeometry) -> None:
    cx, cy = atom.x / geom.px, atom.y / geom.py
    rx = int(np.ceil(atom.reach / geom.px)) + 1
    ry = int(np.ceil(atom.reach / geom.py)) + 1
    # at most one periodic image per pixel
    rx, ry = min(rx, geom.nx // 2), min(ry, geom.ny // 2)
    ix = np.arange(int(np.floor(cx)) - rx, int(np.floor(cx)) + rx + 2)
    iy = np.arange(int(np.floor(cy)) - ry, int(np.floor(cy)) + ry + 2)
    ix = np.unique(ix % geom.nx)
    iy = np.unique(iy % geom.ny)
    dx = wrapped_offset(ix - cx, geom.nx) * geom.px
    dy = wrapped_offset(iy - cy, geom.ny) * geom.py
    # wrapped_offset on float offsets keeps the minimum image
    r2 = dx[:, None] ** 2 + dy[None, :] ** 2
    val = atom.amplitude * np.exp(-r2 / (2 * atom.width**2))
    val[r2 > atom.reach**2] = 0.0
    slab[np.ix_(ix, iy)] += val


def synth_specimen(atoms, geom: GridGeometry, eps: float, n_slices: int) -> Specimen:
    """Build a slice stack from Gaussian atoms with periodic wrap in x and y.

    Each atom lands wholly in the slice containing its z coordinate.
    """
    if n_slices < 1:
        raise SpecimenError("n_slices must be >= 1")
    atoms = tuple(atoms)
    slices = np.zeros((n_slices, geom.nx, geom.ny))
    for a in atoms:
        j = int(np.floor(a.z / eps))
        if not 0 <= a.z < n_slices * eps:
            raise SpecimenError(f"atom z={a.z} outside [0, {n_slices * eps})")
        _deposit(slices[j], a, geom)
    return Specimen(geom, eps, slices, atoms)


def replace_atoms(spec: Specimen, atoms) -> Specimen:
    """Re-synthesize ``spec`` with a new atom list (same grid and slicing)."""
    return synth_specimen(atoms, spec.geom, spec.eps, spec.n_slices)


def transmission(v: np.ndarray, sigma: float) -> np.ndarray:
    """Transmission function exp(i sigma v) of one projected-potential slice."""
    v = np.asarray(v, dtype=float)
    if not np.all(np.isfinite(v)):
        raise SpecimenError("slice contains non-finite values")
    return np.exp(1j * sigma * v)


def changed_pixels(old: Specimen, new: Specimen, tol: float = 1e-12) -> np.ndarray:
    """Boolean (nx, ny) map of pixels where any slice differs by more than ``tol``."""
    if old.geom != new.geom or old.eps != new.eps or old.n_slices != new.n_slices:
        raise SpecimenError("specimens differ in geometry or slicing")
    return np.any(np.abs(old.slices - new.slices) > tol, axis=0)


# --- LMASLICES I/O -------------------------------------------------------

_MAGIC = "LMASLICES"


def save_specimen(spec: Specimen, path) -> None:
    g = spec.geom
    header = f"{_MAGIC} {g.nx} {g.ny} {g.lx!r} {g.ly!r} {spec.eps!r} {spec.n_slices}\n"
    body = np.ascontiguousarray(spec.slices, dtype="<f8").tobytes()
    Path(path).write_bytes(header.encode("ascii") + body)


def load_specimen(path) -> Specimen:
    raw = Path(path).read_bytes()
    nl = raw.find(b"\n")
    if nl < 0:
        raise SpecimenError("missing LMASLICES header")
    parts = raw[:nl].decode("ascii", errors="replace").split()
    if len(parts) != 7 or parts[0] != _MAGIC:
        raise SpecimenError(f"malformed header {raw[:nl]!r}")
    try:
        nx, ny, n = int(parts[1]), int(parts[2]), int(parts[6])
        lx, ly, eps = float(parts[3]), float(parts[4]), float(parts[5])
    except ValueError as exc:
        raise SpecimenError(f"malformed header {raw[:nl]!r}") from exc
    body = raw[nl + 1:]
    expected = n * nx * ny * 8
    if len(body) != expected:
        raise SpecimenError(f"payload has {len(body)} bytes, header implies {expected}")
    slices = np.frombuffer(body, dtype="<f8").reshape(n, nx, ny).astype(np.float64)
    return Specimen(GridGeometry(nx, ny, lx, ly), eps, slices)


def with_slices(spec: Specimen, slices) -> Specimen:
    return replace(spec, slices=slices, atoms=None)
