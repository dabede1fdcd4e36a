"""Memory-bounded probe orderings and local-change recompute planning.

A partition splits the requested probe indices into ordered sets P_1..P_l
such that each set needs at most M propagated input waves. Running the sets
in order and keeping the inputs shared by consecutive sets costs

    T = sum_j |I(P_j)| - sum_j |I(P_j) & I(P_{j+1})|

multislice runs, where I(P) is the union of the neighbor sets of P.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .grid import window_indices, wrapped_offset
from .inputwaves import make_input_wave
from .lma import ApproxPlan, LatticePair
from .multislice import PropagatorSpec
from .optics import MicroscopeParams
from .specimen import Specimen, changed_pixels

STRATEGIES = ("row_by_row", "rectangles", "greedy")


class ScheduleError(ValueError):
    pass


@dataclass
class Partition:
    """Ordered disjoint sets of probe indices (a, b) with a memory bound M."""

    sets: list
    memory_bound: int
    strategy: str = ""

    def __len__(self) -> int:
        return len(self.sets)

    def set_index_map(self, probe_counts) -> np.ndarray:
        """Probe-lattice map of set numbers (1-based); 0 marks unrequested probes."""
        out = np.zeros(tuple(probe_counts), dtype=np.int64)
        for j, s in enumerate(self.sets, start=1):
            for a, b in s:
                out[a, b] = j
        return out


class InputUnion:
    """Neighbor-set unions over probe indices, with per-probe caching."""

    def __init__(self, lattice: LatticePair, L: int):
        self.lattice = lattice
        self.L = L
        self._cache = {}

    def of(self, index) -> frozenset:
        index = (int(index[0]), int(index[1]))
        if index not in self._cache:
            self._cache[index] = frozenset(self.lattice.neighbor_ids(index, self.L).tolist())
        return self._cache[index]

    def union(self, indices) -> set:
        out = set()
        for i in indices:
            out |= self.of(i)
        return out


def partition_cost(partition: Partition, lattice: LatticePair, L: int) -> int:
    """Number of multislice runs needed to process the sets in order."""
    iu = InputUnion(lattice, L)
    unions = [iu.union(s) for s in partition.sets]
    total = sum(len(u) for u in unions)
    shared = sum(len(unions[j] & unions[j + 1]) for j in range(len(unions) - 1))
    return total - shared


def minimum_cost(pixels, lattice: LatticePair, L: int) -> int:
    """|I(P)|: every needed input propagated exactly once."""
    return len(InputUnion(lattice, L).union(_normalize(pixels)))


def _normalize(pixels) -> list:
    out = sorted({(int(a), int(b)) for a, b in pixels}, key=lambda p: (p[1], p[0]))
    if not out:
        raise ScheduleError("no probe pixels requested")
    return out


def partition_build(strategy: str, pixels, lattice: LatticePair, L: int, M: int,
                    seed=None) -> Partition:
    """Split probe indices ``pixels`` into sets needing at most M inputs each.

    ``seed`` is the greedy starting pixel; an integer is used to draw a random
    start with ``numpy.random.default_rng``. The default starts from the first
    pixel in scan order.
    """
    if M < L:
        raise ScheduleError(f"memory bound M={M} is below L={L}")
    pix = _normalize(pixels)
    iu = InputUnion(lattice, L)
    if strategy == "row_by_row":
        sets = _row_by_row(pix, iu, M)
    elif strategy == "rectangles":
        sets = _rectangles(pix, iu, M)
    elif strategy == "greedy":
        sets = _greedy(pix, iu, M, seed)
    else:
        raise ScheduleError(f"unknown strategy {strategy!r}")
    return Partition(sets, M, strategy)


def _row_by_row(pix, iu: InputUnion, M: int) -> list:
    sets, cur, need = [], [], set()
    for p in pix:
        merged = need | iu.of(p)
        if cur and len(merged) > M:
            sets.append(cur)
            cur, need = [p], set(iu.of(p))
        else:
            cur.append(p)
            need = merged
    sets.append(cur)
    return sets


def _tiles(pix, w: int, h: int) -> list:
    """Tiles of w x h over the bounding box of pix in serpentine row-major order."""
    amin = min(p[0] for p in pix)
    bmin = min(p[1] for p in pix)
    amax = max(p[0] for p in pix)
    bmax = max(p[1] for p in pix)
    pset = set(pix)
    ncols = math.ceil((amax - amin + 1) / w)
    nrows = math.ceil((bmax - bmin + 1) / h)
    tiles = []
    for r in range(nrows):
        cols = range(ncols) if r % 2 == 0 else range(ncols - 1, -1, -1)
        for c in cols:
            a0, b0 = amin + c * w, bmin + r * h
            t = [(a, b) for b in range(b0, b0 + h) for a in range(a0, a0 + w) if (a, b) in pset]
            if t:
                tiles.append(t)
    return tiles


def _rectangles(pix, iu: InputUnion, M: int) -> list:
    amin, amax = min(p[0] for p in pix), max(p[0] for p in pix)
    bmin, bmax = min(p[1] for p in pix), max(p[1] for p in pix)
    W, H = amax - amin + 1, bmax - bmin + 1

    def fits(w, h):
        return all(len(iu.union(t)) <= M for t in _tiles(pix, w, h))

    best, best_key = None, None
    wmax = W
    for h in range(1, H + 1):
        # the widest admissible width cannot grow as the height grows
        w = wmax
        while w >= 1 and not fits(w, h):
            w -= 1
        if w < 1:
            break
        wmax = w
        tiles = _tiles(pix, w, h)
        part = Partition(tiles, M)
        key = (w * h, -partition_cost(part, iu.lattice, iu.L))
        if best_key is None or key > best_key:
            best, best_key = tiles, key
    return best


def _greedy(pix, iu: InputUnion, M: int, seed) -> list:
    remaining = set(pix)
    if seed is None:
        start = pix[0]
    elif isinstance(seed, (int, np.integer)):
        start = pix[int(np.random.default_rng(int(seed)).integers(len(pix)))]
    else:
        start = (int(seed[0]), int(seed[1]))
        if start not in remaining:
            raise ScheduleError(f"greedy start {start} is not a requested pixel")
    sets = []
    while remaining:
        cur, need = [start], set(iu.of(start))
        remaining.discard(start)
        last, nxt = start, None
        while True:
            cands = [(last[0] + da, last[1] + db) for db in (-1, 0, 1) for da in (-1, 0, 1)
                     if (da, db) != (0, 0) and (last[0] + da, last[1] + db) in remaining]
            if not cands:
                break
            scored = [(len(need | iu.of(c)), c[1] - last[1], c[0] - last[0], c) for c in cands]
            size, _, _, c = min(scored)
            if size > M:
                nxt = c
                break
            cur.append(c)
            need |= iu.of(c)
            remaining.discard(c)
            last = c
        sets.append(cur)
        if not remaining:
            break
        if nxt is None:
            # dead end: continue from the nearest unassigned pixel
            nxt = min(remaining, key=lambda p: ((p[0] - last[0]) ** 2 + (p[1] - last[1]) ** 2, p[1], p[0]))
        start = nxt
    return sets


def cost_report(partitions: dict, lattice: LatticePair, L: int, pixels) -> str:
    """Text table of set count, largest set demand and cost per strategy."""
    iu = InputUnion(lattice, L)
    lines = [f"L={L} minimum_cost={minimum_cost(pixels, lattice, L)}",
             "strategy      M      sets  max_inputs  cost"]
    for name, part in partitions.items():
        peak = max(len(iu.union(s)) for s in part.sets)
        lines.append(f"{name:<12}  {part.memory_bound:<5}  {len(part):<4}  "
                     f"{peak:<10}  {partition_cost(part, lattice, L)}")
    return "\n".join(lines) + "\n"


def save_partition_pgm(partition: Partition, probe_counts, path) -> None:
    """Set-index map as a 16-bit binary PGM (set j drawn at gray level j)."""
    m = partition.set_index_map(probe_counts)
    if m.max() > 65535:
        raise ScheduleError("too many sets for a 16-bit map")
    # PGM rows run along y
    img = m.T.astype(">u2")
    header = f"P5\n{img.shape[1]} {img.shape[0]}\n65535\n".encode("ascii")
    Path(path).write_bytes(header + img.tobytes())


# --- recompute planning ---------------------------------------------------


@dataclass
class RecomputePlan:
    """Work needed after a local specimen change.

    ``inputs_to_redo`` holds input pixels; ``probes_to_redo`` probe indices.
    """

    changed_region: np.ndarray
    probes_to_redo: list = field(default_factory=list)
    inputs_to_redo: list = field(default_factory=list)
    changed_inputs: list = field(default_factory=list)

    @property
    def empty(self) -> bool:
        return not self.probes_to_redo and not self.inputs_to_redo


def influence_box(lattice: LatticePair, plan: ApproxPlan, prop: PropagatorSpec | None,
                  params: MicroscopeParams, n_slices: int, eps: float,
                  spread_angle: float | None = None, support_tol: float = 1e-8):
    """Half-widths (pixels) of the region whose potential can affect a propagated input.

    A windowed real-space run only sees its window, so the window bounds the
    influence exactly. Otherwise the bound is the input's support radius
    (where |u| exceeds ``support_tol`` of its peak) grown by
    N eps tan(spread_angle), with spread_angle = 2 alpha_max by default;
    the real-space variant also grows at most K // 2 pixels per slice, and
    the smaller of the two growths is used.
    """
    g = lattice.geom
    prop = prop or PropagatorSpec()
    win = prop.window_for(g)
    if win is not None:
        return (win[0] // 2, win[1] // 2), win
    u = np.abs(make_input_wave(plan.kind, params, g).data)
    mask = u > support_tol * u.max()
    dx = np.abs(wrapped_offset(np.arange(g.nx), g.nx))
    dy = np.abs(wrapped_offset(np.arange(g.ny), g.ny))
    sx = int(dx[mask.any(axis=1)].max())
    sy = int(dy[mask.any(axis=0)].max())
    angle = spread_angle if spread_angle is not None else 2 * params.alpha_max
    grow = n_slices * eps * math.tan(angle)
    gx, gy = math.ceil(grow / g.px), math.ceil(grow / g.py)
    if prop.variant == "realspace":
        gx = min(gx, n_slices * (prop.kernel_size[0] // 2))
        gy = min(gy, n_slices * (prop.kernel_size[1] // 2))
    return (sx + gx, sy + gy), None


def recompute_plan(old: Specimen, new: Specimen, lattice: LatticePair, plan: ApproxPlan,
                   params: MicroscopeParams, prop: PropagatorSpec | None = None, probes=None,
                   spread_angle: float | None = None, tol: float = 1e-12) -> RecomputePlan:
    """Inputs whose propagation sees the change, and the probes that use them.

    ``probes`` are probe indices (default: the whole probe lattice).
    ``inputs_to_redo`` is restricted to inputs some requested probe needs.
    """
    if old.geom != new.geom or old.eps != new.eps or old.n_slices != new.n_slices:
        raise ScheduleError("specimens differ in geometry or slicing")
    if old.geom != lattice.geom:
        raise ScheduleError("specimen grid differs from lattice grid")
    region = changed_pixels(old, new, tol)
    probes = lattice.all_probe_indices() if probes is None else [tuple(p) for p in probes]
    if not region.any():
        return RecomputePlan(region)
    g = lattice.geom
    (hx, hy), win = influence_box(lattice, plan, prop, params, old.n_slices, old.eps, spread_angle)
    changed = []
    for x, y in lattice.input_pixels:
        if win is not None:
            ix = window_indices(g.nx, x, win[0])
            iy = window_indices(g.ny, y, win[1])
        else:
            ix = np.arange(x - hx, x + hx + 1) % g.nx if 2 * hx + 1 < g.nx else np.arange(g.nx)
            iy = np.arange(y - hy, y + hy + 1) % g.ny if 2 * hy + 1 < g.ny else np.arange(g.ny)
        if region[np.ix_(ix, iy)].any():
            changed.append((int(x), int(y)))
    cset = set(changed)
    redo_probes, used = [], set()
    for idx in probes:
        nb = {(int(x), int(y)) for x, y in lattice.neighbors(idx, plan.L)}
        if nb & cset:
            redo_probes.append(idx)
            used |= nb & cset
    inputs = [c for c in changed if c in used]
    return RecomputePlan(region, redo_probes, inputs, changed)
