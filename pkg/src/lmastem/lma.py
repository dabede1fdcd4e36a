"""Lattice Multislice Algorithm.

Probes on a rectangular probe lattice are approximated by least-squares
combinations of translates of one localized input wave ``u`` placed on an
input-wave lattice. The translates are propagated once each; every exit wave
is then the same combination of the propagated translates.

All positions are integer grid pixels. Probe lattice point (a, b) sits at
pixel (a * sx, b * sy); input point (a, b) of the subsampled lattice sits at
``offset + (a * f * rx, b * f * ry)``.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
from scipy.linalg import solve_triangular

from .grid import ComplexField, GridGeometry, rel_error, window_indices, wrapped_offset
from .inputwaves import InputWaveKind, make_input_wave
from .multislice import MultisliceSolver, OpCounters, PropagatorSpec
from .optics import MicroscopeParams, build_probe_at_pixel
from .specimen import Specimen


class LatticeError(ValueError):
    pass


class RankDeficientError(np.linalg.LinAlgError):
    pass


@dataclass(frozen=True)
class LatticePair:
    """Compatible probe and input-wave lattices on one periodic grid.

    ``case`` is ``"one_to_many"`` when R = (c P_x, d P_y) and
    ``"many_to_one"`` when P = (c R_x, d R_y).
    """

    geom: GridGeometry
    probe_counts: tuple[int, int]
    input_counts: tuple[int, int]
    offset: tuple[int, int]
    f: int
    case: str
    c: int
    d: int
    mode: str = "half_shift"

    @property
    def probe_step(self) -> tuple[int, int]:
        return (self.geom.nx // self.probe_counts[0], self.geom.ny // self.probe_counts[1])

    @property
    def input_step(self) -> tuple[int, int]:
        return (self.geom.nx // self.input_counts[0], self.geom.ny // self.input_counts[1])

    @property
    def sub_step(self) -> tuple[int, int]:
        """Pixel spacing of the subsampled input lattice I_f."""
        rx, ry = self.input_step
        return (rx * self.f, ry * self.f)

    @property
    def sub_counts(self) -> tuple[int, int]:
        return (self.input_counts[0] // self.f, self.input_counts[1] // self.f)

    @property
    def probe_spacing(self) -> tuple[float, float]:
        """Probe spacing (p_x, p_y) in Angstrom."""
        return (self.geom.lx / self.probe_counts[0], self.geom.ly / self.probe_counts[1])

    @property
    def n_inputs(self) -> int:
        """|I_f|."""
        return self.sub_counts[0] * self.sub_counts[1]

    @property
    def n_probes(self) -> int:
        return self.probe_counts[0] * self.probe_counts[1]

    @property
    def period(self) -> tuple[int, int]:
        """Probe-index period after which I_f maps onto itself.

        Probes whose indices agree modulo the period share one coefficient set.
        This is 1 x 1 in the one-to-many case and c x d in the many-to-one case
        when f = 1; subsampling with f > 1 can lengthen it.
        """
        (sx, sy), (fx, fy) = self.probe_step, self.sub_step
        return (fx // math.gcd(sx, fx), fy // math.gcd(sy, fy))

    @property
    def representatives(self) -> list[tuple[int, int]]:
        tx, ty = self.period
        return [(a, b) for a in range(tx) for b in range(ty)]

    @cached_property
    def input_pixels(self) -> np.ndarray:
        """Pixels of I_f, shape (|I_f|, 2), ordered by input id."""
        (fx, fy), (mx, my) = self.sub_step, self.sub_counts
        a, b = np.meshgrid(np.arange(mx), np.arange(my), indexing="ij")
        px = (self.offset[0] + a.ravel() * fx) % self.geom.nx
        py = (self.offset[1] + b.ravel() * fy) % self.geom.ny
        return np.stack([px, py], axis=1)

    def input_ids(self, pixels) -> np.ndarray:
        """Integer ids of input-lattice pixels (inverse of ``input_pixels``)."""
        p = np.asarray(pixels, dtype=np.int64).reshape(-1, 2)
        (fx, fy), (mx, my) = self.sub_step, self.sub_counts
        dx = (p[:, 0] - self.offset[0]) % self.geom.nx
        dy = (p[:, 1] - self.offset[1]) % self.geom.ny
        if np.any(dx % fx) or np.any(dy % fy):
            raise LatticeError("pixel is not on the subsampled input lattice")
        return (dx // fx) * my + (dy // fy)

    def probe_pixel(self, index) -> tuple[int, int]:
        sx, sy = self.probe_step
        return ((int(index[0]) * sx) % self.geom.nx, (int(index[1]) * sy) % self.geom.ny)

    def probe_index(self, pixel) -> tuple[int, int]:
        sx, sy = self.probe_step
        x, y = int(pixel[0]) % self.geom.nx, int(pixel[1]) % self.geom.ny
        if x % sx or y % sy:
            raise LatticeError(f"pixel {tuple(pixel)} is not on the probe lattice")
        return (x // sx, y // sy)

    def all_probe_indices(self) -> list[tuple[int, int]]:
        px, py = self.probe_counts
        return [(a, b) for b in range(py) for a in range(px)]

    def representative_of(self, index) -> tuple[int, int]:
        tx, ty = self.period
        return (int(index[0]) % tx, int(index[1]) % ty)

    def neighbor_offsets(self, rep, L: int) -> np.ndarray:
        """Signed offsets (L, 2) from representative probe ``rep`` to its L nearest inputs."""
        key = (tuple(rep), int(L))
        cache = self.__dict__.setdefault("_offset_cache", {})
        if key not in cache:
            cache[key] = _nearest_offsets(self, self.probe_pixel(rep), L)
        return cache[key]

    def neighbors(self, index, L: int) -> np.ndarray:
        """Input pixels (L, 2) nearest to probe ``index``, nearest first."""
        rep = self.representative_of(index)
        p = np.asarray(self.probe_pixel(index))
        off = self.neighbor_offsets(rep, L)
        return (p + off) % np.asarray(self.geom.shape)

    def neighbor_ids(self, index, L: int) -> np.ndarray:
        return self.input_ids(self.neighbors(index, L))


def _nearest_offsets(lat: LatticePair, pixel, L: int) -> np.ndarray:
    if not 1 <= L <= lat.n_inputs:
        raise LatticeError(f"L={L} outside 1..{lat.n_inputs}")
    g = lat.geom
    pos = lat.input_pixels
    dx = wrapped_offset(pos[:, 0] - pixel[0], g.nx)
    dy = wrapped_offset(pos[:, 1] - pixel[1], g.ny)
    scale = max(g.px, g.py) ** 2
    d2 = np.round(((dx * g.px) ** 2 + (dy * g.py) ** 2) / scale, 9)
    # ties broken by (dy, dx)
    order = np.lexsort((dx, dy, d2))[:L]
    return np.stack([dx[order], dy[order]], axis=1).astype(np.int64)


def build_lattices(geom: GridGeometry, px: int, py: int, mode: str = "half_shift",
                   f: int = 1, inputs: tuple[int, int] | None = None) -> LatticePair:
    """Probe lattice of px x py points and input lattice of ``inputs`` points (default px x py).

    ``half_shift`` offsets the input lattice by half the probe spacing,
    rounded down to a whole pixel when the spacing is odd.
    """
    rx, ry = inputs if inputs is not None else (px, py)
    for name, n, k in (("probe", geom.nx, px), ("probe", geom.ny, py),
                       ("input", geom.nx, rx), ("input", geom.ny, ry)):
        if k < 1 or n % k:
            raise LatticeError(f"{name} lattice count {k} must divide the grid size {n}")
    if f < 1:
        raise LatticeError("f must be >= 1")
    if rx % f or ry % f:
        raise LatticeError(f"input lattice {rx}x{ry} is not divisible by f={f}")
    if rx % px == 0 and ry % py == 0:
        case, c, d = "one_to_many", rx // px, ry // py
    elif px % rx == 0 and py % ry == 0:
        case, c, d = "many_to_one", px // rx, py // ry
    else:
        raise LatticeError(f"lattices {px}x{py} and {rx}x{ry} are not compatible")
    if mode == "aligned":
        offset = (0, 0)
    elif mode == "half_shift":
        offset = ((geom.nx // px) // 2, (geom.ny // py) // 2)
    else:
        raise LatticeError(f"unknown lattice mode {mode!r}")
    return LatticePair(geom, (px, py), (rx, ry), offset, f, case, c, d, mode)


def neighbor_set(p, lattice: LatticePair, L: int) -> list[tuple[int, int]]:
    """The L input pixels of I_f nearest probe pixel ``p`` under torus distance."""
    idx = lattice.probe_index(p)
    return [tuple(int(v) for v in row) for row in lattice.neighbors(idx, L)]


# --- coefficient fitting --------------------------------------------------


@dataclass
class Representative:
    index: tuple[int, int]
    offsets: np.ndarray
    coeffs: np.ndarray
    err_euclid: float
    err_sup: float


@dataclass
class ApproxPlan:
    """Least-squares coefficients for every representative probe."""

    lattice: LatticePair
    kind: InputWaveKind
    L: int
    params: MicroscopeParams
    representatives: dict = field(default_factory=dict)
    fit_window: tuple[int, int] | None = None

    def for_index(self, index) -> Representative:
        return self.representatives[self.lattice.representative_of(index)]

    @property
    def max_error(self) -> tuple[float, float]:
        reps = self.representatives.values()
        return (max(r.err_euclid for r in reps), max(r.err_sup for r in reps))


def probe_mass_radius(probe: ComplexField, fraction: float = 0.99) -> float:
    """Radius (pixels) around the probe maximum holding ``fraction`` of its energy."""
    g = probe.geometry
    c = np.unravel_index(np.argmax(np.abs(probe.data)), g.shape)
    dx = wrapped_offset(np.arange(g.nx) - c[0], g.nx)
    dy = wrapped_offset(np.arange(g.ny) - c[1], g.ny)
    r = np.hypot(dx[:, None], dy[None, :]).ravel()
    w = (np.abs(probe.data) ** 2).ravel()
    order = np.argsort(r, kind="stable")
    cum = np.cumsum(w[order]) / w.sum()
    return float(r[order][np.searchsorted(cum, fraction)])


def auto_fit_window(geom: GridGeometry, params: MicroscopeParams) -> tuple[int, int] | None:
    """Window of side 8 x the probe's 99%-energy radius, or None if that covers the grid."""
    r = probe_mass_radius(build_probe_at_pixel((0, 0), params, geom))
    side = int(math.ceil(8 * r)) + 1
    if side >= geom.nx and side >= geom.ny:
        return None
    return (min(side, geom.nx), min(side, geom.ny))


def _columns(u: np.ndarray, pixel, offsets: np.ndarray, window) -> np.ndarray:
    """Translates of u to pixel + offsets, restricted to the window around pixel."""
    nx, ny = u.shape
    if window is None:
        ix, iy = np.arange(nx), np.arange(ny)
    else:
        ix = window_indices(nx, pixel[0], window[0])
        iy = window_indices(ny, pixel[1], window[1])
    cols = np.empty((len(ix) * len(iy), len(offsets)), dtype=np.complex128)
    for j, (ox, oy) in enumerate(offsets):
        sx = (ix - pixel[0] - ox) % nx
        sy = (iy - pixel[1] - oy) % ny
        cols[:, j] = u[np.ix_(sx, sy)].ravel()
    return cols, ix, iy


def _reconstruct(u: np.ndarray, pixel, offsets, coeffs) -> np.ndarray:
    out = np.zeros_like(u)
    for (ox, oy), a in zip(offsets, coeffs):
        out += a * np.roll(u, (pixel[0] + ox, pixel[1] + oy), axis=(0, 1))
    return out


class _QRFit:
    """Column-normalized QR of a dictionary; solves any leading-column prefix."""

    def __init__(self, cols: np.ndarray, target: np.ndarray, tol: float = 1e-10):
        scale = np.linalg.norm(cols, axis=0)
        self.first = (cols[:, 0], target)
        if np.any(scale == 0):
            self.scale = scale
            self.rank_ok = np.zeros(cols.shape[1], dtype=bool)
            return
        self.scale = scale
        q, r = np.linalg.qr(cols / scale)
        self.r = r
        self.qb = q.conj().T @ target
        diag = np.abs(np.diag(r))
        bad = diag <= tol * diag.max()
        # a prefix is usable only while every pivot so far is nonzero
        self.rank_ok = ~np.cumsum(bad).astype(bool)

    def solve(self, L: int) -> np.ndarray:
        if not self.rank_ok[L - 1]:
            raise RankDeficientError(f"dictionary is rank deficient with {L} columns")
        if L == 1:
            # closed form; exact when the single column equals the target
            c, b = self.first
            return np.array([np.vdot(c, b) / np.vdot(c, c)])
        a = solve_triangular(self.r[:L, :L], self.qb[:L])
        return a / self.scale[:L]


def fit_coefficients(lattice: LatticePair, kind: InputWaveKind, L: int,
                     params: MicroscopeParams, geom: GridGeometry | None = None,
                     fit_window="auto") -> ApproxPlan:
    """Least-squares coefficients for each representative probe.

    The normal system is restricted to ``fit_window`` (``"auto"``: a window
    of 8 x the probe's 99%-energy radius; ``None``: the full grid). Recorded
    errors are always measured on the full grid.
    """
    geom = geom or lattice.geom
    if geom != lattice.geom:
        raise LatticeError("lattice belongs to a different grid")
    if fit_window == "auto":
        fit_window = auto_fit_window(geom, params)
    u = make_input_wave(kind, params, geom).data
    plan = ApproxPlan(lattice, kind, L, params, fit_window=fit_window)
    for rep in lattice.representatives:
        pixel = lattice.probe_pixel(rep)
        target = build_probe_at_pixel(pixel, params, geom).data
        offsets = lattice.neighbor_offsets(rep, L)
        cols, ix, iy = _columns(u, pixel, offsets, fit_window)
        fit = _QRFit(cols, target[np.ix_(ix, iy)].ravel())
        try:
            coeffs = fit.solve(L)
        except RankDeficientError as exc:
            raise RankDeficientError(f"representative probe {rep}: {exc}") from None
        recon = _reconstruct(u, pixel, offsets, coeffs)
        plan.representatives[rep] = Representative(
            rep, offsets, coeffs,
            rel_error(recon, target, "euclidean"),
            rel_error(recon, target, "supremum"),
        )
    return plan


def translate_plan(plan: ApproxPlan, p) -> tuple[np.ndarray, np.ndarray]:
    """Coefficients and absolute input pixels approximating the probe at pixel ``p``."""
    idx = plan.lattice.probe_index(p)
    rep = plan.for_index(idx)
    pos = (np.asarray(plan.lattice.probe_pixel(idx)) + rep.offsets) % np.asarray(plan.lattice.geom.shape)
    return rep.coeffs.copy(), pos


def reconstruct_probe(plan: ApproxPlan, p) -> ComplexField:
    """Sum of coefficient-weighted input translates approximating the probe at pixel ``p``."""
    geom = plan.lattice.geom
    u = make_input_wave(plan.kind, plan.params, geom).data
    coeffs, pos = translate_plan(plan, p)
    out = np.zeros(geom.shape, dtype=np.complex128)
    for (x, y), a in zip(pos, coeffs):
        out += a * np.roll(u, (x, y), axis=(0, 1))
    return ComplexField(geom, out)


def probe_approx_report(geom: GridGeometry, params: MicroscopeParams, kind: InputWaveKind,
                        probe_counts, L_range, f_range, mode: str = "half_shift",
                        inputs=None, fit_window="auto") -> list[dict]:
    """Probe approximation error versus L for each f.

    Each row holds the worst error over the representative probes. Prefixes
    whose dictionary is rank deficient are reported with NaN errors.
    """
    if fit_window == "auto":
        fit_window = auto_fit_window(geom, params)
    u = make_input_wave(kind, params, geom).data
    L_range = sorted(set(int(v) for v in L_range))
    rows = []
    for f in f_range:
        lat = build_lattices(geom, probe_counts[0], probe_counts[1], mode, f, inputs)
        Ls = [L for L in L_range if L <= lat.n_inputs]
        if not Ls:
            continue
        worst = {L: [0.0, 0.0] for L in Ls}
        for rep in lat.representatives:
            pixel = lat.probe_pixel(rep)
            target = build_probe_at_pixel(pixel, params, geom).data
            offsets = lat.neighbor_offsets(rep, Ls[-1])
            cols, ix, iy = _columns(u, pixel, offsets, fit_window)
            fit = _QRFit(cols, target[np.ix_(ix, iy)].ravel())
            full = _columns(u, pixel, offsets, None)[0] if fit_window is not None else cols
            b = target.ravel()
            for L in Ls:
                if not fit.rank_ok[L - 1]:
                    worst[L] = [math.nan, math.nan]
                    continue
                recon = full[:, :L] @ fit.solve(L)
                e = (rel_error(recon, b, "euclidean"), rel_error(recon, b, "supremum"))
                worst[L] = [max(worst[L][0], e[0]), max(worst[L][1], e[1])]
        for L in Ls:
            rows.append({"f": f, "L": L, "euclid_error": worst[L][0], "sup_error": worst[L][1]})
    return rows


# --- simulation -----------------------------------------------------------


def default_window(lattice: LatticePair, prop: PropagatorSpec | None) -> tuple[int, int]:
    """Storage window for propagated inputs: the propagation window, else (X/f, Y/f)."""
    g = lattice.geom
    if prop is not None and prop.window is not None:
        return tuple(prop.window)
    return (g.nx // lattice.f, g.ny // lattice.f)


class InputPropagator:
    """Propagates translates of u and stores each result windowed around its input pixel."""

    def __init__(self, spec: Specimen, params: MicroscopeParams, plan: ApproxPlan,
                 prop: PropagatorSpec | None = None, window=None, batch: int = 16,
                 workers: int = 1):
        geom = plan.lattice.geom
        if spec.geom != geom:
            raise LatticeError("specimen grid differs from lattice grid")
        self.geom = geom
        self.solver = MultisliceSolver(spec, params, prop)
        self.window = tuple(window) if window is not None else default_window(plan.lattice, prop)
        if self.solver.window is not None and tuple(self.solver.window) != self.window:
            raise LatticeError("storage window must equal the propagation window")
        if self.window[0] > geom.nx or self.window[1] > geom.ny:
            raise LatticeError(f"window {self.window} exceeds grid {geom.shape}")
        self.full = self.window == geom.shape
        self.u = make_input_wave(plan.kind, params, geom).data
        self.batch = batch
        self.workers = max(1, int(workers))

    def _run_chunk(self, chunk) -> tuple[list, OpCounters]:
        local = OpCounters()
        if self.solver.window is not None:
            res = [self.solver.solve_window(np.roll(self.u, p, axis=(0, 1)), p, local).data for p in chunk]
        else:
            waves = np.stack([np.roll(self.u, p, axis=(0, 1)) for p in chunk])
            exits = self.solver.solve_batch(waves, local)
            res = [w if self.full else _cut(w, p, self.window) for p, w in zip(chunk, exits)]
        return res, local

    def propagate(self, pixels, counters: OpCounters | None = None) -> dict:
        """Propagated translates keyed by input pixel tuple.

        Chunks of ``batch`` inputs run on ``workers`` threads; the values do
        not depend on the worker count.
        """
        pixels = [tuple(int(v) for v in p) for p in pixels]
        chunks = [pixels[s:s + self.batch] for s in range(0, len(pixels), self.batch)]
        if self.workers > 1 and len(chunks) > 1:
            with ThreadPoolExecutor(self.workers) as pool:
                done = list(pool.map(self._run_chunk, chunks))
        else:
            done = [self._run_chunk(c) for c in chunks]
        out = {}
        for chunk, (res, local) in zip(chunks, done):
            out.update(zip(chunk, res))
            if counters is not None:
                counters.merge(local)
        return out


def _cut(w: np.ndarray, center, window) -> np.ndarray:
    ix = window_indices(w.shape[0], center[0], window[0])
    iy = window_indices(w.shape[1], center[1], window[1])
    return w[np.ix_(ix, iy)]


def _add_shifted(out: np.ndarray, src: np.ndarray, dx: int, dy: int, a: complex) -> None:
    """out[x + dx, y + dy] += a * src[x, y] on the overlap (no wrap)."""
    wx, wy = out.shape
    x0, x1 = max(0, dx), min(wx, wx + dx)
    y0, y1 = max(0, dy), min(wy, wy + dy)
    if x0 >= x1 or y0 >= y1:
        return
    out[x0:x1, y0:y1] += a * src[x0 - dx:x1 - dx, y0 - dy:y1 - dy]


def combine(plan: ApproxPlan, index, store: dict, window, counters: OpCounters | None = None) -> ComplexField:
    """Exit wave at probe ``index`` from stored propagated inputs.

    With a full-grid window the result is the full grid; otherwise it is the
    window centred on the probe, with ``origin`` set accordingly.
    """
    lat = plan.lattice
    g = lat.geom
    rep = plan.for_index(index)
    p = np.asarray(lat.probe_pixel(index))
    pos = (p + rep.offsets) % np.asarray(g.shape)
    wx, wy = window
    if (wx, wy) == g.shape:
        out = np.zeros(g.shape, dtype=np.complex128)
        for (x, y), a in zip(pos, rep.coeffs):
            out += a * store[(int(x), int(y))]
        result = ComplexField(g, out)
    else:
        out = np.zeros((wx, wy), dtype=np.complex128)
        for (x, y), a in zip(pos, rep.coeffs):
            dx = int(wrapped_offset(x - p[0], g.nx))
            dy = int(wrapped_offset(y - p[1], g.ny))
            _add_shifted(out, store[(int(x), int(y))], dx, dy, a)
        origin = ((p[0] - wx // 2) % g.nx, (p[1] - wy // 2) % g.ny)
        result = ComplexField(g.sub(wx, wy), out, (int(origin[0]), int(origin[1])))
    if counters is not None:
        counters.combination_mac_count += len(rep.coeffs) * wx * wy
    return result


def lma_simulate(
    spec: Specimen,
    params: MicroscopeParams,
    geom: GridGeometry,
    lattice: LatticePair,
    plan: ApproxPlan,
    probes=None,
    schedule=None,
    prop: PropagatorSpec | None = None,
    counters: OpCounters | None = None,
    window=None,
    store: dict | None = None,
    workers: int = 1,
) -> list[ComplexField]:
    """Exit waves for probe pixels ``probes`` (default: the whole probe lattice).

    Without a schedule every needed input is propagated first and the
    combinations follow. With a ``scheduler.Partition`` the probe sets are
    processed in order, keeping only the propagated inputs of the current set
    plus those shared with the next one. ``store``, if given, receives every
    propagated input (unscheduled runs only) and is reused when already filled.
    """
    if lattice != plan.lattice or geom != lattice.geom:
        raise LatticeError("plan, lattice and grid do not belong together")
    counters = counters if counters is not None else OpCounters()
    if probes is None:
        indices = lattice.all_probe_indices()
    else:
        indices = [lattice.probe_index(p) for p in probes]
    runner = InputPropagator(spec, params, plan, prop, window, workers=workers)
    L = plan.L
    results = {}
    if schedule is None:
        cache = store if store is not None else {}
        needed = []
        seen = set(cache)
        for idx in indices:
            for x, y in lattice.neighbors(idx, L):
                key = (int(x), int(y))
                if key not in seen:
                    seen.add(key)
                    needed.append(key)
        cache.update(runner.propagate(needed, counters))
        for idx in indices:
            results[idx] = combine(plan, idx, cache, runner.window, counters)
    else:
        if schedule.memory_bound < L:
            raise ValueError(f"memory bound {schedule.memory_bound} is below L={L}")
        wanted = set(indices)
        sets = [[tuple(i) for i in s if tuple(i) in wanted] for s in schedule.sets]
        sets = [s for s in sets if s]
        covered = {i for s in sets for i in s}
        if covered != wanted:
            raise ValueError("schedule does not cover the requested probes")
        cache: dict = {}
        for j, pset in enumerate(sets):
            need = _input_keys(lattice, pset, L)
            missing = [k for k in need if k not in cache]
            cache.update(runner.propagate(missing, counters))
            for idx in pset:
                results[idx] = combine(plan, idx, cache, runner.window, counters)
            keep = set(_input_keys(lattice, sets[j + 1], L)) & set(need) if j + 1 < len(sets) else set()
            cache = {k: v for k, v in cache.items() if k in keep}
    return [results[idx] for idx in indices]


def _input_keys(lattice: LatticePair, indices, L: int) -> list:
    keys, seen = [], set()
    for idx in indices:
        for x, y in lattice.neighbors(idx, L):
            k = (int(x), int(y))
            if k not in seen:
                seen.add(k)
                keys.append(k)
    return keys


# --- plan serialization ----------------------------------------------------

_PLAN_MAGIC = "LMAPLAN"
_PLAN_VERSION = 1


def save_plan(plan: ApproxPlan, path) -> None:
    lat = plan.lattice
    g = lat.geom
    reps = [plan.representatives[r] for r in lat.representatives]
    meta = {
        "geometry": [g.nx, g.ny, g.lx, g.ly],
        "params": [plan.params.lam, plan.params.cs, plan.params.z,
                   plan.params.alpha_max, plan.params.sigma],
        "lattice": {"probe_counts": list(lat.probe_counts), "input_counts": list(lat.input_counts),
                    "mode": lat.mode, "f": lat.f},
        "kind": {"tag": plan.kind.tag, "n": plan.kind.n, "sigma_g": plan.kind.sigma_g},
        "L": plan.L,
        "fit_window": list(plan.fit_window) if plan.fit_window else None,
        "representatives": [
            {"index": list(r.index), "err_euclid": r.err_euclid, "err_sup": r.err_sup} for r in reps
        ],
    }
    header = f"{_PLAN_MAGIC} {_PLAN_VERSION} {json.dumps(meta, separators=(',', ':'))}\n"
    body = b"".join(
        np.ascontiguousarray(r.offsets, dtype="<i8").tobytes()
        + np.ascontiguousarray(r.coeffs, dtype="<c16").tobytes()
        for r in reps
    )
    Path(path).write_bytes(header.encode("ascii") + body)


def load_plan(path, verify: bool = True, tol: float = 1e-9) -> ApproxPlan:
    """Read a plan; with ``verify`` the recorded fit errors are recomputed and checked."""
    raw = Path(path).read_bytes()
    nl = raw.find(b"\n")
    head = raw[:nl].decode("ascii", errors="replace") if nl >= 0 else ""
    parts = head.split(" ", 2)
    if len(parts) != 3 or parts[0] != _PLAN_MAGIC:
        raise ValueError("not an LMAPLAN file")
    if int(parts[1]) != _PLAN_VERSION:
        raise ValueError(f"unsupported plan version {parts[1]}")
    meta = json.loads(parts[2])
    geom = GridGeometry(*meta["geometry"])
    params = MicroscopeParams(*meta["params"])
    lm = meta["lattice"]
    lat = build_lattices(geom, *lm["probe_counts"], lm["mode"], lm["f"], tuple(lm["input_counts"]))
    kind = InputWaveKind(**meta["kind"])
    L = meta["L"]
    body = raw[nl + 1:]
    per = L * 16 + L * 16
    if len(body) != per * len(meta["representatives"]):
        raise ValueError("plan payload size does not match header")
    plan = ApproxPlan(lat, kind, L, params,
                      fit_window=tuple(meta["fit_window"]) if meta["fit_window"] else None)
    for k, rm in enumerate(meta["representatives"]):
        chunk = body[k * per:(k + 1) * per]
        offsets = np.frombuffer(chunk[:L * 16], dtype="<i8").reshape(L, 2).astype(np.int64)
        coeffs = np.frombuffer(chunk[L * 16:], dtype="<c16").astype(np.complex128)
        idx = tuple(rm["index"])
        plan.representatives[idx] = Representative(idx, offsets, coeffs, rm["err_euclid"], rm["err_sup"])
    if verify:
        u = make_input_wave(kind, params, geom).data
        for idx, r in plan.representatives.items():
            pixel = lat.probe_pixel(idx)
            target = build_probe_at_pixel(pixel, params, geom).data
            recon = _reconstruct(u, pixel, r.offsets, r.coeffs)
            e = rel_error(recon, target, "euclidean")
            if abs(e - r.err_euclid) > tol:
                raise ValueError(f"recorded error {r.err_euclid} for {idx} does not verify ({e})")
    return plan


def lma_recompute(spec: Specimen, params: MicroscopeParams, plan: ApproxPlan, rplan, store: dict,
                  prop: PropagatorSpec | None = None, counters: OpCounters | None = None,
                  window=None, workers: int = 1) -> dict:
    """Redo the work of a ``scheduler.RecomputePlan`` on the edited specimen.

    The propagated inputs in ``store`` listed in ``rplan.inputs_to_redo`` are
    replaced in place; returns the new exit waves of ``rplan.probes_to_redo``
    keyed by probe index. Stored inputs that no requested probe uses are left
    as they were.
    """
    runner = InputPropagator(spec, params, plan, prop, window, workers=workers)
    store.update(runner.propagate(rplan.inputs_to_redo, counters))
    return {idx: combine(plan, idx, store, runner.window, counters) for idx in rplan.probes_to_redo}
