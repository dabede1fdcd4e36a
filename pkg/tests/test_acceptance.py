"""End-to-end acceptance criteria, one test per criterion.

Each test records a PASS / FAIL line that is printed in the terminal summary.
"""

import time
import warnings

import numpy as np
import pytest

from lmastem.config import RunConfig
from lmastem.costs import crossover_min_f
from lmastem.detect import NyquistWarning, assemble_image, detect_all, standard_detectors
from lmastem.grid import ComplexField, GridGeometry, rel_error
from lmastem.inputwaves import InputWaveKind, gaussian_width, modulation_matrices, trig_poly_phi
from lmastem.lma import build_lattices, fit_coefficients, lma_simulate, neighbor_set, probe_approx_report
from lmastem.multislice import MultisliceSolver, OpCounters, PropagatorSpec, multislice_solve
from lmastem.optics import MicroscopeParams, build_probe_at_pixel
from lmastem.prism import build_frequency_set, prism_simulate
from lmastem.run import recompute_demo
from lmastem.scheduler import (
    STRATEGIES,
    InputUnion,
    minimum_cost,
    partition_build,
    partition_cost,
)
from lmastem.specimen import synth_specimen

from conftest import LAM, SIGMA, criterion, random_atoms

pytestmark = pytest.mark.acceptance

G64 = GridGeometry(64, 64, 12.8, 12.8)
G128 = GridGeometry(128, 128, 12.8, 12.8)


def _record(number, ok, detail):
    criterion(number, "PASS" if ok else "FAIL", detail)
    assert ok, detail


@pytest.fixture(scope="module")
def p():
    return MicroscopeParams(LAM, -2000.0, 100.0, 0.026, SIGMA)


@pytest.fixture(scope="module")
def spec1():
    return synth_specimen(random_atoms(G64, 20, 8.0, 0), G64, 2.0, 4)


def _nine_probes():
    lat = build_lattices(G64, 8, 8, "aligned")
    return lat, [lat.probe_pixel(i) for i in [(1, 1), (4, 1), (6, 2), (2, 4), (4, 4),
                                                (7, 5), (0, 7), (3, 6), (5, 7)]]


def _reference(spec, params, pixels, prop=None):
    solver = MultisliceSolver(spec, params, prop)
    return [solver.solve(build_probe_at_pixel(q, params, spec.geom)) for q in pixels]


def test_criterion_01_prism_identity(p, spec1):
    t0 = time.perf_counter()
    _, pixels = _nine_probes()
    exits = prism_simulate(spec1, p, G64, 1, pixels, crop=False)
    ref = _reference(spec1, p, pixels)
    err = max(rel_error(a, b, "euclidean") for a, b in zip(exits, ref))
    dt = time.perf_counter() - t0
    _record(1, err < 1e-8 and dt < 10, f"PRISM f=1 vs multislice max error {err:.2e}, {dt:.2f} s")


def test_criterion_02_lma_degenerate(p, spec1):
    t0 = time.perf_counter()
    lat, pixels = _nine_probes()
    lat = build_lattices(G64, 8, 8, "aligned", 1, (8, 8))
    plan = fit_coefficients(lat, InputWaveKind.probe(), 1, p, fit_window=None)
    exits = lma_simulate(spec1, p, G64, lat, plan, probes=pixels)
    ref = _reference(spec1, p, pixels)
    err = max(rel_error(a, b, "euclidean") for a, b in zip(exits, ref))
    dt = time.perf_counter() - t0
    _record(2, err < 1e-10 and dt < 10, f"LMA probe kind, L=1 vs multislice max error {err:.2e}, {dt:.2f} s")


def test_criterion_03_linearity_unitarity(p):
    g = GridGeometry(32, 32, 6.4, 6.4)
    rng = np.random.default_rng(7)
    spec = synth_specimen(random_atoms(g, 8, 8.0, 3), g, 2.0, 4)
    lin = 0.0
    for _ in range(5):
        a, b = rng.normal(size=2) + 1j * rng.normal(size=2)
        u = ComplexField(g, rng.normal(size=(32, 32)) + 1j * rng.normal(size=(32, 32)))
        v = ComplexField(g, rng.normal(size=(32, 32)) + 1j * rng.normal(size=(32, 32)))
        lhs = multislice_solve(ComplexField(g, a * u.data + b * v.data), spec, p)
        rhs = a * multislice_solve(u, spec, p).data + b * multislice_solve(v, spec, p).data
        lin = max(lin, rel_error(lhs.data, rhs, "euclidean"))
    deep = synth_specimen(random_atoms(g, 30, 32.0, 4), g, 2.0, 16)
    w = ComplexField(g, rng.normal(size=(32, 32)) + 1j * rng.normal(size=(32, 32)))
    drift = abs(multislice_solve(w, deep, p).norm() / w.norm() - 1)
    _record(3, lin < 1e-12 and drift < 1e-10,
            f"linearity residual {lin:.2e}, norm drift over 16 slices {drift:.2e}")


def test_criterion_04_fit_monotonicity(p):
    worst, nan = 0.0, False
    kinds = [InputWaveKind.probe(), InputWaveKind.trig_tensor(13), InputWaveKind.gaussian(gaussian_width(p))]
    for kind in kinds:
        for mode in ("half_shift", "aligned"):
            rows = probe_approx_report(G128, p, kind, (32, 32), range(1, 65), [1, 2], mode, fit_window=None)
            for f in (1, 2):
                e = np.array([r["euclid_error"] for r in rows if r["f"] == f])
                nan |= bool(np.isnan(e).any()) or len(e) != 64
                # errors are relative and at most 1; rounding alone gives rises of ~1e-16
                worst = max(worst, float(np.max(np.diff(e))))
    exact = probe_approx_report(G128, p, InputWaveKind.probe(), (32, 32), [1], [1], "aligned", fit_window=None)
    e0 = exact[0]["euclid_error"]
    ok = worst <= 1e-12 and not nan and e0 == 0.0
    _record(4, ok, f"largest rise in error over L=1..64: {worst:.1e} (<= 1e-12 rounding); "
                   f"aligned probe L=1 error {e0}")


def test_criterion_05_gaussian_width(p):
    s = gaussian_width(p)
    _record(5, abs(s - 0.482) < 1e-3, f"sigma_g = {s:.6f} A")


def test_criterion_06_crossover():
    f = crossover_min_f(2048, 2048, 25, 25)
    _record(6, f == 4, f"minimal integer f for 2048^2 grid and 25x25 kernel: {f}")


def test_criterion_07_counters(p, spec1):
    lat, pixels = _nine_probes()
    cp = OpCounters()
    prism_simulate(spec1, p, G64, 1, pixels, counters=cp)
    nk = len(build_frequency_set(G64, p, 1))
    ok_prism = cp.multislice_calls == nk and cp.fft_count == 2 * 4 * nk
    lines = [f"PRISM calls {cp.multislice_calls} = |K_f| {nk}"]
    ok_lma = True
    for f, kind, L in [(1, InputWaveKind.probe(), 1), (2, InputWaveKind.gaussian(gaussian_width(p)), 9)]:
        lat2 = build_lattices(G64, 8, 8, "half_shift" if f > 1 else "aligned", f)
        plan = fit_coefficients(lat2, kind, L, p, fit_window=None)
        cl = OpCounters()
        lma_simulate(spec1, p, G64, lat2, plan, probes=pixels, counters=cl)
        needed = {x for q in pixels for x in neighbor_set(q, lat2, L)}
        ok_lma &= cl.multislice_calls == len(needed) and cl.fft_count == 2 * 4 * len(needed)
        lines.append(f"LMA f={f} calls {cl.multislice_calls} = needed {len(needed)}")
    _record(7, ok_prism and ok_lma, "; ".join(lines) + "; fft_count = 2N per solve")


def test_criterion_08_partitions(p):
    g = GridGeometry(48, 48, 9.6, 9.6)
    spec = synth_specimen(random_atoms(g, 12, 4.0, 8), g, 2.0, 2)
    lat = build_lattices(g, 24, 24)
    plan = fit_coefficients(lat, InputWaveKind.gaussian(gaussian_width(p)), 9, p)
    pix = [(a, b) for b in range(24) for a in range(24)]
    probes = [lat.probe_pixel(i) for i in pix]
    iu = InputUnion(lat, 9)
    lo = minimum_cost(pix, lat, 9)
    free = lma_simulate(spec, p, g, lat, plan, probes=probes)
    ok, notes = True, []
    for M in (9, 18, 36):
        for s in STRATEGIES:
            part = partition_build(s, pix, lat, 9, M)
            bound_ok = max(len(iu.union(x)) for x in part.sets) <= M
            cost = partition_cost(part, lat, 9)
            c = OpCounters()
            sched = lma_simulate(spec, p, g, lat, plan, probes=probes, schedule=part, counters=c)
            same = all(np.array_equal(a.data, b.data) for a, b in zip(free, sched))
            ok &= bound_ok and cost >= lo and same and c.multislice_calls == cost
            notes.append(f"{s}/M={M}:{cost}")
    _record(8, ok, f"minimum {lo}; costs " + " ".join(notes) + "; scheduled outputs bit-identical")


def test_criterion_09_recompute(tmp_path):
    cfg = RunConfig.from_dict({
        "seed": 2,
        "geometry": {"nx": 128, "ny": 128, "lx": 12.8, "ly": 12.8},
        "specimen": {"n_slices": 4, "eps": 2.0, "random_atoms": {"count": 40}},
        "probes": {"counts": [32, 32]},
        "solver": "lma",
        "propagator": {"variant": "realspace", "kernel_size": [7, 7], "window": [32, 32]},
        "lma": {"kind": "gaussian", "L": 9, "f": 1},
        "recompute": {"atom": 0, "shift": [0.3, 0.0]},
    })
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", NyquistWarning)
        rep = recompute_demo(cfg, tmp_path, workers=4)
    err = max(e["euclid_error"] for e in rep["errors"])
    fi = rep["inputs_to_redo"] / rep["inputs_total"]
    fp = rep["probes_to_redo"] / rep["probes_total"]
    ok = err < 1e-9 and fi < 0.5 and fp < 0.5 and len(rep["errors"]) == 3
    _record(9, ok, f"max image error {err:.2e}; inputs redone {fi:.1%}, probes redone {fp:.1%}")


def test_criterion_10_modulation_algebra():
    inv = max(np.abs(modulation_matrices(n).m @ modulation_matrices(n).m_inv - np.eye(2 * n + 1)).max()
              for n in range(1, 17))
    t = np.linspace(0, 2 * np.pi, 512, endpoint=False)
    res = 0.0
    for n in range(1, 17):
        k = np.arange(-n, n + 1)
        elem = np.exp(1j * np.outer(k, t))
        trans = np.stack([trig_poly_phi(n, t - 2 * np.pi * j / (2 * n + 1)) for j in k])
        mm = modulation_matrices(n)
        res = max(res, np.abs(mm.m_inv @ trans - elem).max(), np.abs(mm.m @ elem - trans).max())
    _record(10, inv < 1e-10 and res < 1e-8, f"max |M M^-1 - I| {inv:.1e}; change-of-basis residual {res:.1e}")


def test_criterion_11_output_error(p):
    # strong, narrow atoms so that the high-angle detector sees real scattering
    spec = synth_specimen(random_atoms(G128, 60, 16.0, 11, amplitude=1000.0, width=0.15), G128, 2.0, 8)
    lat = build_lattices(G128, 64, 64, "half_shift", 2)
    plan = fit_coefficients(lat, InputWaveKind.trig_tensor(13), 400, p, fit_window=None)
    fit_sup = plan.max_error[1]
    idx = [(a, b) for b in range(24, 40) for a in range(24, 40)]
    pixels = [lat.probe_pixel(i) for i in idx]
    dets = [d for d in standard_detectors() if d.name in ("BF", "HAADF")]
    exits = lma_simulate(spec, p, G128, lat, plan, probes=pixels, window=G128.shape, workers=4)
    ref = _reference(spec, p, pixels)
    with warnings.catch_warnings():
        # the HAADF outer edge lies past this grid's Nyquist angle
        warnings.simplefilter("ignore", NyquistWarning)
        got = [detect_all(e, dets, p.lam) for e in exits]
        want = [detect_all(e, dets, p.lam) for e in ref]
    errs = {}
    for k, d in enumerate(dets):
        a = assemble_image([r[k] for r in got], [(a - 24, b - 24) for a, b in idx], (16, 16), lat.probe_spacing)
        b = assemble_image([r[k] for r in want], [(a - 24, b - 24) for a, b in idx], (16, 16), lat.probe_spacing)
        errs[d.name] = rel_error(a.values, b.values, "euclidean")
    worst = max(errs.values())
    detail = (f"fit sup error {fit_sup:.3f}; image errors "
              + ", ".join(f"{k} {v:.4f}" for k, v in errs.items()))
    if worst <= fit_sup:
        criterion(11, "PASS", detail)
    elif worst <= 2 * fit_sup:
        criterion(11, "REPORTED", detail + " (above 1x fit error, within 2x)")
    else:
        criterion(11, "FAIL", detail)
    assert worst <= 2 * fit_sup, detail
