"""End-to-end experiments driven by a ``RunConfig``."""

from __future__ import annotations

import csv
import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from . import costs
from .config import ConfigError, RunConfig
from .detect import assemble_image, detect_all, save_image, save_pgm
from .grid import rel_error
from .lma import (
    ApproxPlan,
    build_lattices,
    default_window,
    fit_coefficients,
    lma_recompute,
    lma_simulate,
    probe_approx_report,
    save_plan,
)
from .multislice import MultisliceSolver, OpCounters
from .optics import build_probe_at_pixel
from .prism import build_frequency_set, prism_simulate
from .scheduler import (
    cost_report,
    minimum_cost,
    partition_build,
    partition_cost,
    recompute_plan,
    save_partition_pgm,
)
from .specimen import AtomSpec, Specimen, replace_atoms

log = logging.getLogger(__name__)


@dataclass
class SimulationResult:
    images: dict
    counters: OpCounters
    modeled: dict
    indices: list
    plan: ApproxPlan | None = None
    fit_rows: list = field(default_factory=list)
    store: dict | None = None
    seconds: float = 0.0


def _images(cfg: RunConfig, indices, readings, prior=None) -> dict:
    dets = cfg.detectors()
    counts = cfg["probes"]["counts"]
    g = cfg.geometry()
    spacing = (g.lx / counts[0], g.ly / counts[1])
    out = {}
    for k, d in enumerate(dets):
        out[d.name] = assemble_image([r[k] for r in readings], indices, counts, spacing,
                                     prior[d.name] if prior else None, d.name)
    return out


def _multislice(cfg: RunConfig, spec: Specimen, indices, counters: OpCounters, workers: int):
    g, params = cfg.geometry(), cfg.params()
    lat = build_lattices(g, *cfg["probes"]["counts"], "aligned")
    solver = MultisliceSolver(spec, params, cfg.propagator())
    dets = cfg.detectors()

    def run(chunk):
        local = OpCounters()
        res = []
        for idx in chunk:
            pixel = lat.probe_pixel(idx)
            exit = solver.solve(build_probe_at_pixel(pixel, params, g), local, center=pixel)
            res.append(detect_all(exit, dets, params.lam))
        return res, local

    chunks = [indices[s:s + 16] for s in range(0, len(indices), 16)]
    if workers > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(workers) as pool:
            done = list(pool.map(run, chunks))
    else:
        done = [run(c) for c in chunks]
    readings = []
    for res, local in done:
        readings.extend(res)
        counters.merge(local)
    return readings


def simulate(cfg: RunConfig, workers: int = 1, spec: Specimen | None = None, keep_store: bool = False) -> SimulationResult:
    """Run the configured solver over the requested probes and detect every exit wave."""
    t0 = time.perf_counter()
    g, params = cfg.geometry(), cfg.params()
    spec = spec if spec is not None else cfg.specimen()
    indices = cfg.probe_indices()
    dets = cfg.detectors()
    counters = OpCounters()
    prop = cfg.propagator()
    n, xy = spec.n_slices, (g.nx, g.ny)
    method = cfg["solver"]
    log.info("simulating %d probes with %s on a %dx%d grid", len(indices), method, g.nx, g.ny)
    plan, rows, store = None, [], None
    if method == "multislice":
        readings = _multislice(cfg, spec, indices, counters, workers)
        t = len(indices) * costs.t_multislice(n, *xy)
        modeled = {"multislice_calls": len(indices),
                   "flops": {"propagation": t, "combination": 0.0, "total": t}}
    elif method == "prism":
        f = cfg["prism"]["f"]
        lat = build_lattices(g, *cfg["probes"]["counts"], "aligned")
        pixels = [lat.probe_pixel(i) for i in indices]
        exits = prism_simulate(spec, params, g, f, pixels, cfg["prism"]["crop"], prop, counters)
        readings = [detect_all(e, dets, params.lam) for e in exits]
        nk = len(build_frequency_set(g, params, f))
        modeled = {"multislice_calls": nk, "flops": costs.t_prism(nk, len(indices), n, *xy, f)}
    else:
        lm = cfg["lma"]
        lat = build_lattices(g, *cfg["probes"]["counts"], lm["lattice_mode"], lm["f"],
                             tuple(lm["inputs"]) if lm["inputs"] else None)
        fit_window = lm["fit_window"]
        if isinstance(fit_window, list):
            fit_window = tuple(fit_window)
        plan = fit_coefficients(lat, cfg.input_kind(), lm["L"], params, g, fit_window)
        log.info("fitted %d representative(s); worst errors %.3g (euclidean) %.3g (sup)",
                 len(plan.representatives), *plan.max_error)
        rows = [{"representative": f"{r.index[0]},{r.index[1]}", "err_euclid": r.err_euclid,
                 "err_sup": r.err_sup} for r in plan.representatives.values()]
        schedule = None
        if lm["memory_bound"] is not None:
            schedule = partition_build(lm["strategy"], indices, lat, lm["L"], lm["memory_bound"],
                                       cfg["seed"] if lm["strategy"] == "greedy" else None)
        window = tuple(lm["window"]) if lm["window"] else None
        store = {} if keep_store and schedule is None else None
        pixels = [lat.probe_pixel(i) for i in indices]
        exits = lma_simulate(spec, params, g, lat, plan, pixels, schedule, prop, counters,
                             window, store, workers)
        readings = [detect_all(e, dets, params.lam) for e in exits]
        needed = minimum_cost(indices, lat, lm["L"])
        calls = partition_cost(schedule, lat, lm["L"]) if schedule else needed
        wx, wy = window or default_window(lat, prop)
        kernel = prop.kernel_size if prop.variant == "realspace" else None
        modeled = {"multislice_calls": calls,
                   "flops": costs.t_lma(calls, len(indices), lm["L"], n, *xy, wx, wy, kernel)}
    images = _images(cfg, indices, readings)
    log.info("done: %d multislice runs", counters.multislice_calls)
    return SimulationResult(images, counters, modeled, indices, plan, rows, store,
                            time.perf_counter() - t0)


def write_simulation(cfg: RunConfig, res: SimulationResult, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    for name, img in res.images.items():
        save_image(img, out / f"{name}.lmaimg")
        save_pgm(img, out / f"{name}.pgm")
    report = {
        "solver": cfg["solver"],
        "probes": len(res.indices),
        "measured": res.counters.as_dict(),
        "modeled": res.modeled,
    }
    (out / "counters.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    if res.plan is not None:
        save_plan(res.plan, out / "plan.lmaplan")
        _write_csv(out / "fit_errors.csv", res.fit_rows)


def _write_csv(path: Path, rows: list) -> None:
    with open(path, "w", newline="") as fh:
        if not rows:
            return
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})


def compare_images(a: dict, b: dict) -> list[dict]:
    """Relative errors of ``a`` against reference ``b`` per shared detector name."""
    rows = []
    for name in sorted(set(a) & set(b)):
        va, vb = a[name].values, b[name].values
        if va.shape != vb.shape:
            raise ValueError(f"image {name}: shapes {va.shape} and {vb.shape} differ")
        rows.append({"detector": name,
                     "euclid_error": rel_error(va, vb, "euclidean"),
                     "sup_error": rel_error(va, vb, "supremum")})
    return rows


def probe_approx(cfg: RunConfig, out: Path) -> list[dict]:
    lm, pa = cfg["lma"], cfg["probe_approx"]
    rows = probe_approx_report(cfg.geometry(), cfg.params(), cfg.input_kind(), cfg["probes"]["counts"],
                               pa["L"], pa["f"], lm["lattice_mode"],
                               tuple(lm["inputs"]) if lm["inputs"] else None,
                               tuple(lm["fit_window"]) if isinstance(lm["fit_window"], list) else lm["fit_window"])
    out.mkdir(parents=True, exist_ok=True)
    _write_csv(out / "probe_approx.csv", rows)
    return rows


def partition_report(cfg: RunConfig, out: Path) -> str:
    g, lm, pr = cfg.geometry(), cfg["lma"], cfg["partition"]
    lat = build_lattices(g, *cfg["probes"]["counts"], lm["lattice_mode"], lm["f"],
                         tuple(lm["inputs"]) if lm["inputs"] else None)
    indices = cfg.probe_indices()
    out.mkdir(parents=True, exist_ok=True)
    text = []
    for L in pr["L"]:
        M = pr["memory_bound"] or 2 * L
        parts = {}
        for s in pr["strategies"]:
            parts[s] = partition_build(s, indices, lat, L, M, cfg["seed"] if s == "greedy" else None)
            save_partition_pgm(parts[s], lat.probe_counts, out / f"partition_L{L}_{s}.pgm")
        text.append(cost_report(parts, lat, L, indices))
    report = "\n".join(text)
    (out / "partition_report.txt").write_text(report)
    return report


def recompute_demo(cfg: RunConfig, out: Path, workers: int = 1) -> dict:
    """Move one atom, recompute only the affected work and check against a full run."""
    if cfg["solver"] != "lma":
        raise ConfigError("recompute-demo needs solver: lma")
    if cfg["lma"]["memory_bound"] is not None:
        raise ConfigError("recompute-demo keeps every propagated input; unset lma.memory_bound")
    old = cfg.specimen()
    atoms = list(old.atoms or ())
    k = cfg["recompute"]["atom"]
    if not 0 <= k < len(atoms):
        raise ConfigError(f"recompute.atom={k} but the specimen has {len(atoms)} atoms")
    dx, dy = cfg["recompute"]["shift"]
    a = atoms[k]
    atoms[k] = AtomSpec((a.x + dx) % old.geom.lx, (a.y + dy) % old.geom.ly, a.z, a.amplitude, a.width)
    new = replace_atoms(old, atoms)

    t0 = time.perf_counter()
    base = simulate(cfg, workers, old, keep_store=True)
    lat, plan, params = base.plan.lattice, base.plan, cfg.params()
    rplan = recompute_plan(old, new, lat, plan, params, cfg.propagator(), base.indices)
    c_part = OpCounters()
    t1 = time.perf_counter()
    window = tuple(cfg["lma"]["window"]) if cfg["lma"]["window"] else None
    exits = lma_recompute(new, params, plan, rplan, base.store, cfg.propagator(), c_part, window, workers)
    redo = list(exits)
    readings = [detect_all(exits[i], cfg.detectors(), params.lam) for i in redo]
    partial = _images(cfg, redo, readings, prior=base.images) if redo else base.images
    t_part = time.perf_counter() - t1
    full = simulate(cfg, workers, new)
    errors = compare_images(partial, full.images)
    report = {
        "changed_pixels": int(rplan.changed_region.sum()),
        "inputs_to_redo": len(rplan.inputs_to_redo),
        "inputs_total": lat.n_inputs,
        "probes_to_redo": len(rplan.probes_to_redo),
        "probes_total": len(base.indices),
        "multislice_calls_partial": c_part.multislice_calls,
        "multislice_calls_full": full.counters.multislice_calls,
        "seconds_partial": t_part,
        "seconds_full": full.seconds,
        "seconds_initial": t1 - t0,
        "errors": errors,
    }
    out.mkdir(parents=True, exist_ok=True)
    (out / "recompute_report.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    return report


def crossover_report(nx: int, ny: int, k1: int, k2: int) -> dict:
    bound = costs.crossover_bound(nx, ny, k1, k2)
    fmin = costs.crossover_min_f(nx, ny, k1, k2)
    return {"nx": nx, "ny": ny, "k1": k1, "k2": k2, "bound": bound, "min_f": fmin,
            "approx_bound": costs.crossover_bound_approx(nx, ny, k1, k2)}


def summary_lines(res: SimulationResult) -> list[str]:
    lines = [f"probes={len(res.indices)} seconds={res.seconds:.3f}"]
    for k, v in res.counters.as_dict().items():
        lines.append(f"{k}={v}")
    lines.append(f"modeled_multislice_calls={res.modeled['multislice_calls']}")
    for k, v in res.modeled["flops"].items():
        lines.append(f"modeled_flops_{k}={v:.6g}")
    return lines
