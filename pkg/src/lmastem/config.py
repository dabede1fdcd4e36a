"""Run configuration: YAML loading, defaults and validation.

Unknown keys are errors so a misspelt option never silently falls back to
its default. Every default lives in ``DEFAULTS`` below.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import yaml

from .detect import DetectorConfig, standard_detectors
from .grid import GridGeometry
from .inputwaves import InputWaveKind, gaussian_width, trig_degree_from_probe
from .multislice import PropagatorSpec
from .optics import MicroscopeParams, electron_wavelength, interaction_constant
from .specimen import AtomSpec, Specimen, load_specimen, synth_specimen


class ConfigError(ValueError):
    pass


DEFAULTS = {
    "seed": 0,
    "geometry": {"nx": 64, "ny": 64, "lx": 12.8, "ly": 12.8},
    # voltage (V) sets wavelength and sigma unless they are given explicitly
    "microscope": {"voltage": 200000.0, "wavelength": None, "sigma": None,
                   "cs": -2000.0, "defocus": 100.0, "alpha_max": 0.026},
    "specimen": {
        "file": None,
        "eps": 2.0,
        "n_slices": 4,
        # explicit atoms: [x, y, z, amplitude, width]
        "atoms": None,
        # random atoms drawn from the run seed when no explicit list is given
        "random_atoms": {"count": 20, "amplitude": 300.0, "width": 0.3},
    },
    "propagator": {"variant": "fourier", "kernel_size": None, "window": None, "bandlimit": False},
    "probes": {"counts": [16, 16], "subset": None},
    "solver": "multislice",
    "prism": {"f": 1, "crop": False},
    "lma": {
        "kind": "probe",
        "n": None,
        "sigma_g": None,
        "L": 9,
        "lattice_mode": "half_shift",
        "f": 1,
        "inputs": None,
        "window": None,
        "fit_window": "auto",
        "memory_bound": None,
        "strategy": "row_by_row",
    },
    "detectors": None,
    "probe_approx": {"L": [1, 4, 9, 16, 25], "f": [1, 2]},
    "partition": {"L": [9], "memory_bound": None, "strategies": ["row_by_row", "rectangles", "greedy"]},
    "recompute": {"atom": 0, "shift": [0.5, 0.0]},
    "output": {"dir": "out"},
}

_FREE_FORM = {"atoms", "subset", "kernel_size", "window", "inputs", "counts", "L", "f",
              "strategies", "shift", "detectors", "fit_window"}


def _merge(base: dict, override: dict, path: str) -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        where = f"{path}.{key}" if path else key
        if key not in base:
            raise ConfigError(f"unknown key '{where}'")
        if isinstance(base[key], dict) and key not in _FREE_FORM:
            if not isinstance(value, dict):
                raise ConfigError(f"'{where}' must be a mapping")
            out[key] = _merge(base[key], value, where)
        else:
            out[key] = value
    return out


@dataclass
class RunConfig:
    raw: dict
    base_dir: Path

    @classmethod
    def from_dict(cls, data: dict | None, base_dir=".") -> "RunConfig":
        data = data or {}
        if not isinstance(data, dict):
            raise ConfigError("configuration must be a mapping")
        cfg = cls(_merge(DEFAULTS, data, ""), Path(base_dir))
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path) -> "RunConfig":
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file {path} not found")
        try:
            data = yaml.safe_load(path.read_text())
        except yaml.YAMLError as exc:
            raise ConfigError(f"cannot parse {path}: {exc}") from None
        return cls.from_dict(data, path.parent)

    def __getitem__(self, key):
        return self.raw[key]

    # --- typed views -----------------------------------------------------

    def validate(self) -> None:
        self.geometry()
        self.params()
        self.propagator()
        self.detectors()
        if self.raw["solver"] not in ("multislice", "prism", "lma"):
            raise ConfigError(f"solver: unknown solver {self.raw['solver']!r}")
        f = self.raw["prism"]["f"]
        if not isinstance(f, int) or f < 1:
            raise ConfigError("prism.f: must be an integer >= 1")
        lma = self.raw["lma"]
        if not isinstance(lma["L"], int) or lma["L"] < 1:
            raise ConfigError("lma.L: must be an integer >= 1")
        if lma["lattice_mode"] not in ("aligned", "half_shift"):
            raise ConfigError("lma.lattice_mode: must be 'aligned' or 'half_shift'")
        if lma["strategy"] not in ("row_by_row", "rectangles", "greedy"):
            raise ConfigError(f"lma.strategy: unknown strategy {lma['strategy']!r}")
        self.input_kind()
        counts = self.raw["probes"]["counts"]
        if not (isinstance(counts, list) and len(counts) == 2 and all(isinstance(c, int) and c > 0 for c in counts)):
            raise ConfigError("probes.counts: must be two positive integers")
        src = self.raw["specimen"]
        if src["file"] is not None and not (self.base_dir / src["file"]).is_file():
            raise ConfigError(f"specimen.file: {src['file']} not found")
        if src["atoms"] is not None:
            for i, a in enumerate(src["atoms"]):
                if not (isinstance(a, list) and len(a) == 5):
                    raise ConfigError(f"specimen.atoms[{i}]: expected [x, y, z, amplitude, width]")

    def geometry(self) -> GridGeometry:
        g = self.raw["geometry"]
        try:
            return GridGeometry(int(g["nx"]), int(g["ny"]), float(g["lx"]), float(g["ly"]))
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"geometry: {exc}") from None

    def params(self) -> MicroscopeParams:
        m = self.raw["microscope"]
        try:
            lam = m["wavelength"] if m["wavelength"] is not None else electron_wavelength(m["voltage"])
            sigma = m["sigma"] if m["sigma"] is not None else interaction_constant(m["voltage"])
            return MicroscopeParams(float(lam), float(m["cs"]), float(m["defocus"]),
                                    float(m["alpha_max"]), float(sigma))
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"microscope: {exc}") from None

    def propagator(self) -> PropagatorSpec:
        p = self.raw["propagator"]
        try:
            return PropagatorSpec(
                p["variant"],
                tuple(p["kernel_size"]) if p["kernel_size"] is not None else None,
                tuple(p["window"]) if p["window"] is not None else None,
                bool(p["bandlimit"]),
            )
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"propagator: {exc}") from None

    def detectors(self) -> list[DetectorConfig]:
        d = self.raw["detectors"]
        if d is None:
            return standard_detectors()
        out = []
        for i, item in enumerate(d):
            if not isinstance(item, dict):
                raise ConfigError(f"detectors[{i}]: must be a mapping")
            allowed = {"name", "mode", "r1", "r2", "A", "r", "B", "dx", "dy"}
            extra = set(item) - allowed
            if extra:
                raise ConfigError(f"detectors[{i}]: unknown key '{sorted(extra)[0]}'")
            try:
                cfg = DetectorConfig(**item)
            except (ValueError, TypeError) as exc:
                raise ConfigError(f"detectors[{i}]: {exc}") from None
            out.append(cfg if cfg.name else DetectorConfig(**{**item, "name": f"det{i}"}))
        names = [c.name for c in out]
        if len(set(names)) != len(names):
            raise ConfigError("detectors: names must be unique")
        return out

    def input_kind(self) -> InputWaveKind:
        lma = self.raw["lma"]
        tag = lma["kind"]
        try:
            if tag.startswith("trig"):
                n = lma["n"] or trig_degree_from_probe(self.params(), self.geometry().qx)
                return InputWaveKind(tag, n=int(n))
            if tag == "gaussian":
                return InputWaveKind(tag, sigma_g=float(lma["sigma_g"] or gaussian_width(self.params())))
            return InputWaveKind(tag)
        except (ValueError, TypeError, AttributeError) as exc:
            raise ConfigError(f"lma.kind: {exc}") from None

    def atoms(self) -> list[AtomSpec]:
        src = self.raw["specimen"]
        if src["atoms"] is not None:
            return [AtomSpec(*map(float, a)) for a in src["atoms"]]
        g = self.geometry()
        r = src["random_atoms"]
        rng = np.random.default_rng(self.raw["seed"])
        depth = src["eps"] * src["n_slices"]
        xyz = rng.uniform(0, 1, (int(r["count"]), 3)) * np.array([g.lx, g.ly, depth])
        return [AtomSpec(x, y, z, float(r["amplitude"]), float(r["width"])) for x, y, z in xyz]

    def specimen(self) -> Specimen:
        src = self.raw["specimen"]
        try:
            if src["file"] is not None:
                spec = load_specimen(self.base_dir / src["file"])
                if spec.geom != self.geometry():
                    raise ConfigError("specimen.file: grid differs from geometry block")
                return spec
            return synth_specimen(self.atoms(), self.geometry(), float(src["eps"]), int(src["n_slices"]))
        except ConfigError:
            raise
        except ValueError as exc:
            raise ConfigError(f"specimen: {exc}") from None

    def probe_indices(self) -> list[tuple[int, int]]:
        """Requested probe lattice indices in scan order (x fastest)."""
        px, py = self.raw["probes"]["counts"]
        sub = self.raw["probes"]["subset"]
        if sub is None:
            (a0, a1), (b0, b1) = (0, px), (0, py)
        else:
            try:
                (a0, a1), (b0, b1) = sub
            except (TypeError, ValueError):
                raise ConfigError("probes.subset: expected [[a0, a1], [b0, b1]]") from None
            if not (0 <= a0 < a1 <= px and 0 <= b0 < b1 <= py):
                raise ConfigError("probes.subset: range outside the probe lattice")
        return [(a, b) for b in range(b0, b1) for a in range(a0, a1)]
