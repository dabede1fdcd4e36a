"""STEM image simulation with Multislice, PRISM and the Lattice Multislice Algorithm."""

from .detect import DetectorConfig, STEMImage, assemble_image, detect, standard_detectors
from .grid import ComplexField, GridGeometry, dft2, rel_error
from .inputwaves import InputWaveKind, make_input_wave, modulation_matrices
from .lma import (
    ApproxPlan,
    LatticePair,
    build_lattices,
    fit_coefficients,
    lma_simulate,
    neighbor_set,
    probe_approx_report,
    translate_plan,
)
from .multislice import MultisliceSolver, OpCounters, PropagatorSpec, multislice_solve
from .optics import MicroscopeParams, build_probe
from .prism import build_frequency_set, prism_simulate
from .scheduler import Partition, RecomputePlan, partition_build, partition_cost, recompute_plan
from .specimen import AtomSpec, Specimen, synth_specimen

__version__ = "0.1.0"
