"""Evolve-filter-relax finite-volume solver and hybrid POD-Galerkin/RBF reduced-order model."""

from .fom import (EfrParams, FomState, drag_lift, efr_step, evolve_step, helmholtz_filter, indicator,
                  nonlinear_filter, relax)
from .mesh import CartesianMesh, build_channel_mesh, mesh_metrics
from .pod import PodBasis, SnapshotSet, build_lifting, pod_compute, project_field
from .rom_offline import ReducedOperators, RbfInterpolant, project_operators, rbf_eval, rbf_fit
from .rom_online import RomState, reconstruct, rom_init, rom_step

__version__ = "0.1.0"
