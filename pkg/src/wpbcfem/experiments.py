"""End-to-end slab pipelines: port modes, WPBC and PML-backed solves, sweeps."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .mesh import Mesh2D, SlabGeometry, build_slab_mesh, extract_trace
from .modal import ModeSet, assemble_modal, prepare_modes
from .pml import DEFAULT_M, DEFAULT_R, slab_pml_specs
from .postproc import (extract_port_amplitudes, line_relative_error, mode_projection_residual,
                       reference_field, trace_field)
from .scatter import ScatterSolution, assemble_scatter, solve
from .wpbc import add_load, apply_wpbc, current_plane_source, make_port

log = logging.getLogger(__name__)

VALIDATION_ALPHA = (0.5, 2.0, 2.5)


@dataclass
class SlabProblem:
    """Everything needed to run a slab experiment.

    ``pml_index_x``/``pml_index_z`` are the indices used in the PML
    strength formula (``None`` for x means the cladding index).
    ``nmodes`` of ``None`` or ``"full"`` retain every trace mode.
    """

    geometry: SlabGeometry = field(default_factory=SlabGeometry)
    materials: dict = field(default_factory=lambda: {"core": 2.5, "clad": 1.5})
    wavelength: float = 1.55
    order: int = 4
    pml_m: float = DEFAULT_M
    pml_R: float = DEFAULT_R
    pml_index_x: float | None = None
    pml_index_z: float = 1.0
    alpha_max_x: float | None = None
    alpha_max_z: float | None = None
    nmodes_in: int | None = 50
    nmodes_out: int | None = 50
    patch_size: int | None = 1
    solver: str = "direct"
    condense: bool = False

    @property
    def k0(self) -> float:
        return 2 * math.pi / self.wavelength

    def pml_specs(self, layout: str | None = None):
        g = self.geometry
        layout = layout or g.layout
        nx = self.pml_index_x if self.pml_index_x is not None else self.materials["clad"]
        zb = (0.0, g.domain_length) if layout == "pml" else None
        return slab_pml_specs(g.cladding_edge, g.pml_width_x, self.wavelength, nx, z_bounds=zb,
                              width_z=g.pml_width_z, n_z=self.pml_index_z, R=self.pml_R,
                              m=self.pml_m, alpha_max_x=self.alpha_max_x,
                              alpha_max_z=self.alpha_max_z)


def port_modes(problem: SlabProblem, mesh: Mesh2D, line: str, n_modes) -> ModeSet:
    """Normalized modes of the cross-section under ``line``."""
    trace = extract_trace(mesh, line)
    sys = assemble_modal(trace, problem.materials, problem.k0, problem.order, problem.pml_specs())
    n = sys.size if n_modes in (None, "full") else min(int(n_modes), sys.size)
    return prepare_modes(sys, n)


def guided_indices(ms: ModeSet, n_core: float, n_clad: float, tol: float = 1e-8) -> np.ndarray:
    """Modes with ``k0 n_clad < Re beta < k0 n_core`` and negligible loss."""
    b = ms.beta
    k0 = ms.k0
    ok = (b.real > k0 * n_clad) & (b.real < k0 * n_core) & (np.abs(b.imag) < tol * np.abs(b))
    return np.nonzero(ok)[0]


def incident_vector(ms: ModeSet, problem: SlabProblem, spec) -> np.ndarray:
    """Incident coefficients from ``(index, amplitude, guided)`` triples.

    ``guided=True`` indexes the guided modes in sort order, otherwise the
    full mode list.
    """
    gi = guided_indices(ms, problem.materials["core"], problem.materials["clad"])
    out = np.zeros(len(ms), dtype=complex)
    for idx, amp, guided in spec:
        if guided:
            if idx >= len(gi):
                raise ValueError(f"guided mode g{idx} requested, only {len(gi)} guided modes")
            idx = gi[idx]
        elif idx >= len(ms):
            raise ValueError(f"mode {idx} requested, port keeps {len(ms)} modes")
        out[idx] += amp
    return out


def _guided_alpha(ms, problem, alpha):
    gi = guided_indices(ms, problem.materials["core"], problem.materials["clad"])
    alpha = np.asarray(alpha, dtype=complex)
    if len(gi) < len(alpha):
        raise ValueError(f"only {len(gi)} guided modes for {len(alpha)} incident coefficients")
    full = np.zeros(len(ms), dtype=complex)
    full[gi[:len(alpha)]] = alpha
    return full


@dataclass
class RunResult:
    solution: ScatterSolution
    modes_in: ModeSet
    incident: np.ndarray
    ports: list = field(default_factory=list)
    modes_out: ModeSet | None = None

    @property
    def n_dofs(self) -> int:
        return self.solution.system.n_full


def run_wpbc(problem: SlabProblem, alpha=VALIDATION_ALPHA, incident=None) -> RunResult:
    """Ports on both ends; ``alpha`` feeds the input port's guided modes in order.

    ``incident`` (triples for :func:`incident_vector`) overrides ``alpha``.
    """
    g = replace(problem.geometry, layout="wpbc")
    mesh = build_slab_mesh(g)
    sys = assemble_scatter(mesh, problem.materials, problem.k0, problem.order,
                           problem.pml_specs("wpbc"), dirichlet=("xmin", "xmax"))
    mi = port_modes(problem, mesh, "gamma_in", problem.nmodes_in)
    mo = port_modes(problem, mesh, "gamma_out", problem.nmodes_out)
    if incident is not None:
        inc = incident_vector(mi, problem, incident)
    else:
        inc = _guided_alpha(mi, problem, alpha)
    pin = make_port(mesh, sys.dofmap, "gamma_in", mi, inc, is_input=True)
    pout = make_port(mesh, sys.dofmap, "gamma_out", mo)
    rs = apply_wpbc(sys, [pin, pout], problem.patch_size)
    sol = solve(rs, problem.solver, problem.condense)
    return RunResult(sol, mi, inc, [pin, pout], mo)


def run_pml_backed(problem: SlabProblem, alpha=VALIDATION_ALPHA, n_source_modes: int = 20) -> RunResult:
    """z-PML beyond both port planes, modal current sheet on ``gamma_in``."""
    g = replace(problem.geometry, layout="pml")
    mesh = build_slab_mesh(g)
    sys = assemble_scatter(mesh, problem.materials, problem.k0, problem.order,
                           problem.pml_specs("pml"), dirichlet=("xmin", "xmax", "zmin", "zmax"))
    mi = port_modes(problem, mesh, "gamma_in", n_source_modes)
    inc = _guided_alpha(mi, problem, alpha)
    f = current_plane_source(mesh, sys.dofmap, mi, inc, "gamma_in")
    sol = solve(add_load(sys, f), problem.solver, problem.condense)
    return RunResult(sol, mi, inc)


def validation_error(run: RunResult, d: float) -> float:
    """Relative L2 error on ``gamma_in_e`` against modal propagation over ``d``."""
    u = trace_field(run.solution, "gamma_in_e")
    ref = reference_field(run.modes_in, run.incident, d)
    return line_relative_error(u, ref)


@dataclass
class ValidationReport:
    error_wpbc: float
    error_pml: float
    dofs_wpbc: int
    dofs_pml: int
    reflected_max: float
    transmitted_phase_error: float

    @property
    def passed(self) -> bool:
        return self.error_wpbc < 1e-4 and self.error_wpbc < self.error_pml


def validate(problem: SlabProblem, alpha=VALIDATION_ALPHA) -> ValidationReport:
    """Straight-guide validation of the WPBC against the PML-backed layout."""
    if problem.geometry.second_core_width is not None:
        raise ValueError("validation needs a straight guide")
    d = problem.geometry.eval_distance
    w = run_wpbc(problem, alpha)
    p = run_pml_backed(problem, alpha)
    refl = extract_port_amplitudes(w.solution, w.ports[0])
    trans = extract_port_amplitudes(w.solution, w.ports[1])
    L = problem.geometry.domain_length
    expect = w.incident * np.exp(-1j * w.modes_in.beta * L)
    fed = np.nonzero(w.incident)[0]
    # output modes equal input modes on a straight guide
    phase = np.abs(np.angle(trans[fed] / expect[fed])).max() if len(fed) else 0.0
    return ValidationReport(validation_error(w, d), validation_error(p, d),
                            w.n_dofs, p.n_dofs, float(np.abs(refl).max()), float(phase))


def discontinuity_problem(base: SlabProblem | None = None, w1: float = 0.4, w2: float = 1.5,
                          offset: float = 1.0) -> SlabProblem:
    """Core-width step with ports ``offset`` away from the junction."""
    base = base or SlabProblem()
    g = replace(base.geometry, core_width=w1, second_core_width=w2,
                domain_length=2 * offset, junction=offset)
    return replace(base, geometry=g)


def nmodes_sweep(problem: SlabProblem, grid, alpha=(1.0,)):
    """Mode-count residual ``r`` on both evaluation lines for each ``(n_in, n_out)``.

    Each count selects the modes nearest the eigensolver target, so small
    counts keep the guided modes. Returns a list of
    ``(n_in, n_out, r_in, r_out)``.
    """
    g = replace(problem.geometry, layout="wpbc")
    mesh = build_slab_mesh(g)
    sys = assemble_scatter(mesh, problem.materials, problem.k0, problem.order,
                           problem.pml_specs("wpbc"), dirichlet=("xmin", "xmax"))
    cache: dict = {}

    def modes(line, n):
        key = (line, n)
        if key not in cache:
            cache[key] = port_modes(problem, mesh, line, n)
        return cache[key]

    out = []
    for n_in, n_out in grid:
        mi = modes("gamma_in", n_in)
        mo = modes("gamma_out", n_out)
        inc = _guided_alpha(mi, problem, alpha)
        pin = make_port(mesh, sys.dofmap, "gamma_in", mi, inc, is_input=True)
        pout = make_port(mesh, sys.dofmap, "gamma_out", mo)
        sol = solve(apply_wpbc(sys, [pin, pout], problem.patch_size), problem.solver,
                    problem.condense)
        r_in = mode_projection_residual(trace_field(sol, "gamma_in_e"), mi)
        r_out = mode_projection_residual(trace_field(sol, "gamma_out_e"), mo)
        out.append((len(mi), len(mo), r_in, r_out))
        log.info("nmodes %d/%d: r_in=%.3e r_out=%.3e", len(mi), len(mo), r_in, r_out)
    return out
