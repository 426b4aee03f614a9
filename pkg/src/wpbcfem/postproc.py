"""Evaluation of scattering solutions: line fields, error metrics, export."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from . import vtk
from .basis import ShapeBasis, eval_shape
from .dofs import DofMap, dofmap_1d, trace_map
from .mesh import Mesh1D, Mesh2D, extract_trace
from .modal import ModeSet, fmt_float
from .scatter import ScatterSolution


class PostprocError(ValueError):
    pass


@dataclass
class LineField:
    """A function in the hierarchical 1D space of ``mesh`` (all dofs, ends included)."""

    mesh: Mesh1D
    order: int
    coeffs: np.ndarray

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=complex)
        if self.coeffs.shape != (self.dofmap.n_dofs,):
            raise PostprocError(f"{len(self.coeffs)} coefficients for a space of "
                                f"dimension {self.dofmap.n_dofs}")

    @cached_property
    def dofmap(self) -> DofMap:
        return dofmap_1d(self.mesh, self.order)

    @cached_property
    def mass(self) -> sp.csr_matrix:
        return line_mass(self.mesh, self.order)

    def norm(self) -> float:
        return float(np.sqrt(abs(self.coeffs.conj() @ (self.mass @ self.coeffs))))

    def evaluate(self, x) -> np.ndarray:
        """Point values at coordinates ``x`` inside the mesh."""
        x = np.asarray(x, dtype=float)
        nodes = self.mesh.nodes
        if np.any(x < nodes[0] - 1e-12) or np.any(x > nodes[-1] + 1e-12):
            raise PostprocError("evaluation point outside the line")
        seg = np.clip(np.searchsorted(nodes, x, side="right") - 1, 0, len(nodes) - 2)
        a, b = nodes[seg], nodes[seg + 1]
        s = 2.0 * (x - a) / (b - a) - 1.0
        out = np.empty(len(x), dtype=complex)
        basis = self.dofmap.basis
        for k in np.unique(seg):
            sel = seg == k
            phi, _ = eval_shape(basis, s[sel][:, None])
            c = self.coeffs[self.dofmap.elem_dofs[k]] * self.dofmap.elem_signs[k]
            out[sel] = c @ phi
        return out

    def samples(self, subdivisions: int | None = None):
        """``(x, values)`` at nodes and ``subdivisions - 1`` points per segment."""
        n = subdivisions or self.order
        t = np.linspace(0.0, 1.0, n + 1)[:-1]
        a, b = self.mesh.nodes[:-1], self.mesh.nodes[1:]
        x = np.append((a[:, None] + t[None, :] * (b - a)[:, None]).ravel(), self.mesh.nodes[-1])
        return x, self.evaluate(x)


def line_mass(mesh: Mesh1D, order: int) -> sp.csr_matrix:
    """Unweighted L2 mass matrix over all 1D dofs."""
    dm = dofmap_1d(mesh, order)
    basis = ShapeBasis("segment", order)
    q = basis.quadrature()
    phi, _ = eval_shape(basis, q.points)
    h = mesh.nodes[mesh.segments[:, 1]] - mesh.nodes[mesh.segments[:, 0]]
    M = np.einsum("e,q,iq,jq->eij", 0.5 * h, q.weights, phi, phi)
    M *= dm.elem_signs[:, :, None] * dm.elem_signs[:, None, :]
    nbf = basis.size
    rows = np.repeat(dm.elem_dofs, nbf, axis=1).ravel()
    cols = np.tile(dm.elem_dofs, (1, nbf)).ravel()
    return sp.csr_matrix((M.ravel(), (rows, cols)), shape=(dm.n_dofs, dm.n_dofs))


def trace_field(sol: ScatterSolution, line: str) -> LineField:
    """Trace of the solution on a named mesh line."""
    sys = sol.system
    trace = extract_trace(sys.mesh, line)
    dm1 = dofmap_1d(trace, sys.dofmap.order)
    dofs, signs = trace_map(sys.dofmap, trace.source_nodes, dm1)
    return LineField(trace, sys.dofmap.order, signs * sol.full[dofs])


def extract_port_amplitudes(sol: ScatterSolution, port, total: bool = False) -> np.ndarray:
    """Modal amplitudes read from a port's master dofs.

    The master dofs hold the total modal coefficient at the port plane;
    by default the incident part is subtracted, leaving the reflected
    (input port) or transmitted (output port) amplitudes.
    """
    if port.masters is None or port not in sol.system.ports:
        raise PostprocError(f"port {port.name!r} is not restricted in this system")
    c = sol.x[port.masters].copy()
    if not total and port.incident is not None:
        c -= port.incident
    return c


def reference_field(ms: ModeSet, alpha, d: float) -> LineField:
    """``sum_k alpha_k exp(-j beta_k d) E_k`` on the modes' cross-section."""
    if d < 0:
        raise PostprocError("propagation distance must be non-negative")
    alpha = np.asarray(alpha, dtype=complex)
    if alpha.shape != (len(ms),):
        raise PostprocError(f"{len(alpha)} coefficients for {len(ms)} modes")
    c = ms.coeffs @ (alpha * np.exp(-1j * ms.beta * d))
    return LineField(ms.system.mesh, ms.system.dofmap.order, ms.system.expand(c))


def _same_space(u: LineField, v: LineField):
    if u.order != v.order or u.mesh.n_nodes != v.mesh.n_nodes or \
            np.max(np.abs(u.mesh.nodes - v.mesh.nodes)) > 1e-12:
        raise PostprocError("line fields live on different 1D spaces")


def line_relative_error(u: LineField, v: LineField) -> float:
    """``||u - v|| / ||v||`` in L2 over the line."""
    _same_space(u, v)
    nv = v.norm()
    if nv == 0:
        raise PostprocError("reference field has zero norm")
    e = u.coeffs - v.coeffs
    return float(np.sqrt(abs(e.conj() @ (v.mass @ e)))) / nv


def mode_projection_residual(u: LineField, ms: ModeSet) -> float:
    """Relative L2 distance from ``u`` to the span of the modes.

    The modes are transferred node-by-node from their cross-section to
    ``u``'s line, which must have identical node x-coordinates. The
    projection uses the conjugated L2 inner product.
    """
    trace = ms.system.mesh
    if trace.n_nodes != u.mesh.n_nodes or np.max(np.abs(trace.nodes - u.mesh.nodes)) > 1e-12:
        raise PostprocError("evaluation line nodes do not match the port nodes")
    if ms.system.dofmap.order != u.order:
        raise PostprocError("order mismatch between modes and line field")
    nu = u.norm()
    if nu == 0:
        raise PostprocError("field has zero norm")
    if len(ms) == 0:
        return 1.0
    V = ms.full_coeffs()
    M = u.mass
    MV = M @ V
    G = V.conj().T @ MV
    s = np.linalg.svd(G, compute_uv=False)
    if s[-1] <= 1e-14 * s[0]:
        raise PostprocError("projection Gram matrix is rank deficient")
    c = np.linalg.solve(G, MV.conj().T @ u.coeffs)
    e = V @ c - u.coeffs
    return float(np.sqrt(abs(e.conj() @ (M @ e)))) / nu


def _lattice(n: int):
    """Reference points and sub-triangles of a uniform ``n``-subdivision."""
    pts, index = [], {}
    for j in range(n + 1):
        for i in range(n + 1 - j):
            index[i, j] = len(pts)
            pts.append((i / n, j / n))
    tris = []
    for j in range(n):
        for i in range(n - j):
            tris.append((index[i, j], index[i + 1, j], index[i, j + 1]))
            if i + j < n - 1:
                tris.append((index[i + 1, j], index[i + 1, j + 1], index[i, j + 1]))
    return np.array(pts), np.array(tris)


def sample_field(sol: ScatterSolution, subdivisions: int = 1):
    """Points, triangles and complex values of the solution.

    ``subdivisions=1`` uses the mesh nodes (vertex dofs are point values);
    larger values split every triangle uniformly, duplicating shared points.
    """
    sys = sol.system
    mesh: Mesh2D = sys.mesh
    u = sol.full
    if subdivisions <= 1:
        return mesh.nodes, mesh.triangles, u[:mesh.n_nodes].copy()
    ref, sub = _lattice(subdivisions)
    dm = sys.dofmap
    phi, _ = eval_shape(dm.basis, ref)  # (nbf, nr)
    c = u[dm.elem_dofs] * dm.elem_signs  # (ne, nbf)
    vals = (c @ phi).ravel()
    p = mesh.nodes[mesh.triangles]
    lam = np.column_stack([1 - ref[:, 0] - ref[:, 1], ref])
    pts = np.einsum("ra,eac->erc", lam, p).reshape(-1, 2)
    nr = len(ref)
    tris = (np.arange(mesh.n_triangles)[:, None, None] * nr + sub[None]).reshape(-1, 3)
    return pts, tris, vals


def export_field(sol: ScatterSolution, path, subdivisions: int = 1):
    """Legacy VTK file with point scalars ``E_re`` and ``E_im``."""
    pts, tris, vals = sample_field(sol, subdivisions)
    vtk.write_unstructured(path, pts, tris, {"E_re": vals.real, "E_im": vals.imag})


def write_line_csv(field: LineField, path, subdivisions: int | None = None):
    """CSV with header ``x,re,im`` sampled along the line."""
    x, v = field.samples(subdivisions)
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["x", "re", "im"])
        for xi, vi in zip(x, v):
            w.writerow([fmt_float(xi), fmt_float(vi.real), fmt_float(vi.imag)])
