"""Global degree-of-freedom numbering for hierarchical H1 spaces.

Numbering is vertices first (one per node, same id as the node), then edge
interiors (``p - 1`` per edge, ordered by edge then order), then face
interiors. Global edge direction runs from the lower to the higher node id.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .basis import TRIANGLE_EDGES, ShapeBasis, edge_signs
from .mesh import Mesh1D, Mesh2D


@dataclass
class DofMap:
    basis: ShapeBasis
    n_dofs: int
    elem_dofs: np.ndarray  # (ne, nbf)
    elem_signs: np.ndarray  # (ne, nbf)
    edges: np.ndarray  # (n_edges, 2) sorted node pairs
    n_nodes: int

    @property
    def order(self) -> int:
        return self.basis.order

    def edge_dofs(self, edge_ids) -> np.ndarray:
        """(len(edge_ids), p - 1) global dofs of edge interiors."""
        k = self.basis.n_edge
        edge_ids = np.asarray(edge_ids)
        return self.n_nodes + edge_ids[:, None] * k + np.arange(k)

    def face_dofs(self) -> np.ndarray:
        return self.elem_dofs[:, self.basis.face_indices()]

    def describe(self, dof: int) -> str:
        """Human-readable mesh entity that owns ``dof``."""
        if dof < self.n_nodes:
            return f"vertex dof of node {dof}"
        k = self.basis.n_edge
        n_edge_dofs = len(self.edges) * k
        if dof < self.n_nodes + n_edge_dofs:
            e, l = divmod(dof - self.n_nodes, k)
            a, b = self.edges[e]
            return f"order-{l + 2} dof of edge ({a}, {b})"
        rows = np.nonzero(self.elem_dofs == dof)[0]
        return f"interior dof of element {rows[0] if len(rows) else '?'}"


def _build(basis, cells, n_nodes, local_edges):
    cells = np.asarray(cells)
    ne = len(cells)
    pairs = np.concatenate([np.sort(cells[:, [a, b]], axis=1) for a, b in local_edges])
    edges, inverse = np.unique(pairs, axis=0, return_inverse=True)
    inverse = inverse.reshape(len(local_edges), ne).T  # (ne, n_local_edges)
    k = basis.n_edge
    blocks = [cells]
    for le in range(len(local_edges)):
        blocks.append(n_nodes + inverse[:, le:le + 1] * k + np.arange(k))
    n = n_nodes + len(edges) * k
    if basis.n_face:
        blocks.append(n + np.arange(ne)[:, None] * basis.n_face + np.arange(basis.n_face))
        n += ne * basis.n_face
    elem_dofs = np.hstack(blocks).astype(np.int64)
    return DofMap(basis, n, elem_dofs, edge_signs(basis, cells), edges, n_nodes)


def dofmap_2d(mesh: Mesh2D, order: int) -> DofMap:
    return _build(ShapeBasis("triangle", order), mesh.triangles, mesh.n_nodes, TRIANGLE_EDGES)


def dofmap_1d(mesh: Mesh1D, order: int) -> DofMap:
    """Segment dofs; ``mesh.segments[k]`` owns edge ``k``."""
    dm = _build(ShapeBasis("segment", order), mesh.segments, mesh.n_nodes, ((0, 1),))
    return dm


def boundary_dofs(dm: DofMap, mesh: Mesh2D, names) -> np.ndarray:
    """All dofs (vertex and edge interior) on boundary edges with given names."""
    ids = [k for k, v in mesh.boundary_table.items() if v in names]
    edges = np.sort(mesh.boundary_edges[np.isin(mesh.boundary_tags, ids)], axis=1)
    if len(edges) == 0:
        return np.zeros(0, dtype=np.int64)
    pos = _edge_index(dm, edges)
    return np.unique(np.concatenate([edges.ravel(), dm.edge_dofs(pos).ravel()]))


def _edge_index(dm, pairs):
    pairs = np.sort(np.asarray(pairs), axis=1)
    key = dm.edges[:, 0] * (dm.n_nodes + 1) + dm.edges[:, 1]
    q = pairs[:, 0] * (dm.n_nodes + 1) + pairs[:, 1]
    order = np.argsort(key)
    pos = np.searchsorted(key, q, sorter=order)
    pos = order[np.clip(pos, 0, len(order) - 1)]
    if np.any(key[pos] != q):
        raise KeyError("edge not in mesh")
    return pos


def trace_map(dm2: DofMap, line_nodes, dm1: DofMap) -> tuple[np.ndarray, np.ndarray]:
    """Identify 1D dofs of a line mesh with 2D dofs of the same line.

    Parameters
    ----------
    dm2 : DofMap
        2D dof map.
    line_nodes : array_like
        2D node ids of the line, in the 1D node order.
    dm1 : DofMap
        Dof map of the 1D trace mesh (segments ``(k, k + 1)``).

    Returns
    -------
    dofs : ndarray (dm1.n_dofs,)
        2D dof for every 1D dof.
    signs : ndarray (dm1.n_dofs,)
        The 2D function restricted to the line equals ``sign`` times the 1D
        function.
    """
    ids = np.asarray(line_nodes)
    n1 = len(ids)
    if dm1.n_nodes != n1 or dm1.order != dm2.order:
        raise ValueError("trace mesh and line do not match")
    k = dm2.basis.n_edge
    dofs = np.empty(dm1.n_dofs, dtype=np.int64)
    signs = np.ones(dm1.n_dofs)
    dofs[:n1] = ids
    pairs = np.column_stack([ids[:-1], ids[1:]])
    pos = _edge_index(dm2, pairs)
    d2 = dm2.edge_dofs(pos)  # (nseg, k)
    seg = dm1.edges  # sorted 1D pairs; for a line mesh edge j is segment (j, j+1)
    d1 = dm1.edge_dofs(np.arange(len(seg)))
    rev = pairs[:, 0] > pairs[:, 1]
    odd = np.array([(-1.0) ** l for l in range(2, dm2.order + 1)])
    dofs[d1.ravel()] = d2.ravel()
    s = np.where(rev[:, None], odd[None, :], 1.0)
    signs[d1.ravel()] = s.ravel()
    return dofs, signs
