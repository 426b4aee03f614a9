"""Waveguide port boundary condition by approximation-space restriction.

On a port line the trace of the field is constrained to the span of the
retained port modes,

    u|_port = sum_m c_m E_m,

so every trace dof becomes a linear combination of one master unknown per
mode. Element matrices touching the port are transformed as ``D^H K D``
(and loads as ``D^H f``), where ``D`` holds identity rows for free dofs and
mode coefficients for constrained trace dofs. With ``c_m`` the total
(incident plus scattered) modal coefficient at the port plane, the boundary
term of the weak form reduces, for either orientation, to

    M_ij = j beta_j int_port s_x E_j E_i* dx,   rhs_i = 2 sum_k alpha_k M_ik,

with ``alpha`` the incident coefficients (phase reference at the port).
Incoming waves travel into the domain: ``exp(-j beta z)`` at an input port
whose outward normal is ``-z``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from .dofs import DofMap, trace_map
from .mesh import Mesh1D, Mesh2D
from .modal import ModeSet
from .scatter import ScatterError, ScatterSystem, apply_dirichlet

RANK_TOL = 1e-10


class PortError(ValueError):
    pass


@dataclass(frozen=True)
class RestrictionMap:
    """Constrained trace dofs expressed through one master per mode.

    ``D[i, m]`` is the coefficient of mode ``m`` in constrained dof
    ``constrained[i]`` (trace signs included).
    """

    constrained: np.ndarray  # (nc,) 2D dof ids
    D: np.ndarray  # (nc, n_modes)

    @property
    def n_modes(self) -> int:
        return self.D.shape[1]


def build_restriction(trace_dofs, coeffs, signs=None) -> RestrictionMap:
    """Restriction of ``trace_dofs`` to the span of the columns of ``coeffs``.

    Parameters
    ----------
    trace_dofs : array_like (nc,)
        2D dofs of the port trace (Dirichlet ends excluded).
    coeffs : array_like (nc, n_modes) or ModeSet
        Mode coefficients in the trace basis.
    signs : array_like (nc,), optional
        Orientation signs between the 2D trace functions and the 1D basis.

    Raises
    ------
    PortError
        More modes than trace dofs, or rank deficiency (the first pair of
        nearly parallel columns is reported).
    """
    if isinstance(coeffs, ModeSet):
        coeffs = coeffs.coeffs
    V = np.asarray(coeffs, dtype=complex)
    dofs = np.asarray(trace_dofs, dtype=np.int64)
    if V.ndim != 2 or V.shape[0] != len(dofs):
        raise PortError(f"mode matrix shape {V.shape} does not match {len(dofs)} trace dofs")
    if len(np.unique(dofs)) != len(dofs):
        raise PortError("repeated trace dof")
    n = V.shape[1]
    if n > len(dofs):
        raise PortError(f"{n} modes exceed the {len(dofs)} trace dofs")
    if n:
        s = scipy.linalg.svdvals(V)
        if s[-1] <= RANK_TOL * s[0]:
            raise PortError(f"mode columns are rank deficient{_parallel_pair(V)}")
    if signs is not None:
        V = V * np.asarray(signs, dtype=float)[:, None]
    return RestrictionMap(dofs, V)


def _parallel_pair(V):
    U = V / np.linalg.norm(V, axis=0)
    G = np.abs(U.conj().T @ U)
    np.fill_diagonal(G, 0.0)
    i, j = np.unravel_index(np.argmax(G), G.shape)
    return f" (columns {min(i, j)} and {max(i, j)} have |cos| = {G[i, j]:.3g})"


def restrict_element(K_e, D_e, f_e=None):
    """``D^H K D`` and, if given, ``D^H f``.

    >>> import numpy as np
    >>> restrict_element(np.eye(2), np.array([[1.0], [0.5]]))
    array([[1.25]])
    """
    K_e = np.asarray(K_e)
    D_e = np.asarray(D_e)
    if K_e.ndim != 2 or K_e.shape[0] != K_e.shape[1] or D_e.ndim != 2 or D_e.shape[0] != K_e.shape[0]:
        raise ValueError(f"cannot restrict {K_e.shape} with dependency matrix {D_e.shape}")
    Dh = D_e.conj().T
    K = Dh @ K_e @ D_e
    if f_e is None:
        return K
    f_e = np.asarray(f_e)
    if f_e.shape != (K_e.shape[0],):
        raise ValueError(f"load of shape {f_e.shape} does not match {K_e.shape}")
    return K, Dh @ f_e


@dataclass
class Port:
    """A restricted port.

    ``orientation`` is the sign of the outward normal's z-component.
    ``masters`` holds the unknown ids of the modal dofs once applied.
    """

    name: str
    orientation: int
    z: float
    modes: ModeSet
    restriction: RestrictionMap
    incident: np.ndarray | None = None
    is_input: bool = False
    masters: np.ndarray | None = None

    @property
    def n_modes(self) -> int:
        return len(self.modes)


def port_trace(dm2: DofMap, ms: ModeSet):
    """2D dofs and signs of the free 1D dofs of ``ms``'s cross-section."""
    trace = ms.system.mesh
    if trace.source_nodes is None:
        raise PortError("mode set was not computed on a mesh trace")
    if ms.system.dofmap.order != dm2.order:
        raise PortError(f"port modes have order {ms.system.dofmap.order}, "
                        f"the 2D space has order {dm2.order}")
    dofs, signs = trace_map(dm2, trace.source_nodes, ms.system.dofmap)
    free = ms.system.free
    return dofs[free], signs[free]


def make_port(mesh: Mesh2D, dm2: DofMap, name: str, ms: ModeSet, incident=None,
              is_input: bool | None = None) -> Port:
    """Build a port on line ``name`` from modes computed on its trace.

    The orientation follows from the line position: the lowest z gives an
    outward normal ``-z``, the highest ``+z``.
    """
    if ms.kappa is None:
        raise PortError(f"port {name!r}: modes have no kappa; normalize them first")
    ids = mesh.line(name)
    if ms.system.mesh.source_nodes is None or not np.array_equal(
            np.sort(ms.system.mesh.source_nodes), np.sort(ids)):
        raise PortError(f"port {name!r}: mode cross-section does not match the line nodes")
    z = float(mesh.nodes[ids[0], 1])
    zmin, zmax = mesh.nodes[:, 1].min(), mesh.nodes[:, 1].max()
    tol = 1e-9 * max(1.0, zmax - zmin)
    if abs(z - zmin) <= tol:
        orientation = -1
    elif abs(z - zmax) <= tol:
        orientation = 1
    else:
        raise PortError(f"port {name!r} at z={z} is not on the domain boundary")
    inc = None
    if incident is not None:
        inc = np.zeros(len(ms), dtype=complex)
        a = np.asarray(incident, dtype=complex)
        if len(a) > len(ms):
            raise PortError(f"port {name!r}: {len(a)} incident coefficients for {len(ms)} modes")
        inc[:len(a)] = a
    if is_input is None:
        is_input = inc is not None
    if inc is not None and np.any(inc != 0) and not is_input:
        raise PortError(f"port {name!r} is output-only but has incident coefficients")
    dofs, signs = port_trace(dm2, ms)
    R = build_restriction(dofs, ms.coeffs, signs)
    return Port(name, orientation, z, ms, R, inc, bool(is_input))


def port_boundary_matrix(port: Port) -> np.ndarray:
    """``M_ij = j beta_j e_i^H B e_j`` (``B`` is the ``s_x``-weighted trace mass)."""
    ms = port.modes
    if ms.kappa is None:
        raise PortError(f"port {port.name!r}: kappa not computed")
    E = ms.coeffs
    G = E.conj().T @ (ms.B @ E)
    return G * (1j * ms.beta)[None, :]


def port_source_vector(port: Port) -> np.ndarray:
    """``2 sum_k alpha_k M_ik`` for the incident coefficients ``alpha``."""
    n = port.n_modes
    if port.incident is None or not np.any(port.incident):
        return np.zeros(n, dtype=complex)
    if not port.is_input:
        raise PortError(f"port {port.name!r} is output-only but has incident coefficients")
    return 2.0 * port_boundary_matrix(port) @ port.incident


def current_plane_source(mesh: Mesh2D, dm2: DofMap, ms: ModeSet, alpha, line: str) -> np.ndarray:
    """Load vector of a modal current sheet on an interior line.

    The sheet launches ``sum_k alpha_k E_k exp(-j beta_k |z - z0|)`` into
    both half-spaces: the jump of ``s_x dE/dz`` across the line is
    ``-2 j beta_k alpha_k E_k``. Returns a vector over all 2D dofs.
    """
    ids = mesh.line(line)
    if ms.system.mesh.source_nodes is None or not np.array_equal(
            np.sort(ms.system.mesh.source_nodes), np.sort(ids)):
        raise PortError(f"mode cross-section does not match line {line!r}")
    a = np.zeros(len(ms), dtype=complex)
    alpha = np.asarray(alpha, dtype=complex)
    if len(alpha) > len(ms):
        raise PortError(f"{len(alpha)} coefficients for {len(ms)} modes")
    a[:len(alpha)] = alpha
    f1 = 2.0 * (ms.B @ (ms.coeffs @ (1j * ms.beta * a)))
    dofs, signs = port_trace(dm2, ms)
    out = np.zeros(dm2.n_dofs, dtype=complex)
    out[dofs] = signs * f1
    return out


def group_port_patches(mesh: Mesh2D, dm: DofMap, constrained, patch_size: int | None = 1):
    """Elements touching ``constrained`` dofs, grouped into patches.

    Elements are ordered by centroid x; ``patch_size`` consecutive elements
    form a patch (``None`` puts all of them in one patch).
    """
    mask = np.zeros(dm.n_dofs, dtype=bool)
    mask[np.asarray(constrained)] = True
    elems = np.nonzero(mask[dm.elem_dofs].any(axis=1))[0]
    cx = mesh.nodes[mesh.triangles[elems], 0].mean(axis=1)
    elems = elems[np.argsort(cx, kind="stable")]
    if patch_size is None or patch_size >= len(elems):
        return [elems] if len(elems) else []
    if patch_size < 1:
        raise ValueError("patch_size must be positive")
    return [elems[i:i + patch_size] for i in range(0, len(elems), patch_size)]


def apply_wpbc(sys: ScatterSystem, ports, patch_size: int | None = 1, load=None) -> ScatterSystem:
    """Restrict the port traces and add the port terms.

    Parameters
    ----------
    sys : ScatterSystem
        Unrestricted system from :func:`~wpbcfem.scatter.assemble_scatter`.
    ports : sequence of Port
    patch_size : int or None
        Elements per restricted patch.
    load : ndarray, optional
        Extra load over all 2D dofs, restricted as ``P^H load``.

    Returns
    -------
    ScatterSystem
        Unknowns are the unconstrained dofs (in increasing dof order)
        followed by the master dofs of each port.
    """
    dm = sys.dofmap
    n_full = dm.n_dofs
    owner = np.full(n_full, -1)
    row_of = np.full(n_full, -1)
    for k, port in enumerate(ports):
        c = port.restriction.constrained
        if np.any(owner[c] >= 0):
            raise ScatterError(f"port {port.name!r} shares trace dofs with another port")
        owner[c] = k
        row_of[c] = np.arange(len(c))
    if np.any(owner[sys.dirichlet] >= 0):
        raise ScatterError("a Dirichlet dof is constrained by a port")

    free = np.nonzero(owner < 0)[0]
    pos = np.full(n_full, -1)
    pos[free] = np.arange(len(free))
    n = len(free)
    for port in ports:
        port.masters = np.arange(n, n + port.n_modes)
        n += port.n_modes

    # prolongation: full dofs <- unknowns
    pr, pc, pv = [free], [pos[free]], [np.ones(len(free), dtype=complex)]
    for k, port in enumerate(ports):
        R = port.restriction
        nc, nm = R.D.shape
        pr.append(np.repeat(R.constrained, nm))
        pc.append(np.tile(port.masters, nc))
        pv.append(R.D.ravel())
    P = sp.csr_matrix((np.concatenate(pv), (np.concatenate(pr), np.concatenate(pc))),
                      shape=(n_full, n))

    rows, cols, vals = [], [], []
    rhs = np.zeros(n, dtype=complex)
    all_c = np.nonzero(owner >= 0)[0]
    patches = group_port_patches(sys.mesh, dm, all_c, patch_size)
    in_patch = np.zeros(sys.mesh.n_triangles, dtype=bool)
    for patch in patches:
        in_patch[patch] = True
        local = np.unique(dm.elem_dofs[patch])
        loc = {d: i for i, d in enumerate(local)}
        nl = len(local)
        Kp = np.zeros((nl, nl), dtype=complex)
        fp = np.zeros(nl, dtype=complex)
        for e in patch:
            li = np.array([loc[d] for d in dm.elem_dofs[e]])
            Kp[np.ix_(li, li)] += sys.elem_mats[e]
            np.add.at(fp, li, sys.elem_rhs[e])
        # columns of the patch dependency matrix
        ucols = [pos[d] for d in local if owner[d] < 0]
        for k in sorted(set(owner[local][owner[local] >= 0].tolist())):
            ucols.extend(ports[k].masters.tolist())
        ucols = np.array(ucols)
        cidx = {u: j for j, u in enumerate(ucols)}
        De = np.zeros((nl, len(ucols)), dtype=complex)
        for i, d in enumerate(local):
            if owner[d] < 0:
                De[i, cidx[pos[d]]] = 1.0
            else:
                port = ports[owner[d]]
                j0 = cidx[port.masters[0]]
                De[i, j0:j0 + port.n_modes] = port.restriction.D[row_of[d]]
        Kr, fr = restrict_element(Kp, De, fp)
        # drop structural zeros (identity rows of D), keeping the pattern symmetric
        nz = (Kr != 0) | (Kr.T != 0)
        ii, jj = np.nonzero(nz)
        rows.append(ucols[ii])
        cols.append(ucols[jj])
        vals.append(Kr[ii, jj])
        np.add.at(rhs, ucols, fr)

    other = np.nonzero(~in_patch)[0]
    ed = pos[dm.elem_dofs[other]]
    if np.any(ed < 0):
        raise ScatterError("constrained dof outside the port patches")
    nbf = ed.shape[1]
    rows.append(np.repeat(ed, nbf, axis=1).ravel())
    cols.append(np.tile(ed, (1, nbf)).ravel())
    vals.append(sys.elem_mats[other].ravel())
    np.add.at(rhs, ed, sys.elem_rhs[other])

    for port in ports:
        M = port_boundary_matrix(port)
        m = port.masters
        rows.append(np.repeat(m, len(m)))
        cols.append(np.tile(m, len(m)))
        vals.append(M.ravel())
        rhs[m] += port_source_vector(port)
    if load is not None:
        rhs += P.conj().T @ np.asarray(load, dtype=complex)

    A = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(n, n))
    A, rhs = apply_dirichlet(A, rhs, pos[sys.dirichlet])
    unknown_dofs = np.concatenate([free, -np.ones(n - len(free), dtype=np.int64)])
    applied = list(sys.applied) + [f"wpbc:{p.name}:{p.n_modes}" for p in ports]
    return ScatterSystem(A, rhs, dm, sys.mesh, sys.k0, sys.dirichlet, sys.elem_mats,
                         sys.elem_rhs, P, unknown_dofs, list(ports), applied)


def add_load(sys: ScatterSystem, load) -> ScatterSystem:
    """Add a full-space load vector (e.g. a current plane) to the RHS."""
    load = np.asarray(load, dtype=complex)
    if load.shape != (sys.n_full,):
        raise ValueError(f"load has shape {load.shape}, expected ({sys.n_full},)")
    f = load if sys.prolong is None else sys.prolong.conj().T @ load
    rhs = sys.rhs + f
    fixed = sys.dirichlet if sys.unknown_dofs is None else np.nonzero(
        np.isin(sys.unknown_dofs, sys.dirichlet))[0]
    rhs[fixed] = 0.0
    return ScatterSystem(sys.matrix, rhs, sys.dofmap, sys.mesh, sys.k0, sys.dirichlet,
                         sys.elem_mats, sys.elem_rhs, sys.prolong, sys.unknown_dofs,
                         list(sys.ports), list(sys.applied) + ["load"])
