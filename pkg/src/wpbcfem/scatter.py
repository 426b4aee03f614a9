"""2D scalar (TE) scattering system on a triangle mesh.

Solves for ``E_y(x, z)`` in

    int c_xx dE/dx dphi*/dx + c_zz dE/dz dphi*/dz - k0^2 n^2 c_mass E phi* = rhs

with homogeneous Dirichlet (PEC) on selected outer boundaries. The shape
functions are real, so element matrices are plain (non-conjugated) products;
conjugation only enters through port restrictions (see :mod:`wpbcfem.wpbc`).
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .basis import eval_shape
from .dofs import DofMap, boundary_dofs, dofmap_2d
from .mesh import Mesh2D
from .pml import scalar_coeffs, stretch

log = logging.getLogger(__name__)

GMRES_RTOL = 1e-10


class ScatterError(RuntimeError):
    pass


@dataclass
class ScatterSystem:
    """Global system in the (possibly reduced) unknown numbering.

    ``prolong`` maps unknowns to the full 2D dof vector; it is the identity
    until ports are restricted.
    """

    matrix: sp.csr_matrix
    rhs: np.ndarray
    dofmap: DofMap
    mesh: Mesh2D
    k0: float
    dirichlet: np.ndarray  # full-space dof ids with E = 0
    elem_mats: np.ndarray = field(repr=False)  # (ne, nbf, nbf), signs applied
    elem_rhs: np.ndarray = field(repr=False)  # (ne, nbf)
    prolong: sp.csr_matrix | None = field(default=None, repr=False)
    unknown_dofs: np.ndarray | None = field(default=None, repr=False)  # full dof or -1
    ports: list = field(default_factory=list)
    applied: list[str] = field(default_factory=list)

    @property
    def size(self) -> int:
        return self.matrix.shape[0]

    @property
    def n_full(self) -> int:
        return self.dofmap.n_dofs


@dataclass
class ScatterSolution:
    x: np.ndarray  # unknowns of the system
    system: ScatterSystem
    residual: float
    method: str

    @property
    def full(self) -> np.ndarray:
        """Coefficients of all 2D dofs (constrained trace dofs included)."""
        P = self.system.prolong
        return self.x.copy() if P is None else P @ self.x


def _region_arrays(mesh, materials):
    n2 = np.empty(mesh.n_triangles, dtype=complex)
    pml_x = np.zeros(mesh.n_triangles, dtype=bool)
    pml_z = np.zeros(mesh.n_triangles, dtype=bool)
    tags = np.unique(mesh.triangle_tags)
    for tag in tags:
        region = mesh.region_table.get(int(tag))
        if region is None:
            raise ScatterError(f"triangle tag {tag} has no region")
        if region.material not in materials:
            raise ScatterError(f"no refractive index for material {region.material!r} "
                               f"(region {region.name!r})")
        sel = mesh.triangle_tags == tag
        n2[sel] = complex(materials[region.material]) ** 2
        pml_x[sel] = "x" in region.pml
        pml_z[sel] = "z" in region.pml
    return n2, pml_x, pml_z


def element_matrices(mesh: Mesh2D, dm: DofMap, materials, k0, pml=None, source=None):
    """Signed element matrices and load vectors.

    Parameters
    ----------
    source : callable, optional
        ``f(x, z)`` volume source, integrated against the test functions.

    Returns
    -------
    K : ndarray, shape (ne, nbf, nbf)
    f : ndarray, shape (ne, nbf)
    """
    basis = dm.basis
    q = basis.quadrature()
    phi, dphi = eval_shape(basis, q.points)
    p = mesh.nodes[mesh.triangles]  # (ne, 3, 2)
    J = np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]], axis=2)  # (ne, 2, 2), columns d/dxi, d/deta
    det = J[:, 0, 0] * J[:, 1, 1] - J[:, 0, 1] * J[:, 1, 0]
    if np.any(det <= 0):
        raise ScatterError("degenerate or inverted triangle")
    Jinv = np.linalg.inv(J)  # rows: dxi/d(x, z), deta/d(x, z)
    grads = np.einsum("iqr,erc->eiqc", dphi, Jinv)  # (ne, nbf, nq, 2)

    lam = np.column_stack([1 - q.points[:, 0] - q.points[:, 1], q.points])  # (nq, 3)
    xq = np.einsum("qa,ea->eq", lam, p[:, :, 0])
    zq = np.einsum("qa,ea->eq", lam, p[:, :, 1])
    n2, has_x, has_z = _region_arrays(mesh, materials)
    sx = np.ones(xq.shape, dtype=complex)
    sz = np.ones(zq.shape, dtype=complex)
    if pml is not None:
        if has_x.any():
            sx[has_x] = stretch(pml, "x", xq[has_x])
        if has_z.any():
            sz[has_z] = stretch(pml, "z", zq[has_z])
    cxx, czz, cm = scalar_coeffs(sx, sz)

    w = q.weights[None, :] * det[:, None]
    K = (np.einsum("eq,eiq,ejq->eij", w * cxx, grads[..., 0], grads[..., 0])
         + np.einsum("eq,eiq,ejq->eij", w * czz, grads[..., 1], grads[..., 1])
         - k0 ** 2 * np.einsum("eq,iq,jq->eij", w * cm * n2[:, None], phi, phi))
    sg = dm.elem_signs
    K *= sg[:, :, None] * sg[:, None, :]
    f = np.zeros((mesh.n_triangles, basis.size), dtype=complex)
    if source is not None:
        f = np.einsum("eq,iq->ei", w * np.asarray(source(xq, zq), dtype=complex), phi) * sg
    return K, f


def assemble_matrix(elem_dofs, elem_mats, n: int) -> sp.csr_matrix:
    nbf = elem_dofs.shape[1]
    rows = np.repeat(elem_dofs, nbf, axis=1).ravel()
    cols = np.tile(elem_dofs, (1, nbf)).ravel()
    return sp.csr_matrix((elem_mats.ravel(), (rows, cols)), shape=(n, n))


def apply_dirichlet(A: sp.spmatrix, b: np.ndarray, dofs) -> tuple[sp.csr_matrix, np.ndarray]:
    """Homogeneous Dirichlet: zero rows and columns, unit diagonal, zero RHS.

    Zeroing both keeps the pattern symmetric.
    """
    n = A.shape[0]
    fixed = np.zeros(n, dtype=bool)
    fixed[dofs] = True
    C = A.tocoo()
    keep = ~(fixed[C.row] | fixed[C.col])
    d = np.nonzero(fixed)[0]
    rows = np.concatenate([C.row[keep], d])
    cols = np.concatenate([C.col[keep], d])
    vals = np.concatenate([C.data[keep], np.ones(len(d), dtype=C.data.dtype)])
    A = sp.csr_matrix((vals, (rows, cols)), shape=A.shape)
    b = np.where(fixed, 0.0, b)
    return A, b


def assemble_scatter(mesh: Mesh2D, materials: dict, k0: float, p: int = 4, pml=None,
                     dirichlet=("xmin", "xmax"), source=None) -> ScatterSystem:
    """Assemble the unrestricted 2D system.

    Parameters
    ----------
    mesh : Mesh2D
    materials : dict
        Material name -> refractive index.
    k0 : float
        Free-space wavenumber (rad/um).
    p : int
        Polynomial order.
    pml : sequence of PmlSpec, optional
        Stretches; x-strips act in regions with ``"x"`` in ``Region.pml``,
        z-strips in regions with ``"z"``.
    dirichlet : sequence of str
        Boundary names carrying PEC.
    source : callable, optional
        Volume source ``f(x, z)``.
    """
    if mesh.n_triangles == 0:
        raise ScatterError("empty mesh")
    if not k0 >= 0:
        raise ScatterError("k0 must be non-negative")
    dm = dofmap_2d(mesh, p)
    K, f = element_matrices(mesh, dm, materials, k0, pml, source)
    A = assemble_matrix(dm.elem_dofs, K, dm.n_dofs)
    b = np.zeros(dm.n_dofs, dtype=complex)
    np.add.at(b, dm.elem_dofs, f)
    bad = set(dirichlet) - set(mesh.boundary_table.values())
    if bad:
        raise ScatterError(f"unknown boundary names {sorted(bad)}")
    dd = boundary_dofs(dm, mesh, tuple(dirichlet))
    A, b = apply_dirichlet(A, b, dd)
    return ScatterSystem(A, b, dm, mesh, float(k0), dd, K, f,
                         applied=[f"dirichlet:{','.join(dirichlet)}"])


def _condense(A: sp.csr_matrix, b, interior):
    """Schur complement onto the non-interior unknowns.

    ``interior`` unknowns couple only within their element, so ``A_II`` is
    block diagonal and cheap to factor.
    """
    n = A.shape[0]
    mask = np.zeros(n, dtype=bool)
    mask[interior] = True
    I, R = np.nonzero(mask)[0], np.nonzero(~mask)[0]
    A = A.tocsr()
    lu = spla.splu(A[I][:, I].tocsc())
    A_RI = A[R][:, I]
    X = lu.solve(A[I][:, R].toarray())
    S = A[R][:, R] - sp.csr_matrix(A_RI @ X)
    g = b[R] - A_RI @ lu.solve(b[I])

    def expand(xr):
        x = np.empty(n, dtype=complex)
        x[R] = xr
        x[I] = lu.solve(b[I] - A[I][:, R] @ xr)
        return x

    return S.tocsc(), g, expand


def solve(sys: ScatterSystem, method: str = "direct", condense: bool = False) -> ScatterSolution:
    """Solve the system.

    Parameters
    ----------
    method : {"direct", "gmres"}
        Sparse LU, or GMRES with Jacobi preconditioning (rtol 1e-10).
    condense : bool
        Eliminate element-interior (face) dofs first.
    """
    A = sys.matrix.tocsc()
    b = sys.rhs
    expand = None
    if condense and sys.dofmap.basis.n_face:
        interior = _unknown_ids(sys, sys.dofmap.face_dofs().ravel())
        A, b, expand = _condense(A, b, interior)
    if method == "direct":
        try:
            x = spla.splu(A).solve(b)
        except RuntimeError as exc:
            raise ScatterError(f"singular system: {exc}; {_diagnose(sys)}") from exc
    elif method == "gmres":
        d = A.diagonal()
        if np.any(d == 0):
            raise ScatterError(f"zero diagonal, Jacobi preconditioner undefined; {_diagnose(sys)}")
        M = sp.diags(1.0 / d)
        x, info = spla.gmres(A, b, M=M, rtol=GMRES_RTOL, atol=0.0, restart=200, maxiter=50)
        if info != 0:
            raise ScatterError(f"GMRES did not converge (info={info})")
    else:
        raise ValueError(f"unknown solver {method!r}")
    if not np.all(np.isfinite(x)):
        raise ScatterError(f"non-finite solution; {_diagnose(sys)}")
    if expand is not None:
        x = expand(x)
    nb = np.linalg.norm(sys.rhs)
    res = np.linalg.norm(sys.matrix @ x - sys.rhs) / nb if nb > 0 else np.linalg.norm(x)
    return ScatterSolution(x, sys, float(res), method + ("+condensed" if expand else ""))


def _unknown_ids(sys, full_dofs):
    """Positions of full-space dofs in the unknown numbering."""
    full_dofs = np.asarray(full_dofs)
    if sys.unknown_dofs is None:
        return full_dofs
    pos = np.full(sys.n_full, -1)
    kept = sys.unknown_dofs >= 0
    pos[sys.unknown_dofs[kept]] = np.nonzero(kept)[0]
    out = pos[full_dofs]
    if np.any(out < 0):
        raise ScatterError("requested dofs are constrained by a port")
    return out


def describe_unknown(sys, k: int) -> str:
    if sys.unknown_dofs is None:
        return sys.dofmap.describe(k)
    d = int(sys.unknown_dofs[k])
    if d >= 0:
        return sys.dofmap.describe(d)
    for port in sys.ports:
        if k in port.masters:
            return f"mode {int(np.nonzero(port.masters == k)[0][0])} of port {port.name!r}"
    return "port mode"


def _diagnose(sys) -> str:
    """Locate an empty or smallest-diagonal row and name its mesh entity."""
    A = sys.matrix.tocsr()
    empty = np.nonzero(np.diff(A.indptr) == 0)[0]
    k = int(empty[0]) if len(empty) else int(np.argmin(np.abs(A.diagonal())))
    return f"suspect unknown {k}: {describe_unknown(sys, k)}"
