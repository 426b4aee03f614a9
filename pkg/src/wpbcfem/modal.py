"""1D scalar (TE) modal analysis on a port cross-section.

For a field ``E_y(x) exp(-j beta z)`` the discrete problem is the
generalized eigenproblem ``A e = -beta^2 B e`` with

    A_ij = int (1/s_x) phi_i' phi_j' - k0^2 n^2 s_x phi_i phi_j dx
    B_ij = int s_x phi_i phi_j dx

and homogeneous Dirichlet (PEC) ends. Both matrices are complex symmetric,
so eigenvectors of distinct eigenvalues are orthogonal under the
non-conjugated form ``e_m^T B e_n``.

Units: the factor ``1 / (omega mu0)`` is dropped throughout, so the modal
normalization constant is ``kappa_m = beta_m e_m^T B e_m``.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .basis import ShapeBasis, eval_shape
from .dofs import DofMap, dofmap_1d
from .mesh import Mesh1D
from .pml import stretch

log = logging.getLogger(__name__)

DENSE_LIMIT = 2000
TOL_DEGEN = 1e-8
# eigenvalue clusters tighter than this get a joint Ritz step
CLUSTER_TOL = 1e-4


class ModalError(RuntimeError):
    pass


@dataclass
class ModalSystem:
    A: sp.csr_matrix
    B: sp.csr_matrix
    M: sp.csr_matrix  # unweighted L2 mass on the free dofs
    free: np.ndarray  # free dofs within the 1D dof map
    dofmap: DofMap
    mesh: Mesh1D
    k0: float
    n_max: float

    @property
    def size(self) -> int:
        return len(self.free)

    def expand(self, vecs) -> np.ndarray:
        """Free-dof vectors -> full 1D dof vectors (zeros on Dirichlet ends)."""
        vecs = np.asarray(vecs)
        out = np.zeros((self.dofmap.n_dofs,) + vecs.shape[1:], dtype=complex)
        out[self.free] = vecs
        return out


@dataclass
class ModeSet:
    beta: np.ndarray  # (n,)
    coeffs: np.ndarray  # (N, n), one column per mode, free-dof space
    system: ModalSystem
    kappa: np.ndarray | None = None
    target: complex = 0j
    ordering: str = "descending Re(beta), ascending |Im(beta)|"
    usable: np.ndarray | None = field(default=None, repr=False)

    def __len__(self):
        return len(self.beta)

    @property
    def k0(self) -> float:
        return self.system.k0

    @property
    def B(self):
        return self.system.B

    def subset(self, n: int) -> "ModeSet":
        """First ``n`` modes in the stored order."""
        kap = None if self.kappa is None else self.kappa[:n].copy()
        use = None if self.usable is None else self.usable[:n].copy()
        return replace(self, beta=self.beta[:n].copy(), coeffs=self.coeffs[:, :n].copy(),
                       kappa=kap, usable=use)

    def full_coeffs(self) -> np.ndarray:
        return self.system.expand(self.coeffs)

    def residuals(self) -> np.ndarray:
        """``||A e + beta^2 B e|| / ||B e||`` per mode."""
        Ae = self.system.A @ self.coeffs
        Be = self.system.B @ self.coeffs
        r = Ae + Be * self.beta ** 2
        return np.linalg.norm(r, axis=0) / np.linalg.norm(Be, axis=0)


def assemble_modal(mesh: Mesh1D, materials: dict, k0: float, p: int = 4, pml=None) -> ModalSystem:
    """Assemble the 1D modal matrices.

    Parameters
    ----------
    mesh : Mesh1D
    materials : dict
        Material name -> refractive index.
    k0 : float
        Free-space wavenumber in rad/um.
    p : int
        Polynomial order.
    pml : sequence of PmlSpec, optional
        Only x-strips are used, and only in regions whose ``pml`` contains
        ``"x"``.
    """
    if mesh.n_nodes < 2 or len(mesh.segments) == 0:
        raise ModalError("empty mesh")
    if not k0 > 0:
        raise ModalError("k0 must be positive")
    dm = dofmap_1d(mesh, p)
    basis = ShapeBasis("segment", p)
    q = basis.quadrature()
    phi, dphi = eval_shape(basis, q.points)
    dphi = dphi[:, :, 0]

    seg = mesh.segments
    x0, x1 = mesh.nodes[seg[:, 0]], mesh.nodes[seg[:, 1]]
    h = x1 - x0
    xq = x0[:, None] + 0.5 * (1.0 + q.points[:, 0])[None, :] * h[:, None]

    n2 = np.empty(len(seg), dtype=complex)
    has_pml = np.zeros(len(seg), dtype=bool)
    for tag, region in mesh.region_table.items():
        sel = mesh.segment_tags == tag
        if not sel.any():
            continue
        if region.material not in materials:
            raise ModalError(f"no refractive index for material {region.material!r} "
                             f"(region {region.name!r})")
        n2[sel] = complex(materials[region.material]) ** 2
        has_pml[sel] = "x" in region.pml
    sx = np.ones_like(xq, dtype=complex)
    if pml is not None and has_pml.any():
        sx[has_pml] = stretch(pml, "x", xq[has_pml])

    sg = dm.elem_signs
    w = q.weights[None, :] * (0.5 * h)[:, None]  # (ne, nq)
    inv = (2.0 / h)[:, None, None]
    Kd = np.einsum("eq,iq,jq->eij", w / sx, dphi, dphi) * inv ** 2
    Mw = np.einsum("eq,iq,jq->eij", w * sx, phi, phi)
    M0 = np.einsum("eq,iq,jq->eij", w, phi, phi)
    S = sg[:, :, None] * sg[:, None, :]
    Ae = (Kd - k0 ** 2 * n2[:, None, None] * Mw) * S
    Be = Mw * S
    M0 = M0 * S

    rows = np.repeat(dm.elem_dofs, dm.basis.size, axis=1).ravel()
    cols = np.tile(dm.elem_dofs, (1, dm.basis.size)).ravel()
    N = dm.n_dofs

    def gather(vals):
        return sp.csr_matrix((vals.ravel(), (rows, cols)), shape=(N, N))

    ends = [int(np.argmin(mesh.nodes)), int(np.argmax(mesh.nodes))]
    free = np.setdiff1d(np.arange(N), ends)
    A, B, M = (gather(v)[free][:, free].tocsr() for v in (Ae, Be, M0))
    n_max = max(abs(np.real(complex(materials[r.material])))
                for t, r in mesh.region_table.items() if np.any(mesh.segment_tags == t))
    return ModalSystem(A, B, M, free, dm, mesh, float(k0), float(n_max))


def beta_from_eig(lam) -> np.ndarray:
    """``beta = sqrt(-lam)`` with Re >= 0, and Im <= 0 on the imaginary axis."""
    beta = np.sqrt(-np.asarray(lam, dtype=complex))
    on_axis = np.abs(beta.real) < 1e-12 * np.abs(beta)
    beta = np.where(on_axis & (beta.imag > 0), -beta, beta)
    return np.where(on_axis, 1j * beta.imag, beta)


def sort_modes(beta) -> np.ndarray:
    """Indices sorting by descending Re(beta), ties by ascending |Im(beta)|."""
    beta = np.asarray(beta)
    re = np.round(beta.real, 12)
    return np.lexsort((np.abs(beta.imag), -re))


def refine_pairs(sys: ModalSystem, lam, vec, steps: int = 2):
    """Polish eigenpairs by shifted inverse iteration.

    Each step solves ``(A - lam B) y = B e`` with a sparse LU and updates
    ``lam`` by the conjugated Rayleigh quotient, which stays well defined
    for nearly self-orthogonal PML modes.
    """
    A = sys.A.tocsc().astype(complex)
    B = sys.B.tocsc().astype(complex)
    lam = np.array(lam, dtype=complex)
    vec = np.array(vec, dtype=complex)
    for k in range(len(lam)):
        e = vec[:, k] / np.linalg.norm(vec[:, k])
        for _ in range(steps):
            try:
                y = spla.splu((A - lam[k] * B).tocsc()).solve(B @ e)
            except RuntimeError:  # shift is an exact eigenvalue
                break
            if not np.all(np.isfinite(y)):
                break
            e = y / np.linalg.norm(y)
            lam[k] = (e.conj() @ (A @ e)) / (e.conj() @ (B @ e))
        vec[:, k] = e
    return lam, vec


def _jacobi_symmetric(C, tol=1e-15, max_sweeps=30):
    """Diagonalize complex symmetric ``C`` by complex orthogonal rotations.

    Returns ``(d, Q)`` with ``Q^T Q = I`` to rounding and ``Q^T C Q``
    diagonal. Rotations with ``1 + t^2`` near zero are skipped.
    """
    C = np.array(C, dtype=complex)
    k = len(C)
    Q = np.eye(k, dtype=complex)
    for _ in range(max_sweeps):
        off = np.abs(C - np.diag(np.diag(C))).max(initial=0.0)
        if off <= tol * np.abs(np.diag(C)).max(initial=1.0):
            break
        for i in range(k - 1):
            for j in range(i + 1, k):
                b = C[i, j]
                if b == 0:
                    continue
                tau = (C[j, j] - C[i, i]) / (2 * b)
                r = np.sqrt(tau * tau + 1)
                den = tau + r if abs(tau + r) >= abs(tau - r) else tau - r
                t = 1.0 / den
                q = 1 + t * t
                if abs(q) < 1e-8:
                    continue
                c = 1 / np.sqrt(q)
                sn = t * c
                ci, cj = C[:, i].copy(), C[:, j].copy()
                C[:, i], C[:, j] = c * ci - sn * cj, sn * ci + c * cj
                ri, rj = C[i, :].copy(), C[j, :].copy()
                C[i, :], C[j, :] = c * ri - sn * rj, sn * ri + c * rj
                qi, qj = Q[:, i].copy(), Q[:, j].copy()
                Q[:, i], Q[:, j] = c * qi - sn * qj, sn * qi + c * qj
    return np.diag(C).copy(), Q


def symmetric_ritz(sys: ModalSystem, vec):
    """Rayleigh-Ritz on the span of ``vec`` that keeps the pencil symmetry.

    The basis is first made orthonormal in the non-conjugated ``B`` form,
    then the projected complex symmetric matrix is diagonalized with
    complex orthogonal rotations. The Ritz vectors therefore satisfy
    ``e_m^T B e_n = 0`` to rounding even for closely spaced eigenvalues,
    where independently computed eigenvectors only reach ``eps / gap``.
    """
    W = np.array(vec, dtype=complex)
    for k in range(W.shape[1]):
        w = W[:, k]
        if k:
            w = w - W[:, :k] @ (W[:, :k].T @ (sys.B @ w))
        nrm = np.sqrt(w @ (sys.B @ w))
        if abs(nrm) < 1e-13 * np.linalg.norm(w) * np.sqrt(spla.norm(sys.B, 1)):
            raise ModalError(f"Ritz basis vector {k} is self-orthogonal")
        W[:, k] = w / nrm
    C = W.T @ (sys.A @ W)
    lam, Q = _jacobi_symmetric(0.5 * (C + C.T))
    E = W @ Q
    E /= np.linalg.norm(E, axis=0)
    # conjugated Rayleigh quotient: no cancellation for small e^T B e
    lam = np.einsum("ik,ik->k", E.conj(), sys.A @ E) / np.einsum("ik,ik->k", E.conj(), sys.B @ E)
    return lam, E


def solve_modes(sys: ModalSystem, n_modes: int, target=None, method="auto",
                refine: int = 2, cluster_tol: float | None = CLUSTER_TOL) -> ModeSet:
    """Eigenpairs nearest ``target`` in the ``-beta^2`` plane.

    The default target ``-(k0 n_max)^2`` picks guided modes first.
    ``method`` is ``"dense"`` (standard eigensolver on ``B^-1 A``), ``"qz"``
    (generalized dense QZ), ``"arnoldi"`` (shift-invert) or ``"auto"``:
    dense up to ``DENSE_LIMIT`` dofs, Arnoldi above. ``refine`` inverse
    iteration steps are then applied to every pair, followed by a
    symmetry-preserving Rayleigh-Ritz step inside every cluster of
    eigenvalues closer than ``cluster_tol`` (relative, ``None`` to skip).
    """
    N = sys.size
    if not 1 <= n_modes <= N:
        raise ModalError(f"n_modes={n_modes} outside [1, {N}]")
    sigma = -(sys.k0 * sys.n_max) ** 2 if target is None else complex(target)
    if method == "auto":
        method = "dense" if N <= DENSE_LIMIT else "arnoldi"
    if method == "arnoldi" and n_modes >= N - 1:
        method = "dense"
    if method in ("dense", "qz"):
        if method == "qz":
            lam, vec = scipy.linalg.eig(sys.A.toarray(), sys.B.toarray())
        else:
            # B is a (weighted) mass matrix, hence nonsingular
            C = scipy.linalg.solve(sys.B.toarray(), sys.A.toarray())
            lam, vec = scipy.linalg.eig(C, overwrite_a=True, check_finite=False)
        if not np.all(np.isfinite(lam)):
            raise ModalError("dense eigensolver returned non-finite eigenvalues")
        pick = np.argsort(np.abs(lam - sigma), kind="stable")[:n_modes]
        lam, vec = lam[pick], vec[:, pick]
    elif method == "arnoldi":
        lu = spla.splu((sys.A - sigma * sys.B).tocsc().astype(complex))
        B = sys.B
        op = spla.LinearOperator((N, N), matvec=lambda v: lu.solve(B @ v), dtype=complex)
        try:
            nu, vec = spla.eigs(op, k=n_modes, which="LM", tol=1e-12, maxiter=500 * N)
        except spla.ArpackNoConvergence as exc:
            raise ModalError(f"Arnoldi did not converge: {exc}") from exc
        lam = sigma + 1.0 / nu
    else:
        raise ValueError(f"unknown eigensolver {method!r}")
    if refine:
        lam, vec = refine_pairs(sys, lam, vec, refine)
    if cluster_tol:
        Bv = sys.B @ vec
        rho = np.abs(np.einsum("ik,ik->k", vec, Bv)) / np.abs(np.einsum("ik,ik->k", vec.conj(), Bv))
        for g in _groups(lam, cluster_tol, rho):
            lam[g], vec[:, g] = symmetric_ritz(sys, vec[:, g])
    beta = beta_from_eig(lam)
    order = sort_modes(beta)
    return ModeSet(beta[order], vec[:, order], sys, target=sigma)


def _groups(beta2, tol, weight=None):
    """Union-find groups of eigenvalues closer than ``tol`` (relative).

    With ``weight`` the gap of pair ``(i, j)`` is scaled by
    ``sqrt(weight_i weight_j)`` before the comparison.
    """
    n = len(beta2)
    w = np.ones(n) if weight is None else np.sqrt(np.asarray(weight))
    parent = list(range(n))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i in range(n):
        for j in range(i + 1, n):
            gap = abs(beta2[i] - beta2[j]) * w[i] * w[j]
            if gap <= tol * max(abs(beta2[i]), abs(beta2[j])):
                parent[find(j)] = find(i)
    groups: dict[int, list[int]] = {}
    for i in range(n):
        groups.setdefault(find(i), []).append(i)
    return [g for g in groups.values() if len(g) > 1]


def orthogonalize_degenerate(ms: ModeSet, tol=TOL_DEGEN) -> ModeSet:
    """Make degenerate modes mutually orthogonal under ``e_m^T B e_n``.

    Unpivoted Gram-Schmidt inside each group of (numerically) equal
    ``beta^2``; non-degenerate modes are left untouched.
    """
    groups = _groups(ms.beta ** 2, tol)
    if not groups:
        return ms
    E = ms.coeffs.copy()
    B = ms.B
    bnorm = spla.norm(B, 1)
    for g in groups:
        for a, k in enumerate(g):
            for j in g[:a]:
                ej = E[:, j]
                self_prod = ej @ (B @ ej)
                if abs(self_prod) < 1e-13 * bnorm * np.vdot(ej, ej).real:
                    raise ModalError(f"mode {j} is self-orthogonal (e^T B e = 0); "
                                     "cannot orthogonalize its degenerate group")
                E[:, k] -= (ej @ (B @ E[:, k])) / self_prod * ej
    return replace(ms, coeffs=E, kappa=None, usable=None)


def compute_kappa(ms: ModeSet) -> np.ndarray:
    """``kappa_m = beta_m e_m^T B e_m``; stored on ``ms``.

    Modes with ``|kappa| < 1e-13 max|kappa|`` are flagged in ``ms.usable``.
    """
    E = ms.coeffs
    prod = np.einsum("im,im->m", E, ms.B @ E)
    kappa = ms.beta * prod
    big = np.max(np.abs(kappa)) if len(kappa) else 0.0
    ms.kappa = kappa
    ms.usable = np.abs(kappa) >= 1e-13 * big
    if not ms.usable.all():
        log.warning("modes %s have vanishing kappa", np.nonzero(~ms.usable)[0].tolist())
    return kappa


def biorthogonality_matrix(ms: ModeSet, conjugated: bool = False) -> np.ndarray:
    """Normalized modal cross-products ``beta_n e_m^T B e_n / sqrt|kappa_m kappa_n|``.

    With ``conjugated=True`` the left factor ``e_m`` is conjugated.
    """
    if ms.kappa is None:
        compute_kappa(ms)
    E = ms.coeffs
    left = E.conj() if conjugated else E
    C = (left.T @ (ms.B @ E)) * ms.beta[None, :]
    scale = np.sqrt(np.abs(ms.kappa))
    return C / np.outer(scale, scale)


def normalize_modes(ms: ModeSet) -> ModeSet:
    """Scale every mode to ``kappa = 1``.

    The remaining sign is fixed so that each mode's largest-magnitude
    coefficient has a positive real part; identical cross-sections thus give
    identical modes.
    """
    if ms.kappa is None:
        compute_kappa(ms)
    if not ms.usable.all():
        raise ModalError(f"cannot normalize unusable modes {np.nonzero(~ms.usable)[0].tolist()}")
    E = ms.coeffs / np.sqrt(ms.kappa)[None, :]
    idx = np.argmax(np.abs(E), axis=0)
    peak = E[idx, np.arange(E.shape[1])]
    E = E * np.where(peak.real < 0, -1.0, 1.0)[None, :]
    out = replace(ms, coeffs=E, kappa=None, usable=None)
    compute_kappa(out)
    return out


def prepare_modes(sys: ModalSystem, n_modes: int, target=None) -> ModeSet:
    """Solve, orthogonalize degenerate groups and normalize."""
    ms = solve_modes(sys, n_modes, target)
    ms = orthogonalize_degenerate(ms)
    compute_kappa(ms)
    return normalize_modes(ms)


def fmt_float(v) -> str:
    return repr(float(v) + 0.0)  # + 0.0 folds -0.0


def write_mode_table(ms: ModeSet, path, kappa=None):
    """CSV columns: index, re_beta, im_beta, re_kappa, im_kappa, residual."""
    kappa = ms.kappa if kappa is None else kappa
    if kappa is None:
        kappa = compute_kappa(ms)
    res = ms.residuals()
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["index", "re_beta", "im_beta", "re_kappa", "im_kappa", "residual"])
        for i, (b, k, r) in enumerate(zip(ms.beta, kappa, res)):
            w.writerow([i] + [fmt_float(v) for v in (b.real, b.imag, k.real, k.imag, r)])
