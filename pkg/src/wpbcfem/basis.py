"""Hierarchical H1 shape functions on segments and triangles.

The basis is of integrated-Legendre type. Vertex functions are the linear
hat functions; edge functions of order ``l`` restrict on their edge to

    phi_l(s) = (P_l(s) - P_{l-2}(s)) / sqrt(2 (2l - 1)),   s in [-1, 1],

and face (bubble) functions are ``l0 l1 l2 P_i(l1 - l0) P_j(2 l2 - 1)`` with
``i + j <= p - 3``. Functions are ordered vertices, edges (by edge, then by
order), face.

Reference elements:

* segment ``[-1, 1]``, vertices ``-1`` and ``+1``;
* triangle ``(0, 0), (1, 0), (0, 1)`` with barycentrics
  ``l0 = 1 - xi - eta``, ``l1 = xi``, ``l2 = eta`` and local edges
  ``(0, 1), (1, 2), (2, 0)``.

Edge functions are defined with the local edge direction. Callers that glue
elements together flip odd-order edge functions when the global direction
(lower node id to higher node id) disagrees; see :func:`edge_signs`.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from numpy.polynomial import Legendre, Polynomial
from scipy.special import roots_jacobi

TRIANGLE_EDGES = ((0, 1), (1, 2), (2, 0))


@dataclass(frozen=True)
class QuadRule:
    points: np.ndarray  # (nq, dim)
    weights: np.ndarray  # (nq,)

    @property
    def size(self) -> int:
        return len(self.weights)


@lru_cache(maxsize=None)
def _edge_polys(p: int):
    """Edge functions and their triangle kernels as power-basis polynomials."""
    edge, kern = [], []
    bubble = Polynomial([1.0, 0.0, -1.0])  # 1 - s^2
    for l in range(2, p + 1):
        leg = (Legendre.basis(l) - Legendre.basis(l - 2)) / np.sqrt(2.0 * (2 * l - 1))
        phi = leg.convert(kind=Polynomial)
        q, r = divmod(phi, bubble)
        assert np.allclose(r.coef, 0.0, atol=1e-12)
        edge.append(phi)
        kern.append(4.0 * q)
    return tuple(edge), tuple(kern)


@lru_cache(maxsize=None)
def _legendre_polys(n: int):
    return tuple(Legendre.basis(i).convert(kind=Polynomial) for i in range(n + 1))


def segment_rule(degree: int) -> QuadRule:
    """Gauss-Legendre rule on [-1, 1] exact for polynomials of ``degree``."""
    n = max(1, (degree + 2) // 2)
    x, w = np.polynomial.legendre.leggauss(n)
    return QuadRule(x[:, None], w)


def triangle_rule(degree: int) -> QuadRule:
    """Collapsed (Duffy) Gauss rule on the reference triangle.

    Uses Gauss-Legendre in one direction and Gauss-Jacobi(1, 0) in the
    collapsed direction, so the rule is exact for total ``degree``.
    """
    n = max(1, (degree + 2) // 2)
    u, wu = np.polynomial.legendre.leggauss(n)
    v, wv = roots_jacobi(n, 1.0, 0.0)
    U, V = np.meshgrid(u, v, indexing="ij")
    xi = 0.25 * (1.0 + U) * (1.0 - V)
    eta = 0.5 * (1.0 + V)
    w = np.outer(wu, wv) / 8.0
    return QuadRule(np.column_stack([xi.ravel(), eta.ravel()]), w.ravel())


@dataclass(frozen=True)
class ShapeBasis:
    """Hierarchical H1 basis of order ``order`` on a ``kind`` element."""

    kind: str  # "segment" | "triangle"
    order: int

    def __post_init__(self):
        if self.kind not in ("segment", "triangle"):
            raise ValueError(f"unknown element kind {self.kind!r}")
        if self.order < 1:
            raise ValueError("polynomial order must be >= 1")

    @property
    def n_vertex(self) -> int:
        return 2 if self.kind == "segment" else 3

    @property
    def n_edge(self) -> int:
        """Interior functions per edge."""
        return self.order - 1

    @property
    def n_face(self) -> int:
        if self.kind == "segment":
            return 0
        return (self.order - 1) * (self.order - 2) // 2

    @property
    def size(self) -> int:
        if self.kind == "segment":
            return self.order + 1
        return 3 + 3 * self.n_edge + self.n_face

    def quadrature(self, degree: int | None = None) -> QuadRule:
        """Default rule is exact to degree ``2p + 2``."""
        degree = 2 * self.order + 2 if degree is None else degree
        if self.kind == "segment":
            return segment_rule(degree)
        return triangle_rule(degree)

    def edge_orders(self) -> np.ndarray:
        """Polynomial order of every function (1 for vertices, 0 for faces)."""
        orders = [1] * self.n_vertex
        n_edges = 1 if self.kind == "segment" else 3
        for _ in range(n_edges):
            orders.extend(range(2, self.order + 1))
        orders.extend([0] * self.n_face)
        return np.array(orders)

    def face_indices(self) -> np.ndarray:
        return np.arange(self.size - self.n_face, self.size)


def eval_shape(basis: ShapeBasis, points) -> tuple[np.ndarray, np.ndarray]:
    """Values and reference gradients of all basis functions.

    Parameters
    ----------
    basis : ShapeBasis
    points : array_like, shape (nq, dim)
        Reference coordinates.

    Returns
    -------
    values : ndarray, shape (nbf, nq)
    grads : ndarray, shape (nbf, nq, dim)
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if basis.kind == "segment":
        return _eval_segment(basis.order, pts[:, 0])
    return _eval_triangle(basis.order, pts[:, 0], pts[:, 1])


def _eval_segment(p, s):
    edge, _ = _edge_polys(p)
    vals = [0.5 * (1.0 - s), 0.5 * (1.0 + s)]
    ders = [np.full_like(s, -0.5), np.full_like(s, 0.5)]
    for phi in edge:
        vals.append(phi(s))
        ders.append(phi.deriv()(s))
    return np.array(vals), np.array(ders)[:, :, None]


def _eval_triangle(p, xi, eta):
    lam = np.array([1.0 - xi - eta, xi, eta])
    dlam = np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]])
    nq = len(xi)
    vals = [lam[0], lam[1], lam[2]]
    grads = [np.tile(dlam[i], (nq, 1)) for i in range(3)]

    _, kern = _edge_polys(p)
    for a, b in TRIANGLE_EDGES:
        s = lam[b] - lam[a]
        ds = dlam[b] - dlam[a]
        prod = lam[a] * lam[b]
        dprod = np.outer(lam[b], dlam[a]) + np.outer(lam[a], dlam[b])
        for k in kern:
            kv, kd = k(s), k.deriv()(s)
            vals.append(prod * kv)
            grads.append(dprod * kv[:, None] + (prod * kd)[:, None] * ds)

    if p >= 3:
        leg = _legendre_polys(p - 3)
        bub = lam[0] * lam[1] * lam[2]
        dbub = (np.outer(lam[1] * lam[2], dlam[0]) + np.outer(lam[0] * lam[2], dlam[1])
                + np.outer(lam[0] * lam[1], dlam[2]))
        s, t = lam[1] - lam[0], 2.0 * lam[2] - 1.0
        ds, dt = dlam[1] - dlam[0], 2.0 * dlam[2]
        for n in range(p - 2):
            for i in range(n, -1, -1):
                j = n - i
                Li, dLi = leg[i](s), leg[i].deriv()(s)
                Lj, dLj = leg[j](t), leg[j].deriv()(t)
                vals.append(bub * Li * Lj)
                grads.append(dbub * (Li * Lj)[:, None]
                             + (bub * dLi * Lj)[:, None] * ds
                             + (bub * Li * dLj)[:, None] * dt)
    return np.array(vals), np.array(grads)


def trace_dofs(basis: ShapeBasis, edge_index: int) -> np.ndarray:
    """Local indices of the functions whose trace on an edge is non-zero.

    Ordered as the two edge vertices (in local edge direction), then the
    edge-interior functions by increasing order, i.e. the same order as the
    segment basis of the same polynomial order.
    """
    if basis.kind == "segment":
        if edge_index not in (0, 1):
            raise IndexError(f"segment has no boundary point {edge_index}")
        return np.array([edge_index])
    if not 0 <= edge_index < 3:
        raise IndexError(f"triangle has no edge {edge_index}")
    a, b = TRIANGLE_EDGES[edge_index]
    start = 3 + edge_index * basis.n_edge
    return np.concatenate([[a, b], np.arange(start, start + basis.n_edge)])


def edge_point(edge_index: int, s) -> np.ndarray:
    """Reference triangle points on local edge ``edge_index`` at parameter ``s``."""
    s = np.asarray(s, dtype=float)
    a, b = TRIANGLE_EDGES[edge_index]
    verts = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    return np.outer(0.5 * (1.0 - s), verts[a]) + np.outer(0.5 * (1.0 + s), verts[b])


def edge_signs(basis: ShapeBasis, vertex_ids) -> np.ndarray:
    """Per-element sign vectors making edge functions globally continuous.

    Parameters
    ----------
    basis : ShapeBasis
    vertex_ids : array_like, shape (ne, nv)
        Global node ids of the element vertices in local order.

    Returns
    -------
    ndarray, shape (ne, nbf)
        +1 or -1; odd-order edge functions flip when the local edge runs from
        the higher to the lower global node id.
    """
    vid = np.atleast_2d(np.asarray(vertex_ids))
    ne = vid.shape[0]
    signs = np.ones((ne, basis.size))
    edges = ((0, 1),) if basis.kind == "segment" else TRIANGLE_EDGES
    odd = np.array([(-1.0) ** l for l in range(2, basis.order + 1)])
    for k, (a, b) in enumerate(edges):
        rev = vid[:, a] > vid[:, b]
        start = basis.n_vertex + k * basis.n_edge
        signs[rev, start:start + basis.n_edge] = odd
    return signs
