"""Structured triangular meshes for slab waveguide problems.

Coordinates are ``(x, z)`` in micrometres: ``x`` is transverse, ``z`` is the
propagation direction. Ports sit at ``z = 0`` (input) and ``z = L``
(output); evaluation lines sit one offset ``d`` inside each port. In the
PML-backed layout the input line doubles as the current-plane source and
z-PML strips are appended beyond both lines.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from . import vtk

PORT_LINES = ("gamma_in", "gamma_out")
EVAL_LINES = ("gamma_in_e", "gamma_out_e")
LINE_PAIRS = {"gamma_in": "gamma_in_e", "gamma_out": "gamma_out_e"}


class MeshError(ValueError):
    pass


@dataclass(frozen=True)
class Region:
    name: str
    material: str
    pml: str = ""  # "", "x", "z" or "xz"


@dataclass(frozen=True)
class SlabGeometry:
    """Symmetric slab (optionally with a core-width step) in micrometres.

    ``cladding_extent`` is measured from the widest core edge to the start of
    the x-PML. ``junction`` is the z position of the core-width change and
    defaults to ``domain_length / 2`` when ``second_core_width`` is set.
    ``layout`` is ``"wpbc"`` (domain truncated at the ports) or ``"pml"``
    (ports backed by z-PML strips of width ``pml_width_z``).
    """

    core_width: float = 1.0
    cladding_extent: float = 3.0
    pml_width_x: float = 1.0
    domain_length: float = 2.0
    element_size: float = 0.155
    eval_offset: float | None = None
    second_core_width: float | None = None
    junction: float | None = None
    pml_width_z: float = 1.0
    layout: str = "wpbc"

    @property
    def eval_distance(self) -> float:
        return self.element_size if self.eval_offset is None else self.eval_offset

    @property
    def junction_z(self) -> float | None:
        if self.second_core_width is None:
            return None
        return 0.5 * self.domain_length if self.junction is None else self.junction

    @property
    def cladding_edge(self) -> float:
        half = 0.5 * max(self.core_width, self.second_core_width or 0.0)
        return half + self.cladding_extent

    def validate(self):
        positive = {
            "core_width": self.core_width,
            "cladding_extent": self.cladding_extent,
            "pml_width_x": self.pml_width_x,
            "domain_length": self.domain_length,
            "element_size": self.element_size,
            "eval_offset": self.eval_distance,
        }
        if self.layout == "pml":
            positive["pml_width_z"] = self.pml_width_z
        if self.second_core_width is not None:
            positive["second_core_width"] = self.second_core_width
        for name, value in positive.items():
            if not value > 0:
                raise MeshError(f"{name} must be positive, got {value}")
        if self.layout not in ("wpbc", "pml"):
            raise MeshError(f"unknown layout {self.layout!r}")
        if self.eval_distance >= self.domain_length:
            raise MeshError(
                f"eval offset {self.eval_distance} must be smaller than the "
                f"port-to-port distance {self.domain_length}")
        zd = self.junction_z
        if zd is not None and not 0 < zd < self.domain_length:
            raise MeshError(f"junction z={zd} must lie strictly between the ports")


@dataclass
class Mesh2D:
    nodes: np.ndarray  # (nn, 2) columns x, z
    triangles: np.ndarray  # (nt, 3)
    triangle_tags: np.ndarray  # (nt,)
    boundary_edges: np.ndarray  # (nb, 2)
    boundary_tags: np.ndarray  # (nb,)
    region_table: dict[int, Region]
    boundary_table: dict[int, str]
    line_table: dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    def signed_areas(self) -> np.ndarray:
        p = self.nodes[self.triangles]
        d1, d2 = p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    @cached_property
    def edge_triangles(self) -> dict[tuple[int, int], list[int]]:
        """Map sorted node pair -> triangles sharing that edge."""
        out: dict[tuple[int, int], list[int]] = {}
        for t, tri in enumerate(self.triangles.tolist()):
            for a, b in ((tri[0], tri[1]), (tri[1], tri[2]), (tri[2], tri[0])):
                out.setdefault((min(a, b), max(a, b)), []).append(t)
        return out

    def boundary_nodes(self, names=None) -> np.ndarray:
        ids = [k for k, v in self.boundary_table.items() if names is None or v in names]
        mask = np.isin(self.boundary_tags, ids)
        return np.unique(self.boundary_edges[mask])

    def line(self, tag: str) -> np.ndarray:
        try:
            return self.line_table[tag]
        except KeyError:
            raise MeshError(f"unknown line {tag!r}; have {sorted(self.line_table)}") from None

    def check(self):
        """Raise :class:`MeshError` if a structural invariant is violated."""
        if np.any(self.signed_areas() <= 0):
            raise MeshError("triangle with non-positive orientation")
        et = self.edge_triangles
        for a, b in self.boundary_edges.tolist():
            if len(et.get((min(a, b), max(a, b)), [])) != 1:
                raise MeshError(f"boundary edge ({a}, {b}) not owned by exactly one triangle")
        n_bnd = sum(1 for tris in et.values() if len(tris) == 1)
        if any(len(tris) > 2 for tris in et.values()) or n_bnd != len(self.boundary_edges):
            raise MeshError("mesh is not conforming")
        for port, ev in LINE_PAIRS.items():
            if port in self.line_table and ev in self.line_table:
                xp = self.nodes[self.line_table[port], 0]
                xe = self.nodes[self.line_table[ev], 0]
                if xp.shape != xe.shape or np.max(np.abs(xp - xe)) > 1e-12:
                    raise MeshError(f"nodes of {port} and {ev} do not match")

    def to_vtk(self, path, point_data=None, cell_data=None):
        cells = dict(cell_data or {})
        cells.setdefault("region", self.triangle_tags)
        vtk.write_unstructured(path, self.nodes, self.triangles, point_data, cells)


@dataclass
class Mesh1D:
    nodes: np.ndarray  # (n,) x coordinates, strictly increasing
    segments: np.ndarray  # (n - 1, 2)
    segment_tags: np.ndarray  # (n - 1,)
    region_table: dict[int, Region]
    source_nodes: np.ndarray | None = None  # 2D node ids of a trace
    z: float | None = None

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def length(self) -> float:
        return float(self.nodes[-1] - self.nodes[0])


def uniform_line(x0, x1, n, material="core", name=None) -> Mesh1D:
    """Homogeneous 1D mesh with ``n`` equal segments."""
    x = np.linspace(x0, x1, n + 1)
    seg = np.column_stack([np.arange(n), np.arange(1, n + 1)])
    region = Region(name or material, material)
    return Mesh1D(x, seg, np.zeros(n, dtype=int), {0: region})


def layered_line(breaks, materials, h, pml=None) -> Mesh1D:
    """1D mesh over consecutive layers ``[breaks[i], breaks[i+1]]``.

    Parameters
    ----------
    breaks : sequence of float
        Increasing layer boundaries.
    materials : sequence of str
        One material name per layer.
    h : float
        Target element size; every layer gets ``ceil(width / h)`` segments.
    pml : sequence of bool, optional
        Marks layers that are x-PML.
    """
    pml = pml or [False] * len(materials)
    regions: dict[tuple, int] = {}
    xs, tags = [breaks[0]], []
    for a, b, mat, is_pml in zip(breaks[:-1], breaks[1:], materials, pml):
        n = _n_cells(b - a, h)
        xs.extend(np.linspace(a, b, n + 1)[1:])
        key = (mat, "x" if is_pml else "")
        tags.extend([regions.setdefault(key, len(regions))] * n)
    x = np.array(xs)
    n = len(x) - 1
    table = {t: Region(f"{m}{'_pml' + p if p else ''}", m, p) for (m, p), t in regions.items()}
    seg = np.column_stack([np.arange(n), np.arange(1, n + 1)])
    return Mesh1D(x, seg, np.array(tags), table)


def _n_cells(width, h):
    return max(1, math.ceil(width / h - 1e-9))


def _graded(breaks, h):
    coords = [breaks[0]]
    for a, b in zip(breaks[:-1], breaks[1:]):
        coords.extend(np.linspace(a, b, _n_cells(b - a, h) + 1)[1:])
    return np.array(coords)


def _breakpoints(values, h, what):
    vals = np.unique(np.round(np.asarray(values, dtype=float), 12))
    gaps = np.diff(vals)
    if np.any(gaps < 0.25 * h):
        i = int(np.argmin(gaps))
        raise MeshError(
            f"{what} positions {vals[i]} and {vals[i + 1]} are closer than a quarter of "
            f"the element size {h}; refine the element size or move the lines")
    return vals


def build_slab_mesh(geom: SlabGeometry) -> Mesh2D:
    """Conforming structured mesh of a slab geometry.

    Every named line (ports, evaluation lines) falls on a node row, so the
    node x-coordinates of a port and its evaluation line coincide exactly.
    Raises :class:`MeshError` on invalid geometry.
    """
    geom.validate()
    h = geom.element_size
    L, d = geom.domain_length, geom.eval_distance
    xc = geom.cladding_edge
    xp = xc + geom.pml_width_x
    halfs = [0.5 * geom.core_width]
    if geom.second_core_width is not None:
        halfs.append(0.5 * geom.second_core_width)
    xb = _breakpoints([-xp, -xc, xc, xp] + [s * a for a in halfs for s in (-1, 1)], h, "x")
    line_z = {"gamma_in": 0.0, "gamma_in_e": d, "gamma_out_e": L - d, "gamma_out": L}
    zvals = list(line_z.values())
    zd = geom.junction_z
    if zd is not None:
        zvals.append(zd)
    if geom.layout == "pml":
        zvals += [-geom.pml_width_z, L + geom.pml_width_z]
    zb = _breakpoints(zvals, h, "z")

    x = _graded(xb, h)
    z = _graded(zb, h)
    nx, nz = len(x), len(z)
    X, Z = np.meshgrid(x, z, indexing="xy")  # node id = j * nx + i
    nodes = np.column_stack([X.ravel(), Z.ravel()])

    i, j = np.meshgrid(np.arange(nx - 1), np.arange(nz - 1), indexing="xy")
    i, j = i.ravel(), j.ravel()
    n00 = j * nx + i
    n10, n01, n11 = n00 + 1, n00 + nx, n00 + nx + 1
    triangles = np.empty((2 * len(n00), 3), dtype=np.int64)
    triangles[0::2] = np.column_stack([n00, n10, n11])
    triangles[1::2] = np.column_stack([n00, n11, n01])

    xm = 0.5 * (x[i] + x[i + 1])
    zm = 0.5 * (z[j] + z[j + 1])
    half_w = np.full_like(zm, 0.5 * geom.core_width)
    second = np.zeros(len(zm), dtype=bool)
    if zd is not None:
        second = zm > zd
        half_w[second] = 0.5 * geom.second_core_width
    in_core = np.abs(xm) < half_w
    pml_x = np.abs(xm) > xc
    pml_z = (zm < 0) | (zm > L)

    regions: dict[Region, int] = {}
    cell_tags = np.empty(len(xm), dtype=np.int64)
    for k in range(len(xm)):
        mat = "core" if in_core[k] else "clad"
        name = "core2" if in_core[k] and second[k] else mat
        pml = ("x" if pml_x[k] else "") + ("z" if pml_z[k] else "")
        if pml:
            name = f"{name}_pml{pml}"
        reg = Region(name, mat, pml)
        cell_tags[k] = regions.setdefault(reg, len(regions))
    triangle_tags = np.repeat(cell_tags, 2)

    btable = {0: "xmin", 1: "xmax", 2: "zmin", 3: "zmax"}
    bedges, btags = [], []
    col = np.arange(nz - 1) * nx
    bedges += [np.column_stack([col, col + nx]), np.column_stack([col + nx - 1, col + 2 * nx - 1])]
    btags += [np.full(nz - 1, 0), np.full(nz - 1, 1)]
    row = np.arange(nx - 1)
    top = (nz - 1) * nx
    bedges += [np.column_stack([row, row + 1]), np.column_stack([top + row, top + row + 1])]
    btags += [np.full(nx - 1, 2), np.full(nx - 1, 3)]

    lines = {}
    for name, zl in line_z.items():
        jl = int(np.argmin(np.abs(z - zl)))
        lines[name] = jl * nx + np.arange(nx)

    mesh = Mesh2D(
        nodes=nodes,
        triangles=triangles,
        triangle_tags=triangle_tags,
        boundary_edges=np.vstack(bedges).astype(np.int64),
        boundary_tags=np.concatenate(btags),
        region_table={t: r for r, t in regions.items()},
        boundary_table=btable,
        line_table=lines,
    )
    return mesh


def extract_trace(mesh: Mesh2D, line_tag: str) -> Mesh1D:
    """1D mesh of a named line, ordered by increasing x.

    Each segment inherits the region of an adjacent triangle, preferring
    triangles outside z-PML regions and, for interior lines, the +z side.
    """
    ids = mesh.line(line_tag)
    order = np.argsort(mesh.nodes[ids, 0], kind="stable")
    ids = ids[order]
    x = mesh.nodes[ids, 0]
    if np.any(np.diff(x) <= 0):
        raise MeshError(f"line {line_tag!r} is not a simple transverse line")
    zline = float(mesh.nodes[ids[0], 1])
    et = mesh.edge_triangles
    centroids_z = mesh.nodes[mesh.triangles, 1].mean(axis=1)
    tags = []
    for a, b in zip(ids[:-1], ids[1:]):
        tris = et.get((min(a, b), max(a, b)))
        if not tris:
            raise MeshError(f"line {line_tag!r} does not follow mesh edges")

        def rank(t):
            reg = mesh.region_table[int(mesh.triangle_tags[t])]
            return ("z" in reg.pml, centroids_z[t] < zline)

        t = min(tris, key=rank)
        tags.append(int(mesh.triangle_tags[t]))
    n = len(ids)
    seg = np.column_stack([np.arange(n - 1), np.arange(1, n)])
    return Mesh1D(x.copy(), seg, np.array(tags), dict(mesh.region_table), ids, zline)


def write_mesh_text(mesh: Mesh2D, path):
    """Write the plain-text mesh format read by :func:`read_mesh_text`."""
    with open(path, "w") as f:
        f.write(f"nodes {mesh.n_nodes}\n")
        for k, (x, z) in enumerate(mesh.nodes):
            f.write(f"{k} {float(x)!r} {float(z)!r}\n")
        f.write(f"triangles {mesh.n_triangles}\n")
        for k, (tri, tag) in enumerate(zip(mesh.triangles, mesh.triangle_tags)):
            f.write(f"{k} {tri[0]} {tri[1]} {tri[2]} {tag}\n")
        f.write(f"edges {len(mesh.boundary_edges)}\n")
        for k, (e, tag) in enumerate(zip(mesh.boundary_edges, mesh.boundary_tags)):
            f.write(f"{k} {e[0]} {e[1]} {tag}\n")
        f.write(f"regions {len(mesh.region_table)}\n")
        for tag, reg in sorted(mesh.region_table.items()):
            f.write(f"{tag} {reg.name} {reg.material} {reg.pml or '-'}\n")
        f.write(f"boundaries {len(mesh.boundary_table)}\n")
        for tag, name in sorted(mesh.boundary_table.items()):
            f.write(f"{tag} {name}\n")
        f.write(f"lines {len(mesh.line_table)}\n")
        for name, ids in mesh.line_table.items():
            f.write(f"{name} {len(ids)} {' '.join(map(str, ids))}\n")


def read_mesh_text(path) -> Mesh2D:
    """Read a mesh in the plain-text format.

    The file is a sequence of sections, each a header ``<name> <count>``
    followed by ``count`` lines::

        nodes N           id x z
        triangles M       id n1 n2 n3 tag
        edges K           id n1 n2 tag
        regions R         tag name material pml    (pml: -, x, z or xz)
        boundaries B      tag name
        lines L           name count id1 id2 ...

    ``regions``, ``boundaries`` and ``lines`` are optional; missing regions
    default to material ``mat<tag>`` without PML.
    """
    with open(path) as f:
        rows = [ln.split() for ln in f if ln.strip() and not ln.lstrip().startswith("#")]
    sections: dict[str, list[list[str]]] = {}
    k = 0
    while k < len(rows):
        head = rows[k]
        if len(head) != 2:
            raise MeshError(f"bad section header {' '.join(head)!r}")
        name, count = head[0], int(head[1])
        sections[name] = rows[k + 1:k + 1 + count]
        if len(sections[name]) != count:
            raise MeshError(f"section {name!r} truncated")
        k += 1 + count
    for req in ("nodes", "triangles", "edges"):
        if req not in sections:
            raise MeshError(f"missing section {req!r}")

    def by_id(rows, ncol, dtype):
        arr = np.array([[float(v) for v in r[:ncol + 1]] for r in rows])
        out = np.empty((len(rows), ncol), dtype=dtype)
        out[arr[:, 0].astype(int)] = arr[:, 1:]
        return out

    nodes = by_id(sections["nodes"], 2, float)
    tri = by_id(sections["triangles"], 4, np.int64)
    edg = by_id(sections["edges"], 3, np.int64)
    regions = {int(r[0]): Region(r[1], r[2], "" if r[3] == "-" else r[3])
               for r in sections.get("regions", [])}
    for tag in np.unique(tri[:, 3]):
        regions.setdefault(int(tag), Region(f"mat{tag}", f"mat{tag}"))
    btable = {int(r[0]): r[1] for r in sections.get("boundaries", [])}
    for tag in np.unique(edg[:, 2]):
        btable.setdefault(int(tag), f"b{tag}")
    lines = {r[0]: np.array([int(v) for v in r[2:2 + int(r[1])]]) for r in sections.get("lines", [])}
    return Mesh2D(nodes, tri[:, :3], tri[:, 3], edg[:, :2], edg[:, 2], regions, btable, lines)
