import math

import numpy as np
import pytest

from oracles import strip_betas
from wpbcfem.experiments import SlabProblem, guided_indices, port_modes, run_wpbc
from wpbcfem.mesh import SlabGeometry, build_slab_mesh, layered_line, uniform_line
from wpbcfem.modal import assemble_modal, compute_kappa, prepare_modes, solve_modes
from wpbcfem.postproc import extract_port_amplitudes, trace_field
from wpbcfem.scatter import ScatterError, assemble_scatter, solve
from wpbcfem.wpbc import (Port, PortError, add_load, apply_wpbc, build_restriction,
                          current_plane_source, group_port_patches, make_port,
                          port_boundary_matrix, port_source_vector, port_trace,
                          restrict_element)

K0 = 2 * math.pi / 1.55


# ---------------------------------------------------------------- restriction

def test_identity_restriction():
    D = build_restriction(np.arange(10, 16), np.eye(6))
    assert np.array_equal(D.D, np.eye(6))
    K = np.random.default_rng(0).standard_normal((6, 6))
    assert np.array_equal(restrict_element(K, D.D), K)


def test_restriction_50_by_3():
    line = layered_line([-2.0, -0.5, 0.5, 2.0], ["clad", "core", "clad"], 0.08)
    sys = assemble_modal(line, {"core": 2.5, "clad": 1.5}, K0, 1)
    assert sys.size == 50
    ms = solve_modes(sys, 3)
    R = build_restriction(np.arange(50), ms)
    assert R.D.shape == (50, 3) and R.n_modes == 3
    assert np.linalg.matrix_rank(R.D) == 3


def test_restriction_errors():
    rng = np.random.default_rng(1)
    V = rng.standard_normal((8, 3))
    V[:, 2] = 2.0 * V[:, 0]
    with pytest.raises(PortError, match="columns 0 and 2"):
        build_restriction(np.arange(8), V)
    with pytest.raises(PortError, match="exceed"):
        build_restriction(np.arange(3), rng.standard_normal((3, 4)))
    with pytest.raises(PortError, match="repeated"):
        build_restriction([0, 1, 1], rng.standard_normal((3, 2)))
    with pytest.raises(PortError, match="shape"):
        build_restriction(np.arange(4), rng.standard_normal((5, 2)))


def test_restriction_signs():
    R = build_restriction([3, 4], np.array([[1.0], [2.0]]), signs=[1, -1])
    assert np.array_equal(R.D, np.array([[1.0], [-2.0]]))


def test_restrict_element_hermitian_and_load():
    rng = np.random.default_rng(2)
    X = rng.standard_normal((6, 6)) + 1j * rng.standard_normal((6, 6))
    K = X + X.conj().T
    D = rng.standard_normal((6, 4)) + 1j * rng.standard_normal((6, 4))
    f = rng.standard_normal(6) + 0j
    Kr, fr = restrict_element(K, D, f)
    assert np.abs(Kr - Kr.conj().T).max() < 1e-13
    assert np.allclose(fr, D.conj().T @ f)
    with pytest.raises(ValueError):
        restrict_element(K, D[:5])
    with pytest.raises(ValueError):
        restrict_element(K, D, f[:4])


# ---------------------------------------------------------------- port terms

def _strip_port(n_modes, normalize=True):
    sys = assemble_modal(uniform_line(0.0, 1.0, 32, "air"), {"air": 1.0}, K0, 4)
    ms = prepare_modes(sys, n_modes) if normalize else solve_modes(sys, n_modes)
    if not normalize:
        compute_kappa(ms)
    return Port("p", -1, 0.0, ms, None)


def test_port_matrix_hermitian_case_diagonal():
    port = _strip_port(8)
    M = port_boundary_matrix(port)
    off = np.abs(M - np.diag(np.diag(M))).max()
    assert off < 1e-10 * np.abs(np.diag(M)).max()
    E = port.modes.coeffs
    ref = 1j * port.modes.beta * np.einsum("im,im->m", E.conj(), port.modes.B @ E)
    assert np.allclose(np.diag(M), ref, rtol=1e-13)
    # propagating kappa-normalized real modes: M_kk = j
    assert abs(M[0, 0] - 1j) < 1e-12


def test_port_matrix_sin_profile():
    port = _strip_port(1, normalize=False)
    ms = port.modes
    full = ms.system.expand(ms.coeffs[:, 0])
    x = ms.system.mesh.nodes
    i = int(np.argmin(np.abs(x - 0.5)))
    ms.coeffs[:, 0] *= np.sin(np.pi * x[i]) / full[i]
    M = port_boundary_matrix(port)
    beta = strip_betas(K0, 1.0, 1)[0]
    assert abs(M[0, 0] - 1j * beta * 0.5) < 1e-10 * abs(beta)


def test_port_matrix_pml_dense_symmetric_pattern():
    prob = SlabProblem()
    mesh = build_slab_mesh(prob.geometry)
    ms = port_modes(prob, mesh, "gamma_in", 20)
    port = Port("gamma_in", -1, 0.0, ms, None)
    M = port_boundary_matrix(port)
    nz = M != 0
    assert nz.all() and np.array_equal(nz, nz.T)
    d = np.sqrt(np.abs(np.diag(M)))
    C = np.abs(M) / np.outer(d, d)
    np.fill_diagonal(C, 0.0)
    # PML modes couple strongly; guided modes stay nearly orthogonal
    assert np.mean(C > 1e-3) > 0.5
    assert np.abs(M.imag).max() > 0 and np.abs(M.real).max() > 0


def test_port_matrix_requires_kappa():
    sys = assemble_modal(uniform_line(0.0, 1.0, 8, "air"), {"air": 1.0}, K0, 2)
    with pytest.raises(PortError, match="kappa"):
        port_boundary_matrix(Port("p", -1, 0.0, solve_modes(sys, 2), None))


def test_source_vector():
    port = _strip_port(6)
    assert np.array_equal(port_source_vector(port), np.zeros(6))
    port.incident = np.zeros(6, dtype=complex)
    port.incident[2] = 1.0
    port.is_input = True
    v = port_source_vector(port)
    M = port_boundary_matrix(port)
    assert abs(v[2] - 2 * M[2, 2]) < 1e-14
    assert np.abs(np.delete(v, 2)).max() < 1e-10 * abs(v[2])
    a1 = np.array([0.5, 2.0, 2.5, 0, 0, 0], dtype=complex)
    a2 = np.array([0, 1j, 0, 0, -1, 0], dtype=complex)
    vs = []
    for a in (a1, a2, 3 * a1 - 2j * a2):
        port.incident = a
        vs.append(port_source_vector(port))
    assert np.allclose(vs[2], 3 * vs[0] - 2j * vs[1], rtol=0, atol=1e-13)
    port.is_input = False
    with pytest.raises(PortError, match="output-only"):
        port_source_vector(port)


# ---------------------------------------------------------------- 2D setup

@pytest.fixture(scope="module")
def small():
    prob = SlabProblem(geometry=SlabGeometry(core_width=1.0, cladding_extent=1.0,
                                             pml_width_x=0.5, domain_length=1.0,
                                             element_size=0.25), order=3)
    mesh = build_slab_mesh(prob.geometry)
    sys = assemble_scatter(mesh, prob.materials, prob.k0, prob.order, prob.pml_specs("wpbc"))
    mi = port_modes(prob, mesh, "gamma_in", 12)
    mo = port_modes(prob, mesh, "gamma_out", 12)
    return prob, mesh, sys, mi, mo


def _ports(small, incident=None):
    prob, mesh, sys, mi, mo = small
    if incident is None:
        incident = np.zeros(len(mi))
        incident[guided_indices(mi, 2.5, 1.5)[0]] = 1.0
    return [make_port(mesh, sys.dofmap, "gamma_in", mi, incident, is_input=True),
            make_port(mesh, sys.dofmap, "gamma_out", mo)]


def test_make_port_orientation_and_errors(small):
    prob, mesh, sys, mi, mo = small
    pin, pout = _ports(small)
    assert pin.orientation == -1 and pout.orientation == 1
    assert pin.z == 0.0 and pout.z == prob.geometry.domain_length
    with pytest.raises(PortError, match="does not match"):
        make_port(mesh, sys.dofmap, "gamma_out", mi)
    ev = port_modes(prob, mesh, "gamma_in_e", 4)
    with pytest.raises(PortError, match="not on the domain boundary"):
        make_port(mesh, sys.dofmap, "gamma_in_e", ev)
    with pytest.raises(PortError, match="output-only"):
        make_port(mesh, sys.dofmap, "gamma_out", mo, np.ones(2), is_input=False)
    with pytest.raises(PortError, match="incident coefficients for"):
        make_port(mesh, sys.dofmap, "gamma_in", mi, np.ones(len(mi) + 1))


def test_shared_dofs_rejected(small):
    prob, mesh, sys, mi, mo = small
    p1 = make_port(mesh, sys.dofmap, "gamma_in", mi)
    p2 = make_port(mesh, sys.dofmap, "gamma_in", mi.subset(3))
    p2.name = "dup"
    with pytest.raises(ScatterError, match="shares trace dofs"):
        apply_wpbc(sys, [p1, p2])


def test_patch_grouping_identical(small):
    prob, mesh, sys, *_ = small
    a = apply_wpbc(sys, _ports(small), patch_size=1)
    b = apply_wpbc(sys, _ports(small), patch_size=None)
    c = apply_wpbc(sys, _ports(small), patch_size=5)
    for other in (b, c):
        assert abs(a.matrix - other.matrix).max() <= 1e-15 * abs(a.matrix).max()
        pa, po = a.matrix.copy(), other.matrix.copy()
        pa.data[:] = 1
        po.data[:] = 1
        assert (pa != po).nnz == 0
        assert np.allclose(a.rhs, other.rhs, rtol=0, atol=1e-15 * np.abs(a.rhs).max())


def test_patches_cover_port_elements_only(small):
    prob, mesh, sys, *_ = small
    pin, pout = _ports(small)
    c = np.concatenate([pin.restriction.constrained, pout.restriction.constrained])
    patches = group_port_patches(mesh, sys.dofmap, c, 1)
    elems = np.concatenate(patches)
    touch = np.isin(sys.dofmap.elem_dofs, c).any(axis=1)
    assert set(elems.tolist()) == set(np.nonzero(touch)[0].tolist())
    assert len(group_port_patches(mesh, sys.dofmap, c, None)) == 1
    with pytest.raises(ValueError):
        group_port_patches(mesh, sys.dofmap, c, 0)


def test_non_port_block_unchanged(small):
    prob, mesh, sys, *_ = small
    rs = apply_wpbc(sys, _ports(small))
    free = rs.unknown_dofs[rs.unknown_dofs >= 0]
    n = len(free)
    # dofs whose every element avoids the ports keep their unrestricted rows
    pin, pout = rs.ports
    c = np.concatenate([pin.restriction.constrained, pout.restriction.constrained])
    touched = np.unique(sys.dofmap.elem_dofs[np.isin(sys.dofmap.elem_dofs, c).any(axis=1)])
    far = np.setdiff1d(free, touched)
    pos = np.searchsorted(free, far)
    A = rs.matrix.tocsr()[pos][:, :n]
    A0 = sys.matrix.tocsr()[far][:, free]
    assert len(far) > 0
    assert abs(A - A0).max() == 0


def test_pattern_symmetric(small):
    rs = apply_wpbc(small[2], _ports(small))
    P = rs.matrix.copy()
    P.data[:] = 1
    assert (P != P.T).nnz == 0


def test_zero_incident_zero_solution(small):
    prob, mesh, sys, mi, mo = small
    rs = apply_wpbc(sys, _ports(small, np.zeros(len(mi))))
    sol = solve(rs)
    assert np.abs(sol.x).max() == 0


def test_superposition(small, rng):
    prob, mesh, sys, mi, mo = small
    gi = guided_indices(mi, 2.5, 1.5)
    sols = []
    a1 = np.zeros(len(mi), dtype=complex)
    a2 = np.zeros(len(mi), dtype=complex)
    a1[gi] = rng.standard_normal(len(gi)) + 1j * rng.standard_normal(len(gi))
    a2[gi] = rng.standard_normal(len(gi)) + 1j * rng.standard_normal(len(gi))
    c1, c2 = 0.7 - 0.2j, -1.3 + 2j
    for a in (a1, a2, c1 * a1 + c2 * a2):
        sols.append(solve(apply_wpbc(sys, _ports(small, a))).full)
    lin = c1 * sols[0] + c2 * sols[1]
    assert np.linalg.norm(sols[2] - lin) <= 1e-10 * np.linalg.norm(sols[2])


def test_dirichlet_dofs_zero(small):
    rs = apply_wpbc(small[2], _ports(small))
    u = solve(rs).full
    assert np.all(u[small[2].dirichlet] == 0)


def test_current_plane_source_zero_and_local(small):
    prob, mesh, sys, mi, mo = small
    ev = port_modes(prob, mesh, "gamma_in_e", 6)
    f0 = current_plane_source(mesh, sys.dofmap, ev, np.zeros(6), "gamma_in_e")
    assert not np.any(f0)
    f = current_plane_source(mesh, sys.dofmap, ev, [1.0], "gamma_in_e")
    dofs, _ = port_trace(sys.dofmap, ev)
    assert set(np.nonzero(f)[0].tolist()) <= set(dofs.tolist())
    with pytest.raises(PortError):
        current_plane_source(mesh, sys.dofmap, ev, [1.0], "gamma_out_e")


def test_current_plane_radiates_symmetrically():
    """Sheet midway between two evaluation lines, equal distance to both z-PMLs."""
    g = SlabGeometry(domain_length=3.0, eval_offset=0.5, layout="pml", second_core_width=1.0,
                     junction=1.5)
    prob = SlabProblem(geometry=g)
    mesh = build_slab_mesh(g)
    ids = np.nonzero(np.abs(mesh.nodes[:, 1] - 1.5) < 1e-12)[0]
    mesh.line_table["sheet"] = ids[np.argsort(mesh.nodes[ids, 0])]
    sys = assemble_scatter(mesh, prob.materials, prob.k0, prob.order, prob.pml_specs("pml"),
                           dirichlet=("xmin", "xmax", "zmin", "zmax"))
    ms = port_modes(prob, mesh, "sheet", 20)
    a = np.zeros(len(ms))
    a[guided_indices(ms, 2.5, 1.5)[0]] = 1.0
    sol = solve(add_load(sys, current_plane_source(mesh, sys.dofmap, ms, a, "sheet")))
    below = trace_field(sol, "gamma_in_e").norm() ** 2
    above = trace_field(sol, "gamma_out_e").norm() ** 2
    assert abs(below / above - 1) < 1e-6


def test_reflectionless_straight_guide():
    run = run_wpbc(SlabProblem(), incident=[(0, 1.0, True)])
    refl = extract_port_amplitudes(run.solution, run.ports[0])
    trans = extract_port_amplitudes(run.solution, run.ports[1])
    k = int(np.nonzero(run.incident)[0][0])
    assert np.abs(refl).max() < 1e-6
    expect = np.exp(-1j * run.modes_in.beta[k] * run.ports[1].z)
    # validation tolerance of this mesh
    assert abs(trans[k] - expect) < 1e-4
