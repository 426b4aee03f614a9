import csv
import math
from dataclasses import replace

import numpy as np
import pytest

from wpbcfem import vtk
from wpbcfem.experiments import SlabProblem, guided_indices, port_modes, run_wpbc
from wpbcfem.mesh import SlabGeometry, build_slab_mesh, extract_trace, uniform_line
from wpbcfem.modal import assemble_modal, prepare_modes
from wpbcfem.postproc import (LineField, PostprocError, export_field, extract_port_amplitudes,
                              line_relative_error, mode_projection_residual, reference_field,
                              sample_field, trace_field, write_line_csv)
from wpbcfem.scatter import ScatterSolution


@pytest.fixture(scope="module")
def run():
    prob = SlabProblem(geometry=SlabGeometry(core_width=1.0, cladding_extent=1.0,
                                             pml_width_x=0.5, domain_length=1.0,
                                             element_size=0.25), order=3)
    return run_wpbc(prob, (1.0, 0.5j))


@pytest.fixture(scope="module")
def port_ms():
    prob = SlabProblem()
    return port_modes(prob, build_slab_mesh(prob.geometry), "gamma_in", 20)


def test_sourceless_amplitudes_zero(run):
    prob_sys = run.solution.system
    zero = ScatterSolution(np.zeros(prob_sys.size, dtype=complex), prob_sys, 0.0, "direct")
    for port in run.ports:
        assert not np.any(extract_port_amplitudes(zero, port, total=True))


def test_amplitudes_total_vs_scattered(run):
    pin = run.ports[0]
    tot = extract_port_amplitudes(run.solution, pin, total=True)
    sc = extract_port_amplitudes(run.solution, pin)
    assert np.allclose(tot - sc, pin.incident)
    with pytest.raises(PostprocError):
        extract_port_amplitudes(run.solution, replace(pin, masters=None))


def test_straight_guide_amplitudes_fine_mesh():
    prob = SlabProblem(geometry=SlabGeometry(element_size=0.1))
    r = run_wpbc(prob, incident=[(0, 1.0, True)])
    trans = extract_port_amplitudes(r.solution, r.ports[1])
    k = int(np.nonzero(r.incident)[0][0])
    L = prob.geometry.domain_length
    assert abs(trans[k] - np.exp(-1j * r.modes_in.beta[k] * L)) < 1e-6
    assert np.abs(np.delete(trans, k)).max() < 1e-6


def test_reference_field_identities(port_ms):
    gi = guided_indices(port_ms, 2.5, 1.5)
    a = np.zeros(len(port_ms), dtype=complex)
    a[gi] = (0.5, 2.0, 2.5)
    f0 = reference_field(port_ms, a, 0.0)
    assert np.allclose(f0.coeffs, port_ms.full_coeffs() @ a, rtol=0, atol=1e-15)
    # phase semigroup
    d1, d2 = 0.3, 0.45
    a1 = a * np.exp(-1j * port_ms.beta * d1)
    g = reference_field(port_ms, a1, d2)
    h = reference_field(port_ms, a, d1 + d2)
    assert np.abs(g.coeffs - h.coeffs).max() <= 1e-13 * np.abs(h.coeffs).max()
    # single lossless guided mode: modulus profile invariant
    s = np.zeros(len(port_ms), dtype=complex)
    s[gi[0]] = 1.0
    x = np.linspace(-1.0, 1.0, 9)
    m0 = np.abs(reference_field(port_ms, s, 0.0).evaluate(x))
    m1 = np.abs(reference_field(port_ms, s, 1.7).evaluate(x))
    assert np.allclose(m0, m1, rtol=1e-12, atol=1e-14)
    with pytest.raises(PostprocError):
        reference_field(port_ms, a, -1.0)
    with pytest.raises(PostprocError):
        reference_field(port_ms, a[:3], 1.0)


def test_line_relative_error_basics(run, rng):
    u = trace_field(run.solution, "gamma_in_e")
    assert line_relative_error(u, u) == 0
    two = LineField(u.mesh, u.order, 2 * u.coeffs)
    assert abs(line_relative_error(two, u) - 1) < 1e-14
    v = LineField(u.mesh, u.order, u.coeffs + 1e-3 * rng.standard_normal(len(u.coeffs)))
    c = 3.0 - 4.0j
    uc = LineField(u.mesh, u.order, c * u.coeffs)
    vc = LineField(u.mesh, u.order, c * v.coeffs)
    assert abs(line_relative_error(vc, uc) - line_relative_error(v, u)) < 1e-13
    with pytest.raises(PostprocError, match="zero norm"):
        line_relative_error(u, LineField(u.mesh, u.order, 0 * u.coeffs))
    other = LineField(uniform_line(0, 1, 3), u.order, np.zeros(3 * u.order + 1))
    with pytest.raises(PostprocError, match="different"):
        line_relative_error(other, u)


def test_projection_residual(run):
    ms = run.modes_in
    combo = reference_field(ms, np.linspace(1, 2, len(ms)) * (1 + 0.5j), 0.0)
    ev = trace_field(run.solution, "gamma_in_e")
    u = LineField(ev.mesh, ev.order, combo.coeffs)
    assert mode_projection_residual(u, ms) < 1e-12
    assert mode_projection_residual(u, ms.subset(0)) == 1.0
    r1 = mode_projection_residual(ev, ms.subset(3))
    ev2 = LineField(ev.mesh, ev.order, (2 - 7j) * ev.coeffs)
    assert abs(mode_projection_residual(ev2, ms.subset(3)) - r1) < 1e-13
    assert 0 < r1 < 1
    bad = LineField(uniform_line(0, 1, 3), ev.order, np.zeros(3 * ev.order + 1))
    with pytest.raises(PostprocError, match="nodes"):
        mode_projection_residual(bad, ms)


def test_parseval_bound_hermitian_port():
    sys = assemble_modal(uniform_line(-1.0, 1.0, 24, "air"), {"air": 1.0}, 6.0, 4)
    ms = prepare_modes(sys, 12)
    rng = np.random.default_rng(3)
    u = LineField(sys.mesh, 4, sys.expand(rng.standard_normal(sys.size)))
    V = ms.full_coeffs()
    G = V.conj().T @ (u.mass @ V)
    c = np.linalg.solve(G, V.conj().T @ (u.mass @ u.coeffs))
    lam_min = np.linalg.eigvalsh(G).min()
    assert np.sum(np.abs(c) ** 2) <= u.norm() ** 2 / lam_min * (1 + 1e-12)
    assert np.abs(G - np.diag(np.diag(G))).max() < 1e-10 * np.abs(G).max()


def test_line_field_evaluation():
    mesh = uniform_line(0.0, 2.0, 4)
    c = np.zeros(5 + 4 * 2)
    c[:5] = [0, 1, 2, 3, 4]
    f = LineField(mesh, 3, c)
    assert np.allclose(f.evaluate(mesh.nodes), c[:5])
    assert np.allclose(f.evaluate([0.25, 1.75]), [0.5, 3.5])
    x, v = f.samples(4)
    assert len(x) == 4 * 4 + 1 and np.allclose(v, 2 * x)
    with pytest.raises(PostprocError, match="outside"):
        f.evaluate([2.5])
    with pytest.raises(PostprocError, match="coefficients"):
        LineField(mesh, 3, c[:-1])
    assert math.isclose(f.norm(), math.sqrt(4 * 8 / 3), rel_tol=1e-13)


def test_vtk_round_trip(run, tmp_path):
    sol = run.solution
    mesh = sol.system.mesh
    export_field(sol, tmp_path / "f.vtk")
    pts, tris, pdata, _ = vtk.read_unstructured(tmp_path / "f.vtk")
    assert pts.shape[0] == mesh.n_nodes and tris.shape[0] == mesh.n_triangles
    u = sol.full[:mesh.n_nodes]
    assert np.array_equal(pdata["E_re"], u.real) and np.array_equal(pdata["E_im"], u.imag)
    export_field(sol, tmp_path / "g.vtk", subdivisions=3)
    pts, tris, _, _ = vtk.read_unstructured(tmp_path / "g.vtk")
    assert tris.shape[0] == 9 * mesh.n_triangles and pts.shape[0] == 10 * mesh.n_triangles


def test_constant_field_export(run, tmp_path):
    sys = run.solution.system
    u = np.zeros(sys.n_full, dtype=complex)
    u[:sys.mesh.n_nodes] = 1.5 - 0.5j  # vertex dofs only: a constant function
    sol = ScatterSolution(u, replace(sys, prolong=None, unknown_dofs=None), 0.0, "direct")
    _, _, vals = sample_field(sol, 4)
    assert np.allclose(vals, 1.5 - 0.5j, rtol=0, atol=1e-14)
    export_field(sol, tmp_path / "c.vtk", 2)
    _, _, pdata, _ = vtk.read_unstructured(tmp_path / "c.vtk")
    assert np.allclose(pdata["E_re"], 1.5) and np.allclose(pdata["E_im"], -0.5)


def test_line_csv(run, tmp_path):
    f = trace_field(run.solution, "gamma_out_e")
    write_line_csv(f, tmp_path / "l.csv")
    rows = list(csv.reader(open(tmp_path / "l.csv")))
    assert rows[0] == ["x", "re", "im"]
    x, v = f.samples()
    assert len(rows) == len(x) + 1
    assert float(rows[1][0]) == x[0] and complex(float(rows[5][1]), float(rows[5][2])) == v[4]


def test_trace_field_matches_eval_line_nodes(run):
    mesh = run.solution.system.mesh
    u = trace_field(run.solution, "gamma_in_e")
    assert np.array_equal(u.mesh.nodes, extract_trace(mesh, "gamma_in").nodes)
