"""Command-line front end.

    wpbcfem modal|scatter|validate|nmodes --config run.ini [--out DIR]
            [--nmodes-in K] [--nmodes-out K]

Exit codes: 0 success, 1 configuration error, 2 numerical failure,
3 failed validation check.
"""
from __future__ import annotations

import argparse
import csv
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .config import KINDS, ConfigError, RunConfig, load_config
from .experiments import SlabProblem, nmodes_sweep, run_wpbc, validate, validation_error
from .mesh import MeshError, build_slab_mesh, extract_trace, uniform_line
from .modal import (ModalError, fmt_float, assemble_modal, biorthogonality_matrix, compute_kappa,
                    orthogonalize_degenerate, solve_modes, write_mode_table)
from .postproc import (PostprocError, export_field, extract_port_amplitudes, trace_field,
                       write_line_csv)
from .scatter import ScatterError
from .wpbc import PortError

log = logging.getLogger("wpbcfem")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_CHECK = 0, 1, 2, 3
NUMERIC_ERRORS = (ModalError, ScatterError, PortError, PostprocError, MeshError,
                  np.linalg.LinAlgError, ValueError)


def _max_offdiag(C) -> float:
    off = np.abs(C - np.diag(np.diag(C)))
    return float(off.max()) if off.size else 0.0


def cmd_modal(cfg: RunConfig, out: Path) -> int:
    """Mode table and biorthogonality report of one cross-section."""
    prob = cfg.problem
    opts = cfg.modal
    kind = opts.get("cross_section", "port")
    use_pml = opts.get("pml", "true").strip().lower() in ("1", "true", "yes", "on")
    if kind == "strip":
        try:
            width = float(opts.get("strip_width", "1.0"))
            n_el = int(opts.get("strip_elements", "64"))
        except ValueError as exc:
            raise ConfigError(f"[modal] {exc}") from None
        mat = opts.get("strip_material", "core")
        if mat not in prob.materials:
            raise ConfigError(f"[modal] strip_material: unknown material {mat!r}")
        trace = uniform_line(0.0, width, n_el, mat)
        pml = None
    elif kind == "port":
        mesh = build_slab_mesh(prob.geometry)
        line = opts.get("line", "gamma_in")
        if line not in mesh.line_table:
            raise ConfigError(f"[modal] line: unknown line {line!r}")
        trace = extract_trace(mesh, line)
        pml = prob.pml_specs() if use_pml else None
    else:
        raise ConfigError(f"[modal] cross_section: expected port or strip, got {kind!r}")
    sys_ = assemble_modal(trace, prob.materials, prob.k0, prob.order, pml)
    text = opts.get("nmodes", "50").strip().lower()
    n = sys_.size if text in ("full", "all") else min(int(text), sys_.size)
    ms = orthogonalize_degenerate(solve_modes(sys_, n))
    compute_kappa(ms)
    nc = _max_offdiag(biorthogonality_matrix(ms, conjugated=False))
    cj = _max_offdiag(biorthogonality_matrix(ms, conjugated=True))
    write_mode_table(ms, out / "modes.csv")
    with open(out / "biorthogonality.txt", "w") as f:
        f.write(f"modes = {len(ms)}\n")
        f.write(f"max_offdiag_nonconjugated = {nc:.6e}\n")
        f.write(f"max_offdiag_conjugated = {cj:.6e}\n")
        f.write(f"max_residual = {ms.residuals().max():.6e}\n")
    print(f"{len(ms)} modes; max off-diagonal: non-conjugated {nc:.3e}, conjugated {cj:.3e}")
    return EXIT_OK


def _write_amplitudes(path, ports, sol):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["port", "mode", "re_beta", "im_beta", "re_amp", "im_amp", "abs_amp"])
        for port in ports:
            a = extract_port_amplitudes(sol, port)
            for k, (b, c) in enumerate(zip(port.modes.beta, a)):
                w.writerow([port.name, k] + [fmt_float(v) for v in (b.real, b.imag, c.real, c.imag,
                                                                abs(c))])


def cmd_scatter(cfg: RunConfig, out: Path) -> int:
    """Full WPBC solve with field export and amplitude table."""
    prob = cfg.problem
    pin = cfg.ports.get("gamma_in")
    spec = pin.incident if pin is not None and pin.incident else [(0, 1.0, True)]
    run = run_wpbc(prob, incident=spec)
    sol = run.solution
    export_field(sol, out / "field.vtk", subdivisions=prob.order)
    for line in ("gamma_in_e", "gamma_out_e"):
        write_line_csv(trace_field(sol, line), out / f"field_{line}.csv")
    _write_amplitudes(out / "amplitudes.csv", run.ports, sol)
    refl = extract_port_amplitudes(sol, run.ports[0])
    trans = extract_port_amplitudes(sol, run.ports[1])
    k = int(np.argmax(np.abs(trans)))
    print(f"dofs {sol.system.n_full}, residual {sol.residual:.2e}")
    print(f"max reflected |a| = {np.abs(refl).max():.4e}; dominant transmitted mode {k}: "
          f"|a| = {abs(trans[k]):.6f}")
    return EXIT_OK


def _validation_rows(prob: SlabProblem, alpha):
    rep = validate(prob, alpha)
    return rep, [("error_wpbc", rep.error_wpbc), ("error_pml_backed", rep.error_pml),
                 ("dofs_wpbc", rep.dofs_wpbc), ("dofs_pml_backed", rep.dofs_pml),
                 ("max_reflected_amplitude", rep.reflected_max),
                 ("max_transmitted_phase_error", rep.transmitted_phase_error)]


def cmd_validate(cfg: RunConfig, out: Path) -> int:
    """Straight-guide validation; exit 3 if the WPBC check fails."""
    prob = cfg.problem
    alpha = cfg.alpha
    if not np.any(np.asarray(alpha)):
        print("zero incident field: relative errors are undefined")
        with open(out / "validation.csv", "w", newline="") as f:
            csv.writer(f).writerows([["quantity", "value"], ["error_wpbc", "undefined"],
                                     ["error_pml_backed", "undefined"]])
        return EXIT_OK
    rep, rows = _validation_rows(prob, alpha)
    with open(out / "validation.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["quantity", "value"])
        for k, v in rows:
            w.writerow([k, fmt_float(v) if isinstance(v, float) else v])
    for k, v in rows:
        print(f"{k:30s} {v:.6e}" if isinstance(v, float) else f"{k:30s} {v}")
    if cfg.sweep_sizes or cfg.sweep_orders:
        sizes = cfg.sweep_sizes or [prob.geometry.element_size]
        orders = cfg.sweep_orders or [prob.order]
        with open(out / "validation_sweep.csv", "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["element_size", "order", "error_wpbc", "error_pml_backed"])
            for h in sizes:
                for p in orders:
                    g = replace(prob.geometry, element_size=h, eval_offset=h)
                    r = validate(replace(prob, geometry=g, order=p), alpha)
                    w.writerow([fmt_float(h), p, fmt_float(r.error_wpbc), fmt_float(r.error_pml)])
                    print(f"h={h:g} p={p}: wpbc {r.error_wpbc:.3e}, pml-backed {r.error_pml:.3e}")
    if not rep.passed:
        print("validation FAILED: WPBC error must be < 1e-4 and below the PML-backed error")
        return EXIT_CHECK
    return EXIT_OK


def cmd_nmodes(cfg: RunConfig, out: Path) -> int:
    """Mode-count sweep with the straight-guide tolerance as reference."""
    prob = cfg.problem
    rows = nmodes_sweep(prob, cfg.grid_pairs)
    g = prob.geometry
    straight = replace(prob, geometry=replace(g, second_core_width=None, junction=None))
    tol = validation_error(run_wpbc(straight, (1.0,)), g.eval_distance)
    with open(out / "nmodes.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["n_in", "n_out", "r_in", "r_out", "tolerance"])
        for n_in, n_out, r_in, r_out in rows:
            w.writerow([n_in, n_out, fmt_float(r_in), fmt_float(r_out), fmt_float(tol)])
            print(f"n_in={n_in:4d} n_out={n_out:4d}  r_in={r_in:.3e}  r_out={r_out:.3e}")
    print(f"straight-guide tolerance {tol:.3e}")
    return EXIT_OK


COMMANDS = {"modal": cmd_modal, "scatter": cmd_scatter, "validate": cmd_validate,
            "nmodes": cmd_nmodes}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="wpbcfem", description=__doc__.splitlines()[0])
    ap.add_argument("command", choices=KINDS)
    ap.add_argument("--config", required=True, help="run configuration (INI)")
    ap.add_argument("--out", help="output directory (overrides [run] output)")
    ap.add_argument("--nmodes-in", help="modes at the input port (integer or 'full')")
    ap.add_argument("--nmodes-out", help="modes at the output port (integer or 'full')")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def _count(text):
    if text.strip().lower() in ("full", "all"):
        return None
    try:
        n = int(text)
    except ValueError:
        raise ConfigError(f"mode count must be an integer or 'full', got {text!r}") from None
    if n < 1:
        raise ConfigError("mode count must be positive")
    return n


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
        prob = cfg.problem
        if args.nmodes_in:
            prob = replace(prob, nmodes_in=_count(args.nmodes_in))
        if args.nmodes_out:
            prob = replace(prob, nmodes_out=_count(args.nmodes_out))
        if args.command == "nmodes" and (args.nmodes_in or args.nmodes_out):
            cfg.grid, cfg.grid_out = [prob.nmodes_in], [prob.nmodes_out]
        cfg.problem = prob
        out = Path(args.out) if args.out else cfg.output
        out.mkdir(parents=True, exist_ok=True)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"config error: cannot create output directory: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return COMMANDS[args.command](cfg, out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NUMERIC_ERRORS as exc:
        print(f"numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
