"""Run configuration: INI-style ``[section]`` / ``key = value`` files.

See README.md for the grammar. Unknown sections or keys are errors so that
typos do not silently fall back to defaults.
"""
from __future__ import annotations

import configparser
import re
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .experiments import SlabProblem
from .mesh import MeshError, SlabGeometry

KINDS = ("modal", "scatter", "validate", "nmodes")


class ConfigError(ValueError):
    pass


@dataclass
class PortConfig:
    nmodes: int | None = 50  # None: full trace space
    incident: list = field(default_factory=list)  # (index, amplitude, guided?)


@dataclass
class RunConfig:
    """Parsed configuration; ``grid_pairs`` gives the nmodes sweep cells."""

    kind: str = "validate"
    output: Path = Path("out")
    problem: SlabProblem = field(default_factory=SlabProblem)
    ports: dict = field(default_factory=dict)
    modal: dict = field(default_factory=dict)
    grid: list = field(default_factory=lambda: [3, 10, 30, 100, None])
    grid_out: list | None = None
    alpha: tuple = (0.5, 2.0, 2.5)
    sweep_sizes: list = field(default_factory=list)
    sweep_orders: list = field(default_factory=list)
    source: str = "<defaults>"

    @property
    def grid_pairs(self) -> list:
        if self.grid_out is None:
            return [(n, n) for n in self.grid]
        return [(a, b) for a in self.grid for b in self.grid_out]


_GEOMETRY = {f.name: f for f in fields(SlabGeometry)}
_OPTIONAL_FLOATS = {"eval_offset", "second_core_width", "junction"}
_MODAL_KEYS = {"cross_section", "line", "nmodes", "pml", "strip_width", "strip_elements",
               "strip_material"}


def _float(section, key, text):
    try:
        return float(text)
    except ValueError:
        raise ConfigError(f"[{section}] {key}: expected a number, got {text!r}") from None


def _int(section, key, text):
    try:
        return int(text)
    except ValueError:
        raise ConfigError(f"[{section}] {key}: expected an integer, got {text!r}") from None


def _bool(section, key, text):
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"[{section}] {key}: expected true/false, got {text!r}")


def _nmodes(section, key, text):
    t = text.strip().lower()
    if t in ("full", "all"):
        return None
    n = _int(section, key, t)
    if n < 1:
        raise ConfigError(f"[{section}] {key}: mode count must be positive")
    return n


def _complex(section, key, text):
    try:
        return complex(text.replace(" ", "").replace("i", "j"))
    except ValueError:
        raise ConfigError(f"[{section}] {key}: bad complex amplitude {text!r}") from None


_INCIDENT = re.compile(r"^(g?)(\d+)\s*:\s*(.+)$")


def parse_incident(section, text):
    """``"g0: 0.5, g1: 2+1j, 7: 0.1"`` -> ``[(0, 0.5, True), (1, 2+1j, True), (7, 0.1, False)]``.

    A ``g`` prefix indexes the guided modes in sort order; a bare index
    refers to the port's full mode list.
    """
    out = []
    for item in filter(None, (s.strip() for s in text.split(","))):
        m = _INCIDENT.match(item)
        if not m:
            raise ConfigError(f"[{section}] incident: cannot parse {item!r} "
                              "(expected 'index: amplitude' or 'gK: amplitude')")
        out.append((int(m.group(2)), _complex(section, "incident", m.group(3)), m.group(1) == "g"))
    return out


def _list(section, key, text, conv):
    return [conv(section, key, s) for s in text.split(",") if s.strip()]


def load_config(path) -> RunConfig:
    """Parse a configuration file; raises :class:`ConfigError` with context."""
    path = Path(path)
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"), interpolation=None)
    cp.optionxform = str
    try:
        with open(path) as f:
            cp.read_file(f)
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from None
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from None
    try:
        cfg = parse_sections({s: dict(cp[s]) for s in cp.sections()})
    except ConfigError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    cfg.source = str(path)
    if not cfg.output.is_absolute():
        cfg.output = path.parent / cfg.output
    return cfg


def parse_sections(sections: dict) -> RunConfig:
    cfg = RunConfig()
    prob = cfg.problem
    geom = {}
    for name, items in sections.items():
        if name == "run":
            for k, v in items.items():
                if k == "kind":
                    if v not in KINDS:
                        raise ConfigError(f"[run] kind: expected one of {KINDS}, got {v!r}")
                    cfg.kind = v
                elif k == "output":
                    cfg.output = Path(v)
                else:
                    raise ConfigError(f"[run] unknown key {k!r}")
        elif name == "geometry":
            for k, v in items.items():
                if k not in _GEOMETRY:
                    raise ConfigError(f"[geometry] unknown key {k!r}")
                if k == "layout":
                    geom[k] = v
                elif k in _OPTIONAL_FLOATS and v.strip().lower() in ("", "none"):
                    geom[k] = None
                else:
                    geom[k] = _float(name, k, v)
        elif name == "materials":
            mats = {k: _complex(name, k, v) for k, v in items.items()}
            mats = {k: (v.real if v.imag == 0 else v) for k, v in mats.items()}
            prob = replace(prob, materials=mats)
        elif name == "solver":
            for k, v in items.items():
                if k == "wavelength":
                    prob = replace(prob, wavelength=_float(name, k, v))
                elif k == "order":
                    prob = replace(prob, order=_int(name, k, v))
                elif k == "patch_size":
                    prob = replace(prob, patch_size=None if v.lower() in ("all", "none")
                                   else _int(name, k, v))
                elif k == "method":
                    if v not in ("direct", "gmres"):
                        raise ConfigError(f"[solver] method: expected direct or gmres, got {v!r}")
                    prob = replace(prob, solver=v)
                elif k == "condense":
                    prob = replace(prob, condense=_bool(name, k, v))
                else:
                    raise ConfigError(f"[solver] unknown key {k!r}")
        elif name == "pml":
            keys = {"m": "pml_m", "R": "pml_R", "index_x": "pml_index_x", "index_z": "pml_index_z",
                    "alpha_max_x": "alpha_max_x", "alpha_max_z": "alpha_max_z"}
            for k, v in items.items():
                if k not in keys:
                    raise ConfigError(f"[pml] unknown key {k!r}")
                if v.strip().lower() in ("", "none"):
                    if k not in ("index_x", "alpha_max_x", "alpha_max_z"):
                        raise ConfigError(f"[pml] {k}: a value is required")
                    val = None
                else:
                    val = _float(name, k, v)
                prob = replace(prob, **{keys[k]: val})
        elif name.startswith("port."):
            line = name[5:]
            pc = PortConfig()
            for k, v in items.items():
                if k == "nmodes":
                    pc.nmodes = _nmodes(name, k, v)
                elif k == "incident":
                    pc.incident = parse_incident(name, v)
                else:
                    raise ConfigError(f"[{name}] unknown key {k!r}")
            cfg.ports[line] = pc
        elif name == "modal":
            bad = set(items) - _MODAL_KEYS
            if bad:
                raise ConfigError(f"[modal] unknown keys {sorted(bad)}")
            cfg.modal = dict(items)
        elif name == "nmodes":
            for k, v in items.items():
                if k == "grid":
                    cfg.grid = _list(name, k, v, _nmodes)
                elif k == "grid_out":
                    cfg.grid_out = _list(name, k, v, _nmodes)
                else:
                    raise ConfigError(f"[nmodes] unknown key {k!r}")
        elif name == "validate":
            for k, v in items.items():
                if k == "alpha":
                    cfg.alpha = tuple(_list(name, k, v, _complex))
                elif k == "sweep_sizes":
                    cfg.sweep_sizes = _list(name, k, v, _float)
                elif k == "sweep_orders":
                    cfg.sweep_orders = _list(name, k, v, _int)
                else:
                    raise ConfigError(f"[validate] unknown key {k!r}")
        else:
            raise ConfigError(f"unknown section [{name}]")

    g = replace(prob.geometry, **geom)
    try:
        g.validate()
    except MeshError as exc:
        raise ConfigError(f"[geometry] {exc}") from None
    prob = replace(prob, geometry=g)
    if not prob.wavelength > 0:
        raise ConfigError("[solver] wavelength must be positive")
    if not 1 <= prob.order <= 10:
        raise ConfigError("[solver] order must lie in 1..10")
    for tag in ("core", "clad"):
        if tag not in prob.materials:
            raise ConfigError(f"[materials] missing material {tag!r}")
    for line in cfg.ports:
        if line not in ("gamma_in", "gamma_out"):
            raise ConfigError(f"[port.{line}] unknown port line (use gamma_in or gamma_out)")
    pin = cfg.ports.get("gamma_in", PortConfig())
    pout = cfg.ports.get("gamma_out", PortConfig())
    if pout.incident:
        raise ConfigError("[port.gamma_out] incident: the output port takes no incident field")
    prob = replace(prob, nmodes_in=pin.nmodes, nmodes_out=pout.nmodes)
    cfg.problem = prob
    return cfg
