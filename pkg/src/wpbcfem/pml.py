"""Cartesian PML by complex coordinate stretching, scalar (TE) form.

A stretch ``s = 1 - j alpha_max (rho / d)^m`` is applied over a strip of
width ``d`` starting at the PML interface (``rho = 0``). With the
time convention ``exp(+j w t)`` and fields ``exp(-j beta z)`` this damps
outgoing waves.

For the scalar field ``E_y`` with ``s_y = 1`` the material transform of an
isotropic medium reduces to the bilinear form

    int c_xx dE/dx dphi/dx + c_zz dE/dz dphi/dz - k0^2 n^2 c_mass E phi

with ``c_xx = s_z / s_x``, ``c_zz = s_x / s_z`` and ``c_mass = s_x s_z``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

DEFAULT_M = 2.0
DEFAULT_R = 1e-70


def alpha_max(m: float, wavelength: float, n: float, d: float, R: float) -> float:
    """Peak attenuation ``-(m + 1) lambda ln(R) / (4 pi n d)``.

    >>> round(alpha_max(2, 1.55, 1.5, 1.0, 1e-70), 2)
    39.76
    """
    if not (wavelength > 0 and n > 0 and d > 0):
        raise ValueError("wavelength, index and PML width must be positive")
    if not 0 < R <= 1:
        raise ValueError(f"reflection target must lie in (0, 1], got {R}")
    if m < 0:
        raise ValueError("profile exponent must be non-negative")
    return -(m + 1) * wavelength * math.log(R) / (4 * math.pi * n * d)


@dataclass(frozen=True)
class PmlSpec:
    """One PML strip.

    ``start`` is the interface coordinate and ``sign`` is +1 when the strip
    extends towards larger coordinates, -1 otherwise.
    """

    direction: str  # "x" or "z"
    start: float
    width: float
    alpha_max: float
    m: float = DEFAULT_M
    sign: int = 1

    def __post_init__(self):
        if self.direction not in ("x", "z"):
            raise ValueError(f"PML direction must be 'x' or 'z', got {self.direction!r}")
        if not self.width > 0:
            raise ValueError("PML width must be positive")
        if self.m < 1:
            raise ValueError("PML profile exponent must be >= 1")
        if self.sign not in (1, -1):
            raise ValueError("sign must be +1 or -1")

    @classmethod
    def from_reflection(cls, direction, start, width, wavelength, n,
                        R=DEFAULT_R, m=DEFAULT_M, sign=1):
        return cls(direction, start, width, alpha_max(m, wavelength, n, width, R), m, sign)

    def depth(self, coord) -> np.ndarray:
        """Distance into the strip, ``nan`` outside it."""
        rho = (np.asarray(coord, dtype=float) - self.start) * self.sign
        tol = 1e-12 * max(1.0, self.width)
        inside = (rho >= -tol) & (rho <= self.width + tol)
        return np.where(inside, np.clip(rho, 0.0, self.width), np.nan)


def stretch_coeff(spec: PmlSpec, coord) -> np.ndarray:
    """Complex stretch at ``coord``; 1 outside the strip."""
    rho = spec.depth(coord)
    s = 1.0 - 1j * spec.alpha_max * (np.nan_to_num(rho) / spec.width) ** spec.m
    return np.where(np.isnan(rho), 1.0 + 0j, s)


def stretch(specs, direction: str, coord) -> np.ndarray:
    """Combined stretch of all strips in ``direction`` (strips must not overlap)."""
    coord = np.asarray(coord, dtype=float)
    s = np.ones(coord.shape, dtype=complex)
    for spec in specs or ():
        if spec.direction == direction:
            inside = ~np.isnan(spec.depth(coord))
            s = np.where(inside, stretch_coeff(spec, coord), s)
    return s


def scalar_coeffs(s_x, s_z):
    """Diffusion and mass coefficients ``(c_xx, c_zz, c_mass)``."""
    s_x = np.asarray(s_x, dtype=complex)
    s_z = np.asarray(s_z, dtype=complex)
    if np.any(s_x == 0) or np.any(s_z == 0):
        raise ValueError("zero stretch coefficient")
    return s_z / s_x, s_x / s_z, s_x * s_z


def slab_pml_specs(x_interface: float, width_x: float, wavelength: float, n_x: float,
                   z_bounds=None, width_z: float | None = None, n_z: float | None = None,
                   R=DEFAULT_R, m=DEFAULT_M, alpha_max_x=None, alpha_max_z=None):
    """Symmetric x-PML pair at ``+-x_interface`` and optional z-PML pair.

    ``z_bounds = (z0, z1)`` places z-strips below ``z0`` and above ``z1``.
    Explicit ``alpha_max_*`` values override the reflection-based formula.
    """
    ax = alpha_max(m, wavelength, n_x, width_x, R) if alpha_max_x is None else alpha_max_x
    specs = [PmlSpec("x", x_interface, width_x, ax, m, 1),
             PmlSpec("x", -x_interface, width_x, ax, m, -1)]
    if z_bounds is not None:
        wz = width_z if width_z is not None else width_x
        nz = n_z if n_z is not None else n_x
        az = alpha_max(m, wavelength, nz, wz, R) if alpha_max_z is None else alpha_max_z
        specs += [PmlSpec("z", z_bounds[0], wz, az, m, -1),
                  PmlSpec("z", z_bounds[1], wz, az, m, 1)]
    return specs
