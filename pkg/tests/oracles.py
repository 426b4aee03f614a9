"""Independent reference computations used by the tests."""
from __future__ import annotations

import math

import numpy as np
from scipy.optimize import brentq


def slab_te_betas(wavelength, n_core, n_clad, width):
    """Guided TE propagation constants of a symmetric slab, descending.

    Roots of ``tan(kappa w/2) = gamma/kappa`` (even) and
    ``-cot(kappa w/2) = gamma/kappa`` (odd), bracketed between the
    singularities of the tangent branches.
    """
    k0 = 2 * math.pi / wavelength
    v = k0 * width / 2 * math.sqrt(n_core ** 2 - n_clad ** 2)  # normalized frequency
    out = []
    m = 0
    while m * math.pi / 2 < v:
        lo, hi = m * math.pi / 2, min((m + 1) * math.pi / 2, v)

        def f(u, m=m):
            w = math.sqrt(max(v * v - u * u, 0.0))
            # u tan(u - m pi/2) = w, written without poles
            a = u - m * math.pi / 2
            return u * math.sin(a) - w * math.cos(a)

        eps = 1e-15 * max(1.0, v)
        u = brentq(f, lo + eps, hi - eps, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=500)
        kappa = 2 * u / width
        out.append(math.sqrt((k0 * n_core) ** 2 - kappa ** 2))
        m += 1
    return np.array(out)


def strip_betas(k0, length, n_modes, index=1.0):
    """``sqrt(k0^2 n^2 - (m pi / L)^2)``; evanescent modes on the ``-j`` branch."""
    m = np.arange(1, n_modes + 1)
    b2 = (k0 * index) ** 2 - (m * np.pi / length) ** 2
    return np.where(b2 >= 0, np.sqrt(np.abs(b2)), -1j * np.sqrt(np.abs(b2)))
