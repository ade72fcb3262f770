"""Special functions for the 2D Helmholtz kernel.

Integer-order Bessel and Hankel functions are thin wrappers over
``scipy.special`` with argument checking.  The logarithmic power series of
:math:`H_0^{(1)}` used by the near-field tables lives here as well:

.. math::

    H_0^{(1)}(z r) = \\sum_p c_p(z) (r/2)^{2p} + \\sum_p d_p(z) (r/2)^{2p} \\log(r/2)

with :math:`a_p = (-z^2)^p/(p!)^2`, :math:`g_p = (\\gamma + \\log z - H_p) a_p`,
:math:`c_p = a_p + (2i/\\pi) g_p` and :math:`d_p = (2i/\\pi) a_p`.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache

import numpy as np
from scipy import special

__all__ = [
    "bessel_j",
    "bessel_y",
    "hankel1",
    "hankel1_sequence",
    "harmonic",
    "HankelSeriesCoeffs",
    "series_coeffs",
    "series_h0",
    "erfc",
]

EULER_GAMMA = float(np.euler_gamma)
SERIES_ZMAX = 8.0


def _check_order(n):
    n = np.asarray(n)
    if not np.issubdtype(n.dtype, np.integer):
        if np.any(n != np.round(n)):
            raise ValueError("only integer orders are supported")
    return n.astype(int)


def bessel_j(n, x):
    """Bessel function of the first kind, integer order, real argument.

    Negative orders follow ``J_{-n} = (-1)^n J_n``.
    """
    n = _check_order(n)
    x = np.asarray(x, dtype=float)
    if np.any(x < 0):
        raise ValueError("bessel_j requires x >= 0")
    out = special.jv(np.abs(n), x)
    sign = np.where((n < 0) & (np.abs(n) % 2 == 1), -1.0, 1.0)
    return out * sign


def bessel_y(n, x):
    """Bessel function of the second kind; refuses ``x = 0``."""
    n = _check_order(n)
    x = np.asarray(x, dtype=float)
    if np.any(x <= 0):
        raise ValueError("bessel_y is singular at x = 0")
    out = special.yv(np.abs(n), x)
    sign = np.where((n < 0) & (np.abs(n) % 2 == 1), -1.0, 1.0)
    return out * sign


def hankel1(n, x):
    """Hankel function of the first kind, ``J_n(x) + i Y_n(x)``."""
    n = _check_order(n)
    x = np.asarray(x, dtype=float)
    if np.any(x <= 0):
        raise ValueError("hankel1 is singular at x = 0")
    out = special.hankel1(np.abs(n), x)
    sign = np.where((n < 0) & (np.abs(n) % 2 == 1), -1.0, 1.0)
    return out * sign


def hankel1_sequence(nmax: int, x: np.ndarray) -> np.ndarray:
    """Return ``H_n^{(1)}(x)`` for ``n = 0..nmax`` with shape ``x.shape + (nmax+1,)``.

    Uses upward recurrence from ``H_0`` and ``H_1``.  The recurrence is
    stable for the second-kind part, which dominates once ``n > x``; the
    loss in the first-kind part is invisible in multipole sums whose
    coefficients decay like ``J_n``.
    """
    x = np.asarray(x, dtype=float)
    out = np.empty(x.shape + (nmax + 1,), dtype=complex)
    out[..., 0] = special.hankel1(0, x)
    if nmax >= 1:
        out[..., 1] = special.hankel1(1, x)
    inv = 2.0 / x
    for n in range(1, nmax):
        out[..., n + 1] = (n * inv) * out[..., n] - out[..., n - 1]
    return out


@lru_cache(maxsize=None)
def _harmonic_exact(p: int) -> Fraction:
    if p == 0:
        return Fraction(0)
    return _harmonic_exact(p - 1) + Fraction(1, p)


def harmonic(p: int) -> float:
    """Harmonic number ``H_p = 1 + 1/2 + ... + 1/p`` with ``H_0 = 0``."""
    if p < 0:
        raise ValueError("harmonic number needs p >= 0")
    # exact rational sum, rounded once
    return float(_harmonic_exact(int(p)))


@dataclass(frozen=True)
class HankelSeriesCoeffs:
    """Coefficients of the log-power series of ``H0(z r)`` in ``r/2``."""

    z: float
    pmax: int
    a: np.ndarray
    g: np.ndarray
    c: np.ndarray
    d: np.ndarray


@lru_cache(maxsize=256)
def series_coeffs(z: float, pmax: int = 60) -> HankelSeriesCoeffs:
    """Series coefficients ``c_p(z), d_p(z)`` for ``p = 0..pmax``.

    Parameters
    ----------
    z : float
        Scaled box size ``kappa * L_B``, in ``(0, 8]``.
    pmax : int
        Highest retained power; 60 gives full double precision for ``z*r <= 8``.
    """
    z = float(z)
    if not (0.0 < z <= SERIES_ZMAX * (1 + 1e-12)):
        raise ValueError(f"series argument z={z} outside (0, {SERIES_ZMAX}]")
    if pmax < 1:
        raise ValueError("pmax must be >= 1")
    p = np.arange(pmax + 1)
    # a_p = (-z^2)^p / (p!)^2 built by the ratio recurrence to avoid overflow
    a = np.empty(pmax + 1)
    a[0] = 1.0
    for k in range(1, pmax + 1):
        a[k] = a[k - 1] * (-z * z) / (k * k)
    hp = np.array([harmonic(int(k)) for k in p])
    g = (EULER_GAMMA + np.log(z) - hp) * a
    c = a + (2j / np.pi) * g
    d = (2j / np.pi) * a
    for arr in (a, g, c, d):
        arr.setflags(write=False)
    return HankelSeriesCoeffs(z=z, pmax=int(pmax), a=a, g=g, c=c, d=d)


def series_h0(coeffs: HankelSeriesCoeffs, r) -> np.ndarray:
    """Evaluate the truncated series of ``H0(z r)`` at scaled radii ``r > 0``."""
    r = np.asarray(r, dtype=float)
    h = 0.5 * r
    powers = (h[..., None] ** 2) ** np.arange(coeffs.pmax + 1)
    return powers @ coeffs.c + np.log(h) * (powers @ coeffs.d)


def erfc(x):
    """Complementary error function."""
    return special.erfc(np.asarray(x, dtype=float))
