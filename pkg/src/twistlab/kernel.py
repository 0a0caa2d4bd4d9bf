"""Ring coupling kernel, its Fourier coefficients, and the coefficient algebra.

Everything here is a pure closed-form function of the coupling parameters
``p = (r, lam, mu)``: the indicator kernel on the ring, its cosine-series
coefficients, the linearization eigenvalue sequence ``c1`` around a twisted
state, the higher derivative coefficients ``c2..c6``, and the structural
functions (``lambda0``, ``big_H``, ``iota``, ``cap_X``) used to place and
reshape the bifurcation. All functions are thread-safe.
"""

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.optimize import brentq

from .errors import DegenerateKernelError, SingularPointError

TWO_PI = 2.0 * math.pi

#: Any denominator smaller than this in magnitude is treated as zero and the
#: corresponding quantity reported as degenerate instead of returning a huge value.
DEGENERACY_TOL = 1e-12

_COEFFICIENT_NAMES = ("c2", "c3", "c4", "c5", "c6")


@dataclass(frozen=True)
class Params:
    """Coupling parameters: range ``r`` and higher-order strengths ``lam``, ``mu``."""

    r: float
    lam: float = 0.0
    mu: float = 0.0

    def __post_init__(self):
        if not 0.0 < self.r <= 0.5:
            raise ValueError(f"coupling range must satisfy 0 < r <= 1/2, got r={self.r}")

    def as_tuple(self):
        return (self.r, self.lam, self.mu)


def w_kernel(r, x):
    """Indicator coupling kernel on the unit-circumference ring.

    Returns 1 where the circular distance of ``x`` to 0 is at most ``r``,
    else 0. ``x`` is reduced modulo 1; scalar or array.
    """
    if not 0.0 < r <= 0.5:
        raise ValueError(f"coupling range must satisfy 0 < r <= 1/2, got r={r}")
    x = np.asarray(x, dtype=float) % 1.0
    out = np.where(np.minimum(x, 1.0 - x) <= r, 1.0, 0.0)
    return float(out) if out.ndim == 0 else out


def w_hat(r, k):
    """Cosine-series coefficient of the indicator kernel at integer mode ``k``.

    ``4r`` at ``k = 0`` and ``2 sin(2 pi k r) / (pi k)`` otherwise; even in
    ``k``. Accepts scalar or integer-array ``k``.
    """
    k = np.asarray(k)
    safe = np.where(k == 0, 1, k)
    out = np.where(k == 0, 4.0 * r, 2.0 * np.sin(TWO_PI * k * r) / (math.pi * safe))
    return float(out) if out.ndim == 0 else out


def w_hat_r_deriv(r, k):
    """Derivative of ``w_hat`` with respect to ``r``: ``4 cos(2 pi k r)`` for every mode."""
    out = 4.0 * np.cos(TWO_PI * np.asarray(k) * r)
    return float(out) if out.ndim == 0 else out


def c1(q, k, p):
    """Linearization eigenvalue at mode ``k`` around a ``q``-twisted state.

    Each value is an eigenvalue of multiplicity two of the phase-difference
    linearization. Vectorized over ``k``.
    """
    k = np.asarray(k)
    W = lambda j: w_hat(p.r, j)
    out = 0.25 * (W(q - k) + W(q + k)) - 0.25 * (2.0 + 4.0 * p.lam + 2.0 * p.mu) * w_hat(p.r, q)
    return float(out) if np.asarray(out).ndim == 0 else out


def c1_param_gradient(q, k, p):
    """Gradient of ``c1(q, k, .)`` with respect to ``(r, lam, mu)``."""
    dW = lambda j: w_hat_r_deriv(p.r, j)
    d_r = 0.25 * (dW(q - k) + dW(q + k) - (2.0 + 4.0 * p.lam + 2.0 * p.mu) * dW(q))
    wq = w_hat(p.r, q)
    return np.array([d_r, -wq, -0.5 * wq])


def c2(q, k, p):
    """Quadratic self-interaction coefficient; independent of ``mu``."""
    W = lambda j: w_hat(p.r, j)
    return 0.125 * (
        -W(q - 2 * k) + 2.0 * W(q - k) - 2.0 * W(q + k) + W(q + 2 * k)
        - 2.0 * p.lam * W(q - k) + 2.0 * p.lam * W(q + k)
    )


def c3(q, m, k, p):
    """Mixed quadratic coefficient on the difference mode; antisymmetric in (m, k)."""
    W = lambda j: w_hat(p.r, j)
    return 0.125 * (
        -W(q - m) + W(q - m + k) + W(q - k) - W(q + k) - W(q + m - k) + W(q + m)
    )


def c4(q, m, k, p):
    """Mixed quadratic coefficient on the sum mode; independent of ``lam`` and ``mu``."""
    W = lambda j: w_hat(p.r, j)
    return 0.125 * (
        -W(q - m - k) + W(q - m) + W(q - k) - W(q + k) - W(q + m) + W(q + m + k)
    )


def c5(q, k, p):
    """Cubic self-interaction coefficient on the base mode."""
    W = lambda j: w_hat(p.r, j)
    return (
        W(q - 2 * k) - 4.0 * W(q - k) + 6.0 * W(q) - 4.0 * W(q + k) + W(q + 2 * k)
        + 4.0 * p.lam * W(q - k) + 32.0 * p.lam * W(q) + 4.0 * p.lam * W(q + k)
        + 2.0 * p.mu * W(q - k) + 14.0 * p.mu * W(q) + 2.0 * p.mu * W(q + k)
    ) / 16.0


def c6(q, k, p):
    """Cubic coefficient on the tripled mode."""
    W = lambda j: w_hat(p.r, j)
    return (
        W(q - 3 * k) - 3.0 * W(q - 2 * k) + 3.0 * W(q - k) - 2.0 * W(q)
        + 3.0 * W(q + k) - 3.0 * W(q + 2 * k) + W(q + 3 * k)
        - 12.0 * p.lam * W(q - k) - 16.0 * p.lam * W(q) - 12.0 * p.lam * W(q + k)
        - 2.0 * p.mu * W(q)
    ) / 16.0


def coefficient(name, q, k, p, m=None):
    """Dispatch to one of ``c2..c6`` by name.

    ``m`` is required for ``c3``/``c4`` and rejected otherwise.
    """
    if name not in _COEFFICIENT_NAMES:
        raise ValueError(f"unknown coefficient {name!r}; expected one of {_COEFFICIENT_NAMES}")
    if name in ("c3", "c4"):
        if m is None:
            raise ValueError(f"{name} requires the mode argument m")
        return {"c3": c3, "c4": c4}[name](q, m, k, p)
    if m is not None:
        raise ValueError(f"{name} takes no mode argument m")
    return {"c2": c2, "c5": c5, "c6": c6}[name](q, k, p)


def tail_limit(q, p):
    """Limit of ``c1(q, k, p)`` as ``k`` grows; the only non-eigenvalue spectral point."""
    return 0.25 * w_hat(p.r, q) * (-2.0 - (4.0 * p.lam + 2.0 * p.mu))


def lambda0(q, r0):
    """Triplet strength at which the leading eigenvalue crosses zero.

    Valid as the stability boundary once the leading mode is the twist mode
    itself (``r0`` past the mode-locking radius); the caller is responsible
    for that interpretation.
    """
    wq = w_hat(r0, q)
    if abs(wq) < DEGENERACY_TOL:
        raise DegenerateKernelError(
            f"w_hat(r0={r0}, q={q}) = {wq:.3e}: eigenvalues do not respond to the "
            "triplet strength, stabilization impossible"
        )
    val = (w_hat(r0, 2 * q) + w_hat(r0, 0) - 2.0 * wq) / (4.0 * wq)
    # w_hat(2q) + w_hat(0) > 0 keeps the tail limit away from zero here
    assert abs(val + 0.5) > DEGENERACY_TOL
    return val


def big_H(q, r):
    """Critical combined higher-order strength ``4 lam + 2 mu`` at fixed ``(q, r)``.

    Satisfies the rescaling identity ``big_H(q, r) = big_H(1, q r)`` on the
    product ``q * r``.
    """
    wq = w_hat(r, q)
    if abs(wq) < DEGENERACY_TOL:
        raise DegenerateKernelError(
            f"w_hat(r={r}, q={q}) = {wq:.3e}: critical strength undefined"
        )
    return (w_hat(r, 0) + w_hat(r, 2 * q) - 2.0 * wq) / wq


def iota(upsilon):
    """Scaling function controlling how the strength trade-off moves the cubic coefficient.

    Closed form on ``upsilon >= 0``; raises SingularPointError where the
    denominator vanishes (small ``upsilon`` only). Scalar or array.
    """
    u = np.asarray(upsilon, dtype=float)
    if np.any(u < 0):
        raise ValueError("iota is defined for upsilon >= 0")
    s2 = np.sin(TWO_PI * u)
    s4 = np.sin(2.0 * TWO_PI * u)
    s6 = np.sin(3.0 * TWO_PI * u)
    num = -s2 + 4.0 * math.pi * u - s4 + s6 / 3.0
    den = 8.0 * (-s2 + s6 / 3.0 - (TWO_PI * u + 0.5 * s4 - 2.0 * s2))
    # den = 16*pi*g(upsilon) for the quarter-sum form of the denominator
    g = den / (16.0 * math.pi)
    bad = np.abs(g) < DEGENERACY_TOL
    if np.any(bad):
        pt = float(np.asarray(u)[bad].flat[0]) if u.ndim else float(u)
        raise SingularPointError(f"iota denominator vanishes at upsilon={pt}", point=pt)
    out = -s2 / TWO_PI + (num / den) * (-4.0 * u + s4 / math.pi)
    return float(out) if out.ndim == 0 else out


def cap_X(q, r):
    """Per-unit-strength slope of the cubic coefficient along the trade-off family."""
    return iota(q * r) / q


@lru_cache(maxsize=1)
def upsilon0():
    """Root of ``2 = 2 pi u - sin(2 pi u)``; threshold product ``q r`` for positivity of iota."""
    f = lambda u: 2.0 - TWO_PI * u + math.sin(TWO_PI * u)
    root = brentq(f, 0.25, 0.7, xtol=1e-15, rtol=8.9e-16)
    assert abs(f(root)) < 1e-12
    return root
