"""Stability spectra of twisted states: certified suprema, thresholds, alternative couplings.

The eigenvalue sequence ``c1(q, k, p)`` accumulates only at its tail limit, so
a finite mode list plus an analytic tail bound certifies suprema and infima
over all modes. Threshold radii are located by a coarse scan followed by
bracketed root refinement.
"""

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.optimize import brentq

from . import kernel
from .errors import NoBifurcationError, NoThresholdError
from .kernel import Params

#: Threshold kinds accepted by :func:`threshold`.
ATTRACTIVE_R0 = "attractive_r0"
REPULSIVE_R0 = "repulsive_r0"
R_STAR = "r_star"
THRESHOLD_KINDS = (ATTRACTIVE_R0, REPULSIVE_R0, R_STAR)

ALT_FAMILIES = ("general_d", "product4", "triangle")

_SCAN_STEP = 1e-3
_REFINE_XTOL = 1e-12


@dataclass(frozen=True)
class SpectrumReport:
    """Eigenvalue listing with a certified supremum.

    Every listed eigenvalue has multiplicity two in the full linearization.
    ``sup_attained_at`` is the mode index of the supremum, or ``None`` when it
    is only approached along the tail. ``truncation_bound`` bounds
    ``|c1(k) - tail|`` for every unlisted mode ``k > max(ks)``.
    """

    q: int
    p: Params
    ks: np.ndarray = field(repr=False)
    values: np.ndarray = field(repr=False)
    sup_value: float
    sup_attained_at: Optional[int]
    tail: float
    truncation_bound: float


def mode_cutoff(q, tol):
    """Number of modes to list so that all unlisted ones sit within ``tol`` of the tail."""
    if tol <= 0:
        raise ValueError("tol must be positive")
    return max(4 * q, math.ceil(1.0 / (math.pi * tol)) + q, 64)


def truncation_bound(q, K):
    """Bound on ``|c1(q, k, p) - tail|`` valid for every ``k > K`` and every ``p``."""
    if K <= q:
        raise ValueError("cutoff must exceed q")
    return (1.0 / (2.0 * math.pi)) * (1.0 / (K + 1 - q) + 1.0 / (K + 1 + q))


def spectrum_report(q, p, tol=1e-6):
    """Compute the eigenvalue sequence and its supremum, certified to within ``tol``."""
    if q < 1:
        raise ValueError("twist number q must be a positive integer")
    K = mode_cutoff(q, tol)
    ks = np.arange(1, K + 1)
    values = kernel.c1(q, ks, p)
    tail = kernel.tail_limit(q, p)
    tb = truncation_bound(q, K)
    i_max = int(np.argmax(values))
    listed_max = float(values[i_max])
    if listed_max >= tail:
        sup_value, attained = listed_max, int(ks[i_max])
    else:
        sup_value, attained = tail, None
    return SpectrumReport(
        q=q, p=p, ks=ks, values=values,
        sup_value=sup_value, sup_attained_at=attained,
        tail=tail, truncation_bound=tb,
    )


def kappa(q, ell, p, tol=1e-6):
    """Supremum of ``c1(q, k, p)`` over all modes ``k != ell``, certified to ``tol``."""
    if ell < 1:
        raise ValueError("ell must be a positive integer")
    K = max(mode_cutoff(q, tol), ell + 1)
    ks = np.arange(1, K + 1)
    values = kernel.c1(q, ks, p)
    values[ell - 1] = -np.inf
    return max(float(values.max()), kernel.tail_limit(q, p))


def _certified_min(q, p, ks):
    """Lower envelope over all modes: listed minimum against the tail."""
    values = kernel.c1(q, ks, p)
    return min(float(values.min()), kernel.tail_limit(q, p))


def _scan_first_sign_change(f, r_grid):
    """First index i with sign(f(r_i)) flipping from <=0 to >0; None if f never goes positive."""
    prev = f(r_grid[0])
    for i in range(1, len(r_grid)):
        cur = f(r_grid[i])
        if prev <= 0.0 < cur:
            return i
        prev = cur
    return None


def threshold(q, kind):
    """Threshold coupling radii of the pairwise-only system.

    ``attractive_r0``: first zero crossing of the mode-1 eigenvalue from below.
    ``repulsive_r0``: lower edge of the radius window on which every eigenvalue
    is positive (requires ``q >= 2``).
    ``r_star``: radius past which the leading mode is the twist mode itself,
    estimated by a downward grid scan with bracket refinement.
    """
    if q < 1:
        raise ValueError("twist number q must be a positive integer")
    if kind == ATTRACTIVE_R0:
        p_of = lambda r: Params(r, 0.0, 0.0)
        f = lambda r: kernel.c1(q, 1, p_of(r))
        grid = np.arange(_SCAN_STEP, 0.5 + _SCAN_STEP / 2, _SCAN_STEP)
        if f(grid[0]) > 0.0:  # crossing below the first grid point (very large q)
            return brentq(f, 1e-9, grid[0], xtol=_REFINE_XTOL)
        i = _scan_first_sign_change(f, grid)
        if i is None:
            raise NoThresholdError(f"mode-1 eigenvalue never becomes positive for q={q}")
        return brentq(f, grid[i - 1], grid[i], xtol=_REFINE_XTOL)

    if kind == REPULSIVE_R0:
        if q == 1:
            raise NoBifurcationError(
                "q=1 twisted states never gain stability under sign reversal: no bifurcation"
            )
        ks = np.arange(1, mode_cutoff(q, 1e-6) + 1)
        f = lambda r: _certified_min(q, Params(r, 0.0, 0.0), ks)
        grid = np.arange(_SCAN_STEP, 0.5 + _SCAN_STEP / 2, _SCAN_STEP)
        i = _scan_first_sign_change(f, grid)
        if i is None:
            raise NoThresholdError(f"no radius window with all-positive eigenvalues for q={q}")
        return brentq(f, grid[i - 1], grid[i], xtol=_REFINE_XTOL)

    if kind == R_STAR:
        ks = np.arange(1, mode_cutoff(q, 1e-6) + 1)

        def leading_is_twist(r):
            values = kernel.c1(q, ks, Params(r, 0.0, 0.0))
            vq = values[q - 1]
            values[q - 1] = -np.inf
            return vq >= max(float(values.max()), kernel.tail_limit(q, Params(r, 0.0, 0.0)))

        grid = np.arange(0.5, _SCAN_STEP / 2, -_SCAN_STEP)
        if not leading_is_twist(grid[0]):
            raise NoThresholdError(f"leading mode is not the twist mode even at r=1/2 for q={q}")
        last_good = grid[0]
        first_bad = None
        for r in grid[1:]:
            if leading_is_twist(r):
                last_good = r
            else:
                first_bad = r
                break
        if first_bad is None:
            return float(grid[-1])  # numerical estimate: holds on the whole scanned range
        lo, hi = first_bad, last_good
        while hi - lo > 1e-6:
            mid = 0.5 * (lo + hi)
            if leading_is_twist(mid):
                hi = mid
            else:
                lo = mid
        return hi

    raise ValueError(f"unknown threshold kind {kind!r}; expected one of {THRESHOLD_KINDS}")


def sufficient_condition(q, r):
    """True when ``2/(pi q) <= 2 r - sin(2 pi r)/pi``.

    When this holds the leading eigenvalue over all modes is attained at the
    twist mode ``k = q``.
    """
    return 2.0 / (math.pi * q) <= 2.0 * r - math.sin(2.0 * math.pi * r) / math.pi


def triangle_tail_bound(q, k, L):
    """Bound on the truncation error of the triangle-coupling mode sum at cutoff ``L``."""
    c = q + abs(k)
    if L <= c + 1:
        raise ValueError("cutoff L too small for the requested (q, k)")
    return (8.0 / math.pi**2) / (L - c)


def alt_eigenvalue(family, q, r, k, d=None, m_last=None, ell_cutoff=None, corrected=False):
    """Twisted-state eigenvalue of one of the alternative higher-order couplings.

    ``general_d``: coupling through a single kernel evaluation over ``d + 1``
    phases with integer weights; needs ``m_last`` (the weight on the evolving
    phase, which carries the sign). The eigenvalue is mode-independent for
    ``k != 0``.
    ``product4``: product-kernel triplet coupling.
    ``triangle``: fully symmetric triangle coupling; the mode sum is truncated
    symmetrically at ``|ell| <= ell_cutoff`` with a certified O(1/L) tail.
    The default triangle series carries two kernel factors per term; a direct
    linearization of the triple-kernel coupling produces a third factor, and
    ``corrected=True`` selects that variant (the two disagree; finite-ring
    Jacobians converge to the corrected one).
    Returns 0 for ``k = 0`` in every family.
    """
    if family not in ALT_FAMILIES:
        raise ValueError(f"unknown coupling family {family!r}; expected one of {ALT_FAMILIES}")
    if k == 0:
        return 0.0
    if family == "general_d":
        if m_last is None:
            raise ValueError("general_d requires the integer weight m_last")
        if d is not None and d < 2:
            raise ValueError("general_d covers couplings of three or more phases (d >= 2)")
        return 0.5 * m_last * kernel.w_hat(r, q)
    if family == "product4":
        W = lambda j: kernel.w_hat(r, j)
        return 0.25 * W(q) * (W(q + k) + W(q - k) - 2.0 * W(q))
    # triangle
    L = 400 if ell_cutoff is None else int(ell_cutoff)
    triangle_tail_bound(q, k, L)  # validates L
    ell = np.arange(-L, L + 1)
    W = lambda j: kernel.w_hat(r, j)
    if corrected:
        total = np.sum(
            W(ell) * (W(ell + k + q) * W(ell - q)
                      + W(ell + k - q) * W(ell + q)
                      - 2.0 * W(ell + q) * W(ell - q))
        )
        return float(total) / 8.0
    total = np.sum(
        W(-k + ell - q) * W(ell + q)
        + W(-k + ell + q) * W(ell - q)
        + W(ell - q) * W(k + q + ell)
        + W(ell + q) * W(k - q + ell)
        - 4.0 * W(ell - q) * W(ell + q)
    )
    return float(total) / 8.0
