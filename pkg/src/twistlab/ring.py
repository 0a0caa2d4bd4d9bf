"""Finite ring dynamics: coupling weights, fast right-hand sides, Jacobians, solvers.

States are plain float arrays of length M holding phase differences relative
to oscillator 0; entry 0 is pinned to 0 and stays 0 exactly (the right-hand
side vanishes there by construction). Values are kept unwrapped so converged
profiles remain comparable to the analytic branch expansions.

The pairwise, triplet, and quadruplet sums all reduce to circular
convolutions of ``exp(i theta)`` against the weight vector, which the fast
path evaluates with FFTs in O(M log M); the naive path evaluates the same
convolutions by direct summation and serves as the oracle.
"""

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.integrate import solve_ivp
from scipy.linalg import lu_factor, lu_solve
from scipy.linalg import get_lapack_funcs
from scipy.optimize import brentq
from scipy.sparse.linalg import LinearOperator, eigs

from . import spectrum
from .errors import (
    ConsistencyError,
    ConvergenceError,
    NearSymmetryDegenerateError,
    NoThresholdError,
    ResourceLimitError,
    StiffnessError,
)
from .kernel import Params

TWO_PI = 2.0 * math.pi

PAIRWISE = "pairwise"
TRIPLET = "triplet"
QUADRUPLET = "quadruplet"
ORDERS = (PAIRWISE, TRIPLET, QUADRUPLET)

ATTRACTIVE = "attractive"
REPULSIVE = "repulsive"

#: Dense eigensolver / Newton size limit (state dimension M).
DENSE_CAP = 2000

_FD_STEP = 1e-6          # finite-difference step for higher-order Jacobian columns
_RCOND_LIMIT = 1e-12     # Newton Jacobian reciprocal-condition floor
_SELF_CHECK_RTOL = 1e-9  # fft vs naive agreement in self-check mode


@dataclass
class CouplingWeights:
    """Ring coupling weights indexed by signed circular offset (length M).

    Symmetric under ``d -> M - d``; all entries in [0, 1] with a single
    fractional pair at the window edge whenever ``r * M`` is not an integer,
    which makes ``r`` a continuous parameter of the finite system.
    """

    M: int
    r: float
    b: np.ndarray = field(repr=False)
    _b_fft: Optional[np.ndarray] = field(default=None, repr=False, compare=False)

    @property
    def b_fft(self):
        if self._b_fft is None:
            self._b_fft = np.fft.fft(self.b)
        return self._b_fft


def build_weights(M, r, integer_k=False):
    """Coupling weights for an M-ring with range ``r``.

    Offsets with circular distance up to ``floor(r M)`` get weight 1; the next
    distance gets the fractional remainder ``r M - floor(r M)`` (dropped when
    it would wrap past the antipode, or when ``integer_k`` is set). With
    ``integer_k`` the effective radius is quantized to multiples of ``1/M``, so
    radius sweeps lose their continuity; branch searches on such rings tend to
    succeed only when the target radius sits near an integer multiple of
    ``1/M``.
    """
    if M < 4:
        raise ValueError("need at least M = 4 oscillators")
    if not 0.0 < r <= 0.5:
        raise ValueError(f"coupling range must satisfy 0 < r <= 1/2, got r={r}")
    d = np.arange(M)
    dist = np.minimum(d, M - d)
    k0 = int(math.floor(r * M))
    b = np.zeros(M)
    b[dist <= k0] = 1.0
    if not integer_k:
        b[dist == k0 + 1] = r * M - k0
    return CouplingWeights(M=M, r=r, b=b)


@dataclass(frozen=True)
class SystemSpec:
    """Which interaction orders to evaluate, with what sign.

    ``include_orders=None`` selects the pairwise term plus whichever
    higher-order terms have nonzero strength. The repulsive (sign-reversed)
    model is defined for pairwise-only coupling.
    """

    p: Params
    sign: str = ATTRACTIVE
    include_orders: Optional[tuple] = None

    def __post_init__(self):
        if self.sign not in (ATTRACTIVE, REPULSIVE):
            raise ValueError(f"sign must be {ATTRACTIVE!r} or {REPULSIVE!r}")
        if self.include_orders is None:
            orders = [PAIRWISE]
            if self.p.lam != 0.0:
                orders.append(TRIPLET)
            if self.p.mu != 0.0:
                orders.append(QUADRUPLET)
            object.__setattr__(self, "include_orders", tuple(orders))
        else:
            orders = tuple(self.include_orders)
            bad = [o for o in orders if o not in ORDERS]
            if bad:
                raise ValueError(f"unknown interaction orders {bad}")
            object.__setattr__(self, "include_orders", orders)
        if self.sign == REPULSIVE and set(self.include_orders) != {PAIRWISE}:
            raise ValueError("the repulsive model is defined for pairwise-only coupling")

    @property
    def sign_factor(self):
        return -1.0 if self.sign == REPULSIVE else 1.0


def twisted_state(M, q):
    """The q-twisted phase-difference profile on M sites: ``2 pi q k / M``."""
    if M < 1 or q < 0:
        raise ValueError("need M >= 1 and q >= 0")
    return TWO_PI * q * np.arange(M) / M


def perturb(theta, amplitude, seed):
    """Add seeded uniform(-amplitude, amplitude) noise to every entry except the pinned one."""
    if amplitude < 0:
        raise ValueError("amplitude must be nonnegative")
    out = np.array(theta, dtype=float, copy=True)
    rng = np.random.default_rng(seed)
    out[1:] += rng.uniform(-amplitude, amplitude, size=len(out) - 1)
    return out


def symmetry_shift(theta, j):
    """Cyclic ring shift by ``j`` sites with re-pinning; maps equilibria to equilibria."""
    M = len(theta)
    if not 0 <= j < M:
        raise ValueError("shift must satisfy 0 <= j < M")
    out = np.roll(theta, -j) - theta[j]
    out[0] = 0.0
    return out


def best_shift_residual(theta_a, theta_b):
    """Closest ring-shift match between two states, compared modulo 2 pi.

    Returns ``(j, residual)`` minimizing the sup-norm of the wrapped difference
    ``symmetry_shift(theta_a, j) - theta_b`` over all integer shifts.
    """
    M = len(theta_a)
    if len(theta_b) != M:
        raise ValueError("states must have equal length")
    k = np.arange(M)
    shifted = theta_a[(k[None, :] + k[:, None]) % M] - theta_a[:, None]  # row j = shift by j
    residuals = np.max(np.abs(wrap_to_pi(shifted - theta_b[None, :])), axis=1)
    j = int(np.argmin(residuals))
    return j, float(residuals[j])


def wrap_to_pi(x):
    """Reduce angles to [-pi, pi)."""
    return (np.asarray(x) + np.pi) % TWO_PI - np.pi


def _direct_convolve(x, y):
    """Circular convolution by direct summation (the O(M^2) oracle path)."""
    M = len(x)
    idx = (np.arange(M)[:, None] - np.arange(M)[None, :]) % M
    return y[idx] @ x


def _check_state(theta, weights):
    theta = np.asarray(theta, dtype=float)
    if len(theta) != weights.M:
        raise ValueError(f"state length {len(theta)} does not match weights for M={weights.M}")
    if abs(theta[0]) > 1e-12:
        raise ValueError("entry 0 of the state must be pinned to 0")
    return theta


def _rhs_fft(theta, spec, weights):
    M = weights.M
    u = np.exp(1j * theta)
    U = np.fft.fft(u)
    B = weights.b_fft
    p = spec.p
    G = np.zeros(M)
    if PAIRWISE in spec.include_orders:
        G = (np.conj(u) * np.fft.ifft(B * U)).imag / M
    if TRIPLET in spec.include_orders:
        conv = np.fft.ifft(B * U * U)[(2 * np.arange(M)) % M]
        G = G + p.lam * (np.conj(u) ** 2 * conv).imag / M**2
    if QUADRUPLET in spec.include_orders:
        conv = np.fft.ifft(B * U * np.conj(U) * U)
        G = G + p.mu * (np.conj(u) * conv).imag / M**3
    out = spec.sign_factor * (G - G[0])
    out[0] = 0.0
    return out


def _rhs_naive(theta, spec, weights):
    M = weights.M
    u = np.exp(1j * theta)
    b = weights.b
    p = spec.p
    G = np.zeros(M)
    if PAIRWISE in spec.include_orders:
        G = (np.conj(u) * _direct_convolve(u, b)).imag / M
    if TRIPLET in spec.include_orders:
        inner = _direct_convolve(u, u)                      # precomputed inner convolution
        conv = _direct_convolve(inner, b)[(2 * np.arange(M)) % M]
        G = G + p.lam * (np.conj(u) ** 2 * conv).imag / M**2
    if QUADRUPLET in spec.include_orders:
        rev = np.conj(u[(-np.arange(M)) % M])
        inner = _direct_convolve(_direct_convolve(u, rev), u)
        conv = _direct_convolve(inner, b)
        G = G + p.mu * (np.conj(u) * conv).imag / M**3
    out = spec.sign_factor * (G - G[0])
    out[0] = 0.0
    return out


def rhs(theta, spec, weights, method="fft"):
    """Pinned phase-difference velocity field.

    ``method`` selects the FFT fast path, the direct-summation naive path, or
    ``"check"`` which runs both and raises unless they agree to relative
    sup-norm 1e-9. Entry 0 of the result is exactly 0.
    """
    theta = _check_state(theta, weights)
    if method == "fft":
        return _rhs_fft(theta, spec, weights)
    if method == "naive":
        return _rhs_naive(theta, spec, weights)
    if method == "check":
        fast = _rhs_fft(theta, spec, weights)
        slow = _rhs_naive(theta, spec, weights)
        diff = np.max(np.abs(fast - slow))
        # absolute floor keeps the check meaningful at equilibria (field ~ roundoff)
        if diff > 1e-12 + _SELF_CHECK_RTOL * np.max(np.abs(slow)):
            raise ConsistencyError(
                f"fft and naive right-hand sides disagree: sup-norm {diff:.3e} "
                f"on a field of sup-norm {np.max(np.abs(slow)):.3e}"
            )
        return fast
    raise ValueError(f"unknown method {method!r}; expected 'fft', 'naive', or 'check'")


def _pairwise_jacobian(theta, spec, weights):
    """Analytic Jacobian of the pairwise term on the pinned coordinates 1..M-1."""
    M = weights.M
    idx = (np.arange(M)[:, None] - np.arange(M)[None, :]) % M
    A = weights.b[idx] * np.cos(theta[None, :] - theta[:, None]) / M
    np.fill_diagonal(A, 0.0)
    np.fill_diagonal(A, -A.sum(axis=1))
    J = A[1:, 1:] - A[0, 1:]
    return spec.sign_factor * J


def _higher_order_spec(spec):
    orders = tuple(o for o in spec.include_orders if o != PAIRWISE)
    if not orders:
        return None
    return SystemSpec(p=spec.p, sign=spec.sign, include_orders=orders)


def jacobian(theta, spec, weights, fd_step=_FD_STEP):
    """Jacobian of :func:`rhs` on the pinned coordinates: analytic pairwise part,
    central finite differences for the higher-order terms."""
    theta = _check_state(theta, weights)
    M = weights.M
    J = (_pairwise_jacobian(theta, spec, weights)
         if PAIRWISE in spec.include_orders else np.zeros((M - 1, M - 1)))
    ho = _higher_order_spec(spec)
    if ho is not None:
        for m in range(1, M):
            bumped = theta.copy()
            bumped[m] = theta[m] + fd_step
            fp = _rhs_fft(bumped, ho, weights)
            bumped[m] = theta[m] - fd_step
            fm = _rhs_fft(bumped, ho, weights)
            J[:, m - 1] += (fp[1:] - fm[1:]) / (2.0 * fd_step)
    return J


def _jacobian_operator(theta, spec, weights, fd_step=_FD_STEP):
    """Matrix-free Jacobian action for iterative eigensolves."""
    M = weights.M
    u = np.exp(1j * theta)
    B = weights.b_fft
    conv_u = np.fft.ifft(B * np.fft.fft(u))
    diag = (np.conj(u) * conv_u).real / M
    ho = _higher_order_spec(spec)

    def matvec(v):
        v_full = np.concatenate([[0.0], np.asarray(v, dtype=float)])
        w = (np.conj(u) * np.fft.ifft(B * np.fft.fft(u * v_full))).real / M
        out = spec.sign_factor * (w - diag * v_full)
        out = out - out[0]
        if ho is not None:
            bp = _rhs_fft(_repin(theta + fd_step * v_full), ho, weights)
            bm = _rhs_fft(_repin(theta - fd_step * v_full), ho, weights)
            out = out + (bp - bm) / (2.0 * fd_step)
        return out[1:]

    return LinearOperator((M - 1, M - 1), matvec=matvec)


def _repin(theta):
    theta = np.asarray(theta, dtype=float).copy()
    theta[0] = 0.0
    return theta


def jacobian_spectrum(theta, spec, weights, n_eigs=None, dense_cap=DENSE_CAP):
    """Real parts of the Jacobian eigenvalues on the pinned coordinates, descending.

    Dense below ``dense_cap``; above it an iterative (matrix-free) extraction
    of ``n_eigs`` leading eigenvalues is used, which requires small ``n_eigs``.
    """
    theta = _check_state(theta, weights)
    M = weights.M
    if M <= dense_cap:
        eig = np.linalg.eigvals(jacobian(theta, spec, weights))
        parts = np.sort(eig.real)[::-1]
        return parts if n_eigs is None else parts[:n_eigs]
    if n_eigs is None or n_eigs > 64:
        raise ResourceLimitError(
            f"M={M} exceeds the dense cap {dense_cap}; request a small n_eigs "
            "for iterative extraction"
        )
    op = _jacobian_operator(theta, spec, weights)
    vals = eigs(op, k=n_eigs, which="LR", return_eigenvectors=False)
    return np.sort(vals.real)[::-1]


@dataclass(frozen=True)
class IntegrationResult:
    theta: np.ndarray
    t_reached: float
    stop_reason: str                      # "equilibrium" or "t_end"
    samples: Optional[list] = None        # [(t, theta), ...] when requested


def integrate(theta0, spec, weights, t_end, tol=1e-9, equilibrium_tol=1e-10,
              method="rk45", n_samples=0, rk4_step=None):
    """Integrate the ring until ``t_end`` or until the state is an equilibrium.

    The adaptive path is an embedded 5(4) Runge-Kutta pair with absolute and
    relative tolerance ``tol`` and a terminal equilibrium stop at
    ``sup |rhs| < equilibrium_tol``. ``method="rk4"`` selects a fixed-step
    classical RK4 walk (step ``rk4_step``) for bitwise-reproducible runs.
    Entry 0 never drifts: its velocity is identically zero.
    """
    theta0 = _check_state(theta0, weights)
    if tol <= 0:
        raise ValueError("tol must be positive")
    f = lambda th: _rhs_fft(th, spec, weights)

    if np.max(np.abs(f(theta0))) < equilibrium_tol:
        return IntegrationResult(theta=theta0.copy(), t_reached=0.0,
                                 stop_reason="equilibrium", samples=None)

    sample_ts = np.linspace(0.0, t_end, n_samples) if n_samples else None

    if method == "rk4":
        h = rk4_step if rk4_step is not None else t_end / max(1, int(t_end / 0.1))
        theta = theta0.copy()
        t = 0.0
        samples = [] if n_samples else None
        next_sample = 0
        while t < t_end - 1e-15:
            step = min(h, t_end - t)
            k1 = f(theta)
            k2 = f(theta + 0.5 * step * k1)
            k3 = f(theta + 0.5 * step * k2)
            k4 = f(theta + step * k3)
            theta = theta + (step / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            theta[0] = 0.0
            t += step
            if samples is not None:
                while next_sample < n_samples and sample_ts[next_sample] <= t:
                    samples.append((float(sample_ts[next_sample]), theta.copy()))
                    next_sample += 1
            if np.max(np.abs(f(theta))) < equilibrium_tol:
                return IntegrationResult(theta=theta, t_reached=t,
                                         stop_reason="equilibrium", samples=samples)
        return IntegrationResult(theta=theta, t_reached=t, stop_reason="t_end",
                                 samples=samples)

    if method != "rk45":
        raise ValueError(f"unknown method {method!r}; expected 'rk45' or 'rk4'")

    def event(t, y):
        return float(np.max(np.abs(f(y))) - equilibrium_tol)

    event.terminal = True
    event.direction = -1
    sol = solve_ivp(lambda t, y: f(y), (0.0, t_end), theta0, method="RK45",
                    rtol=tol, atol=tol, events=event, t_eval=sample_ts)
    if sol.status == -1:
        raise StiffnessError(f"integration step failed: {sol.message}",
                             t_reached=float(sol.t[-1]) if len(sol.t) else 0.0)
    if sol.status == 1:
        theta = _repin(sol.y_events[0][0])
        t_reached = float(sol.t_events[0][0])
        reason = "equilibrium"
    else:
        theta = _repin(sol.y[:, -1])
        t_reached = float(sol.t[-1])
        reason = "t_end"
    samples = None
    if n_samples:
        samples = [(float(t), _repin(sol.y[:, i])) for i, t in enumerate(sol.t)]
    return IntegrationResult(theta=theta, t_reached=t_reached, stop_reason=reason,
                             samples=samples)


@dataclass(frozen=True)
class EquilibriumResult:
    theta: np.ndarray
    residual_norm: float
    iterations: int
    jacobian_leading_eigs: np.ndarray


def newton_equilibrium(theta_init, spec, weights, max_iter=50, tol=1e-12,
                       n_report_eigs=10, dense_cap=DENSE_CAP):
    """Damped Newton iteration for an equilibrium of the pinned system.

    Steps are halved (at most 30 times) until the residual decreases. Success
    means ``sup |rhs| < tol``; the result carries the leading Jacobian
    eigenvalues at the solution for stability reporting (``n_report_eigs=0``
    skips that eigensolve).
    """
    theta = _check_state(theta_init, weights).copy()
    M = weights.M
    if M > dense_cap:
        raise ResourceLimitError(f"Newton refinement is dense-only; M={M} exceeds {dense_cap}")
    gecon = get_lapack_funcs("gecon", (np.empty((2, 2)),))

    def _finish(res, iteration):
        if n_report_eigs:
            eigs_now = jacobian_spectrum(theta, spec, weights, n_eigs=n_report_eigs)
        else:
            eigs_now = np.empty(0)
        return EquilibriumResult(theta=theta, residual_norm=float(res),
                                 iterations=iteration,
                                 jacobian_leading_eigs=eigs_now)

    F = rhs(theta, spec, weights)
    res = np.max(np.abs(F))
    for iteration in range(max_iter):
        if res < tol:
            return _finish(res, iteration)
        J = jacobian(theta, spec, weights)
        lu, piv = lu_factor(J)
        rcond = gecon(lu, np.linalg.norm(J, 1), norm="1")[0]
        if rcond < _RCOND_LIMIT:
            raise NearSymmetryDegenerateError(
                f"Jacobian reciprocal condition {rcond:.2e} at residual {res:.2e}: "
                "iteration sits on the ring-shift family; restart from a different "
                "pattern phase"
            )
        delta = lu_solve((lu, piv), -F[1:])
        step = 1.0
        for _ in range(30):
            trial = theta.copy()
            trial[1:] += step * delta
            F_new = rhs(trial, spec, weights)
            new_res = np.max(np.abs(F_new))
            if new_res < res:
                theta, res, F = trial, new_res, F_new
                break
            step *= 0.5
        else:
            raise ConvergenceError(
                f"Newton stalled after {iteration} iterations at residual {res:.3e}",
                iterations=iteration, residual=float(res),
            )
    if res < tol:
        return _finish(res, max_iter)
    raise ConvergenceError(
        f"Newton did not reach tolerance {tol:.1e} in {max_iter} iterations; "
        f"final residual {res:.3e}",
        iterations=max_iter, residual=float(res),
    )


def finite_threshold(q, M, kind=ATTRACTIVE, xtol=1e-6):
    """Finite-size bifurcation radius of the q-twisted state on an M-ring.

    Bisects the sign of the relevant leading Jacobian eigenvalue at the
    twisted state, using the continuous (fractional) weights; resolves the
    radius to ``xtol`` (default 1e-6). Requires M >= 20 q so the profile is
    resolved.
    """
    if kind not in (ATTRACTIVE, REPULSIVE):
        raise ValueError(f"kind must be {ATTRACTIVE!r} or {REPULSIVE!r}")
    if M < 20 * q:
        raise ValueError(f"need M >= 20 q to resolve the twisted profile; got M={M}, q={q}")
    theta = twisted_state(M, q)
    p = Params(0.25, 0.0, 0.0)  # placeholder; r is the swept weight parameter
    spec = SystemSpec(p=p, sign=kind, include_orders=(PAIRWISE,))
    # sign-normalized objective: negative below the threshold, positive above
    flip = 1.0 if kind == ATTRACTIVE else -1.0

    def g(r):
        w = build_weights(M, r)
        return flip * float(jacobian_spectrum(theta, spec, w, n_eigs=1)[0])

    center = spectrum.threshold(
        q, spectrum.ATTRACTIVE_R0 if kind == ATTRACTIVE else spectrum.REPULSIVE_R0
    )
    step = 1e-3
    lo = hi = center
    g_center = g(center)
    if g_center < 0.0:
        g_hi = g_center
        for _ in range(60):
            hi = min(hi + step, 0.5)
            g_hi = g(hi)
            if g_hi > 0.0 or hi >= 0.5:
                break
        if g_hi <= 0.0:
            raise NoThresholdError(
                f"leading eigenvalue does not change sign above r={center:.4f} (q={q}, M={M})"
            )
    else:
        g_lo = g_center
        for _ in range(60):
            lo = max(lo - step, 2.0 / M)
            g_lo = g(lo)
            if g_lo < 0.0 or lo <= 2.0 / M:
                break
        if g_lo >= 0.0:
            raise NoThresholdError(
                f"leading eigenvalue does not change sign below r={center:.4f} (q={q}, M={M})"
            )
    return brentq(g, lo, hi, xtol=xtol)
