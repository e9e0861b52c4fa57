"""Stationary distributions of the double-well McKean-Vlasov equation.

A stationary law with mean ``kappa`` has density proportional to
``g(x) = exp(-(U(x) + L_W/2 (x - kappa)^2) / sigma)``, with
``U(x) = x^4/4 - x^2/2``; the fixed points ``kappa = f1(sigma, kappa)`` are
solved by quadrature and bracketing. The effective dynamics has the same
stationary laws at a shifted diffusion coefficient.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy import integrate as sp_integrate
from scipy import optimize

from .errors import (
    NearCriticalError,
    NumericalError,
    PreconditionError,
    SupercriticalError,
)
from .numerics import Quadrature, RootBracket, RngStream, find_root, golden_section_max

BRANCHES = ("zero", "plus", "minus")
K_MAX = 2.0
NEAR_CRITICAL = 1e-5
SIGMA0_FRACTION = 0.05
SIGMA_TOL = 1e-13
KAPPA_TOL = 1e-13


def _check_positive(**kw):
    for name, v in kw.items():
        if not (v > 0 and math.isfinite(v)):
            raise PreconditionError(f"{name} must be positive and finite, got {v}")


def truncation_radius(sigma: float, kappa: float = 0.0) -> float:
    return max(6.0, 4.0 * math.sqrt(1.0 + sigma) + abs(kappa) + 2.0)


def default_quadrature(sigma: float, kappa: float = 0.0) -> Quadrature:
    # rounding the radius up to a multiple of 1/8 lets nearby kappa values
    # share one cached rule
    return Quadrature(math.ceil(8.0 * truncation_radius(sigma, kappa)) / 8.0)


def log_density_g(x, sigma, kappa, L_W):
    x = np.asarray(x, dtype=float)
    return -(x ** 4 / 4 - x ** 2 / 2 + 0.5 * L_W * (x - kappa) ** 2) / sigma


def density_g(x, sigma: float, kappa: float, L_W: float):
    """Unnormalised stationary density for a law with mean ``kappa``."""
    _check_positive(sigma=sigma)
    out = np.exp(log_density_g(x, sigma, kappa, L_W))
    return float(out) if np.ndim(out) == 0 else out


def _moments(sigma, kappa, L_W, q):
    _check_positive(sigma=sigma)
    x = q.nodes
    lg = log_density_g(x, sigma, kappa, L_W)
    w = q.weights * np.exp(lg - lg.max())
    mass = w.sum()
    if not mass > 1e-300:
        raise NumericalError(f"density mass vanished (sigma={sigma}, kappa={kappa})")
    mean = float(w @ x / mass)
    var = float(w @ (x - mean) ** 2 / mass)
    return mean, var


def f1(sigma: float, kappa: float, L_W: float, q: Quadrature | None = None) -> float:
    """Mean of the density g(., sigma, kappa)."""
    return _moments(sigma, kappa, L_W, q or default_quadrature(sigma, kappa))[0]


def f2(sigma: float, kappa: float, L_W: float, q: Quadrature | None = None) -> float:
    """Centred variance of the density g(., sigma, kappa)."""
    return _moments(sigma, kappa, L_W, q or default_quadrature(sigma, kappa))[1]


# ---------------------------------------------------------------------------
# Critical diffusion
# ---------------------------------------------------------------------------

@lru_cache(maxsize=64)
def critical_sigma(L_W: float, tol: float = 1e-13) -> float:
    """Root of ``sigma -> f2(sigma, 0) - sigma / L_W``.

    The search bracket starts at [1e-3, 10] and is widened geometrically.
    """
    _check_positive(L_W=L_W)

    def h(s):
        return f2(s, 0.0, L_W) - s / L_W

    lo, hi = 1e-3, 10.0
    for _ in range(12):
        if h(lo) > 0:
            break
        lo /= 4
    for _ in range(12):
        if h(hi) < 0:
            break
        hi *= 4
    if not (h(lo) > 0 > h(hi)):
        raise NumericalError(f"no sign change for the critical diffusion on [{lo:g}, {hi:g}]")
    return find_root(h, RootBracket(lo, hi, tol=tol))


def critical_sigma_raw_integral(L_W: float, xtol: float = 1e-15) -> float:
    """Independent route to the critical diffusion.

    In the variable ``y = x / sqrt(2 sigma)`` the condition
    ``Var = sigma / L_W`` reads
    ``int_0^inf (y^2 - 1/(2 L_W)) exp((1 - L_W) y^2 - sigma y^4) dy = 0``.
    Evaluated with adaptive quadrature and Brent's method.
    """
    _check_positive(L_W=L_W)

    def raw(s):
        # shift the exponent by its maximum to keep the integrand O(1)
        peak = (1 - L_W) ** 2 / (4 * s) if L_W < 1 else 0.0

        def integrand(y):
            return (y * y - 0.5 / L_W) * math.exp((1 - L_W) * y * y - s * y ** 4 - peak)

        val, _ = sp_integrate.quad(integrand, 0, np.inf, epsabs=1e-12, epsrel=1e-12, limit=400)
        return val

    lo, hi = 1e-3, 10.0
    while raw(lo) < 0:
        lo /= 4
    while raw(hi) > 0:
        hi *= 4
    return optimize.brentq(raw, lo, hi, xtol=xtol, rtol=4 * np.finfo(float).eps, maxiter=500)


# ---------------------------------------------------------------------------
# Branch solving
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class StationarySolution:
    sigma: float
    kappa1: float
    kappa2: float
    branch: str
    model: str = "NL"
    L_W: float = 1.0
    # for the effective model: the nonlinear diffusion it corresponds to
    sigma_nl: float | None = None

    def __post_init__(self):
        if self.branch not in BRANCHES:
            raise PreconditionError(f"unknown branch {self.branch!r}")
        if not self.kappa2 > 0:
            raise NumericalError(f"non-positive variance {self.kappa2}")

    def residuals(self, delta: float = 0.0, p: int = 2) -> tuple[float, float]:
        """Fixed-point residuals ``(|f1 - kappa1|, |f2 - kappa2|)`` in the
        model's own diffusion coefficient."""
        s = self.sigma
        if self.model == "Eff":
            s = self.sigma + delta * self.L_W ** 2 * self.kappa2 / (2 * (p - 1))
        m, v = _moments(s, self.kappa1, self.L_W, default_quadrature(s, self.kappa1))
        return abs(m - self.kappa1), abs(v - self.kappa2)

    def negated(self) -> "StationarySolution":
        other = {"plus": "minus", "minus": "plus", "zero": "zero"}[self.branch]
        return StationarySolution(self.sigma, -self.kappa1 + 0.0, self.kappa2, other,
                                  self.model, self.L_W, self.sigma_nl)


def xi_tilde(sigma, kappa, L_W, q=None):
    return f1(sigma, kappa, L_W, q) - kappa


def solve_branch(sigma: float, L_W: float, branch: str = "zero", q: Quadrature | None = None,
                 k_max: float = K_MAX) -> StationarySolution:
    """Stationary solution of the nonlinear equation on the given branch.

    The plus branch uses the increasing-then-decreasing shape of
    ``kappa -> f1(sigma, kappa) - kappa`` on (0, k_max]: a golden-section
    search finds the maximiser and bisection runs on the decreasing part.
    """
    _check_positive(sigma=sigma, L_W=L_W)
    if branch not in BRANCHES:
        raise PreconditionError(f"branch must be one of {BRANCHES}, got {branch!r}")
    if branch == "zero":
        return StationarySolution(sigma, 0.0, f2(sigma, 0.0, L_W, q), "zero", L_W=L_W)
    if branch == "minus":
        return solve_branch(sigma, L_W, "plus", q, k_max).negated()

    sc = critical_sigma(L_W)
    if sigma >= sc:
        raise SupercriticalError(
            f"supercritical: no plus/minus branch at sigma={sigma} >= sigma_c={sc:.12g}")
    if sc - sigma < NEAR_CRITICAL:
        raise NearCriticalError(
            f"sigma is within {NEAR_CRITICAL:g} of sigma_c={sc:.12g}; the mean is ill-conditioned")

    def xi(k):
        return xi_tilde(sigma, k, L_W, q)

    k_peak = golden_section_max(xi, 0.0, k_max, tol=1e-7)
    if not xi(k_peak) > 0:
        raise NumericalError(f"fixed-point map has no positive excursion at sigma={sigma}")
    if not xi(k_max) < 0:
        raise NumericalError(f"f1(sigma, K_max) - K_max is not negative at sigma={sigma}")
    k1 = find_root(xi, RootBracket(k_peak, k_max, tol=KAPPA_TOL), accelerate=True)
    return StationarySolution(sigma, k1, f2(sigma, k1, L_W, q), "plus", L_W=L_W)


# ---------------------------------------------------------------------------
# Effective dynamics
# ---------------------------------------------------------------------------

def _shift(delta, p, L_W):
    return delta * L_W ** 2 / (2.0 * (p - 1))


def effective_critical_sigma(sigma_c: float, delta: float, p: int, L_W: float) -> float:
    if delta < 0 or p < 2:
        raise PreconditionError("need delta >= 0 and p >= 2")
    return sigma_c * (1.0 - delta * L_W / (2.0 * (p - 1)))


def g_eff(sigma: float, branch: str, delta: float, p: int, L_W: float) -> float:
    """Effective diffusion whose stationary law is the nonlinear one at
    ``sigma`` on ``branch``."""
    sol = solve_branch(sigma, L_W, branch)
    return sigma - _shift(delta, p, L_W) * sol.kappa2


def nl_to_eff(sol: StationarySolution, delta: float, p: int) -> StationarySolution:
    """Relabel a nonlinear stationary solution as an effective-dynamics one."""
    s_eff = sol.sigma - _shift(delta, p, sol.L_W) * sol.kappa2
    return StationarySolution(s_eff, sol.kappa1, sol.kappa2, sol.branch, "Eff", sol.L_W,
                              sigma_nl=sol.sigma)


def sigma0_floor(L_W: float) -> float:
    return SIGMA0_FRACTION * critical_sigma(L_W)


def solve_effective(sigma_prime: float, delta: float, p: int, L_W: float,
                    sigma0: float | None = None, residual_tol: float = 1e-8):
    """All stationary solutions of the effective dynamics at ``sigma_prime``.

    Each branch inverts the increasing map ``sigma -> g_eff(sigma)`` by
    bisection on ``[sigma0, ...]``. The asymmetric branches exist when
    ``sigma_prime`` lies below ``g_eff(sigma_c)``, where both branch
    variances meet; that bound is computed from the quadrature, not from the
    closed form of ``sigma_c^eff``.
    """
    _check_positive(sigma_prime=sigma_prime, L_W=L_W)
    if delta < 0 or p < 2:
        raise PreconditionError("need delta >= 0 and p >= 2")
    sc = critical_sigma(L_W)
    s0 = sigma0_floor(L_W) if sigma0 is None else sigma0
    c = _shift(delta, p, L_W)

    def gz(s):
        return s - c * f2(s, 0.0, L_W)

    if sigma_prime < gz(s0):
        raise PreconditionError(
            f"sigma'={sigma_prime} is below the supported range (g_eff(sigma0)={gz(s0):.6g})")
    hi = max(2.0 * s0, sigma_prime)
    while gz(hi) < sigma_prime:
        hi *= 2.0
    s_zero = find_root(lambda s: gz(s) - sigma_prime, RootBracket(s0, hi, tol=SIGMA_TOL),
                       accelerate=True)
    sols = [nl_to_eff(solve_branch(s_zero, L_W, "zero"), delta, p)]

    if sigma_prime < gz(sc):
        s_top = sc - NEAR_CRITICAL

        def gp(s):
            return g_eff(s, "plus", delta, p, L_W) - sigma_prime

        if gp(s_top) < 0:
            raise NearCriticalError(
                f"sigma'={sigma_prime} is within the near-critical window below "
                f"g_eff(sigma_c)={gz(sc):.12g}; the asymmetric branches are ill-conditioned")
        if gp(s0) > 0:
            raise PreconditionError(
                f"sigma'={sigma_prime} is below the supported range of the asymmetric branches")
        s_plus = find_root(gp, RootBracket(s0, s_top, tol=SIGMA_TOL), accelerate=True)
        plus = nl_to_eff(solve_branch(s_plus, L_W, "plus"), delta, p)
        sols += [plus, plus.negated()]

    for sol in sols:
        r1, r2 = sol.residuals(delta, p)
        if max(r1, r2) > residual_tol:
            raise NumericalError(
                f"effective solution on branch {sol.branch} has residual {max(r1, r2):.3g}")
    return sols


def count_effective_solutions(sigma_prime, delta, p, L_W) -> int:
    """Number of effective stationary solutions at ``sigma_prime``.

    Inside the near-critical window the asymmetric branches exist but are
    not solved for, and are counted from the monotone structure.
    """
    try:
        return len(solve_effective(sigma_prime, delta, p, L_W))
    except NearCriticalError:
        return 3


def lipschitz_kappa2(L_W: float, n: int = 200, sigma0: float | None = None) -> float:
    """Estimate of ``max |d kappa2 / d sigma|`` over [sigma0, sigma_c] for
    the zero and plus branches (finite differences on a grid)."""
    sc = critical_sigma(L_W)
    s0 = sigma0_floor(L_W) if sigma0 is None else sigma0
    grid = np.linspace(s0, sc - 10 * NEAR_CRITICAL, n)
    worst = 0.0
    for branch in ("zero", "plus"):
        k2 = np.array([solve_branch(s, L_W, branch).kappa2 for s in grid])
        worst = max(worst, float(np.max(np.abs(np.diff(k2) / np.diff(grid)))))
    return worst


@dataclass(frozen=True)
class ModelParams:
    """Double-well model data; ``(delta, p)`` selects the effective model."""

    L_W: float
    sigma: float
    delta: float | None = None
    p: int | None = None
    c0: float | None = field(default=None, compare=False)

    def __post_init__(self):
        _check_positive(L_W=self.L_W, sigma=self.sigma)
        if (self.delta is None) != (self.p is None):
            raise PreconditionError("delta and p must be given together")
        if self.delta is not None:
            _check_positive(delta=self.delta)
            if self.p < 2:
                raise PreconditionError("p must be >= 2")
            c0 = self.c0 if self.c0 is not None else smallness_threshold(self.L_W)
            object.__setattr__(self, "c0", c0)
            if self.delta / (self.p - 1) >= c0:
                raise PreconditionError(
                    f"delta/(p-1)={self.delta / (self.p - 1):.4g} exceeds the smallness threshold {c0:.4g}")


@lru_cache(maxsize=16)
def smallness_threshold(L_W: float) -> float:
    """``c0`` such that ``delta/(p-1) < c0`` keeps
    ``delta L_W^2 C_lip / (2(p-1)) < 1/2``."""
    return 1.0 / (L_W ** 2 * lipschitz_kappa2(L_W))


# ---------------------------------------------------------------------------
# Numerical verification helpers
# ---------------------------------------------------------------------------

_KURT_Q = Quadrature(12.0, 32, 48)


def kurtosis_A(beta: float) -> float:
    """``E[w] E[X^4 w] / E[X^2 w]^2`` with ``w = exp(-beta (X^2-1)^2)`` and
    X standard normal."""
    if beta < 0:
        raise PreconditionError(f"beta must be >= 0, got {beta}")
    x = _KURT_Q.nodes
    w = _KURT_Q.weights * np.exp(-x * x / 2 - beta * (x * x - 1) ** 2)
    m0 = w.sum()
    m2 = w @ x ** 2
    m4 = w @ x ** 4
    return float(m0 * m4 / (m2 * m2))


def kurtosis_A_slope_at_zero(h: float = 1e-4) -> float:
    """One-sided second-order difference for A'(0)."""
    return (-3 * kurtosis_A(0.0) + 4 * kurtosis_A(h) - kurtosis_A(2 * h)) / (2 * h)


def kurtosis_parameter(sigma: float, L_W: float) -> float:
    """The beta at which A is evaluated for given ``(sigma, L_W)``."""
    _check_positive(sigma=sigma, L_W=L_W)
    a = (L_W - 1) / math.sqrt(sigma)
    return (a + math.sqrt(a * a + 4)) ** -2


def _y_moments(sigma, L_W):
    """Moments 2, 4, 6 of the density proportional to
    ``exp(-sigma y^4/4 + (1-L_W) y^2/2)``."""
    def logd(y):
        return -sigma * y ** 4 / 4 + (1 - L_W) * y ** 2 / 2

    y_peak = math.sqrt(max(1 - L_W, 0.0) / sigma)
    top = logd(y_peak)
    R = max(6.0, 2 * y_peak)
    while logd(R) > top - 60:
        R *= 1.5
    q = Quadrature(R)
    y = q.nodes
    w = q.weights * np.exp(logd(y) - top)
    z = w.sum()
    y2 = y * y
    return float(w @ y2 / z), float(w @ y2 ** 2 / z), float(w @ y2 ** 3 / z)


def F1_and_derivative(sigma: float, L_W: float) -> tuple[float, float]:
    """``F1 = L_W E[Y^2]`` and ``F1' = (L_W/4)(E[Y^2]E[Y^4] - E[Y^6])``."""
    _check_positive(sigma=sigma, L_W=L_W)
    e2, e4, e6 = _y_moments(sigma, L_W)
    return L_W * e2, 0.25 * L_W * (e2 * e4 - e6)


def sqrt_scaling_probe(L_W: float, offsets, branch: str = "plus"):
    """Ratios ``kappa1 / sqrt(sigma_c - sigma)`` at the given offsets and the
    relative spread ``max/min - 1`` of the last three (by magnitude)."""
    offsets = [float(o) for o in offsets]
    if any(o < NEAR_CRITICAL for o in offsets):
        raise PreconditionError(f"offsets must be >= {NEAR_CRITICAL:g}")
    sc = critical_sigma(L_W)
    ratios = np.array([solve_branch(sc - o, L_W, branch).kappa1 / math.sqrt(o) for o in offsets])
    tail = np.abs(ratios[-3:])
    return ratios, float(tail.max() / tail.min() - 1.0)


@dataclass
class MomentCheck:
    name: str
    target: float
    estimate: float
    se: float

    @property
    def z(self) -> float:
        if self.se == 0:
            return 0.0 if self.estimate == self.target else math.inf
        return (self.estimate - self.target) / self.se

    @property
    def passed(self) -> bool:
        return abs(self.z) <= 3.0


def moment_clt_check(p: int, samples: int, stream: RngStream, chunk: int = 1_000_000):
    """Moments of ``Z_p = p^{-1/2} sum_i X_i`` with i.i.d. Rademacher
    ``X_i``, sampled through ``sum X_i = 2B - p`` with ``B ~ Bin(p, 1/2)``.

    Targets: E|Z|^2 = 1 (exact), E|Z|^4 = 3 - 2/p (exact),
    E|Z| -> sqrt(2/pi), E|Z|^3 -> 2 sqrt(2/pi) (Gaussian limits).
    """
    if p < 2:
        raise PreconditionError("p must be >= 2")
    if samples < 2:
        raise PreconditionError("need at least 2 samples")
    powers = (1, 2, 3, 4)
    s = np.zeros(4)
    ss = np.zeros(4)
    done, i = 0, 0
    while done < samples:
        n = min(chunk, samples - done)
        z = np.abs(2.0 * stream.spawn(i).binomial(p, 0.5, n) - p) / math.sqrt(p)
        for j, k in enumerate(powers):
            v = z ** k
            s[j] += v.sum()
            ss[j] += (v * v).sum()
        done += n
        i += 1
    mean = s / samples
    se = np.sqrt(np.maximum(ss - samples * mean ** 2, 0.0) / (samples - 1) / samples)
    c = math.sqrt(2 / math.pi)
    targets = (c, 1.0, 2 * c, 3.0 - 2.0 / p)
    names = ("E|Z|", "E|Z|^2", "E|Z|^3", "E|Z|^4")
    checks = [MomentCheck(nm, t, float(m), float(e))
              for nm, t, m, e in zip(names, targets, mean, se)]
    # exact second moment: sum of p unit variances divided by p
    checks.insert(0, MomentCheck("E|Z|^2 (analytic)", 1.0, p * 1.0 / p, 0.0))
    return checks
