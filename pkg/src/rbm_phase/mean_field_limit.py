"""Large-N magnetisation ODEs for the classical and random-batch Curie-Weiss
dynamics: drifts, equilibria and the critical inverse temperature.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import stats
from scipy.special import gammaln, xlogy

from .errors import NoPhaseTransitionError, PreconditionError
from .numerics import RootBracket, RngStream, find_root

BETA_BRACKET = (0.5, 10.0)
FD_STEP = 1e-8
MC_CHUNK = 1_000_000


def _check_p(p):
    if int(p) != p or p < 2:
        raise PreconditionError(f"batch size must be an integer >= 2, got {p}")


# ---------------------------------------------------------------------------
# Classical drift
# ---------------------------------------------------------------------------

def drift_classic(beta, m):
    """f(beta, m) = 2 exp(-beta|m|) (sinh(beta m) - m cosh(beta m))."""
    m = np.asarray(m, dtype=float)
    out = 2.0 * np.exp(-beta * np.abs(m)) * (np.sinh(beta * m) - m * np.cosh(beta * m))
    return float(out) if out.ndim == 0 else out


def dm_drift_classic_at_zero(beta: float, h: float = FD_STEP) -> float:
    """Central finite difference of the classical drift at m = 0.

    The drift has an ``m|m|`` term, so the error is ``O(h)`` (about
    ``2 beta (beta - 1) h``) rather than ``O(h^2)``; the default step keeps
    it far below 1e-6.
    """
    return (drift_classic(beta, h) - drift_classic(beta, -h)) / (2.0 * h)


def critical_beta_classic(tol: float = 1e-12) -> float:
    """Root of beta -> d/dm f(beta, 0), located numerically."""
    return find_root(dm_drift_classic_at_zero, RootBracket(*BETA_BRACKET, tol=tol))


# ---------------------------------------------------------------------------
# Random-batch drift
# ---------------------------------------------------------------------------

def _s1(p, beta, m):
    m = np.asarray(m, dtype=float)
    k = np.arange(p, dtype=float)
    log_c = gammaln(p) - gammaln(k + 1) - gammaln(p - k)
    qm = (1.0 - m[..., None]) / 2.0
    qp = (1.0 + m[..., None]) / 2.0
    logw = log_c + xlogy(k, qm) + xlogy(p - 1 - k, qp)
    expo = -2.0 * beta * np.maximum((2 * k + 1 - p) / p, 0.0)
    return np.exp(logw + expo).sum(axis=-1)


def s_sums(p: int, beta: float, m):
    """The binomial sums ``(S1, S2)``; ``S2(m)`` is evaluated as ``S1(-m)``
    so that the symmetry holds bit for bit."""
    _check_p(p)
    m = np.asarray(m, dtype=float)
    if np.any(np.abs(m) > 1):
        raise PreconditionError("m must lie in [-1, 1]")
    s1, s2 = _s1(p, beta, m), _s1(p, beta, -m)
    if m.ndim == 0:
        return float(s1), float(s2)
    return s1, s2


def drift_rb(p: int, beta: float, m):
    """f_p(beta, m) = (S1 - S2) - m (S1 + S2)."""
    s1, s2 = s_sums(p, beta, m)
    m = np.asarray(m, dtype=float)
    out = (s1 - s2) - m * (s1 + s2)
    return float(out) if np.ndim(out) == 0 else out


def dm_drift_rb_at_zero(p: int, beta: float) -> float:
    """Closed-form derivative of f_p at m = 0:
    ``2 (1/2)^(p-1) sum_k (p-2-2k) C(p-1,k) exp(-2 beta ((2k+1-p)/p)_+)``."""
    _check_p(p)
    k = np.arange(p, dtype=float)
    logw = gammaln(p) - gammaln(k + 1) - gammaln(p - k) - (p - 1) * math.log(2.0)
    expo = -2.0 * beta * np.maximum((2 * k + 1 - p) / p, 0.0)
    return float(2.0 * np.sum((p - 2 - 2 * k) * np.exp(logw + expo)))


def g_p_exact(p: int, beta: float) -> float:
    """``E[2(-p Y - 1) exp(-2 beta (Y)_+)]`` with ``Y = 2X/p - (p-1)/p`` and
    ``X ~ Binomial(p-1, 1/2)``, summed against the binomial pmf."""
    _check_p(p)
    x = np.arange(p)
    y = 2.0 * x / p - (p - 1) / p
    pmf = stats.binom.pmf(x, p - 1, 0.5)
    return float(np.sum(pmf * 2.0 * (-p * y - 1.0) * np.exp(-2.0 * beta * np.maximum(y, 0.0))))


def g_p_monte_carlo(p: int, beta: float, samples: int, stream: RngStream,
                    chunk: int = MC_CHUNK) -> tuple[float, float]:
    """Monte-Carlo estimate of g_p(beta) and its standard error.

    Samples are drawn in fixed-size chunks, chunk ``i`` on sub-stream ``i``,
    and partial sums are combined in chunk order, so the result depends only
    on ``(seed, samples, chunk)``.
    """
    _check_p(p)
    if samples < 1:
        raise PreconditionError("samples must be >= 1")
    total = 0.0
    total_sq = 0.0
    done = 0
    i = 0
    while done < samples:
        n = min(chunk, samples - done)
        x = stream.spawn(i).binomial(p - 1, 0.5, n)
        y = 2.0 * x / p - (p - 1) / p
        v = 2.0 * (-p * y - 1.0) * np.exp(-2.0 * beta * np.maximum(y, 0.0))
        total += float(v.sum())
        total_sq += float((v * v).sum())
        done += n
        i += 1
    mean = total / samples
    if samples > 1:
        var = max(total_sq - samples * mean * mean, 0.0) / (samples - 1)
        se = math.sqrt(var / samples)
    else:
        se = math.inf
    return mean, se


def critical_beta(p: int, tol: float = 1e-10) -> float:
    """The unique root beta_{c,p} of beta -> d/dm f_p(beta, 0)."""
    _check_p(p)
    if p < 4:
        raise NoPhaseTransitionError(
            f"no phase transition for p={p}: 0 is the unique equilibrium and it is stable")
    return find_root(lambda b: dm_drift_rb_at_zero(p, b), RootBracket(*BETA_BRACKET, tol=tol))


def critical_beta_asymptotic(p) -> float:
    return 1.0 + math.sqrt(2.0 / (p * math.pi))


# ---------------------------------------------------------------------------
# ODE and equilibria
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LimitDrift:
    beta: float
    p: int | None = None

    def __post_init__(self):
        if not self.beta > 0:
            raise PreconditionError(f"beta must be positive, got {self.beta}")
        if self.p is not None:
            _check_p(self.p)

    def __call__(self, m):
        if self.p is None:
            return drift_classic(self.beta, m)
        return drift_rb(self.p, self.beta, m)

    def dm_at_zero(self) -> float:
        if self.p is None:
            return dm_drift_classic_at_zero(self.beta)
        return dm_drift_rb_at_zero(self.p, self.beta)


def ode_integrate(drift: LimitDrift, m0: float, dt: float = 1e-3, T: float = 10.0):
    """Classical RK4 for dm/dt = drift(m). Returns ``(times, values)``."""
    if not -1.0 <= m0 <= 1.0:
        raise PreconditionError(f"m0 must lie in [-1, 1], got {m0}")
    if not dt > 0:
        raise PreconditionError(f"dt must be positive, got {dt}")
    n = int(math.ceil(T / dt - 1e-12))
    t = np.arange(n + 1) * dt
    m = np.empty(n + 1)
    m[0] = x = float(m0)
    for i in range(n):
        k1 = drift(x)
        k2 = drift(min(max(x + 0.5 * dt * k1, -1.0), 1.0))
        k3 = drift(min(max(x + 0.5 * dt * k2, -1.0), 1.0))
        k4 = drift(min(max(x + dt * k3, -1.0), 1.0))
        x = x + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        if abs(x) > 1.0 + 1e-9:
            warnings.warn(f"trajectory left [-1, 1] at t={t[i + 1]:.6g} (m={x!r}); clamped")
        x = min(max(x, -1.0), 1.0)
        m[i + 1] = x
    return t, m


@dataclass
class EquilibriumReport:
    points: list = field(default_factory=list)  # (m*, stable) pairs
    dm_at_zero: float = float("nan")
    warnings: list = field(default_factory=list)

    @property
    def locations(self) -> np.ndarray:
        return np.array([m for m, _ in self.points])

    def to_dict(self) -> dict:
        return {
            "equilibria": [{"m": m, "stable": bool(s)} for m, s in self.points],
            "dm_drift_at_zero": self.dm_at_zero,
            "warnings": list(self.warnings),
        }


def _slope(drift, m, h=1e-6):
    lo, hi = max(m - h, -1.0), min(m + h, 1.0)
    return (drift(hi) - drift(lo)) / (hi - lo)


def equilibria(drift: LimitDrift, n_grid: int = 20001) -> EquilibriumReport:
    """Zeros of the drift on [-1, 1]: sign-change scan, then bisection.

    The stability flag is the sign of a finite-difference slope (negative
    means stable). Roots closer than ten grid spacings are reported in
    ``warnings`` since they may be a merged multiple root.
    """
    grid = np.linspace(-1.0, 1.0, n_grid)
    if n_grid % 2 == 1:
        grid[n_grid // 2] = 0.0
    vals = np.asarray(drift(grid))
    roots = [float(x) for x in grid[vals == 0.0]]
    s = np.sign(vals)
    for j in np.nonzero(s[:-1] * s[1:] < 0)[0]:
        roots.append(find_root(drift, RootBracket(grid[j], grid[j + 1], tol=1e-14),
                               ftol=1e-13))
    roots.sort()
    spacing = 2.0 / (n_grid - 1)
    report = EquilibriumReport(dm_at_zero=drift.dm_at_zero())
    for a, b in zip(roots, roots[1:]):
        if b - a < 10 * spacing:
            report.warnings.append(
                f"equilibria {a:.6g} and {b:.6g} are closer than 10 grid spacings")
    for r in roots:
        slope = report.dm_at_zero if r == 0.0 else _slope(drift, r)
        report.points.append((r, bool(slope < 0)))
    return report
