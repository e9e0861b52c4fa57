"""Finite-N Curie-Weiss magnetisation chain, with and without random batches.

States are indexed by the number of positive spins ``i = 0..N``, i.e.
magnetisation ``m = -1 + 2 i / N``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaln

from .errors import NumericalError, PreconditionError
from .numerics import RngStream

GRID_TOL = 1e-9


@dataclass(frozen=True)
class CwParams:
    """Spin count ``N``, inverse temperature ``beta`` and optional batch
    size ``p`` (``None`` selects the classical dynamics)."""

    N: int
    beta: float
    p: int | None = None

    def __post_init__(self):
        if int(self.N) != self.N or self.N < 2:
            raise PreconditionError(f"N must be an integer >= 2, got {self.N}")
        if not self.beta >= 0 or not np.isfinite(self.beta):
            raise PreconditionError(f"beta must be a non-negative finite number, got {self.beta}")
        if self.p is not None and not (2 <= self.p <= self.N and int(self.p) == self.p):
            raise PreconditionError(f"batch size must be an integer in [2, N], got p={self.p}")

    @property
    def batched(self) -> bool:
        return self.p is not None


def magnetization_grid(N: int) -> np.ndarray:
    return -1.0 + 2.0 * np.arange(N + 1) / N


def state_index(m: float, N: int) -> int:
    """Grid index of ``m``; raises if ``m`` is not on the grid."""
    x = (m + 1.0) * N / 2.0
    i = int(round(x))
    if abs(x - i) > GRID_TOL or not 0 <= i <= N:
        raise PreconditionError(f"m={m!r} is not on the magnetization grid for N={N}")
    return i


@dataclass
class SpinConfiguration:
    spins: np.ndarray
    m: float = field(init=False)

    def __post_init__(self):
        self.spins = np.asarray(self.spins, dtype=np.int8)
        if self.spins.ndim != 1 or not np.isin(self.spins, (-1, 1)).all():
            raise PreconditionError("spins must be a 1-d sequence of +1/-1")
        self.m = int(self.spins.sum()) / self.spins.size

    @classmethod
    def from_magnetization(cls, m: float, N: int) -> "SpinConfiguration":
        i = state_index(m, N)
        return cls(np.concatenate([np.ones(i, np.int8), -np.ones(N - i, np.int8)]))


def hamiltonian(cfg: SpinConfiguration) -> float:
    N = cfg.spins.size
    return -N * cfg.m ** 2 / 2.0


# ---------------------------------------------------------------------------
# Transition probabilities
# ---------------------------------------------------------------------------

def _classical_rates_index(i, N, beta):
    i = np.asarray(i)
    m = -1.0 + 2.0 * i / N
    up = m + 2.0 / N
    down = m - 2.0 / N
    right = (1 - m) / 2 * np.exp(-beta * N / 2 * np.maximum(m * m - up * up, 0.0))
    left = (1 + m) / 2 * np.exp(-beta * N / 2 * np.maximum(m * m - down * down, 0.0))
    right = np.where(i == N, 0.0, right)
    left = np.where(i == 0, 0.0, left)
    return right, left


def classical_rates(m: float, params: CwParams) -> tuple[float, float]:
    """Single-spin Metropolis rates ``(right, left)`` of the magnetisation
    chain, moving by ``+2/N`` and ``-2/N`` respectively."""
    i = state_index(m, params.N)
    r, l = _classical_rates_index(i, params.N, params.beta)
    return float(r), float(l)


def _log_binom(n, k):
    """log C(n, k) with impossible arguments mapped to -inf."""
    n = np.asarray(n, dtype=float)
    k = np.asarray(k, dtype=float)
    ok = (k >= 0) & (k <= n) & (n >= 0)
    with np.errstate(invalid="ignore"):
        val = gammaln(n + 1) - gammaln(k + 1) - gammaln(n - k + 1)
    return np.where(ok, val, -np.inf)


def _weighted_sum(logw, factors):
    """sum(exp(logw) * factors) along the last axis, with max shift."""
    shift = np.max(logw, axis=-1, keepdims=True)
    shift = np.where(np.isfinite(shift), shift, 0.0)
    w = np.exp(logw - shift)
    return np.sum(w * factors, axis=-1) * np.exp(shift[..., 0])


def _rb_rates_index(i, N, p, beta):
    i = np.atleast_1d(np.asarray(i))
    n_plus = i.astype(float)[:, None]
    n_minus = (N - i).astype(float)[:, None]
    k = np.arange(p, dtype=float)[None, :]
    log_norm = float(_log_binom(N - 1, p - 1))
    e_right = np.exp(-2 * beta * np.maximum((2 * k + 1 - p) / p, 0.0))
    e_left = np.exp(-2 * beta * np.maximum((p - 1 - 2 * k) / p, 0.0))
    # k counts negative spins among the p-1 companions of the chosen spin
    lw_right = _log_binom(n_minus - 1, k) + _log_binom(n_plus, p - 1 - k) - log_norm
    lw_left = _log_binom(n_minus, k) + _log_binom(n_plus - 1, p - 1 - k) - log_norm
    right = n_minus[:, 0] / N * _weighted_sum(lw_right, e_right)
    left = n_plus[:, 0] / N * _weighted_sum(lw_left, e_left)
    right = np.where(n_minus[:, 0] == 0, 0.0, right)
    left = np.where(n_plus[:, 0] == 0, 0.0, left)
    return right, left


def rb_rates(m: float, params: CwParams) -> tuple[float, float]:
    """Random-batch transition rates ``(right, left)``: hypergeometric
    average over the clusters of size ``p`` containing the flipped spin."""
    if params.p is None:
        raise PreconditionError("rb_rates needs a batch size p")
    i = state_index(m, params.N)
    r, l = _rb_rates_index(i, params.N, params.p, params.beta)
    return float(r[0]), float(l[0])


def rates(params: CwParams) -> tuple[np.ndarray, np.ndarray]:
    """Right/left rates for every grid state, in grid order."""
    i = np.arange(params.N + 1)
    if params.p is None:
        return _classical_rates_index(i, params.N, params.beta)
    return _rb_rates_index(i, params.N, params.p, params.beta)


@dataclass(frozen=True)
class TransitionMatrix:
    params: CwParams
    matrix: np.ndarray

    @property
    def grid(self) -> np.ndarray:
        return magnetization_grid(self.params.N)


def build_matrix(params: CwParams) -> TransitionMatrix:
    right, left = rates(params)
    bad = ~((right >= 0) & (right <= 1) & (left >= 0) & (left <= 1))
    if bad.any():
        i = int(np.argmax(bad))
        raise NumericalError(
            f"rate outside [0, 1] at state {i}: right={right[i]!r}, left={left[i]!r}")
    n = params.N + 1
    M = np.zeros((n, n))
    idx = np.arange(n)
    M[idx[:-1], idx[:-1] + 1] = right[:-1]
    M[idx[1:], idx[1:] - 1] = left[1:]
    M[idx, idx] = 1.0 - right - left
    M.setflags(write=False)
    return TransitionMatrix(params, M)


def gibbs_distribution(N: int, beta: float) -> np.ndarray:
    """Invariant law of the classical chain,
    proportional to ``C(N, (1+m)N/2) exp(beta N m^2 / 2)``."""
    i = np.arange(N + 1)
    m = magnetization_grid(N)
    logw = _log_binom(N, i) + beta * N * m * m / 2
    w = np.exp(logw - logw.max())
    return w / w.sum()


# ---------------------------------------------------------------------------
# Spin-level simulation
# ---------------------------------------------------------------------------

def _energy_change(params: CwParams, s_i, companions_sum, m):
    """H(sigma') - H(sigma) for flipping a spin of value ``s_i``."""
    if params.p is None:
        return 2.0 * s_i * m - 2.0 / params.N
    return 2.0 / params.p * s_i * companions_sum


def simulate_chain(params: CwParams, m0: float, steps: int, stream: RngStream) -> np.ndarray:
    """Spin-level Metropolis trajectory of the magnetisation.

    Returns an array of length ``steps + 1`` starting with ``m0``. With
    ``p = N`` the cluster is the whole system and no cluster draw is made,
    so the classical and batched simulators consume the stream identically.
    """
    N, p = params.N, params.p
    spins = SpinConfiguration.from_magnetization(m0, N).spins.astype(np.int64)
    total = int(spins.sum())
    gen = stream.generator
    out = np.empty(steps + 1)
    out[0] = total / N
    full_cluster = p is None or p == N
    for t in range(steps):
        i = int(gen.integers(0, N))
        s_i = int(spins[i])
        if full_cluster:
            csum = total - s_i
        else:
            others = gen.choice(N - 1, size=p - 1, replace=False)
            others = others + (others >= i)
            csum = int(spins[others].sum())
        dH = _energy_change(params, s_i, csum, total / N)
        u = gen.random()
        if u < np.exp(-params.beta * max(dH, 0.0)):
            spins[i] = -s_i
            total -= 2 * s_i
        out[t + 1] = total / N
    return out


@dataclass(frozen=True)
class EmpiricalRates:
    grid: np.ndarray
    right: np.ndarray
    left: np.ndarray
    counts: np.ndarray

    def standard_errors(self, right_ref, left_ref):
        """Binomial standard errors at reference probabilities."""
        n = np.maximum(self.counts, 1)
        return (np.sqrt(right_ref * (1 - right_ref) / n),
                np.sqrt(left_ref * (1 - left_ref) / n))


def _one_step_trials(params: CwParams, i_state: int, trials: int, gen: np.random.Generator):
    """Independent single-step experiments from a configuration with
    ``i_state`` positive spins (spins 0..i_state-1 are +1)."""
    N, p = params.N, params.p
    spins = np.where(np.arange(N) < i_state, 1, -1).astype(np.int64)
    m = (2 * i_state - N) / N
    chosen = gen.integers(0, N, size=trials)
    s_i = spins[chosen]
    if p is None or p == N:
        csum = spins.sum() - s_i
    else:
        # p-1 distinct companions among the N-1 other spins
        keys = gen.random((trials, N - 1))
        picks = np.argpartition(keys, p - 2, axis=1)[:, : p - 1]
        picks = picks + (picks >= chosen[:, None])
        csum = spins[picks].sum(axis=1)
    dH = _energy_change(params, s_i, csum, m)
    accept = gen.random(trials) < np.exp(-params.beta * np.maximum(dH, 0.0))
    right = np.count_nonzero(accept & (s_i < 0))
    left = np.count_nonzero(accept & (s_i > 0))
    return right, left


def empirical_rates(params: CwParams, trials: int, stream: RngStream,
                    protocol: str = "independent", processes: int = 10) -> EmpiricalRates:
    """Per-state empirical right/left move frequencies.

    ``protocol="independent"``: ``trials`` fresh one-step experiments per
    state, each state on its own sub-stream. ``protocol="trajectory"``:
    from each starting state, ``processes`` chains run for ``trials`` steps
    and every step is credited to the state it started from.
    """
    if trials < 1:
        raise PreconditionError("trials must be >= 1")
    N = params.N
    grid = magnetization_grid(N)
    right = np.zeros(N + 1)
    left = np.zeros(N + 1)
    counts = np.zeros(N + 1, dtype=np.int64)
    if protocol == "independent":
        for i in range(N + 1):
            gen = stream.spawn(i).generator
            r, l = _one_step_trials(params, i, trials, gen)
            right[i], left[i], counts[i] = r, l, trials
    elif protocol == "trajectory":
        for i in range(N + 1):
            for k in range(processes):
                traj = simulate_chain(params, grid[i], trials, stream.spawn(i).spawn(k))
                idx = np.rint((traj + 1) * N / 2).astype(int)
                step = np.diff(idx)
                np.add.at(counts, idx[:-1], 1)
                np.add.at(right, idx[:-1][step > 0], 1)
                np.add.at(left, idx[:-1][step < 0], 1)
    else:
        raise PreconditionError(f"unknown protocol {protocol!r}")
    with np.errstate(invalid="ignore", divide="ignore"):
        fr = np.where(counts > 0, right / counts, np.nan)
        fl = np.where(counts > 0, left / counts, np.nan)
    return EmpiricalRates(grid, fr, fl, counts)


def invariant_distribution(params: CwParams, eps: float = 1e-9, max_iter: int = 10_000_000):
    """Power iteration from the uniform law; returns ``(nu, iterations)``."""
    from .numerics import power_iterate

    M = build_matrix(params)
    v0 = np.full(params.N + 1, 1.0 / (params.N + 1))
    return power_iterate(M, v0, eps, max_iter)


def count_modes(nu: np.ndarray, rel_floor: float = 1e-6) -> int:
    """Number of strict local maxima (plateaus counted once) above
    ``rel_floor * max(nu)``."""
    nu = np.asarray(nu)
    floor = rel_floor * nu.max()
    modes = 0
    n = nu.size
    j = 0
    while j < n:
        k = j
        while k + 1 < n and nu[k + 1] == nu[j]:
            k += 1
        left_ok = j == 0 or nu[j - 1] < nu[j]
        right_ok = k == n - 1 or nu[k + 1] < nu[j]
        if left_ok and right_ok and nu[j] >= floor:
            modes += 1
        j = k + 1
    return modes
