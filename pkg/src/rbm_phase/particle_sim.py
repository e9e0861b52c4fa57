"""Time-discretised interacting particle systems in one dimension.

Four schemes share one ensemble type:

* ``full``          Euler-Maruyama with all pairwise interactions,
* ``rb``            random-batch interactions inside a fresh uniform partition,
* ``mean_field_rb`` p-1 companions drawn with replacement from the ensemble,
* ``effective``     the mean-field SDE with diffusion inflated by the
                    batch-force variance, integrated with its own inner step.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import NumericalError, PreconditionError
from .numerics import RngStream

SCHEMES = ("full", "rb", "mean_field_rb", "effective")
_ROW_CHUNK = 512


@dataclass(frozen=True)
class PotentialPair:
    """Confinement ``U`` and interaction ``W`` given by their gradients."""

    gradU: Callable[[np.ndarray], np.ndarray]
    gradW: Callable[[np.ndarray], np.ndarray]
    gradW_squared: Callable[[np.ndarray], np.ndarray]
    is_quadratic_W: bool = False
    L_W: float | None = None

    def __post_init__(self):
        if self.is_quadratic_W:
            if self.L_W is None:
                raise PreconditionError("a quadratic interaction needs its coefficient L_W")
            x = np.linspace(-3.0, 3.0, 13)
            scale = 1.0 + abs(self.L_W) ** 2
            if (np.max(np.abs(self.gradW(x) - self.L_W * x)) > 1e-12 * scale
                    or np.max(np.abs(self.gradW_squared(x) - (self.L_W * x) ** 2)) > 1e-12 * scale * 9):
                raise PreconditionError("gradW does not match the declared quadratic coefficient")

    @classmethod
    def double_well(cls, L_W: float) -> "PotentialPair":
        """``U(x) = x^4/4 - x^2/2`` and ``W(x) = L_W x^2 / 2``."""
        return cls(
            gradU=lambda x: x ** 3 - x,
            gradW=lambda x: L_W * x,
            gradW_squared=lambda x: (L_W * x) ** 2,
            is_quadratic_W=True,
            L_W=float(L_W),
        )


@dataclass(frozen=True)
class SimConfig:
    N: int
    delta: float
    sigma: float
    potentials: PotentialPair
    p: int | None = None
    dt_inner: float | None = None  # effective scheme only; default delta / 10
    allow_zero_sigma: bool = False  # deterministic runs, for testing

    def __post_init__(self):
        if int(self.N) != self.N or self.N < 2:
            raise PreconditionError(f"N must be an integer >= 2, got {self.N}")
        if not self.delta > 0:
            raise PreconditionError(f"delta must be positive, got {self.delta}")
        if not (self.sigma > 0 or (self.allow_zero_sigma and self.sigma == 0)):
            raise PreconditionError(f"sigma must be positive, got {self.sigma}")
        if self.p is not None and not (2 <= self.p <= self.N):
            raise PreconditionError(f"p must lie in [2, N], got {self.p}")
        if self.dt_inner is not None and not self.dt_inner > 0:
            raise PreconditionError(f"dt_inner must be positive, got {self.dt_inner}")

    @property
    def inner_step(self) -> float:
        return self.delta / 10.0 if self.dt_inner is None else self.dt_inner

    def require_batch(self, divisible: bool = True) -> int:
        if self.p is None:
            raise PreconditionError("this scheme needs a batch size p")
        if divisible and self.N % self.p:
            raise PreconditionError(f"N={self.N} is not a multiple of p={self.p}")
        return self.p


class ParticleEnsemble:
    """Particle positions with cached mean and (population) variance."""

    def __init__(self, positions):
        x = np.array(positions, dtype=float)
        if x.ndim != 1 or x.size < 1:
            raise PreconditionError("positions must be a non-empty 1-d array")
        x.setflags(write=False)
        self.positions = x
        self.mean = float(x.mean())
        self.variance = float(np.mean((x - self.mean) ** 2))

    @property
    def N(self) -> int:
        return self.positions.size

    def __repr__(self):
        return f"ParticleEnsemble(N={self.N}, mean={self.mean:.6g}, variance={self.variance:.6g})"


@dataclass(frozen=True)
class BatchPartition:
    permutation: np.ndarray
    p: int

    def __post_init__(self):
        n = self.permutation.size
        if n % self.p:
            raise PreconditionError(f"cannot split {n} indices into blocks of {self.p}")
        if not np.array_equal(np.sort(self.permutation), np.arange(n)):
            raise PreconditionError("partition must contain every index exactly once")

    @property
    def blocks(self) -> np.ndarray:
        return self.permutation.reshape(-1, self.p)


def sample_partition(N: int, p: int, stream: RngStream) -> BatchPartition:
    """Uniform partition into blocks of size ``p``: shuffle, then chunk."""
    if p < 1 or N % p:
        raise PreconditionError(f"p={p} does not divide N={N}")
    return BatchPartition(stream.permutation(N), p)


# ---------------------------------------------------------------------------
# Forces
# ---------------------------------------------------------------------------

def _use_fast(pot: PotentialPair, path: str) -> bool:
    if path not in ("auto", "fast", "naive"):
        raise PreconditionError(f"unknown force path {path!r}")
    if path == "fast" and not pot.is_quadratic_W:
        raise PreconditionError("the fast path needs a quadratic interaction")
    return pot.is_quadratic_W and path != "naive"


def full_force(x: np.ndarray, pot: PotentialPair, path: str = "auto") -> np.ndarray:
    """``(1/(N-1)) sum_{j != i} gradW(x_i - x_j)`` for every ``i``."""
    N = x.size
    if _use_fast(pot, path):
        others_mean = (x.sum() - x) / (N - 1)
        return pot.L_W * (x - others_mean)
    out = np.empty(N)
    g0 = pot.gradW(np.zeros(1))[0]
    for s in range(0, N, _ROW_CHUNK):
        rows = x[s:s + _ROW_CHUNK]
        out[s:s + _ROW_CHUNK] = pot.gradW(rows[:, None] - x[None, :]).sum(axis=1) - g0
    return out / (N - 1)


def batch_force(x: np.ndarray, partition: BatchPartition, pot: PotentialPair,
                path: str = "auto") -> np.ndarray:
    """Interaction force restricted to each particle's block."""
    p = partition.p
    blocks = partition.blocks
    xb = x[blocks]
    if _use_fast(pot, path):
        others_mean = (xb.sum(axis=1, keepdims=True) - xb) / (p - 1)
        fb = pot.L_W * (xb - others_mean)
    else:
        g0 = pot.gradW(np.zeros(1))[0]
        fb = (pot.gradW(xb[:, :, None] - xb[:, None, :]).sum(axis=2) - g0) / (p - 1)
    out = np.empty_like(x)
    out[blocks] = fb
    return out


def companion_force(x: np.ndarray, companions: np.ndarray, pot: PotentialPair,
                    path: str = "auto") -> np.ndarray:
    """Force from the ``companions[i]`` index rows (drawn with replacement)."""
    xc = x[companions]
    if _use_fast(pot, path):
        return pot.L_W * (x - xc.mean(axis=1))
    return pot.gradW(x[:, None] - xc).mean(axis=1)


def mean_field_force(x: np.ndarray, pot: PotentialPair, path: str = "auto") -> np.ndarray:
    """``gradW * rho_N (x_i)`` against the empirical law (self term included)."""
    if _use_fast(pot, path):
        return pot.L_W * (x - x.mean())
    N = x.size
    out = np.empty(N)
    for s in range(0, N, _ROW_CHUNK):
        rows = x[s:s + _ROW_CHUNK]
        out[s:s + _ROW_CHUNK] = pot.gradW(rows[:, None] - x[None, :]).mean(axis=1)
    return out


def batch_variance(x: np.ndarray, pot: PotentialPair, path: str = "auto") -> np.ndarray:
    """``Sigma(x_i, rho_N) = (gradW)^2 * rho_N - (gradW * rho_N)^2`` per particle."""
    if _use_fast(pot, path):
        return np.full(x.size, pot.L_W ** 2 * float(np.mean((x - x.mean()) ** 2)))
    N = x.size
    out = np.empty(N)
    for s in range(0, N, _ROW_CHUNK):
        d = x[s:s + _ROW_CHUNK, None] - x[None, :]
        out[s:s + _ROW_CHUNK] = pot.gradW_squared(d).mean(axis=1) - pot.gradW(d).mean(axis=1) ** 2
    return out


# ---------------------------------------------------------------------------
# Steps
# ---------------------------------------------------------------------------

def _finish(x_new, step, what):
    if not np.all(np.isfinite(x_new)):
        raise NumericalError(f"non-finite position after a {what} step; step size {step} is too large")
    return ParticleEnsemble(x_new)


def _noise(stream, n, noise):
    if noise is not None:
        noise = np.asarray(noise, dtype=float)
        if noise.shape != (n,):
            raise PreconditionError(f"noise must have shape ({n},)")
        return noise
    return stream.gaussian(n)


def step_full(ens: ParticleEnsemble, cfg: SimConfig, stream: RngStream,
              path: str = "auto", noise=None) -> ParticleEnsemble:
    x = ens.positions
    pot = cfg.potentials
    drift = -pot.gradU(x) - full_force(x, pot, path)
    g = _noise(stream, x.size, noise)
    return _finish(x + cfg.delta * drift + math.sqrt(2 * cfg.sigma * cfg.delta) * g,
                   cfg.delta, "full")


def step_rb(ens: ParticleEnsemble, cfg: SimConfig, stream: RngStream, path: str = "auto",
            partition: BatchPartition | None = None, noise=None) -> ParticleEnsemble:
    """One random-batch step: the partition is drawn first, then the noise."""
    p = cfg.require_batch()
    x = ens.positions
    pot = cfg.potentials
    part = sample_partition(x.size, p, stream) if partition is None else partition
    drift = -pot.gradU(x) - batch_force(x, part, pot, path)
    g = _noise(stream, x.size, noise)
    return _finish(x + cfg.delta * drift + math.sqrt(2 * cfg.sigma * cfg.delta) * g,
                   cfg.delta, "random-batch")


def step_mean_field_rb(ens: ParticleEnsemble, cfg: SimConfig, stream: RngStream,
                       path: str = "auto") -> ParticleEnsemble:
    """Companions are drawn uniformly with replacement from the whole
    ensemble, self included (an O(1/N) bias that is left uncorrected)."""
    p = cfg.require_batch(divisible=False)
    x = ens.positions
    pot = cfg.potentials
    comp = stream.uniform_index(x.size, (x.size, p - 1))
    drift = -pot.gradU(x) - companion_force(x, comp, pot, path)
    g = stream.gaussian(x.size)
    return _finish(x + cfg.delta * drift + math.sqrt(2 * cfg.sigma * cfg.delta) * g,
                   cfg.delta, "mean-field random-batch")


def effective_diffusion(x: np.ndarray, cfg: SimConfig, path: str = "auto") -> np.ndarray:
    """``sqrt(2 sigma + delta/(p-1) Sigma)`` per particle."""
    p = cfg.require_batch(divisible=False)
    sig = batch_variance(x, cfg.potentials, path)
    if np.min(sig) < -1e-12:
        raise NumericalError(f"negative batch variance {np.min(sig)!r}")
    return np.sqrt(2 * cfg.sigma + cfg.delta / (p - 1) * np.maximum(sig, 0.0))


def step_effective(ens: ParticleEnsemble, cfg: SimConfig, stream: RngStream,
                   path: str = "auto") -> ParticleEnsemble:
    """Euler-Maruyama step of size ``cfg.inner_step`` for the effective
    dynamics; ``cfg.delta`` enters only through the diffusion coefficient."""
    x = ens.positions
    pot = cfg.potentials
    dt = cfg.inner_step
    drift = -pot.gradU(x) - mean_field_force(x, pot, path)
    coef = effective_diffusion(x, cfg, path)
    g = stream.gaussian(x.size)
    return _finish(x + dt * drift + math.sqrt(dt) * coef * g, dt, "effective")


_STEPPERS = {
    "full": step_full,
    "rb": step_rb,
    "mean_field_rb": step_mean_field_rb,
    "effective": step_effective,
}


# ---------------------------------------------------------------------------
# Runs
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class InitSpec:
    """Initial law: ``point`` (all at ``loc``), ``gaussian`` (``N(loc,
    scale^2)``) or ``two_point`` (``+loc`` / ``-loc`` with probability 1/2)."""

    kind: str = "point"
    loc: float = 0.0
    scale: float = 1.0

    def __post_init__(self):
        if self.kind not in ("point", "gaussian", "two_point"):
            raise PreconditionError(f"unknown initial law {self.kind!r}")
        if self.kind == "gaussian" and not self.scale >= 0:
            raise PreconditionError("scale must be non-negative")

    def sample(self, N: int, stream: RngStream) -> ParticleEnsemble:
        if self.kind == "point":
            return ParticleEnsemble(np.full(N, float(self.loc)))
        if self.kind == "gaussian":
            return ParticleEnsemble(self.loc + self.scale * stream.gaussian(N))
        signs = np.where(stream.uniform(N) < 0.5, -1.0, 1.0)
        return ParticleEnsemble(self.loc * signs)

    @classmethod
    def parse(cls, text: str) -> "InitSpec":
        """``point:1.0``, ``gaussian:0,0.5`` or ``two_point:1``."""
        kind, _, args = text.partition(":")
        vals = [float(v) for v in args.split(",") if v.strip()]
        if kind == "gaussian":
            return cls(kind, *(vals or [0.0, 1.0]))
        return cls(kind, *(vals[:1] or [0.0]))


@dataclass
class Trajectory:
    scheme: str
    step: np.ndarray
    time: np.ndarray
    mean: np.ndarray
    variance: np.ndarray
    diffusion_coefficient: np.ndarray
    final: ParticleEnsemble | None = field(default=None, repr=False)

    def rows(self):
        return zip(self.step.tolist(), self.time.tolist(), self.mean.tolist(),
                   self.variance.tolist(), self.diffusion_coefficient.tolist())


def _diffusion_summary(ens, cfg, scheme):
    if scheme == "effective":
        return float(np.mean(effective_diffusion(ens.positions, cfg)))
    return math.sqrt(2 * cfg.sigma)


def run(scheme: str, cfg: SimConfig, steps: int, init: InitSpec, stream: RngStream,
        record_every: int = 1) -> Trajectory:
    """Run ``steps`` steps of ``scheme`` and record summaries every
    ``record_every`` steps (plus the initial state).

    The initial law uses sub-stream 0 and the dynamics sub-stream 1. For the
    effective scheme a step is one inner step of size ``cfg.inner_step``.
    """
    if scheme not in SCHEMES:
        raise PreconditionError(f"unknown scheme {scheme!r}; choose from {SCHEMES}")
    if steps < 0 or record_every < 1:
        raise PreconditionError("need steps >= 0 and record_every >= 1")
    if scheme == "rb":
        cfg.require_batch()
    elif scheme in ("mean_field_rb", "effective"):
        cfg.require_batch(divisible=False)
    stepper = _STEPPERS[scheme]
    dt = cfg.inner_step if scheme == "effective" else cfg.delta
    ens = init.sample(cfg.N, stream.spawn(0))
    dyn = stream.spawn(1)
    n_rec = steps // record_every + 1
    out = np.empty((n_rec, 4))
    out[0] = (0, ens.mean, ens.variance, _diffusion_summary(ens, cfg, scheme))
    r = 1
    for t in range(1, steps + 1):
        ens = stepper(ens, cfg, dyn)
        if t % record_every == 0:
            out[r] = (t, ens.mean, ens.variance, _diffusion_summary(ens, cfg, scheme))
            r += 1
    step = out[:, 0].astype(np.int64)
    return Trajectory(scheme, step, step * dt, out[:, 1], out[:, 2], out[:, 3], final=ens)


# ---------------------------------------------------------------------------
# Batch-force statistics at a frozen configuration
# ---------------------------------------------------------------------------

@dataclass
class BatchForceStats:
    """Per-particle moments of the random-batch force over ``resamples``
    independent partitions of a frozen ensemble."""

    p: int
    resamples: int
    full: np.ndarray
    mean: np.ndarray
    mean_se: np.ndarray
    variance: np.ndarray
    variance_se: np.ndarray
    # L_W^2 Var(ensemble) / (p-1)
    target_variance: float
    # exact conditional variance for companions drawn without replacement
    exact_variance: np.ndarray

    def mean_z(self):
        return (self.mean - self.full) / self.mean_se

    def variance_z(self, exact: bool = False):
        target = self.exact_variance if exact else self.target_variance
        return (self.variance - target) / self.variance_se


def batch_force_statistics(x, pot: PotentialPair, p: int, resamples: int,
                           stream: RngStream, path: str = "auto") -> BatchForceStats:
    """Resample the partition ``resamples`` times (resample ``r`` on
    sub-stream ``r``) and accumulate per-particle force moments."""
    x = np.asarray(x, dtype=float)
    N = x.size
    if N % p:
        raise PreconditionError(f"p={p} does not divide N={N}")
    if resamples < 2:
        raise PreconditionError("need at least 2 resamples")
    full = full_force(x, pot, path)
    sums = np.zeros((4, N))
    for r in range(resamples):
        d = batch_force(x, sample_partition(N, p, stream.spawn(r)), pot, path) - full
        d2 = d * d
        sums += (d, d2, d2 * d, d2 * d2)
    n = resamples
    m1, m2, m3, m4 = sums / n
    mean = full + m1
    var_pop = m2 - m1 ** 2
    variance = var_pop * n / (n - 1)
    central4 = m4 - 4 * m1 * m3 + 6 * m1 ** 2 * m2 - 3 * m1 ** 4
    mean_se = np.sqrt(variance / n)
    variance_se = np.sqrt(np.maximum(central4 - var_pop ** 2, 0.0) / n)

    L2 = pot.L_W ** 2 if pot.is_quadratic_W else float("nan")
    ens_var = float(np.mean((x - x.mean()) ** 2))
    others_mean = (x.sum() - x) / (N - 1)
    others_var = ((x ** 2).sum() - x ** 2) / (N - 1) - others_mean ** 2
    exact = L2 * others_var / (p - 1) * (N - p) / (N - 2) if N > 2 else np.zeros(N)
    return BatchForceStats(p, n, full, mean, mean_se, variance, variance_se,
                           L2 * ens_var / (p - 1), exact)
