"""Deterministic numerical kernels: quadrature, root finding, power
iteration and the seeded random source used by every stochastic routine.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable

import numpy as np
from scipy import sparse

from .errors import (
    ConvergenceError,
    NonFiniteError,
    PreconditionError,
    RootFindingError,
)

DEFAULT_ORDER = 32
DEFAULT_PANELS = 64
ROOT_TOL = 1e-10


# ---------------------------------------------------------------------------
# Quadrature
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Quadrature:
    """Composite Gauss-Legendre rule on ``[-half_width, half_width]``.

    ``order`` points on each of ``panels`` equal panels, so
    ``node_count = order * panels``.
    """

    half_width: float
    order: int = DEFAULT_ORDER
    panels: int = DEFAULT_PANELS

    def __post_init__(self):
        if not self.half_width > 0:
            raise PreconditionError(f"half_width must be positive, got {self.half_width}")
        if self.order < 1 or self.panels < 1 or self.node_count < 16:
            raise PreconditionError(
                f"need at least 16 nodes, got order={self.order} panels={self.panels}")

    @property
    def node_count(self) -> int:
        return self.order * self.panels

    @property
    def _rule(self):
        return _composite_rule(float(self.half_width), self.order, self.panels)

    @property
    def nodes(self) -> np.ndarray:
        return self._rule[0]

    @property
    def weights(self) -> np.ndarray:
        return self._rule[1]

    def refined(self) -> "Quadrature":
        """Same interval, twice the nodes."""
        return Quadrature(self.half_width, self.order, 2 * self.panels)


@lru_cache(maxsize=8)
def _legendre(order):
    return np.polynomial.legendre.leggauss(order)


@lru_cache(maxsize=256)
def _composite_rule(half_width, order, panels):
    x, w = _legendre(order)
    edges = np.linspace(-half_width, half_width, panels + 1)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[1:] + edges[:-1])
    nodes = (mid[:, None] + half[:, None] * x[None, :]).ravel()
    weights = (half[:, None] * w[None, :]).ravel()
    nodes.setflags(write=False)
    weights.setflags(write=False)
    return nodes, weights


def integrate(f: Callable[[np.ndarray], np.ndarray], q: Quadrature) -> float:
    """Integrate a vectorised ``f`` over ``[-R, R]`` with the rule ``q``."""
    values = np.broadcast_to(np.asarray(f(q.nodes), dtype=float), q.nodes.shape)
    bad = ~np.isfinite(values)
    if bad.any():
        x = q.nodes[np.argmax(bad)]
        raise NonFiniteError(f"integrand is not finite at node x={x!r}")
    return float(q.weights @ values)


# ---------------------------------------------------------------------------
# Root finding
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RootBracket:
    lo: float
    hi: float
    tol: float = ROOT_TOL

    def __post_init__(self):
        if not self.lo < self.hi:
            raise PreconditionError(f"bracket needs lo < hi, got [{self.lo}, {self.hi}]")
        if not self.tol > 0:
            raise PreconditionError(f"tolerance must be positive, got {self.tol}")


def find_root(f: Callable[[float], float], b: RootBracket, *, ftol: float = 0.0,
              accelerate: bool = False, max_iter: int = 500) -> float:
    """Bracketing root finder.

    Plain bisection by default. With ``accelerate=True`` a secant point is
    tried on even iterations (falling back to the midpoint when it lands
    outside the bracket), which keeps the guaranteed halving every other
    step. Stops when the bracket is narrower than ``b.tol`` or
    ``|f(x)| <= ftol``.
    """
    lo, hi = float(b.lo), float(b.hi)
    flo, fhi = f(lo), f(hi)
    if flo == 0:
        return lo
    if fhi == 0:
        return hi
    if not (np.isfinite(flo) and np.isfinite(fhi)):
        raise RootFindingError(f"non-finite value at bracket ends: f({lo})={flo}, f({hi})={fhi}",
                               bracket=(lo, hi))
    if np.sign(flo) == np.sign(fhi):
        raise RootFindingError(
            f"no sign change on [{lo}, {hi}]: f(lo)={flo:.6g}, f(hi)={fhi:.6g}", bracket=(lo, hi))

    for it in range(max_iter):
        if hi - lo < b.tol:
            return 0.5 * (lo + hi)
        x = 0.5 * (lo + hi)
        if accelerate and it % 2 == 0:
            s = hi - fhi * (hi - lo) / (fhi - flo)
            if lo < s < hi:
                x = s
        fx = f(x)
        if not np.isfinite(fx):
            raise RootFindingError(f"non-finite value f({x})={fx}", bracket=(lo, hi))
        if abs(fx) <= ftol:
            return x
        if np.sign(fx) == np.sign(flo):
            lo, flo = x, fx
        else:
            hi, fhi = x, fx
    raise RootFindingError(f"no convergence after {max_iter} iterations; last bracket [{lo}, {hi}]",
                           bracket=(lo, hi))


def golden_section_max(f: Callable[[float], float], lo: float, hi: float,
                       tol: float = 1e-10, max_iter: int = 300) -> float:
    """Maximiser of a unimodal function on ``[lo, hi]``."""
    invphi = (np.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(max_iter):
        if b - a < tol:
            break
        if fc > fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = f(d)
    return c if fc > fd else d


# ---------------------------------------------------------------------------
# Power iteration
# ---------------------------------------------------------------------------

def power_iterate(M, v0, eps: float, max_iter: int, *, scale: float | None = None):
    """Iterate ``v <- v M`` until ``||v_{k+1} - v_k||_1 < scale * eps``.

    ``scale`` defaults to ``n_states - 1`` (the spin count ``N`` for a
    magnetisation chain on ``N + 1`` states). Returns ``(v, iterations)``.
    """
    A = M.matrix if hasattr(M, "matrix") else M
    if sparse.issparse(A):
        A = sparse.csr_matrix(A)
        row_sums = np.asarray(A.sum(axis=1)).ravel()
    else:
        A = np.asarray(A, dtype=float)
        row_sums = A.sum(axis=1)
    n = A.shape[0]
    if A.shape != (n, n):
        raise PreconditionError(f"matrix must be square, got {A.shape}")
    dev = np.abs(row_sums - 1.0)
    if dev.max() > 1e-10:
        i = int(np.argmax(dev))
        raise PreconditionError(f"row {i} is not stochastic (sum = {row_sums[i]!r})")
    v = np.asarray(v0, dtype=float).copy()
    if v.shape != (n,) or (v < 0).any() or abs(v.sum() - 1.0) > 1e-12:
        raise PreconditionError("v0 must be a probability vector matching the matrix size")

    if not sparse.issparse(A) and np.count_nonzero(A) < 0.1 * n * n:
        A = sparse.csr_matrix(A)
    At = A.T.tocsr() if sparse.issparse(A) else A.T
    threshold = (max(n - 1, 1) if scale is None else scale) * eps

    for it in range(1, max_iter + 1):
        w = At @ v
        w /= w.sum()
        if np.abs(w - v).sum() < threshold:
            return w, it
        v = w
    raise ConvergenceError(f"power iteration did not converge in {max_iter} iterations",
                           last=v, iterations=max_iter)


# ---------------------------------------------------------------------------
# Random source
# ---------------------------------------------------------------------------

@dataclass
class RngStream:
    """Seeded, splittable random source backed by the counter-based Philox
    generator. ``spawn(i)`` gives the i-th independent sub-stream; the same
    ``(seed, path)`` always reproduces the same draws.
    """

    seed: int
    path: tuple = ()
    generator: np.random.Generator = field(init=False, repr=False)

    def __post_init__(self):
        if not 0 <= int(self.seed) < 2**64:
            raise PreconditionError(f"seed must be a 64-bit unsigned integer, got {self.seed}")
        ss = np.random.SeedSequence(entropy=int(self.seed), spawn_key=tuple(self.path))
        self.generator = np.random.Generator(np.random.Philox(ss))

    def spawn(self, index: int) -> "RngStream":
        return RngStream(self.seed, self.path + (int(index),))

    def gaussian(self, size=None):
        return self.generator.standard_normal(size)

    def uniform(self, size=None):
        return self.generator.random(size)

    def binomial(self, n, q, size=None):
        if np.any(np.asarray(q) < 0) or np.any(np.asarray(q) > 1):
            raise PreconditionError(f"binomial probability must lie in [0, 1], got {q}")
        if np.any(np.asarray(n) < 0):
            raise PreconditionError(f"binomial count must be non-negative, got {n}")
        return self.generator.binomial(n, q, size)

    def uniform_index(self, n: int, size=None):
        if n < 1:
            raise PreconditionError(f"cannot draw an index from an empty range (n={n})")
        return self.generator.integers(0, n, size)

    def permutation(self, n: int) -> np.ndarray:
        return self.generator.permutation(n)


def gaussian(stream: RngStream, size=None):
    return stream.gaussian(size)


def binomial(stream: RngStream, n: int, q: float, size=None):
    return stream.binomial(n, q, size)


def uniform_index(stream: RngStream, n: int, size=None):
    return stream.uniform_index(n, size)
