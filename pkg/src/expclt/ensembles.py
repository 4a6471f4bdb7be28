"""Bounded random-operator distributions with exact moments.

An :class:`Ensemble` describes a distribution over real ``(d, d)`` matrices
with a hard spectral-norm bound ``rho`` that holds for every possible draw.
Four families are supported:

* ``two_point``       -- one of two fixed matrices, ``A0`` with probability p;
* ``finite_support``  -- finitely many fixed matrices with given weights;
* ``diagonal_uniform``-- diagonal matrices with i.i.d. Uniform[lo, hi] entries;
* ``deterministic``   -- a single fixed matrix (zero variance).

The first two and the last are stored uniformly as (support, probabilities);
all first and second moments are exact finite sums or closed forms, never
estimates.  Sampling is driven by :class:`RngStream`, a counter-based keyed
stream: the draw sequence is a pure function of ``(master_seed,
stream_index, draw counter)``, so replicates can be farmed out to any number
of workers without changing a single bit of output.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .linalg import as_matrix, op_norm

__all__ = [
    "RngStream",
    "Ensemble",
    "two_point",
    "finite_support",
    "diagonal_uniform",
    "deterministic",
]

_FINITE_FAMILIES = ("two_point", "finite_support", "deterministic")


def _hash64(*parts) -> int:
    """Stable 64-bit hash of the stringified parts (platform independent)."""
    data = "|".join(str(p) for p in parts).encode("utf-8")
    return int.from_bytes(hashlib.sha256(data).digest()[:8], "big")


class RngStream:
    """One reproducible stream of uniforms, keyed by (master_seed, stream_index).

    Backed by the counter-based Philox generator, keyed with the two 64-bit
    integers, so distinct keys give statistically independent streams and a
    reconstructed stream replays bit-identically.  Consecutive calls advance
    the internal draw counter.
    """

    __slots__ = ("master_seed", "stream_index", "_gen")

    def __init__(self, master_seed: int, stream_index: int = 0):
        self.master_seed = int(master_seed) % (1 << 64)
        self.stream_index = int(stream_index) % (1 << 64)
        key = np.array([self.master_seed, self.stream_index], dtype=np.uint64)
        self._gen = np.random.Generator(np.random.Philox(key=key))

    def uniform(self, size=None):
        """Next uniform draw(s) in [0, 1)."""
        return self._gen.random(size)

    def child(self, *parts) -> "RngStream":
        """Derived independent stream; same parts always give the same child."""
        return RngStream(self.master_seed, _hash64(self.stream_index, *parts))

    def __repr__(self) -> str:
        return f"RngStream(master_seed={self.master_seed}, stream_index={self.stream_index})"


@dataclass(frozen=True)
class Ensemble:
    """A norm-bounded distribution over real d x d matrices.

    Use the module factories (:func:`two_point`, :func:`finite_support`,
    :func:`diagonal_uniform`, :func:`deterministic`) rather than the raw
    constructor; they validate parameters and compute ``rho``.
    """

    dim: int
    family: str
    support: tuple | None  # matrices, finite-support families only
    probabilities: np.ndarray | None
    low: float | None  # diagonal_uniform bounds
    high: float | None
    rho: float  # certified bound on op_norm of every draw

    @property
    def is_finite_support(self) -> bool:
        return self.family in _FINITE_FAMILIES

    @cached_property
    def is_diagonal(self) -> bool:
        """True when every possible draw is a diagonal matrix."""
        if self.family == "diagonal_uniform":
            return True
        return all(np.count_nonzero(a - np.diag(np.diagonal(a))) == 0 for a in self.support)

    @cached_property
    def _cum_probs(self) -> np.ndarray:
        c = np.cumsum(self.probabilities)
        c[-1] = 1.0  # guard the last bin against rounding
        c.flags.writeable = False
        return c

    @cached_property
    def _deltas(self) -> tuple:
        """Centered support matrices ``A_i - E[A]``, read-only."""
        mu = self.mean()
        out = []
        for a in self.support:
            d = a - mu
            d.flags.writeable = False
            out.append(d)
        return tuple(out)

    # --- sampling ---------------------------------------------------------

    def sample(self, stream: RngStream) -> np.ndarray:
        """One draw; consumes one uniform (or d uniforms for diagonal_uniform)."""
        if self.is_finite_support:
            idx = int(np.searchsorted(self._cum_probs, stream.uniform(), side="right"))
            return self.support[min(idx, len(self.support) - 1)]
        vals = self.low + (self.high - self.low) * stream.uniform(self.dim)
        return np.diag(vals)

    def sample_indices(self, stream: RngStream, count: int) -> np.ndarray:
        """``count`` support indices in draw order (finite-support families).

        Equivalent to ``count`` successive :meth:`sample` calls: one uniform
        per draw, mapped through the same cumulative-probability bins.
        """
        if not self.is_finite_support:
            raise ValueError(f"{self.family} ensemble has no finite support")
        u = stream.uniform(count)
        idx = np.searchsorted(self._cum_probs, u, side="right")
        return np.minimum(idx, len(self.support) - 1).astype(np.uint16)

    def sample_diagonal_values(self, stream: RngStream, count: int) -> np.ndarray:
        """``(count, d)`` diagonal entries in draw order (diagonal_uniform)."""
        if self.family != "diagonal_uniform":
            raise ValueError(f"{self.family} ensemble is not diagonal_uniform")
        u = stream.uniform((count, self.dim))
        return self.low + (self.high - self.low) * u

    # --- exact moments ----------------------------------------------------

    def mean(self) -> np.ndarray:
        """Exact expected matrix."""
        if self.is_finite_support:
            acc = np.zeros((self.dim, self.dim))
            for p, a in zip(self.probabilities, self.support):
                acc += p * a
            return acc
        return np.eye(self.dim) * ((self.low + self.high) / 2.0)

    def central_second_moment(self) -> np.ndarray:
        """Exact ``E[(A - EA) (x) (A - EA)]`` as a d^2 x d^2 matrix."""
        d = self.dim
        if self.is_finite_support:
            acc = np.zeros((d * d, d * d))
            for p, delta in zip(self.probabilities, self._deltas):
                acc += p * np.kron(delta, delta)
            return acc
        var = (self.high - self.low) ** 2 / 12.0
        acc = np.zeros((d * d, d * d))
        for i in range(d):
            acc[i * d + i, i * d + i] = var
        return acc

    def centered_projection(self, w: np.ndarray, u: np.ndarray) -> float:
        """``E <w, (A - EA) u>^2`` without forming the d^2 x d^2 moment.

        A finite sum of squares (or the uniform variance times a sum of
        squares), so the result is nonnegative by construction.
        """
        if self.is_finite_support:
            total = 0.0
            for p, delta in zip(self.probabilities, self._deltas):
                total += p * float(w @ (delta @ u)) ** 2
            return total
        var = (self.high - self.low) ** 2 / 12.0
        return var * float(np.sum((w * u) ** 2))

    def mean_exp_scaled(self, n: int) -> np.ndarray:
        """Exact ``E exp(A / n)``.

        Finite support: probability-weighted sum of the support exponentials.
        diagonal_uniform: closed form, entrywise
        ``(exp(hi/n) - exp(lo/n)) / ((hi - lo)/n)`` on the diagonal.
        """
        from .linalg import mat_exp

        if n < 1:
            raise ValueError("n must be >= 1")
        if self.is_finite_support:
            acc = np.zeros((self.dim, self.dim))
            for p, a in zip(self.probabilities, self.support):
                acc += p * mat_exp(a / n)
            return acc
        lo, hi = self.low / n, self.high / n
        if hi == lo:
            val = float(np.exp(lo))
        else:
            val = float(np.exp(lo) * np.expm1(hi - lo) / (hi - lo))
        return np.eye(self.dim) * val

    def estimate_mean_mc(self, reps: int, stream: RngStream) -> np.ndarray:
        """Sample average of ``reps`` draws (consistency oracle for mean())."""
        if reps < 1:
            raise ValueError("reps must be >= 1")
        if self.is_finite_support:
            idx = self.sample_indices(stream, reps)
            counts = np.bincount(idx, minlength=len(self.support))
            acc = np.zeros((self.dim, self.dim))
            for c, a in zip(counts, self.support):
                acc += (c / reps) * a
            return acc
        total = np.zeros(self.dim)
        done = 0
        while done < reps:
            chunk = min(reps - done, 262144)
            total += self.sample_diagonal_values(stream, chunk).sum(axis=0)
            done += chunk
        return np.diag(total / reps)

    # --- derived ensembles --------------------------------------------------

    def shifted(self, c: float) -> "Ensemble":
        """The ensemble of ``A + c I`` (same centered part, shifted mean)."""
        if self.is_finite_support:
            eye = np.eye(self.dim)
            mats = [a + c * eye for a in self.support]
            return finite_support(mats, list(self.probabilities), family=self.family)
        return diagonal_uniform(self.dim, self.low + c, self.high + c)


def _freeze(mat: np.ndarray) -> np.ndarray:
    mat = mat.copy()
    mat.flags.writeable = False
    return mat


def finite_support(matrices, probabilities, *, family: str = "finite_support") -> Ensemble:
    """Ensemble supported on finitely many matrices with the given weights."""
    if len(matrices) < 1:
        raise ValueError("need at least one support matrix")
    if len(matrices) != len(probabilities):
        raise ValueError("one probability per support matrix required")
    mats = [as_matrix(m, f"support matrix {i}") for i, m in enumerate(matrices)]
    dim = mats[0].shape[0]
    for i, m in enumerate(mats):
        if m.shape[0] != dim:
            raise ValueError(f"support matrix {i} has dimension {m.shape[0]}, expected {dim}")
    probs = np.asarray(probabilities, dtype=float)
    if np.any(probs < 0.0) or abs(float(probs.sum()) - 1.0) > 1e-12:
        raise ValueError("probabilities must be nonnegative and sum to 1")
    probs = _freeze(probs)
    rho = max(op_norm(m) for m in mats)
    return Ensemble(
        dim=dim,
        family=family,
        support=tuple(_freeze(m) for m in mats),
        probabilities=probs,
        low=None,
        high=None,
        rho=rho,
    )


def two_point(a0, a1, p: float) -> Ensemble:
    """Draw ``a0`` with probability ``p``, else ``a1``."""
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"p must lie in [0, 1], got {p}")
    return finite_support([a0, a1], [p, 1.0 - p], family="two_point")


def deterministic(matrix) -> Ensemble:
    """Degenerate single-matrix ensemble (the zero-variance oracle)."""
    return finite_support([matrix], [1.0], family="deterministic")


def diagonal_uniform(dim: int, low: float, high: float) -> Ensemble:
    """Diagonal matrices with i.i.d. Uniform[low, high] diagonal entries."""
    if dim < 1:
        raise ValueError("dim must be >= 1")
    if not np.isfinite(low) or not np.isfinite(high) or high < low:
        raise ValueError(f"need finite low <= high, got [{low}, {high}]")
    return Ensemble(
        dim=int(dim),
        family="diagonal_uniform",
        support=None,
        probabilities=None,
        low=float(low),
        high=float(high),
        rho=max(abs(low), abs(high)),
    )
