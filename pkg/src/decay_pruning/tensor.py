"""Dense float64 vector helpers and a counter-based random stream.

Everything downstream (network weights, channel groups, decay targets)
works on flat numpy float64 arrays; this module owns the norm/scaling
primitives and the seeded RNG so all randomness is reproducible and
splittable by stream id.
"""

from __future__ import annotations

import numpy as np

__all__ = ["ZeroVectorScale", "as_vec", "l2_norm", "scale_to_norm", "Rng", "rng_normal"]


class ZeroVectorScale(ValueError):
    """Raised when a zero vector is asked to take on a positive norm."""


def as_vec(values) -> np.ndarray:
    """Coerce to a 1-D float64 array, rejecting NaN/Inf entries."""
    v = np.asarray(values, dtype=np.float64).ravel()
    if v.size and not np.all(np.isfinite(v)):
        raise ValueError("vector entries must be finite")
    return v


def l2_norm(v) -> float:
    """Euclidean norm of ``v``; 0.0 for the empty vector."""
    v = np.asarray(v, dtype=np.float64)
    return float(np.linalg.norm(v.ravel()))


def scale_to_norm(v, target: float) -> np.ndarray:
    """Rescale ``v`` to have L2 norm ``target`` without changing direction.

    A target of 0 returns exact zeros.  Scaling a zero vector to a positive
    norm is impossible (no direction to preserve) and raises
    ``ZeroVectorScale``; callers treat that group as already decayed.
    """
    v = np.asarray(v, dtype=np.float64)
    if target < 0:
        raise ValueError("target norm must be nonnegative")
    if target == 0.0:
        return np.zeros_like(v)
    n = l2_norm(v)
    if n == 0.0:
        raise ZeroVectorScale("cannot scale a zero vector to a positive norm")
    return v * (target / n)


class Rng:
    """Deterministic random stream keyed by (seed, stream).

    Backed by the Philox counter-based bit generator, so distinct stream
    ids never interleave draws even when runs execute concurrently.
    Identical (seed, stream) and call order always reproduce the same
    values.
    """

    def __init__(self, seed: int, stream: int = 0):
        if not 0 <= int(seed) < 2**64:
            raise ValueError("seed must fit in an unsigned 64-bit integer")
        if not 0 <= int(stream) < 2**64:
            raise ValueError("stream must fit in an unsigned 64-bit integer")
        self.seed = int(seed)
        self.stream = int(stream)
        key = np.array([self.seed, self.stream], dtype=np.uint64)
        self._gen = np.random.Generator(np.random.Philox(key=key))

    def split(self, stream: int) -> "Rng":
        """Fresh stream with the same seed; independent of this one."""
        return Rng(self.seed, stream)

    def normal(self, n: int, mean: float = 0.0, std: float = 1.0) -> np.ndarray:
        if std < 0:
            raise ValueError("std must be nonnegative")
        return self._gen.normal(loc=mean, scale=std, size=int(n)).astype(np.float64)

    def uniform(self, n: int, low: float = 0.0, high: float = 1.0) -> np.ndarray:
        return self._gen.uniform(low, high, size=int(n)).astype(np.float64)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(int(n))

    def integers(self, low: int, high: int, n: int) -> np.ndarray:
        return self._gen.integers(low, high, size=int(n))


def rng_normal(rng: Rng, n: int, mean: float, std: float) -> np.ndarray:
    """``n`` Gaussian draws from ``rng``'s stream (std may be 0)."""
    return rng.normal(n, mean, std)
