"""Seeded random streams, Gaussian sampling and dense products.

Every stochastic routine in the package takes an :class:`RngStream`.  A stream
is identified by a master seed and a derivation path; child streams are built
with :func:`derive_stream` so that parallel work never shares a generator.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "InvalidArgumentError",
    "NumericError",
    "ParseError",
    "DegenerateInputError",
    "TrainingError",
    "RngStream",
    "derive_stream",
    "sample_gaussian",
    "matvec",
    "matvec_t",
    "as_matrix",
]

_MASK64 = (1 << 64) - 1


class InvalidArgumentError(ValueError):
    pass


class NumericError(ArithmeticError):
    pass


class ParseError(ValueError):
    pass


class DegenerateInputError(ValueError):
    pass


class TrainingError(RuntimeError):
    def __init__(self, message, epoch=None):
        super().__init__(message)
        self.epoch = epoch


class RngStream:
    """A single-consumer random stream keyed by ``(master_seed, path)``.

    ``stream_id`` is the last element of the derivation path (0 for a root
    stream).  Two streams with equal seed and path produce identical samples.
    """

    def __init__(self, master_seed: int, path: tuple[int, ...] = ()):
        self.master_seed = int(master_seed) & _MASK64
        self.path = tuple(int(p) & _MASK64 for p in path)
        seq = np.random.SeedSequence(entropy=self.master_seed, spawn_key=self.path)
        self._gen = np.random.Generator(np.random.PCG64(seq))

    @property
    def stream_id(self) -> int:
        return self.path[-1] if self.path else 0

    @property
    def generator(self) -> np.random.Generator:
        return self._gen

    def label(self) -> str:
        """Provenance string, e.g. ``'20240601/3.0.1'``."""
        return f"{self.master_seed}/" + ".".join(str(p) for p in self.path)

    def __repr__(self):
        return f"RngStream(master_seed={self.master_seed}, path={self.path})"


def derive_stream(master: RngStream, index: int) -> RngStream:
    """Child stream of ``master``; independent of how much ``master`` was consumed."""
    if index < 0:
        raise InvalidArgumentError(f"stream index must be non-negative, got {index}")
    return RngStream(master.master_seed, master.path + (index,))


def sample_gaussian(stream: RngStream, count: int, mean: float = 0.0, variance: float = 1.0) -> np.ndarray:
    if variance < 0:
        raise InvalidArgumentError(f"variance must be >= 0, got {variance}")
    draws = stream.generator.standard_normal(count)
    return mean + np.sqrt(variance) * draws


def as_matrix(A) -> np.ndarray:
    A = np.asarray(A, dtype=np.float64)
    if A.ndim != 2:
        raise InvalidArgumentError(f"expected a 2-d matrix, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise InvalidArgumentError("matrix has non-finite entries")
    return A


def matvec(A, x) -> np.ndarray:
    A = np.asarray(A, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    if A.ndim != 2 or x.shape != (A.shape[1],):
        raise InvalidArgumentError(f"cannot multiply {A.shape} matrix by vector of shape {x.shape}")
    return A @ x


def matvec_t(A, v) -> np.ndarray:
    A = np.asarray(A, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if A.ndim != 2 or v.shape != (A.shape[0],):
        raise InvalidArgumentError(f"cannot multiply transpose of {A.shape} matrix by vector of shape {v.shape}")
    return A.T @ v
