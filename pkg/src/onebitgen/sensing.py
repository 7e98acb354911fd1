"""Measurement simulation: random ensembles, one-bit quantization, noise.

Ensembles store ``A`` at its native scale (entries of variance ``1/m``).
Recovery routines that rely on the correlation identity
``E[(1/m) y^T A x] = sqrt(2/pi) x^T x*`` need rows with unit-variance
entries; :attr:`MeasurementEnsemble.normalized` supplies ``sqrt(m) * A``.
The rescaling does not change any measurement sign.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import InvalidArgumentError, ParseError, RngStream

__all__ = [
    "ENSEMBLE_KINDS",
    "MeasurementEnsemble",
    "NoiseConfig",
    "OneBitObservation",
    "make_ensemble",
    "one_bit_sign",
    "quantize",
    "perturb_matrix",
    "save_ensemble",
    "load_ensemble",
    "save_observation",
    "load_observation",
]

ENSEMBLE_KINDS = ("gaussian_iid", "unit_sphere_columns")


def one_bit_sign(p) -> np.ndarray:
    """+1 where ``p > 0``, -1 elsewhere (zero maps to -1)."""
    return np.where(np.asarray(p) > 0, 1.0, -1.0)


@dataclass(frozen=True)
class MeasurementEnsemble:
    kind: str
    A: np.ndarray
    seed: str = ""
    v_delta: float = 0.0

    def __post_init__(self):
        if self.kind not in ENSEMBLE_KINDS:
            raise InvalidArgumentError(f"unknown ensemble kind {self.kind!r}")
        A = np.array(self.A, dtype=np.float64)
        if A.ndim != 2 or not np.all(np.isfinite(A)):
            raise InvalidArgumentError("ensemble matrix must be a finite 2-d array")
        A.setflags(write=False)
        object.__setattr__(self, "A", A)

    @property
    def m(self) -> int:
        return self.A.shape[0]

    @property
    def n(self) -> int:
        return self.A.shape[1]

    @property
    def normalized(self) -> np.ndarray:
        """``sqrt(m) * A``: the same measurement operator with unit-variance entries."""
        return np.sqrt(self.m) * self.A


@dataclass(frozen=True)
class NoiseConfig:
    additive_variance: float = 0.0
    alpha: float = 1.0

    def __post_init__(self):
        if self.additive_variance < 0:
            raise InvalidArgumentError(f"additive variance must be >= 0, got {self.additive_variance}")
        if not 0.5 < self.alpha <= 1.0:
            raise InvalidArgumentError(f"flip keep probability must lie in (0.5, 1], got {self.alpha}")


@dataclass(frozen=True)
class OneBitObservation:
    y: np.ndarray
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    ensemble: MeasurementEnsemble | None = None
    seed: str = ""

    def __post_init__(self):
        y = np.array(self.y, dtype=np.float64)
        if y.ndim != 1 or not np.all(np.abs(y) == 1.0):
            raise InvalidArgumentError("one-bit observations must be a vector of +-1 entries")
        y.setflags(write=False)
        object.__setattr__(self, "y", y)

    @property
    def m(self) -> int:
        return self.y.shape[0]


def make_ensemble(kind: str, m: int, n: int, stream: RngStream) -> MeasurementEnsemble:
    if m < 1 or n < 1:
        raise InvalidArgumentError(f"ensemble dimensions must be positive, got m={m}, n={n}")
    if kind not in ENSEMBLE_KINDS:
        raise InvalidArgumentError(f"unknown ensemble kind {kind!r}")
    G = stream.generator.standard_normal((m, n))
    if kind == "gaussian_iid":
        A = G / np.sqrt(m)
    else:
        # normalized Gaussian columns are uniform on the sphere S^{m-1}
        A = G / np.linalg.norm(G, axis=0, keepdims=True)
    return MeasurementEnsemble(kind, A, seed=stream.label())


def quantize(ens: MeasurementEnsemble, x, noise: NoiseConfig, stream: RngStream) -> OneBitObservation:
    """``y = eta * sign(A x + n)`` with ``n ~ N(0, v_n)`` and ``P(eta_i = 1) = alpha``.

    The standard-normal and uniform draws are taken unconditionally, so
    observations made from one stream at different noise levels share their
    random numbers (flips are nested as ``alpha`` decreases).
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (ens.n,):
        raise InvalidArgumentError(f"signal of shape {x.shape} does not match ensemble with n={ens.n}")
    gen = stream.generator
    additive = gen.standard_normal(ens.m)
    flips = gen.random(ens.m)
    p = ens.A @ x + np.sqrt(noise.additive_variance) * additive
    eta = np.where(flips < noise.alpha, 1.0, -1.0)
    y = eta * one_bit_sign(p)
    return OneBitObservation(y, noise, ens, seed=stream.label())


def perturb_matrix(ens: MeasurementEnsemble, v_delta: float, stream: RngStream) -> MeasurementEnsemble:
    """``A + Delta`` with ``Delta`` entries i.i.d. ``N(0, v_delta)``."""
    if v_delta < 0:
        raise InvalidArgumentError(f"perturbation variance must be >= 0, got {v_delta}")
    delta = stream.generator.standard_normal(ens.A.shape)
    return MeasurementEnsemble(
        ens.kind, ens.A + np.sqrt(v_delta) * delta, seed=f"{ens.seed}+{stream.label()}", v_delta=ens.v_delta + v_delta
    )


def _nums(values):
    return [float(format(float(v), ".17g")) for v in np.ravel(values)]


def save_ensemble(ens: MeasurementEnsemble, path) -> None:
    doc = {
        "format_version": 1,
        "kind": ens.kind,
        "m": ens.m,
        "n": ens.n,
        "v_delta": ens.v_delta,
        "seed": ens.seed,
        "entries": _nums(ens.A),
    }
    Path(path).write_text(json.dumps(doc))


def _load_json(path):
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from None


def _ensemble_from_doc(doc, where) -> MeasurementEnsemble:
    try:
        kind, m, n, entries = doc["kind"], int(doc["m"]), int(doc["n"]), doc["entries"]
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"{where}: missing or malformed field {exc}") from None
    if kind not in ENSEMBLE_KINDS:
        raise ParseError(f"{where}.kind: unknown ensemble kind {kind!r}")
    if len(entries) != m * n:
        raise ParseError(f"{where}.entries: expected {m * n} numbers, got {len(entries)}")
    A = np.array(entries, dtype=np.float64).reshape(m, n)
    return MeasurementEnsemble(kind, A, seed=str(doc.get("seed", "")), v_delta=float(doc.get("v_delta", 0.0)))


def load_ensemble(path) -> MeasurementEnsemble:
    return _ensemble_from_doc(_load_json(path), "ensemble")


def save_observation(obs: OneBitObservation, path) -> None:
    doc = {
        "format_version": 1,
        "y": [int(v) for v in obs.y],
        "v_n": obs.noise.additive_variance,
        "alpha": obs.noise.alpha,
        "seed": obs.seed,
    }
    if obs.ensemble is not None:
        doc["ensemble"] = {
            "kind": obs.ensemble.kind,
            "m": obs.ensemble.m,
            "n": obs.ensemble.n,
            "v_delta": obs.ensemble.v_delta,
            "seed": obs.ensemble.seed,
            "entries": _nums(obs.ensemble.A),
        }
    Path(path).write_text(json.dumps(doc))


def load_observation(path) -> OneBitObservation:
    doc = _load_json(path)
    try:
        y = doc["y"]
        noise = NoiseConfig(float(doc["v_n"]), float(doc["alpha"]))
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"observation: missing or malformed field {exc}") from None
    if any(v not in (-1, 1) for v in y):
        raise ParseError("observation.y: entries must be -1 or +1")
    ens = _ensemble_from_doc(doc["ensemble"], "observation.ensemble") if "ensemble" in doc else None
    return OneBitObservation(np.array(y, dtype=np.float64), noise, ens, seed=str(doc.get("seed", "")))
