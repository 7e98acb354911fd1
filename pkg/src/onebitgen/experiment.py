"""Declarative recovery sweeps and Monte-Carlo theory checks.

A sweep walks the grid ``m x v_n x alpha x v_delta x trial`` and runs every
selected algorithm on the same problem instance.  Random streams are keyed so
that instances share their random numbers across the noise grid (common
random numbers): the signal depends on the trial only, and the matrix,
measurement noise, perturbation and algorithm seeds depend on ``(m, trial)``.
Rows come back in grid order regardless of thread scheduling.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .analysis import (
    SQRT_2_OVER_PI,
    covering_number_bound,
    f_statistic,
    hamming_dist,
    mean_width_mc,
    measurement_bound,
    mse,
    nmse,
    sign_correlation_constant,
)
from .core import InvalidArgumentError, RngStream, derive_stream
from .data import SparseSpec, load_signals, read_idx, sample_sparse, sample_sparse_batch
from .model import MlpGenerator, forward, forward_batch, lipschitz_bound, load_model
from .train import TrainConfig, VaeArch, VaeModel, train_vae
from .recon import GenOpts, biht, gen_pgd, reconstruct_gen, reconstruct_gen_noise_aware, yp_convex
from .sensing import ENSEMBLE_KINDS, NoiseConfig, make_ensemble, one_bit_sign, perturb_matrix, quantize

__all__ = [
    "ALGORITHMS",
    "ConfigError",
    "ExperimentConfig",
    "RESULT_COLUMNS",
    "SignalSource",
    "TrainJob",
    "lipschitz_sampling_ratio",
    "reference_train_job",
    "resolve_input_paths",
    "results_to_text",
    "run_sweep",
    "run_theory_check",
    "summarize",
    "write_results",
    "write_theory_check",
]

ALGORITHMS = ("gen", "gen_noise_aware", "biht", "yp", "gen_pgd")
GEN_ALGORITHMS = ("gen", "gen_noise_aware", "gen_pgd")
RESULTS_FORMAT = 1
RESULT_COLUMNS = [
    "algorithm",
    "m",
    "v_n",
    "alpha",
    "v_delta",
    "trial",
    "mse",
    "nmse",
    "hamming",
    "best_loss",
    "seconds",
    "status",
    "master_seed",
    "stream",
    "config_hash",
]


def resolve_input_paths(doc: dict, base) -> dict:
    """Rewrite relative input paths (``model``, ``signal.path``, ``data.path``) against ``base``."""
    doc = dict(doc)

    def fix(p):
        return p if p is None or Path(p).is_absolute() else str(Path(base) / p)

    if isinstance(doc.get("model"), str):
        doc["model"] = fix(doc["model"])
    for key in ("signal", "data"):
        if isinstance(doc.get(key), dict) and isinstance(doc[key].get("path"), str):
            doc[key] = {**doc[key], "path": fix(doc[key]["path"])}
    return doc


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class SignalSource:
    kind: str = "synthetic"  # synthetic | in_range | idx
    n: int = 64
    k: int = 4
    value_dist: str = "uniform_half_one"
    normalize: bool = False
    path: str | None = None
    signal_norm: float | None = 1.0


@dataclass(frozen=True)
class ExperimentConfig:
    signal: SignalSource = field(default_factory=SignalSource)
    ensemble: str = "unit_sphere_columns"
    m_grid: tuple[int, ...] = (100,)
    v_n_grid: tuple[float, ...] = (0.0,)
    alpha_grid: tuple[float, ...] = (1.0,)
    v_delta_grid: tuple[float, ...] = (0.0,)
    algorithms: tuple[str, ...] = ("gen",)
    trials: int = 1
    master_seed: int = 20240601
    model: str | None = None
    output: str | None = None
    threads: int = 1
    gen: dict = field(default_factory=lambda: {"restarts": 20, "steps_per_restart": 100, "step_size": 0.5})
    biht: dict = field(default_factory=lambda: {"iters": 100, "tau": 1.0})
    yp: dict = field(default_factory=dict)
    gen_pgd: dict = field(default_factory=lambda: {"outer_iters": 20, "tau": 1.0, "restarts": 3, "inner_steps": 20})

    def __post_init__(self):
        for name in ("m_grid", "v_n_grid", "alpha_grid", "v_delta_grid", "algorithms"):
            value = tuple(getattr(self, name))
            if not value:
                raise ConfigError(f"{name} must be non-empty")
            object.__setattr__(self, name, value)
        if self.trials < 1:
            raise ConfigError("trials must be >= 1")
        unknown = [a for a in self.algorithms if a not in ALGORITHMS]
        if unknown:
            raise ConfigError(f"unknown algorithm(s): {', '.join(unknown)} (choose from {', '.join(ALGORITHMS)})")
        if self.ensemble not in ENSEMBLE_KINDS:
            raise ConfigError(f"unknown ensemble kind {self.ensemble!r}")
        if any(m < 1 for m in self.m_grid):
            raise ConfigError("every m must be >= 1")
        if any(not 0.5 < a <= 1 for a in self.alpha_grid):
            raise ConfigError("every alpha must lie in (0.5, 1]")
        if any(v < 0 for v in self.v_n_grid + self.v_delta_grid):
            raise ConfigError("noise variances must be >= 0")
        if self.signal.kind not in ("synthetic", "in_range", "idx"):
            raise ConfigError(f"unknown signal source {self.signal.kind!r}")
        try:
            _gen_opts(self)
        except (TypeError, InvalidArgumentError) as exc:
            raise ConfigError(f"gen: {exc}") from None
        unknown = set(self.gen_pgd) - {"outer_iters", "tau", "restarts", "inner_steps", "inner_step_size"}
        unknown |= set(self.biht) - {"K", "iters", "tau"}
        unknown |= set(self.yp) - {"K", "l1_budget"}
        if unknown:
            raise ConfigError(f"unknown algorithm option(s): {', '.join(sorted(unknown))}")

    @classmethod
    def from_dict(cls, doc: dict) -> ExperimentConfig:
        doc = dict(doc)
        known = {f for f in cls.__dataclass_fields__}
        extra = set(doc) - known
        if extra:
            raise ConfigError(f"unknown config field(s): {', '.join(sorted(extra))}")
        try:
            if "signal" in doc:
                doc["signal"] = SignalSource(**doc["signal"])
            return cls(**doc)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    @classmethod
    def from_file(cls, path) -> ExperimentConfig:
        return cls.from_dict(resolve_input_paths(_read_config(path), Path(path).parent))

    def to_dict(self) -> dict:
        return asdict(self)

    def config_hash(self) -> str:
        doc = self.to_dict()
        for volatile in ("output", "threads"):
            doc.pop(volatile, None)
        canon = json.dumps(doc, sort_keys=True, default=list)
        return hashlib.sha256(canon.encode()).hexdigest()[:12]

    @property
    def needs_model(self) -> bool:
        return self.signal.kind == "in_range" or any(a in GEN_ALGORITHMS for a in self.algorithms)


@dataclass(frozen=True)
class TrainJob:
    """Everything needed to reproduce a decoder: data source, architecture, optimizer.

    ``data`` is ``{"kind": "synthetic", n, k, count, value_dist, normalize}``,
    ``{"kind": "idx", "path": ...}`` or ``{"kind": "file", "path": ...}``
    (a signal file written by ``gen-data``).  Synthetic data is drawn from
    stream 0 under ``master_seed``; ``train.seed`` defaults to ``master_seed``.
    """

    data: dict = field(default_factory=lambda: {"kind": "synthetic", "n": 64, "k": 4, "count": 10000})
    latent: int = 8
    hidden: tuple[int, ...] = (32, 32)
    train: dict = field(default_factory=dict)
    master_seed: int = 20240601
    model_out: str | None = None
    curve_out: str | None = None
    vae_out: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(self.hidden))
        if self.data.get("kind") not in ("synthetic", "idx", "file"):
            raise ConfigError(f"unknown data kind {self.data.get('kind')!r}")
        if self.latent < 1 or any(h < 1 for h in self.hidden):
            raise ConfigError("latent and hidden sizes must be >= 1")
        try:
            self.train_config()
        except (TypeError, InvalidArgumentError) as exc:
            raise ConfigError(f"train: {exc}") from None

    @classmethod
    def from_dict(cls, doc: dict) -> TrainJob:
        extra = set(doc) - set(cls.__dataclass_fields__)
        if extra:
            raise ConfigError(f"unknown config field(s): {', '.join(sorted(extra))}")
        try:
            return cls(**doc)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    @classmethod
    def from_file(cls, path) -> TrainJob:
        return cls.from_dict(resolve_input_paths(_read_config(path), Path(path).parent))

    def train_config(self) -> TrainConfig:
        opts = dict(self.train)
        opts.setdefault("seed", self.master_seed)
        if "betas" in opts:
            opts["betas"] = tuple(opts["betas"])
        return TrainConfig(**opts)

    def load_data(self) -> np.ndarray:
        d = self.data
        if d["kind"] == "synthetic":
            extra = set(d) - {"kind", "n", "k", "count", "value_dist", "normalize"}
            if extra:
                raise ConfigError(f"data: unknown field(s) {', '.join(sorted(extra))}")
            try:
                spec = SparseSpec(d.get("n", 64), d.get("k", 4), d.get("value_dist", "uniform_half_one"), d.get("normalize", False))
            except InvalidArgumentError as exc:
                raise ConfigError(f"data: {exc}") from None
            count = int(d.get("count", 10000))
            if count < 1:
                raise ConfigError("data.count must be >= 1")
            return sample_sparse_batch(spec, count, derive_stream(RngStream(self.master_seed), 0))
        path = d.get("path")
        if not path or not Path(path).exists():
            raise ConfigError(f"dataset file not found: {path}")
        return read_idx(path).images if d["kind"] == "idx" else load_signals(path)

    def run(self, log=None) -> VaeModel:
        X = self.load_data()
        return train_vae(X, VaeArch.symmetric(X.shape[1], self.latent, self.hidden), self.train_config(), log=log)


def reference_train_job() -> TrainJob:
    """Desk-scale decoder: 10^4 sparse signals (n=64, k=4), s=8, relu 32-32, 50 epochs, v=0.005."""
    return TrainJob(train={"recon_variance": 0.005})


def _read_config(path) -> dict:
    try:
        doc = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return doc


# stream roots under the master seed
_SIGNAL, _MATRIX, _MEASURE, _PERTURB, _ALGO = range(5)


def _keyed(root, branch, *keys):
    s = derive_stream(root, branch)
    for k in keys:
        s = derive_stream(s, k)
    return s


def _draw_signal(cfg: ExperimentConfig, G, dataset, stream: RngStream) -> np.ndarray:
    src = cfg.signal
    if src.kind == "synthetic":
        x = sample_sparse(SparseSpec(src.n, src.k, src.value_dist, src.normalize), stream)
    elif src.kind == "in_range":
        x = forward(G, stream.generator.standard_normal(G.s))
    else:
        x = dataset.images[int(stream.generator.integers(dataset.count))].copy()
    if src.signal_norm is not None:
        norm = np.linalg.norm(x)
        if norm == 0:
            raise InvalidArgumentError("drew a zero signal; cannot rescale")
        x = x * (src.signal_norm / norm)
    return x


def _gen_opts(cfg: ExperimentConfig) -> GenOpts:
    opts = dict(cfg.gen)
    if opts.get("latent_radius") is None:
        opts["latent_radius"] = math.inf
    return GenOpts(**opts)


def _pgd_call(G, A, y, cfg, stream):
    p = dict(cfg.gen_pgd)
    base = _gen_opts(cfg)
    opts = replace(
        base,
        restarts=p.get("restarts", base.restarts),
        steps_per_restart=p.get("inner_steps", base.steps_per_restart),
        step_size=p.get("inner_step_size", base.step_size),
    )
    return gen_pgd(G, A, y, opts, stream, outer_iters=p.get("outer_iters", 20), tau=p.get("tau", 1.0))


def _run_algorithm(name, cfg, G, A, y, alpha, stream):
    """Returns ``(x_hat, best_loss)``; ``best_loss`` is NaN for the convex baselines."""
    if name == "gen":
        r = reconstruct_gen(G, A, y, _gen_opts(cfg), stream)
        return r.x_hat, r.best_loss
    if name == "gen_noise_aware":
        r = reconstruct_gen_noise_aware(G, A, y, alpha, _gen_opts(cfg), stream)
        return r.x_hat, r.best_loss
    if name == "gen_pgd":
        r = _pgd_call(G, A, y, cfg, stream)
        return r.x_hat, r.best_loss
    K = int(cfg.biht.get("K", cfg.signal.k))
    if name == "biht":
        return biht(A, y, K, int(cfg.biht.get("iters", 100)), float(cfg.biht.get("tau", 1.0))), math.nan
    budget = float(cfg.yp.get("l1_budget", math.sqrt(cfg.yp.get("K", K))))
    return yp_convex(A, y, budget), math.nan


def _cell_rows(cfg, G, dataset, cell):
    m_idx, m, v_n, alpha, v_delta, trial = cell
    root = RngStream(cfg.master_seed)
    x = _draw_signal(cfg, G, dataset, _keyed(root, _SIGNAL, trial))
    ens = make_ensemble(cfg.ensemble, m, x.size, _keyed(root, _MATRIX, m_idx, trial))
    obs = quantize(ens, x, NoiseConfig(v_n, alpha), _keyed(root, _MEASURE, m_idx, trial))
    seen = perturb_matrix(ens, v_delta, _keyed(root, _PERTURB, m_idx, trial)) if v_delta > 0 else ens
    A = seen.normalized
    rows = []
    for name in cfg.algorithms:
        row = {"algorithm": name, "m": m, "v_n": v_n, "alpha": alpha, "v_delta": v_delta, "trial": trial}
        t0 = time.perf_counter()
        try:
            x_hat, best = _run_algorithm(name, cfg, G, A, obs.y, alpha, _keyed(root, _ALGO, m_idx, trial))
            row.update(
                mse=mse(x, x_hat),
                nmse=nmse(x, x_hat),
                hamming=hamming_dist(one_bit_sign(A @ x_hat), obs.y),
                best_loss=best,
                status="ok",
            )
        except (ArithmeticError, ValueError) as exc:
            row.update(mse=math.nan, nmse=math.nan, hamming=math.nan, best_loss=math.nan)
            row["status"] = f"error:{type(exc).__name__}"
        row["seconds"] = time.perf_counter() - t0
        row["master_seed"] = cfg.master_seed
        row["stream"] = f"{m_idx}.{trial}"
        row["config_hash"] = cfg.config_hash()
        rows.append(row)
    return rows


def _load_sources(cfg: ExperimentConfig, G):
    if G is None and cfg.needs_model:
        if not cfg.model:
            raise ConfigError("a model file is required for generative algorithms or in-range signals")
        if not Path(cfg.model).exists():
            raise ConfigError(f"model file not found: {cfg.model}")
        G = load_model(cfg.model)
    dataset = None
    if cfg.signal.kind == "idx":
        if not cfg.signal.path or not Path(cfg.signal.path).exists():
            raise ConfigError(f"IDX file not found: {cfg.signal.path}")
        dataset = read_idx(cfg.signal.path)
    return G, dataset


def run_sweep(cfg: ExperimentConfig, G: MlpGenerator | None = None) -> list[dict]:
    """Run the full grid; one row per ``(algorithm, m, v_n, alpha, v_delta, trial)``."""
    G, dataset = _load_sources(cfg, G)
    cells = [
        (mi, m, v_n, alpha, v_delta, t)
        for mi, m in enumerate(cfg.m_grid)
        for v_n in cfg.v_n_grid
        for alpha in cfg.alpha_grid
        for v_delta in cfg.v_delta_grid
        for t in range(cfg.trials)
    ]

    def work(cell):
        return _cell_rows(cfg, G, dataset, cell)

    if cfg.threads > 1:
        with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
            chunks = list(pool.map(work, cells))
    else:
        chunks = [work(c) for c in cells]
    return [row for chunk in chunks for row in chunk]


def _fmt(value):
    if isinstance(value, float):
        return repr(value)
    return str(value)


def results_to_text(rows) -> str:
    buf = io.StringIO()
    buf.write(f"# results_format={RESULTS_FORMAT}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(RESULT_COLUMNS)
    for row in rows:
        writer.writerow([_fmt(row[c]) for c in RESULT_COLUMNS])
    return buf.getvalue()


def write_results(rows, path) -> None:
    Path(path).write_text(results_to_text(rows))


def summarize(rows, by=("algorithm", "m", "v_n", "alpha", "v_delta"), metric="nmse") -> dict:
    """Mean of ``metric`` over trials for each grid point (ok rows only)."""
    acc: dict = {}
    for row in rows:
        if row["status"] != "ok":
            continue
        acc.setdefault(tuple(row[k] for k in by), []).append(row[metric])
    return {k: float(np.mean(v)) for k, v in acc.items()}


# ---------------------------------------------------------------- theory checks

THEORY_COLUMNS = ["quantity", "m_or_trials", "estimate", "target", "abs_error", "pass"]


def _random_net(gen, depth, widths, kinds):
    from .model import Activation, MlpLayer

    layers = []
    for i in range(depth):
        W = gen.uniform(-1.0, 1.0, size=(widths[i + 1], widths[i])) / np.sqrt(widths[i])
        b = gen.uniform(-0.5, 0.5, size=widths[i + 1])
        layers.append(MlpLayer(W, b, Activation(kinds[i])))
    return MlpGenerator(layers)


def lipschitz_sampling_ratio(G: MlpGenerator, pairs: int, stream: RngStream) -> float:
    """Largest ``||G(z1) - G(z2)|| / (bound * ||z1 - z2||)`` over random pairs; must stay <= 1."""
    gen = stream.generator
    Z1 = gen.standard_normal((pairs, G.s))
    Z2 = Z1 + gen.standard_normal((pairs, G.s)) * gen.uniform(1e-3, 2.0, size=(pairs, 1))
    num = np.linalg.norm(forward_batch(G, Z1)[0] - forward_batch(G, Z2)[0], axis=1)
    den = lipschitz_bound(G) * np.linalg.norm(Z1 - Z2, axis=1)
    return float(np.max(num / den))


def run_theory_check(master_seed: int = 20240601, m: int = 200_000, n: int = 32, width_trials: int = 100_000):
    """Statistical checks of the correlation identity, mean width, Lipschitz and bound calculators."""
    root = RngStream(master_seed)
    rows = []

    def add(quantity, count, estimate, target, ok):
        rows.append(
            {
                "quantity": quantity,
                "m_or_trials": count,
                "estimate": float(estimate),
                "target": float(target),
                "abs_error": abs(float(estimate) - float(target)),
                "pass": bool(ok),
            }
        )

    ens = make_ensemble("gaussian_iid", m, n, derive_stream(root, 0))
    x = derive_stream(root, 1).generator.standard_normal(n)
    x /= np.linalg.norm(x)
    A = ens.normalized
    clean = quantize(ens, x, NoiseConfig(), derive_stream(root, 2))
    f0 = f_statistic(A, clean.y, x)
    add("f_statistic_sign", m, f0, SQRT_2_OVER_PI, abs(f0 - SQRT_2_OVER_PI) <= 0.01)
    flipped = quantize(ens, x, NoiseConfig(0.0, 0.85), derive_stream(root, 3))
    f1 = f_statistic(A, flipped.y, x)
    target = sign_correlation_constant(0.85)
    add("f_statistic_flip_0.85", m, f1, target, abs(f1 - target) <= 0.01)

    two = np.zeros((2, n))
    two[0, 0], two[1, 0] = 1.0, -1.0
    w2 = mean_width_mc(two, width_trials, derive_stream(root, 4))
    target = 2 * SQRT_2_OVER_PI
    add("mean_width_two_point", width_trials, w2, target, abs(w2 - target) <= 0.02 * target)
    w1 = mean_width_mc(two[:1], width_trials, derive_stream(root, 5))
    add("mean_width_singleton", width_trials, w1, 0.0, w1 == 0.0)

    worst = 0.0
    nets = derive_stream(root, 6)
    kinds = ("relu", "sigmoid", "tanh", "identity")
    for i in range(20):
        gen = derive_stream(nets, i).generator
        depth = int(gen.integers(1, 5))
        widths = [int(w) for w in gen.integers(2, 17, size=depth + 1)]
        G = _random_net(gen, depth, widths, [kinds[int(k)] for k in gen.integers(0, 4, size=depth)])
        worst = max(worst, lipschitz_sampling_ratio(G, 1000, derive_stream(derive_stream(root, 7), i)))
    add("lipschitz_ratio_max", 20 * 1000, worst, 1.0, worst <= 1.0)

    mb = measurement_bound(8, 3, 3, 1, 64, 0.5, 0.5, 1.0)
    add("measurement_bound_example", 0, mb, 621, mb == 621)
    cn = covering_number_bound(1.0, 1.0, 3)
    add("covering_number_example", 0, cn, 64, cn == 64)
    return rows


def write_theory_check(rows, path=None) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(THEORY_COLUMNS)
    for row in rows:
        writer.writerow([_fmt(row[c]) if c != "pass" else str(row[c]).lower() for c in THEORY_COLUMNS])
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text)
    return text
