"""Small-scale VAE training to obtain a decoder used as the generative prior.

The objective per datum is

    ||x - G(mu + sigma * eps)||^2 / (2 v) + KL(N(mu, sigma^2) || N(0, I))

with one reparameterized sample per datum, averaged over the mini-batch.
``v`` is the fixed reconstruction variance (``TrainConfig.recon_variance``,
default 1).  On low-energy signals ``v = 1`` lets the KL term dominate and the
posterior collapses; smaller values keep the latent informative.
Optimization is mini-batch Adam.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from types import SimpleNamespace

import numpy as np

from .core import InvalidArgumentError, NumericError, ParseError, RngStream, TrainingError, derive_stream
from .model import (
    Activation,
    MlpGenerator,
    MlpLayer,
    backward_batch,
    forward_batch,
    model_from_dict,
    model_to_dict,
)

__all__ = [
    "TrainConfig",
    "VaeArch",
    "VaeModel",
    "AdamState",
    "init_vae",
    "elbo_loss_and_grads",
    "adam_step",
    "train_vae",
    "export_decoder",
    "write_training_curve",
    "save_vae",
    "load_vae",
]


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 50
    batch_size: int = 64
    learning_rate: float = 1e-3
    betas: tuple[float, float] = (0.9, 0.999)
    epsilon: float = 1e-8
    seed: int = 0
    hidden_activation: str = "relu"
    output_activation: str = "sigmoid"
    recon_variance: float = 1.0

    def __post_init__(self):
        if not self.recon_variance > 0:
            raise InvalidArgumentError("recon_variance must be > 0")
        if self.epochs < 1:
            raise InvalidArgumentError("epochs must be >= 1")
        if self.batch_size < 1:
            raise InvalidArgumentError("batch_size must be >= 1")
        # lr == 0 is allowed: it freezes the initialization
        if self.learning_rate < 0:
            raise InvalidArgumentError("learning_rate must be >= 0")
        b1, b2 = self.betas
        if not (0 < b1 < 1 and 0 < b2 < 1):
            raise InvalidArgumentError("Adam betas must lie in (0, 1)")
        if not self.epsilon > 0:
            raise InvalidArgumentError("Adam epsilon must be > 0")
        Activation(self.hidden_activation)
        Activation(self.output_activation)


@dataclass(frozen=True)
class VaeArch:
    encoder_sizes: tuple[int, ...]
    decoder_sizes: tuple[int, ...]

    def __post_init__(self):
        enc, dec = tuple(self.encoder_sizes), tuple(self.decoder_sizes)
        if len(enc) < 2 or len(dec) < 2:
            raise InvalidArgumentError("encoder and decoder need at least input and output sizes")
        if enc[-1] != 2 * dec[0]:
            raise InvalidArgumentError(f"encoder output {enc[-1]} must be twice the latent size {dec[0]}")
        if dec[-1] != enc[0]:
            raise InvalidArgumentError(f"decoder output {dec[-1]} must equal the signal size {enc[0]}")
        object.__setattr__(self, "encoder_sizes", enc)
        object.__setattr__(self, "decoder_sizes", dec)

    @classmethod
    def symmetric(cls, n: int, s: int, hidden=(32, 32)):
        hidden = tuple(hidden)
        return cls((n,) + hidden + (2 * s,), (s,) + hidden[::-1] + (n,))

    @property
    def n(self) -> int:
        return self.encoder_sizes[0]

    @property
    def s(self) -> int:
        return self.decoder_sizes[0]


def _net(params, activations):
    layers = [SimpleNamespace(W=params[2 * i], b=params[2 * i + 1], act=act) for i, act in enumerate(activations)]
    return SimpleNamespace(layers=layers, d=len(layers))


@dataclass
class VaeModel:
    """Encoder/decoder pair; parameters are stored as flat ``[W1, b1, W2, b2, ...]`` lists."""

    arch: VaeArch
    enc_params: list[np.ndarray]
    dec_params: list[np.ndarray]
    hidden_activation: str = "relu"
    output_activation: str = "sigmoid"
    recon_variance: float = 1.0
    history: list[dict] = field(default_factory=list)

    @property
    def enc_activations(self):
        k = len(self.arch.encoder_sizes) - 1
        return [Activation(self.hidden_activation)] * (k - 1) + [Activation("identity")]

    @property
    def dec_activations(self):
        k = len(self.arch.decoder_sizes) - 1
        return [Activation(self.hidden_activation)] * (k - 1) + [Activation(self.output_activation)]

    @property
    def encoder(self) -> MlpGenerator:
        return _to_generator(self.enc_params, self.enc_activations)

    @property
    def decoder(self) -> MlpGenerator:
        return _to_generator(self.dec_params, self.dec_activations)

    def parameters(self) -> list[np.ndarray]:
        return self.enc_params + self.dec_params

    def with_parameters(self, params) -> VaeModel:
        k = len(self.enc_params)
        return VaeModel(
            self.arch,
            list(params[:k]),
            list(params[k:]),
            self.hidden_activation,
            self.output_activation,
            self.recon_variance,
            self.history,
        )

    def decode(self, Z) -> np.ndarray:
        return forward_batch(_net(self.dec_params, self.dec_activations), np.atleast_2d(Z))[0]


def _to_generator(params, activations) -> MlpGenerator:
    return MlpGenerator(MlpLayer(params[2 * i], params[2 * i + 1], act) for i, act in enumerate(activations))


def _init_layers(sizes, activations, gen):
    params = []
    for fan_in, fan_out, act in zip(sizes[:-1], sizes[1:], activations):
        var = (2.0 if act.kind == "relu" else 1.0) / fan_in
        params.append(gen.standard_normal((fan_out, fan_in)) * np.sqrt(var))
        params.append(np.zeros(fan_out))
    return params


def init_vae(arch: VaeArch, cfg: TrainConfig, stream: RngStream) -> VaeModel:
    """Fan-in scaled Gaussian weights (variance 2/fan_in for relu, 1/fan_in otherwise), zero biases."""
    vae = VaeModel(arch, [], [], cfg.hidden_activation, cfg.output_activation, cfg.recon_variance)
    vae.enc_params = _init_layers(arch.encoder_sizes, vae.enc_activations, stream.generator)
    vae.dec_params = _init_layers(arch.decoder_sizes, vae.dec_activations, stream.generator)
    return vae


def _elbo(vae: VaeModel, batch: np.ndarray, eps: np.ndarray, batch_index=None):
    """Loss terms and exact gradients for fixed reparameterization noise ``eps``."""
    B = batch.shape[0]
    s = vae.arch.s
    enc = _net(vae.enc_params, vae.enc_activations)
    dec = _net(vae.dec_params, vae.dec_activations)
    where = "" if batch_index is None else f" in batch {batch_index}"
    try:
        with np.errstate(over="raise", invalid="raise"):
            h, enc_cache = forward_batch(enc, batch)
            mu, logvar = h[:, :s], h[:, s:]
            var = np.exp(logvar)
            sigma = np.exp(0.5 * logvar)
            z = mu + sigma * eps
            xr, dec_cache = forward_batch(dec, z)
    except (FloatingPointError, NumericError) as exc:
        raise NumericError(f"non-finite value{where}: {exc}") from None

    resid = xr - batch
    with np.errstate(over="ignore", invalid="ignore"):
        recon = 0.5 * np.sum(resid**2) / (B * vae.recon_variance)
        kl = 0.5 * np.sum(mu**2 + var - 1.0 - logvar) / B
        loss = recon + kl
    if not np.isfinite(loss):
        raise NumericError(f"non-finite loss{where}")

    dz, dec_grads = backward_batch(dec, dec_cache, resid / (B * vae.recon_variance), param_grads=True)
    dmu = dz + mu / B
    dlogvar = dz * eps * 0.5 * sigma + 0.5 * (var - 1.0) / B
    _, enc_grads = backward_batch(enc, enc_cache, np.hstack([dmu, dlogvar]), param_grads=True)
    grads = [g for pair in enc_grads for g in pair] + [g for pair in dec_grads for g in pair]
    return loss, recon, kl, grads


def elbo_loss_and_grads(vae: VaeModel, batch, stream: RngStream, batch_index=None):
    """Sampled negative ELBO on ``batch`` and its gradient w.r.t. ``vae.parameters()``.

    The reparameterization noise is drawn from ``stream``.
    """
    batch = np.atleast_2d(np.asarray(batch, dtype=np.float64))
    if batch.shape[1] != vae.arch.n:
        raise InvalidArgumentError(f"batch rows have length {batch.shape[1]}, expected {vae.arch.n}")
    eps = stream.generator.standard_normal((batch.shape[0], vae.arch.s))
    loss, _, _, grads = _elbo(vae, batch, eps, batch_index)
    return loss, grads


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    step: int = 0

    @classmethod
    def zeros_like(cls, params):
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params], 0)


def adam_step(params, grads, state: AdamState, cfg: TrainConfig):
    """One bias-corrected Adam update.  Returns ``(new_params, new_state)``."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise InvalidArgumentError("params, grads and Adam moments must have the same length")
    b1, b2 = cfg.betas
    t = state.step + 1
    new_params, new_m, new_v = [], [], []
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape or p.shape != m.shape:
            raise InvalidArgumentError(f"shape mismatch: param {p.shape}, grad {g.shape}, moment {m.shape}")
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        m_hat = m / (1 - b1**t)
        v_hat = v / (1 - b2**t)
        new_params.append(p - cfg.learning_rate * m_hat / (np.sqrt(v_hat) + cfg.epsilon))
        new_m.append(m)
        new_v.append(v)
    return new_params, AdamState(new_m, new_v, t)


def train_vae(dataset, arch: VaeArch, cfg: TrainConfig, log=None) -> VaeModel:
    """Train a VAE with mini-batch Adam; deterministic in ``(dataset, arch, cfg)``.

    Streams derived from ``cfg.seed``: 0 initialization, 1 shuffling, 2 noise.
    ``vae.history`` holds one dict per epoch with the mean loss and its two terms.
    """
    data = np.asarray(dataset, dtype=np.float64)
    if data.ndim != 2 or data.shape[0] == 0:
        raise InvalidArgumentError("dataset must be a non-empty 2-d array")
    if not np.all(np.isfinite(data)):
        raise InvalidArgumentError("dataset has non-finite entries")
    if data.shape[1] != arch.n:
        raise InvalidArgumentError(f"dataset rows have length {data.shape[1]}, expected {arch.n}")

    root = RngStream(cfg.seed)
    vae = init_vae(arch, cfg, derive_stream(root, 0))
    shuffle_root = derive_stream(root, 1)
    noise_root = derive_stream(root, 2)
    params = vae.parameters()
    state = AdamState.zeros_like(params)
    history = []
    N = data.shape[0]
    for epoch in range(cfg.epochs):
        order = derive_stream(shuffle_root, epoch).generator.permutation(N)
        noise = derive_stream(noise_root, epoch).generator
        tot = rec = kl_sum = 0.0
        for bi, start in enumerate(range(0, N, cfg.batch_size)):
            batch = data[order[start : start + cfg.batch_size]]
            eps = noise.standard_normal((batch.shape[0], arch.s))
            current = vae.with_parameters(params)
            try:
                loss, recon, kl, grads = _elbo(current, batch, eps, batch_index=bi)
            except NumericError as exc:
                raise TrainingError(f"training diverged at epoch {epoch}: {exc}", epoch=epoch) from None
            params, state = adam_step(params, grads, state, cfg)
            w = batch.shape[0]
            tot += loss * w
            rec += recon * w
            kl_sum += kl * w
        row = {"epoch": epoch, "mean_loss": tot / N, "recon_term": rec / N, "kl_term": kl_sum / N}
        history.append(row)
        if log is not None:
            log(row)
    vae = vae.with_parameters(params)
    vae.history = history
    return vae


def export_decoder(vae: VaeModel) -> MlpGenerator:
    return vae.decoder


def write_training_curve(history, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["epoch", "mean_loss", "recon_term", "kl_term"])
        for row in history:
            writer.writerow([row["epoch"]] + [repr(float(row[k])) for k in ("mean_loss", "recon_term", "kl_term")])


def _flat_params(G: MlpGenerator) -> list[np.ndarray]:
    out = []
    for layer in G.layers:
        out += [np.array(layer.W), np.array(layer.b)]
    return out


def save_vae(vae: VaeModel, path) -> None:
    """Write both networks and the training settings needed to rebuild the model."""
    doc = {
        "format_version": 1,
        "kind": "vae",
        "hidden_activation": vae.hidden_activation,
        "output_activation": vae.output_activation,
        "recon_variance": vae.recon_variance,
        "encoder": model_to_dict(vae.encoder),
        "decoder": model_to_dict(vae.decoder),
    }
    with open(path, "w") as fh:
        json.dump(doc, fh)


def load_vae(path) -> VaeModel:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    if not isinstance(doc, dict) or doc.get("kind") != "vae":
        raise ParseError(f"{path}: not a VAE file (kind must be 'vae')")
    if doc.get("format_version") != 1:
        raise ParseError(f"{path}: unsupported format_version {doc.get('format_version')!r}")
    for key in ("encoder", "decoder", "hidden_activation", "output_activation", "recon_variance"):
        if key not in doc:
            raise ParseError(f"{path}: missing field {key!r}")
    enc = model_from_dict(doc["encoder"])
    dec = model_from_dict(doc["decoder"])
    try:
        arch = VaeArch(tuple(enc.widths), tuple(dec.widths))
    except InvalidArgumentError as exc:
        raise ParseError(f"{path}: {exc}") from None
    vae = VaeModel(
        arch,
        _flat_params(enc),
        _flat_params(dec),
        doc["hidden_activation"],
        doc["output_activation"],
        float(doc["recon_variance"]),
    )
    # the stored activations must agree with what the settings imply
    stored = [layer.act.kind for layer in enc.layers] + [layer.act.kind for layer in dec.layers]
    implied = [a.kind for a in vae.enc_activations] + [a.kind for a in vae.dec_activations]
    if stored != implied:
        raise ParseError(f"{path}: layer activations {stored} do not match the declared settings")
    return vae
