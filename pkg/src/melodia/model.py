"""The modularized recurrent variational autoencoder.

Encoder: three attribute GRUs running independently over the embedded
offset/duration/pitch streams, a context GRU combining their outputs each
step, and an affine head mapping the four final states to the posterior
mean and standard deviation.

Decoder: seven GRUs.  Three upper cells track attribute-specific context
from the previous note, one context cell combines them (stepping once per
attribute sub-step), and three lower cells emit the attributes of the
current note in order, each conditioned on the latent code and, when note
unrolling is enabled, on the attributes already chosen this step.  The
upper cell's output is added into its lower counterpart before the output
head (residual skip).  The joint over one note therefore factorizes as
p(offset) * p(duration | offset) * p(pitch | offset, duration).
"""

from __future__ import annotations

import csv
import json
import struct
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Callable

import numpy as np

from . import nn
from .dataset import Batch, Segment, make_batches
from .notes import (
    DataError,
    IndexedSequence,
    NoteSequence,
    Vocabularies,
    decode_indices,
    vocabulary_from_text,
    vocabulary_to_text,
)

CHECKPOINT_MAGIC = b"MVAE"
CHECKPOINT_VERSION = 1
METRICS_HEADER = ("step", "beta", "recon_nll", "kl", "total")


class TrainingAbort(DataError):
    """Non-finite loss; training cannot continue."""

    def __init__(self, step: int, epoch: int, batch_index: int, value: float):
        super().__init__(
            f"non-finite loss {value} at step {step}"
            f" (epoch {epoch}, batch {batch_index})"
        )
        self.step = step
        self.epoch = epoch
        self.batch_index = batch_index


class ModelKind(str, Enum):
    """The run matrix: the proposed model, its ablation, and two baselines."""

    PROPOSED = "proposed"
    NO_UNROLLING = "no-unrolling"
    DECODER_ONLY = "decoder-only"
    AUTOENCODER = "autoencoder"

    @property
    def uses_variational_sampling(self) -> bool:
        return self in (ModelKind.PROPOSED, ModelKind.NO_UNROLLING)

    @property
    def latent_mode(self) -> str:
        if self is ModelKind.DECODER_ONLY:
            return "zero"
        if self is ModelKind.AUTOENCODER:
            return "mean"
        return "sample"


@dataclass(frozen=True)
class ModelConfig:
    """Architecture hyperparameters; defaults are the full-scale setting."""

    vocab_delta: int
    vocab_duration: int
    vocab_pitch: int
    hidden_size: int = 512
    latent_dim: int = 128
    embed_delta: int = 64
    embed_duration: int = 64
    embed_pitch: int = 128
    note_unrolling: bool = True
    max_generate_len: int = 100
    kl_ramp_steps: int = 2000

    def __post_init__(self) -> None:
        for name in (
            "vocab_delta", "vocab_duration", "vocab_pitch", "hidden_size",
            "latent_dim", "embed_delta", "embed_duration", "embed_pitch",
            "max_generate_len",
        ):
            if getattr(self, name) <= 0:
                raise DataError(f"model config field {name} must be positive")
        if self.kl_ramp_steps < 0:
            raise DataError("kl_ramp_steps must be >= 0")
        if self.latent_dim > 4 * self.hidden_size:
            raise DataError(
                f"latent dim {self.latent_dim} exceeds the encoder head input"
                f" width {4 * self.hidden_size}"
            )


@dataclass(frozen=True)
class DecoderState:
    """Hidden states of all seven decoder GRUs plus the conditioning code."""

    up_delta: nn.Tensor
    up_duration: nn.Tensor
    up_pitch: nn.Tensor
    ctx: nn.Tensor
    low_delta: nn.Tensor
    low_duration: nn.Tensor
    low_pitch: nn.Tensor
    z: nn.Tensor


def kl_anneal_weight(step: int, ramp_steps: int) -> float:
    """Linear ramp of the KL weight from 0 at step 0 up to 1."""
    if step < 0:
        raise DataError("step must be >= 0")
    if ramp_steps <= 0:
        return 1.0
    return min(1.0, step / ramp_steps)


def kl_to_standard_normal(mu: np.ndarray, sigma: np.ndarray) -> float:
    """Closed-form KL(N(mu, diag sigma^2) || N(0, I))."""
    mu = np.asarray(mu, dtype=np.float64)
    sigma = np.asarray(sigma, dtype=np.float64)
    if np.any(sigma <= 0):
        raise DataError("sigma must be strictly positive")
    return float(0.5 * np.sum(mu * mu + sigma * sigma - 1.0 - 2.0 * np.log(sigma)))


def sample_latent(mu: nn.Tensor, sigma: nn.Tensor, eps: np.ndarray) -> nn.Tensor:
    """Reparameterized draw z = mu + sigma * eps, differentiable in mu, sigma."""
    noise = nn.Tensor(np.asarray(eps, dtype=mu.data.dtype))
    return nn.add(mu, nn.mul(sigma, noise))


def _kl_rows(mu: nn.Tensor, sigma: nn.Tensor) -> nn.Tensor:
    """Per-example KL to the standard normal, shape (B,)."""
    terms = nn.add(
        nn.add(nn.mul(mu, mu), nn.mul(sigma, sigma)),
        nn.shift(nn.scale(nn.log(sigma), -2.0), -1.0),
    )
    return nn.scale(nn.sum_axis(terms, axis=1), 0.5)


ChooseFn = Callable[[str, nn.Tensor], np.ndarray]


class Model:
    """Parameters plus forward passes for one configured model instance."""

    def __init__(
        self,
        config: ModelConfig,
        vocabs: Vocabularies,
        seed: int = 0,
        dtype=np.float32,
    ):
        if vocabs.sizes() != (config.vocab_delta, config.vocab_duration, config.vocab_pitch):
            raise DataError(
                f"vocabulary sizes {vocabs.sizes()} do not match the model config"
            )
        self.config = config
        self.vocabs = vocabs
        self.dtype = np.dtype(dtype)
        rng = np.random.default_rng(seed)
        c = config
        p = nn.ParamSet(dtype)
        self.params = p

        def table(name: str, rows: int, dim: int) -> nn.Tensor:
            return p.add(name, nn.uniform_init(rng, (rows, dim), dim))

        def cell(name: str, inp: int) -> nn.GruCell:
            return nn.GruCell(name, inp, c.hidden_size, p, rng)

        def affine(name: str, inp: int, out: int) -> tuple[nn.Tensor, nn.Tensor]:
            return (
                p.add(f"{name}.W", nn.uniform_init(rng, (inp, out), inp)),
                p.add(f"{name}.b", np.zeros(out)),
            )

        # Shared embeddings; the extra row is the start token.
        self.emb_delta = table("emb.delta", c.vocab_delta + 1, c.embed_delta)
        self.emb_duration = table("emb.duration", c.vocab_duration + 1, c.embed_duration)
        self.emb_pitch = table("emb.pitch", c.vocab_pitch + 1, c.embed_pitch)

        h = c.hidden_size
        self.enc_delta = cell("enc.delta", c.embed_delta)
        self.enc_duration = cell("enc.duration", c.embed_duration)
        self.enc_pitch = cell("enc.pitch", c.embed_pitch)
        self.enc_ctx = cell("enc.ctx", 3 * h)
        self.enc_head = affine("enc.head", 4 * h, h)
        self.enc_mu = affine("enc.mu", h, c.latent_dim)
        self.enc_logvar = affine("enc.logvar", h, c.latent_dim)

        self.dec_up_delta = cell("dec.up_delta", c.embed_delta)
        self.dec_up_duration = cell("dec.up_duration", c.embed_duration)
        self.dec_up_pitch = cell("dec.up_pitch", c.embed_pitch)
        self.dec_ctx = cell("dec.ctx", 3 * h)
        k = c.latent_dim
        unroll = c.note_unrolling
        self.dec_low_delta = cell("dec.low_delta", h + k)
        self.dec_low_duration = cell(
            "dec.low_duration", h + k + (c.embed_delta if unroll else 0)
        )
        self.dec_low_pitch = cell(
            "dec.low_pitch", h + k + (c.embed_delta + c.embed_duration if unroll else 0)
        )
        self.dec_init = {
            name: affine(f"dec.init_{name}", k, h)
            for name in (
                "up_delta", "up_duration", "up_pitch", "ctx",
                "low_delta", "low_duration", "low_pitch",
            )
        }
        self.dec_out_delta = affine("dec.out_delta", h, c.vocab_delta)
        self.dec_out_duration = affine("dec.out_duration", h, c.vocab_duration)
        self.dec_out_pitch = affine("dec.out_pitch", h, c.vocab_pitch)

    @property
    def start_tokens(self) -> tuple[int, int, int]:
        c = self.config
        return (c.vocab_delta, c.vocab_duration, c.vocab_pitch)

    def _zeros(self, batch: int) -> nn.Tensor:
        return nn.Tensor(np.zeros((batch, self.config.hidden_size), dtype=self.dtype))

    def encode(self, batch: Batch) -> tuple[nn.Tensor, nn.Tensor]:
        """Posterior parameters (mu, sigma) for a (B, L) index batch."""
        if batch.length == 0:
            raise DataError("cannot encode an empty sequence")
        n = batch.size
        h_delta = h_duration = h_pitch = h_ctx = self._zeros(n)
        for t in range(batch.length):
            h_delta = self.enc_delta.step(h_delta, nn.embed(self.emb_delta, batch.delta[:, t]))
            h_duration = self.enc_duration.step(
                h_duration, nn.embed(self.emb_duration, batch.duration[:, t])
            )
            h_pitch = self.enc_pitch.step(h_pitch, nn.embed(self.emb_pitch, batch.pitch[:, t]))
            h_ctx = self.enc_ctx.step(h_ctx, nn.concat([h_delta, h_duration, h_pitch]))
        v = nn.linear(nn.concat([h_delta, h_duration, h_pitch, h_ctx]), *self.enc_head)
        mu = nn.linear(v, *self.enc_mu)
        sigma = nn.exp(nn.scale(nn.linear(v, *self.enc_logvar), 0.5))
        return mu, sigma

    def init_decoder(self, z: nn.Tensor) -> DecoderState:
        """Project the latent code into initial states for all seven GRUs."""
        if z.data.ndim != 2 or z.data.shape[1] != self.config.latent_dim:
            raise DataError(f"latent code must be (B, {self.config.latent_dim})")
        states = {
            name: nn.linear(z, *weights) for name, weights in self.dec_init.items()
        }
        return DecoderState(z=z, **states)

    def decode_step(
        self,
        state: DecoderState,
        prev_delta: np.ndarray,
        prev_duration: np.ndarray,
        prev_pitch: np.ndarray,
        choose: ChooseFn,
    ) -> tuple[tuple[nn.Tensor, nn.Tensor, nn.Tensor], tuple[np.ndarray, ...], DecoderState]:
        """Advance one note: three conditional sub-steps.

        ``choose(attribute, logits)`` supplies each chosen index batch
        (teacher forcing, sampling, or a forced value for enumeration);
        later sub-steps condition on earlier choices when note unrolling
        is on.  Returns the three logit tensors, the chosen indices, and
        the successor state, leaving ``state`` untouched.
        """
        up_delta = self.dec_up_delta.step(state.up_delta, nn.embed(self.emb_delta, prev_delta))
        up_duration = self.dec_up_duration.step(
            state.up_duration, nn.embed(self.emb_duration, prev_duration)
        )
        up_pitch = self.dec_up_pitch.step(state.up_pitch, nn.embed(self.emb_pitch, prev_pitch))
        upper = nn.concat([up_delta, up_duration, up_pitch])
        z = state.z
        unroll = self.config.note_unrolling

        ctx = self.dec_ctx.step(state.ctx, upper)
        low_delta = self.dec_low_delta.step(state.low_delta, nn.concat([ctx, z]))
        logits_delta = nn.linear(nn.add(low_delta, up_delta), *self.dec_out_delta)
        pick_delta = choose("dT", logits_delta)

        ctx = self.dec_ctx.step(ctx, upper)
        duration_in = [ctx, z]
        if unroll:
            duration_in.append(nn.embed(self.emb_delta, pick_delta))
        low_duration = self.dec_low_duration.step(state.low_duration, nn.concat(duration_in))
        logits_duration = nn.linear(nn.add(low_duration, up_duration), *self.dec_out_duration)
        pick_duration = choose("T", logits_duration)

        ctx = self.dec_ctx.step(ctx, upper)
        pitch_in = [ctx, z]
        if unroll:
            pitch_in.append(nn.embed(self.emb_delta, pick_delta))
            pitch_in.append(nn.embed(self.emb_duration, pick_duration))
        low_pitch = self.dec_low_pitch.step(state.low_pitch, nn.concat(pitch_in))
        logits_pitch = nn.linear(nn.add(low_pitch, up_pitch), *self.dec_out_pitch)
        pick_pitch = choose("P", logits_pitch)

        new_state = DecoderState(
            up_delta=up_delta,
            up_duration=up_duration,
            up_pitch=up_pitch,
            ctx=ctx,
            low_delta=low_delta,
            low_duration=low_duration,
            low_pitch=low_pitch,
            z=z,
        )
        return (logits_delta, logits_duration, logits_pitch), (
            pick_delta, pick_duration, pick_pitch,
        ), new_state

    def elbo_loss(
        self,
        batch: Batch,
        beta: float,
        eps: np.ndarray | None = None,
        latent: str = "sample",
    ) -> tuple[nn.Tensor, nn.Tensor, nn.Tensor]:
        """Teacher-forced loss = recon_nll + beta * kl, averaged over the batch.

        ``latent`` selects the code fed to the decoder: a reparameterized
        sample (needs ``eps``), the posterior mean, or zeros (the pure
        autoregressive baseline, which skips the encoder entirely).
        Returns (loss, recon_nll, kl) as scalar tensors.
        """
        if not 0.0 <= beta <= 1.0:
            raise DataError(f"beta must lie in [0, 1], got {beta}")
        n = batch.size
        if latent == "zero":
            z = nn.Tensor(np.zeros((n, self.config.latent_dim), dtype=self.dtype))
            kl_rows = nn.Tensor(np.zeros(n, dtype=self.dtype))
        else:
            mu, sigma = self.encode(batch)
            kl_rows = _kl_rows(mu, sigma)
            if latent == "mean":
                z = mu
            elif latent == "sample":
                if eps is None:
                    raise DataError("latent='sample' needs an eps draw")
                z = sample_latent(mu, sigma, eps)
            else:
                raise DataError(f"unknown latent mode {latent!r}")

        state = self.init_decoder(z)
        starts = self.start_tokens
        prev = tuple(np.full(n, tok, dtype=np.int64) for tok in starts)
        targets = (batch.delta, batch.duration, batch.pitch)
        step_losses: list[nn.Tensor] = []

        for t in range(batch.length):
            teacher = {"dT": targets[0][:, t], "T": targets[1][:, t], "P": targets[2][:, t]}

            def choose(attr: str, logits: nn.Tensor) -> np.ndarray:
                step_losses.append(nn.softmax_cross_entropy(logits, teacher[attr]))
                return teacher[attr]

            _, picks, state = self.decode_step(state, *prev, choose)
            prev = picks

        recon_rows = step_losses[0]
        for piece in step_losses[1:]:
            recon_rows = nn.add(recon_rows, piece)
        loss = nn.mean_all(nn.add(recon_rows, nn.scale(kl_rows, beta)))
        return loss, nn.mean_all(recon_rows), nn.mean_all(kl_rows)

    def reconstruction_accuracy(
        self, batch: Batch, latent: str = "mean"
    ) -> dict[str, float]:
        """Teacher-forced argmax accuracy per attribute.

        Evaluates with the posterior mean (or a zero code for the
        decoder-only baseline) so the score is deterministic.
        """
        correct = {"dT": 0, "T": 0, "P": 0}
        total = batch.size * batch.length
        targets = {"dT": batch.delta, "T": batch.duration, "P": batch.pitch}
        with nn.no_grad():
            if latent == "zero":
                z = nn.Tensor(np.zeros((batch.size, self.config.latent_dim), dtype=self.dtype))
            else:
                mu, _ = self.encode(batch)
                z = mu
            state = self.init_decoder(z)
            prev = tuple(np.full(batch.size, tok, dtype=np.int64) for tok in self.start_tokens)
            for t in range(batch.length):

                def choose(attr: str, logits: nn.Tensor) -> np.ndarray:
                    target = targets[attr][:, t]
                    correct[attr] += int((logits.data.argmax(axis=1) == target).sum())
                    return target

                _, picks, state = self.decode_step(state, *prev, choose)
                prev = picks
        return {attr: count / total for attr, count in correct.items()}

    def generate_indices(
        self,
        z: np.ndarray,
        length: int | None = None,
        mode: str = "sample",
        temperature: float = 1.0,
        rng: np.random.Generator | None = None,
    ) -> IndexedSequence:
        """Autoregressively unroll the decoder from a latent code."""
        length = self.config.max_generate_len if length is None else length
        if mode not in ("sample", "greedy"):
            raise DataError(f"unknown generation mode {mode!r}")
        if mode == "sample" and rng is None:
            raise DataError("sampling mode needs a random generator")
        z = np.asarray(z, dtype=self.dtype).reshape(1, self.config.latent_dim)
        out: dict[str, list[int]] = {"dT": [], "T": [], "P": []}

        def choose(attr: str, logits: nn.Tensor) -> np.ndarray:
            row = logits.data[0].astype(np.float64)
            if mode == "greedy":
                idx = int(np.argmax(row))
            else:
                probs = nn.softmax(row / temperature)
                idx = int(rng.choice(len(row), p=probs / probs.sum()))
            out[attr].append(idx)
            return np.array([idx], dtype=np.int64)

        with nn.no_grad():
            state = self.init_decoder(nn.Tensor(z))
            prev = tuple(np.array([tok], dtype=np.int64) for tok in self.start_tokens)
            for _ in range(length):
                _, picks, state = self.decode_step(state, *prev, choose)
                prev = picks
        return IndexedSequence(
            np.array(out["dT"], dtype=np.int64),
            np.array(out["T"], dtype=np.int64),
            np.array(out["P"], dtype=np.int64),
        )

    def generate(
        self,
        z: np.ndarray,
        length: int | None = None,
        mode: str = "sample",
        temperature: float = 1.0,
        rng: np.random.Generator | None = None,
        source_id: str = "generated",
    ) -> NoteSequence:
        indices = self.generate_indices(z, length, mode, temperature, rng)
        return decode_indices(indices, self.vocabs, source_id)

    def encode_mean(self, indexed: IndexedSequence) -> np.ndarray:
        """Posterior mean of a single sequence as a plain (k,) array."""
        with nn.no_grad():
            mu, _ = self.encode(Batch.single(indexed))
        return mu.data[0].copy()

    def save_checkpoint(
        self, path: str | Path, kind: ModelKind, step: int = 0, epoch: int = 0
    ) -> None:
        """Self-sufficient snapshot: config, vocabularies, weights, optimizer."""
        meta = {
            "kind": kind.value,
            "step": step,
            "epoch": epoch,
            "dtype": self.dtype.name,
            "config": {
                "vocab_delta": self.config.vocab_delta,
                "vocab_duration": self.config.vocab_duration,
                "vocab_pitch": self.config.vocab_pitch,
                "hidden_size": self.config.hidden_size,
                "latent_dim": self.config.latent_dim,
                "embed_delta": self.config.embed_delta,
                "embed_duration": self.config.embed_duration,
                "embed_pitch": self.config.embed_pitch,
                "note_unrolling": self.config.note_unrolling,
                "max_generate_len": self.config.max_generate_len,
                "kl_ramp_steps": self.config.kl_ramp_steps,
            },
            "vocabs": {
                "dT": vocabulary_to_text(self.vocabs.delta),
                "T": vocabulary_to_text(self.vocabs.duration),
                "P": vocabulary_to_text(self.vocabs.pitch),
            },
        }
        blob = json.dumps(meta, sort_keys=True).encode("utf-8")
        payload = bytearray()
        payload += CHECKPOINT_MAGIC + struct.pack("<I", CHECKPOINT_VERSION)
        payload += struct.pack("<I", len(blob)) + blob
        payload += nn.write_tensor_table({n: t.data for n, t in self.params.items()})
        payload += nn.write_tensor_table(self.params.accumulators)
        Path(path).write_bytes(bytes(payload))


@dataclass(frozen=True)
class Checkpoint:
    """A loaded checkpoint: the model plus its training position."""

    model: Model
    kind: ModelKind
    step: int
    epoch: int


def load_checkpoint(path: str | Path) -> Checkpoint:
    data = Path(path).read_bytes()
    if data[:4] != CHECKPOINT_MAGIC:
        raise DataError(f"{path}: not a model checkpoint")
    (version,) = struct.unpack_from("<I", data, 4)
    if version != CHECKPOINT_VERSION:
        raise DataError(f"{path}: unsupported checkpoint version {version}")
    (meta_len,) = struct.unpack_from("<I", data, 8)
    meta = json.loads(data[12 : 12 + meta_len].decode("utf-8"))
    arrays, pos = nn.read_tensor_table(data, 12 + meta_len)
    accumulators, _ = nn.read_tensor_table(data, pos)

    config = ModelConfig(**meta["config"])
    vocabs = Vocabularies(
        delta=vocabulary_from_text(meta["vocabs"]["dT"]),
        duration=vocabulary_from_text(meta["vocabs"]["T"]),
        pitch=vocabulary_from_text(meta["vocabs"]["P"]),
    )
    dtype = np.dtype(meta["dtype"])
    model = Model(config, vocabs, dtype=dtype)
    expected = dict(model.params.items())
    if set(arrays) != set(expected):
        missing = set(expected).symmetric_difference(arrays)
        raise DataError(f"{path}: parameter names do not match the config: {sorted(missing)}")
    for name, tensor in expected.items():
        if arrays[name].shape != tensor.data.shape:
            raise DataError(
                f"{path}: shape of {name} is {arrays[name].shape},"
                f" config implies {tensor.data.shape}"
            )
        tensor.data = arrays[name].astype(dtype)
        if name in accumulators:
            model.params.accumulators[name] = accumulators[name].astype(dtype)
    return Checkpoint(model, ModelKind(meta["kind"]), meta["step"], meta["epoch"])


@dataclass
class TrainResult:
    steps: int
    epochs: int
    final_recon: float
    final_kl: float
    metrics_path: Path
    checkpoint_path: Path


def _epoch_rng(seed: int, epoch: int) -> int:
    return int(np.random.default_rng([seed, 2, epoch]).integers(0, 2**63 - 1))


def train(
    model: Model,
    segments: list[Segment],
    kind: ModelKind,
    *,
    seed: int,
    epochs: int,
    batch_size: int = 128,
    learning_rate: float = 1e-4,
    rmsprop_decay: float = 0.9,
    rmsprop_eps: float = 1e-8,
    metrics_path: str | Path,
    checkpoint_path: str | Path,
    start_step: int = 0,
    start_epoch: int = 0,
    progress: Callable[[str], None] | None = None,
) -> TrainResult:
    """RMSprop training loop with annealed KL and per-epoch checkpoints.

    Fully deterministic given (seed, start position): batch order derives
    from (seed, epoch) and the reparameterization noise from (seed, step),
    so resuming from a checkpoint replays the uninterrupted trajectory.
    """
    if not segments:
        raise DataError("no segments to train on")
    metrics_path = Path(metrics_path)
    checkpoint_path = Path(checkpoint_path)
    resuming = start_step > 0 and metrics_path.exists()
    mode = "a" if resuming else "w"

    step = start_step
    recon_value = kl_value = float("nan")
    with open(metrics_path, mode, newline="") as handle:
        writer = csv.writer(handle)
        if not resuming:
            writer.writerow(METRICS_HEADER)
        for epoch in range(start_epoch, epochs):
            batches = make_batches(segments, batch_size, _epoch_rng(seed, epoch))
            for batch_index, batch in enumerate(batches):
                if kind.uses_variational_sampling:
                    beta = kl_anneal_weight(step, model.config.kl_ramp_steps)
                else:
                    beta = 0.0
                eps = None
                if kind.latent_mode == "sample":
                    eps = np.random.default_rng([seed, 1, step]).standard_normal(
                        (batch.size, model.config.latent_dim)
                    )
                loss, recon, kl = model.elbo_loss(batch, beta, eps, kind.latent_mode)
                loss_value = loss.item()
                if not np.isfinite(loss_value):
                    raise TrainingAbort(step, epoch, batch_index, loss_value)
                model.params.zero_grad()
                loss.backward()
                model.params.fill_missing_grads()
                nn.rmsprop_update(model.params, learning_rate, rmsprop_decay, rmsprop_eps)
                recon_value, kl_value = recon.item(), kl.item()
                writer.writerow(
                    (step, f"{beta:.6f}", f"{recon_value:.6f}", f"{kl_value:.6f}",
                     f"{recon_value + beta * kl_value:.6f}")
                )
                step += 1
            model.save_checkpoint(checkpoint_path, kind, step=step, epoch=epoch + 1)
            if progress is not None:
                progress(
                    f"epoch {epoch + 1}/{epochs}: recon {recon_value:.4f} kl {kl_value:.4f}"
                )
    return TrainResult(step, epochs, recon_value, kl_value, metrics_path, checkpoint_path)
