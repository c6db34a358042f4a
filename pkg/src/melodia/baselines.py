"""The two comparison systems and the note-unrolling ablation.

All three reuse the main model, dataset, and generation paths; the only
deltas are which latent code the decoder sees and whether the KL term is
optimized:

* decoder-only: pure autoregressive sequence model, latent fixed to zero,
  loss is the reconstruction term alone.
* autoencoder: deterministic code z = mu, KL never optimized (beta = 0)
  but still measured and logged.
* no-unrolling ablation: the full variational objective with the
  intra-note conditioning switched off.
"""

from __future__ import annotations

from dataclasses import replace

from .dataset import Segment
from .model import Model, ModelKind, TrainResult, train


def train_decoder_only(model: Model, segments: list[Segment], **kwargs) -> TrainResult:
    """Train the decoder as a plain autoregressive model (no latent code)."""
    return train(model, segments, ModelKind.DECODER_ONLY, **kwargs)


def train_autoencoder(model: Model, segments: list[Segment], **kwargs) -> TrainResult:
    """Train with z = mu and no KL pressure; KL is logged for analysis."""
    return train(model, segments, ModelKind.AUTOENCODER, **kwargs)


def run_ablation(model: Model, segments: list[Segment], **kwargs) -> TrainResult:
    """Train the variational model with note unrolling disabled."""
    if model.config.note_unrolling:
        raise ValueError(
            "ablation model must be built with note_unrolling=False"
        )
    return train(model, segments, ModelKind.NO_UNROLLING, **kwargs)


def ablation_config(config):
    """The matching no-unrolling configuration for a proposed-model config."""
    return replace(config, note_unrolling=False)
