"""Shared fixtures and independent oracles.

The MIDI bytes built here never go through the package's writer, so the
parser tests and the round-trip acceptance check start from files produced
by a second, unrelated code path.  The trained-model fixtures are session
scoped because several acceptance criteria share them.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from fractions import Fraction

import numpy as np
import pytest

from melodia import nn
from melodia.dataset import Batch, Segment
from melodia.model import Model, ModelConfig, ModelKind, train
from melodia.notes import AttributeVocabulary, IndexedSequence, Vocabularies

OVERFIT_LR = 3e-4
OVERFIT_MAX_STEPS = 3000
OVERFIT_CHUNK = 250


# ---------------------------------------------------------------------------
# Independent Standard MIDI File builder (oracle-side, struct only).


def vlq(value: int) -> bytes:
    out = [value & 0x7F]
    value >>= 7
    while value:
        out.append((value & 0x7F) | 0x80)
        value >>= 7
    return bytes(reversed(out))


def smf_track(events: list[tuple[int, bytes]]) -> bytes:
    """Events are (delta_ticks, raw message bytes); end-of-track appended."""
    body = b"".join(vlq(delta) + message for delta, message in events)
    body += b"\x00\xff\x2f\x00"
    return b"MTrk" + struct.pack(">I", len(body)) + body


def smf_file(division: int, tracks: list[list[tuple[int, bytes]]], fmt: int | None = None) -> bytes:
    fmt = (0 if len(tracks) == 1 else 1) if fmt is None else fmt
    header = b"MThd" + struct.pack(">IHHH", 6, fmt, len(tracks), division)
    return header + b"".join(smf_track(t) for t in tracks)


def note_on(pitch: int, velocity: int = 90, channel: int = 0) -> bytes:
    return bytes((0x90 | channel, pitch, velocity))


def note_off(pitch: int, channel: int = 0) -> bytes:
    return bytes((0x80 | channel, pitch, 64))


def chorale_like_bytes(rng: np.random.Generator, division: int = 480) -> bytes:
    """A small two-voice format-1 file with chords and triplet figures."""
    ticks = {
        "eighth": division // 2,
        "quarter": division,
        "half": division * 2,
        "triplet": division // 3,
    }
    tracks = []
    for voice, base in ((0, 60), (1, 48)):
        events: list[tuple[int, bytes]] = []
        tick_values = list(ticks.values())
        for _ in range(rng.integers(8, 16)):
            pitch = int(base + rng.integers(0, 12))
            dur = int(tick_values[rng.integers(0, len(tick_values))])
            if rng.random() < 0.3:  # chord: second pitch at the same onset
                other = min(127, pitch + 4)
                events.append((0, note_on(pitch, channel=voice)))
                events.append((0, note_on(other, channel=voice)))
                events.append((dur, note_off(pitch, channel=voice)))
                events.append((0, note_off(other, channel=voice)))
            else:
                events.append((0, note_on(pitch, channel=voice)))
                events.append((dur, note_off(pitch, channel=voice)))
        tracks.append(events)
    return smf_file(division, tracks, fmt=1)


@pytest.fixture(scope="session")
def chorale_corpus(tmp_path_factory) -> list:
    """Sixty synthetic chorale-like MIDI files on disk."""
    root = tmp_path_factory.mktemp("chorales")
    rng = np.random.default_rng(2024)
    paths = []
    for i in range(60):
        division = (96, 240, 480)[i % 3]
        path = root / f"chorale_{i:03d}.mid"
        path.write_bytes(chorale_like_bytes(rng, division))
        paths.append(path)
    return paths


# ---------------------------------------------------------------------------
# Tiny vocabularies and corpora for model tests.


def tiny_vocabs(n_delta: int = 5, n_duration: int = 5, n_pitch: int = 5) -> Vocabularies:
    return Vocabularies(
        AttributeVocabulary("dT", [Fraction(i, 4) for i in range(n_delta)]),
        AttributeVocabulary("T", [Fraction(i + 1, 4) for i in range(n_duration)]),
        AttributeVocabulary("P", [60 + i for i in range(n_pitch)]),
    )


def desk_model(
    vocabs: Vocabularies | None = None,
    hidden: int = 8,
    latent: int = 4,
    embed: int = 4,
    seed: int = 1,
    dtype=np.float64,
    note_unrolling: bool = True,
    kl_ramp: int = 100,
) -> Model:
    vocabs = tiny_vocabs() if vocabs is None else vocabs
    config = ModelConfig(
        vocab_delta=vocabs.delta.size,
        vocab_duration=vocabs.duration.size,
        vocab_pitch=vocabs.pitch.size,
        hidden_size=hidden,
        latent_dim=latent,
        embed_delta=embed,
        embed_duration=embed,
        embed_pitch=embed,
        note_unrolling=note_unrolling,
        kl_ramp_steps=kl_ramp,
    )
    return Model(config, vocabs, seed=seed, dtype=dtype)


def zero_params(model: Model) -> Model:
    for _, tensor in model.params.items():
        tensor.data[...] = 0.0
    return model


def random_batch(rng: np.random.Generator, model: Model, size: int, length: int) -> Batch:
    c = model.config
    return Batch(
        rng.integers(0, c.vocab_delta, (size, length)),
        rng.integers(0, c.vocab_duration, (size, length)),
        rng.integers(0, c.vocab_pitch, (size, length)),
    )


def overfit_corpus(n_seq: int = 10, length: int = 20, seed: int = 123):
    """Ten memorizable sequences with strong intra-note attribute coupling.

    The duration index equals the offset index and the pitch depends on
    both, so conditioning within a note carries real information; each
    sequence sits in its own register, so the latent code must identify it.
    """
    rng = np.random.default_rng(seed)
    deltas = [Fraction(0), Fraction(1, 4), Fraction(1, 2), Fraction(1, 3)]
    durs = [Fraction(1, 4), Fraction(1, 2), Fraction(1), Fraction(1, 3)]
    raw = []
    for s in range(n_seq):
        base = 48 + 3 * s
        d_idx = rng.integers(0, 4, length)
        d_idx[0] = 0
        t_idx = d_idx.copy()
        p_val = base + (d_idx * 2 + t_idx) % 5
        raw.append((d_idx, t_idx, p_val))
    all_pitches = sorted({int(p) for _, _, pv in raw for p in pv})
    vocabs = Vocabularies(
        AttributeVocabulary("dT", deltas),
        AttributeVocabulary("T", durs),
        AttributeVocabulary("P", all_pitches),
    )
    pitch_index = {v: i for i, v in enumerate(all_pitches)}
    segments = []
    for s, (d, t, pv) in enumerate(raw):
        indexed = IndexedSequence(
            d.astype(np.int64),
            t.astype(np.int64),
            np.array([pitch_index[int(p)] for p in pv], dtype=np.int64),
        )
        segments.append(Segment(indexed, f"overfit/{s}.mid", 0, 0))
    return segments, vocabs


def two_style_corpus(per_style: int = 12, length: int = 20, seed: int = 5):
    """Two synthetically distinct styles: registers and rhythm pools differ."""
    rng = np.random.default_rng(seed)
    deltas = [Fraction(0), Fraction(1, 4), Fraction(1, 2), Fraction(1, 3), Fraction(1)]
    durs = [Fraction(1, 6), Fraction(1, 4), Fraction(1, 2), Fraction(1)]
    pitches = list(range(45, 58)) + list(range(72, 85))
    vocabs = Vocabularies(
        AttributeVocabulary("dT", deltas),
        AttributeVocabulary("T", durs),
        AttributeVocabulary("P", pitches),
    )
    pitch_index = {v: i for i, v in enumerate(pitches)}
    styles = (
        (np.array([0, 1, 4]), np.array([2, 3]), 45, 58),
        (np.array([1, 2, 3]), np.array([0, 1]), 72, 85),
    )
    segments = []
    for style, (d_pool, t_pool, p_lo, p_hi) in enumerate(styles):
        for s in range(per_style):
            d = rng.choice(d_pool, size=length)
            d[0] = 0
            t = rng.choice(t_pool, size=length)
            p = rng.integers(p_lo, p_hi, size=length)
            indexed = IndexedSequence(
                d.astype(np.int64),
                t.astype(np.int64),
                np.array([pitch_index[int(x)] for x in p], dtype=np.int64),
            )
            segments.append(Segment(indexed, f"style{style}/{s}.mid", 0, 0))
    return segments, vocabs


def overfit_model_config(vocabs: Vocabularies, note_unrolling: bool = True, hidden: int = 64,
                         latent: int = 16, kl_ramp: int = 500) -> ModelConfig:
    return ModelConfig(
        vocab_delta=vocabs.delta.size,
        vocab_duration=vocabs.duration.size,
        vocab_pitch=vocabs.pitch.size,
        hidden_size=hidden,
        latent_dim=latent,
        embed_delta=8,
        embed_duration=8,
        embed_pitch=16,
        note_unrolling=note_unrolling,
        kl_ramp_steps=kl_ramp,
    )


@dataclass
class TrainedSetup:
    model: Model
    segments: list[Segment]
    vocabs: Vocabularies
    steps: int
    seconds: float
    accuracy: dict[str, float]


def train_until_accurate(
    model: Model,
    segments: list[Segment],
    kind: ModelKind,
    workdir,
    target: float = 0.99,
    max_steps: int = OVERFIT_MAX_STEPS,
    fixed_steps: int | None = None,
) -> TrainedSetup:
    import time

    batch = Batch.stack([s.indexed for s in segments])
    start = time.perf_counter()
    steps = 0
    latent = "zero" if kind is ModelKind.DECODER_ONLY else "mean"
    accuracy = model.reconstruction_accuracy(batch, latent)
    while steps < (fixed_steps or max_steps):
        chunk = fixed_steps - steps if fixed_steps else min(OVERFIT_CHUNK, max_steps - steps)
        train(
            model, segments, kind,
            seed=42, epochs=steps + chunk, batch_size=len(segments),
            learning_rate=OVERFIT_LR,
            metrics_path=workdir / f"{kind.value}.csv",
            checkpoint_path=workdir / f"{kind.value}.bin",
            start_step=steps, start_epoch=steps,
        )
        steps += chunk
        accuracy = model.reconstruction_accuracy(batch, latent)
        if fixed_steps is None and min(accuracy.values()) >= target:
            break
    return TrainedSetup(
        model, segments, None, steps, time.perf_counter() - start, accuracy
    )


@pytest.fixture(scope="session")
def overfit_vae(tmp_path_factory) -> TrainedSetup:
    """The desk-scale overfit run: proposed model to >= 99% accuracy."""
    segments, vocabs = overfit_corpus()
    workdir = tmp_path_factory.mktemp("overfit_vae")
    model = Model(overfit_model_config(vocabs), vocabs, seed=11, dtype=np.float32)
    setup = train_until_accurate(model, segments, ModelKind.PROPOSED, workdir)
    setup.vocabs = vocabs
    return setup


@pytest.fixture(scope="session")
def overfit_autoencoder(tmp_path_factory, overfit_vae) -> TrainedSetup:
    """The autoencoder baseline at the identical budget as the VAE run."""
    segments, vocabs = overfit_corpus()
    workdir = tmp_path_factory.mktemp("overfit_ae")
    model = Model(overfit_model_config(vocabs), vocabs, seed=11, dtype=np.float32)
    setup = train_until_accurate(
        model, segments, ModelKind.AUTOENCODER, workdir, fixed_steps=overfit_vae.steps
    )
    setup.vocabs = vocabs
    return setup


@pytest.fixture(scope="session")
def style_vae(tmp_path_factory) -> TrainedSetup:
    """A small model trained on the two-style corpus for the PCA criterion."""
    segments, vocabs = two_style_corpus()
    workdir = tmp_path_factory.mktemp("style_vae")
    config = overfit_model_config(vocabs, hidden=32, latent=8, kl_ramp=200)
    model = Model(config, vocabs, seed=3, dtype=np.float32)
    train(
        model, segments, ModelKind.PROPOSED,
        seed=17, epochs=150, batch_size=len(segments), learning_rate=OVERFIT_LR,
        metrics_path=workdir / "style.csv", checkpoint_path=workdir / "style.bin",
    )
    batch = Batch.stack([s.indexed for s in segments])
    accuracy = model.reconstruction_accuracy(batch)
    return TrainedSetup(model, segments, vocabs, 150, 0.0, accuracy)


# ---------------------------------------------------------------------------
# Numerical oracles shared by nn/model tests.


def finite_difference_gradients(
    params: nn.ParamSet, loss_fn, names=None, eps: float = 1e-5
) -> dict[str, np.ndarray]:
    """Central differences of the scalar loss for every parameter entry."""
    grads = {}
    for name, tensor in params.items():
        if names is not None and name not in names:
            continue
        flat = tensor.data.reshape(-1)
        numeric = np.zeros(flat.size)
        for i in range(flat.size):
            saved = flat[i]
            flat[i] = saved + eps
            with nn.no_grad():
                up = loss_fn().item()
            flat[i] = saved - eps
            with nn.no_grad():
                down = loss_fn().item()
            flat[i] = saved
            numeric[i] = (up - down) / (2.0 * eps)
        grads[name] = numeric.reshape(tensor.data.shape)
    return grads


def gradient_mismatch(
    analytic: np.ndarray, numeric: np.ndarray, rel_tol: float = 1e-4, abs_floor: float = 1e-8
) -> float:
    """Worst violation ratio; <= 1 means every entry is inside tolerance.

    An entry passes when |a - n| <= max(rel_tol * max(|a|, |n|), abs_floor);
    the floor keeps finite-difference roundoff on near-zero gradients from
    registering as relative error.
    """
    a = np.asarray(analytic, dtype=np.float64).reshape(-1)
    n = np.asarray(numeric, dtype=np.float64).reshape(-1)
    allowed = np.maximum(rel_tol * np.maximum(np.abs(a), np.abs(n)), abs_floor)
    return float(np.max(np.abs(a - n) / allowed))


def spearman(x, y) -> float:
    """Rank correlation with average ranks for ties."""

    def ranks(values):
        order = np.argsort(values, kind="stable")
        ranked = np.empty(len(values))
        ordered = np.asarray(values, dtype=np.float64)[order]
        i = 0
        while i < len(values):
            j = i
            while j + 1 < len(values) and ordered[j + 1] == ordered[i]:
                j += 1
            ranked[order[i : j + 1]] = (i + j) / 2.0
            i = j + 1
        return ranked

    rx, ry = ranks(x), ranks(y)
    rx -= rx.mean()
    ry -= ry.mean()
    denom = np.sqrt((rx * rx).sum() * (ry * ry).sum())
    return float((rx * ry).sum() / denom) if denom > 0 else 0.0
