"""Operator surface: ingest, train, generate, interpolate, analyze.

Every command is deterministic given the config and seed.  Exit codes:
0 success, 2 configuration error, 3 data error, 4 numerical abort.
"""

from __future__ import annotations

import csv
import functools
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import click
import numpy as np

from . import analysis as ana
from . import baselines, dataset, figures, midi, notes
from .config import ConfigError, RunConfig, load_config
from .model import (
    METRICS_HEADER,
    Model,
    ModelKind,
    TrainingAbort,
    load_checkpoint,
    train,
)

EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4


def worker_count(jobs: int | None = None) -> int:
    """Parallelism cap from MELODIA_THREADS, bounded by the job count."""
    env = os.environ.get("MELODIA_THREADS")
    limit = os.cpu_count() or 1
    if env is not None:
        try:
            limit = max(1, int(env))
        except ValueError:
            raise ConfigError(f"MELODIA_THREADS must be an integer, got {env!r}")
    return max(1, min(limit, jobs if jobs is not None else limit))


def handle_errors(func):
    @functools.wraps(func)
    def wrapper(*args, **kwargs):
        try:
            return func(*args, **kwargs)
        except TrainingAbort as exc:
            click.echo(f"numerical abort: {exc}", err=True)
            sys.exit(EXIT_NUMERIC)
        except ConfigError as exc:
            click.echo(f"config error: {exc}", err=True)
            sys.exit(EXIT_CONFIG)
        except notes.DataError as exc:
            click.echo(f"data error: {exc}", err=True)
            sys.exit(EXIT_DATA)

    return wrapper


@click.group()
@click.option("--config", "config_path", required=True, type=click.Path(), help="Run configuration file.")
@click.option("--seed", type=int, default=None, help="Override the config seed.")
@click.option("--override", "overrides", multiple=True, metavar="KEY=VALUE", help="Override one config key (repeatable).")
@click.pass_context
@handle_errors
def main(ctx: click.Context, config_path: str, seed: int | None, overrides: tuple[str, ...]):
    """Modularized recurrent VAE for polyphonic symbolic music."""
    ctx.obj = load_config(config_path, overrides, seed)


def _parse_file(path: Path) -> tuple[Path, notes.NoteSequence | None, str | None]:
    try:
        parsed = midi.parse_midi(path.read_bytes())
        if not parsed:
            return path, None, "no notes"
        return path, notes.to_note_events(parsed, source_id=str(path)), None
    except (notes.DataError, OSError) as exc:
        return path, None, str(exc)


@main.command()
@click.option("--manifest", required=True, type=click.Path(), help="Text file listing MIDI paths, one per line.")
@click.option("--out-dir", required=True, type=click.Path(), help="Output directory for cache, vocabularies, report.")
@click.pass_obj
@handle_errors
def ingest(cfg: RunConfig, manifest: str, out_dir: str):
    """Build the dataset cache and vocabularies from a MIDI manifest."""
    manifest_path = Path(manifest)
    if not manifest_path.exists():
        raise notes.DataError(f"manifest not found: {manifest_path}")
    paths = [
        Path(line.strip())
        for line in manifest_path.read_text().splitlines()
        if line.strip() and not line.strip().startswith("#")
    ]
    if not paths:
        raise notes.DataError(f"manifest {manifest_path} lists no files")

    with ThreadPoolExecutor(max_workers=worker_count(len(paths))) as pool:
        results = list(pool.map(_parse_file, paths))
    corpus: list[notes.NoteSequence] = []
    failures: list[tuple[Path, str]] = []
    for path, seq, error in results:
        if seq is None:
            failures.append((path, error or "unknown"))
            click.echo(f"warning: skipped {path}: {error}", err=True)
        else:
            corpus.append(seq)
    if not corpus:
        raise notes.DataError("no MIDI file in the manifest could be parsed")

    segments, vocabs = dataset.build_dataset(
        corpus,
        cfg.segment_length,
        cfg.segment_stride,
        cfg.transpose_low,
        cfg.transpose_high,
    )
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    dataset.save_cache(out / "dataset.cache", vocabs, segments)
    for attr, vocab in (("dT", vocabs.delta), ("T", vocabs.duration), ("P", vocabs.pitch)):
        (out / f"vocab_{attr}.tsv").write_text(notes.vocabulary_to_text(vocab))

    by_label: dict[str, int] = {}
    for seq in corpus:
        label = dataset.corpus_label(seq.source_id)
        by_label[label] = by_label.get(label, 0) + 1
    lines = ["ingest report", "=============="]
    for label in sorted(by_label):
        lines.append(f"corpus {label}: {by_label[label]} file(s)")
    lines.append(f"parsed files: {len(corpus)} of {len(paths)} ({len(failures)} skipped)")
    lines.append(f"segments (after augmentation): {len(segments)}")
    lines.append(
        "vocabulary sizes: dT={} T={} P={}".format(*vocabs.sizes())
    )
    report = "\n".join(lines) + "\n"
    (out / "ingest_report.txt").write_text(report)
    click.echo(report, nl=False)


def _read_metrics(path: Path) -> list[tuple[int, float, float, float, float]]:
    rows = []
    with open(path, newline="") as handle:
        reader = csv.reader(handle)
        header = next(reader)
        if tuple(header) != METRICS_HEADER:
            raise notes.DataError(f"{path}: unexpected metrics header {header}")
        for row in reader:
            rows.append((int(row[0]), float(row[1]), float(row[2]), float(row[3]), float(row[4])))
    return rows


@main.command("train")
@click.option("--cache", "cache_path", required=True, type=click.Path(), help="Dataset cache from ingest.")
@click.option("--kind", type=click.Choice([k.value for k in ModelKind]), default="proposed", help="Model variant to train.")
@click.option("--out-dir", required=True, type=click.Path())
@click.option("--resume", "resume_path", type=click.Path(), default=None, help="Checkpoint to resume from.")
@click.pass_obj
@handle_errors
def train_cmd(cfg: RunConfig, cache_path: str, kind: str, out_dir: str, resume_path: str | None):
    """Train the proposed model, the ablation, or a baseline."""
    model_kind = ModelKind(kind)
    if not Path(cache_path).exists():
        raise notes.DataError(f"dataset cache not found: {cache_path}")
    vocabs, segments = dataset.load_cache(cache_path)
    train_segments, held = dataset.split_holdout(segments, cfg.holdout_fraction, cfg.seed)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    unrolling = model_kind is not ModelKind.NO_UNROLLING
    start_step = start_epoch = 0
    if resume_path is not None:
        loaded = load_checkpoint(resume_path)
        if loaded.kind is not model_kind:
            raise notes.DataError(
                f"checkpoint kind {loaded.kind.value} does not match --kind {kind}"
            )
        model = loaded.model
        start_step, start_epoch = loaded.step, loaded.epoch
    else:
        model = Model(
            cfg.model_config(vocabs, unrolling),
            vocabs,
            seed=cfg.seed,
            dtype=np.dtype(cfg.train_dtype),
        )

    if held:
        click.echo(f"holdout: {len(held)} segment(s) excluded from training")
    entry_points = {
        ModelKind.PROPOSED: lambda m, s, **kw: train(m, s, ModelKind.PROPOSED, **kw),
        ModelKind.NO_UNROLLING: baselines.run_ablation,
        ModelKind.DECODER_ONLY: baselines.train_decoder_only,
        ModelKind.AUTOENCODER: baselines.train_autoencoder,
    }
    result = entry_points[model_kind](
        model,
        train_segments,
        seed=cfg.seed,
        epochs=cfg.epochs,
        batch_size=cfg.batch_size,
        learning_rate=cfg.learning_rate,
        rmsprop_decay=cfg.rmsprop_decay,
        rmsprop_eps=cfg.rmsprop_eps,
        metrics_path=out / "metrics.csv",
        checkpoint_path=out / "checkpoint.bin",
        start_step=start_step,
        start_epoch=start_epoch,
        progress=click.echo,
    )
    figures.render_training_metrics(_read_metrics(result.metrics_path), out / "metrics")
    click.echo(
        f"trained {result.steps} step(s); final recon {result.final_recon:.4f},"
        f" kl {result.final_kl:.4f}"
    )


@main.command()
@click.option("--checkpoint", "checkpoint_path", required=True, type=click.Path())
@click.option("--count", type=int, default=1, help="Number of pieces to generate.")
@click.option("--length", type=int, default=None, help="Events per piece (default from the checkpoint).")
@click.option("--mode", type=click.Choice(["sample", "greedy"]), default=None)
@click.option("--out-dir", required=True, type=click.Path())
@click.pass_obj
@handle_errors
def generate(cfg: RunConfig, checkpoint_path: str, count: int, length: int | None, mode: str | None, out_dir: str):
    """Sample latent codes and write generated MIDI files."""
    loaded = load_checkpoint(checkpoint_path)
    model = loaded.model
    mode = mode or cfg.generation_mode
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for i in range(count):
        rng = np.random.default_rng([cfg.seed, 4, i])
        if loaded.kind is ModelKind.DECODER_ONLY:
            z = np.zeros(model.config.latent_dim)
        else:
            z = rng.standard_normal(model.config.latent_dim)
        seq = model.generate(
            z, length=length, mode=mode, temperature=cfg.temperature, rng=rng,
            source_id=f"generated-{i}",
        )
        absolute = notes.to_absolute(seq)
        resolution = midi.default_resolution(absolute)
        target = out / f"gen_{i:03d}.mid"
        target.write_bytes(midi.write_midi(absolute, resolution))
        click.echo(f"wrote {target} ({len(seq)} events)")


def _encode_midi_file(model: Model, path: Path) -> notes.IndexedSequence:
    parsed = midi.parse_midi(path.read_bytes())
    if not parsed:
        raise notes.DataError(f"{path}: no notes")
    seq = notes.to_note_events(parsed, source_id=str(path))
    return notes.encode_indices(seq, model.vocabs)


@main.command()
@click.option("--checkpoint", "checkpoint_path", required=True, type=click.Path())
@click.option("--midi-a", required=True, type=click.Path())
@click.option("--midi-b", required=True, type=click.Path())
@click.option("--steps", type=int, default=None, help="Interpolation points (default from config).")
@click.option("--out-dir", required=True, type=click.Path())
@click.pass_obj
@handle_errors
def interpolate(cfg: RunConfig, checkpoint_path: str, midi_a: str, midi_b: str, steps: int | None, out_dir: str):
    """Walk the latent line between two pieces; write decodes, curve, figure."""
    loaded = load_checkpoint(checkpoint_path)
    model = loaded.model
    steps = steps or cfg.interpolation_steps
    seq_a = _encode_midi_file(model, Path(midi_a))
    seq_b = _encode_midi_file(model, Path(midi_b))
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    length = model.config.max_generate_len
    curve = ana.interpolation_curve(model, seq_a, seq_b, steps, length=length)
    mu_a = model.encode_mean(seq_a)
    mu_b = model.encode_mean(seq_b)
    for i, code in enumerate(ana.interpolate(mu_a, mu_b, steps)):
        seq = model.generate(code, length=length, mode="greedy", source_id=f"interp-{i}")
        absolute = notes.to_absolute(seq)
        target = out / f"interp_{i:03d}.mid"
        target.write_bytes(midi.write_midi(absolute, midi.default_resolution(absolute)))

    with open(out / "curve.csv", "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(("alpha", "distance_to_a", "distance_to_b", "normalized_to_a", "normalized_to_b"))
        for row in ana.curve_rows(curve):
            writer.writerow(tuple(f"{v:.6f}" for v in row))
    written = figures.render_interpolation(curve, out / "curve")
    click.echo(f"wrote {out / 'curve.csv'} and {len(written)} figure file(s)")


@main.command("analyze-latent")
@click.option("--checkpoint", "checkpoint_path", required=True, type=click.Path())
@click.option("--cache", "cache_path", required=True, type=click.Path())
@click.option("--max-points", type=int, default=2000, help="Subsample cap for the projection.")
@click.option("--out-dir", required=True, type=click.Path())
@click.pass_obj
@handle_errors
def analyze_latent(cfg: RunConfig, checkpoint_path: str, cache_path: str, max_points: int, out_dir: str):
    """Project posterior means by corpus with PCA; score the separation."""
    loaded = load_checkpoint(checkpoint_path)
    model = loaded.model
    vocabs, segments = dataset.load_cache(cache_path)
    if vocabs.sizes() != model.vocabs.sizes():
        raise notes.DataError("cache vocabularies do not match the checkpoint")
    if len(segments) > max_points:
        order = np.random.default_rng([cfg.seed, 5]).permutation(len(segments))
        segments = [segments[i] for i in sorted(order[:max_points].tolist())]

    latents = [(model.encode_mean(s.indexed), s.label) for s in segments]
    cloud = ana.pca_project(latents)
    labels = {label for _, label in latents}
    silhouette = ana.cluster_separation(cloud) if len(labels) > 1 else float("nan")

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "latent_pca.csv", "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(("component_1", "component_2", "corpus"))
        for x, y, label in cloud.points:
            writer.writerow((f"{x:.6f}", f"{y:.6f}", label))
    evr = cloud.explained_variance_ratio
    summary = (
        f"points: {len(cloud.points)}\n"
        f"explained variance: {evr[0]:.6f} {evr[1]:.6f}\n"
        f"silhouette: {silhouette:.6f}\n"
    )
    (out / "latent_summary.txt").write_text(summary)
    figures.render_latent_cloud(cloud, silhouette, out / "latent_pca")
    click.echo(summary, nl=False)


if __name__ == "__main__":
    main()
