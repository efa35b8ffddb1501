"""End-to-end orchestration: corpus generation, preparation, training,
synthesis with speaker swapping, FID evaluation, speaker-space export.

A single key=value config file drives every stage; unknown keys are
rejected so typos fail loudly. All stages are deterministic given the
config and the named seeds, and prepare is idempotent (re-running
reproduces byte-identical artifacts).
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import audioio, features, ppcodec, units
from .acoustic import (
    Checkpoint,
    ModelConfig,
    SpeakerTable,
    TrainingExample,
    align_durations,
    load_checkpoint,
    save_checkpoint,
    train,
)
from .errors import ConfigError, UnitsParseError, ValidationError
from .evaluation import (
    GaussianStats,
    RepeatedFid,
    SpeakerProjection,
    gaussian_stats,
    fid,
    project_speakers,
    repeated_fid,
    utterance_feature,
    write_projection_tsv,
)
from .vocoder import HnmConfig, synthesize_hnm


@dataclass
class PipelineConfig:
    workdir: str = "work"
    corpus_dir: str = "corpus"
    seed: int = 0
    corpus_speakers: int = 10
    corpus_clips_per_speaker: int = 2
    corpus_duration_min_s: float = 0.8
    corpus_duration_max_s: float = 1.4
    corpus_bandlimit_fraction: float = 0.5
    corpus_bandlimit_cutoff_hz: float = 8000.0
    prune_silence_dbfs: float = -40.0
    prune_low_volume_dbfs: float = -40.0
    prune_excluded_emotions: str = "Triumph,Horror"
    pitch_f_min_hz: float = 60.0
    pitch_f_max_hz: float = 600.0
    voicing_threshold: float = 0.05
    units_source: str = "mel_kmeans"
    units_import_path: str = ""
    model_embed_dim: int = 64
    model_conv_channels: int = 64
    model_kernel_size: int = 3
    model_dropout: float = 0.1
    model_learning_rate: float = 2e-3
    model_batch_size: int = 4
    model_max_steps: int = 2000
    hnm_max_harmonics: int = 60
    hnm_noise_seed: int = 0
    hnm_voiced_noise_atten_db: float = -12.0
    eval_n_per_eval: int = 20
    eval_repeats: int = 10

    def frame_config(self) -> features.FrameConfig:
        return features.FrameConfig()

    def prune_config(self) -> audioio.PruneConfig:
        excluded = frozenset(
            e.strip() for e in self.prune_excluded_emotions.split(",") if e.strip())
        return audioio.PruneConfig(
            silence_dbfs=self.prune_silence_dbfs,
            low_volume_dbfs=self.prune_low_volume_dbfs,
            excluded_emotions=excluded)

    def corpus_config(self) -> audioio.SynthCorpusConfig:
        return audioio.SynthCorpusConfig(
            n_speakers=self.corpus_speakers,
            clips_per_speaker=self.corpus_clips_per_speaker,
            duration_range_s=(self.corpus_duration_min_s, self.corpus_duration_max_s),
            bandlimit_fraction=self.corpus_bandlimit_fraction,
            bandlimit_cutoff_hz=self.corpus_bandlimit_cutoff_hz)

    def model_config(self, n_speakers: int) -> ModelConfig:
        return ModelConfig(
            embed_dim=self.model_embed_dim,
            conv_channels=self.model_conv_channels,
            kernel_size=self.model_kernel_size,
            n_speakers=n_speakers,
            dropout=self.model_dropout,
            learning_rate=self.model_learning_rate,
            batch_size=self.model_batch_size,
            max_steps=self.model_max_steps)

    def hnm_config(self) -> HnmConfig:
        return HnmConfig(
            max_harmonics=self.hnm_max_harmonics,
            voiced_noise_atten_db=self.hnm_voiced_noise_atten_db)


_CONFIG_KEYS = {
    "workdir": ("workdir", str),
    "corpus_dir": ("corpus_dir", str),
    "seed": ("seed", int),
    "corpus.speakers": ("corpus_speakers", int),
    "corpus.clips_per_speaker": ("corpus_clips_per_speaker", int),
    "corpus.duration_min_s": ("corpus_duration_min_s", float),
    "corpus.duration_max_s": ("corpus_duration_max_s", float),
    "corpus.bandlimit_fraction": ("corpus_bandlimit_fraction", float),
    "corpus.bandlimit_cutoff_hz": ("corpus_bandlimit_cutoff_hz", float),
    "prune.silence_dbfs": ("prune_silence_dbfs", float),
    "prune.low_volume_dbfs": ("prune_low_volume_dbfs", float),
    "prune.excluded_emotions": ("prune_excluded_emotions", str),
    "pitch.f_min_hz": ("pitch_f_min_hz", float),
    "pitch.f_max_hz": ("pitch_f_max_hz", float),
    "pitch.voicing_threshold": ("voicing_threshold", float),
    "units.source": ("units_source", str),
    "units.import_path": ("units_import_path", str),
    "model.embed_dim": ("model_embed_dim", int),
    "model.conv_channels": ("model_conv_channels", int),
    "model.kernel_size": ("model_kernel_size", int),
    "model.dropout": ("model_dropout", float),
    "model.learning_rate": ("model_learning_rate", float),
    "model.batch_size": ("model_batch_size", int),
    "model.max_steps": ("model_max_steps", int),
    "hnm.max_harmonics": ("hnm_max_harmonics", int),
    "hnm.noise_seed": ("hnm_noise_seed", int),
    "hnm.voiced_noise_atten_db": ("hnm_voiced_noise_atten_db", float),
    "eval.n_per_eval": ("eval_n_per_eval", int),
    "eval.repeats": ("eval_repeats", int),
}


def parse_config(path) -> PipelineConfig:
    """Load a UTF-8 key=value config file; unknown keys are errors."""
    path = Path(path)
    overrides = {}
    for lineno, line in enumerate(path.read_text(encoding="utf-8").split("\n"), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{path}: line {lineno}: expected key=value")
        key, raw = (part.strip() for part in line.split("=", 1))
        if key not in _CONFIG_KEYS:
            raise ConfigError(f"{path}: line {lineno}: unknown key {key!r}")
        field, cast = _CONFIG_KEYS[key]
        try:
            overrides[field] = cast(raw)
        except ValueError:
            raise ConfigError(
                f"{path}: line {lineno}: cannot parse {raw!r} as {cast.__name__}"
            ) from None
    return PipelineConfig(**overrides)


def write_config(path, config: PipelineConfig) -> None:
    inverse = {field: key for key, (field, _) in _CONFIG_KEYS.items()}
    lines = [f"{inverse[f.name]}={getattr(config, f.name)}"
             for f in dataclasses.fields(config)]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


# --------------------------------------------------------------------------
# Stage: corpus generation
# --------------------------------------------------------------------------

def gen_corpus(config: PipelineConfig) -> audioio.CorpusManifest:
    manifest, _ = audioio.generate_synthetic_corpus(
        config.corpus_config(), seed=config.seed, out_dir=config.corpus_dir)
    return manifest


# --------------------------------------------------------------------------
# Stage: prepare
# --------------------------------------------------------------------------

MEL_RATE_HZ = 100


@dataclass
class PreparedUtterance:
    pp: ppcodec.PseudoPhonemeSequence
    mel: features.MelSpectrogram
    pitch: features.PitchContour
    speaker_id: str
    emotion: str

    @property
    def aligned_durations(self) -> np.ndarray:
        return align_durations(self.pp, MEL_RATE_HZ, target_frames=self.mel.n_frames)


def dataset_dir(config: PipelineConfig) -> Path:
    return Path(config.workdir) / "dataset"


def prepare(config: PipelineConfig) -> dict:
    """Prune, resample, extract features, discretize, run-length encode.

    Writes MELF/PITF/units/pp artifacts plus a dataset report under
    <workdir>/dataset and returns the report as a dict.
    """
    manifest_path = Path(config.corpus_dir) / "manifest.tsv"
    if not manifest_path.exists():
        raise FileNotFoundError(f"manifest not found: {manifest_path}")
    manifest = audioio.read_manifest(manifest_path)

    clips: dict[str, audioio.AudioClip] = {}
    for entry in sorted(manifest.entries, key=lambda e: e.utterance_id):
        try:
            clips[entry.utterance_id] = audioio.read_wav(
                entry.path, entry.utterance_id, entry.speaker_id, entry.emotion)
        except Exception as exc:
            raise type(exc)(f"utterance {entry.utterance_id!r}: {exc}") from exc
        rate = clips[entry.utterance_id].sample_rate_hz
        if rate not in (48000, 32000, 16000):
            raise ValidationError(
                f"utterance {entry.utterance_id!r}: sample rate {rate} is not "
                "a supported pipeline input rate (48000, 32000, 16000)")

    pruned = audioio.prune_corpus(manifest, config.prune_config(), clips)

    out = dataset_dir(config)
    (out / "mel").mkdir(parents=True, exist_ok=True)
    (out / "pitch").mkdir(parents=True, exist_ok=True)
    audioio.write_manifest(out / "manifest.tsv", pruned)
    audioio.write_prune_log(out / "prune_log.tsv", pruned)

    fc = config.frame_config()
    mels: dict[str, features.MelSpectrogram] = {}
    contours: dict[str, features.PitchContour] = {}
    kept = sorted(pruned.entries, key=lambda e: e.utterance_id)
    for entry in kept:
        clip = audioio.resample(clips[entry.utterance_id], audioio.PIPELINE_RATE_HZ)
        mel = features.analyze_mel(clip.samples, fc)
        contour = features.estimate_pitch(
            clip.samples, fc, config.pitch_f_min_hz, config.pitch_f_max_hz)
        mels[entry.utterance_id] = mel
        contours[entry.utterance_id] = contour
        features.write_melf(out / "mel" / f"{entry.utterance_id}.melf", mel)
        features.write_pitf(out / "pitch" / f"{entry.utterance_id}.pitf", contour)

    if config.units_source == "mel_kmeans":
        all_frames = np.concatenate([mels[e.utterance_id].values for e in kept])
        codebook = units.train_kmeans(all_frames, k=units.N_UNITS, seed=config.seed,
                                      frame_rate_hz=MEL_RATE_HZ)
        np.savez(out / "codebook.npz", centroids=codebook.centroids,
                 frame_rate_hz=codebook.frame_rate_hz)
        unit_seqs = {e.utterance_id: units.quantize(mels[e.utterance_id].values,
                                                    codebook, e.utterance_id)
                     for e in kept}
    elif config.units_source == "import":
        imported = units.import_units(config.units_import_path)
        missing = [e.utterance_id for e in kept if e.utterance_id not in imported]
        if missing:
            raise UnitsParseError(
                f"{config.units_import_path}: no unit rows for utterances {missing}")
        unit_seqs = {e.utterance_id: imported[e.utterance_id] for e in kept}
    else:
        raise ConfigError(f"unknown units.source {config.units_source!r}")

    units.write_units(out / "units.tsv", [unit_seqs[e.utterance_id] for e in kept],
                      frame_rate_hz=unit_seqs[kept[0].utterance_id].frame_rate_hz)

    pps = []
    violations = 0
    for entry in kept:
        pp = ppcodec.rle_encode(unit_seqs[entry.utterance_id])
        pp.speaker_id = entry.speaker_id
        aligned = align_durations(pp, MEL_RATE_HZ,
                                  target_frames=mels[entry.utterance_id].n_frames)
        mel_rows = mels[entry.utterance_id].n_frames
        if int(aligned.sum()) != mel_rows or contours[entry.utterance_id].n_frames != mel_rows:
            violations += 1
        pps.append(pp)
    ppcodec.write_pp_tsv(out / "pp.tsv", pps)

    report = {
        "clips_in": len(manifest.entries),
        "clips_pruned": len(pruned.prune_log),
        "clips_kept": len(kept),
        "total_duration_s": round(sum(e.duration_s for e in kept), 6),
        "n_speakers": len(pruned.speakers()),
        "alignment_violations": violations,
    }
    for speaker in pruned.speakers():
        report[f"speaker_clips.{speaker}"] = sum(
            1 for e in kept if e.speaker_id == speaker)
    lines = [f"{k}\t{v}" for k, v in report.items()]
    (out / "report.tsv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    if violations:
        raise ValidationError(f"{violations} utterances failed duration/mel alignment")
    return report


@dataclass
class Dataset:
    examples: list[TrainingExample]
    speaker_ids: list[str]
    utterances: dict[str, PreparedUtterance]


def load_dataset(config: PipelineConfig) -> Dataset:
    """Materialize training examples from a prepared dataset directory."""
    out = dataset_dir(config)
    manifest = audioio.read_manifest(out / "manifest.tsv")
    pps = ppcodec.read_pp_tsv(out / "pp.tsv")
    by_utt = {pp.utterance_id: pp for pp in pps}
    speaker_ids = manifest.speakers()
    fc = config.frame_config()

    examples = []
    utterances = {}
    for entry in sorted(manifest.entries, key=lambda e: e.utterance_id):
        pp = by_utt[entry.utterance_id]
        mel = features.read_melf(out / "mel" / f"{entry.utterance_id}.melf", fc)
        contour = features.read_pitf(out / "pitch" / f"{entry.utterance_id}.pitf", fc)
        aligned = align_durations(pp, MEL_RATE_HZ, target_frames=mel.n_frames)
        scaled = features.scale_pitch(contour, config.pitch_f_min_hz,
                                      config.pitch_f_max_hz)
        examples.append(TrainingExample(
            units=pp.units, durations=aligned, mel=mel.values, pitch=scaled,
            voiced=contour.voiced, speaker_idx=speaker_ids.index(entry.speaker_id),
            utterance_id=entry.utterance_id))
        utterances[entry.utterance_id] = PreparedUtterance(
            pp=pp, mel=mel, pitch=contour, speaker_id=entry.speaker_id,
            emotion=entry.emotion)
    return Dataset(examples=examples, speaker_ids=speaker_ids, utterances=utterances)


# --------------------------------------------------------------------------
# Stage: train
# --------------------------------------------------------------------------

def checkpoint_path(config: PipelineConfig) -> Path:
    return Path(config.workdir) / "checkpoints" / "acoustic.nsvm"


def train_pipeline(config: PipelineConfig) -> Checkpoint:
    dataset = load_dataset(config)
    model_config = config.model_config(n_speakers=len(dataset.speaker_ids))
    result = train(dataset.examples, model_config, seed=config.seed,
                   speaker_ids=dataset.speaker_ids)
    ckpt = Checkpoint(params=result.model.params, config=model_config,
                      speaker_ids=dataset.speaker_ids, seed=config.seed)
    path = checkpoint_path(config)
    path.parent.mkdir(parents=True, exist_ok=True)
    save_checkpoint(path, ckpt)
    curve_lines = ["step\ttotal\tmel_l1\tpitch_mse\tdur_mse"]
    curve_lines += ["\t".join(f"{v:.9g}" for v in row) for row in result.loss_curve]
    (Path(config.workdir) / "loss_curve.tsv").write_text(
        "\n".join(curve_lines) + "\n", encoding="utf-8")
    return ckpt


# --------------------------------------------------------------------------
# Stage: synthesize
# --------------------------------------------------------------------------

@dataclass
class SynthesisRecord:
    clip: audioio.AudioClip
    pp_text: str
    durations: np.ndarray
    speaker_id: str


def synthesize_utterance(ckpt: Checkpoint, pp: ppcodec.PseudoPhonemeSequence,
                         speaker_id: str, config: PipelineConfig,
                         noise_seed: int = 0,
                         use_gt_durations: bool = False) -> SynthesisRecord:
    """Acoustic inference plus vocoding for one pseudo-phoneme sequence."""
    model = ckpt.model()
    table = SpeakerTable(ids=ckpt.speaker_ids,
                         embeddings=ckpt.params["speaker_embed"])
    speaker_idx = table.index_of(speaker_id)
    durations = align_durations(pp, MEL_RATE_HZ) if use_gt_durations else None
    out, _ = model.forward(pp.units, speaker_idx, durations=durations)

    fc = config.frame_config()
    mel = features.MelSpectrogram(values=out.mel_pred, frame_config=fc)
    voiced = out.pitch_pred >= config.voicing_threshold
    f0 = np.where(voiced, features.unscale_pitch(
        out.pitch_pred, config.pitch_f_min_hz, config.pitch_f_max_hz), 0.0)
    contour = features.PitchContour(f0_hz=f0, voiced=voiced, frame_config=fc)

    clip = synthesize_hnm(mel, contour, config.hnm_config(), noise_seed=noise_seed,
                          utterance_id=pp.utterance_id or "synth",
                          speaker_id=speaker_id)
    return SynthesisRecord(clip=clip, pp_text=ppcodec.to_text(pp),
                           durations=out.durations, speaker_id=speaker_id)


def write_sidecar(path, record: SynthesisRecord) -> None:
    lines = ["utterance_id\tspeaker_id\tpp_text\tdurations\tframes",
             "\t".join([record.clip.utterance_id, record.speaker_id, record.pp_text,
                        ",".join(str(int(d)) for d in record.durations),
                        str(int(record.durations.sum()))])]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


# --------------------------------------------------------------------------
# Stage: evaluate
# --------------------------------------------------------------------------

def reference_stats_by_emotion(utterances: dict[str, PreparedUtterance]
                               ) -> dict[str, GaussianStats]:
    feats: dict[str, list[np.ndarray]] = {}
    for prepared in utterances.values():
        feats.setdefault(prepared.emotion, []).append(utterance_feature(prepared.mel))
    return {emotion: gaussian_stats(np.stack(rows))
            for emotion, rows in feats.items() if len(rows) >= 2}


def evaluate_pipeline(config: PipelineConfig, ckpt: Checkpoint,
                      reference: Dataset | None = None,
                      n_per_eval: int | None = None,
                      repeats: int | None = None) -> list[dict]:
    """Emotion-conditional repeated-FID report for speaker-swapped syntheses.

    The reference defaults to the prepared training dataset itself; rows
    include a train-vs-reference baseline per emotion.
    """
    n = config.eval_n_per_eval if n_per_eval is None else n_per_eval
    reps = config.eval_repeats if repeats is None else repeats
    dataset = load_dataset(config)
    ref = dataset if reference is None else reference
    ref_stats = reference_stats_by_emotion(ref.utterances)

    rows: list[dict] = []
    for emotion in sorted(ref_stats):
        pool = [(utt, p) for utt, p in sorted(dataset.utterances.items())
                if p.emotion == emotion]
        if not pool:
            continue
        train_feats = np.stack([utterance_feature(p.mel) for _, p in pool])
        if len(train_feats) >= 2:
            baseline = fid(gaussian_stats(train_feats), ref_stats[emotion])
            rows.append(dict(set="train-baseline", emotion=emotion,
                             n=len(train_feats), repeats=1,
                             fid_mean=baseline, fid_std=0.0))

        def draw(count, rng, pool=pool):
            feats = []
            for _ in range(count):
                _, prepared = pool[rng.integers(len(pool))]
                others = [s for s in dataset.speaker_ids if s != prepared.speaker_id]
                speaker = others[rng.integers(len(others))] if others \
                    else prepared.speaker_id
                record = synthesize_utterance(
                    ckpt, prepared.pp, speaker, config,
                    noise_seed=int(rng.integers(2 ** 31)))
                mel = features.analyze_mel(record.clip.samples, config.frame_config())
                feats.append(utterance_feature(mel))
            return np.stack(feats)

        result: RepeatedFid = repeated_fid(draw, ref_stats[emotion], n_per_eval=n,
                                           repeats=reps, seed=config.seed)
        rows.append(dict(set=f"synthesized-{n}", emotion=emotion, n=n, repeats=reps,
                         fid_mean=result.mean, fid_std=result.std))
    return rows


def write_fid_report(path, rows: list[dict]) -> None:
    lines = ["set\temotion\tn\trepeats\tfid_mean\tfid_std"]
    for row in rows:
        lines.append("\t".join([
            str(row["set"]), str(row["emotion"]), str(row["n"]),
            str(row["repeats"]), f"{row['fid_mean']:.6f}", f"{row['fid_std']:.6f}"]))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


# --------------------------------------------------------------------------
# Stage: speaker-space analysis
# --------------------------------------------------------------------------

def analyze_speakers(ckpt: Checkpoint, out_path) -> SpeakerProjection:
    table = SpeakerTable(ids=ckpt.speaker_ids,
                         embeddings=ckpt.params["speaker_embed"])
    projection = project_speakers(table)
    Path(out_path).parent.mkdir(parents=True, exist_ok=True)
    write_projection_tsv(out_path, projection)
    return projection


# re-exported for callers that start from a checkpoint file on disk
__all__ = [
    "Dataset",
    "PipelineConfig",
    "PreparedUtterance",
    "SynthesisRecord",
    "analyze_speakers",
    "checkpoint_path",
    "dataset_dir",
    "evaluate_pipeline",
    "gen_corpus",
    "load_checkpoint",
    "load_dataset",
    "parse_config",
    "prepare",
    "synthesize_utterance",
    "train_pipeline",
    "write_config",
    "write_fid_report",
    "write_sidecar",
]
