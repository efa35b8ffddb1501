"""Audio ingestion: WAV read/write, resampling, corpus pruning, synthetic corpora.

The corpus on disk is a directory of mono WAV files plus a UTF-8 TSV manifest
(columns: utterance_id, speaker_id, emotion, path, duration_s). Pruning
writes a companion TSV log with one (utterance_id, reason) row per removal.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.signal import firwin, kaiserord, resample_poly

from .errors import (
    AudioDecodeError,
    EmptyClipError,
    EmptyCorpusError,
    UnsupportedFormatError,
    ValidationError,
)

PIPELINE_RATE_HZ = 32000

EMOTION_LABELS = (
    "Amusement",
    "Awe",
    "Awkward",
    "Distress",
    "Excitement",
    "Fear",
    "Sadness",
    "Surprise",
    "Horror",
    "Triumph",
)
SYNTHETIC_EMOTION = "synthetic"

_WAVE_PCM = 1
_WAVE_FLOAT = 3


@dataclass
class AudioClip:
    """Mono sample buffer in [-1, 1] with utterance metadata."""

    samples: np.ndarray
    sample_rate_hz: int
    utterance_id: str = ""
    speaker_id: str = ""
    emotion: str = SYNTHETIC_EMOTION

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1 or self.samples.size == 0:
            raise ValidationError("AudioClip requires a nonempty 1-D sample buffer")
        if not np.all(np.isfinite(self.samples)):
            raise ValidationError("AudioClip samples must be finite")
        if np.max(np.abs(self.samples)) > 1.0 + 1e-9:
            raise ValidationError("AudioClip samples must lie in [-1, 1]")
        if self.sample_rate_hz <= 0:
            raise ValidationError("sample_rate_hz must be positive")
        if self.emotion not in EMOTION_LABELS and self.emotion != SYNTHETIC_EMOTION:
            raise ValidationError(f"unknown emotion label {self.emotion!r}")

    @property
    def duration_s(self) -> float:
        return len(self.samples) / self.sample_rate_hz

    def rms_dbfs(self) -> float:
        """Root-mean-square level relative to full scale, in dB."""
        rms = float(np.sqrt(np.mean(np.square(self.samples))))
        if rms <= 0.0:
            return -np.inf
        return 20.0 * math.log10(rms)


@dataclass(frozen=True)
class ManifestEntry:
    utterance_id: str
    speaker_id: str
    emotion: str
    path: str
    duration_s: float


@dataclass
class CorpusManifest:
    entries: list[ManifestEntry]
    prune_log: list[tuple[str, str]] = field(default_factory=list)

    def __post_init__(self):
        ids = [e.utterance_id for e in self.entries]
        if len(set(ids)) != len(ids):
            dup = sorted({u for u in ids if ids.count(u) > 1})
            raise ValidationError(f"duplicate utterance ids in manifest: {dup}")

    def speakers(self) -> list[str]:
        return sorted({e.speaker_id for e in self.entries})


@dataclass(frozen=True)
class PruneConfig:
    """Corpus pruning rules; thresholds are clip RMS in dBFS."""

    silence_dbfs: float = -40.0
    low_volume_dbfs: float = -40.0
    excluded_emotions: frozenset[str] = frozenset({"Triumph", "Horror"})


# --------------------------------------------------------------------------
# WAV container
# --------------------------------------------------------------------------

def read_wav(path, utterance_id: str | None = None, speaker_id: str = "",
             emotion: str = SYNTHETIC_EMOTION) -> AudioClip:
    """Read a RIFF/WAVE file (PCM16 or IEEE float32) as a mono AudioClip.

    Multi-channel audio is mixed down by averaging. Metadata defaults to the
    filename stem; callers holding a manifest pass the real ids through.
    """
    path = Path(path)
    data = path.read_bytes()
    if len(data) < 12:
        raise AudioDecodeError(f"{path}: truncated RIFF header at offset 0")
    if data[0:4] != b"RIFF":
        raise AudioDecodeError(f"{path}: bad RIFF magic at offset 0")
    if data[8:12] != b"WAVE":
        raise AudioDecodeError(f"{path}: bad WAVE magic at offset 8")

    fmt = None
    payload = None
    pos = 12
    while pos + 8 <= len(data):
        cid = data[pos:pos + 4]
        (size,) = struct.unpack_from("<I", data, pos + 4)
        body = data[pos + 8:pos + 8 + size]
        if len(body) < size:
            raise AudioDecodeError(
                f"{path}: chunk {cid!r} at offset {pos} claims {size} bytes, "
                f"only {len(body)} present")
        if cid == b"fmt ":
            if size < 16:
                raise AudioDecodeError(f"{path}: short fmt chunk at offset {pos}")
            fmt = struct.unpack_from("<HHIIHH", body, 0)
        elif cid == b"data":
            payload = body
        pos += 8 + size + (size & 1)  # chunks are word-aligned

    if fmt is None:
        raise AudioDecodeError(f"{path}: missing fmt chunk")
    if payload is None:
        raise AudioDecodeError(f"{path}: missing data chunk")

    codec, n_channels, rate, _, _, bits = fmt
    if n_channels < 1:
        raise AudioDecodeError(f"{path}: fmt declares zero channels")
    if codec == _WAVE_PCM and bits == 16:
        raw = np.frombuffer(payload[:len(payload) // 2 * 2], dtype="<i2")
        samples = raw.astype(np.float64) / 32768.0
    elif codec == _WAVE_FLOAT and bits == 32:
        raw = np.frombuffer(payload[:len(payload) // 4 * 4], dtype="<f4")
        samples = raw.astype(np.float64)
    else:
        raise UnsupportedFormatError(
            f"{path}: unsupported codec tag {codec} / {bits}-bit "
            "(PCM 16-bit and IEEE float 32-bit are supported)")

    if n_channels > 1:
        usable = len(samples) // n_channels * n_channels
        samples = samples[:usable].reshape(-1, n_channels).mean(axis=1)
    if samples.size == 0:
        raise EmptyClipError(f"{path}: data chunk holds zero samples")
    if not np.all(np.isfinite(samples)):
        raise AudioDecodeError(f"{path}: non-finite sample values")
    samples = np.clip(samples, -1.0, 1.0)

    return AudioClip(
        samples=samples,
        sample_rate_hz=int(rate),
        utterance_id=path.stem if utterance_id is None else utterance_id,
        speaker_id=speaker_id,
        emotion=emotion,
    )


def write_wav(path, clip: AudioClip, fmt: str = "pcm16") -> None:
    """Write an AudioClip as RIFF/WAVE (little-endian PCM16 or float32)."""
    if fmt == "pcm16":
        codec, bits = _WAVE_PCM, 16
        payload = np.clip(np.rint(clip.samples * 32767.0), -32768, 32767) \
            .astype("<i2").tobytes()
    elif fmt == "float32":
        codec, bits = _WAVE_FLOAT, 32
        payload = clip.samples.astype("<f4").tobytes()
    else:
        raise ValidationError(f"unknown wav format {fmt!r}")

    block = bits // 8
    header = struct.pack(
        "<4sI4s4sIHHIIHH4sI",
        b"RIFF", 36 + len(payload), b"WAVE",
        b"fmt ", 16, codec, 1, clip.sample_rate_hz,
        clip.sample_rate_hz * block, block, bits,
        b"data", len(payload),
    )
    Path(path).write_bytes(header + payload)


# --------------------------------------------------------------------------
# Resampling
# --------------------------------------------------------------------------

def resample(clip: AudioClip, target_rate_hz: int) -> AudioClip:
    """Band-limited rational resampling to target_rate_hz.

    Output length is round(n * target / source). The anti-alias FIR is a
    Kaiser design with >= 80 dB stopband, so content above the lower of the
    two Nyquist frequencies is attenuated well past 60 dB.
    """
    if target_rate_hz <= 0:
        raise ValidationError("target_rate_hz must be positive")
    src = clip.sample_rate_hz
    if target_rate_hz == src:
        return replace(clip, samples=clip.samples.copy())

    g = math.gcd(src, target_rate_hz)
    up, down = target_rate_hz // g, src // g
    fs_up = src * up
    f_nyq = min(src, target_rate_hz) / 2.0
    trans = 0.10 * f_nyq
    numtaps, beta = kaiserord(85.0, trans / (0.5 * fs_up))
    numtaps |= 1
    fir = firwin(numtaps, f_nyq - trans / 2.0, window=("kaiser", beta), fs=fs_up)

    out = resample_poly(clip.samples, up, down, window=fir)
    n_target = int(round(len(clip.samples) * target_rate_hz / src))
    if len(out) > n_target:
        out = out[:n_target]
    elif len(out) < n_target:
        out = np.pad(out, (0, n_target - len(out)))
    out = np.clip(out, -1.0, 1.0)  # Gibbs overshoot guard
    return replace(clip, samples=out, sample_rate_hz=target_rate_hz)


# --------------------------------------------------------------------------
# Manifest I/O
# --------------------------------------------------------------------------

_MANIFEST_COLUMNS = ("utterance_id", "speaker_id", "emotion", "path", "duration_s")


def write_manifest(path, manifest: CorpusManifest) -> None:
    lines = ["\t".join(_MANIFEST_COLUMNS)]
    for e in manifest.entries:
        lines.append("\t".join(
            [e.utterance_id, e.speaker_id, e.emotion, e.path, f"{e.duration_s:.6f}"]))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def write_prune_log(path, manifest: CorpusManifest) -> None:
    lines = ["\t".join(("utterance_id", "reason"))]
    for utt, reason in manifest.prune_log:
        lines.append(f"{utt}\t{reason}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_manifest(path) -> CorpusManifest:
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    lines = [ln for ln in text.split("\n") if ln.strip()]
    if not lines or tuple(lines[0].split("\t")) != _MANIFEST_COLUMNS:
        raise ValidationError(f"{path}: missing manifest header row")
    entries = []
    for i, ln in enumerate(lines[1:], start=2):
        cols = ln.split("\t")
        if len(cols) != 5:
            raise ValidationError(f"{path}: line {i}: expected 5 columns, got {len(cols)}")
        entries.append(ManifestEntry(cols[0], cols[1], cols[2], cols[3], float(cols[4])))
    return CorpusManifest(entries=entries)


# --------------------------------------------------------------------------
# Pruning
# --------------------------------------------------------------------------

def prune_corpus(manifest: CorpusManifest, rules: PruneConfig,
                 clips: dict[str, AudioClip] | None = None) -> CorpusManifest:
    """Apply the corpus pruning rules and return a new manifest.

    Rule order matters for the logged reason: the speaker-level low-volume
    rule is decided on the incoming manifest first, then per-clip silence,
    then excluded emotion labels. Idempotent: pruning a pruned manifest
    removes nothing further.
    """
    if clips is None:
        clips = {e.utterance_id: read_wav(e.path, e.utterance_id, e.speaker_id, e.emotion)
                 for e in manifest.entries}

    levels = {}
    for e in manifest.entries:
        if e.utterance_id not in clips:
            raise ValidationError(f"no audio provided for utterance {e.utterance_id!r}")
        levels[e.utterance_id] = clips[e.utterance_id].rms_dbfs()

    by_speaker: dict[str, list[ManifestEntry]] = {}
    for e in manifest.entries:
        by_speaker.setdefault(e.speaker_id, []).append(e)
    quiet_speakers = {
        spk for spk, es in by_speaker.items()
        if all(levels[e.utterance_id] < rules.low_volume_dbfs for e in es)
    }

    kept: list[ManifestEntry] = []
    log: list[tuple[str, str]] = []
    for e in manifest.entries:
        if e.speaker_id in quiet_speakers:
            log.append((e.utterance_id, "low-volume-speaker"))
        elif levels[e.utterance_id] < rules.silence_dbfs:
            log.append((e.utterance_id, "silent"))
        elif e.emotion in rules.excluded_emotions:
            log.append((e.utterance_id, "excluded-emotion"))
        else:
            kept.append(e)

    if not kept:
        raise EmptyCorpusError("pruning removed every clip in the corpus")
    return CorpusManifest(entries=kept, prune_log=list(manifest.prune_log) + log)


# --------------------------------------------------------------------------
# Synthetic corpus generation
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class SynthCorpusConfig:
    """Shape of a generated stand-in corpus of laughter-like vocalizations.

    Clips are burst trains: short voiced segments (harmonic source shaped by
    per-speaker formant-like resonances) alternating with gaps and one
    breath-noise inhale. A configurable fraction of speakers is low-passed
    to emulate band-limited recording conditions.
    """

    n_speakers: int = 5
    clips_per_speaker: int = 4
    duration_range_s: tuple[float, float] = (0.8, 1.6)
    sample_rate_hz: int = PIPELINE_RATE_HZ
    base_f0_range_hz: tuple[float, float] = (150.0, 320.0)
    timbre_spread: float = 1.0  # scales per-speaker formant scatter
    breath_level: float = 0.015  # broadband floor; what a lowpass removes
    bandlimit_fraction: float = 0.0
    bandlimit_cutoff_hz: float = 8000.0
    emotion: str = SYNTHETIC_EMOTION

    def __post_init__(self):
        lo, hi = self.duration_range_s
        if lo > hi:
            raise ValidationError(f"inverted duration range ({lo}, {hi})")
        if lo <= 0:
            raise ValidationError("clip durations must be positive")
        if not 0.0 <= self.bandlimit_fraction <= 1.0:
            raise ValidationError("bandlimit_fraction must lie in [0, 1]")


@dataclass(frozen=True)
class _SpeakerVoice:
    speaker_id: str
    base_f0_hz: float
    formants_hz: tuple[float, float, float]
    breathiness: float
    bandlimited: bool


def _formant_envelope(freqs_hz: np.ndarray, voice: _SpeakerVoice) -> np.ndarray:
    env = 1.0 / (1.0 + (freqs_hz / 600.0) ** 2)
    for j, fc in enumerate(voice.formants_hz):
        width = 80.0 + 60.0 * j
        env = env + (0.9 / (j + 1)) * np.exp(-0.5 * ((freqs_hz - fc) / width) ** 2)
    return env


def _voiced_burst(n: int, f0_start: float, f0_end: float, voice: _SpeakerVoice,
                  fs: int, rng: np.random.Generator) -> np.ndarray:
    t = np.arange(n) / fs
    f0 = np.linspace(f0_start, f0_end, n)
    phase = 2.0 * np.pi * np.cumsum(f0) / fs
    out = np.zeros(n)
    k_max = int(min(60, math.floor((fs / 2 - 100.0) / max(f0_end, f0_start))))
    amps = _formant_envelope(np.arange(1, k_max + 1) * voice.base_f0_hz, voice)
    for k in range(1, k_max + 1):
        out += amps[k - 1] * np.sin(k * phase)
    # raised-cosine attack/decay keeps burst edges click-free
    edge = max(4, int(0.012 * fs))
    ramp = 0.5 - 0.5 * np.cos(np.pi * np.arange(edge) / edge)
    shape = np.ones(n)
    shape[:edge] *= ramp
    shape[-edge:] *= ramp[::-1]
    out *= shape * (0.6 + 0.1 * np.sin(2 * np.pi * 3.0 * t))
    out += voice.breathiness * 0.02 * rng.standard_normal(n)
    return out


def _breath_noise(n: int, voice: _SpeakerVoice, rng: np.random.Generator) -> np.ndarray:
    noise = rng.standard_normal(n)
    kernel = np.array([1.0, -0.92])  # first-difference tilt toward high band
    shaped = np.convolve(noise, kernel, mode="same")
    edge = max(4, n // 4)
    ramp = np.linspace(0.0, 1.0, edge)
    shape = np.ones(n)
    shape[:edge] *= ramp
    shape[-edge:] *= ramp[::-1]
    return 0.08 * (0.5 + voice.breathiness) * shaped * shape


def _lowpass(x: np.ndarray, cutoff_hz: float, fs: int) -> np.ndarray:
    numtaps, beta = kaiserord(70.0, (0.15 * cutoff_hz) / (0.5 * fs))
    numtaps |= 1
    fir = firwin(numtaps, cutoff_hz, window=("kaiser", beta), fs=fs)
    return np.convolve(x, fir, mode="same")


def _speaker_voices(spec: SynthCorpusConfig, rng: np.random.Generator) -> list[_SpeakerVoice]:
    lo, hi = spec.base_f0_range_hz
    base = np.linspace(lo, hi, spec.n_speakers) if spec.n_speakers > 1 else np.array([(lo + hi) / 2])
    n_band = int(round(spec.bandlimit_fraction * spec.n_speakers))
    centers = (700.0, 1450.0, 2750.0)
    widths = (200.0, 350.0, 450.0)
    voices = []
    for i in range(spec.n_speakers):
        f0 = float(base[i] * (1.0 + 0.03 * rng.uniform(-1, 1)))
        formants = tuple(
            float(c + spec.timbre_spread * rng.uniform(-w, w))
            for c, w in zip(centers, widths))
        voices.append(_SpeakerVoice(
            speaker_id=f"spk{i:03d}",
            base_f0_hz=f0,
            formants_hz=formants,
            breathiness=float(rng.uniform(0.3, 1.0)),
            bandlimited=i < n_band,
        ))
    return voices


def _render_clip(voice: _SpeakerVoice, duration_s: float, spec: SynthCorpusConfig,
                 rng: np.random.Generator) -> np.ndarray:
    fs = spec.sample_rate_hz
    n_total = int(round(duration_s * fs))
    pieces: list[np.ndarray] = []
    n_done = 0
    burst_idx = 0
    inhale_done = False
    min_burst = int(0.08 * fs)
    while n_done < n_total:
        if burst_idx >= 2 and not inhale_done:
            n = min(int(rng.uniform(0.12, 0.22) * fs), n_total - n_done)
            if n > 16:
                pieces.append(_breath_noise(n, voice, rng))
                n_done += n
            inhale_done = True
            continue
        n_burst = int(rng.uniform(0.08, 0.16) * fs)
        n_gap = int(rng.uniform(0.03, 0.08) * fs)
        if n_done + n_burst > n_total:
            n_burst = n_total - n_done
        if n_burst >= min_burst or burst_idx < 2:
            n_burst = max(n_burst, min_burst)
            f0 = voice.base_f0_hz * (1.0 + 0.15 * rng.uniform(-1, 1))
            pieces.append(_voiced_burst(n_burst, f0 * 1.05, f0 * 0.9, voice, fs, rng))
            n_done += n_burst
            burst_idx += 1
        n_gap = min(n_gap, max(0, n_total - n_done))
        if n_gap > 0:
            pieces.append(np.zeros(n_gap))
            n_done += n_gap

    x = np.concatenate(pieces)[:n_total]
    if len(x) < n_total:
        x = np.pad(x, (0, n_total - len(x)))
    # broadband breath floor gives fullband speakers visible energy above 8 kHz
    x = x + spec.breath_level * rng.standard_normal(n_total)
    if voice.bandlimited:
        x = _lowpass(x, spec.bandlimit_cutoff_hz, fs)
    peak = np.max(np.abs(x))
    x = x * (0.7 / peak) if peak > 0 else x
    return x


def generate_synthetic_corpus(spec: SynthCorpusConfig, seed: int,
                              out_dir) -> tuple[CorpusManifest, dict[str, AudioClip]]:
    """Render a deterministic synthetic corpus to out_dir and return it.

    Pure function of (spec, seed): clip waveforms, file bytes, and manifest
    are identical across runs. Every clip contains at least two voiced
    bursts.
    """
    if spec.clips_per_speaker <= 0 or spec.n_speakers <= 0:
        raise EmptyCorpusError("corpus spec yields zero clips")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    rng = np.random.default_rng(seed)
    voices = _speaker_voices(spec, rng)

    entries: list[ManifestEntry] = []
    clips: dict[str, AudioClip] = {}
    lo, hi = spec.duration_range_s
    for voice in voices:
        for c in range(spec.clips_per_speaker):
            utt = f"{voice.speaker_id}_{c:03d}"
            duration = float(rng.uniform(lo, hi))
            samples = _render_clip(voice, duration, spec, rng)
            clip = AudioClip(
                samples=samples,
                sample_rate_hz=spec.sample_rate_hz,
                utterance_id=utt,
                speaker_id=voice.speaker_id,
                emotion=spec.emotion,
            )
            wav_path = out_dir / f"{utt}.wav"
            write_wav(wav_path, clip)
            clips[utt] = clip
            entries.append(ManifestEntry(
                utterance_id=utt,
                speaker_id=voice.speaker_id,
                emotion=spec.emotion,
                path=str(wav_path),
                duration_s=clip.duration_s,
            ))

    manifest = CorpusManifest(entries=entries)
    write_manifest(out_dir / "manifest.tsv", manifest)
    return manifest, clips
