"""Deterministic harmonic-plus-noise vocoder.

The harmonic branch is a phase-continuous oscillator bank driven by the
pitch contour, with per-harmonic amplitudes sampled from the linear-
frequency envelope recovered from the mel spectrogram (filterbank
pseudo-inverse, clamped nonnegative). The noise branch shapes seeded white
noise to the same envelope frame by frame and overlap-adds it. Output is
exactly the sum of the two branches before peak normalization.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .audioio import AudioClip
from .errors import ValidationError
from .features import MelSpectrogram, PitchContour, _hann_periodic, mel_filterbank


@dataclass(frozen=True)
class HnmConfig:
    sample_rate_hz: int = 32000
    max_harmonics: int = 60
    harmonic_gain: float = 1.0
    noise_gain: float = 1.0
    voiced_noise_atten_db: float = -12.0
    voicing_fade_ms: float = 5.0

    def __post_init__(self):
        if self.max_harmonics < 1:
            raise ValidationError("max_harmonics must be >= 1")
        if self.voicing_fade_ms < 0:
            raise ValidationError("voicing_fade_ms must be nonnegative")


@lru_cache(maxsize=4)
def _filterbank_pinv(n_mels: int, fft_size: int, sample_rate_hz: int) -> np.ndarray:
    fb = mel_filterbank(n_mels, fft_size, sample_rate_hz)
    return np.linalg.pinv(fb)


def mel_to_linear_envelope(mel: MelSpectrogram) -> np.ndarray:
    """Per-frame linear-frequency magnitude envelope (frames x fft bins)."""
    cfg = mel.frame_config
    pinv = _filterbank_pinv(mel.n_mels, cfg.fft_size, cfg.sample_rate_hz)
    return np.clip(np.exp(mel.values) @ pinv.T, 0.0, None)


def _check_pair(mel: MelSpectrogram, pitch: PitchContour) -> None:
    if mel.n_frames != pitch.n_frames:
        raise ValidationError(
            f"mel has {mel.n_frames} frames but pitch has {pitch.n_frames}")


def _voicing_gate(voiced: np.ndarray, hop: int, n_samples: int,
                  fade_samples: int) -> np.ndarray:
    """Per-sample 0/1 gate from per-frame flags, with linear boundary ramps."""
    frame_of = np.clip(np.round(np.arange(n_samples) / hop).astype(int),
                       0, len(voiced) - 1)
    gate = voiced[frame_of].astype(np.float64)
    if fade_samples < 1:
        return gate
    ramp = np.arange(1, fade_samples + 1) / fade_samples
    edges = np.flatnonzero(np.diff(np.concatenate([[0.0], gate, [0.0]])))
    for a, b in zip(edges[0::2], edges[1::2]):  # voiced run is [a, b)
        n = min(fade_samples, b - a)
        gate[a:a + n] = np.minimum(gate[a:a + n], ramp[:n])
        gate[b - n:b] = np.minimum(gate[b - n:b], ramp[:n][::-1])
    return gate


def harmonic_component(pitch: PitchContour, mel: MelSpectrogram,
                       cfg: HnmConfig = HnmConfig()) -> np.ndarray:
    """Oscillator-bank sum of harmonics k*f0 below Nyquist."""
    _check_pair(mel, pitch)
    fc = mel.frame_config
    fs = cfg.sample_rate_hz
    hop = fc.hop_samples
    n_frames = mel.n_frames
    n_samples = n_frames * hop
    if not pitch.voiced.any():
        return np.zeros(n_samples)

    centers = np.arange(n_frames) * hop
    voiced_idx = np.flatnonzero(pitch.voiced)
    f0_frame = np.interp(np.arange(n_frames), voiced_idx, pitch.f0_hz[voiced_idx])
    sample_pos = np.arange(n_samples)
    f0_samp = np.interp(sample_pos, centers[voiced_idx], pitch.f0_hz[voiced_idx])

    nyquist = fs / 2.0
    k_max = min(cfg.max_harmonics, int(nyquist / max(f0_frame.min(), 1.0)))
    k_max = max(k_max, 1)

    # per-frame amplitude of harmonic k: envelope sampled at k*f0, zero above Nyquist
    env = mel_to_linear_envelope(mel)
    bin_step = fs / fc.fft_size
    ks = np.arange(1, k_max + 1)
    freq = f0_frame[:, None] * ks[None, :]
    pos = np.clip(freq / bin_step, 0.0, env.shape[1] - 1.000001)
    i0 = pos.astype(int)
    w = pos - i0
    amp_frame = (np.take_along_axis(env, i0, axis=1) * (1.0 - w)
                 + np.take_along_axis(env, i0 + 1, axis=1) * w)
    amp_frame[freq >= nyquist] = 0.0

    # STFT magnitude of a unit sine is ~ sum(window)/2; invert that scale
    amp_scale = cfg.harmonic_gain * 2.0 / _hann_periodic(fc.win_samples).sum()
    fade = int(round(cfg.voicing_fade_ms * fs / 1000.0))
    gate = _voicing_gate(pitch.voiced, hop, n_samples, fade)

    phase = 2.0 * np.pi * np.cumsum(f0_samp) / fs
    out = np.zeros(n_samples)
    for j, k in enumerate(ks):
        a = np.interp(sample_pos, centers, amp_frame[:, j])
        a *= k * f0_samp < nyquist
        out += a * np.sin(k * phase)
    return out * gate * amp_scale


def noise_component(mel: MelSpectrogram, pitch: PitchContour,
                    cfg: HnmConfig = HnmConfig(), seed: int = 0) -> np.ndarray:
    """Envelope-shaped noise, overlap-added per frame; deterministic per seed."""
    _check_pair(mel, pitch)
    fc = mel.frame_config
    hop = fc.hop_samples
    n_frames = mel.n_frames
    n_samples = n_frames * hop
    fft = fc.fft_size
    n_bins = fc.n_bins

    env = mel_to_linear_envelope(mel)
    # calibrated so an analyze->synthesize loop preserves noise level
    win_sumsq = float((_hann_periodic(fc.win_samples) ** 2).sum())
    spec_scale = fft / (2.0 * np.sqrt(n_bins * win_sumsq))

    block_len = 2 * hop
    window = _hann_periodic(block_len)
    start = (fft - block_len) // 2
    atten = 10.0 ** (cfg.voiced_noise_atten_db / 20.0)

    rng = np.random.default_rng(seed)
    half = block_len // 2
    buf = np.zeros(n_samples + 2 * half)
    norm = np.zeros(n_samples + 2 * half)
    for t in range(n_frames):
        z = rng.standard_normal(n_bins) + 1j * rng.standard_normal(n_bins)
        z[0] = z[0].real
        z[-1] = z[-1].real
        block = np.fft.irfft(z * env[t] * spec_scale, n=fft)[start:start + block_len]
        block = block * window
        if pitch.voiced[t]:
            block = block * atten
        lo = t * hop  # window centered on the frame center (offset by half in buf)
        buf[lo:lo + block_len] += block
        norm[lo:lo + block_len] += window ** 2
    out = buf[half:half + n_samples]
    denom = np.sqrt(np.maximum(norm[half:half + n_samples], 1e-12))
    return cfg.noise_gain * out / denom


def synthesize_hnm(mel: MelSpectrogram, pitch: PitchContour,
                   cfg: HnmConfig = HnmConfig(), noise_seed: int = 0,
                   utterance_id: str = "synth", speaker_id: str = "",
                   emotion: str = "synthetic") -> AudioClip:
    """Harmonics plus shaped noise; peak-limited to 0.99 only if exceeded."""
    _check_pair(mel, pitch)
    samples = (harmonic_component(pitch, mel, cfg)
               + noise_component(mel, pitch, cfg, seed=noise_seed))
    peak = float(np.max(np.abs(samples))) if samples.size else 0.0
    if peak > 0.99:
        samples = samples * (0.99 / peak)
    return AudioClip(samples=samples, sample_rate_hz=cfg.sample_rate_hz,
                     utterance_id=utterance_id, speaker_id=speaker_id,
                     emotion=emotion)
