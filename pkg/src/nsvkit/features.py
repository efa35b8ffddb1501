"""Frame-level analysis at 10 ms hop / 25 ms window: STFT, 256-band log-mel,
autocorrelation pitch, and the MELF / PITF binary interchange formats.

Framing is center-based with reflect padding, so the frame count of every
feature is ceil(n_samples / hop) — a pure function of clip length. That
alignment is what lets unit sequences, mels, and pitch contours line up
one-to-one downstream.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np

from .errors import ValidationError

MEL_FLOOR = 1e-5
DEFAULT_N_MELS = 256
DEFAULT_F_MIN_HZ = 60.0
DEFAULT_F_MAX_HZ = 600.0
YIN_THRESHOLD = 0.15


@dataclass(frozen=True)
class FrameConfig:
    sample_rate_hz: int = 32000
    hop_samples: int = 320
    win_samples: int = 800
    fft_size: int = 1024

    def __post_init__(self):
        if not (0 < self.hop_samples <= self.win_samples <= self.fft_size):
            raise ValidationError("need 0 < hop <= win <= fft_size")
        if self.hop_samples * 100 != self.sample_rate_hz:
            raise ValidationError("hop must be exactly 10 ms of the sample rate")

    @property
    def n_bins(self) -> int:
        return self.fft_size // 2 + 1

    def n_frames(self, n_samples: int) -> int:
        return -(-n_samples // self.hop_samples)


@dataclass
class MelSpectrogram:
    """frames x n_mels natural-log magnitudes, clamped at log(MEL_FLOOR)."""

    values: np.ndarray
    frame_config: FrameConfig

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise ValidationError("mel values must be a frames x bands matrix")
        if not np.all(np.isfinite(self.values)):
            raise ValidationError("mel values must be finite")

    @property
    def n_frames(self) -> int:
        return self.values.shape[0]

    @property
    def n_mels(self) -> int:
        return self.values.shape[1]


@dataclass
class PitchContour:
    """Per-frame f0 in Hz; unvoiced frames carry f0 = 0."""

    f0_hz: np.ndarray
    voiced: np.ndarray
    frame_config: FrameConfig

    def __post_init__(self):
        self.f0_hz = np.asarray(self.f0_hz, dtype=np.float64)
        self.voiced = np.asarray(self.voiced, dtype=bool)
        if self.f0_hz.shape != self.voiced.shape or self.f0_hz.ndim != 1:
            raise ValidationError("f0 and voicing must be equal-length vectors")
        if np.any(self.f0_hz < 0) or not np.all(np.isfinite(self.f0_hz)):
            raise ValidationError("f0 must be finite and nonnegative")
        if np.any((self.f0_hz == 0) != ~self.voiced):
            raise ValidationError("voiced[i] must hold exactly when f0[i] > 0")

    @property
    def n_frames(self) -> int:
        return len(self.f0_hz)


# --------------------------------------------------------------------------
# STFT
# --------------------------------------------------------------------------

def _hann_periodic(n: int) -> np.ndarray:
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


def _frame_signal(samples: np.ndarray, cfg: FrameConfig, seg_len: int,
                  left: int | None = None) -> np.ndarray:
    """Frames of length seg_len, reflect-padded; frame t starts at t*hop - left."""
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim != 1 or x.size == 0:
        raise ValidationError("signal must be a nonempty 1-D array")
    n_frames = cfg.n_frames(len(x))
    if left is None:
        left = seg_len // 2
    need = (n_frames - 1) * cfg.hop_samples + seg_len
    right = max(0, need - left - len(x))
    padded = np.pad(x, (left, right), mode="reflect" if len(x) > 1 else "edge")
    idx = np.arange(n_frames)[:, None] * cfg.hop_samples + np.arange(seg_len)[None, :]
    return padded[idx]


def stft(samples, cfg: FrameConfig = FrameConfig()) -> np.ndarray:
    """Complex spectrogram, frames x (fft_size/2 + 1), Hann window."""
    frames = _frame_signal(samples, cfg, cfg.win_samples)
    return np.fft.rfft(frames * _hann_periodic(cfg.win_samples), n=cfg.fft_size, axis=1)


# --------------------------------------------------------------------------
# Mel filterbank
# --------------------------------------------------------------------------

def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


@lru_cache(maxsize=8)
def mel_filterbank(n_mels: int, fft_size: int, sample_rate_hz: int,
                   f_lo_hz: float = 0.0, f_hi_hz: float | None = None) -> np.ndarray:
    """Triangular HTK-mel filterbank, n_mels x (fft_size/2 + 1).

    With 256 bands over a 1024-point FFT the lowest triangles are narrower
    than one bin, which would leave all-zero rows; such rows get unit weight
    at the bin nearest their center frequency instead.
    """
    if f_hi_hz is None:
        f_hi_hz = sample_rate_hz / 2.0
    n_bins = fft_size // 2 + 1
    if n_mels > n_bins:
        raise ValidationError(f"n_mels={n_mels} exceeds {n_bins} FFT bins")
    edges_hz = mel_to_hz(np.linspace(hz_to_mel(f_lo_hz), hz_to_mel(f_hi_hz), n_mels + 2))
    bin_hz = np.arange(n_bins) * sample_rate_hz / fft_size
    fb = np.zeros((n_mels, n_bins))
    for i in range(n_mels):
        lo, center, hi = edges_hz[i], edges_hz[i + 1], edges_hz[i + 2]
        rising = (bin_hz - lo) / max(center - lo, 1e-12)
        falling = (hi - bin_hz) / max(hi - center, 1e-12)
        fb[i] = np.clip(np.minimum(rising, falling), 0.0, None)
        if not fb[i].any():
            fb[i, int(np.argmin(np.abs(bin_hz - center)))] = 1.0
    return fb


def log_mel(spec: np.ndarray, cfg: FrameConfig = FrameConfig(),
            n_mels: int = DEFAULT_N_MELS, f_lo_hz: float = 0.0,
            f_hi_hz: float | None = None) -> MelSpectrogram:
    """Project STFT magnitudes onto the mel filterbank, clamp, natural log."""
    fb = mel_filterbank(n_mels, cfg.fft_size, cfg.sample_rate_hz, f_lo_hz, f_hi_hz)
    mag = np.abs(np.asarray(spec))
    if mag.ndim != 2 or mag.shape[1] != cfg.n_bins:
        raise ValidationError(f"spectrogram must be frames x {cfg.n_bins}")
    mel = mag @ fb.T
    return MelSpectrogram(values=np.log(np.maximum(mel, MEL_FLOOR)), frame_config=cfg)


def analyze_mel(samples, cfg: FrameConfig = FrameConfig(),
                n_mels: int = DEFAULT_N_MELS) -> MelSpectrogram:
    return log_mel(stft(samples, cfg), cfg, n_mels=n_mels)


# --------------------------------------------------------------------------
# Pitch estimation (cumulative-mean normalized difference, a.k.a. YIN)
# --------------------------------------------------------------------------

def estimate_pitch(samples, cfg: FrameConfig = FrameConfig(),
                   f_min_hz: float = DEFAULT_F_MIN_HZ,
                   f_max_hz: float = DEFAULT_F_MAX_HZ,
                   threshold: float = YIN_THRESHOLD) -> PitchContour:
    """Per-frame f0 with the same frame grid as the mel spectrogram.

    For each frame the difference function d(tau) over the 25 ms integration
    window is normalized by its cumulative mean; the first dip under the
    threshold (refined by parabolic interpolation) gives the period. Frames
    with no dip under threshold, or with negligible energy, are unvoiced.
    """
    if not 0 < f_min_hz < f_max_hz:
        raise ValidationError("need 0 < f_min < f_max")
    fs = cfg.sample_rate_hz
    w = cfg.win_samples
    tau_min = max(2, int(np.ceil(fs / f_max_hz)))
    tau_max = int(fs / f_min_hz)
    if tau_min >= tau_max:
        raise ValidationError("pitch search range is empty at this sample rate")

    # integration window centered like the STFT frame; lags extend rightward
    seg_len = w + tau_max + 1
    frames = _frame_signal(samples, cfg, seg_len, left=w // 2)
    n_frames = frames.shape[0]

    # d(tau) = e(0) + e(tau) - 2 r(tau), r via FFT cross-correlation
    nfft = 1 << int(np.ceil(np.log2(seg_len + w)))
    head = frames[:, :w]
    spec_full = np.fft.rfft(frames, n=nfft, axis=1)
    spec_head = np.fft.rfft(head, n=nfft, axis=1)
    corr = np.fft.irfft(np.conj(spec_head) * spec_full, n=nfft, axis=1)[:, :tau_max + 1]

    sq = np.concatenate([np.zeros((n_frames, 1)), np.cumsum(frames ** 2, axis=1)], axis=1)
    energy = sq[:, w:w + tau_max + 1] - sq[:, 0:tau_max + 1]
    e0 = energy[:, :1]
    d = np.maximum(e0 + energy - 2.0 * corr, 0.0)

    cum = np.cumsum(d[:, 1:], axis=1)
    taus = np.arange(1, tau_max + 1)
    with np.errstate(divide="ignore", invalid="ignore"):
        cmndf = np.where(cum > 0, d[:, 1:] * taus / cum, 1.0)
    cmndf = np.concatenate([np.ones((n_frames, 1)), cmndf], axis=1)

    f0 = np.zeros(n_frames)
    voiced = np.zeros(n_frames, dtype=bool)
    silent = e0[:, 0] < 1e-10 * w
    for t in range(n_frames):
        if silent[t]:
            continue
        row = cmndf[t]
        below = np.nonzero(row[tau_min:tau_max + 1] < threshold)[0]
        if below.size == 0:
            continue
        tau = tau_min + below[0]
        while tau + 1 <= tau_max and row[tau + 1] < row[tau]:
            tau += 1
        if 0 < tau < tau_max:
            a, b, c = row[tau - 1], row[tau], row[tau + 1]
            denom = a - 2.0 * b + c
            shift = 0.5 * (a - c) / denom if abs(denom) > 1e-12 else 0.0
            tau_star = tau + np.clip(shift, -0.5, 0.5)
        else:
            tau_star = float(tau)
        f0[t] = np.clip(fs / tau_star, f_min_hz, f_max_hz)
        voiced[t] = True

    return PitchContour(f0_hz=f0, voiced=voiced, frame_config=cfg)


# --------------------------------------------------------------------------
# Pitch scaling
# --------------------------------------------------------------------------

def scale_pitch(contour: PitchContour, f_min_hz: float = DEFAULT_F_MIN_HZ,
                f_max_hz: float = DEFAULT_F_MAX_HZ) -> np.ndarray:
    """Map voiced f0 linearly onto [0, 1]; unvoiced frames map to 0."""
    if f_min_hz >= f_max_hz:
        raise ValidationError("need f_min < f_max")
    scaled = (contour.f0_hz - f_min_hz) / (f_max_hz - f_min_hz)
    return np.where(contour.voiced, np.clip(scaled, 0.0, 1.0), 0.0)


def unscale_pitch(values: np.ndarray, f_min_hz: float = DEFAULT_F_MIN_HZ,
                  f_max_hz: float = DEFAULT_F_MAX_HZ) -> np.ndarray:
    """Linear inverse of scale_pitch (no voicing decision applied)."""
    if f_min_hz >= f_max_hz:
        raise ValidationError("need f_min < f_max")
    return f_min_hz + np.asarray(values, dtype=np.float64) * (f_max_hz - f_min_hz)


# --------------------------------------------------------------------------
# Binary interchange formats
# --------------------------------------------------------------------------

def write_melf(path, mel: MelSpectrogram) -> None:
    rows, cols = mel.values.shape
    payload = mel.values.astype("<f4").tobytes()
    Path(path).write_bytes(b"MELF" + struct.pack("<II", rows, cols) + payload)


def read_melf(path, cfg: FrameConfig = FrameConfig()) -> MelSpectrogram:
    data = Path(path).read_bytes()
    if data[:4] != b"MELF":
        raise ValidationError(f"{path}: bad MELF magic")
    rows, cols = struct.unpack_from("<II", data, 4)
    values = np.frombuffer(data, dtype="<f4", count=rows * cols, offset=12)
    return MelSpectrogram(values=values.reshape(rows, cols).astype(np.float64),
                          frame_config=cfg)


def write_pitf(path, contour: PitchContour) -> None:
    payload = contour.f0_hz.astype("<f4").tobytes()
    Path(path).write_bytes(b"PITF" + struct.pack("<I", contour.n_frames) + payload)


def read_pitf(path, cfg: FrameConfig = FrameConfig()) -> PitchContour:
    data = Path(path).read_bytes()
    if data[:4] != b"PITF":
        raise ValidationError(f"{path}: bad PITF magic")
    (n,) = struct.unpack_from("<I", data, 4)
    f0 = np.frombuffer(data, dtype="<f4", count=n, offset=8).astype(np.float64)
    return PitchContour(f0_hz=f0, voiced=f0 > 0, frame_config=cfg)
