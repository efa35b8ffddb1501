"""Non-autoregressive acoustic model over pseudo-phonemes.

Pipeline: unit embedding + additive speaker embedding -> dilated-conv
encoder -> duration head (log(1+d) regression) -> length regulation ->
dilated-conv decoder trunk -> parallel mel head (linear) and pitch head
(linear + logistic squash to [0, 1]).

Each stack is a chain of pre-norm residual blocks: x + dropout(gelu(conv(
layer_norm(x)))) with kernel 3 and the configured dilation cycle repeated
twice. Processing is per-utterance (no padding), so batches are plain lists
and masks never enter the math.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from ..errors import ValidationError
from ..ppcodec import PseudoPhonemeSequence
from ..units import N_UNITS
from . import layers

# inference treats predicted scaled pitch under this value as unvoiced
VOICING_THRESHOLD = 0.05
# guards length regulation against degenerate checkpoints
MAX_PREDICTED_DURATION = 100_000


@dataclass(frozen=True)
class ModelConfig:
    embed_dim: int = 128
    conv_channels: int = 128
    kernel_size: int = 3
    dilation_cycle: tuple[int, ...] = (1, 2, 4)
    n_speakers: int = 1
    n_units: int = N_UNITS
    mel_bins: int = 256
    dropout: float = 0.1
    learning_rate: float = 1e-3
    batch_size: int = 8
    max_steps: int = 2000

    def __post_init__(self):
        for name in ("embed_dim", "conv_channels", "kernel_size", "n_speakers",
                     "mel_bins", "batch_size", "max_steps"):
            if getattr(self, name) <= 0:
                raise ValidationError(f"{name} must be positive")
        if any(d <= 0 for d in self.dilation_cycle):
            raise ValidationError("dilation values must be positive")
        if self.kernel_size % 2 != 1:
            raise ValidationError("kernel_size must be odd for same padding")
        if self.n_units != N_UNITS:
            raise ValidationError(f"n_units is fixed at {N_UNITS}")
        if not 0.0 <= self.dropout < 1.0:
            raise ValidationError("dropout must lie in [0, 1)")

    @property
    def dilations(self) -> tuple[int, ...]:
        return self.dilation_cycle * 2


@dataclass
class SpeakerTable:
    """Trainable per-speaker vectors, addressable by speaker id."""

    ids: list[str]
    embeddings: np.ndarray

    def __post_init__(self):
        self.embeddings = np.asarray(self.embeddings, dtype=np.float64)
        if len(self.ids) != self.embeddings.shape[0]:
            raise ValidationError("one embedding row per speaker id required")
        if not np.all(np.isfinite(self.embeddings)):
            raise ValidationError("speaker embeddings must be finite")

    def index_of(self, speaker_id: str) -> int:
        try:
            return self.ids.index(speaker_id)
        except ValueError:
            raise ValidationError(
                f"unknown speaker {speaker_id!r}; known: {', '.join(self.ids)}"
            ) from None


@dataclass
class AcousticOutput:
    mel_pred: np.ndarray
    pitch_pred: np.ndarray
    log_duration_pred: np.ndarray
    durations: np.ndarray  # frame counts used for length regulation


class LossBreakdown(NamedTuple):
    total: float
    mel_l1: float
    pitch_mse: float
    dur_mse: float


@dataclass
class TrainingExample:
    """One prepared utterance: pseudo-phonemes plus frame-level targets."""

    units: np.ndarray
    durations: np.ndarray
    mel: np.ndarray
    pitch: np.ndarray
    voiced: np.ndarray
    speaker_idx: int
    utterance_id: str = ""

    def __post_init__(self):
        self.units = np.asarray(self.units, dtype=np.int64)
        self.durations = np.asarray(self.durations, dtype=np.int64)
        self.mel = np.asarray(self.mel, dtype=np.float64)
        self.pitch = np.asarray(self.pitch, dtype=np.float64)
        self.voiced = np.asarray(self.voiced, dtype=bool)
        frames = int(self.durations.sum())
        if self.mel.shape[0] != frames or len(self.pitch) != frames:
            raise ValidationError(
                f"{self.utterance_id or 'example'}: targets span {self.mel.shape[0]} "
                f"mel / {len(self.pitch)} pitch frames but durations sum to {frames}")


# --------------------------------------------------------------------------
# Spec-level operations
# --------------------------------------------------------------------------

def length_regulate(embeddings: np.ndarray, durations) -> np.ndarray:
    """Repeat row i durations[i] times, preserving order."""
    embeddings = np.asarray(embeddings)
    durations = np.asarray(durations, dtype=np.int64)
    if embeddings.shape[0] != len(durations):
        raise ValidationError("one duration per row required")
    if durations.size and durations.min() < 1:
        raise ValidationError("durations must be >= 1")
    return np.repeat(embeddings, durations, axis=0)


def align_durations(pp: PseudoPhonemeSequence, mel_rate_hz: int = 100,
                    target_frames: int | None = None) -> np.ndarray:
    """Rescale pseudo-phoneme durations from their frame rate to the mel rate.

    Rates must divide evenly. When target_frames is given, any residual
    off-by-a-few mismatch is absorbed by the final duration (borrowing from
    earlier ones if that would push it under 1).
    """
    if mel_rate_hz % pp.frame_rate_hz != 0:
        raise ValidationError(
            f"unsupported rate pair: {pp.frame_rate_hz} Hz units do not divide "
            f"{mel_rate_hz} Hz mel frames")
    factor = mel_rate_hz // pp.frame_rate_hz
    durations = pp.durations * factor
    if target_frames is None or durations.size == 0:
        return durations
    if target_frames < len(durations):
        raise ValidationError(
            f"cannot fit {len(durations)} pseudo-phonemes into {target_frames} frames")
    durations = durations.copy()
    durations[-1] += target_frames - int(durations.sum())
    i = len(durations) - 1
    while durations[i] < 1:  # borrow from the left neighbour
        deficit = 1 - durations[i]
        durations[i] = 1
        durations[i - 1] -= deficit
        i -= 1
    return durations


def predicted_durations(log_duration_pred: np.ndarray) -> np.ndarray:
    """Invert the log(1+d) head output to positive integer frame counts."""
    d = np.rint(np.expm1(np.clip(log_duration_pred, None, 30.0)))
    return np.clip(d, 1, MAX_PREDICTED_DURATION).astype(np.int64)


# --------------------------------------------------------------------------
# Parameters and forward/backward
# --------------------------------------------------------------------------

def init_params(config: ModelConfig, seed: int = 0) -> dict[str, np.ndarray]:
    rng = np.random.default_rng(seed)
    c = config.conv_channels
    k = config.kernel_size
    p: dict[str, np.ndarray] = {}
    p["unit_embed"] = rng.normal(0.0, 0.1, (config.n_units, config.embed_dim))
    # small init keeps speaker vectors dominated by what training writes there
    p["speaker_embed"] = rng.normal(0.0, 0.01, (config.n_speakers, config.embed_dim))
    p["enc_in.w"] = rng.normal(0.0, config.embed_dim ** -0.5, (config.embed_dim, c))
    p["enc_in.b"] = np.zeros(c)

    def add_block(prefix):
        p[f"{prefix}.ln.g"] = np.ones(c)
        p[f"{prefix}.ln.b"] = np.zeros(c)
        p[f"{prefix}.conv.w"] = rng.normal(0.0, (k * c) ** -0.5, (k * c, c))
        p[f"{prefix}.conv.b"] = np.zeros(c)

    for i in range(len(config.dilations)):
        add_block(f"enc{i}")
    p["dur.ln.g"] = np.ones(c)
    p["dur.ln.b"] = np.zeros(c)
    p["dur.conv.w"] = rng.normal(0.0, (k * c) ** -0.5, (k * c, c))
    p["dur.conv.b"] = np.zeros(c)
    p["dur.out.w"] = rng.normal(0.0, c ** -0.5, (c, 1))
    p["dur.out.b"] = np.zeros(1)
    for i in range(len(config.dilations)):
        add_block(f"dec{i}")
    p["mel.w"] = rng.normal(0.0, c ** -0.5, (c, config.mel_bins))
    p["mel.b"] = np.zeros(config.mel_bins)
    p["pitch.w"] = rng.normal(0.0, c ** -0.5, (c, 1))
    p["pitch.b"] = np.zeros(1)
    return p


def parameter_layer_type(name: str) -> str:
    """Bucket a parameter name by layer type (for gradient verification)."""
    if name.startswith("dur."):
        return "duration_head"
    if name in ("unit_embed", "speaker_embed"):
        return "embedding"
    if ".conv." in name:
        return "conv"
    if ".ln." in name:
        return "layer_norm"
    return "linear"


class AcousticModel:
    """Parameter container with explicit forward and backward passes."""

    def __init__(self, config: ModelConfig, params: dict[str, np.ndarray] | None = None,
                 seed: int = 0):
        self.config = config
        self.params = params if params is not None else init_params(config, seed)

    def speaker_table(self, ids: list[str]) -> SpeakerTable:
        return SpeakerTable(ids=ids, embeddings=self.params["speaker_embed"])

    # -- stacks -------------------------------------------------------------

    def _block_forward(self, prefix, x, dilation, drop_rng):
        p = self.params
        n, ln_cache = layers.layer_norm_forward(x, p[f"{prefix}.ln.g"], p[f"{prefix}.ln.b"])
        z, conv_cache = layers.conv1d_forward(n, p[f"{prefix}.conv.w"],
                                              p[f"{prefix}.conv.b"], dilation)
        a, gelu_cache = layers.gelu_forward(z)
        d, drop_mask = layers.dropout_forward(a, self.config.dropout, drop_rng)
        return x + d, (ln_cache, conv_cache, gelu_cache, drop_mask)

    def _block_backward(self, prefix, dy, cache, grads):
        ln_cache, conv_cache, gelu_cache, drop_mask = cache
        dd = layers.dropout_backward(dy, drop_mask)
        dz = layers.gelu_backward(dd, gelu_cache)
        dn, dw, db = layers.conv1d_backward(dz, conv_cache)
        grads[f"{prefix}.conv.w"] += dw
        grads[f"{prefix}.conv.b"] += db
        dx, dg, dbeta = layers.layer_norm_backward(dn, ln_cache)
        grads[f"{prefix}.ln.g"] += dg
        grads[f"{prefix}.ln.b"] += dbeta
        return dy + dx

    # -- full pass ------------------------------------------------------------

    def forward(self, units, speaker_idx: int, durations=None, drop_rng=None):
        """Run one utterance; durations=None predicts them (inference).

        Returns (AcousticOutput, cache); pass the cache to backward.
        """
        cfg = self.config
        p = self.params
        units = np.asarray(units, dtype=np.int64)
        if units.ndim != 1 or units.size == 0:
            raise ValidationError("units must be a nonempty 1-D index sequence")
        if units.min() < 0 or units.max() >= cfg.n_units:
            raise ValidationError(f"unit index outside [0, {cfg.n_units})")
        if not 0 <= speaker_idx < cfg.n_speakers:
            raise ValidationError(
                f"speaker index {speaker_idx} outside [0, {cfg.n_speakers})")

        emb, emb_cache = layers.embedding_forward(p["unit_embed"], units)
        x = emb + p["speaker_embed"][speaker_idx]
        x, in_cache = layers.linear_forward(x, p["enc_in.w"], p["enc_in.b"])

        enc_caches = []
        for i, dil in enumerate(cfg.dilations):
            x, c = self._block_forward(f"enc{i}", x, dil, drop_rng)
            enc_caches.append(c)
        enc_out = x

        dn, dur_ln = layers.layer_norm_forward(enc_out, p["dur.ln.g"], p["dur.ln.b"])
        dz, dur_conv = layers.conv1d_forward(dn, p["dur.conv.w"], p["dur.conv.b"], 1)
        da, dur_gelu = layers.gelu_forward(dz)
        dd, dur_drop = layers.dropout_forward(da, cfg.dropout, drop_rng)
        logd, dur_out = layers.linear_forward(dd, p["dur.out.w"], p["dur.out.b"])
        logd = logd[:, 0]

        if durations is None:
            durations = predicted_durations(logd)
        else:
            durations = np.asarray(durations, dtype=np.int64)
            if len(durations) != len(units):
                raise ValidationError("one duration per pseudo-phoneme required")
            if durations.min() < 1:
                raise ValidationError("durations must be >= 1")

        r, rep_cache = layers.repeat_forward(enc_out, durations)
        y = r
        dec_caches = []
        for i, dil in enumerate(cfg.dilations):
            y, c = self._block_forward(f"dec{i}", y, dil, drop_rng)
            dec_caches.append(c)

        mel, mel_cache = layers.linear_forward(y, p["mel.w"], p["mel.b"])
        pz, pitch_lin = layers.linear_forward(y, p["pitch.w"], p["pitch.b"])
        pitch, pitch_sig = layers.sigmoid_forward(pz[:, 0])

        out = AcousticOutput(mel_pred=mel, pitch_pred=pitch,
                             log_duration_pred=logd, durations=durations)
        cache = dict(
            units=units, speaker_idx=speaker_idx, emb_cache=emb_cache,
            in_cache=in_cache, enc_caches=enc_caches,
            dur=(dur_ln, dur_conv, dur_gelu, dur_drop, dur_out),
            rep_cache=rep_cache, dec_caches=dec_caches,
            mel_cache=mel_cache, pitch_lin=pitch_lin, pitch_sig=pitch_sig,
        )
        return out, cache

    def zero_grads(self) -> dict[str, np.ndarray]:
        return {k: np.zeros_like(v) for k, v in self.params.items()}

    def backward(self, cache, dmel, dpitch, dlogd, grads) -> None:
        """Accumulate parameter gradients for one utterance into grads."""
        cfg = self.config

        dpz = layers.sigmoid_backward(dpitch, cache["pitch_sig"])[:, None]
        dy_p, dw, db = layers.linear_backward(dpz, cache["pitch_lin"])
        grads["pitch.w"] += dw
        grads["pitch.b"] += db
        dy_m, dw, db = layers.linear_backward(dmel, cache["mel_cache"])
        grads["mel.w"] += dw
        grads["mel.b"] += db
        dy = dy_m + dy_p

        for i in reversed(range(len(cfg.dilations))):
            dy = self._block_backward(f"dec{i}", dy, cache["dec_caches"][i], grads)
        denc = layers.repeat_backward(dy, cache["rep_cache"])

        dur_ln, dur_conv, dur_gelu, dur_drop, dur_out = cache["dur"]
        ddd, dw, db = layers.linear_backward(dlogd[:, None], dur_out)
        grads["dur.out.w"] += dw
        grads["dur.out.b"] += db
        dda = layers.dropout_backward(ddd, dur_drop)
        ddz = layers.gelu_backward(dda, dur_gelu)
        ddn, dw, db = layers.conv1d_backward(ddz, dur_conv)
        grads["dur.conv.w"] += dw
        grads["dur.conv.b"] += db
        ddx, dg, dbeta = layers.layer_norm_backward(ddn, dur_ln)
        grads["dur.ln.g"] += dg
        grads["dur.ln.b"] += dbeta
        denc = denc + ddx

        for i in reversed(range(len(cfg.dilations))):
            denc = self._block_backward(f"enc{i}", denc, cache["enc_caches"][i], grads)
        dx, dw, db = layers.linear_backward(denc, cache["in_cache"])
        grads["enc_in.w"] += dw
        grads["enc_in.b"] += db

        grads["speaker_embed"][cache["speaker_idx"]] += dx.sum(axis=0)
        grads["unit_embed"] += layers.embedding_backward(dx, cache["emb_cache"])


# --------------------------------------------------------------------------
# Losses
# --------------------------------------------------------------------------

def loss(outputs: list[AcousticOutput], targets: list[TrainingExample]) -> LossBreakdown:
    """Batch loss: L1 on mel, MSE on voiced-frame pitch, MSE on log durations.

    Each term is mean-reduced over every real (unpadded) position in the
    batch, so duplicating the batch leaves the value unchanged.
    """
    if len(outputs) != len(targets):
        raise ValidationError("one output per target required")
    mel_abs = pitch_sq = dur_sq = 0.0
    mel_n = pitch_n = dur_n = 0
    for out, ex in zip(outputs, targets):
        if out.mel_pred.shape != ex.mel.shape:
            raise ValidationError(
                f"mel shape {out.mel_pred.shape} does not match target {ex.mel.shape}")
        mel_abs += float(np.abs(out.mel_pred - ex.mel).sum())
        mel_n += ex.mel.size
        v = ex.voiced
        pitch_sq += float(((out.pitch_pred[v] - ex.pitch[v]) ** 2).sum())
        pitch_n += int(v.sum())
        dur_sq += float(((out.log_duration_pred - np.log1p(ex.durations)) ** 2).sum())
        dur_n += len(ex.durations)
    mel_l1 = mel_abs / mel_n if mel_n else 0.0
    pitch_mse = pitch_sq / pitch_n if pitch_n else 0.0
    dur_mse = dur_sq / dur_n if dur_n else 0.0
    return LossBreakdown(mel_l1 + pitch_mse + dur_mse, mel_l1, pitch_mse, dur_mse)


def batch_loss_and_grads(model: AcousticModel, batch: list[TrainingExample],
                         drop_rng=None):
    """Forward + backward over a batch; returns (LossBreakdown, grads)."""
    outs, caches = [], []
    for ex in batch:
        out, cache = model.forward(ex.units, ex.speaker_idx, ex.durations,
                                   drop_rng=drop_rng)
        outs.append(out)
        caches.append(cache)
    breakdown = loss(outs, batch)

    mel_n = sum(ex.mel.size for ex in batch)
    pitch_n = sum(int(ex.voiced.sum()) for ex in batch)
    dur_n = sum(len(ex.durations) for ex in batch)

    grads = model.zero_grads()
    for out, ex, cache in zip(outs, batch, caches):
        dmel = np.sign(out.mel_pred - ex.mel) / mel_n
        dpitch = np.where(ex.voiced, 2.0 * (out.pitch_pred - ex.pitch), 0.0)
        dpitch = dpitch / pitch_n if pitch_n else dpitch * 0.0
        dlogd = 2.0 * (out.log_duration_pred - np.log1p(ex.durations)) / dur_n
        model.backward(cache, dmel, dpitch, dlogd, grads)
    return breakdown, grads
