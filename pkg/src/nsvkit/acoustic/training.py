"""Training loop (Adam), divergence detection, and finite-difference
verification of the hand-written gradients."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import TrainingDivergedError, ValidationError
from .model import (
    AcousticModel,
    ModelConfig,
    TrainingExample,
    batch_loss_and_grads,
    init_params,
    loss,
    parameter_layer_type,
)

ADAM_BETAS = (0.9, 0.98)
ADAM_EPS = 1e-9


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0

    @classmethod
    def for_params(cls, params):
        return cls(m={k: np.zeros_like(p) for k, p in params.items()},
                   v={k: np.zeros_like(p) for k, p in params.items()})


def adam_step(params, grads, state: AdamState, lr: float,
              betas=ADAM_BETAS, eps=ADAM_EPS) -> None:
    b1, b2 = betas
    state.t += 1
    bc1 = 1.0 - b1 ** state.t
    bc2 = 1.0 - b2 ** state.t
    for k, g in grads.items():
        state.m[k] = b1 * state.m[k] + (1.0 - b1) * g
        state.v[k] = b2 * state.v[k] + (1.0 - b2) * g * g
        params[k] -= lr * (state.m[k] / bc1) / (np.sqrt(state.v[k] / bc2) + eps)


@dataclass
class TrainResult:
    model: AcousticModel
    speaker_ids: list[str]
    seed: int
    # columns: step, total, mel_l1, pitch_mse, dur_mse
    loss_curve: np.ndarray = field(repr=False, default=None)


def train(examples: list[TrainingExample], config: ModelConfig, seed: int,
          speaker_ids: list[str] | None = None) -> TrainResult:
    """Adam-train a fresh model for config.max_steps over shuffled batches.

    Deterministic given (examples, config, seed). Raises
    TrainingDivergedError naming the step if the loss goes non-finite.
    """
    if not examples:
        raise ValidationError("training requires at least one example")
    if speaker_ids is None:
        speaker_ids = [f"speaker{i}" for i in range(config.n_speakers)]

    rng = np.random.default_rng(seed)
    model = AcousticModel(config, init_params(config, seed=int(rng.integers(2 ** 31))))
    drop_rng = np.random.default_rng(int(rng.integers(2 ** 31))) if config.dropout > 0 else None
    order_rng = np.random.default_rng(int(rng.integers(2 ** 31)))

    state = AdamState.for_params(model.params)
    curve = np.zeros((config.max_steps, 5))
    order: list[int] = []
    for step in range(config.max_steps):
        batch = []
        for _ in range(min(config.batch_size, len(examples))):
            if not order:
                order = list(order_rng.permutation(len(examples)))
            batch.append(examples[order.pop()])
        breakdown, grads = batch_loss_and_grads(model, batch, drop_rng=drop_rng)
        if not np.isfinite(breakdown.total):
            raise TrainingDivergedError(f"non-finite loss at step {step}")
        curve[step] = (step, *breakdown)
        adam_step(model.params, grads, state, config.learning_rate)

    return TrainResult(model=model, speaker_ids=speaker_ids, seed=seed,
                       loss_curve=curve)


# --------------------------------------------------------------------------
# Gradient verification
# --------------------------------------------------------------------------

@dataclass
class GradCheckResult:
    max_rel_error: float
    per_type: dict[str, float]
    checked: int
    checked_per_type: dict[str, int] = field(default_factory=dict)


def gradient_check(model: AcousticModel, batch: list[TrainingExample],
                   eps: float = 1e-3, n_per_type: int = 200, seed: int = 0,
                   grad_transform=None) -> GradCheckResult:
    """Compare analytic gradients against central finite differences.

    Samples up to n_per_type coordinates from every layer type (embedding,
    conv, layer norm, linear heads, duration head). Coordinates where both
    gradients are under 1e-12 are skipped (flat L1 subgradient regions).
    grad_transform, if given, may corrupt the analytic gradients first —
    used to prove the check actually detects faults.
    """
    _, grads = batch_loss_and_grads(model, batch, drop_rng=None)
    if grad_transform is not None:
        grads = grad_transform(grads)

    def total_loss():
        outs = [model.forward(ex.units, ex.speaker_idx, ex.durations)[0]
                for ex in batch]
        return loss(outs, batch).total

    # sample live (nonzero-gradient) coordinates first so the skip rule for
    # flat L1 regions does not eat into the per-type quota
    by_type: dict[str, tuple[list, list]] = {}
    for name, p in model.params.items():
        live, flat = by_type.setdefault(parameter_layer_type(name), ([], []))
        g = grads[name].ravel()
        for i in range(p.size):
            (live if abs(g[i]) >= 1e-12 else flat).append((name, i))

    rng = np.random.default_rng(seed)
    per_type: dict[str, float] = {}
    checked_per_type: dict[str, int] = {}
    for layer_type, (live, flat) in sorted(by_type.items()):
        chosen = [live[i] for i in rng.permutation(len(live))[:n_per_type]]
        if len(chosen) < n_per_type:
            extra = n_per_type - len(chosen)
            chosen += [flat[i] for i in rng.permutation(len(flat))[:extra]]
        worst = 0.0
        n_checked = 0
        for name, flat_idx in chosen:
            p = model.params[name]
            idx = np.unravel_index(flat_idx, p.shape)
            keep = p[idx]
            p[idx] = keep + eps
            up = total_loss()
            p[idx] = keep - eps
            down = total_loss()
            p[idx] = keep
            numeric = (up - down) / (2.0 * eps)
            analytic = grads[name][idx]
            scale = max(abs(numeric), abs(analytic))
            if scale < 1e-12:
                continue
            worst = max(worst, abs(numeric - analytic) / scale)
            n_checked += 1
        per_type[layer_type] = worst
        checked_per_type[layer_type] = n_checked
    return GradCheckResult(max_rel_error=max(per_type.values()),
                           per_type=per_type,
                           checked=sum(checked_per_type.values()),
                           checked_per_type=checked_per_type)


def toy_gradcheck_case(seed: int = 0, n_utterances: int = 3
                       ) -> tuple[AcousticModel, list[TrainingExample]]:
    """Small 64-bit model plus a batch whose mel targets sit 0.5..1.5 away
    from the initial predictions, keeping finite differences clear of the
    L1 kink at zero. Dimensions are 16 so every layer type still exposes
    a few hundred parameters to sample."""
    rng = np.random.default_rng(seed)
    config = ModelConfig(embed_dim=16, conv_channels=16, kernel_size=3,
                         dilation_cycle=(1, 2), n_speakers=3, mel_bins=12,
                         dropout=0.0, batch_size=n_utterances, max_steps=1)
    model = AcousticModel(config, seed=seed)
    batch = []
    for u in range(n_utterances):
        t = int(rng.integers(4, 9))
        units = rng.integers(0, config.n_units, size=t)
        durations = rng.integers(1, 4, size=t)
        speaker = int(rng.integers(config.n_speakers))
        out, _ = model.forward(units, speaker, durations)
        frames = out.mel_pred.shape[0]
        offset = rng.uniform(0.5, 1.5, out.mel_pred.shape) * rng.choice([-1.0, 1.0],
                                                                        out.mel_pred.shape)
        batch.append(TrainingExample(
            units=units, durations=durations,
            mel=out.mel_pred + offset,
            pitch=rng.uniform(0.1, 0.9, frames),
            voiced=rng.random(frames) < 0.7,
            speaker_idx=speaker,
            utterance_id=f"toy{u}",
        ))
    return model, batch
