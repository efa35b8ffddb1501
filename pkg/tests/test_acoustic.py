import dataclasses

import numpy as np
import pytest

from nsvkit.acoustic import (
    AcousticModel,
    Checkpoint,
    ModelConfig,
    TrainingExample,
    align_durations,
    gradient_check,
    length_regulate,
    load_checkpoint,
    loss,
    predicted_durations,
    save_checkpoint,
    toy_gradcheck_case,
    train,
)
from nsvkit.errors import TrainingDivergedError, ValidationError
from nsvkit.ppcodec import PseudoPhonemeSequence

TOY = ModelConfig(embed_dim=8, conv_channels=8, kernel_size=3,
                  dilation_cycle=(1, 2), n_speakers=3, mel_bins=12,
                  dropout=0.0, batch_size=2, max_steps=4)


def toy_example(rng, config=TOY, t=None, speaker=None):
    t = int(rng.integers(4, 9)) if t is None else t
    units = rng.integers(0, config.n_units, size=t)
    durations = rng.integers(1, 4, size=t)
    frames = int(durations.sum())
    return TrainingExample(
        units=units, durations=durations,
        mel=rng.standard_normal((frames, config.mel_bins)),
        pitch=rng.uniform(0, 1, frames),
        voiced=rng.random(frames) < 0.6,
        speaker_idx=int(rng.integers(config.n_speakers)) if speaker is None else speaker)


class TestLengthRegulate:
    def test_basic(self):
        rows = np.array([[1.0, 0.0], [0.0, 1.0]])
        out = length_regulate(rows, [2, 3])
        assert out.shape == (5, 2)
        assert np.array_equal(out, np.array([[1, 0], [1, 0], [0, 1], [0, 1], [0, 1]]))

    def test_all_ones_is_identity(self):
        rows = np.arange(12.0).reshape(4, 3)
        assert np.array_equal(length_regulate(rows, [1, 1, 1, 1]), rows)

    def test_zero_duration_rejected(self):
        with pytest.raises(ValidationError):
            length_regulate(np.zeros((2, 3)), [1, 0])

    def test_matches_codec_frame_count(self):
        from nsvkit.ppcodec import rle_encode
        from nsvkit.units import UnitSequence

        rng = np.random.default_rng(0)
        seq = UnitSequence(indices=rng.integers(0, 100, 200), frame_rate_hz=100)
        pp = rle_encode(seq)
        out = length_regulate(np.zeros((len(pp), 4)), pp.durations)
        assert out.shape[0] == 200


class TestAlignDurations:
    def test_50hz_doubles(self):
        pp = PseudoPhonemeSequence(units=[3, 9], durations=[3, 2], frame_rate_hz=50)
        assert align_durations(pp, 100).tolist() == [6, 4]

    def test_100hz_identity(self):
        pp = PseudoPhonemeSequence(units=[3, 9], durations=[3, 2], frame_rate_hz=100)
        assert align_durations(pp, 100).tolist() == [3, 2]

    def test_target_absorbed_by_last(self):
        pp = PseudoPhonemeSequence(units=[3, 9], durations=[3, 2], frame_rate_hz=50)
        assert align_durations(pp, 100, target_frames=11).tolist() == [6, 5]
        assert align_durations(pp, 100, target_frames=9).tolist() == [6, 3]

    def test_borrow_keeps_durations_positive(self):
        pp = PseudoPhonemeSequence(units=[3, 9, 4], durations=[5, 1, 1],
                                   frame_rate_hz=100)
        aligned = align_durations(pp, 100, target_frames=4)
        assert aligned.sum() == 4
        assert aligned.min() >= 1

    def test_non_divisible_rate_rejected(self):
        pp = PseudoPhonemeSequence(units=[3], durations=[1], frame_rate_hz=30)
        with pytest.raises(ValidationError):
            align_durations(pp, 100)

    def test_impossible_target_rejected(self):
        pp = PseudoPhonemeSequence(units=[3, 9, 4], durations=[1, 1, 1],
                                   frame_rate_hz=100)
        with pytest.raises(ValidationError):
            align_durations(pp, 100, target_frames=2)


class TestPredictedDurations:
    def test_zero_maps_to_one(self):
        assert predicted_durations(np.array([0.0])).tolist() == [1]

    def test_log6_maps_to_five(self):
        assert predicted_durations(np.array([np.log(6.0)])).tolist() == [5]

    def test_floor_at_one(self):
        assert predicted_durations(np.array([-5.0])).tolist() == [1]


class TestForward:
    def test_frame_count_follows_durations(self):
        model = AcousticModel(TOY, seed=0)
        out, _ = model.forward(np.array([7]), 0, durations=np.array([4]))
        assert out.mel_pred.shape == (4, TOY.mel_bins)
        assert out.pitch_pred.shape == (4,)

    def test_unknown_speaker_rejected(self):
        model = AcousticModel(TOY, seed=0)
        with pytest.raises(ValidationError):
            model.forward(np.array([1]), TOY.n_speakers, durations=np.array([1]))

    def test_speakers_change_output(self):
        model = AcousticModel(TOY, seed=0)
        units = np.array([3, 14, 3])
        durations = np.array([2, 2, 1])
        a, _ = model.forward(units, 0, durations)
        b, _ = model.forward(units, 1, durations)
        assert np.max(np.abs(a.mel_pred - b.mel_pred)) > 0

    def test_frame_count_speaker_invariant_given_durations(self):
        model = AcousticModel(TOY, seed=0)
        units = np.array([3, 14, 3, 2])
        durations = np.array([2, 2, 1, 3])
        shapes = {model.forward(units, s, durations)[0].mel_pred.shape
                  for s in range(TOY.n_speakers)}
        assert shapes == {(8, TOY.mel_bins)}

    def test_infer_mode_uses_predicted_durations(self):
        model = AcousticModel(TOY, seed=0)
        out, _ = model.forward(np.array([5, 9, 2]), 1)
        assert out.mel_pred.shape[0] == int(out.durations.sum())
        assert np.array_equal(out.durations,
                              predicted_durations(out.log_duration_pred))

    def test_pitch_in_unit_interval(self):
        model = AcousticModel(TOY, seed=1)
        rng = np.random.default_rng(0)
        for _ in range(5):
            ex = toy_example(rng)
            out, _ = model.forward(ex.units, ex.speaker_idx, ex.durations)
            assert np.all(out.pitch_pred >= 0) and np.all(out.pitch_pred <= 1)


class TestLoss:
    def exact_outputs(self, rng, n=3):
        model = AcousticModel(TOY, seed=2)
        batch = [toy_example(rng) for _ in range(n)]
        outs = []
        for ex in batch:
            out, _ = model.forward(ex.units, ex.speaker_idx, ex.durations)
            ex.mel = out.mel_pred.copy()
            ex.pitch = out.pitch_pred.copy()
            outs.append(out)
        return outs, batch

    def test_identity_gives_zero_mel_and_pitch(self):
        rng = np.random.default_rng(4)
        outs, batch = self.exact_outputs(rng)
        breakdown = loss(outs, batch)
        assert breakdown.mel_l1 == 0.0
        assert breakdown.pitch_mse == 0.0

    def test_constant_offset_gives_unit_l1(self):
        rng = np.random.default_rng(5)
        outs, batch = self.exact_outputs(rng)
        for ex in batch:
            ex.mel = ex.mel - 1.0
        breakdown = loss(outs, batch)
        assert breakdown.mel_l1 == pytest.approx(1.0)

    def test_duplicating_batch_preserves_loss(self):
        rng = np.random.default_rng(6)
        outs, batch = self.exact_outputs(rng)
        for ex in batch:
            ex.mel = ex.mel + rng.standard_normal(ex.mel.shape)
        once = loss(outs, batch)
        twice = loss(outs + outs, batch + batch)
        assert once == pytest.approx(twice)

    def test_permutation_invariant(self):
        rng = np.random.default_rng(7)
        outs, batch = self.exact_outputs(rng)
        for ex in batch:
            ex.mel = ex.mel + rng.standard_normal(ex.mel.shape)
        forward = loss(outs, batch)
        backward = loss(outs[::-1], batch[::-1])
        assert forward == pytest.approx(backward)

    def test_shape_mismatch_rejected(self):
        rng = np.random.default_rng(8)
        outs, batch = self.exact_outputs(rng)
        batch[0].mel = batch[0].mel[:-1]
        with pytest.raises(ValidationError):
            loss(outs, batch)


class TestGradients:
    def test_toy_model_matches_finite_differences(self):
        model, batch = toy_gradcheck_case(seed=3)
        result = gradient_check(model, batch, eps=1e-4, n_per_type=60, seed=0)
        assert result.max_rel_error < 1e-4
        assert set(result.per_type) == {"embedding", "conv", "layer_norm",
                                        "linear", "duration_head"}

    def test_fault_injection_detected(self):
        model, batch = toy_gradcheck_case(seed=3)

        def corrupt(grads):
            grads["dec1.conv.w"] = grads["dec1.conv.w"] * 1.1
            return grads

        result = gradient_check(model, batch, eps=1e-4, n_per_type=60, seed=0,
                                grad_transform=corrupt)
        assert result.max_rel_error > 1e-4


class TestTrain:
    def dataset(self, rng, n=6):
        return [toy_example(rng) for _ in range(n)]

    def test_zero_lr_constant_loss_curve(self):
        rng = np.random.default_rng(9)
        config = dataclasses.replace(TOY, learning_rate=0.0, batch_size=6,
                                     max_steps=5, dropout=0.0)
        examples = self.dataset(rng, n=6)
        result = train(examples, config, seed=1)
        totals = result.loss_curve[:, 1]
        assert np.all(totals == totals[0])

    def test_seeded_runs_identical(self):
        rng = np.random.default_rng(10)
        examples = self.dataset(rng)
        a = train(examples, TOY, seed=5)
        b = train(examples, TOY, seed=5)
        assert np.array_equal(a.loss_curve, b.loss_curve)
        for k in a.model.params:
            assert np.array_equal(a.model.params[k], b.model.params[k])

    def test_divergence_aborts_with_step(self):
        # layer norm keeps this net finite under any sane step size, so the
        # abort path needs a step absurd enough to overflow float64 products
        rng = np.random.default_rng(11)
        config = dataclasses.replace(TOY, learning_rate=1e200, max_steps=50)
        with np.errstate(over="ignore", invalid="ignore"):
            with pytest.raises(TrainingDivergedError, match="step"):
                train(self.dataset(rng), config, seed=2)

    def test_loss_decreases_on_tiny_overfit(self):
        rng = np.random.default_rng(12)
        config = dataclasses.replace(TOY, learning_rate=3e-3, batch_size=3,
                                     max_steps=150)
        examples = self.dataset(rng, n=3)
        result = train(examples, config, seed=3)
        assert result.loss_curve[-1, 1] < 0.5 * result.loss_curve[0, 1]


class TestCheckpoint:
    def test_roundtrip(self, tmp_path):
        model, _ = toy_gradcheck_case(seed=1)
        ckpt = Checkpoint(params=model.params, config=model.config,
                          speaker_ids=["a", "b", "c"], seed=17)
        path = tmp_path / "m.nsvm"
        save_checkpoint(path, ckpt)
        assert path.read_bytes()[:4] == b"NSVM"
        back = load_checkpoint(path)
        assert back.config == model.config
        assert back.speaker_ids == ["a", "b", "c"]
        assert back.seed == 17
        for k, v in model.params.items():
            assert back.params[k].shape == v.shape
            assert np.max(np.abs(back.params[k] - v)) < 1e-6  # f32 payload

    def test_save_load_save_is_stable(self, tmp_path):
        model, _ = toy_gradcheck_case(seed=2)
        ckpt = Checkpoint(params=model.params, config=model.config,
                          speaker_ids=["x"], seed=0)
        p1, p2 = tmp_path / "a.nsvm", tmp_path / "b.nsvm"
        save_checkpoint(p1, ckpt)
        save_checkpoint(p2, load_checkpoint(p1))
        assert p1.read_bytes() == p2.read_bytes()

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "junk.nsvm"
        path.write_bytes(b"JUNK" + b"\x00" * 32)
        with pytest.raises(ValidationError):
            load_checkpoint(path)


class TestModelConfig:
    def test_n_units_pinned(self):
        with pytest.raises(ValidationError):
            ModelConfig(n_units=50)

    def test_positive_dims_enforced(self):
        with pytest.raises(ValidationError):
            ModelConfig(embed_dim=0)

    def test_dilations_cycle_twice(self):
        assert ModelConfig().dilations == (1, 2, 4, 1, 2, 4)
