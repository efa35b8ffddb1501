import numpy as np
import pytest

from nsvkit import audioio
from nsvkit.audioio import (
    AudioClip,
    CorpusManifest,
    ManifestEntry,
    PruneConfig,
    SynthCorpusConfig,
    generate_synthetic_corpus,
    prune_corpus,
    read_manifest,
    read_wav,
    resample,
    write_manifest,
    write_wav,
)
from nsvkit.errors import (
    AudioDecodeError,
    EmptyClipError,
    EmptyCorpusError,
    UnsupportedFormatError,
    ValidationError,
)


def tone(freq_hz, duration_s, fs, amp=0.5):
    t = np.arange(int(duration_s * fs)) / fs
    return amp * np.sin(2 * np.pi * freq_hz * t)


class TestWavIO:
    def test_pcm16_roundtrip_length(self, tmp_path):
        clip = AudioClip(tone(440, 1.0, 32000), 32000, utterance_id="a")
        path = tmp_path / "a.wav"
        write_wav(path, clip)
        back = read_wav(path)
        assert len(back.samples) == 32000
        assert back.sample_rate_hz == 32000
        assert np.max(np.abs(back.samples - clip.samples)) < 1.0 / 32000

    def test_float32_roundtrip(self, tmp_path):
        clip = AudioClip(tone(440, 0.5, 32000), 32000)
        path = tmp_path / "f.wav"
        write_wav(path, clip, fmt="float32")
        back = read_wav(path)
        assert np.max(np.abs(back.samples - clip.samples)) < 1e-6

    def test_zero_sample_file_is_error(self, tmp_path):
        clip = AudioClip(tone(440, 0.1, 32000), 32000)
        path = tmp_path / "z.wav"
        write_wav(path, clip)
        data = bytearray(path.read_bytes())
        # shrink the data chunk to zero bytes
        data[40:44] = (0).to_bytes(4, "little")
        path.write_bytes(bytes(data[:44]))
        with pytest.raises(EmptyClipError):
            read_wav(path)

    def test_stereo_opposite_channels_average_to_zero(self, tmp_path):
        import struct

        x = (tone(100, 0.1, 32000) * 32767).astype("<i2")
        interleaved = np.empty(2 * len(x), dtype="<i2")
        interleaved[0::2] = x
        interleaved[1::2] = -x
        payload = interleaved.tobytes()
        header = struct.pack(
            "<4sI4s4sIHHIIHH4sI", b"RIFF", 36 + len(payload), b"WAVE",
            b"fmt ", 16, 1, 2, 32000, 32000 * 4, 4, 16, b"data", len(payload))
        path = tmp_path / "st.wav"
        path.write_bytes(header + payload)
        clip = read_wav(path)
        # x and -x differ by one LSB after two's complement; average is sub-LSB
        assert np.max(np.abs(clip.samples)) <= 1.0 / 32768

    def test_bad_magic_names_offset(self, tmp_path):
        path = tmp_path / "bad.wav"
        path.write_bytes(b"JUNKJUNKJUNKJUNK")
        with pytest.raises(AudioDecodeError, match="offset 0"):
            read_wav(path)

    def test_truncated_chunk_names_offset(self, tmp_path):
        clip = AudioClip(tone(440, 0.1, 32000), 32000)
        path = tmp_path / "t.wav"
        write_wav(path, clip)
        data = path.read_bytes()
        path.write_bytes(data[: len(data) // 2])
        with pytest.raises(AudioDecodeError, match="offset"):
            read_wav(path)

    def test_unsupported_codec(self, tmp_path):
        import struct

        header = struct.pack(
            "<4sI4s4sIHHIIHH4sI", b"RIFF", 40, b"WAVE",
            b"fmt ", 16, 7, 1, 8000, 8000, 1, 8, b"data", 4)
        path = tmp_path / "ulaw.wav"
        path.write_bytes(header + b"\x00" * 4)
        with pytest.raises(UnsupportedFormatError):
            read_wav(path)


class TestResample:
    def test_48k_to_32k_length(self):
        clip = AudioClip(tone(440, 1.0, 48000), 48000)
        out = resample(clip, 32000)
        assert len(out.samples) == 32000
        assert out.sample_rate_hz == 32000

    def test_identity_is_bit_exact(self):
        clip = AudioClip(tone(440, 0.25, 32000), 32000)
        out = resample(clip, 32000)
        assert np.array_equal(out.samples, clip.samples)

    def test_bad_rate_rejected(self):
        clip = AudioClip(tone(440, 0.25, 32000), 32000)
        with pytest.raises(ValidationError):
            resample(clip, 0)

    def test_1khz_peak_preserved(self):
        # FFT oracle: integer number of cycles in the analyzed segment
        fs_in, fs_out = 48000, 32000
        clip = AudioClip(tone(1000, 2.0, fs_in), fs_in)
        out = resample(clip, fs_out)
        seg = out.samples[16000:48000]
        spectrum = np.abs(np.fft.rfft(seg))
        peak_bin = int(np.argmax(spectrum))
        assert peak_bin == 1000  # 1 Hz per bin over 32000 samples
        amp = 2.0 * spectrum[peak_bin] / len(seg)
        assert abs(amp - 0.5) < 0.005

    def test_alias_attenuation_beyond_60db(self):
        # an 18 kHz tone has no home below the 16 kHz target Nyquist
        fs_in = 48000
        clip = AudioClip(tone(18000, 1.0, fs_in), fs_in)
        out = resample(clip, 32000)
        interior = out.samples[2000:-2000]
        residual_db = 20 * np.log10(np.sqrt(np.mean(interior ** 2)) / np.sqrt(0.125)
                                    + 1e-30)
        assert residual_db < -60.0

    def test_there_and_back_again(self):
        clip = AudioClip(tone(1000, 2.0, 48000), 48000)
        back = resample(resample(clip, 32000), 48000)
        assert len(back.samples) == len(clip.samples)
        seg = back.samples[24000:72000]
        spectrum = np.abs(np.fft.rfft(seg))
        assert int(np.argmax(spectrum)) == 1000
        amp = 2.0 * spectrum[1000] / len(seg)
        assert abs(amp - 0.5) < 0.01  # within 2%

    def test_upsampling_allowed(self):
        clip = AudioClip(tone(440, 0.5, 16000), 16000)
        out = resample(clip, 32000)
        assert len(out.samples) == 16000


def make_manifest(tmp_path, specs):
    """specs: list of (utt, speaker, emotion, amplitude)."""
    entries = []
    clips = {}
    for utt, speaker, emotion, amp in specs:
        samples = tone(200, 0.3, 32000, amp=amp) if amp > 0 \
            else np.full(9600, 1e-6)
        clip = AudioClip(samples, 32000, utt, speaker, emotion)
        path = tmp_path / f"{utt}.wav"
        write_wav(path, clip, fmt="float32")
        clips[utt] = clip
        entries.append(ManifestEntry(utt, speaker, emotion, str(path),
                                     clip.duration_s))
    return CorpusManifest(entries=entries), clips


class TestPrune:
    def test_silent_clips_removed(self, tmp_path):
        specs = [(f"u{i}", f"s{i % 4}", "synthetic", 0.5) for i in range(10)]
        specs += [(f"q{i}", f"s{i % 4}", "synthetic", 0.0) for i in range(3)]
        manifest, clips = make_manifest(tmp_path, specs)
        pruned = prune_corpus(manifest, PruneConfig(), clips)
        assert len(pruned.entries) == 10
        assert sorted(r for _, r in pruned.prune_log) == ["silent"] * 3

    def test_excluded_emotion_reason(self, tmp_path):
        manifest, clips = make_manifest(tmp_path, [
            ("a", "s0", "Amusement", 0.5),
            ("b", "s0", "Triumph", 0.5),
            ("c", "s1", "Horror", 0.5),
        ])
        pruned = prune_corpus(manifest, PruneConfig(), clips)
        assert [e.utterance_id for e in pruned.entries] == ["a"]
        assert ("b", "excluded-emotion") in pruned.prune_log
        assert ("c", "excluded-emotion") in pruned.prune_log

    def test_low_volume_speaker_takes_precedence_over_silent(self, tmp_path):
        # all three clips sit at roughly -50 dBFS: below both thresholds,
        # but the speaker-level rule is decided first
        specs = [(f"lv{i}", "quiet", "synthetic", 0.00447) for i in range(3)]
        specs += [("loud0", "ok", "synthetic", 0.5)]
        manifest, clips = make_manifest(tmp_path, specs)
        pruned = prune_corpus(manifest, PruneConfig(), clips)
        reasons = dict(pruned.prune_log)
        assert all(reasons[f"lv{i}"] == "low-volume-speaker" for i in range(3))
        assert len(pruned.entries) == 1

    def test_idempotent(self, tmp_path):
        specs = [(f"u{i}", f"s{i % 3}", "synthetic", 0.4) for i in range(6)]
        specs += [("quiet", "s0", "synthetic", 0.001)]
        manifest, clips = make_manifest(tmp_path, specs)
        once = prune_corpus(manifest, PruneConfig(), clips)
        twice = prune_corpus(once, PruneConfig(), clips)
        assert [e.utterance_id for e in twice.entries] == \
            [e.utterance_id for e in once.entries]
        # second application logged nothing new
        assert len(twice.prune_log) == len(once.prune_log)

    def test_empty_result_is_error(self, tmp_path):
        manifest, clips = make_manifest(tmp_path, [("a", "s0", "Triumph", 0.5)])
        with pytest.raises(EmptyCorpusError):
            prune_corpus(manifest, PruneConfig(), clips)


class TestManifestIO:
    def test_roundtrip(self, tmp_path):
        manifest, _ = make_manifest(tmp_path, [("a", "s0", "Awe", 0.5),
                                               ("b", "s1", "Fear", 0.4)])
        path = tmp_path / "manifest.tsv"
        write_manifest(path, manifest)
        back = read_manifest(path)
        assert back.entries == manifest.entries

    def test_duplicate_ids_rejected(self):
        entry = ManifestEntry("a", "s", "synthetic", "x.wav", 1.0)
        with pytest.raises(ValidationError, match="duplicate"):
            CorpusManifest(entries=[entry, entry])


class TestSyntheticCorpus:
    def test_deterministic_bytes(self, tmp_path):
        spec = SynthCorpusConfig(n_speakers=3, clips_per_speaker=2,
                                 duration_range_s=(0.5, 0.8))
        m1, _ = generate_synthetic_corpus(spec, seed=7, out_dir=tmp_path / "a")
        m2, _ = generate_synthetic_corpus(spec, seed=7, out_dir=tmp_path / "b")
        assert len(m1.entries) == 6
        for e1, e2 in zip(m1.entries, m2.entries):
            assert (tmp_path / "a" / f"{e1.utterance_id}.wav").read_bytes() == \
                (tmp_path / "b" / f"{e2.utterance_id}.wav").read_bytes()

    def test_seed_changes_audio(self, tmp_path):
        spec = SynthCorpusConfig(n_speakers=2, clips_per_speaker=1,
                                 duration_range_s=(0.5, 0.6))
        _, clips7 = generate_synthetic_corpus(spec, 7, tmp_path / "s7")
        _, clips8 = generate_synthetic_corpus(spec, 8, tmp_path / "s8")
        utt = next(iter(clips7))
        a, b = clips7[utt].samples, clips8[utt].samples
        n = min(len(a), len(b))
        assert not np.array_equal(a[:n], b[:n])

    def test_zero_clips_is_error(self, tmp_path):
        spec = SynthCorpusConfig(n_speakers=2, clips_per_speaker=0)
        with pytest.raises(EmptyCorpusError):
            generate_synthetic_corpus(spec, 1, tmp_path)

    def test_inverted_duration_range_rejected(self):
        with pytest.raises(ValidationError):
            SynthCorpusConfig(duration_range_s=(2.0, 1.0))

    def test_clips_have_two_voiced_segments(self, tmp_path):
        from nsvkit import features

        spec = SynthCorpusConfig(n_speakers=2, clips_per_speaker=2,
                                 duration_range_s=(0.8, 1.2))
        _, clips = generate_synthetic_corpus(spec, 3, tmp_path)
        for clip in clips.values():
            contour = features.estimate_pitch(clip.samples)
            flags = contour.voiced.astype(int)
            transitions = np.diff(np.concatenate([[0], flags, [0]]))
            n_runs = int((transitions == 1).sum())
            assert n_runs >= 2, clip.utterance_id
