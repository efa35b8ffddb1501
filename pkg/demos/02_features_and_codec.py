"""From waveform to pseudo-phonemes and back.

Walks one clip through the analysis front end (mel + pitch), discretizes the
mel frames with a K-means codebook, run-length encodes the unit sequence,
and shows the resulting "text" rendering next to its duration channel.
"""

import numpy as np

from nsvkit.audioio import SynthCorpusConfig, generate_synthetic_corpus
from nsvkit.features import analyze_mel, estimate_pitch, scale_pitch
from nsvkit.ppcodec import rle_decode, rle_encode, to_text
from nsvkit.units import quantize, train_kmeans

spec = SynthCorpusConfig(n_speakers=3, clips_per_speaker=3,
                         duration_range_s=(0.8, 1.2))
manifest, clips = generate_synthetic_corpus(spec, seed=7, out_dir="demo_out/codec")

# analysis front end: 10 ms frames, 256 mel bands, autocorrelation pitch
mels = {utt: analyze_mel(clip.samples) for utt, clip in clips.items()}
utt = sorted(clips)[0]
clip = clips[utt]
mel = mels[utt]
contour = estimate_pitch(clip.samples)
print(f"{utt}: {clip.duration_s:.2f} s -> {mel.n_frames} frames x {mel.n_mels} mels")
print(f"voiced frames: {contour.voiced.sum()}/{contour.n_frames}, "
      f"median f0 {np.median(contour.f0_hz[contour.voiced]):.0f} Hz")
print(f"scaled pitch range: {scale_pitch(contour).max():.2f}")

# 100-cluster codebook over every mel frame in the corpus
frames = np.concatenate([m.values for m in mels.values()])
codebook = train_kmeans(frames, k=100, seed=0)
print(f"\ncodebook: {codebook.k} centroids x {codebook.feature_dim} dims, "
      f"{len(codebook.inertia_history)} Lloyd sweeps")

seq = quantize(mel.values, codebook, utterance_id=utt)
pp = rle_encode(seq)
print(f"units: {len(seq)} frames -> {len(pp)} pseudo-phonemes "
      f"(compression {len(seq) / len(pp):.1f}x)")
print(f"text:      {to_text(pp)}")
print(f"durations: {','.join(str(int(d)) for d in pp.durations)}")

assert np.array_equal(rle_decode(pp).indices, seq.indices)
print("round trip decode(encode(x)) == x holds")
