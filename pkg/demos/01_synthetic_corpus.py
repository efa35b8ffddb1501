"""Render a small synthetic vocalization corpus and apply the pruning rules.

The generated clips imitate laughter: trains of short voiced bursts with an
inhale-like noise segment in the middle. Half the speakers are low-passed at
8 kHz to emulate band-limited recording conditions.
"""

from pathlib import Path

import numpy as np

from nsvkit.audioio import (
    PruneConfig,
    SynthCorpusConfig,
    generate_synthetic_corpus,
    prune_corpus,
    write_wav,
    AudioClip,
)

OUT = Path("demo_out/corpus")

spec = SynthCorpusConfig(
    n_speakers=6,
    clips_per_speaker=3,
    duration_range_s=(0.8, 1.4),
    bandlimit_fraction=0.5,
)
manifest, clips = generate_synthetic_corpus(spec, seed=42, out_dir=OUT)
print(f"rendered {len(manifest.entries)} clips for "
      f"{len(manifest.speakers())} speakers under {OUT}/")

durations = [e.duration_s for e in manifest.entries]
print(f"durations: {min(durations):.2f}..{max(durations):.2f} s, "
      f"total {sum(durations):.1f} s")

# sabotage two clips so the pruning rules have something to do
for entry in manifest.entries[:2]:
    silent = AudioClip(np.full(16000, 1e-6), 32000,
                       entry.utterance_id, entry.speaker_id)
    write_wav(entry.path, silent, fmt="float32")
print("\noverwrote 2 clips with silence; pruning:")

pruned = prune_corpus(manifest, PruneConfig())
for utterance_id, reason in pruned.prune_log:
    print(f"  removed {utterance_id}: {reason}")
print(f"kept {len(pruned.entries)} clips")
