"""nsvkit: desk-scale non-speech vocalization synthesis.

Subpackages and modules:

- audioio: WAV I/O, resampling, corpus pruning, synthetic corpora
- features: STFT, 256-band log-mel, pitch estimation, [0,1] pitch scaling
- units: K-means discretization and the Units TSV interchange format
- ppcodec: run-length pseudo-phoneme codec and its text rendering
- acoustic: duration/pitch/mel model with verified manual backprop
- vocoder: deterministic harmonic-plus-noise synthesis
- evaluation: FID with the repeated-sampling protocol, speaker projection
- pipeline / cli: stage orchestration and the command-line interface
"""

__version__ = "0.1.0"
