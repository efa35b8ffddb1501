"""Batch export of discrete speech units to the Units TSV format.

Runs a pretrained HuBERT encoder over a directory of WAV files, assigns
each frame feature to its nearest centroid in a 100-cluster K-means
codebook, and writes one tab-separated row per utterance:

    #frame_rate_hz=50
    utterance_id<TAB>12,12,37,...

The file is written atomically (temp file + rename) and is accepted
verbatim by the synthesis pipeline's unit importer. Clips shorter than one
encoder frame are skipped and recorded in a sidecar log next to the output.
"""

from __future__ import annotations

import argparse
import math
import os
import sys
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from scipy.io import wavfile
from scipy.signal import resample_poly

MODEL_SAMPLE_RATE = 16000
FRAME_RATE_HZ = 50
N_CLUSTERS = 100
DEFAULT_MODEL = "facebook/hubert-base-ls960"
# the customary feature layer for base-model unit extraction with 100 clusters
DEFAULT_LAYER = 6
# the encoder's convolutional front end needs at least one full receptive field
MIN_INPUT_SAMPLES = 400


class ExportError(RuntimeError):
    pass


@dataclass
class ExportJob:
    wav_dir: str
    out_path: str
    kmeans_path: str
    model_id: str = DEFAULT_MODEL
    layer: int = DEFAULT_LAYER
    frame_rate_hz: int = FRAME_RATE_HZ


def load_kmeans(path) -> np.ndarray:
    """Centroid matrix (100 x D) from an .npy file."""
    try:
        centroids = np.load(path)
    except OSError as exc:
        raise ExportError(
            f"cannot load K-means centroids from {path!r}: {exc}. "
            "Provide an .npy file holding a (100, D) float matrix.") from exc
    centroids = np.asarray(centroids, dtype=np.float64)
    if centroids.ndim != 2 or centroids.shape[0] != N_CLUSTERS:
        raise ExportError(
            f"{path}: expected ({N_CLUSTERS}, D) centroids, got {centroids.shape}")
    return centroids


def load_model(model_id: str):
    from transformers import HubertModel

    try:
        model = HubertModel.from_pretrained(model_id)
    except Exception as exc:
        raise ExportError(
            f"cannot load encoder {model_id!r}: {exc}. Pass a local checkpoint "
            "directory via --model if the hub is unreachable.") from exc
    model.eval()
    return model


def read_wav_mono_16k(path) -> np.ndarray:
    rate, data = wavfile.read(path)
    data = np.asarray(data)
    if data.dtype == np.int16:
        samples = data.astype(np.float64) / 32768.0
    elif data.dtype == np.int32:
        samples = data.astype(np.float64) / 2147483648.0
    else:
        samples = data.astype(np.float64)
    if samples.ndim > 1:
        samples = samples.mean(axis=1)
    if rate != MODEL_SAMPLE_RATE:
        g = math.gcd(int(rate), MODEL_SAMPLE_RATE)
        samples = resample_poly(samples, MODEL_SAMPLE_RATE // g, int(rate) // g)
    return samples


def encode_units(model, centroids: np.ndarray, samples: np.ndarray,
                 layer: int) -> np.ndarray:
    n_layers = model.config.num_hidden_layers
    if not 0 <= layer <= n_layers:
        raise ExportError(f"layer {layer} outside 0..{n_layers} for this model")
    with torch.no_grad():
        out = model(torch.from_numpy(samples).float()[None, :],
                    output_hidden_states=True)
    feats = out.hidden_states[layer][0].numpy().astype(np.float64)
    d2 = ((feats ** 2).sum(1)[:, None] - 2.0 * feats @ centroids.T
          + (centroids ** 2).sum(1)[None, :])
    return np.argmin(d2, axis=1)


def export_units(job: ExportJob) -> Path:
    """Run the whole job; returns the output path. Deterministic."""
    wav_dir = Path(job.wav_dir)
    wavs = sorted(wav_dir.glob("*.wav"))
    if not wavs:
        raise ExportError(f"no .wav files under {wav_dir}")
    centroids = load_kmeans(job.kmeans_path)
    model = load_model(job.model_id)

    rows = []
    skipped = []
    for wav in wavs:
        samples = read_wav_mono_16k(wav)
        if len(samples) < MIN_INPUT_SAMPLES:
            skipped.append((wav.stem, f"too short: {len(samples)} samples"))
            continue
        units = encode_units(model, centroids, samples, job.layer)
        if units.min() < 0 or units.max() >= N_CLUSTERS:
            raise ExportError(f"{wav}: unit index outside [0, {N_CLUSTERS})")
        rows.append((wav.stem, units))

    out_path = Path(job.out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    body = [f"#frame_rate_hz={job.frame_rate_hz}"]
    body += [f"{utt}\t" + ",".join(str(int(u)) for u in units)
             for utt, units in rows]
    fd, tmp_name = tempfile.mkstemp(dir=out_path.parent, suffix=".tmp")
    with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as handle:
        handle.write("\n".join(body) + "\n")
    os.replace(tmp_name, out_path)

    log_path = out_path.with_suffix(out_path.suffix + ".skipped.tsv")
    if skipped:
        log_path.write_text(
            "\n".join(f"{utt}\t{reason}" for utt, reason in skipped) + "\n",
            encoding="utf-8")
    elif log_path.exists():
        log_path.unlink()
    return out_path


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="export-units",
        description="Export HuBERT K-means speech units to Units TSV")
    parser.add_argument("--wav-dir", required=True, help="directory of WAV files")
    parser.add_argument("--out", required=True, help="output Units TSV path")
    parser.add_argument("--layer", type=int, default=DEFAULT_LAYER,
                        help=f"encoder hidden layer (default {DEFAULT_LAYER})")
    parser.add_argument("--model", default=DEFAULT_MODEL,
                        help="model id or local checkpoint directory")
    parser.add_argument("--kmeans", required=True,
                        help=".npy file of (100, D) cluster centroids")
    args = parser.parse_args(argv)
    job = ExportJob(wav_dir=args.wav_dir, out_path=args.out,
                    kmeans_path=args.kmeans, model_id=args.model,
                    layer=args.layer)
    try:
        out = export_units(job)
    except ExportError as exc:
        print(f"error\t{type(exc).__name__}\t{exc}", file=sys.stderr)
        return 1
    print(f"wrote {out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
