"""Distribution-distance evaluation and speaker-space analysis.

FID here is the Fréchet distance between Gaussians fitted to fixed
512-dim utterance features (time mean ++ time std of the 256-band
log-mel). The repeated-sampling protocol draws independent sample sets,
reports mean and standard deviation over the repeats, and makes the
small-sample bias of FID directly observable.
"""

from __future__ import annotations

from dataclasses import dataclass
import struct
from pathlib import Path

import numpy as np

from .errors import InsufficientDataError, ValidationError
from .features import MelSpectrogram

UTTERANCE_FEATURE_DIM = 512


@dataclass
class GaussianStats:
    """Mean and covariance summary of a feature set."""

    mean: np.ndarray
    cov: np.ndarray
    n: int

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64)
        self.cov = np.asarray(self.cov, dtype=np.float64)
        d = self.mean.shape[0]
        if self.mean.ndim != 1 or self.cov.shape != (d, d):
            raise ValidationError("mean must be (D,) and cov (D, D)")
        if not (np.all(np.isfinite(self.mean)) and np.all(np.isfinite(self.cov))):
            raise ValidationError("stats must be finite")
        if self.n < 2:
            raise ValidationError("stats require n >= 2 samples")
        if np.max(np.abs(self.cov - self.cov.T)) > 1e-9:
            raise ValidationError("covariance must be symmetric within 1e-9")
        if np.linalg.eigvalsh(self.cov).min() < -1e-8:
            raise ValidationError("covariance must be PSD within 1e-8")

    @property
    def dim(self) -> int:
        return self.mean.shape[0]


def gaussian_stats(features: np.ndarray) -> GaussianStats:
    """Sample mean and unbiased (n-1) covariance, symmetrized."""
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2:
        raise ValidationError("features must be an n x D matrix")
    if x.shape[0] < 2:
        raise InsufficientDataError(f"need >= 2 feature vectors, got {x.shape[0]}")
    mean = x.mean(axis=0)
    xc = x - mean
    cov = xc.T @ xc / (x.shape[0] - 1)
    return GaussianStats(mean=mean, cov=(cov + cov.T) / 2.0, n=x.shape[0])


def _psd_sqrt(mat: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh(mat)
    return (v * np.sqrt(np.clip(w, 0.0, None))) @ v.T


def fid(a: GaussianStats, b: GaussianStats) -> float:
    """||mu_a - mu_b||^2 + Tr(Ca + Cb - 2 (Ca Cb)^(1/2)), clamped >= 0.

    The cross term uses the symmetric form Tr((Ca^1/2 Cb Ca^1/2)^1/2) via
    eigendecomposition; tiny negative eigenvalues are clamped to zero.
    """
    if a.dim != b.dim:
        raise ValidationError(f"dimension mismatch: {a.dim} vs {b.dim}")
    half_a = _psd_sqrt(a.cov)
    inner = half_a @ b.cov @ half_a
    inner = (inner + inner.T) / 2.0
    eigs = np.clip(np.linalg.eigvalsh(inner), 0.0, None)
    diff = a.mean - b.mean
    value = float(diff @ diff + np.trace(a.cov) + np.trace(b.cov)
                  - 2.0 * np.sqrt(eigs).sum())
    return max(value, 0.0)


@dataclass
class RepeatedFid:
    mean: float
    std: float
    values: np.ndarray
    std_defined: bool  # False when repeats == 1 (std reported as 0)


def repeated_fid(sample_source, reference: GaussianStats, n_per_eval: int,
                 repeats: int = 10, seed: int = 0) -> RepeatedFid:
    """FID of `repeats` independent draws of n_per_eval features vs reference.

    sample_source is either a feature pool (ndarray, sampled without
    replacement per repeat) or a callable (n, rng) -> features matrix.
    """
    if repeats < 1 or n_per_eval < 2:
        raise ValidationError("need repeats >= 1 and n_per_eval >= 2")
    if isinstance(sample_source, np.ndarray):
        pool = np.asarray(sample_source, dtype=np.float64)
        if len(pool) < n_per_eval:
            raise InsufficientDataError(
                f"sample pool holds {len(pool)} features, {n_per_eval} required")

        def draw(n, rng):
            return pool[rng.choice(len(pool), size=n, replace=False)]
    else:
        draw = sample_source

    values = np.zeros(repeats)
    streams = np.random.SeedSequence(seed).spawn(repeats)
    for i in range(repeats):
        feats = np.asarray(draw(n_per_eval, np.random.default_rng(streams[i])))
        if feats.shape[0] != n_per_eval:
            raise ValidationError(
                f"sample source returned {feats.shape[0]} features, "
                f"expected {n_per_eval}")
        values[i] = fid(gaussian_stats(feats), reference)
    if repeats == 1:
        return RepeatedFid(mean=float(values[0]), std=0.0, values=values,
                           std_defined=False)
    return RepeatedFid(mean=float(values.mean()), std=float(values.std(ddof=1)),
                       values=values, std_defined=True)


# --------------------------------------------------------------------------
# Utterance features
# --------------------------------------------------------------------------

def utterance_feature(mel: MelSpectrogram) -> np.ndarray:
    """Fixed clip embedding: time mean ++ time std of each log-mel band."""
    values = mel.values
    feat = np.concatenate([values.mean(axis=0), values.std(axis=0)])
    if not np.all(np.isfinite(feat)):
        raise ValidationError("non-finite utterance feature")
    return feat


# --------------------------------------------------------------------------
# Speaker-space projection
# --------------------------------------------------------------------------

@dataclass
class SpeakerProjection:
    points: list[tuple[str, float, float]]
    degenerate: bool  # all embeddings equal; every point at the origin


def project_speakers(table) -> SpeakerProjection:
    """Mean-centered PCA of the speaker table onto 2 components.

    Component signs are fixed by forcing each component's largest-magnitude
    loading positive, so output coordinates are deterministic.
    """
    ids = list(table.ids)
    emb = np.asarray(table.embeddings, dtype=np.float64)
    if len(ids) < 3:
        raise ValidationError("speaker projection needs >= 3 speakers")
    centered = emb - emb.mean(axis=0)
    if np.allclose(centered, 0.0):
        return SpeakerProjection(points=[(s, 0.0, 0.0) for s in ids], degenerate=True)
    _, _, vt = np.linalg.svd(centered, full_matrices=False)
    comps = vt[:2].copy()
    if comps.shape[0] < 2:
        comps = np.vstack([comps, np.zeros_like(comps[0])])
    for i in range(2):
        j = int(np.argmax(np.abs(comps[i])))
        if comps[i, j] < 0:
            comps[i] = -comps[i]
    scores = centered @ comps.T
    points = [(s, float(x), float(y)) for s, (x, y) in zip(ids, scores)]
    return SpeakerProjection(points=points, degenerate=False)


def write_projection_tsv(path, projection: SpeakerProjection) -> None:
    lines = ["speaker_id\tx\ty"]
    for speaker_id, x, y in projection.points:
        lines.append(f"{speaker_id}\t{x:.9g}\t{y:.9g}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


# --------------------------------------------------------------------------
# Stats file (FIDS)
# --------------------------------------------------------------------------

def write_stats(path, stats: GaussianStats) -> None:
    d = stats.dim
    Path(path).write_bytes(
        b"FIDS" + struct.pack("<I", d)
        + stats.mean.astype("<f8").tobytes()
        + np.ascontiguousarray(stats.cov, dtype="<f8").tobytes()
        + struct.pack("<Q", stats.n))


def read_stats(path) -> GaussianStats:
    data = Path(path).read_bytes()
    if data[:4] != b"FIDS":
        raise ValidationError(f"{path}: bad FIDS magic")
    (d,) = struct.unpack_from("<I", data, 4)
    mean = np.frombuffer(data, dtype="<f8", count=d, offset=8)
    cov = np.frombuffer(data, dtype="<f8", count=d * d, offset=8 + 8 * d)
    (n,) = struct.unpack_from("<Q", data, 8 + 8 * d + 8 * d * d)
    return GaussianStats(mean=mean.copy(), cov=cov.reshape(d, d).copy(), n=int(n))
