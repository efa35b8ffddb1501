"""Frame discretization: K-means codebooks over frame features and the
Units TSV interchange format for externally computed unit sequences.

The built-in feature source is the 256-dim log-mel frame at 100 Hz, which
keeps unit frames aligned one-to-one with mel frames. Imported unit files
may run at other rates (e.g. 50 Hz); the rate travels in the file header.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import InsufficientDataError, UnitsParseError, ValidationError

N_UNITS = 100


@dataclass
class Codebook:
    centroids: np.ndarray
    frame_rate_hz: int
    inertia_history: list[float] = field(default_factory=list, repr=False)

    def __post_init__(self):
        self.centroids = np.asarray(self.centroids, dtype=np.float64)
        if self.centroids.ndim != 2 or self.centroids.shape[0] < 1:
            raise ValidationError("centroids must be a k x D matrix")
        if not np.all(np.isfinite(self.centroids)):
            raise ValidationError("centroids must be finite")
        if len(np.unique(self.centroids, axis=0)) != len(self.centroids):
            raise ValidationError("centroids must be pairwise distinct")

    @property
    def k(self) -> int:
        return self.centroids.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.centroids.shape[1]


@dataclass
class UnitSequence:
    indices: np.ndarray
    frame_rate_hz: int
    utterance_id: str = ""

    def __post_init__(self):
        self.indices = np.asarray(self.indices, dtype=np.int64)
        if self.indices.ndim != 1:
            raise ValidationError("unit indices must be a 1-D sequence")
        if self.indices.size and (self.indices.min() < 0 or self.indices.max() >= N_UNITS):
            raise ValidationError(f"unit indices must lie in [0, {N_UNITS})")

    def __len__(self) -> int:
        return len(self.indices)


def _pairwise_sq_dist(x: np.ndarray, c: np.ndarray) -> np.ndarray:
    d = (x ** 2).sum(axis=1)[:, None] - 2.0 * x @ c.T + (c ** 2).sum(axis=1)[None, :]
    return np.maximum(d, 0.0)


def _kmeanspp_init(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = len(x)
    centers = np.empty((k, x.shape[1]))
    centers[0] = x[rng.integers(n)]
    closest = _pairwise_sq_dist(x, centers[:1]).ravel()
    for i in range(1, k):
        total = closest.sum()
        if total <= 0:
            # all remaining points coincide with chosen centers; pick any unused
            centers[i] = x[rng.integers(n)]
        else:
            centers[i] = x[rng.choice(n, p=closest / total)]
        closest = np.minimum(closest, _pairwise_sq_dist(x, centers[i:i + 1]).ravel())
    return centers


def train_kmeans(features: np.ndarray, k: int = N_UNITS, seed: int = 0,
                 frame_rate_hz: int = 100, max_iter: int = 300,
                 rel_tol: float = 1e-6) -> Codebook:
    """Lloyd's algorithm with seeded k-means++ initialization.

    Stops when the relative inertia improvement falls under rel_tol or after
    max_iter sweeps. Inertia is checked to be non-increasing every sweep;
    emptied clusters are re-seeded with the point farthest from its center.
    """
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2:
        raise ValidationError("features must be an n x D matrix")
    if len(np.unique(x, axis=0)) < k:
        raise InsufficientDataError(
            f"k-means with k={k} needs >= {k} distinct points, "
            f"got {len(np.unique(x, axis=0))}")

    rng = np.random.default_rng(seed)
    centers = _kmeanspp_init(x, k, rng)
    history: list[float] = []
    prev = np.inf
    for _ in range(max_iter):
        d = _pairwise_sq_dist(x, centers)
        labels = np.argmin(d, axis=1)
        inertia = float(d[np.arange(len(x)), labels].sum())
        if inertia > prev * (1.0 + 1e-12):
            raise AssertionError("k-means inertia increased between sweeps")
        history.append(inertia)
        if prev - inertia < rel_tol * max(prev, 1e-30) and prev < np.inf:
            break
        prev = inertia

        new_centers = centers.copy()
        for j in range(k):
            members = labels == j
            if members.any():
                new_centers[j] = x[members].mean(axis=0)
            else:
                worst = int(np.argmax(d[np.arange(len(x)), labels]))
                new_centers[j] = x[worst]
                labels[worst] = j
        centers = new_centers

    return Codebook(centroids=centers, frame_rate_hz=frame_rate_hz,
                    inertia_history=history)


def quantize(features: np.ndarray, codebook: Codebook,
             utterance_id: str = "") -> UnitSequence:
    """Assign each frame to its nearest centroid (ties -> lowest index)."""
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != codebook.feature_dim:
        raise ValidationError(
            f"feature dim {x.shape[-1] if x.ndim == 2 else '?'} does not match "
            f"codebook dim {codebook.feature_dim}")
    labels = np.argmin(_pairwise_sq_dist(x, codebook.centroids), axis=1)
    return UnitSequence(indices=labels, frame_rate_hz=codebook.frame_rate_hz,
                        utterance_id=utterance_id)


# --------------------------------------------------------------------------
# Units TSV interchange
# --------------------------------------------------------------------------

def import_units(path) -> dict[str, UnitSequence]:
    """Parse a Units TSV file: '#key=value' header lines (frame_rate_hz
    required), then one 'utterance_id<TAB>i,i,i' row per clip."""
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    header: dict[str, str] = {}
    out: dict[str, UnitSequence] = {}
    for lineno, line in enumerate(text.split("\n"), start=1):
        if not line.strip():
            continue
        if line.startswith("#"):
            if "=" not in line:
                raise UnitsParseError(f"{path}: line {lineno}: malformed header line")
            key, value = line[1:].split("=", 1)
            header[key.strip()] = value.strip()
            continue
        if "frame_rate_hz" not in header:
            raise UnitsParseError(f"{path}: line {lineno}: missing frame_rate_hz header")
        cols = line.split("\t")
        if len(cols) != 2:
            raise UnitsParseError(f"{path}: line {lineno}: expected 2 columns")
        utt, csv = cols
        if utt in out:
            raise UnitsParseError(f"{path}: line {lineno}: duplicate utterance {utt!r}")
        try:
            indices = [int(v) for v in csv.split(",")] if csv else []
        except ValueError:
            raise UnitsParseError(f"{path}: line {lineno}: non-integer unit index") from None
        bad = [v for v in indices if not 0 <= v < N_UNITS]
        if bad:
            raise UnitsParseError(
                f"{path}: line {lineno}: unit index {bad[0]} outside [0, {N_UNITS})")
        rate = int(header["frame_rate_hz"])
        out[utt] = UnitSequence(indices=np.array(indices, dtype=np.int64),
                                frame_rate_hz=rate, utterance_id=utt)
    if "frame_rate_hz" not in header and out:
        raise UnitsParseError(f"{path}: missing frame_rate_hz header")
    return out


def write_units(path, sequences: list[UnitSequence], frame_rate_hz: int) -> None:
    lines = [f"#frame_rate_hz={frame_rate_hz}"]
    for seq in sequences:
        if seq.frame_rate_hz != frame_rate_hz:
            raise ValidationError(
                f"sequence {seq.utterance_id!r} rate {seq.frame_rate_hz} != {frame_rate_hz}")
        lines.append(seq.utterance_id + "\t" + ",".join(str(int(i)) for i in seq.indices))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
