"""Run-length pseudo-phoneme codec.

A frame-level unit sequence is split losslessly into two equal-length
sequences: the units with consecutive repeats collapsed, and the repeat
counts (durations). The collapsed units additionally render as a compact
character string, one Latin Extended-A letter per pseudo-phoneme starting
at U+0100; durations always travel separately, next to the text.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import UnitsParseError, ValidationError
from .units import N_UNITS, UnitSequence

ALPHABET_BASE = 0x0100  # "Ā"; alphabet covers U+0100 .. U+0163


@dataclass
class PseudoPhonemeSequence:
    """Paired non-repeating unit indices and positive integer durations."""

    units: np.ndarray
    durations: np.ndarray
    frame_rate_hz: int
    utterance_id: str = ""
    speaker_id: str = field(default="", compare=False)

    def __post_init__(self):
        self.units = np.asarray(self.units, dtype=np.int64)
        self.durations = np.asarray(self.durations, dtype=np.int64)
        self.validate()

    def validate(self) -> None:
        if self.units.ndim != 1 or self.durations.ndim != 1:
            raise ValidationError("units and durations must be 1-D sequences")
        if len(self.units) != len(self.durations):
            raise ValidationError(
                f"units ({len(self.units)}) and durations ({len(self.durations)}) "
                "must have equal length")
        if self.units.size:
            if self.units.min() < 0 or self.units.max() >= N_UNITS:
                raise ValidationError(f"unit indices must lie in [0, {N_UNITS})")
            if self.durations.min() < 1:
                raise ValidationError("durations must be >= 1")
            if np.any(self.units[1:] == self.units[:-1]):
                raise ValidationError("consecutive pseudo-phonemes must differ")

    def __len__(self) -> int:
        return len(self.units)

    @property
    def total_frames(self) -> int:
        return int(self.durations.sum())


def rle_encode(seq: UnitSequence) -> PseudoPhonemeSequence:
    """Collapse consecutive repeats into (unit, duration) pairs."""
    idx = seq.indices
    if idx.size == 0:
        return PseudoPhonemeSequence(
            units=np.empty(0, dtype=np.int64), durations=np.empty(0, dtype=np.int64),
            frame_rate_hz=seq.frame_rate_hz, utterance_id=seq.utterance_id)
    starts = np.concatenate([[0], np.nonzero(idx[1:] != idx[:-1])[0] + 1])
    lengths = np.diff(np.concatenate([starts, [len(idx)]]))
    return PseudoPhonemeSequence(
        units=idx[starts], durations=lengths,
        frame_rate_hz=seq.frame_rate_hz, utterance_id=seq.utterance_id)


def rle_decode(pp: PseudoPhonemeSequence) -> UnitSequence:
    """Expand each pseudo-phoneme by its duration (inverse of rle_encode)."""
    pp.validate()
    return UnitSequence(indices=np.repeat(pp.units, pp.durations),
                        frame_rate_hz=pp.frame_rate_hz,
                        utterance_id=pp.utterance_id)


def to_text(pp: PseudoPhonemeSequence) -> str:
    """Render the unit channel as characters; durations are not encoded."""
    if pp.units.size and pp.units.max() >= N_UNITS:
        raise ValidationError(f"unit index {int(pp.units.max())} has no letter")
    return (ALPHABET_BASE + pp.units.astype("<u4")).tobytes().decode("utf-32-le")


def from_text(s: str) -> np.ndarray:
    """Inverse of to_text: one unit index per character."""
    codes = np.frombuffer(s.encode("utf-32-le"), dtype="<u4").astype(np.int64)
    codes -= ALPHABET_BASE
    bad = (codes < 0) | (codes >= N_UNITS)
    if bad.any():
        pos = int(np.argmax(bad))
        raise UnitsParseError(
            f"character {s[pos]!r} at position {pos} is outside the "
            f"pseudo-phoneme alphabet U+0100..U+{ALPHABET_BASE + N_UNITS - 1:04X}")
    return codes


# --------------------------------------------------------------------------
# Pseudo-phoneme TSV
# --------------------------------------------------------------------------

def write_pp_tsv(path, sequences: list[PseudoPhonemeSequence]) -> None:
    lines = []
    for pp in sequences:
        durations = ",".join(str(int(d)) for d in pp.durations)
        lines.append("\t".join(
            [pp.utterance_id, pp.speaker_id, to_text(pp), durations,
             str(pp.frame_rate_hz)]))
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")


def read_pp_tsv(path) -> list[PseudoPhonemeSequence]:
    path = Path(path)
    out = []
    for lineno, line in enumerate(path.read_text(encoding="utf-8").split("\n"), start=1):
        if not line.strip():
            continue
        cols = line.split("\t")
        if len(cols) != 5:
            raise UnitsParseError(f"{path}: line {lineno}: expected 5 columns")
        utt, speaker, text, dur_csv, rate = cols
        units = from_text(text)
        durations = np.array([int(v) for v in dur_csv.split(",")] if dur_csv else [],
                             dtype=np.int64)
        out.append(PseudoPhonemeSequence(
            units=units, durations=durations, frame_rate_hz=int(rate),
            utterance_id=utt, speaker_id=speaker))
    return out
