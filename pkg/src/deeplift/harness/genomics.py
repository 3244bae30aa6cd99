"""Simulated regulatory DNA: motif embedding, PWM scanning, match importance."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from ..errors import DataError, PlacementError

BASES = "ACGT"
BACKGROUND = (0.3, 0.2, 0.2, 0.3)
SEQ_LEN = 200
PSEUDOCOUNT = 0.05
STRONG_LOG_ODDS = 7.0

# task 0: both motifs, task 1: GATA1 present, task 2: TAL1 present
LABEL_GROUPS = ("111", "010", "001", "000")


@dataclass(frozen=True, eq=False)
class Pwm:
    """Position weight matrix over ACGT with a background distribution."""

    name: str
    matrix: np.ndarray
    background: np.ndarray = field(default_factory=lambda: np.array(BACKGROUND))

    def __post_init__(self):
        m = np.array(self.matrix, dtype=np.float64)
        bg = np.array(self.background, dtype=np.float64)
        if m.ndim != 2 or m.shape[1] != 4 or bg.shape != (4,):
            raise DataError(f"PWM {self.name}: matrix must be (length, 4), got {m.shape}")
        if np.any(m <= 0) or np.any(np.abs(m.sum(axis=1) - 1) > 1e-9):
            raise DataError(f"PWM {self.name}: rows must be positive and sum to 1")
        if np.any(bg <= 0) or abs(bg.sum() - 1) > 1e-9:
            raise DataError(f"PWM {self.name}: bad background {bg}")
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)
        object.__setattr__(self, "background", bg)

    @classmethod
    def from_frequencies(cls, name, freqs, background=BACKGROUND, pseudocount=PSEUDOCOUNT):
        f = np.asarray(freqs, dtype=np.float64)
        f = f / f.sum(axis=1, keepdims=True)
        return cls(name, (f + pseudocount) / (1 + 4 * pseudocount), np.asarray(background))

    @classmethod
    def parse(cls, text: str, background=BACKGROUND, pseudocount=PSEUDOCOUNT):
        """Parse a header line (the name) followed by one line of 4 values per position."""
        lines = [ln.strip() for ln in text.splitlines() if ln.strip()]
        if len(lines) < 2:
            raise DataError("PWM file needs a name line and at least one position")
        try:
            rows = [[float(v) for v in ln.split()] for ln in lines[1:]]
        except ValueError as exc:
            raise DataError(f"PWM {lines[0]}: {exc}") from None
        if any(len(r) != 4 for r in rows):
            raise DataError(f"PWM {lines[0]}: every position needs 4 values")
        return cls.from_frequencies(lines[0], rows, background, pseudocount)

    @classmethod
    def load(cls, path, **kwargs):
        return cls.parse(Path(path).read_text(), **kwargs)

    @classmethod
    def shipped(cls, name: str):
        text = resources.files("deeplift.data").joinpath(f"{name.lower()}.pwm").read_text()
        return cls.parse(text)

    def __len__(self):
        return self.matrix.shape[0]

    @property
    def log_odds(self) -> np.ndarray:
        return np.log(self.matrix / self.background)

    @property
    def consensus(self) -> str:
        return "".join(BASES[i] for i in self.matrix.argmax(axis=1))

    def score(self, window: str) -> float:
        if len(window) != len(self):
            raise DataError(f"window of length {len(window)} vs PWM length {len(self)}")
        idx = [BASES.index(b) for b in window.upper()]
        return float(sum(self.log_odds[p, b] for p, b in enumerate(idx)))

    def sample(self, rng) -> str:
        return "".join(BASES[rng.choice(4, p=row)] for row in self.matrix)


def one_hot(sequence: str) -> np.ndarray:
    idx = np.array([BASES.index(b) for b in sequence.upper()])
    out = np.zeros((len(sequence), 4))
    out[np.arange(len(sequence)), idx] = 1.0
    return out


def decode(onehot) -> str:
    return "".join(BASES[i] for i in np.asarray(onehot).argmax(axis=1))


@dataclass(frozen=True)
class EmbeddedMotif:
    name: str
    start: int
    instance: str


@dataclass(frozen=True)
class SimSequence:
    id: int
    sequence: str
    labels: str
    motifs: tuple = ()

    @property
    def onehot(self) -> np.ndarray:
        return one_hot(self.sequence)

    @property
    def label_vector(self) -> np.ndarray:
        return np.array([int(c) for c in self.labels])


def _place(rng, length, occupied, width, max_retries):
    for _ in range(max_retries):
        start = int(rng.integers(0, length - width + 1))
        if all(start + width <= s or e <= start for s, e in occupied):
            return start
    raise PlacementError(f"could not place a motif of width {width} without overlap")


def generate_dataset(n: int, seed: int, pwm_gata1: Optional[Pwm] = None, pwm_tal1: Optional[Pwm] = None,
                     length: int = SEQ_LEN, max_retries: int = 1000) -> list:
    """Simulate ``n`` sequences, a quarter in each label group 111/010/001/000.

    Background bases are drawn from (0.3, 0.2, 0.2, 0.3). Each motif present
    in a sequence gets 1-3 instances sampled from its PWM at non-overlapping
    uniform positions.
    """
    if n <= 0 or n % 4:
        raise DataError(f"n must be a positive multiple of 4, got {n}")
    gata = pwm_gata1 or Pwm.shipped("gata1")
    tal = pwm_tal1 or Pwm.shipped("tal1")
    rng = np.random.default_rng(seed)
    out = []
    for k in range(n):
        labels = LABEL_GROUPS[k * 4 // n]
        bases = list(np.array(list(BASES))[rng.choice(4, size=length, p=BACKGROUND)])
        occupied, motifs = [], []
        for pwm, present in ((gata, labels[1] == "1"), (tal, labels[2] == "1")):
            if not present:
                continue
            for _ in range(int(rng.integers(1, 4))):
                instance = pwm.sample(rng)
                start = _place(rng, length, occupied, len(pwm), max_retries)
                occupied.append((start, start + len(pwm)))
                bases[start : start + len(pwm)] = list(instance)
                motifs.append(EmbeddedMotif(pwm.name, start, instance))
        motifs.sort(key=lambda m: m.start)
        out.append(SimSequence(k, "".join(bases), labels, tuple(motifs)))
    return out


def dataset_arrays(seqs: Sequence[SimSequence]):
    x = np.stack([s.onehot for s in seqs])
    y = np.stack([s.label_vector for s in seqs]).astype(np.float64)
    return x, y


_TSV_FIELDS = ["id", "labels", "sequence", "motifs"]


def write_dataset(seqs: Iterable[SimSequence], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, delimiter="\t", lineterminator="\n")
        w.writerow(_TSV_FIELDS)
        for s in seqs:
            motifs = ";".join(f"{m.name}:{m.start}:{m.instance}" for m in s.motifs)
            w.writerow([s.id, s.labels, s.sequence, motifs])


def read_dataset(path) -> list:
    seqs = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh, delimiter="\t"):
            motifs = tuple(
                EmbeddedMotif(name, int(start), inst)
                for name, start, inst in (m.split(":") for m in row["motifs"].split(";") if m)
            )
            seqs.append(SimSequence(int(row["id"]), row["sequence"], row["labels"], motifs))
    return seqs


# --------------------------------------------------------------- matches


@dataclass
class MotifMatch:
    seq_id: int
    seq_labels: str
    motif: str
    start: int
    length: int
    log_odds: float
    importance: dict = field(default_factory=dict)

    @property
    def end(self):
        return self.start + self.length


def log_odds_track(sequence: str, pwm: Pwm) -> np.ndarray:
    """Log-odds of the PWM against background at every offset."""
    idx = np.array([BASES.index(b) for b in sequence.upper()])
    width = len(pwm)
    if width > len(idx):
        raise DataError("PWM longer than sequence")
    lo = pwm.log_odds
    n = len(idx) - width + 1
    track = np.zeros(n)
    for p in range(width):
        track += lo[p, idx[p : p + n]]
    return track


def scan_matches(seq: SimSequence, pwm: Pwm, top_k: int = 5) -> list:
    """Top ``top_k`` non-overlapping matches, picked greedily from the highest."""
    track = log_odds_track(seq.sequence, pwm)
    order = np.argsort(-track, kind="stable")
    picked = []
    width = len(pwm)
    for start in order:
        if len(picked) == top_k:
            break
        start = int(start)
        if all(start + width <= m.start or m.end <= start for m in picked):
            picked.append(MotifMatch(seq.id, seq.labels, pwm.name, start, width, float(track[start])))
    return picked


def aggregate_match_importance(match: MotifMatch, scores) -> float:
    """Total score over the match span (all channels)."""
    scores = np.asarray(getattr(scores, "scores", scores))
    if match.start < 0 or match.end > scores.shape[0]:
        raise DataError(f"match span [{match.start}, {match.end}) outside input of length {scores.shape[0]}")
    return float(np.sum(scores[match.start : match.end]))


def false_negative_rate(matches: Sequence[MotifMatch], method: str, task: int = 0,
                        threshold_logodds: float = STRONG_LOG_ODDS, motif: Optional[str] = None,
                        labels: str = "111") -> float:
    """Share of strong matches in ``labels`` sequences whose total importance
    for ``task`` under ``method`` is <= 0."""
    strong = [
        m for m in matches
        if m.log_odds > threshold_logodds and m.seq_labels == labels and (motif is None or m.motif == motif)
    ]
    if not strong:
        raise DataError("no strong matches to evaluate")
    misses = sum(1 for m in strong if m.importance[(method, task)] <= 0)
    return misses / len(strong)
