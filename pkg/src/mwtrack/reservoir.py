"""Time-weighted reservoir buffers for streaming training samples.

Each arriving sample gets a time weight w = q^frame and a random key
k = u^(1/w); a capacity-bounded buffer keeps the samples with the
largest keys, evicting the minimum-key entry when a larger key arrives.
With q > 1 the key distribution biases retention toward recent frames
while still letting old samples survive.

Keys are never materialized directly: q^frame overflows on long
streams, so entries are ordered through the monotone transform
log(-log u) - frame * log(q), which decreases as k increases. All
comparisons use this sort key; the nominal key in (0, 1) is exposed as
a derived property.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .metric import Triplet

FOREGROUND = "foreground"
BACKGROUND = "background"

_entry_counter = itertools.count()


@dataclass(frozen=True)
class SamplerConfig:
    """Buffer capacity and the time-weight base q (q >= 1)."""

    capacity: int = 300
    q_factor: float = 1.6


@dataclass
class BufferEntry:
    sample: np.ndarray
    frame_index: int
    log_q: float
    # log(-log u) - frame_index * log q; smaller means larger key.
    sort_key: float
    entry_id: int

    @property
    def weight(self) -> float:
        return math.exp(self.frame_index * self.log_q)

    @property
    def key(self) -> float:
        # k = u^(1/w) = exp(-exp(sort_key)), overflow-free.
        return math.exp(-math.exp(self.sort_key))


@dataclass
class InsertOutcome:
    """What happened to a streamed sample.

    ``entry`` is always the freshly keyed entry. When the buffer was
    full and the new key lost, ``inserted`` is False and the entry was
    rejected; when an old entry made room, it is in ``evicted``.
    """

    entry: BufferEntry
    inserted: bool
    evicted: BufferEntry | None = None


class SampleBuffer:
    """Capacity-bounded, key-ordered reservoir of same-label samples."""

    def __init__(self, capacity: int, label: str):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        if label not in (FOREGROUND, BACKGROUND):
            raise ValueError(f"unknown label {label!r}")
        self.capacity = capacity
        self.label = label
        self.entries: list[BufferEntry] = []
        self._min_index: int | None = None

    def __len__(self) -> int:
        return len(self.entries)

    def insert(
        self, sample: np.ndarray, frame_index: int, cfg: SamplerConfig, rng
    ) -> InsertOutcome:
        """Stream one sample through the weighted reservoir.

        Below capacity the sample is always kept. At capacity it
        replaces the minimum-key entry iff its key is strictly larger.
        """
        if cfg.q_factor < 1.0:
            raise ValueError("q_factor must be >= 1")
        u = rng.random()
        while u == 0.0:
            u = rng.random()
        log_q = math.log(cfg.q_factor)
        sort_key = math.log(-math.log(u)) - frame_index * log_q
        entry = BufferEntry(
            sample=np.asarray(sample, dtype=float),
            frame_index=frame_index,
            log_q=log_q,
            sort_key=sort_key,
            entry_id=next(_entry_counter),
        )
        if len(self.entries) < self.capacity:
            self.entries.append(entry)
            if self._min_index is not None and not self._beats(
                entry, self.entries[self._min_index]
            ):
                self._min_index = len(self.entries) - 1
            return InsertOutcome(entry=entry, inserted=True)

        victim_idx = self._find_min_index()
        victim = self.entries[victim_idx]
        if self._beats(entry, victim):
            self.entries[victim_idx] = entry
            self._min_index = None
            return InsertOutcome(entry=entry, inserted=True, evicted=victim)
        return InsertOutcome(entry=entry, inserted=False)

    def min_key_entry(self) -> BufferEntry:
        """Entry with the smallest key; ties break on lowest entry_id."""
        if not self.entries:
            raise ValueError("buffer is empty")
        return self.entries[self._find_min_index()]

    @staticmethod
    def _beats(challenger: BufferEntry, holder: BufferEntry) -> bool:
        # Strictly larger key, i.e. strictly smaller sort key.
        return challenger.sort_key < holder.sort_key

    def _find_min_index(self) -> int:
        if self._min_index is None:
            best = 0
            for i in range(1, len(self.entries)):
                e, b = self.entries[i], self.entries[best]
                if e.sort_key > b.sort_key or (
                    e.sort_key == b.sort_key and e.entry_id < b.entry_id
                ):
                    best = i
            self._min_index = best
        return self._min_index


def generate_triplets(
    fg: SampleBuffer,
    bg: SampleBuffer,
    anchor: np.ndarray,
    anchor_label: str,
    count: int,
    rng,
) -> list[Triplet]:
    """Draw proximity triplets around ``anchor`` from the two buffers.

    Positives come uniformly from the buffer sharing ``anchor_label``,
    negatives from the other buffer. Either buffer being empty skips
    triplet generation for the frame.
    """
    same = fg if anchor_label == FOREGROUND else bg
    other = bg if anchor_label == FOREGROUND else fg
    if not same.entries or not other.entries or count <= 0:
        return []
    pos_idx = rng.integers(0, len(same.entries), size=count)
    neg_idx = rng.integers(0, len(other.entries), size=count)
    return [
        Triplet(
            anchor=anchor,
            positive=same.entries[i].sample,
            negative=other.entries[j].sample,
        )
        for i, j in zip(pos_idx, neg_idx)
    ]


def weighted_empirical_loss(
    metric: np.ndarray,
    anchor: np.ndarray,
    same_class: list[tuple[np.ndarray, float]],
    other_class: list[tuple[np.ndarray, float]],
) -> float:
    """Weight-normalized double sum of triplet losses over two pools.

    sum_i sum_j (w_i / W+) (w_j / W-) * loss(anchor, p_i, p_j); the
    population-level target that a weighted reservoir approximates.
    """
    from .metric import triplet_loss

    w_same = sum(w for _, w in same_class)
    w_other = sum(w for _, w in other_class)
    if w_same <= 0 or w_other <= 0:
        raise ValueError("weights must have positive totals")
    total = 0.0
    for p_pos, w_pos in same_class:
        inner = 0.0
        for p_neg, w_neg in other_class:
            inner += (w_neg / w_other) * triplet_loss(
                metric, Triplet(anchor, p_pos, p_neg)
            )
        total += (w_pos / w_same) * inner
    return total
