"""Label counts with an incrementally maintained frequency-of-frequencies table."""

from __future__ import annotations

from collections import Counter
from typing import Iterable


class Tally:
    """Append-only multiset of label ids.

    ``freq_of_freq[r]`` is the number of distinct labels seen exactly ``r``
    times; entries are removed when they drop to zero so the table never holds
    ``N_r = 0``.
    """

    __slots__ = ("counts", "t", "freq_of_freq")

    def __init__(self, samples: Iterable[int] = ()):
        self.counts: dict[int, int] = {}
        self.t = 0
        self.freq_of_freq: dict[int, int] = {}
        for y in samples:
            self.push(y)

    def push(self, y: int) -> "Tally":
        r = self.counts.get(y, 0)
        self.counts[y] = r + 1
        self.t += 1
        fof = self.freq_of_freq
        if r:
            if fof[r] == 1:
                del fof[r]
            else:
                fof[r] -= 1
        fof[r + 1] = fof.get(r + 1, 0) + 1
        return self

    def n(self, r: int) -> int:
        """``N_r`` for ``r >= 1``."""
        return self.freq_of_freq.get(r, 0)

    def singletons(self) -> int:
        return self.freq_of_freq.get(1, 0)

    def doubletons(self) -> int:
        return self.freq_of_freq.get(2, 0)

    @property
    def distinct(self) -> int:
        return len(self.counts)

    def __contains__(self, y: object) -> bool:
        return y in self.counts

    def __len__(self) -> int:
        return self.t

    def copy(self) -> "Tally":
        other = Tally.__new__(Tally)
        other.counts = dict(self.counts)
        other.t = self.t
        other.freq_of_freq = dict(self.freq_of_freq)
        return other

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Tally):
            return NotImplemented
        return (self.t, self.counts, self.freq_of_freq) == (other.t, other.counts, other.freq_of_freq)

    def __repr__(self) -> str:
        return f"Tally(t={self.t}, counts={self.counts!r})"


def recount_freq_of_freq(samples: Iterable[int]) -> dict[int, int]:
    """Frequency-of-frequencies computed from scratch (reference for ``Tally``)."""
    return dict(Counter(Counter(samples).values()))


def singletons(tally: Tally) -> int:
    return tally.singletons()


def doubletons(tally: Tally) -> int:
    return tally.doubletons()


def push(tally: Tally, y: int) -> Tally:
    return tally.push(y)
