"""Sorted disjoint half-open integer intervals."""
from __future__ import annotations

import bisect


class IntervalSet:
    def __init__(self):
        self.starts: list[int] = []
        self.ends: list[int] = []

    def __bool__(self) -> bool:
        return bool(self.starts)

    def __iter__(self):
        return iter(zip(self.starts, self.ends))

    def overlap(self, s: int, e: int) -> int:
        """Number of integers in [s, e) already covered."""
        i = bisect.bisect_right(self.ends, s)
        total = 0
        while i < len(self.starts) and self.starts[i] < e:
            total += min(e, self.ends[i]) - max(s, self.starts[i])
            i += 1
        return total

    def contains(self, s: int, e: int) -> bool:
        return self.overlap(s, e) == e - s

    def add(self, s: int, e: int) -> None:
        if e <= s:
            return
        i = bisect.bisect_left(self.ends, s)
        j = i
        while j < len(self.starts) and self.starts[j] <= e:
            s = min(s, self.starts[j])
            e = max(e, self.ends[j])
            j += 1
        self.starts[i:j] = [s]
        self.ends[i:j] = [e]

    def discard_below(self, x: int) -> None:
        """Drop everything below ``x``."""
        while self.starts and self.ends[0] <= x:
            del self.starts[0]
            del self.ends[0]
        if self.starts and self.starts[0] < x:
            self.starts[0] = x

    def total(self) -> int:
        return sum(e - s for s, e in zip(self.starts, self.ends))

    def max_end(self) -> int | None:
        return self.ends[-1] if self.ends else None

    def find(self, x: int):
        """The interval containing ``x``, or None."""
        i = bisect.bisect_right(self.ends, x)
        if i < len(self.starts) and self.starts[i] <= x:
            return self.starts[i], self.ends[i]
        return None

    def clear(self) -> None:
        self.starts.clear()
        self.ends.clear()
