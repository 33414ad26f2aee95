"""Virtual-clock event queue for the single-threaded round simulator."""

from __future__ import annotations

import heapq
import itertools
from typing import Any


class EventQueue:
    """Min-heap of ``(time, key)``-ordered events; ``key`` breaks ties."""

    def __init__(self) -> None:
        self._heap: list[tuple[float, int, int, Any]] = []
        self._seq = itertools.count()
        self.now = 0.0

    def __len__(self) -> int:
        return len(self._heap)

    def schedule(self, time: float, key: int, payload: Any = None) -> None:
        if time < self.now:
            raise ValueError(f"cannot schedule at {time} before now={self.now}")
        heapq.heappush(self._heap, (time, key, next(self._seq), payload))

    def pop(self) -> tuple[float, int, Any]:
        time, key, _, payload = heapq.heappop(self._heap)
        self.now = time
        return time, key, payload

    def drain(self) -> list[tuple[float, int, Any]]:
        """Remove and return all pending events in firing order."""
        out = []
        while self._heap:
            time, key, _, payload = heapq.heappop(self._heap)
            out.append((time, key, payload))
        return out
