"""Byte accounting for every array the engine owns.

Tensors, gradient buffers, saved backward context and optimizer state all
report their allocations here. CPython frees objects by reference count, so
for a fixed program the sequence of alloc/free events (and the peak) is
deterministic.
"""
from __future__ import annotations

import threading
from contextlib import contextmanager
from dataclasses import dataclass


@dataclass
class TrackerSession:
    baseline: int = 0
    peak: int = 0
    largest: int = 0
    allocations: int = 0


class AllocationTracker:
    def __init__(self):
        self._lock = threading.Lock()
        self.current = 0
        self.peak = 0
        self.largest = 0
        self.allocations = 0
        self._sessions = []

    def alloc(self, nbytes: int) -> None:
        if nbytes <= 0:
            return
        with self._lock:
            self.current += nbytes
            self.allocations += 1
            if self.current > self.peak:
                self.peak = self.current
            if nbytes > self.largest:
                self.largest = nbytes
            for s in self._sessions:
                s.allocations += 1
                if nbytes > s.largest:
                    s.largest = nbytes
                if self.current - s.baseline > s.peak:
                    s.peak = self.current - s.baseline

    def free(self, nbytes: int) -> None:
        if nbytes <= 0:
            return
        with self._lock:
            self.current -= nbytes

    def release(self, cell: list) -> None:
        """Free every byte count held in ``cell`` (used by finalizers)."""
        self.free(sum(cell))
        cell.clear()

    @contextmanager
    def session(self):
        """Measure the high-water mark above the bytes live at entry."""
        s = TrackerSession(baseline=self.current)
        with self._lock:
            self._sessions.append(s)
        try:
            yield s
        finally:
            with self._lock:
                self._sessions.remove(s)


TRACKER = AllocationTracker()
