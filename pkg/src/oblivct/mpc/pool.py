"""Precomputation pools: exponentiation pairs, garbled circuits, OT material.

A pool holds FIFO queues per kind. Taking from an empty pool falls back to
synchronous generation (counted, never blocks); every dispensed item carries
a serial number so tests can audit that nothing is handed out twice.
Dispensing is lock-protected, so filler threads may run concurrently with
request service.
"""

from __future__ import annotations

import threading
from collections import deque
from dataclasses import dataclass
from typing import Any, Callable, Dict, List, Optional


class PoolError(Exception):
    pass


@dataclass(frozen=True)
class PoolItem:
    kind: str
    serial: int
    value: Any


class PrecomputePool:
    def __init__(self, generators: Optional[Dict[str, Callable[[int], List[Any]]]] = None):
        self._generators: Dict[str, Callable[[int], List[Any]]] = dict(generators or {})
        self._queues: Dict[str, deque] = {}
        self._lock = threading.Lock()
        self._serial = 0
        self.sync_fallbacks = 0
        self.filled = 0
        self.dispensed = 0

    def register(self, kind: str, generator: Callable[[int], List[Any]]) -> None:
        with self._lock:
            self._generators[kind] = generator
            self._queues.setdefault(kind, deque())

    def kinds(self) -> List[str]:
        with self._lock:
            return sorted(self._generators)

    def size(self, kind: str) -> int:
        with self._lock:
            return len(self._queues.get(kind, ()))

    def _wrap(self, kind: str, values: List[Any]) -> List[PoolItem]:
        items = []
        for v in values:
            items.append(PoolItem(kind=kind, serial=self._serial, value=v))
            self._serial += 1
        return items

    def fill(self, kind: str, count: int) -> int:
        """Generate `count` items and enqueue them; returns the new depth."""
        gen = self._generators.get(kind)
        if gen is None:
            raise PoolError(f"no generator registered for kind {kind!r}")
        values = gen(count)
        with self._lock:
            q = self._queues.setdefault(kind, deque())
            q.extend(self._wrap(kind, values))
            self.filled += len(values)
            return len(q)

    def put(self, kind: str, values: List[Any]) -> None:
        """Enqueue externally produced items (e.g. jointly generated OTs)."""
        with self._lock:
            q = self._queues.setdefault(kind, deque())
            q.extend(self._wrap(kind, values))
            self.filled += len(values)

    def take(self, kind: str) -> PoolItem:
        """Dispense the oldest pooled item, or compute one synchronously."""
        with self._lock:
            q = self._queues.get(kind)
            if q:
                self.dispensed += 1
                return q.popleft()
            gen = self._generators.get(kind)
        if gen is None:
            raise PoolError(f"no generator registered for kind {kind!r}")
        values = gen(1)
        with self._lock:
            self.sync_fallbacks += 1
            self.dispensed += 1
            return self._wrap(kind, values)[0]

    def take_many(self, kind: str, count: int) -> List[PoolItem]:
        items = []
        missing = 0
        with self._lock:
            q = self._queues.get(kind, deque())
            while len(items) < count and q:
                items.append(q.popleft())
            missing = count - len(items)
            self.dispensed += len(items)
        if missing:
            gen = self._generators.get(kind)
            if gen is None:
                raise PoolError(f"no generator registered for kind {kind!r}")
            values = gen(missing)
            with self._lock:
                self.sync_fallbacks += missing
                self.dispensed += missing
                items.extend(self._wrap(kind, values))
        return items
