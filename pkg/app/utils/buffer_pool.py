import threading
from collections import deque
from typing import Deque, Dict

import numpy as np

from app.services import metrics


class BufferPool:
    """A thread-safe pool of float64 arenas, reused by exact element count."""
    def __init__(self, capacity_per_size: int = 8):
        self.capacity_per_size: int = capacity_per_size
        self._free: Dict[int, Deque[np.ndarray]] = {}
        self._lock = threading.Lock()
        self.allocations: int = 0
        self.reuses: int = 0

    def acquire(self, size: int) -> np.ndarray:
        """Returns an uninitialized buffer of ``size`` elements, reusing a released one if possible."""
        with self._lock:
            free = self._free.get(size)
            if free:
                self.reuses += 1
                return free.pop()
            self.allocations += 1
        metrics.increment_pool_allocations()
        return np.empty(size, dtype=np.float64)

    def release(self, buffer: np.ndarray) -> None:
        """Hands a buffer back. When the free list for its size is full, the oldest one is discarded."""
        with self._lock:
            free = self._free.setdefault(buffer.size, deque(maxlen=self.capacity_per_size))
            if not any(held is buffer for held in free):
                free.append(buffer)

    def clear(self) -> None:
        with self._lock:
            self._free.clear()
            self.allocations = 0
            self.reuses = 0

    def __len__(self) -> int:
        with self._lock:
            return sum(len(free) for free in self._free.values())


buffer_pool = BufferPool()
