"""Fixed-capacity return-address stacks kept in monitor-only memory."""

from __future__ import annotations

import numpy as np


class ShadowStackError(Exception):
    pass


class Overflow(ShadowStackError):
    pass


class Underflow(ShadowStackError):
    pass


class ShadowStack:
    """LIFO of 32-bit return addresses.

    ``storage`` is a uint32 array; the monitor passes a view into machine RAM
    at ``base`` so entries physically live inside the protected region.
    """

    def __init__(self, capacity: int = 256, base: int = 0, storage: np.ndarray | None = None):
        if capacity <= 0:
            raise ValueError("capacity must be positive")
        if storage is None:
            storage = np.zeros(capacity, dtype="<u4")
        if len(storage) < capacity:
            raise ValueError("storage smaller than capacity")
        self.base = base
        self.capacity = capacity
        self.entries = storage[:capacity]
        self.depth = 0
        self.high_watermark = 0

    @property
    def limit(self) -> int:
        """One past the last byte address of the stack's storage."""
        return self.base + 4 * self.capacity

    def push(self, ra: int) -> None:
        if self.depth == self.capacity:
            raise Overflow(f"shadow stack at {self.base:#x} full ({self.capacity} entries)")
        self.entries[self.depth] = ra & 0xFFFFFFFF
        self.depth += 1
        self.high_watermark = max(self.high_watermark, self.depth)

    def pop(self) -> int:
        if self.depth == 0:
            raise Underflow(f"shadow stack at {self.base:#x} empty")
        self.depth -= 1
        return int(self.entries[self.depth])

    def top(self) -> int | None:
        return int(self.entries[self.depth - 1]) if self.depth else None

    def __len__(self) -> int:
        return self.depth

    def snapshot(self) -> list[int]:
        return [int(v) for v in self.entries[: self.depth]]
