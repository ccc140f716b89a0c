"""Physical Memory Protection: entries, address decoding and access checks."""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .kernel import PERM_R, PERM_W, PERM_X, PRIV_M, PRIV_U

N_ENTRIES = 16


class PmpMode(enum.IntEnum):
    OFF = 0
    TOR = 1
    NA4 = 2
    NAPOT = 3


class AccessKind(enum.IntEnum):
    READ = PERM_R
    WRITE = PERM_W
    EXECUTE = PERM_X


class Priv(enum.IntEnum):
    U = PRIV_U
    M = PRIV_M


class PmpLockedError(Exception):
    """Attempt to modify a locked entry before reset."""

    def __init__(self, index: int):
        super().__init__(f"PMP entry {index} is locked until reset")
        self.index = index


def parse_perms(text: str) -> int:
    perms = 0
    for ch in text.lower():
        if ch not in "rwx":
            raise ValueError(f"bad permission letter {ch!r} in {text!r}")
        perms |= {"r": PERM_R, "w": PERM_W, "x": PERM_X}[ch]
    return perms


def format_perms(perms: int) -> str:
    return "".join(c if perms & bit else "-" for c, bit in (("r", PERM_R), ("w", PERM_W), ("x", PERM_X)))


@dataclass(frozen=True)
class PmpEntry:
    mode: PmpMode = PmpMode.OFF
    addr: int = 0
    perms: int = 0
    locked: bool = False

    @property
    def cfg_byte(self) -> int:
        """The entry's ``pmpNcfg`` byte: L | A | X | W | R."""
        return (int(self.locked) << 7) | (int(self.mode) << 3) | self.perms

    @classmethod
    def from_cfg_byte(cls, cfg: int, addr: int) -> PmpEntry:
        return cls(PmpMode((cfg >> 3) & 3), addr & 0xFFFFFFFF, cfg & 7, bool(cfg >> 7))


def decode_napot(addr_reg: int) -> tuple[int, int]:
    """Base and size of a NAPOT ``pmpaddr`` value.

    >>> [hex(v) for v in decode_napot(0x200001FF)]
    ['0x80000000', '0x1000']
    """
    addr_reg &= 0xFFFFFFFF
    ones = 0
    while (addr_reg >> ones) & 1:
        ones += 1
    if ones > 30:
        raise ValueError(f"NAPOT pattern {addr_reg:#x} has {ones} trailing ones (max 30)")
    base = (addr_reg & ~((1 << ones) - 1)) << 2
    return base, 8 << ones


def encode_napot(base: int, size: int) -> int:
    if size < 8 or size & (size - 1):
        raise ValueError(f"NAPOT size {size} is not a power of two >= 8")
    if base % size:
        raise ValueError(f"NAPOT base {base:#x} not aligned to size {size:#x}")
    return (base >> 2) | ((size >> 3) - 1)


def napot_entry(base: int, size: int, perms: int | str, locked: bool = False) -> PmpEntry:
    if isinstance(perms, str):
        perms = parse_perms(perms)
    if size == 4:
        if base % 4:
            raise ValueError(f"NA4 base {base:#x} not word aligned")
        return PmpEntry(PmpMode.NA4, base >> 2, perms, locked)
    return PmpEntry(PmpMode.NAPOT, encode_napot(base, size), perms, locked)


class PmpUnit:
    """Sixteen prioritized PMP entries with lock-until-reset semantics.

    ``ranges`` is a decoded ``int64[16, 4]`` view (``lo, hi, perms, locked``)
    shared with the stepping kernel; it is refreshed on every change.
    """

    def __init__(self, n_entries: int = N_ENTRIES):
        self.entries: list[PmpEntry] = [PmpEntry()] * n_entries
        self.ranges = np.zeros((n_entries, 4), dtype=np.int64)

    def __len__(self) -> int:
        return len(self.entries)

    def reset(self) -> None:
        self.entries = [PmpEntry()] * len(self.entries)
        self._refresh()

    def locked_indices(self) -> frozenset[int]:
        return frozenset(i for i, e in enumerate(self.entries) if e.locked)

    def region(self, index: int) -> tuple[int, int] | None:
        """``[lo, hi)`` covered by entry ``index`` or None when it matches nothing."""
        e = self.entries[index]
        if e.mode is PmpMode.OFF:
            return None
        if e.mode is PmpMode.TOR:
            lo = (self.entries[index - 1].addr << 2) if index else 0
            hi = e.addr << 2
            return (lo, hi) if hi > lo else None
        if e.mode is PmpMode.NA4:
            return e.addr << 2, (e.addr << 2) + 4
        base, size = decode_napot(e.addr)
        return base, base + size

    def _refresh(self) -> None:
        for i, e in enumerate(self.entries):
            r = self.region(i)
            lo, hi = r if r else (0, 0)
            self.ranges[i] = (lo, hi, e.perms, int(e.locked))

    def configure(self, index: int, entry: PmpEntry, priv: Priv = Priv.M) -> None:
        """Install ``entry`` at ``index``.

        Raises :class:`PmpLockedError` when the slot is locked, or when the
        next slot is a locked TOR entry (whose base this slot's address forms).
        """
        if priv != Priv.M:
            raise PermissionError("PMP entries are only writable from M-mode")
        if self.entries[index].locked:
            raise PmpLockedError(index)
        nxt = index + 1
        if (nxt < len(self.entries) and self.entries[nxt].locked
                and self.entries[nxt].mode is PmpMode.TOR and entry.addr != self.entries[index].addr):
            raise PmpLockedError(nxt)
        if entry.mode is PmpMode.NAPOT:
            decode_napot(entry.addr)
        self.entries[index] = PmpEntry(PmpMode(entry.mode), entry.addr & 0xFFFFFFFF, entry.perms & 7, bool(entry.locked))
        self._refresh()

    def configure_many(self, start: int, entries: list[PmpEntry]) -> None:
        """Install ``entries`` at ``start``, ``start + 1``, ...; unused tail slots are left as given.

        All-or-nothing: lock violations raise before anything changes.
        """
        staged = list(self.entries)
        for k, entry in enumerate(entries):
            i = start + k
            if staged[i].locked:
                raise PmpLockedError(i)
            if entry.mode is PmpMode.NAPOT:
                decode_napot(entry.addr)
            staged[i] = PmpEntry(PmpMode(entry.mode), entry.addr & 0xFFFFFFFF, entry.perms & 7, bool(entry.locked))
        nxt = start + len(entries)
        if (entries and nxt < len(staged) and staged[nxt].locked and staged[nxt].mode is PmpMode.TOR
                and staged[nxt - 1].addr != self.entries[nxt - 1].addr):
            raise PmpLockedError(nxt)
        self.entries = staged
        self._refresh()

    def try_configure(self, index: int, entry: PmpEntry) -> bool:
        try:
            self.configure(index, entry)
        except PmpLockedError:
            return False
        return True

    def check(self, addr: int, width: int, kind: AccessKind, priv: Priv) -> bool:
        """Decide one access; True means allowed."""
        if width not in (1, 2, 4):
            raise ValueError(f"access width {width} not in (1, 2, 4)")
        end = addr + width
        for i, e in enumerate(self.entries):
            r = self.region(i)
            if r is None:
                continue
            lo, hi = r
            if lo <= addr and end <= hi:
                if priv == Priv.M and not e.locked:
                    return True
                return bool(e.perms & kind)
            if addr < hi and end > lo:
                return False
        return priv == Priv.M


def check_access(unit: PmpUnit, addr: int, width: int, kind: AccessKind, priv: Priv) -> bool:
    return unit.check(addr, width, kind, priv)


def configure_entry(unit: PmpUnit, index: int, entry: PmpEntry, priv: Priv = Priv.M) -> None:
    unit.configure(index, entry, priv)
