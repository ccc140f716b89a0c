"""Hardware performance counter events, the branch predictor model and zone tallies."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np

from . import kernel as K
from .isa import BRANCHES, INT_ARITH, LOADS, STORES, Instruction, Op


class HpcEventKind(enum.IntEnum):
    INT = 0
    JAL = 1
    CB = 2
    MIO = 3
    PFE = 4
    BDM = 5

    @property
    def bit(self) -> int:
        return 1 << int(self)


EVENT_NAMES = tuple(e.name for e in HpcEventKind)

DEFAULT_MMIO_RANGES = ((K.MMIO_BASE, K.MMIO_BASE + 0x1000),)


class PermissionDenied(Exception):
    pass


def events_from_mask(mask: int) -> frozenset[HpcEventKind]:
    return frozenset(e for e in HpcEventKind if mask & e.bit)


def events_to_mask(events: Iterable[HpcEventKind]) -> int:
    m = 0
    for e in events:
        m |= HpcEventKind(e).bit
    return m


def parse_event(name: str | int | HpcEventKind) -> HpcEventKind:
    if isinstance(name, str):
        return HpcEventKind[name.upper()]
    return HpcEventKind(name)


@dataclass(frozen=True)
class HpcConfig:
    """Which events drive the architectural counters.

    Only ``budget`` counters exist (``mhpmcounter3`` upward); every event is still
    tallied per zone for evaluation, separately from those counters.
    """

    active: tuple[HpcEventKind, ...] = (HpcEventKind.JAL, HpcEventKind.CB)
    budget: int = 2
    mmio_ranges: tuple[tuple[int, int], ...] = DEFAULT_MMIO_RANGES

    def __post_init__(self):
        active = tuple(parse_event(e) for e in self.active)
        object.__setattr__(self, "active", active)
        object.__setattr__(self, "mmio_ranges", tuple((int(lo), int(hi)) for lo, hi in self.mmio_ranges))
        if len(active) > self.budget:
            raise ValueError(f"{len(active)} active events exceed the counter budget of {self.budget}")
        if len(set(active)) != len(active):
            raise ValueError("duplicate active event")

    def counter_array(self) -> np.ndarray:
        hpm = np.zeros((self.budget, 2), dtype=np.int64)
        hpm[:, 0] = -1
        for i, ev in enumerate(self.active):
            hpm[i, 0] = int(ev)
        return hpm

    def mio_array(self) -> np.ndarray:
        if not self.mmio_ranges:
            return np.zeros((0, 2), dtype=np.int64)
        return np.array(self.mmio_ranges, dtype=np.int64).reshape(-1, 2)

    def in_mmio(self, addr: int) -> bool:
        return any(lo <= addr < hi for lo, hi in self.mmio_ranges)

    @classmethod
    def from_json(cls, obj: Mapping | None) -> HpcConfig:
        if not obj:
            return cls()
        ranges = tuple((_int(lo), _int(hi)) for lo, hi in obj.get("mmio_ranges", DEFAULT_MMIO_RANGES))
        return cls(tuple(obj.get("active", ("JAL", "CB"))), int(obj.get("budget", 2)), ranges)

    def to_json(self) -> dict:
        return {
            "active": [e.name for e in self.active],
            "budget": self.budget,
            "mmio_ranges": [[f"{lo:#x}", f"{hi:#x}"] for lo, hi in self.mmio_ranges],
        }


def _int(v) -> int:
    return int(v, 0) if isinstance(v, str) else int(v)


class Verdict(enum.Enum):
    HIT = "hit"
    MISPREDICT = "mispredict"


class BranchPredictor:
    """Table of two-bit saturating counters indexed by ``pc[11:2]``.

    Counters start weakly-not-taken (1); >= 2 predicts taken. The kernel keeps
    the same table in an int8 array, which :attr:`table` exposes.
    """

    SIZE = 1024
    WEAKLY_NOT_TAKEN = 1

    def __init__(self, table: np.ndarray | None = None):
        if table is None:
            table = np.full(self.SIZE, self.WEAKLY_NOT_TAKEN, dtype=np.int8)
        self.table = table

    def index(self, pc: int) -> int:
        return (pc >> 2) & (len(self.table) - 1)

    def predict(self, pc: int) -> bool:
        return int(self.table[self.index(pc)]) >= 2

    def predict_and_update(self, pc: int, taken: bool) -> Verdict:
        i = self.index(pc)
        ctr = int(self.table[i])
        verdict = Verdict.HIT if (ctr >= 2) == taken else Verdict.MISPREDICT
        self.table[i] = min(ctr + 1, 3) if taken else max(ctr - 1, 0)
        return verdict

    def copy(self) -> BranchPredictor:
        return BranchPredictor(self.table.copy())


def classify_events(instr: Instruction, outcome, cfg: HpcConfig, mispredicted: bool = False) -> frozenset[HpcEventKind]:
    """Events an instruction fires, from its decoded form and step outcome.

    ``outcome`` is a :class:`~r5guard.core.Retired` or :class:`~r5guard.core.Trapped`;
    a retired load/store must carry its effective address in ``mem_addr``.
    The branch predictor verdict is supplied by the caller.
    """
    if getattr(outcome, "trapped", False):
        return frozenset({HpcEventKind.PFE})
    op = instr.kind
    if op in INT_ARITH:
        return frozenset({HpcEventKind.INT})
    if op is Op.JAL:
        return frozenset({HpcEventKind.JAL})
    if op in BRANCHES:
        evs = {HpcEventKind.CB}
        if mispredicted:
            evs.add(HpcEventKind.BDM)
        return frozenset(evs)
    if op in LOADS or op in STORES:
        addr = outcome.mem_addr
        return frozenset({HpcEventKind.MIO}) if addr is not None and cfg.in_mmio(addr) else frozenset()
    if op is Op.FENCE_I:
        return frozenset({HpcEventKind.PFE})
    return frozenset()


def tally_dict(tally) -> dict[str, int]:
    return {name: int(tally[i]) for i, name in enumerate(EVENT_NAMES)}


@dataclass
class CounterView:
    """Per-zone saved tallies as exposed to the monitoring zone."""

    saved: dict[int, np.ndarray] = field(default_factory=dict)
    monitor_zone: int | None = None


def read_zone_counters(view: CounterView, zone_id: int, caller_zone: int) -> list[tuple[HpcEventKind, int]]:
    if view.monitor_zone is None or caller_zone != view.monitor_zone:
        raise PermissionDenied(f"zone {caller_zone} may not read other zones' counters")
    tally = view.saved[zone_id]
    return [(e, int(tally[int(e)])) for e in HpcEventKind]
