"""The machine-mode secure monitor: zones, PMP layout, scheduling and trap service.

Physical layout::

    0x1000_0000  device page (OUT at +0, EXIT at +4), shared by every zone
    0x8000_0000  monitor memory, one locked no-access PMP rule
                 +0x1000  shadow stacks
                 +0x8000  signature storage
    0x8000_F000  counter window: saved per-zone tallies, readable by the
                 monitoring zone only
    0x8001_0000  zone memory, as declared by the manifest

PMP slots 0-1 hold the locked monitor rule; slots 2.. are rewritten on every
context switch with the incoming zone's regions.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from . import kernel as K
from .cfi import CFI_FAIL, SS_POP, SS_PUSH, YIELD
from .core import Cause, Machine
from .detector import DetectionVerdict, HpcSignature, match
from .hpc import EVENT_NAMES, HpcConfig, HpcEventKind, PermissionDenied, parse_event, tally_dict
from .image import Image
from .isa import is_label_word
from .pmp import PmpEntry, PmpMode, Priv, format_perms, napot_entry, parse_perms
from .shadow import Overflow, ShadowStack, Underflow

MONITOR_BASE = K.RAM_BASE
MONITOR_TOP = K.RAM_BASE + 0xF000
SHADOW_BASE = K.RAM_BASE + 0x1000
SHADOW_TOP = K.RAM_BASE + 0x8000
SIGNATURE_BASE = K.RAM_BASE + 0x8000
WINDOW_BASE = K.RAM_BASE + 0xF000
WINDOW_SIZE = 0x1000
WINDOW_SLOT = 64
ZONE_AREA = K.RAM_BASE + 0x10000

DEVICE_BASE = K.MMIO_BASE
DEVICE_SIZE = 0x1000
DEV_OUT = DEVICE_BASE
DEV_EXIT = DEVICE_BASE + 4

IRQ_RETURN = 0xFFFFFFF0
MAX_REGIONS = 8
FIRST_ZONE_SLOT = 2
DEFAULT_QUANTUM = 100_000
DEFAULT_SHADOW_CAPACITY = 256
# Cycles charged to a zone's account for each trap the monitor services
# (trap entry, register spill, dispatch, return); reported, never scheduled.
SERVICE_CYCLES = 40

RUNNABLE, HALTED, SUSPENDED = "runnable", "halted", "suspended"


class BootError(Exception):
    def __init__(self, kind: str, detail: str):
        super().__init__(f"{kind}: {detail}")
        self.kind = kind
        self.detail = detail


@dataclass(frozen=True)
class Region:
    base: int
    size: int
    perms: int
    pmp_mode: str = "napot"
    shared: bool = False

    @property
    def end(self) -> int:
        return self.base + self.size

    def overlaps(self, other: Region) -> bool:
        return self.base < other.end and other.base < self.end

    def contains(self, lo: int, hi: int) -> bool:
        return self.base <= lo and hi <= self.end

    def pmp_entries(self) -> list[PmpEntry]:
        if self.pmp_mode == "napot":
            return [napot_entry(self.base, self.size, self.perms)]
        return [PmpEntry(PmpMode.OFF, self.base >> 2), PmpEntry(PmpMode.TOR, self.end >> 2, self.perms)]

    def to_json(self) -> dict:
        out = {"base": f"{self.base:#x}", "size": self.size, "perms": format_perms(self.perms).replace("-", ""),
               "pmp_mode": self.pmp_mode}
        if self.shared:
            out["shared"] = True
        return out

    @classmethod
    def from_json(cls, obj: Mapping) -> Region:
        base = obj["base"]
        return cls(int(base, 0) if isinstance(base, str) else int(base), int(obj["size"]),
                   parse_perms(obj.get("perms", "")), obj.get("pmp_mode", "napot").lower(), bool(obj.get("shared")))


DEVICE_REGION = Region(DEVICE_BASE, DEVICE_SIZE, parse_perms("rw"), "napot", True)


@dataclass
class ZoneSpec:
    id: int
    image: Image | None
    regions: list[Region]
    quantum_cycles: int = DEFAULT_QUANTUM
    monitor: bool = False
    shadow_capacity: int = DEFAULT_SHADOW_CAPACITY
    shadow_stacks: int = 1
    stack_top: int | None = None
    irq_period: int | None = None
    irq_handler: str | None = None
    hpc_events: tuple[str, ...] | None = None
    image_path: str | None = None

    def to_json(self) -> dict:
        out = {"id": self.id, "regions": [r.to_json() for r in self.regions], "quantum_cycles": self.quantum_cycles,
               "monitor": self.monitor, "shadow_capacity": self.shadow_capacity, "shadow_stacks": self.shadow_stacks}
        if self.image_path:
            out["image"] = self.image_path
        if self.stack_top is not None:
            out["stack_top"] = f"{self.stack_top:#x}"
        if self.irq_period:
            out["irq"] = {"period": self.irq_period, "handler": self.irq_handler}
        if self.hpc_events is not None:
            out["hpc_events"] = list(self.hpc_events)
        return out


@dataclass
class Manifest:
    zones: list[ZoneSpec]
    hpc: HpcConfig = field(default_factory=HpcConfig)
    shared: list[Region] = field(default_factory=lambda: [DEVICE_REGION])
    irq_accounting: bool = False

    def to_json(self) -> dict:
        return {"zones": [z.to_json() for z in self.zones], "hpc": self.hpc.to_json(),
                "shared": [r.to_json() for r in self.shared], "irq_accounting": self.irq_accounting}

    @classmethod
    def from_json(cls, obj: Mapping, base_dir: str | Path | None = None, load_images: bool = True) -> Manifest:
        base = Path(base_dir) if base_dir else Path(".")
        zones = []
        for z in obj["zones"]:
            path = z.get("image")
            image = Image.load(base / path) if (path and load_images) else None
            irq = z.get("irq") or {}
            top = z.get("stack_top")
            zones.append(ZoneSpec(
                int(z["id"]), image, [Region.from_json(r) for r in z.get("regions", [])],
                int(z.get("quantum_cycles", DEFAULT_QUANTUM)), bool(z.get("monitor", False)),
                int(z.get("shadow_capacity", DEFAULT_SHADOW_CAPACITY)), int(z.get("shadow_stacks", 1)),
                int(top, 0) if isinstance(top, str) else top, irq.get("period"), irq.get("handler"),
                tuple(z["hpc_events"]) if "hpc_events" in z else None, path))
        shared = [Region.from_json(r) for r in obj["shared"]] if "shared" in obj else [DEVICE_REGION]
        return cls(zones, HpcConfig.from_json(obj.get("hpc")), shared, bool(obj.get("irq_accounting", False)))

    @classmethod
    def load(cls, path: str | Path) -> Manifest:
        path = Path(path)
        return cls.from_json(json.loads(path.read_text()), path.parent)


@dataclass
class Violation:
    type: str
    pc: int
    detail: str
    mcause: int | None = None

    def to_json(self) -> dict:
        out = {"type": self.type, "pc": f"{self.pc:#010x}", "detail": self.detail}
        if self.mcause is not None:
            out["mcause"] = self.mcause
        return out


@dataclass
class Trigger:
    """Run ``action(system, zone)`` once, when ``zone_id`` reaches ``pc`` or its own ``cycle`` count."""

    zone_id: int
    action: Callable
    pc: int | None = None
    cycle: int | None = None
    fired: bool = False


@dataclass(eq=False)
class Zone:
    spec: ZoneSpec
    regions: list[Region]
    pmp: list[PmpEntry]
    regs: np.ndarray
    pc: int
    tally: np.ndarray
    counters: np.ndarray
    events: np.ndarray
    bp: np.ndarray
    shadow: list[ShadowStack]
    slot: int
    status: str = RUNNABLE
    exit_code: int | None = None
    outputs: list = field(default_factory=list)
    violations: list[Violation] = field(default_factory=list)
    cycles: int = 0
    retired: int = 0
    slices: int = 0
    monitor_cycles: int = 0
    irq_count: int = 0
    since_irq: int = 0
    in_handler: bool = False
    irq_ctx: tuple | None = None
    irq_snapshot: np.ndarray | None = None
    irq_tally: np.ndarray = field(default_factory=lambda: np.zeros(K.N_EVENTS, dtype=np.int64))
    verdict: DetectionVerdict | None = None
    checked: bool = False

    @property
    def id(self) -> int:
        return self.spec.id

    @property
    def is_monitor(self) -> bool:
        return self.spec.monitor

    def detection_tally(self, accounting: bool) -> dict[str, int]:
        t = self.tally - self.irq_tally if accounting else self.tally
        return tally_dict(t)

    def violation(self, v: Violation) -> None:
        self.violations.append(v)


def _cause_name(code: int) -> str:
    try:
        return "".join(p.title() for p in Cause(code).name.split("_"))
    except ValueError:
        return f"Cause{code}"


class System:
    """A booted machine: zones, scheduler state and the services behind ecall."""

    def __init__(self, manifest: Manifest, signatures: Mapping[int, HpcSignature] | None = None):
        self.manifest = manifest
        self.signatures = dict(signatures or {})
        self.triggers: list[Trigger] = []
        self.zones: list[Zone] = []
        self.rotations = 0
        self.slice_log: list[tuple[int, int]] = []
        self.log_slices = False
        self.current: Zone | None = None
        self._boot()

    # ------------------------------------------------------------ boot

    def _boot(self) -> None:
        m = self.manifest
        if not m.zones:
            raise BootError("NoZones", "manifest declares no zones")
        ids = [z.id for z in m.zones]
        if len(set(ids)) != len(ids):
            raise BootError("DuplicateZone", f"zone ids {ids} are not unique")
        if sum(z.monitor for z in m.zones) > 1:
            raise BootError("DuplicateZone", "more than one monitoring zone")
        monitor_area = Region(MONITOR_BASE, ZONE_AREA - MONITOR_BASE, 0)
        all_regions: list[tuple[int, Region]] = []
        for spec in m.zones:
            regions = list(spec.regions) + [r for r in m.shared if r not in spec.regions]
            if len(regions) > MAX_REGIONS:
                raise BootError("TooManyRegions", f"zone {spec.id} declares {len(regions)} regions (max {MAX_REGIONS})")
            for r in regions:
                if r.size <= 0:
                    raise BootError("BadRegion", f"zone {spec.id}: empty region at {r.base:#x}")
                if (r.perms & K.PERM_W) and (r.perms & K.PERM_X):
                    raise BootError("WritableExecutable", f"zone {spec.id}: region {r.base:#x} is both W and X")
                if r.overlaps(monitor_area):
                    raise BootError("RegionOverlap", f"zone {spec.id}: region {r.base:#x} overlaps monitor memory")
                try:
                    r.pmp_entries()
                except ValueError as err:
                    raise BootError("BadRegion", f"zone {spec.id}: {err}") from None
            for i, a in enumerate(regions):
                for b in regions[i + 1:]:
                    if a.overlaps(b):
                        raise BootError("RegionOverlap", f"zone {spec.id}: regions {a.base:#x} and {b.base:#x}")
            for other_id, r in all_regions:
                for a in regions:
                    if a.overlaps(r) and not (a.shared and r.shared):
                        raise BootError("RegionOverlap",
                                        f"zone {spec.id} region {a.base:#x} overlaps zone {other_id} region {r.base:#x}")
            all_regions += [(spec.id, r) for r in regions if r not in m.shared]

        ram_end = max([r.end for _, r in all_regions if r.base >= K.RAM_BASE] + [ZONE_AREA])
        ram_size = max(1 << 20, -(-(ram_end - K.RAM_BASE) // 0x10000) * 0x10000)
        self.machine = mach = Machine(ram_size=ram_size, io_size=DEVICE_SIZE, hpc=m.hpc)
        mach.st[K.ST_MTVEC] = MONITOR_BASE
        mach.pmp.configure_many(0, [PmpEntry(PmpMode.OFF, MONITOR_BASE >> 2),
                                    PmpEntry(PmpMode.TOR, MONITOR_TOP >> 2, 0, True)])

        shadow_next = SHADOW_BASE
        for slot, spec in enumerate(m.zones):
            if spec.image is None:
                raise BootError("MissingImage", f"zone {spec.id} has no image")
            regions = list(spec.regions) + [r for r in m.shared if r not in spec.regions]
            self._load_image(spec, regions)
            pmp = [e for r in regions for e in r.pmp_entries()]
            if spec.monitor:
                pmp.append(napot_entry(WINDOW_BASE, WINDOW_SIZE, "r"))
            if FIRST_ZONE_SLOT + len(pmp) > len(mach.pmp):
                raise BootError("TooManyRegions", f"zone {spec.id} needs {len(pmp)} PMP entries")
            stacks = []
            for _ in range(spec.shadow_stacks):
                size = 4 * spec.shadow_capacity
                if shadow_next + size > SHADOW_TOP:
                    raise BootError("ShadowSpace", "shadow stacks exceed monitor memory")
                stacks.append(ShadowStack(spec.shadow_capacity, shadow_next,
                                          mach.ram_words(shadow_next, spec.shadow_capacity)))
                shadow_next += size
            regs = np.zeros(32, dtype=np.int64)
            top = spec.stack_top
            if top is None:
                rw = [r for r in spec.regions if (r.perms & K.PERM_W) and r.base >= K.RAM_BASE]
                top = rw[-1].end if rw else 0
            regs[2] = top
            events = np.full(m.hpc.budget, -1, dtype=np.int64)
            selected = spec.hpc_events if spec.hpc_events is not None else [e.name for e in m.hpc.active]
            if len(selected) > m.hpc.budget:
                raise BootError("CounterBudget", f"zone {spec.id} selects {len(selected)} events, budget {m.hpc.budget}")
            for i, name in enumerate(selected):
                events[i] = int(parse_event(name))
            zone = Zone(spec, regions, pmp, regs, spec.image.entry_pc, np.zeros(K.N_EVENTS, dtype=np.int64),
                        np.zeros(m.hpc.budget, dtype=np.int64), events, np.full(len(mach.bp), 1, dtype=np.int8),
                        stacks, slot)
            if spec.irq_period:
                if not spec.irq_handler:
                    raise BootError("BadIrq", f"zone {spec.id}: interrupt period without handler")
                try:
                    spec.image.symbol(spec.irq_handler)
                except KeyError as err:
                    raise BootError("BadIrq", str(err)) from None
            self.zones.append(zone)
            self._publish(zone)
        self._store_signatures()

    def _load_image(self, spec: ZoneSpec, regions: list[Region]) -> None:
        labels: dict[int, int] = {}
        for seg in spec.image.segments:
            need = K.PERM_X if seg.executable else (seg.perms & (K.PERM_R | K.PERM_W))
            if not any(r.contains(seg.load_addr, seg.end) and (r.perms & need) == need for r in regions):
                raise BootError("SegmentOutsideRegion",
                                f"zone {spec.id}: segment {seg.load_addr:#x}+{len(seg.data)} has no matching region")
            self.machine.write_bytes(seg.load_addr, seg.data)
            if seg.executable:
                for addr, word in seg.words():
                    if is_label_word(word):
                        lid = word >> 12
                        if lid in labels:
                            raise BootError("DuplicateLabel", f"zone {spec.id}: label {lid:#07x} at "
                                                              f"{labels[lid]:#x} and {addr:#x}")
                        labels[lid] = addr

    def _store_signatures(self) -> None:
        blob = json.dumps({str(k): v.to_json() for k, v in sorted(self.signatures.items())}, sort_keys=True).encode()
        if len(blob) > MONITOR_TOP - SIGNATURE_BASE:
            raise BootError("SignatureSpace", "signatures exceed monitor storage")
        self.machine.write_bytes(SIGNATURE_BASE, blob + bytes(-len(blob) % 4))

    # ------------------------------------------------------------ context switching

    def zone(self, zone_id: int) -> Zone:
        for z in self.zones:
            if z.id == zone_id:
                return z
        raise KeyError(f"no zone {zone_id}")

    def _publish(self, zone: Zone) -> None:
        """Copy a zone's saved tallies into the counter window."""
        addr = WINDOW_BASE + WINDOW_SLOT * zone.slot
        status = {RUNNABLE: 0, HALTED: 1, SUSPENDED: 2}[zone.status]
        blob = struct.pack("<II6Q", zone.id, status, *(int(v) for v in zone.tally))
        self.machine.write_bytes(addr, blob)

    def switch_in(self, zone: Zone) -> None:
        mach = self.machine
        entries = zone.pmp + [PmpEntry()] * (len(mach.pmp) - FIRST_ZONE_SLOT - len(zone.pmp))
        mach.pmp.configure_many(FIRST_ZONE_SLOT, entries)
        mach.regs[:] = zone.regs
        mach.tally[:] = zone.tally
        mach.hpm[:, 0] = zone.events
        mach.hpm[:, 1] = zone.counters
        mach.bp[:] = zone.bp
        mach.resume(zone.pc, Priv.U)
        self.current = zone

    def switch_out(self, zone: Zone) -> None:
        mach = self.machine
        zone.regs[:] = mach.regs
        zone.pc = int(mach.st[K.ST_PC])
        zone.tally[:] = mach.tally
        zone.counters[:] = mach.hpm[:, 1]
        zone.bp[:] = mach.bp
        self._publish(zone)
        self.current = None

    def context_switch(self, src: Zone | None, dst: Zone) -> None:
        if src is not None:
            self.switch_out(src)
        self.switch_in(dst)

    def read_zone_counters(self, zone_id: int, caller_zone: int) -> list[tuple[HpcEventKind, int]]:
        """Saved tallies of ``zone_id`` as published at its last switch-out."""
        caller = self.zone(caller_zone)
        if not caller.is_monitor:
            raise PermissionDenied(f"zone {caller_zone} may not read other zones' counters")
        target = self.zone(zone_id)
        raw = self.machine.read_bytes(WINDOW_BASE + WINDOW_SLOT * target.slot, 56)
        values = struct.unpack("<II6Q", raw)[2:]
        return [(e, int(values[int(e)])) for e in HpcEventKind]

    # ------------------------------------------------------------ scheduling

    def user_zones_active(self) -> bool:
        return any(z.status == RUNNABLE and not z.is_monitor for z in self.zones)

    @property
    def cycles(self) -> int:
        return sum(z.cycles for z in self.zones)

    def run(self, budget: int | None = None, max_rotations: int | None = None) -> dict:
        """Round-robin until every user zone halts or is suspended, or ``budget`` cycles elapse."""
        while self.user_zones_active():
            if max_rotations is not None and self.rotations >= max_rotations:
                break
            if budget is not None and self.cycles >= budget:
                break
            for zone in self.zones:
                if zone.status != RUNNABLE:
                    continue
                if not self.user_zones_active():
                    break
                quantum = zone.spec.quantum_cycles
                if budget is not None:
                    left = budget - self.cycles
                    if left <= 0:
                        break
                    quantum = min(quantum, left)
                self.run_slice(zone, quantum)
            self.rotations += 1
        self.monitor_pass()
        return self.report()

    def run_slice(self, zone: Zone, quantum: int) -> int:
        mach = self.machine
        st = mach.st
        self.switch_in(zone)
        if zone.is_monitor:
            self.monitor_pass()
        start = int(st[K.ST_MCYCLE])
        start_ret = int(st[K.ST_MINSTRET])
        while zone.status == RUNNABLE:
            used = int(st[K.ST_MCYCLE]) - start
            steps = quantum - used
            if steps <= 0:
                break
            if zone.spec.irq_period and not zone.in_handler:
                to_irq = zone.spec.irq_period - zone.since_irq
                if to_irq <= 0:
                    self._deliver_irq(zone)
                    continue
                steps = min(steps, to_irq)
            zone_now = zone.cycles + used
            pending_pc = None
            for t in self.triggers:
                if t.fired or t.zone_id != zone.id:
                    continue
                if t.cycle is not None:
                    if t.cycle <= zone_now:
                        t.fired = True
                        t.action(self, zone)
                        steps = 0
                        break
                    steps = min(steps, t.cycle - zone_now)
                elif t.pc is not None and pending_pc is None:
                    pending_pc = t.pc
            if steps == 0:
                continue
            st[K.ST_BREAK_PC] = -1 if pending_pc is None else pending_pc
            c0 = int(st[K.ST_MCYCLE])
            code = mach.run_raw(steps)
            st[K.ST_BREAK_PC] = -1
            if not zone.in_handler:
                zone.since_irq += int(st[K.ST_MCYCLE]) - c0
            if code == K.EXIT_BUDGET:
                continue
            if code == K.EXIT_BREAK:
                pc = int(st[K.ST_PC])
                for t in self.triggers:
                    if not t.fired and t.zone_id == zone.id and t.pc == pc:
                        t.fired = True
                        t.action(self, zone)
                continue
            if code == K.EXIT_MMIO:
                addr, val = int(st[K.ST_EXIT_ADDR]), int(st[K.ST_EXIT_VAL])
                if addr == DEV_EXIT:
                    zone.status = HALTED
                    zone.exit_code = val
                else:
                    zone.outputs.append([addr - DEVICE_BASE, val])
                continue
            if code == K.EXIT_TRAP:
                if self._handle_trap(zone):
                    break
                continue
            raise RuntimeError(f"unexpected kernel exit {code} in user mode")
        used = int(st[K.ST_MCYCLE]) - start
        zone.cycles += used
        zone.retired += int(st[K.ST_MINSTRET]) - start_ret
        zone.slices += 1
        if self.log_slices:
            self.slice_log.append((zone.id, used))
        self.switch_out(zone)
        return used

    # ------------------------------------------------------------ traps and services

    def _suspend(self, zone: Zone, v: Violation) -> None:
        zone.violation(v)
        zone.status = SUSPENDED

    def _resume_next(self, mepc: int) -> None:
        self.machine.resume(mepc + 4, Priv.U)

    def _handle_trap(self, zone: Zone) -> bool:
        """Service the pending trap; True ends the slice."""
        mach = self.machine
        st = mach.st
        cause = int(st[K.ST_MCAUSE])
        mepc = int(st[K.ST_MEPC])
        tval = int(st[K.ST_MTVAL])
        regs = mach.regs
        if cause == Cause.INSTRUCTION_ACCESS_FAULT and zone.in_handler and tval == IRQ_RETURN:
            self._return_from_irq(zone)
            return False
        if cause == Cause.ECALL_FROM_U:
            zone.monitor_cycles += SERVICE_CYCLES
            code = int(regs[17])
            if code == SS_PUSH:
                stack = zone.shadow[0]
                try:
                    stack.push(int(regs[1]))
                except Overflow as err:
                    self._suspend(zone, Violation("ShadowOverflow", mepc, str(err)))
                    return True
            elif code == SS_POP:
                try:
                    regs[1] = zone.shadow[0].pop()
                except Underflow as err:
                    self._suspend(zone, Violation("ShadowUnderflow", mepc, str(err)))
                    return True
            elif code == YIELD:
                self._resume_next(mepc)
                return True
            elif code == CFI_FAIL:
                self._suspend(zone, Violation(
                    "LabelMismatch", mepc, f"target {int(regs[30]):#010x} carries word {int(regs[31]):#010x}"))
                return True
            else:
                self._suspend(zone, Violation("UnknownCall", mepc, f"ecall code {code}"))
                return True
            self._resume_next(mepc)
            return False
        name = _cause_name(cause)
        if cause in (Cause.INSTRUCTION_ACCESS_FAULT, Cause.LOAD_ACCESS_FAULT, Cause.STORE_ACCESS_FAULT):
            kind = "PmpFault"
        elif cause == Cause.ILLEGAL_INSTRUCTION:
            kind = "IllegalInstruction"
        else:
            kind = name
        self._suspend(zone, Violation(kind, mepc, f"{name} at {tval:#010x}", cause))
        return True

    def _deliver_irq(self, zone: Zone) -> None:
        mach = self.machine
        st = mach.st
        zone.in_handler = True
        zone.irq_count += 1
        zone.since_irq = 0
        zone.irq_ctx = (mach.regs.copy(), int(st[K.ST_PC]))
        if self.manifest.irq_accounting:
            zone.irq_snapshot = mach.tally.copy()
        # interrupt entry is a trap entry: one cycle and a PFE event
        K.record_events(K.EV_PFE, mach.tally, mach.total, mach.hpm)
        st[K.ST_MCYCLE] += 1
        st[K.ST_MTIME] += 1
        mach.regs[1] = IRQ_RETURN
        mach.resume(zone.spec.image.symbol(zone.spec.irq_handler), Priv.U)

    def _return_from_irq(self, zone: Zone) -> None:
        mach = self.machine
        regs, pc = zone.irq_ctx
        if self.manifest.irq_accounting:
            zone.irq_tally += mach.tally - zone.irq_snapshot
        mach.regs[:] = regs
        mach.resume(pc, Priv.U)
        zone.in_handler = False
        zone.irq_ctx = None

    # ------------------------------------------------------------ detection

    def monitor_pass(self) -> None:
        """The monitoring zone's work: match finished zones against their signatures."""
        if not any(z.is_monitor for z in self.zones):
            return
        for z in self.zones:
            if z.is_monitor or z.checked or z.status != HALTED or z.id not in self.signatures:
                continue
            z.checked = True
            z.verdict = match(self.signatures[z.id], z.detection_tally(self.manifest.irq_accounting))
            if z.verdict.overall_alarm:
                z.violation(Violation("DetectorAlarm", int(z.pc),
                                      "deviation on " + ",".join(sorted(z.verdict.alarm_events))))

    # ------------------------------------------------------------ reporting

    def report(self) -> dict:
        zones = {}
        for z in self.zones:
            entry = {
                "status": z.status,
                "exit_code": z.exit_code,
                "monitor": z.is_monitor,
                "cycles": z.cycles,
                "retired": z.retired,
                "slices": z.slices,
                "monitor_cycles": z.monitor_cycles,
                "hpc": tally_dict(z.tally),
                "hpc_counters": {EVENT_NAMES[int(e)]: int(c) for e, c in zip(z.events, z.counters) if e >= 0},
                "violations": [v.to_json() for v in z.violations],
                "outputs": [list(o) for o in z.outputs],
                "shadow": [{"capacity": s.capacity, "depth": s.depth, "high_watermark": s.high_watermark}
                           for s in z.shadow],
            }
            if z.spec.irq_period:
                entry["interrupts"] = z.irq_count
                entry["irq_hpc"] = tally_dict(z.irq_tally)
            if z.verdict is not None:
                entry["detector"] = z.verdict.to_json()
            zones[str(z.id)] = entry
        return {"cycles": self.cycles, "rotations": self.rotations, "zones": zones,
                "totals": tally_dict(self.machine.total)}


def boot(manifest: Manifest, images: Sequence[Image] | None = None,
         signatures: Mapping[int, HpcSignature] | None = None) -> System:
    """Load images, verify labels, lay out PMP and return a runnable system."""
    if images is not None:
        if len(images) != len(manifest.zones):
            raise BootError("MissingImage", f"{len(images)} images for {len(manifest.zones)} zones")
        for spec, img in zip(manifest.zones, images):
            spec.image = img
    return System(manifest, signatures)


def report_json(report: dict) -> str:
    return json.dumps(report, sort_keys=True, indent=2) + "\n"
