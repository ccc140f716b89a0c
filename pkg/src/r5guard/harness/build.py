"""Turn corpus sources into zone images, manifests and booted systems."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

from .. import monitor as M
from ..asm import assemble_program, parse
from ..cfi import RewriteResult, rewrite
from ..detector import HpcSignature
from ..hpc import HpcConfig
from ..image import Image
from ..pmp import parse_perms

SLOT_STRIDE = 0x10000
TEXT_SIZE = 0x4000
DATA_SIZE = 0x4000


@dataclass(frozen=True)
class SlotLayout:
    text_base: int
    data_base: int

    @property
    def stack_top(self) -> int:
        return self.data_base + DATA_SIZE

    def regions(self) -> list[M.Region]:
        return [M.Region(self.text_base, TEXT_SIZE, parse_perms("rx")),
                M.Region(self.data_base, DATA_SIZE, parse_perms("rw"))]


def slot_layout(slot: int) -> SlotLayout:
    base = M.ZONE_AREA + slot * SLOT_STRIDE
    return SlotLayout(base, base + TEXT_SIZE)


def build_image(source: str, slot: int = 0, *, instrument: bool = False,
                hints: Mapping[str, list[str]] | None = None) -> Image:
    return build(source, slot, instrument=instrument, hints=hints)[0]


def build(source: str, slot: int = 0, *, instrument: bool = False,
          hints: Mapping[str, list[str]] | None = None) -> tuple[Image, RewriteResult | None]:
    lay = slot_layout(slot)
    prog = parse(source, text_base=lay.text_base, data_base=lay.data_base)
    if not instrument:
        return assemble_program(prog, text_limit=TEXT_SIZE, data_limit=DATA_SIZE), None
    res = rewrite(prog, hints, text_limit=TEXT_SIZE)
    return res.image, res


def zone_spec(zone_id: int, image: Image, slot: int, **kw) -> M.ZoneSpec:
    lay = slot_layout(slot)
    return M.ZoneSpec(zone_id, image, lay.regions(), stack_top=lay.stack_top, **kw)


def manifest(specs: Sequence[M.ZoneSpec], hpc: HpcConfig | None = None, irq_accounting: bool = False) -> M.Manifest:
    return M.Manifest(list(specs), hpc or HpcConfig(), irq_accounting=irq_accounting)


def single_zone(image: Image, *, quantum: int = M.DEFAULT_QUANTUM, signatures: Mapping[int, HpcSignature] | None = None,
                with_monitor: bool = False, irq_period: int | None = None, irq_handler: str | None = None,
                irq_accounting: bool = False) -> M.System:
    """One user zone (id 1, slot 0), optionally beside a monitoring zone (id 0)."""
    specs = [zone_spec(1, image, 0, quantum_cycles=quantum, irq_period=irq_period, irq_handler=irq_handler)]
    if with_monitor:
        specs.insert(0, zone_spec(0, monitor_image(slot=1), 1, quantum_cycles=quantum, monitor=True))
    return M.System(manifest(specs, irq_accounting=irq_accounting), signatures)


# The monitoring zone's user-mode body: sweep the counter window forever.
MONITOR_SOURCE = f"""
.text
.type _start, @function
_start:
    li s0, {M.WINDOW_BASE:#x}
.Lsweep:
    mv t0, s0
    li t1, 8
.Lslot:
    lw t2, 8(t0)
    add s1, s1, t2
    addi t0, t0, {M.WINDOW_SLOT}
    addi t1, t1, -1
    bnez t1, .Lslot
    j .Lsweep
"""


def monitor_image(slot: int = 1) -> Image:
    return build_image(MONITOR_SOURCE, slot)


def conserved(system: M.System) -> bool:
    """Per-zone tallies sum to the core's own event totals."""
    total = sum((z.tally for z in system.zones), start=0 * system.machine.total)
    return bool((total == system.machine.total).all())
