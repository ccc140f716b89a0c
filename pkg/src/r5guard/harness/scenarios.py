"""Scripted attacks against a single zone, and outcome classification.

An attacker holds the threat-model capability only: it may rewrite memory the
zone itself could write in user mode. Every write is checked against the
zone's live PMP view before it lands; registers and text are never touched.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

from ..detector import HpcSignature
from ..monitor import System, Trigger, Zone, report_json
from ..pmp import AccessKind, Priv
from . import build as B
from .corpus import DEVICE

PREVENTED_PMP = "Prevented(PmpFault)"
PREVENTED_LABEL = "Prevented(LabelMismatch)"
PREVENTED_SHADOW = "Prevented(ShadowMismatch)"
UNDETECTED = "Undetected"
ALARM = "Alarm"
NO_ALARM = "NoAlarm"

_VIOLATION_OUTCOME = {
    "PmpFault": PREVENTED_PMP,
    "LabelMismatch": PREVENTED_LABEL,
    "ShadowOverflow": PREVENTED_SHADOW,
    "ShadowUnderflow": PREVENTED_SHADOW,
}


class ScenarioSetupError(Exception):
    pass


@dataclass(frozen=True)
class AttackWrite:
    """Write ``words`` at ``address`` once the zone reaches ``trigger``.

    ``address`` is an absolute address, a symbol, ``"shadow"`` (the zone's
    first shadow stack) or ``("sp", offset)``. Word values may be symbols.
    ``trigger`` is a symbol (fires before that instruction runs) or a zone
    cycle count.
    """

    address: int | str | tuple[str, int]
    words: tuple
    trigger: str | int


@dataclass
class Scenario:
    name: str
    source: str
    expectation: str
    attack: tuple[AttackWrite, ...] = ()
    instrument: bool = True
    hints: Mapping[str, list[str]] | None = None
    signature: HpcSignature | None = None
    description: str = ""


@dataclass
class ScenarioResult:
    name: str
    outcome: str
    expectation: str
    report: dict
    applied: int = 0
    violations: list = field(default_factory=list)

    @property
    def matched(self) -> bool:
        return self.outcome == self.expectation

    def to_json(self) -> dict:
        return {"name": self.name, "outcome": self.outcome, "expectation": self.expectation,
                "matched": self.matched, "applied": self.applied, "violations": self.violations,
                "report": self.report}


def _resolve(value, image, zone: Zone, system: System) -> int:
    if isinstance(value, int):
        return value & 0xFFFFFFFF
    if isinstance(value, tuple) and value[0] == "sp":
        return (int(system.machine.regs[2]) + value[1]) & 0xFFFFFFFF
    if value == "shadow":
        return zone.shadow[0].base
    return image.symbol(value)


def _attack_action(write: AttackWrite, image, counter: list):
    def action(system: System, zone: Zone) -> None:
        mach = system.machine
        addr = _resolve(write.address, image, zone, system)
        words = [_resolve(w, image, zone, system) for w in write.words]
        for k in range(len(words)):
            if not mach.pmp.check(addr + 4 * k, 4, AccessKind.WRITE, Priv.U):
                raise ScenarioSetupError(
                    f"attack write at {addr + 4 * k:#010x} is outside zone {zone.id}'s user-writable memory")
        for k, w in enumerate(words):
            mach.write_word(addr + 4 * k, w)
        counter[0] += 1
    return action


def arm(system: System, zone_id: int, image, attack: Sequence[AttackWrite]) -> list:
    """Install triggers for ``attack``; returns a one-element applied-count cell."""
    counter = [0]
    for w in attack:
        if isinstance(w.trigger, str):
            system.triggers.append(Trigger(zone_id, _attack_action(w, image, counter), pc=image.symbol(w.trigger)))
        else:
            system.triggers.append(Trigger(zone_id, _attack_action(w, image, counter), cycle=int(w.trigger)))
    return counter


def classify(zone_report: dict, reference_outputs: list | None, applied: int) -> str:
    kinds = [v["type"] for v in zone_report["violations"]]
    for kind in kinds:
        if kind in _VIOLATION_OUTCOME:
            return _VIOLATION_OUTCOME[kind]
    if "DetectorAlarm" in kinds:
        return ALARM
    if applied:
        if reference_outputs is not None and zone_report["outputs"] != reference_outputs:
            return UNDETECTED
        return PREVENTED_SHADOW
    if kinds:
        return kinds[0]
    return NO_ALARM


def run_scenario(s: Scenario, budget: int = 20_000_000) -> ScenarioResult:
    image, _ = B.build(s.source, 0, instrument=s.instrument, hints=s.hints)
    sigs = {1: s.signature} if s.signature is not None else None

    reference = None
    if s.attack:
        ref = B.single_zone(image, with_monitor=sigs is not None, signatures=sigs).run(budget)
        reference = ref["zones"]["1"]["outputs"]

    system = B.single_zone(image, with_monitor=sigs is not None, signatures=sigs)
    try:
        for w in s.attack:
            if isinstance(w.trigger, str):
                image.symbol(w.trigger)
        counter = arm(system, 1, image, s.attack)
    except KeyError as err:
        raise ScenarioSetupError(str(err)) from None
    report = system.run(budget)
    if not B.conserved(system):
        raise AssertionError("per-zone event tallies diverge from the core totals")
    zr = report["zones"]["1"]
    outcome = classify(zr, reference, counter[0])
    return ScenarioResult(s.name, outcome, s.expectation, report, counter[0], zr["violations"])


# ---------------------------------------------------------------- attack programs

RETURN_SLOT_SOURCE = f"""
.text
.type _start, @function
_start:
    call main
    li t0, {DEVICE:#x}
    sw a0, 4(t0)
.Lhang:
    j .Lhang

.type main, @function
.type process, @function
.type win, @function
main:
    addi sp, sp, -16
    sw ra, 12(sp)
    la a0, message
    li a1, 4
    call process
    li t0, {DEVICE:#x}
    sw a0, 0(t0)
    li a0, 0
    lw ra, 12(sp)
    addi sp, sp, 16
    ret

# process(src, n): copy n words into a 16-byte local buffer, return their sum
process:
    addi sp, sp, -32
    sw ra, 28(sp)
process_body:
    mv t0, sp
    mv t1, a1
.Lcopy:
    lw t2, 0(a0)
    sw t2, 0(t0)
    addi a0, a0, 4
    addi t0, t0, 4
    addi t1, t1, -1
    bnez t1, .Lcopy
    li a0, 0
    mv t0, sp
.Lsum:
    lw t2, 0(t0)
    add a0, a0, t2
    addi t0, t0, 4
    addi a1, a1, -1
    bnez a1, .Lsum
    lw ra, 28(sp)
    addi sp, sp, 32
    ret

# never called legitimately
win:
    li t0, {DEVICE:#x}
    li t1, 0xbad
    sw t1, 0(t0)
    sw zero, 4(t0)
.Lwin_hang:
    j .Lwin_hang

.data
message:
    .word 1, 2, 3, 4
"""

SHADOW_TAMPER_SOURCE = f"""
.text
.type _start, @function
_start:
    call main
    li t0, {DEVICE:#x}
    sw a0, 4(t0)
.Lhang:
    j .Lhang

.type main, @function
.type bump, @function
main:
    addi sp, sp, -16
    sw ra, 12(sp)
    call bump
    li t0, {DEVICE:#x}
    sw a0, 0(t0)
    li a0, 0
    lw ra, 12(sp)
    addi sp, sp, 16
    ret

# bump(): increment the counter that cfg_ptr points at
bump:
    addi sp, sp, -16
    sw ra, 12(sp)
attack_point:
    la t0, cfg_ptr
    lw t0, 0(t0)
    lw a0, 0(t0)
    addi a0, a0, 1
    sw a0, 0(t0)
    lw ra, 12(sp)
    addi sp, sp, 16
    ret

.data
cfg_ptr:
    .word counter
counter:
    .word 41
"""

FORWARD_EDGE_SOURCE = f"""
.text
.type _start, @function
_start:
    call main
    li t0, {DEVICE:#x}
    sw a0, 4(t0)
.Lhang:
    j .Lhang

.type main, @function
.type func1, @function
.type func2, @function
.type target1, @function
.type target2, @function
.type target3, @function
main:
    addi sp, sp, -16
    sw ra, 12(sp)
    la t0, mode
    lw t0, 0(t0)
    la t2, f1_slot
    la t1, target1
    sw t1, 0(t2)
    la t3, f2_slot
    la t4, target3
    sw t4, 0(t3)
    beqz t0, attack_point
    la a1, target2
    sw a1, 0(t2)
    sw a1, 0(t3)
attack_point:
    call func1
    call func2
    li a0, 0
    lw ra, 12(sp)
    addi sp, sp, 16
    ret

# func1 -> target1 | target2
func1:
    addi sp, sp, -16
    sw ra, 12(sp)
    la t0, f1_slot
    lw t0, 0(t0)
    jalr ra, 0(t0)
    lw ra, 12(sp)
    addi sp, sp, 16
    ret

# func2 -> target2 | target3
func2:
    addi sp, sp, -16
    sw ra, 12(sp)
    la t0, f2_slot
    lw t0, 0(t0)
    jalr ra, 0(t0)
    lw ra, 12(sp)
    addi sp, sp, 16
    ret

target1:
    li t0, {DEVICE:#x}
    li t1, 1
    sw t1, 0(t0)
    ret

target2:
    li t0, {DEVICE:#x}
    li t1, 2
    sw t1, 0(t0)
    ret

target3:
    li t0, {DEVICE:#x}
    li t1, 3
    sw t1, 0(t0)
    ret

.data
mode:
    .word 0
f1_slot:
    .word 0
f2_slot:
    .word 0
"""


def attack_suite() -> list[Scenario]:
    """Return-slot overwrite, shadow-stack tampering, and the two forward-edge swaps."""
    overflow = AttackWrite(("sp", 0), (0x41414141,) * 7 + ("win",), "process_body")
    return [
        Scenario("return-slot-overwrite", RETURN_SLOT_SOURCE, PREVENTED_SHADOW, (overflow,),
                 description="stack buffer overflow replaces the saved return address with win"),
        Scenario("shadow-stack-tamper", SHADOW_TAMPER_SOURCE, PREVENTED_PMP,
                 (AttackWrite("cfg_ptr", ("shadow",), "attack_point"),),
                 description="data pointer redirected at the zone's shadow stack"),
        Scenario("func1-to-target3", FORWARD_EDGE_SOURCE, PREVENTED_LABEL,
                 (AttackWrite("f1_slot", ("target3",), "attack_point"),),
                 description="func1's stored target swapped to a function only func2 may call"),
        Scenario("func1-to-target2", FORWARD_EDGE_SOURCE, UNDETECTED,
                 (AttackWrite("f1_slot", ("target2",), "attack_point"),),
                 description="func1's stored target swapped to another target it may legally call"),
    ]


def baseline_suite() -> list[Scenario]:
    """The same attacks on uninstrumented images: none is stopped."""
    out = []
    for s in attack_suite():
        expect = PREVENTED_PMP if s.name == "shadow-stack-tamper" else UNDETECTED
        out.append(Scenario(s.name + "/baseline", s.source, expect, s.attack, instrument=False,
                            description=s.description))
    return out


def results_json(results: Sequence[ScenarioResult]) -> str:
    return report_json({"scenarios": [r.to_json() for r in results]})

