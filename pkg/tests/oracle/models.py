"""Model-based sequence checkers for the PMP unit and the shadow stack.

Each ``*_sequences`` function drives the real implementation and an
independent reference side by side and returns a list of discrepancies
(empty means agreement). The acceptance suite and the unit tests share them.
"""

from __future__ import annotations

import random

from .refsim import napot_region

OFF, TOR, NA4, NAPOT = 0, 1, 2, 3
R, W, X = 1, 2, 4
PRIV_U, PRIV_M = 0, 3


def ref_region(entries, i):
    mode, addr, _, _ = entries[i]
    if mode == OFF:
        return None
    if mode == TOR:
        lo = entries[i - 1][1] << 2 if i else 0
        hi = addr << 2
        return (lo, hi) if hi > lo else None
    if mode == NA4:
        return addr << 2, (addr << 2) + 4
    base, size = napot_region(addr)
    return base, base + size


def ref_decide(entries, addr, width, kind, priv) -> bool:
    for i, (_, _, perms, locked) in enumerate(entries):
        r = ref_region(entries, i)
        if r is None:
            continue
        lo, hi = r
        if lo <= addr and addr + width <= hi:
            if priv == PRIV_M and not locked:
                return True
            return bool(perms & kind)
        if addr < hi and addr + width > lo:
            return False
    return priv == PRIV_M


def ref_may_write(entries, i, new_addr) -> bool:
    if entries[i][3]:
        return False
    nxt = i + 1
    if nxt < len(entries) and entries[nxt][3] and entries[nxt][0] == TOR and new_addr != entries[i][1]:
        return False
    return True


WINDOW = 0x80000000


def _random_entry(rng: random.Random):
    mode = rng.choice([OFF, TOR, NA4, NAPOT, NAPOT])
    perms = rng.randrange(8)
    if perms & W and not perms & R:
        perms &= ~W  # W without R is reserved
    locked = rng.random() < 0.3
    if mode == NAPOT:
        k = rng.randrange(0, 12)  # 8 B .. 32 KiB
        size = 8 << k
        base = WINDOW + size * rng.randrange(0x10000 // size)
        addr = (base >> 2) | ((size >> 3) - 1)
    else:
        addr = (WINDOW >> 2) + rng.randrange(0x4000)
    return mode, addr, perms, locked


def pmp_lock_sequences(n_sequences: int = 1000, ops: int = 24, seed: int = 0) -> list[str]:
    """Random configure/check/reset sequences; checks lock semantics against the reference."""
    from r5guard.pmp import AccessKind, PmpEntry, PmpLockedError, PmpMode, PmpUnit, Priv

    rng = random.Random(seed)
    bad: list[str] = []
    for s in range(n_sequences):
        unit = PmpUnit()
        ref = [(OFF, 0, 0, False)] * len(unit)
        locked_seen: set[int] = set()
        for step in range(ops):
            r = rng.random()
            where = f"seq {s} step {step}"
            if r < 0.45:
                i = rng.randrange(len(ref))
                e = _random_entry(rng)
                allowed = ref_may_write(ref, i, e[1])
                try:
                    unit.configure(i, PmpEntry(PmpMode(e[0]), e[1], e[2], e[3]))
                    took = True
                except PmpLockedError:
                    took = False
                if took != allowed:
                    bad.append(f"{where}: configure({i}) took={took} expected={allowed}")
                if allowed:
                    ref[i] = e
            elif r < 0.5:
                unit.reset()
                ref = [(OFF, 0, 0, False)] * len(unit)
                locked_seen = set()
            else:
                addr = WINDOW - 0x100 + rng.randrange(0x10200)
                width = rng.choice([1, 2, 4])
                kind = rng.choice([R, W, X])
                priv = rng.choice([PRIV_U, PRIV_M])
                got = unit.check(addr, width, AccessKind(kind), Priv(priv))
                want = ref_decide(ref, addr, width, kind, priv)
                if got != want:
                    bad.append(f"{where}: check({addr:#x},{width},{kind},{priv}) got {got} want {want}")
            now = set(unit.locked_indices())
            if now != {i for i, e in enumerate(ref) if e[3]}:
                bad.append(f"{where}: locked set {sorted(now)} differs from reference")
            if not (0.45 <= r < 0.5) and not locked_seen <= now:
                bad.append(f"{where}: a lock was released without reset")
            locked_seen = now
            # locked entries bind M-mode: probe the first word of each locked region
            for i in now:
                reg = ref_region(ref, i)
                if reg is None:
                    continue
                width = min(4, reg[1] - reg[0])
                for kind in (R, W, X):
                    if unit.check(reg[0], width, AccessKind(kind), Priv.M) != ref_decide(ref, reg[0], width, kind, PRIV_M):
                        bad.append(f"{where}: M-mode decision in locked entry {i} differs")
    return bad


def shadow_sequences(n_sequences: int = 10_000, seed: int = 0) -> list[str]:
    """Random push/pop programs against a plain list, including both edges."""
    from r5guard.shadow import Overflow, ShadowStack, Underflow

    rng = random.Random(seed)
    bad: list[str] = []
    for s in range(n_sequences):
        cap = rng.choice([1, 2, 3, 8, 64, 256])
        stack = ShadowStack(cap)
        ref: list[int] = []
        peak = 0
        for step in range(rng.randrange(1, 3 * cap + 8)):
            push = rng.random() < (0.55 if len(ref) < cap else 0.35)
            if push:
                v = rng.getrandbits(32)
                try:
                    stack.push(v)
                    ok = True
                except Overflow:
                    ok = False
                if ok != (len(ref) < cap):
                    bad.append(f"seq {s} step {step}: push ok={ok} with depth {len(ref)}/{cap}")
                if len(ref) < cap:
                    ref.append(v)
            else:
                try:
                    got = stack.pop()
                except Underflow:
                    got = None
                want = ref.pop() if ref else None
                if got != want:
                    bad.append(f"seq {s} step {step}: pop {got} want {want}")
            peak = max(peak, len(ref))
            if stack.depth != len(ref) or stack.top() != (ref[-1] if ref else None):
                bad.append(f"seq {s} step {step}: depth/top differ")
        if stack.snapshot() != ref or stack.high_watermark != peak:
            bad.append(f"seq {s}: final contents or high watermark differ")
    return bad
