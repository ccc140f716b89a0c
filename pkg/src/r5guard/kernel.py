"""The instruction-stepping loop.

All machine state lives in numpy arrays so the loop compiles under numba:

``mem``   uint32 words of RAM starting at :data:`RAM_BASE`
``io``    uint32 words of the device window starting at :data:`MMIO_BASE`
``regs``  int64[32], unsigned 32-bit values; ``regs[0]`` stays 0
``st``    int64 scalar state, indexed by the ``ST_*`` constants
``pmp``   int64[n, 4] decoded PMP rules: ``lo, hi, perms, locked``
``hpm``   int64[k, 2] programmable counters: ``event index (-1 = off), count``
``tally`` int64[6] live per-zone event tallies; ``total`` int64[6] machine-wide
``bp``    int8 table of two-bit branch predictor counters
``mio``   int64[m, 2] address intervals counted by the MIO event

:func:`run_kernel` executes up to ``max_steps`` instructions and returns an
``EXIT_*`` code. CSR instructions and ``mret`` in M-mode are returned to the
caller unexecuted (``EXIT_SLOW``); they are rare and handled in Python.
"""

from __future__ import annotations

import numpy as np

from ._jit import njit

MASK32 = 0xFFFFFFFF
RAM_BASE = 0x80000000
MMIO_BASE = 0x10000000

PRIV_U = 0
PRIV_M = 3

PERM_R = 1
PERM_W = 2
PERM_X = 4

ST_PC = 0
ST_PRIV = 1
ST_MCYCLE = 2
ST_MINSTRET = 3
ST_MTIME = 4
ST_MTVEC = 5
ST_MEPC = 6
ST_MCAUSE = 7
ST_MTVAL = 8
ST_MSTATUS = 9
ST_MSCRATCH = 10
ST_EXIT_ADDR = 11
ST_EXIT_VAL = 12
ST_BREAK_PC = 13
ST_LAST_EVENTS = 14
ST_LAST_ADDR = 15
ST_SIZE = 16

EXIT_BUDGET = 0
EXIT_TRAP = 1
EXIT_MMIO = 2
EXIT_BREAK = 3
EXIT_SLOW = 4

EV_INT = 1
EV_JAL = 2
EV_CB = 4
EV_MIO = 8
EV_PFE = 16
EV_BDM = 32
N_EVENTS = 6

CAUSE_MISALIGNED_FETCH = 0
CAUSE_FETCH_FAULT = 1
CAUSE_ILLEGAL = 2
CAUSE_BREAKPOINT = 3
CAUSE_LOAD_FAULT = 5
CAUSE_STORE_FAULT = 7
CAUSE_ECALL_U = 8
CAUSE_ECALL_M = 11

MSTATUS_MIE = 1 << 3
MSTATUS_MPIE = 1 << 7
MSTATUS_MPP = 3 << 11


def new_state() -> np.ndarray:
    st = np.zeros(ST_SIZE, dtype=np.int64)
    st[ST_PRIV] = PRIV_M
    st[ST_BREAK_PC] = -1
    st[ST_LAST_ADDR] = -1
    return st


@njit
def sext32(v):
    v = v & MASK32
    if v & 0x80000000:
        return v - 0x100000000
    return v


@njit
def pmp_allows(pmp, addr, width, perm, priv):
    end = addr + width
    for i in range(pmp.shape[0]):
        lo = pmp[i, 0]
        hi = pmp[i, 1]
        if hi <= lo:
            continue
        if addr >= lo and end <= hi:
            if priv == PRIV_M and pmp[i, 3] == 0:
                return True
            return (pmp[i, 2] & perm) != 0
        if addr < hi and end > lo:
            return False
    return priv == PRIV_M


@njit
def record_events(ev, tally, total, hpm):
    if ev == 0:
        return
    for k in range(N_EVENTS):
        if (ev >> k) & 1:
            tally[k] += 1
            total[k] += 1
            for c in range(hpm.shape[0]):
                if hpm[c, 0] == k:
                    hpm[c, 1] += 1


@njit
def take_trap(st, cause, tval, tally, total, hpm):
    """Trap entry: precise, registers untouched, one cycle consumed."""
    st[ST_MEPC] = st[ST_PC]
    st[ST_MCAUSE] = cause
    st[ST_MTVAL] = tval & MASK32
    ms = int(st[ST_MSTATUS])
    mie = (ms >> 3) & 1
    ms = (ms & ~(MSTATUS_MIE | MSTATUS_MPIE | MSTATUS_MPP)) | (mie << 7) | (int(st[ST_PRIV]) << 11)
    st[ST_MSTATUS] = ms
    st[ST_PRIV] = PRIV_M
    st[ST_PC] = int(st[ST_MTVEC]) & ~3 & MASK32
    st[ST_MCYCLE] += 1
    st[ST_MTIME] += 1
    st[ST_LAST_EVENTS] = EV_PFE
    record_events(EV_PFE, tally, total, hpm)


@njit
def in_ranges(ranges, addr):
    for i in range(ranges.shape[0]):
        if ranges[i, 0] <= addr < ranges[i, 1]:
            return True
    return False


@njit
def mulhu32(a, b):
    # (a * b) >> 32 for unsigned 32-bit a, b without exceeding int64
    ah = a >> 16
    al = a & 0xFFFF
    bh = b >> 16
    bl = b & 0xFFFF
    mid = ah * bl + al * bh + ((al * bl) >> 16)
    return ah * bh + (mid >> 16)


@njit
def alu(f3, f7, a, b):
    """Register-register ALU and M-extension ops; returns (result, is_int, ok)."""
    if f7 == 0x01:
        sa = sext32(a)
        sb = sext32(b)
        if f3 == 0:
            return (sa * sb) & MASK32, False, True
        if f3 == 1:
            return ((sa * sb) >> 32) & MASK32, False, True
        if f3 == 2:
            return ((sa * b) >> 32) & MASK32, False, True
        if f3 == 3:
            return mulhu32(a, b) & MASK32, False, True
        if f3 == 4:
            if b == 0:
                return MASK32, False, True
            if sa == -0x80000000 and sb == -1:
                return 0x80000000, False, True
            q = abs(sa) // abs(sb)
            if (sa < 0) != (sb < 0):
                q = -q
            return q & MASK32, False, True
        if f3 == 5:
            if b == 0:
                return MASK32, False, True
            return a // b, False, True
        if f3 == 6:
            if b == 0:
                return a, False, True
            if sa == -0x80000000 and sb == -1:
                return 0, False, True
            r = abs(sa) % abs(sb)
            if sa < 0:
                r = -r
            return r & MASK32, False, True
        if b == 0:
            return a, False, True
        return a % b, False, True
    if f7 == 0x20:
        if f3 == 0:
            return (a - b) & MASK32, True, True
        if f3 == 5:
            return (sext32(a) >> (b & 31)) & MASK32, True, True
        return 0, False, False
    if f7 != 0:
        return 0, False, False
    if f3 == 0:
        return (a + b) & MASK32, True, True
    if f3 == 1:
        return (a << (b & 31)) & MASK32, True, True
    if f3 == 2:
        return (1 if sext32(a) < sext32(b) else 0), True, True
    if f3 == 3:
        return (1 if a < b else 0), True, True
    if f3 == 4:
        return a ^ b, True, True
    if f3 == 5:
        return a >> (b & 31), True, True
    if f3 == 6:
        return a | b, True, True
    return a & b, True, True


@njit
def run_kernel(mem, io, regs, st, pmp, hpm, tally, total, bp, mio, max_steps):
    ram_end = RAM_BASE + 4 * mem.shape[0]
    io_end = MMIO_BASE + 4 * io.shape[0]
    bp_mask = bp.shape[0] - 1
    for _ in range(max_steps):
        pc = int(st[ST_PC])
        if pc == st[ST_BREAK_PC]:
            return EXIT_BREAK
        priv = int(st[ST_PRIV])
        if pc & 3:
            take_trap(st, CAUSE_MISALIGNED_FETCH, pc, tally, total, hpm)
            return EXIT_TRAP
        if pc < RAM_BASE or pc >= ram_end or not pmp_allows(pmp, pc, 4, PERM_X, priv):
            take_trap(st, CAUSE_FETCH_FAULT, pc, tally, total, hpm)
            return EXIT_TRAP
        w = int(mem[(pc - RAM_BASE) >> 2])
        opc = w & 0x7F
        rd = (w >> 7) & 31
        f3 = (w >> 12) & 7
        rs1 = (w >> 15) & 31
        rs2 = (w >> 20) & 31
        f7 = w >> 25
        a = int(regs[rs1])
        b = int(regs[rs2])
        npc = pc + 4
        ev = 0
        res = 0
        wb = False
        mmio_store = False
        st[ST_LAST_ADDR] = -1

        if opc == 0x33:
            res, is_int, ok = alu(f3, f7, a, b)
            if not ok:
                take_trap(st, CAUSE_ILLEGAL, w, tally, total, hpm)
                return EXIT_TRAP
            wb = True
            if is_int:
                ev = EV_INT
        elif opc == 0x13:
            imm = sext32(w) >> 20
            wb = True
            ev = EV_INT
            if f3 == 0:
                res = (a + imm) & MASK32
            elif f3 == 2:
                res = 1 if sext32(a) < imm else 0
            elif f3 == 3:
                res = 1 if a < (imm & MASK32) else 0
            elif f3 == 4:
                res = (a ^ imm) & MASK32
            elif f3 == 6:
                res = (a | imm) & MASK32
            elif f3 == 7:
                res = a & imm & MASK32
            elif f3 == 1 and f7 == 0:
                res = (a << rs2) & MASK32
            elif f3 == 5 and f7 == 0:
                res = a >> rs2
            elif f3 == 5 and f7 == 0x20:
                res = (sext32(a) >> rs2) & MASK32
            else:
                take_trap(st, CAUSE_ILLEGAL, w, tally, total, hpm)
                return EXIT_TRAP
        elif opc == 0x37:
            res = w & 0xFFFFF000
            wb = True
        elif opc == 0x17:
            res = (pc + (w & 0xFFFFF000)) & MASK32
            wb = True
        elif opc == 0x6F:
            imm = (((w >> 31) & 1) << 20) | (((w >> 12) & 0xFF) << 12) \
                | (((w >> 20) & 1) << 11) | (((w >> 21) & 0x3FF) << 1)
            if imm & 0x100000:
                imm -= 0x200000
            target = (pc + imm) & MASK32
            if target & 3:
                take_trap(st, CAUSE_MISALIGNED_FETCH, target, tally, total, hpm)
                return EXIT_TRAP
            res = npc & MASK32
            wb = True
            npc = target
            ev = EV_JAL
        elif opc == 0x67:
            if f3 != 0:
                take_trap(st, CAUSE_ILLEGAL, w, tally, total, hpm)
                return EXIT_TRAP
            target = (a + (sext32(w) >> 20)) & MASK32 & ~1
            if target & 3:
                take_trap(st, CAUSE_MISALIGNED_FETCH, target, tally, total, hpm)
                return EXIT_TRAP
            res = npc & MASK32
            wb = True
            npc = target
        elif opc == 0x63:
            if f3 == 0:
                taken = a == b
            elif f3 == 1:
                taken = a != b
            elif f3 == 4:
                taken = sext32(a) < sext32(b)
            elif f3 == 5:
                taken = sext32(a) >= sext32(b)
            elif f3 == 6:
                taken = a < b
            elif f3 == 7:
                taken = a >= b
            else:
                take_trap(st, CAUSE_ILLEGAL, w, tally, total, hpm)
                return EXIT_TRAP
            if taken:
                imm = (((w >> 31) & 1) << 12) | (((w >> 7) & 1) << 11) \
                    | (((w >> 25) & 0x3F) << 5) | (((w >> 8) & 0xF) << 1)
                if imm & 0x1000:
                    imm -= 0x2000
                target = (pc + imm) & MASK32
                if target & 3:
                    take_trap(st, CAUSE_MISALIGNED_FETCH, target, tally, total, hpm)
                    return EXIT_TRAP
                npc = target
            ev = EV_CB
            idx = (pc >> 2) & bp_mask
            ctr = int(bp[idx])
            if (ctr >= 2) != taken:
                ev |= EV_BDM
            if taken:
                if ctr < 3:
                    bp[idx] = ctr + 1
            elif ctr > 0:
                bp[idx] = ctr - 1
        elif opc == 0x03:
            if f3 == 0 or f3 == 4:
                width = 1
            elif f3 == 1 or f3 == 5:
                width = 2
            elif f3 == 2:
                width = 4
            else:
                take_trap(st, CAUSE_ILLEGAL, w, tally, total, hpm)
                return EXIT_TRAP
            addr = (a + (sext32(w) >> 20)) & MASK32
            if addr & (width - 1) or not pmp_allows(pmp, addr, width, PERM_R, priv):
                take_trap(st, CAUSE_LOAD_FAULT, addr, tally, total, hpm)
                return EXIT_TRAP
            if RAM_BASE <= addr and addr + width <= ram_end:
                word = int(mem[(addr - RAM_BASE) >> 2])
            elif MMIO_BASE <= addr and addr + width <= io_end:
                word = int(io[(addr - MMIO_BASE) >> 2])
            else:
                take_trap(st, CAUSE_LOAD_FAULT, addr, tally, total, hpm)
                return EXIT_TRAP
            word = word >> (8 * (addr & 3))
            if width == 1:
                res = word & 0xFF
                if f3 == 0 and res & 0x80:
                    res |= 0xFFFFFF00
            elif width == 2:
                res = word & 0xFFFF
                if f3 == 1 and res & 0x8000:
                    res |= 0xFFFF0000
            else:
                res = word & MASK32
            wb = True
            st[ST_LAST_ADDR] = addr
            if in_ranges(mio, addr):
                ev = EV_MIO
        elif opc == 0x23:
            if f3 > 2:
                take_trap(st, CAUSE_ILLEGAL, w, tally, total, hpm)
                return EXIT_TRAP
            width = 1 << f3
            imm = ((sext32(w) >> 25) << 5) | rd
            addr = (a + imm) & MASK32
            if addr & (width - 1) or not pmp_allows(pmp, addr, width, PERM_W, priv):
                take_trap(st, CAUSE_STORE_FAULT, addr, tally, total, hpm)
                return EXIT_TRAP
            shift = 8 * (addr & 3)
            vmask = (1 << (8 * width)) - 1
            val = b & vmask
            if RAM_BASE <= addr and addr + width <= ram_end:
                i = (addr - RAM_BASE) >> 2
                mem[i] = (int(mem[i]) & ~(vmask << shift) & MASK32) | (val << shift)
            elif MMIO_BASE <= addr and addr + width <= io_end:
                i = (addr - MMIO_BASE) >> 2
                io[i] = (int(io[i]) & ~(vmask << shift) & MASK32) | (val << shift)
                mmio_store = True
                st[ST_EXIT_ADDR] = addr
                st[ST_EXIT_VAL] = val
            else:
                take_trap(st, CAUSE_STORE_FAULT, addr, tally, total, hpm)
                return EXIT_TRAP
            st[ST_LAST_ADDR] = addr
            if in_ranges(mio, addr):
                ev = EV_MIO
        elif opc == 0x0F:
            if f3 == 1:
                ev = EV_PFE
            elif f3 != 0:
                take_trap(st, CAUSE_ILLEGAL, w, tally, total, hpm)
                return EXIT_TRAP
        elif opc == 0x73:
            if w == 0x00000073:
                take_trap(st, CAUSE_ECALL_U if priv == PRIV_U else CAUSE_ECALL_M, 0, tally, total, hpm)
                return EXIT_TRAP
            if w == 0x00100073:
                take_trap(st, CAUSE_BREAKPOINT, pc, tally, total, hpm)
                return EXIT_TRAP
            if w == 0x10500073:
                pass
            elif (w == 0x30200073 or (f3 != 0 and f3 != 4)) and priv == PRIV_M:
                return EXIT_SLOW
            else:
                take_trap(st, CAUSE_ILLEGAL, w, tally, total, hpm)
                return EXIT_TRAP
        else:
            take_trap(st, CAUSE_ILLEGAL, w, tally, total, hpm)
            return EXIT_TRAP

        if wb and rd != 0:
            regs[rd] = res
        st[ST_PC] = npc & MASK32
        st[ST_MCYCLE] += 1
        st[ST_MTIME] += 1
        st[ST_MINSTRET] += 1
        st[ST_LAST_EVENTS] = ev
        record_events(ev, tally, total, hpm)
        if mmio_store:
            return EXIT_MMIO
    return EXIT_BUDGET
