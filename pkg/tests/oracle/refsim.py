"""Independent reference models used as test oracles.

Nothing here imports r5guard. The interpreter decodes with its own bit
slicing and keeps memory in a dict of bytes, so agreement with the numpy
kernel is evidence rather than tautology.
"""

from __future__ import annotations

M32 = 0xFFFFFFFF


def sx(v: int, bits: int) -> int:
    v &= (1 << bits) - 1
    return v - (1 << bits) if v >> (bits - 1) else v


def s32(v: int) -> int:
    return sx(v, 32)


class Trap(Exception):
    def __init__(self, cause: int, tval: int):
        super().__init__(cause, tval)
        self.cause, self.tval = cause, tval & M32


class RefHart:
    """Machine-mode RV32IM interpreter with no PMP and no CSRs.

    ``regions`` is a list of (lo, hi) byte ranges that are backed; anything
    else faults. Stops (raises Trap) on ecall/ebreak/system instructions.
    """

    def __init__(self, regions, pc: int):
        self.regions = list(regions)
        self.mem: dict[int, int] = {}
        self.x = [0] * 32
        self.pc = pc
        self.retired = 0
        self.stores: list[tuple[int, int, int]] = []

    def backed(self, addr: int, n: int) -> bool:
        return any(lo <= addr and addr + n <= hi for lo, hi in self.regions)

    def load(self, addr: int, n: int) -> int:
        return sum(self.mem.get(addr + i, 0) << (8 * i) for i in range(n))

    def store(self, addr: int, n: int, v: int) -> None:
        for i in range(n):
            self.mem[addr + i] = (v >> (8 * i)) & 0xFF

    def poke_words(self, addr: int, words) -> None:
        for i, w in enumerate(words):
            self.store(addr + 4 * i, 4, w)

    def _wr(self, rd: int, v: int) -> None:
        if rd:
            self.x[rd] = v & M32

    def step(self) -> None:
        pc = self.pc
        if pc & 3:
            raise Trap(0, pc)
        if not self.backed(pc, 4):
            raise Trap(1, pc)
        w = self.load(pc, 4)
        op = w & 0x7F
        rd = (w >> 7) & 0x1F
        f3 = (w >> 12) & 7
        r1 = (w >> 15) & 0x1F
        r2 = (w >> 20) & 0x1F
        f7 = w >> 25
        a, b = self.x[r1], self.x[r2]
        nxt = (pc + 4) & M32
        ill = Trap(2, w)

        if op == 0x37:
            self._wr(rd, w & 0xFFFFF000)
        elif op == 0x17:
            self._wr(rd, pc + (w & 0xFFFFF000))
        elif op == 0x6F:
            off = sx(((w >> 31) << 20) | (((w >> 12) & 0xFF) << 12) | (((w >> 20) & 1) << 11)
                     | (((w >> 21) & 0x3FF) << 1), 21)
            tgt = (pc + off) & M32
            if tgt & 3:
                raise Trap(0, tgt)
            self._wr(rd, nxt)
            nxt = tgt
        elif op == 0x67:
            if f3:
                raise ill
            tgt = (a + sx(w >> 20, 12)) & M32 & ~1
            if tgt & 3:
                raise Trap(0, tgt)
            self._wr(rd, pc + 4)
            nxt = tgt
        elif op == 0x63:
            off = sx(((w >> 31) << 12) | (((w >> 7) & 1) << 11) | (((w >> 25) & 0x3F) << 5)
                     | (((w >> 8) & 0xF) << 1), 13)
            conds = {0: a == b, 1: a != b, 4: s32(a) < s32(b), 5: s32(a) >= s32(b), 6: a < b, 7: a >= b}
            if f3 not in conds:
                raise ill
            if conds[f3]:
                tgt = (pc + off) & M32
                if tgt & 3:
                    raise Trap(0, tgt)
                nxt = tgt
        elif op == 0x03:
            sizes = {0: 1, 1: 2, 2: 4, 4: 1, 5: 2}
            if f3 not in sizes:
                raise ill
            n = sizes[f3]
            addr = (a + sx(w >> 20, 12)) & M32
            if addr % n or not self.backed(addr, n):
                raise Trap(5, addr)
            v = self.load(addr, n)
            if f3 in (0, 1):
                v = sx(v, 8 * n)
            self._wr(rd, v)
        elif op == 0x23:
            sizes = {0: 1, 1: 2, 2: 4}
            if f3 not in sizes:
                raise ill
            n = sizes[f3]
            addr = (a + sx(((w >> 25) << 5) | ((w >> 7) & 0x1F), 12)) & M32
            if addr % n or not self.backed(addr, n):
                raise Trap(7, addr)
            self.store(addr, n, b)
            self.stores.append((addr, n, b & ((1 << (8 * n)) - 1)))
        elif op == 0x13:
            imm = sx(w >> 20, 12)
            if f3 == 0:
                v = a + imm
            elif f3 == 2:
                v = int(s32(a) < imm)
            elif f3 == 3:
                v = int(a < (imm & M32))
            elif f3 == 4:
                v = a ^ imm
            elif f3 == 6:
                v = a | imm
            elif f3 == 7:
                v = a & imm
            elif f3 == 1 and f7 == 0:
                v = a << r2
            elif f3 == 5 and f7 == 0:
                v = a >> r2
            elif f3 == 5 and f7 == 0x20:
                v = s32(a) >> r2
            else:
                raise ill
            self._wr(rd, v)
        elif op == 0x33:
            self._wr(rd, self._alu(f3, f7, a, b, ill))
        else:
            raise ill
        self.pc = nxt
        self.retired += 1

    @staticmethod
    def _alu(f3: int, f7: int, a: int, b: int, ill: Trap) -> int:
        sa, sb = s32(a), s32(b)
        if f7 == 0:
            return [a + b, a << (b & 31), int(sa < sb), int(a < b), a ^ b, a >> (b & 31), a | b, a & b][f3]
        if f7 == 0x20 and f3 in (0, 5):
            return a - b if f3 == 0 else sa >> (b & 31)
        if f7 == 1:
            if f3 == 0:
                return sa * sb
            if f3 == 1:
                return (sa * sb) >> 32
            if f3 == 2:
                return (sa * b) >> 32
            if f3 == 3:
                return (a * b) >> 32
            if f3 in (4, 6):
                if b == 0:
                    return M32 if f3 == 4 else a
                if sa == -(1 << 31) and sb == -1:
                    return a if f3 == 4 else 0
                q = abs(sa) // abs(sb)
                q = q if (sa < 0) == (sb < 0) else -q
                return q if f3 == 4 else sa - q * sb
            if f3 == 5:
                return M32 if b == 0 else a // b
            return a if b == 0 else a % b
        raise ill

    def run(self, max_steps: int):
        """Run until a trap or the step budget; returns the Trap or None."""
        for _ in range(max_steps):
            try:
                self.step()
            except Trap as t:
                return t
        return None


def napot_region(pmpaddr: int) -> tuple[int, int]:
    """Base and size in bytes from a NAPOT pmpaddr value (trailing ones rule).

    pmpaddr holds physical address bits 33:2, so the base may exceed 32 bits.
    """
    ones = 0
    while (pmpaddr >> ones) & 1:
        ones += 1
    size = 1 << (ones + 3)
    base = (pmpaddr & ~((1 << ones) - 1)) << 2
    return base, size


class RefPredictor:
    """Table of two-bit saturating counters, 0..3, taken when >= 2."""

    def __init__(self, entries: int = 1024, init: int = 1):
        self.t = [init] * entries
        self.n = entries

    def update(self, pc: int, taken: bool) -> bool:
        """Return True when the prediction was wrong."""
        i = (pc >> 2) % self.n
        wrong = (self.t[i] >= 2) != taken
        self.t[i] = min(3, self.t[i] + 1) if taken else max(0, self.t[i] - 1)
        return wrong
