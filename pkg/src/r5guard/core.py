"""RV32IM hart with M/U privilege, CSRs, PMP and precise traps."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace

import numpy as np

from . import kernel as K
from .hpc import HpcConfig, HpcEventKind, events_from_mask
from .isa import CSR_OPS, IllegalInstruction, Instruction, Op, decode
from .pmp import PmpEntry, PmpUnit, Priv

DEFAULT_RAM_SIZE = 1 << 20
DEFAULT_IO_SIZE = 0x1000


class Cause(enum.IntEnum):
    INSTRUCTION_ADDRESS_MISALIGNED = 0
    INSTRUCTION_ACCESS_FAULT = 1
    ILLEGAL_INSTRUCTION = 2
    BREAKPOINT = 3
    LOAD_ACCESS_FAULT = 5
    STORE_ACCESS_FAULT = 7
    ECALL_FROM_U = 8
    ECALL_FROM_M = 11


ACCESS_FAULTS = frozenset({Cause.INSTRUCTION_ACCESS_FAULT, Cause.LOAD_ACCESS_FAULT, Cause.STORE_ACCESS_FAULT})


@dataclass(frozen=True)
class TrapCause:
    code: Cause
    tval: int = 0


@dataclass(frozen=True)
class Retired:
    events: frozenset[HpcEventKind] = frozenset()
    mem_addr: int | None = None
    trapped = False


@dataclass(frozen=True)
class Trapped:
    cause: TrapCause
    events: frozenset[HpcEventKind] = frozenset({HpcEventKind.PFE})
    trapped = True


StepOutcome = Retired | Trapped


class Csr(enum.IntEnum):
    MSTATUS = 0x300
    MISA = 0x301
    MIE = 0x304
    MTVEC = 0x305
    MSCRATCH = 0x340
    MEPC = 0x341
    MCAUSE = 0x342
    MTVAL = 0x343
    MIP = 0x344
    PMPCFG0 = 0x3A0
    PMPADDR0 = 0x3B0
    MHPMEVENT3 = 0x323
    MCYCLE = 0xB00
    MINSTRET = 0xB02
    MHPMCOUNTER3 = 0xB03
    MCYCLEH = 0xB80
    MINSTRETH = 0xB82
    MHPMCOUNTER3H = 0xB83
    CYCLE = 0xC00
    TIME = 0xC01
    INSTRET = 0xC02
    CYCLEH = 0xC80
    TIMEH = 0xC81
    INSTRETH = 0xC82
    MHARTID = 0xF14


MISA_RV32IMU = (1 << 30) | (1 << 8) | (1 << 12) | (1 << 20)
MSTATUS_WRITABLE = K.MSTATUS_MIE | K.MSTATUS_MPIE | K.MSTATUS_MPP


class CsrFile:
    """CSR view over a :class:`Machine`'s state arrays."""

    def __init__(self, machine: Machine):
        self._m = machine

    def _st(self, idx: int) -> int:
        return int(self._m.st[idx])

    mcycle = property(lambda self: self._st(K.ST_MCYCLE))
    minstret = property(lambda self: self._st(K.ST_MINSTRET))
    mtime = property(lambda self: self._st(K.ST_MTIME))
    mtvec = property(lambda self: self._st(K.ST_MTVEC))
    mepc = property(lambda self: self._st(K.ST_MEPC))
    mcause = property(lambda self: self._st(K.ST_MCAUSE))
    mtval = property(lambda self: self._st(K.ST_MTVAL))
    mstatus = property(lambda self: self._st(K.ST_MSTATUS))

    @property
    def mpp(self) -> Priv:
        return Priv((self.mstatus >> 11) & 3)

    def mhpmcounter(self, n: int) -> int:
        i = n - 3
        return int(self._m.hpm[i, 1]) if 0 <= i < len(self._m.hpm) else 0

    def mhpmevent(self, n: int) -> HpcEventKind | None:
        i = n - 3
        if 0 <= i < len(self._m.hpm) and self._m.hpm[i, 0] >= 0:
            return HpcEventKind(int(self._m.hpm[i, 0]))
        return None

    def read(self, csr: int) -> int:
        m = self._m
        st = m.st
        n_hpm = len(m.hpm)
        if csr == Csr.MSTATUS:
            return int(st[K.ST_MSTATUS])
        if csr == Csr.MISA:
            return MISA_RV32IMU
        if csr in (Csr.MIE, Csr.MIP, Csr.MHARTID):
            return 0
        if csr == Csr.MTVEC:
            return int(st[K.ST_MTVEC])
        if csr == Csr.MSCRATCH:
            return int(st[K.ST_MSCRATCH])
        if csr == Csr.MEPC:
            return int(st[K.ST_MEPC])
        if csr == Csr.MCAUSE:
            return int(st[K.ST_MCAUSE])
        if csr == Csr.MTVAL:
            return int(st[K.ST_MTVAL])
        if Csr.PMPCFG0 <= csr < Csr.PMPCFG0 + 4:
            base = 4 * (csr - Csr.PMPCFG0)
            return sum(m.pmp.entries[base + j].cfg_byte << (8 * j) for j in range(4))
        if Csr.PMPADDR0 <= csr < Csr.PMPADDR0 + 16:
            return m.pmp.entries[csr - Csr.PMPADDR0].addr
        if Csr.MHPMEVENT3 <= csr < Csr.MHPMEVENT3 + 29:
            i = csr - Csr.MHPMEVENT3
            return int(m.hpm[i, 0]) + 1 if i < n_hpm else 0
        for lo_addr, hi_addr, idx in ((Csr.MCYCLE, Csr.MCYCLEH, K.ST_MCYCLE), (Csr.CYCLE, Csr.CYCLEH, K.ST_MCYCLE),
                                      (Csr.MINSTRET, Csr.MINSTRETH, K.ST_MINSTRET),
                                      (Csr.INSTRET, Csr.INSTRETH, K.ST_MINSTRET), (Csr.TIME, Csr.TIMEH, K.ST_MTIME)):
            if csr == lo_addr:
                return int(st[idx]) & 0xFFFFFFFF
            if csr == hi_addr:
                return (int(st[idx]) >> 32) & 0xFFFFFFFF
        if Csr.MHPMCOUNTER3 <= csr < Csr.MHPMCOUNTER3 + 29:
            i = csr - Csr.MHPMCOUNTER3
            return int(m.hpm[i, 1]) & 0xFFFFFFFF if i < n_hpm else 0
        if Csr.MHPMCOUNTER3H <= csr < Csr.MHPMCOUNTER3H + 29:
            i = csr - Csr.MHPMCOUNTER3H
            return (int(m.hpm[i, 1]) >> 32) & 0xFFFFFFFF if i < n_hpm else 0
        raise KeyError(csr)

    def write(self, csr: int, value: int) -> None:
        """Write a CSR; read-only or unknown CSRs raise KeyError. Locked PMP state is WARL-ignored."""
        m = self._m
        st = m.st
        value &= 0xFFFFFFFF
        if (csr >> 10) == 3 or csr in (Csr.MISA, Csr.MHARTID):
            if csr == Csr.MISA:
                return
            raise KeyError(csr)
        if csr == Csr.MSTATUS:
            mpp = (value >> 11) & 3
            value = (value & MSTATUS_WRITABLE & ~K.MSTATUS_MPP) | ((mpp if mpp in (0, 3) else 0) << 11)
            st[K.ST_MSTATUS] = value
        elif csr in (Csr.MIE, Csr.MIP):
            return
        elif csr == Csr.MTVEC:
            st[K.ST_MTVEC] = value & ~3
        elif csr == Csr.MSCRATCH:
            st[K.ST_MSCRATCH] = value
        elif csr == Csr.MEPC:
            st[K.ST_MEPC] = value & ~3
        elif csr == Csr.MCAUSE:
            st[K.ST_MCAUSE] = value
        elif csr == Csr.MTVAL:
            st[K.ST_MTVAL] = value
        elif Csr.PMPCFG0 <= csr < Csr.PMPCFG0 + 4:
            base = 4 * (csr - Csr.PMPCFG0)
            for j in range(4):
                old = m.pmp.entries[base + j]
                cfg = (value >> (8 * j)) & 0x9F
                if cfg != old.cfg_byte:
                    m.pmp.try_configure(base + j, PmpEntry.from_cfg_byte(cfg, old.addr))
        elif Csr.PMPADDR0 <= csr < Csr.PMPADDR0 + 16:
            i = csr - Csr.PMPADDR0
            m.pmp.try_configure(i, replace(m.pmp.entries[i], addr=value))
        elif Csr.MHPMEVENT3 <= csr < Csr.MHPMEVENT3 + 29:
            i = csr - Csr.MHPMEVENT3
            if i < len(m.hpm):
                m.hpm[i, 0] = value - 1 if 1 <= value <= len(HpcEventKind) else -1
        elif csr in (Csr.MCYCLE, Csr.MINSTRET):
            idx = K.ST_MCYCLE if csr == Csr.MCYCLE else K.ST_MINSTRET
            st[idx] = (int(st[idx]) & ~0xFFFFFFFF) | value
        elif csr in (Csr.MCYCLEH, Csr.MINSTRETH):
            idx = K.ST_MCYCLE if csr == Csr.MCYCLEH else K.ST_MINSTRET
            st[idx] = (int(st[idx]) & 0xFFFFFFFF) | (value << 32)
        elif Csr.MHPMCOUNTER3 <= csr < Csr.MHPMCOUNTER3 + 29:
            i = csr - Csr.MHPMCOUNTER3
            if i < len(m.hpm):
                m.hpm[i, 1] = (int(m.hpm[i, 1]) & ~0xFFFFFFFF) | value
        elif Csr.MHPMCOUNTER3H <= csr < Csr.MHPMCOUNTER3H + 29:
            i = csr - Csr.MHPMCOUNTER3H
            if i < len(m.hpm):
                m.hpm[i, 1] = (int(m.hpm[i, 1]) & 0xFFFFFFFF) | (value << 32)
        else:
            raise KeyError(csr)


@dataclass(frozen=True)
class CpuSnapshot:
    pc: int
    priv: Priv
    regs: tuple[int, ...]
    mcycle: int
    minstret: int


class CpuState:
    """Register-file view over a :class:`Machine`."""

    def __init__(self, machine: Machine):
        self._m = machine

    @property
    def pc(self) -> int:
        return int(self._m.st[K.ST_PC])

    @pc.setter
    def pc(self, value: int) -> None:
        self._m.st[K.ST_PC] = value & 0xFFFFFFFF

    @property
    def priv(self) -> Priv:
        return Priv(int(self._m.st[K.ST_PRIV]))

    @priv.setter
    def priv(self, value: Priv) -> None:
        self._m.st[K.ST_PRIV] = int(value)

    @property
    def regs(self) -> np.ndarray:
        return self._m.regs

    def __getitem__(self, i: int) -> int:
        return int(self._m.regs[i])

    def __setitem__(self, i: int, value: int) -> None:
        if i:
            self._m.regs[i] = value & 0xFFFFFFFF


@dataclass
class Machine:
    """One hart plus RAM, a device window and the PMP unit."""

    ram_size: int = DEFAULT_RAM_SIZE
    io_size: int = DEFAULT_IO_SIZE
    hpc: HpcConfig = field(default_factory=HpcConfig)

    def __post_init__(self):
        self.mem = np.zeros(self.ram_size // 4, dtype="<u4")
        self.io = np.zeros(self.io_size // 4, dtype="<u4")
        self.regs = np.zeros(32, dtype=np.int64)
        self.st = K.new_state()
        self.pmp = PmpUnit()
        self.hpm = self.hpc.counter_array()
        self.mio = self.hpc.mio_array()
        self.tally = np.zeros(K.N_EVENTS, dtype=np.int64)
        self.total = np.zeros(K.N_EVENTS, dtype=np.int64)
        self.bp = np.full(1024, 1, dtype=np.int8)
        self.mmio_log: list[tuple[int, int]] = []
        self.cpu = CpuState(self)
        self.csrs = CsrFile(self)

    # -- memory, bypassing PMP (monitor / loader access) -------------------

    def _locate(self, addr: int, size: int) -> tuple[np.ndarray, int]:
        if K.RAM_BASE <= addr and addr + size <= K.RAM_BASE + self.ram_size:
            return self.mem.view(np.uint8), addr - K.RAM_BASE
        if K.MMIO_BASE <= addr and addr + size <= K.MMIO_BASE + self.io_size:
            return self.io.view(np.uint8), addr - K.MMIO_BASE
        raise IndexError(f"address range {addr:#x}+{size} is not backed by memory")

    def read_bytes(self, addr: int, size: int) -> bytes:
        buf, off = self._locate(addr, size)
        return buf[off:off + size].tobytes()

    def write_bytes(self, addr: int, data: bytes) -> None:
        buf, off = self._locate(addr, len(data))
        buf[off:off + len(data)] = np.frombuffer(bytes(data), dtype=np.uint8)

    def read_word(self, addr: int) -> int:
        return int.from_bytes(self.read_bytes(addr, 4), "little")

    def write_word(self, addr: int, value: int) -> None:
        self.write_bytes(addr, (value & 0xFFFFFFFF).to_bytes(4, "little"))

    def ram_words(self, addr: int, count: int) -> np.ndarray:
        """Writable uint32 view of ``count`` RAM words at ``addr``."""
        i = (addr - K.RAM_BASE) >> 2
        if addr % 4 or i < 0 or i + count > len(self.mem):
            raise IndexError(f"RAM window {addr:#x}+{4 * count} out of range")
        return self.mem[i:i + count]

    # -- execution -----------------------------------------------------------

    def snapshot(self) -> CpuSnapshot:
        return CpuSnapshot(self.cpu.pc, self.cpu.priv, tuple(int(r) for r in self.regs),
                           int(self.st[K.ST_MCYCLE]), int(self.st[K.ST_MINSTRET]))

    def run_raw(self, max_steps: int) -> int:
        return K.run_kernel(self.mem, self.io, self.regs, self.st, self.pmp.ranges, self.hpm,
                            self.tally, self.total, self.bp, self.mio, max_steps)

    def trap(self, cause: Cause, tval: int = 0) -> Trapped:
        K.take_trap(self.st, int(cause), tval, self.tally, self.total, self.hpm)
        return Trapped(TrapCause(cause, tval & 0xFFFFFFFF))

    def last_trap(self) -> TrapCause:
        return TrapCause(Cause(int(self.st[K.ST_MCAUSE])), int(self.st[K.ST_MTVAL]))

    def _retire_slow(self, count_cycle: bool = True, count_instret: bool = True) -> None:
        st = self.st
        st[K.ST_PC] = (int(st[K.ST_PC]) + 4) & 0xFFFFFFFF
        if count_cycle:
            st[K.ST_MCYCLE] += 1
        st[K.ST_MTIME] += 1
        if count_instret:
            st[K.ST_MINSTRET] += 1
        st[K.ST_LAST_EVENTS] = 0

    def slow_step(self) -> StepOutcome:
        """Execute the CSR access or ``mret`` at pc (M-mode only)."""
        word = self.read_word(self.cpu.pc)
        try:
            ins = decode(word)
        except IllegalInstruction:
            return self.trap(Cause.ILLEGAL_INSTRUCTION, word)
        if ins.kind is Op.MRET:
            return self.execute_mret()
        if ins.kind not in CSR_OPS:
            raise RuntimeError(f"slow path reached for {ins}")
        return self._csr_op(ins)

    def _csr_op(self, ins: Instruction) -> StepOutcome:
        csr = ins.imm
        immediate = ins.kind in (Op.CSRRWI, Op.CSRRSI, Op.CSRRCI)
        src = ins.rs1 if immediate else int(self.regs[ins.rs1])
        base = ins.kind.value.rstrip("i")
        writes = base == "csrrw" or ins.rs1 != 0
        try:
            old = self.csrs.read(csr) if (base != "csrrw" or ins.rd) else 0
            if writes and (csr >> 10) == 3:
                raise KeyError(csr)
            if writes:
                if base == "csrrw":
                    new = src
                else:
                    cur = self.csrs.read(csr)
                    new = cur | src if base == "csrrs" else cur & ~src
                self.csrs.write(csr, new)
        except KeyError:
            return self.trap(Cause.ILLEGAL_INSTRUCTION, ins.raw)
        if ins.rd:
            self.regs[ins.rd] = old & 0xFFFFFFFF
        touched_cycle = writes and csr in (Csr.MCYCLE, Csr.MCYCLEH)
        touched_instret = writes and csr in (Csr.MINSTRET, Csr.MINSTRETH)
        self._retire_slow(not touched_cycle, not touched_instret)
        return Retired()

    def execute_mret(self) -> StepOutcome:
        """Return from M-mode: pc := mepc, priv := MPP, MIE := MPIE."""
        st = self.st
        if int(st[K.ST_PRIV]) != K.PRIV_M:
            return self.trap(Cause.ILLEGAL_INSTRUCTION, 0x30200073)
        ms = int(st[K.ST_MSTATUS])
        mpp = (ms >> 11) & 3
        mpie = (ms >> 7) & 1
        ms = (ms & ~(K.MSTATUS_MIE | K.MSTATUS_MPP)) | (mpie << 3) | K.MSTATUS_MPIE
        st[K.ST_MSTATUS] = ms
        st[K.ST_PRIV] = mpp
        st[K.ST_PC] = int(st[K.ST_MEPC])
        st[K.ST_MCYCLE] += 1
        st[K.ST_MTIME] += 1
        st[K.ST_MINSTRET] += 1
        st[K.ST_LAST_EVENTS] = 0
        return Retired()

    def resume(self, pc: int, priv: Priv = Priv.U) -> None:
        """Monitor-side return to ``pc`` in ``priv``: the state effect of mret, no cycle charged."""
        st = self.st
        ms = int(st[K.ST_MSTATUS])
        st[K.ST_MSTATUS] = (ms & ~(K.MSTATUS_MIE | K.MSTATUS_MPP)) | (((ms >> 7) & 1) << 3) | K.MSTATUS_MPIE
        st[K.ST_PRIV] = int(priv)
        st[K.ST_PC] = pc & 0xFFFFFFFF

    def step(self) -> StepOutcome:
        """Execute exactly one instruction."""
        saved_break = int(self.st[K.ST_BREAK_PC])
        self.st[K.ST_BREAK_PC] = -1
        try:
            code = self.run_raw(1)
        finally:
            self.st[K.ST_BREAK_PC] = saved_break
        if code == K.EXIT_SLOW:
            return self.slow_step()
        if code == K.EXIT_TRAP:
            return Trapped(self.last_trap())
        if code == K.EXIT_MMIO:
            self.mmio_log.append((int(self.st[K.ST_EXIT_ADDR]), int(self.st[K.ST_EXIT_VAL])))
        addr = int(self.st[K.ST_LAST_ADDR])
        return Retired(events_from_mask(int(self.st[K.ST_LAST_EVENTS])), None if addr < 0 else addr)

    def run(self, max_steps: int) -> int:
        """Run up to ``max_steps`` instructions, servicing slow-path instructions inline.

        Returns the kernel exit code that stopped execution (never ``EXIT_SLOW``).
        """
        start = int(self.st[K.ST_MCYCLE])
        while True:
            remaining = max_steps - (int(self.st[K.ST_MCYCLE]) - start)
            if remaining <= 0:
                return K.EXIT_BUDGET
            code = self.run_raw(remaining)
            if code != K.EXIT_SLOW:
                if code == K.EXIT_MMIO:
                    self.mmio_log.append((int(self.st[K.ST_EXIT_ADDR]), int(self.st[K.ST_EXIT_VAL])))
                return code
            outcome = self.slow_step()
            if outcome.trapped:
                return K.EXIT_TRAP


def step(machine: Machine) -> StepOutcome:
    return machine.step()


def execute_mret(machine: Machine) -> StepOutcome:
    return machine.execute_mret()
