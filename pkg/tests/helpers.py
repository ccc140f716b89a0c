"""Small builders shared by the test modules."""

import random

from r5guard.core import Machine
from r5guard.isa import Instruction, Op
from r5guard.pmp import napot_entry, Priv

RAM = 0x80000000
I = Instruction.make


def machine_with(words, *, base=RAM, priv=Priv.M, user_regions=(), mtvec=0x80000F00) -> Machine:
    """Load ``words`` at ``base`` and point the hart at them.

    ``user_regions`` is a list of (base, size, perms) NAPOT grants for U-mode.
    """
    m = Machine()
    for k, w in enumerate(words):
        m.write_word(base + 4 * k, w.raw if isinstance(w, Instruction) else w)
    for i, (b, size, perms) in enumerate(user_regions):
        m.pmp.configure(i, napot_entry(b, size, perms))
    m.cpu.pc = base
    m.cpu.priv = priv
    m.csrs.write(0x305, mtvec)
    return m


def user_machine(words) -> Machine:
    """U-mode hart with code at RAM (rx) and a data page at RAM+0x1000 (rw)."""
    return machine_with(words, priv=Priv.U, user_regions=[(RAM, 0x1000, "rx"), (RAM + 0x1000, 0x1000, "rw")])


def random_program(rng: random.Random, n: int) -> list[int]:
    """Mostly-legal straight-line code with short branches; x20/x21 are data pointers, x22 a code pointer."""
    words = []
    regs = list(range(1, 30))
    for k in range(n):
        r = rng.random()
        rd, a, b = rng.choice(regs), rng.choice(regs), rng.choice(regs)
        if r < 0.30:
            op = rng.choice([Op.ADD, Op.SUB, Op.SLL, Op.SLT, Op.SLTU, Op.XOR, Op.SRL, Op.SRA, Op.OR, Op.AND,
                             Op.MUL, Op.MULH, Op.MULHSU, Op.MULHU, Op.DIV, Op.DIVU, Op.REM, Op.REMU])
            words.append(I(op, rd, a, b).raw)
        elif r < 0.50:
            op = rng.choice([Op.ADDI, Op.SLTI, Op.SLTIU, Op.XORI, Op.ORI, Op.ANDI])
            words.append(I(op, rd, a, 0, rng.randrange(-2048, 2048)).raw)
        elif r < 0.58:
            words.append(I(rng.choice([Op.SLLI, Op.SRLI, Op.SRAI]), rd, a, 0, rng.randrange(32)).raw)
        elif r < 0.62:
            words.append(I(rng.choice([Op.LUI, Op.AUIPC]), rd, 0, 0, rng.randrange(-(1 << 19), 1 << 19) << 12).raw)
        elif r < 0.75:
            op = rng.choice([Op.LB, Op.LH, Op.LW, Op.LBU, Op.LHU])
            words.append(I(op, rng.choice([r_ for r_ in regs if r_ not in (20, 21)]), rng.choice([20, 21]), 0,
                           rng.randrange(-64, 64)).raw)
        elif r < 0.85:
            op = rng.choice([Op.SB, Op.SH, Op.SW])
            words.append(I(op, 0, rng.choice([20, 21]), b, rng.randrange(-64, 64)).raw)
        elif r < 0.93:
            op = rng.choice([Op.BEQ, Op.BNE, Op.BLT, Op.BGE, Op.BLTU, Op.BGEU])
            words.append(I(op, 0, a, b, rng.choice([-8, -4, 4, 8, 12, 16, 2])).raw)
        elif r < 0.96:
            words.append(I(Op.JAL, rd, 0, 0, rng.choice([4, 8, 16, -4, 6])).raw)
        elif r < 0.99:
            words.append(I(Op.JALR, rd, rng.choice([22, 0]), 0, rng.choice([0, 4, 8, 1, 2])).raw)
        else:
            words.append(rng.choice([0, 0xFFFFFFFF, 0x0000001B]))
    return words


def seed_regs(rng: random.Random, base: int) -> dict[int, int]:
    regs = {i: rng.getrandbits(32) if rng.random() < 0.7 else rng.randrange(-4, 5) & 0xFFFFFFFF
            for i in range(1, 32)}
    regs[20] = 0x80080000 + 4 * rng.randrange(16)
    regs[21] = 0x80080100 + rng.randrange(8)
    regs[22] = base + 8
    return regs
