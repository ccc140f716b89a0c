"""RV32IM (+Zicsr, Zifencei, mret/wfi) instruction model, decoder and encoder."""

from __future__ import annotations

import enum
from dataclasses import dataclass

MASK32 = 0xFFFFFFFF

REG_NAMES = (
    "zero ra sp gp tp t0 t1 t2 s0 s1 a0 a1 a2 a3 a4 a5 a6 a7 "
    "s2 s3 s4 s5 s6 s7 s8 s9 s10 s11 t3 t4 t5 t6"
).split()

REG_INDEX = {name: i for i, name in enumerate(REG_NAMES)}
REG_INDEX.update({f"x{i}": i for i in range(32)})
REG_INDEX["fp"] = 8


class IllegalInstruction(ValueError):
    """Raised by :func:`decode` for words that are not valid RV32IM encodings."""

    def __init__(self, word: int):
        super().__init__(f"illegal instruction 0x{word & MASK32:08x}")
        self.word = word & MASK32


def sext(value: int, bits: int) -> int:
    value &= (1 << bits) - 1
    return value - (1 << bits) if value >> (bits - 1) else value


class Fmt(enum.Enum):
    R = "R"
    I = "I"
    SHIFT = "SHIFT"
    S = "S"
    B = "B"
    U = "U"
    J = "J"
    CSR = "CSR"
    CSRI = "CSRI"
    FENCE = "FENCE"
    SYS = "SYS"


class Op(str, enum.Enum):
    LUI = "lui"
    AUIPC = "auipc"
    JAL = "jal"
    JALR = "jalr"
    BEQ = "beq"
    BNE = "bne"
    BLT = "blt"
    BGE = "bge"
    BLTU = "bltu"
    BGEU = "bgeu"
    LB = "lb"
    LH = "lh"
    LW = "lw"
    LBU = "lbu"
    LHU = "lhu"
    SB = "sb"
    SH = "sh"
    SW = "sw"
    ADDI = "addi"
    SLTI = "slti"
    SLTIU = "sltiu"
    XORI = "xori"
    ORI = "ori"
    ANDI = "andi"
    SLLI = "slli"
    SRLI = "srli"
    SRAI = "srai"
    ADD = "add"
    SUB = "sub"
    SLL = "sll"
    SLT = "slt"
    SLTU = "sltu"
    XOR = "xor"
    SRL = "srl"
    SRA = "sra"
    OR = "or"
    AND = "and"
    MUL = "mul"
    MULH = "mulh"
    MULHSU = "mulhsu"
    MULHU = "mulhu"
    DIV = "div"
    DIVU = "divu"
    REM = "rem"
    REMU = "remu"
    FENCE = "fence"
    FENCE_I = "fence.i"
    ECALL = "ecall"
    EBREAK = "ebreak"
    MRET = "mret"
    WFI = "wfi"
    CSRRW = "csrrw"
    CSRRS = "csrrs"
    CSRRC = "csrrc"
    CSRRWI = "csrrwi"
    CSRRSI = "csrrsi"
    CSRRCI = "csrrci"

    def __str__(self) -> str:
        return self.value


# op -> (format, opcode, funct3, funct7); funct7 is None where the format has none.
ENCODING: dict[Op, tuple[Fmt, int, int, int | None]] = {
    Op.LUI: (Fmt.U, 0x37, 0, None),
    Op.AUIPC: (Fmt.U, 0x17, 0, None),
    Op.JAL: (Fmt.J, 0x6F, 0, None),
    Op.JALR: (Fmt.I, 0x67, 0, None),
    Op.BEQ: (Fmt.B, 0x63, 0, None),
    Op.BNE: (Fmt.B, 0x63, 1, None),
    Op.BLT: (Fmt.B, 0x63, 4, None),
    Op.BGE: (Fmt.B, 0x63, 5, None),
    Op.BLTU: (Fmt.B, 0x63, 6, None),
    Op.BGEU: (Fmt.B, 0x63, 7, None),
    Op.LB: (Fmt.I, 0x03, 0, None),
    Op.LH: (Fmt.I, 0x03, 1, None),
    Op.LW: (Fmt.I, 0x03, 2, None),
    Op.LBU: (Fmt.I, 0x03, 4, None),
    Op.LHU: (Fmt.I, 0x03, 5, None),
    Op.SB: (Fmt.S, 0x23, 0, None),
    Op.SH: (Fmt.S, 0x23, 1, None),
    Op.SW: (Fmt.S, 0x23, 2, None),
    Op.ADDI: (Fmt.I, 0x13, 0, None),
    Op.SLTI: (Fmt.I, 0x13, 2, None),
    Op.SLTIU: (Fmt.I, 0x13, 3, None),
    Op.XORI: (Fmt.I, 0x13, 4, None),
    Op.ORI: (Fmt.I, 0x13, 6, None),
    Op.ANDI: (Fmt.I, 0x13, 7, None),
    Op.SLLI: (Fmt.SHIFT, 0x13, 1, 0x00),
    Op.SRLI: (Fmt.SHIFT, 0x13, 5, 0x00),
    Op.SRAI: (Fmt.SHIFT, 0x13, 5, 0x20),
    Op.ADD: (Fmt.R, 0x33, 0, 0x00),
    Op.SUB: (Fmt.R, 0x33, 0, 0x20),
    Op.SLL: (Fmt.R, 0x33, 1, 0x00),
    Op.SLT: (Fmt.R, 0x33, 2, 0x00),
    Op.SLTU: (Fmt.R, 0x33, 3, 0x00),
    Op.XOR: (Fmt.R, 0x33, 4, 0x00),
    Op.SRL: (Fmt.R, 0x33, 5, 0x00),
    Op.SRA: (Fmt.R, 0x33, 5, 0x20),
    Op.OR: (Fmt.R, 0x33, 6, 0x00),
    Op.AND: (Fmt.R, 0x33, 7, 0x00),
    Op.MUL: (Fmt.R, 0x33, 0, 0x01),
    Op.MULH: (Fmt.R, 0x33, 1, 0x01),
    Op.MULHSU: (Fmt.R, 0x33, 2, 0x01),
    Op.MULHU: (Fmt.R, 0x33, 3, 0x01),
    Op.DIV: (Fmt.R, 0x33, 4, 0x01),
    Op.DIVU: (Fmt.R, 0x33, 5, 0x01),
    Op.REM: (Fmt.R, 0x33, 6, 0x01),
    Op.REMU: (Fmt.R, 0x33, 7, 0x01),
    Op.FENCE: (Fmt.FENCE, 0x0F, 0, None),
    Op.FENCE_I: (Fmt.FENCE, 0x0F, 1, None),
    Op.ECALL: (Fmt.SYS, 0x73, 0, None),
    Op.EBREAK: (Fmt.SYS, 0x73, 0, None),
    Op.MRET: (Fmt.SYS, 0x73, 0, None),
    Op.WFI: (Fmt.SYS, 0x73, 0, None),
    Op.CSRRW: (Fmt.CSR, 0x73, 1, None),
    Op.CSRRS: (Fmt.CSR, 0x73, 2, None),
    Op.CSRRC: (Fmt.CSR, 0x73, 3, None),
    Op.CSRRWI: (Fmt.CSRI, 0x73, 5, None),
    Op.CSRRSI: (Fmt.CSRI, 0x73, 6, None),
    Op.CSRRCI: (Fmt.CSRI, 0x73, 7, None),
}

SYSTEM_WORDS = {
    Op.ECALL: 0x00000073,
    Op.EBREAK: 0x00100073,
    Op.MRET: 0x30200073,
    Op.WFI: 0x10500073,
}
_SYSTEM_BY_WORD = {w: op for op, w in SYSTEM_WORDS.items()}

_BY_OPCODE: dict[int, list[Op]] = {}
for _op, (_fmt, _opc, _f3, _f7) in ENCODING.items():
    if _fmt is not Fmt.SYS:
        _BY_OPCODE.setdefault(_opc, []).append(_op)

LOADS = frozenset({Op.LB, Op.LH, Op.LW, Op.LBU, Op.LHU})
STORES = frozenset({Op.SB, Op.SH, Op.SW})
BRANCHES = frozenset({Op.BEQ, Op.BNE, Op.BLT, Op.BGE, Op.BLTU, Op.BGEU})
MULDIV = frozenset({Op.MUL, Op.MULH, Op.MULHSU, Op.MULHU, Op.DIV, Op.DIVU, Op.REM, Op.REMU})
CSR_OPS = frozenset({Op.CSRRW, Op.CSRRS, Op.CSRRC, Op.CSRRWI, Op.CSRRSI, Op.CSRRCI})
# integer arithmetic/logic counted by the INT event
INT_ARITH = frozenset({
    Op.ADDI, Op.SLTI, Op.SLTIU, Op.XORI, Op.ORI, Op.ANDI, Op.SLLI, Op.SRLI, Op.SRAI,
    Op.ADD, Op.SUB, Op.SLL, Op.SLT, Op.SLTU, Op.XOR, Op.SRL, Op.SRA, Op.OR, Op.AND,
})


@dataclass(frozen=True)
class Instruction:
    """A decoded instruction.

    ``imm`` holds the sign-extended operand for I/S/B/J/U forms (U-form keeps the
    full ``imm20 << 12`` value), the shift amount for shift-immediates, the CSR
    number for CSR forms and the raw ``fm|pred|succ`` field for fences. For the
    ``csrr*i`` forms ``rs1`` carries the 5-bit zero-extended immediate.
    """

    kind: Op
    rd: int = 0
    rs1: int = 0
    rs2: int = 0
    imm: int = 0
    raw: int = 0

    @classmethod
    def make(cls, kind: Op, rd: int = 0, rs1: int = 0, rs2: int = 0, imm: int = 0) -> Instruction:
        """Build an instruction from fields, filling in ``raw``."""
        proto = cls(Op(kind), rd, rs1, rs2, imm, 0)
        return cls(proto.kind, rd, rs1, rs2, imm, encode(proto))

    def __str__(self) -> str:
        return format_instruction(self)


def _fields(word: int) -> tuple[int, int, int, int, int, int]:
    return (word & 0x7F, (word >> 7) & 0x1F, (word >> 12) & 7,
            (word >> 15) & 0x1F, (word >> 20) & 0x1F, word >> 25)


def decode(word: int) -> Instruction:
    """Decode one 32-bit word. Raises :class:`IllegalInstruction` if undefined."""
    word &= MASK32
    if word in _SYSTEM_BY_WORD:
        return Instruction(_SYSTEM_BY_WORD[word], raw=word)
    opcode, rd, f3, rs1, rs2, f7 = _fields(word)
    if opcode & 3 != 3:
        raise IllegalInstruction(word)
    for op in _BY_OPCODE.get(opcode, ()):
        fmt, _, ef3, ef7 = ENCODING[op]
        if fmt is Fmt.U:
            return Instruction(op, rd=rd, imm=sext(word & 0xFFFFF000, 32), raw=word)
        if fmt is Fmt.J:
            imm = (((word >> 31) & 1) << 20 | ((word >> 12) & 0xFF) << 12
                   | ((word >> 20) & 1) << 11 | ((word >> 21) & 0x3FF) << 1)
            return Instruction(op, rd=rd, imm=sext(imm, 21), raw=word)
        if f3 != ef3:
            continue
        if fmt is Fmt.I:
            return Instruction(op, rd=rd, rs1=rs1, imm=sext(word >> 20, 12), raw=word)
        if fmt is Fmt.SHIFT:
            if f7 != ef7:
                continue
            return Instruction(op, rd=rd, rs1=rs1, imm=rs2, raw=word)
        if fmt is Fmt.R:
            if f7 != ef7:
                continue
            return Instruction(op, rd=rd, rs1=rs1, rs2=rs2, raw=word)
        if fmt is Fmt.S:
            imm = (f7 << 5) | rd
            return Instruction(op, rs1=rs1, rs2=rs2, imm=sext(imm, 12), raw=word)
        if fmt is Fmt.B:
            imm = (((word >> 31) & 1) << 12 | ((word >> 7) & 1) << 11
                   | ((word >> 25) & 0x3F) << 5 | ((word >> 8) & 0xF) << 1)
            return Instruction(op, rs1=rs1, rs2=rs2, imm=sext(imm, 13), raw=word)
        if fmt in (Fmt.CSR, Fmt.CSRI, Fmt.FENCE):
            return Instruction(op, rd=rd, rs1=rs1, imm=word >> 20, raw=word)
    raise IllegalInstruction(word)


def _check(cond: bool, what: str) -> None:
    if not cond:
        raise ValueError(what)


def encode(ins: Instruction) -> int:
    """Encode an instruction's fields (``raw`` is ignored). Raises ValueError on bad operands."""
    op = Op(ins.kind)
    if op in SYSTEM_WORDS:
        return SYSTEM_WORDS[op]
    fmt, opcode, f3, f7 = ENCODING[op]
    rd, rs1, rs2, imm = ins.rd, ins.rs1, ins.rs2, ins.imm
    for r in (rd, rs1, rs2):
        _check(0 <= r < 32, f"register index {r} out of range")
    if fmt is Fmt.R:
        return f7 << 25 | rs2 << 20 | rs1 << 15 | f3 << 12 | rd << 7 | opcode
    if fmt is Fmt.I:
        _check(-2048 <= imm < 2048, f"{op}: immediate {imm} out of 12-bit range")
        return (imm & 0xFFF) << 20 | rs1 << 15 | f3 << 12 | rd << 7 | opcode
    if fmt is Fmt.SHIFT:
        _check(0 <= imm < 32, f"{op}: shift amount {imm} out of range")
        return f7 << 25 | imm << 20 | rs1 << 15 | f3 << 12 | rd << 7 | opcode
    if fmt is Fmt.S:
        _check(-2048 <= imm < 2048, f"{op}: offset {imm} out of 12-bit range")
        imm &= 0xFFF
        return (imm >> 5) << 25 | rs2 << 20 | rs1 << 15 | f3 << 12 | (imm & 0x1F) << 7 | opcode
    if fmt is Fmt.B:
        _check(-4096 <= imm < 4096 and imm % 2 == 0, f"{op}: branch offset {imm} out of range")
        imm &= 0x1FFF
        return ((imm >> 12) & 1) << 31 | ((imm >> 5) & 0x3F) << 25 | rs2 << 20 | rs1 << 15 \
            | f3 << 12 | ((imm >> 1) & 0xF) << 8 | ((imm >> 11) & 1) << 7 | opcode
    if fmt is Fmt.U:
        _check(imm & 0xFFF == 0 and -(1 << 31) <= imm < (1 << 32), f"{op}: bad upper immediate {imm:#x}")
        return (imm & 0xFFFFF000) | rd << 7 | opcode
    if fmt is Fmt.J:
        _check(-(1 << 20) <= imm < (1 << 20) and imm % 2 == 0, f"{op}: jump offset {imm} out of range")
        imm &= 0x1FFFFF
        return ((imm >> 20) & 1) << 31 | ((imm >> 1) & 0x3FF) << 21 | ((imm >> 11) & 1) << 20 \
            | ((imm >> 12) & 0xFF) << 12 | rd << 7 | opcode
    # CSR, CSRI, FENCE share the I layout with an unsigned 12-bit field
    _check(0 <= imm < 4096, f"{op}: field {imm} out of 12-bit range")
    return imm << 20 | rs1 << 15 | f3 << 12 | rd << 7 | opcode


def is_label_word(word: int) -> bool:
    """True for ``lui x0, imm20`` words, which the CFI toolchain uses as labels."""
    return word & 0xFFF == 0x37


def label_word(label_id: int) -> int:
    if not 0 <= label_id < (1 << 20):
        raise ValueError(f"label id {label_id:#x} does not fit in 20 bits")
    return (label_id << 12) | 0x37


def format_instruction(ins: Instruction, pc: int | None = None) -> str:
    op = ins.kind
    fmt = ENCODING[op][0]
    r = REG_NAMES
    if fmt is Fmt.SYS:
        return op.value
    if fmt is Fmt.R:
        return f"{op} {r[ins.rd]}, {r[ins.rs1]}, {r[ins.rs2]}"
    if op in LOADS or op is Op.JALR:
        return f"{op} {r[ins.rd]}, {ins.imm}({r[ins.rs1]})"
    if fmt in (Fmt.I, Fmt.SHIFT):
        return f"{op} {r[ins.rd]}, {r[ins.rs1]}, {ins.imm}"
    if fmt is Fmt.S:
        return f"{op} {r[ins.rs2]}, {ins.imm}({r[ins.rs1]})"
    if fmt is Fmt.B:
        target = f"{(pc + ins.imm) & MASK32:#x}" if pc is not None else f"{ins.imm:+d}"
        return f"{op} {r[ins.rs1]}, {r[ins.rs2]}, {target}"
    if fmt is Fmt.U:
        return f"{op} {r[ins.rd]}, {(ins.imm >> 12) & 0xFFFFF:#x}"
    if fmt is Fmt.J:
        target = f"{(pc + ins.imm) & MASK32:#x}" if pc is not None else f"{ins.imm:+d}"
        return f"{op} {r[ins.rd]}, {target}"
    if fmt is Fmt.CSR:
        return f"{op} {r[ins.rd]}, {ins.imm:#x}, {r[ins.rs1]}"
    if fmt is Fmt.CSRI:
        return f"{op} {r[ins.rd]}, {ins.imm:#x}, {ins.rs1}"
    # fences: keep the raw fields so the text re-assembles to the same word
    if ins.rd == 0 and ins.rs1 == 0:
        return f"{op} {ins.imm:#x}" if ins.imm or op is Op.FENCE else f"{op}"
    return f"{op} {ins.imm:#x}, {r[ins.rd]}, {r[ins.rs1]}"
