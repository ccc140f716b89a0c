"""A small two-section RV32IM assembler and the matching disassembler.

Source syntax follows GNU ``as`` for the supported subset::

    .text
    .type main, @function
    main:
        la   a1, lt
        call sort
    .data
    table: .word lt, gt

Functions are declared with ``.type name, @function`` (or ``.func name``);
``.nocfi`` inside a function disables indirect-jump checks for it. Registers
t5/t6 (x30/x31) are reserved for the CFI check sequences.
"""

from __future__ import annotations

import ast
import enum
import operator
import re
from dataclasses import dataclass, field

from .image import Image, Segment
from .isa import (
    BRANCHES, ENCODING, LOADS, REG_INDEX, REG_NAMES, STORES, Fmt, IllegalInstruction, Instruction, Op,
    decode, encode, is_label_word, sext,
)
from .kernel import PERM_R, PERM_W, PERM_X

DEFAULT_TEXT_BASE = 0x80010000
DEFAULT_DATA_BASE = 0x80014000
RESERVED_REGS = frozenset({30, 31})

CSR_NAMES = {
    "mstatus": 0x300, "misa": 0x301, "mie": 0x304, "mtvec": 0x305, "mscratch": 0x340, "mepc": 0x341,
    "mcause": 0x342, "mtval": 0x343, "mip": 0x344, "mcycle": 0xB00, "minstret": 0xB02,
    "mcycleh": 0xB80, "minstreth": 0xB82, "cycle": 0xC00, "time": 0xC01, "instret": 0xC02,
    "mhartid": 0xF14,
}
CSR_NAMES.update({f"pmpcfg{i}": 0x3A0 + i for i in range(4)})
CSR_NAMES.update({f"pmpaddr{i}": 0x3B0 + i for i in range(16)})
CSR_NAMES.update({f"mhpmcounter{i}": 0xB00 + i for i in range(3, 32)})
CSR_NAMES.update({f"mhpmevent{i}": 0x320 + i for i in range(3, 32)})


class AsmErrorKind(enum.Enum):
    UNKNOWN_MNEMONIC = "UnknownMnemonic"
    UNDEFINED_SYMBOL = "UndefinedSymbol"
    RESERVED_REGISTER = "ReservedRegister"
    RANGE_IMMEDIATE = "RangeImmediate"
    SYNTAX = "Syntax"
    DUPLICATE_SYMBOL = "DuplicateSymbol"
    SPACE_EXHAUSTED = "SpaceExhausted"


class AsmError(Exception):
    def __init__(self, kind: AsmErrorKind, message: str, line: int | None = None):
        where = f"line {line}: " if line else ""
        super().__init__(f"{kind.value}: {where}{message}")
        self.kind = kind
        self.line = line


@dataclass(eq=False)
class Ref:
    """Symbolic operand resolved at layout time.

    ``kind`` is ``abs`` (data words, ``%hi``/``%lo`` via ``hi``/``lo``), ``pcrel``
    (branch/jal targets), ``pcrel_hi`` (auipc) or ``pcrel_lo`` (the partner of
    the auipc given by ``anchor``).
    """

    kind: str
    symbol: str
    addend: int = 0
    anchor: AsmInstr | None = None


@dataclass(eq=False)
class AsmInstr:
    op: Op
    rd: int = 0
    rs1: int = 0
    rs2: int = 0
    imm: int | Ref = 0
    line: int = 0
    tag: str | None = None

    def regs_used(self) -> set[int]:
        fmt = ENCODING[self.op][0]
        used = set()
        if fmt in (Fmt.R, Fmt.I, Fmt.SHIFT, Fmt.U, Fmt.J, Fmt.CSR, Fmt.CSRI, Fmt.FENCE):
            used.add(self.rd)
        if fmt in (Fmt.R, Fmt.I, Fmt.SHIFT, Fmt.S, Fmt.B, Fmt.CSR, Fmt.FENCE):
            used.add(self.rs1)
        if fmt in (Fmt.R, Fmt.S, Fmt.B):
            used.add(self.rs2)
        return used


@dataclass(eq=False)
class LabelDef:
    name: str
    line: int = 0


@dataclass(eq=False)
class DataItem:
    kind: str  # word | half | byte | space | align
    values: list = field(default_factory=list)
    line: int = 0


@dataclass
class AsmProgram:
    text: list = field(default_factory=list)
    data: list = field(default_factory=list)
    functions: list[str] = field(default_factory=list)
    nocfi: set[str] = field(default_factory=set)
    constants: dict[str, int] = field(default_factory=dict)
    text_base: int = DEFAULT_TEXT_BASE
    data_base: int = DEFAULT_DATA_BASE

    def function_bodies(self) -> dict[str, list]:
        """Text items per function: from its label up to the next function label."""
        fset = set(self.functions)
        bodies: dict[str, list] = {}
        current = None
        for item in self.text:
            if isinstance(item, LabelDef) and item.name in fset:
                current = item.name
                bodies[current] = []
                continue
            if current is not None:
                bodies[current].append(item)
        return bodies

    def function_of(self) -> dict[int, str]:
        """Map ``id(item)`` of text items to their enclosing function."""
        out = {}
        for name, body in self.function_bodies().items():
            for item in body:
                out[id(item)] = name
        return out

    def copy(self) -> AsmProgram:
        return AsmProgram(list(self.text), list(self.data), list(self.functions), set(self.nocfi),
                          dict(self.constants), self.text_base, self.data_base)

    def symbols_defined(self) -> set[str]:
        return {i.name for i in self.text + self.data if isinstance(i, LabelDef)}

    def instructions(self):
        return [i for i in self.text if isinstance(i, AsmInstr)]


# ---------------------------------------------------------------- parsing

_BINOPS = {ast.Add: operator.add, ast.Sub: operator.sub, ast.Mult: operator.mul, ast.FloorDiv: operator.floordiv,
           ast.LShift: operator.lshift, ast.RShift: operator.rshift, ast.BitOr: operator.or_,
           ast.BitAnd: operator.and_, ast.BitXor: operator.xor, ast.Mod: operator.mod}
_UNOPS = {ast.USub: operator.neg, ast.UAdd: operator.pos, ast.Invert: operator.invert}
_SYMBOL_RE = re.compile(r"^([A-Za-z_.$][\w.$]*)\s*(?:([+-])\s*(.+))?$")
_MEM_RE = re.compile(r"^(.*)\(\s*([\w$]+)\s*\)$")
_RELOC_RE = re.compile(r"^%(hi|lo|pcrel_hi|pcrel_lo)\(\s*([A-Za-z_.$][\w.$]*)\s*\)$")


class _Parser:
    def __init__(self, allow_reserved: bool):
        self.allow_reserved = allow_reserved
        self.prog = AsmProgram()
        self.section = "text"
        self.current_function: str | None = None
        self.line = 0
        self._pending_pcrel: dict[str, AsmInstr] = {}

    def error(self, kind: AsmErrorKind, msg: str) -> AsmError:
        return AsmError(kind, msg, self.line)

    def emit(self, item) -> None:
        (self.prog.text if self.section == "text" else self.prog.data).append(item)

    # operands --------------------------------------------------------

    def reg(self, tok: str) -> int:
        tok = tok.strip().lower()
        if tok not in REG_INDEX:
            raise self.error(AsmErrorKind.SYNTAX, f"expected register, got {tok!r}")
        r = REG_INDEX[tok]
        if r in RESERVED_REGS and not self.allow_reserved:
            raise self.error(AsmErrorKind.RESERVED_REGISTER, f"register {tok} is reserved for CFI checks")
        return r

    def const(self, text: str) -> int:
        text = text.strip()
        if len(text) == 3 and text[0] == text[2] == "'":
            return ord(text[1])
        try:
            node = ast.parse(text, mode="eval").body
        except SyntaxError:
            raise self.error(AsmErrorKind.SYNTAX, f"bad expression {text!r}") from None
        return self._eval(node, text)

    def _eval(self, node, text: str) -> int:
        if isinstance(node, ast.Constant) and isinstance(node.value, int):
            return node.value
        if isinstance(node, ast.Name):
            if node.id in self.prog.constants:
                return self.prog.constants[node.id]
            raise self.error(AsmErrorKind.UNDEFINED_SYMBOL, f"{node.id!r} is not a constant")
        if isinstance(node, ast.BinOp) and type(node.op) in _BINOPS:
            return _BINOPS[type(node.op)](self._eval(node.left, text), self._eval(node.right, text))
        if isinstance(node, ast.UnaryOp) and type(node.op) in _UNOPS:
            return _UNOPS[type(node.op)](self._eval(node.operand, text))
        raise self.error(AsmErrorKind.SYNTAX, f"unsupported expression {text!r}")

    def value(self, text: str, kind: str = "abs") -> int | Ref:
        """A constant, or a symbol (+/- constant) reference."""
        text = text.strip()
        m = _RELOC_RE.match(text)
        if m:
            rk, sym = m.groups()
            if rk == "pcrel_lo":
                anchor = self._pending_pcrel.get(sym)
                if anchor is None:
                    raise self.error(AsmErrorKind.UNDEFINED_SYMBOL, f"%pcrel_lo({sym}) has no auipc anchor")
                return Ref("pcrel_lo", anchor.imm.symbol, anchor.imm.addend, anchor)
            return Ref(rk, sym)
        try:
            return self.const(text)
        except AsmError as err:
            if err.kind is AsmErrorKind.SYNTAX and not _SYMBOL_RE.match(text):
                raise
        m = _SYMBOL_RE.match(text)
        if not m:
            raise self.error(AsmErrorKind.SYNTAX, f"bad operand {text!r}")
        sym, sign, rest = m.groups()
        if sym in self.prog.constants and not sign:
            return self.prog.constants[sym]
        addend = 0
        if sign:
            addend = self.const(rest)
            if sign == "-":
                addend = -addend
        return Ref(kind, sym, addend)

    def mem(self, text: str) -> tuple[int | Ref, int]:
        m = _MEM_RE.match(text.strip())
        if not m:
            raise self.error(AsmErrorKind.SYNTAX, f"expected offset(reg), got {text!r}")
        off = m.group(1).strip()
        return (self.value(off) if off else 0), self.reg(m.group(2))

    def csr(self, text: str) -> int:
        text = text.strip().lower()
        if text in CSR_NAMES:
            return CSR_NAMES[text]
        return self.const(text)

    # statements ------------------------------------------------------

    def parse(self, source: str) -> AsmProgram:
        for self.line, raw in enumerate(source.splitlines(), 1):
            text = raw.split("#", 1)[0].strip()
            while text:
                m = re.match(r"^([A-Za-z_.$][\w.$]*)\s*:(.*)$", text)
                if not m:
                    break
                self.label(m.group(1))
                text = m.group(2).strip()
            if not text:
                continue
            parts = text.split(None, 1)
            mnem = parts[0].lower()
            ops = _split_operands(parts[1]) if len(parts) > 1 else []
            if mnem.startswith("."):
                self.directive(mnem, ops, parts[1] if len(parts) > 1 else "")
            else:
                if self.section != "text":
                    raise self.error(AsmErrorKind.SYNTAX, "instructions are only allowed in .text")
                self.instruction(mnem, ops)
        return self.prog

    def label(self, name: str) -> None:
        if name in self.prog.symbols_defined():
            raise self.error(AsmErrorKind.DUPLICATE_SYMBOL, f"symbol {name!r} defined twice")
        self.emit(LabelDef(name, self.line))
        if self.section == "text" and name in self.prog.functions:
            self.current_function = name

    def directive(self, d: str, ops: list[str], rest: str) -> None:
        p = self.prog
        if d in (".text", ".data", ".rodata", ".bss"):
            self.section = "text" if d == ".text" else "data"
        elif d == ".section":
            self.section = "text" if ops and ops[0].strip().startswith(".text") else "data"
        elif d in (".globl", ".global", ".size", ".file", ".ident", ".option", ".local"):
            pass
        elif d == ".type":
            if len(ops) == 2 and ops[1].strip() in ("@function", "%function"):
                if ops[0].strip() not in p.functions:
                    p.functions.append(ops[0].strip())
        elif d == ".func":
            name = ops[0].strip()
            if name not in p.functions:
                p.functions.append(name)
        elif d == ".nocfi":
            name = ops[0].strip() if ops else self.current_function
            if not name:
                raise self.error(AsmErrorKind.SYNTAX, ".nocfi outside a function needs a name")
            p.nocfi.add(name)
        elif d in (".equ", ".set"):
            p.constants[ops[0].strip()] = self.const(ops[1])
        elif d in (".word", ".4byte", ".long"):
            self.emit(DataItem("word", [self.value(o) for o in ops], self.line))
        elif d in (".half", ".2byte", ".short"):
            self.emit(DataItem("half", [self.const(o) for o in ops], self.line))
        elif d == ".byte":
            self.emit(DataItem("byte", [self.const(o) for o in ops], self.line))
        elif d in (".space", ".zero", ".skip"):
            self.emit(DataItem("space", [self.const(ops[0])], self.line))
        elif d in (".align", ".p2align"):
            self.emit(DataItem("align", [1 << self.const(ops[0])], self.line))
        elif d == ".balign":
            self.emit(DataItem("align", [self.const(ops[0])], self.line))
        else:
            raise self.error(AsmErrorKind.UNKNOWN_MNEMONIC, f"unknown directive {d}")

    def ins(self, op: Op, rd=0, rs1=0, rs2=0, imm: int | Ref = 0) -> AsmInstr:
        item = AsmInstr(op, rd, rs1, rs2, imm, self.line)
        self.emit(item)
        return item

    def li(self, rd: int, value: int) -> None:
        value = sext(value, 32) if value >= 0 else value
        if not -(1 << 31) <= value < (1 << 32):
            raise self.error(AsmErrorKind.RANGE_IMMEDIATE, f"li value {value} does not fit 32 bits")
        if -2048 <= value < 2048:
            self.ins(Op.ADDI, rd, 0, 0, value)
            return
        hi = ((value + 0x800) >> 12) & 0xFFFFF
        lo = value - sext(hi << 12, 32)
        self.ins(Op.LUI, rd, imm=sext(hi << 12, 32))
        if lo:
            self.ins(Op.ADDI, rd, rd, 0, lo)

    def la(self, rd: int, target: str) -> None:
        ref = self.value(target, "pcrel_hi")
        if not isinstance(ref, Ref):
            raise self.error(AsmErrorKind.SYNTAX, "la needs a symbol")
        hi = self.ins(Op.AUIPC, rd, imm=Ref("pcrel_hi", ref.symbol, ref.addend))
        self.ins(Op.ADDI, rd, rd, 0, Ref("pcrel_lo", ref.symbol, ref.addend, hi))

    def target(self, text: str) -> Ref | int:
        v = self.value(text, "pcrel")
        return v

    def need(self, ops: list[str], n: int, mnem: str) -> None:
        if len(ops) != n:
            raise self.error(AsmErrorKind.SYNTAX, f"{mnem} takes {n} operands, got {len(ops)}")

    def instruction(self, mnem: str, ops: list[str]) -> None:
        r = self.reg
        pseudo = _PSEUDO.get(mnem)
        if pseudo is not None:
            pseudo(self, ops, mnem)
            return
        try:
            op = Op(mnem)
        except ValueError:
            raise self.error(AsmErrorKind.UNKNOWN_MNEMONIC, f"unknown mnemonic {mnem!r}") from None
        fmt = ENCODING[op][0]
        if fmt is Fmt.SYS:
            self.need(ops, 0, mnem)
            self.ins(op)
        elif fmt is Fmt.R:
            self.need(ops, 3, mnem)
            self.ins(op, r(ops[0]), r(ops[1]), r(ops[2]))
        elif op in LOADS:
            self.need(ops, 2, mnem)
            off, base = self.mem(ops[1])
            self.ins(op, r(ops[0]), base, 0, off)
        elif op in STORES:
            self.need(ops, 2, mnem)
            off, base = self.mem(ops[1])
            self.ins(op, 0, base, r(ops[0]), off)
        elif op is Op.JALR:
            if len(ops) == 1:
                self.ins(op, 1, r(ops[0]), 0, 0)
            elif len(ops) == 2:
                off, base = self.mem(ops[1])
                self.ins(op, r(ops[0]), base, 0, off)
            else:
                self.need(ops, 3, mnem)
                self.ins(op, r(ops[0]), r(ops[1]), 0, self.value(ops[2]))
        elif fmt in (Fmt.I, Fmt.SHIFT):
            self.need(ops, 3, mnem)
            self.ins(op, r(ops[0]), r(ops[1]), 0, self.value(ops[2]))
        elif fmt is Fmt.B:
            self.need(ops, 3, mnem)
            self.ins(op, 0, r(ops[0]), r(ops[1]), self.target(ops[2]))
        elif fmt is Fmt.U:
            self.need(ops, 2, mnem)
            rd = r(ops[0])
            if op is Op.LUI and rd == 0 and not self.allow_reserved:
                raise self.error(AsmErrorKind.RESERVED_REGISTER, "lui with rd=zero is reserved for CFI labels")
            v = self.value(ops[1], "hi" if op is Op.LUI else "pcrel_hi")
            if isinstance(v, int):
                if not 0 <= v < (1 << 20):
                    raise self.error(AsmErrorKind.RANGE_IMMEDIATE, f"upper immediate {v:#x} exceeds 20 bits")
                v = sext(v << 12, 32)
            item = self.ins(op, rd, imm=v)
            if isinstance(v, Ref) and v.kind == "pcrel_hi":
                self._pending_pcrel[v.symbol] = item
        elif fmt is Fmt.J:
            if len(ops) == 1:
                self.ins(op, 1, imm=self.target(ops[0]))
            else:
                self.need(ops, 2, mnem)
                self.ins(op, r(ops[0]), imm=self.target(ops[1]))
        elif fmt is Fmt.CSR:
            self.need(ops, 3, mnem)
            self.ins(op, r(ops[0]), r(ops[2]), 0, self.csr(ops[1]))
        elif fmt is Fmt.CSRI:
            self.need(ops, 3, mnem)
            self.ins(op, r(ops[0]), self.const(ops[2]), 0, self.csr(ops[1]))
        elif fmt is Fmt.FENCE:
            if not ops:
                self.ins(op, imm=0x0FF if op is Op.FENCE else 0)
            elif len(ops) == 1:
                self.ins(op, imm=self.const(ops[0]))
            else:
                self.need(ops, 3, mnem)
                self.ins(op, r(ops[1]), r(ops[2]), 0, self.const(ops[0]))


def _split_operands(text: str) -> list[str]:
    out, depth, cur = [], 0, []
    for ch in text:
        if ch == "," and depth == 0:
            out.append("".join(cur).strip())
            cur = []
            continue
        depth += ch == "("
        depth -= ch == ")"
        cur.append(ch)
    if "".join(cur).strip():
        out.append("".join(cur).strip())
    return out


def _branch_zero(op: Op, swap: bool = False):
    def handler(p: _Parser, ops, mnem):
        p.need(ops, 2, mnem)
        rs = p.reg(ops[0])
        rs1, rs2 = (0, rs) if swap else (rs, 0)
        p.ins(op, 0, rs1, rs2, p.target(ops[1]))
    return handler


def _branch_swap(op: Op):
    def handler(p: _Parser, ops, mnem):
        p.need(ops, 3, mnem)
        p.ins(op, 0, p.reg(ops[1]), p.reg(ops[0]), p.target(ops[2]))
    return handler


def _unary(op: Op, imm=None, zero_first=False):
    def handler(p: _Parser, ops, mnem):
        p.need(ops, 2, mnem)
        rd, rs = p.reg(ops[0]), p.reg(ops[1])
        if imm is not None:
            p.ins(op, rd, rs, 0, imm)
        elif zero_first:
            p.ins(op, rd, 0, rs)
        else:
            p.ins(op, rd, rs, 0)
    return handler


def _csr_pseudo(op: Op, read: bool, immediate: bool = False):
    def handler(p: _Parser, ops, mnem):
        if read:
            p.need(ops, 2, mnem)
            p.ins(op, p.reg(ops[0]), 0, 0, p.csr(ops[1]))
        else:
            p.need(ops, 2, mnem)
            src = p.const(ops[1]) if immediate else p.reg(ops[1])
            p.ins(op, 0, src, 0, p.csr(ops[0]))
    return handler


_PSEUDO = {
    "nop": lambda p, ops, m: (p.need(ops, 0, m), p.ins(Op.ADDI)),
    "li": lambda p, ops, m: (p.need(ops, 2, m), p.li(p.reg(ops[0]), p.const(ops[1]))),
    "la": lambda p, ops, m: (p.need(ops, 2, m), p.la(p.reg(ops[0]), ops[1])),
    "mv": _unary(Op.ADDI, imm=0),
    "not": _unary(Op.XORI, imm=-1),
    "neg": _unary(Op.SUB, zero_first=True),
    "seqz": _unary(Op.SLTIU, imm=1),
    "snez": _unary(Op.SLTU, zero_first=True),
    "j": lambda p, ops, m: (p.need(ops, 1, m), p.ins(Op.JAL, 0, imm=p.target(ops[0]))),
    "tail": lambda p, ops, m: (p.need(ops, 1, m), p.ins(Op.JAL, 0, imm=p.target(ops[0]))),
    "call": lambda p, ops, m: (p.need(ops, 1, m), p.ins(Op.JAL, 1, imm=p.target(ops[0]))),
    "jr": lambda p, ops, m: (p.need(ops, 1, m), p.ins(Op.JALR, 0, p.reg(ops[0]), 0, 0)),
    "ret": lambda p, ops, m: (p.need(ops, 0, m), p.ins(Op.JALR, 0, 1, 0, 0)),
    "beqz": _branch_zero(Op.BEQ),
    "bnez": _branch_zero(Op.BNE),
    "bltz": _branch_zero(Op.BLT),
    "bgez": _branch_zero(Op.BGE),
    "blez": _branch_zero(Op.BGE, swap=True),
    "bgtz": _branch_zero(Op.BLT, swap=True),
    "bgt": _branch_swap(Op.BLT),
    "ble": _branch_swap(Op.BGE),
    "bgtu": _branch_swap(Op.BLTU),
    "bleu": _branch_swap(Op.BGEU),
    "csrr": _csr_pseudo(Op.CSRRS, read=True),
    "csrw": _csr_pseudo(Op.CSRRW, read=False),
    "csrs": _csr_pseudo(Op.CSRRS, read=False),
    "csrc": _csr_pseudo(Op.CSRRC, read=False),
    "csrwi": _csr_pseudo(Op.CSRRWI, read=False, immediate=True),
}


def parse(source: str, *, text_base: int = DEFAULT_TEXT_BASE, data_base: int = DEFAULT_DATA_BASE,
          allow_reserved: bool = False) -> AsmProgram:
    prog = _Parser(allow_reserved).parse(source)
    prog.text_base = text_base
    prog.data_base = data_base
    return prog


# ---------------------------------------------------------------- layout

def _item_size(item, addr: int) -> int:
    if isinstance(item, AsmInstr):
        return 4
    if isinstance(item, DataItem):
        if item.kind == "word":
            return 4 * len(item.values)
        if item.kind == "half":
            return 2 * len(item.values)
        if item.kind == "byte":
            return len(item.values)
        if item.kind == "space":
            return item.values[0]
        if item.kind == "align":
            a = item.values[0]
            return (-addr) % a
    return 0


def layout(prog: AsmProgram) -> tuple[dict[str, int], dict[int, int]]:
    """Symbol addresses and per-item addresses (keyed by ``id(item)``)."""
    symbols: dict[str, int] = {}
    where: dict[int, int] = {}
    for items, base in ((prog.text, prog.text_base), (prog.data, prog.data_base)):
        addr = base
        for item in items:
            if isinstance(item, LabelDef):
                if item.name in symbols:
                    raise AsmError(AsmErrorKind.DUPLICATE_SYMBOL, f"symbol {item.name!r} defined twice", item.line)
                symbols[item.name] = addr
            else:
                if isinstance(item, AsmInstr) and addr % 4:
                    raise AsmError(AsmErrorKind.SYNTAX, "misaligned instruction; add .align 2", item.line)
                where[id(item)] = addr
                addr += _item_size(item, addr)
    return symbols, where


def _resolve(ref: Ref, symbols: dict[str, int], line: int) -> int:
    if ref.symbol not in symbols:
        raise AsmError(AsmErrorKind.UNDEFINED_SYMBOL, f"undefined symbol {ref.symbol!r}", line)
    return symbols[ref.symbol] + ref.addend


def resolve_instr(item: AsmInstr, pc: int, symbols: dict[str, int], where: dict[int, int]) -> Instruction:
    imm = item.imm
    if isinstance(imm, Ref):
        target = _resolve(imm, symbols, item.line)
        if imm.kind == "pcrel":
            imm = target - pc
        elif imm.kind == "pcrel_hi":
            off = target - pc
            imm = sext((((off + 0x800) >> 12) & 0xFFFFF) << 12, 32)
        elif imm.kind == "pcrel_lo":
            anchor_pc = where[id(imm.anchor)]
            off = target - anchor_pc
            imm = off - sext((((off + 0x800) >> 12) & 0xFFFFF) << 12, 32)
        elif imm.kind == "hi":
            imm = sext((((target + 0x800) >> 12) & 0xFFFFF) << 12, 32)
        elif imm.kind == "lo":
            imm = sext(target, 32) - sext((((target + 0x800) >> 12) & 0xFFFFF) << 12, 32)
        else:
            imm = target
    elif ENCODING[item.op][0] in (Fmt.B, Fmt.J) and False:
        pass
    try:
        return Instruction.make(item.op, item.rd, item.rs1, item.rs2, imm)
    except ValueError as err:
        raise AsmError(AsmErrorKind.RANGE_IMMEDIATE, str(err), item.line) from None


def _emit_section(items, base, symbols, where, relocs) -> bytes:
    out = bytearray()
    for item in items:
        addr = base + len(out)
        if isinstance(item, AsmInstr):
            out += resolve_instr(item, addr, symbols, where).raw.to_bytes(4, "little")
        elif isinstance(item, DataItem):
            if item.kind == "word":
                for k, v in enumerate(item.values):
                    if isinstance(v, Ref):
                        relocs.append([addr + 4 * k, v.symbol, v.addend])
                        v = _resolve(v, symbols, item.line)
                    out += (v & 0xFFFFFFFF).to_bytes(4, "little")
            elif item.kind == "half":
                out += b"".join((v & 0xFFFF).to_bytes(2, "little") for v in item.values)
            elif item.kind == "byte":
                out += bytes(v & 0xFF for v in item.values)
            else:
                out += bytes(_item_size(item, addr))
    return bytes(out)


def assemble_program(prog: AsmProgram, *, text_limit: int | None = None, data_limit: int | None = None,
                     entry: str = "_start") -> Image:
    symbols, where = layout(prog)
    relocs: list = []
    text = _emit_section(prog.text, prog.text_base, symbols, where, relocs)
    data = _emit_section(prog.data, prog.data_base, symbols, where, relocs)
    if text_limit is not None and len(text) > text_limit:
        raise AsmError(AsmErrorKind.SPACE_EXHAUSTED, f"text is {len(text)} bytes, limit {text_limit}")
    if data_limit is not None and len(data) > data_limit:
        raise AsmError(AsmErrorKind.SPACE_EXHAUSTED, f"data is {len(data)} bytes, limit {data_limit}")
    segments = [Segment(prog.text_base, text, PERM_R | PERM_X)]
    if data:
        segments.append(Segment(prog.data_base, data, PERM_R | PERM_W))
    bodies = prog.function_bodies()
    functions = {}
    for name, body in bodies.items():
        start = symbols[name]
        end = start
        for item in body:
            if id(item) in where:
                end = where[id(item)] + _item_size(item, where[id(item)])
        functions[name] = [start, end]
    meta = {
        "symbols": dict(sorted(symbols.items())),
        "functions": functions,
        "nocfi": sorted(prog.nocfi),
        "data_relocs": relocs,
        "text_base": prog.text_base,
        "data_base": prog.data_base,
    }
    return Image(symbols.get(entry, prog.text_base), segments, meta)


def assemble(source: str, *, text_base: int = DEFAULT_TEXT_BASE, data_base: int = DEFAULT_DATA_BASE,
             allow_reserved: bool = False, text_limit: int | None = None) -> Image:
    """Assemble source text into an image (text ``r-x``, data ``rw-``)."""
    prog = parse(source, text_base=text_base, data_base=data_base, allow_reserved=allow_reserved)
    return assemble_program(prog, text_limit=text_limit)


# ---------------------------------------------------------------- disassembly

def disassemble(image: Image) -> str:
    """Re-create assembler source from an image and its sidecar metadata.

    Branch and jump targets become labels, ``auipc``/``addi`` pairs become
    ``la``, and data words listed in ``data_relocs`` become symbol references,
    so the output re-assembles to the same bytes and can be rewritten.
    """
    meta = image.metadata
    symbols: dict[str, int] = dict(meta.get("symbols", {}))
    by_addr: dict[int, list[str]] = {}
    for name, addr in symbols.items():
        by_addr.setdefault(addr, []).append(name)
    functions = set(meta.get("functions", {}))
    nocfi = set(meta.get("nocfi", []))
    relocs = {a: (s, add) for a, s, add in meta.get("data_relocs", [])}

    text_segs = [s for s in image.segments if s.executable]
    data_segs = [s for s in image.segments if not s.executable]
    if len(text_segs) != 1 or len(data_segs) > 1:
        raise ValueError("disassembly supports one text and at most one data segment")
    text, data = text_segs[0], (data_segs[0] if data_segs else None)

    def in_image(addr: int) -> bool:
        return any(s.load_addr <= addr < s.end or addr == s.end for s in image.segments)

    def name_for(addr: int) -> str:
        if addr in by_addr:
            return by_addr[addr][0]
        name = f".L_{addr:08x}"
        by_addr[addr] = [name]
        return name

    lines: list[tuple[int, str]] = []
    words = list(text.words())
    skip = False
    for k, (pc, word) in enumerate(words):
        if skip:
            skip = False
            continue
        try:
            ins = decode(word)
        except IllegalInstruction:
            lines.append((pc, f".word {word:#010x}"))
            continue
        op = ins.kind
        fmt = ENCODING[op][0]
        if op is Op.AUIPC and k + 1 < len(words):
            nxt_pc, nxt_word = words[k + 1]
            try:
                nxt = decode(nxt_word)
            except IllegalInstruction:
                nxt = None
            if nxt is not None and nxt.kind is Op.ADDI and nxt.rd == ins.rd and nxt.rs1 == ins.rd and ins.rd:
                target = (pc + ins.imm + nxt.imm) & 0xFFFFFFFF
                if in_image(target) and not by_addr.get(nxt_pc):
                    lines.append((pc, f"la {REG_NAMES[ins.rd]}, {name_for(target)}"))
                    skip = True
                    continue
        if fmt in (Fmt.B, Fmt.J):
            target = (pc + ins.imm) & 0xFFFFFFFF
            label = name_for(target)
            if fmt is Fmt.B:
                lines.append((pc, f"{op} {REG_NAMES[ins.rs1]}, {REG_NAMES[ins.rs2]}, {label}"))
            else:
                lines.append((pc, f"jal {REG_NAMES[ins.rd]}, {label}"))
        elif op is Op.LUI and ins.rd == 0 and is_label_word(word):
            lines.append((pc, f"lui zero, {(ins.imm >> 12) & 0xFFFFF:#x}"))
        else:
            lines.append((pc, str(ins)))

    out = [".text"]
    for name in sorted(functions, key=lambda n: symbols.get(n, 0)):
        out.append(f".type {name}, @function")
    for name in sorted(nocfi):
        out.append(f".nocfi {name}")
    for pc, text_line in lines:
        for name in by_addr.get(pc, []):
            out.append(f"{name}:")
        out.append(f"    {text_line}")
    for name in by_addr.get(text.end, []):
        out.append(f"{name}:")
    if data is not None:
        out.append(".data")
        off = 0
        payload = data.data
        while off < len(payload):
            addr = data.load_addr + off
            for name in by_addr.get(addr, []):
                out.append(f"{name}:")
            if off + 4 <= len(payload):
                if addr in relocs:
                    sym, add = relocs[addr]
                    out.append(f"    .word {sym}{add:+d}" if add else f"    .word {sym}")
                else:
                    out.append(f"    .word {int.from_bytes(payload[off:off + 4], 'little'):#010x}")
                off += 4
            else:
                out.append(f"    .byte {payload[off]:#04x}")
                off += 1
        for name in by_addr.get(data.end, []):
            out.append(f"{name}:")
    # labels the metadata knows about that fall outside every segment cannot be re-created
    return "\n".join(out) + "\n"


def program_from_image(image: Image, allow_reserved: bool = True) -> AsmProgram:
    text_base = next(s.load_addr for s in image.segments if s.executable)
    data = [s for s in image.segments if not s.executable]
    data_base = data[0].load_addr if data else image.metadata.get("data_base", DEFAULT_DATA_BASE)
    return parse(disassemble(image), text_base=text_base, data_base=data_base, allow_reserved=allow_reserved)
