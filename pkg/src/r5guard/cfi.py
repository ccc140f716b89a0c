"""Offline CFI instrumentation: call-graph policies, labels, forward checks, shadow-stack calls.

The rewriter works on :class:`~r5guard.asm.AsmProgram` (source text and images
with metadata are converted first) and re-assembles, so every relative target
is re-resolved after code is inserted.

Instrumented shapes::

    f:      lui   zero, ID          # label word, architecturally inert
            ...
            addi  a7, zero, 1       # was: sw ra, K(sp)
            ecall
            ...
            lw    t6, 0(rs1)        # was: jalr rd, 0(rs1)
            lui   t5, ID1 ; addi t5, t5, 0x37 ; beq t6, t5, ok
            ...                     # one compare per allowed target
            addi  t5, rs1, 0
            addi  a7, zero, 4
            ecall                   # CfiFail
    ok:     jalr  rd, 4(rs1)
            ...
            addi  a7, zero, 2       # was: lw ra, K(sp)
            ecall
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass, field
from typing import Callable, Mapping

from .asm import AsmInstr, AsmProgram, DataItem, LabelDef, Ref, assemble_program, layout, parse, program_from_image
from .image import Image
from .isa import ENCODING, LOADS, Fmt, Op, label_word, sext

SS_PUSH = 1
SS_POP = 2
YIELD = 3
CFI_FAIL = 4

REG_RA, REG_SP, REG_A7 = 1, 2, 17
REG_CHECK, REG_LOADED = 30, 31
ARG_REGS = tuple(range(10, 18))
RET_REGS = (10, 11)
LABEL_SPACE = 1 << 20


class CfiError(Exception):
    pass


class UnresolvedIndirectSite(CfiError):
    def __init__(self, sites: list[str]):
        super().__init__(f"no allowed-target set for indirect site(s): {', '.join(sites)}; supply hints")
        self.sites = sites


class PatternNotFound(CfiError):
    pass


@dataclass(frozen=True)
class IndirectSite:
    key: str
    function: str
    rd: int
    rs1: int
    imm: int


@dataclass(frozen=True)
class CallSitePolicy:
    site: str
    allowed: frozenset[str]

    def __post_init__(self):
        if not self.allowed:
            raise ValueError(f"policy for {self.site} has no allowed targets")


@dataclass
class LabelTable:
    assignments: dict[str, int] = field(default_factory=dict)

    def __post_init__(self):
        ids = list(self.assignments.values())
        if len(set(ids)) != len(ids):
            raise CfiError("label ids are not unique")
        for name, lid in self.assignments.items():
            if not 0 <= lid < LABEL_SPACE:
                raise CfiError(f"label id {lid:#x} for {name} exceeds 20 bits")

    @classmethod
    def assign(cls, names, reserved: set[int] | None = None) -> LabelTable:
        """Ids from crc32 of the function name, probing upward on collision."""
        taken = set(reserved or ())
        out = {}
        for name in sorted(names):
            lid = zlib.crc32(name.encode()) & (LABEL_SPACE - 1)
            while lid in taken:
                lid = (lid + 1) % LABEL_SPACE
            taken.add(lid)
            out[name] = lid
        return cls(out)

    def word(self, name: str) -> int:
        return label_word(self.assignments[name])


@dataclass
class RewriteResult:
    image: Image
    program: AsmProgram
    labels: LabelTable
    policies: list[CallSitePolicy]
    uninstrumented: dict[str, str]


def _as_program(src) -> AsmProgram:
    if isinstance(src, AsmProgram):
        return src.copy()
    if isinstance(src, Image):
        if src.metadata.get("labels"):
            raise CfiError("image is already instrumented")
        return program_from_image(src, allow_reserved=False)
    if isinstance(src, str):
        return parse(src)
    raise TypeError(f"cannot rewrite {type(src).__name__}")


def is_return(item: AsmInstr) -> bool:
    return item.op is Op.JALR and item.rd == 0 and item.rs1 == REG_RA and item.imm == 0


def find_indirect_sites(prog: AsmProgram) -> list[tuple[IndirectSite, AsmInstr]]:
    out = []
    for fname, body in prog.function_bodies().items():
        k = 0
        for item in body:
            if isinstance(item, AsmInstr) and item.op is Op.JALR and not is_return(item):
                imm = item.imm if isinstance(item.imm, int) else 0
                out.append((IndirectSite(f"{fname}#{k}", fname, item.rd, item.rs1, imm), item))
                k += 1
    return out


def direct_calls(prog: AsmProgram) -> dict[str, set[str]]:
    funcs = set(prog.functions)
    calls: dict[str, set[str]] = {f: set() for f in prog.functions}
    for fname, body in prog.function_bodies().items():
        for item in body:
            if isinstance(item, AsmInstr) and item.op is Op.JAL and isinstance(item.imm, Ref):
                if item.imm.symbol in funcs and (item.rd != 0 or item.imm.symbol != fname):
                    calls[fname].add(item.imm.symbol)
    return calls


# ---------------------------------------------------------------- value analysis

TOP = None  # unknown value


def _join(a, b):
    if a is TOP or b is TOP:
        return TOP
    return a | b


class _PointsTo:
    """Flow-insensitive tracking of which function addresses each register may hold.

    Values are sets of ``("fn", name)`` / ``("obj", label)`` tokens or TOP. Plain
    arithmetic yields no tokens; loads from unknown memory yield TOP.
    """

    def __init__(self, prog: AsmProgram):
        self.prog = prog
        self.funcs = set(prog.functions)
        self.regs: dict[tuple[str, int], frozenset | None] = {}
        self.slots: dict[tuple[str, int], frozenset | None] = {}
        self.objs: dict[str, frozenset | None] = {}
        self.changed = False
        label = None
        for item in prog.data:
            if isinstance(item, LabelDef):
                label = item.name
            elif isinstance(item, DataItem) and item.kind == "word" and label is not None:
                toks = frozenset(self.token(v.symbol) for v in item.values if isinstance(v, Ref))
                self.objs[label] = self.objs.get(label, frozenset()) | toks
        self.bodies = prog.function_bodies()

    def token(self, symbol: str):
        return ("fn", symbol) if symbol in self.funcs else ("obj", symbol)

    def get(self, f: str, r: int):
        if r == 0:
            return frozenset()
        return self.regs.get((f, r), frozenset())

    def _put(self, table, key, value):
        old = table.get(key, frozenset())
        new = _join(old, value)
        if new != old:
            table[key] = new
            self.changed = True

    def put(self, f: str, r: int, value):
        if r:
            self._put(self.regs, (f, r), value)

    def fn_targets(self, value) -> set[str] | None:
        if value is TOP:
            return None
        return {name for kind, name in value if kind == "fn"}

    def call(self, caller: str, callee: str):
        if callee not in self.bodies:
            return
        for a in ARG_REGS:
            self.put(callee, a, self.get(caller, a))
        for a in RET_REGS:
            self.put(caller, a, self.get(callee, a))

    def load(self, f: str, item: AsmInstr):
        if item.rs1 == REG_SP and isinstance(item.imm, int):
            return self.slots.get((f, item.imm), frozenset())
        base = self.get(f, item.rs1)
        if base is TOP:
            return TOP
        objs = [name for kind, name in base if kind == "obj"]
        if not objs:
            return TOP
        out = frozenset()
        for name in objs:
            out = _join(out, self.objs.get(name, frozenset()))
        return out

    def store(self, f: str, item: AsmInstr):
        value = self.get(f, item.rs2)
        if item.rs1 == REG_SP and isinstance(item.imm, int):
            self._put(self.slots, (f, item.imm), value)
            return
        base = self.get(f, item.rs1)
        if base is TOP:
            return
        for kind, name in base:
            if kind == "obj":
                self._put(self.objs, name, value)

    def transfer(self, f: str, item: AsmInstr):
        op = item.op
        fmt = ENCODING[op][0]
        if isinstance(item.imm, Ref) and fmt not in (Fmt.B, Fmt.J, Fmt.S) and op not in LOADS:
            self.put(f, item.rd, frozenset({self.token(item.imm.symbol)}))
            return
        if op is Op.ADDI:
            self.put(f, item.rd, self.get(f, item.rs1))
        elif op in (Op.ADD, Op.SUB):
            self.put(f, item.rd, _join(self.get(f, item.rs1), self.get(f, item.rs2)))
        elif op is Op.LW:
            self.put(f, item.rd, self.load(f, item))
        elif fmt is Fmt.S:
            self.store(f, item)
        elif op is Op.JAL:
            if isinstance(item.imm, Ref) and item.imm.symbol in self.funcs and item.imm.symbol != f:
                self.call(f, item.imm.symbol)
        elif op is Op.JALR:
            targets = self.fn_targets(self.get(f, item.rs1))
            for t in sorted(targets or ()):
                self.call(f, t)

    def solve(self):
        for _ in range(1000):
            self.changed = False
            for f, body in self.bodies.items():
                for item in body:
                    if isinstance(item, AsmInstr):
                        self.transfer(f, item)
            if not self.changed:
                return
        raise CfiError("call-graph analysis did not converge")


def build_call_graph(prog, hints: Mapping[str, list[str]] | None = None) -> list[CallSitePolicy]:
    """One policy per indirect jump site; sites are keyed ``function#ordinal``.

    Static analysis finds function addresses materialized with ``la`` or read
    from data tables; ``hints`` adds targets and covers sites the analysis
    cannot resolve.
    """
    prog = _as_program(prog)
    hints = dict(hints or {})
    funcs = set(prog.functions)
    for key, targets in hints.items():
        bad = [t for t in targets if t not in funcs]
        if bad:
            raise CfiError(f"hint for {key} names unknown function(s) {bad}")
    pts = _PointsTo(prog)
    pts.solve()
    policies, unresolved = [], []
    sites = find_indirect_sites(prog)
    known = {s.key for s, _ in sites}
    stray = sorted(set(hints) - known)
    if stray:
        raise CfiError(f"hints name unknown site(s) {stray}")
    for site, _ in sites:
        found = pts.fn_targets(pts.get(site.function, site.rs1))
        allowed = set(hints.get(site.key, ()))
        if found is None and not allowed:
            unresolved.append(site.key)
            continue
        allowed |= found or set()
        if not allowed:
            unresolved.append(site.key)
            continue
        policies.append(CallSitePolicy(site.key, frozenset(allowed)))
    if unresolved:
        raise UnresolvedIndirectSite(unresolved)
    return policies


def address_taken(prog: AsmProgram) -> set[str]:
    funcs = set(prog.functions)
    out = set()
    for item in prog.text:
        if isinstance(item, AsmInstr) and isinstance(item.imm, Ref) and ENCODING[item.op][0] not in (Fmt.B, Fmt.J):
            if item.imm.symbol in funcs:
                out.add(item.imm.symbol)
    for item in prog.data:
        if isinstance(item, DataItem) and item.kind == "word":
            out |= {v.symbol for v in item.values if isinstance(v, Ref) and v.symbol in funcs}
    return out


# ---------------------------------------------------------------- rewriting passes

def _replace(items: list, mapping: dict[int, list]) -> list:
    out = []
    for item in items:
        out.extend(mapping.get(id(item), [item]))
    return out


def inject_labels(prog, table: LabelTable) -> AsmProgram:
    """Prepend each labeled function with its label word; direct jumps land past it."""
    prog = _as_program(prog)
    missing = [n for n in table.assignments if n not in prog.functions]
    if missing:
        raise CfiError(f"label table names unknown function(s) {missing}")
    out = []
    for item in prog.text:
        if isinstance(item, AsmInstr) and ENCODING[item.op][0] in (Fmt.B, Fmt.J) and isinstance(item.imm, Ref) \
                and item.imm.symbol in table.assignments and item.imm.addend == 0:
            ref = Ref(item.imm.kind, item.imm.symbol, 4)
            item = AsmInstr(item.op, item.rd, item.rs1, item.rs2, ref, item.line, item.tag)
        out.append(item)
        if isinstance(item, LabelDef) and item.name in table.assignments:
            lid = table.assignments[item.name]
            out.append(AsmInstr(Op.LUI, 0, imm=sext(lid << 12, 32), line=item.line, tag="label"))
    prog.text = out
    return prog


def check_sequence(site: IndirectSite, allowed_words: list[int], ok_label: str, line: int = 0) -> list:
    seq = [AsmInstr(Op.LW, REG_LOADED, site.rs1, 0, 0, line, "check")]
    for word in allowed_words:
        hi = word & 0xFFFFF000
        lo = word & 0xFFF  # 0x37: never needs carry into hi
        seq += [AsmInstr(Op.LUI, REG_CHECK, imm=sext(hi, 32), line=line, tag="check"),
                AsmInstr(Op.ADDI, REG_CHECK, REG_CHECK, 0, lo, line, "check"),
                AsmInstr(Op.BEQ, 0, REG_LOADED, REG_CHECK, Ref("pcrel", ok_label), line, "check")]
    seq += [AsmInstr(Op.ADDI, REG_CHECK, site.rs1, 0, 0, line, "check"),
            AsmInstr(Op.ADDI, REG_A7, 0, 0, CFI_FAIL, line, "check"),
            AsmInstr(Op.ECALL, line=line, tag="check"),
            LabelDef(ok_label, line),
            AsmInstr(Op.JALR, site.rd, site.rs1, 0, 4, line, "check")]
    return seq


def instrument_indirect_sites(prog, policies: list[CallSitePolicy], table: LabelTable) -> AsmProgram:
    """Guard each indirect jump with a compare against its allowed labels."""
    prog = _as_program(prog)
    by_key = {p.site: p for p in policies}
    mapping = {}
    for n, (site, item) in enumerate(find_indirect_sites(prog)):
        if site.function in prog.nocfi:
            continue
        if site.key not in by_key:
            raise UnresolvedIndirectSite([site.key])
        if site.imm != 0:
            raise CfiError(f"{site.key}: only zero-offset indirect jumps can be checked")
        words = [table.word(t) for t in sorted(by_key[site.key].allowed)]
        mapping[id(item)] = check_sequence(site, words, f".Lcfi_ok_{n}", item.line)
    prog.text = _replace(prog.text, mapping)
    return prog


def _ecall_pair(code: int, line: int, tag: str) -> list:
    return [AsmInstr(Op.ADDI, REG_A7, 0, 0, code, line, tag), AsmInstr(Op.ECALL, line=line, tag=tag)]


def instrument_returns(prog) -> tuple[AsmProgram, dict[str, str]]:
    """Replace the prologue ``sw ra`` / epilogue ``lw ra`` with shadow-stack ecalls.

    Returns the program and ``{function: reason}`` for functions whose frame
    shape was not recognized (left unprotected).
    """
    prog = _as_program(prog)
    calls = direct_calls(prog)
    mapping, skipped = {}, {}
    for fname, body in prog.function_bodies().items():
        instrs = [i for i in body if isinstance(i, AsmInstr)]
        saves = [i for i in instrs if i.op is Op.SW and i.rs2 == REG_RA]
        restores = [i for i in instrs if i.op is Op.LW and i.rd == REG_RA]
        makes_calls = bool(calls.get(fname)) or any(
            i.op is Op.JALR and i.rd != 0 for i in instrs) or any(
            i.op is Op.JAL and i.rd != 0 for i in instrs)
        returns_ = any(is_return(i) for i in instrs)
        if not saves and not restores:
            if makes_calls and returns_:
                skipped[fname] = "PatternNotFound: calls without spilling ra to the stack"
            continue
        offsets = {i.imm for i in saves + restores}
        if (len(saves) != 1 or not restores or len(offsets) != 1 or not isinstance(next(iter(offsets)), int)
                or any(i.rs1 != REG_SP for i in saves + restores)):
            skipped[fname] = "PatternNotFound: ra spill is not a single sw/lw pair on sp"
            continue
        mapping[id(saves[0])] = _ecall_pair(SS_PUSH, saves[0].line, "ss_push")
        for r in restores:
            mapping[id(r)] = _ecall_pair(SS_POP, r.line, "ss_pop")
    prog.text = _replace(prog.text, mapping)
    return prog, skipped


def rewrite(src, hints: Mapping[str, list[str]] | None = None, *, label_table: LabelTable | None = None,
            forward: bool = True, returns: bool = True, text_limit: int | None = None) -> RewriteResult:
    """Full pipeline: policies, labels, forward checks and shadow-stack calls, then assemble."""
    prog = _as_program(src)
    policies = build_call_graph(prog, hints)
    labeled = address_taken(prog)
    for p in policies:
        labeled |= p.allowed
    table = label_table or LabelTable.assign(labeled)
    missing = labeled - set(table.assignments)
    if missing:
        raise CfiError(f"label table lacks address-taken function(s) {sorted(missing)}")
    sites = {s.key: item for s, item in find_indirect_sites(prog)}
    work = prog
    skipped: dict[str, str] = {}
    if forward:
        work = instrument_indirect_sites(work, policies, table)
    if returns:
        work, skipped = instrument_returns(work)
    work = inject_labels(work, table)
    image = assemble_program(work, text_limit=text_limit)
    symbols, where = layout(work)
    checked = {}
    for item in work.text:
        if isinstance(item, LabelDef) and item.name.startswith(".Lcfi_ok_"):
            checked[int(item.name.rsplit("_", 1)[1])] = item.name
    keys = list(sites)
    site_meta = []
    for p in sorted(policies, key=lambda p: p.site):
        entry = {"site": p.site, "allowed": sorted(p.allowed), "checked": forward and
                 p.site.split("#")[0] not in prog.nocfi}
        n = keys.index(p.site)
        if n in checked:
            entry["proceed"] = symbols[checked[n]]
        site_meta.append(entry)
    image.metadata.update({
        "labels": dict(sorted(table.assignments.items())),
        "policies": site_meta,
        "uninstrumented": [{"function": f, "reason": r} for f, r in sorted(skipped.items())],
        "cfi": {"forward": forward, "returns": returns},
    })
    return RewriteResult(image, work, table, policies, skipped)


# ---------------------------------------------------------------- overhead

@dataclass(frozen=True)
class OverheadReport:
    size_pct: float
    retired_instr_pct: float
    cycle_pct: float
    baseline: dict
    instrumented: dict

    def to_json(self) -> dict:
        return {"size_pct": round(self.size_pct, 4), "retired_instr_pct": round(self.retired_instr_pct, 4),
                "cycle_pct": round(self.cycle_pct, 4), "baseline": self.baseline,
                "instrumented": self.instrumented}


def _pct(new: float, old: float) -> float:
    return 100.0 * (new - old) / old if old else 0.0


def measure_overhead(baseline: Image, instrumented: Image, run_fn: Callable[[Image], Mapping]) -> OverheadReport:
    """``run_fn(image)`` runs an image to completion and returns ``{"retired", "cycles"}``."""
    b = dict(run_fn(baseline))
    i = dict(run_fn(instrumented))
    b["size"], i["size"] = baseline.size, instrumented.size
    return OverheadReport(_pct(i["size"], b["size"]), _pct(i["retired"], b["retired"]),
                          _pct(i["cycles"], b["cycles"]), b, i)
