"""Desk-scale benchmark programs.

Every program starts at ``_start``, writes results to the device OUT port and
stops by storing its exit code to EXIT. Registers t5/t6 are never used (they
belong to the inserted checks) and a7 only carries ecall codes.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

DEVICE = 0x10000000

_START = """
.text
.type _start, @function
_start:
    call main
    li t0, {device:#x}
    sw a0, 4(t0)
.Lhang:
    j .Lhang
""".format(device=DEVICE)


def _words(values) -> str:
    return "\n".join(f"    .word {int(v) & 0xFFFFFFFF:#010x}" for v in values)


@dataclass
class BenchmarkProgram:
    name: str
    build: Callable[..., str]
    inputs: dict[str, dict] = field(default_factory=dict)
    variants: tuple[str, ...] = ("baseline",)
    kind: str = ""
    # parameter re-drawn per training run; everything else is the first input's
    train_param: str = "seed"

    def source(self, variant: str = "baseline", input_name: str | None = None) -> str:
        if variant not in self.variants:
            raise KeyError(f"{self.name} has no variant {variant!r}")
        params = self.inputs[input_name or next(iter(self.inputs))] if self.inputs else {}
        return self.build(variant=variant, **params)


# ---------------------------------------------------------------- tarai

def tarai_source(x: int = 7, y: int = 4, z: int = 0, variant: str = "baseline") -> str:
    return _START + f"""
.type main, @function
.type tarai, @function
main:
    addi sp, sp, -16
    sw ra, 12(sp)
    li a0, {x}
    li a1, {y}
    li a2, {z}
    call tarai
    li t0, {DEVICE:#x}
    sw a0, 0(t0)
    li a0, 0
    lw ra, 12(sp)
    addi sp, sp, 16
    ret

# tarai(x, y, z) = y if x <= y else tarai(tarai(x-1,y,z), tarai(y-1,z,x), tarai(z-1,x,y))
# frame is built on entry, before the base-case test
tarai:
    addi sp, sp, -32
    sw ra, 28(sp)
    sw s0, 24(sp)
    sw s1, 20(sp)
    sw s2, 16(sp)
    sw s3, 12(sp)
    blt a1, a0, .Ltarai_rec
    mv a0, a1
    j .Ltarai_out
.Ltarai_rec:
    mv s0, a0
    mv s1, a1
    mv s2, a2
    addi a0, s0, -1
    mv a1, s1
    mv a2, s2
    call tarai
    mv s3, a0
    addi a0, s1, -1
    mv a1, s2
    mv a2, s0
    call tarai
    sw a0, 8(sp)
    addi a0, s2, -1
    mv a1, s0
    mv a2, s1
    call tarai
    mv a2, a0
    lw a1, 8(sp)
    mv a0, s3
    call tarai
.Ltarai_out:
    lw s3, 12(sp)
    lw s2, 16(sp)
    lw s1, 20(sp)
    lw s0, 24(sp)
    lw ra, 28(sp)
    addi sp, sp, 32
    ret
"""


# ---------------------------------------------------------------- cipher

N_SUBS = 14


def cipher_source(blocks=None, key=None, n_blocks: int = 8, variant: str = "baseline", seed: int = 1) -> str:
    """Fixed-round block mixing; control flow never depends on data or key.

    ``mod1`` shortens the key (fewer rounds, same call graph); ``mod2`` does
    the same and also injects a function calling :data:`N_SUBS` sub-functions
    once per block.
    """
    rng = np.random.default_rng(seed)
    if blocks is None:
        blocks = rng.integers(0, 1 << 32, size=4 * n_blocks, dtype=np.uint64)
    if key is None:
        key = rng.integers(0, 1 << 32, size=8, dtype=np.uint64)
    n_blocks = len(blocks) // 4
    short = variant in ("mod1", "mod2")
    key_words = 6 if short else 8
    rounds = 12 if short else 14
    inject = variant == "mod2"
    evil_call = """
    mv a0, s3
    call evil
    mv s3, a0""" if inject else ""
    evil = ""
    if inject:
        calls = "\n".join(f"    call sub{k}" for k in range(N_SUBS))
        subs = "\n".join(f".type sub{k}, @function\nsub{k}:\n    xori a0, a0, {k + 1}\n    ret" for k in range(N_SUBS))
        evil = f"""
.type evil, @function
evil:
    addi sp, sp, -16
    sw ra, 12(sp)
{calls}
    lw ra, 12(sp)
    addi sp, sp, 16
    ret
{subs}
"""
    return _START + f"""
.type main, @function
.type encrypt, @function
.type mix, @function
main:
    addi sp, sp, -16
    sw ra, 12(sp)
    la a0, blocks
    li a1, {n_blocks}
    la a2, key
    call encrypt
    li a0, 0
    lw ra, 12(sp)
    addi sp, sp, 16
    ret

# encrypt(blocks, n, key): {rounds} rounds per 4-word block, one digest word out per block
encrypt:
    addi sp, sp, -48
    sw ra, 44(sp)
    sw s0, 40(sp)
    sw s1, 36(sp)
    sw s2, 32(sp)
    sw s3, 28(sp)
    sw s4, 24(sp)
    sw s5, 20(sp)
    sw s6, 16(sp)
    sw s7, 12(sp)
    sw s8, 8(sp)
    mv s0, a0
    mv s1, a1
    mv s2, a2
    li s8, {key_words}
.Lenc_block:
    lw s3, 0(s0)
    lw s4, 4(s0)
    lw s5, 8(s0)
    lw s6, 12(s0)
    li s7, 0
.Lenc_round:
    remu t0, s7, s8
    slli t0, t0, 2
    add t0, s2, t0
    lw a4, 0(t0)
    mv a0, s3
    mv a1, s4
    mv a2, s5
    mv a3, s6
    call mix
    mv s3, a0
    mv s4, a1
    mv s5, a2
    mv s6, a3
    addi s7, s7, 1
    li t0, {rounds}
    blt s7, t0, .Lenc_round{evil_call}
    sw s3, 0(s0)
    sw s4, 4(s0)
    sw s5, 8(s0)
    sw s6, 12(s0)
    xor t0, s3, s4
    xor t0, t0, s5
    xor t0, t0, s6
    li t1, {DEVICE:#x}
    sw t0, 0(t1)
    li a7, 3
    ecall
    addi s0, s0, 16
    addi s1, s1, -1
    bnez s1, .Lenc_block
    lw s8, 8(sp)
    lw s7, 12(sp)
    lw s6, 16(sp)
    lw s5, 20(sp)
    lw s4, 24(sp)
    lw s3, 28(sp)
    lw s2, 32(sp)
    lw s1, 36(sp)
    lw s0, 40(sp)
    lw ra, 44(sp)
    addi sp, sp, 48
    ret

mix:
    add a0, a0, a4
    xor a1, a1, a0
    slli t0, a1, 7
    srli t1, a1, 25
    or a1, t0, t1
    add a2, a2, a1
    xor a3, a3, a2
    slli t0, a3, 13
    srli t1, a3, 19
    or a3, t0, t1
    add a0, a0, a3
    xor a2, a2, a4
    slli t0, a2, 9
    srli t1, a2, 23
    or a2, t0, t1
    xor a0, a0, a2
    add a1, a1, a0
    xori a3, a3, 0x5a
    ret
{evil}
.data
key:
{_words(key[:key_words])}
blocks:
{_words(blocks)}
"""


# ---------------------------------------------------------------- decoder

def decoder_tokens(seed: int, n_tokens: int = 48, run_bias: float = 0.25, payload_seed: int | None = None) -> list[int]:
    """Token stream: low 2 bits pick the handler (literal, run, delta, flush).

    ``seed`` fixes the control structure (handler sequence and run lengths);
    ``payload_seed`` (default: derived from ``seed``) fixes the byte values.
    """
    rng = np.random.default_rng(seed)
    probs = np.array([0.45 - run_bias / 2, run_bias, 0.45 - run_bias / 2, 0.10])
    ops = rng.choice(4, size=n_tokens, p=probs / probs.sum())
    lengths = rng.integers(1, 16, size=n_tokens)
    pay = np.random.default_rng([seed, 0 if payload_seed is None else payload_seed + 1])
    values = pay.integers(0, 256, size=n_tokens)
    out = []
    for op, length, value in zip(ops, lengths, values):
        payload = (int(length) << 8) | int(value) if op == 1 else int(value)
        out.append((payload << 2) | int(op))
    return out


def decoder_source(tokens=None, seed: int = 11, variant: str = "baseline", run_bias: float = 0.25,
                   payload_seed: int | None = None) -> str:
    """Table-dispatched decoder whose work depends on the token stream.

    Emitted values are buffered; every eight values (and on flush tokens) a
    digest is written out and the zone yields.
    """
    if tokens is None:
        tokens = decoder_tokens(seed, run_bias=run_bias, payload_seed=payload_seed)
    mask_op = "or" if variant == "mod1" else "and"
    evil_call = "    call evil\n" if variant == "mod2" else ""
    evil = ""
    if variant == "mod2":
        calls = "\n".join(f"    call dsub{k}" for k in range(N_SUBS))
        subs = "\n".join(f".type dsub{k}, @function\ndsub{k}:\n    addi a0, a0, {k + 1}\n    ret" for k in range(N_SUBS))
        evil = f"""
.type evil, @function
evil:
    addi sp, sp, -16
    sw ra, 12(sp)
    sw a0, 8(sp)
{calls}
    lw a0, 8(sp)
    lw ra, 12(sp)
    addi sp, sp, 16
    ret
{subs}
"""
    return _START + f"""
.type main, @function
.type op_lit, @function
.type op_run, @function
.type op_delta, @function
.type op_flush, @function
.type emit, @function
.type flush, @function
main:
    addi sp, sp, -16
    sw ra, 12(sp)
    sw s0, 8(sp)
    sw s1, 4(sp)
    la s0, tokens
    li s1, {len(tokens)}
.Ldec_loop:
    lw a0, 0(s0)
    andi t0, a0, 3
    slli t0, t0, 2
    la t1, handlers
    add t1, t1, t0
    lw t1, 0(t1)
    srli a0, a0, 2
    jalr ra, 0(t1)
    addi s0, s0, 4
    addi s1, s1, -1
    bnez s1, .Ldec_loop
    call flush
    la t0, digest
    lw a0, 0(t0)
    li t1, {DEVICE:#x}
    sw a0, 0(t1)
    li a0, 0
    lw s1, 4(sp)
    lw s0, 8(sp)
    lw ra, 12(sp)
    addi sp, sp, 16
    ret

op_lit:
    addi sp, sp, -16
    sw ra, 12(sp)
{evil_call}    call emit
    lw ra, 12(sp)
    addi sp, sp, 16
    ret

op_run:
    addi sp, sp, -16
    sw ra, 12(sp)
    sw s0, 8(sp)
    sw s1, 4(sp)
    srli s0, a0, 8
    andi s0, s0, 15
    andi s1, a0, 255
.Lrun_loop:
    mv a0, s1
    call emit
    addi s0, s0, -1
    bnez s0, .Lrun_loop
    lw s1, 4(sp)
    lw s0, 8(sp)
    lw ra, 12(sp)
    addi sp, sp, 16
    ret

op_delta:
    addi sp, sp, -16
    sw ra, 12(sp)
    la t0, prev
    lw t1, 0(t0)
    add t1, t1, a0
    addi t1, t1, -128
    sw t1, 0(t0)
    mv a0, t1
    call emit
    lw ra, 12(sp)
    addi sp, sp, 16
    ret

op_flush:
    addi sp, sp, -16
    sw ra, 12(sp)
    call flush
    lw ra, 12(sp)
    addi sp, sp, 16
    ret

# emit(v): append to the 8-entry buffer, flushing when full
emit:
    addi sp, sp, -16
    sw ra, 12(sp)
    {mask_op}i a0, a0, 0xff
    la t0, count
    lw t1, 0(t0)
    la t2, buffer
    slli t3, t1, 2
    add t2, t2, t3
    sw a0, 0(t2)
    addi t1, t1, 1
    sw t1, 0(t0)
    li t3, 8
    blt t1, t3, .Lemit_done
    call flush
.Lemit_done:
    lw ra, 12(sp)
    addi sp, sp, 16
    ret

# flush(): digest the buffered values, write it out, yield
flush:
    la t0, count
    lw t1, 0(t0)
    beqz t1, .Lflush_done
    la t2, buffer
    la t4, digest
    lw a0, 0(t4)
.Lflush_loop:
    lw t3, 0(t2)
    slli a1, a0, 5
    add a0, a0, a1
    xor a0, a0, t3
    addi t2, t2, 4
    addi t1, t1, -1
    bnez t1, .Lflush_loop
    sw a0, 0(t4)
    sw zero, 0(t0)
    li t1, {DEVICE:#x}
    sw a0, 0(t1)
    li a7, 3
    ecall
.Lflush_done:
    ret
{evil}
.data
handlers:
    .word op_lit, op_run, op_delta, op_flush
prev:
    .word 0
count:
    .word 0
digest:
    .word 5381
buffer:
    .space 32
tokens:
{_words(tokens)}
"""


# ---------------------------------------------------------------- Fig. 1 shaped sort

def sort_source(values=None, variant: str = "baseline", seed: int = 5, n: int = 12) -> str:
    """``sort`` receives its comparison (``lt`` or ``gt``) as a parameter."""
    if values is None:
        values = np.random.default_rng(seed).integers(0, 1000, size=n)
    n = len(values)
    return _START + f"""
.type main, @function
.type sort, @function
.type lt, @function
.type gt, @function
.type print_array, @function
main:
    addi sp, sp, -16
    sw ra, 12(sp)
    la a0, array
    li a1, {n}
    la a2, lt
    call sort
    la a0, array
    li a1, {n}
    call print_array
    la a0, array
    li a1, {n}
    la a2, gt
    call sort
    la a0, array
    li a1, {n}
    call print_array
    li a0, 0
    lw ra, 12(sp)
    addi sp, sp, 16
    ret

# bubble sort; swaps a[j], a[j+1] when cmp(a[j+1], a[j]) is true
sort:
    addi sp, sp, -32
    sw ra, 28(sp)
    sw s0, 24(sp)
    sw s1, 20(sp)
    sw s2, 16(sp)
    sw s3, 12(sp)
    sw s4, 8(sp)
    mv s0, a0
    mv s1, a1
    mv s2, a2
    addi s3, s1, -1
.Lsort_outer:
    blez s3, .Lsort_done
    li s4, 0
.Lsort_inner:
    slli t0, s4, 2
    add t0, s0, t0
    lw a0, 4(t0)
    lw a1, 0(t0)
    jalr ra, 0(s2)
    beqz a0, .Lsort_next
    slli t0, s4, 2
    add t0, s0, t0
    lw t1, 0(t0)
    lw t2, 4(t0)
    sw t2, 0(t0)
    sw t1, 4(t0)
.Lsort_next:
    addi s4, s4, 1
    blt s4, s3, .Lsort_inner
    addi s3, s3, -1
    j .Lsort_outer
.Lsort_done:
    lw s4, 8(sp)
    lw s3, 12(sp)
    lw s2, 16(sp)
    lw s1, 20(sp)
    lw s0, 24(sp)
    lw ra, 28(sp)
    addi sp, sp, 32
    ret

lt:
    slt a0, a0, a1
    ret

gt:
    slt a0, a1, a0
    ret

print_array:
    li t0, {DEVICE:#x}
.Lprint_loop:
    lw t1, 0(a0)
    sw t1, 0(t0)
    addi a0, a0, 4
    addi a1, a1, -1
    bnez a1, .Lprint_loop
    ret

.data
array:
{_words(values)}
"""


# ---------------------------------------------------------------- generated dispatch family

def dispatch_source(n_handlers: int = 4, n_calls: int = 32, variant: str = "baseline") -> str:
    """``n_handlers`` address-taken leaf handlers behind one table-driven call site."""
    handlers = "\n".join(f".type h{k}, @function\nh{k}:\n    addi a0, a0, {k + 1}\n    ret" for k in range(n_handlers))
    table = ", ".join(f"h{k}" for k in range(n_handlers))
    return _START + f"""
.type main, @function
main:
    addi sp, sp, -16
    sw ra, 12(sp)
    sw s0, 8(sp)
    sw s1, 4(sp)
    li s0, 0
    li s1, 0
.Ldisp_loop:
    li t0, {n_handlers}
    remu t0, s1, t0
    slli t0, t0, 2
    la t1, table
    add t1, t1, t0
    lw t1, 0(t1)
    mv a0, s0
    jalr ra, 0(t1)
    mv s0, a0
    addi s1, s1, 1
    li t0, {n_calls}
    blt s1, t0, .Ldisp_loop
    li t0, {DEVICE:#x}
    sw s0, 0(t0)
    li a0, 0
    lw s1, 4(sp)
    lw s0, 8(sp)
    lw ra, 12(sp)
    addi sp, sp, 16
    ret
{handlers}
.data
table:
    .word {table}
"""


# ---------------------------------------------------------------- deep recursion

def recursion_source(depth: int = 64, variant: str = "baseline") -> str:
    """``rec(n) = n + rec(n - 1)``; every level n >= 1 keeps a frame, so the return-address depth equals ``depth``."""
    return f"""
.text
.type _start, @function
.type rec, @function
_start:
    li a0, {depth}
    call rec
    li t0, {DEVICE:#x}
    sw a0, 0(t0)
    sw zero, 4(t0)
.Lhang:
    j .Lhang

rec:
    beqz a0, .Lrec_base
    addi sp, sp, -16
    sw ra, 12(sp)
    sw s0, 8(sp)
    mv s0, a0
    li t0, {DEVICE:#x}
    sw a0, 0(t0)
    addi a0, a0, -1
    call rec
    add a0, a0, s0
    lw s0, 8(sp)
    lw ra, 12(sp)
    addi sp, sp, 16
.Lrec_base:
    ret
"""


# ---------------------------------------------------------------- interrupt workload

def ticker_source(iterations: int = 400, variant: str = "baseline") -> str:
    """A fixed loop plus ``tick``, the zone's timer-interrupt handler."""
    return _START + f"""
.type main, @function
.type work, @function
.type tick, @function
main:
    addi sp, sp, -16
    sw ra, 12(sp)
    li a0, {iterations}
    call work
    li t0, {DEVICE:#x}
    sw a0, 0(t0)
    li a0, 0
    lw ra, 12(sp)
    addi sp, sp, 16
    ret

work:
    mv t0, a0
    li a0, 7
.Lwork_loop:
    slli t1, a0, 3
    xor a0, a0, t1
    srli t1, a0, 5
    add a0, a0, t1
    andi t2, t0, 3
    bnez t2, .Lwork_skip
    xori a0, a0, 0x55
.Lwork_skip:
    addi t0, t0, -1
    bnez t0, .Lwork_loop
    ret

# timer handler: counts ticks, must preserve every register it touches
tick:
    addi sp, sp, -16
    sw t0, 12(sp)
    sw t1, 8(sp)
    la t0, ticks
    lw t1, 0(t0)
    addi t1, t1, 1
    sw t1, 0(t0)
    andi t1, t1, 1
    beqz t1, .Ltick_even
    addi t1, t1, 2
.Ltick_even:
    lw t1, 8(sp)
    lw t0, 12(sp)
    addi sp, sp, 16
    ret

.data
ticks:
    .word 0
"""


# ---------------------------------------------------------------- endless loop (fairness)

def spinner_source(variant: str = "baseline") -> str:
    return """
.text
.type _start, @function
_start:
    li t0, 0
.Lspin:
    addi t0, t0, 1
    j .Lspin
"""


CORPUS: dict[str, BenchmarkProgram] = {
    "tarai": BenchmarkProgram("tarai", tarai_source, {"default": {}}, kind="call-heavy recursive"),
    "cipher": BenchmarkProgram(
        "cipher", cipher_source,
        {"inp1": {"seed": 1}, "inp2": {"seed": 2}, "inp3": {"seed": 3}, "inp4": {"seed": 4}},
        ("baseline", "mod1", "mod2"), kind="loop-dominated cipher"),
    "decoder": BenchmarkProgram(
        "decoder", decoder_source,
        {"inp1": {"seed": 11, "run_bias": 0.25}, "inp2": {"seed": 12, "run_bias": 0.10},
         "inp3": {"seed": 13, "run_bias": 0.40}},
        ("baseline", "mod1", "mod2"), kind="input-dependent decoder", train_param="payload_seed"),
    "sort": BenchmarkProgram("sort", sort_source, {"default": {}}, kind="indirect dispatch (lt/gt)"),
    "dispatch": BenchmarkProgram("dispatch", dispatch_source, {"default": {}}, kind="table dispatch"),
}

LOOP_MEMBER = "cipher"
RECURSIVE_MEMBER = "tarai"
