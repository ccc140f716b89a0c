import random

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from helpers import RAM, I, Op, machine_with, random_program, seed_regs
from oracle.refsim import RefPredictor
from r5guard.core import Machine, Retired, Trapped, TrapCause, Cause
from r5guard.hpc import (BranchPredictor, CounterView, HpcConfig, HpcEventKind as E, PermissionDenied, Verdict,
                         classify_events, read_zone_counters)
from r5guard.isa import BRANCHES, decode

CFG = HpcConfig()


def _taken(kind: Op, a: int, b: int) -> bool:
    sa, sb = a - ((a >> 31) << 32), b - ((b >> 31) << 32)
    return {Op.BEQ: a == b, Op.BNE: a != b, Op.BLT: sa < sb, Op.BGE: sa >= sb, Op.BLTU: a < b, Op.BGEU: a >= b}[kind]


def test_classify_examples():
    assert classify_events(I(Op.ADD, 5, 6, 7), Retired(), CFG) == {E.INT}
    assert classify_events(I(Op.JAL, 1, 0, 0, 16), Retired(), CFG) == {E.JAL}
    assert classify_events(I(Op.SW, 0, 5, 6, 0), Retired(mem_addr=0x10000000), CFG) == {E.MIO}
    assert classify_events(I(Op.SW, 0, 5, 6, 0), Retired(mem_addr=0x80000000), CFG) == set()
    assert classify_events(I(Op.BNE, 0, 1, 2, 8), Retired(), CFG, mispredicted=True) == {E.CB, E.BDM}
    assert classify_events(I(Op.MUL, 1, 2, 3), Retired(), CFG) == set()
    assert classify_events(I(Op.ADD, 1, 2, 3), Trapped(TrapCause(Cause.ILLEGAL_INSTRUCTION)), CFG) == {E.PFE}


def test_first_taken_branch_mispredicts():
    assert BranchPredictor().predict_and_update(RAM, True) is Verdict.MISPREDICT


def test_always_taken_loop_mispredicts_at_most_twice():
    bp = BranchPredictor()
    misses = sum(bp.predict_and_update(RAM + 0x40, True) is Verdict.MISPREDICT for _ in range(1000))
    assert misses <= 2


def test_alternating_pattern_mispredicts_half_or_more():
    bp = BranchPredictor()
    misses = sum(bp.predict_and_update(RAM + 0x40, k % 2 == 0) is Verdict.MISPREDICT for k in range(1000))
    assert misses >= 500


@given(st.lists(st.tuples(st.integers(0, 0x3FFF), st.booleans()), max_size=300))
def test_predictor_matches_reference(trace):
    bp, ref = BranchPredictor(), RefPredictor()
    for slot, taken in trace:
        pc = RAM + 4 * slot
        assert (bp.predict_and_update(pc, taken) is Verdict.MISPREDICT) == ref.update(pc, taken)


@settings(max_examples=150, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_kernel_events_match_classification(seed):
    """Per-step events from the kernel equal classify_events plus an independent predictor."""
    rng = random.Random(seed)
    words = random_program(rng, 48)
    words[rng.randrange(48)] = I(Op.SW, 0, 23, 5, 0).raw  # one device write
    m = machine_with(words)
    for i, v in seed_regs(rng, RAM).items():
        m.cpu[i] = v
    m.cpu[23] = 0x10000000 + 4 * rng.randrange(8)
    ref = RefPredictor()
    tally = np.zeros(6, dtype=np.int64)
    for _ in range(150):
        pc = m.cpu.pc
        word = m.read_word(pc) if RAM <= pc < RAM + (1 << 20) else 0
        regs = [m.cpu[i] for i in range(32)]
        out = m.step()
        if out.trapped:
            assert out.events == {E.PFE}
            tally[E.PFE] += 1
            break
        ins = decode(word)
        miss = ins.kind in BRANCHES and ref.update(pc, _taken(ins.kind, regs[ins.rs1], regs[ins.rs2]))
        want = classify_events(ins, out, CFG, miss)
        assert out.events == want
        for e in want:
            tally[e] += 1
    assert (m.tally == tally).all() and (m.total == tally).all()


def test_counter_budget_two_active_counters():
    words = [I(Op.ADDI, 5, 0, 0, 10), I(Op.JAL, 0, 0, 0, 4), I(Op.ADDI, 5, 5, 0, -1), I(Op.BNE, 0, 5, 0, -8),
             I(Op.LUI, 6, 0, 0, 0x10000000), I(Op.SW, 0, 6, 5, 0)]
    m = machine_with(words)
    m.run(100)
    counts = dict(zip(E, (int(v) for v in m.tally)))
    assert counts[E.JAL] == 10 and counts[E.CB] == 10 and counts[E.INT] == 11 and counts[E.MIO] == 1
    assert m.csrs.mhpmevent(3) is E.JAL and m.csrs.mhpmevent(4) is E.CB
    assert m.csrs.mhpmcounter(3) == 10 and m.csrs.mhpmcounter(4) == 10
    assert m.hpm.shape[0] == 2
    # the other four events are tallied but never reach an architectural counter
    assert sorted(int(v) for v in m.hpm[:, 1]) == [10, 10]


def test_budget_enforced_in_config():
    with pytest.raises(ValueError):
        HpcConfig(active=(E.JAL, E.CB, E.INT), budget=2)
    m = Machine(hpc=HpcConfig(active=("INT",), budget=1))
    assert m.hpm.shape == (1, 2)


def test_read_zone_counters_permission_and_values():
    view = CounterView({1: np.array([0, 10, 0, 0, 0, 0]), 2: np.zeros(6, dtype=np.int64)}, monitor_zone=0)
    assert dict(read_zone_counters(view, 1, 0))[E.JAL] == 10
    assert all(v == 0 for _, v in read_zone_counters(view, 2, 0))
    with pytest.raises(PermissionDenied):
        read_zone_counters(view, 1, 2)


def test_repeated_runs_give_identical_tallies():
    rng = random.Random(9)
    words = random_program(rng, 64)
    regs = seed_regs(rng, RAM)
    tallies = []
    for _ in range(3):
        m = machine_with(words)
        for i, v in regs.items():
            m.cpu[i] = v
        m.run(500)
        tallies.append(m.tally.tolist())
    assert tallies[0] == tallies[1] == tallies[2]
