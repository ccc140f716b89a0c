import numpy as np
import pytest
from hypothesis import given, strategies as st

from oracle.models import shadow_sequences
from r5guard.shadow import Overflow, ShadowStack, Underflow


def test_push_on_empty():
    s = ShadowStack(4)
    s.push(0x80000040)
    assert s.depth == 1 and s.top() == 0x80000040


def test_overflow_at_capacity():
    s = ShadowStack(3)
    for v in range(3):
        s.push(v)
    with pytest.raises(Overflow):
        s.push(99)
    assert s.snapshot() == [0, 1, 2]


def test_underflow_on_empty():
    with pytest.raises(Underflow):
        ShadowStack(2).pop()


def test_depth_64_returns_in_reverse():
    s = ShadowStack(256)
    addrs = [0x80010000 + 8 * k for k in range(64)]
    for a in addrs:
        s.push(a)
    assert [s.pop() for _ in addrs] == addrs[::-1]
    assert s.high_watermark == 64


def test_storage_is_a_view_into_backing_memory():
    ram = np.zeros(16, dtype="<u4")
    s = ShadowStack(8, base=0x80001000, storage=ram[4:])
    s.push(0xDEADBEEF)
    assert ram[4] == 0xDEADBEEF and s.limit == 0x80001020


@given(st.lists(st.one_of(st.integers(0, 0xFFFFFFFF), st.none()), max_size=200), st.integers(1, 16))
def test_mirrors_list(ops, cap):
    s, ref = ShadowStack(cap), []
    for op in ops:
        if op is None:
            if ref:
                assert s.pop() == ref.pop()
            else:
                with pytest.raises(Underflow):
                    s.pop()
        elif len(ref) < cap:
            s.push(op)
            ref.append(op)
        else:
            with pytest.raises(Overflow):
                s.push(op)
        assert s.snapshot() == ref


def test_random_sequences_against_list():
    assert shadow_sequences(1000, seed=5) == []
