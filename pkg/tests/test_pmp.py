import pytest
from hypothesis import given, strategies as st

from oracle.models import pmp_lock_sequences
from oracle.refsim import napot_region
from r5guard.pmp import (AccessKind, PmpEntry, PmpLockedError, PmpMode, PmpUnit, Priv, decode_napot, encode_napot,
                         napot_entry, parse_perms, format_perms)

RD, WR, EX = AccessKind.READ, AccessKind.WRITE, AccessKind.EXECUTE


def test_napot_decode_example():
    assert decode_napot(0x200001FF) == (0x80000000, 4096)
    assert napot_region(0x200001FF) == (0x80000000, 4096)


def test_na4_region():
    unit = PmpUnit()
    unit.configure(0, PmpEntry(PmpMode.NA4, 0x20000000, parse_perms("r")))
    assert unit.region(0) == (0x80000000, 0x80000004)
    assert unit.check(0x80000000, 4, RD, Priv.U)
    assert not unit.check(0x80000004, 4, RD, Priv.U)


@given(st.integers(0, 27), st.integers(0, (1 << 20) - 1))
def test_napot_encode_decode_agree_with_reference(k, slot):
    size = 8 << k
    base = (slot * size) & 0xFFFFFFFF & ~(size - 1)
    reg = encode_napot(base, size)
    assert decode_napot(reg) == (base, size) == napot_region(reg)


@given(st.integers(0, 0xFFFFFFFF))
def test_napot_decode_matches_reference_on_any_register(reg):
    if (reg & 0x7FFFFFFF) == 0x7FFFFFFF:
        return  # more trailing ones than a 34-bit physical space allows
    assert decode_napot(reg) == napot_region(reg)


def test_empty_unit_defaults():
    unit = PmpUnit()
    for addr in (0, 0x80000000, 0xFFFFFFFC):
        for kind in AccessKind:
            assert not unit.check(addr, 4, kind, Priv.U)
            assert unit.check(addr, 4, kind, Priv.M)


def test_user_write_into_monitor_only_entry_denied():
    unit = PmpUnit()
    unit.configure(0, napot_entry(0x80001000, 0x1000, ""))
    unit.configure(1, napot_entry(0x80000000, 0x10000, "rw"))
    assert not unit.check(0x80001000, 4, WR, Priv.U)
    assert unit.check(0x80002000, 4, WR, Priv.U)


def test_locked_read_only_binds_machine_mode():
    unit = PmpUnit()
    unit.configure(0, napot_entry(0x80000000, 0x1000, "r", locked=True))
    assert not unit.check(0x80000010, 4, WR, Priv.M)
    assert unit.check(0x80000010, 4, RD, Priv.M)


def test_unlocked_entry_does_not_bind_machine_mode():
    unit = PmpUnit()
    unit.configure(0, napot_entry(0x80000000, 0x1000, "r"))
    assert unit.check(0x80000010, 4, WR, Priv.M)


def test_reconfigure_unlocked_then_locked():
    unit = PmpUnit()
    e = napot_entry(0x80000000, 0x1000, "rw")
    unit.configure(3, e)
    unit.configure(3, e)
    unit.configure(3, napot_entry(0x80000000, 0x1000, "r", locked=True))
    for attempt in (e, PmpEntry(), napot_entry(0x80000000, 0x1000, "r", locked=True)):
        with pytest.raises(PmpLockedError):
            unit.configure(3, attempt)
    assert not unit.try_configure(3, e)
    unit.reset()
    unit.configure(3, e)
    assert unit.locked_indices() == frozenset()


def test_locked_tor_protects_its_base():
    unit = PmpUnit()
    unit.configure(0, PmpEntry(PmpMode.OFF, 0x80000000 >> 2))
    unit.configure(1, PmpEntry(PmpMode.TOR, 0x80001000 >> 2, 0, locked=True))
    with pytest.raises(PmpLockedError):
        unit.configure(0, PmpEntry(PmpMode.OFF, 0x7F000000 >> 2))
    unit.configure(0, PmpEntry(PmpMode.OFF, 0x80000000 >> 2, parse_perms("r")))  # same address is fine


def test_configure_many_is_all_or_nothing():
    unit = PmpUnit()
    unit.configure(2, napot_entry(0x80000000, 0x1000, "r", locked=True))
    before = list(unit.entries)
    with pytest.raises(PmpLockedError):
        unit.configure_many(0, [napot_entry(0x80010000, 0x1000, "rw")] * 3)
    assert unit.entries == before


def test_user_mode_cannot_configure():
    with pytest.raises(PermissionError):
        PmpUnit().configure(0, PmpEntry(), Priv.U)


def test_straddling_access_denied():
    unit = PmpUnit()
    unit.configure(0, napot_entry(0x80000000, 0x1000, "rw"))
    unit.configure(1, napot_entry(0x80001000, 0x1000, "rw"))
    assert not unit.check(0x80000FFE, 4, RD, Priv.U)


@given(st.integers(0, 14), st.integers(0, 0xFFF), st.sampled_from(list(AccessKind)), st.sampled_from(list(Priv)))
def test_higher_index_permissive_entry_never_changes_decision(i, off, kind, priv):
    unit = PmpUnit()
    unit.configure(i, napot_entry(0x80000000, 0x1000, "", locked=True))
    addr = 0x80000000 + (off & ~3)
    before = unit.check(addr, 4, kind, priv)
    unit.configure(i + 1, napot_entry(0x80000000, 0x10000, "rwx"))
    assert unit.check(addr, 4, kind, priv) == before is False


@given(st.text(alphabet="rwx", max_size=3))
def test_perm_text_round_trip(text):
    perms = parse_perms(text)
    assert set(format_perms(perms).replace("-", "")) == set(text)


def test_lock_sequences_against_reference():
    assert pmp_lock_sequences(200, seed=11) == []
