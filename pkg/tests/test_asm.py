import pytest

from r5guard.asm import AsmError, AsmErrorKind, assemble, disassemble, parse
from r5guard.harness import corpus as C
from r5guard.harness import scenarios as S
from r5guard.harness.build import MONITOR_SOURCE, TEXT_SIZE, build_image, slot_layout
from r5guard.image import Image, ImageFormatError, MAGIC


def _text_words(image):
    return [w for _, w in image.segments[0].words()]


def test_addi_word():
    assert _text_words(assemble(".text\naddi x5, x0, 7\n")) == [0x00700293]


@pytest.mark.parametrize("src,kind", [
    (".text\naddi x31, x0, 1\n", AsmErrorKind.RESERVED_REGISTER),
    (".text\nadd t6, t5, a0\n", AsmErrorKind.RESERVED_REGISTER),
    (".text\nfrobnicate a0\n", AsmErrorKind.UNKNOWN_MNEMONIC),
    (".text\nj nowhere\n", AsmErrorKind.UNDEFINED_SYMBOL),
    (".text\naddi a0, a0, 4096\n", AsmErrorKind.RANGE_IMMEDIATE),
    (".text\nx:\nx:\nnop\n", AsmErrorKind.DUPLICATE_SYMBOL),
    (".text\naddi a0, a0\n", AsmErrorKind.SYNTAX),
])
def test_errors(src, kind):
    with pytest.raises(AsmError) as err:
        assemble(src)
    assert err.value.kind is kind


def test_reserved_registers_allowed_on_request():
    assert _text_words(assemble(".text\naddi x31, x0, 1\n", allow_reserved=True)) == [0x00100F93]


def test_text_limit():
    with pytest.raises(AsmError) as err:
        assemble(".text\n" + "nop\n" * 5, text_limit=16)
    assert err.value.kind is AsmErrorKind.SPACE_EXHAUSTED


def test_pseudo_instructions():
    src = """
.text
.type _start, @function
_start:
    li a0, 0x12345678
    la a1, value
    call f
    ret
.type f, @function
f:
    ret
.data
value:
    .word 7
"""
    image = assemble(src, text_base=0x80010000, data_base=0x80014000)
    assert image.symbol("value") == 0x80014000
    assert image.metadata["functions"]["f"][0] == image.symbol("f")
    assert image.segments[1].data == (7).to_bytes(4, "little")


def _all_sources():
    for name, prog in sorted(C.CORPUS.items()):
        for variant in prog.variants:
            for inp in prog.inputs or [None]:
                yield f"{name}/{variant}/{inp}", prog.source(variant, inp)
    yield "recursion", C.recursion_source()
    yield "ticker", C.ticker_source()
    yield "spinner", C.spinner_source()
    yield "monitor", MONITOR_SOURCE
    for src_name in ("RETURN_SLOT_SOURCE", "SHADOW_TAMPER_SOURCE", "FORWARD_EDGE_SOURCE"):
        yield src_name.lower(), getattr(S, src_name)


SOURCES = dict(_all_sources())


ROUND_TRIP = [(n, False) for n in sorted(SOURCES)] + [(n, True) for n in sorted(SOURCES) if n != "monitor"]


@pytest.mark.parametrize("name,instrument", ROUND_TRIP)
def test_disassembly_round_trip_is_a_fixpoint(name, instrument):
    image = build_image(SOURCES[name], 0, instrument=instrument)
    text = disassemble(image)
    lay = slot_layout(0)
    again = assemble(text, text_base=lay.text_base, data_base=lay.data_base, allow_reserved=True)
    assert [s.data for s in again.segments] == [s.data for s in image.segments]
    assert disassemble(again) == text


def test_image_container_round_trip(tmp_path):
    image = build_image(C.cipher_source(), 0)
    blob = image.to_bytes()
    assert blob[:4] == MAGIC and int.from_bytes(blob[4:8], "little") == 1
    back = Image.from_bytes(blob)
    assert back.entry_pc == image.entry_pc and [s.data for s in back.segments] == [s.data for s in image.segments]
    assert [s.perms for s in back.segments] == [5, 3]
    image.save(tmp_path / "t.img")
    loaded = Image.load(tmp_path / "t.img")
    assert loaded.metadata == image.metadata


@pytest.mark.parametrize("blob", [b"ELF\x7f" + bytes(12), MAGIC + bytes(4), MAGIC + (2).to_bytes(4, "little") + bytes(8),
                                  MAGIC + (1).to_bytes(4, "little") + bytes(4) + (1).to_bytes(4, "little")])
def test_malformed_images(blob):
    with pytest.raises(ImageFormatError):
        Image.from_bytes(blob)


def test_parse_keeps_function_types():
    prog = parse(C.tarai_source())
    assert {"_start", "main", "tarai"} <= set(prog.functions)


def test_text_fits_slot():
    for name, src in SOURCES.items():
        assert build_image(src, 0, instrument=name != "monitor").text_size <= TEXT_SIZE
