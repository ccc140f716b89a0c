"""Loadable images, the ``R5IM`` container and its JSON metadata sidecar."""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

from .kernel import PERM_R, PERM_W, PERM_X

MAGIC = b"R5IM"
VERSION = 1


class ImageFormatError(ValueError):
    pass


@dataclass
class Segment:
    load_addr: int
    data: bytes
    perms: int

    @property
    def end(self) -> int:
        return self.load_addr + len(self.data)

    @property
    def executable(self) -> bool:
        return bool(self.perms & PERM_X)

    def words(self):
        for off in range(0, len(self.data) - 3, 4):
            yield self.load_addr + off, int.from_bytes(self.data[off:off + 4], "little")


@dataclass
class Image:
    """Segments plus toolchain metadata (symbols, functions, labels, sites).

    Only ``entry_pc`` and ``segments`` go into the binary container; the rest
    travels in the sidecar.
    """

    entry_pc: int
    segments: list[Segment]
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        spans = sorted((s.load_addr, s.end) for s in self.segments)
        for (_, a_end), (b_lo, _) in zip(spans, spans[1:]):
            if b_lo < a_end:
                raise ImageFormatError("image segments overlap")

    @property
    def symbols(self) -> dict[str, int]:
        return self.metadata.get("symbols", {})

    @property
    def size(self) -> int:
        return sum(len(s.data) for s in self.segments)

    @property
    def text_size(self) -> int:
        return sum(len(s.data) for s in self.segments if s.executable)

    def symbol(self, name: str) -> int:
        try:
            return self.symbols[name]
        except KeyError:
            raise KeyError(f"image has no symbol {name!r}") from None

    def to_bytes(self) -> bytes:
        out = [MAGIC, struct.pack("<III", VERSION, self.entry_pc, len(self.segments))]
        for s in self.segments:
            out.append(struct.pack("<III", s.load_addr, len(s.data), s.perms & 7))
        out.extend(s.data for s in self.segments)
        return b"".join(out)

    @classmethod
    def from_bytes(cls, blob: bytes, metadata: dict | None = None) -> Image:
        if blob[:4] != MAGIC:
            raise ImageFormatError("bad magic, not an R5IM image")
        if len(blob) < 16:
            raise ImageFormatError("truncated header")
        version, entry, count = struct.unpack_from("<III", blob, 4)
        if version != VERSION:
            raise ImageFormatError(f"unsupported image version {version}")
        pos = 16
        headers = []
        for _ in range(count):
            if pos + 12 > len(blob):
                raise ImageFormatError("truncated segment table")
            headers.append(struct.unpack_from("<III", blob, pos))
            pos += 12
        segments = []
        for addr, size, flags in headers:
            if pos + size > len(blob):
                raise ImageFormatError("truncated segment payload")
            segments.append(Segment(addr, bytes(blob[pos:pos + size]), flags & 7))
            pos += size
        return cls(entry, segments, dict(metadata or {}))

    def save(self, path: str | Path, sidecar: bool = True) -> None:
        path = Path(path)
        path.write_bytes(self.to_bytes())
        if sidecar:
            sidecar_path(path).write_text(json.dumps(self.metadata, indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> Image:
        path = Path(path)
        meta_path = sidecar_path(path)
        meta = json.loads(meta_path.read_text()) if meta_path.exists() else {}
        return cls.from_bytes(path.read_bytes(), meta)


def sidecar_path(path: str | Path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".json")


def perms_from_flags(text: str) -> int:
    return sum(bit for ch, bit in (("r", PERM_R), ("w", PERM_W), ("x", PERM_X)) if ch in text)
