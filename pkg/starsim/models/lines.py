from __future__ import annotations

from dataclasses import dataclass

MAC_BITS = 54
LSB_BITS = 10
MAC_MASK = (1 << MAC_BITS) - 1
LSB_MASK = (1 << LSB_BITS) - 1
SIT_COUNTER_BITS = 56
MINOR_BITS = 7
MINOR_LIMIT = 1 << MINOR_BITS
MAJOR_SIDECAR_BITS = LSB_BITS - MINOR_BITS


@dataclass(frozen=True, slots=True)
class MacField:
    """54-bit tag plus the 10-bit sidecar of the parent's counter."""

    mac54: int
    lsb10: int

    def pack(self) -> int:
        return (self.mac54 & MAC_MASK) << LSB_BITS | (self.lsb10 & LSB_MASK)

    @classmethod
    def unpack(cls, word: int) -> MacField:
        return cls(mac54=(word >> LSB_BITS) & MAC_MASK, lsb10=word & LSB_MASK)


@dataclass(frozen=True, slots=True)
class CounterBlockContent:
    major: int
    minors: tuple[int, ...]
    mac_field: MacField

    @property
    def counters(self) -> tuple[int, ...]:
        return self.minors


@dataclass(frozen=True, slots=True)
class SitNodeContent:
    counters: tuple[int, ...]
    mac_field: MacField


@dataclass(frozen=True, slots=True)
class DataLineContent:
    ciphertext: bytes
    mac_field: MacField


@dataclass(frozen=True, slots=True)
class BitmapLineContent:
    bits: int = 0


NodeContent = CounterBlockContent | SitNodeContent
LineContent = CounterBlockContent | SitNodeContent | DataLineContent | BitmapLineContent


def data_sidecar(major: int, minor: int) -> int:
    """User-data lsb10: 3 major LSBs above the 7-bit minor."""
    return (major & ((1 << MAJOR_SIDECAR_BITS) - 1)) << MINOR_BITS | minor
