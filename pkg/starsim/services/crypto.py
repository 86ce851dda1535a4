from __future__ import annotations

import hashlib
import struct
from collections.abc import Iterable, Sequence

from starsim.models.geometry import COUNTERS_PER_BLOCK, LINE_BYTES, TREE_ARITY, LineId, LineKind
from starsim.models.lines import (
    LSB_MASK,
    MAC_MASK,
    BitmapLineContent,
    CounterBlockContent,
    DataLineContent,
    LineContent,
    MacField,
    SitNodeContent,
    data_sidecar,
)

KEY_BYTES = 16
_WORD_MASK = (1 << 64) - 1

_OTP = b"star-otp"
_MAC_SIT = b"star-mac-sit"
_MAC_COUNTER = b"star-mac-ctr"
_MAC_DATA = b"star-mac-data"
_DIGEST = b"star-digest"


def _words(*values: int) -> bytes:
    return struct.pack(f"<{len(values)}Q", *(v & _WORD_MASK for v in values))


def _line_words(line: LineId) -> tuple[int, int, int]:
    return int(line.kind), line.level + 1, line.index


def xor_bytes(left: bytes, right: bytes) -> bytes:
    return (int.from_bytes(left, "little") ^ int.from_bytes(right, "little")).to_bytes(
        len(left), "little"
    )


class Prf:
    """
    Keyed BLAKE2b standing in for the AES engine.

    Each primitive uses its own personalization string, so a tag for one
    purpose never equals a tag for another over the same words.
    """

    def __init__(self, key: bytes):
        if len(key) != KEY_BYTES:
            raise ValueError(f"key must be {KEY_BYTES} bytes")
        self.key = key

    @classmethod
    def from_seed(cls, seed: int) -> Prf:
        key = hashlib.blake2b(_words(seed), digest_size=KEY_BYTES, person=b"star-key").digest()
        return cls(key)

    def _hash(self, person: bytes, payload: bytes, size: int = 8) -> bytes:
        return hashlib.blake2b(payload, digest_size=size, key=self.key, person=person).digest()

    def word(self, person: bytes, payload: bytes) -> int:
        return int.from_bytes(self._hash(person, payload), "little")

    # -- encryption ---------------------------------------------------------

    def otp(self, address: LineId, major: int, minor: int) -> bytes:
        return self._hash(_OTP, _words(*_line_words(address), major, minor), size=LINE_BYTES)

    def encrypt(self, plaintext: bytes, address: LineId, major: int, minor: int) -> bytes:
        return xor_bytes(plaintext, self.otp(address, major, minor))

    decrypt = encrypt

    # -- MACs ---------------------------------------------------------------

    def mac_sit(
        self, node_addr: LineId, counters: Sequence[int], parent_counter: int, lsb10: int
    ) -> int:
        payload = _words(*_line_words(node_addr), *counters, parent_counter, lsb10)
        return self.word(_MAC_SIT, payload) & MAC_MASK

    def mac_counter(
        self,
        node_addr: LineId,
        major: int,
        minors: Sequence[int],
        parent_counter: int,
        lsb10: int,
    ) -> int:
        payload = _words(*_line_words(node_addr), major, *minors, parent_counter, lsb10)
        return self.word(_MAC_COUNTER, payload) & MAC_MASK

    def mac_data(self, data: bytes, addr: LineId, major: int, minor: int, lsb10: int) -> int:
        payload = data + _words(*_line_words(addr), major, minor, lsb10)
        return self.word(_MAC_DATA, payload) & MAC_MASK

    def mac_node(
        self, node_addr: LineId, content: CounterBlockContent | SitNodeContent, parent_counter: int, lsb10: int
    ) -> int:
        if isinstance(content, CounterBlockContent):
            return self.mac_counter(node_addr, content.major, content.minors, parent_counter, lsb10)
        return self.mac_sit(node_addr, content.counters, parent_counter, lsb10)

    def digest(self, values: Iterable[int]) -> int:
        """64-bit digest over an ordered list of words (set-MACs, tree nodes)."""
        return self.word(_DIGEST, _words(*values))


def genesis_content(prf: Prf, line: LineId) -> LineContent:
    """
    Content of a line that was never written.

    Counters start at zero and user data holds an encrypted zero line, so
    the initial image verifies like any other.
    """
    if line.kind == LineKind.USER_DATA:
        ciphertext = prf.encrypt(bytes(LINE_BYTES), line, 0, 0)
        lsb10 = data_sidecar(0, 0)
        return DataLineContent(ciphertext, MacField(prf.mac_data(ciphertext, line, 0, 0, lsb10), lsb10))
    if line.kind == LineKind.COUNTER_BLOCK:
        minors = (0,) * COUNTERS_PER_BLOCK
        return CounterBlockContent(0, minors, MacField(prf.mac_counter(line, 0, minors, 0, 0), 0))
    if line.kind == LineKind.SIT_NODE:
        counters = (0,) * TREE_ARITY
        return SitNodeContent(counters, MacField(prf.mac_sit(line, counters, 0, 0), 0))
    return BitmapLineContent()


def seal_node(
    prf: Prf,
    line: LineId,
    content: CounterBlockContent | SitNodeContent,
    parent_counter: int,
    lsb10: int | None = None,
) -> CounterBlockContent | SitNodeContent:
    """Copy of a node with its MAC field recomputed under `parent_counter`."""
    if lsb10 is None:
        lsb10 = parent_counter & LSB_MASK
    mac_field = MacField(prf.mac_node(line, content, parent_counter, lsb10), lsb10)
    if isinstance(content, CounterBlockContent):
        return CounterBlockContent(content.major, content.minors, mac_field)
    return SitNodeContent(content.counters, mac_field)
