"""Minimal DNS wire codec for a forwarding firewall.

Covers what the firewall needs and nothing more: parsing a single-question
query, reading response header metadata without touching answer bodies, and
synthesising block / error responses. Compression pointers are accepted on
input but never emitted.
"""

from __future__ import annotations

import enum
import ipaddress
import struct
from dataclasses import dataclass, field

from ._accel import decode_name
from .errors import BadLabel, MultiQuestion, NotAQuery, Truncated

HEADER = struct.Struct("!HHHHHH")
QUESTION_TAIL = struct.Struct("!HH")
A_RECORD_TAIL = struct.Struct("!HHIH")

QR = 0x8000
AA = 0x0400
RD = 0x0100
RA = 0x0080

QTYPE_A = 1
QTYPE_AAAA = 28
QCLASS_IN = 1

RCODE_NOERROR = 0
RCODE_FORMERR = 1
RCODE_SERVFAIL = 2
RCODE_NXDOMAIN = 3

MAX_NAME_LENGTH = 253
MAX_LABEL_LENGTH = 63
DEFAULT_SINKHOLE_TTL = 60

QTYPE_CODES = {
    "A": 1, "NS": 2, "CNAME": 5, "SOA": 6, "PTR": 12, "MX": 15, "TXT": 16,
    "AAAA": 28, "SRV": 33, "HTTPS": 65, "ANY": 255,
}


def _check_label(label: str) -> None:
    if not 1 <= len(label) <= MAX_LABEL_LENGTH:
        raise BadLabel(f"label length {len(label)} outside 1..63: {label[:70]!r}")
    for ch in label:
        code = ord(ch)
        if code < 0x21 or code > 0x7E or ch == ".":
            raise BadLabel(f"illegal character {ch!r} in label {label!r}")


@dataclass(frozen=True, slots=True)
class DomainName:
    """Lowercased, validated label sequence. The root is the empty tuple."""

    labels: tuple[str, ...]

    def __post_init__(self) -> None:
        labels = tuple(label.lower() for label in self.labels)
        for label in labels:
            _check_label(label)
        if sum(len(x) for x in labels) + max(len(labels) - 1, 0) > MAX_NAME_LENGTH:
            raise BadLabel("name longer than 253 bytes")
        object.__setattr__(self, "labels", labels)

    @classmethod
    def parse(cls, text: str) -> DomainName:
        """Parse presentation form; one trailing dot is allowed."""
        text = text.strip()
        if text in ("", "."):
            return cls(())
        if text.endswith("."):
            text = text[:-1]
        if not text.isascii():
            raise BadLabel(f"non-ASCII name {text!r}")
        return cls(tuple(text.split(".")))

    @classmethod
    def coerce(cls, value: DomainName | str) -> DomainName:
        return value if isinstance(value, DomainName) else cls.parse(value)

    def __str__(self) -> str:
        return ".".join(self.labels) if self.labels else "."

    def __len__(self) -> int:
        return len(self.labels)

    def to_wire(self) -> bytes:
        out = bytearray()
        for label in self.labels:
            out.append(len(label))
            out += label.encode("ascii")
        out.append(0)
        return bytes(out)


class BlockMode(str, enum.Enum):
    NXDOMAIN = "nxdomain"
    SINKHOLE = "sinkhole"


@dataclass(frozen=True)
class QueryView:
    id: int
    qname: DomainName
    qtype: int = QTYPE_A
    qclass: int = QCLASS_IN
    recursion_desired: bool = True
    # Question section exactly as received (uncompressed queries only) so
    # synthesised responses can echo it byte-for-byte.
    raw_question: bytes | None = field(default=None, compare=False, repr=False)

    def question_bytes(self) -> bytes:
        if self.raw_question is not None:
            return self.raw_question
        return self.qname.to_wire() + QUESTION_TAIL.pack(self.qtype, self.qclass)


@dataclass(frozen=True)
class ResponseMeta:
    id: int
    rcode: int
    answer_count: int


def parse_query(data: bytes) -> QueryView:
    """Parse a single-question DNS query.

    Raises Truncated, BadLabel, PointerLoop, NotAQuery or MultiQuestion; no
    other exception escapes for any byte input.
    """
    if not isinstance(data, bytes):
        data = bytes(data)
    if len(data) < HEADER.size:
        raise Truncated(f"{len(data)} bytes is shorter than a DNS header")
    msg_id, flags, qdcount, _an, _ns, _ar = HEADER.unpack_from(data)
    if flags & QR:
        raise NotAQuery("QR bit set")
    if qdcount != 1:
        raise MultiQuestion(f"question count is {qdcount}")
    labels, end, compressed = decode_name(data, HEADER.size)
    if end + 4 > len(data):
        raise Truncated("question type/class cut short")
    qtype, qclass = QUESTION_TAIL.unpack_from(data, end)
    raw_question = None if compressed else data[HEADER.size:end + 4]
    return QueryView(
        id=msg_id,
        qname=DomainName(tuple(labels)),
        qtype=qtype,
        qclass=qclass,
        recursion_desired=bool(flags & RD),
        raw_question=raw_question,
    )


def encode_query(q: QueryView) -> bytes:
    """Canonical, uncompressed encoding of ``q``."""
    flags = RD if q.recursion_desired else 0
    name = q.qname.to_wire()
    return HEADER.pack(q.id, flags, 1, 0, 0, 0) + name + QUESTION_TAIL.pack(q.qtype, q.qclass)


def _response_flags(q: QueryView, rcode: int) -> int:
    return QR | (RD if q.recursion_desired else 0) | RA | (rcode & 0xF)


def synthesize_block_response(
    q: QueryView,
    mode: BlockMode = BlockMode.NXDOMAIN,
    sinkhole_addr: str | None = None,
    ttl: int = DEFAULT_SINKHOLE_TTL,
) -> bytes:
    """Build the locally answered response for a blocked query.

    Sinkhole answers only make sense for A queries with an address; every
    other combination degrades to NXDOMAIN. No OPT record is attached.
    """
    question = q.question_bytes()
    mode = BlockMode(mode)
    if mode is BlockMode.SINKHOLE and q.qtype == QTYPE_A and sinkhole_addr:
        addr = ipaddress.IPv4Address(sinkhole_addr).packed
        answer = q.qname.to_wire() + A_RECORD_TAIL.pack(QTYPE_A, QCLASS_IN, ttl, 4) + addr
        header = HEADER.pack(q.id, _response_flags(q, RCODE_NOERROR), 1, 1, 0, 0)
        return header + question + answer
    header = HEADER.pack(q.id, _response_flags(q, RCODE_NXDOMAIN), 1, 0, 0, 0)
    return header + question


def synthesize_error_response(q: QueryView, rcode: int) -> bytes:
    """Question-echoing response with no answers, e.g. SERVFAIL."""
    header = HEADER.pack(q.id, _response_flags(q, rcode), 1, 0, 0, 0)
    return header + q.question_bytes()


def formerr_for(data: bytes) -> bytes | None:
    """Header-only FORMERR for an unparseable datagram, or None to drop it.

    A reply is only possible when the full header is present, and datagrams
    that already claim to be responses are never answered.
    """
    if len(data) < HEADER.size:
        return None
    msg_id, flags = struct.unpack_from("!HH", data)
    if flags & QR:
        return None
    out_flags = QR | (flags & RD) | RA | RCODE_FORMERR
    return HEADER.pack(msg_id, out_flags, 0, 0, 0, 0)


def parse_response_meta(data: bytes) -> ResponseMeta:
    if len(data) < HEADER.size:
        raise Truncated(f"{len(data)} bytes is shorter than a DNS header")
    msg_id, flags, _qd, ancount, _ns, _ar = HEADER.unpack_from(data)
    return ResponseMeta(id=msg_id, rcode=flags & 0xF, answer_count=ancount)


def first_a_answer(data: bytes) -> str | None:
    """Address of the first A answer in a response, if there is one.

    Used by replay statistics to recognise sinkhole answers.
    """
    try:
        meta = parse_response_meta(data)
        if meta.answer_count < 1:
            return None
        _labels, end, _ = decode_name(bytes(data), HEADER.size)
        pos = end + 4
        _labels, pos, _ = decode_name(bytes(data), pos)
        rtype, _rclass, _ttl, rdlen = A_RECORD_TAIL.unpack_from(data, pos)
        pos += A_RECORD_TAIL.size
        if rtype != QTYPE_A or rdlen != 4 or pos + 4 > len(data):
            return None
        return str(ipaddress.IPv4Address(data[pos:pos + 4]))
    except (ValueError, struct.error):
        return None


def qtype_code(value: str | int) -> int:
    """Accept a mnemonic (``AAAA``), ``TYPE65`` or a decimal code."""
    if isinstance(value, int):
        return value
    text = value.strip().upper()
    if text in QTYPE_CODES:
        return QTYPE_CODES[text]
    if text.startswith("TYPE"):
        text = text[4:]
    code = int(text)
    if not 0 <= code <= 0xFFFF:
        raise ValueError(f"qtype {value!r} out of range")
    return code
