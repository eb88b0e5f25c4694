"""RFC 1035 wireformat codec and the base64url form used by DoH GET."""

import base64
import binascii
import ipaddress
import re
import secrets
import struct
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Tuple, TypeVar, Union

from .exceptions import Base64UrlError, DnsParseError, DnsValidationError

T = TypeVar("T")

HEADER = struct.Struct("!HHHHHH")
QUESTION_TAIL = struct.Struct("!HH")
RECORD_TAIL = struct.Struct("!HHIH")

HEADER_SIZE = HEADER.size
MAX_LABEL_LENGTH = 63
MAX_NAME_LENGTH = 255
MAX_POINTER_HOPS = 128
MAX_POINTER_OFFSET = 0x3FFF

TYPE_A = 1
TYPE_NS = 2
TYPE_CNAME = 5
TYPE_PTR = 12
TYPE_AAAA = 28
TYPE_OPT = 41
CLASS_IN = 1

RECORD_TYPES: Dict[str, int] = {
    "A": TYPE_A,
    "NS": TYPE_NS,
    "CNAME": TYPE_CNAME,
    "PTR": TYPE_PTR,
    "AAAA": TYPE_AAAA,
}

_BASE64URL_ALPHABET = re.compile(r"^[A-Za-z0-9_-]*$")


def normalize_name(name: str) -> str:
    """Return ``name`` without its trailing dot; the root is the empty string."""
    if name in ("", "."):
        return ""
    return name[:-1] if name.endswith(".") else name


def name_labels(name: str) -> List[bytes]:
    """
    Split a domain name into wire labels, validating RFC 1035 limits.

    Raises:
        DnsValidationError: empty label, label over 63 bytes, name over 255
            bytes or non-ASCII text
    """
    name = normalize_name(name)
    if not name:
        return []
    labels = []
    for label in name.split("."):
        try:
            raw = label.encode("ascii")
        except UnicodeEncodeError:
            raise DnsValidationError(f"non-ASCII label {label!r} in {name!r}")
        if not raw:
            raise DnsValidationError(f"empty label in {name!r}")
        if len(raw) > MAX_LABEL_LENGTH:
            raise DnsValidationError(
                f"label {label[:16]!r}... is {len(raw)} bytes, "
                f"limit is {MAX_LABEL_LENGTH}"
            )
        labels.append(raw)
    encoded_length = sum(len(raw) + 1 for raw in labels) + 1
    if encoded_length > MAX_NAME_LENGTH:
        raise DnsValidationError(
            f"name is {encoded_length} bytes encoded, limit is {MAX_NAME_LENGTH}"
        )
    return labels


@dataclass(frozen=True)
class DnsQuestion:
    """A single entry of the question section."""

    qname: str
    qtype: int = TYPE_A
    qclass: int = CLASS_IN

    def __post_init__(self) -> None:
        object.__setattr__(self, "qname", normalize_name(self.qname))
        name_labels(self.qname)
        for label, value in (("qtype", self.qtype), ("qclass", self.qclass)):
            if not 0 < value <= 0xFFFF:
                raise DnsValidationError(f"{label} must be in 1..65535, got {value}")


@dataclass(frozen=True)
class ResourceRecord:
    """A resource record with raw rdata and a typed view for A/AAAA."""

    name: str
    rtype: int
    rclass: int
    ttl: int
    rdata: bytes

    @property
    def address(self) -> Optional[Union[ipaddress.IPv4Address, ipaddress.IPv6Address]]:
        """Address carried by an A or AAAA record, otherwise ``None``."""
        if self.rtype == TYPE_A and len(self.rdata) == 4:
            return ipaddress.IPv4Address(self.rdata)
        if self.rtype == TYPE_AAAA and len(self.rdata) == 16:
            return ipaddress.IPv6Address(self.rdata)
        return None

    @classmethod
    def a_record(cls, name: str, address: str, ttl: int = 300) -> "ResourceRecord":
        """Build an IN A record."""
        return cls(
            name=normalize_name(name),
            rtype=TYPE_A,
            rclass=CLASS_IN,
            ttl=ttl,
            rdata=ipaddress.IPv4Address(address).packed,
        )


@dataclass(frozen=True)
class DnsMessage:
    """A decoded DNS message."""

    id: int
    qr: bool = False
    opcode: int = 0
    aa: bool = False
    tc: bool = False
    rd: bool = False
    ra: bool = False
    ad: bool = False
    cd: bool = False
    rcode: int = 0
    questions: Tuple[DnsQuestion, ...] = ()
    answers: Tuple[ResourceRecord, ...] = ()
    authorities: Tuple[ResourceRecord, ...] = ()
    additionals: Tuple[ResourceRecord, ...] = ()
    trailing_bytes: int = field(default=0, compare=False)

    @property
    def flags(self) -> int:
        """The 16-bit flags word of the header."""
        return (
            (int(self.qr) << 15)
            | ((self.opcode & 0xF) << 11)
            | (int(self.aa) << 10)
            | (int(self.tc) << 9)
            | (int(self.rd) << 8)
            | (int(self.ra) << 7)
            | (int(self.ad) << 5)
            | (int(self.cd) << 4)
            | (self.rcode & 0xF)
        )


def new_query_id() -> int:
    """Random 16-bit query ID."""
    return secrets.randbelow(0x10000)


class _NameWriter:
    """Accumulates wire bytes and compresses repeated name suffixes."""

    def __init__(self) -> None:
        self.buffer = bytearray()
        self._offsets: Dict[Tuple[bytes, ...], int] = {}

    def write(self, data: bytes) -> None:
        self.buffer += data

    def write_name(self, name: str) -> None:
        labels = name_labels(name)
        for index in range(len(labels)):
            suffix = tuple(label.lower() for label in labels[index:])
            pointer = self._offsets.get(suffix)
            if pointer is not None:
                self.buffer += struct.pack("!H", 0xC000 | pointer)
                return
            if len(self.buffer) <= MAX_POINTER_OFFSET:
                self._offsets[suffix] = len(self.buffer)
            self.buffer.append(len(labels[index]))
            self.buffer += labels[index]
        self.buffer.append(0)


def encode_query(
    question: DnsQuestion, id: int, recursion_desired: bool = True
) -> bytes:
    """
    Encode a single-question query.

    Args:
        question: The question to ask
        id: 16-bit query ID
        recursion_desired: Value of the RD flag

    Returns:
        Wireformat bytes with QDCOUNT=1 and no other records
    """
    if not 0 <= id <= 0xFFFF:
        raise DnsValidationError(f"query id must be 16-bit, got {id}")
    flags = 0x0100 if recursion_desired else 0
    writer = _NameWriter()
    writer.write(HEADER.pack(id, flags, 1, 0, 0, 0))
    writer.write_name(question.qname)
    writer.write(QUESTION_TAIL.pack(question.qtype, question.qclass))
    return bytes(writer.buffer)


def encode_message(message: DnsMessage) -> bytes:
    """Encode a full message, compressing names that repeat earlier suffixes."""
    writer = _NameWriter()
    writer.write(
        HEADER.pack(
            message.id,
            message.flags,
            len(message.questions),
            len(message.answers),
            len(message.authorities),
            len(message.additionals),
        )
    )
    for question in message.questions:
        writer.write_name(question.qname)
        writer.write(QUESTION_TAIL.pack(question.qtype, question.qclass))
    for record in (*message.answers, *message.authorities, *message.additionals):
        writer.write_name(record.name)
        writer.write(
            RECORD_TAIL.pack(record.rtype, record.rclass, record.ttl, len(record.rdata))
        )
        writer.write(record.rdata)
    return bytes(writer.buffer)


def _read_name(wire: bytes, offset: int) -> Tuple[str, int]:
    """Read a possibly compressed name; return it and the offset after it."""
    labels: List[str] = []
    position = offset
    resume_at: Optional[int] = None
    hops = 0
    encoded_length = 1
    while True:
        if position >= len(wire):
            raise DnsParseError("truncated name", position)
        length = wire[position]
        kind = length & 0xC0
        if kind == 0xC0:
            if position + 1 >= len(wire):
                raise DnsParseError("truncated compression pointer", position)
            hops += 1
            if hops > MAX_POINTER_HOPS:
                raise DnsParseError("compression loop", position)
            if resume_at is None:
                resume_at = position + 2
            position = ((length & 0x3F) << 8) | wire[position + 1]
            continue
        if kind:
            raise DnsParseError(f"unsupported label type 0x{length:02x}", position)
        position += 1
        if length == 0:
            break
        if position + length > len(wire):
            raise DnsParseError("truncated label", position - 1)
        encoded_length += length + 1
        if encoded_length > MAX_NAME_LENGTH:
            raise DnsParseError("name too long", offset)
        labels.append(wire[position:position + length].decode("latin-1"))
        position += length
    return ".".join(labels), resume_at if resume_at is not None else position


def _read_question(wire: bytes, offset: int) -> Tuple[DnsQuestion, int]:
    name, offset = _read_name(wire, offset)
    if offset + QUESTION_TAIL.size > len(wire):
        raise DnsParseError("truncated question", offset)
    qtype, qclass = QUESTION_TAIL.unpack_from(wire, offset)
    try:
        question = DnsQuestion(name, qtype, qclass)
    except DnsValidationError as exc:
        raise DnsParseError(f"invalid question: {exc}", offset)
    return question, offset + QUESTION_TAIL.size


def _read_record(wire: bytes, offset: int) -> Tuple[ResourceRecord, int]:
    name, offset = _read_name(wire, offset)
    if offset + RECORD_TAIL.size > len(wire):
        raise DnsParseError("truncated resource record", offset)
    rtype, rclass, ttl, rdlength = RECORD_TAIL.unpack_from(wire, offset)
    offset += RECORD_TAIL.size
    if offset + rdlength > len(wire):
        raise DnsParseError(f"rdata length {rdlength} exceeds message", offset)
    if rtype == TYPE_A and rdlength != 4:
        raise DnsParseError(f"A record rdata is {rdlength} bytes", offset)
    if rtype == TYPE_AAAA and rdlength != 16:
        raise DnsParseError(f"AAAA record rdata is {rdlength} bytes", offset)
    record = ResourceRecord(
        name, rtype, rclass, ttl, bytes(wire[offset:offset + rdlength])
    )
    return record, offset + rdlength


def _read_section(
    wire: bytes,
    offset: int,
    count: int,
    reader: Callable[[bytes, int], Tuple[T, int]],
    section: str,
) -> Tuple[List[T], int]:
    items: List[T] = []
    for index in range(count):
        if offset >= len(wire):
            raise DnsParseError(
                f"count mismatch: header declares {count} {section} records, "
                f"found {index}",
                offset,
            )
        item, offset = reader(wire, offset)
        items.append(item)
    return items, offset


def decode_message(wire: bytes) -> DnsMessage:
    """
    Decode a wireformat message.

    OPT pseudo-records are skipped. Extra bytes after the last declared
    record are tolerated and reported in ``trailing_bytes``.

    Raises:
        DnsParseError: truncated data, compression loop or count mismatch
    """
    if len(wire) < HEADER_SIZE:
        raise DnsParseError(
            f"message is {len(wire)} bytes, header needs {HEADER_SIZE}", 0
        )
    msg_id, flags, qdcount, ancount, nscount, arcount = HEADER.unpack_from(wire, 0)
    offset = HEADER_SIZE
    questions, offset = _read_section(wire, offset, qdcount, _read_question, "question")
    answers, offset = _read_section(wire, offset, ancount, _read_record, "answer")
    authorities, offset = _read_section(
        wire, offset, nscount, _read_record, "authority"
    )
    additionals, offset = _read_section(
        wire, offset, arcount, _read_record, "additional"
    )
    return DnsMessage(
        id=msg_id,
        qr=bool(flags & 0x8000),
        opcode=(flags >> 11) & 0xF,
        aa=bool(flags & 0x0400),
        tc=bool(flags & 0x0200),
        rd=bool(flags & 0x0100),
        ra=bool(flags & 0x0080),
        ad=bool(flags & 0x0020),
        cd=bool(flags & 0x0010),
        rcode=flags & 0xF,
        questions=tuple(questions),
        answers=tuple(answers),
        authorities=tuple(authorities),
        additionals=tuple(r for r in additionals if r.rtype != TYPE_OPT),
        trailing_bytes=len(wire) - offset,
    )


def build_response(
    query: DnsMessage,
    answers: Tuple[ResourceRecord, ...] = (),
    rcode: int = 0,
    msg_id: Optional[int] = None,
) -> DnsMessage:
    """Response to ``query`` echoing its question, with RA set."""
    return DnsMessage(
        id=query.id if msg_id is None else msg_id,
        qr=True,
        opcode=query.opcode,
        rd=query.rd,
        ra=True,
        cd=query.cd,
        rcode=rcode,
        questions=query.questions,
        answers=answers,
    )


def to_base64url(wire: bytes) -> str:
    """Unpadded base64url text (RFC 8484 GET parameter form)."""
    return base64.urlsafe_b64encode(wire).rstrip(b"=").decode("ascii")


def from_base64url(text: str) -> bytes:
    """
    Decode unpadded base64url text. Trailing ``=`` padding is tolerated.

    Raises:
        Base64UrlError: characters outside the alphabet or impossible length
    """
    stripped = text.rstrip("=")
    if not _BASE64URL_ALPHABET.match(stripped):
        raise Base64UrlError("invalid base64url character")
    if len(stripped) % 4 == 1:
        raise Base64UrlError(f"invalid base64url length {len(stripped)}")
    try:
        return base64.urlsafe_b64decode(stripped + "=" * (-len(stripped) % 4))
    except (binascii.Error, ValueError) as exc:
        raise Base64UrlError(str(exc))
