"""Wire format for IKE-style messages.

Layout follows IKEv2: a 28-byte header (two 8-byte SPIs, next payload,
version, exchange type, flags, message id, total length) followed by a chain
of payloads, each with a 4-byte generic header (next kind, flags, length).
The next-kind field of the last payload carries the first inner kind for
ENCRYPTED and FRAGMENT payloads, as in IKEv2.
"""
from __future__ import annotations

import enum
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

from .errors import (
    DuplicateFragment,
    LengthMismatch,
    MissingFragment,
    PayloadTooLarge,
    TruncatedMessage,
    UnknownPayloadKind,
)

HEADER_BYTES = 28
PAYLOAD_HEADER_BYTES = 4
FRAGMENT_INFO_BYTES = 4
MAX_BODY_BYTES = 2**16 - 5
IKE_VERSION = 0x20
CRITICAL = 0x80

_HEADER = struct.Struct(">8s8sBBBBII")
_GENERIC = struct.Struct(">BBH")
_FRAG_INFO = struct.Struct(">HH")


class ExchangeType(enum.IntEnum):
    INIT = 34
    AUTH = 35
    INFORMATIONAL = 37
    INTERMEDIATE = 43
    LW3_EXCH = 240


class Flags(enum.IntFlag):
    NONE = 0
    INITIATOR = 0x08
    RESPONSE = 0x20


class PayloadKind(enum.IntEnum):
    SA = 33
    KE = 34
    ID = 35
    CERT = 37
    CERTREQ = 38
    AUTH = 39
    NONCE = 40
    TS = 44
    ENCRYPTED = 46
    FRAGMENT = 53
    KEM_CT = 240
    ENC_NONCE = 241


@dataclass(frozen=True)
class MessageHeader:
    initiator_spi: bytes
    responder_spi: bytes
    exchange_type: ExchangeType
    message_id: int
    flags: Flags = Flags.NONE
    # patched by encode(); not part of structural equality
    length: int = field(default=0, compare=False)


@dataclass(frozen=True)
class Payload:
    kind: PayloadKind
    body: bytes
    critical: bool = False
    inner_kind: int = 0

    @property
    def size(self) -> int:
        return PAYLOAD_HEADER_BYTES + len(self.body)


@dataclass(frozen=True)
class Message:
    header: MessageHeader
    payloads: tuple[Payload, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "payloads", tuple(self.payloads))

    @property
    def size(self) -> int:
        return HEADER_BYTES + sum(p.size for p in self.payloads)

    def find(self, kind: PayloadKind) -> list[Payload]:
        return [p for p in self.payloads if p.kind is kind]

    def first(self, kind: PayloadKind) -> Payload | None:
        for p in self.payloads:
            if p.kind is kind:
                return p
        return None


@dataclass(frozen=True)
class OverheadModel:
    ip_udp_bytes: int = 28
    rohc_bytes: int = 3
    rohc_enabled: bool = False
    mtu: int = 1500

    def __post_init__(self):
        if not self.rohc_bytes < self.ip_udp_bytes:
            raise ValueError("rohc_bytes must be smaller than ip_udp_bytes")
        if not self.mtu > self.ip_udp_bytes + HEADER_BYTES:
            raise ValueError("mtu too small for an IKE header")

    @property
    def datagram_header_bytes(self) -> int:
        return self.rohc_bytes if self.rohc_enabled else self.ip_udp_bytes


def encode_payloads(payloads) -> tuple[int, bytes]:
    """Encode a payload chain; returns (first kind, bytes)."""
    out = bytearray()
    payloads = list(payloads)
    for i, p in enumerate(payloads):
        if len(p.body) > MAX_BODY_BYTES:
            raise PayloadTooLarge(f"{p.kind.name} body of {len(p.body)} bytes exceeds {MAX_BODY_BYTES}")
        last = i == len(payloads) - 1
        if p.inner_kind and not last:
            raise ValueError("inner_kind is only meaningful on the last payload")
        nxt = p.inner_kind if last else int(payloads[i + 1].kind)
        out += _GENERIC.pack(nxt, CRITICAL if p.critical else 0, p.size)
        out += p.body
    first = int(payloads[0].kind) if payloads else 0
    return first, bytes(out)


def decode_payloads(first_kind: int, data: bytes) -> list[Payload]:
    payloads = []
    kind = first_kind
    pos = 0
    while kind:
        if pos + PAYLOAD_HEADER_BYTES > len(data):
            raise TruncatedMessage("payload chain ends inside a generic header")
        nxt, pflags, plen = _GENERIC.unpack_from(data, pos)
        if plen < PAYLOAD_HEADER_BYTES:
            raise LengthMismatch(f"payload length field {plen} below minimum")
        if pos + plen > len(data):
            raise TruncatedMessage("payload body runs past end of data")
        body = data[pos + PAYLOAD_HEADER_BYTES : pos + plen]
        pos += plen
        critical = bool(pflags & CRITICAL)
        try:
            known = PayloadKind(kind)
        except ValueError:
            if critical:
                raise UnknownPayloadKind(f"unknown critical payload kind {kind}") from None
            kind = nxt
            continue
        payloads.append(Payload(known, body, critical))
        kind = nxt
        if pos == len(data) and kind:
            # last payload: next-kind points inside it (ENCRYPTED/FRAGMENT)
            payloads[-1] = replace(payloads[-1], inner_kind=kind)
            break
    if pos != len(data):
        raise LengthMismatch(f"{len(data) - pos} trailing bytes after payload chain")
    return payloads


def encode(message: Message) -> bytes:
    first, body = encode_payloads(message.payloads)
    h = message.header
    total = HEADER_BYTES + len(body)
    head = _HEADER.pack(
        h.initiator_spi, h.responder_spi, first, IKE_VERSION, int(h.exchange_type), int(h.flags),
        h.message_id, total,
    )
    return head + body


def decode(data: bytes) -> Message:
    if len(data) < HEADER_BYTES:
        raise TruncatedMessage(f"{len(data)} bytes is shorter than the {HEADER_BYTES}-byte header")
    spi_i, spi_r, first, _version, xchg, flags, mid, total = _HEADER.unpack_from(data)
    if total != len(data):
        raise LengthMismatch(f"header says {total} bytes, got {len(data)}")
    header = MessageHeader(spi_i, spi_r, ExchangeType(xchg), mid, Flags(flags), total)
    return Message(header, decode_payloads(first, data[HEADER_BYTES:]))


def check_mtu_safe(message: Message, model: OverheadModel) -> bool:
    # MTU is an IP-level limit, so the uncompressed header always counts.
    return message.size + model.ip_udp_bytes <= model.mtu


def fragment_capacity(model: OverheadModel) -> int:
    return model.mtu - model.ip_udp_bytes - HEADER_BYTES - PAYLOAD_HEADER_BYTES - FRAGMENT_INFO_BYTES


def fragment(message: Message, model: OverheadModel) -> list[Message]:
    """Split a message into MTU-safe FRAGMENT messages (RFC 7383 style)."""
    if check_mtu_safe(message, model):
        return [message]
    if message.header.exchange_type is ExchangeType.INIT:
        raise ValueError("INIT messages cannot be fragmented")
    first, chain = encode_payloads(message.payloads)
    cap = fragment_capacity(model)
    chunks = [chain[i : i + cap] for i in range(0, len(chain), cap)]
    total = len(chunks)
    return [
        Message(
            message.header,
            (Payload(PayloadKind.FRAGMENT, _FRAG_INFO.pack(n, total) + chunk, inner_kind=first if n == 1 else 0),),
        )
        for n, chunk in enumerate(chunks, start=1)
    ]


def is_fragment(message: Message) -> bool:
    return len(message.payloads) == 1 and message.payloads[0].kind is PayloadKind.FRAGMENT


def fragment_info(message: Message) -> tuple[int, int]:
    return _FRAG_INFO.unpack_from(message.payloads[0].body)


def reassemble(fragments) -> Message:
    fragments = list(fragments)
    if len(fragments) == 1 and not is_fragment(fragments[0]):
        return fragments[0]
    if not fragments:
        raise MissingFragment("no fragments")
    seen: dict[int, Message] = {}
    expected = None
    for f in fragments:
        num, total = fragment_info(f)
        if expected is None:
            expected = total
        elif total != expected:
            raise MissingFragment(f"inconsistent fragment totals {total} != {expected}")
        if num in seen:
            raise DuplicateFragment(f"fragment {num} received twice")
        seen[num] = f
    missing = sorted(set(range(1, expected + 1)) - set(seen))
    if missing:
        raise MissingFragment(f"missing fragments {missing} of {expected}")
    first = seen[1].payloads[0].inner_kind
    chain = b"".join(seen[n].payloads[0].body[FRAGMENT_INFO_BYTES:] for n in range(1, expected + 1))
    return Message(seen[1].header, decode_payloads(first, chain))


def datagrams(message: Message, model: OverheadModel) -> list[Message]:
    if message.header.exchange_type is ExchangeType.INIT:
        return [message]
    return fragment(message, model)


def wire_cost(messages, model: OverheadModel, include_headers: bool = True) -> int:
    hdr = model.datagram_header_bytes if include_headers else 0
    return sum(d.size + hdr for m in messages for d in datagrams(m, model))


# --- hex-dump fixtures ---------------------------------------------------------


def write_hexdump(path, data: bytes, width: int = 32, **meta) -> None:
    lines = ["# " + " ".join(f"{k}={v}" for k, v in meta.items())]
    lines += [data[i : i + width].hex() for i in range(0, len(data), width)]
    Path(path).write_text("\n".join(lines) + "\n")


def read_hexdump(path) -> tuple[dict, bytes]:
    first, *rest = Path(path).read_text().splitlines()
    meta = dict(tok.split("=", 1) for tok in first.lstrip("# ").split())
    return meta, bytes.fromhex("".join(line.strip() for line in rest))
