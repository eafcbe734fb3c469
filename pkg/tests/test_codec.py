import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from satkex import codec, handshake
from satkex.codec import (
    ExchangeType,
    Flags,
    Message,
    MessageHeader,
    OverheadModel,
    Payload,
    PayloadKind,
    check_mtu_safe,
    decode,
    encode,
    fragment,
    reassemble,
    wire_cost,
)
from satkex.crypto import resolve_suite
from satkex.errors import LengthMismatch, MissingFragment, DuplicateFragment, TruncatedMessage, UnknownPayloadKind

HDR = MessageHeader(b"I" * 8, b"R" * 8, ExchangeType.AUTH, 1, Flags.INITIATOR)

headers = st.builds(
    MessageHeader,
    st.binary(min_size=8, max_size=8),
    st.binary(min_size=8, max_size=8),
    st.sampled_from(list(ExchangeType)),
    st.integers(0, 2**32 - 1),
    st.sampled_from([Flags.NONE, Flags.INITIATOR, Flags.RESPONSE, Flags.INITIATOR | Flags.RESPONSE]),
)
payloads = st.builds(
    Payload,
    st.sampled_from([k for k in PayloadKind if k not in (PayloadKind.ENCRYPTED, PayloadKind.FRAGMENT)]),
    st.binary(max_size=300),
    st.booleans(),
)
messages = st.builds(Message, headers, st.lists(payloads, max_size=6).map(tuple))


def test_header_only_message_is_28_bytes():
    assert len(encode(Message(HDR))) == 28


def test_single_nonce_payload_size():
    m = Message(HDR, [Payload(PayloadKind.NONCE, bytes(32))])
    assert len(encode(m)) == 28 + 4 + 32 == m.size


def test_tb2_init_size_by_summation():
    suite = resolve_suite("TB2", "I")
    ci, _ = handshake.make_credentials(suite, random.Random(0))
    _, m = handshake.start(suite, ci, random.Random(0))
    assert [p.kind for p in m.payloads] == [PayloadKind.SA, PayloadKind.KE, PayloadKind.NONCE]
    assert len(encode(m)) == 28 + (4 + handshake.SA_BODY_BYTES) + (4 + 800) + (4 + 32)


@given(messages)
@settings(max_examples=300)
def test_round_trip(m):
    data = encode(m)
    out = decode(data)
    assert out == m
    assert out.header.length == len(data)


def test_truncated_and_length_mismatch():
    with pytest.raises(TruncatedMessage):
        decode(bytes(27))
    data = bytearray(encode(Message(HDR, [Payload(PayloadKind.NONCE, bytes(32))])))
    data[27] += 1
    with pytest.raises(LengthMismatch):
        decode(bytes(data))
    with pytest.raises(LengthMismatch):
        decode(bytes(data[:-1]))


def test_payload_length_past_end_is_truncation():
    data = bytearray(encode(Message(HDR, [Payload(PayloadKind.NONCE, bytes(8))])))
    data[28 + 3] = 200
    with pytest.raises(TruncatedMessage):
        decode(bytes(data))


def test_unknown_payload_kinds():
    known = Payload(PayloadKind.NONCE, b"n" * 4)
    first, body = codec.encode_payloads([known])
    # prepend an unknown kind 99 pointing at NONCE
    unknown = bytes([int(PayloadKind.NONCE), 0, 0, 6]) + b"xy"
    assert codec.decode_payloads(99, unknown + body) == [known]
    critical = bytes([int(PayloadKind.NONCE), codec.CRITICAL, 0, 6]) + b"xy"
    with pytest.raises(UnknownPayloadKind):
        codec.decode_payloads(99, critical + body)


def test_encrypted_inner_kind_round_trips():
    m = Message(HDR, [Payload(PayloadKind.ENCRYPTED, b"\x00" * 40, inner_kind=int(PayloadKind.ID))])
    assert decode(encode(m)) == m


def test_mtu_checks():
    suite = resolve_suite("TB2", "III")
    ci, _ = handshake.make_credentials(suite, random.Random(0))
    _, init = handshake.start(suite, ci, random.Random(0))
    assert check_mtu_safe(init, OverheadModel())
    big = Message(HDR, [Payload(PayloadKind.CERT, bytes(1500))])
    assert not check_mtu_safe(big, OverheadModel())


def test_lw2_iii_init_mtu_verdict_fixture():
    # regression fixture: concatenated ECP384 + ML-KEM-768 INIT fits a 1500-byte MTU
    suite = resolve_suite("LW2", "III")
    ci, _ = handshake.make_credentials(suite, random.Random(0))
    _, init = handshake.start(suite, ci, random.Random(0))
    assert init.size == 28 + (4 + 48) + (4 + 96 + 1184) + (4 + 32) == 1400
    assert check_mtu_safe(init, OverheadModel()) is True
    assert check_mtu_safe(init, OverheadModel(mtu=1427)) is False


def test_fragment_5000_byte_message():
    model = OverheadModel()
    body = bytes(5000 - 28 - 4)
    m = Message(HDR, [Payload(PayloadKind.ENCRYPTED, body, inner_kind=int(PayloadKind.ID))])
    assert m.size == 5000
    frags = fragment(m, model)
    # chain of 4968 bytes over 1436-byte fragment capacity
    assert codec.fragment_capacity(model) == 1436
    assert len(frags) == -(-(5000 - 28) // 1436) == 4
    assert all(check_mtu_safe(f, model) for f in frags)
    assert reassemble(frags) == m
    assert reassemble(list(reversed(frags))) == m
    with pytest.raises(MissingFragment):
        reassemble(frags[:2] + frags[3:])
    with pytest.raises(DuplicateFragment):
        reassemble(frags + frags[:1])


def test_safe_message_is_its_own_fragment():
    m = Message(HDR, [Payload(PayloadKind.NONCE, bytes(32))])
    assert fragment(m, OverheadModel()) == [m]
    assert reassemble([m]) == m


def test_init_is_never_fragmented():
    m = Message(MessageHeader(b"I" * 8, bytes(8), ExchangeType.INIT, 0), [Payload(PayloadKind.KE, bytes(3000))])
    with pytest.raises(ValueError):
        fragment(m, OverheadModel())


@given(st.lists(payloads, min_size=1, max_size=12), st.integers(300, 1500))
@settings(max_examples=150)
def test_fragment_round_trip_property(ps, mtu):
    model = OverheadModel(mtu=mtu)
    m = Message(HDR, ps)
    frags = fragment(m, model)
    assert all(check_mtu_safe(f, model) for f in frags)
    wire = [decode(encode(f)) for f in frags]
    assert reassemble(wire) == m


def test_wire_cost():
    assert wire_cost([], OverheadModel()) == 0
    m = Message(HDR, [Payload(PayloadKind.NONCE, bytes(32))])
    assert wire_cost([m], OverheadModel()) == 92
    assert wire_cost([m], OverheadModel(rohc_enabled=True)) == 67
    assert wire_cost([m], OverheadModel(), include_headers=False) == 64


def test_wire_cost_counts_fragment_headers():
    model = OverheadModel()
    m = Message(HDR, [Payload(PayloadKind.ENCRYPTED, bytes(4968))])
    frags = fragment(m, model)
    assert wire_cost([m], model) == sum(f.size + 28 for f in frags)
    assert wire_cost([m], model) == (5000 - 28) + 4 * (28 + 4 + 4) + 4 * 28


def test_lw3_handshake_costs_low_hundreds():
    suite = resolve_suite("LW3", "I")
    rng = random.Random(1)
    ci, cr = handshake.make_credentials(suite, rng)
    _, _, msgs = handshake.run_in_memory(suite, ci, cr, rng)
    no_hdr = wire_cost(msgs, OverheadModel(), include_headers=False)
    assert 100 <= no_hdr < 1000


def test_overhead_model_validation():
    with pytest.raises(ValueError):
        OverheadModel(rohc_bytes=30)
    with pytest.raises(ValueError):
        OverheadModel(mtu=50)


def test_hexdump_round_trip(tmp_path):
    data = bytes(range(256)) * 3
    codec.write_hexdump(tmp_path / "m.hex", data, variant="TB1", index=0)
    meta, back = codec.read_hexdump(tmp_path / "m.hex")
    assert back == data
    assert meta == {"variant": "TB1", "index": "0"}
