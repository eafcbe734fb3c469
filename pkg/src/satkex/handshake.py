"""Initiator/responder state machines for the five handshake variants.

Exchange sequences::

    TB1, LW1   INIT -> INTERMEDIATE -> AUTH   (classical KE in INIT, KEM in INTERMEDIATE)
    TB2        INIT -> AUTH                   (KEM only, PSK authentication)
    LW2        INIT -> AUTH                   (classical || KEM concatenated in one KE payload)
    LW3        one exchange                   (static-key KEM both ways, implicit authentication)

``start`` creates the initiator and its first message, ``accept`` creates a
responder, and ``step`` feeds one incoming message to a session and returns
the reply (or ``None`` once the session is established).
"""
from __future__ import annotations

import enum
import hmac
import random
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from . import codec
from .codec import ExchangeType, Flags, Message, MessageHeader, OverheadModel, Payload, PayloadKind
from .crypto import primitives as cp
from .crypto.primitives import KeyPair, Provenance, SharedSecret, TOY
from .crypto.registry import Algorithm, AlgorithmSpec
from .crypto.suites import AuthMode, SuiteConfig, Variant
from .errors import (
    AuthenticationFailure,
    AuthFailure,
    CodecError,
    CredentialMismatch,
    DecapsulationFailure,
    DecodeFailure,
    HandshakeError,
    InitExceedsMtu,
    MalformedCiphertext,
    MalformedPeerPublic,
    MissingSecret,
    NonceDecryptFailure,
    UnexpectedExchange,
)

NONCE_BYTES = 32
IDENTITY_BYTES = 16
SA_BODY_BYTES = 48
TS_BODY = bytes.fromhex("0700000800000000")
IV_BYTES = 8
SALT_BYTES = 4
KEY_PAD = b"Key Pad for IKEv2"
LW3_NONCE_LABEL = b"lw3-nonce-enc"
DEFAULT_TIMEOUT_MS = 30_000.0


class PeerRole(str, enum.Enum):
    INITIATOR = "INITIATOR"
    RESPONDER = "RESPONDER"


class Phase(str, enum.Enum):
    IDLE = "IDLE"
    WAIT_INIT = "WAIT-INIT"
    WAIT_INTERMEDIATE = "WAIT-INTERMEDIATE"
    WAIT_AUTH = "WAIT-AUTH"
    ESTABLISHED = "ESTABLISHED"
    FAILED = "FAILED"


@dataclass(frozen=True)
class KeySchedule:
    skeyseed: bytes
    sk_d: bytes
    sk_ai: bytes
    sk_ar: bytes
    sk_ei: bytes
    sk_er: bytes
    sk_pi: bytes
    sk_pr: bytes


@dataclass
class AuthCredentials:
    """Authentication material held by one peer.

    Peer verification material is pinned here: raw public keys (TB1, LW2),
    an opaque pre-shared certificate (LW1), a PSK (TB2) or the peer's static
    KEM public key (LW3).
    """

    mode: AuthMode
    identity: bytes
    peer_identity: bytes
    sig_classical: Optional[KeyPair] = None
    sig_pq: Optional[KeyPair] = None
    peer_sig_classical: Optional[bytes] = None
    peer_sig_pq: Optional[bytes] = None
    peer_certificate: Optional[bytes] = None
    psk: Optional[bytes] = None
    ppk: Optional[bytes] = None
    kem_static: Optional[KeyPair] = None
    peer_kem_public: Optional[bytes] = None


@dataclass
class SessionState:
    role: PeerRole
    suite: SuiteConfig
    creds: AuthCredentials
    provider: object = TOY
    overhead: OverheadModel = field(default_factory=OverheadModel)
    phase: Phase = Phase.IDLE
    spi_i: bytes = bytes(8)
    spi_r: bytes = bytes(8)
    nonce_local: bytes = b""
    nonce_peer: bytes = b""
    ephemeral_keys: list = field(default_factory=list)
    peer_publics: dict = field(default_factory=dict)
    secrets: list = field(default_factory=list)
    schedule: Optional[KeySchedule] = None
    transcript: list = field(default_factory=list)
    first_sent: bytes = b""
    first_received: bytes = b""
    error: Optional[str] = None

    @property
    def is_initiator(self) -> bool:
        return self.role is PeerRole.INITIATOR

    @property
    def nonce_i(self) -> bytes:
        return self.nonce_local if self.is_initiator else self.nonce_peer

    @property
    def nonce_r(self) -> bytes:
        return self.nonce_peer if self.is_initiator else self.nonce_local


# --- credentials --------------------------------------------------------------


def make_certificate(public: bytes, alg: Algorithm) -> bytes:
    """Opaque pre-shared certificate blob wrapping a PQ public key."""
    name = alg.value.encode()
    return b"OOBCERT\x00" + struct.pack(">H", len(name)) + name + public


def certificate_public_key(blob: bytes, spec: AlgorithmSpec) -> bytes:
    return blob[-spec.public_key_bytes :]


def make_credentials(
    suite: SuiteConfig,
    rng: random.Random,
    provider=TOY,
    ppk: bool = False,
    static_keys: tuple[KeyPair, KeyPair] | None = None,
) -> tuple[AuthCredentials, AuthCredentials]:
    """Generate a consistent (initiator, responder) credential pair.

    ``static_keys`` lets LW3 callers reuse pre-generated static KEM pairs,
    which is worthwhile for Classic McEliece.
    """
    id_i, id_r = rng.randbytes(IDENTITY_BYTES), rng.randbytes(IDENTITY_BYTES)
    ci = AuthCredentials(suite.auth_mode, id_i, id_r)
    cr = AuthCredentials(suite.auth_mode, id_r, id_i)
    mode = suite.auth_mode
    if mode in (AuthMode.RAW_PK_SIG, AuthMode.HYBRID_SIG):
        ki = cp.sig_keygen(suite.sig_classical, rng, provider)
        kr = cp.sig_keygen(suite.sig_classical, rng, provider)
        ci.sig_classical, cr.sig_classical = ki, kr
        ci.peer_sig_classical, cr.peer_sig_classical = kr.public, ki.public
    if mode in (AuthMode.PQ_CERT_SIG, AuthMode.HYBRID_SIG):
        ki = cp.sig_keygen(suite.sig_pq, rng, provider).as_static()
        kr = cp.sig_keygen(suite.sig_pq, rng, provider).as_static()
        ci.sig_pq, cr.sig_pq = ki, kr
        if mode is AuthMode.PQ_CERT_SIG:
            ci.peer_certificate = make_certificate(kr.public, kr.algorithm)
            cr.peer_certificate = make_certificate(ki.public, ki.algorithm)
        else:
            ci.peer_sig_pq, cr.peer_sig_pq = kr.public, ki.public
    if mode is AuthMode.PSK:
        ci.psk = cr.psk = rng.randbytes(32)
    if ppk:
        ci.ppk = cr.ppk = rng.randbytes(32)
    if mode is AuthMode.IMPLICIT_KEM:
        if static_keys is None:
            static_keys = (
                cp.kem_keygen(suite.kem, rng, provider).as_static(),
                cp.kem_keygen(suite.kem, rng, provider).as_static(),
            )
        ki, kr = static_keys
        ci.kem_static, cr.kem_static = ki, kr
        ci.peer_kem_public, cr.peer_kem_public = kr.public, ki.public
    return ci, cr


def check_credentials(suite: SuiteConfig, creds: AuthCredentials) -> None:
    mode = suite.auth_mode
    if creds.mode is not mode:
        raise CredentialMismatch(f"credentials are {creds.mode.value}, suite needs {mode.value}")
    need = {
        AuthMode.RAW_PK_SIG: ("sig_classical", "peer_sig_classical"),
        AuthMode.PSK: ("psk",),
        AuthMode.PQ_CERT_SIG: ("sig_pq", "peer_certificate"),
        AuthMode.HYBRID_SIG: ("sig_classical", "sig_pq", "peer_sig_classical", "peer_sig_pq"),
        AuthMode.IMPLICIT_KEM: ("kem_static", "peer_kem_public"),
    }[mode]
    for name in need:
        if getattr(creds, name) is None:
            raise CredentialMismatch(f"{mode.value} requires {name}")
    for kp, spec in ((creds.sig_classical, suite.sig_classical), (creds.sig_pq, suite.sig_pq),
                     (creds.kem_static, suite.kem if mode is AuthMode.IMPLICIT_KEM else None)):
        if kp is not None and spec is not None and kp.algorithm is not spec.id:
            raise CredentialMismatch(f"{kp.algorithm.value} key given where {spec.id.value} is needed")
    if mode in (AuthMode.PQ_CERT_SIG, AuthMode.IMPLICIT_KEM):
        static = creds.sig_pq if mode is AuthMode.PQ_CERT_SIG else creds.kem_static
        if static.provenance is not Provenance.STATIC_OOB:
            raise CredentialMismatch(f"{mode.value} keys must be out-of-band static keys")
    if len(creds.identity) != IDENTITY_BYTES or len(creds.peer_identity) != IDENTITY_BYTES:
        raise CredentialMismatch(f"identities must be {IDENTITY_BYTES} bytes")


# --- key schedule ---------------------------------------------------------------


def _expand(suite: SuiteConfig, skeyseed: bytes, seed_data: bytes, ppk: bytes | None) -> KeySchedule:
    prf_len = suite.prf.output_bytes
    enc_len = suite.aead.key_bytes + SALT_BYTES
    # AEAD suites carry no separate integrity keys
    integ_len = 0
    sizes = [prf_len, integ_len, integ_len, enc_len, enc_len, prf_len, prf_len]
    stream = cp.prf_plus(skeyseed, seed_data, sum(sizes), suite.prf)
    keys, pos = [], 0
    for n in sizes:
        keys.append(stream[pos : pos + n])
        pos += n
    sk_d, sk_ai, sk_ar, sk_ei, sk_er, sk_pi, sk_pr = keys
    if ppk is not None:
        sk_d = cp.prf_plus(ppk, sk_d, prf_len, suite.prf)
        sk_pi = cp.prf_plus(ppk, sk_pi, prf_len, suite.prf)
        sk_pr = cp.prf_plus(ppk, sk_pr, prf_len, suite.prf)
    return KeySchedule(skeyseed, sk_d, sk_ai, sk_ar, sk_ei, sk_er, sk_pi, sk_pr)


def compute_schedule(
    suite: SuiteConfig,
    secrets: list[SharedSecret],
    nonce_i: bytes,
    nonce_r: bytes,
    spi_i: bytes,
    spi_r: bytes,
    ppk: bytes | None = None,
) -> KeySchedule:
    """Pure key-schedule derivation from the exchanged secrets.

    * LW3: ``SKEYSEED = prf(n_A | n_B, k_A | k_B)`` with initiator-first order.
    * TB2, LW2: ``SKEYSEED = prf(Ni | Nr, combine(secrets))``.
    * TB1, LW1: the first secret seeds the schedule, each later secret
      re-keys it as ``SKEYSEED' = prf(SK_d, ss | Ni | Nr)``.

    The PPK (TB2 only) is folded into SK_d, SK_pi and SK_pr.
    """
    if not secrets or not nonce_i or not nonce_r:
        raise MissingSecret("schedule needs at least one secret and both nonces")
    nonces = nonce_i + nonce_r
    seed_data = nonces + spi_i + spi_r
    variant = suite.variant
    if variant is Variant.LW3:
        if len(secrets) != 2:
            raise MissingSecret("LW3 needs both encapsulated secrets")
        skeyseed = cp.prf(nonces, secrets[0].data + secrets[1].data, suite.prf)
        return _expand(suite, skeyseed, seed_data, None)
    if variant in (Variant.TB2, Variant.LW2):
        expected = 1 if variant is Variant.TB2 else 2
        if len(secrets) != expected:
            raise MissingSecret(f"{variant.value} needs {expected} secrets, have {len(secrets)}")
        skeyseed = cp.prf(nonces, cp.combine_secrets(secrets).data, suite.prf)
        return _expand(suite, skeyseed, seed_data, ppk if variant is Variant.TB2 else None)
    schedule = _expand(suite, cp.prf(nonces, secrets[0].data, suite.prf), seed_data, None)
    for ss in secrets[1:]:
        skeyseed = cp.prf(schedule.sk_d, ss.data + nonces, suite.prf)
        schedule = _expand(suite, skeyseed, seed_data, None)
    return schedule


def derive_schedule(state: SessionState) -> KeySchedule:
    return compute_schedule(
        state.suite, state.secrets, state.nonce_i, state.nonce_r, state.spi_i, state.spi_r,
        state.creds.ppk,
    )


# --- payload bodies ------------------------------------------------------------

_TRANSFORM_IDS = {
    Algorithm.AES_128_GCM: 20, Algorithm.AES_192_GCM: 20,
    Algorithm.HMAC_SHA_256: 5, Algorithm.HMAC_SHA_384: 6,
    Algorithm.X25519: 31, Algorithm.ECP384: 20,
    Algorithm.ML_KEM_512: 35, Algorithm.ML_KEM_768: 36,
    Algorithm.MCELIECE_348864: 1024, Algorithm.MCELIECE_460896: 1025,
}
_AUTH_IDS = {m: i for i, m in enumerate(AuthMode, start=1)}


def sa_body(suite: SuiteConfig, child: bool = False) -> bytes:
    """Compact single-proposal SA: 8-byte proposal header + five 8-byte transforms."""

    def tid(spec):
        return _TRANSFORM_IDS[spec.id] if spec is not None else 0

    transforms = [
        (1, tid(suite.aead), suite.aead.key_bytes * 8),
        (2, tid(suite.prf), 0),
        (4, tid(suite.kex) if suite.kex else tid(suite.kem), 0),
        (6, tid(suite.kem) if suite.kex else 0, 0),
        (241, _AUTH_IDS[suite.auth_mode], 0),
    ]
    protocol = 3 if child else 1
    out = struct.pack(">BBHBBBB", 0, 0, SA_BODY_BYTES, 1, protocol, 0, len(transforms))
    for i, (ttype, ident, attr) in enumerate(transforms):
        more = 3 if i < len(transforms) - 1 else 0
        out += struct.pack(">BBHBBH", more, 0, 8, ttype, ident & 0xFF, attr or ident)
    assert len(out) == SA_BODY_BYTES
    return out


def _split(body: bytes, sizes: list[int], what: str) -> list[bytes]:
    if len(body) != sum(sizes):
        raise DecodeFailure(f"{what}: expected {sum(sizes)} bytes, got {len(body)}")
    parts, pos = [], 0
    for n in sizes:
        parts.append(body[pos : pos + n])
        pos += n
    return parts


# --- SK{} payload ---------------------------------------------------------------


def _aad(header: MessageHeader) -> bytes:
    return header.initiator_spi + header.responder_spi + struct.pack(
        ">BBI", int(header.exchange_type), int(header.flags), header.message_id
    )


def _sk_key(state: SessionState, sending: bool) -> bytes:
    use_i = state.is_initiator == sending
    return state.schedule.sk_ei if use_i else state.schedule.sk_er


def seal_payloads(state: SessionState, header: MessageHeader, inner: list[Payload], rng) -> Payload:
    first, plaintext = codec.encode_payloads(inner)
    key_material = _sk_key(state, sending=True)
    klen = state.suite.aead.key_bytes
    iv = rng.randbytes(IV_BYTES)
    ct = cp.aead_seal(key_material[:klen], key_material[klen:] + iv, _aad(header), plaintext, state.suite.aead)
    return Payload(PayloadKind.ENCRYPTED, iv + ct, inner_kind=first)


def open_payloads(state: SessionState, message: Message) -> list[Payload]:
    sk = message.first(PayloadKind.ENCRYPTED)
    if sk is None:
        raise DecodeFailure("expected an ENCRYPTED payload")
    key_material = _sk_key(state, sending=False)
    klen = state.suite.aead.key_bytes
    iv, ct = sk.body[:IV_BYTES], sk.body[IV_BYTES:]
    try:
        plaintext = cp.aead_open(
            key_material[:klen], key_material[klen:] + iv, _aad(message.header), ct, state.suite.aead
        )
        return codec.decode_payloads(sk.inner_kind, plaintext)
    except (AuthenticationFailure, CodecError) as exc:
        raise DecodeFailure(f"SK payload rejected: {exc}") from None


# --- authentication -----------------------------------------------------------


def _signed_octets(state: SessionState, signer_is_local: bool) -> bytes:
    s = state.schedule
    if signer_is_local:
        first, peer_nonce, identity = state.first_sent, state.nonce_peer, state.creds.identity
        local_is_i = state.is_initiator
    else:
        first, peer_nonce, identity = state.first_received, state.nonce_local, state.creds.peer_identity
        local_is_i = not state.is_initiator
    sk_p = s.sk_pi if local_is_i else s.sk_pr
    return first + peer_nonce + cp.prf(sk_p, identity, state.suite.prf)


def _psk_auth(state: SessionState, octets: bytes) -> bytes:
    prf = state.suite.prf
    return cp.prf(cp.prf(state.creds.psk, KEY_PAD, prf), octets, prf)


def build_auth_payload(state: SessionState, creds: AuthCredentials) -> Payload:
    suite, provider = state.suite, state.provider
    octets = _signed_octets(state, signer_is_local=True)
    mode = suite.auth_mode
    if mode is AuthMode.RAW_PK_SIG:
        data = cp.sign(octets, creds.sig_classical, suite.sig_classical, provider)
    elif mode is AuthMode.PQ_CERT_SIG:
        data = cp.sign(octets, creds.sig_pq, suite.sig_pq, provider)
    elif mode is AuthMode.HYBRID_SIG:
        data = cp.sign(octets, creds.sig_classical, suite.sig_classical, provider) + cp.sign(
            octets, creds.sig_pq, suite.sig_pq, provider
        )
    elif mode is AuthMode.PSK:
        data = _psk_auth(state, octets)
    else:
        raise UnexpectedExchange("implicit authentication has no AUTH payload")
    return Payload(PayloadKind.AUTH, data)


def verify_auth_payload(state: SessionState, creds: AuthCredentials, payload: Payload) -> bool:
    suite, provider = state.suite, state.provider
    octets = _signed_octets(state, signer_is_local=False)
    mode = suite.auth_mode
    data = payload.body
    if mode is AuthMode.RAW_PK_SIG:
        return cp.verify(octets, data, creds.peer_sig_classical, suite.sig_classical, provider)
    if mode is AuthMode.PQ_CERT_SIG:
        public = certificate_public_key(creds.peer_certificate, suite.sig_pq)
        return cp.verify(octets, data, public, suite.sig_pq, provider)
    if mode is AuthMode.HYBRID_SIG:
        n = suite.sig_classical.ciphertext_or_sig_bytes
        classical_ok = cp.verify(octets, data[:n], creds.peer_sig_classical, suite.sig_classical, provider)
        pq_ok = cp.verify(octets, data[n:], creds.peer_sig_pq, suite.sig_pq, provider)
        return classical_ok and pq_ok
    if mode is AuthMode.PSK:
        return hmac.compare_digest(_psk_auth(state, octets), data)
    return False


# --- message construction -------------------------------------------------------


def _header(state: SessionState, xchg: ExchangeType, mid: int, response: bool) -> MessageHeader:
    flags = Flags.INITIATOR if state.is_initiator else Flags.NONE
    if response:
        flags |= Flags.RESPONSE
    return MessageHeader(state.spi_i, state.spi_r, xchg, mid, flags)


def _record_out(state: SessionState, message: Message) -> Message:
    data = codec.encode(message)
    if not state.first_sent:
        state.first_sent = data
    state.transcript.append(data)
    return message


def _record_in(state: SessionState, message: Message) -> None:
    data = codec.encode(message)
    if not state.first_received:
        state.first_received = data
    state.transcript.append(data)


def _require_mtu(state: SessionState, message: Message) -> None:
    if not codec.check_mtu_safe(message, state.overhead):
        raise InitExceedsMtu(
            f"{state.suite.variant.value}-{state.suite.level.value} first-exchange message is "
            f"{message.size} + {state.overhead.ip_udp_bytes} bytes, mtu {state.overhead.mtu}"
        )


def _init_ke_request(state: SessionState, rng) -> bytes:
    suite, provider = state.suite, state.provider
    parts = []
    if suite.kex is not None:
        kp = cp.kex_generate(suite.kex, rng, provider)
        state.ephemeral_keys.append(kp)
        parts.append(kp.public)
    if suite.variant in (Variant.TB2, Variant.LW2):
        kp = cp.kem_keygen(suite.kem, rng, provider)
        state.ephemeral_keys.append(kp)
        parts.append(kp.public)
    return b"".join(parts)


def _auth_inner(state: SessionState) -> list[Payload]:
    creds = state.creds
    inner = [Payload(PayloadKind.ID, creds.identity)]
    if state.suite.auth_mode is AuthMode.RAW_PK_SIG:
        inner.append(Payload(PayloadKind.CERT, creds.sig_classical.public))
    inner.append(build_auth_payload(state, creds))
    inner += [
        Payload(PayloadKind.SA, sa_body(state.suite, child=True)),
        Payload(PayloadKind.TS, TS_BODY),
        Payload(PayloadKind.TS, TS_BODY),
    ]
    return inner


def _lw3_aead_key(state: SessionState, k: SharedSecret) -> bytes:
    return cp.prf_plus(k.data, LW3_NONCE_LABEL, state.suite.aead.key_bytes, state.suite.prf)


def _lw3_seal_nonce(state: SessionState, k: SharedSecret, nonce: bytes) -> bytes:
    # one-time key per session, so a fixed all-zero AEAD nonce is safe
    return cp.aead_seal(_lw3_aead_key(state, k), bytes(12), b"", nonce, state.suite.aead)


def _lw3_open_nonce(state: SessionState, k: SharedSecret, x: bytes) -> bytes:
    try:
        return cp.aead_open(_lw3_aead_key(state, k), bytes(12), b"", x, state.suite.aead)
    except AuthenticationFailure:
        raise NonceDecryptFailure("peer nonce did not decrypt: implicit authentication failed") from None


def _lw3_encapsulate(state: SessionState, rng) -> tuple[bytes, SharedSecret, bytes]:
    ct, k = cp.kem_encap(state.creds.peer_kem_public, state.suite.kem, rng, state.provider)
    state.nonce_local = rng.randbytes(NONCE_BYTES)
    return ct, k, _lw3_seal_nonce(state, k, state.nonce_local)


def _lw3_decapsulate(state: SessionState, message: Message) -> SharedSecret:
    ct_p, x_p = message.first(PayloadKind.KEM_CT), message.first(PayloadKind.ENC_NONCE)
    if ct_p is None or x_p is None:
        raise DecodeFailure("LW3 message needs KEM-CT and ENC-NONCE payloads")
    try:
        k = cp.kem_decap(ct_p.body, state.creds.kem_static, state.provider)
    except MalformedCiphertext as exc:
        raise DecapsulationFailure(str(exc)) from None
    state.nonce_peer = _lw3_open_nonce(state, k, x_p.body)
    return k


# --- public API -------------------------------------------------------------------


def start(
    suite: SuiteConfig,
    creds: AuthCredentials,
    rng: random.Random,
    provider=TOY,
    overhead: OverheadModel | None = None,
) -> tuple[SessionState, Message]:
    """Create an initiator session and its first message."""
    check_credentials(suite, creds)
    state = SessionState(PeerRole.INITIATOR, suite, creds, provider, overhead or OverheadModel())
    state.spi_i = rng.randbytes(8)
    if suite.variant is Variant.LW3:
        ct, k, x = _lw3_encapsulate(state, rng)
        state.secrets.append(k)
        msg = Message(
            _header(state, ExchangeType.LW3_EXCH, 0, response=False),
            [
                Payload(PayloadKind.ID, creds.identity),
                Payload(PayloadKind.KEM_CT, ct),
                Payload(PayloadKind.ENC_NONCE, x),
            ],
        )
    else:
        state.nonce_local = rng.randbytes(NONCE_BYTES)
        msg = Message(
            _header(state, ExchangeType.INIT, 0, response=False),
            [
                Payload(PayloadKind.SA, sa_body(suite)),
                Payload(PayloadKind.KE, _init_ke_request(state, rng)),
                Payload(PayloadKind.NONCE, state.nonce_local),
            ],
        )
    _require_mtu(state, msg)
    state.phase = Phase.WAIT_INIT
    return state, _record_out(state, msg)


def accept(
    suite: SuiteConfig,
    creds: AuthCredentials,
    provider=TOY,
    overhead: OverheadModel | None = None,
) -> SessionState:
    """Create a responder session waiting for the first message."""
    check_credentials(suite, creds)
    return SessionState(
        PeerRole.RESPONDER, suite, creds, provider, overhead or OverheadModel(), phase=Phase.WAIT_INIT
    )


def _expected(state: SessionState) -> tuple[ExchangeType, int]:
    suite = state.suite
    if state.phase is Phase.WAIT_INIT:
        xchg = ExchangeType.LW3_EXCH if suite.variant is Variant.LW3 else ExchangeType.INIT
        return xchg, 0
    if state.phase is Phase.WAIT_INTERMEDIATE:
        return ExchangeType.INTERMEDIATE, 1
    if state.phase is Phase.WAIT_AUTH:
        return ExchangeType.AUTH, 2 if suite.uses_intermediate else 1
    raise UnexpectedExchange(f"session in phase {state.phase.value} accepts no messages")


def step(state: SessionState, incoming: Message, rng: random.Random) -> tuple[SessionState, Optional[Message]]:
    """Advance a session by one incoming message.

    Any error moves the session to FAILED and is re-raised.
    """
    try:
        xchg, mid = _expected(state)
        h = incoming.header
        is_response = bool(h.flags & Flags.RESPONSE)
        if h.exchange_type is not xchg or h.message_id != mid or is_response != state.is_initiator:
            raise UnexpectedExchange(
                f"{state.role.value} in {state.phase.value} expected {xchg.name}/{mid}, "
                f"got {h.exchange_type.name}/{h.message_id}{' response' if is_response else ''}"
            )
        if h.initiator_spi != state.spi_i and state.spi_i != bytes(8):
            raise UnexpectedExchange("SPI mismatch")
        _record_in(state, incoming)
        out = _dispatch(state, incoming, rng)
        if out is not None:
            _record_out(state, out)
        return state, out
    except HandshakeError as exc:
        state.phase = Phase.FAILED
        state.error = f"{type(exc).__name__}: {exc}"
        raise
    except (CodecError, MalformedPeerPublic) as exc:
        state.phase = Phase.FAILED
        state.error = f"DecodeFailure: {exc}"
        raise DecodeFailure(str(exc)) from exc


def _dispatch(state: SessionState, m: Message, rng) -> Optional[Message]:
    variant = state.suite.variant
    if variant is Variant.LW3:
        return _lw3_responder(state, m, rng) if not state.is_initiator else _lw3_initiator(state, m)
    if state.phase is Phase.WAIT_INIT:
        return _on_init(state, m, rng)
    if state.phase is Phase.WAIT_INTERMEDIATE:
        return _on_intermediate(state, m, rng)
    return _on_auth(state, m, rng)


def _parse_init(state: SessionState, m: Message) -> bytes:
    sa, ke, nonce = m.first(PayloadKind.SA), m.first(PayloadKind.KE), m.first(PayloadKind.NONCE)
    if sa is None or ke is None or nonce is None:
        raise DecodeFailure("INIT needs SA, KE and NONCE payloads")
    if sa.body != sa_body(state.suite):
        raise UnexpectedExchange("peer proposal does not match the configured suite")
    if len(nonce.body) != NONCE_BYTES:
        raise DecodeFailure("bad nonce length")
    state.nonce_peer = nonce.body
    return ke.body


def _on_init(state: SessionState, m: Message, rng) -> Optional[Message]:
    suite, provider = state.suite, state.provider
    ke = _parse_init(state, m)
    kex_len = suite.kex.public_key_bytes if suite.kex else 0
    single_exchange = suite.variant in (Variant.TB2, Variant.LW2)
    if state.is_initiator:
        state.spi_r = m.header.responder_spi
        kem_len = suite.kem.ciphertext_or_sig_bytes if single_exchange else 0
        kex_pub, kem_ct = _split(ke, [kex_len, kem_len], "INIT KE")
        state.peer_publics["ke"] = ke
        keys = iter(state.ephemeral_keys)
        if suite.kex is not None:
            state.secrets.append(cp.kex_derive(next(keys), kex_pub, provider))
        if single_exchange:
            state.secrets.append(cp.kem_decap(kem_ct, next(keys), provider))
        state.schedule = derive_schedule(state)
        if suite.uses_intermediate:
            state.phase = Phase.WAIT_INTERMEDIATE
            return _intermediate_request(state, rng)
        state.phase = Phase.WAIT_AUTH
        hdr = _header(state, ExchangeType.AUTH, 1, response=False)
        return Message(hdr, [seal_payloads(state, hdr, _auth_inner(state), rng)])

    # responder
    state.spi_i = m.header.initiator_spi
    state.spi_r = rng.randbytes(8)
    kem_len = suite.kem.public_key_bytes if single_exchange else 0
    kex_pub, kem_pub = _split(ke, [kex_len, kem_len], "INIT KE")
    state.peer_publics["ke"] = ke
    parts = []
    if suite.kex is not None:
        kp = cp.kex_generate(suite.kex, rng, provider)
        state.ephemeral_keys.append(kp)
        state.secrets.append(cp.kex_derive(kp, kex_pub, provider))
        parts.append(kp.public)
    if single_exchange:
        ct, ss = cp.kem_encap(kem_pub, suite.kem, rng, provider)
        state.secrets.append(ss)
        parts.append(ct)
    state.nonce_local = rng.randbytes(NONCE_BYTES)
    state.schedule = derive_schedule(state)
    reply = Message(
        _header(state, ExchangeType.INIT, 0, response=True),
        [
            Payload(PayloadKind.SA, sa_body(suite)),
            Payload(PayloadKind.KE, b"".join(parts)),
            Payload(PayloadKind.NONCE, state.nonce_local),
        ],
    )
    _require_mtu(state, reply)
    state.phase = Phase.WAIT_INTERMEDIATE if suite.uses_intermediate else Phase.WAIT_AUTH
    return reply


def _intermediate_request(state: SessionState, rng) -> Message:
    kp = cp.kem_keygen(state.suite.kem, rng, state.provider)
    state.ephemeral_keys.append(kp)
    hdr = _header(state, ExchangeType.INTERMEDIATE, 1, response=False)
    return Message(hdr, [seal_payloads(state, hdr, [Payload(PayloadKind.KE, kp.public)], rng)])


def _on_intermediate(state: SessionState, m: Message, rng) -> Message:
    suite, provider = state.suite, state.provider
    inner = open_payloads(state, m)
    ke = next((p for p in inner if p.kind is PayloadKind.KE), None)
    if ke is None:
        raise DecodeFailure("INTERMEDIATE needs a KE payload")
    if state.is_initiator:
        ct = _split(ke.body, [suite.kem.ciphertext_or_sig_bytes], "INTERMEDIATE KE")[0]
        state.secrets.append(cp.kem_decap(ct, state.ephemeral_keys[-1], provider))
        state.schedule = derive_schedule(state)
        state.phase = Phase.WAIT_AUTH
        hdr = _header(state, ExchangeType.AUTH, 2, response=False)
        return Message(hdr, [seal_payloads(state, hdr, _auth_inner(state), rng)])
    pub = _split(ke.body, [suite.kem.public_key_bytes], "INTERMEDIATE KE")[0]
    ct, ss = cp.kem_encap(pub, suite.kem, rng, provider)
    hdr = _header(state, ExchangeType.INTERMEDIATE, 1, response=True)
    # reply is sealed with the pre-intermediate keys, then the schedule advances
    reply = Message(hdr, [seal_payloads(state, hdr, [Payload(PayloadKind.KE, ct)], rng)])
    state.secrets.append(ss)
    state.schedule = derive_schedule(state)
    state.phase = Phase.WAIT_AUTH
    return reply


def _verify_peer_auth(state: SessionState, inner: list[Payload]) -> None:
    creds = state.creds
    ident = next((p for p in inner if p.kind is PayloadKind.ID), None)
    auth = next((p for p in inner if p.kind is PayloadKind.AUTH), None)
    if ident is None or auth is None:
        raise AuthFailure("AUTH exchange needs ID and AUTH payloads")
    if ident.body != creds.peer_identity:
        raise AuthFailure("unexpected peer identity")
    if state.suite.auth_mode is AuthMode.RAW_PK_SIG:
        cert = next((p for p in inner if p.kind is PayloadKind.CERT), None)
        if cert is None or cert.body != creds.peer_sig_classical:
            raise AuthFailure("peer raw public key missing or not the pinned key")
    if not verify_auth_payload(state, creds, auth):
        raise AuthFailure(f"{state.suite.auth_mode.value} verification failed")


def _on_auth(state: SessionState, m: Message, rng) -> Optional[Message]:
    inner = open_payloads(state, m)
    _verify_peer_auth(state, inner)
    if state.is_initiator:
        state.phase = Phase.ESTABLISHED
        return None
    hdr = _header(state, ExchangeType.AUTH, m.header.message_id, response=True)
    reply = Message(hdr, [seal_payloads(state, hdr, _auth_inner(state), rng)])
    state.phase = Phase.ESTABLISHED
    return reply


def _lw3_responder(state: SessionState, m: Message, rng) -> Message:
    ident = m.first(PayloadKind.ID)
    if ident is None or ident.body != state.creds.peer_identity:
        raise AuthFailure("unknown initiator identity")
    state.spi_i = m.header.initiator_spi
    state.spi_r = rng.randbytes(8)
    k_a = _lw3_decapsulate(state, m)
    ct, k_b, x = _lw3_encapsulate(state, rng)
    state.secrets = [k_a, k_b]
    state.schedule = derive_schedule(state)
    reply = Message(
        _header(state, ExchangeType.LW3_EXCH, 0, response=True),
        [Payload(PayloadKind.KEM_CT, ct), Payload(PayloadKind.ENC_NONCE, x)],
    )
    _require_mtu(state, reply)
    state.phase = Phase.ESTABLISHED
    return reply


def _lw3_initiator(state: SessionState, m: Message) -> None:
    state.spi_r = m.header.responder_spi
    k_b = _lw3_decapsulate(state, m)
    state.secrets.append(k_b)
    state.schedule = derive_schedule(state)
    state.phase = Phase.ESTABLISHED
    return None


def lw3_round(
    initiator_creds: AuthCredentials,
    responder_creds: AuthCredentials,
    rng: random.Random,
    level="I",
    provider=TOY,
) -> tuple[list[Message], bytes, bytes]:
    """Run one complete LW3 exchange in memory."""
    from .crypto.suites import resolve_suite

    suite = resolve_suite(Variant.LW3, level)
    init, m1 = start(suite, initiator_creds, rng, provider)
    resp = accept(suite, responder_creds, provider)
    _, m2 = step(resp, codec.decode(codec.encode(m1)), rng)
    step(init, codec.decode(codec.encode(m2)), rng)
    return [m1, m2], init.schedule.skeyseed, resp.schedule.skeyseed


def run_in_memory(suite: SuiteConfig, ci: AuthCredentials, cr: AuthCredentials, rng, provider=TOY,
                  overhead: OverheadModel | None = None, tamper=None):
    """Drive both parties to completion without a network model.

    ``tamper(index, data) -> data`` may rewrite the encoded bytes of each
    message in flight. Returns (initiator, responder, messages).
    """
    init, msg = start(suite, ci, rng, provider, overhead)
    resp = accept(suite, cr, provider, overhead)
    messages = []
    sender, receiver = init, resp
    while msg is not None:
        messages.append(msg)
        data = codec.encode(msg)
        if tamper is not None:
            data = tamper(len(messages) - 1, data)
        try:
            incoming = codec.decode(data)
        except CodecError as exc:
            receiver.phase = Phase.FAILED
            receiver.error = f"DecodeFailure: {exc}"
            raise DecodeFailure(str(exc)) from exc
        _, msg = step(receiver, incoming, rng)
        sender, receiver = receiver, sender
    return init, resp, messages


# --- out-of-band key store and transcript export -------------------------------


class OobStore:
    """Directory of raw key files, one per (peer id, algorithm).

    Public keys live in ``<peer-hex>.<ALG>.pub``; a peer's own static secret,
    when stored, in ``<peer-hex>.<ALG>.sec``.
    """

    def __init__(self, directory):
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)

    def _path(self, peer_id: bytes, alg: Algorithm, ext: str) -> Path:
        return self.directory / f"{peer_id.hex()}.{Algorithm(alg).value}.{ext}"

    def save_public(self, peer_id: bytes, alg: Algorithm, public: bytes) -> None:
        self._path(peer_id, alg, "pub").write_bytes(public)

    def save_keypair(self, peer_id: bytes, kp: KeyPair) -> None:
        self.save_public(peer_id, kp.algorithm, kp.public)
        self._path(peer_id, kp.algorithm, "sec").write_bytes(kp.secret)

    def load_public(self, peer_id: bytes, alg: Algorithm) -> bytes:
        return self._path(peer_id, alg, "pub").read_bytes()

    def load_keypair(self, peer_id: bytes, alg: Algorithm) -> KeyPair:
        alg = Algorithm(alg)
        return KeyPair(
            alg,
            self.load_public(peer_id, alg),
            self._path(peer_id, alg, "sec").read_bytes(),
            Provenance.STATIC_OOB,
        )


def export_transcript(state: SessionState, directory) -> list[Path]:
    """Write each transcript message as a hex-dump fixture."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for i, data in enumerate(state.transcript):
        h = codec.decode(data).header
        direction = "r2i" if h.flags & Flags.RESPONSE else "i2r"
        p = directory / f"{i:02d}_{h.exchange_type.name}_{direction}.hex"
        codec.write_hexdump(
            p, data, variant=state.suite.variant.value, level=state.suite.level.value,
            exchange=h.exchange_type.name, direction=direction,
        )
        paths.append(p)
    return paths
