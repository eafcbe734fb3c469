"""Primitive operations: KEM, KEX, signatures, PRF, AEAD and the secret combiner.

Every asymmetric operation is dispatched to a provider. Two providers exist:

* ``ToyProvider`` (default) is fully deterministic under a seeded
  ``random.Random``. Classical curves (X25519, P-256, P-384) run the real
  arithmetic with seed-derived scalars; post-quantum KEMs and signatures are
  hash-based stand-ins that emit registry-exact lengths.
* ``RealProvider`` binds ``cryptography`` for classical curves and
  ``pqcrypto`` for ML-KEM, ML-DSA and Classic McEliece.

PRF and AEAD are always the standard constructions (HMAC, AES-GCM).
"""
from __future__ import annotations

import enum
import hashlib
import hmac
import os
import random
from dataclasses import dataclass

from cryptography.exceptions import InvalidSignature, InvalidTag
from cryptography.hazmat.primitives import hashes
from cryptography.hazmat.primitives.asymmetric import ec, x25519
from cryptography.hazmat.primitives.asymmetric.utils import (
    decode_dss_signature,
    encode_dss_signature,
)
from cryptography.hazmat.primitives.ciphers.aead import AESGCM
from cryptography.hazmat.primitives.serialization import Encoding, PublicFormat

from ..errors import (
    AuthenticationFailure,
    EmptyParts,
    MalformedCiphertext,
    MalformedInput,
    MalformedPeerPublic,
    MalformedPublicKey,
    OutputTooLong,
    ProviderUnavailable,
)
from .registry import Algorithm, AlgorithmSpec, Role, registry_lookup


class SecretOrigin(str, enum.Enum):
    KEX = "KEX"
    KEM = "KEM"
    COMBINED = "COMBINED"


class Provenance(str, enum.Enum):
    EPHEMERAL = "EPHEMERAL"
    STATIC_OOB = "STATIC-OOB"


@dataclass(frozen=True)
class SharedSecret:
    data: bytes
    origin: SecretOrigin

    def __len__(self) -> int:
        return len(self.data)


@dataclass(frozen=True)
class KeyPair:
    algorithm: Algorithm
    public: bytes
    secret: bytes = b""
    provenance: Provenance = Provenance.EPHEMERAL

    @property
    def spec(self) -> AlgorithmSpec:
        return registry_lookup(self.algorithm)

    def as_static(self) -> "KeyPair":
        return KeyPair(self.algorithm, self.public, self.secret, Provenance.STATIC_OOB)


def _randbytes(rng: random.Random | None, n: int) -> bytes:
    if rng is None:
        return os.urandom(n)
    return rng.randbytes(n)


def _require_role(spec: AlgorithmSpec, role: Role) -> None:
    if spec.role is not role:
        raise MalformedInput(f"{spec.id.value} is a {spec.role.value}, not a {role.value}")


# --- classical curves (shared by both providers) ------------------------------

_CURVES = {
    Algorithm.ECP384: (ec.SECP384R1(), 48, None),
    Algorithm.ECDSA_P256: (ec.SECP256R1(), 32, hashes.SHA256()),
    Algorithm.ECDSA_P384: (ec.SECP384R1(), 48, hashes.SHA384()),
}
_ORDERS = {
    48: 0xFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFC7634D81F4372DDF581A0DB248B0A77AECEC196ACCC52973,
    32: 0xFFFFFFFF00000000FFFFFFFFFFFFFFFFBCE6FAADA7179E84F3B9CAC2FC632551,
}


def _raw_point(public_key: ec.EllipticCurvePublicKey) -> bytes:
    return public_key.public_bytes(Encoding.X962, PublicFormat.UncompressedPoint)[1:]


def _ec_keypair(alg: Algorithm, rng) -> KeyPair:
    curve, width, _ = _CURVES[alg]
    scalar = int.from_bytes(_randbytes(rng, width + 8), "big") % (_ORDERS[width] - 1) + 1
    key = ec.derive_private_key(scalar, curve)
    return KeyPair(alg, _raw_point(key.public_key()), scalar.to_bytes(width, "big"))


def _ec_public(alg: Algorithm, raw: bytes) -> ec.EllipticCurvePublicKey:
    curve, _, _ = _CURVES[alg]
    return ec.EllipticCurvePublicKey.from_encoded_point(curve, b"\x04" + raw)


def _classical_kex_generate(spec: AlgorithmSpec, rng) -> KeyPair:
    if spec.id is Algorithm.X25519:
        key = x25519.X25519PrivateKey.from_private_bytes(_randbytes(rng, 32))
        return KeyPair(spec.id, key.public_key().public_bytes_raw(), key.private_bytes_raw())
    return _ec_keypair(spec.id, rng)


def _classical_kex_derive(own: KeyPair, peer_public: bytes) -> SharedSecret:
    spec = own.spec
    if len(peer_public) != spec.public_key_bytes:
        raise MalformedPeerPublic(
            f"{spec.id.value} peer public must be {spec.public_key_bytes} bytes, got {len(peer_public)}"
        )
    try:
        if spec.id is Algorithm.X25519:
            key = x25519.X25519PrivateKey.from_private_bytes(own.secret)
            ss = key.exchange(x25519.X25519PublicKey.from_public_bytes(peer_public))
        else:
            curve, _, _ = _CURVES[spec.id]
            key = ec.derive_private_key(int.from_bytes(own.secret, "big"), curve)
            ss = key.exchange(ec.ECDH(), _ec_public(spec.id, peer_public))
    except ValueError as exc:
        raise MalformedPeerPublic(str(exc)) from None
    return SharedSecret(ss, SecretOrigin.KEX)


def _ecdsa_sign(message: bytes, keypair: KeyPair, spec: AlgorithmSpec) -> bytes:
    curve, width, digest = _CURVES[spec.id]
    key = ec.derive_private_key(int.from_bytes(keypair.secret, "big"), curve)
    der = key.sign(message, ec.ECDSA(digest, deterministic_signing=True))
    r, s = decode_dss_signature(der)
    return r.to_bytes(width, "big") + s.to_bytes(width, "big")


def _ecdsa_verify(message: bytes, signature: bytes, public: bytes, spec: AlgorithmSpec) -> bool:
    _, width, digest = _CURVES[spec.id]
    try:
        key = _ec_public(spec.id, public)
    except ValueError:
        return False
    r = int.from_bytes(signature[:width], "big")
    s = int.from_bytes(signature[width:], "big")
    try:
        key.verify(encode_dss_signature(r, s), message, ec.ECDSA(digest))
    except (InvalidSignature, ValueError):
        return False
    return True


# --- providers ------------------------------------------------------------------


def _xof(label: bytes, *parts: bytes, n: int) -> bytes:
    h = hashlib.shake_256(label)
    for p in parts:
        h.update(len(p).to_bytes(4, "big"))
        h.update(p)
    return h.digest(n)


class ToyProvider:
    """Seeded, hash-based stand-ins with registry-exact output lengths.

    Toy KEM: the secret key is a 32-byte seed and the public key is its SHAKE
    expansion. A ciphertext is ``(r XOR mask(pk)) || XOF(pk, r)``; decapsulation
    recomputes the public key from the secret, recovers ``r`` and checks the
    tail. On any mismatch (flipped byte, wrong secret key) it returns a
    pseudo-random rejection secret instead of raising, mirroring implicit
    rejection in ML-KEM and Classic McEliece.

    Toy PQ signatures are keyed hashes over the public key and the message, so
    they verify only under the matching public key. They are forgeable by
    design; only sizes and flow matter.
    """

    name = "toy"

    def kem_keygen(self, spec: AlgorithmSpec, rng) -> KeyPair:
        seed = _randbytes(rng, 32)
        return KeyPair(spec.id, self._kem_public(spec, seed), seed)

    @staticmethod
    def _kem_public(spec: AlgorithmSpec, seed: bytes) -> bytes:
        return _xof(b"toy-kem-pk", spec.id.value.encode(), seed, n=spec.public_key_bytes)

    def kem_encap(self, public: bytes, spec: AlgorithmSpec, rng) -> tuple[bytes, SharedSecret]:
        pk_id = hashlib.sha256(public).digest()
        r = _randbytes(rng, 32)
        head = bytes(a ^ b for a, b in zip(r, _xof(b"toy-kem-mask", pk_id, n=32)))
        tail = _xof(b"toy-kem-ct", pk_id, r, n=spec.ciphertext_or_sig_bytes - 32)
        ct = head + tail
        return ct, SharedSecret(_xof(b"toy-kem-ss", pk_id, ct, n=spec.shared_secret_bytes), SecretOrigin.KEM)

    def kem_decap(self, ciphertext: bytes, keypair: KeyPair) -> SharedSecret:
        spec = keypair.spec
        pk_id = hashlib.sha256(self._kem_public(spec, keypair.secret)).digest()
        r = bytes(a ^ b for a, b in zip(ciphertext[:32], _xof(b"toy-kem-mask", pk_id, n=32)))
        tail = _xof(b"toy-kem-ct", pk_id, r, n=spec.ciphertext_or_sig_bytes - 32)
        if hmac.compare_digest(tail, ciphertext[32:]):
            ss = _xof(b"toy-kem-ss", pk_id, ciphertext, n=spec.shared_secret_bytes)
        else:
            ss = _xof(b"toy-kem-reject", keypair.secret, ciphertext, n=spec.shared_secret_bytes)
        return SharedSecret(ss, SecretOrigin.KEM)

    def kex_generate(self, spec: AlgorithmSpec, rng) -> KeyPair:
        return _classical_kex_generate(spec, rng)

    def kex_derive(self, own: KeyPair, peer_public: bytes) -> SharedSecret:
        return _classical_kex_derive(own, peer_public)

    def sig_keygen(self, spec: AlgorithmSpec, rng) -> KeyPair:
        if spec.id in _CURVES:
            return _ec_keypair(spec.id, rng)
        seed = _randbytes(rng, 32)
        return KeyPair(spec.id, self._sig_public(spec, seed), seed)

    @staticmethod
    def _sig_public(spec: AlgorithmSpec, seed: bytes) -> bytes:
        return _xof(b"toy-sig-pk", spec.id.value.encode(), seed, n=spec.public_key_bytes)

    @staticmethod
    def _toy_signature(spec: AlgorithmSpec, public: bytes, message: bytes) -> bytes:
        return _xof(b"toy-sig", hashlib.sha256(public).digest(), message, n=spec.ciphertext_or_sig_bytes)

    def sign(self, message: bytes, keypair: KeyPair, spec: AlgorithmSpec) -> bytes:
        if spec.id in _CURVES:
            return _ecdsa_sign(message, keypair, spec)
        return self._toy_signature(spec, self._sig_public(spec, keypair.secret), message)

    def verify(self, message: bytes, signature: bytes, public: bytes, spec: AlgorithmSpec) -> bool:
        if spec.id in _CURVES:
            return _ecdsa_verify(message, signature, public, spec)
        return hmac.compare_digest(self._toy_signature(spec, public, message), signature)


_PQ_MODULES = {
    Algorithm.ML_KEM_512: ("kem", "ml_kem_512"),
    Algorithm.ML_KEM_768: ("kem", "ml_kem_768"),
    Algorithm.MCELIECE_348864: ("kem", "mceliece_348864"),
    Algorithm.MCELIECE_460896: ("kem", "mceliece_460896"),
    Algorithm.ML_DSA_44: ("sign", "ml_dsa_44"),
    Algorithm.ML_DSA_65: ("sign", "ml_dsa_65"),
}


class RealProvider:
    """Standardized implementations. Post-quantum operations ignore ``rng``."""

    name = "real"

    @staticmethod
    def _module(alg: Algorithm):
        kind, name = _PQ_MODULES[alg]
        try:
            import importlib

            return importlib.import_module(f"pqcrypto.{kind}.{name}")
        except ImportError as exc:
            raise ProviderUnavailable(f"pqcrypto is required for {alg.value}") from exc

    def kem_keygen(self, spec: AlgorithmSpec, rng) -> KeyPair:
        pk, sk = self._module(spec.id).keygen()
        return KeyPair(spec.id, bytes(pk), bytes(sk))

    def kem_encap(self, public: bytes, spec: AlgorithmSpec, rng) -> tuple[bytes, SharedSecret]:
        ct, ss = self._module(spec.id).encaps(public)
        return bytes(ct), SharedSecret(bytes(ss), SecretOrigin.KEM)

    def kem_decap(self, ciphertext: bytes, keypair: KeyPair) -> SharedSecret:
        ss = self._module(keypair.algorithm).decaps(keypair.secret, ciphertext)
        return SharedSecret(bytes(ss), SecretOrigin.KEM)

    def kex_generate(self, spec: AlgorithmSpec, rng) -> KeyPair:
        return _classical_kex_generate(spec, rng)

    def kex_derive(self, own: KeyPair, peer_public: bytes) -> SharedSecret:
        return _classical_kex_derive(own, peer_public)

    def sig_keygen(self, spec: AlgorithmSpec, rng) -> KeyPair:
        if spec.id in _CURVES:
            return _ec_keypair(spec.id, rng)
        pk, sk = self._module(spec.id).keygen()
        return KeyPair(spec.id, bytes(pk), bytes(sk))

    def sign(self, message: bytes, keypair: KeyPair, spec: AlgorithmSpec) -> bytes:
        if spec.id in _CURVES:
            return _ecdsa_sign(message, keypair, spec)
        return bytes(self._module(spec.id).sign(keypair.secret, message))

    def verify(self, message: bytes, signature: bytes, public: bytes, spec: AlgorithmSpec) -> bool:
        if spec.id in _CURVES:
            return _ecdsa_verify(message, signature, public, spec)
        try:
            self._module(spec.id).verify(public, message, signature)
        except Exception:
            return False
        return True


TOY = ToyProvider()
_REAL: RealProvider | None = None


def get_provider(name: str = "toy"):
    global _REAL
    if name == "toy":
        return TOY
    if name == "real":
        if _REAL is None:
            _REAL = RealProvider()
        return _REAL
    raise ValueError(f"unknown provider {name!r}")


# --- public operations: length checks live here, around the provider ---------


def kem_keygen(spec: AlgorithmSpec, rng, provider=TOY) -> KeyPair:
    _require_role(spec, Role.KEM)
    kp = provider.kem_keygen(spec, rng)
    assert len(kp.public) == spec.public_key_bytes
    return kp


def kem_encap(public: bytes, spec: AlgorithmSpec, rng, provider=TOY) -> tuple[bytes, SharedSecret]:
    _require_role(spec, Role.KEM)
    if len(public) != spec.public_key_bytes:
        raise MalformedPublicKey(
            f"{spec.id.value} public key must be {spec.public_key_bytes} bytes, got {len(public)}"
        )
    ct, ss = provider.kem_encap(public, spec, rng)
    assert len(ct) == spec.ciphertext_or_sig_bytes and len(ss) == spec.shared_secret_bytes
    return ct, ss


def kem_decap(ciphertext: bytes, keypair: KeyPair, provider=TOY) -> SharedSecret:
    spec = keypair.spec
    _require_role(spec, Role.KEM)
    if len(ciphertext) != spec.ciphertext_or_sig_bytes:
        raise MalformedCiphertext(
            f"{spec.id.value} ciphertext must be {spec.ciphertext_or_sig_bytes} bytes, got {len(ciphertext)}"
        )
    return provider.kem_decap(ciphertext, keypair)


def kex_generate(spec: AlgorithmSpec, rng, provider=TOY) -> KeyPair:
    _require_role(spec, Role.KEX)
    return provider.kex_generate(spec, rng)


def kex_derive(own: KeyPair, peer_public: bytes, provider=TOY) -> SharedSecret:
    _require_role(own.spec, Role.KEX)
    return provider.kex_derive(own, peer_public)


def sig_keygen(spec: AlgorithmSpec, rng, provider=TOY) -> KeyPair:
    _require_role(spec, Role.SIG)
    return provider.sig_keygen(spec, rng)


def sign(message: bytes, keypair: KeyPair, spec: AlgorithmSpec, provider=TOY) -> bytes:
    _require_role(spec, Role.SIG)
    if keypair.algorithm is not spec.id:
        raise MalformedInput(f"keypair is {keypair.algorithm.value}, spec is {spec.id.value}")
    sig = provider.sign(message, keypair, spec)
    assert len(sig) == spec.ciphertext_or_sig_bytes
    return sig


def verify(message: bytes, signature: bytes, public: bytes, spec: AlgorithmSpec, provider=TOY) -> bool:
    _require_role(spec, Role.SIG)
    if len(public) != spec.public_key_bytes:
        raise MalformedInput(f"{spec.id.value} public key must be {spec.public_key_bytes} bytes")
    if len(signature) != spec.ciphertext_or_sig_bytes:
        return False
    return provider.verify(message, signature, public, spec)


_HASHES = {Algorithm.HMAC_SHA_256: hashlib.sha256, Algorithm.HMAC_SHA_384: hashlib.sha384}


def prf(key: bytes, data: bytes, spec: AlgorithmSpec) -> bytes:
    _require_role(spec, Role.PRF)
    return hmac.new(key, data, _HASHES[spec.id]).digest()


def prf_plus(key: bytes, data: bytes, out_len: int, spec: AlgorithmSpec) -> bytes:
    """T1 = prf(K, S | 0x01), Tn = prf(K, Tn-1 | S | n), truncated to ``out_len``."""
    if out_len > 255 * spec.output_bytes:
        raise OutputTooLong(f"prf+ output limited to {255 * spec.output_bytes} bytes")
    out = bytearray()
    block = b""
    counter = 1
    while len(out) < out_len:
        block = prf(key, block + data + bytes([counter]), spec)
        out += block
        counter += 1
    return bytes(out[:out_len])


def aead_seal(key: bytes, nonce: bytes, aad: bytes, plaintext: bytes, spec: AlgorithmSpec) -> bytes:
    _require_role(spec, Role.AEAD)
    if len(key) != spec.key_bytes:
        raise MalformedInput(f"{spec.id.value} key must be {spec.key_bytes} bytes")
    return AESGCM(key).encrypt(nonce, plaintext, aad)


def aead_open(key: bytes, nonce: bytes, aad: bytes, ciphertext: bytes, spec: AlgorithmSpec) -> bytes:
    _require_role(spec, Role.AEAD)
    if len(key) != spec.key_bytes:
        raise MalformedInput(f"{spec.id.value} key must be {spec.key_bytes} bytes")
    try:
        return AESGCM(key).decrypt(nonce, ciphertext, aad)
    except InvalidTag:
        raise AuthenticationFailure("AEAD tag mismatch") from None


def combine_secrets(parts: list[SharedSecret]) -> SharedSecret:
    """Concatenate secrets, classical (KEX) contributions first."""
    if not parts:
        raise EmptyParts("combine_secrets needs at least one part")
    ordered = sorted(parts, key=lambda p: p.origin is not SecretOrigin.KEX)
    return SharedSecret(b"".join(p.data for p in ordered), SecretOrigin.COMBINED)
