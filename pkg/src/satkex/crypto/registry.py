"""Algorithm registry: exact artifact sizes for every primitive in the suites."""
from __future__ import annotations

import enum
from dataclasses import asdict, dataclass

from ..errors import UnknownAlgorithm


class Role(str, enum.Enum):
    KEX = "KEX"
    KEM = "KEM"
    SIG = "SIG"
    AEAD = "AEAD"
    PRF = "PRF"
    PSK = "PSK"


class Algorithm(str, enum.Enum):
    X25519 = "X25519"
    ECP384 = "ECP384"
    ML_KEM_512 = "ML-KEM-512"
    ML_KEM_768 = "ML-KEM-768"
    MCELIECE_348864 = "MCELIECE-348864"
    MCELIECE_460896 = "MCELIECE-460896"
    ECDSA_P256 = "ECDSA-P256"
    ECDSA_P384 = "ECDSA-P384"
    ML_DSA_44 = "ML-DSA-44"
    ML_DSA_65 = "ML-DSA-65"
    AES_128_GCM = "AES-128-GCM"
    AES_192_GCM = "AES-192-GCM"
    HMAC_SHA_256 = "HMAC-SHA-256"
    HMAC_SHA_384 = "HMAC-SHA-384"
    PSK = "PSK"


@dataclass(frozen=True)
class AlgorithmSpec:
    """Immutable registry entry.

    ``ciphertext_or_sig_bytes`` is the KEM ciphertext, the signature, or the
    AEAD tag length depending on ``role``. ``key_bytes`` is only used by AEAD
    and ``output_bytes`` only by PRF.
    """

    id: Algorithm
    role: Role
    public_key_bytes: int = 0
    ciphertext_or_sig_bytes: int = 0
    shared_secret_bytes: int = 0
    key_bytes: int = 0
    output_bytes: int = 0

    def as_row(self) -> dict:
        row = asdict(self)
        row["id"] = self.id.value
        row["role"] = self.role.value
        return row


# Public values use fixed-width encodings: raw 32-byte X25519 u-coordinates,
# uncompressed x||y without the 0x04 prefix for NIST curves, and r||s for ECDSA.
_ENTRIES = [
    AlgorithmSpec(Algorithm.X25519, Role.KEX, public_key_bytes=32, shared_secret_bytes=32),
    AlgorithmSpec(Algorithm.ECP384, Role.KEX, public_key_bytes=96, shared_secret_bytes=48),
    AlgorithmSpec(Algorithm.ML_KEM_512, Role.KEM, 800, 768, 32),
    AlgorithmSpec(Algorithm.ML_KEM_768, Role.KEM, 1184, 1088, 32),
    AlgorithmSpec(Algorithm.MCELIECE_348864, Role.KEM, 261120, 96, 32),
    AlgorithmSpec(Algorithm.MCELIECE_460896, Role.KEM, 524160, 156, 32),
    AlgorithmSpec(Algorithm.ECDSA_P256, Role.SIG, 64, 64),
    AlgorithmSpec(Algorithm.ECDSA_P384, Role.SIG, 96, 96),
    AlgorithmSpec(Algorithm.ML_DSA_44, Role.SIG, 1312, 2420),
    AlgorithmSpec(Algorithm.ML_DSA_65, Role.SIG, 1952, 3309),
    AlgorithmSpec(Algorithm.AES_128_GCM, Role.AEAD, ciphertext_or_sig_bytes=16, key_bytes=16),
    AlgorithmSpec(Algorithm.AES_192_GCM, Role.AEAD, ciphertext_or_sig_bytes=16, key_bytes=24),
    AlgorithmSpec(Algorithm.HMAC_SHA_256, Role.PRF, output_bytes=32),
    AlgorithmSpec(Algorithm.HMAC_SHA_384, Role.PRF, output_bytes=48),
    AlgorithmSpec(Algorithm.PSK, Role.PSK, shared_secret_bytes=32),
]

REGISTRY: dict[Algorithm, AlgorithmSpec] = {e.id: e for e in _ENTRIES}


def registry_lookup(alg: Algorithm | str) -> AlgorithmSpec:
    try:
        return REGISTRY[Algorithm(alg)]
    except (ValueError, KeyError):
        raise UnknownAlgorithm(f"unknown algorithm: {alg!r}") from None


def dump_registry() -> list[dict]:
    """Registry as a list of plain rows, in declaration order."""
    return [e.as_row() for e in _ENTRIES]
