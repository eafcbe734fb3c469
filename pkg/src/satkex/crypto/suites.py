"""Per-variant, per-security-level cryptographic suites."""
from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Optional

from .registry import Algorithm, AlgorithmSpec, registry_lookup


class Variant(str, enum.Enum):
    TB1 = "TB1"
    TB2 = "TB2"
    LW1 = "LW1"
    LW2 = "LW2"
    LW3 = "LW3"


class Level(str, enum.Enum):
    I = "I"
    III = "III"


class AuthMode(str, enum.Enum):
    RAW_PK_SIG = "RAW-PK-SIG"
    PSK = "PSK"
    PQ_CERT_SIG = "PQ-CERT-SIG"
    HYBRID_SIG = "HYBRID-SIG"
    IMPLICIT_KEM = "IMPLICIT-KEM"


@dataclass(frozen=True)
class SuiteConfig:
    level: Level
    variant: Variant
    aead: AlgorithmSpec
    prf: AlgorithmSpec
    kex: Optional[AlgorithmSpec]
    kem: Optional[AlgorithmSpec]
    sig_classical: Optional[AlgorithmSpec]
    sig_pq: Optional[AlgorithmSpec]
    auth_mode: AuthMode

    @property
    def uses_intermediate(self) -> bool:
        return self.variant in (Variant.TB1, Variant.LW1)

    @property
    def expected_messages(self) -> int:
        return EXPECTED_MESSAGES[self.variant]


EXPECTED_MESSAGES = {
    Variant.TB1: 6,
    Variant.TB2: 4,
    Variant.LW1: 6,
    Variant.LW2: 4,
    Variant.LW3: 2,
}

ROHC_DEFAULT = {
    Variant.TB1: False,
    Variant.TB2: False,
    Variant.LW1: True,
    Variant.LW2: True,
    Variant.LW3: True,
}

A = Algorithm
_SYMMETRIC = {
    Level.I: (A.AES_128_GCM, A.HMAC_SHA_256),
    Level.III: (A.AES_192_GCM, A.HMAC_SHA_384),
}

# (kex, kem, classical sig, pq sig, auth mode)
_TABLE = {
    (Variant.TB1, Level.I): (A.X25519, A.ML_KEM_512, A.ECDSA_P256, None, AuthMode.RAW_PK_SIG),
    (Variant.TB2, Level.I): (None, A.ML_KEM_512, None, None, AuthMode.PSK),
    (Variant.LW1, Level.I): (A.X25519, A.ML_KEM_512, None, A.ML_DSA_44, AuthMode.PQ_CERT_SIG),
    (Variant.LW2, Level.I): (A.X25519, A.ML_KEM_512, A.ECDSA_P256, A.ML_DSA_44, AuthMode.HYBRID_SIG),
    (Variant.LW3, Level.I): (None, A.MCELIECE_348864, None, None, AuthMode.IMPLICIT_KEM),
    (Variant.TB1, Level.III): (A.ECP384, A.ML_KEM_768, A.ECDSA_P384, None, AuthMode.RAW_PK_SIG),
    (Variant.TB2, Level.III): (None, A.ML_KEM_768, None, None, AuthMode.PSK),
    (Variant.LW1, Level.III): (A.ECP384, A.ML_KEM_768, None, A.ML_DSA_65, AuthMode.PQ_CERT_SIG),
    (Variant.LW2, Level.III): (A.ECP384, A.ML_KEM_768, A.ECDSA_P384, A.ML_DSA_65, AuthMode.HYBRID_SIG),
    (Variant.LW3, Level.III): (None, A.MCELIECE_460896, None, None, AuthMode.IMPLICIT_KEM),
}


def _opt(alg):
    return registry_lookup(alg) if alg is not None else None


def resolve_suite(variant: Variant | str, level: Level | str) -> SuiteConfig:
    variant, level = Variant(variant), Level(level)
    kex, kem, sig_c, sig_pq, mode = _TABLE[(variant, level)]
    aead, prf = _SYMMETRIC[level]
    return SuiteConfig(
        level=level,
        variant=variant,
        aead=registry_lookup(aead),
        prf=registry_lookup(prf),
        kex=_opt(kex),
        kem=_opt(kem),
        sig_classical=_opt(sig_c),
        sig_pq=_opt(sig_pq),
        auth_mode=mode,
    )


def all_suites() -> list[SuiteConfig]:
    return [resolve_suite(v, lv) for lv in Level for v in Variant]
