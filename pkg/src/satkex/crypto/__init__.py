from .primitives import (
    KeyPair,
    Provenance,
    RealProvider,
    SecretOrigin,
    SharedSecret,
    ToyProvider,
    TOY,
    aead_open,
    aead_seal,
    combine_secrets,
    get_provider,
    kem_decap,
    kem_encap,
    kem_keygen,
    kex_derive,
    kex_generate,
    prf,
    prf_plus,
    sig_keygen,
    sign,
    verify,
)
from .registry import Algorithm, AlgorithmSpec, REGISTRY, Role, dump_registry, registry_lookup
from .suites import (
    EXPECTED_MESSAGES,
    ROHC_DEFAULT,
    AuthMode,
    Level,
    SuiteConfig,
    Variant,
    all_suites,
    resolve_suite,
)
