"""Exception hierarchy shared by every layer of the package."""


class SatkexError(Exception):
    """Base class for all package errors."""


# crypto
class CryptoError(SatkexError):
    pass


class UnknownAlgorithm(CryptoError, KeyError):
    pass


class MalformedPublicKey(CryptoError, ValueError):
    pass


class MalformedCiphertext(CryptoError, ValueError):
    pass


class MalformedPeerPublic(CryptoError, ValueError):
    pass


class MalformedInput(CryptoError, ValueError):
    pass


class OutputTooLong(CryptoError, ValueError):
    pass


class AuthenticationFailure(CryptoError):
    """AEAD tag check failed."""


class EmptyParts(CryptoError, ValueError):
    pass


class ProviderUnavailable(CryptoError):
    pass


# codec
class CodecError(SatkexError):
    pass


class PayloadTooLarge(CodecError, ValueError):
    pass


class TruncatedMessage(CodecError, ValueError):
    pass


class LengthMismatch(CodecError, ValueError):
    pass


class UnknownPayloadKind(CodecError, ValueError):
    pass


class MissingFragment(CodecError):
    pass


class DuplicateFragment(CodecError):
    pass


# handshake
class HandshakeError(SatkexError):
    pass


class InitExceedsMtu(HandshakeError):
    pass


class CredentialMismatch(HandshakeError, ValueError):
    pass


class UnexpectedExchange(HandshakeError):
    pass


class DecodeFailure(HandshakeError):
    pass


class AuthFailure(HandshakeError):
    pass


class DecapsulationFailure(HandshakeError):
    pass


class NonceDecryptFailure(HandshakeError):
    pass


class MissingSecret(HandshakeError):
    pass


class HandshakeTimeout(HandshakeError):
    pass


# netsim
class UnknownScenario(SatkexError, KeyError):
    pass
