"""Group arithmetic, key-blinded Schnorr signatures and symmetric primitives.

The group is the prime-order subgroup of edwards25519, driven through
libsodium's ``crypto_core_ed25519`` / ``crypto_scalarmult_ed25519`` calls.
Every element that enters the library is checked to lie in the main
subgroup, so the identity and small-order points never appear as keys.
"""

from __future__ import annotations

import hashlib
import hmac
import math
import os
from dataclasses import dataclass
from functools import lru_cache
from typing import Protocol

import nacl.bindings as sodium
from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives.ciphers import Cipher, algorithms
from cryptography.hazmat.primitives.ciphers.aead import ChaCha20Poly1305

GROUP_ORDER = 2**252 + 27742317777372353535851937790883648493
SCALAR_LEN = 32
ELEMENT_LEN = 32
SIGNATURE_LEN = 64
SEED_LEN = 32
MAC_LEN = 32
AEAD_NONCE_LEN = 12
AEAD_TAG_LEN = 16

FAKE_IDENTITY_INPUT = b"Pudding fake identity"

KDF_LABELS = frozenset(
    {
        "init key",
        "MAC key",
        "session key",
        "surb-seed",
        "sphinx rho",
        "sphinx mu",
        "sphinx tau",
        "sphinx payload",
        "endpoint rng",
    }
)


class CryptoError(Exception):
    pass


class InvalidScalarError(CryptoError):
    """A zero scalar was supplied where a key or blinding factor is required."""


class InvalidElementError(CryptoError):
    pass


class DecryptError(CryptoError):
    pass


class KdfLabelError(ValueError):
    pass


class Randomness(Protocol):
    def read(self, n: int) -> bytes: ...


class SystemRandomness:
    """OS randomness behind the same ``read`` interface as :class:`DetPrg`."""

    def read(self, n: int) -> bytes:
        return os.urandom(n)


SYSTEM_RANDOM = SystemRandomness()


class DetPrg:
    """ChaCha20 keystream keyed by a seed.

    Output is a pure function of the seed; successive ``read`` calls continue
    the same stream, so ``read(16) + read(16) == read(32)``.
    """

    def __init__(self, seed: bytes):
        if len(seed) != SEED_LEN:
            raise ValueError(f"seed must be {SEED_LEN} bytes, got {len(seed)}")
        self._stream = Cipher(algorithms.ChaCha20(seed, bytes(16)), mode=None).encryptor()

    def read(self, n: int) -> bytes:
        if n <= 0:
            raise ValueError("byte count must be positive")
        return self._stream.update(bytes(n))


def det_prg_new(seed: bytes) -> DetPrg:
    return DetPrg(seed)


def det_prg_next(prg: DetPrg, n: int) -> bytes:
    return prg.read(n)


def randbelow(rng: Randomness, n: int) -> int:
    """Uniform integer in ``[0, n)`` by rejection sampling over 32-bit draws."""
    if n <= 0:
        raise ValueError("n must be positive")
    limit = (1 << 32) - ((1 << 32) % n)
    while True:
        v = int.from_bytes(rng.read(4), "big")
        if v < limit:
            return v % n


def uniform01(rng: Randomness) -> float:
    return (int.from_bytes(rng.read(8), "big") >> 11) / float(1 << 53)


def exponential(rng: Randomness, mean: float) -> float:
    if mean <= 0:
        raise ValueError("mean must be positive")
    return -mean * math.log1p(-uniform01(rng))


# -- scalars and group elements ------------------------------------------------


@dataclass(frozen=True)
class Scalar:
    value: int

    def __post_init__(self):
        if not 0 <= self.value < GROUP_ORDER:
            raise ValueError("scalar out of range")

    @classmethod
    def from_bytes(cls, data: bytes) -> Scalar:
        if len(data) != SCALAR_LEN:
            raise ValueError("scalar encoding must be 32 bytes")
        v = int.from_bytes(data, "little")
        if v >= GROUP_ORDER:
            raise ValueError("non-canonical scalar encoding")
        return cls(v)

    @classmethod
    def from_wide(cls, data: bytes) -> Scalar:
        return cls(int.from_bytes(data, "little") % GROUP_ORDER)

    @classmethod
    def random(cls, rng: Randomness = SYSTEM_RANDOM) -> Scalar:
        while True:
            s = cls.from_wide(rng.read(64))
            if s.value:
                return s

    def to_bytes(self) -> bytes:
        return self.value.to_bytes(SCALAR_LEN, "little")

    def is_zero(self) -> bool:
        return self.value == 0

    def __mul__(self, other: Scalar) -> Scalar:
        return Scalar(self.value * other.value % GROUP_ORDER)

    def __add__(self, other: Scalar) -> Scalar:
        return Scalar((self.value + other.value) % GROUP_ORDER)


ONE = Scalar(1)


def _require_nonzero(s: Scalar, what: str = "scalar") -> None:
    if s.is_zero():
        raise InvalidScalarError(f"zero {what}")


@dataclass(frozen=True)
class GroupElement:
    """Canonical 32-byte encoding of a point in the prime-order subgroup."""

    encoded: bytes

    def __post_init__(self):
        if len(self.encoded) != ELEMENT_LEN or not sodium.crypto_core_ed25519_is_valid_point(
            self.encoded
        ):
            raise InvalidElementError("not a valid non-identity group element")

    @classmethod
    def from_bytes(cls, data: bytes) -> GroupElement:
        return cls(bytes(data))

    @classmethod
    def generator_mul(cls, s: Scalar) -> GroupElement:
        _require_nonzero(s)
        return cls._trusted(sodium.crypto_scalarmult_ed25519_base_noclamp(s.to_bytes()))

    @classmethod
    def _trusted(cls, encoded: bytes) -> GroupElement:
        # skip the subgroup check for outputs of libsodium group operations
        obj = object.__new__(cls)
        object.__setattr__(obj, "encoded", encoded)
        return obj

    def __mul__(self, s: Scalar) -> GroupElement:
        _require_nonzero(s)
        return GroupElement._trusted(sodium.crypto_scalarmult_ed25519_noclamp(s.to_bytes(), self.encoded))

    def __add__(self, other: GroupElement) -> GroupElement:
        return GroupElement(sodium.crypto_core_ed25519_add(self.encoded, other.encoded))

    def to_bytes(self) -> bytes:
        return self.encoded

    def __repr__(self) -> str:
        return f"GroupElement({self.encoded[:6].hex()}…)"


GENERATOR = GroupElement.generator_mul(ONE)

# Blinded public keys are plain group elements; the alias documents intent.
BlindedPublicKey = GroupElement


@dataclass(frozen=True)
class KeyPair:
    sk: Scalar
    pk: GroupElement

    @classmethod
    def from_secret(cls, sk: Scalar) -> KeyPair:
        return cls(sk, GroupElement.generator_mul(sk))

    @classmethod
    def generate(cls, rng: Randomness = SYSTEM_RANDOM) -> KeyPair:
        return cls.from_secret(Scalar.random(rng))

    def __repr__(self) -> str:
        return f"KeyPair(pk={self.pk!r})"


@lru_cache(maxsize=1)
def fake_public_key() -> GroupElement:
    """Group element with no known discrete log, derived from a fixed string.

    SHA-256 of the ASCII input is fed to libsodium's Elligator2 map, which
    clears the cofactor, so the output lands in the prime-order subgroup.
    """
    uniform = hashlib.sha256(FAKE_IDENTITY_INPUT).digest()
    return GroupElement(sodium.crypto_core_ed25519_from_uniform(uniform))


def hash_to_scalar(label: bytes, *parts: bytes) -> Scalar:
    h = hashlib.sha512(label)
    for p in parts:
        h.update(p)
    return Scalar.from_wide(h.digest())


# -- Diffie-Hellman secrets for packet headers --------------------------------

FIELD_PRIME = 2**255 - 19
_INV8 = pow(8, -1, GROUP_ORDER)


def _ladder_scalar(s: Scalar) -> bytes | None:
    """Scalar that X25519 clamping leaves intact and that acts as +-s on the prime-order subgroup."""
    for v in (s.value, GROUP_ORDER - s.value):
        t = v * _INV8 % GROUP_ORDER
        if 1 << 251 <= t < 1 << 252:
            return (8 * t).to_bytes(SCALAR_LEN, "little")
    return None


@lru_cache(maxsize=4096)
def montgomery_u(encoded: bytes) -> bytes:
    """Curve25519 u-coordinate of an Edwards point encoding."""
    y = int.from_bytes(encoded, "little") & ((1 << 255) - 1)
    return ((1 + y) * pow(1 - y, -1, FIELD_PRIME) % FIELD_PRIME).to_bytes(32, "little")


def dh_secret(point: GroupElement, s: Scalar) -> bytes:
    """u-coordinate of ``point * s``.

    The u-coordinate ignores the sign of the point, which lets the X25519
    ladder do the multiplication; both parties get the same bytes.
    """
    _require_nonzero(s)
    c = _ladder_scalar(s)
    if c is None:
        return montgomery_u((point * s).encoded)
    return sodium.crypto_scalarmult(c, montgomery_u(point.encoded))


# -- key-blinded signatures ----------------------------------------------------


def blind_public_key(pk: GroupElement, y: Scalar) -> BlindedPublicKey:
    if y.is_zero():
        raise InvalidScalarError("zero blinding factor")
    return pk * y


def _challenge(r_enc: bytes, pk_enc: bytes, msg: bytes) -> int:
    return hash_to_scalar(b"pudding/schnorr-challenge", r_enc, pk_enc, msg).value


def sign_blinded(sk: Scalar, blind: Scalar, msg: bytes) -> bytes:
    """Schnorr signature under the effective secret ``sk * blind``.

    The nonce is derived from the effective secret and the message, so
    signing never touches caller randomness.
    """
    _require_nonzero(sk, "signing key")
    _require_nonzero(blind, "blinding factor")
    e = sk * blind
    pk_enc = GroupElement.generator_mul(e).encoded
    counter = 0
    while True:
        r = hash_to_scalar(b"pudding/schnorr-nonce", e.to_bytes(), counter.to_bytes(4, "big"), msg)
        if r.value:
            break
        counter += 1
    r_enc = GroupElement.generator_mul(r).encoded
    c = _challenge(r_enc, pk_enc, msg)
    s = (r.value + c * e.value) % GROUP_ORDER
    return r_enc + s.to_bytes(SCALAR_LEN, "little")


def verify_blinded(bpk: BlindedPublicKey, msg: bytes, sig: bytes) -> bool:
    """Check ``g^s == R + c*bpk``; malformed input yields False, never raises."""
    try:
        if not isinstance(sig, (bytes, bytearray)) or len(sig) != SIGNATURE_LEN:
            return False
        r_enc, s_enc = bytes(sig[:32]), bytes(sig[32:])
        s = int.from_bytes(s_enc, "little")
        if s == 0 or s >= GROUP_ORDER:
            return False
        if not sodium.crypto_core_ed25519_is_valid_point(r_enc):
            return False
        c = _challenge(r_enc, bpk.encoded, msg)
        lhs = sodium.crypto_scalarmult_ed25519_base_noclamp(s_enc)
        if c == 0:
            return hmac.compare_digest(lhs, r_enc)
        rhs = sodium.crypto_core_ed25519_add(
            r_enc, sodium.crypto_scalarmult_ed25519_noclamp(c.to_bytes(32, "little"), bpk.encoded)
        )
        return hmac.compare_digest(lhs, rhs)
    except Exception:
        return False


def sign(key: KeyPair | Scalar, msg: bytes) -> bytes:
    sk = key.sk if isinstance(key, KeyPair) else key
    return sign_blinded(sk, ONE, msg)


def verify(pk: GroupElement, msg: bytes, sig: bytes) -> bool:
    return verify_blinded(pk, msg, sig)


# -- symmetric -----------------------------------------------------------------


def _check_label(context: str) -> bytes:
    if context not in KDF_LABELS:
        raise KdfLabelError(f"unknown KDF context label: {context!r}")
    return context.encode()


def kdf(data: bytes, context: str) -> bytes:
    """HKDF-SHA256 (empty salt) with the context label as ``info``; 32-byte output."""
    return kdf_many(data, context)[0]


def kdf_many(data: bytes, *contexts: str) -> tuple[bytes, ...]:
    """One HKDF extract, then a single-block expand per label; same output as repeated :func:`kdf`."""
    infos = [_check_label(c) for c in contexts]
    prk = hmac.digest(bytes(SEED_LEN), data, "sha256")
    return tuple(hmac.digest(prk, info + b"\x01", "sha256") for info in infos)


def mac(key: bytes, msg: bytes) -> bytes:
    return hmac.new(key, msg, hashlib.sha256).digest()


def mac_verify(key: bytes, msg: bytes, tag: bytes) -> bool:
    return hmac.compare_digest(mac(key, msg), tag)


def aead_seal(key: bytes, plaintext: bytes, associated_data: bytes = b"", rng: Randomness = SYSTEM_RANDOM) -> bytes:
    """ChaCha20-Poly1305; the random 12-byte nonce is prepended."""
    if len(key) != SEED_LEN:
        raise ValueError("AEAD key must be 32 bytes")
    nonce = rng.read(AEAD_NONCE_LEN)
    return nonce + ChaCha20Poly1305(key).encrypt(nonce, plaintext, associated_data)


def aead_open(key: bytes, ciphertext: bytes, associated_data: bytes = b"") -> bytes:
    if len(key) != SEED_LEN:
        raise ValueError("AEAD key must be 32 bytes")
    if len(ciphertext) < AEAD_NONCE_LEN + AEAD_TAG_LEN:
        raise DecryptError("ciphertext too short")
    nonce, body = ciphertext[:AEAD_NONCE_LEN], ciphertext[AEAD_NONCE_LEN:]
    try:
        return ChaCha20Poly1305(key).decrypt(nonce, body, associated_data)
    except InvalidTag as exc:
        raise DecryptError("authentication failed") from exc


def stream_xor(key: bytes, data: bytes) -> bytes:
    ks = Cipher(algorithms.ChaCha20(key, bytes(16)), mode=None).encryptor().update(bytes(len(data)))
    return xor_bytes(data, ks)


def keystream(key: bytes, n: int) -> bytes:
    return Cipher(algorithms.ChaCha20(key, bytes(16)), mode=None).encryptor().update(bytes(n))


def xor_bytes(a: bytes, b: bytes) -> bytes:
    n = len(a)
    return (int.from_bytes(a, "big") ^ int.from_bytes(b[:n], "big")).to_bytes(n, "big")
