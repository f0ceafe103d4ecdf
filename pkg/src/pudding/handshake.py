"""ContactInit and the blinded-key sign-and-MAC handshake as pure functions.

The device state machines in :mod:`pudding.client` call these; tests call
them directly to sweep tampering without a simulator.
"""

from __future__ import annotations

from dataclasses import dataclass

from .crypto import (
    DecryptError,
    GroupElement,
    InvalidElementError,
    Randomness,
    Scalar,
    aead_open,
    aead_seal,
    blind_public_key,
    kdf,
    mac,
    mac_verify,
    sign_blinded,
    verify_blinded,
)
from .wire import (
    AddFriendFinish,
    AddFriendReply,
    FinishInner,
    InitInner,
    MInit,
    ReplyInner,
    SessionInner,
    SessionMessage,
    WireError,
    join_fields,
    decode,
)

MAX_CODEWORD_LEN = 64


class HandshakeAbort(Exception):
    def __init__(self, reason: str):
        super().__init__(reason)
        self.reason = reason


@dataclass(frozen=True)
class SearcherInit:
    """Searcher secrets after ContactInit."""

    a: Scalar
    ga: bytes
    nonce: bytes
    k_e: bytes
    bpk_b: GroupElement
    id_b: str


@dataclass(frozen=True)
class SearcheeReply:
    """Searchee secrets after sending message 2."""

    b: Scalar
    ga: bytes
    gb: bytes
    k_e: bytes
    k_m: bytes
    k_s: bytes


@dataclass(frozen=True)
class SearcherKeys:
    k_m: bytes
    k_s: bytes
    gb: bytes


def _element(raw: bytes, reason: str) -> GroupElement:
    try:
        return GroupElement.from_bytes(raw)
    except InvalidElementError:
        raise HandshakeAbort(reason) from None


def _open(key: bytes, ct: bytes, ad: bytes, kind: type) -> object:
    try:
        inner = decode(aead_open(key, ct, ad))
    except (DecryptError, WireError):
        raise HandshakeAbort("aead") from None
    if not isinstance(inner, kind):
        raise HandshakeAbort("malformed")
    return inner


def session_keys(shared: GroupElement) -> tuple[bytes, bytes]:
    """(K_m, K_s) from the ephemeral Diffie-Hellman value."""
    return kdf(shared.encoded, "MAC key"), kdf(shared.encoded, "session key")


def searchee_mac_input(id_b: str, bpk_b: bytes) -> bytes:
    return join_fields(id_b.encode(), bpk_b)


def searcher_mac_input(id_a: str | None, bpk_a: bytes) -> bytes:
    return join_fields(id_a.encode(), bpk_a) if id_a is not None else join_fields(bpk_a)


# -- ContactInit --------------------------------------------------------------


def build_m_init(bpk_b: GroupElement, id_b: str, nonce: bytes, inner: InitInner, rng: Randomness) -> tuple[MInit, SearcherInit]:
    if len(inner.codeword) > MAX_CODEWORD_LEN:
        raise ValueError(f"codeword longer than {MAX_CODEWORD_LEN} bytes")
    a = Scalar.random(rng)
    ga = GroupElement.generator_mul(a).encoded
    k_e = kdf((bpk_b * a).encoded, "init key")
    ct = aead_seal(k_e, inner.encode(), ga + nonce, rng)
    return MInit(ga, nonce, ct), SearcherInit(a, ga, nonce, k_e, bpk_b, id_b)


def open_m_init(x: Scalar, y: Scalar, msg: MInit) -> tuple[InitInner, bytes]:
    ga = _element(msg.ga, "malformed")
    k_e = kdf((ga * (x * y)).encoded, "init key")
    inner = _open(k_e, msg.ciphertext, msg.ga + msg.nonce, InitInner)
    return inner, k_e


# -- message 2 ------------------------------------------------------------------


def build_reply(
    x: Scalar, y: Scalar, id_b: str, ga: bytes, k_e: bytes, inner: ReplyInner, rng: Randomness
) -> tuple[AddFriendReply, SearcheeReply]:
    ga_el = _element(ga, "malformed")
    b = Scalar.random(rng)
    gb = GroupElement.generator_mul(b).encoded
    k_m, k_s = session_keys(ga_el * b)
    bpk_b = blind_public_key(GroupElement.generator_mul(x), y).encoded
    msg = AddFriendReply(
        ga,
        gb,
        sign_blinded(x, y, ga + gb),
        mac(k_m, searchee_mac_input(id_b, bpk_b)),
        aead_seal(k_e, inner.encode(), ga + gb, rng),
    )
    return msg, SearcheeReply(b, ga, gb, k_e, k_m, k_s)


def check_reply(state: SearcherInit, msg: AddFriendReply) -> tuple[SearcherKeys, ReplyInner]:
    if msg.ga != state.ga:
        raise HandshakeAbort("unknown_session")
    gb = _element(msg.gb, "signature")
    if not verify_blinded(state.bpk_b, state.ga + msg.gb, msg.sig):
        raise HandshakeAbort("signature")
    k_m, k_s = session_keys(gb * state.a)
    if not mac_verify(k_m, searchee_mac_input(state.id_b, state.bpk_b.encoded), msg.mac):
        raise HandshakeAbort("mac")
    inner = _open(state.k_e, msg.ciphertext, state.ga + msg.gb, ReplyInner)
    return SearcherKeys(k_m, k_s, msg.gb), inner


# -- message 3 ------------------------------------------------------------------


def build_finish(
    x: Scalar, y: Scalar, id_a: str | None, state: SearcherInit, keys: SearcherKeys, inner: FinishInner, rng: Randomness
) -> AddFriendFinish:
    bpk_a = blind_public_key(GroupElement.generator_mul(x), y).encoded
    return AddFriendFinish(
        keys.gb,
        sign_blinded(x, y, keys.gb + state.ga),
        mac(keys.k_m, searcher_mac_input(id_a, bpk_a)),
        aead_seal(state.k_e, inner.encode(), keys.gb + state.ga, rng),
    )


def check_finish(state: SearcheeReply, bpk_a: GroupElement, id_a: str | None, msg: AddFriendFinish) -> FinishInner:
    if msg.gb != state.gb:
        raise HandshakeAbort("unknown_session")
    if not verify_blinded(bpk_a, state.gb + state.ga, msg.sig):
        raise HandshakeAbort("signature")
    if not mac_verify(state.k_m, searcher_mac_input(id_a, bpk_a.encoded), msg.mac):
        raise HandshakeAbort("mac")
    return _open(state.k_e, msg.ciphertext, state.gb + state.ga, FinishInner)


# -- key confirmation -------------------------------------------------------------


def build_confirmation(k_s: bytes, ga: bytes, inner: SessionInner, rng: Randomness) -> SessionMessage:
    return SessionMessage(ga, aead_seal(k_s, inner.encode(), ga, rng))


def open_confirmation(k_s: bytes, ga: bytes, msg: SessionMessage) -> SessionInner:
    if msg.session != ga:
        raise HandshakeAbort("unknown_session")
    return _open(k_s, msg.ciphertext, ga, SessionInner)
