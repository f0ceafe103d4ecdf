"""Wire messages: one tag byte, then fields as 2-byte big-endian length + bytes."""

from __future__ import annotations

import struct
from dataclasses import dataclass, fields
from typing import ClassVar

NONCE_LEN = 16
CHALLENGE_LEN = 16


class WireError(ValueError):
    pass


_REGISTRY: dict[int, type[Message]] = {}


@dataclass(frozen=True)
class Message:
    TAG: ClassVar[int] = 0

    def __init_subclass__(cls, **kw):
        super().__init_subclass__(**kw)
        if cls.TAG in _REGISTRY:
            raise TypeError(f"duplicate wire tag {cls.TAG:#x}")
        _REGISTRY[cls.TAG] = cls

    def encode(self) -> bytes:
        out = [bytes([self.TAG])]
        for f in fields(self):
            v = getattr(self, f.name)
            raw = v.encode() if isinstance(v, str) else bytes(v)
            if len(raw) > 0xFFFF:
                raise WireError(f"field {f.name} too long")
            out.append(struct.pack(">H", len(raw)) + raw)
        return b"".join(out)

    def field_spans(self) -> dict[str, tuple[int, int]]:
        """Byte offsets of each field's value inside :meth:`encode` output."""
        spans, off = {}, 1
        for f in fields(self):
            v = getattr(self, f.name)
            n = len(v.encode() if isinstance(v, str) else v)
            spans[f.name] = (off + 2, off + 2 + n)
            off += 2 + n
        return spans


def decode(data: bytes) -> Message:
    if not data:
        raise WireError("empty message")
    cls = _REGISTRY.get(data[0])
    if cls is None:
        raise WireError(f"unknown tag {data[0]:#x}")
    values, off = [], 1
    for f in fields(cls):
        if off + 2 > len(data):
            raise WireError("truncated message")
        (n,) = struct.unpack(">H", data[off : off + 2])
        off += 2
        raw = data[off : off + n]
        if len(raw) != n:
            raise WireError("truncated field")
        off += n
        if f.type == "str":
            try:
                values.append(raw.decode())
            except UnicodeDecodeError as exc:
                raise WireError("bad text field") from exc
        else:
            values.append(bytes(raw))
    if off != len(data):
        raise WireError("trailing bytes")
    return cls(*values)


# -- discovery ---------------------------------------------------------------


@dataclass(frozen=True)
class LookupRequest(Message):
    TAG: ClassVar[int] = 0x01
    username: str
    nonce: bytes
    reply_surb: bytes


@dataclass(frozen=True)
class LookupResponse(Message):
    TAG: ClassVar[int] = 0x02
    node: str
    nonce: bytes
    surb: bytes
    bpk: bytes
    sig: bytes

    def signed_bytes(self) -> bytes:
        return lookup_response_signed_bytes(self.nonce, self.surb, self.bpk)


def lookup_response_signed_bytes(nonce: bytes, surb: bytes, bpk: bytes) -> bytes:
    return b"lookup-response" + nonce + surb + bpk


@dataclass(frozen=True)
class BlindingKeyNotice(Message):
    TAG: ClassVar[int] = 0x03
    node: str
    nonce: bytes
    y: bytes
    sig: bytes

    def signed_bytes(self) -> bytes:
        return blinding_notice_signed_bytes(self.nonce, self.y)


def blinding_notice_signed_bytes(nonce: bytes, y: bytes) -> bytes:
    return b"blinding-key" + nonce + y


@dataclass(frozen=True)
class ReflectRequest(Message):
    TAG: ClassVar[int] = 0x04
    first_hop: str
    packet: bytes


# -- registration ------------------------------------------------------------


@dataclass(frozen=True)
class RegisterRequest(Message):
    TAG: ClassVar[int] = 0x05
    username: str
    contact: bytes
    d_auth: str


@dataclass(frozen=True)
class Challenge(Message):
    TAG: ClassVar[int] = 0x06
    node: str
    username: str
    contact: bytes
    d_auth: str
    challenge: bytes
    sig: bytes

    def signed_bytes(self) -> bytes:
        return b"challenge" + join_fields(self.node.encode(), self.username.encode(), self.contact, self.d_auth.encode(), self.challenge)


@dataclass(frozen=True)
class EmailForward(Message):
    TAG: ClassVar[int] = 0x07
    d_auth: str
    email: bytes


@dataclass(frozen=True)
class Confirmation(Message):
    TAG: ClassVar[int] = 0x08
    node: str
    username: str
    contact: bytes
    sig: bytes

    def signed_bytes(self) -> bytes:
        return b"peer-confirmation" + join_fields(self.username.encode(), self.contact)


@dataclass(frozen=True)
class RegistrationConfirmation(Message):
    TAG: ClassVar[int] = 0x09
    node: str
    username: str
    contact: bytes
    sig: bytes

    def signed_bytes(self) -> bytes:
        return b"registered" + join_fields(self.username.encode(), self.contact)


# -- contact initiation and handshake -----------------------------------------


@dataclass(frozen=True)
class MInit(Message):
    TAG: ClassVar[int] = 0x0A
    ga: bytes
    nonce: bytes
    ciphertext: bytes


IDENTITY_NAMED = b"N"
IDENTITY_ANONYMOUS = b"A"


@dataclass(frozen=True)
class InitInner(Message):
    """Plaintext sealed inside :class:`MInit`."""

    TAG: ClassVar[int] = 0x0B
    reply_surb: bytes
    codeword: bytes
    identity_kind: bytes
    identity: bytes


@dataclass(frozen=True)
class AddFriendReply(Message):
    TAG: ClassVar[int] = 0x0C
    ga: bytes
    gb: bytes
    sig: bytes
    mac: bytes
    ciphertext: bytes


@dataclass(frozen=True)
class ReplyInner(Message):
    TAG: ClassVar[int] = 0x0D
    reply_surb: bytes
    lookup_nonce: bytes


@dataclass(frozen=True)
class AddFriendFinish(Message):
    TAG: ClassVar[int] = 0x0E
    gb: bytes
    sig: bytes
    mac: bytes
    ciphertext: bytes


@dataclass(frozen=True)
class FinishInner(Message):
    TAG: ClassVar[int] = 0x0F
    reply_surb: bytes


@dataclass(frozen=True)
class SessionMessage(Message):
    TAG: ClassVar[int] = 0x10
    session: bytes
    ciphertext: bytes


@dataclass(frozen=True)
class SessionInner(Message):
    TAG: ClassVar[int] = 0x11
    body: bytes
    reply_surb: bytes


def join_fields(*parts: bytes) -> bytes:
    return b"".join(struct.pack(">H", len(p)) + p for p in parts)
