"""Fixed-size onion packets, single-use reply blocks and per-hop processing.

Packet = header || payload.

    header  = alpha (32) || beta (MAX_HOPS * SLOT_LEN) || gamma (16)
    slot    = flag (1) || node id (16) || delay in microseconds (8)
              || inbox (16) || next gamma (16)
    payload = PAYLOAD_LEN bytes, onion-layered with one MAC tag per hop

Each hop verifies the header MAC and the outermost payload tag, so a single
flipped bit anywhere in the packet is caught by the very next hop that
processes it. The format is self-contained; it keeps the properties of the
published Sphinx design (fixed length, per-hop unwrap, integrity) but not
its byte layout.
"""

from __future__ import annotations

import hmac
import struct
from dataclasses import dataclass, field
from enum import Enum

from .crypto import (
    ELEMENT_LEN,
    GroupElement,
    InvalidElementError,
    KeyPair,
    Randomness,
    Scalar,
    SYSTEM_RANDOM,
    dh_secret,
    fake_public_key,
    hash_to_scalar,
    kdf_many,
    keystream,
    mac,
    xor_bytes,
)

NodeId = str

NODE_ID_LEN = 16
INBOX_LEN = 16
TAG_LEN = 16
MAX_HOPS = 5
ROUTING_LEN = 1 + NODE_ID_LEN + 8 + INBOX_LEN
SLOT_LEN = ROUTING_LEN + TAG_LEN
BETA_LEN = MAX_HOPS * SLOT_LEN
HEADER_LEN = ELEMENT_LEN + BETA_LEN + TAG_LEN
PAYLOAD_LEN = 2048
CONTENT_LEN = PAYLOAD_LEN - MAX_HOPS * TAG_LEN
PACKET_LEN = HEADER_LEN + PAYLOAD_LEN
PAYLOAD_KEY_LEN = 32
SURB_LEN = NODE_ID_LEN + HEADER_LEN + 1 + MAX_HOPS * PAYLOAD_KEY_LEN

BLACK_HOLE: NodeId = "<black-hole>"

_FORWARD = 0x01
_DELIVER = 0x02


class SphinxError(Exception):
    pass


class RouteError(SphinxError):
    pass


class PayloadSizeError(SphinxError):
    pass


def encode_node_id(node: NodeId) -> bytes:
    raw = node.encode()
    if not 0 < len(raw) <= NODE_ID_LEN:
        raise RouteError(f"node id {node!r} must encode to 1..{NODE_ID_LEN} bytes")
    return raw.ljust(NODE_ID_LEN, b"\x00")


def decode_node_id(raw: bytes) -> NodeId:
    return raw.rstrip(b"\x00").decode()


@dataclass(frozen=True)
class ContactInfo:
    """Public key, provider and inbox needed to route a message to a user."""

    pk: GroupElement
    provider: NodeId
    inbox: bytes

    ENCODED_LEN = ELEMENT_LEN + NODE_ID_LEN + INBOX_LEN

    def __post_init__(self):
        if len(self.inbox) != INBOX_LEN:
            raise ValueError("inbox id must be 16 bytes")

    def to_bytes(self) -> bytes:
        return self.pk.to_bytes() + encode_node_id(self.provider) + self.inbox

    @classmethod
    def from_bytes(cls, data: bytes) -> ContactInfo:
        if len(data) != cls.ENCODED_LEN:
            raise ValueError("bad contact info length")
        return cls(
            GroupElement.from_bytes(data[:32]),
            decode_node_id(data[32:48]),
            bytes(data[48:64]),
        )

    @property
    def is_fake(self) -> bool:
        return self.provider == BLACK_HOLE


def fake_contact() -> ContactInfo:
    return ContactInfo(fake_public_key(), BLACK_HOLE, bytes(INBOX_LEN))


@dataclass(frozen=True)
class Hop:
    node: NodeId
    pubkey: GroupElement
    delay: float = 0.0


@dataclass(frozen=True)
class RouteSpec:
    """Ordered hops ending at the destination's provider (or the black hole)."""

    hops: tuple[Hop, ...]
    destination: ContactInfo

    def __post_init__(self):
        object.__setattr__(self, "hops", tuple(self.hops))
        if not 1 <= len(self.hops) <= MAX_HOPS:
            raise RouteError(f"route length must be 1..{MAX_HOPS}")
        if any(h.delay < 0 for h in self.hops):
            raise RouteError("negative hop delay")
        if self.hops[-1].node != self.destination.provider:
            raise RouteError("route must terminate at the destination provider")


@dataclass(frozen=True)
class SphinxPacket:
    header: bytes
    payload: bytes
    # transport envelope: where the packet enters the mix network; not part of the bytes
    first_hop: NodeId = field(default="", compare=False)

    def __post_init__(self):
        if len(self.header) != HEADER_LEN or len(self.payload) != PAYLOAD_LEN:
            raise SphinxError("malformed packet length")

    def to_bytes(self) -> bytes:
        return self.header + self.payload

    @classmethod
    def from_bytes(cls, data: bytes, first_hop: NodeId = "") -> SphinxPacket:
        if len(data) != PACKET_LEN:
            raise SphinxError("malformed packet length")
        return cls(bytes(data[:HEADER_LEN]), bytes(data[HEADER_LEN:]), first_hop)


@dataclass(frozen=True)
class Surb:
    first_hop: NodeId
    header: bytes
    payload_keys: tuple[bytes, ...]

    def to_bytes(self) -> bytes:
        keys = b"".join(self.payload_keys).ljust(MAX_HOPS * PAYLOAD_KEY_LEN, b"\x00")
        return encode_node_id(self.first_hop) + self.header + bytes([len(self.payload_keys)]) + keys

    @classmethod
    def from_bytes(cls, data: bytes) -> Surb:
        if len(data) != SURB_LEN:
            raise SphinxError("malformed SURB length")
        first = decode_node_id(data[:NODE_ID_LEN])
        header = bytes(data[NODE_ID_LEN : NODE_ID_LEN + HEADER_LEN])
        count = data[NODE_ID_LEN + HEADER_LEN]
        if not 1 <= count <= MAX_HOPS:
            raise SphinxError("bad payload key count")
        off = NODE_ID_LEN + HEADER_LEN + 1
        keys = tuple(bytes(data[off + i * 32 : off + (i + 1) * 32]) for i in range(count))
        return cls(first, header, keys)

    def __repr__(self) -> str:
        return f"Surb(first_hop={self.first_hop!r}, header={self.header[:6].hex()}…)"


# -- processing results --------------------------------------------------------


class DropReason(str, Enum):
    INTEGRITY = "integrity"
    REPLAY = "replay"
    BLACK_HOLE = "black_hole"
    MALFORMED = "malformed"


@dataclass(frozen=True)
class Forward:
    next: NodeId
    delay: float
    packet: SphinxPacket


@dataclass(frozen=True)
class Deliver:
    inbox: bytes
    payload: bytes


@dataclass(frozen=True)
class Drop:
    reason: DropReason


# -- per-hop key schedule ------------------------------------------------------


@dataclass(frozen=True)
class _HopKeys:
    rho: bytes
    mu: bytes
    tau: bytes
    payload: bytes
    blind: Scalar


def _hop_keys(alpha: bytes, shared: bytes) -> _HopKeys:
    # the u-coordinate secret ignores the sign of alpha; keying on alpha too binds every header bit
    rho, mu, tau, payload = kdf_many(alpha + shared, "sphinx rho", "sphinx mu", "sphinx tau", "sphinx payload")
    return _HopKeys(rho, mu, tau, payload, hash_to_scalar(b"pudding/sphinx-blind", alpha, shared))


def _header_mac(key: bytes, beta: bytes) -> bytes:
    return mac(key, beta)[:TAG_LEN]


def _payload_mac(key: bytes, body: bytes) -> bytes:
    return mac(key, b"payload" + body)[:TAG_LEN]


def _routing_slot(flag: int, node: NodeId, delay: float, inbox: bytes) -> bytes:
    micros = int(round(delay * 1_000_000))
    return bytes([flag]) + encode_node_id(node) + struct.pack(">Q", micros) + inbox


def quantize_delay(delay: float) -> float:
    """Delay as it survives the header encoding (microsecond resolution)."""
    return int(round(delay * 1_000_000)) / 1_000_000


# -- construction --------------------------------------------------------------


def create_surb(route: RouteSpec, rng: Randomness = SYSTEM_RANDOM) -> Surb:
    """Build a reply block for ``route``.

    All randomness (the ephemeral exponent and last-hop padding) is drawn from
    ``rng``, so a :class:`~pudding.crypto.DetPrg` makes the result
    reproducible byte for byte.
    """
    hops = route.hops
    v = len(hops)
    acc = Scalar.random(rng)
    keys: list[_HopKeys] = []
    alpha0 = b""
    for i, hop in enumerate(hops):
        alpha = GroupElement.generator_mul(acc).encoded
        shared = dh_secret(hop.pubkey, acc)
        hk = _hop_keys(alpha, shared)
        keys.append(hk)
        if i == 0:
            alpha0 = alpha
        acc = acc * hk.blind

    streams = [keystream(k.rho, BETA_LEN + SLOT_LEN) for k in keys]
    filler = b""
    for i in range(v - 1):
        filler = xor_bytes(filler + bytes(SLOT_LEN), streams[i][BETA_LEN - i * SLOT_LEN :])

    last = hops[-1]
    final_slot = _routing_slot(_DELIVER, last.node, last.delay, route.destination.inbox)
    pad_len = (MAX_HOPS - v) * SLOT_LEN
    tail = final_slot + bytes(TAG_LEN) + (rng.read(pad_len) if pad_len else b"")
    beta = xor_bytes(tail, streams[v - 1][: len(tail)]) + filler
    gamma = _header_mac(keys[v - 1].mu, beta)

    for i in range(v - 2, -1, -1):
        slot = _routing_slot(_FORWARD, hops[i + 1].node, hops[i].delay, bytes(INBOX_LEN)) + gamma
        beta = xor_bytes(slot + beta[: BETA_LEN - SLOT_LEN], streams[i][:BETA_LEN])
        gamma = _header_mac(keys[i].mu, beta)

    header = alpha0 + beta + gamma
    assert len(header) == HEADER_LEN
    return Surb(hops[0].node, header, tuple(k.payload for k in keys))


def _frame_content(content: bytes) -> bytes:
    if len(content) > CONTENT_LEN - 2:
        raise PayloadSizeError(f"payload of {len(content)} bytes exceeds {CONTENT_LEN - 2}")
    return struct.pack(">H", len(content)) + content


def _unframe_content(raw: bytes) -> bytes | None:
    n = struct.unpack(">H", raw[:2])[0]
    if n > CONTENT_LEN - 2:
        return None
    return raw[2 : 2 + n]


def _payload_onion(payload_keys: tuple[bytes, ...], content: bytes) -> bytes:
    v = len(payload_keys)
    streams = [keystream(k, PAYLOAD_LEN) for k in payload_keys]
    # filler: bytes each hop appends, as seen after that hop
    filler = b""
    for i in range(v):
        filler = xor_bytes(filler + bytes(TAG_LEN), streams[i][PAYLOAD_LEN - (i + 1) * TAG_LEN :])
    framed = _frame_content(content)
    body = framed.ljust(PAYLOAD_LEN - v * TAG_LEN, b"\x00") + filler
    for i in range(v - 1, -1, -1):
        pre = xor_bytes(body, streams[i])
        assert pre[-TAG_LEN:] == bytes(TAG_LEN)
        inner = pre[: PAYLOAD_LEN - TAG_LEN]
        body = _payload_mac(payload_keys[i], inner) + inner
    return body


def apply_surb(surb: Surb, payload: bytes) -> SphinxPacket:
    """Wrap ``payload`` for the SURB's hidden route; the caller learns nothing of it."""
    return SphinxPacket(surb.header, _payload_onion(surb.payload_keys, payload), surb.first_hop)


def peel_payload(payload_keys: tuple[bytes, ...], payload: bytes) -> bytes | None:
    """Content of a packet wrapped under known payload keys, as the final hop would see it."""
    body = payload
    for k in payload_keys:
        if not _ct_eq(_payload_mac(k, body[TAG_LEN:]), body[:TAG_LEN]):
            return None
        body = xor_bytes(body[TAG_LEN:] + bytes(TAG_LEN), keystream(k, PAYLOAD_LEN))
    return _unframe_content(body[:CONTENT_LEN])


def build_packet(route: RouteSpec, payload: bytes, rng: Randomness = SYSTEM_RANDOM) -> SphinxPacket:
    _frame_content(payload)  # size check before spending group operations
    return apply_surb(create_surb(route, rng), payload)


# -- processing ----------------------------------------------------------------


def process_at_node(node_keys: KeyPair, packet: SphinxPacket, seen_tags: set[bytes] | None = None):
    """Strip one layer. Returns :class:`Forward`, :class:`Deliver` or :class:`Drop`."""
    header = packet.header
    alpha, beta, gamma = header[:ELEMENT_LEN], header[ELEMENT_LEN:-TAG_LEN], header[-TAG_LEN:]
    try:
        alpha_el = GroupElement.from_bytes(alpha)
    except InvalidElementError:
        return Drop(DropReason.INTEGRITY)
    shared = dh_secret(alpha_el, node_keys.sk)
    hk = _hop_keys(alpha, shared)
    if not _ct_eq(_header_mac(hk.mu, beta), gamma):
        return Drop(DropReason.INTEGRITY)

    body = packet.payload
    if not _ct_eq(_payload_mac(hk.payload, body[TAG_LEN:]), body[:TAG_LEN]):
        return Drop(DropReason.INTEGRITY)

    if seen_tags is not None:
        if hk.tau in seen_tags:
            return Drop(DropReason.REPLAY)
        seen_tags.add(hk.tau)

    new_payload = xor_bytes(body[TAG_LEN:] + bytes(TAG_LEN), keystream(hk.payload, PAYLOAD_LEN))
    block = xor_bytes(beta + bytes(SLOT_LEN), keystream(hk.rho, BETA_LEN + SLOT_LEN))
    flag = block[0]
    node = block[1 : 1 + NODE_ID_LEN]
    (micros,) = struct.unpack(">Q", block[1 + NODE_ID_LEN : 9 + NODE_ID_LEN])
    inbox = block[9 + NODE_ID_LEN : ROUTING_LEN]
    next_gamma = block[ROUTING_LEN:SLOT_LEN]

    if flag == _DELIVER:
        content = _unframe_content(new_payload[:CONTENT_LEN])
        if content is None:
            return Drop(DropReason.MALFORMED)
        return Deliver(inbox, content)
    if flag != _FORWARD:
        return Drop(DropReason.MALFORMED)
    try:
        next_node = decode_node_id(node)
    except UnicodeDecodeError:
        return Drop(DropReason.MALFORMED)
    if next_node == BLACK_HOLE:
        return Drop(DropReason.BLACK_HOLE)
    alpha_next = (alpha_el * hk.blind).encoded
    out = SphinxPacket(alpha_next + block[SLOT_LEN:] + next_gamma, new_payload, next_node)
    return Forward(next_node, micros / 1_000_000, out)


def _ct_eq(a: bytes, b: bytes) -> bool:
    return hmac.compare_digest(a, b)


# -- fragmentation -------------------------------------------------------------

FRAGMENT_HEADER_LEN = 8 + 1 + 1
FRAGMENT_DATA_LEN = CONTENT_LEN - 2 - FRAGMENT_HEADER_LEN
MAX_FRAGMENTS = 8


def fragment(message: bytes, msg_id: bytes) -> list[bytes]:
    """Split ``message`` into sequence-numbered frames that each fit one packet."""
    if len(msg_id) != 8:
        raise ValueError("fragment message id must be 8 bytes")
    chunks = [message[i : i + FRAGMENT_DATA_LEN] for i in range(0, len(message), FRAGMENT_DATA_LEN)] or [b""]
    if len(chunks) > MAX_FRAGMENTS:
        raise PayloadSizeError(f"message needs {len(chunks)} fragments, limit is {MAX_FRAGMENTS}")
    total = len(chunks)
    return [msg_id + bytes([i, total]) + c for i, c in enumerate(chunks)]


class Reassembler:
    """Collects fragments per message id and yields complete messages."""

    def __init__(self):
        self._parts: dict[bytes, dict[int, bytes]] = {}
        self._done: set[bytes] = set()

    def add(self, frame: bytes) -> bytes | None:
        if len(frame) < FRAGMENT_HEADER_LEN:
            return None
        msg_id, idx, total = frame[:8], frame[8], frame[9]
        if total == 0 or idx >= total or msg_id in self._done:
            return None
        parts = self._parts.setdefault(msg_id, {})
        parts.setdefault(idx, frame[FRAGMENT_HEADER_LEN:])
        if len(parts) < total:
            return None
        del self._parts[msg_id]
        self._done.add(msg_id)
        return b"".join(parts[i] for i in range(total))


def describe_packet(packet: SphinxPacket, node_keys: KeyPair | None = None) -> str:
    """Debug view. Routing plaintext is shown only for the hop whose keys are given."""
    lines = [
        f"SphinxPacket first_hop={packet.first_hop or '?'} len={PACKET_LEN}",
        f"  alpha={packet.header[:ELEMENT_LEN].hex()}",
        f"  beta=<{BETA_LEN} bytes encrypted>",
        f"  gamma={packet.header[-TAG_LEN:].hex()}",
        f"  payload=<{PAYLOAD_LEN} bytes encrypted>",
    ]
    if node_keys is not None:
        res = process_at_node(node_keys, packet)
        if isinstance(res, Forward):
            lines.append(f"  [own hop] forward to {res.next} after {res.delay:.6f}s")
        elif isinstance(res, Deliver):
            lines.append(f"  [own hop] deliver to inbox {res.inbox.hex()}")
        else:
            lines.append(f"  [own hop] drop ({res.reason.value})")
    return "\n".join(lines)
