from __future__ import annotations

import hashlib
import hmac
import struct

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from pudding.crypto import DetPrg, KeyPair
from pudding.sphinx import (
    BLACK_HOLE,
    CONTENT_LEN,
    FRAGMENT_DATA_LEN,
    HEADER_LEN,
    MAX_FRAGMENTS,
    MAX_HOPS,
    PACKET_LEN,
    PAYLOAD_LEN,
    SURB_LEN,
    ContactInfo,
    Deliver,
    Drop,
    DropReason,
    Forward,
    Hop,
    PayloadSizeError,
    Reassembler,
    RouteError,
    RouteSpec,
    SphinxPacket,
    Surb,
    apply_surb,
    build_packet,
    create_surb,
    describe_packet,
    fake_contact,
    fragment,
    peel_payload,
)

KEYS = {f"n{i}": KeyPair.generate(DetPrg(hashlib.sha256(f"node {i}".encode()).digest())) for i in range(MAX_HOPS)}
PROVIDER = "n4"
INBOX = bytes(range(16))
DEST = ContactInfo(KeyPair.generate(DetPrg(bytes(32))).pk, PROVIDER, INBOX)
PACKET_GOLDEN_SHA256 = "169aa13fe6972efff6e5765e3797a45ba5cce5569f16100760c7e9d425a2a773"
SURB_GOLDEN_SHA256 = "dd015f275aa4a2599a5a2b9e176c26da4fcc40543c5e50e07bef334f17adb48a"


def seed(label: str) -> bytes:
    return hashlib.sha256(label.encode()).digest()


def route(names: list[str], delays: list[float] | None = None, dest: ContactInfo = DEST) -> RouteSpec:
    delays = delays or [0.001 * (i + 1) for i in range(len(names))]
    return RouteSpec(tuple(Hop(n, KEYS[n].pk, d) for n, d in zip(names, delays)), dest)


def walk(packet: SphinxPacket, names: list[str]):
    results = []
    for name in names:
        res = process_at(name, packet)
        results.append(res)
        if not isinstance(res, Forward):
            break
        packet = res.packet
    return results


def process_at(name, packet, seen=None):
    from pudding.sphinx import process_at_node

    return process_at_node(KEYS[name], packet, seen)


def dest_for(last: str) -> ContactInfo:
    return ContactInfo(DEST.pk, last, INBOX)


def test_sizes():
    assert HEADER_LEN == 333
    assert PAYLOAD_LEN == 2048
    assert PACKET_LEN == 2381
    assert SURB_LEN == 510


def test_one_hop_delivery():
    pkt = build_packet(route(["n0"], dest=dest_for("n0")), b"hello")
    assert walk(pkt, ["n0"]) == [Deliver(INBOX, b"hello")]


def test_three_mix_route_delivers_intact():
    names = ["n0", "n1", "n2", PROVIDER]
    pkt = build_packet(route(names, [0.25, 0.5, 0.125, 0.0]), b"payload bytes")
    results = walk(pkt, names)
    assert [type(r) for r in results] == [Forward, Forward, Forward, Deliver]
    assert [r.delay for r in results[:3]] == [0.25, 0.5, 0.125]
    assert [r.next for r in results[:3]] == ["n1", "n2", PROVIDER]
    assert results[-1] == Deliver(INBOX, b"payload bytes")


@given(st.integers(min_value=1, max_value=MAX_HOPS), st.binary(max_size=CONTENT_LEN - 2), st.binary(min_size=32, max_size=32))
@settings(max_examples=25, deadline=None)
def test_any_route_length_delivers_and_keeps_length(v, payload, s):
    names = [f"n{i}" for i in range(v)]
    pkt = build_packet(route(names, dest=dest_for(names[-1])), payload, DetPrg(s))
    assert len(pkt.to_bytes()) == PACKET_LEN
    for res in walk(pkt, names)[:-1]:
        assert len(res.packet.to_bytes()) == PACKET_LEN
    assert walk(pkt, names)[-1] == Deliver(INBOX, payload)


def test_header_byte_flip_sweep_rejected_at_first_hop():
    names = ["n0", "n1", "n2", PROVIDER]
    pkt = build_packet(route(names), b"x", DetPrg(seed("flip")))
    for i in range(HEADER_LEN):
        h = bytearray(pkt.header)
        h[i] ^= 0x01
        res = process_at("n0", SphinxPacket(bytes(h), pkt.payload))
        assert isinstance(res, Drop) and res.reason == DropReason.INTEGRITY, i


def test_alpha_sign_bit_flip_rejected():
    # the hop secret is sign-blind, so this bit is only caught by keying on alpha
    pkt = build_packet(route(["n0", "n1", PROVIDER]), b"x", DetPrg(seed("sign")))
    h = bytearray(pkt.header)
    h[31] ^= 0x80
    assert process_at("n0", SphinxPacket(bytes(h), pkt.payload)) == Drop(DropReason.INTEGRITY)


@given(st.integers(min_value=0, max_value=PACKET_LEN * 8 - 1))
@settings(max_examples=60, deadline=None)
def test_any_bit_flip_dropped_at_next_hop(bit):
    names = ["n0", "n1", "n2", PROVIDER]
    pkt = build_packet(route(names), b"integrity", DetPrg(seed("bits")))
    raw = bytearray(pkt.to_bytes())
    raw[bit // 8] ^= 1 << (bit % 8)
    res = process_at("n0", SphinxPacket.from_bytes(bytes(raw)))
    assert isinstance(res, Drop) and res.reason == DropReason.INTEGRITY


def test_flip_after_first_hop_caught_at_second():
    names = ["n0", "n1", "n2", PROVIDER]
    fwd = process_at("n0", build_packet(route(names), b"x"))
    p = bytearray(fwd.packet.payload)
    p[100] ^= 4
    res = process_at("n1", SphinxPacket(fwd.packet.header, bytes(p)))
    assert res == Drop(DropReason.INTEGRITY)


def test_wrong_node_keys_reject():
    pkt = build_packet(route(["n0", "n1", PROVIDER]), b"x")
    assert process_at("n1", pkt) == Drop(DropReason.INTEGRITY)


def test_replay_rejected():
    pkt = build_packet(route(["n0", "n1", PROVIDER]), b"x")
    seen: set[bytes] = set()
    assert isinstance(process_at("n0", pkt, seen), Forward)
    assert process_at("n0", pkt, seen) == Drop(DropReason.REPLAY)


def test_surb_single_use_by_replay_tracking():
    surb = create_surb(route(["n0", "n1", PROVIDER]))
    seen: set[bytes] = set()
    assert isinstance(process_at("n0", apply_surb(surb, b"first"), seen), Forward)
    assert process_at("n0", apply_surb(surb, b"second"), seen) == Drop(DropReason.REPLAY)


def test_black_hole_route_drops():
    fake = fake_contact()
    hops = (Hop("n0", KEYS["n0"].pk, 0.1), Hop("n1", KEYS["n1"].pk, 0.1), Hop(BLACK_HOLE, fake.pk, 0.0))
    surb = create_surb(RouteSpec(hops, fake))
    assert len(surb.to_bytes()) == SURB_LEN
    results = walk(apply_surb(surb, b"m init"), ["n0", "n1"])
    assert isinstance(results[0], Forward)
    assert results[1] == Drop(DropReason.BLACK_HOLE)


def test_surb_determinism_and_freshness():
    r = route(["n0", "n1", "n2", PROVIDER])
    assert create_surb(r, DetPrg(seed("s"))).to_bytes() == create_surb(r, DetPrg(seed("s"))).to_bytes()
    assert create_surb(r).to_bytes() != create_surb(r).to_bytes()


def test_surb_roundtrip_and_fake_same_length():
    r = route(["n0", "n1", "n2", PROVIDER])
    surb = create_surb(r, DetPrg(seed("rt")))
    assert Surb.from_bytes(surb.to_bytes()) == surb
    fake = fake_contact()
    fr = RouteSpec(tuple(r.hops[:3]) + (Hop(BLACK_HOLE, fake.pk, 0.0),), fake)
    assert len(create_surb(fr).to_bytes()) == len(surb.to_bytes())


def test_surb_apply_reaches_creator_inbox():
    names = ["n0", "n1", "n2", PROVIDER]
    surb = create_surb(route(names))
    assert walk(apply_surb(surb, b"reply"), names)[-1] == Deliver(INBOX, b"reply")


def test_peel_payload_matches_final_hop_view():
    surb = create_surb(route(["n0", "n1", PROVIDER]))
    pkt = apply_surb(surb, b"observed")
    assert peel_payload(surb.payload_keys, pkt.payload) == b"observed"
    assert peel_payload(surb.payload_keys[1:], pkt.payload) is None


def test_route_validation():
    with pytest.raises(RouteError):
        RouteSpec((), DEST)
    with pytest.raises(RouteError):
        route(["n0", "n1"])  # does not end at the destination provider
    with pytest.raises(RouteError):
        route(["n0", PROVIDER], [-1.0, 0.0])
    with pytest.raises(RouteError):
        RouteSpec(tuple(Hop(PROVIDER, KEYS[PROVIDER].pk) for _ in range(MAX_HOPS + 1)), DEST)


def test_oversize_payload():
    with pytest.raises(PayloadSizeError):
        build_packet(route(["n0", PROVIDER]), bytes(CONTENT_LEN - 1))


def test_header_first_layer_matches_oracle():
    # recompute the first hop's view with the oracles alone
    names = ["n0", "n1", "n2", PROVIDER]
    r = route(names, [0.375, 0.5, 0.25, 0.0])
    s = seed("oracle")
    pkt = build_packet(r, b"oracle check", DetPrg(s))
    x = int.from_bytes(DetPrg(s).read(64), "little") % oracles.L
    assert pkt.header[:32] == oracles.base_mul(x)
    shared = oracles.u_coordinate(oracles.point_mul(KEYS["n0"].pk.to_bytes(), x))
    rho = oracles.hkdf_sha256(pkt.header[:32] + shared, b"sphinx rho")
    mu = oracles.hkdf_sha256(pkt.header[:32] + shared, b"sphinx mu")
    pay = oracles.hkdf_sha256(pkt.header[:32] + shared, b"sphinx payload")
    beta, gamma = pkt.header[32:-16], pkt.header[-16:]
    assert hmac.new(mu, beta, hashlib.sha256).digest()[:16] == gamma
    slot = bytes(a ^ b for a, b in zip(beta[:41], oracles.chacha20_stream(rho, 41)))
    assert slot[0] == 0x01
    assert slot[1:17] == b"n1".ljust(16, b"\x00")
    assert struct.unpack(">Q", slot[17:25])[0] == 375_000
    assert hmac.new(pay, b"payload" + pkt.payload[16:], hashlib.sha256).digest()[:16] == pkt.payload[:16]


def test_golden_packet_and_surb():
    r = route(["n0", "n1", "n2", PROVIDER], [0.5, 0.25, 0.125, 0.0])
    pkt = build_packet(r, b"golden", DetPrg(seed("golden packet")))
    surb = create_surb(r, DetPrg(seed("golden surb")))
    assert hashlib.sha256(pkt.to_bytes()).hexdigest() == PACKET_GOLDEN_SHA256
    assert hashlib.sha256(surb.to_bytes()).hexdigest() == SURB_GOLDEN_SHA256


def test_describe_packet_hides_foreign_hops():
    pkt = build_packet(route(["n0", "n1", PROVIDER]), b"x")
    text = describe_packet(pkt)
    assert "n1" not in text
    assert "forward to n1" in describe_packet(pkt, KEYS["n0"])
    assert "n1" not in describe_packet(pkt, KEYS["n1"])


@given(st.binary(max_size=FRAGMENT_DATA_LEN * MAX_FRAGMENTS), st.randoms(use_true_random=False))
@settings(max_examples=30)
def test_fragment_reassembly_any_order(message, rnd):
    frames = fragment(message, b"msgid-01")
    assert all(len(f) <= CONTENT_LEN - 2 for f in frames)
    rnd.shuffle(frames)
    ra = Reassembler()
    outs = [ra.add(f) for f in frames]
    assert outs[-1] == message and all(o is None for o in outs[:-1])
    assert ra.add(frames[0]) is None


def test_fragment_limits():
    with pytest.raises(PayloadSizeError):
        fragment(bytes(FRAGMENT_DATA_LEN * MAX_FRAGMENTS + 1), b"12345678")
    with pytest.raises(ValueError):
        fragment(b"x", b"short")
    assert Reassembler().add(b"tiny") is None
