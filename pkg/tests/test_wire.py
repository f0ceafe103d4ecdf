from __future__ import annotations

import dataclasses
import json
from pathlib import Path

import pytest
from hypothesis import given
from hypothesis import strategies as st

from pudding import wire
from pudding.wire import (
    BlindingKeyNotice,
    Challenge,
    Confirmation,
    EmailForward,
    LookupRequest,
    LookupResponse,
    Message,
    RegisterRequest,
    WireError,
    decode,
)

GOLDEN = Path(__file__).parent / "golden" / "wire.json"

SAMPLES = {
    "lookup_request": LookupRequest("bob@mail-b.example", bytes(range(16)), b"\xaa" * 4),
    "lookup_response": LookupResponse("disc-0", bytes(16), b"surb", b"bpk", b"sig"),
    "blinding_key_notice": BlindingKeyNotice("disc-1", b"\x01" * 16, b"\x02" * 32, b"\x03" * 4),
    "register_request": RegisterRequest("alice@mail-a.example", b"\x04" * 8, "disc-2"),
    "challenge": Challenge("disc-3", "alice@mail-a.example", b"\x05", "disc-2", b"\x06" * 16, b""),
    "email_forward": EmailForward("disc-2", b"From: x\r\n"),
    "confirmation": Confirmation("disc-0", "alice@mail-a.example", b"\x07", b"\x08"),
}


def by_hand(tag: int, *values: bytes | str) -> bytes:
    out = bytes([tag])
    for v in values:
        raw = v.encode() if isinstance(v, str) else v
        out += len(raw).to_bytes(2, "big") + raw
    return out


def message_classes() -> list[type[Message]]:
    return [c for c in vars(wire).values() if isinstance(c, type) and issubclass(c, Message) and c is not Message]


def test_tags_unique_and_fixed():
    tags = [c.TAG for c in message_classes()]
    assert len(tags) == len(set(tags))
    assert LookupRequest.TAG == 0x01 and Confirmation.TAG == 0x08


@pytest.mark.parametrize("name", sorted(SAMPLES))
def test_encoding_matches_hand_layout(name):
    msg = SAMPLES[name]
    values = [getattr(msg, f.name) for f in dataclasses.fields(msg)]
    assert msg.encode() == by_hand(msg.TAG, *values)


def test_golden_file():
    golden = json.loads(GOLDEN.read_text())
    assert sorted(golden) == sorted(SAMPLES)
    for name, msg in SAMPLES.items():
        assert msg.encode().hex() == golden[name]
        assert decode(bytes.fromhex(golden[name])) == msg


def _instances():
    def build(cls):
        args = {}
        for f in dataclasses.fields(cls):
            args[f.name] = st.text(max_size=40) if f.type == "str" else st.binary(max_size=80)
        return st.builds(cls, **args)

    return st.one_of([build(c) for c in message_classes()])


@given(_instances())
def test_roundtrip(msg):
    assert decode(msg.encode()) == msg


@given(_instances())
def test_field_spans_locate_values(msg):
    raw = msg.encode()
    for name, (a, b) in msg.field_spans().items():
        v = getattr(msg, name)
        assert raw[a:b] == (v.encode() if isinstance(v, str) else v)


@given(_instances(), st.data())
def test_truncation_rejected(msg, data):
    raw = msg.encode()
    cut = data.draw(st.integers(min_value=0, max_value=len(raw) - 1))
    with pytest.raises(WireError):
        decode(raw[:cut])


def test_decode_errors():
    raw = SAMPLES["lookup_request"].encode()
    with pytest.raises(WireError):
        decode(raw + b"\x00")
    with pytest.raises(WireError):
        decode(b"\xff" + raw[1:])
    with pytest.raises(WireError):
        decode(by_hand(LookupRequest.TAG, b"\xff\xfe", b"n", b"s"))


def test_oversize_field():
    with pytest.raises(WireError):
        EmailForward("d", bytes(0x10000)).encode()
