from __future__ import annotations

import hashlib
from dataclasses import replace

import pytest
from hypothesis import given
from hypothesis import strategies as st

from pudding.crypto import DetPrg
from pudding.emailsim import (
    DomainKeyStore,
    EmailAdversary,
    EmailError,
    EmailMessage,
    EmailService,
    Mailbox,
    MailServer,
    adversary_forge,
    dkim_verify,
    domain_of,
    parse_verification,
    reply,
    verification_body,
)

CANONICAL_GOLDEN = (
    b"From: alice@mail-a.example\nTo: disc-0@nodes.example\nSubject: hi\n"
    b"Body-Length: 5\nAttachment-Length: 0\n\nhello"
)


def rng(label: str) -> DetPrg:
    return DetPrg(hashlib.sha256(label.encode()).digest())


@pytest.fixture
def world():
    store = DomainKeyStore()
    return store, MailServer("mail-a.example", store, rng("a")), MailServer("mail-b.example", store, rng("b"))


def test_canonical_golden():
    msg = EmailMessage("alice@mail-a.example", "disc-0@nodes.example", "hi", "hello")
    assert msg.canonical() == CANONICAL_GOLDEN


def test_domain_of():
    assert domain_of("x@Mail-A.example") == "mail-a.example"
    for bad in ("nodomain", "@d", "u@"):
        with pytest.raises(EmailError):
            domain_of(bad)


def test_sign_verify_and_tamper(world):
    store, a, _ = world
    msg = a.dkim_sign(EmailMessage("alice@mail-a.example", "r@x.example", "s", "body"))
    assert dkim_verify(store, msg)
    assert not dkim_verify(store, replace(msg, body="body!"))
    assert not dkim_verify(store, replace(msg, sender="mallory@mail-a.example"))
    assert not dkim_verify(store, replace(msg, signature=b""))


def test_refuses_foreign_sender(world):
    _, a, _ = world
    with pytest.raises(EmailError):
        a.dkim_sign(EmailMessage("bob@mail-b.example", "r@x.example", "s", "b"))


def test_unknown_domain_and_cross_domain_keys(world):
    store, a, b = world
    assert not dkim_verify(store, EmailMessage("u@nowhere.example", "r", "s", "b", signing_domain="nowhere.example", signature=b"\x00" * 64))
    # a signature made with one domain's key never verifies as another domain's mail
    for i in range(10):
        msg = EmailMessage(f"u{i}@mail-b.example", "r@x.example", "s", f"b{i}")
        signed_by_a = replace(msg, signing_domain="mail-b.example", signature=a.dkim_sign(replace(msg, sender=f"u{i}@mail-a.example")).signature)
        assert not dkim_verify(store, signed_by_a)
        assert dkim_verify(store, b.dkim_sign(msg))


def test_forge_without_key_fails_and_compromise_succeeds(world):
    store, a, _ = world
    attacker = EmailAdversary(rng("evil"))
    forged = adversary_forge(attacker, "alice@mail-a.example", "yes", recipient="disc-0@nodes.example")
    assert not dkim_verify(store, forged)
    attacker.compromise(a)
    assert dkim_verify(store, adversary_forge(attacker, "alice@mail-a.example", "yes"))


def test_stale_key_after_rotation(world):
    store, a, _ = world
    old = a.dkim_sign(EmailMessage("alice@mail-a.example", "r@x.example", "s", "b"))
    a.rotate()
    assert not dkim_verify(store, old)


@given(st.text(max_size=60), st.text(max_size=200), st.booleans())
def test_serialization_roundtrip(subject, body, attach):
    subject = subject.replace("\n", " ").replace("\r", " ")
    inner = EmailMessage("x@a.example", "y@b.example", "inner", "orig\n\nbody") if attach else None
    msg = EmailMessage("u@a.example", "v@b.example", subject, body, inner, "a.example", b"\x01\x02")
    assert EmailMessage.from_bytes(msg.to_bytes()) == msg


def test_malformed_serialization():
    for raw in (b"no terminator", b"From: a\n\nx", CANONICAL_GOLDEN + b"extra"):
        with pytest.raises(EmailError):
            EmailMessage.from_bytes(raw)
    with pytest.raises(EmailError):
        EmailMessage("a@b.c", "d@e.f", "line\nbreak", "").canonical()


def test_reply_attaches_original_and_is_signed_on_send(world):
    store, a, b = world
    events = []
    svc = EmailService(lambda d, fn, *args: events.append((fn, args)), store)
    svc.add_server(a)
    svc.add_server(b)
    box = svc.open_mailbox("alice@mail-a.example")
    original = b.dkim_sign(EmailMessage("node@mail-b.example", "alice@mail-a.example", "verify", verification_body({"d0": b"\x01" * 16, "d1": b"\x02" * 16}, b"\x09" * 4)))
    box.messages.append(original)
    r = reply(box, original, "yes")
    assert r.attached == original and r.subject == "Re: verify"
    sent = svc.send(r)
    assert dkim_verify(store, sent)
    challenges, delta = parse_verification(sent.attached.body)
    assert challenges == {"d0": b"\x01" * 16, "d1": b"\x02" * 16} and delta == b"\x09" * 4
    with pytest.raises(EmailError):
        reply(Mailbox("other@mail-a.example"), original, "no")


def test_delivery_goes_through_schedule(world):
    store, a, _ = world
    queued = []
    svc = EmailService(lambda d, fn, *args: queued.append((d, fn, args)), store, delay=0.25)
    svc.add_server(a)
    got = []
    svc.open_mailbox("bob@mail-b.example", got.append)
    svc.send(EmailMessage("alice@mail-a.example", "bob@mail-b.example", "s", "b"))
    assert queued[0][0] == 0.25 and not got
    _, fn, args = queued[0]
    fn(*args)
    assert len(got) == 1 and dkim_verify(store, got[0])


@given(st.dictionaries(st.text("abcdefgh-0123456789", min_size=1, max_size=10), st.binary(min_size=16, max_size=16), max_size=7), st.binary(max_size=64))
def test_verification_body_roundtrip(challenges, contact):
    assert parse_verification(verification_body(challenges, contact)) == (challenges, contact)


def test_parse_verification_skips_garbage():
    body = "hello\nchallenge:d0:zz\nchallenge:d1:0a0b\ndelta:nothex\ndelta:ff\n"
    assert parse_verification(body) == ({"d1": b"\x0a\x0b"}, b"\xff")
