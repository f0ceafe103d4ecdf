"""Simulated email with domain-level signatures standing in for SMTP and DKIM.

A message is signed once, by the mail server of the sender's domain, over a
canonical serialization of everything except the signature header. Verifiers
fetch the domain's current public key from a shared :class:`DomainKeyStore`.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable

from .crypto import SYSTEM_RANDOM, GroupElement, KeyPair, Randomness, sign, verify


class EmailError(Exception):
    pass


def domain_of(address: str) -> str:
    local, sep, domain = address.rpartition("@")
    if not sep or not local or not domain:
        raise EmailError(f"malformed address {address!r}")
    return domain.lower()


@dataclass(frozen=True)
class EmailMessage:
    sender: str
    recipient: str
    subject: str
    body: str
    attached: EmailMessage | None = None
    signing_domain: str = ""
    signature: bytes = b""

    def canonical(self) -> bytes:
        """Bytes covered by the domain signature."""
        return self._serialize(with_signature=False)

    def to_bytes(self) -> bytes:
        return self._serialize(with_signature=True)

    def _serialize(self, with_signature: bool) -> bytes:
        body = self.body.encode()
        att = self.attached.to_bytes() if self.attached is not None else b""
        for name, value in (("From", self.sender), ("To", self.recipient), ("Subject", self.subject)):
            if "\n" in value or "\r" in value:
                raise EmailError(f"newline in {name} header")
        lines = [
            f"From: {self.sender}",
            f"To: {self.recipient}",
            f"Subject: {self.subject}",
            f"Body-Length: {len(body)}",
            f"Attachment-Length: {len(att)}",
        ]
        if with_signature and self.signature:
            lines.append(f"DKIM-Signature: d={self.signing_domain}; b={self.signature.hex()}")
        return ("\n".join(lines) + "\n\n").encode() + body + att

    @classmethod
    def from_bytes(cls, data: bytes) -> EmailMessage:
        head, sep, rest = data.partition(b"\n\n")
        if not sep:
            raise EmailError("missing header terminator")
        headers: dict[str, str] = {}
        try:
            for line in head.decode().split("\n"):
                name, colon, value = line.partition(": ")
                if not colon or name in headers:
                    raise EmailError(f"bad header line {line!r}")
                headers[name] = value
            body_len = int(headers["Body-Length"])
            att_len = int(headers["Attachment-Length"])
            if body_len < 0 or att_len < 0 or body_len + att_len != len(rest):
                raise EmailError("length mismatch")
            body = rest[:body_len].decode()
            attached = cls.from_bytes(rest[body_len:]) if att_len else None
            domain, sig = "", b""
            if "DKIM-Signature" in headers:
                d_part, b_part = headers["DKIM-Signature"].split("; ")
                if not d_part.startswith("d=") or not b_part.startswith("b="):
                    raise EmailError("bad signature header")
                domain, sig = d_part[2:], bytes.fromhex(b_part[2:])
            known = {"From", "To", "Subject", "Body-Length", "Attachment-Length", "DKIM-Signature"}
            if set(headers) - known:
                raise EmailError("unknown header")
            return cls(headers["From"], headers["To"], headers["Subject"], body, attached, domain, sig)
        except (KeyError, ValueError, UnicodeDecodeError) as exc:
            raise EmailError(f"malformed email: {exc}") from exc


class DomainKeyStore:
    """Domain -> current verification key; stands in for DNS TXT records."""

    def __init__(self):
        self._keys: dict[str, GroupElement] = {}

    def publish(self, domain: str, pk: GroupElement) -> None:
        self._keys[domain.lower()] = pk

    def lookup(self, domain: str) -> GroupElement | None:
        return self._keys.get(domain.lower())


def _signed_bytes(domain: str, msg: EmailMessage) -> bytes:
    # canonical() omits the signature header, so signed and unsigned forms agree
    return b"dkim|" + domain.encode() + b"|" + msg.canonical()


class MailServer:
    """Holds one domain's signing key; signs outgoing mail from that domain only."""

    def __init__(self, domain: str, store: DomainKeyStore, rng: Randomness = SYSTEM_RANDOM):
        self.domain = domain.lower()
        self._store = store
        self._rng = rng
        self._key = KeyPair.generate(rng)
        store.publish(self.domain, self._key.pk)

    def rotate(self) -> None:
        self._key = KeyPair.generate(self._rng)
        self._store.publish(self.domain, self._key.pk)

    def dkim_sign(self, msg: EmailMessage) -> EmailMessage:
        if domain_of(msg.sender) != self.domain:
            raise EmailError(f"{self.domain} refuses to sign mail from {msg.sender}")
        return replace(msg, signing_domain=self.domain, signature=sign(self._key, _signed_bytes(self.domain, msg)))


def dkim_verify(store: DomainKeyStore, msg: EmailMessage) -> bool:
    try:
        domain = domain_of(msg.sender)
    except EmailError:
        return False
    if msg.signing_domain.lower() != domain or not msg.signature:
        return False
    pk = store.lookup(domain)
    if pk is None:
        return False
    return verify(pk, _signed_bytes(domain, msg), msg.signature)


class Mailbox:
    def __init__(self, address: str):
        self.address = address
        self.messages: list[EmailMessage] = []


def reply(mailbox: Mailbox, original: EmailMessage, body: str) -> EmailMessage:
    """Reply from the mailbox owner, attaching ``original`` verbatim. Signing happens on send."""
    if original not in mailbox.messages:
        raise EmailError("original message is not in this mailbox")
    subject = original.subject if original.subject.startswith("Re: ") else f"Re: {original.subject}"
    return EmailMessage(mailbox.address, original.sender, subject, body, attached=original)


@dataclass
class EmailAdversary:
    """Sends mail claiming any address. Holds only its own key unless a domain is compromised."""

    rng: Randomness = SYSTEM_RANDOM
    compromised: dict[str, MailServer] = field(default_factory=dict)
    _own: KeyPair | None = None

    def compromise(self, server: MailServer) -> None:
        self.compromised[server.domain] = server

    def forge(self, target_address: str, recipient: str, body: str, subject: str = "", attached: EmailMessage | None = None) -> EmailMessage:
        msg = EmailMessage(target_address, recipient, subject, body, attached)
        domain = domain_of(target_address)
        if domain in self.compromised:
            return self.compromised[domain].dkim_sign(msg)
        if self._own is None:
            self._own = KeyPair.generate(self.rng)
        return replace(msg, signing_domain=domain, signature=sign(self._own, _signed_bytes(domain, msg)))


def adversary_forge(attacker: EmailAdversary, target_address: str, body: str, recipient: str = "", **kw) -> EmailMessage:
    return attacker.forge(target_address, recipient, body, **kw)


class EmailService:
    """Delivers mail after a fixed simulated delay; outgoing mail is signed by the sender's domain server."""

    def __init__(self, schedule: Callable[..., object], store: DomainKeyStore, delay: float = 0.05):
        self._schedule = schedule
        self.store = store
        self.delay = delay
        self._servers: dict[str, MailServer] = {}
        self._boxes: dict[str, tuple[Mailbox, Callable[[EmailMessage], None] | None]] = {}
        self.sent = 0

    def add_server(self, server: MailServer) -> None:
        self._servers[server.domain] = server

    def server(self, domain: str) -> MailServer | None:
        return self._servers.get(domain.lower())

    def open_mailbox(self, address: str, handler: Callable[[EmailMessage], None] | None = None) -> Mailbox:
        box = Mailbox(address)
        self._boxes[address.lower()] = (box, handler)
        return box

    def send(self, msg: EmailMessage) -> EmailMessage:
        server = self._servers.get(domain_of(msg.sender))
        if server is not None and not msg.signature:
            msg = server.dkim_sign(msg)
        self.inject(msg)
        return msg

    def inject(self, msg: EmailMessage) -> None:
        """Deliver as-is, bypassing the sender's server (adversarial path)."""
        self.sent += 1
        self._schedule(self.delay, self._deliver, msg)

    def _deliver(self, msg: EmailMessage) -> None:
        entry = self._boxes.get(msg.recipient.lower())
        if entry is None:
            return
        box, handler = entry
        box.messages.append(msg)
        if handler is not None:
            handler(msg)


# -- verification mail body ---------------------------------------------------


def verification_body(challenges: dict[str, bytes], contact: bytes) -> str:
    lines = [f"challenge:{node}:{ch.hex()}" for node, ch in sorted(challenges.items())]
    lines.append(f"delta:{contact.hex()}")
    return "\n".join(lines) + "\n"


def parse_verification(body: str) -> tuple[dict[str, bytes], bytes | None]:
    """Inverse of :func:`verification_body`; unknown or malformed lines are skipped."""
    challenges: dict[str, bytes] = {}
    delta = None
    for line in body.splitlines():
        try:
            if line.startswith("challenge:"):
                _, node, hx = line.split(":", 2)
                challenges.setdefault(node, bytes.fromhex(hx))
            elif line.startswith("delta:") and delta is None:
                delta = bytes.fromhex(line[len("delta:") :])
        except ValueError:
            continue
    return challenges, delta
