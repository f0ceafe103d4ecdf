"""Discovery node: username database, lookups, reflection and registration."""

from __future__ import annotations

from dataclasses import dataclass

from .crypto import (
    DetPrg,
    GroupElement,
    KeyPair,
    Randomness,
    Scalar,
    blind_public_key,
    kdf,
    sign,
    verify,
)
from .emailsim import DomainKeyStore, EmailMessage, EmailError, dkim_verify, parse_verification, verification_body
from .mixnet import Topology
from .sphinx import ContactInfo, SphinxError, SphinxPacket, Surb, create_surb, fake_contact
from .transport import SendContact, SendEmail, SendSurb, SubmitPacket, Transport
from .wire import (
    CHALLENGE_LEN,
    NONCE_LEN,
    BlindingKeyNotice,
    Challenge,
    Confirmation,
    EmailForward,
    LookupRequest,
    LookupResponse,
    Message,
    ReflectRequest,
    RegisterRequest,
    RegistrationConfirmation,
    blinding_notice_signed_bytes,
    lookup_response_signed_bytes,
)

SHARED_SECRET_LEN = 32


@dataclass(frozen=True)
class NodeInfo:
    node_id: str
    signing_pk: GroupElement
    contact: ContactInfo
    email: str


@dataclass(frozen=True)
class Directory:
    """Public view of the discovery-node set that every client and node holds."""

    nodes: tuple[NodeInfo, ...]

    def __post_init__(self):
        ids = [n.node_id for n in self.nodes]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate discovery node id")

    @property
    def n(self) -> int:
        return len(self.nodes)

    @property
    def f(self) -> int:
        return (self.n - 1) // 3

    @property
    def ids(self) -> list[str]:
        return [n.node_id for n in self.nodes]

    def get(self, node_id: str) -> NodeInfo | None:
        for n in self.nodes:
            if n.node_id == node_id:
                return n
        return None

    def verify(self, node_id: str, msg: bytes, sig: bytes) -> bool:
        info = self.get(node_id)
        return info is not None and verify(info.signing_pk, msg, sig)


@dataclass(frozen=True)
class DiscoveryRecord:
    username: str
    contact: ContactInfo


@dataclass(frozen=True)
class LookupMaterials:
    surb: Surb
    y: Scalar
    bpk: GroupElement


def lookup_seed(username: str, nonce: bytes, k: bytes) -> bytes:
    # nonce and k are fixed length, so the concatenation is unambiguous
    if len(nonce) != NONCE_LEN or len(k) != SHARED_SECRET_LEN:
        raise ValueError("bad nonce or shared secret length")
    return kdf(nonce + username.encode() + k, "surb-seed")


def deterministic_lookup_materials(
    username: str, nonce: bytes, record: DiscoveryRecord | None, k: bytes, topology: Topology, mu: float
) -> LookupMaterials:
    """Reply block and blinding key every honest node derives identically.

    The PRG drives, in order: route choice and hop delays, the SURB's
    ephemeral exponent and padding, then the blinding scalar.
    """
    prg = DetPrg(lookup_seed(username, nonce, k))
    dest = record.contact if record is not None else fake_contact()
    route = topology.choose_route(dest, prg, mu)
    surb = create_surb(route, prg)
    y = Scalar.random(prg)
    return LookupMaterials(surb, y, blind_public_key(dest.pk, y))


@dataclass
class PendingRegistration:
    username: str
    contact: bytes
    d_auth: str
    challenge: bytes
    invalid: bool
    emailed: bool = False
    grace_started: bool = False


@dataclass
class NodeTrace:
    time: float
    event: str
    detail: str = ""


class DiscoveryNode:
    def __init__(
        self,
        node_id: str,
        keys: KeyPair,
        k: bytes,
        directory: Directory,
        topology: Topology,
        mu: float,
        net: Transport,
        rng: Randomness,
        domain_keys: DomainKeyStore,
        challenge_grace: float = 0.0,
    ):
        if len(k) != SHARED_SECRET_LEN:
            raise ValueError("shared secret must be 32 bytes")
        self.node_id = node_id
        self.keys = keys
        self._k = k
        self.directory = directory
        self.topology = topology
        self.mu = mu
        self.net = net
        self.rng = rng
        self.domain_keys = domain_keys
        self.challenge_grace = challenge_grace
        self.db: dict[str, DiscoveryRecord] = {}
        self.nonces: set[bytes] = set()
        self.pending: dict[str, PendingRegistration] = {}
        # D_auth side: (username, contact, d_auth) -> node -> challenge
        self.collected: dict[tuple[str, bytes, str], dict[str, bytes]] = {}
        self.peer_confirmations: dict[tuple[str, bytes], set[str]] = {}
        # the single contact this node has ever vouched for, per username
        self.confirmed: dict[str, bytes] = {}
        self.aborts: list[tuple[str, str]] = []
        self.trace: list[NodeTrace] = []

    @property
    def info(self) -> NodeInfo:
        info = self.directory.get(self.node_id)
        assert info is not None
        return info

    def _log(self, event: str, detail: str = "") -> None:
        self.trace.append(NodeTrace(self.net.now, event, detail))

    def provision(self, record: DiscoveryRecord) -> None:
        """Install a record directly, bypassing registration (scenario setup only)."""
        self.db[record.username] = record
        self.confirmed[record.username] = record.contact.to_bytes()

    def on_message(self, msg: Message) -> None:
        handler = {
            LookupRequest: self.handle_lookup,
            ReflectRequest: self.handle_reflect,
            RegisterRequest: self.handle_register_request,
            Challenge: self.handle_challenge,
            EmailForward: self.handle_email_forward,
            Confirmation: self.handle_confirmation,
        }.get(type(msg))
        if handler is None:
            self._log("drop", f"unexpected {type(msg).__name__}")
            return
        handler(msg)

    # -- lookup --------------------------------------------------------------

    def lookup_materials(self, username: str, nonce: bytes) -> LookupMaterials:
        return deterministic_lookup_materials(username, nonce, self.db.get(username), self._k, self.topology, self.mu)

    def lookup_response(self, username: str, nonce: bytes) -> tuple[LookupResponse, BlindingKeyNotice | None, DiscoveryRecord | None]:
        mat = self.lookup_materials(username, nonce)
        surb, bpk = mat.surb.to_bytes(), mat.bpk.to_bytes()
        resp = LookupResponse(self.node_id, nonce, surb, bpk, sign(self.keys, lookup_response_signed_bytes(nonce, surb, bpk)))
        record = self.db.get(username)
        notice = None
        if record is not None:
            y = mat.y.to_bytes()
            notice = BlindingKeyNotice(self.node_id, nonce, y, sign(self.keys, blinding_notice_signed_bytes(nonce, y)))
        return resp, notice, record

    def handle_lookup(self, msg: LookupRequest) -> None:
        if len(msg.nonce) != NONCE_LEN or msg.nonce in self.nonces:
            self._log("drop", "nonce replay")
            return
        try:
            reply = Surb.from_bytes(msg.reply_surb)
        except (SphinxError, UnicodeDecodeError):
            self._log("drop", "malformed reply surb")
            return
        self.nonces.add(msg.nonce)
        resp, notice, record = self.lookup_response(msg.username, msg.nonce)
        # searcher reply first: its framing draws no randomness, so nothing
        # the searcher sees depends on whether the owner notice follows
        self.net.send(SendSurb(reply, resp))
        if notice is not None and record is not None:
            self.net.send(SendContact(record.contact, notice))

    def handle_reflect(self, msg: ReflectRequest) -> None:
        try:
            packet = SphinxPacket.from_bytes(msg.packet, msg.first_hop)
        except SphinxError:
            self._log("drop", "malformed reflect payload")
            return
        if msg.first_hop not in self.topology.mixes and msg.first_hop not in self.topology.providers:
            self._log("drop", "reflect to unknown first hop")
            return
        self.net.send(SubmitPacket(packet))

    # -- registration ----------------------------------------------------------

    def handle_register_request(self, msg: RegisterRequest) -> None:
        if self.directory.get(msg.d_auth) is None:
            self._log("drop", "register request names unknown D_auth")
            return
        try:
            ContactInfo.from_bytes(msg.contact)
        except Exception:
            self._log("drop", "register request with malformed contact")
            return
        invalid = msg.username in self.db
        p = PendingRegistration(msg.username, msg.contact, msg.d_auth, self.rng.read(CHALLENGE_LEN), invalid)
        self.pending[msg.username] = p
        self._log("register-request", f"{msg.username} d_auth={msg.d_auth} invalid={invalid}")
        if msg.d_auth == self.node_id:
            self._add_challenge(msg.username, msg.contact, msg.d_auth, self.node_id, p.challenge)
        else:
            ch = Challenge(self.node_id, msg.username, msg.contact, msg.d_auth, p.challenge, b"")
            ch = Challenge(ch.node, ch.username, ch.contact, ch.d_auth, ch.challenge, sign(self.keys, ch.signed_bytes()))
            self.net.send(SendContact(self.directory.get(msg.d_auth).contact, ch))

    def handle_challenge(self, msg: Challenge) -> None:
        if msg.d_auth != self.node_id or msg.node == self.node_id:
            return
        if not self.directory.verify(msg.node, msg.signed_bytes(), msg.sig):
            self._log("drop", "bad challenge signature")
            return
        self._add_challenge(msg.username, msg.contact, msg.d_auth, msg.node, msg.challenge)

    def _add_challenge(self, username: str, contact: bytes, d_auth: str, node: str, challenge: bytes) -> None:
        key = (username, contact, d_auth)
        self.collected.setdefault(key, {}).setdefault(node, challenge)
        p = self.pending.get(username)
        if p is not None and p.d_auth == self.node_id and p.contact == contact:
            self.d_auth_send_verification(p)

    def d_auth_send_verification(self, pending: PendingRegistration, grace_over: bool = False) -> None:
        """Email the collected challenges once at least 2f+1 (own included) are in hand.

        With a grace period configured, D_auth waits for stragglers until it
        holds all n challenges or the period ends, so that slow honest nodes
        are not left out of the email.
        """
        got = self.collected.get((pending.username, pending.contact, self.node_id), {})
        if pending.emailed or self.node_id not in got or len(got) < 2 * self.directory.f + 1:
            return
        if self.pending.get(pending.username) is not pending:
            return
        if len(got) < self.directory.n and self.challenge_grace > 0 and not grace_over:
            if not pending.grace_started:
                pending.grace_started = True
                self.net.set_timer(self.challenge_grace, lambda: self.d_auth_send_verification(pending, True))
            return
        pending.emailed = True
        body = verification_body(got, pending.contact)
        email = EmailMessage(self.info.email, pending.username, "Pudding registration", body)
        self._log("verification-email", pending.username)
        self.net.send(SendEmail(email))

    def on_email(self, email: EmailMessage) -> None:
        """Mail arriving at this node's address: user replies to verification mail."""
        raw = email.to_bytes()
        fwd = EmailForward(self.node_id, raw)
        for info in self.directory.nodes:
            if info.node_id != self.node_id:
                self.net.send(SendContact(info.contact, fwd))
        self.handle_email_reply(email)

    def handle_email_forward(self, msg: EmailForward) -> None:
        try:
            email = EmailMessage.from_bytes(msg.email)
        except EmailError:
            self._log("drop", "malformed forwarded email")
            return
        self.handle_email_reply(email)

    def _abort(self, username: str, reason: str) -> None:
        self.aborts.append((username, reason))
        self._log("abort", f"{username}: {reason}")

    def handle_email_reply(self, email: EmailMessage) -> None:
        username = email.sender
        p = self.pending.get(username)
        if p is None:
            self._abort(username, "no_pending")
            return
        original = email.attached
        challenges, delta = parse_verification(original.body) if original is not None else ({}, None)
        if challenges.get(self.node_id) != p.challenge:
            self._abort(username, "challenge")
            return
        if not dkim_verify(self.domain_keys, email):
            self._abort(username, "dkim")
            return
        if p.invalid:
            self._abort(username, "invalid")
            return
        if delta != p.contact:
            self._abort(username, "delta")
            return
        prior = self.confirmed.get(username)
        if prior is not None and prior != p.contact:
            self._abort(username, "conflict")
            return
        if prior is None:
            self.confirmed[username] = p.contact
            conf = Confirmation(self.node_id, username, p.contact, b"")
            conf = Confirmation(conf.node, username, p.contact, sign(self.keys, conf.signed_bytes()))
            for info in self.directory.nodes:
                if info.node_id != self.node_id:
                    self.net.send(SendContact(info.contact, conf))
            self._log("confirm", username)
        self._maybe_store(username, p.contact)

    def handle_confirmation(self, msg: Confirmation) -> None:
        if msg.node == self.node_id or not self.directory.verify(msg.node, msg.signed_bytes(), msg.sig):
            self._log("drop", "bad confirmation")
            return
        self.peer_confirmations.setdefault((msg.username, msg.contact), set()).add(msg.node)
        self._maybe_store(msg.username, msg.contact)

    def _maybe_store(self, username: str, contact: bytes) -> None:
        """Store after own verification plus 2f confirmations from other nodes."""
        if username in self.db or self.confirmed.get(username) != contact:
            return
        if len(self.peer_confirmations.get((username, contact), ())) < 2 * self.directory.f:
            return
        record = DiscoveryRecord(username, ContactInfo.from_bytes(contact))
        self.db[username] = record
        self._log("store", username)
        rc = RegistrationConfirmation(self.node_id, username, contact, b"")
        rc = RegistrationConfirmation(rc.node, username, contact, sign(self.keys, rc.signed_bytes()))
        self.net.send(SendContact(record.contact, rc))
