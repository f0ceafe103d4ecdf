"""User device: registration, lookup, ContactInit and the AddFriend handshake."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

from .crypto import GroupElement, InvalidElementError, KeyPair, Randomness, Scalar, blind_public_key, randbelow
from .discovery import Directory
from .emailsim import EmailMessage, Mailbox, parse_verification, reply
from .handshake import (
    HandshakeAbort,
    SearcheeReply,
    SearcherInit,
    SearcherKeys,
    build_confirmation,
    build_finish,
    build_m_init,
    build_reply,
    check_finish,
    check_reply,
    open_confirmation,
    open_m_init,
)
from .mixnet import SimConfig, Timer, Topology
from .sphinx import ContactInfo, SphinxError, SphinxPacket, Surb, apply_surb, create_surb
from .transport import SendContact, SendEmail, SendSurb, Transport, surb_frame
from .wire import (
    IDENTITY_ANONYMOUS,
    IDENTITY_NAMED,
    NONCE_LEN,
    AddFriendFinish,
    AddFriendReply,
    BlindingKeyNotice,
    FinishInner,
    InitInner,
    LookupRequest,
    LookupResponse,
    Message,
    MInit,
    ReflectRequest,
    RegisterRequest,
    RegistrationConfirmation,
    ReplyInner,
    SessionInner,
    SessionMessage,
)

NAMED = "named"
ANONYMOUS = "anonymous"

PENDING = "pending"
COMPLETE = "complete"
REJECTED = "rejected"
FAILED = "failed"


@dataclass(frozen=True)
class DeviceTrace:
    time: float
    event: str
    detail: str = ""


@dataclass(frozen=True)
class LookupOutcome:
    status: str
    reason: str = ""


@dataclass
class LookupSession:
    target: str
    nonce: bytes
    started: float
    reply_surbs: dict[str, bytes] = field(default_factory=dict)
    responses: dict[str, tuple[bytes, bytes]] = field(default_factory=dict)
    attempt: int = 1
    status: str = PENDING
    surb: Surb | None = None
    bpk: GroupElement | None = None
    finished: float | None = None
    on_done: Callable[[LookupSession], None] | None = None
    timer: Timer | None = None


@dataclass
class OwnerBlindingState:
    """Per-nonce votes for a blinding key; a value is kept after f+1 distinct signers agree."""

    threshold: int
    votes: dict[bytes, dict[bytes, set[str]]] = field(default_factory=dict)
    voters: dict[bytes, set[str]] = field(default_factory=dict)
    stored: dict[bytes, Scalar] = field(default_factory=dict)

    def add(self, nonce: bytes, y: bytes, node: str) -> Scalar | None:
        """Count one vote; returns the scalar the first time the threshold is met."""
        if nonce in self.stored:
            return None
        seen = self.voters.setdefault(nonce, set())
        if node in seen:
            return None
        seen.add(node)
        backers = self.votes.setdefault(nonce, {}).setdefault(y, set())
        backers.add(node)
        if len(backers) < self.threshold:
            return None
        try:
            s = Scalar.from_bytes(y)
        except ValueError:
            return None
        if s.is_zero():
            return None
        self.stored[nonce] = s
        return s


@dataclass(frozen=True)
class FriendRecord:
    peer: str
    k_s: bytes
    surbs: tuple[Surb, ...]


@dataclass
class AddFriendSession:
    role: str
    peer: str
    identity: str
    started: float
    codeword: bytes = b""
    state: str = "init"
    init: SearcherInit | None = None
    reply_state: SearcheeReply | None = None
    keys: SearcherKeys | None = None
    y_a: Scalar | None = None
    bpk_a: GroupElement | None = None
    id_a: str | None = None
    peer_surb: Surb | None = None
    packet: SphinxPacket | None = None
    reflectors: list[str] = field(default_factory=list)
    attempts: int = 0
    k_s: bytes | None = None
    abort_reason: str = ""
    finished: float | None = None
    timer: Timer | None = None
    on_done: Callable[[AddFriendSession], None] | None = None

    @property
    def done(self) -> bool:
        return self.state in ("done", "aborted", "ignored")


@dataclass(frozen=True)
class InitRequest:
    """What the searchee's policy sees before deciding to respond."""

    identity_kind: str
    identity: bytes
    codeword: bytes


@dataclass
class RegistrationState:
    username: str
    started: float
    tried: list[str] = field(default_factory=list)
    confirmations: set[str] = field(default_factory=set)
    status: str = PENDING
    finished: float | None = None
    timer: Timer | None = None
    on_done: Callable[[RegistrationState], None] | None = None


def accept_all(device: UserDevice, request: InitRequest) -> bool:
    return True


class UserDevice:
    def __init__(
        self,
        name: str,
        keys: KeyPair,
        contact: ContactInfo,
        directory: Directory,
        topology: Topology,
        config: SimConfig,
        net: Transport,
        rng: Randomness,
        username: str | None = None,
        policy: Callable[[UserDevice, InitRequest], bool] = accept_all,
        lookup_attempts: int = 3,
    ):
        if contact.pk != keys.pk:
            raise ValueError("contact public key must match the device key")
        self.name = name
        self.keys = keys
        self.contact = contact
        self.directory = directory
        self.topology = topology
        self.config = config
        self.net = net
        self.rng = rng
        self.username = username
        self.policy = policy
        self.lookup_attempts = lookup_attempts
        self.mailbox: Mailbox | None = None
        self.trace: list[DeviceTrace] = []
        self.lookups: dict[bytes, LookupSession] = {}
        self.blinding = OwnerBlindingState(directory.f + 1)
        self.outgoing: dict[bytes, AddFriendSession] = {}
        self.incoming: dict[bytes, AddFriendSession] = {}
        self.friends: list[FriendRecord] = []
        self.registration: RegistrationState | None = None
        self._seen_inits: set[bytes] = set()
        self._replied: set[bytes] = set()
        self._await_y: dict[bytes, list[Callable[[], None]]] = {}

    # -- plumbing ------------------------------------------------------------

    @property
    def mean_latency(self) -> float:
        return self.config.mean_latency(len(self.topology.layers))

    def _log(self, event: str, detail: str = "") -> None:
        self.trace.append(DeviceTrace(self.net.now, event, detail))

    def _own_surb(self) -> Surb:
        route = self.topology.choose_route(self.contact, self.rng, self.config.mu)
        return create_surb(route, self.rng)

    def on_message(self, msg: Message) -> None:
        handler = {
            LookupResponse: self.on_lookup_response,
            BlindingKeyNotice: self.on_blinding_key,
            MInit: self.searchee_on_m_init,
            AddFriendReply: self.searcher_on_reply,
            AddFriendFinish: self.searchee_finalize,
            SessionMessage: self.on_session_message,
            RegistrationConfirmation: self.on_registration_confirmation,
        }.get(type(msg))
        if handler is None:
            self._log("drop", f"unexpected {type(msg).__name__}")
            return
        handler(msg)

    # -- lookup ----------------------------------------------------------------

    def start_lookup(self, target: str, on_done: Callable[[LookupSession], None] | None = None) -> LookupSession:
        session = LookupSession(target, b"", self.net.now, on_done=on_done)
        self._send_lookup(session)
        return session

    def _send_lookup(self, session: LookupSession) -> None:
        session.nonce = self.rng.read(NONCE_LEN)
        session.responses = {}
        session.reply_surbs = {}
        self.lookups[session.nonce] = session
        for info in self.directory.nodes:
            s_i = self._own_surb().to_bytes()
            session.reply_surbs[info.node_id] = s_i
            self.net.send(SendContact(info.contact, LookupRequest(session.target, session.nonce, s_i)))
        self._log("lookup-sent", f"{session.target} attempt={session.attempt}")
        session.timer = self.net.set_timer(self.config.lookup_timeout_factor * self.mean_latency, lambda: self._lookup_timeout(session))

    def _lookup_timeout(self, session: LookupSession) -> None:
        if session.status != PENDING:
            return
        self.lookups.pop(session.nonce, None)
        if session.attempt >= self.lookup_attempts:
            session.status = FAILED
            session.finished = self.net.now
            self._log("lookup-failed", session.target)
            if session.on_done:
                session.on_done(session)
            return
        session.attempt += 1
        self._send_lookup(session)

    def on_lookup_response(self, msg: LookupResponse) -> LookupOutcome:
        session = self.lookups.get(msg.nonce)
        if session is None or session.status != PENDING:
            return self._reject("wrong_nonce")
        if self.directory.get(msg.node) is None:
            return self._reject("unknown_signer")
        if msg.node in session.responses:
            return self._reject("duplicate_signer")
        if not self.directory.verify(msg.node, msg.signed_bytes(), msg.sig):
            return self._reject("bad_signature")
        try:
            surb = Surb.from_bytes(msg.surb)
            bpk = GroupElement.from_bytes(msg.bpk)
        except (SphinxError, InvalidElementError, UnicodeDecodeError):
            return self._reject("malformed")
        session.responses[msg.node] = (msg.surb, msg.bpk)
        agree = sum(1 for v in session.responses.values() if v == (msg.surb, msg.bpk))
        if agree < self.directory.f + 1:
            return LookupOutcome(PENDING)
        session.status = COMPLETE
        session.surb, session.bpk = surb, bpk
        session.finished = self.net.now
        if session.timer:
            session.timer.cancel()
        self._log("lookup-complete", session.target)
        if session.on_done:
            session.on_done(session)
        return LookupOutcome(COMPLETE)

    def _reject(self, reason: str) -> LookupOutcome:
        self._log("lookup-reject", reason)
        return LookupOutcome(REJECTED, reason)

    def on_blinding_key(self, msg: BlindingKeyNotice) -> None:
        if not self.directory.verify(msg.node, msg.signed_bytes(), msg.sig):
            self._log("blinding-reject", msg.node)
            return
        y = self.blinding.add(msg.nonce, msg.y, msg.node)
        if y is None:
            return
        self._log("blinding-stored", msg.nonce.hex())
        for fn in self._await_y.pop(msg.nonce, []):
            fn()

    def _when_blinding_known(self, nonce: bytes, fn: Callable[[], None], on_expire: Callable[[], None]) -> None:
        if nonce in self.blinding.stored:
            fn()
            return
        waiters = self._await_y.setdefault(nonce, [])
        waiters.append(fn)

        def expire():
            if fn in self._await_y.get(nonce, []):
                self._await_y[nonce].remove(fn)
                on_expire()

        self.net.set_timer(self.config.contact_timeout_factor * self.mean_latency, expire)

    # -- ContactInit (searcher) ----------------------------------------------------

    def contact_init(
        self,
        session: LookupSession,
        identity: str = ANONYMOUS,
        codeword: bytes = b"",
        on_done: Callable[[AddFriendSession], None] | None = None,
        reflectors: list[str] | None = None,
    ) -> AddFriendSession:
        """Send M_init through discovery nodes in random order, or in ``reflectors`` order if given."""
        if session.status != COMPLETE or session.surb is None or session.bpk is None:
            raise ValueError("lookup has not completed")
        af = AddFriendSession("searcher", session.target, identity, self.net.now, codeword, on_done=on_done)
        if identity == NAMED:
            if self.username is None:
                raise ValueError("named contact requires a registered username")
            kind, ident = IDENTITY_NAMED, self.username.encode()
            af.id_a = self.username
        elif identity == ANONYMOUS:
            af.y_a = Scalar.random(self.rng)
            af.bpk_a = blind_public_key(self.keys.pk, af.y_a)
            kind, ident = IDENTITY_ANONYMOUS, af.bpk_a.encoded
        else:
            raise ValueError(f"unknown identity choice {identity!r}")
        inner = InitInner(self._own_surb().to_bytes(), codeword, kind, ident)
        m_init, af.init = build_m_init(session.bpk, session.target, session.nonce, inner, self.rng)
        af.packet = apply_surb(session.surb, surb_frame(m_init.encode()))
        ids = self.directory.ids
        while ids:
            af.reflectors.append(ids.pop(randbelow(self.rng, len(ids))))
        if reflectors is not None:
            af.reflectors = list(reflectors)
        af.state = "reflecting"
        self.outgoing[af.init.ga] = af
        self._reflect(af)
        return af

    def _reflect(self, af: AddFriendSession) -> None:
        # the same M_init bytes go out each time; the first hop's replay
        # filter guarantees at most one copy reaches the searchee
        max_attempts = self.directory.f + 1
        if af.attempts >= min(max_attempts, len(af.reflectors)):
            self._finish(af, "aborted", "timeout")
            return
        node = af.reflectors[af.attempts]
        af.attempts += 1
        assert af.packet is not None
        req = ReflectRequest(af.packet.first_hop, af.packet.to_bytes())
        self.net.send(SendContact(self.directory.get(node).contact, req))
        self._log("reflect", f"via {node} attempt={af.attempts}")
        af.timer = self.net.set_timer(self.config.contact_timeout_factor * self.mean_latency, lambda: self._reflect_timeout(af))

    def _reflect_timeout(self, af: AddFriendSession) -> None:
        if af.state == "reflecting":
            self._reflect(af)
        elif not af.done:
            self._finish(af, "aborted", "timeout")

    def _finish(self, af: AddFriendSession, state: str, reason: str = "") -> None:
        if af.done:
            return
        af.state, af.abort_reason, af.finished = state, reason, self.net.now
        if af.timer:
            af.timer.cancel()
        self._log(f"contact-{state}", f"{af.peer} {reason}".strip())
        if af.on_done:
            af.on_done(af)

    def searcher_on_reply(self, msg: AddFriendReply) -> None:
        af = self.outgoing.get(msg.ga)
        if af is None or af.state != "reflecting" or af.init is None:
            self._log("reply-ignored", "unknown session")
            return
        try:
            keys, inner = check_reply(af.init, msg)
            peer_surb = Surb.from_bytes(inner.reply_surb)
        except HandshakeAbort as exc:
            self._finish(af, "aborted", exc.reason)
            return
        except (SphinxError, UnicodeDecodeError):
            self._finish(af, "aborted", "malformed")
            return
        af.keys, af.peer_surb = keys, peer_surb
        af.state = "awaiting_blinding"
        if af.timer:
            af.timer.cancel()
        af.timer = self.net.set_timer(self.config.contact_timeout_factor * self.mean_latency, lambda: self._finish(af, "aborted", "timeout"))
        if af.identity == NAMED:
            if len(inner.lookup_nonce) != NONCE_LEN:
                self._finish(af, "aborted", "no_lookup_nonce")
                return
            nonce = inner.lookup_nonce
            self._when_blinding_known(
                nonce,
                lambda: self._send_finish(af, self.blinding.stored[nonce]),
                lambda: self._finish(af, "aborted", "blinding_key_missing"),
            )
        else:
            assert af.y_a is not None
            self._send_finish(af, af.y_a)

    def _send_finish(self, af: AddFriendSession, y_a: Scalar) -> None:
        if af.state != "awaiting_blinding" or af.init is None or af.keys is None or af.peer_surb is None:
            return
        id_a = af.id_a if af.identity == NAMED else None
        msg3 = build_finish(self.keys.sk, y_a, id_a, af.init, af.keys, FinishInner(self._own_surb().to_bytes()), self.rng)
        af.k_s = af.keys.k_s
        af.state = "awaiting_confirmation"
        self.net.send(SendSurb(af.peer_surb, msg3))
        self._log("finish-sent", af.peer)

    def on_session_message(self, msg: SessionMessage) -> None:
        af = self.outgoing.get(msg.session)
        if af is None or af.state != "awaiting_confirmation" or af.k_s is None or af.init is None:
            self._log("session-ignored", "unknown session")
            return
        try:
            inner = open_confirmation(af.k_s, af.init.ga, msg)
            surb = Surb.from_bytes(inner.reply_surb)
        except HandshakeAbort as exc:
            self._finish(af, "aborted", exc.reason)
            return
        except (SphinxError, UnicodeDecodeError):
            self._finish(af, "aborted", "malformed")
            return
        self.friends.append(FriendRecord(af.peer, af.k_s, (surb,)))
        self._finish(af, "done")

    # -- ContactInit / AddFriend (searchee) --------------------------------------

    def searchee_on_m_init(self, msg: MInit) -> None:
        if msg.ga in self._seen_inits:
            self._log("m-init-ignored", "duplicate")
            return
        self._when_blinding_known(msg.nonce, lambda: self._handle_m_init(msg), lambda: self._log("m-init-ignored", "unknown nonce"))

    def _handle_m_init(self, msg: MInit) -> None:
        if msg.ga in self._seen_inits or self.username is None:
            return
        y_b = self.blinding.stored[msg.nonce]
        try:
            inner, k_e = open_m_init(self.keys.sk, y_b, msg)
            reply_surb = Surb.from_bytes(inner.reply_surb)
        except HandshakeAbort as exc:
            self._log("m-init-ignored", exc.reason)
            return
        except (SphinxError, UnicodeDecodeError):
            self._log("m-init-ignored", "malformed")
            return
        self._seen_inits.add(msg.ga)
        kind = NAMED if inner.identity_kind == IDENTITY_NAMED else ANONYMOUS if inner.identity_kind == IDENTITY_ANONYMOUS else ""
        if not kind:
            self._log("m-init-ignored", "bad identity kind")
            return
        if not self.policy(self, InitRequest(kind, inner.identity, inner.codeword)):
            self._log("m-init-ignored", "policy")
            return
        af = AddFriendSession("searchee", "", kind, self.net.now, inner.codeword)
        af.peer_surb = reply_surb
        if kind == ANONYMOUS:
            try:
                af.bpk_a = GroupElement.from_bytes(inner.identity)
            except InvalidElementError:
                self._log("m-init-ignored", "bad blinded key")
                return
            af.peer = af.bpk_a.encoded.hex()
            self._send_reply(af, msg, y_b, k_e, b"")
            return
        try:
            af.id_a = inner.identity.decode()
        except UnicodeDecodeError:
            self._log("m-init-ignored", "bad username")
            return
        af.peer = af.id_a

        def looked_up(ls: LookupSession) -> None:
            if ls.status != COMPLETE:
                self._log("m-init-ignored", "peer lookup failed")
                return
            af.bpk_a = ls.bpk
            self._send_reply(af, msg, y_b, k_e, ls.nonce)

        self.start_lookup(af.id_a, looked_up)

    def _send_reply(self, af: AddFriendSession, m_init: MInit, y_b: Scalar, k_e: bytes, lookup_nonce: bytes) -> None:
        assert self.username is not None and af.peer_surb is not None
        inner = ReplyInner(self._own_surb().to_bytes(), lookup_nonce)
        msg2, af.reply_state = build_reply(self.keys.sk, y_b, self.username, m_init.ga, k_e, inner, self.rng)
        af.state = "awaiting_finish"
        self.incoming[msg2.gb] = af
        self.net.send(SendSurb(af.peer_surb, msg2))
        self._log("reply-sent", af.peer)

    def searchee_finalize(self, msg: AddFriendFinish) -> FriendRecord | None:
        af = self.incoming.get(msg.gb)
        if af is None or af.state != "awaiting_finish" or af.reply_state is None or af.bpk_a is None:
            self._log("finish-ignored", "unknown session")
            return None
        try:
            inner = check_finish(af.reply_state, af.bpk_a, af.id_a, msg)
            surb = Surb.from_bytes(inner.reply_surb)
        except HandshakeAbort as exc:
            self._finish(af, "aborted", exc.reason)
            return None
        except (SphinxError, UnicodeDecodeError):
            self._finish(af, "aborted", "malformed")
            return None
        af.k_s = af.reply_state.k_s
        record = FriendRecord(af.peer, af.k_s, ())
        self.friends.append(record)
        confirm = build_confirmation(af.k_s, af.reply_state.ga, SessionInner(b"confirm", self._own_surb().to_bytes()), self.rng)
        self.net.send(SendSurb(surb, confirm))
        self._finish(af, "done")
        return record

    # -- registration ----------------------------------------------------------------

    def register(self, username: str, on_done: Callable[[RegistrationState], None] | None = None) -> RegistrationState:
        if self.username is not None and self.registration is not None and self.registration.status == COMPLETE:
            raise ValueError("device is already registered")
        self.username = username
        self.registration = RegistrationState(username, self.net.now, on_done=on_done)
        self._register_attempt()
        return self.registration

    def _register_attempt(self) -> None:
        reg = self.registration
        assert reg is not None
        untried = [n for n in self.directory.ids if n not in reg.tried]
        if not untried:
            reg.status, reg.finished = FAILED, self.net.now
            self._log("register-failed", reg.username)
            if reg.on_done:
                reg.on_done(reg)
            return
        d_auth = untried[randbelow(self.rng, len(untried))]
        reg.tried.append(d_auth)
        msg = RegisterRequest(reg.username, self.contact.to_bytes(), d_auth)
        for info in self.directory.nodes:
            self.net.send(SendContact(info.contact, msg))
        self._log("register-sent", f"d_auth={d_auth}")
        reg.timer = self.net.set_timer(self.config.registration_timeout_factor * self.mean_latency, self._register_timeout)

    def _register_timeout(self) -> None:
        if self.registration is not None and self.registration.status == PENDING:
            self._register_attempt()

    def on_verification_email(self, email: EmailMessage) -> EmailMessage | None:
        key = email.to_bytes()
        if key in self._replied:
            return None
        reg = self.registration
        if reg is None or reg.status != PENDING or email.recipient != reg.username or self.mailbox is None:
            self._log("verification-refused", "unsolicited")
            return None
        _, delta = parse_verification(email.body)
        if delta != self.contact.to_bytes():
            self._log("verification-refused", "contact mismatch")
            return None
        self._replied.add(key)
        answer = reply(self.mailbox, email, "confirm\n")
        self.net.send(SendEmail(answer))
        self._log("verification-replied", reg.username)
        return answer

    def on_registration_confirmation(self, msg: RegistrationConfirmation) -> str:
        reg = self.registration
        if reg is None or reg.status != PENDING:
            return reg.status if reg else PENDING
        if msg.username != reg.username or msg.contact != self.contact.to_bytes():
            return PENDING
        if not self.directory.verify(msg.node, msg.signed_bytes(), msg.sig):
            self._log("confirmation-reject", msg.node)
            return PENDING
        reg.confirmations.add(msg.node)
        if len(reg.confirmations) < 2 * self.directory.f + 1:
            return PENDING
        reg.status, reg.finished = COMPLETE, self.net.now
        if reg.timer:
            reg.timer.cancel()
        self._log("registered", reg.username)
        if reg.on_done:
            reg.on_done(reg)
        return COMPLETE
