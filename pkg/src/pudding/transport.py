"""Effects emitted by protocol state machines and the shells that execute them.

Protocol objects never touch the simulator directly: they hand effects to a
:class:`Transport`. :class:`RecordingTransport` collects them for unit tests;
:class:`SimEndpoint` turns them into mix-network packets and email.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Callable, Protocol

from .crypto import Randomness
from .emailsim import EmailMessage, EmailService
from .mixnet import BYZANTINE, Simulator, Timer
from .sphinx import (
    ContactInfo,
    Reassembler,
    SphinxPacket,
    Surb,
    apply_surb,
    build_packet,
    fragment,
)
from .wire import Message, WireError, decode


@dataclass(frozen=True)
class SendContact:
    contact: ContactInfo
    message: Message


@dataclass(frozen=True)
class SendSurb:
    surb: Surb
    message: Message


@dataclass(frozen=True)
class SubmitPacket:
    packet: SphinxPacket


@dataclass(frozen=True)
class SendEmail:
    email: EmailMessage


Effect = SendContact | SendSurb | SubmitPacket | SendEmail


class Transport(Protocol):
    @property
    def now(self) -> float: ...

    def send(self, effect: Effect) -> None: ...

    def set_timer(self, delay: float, fn: Callable[[], None]) -> Timer: ...


def inbox_for(node_id: str) -> bytes:
    return hashlib.sha256(b"inbox|" + node_id.encode()).digest()[:16]


def surb_frame(message: bytes) -> bytes:
    """Single-fragment frame for a SURB reply; the id is content-derived so it draws no randomness."""
    frames = fragment(message, hashlib.sha256(message).digest()[:8])
    if len(frames) != 1:
        raise ValueError("message does not fit a single reply packet")
    return frames[0]


class RecordingTransport:
    """Collects effects; timers fire only when :meth:`fire_timers` is called."""

    def __init__(self, now: float = 0.0):
        self._now = now
        self.effects: list[Effect] = []
        self.timers: list[tuple[float, Callable[[], None], Timer]] = []

    @property
    def now(self) -> float:
        return self._now

    def advance(self, t: float) -> None:
        self._now = t

    def send(self, effect: Effect) -> None:
        self.effects.append(effect)

    def set_timer(self, delay: float, fn: Callable[[], None]) -> Timer:
        t = Timer()
        self.timers.append((self._now + delay, fn, t))
        return t

    def fire_timers(self) -> None:
        pending, self.timers = self.timers, []
        for due, fn, t in sorted(pending, key=lambda e: e[0]):
            if not t.cancelled:
                self._now = max(self._now, due)
                fn()

    def take(self) -> list[Effect]:
        out, self.effects = self.effects, []
        return out


class SimEndpoint:
    """Attaches a protocol object to the simulator through its provider."""

    def __init__(
        self,
        sim: Simulator,
        node_id: str,
        provider: str,
        email: EmailService | None = None,
        rng: Randomness | None = None,
    ):
        self.sim = sim
        self.node_id = node_id
        self.provider = provider
        self.inbox = inbox_for(node_id)
        self.email = email
        self.rng = rng or sim.endpoint_rng(node_id)
        self.handler: Callable[[Message], None] | None = None
        self._reasm = Reassembler()
        # harness-only: every message this endpoint emitted, for byte scans
        self.emitted: list[bytes] = []
        sim.register_endpoint(node_id, provider, self.inbox, self._on_payload)

    @property
    def now(self) -> float:
        return self.sim.now

    def set_timer(self, delay: float, fn: Callable[[], None]) -> Timer:
        return self.sim.schedule(delay, fn)

    def send(self, effect: Effect) -> None:
        if self.sim.is_crashed(self.node_id):
            return
        trace = self.sim.config.record_trace
        if isinstance(effect, SendContact):
            raw = effect.message.encode()
            if trace:
                self.emitted.append(raw)
            for frame in fragment(raw, self.rng.read(8)):
                route = self.sim.topology.choose_route(effect.contact, self.rng, self.sim.config.mu)
                self.sim.submit(build_packet(route, frame, self.rng), self.node_id)
        elif isinstance(effect, SendSurb):
            raw = effect.message.encode()
            if trace:
                self.emitted.append(raw)
            self.sim.submit(apply_surb(effect.surb, surb_frame(raw)), self.node_id)
        elif isinstance(effect, SubmitPacket):
            if trace:
                self.emitted.append(effect.packet.to_bytes())
            self.sim.submit(effect.packet, self.node_id)
        elif isinstance(effect, SendEmail):
            if self.email is None:
                raise RuntimeError(f"{self.node_id} has no email access")
            if trace:
                self.emitted.append(effect.email.to_bytes())
            self.email.send(effect.email)
        else:
            raise TypeError(f"unknown effect {effect!r}")

    def _on_payload(self, payload: bytes) -> None:
        raw = self._reasm.add(payload)
        if raw is None:
            return
        try:
            msg = decode(raw)
        except WireError:
            return
        self.dispatch(msg)

    def dispatch(self, msg: Message) -> None:
        if self.handler is None:
            return
        spec = self.sim.fault_at(self.node_id)
        if spec is not None and spec.mode == BYZANTINE:
            spec.behavior(self.sim, self.node_id, msg, self.handler)
        else:
            self.handler(msg)
