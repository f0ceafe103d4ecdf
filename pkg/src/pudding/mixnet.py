"""Deterministic discrete-event simulator of a layered mix network.

Endpoints (user devices and discovery nodes) attach to providers. Packets
travel endpoint -> own provider -> one mix per layer -> destination provider
-> endpoint. Mixes hold each packet for the delay embedded in its header;
providers relay without delay. Every link adds a constant transit time.
"""

from __future__ import annotations

import csv
import heapq
import io
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Any, Callable, Iterable

from .crypto import (
    GroupElement,
    KeyPair,
    Randomness,
    DetPrg,
    exponential,
    fake_public_key,
    kdf,
    randbelow,
)
from .sphinx import (
    BLACK_HOLE,
    ContactInfo,
    Deliver,
    Drop,
    Forward,
    Hop,
    NodeId,
    RouteSpec,
    SphinxPacket,
    process_at_node,
)

INFINITY = math.inf


class TopologyError(Exception):
    pass


def sample_delay(rng: Randomness, mu: float) -> float:
    """Exponential per-hop delay with mean ``mu`` seconds."""
    if not mu > 0:
        raise ValueError("mean delay mu must be positive")
    return exponential(rng, mu)


@dataclass
class Topology:
    layers: list[list[NodeId]]
    providers: list[NodeId]
    discovery_nodes: list[NodeId] = field(default_factory=list)
    node_keys: dict[NodeId, GroupElement] = field(default_factory=dict)
    black_hole: NodeId = BLACK_HOLE

    def __post_init__(self):
        if len(self.layers) < 3:
            raise TopologyError("at least three mix layers are required")
        self.node_keys.setdefault(self.black_hole, fake_public_key())

    @classmethod
    def generate(
        cls, rng: Randomness, layers: int = 3, mixes_per_layer: int = 3, providers: int = 3
    ) -> tuple[Topology, dict[NodeId, KeyPair]]:
        secrets: dict[NodeId, KeyPair] = {}
        layer_ids = []
        for li in range(layers):
            ids = [f"mix-{li}-{j}" for j in range(mixes_per_layer)]
            layer_ids.append(ids)
            for nid in ids:
                secrets[nid] = KeyPair.generate(rng)
        prov_ids = [f"prov-{j}" for j in range(providers)]
        for nid in prov_ids:
            secrets[nid] = KeyPair.generate(rng)
        topo = cls(layer_ids, prov_ids, node_keys={k: v.pk for k, v in secrets.items()})
        return topo, secrets

    @property
    def mixes(self) -> list[NodeId]:
        return [m for layer in self.layers for m in layer]

    def choose_route(self, destination: ContactInfo, rng: Randomness, mu: float) -> RouteSpec:
        """One mix per layer with exponential delays, then the destination provider."""
        hops = []
        for layer in self.layers:
            node = layer[randbelow(rng, len(layer))]
            hops.append(Hop(node, self.node_keys[node], sample_delay(rng, mu)))
        prov = destination.provider
        if prov not in self.node_keys:
            raise TopologyError(f"unknown provider {prov!r}")
        hops.append(Hop(prov, self.node_keys[prov], 0.0))
        return RouteSpec(tuple(hops), destination)


@dataclass(frozen=True)
class SimConfig:
    mu: float = 0.05
    lambda_send: float = 0.1
    rng_seed: int = 0
    transit: float = 0.01
    email_delay: float = 0.05
    lookup_timeout_factor: float = 10.0
    contact_timeout_factor: float = 30.0
    registration_timeout_factor: float = 30.0
    challenge_grace_factor: float = 10.0
    record_trace: bool = False

    def __post_init__(self):
        if not self.mu > 0:
            raise ValueError("mu must be positive")
        if self.transit < 0 or self.email_delay < 0:
            raise ValueError("transit and email delays must be non-negative")

    def mean_latency(self, layers: int = 3) -> float:
        """Expected one-way endpoint-to-endpoint latency."""
        return layers * self.mu + (layers + 3) * self.transit

    def meets_loopix_ratio(self) -> bool:
        return self.lambda_send / self.mu >= 2


CRASH = "crash"
BYZANTINE = "byzantine"

# behavior(sim, node, item, honest) -> None; item is a packet at mixes/providers
# and a decoded wire message at endpoints; honest(item) runs normal handling,
# honest(None) at a mix records a drop
Behavior = Callable[["Simulator", NodeId, Any, Callable[[Any], None]], None]


@dataclass(frozen=True)
class FaultSpec:
    node: NodeId
    mode: str
    behavior: Behavior | None = None
    active_from: float = 0.0
    active_to: float = INFINITY

    def __post_init__(self):
        if self.mode not in (CRASH, BYZANTINE):
            raise ValueError(f"unknown fault mode {self.mode!r}")
        if self.mode == BYZANTINE and self.behavior is None:
            raise ValueError("byzantine fault needs a behavior handle")
        if self.active_to < self.active_from:
            raise ValueError("fault window ends before it starts")

    def active(self, t: float) -> bool:
        return self.active_from <= t < self.active_to


@dataclass
class DeliveryRecord:
    pid: int
    origin: NodeId
    endpoint: NodeId
    submitted: float
    delivered: float


@dataclass
class DropRecord:
    pid: int
    node: NodeId
    reason: str
    time: float


@dataclass
class LostRecord:
    pid: int
    node: NodeId
    time: float


@dataclass
class OperationRecord:
    kind: str
    actor: NodeId
    start: float
    end: float
    outcome: str


@dataclass
class SimReport:
    submitted: int = 0
    deliveries: list[DeliveryRecord] = field(default_factory=list)
    drops: list[DropRecord] = field(default_factory=list)
    lost: list[LostRecord] = field(default_factory=list)
    operations: list[OperationRecord] = field(default_factory=list)
    node_counts: dict[NodeId, int] = field(default_factory=dict)

    def accounted(self) -> int:
        return len(self.deliveries) + len(self.drops) + len(self.lost)

    def to_dict(self) -> dict:
        return {
            "submitted": self.submitted,
            "deliveries": [asdict(r) for r in self.deliveries],
            "drops": [asdict(r) for r in self.drops],
            "lost": [asdict(r) for r in self.lost],
            "operations": [asdict(r) for r in self.operations],
            "node_counts": dict(sorted(self.node_counts.items())),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    def operations_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["kind", "actor", "start", "end", "outcome"])
        for op in self.operations:
            w.writerow([op.kind, op.actor, f"{op.start:.6f}", f"{op.end:.6f}", op.outcome])
        return buf.getvalue()


class Timer:
    __slots__ = ("cancelled",)

    def __init__(self):
        self.cancelled = False

    def cancel(self) -> None:
        self.cancelled = True


@dataclass
class _Endpoint:
    node: NodeId
    provider: NodeId
    inbox: bytes
    handler: Callable[[bytes], None] | None
    online: bool
    queued: list[bytes] = field(default_factory=list)


@dataclass
class _InFlight:
    origin: NodeId
    submitted: float


class Simulator:
    """Single-threaded event loop; events run in (due time, insertion order)."""

    def __init__(self, topology: Topology, node_secrets: dict[NodeId, KeyPair], config: SimConfig | None = None):
        self.topology = topology
        self.config = config or SimConfig()
        self._secrets = dict(node_secrets)
        self.now = 0.0
        self._queue: list[tuple[float, int, Callable, tuple]] = []
        self._seq = 0
        self._seen: dict[NodeId, set[bytes]] = {n: set() for n in self._secrets}
        self._faults: list[FaultSpec] = []
        self._endpoints: dict[NodeId, _Endpoint] = {}
        self._by_inbox: dict[tuple[NodeId, bytes], NodeId] = {}
        self._inflight: dict[int, _InFlight] = {}
        self._pid = 0
        self.report = SimReport()
        # harness-only introspection; protocol objects never receive this
        self.audit: list[tuple[float, NodeId, str, bytes]] = []

    # -- scheduling -------------------------------------------------------

    def schedule(self, delay: float, fn: Callable, *args) -> Timer:
        if delay < 0:
            raise ValueError("cannot schedule in the past")
        timer = Timer()
        self._push(self.now + delay, self._fire_timer, (timer, fn, args))
        return timer

    def _fire_timer(self, timer: Timer, fn: Callable, args: tuple) -> None:
        if not timer.cancelled:
            fn(*args)

    def _push(self, due: float, fn: Callable, args: tuple) -> None:
        heapq.heappush(self._queue, (due, self._seq, fn, args))
        self._seq += 1

    def run_until(self, clock_limit: float) -> SimReport:
        while self._queue and self._queue[0][0] <= clock_limit:
            due, _, fn, args = heapq.heappop(self._queue)
            self.now = max(self.now, due)
            fn(*args)
        return self.report

    def pending_events(self) -> int:
        return len(self._queue)

    # -- endpoints --------------------------------------------------------

    def endpoint_rng(self, node: NodeId) -> DetPrg:
        seed = self.config.rng_seed.to_bytes(8, "big") + node.encode()
        return DetPrg(kdf(seed, "endpoint rng"))

    def register_endpoint(
        self,
        node: NodeId,
        provider: NodeId,
        inbox: bytes,
        handler: Callable[[bytes], None] | None = None,
        online: bool = True,
    ) -> None:
        if provider not in self.topology.providers:
            raise TopologyError(f"unknown provider {provider!r}")
        if node in self._endpoints or node in self._secrets:
            raise TopologyError(f"duplicate node id {node!r}")
        self._endpoints[node] = _Endpoint(node, provider, inbox, handler, online)
        self._by_inbox[(provider, inbox)] = node

    def set_online(self, node: NodeId, online: bool) -> None:
        self._endpoint(node).online = online

    def _endpoint(self, node: NodeId) -> _Endpoint:
        try:
            return self._endpoints[node]
        except KeyError:
            raise TopologyError(f"unknown endpoint {node!r}") from None

    def inbox_fetch(self, client: NodeId) -> list[bytes]:
        ep = self._endpoint(client)
        out, ep.queued = ep.queued, []
        return out

    # -- faults -----------------------------------------------------------

    def inject_fault(self, spec: FaultSpec) -> None:
        if spec.node not in self._endpoints and spec.node not in self._secrets:
            raise TopologyError(f"unknown node {spec.node!r}")
        self._faults.append(spec)

    def fault_at(self, node: NodeId, t: float | None = None) -> FaultSpec | None:
        t = self.now if t is None else t
        for spec in self._faults:
            if spec.node == node and spec.active(t):
                return spec
        return None

    def is_crashed(self, node: NodeId) -> bool:
        spec = self.fault_at(node)
        return spec is not None and spec.mode == CRASH

    # -- transport --------------------------------------------------------

    def submit(self, packet: SphinxPacket, from_node: NodeId) -> int:
        """Hand a packet to the sender's provider, which relays it to the first hop."""
        ep = self._endpoint(from_node)
        if packet.first_hop not in self._secrets:
            raise TopologyError(f"unknown first hop {packet.first_hop!r}")
        self._pid += 1
        pid = self._pid
        self.report.submitted += 1
        self._inflight[pid] = _InFlight(from_node, self.now)
        self._count(from_node)
        if self.is_crashed(from_node):
            self._lose(pid, from_node)
            return pid
        t = self.config.transit
        self._push(self.now + t, self._relay, (ep.provider, pid, packet))
        return pid

    def _relay(self, provider: NodeId, pid: int, packet: SphinxPacket) -> None:
        if self.is_crashed(provider):
            self._lose(pid, provider)
            return
        self._push(self.now + self.config.transit, self._arrive, (packet.first_hop, pid, packet))

    def _arrive(self, node: NodeId, pid: int, packet: SphinxPacket) -> None:
        self._count(node)
        if self.config.record_trace:
            self.audit.append((self.now, node, "packet", packet.to_bytes()))
        spec = self.fault_at(node)
        if spec is not None and spec.mode == CRASH:
            self._lose(pid, node)
            return
        if spec is not None and spec.mode == BYZANTINE:
            spec.behavior(self, node, packet, lambda p: self._process(node, pid, p))
            return
        self._process(node, pid, packet)

    def _process(self, node: NodeId, pid: int, packet: SphinxPacket | None) -> None:
        if packet is None:
            self._drop(pid, node, "byzantine")
            return
        result = process_at_node(self._secrets[node], packet, self._seen[node])
        if isinstance(result, Drop):
            self._drop(pid, node, result.reason.value)
        elif isinstance(result, Forward):
            if result.next not in self._secrets:
                self._drop(pid, node, "unknown_next_hop")
                return
            self._push(self.now + result.delay + self.config.transit, self._arrive, (result.next, pid, result.packet))
        elif isinstance(result, Deliver):
            target = self._by_inbox.get((node, result.inbox))
            if target is None:
                self._drop(pid, node, "unknown_inbox")
                return
            self._push(self.now + self.config.transit, self._handoff, (target, pid, result.payload))

    def _handoff(self, node: NodeId, pid: int, payload: bytes) -> None:
        if self.is_crashed(node):
            self._lose(pid, node)
            return
        self._count(node)
        info = self._inflight.pop(pid)
        self.report.deliveries.append(DeliveryRecord(pid, info.origin, node, info.submitted, self.now))
        if self.config.record_trace:
            self.audit.append((self.now, node, "deliver", payload))
        self.deliver_local(node, payload)

    def deliver_local(self, node: NodeId, payload: bytes) -> None:
        """Place a payload at an endpoint as its provider would (also used by adversary injection).

        Byzantine endpoint faults are applied by the endpoint shell after it
        decodes the message, not here.
        """
        ep = self._endpoint(node)
        if self.is_crashed(node):
            return
        if ep.online and ep.handler is not None:
            ep.handler(payload)
        else:
            ep.queued.append(payload)

    def _drop(self, pid: int, node: NodeId, reason: str) -> None:
        self._inflight.pop(pid, None)
        self.report.drops.append(DropRecord(pid, node, reason, self.now))

    def _lose(self, pid: int, node: NodeId) -> None:
        self._inflight.pop(pid, None)
        self.report.lost.append(LostRecord(pid, node, self.now))

    def _count(self, node: NodeId) -> None:
        self.report.node_counts[node] = self.report.node_counts.get(node, 0) + 1

    # -- protocol bookkeeping --------------------------------------------

    def record_operation(self, kind: str, actor: NodeId, start: float, end: float, outcome: str) -> None:
        self.report.operations.append(OperationRecord(kind, actor, start, end, outcome))

    def in_flight(self) -> Iterable[int]:
        return iter(self._inflight)
