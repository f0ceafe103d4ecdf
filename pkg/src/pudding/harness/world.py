"""Assemble a simulated deployment: mixes, providers, discovery nodes, users, email."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

from ..client import InitRequest, UserDevice, accept_all
from ..crypto import DetPrg, KeyPair, kdf
from ..discovery import SHARED_SECRET_LEN, Directory, DiscoveryNode, DiscoveryRecord, NodeInfo
from ..emailsim import DomainKeyStore, EmailService, MailServer, domain_of
from ..mixnet import SimConfig, Simulator, Topology
from ..sphinx import ContactInfo
from ..transport import SimEndpoint, inbox_for

NODE_EMAIL_DOMAIN = "discovery.invalid"
USER_DOMAINS = ("mail-a.example", "mail-b.example")


def seeded_rng(seed: int, label: str) -> DetPrg:
    return DetPrg(kdf(seed.to_bytes(8, "big") + b"|" + label.encode(), "endpoint rng"))


def username_for(i: int) -> str:
    return f"user{i}@{USER_DOMAINS[i % len(USER_DOMAINS)]}"


@dataclass
class World:
    sim: Simulator
    topology: Topology
    directory: Directory
    nodes: dict[str, DiscoveryNode]
    endpoints: dict[str, SimEndpoint]
    email: EmailService
    domain_keys: DomainKeyStore
    k: bytes
    devices: dict[str, UserDevice] = field(default_factory=dict)
    node_keys: dict[str, KeyPair] = field(default_factory=dict)
    seed: int = 0

    @property
    def config(self) -> SimConfig:
        return self.sim.config

    def add_device(
        self,
        name: str,
        username: str | None = None,
        policy: Callable[[UserDevice, InitRequest], bool] = accept_all,
        provider: str | None = None,
    ) -> UserDevice:
        rng = seeded_rng(self.seed, "device|" + name)
        keys = KeyPair.generate(rng)
        prov = provider or self.topology.providers[len(self.devices) % len(self.topology.providers)]
        ep = SimEndpoint(self.sim, name, prov, self.email, rng)
        contact = ContactInfo(keys.pk, prov, ep.inbox)
        dev = UserDevice(name, keys, contact, self.directory, self.topology, self.config, ep, rng, username, policy)
        ep.handler = dev.on_message
        if username is not None:
            self.ensure_domain(domain_of(username))
            dev.mailbox = self.email.open_mailbox(username, dev.on_verification_email)
        self.endpoints[name] = ep
        self.devices[name] = dev
        return dev

    def ensure_domain(self, domain: str) -> MailServer:
        server = self.email.server(domain)
        if server is None:
            server = MailServer(domain, self.domain_keys, seeded_rng(self.seed, "mail|" + domain))
            self.email.add_server(server)
        return server

    def provision(self, device: UserDevice, nodes: list[str] | None = None) -> None:
        """Install the device's record directly at the given nodes (all by default)."""
        assert device.username is not None
        record = DiscoveryRecord(device.username, device.contact)
        for nid in nodes if nodes is not None else self.directory.ids:
            self.nodes[nid].provision(record)


def build_world(
    n: int,
    config: SimConfig | None = None,
    seed: int = 0,
    layers: int = 3,
    mixes_per_layer: int = 3,
    providers: int = 3,
) -> World:
    config = config or SimConfig(rng_seed=seed)
    setup = seeded_rng(seed, "topology")
    topology, secrets = Topology.generate(setup, layers, mixes_per_layer, providers)
    node_ids = [f"disc-{i}" for i in range(n)]
    topology.discovery_nodes = list(node_ids)
    sim = Simulator(topology, secrets, config)
    store = DomainKeyStore()
    email = EmailService(sim.schedule, store, config.email_delay)
    k = seeded_rng(seed, "shared secret").read(SHARED_SECRET_LEN)

    keys = {nid: KeyPair.generate(seeded_rng(seed, "node|" + nid)) for nid in node_ids}
    infos = []
    for i, nid in enumerate(node_ids):
        prov = topology.providers[i % len(topology.providers)]
        contact = ContactInfo(keys[nid].pk, prov, inbox_for(nid))
        infos.append(NodeInfo(nid, keys[nid].pk, contact, f"{nid}@{NODE_EMAIL_DOMAIN}"))
    directory = Directory(tuple(infos))

    grace = config.challenge_grace_factor * config.mean_latency(layers)
    nodes, endpoints = {}, {}
    for info in infos:
        ep = SimEndpoint(sim, info.node_id, info.contact.provider, email)
        node = DiscoveryNode(info.node_id, keys[info.node_id], k, directory, topology, config.mu, ep, ep.rng, store, grace)
        ep.handler = node.on_message
        email.open_mailbox(info.email, node.on_email)
        nodes[info.node_id] = node
        endpoints[info.node_id] = ep
    return World(sim, topology, directory, nodes, endpoints, email, store, k, node_keys=keys, seed=seed)
