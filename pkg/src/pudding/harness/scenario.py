"""Latency scenarios: closed-loop clients registering or discovering each other."""

from __future__ import annotations

from dataclasses import dataclass

from ..client import ANONYMOUS, COMPLETE, NAMED, AddFriendSession, LookupSession, RegistrationState, UserDevice
from ..crypto import randbelow, uniform01
from ..mixnet import CRASH, FaultSpec, SimReport
from .config import ConfigError, ScenarioConfig
from .report import OK, LatencyRow, Metrics
from .world import USER_DOMAINS, World, build_world, seeded_rng, username_for

REGISTER = "register"
LOOKUP = "lookup"
CONTACT_ANONYMOUS = "contact_anonymous"
CONTACT_NAMED = "contact_named"


@dataclass
class ScenarioResult:
    metrics: Metrics
    reports: list[SimReport]


def repetition_seed(seed: int, repetition: int) -> int:
    return int.from_bytes(seeded_rng(seed, f"repetition|{repetition}").read(8), "big")


def _drain_window(world: World) -> float:
    # long enough for any operation started before the deadline to finish or time out
    cfg, layers = world.config, len(world.topology.layers)
    per_try = max(cfg.registration_timeout_factor, cfg.contact_timeout_factor, cfg.lookup_timeout_factor)
    return (world.directory.n + 3) * per_try * cfg.mean_latency(layers)


def _crashed_for(cfg: ScenarioConfig, world: World, phase: str) -> list[str]:
    ids = world.directory.ids
    return [ids[fe.node] for fe in cfg.faults if fe.phase in (phase, "always")]


class _Client:
    def __init__(self, index: int):
        self.index = index
        self.ops = 0
        self.busy = False


def _row(cfg: ScenarioConfig, rep: int, op: str, start: float, end: float | None, outcome: str) -> LatencyRow:
    return LatencyRow(cfg.name, rep, op, start, end, outcome)


def run_repetition(cfg: ScenarioConfig, repetition: int) -> tuple[list[LatencyRow], SimReport]:
    seed = repetition_seed(cfg.rng_seed, repetition)
    world = build_world(cfg.n, cfg.sim_config(seed), seed, cfg.layers, cfg.mixes_per_layer, cfg.providers)
    rng = seeded_rng(seed, "workload")
    rows: list[LatencyRow] = []
    pending: dict[int, LatencyRow] = {}
    sim = world.sim

    def record(key: int, op: str, actor: str, start: float, end: float | None, outcome: str) -> None:
        pending.pop(key, None)
        rows.append(_row(cfg, repetition, op, start, end, outcome))
        if end is not None:
            sim.record_operation(op, actor, start, end, outcome)

    clients = [_Client(i) for i in range(cfg.clients)]
    op_key = iter(range(1 << 62))

    if cfg.workload == REGISTER:
        for nid in _crashed_for(cfg, world, "register"):
            sim.inject_fault(FaultSpec(nid, CRASH))

        def act(c: _Client) -> None:
            c.ops += 1
            name = f"c{c.index}-{c.ops}"
            username = f"user{c.index}-{c.ops}@{USER_DOMAINS[c.index % len(USER_DOMAINS)]}"
            dev = world.add_device(name, username)
            key = next(op_key)
            pending[key] = _row(cfg, repetition, REGISTER, sim.now, None, "unfinished")
            c.busy = True

            def done(reg: RegistrationState) -> None:
                c.busy = False
                record(key, REGISTER, name, reg.started, reg.finished, OK if reg.status == COMPLETE else reg.status)

            dev.register(username, done)

    else:
        devices: list[UserDevice] = []
        for i in range(cfg.clients):
            dev = world.add_device(f"c{i}", username_for(i))
            devices.append(dev)
        down_at_registration = set(_crashed_for(cfg, world, "register"))
        up = [nid for nid in world.directory.ids if nid not in down_at_registration]
        for dev in devices:
            world.provision(dev, up)
        for nid in _crashed_for(cfg, world, "lookup"):
            sim.inject_fault(FaultSpec(nid, CRASH))
        identity = NAMED if cfg.workload == "discover-named" else ANONYMOUS
        contact_op = CONTACT_NAMED if identity == NAMED else CONTACT_ANONYMOUS

        def act(c: _Client) -> None:
            if len(devices) < 2:
                return
            dev = devices[c.index]
            other = randbelow(rng, len(devices) - 1)
            target = devices[other if other < c.index else other + 1]
            assert target.username is not None
            lkey = next(op_key)
            pending[lkey] = _row(cfg, repetition, LOOKUP, sim.now, None, "unfinished")
            c.busy = True

            def contact_done(af: AddFriendSession, ckey: int) -> None:
                c.busy = False
                outcome = OK if af.state == "done" else af.abort_reason or af.state
                record(ckey, contact_op, dev.name, af.started, af.finished, outcome)

            def looked_up(ls: LookupSession) -> None:
                record(lkey, LOOKUP, dev.name, ls.started, ls.finished, OK if ls.status == COMPLETE else ls.status)
                if ls.status != COMPLETE:
                    c.busy = False
                    return
                ckey = next(op_key)
                pending[ckey] = _row(cfg, repetition, contact_op, sim.now, None, "unfinished")
                dev.contact_init(ls, identity, on_done=lambda af: contact_done(af, ckey))

            dev.start_lookup(target.username, looked_up)

    def tick(c: _Client) -> None:
        if sim.now >= cfg.duration:
            return
        if not c.busy:
            act(c)
        sim.schedule(cfg.interarrival, tick, c)

    for c in clients:
        sim.schedule(uniform01(rng) * cfg.initial_pause, tick, c)

    report = sim.run_until(cfg.duration + _drain_window(world))
    rows.extend(pending[k] for k in sorted(pending))
    return rows, report


def run_scenario(cfg: ScenarioConfig) -> ScenarioResult:
    """Run every repetition in sequence; each has its own simulator and seed."""
    cfg.validate()
    if cfg.adversary != "none":
        raise ConfigError("adversary", "scenarios run without an adversary; use the game command")
    metrics = Metrics(n_by_scenario={cfg.name: cfg.n})
    reports = []
    for rep in range(cfg.repetitions):
        rows, report = run_repetition(cfg, rep)
        metrics.rows.extend(rows)
        reports.append(report)
    return ScenarioResult(metrics, reports)
