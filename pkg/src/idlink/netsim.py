"""Deterministic device-network simulation.

Devices built from simulated chips transfer data to each other through the
link layer, a single miner bundles accepted transfers into blocks, and
attackers try MAC-cloning spoofs and ledger rewrites. Every random choice
comes from ``master_seed`` and is written to an event log, so a run can be
replayed and checked event by event.
"""

from __future__ import annotations

import hashlib
import json
import math
import time
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import blockchain as bc
from . import link
from . import transaction_chain as tc
from .chip_identity import FabProcess, fabricate_chip, fabricate_run
from .keygen import Scheme

EVENT_FORMAT = "idlink-events"
EVENT_VERSION = 1

SCENARIOS = {
    "default": {"device_role": "iot-node"},
    # SSD controllers whose DRAM cache is replaced by an identification RAM
    "ssd-controller": {"device_role": "ssd-cache-controller", "n_devices": 64},
}


class ConfigError(ValueError):
    pass


class ReplayError(RuntimeError):
    pass


@dataclass(frozen=True)
class ScenarioConfig:
    n_devices: int = 100
    n_transactions: int = 1000
    bundle_size: int = 256
    difficulty_bits: int = 12
    spoof_attempts: int = 0
    tamper_attempts: int = 0
    master_seed: int = 0
    scenario_name: str = "default"
    scheme: str = "rsa"
    id_bits: int = 256
    device_role: str = "iot-node"

    def __post_init__(self):
        if self.n_devices < 2:
            raise ConfigError("need at least two devices")
        if self.n_transactions < 1:
            raise ConfigError("need at least one transaction")
        if self.bundle_size < 1:
            raise ConfigError("bundle_size must be >= 1")
        if self.spoof_attempts < 0 or self.tamper_attempts < 0:
            raise ConfigError("attack counts must be >= 0")
        if not 1 <= self.difficulty_bits <= 32:
            raise ConfigError("difficulty_bits must be in [1, 32]")
        if not 0 <= self.master_seed < 2**64:
            raise ConfigError("master_seed must be a 64-bit unsigned integer")
        if self.id_bits < 64:
            raise ConfigError("id_bits below 64 cannot give distinct device keys")
        Scheme(self.scheme)

    @classmethod
    def named(cls, name: str, **overrides) -> "ScenarioConfig":
        if name not in SCENARIOS:
            raise ConfigError(f"unknown scenario {name!r}; choose from {sorted(SCENARIOS)}")
        return cls(**{"scenario_name": name, **SCENARIOS[name], **overrides})

    def to_dict(self) -> dict:
        d = asdict(self)
        d["attack_mix"] = {"spoof_attempts": d.pop("spoof_attempts"),
                           "tamper_attempts": d.pop("tamper_attempts")}
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioConfig":
        d = dict(d)
        d.update(d.pop("attack_mix", {}))
        known = {f.name for f in fields(cls)}
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown config fields: {sorted(extra)}")
        return cls(**d)


@dataclass(frozen=True)
class SimEvent:
    tick: int
    seq: int
    kind: str  # transfer | spoof | mine | tamper
    params: dict
    outcome: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, separators=(",", ":"))


@dataclass
class SimReport:
    transfers_ok: int = 0
    transfers_rejected: int = 0
    spoofs_attempted: int = 0
    spoofs_accepted: int = 0
    tampers_attempted: int = 0
    tampers_detected: int = 0
    blocks_mined: int = 0
    total_hash_attempts: int = 0
    ledger_tip: str = ""
    wall_time: float = field(default=0.0, compare=False)

    def to_dict(self, timing: bool = False) -> dict:
        d = asdict(self)
        if not timing:
            d.pop("wall_time")
        return d

    def summary_table(self) -> str:
        rows = [(k, v) for k, v in self.to_dict(timing=True).items()]
        width = max(len(k) for k, _ in rows)
        return "\n".join(f"{k:<{width}}  {v}" for k, v in rows)


@dataclass
class EventLog:
    config: ScenarioConfig
    events: list[SimEvent] = field(default_factory=list)

    def digest(self) -> str:
        h = hashlib.sha256()
        for ev in self.events:
            h.update(ev.to_json().encode() + b"\n")
        return h.hexdigest()

    def to_jsonl(self) -> str:
        head = json.dumps({"format": EVENT_FORMAT, "version": EVENT_VERSION, "config": self.config.to_dict()},
                          sort_keys=True)
        tail = json.dumps({"end": True, "events": len(self.events), "digest": self.digest()}, sort_keys=True)
        return "\n".join([head, *(ev.to_json() for ev in self.events), tail]) + "\n"

    @classmethod
    def from_jsonl(cls, text: str) -> "EventLog":
        lines = [ln for ln in text.splitlines() if ln.strip()]
        if len(lines) < 2:
            raise ReplayError("event log is truncated")
        head = json.loads(lines[0])
        if head.get("format") != EVENT_FORMAT:
            raise ReplayError("not an event log")
        if head.get("version") != EVENT_VERSION:
            raise ReplayError(f"event log version {head.get('version')!r} is not supported")
        tail = json.loads(lines[-1])
        if not tail.get("end"):
            raise ReplayError("event log is truncated (no end marker)")
        events = [SimEvent(**json.loads(ln)) for ln in lines[1:-1]]
        log = cls(ScenarioConfig.from_dict(head["config"]), events)
        if tail.get("events") != len(events):
            raise ReplayError("event count does not match end marker")
        if tail.get("digest") != log.digest():
            raise ReplayError("event log digest mismatch")
        return log


def _wire_digest(claimed_owner: link.DeviceNode, resp: link.ChallengeResponse) -> str:
    # the log keeps a digest of each challenge-response message, not the message
    return hashlib.sha256(link.encode_response(claimed_owner.public_key, resp)).hexdigest()


def _rng(seed: int, tag: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, tag]))


class Simulation:
    """World state plus an executor for single events."""

    def __init__(self, config: ScenarioConfig):
        self.config = config
        setup = _rng(config.master_seed, 1)
        self.process = FabProcess(config.id_bits, int(setup.integers(0, 2**63)))
        macs = setup.integers(0, 2**48, size=config.n_devices)
        meta = {"role": config.device_role, "scenario": config.scenario_name}
        self.devices = [
            link.make_device(chip, self.process, config.scheme, mac_address=int(mac), metadata=meta)
            for chip, mac in zip(fabricate_run(self.process, config.n_devices), macs)
        ]
        self.registry = link.Registry()
        for dev in self.devices:
            self.registry.enroll(dev)
        self.chain = bc.BlockChainState(difficulty_bits=config.difficulty_bits)
        self.queue: list[bytes] = []
        # verifier-side history: unit hash -> (unit, hash of the unit it came from)
        self.history: dict[bytes, tuple[tc.TransactionUnit, bytes | None]] = {}
        for dev in self.devices:
            self.history[tc.unit_hash(dev.logical_node.unit)] = (dev.logical_node.unit, None)
        self.report = SimReport()

    # -- event handlers -------------------------------------------------

    def execute(self, ev: SimEvent) -> dict:
        handler = getattr(self, f"_do_{ev.kind}", None)
        if handler is None:
            raise ReplayError(f"unknown event kind {ev.kind!r}")
        return handler(**ev.params)

    def _do_transfer(self, sender: int, recipient: int, challenge: str) -> dict:
        src, dst = self.devices[sender], self.devices[recipient]
        nonce = bytes.fromhex(challenge)
        resp = link.respond(src, nonce)
        auth = self.registry.authenticate(src.public_key, nonce, resp)
        unit = tc.transfer(src.logical_node, dst.public_key)
        linked = bool(tc.verify_link(src.public_key, unit)) and \
            unit.prev_hash == tc.unit_hash(src.logical_node.unit)
        h = tc.unit_hash(unit)
        if auth is link.AuthOutcome.ACCEPT and linked:
            dst.logical_node = tc.LogicalNode(unit, dst.id_core.key)
            self.history[h] = (unit, unit.prev_hash)
            self.queue.append(h)
            self.report.transfers_ok += 1
        else:
            self.report.transfers_rejected += 1
        return {"auth": auth.value, "linked": linked, "unit_hash": h.hex(), "wire": _wire_digest(src, resp)}

    def _do_spoof(self, victim: int, recipient: int, attacker_seed: int, challenge: str) -> dict:
        target, dst = self.devices[victim], self.devices[recipient]
        rogue = FabProcess(self.config.id_bits, attacker_seed)
        attacker = link.spoof_device(target, fabricate_chip(rogue, 0), rogue)
        nonce = bytes.fromhex(challenge)
        resp = link.respond(attacker, nonce, claimed=target.public_key)
        auth = self.registry.authenticate(target.public_key, nonce, resp)
        forged = link.spoofed_transfer(attacker, target, dst)
        forged_ok = bool(tc.verify_link(target.public_key, forged))
        self.report.spoofs_attempted += 1
        if auth is link.AuthOutcome.ACCEPT or forged_ok:
            self.report.spoofs_accepted += 1
        return {"auth": auth.value, "forged_link": forged_ok, "wire": _wire_digest(target, resp),
                "forged_hash": tc.unit_hash(forged).hex()}

    def _do_mine(self, n_leaves: int) -> dict:
        if n_leaves < 1 or n_leaves > len(self.queue):
            raise ReplayError(f"cannot mine {n_leaves} leaves from a queue of {len(self.queue)}")
        bundle, self.queue = self.queue[:n_leaves], self.queue[n_leaves:]
        self.chain = bc.append_block(self.chain, bundle)
        attempts = self.chain.blocks[-1].nonce + 1
        self.report.blocks_mined += 1
        self.report.total_hash_attempts += attempts
        return {"block_hash": self.chain.tip_hash.hex(), "attempts": attempts}

    def _do_tamper(self, block: int, leaf: int, bit: int) -> dict:
        if not 0 <= block < len(self.chain) or not 0 <= leaf < len(self.chain.bundles[block]):
            raise ReplayError("tamper target outside the ledger")
        if not 0 <= bit < 256:
            raise ReplayError("tamper bit outside the leaf digest")
        tampered = bc.tamper_leaf(self.chain, block, leaf, bit)
        check = bc.validate_chain(tampered)
        self.report.tampers_attempted += 1
        if not check:
            self.report.tampers_detected += 1
        return {"detected": not check.ok, "first_bad_block": check.first_bad_block,
                "leaf": tampered.bundles[block][leaf].hex()}

    # -- helpers ----------------------------------------------------------

    def record_for(self, device: int) -> list[tc.TransactionUnit]:
        """Full transfer record ending at a device's current unit."""
        out = []
        h = tc.unit_hash(self.devices[device].logical_node.unit)
        while h is not None:
            unit, h = self.history[h]
            out.append(unit)
        return out[::-1]

    def finish(self, started: float) -> SimReport:
        self.report.ledger_tip = self.chain.tip_hash.hex()
        self.report.wall_time = time.perf_counter() - started
        return self.report


def record_scenario(config: ScenarioConfig) -> tuple[SimReport, EventLog]:
    """Run a scenario, returning the report and a replayable event log."""
    started = time.perf_counter()
    sim = Simulation(config)
    rng = _rng(config.master_seed, 2)
    log = EventLog(config)
    n = config.n_devices

    def emit(tick: int, kind: str, params: dict):
        ev = SimEvent(tick, len(log.events), kind, params)
        log.events.append(SimEvent(ev.tick, ev.seq, kind, params, sim.execute(ev)))

    kinds = np.array([0] * config.n_transactions + [1] * config.spoof_attempts)
    kinds = kinds[rng.permutation(len(kinds))]
    tick = 0
    for tick, k in enumerate(kinds):
        a = int(rng.integers(n))
        b = (a + 1 + int(rng.integers(n - 1))) % n
        nonce = rng.bytes(link.NONCE_SIZE).hex()
        if k == 0:
            emit(tick, "transfer", {"sender": a, "recipient": b, "challenge": nonce})
            if len(sim.queue) >= config.bundle_size:
                emit(tick, "mine", {"n_leaves": config.bundle_size})
        else:
            emit(tick, "spoof", {"victim": a, "recipient": b,
                                 "attacker_seed": int(rng.integers(0, 2**63)), "challenge": nonce})
    tick += 1
    if sim.queue:
        emit(tick, "mine", {"n_leaves": len(sim.queue)})
    for _ in range(config.tamper_attempts):
        tick += 1
        if not len(sim.chain):
            break
        block = int(rng.integers(len(sim.chain)))
        leaf = int(rng.integers(len(sim.chain.bundles[block])))
        emit(tick, "tamper", {"block": block, "leaf": leaf, "bit": int(rng.integers(256))})
    return sim.finish(started), log


def run_scenario(config: ScenarioConfig) -> SimReport:
    return record_scenario(config)[0]


def replay(log: EventLog, config: ScenarioConfig | None = None) -> SimReport:
    """Re-execute a logged run; every recorded outcome must reproduce."""
    if config is not None and config != log.config:
        raise ReplayError("config does not match the event log header")
    started = time.perf_counter()
    sim = Simulation(log.config)
    last = (-1, -1)
    for ev in log.events:
        if (ev.tick, ev.seq) <= last:
            raise ReplayError(f"event {ev.seq} is out of order")
        last = (ev.tick, ev.seq)
        try:
            outcome = sim.execute(ev)
        except (TypeError, KeyError, IndexError, ValueError) as exc:
            raise ReplayError(f"event {ev.seq} cannot be executed: {exc}") from exc
        if outcome != ev.outcome:
            raise ReplayError(f"event {ev.seq} ({ev.kind}) diverged: recorded {ev.outcome}, got {outcome}")
    return sim.finish(started)


def expected_blocks(config: ScenarioConfig) -> int:
    return math.ceil(config.n_transactions / config.bundle_size)
