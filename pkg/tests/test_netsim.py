import json
import random
from dataclasses import replace

import pytest

from idlink import transaction_chain as tc
from idlink.netsim import (
    ConfigError,
    EventLog,
    ReplayError,
    ScenarioConfig,
    SimEvent,
    Simulation,
    expected_blocks,
    record_scenario,
    replay,
    run_scenario,
)

SMALL = ScenarioConfig(n_devices=12, n_transactions=60, bundle_size=16, difficulty_bits=8,
                       spoof_attempts=20, tamper_attempts=10, master_seed=5, scheme="elgamal")


@pytest.fixture(scope="module")
def honest():
    cfg = ScenarioConfig(n_devices=100, n_transactions=1000, bundle_size=256, difficulty_bits=10)
    return cfg, *record_scenario(cfg)


@pytest.fixture(scope="module")
def small():
    return record_scenario(SMALL)


def test_honest_run(honest):
    cfg, report, log = honest
    assert report.transfers_ok == 1000 and report.transfers_rejected == 0
    assert report.blocks_mined == expected_blocks(cfg) == 4
    assert report.spoofs_attempted == 0 and report.tampers_attempted == 0
    assert report.total_hash_attempts == sum(e.outcome["attempts"] for e in log.events if e.kind == "mine")


def test_small_run_attacks(small):
    report, log = small
    assert report.spoofs_attempted == 20 and report.spoofs_accepted == 0
    assert report.tampers_attempted == 10 and report.tampers_detected == 10
    assert report.transfers_ok == 60
    assert report.blocks_mined == expected_blocks(SMALL)


def test_replay_reproduces_report(small):
    report, log = small
    again = replay(EventLog.from_jsonl(log.to_jsonl()))
    assert again == report
    assert again.to_dict() == report.to_dict()


def test_same_seed_same_run(small):
    report, log = small
    report2, log2 = record_scenario(SMALL)
    assert report2 == report
    assert log2.to_jsonl() == log.to_jsonl()


def test_different_seed_differs(small):
    report, _ = small
    assert run_scenario(replace(SMALL, master_seed=6)).ledger_tip != report.ledger_tip


def test_history_reconstruction():
    sim = Simulation(ScenarioConfig(n_devices=4, n_transactions=1, difficulty_bits=8, scheme="elgamal"))
    sim._do_transfer(0, 1, "00" * 32)
    sim._do_transfer(1, 2, "01" * 32)
    sim._do_transfer(2, 3, "02" * 32)
    record = sim.record_for(3)
    assert len(record) == 4
    assert tc.verify_history(record)


def test_log_truncation_detected(small):
    _, log = small
    lines = log.to_jsonl().splitlines()
    with pytest.raises(ReplayError):
        EventLog.from_jsonl("\n".join(lines[:-1]))
    with pytest.raises(ReplayError):
        EventLog.from_jsonl("\n".join(lines[:-3] + lines[-1:]))
    with pytest.raises(ReplayError):
        EventLog.from_jsonl(lines[0])


def test_log_version_checked(small):
    _, log = small
    text = log.to_jsonl().replace('"version": 1', '"version": 99', 1)
    with pytest.raises(ReplayError, match="version"):
        EventLog.from_jsonl(text)


def _mutate(event: SimEvent, rnd: random.Random) -> SimEvent:
    params = dict(event.params)
    key = rnd.choice(sorted(params))
    v = params[key]
    if isinstance(v, str):
        i = rnd.randrange(len(v))
        params[key] = v[:i] + ("0" if v[i] != "0" else "1") + v[i + 1:]
    else:
        params[key] = v + rnd.choice([-1, 1])
    return replace(event, params=params)


def test_single_event_edits_diverge(small):
    # any edited event must either fail to run or change a recorded outcome
    _, log = small
    rnd = random.Random(2)
    diverged = 0
    trials = 100
    for _ in range(trials):
        events = list(log.events)
        i = rnd.randrange(len(events))
        events[i] = _mutate(events[i], rnd)
        if events[i] == log.events[i]:
            continue
        try:
            replay(EventLog(log.config, events))
        except ReplayError:
            diverged += 1
    assert diverged == trials


def test_replay_config_mismatch(small):
    _, log = small
    with pytest.raises(ReplayError):
        replay(log, replace(SMALL, master_seed=99))


def test_out_of_order_event(small):
    _, log = small
    events = list(log.events)
    events[3], events[4] = events[4], events[3]
    with pytest.raises(ReplayError):
        replay(EventLog(log.config, events))


@pytest.mark.parametrize("kwargs", [dict(n_devices=1), dict(n_transactions=0), dict(bundle_size=0),
                                    dict(spoof_attempts=-1), dict(difficulty_bits=0), dict(difficulty_bits=33),
                                    dict(master_seed=-1), dict(scheme="dsa"), dict(id_bits=32)])
def test_config_errors(kwargs):
    with pytest.raises((ConfigError, ValueError)):
        ScenarioConfig(**kwargs)


def test_config_dict_roundtrip():
    d = SMALL.to_dict()
    assert d["attack_mix"] == {"spoof_attempts": 20, "tamper_attempts": 10}
    assert ScenarioConfig.from_dict(json.loads(json.dumps(d))) == SMALL
    with pytest.raises(ConfigError):
        ScenarioConfig.from_dict({**d, "bogus": 1})


def test_named_scenarios():
    cfg = ScenarioConfig.named("ssd-controller", n_transactions=40, bundle_size=20, difficulty_bits=8,
                               scheme="elgamal", spoof_attempts=5)
    assert cfg.device_role == "ssd-cache-controller" and cfg.n_devices == 64
    sim = Simulation(cfg)
    assert all(d.metadata["role"] == "ssd-cache-controller" for d in sim.devices)
    report = run_scenario(cfg)
    assert report.spoofs_accepted == 0 and report.transfers_ok == 40
    with pytest.raises(ConfigError):
        ScenarioConfig.named("nope")


def test_summary_table(small):
    report, _ = small
    table = report.summary_table()
    assert "spoofs_accepted" in table and "wall_time" in table
    assert "wall_time" not in report.to_dict()


def test_text_edit_caught_by_digest(small):
    _, log = small
    lines = log.to_jsonl().splitlines()
    row = json.loads(lines[5])
    row["outcome"]["auth"] = "accept" if row["outcome"].get("auth") != "accept" else "replay"
    lines[5] = json.dumps(row, sort_keys=True, separators=(",", ":"))
    with pytest.raises(ReplayError, match="digest"):
        EventLog.from_jsonl("\n".join(lines))
