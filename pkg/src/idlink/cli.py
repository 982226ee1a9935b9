"""Command-line front end.

Exit codes: 0 success, 1 verification failure, 2 usage or input error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import blockchain as bc
from . import chip_identity as ci
from . import keygen, netsim
from . import transaction_chain as tc
from .formats import (
    MANIFEST_FORMAT,
    MANIFEST_VERSION,
    emit_chip_dump,
    read_chip_dump,
    read_json,
    write_json,
    write_text,
)

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _int(text: str) -> int:
    """Accept decimal, 0x-hex and exponent forms such as 1e12."""
    text = text.strip().replace("_", "").replace(",", "")
    try:
        return int(text, 0)
    except ValueError:
        value = float(text)
        if not value.is_integer():
            raise argparse.ArgumentTypeError(f"not an integer: {text}")
        return int(value)


def _kv(stream, **items):
    for k, v in items.items():
        print(f"{k}={v}", file=stream)


def _load_key(path):
    return keygen.key_from_json(read_json(path))


# --------------------------------------------------------------------------
# subcommands

def cmd_fabricate(args, out):
    process = ci.FabProcess(args.id_bits, args.seed, args.stability)
    outdir = Path(args.out)
    entries = []
    for chip in ci.fabricate_run(process, args.count):
        chip_id = ci.read_chip_id(chip, process, args.read_seed)
        name = f"chip_{chip.chip_index:05d}.txt"
        write_text(outdir / name, emit_chip_dump(chip_id))
        entries.append({"index": chip.chip_index, "file": name,
                        "commitment": keygen.sha256(chip_id.to_bytes()).hex()})
        print(outdir / name, file=out)
    write_json(outdir / "manifest.json", {
        "format": MANIFEST_FORMAT, "version": MANIFEST_VERSION, "id_bits": args.id_bits,
        "fab_seed": args.seed, "stability": args.stability, "read_seed": args.read_seed, "chips": entries,
    })
    return EXIT_OK


def cmd_derive_keys(args, out):
    chip_id = read_chip_dump(args.chip)
    if args.scheme == "rsa":
        key = keygen.derive_rsa_keypair(chip_id, args.offset1, args.offset2, args.e)
        if not args.keep_primes:
            key = key.without_primes()
    else:
        key = keygen.derive_elgamal_keypair(chip_id, args.p, args.g)
    write_json(args.out, keygen.key_to_json(key))
    pub = keygen.public_key_bytes(key.public)
    _kv(out, scheme=args.scheme, address=keygen.sha256(pub).hex(), out=args.out)
    return EXIT_OK


def cmd_transfer(args, out):
    sender = _load_key(args.sender)
    recipient = _load_key(args.recipient)
    recipient_pub = recipient.public if hasattr(recipient, "public") else recipient
    path = Path(args.record)
    if path.exists():
        record = tc.record_from_jsonl(path.read_text())
        if record[-1].public_key != sender.public:
            print("error: sender does not own the latest unit of this record", file=sys.stderr)
            return EXIT_FAIL
    else:
        record = [tc.make_genesis(sender).unit]
    unit = tc.transfer(tc.LogicalNode(record[-1], sender), recipient_pub)
    record.append(unit)
    write_text(path, tc.record_to_jsonl(record))
    _kv(out, hop=len(record) - 1, unit_hash=tc.unit_hash(unit).hex())
    return EXIT_OK


def _random_bundles(n_blocks, leaves_per_block, seed):
    import numpy as np

    rng = np.random.default_rng(seed)
    return [[rng.bytes(32) for _ in range(leaves_per_block)] for _ in range(n_blocks)]


def cmd_mine(args, out):
    path = Path(args.chain)
    if path.exists():
        chain = bc.ledger_from_jsonl(path.read_text())
        if args.difficulty is not None and args.difficulty != chain.difficulty_bits:
            raise UsageError(f"ledger difficulty is {chain.difficulty_bits}, not {args.difficulty}")
    else:
        chain = bc.BlockChainState(difficulty_bits=args.difficulty or bc.DEFAULT_DIFFICULTY)
    if args.record:
        leaves = [tc.unit_hash(u) for u in tc.record_from_jsonl(Path(args.record).read_text())]
        bundles = [leaves[i:i + args.bundle_size] for i in range(0, len(leaves), args.bundle_size)]
    elif args.random_blocks:
        bundles = _random_bundles(args.random_blocks, args.leaves_per_block, args.seed)
    else:
        raise UsageError("mine needs --record or --random-blocks")
    start = len(chain)
    for bundle in bundles:
        chain = bc.append_block(chain, bundle, workers=args.workers)
    write_text(path, bc.ledger_to_jsonl(chain))
    print("block\tnonce\tattempts\tblock_hash", file=out)
    for i in range(start, len(chain)):
        b = chain.blocks[i]
        print(f"{i}\t{b.nonce}\t{b.nonce + 1}\t{bc.block_hash(b).hex()}", file=out)
    if args.report_dir:
        from . import report
        report.mining_attempts(chain.per_block_attempts[start:], chain.difficulty_bits, args.report_dir)
    return EXIT_OK


def cmd_verify(args, out):
    if bool(args.chain) == bool(args.record):
        raise UsageError("verify needs exactly one of --chain or --record")
    if args.chain:
        chain = bc.ledger_from_jsonl(Path(args.chain).read_text())
        check = bc.validate_chain(chain)
        if check:
            _kv(out, valid="true", blocks=len(chain))
            return EXIT_OK
        _kv(out, valid="false", first_bad_block=check.first_bad_block, reason=check.reason.replace(" ", "_"))
        return EXIT_FAIL
    record = tc.record_from_jsonl(Path(args.record).read_text())
    hist = tc.verify_history(record)
    if hist:
        _kv(out, valid="true", hops=len(record) - 1)
        return EXIT_OK
    _kv(out, valid="false", first_bad_index=hist.first_bad_index, reason=hist.reason.replace(" ", "_"))
    return EXIT_FAIL


def cmd_tamper_demo(args, out):
    chain = bc.ledger_from_jsonl(Path(args.chain).read_text())
    if not 0 <= args.index < len(chain):
        raise UsageError(f"--index must be in [0, {len(chain) - 1}]")
    forged = bc.default_forged_root(chain, args.index)
    flagged = bc.validate_chain(bc.tamper_block(chain, args.index, forged))
    repaired, rep = bc.tamper_and_repair(chain, args.index, forged)
    _kv(out, tampered_index=rep.tampered_index, unrepaired_first_bad_block=flagged.first_bad_block,
        blocks_remined=rep.blocks_remined, total_hash_attempts=rep.total_hash_attempts,
        per_block_attempts=",".join(map(str, rep.per_block_attempts)),
        repaired_valid=str(bool(bc.validate_chain(repaired))).lower())
    if args.out:
        write_text(args.out, bc.ledger_to_jsonl(repaired))
    if args.report_dir:
        from . import report
        report.repair_cost(rep, args.report_dir)
    return EXIT_OK


def cmd_retention(args, out):
    process = ci.FabProcess(args.id_bits, args.seed, args.stability)
    model = ci.AgingModel(args.temp, args.hours, args.flip)
    rep = ci.retention_experiment(process, args.n_chips, model, seed=args.seed)
    _kv(out, chips=rep.n_chips, id_bits=rep.id_bits, temp_c=args.temp, hours=args.hours,
        inconsistent_chips=rep.inconsistent_chips, mismatched_bits=rep.total_mismatched_bits)
    if args.report_dir:
        from . import report
        report.retention(rep, args.report_dir)
    return EXIT_OK


def cmd_collision(args, out):
    _kv(out, id_bits=args.id_bits, n_chips=args.n_chips, mode=args.mode,
        information_log10=f"{ci.information_quantity_log10(args.id_bits):.4f}",
        collision_log10=f"{ci.collision_probability_log10(args.id_bits, args.n_chips, args.mode):.4f}")
    return EXIT_OK


_SIM_FLAGS = {
    "devices": "n_devices", "transactions": "n_transactions", "bundle_size": "bundle_size",
    "difficulty": "difficulty_bits", "spoofs": "spoof_attempts", "tampers": "tamper_attempts",
    "scheme": "scheme", "id_bits": "id_bits",
}


def _emit_sim(report, args, out):
    doc = report.to_dict()
    if args.out:
        write_json(args.out, doc)
    print(report.summary_table(), file=out)
    if args.report_dir:
        from . import report as figs
        figs.simulation(report, args.report_dir)


def cmd_simulate(args, out):
    overrides = {field: getattr(args, flag) for flag, field in _SIM_FLAGS.items()
                 if getattr(args, flag) is not None}
    config = netsim.ScenarioConfig.named(args.scenario, master_seed=args.seed, **overrides)
    report, log = netsim.record_scenario(config)
    if args.events:
        write_text(args.events, log.to_jsonl())
    _emit_sim(report, args, out)
    ok = report.spoofs_accepted == 0 and report.tampers_detected == report.tampers_attempted
    return EXIT_OK if ok else EXIT_FAIL


def cmd_replay(args, out):
    log = netsim.EventLog.from_jsonl(Path(args.events).read_text())
    try:
        report = netsim.replay(log)
    except netsim.ReplayError as exc:
        print(f"replay failed: {exc}", file=sys.stderr)
        return EXIT_FAIL
    _emit_sim(report, args, out)
    return EXIT_OK


# --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="idlink", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("fabricate", help="simulate a fab run and dump chip IDs")
    p.add_argument("--id-bits", type=_int, default=256)
    p.add_argument("--count", type=_int, required=True)
    p.add_argument("--seed", type=_int, required=True)
    p.add_argument("--stability", type=float, default=1.0)
    p.add_argument("--read-seed", type=_int, default=0)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_fabricate)

    p = sub.add_parser("derive-keys", help="derive a key pair from a chip dump")
    p.add_argument("--chip", required=True)
    p.add_argument("--scheme", choices=["rsa", "elgamal"], default="rsa")
    p.add_argument("--offset1", type=_int, default=keygen.DEFAULT_OFFSET1)
    p.add_argument("--offset2", type=_int, default=keygen.DEFAULT_OFFSET2)
    p.add_argument("--e", type=_int, default=keygen.DEFAULT_E)
    p.add_argument("--p", type=_int, default=keygen.ELGAMAL_P256, help="ElGamal prime")
    p.add_argument("--g", type=_int, default=keygen.ELGAMAL_G256, help="ElGamal primitive root")
    p.add_argument("--keep-primes", action="store_true", help="do not erase RSA p and q")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_derive_keys)

    p = sub.add_parser("transfer", help="append a signed transfer to a record file")
    p.add_argument("--record", required=True)
    p.add_argument("--sender", required=True, help="sender key file (with secret)")
    p.add_argument("--recipient", required=True, help="recipient key file")
    p.set_defaults(func=cmd_transfer)

    p = sub.add_parser("mine", help="bundle leaves into proof-of-work blocks")
    p.add_argument("--chain", required=True, help="ledger file (created if missing)")
    p.add_argument("--difficulty", type=_int, default=None)
    p.add_argument("--record", help="transfer record whose unit hashes become leaves")
    p.add_argument("--bundle-size", type=_int, default=256)
    p.add_argument("--random-blocks", type=_int, default=0)
    p.add_argument("--leaves-per-block", type=_int, default=8)
    p.add_argument("--seed", type=_int, default=0)
    p.add_argument("--workers", type=_int, default=1)
    p.add_argument("--report-dir")
    p.set_defaults(func=cmd_mine)

    p = sub.add_parser("verify", help="validate a ledger or a transfer record")
    p.add_argument("--chain")
    p.add_argument("--record")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("tamper-demo", help="rewrite one block and measure the repair cost")
    p.add_argument("--chain", required=True)
    p.add_argument("--index", type=_int, required=True)
    p.add_argument("--out", help="write the repaired ledger here")
    p.add_argument("--report-dir")
    p.set_defaults(func=cmd_tamper_demo)

    p = sub.add_parser("retention", help="read / bake / re-read experiment")
    p.add_argument("--n-chips", type=_int, default=1116)
    p.add_argument("--id-bits", type=_int, default=1024)
    p.add_argument("--stability", type=float, default=1.0)
    p.add_argument("--flip", type=float, default=0.0)
    p.add_argument("--temp", type=float, default=125.0)
    p.add_argument("--hours", type=float, default=168.0)
    p.add_argument("--seed", type=_int, default=0)
    p.add_argument("--report-dir")
    p.set_defaults(func=cmd_retention)

    p = sub.add_parser("collision", help="ID-space size and collision odds (log10)")
    p.add_argument("--id-bits", type=_int, required=True)
    p.add_argument("--n-chips", type=_int, required=True)
    p.add_argument("--mode", choices=[m.value for m in ci.CollisionMode], default="birthday")
    p.set_defaults(func=cmd_collision)

    p = sub.add_parser("simulate", help="run a device-network scenario")
    p.add_argument("--scenario", default="default", choices=sorted(netsim.SCENARIOS))
    p.add_argument("--seed", type=_int, default=0)
    p.add_argument("--devices", type=_int)
    p.add_argument("--transactions", type=_int)
    p.add_argument("--bundle-size", type=_int)
    p.add_argument("--difficulty", type=_int)
    p.add_argument("--spoofs", type=_int)
    p.add_argument("--tampers", type=_int)
    p.add_argument("--scheme", choices=["rsa", "elgamal"])
    p.add_argument("--id-bits", type=_int)
    p.add_argument("--out", help="report JSON")
    p.add_argument("--events", help="event log (JSON-lines)")
    p.add_argument("--report-dir")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("replay", help="re-execute an event log and check every outcome")
    p.add_argument("--events", required=True)
    p.add_argument("--out", help="report JSON")
    p.add_argument("--report-dir")
    p.set_defaults(func=cmd_replay)
    return ap


def main(argv=None, out=None) -> int:
    out = out or sys.stdout
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args, out)
    except (UsageError, OSError, ValueError, json.JSONDecodeError) as exc:
        print(f"idlink {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except netsim.ReplayError as exc:
        print(f"idlink {args.command}: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
