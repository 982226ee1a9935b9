"""Signed hash chaining between logical nodes.

Each transaction unit holds its owner's public key, the hash of the unit it
came from and the previous sender's signature over (owner key, that hash).
The signature is itself part of the next hash, so rewriting any unit breaks
every later link.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

from . import keygen
from .keygen import (
    ZERO_DIGEST,
    KeyMaterial,
    PublicKey,
    Signature,
    Verdict,
    lp,
    public_key_bytes,
    read_lp,
    sha256,
    signature_bytes,
)

RECORD_FORMAT = "idlink-transfer-record"
RECORD_VERSION = 1


class ChainError(ValueError):
    pass


@dataclass(frozen=True)
class TransactionUnit:
    public_key: PublicKey
    prev_hash: bytes = ZERO_DIGEST
    prev_signature: Signature | None = None  # None marks a genesis unit

    def __post_init__(self):
        if len(self.prev_hash) != 32:
            raise ChainError("prev_hash must be 32 bytes")

    @property
    def well_formed(self) -> bool:
        # Tampered units are still constructible so that verifiers can
        # locate them; the genesis pairing is checked here instead.
        return (self.prev_signature is None) == (self.prev_hash == ZERO_DIGEST)

    @property
    def is_genesis(self) -> bool:
        return self.prev_signature is None

    def to_bytes(self) -> bytes:
        return public_key_bytes(self.public_key) + lp(self.prev_hash) + signature_bytes(self.prev_signature)

    @classmethod
    def from_bytes(cls, buf: bytes) -> "TransactionUnit":
        key, pos = keygen.parse_public_key(buf)
        prev_hash, pos = read_lp(buf, pos)
        sig, pos = keygen.parse_signature(buf, pos)
        if pos != len(buf):
            raise ChainError("trailing bytes after transaction unit")
        return cls(key, prev_hash, sig)


@dataclass(frozen=True)
class LogicalNode:
    unit: TransactionUnit
    secret_key: KeyMaterial

    @property
    def public_key(self) -> PublicKey:
        return self.unit.public_key


def unit_hash(unit: TransactionUnit) -> bytes:
    return sha256(unit.to_bytes())


def link_message(recipient_public_key: PublicKey, prev_hash: bytes) -> bytes:
    """Digest a sender signs: SHA-256(recipient key || hash of sender's unit)."""
    return sha256(public_key_bytes(recipient_public_key) + prev_hash)


def make_genesis(key: KeyMaterial) -> LogicalNode:
    return LogicalNode(TransactionUnit(key.public), key)


def transfer(sender: LogicalNode, recipient_public_key: PublicKey) -> TransactionUnit:
    h = unit_hash(sender.unit)
    sig = keygen.sign(link_message(recipient_public_key, h), sender.secret_key)
    return TransactionUnit(recipient_public_key, h, sig)


def check_link(sender_public_key: PublicKey, unit: TransactionUnit) -> Verdict:
    if unit.is_genesis:
        return Verdict.MALFORMED
    msg = link_message(unit.public_key, unit.prev_hash)
    return keygen.check_signature(msg, unit.prev_signature, sender_public_key)


def verify_link(sender_public_key: PublicKey, unit: TransactionUnit) -> Verdict:
    """Does ``unit`` carry a valid signature from ``sender_public_key``?

    A genesis unit is accepted as a chain root when ``sender_public_key`` is
    None.
    """
    if sender_public_key is None:
        return Verdict.VALID if unit.is_genesis else Verdict.INVALID
    return check_link(sender_public_key, unit)


@dataclass(frozen=True)
class HistoryCheck:
    ok: bool
    first_bad_index: int | None = None
    reason: str = ""

    def __bool__(self):
        return self.ok


def _check_hop(prev: TransactionUnit, unit: TransactionUnit, k: int) -> HistoryCheck | None:
    if unit.is_genesis:
        return HistoryCheck(False, k, "unexpected genesis unit")
    expected = unit_hash(prev)
    linked = unit.prev_hash == expected
    signed = bool(check_link(prev.public_key, unit))
    if signed and linked:
        return None
    if linked:
        # signature or this unit's own key was altered
        return HistoryCheck(False, k, "bad signature")
    if keygen.check_signature(link_message(unit.public_key, expected), unit.prev_signature, prev.public_key):
        return HistoryCheck(False, k, "hash value does not match predecessor")
    # The predecessor changed after it was signed over. For k > 1 every field
    # of the predecessor is already covered by hop k-1, so in practice this
    # is an altered genesis key.
    return HistoryCheck(False, k - 1, "predecessor altered")


def verify_history(record: list[TransactionUnit], trusted_roots=None) -> HistoryCheck:
    """Walk a transfer record from genesis forward.

    Returns a falsy ``HistoryCheck`` carrying the earliest broken hop.

    A genesis unit is unsigned, so its key is only pinned by the next hop's
    signature. A record holding nothing but a genesis unit therefore needs
    ``trusted_roots`` (enrolled public keys) to catch an altered root key.
    """
    if not record:
        raise ChainError("empty transfer record")
    root = record[0]
    if not root.is_genesis or not root.well_formed:
        return HistoryCheck(False, 0, "record does not start at a genesis unit")
    if trusted_roots is not None and root.public_key not in trusted_roots:
        return HistoryCheck(False, 0, "genesis key is not a trusted root")
    for k in range(1, len(record)):
        bad = _check_hop(record[k - 1], record[k], k)
        if bad is not None:
            return bad
    return HistoryCheck(True)


def build_record(nodes_keys: list[KeyMaterial]) -> list[TransactionUnit]:
    """Honest chain: genesis owned by the first key, then one hop per key."""
    node = make_genesis(nodes_keys[0])
    record = [node.unit]
    for key in nodes_keys[1:]:
        unit = transfer(node, key.public)
        record.append(unit)
        node = LogicalNode(unit, key)
    return record


# --------------------------------------------------------------------------
# JSON-lines persistence: a header line, then one unit per line with its
# owner key, received hash and received signature as hex of the canonical
# byte encodings.

def record_to_jsonl(record: list[TransactionUnit]) -> str:
    lines = [json.dumps({"format": RECORD_FORMAT, "version": RECORD_VERSION, "units": len(record)})]
    for unit in record:
        lines.append(json.dumps({
            "public_key": public_key_bytes(unit.public_key).hex(),
            "hash": unit.prev_hash.hex(),
            "signature": signature_bytes(unit.prev_signature).hex(),
        }))
    return "\n".join(lines) + "\n"


def record_from_jsonl(text: str) -> list[TransactionUnit]:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise ChainError("empty record file")
    header = json.loads(lines[0])
    if header.get("format") != RECORD_FORMAT or header.get("version") != RECORD_VERSION:
        raise ChainError("not a supported transfer record file")
    if header.get("units") != len(lines) - 1:
        raise ChainError("record file is truncated or has extra lines")
    record = []
    for ln in lines[1:]:
        row = json.loads(ln)
        key, _ = keygen.parse_public_key(bytes.fromhex(row["public_key"]))
        sig, _ = keygen.parse_signature(bytes.fromhex(row["signature"]))
        record.append(TransactionUnit(key, bytes.fromhex(row["hash"]), sig))
    return record
