"""Binding chip IDs to logical addresses.

An ID core reads a chip's identification code and runs it through a key
generator, so the device's public key (its logical address) is a function of
the silicon. Verifiers enroll public keys and later authenticate devices with
signed challenges; the editable MAC address plays no part in that decision.
"""

from __future__ import annotations

import json
import random
import threading
from dataclasses import dataclass, field, replace
from enum import Enum

from . import keygen, transaction_chain as tc
from .chip_identity import Chip, ChipId, FabProcess, read_chip_id
from .keygen import KeyMaterial, PublicKey, Scheme, Signature, lp, public_key_bytes, read_lp, sha256

REGISTRY_FORMAT = "idlink-registry"
REGISTRY_VERSION = 1
NONCE_SIZE = 32


class LinkError(ValueError):
    pass


class DuplicateEnrollment(LinkError):
    pass


@dataclass(frozen=True)
class IdCore:
    chip_id: ChipId
    scheme: Scheme
    params: dict
    key: KeyMaterial

    @property
    def public_key(self) -> PublicKey:
        return self.key.public

    @property
    def primes_erased(self) -> bool:
        return self.scheme is Scheme.RSA and self.key.primes_erased


def make_id_core(chip: Chip, process: FabProcess, scheme: Scheme | str = Scheme.RSA,
                 params: dict | None = None, read_seed: int = 0) -> IdCore:
    scheme = Scheme(scheme)
    params = dict(params or {})
    chip_id = read_chip_id(chip, process, read_seed)
    return IdCore(chip_id, scheme, params, keygen.derive_keypair(chip_id, scheme, **params))


def erase_primes(core: IdCore) -> IdCore:
    """Drop p and q after key generation; d and n keep signing working."""
    if core.scheme is not Scheme.RSA:
        raise LinkError("prime erasure only applies to RSA cores")
    if core.key.primes_erased:
        return core
    return replace(core, key=core.key.without_primes())


def rederive(core: IdCore) -> KeyMaterial:
    return keygen.derive_keypair(core.chip_id, core.scheme, **core.params)


@dataclass
class DeviceNode:
    chip: Chip
    id_core: IdCore
    logical_node: tc.LogicalNode
    mac_address: int = 0  # 48-bit, freely editable, never trusted
    metadata: dict = field(default_factory=dict)

    @property
    def public_key(self) -> PublicKey:
        return self.id_core.public_key


def make_device(chip: Chip, process: FabProcess, scheme: Scheme | str = Scheme.RSA,
                params: dict | None = None, mac_address: int = 0, metadata: dict | None = None,
                erase: bool = True) -> DeviceNode:
    core = make_id_core(chip, process, scheme, params)
    if erase and core.scheme is Scheme.RSA:
        core = erase_primes(core)
    return DeviceNode(chip, core, tc.make_genesis(core.key), mac_address & (2**48 - 1), dict(metadata or {}))


def chip_commitment(chip_id: ChipId) -> bytes:
    return sha256(chip_id.to_bytes())


@dataclass(frozen=True)
class Enrollment:
    public_key: PublicKey
    commitment: bytes
    metadata: dict = field(default_factory=dict, compare=False)


class AuthOutcome(str, Enum):
    ACCEPT = "accept"
    UNKNOWN_ADDRESS = "unknown-address"
    REPLAY = "replay"
    BAD_SIGNATURE = "bad-signature"
    MALFORMED = "malformed"


@dataclass(frozen=True)
class ChallengeResponse:
    challenge_nonce: bytes
    response_signature: Signature


class Registry:
    """Verifier-side table from logical address to chip commitment.

    Writes (enrollment, nonce bookkeeping) are serialized by a lock.
    """

    def __init__(self):
        self.entries: dict[bytes, Enrollment] = {}
        self._seen: set[bytes] = set()
        self._lock = threading.Lock()

    def __len__(self):
        return len(self.entries)

    def __contains__(self, public_key) -> bool:
        return public_key_bytes(public_key) in self.entries

    def enroll(self, device: DeviceNode) -> "Registry":
        key = public_key_bytes(device.public_key)
        with self._lock:
            if key in self.entries:
                raise DuplicateEnrollment("logical address already enrolled")
            self.entries[key] = Enrollment(device.public_key, chip_commitment(device.id_core.chip_id),
                                           dict(device.metadata))
        return self

    def authenticate(self, claimed: PublicKey, nonce: bytes, response: ChallengeResponse) -> AuthOutcome:
        key = public_key_bytes(claimed)
        if key not in self.entries:
            return AuthOutcome.UNKNOWN_ADDRESS
        with self._lock:
            if nonce in self._seen:
                return AuthOutcome.REPLAY
            self._seen.add(nonce)
        if response.challenge_nonce != nonce:
            return AuthOutcome.BAD_SIGNATURE
        verdict = keygen.check_signature(challenge_digest(nonce, claimed), response.response_signature, claimed)
        if verdict is keygen.Verdict.MALFORMED:
            return AuthOutcome.MALFORMED
        return AuthOutcome.ACCEPT if verdict else AuthOutcome.BAD_SIGNATURE

    def to_json(self) -> str:
        rows = [
            {"public_key": k.hex(), "commitment": e.commitment.hex(), "metadata": e.metadata}
            for k, e in self.entries.items()
        ]
        return json.dumps({"format": REGISTRY_FORMAT, "version": REGISTRY_VERSION, "entries": rows},
                          indent=1, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "Registry":
        doc = json.loads(text)
        if doc.get("format") != REGISTRY_FORMAT or doc.get("version") != REGISTRY_VERSION:
            raise LinkError("not a supported registry file")
        reg = cls()
        for row in doc["entries"]:
            raw = bytes.fromhex(row["public_key"])
            key, _ = keygen.parse_public_key(raw)
            reg.entries[raw] = Enrollment(key, bytes.fromhex(row["commitment"]), row.get("metadata", {}))
        return reg


def enroll(registry: Registry, device: DeviceNode) -> Registry:
    return registry.enroll(device)


def challenge(verifier_seed: int) -> bytes:
    return random.Random(verifier_seed).randbytes(NONCE_SIZE)


def challenge_digest(nonce: bytes, claimed: PublicKey) -> bytes:
    return sha256(nonce + public_key_bytes(claimed))


def respond(device: DeviceNode, nonce: bytes, claimed: PublicKey | None = None) -> ChallengeResponse:
    """Sign the challenge with the device's chip-derived key.

    ``claimed`` lets a spoofing device answer for an address it does not own.
    """
    claimed = device.public_key if claimed is None else claimed
    return ChallengeResponse(nonce, keygen.sign(challenge_digest(nonce, claimed), device.id_core.key))


def authenticate(registry: Registry, claimed: PublicKey, nonce: bytes, response: ChallengeResponse) -> AuthOutcome:
    return registry.authenticate(claimed, nonce, response)


# Wire layout of a challenge response: 32-byte nonce || lp(claimed key) ||
# lp(signature bytes).

def encode_response(claimed: PublicKey, response: ChallengeResponse) -> bytes:
    if len(response.challenge_nonce) != NONCE_SIZE:
        raise LinkError("challenge nonce must be 32 bytes")
    return (response.challenge_nonce + lp(public_key_bytes(claimed))
            + lp(keygen.signature_bytes(response.response_signature)))


def decode_response(buf: bytes) -> tuple[PublicKey, ChallengeResponse]:
    if len(buf) < NONCE_SIZE:
        raise LinkError("truncated challenge response")
    nonce = buf[:NONCE_SIZE]
    key_raw, pos = read_lp(buf, NONCE_SIZE)
    sig_raw, pos = read_lp(buf, pos)
    if pos != len(buf):
        raise LinkError("trailing bytes after challenge response")
    key, _ = keygen.parse_public_key(key_raw)
    sig, _ = keygen.parse_signature(sig_raw)
    if sig is None:
        raise LinkError("challenge response carries no signature")
    return key, ChallengeResponse(nonce, sig)


def link_transfer(sender: DeviceNode, recipient: DeviceNode) -> tc.TransactionUnit:
    """Transfer from one device to another through their ID cores.

    The recipient's logical node advances to the new unit. The unit itself is
    an ordinary transaction unit with nothing chip-specific in it.
    """
    unit = tc.transfer(sender.logical_node, recipient.public_key)
    recipient.logical_node = tc.LogicalNode(unit, recipient.id_core.key)
    return unit


def spoof_device(victim: DeviceNode, attacker_chip: Chip, process: FabProcess) -> DeviceNode:
    """A device with its own chip that copies the victim's MAC address."""
    return make_device(attacker_chip, process, victim.id_core.scheme, victim.id_core.params,
                       mac_address=victim.mac_address, metadata={"role": "attacker"})


def spoofed_transfer(attacker: DeviceNode, victim: DeviceNode, recipient: DeviceNode) -> tc.TransactionUnit:
    """Forge a transfer that claims to come from ``victim``'s current unit."""
    forged_sender = tc.LogicalNode(victim.logical_node.unit, attacker.id_core.key)
    return tc.transfer(forged_sender, recipient.public_key)
