"""Merkle-bundled proof-of-work blocks.

A block is (Merkle root, nonce, previous block hash). Its hash must start
with ``difficulty_bits`` zero bits; mining scans nonces upward from a start
value and keeps the first one that works, so results are reproducible.
"""

from __future__ import annotations

import hashlib
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

from .keygen import ZERO_DIGEST, sha256

LEDGER_FORMAT = "idlink-ledger"
LEDGER_VERSION = 1
DEFAULT_DIFFICULTY = 16
NONCE_LIMIT = 2**64


class BlockchainError(ValueError):
    pass


class MiningError(RuntimeError):
    pass


# --------------------------------------------------------------------------
# Merkle trees

def _next_level(level: list[bytes]) -> list[bytes]:
    out = [sha256(level[i] + level[i + 1]) for i in range(0, len(level) - 1, 2)]
    if len(level) % 2:
        out.append(level[-1])  # odd trailing digest is promoted, not duplicated
    return out


@dataclass(frozen=True)
class MerkleTree:
    leaves: tuple[bytes, ...]
    levels: tuple[tuple[bytes, ...], ...]

    @classmethod
    def build(cls, leaves) -> "MerkleTree":
        leaves = tuple(leaves)
        if not leaves:
            raise BlockchainError("cannot build a Merkle tree from an empty bundle")
        levels = [list(leaves)]
        while len(levels[-1]) > 1:
            levels.append(_next_level(levels[-1]))
        return cls(leaves, tuple(tuple(lv) for lv in levels))

    @property
    def root(self) -> bytes:
        return self.levels[-1][0]

    @property
    def height(self) -> int:
        return len(self.levels) - 1


def merkle_root(leaves) -> bytes:
    level = list(leaves)
    if not level:
        raise BlockchainError("cannot take the Merkle root of an empty bundle")
    while len(level) > 1:
        level = _next_level(level)
    return level[0]


@dataclass(frozen=True)
class MerkleProof:
    leaf_index: int
    # (sibling digest, side of the sibling); side "promote" has no sibling
    path: tuple[tuple[bytes | None, str], ...]


def merkle_prove(tree: MerkleTree, leaf_index: int) -> MerkleProof:
    if not 0 <= leaf_index < len(tree.leaves):
        raise IndexError(f"leaf index {leaf_index} out of range")
    path = []
    i = leaf_index
    for level in tree.levels[:-1]:
        sib = i ^ 1
        if sib >= len(level):
            path.append((None, "promote"))
        else:
            path.append((level[sib], "left" if sib < i else "right"))
        i //= 2
    return MerkleProof(leaf_index, tuple(path))


def verify_merkle_proof(root: bytes, leaf: bytes, proof: MerkleProof) -> bool:
    node = leaf
    for sibling, side in proof.path:
        if side == "left":
            node = sha256(sibling + node)
        elif side == "right":
            node = sha256(node + sibling)
        elif side != "promote":
            return False
    return node == root


# --------------------------------------------------------------------------
# Blocks and mining

@dataclass(frozen=True)
class Block:
    merkle_root: bytes
    nonce: int
    prev_block_hash: bytes = ZERO_DIGEST

    def header_bytes(self) -> bytes:
        return self.merkle_root + self.nonce.to_bytes(8, "big") + self.prev_block_hash


def block_hash(block: Block) -> bytes:
    return sha256(block.header_bytes())


def meets_difficulty(h: bytes, difficulty_bits: int) -> bool:
    """True iff the leading ``difficulty_bits`` bits of ``h`` are zero."""
    if not 1 <= difficulty_bits <= 256:
        raise BlockchainError("difficulty_bits must be in [1, 256]")
    return int.from_bytes(h, "big") >> (8 * len(h) - difficulty_bits) == 0


def _scan(merkle_root_: bytes, prev: bytes, difficulty_bits: int, start: int, stop: int):
    """First nonce in [start, stop) meeting difficulty, or None."""
    base = hashlib.sha256(merkle_root_)
    shift = 256 - difficulty_bits
    from_bytes = int.from_bytes
    for nonce in range(start, stop):
        h = base.copy()
        h.update(nonce.to_bytes(8, "big") + prev)
        if from_bytes(h.digest(), "big") >> shift == 0:
            return nonce
    return None


@dataclass(frozen=True)
class MinedBlock:
    block: Block
    attempts: int


def mine_block(
    merkle_root_: bytes,
    prev_block_hash: bytes,
    difficulty_bits: int = DEFAULT_DIFFICULTY,
    nonce_start: int = 0,
    *,
    max_difficulty: int = 32,
    workers: int = 1,
    chunk: int = 1 << 16,
) -> MinedBlock:
    """Find the smallest nonce >= ``nonce_start`` that satisfies difficulty.

    With ``workers > 1`` nonce ranges are scanned in parallel; the answer is
    still the smallest satisfying nonce, identical to a serial scan.
    """
    if not 1 <= difficulty_bits <= max_difficulty:
        raise BlockchainError(f"difficulty_bits must be in [1, {max_difficulty}]")
    if not 0 <= nonce_start < NONCE_LIMIT:
        raise BlockchainError("nonce_start out of range")
    if workers <= 1:
        nonce = _scan(merkle_root_, prev_block_hash, difficulty_bits, nonce_start, NONCE_LIMIT)
    else:
        nonce = _parallel_scan(merkle_root_, prev_block_hash, difficulty_bits, nonce_start, workers, chunk)
    if nonce is None:
        raise MiningError("nonce space exhausted")
    return MinedBlock(Block(merkle_root_, nonce, prev_block_hash), nonce - nonce_start + 1)


def _parallel_scan(root, prev, bits, start, workers, chunk):
    with ProcessPoolExecutor(max_workers=workers) as pool:
        lo = start
        while lo < NONCE_LIMIT:
            bounds = [(lo + i * chunk, min(lo + (i + 1) * chunk, NONCE_LIMIT)) for i in range(workers)]
            bounds = [(a, b) for a, b in bounds if a < b]
            futures = [pool.submit(_scan, root, prev, bits, a, b) for a, b in bounds]
            # ranges are ascending, so the first hit in range order is minimal
            for fut in futures:
                found = fut.result()
                if found is not None:
                    return found
            lo = bounds[-1][1]
    return None


# --------------------------------------------------------------------------
# Chain state

@dataclass(frozen=True)
class BlockChainState:
    blocks: tuple[Block, ...] = ()
    difficulty_bits: int = DEFAULT_DIFFICULTY
    # leaf digests per block; an empty tuple means the bundle was not kept
    bundles: tuple[tuple[bytes, ...], ...] = ()

    def __len__(self):
        return len(self.blocks)

    @property
    def tip_hash(self) -> bytes:
        return block_hash(self.blocks[-1]) if self.blocks else ZERO_DIGEST

    @property
    def per_block_attempts(self) -> list[int]:
        # every block in a chain is mined from nonce 0
        return [b.nonce + 1 for b in self.blocks]


def append_block(chain: BlockChainState, leaves, **mine_kw) -> BlockChainState:
    leaves = tuple(leaves)
    if not leaves:
        raise BlockchainError("cannot append an empty bundle")
    mined = mine_block(merkle_root(leaves), chain.tip_hash, chain.difficulty_bits, **mine_kw)
    return replace(chain, blocks=chain.blocks + (mined.block,), bundles=chain.bundles + (leaves,))


@dataclass(frozen=True)
class ChainCheck:
    ok: bool
    first_bad_block: int | None = None
    reason: str = ""

    def __bool__(self):
        return self.ok


def validate_chain(chain: BlockChainState) -> ChainCheck:
    prev = ZERO_DIGEST
    for i, block in enumerate(chain.blocks):
        if block.prev_block_hash != prev:
            return ChainCheck(False, i, "broken linkage to previous block")
        h = block_hash(block)
        if not meets_difficulty(h, chain.difficulty_bits):
            return ChainCheck(False, i, "block hash misses difficulty")
        if i < len(chain.bundles) and chain.bundles[i] and merkle_root(chain.bundles[i]) != block.merkle_root:
            return ChainCheck(False, i, "bundle does not match Merkle root")
        prev = h
    return ChainCheck(True)


def tamper_block(chain: BlockChainState, index: int, new_merkle_root: bytes) -> BlockChainState:
    """Overwrite one block's Merkle root without re-mining anything."""
    if not 0 <= index < len(chain.blocks):
        raise IndexError(f"block index {index} out of range")
    blocks = list(chain.blocks)
    blocks[index] = replace(blocks[index], merkle_root=new_merkle_root)
    return replace(chain, blocks=tuple(blocks))


def tamper_leaf(chain: BlockChainState, index: int, leaf: int, bit: int) -> BlockChainState:
    """Flip one bit of one retained leaf digest, leaving blocks untouched."""
    bundles = [list(b) for b in chain.bundles]
    digest = bytearray(bundles[index][leaf])
    digest[bit // 8] ^= 0x80 >> (bit % 8)
    bundles[index][leaf] = bytes(digest)
    return replace(chain, bundles=tuple(tuple(b) for b in bundles))


@dataclass
class RepairCostReport:
    tampered_index: int
    blocks_remined: int
    total_hash_attempts: int
    per_block_attempts: list[int] = field(default_factory=list)


def default_forged_root(chain: BlockChainState, index: int) -> bytes:
    return sha256(chain.blocks[index].merkle_root + b"tampered")


def tamper_and_repair(
    chain: BlockChainState, index: int, new_merkle_root: bytes | None = None, new_leaves=None
) -> tuple[BlockChainState, RepairCostReport]:
    """Rewrite block ``index`` and re-mine it and everything after it.

    Returns the repaired copy and what the repair cost. ``chain`` is left
    untouched.
    """
    if not 0 <= index < len(chain.blocks):
        raise IndexError(f"block index {index} out of range")
    bundles = list(chain.bundles) + [()] * (len(chain.blocks) - len(chain.bundles))
    if new_leaves is not None:
        bundles[index] = tuple(new_leaves)
        new_merkle_root = merkle_root(bundles[index])
    else:
        if new_merkle_root is None:
            new_merkle_root = default_forged_root(chain, index)
        bundles[index] = ()

    blocks = list(chain.blocks[:index])
    prev = block_hash(blocks[-1]) if blocks else ZERO_DIGEST
    attempts = []
    for i in range(index, len(chain.blocks)):
        root = new_merkle_root if i == index else chain.blocks[i].merkle_root
        mined = mine_block(root, prev, chain.difficulty_bits)
        blocks.append(mined.block)
        attempts.append(mined.attempts)
        prev = block_hash(mined.block)
    repaired = replace(chain, blocks=tuple(blocks), bundles=tuple(bundles))
    report = RepairCostReport(index, len(attempts), sum(attempts), attempts)
    return repaired, report


# --------------------------------------------------------------------------
# Ledger file: JSON-lines, header first, one block per line.

def ledger_to_jsonl(chain: BlockChainState) -> str:
    lines = [json.dumps({
        "format": LEDGER_FORMAT,
        "version": LEDGER_VERSION,
        "difficulty_bits": chain.difficulty_bits,
        "blocks": len(chain.blocks),
    })]
    for i, b in enumerate(chain.blocks):
        leaves = chain.bundles[i] if i < len(chain.bundles) else ()
        lines.append(json.dumps({
            "merkle_root": b.merkle_root.hex(),
            "nonce": b.nonce,
            "prev_block_hash": b.prev_block_hash.hex(),
            "leaves": [h.hex() for h in leaves],
        }))
    return "\n".join(lines) + "\n"


def ledger_from_jsonl(text: str) -> BlockChainState:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise BlockchainError("empty ledger file")
    header = json.loads(lines[0])
    if header.get("format") != LEDGER_FORMAT or header.get("version") != LEDGER_VERSION:
        raise BlockchainError("not a supported ledger file")
    if header.get("blocks", len(lines) - 1) != len(lines) - 1:
        raise BlockchainError("ledger file is truncated or has extra lines")
    blocks, bundles = [], []
    for ln in lines[1:]:
        row = json.loads(ln)
        nonce = int(row["nonce"])
        if not 0 <= nonce < NONCE_LIMIT:
            raise BlockchainError("nonce out of range")
        blocks.append(Block(bytes.fromhex(row["merkle_root"]), nonce, bytes.fromhex(row["prev_block_hash"])))
        bundles.append(tuple(bytes.fromhex(h) for h in row.get("leaves", [])))
    return BlockChainState(tuple(blocks), int(header["difficulty_bits"]), tuple(bundles))
