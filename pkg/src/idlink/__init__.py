"""Chip-ID derived device identities on a signed, proof-of-work ledger."""

from .blockchain import (
    Block,
    BlockChainState,
    MerkleTree,
    append_block,
    block_hash,
    merkle_root,
    mine_block,
    tamper_and_repair,
    validate_chain,
)
from .chip_identity import (
    AgingModel,
    Chip,
    ChipId,
    FabProcess,
    apply_aging,
    collision_probability_log10,
    fabricate_run,
    information_quantity_log10,
    read_chip_id,
    retention_experiment,
)
from .keygen import Scheme, derive_elgamal_keypair, derive_rsa_keypair, sha256, sign, verify
from .link import Registry, make_device, make_id_core
from .netsim import ScenarioConfig, replay, run_scenario
from .transaction_chain import TransactionUnit, make_genesis, transfer, verify_history, verify_link

__version__ = "0.1.0"
