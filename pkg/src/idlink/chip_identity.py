"""Simulated identification-RAM chips.

A fab run turns a master seed into per-chip identification bitstrings. Reads
and bake-style aging can flip bits with configurable probabilities; both
default to the noise-free behaviour measured on real parts.

Statistics about the ID space are computed with logarithms only, since the
number of distinct IDs for realistic bit lengths is far too large to hold.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

# Domain-separation tags mixed into seed sequences so that fabrication, read
# noise and aging never share a random stream.
_TAG_FAB = 0x46414221
_TAG_READ = 0x52454144
_TAG_AGE = 0x41474521

LOG10_2 = math.log10(2.0)


class ChipError(ValueError):
    pass


@dataclass(frozen=True)
class ChipId:
    """An identification code of ``nbits`` bits, stored as a big-endian int."""

    value: int
    nbits: int

    def __post_init__(self):
        if self.nbits < 1:
            raise ChipError("chip id must have at least one bit")
        if self.value < 0 or self.value >> self.nbits:
            raise ChipError(f"value does not fit in {self.nbits} bits")

    @classmethod
    def from_bits(cls, bits: str) -> "ChipId":
        if not bits:
            raise ChipError("empty chip id")
        if set(bits) - {"0", "1"}:
            raise ChipError("bitstring may only contain '0' and '1'")
        return cls(int(bits, 2), len(bits))

    @property
    def bits(self) -> str:
        return format(self.value, f"0{self.nbits}b")

    def to_bytes(self) -> bytes:
        """Big-endian packing, left-padded with zero bits to a whole byte."""
        return self.value.to_bytes((self.nbits + 7) // 8, "big")

    def hamming(self, other: "ChipId") -> int:
        if other.nbits != self.nbits:
            raise ChipError("cannot compare chip ids of different lengths")
        return (self.value ^ other.value).bit_count()

    def __len__(self):
        return self.nbits


@dataclass(frozen=True)
class FabProcess:
    id_bits: int
    fab_seed: int
    stability: float = 1.0

    def __post_init__(self):
        if self.id_bits < 8:
            raise ChipError("id_bits must be >= 8")
        if not 0 <= self.fab_seed < 2**64:
            raise ChipError("fab_seed must be a 64-bit unsigned integer")
        if not 0.0 <= self.stability <= 1.0:
            raise ChipError("stability must lie in [0, 1]")


@dataclass(frozen=True)
class Chip:
    chip_index: int
    true_id: ChipId
    aging_hours: float = 0.0
    aging_temp_c: float = 0.0


@dataclass(frozen=True)
class AgingModel:
    temp_c: float
    duration_hours: float
    flip_probability: float = 0.0

    def __post_init__(self):
        if self.duration_hours <= 0:
            raise ChipError("duration_hours must be positive")
        if not 0.0 <= self.flip_probability <= 1.0:
            raise ChipError("flip_probability must lie in [0, 1]")


# The bake used for the published retention test: 125 C for 168 hours.
BAKE_125C_168H = AgingModel(temp_c=125.0, duration_hours=168.0)


def _rng(*words: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([w & (2**64 - 1) for w in words]))


def _random_bits(rng: np.random.Generator, nbits: int) -> int:
    nbytes = (nbits + 7) // 8
    return int.from_bytes(rng.bytes(nbytes), "big") >> (8 * nbytes - nbits)


def _flip_mask(rng: np.random.Generator, nbits: int, p: float) -> int:
    # Bit i of the mask (MSB first) is set with probability p.
    if p <= 0.0:
        return 0
    if p >= 1.0:
        return (1 << nbits) - 1
    hits = rng.random(nbits) < p
    packed = np.packbits(hits).tobytes()
    return int.from_bytes(packed, "big") >> (8 * len(packed) - nbits)


def fabricate_chip(process: FabProcess, chip_index: int) -> Chip:
    rng = _rng(_TAG_FAB, process.fab_seed, chip_index)
    return Chip(chip_index, ChipId(_random_bits(rng, process.id_bits), process.id_bits))


def fabricate_run(process: FabProcess, count: int) -> list[Chip]:
    """Manufacture ``count`` chips; chip ``i`` depends only on (fab_seed, i)."""
    if count < 1:
        raise ChipError("a fab run needs at least one chip")
    return [fabricate_chip(process, i) for i in range(count)]


def read_chip_id(chip: Chip, process: FabProcess, read_seed: int = 0) -> ChipId:
    """Read the ID; each bit is reported correctly with probability ``stability``."""
    nbits = chip.true_id.nbits
    rng = _rng(_TAG_READ, process.fab_seed, chip.chip_index, read_seed)
    mask = _flip_mask(rng, nbits, 1.0 - process.stability)
    return ChipId(chip.true_id.value ^ mask, nbits)


def apply_aging(chip: Chip, model: AgingModel, age_seed: int = 0) -> Chip:
    nbits = chip.true_id.nbits
    rng = _rng(_TAG_AGE, chip.chip_index, age_seed)
    mask = _flip_mask(rng, nbits, model.flip_probability)
    return replace(
        chip,
        true_id=ChipId(chip.true_id.value ^ mask, nbits),
        aging_hours=chip.aging_hours + model.duration_hours,
        aging_temp_c=max(chip.aging_temp_c, model.temp_c),
    )


@dataclass
class RetentionReport:
    mismatches: list[int] = field(default_factory=list)
    id_bits: int = 0
    temp_c: float = 0.0
    duration_hours: float = 0.0

    @property
    def n_chips(self) -> int:
        return len(self.mismatches)

    @property
    def inconsistent_chips(self) -> int:
        return sum(1 for m in self.mismatches if m)

    @property
    def total_mismatched_bits(self) -> int:
        return sum(self.mismatches)


def retention_experiment(
    process: FabProcess, n_chips: int, model: AgingModel = BAKE_125C_168H, seed: int = 0
) -> RetentionReport:
    """Read every chip, bake it, read it again and count differing bits.

    ``seed`` fans out into the before-read, aging and after-read seeds.
    """
    if n_chips < 1:
        raise ChipError("n_chips must be >= 1")
    report = RetentionReport(id_bits=process.id_bits, temp_c=model.temp_c,
                             duration_hours=model.duration_hours)
    for chip in fabricate_run(process, n_chips):
        before = read_chip_id(chip, process, read_seed=2 * seed)
        baked = apply_aging(chip, model, age_seed=seed ^ process.fab_seed)
        after = read_chip_id(baked, process, read_seed=2 * seed + 1)
        report.mismatches.append(before.hamming(after))
    return report


class CollisionMode(str, Enum):
    PAPER_LINEAR = "paper_linear"
    BIRTHDAY = "birthday"


def information_quantity_log10(id_bits: int) -> float:
    """log10 of the number of distinct IDs, i.e. log10(2**id_bits)."""
    if id_bits < 1:
        raise ChipError("id_bits must be >= 1")
    return id_bits * LOG10_2


def collision_probability_log10(
    id_bits: int, n_chips: int, mode: CollisionMode | str = CollisionMode.BIRTHDAY
) -> float:
    """log10 of the chance that some pair among ``n_chips`` shares an ID.

    ``paper_linear`` is the plain n / 2**id_bits ratio; ``birthday`` uses the
    pair count n(n-1)/2 (union bound, tight while the result is small).
    """
    mode = CollisionMode(mode)
    if n_chips < 2:
        raise ChipError("collision probability needs at least two chips")
    space = information_quantity_log10(id_bits)
    if mode is CollisionMode.PAPER_LINEAR:
        return math.log10(n_chips) - space
    pairs = math.log10(n_chips) + math.log10(n_chips - 1) - LOG10_2
    return pairs - space
