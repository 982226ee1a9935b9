"""Key generators fed by a chip identification code.

RSA primes are found by scanning upward from ``C + offset`` where ``C`` is
the chip ID read as a big-endian integer. ElGamal secrets are the hashed
chip ID reduced modulo ``p - 1``. Both constructions are textbook: signatures
are computed directly on the SHA-256 digest without padding.
"""

from __future__ import annotations

import hashlib
import math
import warnings
from dataclasses import dataclass, replace
from enum import Enum

from .chip_identity import ChipId

DEFAULT_E = 65537
DIGEST_SIZE = 32
ZERO_DIGEST = bytes(DIGEST_SIZE)

# Default desk-scale ElGamal group: a 256-bit safe prime p = 2q + 1 with
# primitive root 5.
ELGAMAL_P256 = int("992646fed52307453c266d5fecf113edf2093260a31721a6ec84d226bc508cb7", 16)
ELGAMAL_Q256 = (ELGAMAL_P256 - 1) // 2
ELGAMAL_G256 = 5

# Default RSA offsets. Both are prime, so they are coprime as well; the large
# gap keeps p and q far apart.
DEFAULT_OFFSET1 = 65521
DEFAULT_OFFSET2 = 2**224 - 63

# Bases 2..41 make Miller-Rabin exact below this bound.
_DETERMINISTIC_BASES = (2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41)
_DETERMINISTIC_LIMIT = 3317044064679887385961981

_SMALL_PRIMES = [p for p in range(3, 1000, 2) if all(p % d for d in range(3, int(p**0.5) + 1, 2))]
_SMALL_PRODUCT = math.prod(_SMALL_PRIMES)


class KeyDerivationError(ValueError):
    """Raised for malformed inputs to key derivation or signing."""


class SigningError(RuntimeError):
    pass


class Scheme(str, Enum):
    RSA = "rsa"
    ELGAMAL = "elgamal"


def sha256(message: bytes) -> bytes:
    return hashlib.sha256(message).digest()


def int_to_bytes(n: int) -> bytes:
    return n.to_bytes((n.bit_length() + 7) // 8, "big")


def lp(data: bytes) -> bytes:
    """4-byte big-endian length prefix followed by ``data``."""
    return len(data).to_bytes(4, "big") + data


def read_lp(buf: bytes, pos: int) -> tuple[bytes, int]:
    if pos + 4 > len(buf):
        raise KeyDerivationError("truncated length prefix")
    size = int.from_bytes(buf[pos:pos + 4], "big")
    end = pos + 4 + size
    if end > len(buf):
        raise KeyDerivationError("truncated field")
    return buf[pos + 4:end], end


# --------------------------------------------------------------------------
# Number theory

def egcd(a: int, b: int) -> tuple[int, int, int]:
    """Return (g, x, y) with a*x + b*y == g == gcd(a, b)."""
    x0, x1, y0, y1 = 1, 0, 0, 1
    while b:
        q, a, b = a // b, b, a % b
        x0, x1 = x1, x0 - q * x1
        y0, y1 = y1, y0 - q * y1
    return a, x0, y0


def modinv(a: int, m: int) -> int:
    g, x, _ = egcd(a % m, m)
    if g != 1:
        raise KeyDerivationError(f"{a} has no inverse modulo {m}")
    return x % m


def _mr_bases(n: int, rounds: int):
    if n < _DETERMINISTIC_LIMIT:
        yield from (a for a in _DETERMINISTIC_BASES if a < n - 1)
        return
    seed = int_to_bytes(n)
    for i in range(rounds):
        if i < len(_DETERMINISTIC_BASES):
            yield _DETERMINISTIC_BASES[i]
        else:
            h = sha256(seed + i.to_bytes(4, "big"))
            yield 2 + int.from_bytes(h, "big") % (n - 3)


def is_probable_prime(n: int, rounds: int = 40) -> bool:
    """Miller-Rabin with witnesses fixed by ``n``.

    Exact for n < 3.3e24; above that a composite survives with probability
    at most 4**-rounds.
    """
    if rounds < 1:
        raise ValueError("rounds must be >= 1")
    if n < 2:
        return False
    if n in (2, 3):
        return True
    if n % 2 == 0:
        return False
    if n < 1000:
        return n in _SMALL_PRIMES
    if math.gcd(n, _SMALL_PRODUCT) != 1:
        return False
    d, r = n - 1, 0
    while d % 2 == 0:
        d //= 2
        r += 1
    for a in _mr_bases(n, rounds):
        x = pow(a, d, n)
        if x == 1 or x == n - 1:
            continue
        for _ in range(r - 1):
            x = x * x % n
            if x == n - 1:
                break
        else:
            return False
    return True


def next_prime(n: int, rounds: int = 40) -> int:
    """Smallest probable prime >= n."""
    if n <= 2:
        return 2
    c = n if n % 2 else n + 1
    while not is_probable_prime(c, rounds):
        c += 2
    return c


def is_primitive_root(g: int, p: int, factors_of_p_minus_1) -> bool:
    if not 1 < g < p:
        return False
    return all(pow(g, (p - 1) // f, p) != 1 for f in factors_of_p_minus_1)


# --------------------------------------------------------------------------
# Key material

@dataclass(frozen=True)
class RsaPublicKey:
    e: int
    n: int

    scheme = Scheme.RSA


@dataclass(frozen=True)
class RsaKeyMaterial:
    e: int
    n: int
    d: int
    p: int | None = None
    q: int | None = None

    scheme = Scheme.RSA

    @property
    def public(self) -> RsaPublicKey:
        return RsaPublicKey(self.e, self.n)

    @property
    def primes_erased(self) -> bool:
        return self.p is None and self.q is None

    def without_primes(self) -> "RsaKeyMaterial":
        return replace(self, p=None, q=None)


@dataclass(frozen=True)
class ElgamalPublicKey:
    p: int
    g: int
    y: int

    scheme = Scheme.ELGAMAL


@dataclass(frozen=True)
class ElgamalKeyMaterial:
    p: int
    g: int
    x: int
    y: int

    scheme = Scheme.ELGAMAL

    @property
    def public(self) -> ElgamalPublicKey:
        return ElgamalPublicKey(self.p, self.g, self.y)


PublicKey = RsaPublicKey | ElgamalPublicKey
KeyMaterial = RsaKeyMaterial | ElgamalKeyMaterial


@dataclass(frozen=True)
class Signature:
    scheme: Scheme
    value: tuple[int, ...]


class Verdict(Enum):
    """Outcome of a signature check. Only ``VALID`` is truthy."""

    VALID = "valid"
    INVALID = "invalid"
    MALFORMED = "malformed"

    def __bool__(self):
        return self is Verdict.VALID


def _chip_int(chip_id: ChipId | bytes | int) -> int:
    if isinstance(chip_id, ChipId):
        return chip_id.value
    if isinstance(chip_id, (bytes, bytearray)):
        if not chip_id:
            raise KeyDerivationError("empty chip id")
        return int.from_bytes(chip_id, "big")
    if isinstance(chip_id, int) and chip_id >= 0:
        return chip_id
    raise KeyDerivationError(f"malformed chip id: {chip_id!r}")


def derive_rsa_keypair(
    chip_id: ChipId | bytes | int,
    offset1: int = DEFAULT_OFFSET1,
    offset2: int = DEFAULT_OFFSET2,
    e: int = DEFAULT_E,
) -> RsaKeyMaterial:
    """Derive an RSA key pair from a chip ID.

    p is the first prime at or above C + offset1, q the first prime at or
    above C + offset2 other than p. While e is not coprime to (p-1)(q-1),
    q and then p alternately step to their next prime.
    """
    c = _chip_int(chip_id)
    if offset1 < 1 or offset2 < 1:
        raise KeyDerivationError("offsets must be positive")
    if e < 3 or e % 2 == 0:
        raise KeyDerivationError("public exponent must be odd and >= 3")
    if math.gcd(offset1, offset2) != 1:
        warnings.warn(f"offsets {offset1} and {offset2} are not coprime", stacklevel=2)

    p = next_prime(c + offset1)
    q = next_prime(c + offset2)
    if q == p:
        q = next_prime(q + 1)
    advance_q = True
    while math.gcd(e, (p - 1) * (q - 1)) != 1:
        if advance_q:
            q = next_prime(q + 1)
            if q == p:
                q = next_prime(q + 1)
        else:
            p = next_prime(p + 1)
            if p == q:
                p = next_prime(p + 1)
        advance_q = not advance_q
    phi = (p - 1) * (q - 1)
    return RsaKeyMaterial(e=e, n=p * q, d=modinv(e, phi), p=p, q=q)


def elgamal_secret(hashed_id: int, p: int) -> int:
    """Reduce a hashed chip ID into the secret-key range [1, p-2]."""
    x = hashed_id % (p - 1)
    return x or 1


def derive_elgamal_keypair(
    chip_id: ChipId | bytes,
    p: int = ELGAMAL_P256,
    g: int = ELGAMAL_G256,
    factors_of_p_minus_1=None,
) -> ElgamalKeyMaterial:
    """x = SHA-256(chip id) mod (p-1) (0 mapped to 1), y = g**x mod p.

    ``g`` is checked when the prime factors of p-1 are supplied.
    """
    if p < 5:
        raise KeyDerivationError("ElGamal group too small: p must be >= 5")
    if factors_of_p_minus_1 is not None and not is_primitive_root(g, p, factors_of_p_minus_1):
        raise KeyDerivationError(f"{g} is not a primitive root modulo {p}")
    if isinstance(chip_id, ChipId):
        raw = chip_id.to_bytes()
    else:
        raw = bytes(chip_id)
        if not raw:
            raise KeyDerivationError("empty chip id")
    x = elgamal_secret(int.from_bytes(sha256(raw), "big"), p)
    return ElgamalKeyMaterial(p=p, g=g, x=x, y=pow(g, x, p))


def elgamal_from_hash(hashed_id: int, p: int, g: int) -> ElgamalKeyMaterial:
    x = elgamal_secret(hashed_id, p)
    return ElgamalKeyMaterial(p=p, g=g, x=x, y=pow(g, x, p))


def derive_keypair(chip_id: ChipId, scheme: Scheme | str, **params) -> KeyMaterial:
    if Scheme(scheme) is Scheme.RSA:
        return derive_rsa_keypair(chip_id, **params)
    return derive_elgamal_keypair(chip_id, **params)


# --------------------------------------------------------------------------
# Signatures

def _digest_int(digest: bytes) -> int:
    if len(digest) != DIGEST_SIZE:
        raise KeyDerivationError("digest must be 32 bytes")
    return int.from_bytes(digest, "big")


def sign(digest: bytes, key: KeyMaterial) -> Signature:
    m = _digest_int(digest)
    if isinstance(key, RsaKeyMaterial):
        return Signature(Scheme.RSA, (pow(m % key.n, key.d, key.n),))

    p, g, x = key.p, key.g, key.x
    order = p - 1
    m %= order
    k = int.from_bytes(sha256(digest + int_to_bytes(x)), "big") % order
    for _ in range(order):
        if k > 0 and math.gcd(k, order) == 1:
            r = pow(g, k, p)
            s = (m - x * r) * pow(k, -1, order) % order
            if s:
                return Signature(Scheme.ELGAMAL, (r, s))
        k = (k + 1) % order
    raise SigningError("no usable ephemeral exponent")


def check_signature(digest: bytes, signature: Signature, public_key: PublicKey) -> Verdict:
    if signature is None or signature.scheme is not public_key.scheme:
        return Verdict.MALFORMED
    m = _digest_int(digest)
    if isinstance(public_key, RsaPublicKey):
        if len(signature.value) != 1:
            return Verdict.MALFORMED
        (s,) = signature.value
        n = public_key.n
        if not 0 <= s < n or n < 2:
            return Verdict.MALFORMED
        return Verdict.VALID if pow(s, public_key.e, n) == m % n else Verdict.INVALID

    if len(signature.value) != 2:
        return Verdict.MALFORMED
    r, s = signature.value
    p, g, y = public_key.p, public_key.g, public_key.y
    if not (0 < r < p and 0 < s < p - 1):
        return Verdict.MALFORMED
    lhs = pow(g, m % (p - 1), p)
    rhs = pow(y, r, p) * pow(r, s, p) % p
    return Verdict.VALID if lhs == rhs else Verdict.INVALID


def verify(digest: bytes, signature: Signature, public_key: PublicKey) -> Verdict:
    """Check ``signature`` over ``digest``; the result is truthy only when valid."""
    return check_signature(digest, signature, public_key)


# --------------------------------------------------------------------------
# Canonical byte encodings (used inside hashes, so they must never change)

_SCHEME_TAG = {Scheme.RSA: b"RSA", Scheme.ELGAMAL: b"ELG"}
_TAG_SCHEME = {v: k for k, v in _SCHEME_TAG.items()}
GENESIS_TAG = b"GEN"


def public_key_bytes(key: PublicKey) -> bytes:
    if isinstance(key, RsaPublicKey):
        parts = (key.e, key.n)
    else:
        parts = (key.p, key.g, key.y)
    return lp(_SCHEME_TAG[key.scheme]) + b"".join(lp(int_to_bytes(v)) for v in parts)


def signature_bytes(sig: Signature | None) -> bytes:
    if sig is None:
        return lp(GENESIS_TAG)
    return lp(_SCHEME_TAG[sig.scheme]) + b"".join(lp(int_to_bytes(v)) for v in sig.value)


def _read_fields(buf: bytes, count: int, pos: int = 0) -> tuple[list[bytes], int]:
    out = []
    for _ in range(count):
        f, pos = read_lp(buf, pos)
        out.append(f)
    return out, pos


def parse_public_key(buf: bytes, pos: int = 0) -> tuple[PublicKey, int]:
    tag, pos = read_lp(buf, pos)
    scheme = _TAG_SCHEME.get(tag)
    if scheme is Scheme.RSA:
        (e, n), pos = _read_fields(buf, 2, pos)
        return RsaPublicKey(int.from_bytes(e, "big"), int.from_bytes(n, "big")), pos
    if scheme is Scheme.ELGAMAL:
        (p, g, y), pos = _read_fields(buf, 3, pos)
        return ElgamalPublicKey(*(int.from_bytes(v, "big") for v in (p, g, y))), pos
    raise KeyDerivationError(f"unknown key scheme tag {tag!r}")


def parse_signature(buf: bytes, pos: int = 0) -> tuple[Signature | None, int]:
    tag, pos = read_lp(buf, pos)
    if tag == GENESIS_TAG:
        return None, pos
    scheme = _TAG_SCHEME.get(tag)
    if scheme is None:
        raise KeyDerivationError(f"unknown signature tag {tag!r}")
    fields, pos = _read_fields(buf, 1 if scheme is Scheme.RSA else 2, pos)
    return Signature(scheme, tuple(int.from_bytes(f, "big") for f in fields)), pos


# --------------------------------------------------------------------------
# JSON layout: {"version", "scheme", "public": {...}, "secret": {...}?}
# Integers are lowercase hex strings without a prefix.

KEY_FORMAT_VERSION = 1


def key_to_json(key: KeyMaterial | PublicKey, include_secret: bool = True) -> dict:
    pub = key.public if hasattr(key, "public") else key
    if isinstance(pub, RsaPublicKey):
        public = {"e": format(pub.e, "x"), "n": format(pub.n, "x")}
    else:
        public = {"p": format(pub.p, "x"), "g": format(pub.g, "x"), "y": format(pub.y, "x")}
    doc = {"version": KEY_FORMAT_VERSION, "scheme": pub.scheme.value, "public": public}
    if include_secret and pub is not key:
        if isinstance(key, RsaKeyMaterial):
            secret = {"d": format(key.d, "x")}
            if not key.primes_erased:
                secret.update(p=format(key.p, "x"), q=format(key.q, "x"))
        else:
            secret = {"x": format(key.x, "x")}
        doc["secret"] = secret
    return doc


def key_from_json(doc: dict) -> KeyMaterial | PublicKey:
    if doc.get("version") != KEY_FORMAT_VERSION:
        raise KeyDerivationError(f"unsupported key format version {doc.get('version')!r}")
    scheme = Scheme(doc["scheme"])
    pub = {k: int(v, 16) for k, v in doc["public"].items()}
    sec = {k: int(v, 16) for k, v in doc.get("secret", {}).items()}
    if scheme is Scheme.RSA:
        if not sec:
            return RsaPublicKey(**pub)
        return RsaKeyMaterial(e=pub["e"], n=pub["n"], d=sec["d"], p=sec.get("p"), q=sec.get("q"))
    if not sec:
        return ElgamalPublicKey(**pub)
    return ElgamalKeyMaterial(p=pub["p"], g=pub["g"], x=sec["x"], y=pub["y"])
