"""
Paillier cryptosystem (g = n + 1) with fixed-point encoding of reals.

Ciphertexts carry the scale exponent of the plaintext they encrypt; a
ciphertext encrypting mantissa m with exponent e stands for signed(m) * 2**e.
Only ciphertexts with equal exponents can be added.
"""

import math
import random
import secrets
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, List, Optional, Sequence, Tuple

from fedlearn.core.config import settings
from fedlearn.core.wire import BigIntVec, _Reader, pack_bigint, unpack_bigint


class CryptoError(Exception):
    pass


class UnsupportedKeySize(CryptoError):
    pass


class InsecureKeyError(CryptoError):
    pass


class PlaintextRangeError(CryptoError):
    pass


class CorruptCiphertext(CryptoError):
    pass


class ScaleMismatch(CryptoError):
    pass


class FixedPointOverflow(CryptoError):
    pass


class KeyFormatError(CryptoError):
    pass


SMALL_PRIMES = (
    3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53, 59, 61, 67, 71,
    73, 79, 83, 89, 97, 101, 103, 107, 109, 113, 127, 131, 137, 139, 149, 151,
)


def is_probable_prime(candidate: int, rng: random.Random, rounds: int = settings.MILLER_RABIN_ROUNDS) -> bool:
    if candidate < 2:
        return False
    if candidate in (2, 3):
        return True
    if candidate % 2 == 0:
        return False
    for p in SMALL_PRIMES:
        if candidate == p:
            return True
        if candidate % p == 0:
            return False

    d, s = candidate - 1, 0
    while d % 2 == 0:
        d //= 2
        s += 1
    for _ in range(rounds):
        a = rng.randrange(2, candidate - 1)
        x = pow(a, d, candidate)
        if x in (1, candidate - 1):
            continue
        for _ in range(s - 1):
            x = pow(x, 2, candidate)
            if x == candidate - 1:
                break
        else:
            return False
    return True


def random_prime(bits: int, rng: random.Random) -> int:
    """Prime with its two top bits set, so a product of two has exactly 2*bits bits."""
    while True:
        candidate = rng.getrandbits(bits) | (0b11 << (bits - 2)) | 1
        if is_probable_prime(candidate, rng):
            return candidate


@dataclass(frozen=True)
class PublicKey:
    n: int
    bits: int

    @property
    def g(self) -> int:
        return self.n + 1

    @property
    def nsquare(self) -> int:
        return self.n * self.n

    @property
    def max_int(self) -> int:
        """Largest |mantissa| an encoding may carry and still leave MAX_TERMS headroom."""
        return self.n // (2 * settings.MAX_TERMS)

    def random_r(self, rng: Optional[random.Random] = None) -> int:
        while True:
            r = rng.randrange(1, self.n) if rng is not None else secrets.randbelow(self.n - 1) + 1
            if math.gcd(r, self.n) == 1:
                return r


@dataclass(frozen=True)
class SecretKey:
    public: PublicKey
    p: int
    q: int
    lam: int
    mu: int
    # CRT constants, fixed by p and q
    psquare: int
    qsquare: int
    hp: int
    hq: int
    p_inv: int


@dataclass(frozen=True)
class KeyPair:
    public: PublicKey
    secret: SecretKey

    @classmethod
    def from_primes(cls, p: int, q: int) -> "KeyPair":
        if p == q:
            raise CryptoError("p and q must be distinct")
        n = p * q
        lam = math.lcm(p - 1, q - 1)
        public = PublicKey(n=n, bits=n.bit_length())
        mu = pow(_L(pow(public.g, lam, public.nsquare), n), -1, n)
        # h_p = L_p(g^(p-1) mod p^2)^-1 mod p, same for q
        psq, qsq = p * p, q * q
        hp = pow((pow(public.g, p - 1, psq) - 1) // p, -1, p)
        hq = pow((pow(public.g, q - 1, qsq) - 1) // q, -1, q)
        return cls(public, SecretKey(public, p, q, lam, mu, psq, qsq, hp, hq, pow(p, -1, q)))


@dataclass(frozen=True)
class Ciphertext:
    value: int
    exponent: int = 0


def _L(u: int, n: int) -> int:
    return (u - 1) // n


def keygen(bits: int, seed: Optional[int] = None, allow_insecure: bool = False) -> KeyPair:
    if bits not in settings.SUPPORTED_KEY_BITS:
        raise UnsupportedKeySize(f"key size {bits} not in {settings.SUPPORTED_KEY_BITS}")
    if bits == 64 and not allow_insecure:
        raise InsecureKeyError("64-bit keys are for tests only; pass allow_insecure=True")
    rng = random.Random(seed) if seed is not None else random.SystemRandom()
    half = bits // 2
    while True:
        p = random_prime(half, rng)
        q = random_prime(half, rng)
        if p != q and (p * q).bit_length() == bits:
            return KeyPair.from_primes(p, q)


def encrypt(
    pk: PublicKey,
    m: int,
    r: Optional[int] = None,
    exponent: int = 0,
    rng: Optional[random.Random] = None,
) -> Ciphertext:
    if not 0 <= m < pk.n:
        raise PlaintextRangeError(f"plaintext must lie in [0, n)")
    if r is None:
        r = pk.random_r(rng)
    nsq = pk.nsquare
    # (1 + n)^m = 1 + m*n  (mod n^2)
    c = (1 + m * pk.n) % nsq * pow(r, pk.n, nsq) % nsq
    return Ciphertext(c, exponent)


def decrypt(sk: SecretKey, ct: Ciphertext) -> int:
    n = sk.public.n
    c = ct.value
    if not 0 <= c < sk.public.nsquare or math.gcd(c, n) != 1:
        raise CorruptCiphertext("ciphertext is not a unit modulo n^2")
    mp = _L(pow(c, sk.p - 1, sk.psquare), sk.p) * sk.hp % sk.p
    mq = _L(pow(c, sk.q - 1, sk.qsquare), sk.q) * sk.hq % sk.q
    # recombine mod n
    return (mp + (mq - mp) * sk.p_inv % sk.q * sk.p) % n


def decrypt_plain(sk: SecretKey, ct: Ciphertext) -> int:
    """Textbook decryption m = L(c^lambda mod n^2) * mu mod n."""
    n = sk.public.n
    if not 0 <= ct.value < sk.public.nsquare or math.gcd(ct.value, n) != 1:
        raise CorruptCiphertext("ciphertext is not a unit modulo n^2")
    return _L(pow(ct.value, sk.lam, sk.public.nsquare), n) * sk.mu % n


def he_add(pk: PublicKey, a: Ciphertext, b: Ciphertext) -> Ciphertext:
    if a.exponent != b.exponent:
        raise ScaleMismatch(f"cannot add exponents {a.exponent} and {b.exponent}")
    return Ciphertext(a.value * b.value % pk.nsquare, a.exponent)


def he_sum(pk: PublicKey, cts: Iterable[Ciphertext], exponent: int = 0) -> Ciphertext:
    """Fold he_add over `cts`; the empty sum is the trivial encryption of 0."""
    total = Ciphertext(1, exponent)
    for ct in cts:
        total = he_add(pk, total, ct)
    return total


def he_scalar_mul(pk: PublicKey, a: Ciphertext, k: int) -> Ciphertext:
    if k < 0:
        raise PlaintextRangeError(f"scalar must be non-negative, got {k}")
    return Ciphertext(pow(a.value, k, pk.nsquare), a.exponent)


# --- fixed point ------------------------------------------------------------

def encode_fixed(x: float, n: int, frac_bits: int = settings.FIXED_POINT_BITS) -> int:
    mantissa = round(x * 2.0 ** frac_bits)
    if abs(mantissa) >= n // (2 * settings.MAX_TERMS):
        raise FixedPointOverflow(f"{x} at {frac_bits} fractional bits exceeds the encoding headroom")
    return mantissa % n


def decode_fixed(m: int, n: int, frac_bits: int = settings.FIXED_POINT_BITS) -> float:
    signed = m if m <= n // 2 else m - n
    return signed / 2 ** frac_bits


def label_frac_bits(pk: PublicKey, max_abs: float = 1.0) -> int:
    """Largest fractional bit count <= default for which `max_abs` still encodes."""
    limit = pk.max_int / max_abs
    return max(0, min(settings.FIXED_POINT_BITS, int(limit).bit_length() - 2))


def encrypt_fixed(pk: PublicKey, x: float, frac_bits: int, rng: Optional[random.Random] = None) -> Ciphertext:
    return encrypt(pk, encode_fixed(x, pk.n, frac_bits), exponent=-frac_bits, rng=rng)


def decrypt_fixed(sk: SecretKey, ct: Ciphertext) -> float:
    return decode_fixed(decrypt(sk, ct), sk.public.n, -ct.exponent)


# --- serialization ----------------------------------------------------------

def ciphertexts_to_wire(cts: Sequence[Ciphertext]) -> Tuple[BigIntVec, int]:
    exponents = {ct.exponent for ct in cts}
    if len(exponents) > 1:
        raise ScaleMismatch(f"ciphertext batch mixes exponents {sorted(exponents)}")
    return BigIntVec(ct.value for ct in cts), (exponents.pop() if exponents else 0)


def ciphertexts_from_wire(values: Sequence[int], exponent: int) -> List[Ciphertext]:
    return [Ciphertext(int(v), int(exponent)) for v in values]


def public_key_to_bytes(pk: PublicKey) -> bytes:
    return settings.KEY_MAGIC + struct.pack("<BI", 0, pk.bits) + pack_bigint(pk.n)


def secret_key_to_bytes(sk: SecretKey) -> bytes:
    pk = sk.public
    return (
        settings.KEY_MAGIC
        + struct.pack("<BI", 1, pk.bits)
        + b"".join(pack_bigint(v) for v in (pk.n, sk.lam, sk.mu, sk.p, sk.q))
    )


def key_from_bytes(data: bytes):
    """Returns a PublicKey or a KeyPair depending on the container kind."""
    if data[:4] != settings.KEY_MAGIC:
        raise KeyFormatError("not a key file")
    reader = _Reader(data[4:])
    try:
        kind, bits = reader.unpack("<BI", "key header")
        n = unpack_bigint(reader, "n")
        if kind == 0:
            return PublicKey(n=n, bits=bits)
        if kind != 1:
            raise KeyFormatError(f"unknown key kind {kind}")
        lam, mu, p, q = (unpack_bigint(reader, name) for name in ("lambda", "mu", "p", "q"))
    except KeyFormatError:
        raise
    except Exception as e:
        raise KeyFormatError(f"corrupt key file: {e}") from e
    pair = KeyPair.from_primes(p, q)
    if pair.public.n != n or pair.public.bits != bits or pair.secret.lam != lam or pair.secret.mu != mu:
        raise KeyFormatError("secret key fields are inconsistent")
    return pair


PUBLIC_KEY_FILE = "public.key"
SECRET_KEY_FILE = "secret.key"


def write_key_files(out_dir, pair: KeyPair) -> Tuple[Path, Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    public_path = out_dir / PUBLIC_KEY_FILE
    secret_path = out_dir / SECRET_KEY_FILE
    public_path.write_bytes(public_key_to_bytes(pair.public))
    secret_path.write_bytes(secret_key_to_bytes(pair.secret))
    return public_path, secret_path


def read_key_file(path):
    try:
        data = Path(path).read_bytes()
    except OSError as e:
        raise KeyFormatError(f"cannot read key file {path}: {e}") from e
    return key_from_bytes(data)
