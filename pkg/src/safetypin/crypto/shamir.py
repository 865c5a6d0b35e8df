"""Shamir t-out-of-n secret sharing over a prime field."""

from dataclasses import dataclass
from random import Random
from typing import List, Sequence


class ShamirError(ValueError):
    pass


@dataclass(frozen=True)
class PrimeField:
    p: int

    @property
    def size(self) -> int:
        return self.p

    @property
    def byte_len(self) -> int:
        return (self.p.bit_length() + 7) // 8

    def random(self, rng: Random) -> int:
        return rng.randrange(self.p)

    def encode(self, v: int) -> bytes:
        return v.to_bytes(self.byte_len, "big")

    def decode(self, data: bytes) -> int:
        v = int.from_bytes(data, "big")
        if len(data) != self.byte_len or v >= self.p:
            raise ShamirError("not a canonical field element")
        return v


# Transport keys are elements of this field; their 32-byte encoding is the AE key.
TRANSPORT_FIELD = PrimeField(2**255 - 19)
# Small field for exhaustive oracle tests.
SMALL_FIELD = PrimeField(257)


@dataclass(frozen=True)
class ShamirShare:
    index: int
    value: int

    def __post_init__(self):
        if self.index <= 0:
            raise ShamirError("share index must be positive")


def shamir_share(secret: int, t: int, n: int, rng: Random,
                 field: PrimeField = TRANSPORT_FIELD) -> List[ShamirShare]:
    if not 1 <= t <= n or n >= field.size:
        raise ShamirError(f"need 1 <= t <= n < |F| (t={t}, n={n})")
    if not 0 <= secret < field.p:
        raise ShamirError("secret is not a field element")
    p = field.p
    coeffs = [secret] + [field.random(rng) for _ in range(t - 1)]
    shares = []
    for x in range(1, n + 1):
        y = 0
        for c in reversed(coeffs):
            y = (y * x + c) % p
        shares.append(ShamirShare(x, y))
    return shares


def shamir_reconstruct(shares: Sequence[ShamirShare], t: int,
                       field: PrimeField = TRANSPORT_FIELD) -> int:
    """Lagrange interpolation at zero over the first ``t`` shares."""
    if t < 1 or len(shares) < t:
        raise ShamirError(f"need {t} shares, got {len(shares)}")
    indices = [s.index for s in shares]
    if len(set(indices)) != len(indices):
        raise ShamirError("duplicate share indices")
    p = field.p
    use = shares[:t]
    secret = 0
    for i, si in enumerate(use):
        num, den = 1, 1
        for j, sj in enumerate(use):
            if i != j:
                num = num * (-sj.index) % p
                den = den * (si.index - sj.index) % p
        secret = (secret + si.value * num * pow(den, -1, p)) % p
    return secret
