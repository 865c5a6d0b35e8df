"""Location-hiding encryption.

A PIN and a public salt select a cluster of ``n`` HSM indices out of ``N``
(with replacement). A fresh transport key encrypts the payload; its
``t``-of-``n`` Shamir shares are each encrypted to the public key at the
matching cluster slot. Nothing in the ciphertext names the cluster.

The scheme is generic over the public-key layer: anything with
``fingerprint / encrypt / decrypt`` in the shape of :class:`ElGamalPke` works,
including the puncturable adapter used by the full system.
"""

import functools
import itertools
import math
from collections import Counter
from dataclasses import dataclass
from random import Random
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .crypto.ae import ae_decrypt, ae_encrypt
from .crypto.elgamal import elgamal_decrypt, elgamal_encrypt, elgamal_keygen
from .crypto.encoding import DecodeError, Reader, lp, u32, u64
from .crypto.hashing import hash_domain, sample_indices
from .crypto.shamir import TRANSPORT_FIELD, ShamirError, ShamirShare, shamir_reconstruct, shamir_share


@dataclass(frozen=True)
class LheParams:
    N: int
    n: int
    t: int
    pin_space: int = 10 ** 6
    f_live: float = 1 / 64
    f_secret: float = 1 / 16
    lambda_bits: int = 128

    def __post_init__(self):
        if not 1 <= self.t <= self.n:
            raise ValueError(f"need 1 <= t <= n, got t={self.t}, n={self.n}")
        if self.N < 1:
            raise ValueError("N must be positive")
        if self.pin_space < 1:
            raise ValueError("PIN space must be nonempty")
        if not (0 <= self.f_live < 1 and 0 <= self.f_secret < 1):
            raise ValueError("failure fractions must lie in [0, 1)")
        if self.lambda_bits % 8 or self.lambda_bits < 8:
            raise ValueError("lambda_bits must be a positive multiple of 8")
        if self.n >= TRANSPORT_FIELD.size:
            raise ValueError("cluster larger than the share field")

    @classmethod
    def default(cls, N: int = 100) -> "LheParams":
        return cls(N=N, n=40, t=20)

    @property
    def salt_len(self) -> int:
        return self.lambda_bits // 8


def pin_bytes(pin) -> bytes:
    if isinstance(pin, int):
        return str(pin).encode()
    return pin.encode() if isinstance(pin, str) else bytes(pin)


def random_salt(params: LheParams, rng: Random) -> bytes:
    return rng.randbytes(params.salt_len)


def random_pin(params: LheParams, rng: Random) -> int:
    return rng.randrange(params.pin_space)


def select(salt: bytes, pin, params: LheParams) -> List[int]:
    """Cluster indices ``i_1..i_n`` in ``1..N``; a pure function of (salt, pin, N, n)."""
    idx = sample_indices(b"safetypin/select", [salt, pin_bytes(pin), u32(params.N), u32(params.n)],
                         params.N, params.n)
    return [i + 1 for i in idx]


# ----------------------------------------------------------- PKE adapters

@dataclass(frozen=True)
class ShareContext:
    """What a share ciphertext is bound to: user, salt, the cluster's keys and the slot."""
    user: bytes
    salt: bytes
    cluster: Tuple[bytes, ...]      # key fingerprints in slot order
    slot: int                       # 1-based

    def ad(self) -> bytes:
        return lp(self.user) + lp(self.salt) + u32(self.slot) + u32(len(self.cluster)) + b"".join(
            lp(f) for f in self.cluster)

    def tag(self) -> bytes:
        """Puncture tag; shared by every ciphertext with the same (user, salt)."""
        return hash_domain(b"safetypin/bloom", [b"tag", self.user, self.salt])


class ElGamalPke:
    """Plain hashed ElGamal keys (not puncturable)."""

    name = "elgamal"

    def keygen(self, rng: Random):
        kp = elgamal_keygen(rng)
        return kp.pk, kp.sk

    def fingerprint(self, pk) -> bytes:
        return pk.to_bytes()

    def encrypt(self, pk, ctx: ShareContext, msg: bytes, rng: Random) -> bytes:
        return elgamal_encrypt(pk, ctx.ad(), msg, rng)

    def decrypt(self, sk, ctx: ShareContext, ct: bytes) -> Optional[bytes]:
        return elgamal_decrypt(sk, ctx.ad(), ct)


ELGAMAL = ElGamalPke()


class SymmetricStandIn:
    """Same interface as :class:`ElGamalPke` but ``pk == sk`` is an AE key.

    Not public-key encryption at all; it exists so that statistical runs of
    the correctness experiment (which never depend on the PKE) stay fast.
    """

    name = "symmetric-stand-in"

    def keygen(self, rng: Random):
        key = rng.randbytes(32)
        return key, key

    def fingerprint(self, pk) -> bytes:
        return hash_domain(b"safetypin/elgamal-kdf", [b"stand-in", pk])

    def encrypt(self, pk, ctx: ShareContext, msg: bytes, rng: Random) -> bytes:
        return ae_encrypt(hash_domain(b"safetypin/elgamal-kdf", [ctx.ad(), pk]), msg, rng)

    def decrypt(self, sk, ctx: ShareContext, ct: bytes) -> Optional[bytes]:
        return ae_decrypt(hash_domain(b"safetypin/elgamal-kdf", [ctx.ad(), sk]), ct)


STAND_IN = SymmetricStandIn()


class MasterPublicKey:
    """Ordered HSM public keys; HSM ``i`` (1-based) owns ``pks[i - 1]``."""

    def __init__(self, pks: Sequence, pke=ELGAMAL):
        self.pks = list(pks)
        self.pke = pke
        self.fingerprints = [pke.fingerprint(pk) for pk in self.pks]
        if len(set(self.fingerprints)) != len(self.pks):
            raise ValueError("duplicate public keys in master public key")

    def __len__(self):
        return len(self.pks)

    def cluster(self, indices: Sequence[int]) -> Tuple[bytes, ...]:
        return tuple(self.fingerprints[i - 1] for i in indices)


# ---------------------------------------------------------------- objects

@dataclass(frozen=True)
class RecoveryCiphertext:
    salt: bytes
    epoch: int
    payload: bytes
    share_cts: Tuple[bytes, ...]

    @property
    def n(self) -> int:
        return len(self.share_cts)

    def to_bytes(self) -> bytes:
        return (self.salt + u64(self.epoch) + u32(self.n) + lp(self.payload)
                + b"".join(lp(c) for c in self.share_cts))

    @classmethod
    def from_bytes(cls, data: bytes, salt_len: int = 16) -> "RecoveryCiphertext":
        r = Reader(data)
        salt = r.take(salt_len)
        epoch = r.u64()
        n = r.u32()
        payload = r.lp()
        cts = tuple(r.lp() for _ in range(n))
        r.done()
        return cls(salt, epoch, payload, cts)


@dataclass(frozen=True)
class PlaintextShare:
    user: bytes
    share: ShamirShare
    payload: bytes


def _encode_share(user: bytes, share: ShamirShare) -> bytes:
    return lp(user) + u32(share.index) + TRANSPORT_FIELD.encode(share.value)


def _decode_share(data: bytes) -> Optional[Tuple[bytes, ShamirShare]]:
    try:
        r = Reader(data)
        user = r.lp()
        index = r.u32()
        value = TRANSPORT_FIELD.decode(r.take(TRANSPORT_FIELD.byte_len))
        r.done()
        return user, ShamirShare(index, value)
    except (DecodeError, ValueError, ShamirError):
        return None


# ------------------------------------------------------------- operations

def encrypt(mpk: MasterPublicKey, salt: bytes, pin, user: bytes, msg: bytes, params: LheParams,
            rng: Random, epoch: int = 0) -> RecoveryCiphertext:
    if len(mpk) != params.N:
        raise ValueError(f"master public key has {len(mpk)} keys, expected N={params.N}")
    if len(salt) != params.salt_len:
        raise ValueError(f"salt must be {params.salt_len} bytes")
    indices = select(salt, pin, params)
    cluster = mpk.cluster(indices)
    key = TRANSPORT_FIELD.random(rng)
    payload = ae_encrypt(TRANSPORT_FIELD.encode(key), msg, rng)
    shares = shamir_share(key, params.t, params.n, rng, TRANSPORT_FIELD)
    cts = []
    for j, (i, share) in enumerate(zip(indices, shares), start=1):
        ctx = ShareContext(user, salt, cluster, j)
        cts.append(mpk.pke.encrypt(mpk.pks[i - 1], ctx, _encode_share(user, share), rng))
    return RecoveryCiphertext(salt, epoch, payload, tuple(cts))


def decrypt_share(sk, slot: int, ct: RecoveryCiphertext, user: bytes, cluster: Sequence[bytes],
                  pke=ELGAMAL) -> Optional[PlaintextShare]:
    """Decrypt slot ``slot`` (1-based) for ``user``; None on any mismatch."""
    if not 1 <= slot <= ct.n or len(cluster) != ct.n:
        return None
    ctx = ShareContext(user, ct.salt, tuple(cluster), slot)
    plain = pke.decrypt(sk, ctx, ct.share_cts[slot - 1])
    if plain is None:
        return None
    decoded = _decode_share(plain)
    if decoded is None or decoded[0] != user or decoded[1].index != slot:
        return None
    return PlaintextShare(decoded[0], decoded[1], ct.payload)


def majority_payload(shares: Sequence[PlaintextShare]) -> bytes:
    counts = Counter(s.payload for s in shares)
    best = max(counts.values())
    return min(p for p, c in counts.items() if c == best)


def reconstruct(shares: Sequence[Optional[PlaintextShare]], params: LheParams) -> Optional[bytes]:
    """Rebuild the transport key from ``t`` shares and open the majority payload."""
    present = [s for s in shares if s is not None]
    unique: Dict[int, PlaintextShare] = {}
    for s in present:
        unique.setdefault(s.share.index, s)
    if len(unique) < params.t:
        return None
    picked = [unique[i] for i in sorted(unique)][:params.t]
    key = shamir_reconstruct([s.share for s in picked], params.t, TRANSPORT_FIELD)
    return ae_decrypt(TRANSPORT_FIELD.encode(key), majority_payload(present))


def recover_with_keys(sks: Dict[int, object], mpk: MasterPublicKey, ct: RecoveryCiphertext, pin,
                      user: bytes, params: LheParams) -> Optional[bytes]:
    """Client-side pipeline with direct key access (no HSMs): select, decrypt, reconstruct."""
    indices = select(ct.salt, pin, params)
    cluster = mpk.cluster(indices)
    shares = [decrypt_share(sks[i], j, ct, user, cluster, mpk.pke) if i in sks else None
              for j, i in enumerate(indices, start=1)]
    return reconstruct(shares, params)


# ------------------------------------------------------------ experiments

def generate_keys(params: LheParams, rng: Random, pke=ELGAMAL):
    pairs = [pke.keygen(rng) for _ in range(params.N)]
    mpk = MasterPublicKey([pk for pk, _ in pairs], pke)
    return mpk, {i: sk for i, (_, sk) in enumerate(pairs, start=1)}


def correctness_experiment(params: LheParams, trials: int, rng: Random, pke=ELGAMAL,
                           msg: bytes = b"backup payload") -> float:
    """Fraction of runs of the correctness experiment that fail to return ``msg``.

    Keys are generated once per call; every trial draws a fresh salt, PIN and
    failure set. A failed HSM contributes no share at any slot it occupies.
    """
    if trials < 1:
        raise ValueError("need at least one trial")
    mpk, sks = generate_keys(params, rng, pke)
    user = b"experiment-user"
    failures = 0
    for _ in range(trials):
        salt = random_salt(params, rng)
        pin = random_pin(params, rng)
        ct = encrypt(mpk, salt, pin, user, msg, params, rng)
        failed = {i for i in range(1, params.N + 1) if rng.random() < params.f_live}
        alive = {i: sk for i, sk in sks.items() if i not in failed}
        if recover_with_keys(alive, mpk, ct, pin, user, params) != msg:
            failures += 1
    return failures / trials


def correctness_bound(params: LheParams) -> float:
    return 2.0 ** (-params.n / 2)


def binomial_failure_probability(n: int, t: int, f: float) -> float:
    """Pr[fewer than t of n slots survive] when each slot fails independently w.p. f.

    This is the exact answer for a cluster with no repeated HSMs.
    """
    return sum(math.comb(n, k) * (1 - f) ** k * f ** (n - k) for k in range(t))


def _partitions(n: int, largest: Optional[int] = None):
    largest = n if largest is None else largest
    if n == 0:
        yield ()
        return
    for part in range(min(n, largest), 0, -1):
        for rest in _partitions(n - part, part):
            yield (part,) + rest


def exact_failure_probability(N: int, n: int, t: int, f: float) -> float:
    """Exact failure probability of the correctness experiment.

    Sums over the multiplicity pattern of the selected list (how many slots
    each distinct HSM holds); a failed HSM removes all of its slots.
    """
    total = 0.0
    for parts in _partitions(n):
        d = len(parts)
        if d > N:
            continue
        arrangements = math.factorial(n)
        for m in parts:
            arrangements //= math.factorial(m)
        for c in Counter(parts).values():
            arrangements //= math.factorial(c)
        weight = arrangements * math.perm(N, d) / N ** n
        alive = {0: 1.0}                      # surviving slot count distribution
        for m in parts:
            nxt: Dict[int, float] = {}
            for k, p in alive.items():
                nxt[k] = nxt.get(k, 0.0) + p * f
                nxt[k + m] = nxt.get(k + m, 0.0) + p * (1 - f)
            alive = nxt
        total += weight * sum(p for k, p in alive.items() if k < t)
    return total


# ---------------------------------------------------------------- covers

def _covers(counts_in_s: Sequence[int], n: int) -> int:
    return sum(1 for c in counts_in_s if 2 * c >= n)


@functools.lru_cache(maxsize=8)
def _subset_matrix(N: int, size: int) -> np.ndarray:
    rows = np.zeros((math.comb(N, size), N), dtype=np.int64)
    for r, subset in enumerate(itertools.combinations(range(N), size)):
        rows[r, list(subset)] = 1
    return rows


def _exact_cover(lists: List[List[int]], N: int, n: int, size: int, threshold: float) -> bool:
    counts = np.zeros((len(lists), N), dtype=np.int64)
    for k, L in enumerate(lists):
        for x in L:
            counts[k, x - 1] += 1
    inside = _subset_matrix(N, size) @ counts.T          # sets x lists
    covered = (2 * inside >= n).sum(axis=1)
    return bool((covered > threshold).any())


def _covered(chosen: set, lists: List[List[int]], n: int) -> int:
    return sum(1 for L in lists if 2 * sum(1 for x in L if x in chosen) >= n)


def _fill_greedy(chosen: set, lists: List[List[int]], N: int, n: int, size: int) -> set:
    chosen = set(chosen)
    while len(chosen) < size:
        best, best_score = None, None
        for x in range(1, N + 1):
            if x in chosen:
                continue
            trial = chosen | {x}
            inside = [sum(1 for y in L if y in trial) for L in lists]
            score = (_covers(inside, n), sum(min(c, math.ceil(n / 2)) for c in inside))
            if best_score is None or score > best_score:
                best, best_score = x, score
        chosen.add(best)
    return chosen


def _local_search(chosen: set, lists: List[List[int]], N: int, n: int) -> set:
    """Single-element swaps while they increase the number of covered lists."""
    current = _covered(chosen, lists, n)
    improved = True
    while improved:
        improved = False
        for out in sorted(chosen):
            for x in range(1, N + 1):
                if x in chosen:
                    continue
                trial = (chosen - {out}) | {x}
                c = _covered(trial, lists, n)
                if c > current:
                    chosen, current, improved = trial, c, True
                    break
            if improved:
                break
    return chosen


def _greedy_cover(lists: List[List[int]], N: int, n: int, size: int, threshold: float) -> bool:
    """Greedy fill from the empty set and from each list's own elements, then swap search."""
    need = math.ceil(n / 2)
    starts = [set()]
    for L in lists:
        top = [x for x, _ in Counter(L).most_common()]
        seed, count = set(), 0
        for x in top:
            if count >= need or len(seed) >= size:
                break
            seed.add(x)
            count += L.count(x)
        starts.append(seed)
    for seed in starts:
        chosen = _local_search(_fill_greedy(seed, lists, N, n, size), lists, N, n)
        if _covered(chosen, lists, n) > threshold:
            return True
    return False


def cover_probability(N: int, n: int, phi: int, alpha: float, beta: float, trials: int,
                      rng: Random, exact: Optional[bool] = None) -> float:
    """Estimate the probability that some set of ``floor(alpha*N)`` HSMs
    ``n/2``-covers more than ``beta*N`` of ``phi`` random lists in ``[N]^n``.

    For ``N <= 12`` the search over sets is exhaustive; above that a
    heuristic search (greedy fills from several seeds plus swap moves) is
    used, which can miss covers and so can only under-estimate.
    """
    size = math.floor(alpha * N)
    threshold = beta * N
    if threshold >= phi:
        return 0.0
    if exact is None:
        exact = N <= 12
    search = _exact_cover if exact else _greedy_cover
    hits = 0
    for _ in range(trials):
        lists = [[rng.randrange(1, N + 1) for _ in range(n)] for _ in range(phi)]
        if search(lists, N, n, size, threshold):
            hits += 1
    return hits / trials
