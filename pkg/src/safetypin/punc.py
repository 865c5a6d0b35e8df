"""Pairing-free Bloom-filter puncturable encryption.

The public key is an array of ``m`` hashed-ElGamal public keys. A tag maps to
``k`` distinct slots; a message is encrypted separately to each of them.
The matching slot secret scalars live only as leaves of a secure-deletion
tree at the provider, so puncturing a tag means securely deleting its ``k``
leaves. Decryption fails only when every slot of the tag has been deleted.
"""

import math
from dataclasses import dataclass, field
from random import Random
from typing import List, Optional, Tuple

from . import sdstore
from .crypto.elgamal import elgamal_decrypt, elgamal_encrypt, elgamal_keygen
from .crypto.encoding import DecodeError, Reader, lp, u16, u32, u64
from .crypto.group import ORDER, GroupElement
from .crypto.hashing import hash_domain, sample_indices
from .sdstore import BlockServer, TreeHandle

SCALAR_SIZE = 32


@dataclass(frozen=True)
class BloomParams:
    """``k`` hashes per tag over ``m`` slots, sized so that after ``P``
    punctures a fresh tag fails to decrypt with probability about ``2**-fail_exp``."""
    m: int
    k: int
    P: int
    fail_exp: int

    @classmethod
    def for_punctures(cls, P: int, fail_exp: int = 8) -> "BloomParams":
        if P < 1 or fail_exp < 1:
            raise ValueError("P and fail_exp must be positive")
        k = fail_exp
        m = math.ceil(P * k / math.log(2))
        return cls(max(m, k), k, P, fail_exp)

    def __post_init__(self):
        if self.k < 1 or self.m < self.k:
            raise ValueError("need 1 <= k <= m")

    def failure_rate(self, punctures: int) -> float:
        """Analytic Bloom false-negative estimate after ``punctures`` deletions."""
        return (1 - (1 - self.k / self.m) ** punctures) ** self.k


def slot_indices(params: BloomParams, epoch_id: int, tag: bytes) -> List[int]:
    return sample_indices(b"safetypin/bloom", [u64(epoch_id), tag], params.m, params.k, distinct=True)


@dataclass
class PuncturablePublicKey:
    params: BloomParams
    slot_pks: List[GroupElement] = field(repr=False)
    epoch_id: int
    _fingerprint: Optional[bytes] = field(default=None, repr=False, compare=False)

    def fingerprint(self) -> bytes:
        if self._fingerprint is None:
            self._fingerprint = hash_domain(b"safetypin/bloom", [b"pk", u64(self.epoch_id)]
                                            + [pk.to_bytes() for pk in self.slot_pks])
        return self._fingerprint


@dataclass
class PuncturableSecretKey:
    """HSM-side state: only the tree root key and counters."""
    handle: TreeHandle = field(repr=False)
    params: BloomParams
    epoch_id: int
    deleted_count: int = 0


@dataclass(frozen=True)
class PuncCiphertext:
    epoch_id: int
    tag: bytes
    slot_cts: Tuple[bytes, ...]

    def to_bytes(self) -> bytes:
        return (u64(self.epoch_id) + lp(self.tag) + u16(len(self.slot_cts))
                + b"".join(lp(c) for c in self.slot_cts))

    @classmethod
    def from_bytes(cls, data: bytes) -> "PuncCiphertext":
        r = Reader(data)
        epoch_id = r.u64()
        tag = r.lp()
        cts = tuple(r.lp() for _ in range(r.u16()))
        r.done()
        return cls(epoch_id, tag, cts)


def _slot_ad(epoch_id: int, tag: bytes, slot: int, ad: bytes) -> bytes:
    return u64(epoch_id) + lp(tag) + u32(slot) + lp(ad)


def punc_keygen(params: BloomParams, rng: Random, store: BlockServer,
                epoch_id: int = 0) -> Tuple[PuncturablePublicKey, PuncturableSecretKey]:
    if store.blocks:
        raise sdstore.StoreError("block store already holds a key")
    pks, secrets = [], []
    for _ in range(params.m):
        kp = elgamal_keygen(rng)
        pks.append(kp.pk)
        secrets.append(kp.sk.to_bytes(SCALAR_SIZE, "big"))
    handle = sdstore.setup(secrets, store, rng)
    secrets.clear()
    return (PuncturablePublicKey(params, pks, epoch_id),
            PuncturableSecretKey(handle, params, epoch_id))


def punc_encrypt(pk: PuncturablePublicKey, tag: bytes, msg: bytes, rng: Random,
                 ad: bytes = b"") -> PuncCiphertext:
    if not tag:
        raise ValueError("tag must be nonempty")
    cts = tuple(elgamal_encrypt(pk.slot_pks[s], _slot_ad(pk.epoch_id, tag, s, ad), msg, rng)
                for s in slot_indices(pk.params, pk.epoch_id, tag))
    return PuncCiphertext(pk.epoch_id, tag, cts)


def punc_decrypt(sk: PuncturableSecretKey, ct, store: BlockServer, ad: bytes = b"") -> Optional[bytes]:
    """Try the tag's slots in order; None if all are deleted or nothing authenticates."""
    if isinstance(ct, (bytes, bytearray)):
        try:
            ct = PuncCiphertext.from_bytes(ct)
        except DecodeError:
            return None
    if ct.epoch_id != sk.epoch_id or len(ct.slot_cts) != sk.params.k:
        return None
    for slot, body in zip(slot_indices(sk.params, sk.epoch_id, ct.tag), ct.slot_cts):
        raw = sdstore.read(sk.handle, slot, store)
        if raw is None or len(raw) != SCALAR_SIZE:
            continue
        x = int.from_bytes(raw, "big")
        if not 0 < x < ORDER:
            continue
        msg = elgamal_decrypt(x, _slot_ad(ct.epoch_id, ct.tag, slot, ad), body)
        if msg is not None:
            return msg
    return None


def puncture(sk: PuncturableSecretKey, tag: bytes, store: BlockServer, rng: Random) -> PuncturableSecretKey:
    """Securely delete every slot of ``tag``; idempotent. Mutates and returns ``sk``."""
    for slot in slot_indices(sk.params, sk.epoch_id, tag):
        new = sdstore.delete(sk.handle, slot, store, rng)
        if new is None:
            raise sdstore.StoreError(f"slot {slot} path does not authenticate")
        if new is not sk.handle:
            sk.handle = new
            sk.deleted_count += 1
    return sk


def needs_rotation(sk: PuncturableSecretKey) -> bool:
    return 2 * sk.deleted_count >= sk.params.m


def punc_rotate(sk: PuncturableSecretKey, rng: Random, store: BlockServer):
    """Fresh key under the next epoch id; the old root key is zeroed."""
    pair = punc_keygen(sk.params, rng, store, sk.epoch_id + 1)
    sk.handle.erase()
    return pair


class PuncPke:
    """Adapter that lets location-hiding encryption run over puncturable keys.

    The decryption key is the pair ``(PuncturableSecretKey, BlockServer)``.
    """

    name = "punc"

    def fingerprint(self, pk: PuncturablePublicKey) -> bytes:
        return pk.fingerprint()

    def encrypt(self, pk: PuncturablePublicKey, ctx, msg: bytes, rng: Random) -> bytes:
        return punc_encrypt(pk, ctx.tag(), msg, rng, ad=ctx.ad()).to_bytes()

    def decrypt(self, key, ctx, ct: bytes) -> Optional[bytes]:
        sk, store = key
        try:
            parsed = PuncCiphertext.from_bytes(ct)
        except DecodeError:
            return None
        if parsed.tag != ctx.tag():
            return None
        return punc_decrypt(sk, parsed, store, ad=ctx.ad())


PUNC = PuncPke()
