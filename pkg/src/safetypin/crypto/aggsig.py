"""Aggregatable signatures for epoch sign-off.

Two backends share one interface:

* ``ConcatScheme`` keeps the vector of Ed25519 signatures and verifies each
  one. It is the default and doubles as the reference oracle.
* ``BlsMultisig`` aggregates BLS signatures (py_ecc, pure Python and slow).
  Keys must be registered with a proof of possession before they can take
  part in verification, which blocks rogue-key attacks.
"""

from random import Random
from typing import Dict, List, Sequence, Tuple

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives import serialization
from cryptography.hazmat.primitives.asymmetric.ed25519 import (
    Ed25519PrivateKey, Ed25519PublicKey)

from .encoding import DecodeError, Reader, lp, u32


class ConcatScheme:
    name = "concat"

    def keygen(self, rng: Random) -> Tuple[bytes, bytes]:
        seed = rng.randbytes(32)
        pk = Ed25519PrivateKey.from_private_bytes(seed).public_key()
        return seed, pk.public_bytes(serialization.Encoding.Raw, serialization.PublicFormat.Raw)

    def sign(self, sk: bytes, msg: bytes) -> bytes:
        return Ed25519PrivateKey.from_private_bytes(sk).sign(msg)

    def combine(self, sigs: Sequence[bytes]) -> bytes:
        return u32(len(sigs)) + b"".join(lp(s) for s in sigs)

    def verify(self, pks: Sequence[bytes], msg: bytes, combined: bytes) -> bool:
        try:
            r = Reader(combined)
            sigs = [r.lp() for _ in range(r.u32())]
            r.done()
        except DecodeError:
            return False
        if len(sigs) != len(pks) or not pks:
            return False
        for pk, sig in zip(pks, sigs):
            try:
                Ed25519PublicKey.from_public_bytes(pk).verify(sig, msg)
            except (InvalidSignature, ValueError):
                return False
        return True


class BlsMultisig:
    """Same-message BLS multisignature with proof-of-possession registration."""

    name = "bls"

    def __init__(self):
        from py_ecc.bls import G2ProofOfPossession
        self._bls = G2ProofOfPossession
        self._registered: Dict[bytes, bool] = {}

    def keygen(self, rng: Random) -> Tuple[int, bytes]:
        sk = self._bls.KeyGen(rng.randbytes(32))
        return sk, self._bls.SkToPk(sk)

    def __getstate__(self):
        return {"_registered": self._registered}

    def __setstate__(self, state):
        self.__init__()
        self._registered = state["_registered"]

    def prove_possession(self, sk: int) -> bytes:
        return self._bls.PopProve(sk)

    def register(self, pk: bytes, pop: bytes) -> bool:
        ok = bool(self._bls.PopVerify(pk, pop))
        if ok:
            self._registered[bytes(pk)] = True
        return ok

    def sign(self, sk: int, msg: bytes) -> bytes:
        return self._bls.Sign(sk, msg)

    def combine(self, sigs: Sequence[bytes]) -> bytes:
        return self._bls.Aggregate(list(sigs))

    def verify(self, pks: Sequence[bytes], msg: bytes, combined: bytes) -> bool:
        if not pks or any(bytes(pk) not in self._registered for pk in pks):
            return False
        try:
            return bool(self._bls.FastAggregateVerify(list(pks), msg, combined))
        except Exception:  # py_ecc raises assorted errors on malformed input
            return False


DEFAULT_SCHEME = ConcatScheme()


def agg_sign(sk, msg: bytes, scheme=DEFAULT_SCHEME) -> bytes:
    return scheme.sign(sk, msg)


def agg_combine(sigs: List[bytes], scheme=DEFAULT_SCHEME) -> bytes:
    return scheme.combine(sigs)


def agg_verify(pks: Sequence[bytes], msg: bytes, combined: bytes, scheme=DEFAULT_SCHEME) -> bool:
    return scheme.verify(pks, msg, combined)
