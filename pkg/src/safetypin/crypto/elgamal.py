"""Hashed ElGamal over P-256 with associated data folded into the KDF."""

from dataclasses import dataclass
from random import Random
from typing import Optional, Tuple

from cryptography.hazmat.primitives.asymmetric import ec

from . import group
from .ae import ae_decrypt, ae_encrypt
from .encoding import DecodeError
from .group import ELEMENT_SIZE, GroupElement
from .hashing import hash_domain


@dataclass(frozen=True)
class ElGamalKeypair:
    sk: int
    pk: GroupElement


def elgamal_keygen(rng: Random) -> ElGamalKeypair:
    sk = group.random_scalar(rng)
    return ElGamalKeypair(sk, group.base_exp(sk))


def _kdf(ad: bytes, head: bytes, shared: bytes) -> bytes:
    # The ephemeral point is hashed too: the shared secret is an x-coordinate,
    # which g^r and its negation share.
    return hash_domain(b"safetypin/elgamal-kdf", [ad, head, shared])


def elgamal_encrypt(pk: GroupElement, ad: bytes, msg: bytes, rng: Random) -> bytes:
    """Return ``g^r || AE(Hash'(ad, g^r, X^r), msg)`` as bytes."""
    r = group.random_scalar(rng)
    eph = ec.derive_private_key(r, group.CURVE)
    shared = eph.exchange(ec.ECDH(), pk._key)
    head = GroupElement(eph.public_key()).to_bytes()
    return head + ae_encrypt(_kdf(ad, head, shared), msg, rng)


def split_ciphertext(ct: bytes) -> Tuple[GroupElement, bytes]:
    if len(ct) < ELEMENT_SIZE:
        raise DecodeError("ciphertext too short")
    return GroupElement.from_bytes(ct[:ELEMENT_SIZE]), ct[ELEMENT_SIZE:]


def elgamal_decrypt(sk: int, ad: bytes, ct: bytes) -> Optional[bytes]:
    """Inverse of :func:`elgamal_encrypt`; None on any failure."""
    try:
        head, body = split_ciphertext(ct)
        shared = group.dh(sk, head)
    except (DecodeError, ValueError):
        return None
    return ae_decrypt(_kdf(ad, ct[:ELEMENT_SIZE], shared), body)
