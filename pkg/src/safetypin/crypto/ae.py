"""AES-256-GCM as the authenticated encryption scheme.

Ciphertexts are ``nonce || body || tag``. Keys are 32 raw bytes; the all-zero
key is the "useless" key the secure-deletion tree writes over deleted leaves.
"""

from random import Random
from typing import Optional

from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives.ciphers.aead import AESGCM

KEY_SIZE = 32
NONCE_SIZE = 12
TAG_SIZE = 16
ZERO_KEY = bytes(KEY_SIZE)


def fresh_key(rng: Random) -> bytes:
    return rng.randbytes(KEY_SIZE)


def ae_encrypt(key: bytes, msg: bytes, rng: Random) -> bytes:
    nonce = rng.randbytes(NONCE_SIZE)
    return nonce + AESGCM(bytes(key)).encrypt(nonce, bytes(msg), None)


def ae_decrypt(key: bytes, ct: bytes) -> Optional[bytes]:
    """Return the plaintext, or None if the key is wrong or ``ct`` was altered."""
    if len(key) != KEY_SIZE or len(ct) < NONCE_SIZE + TAG_SIZE:
        return None
    try:
        return AESGCM(bytes(key)).decrypt(ct[:NONCE_SIZE], ct[NONCE_SIZE:], None)
    except InvalidTag:
        return None
