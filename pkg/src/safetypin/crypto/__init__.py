"""Primitive layer: group, hashing, AE, Shamir, hashed ElGamal, signatures."""

from .ae import KEY_SIZE, ZERO_KEY, ae_decrypt, ae_encrypt, fresh_key
from .aggsig import (DEFAULT_SCHEME, BlsMultisig, ConcatScheme, agg_combine,
                     agg_sign, agg_verify)
from .elgamal import (ElGamalKeypair, elgamal_decrypt, elgamal_encrypt,
                      elgamal_keygen)
from .encoding import DecodeError, Reader, lp, lp_concat, u16, u32, u64
from .group import GroupElement
from .hashing import TAGS, UnknownTagError, hash_domain, sample_indices
from .shamir import (SMALL_FIELD, TRANSPORT_FIELD, PrimeField, ShamirError,
                     ShamirShare, shamir_reconstruct, shamir_share)

__all__ = [
    "KEY_SIZE", "ZERO_KEY", "ae_decrypt", "ae_encrypt", "fresh_key",
    "DEFAULT_SCHEME", "BlsMultisig", "ConcatScheme", "agg_combine", "agg_sign", "agg_verify",
    "ElGamalKeypair", "elgamal_decrypt", "elgamal_encrypt", "elgamal_keygen",
    "DecodeError", "Reader", "lp", "lp_concat", "u16", "u32", "u64",
    "GroupElement", "TAGS", "UnknownTagError", "hash_domain", "sample_indices",
    "SMALL_FIELD", "TRANSPORT_FIELD", "PrimeField", "ShamirError", "ShamirShare",
    "shamir_reconstruct", "shamir_share",
]
