"""Domain-separated SHA-256 and hash-driven sampling."""

import hashlib
import struct
from typing import Iterator, List, Sequence

from .encoding import u64

# Bit-exact ASCII tags; nothing outside this set may be hashed.
TAGS = frozenset({
    b"safetypin/select",
    b"safetypin/elgamal-kdf",
    b"safetypin/commit",
    b"safetypin/log-node",
    b"safetypin/log-leaf",
    b"safetypin/chunk-assign",
    b"safetypin/bloom",
})

DIGEST_SIZE = 32


class UnknownTagError(ValueError):
    """Raised for a tag outside the fixed registry (a configuration bug)."""


def _tag_bytes(tag) -> bytes:
    if isinstance(tag, str):
        tag = tag.encode("ascii")
    if tag not in TAGS:
        raise UnknownTagError(f"unregistered hash tag {tag!r}")
    return tag


_U32 = struct.Struct(">I").pack


def hash_domain(tag, inputs: Sequence[bytes] = ()) -> bytes:
    """SHA-256 over ``tag`` and ``inputs``, each length-prefixed.

    The input count is encoded as well, so lists of different arity never
    share an encoding.
    """
    t = _tag_bytes(tag)
    parts = [_U32(len(t)), t, _U32(len(inputs))]
    for item in inputs:
        parts.append(_U32(len(item)))
        parts.append(item)
    return hashlib.sha256(b"".join(parts)).digest()


def hash_stream(tag, inputs: Sequence[bytes]) -> Iterator[bytes]:
    """Counter-mode expansion of :func:`hash_domain` into 32-byte blocks."""
    prefix = list(inputs)
    counter = 0
    while True:
        yield hash_domain(tag, prefix + [u64(counter)])
        counter += 1


def sample_indices(tag, inputs: Sequence[bytes], bound: int, count: int,
                   distinct: bool = False) -> List[int]:
    """Draw ``count`` integers in ``[0, bound)`` from the hash stream.

    Uses rejection sampling on 64-bit words so no value is favoured by a
    modular reduction. With ``distinct`` repeats are rejected too.
    """
    if bound < 1:
        raise ValueError("bound must be positive")
    if distinct and count > bound:
        raise ValueError("cannot draw more distinct values than the bound")
    limit = (1 << 64) - ((1 << 64) % bound)
    out: List[int] = []
    seen = set()
    for block in hash_stream(tag, inputs):
        for off in range(0, DIGEST_SIZE, 8):
            v = int.from_bytes(block[off:off + 8], "big")
            if v >= limit:
                continue
            v %= bound
            if distinct:
                if v in seen:
                    continue
                seen.add(v)
            out.append(v)
            if len(out) == count:
                return out
    raise AssertionError("unreachable")
