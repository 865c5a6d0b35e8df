"""Recovery-protocol values exchanged between client, provider and HSMs."""

from dataclasses import dataclass
from typing import List, Optional, Tuple

from ..crypto.encoding import DecodeError, Reader, lp, u32
from ..crypto.hashing import hash_domain
from ..crypto.shamir import TRANSPORT_FIELD, ShamirShare

SESSION_SUFFIX = b"#session"


def log_id(user: bytes, ctr: int) -> bytes:
    """Log identifier for attempt ``ctr`` of ``user``."""
    return lp(user) + u32(ctr)


def parse_log_id(data: bytes) -> Tuple[bytes, int]:
    r = Reader(data)
    user, ctr = r.lp(), r.u32()
    r.done()
    return user, ctr


def ct_digest(ct: bytes) -> bytes:
    return hash_domain(b"safetypin/commit", [b"ciphertext", ct])


@dataclass(frozen=True)
class Opening:
    """Opening of the commitment ``h`` the client logs before contacting HSMs."""
    ids: Tuple[int, ...]
    ct_hash: bytes
    rho: bytes

    def ids_bytes(self) -> bytes:
        return u32(len(self.ids)) + b"".join(u32(i) for i in self.ids)

    def commitment(self) -> bytes:
        return hash_domain(b"safetypin/commit", [self.ids_bytes(), self.ct_hash, self.rho])

    def to_bytes(self) -> bytes:
        return self.ids_bytes() + lp(self.ct_hash) + lp(self.rho)

    @classmethod
    def from_bytes(cls, data: bytes) -> "Opening":
        r = Reader(data)
        ids = tuple(r.u32() for _ in range(r.u32()))
        out = cls(ids, r.lp(), r.lp())
        r.done()
        return out


@dataclass(frozen=True)
class RecoveryRequest:
    user: bytes
    ctr: int
    opening: Opening
    proof: bytes
    slots: Tuple[int, ...]
    session_pk: bytes
    ct: bytes

    def to_bytes(self) -> bytes:
        return (lp(self.user) + u32(self.ctr) + lp(self.opening.to_bytes()) + lp(self.proof)
                + u32(len(self.slots)) + b"".join(u32(s) for s in self.slots)
                + lp(self.session_pk) + lp(self.ct))


@dataclass(frozen=True)
class RecoveryReply:
    hsm_id: int
    user: bytes
    ctr: int
    slots: Tuple[int, ...]
    body: bytes

    def to_bytes(self) -> bytes:
        return (u32(self.hsm_id) + lp(self.user) + u32(self.ctr)
                + u32(len(self.slots)) + b"".join(u32(s) for s in self.slots) + lp(self.body))


def reply_ad(user: bytes, ctr: int, hsm_id: int, slots) -> bytes:
    return b"reply" + lp(user) + u32(ctr) + u32(hsm_id) + b"".join(u32(s) for s in slots)


def encode_shares(shares: List[ShamirShare]) -> bytes:
    return u32(len(shares)) + b"".join(u32(s.index) + TRANSPORT_FIELD.encode(s.value) for s in shares)


def decode_shares(data: bytes) -> Optional[List[ShamirShare]]:
    try:
        r = Reader(data)
        out = [ShamirShare(r.u32(), TRANSPORT_FIELD.decode(r.take(TRANSPORT_FIELD.byte_len)))
               for _ in range(r.u32())]
        r.done()
        return out
    except (DecodeError, ValueError):
        return None
