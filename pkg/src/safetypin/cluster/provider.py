"""The untrusted service provider: storage, log server and message relay.

Nothing here is trusted. ``adversary`` switches on misbehaviour that the
HSMs and clients must catch.
"""

import hashlib
from typing import Dict, List, Optional, Set

from ..authlog import LogTree
from ..logsync import LogServer, Unreachable
from ..sdstore import BlockServer
from .messages import RecoveryReply, RecoveryRequest, log_id
from .router import Router, hsm_name

ADVERSARY_MODES = ("ct-swap", "proof-forge", "equivocate", "reply-tamper")


class Provider:
    def __init__(self, router: Router, guess_limit: int = 1):
        self.router = router
        self.guess_limit = guess_limit
        self.log = LogServer()
        self.stores: Dict[int, BlockServer] = {}
        self.hsms: Dict[int, object] = {}
        self.ciphertexts: Dict[bytes, List[bytes]] = {}
        self.replies: Dict[bytes, List[RecoveryReply]] = {}
        self.attempts: Dict[bytes, int] = {}
        self.adversary: Set[str] = set()
        self._fork: Optional[LogTree] = None

    # -- ciphertext store
    def upload(self, user: bytes, ct: bytes) -> int:
        versions = self.ciphertexts.setdefault(user, [])
        versions.append(bytes(ct))
        return len(versions) - 1

    def fetch(self, user: bytes, backup_id: Optional[int] = None) -> Optional[bytes]:
        versions = self.ciphertexts.get(user)
        if not versions:
            return None
        ct = versions[-1 if backup_id is None else backup_id]
        if "ct-swap" in self.adversary:
            others = sorted(u for u in self.ciphertexts if u != user)
            if others:
                return self.ciphertexts[others[0]][-1]
            return ct[:-1] + bytes([ct[-1] ^ 1])
        return ct

    # -- log
    def next_attempt(self, user: bytes) -> int:
        return self.attempts.get(user, 0)

    def request_insert(self, user: bytes, ctr: int, h: bytes) -> bool:
        """Queue ``(user || ctr, h)`` for the next epoch; refuses repeats and over-limit attempts."""
        if not 0 <= ctr < self.guess_limit:
            return False
        if not self.log.submit(log_id(user, ctr), h):
            return False
        self.attempts[user] = max(self.attempts.get(user, 0), ctr + 1)
        if "equivocate" in self.adversary:
            # Show the client a log where the entry is present while the HSMs never see it.
            self.log.pending.pop()
            self._fork = self.log.tree.copy()
            self._fork.insert(log_id(user, ctr), h)
        return True

    def proof(self, user: bytes, ctr: int, h: bytes) -> Optional[bytes]:
        lid = log_id(user, ctr)
        if "equivocate" in self.adversary and self._fork is not None and lid in self._fork:
            p = self._fork.prove_includes(lid, h)
            return p.to_bytes() if p else None
        p = self.log.prove_includes(lid, h)
        if "proof-forge" in self.adversary:
            # Claim a neighbouring subtree hash the log never had.
            raw = bytearray(p.to_bytes() if p else LogTree([(lid, h)]).prove_includes(lid, h).to_bytes())
            raw[-1] ^= 0x01
            return bytes(raw)
        return None if p is None else p.to_bytes()

    # -- relay
    def relay_recovery(self, hsm_id: int, req: RecoveryRequest) -> Optional[RecoveryReply]:
        hsm = self.hsms[hsm_id]
        try:
            reply = self.router.call("provider", hsm_name(hsm_id), "recover", req, hsm.serve_recovery)
        except Unreachable:
            return None
        if reply is None:
            return None
        self.router.call(hsm_name(hsm_id), "provider", "deposit-reply", reply, self.deposit)
        if "reply-tamper" in self.adversary:
            body = bytearray(reply.body)
            body[len(body) // 2] ^= 0x01
            reply = RecoveryReply(reply.hsm_id, reply.user, reply.ctr, reply.slots, bytes(body))
        return reply

    def deposit(self, reply: RecoveryReply) -> bool:
        self.replies.setdefault(log_id(reply.user, reply.ctr), []).append(reply)
        return True

    def cached_replies(self, user: bytes, ctr: int) -> List[RecoveryReply]:
        return list(self.replies.get(log_id(user, ctr), []))

    def garbage_collect(self) -> int:
        self.attempts = {}
        self._fork = None
        return self.log.garbage_collect()

    def history_digest(self) -> str:
        """Short fingerprint of all block-store history (for transcripts)."""
        h = hashlib.sha256()
        for i in sorted(self.stores):
            for addr, block in self.stores[i].history:
                h.update(addr.to_bytes(8, "big") + block)
        return h.hexdigest()[:16]
