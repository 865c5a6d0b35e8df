"""Client actor: backup, logged recovery and resumption after a crash."""

from dataclasses import dataclass, field
from random import Random
from typing import Dict, List, Optional

from .. import lhe
from ..crypto.ae import ae_decrypt, ae_encrypt, fresh_key
from ..crypto.elgamal import ElGamalKeypair, elgamal_decrypt, elgamal_keygen
from ..crypto.encoding import DecodeError, Reader, u32
from .messages import (SESSION_SUFFIX, Opening, RecoveryRequest, ct_digest,
                       decode_shares, reply_ad)


class ClientCrash(RuntimeError):
    """Scripted client death in the middle of a recovery."""


@dataclass
class RecoveryAttempt:
    user: bytes
    ctr: int
    ct: lhe.RecoveryCiphertext
    ct_bytes: bytes
    opening: Opening
    session: ElGamalKeypair
    logged: bool
    trail: List[str] = field(default_factory=list)

    @property
    def h(self) -> bytes:
        return self.opening.commitment()


def cluster_slots(ids) -> Dict[int, List[int]]:
    """HSM id -> the 1-based slots it holds, in first-appearance order."""
    out: Dict[int, List[int]] = {}
    for j, i in enumerate(ids, start=1):
        out.setdefault(i, []).append(j)
    return out


def open_replies(replies, attempt_user: bytes, ctr: int, ct: lhe.RecoveryCiphertext, ids,
                 session_sk: int) -> List[lhe.PlaintextShare]:
    """Decrypt HSM replies with the session key, keeping only well-formed shares."""
    shares = []
    for reply in replies:
        if reply.user != attempt_user or reply.ctr != ctr:
            continue
        if any(not 1 <= j <= len(ids) or ids[j - 1] != reply.hsm_id for j in reply.slots):
            continue
        plain = elgamal_decrypt(session_sk, reply_ad(attempt_user, ctr, reply.hsm_id, reply.slots),
                                reply.body)
        decoded = None if plain is None else decode_shares(plain)
        if decoded is None:
            continue
        for s in decoded:
            if s.index in reply.slots:
                shares.append(lhe.PlaintextShare(attempt_user, s, ct.payload))
    return shares


class Client:
    def __init__(self, user: bytes, datacenter, rng: Optional[Random] = None):
        self.user = bytes(user)
        self.dc = datacenter
        self.rng = rng or datacenter.client_rng(self.user)
        self.contacted = 0

    @property
    def params(self) -> lhe.LheParams:
        return self.dc.params

    # -- backup
    def backup(self, pin, msg: bytes, same_salt: bool = False) -> int:
        """Encrypt ``msg`` under ``pin`` and upload it; the client keeps nothing else."""
        salt = None
        if same_salt:
            prev = self._fetch_ct()
            salt = prev.salt if prev is not None else None
        if salt is None:
            salt = lhe.random_salt(self.params, self.rng)
        ct = lhe.encrypt(self.dc.mpk, salt, pin, self.user, msg, self.params, self.rng,
                         epoch=self.dc.mpk_epoch)
        return self.dc.provider.upload(self.user, ct.to_bytes())

    def backup_key(self, pin) -> bytes:
        """Incremental mode: back up one AE key; later data is wrapped under it."""
        key = fresh_key(self.rng)
        self.backup(pin, key)
        return key

    def wrap(self, key: bytes, data: bytes) -> bytes:
        return ae_encrypt(key, data, self.rng)

    @staticmethod
    def unwrap(key: bytes, blob: bytes) -> Optional[bytes]:
        return ae_decrypt(key, blob)

    def _fetch_ct(self, backup_id: Optional[int] = None) -> Optional[lhe.RecoveryCiphertext]:
        raw = self.dc.provider.fetch(self.user, backup_id)
        if raw is None:
            return None
        try:
            return lhe.RecoveryCiphertext.from_bytes(raw, self.params.salt_len)
        except DecodeError:
            return None

    # -- recovery
    def start_recovery(self, pin, backup_id: Optional[int] = None) -> Optional[RecoveryAttempt]:
        """Steps up to the log insert: back up a session key, fetch ct, log the commitment."""
        provider = self.dc.provider
        session = elgamal_keygen(self.rng)
        ctr = provider.next_attempt(self.user)
        Client(self.user + SESSION_SUFFIX, self.dc, self.rng).backup(
            pin, u32(ctr) + session.sk.to_bytes(32, "big"))
        raw = provider.fetch(self.user, backup_id)
        if raw is None:
            return None
        try:
            ct = lhe.RecoveryCiphertext.from_bytes(raw, self.params.salt_len)
        except DecodeError:
            return None
        ids = tuple(lhe.select(ct.salt, pin, self.params))
        opening = Opening(ids, ct_digest(raw), self.rng.randbytes(32))
        logged = provider.request_insert(self.user, ctr, opening.commitment())
        attempt = RecoveryAttempt(self.user, ctr, ct, raw, opening, session, logged)
        attempt.trail.append("logged" if logged else "log-refused")
        return attempt

    def finish_recovery(self, attempt: Optional[RecoveryAttempt], pin=None,
                        die_after: Optional[int] = None) -> Optional[bytes]:
        """Fetch the inclusion proof, contact the cluster, reconstruct.

        ``die_after`` crashes the client after that many HSM contacts.
        """
        if attempt is None or not attempt.logged:
            return None
        proof = self.dc.provider.proof(self.user, attempt.ctr, attempt.h)
        if proof is None:
            attempt.trail.append("no-proof")
            return None
        replies = []
        self.contacted = 0
        for hsm_id, slots in cluster_slots(attempt.opening.ids).items():
            if die_after is not None and self.contacted >= die_after:
                self._crash()
            req = RecoveryRequest(self.user, attempt.ctr, attempt.opening, proof, tuple(slots),
                                  attempt.session.pk.to_bytes(), attempt.ct_bytes)
            reply = self.dc.provider.relay_recovery(hsm_id, req)
            self.contacted += 1
            if reply is not None:
                replies.append(reply)
        if die_after is not None and self.contacted >= die_after:
            self._crash()
        shares = open_replies(replies, self.user, attempt.ctr, attempt.ct, attempt.opening.ids,
                              attempt.session.sk)
        attempt.trail.append(f"shares={len(shares)}")
        return lhe.reconstruct(shares, self.params)

    def _crash(self):
        self.dc.router.note(self.user.decode(errors="replace"), "client-crash",
                            contacted=self.contacted)
        raise ClientCrash(f"client died after {self.contacted} HSM contacts")

    def recover(self, pin, die_after: Optional[int] = None) -> Optional[bytes]:
        attempt = self.start_recovery(pin)
        if attempt is None or not attempt.logged:
            return None
        self.dc.run_epoch()
        return self.finish_recovery(attempt, pin, die_after)

    def resume(self, pin) -> Optional[bytes]:
        """Replacement-client path: recover the session key, then use cached replies.

        If the session-key recovery itself crashed earlier, this nests.
        """
        session_client = Client(self.user + SESSION_SUFFIX, self.dc, self.rng)
        provider = self.dc.provider
        if provider.next_attempt(session_client.user) > 0:
            blob = session_client.resume(pin)
        else:
            blob = session_client.recover(pin)
        if blob is None or len(blob) != 36:
            return None
        r = Reader(blob)
        ctr, sk = r.u32(), int.from_bytes(r.take(32), "big")
        ct = self._fetch_ct()
        if ct is None:
            return None
        ids = lhe.select(ct.salt, pin, self.params)
        shares = open_replies(provider.cached_replies(self.user, ctr), self.user, ctr, ct, ids, sk)
        return lhe.reconstruct(shares, self.params)
