"""Software HSM actor: puncturable decryption, log replica, puncture-on-recover."""

from dataclasses import dataclass
from random import Random
from typing import Callable, Dict, List, Optional, Tuple

from .. import lhe
from ..authlog import does_include
from ..crypto.elgamal import elgamal_encrypt
from ..crypto.encoding import DecodeError
from ..crypto.group import GroupElement
from ..logsync import LogReplica
from ..punc import (PUNC, BloomParams, PuncCiphertext, PuncturablePublicKey,
                    needs_rotation, punc_keygen, punc_rotate, puncture)
from ..sdstore import BlockServer
from .messages import (RecoveryReply, RecoveryRequest, ct_digest, encode_shares, log_id,
                       reply_ad)


@dataclass
class HsmSecrets:
    """Everything an adversary gets by compromising one HSM at one moment."""
    node_id: int
    root_key: bytes
    height: int
    leaf_count: int
    punc_epoch: int
    signer_sk: object


class Hsm:
    def __init__(self, node_id: int, params: lhe.LheParams, bloom: BloomParams, store: BlockServer,
                 rng: Random, log: LogReplica, guess_limit: int = 1):
        self.node_id = node_id
        self.params = params
        self.store = store
        self.rng = rng
        self.log = log
        self.guess_limit = guess_limit
        self.punc_pk, self.punc_sk = punc_keygen(bloom, rng, store)
        self.directory: List[bytes] = []        # key fingerprints of HSMs 1..N
        self.events: List[Tuple[str, bytes]] = []
        self.before_puncture: Optional[Callable[["Hsm"], None]] = None
        self.rejections: Dict[str, int] = {}

    # -- log protocol
    def handle_log(self, verb: str, payload):
        r = self.log
        if verb == "prepare":
            return r.handle_prepare(payload)
        if verb == "audit":
            return r.handle_response(payload)
        if verb == "recheck":
            return r.handle_recheck(*payload)
        if verb == "sign":
            return r.handle_sign_request(payload)
        if verb == "finalize":
            return r.handle_finalize(payload)
        if verb == "catchup":
            return r.handle_catchup(payload)
        if verb == "gc":
            return r.handle_gc(payload)
        raise ValueError(f"unknown log verb {verb!r}")

    # -- recovery
    def _reject(self, reason: str) -> None:
        self.rejections[reason] = self.rejections.get(reason, 0) + 1
        return None

    def serve_recovery(self, req: RecoveryRequest) -> Optional[RecoveryReply]:
        """Check the logged commitment, decrypt this HSM's slots, puncture, then reply.

        Every check runs before any state changes; the puncture happens
        before the encrypted shares leave the HSM.
        """
        if self.log.refusing:
            return self._reject("refusing")
        n, N = self.params.n, self.params.N
        if not 0 <= req.ctr < self.guess_limit:
            return self._reject("attempt-limit")
        opening = req.opening
        if len(opening.ids) != n or any(not 1 <= i <= N for i in opening.ids):
            return self._reject("bad-opening")
        if not does_include(self.log.digest, log_id(req.user, req.ctr), opening.commitment(), req.proof):
            return self._reject("bad-proof")
        slots = tuple(req.slots)
        if not slots or len(set(slots)) != len(slots) or \
                any(not 1 <= j <= n or opening.ids[j - 1] != self.node_id for j in slots):
            return self._reject("bad-slots")
        if ct_digest(req.ct) != opening.ct_hash:
            return self._reject("bad-ciphertext")
        try:
            ct = lhe.RecoveryCiphertext.from_bytes(req.ct, self.params.salt_len)
            session_pk = GroupElement.from_bytes(req.session_pk)
            if ct.n != n:
                return self._reject("bad-ciphertext")
            # HSMs rotate independently, so the key epoch is per share.
            epochs = {PuncCiphertext.from_bytes(ct.share_cts[j - 1]).epoch_id for j in slots}
        except DecodeError:
            return self._reject("bad-encoding")
        if epochs != {self.punc_sk.epoch_id}:
            return self._reject("wrong-epoch")
        cluster = tuple(self.directory[i - 1] for i in opening.ids)
        key = (self.punc_sk, self.store)
        shares = []
        for j in slots:
            share = lhe.decrypt_share(key, j, ct, req.user, cluster, PUNC)
            if share is None:
                return self._reject("decrypt-failed")
            shares.append(share.share)
        tag = lhe.ShareContext(req.user, ct.salt, cluster, slots[0]).tag()
        self.events.append(("decrypt", tag))
        if self.before_puncture is not None:
            self.before_puncture(self)
        puncture(self.punc_sk, tag, self.store, self.rng)
        self.events.append(("puncture", tag))
        body = elgamal_encrypt(session_pk, reply_ad(req.user, req.ctr, self.node_id, slots),
                               encode_shares(shares), self.rng)
        self.events.append(("release", tag))
        return RecoveryReply(self.node_id, req.user, req.ctr, slots, body)

    # -- key management and adversary access
    def needs_rotation(self) -> bool:
        return needs_rotation(self.punc_sk)

    def rotate(self, store: BlockServer) -> PuncturablePublicKey:
        self.punc_pk, self.punc_sk = punc_rotate(self.punc_sk, self.rng, store)
        self.store = store
        return self.punc_pk

    def export_secrets(self) -> HsmSecrets:
        h = self.punc_sk.handle
        return HsmSecrets(self.node_id, bytes(h.root_key), h.height, h.leaf_count,
                          self.punc_sk.epoch_id, self.log.signer_sk)
