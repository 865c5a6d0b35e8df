"""Wires HSMs, provider, router and clients into one deterministic simulation."""

from random import Random
from typing import Dict, Iterable, List, Optional, Tuple

from .. import lhe
from ..config import ClusterConfig
from ..crypto.aggsig import BlsMultisig, ConcatScheme
from ..logsync import (EpochResult, LogReplica, Unreachable, garbage_collect, run_epoch)
from ..punc import PUNC
from ..sdstore import BlockServer
from .client import Client
from .hsm import Hsm, HsmSecrets
from .provider import Provider
from .router import Router, hsm_name


class Datacenter:
    def __init__(self, cfg: ClusterConfig):
        self.cfg = cfg
        self.params = cfg.lhe_params()
        self.bloom = cfg.bloom_params()
        self.rng = Random(f"{cfg.seed}/datacenter")
        self.scheme = BlsMultisig() if cfg.signature == "bls" else ConcatScheme()
        self.router = Router()
        self.provider = Provider(self.router, cfg.guess_limit)
        signers = {i: self.scheme.keygen(Random(f"{cfg.seed}/signer/{i}")) for i in self.ids}
        if isinstance(self.scheme, BlsMultisig):
            for sk, pk in signers.values():
                if not self.scheme.register(pk, self.scheme.prove_possession(sk)):
                    raise RuntimeError("proof of possession rejected")
        self.signer_pks = {i: pk for i, (_, pk) in signers.items()}
        self.hsms: Dict[int, Hsm] = {}
        for i in self.ids:
            store = BlockServer()
            replica = LogReplica(i, cfg.N, signers[i][0], self.signer_pks, cfg.audit_count,
                                 cfg.f_live, cfg.chunk_mode, Random(f"{cfg.seed}/audit/{i}"),
                                 cfg.gc_bound, self.scheme)
            hsm = Hsm(i, self.params, self.bloom, store, Random(f"{cfg.seed}/hsm/{i}"), replica,
                      cfg.guess_limit)
            self.provider.stores[i] = store
            self.provider.hsms[i] = hsm
            self.hsms[i] = hsm
        self.mpk_epoch = 0
        self._publish_mpk()
        self.epoch_results: List[EpochResult] = []
        self.adoption_violations: List[Tuple[int, int]] = []
        self._client_counter = 0

    @property
    def ids(self) -> range:
        return range(1, self.cfg.N + 1)

    def _publish_mpk(self) -> None:
        self.mpk = lhe.MasterPublicKey([self.hsms[i].punc_pk for i in self.ids], PUNC)
        for h in self.hsms.values():
            h.directory = self.mpk.fingerprints

    def client_rng(self, user: bytes) -> Random:
        self._client_counter += 1
        return Random(f"{self.cfg.seed}/client/{user.hex()}/{self._client_counter}")

    def client(self, user) -> Client:
        return Client(user.encode() if isinstance(user, str) else user, self)

    # -- log epochs
    def _deliver(self, hsm_id: int, verb: str, payload):
        hsm = self.hsms[hsm_id]
        return self.router.call("provider", hsm_name(hsm_id), f"log-{verb}", payload,
                                lambda p: hsm.handle_log(verb, p))

    def run_epoch(self, overwrite: Optional[Tuple[bytes, bytes]] = None,
                  forge_chunk: Optional[int] = None) -> EpochResult:
        """One log epoch over all HSMs the provider believes are up."""
        before = {i: len(h.log.adoptions) for i, h in self.hsms.items()}
        result = run_epoch(self.provider.log, list(self.ids), self._deliver, self.signer_pks,
                           self.cfg.N, self.cfg.f_live, self.cfg.chunk_mode, self.scheme,
                           overwrite=overwrite, forge_chunk=forge_chunk)
        self.epoch_results.append(result)
        self._check_adoptions(before)
        self.router.note("provider", "epoch", epoch=result.epoch, status=result.status,
                         restarts=result.restarts, rejections=len(result.rejections))
        return result

    def _check_adoptions(self, before: Dict[int, int]) -> None:
        """Safety: every new adoption must continue the HSM's previous digest."""
        for i, h in self.hsms.items():
            log = h.log.adoptions
            for k in range(max(before[i], 1), len(log)):
                if log[k][1] != log[k - 1][2]:
                    self.adoption_violations.append((i, log[k][0]))

    def forge_epoch(self, victim_id: Optional[bytes] = None) -> EpochResult:
        """Adversarial provider: overwrite an existing log value during an epoch."""
        entries = self.provider.log.tree.entries
        if victim_id is None:
            if not entries:
                raise ValueError("log is empty; nothing to overwrite")
            victim_id = entries[0][0]
        return self.run_epoch(overwrite=(victim_id, b"forged-value"))

    def gc(self) -> Dict[int, bool]:
        epoch_before = self.provider.log.epoch
        self.provider.attempts = {}
        self.provider._fork = None
        out = garbage_collect(self.provider.log, list(self.ids), self._deliver)
        self.router.note("provider", "gc", epoch=epoch_before + 1,
                         refused=sorted(i for i, ok in out.items() if not ok))
        return out

    # -- faults and compromise
    def fail_hsm(self, i: int) -> None:
        self.router.down.add(hsm_name(i))
        self.router.note("harness", "fail-hsm", hsm=i)

    def revive_hsm(self, i: int) -> None:
        self.router.down.discard(hsm_name(i))
        self.router.note("harness", "revive-hsm", hsm=i)
        try:
            self._deliver(i, "catchup", self.provider.log.decisions_after(self.hsms[i].log.epoch))
        except Unreachable:
            pass

    def compromise(self, ids: Iterable[int]) -> Dict[int, HsmSecrets]:
        ids = sorted(set(ids))
        self.router.note("harness", "compromise", hsms=ids)
        return {i: self.hsms[i].export_secrets() for i in ids}

    def rotate_hsm(self, i: int) -> None:
        """Rotate HSM ``i``'s puncturable key; backups under the old key stop decrypting."""
        store = BlockServer()
        self.hsms[i].rotate(store)
        self.provider.stores[i] = store
        self.mpk_epoch = max(self.mpk_epoch, self.hsms[i].punc_sk.epoch_id)
        self._publish_mpk()

    def puncture_order_ok(self) -> bool:
        """Every release on every HSM was preceded by a puncture of the same tag."""
        for h in self.hsms.values():
            punctured = set()
            for kind, tag in h.events:
                if kind == "puncture":
                    punctured.add(tag)
                elif kind == "release" and tag not in punctured:
                    return False
        return True
