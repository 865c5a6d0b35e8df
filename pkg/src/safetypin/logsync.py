"""Chunked epoch protocol that moves the HSMs' log digest forward.

The provider splits an epoch's insertions into one chunk per HSM, publishes
the intermediate digests and per-chunk extension proofs under a Merkle root
``R``, and every online HSM audits ``C`` chunks before signing
``(d, d', R, epoch)``. HSMs adopt ``d'`` only on a valid combined signature
from every HSM in the declared online set.
"""

import math
from dataclasses import dataclass, field
from random import Random
from typing import Callable, Dict, List, Optional, Sequence, Set, Tuple

from .authlog import (EMPTY_DIGEST, ExtensionProof, LogTree, does_extend)
from .crypto.aggsig import DEFAULT_SCHEME
from .crypto.encoding import DecodeError, Reader, lp, u32, u64
from .crypto.hashing import hash_domain, sample_indices

EPOCH_PREFIX = b"safetypin/epoch"
MAX_RESTARTS = 16


class AuditRejected(Exception):
    """An HSM refused to sign; ``reason`` is a short machine-readable code."""

    def __init__(self, reason: str, detail: str = ""):
        super().__init__(f"{reason}: {detail}" if detail else reason)
        self.reason = reason


class EpochAborted(RuntimeError):
    pass


class HsmRefusal(RuntimeError):
    pass


# ------------------------------------------------------------ chunk Merkle tree

def proof_hash(proof: bytes) -> bytes:
    return hash_domain(b"safetypin/log-leaf", [b"chunk-proof", proof])


def chunk_leaf(j: int, d: bytes, proof_digest: bytes) -> bytes:
    """Leaf ``j`` of R commits to ``d_j`` and the hash of ``pi_j``."""
    return hash_domain(b"safetypin/log-leaf", [b"epoch-chunk", u32(j), d, proof_digest])


def _merkle_node(left: bytes, right: bytes) -> bytes:
    return hash_domain(b"safetypin/log-node", [b"chunk-node", left, right])


def _split_point(n: int) -> int:
    k = 1
    while k * 2 < n:
        k *= 2
    return k


class _MerkleCache:
    """Subtree hashes of one leaf list, each computed once."""

    def __init__(self, leaves: Sequence[bytes]):
        self.leaves = list(leaves)
        self.memo: Dict[Tuple[int, int], bytes] = {}

    def root(self, lo: int = 0, hi: Optional[int] = None) -> bytes:
        hi = len(self.leaves) if hi is None else hi
        if hi - lo == 1:
            return self.leaves[lo]
        key = (lo, hi)
        if key not in self.memo:
            k = lo + _split_point(hi - lo)
            self.memo[key] = _merkle_node(self.root(lo, k), self.root(k, hi))
        return self.memo[key]

    def path(self, index: int) -> List[bytes]:
        """Sibling hashes from the root downwards."""
        out = []
        lo, hi = 0, len(self.leaves)
        while hi - lo > 1:
            k = lo + _split_point(hi - lo)
            if index < k:
                out.append(self.root(k, hi))
                hi = k
            else:
                out.append(self.root(lo, k))
                lo = k
        return out


def merkle_root(leaves: Sequence[bytes]) -> bytes:
    return _MerkleCache(leaves).root()


def merkle_path(leaves: Sequence[bytes], index: int) -> List[bytes]:
    """Sibling hashes from the root downwards."""
    return _MerkleCache(leaves).path(index)


def merkle_verify(root: bytes, leaf: bytes, index: int, count: int, path: Sequence[bytes]) -> bool:
    if not 0 <= index < count:
        return False
    sides = []
    n = count
    while n > 1:
        k = _split_point(n)
        if index < k:
            sides.append(True)
            n = k
        else:
            sides.append(False)
            index -= k
            n -= k
    if len(sides) != len(path):
        return False
    h = leaf
    for went_left, sib in zip(reversed(sides), reversed(path)):
        h = _merkle_node(h, sib) if went_left else _merkle_node(sib, h)
    return h == root


# ------------------------------------------------------------------ messages

def _ids(ids) -> bytes:
    ids = sorted(ids)
    return u32(len(ids)) + b"".join(u32(i) for i in ids)


def _read_ids(r: Reader) -> Tuple[int, ...]:
    return tuple(r.u32() for _ in range(r.u32()))


def epoch_message(epoch: int, d: bytes, d_new: bytes, root: bytes) -> bytes:
    return EPOCH_PREFIX + d + d_new + root + u64(epoch)


@dataclass(frozen=True)
class PrepareEpoch:
    epoch: int
    old_digest: bytes
    new_digest: bytes
    root: bytes
    n_chunks: int
    online: Tuple[int, ...]

    def to_bytes(self) -> bytes:
        return (b"PREP" + u64(self.epoch) + self.old_digest + self.new_digest + self.root
                + u32(self.n_chunks) + _ids(self.online))

    @classmethod
    def from_bytes(cls, data: bytes) -> "PrepareEpoch":
        r = Reader(data)
        if r.take(4) != b"PREP":
            raise DecodeError("not a PrepareEpoch")
        out = cls(r.u64(), r.take(32), r.take(32), r.take(32), r.u32(), _read_ids(r))
        r.done()
        return out


@dataclass(frozen=True)
class AuditRequest:
    hsm_id: int
    chunks: Tuple[int, ...]

    def to_bytes(self) -> bytes:
        return b"AREQ" + u32(self.hsm_id) + u32(len(self.chunks)) + b"".join(u32(c) for c in self.chunks)

    @classmethod
    def from_bytes(cls, data: bytes) -> "AuditRequest":
        r = Reader(data)
        if r.take(4) != b"AREQ":
            raise DecodeError("not an AuditRequest")
        hsm_id = r.u32()
        out = cls(hsm_id, tuple(r.u32() for _ in range(r.u32())))
        r.done()
        return out


@dataclass(frozen=True)
class ChunkOpening:
    """Chunk ``j``: ``d_{j-1}``, ``d_j``, proof ``pi_j`` and both leaves' paths in R."""
    index: int
    prev_digest: bytes
    prev_proof_hash: bytes
    prev_path: Tuple[bytes, ...]
    digest: bytes
    proof: bytes
    path: Tuple[bytes, ...]

    def to_bytes(self) -> bytes:
        return (u32(self.index) + self.prev_digest + self.prev_proof_hash + u32(len(self.prev_path)) + b"".join(self.prev_path)
                + self.digest + lp(self.proof) + u32(len(self.path)) + b"".join(self.path))

    @classmethod
    def read(cls, r: Reader) -> "ChunkOpening":
        index = r.u32()
        prev = r.take(32)
        prev_ph = r.take(32)
        prev_path = tuple(r.take(32) for _ in range(r.u32()))
        d = r.take(32)
        proof = r.lp()
        path = tuple(r.take(32) for _ in range(r.u32()))
        return cls(index, prev, prev_ph, prev_path, d, proof, path)


@dataclass(frozen=True)
class AuditResponse:
    openings: Tuple[ChunkOpening, ...]

    def to_bytes(self) -> bytes:
        return b"ARSP" + u32(len(self.openings)) + b"".join(o.to_bytes() for o in self.openings)

    @classmethod
    def from_bytes(cls, data: bytes) -> "AuditResponse":
        r = Reader(data)
        if r.take(4) != b"ARSP":
            raise DecodeError("not an AuditResponse")
        out = cls(tuple(ChunkOpening.read(r) for _ in range(r.u32())))
        r.done()
        return out


@dataclass(frozen=True)
class SignatureSubmit:
    hsm_id: int
    signature: bytes

    def to_bytes(self) -> bytes:
        return b"SSUB" + u32(self.hsm_id) + lp(self.signature)

    @classmethod
    def from_bytes(cls, data: bytes) -> "SignatureSubmit":
        r = Reader(data)
        if r.take(4) != b"SSUB":
            raise DecodeError("not a SignatureSubmit")
        out = cls(r.u32(), r.lp())
        r.done()
        return out


@dataclass(frozen=True)
class EpochDecision:
    """The Finalize broadcast: the signed tuple, who signed, and the combined signature."""
    epoch: int
    old_digest: bytes
    new_digest: bytes
    root: bytes
    online: Tuple[int, ...]
    combined: bytes = field(repr=False)

    @property
    def message(self) -> bytes:
        return epoch_message(self.epoch, self.old_digest, self.new_digest, self.root)

    def to_bytes(self) -> bytes:
        return (b"FINL" + u64(self.epoch) + self.old_digest + self.new_digest + self.root
                + _ids(self.online) + lp(self.combined))

    @classmethod
    def from_bytes(cls, data: bytes) -> "EpochDecision":
        r = Reader(data)
        if r.take(4) != b"FINL":
            raise DecodeError("not a Finalize")
        out = cls(r.u64(), r.take(32), r.take(32), r.take(32), _read_ids(r), r.lp())
        r.done()
        return out


@dataclass(frozen=True)
class Recheck:
    """Deterministic variant: audit the chunks owned by HSMs that failed."""
    failed: Tuple[int, ...]
    level: int
    orphans: Tuple[int, ...]


# ------------------------------------------------------------ provider side

@dataclass
class EpochUpdate:
    epoch: int
    old_digest: bytes
    new_digest: bytes
    chunks: List[List[Tuple[bytes, bytes]]]
    digests: List[bytes]              # d_0 .. d_N
    proofs: List[bytes]               # pi_0 (empty) .. pi_N
    root: bytes
    new_tree: LogTree = field(repr=False)
    forged: bool = False
    forged_chunks: Set[int] = field(default_factory=set)
    _merkle: Optional[_MerkleCache] = field(default=None, repr=False, compare=False)

    @property
    def n_chunks(self) -> int:
        return len(self.chunks)

    def leaves(self) -> List[bytes]:
        return list(self._tree().leaves)

    def _tree(self) -> _MerkleCache:
        if self._merkle is None:
            self._merkle = _MerkleCache([chunk_leaf(j, self.digests[j], proof_hash(self.proofs[j]))
                                         for j in range(len(self.digests))])
        return self._merkle

    def open(self, indices: Sequence[int]) -> AuditResponse:
        tree = self._tree()
        out = []
        for j in indices:
            out.append(ChunkOpening(j, self.digests[j - 1], proof_hash(self.proofs[j - 1]),
                                    tuple(tree.path(j - 1)), self.digests[j], self.proofs[j],
                                    tuple(tree.path(j))))
        return AuditResponse(tuple(out))


def split_chunks(inserts: Sequence, n: int) -> List[list]:
    """``n`` chunks of ``len // n`` items; the remainder goes into the last one."""
    size = len(inserts) // n
    chunks = [list(inserts[i * size:(i + 1) * size]) for i in range(n - 1)]
    chunks.append(list(inserts[(n - 1) * size:]))
    return chunks


def provider_prepare(log: LogTree, inserts: Sequence[Tuple[bytes, bytes]], n_chunks: int,
                     epoch: int = 1, overwrite: Optional[Tuple[bytes, bytes]] = None,
                     forge_chunk: Optional[int] = None) -> EpochUpdate:
    """Build the epoch update without modifying ``log``.

    ``overwrite=(id, val)`` is the adversary hook: the value of an existing id
    is silently replaced inside chunk ``forge_chunk`` (default: the last),
    and the update is flagged as forged for the test harness.
    """
    if n_chunks < 1:
        raise ValueError("need at least one chunk")
    tree = log.copy()
    chunks = split_chunks(list(inserts), n_chunks)
    digests = [tree.digest]
    proofs = [b""]
    forge_at = (forge_chunk or n_chunks) if overwrite else None
    for j, chunk in enumerate(chunks, start=1):
        proof = ExtensionProof(tuple(tree.insert(i, v) for i, v in chunk))
        if j == forge_at:
            tree.forge_overwrite(*overwrite)
        digests.append(tree.digest)
        proofs.append(proof.to_bytes())
    leaves = [chunk_leaf(j, digests[j], proof_hash(proofs[j])) for j in range(len(digests))]
    return EpochUpdate(epoch, digests[0], digests[-1], chunks, digests, proofs,
                       merkle_root(leaves), tree, forged=overwrite is not None,
                       forged_chunks={forge_at} if overwrite else set())


# --------------------------------------------------------------- HSM side

def hsm_choose_chunks(n_chunks: int, count: int, rng: Optional[Random] = None,
                      root: Optional[bytes] = None, node_id: Optional[int] = None,
                      level: int = 0, population: Optional[Sequence[int]] = None) -> List[int]:
    """Pick ``count`` chunk indices in ``1..n_chunks``, with replacement.

    Random mode draws from the HSM's private ``rng``; deterministic mode
    (``root`` and ``node_id`` given) expands ``H(R, node_id, level)`` so that
    anyone can recompute every HSM's assignment. ``population`` restricts the
    draw to a sub-list (used when re-auditing failed HSMs' chunks).
    """
    pool = list(population) if population is not None else list(range(1, n_chunks + 1))
    if not pool:
        return []
    if root is not None:
        idx = sample_indices(b"safetypin/chunk-assign", [root, u32(node_id), u32(level)],
                             len(pool), count)
        return [pool[i] for i in idx]
    if rng is None:
        raise ValueError("random mode needs an rng")
    return [pool[rng.randrange(len(pool))] for _ in range(count)]


def hsm_audit(d_held: bytes, prep: PrepareEpoch, requested: Sequence[int],
              response: AuditResponse, stats: Optional[Dict[str, int]] = None) -> None:
    """Check every requested chunk; raise AuditRejected on the first problem."""
    if prep.old_digest != d_held:
        raise AuditRejected("endpoint-mismatch", "old digest is not the one held")
    by_index = {o.index: o for o in response.openings}
    count = prep.n_chunks + 1
    for j in requested:
        o = by_index.get(j)
        if o is None or not 1 <= j <= prep.n_chunks:
            raise AuditRejected("bad-inclusion", f"chunk {j} not opened")
        prev_leaf = chunk_leaf(j - 1, o.prev_digest, o.prev_proof_hash)
        ok_prev = merkle_verify(prep.root, prev_leaf, j - 1, count, o.prev_path)
        ok_cur = merkle_verify(prep.root, chunk_leaf(j, o.digest, proof_hash(o.proof)), j, count, o.path)
        if not (ok_prev and ok_cur):
            raise AuditRejected("bad-inclusion", f"chunk {j} not under R")
        if stats is not None:
            stats["chunks_verified"] = stats.get("chunks_verified", 0) + 1
        if not does_extend(o.prev_digest, o.digest, o.proof):
            raise AuditRejected("bad-extension", f"chunk {j}")
        if j == 1 and o.prev_digest != prep.old_digest:
            raise AuditRejected("endpoint-mismatch", "first chunk does not start at d")
        if j == prep.n_chunks and o.digest != prep.new_digest:
            raise AuditRejected("endpoint-mismatch", "last chunk does not end at d'")


def online_threshold(n_hsms: int, f_live: float) -> int:
    """Smallest declared online set an HSM will sign for."""
    return math.ceil((1 - f_live) * n_hsms - 1e-9)


class StaleDigest(Exception):
    """The HSM missed finalized epochs and must be sent the decisions first."""

    def __init__(self, held_epoch: int):
        super().__init__(f"replica is at epoch {held_epoch}")
        self.held_epoch = held_epoch


class LogReplica:
    """The log-related state and message handlers of one HSM."""

    def __init__(self, node_id: int, n_hsms: int, signer_sk, signer_pks: Dict[int, bytes],
                 audit_count: int = 16, f_live: float = 1 / 64, mode: str = "random",
                 rng: Optional[Random] = None, gc_bound: int = 4, scheme=DEFAULT_SCHEME,
                 honest: bool = True):
        if mode not in ("random", "deterministic"):
            raise ValueError(f"unknown chunk mode {mode!r}")
        self.node_id = node_id
        self.n_hsms = n_hsms
        self.signer_sk = signer_sk
        self.signer_pks = dict(signer_pks)
        self.audit_count = audit_count
        self.f_live = f_live
        self.mode = mode
        self.rng = rng or Random(node_id)
        self.gc_bound = gc_bound
        self.scheme = scheme
        self.honest = honest
        self.digest = EMPTY_DIGEST
        self.epoch = 0
        self.gc_counter = 0
        self.refusing = False
        self.stats = {"chunks_verified": 0, "signatures_verified": 0, "epochs": 0}
        self.adoptions: List[Tuple[int, bytes, bytes]] = []
        self._prep: Optional[PrepareEpoch] = None
        self._requested: List[int] = []
        self._pools: List[List[int]] = []
        self._failed_seen: Set[int] = set()

    # -- helpers
    def _check_live(self) -> None:
        if self.refusing:
            raise HsmRefusal(f"HSM {self.node_id} exhausted its garbage-collection budget")

    def _assignment(self, node_id: int, level: int) -> List[int]:
        return hsm_choose_chunks(self._prep.n_chunks, self.audit_count, root=self._prep.root,
                                 node_id=node_id, level=level, population=self._pools[level])

    def _audit(self, response: AuditResponse) -> None:
        if not self.honest:
            return
        before = self.stats["chunks_verified"]
        hsm_audit(self.digest, self._prep, self._requested, response, self.stats)
        assert self.stats["chunks_verified"] - before == len(self._requested)

    def _sign(self) -> SignatureSubmit:
        p = self._prep
        return SignatureSubmit(self.node_id, self.scheme.sign(
            self.signer_sk, epoch_message(p.epoch, p.old_digest, p.new_digest, p.root)))

    # -- handlers
    def handle_prepare(self, prep: PrepareEpoch) -> AuditRequest:
        self._check_live()
        if prep.epoch != self.epoch + 1 or prep.old_digest != self.digest:
            if prep.epoch > self.epoch + 1:
                raise StaleDigest(self.epoch)
            raise AuditRejected("endpoint-mismatch", "prepare does not continue the held digest")
        if prep.n_chunks != self.n_hsms:
            raise AuditRejected("bad-inclusion", "chunk count differs from cluster size")
        if len(set(prep.online)) < online_threshold(self.n_hsms, self.f_live):
            raise HsmRefusal("declared online set is too small")
        if self.node_id not in prep.online:
            raise AuditRejected("endpoint-mismatch", "not in the declared online set")
        self._prep = prep
        self._pools = [list(range(1, prep.n_chunks + 1))]
        self._failed_seen = set()
        if self.mode == "deterministic":
            self._requested = self._assignment(self.node_id, 0)
        else:
            self._requested = hsm_choose_chunks(prep.n_chunks, self.audit_count, rng=self.rng)
        return AuditRequest(self.node_id, tuple(sorted(set(self._requested))))

    def handle_response(self, response: AuditResponse) -> Optional[SignatureSubmit]:
        """Audit; random mode signs right away, deterministic mode waits for a sign request."""
        self._check_live()
        if self._prep is None:
            raise AuditRejected("endpoint-mismatch", "no epoch in progress")
        self._audit(response)
        return self._sign() if self.mode == "random" else None

    def handle_recheck(self, failed: Sequence[int], level: int) -> AuditRequest:
        """Deterministic variant: take over a share of the failed HSMs' chunks."""
        self._check_live()
        if self._prep is None or self.mode != "deterministic" or level != len(self._pools):
            raise AuditRejected("endpoint-mismatch", "unexpected recheck")
        failed = set(failed)
        if self.node_id in failed or failed & self._failed_seen or not failed <= set(self._prep.online):
            raise AuditRejected("endpoint-mismatch", "inconsistent failure report")
        orphans: Set[int] = set()
        for f in failed:
            for lvl in range(level):
                orphans.update(self._assignment(f, lvl))
        self._failed_seen |= failed
        self._pools.append(sorted(orphans))
        self._requested = self._assignment(self.node_id, level)
        return AuditRequest(self.node_id, tuple(sorted(set(self._requested))))

    def handle_sign_request(self, online: Sequence[int]) -> SignatureSubmit:
        self._check_live()
        if self._prep is None or self.mode != "deterministic":
            raise AuditRejected("endpoint-mismatch", "unexpected sign request")
        missing = set(self._prep.online) - set(online)
        if missing != self._failed_seen:
            raise AuditRejected("endpoint-mismatch", "failed HSMs were not re-audited")
        return self._sign()

    def _verify_decision(self, decision: EpochDecision) -> bool:
        online = set(decision.online)
        if len(online) < online_threshold(self.n_hsms, self.f_live):
            return False
        if not online <= set(self.signer_pks):
            return False
        self.stats["signatures_verified"] += 1
        pks = [self.signer_pks[i] for i in sorted(online)]
        return self.scheme.verify(pks, decision.message, decision.combined)

    def handle_finalize(self, decision: EpochDecision) -> bool:
        self._check_live()
        p = self._prep
        if p is None or (decision.epoch, decision.old_digest, decision.new_digest, decision.root) != \
                (p.epoch, p.old_digest, p.new_digest, p.root):
            return False
        expected = set(p.online) - self._failed_seen
        if set(decision.online) != expected or not self._verify_decision(decision):
            return False
        self._adopt(decision)
        return True

    def handle_catchup(self, decisions: Sequence[EpochDecision]) -> bool:
        """Adopt finalized epochs this HSM missed while offline."""
        self._check_live()
        for dec in decisions:
            if dec.epoch <= self.epoch:
                continue
            if dec.epoch != self.epoch + 1 or dec.old_digest != self.digest or not self._verify_decision(dec):
                return False
            self._adopt(dec)
        return True

    def _adopt(self, decision: EpochDecision) -> None:
        self.adoptions.append((decision.epoch, self.digest, decision.new_digest))
        self.digest = decision.new_digest
        self.epoch = decision.epoch
        self.stats["epochs"] += 1
        self._prep = None

    def handle_gc(self, epoch: int) -> bool:
        self._check_live()
        if self.gc_counter >= self.gc_bound:
            self.refusing = True
            raise HsmRefusal(f"HSM {self.node_id} exhausted its garbage-collection budget")
        self.gc_counter += 1
        self.adoptions.append((epoch, self.digest, EMPTY_DIGEST))
        self.digest = EMPTY_DIGEST
        self.epoch = epoch
        self._prep = None
        return True


class LogServer:
    """Provider-side log: the tree, pending inserts and finalized epoch history."""

    def __init__(self):
        self.tree = LogTree()
        self.pending: List[Tuple[bytes, bytes]] = []
        self.epoch = 0
        self.decisions: List[EpochDecision] = []
        self.checkpoints: List[Tuple[int, bytes]] = [(0, EMPTY_DIGEST)]
        self.archives: List[Tuple[List[Tuple[bytes, bytes]], List[Tuple[int, bytes]]]] = []

    @property
    def digest(self) -> bytes:
        return self.tree.digest

    def submit(self, id_: bytes, val: bytes) -> bool:
        """Queue an insertion; refuse ids already in the log or queue."""
        if id_ in self.tree or any(i == id_ for i, _ in self.pending):
            return False
        self.pending.append((bytes(id_), bytes(val)))
        return True

    def prepare(self, n_chunks: int, overwrite: Optional[Tuple[bytes, bytes]] = None,
                forge_chunk: Optional[int] = None) -> EpochUpdate:
        return provider_prepare(self.tree, self.pending, n_chunks, self.epoch + 1,
                                overwrite=overwrite, forge_chunk=forge_chunk)

    def commit(self, update: EpochUpdate, decision: EpochDecision) -> None:
        self.tree = update.new_tree
        self.pending = self.pending[sum(len(c) for c in update.chunks):]
        self.epoch = decision.epoch
        self.decisions.append(decision)
        self.checkpoints.append((len(self.tree.entries), self.tree.digest))

    def decisions_after(self, epoch: int) -> List[EpochDecision]:
        return [d for d in self.decisions if d.epoch > epoch]

    def prove_includes(self, id_: bytes, val: bytes):
        return self.tree.prove_includes(id_, val)

    def garbage_collect(self) -> int:
        """Archive the current log and start an empty one; returns the GC epoch number."""
        self.archives.append((list(self.tree.entries), list(self.checkpoints)))
        self.tree = LogTree()
        self.pending = []
        self.epoch += 1
        self.decisions = []
        self.checkpoints = [(0, EMPTY_DIGEST)]
        return self.epoch


# ------------------------------------------------------------------ driver

class Unreachable(Exception):
    """Raised by a ``deliver`` callable when the target HSM is down."""


Deliver = Callable[[int, str, object], object]


def direct_delivery(replicas: Dict[int, LogReplica]) -> Deliver:
    def deliver(hsm_id: int, verb: str, payload):
        r = replicas[hsm_id]
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
        raise ValueError(verb)
    return deliver


@dataclass
class EpochResult:
    status: str                                  # finalized / rejected / aborted
    epoch: int
    decision: Optional[EpochDecision] = None
    restarts: int = 0
    rejections: Dict[int, str] = field(default_factory=dict)
    failed: Set[int] = field(default_factory=set)
    recheck_levels: int = 0


def epoch_finalize(update: EpochUpdate, signatures: Dict[int, Optional[SignatureSubmit]],
                   online: Sequence[int], pks: Dict[int, bytes],
                   scheme=DEFAULT_SCHEME) -> Optional[EpochDecision]:
    """Combine the online set's signatures, or return None to signal a restart."""
    online = sorted(online)
    if any(signatures.get(i) is None for i in online):
        return None
    combined = scheme.combine([signatures[i].signature for i in online])
    decision = EpochDecision(update.epoch, update.old_digest, update.new_digest, update.root,
                             tuple(online), combined)
    if not scheme.verify([pks[i] for i in online], decision.message, combined):
        return None
    return decision


def run_epoch(server: LogServer, hsm_ids: Sequence[int], deliver: Deliver, pks: Dict[int, bytes],
              n_hsms: int, f_live: float = 1 / 64, mode: str = "random", scheme=DEFAULT_SCHEME,
              overwrite: Optional[Tuple[bytes, bytes]] = None, forge_chunk: Optional[int] = None,
              max_restarts: int = MAX_RESTARTS) -> EpochResult:
    """Drive one epoch to a decision.

    ``hsm_ids`` are the HSMs the provider believes are up; ``deliver``
    raises Unreachable for those that are not.
    """
    update = server.prepare(n_hsms, overwrite=overwrite, forge_chunk=forge_chunk)
    online = set(hsm_ids)
    threshold = online_threshold(n_hsms, f_live)
    failed_total: Set[int] = set()
    restarts = 0
    while True:
        if len(online) < threshold:
            return EpochResult("aborted", update.epoch, restarts=restarts, failed=failed_total)
        prep = PrepareEpoch(update.epoch, update.old_digest, update.new_digest, update.root,
                            update.n_chunks, tuple(sorted(online)))
        failed: Set[int] = set()
        rejections: Dict[int, str] = {}
        sigs: Dict[int, Optional[SignatureSubmit]] = {}

        def call(i, verb, payload):
            try:
                return deliver(i, verb, payload)
            except (Unreachable, StaleDigest):
                failed.add(i)
            except AuditRejected as e:
                rejections[i] = e.reason
            except HsmRefusal:
                rejections[i] = "refused"
            return None

        requests = {}
        for i in sorted(online):
            try:
                requests[i] = deliver(i, "prepare", prep)
            except StaleDigest as e:
                call(i, "catchup", server.decisions_after(e.held_epoch))
                req = call(i, "prepare", prep)
                if req is not None:
                    requests[i] = req
            except (Unreachable, AuditRejected, HsmRefusal) as e:
                if isinstance(e, Unreachable):
                    failed.add(i)
                else:
                    rejections[i] = getattr(e, "reason", "refused")
        for i, req in requests.items():
            sigs[i] = call(i, "audit", update.open(req.chunks))
        if rejections:
            return EpochResult("rejected", update.epoch, restarts=restarts, rejections=rejections,
                               failed=failed_total | failed)
        level = 0
        if mode == "deterministic":
            survivors = set(requests) - failed
            newly = set(failed)
            while newly:
                level += 1
                if len(survivors) < threshold:
                    return EpochResult("aborted", update.epoch, restarts=restarts,
                                       failed=failed_total | failed, recheck_levels=level)
                failed_before = set(failed)
                for i in sorted(survivors):
                    req = call(i, "recheck", (tuple(sorted(newly)), level))
                    if req is not None and i not in failed:
                        call(i, "audit", update.open(req.chunks))
                if rejections:
                    return EpochResult("rejected", update.epoch, restarts=restarts,
                                       rejections=rejections, failed=failed_total | failed,
                                       recheck_levels=level)
                newly = failed - failed_before
                survivors -= newly
            sigs = {}
            failed_before = set(failed)
            for i in sorted(survivors):
                sigs[i] = call(i, "sign", tuple(sorted(survivors)))
            if rejections:
                return EpochResult("rejected", update.epoch, restarts=restarts, rejections=rejections,
                                   failed=failed_total | failed, recheck_levels=level)
            online = set(survivors)
            failed_total |= failed
            decision = None if failed - failed_before else \
                epoch_finalize(update, sigs, sorted(online), pks, scheme)
        else:
            failed_total |= failed
            decision = None if failed else epoch_finalize(update, sigs, sorted(online), pks, scheme)
        if decision is None:
            restarts += 1
            online -= failed
            if restarts > max_restarts:
                return EpochResult("aborted", update.epoch, restarts=restarts, failed=failed_total)
            continue
        for i in sorted(online):
            try:
                deliver(i, "finalize", decision)
            except (Unreachable, HsmRefusal):
                pass
        server.commit(update, decision)
        return EpochResult("finalized", update.epoch, decision, restarts=restarts,
                           failed=failed_total, recheck_levels=level)


def garbage_collect(server: LogServer, hsm_ids: Sequence[int], deliver: Deliver) -> Dict[int, bool]:
    """Reset the log; returns per-HSM acceptance (False for refusal or unreachable)."""
    epoch = server.garbage_collect()
    out = {}
    for i in hsm_ids:
        try:
            out[i] = bool(deliver(i, "gc", epoch))
        except (HsmRefusal, Unreachable):
            out[i] = False
    return out


# ------------------------------------------------------- audit probability

def audit_miss_probability(n_hsms: int, count: int, f_secret: float) -> float:
    """Chance that no honest HSM samples one given forged chunk: ``(1-1/N)^((1-2f)NC)``."""
    return (1 - 1 / n_hsms) ** ((1 - 2 * f_secret) * n_hsms * count)


def honest_auditors(n_hsms: int, f_secret: float) -> int:
    return round((1 - 2 * f_secret) * n_hsms)


def simulate_audit_miss(n_hsms: int, count: int, f_secret: float, trials: int, rng: Random) -> float:
    """Monte Carlo of the randomized check: fraction of trials in which every
    honest HSM's random chunk sample avoids the forged chunk."""
    honest = honest_auditors(n_hsms, f_secret)
    misses = 0
    for _ in range(trials):
        forged = rng.randrange(1, n_hsms + 1)
        if all(forged not in hsm_choose_chunks(n_hsms, count, rng=rng) for _ in range(honest)):
            misses += 1
    return misses / trials


def simulate_full_coverage(n_hsms: int, count: int, f_secret: float, trials: int, rng: Random) -> float:
    """Fraction of trials in which the honest HSMs' samples cover every chunk."""
    honest = honest_auditors(n_hsms, f_secret)
    covered = 0
    for _ in range(trials):
        seen = set()
        for _ in range(honest):
            seen.update(hsm_choose_chunks(n_hsms, count, rng=rng))
        covered += len(seen) == n_hsms
    return covered / trials


def full_coverage_estimate(n_hsms: int, count: int, f_secret: float) -> float:
    return 1 - n_hsms * (1 - 1 / n_hsms) ** ((1 - 2 * f_secret) * n_hsms * count)
