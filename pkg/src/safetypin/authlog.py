"""Merkle authenticated dictionary over (id, val) entries.

The log tree is a treap: a binary search tree ordered by ``id`` whose heap
priorities are hashes of the ids. The shape therefore depends only on the
set of entries, every insertion touches exactly the nodes on the search path
for the new id, and a verifier holding just that path (with the off-path
children as opaque hashes) can replay the insertion itself.

Node hash: ``H_node(left, right, len(id), id, len(val), val)``; a node with
no children uses ``H_leaf(len(id), id, len(val), val)``. An absent child and
the empty tree are both 32 zero bytes.
"""

from dataclasses import dataclass
from typing import Iterable, List, Optional, Sequence, Tuple, Union

from .crypto.encoding import DecodeError, Reader, lp, u32
from .crypto.hashing import hash_domain

EMPTY_DIGEST = bytes(32)
HASH_SIZE = 32


class LogError(ValueError):
    pass


class DuplicateIdError(LogError):
    pass


class PartialTreeError(LogError):
    """An insertion needed a node the proof did not supply."""


def node_hash(left: bytes, right: bytes, id_: bytes, val: bytes) -> bytes:
    if left == EMPTY_DIGEST and right == EMPTY_DIGEST:
        return hash_domain(b"safetypin/log-leaf", [u32(len(id_)), id_, u32(len(val)), val])
    return hash_domain(b"safetypin/log-node", [left, right, u32(len(id_)), id_, u32(len(val)), val])


def priority(id_: bytes) -> Tuple[bytes, bytes]:
    return hash_domain(b"safetypin/log-leaf", [b"priority", id_]), id_


@dataclass(frozen=True)
class Stub:
    """A subtree known only by its hash."""
    hash: bytes


class Node:
    __slots__ = ("id", "val", "left", "right", "hash", "_prio")

    def __init__(self, id_: bytes, val: bytes, left, right, prio=None):
        self.id = id_
        self.val = val
        self.left = left
        self.right = right
        self._prio = prio
        self.hash = node_hash(subtree_hash(left), subtree_hash(right), id_, val)

    @property
    def prio(self) -> Tuple[bytes, bytes]:
        # Only insertion needs priorities; proof replay never asks.
        if self._prio is None:
            self._prio = priority(self.id)
        return self._prio

    def with_children(self, left, right) -> "Node":
        return Node(self.id, self.val, left, right, self._prio)


Tree = Union[Node, Stub, None]


def subtree_hash(t: Tree) -> bytes:
    return EMPTY_DIGEST if t is None else t.hash


def _need(t: Tree) -> Optional[Node]:
    if isinstance(t, Stub):
        raise PartialTreeError("insertion path leaves the supplied proof")
    return t


def tree_insert(t: Tree, id_: bytes, val: bytes) -> Node:
    """Functional treap insertion; raises DuplicateIdError if ``id_`` is present."""
    t = _need(t)
    if t is None:
        return Node(id_, val, None, None)
    if id_ == t.id:
        raise DuplicateIdError(id_)
    new_prio = priority(id_)
    if new_prio > t.prio:
        left, right = _split(t, id_)
        return Node(id_, val, left, right, new_prio)
    if id_ < t.id:
        return t.with_children(tree_insert(t.left, id_, val), t.right)
    return t.with_children(t.left, tree_insert(t.right, id_, val))


def _split(t: Tree, key: bytes) -> Tuple[Tree, Tree]:
    t = _need(t)
    if t is None:
        return None, None
    if key == t.id:
        raise DuplicateIdError(key)
    if t.id < key:
        lo, hi = _split(t.right, key)
        return t.with_children(t.left, lo), hi
    lo, hi = _split(t.left, key)
    return lo, t.with_children(hi, t.right)


# ---------------------------------------------------------------- proofs

@dataclass(frozen=True)
class PathStep:
    """One ancestor on a search path: its entry and the hash of the other child."""
    id: bytes
    val: bytes
    sibling: bytes


def _encode_steps(steps: Sequence[PathStep]) -> bytes:
    return u32(len(steps)) + b"".join(lp(s.id) + lp(s.val) + s.sibling for s in steps)


def _decode_steps(r: Reader) -> List[PathStep]:
    return [PathStep(r.lp(), r.lp(), r.take(HASH_SIZE)) for _ in range(r.u32())]


@dataclass(frozen=True)
class InclusionProof:
    path: Tuple[PathStep, ...]
    left: bytes
    right: bytes

    def to_bytes(self) -> bytes:
        return _encode_steps(self.path) + self.left + self.right

    @classmethod
    def from_bytes(cls, data: bytes) -> "InclusionProof":
        r = Reader(data)
        path = tuple(_decode_steps(r))
        left, right = r.take(HASH_SIZE), r.take(HASH_SIZE)
        r.done()
        return cls(path, left, right)


@dataclass(frozen=True)
class InsertProof:
    """Search path for ``id`` in the old tree, ending at an absent child."""
    id: bytes
    val: bytes
    path: Tuple[PathStep, ...]

    def neighbors(self) -> Tuple[Optional[bytes], Optional[bytes]]:
        """(id_left, id_right) in the old log; None stands for -inf / +inf."""
        lower = [s.id for s in self.path if s.id < self.id]
        upper = [s.id for s in self.path if s.id > self.id]
        return (max(lower) if lower else None, min(upper) if upper else None)


@dataclass(frozen=True)
class ExtensionProof:
    inserts: Tuple[InsertProof, ...]

    def size(self) -> int:
        """Number of path nodes carried, the O(inserts * log |L|) quantity."""
        return sum(len(p.path) for p in self.inserts)

    def to_bytes(self) -> bytes:
        out = [u32(len(self.inserts))]
        for p in self.inserts:
            out.append(lp(p.id) + lp(p.val) + _encode_steps(p.path))
        return b"".join(out)

    @classmethod
    def from_bytes(cls, data: bytes) -> "ExtensionProof":
        r = Reader(data)
        inserts = tuple(InsertProof(r.lp(), r.lp(), tuple(_decode_steps(r))) for _ in range(r.u32()))
        r.done()
        return cls(inserts)


def _as_stub(h: bytes) -> Tree:
    return None if h == EMPTY_DIGEST else Stub(h)


def _rebuild_path(id_: bytes, path: Sequence[PathStep], bottom: Tree) -> Optional[Tree]:
    """Fold a root-first search path back up over ``bottom``.

    Returns None if the path violates BST order or passes through ``id_``.
    """
    lo, hi = None, None
    for step in path:
        if (lo is not None and step.id <= lo) or (hi is not None and step.id >= hi):
            return None
        if step.id == id_:
            return None
        if id_ < step.id:
            hi = step.id
        else:
            lo = step.id
    t = bottom
    for step in reversed(path):
        sib = _as_stub(step.sibling)
        if id_ < step.id:
            t = Node(step.id, step.val, t, sib)
        else:
            t = Node(step.id, step.val, sib, t)
    return t


def does_include(d: bytes, id_: bytes, val: bytes, proof) -> bool:
    if isinstance(proof, (bytes, bytearray)):
        try:
            proof = InclusionProof.from_bytes(proof)
        except DecodeError:
            return False
    if not isinstance(proof, InclusionProof):
        return False
    target = Node(id_, val, _as_stub(proof.left), _as_stub(proof.right))
    root = _rebuild_path(id_, proof.path, target)
    return root is not None and root.hash == d


def apply_insert_proof(d: bytes, proof: InsertProof) -> Optional[bytes]:
    """Check one insertion step against ``d`` and return the resulting digest."""
    old = _rebuild_path(proof.id, proof.path, None)
    if subtree_hash(old) != d:
        return None
    try:
        return tree_insert(old, proof.id, proof.val).hash
    except LogError:
        return None


def does_extend(d: bytes, d_new: bytes, proof) -> bool:
    if isinstance(proof, (bytes, bytearray)):
        try:
            proof = ExtensionProof.from_bytes(proof)
        except DecodeError:
            return False
    if not isinstance(proof, ExtensionProof):
        return False
    cur = d
    for step in proof.inserts:
        cur = apply_insert_proof(cur, step)
        if cur is None:
            return False
    return cur == d_new


# ---------------------------------------------------------------- the tree

class LogTree:
    """Single-writer log; old roots stay valid because nodes are immutable."""

    def __init__(self, entries: Iterable[Tuple[bytes, bytes]] = ()):
        self.root: Tree = None
        self.entries: List[Tuple[bytes, bytes]] = []
        self._ids = {}
        for id_, val in entries:
            self.insert(id_, val)

    def __len__(self):
        return len(self.entries)

    def __contains__(self, id_: bytes) -> bool:
        return id_ in self._ids

    def get(self, id_: bytes) -> Optional[bytes]:
        return self._ids.get(id_)

    @property
    def digest(self) -> bytes:
        return subtree_hash(self.root)

    def insert(self, id_: bytes, val: bytes) -> InsertProof:
        id_, val = bytes(id_), bytes(val)
        if id_ in self._ids:
            raise DuplicateIdError(id_)
        proof = InsertProof(id_, val, tuple(self._search_path(id_)[0]))
        self.root = tree_insert(self.root, id_, val)
        self.entries.append((id_, val))
        self._ids[id_] = val
        return proof

    def copy(self) -> "LogTree":
        out = LogTree()
        out.root = self.root
        out.entries = list(self.entries)
        out._ids = dict(self._ids)
        return out

    def forge_overwrite(self, id_: bytes, val: bytes) -> None:
        """Adversary hook: replace the value stored under an existing id in place."""
        if id_ not in self._ids:
            raise LogError("can only overwrite an existing id")

        def walk(t):
            if t.id == id_:
                return Node(id_, val, t.left, t.right, t.prio)
            if id_ < t.id:
                return t.with_children(walk(t.left), t.right)
            return t.with_children(t.left, walk(t.right))

        self.root = walk(self.root)
        self._ids[id_] = val
        self.entries.append((id_, val))

    def _search_path(self, id_: bytes):
        steps = []
        t = self.root
        while t is not None and t.id != id_:
            if id_ < t.id:
                steps.append(PathStep(t.id, t.val, subtree_hash(t.right)))
                t = t.left
            else:
                steps.append(PathStep(t.id, t.val, subtree_hash(t.left)))
                t = t.right
        return steps, t

    def prove_includes(self, id_: bytes, val: bytes) -> Optional[InclusionProof]:
        steps, node = self._search_path(bytes(id_))
        if node is None or node.val != val:
            return None
        return InclusionProof(tuple(steps), subtree_hash(node.left), subtree_hash(node.right))

    def depth(self) -> int:
        def walk(t):
            return 0 if t is None else 1 + max(walk(t.left), walk(t.right))
        return walk(self.root)


# ------------------------------------------------------ list-level wrappers

def digest(entries: Sequence[Tuple[bytes, bytes]]) -> bytes:
    """Digest of the log; raises DuplicateIdError on a repeated id."""
    return LogTree(entries).digest


def prove_includes(entries, id_: bytes, val: bytes) -> Optional[InclusionProof]:
    return LogTree(entries).prove_includes(id_, val)


def prove_extends(old, new) -> Optional[ExtensionProof]:
    """Proof that ``new`` is ``old`` followed by fresh-id insertions, else None."""
    old, new = list(old), list(new)
    if new[:len(old)] != old:
        return None
    try:
        tree = LogTree(old)
        return ExtensionProof(tuple(tree.insert(i, v) for i, v in new[len(old):]))
    except DuplicateIdError:
        return None


# ---------------------------------------------------------- public replay

REPLAY_MAGIC = b"SPLOG1"


def write_replay(entries: Sequence[Tuple[bytes, bytes]], checkpoints: Sequence[Tuple[int, bytes]]) -> bytes:
    """Serialize the insertion sequence plus the digest chain ``(entry count, digest)``."""
    out = [REPLAY_MAGIC, u32(len(entries))]
    out += [lp(i) + lp(v) for i, v in entries]
    out.append(u32(len(checkpoints)))
    out += [u32(n) + d for n, d in checkpoints]
    return b"".join(out)


def read_replay(data: bytes):
    """Inverse of :func:`write_replay`; raises DecodeError on truncation or garbage."""
    r = Reader(data)
    if r.take(len(REPLAY_MAGIC)) != REPLAY_MAGIC:
        raise DecodeError("not a replay file")
    entries = [(r.lp(), r.lp()) for _ in range(r.u32())]
    checkpoints = [(r.u32(), r.take(HASH_SIZE)) for _ in range(r.u32())]
    r.done()
    return entries, checkpoints


@dataclass
class AuditReport:
    ok: bool
    checked_epochs: int
    bad_record: Optional[int] = None
    reason: str = ""


def audit_replay(entries: Sequence[Tuple[bytes, bytes]],
                 checkpoints: Sequence[Tuple[int, bytes]]) -> AuditReport:
    """Recompute every checkpoint digest and check each epoch extends the previous one."""
    tree = LogTree()
    prev_count = 0
    for epoch, (count, expected) in enumerate(checkpoints):
        if count < prev_count or count > len(entries):
            return AuditReport(False, epoch, prev_count, "checkpoint count out of order")
        old = tree.digest
        proofs = []
        for idx in range(prev_count, count):
            id_, val = entries[idx]
            if id_ in tree:
                return AuditReport(False, epoch, idx, f"id {id_!r} written twice")
            proofs.append(tree.insert(id_, val))
        if tree.digest != expected:
            return AuditReport(False, epoch, count - 1 if count else 0, "digest mismatch")
        if not does_extend(old, tree.digest, ExtensionProof(tuple(proofs))):
            return AuditReport(False, epoch, prev_count, "epoch does not extend its predecessor")
        prev_count = count
    if prev_count != len(entries):
        return AuditReport(False, len(checkpoints), prev_count, "records after the last checkpoint")
    return AuditReport(True, len(checkpoints))
