"""Outsourced storage with secure deletion.

An untrusted block server holds a binary tree of AE-encrypted blocks. Each
internal node stores ``AE(k_node, k_left || k_right)`` and each leaf stores
``AE(k_leaf, data)``; the client keeps only the root key. Deleting a leaf
replaces its key with the all-zero useless key and re-keys every node on the
path, so the old leaf key becomes unreachable from the new root key.

Addressing: the root lives at 1, node ``a`` has children ``2a`` and
``2a+1``, and with ``h = 1 + ceil(log2 D)`` levels leaf ``i`` lives at
``2**(h-1) + i``. Reads and deletes touch exactly ``h`` addresses.
"""

from dataclasses import dataclass, field
from random import Random
from typing import Dict, List, Optional, Sequence, Tuple

from .crypto.ae import KEY_SIZE, ZERO_KEY, ae_decrypt, ae_encrypt, fresh_key

# Written over a deleted leaf; never decrypts under any key.
TOMBSTONE = b""


class StoreError(ValueError):
    pass


class BlockServer:
    """In-memory GET/PUT block store that remembers every PUT ever made."""

    def __init__(self, keep_history: bool = True):
        self.blocks: Dict[int, bytes] = {}
        self.keep_history = keep_history
        self.history: List[Tuple[int, bytes]] = []
        self.accesses: List[Tuple[str, int]] = []

    def get(self, addr: int) -> Optional[bytes]:
        self.accesses.append(("G", addr))
        return self.blocks.get(addr)

    def put(self, addr: int, block: bytes) -> None:
        self.accesses.append(("P", addr))
        block = bytes(block)
        self.blocks[addr] = block
        if self.keep_history:
            self.history.append((addr, block))

    def touched_since(self, mark: int) -> set:
        """Distinct addresses accessed since ``len(accesses) == mark``."""
        return {addr for _, addr in self.accesses[mark:]}

    def reset_counters(self) -> None:
        self.accesses.clear()


@dataclass
class TreeHandle:
    root_key: bytearray = field(repr=False)
    height: int
    leaf_count: int

    @property
    def width(self) -> int:
        return 1 << (self.height - 1)

    def leaf_addr(self, i: int) -> int:
        return self.width + i

    def erase(self) -> None:
        for j in range(len(self.root_key)):
            self.root_key[j] = 0


def tree_height(d: int) -> int:
    return 1 + (d - 1).bit_length()


def setup(data: Sequence[bytes], server: BlockServer, rng: Random) -> TreeHandle:
    d = len(data)
    if d < 1:
        raise StoreError("need at least one data block")
    h = tree_height(d)
    width = 1 << (h - 1)
    padded = list(data) + [bytes(KEY_SIZE)] * (width - d)

    def build(chunk: List[bytes], addr: int) -> bytes:
        if len(chunk) == 1:
            msg = chunk[0]
        else:
            half = len(chunk) // 2
            msg = build(chunk[:half], 2 * addr) + build(chunk[half:], 2 * addr + 1)
        key = fresh_key(rng)
        server.put(addr, ae_encrypt(key, msg, rng))
        return key

    return TreeHandle(bytearray(build(padded, 1)), h, d)


def _check_index(handle: TreeHandle, i: int) -> None:
    if not 0 <= i < handle.leaf_count:
        raise StoreError(f"leaf {i} out of range [0, {handle.leaf_count})")


def _walk(handle: TreeHandle, i: int, server: BlockServer):
    """Decrypt the internal nodes on the path to leaf ``i``.

    Returns ``([(addr, plaintext), ...], leaf_key)``, or ``(None, None)`` as
    soon as a block fails to authenticate.
    """
    key = bytes(handle.root_key)
    addr = 1
    path = []
    for level in range(handle.height - 1, 0, -1):
        block = server.get(addr)
        plain = None if block is None else ae_decrypt(key, block)
        if plain is None or len(plain) != 2 * KEY_SIZE:
            return None, None
        path.append((addr, plain))
        go_right = (i >> (level - 1)) & 1
        key = plain[KEY_SIZE:] if go_right else plain[:KEY_SIZE]
        addr = 2 * addr + go_right
    return path, key


def read(handle: TreeHandle, i: int, server: BlockServer) -> Optional[bytes]:
    _check_index(handle, i)
    path, leaf_key = _walk(handle, i, server)
    if path is None:
        return None
    block = server.get(handle.leaf_addr(i))
    if block is None:
        return None
    return ae_decrypt(leaf_key, block)


def delete(handle: TreeHandle, i: int, server: BlockServer, rng: Random) -> Optional[TreeHandle]:
    """Securely delete leaf ``i`` and return the re-keyed handle.

    Deleting an already-deleted leaf is a no-op returning ``handle`` itself.
    Returns None if the path cannot be decrypted. On success the old root key
    is zeroed in place.
    """
    _check_index(handle, i)
    path, leaf_key = _walk(handle, i, server)
    if path is None:
        return None
    if leaf_key == ZERO_KEY:
        return handle
    server.put(handle.leaf_addr(i), TOMBSTONE)
    child_key = ZERO_KEY
    child_addr = handle.leaf_addr(i)
    for addr, plain in reversed(path):
        left, right = plain[:KEY_SIZE], plain[KEY_SIZE:]
        if child_addr & 1:
            right = child_key
        else:
            left = child_key
        child_key = fresh_key(rng)
        server.put(addr, ae_encrypt(child_key, left + right, rng))
        child_addr = addr
    new = TreeHandle(bytearray(child_key), handle.height, handle.leaf_count)
    handle.erase()
    return new


def replay_recover(history: Sequence[Tuple[int, bytes]], root_keys: Sequence[bytes],
                   height: int, leaf_count: int) -> Dict[int, set]:
    """Everything an adversary holding the full PUT history and ``root_keys`` can read.

    Tries every known key against every version of every block, following
    decrypted child keys down the tree (the all-zero key is always tried).
    Returns leaf index -> set of recovered plaintexts.
    """
    versions: Dict[int, List[bytes]] = {}
    for addr, block in history:
        versions.setdefault(addr, []).append(block)
    width = 1 << (height - 1)
    keys: Dict[int, set] = {1: {bytes(k) for k in root_keys} | {ZERO_KEY}}
    found: Dict[int, set] = {}
    frontier = [1]
    while frontier:
        nxt = []
        for addr in frontier:
            for key in keys.get(addr, ()):
                for block in versions.get(addr, ()):
                    plain = ae_decrypt(key, block)
                    if plain is None:
                        continue
                    if addr >= width:
                        i = addr - width
                        if i < leaf_count:
                            found.setdefault(i, set()).add(plain)
                    elif len(plain) == 2 * KEY_SIZE:
                        for child, k in ((2 * addr, plain[:KEY_SIZE]), (2 * addr + 1, plain[KEY_SIZE:])):
                            keys.setdefault(child, {ZERO_KEY}).add(k)
            if addr < width:
                nxt.extend((2 * addr, 2 * addr + 1))
        frontier = [a for a in nxt if a in keys]
    return found
