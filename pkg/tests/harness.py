"""Small builders shared by the log-sync and acceptance tests."""

from random import Random

from safetypin import logsync
from safetypin.crypto import ConcatScheme


class Cluster:
    """N log replicas wired to one provider-side log server."""

    def __init__(self, N, C=16, dishonest=(), mode="random", f_live=1 / 64, gc_bound=4, seed=0,
                 scheme=None):
        self.N, self.C, self.mode, self.f_live = N, C, mode, f_live
        self.scheme = scheme or ConcatScheme()
        rng = Random(seed)
        keys = {i: self.scheme.keygen(rng) for i in range(1, N + 1)}
        self.pks = {i: pk for i, (_, pk) in keys.items()}
        self.replicas = {
            i: logsync.LogReplica(i, N, keys[i][0], self.pks, audit_count=C, f_live=f_live, mode=mode,
                                  rng=Random(f"{seed}/replica/{i}"), gc_bound=gc_bound,
                                  scheme=self.scheme, honest=i not in set(dishonest))
            for i in keys}
        self.server = logsync.LogServer()
        self.down = set()
        self.kill_on = {}               # hsm id -> verb that takes it down when first received
        self.log = []

    def deliver(self, i, verb, payload):
        if self.kill_on.get(i) == verb:
            del self.kill_on[i]
            self.down.add(i)
        if i in self.down:
            raise logsync.Unreachable(i)
        self.log.append((i, verb))
        return logsync.direct_delivery(self.replicas)(i, verb, payload)

    def submit(self, count, prefix=b"id"):
        base = len(self.server.tree) + len(self.server.pending)
        for k in range(count):
            assert self.server.submit(prefix + b"-%d" % (base + k), b"value-%d" % (base + k))

    def epoch(self, **kw):
        up = [i for i in self.replicas if i not in self.down]
        return logsync.run_epoch(self.server, up, self.deliver, self.pks, self.N, self.f_live,
                                 self.mode, self.scheme, **kw)

    def gc(self):
        return logsync.garbage_collect(self.server, [i for i in self.replicas], self.deliver)

    def digests(self):
        return {r.digest for i, r in self.replicas.items() if i not in self.down}

    def adoption_chain_ok(self):
        for r in self.replicas.values():
            prev = None
            for epoch, old, new in r.adoptions:
                if prev is not None and old != prev:
                    return False
                prev = new
        return True


def full_compromise_decrypt(dc, user, pin, root_keys=None, backup_id=None):
    """Decrypt ``user``'s ciphertext with every block the provider stored plus HSM root keys.

    ``root_keys`` maps HSM id to a list of root keys; by default the keys
    each cluster HSM holds right now.
    """
    from safetypin import lhe
    from safetypin.attacks import decrypt_with_leaks, leaked_slot_keys

    ct = lhe.RecoveryCiphertext.from_bytes(dc.provider.fetch(user, backup_id), dc.params.salt_len)
    ids = lhe.select(ct.salt, pin, dc.params)
    secrets = dc.compromise(set(ids))
    leaks = {}
    for i, s in secrets.items():
        keys = root_keys[i] if root_keys is not None else [s.root_key]
        leaks[i] = leaked_slot_keys(dc.provider.stores[i], keys, s.height, s.leaf_count)
    return decrypt_with_leaks(ct, user, ids, dc.mpk.fingerprints, leaks, dc.params, dc.bloom)


def capture_before_puncture(dc, ids):
    """Hook each HSM in ``ids`` to record its root key just before it punctures."""
    seen = {}

    def hook(hsm):
        seen.setdefault(hsm.node_id, []).append(bytes(hsm.punc_sk.handle.root_key))

    for i in ids:
        dc.hsms[i].before_puncture = hook
    return seen
