import math
from random import Random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from harness import Cluster
from oracles import treap_digest
from safetypin import authlog, logsync
from safetypin.authlog import EMPTY_DIGEST, LogTree
from safetypin.logsync import AuditRejected, hsm_audit, hsm_choose_chunks, provider_prepare


# ------------------------------------------------------------ merkle

@given(st.lists(st.binary(min_size=32, max_size=32), min_size=1, max_size=40), st.data())
@settings(max_examples=60, deadline=None)
def test_merkle_paths_verify(leaves, data):
    root = logsync.merkle_root(leaves)
    i = data.draw(st.integers(0, len(leaves) - 1))
    path = logsync.merkle_path(leaves, i)
    assert logsync.merkle_verify(root, leaves[i], i, len(leaves), path)
    other = data.draw(st.integers(0, len(leaves) - 1))
    if leaves[other] != leaves[i]:
        assert not logsync.merkle_verify(root, leaves[other], i, len(leaves), path)
    if path:
        bad = list(path)
        bad[0] = bytes(32) if bad[0] != bytes(32) else b"\x01" * 32
        assert not logsync.merkle_verify(root, leaves[i], i, len(leaves), bad)


# --------------------------------------------------------- provider side

def test_split_chunks_remainder_last():
    chunks = logsync.split_chunks(list(range(23)), 5)
    assert [len(c) for c in chunks] == [4, 4, 4, 4, 7]
    assert sum(chunks, []) == list(range(23))


def test_prepare_without_inserts():
    log = LogTree([(b"a", b"1")])
    up = provider_prepare(log, [], 4)
    assert up.new_digest == up.old_digest == log.digest
    assert all(d == log.digest for d in up.digests)


def test_prepare_100_inserts_replays():
    log = LogTree([(b"old-%d" % i, b"v") for i in range(30)])
    inserts = [(b"new-%d" % i, b"w%d" % i) for i in range(100)]
    up = provider_prepare(log, inserts, 10)
    assert [len(c) for c in up.chunks] == [10] * 10
    assert up.new_digest == authlog.digest(log.entries + inserts) == treap_digest(log.entries + inserts)
    for j in range(1, 11):
        assert authlog.does_extend(up.digests[j - 1], up.digests[j], up.proofs[j])
    assert log.digest == up.old_digest and len(log) == 30          # input untouched


def test_prepare_adversary_mode_flagged():
    log = LogTree([(b"victim", b"honest")])
    up = provider_prepare(log, [(b"x", b"y")], 3, overwrite=(b"victim", b"evil"), forge_chunk=2)
    assert up.forged and up.forged_chunks == {2}
    assert not authlog.does_extend(up.digests[1], up.digests[2], up.proofs[2])
    assert up.new_tree.get(b"victim") == b"evil"


# ------------------------------------------------------------ chunk choice

def test_deterministic_choice_is_reproducible():
    root = bytes(range(32))
    a = hsm_choose_chunks(64, 16, root=root, node_id=5)
    assert a == hsm_choose_chunks(64, 16, root=root, node_id=5)
    assert a != hsm_choose_chunks(64, 16, root=root, node_id=6)
    assert all(1 <= j <= 64 for j in a) and len(a) == 16


def test_single_chunk():
    assert hsm_choose_chunks(1, 7, rng=Random(0)) == [1] * 7
    assert hsm_choose_chunks(1, 3, root=bytes(32), node_id=1) == [1] * 3


def test_coverage_matches_formula():
    trials = 10_000
    emp = logsync.simulate_full_coverage(16, 8, 1 / 16, trials, Random(1))
    p = logsync.full_coverage_estimate(16, 8, 1 / 16)
    assert abs(emp - p) <= 3 * math.sqrt(p * (1 - p) / trials)


def test_miss_rate_matches_formula():
    trials = 20_000
    emp = logsync.simulate_audit_miss(16, 2, 1 / 16, trials, Random(2))
    p = logsync.audit_miss_probability(16, 2, 1 / 16)
    assert p == pytest.approx((15 / 16) ** 28)
    assert abs(emp - p) <= 3 * math.sqrt(p * (1 - p) / trials)


# ------------------------------------------------------------- the audit

def _prep(up, online=(1,)):
    return logsync.PrepareEpoch(up.epoch, up.old_digest, up.new_digest, up.root, up.n_chunks, tuple(online))


def test_audit_honest_and_forged():
    log = LogTree([(b"id%d" % i, b"v") for i in range(8)])
    inserts = [(b"n%d" % i, b"w") for i in range(8)]
    honest = provider_prepare(log, inserts, 4)
    hsm_audit(log.digest, _prep(honest), [1, 2, 3, 4], honest.open([1, 2, 3, 4]))
    forged = provider_prepare(log, inserts, 4, overwrite=(b"id3", b"evil"), forge_chunk=3)
    with pytest.raises(AuditRejected) as e:
        hsm_audit(log.digest, _prep(forged), [3], forged.open([3]))
    assert e.value.reason == "bad-extension"
    # Not sampled: local acceptance.
    hsm_audit(log.digest, _prep(forged), [1, 2, 4], forged.open([1, 2, 4]))


def test_audit_endpoint_and_inclusion_errors():
    log = LogTree([(b"a", b"1")])
    up = provider_prepare(log, [(b"b", b"2"), (b"c", b"3")], 2)
    with pytest.raises(AuditRejected) as e:
        hsm_audit(EMPTY_DIGEST, _prep(up), [1], up.open([1]))
    assert e.value.reason == "endpoint-mismatch"
    other = provider_prepare(log, [(b"b", b"2"), (b"d", b"4")], 2)
    with pytest.raises(AuditRejected) as e:
        hsm_audit(log.digest, _prep(up), [2], other.open([2]))
    assert e.value.reason == "bad-inclusion"
    with pytest.raises(AuditRejected) as e:
        hsm_audit(log.digest, _prep(up), [2], up.open([1]))
    assert e.value.reason == "bad-inclusion"


def test_audit_last_chunk_must_end_at_new_digest():
    log = LogTree([(b"a", b"1")])
    up = provider_prepare(log, [(b"b", b"2")], 1)
    prep = logsync.PrepareEpoch(up.epoch, up.old_digest, log.digest, up.root, 1, (1,))
    with pytest.raises(AuditRejected) as e:
        hsm_audit(log.digest, prep, [1], up.open([1]))
    assert e.value.reason == "endpoint-mismatch"


# ------------------------------------------------------------ messages

def test_message_round_trips():
    c = Cluster(4, C=2)
    c.submit(3)
    r = c.epoch()
    assert r.status == "finalized"
    d = r.decision
    assert logsync.EpochDecision.from_bytes(d.to_bytes()) == d
    prep = logsync.PrepareEpoch(2, d.old_digest, d.new_digest, d.root, 4, (1, 2, 3, 4))
    assert logsync.PrepareEpoch.from_bytes(prep.to_bytes()) == prep
    req = logsync.AuditRequest(3, (1, 4))
    assert logsync.AuditRequest.from_bytes(req.to_bytes()) == req


# -------------------------------------------------------------- epochs

def test_honest_epoch_all_adopt():
    c = Cluster(8, C=4)
    c.submit(20)
    r = c.epoch()
    assert r.status == "finalized" and r.restarts == 0
    assert c.digests() == {c.server.digest} and c.server.digest != EMPTY_DIGEST


def test_work_bound_per_epoch():
    c = Cluster(16, C=5)
    for _ in range(3):
        c.submit(16)
        before = {i: dict(r.stats) for i, r in c.replicas.items()}
        assert c.epoch().status == "finalized"
        for i, r in c.replicas.items():
            assert r.stats["chunks_verified"] - before[i]["chunks_verified"] == 5
            assert r.stats["signatures_verified"] - before[i]["signatures_verified"] == 1


def test_empty_epoch_is_valid():
    c = Cluster(4, C=2)
    r = c.epoch()
    assert r.status == "finalized" and c.digests() == {EMPTY_DIGEST}


def test_forged_epoch_rejected_and_not_adopted():
    c = Cluster(8, C=8)
    c.submit(8)
    assert c.epoch().status == "finalized"
    held = c.server.digest
    c.submit(8)
    r = c.epoch(overwrite=(b"id-0", b"evil"))
    assert r.status == "rejected"
    assert set(r.rejections.values()) == {"bad-extension"}
    assert c.digests() == {held} and c.server.digest == held


def test_epoch_finalize_requires_every_online_signature():
    c = Cluster(4, C=2)
    up = c.server.prepare(4)
    online = [1, 2, 3, 4]
    sigs = {i: None for i in online}
    assert logsync.epoch_finalize(up, sigs, online, c.pks) is None
    for i, r in c.replicas.items():
        r._prep = _prep(up, online)
        sigs[i] = r._sign()
    decision = logsync.epoch_finalize(up, sigs, online, c.pks)
    assert decision is not None
    assert decision.message == logsync.epoch_message(up.epoch, up.old_digest, up.new_digest, up.root)
    sigs[2] = logsync.SignatureSubmit(2, sigs[3].signature)
    assert logsync.epoch_finalize(up, sigs, online, c.pks) is None


def test_death_at_signing_restarts():
    c = Cluster(64, C=4, mode="deterministic")
    c.submit(10)
    c.kill_on[9] = "sign"
    r = c.epoch()
    assert r.status == "finalized" and r.restarts == 1 and 9 not in r.decision.online


def test_death_mid_epoch_restarts():
    c = Cluster(64, C=4)
    c.submit(10)
    c.kill_on[7] = "audit"
    r = c.epoch()
    assert r.status == "finalized" and r.restarts == 1 and r.failed == {7}
    assert c.replicas[7].digest == EMPTY_DIGEST
    assert c.digests() == {c.server.digest}


def test_too_many_failures_abort_without_state_change():
    c = Cluster(16, C=4, f_live=1 / 16)
    c.submit(4)
    c.down |= {1, 2}
    r = c.epoch()
    assert r.status == "aborted"
    assert {rep.digest for rep in c.replicas.values()} == {EMPTY_DIGEST}


def test_deterministic_recheck_completes():
    # Two failures need f_live * N >= 2.
    c = Cluster(64, C=6, mode="deterministic", f_live=1 / 32)
    c.submit(64)
    c.kill_on[9] = "audit"
    c.kill_on[20] = "recheck"
    r = c.epoch()
    assert r.status == "finalized" and r.restarts == 0
    assert r.failed == {9, 20} and r.recheck_levels == 2
    assert c.digests() == {c.server.digest}


def test_deterministic_failure_during_audit_rechecked():
    c = Cluster(64, C=6, mode="deterministic")
    c.submit(64)
    c.kill_on[3] = "audit"
    r = c.epoch()
    assert r.status == "finalized" and r.recheck_levels >= 1 and r.restarts == 0
    assert 3 in r.failed and 3 not in r.decision.online


def test_deterministic_forgery_detected():
    c = Cluster(16, C=16, mode="deterministic")
    c.submit(16)
    assert c.epoch().status == "finalized"
    c.submit(16)
    r = c.epoch(overwrite=(b"id-3", b"evil"), forge_chunk=5)
    assert r.status == "rejected"


def test_catch_up_after_downtime():
    c = Cluster(64, C=4)
    c.down.add(5)
    for _ in range(2):
        c.submit(8)
        assert c.epoch().status == "finalized"
    c.down.clear()
    assert c.replicas[5].epoch == 0
    c.submit(8)
    r = c.epoch()
    assert r.status == "finalized"
    assert c.replicas[5].digest == c.server.digest and c.replicas[5].epoch == 3


def test_liveness_with_failures_between_epochs():
    c = Cluster(64, C=4)
    rng = Random(3)
    for _ in range(5):
        c.down = set(rng.sample(range(1, 65), 1))
        c.submit(10)
        assert c.epoch().status == "finalized"
    assert c.adoption_chain_ok()


def test_garbage_collection_bound_and_archive():
    c = Cluster(4, C=2, gc_bound=2)
    c.submit(5)
    assert c.epoch().status == "finalized"
    entries, checkpoints = list(c.server.tree.entries), list(c.server.checkpoints)
    assert all(c.gc().values())
    assert c.digests() == {EMPTY_DIGEST}
    assert all(c.gc().values())
    assert not any(c.gc().values())
    assert all(r.refusing for r in c.replicas.values())
    archived = c.server.archives[0]
    assert archived == (entries, checkpoints)
    assert authlog.audit_replay(*archived).ok


def test_online_threshold():
    assert logsync.online_threshold(100, 1 / 64) == 99
    assert logsync.online_threshold(64, 1 / 64) == 63
    assert logsync.online_threshold(20, 1 / 64) == 20
