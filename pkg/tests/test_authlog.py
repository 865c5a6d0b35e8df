import hashlib
import math
from random import Random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from log_mutations import CLASSES, Scenario, random_entries
from oracles import treap_digest
from safetypin import authlog
from safetypin.authlog import EMPTY_DIGEST, DuplicateIdError, LogTree
from safetypin.crypto import DecodeError

entries_st = st.lists(st.tuples(st.binary(min_size=1, max_size=6), st.binary(max_size=8)),
                      max_size=12, unique_by=lambda e: e[0])


def test_empty_digest_constant():
    assert authlog.digest([]) == EMPTY_DIGEST == bytes(32)


def test_single_entry_digest_by_hand():
    tag = b"safetypin/log-leaf"
    u32 = lambda v: v.to_bytes(4, "big")
    items = [u32(1), b"a", u32(1), b"b"]
    h = hashlib.sha256(u32(len(tag)) + tag + u32(4) + b"".join(u32(len(i)) + i for i in items))
    assert authlog.digest([(b"a", b"b")]) == h.digest()


def test_digest_deterministic_and_duplicate_rejected():
    e = random_entries(Random(1), 10)
    assert authlog.digest(e) == authlog.digest(list(e))
    with pytest.raises(DuplicateIdError):
        authlog.digest(e + [(e[3][0], b"other")])


@settings(max_examples=200, deadline=None)
@given(entries_st, st.randoms(use_true_random=False))
def test_digest_matches_oracle_in_any_order(entries, r):
    assert authlog.digest(entries) == treap_digest(entries)
    shuffled = list(entries)
    r.shuffle(shuffled)
    assert authlog.digest(shuffled) == authlog.digest(entries)


def test_inclusion_examples():
    e = random_entries(Random(2), 8)
    d = authlog.digest(e)
    for id_, val in e:
        proof = authlog.prove_includes(e, id_, val)
        assert authlog.does_include(d, id_, val, proof)
        assert authlog.does_include(d, id_, val, proof.to_bytes())
    assert authlog.prove_includes(e, b"absent-id", b"x") is None
    assert authlog.prove_includes(e, e[0][0], e[0][1] + b"!") is None


def test_malformed_proofs_rejected():
    e = random_entries(Random(3), 4)
    d = authlog.digest(e)
    assert not authlog.does_include(d, e[0][0], e[0][1], b"\x00")
    assert not authlog.does_include(d, e[0][0], e[0][1], None)
    assert not authlog.does_extend(d, d, b"\xff\xff")


def test_extension_examples():
    rng = Random(4)
    old = random_entries(rng, 6)
    new = old + random_entries(rng, 1, [i for i, _ in old])
    assert authlog.does_extend(authlog.digest(old), authlog.digest(new), authlog.prove_extends(old, new))
    replaced = [(old[0][0], b"changed")] + old[1:]
    assert authlog.prove_extends(old, replaced) is None
    assert authlog.prove_extends(old, old + [(old[2][0], b"again")]) is None


def test_empty_extension():
    e = random_entries(Random(5), 3)
    d = authlog.digest(e)
    assert authlog.does_extend(d, d, authlog.prove_extends(e, e))


def test_batch_of_100_and_proof_size():
    rng = Random(6)
    old = random_entries(rng, 400)
    new = old + random_entries(rng, 100, [i for i, _ in old])
    proof = authlog.prove_extends(old, new)
    assert authlog.does_extend(authlog.digest(old), authlog.digest(new), proof)
    assert len(proof.inserts) == 100
    # A treap's expected depth is about 2 ln n; allow a 2x margin per insert.
    depth_bound = 4 * 2.0 * math.log(len(new))
    assert proof.size() <= 100 * depth_bound


def test_forged_neighbors_rejected():
    # Claim an existing id is new by presenting the search path of a tree
    # where it is absent.
    rng = Random(7)
    old = random_entries(rng, 8)
    victim = old[4]
    without = [e for e in old if e != victim]
    fake = LogTree(without).insert(victim[0], b"forged")
    assert not authlog.does_extend(authlog.digest(old), authlog.digest(without + [(victim[0], b"forged")]),
                                   authlog.ExtensionProof((fake,)))


@settings(max_examples=100, deadline=None)
@given(entries_st, st.integers(0, 6), st.integers(0, 2**32))
def test_completeness_property(old, extra, seed):
    new = old + random_entries(Random(seed), extra, [i for i, _ in old])
    d_new = authlog.digest(new)
    assert authlog.does_extend(authlog.digest(old), d_new, authlog.prove_extends(old, new))
    for id_, val in new:
        assert authlog.does_include(d_new, id_, val, authlog.prove_includes(new, id_, val))


def test_completeness_large_log():
    rng = Random(8)
    tree = LogTree()
    entries = random_entries(rng, 10_000)
    for id_, val in entries:
        tree.insert(id_, val)
    for id_, val in rng.sample(entries, 200):
        assert authlog.does_include(tree.digest, id_, val, tree.prove_includes(id_, val))


@pytest.mark.parametrize("cls", CLASSES)
def test_soundness_per_class(cls):
    rng = Random(cls)
    n = 0
    while n < 1000:
        for claim in Scenario(rng).mutations(cls):
            assert not claim.accepted(), (cls, claim)
            n += 1


def test_forge_overwrite_changes_digest_only():
    e = random_entries(Random(9), 5)
    tree = LogTree(e)
    before = tree.digest
    tree.forge_overwrite(e[1][0], b"new")
    assert tree.digest != before and tree.get(e[1][0]) == b"new"
    with pytest.raises(authlog.LogError):
        tree.forge_overwrite(b"never-there", b"x")


def test_replay_round_trip_and_audit():
    rng = Random(10)
    tree = LogTree()
    checkpoints = [(0, tree.digest)]
    for _ in range(3):
        for id_, val in random_entries(rng, 4, [i for i, _ in tree.entries]):
            tree.insert(id_, val)
        checkpoints.append((len(tree), tree.digest))
    blob = authlog.write_replay(tree.entries, checkpoints)
    entries, cps = authlog.read_replay(blob)
    assert entries == tree.entries and cps == checkpoints
    report = authlog.audit_replay(entries, cps)
    assert report.ok and report.checked_epochs == 4


def test_replay_detects_overwrite_at_record():
    rng = Random(11)
    entries = random_entries(rng, 6)
    tree = LogTree(entries)
    checkpoints = [(6, tree.digest)]
    tree.forge_overwrite(entries[2][0], b"evil")
    checkpoints.append((len(tree.entries), tree.digest))
    report = authlog.audit_replay(tree.entries, checkpoints)
    assert not report.ok and report.bad_record == 6


def test_replay_truncated_is_parse_error():
    blob = authlog.write_replay([(b"a", b"b")], [(1, authlog.digest([(b"a", b"b")]))])
    with pytest.raises(DecodeError):
        authlog.read_replay(blob[:-3])
