import itertools
import math
from random import Random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from safetypin import lhe
from safetypin.lhe import LheParams, RecoveryCiphertext

SMALL = LheParams(N=10, n=4, t=2, pin_space=10_000)


@pytest.fixture(scope="module")
def small_keys():
    return lhe.generate_keys(SMALL, Random(1))


def test_select_deterministic():
    p = LheParams.default()
    salt = bytes(16)
    assert lhe.select(salt, 1234, p) == lhe.select(salt, 1234, p)
    assert all(1 <= i <= 100 for i in lhe.select(salt, 1234, p))
    assert len(lhe.select(salt, 1234, p)) == 40


def test_select_distinct_pins_differ():
    p = LheParams.default()
    rng = Random(2)
    collisions = 0
    for _ in range(10_000):
        salt = lhe.random_salt(p, rng)
        a, b = rng.sample(range(p.pin_space), 2)
        collisions += lhe.select(salt, a, p) == lhe.select(salt, b, p)
    assert collisions == 0


def test_select_singleton_universe():
    p = LheParams(N=1, n=5, t=3)
    assert lhe.select(b"s" * 16, 7, p) == [1] * 5
    assert lhe.select(b"t" * 16, 8, p) == [1] * 5


def test_parameter_validation():
    with pytest.raises(ValueError):
        LheParams(N=10, n=3, t=5)
    with pytest.raises(ValueError):
        LheParams(N=0, n=3, t=2)


def test_round_trip(small_keys):
    mpk, sks = small_keys
    rng = Random(3)
    ct = lhe.encrypt(mpk, lhe.random_salt(SMALL, rng), 42, b"alice", b"payload", SMALL, rng)
    assert lhe.recover_with_keys(sks, mpk, ct, 42, b"alice", SMALL) == b"payload"


def test_production_parameters_encrypt():
    p = LheParams(N=3100, n=40, t=20, pin_space=10 ** 6)
    rng = Random(4)
    mpk, sks = lhe.generate_keys(p, rng)
    ct = lhe.encrypt(mpk, lhe.random_salt(p, rng), 123456, b"u", b"m", p, rng)
    assert ct.n == 40
    assert lhe.recover_with_keys(sks, mpk, ct, 123456, b"u", p) == b"m"


def test_encryptions_are_randomized(small_keys):
    mpk, _ = small_keys
    rng = Random(5)
    salt = lhe.random_salt(SMALL, rng)
    a = lhe.encrypt(mpk, salt, 1, b"u", b"m", SMALL, rng)
    b = lhe.encrypt(mpk, salt, 1, b"u", b"m", SMALL, rng)
    assert a.payload != b.payload and a.share_cts != b.share_cts


def test_encrypt_rejects_mismatched_params(small_keys):
    mpk, _ = small_keys
    with pytest.raises(ValueError):
        lhe.encrypt(mpk, bytes(16), 1, b"u", b"m", LheParams(N=11, n=4, t=2), Random(0))
    with pytest.raises(ValueError):
        lhe.encrypt(mpk, bytes(3), 1, b"u", b"m", SMALL, Random(0))


def test_decrypt_share_checks(small_keys):
    mpk, sks = small_keys
    rng = Random(6)
    salt = lhe.random_salt(SMALL, rng)
    ct = lhe.encrypt(mpk, salt, 77, b"bob", b"m", SMALL, rng)
    ids = lhe.select(salt, 77, SMALL)
    cluster = mpk.cluster(ids)
    share = lhe.decrypt_share(sks[ids[0]], 1, ct, b"bob", cluster)
    assert share is not None and share.share.index == 1
    assert lhe.decrypt_share(sks[ids[0]], 1, ct, b"bobby", cluster) is None
    outside = [i for i in range(1, SMALL.N + 1) if i not in ids]
    assert len(outside) >= SMALL.N - SMALL.n
    for i in outside:
        for j in range(1, SMALL.n + 1):
            assert lhe.decrypt_share(sks[i], j, ct, b"bob", cluster) is None


def test_share_not_replayable_at_other_slot(small_keys):
    mpk, sks = small_keys
    rng = Random(7)
    salt = lhe.random_salt(SMALL, rng)
    ct = lhe.encrypt(mpk, salt, 5, b"u", b"m", SMALL, rng)
    ids = lhe.select(salt, 5, SMALL)
    moved = RecoveryCiphertext(ct.salt, ct.epoch, ct.payload, (ct.share_cts[1],) + ct.share_cts[1:])
    assert lhe.decrypt_share(sks[ids[0]], 1, moved, b"u", mpk.cluster(ids)) is None


def _shares(params, seed):
    rng = Random(seed)
    mpk, sks = lhe.generate_keys(params, rng, lhe.STAND_IN)
    salt = lhe.random_salt(params, rng)
    ct = lhe.encrypt(mpk, salt, 9, b"u", b"msg", params, rng)
    ids = lhe.select(salt, 9, params)
    cluster = mpk.cluster(ids)
    shares = [lhe.decrypt_share(sks[i], j, ct, b"u", cluster, lhe.STAND_IN)
              for j, i in enumerate(ids, start=1)]
    return mpk, sks, ct, shares


def test_reconstruct_all_and_every_threshold_subset():
    p = LheParams(N=20, n=6, t=3)
    _, _, _, shares = _shares(p, 8)
    assert lhe.reconstruct(shares, p) == b"msg"
    for sub in itertools.combinations(shares, 3):
        assert lhe.reconstruct(list(sub), p) == b"msg"
    for sub in itertools.combinations(shares, 2):
        assert lhe.reconstruct(list(sub), p) is None


def test_reconstruct_splice_from_wrong_pin_cluster():
    p = LheParams(N=20, n=6, t=3)
    mpk, sks, ct, shares = _shares(p, 9)
    wrong = lhe.select(ct.salt, 10, p)
    cluster = mpk.cluster(wrong)
    # A "share" from the wrong cluster is either rejected or carries a
    # different index/value; either way the transport key is wrong.
    intruder = lhe.PlaintextShare(b"u", lhe.ShamirShare(3, 12345), ct.payload)
    assert lhe.decrypt_share(sks[wrong[0]], 1, ct, b"u", cluster, lhe.STAND_IN) is None
    assert lhe.reconstruct([shares[0], shares[1], intruder], p) is None


def test_majority_payload_tie_break():
    s = lhe.ShamirShare(1, 1)
    shares = [lhe.PlaintextShare(b"u", s, b"b"), lhe.PlaintextShare(b"u", s, b"a")]
    assert lhe.majority_payload(shares) == b"a"
    shares.append(lhe.PlaintextShare(b"u", s, b"b"))
    assert lhe.majority_payload(shares) == b"b"


def test_serialization_round_trip(small_keys):
    mpk, _ = small_keys
    rng = Random(10)
    ct = lhe.encrypt(mpk, lhe.random_salt(SMALL, rng), 3, b"u", b"m", SMALL, rng, epoch=7)
    assert RecoveryCiphertext.from_bytes(ct.to_bytes(), SMALL.salt_len) == ct


def test_shape_independent_of_cluster():
    # Same rng transcript, different PINs (so different clusters): the
    # serialized ciphertexts have identical length and per-share shape.
    p = LheParams(N=50, n=8, t=4)
    mpk, _ = lhe.generate_keys(p, Random(11))
    salt = bytes(range(16))
    shapes = set()
    for pin in range(20):
        ct = lhe.encrypt(mpk, salt, pin, b"user", b"payload", p, Random(12))
        shapes.add((len(ct.to_bytes()), tuple(len(c) for c in ct.share_cts)))
    assert len(shapes) == 1


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 9999), st.binary(min_size=1, max_size=12), st.binary(max_size=64))
def test_completeness_fuzz(pin, user, msg):
    mpk, sks = lhe.generate_keys(SMALL, Random(13), lhe.STAND_IN)
    rng = Random(pin)
    ct = lhe.encrypt(mpk, lhe.random_salt(SMALL, rng), pin, user, msg, SMALL, rng)
    assert lhe.recover_with_keys(sks, mpk, ct, pin, user, SMALL) == msg


def test_wrong_pin_safety():
    p = LheParams.default()
    rng = Random(14)
    mpk, sks = lhe.generate_keys(p, rng, lhe.STAND_IN)
    trials = 0
    for _ in range(1000):
        pin = lhe.random_pin(p, rng)
        ct = lhe.encrypt(mpk, lhe.random_salt(p, rng), pin, b"u", b"m", p, rng)
        for _ in range(10):
            wrong = (pin + rng.randrange(1, p.pin_space)) % p.pin_space
            assert lhe.recover_with_keys(sks, mpk, ct, wrong, b"u", p) is None
            trials += 1
    assert trials == 10_000


# ------------------------------------------------------------ correctness

def _brute_force_failure(N, n, t, f):
    total = 0.0
    for L in itertools.product(range(N), repeat=n):
        for mask in range(1 << N):
            alive = sum(1 for x in L if not (mask >> x) & 1)
            if alive < t:
                dead = bin(mask).count("1")
                total += f ** dead * (1 - f) ** (N - dead) / N ** n
    return total


@pytest.mark.parametrize("N,n,t,f", [(5, 4, 2, 1 / 8), (4, 3, 2, 0.3), (3, 5, 3, 0.5), (6, 3, 1, 0.2)])
def test_exact_failure_matches_brute_force(N, n, t, f):
    assert lhe.exact_failure_probability(N, n, t, f) == pytest.approx(_brute_force_failure(N, n, t, f))


def test_exact_failure_without_repeats_is_binomial():
    # As N grows repeats vanish and the exact value tends to the binomial tail.
    assert lhe.exact_failure_probability(10 ** 6, 4, 2, 1 / 8) == pytest.approx(
        lhe.binomial_failure_probability(4, 2, 1 / 8), rel=1e-4)


def test_correctness_production_cluster_no_failures():
    p = LheParams(N=100, n=40, t=20, f_live=1 / 64)
    assert lhe.correctness_experiment(p, 10_000, Random(15), lhe.STAND_IN) == 0.0
    assert lhe.correctness_experiment(p, 50, Random(16)) == 0.0


def test_correctness_small_cluster_against_exact():
    p = LheParams(N=100, n=4, t=2, f_live=1 / 8)
    trials = 100_000
    rate = lhe.correctness_experiment(p, trials, Random(17), lhe.STAND_IN)
    exact = lhe.exact_failure_probability(100, 4, 2, 1 / 8)
    assert rate <= lhe.correctness_bound(p)
    assert abs(rate - exact) <= 3 * math.sqrt(exact * (1 - exact) / trials)


def test_correctness_no_faults():
    p = LheParams(N=30, n=6, t=3, f_live=0.0)
    assert lhe.correctness_experiment(p, 200, Random(18), lhe.STAND_IN) == 0.0


# ------------------------------------------------------------------ cover

def _cover_oracle(lists, N, n, size, threshold):
    for subset in itertools.combinations(range(1, N + 1), size):
        s = set(subset)
        if sum(1 for L in lists if 2 * sum(x in s for x in L) >= n) > threshold:
            return True
    return False


def test_cover_exact_search_matches_brute_force():
    rng = Random(19)
    for _ in range(200):
        N, n, phi = 7, 3, 4
        lists = [[rng.randrange(1, N + 1) for _ in range(n)] for _ in range(phi)]
        size = rng.randrange(1, N)
        thr = rng.randrange(0, phi)
        assert lhe._exact_cover(lists, N, n, size, thr) == _cover_oracle(lists, N, n, size, thr)


def test_cover_trivial_cases():
    assert lhe.cover_probability(12, 4, 2, 0.5, 3 / 12, 50, Random(0)) == 0.0
    assert lhe.cover_probability(12, 4, 6, 1.0, 2 / 12, 50, Random(0)) == 1.0


def test_cover_heuristic_matches_exhaustive():
    seed = 20
    exact = lhe.cover_probability(12, 4, 6, 0.5, 2 / 12, 400, Random(seed), exact=True)
    heur = lhe.cover_probability(12, 4, 6, 0.5, 2 / 12, 400, Random(seed), exact=False)
    assert abs(exact - heur) <= 0.02
    exact = lhe.cover_probability(12, 4, 6, 1 / 6, 2 / 12, 400, Random(seed), exact=True)
    heur = lhe.cover_probability(12, 4, 6, 1 / 6, 2 / 12, 400, Random(seed), exact=False)
    assert 0 < exact < 1 and abs(exact - heur) <= 0.02
