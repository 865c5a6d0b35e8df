"""Adversaries used as test oracles.

* :func:`leaked_slot_keys` and :func:`decrypt_with_leaks` model an attacker
  who holds HSM root keys plus every block the provider ever stored.
* :func:`pin_sweep_attack` is the generic attack that corrupts the cluster
  of one guessed PIN after another until its key budget runs out.
"""

from random import Random
from typing import Callable, Dict, Iterable, Optional, Sequence, Set

from . import lhe
from .crypto.elgamal import elgamal_decrypt
from .crypto.encoding import DecodeError
from .punc import BloomParams, PuncCiphertext, _slot_ad, slot_indices
from .sdstore import BlockServer, replay_recover

LeakedKeys = Dict[int, Set[int]]      # slot index -> candidate secret scalars


def leaked_slot_keys(store: BlockServer, root_keys: Iterable[bytes], height: int,
                     leaf_count: int) -> LeakedKeys:
    found = replay_recover(store.history, list(root_keys), height, leaf_count)
    return {leaf: {int.from_bytes(v, "big") for v in vals if len(v) == 32}
            for leaf, vals in found.items()}


def decrypt_with_leaks(ct: lhe.RecoveryCiphertext, user: bytes, ids: Sequence[int],
                       directory: Sequence[bytes], leaks: Dict[int, LeakedKeys],
                       params: lhe.LheParams, bloom: BloomParams) -> Optional[bytes]:
    """Try every leaked slot scalar of HSM ``ids[j-1]`` on every share slot ``j``."""
    cluster = tuple(directory[i - 1] for i in ids)
    shares = []
    for j, i in enumerate(ids, start=1):
        ctx = lhe.ShareContext(user, ct.salt, cluster, j)
        try:
            pct = PuncCiphertext.from_bytes(ct.share_cts[j - 1])
        except DecodeError:
            continue
        keys = leaks.get(i, {})
        plain = None
        for slot, body in zip(slot_indices(bloom, pct.epoch_id, pct.tag), pct.slot_cts):
            for x in keys.get(slot, ()):
                if not 0 < x:
                    continue
                try:
                    plain = elgamal_decrypt(x, _slot_ad(pct.epoch_id, pct.tag, slot, ctx.ad()), body)
                except ValueError:
                    plain = None
                if plain is not None:
                    break
            if plain is not None:
                break
        decoded = None if plain is None else lhe._decode_share(plain)
        if decoded is not None and decoded[0] == user and decoded[1].index == j:
            shares.append(lhe.PlaintextShare(user, decoded[1], ct.payload))
    return lhe.reconstruct(shares, params)


def pin_sweep_attack(ct: lhe.RecoveryCiphertext, user: bytes, mpk: lhe.MasterPublicKey,
                     params: lhe.LheParams, corrupt: Callable[[int], object], budget: int,
                     rng: Random) -> Optional[bytes]:
    """Guess PINs at random; corrupt each guess's whole cluster while the budget lasts."""
    corrupted: Dict[int, object] = {}
    tried: Set[int] = set()
    while len(tried) < params.pin_space:
        pin = rng.randrange(params.pin_space)
        if pin in tried:
            continue
        tried.add(pin)
        ids = lhe.select(ct.salt, pin, params)
        need = set(ids) - set(corrupted)
        if len(corrupted) + len(need) > budget:
            return None
        for i in sorted(need):
            corrupted[i] = corrupt(i)
        msg = lhe.recover_with_keys({i: corrupted[i] for i in ids}, mpk, ct, pin, user, params)
        if msg is not None:
            return msg
    return None


def corruption_budget(params: lhe.LheParams) -> int:
    return int(params.f_secret * params.N)


def pin_sweep_rate_estimate(params: lhe.LheParams) -> float:
    """The attack's advertised success rate ``f_secret * N / (n * |P|)``."""
    return params.f_secret * params.N / (params.n * params.pin_space)


def pin_sweep_experiment(params: lhe.LheParams, trials: int, rng: Random, pke=lhe.ELGAMAL) -> float:
    """Fraction of trials in which the PIN sweep names the encrypted message."""
    mpk, sks = lhe.generate_keys(params, rng, pke)
    user = b"target"
    budget = corruption_budget(params)
    wins = 0
    for _ in range(trials):
        msgs = [rng.randbytes(16), rng.randbytes(16)]
        bit = rng.randrange(2)
        ct = lhe.encrypt(mpk, lhe.random_salt(params, rng), lhe.random_pin(params, rng), user,
                         msgs[bit], params, rng)
        out = pin_sweep_attack(ct, user, mpk, params, sks.__getitem__, budget, rng)
        wins += out == msgs[bit]
    return wins / trials
