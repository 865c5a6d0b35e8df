"""Monte Carlo checks of the analytic bounds, one row per setting.

Every row carries the analytic value, the empirical estimate and the
binomial standard error of the estimate; a row passes when the two agree
within three standard errors (or the empirical value respects a stated
upper bound).
"""

import math
from dataclasses import dataclass
from random import Random
from typing import Callable, Dict, List

from . import lhe, logsync
from .punc import BloomParams, punc_decrypt, punc_encrypt, punc_keygen, puncture
from .sdstore import BlockServer


@dataclass
class BoundRow:
    check: str
    setting: str
    analytic: float
    empirical: float
    sigma: float
    passed: bool

    def csv(self) -> str:
        return (f"{self.check},{self.setting},{self.analytic:.6g},{self.empirical:.6g},"
                f"{self.sigma:.6g},{'pass' if self.passed else 'FAIL'}")


CSV_HEADER = "check,setting,analytic,empirical,sigma,result"


def binomial_sigma(p: float, trials: int) -> float:
    return math.sqrt(max(p * (1 - p), 0.0) / trials)


def within(analytic: float, empirical: float, trials: int, k: float = 3.0) -> tuple:
    sigma = binomial_sigma(analytic, trials)
    # A zero-variance prediction still allows one event of slack.
    return sigma, abs(empirical - analytic) <= max(k * sigma, 1 / trials)


def check_cover(trials: int, rng: Random) -> List[BoundRow]:
    rows = []
    for N, n, phi, alpha, beta_n in [(12, 4, 6, 0.5, 2), (12, 4, 3, 0.25, 2), (12, 4, 6, 1 / 6, 2)]:
        seed = rng.getrandbits(64)
        exact = lhe.cover_probability(N, n, phi, alpha, beta_n / N, trials, Random(seed), exact=True)
        greedy = lhe.cover_probability(N, n, phi, alpha, beta_n / N, trials, Random(seed), exact=False)
        sigma = binomial_sigma(exact, trials)
        rows.append(BoundRow("cover", f"N={N} n={n} phi={phi} alpha={alpha} betaN={beta_n}",
                             exact, greedy, sigma, abs(exact - greedy) <= max(3 * sigma, 0.02)))
    return rows


def check_audit(trials: int, rng: Random) -> List[BoundRow]:
    rows = []
    f = 1 / 16
    for N, C in [(16, 8), (16, 2)]:
        p = logsync.audit_miss_probability(N, C, f)
        emp = logsync.simulate_audit_miss(N, C, f, trials, rng)
        sigma, ok = within(p, emp, trials)
        rows.append(BoundRow("audit-miss", f"N={N} C={C} f=1/16", p, emp, sigma, ok))
    p = logsync.full_coverage_estimate(16, 8, f)
    emp = logsync.simulate_full_coverage(16, 8, f, trials, rng)
    sigma, ok = within(p, emp, trials)
    rows.append(BoundRow("audit-cover", "N=16 C=8 f=1/16", p, emp, sigma, ok))
    return rows


def bloom_curve(P: int, fail_exp: int, samples: int, rng: Random,
                points: List[int]) -> Dict[int, float]:
    """Empirical fresh-tag decryption failure rate after each count in ``points`` punctures."""
    params = BloomParams.for_punctures(P, fail_exp)
    store = BlockServer(keep_history=False)
    pk, sk = punc_keygen(params, rng, store)
    done = 0
    out = {}
    for target in sorted(points):
        while done < target:
            puncture(sk, b"punctured-%d" % done, store, rng)
            done += 1
        fails = 0
        for s in range(samples):
            tag = b"fresh-%d-%d" % (target, s)
            ct = punc_encrypt(pk, tag, b"m", rng)
            fails += punc_decrypt(sk, ct, store) is None
        out[target] = fails / samples
    return out


def check_bloom(trials: int, rng: Random, P: int = 1024, fail_exp: int = 4) -> List[BoundRow]:
    params = BloomParams.for_punctures(P, fail_exp)
    points = [P // 4, P // 2, P]
    curve = bloom_curve(P, fail_exp, trials, rng, points)
    rows = []
    for j in points:
        p = params.failure_rate(j)
        sigma, ok = within(p, curve[j], trials)
        rows.append(BoundRow("bloom", f"P={P} k={params.k} m={params.m} punctures={j}",
                             p, curve[j], sigma, ok))
    return rows


def check_correctness(trials: int, rng: Random, pke=lhe.ELGAMAL) -> List[BoundRow]:
    rows = []
    p = lhe.LheParams(N=100, n=40, t=20, f_live=1 / 64)
    emp = lhe.correctness_experiment(p, trials, rng, pke)
    bound = lhe.correctness_bound(p)
    sigma = binomial_sigma(bound, trials)
    rows.append(BoundRow("correctness", "N=100 n=40 t=20 f=1/64", bound, emp, sigma,
                         emp <= bound + 3 * sigma))
    p = lhe.LheParams(N=100, n=4, t=2, f_live=1 / 8)
    emp = lhe.correctness_experiment(p, trials, rng, lhe.STAND_IN)
    exact = lhe.exact_failure_probability(p.N, p.n, p.t, p.f_live)
    sigma, ok = within(exact, emp, trials)
    rows.append(BoundRow("correctness", "N=100 n=4 t=2 f=1/8", exact, emp, sigma,
                         ok and emp <= lhe.correctness_bound(p) + 3 * sigma))
    return rows


CHECKS: Dict[str, Callable[[int, Random], List[BoundRow]]] = {
    "cover": check_cover,
    "audit": check_audit,
    "bloom": check_bloom,
    "correctness": check_correctness,
}
