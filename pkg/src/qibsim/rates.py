"""Closed-form production probabilities, waiting times, and rates for
feed-forward time multiplexing with a storage loop.

Conventions carried throughout: p is the per-pulse pair probability, eta the
roundtrip transmission of the loop, M the maximum number of storage
roundtrips granted while waiting for the next pair, N the number of pairs
(2N photons), f the source clock frequency.

Each photon is charged one factor of eta per waiting roundtrip plus two fixed
factors (in-coupling and interference for the early photons, interference and
out-coupling for the last), which is what the statevec-level device model
charges as well.

Every series has a closed form; the naive summations are kept behind
``debug_series`` flags since the tests use them as oracles.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Iterable, Sequence

__all__ = [
    "RateParams",
    "p2_lossless",
    "pN_lossless",
    "pN_lossy",
    "eta_threshold",
    "p1",
    "mean_wait",
    "t_tm",
    "t_qib",
    "rate_spatial",
    "rate_tm",
    "rate_qib",
    "rate_enhancement",
    "spatial_enhancement",
    "optimize_M",
    "equal_rate_pair_probability",
]


def _check_p(p: float, allow_zero: bool = False, allow_one: bool = True) -> None:
    low_ok = p > 0.0 or (allow_zero and p == 0.0)
    high_ok = p < 1.0 or (allow_one and p == 1.0)
    if not (low_ok and high_ok):
        raise ValueError(f"pair probability out of range: {p}")


def _check_eta(eta: float) -> None:
    if not 0.0 <= eta <= 1.0:
        raise ValueError(f"transmission out of range: {eta}")


def _check_M(M: int) -> None:
    if M < 0 or int(M) != M:
        raise ValueError(f"storage depth must be a non-negative integer, got {M}")


def _check_N(N: int) -> None:
    if N < 1 or int(N) != N:
        raise ValueError(f"pair count must be a positive integer, got {N}")


@dataclass(frozen=True)
class RateParams:
    """Parameter bundle for the rate model."""

    p: float
    eta: float = 1.0
    M: int = 0
    N: int = 1
    f: float = 76e6

    def __post_init__(self):
        _check_p(self.p)
        _check_eta(self.eta)
        _check_M(self.M)
        _check_N(self.N)
        if self.f <= 0.0:
            raise ValueError(f"clock frequency must be positive, got {self.f}")

    def with_M(self, M: int) -> "RateParams":
        return replace(self, M=M)


def _pow_1mp(p: float, k: int) -> float:
    # (1-p)^k via log1p, stable for small p and large k
    if p == 1.0:
        return 1.0 if k == 0 else 0.0
    return math.exp(k * math.log1p(-p))


def p2_lossless(p: float, M: int, debug_series: bool = False) -> float:
    """Probability of a second pair within M+1 chances of the first."""
    _check_p(p)
    _check_M(M)
    if debug_series:
        return p * sum((1.0 - p) ** j * p for j in range(M + 1))
    return p * -math.expm1((M + 1) * math.log1p(-p)) if p < 1.0 else 1.0


def pN_lossless(p: float, M: int, N: int, debug_series: bool = False) -> float:
    """Probability of N pairs, each follower granted M+1 chances."""
    _check_p(p)
    _check_M(M)
    _check_N(N)
    if debug_series:
        return p * sum(p * (1.0 - p) ** j for j in range(M + 1)) ** (N - 1)
    if p == 1.0:
        return 1.0
    window = -math.expm1((M + 1) * math.log1p(-p))
    return p * window ** (N - 1)


def pN_lossy(p: float, eta: float, M: int, N: int, debug_series: bool = False) -> float:
    """Lossy N-pair probability: each wait roundtrip costs eta, each photon
    additionally pays its in/out coupling pair eta^2."""
    _check_p(p)
    _check_eta(eta)
    _check_M(M)
    _check_N(N)
    if debug_series:
        inner = sum(p * (1.0 - p) ** j * eta**j for j in range(M + 1))
        return p * eta**2 * (eta**2 * inner) ** (N - 1)
    if eta == 0.0:
        return 0.0
    if p == 1.0:
        return eta ** (2 * N)
    log_qe = math.log1p(-p) + math.log(eta)
    numerator = -math.expm1((M + 1) * log_qe)
    denominator = -math.expm1(log_qe)
    ratio = numerator / denominator
    return p**N * eta ** (2 * N) * ratio ** (N - 1)


def eta_threshold(p: float) -> float:
    """Loop transmission above which the large-M, large-N scaling beats
    firing all sources at once."""
    _check_p(p, allow_zero=True)
    return (p - 1.0 + math.sqrt(p * p - 2.0 * p + 5.0)) / 2.0


def p1(p: float, M: int) -> float:
    """Probability of at least one pair within M pulses."""
    _check_p(p)
    _check_M(M)
    return -math.expm1(M * math.log1p(-p)) if p < 1.0 else (0.0 if M == 0 else 1.0)


def mean_wait(p: float, M: int, debug_series: bool = False) -> float:
    """Mean pulses until a pair, conditioned on one arriving within M pulses."""
    _check_p(p)
    if M < 1 or int(M) != M:
        raise ValueError(f"waiting window must be a positive integer, got {M}")
    if debug_series:
        num = sum((j + 1) * (1.0 - p) ** j * p for j in range(M))
        den = sum((1.0 - p) ** j * p for j in range(M))
        return num / den
    if p == 1.0 or M == 1:
        return 1.0
    q = 1.0 - p
    q_M = _pow_1mp(p, M)
    numerator = 1.0 - (M + 1) * q_M + M * q_M * q
    denominator = p * (1.0 - q_M)
    return numerator / denominator


def t_tm(p: float, N: int) -> float:
    """Mean pulses per attempt for time multiplexing without feed-forward."""
    _check_p(p)
    _check_N(N)
    num = sum(p ** (q - 1) * q * (1.0 - p) for q in range(1, N + 1)) + p**N * N
    den = sum(p ** (q - 1) * (1.0 - p) for q in range(1, N + 1)) + p**N
    return num / den


def t_qib(p: float, M: int, N: int) -> float:
    """Mean pulses per attempt with the storage loop and feed-forward.

    First term is the unconditional wait for the first pair; the fraction
    averages the per-attempt progress over the stage at which the attempt
    either times out (costing the full window M) or completes.
    """
    if p <= 0.0:
        raise ValueError("pair probability must be positive for waiting times")
    _check_p(p)
    _check_M(M)
    _check_N(N)
    P1 = p1(p, M)
    avg = mean_wait(p, M) if M >= 1 else 0.0
    num = sum(P1 ** (q - 1) * ((q - 1) * avg + M) * (1.0 - P1) for q in range(1, N))
    num += P1 ** (N - 1) * (N - 1) * avg
    den = sum(P1 ** (q - 1) * (1.0 - P1) for q in range(1, N)) + P1 ** (N - 1)
    return 1.0 / p + num / den


def rate_spatial(f: float, p: float, N: int) -> float:
    """Events per second for N simultaneously fired sources."""
    _check_p(p)
    _check_N(N)
    return f * p**N


def rate_tm(f: float, p: float, eta: float, N: int) -> float:
    """Events per second for plain time multiplexing, each photon paying
    the same two coupling losses."""
    _check_eta(eta)
    return f * (p * eta**2) ** N / t_tm(p, N)


def _success_given_first(p: float, eta: float, M: int, N: int) -> float:
    # First pair folded into the waiting time, so one factor of p drops out.
    if eta == 1.0:
        return p1(p, M) ** (N - 1)
    return pN_lossy(p, eta, M, N) / p


def rate_qib(params: RateParams) -> float:
    """Events per second with the storage loop: f * P_N / t_qib, with the
    first pair accounted in the waiting time rather than in P_N."""
    P_N = _success_given_first(params.p, params.eta, params.M, params.N)
    return params.f * P_N / t_qib(params.p, params.M, params.N)


def rate_enhancement(params: RateParams, baseline_M: int = 0) -> float:
    """Rate gain of running the loop at depth params.M versus baseline_M."""
    return rate_qib(params) / rate_qib(params.with_M(baseline_M))


def spatial_enhancement(p: float, eta: float, M: int, N: int) -> float:
    """Probability gain over N simultaneous sources, p^N."""
    return pN_lossy(p, eta, M, N) / p**N


def optimize_M(p: float, eta: float, N: int, f: float, m_range: Iterable[int] = range(0, 201)) -> tuple[int, float]:
    """Scan the storage depth and return (argmax, best rate); ties resolve
    to the smallest depth."""
    best_M = None
    best_rate = -math.inf
    for M in m_range:
        rate = rate_qib(RateParams(p=p, eta=eta, M=M, N=N, f=f))
        if rate > best_rate:
            best_M, best_rate = M, rate
    if best_M is None:
        raise ValueError("empty scan range")
    return best_M, best_rate


def equal_rate_pair_probability(
    p_S: float,
    eta: float,
    N: int,
    self_consistent: bool = True,
    tol: float = 1e-12,
    max_iterations: int = 10_000,
) -> tuple[float, float]:
    """Pair probabilities that match the N-pair rate of sources firing at p_S.

    Returns (p_TM, p_QIB).  The plain time-multiplexed source must run hotter
    by the coupling losses, p_TM = p_S/eta^2.  The feed-forward source (large
    M limit) can run colder; the p appearing inside its geometric factor is
    solved by fixed-point iteration unless ``self_consistent`` is false, in
    which case p_S is substituted directly.
    """
    _check_p(p_S)
    _check_eta(eta)
    _check_N(N)
    if eta == 0.0:
        raise ValueError("transmission must be positive")
    p_tm = p_S / eta**2
    exponent = (N - 1) / N

    def step(p_inner: float) -> float:
        return (p_S / eta**2) * (1.0 - (1.0 - p_inner) * eta) ** exponent

    if not self_consistent:
        return p_tm, step(p_S)
    p_fixed = p_S
    for _ in range(max_iterations):
        next_p = step(p_fixed)
        if abs(next_p - p_fixed) <= tol:
            return p_tm, next_p
        p_fixed = next_p
    raise ValueError("fixed point iteration did not converge")
