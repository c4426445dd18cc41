"""Discrete-event trial simulator for feed-forward multiplexing with a
storage loop, used to validate the closed forms in :mod:`qibsim.rates`.

Process model per trial:

- Wait a geometric number of pulses (>= 1) for the first pair.
- For each subsequent pair, the stored photons circulate while the source
  gets one herald chance per roundtrip.  The chance window spans roundtrips
  j = 0..M (so M+1 chances); a herald at roundtrip j costs j+1 pulses and
  charges the waiting pair with eta**(j+2) survival (j waiting roundtrips
  plus in-coupling and interference).  If the whole window passes unheralded
  the attempt is abandoned at a cost of M+1 pulses.
- The final pair is charged eta**2 (interference plus out-coupling).

Success means every pair survived.  ``empirical_P_N`` multiplies the
per-attempt success fraction by p so it estimates the same quantity as
``rates.pN_lossy`` (which includes the first-herald probability); the mean
attempt duration correspondingly matches ``rates.t_qib`` evaluated with a
window of M+1.

Loss is Bernoulli deletion, exactly equivalent to the beamsplitter model
for single-photon number states.  Detector efficiency and the interference
post-selection factor 2**-(N-1) are folded in analytically by default;
``sample_detection`` switches to sampling them.  Aggregation uses integer
accumulators only, so results are independent of batch partitioning
bit-for-bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterator, Optional

import numpy as np

from . import rates
from .rates import RateParams

__all__ = [
    "TrialConfig",
    "TrialOutcome",
    "MonteCarloResult",
    "WaitingTimeHistogram",
    "wilson_interval",
    "expected_attempt_pulses",
    "analytic_P_N",
    "analytic_rate",
    "simulate_trial",
    "run_trials",
    "waiting_time_histogram",
]

_Z95 = 1.959963984540054


@dataclass(frozen=True)
class TrialConfig:
    params: RateParams
    rng_seed: int = 0
    n_trials: int = 100_000
    max_switch_rate: Optional[float] = None
    relative_multiplexing: bool = True
    per_pair_restart: bool = False
    detector_efficiency: float = 1.0
    include_postselection: bool = False
    sample_detection: bool = False
    dark_count_prob: float = 0.0

    def __post_init__(self) -> None:
        if self.n_trials <= 0:
            raise ValueError(f"n_trials must be positive, got {self.n_trials}")
        if self.rng_seed < 0:
            raise ValueError(f"rng_seed must be non-negative, got {self.rng_seed}")
        if self.max_switch_rate is not None and self.max_switch_rate <= 0.0:
            raise ValueError(f"max_switch_rate must be positive, got {self.max_switch_rate}")
        if not 0.0 <= self.detector_efficiency <= 1.0:
            raise ValueError(f"detector_efficiency out of range: {self.detector_efficiency}")
        if not 0.0 <= self.dark_count_prob <= 1.0:
            raise ValueError(f"dark_count_prob out of range: {self.dark_count_prob}")


@dataclass(frozen=True)
class TrialOutcome:
    success: bool
    pulses_elapsed: int
    pair_waits: tuple
    surviving_photons: int


@dataclass(frozen=True)
class MonteCarloResult:
    n_trials: int
    successes: int
    empirical_P_N: float
    sigma_P_N: float
    ci_low: float
    ci_high: float
    mean_wait: float
    sigma_wait: float
    mean_attempt_pulses: float
    rate: float
    detected_P_N: float

    def as_dict(self) -> dict:
        return {
            "n_trials": self.n_trials,
            "successes": self.successes,
            "empirical_P_N": self.empirical_P_N,
            "sigma_P_N": self.sigma_P_N,
            "ci_low": self.ci_low,
            "ci_high": self.ci_high,
            "mean_wait": self.mean_wait,
            "sigma_wait": self.sigma_wait,
            "mean_attempt_pulses": self.mean_attempt_pulses,
            "rate": self.rate,
            "detected_P_N": self.detected_P_N,
        }


@dataclass(frozen=True)
class WaitingTimeHistogram:
    first_values: np.ndarray
    first_counts: np.ndarray
    attempt_values: np.ndarray
    attempt_counts: np.ndarray
    mean_first: float
    sem_first: float
    mean_attempt: float
    sem_attempt: float


def wilson_interval(successes: int, trials: int, z: float = _Z95) -> tuple:
    """Wilson score interval for a binomial fraction."""
    if trials <= 0:
        raise ValueError("trials must be positive")
    if not 0 <= successes <= trials:
        raise ValueError("successes out of range")
    phat = successes / trials
    denom = 1.0 + z * z / trials
    center = (phat + z * z / (2 * trials)) / denom
    half = z * math.sqrt(phat * (1.0 - phat) / trials + z * z / (4 * trials * trials)) / denom
    # the degenerate edges are exact; avoid losing them to rounding
    lo = 0.0 if successes == 0 else max(0.0, center - half)
    hi = 1.0 if successes == trials else min(1.0, center + half)
    return (lo, hi)


def expected_attempt_pulses(config: TrialConfig) -> float:
    """Exact mean duration of one simulated attempt, in pulses."""
    p, M, N = config.params.p, config.params.M, config.params.N
    if config.per_pair_restart:
        # every wait is an unbounded geometric with mean 1/p
        return N / p
    return rates.t_qib(p, M + 1, N)


def _detection_factor(config: TrialConfig) -> float:
    N = config.params.N
    factor = config.detector_efficiency ** (2 * N)
    if config.include_postselection:
        factor *= 0.5 ** (N - 1)
    return factor


def analytic_P_N(config: TrialConfig) -> float:
    """Closed-form counterpart of ``empirical_P_N`` for this configuration."""
    p, eta, M, N = (
        config.params.p,
        config.params.eta,
        config.params.M,
        config.params.N,
    )
    if config.per_pair_restart:
        if eta == 0.0:
            per_pair = 0.0
        else:
            per_pair = eta**2 * p / (1.0 - (1.0 - p) * eta)
        value = p * eta**2 * per_pair ** (N - 1)
    elif not config.relative_multiplexing:
        # stored pairs are held for the whole window before release
        per_pair = rates.p1(p, M + 1) * eta ** (M + 3)
        value = p * eta**2 * per_pair ** (N - 1)
    else:
        value = rates.pN_lossy(p, eta, M, N)
    # detection factors live in detected_P_N, not here
    return value


def analytic_rate(config: TrialConfig) -> float:
    """Closed-form counterpart of the aggregate ``rate``."""
    value = config.params.f * (analytic_P_N(config) / config.params.p)
    value /= expected_attempt_pulses(config)
    if config.max_switch_rate is not None:
        value = min(value, config.max_switch_rate)
    return value


def _rng_for(config: TrialConfig) -> np.random.Generator:
    # counter-based generator: splittable, deterministic per seed
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(config.rng_seed)))


def _draw_arrays(config: TrialConfig, rng: np.random.Generator) -> dict:
    """Sample every random variate up front with a fixed layout."""
    p, N = config.params.p, config.params.N
    n = config.n_trials
    first_wait = rng.geometric(p, size=n).astype(np.int64)
    waits = rng.geometric(p, size=(n, N - 1)).astype(np.int64) - 1
    survival_u = rng.random(size=(n, N))
    return {"first_wait": first_wait, "waits": waits, "survival_u": survival_u}


def _resolve_trials(config: TrialConfig, arrays: dict) -> dict:
    p, eta, M, N = (
        config.params.p,
        config.params.eta,
        config.params.M,
        config.params.N,
    )
    first_wait = arrays["first_wait"]
    waits = arrays["waits"]
    survival_u = arrays["survival_u"]
    n = first_wait.shape[0]

    if N == 1:
        pulses = first_wait.copy()
        success = survival_u[:, 0] < eta**2
        heralded = np.zeros((n, 0), dtype=bool)
        costs = np.zeros((n, 0), dtype=np.int64)
        stored_alive = np.zeros((n, 0), dtype=bool)
        return {
            "pulses": pulses,
            "success": success,
            "heralded": heralded,
            "costs": costs,
            "stored_alive": stored_alive,
            "last_alive": success,
        }

    if config.per_pair_restart:
        timeout = np.zeros_like(waits, dtype=bool)
    else:
        timeout = waits > M
    any_timeout = timeout.any(axis=1)
    first_timeout = np.where(any_timeout, np.argmax(timeout, axis=1), N - 2)
    columns = np.arange(N - 1)
    valid = columns[None, :] <= first_timeout[:, None]
    heralded = valid & ~timeout
    costs = np.where(timeout, M + 1, waits + 1)
    pulses = first_wait + (costs * valid).sum(axis=1)

    if config.relative_multiplexing or config.per_pair_restart:
        survive_p = eta ** (waits + 2.0)
    else:
        survive_p = np.full_like(waits, eta ** (M + 3.0), dtype=float)
    stored_alive = survival_u[:, : N - 1] < survive_p
    last_alive = survival_u[:, N - 1] < eta**2
    success = ~any_timeout & stored_alive.all(axis=1) & last_alive
    return {
        "pulses": pulses,
        "success": success,
        "heralded": heralded,
        "costs": costs,
        "stored_alive": stored_alive,
        "last_alive": last_alive,
    }


def _apply_sampled_detection(
    config: TrialConfig, success: np.ndarray, rng: np.random.Generator
) -> np.ndarray:
    N = config.params.N
    n = success.shape[0]
    detected = rng.random(size=(n, 2 * N)) < config.detector_efficiency
    keep = detected.all(axis=1)
    if config.include_postselection:
        keep &= rng.random(size=n) < 0.5 ** (N - 1)
    return success & keep


def run_trials(config: TrialConfig, batch_size: Optional[int] = None) -> MonteCarloResult:
    """Simulate ``config.n_trials`` attempts and aggregate the statistics."""
    if config.dark_count_prob != 0.0:
        raise NotImplementedError("dark counts are a hook only; set dark_count_prob=0")
    params = config.params
    rng = _rng_for(config)
    arrays = _draw_arrays(config, rng)
    resolved = _resolve_trials(config, arrays)
    success = resolved["success"]
    if config.sample_detection:
        success = _apply_sampled_detection(config, success, rng)

    n = config.n_trials
    if batch_size is None or batch_size >= n:
        batch_size = n
    # integer accumulators keep the reduction exact under any partitioning
    successes = 0
    sum_pulses = 0
    sum_waits = 0
    sum_waits_sq = 0
    count_waits = 0
    for start in range(0, n, batch_size):
        stop = min(start + batch_size, n)
        successes += int(success[start:stop].sum())
        sum_pulses += int(resolved["pulses"][start:stop].sum())
        waits = resolved["costs"][start:stop][resolved["heralded"][start:stop]]
        sum_waits += int(waits.sum())
        sum_waits_sq += int((waits * waits).sum())
        count_waits += int(waits.size)

    shat = successes / n
    empirical = params.p * shat
    sigma = params.p * math.sqrt(shat * (1.0 - shat) / n)
    lo, hi = wilson_interval(successes, n)
    mean_attempt = sum_pulses / n
    if count_waits > 0:
        mean_wait = sum_waits / count_waits
    else:
        mean_wait = 0.0
    if count_waits > 1:
        var = (sum_waits_sq - sum_waits * sum_waits / count_waits) / (count_waits - 1)
        sigma_wait = math.sqrt(max(0.0, var) / count_waits)
    else:
        sigma_wait = 0.0
    rate = params.f * shat / mean_attempt
    if config.max_switch_rate is not None:
        rate = min(rate, config.max_switch_rate)
    if config.sample_detection:
        detected = empirical
    else:
        detected = empirical * _detection_factor(config)
    return MonteCarloResult(
        n_trials=n,
        successes=successes,
        empirical_P_N=empirical,
        sigma_P_N=sigma,
        ci_low=params.p * lo,
        ci_high=params.p * hi,
        mean_wait=mean_wait,
        sigma_wait=sigma_wait,
        mean_attempt_pulses=mean_attempt,
        rate=rate,
        detected_P_N=detected,
    )


def waiting_time_histogram(config: TrialConfig) -> WaitingTimeHistogram:
    """Distributions of the first-pair wait and the whole attempt duration."""
    if config.dark_count_prob != 0.0:
        raise NotImplementedError("dark counts are a hook only; set dark_count_prob=0")
    rng = _rng_for(config)
    arrays = _draw_arrays(config, rng)
    resolved = _resolve_trials(config, arrays)
    first_wait = arrays["first_wait"]
    pulses = resolved["pulses"]

    first_values, first_counts = np.unique(first_wait, return_counts=True)
    attempt_values, attempt_counts = np.unique(pulses, return_counts=True)
    n = config.n_trials
    mean_first = float(first_wait.mean())
    mean_attempt = float(pulses.mean())
    sem_first = float(first_wait.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    sem_attempt = float(pulses.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    return WaitingTimeHistogram(
        first_values=first_values,
        first_counts=first_counts,
        attempt_values=attempt_values,
        attempt_counts=attempt_counts,
        mean_first=mean_first,
        sem_first=sem_first,
        mean_attempt=mean_attempt,
        sem_attempt=sem_attempt,
    )


def simulate_trial(config: TrialConfig, rng: np.random.Generator) -> TrialOutcome:
    """Single-trial reference implementation of the same process."""
    p, eta, M, N = (
        config.params.p,
        config.params.eta,
        config.params.M,
        config.params.N,
    )
    pulses = int(rng.geometric(p))
    pair_waits = []
    survivors = 0
    for _ in range(N - 1):
        j = int(rng.geometric(p)) - 1
        if not config.per_pair_restart and j > M:
            pulses += M + 1
            return TrialOutcome(False, pulses, tuple(pair_waits), 0)
        pulses += j + 1
        pair_waits.append(j + 1)
        if config.relative_multiplexing or config.per_pair_restart:
            survive_p = eta ** (j + 2)
        else:
            survive_p = eta ** (M + 3)
        if rng.random() < survive_p:
            survivors += 1
    last_ok = rng.random() < eta**2
    if last_ok:
        survivors += 1
    success = last_ok and survivors == N
    return TrialOutcome(success, pulses, tuple(pair_waits), 2 * survivors)
