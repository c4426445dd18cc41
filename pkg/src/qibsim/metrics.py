"""Estimators used to score the entanglement experiments.

The GHZ fidelity is the average of a population term (events in the all-H and
all-V bins) and a coherence term built from four joint measurements in the
equatorial bases rotated by k*pi/4.  Count tables may hold either raw event
counts or exact Born probabilities; the estimators only need a positive total.

Error bars follow Poissonian counting statistics.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

import numpy as np

from . import statevec as sv
from .statevec import H, V, PORT_IN, ModeLabel, SparseState

__all__ = [
    "CoherenceSetting",
    "CountTable",
    "coherence_settings",
    "ghz_population",
    "population_stderr",
    "coherence_expectation",
    "expectation_stderr",
    "ghz_coherence",
    "coherence_stderr",
    "ghz_fidelity",
    "ghz_fidelity_stderr",
    "process_fidelity",
    "mu1",
    "born_probabilities",
    "sample_counts",
    "average_qubit_fidelity",
    "CARDINAL_STATES",
]

SQRT_HALF = math.sqrt(0.5)

# single-qubit probe states used for average channel fidelity
CARDINAL_STATES = (
    ("H", (1.0, 0.0)),
    ("V", (0.0, 1.0)),
    ("D", (SQRT_HALF, SQRT_HALF)),
    ("A", (SQRT_HALF, -SQRT_HALF)),
    ("R", (SQRT_HALF, SQRT_HALF * 1j)),
    ("L", (SQRT_HALF, -SQRT_HALF * 1j)),
)


@dataclass(frozen=True)
class CoherenceSetting:
    """One of the four equatorial measurement settings, theta_k = k*pi/4."""

    k: int

    def __post_init__(self) -> None:
        if self.k not in (0, 1, 2, 3):
            raise ValueError(f"setting index must be one of 0..3, got {self.k}")

    @property
    def angle(self) -> float:
        return self.k * math.pi / 4.0

    def operator(self) -> np.ndarray:
        theta = self.angle
        sigma_x = np.array([[0.0, 1.0], [1.0, 0.0]], dtype=complex)
        sigma_y = np.array([[0.0, -1.0j], [1.0j, 0.0]], dtype=complex)
        return math.cos(theta) * sigma_x + math.sin(theta) * sigma_y

    def analyzer(self) -> np.ndarray:
        """Jones matrix sending the +1/-1 eigenvectors to H/V."""
        phase = np.exp(-1.0j * self.angle)
        return np.array([[1.0, phase], [1.0, -phase]], dtype=complex) * SQRT_HALF


def coherence_settings() -> tuple:
    return tuple(CoherenceSetting(k) for k in range(4))


@dataclass(frozen=True)
class CountTable:
    """Measured events per basis outcome, e.g. {"HHHH": 412, ...}."""

    counts: Mapping[str, int]

    def __post_init__(self) -> None:
        for outcome, count in self.counts.items():
            if not isinstance(count, (int, np.integer)) or isinstance(count, bool):
                raise ValueError(f"count for {outcome!r} must be an integer, got {count!r}")
            if count < 0:
                raise ValueError(f"count for {outcome!r} is negative: {count}")
        object.__setattr__(self, "counts", dict(self.counts))

    def total(self) -> int:
        return sum(self.counts.values())

    def items(self):
        return self.counts.items()

    def keys(self):
        return self.counts.keys()

    def values(self):
        return self.counts.values()

    def get(self, outcome: str, default=0):
        return self.counts.get(outcome, default)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as handle:
            writer = csv.writer(handle)
            writer.writerow(["outcome", "count"])
            for outcome in sorted(self.counts):
                writer.writerow([outcome, self.counts[outcome]])

    @classmethod
    def from_csv(cls, path) -> "CountTable":
        counts = {}
        with open(path, newline="") as handle:
            reader = csv.reader(handle)
            header = next(reader, None)
            if header != ["outcome", "count"]:
                raise ValueError(f"unexpected count-table header: {header!r}")
            for row in reader:
                if len(row) != 2:
                    raise ValueError(f"malformed count-table row: {row!r}")
                counts[row[0]] = int(row[1])
        return cls(counts)


def _total(counts: Mapping[str, float]) -> float:
    total = sum(counts.values())
    if total <= 0.0:
        raise ValueError("count table has no events")
    return total


def ghz_population(counts: Mapping[str, float]) -> float:
    """Fraction of events in the all-H or all-V outcome."""
    total = _total(counts)
    lengths = {len(outcome) for outcome in counts.keys()}
    if len(lengths) != 1:
        raise ValueError(f"outcomes disagree on photon number: {sorted(lengths)}")
    n = lengths.pop()
    return (counts.get(H * n, 0.0) + counts.get(V * n, 0.0)) / total


def population_stderr(counts: Mapping[str, float]) -> float:
    total = _total(counts)
    population = ghz_population(counts)
    return math.sqrt(population * (1.0 - population) / total)


def _parity(outcome: str) -> int:
    return -1 if outcome.count(V) % 2 else 1


def coherence_expectation(counts: Mapping[str, float]) -> float:
    """<M_k ... M_k> from counts taken in the rotated basis: parity average."""
    total = _total(counts)
    return sum(_parity(outcome) * count for outcome, count in counts.items()) / total


def expectation_stderr(counts: Mapping[str, float]) -> float:
    total = _total(counts)
    value = coherence_expectation(counts)
    return math.sqrt(max(0.0, 1.0 - value * value) / total)


def ghz_coherence(tables: Sequence[Mapping[str, float]]) -> float:
    """Alternating-sign average of the four rotated-basis expectations."""
    if len(tables) != 4:
        raise ValueError(f"need the four settings k=0..3, got {len(tables)} tables")
    return sum((-1) ** k * coherence_expectation(table) for k, table in enumerate(tables)) / 4.0


def coherence_stderr(tables: Sequence[Mapping[str, float]]) -> float:
    if len(tables) != 4:
        raise ValueError(f"need the four settings k=0..3, got {len(tables)} tables")
    return math.sqrt(sum(expectation_stderr(table) ** 2 for table in tables)) / 4.0


def ghz_fidelity(population: float, coherence: float) -> float:
    if not -1.0 <= population <= 1.0:
        raise ValueError(f"population out of range: {population}")
    if not -1.0 <= coherence <= 1.0:
        raise ValueError(f"coherence out of range: {coherence}")
    return (population + coherence) / 2.0


def ghz_fidelity_stderr(population_err: float, coherence_err: float) -> float:
    return math.hypot(population_err, coherence_err) / 2.0


def process_fidelity(f_avg: float) -> float:
    if not 0.0 <= f_avg <= 1.0:
        raise ValueError(f"average fidelity out of range: {f_avg}")
    return (3.0 * f_avg - 1.0) / 2.0


def mu1(noise_photons_per_gate: float, memory_efficiency: float) -> float:
    if memory_efficiency <= 0.0:
        raise ValueError(f"memory efficiency must be positive, got {memory_efficiency}")
    if noise_photons_per_gate < 0.0:
        raise ValueError(f"noise photon number is negative: {noise_photons_per_gate}")
    return noise_photons_per_gate / memory_efficiency


def born_probabilities(
    state: SparseState,
    sites: Sequence,
    analyzer: np.ndarray | None = None,
) -> dict:
    """Exact outcome probabilities for one polarization qubit per site.

    With an analyzer Jones matrix the photons are measured in the basis that
    the analyzer maps onto H/V.
    """
    rotated = state
    if analyzer is not None:
        for site in sites:
            rotated = sv.apply_jones(rotated, site, analyzer)
    amplitudes = sv.qubit_amplitudes(rotated, sites)
    return {outcome: abs(amp) ** 2 for outcome, amp in amplitudes.items()}


def sample_counts(probabilities: Mapping[str, float], shots: int, seed: int) -> CountTable:
    if shots <= 0:
        raise ValueError(f"need a positive number of shots, got {shots}")
    outcomes = sorted(probabilities)
    weights = np.array([probabilities[outcome] for outcome in outcomes], dtype=float)
    if weights.min() < -1e-12:
        raise ValueError("negative probability in table")
    weights = np.clip(weights, 0.0, None)
    weights = weights / weights.sum()
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))
    drawn = rng.multinomial(shots, weights)
    return CountTable({outcome: int(n) for outcome, n in zip(outcomes, drawn) if n > 0})


def average_qubit_fidelity(
    channel: Callable[[SparseState], SparseState],
    site=(0, PORT_IN),
) -> tuple:
    """Mean and standard deviation of fidelity over the six cardinal states.

    The channel must return a normalized state on the same site (post-select
    and relabel first if it is lossy).
    """
    time_bin, port = site
    fidelities = []
    for _, (amp_h, amp_v) in CARDINAL_STATES:
        terms = []
        if amp_h:
            terms.append(({ModeLabel(time_bin, port, H): 1}, amp_h))
        if amp_v:
            terms.append(({ModeLabel(time_bin, port, V): 1}, amp_v))
        probe = SparseState.from_terms(terms)
        fidelities.append(sv.fidelity(channel(probe), probe))
    values = np.array(fidelities)
    return float(values.mean()), float(values.std())
