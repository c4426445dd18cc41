"""Experiment builders that drive a pair source through the storage loop.

Each builder prepares the heralded source emissions as a sparse photon-number
state, walks the loop bin by bin, and post-selects the detection pattern the
experiment accepts.  Success probabilities are conditioned on the heralded
emission pattern; herald detection itself is treated as ideal here (detector
imperfections belong to the trial simulator).

Conventions:

- GHZ: both photons of every pair are part of the state.  The partner photon
  sits at a ``herald`` site, the loop-side photon enters at ``in``.  The
  first pair is stored, each later pair interferes with the stored light on
  arrival, and the loop is emptied one bin after the last pair.
- Cluster: only the loop-side photon is kept; it arrives horizontally
  polarized and a plate at 22.5 degrees prepares the diagonal state.  The
  first photon enters through the interfering splitter (its reflected half
  is discarded, a 1/2 filter), and a rotation on the loop output accompanies
  every later interference and the final release.  The static variant keeps
  that rotation in the beam permanently and skips arrivals with odd waiting
  parity so the extra passes cancel pairwise.
- The controlled-phase gate and the two-photon interference scan act on
  explicitly provided or freshly prepared two-photon states.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import statevec as sv
from .qib import IDEAL_CONFIG, QibConfig, QibFunction, qib_step
from .statevec import (
    H,
    V,
    PORT_FROM,
    PORT_HERALD,
    PORT_IN,
    PORT_OUT,
    ModeLabel,
    SparseState,
    half_wave,
)

__all__ = [
    "TwoModeSqueezedTruncated",
    "SourceModel",
    "IDEAL_SOURCE",
    "ProtocolResult",
    "HomResult",
    "build_ghz",
    "build_cluster_dynamic",
    "build_cluster_static",
    "cphase",
    "hom_experiment",
    "CLUSTER_PLATE_ANGLE",
    "CPHASE_PLATE_ANGLE",
]

CLUSTER_PLATE_ANGLE = math.pi / 8
# the gate rotation is a half-wave plate at this angle composed with a
# polarization swap; _cphase_rotation carries the resulting Jones matrix
CPHASE_PLATE_ANGLE = math.acos(-math.sqrt(2.0 / 3.0)) / 2.0
CPHASE_ATTENUATION = 1.0 / 3.0


def _cphase_rotation() -> "np.ndarray":
    # H -> sqrt(1/3) H + sqrt(2/3) V, V -> -sqrt(2/3) H + sqrt(1/3) V
    c = math.sqrt(1.0 / 3.0)
    s = math.sqrt(2.0 / 3.0)
    return np.array([[c, -s], [s, c]], dtype=complex)


@dataclass(frozen=True)
class TwoModeSqueezedTruncated:
    max_pairs: int = 2

    def __post_init__(self) -> None:
        if self.max_pairs != 2:
            raise ValueError("only the two-pair truncation is implemented")


@dataclass(frozen=True)
class SourceModel:
    pair_probability: float = 0.0
    multipair: Optional[TwoModeSqueezedTruncated] = None
    herald_efficiency: float = 1.0
    mode_overlap: float = 1.0
    bell_phase: float = 0.0

    def __post_init__(self) -> None:
        if not 0.0 <= self.pair_probability < 1.0:
            raise ValueError(f"pair probability must lie in [0, 1), got {self.pair_probability}")
        if not 0.0 <= self.herald_efficiency <= 1.0:
            raise ValueError(f"herald efficiency out of range: {self.herald_efficiency}")
        if not 0.0 <= self.mode_overlap <= 1.0:
            raise ValueError(f"mode overlap out of range: {self.mode_overlap}")


IDEAL_SOURCE = SourceModel()


@dataclass(frozen=True)
class ProtocolResult:
    final_state: SparseState
    success_probability: float
    schedule: tuple
    photon_count: int
    output_sites: tuple
    herald_sites: tuple = ()
    ignored_sites: tuple = ()


@dataclass(frozen=True)
class HomResult:
    delays: tuple
    coincidences: tuple
    visibility: float


def _entangled_pair(source: SourceModel, time_bin: int) -> SparseState:
    """Heralded polarization-entangled pair, with the thermal two-pair term."""
    phase = complex(math.cos(source.bell_phase), math.sin(source.bell_phase))
    h_h = ModeLabel(time_bin, PORT_HERALD, H)
    h_v = ModeLabel(time_bin, PORT_HERALD, V)
    s_h = ModeLabel(time_bin, PORT_IN, H)
    s_v = ModeLabel(time_bin, PORT_IN, V)
    one = SparseState.from_terms(
        [
            ({h_h: 1, s_h: 1}, 1.0 / math.sqrt(2.0)),
            ({h_v: 1, s_v: 1}, phase / math.sqrt(2.0)),
        ]
    )
    if source.multipair is None:
        return one
    two = SparseState.from_terms(
        [
            ({h_h: 2, s_h: 2}, 1.0 / math.sqrt(3.0)),
            ({h_h: 1, h_v: 1, s_h: 1, s_v: 1}, phase / math.sqrt(3.0)),
            ({h_v: 2, s_v: 2}, phase * phase / math.sqrt(3.0)),
        ]
    )
    p = source.pair_probability
    scale = 1.0 / math.sqrt(1.0 + p)
    return one.scaled(scale).plus(two.scaled(math.sqrt(p) * scale))


def _heralded_horizontal(source: SourceModel, time_bin: int) -> SparseState:
    """Heralded horizontally polarized photon, with the thermal two-pair term."""
    s_h = ModeLabel(time_bin, PORT_IN, H)
    one = SparseState.single({s_h: 1})
    if source.multipair is None:
        return one
    p = source.pair_probability
    scale = 1.0 / math.sqrt(1.0 + p)
    two = SparseState.single({s_h: 2})
    return one.scaled(scale).plus(two.scaled(math.sqrt(p) * scale))


def _check_gaps(gaps: Optional[Sequence[int]], count: int) -> tuple:
    if gaps is None:
        gaps = (1,) * count
    gaps = tuple(int(g) for g in gaps)
    if len(gaps) != count:
        raise ValueError(f"expected {count} heralding gaps, got {len(gaps)}")
    if any(g < 1 for g in gaps):
        raise ValueError(f"heralding gaps must be >= 1, got {gaps}")
    return gaps


def _herald_bins(gaps: Sequence[int]) -> list:
    bins = [0]
    for gap in gaps:
        bins.append(bins[-1] + gap)
    return bins


def build_ghz(
    n_pairs: int,
    source: SourceModel = IDEAL_SOURCE,
    config: QibConfig = IDEAL_CONFIG,
    heralding_gaps: Optional[Sequence[int]] = None,
) -> ProtocolResult:
    """Fuse ``n_pairs`` entangled pairs into a 2N-photon GHZ state."""
    if n_pairs < 2:
        raise ValueError("GHZ generation needs at least two pairs")
    gaps = _check_gaps(heralding_gaps, n_pairs - 1)
    bins = _herald_bins(gaps)
    release_bin = bins[-1] + 1

    state = _entangled_pair(source, bins[0])
    for t in bins[1:]:
        state = state.tensor(_entangled_pair(source, t))

    schedule = []
    for t in range(release_bin + 1):
        if t == bins[0]:
            function = QibFunction.STORE_RELEASE
        elif t in bins[1:]:
            function = QibFunction.INTERFERE
        elif t == release_bin:
            function = QibFunction.STORE_RELEASE
        else:
            function = QibFunction.BUFFER
        schedule.append((t, function))
        state = qib_step(state, function, config, t)

    output_sites = tuple((t, PORT_OUT) for t in bins[1:]) + ((release_bin, PORT_OUT),)
    herald_sites = tuple((t, PORT_HERALD) for t in bins)
    selected = output_sites + herald_sites
    final, probability = sv.post_select(state, sv.one_photon_per_site(selected))
    return ProtocolResult(
        final_state=final,
        success_probability=probability,
        schedule=tuple(schedule),
        photon_count=2 * n_pairs,
        output_sites=output_sites,
        herald_sites=herald_sites,
    )


def _run_cluster(
    state: SparseState,
    config: QibConfig,
    accepted: Sequence[int],
    total_bins: int,
    rotation_bins,
) -> tuple:
    """Walk the loop for a cluster build; returns (state, schedule)."""
    release_bin = accepted[-1] + 1
    plate = half_wave(CLUSTER_PLATE_ANGLE)
    schedule = []
    for t in range(total_bins + 1):
        if t in accepted:
            function = QibFunction.INTERFERE
        elif t == release_bin:
            function = QibFunction.STORE_RELEASE
        else:
            function = QibFunction.BUFFER
        if rotation_bins is None or t in rotation_bins:
            state = sv.apply_waveplate(state, plate, (t, PORT_FROM))
        schedule.append((t, function))
        state = qib_step(state, function, config, t)
    return state, tuple(schedule)


def build_cluster_dynamic(
    n_photons: int,
    source: SourceModel = IDEAL_SOURCE,
    config: QibConfig = IDEAL_CONFIG,
    heralding_gaps: Optional[Sequence[int]] = None,
) -> ProtocolResult:
    """Chain ``n_photons`` diagonal photons into a linear cluster state.

    The loop-output rotation is switched on only while a stored photon is
    being interfered or released, which is what makes plain buffering an
    identity between arrivals.
    """
    if n_photons < 2:
        raise ValueError("cluster generation needs at least two photons")
    gaps = _check_gaps(heralding_gaps, n_photons - 1)
    bins = _herald_bins(gaps)
    release_bin = bins[-1] + 1

    state = _heralded_horizontal(source, bins[0])
    for t in bins[1:]:
        state = state.tensor(_heralded_horizontal(source, t))
    plate = half_wave(CLUSTER_PLATE_ANGLE)
    for t in bins:
        state = sv.apply_waveplate(state, plate, (t, PORT_IN))

    rotation_bins = set(bins[1:]) | {release_bin}
    state, schedule = _run_cluster(state, config, bins, release_bin, rotation_bins)

    output_sites = tuple((t, PORT_OUT) for t in bins[1:]) + ((release_bin, PORT_OUT),)
    final, probability = sv.post_select(state, sv.one_photon_per_site(output_sites))
    return ProtocolResult(
        final_state=final,
        success_probability=probability,
        schedule=schedule,
        photon_count=n_photons,
        output_sites=output_sites,
    )


def accepted_herald_bins(herald_pattern: Sequence[bool], limit: Optional[int] = None) -> tuple:
    """Apply the waiting-parity rule to a herald pattern.

    Returns (accepted bins, ignored bins).  A photon is accepted when an even
    number of cycles has passed since the previous acceptance; otherwise it
    passes straight through and the counter keeps running.
    """
    accepted = []
    ignored = []
    counter = 0
    for t, has_photon in enumerate(herald_pattern):
        done = limit is not None and len(accepted) >= limit
        if has_photon and not done and (not accepted or counter % 2 == 0):
            accepted.append(t)
            counter = 0
            continue
        if has_photon:
            ignored.append(t)
        if accepted:
            counter += 1
    return tuple(accepted), tuple(ignored)


def build_cluster_static(
    n_photons: int,
    source: SourceModel = IDEAL_SOURCE,
    config: QibConfig = IDEAL_CONFIG,
    herald_pattern: Sequence[bool] = (),
) -> ProtocolResult:
    """Cluster build with the loop-output rotation left in the beam.

    The rotation acts once per roundtrip, so photons arriving after an odd
    number of waiting cycles are ignored (they pass from ``in`` to ``out``
    untouched); between acceptances the double passes cancel.  Ignored
    photons stay in the reported state at their exit sites.
    """
    pattern = tuple(bool(x) for x in herald_pattern)
    if not pattern:
        raise ValueError("herald pattern must be nonempty")
    if n_photons < 2:
        raise ValueError("cluster generation needs at least two photons")
    accepted, ignored = accepted_herald_bins(pattern, limit=n_photons)
    if len(accepted) < n_photons:
        raise ValueError(
            f"pattern yields {len(accepted)} accepted photons, need {n_photons}"
        )
    release_bin = accepted[-1] + 1
    total_bins = max(len(pattern) - 1, release_bin)

    herald_bins = sorted(accepted + ignored)
    state = _heralded_horizontal(source, herald_bins[0])
    for t in herald_bins[1:]:
        state = state.tensor(_heralded_horizontal(source, t))
    plate = half_wave(CLUSTER_PLATE_ANGLE)
    for t in herald_bins:
        state = sv.apply_waveplate(state, plate, (t, PORT_IN))

    state, schedule = _run_cluster(state, config, accepted, total_bins, None)

    output_sites = tuple((t, PORT_OUT) for t in accepted[1:]) + ((release_bin, PORT_OUT),)
    ignored_sites = tuple((t, PORT_OUT) for t in ignored)
    final, probability = sv.post_select(state, sv.one_photon_per_site(output_sites))
    return ProtocolResult(
        final_state=final,
        success_probability=probability,
        schedule=schedule,
        photon_count=n_photons,
        output_sites=output_sites,
        ignored_sites=ignored_sites,
    )


def _qubit_sites(state: SparseState) -> tuple:
    sites = sorted(state.support_sites())
    ports = {site[1] for site in sites}
    if len(sites) != 2 or ports != {PORT_FROM, PORT_IN}:
        raise ValueError("expected two polarization qubits on the from/in ports")
    for occ, _ in state.terms():
        for site in sites:
            if occ.count_at_site(site) != 1:
                raise ValueError("every branch must hold one photon per port")
    from_site = next(site for site in sites if site[1] == PORT_FROM)
    in_site = next(site for site in sites if site[1] == PORT_IN)
    return from_site, in_site


def cphase(state2q: SparseState) -> tuple:
    """Post-selected controlled-phase gate on (from, in) polarization qubits.

    Sequence: swap the in-port polarizations, interfere on the splitter,
    rotate the in port so H goes to sqrt(1/3) H + sqrt(2/3) V while V goes to
    -sqrt(2/3) H + sqrt(1/3) V, attenuate the from port to intensity 1/3,
    interfere again, swap back.  Keeping one photon per port leaves the sign
    flip on VV at an overall success of 1/9.
    """
    if not state2q.is_normalized(1e-9):
        raise ValueError("input state must be normalized")
    site1, site2 = _qubit_sites(state2q)
    swap = half_wave(math.pi / 4.0)

    state = sv.apply_waveplate(state2q, swap, site2)
    state = sv.apply_pbs(state, site1, site2)
    state = sv.apply_jones(state, site2, _cphase_rotation())
    for pol in (H, V):
        target = ModeLabel(site1[0], site1[1], pol)
        env = ModeLabel(site1[0], "lost:att", pol)
        state = sv.apply_loss(state, target, CPHASE_ATTENUATION, env)
    state = sv.apply_pbs(state, site1, site2)
    state = sv.apply_waveplate(state, swap, site2)

    final, probability = sv.post_select(state, sv.one_photon_per_site((site1, site2)))
    return final, probability


def _pol_count(occ, site, pol) -> int:
    return sum(n for label, n in occ if label.site() == site and label.pol == pol)


def _compose_buffering(state: SparseState, config: QibConfig, first_bin: int, last_bin: int) -> SparseState:
    """Collapse a run of buffer bins into one loss channel plus a relabel.

    Valid only with perfect modulator extinction and no delay-plate error:
    buffering then does nothing but charge the roundtrip loss, and the
    per-bin loss channels compose multiplicatively because their environment
    bins are never looked at again.  Term count stays bounded instead of
    growing with the number of loss-bin histories.
    """
    span = last_bin - first_bin + 1
    survive = config.roundtrip_transmission**span
    relabel = {}
    for label in sorted(state.support_modes()):
        if label.site() != (first_bin, PORT_FROM):
            continue
        if survive < 1.0:
            env = ModeLabel(first_bin, f"lost:loop:{label.pol}", label.pol, label.tag)
            state = sv.apply_loss(state, label, survive, env)
        relabel[label] = ModeLabel(last_bin + 1, PORT_FROM, label.pol, label.tag)
    return sv.relabel_modes(state, relabel)


def hom_experiment(
    source: SourceModel,
    config: QibConfig = IDEAL_CONFIG,
    storage_roundtrips: int = 1,
    relative_delay_scan: Sequence[float] = (0.0, 1.0, 2.0, 4.0),
) -> HomResult:
    """Interfere a stored photon with a delayed fresh photon.

    Both photons are prepared diagonal; the fresh one keeps an overlap
    amplitude sqrt(mode_overlap) * exp(-delay^2 / 2) with the stored one and
    is otherwise distinguishable.  The coincidence observable is a
    cross-polarized count in the diagonal basis between the splitter output
    and the released photon one bin later.  Accidental coincidences enter
    through the source's two-pair term.
    """
    t = int(storage_roundtrips)
    if t < 1:
        raise ValueError("storage must last at least one roundtrip")
    delays = tuple(float(tau) for tau in relative_delay_scan)
    if not delays:
        raise ValueError("delay scan must be nonempty")

    exit_site = (t, PORT_OUT)
    release_site = (t + 1, PORT_OUT)
    analysis = half_wave(math.pi / 8.0)
    plate = half_wave(CLUSTER_PLATE_ANGLE)

    def cross_coincidence(pol_a, pol_b):
        def predicate(occ):
            return (
                _pol_count(occ, exit_site, pol_a) == 1
                and _pol_count(occ, exit_site, pol_b) == 0
                and _pol_count(occ, release_site, pol_b) == 1
                and _pol_count(occ, release_site, pol_a) == 0
            )

        return predicate

    coincidences = []
    for tau in delays:
        overlap = math.sqrt(source.mode_overlap) * math.exp(-0.5 * tau * tau)
        state = _heralded_horizontal(source, 0).tensor(_heralded_horizontal(source, t))
        state = sv.split_distinguishable(state, ModeLabel(t, PORT_IN, H), overlap, fresh_tag=1)
        state = sv.apply_waveplate(state, plate, (0, PORT_IN))
        state = sv.apply_waveplate(state, plate, (t, PORT_IN))
        state = qib_step(state, QibFunction.STORE_RELEASE, config, 0)
        plain_storage = math.isinf(config.eom_extinction) and config.qwp_angle_error == 0.0
        if t > 1 and plain_storage:
            state = _compose_buffering(state, config, 1, t - 1)
        else:
            for bin_ in range(1, t):
                state = qib_step(state, QibFunction.BUFFER, config, bin_)
        state = qib_step(state, QibFunction.INTERFERE, config, t)
        state = qib_step(state, QibFunction.STORE_RELEASE, config, t + 1)
        state = sv.apply_waveplate(state, analysis, exit_site)
        state = sv.apply_waveplate(state, analysis, release_site)
        _, c_hv = sv.post_select(state, cross_coincidence(H, V))
        _, c_vh = sv.post_select(state, cross_coincidence(V, H))
        coincidences.append(c_hv + c_vh)

    peak = max(coincidences)
    visibility = (peak - min(coincidences)) / peak if peak > 0.0 else 0.0
    return HomResult(delays=delays, coincidences=tuple(coincidences), visibility=visibility)
