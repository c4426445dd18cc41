"""Sparse state vectors for polarization-encoded photons in time bins.

Photonic modes are labeled by a time bin, a named port, a polarization and an
internal tag.  A basis ket is an occupation (mode -> photon count) and a state
is a sparse complex combination of occupations.  All transformations used by
the higher layers reduce to linear maps on creation operators: wave plates,
polarizing beam splitters, beam-splitter loss into environment modes, and
projective post-selection.

The internal tag is 0 for photons that are indistinguishable apart from their
mode labels.  Partial distinguishability is modeled by splitting a photon's
creation operator between the shared tag and a fresh orthogonal tag, so that
two photons with overlap amplitude g interfere with visibility |g|^2.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Iterable, Iterator, Mapping, Sequence

import numpy as np

H = "H"
V = "V"
POLS = (H, V)

PORT_IN = "in"
PORT_OUT = "out"
PORT_TO = "to"
PORT_FROM = "from"
PORT_HERALD = "herald"

#: Amplitudes below this magnitude are dropped after each element.
AMPLITUDE_CUTOFF = 1e-15

#: Default cap on the occupation of any single mode.  Nothing in the
#: protocols studied here stacks more than four photons into one mode; the
#: cap bounds the cost of the bosonic expansion for adversarial inputs.
DEFAULT_MAX_PHOTONS = 4


@dataclass(frozen=True, order=True)
class ModeLabel:
    """One bosonic mode: (time_bin, port, polarization, internal tag)."""

    time_bin: int
    port: str
    pol: str
    tag: int = 0

    def site(self) -> tuple[int, str]:
        """The spatial-temporal location, ignoring polarization and tag."""
        return (self.time_bin, self.port)

    def with_pol(self, pol: str) -> "ModeLabel":
        return ModeLabel(self.time_bin, self.port, pol, self.tag)

    def replaced(self, *, time_bin: int | None = None, port: str | None = None) -> "ModeLabel":
        return ModeLabel(
            self.time_bin if time_bin is None else time_bin,
            self.port if port is None else port,
            self.pol,
            self.tag,
        )


Site = tuple[int, str]


def mode(time_bin: int, port: str, pol: str, tag: int = 0) -> ModeLabel:
    return ModeLabel(time_bin, port, pol, tag)


class Occupation:
    """Immutable photon-count map used as a basis ket label.

    Counts are positive integers; modes with zero photons are simply absent.
    Instances hash and compare by content so they can key state dictionaries.
    """

    __slots__ = ("_items", "_hash")

    def __init__(self, counts: Mapping[ModeLabel, int] | Iterable[tuple[ModeLabel, int]] = ()):
        if isinstance(counts, Mapping):
            pairs = counts.items()
        else:
            pairs = counts
        cleaned = []
        for label, n in pairs:
            if not isinstance(label, ModeLabel):
                raise TypeError(f"mode label expected, got {label!r}")
            if n < 0 or int(n) != n:
                raise ValueError(f"photon count must be a non-negative integer, got {n!r}")
            if n > 0:
                cleaned.append((label, int(n)))
        cleaned.sort()
        object.__setattr__(self, "_items", tuple(cleaned))
        object.__setattr__(self, "_hash", hash(self._items))

    def __setattr__(self, name, value):
        raise AttributeError("Occupation is immutable")

    def items(self) -> tuple[tuple[ModeLabel, int], ...]:
        return self._items

    def modes(self) -> tuple[ModeLabel, ...]:
        return tuple(label for label, _ in self._items)

    def get(self, label: ModeLabel) -> int:
        for mode_label, n in self._items:
            if mode_label == label:
                return n
        return 0

    def total(self) -> int:
        return sum(n for _, n in self._items)

    def count_at_site(self, site: Site) -> int:
        return sum(n for label, n in self._items if label.site() == site)

    def restrict(self, predicate: Callable[[ModeLabel], bool]) -> "Occupation":
        return Occupation((label, n) for label, n in self._items if predicate(label))

    def __iter__(self) -> Iterator[tuple[ModeLabel, int]]:
        return iter(self._items)

    def __len__(self) -> int:
        return len(self._items)

    def __hash__(self) -> int:
        return self._hash

    def __eq__(self, other) -> bool:
        return isinstance(other, Occupation) and self._items == other._items

    def __repr__(self) -> str:
        body = ", ".join(f"{label.time_bin}/{label.port}/{label.pol}" + (f"#{label.tag}" if label.tag else "") + (f":{n}" if n != 1 else "") for label, n in self._items)
        return f"|{body}>"


def occupation(counts: Mapping[ModeLabel, int] | Iterable[tuple[ModeLabel, int]] = ()) -> Occupation:
    return Occupation(counts)


VACUUM = Occupation()


class SparseState:
    """Sparse complex combination of occupation kets.

    The amplitude dictionary is private; use ``terms`` to iterate and the
    module-level functions to transform.  States are not normalized
    automatically, which lets post-selected branches carry their event
    probability as squared norm.
    """

    __slots__ = ("_amps", "max_photons")

    def __init__(self, amplitudes: Mapping[Occupation, complex] | None = None, max_photons: int = DEFAULT_MAX_PHOTONS):
        amps: dict[Occupation, complex] = {}
        if amplitudes:
            for occ, amp in amplitudes.items():
                if not isinstance(occ, Occupation):
                    raise TypeError(f"occupation expected, got {occ!r}")
                if amp != 0:
                    amps[occ] = complex(amp)
        self._amps = amps
        self.max_photons = max_photons

    # -- constructors ------------------------------------------------------

    @classmethod
    def vacuum(cls, max_photons: int = DEFAULT_MAX_PHOTONS) -> "SparseState":
        return cls({VACUUM: 1.0 + 0.0j}, max_photons=max_photons)

    @classmethod
    def single(cls, counts: Mapping[ModeLabel, int] | Iterable[tuple[ModeLabel, int]], max_photons: int = DEFAULT_MAX_PHOTONS) -> "SparseState":
        return cls({Occupation(counts): 1.0 + 0.0j}, max_photons=max_photons)

    @classmethod
    def from_terms(cls, terms: Iterable[tuple[Mapping[ModeLabel, int] | Occupation, complex]], max_photons: int = DEFAULT_MAX_PHOTONS) -> "SparseState":
        amps: dict[Occupation, complex] = {}
        for counts, amp in terms:
            occ = counts if isinstance(counts, Occupation) else Occupation(counts)
            amps[occ] = amps.get(occ, 0.0 + 0.0j) + complex(amp)
        return cls(amps, max_photons=max_photons)

    # -- access ------------------------------------------------------------

    def terms(self) -> tuple[tuple[Occupation, complex], ...]:
        return tuple(self._amps.items())

    def amplitude(self, occ: Occupation | Mapping[ModeLabel, int]) -> complex:
        key = occ if isinstance(occ, Occupation) else Occupation(occ)
        return self._amps.get(key, 0.0 + 0.0j)

    def num_terms(self) -> int:
        return len(self._amps)

    def support_modes(self) -> set[ModeLabel]:
        out: set[ModeLabel] = set()
        for occ in self._amps:
            out.update(occ.modes())
        return out

    def support_sites(self) -> set[Site]:
        return {label.site() for label in self.support_modes()}

    def norm_squared(self) -> float:
        return float(sum((amp.real * amp.real + amp.imag * amp.imag) for amp in self._amps.values()))

    def is_normalized(self, tol: float = 1e-9) -> bool:
        return abs(self.norm_squared() - 1.0) <= tol

    # -- algebra -----------------------------------------------------------

    def scaled(self, factor: complex) -> "SparseState":
        return SparseState({occ: amp * factor for occ, amp in self._amps.items()}, max_photons=self.max_photons)

    def plus(self, other: "SparseState") -> "SparseState":
        amps = dict(self._amps)
        for occ, amp in other._amps.items():
            amps[occ] = amps.get(occ, 0.0 + 0.0j) + amp
        return SparseState(amps, max_photons=self.max_photons)

    def tensor(self, other: "SparseState") -> "SparseState":
        """Tensor product; the two states must not share any mode."""
        if self.support_modes() & other.support_modes():
            raise ValueError("tensor factors share modes")
        amps: dict[Occupation, complex] = {}
        for occ_a, amp_a in self._amps.items():
            items_a = occ_a.items()
            for occ_b, amp_b in other._amps.items():
                amps[Occupation(items_a + occ_b.items())] = amp_a * amp_b
        return SparseState(amps, max_photons=self.max_photons)

    def normalized(self) -> "SparseState":
        norm = math.sqrt(self.norm_squared())
        if norm == 0.0:
            raise ValueError("cannot normalize the zero state")
        return self.scaled(1.0 / norm)

    def pruned(self, cutoff: float = AMPLITUDE_CUTOFF) -> "SparseState":
        return SparseState({occ: amp for occ, amp in self._amps.items() if abs(amp) > cutoff}, max_photons=self.max_photons)

    def inner(self, other: "SparseState") -> complex:
        """<self|other> over the common occupation basis."""
        if len(self._amps) > len(other._amps):
            return complex(np.conj(other.inner(self)))
        total = 0.0 + 0.0j
        for occ, amp in self._amps.items():
            other_amp = other._amps.get(occ)
            if other_amp is not None:
                total += np.conj(amp) * other_amp
        return complex(total)

    def __repr__(self) -> str:
        parts = [f"({amp:.4g}){occ!r}" for occ, amp in sorted(self._amps.items(), key=lambda kv: kv[0].items())[:8]]
        more = "" if len(self._amps) <= 8 else f" ... [{len(self._amps)} terms]"
        return " + ".join(parts) + more if parts else "0"


# -- wave plates -----------------------------------------------------------


@dataclass(frozen=True)
class WavePlate:
    """A retarder at angle ``angle`` (radians) to the horizontal axis.

    kind is "half" or "quarter".  The Jones matrices follow the common
    convention in which a half-wave plate at 22.5 degrees maps H to
    (H+V)/sqrt(2), and a quarter-wave plate at 45 degrees passed twice swaps
    H and V exactly.
    """

    kind: str
    angle: float

    def __post_init__(self):
        if self.kind not in ("half", "quarter"):
            raise ValueError(f"unknown wave plate kind {self.kind!r}")
        if not math.isfinite(self.angle):
            raise ValueError(f"wave plate angle must be finite, got {self.angle!r}")

    def jones(self) -> np.ndarray:
        c = math.cos(self.angle)
        s = math.sin(self.angle)
        if self.kind == "half":
            c2 = c * c - s * s
            s2 = 2.0 * s * c
            return np.array([[c2, s2], [s2, -c2]], dtype=complex)
        return np.array(
            [
                [c * c + 1j * s * s, (1.0 - 1j) * s * c],
                [(1.0 - 1j) * s * c, s * s + 1j * c * c],
            ],
            dtype=complex,
        )


def half_wave(angle: float) -> WavePlate:
    return WavePlate("half", angle)


def quarter_wave(angle: float) -> WavePlate:
    return WavePlate("quarter", angle)


# -- linear transformations -------------------------------------------------


def _expand_term(
    occ: Occupation,
    amp: complex,
    mapping: Mapping[ModeLabel, Sequence[tuple[ModeLabel, complex]]],
    max_photons: int,
) -> Iterator[tuple[Occupation, complex]]:
    """Expand one occupation ket under a creation-operator substitution."""
    coeff = complex(amp)
    static: list[tuple[ModeLabel, int]] = []
    powers: list[tuple[Sequence[tuple[ModeLabel, complex]], int]] = []
    for label, n in occ:
        coeff /= math.sqrt(math.factorial(n))
        targets = mapping.get(label)
        if targets is None:
            powers.append((((label, 1.0 + 0.0j),), n))
        else:
            powers.append((targets, n))
        static.append((label, n))

    # Multiply out prod_i (sum_j c_ij a_j^dag)^(n_i) acting on vacuum.
    monomials: dict[tuple[tuple[ModeLabel, int], ...], complex] = {(): coeff}
    for targets, n in powers:
        for _ in range(n):
            grown: dict[tuple[tuple[ModeLabel, int], ...], complex] = {}
            for mono, c in monomials.items():
                counts = dict(mono)
                for target, weight in targets:
                    if weight == 0:
                        continue
                    counts2 = dict(counts)
                    counts2[target] = counts2.get(target, 0) + 1
                    key = tuple(sorted(counts2.items()))
                    grown[key] = grown.get(key, 0.0 + 0.0j) + c * weight
            monomials = grown
            if not monomials:
                return

    for mono, c in monomials.items():
        if any(n > max_photons for _, n in mono):
            continue
        factor = 1.0
        for _, n in mono:
            factor *= math.sqrt(math.factorial(n))
        yield Occupation(mono), c * factor


def apply_linear(
    state: SparseState,
    mapping: Mapping[ModeLabel, Sequence[tuple[ModeLabel, complex]]],
    cutoff: float = AMPLITUDE_CUTOFF,
) -> SparseState:
    """Apply a linear-optical map a_m^dag -> sum_j c_j a_j^dag.

    Modes absent from ``mapping`` are untouched.  The caller is responsible
    for the map being an isometry when norm preservation is expected; loss
    maps deliberately shed norm into environment modes.
    """
    out: dict[Occupation, complex] = {}
    for occ, amp in state.terms():
        for new_occ, new_amp in _expand_term(occ, amp, mapping, state.max_photons):
            prev = out.get(new_occ)
            out[new_occ] = new_amp if prev is None else prev + new_amp
    result = SparseState(out, max_photons=state.max_photons)
    return result.pruned(cutoff)


def _site_tags(state: SparseState, site: Site) -> set[int]:
    tags: set[int] = set()
    for label in state.support_modes():
        if label.site() == site:
            tags.add(label.tag)
    return tags


def apply_jones(state: SparseState, site: Site, matrix: np.ndarray) -> SparseState:
    """Apply a 2x2 polarization matrix at one site, across all internal tags."""
    matrix = np.asarray(matrix, dtype=complex)
    if matrix.shape != (2, 2):
        raise ValueError("polarization matrix must be 2x2")
    time_bin, port = site
    mapping: dict[ModeLabel, list[tuple[ModeLabel, complex]]] = {}
    for tag in _site_tags(state, site):
        h = ModeLabel(time_bin, port, H, tag)
        v = ModeLabel(time_bin, port, V, tag)
        mapping[h] = [(h, matrix[0, 0]), (v, matrix[1, 0])]
        mapping[v] = [(h, matrix[0, 1]), (v, matrix[1, 1])]
    if not mapping:
        return state
    return apply_linear(state, mapping)


def apply_waveplate(state: SparseState, plate: WavePlate, site: Site) -> SparseState:
    return apply_jones(state, site, plate.jones())


def apply_pbs(state: SparseState, site_a: Site, site_b: Site) -> SparseState:
    """Polarizing beam splitter between two sites.

    Convention: H stays on its site, V crosses to the other site.  The map is
    its own inverse.
    """
    if site_a == site_b:
        raise ValueError("beam splitter needs two distinct sites")
    mapping: dict[ModeLabel, list[tuple[ModeLabel, complex]]] = {}
    tags = _site_tags(state, site_a) | _site_tags(state, site_b)
    for tag in tags:
        va = ModeLabel(site_a[0], site_a[1], V, tag)
        vb = ModeLabel(site_b[0], site_b[1], V, tag)
        mapping[va] = [(vb, 1.0 + 0.0j)]
        mapping[vb] = [(va, 1.0 + 0.0j)]
    if not mapping:
        return state
    return apply_linear(state, mapping)


def apply_loss(state: SparseState, target: ModeLabel, transmission: float, env: ModeLabel) -> SparseState:
    """Beam-splitter loss on one mode, with the reflected part kept in ``env``.

    ``transmission`` is the intensity transmission.  The environment mode must
    be fresh (unoccupied) so that loss events stay orthogonal between
    branches.
    """
    if not 0.0 <= transmission <= 1.0:
        raise ValueError(f"transmission must lie in [0, 1], got {transmission}")
    if env == target:
        raise ValueError("environment mode must differ from the lossy mode")
    if transmission == 1.0:
        return state
    t = math.sqrt(transmission)
    r = math.sqrt(1.0 - transmission)
    return apply_linear(state, {target: [(target, t), (env, r)]})


def relabel_modes(state: SparseState, relabel: Mapping[ModeLabel, ModeLabel]) -> SparseState:
    """Move amplitudes between mode labels (a permutation, no interference)."""
    mapping = {src: [(dst, 1.0 + 0.0j)] for src, dst in relabel.items() if src != dst}
    if not mapping:
        return state
    return apply_linear(state, mapping)


def split_distinguishable(state: SparseState, target: ModeLabel, overlap_amplitude: complex, fresh_tag: int) -> SparseState:
    """Split a photon between the shared tag and a fresh orthogonal tag.

    After the split, the photon interferes with tag-``target.tag`` photons
    with amplitude ``overlap_amplitude`` and is otherwise distinguishable.
    """
    g = complex(overlap_amplitude)
    if abs(g) > 1.0 + 1e-12:
        raise ValueError("overlap amplitude cannot exceed 1")
    if fresh_tag == target.tag:
        raise ValueError("fresh tag must differ from the target tag")
    ortho = math.sqrt(max(0.0, 1.0 - abs(g) ** 2))
    other = ModeLabel(target.time_bin, target.port, target.pol, fresh_tag)
    return apply_linear(state, {target: [(target, g), (other, ortho)]})


# -- projection and comparison ----------------------------------------------


def post_select(
    state: SparseState,
    predicate: Callable[[Occupation], bool],
    sites: Sequence[Site] | None = None,
) -> tuple[SparseState, float]:
    """Keep the branches whose occupation satisfies ``predicate``.

    When ``sites`` is given the predicate sees the occupation restricted to
    those sites.  Returns the conditional state (normalized) and the event
    probability; a zero-probability selection returns the empty state.
    """
    if sites is not None:
        site_set = set(sites)

        def matches(occ: Occupation) -> bool:
            return predicate(occ.restrict(lambda label: label.site() in site_set))

    else:
        matches = predicate

    kept: dict[Occupation, complex] = {}
    probability = 0.0
    for occ, amp in state.terms():
        if matches(occ):
            kept[occ] = amp
            probability += amp.real * amp.real + amp.imag * amp.imag
    if probability <= 0.0:
        return SparseState(max_photons=state.max_photons), 0.0
    scale = 1.0 / math.sqrt(probability)
    conditional = SparseState({occ: amp * scale for occ, amp in kept.items()}, max_photons=state.max_photons)
    return conditional, float(probability)


def one_photon_per_site(sites: Sequence[Site]) -> Callable[[Occupation], bool]:
    """Predicate: exactly one photon at each listed site, nothing else there."""
    wanted = tuple(sites)

    def predicate(occ: Occupation) -> bool:
        return all(occ.count_at_site(site) == 1 for site in wanted)

    return predicate


def fidelity(state: SparseState, target: SparseState, norm_tol: float = 1e-9) -> float:
    """|<target|state>|^2 for two normalized pure states on the same sites."""
    for name, s in (("state", state), ("target", target)):
        if not s.is_normalized(norm_tol):
            raise ValueError(f"{name} is not normalized (norm^2 = {s.norm_squared():.6g})")
    if state.support_sites() != target.support_sites():
        raise ValueError("states are defined on different sites")
    overlap = target.inner(state)
    return float(abs(overlap) ** 2)


def conditional_fidelity(state: SparseState, target: SparseState, norm_tol: float = 1e-9) -> tuple[float, float]:
    """Fidelity with ``target`` after tracing out everything off its sites.

    The state may hold extra modes (environment, heralds).  Branches are
    grouped by their off-target configuration e; the result is

        F = sum_e |<target|psi_e>|^2 / P,   P = sum_e ||Pi psi_e||^2,

    where Pi keeps only branches whose on-target photon layout matches the
    target's support sites (one photon per occupied target site).  Returns
    (F, P).  F is the fidelity of the post-selected mixed state.
    """
    if not target.is_normalized(norm_tol):
        raise ValueError("target is not normalized")
    target_sites = target.support_sites()
    site_counts: dict[Site, set[int]] = {}
    for occ, _ in target.terms():
        for site in target_sites:
            site_counts.setdefault(site, set()).add(occ.count_at_site(site))
    expected = {site: counts.pop() for site, counts in site_counts.items() if len(counts) == 1}
    if len(expected) != len(target_sites):
        raise ValueError("target must have a definite photon count per site")

    def on_target(label: ModeLabel) -> bool:
        return label.site() in target_sites

    overlaps: dict[Occupation, complex] = {}
    probability = 0.0
    for occ, amp in state.terms():
        inside = occ.restrict(on_target)
        if any(inside.count_at_site(site) != count for site, count in expected.items()):
            continue
        probability += amp.real * amp.real + amp.imag * amp.imag
        target_amp = target.amplitude(inside)
        if target_amp != 0:
            outside = occ.restrict(lambda label: not on_target(label))
            overlaps[outside] = overlaps.get(outside, 0.0 + 0.0j) + np.conj(target_amp) * amp
    if probability <= 0.0:
        return 0.0, 0.0
    weight = float(sum(abs(x) ** 2 for x in overlaps.values()))
    return weight / probability, float(probability)


def qubit_amplitudes(state: SparseState, sites: Sequence[Site]) -> dict[str, complex]:
    """Read the state of one polarization qubit per site as a 2^n amplitude map.

    Every term must hold exactly one tag-0 photon at each listed site and no
    photons elsewhere.  Keys are strings over {H, V} ordered like ``sites``.
    """
    wanted = list(sites)
    out: dict[str, complex] = {}
    for occ, amp in state.terms():
        letters = []
        seen = 0
        for site in wanted:
            found = None
            for label, n in occ:
                if label.site() == site:
                    if n != 1 or found is not None or label.tag != 0:
                        raise ValueError(f"site {site} does not hold a single tag-0 photon in {occ!r}")
                    found = label.pol
                    seen += 1
            if found is None:
                raise ValueError(f"site {site} is empty in {occ!r}")
            letters.append(found)
        if seen != occ.total():
            raise ValueError(f"term {occ!r} holds photons off the qubit sites")
        key = "".join(letters)
        out[key] = out.get(key, 0.0 + 0.0j) + amp
    return out
