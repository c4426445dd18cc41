"""Time-stepped model of the polarization interference buffer.

The device is a polarizing beam splitter whose two loop-side ports close on a
retroreflective delay line.  Per time bin, the intracavity modulator settings
select one of three functions acting on the four rail modes

    inputs  : H_in, V_in (fresh light), H_from, V_from (light returning
              from the delay line)
    outputs : H_to, V_to (light sent into the delay line), H_out, V_out
              (light leaving the device)

``qib_step`` applies the selected function at one time bin and rolls the
``to`` rail forward: light sent into the delay line reappears on the ``from``
rail of the next bin, attenuated by the roundtrip transmission and rotated by
the residual wave-plate misalignment.

Loss accounting: one unit of roundtrip loss is charged to every photon
entering the delay line (the ``to`` rail), and one to every photon leaving
through the exit coupling, except on the buffer function whose input simply
bypasses the loop.  A photon parked in the loop for n bins therefore survives
with probability eta_rt^n, and a store / wait / interfere / release sequence
charges each photon its in-coupling, its waits, and its exit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Mapping, Sequence

import numpy as np

from . import statevec as sv
from .statevec import H, V, ModeLabel, SparseState

PORT_IN = "in"
PORT_OUT = "out"
PORT_FROM = "from"

#: Loop-side destination key used by the rail maps below.
_TO = "to"


class QibFunction(Enum):
    """The three functions selectable by the modulator pair."""

    STORE_RELEASE = "store_release"
    BUFFER = "buffer"
    INTERFERE = "interfere"


_SETTINGS_TO_FUNCTION = {
    (False, False): QibFunction.STORE_RELEASE,
    (True, True): QibFunction.BUFFER,
    (True, False): QibFunction.INTERFERE,
}

_FUNCTION_TO_SETTINGS = {fn: setting for setting, fn in _SETTINGS_TO_FUNCTION.items()}


def from_eom_settings(input_eom_on: bool, loop_eom_on: bool) -> QibFunction:
    """Map the (input modulator, loop modulator) drive pair to a function.

    The fourth combination is not a named operating point of the device and
    is rejected; it only ever appears internally as a leakage term.
    """
    key = (bool(input_eom_on), bool(loop_eom_on))
    try:
        return _SETTINGS_TO_FUNCTION[key]
    except KeyError:
        raise ValueError(f"modulator settings {key} select no device function") from None


def eom_settings(function: QibFunction) -> tuple[bool, bool]:
    return _FUNCTION_TO_SETTINGS[function]


@dataclass(frozen=True)
class QibConfig:
    """Device imperfections; the defaults describe an ideal buffer.

    roundtrip_transmission: intensity survival per delay-line traversal.
    qwp_angle_error: misalignment (radians) of the delay-line quarter-wave
        plate; the double pass leaves a residual polarization rotation of
        twice this angle per roundtrip.
    eom_extinction: intensity extinction ratio r of the modulators; a driven
        modulator leaks the undriven action with amplitude 1/sqrt(r).  Use
        math.inf for perfect switching.
    roundtrip_time: seconds per bin, reporting only.
    """

    roundtrip_transmission: float = 1.0
    qwp_angle_error: float = 0.0
    eom_extinction: float = math.inf
    roundtrip_time: float = 13.16e-9

    def __post_init__(self):
        if not 0.0 <= self.roundtrip_transmission <= 1.0:
            raise ValueError(f"roundtrip transmission must lie in [0, 1], got {self.roundtrip_transmission}")
        if not self.eom_extinction >= 1.0:
            raise ValueError(f"extinction ratio must be at least 1, got {self.eom_extinction}")
        if self.roundtrip_time <= 0.0:
            raise ValueError("roundtrip time must be positive")


IDEAL_CONFIG = QibConfig()


# -- loss budget -------------------------------------------------------------


@dataclass(frozen=True)
class LossElement:
    name: str
    transmission: float
    multiplicity: int = 1

    def __post_init__(self):
        if not 0.0 <= self.transmission <= 1.0:
            raise ValueError(f"transmission of {self.name!r} must lie in [0, 1], got {self.transmission}")
        if self.multiplicity < 0:
            raise ValueError(f"multiplicity of {self.name!r} must be non-negative")


@dataclass(frozen=True)
class LossBudget:
    """Per-roundtrip component transmissions of the storage loop."""

    elements: tuple[LossElement, ...]

    @classmethod
    def from_items(cls, items: Iterable[Mapping]) -> "LossBudget":
        elements = []
        for item in items:
            elements.append(
                LossElement(
                    name=str(item["name"]),
                    transmission=float(item["transmission"]),
                    multiplicity=int(item.get("multiplicity", 1)),
                )
            )
        return cls(tuple(elements))

    def to_items(self) -> list[dict]:
        return [
            {"name": e.name, "transmission": e.transmission, "multiplicity": e.multiplicity}
            for e in self.elements
        ]


def roundtrip_from_budget(budget: LossBudget) -> float:
    if not budget.elements:
        raise ValueError("loss budget is empty")
    total = 1.0
    for element in budget.elements:
        total *= element.transmission ** element.multiplicity
    return total


def default_budget() -> LossBudget:
    """Component budget of the demonstrated loop: double-passed splitter,
    modulator, nine fold mirrors and the spherical end mirror."""
    return LossBudget(
        (
            LossElement("splitter pass", 0.987, 2),
            LossElement("modulator", 0.98, 1),
            LossElement("fold mirror", 0.996, 9),
            LossElement("end mirror", 0.993, 1),
        )
    )


def storage_efficiency(config: QibConfig, n_roundtrips: int) -> float:
    """Survival probability of a photon parked in the loop for n roundtrips."""
    if n_roundtrips < 0:
        raise ValueError("roundtrip count must be non-negative")
    return config.roundtrip_transmission ** n_roundtrips


# -- rail maps ---------------------------------------------------------------

# Each map sends (input port, polarization) to (destination, polarization),
# destination "to" being the delay line and "out" the exit coupling.  The
# first three are the device's functions; the fourth is the action of the
# complementary modulator pattern and shows up only as a leakage term.
_RAIL_MAPS: dict[str, dict[tuple[str, str], tuple[str, str]]] = {
    "store": {
        (PORT_IN, H): (_TO, H),
        (PORT_IN, V): (_TO, V),
        (PORT_FROM, H): (PORT_OUT, H),
        (PORT_FROM, V): (PORT_OUT, V),
    },
    "buffer": {
        (PORT_IN, H): (PORT_OUT, H),
        (PORT_IN, V): (PORT_OUT, V),
        (PORT_FROM, H): (_TO, H),
        (PORT_FROM, V): (_TO, V),
    },
    "interfere": {
        (PORT_IN, H): (_TO, H),
        (PORT_IN, V): (PORT_OUT, V),
        (PORT_FROM, H): (PORT_OUT, H),
        (PORT_FROM, V): (_TO, V),
    },
    "exchange": {
        (PORT_IN, H): (PORT_OUT, H),
        (PORT_IN, V): (_TO, V),
        (PORT_FROM, H): (_TO, H),
        (PORT_FROM, V): (PORT_OUT, V),
    },
}


def _leakage_terms(function: QibFunction, extinction: float) -> list[tuple[str, complex]]:
    """Decompose the applied operation over the four rail maps.

    A driven modulator acts as s * (half-wave action) + i c * (identity) with
    c = 1/sqrt(r), so each driven stage admixes the map belonging to that
    stage being off.  Undriven stages are exact.
    """
    if math.isinf(extinction):
        key = {
            QibFunction.STORE_RELEASE: "store",
            QibFunction.BUFFER: "buffer",
            QibFunction.INTERFERE: "interfere",
        }[function]
        return [(key, 1.0 + 0.0j)]
    c = 1.0 / math.sqrt(extinction)
    s = math.sqrt(1.0 - 1.0 / extinction)
    if function is QibFunction.STORE_RELEASE:
        return [("store", 1.0 + 0.0j)]
    if function is QibFunction.INTERFERE:
        return [("interfere", s + 0.0j), ("store", 1j * c)]
    if function is QibFunction.BUFFER:
        return [
            ("buffer", s * s + 0.0j),
            ("interfere", 1j * s * c),
            ("exchange", 1j * s * c),
            ("store", -c * c + 0.0j),
        ]
    raise ValueError(f"unknown function value {function!r}")


def loop_rotation_residual(angle_error: float) -> np.ndarray:
    """Residual polarization action of one delay-line roundtrip.

    The double-passed quarter-wave plate acts as a half-wave plate at its
    mounting angle; with the nominal action folded into the rail maps, a
    misalignment delta leaves a rotation by 2*delta per roundtrip.
    """
    nominal = sv.half_wave(math.pi / 4.0).jones()
    actual = sv.half_wave(math.pi / 4.0 + angle_error).jones()
    return actual @ nominal


def _charges_exit(function: QibFunction) -> bool:
    # Buffer's input bypasses the loop coupling; everything else that
    # reaches the exit passed through it.
    return function is not QibFunction.BUFFER


def qib_step(state: SparseState, function: QibFunction, config: QibConfig, time_bin: int) -> SparseState:
    """Advance the device by one time bin.

    Consumes the ``in`` and ``from`` modes of ``time_bin``; produces ``out``
    modes of ``time_bin`` and ``from`` modes of ``time_bin + 1``.  Loss is
    shed into per-bin environment modes so the step stays an isometry.
    """
    if not isinstance(function, QibFunction):
        raise ValueError(f"unknown function value {function!r}")

    tags = set()
    for label in state.support_modes():
        if label.site() in ((time_bin, PORT_IN), (time_bin, PORT_FROM)):
            tags.add(label.tag)
    if not tags:
        return state

    terms = _leakage_terms(function, config.eom_extinction)
    mapping: dict[ModeLabel, list[tuple[ModeLabel, complex]]] = {}
    for tag in tags:
        for port in (PORT_IN, PORT_FROM):
            for pol in (H, V):
                src = ModeLabel(time_bin, port, pol, tag)
                targets: dict[ModeLabel, complex] = {}
                for key, amp in terms:
                    dest, dest_pol = _RAIL_MAPS[key][(port, pol)]
                    if dest == _TO:
                        label = ModeLabel(time_bin + 1, PORT_FROM, dest_pol, tag)
                    else:
                        label = ModeLabel(time_bin, PORT_OUT, dest_pol, tag)
                    targets[label] = targets.get(label, 0.0 + 0.0j) + amp
                mapping[src] = list(targets.items())
    out = sv.apply_linear(state, mapping)

    eta = config.roundtrip_transmission
    if eta < 1.0:
        for label in sorted(out.support_modes()):
            if label.site() == (time_bin + 1, PORT_FROM):
                env = ModeLabel(time_bin, f"lost:loop:{label.pol}", label.pol, label.tag)
                out = sv.apply_loss(out, label, eta, env)
            elif label.site() == (time_bin, PORT_OUT) and _charges_exit(function):
                env = ModeLabel(time_bin, f"lost:exit:{label.pol}", label.pol, label.tag)
                out = sv.apply_loss(out, label, eta, env)

    if config.qwp_angle_error != 0.0:
        out = sv.apply_jones(out, (time_bin + 1, PORT_FROM), loop_rotation_residual(config.qwp_angle_error))
    return out


def run_schedule(
    state: SparseState,
    schedule: Sequence[tuple[int, QibFunction]],
    config: QibConfig,
) -> SparseState:
    """Apply qib_step over an explicit (time_bin, function) schedule."""
    for time_bin, function in schedule:
        state = qib_step(state, function, config, time_bin)
    return state
