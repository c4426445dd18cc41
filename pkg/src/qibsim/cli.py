"""Command-line front end: configs in, tables and state dumps out.

Configs are JSON objects carrying ``schema_version`` and exactly one command
block; unknown keys are rejected wholesale.  Tabular results are emitted as
CSV with a fixed column order (or JSON with ``--format json``); the protocol
commands report metric/value pairs and, in JSON mode, dump the post-selected
state.  Exit codes: 0 success, 2 config error, 3 numerical failure.

Sweeps fan out over a value grid and run points in parallel; the environment
variable QIBSIM_THREADS caps the worker count.  Output order follows the grid
index, never completion order, so reruns are byte-identical.
"""

from __future__ import annotations

import argparse
import cmath
import csv
import io
import json
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from copy import deepcopy
from dataclasses import dataclass
from itertools import product
from typing import Optional, Sequence

import numpy as np

from . import metrics as mt
from . import montecarlo as mc
from . import protocols as pr
from . import rates
from . import statevec as sv
from .montecarlo import TrialConfig
from .protocols import SourceModel, TwoModeSqueezedTruncated
from .qib import QibConfig
from .rates import RateParams
from .statevec import H, V, PORT_FROM, PORT_IN, ModeLabel, SparseState

__all__ = [
    "ConfigError",
    "NumericalError",
    "FitResult",
    "load_config",
    "serialize_config",
    "state_to_json",
    "thread_limit",
    "fit_efficiency",
    "cmd_rates",
    "cmd_simulate",
    "cmd_ghz",
    "cmd_cluster",
    "cmd_cphase",
    "cmd_hom",
    "cmd_fit",
    "cmd_sweep",
    "main",
]

SCHEMA_VERSION = 1
EXIT_OK = 0
EXIT_CONFIG_ERROR = 2
EXIT_NUMERICAL_ERROR = 3
THREADS_ENV = "QIBSIM_THREADS"

SQRT_HALF = math.sqrt(0.5)


class ConfigError(ValueError):
    """Malformed configuration or input data."""


class NumericalError(RuntimeError):
    """The computation could not produce a usable number."""


@dataclass(frozen=True)
class FitResult:
    eta_fit: float
    eta_stderr: float
    fixed_prefactor: float
    residual_norm: float

    def as_dict(self) -> dict:
        return {
            "eta_fit": self.eta_fit,
            "eta_stderr": self.eta_stderr,
            "fixed_prefactor": self.fixed_prefactor,
            "residual_norm": self.residual_norm,
        }


# -- config plumbing -------------------------------------------------------


def load_config(path) -> dict:
    try:
        with open(path) as handle:
            config = json.load(handle)
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    if not isinstance(config, dict):
        raise ConfigError("config root must be a JSON object")
    return config


def serialize_config(config: dict) -> str:
    return json.dumps(config, indent=2, sort_keys=True) + "\n"


def _check_keys(block: dict, allowed, context: str) -> None:
    unknown = set(block) - set(allowed)
    if unknown:
        raise ConfigError(f"unknown keys in {context}: {', '.join(sorted(unknown))}")


def _command_block(config: dict, command: str) -> dict:
    if "schema_version" not in config:
        raise ConfigError("config must declare schema_version")
    if config["schema_version"] != SCHEMA_VERSION:
        raise ConfigError(
            f"unsupported schema_version {config['schema_version']!r}, expected {SCHEMA_VERSION}"
        )
    _check_keys(config, {"schema_version", command}, "config")
    block = config.get(command)
    if not isinstance(block, dict):
        raise ConfigError(f"config needs a {command!r} object")
    return block


def _as_grid(value, name: str) -> list:
    if isinstance(value, list):
        if not value:
            raise ConfigError(f"{name} grid is empty")
        return list(value)
    return [value]


def _scalar(block: dict, name: str, default, kind, context: str):
    value = block.get(name, default)
    if isinstance(value, bool) and kind is not bool:
        raise ConfigError(f"{context}.{name} must be a {kind.__name__}, got a boolean")
    if not isinstance(value, kind):
        if kind is float and isinstance(value, int):
            return float(value)
        raise ConfigError(f"{context}.{name} must be a {kind.__name__}, got {value!r}")
    return value


def parse_source(block) -> SourceModel:
    fields = dict(block or {})
    _check_keys(
        fields,
        {"pair_probability", "multipair", "herald_efficiency", "mode_overlap", "bell_phase"},
        "source",
    )
    multipair = fields.pop("multipair", False)
    if not isinstance(multipair, bool):
        raise ConfigError(f"source.multipair must be a boolean, got {multipair!r}")
    try:
        return SourceModel(
            multipair=TwoModeSqueezedTruncated() if multipair else None, **fields
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad source model: {exc}") from exc


def parse_qib(block) -> QibConfig:
    fields = dict(block or {})
    _check_keys(
        fields,
        {"roundtrip_transmission", "qwp_angle_error", "eom_extinction", "roundtrip_time"},
        "qib",
    )
    if isinstance(fields.get("eom_extinction"), str):
        if fields["eom_extinction"] != "inf":
            raise ConfigError(f"qib.eom_extinction: unknown value {fields['eom_extinction']!r}")
        fields["eom_extinction"] = math.inf
    try:
        return QibConfig(**fields)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad qib config: {exc}") from exc


# -- output plumbing --------------------------------------------------------


def _format_cell(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def rows_to_csv(header: Sequence[str], rows: Sequence[dict]) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([_format_cell(row[column]) for column in header])
    return buffer.getvalue()


def _write_text(text: str, out_path) -> None:
    if out_path is None:
        sys.stdout.write(text)
    else:
        with open(out_path, "w") as handle:
            handle.write(text)


def _emit(header, rows, args, state=None) -> int:
    if args.format == "json":
        if header == ("metric", "value"):
            payload = {"metrics": {row["metric"]: row["value"] for row in rows}}
            if state is not None:
                payload["state"] = state
        else:
            payload = rows
        _write_text(json.dumps(payload, indent=2) + "\n", args.out)
    else:
        _write_text(rows_to_csv(header, rows), args.out)
    return EXIT_OK


def state_to_json(state: SparseState) -> list:
    """Serialize a sparse state as a list of {occupation, re, im} entries."""
    entries = []
    for occ, amp in state.terms():
        modes = sorted(
            [label.time_bin, label.port, label.pol, label.tag, count] for label, count in occ
        )
        entries.append({"occupation": modes, "re": amp.real, "im": amp.imag})
    entries.sort(key=lambda entry: entry["occupation"])
    return entries


def thread_limit() -> int:
    raw = os.environ.get(THREADS_ENV)
    if raw is None:
        return os.cpu_count() or 1
    try:
        value = int(raw)
    except ValueError:
        raise ConfigError(f"{THREADS_ENV} must be an integer, got {raw!r}") from None
    if value < 1:
        raise ConfigError(f"{THREADS_ENV} must be at least 1, got {value}")
    return value


# -- rates ------------------------------------------------------------------

RATES_COLUMNS = (
    "p",
    "eta",
    "M",
    "N",
    "f",
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
)


def cmd_rates(config: dict):
    block = _command_block(config, "rates")
    _check_keys(block, {"p", "eta", "M", "N", "f"}, "rates")
    if "p" not in block:
        raise ConfigError("rates needs a pair probability p")
    f = block.get("f", 76e6)
    if isinstance(f, list):
        raise ConfigError("the clock frequency cannot be a grid axis")
    rows = []
    grid = product(
        _as_grid(block["p"], "p"),
        _as_grid(block.get("eta", 1.0), "eta"),
        _as_grid(block.get("M", 0), "M"),
        _as_grid(block.get("N", 1), "N"),
    )
    for p, eta, M, N in grid:
        try:
            params = RateParams(p=p, eta=eta, M=M, N=N, f=f)
            row = {
                "p": p,
                "eta": eta,
                "M": M,
                "N": N,
                "f": f,
                "p2_lossless": rates.p2_lossless(p, M),
                "pN_lossless": rates.pN_lossless(p, M, N),
                "pN_lossy": rates.pN_lossy(p, eta, M, N),
                "eta_threshold": rates.eta_threshold(p),
                "p1": rates.p1(p, M),
                "mean_wait": rates.mean_wait(p, M) if M >= 1 else math.nan,
                "t_tm": rates.t_tm(p, N),
                "t_qib": rates.t_qib(p, M, N),
                "rate_spatial": rates.rate_spatial(f, p, N),
                "rate_tm": rates.rate_tm(f, p, eta, N),
                "rate_qib": rates.rate_qib(params),
                "rate_enhancement": rates.rate_enhancement(params),
                "spatial_enhancement": rates.spatial_enhancement(p, eta, M, N),
            }
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad rates point (p={p}, eta={eta}, M={M}, N={N}): {exc}") from exc
        rows.append(row)
    return RATES_COLUMNS, rows


# -- montecarlo -------------------------------------------------------------

SIMULATE_COLUMNS = (
    "p",
    "eta",
    "M",
    "N",
    "trials",
    "seed",
    "successes",
    "empirical_P_N",
    "analytic_P_N",
    "sigma_P_N",
    "pull",
    "ci_low",
    "ci_high",
    "mean_wait",
    "analytic_mean_wait",
    "mean_attempt_pulses",
    "analytic_attempt_pulses",
    "empirical_rate",
    "analytic_rate",
    "detected_P_N",
)

_SIMULATE_KEYS = {
    "p",
    "eta",
    "M",
    "N",
    "f",
    "trials",
    "seed",
    "max_switch_rate",
    "relative_multiplexing",
    "per_pair_restart",
    "detector_efficiency",
    "include_postselection",
    "sample_detection",
    "dark_count_prob",
}


def _simulate_point(p, eta, M, N, f, trials, seed, flags) -> dict:
    try:
        trial_config = TrialConfig(
            params=RateParams(p=p, eta=eta, M=M, N=N, f=f),
            rng_seed=seed,
            n_trials=trials,
            **flags,
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad simulation point (p={p}, eta={eta}, M={M}, N={N}): {exc}") from exc
    result = mc.run_trials(trial_config)
    analytic = mc.analytic_P_N(trial_config)
    pull = math.nan
    if result.sigma_P_N > 0.0:
        pull = (result.empirical_P_N - analytic) / result.sigma_P_N
    if trial_config.per_pair_restart:
        analytic_wait = 1.0 / p
    else:
        analytic_wait = rates.mean_wait(p, M + 1)
    if N == 1:
        analytic_wait = math.nan
    return {
        "p": p,
        "eta": eta,
        "M": M,
        "N": N,
        "trials": trials,
        "seed": seed,
        "successes": result.successes,
        "empirical_P_N": result.empirical_P_N,
        "analytic_P_N": analytic,
        "sigma_P_N": result.sigma_P_N,
        "pull": pull,
        "ci_low": result.ci_low,
        "ci_high": result.ci_high,
        "mean_wait": result.mean_wait,
        "analytic_mean_wait": analytic_wait,
        "mean_attempt_pulses": result.mean_attempt_pulses,
        "analytic_attempt_pulses": mc.expected_attempt_pulses(trial_config),
        "empirical_rate": result.rate,
        "analytic_rate": mc.analytic_rate(trial_config),
        "detected_P_N": result.detected_P_N,
    }


def cmd_simulate(config: dict, seed_override: Optional[int] = None):
    block = _command_block(config, "montecarlo")
    _check_keys(block, _SIMULATE_KEYS, "montecarlo")
    if "p" not in block:
        raise ConfigError("montecarlo needs a pair probability p")
    f = block.get("f", 76e6)
    if isinstance(f, list):
        raise ConfigError("the clock frequency cannot be a grid axis")
    trials = _scalar(block, "trials", 100_000, int, "montecarlo")
    seed = _scalar(block, "seed", 0, int, "montecarlo")
    if seed_override is not None:
        seed = seed_override
    flags = {
        name: block[name]
        for name in (
            "max_switch_rate",
            "relative_multiplexing",
            "per_pair_restart",
            "detector_efficiency",
            "include_postselection",
            "sample_detection",
            "dark_count_prob",
        )
        if name in block
    }
    rows = []
    grid = product(
        _as_grid(block["p"], "p"),
        _as_grid(block.get("eta", 1.0), "eta"),
        _as_grid(block.get("M", 0), "M"),
        _as_grid(block.get("N", 2), "N"),
    )
    for p, eta, M, N in grid:
        rows.append(_simulate_point(p, eta, M, N, f, trials, seed, flags))
    return SIMULATE_COLUMNS, rows


# -- protocol commands ------------------------------------------------------

METRIC_COLUMNS = ("metric", "value")


def _metric_rows(pairs) -> list:
    return [{"metric": name, "value": value} for name, value in pairs]


def cmd_ghz(config: dict):
    block = _command_block(config, "ghz")
    _check_keys(block, {"n_pairs", "source", "qib", "heralding_gaps"}, "ghz")
    n_pairs = _scalar(block, "n_pairs", 2, int, "ghz")
    source = parse_source(block.get("source"))
    qib_config = parse_qib(block.get("qib"))
    try:
        result = pr.build_ghz(
            n_pairs, source=source, config=qib_config, heralding_gaps=block.get("heralding_gaps")
        )
    except ValueError as exc:
        raise ConfigError(f"bad ghz request: {exc}") from exc
    sites = result.herald_sites + result.output_sites
    amps = sv.qubit_amplitudes(result.final_state, sites)
    population = mt.ghz_population(mt.born_probabilities(result.final_state, sites))
    tables = [
        mt.born_probabilities(result.final_state, sites, analyzer=setting.analyzer())
        for setting in mt.coherence_settings()
    ]
    coherence = mt.ghz_coherence(tables)
    amp_h = amps.get(H * len(sites), 0.0)
    amp_v = amps.get(V * len(sites), 0.0)
    phase = cmath.phase(amp_v * amp_h.conjugate()) if amp_h and amp_v else 0.0
    pairs = [
        ("n_pairs", n_pairs),
        ("photon_count", result.photon_count),
        ("success_probability", result.success_probability),
        ("population", population),
        ("coherence", coherence),
        ("fidelity", mt.ghz_fidelity(population, coherence)),
        ("fidelity_max_over_phase", 0.5 * (abs(amp_h) + abs(amp_v)) ** 2),
        ("ghz_phase", phase),
    ]
    return METRIC_COLUMNS, _metric_rows(pairs), state_to_json(result.final_state)


def _stabilizer_values(amplitudes: dict, n_qubits: int) -> list:
    vec = np.zeros(2**n_qubits, dtype=complex)
    for key, amp in amplitudes.items():
        vec[int("".join("0" if c == H else "1" for c in key), 2)] = amp
    norm = np.linalg.norm(vec)
    if norm == 0.0:
        raise NumericalError("cluster register came out empty")
    vec = vec / norm
    pauli_z = np.diag([1.0, -1.0])
    pauli_x = np.array([[0.0, 1.0], [1.0, 0.0]])
    values = []
    for i in range(n_qubits):
        ops = [np.eye(2)] * n_qubits
        ops[i] = pauli_x
        if i > 0:
            ops[i - 1] = pauli_z
        if i < n_qubits - 1:
            ops[i + 1] = pauli_z
        full = ops[0]
        for op in ops[1:]:
            full = np.kron(full, op)
        values.append(float((vec.conj() @ (full @ vec)).real))
    return values


def cmd_cluster(config: dict):
    block = _command_block(config, "cluster")
    _check_keys(
        block,
        {"n_photons", "variant", "source", "qib", "heralding_gaps", "herald_pattern"},
        "cluster",
    )
    n_photons = _scalar(block, "n_photons", 2, int, "cluster")
    variant = _scalar(block, "variant", "dynamic", str, "cluster")
    source = parse_source(block.get("source"))
    qib_config = parse_qib(block.get("qib"))
    try:
        if variant == "dynamic":
            if "herald_pattern" in block:
                raise ConfigError("herald_pattern belongs to the static variant")
            result = pr.build_cluster_dynamic(
                n_photons,
                source=source,
                config=qib_config,
                heralding_gaps=block.get("heralding_gaps"),
            )
        elif variant == "static":
            if "heralding_gaps" in block:
                raise ConfigError("heralding_gaps belongs to the dynamic variant")
            pattern = block.get("herald_pattern")
            if not isinstance(pattern, list):
                raise ConfigError("the static variant needs a herald_pattern list")
            result = pr.build_cluster_static(
                n_photons, source=source, config=qib_config, herald_pattern=pattern
            )
        else:
            raise ConfigError(f"unknown cluster variant {variant!r}")
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(f"bad cluster request: {exc}") from exc
    # ignored photons exit diagonally polarized and factor out; project them
    # on H and renormalize to read the register the accepted photons carry
    read_sites = result.output_sites + result.ignored_sites
    amps = sv.qubit_amplitudes(result.final_state, read_sites)
    n_ignored = len(result.ignored_sites)
    register = {}
    for key, amp in amps.items():
        head, tail = key[: len(result.output_sites)], key[len(result.output_sites) :]
        if tail == H * n_ignored:
            register[head] = amp * (2.0 ** (n_ignored / 2.0))
    values = _stabilizer_values(register, n_photons)
    pairs = [
        ("n_photons", n_photons),
        ("variant", variant),
        ("success_probability", result.success_probability),
        ("ignored_photons", n_ignored),
    ]
    pairs.extend((f"stabilizer_{i + 1}", value) for i, value in enumerate(values))
    pairs.append(("min_stabilizer", min(values)))
    return METRIC_COLUMNS, _metric_rows(pairs), state_to_json(result.final_state)


_CPHASE_NAMED = {
    "PP": (SQRT_HALF, SQRT_HALF, SQRT_HALF, SQRT_HALF),
    "HH": (1.0, 0.0, 1.0, 0.0),
    "HV": (1.0, 0.0, 0.0, 1.0),
    "VH": (0.0, 1.0, 1.0, 0.0),
    "VV": (0.0, 1.0, 0.0, 1.0),
}


def _cphase_amplitudes(spec) -> tuple:
    if isinstance(spec, str):
        if spec not in _CPHASE_NAMED:
            raise ConfigError(
                f"unknown cphase input {spec!r}; pick one of {', '.join(sorted(_CPHASE_NAMED))}"
            )
        return _CPHASE_NAMED[spec]
    if isinstance(spec, dict):
        _check_keys(spec, {"control", "target"}, "cphase.input")
        values = []
        for name in ("control", "target"):
            qubit = spec.get(name)
            if not (isinstance(qubit, list) and len(qubit) == 4):
                raise ConfigError(f"cphase.input.{name} must be [re_h, im_h, re_v, im_v]")
            values.extend((complex(qubit[0], qubit[1]), complex(qubit[2], qubit[3])))
        return tuple(values)
    raise ConfigError("cphase input must be a named state or a {control, target} object")


def cmd_cphase(config: dict):
    block = _command_block(config, "cphase")
    _check_keys(block, {"input"}, "cphase")
    a1, b1, a2, b2 = _cphase_amplitudes(block.get("input", "PP"))
    terms = []
    for amp_c, pol_c in ((a1, H), (b1, V)):
        for amp_t, pol_t in ((a2, H), (b2, V)):
            amp = amp_c * amp_t
            if amp:
                terms.append(
                    ({ModeLabel(0, PORT_FROM, pol_c): 1, ModeLabel(0, PORT_IN, pol_t): 1}, amp)
                )
    if not terms:
        raise ConfigError("cphase input state is zero")
    state = SparseState.from_terms(terms).normalized()
    final, probability = pr.cphase(state)
    sites = [(0, PORT_FROM), (0, PORT_IN)]
    out_amps = sv.qubit_amplitudes(final, sites)
    in_amps = sv.qubit_amplitudes(state, sites)
    expected = {
        key: (-amp if key == "VV" else amp) for key, amp in in_amps.items()
    }
    overlap = sum(amp.conjugate() * out_amps.get(key, 0.0) for key, amp in expected.items())
    pairs = [
        ("success_probability", probability),
        ("gate_fidelity", abs(overlap) ** 2),
    ]
    return METRIC_COLUMNS, _metric_rows(pairs), state_to_json(final)


HOM_COLUMNS = ("storage_roundtrips", "delay", "coincidence", "visibility")


def cmd_hom(config: dict):
    block = _command_block(config, "hom")
    _check_keys(block, {"source", "qib", "storage_roundtrips", "delays"}, "hom")
    source = parse_source(block.get("source"))
    qib_config = parse_qib(block.get("qib"))
    delays = block.get("delays", [0.0, 1.0, 2.0, 4.0])
    if not isinstance(delays, list) or not delays:
        raise ConfigError("hom.delays must be a nonempty list")
    rows = []
    for t in _as_grid(block.get("storage_roundtrips", 1), "storage_roundtrips"):
        if not isinstance(t, int) or isinstance(t, bool):
            raise ConfigError(f"storage_roundtrips must be integers, got {t!r}")
        try:
            result = pr.hom_experiment(
                source, qib_config, storage_roundtrips=t, relative_delay_scan=delays
            )
        except ValueError as exc:
            raise ConfigError(f"bad hom request: {exc}") from exc
        for delay, coincidence in zip(result.delays, result.coincidences):
            rows.append(
                {
                    "storage_roundtrips": t,
                    "delay": delay,
                    "coincidence": coincidence,
                    "visibility": result.visibility,
                }
            )
    return HOM_COLUMNS, rows


# -- fitting ----------------------------------------------------------------


def fit_efficiency(roundtrips, efficiencies, stderrs=None) -> FitResult:
    """Weighted least squares of log(efficiency) against roundtrip number.

    The decay is a pure exponential A * eta^n, so the fit is linear in the
    log domain with weights (stderr/efficiency)^-2.
    """
    n = np.asarray(roundtrips, dtype=float)
    e = np.asarray(efficiencies, dtype=float)
    if n.size != e.size:
        raise ConfigError("roundtrips and efficiencies disagree in length")
    if n.size < 3:
        raise ConfigError(f"need at least 3 points to fit, got {n.size}")
    if (e <= 0.0).any():
        raise ConfigError("efficiencies must be positive")
    if stderrs is None:
        weights = np.ones_like(e)
    else:
        s = np.asarray(stderrs, dtype=float)
        if s.size != e.size:
            raise ConfigError("stderr column disagrees in length")
        if (s < 0.0).any():
            raise ConfigError("stderr values must be non-negative")
        if (s == 0.0).all():
            weights = np.ones_like(e)
        elif (s == 0.0).any():
            raise ConfigError("stderr values must be all positive or all zero")
        else:
            weights = (s / e) ** -2
    if np.unique(n).size < 2:
        raise NumericalError("singular fit: every point shares one roundtrip count")

    y = np.log(e)
    sw = weights.sum()
    swn = (weights * n).sum()
    swnn = (weights * n * n).sum()
    swy = (weights * y).sum()
    swny = (weights * n * y).sum()
    det = sw * swnn - swn * swn
    if det <= 0.0:
        raise NumericalError("singular fit: degenerate design matrix")
    intercept = (swnn * swy - swn * swny) / det
    slope = (sw * swny - swn * swy) / det
    eta = math.exp(slope)
    if eta > 1.0:
        raise NumericalError(f"fitted efficiency exceeds 1: {eta}")
    # parameter covariance for known measurement variances: inv(X^T W X)
    slope_var = sw / det
    residuals = y - (intercept + slope * n)
    return FitResult(
        eta_fit=eta,
        eta_stderr=eta * math.sqrt(slope_var),
        fixed_prefactor=math.exp(intercept),
        residual_norm=float(math.sqrt((weights * residuals**2).sum())),
    )


def cmd_fit(data_path) -> FitResult:
    roundtrips = []
    efficiencies = []
    stderrs = []
    try:
        with open(data_path, newline="") as handle:
            reader = csv.reader(handle)
            header = next(reader, None)
            if header not in (["roundtrips", "efficiency"], ["roundtrips", "efficiency", "stderr"]):
                raise ConfigError(f"unexpected fit-data header: {header!r}")
            for row in reader:
                if len(row) != len(header):
                    raise ConfigError(f"malformed fit-data row: {row!r}")
                roundtrips.append(float(row[0]))
                efficiencies.append(float(row[1]))
                if len(row) == 3:
                    stderrs.append(float(row[2]))
    except OSError as exc:
        raise ConfigError(f"cannot read fit data: {exc}") from exc
    except ValueError as exc:
        if isinstance(exc, (ConfigError, NumericalError)):
            raise
        raise ConfigError(f"fit data is not numeric: {exc}") from exc
    return fit_efficiency(roundtrips, efficiencies, stderrs if stderrs else None)


# -- sweeps -----------------------------------------------------------------

_SWEEP_COMMANDS = {
    "rates": cmd_rates,
    "simulate": cmd_simulate,
    "ghz": cmd_ghz,
    "cluster": cmd_cluster,
    "cphase": cmd_cphase,
    "hom": cmd_hom,
}


def _set_path(block: dict, path: str, value) -> None:
    keys = path.split(".")
    target = block
    for key in keys[:-1]:
        child = target.get(key)
        if child is None:
            child = target[key] = {}
        if not isinstance(child, dict):
            raise ConfigError(f"sweep axis {path!r} walks through a non-object at {key!r}")
        target = child
    target[keys[-1]] = value


def cmd_sweep(config: dict, seed_override: Optional[int] = None):
    block = _command_block(config, "sweep")
    _check_keys(block, {"command", "config", "axes"}, "sweep")
    command = block.get("command")
    if command not in _SWEEP_COMMANDS:
        raise ConfigError(
            f"sweep.command must be one of {', '.join(sorted(_SWEEP_COMMANDS))}, got {command!r}"
        )
    inner = block.get("config")
    if not isinstance(inner, dict):
        raise ConfigError("sweep.config must hold the swept command's config")
    axes = block.get("axes")
    if not isinstance(axes, dict) or not axes:
        raise ConfigError("sweep.axes must map parameter paths to value lists")
    for path, values in axes.items():
        if not isinstance(values, list) or not values:
            raise ConfigError(f"sweep axis {path!r} must be a nonempty list")
    runner = _SWEEP_COMMANDS[command]
    paths = list(axes)
    points = list(product(*(axes[path] for path in paths)))

    def run_point(point):
        point_config = deepcopy(inner)
        point_block = point_config.get(command if command != "simulate" else "montecarlo")
        if not isinstance(point_block, dict):
            raise ConfigError("sweep.config does not carry the swept command's block")
        for path, value in zip(paths, point):
            _set_path(point_block, path, value)
        if command in ("simulate",):
            header, rows = runner(point_config, seed_override)
        else:
            output = runner(point_config)
            header, rows = output[0], output[1]
        return header, rows

    results = [None] * len(points)
    with ThreadPoolExecutor(max_workers=thread_limit()) as pool:
        for index, outcome in enumerate(pool.map(run_point, points)):
            results[index] = outcome

    inner_header = results[0][0]
    header = ("grid_index",) + tuple(paths) + tuple(inner_header)
    combined = []
    for index, (point, (_, rows)) in enumerate(zip(points, results)):
        for row in rows:
            merged = {"grid_index": index}
            merged.update(dict(zip(paths, point)))
            merged.update(row)
            combined.append(merged)
    return header, combined


# -- argument parsing ---------------------------------------------------------


def _add_common(parser: argparse.ArgumentParser, config_required: bool = True) -> None:
    if config_required:
        parser.add_argument("--config", required=True, help="path to the JSON config")
    parser.add_argument("--out", default=None, help="output path (default: stdout)")
    parser.add_argument("--seed", type=int, default=None, help="override the RNG seed")
    parser.add_argument(
        "--format", choices=("csv", "json"), default="csv", help="output format"
    )


def _check_seed(args) -> Optional[int]:
    if args.seed is not None and args.seed < 0:
        raise ConfigError(f"seed must be non-negative, got {args.seed}")
    return args.seed


def _run_rates(args) -> int:
    header, rows = cmd_rates(load_config(args.config))
    return _emit(header, rows, args)


def _run_simulate(args) -> int:
    header, rows = cmd_simulate(load_config(args.config), _check_seed(args))
    return _emit(header, rows, args)


def _run_ghz(args) -> int:
    header, rows, state = cmd_ghz(load_config(args.config))
    return _emit(header, rows, args, state=state)


def _run_cluster(args) -> int:
    header, rows, state = cmd_cluster(load_config(args.config))
    return _emit(header, rows, args, state=state)


def _run_cphase(args) -> int:
    header, rows, state = cmd_cphase(load_config(args.config))
    return _emit(header, rows, args, state=state)


def _run_hom(args) -> int:
    header, rows = cmd_hom(load_config(args.config))
    return _emit(header, rows, args)


def _run_fit(args) -> int:
    result = cmd_fit(args.data)
    if args.format == "json":
        _write_text(json.dumps(result.as_dict(), indent=2) + "\n", args.out)
        return EXIT_OK
    rows = _metric_rows(sorted(result.as_dict().items()))
    return _emit(METRIC_COLUMNS, rows, args)


def _run_sweep(args) -> int:
    header, rows = cmd_sweep(load_config(args.config), _check_seed(args))
    return _emit(header, rows, args)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="qibsim",
        description="Simulation toolkit for loop-buffered photon entanglement experiments.",
    )
    commands = parser.add_subparsers(dest="command", required=True)

    for name, runner, needs_config in (
        ("rates", _run_rates, True),
        ("simulate", _run_simulate, True),
        ("ghz", _run_ghz, True),
        ("cluster", _run_cluster, True),
        ("cphase", _run_cphase, True),
        ("hom", _run_hom, True),
        ("sweep", _run_sweep, True),
    ):
        sub = commands.add_parser(name)
        _add_common(sub, config_required=needs_config)
        sub.set_defaults(run=runner)

    fit = commands.add_parser("fit")
    fit.add_argument("data", help="CSV of roundtrips, efficiency[, stderr]")
    _add_common(fit, config_required=False)
    fit.set_defaults(run=_run_fit)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.run(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG_ERROR
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL_ERROR


if __name__ == "__main__":
    sys.exit(main())
