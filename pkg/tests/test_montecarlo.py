import itertools
import math

import numpy as np
import pytest

from qibsim import montecarlo as mc
from qibsim import rates
from qibsim.rates import RateParams


def make_config(p, eta, M, N, seed=2, trials=150_000, **kwargs):
    return mc.TrialConfig(
        params=RateParams(p=p, eta=eta, M=M, N=N),
        rng_seed=seed,
        n_trials=trials,
        **kwargs,
    )


def test_config_validation():
    params = RateParams(p=0.1)
    with pytest.raises(ValueError):
        mc.TrialConfig(params=params, n_trials=0)
    with pytest.raises(ValueError):
        mc.TrialConfig(params=params, rng_seed=-1)
    with pytest.raises(ValueError):
        mc.TrialConfig(params=params, max_switch_rate=0.0)
    with pytest.raises(ValueError):
        mc.TrialConfig(params=params, detector_efficiency=1.5)
    with pytest.raises(ValueError):
        mc.TrialConfig(params=params, dark_count_prob=-0.1)


def test_dark_counts_hook_rejects_nonzero():
    cfg = make_config(0.1, 0.9, 5, 2, trials=10, dark_count_prob=0.01)
    with pytest.raises(NotImplementedError):
        mc.run_trials(cfg)
    with pytest.raises(NotImplementedError):
        mc.waiting_time_histogram(cfg)


def test_deterministic_limits():
    cfg = make_config(1.0, 1.0, 5, 3, trials=5_000)
    res = mc.run_trials(cfg)
    assert res.empirical_P_N == 1.0
    assert res.mean_wait == 1.0
    assert res.mean_attempt_pulses == 3.0
    assert abs(res.rate - cfg.params.f / 3.0) < 1e-6

    dark = mc.run_trials(make_config(0.3, 0.0, 5, 2, trials=5_000))
    assert dark.empirical_P_N == 0.0
    assert dark.successes == 0


def test_reference_operating_point_within_three_sigma():
    cfg = make_config(0.05, 0.9, 10, 2, seed=2, trials=1_000_000)
    res = mc.run_trials(cfg)
    analytic = rates.pN_lossy(0.05, 0.9, 10, 2)
    assert abs(res.empirical_P_N - analytic) < 3.0 * res.sigma_P_N
    assert res.ci_low < analytic < res.ci_high


def test_determinism_and_seed_sensitivity():
    cfg = make_config(0.05, 0.9, 10, 2, trials=50_000)
    assert mc.run_trials(cfg) == mc.run_trials(cfg)
    other = make_config(0.05, 0.9, 10, 2, seed=3, trials=50_000)
    assert mc.run_trials(other).successes != mc.run_trials(cfg).successes


def test_batch_partition_independence():
    cfg = make_config(0.05, 0.9, 10, 2, trials=100_000)
    whole = mc.run_trials(cfg)
    for batch in (777, 9973, 100_000):
        assert mc.run_trials(cfg, batch_size=batch) == whole


GRID = [
    (p, eta, M, 2 if M == 5 else 3)
    for p, eta, M in itertools.product((0.01, 0.05, 0.2), (0.7, 0.9), (5, 20))
]


def test_statistical_agreement_over_grid():
    over_two_p = 0
    over_two_w = 0
    for p, eta, M, N in GRID:
        cfg = make_config(p, eta, M, N)
        res = mc.run_trials(cfg)
        pull_p = abs(res.empirical_P_N - mc.analytic_P_N(cfg)) / res.sigma_P_N
        pull_w = abs(res.mean_wait - rates.mean_wait(p, M + 1)) / res.sigma_wait
        assert pull_p < 3.0, (p, eta, M, N, pull_p)
        assert pull_w < 3.0, (p, eta, M, N, pull_w)
        over_two_p += pull_p > 2.0
        over_two_w += pull_w > 2.0
    assert over_two_p <= 1
    assert over_two_w <= 1


def test_empirical_probability_monotone_in_M():
    shallow = mc.run_trials(make_config(0.05, 0.9, 5, 2, trials=200_000))
    deep = mc.run_trials(make_config(0.05, 0.9, 20, 2, trials=200_000))
    combined = math.hypot(shallow.sigma_P_N, deep.sigma_P_N)
    assert deep.empirical_P_N >= shallow.empirical_P_N - 3.0 * combined


def test_waiting_time_histogram_first_pair():
    cfg = make_config(0.5, 0.9, 5, 2, trials=100_000)
    hist = mc.waiting_time_histogram(cfg)
    assert abs(hist.mean_first - 2.0) < 3.0 * hist.sem_first
    assert hist.first_counts.sum() == cfg.n_trials
    assert hist.attempt_counts.sum() == cfg.n_trials


def test_waiting_time_histogram_attempt_mean():
    cfg = make_config(0.1, 0.9, 10, 3, trials=200_000)
    hist = mc.waiting_time_histogram(cfg)
    assert abs(hist.mean_attempt - mc.expected_attempt_pulses(cfg)) < 3.0 * hist.sem_attempt


def test_waiting_time_histogram_unit_p():
    cfg = make_config(1.0, 1.0, 5, 4, trials=2_000)
    hist = mc.waiting_time_histogram(cfg)
    assert list(hist.attempt_values) == [4]
    assert hist.mean_attempt == 4.0
    assert hist.sem_attempt == 0.0


def test_expected_attempt_pulses():
    assert mc.expected_attempt_pulses(make_config(1.0, 1.0, 5, 4)) == 4.0
    cfg = make_config(0.1, 0.9, 10, 3)
    assert abs(mc.expected_attempt_pulses(cfg) - rates.t_qib(0.1, 11, 3)) < 1e-15
    unbounded = make_config(0.1, 0.9, 10, 3, per_pair_restart=True)
    assert abs(mc.expected_attempt_pulses(unbounded) - 30.0) < 1e-12


def test_per_pair_restart_matches_unbounded_window():
    cfg = make_config(0.1, 0.85, 4, 3, trials=300_000, per_pair_restart=True)
    res = mc.run_trials(cfg)
    p, eta = 0.1, 0.85
    target = p * eta**2 * (eta**2 * p / (1.0 - (1.0 - p) * eta)) ** 2
    assert abs(mc.analytic_P_N(cfg) - target) < 1e-15
    assert abs(res.empirical_P_N - target) < 3.0 * res.sigma_P_N
    hist = mc.waiting_time_histogram(cfg)
    assert abs(hist.mean_attempt - 30.0) < 3.0 * hist.sem_attempt


def test_non_relative_multiplexing_pays_full_window():
    relative = mc.run_trials(make_config(0.1, 0.9, 5, 3, trials=200_000))
    held = mc.run_trials(
        make_config(0.1, 0.9, 5, 3, trials=200_000, relative_multiplexing=False)
    )
    target = 0.1 * 0.9**2 * (rates.p1(0.1, 6) * 0.9**8) ** 2
    assert abs(mc.analytic_P_N(make_config(0.1, 0.9, 5, 3, relative_multiplexing=False)) - target) < 1e-15
    assert abs(held.empirical_P_N - target) < 3.0 * held.sigma_P_N
    assert held.empirical_P_N < relative.empirical_P_N


def test_max_switch_rate_is_a_ceiling():
    cfg = make_config(0.5, 1.0, 5, 2, trials=50_000)
    free = mc.run_trials(cfg)
    capped_cfg = make_config(0.5, 1.0, 5, 2, trials=50_000, max_switch_rate=free.rate / 2)
    capped = mc.run_trials(capped_cfg)
    assert capped.rate == free.rate / 2
    assert mc.analytic_rate(capped_cfg) == free.rate / 2 or mc.analytic_rate(capped_cfg) <= free.rate / 2


def test_detection_factors_analytic_by_default():
    cfg = make_config(0.1, 0.9, 5, 3, trials=50_000, detector_efficiency=0.8, include_postselection=True)
    res = mc.run_trials(cfg)
    factor = 0.8**6 * 0.25
    assert abs(res.detected_P_N - res.empirical_P_N * factor) < 1e-15


def test_sampled_detection_agrees_with_analytic_factor():
    base = make_config(0.2, 0.9, 5, 2, trials=400_000, detector_efficiency=0.8)
    analytic = mc.run_trials(base)
    sampled = mc.run_trials(
        make_config(0.2, 0.9, 5, 2, trials=400_000, detector_efficiency=0.8, sample_detection=True)
    )
    assert abs(sampled.detected_P_N - analytic.detected_P_N) < 3.0 * (
        sampled.sigma_P_N + analytic.sigma_P_N
    )


def test_sampling_flag_is_inert_at_unit_efficiency():
    plain = mc.run_trials(make_config(0.1, 0.9, 5, 2, trials=20_000))
    sampled = mc.run_trials(make_config(0.1, 0.9, 5, 2, trials=20_000, sample_detection=True))
    assert plain == sampled


def test_single_trial_reference_process():
    cfg = make_config(0.05, 0.9, 10, 2, trials=1)
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(123)))
    outcomes = [mc.simulate_trial(cfg, rng) for _ in range(4_000)]
    for out in outcomes:
        if out.success:
            assert out.pulses_elapsed >= 2
            assert out.surviving_photons == 4
        assert out.surviving_photons % 2 == 0
        for wait in out.pair_waits:
            assert 1 <= wait <= 11
    shat = sum(out.success for out in outcomes) / len(outcomes)
    target = rates.pN_lossy(0.05, 0.9, 10, 2) / 0.05
    sigma = math.sqrt(target * (1.0 - target) / len(outcomes))
    assert abs(shat - target) < 5.0 * sigma


def test_wilson_interval():
    lo, hi = mc.wilson_interval(0, 10)
    assert lo == 0.0 and hi > 0.0
    lo, hi = mc.wilson_interval(10, 10)
    assert hi == 1.0 and lo < 1.0
    lo, hi = mc.wilson_interval(50, 100)
    assert abs((lo + hi) / 2 - 0.5) < 1e-12
    with pytest.raises(ValueError):
        mc.wilson_interval(5, 0)
    with pytest.raises(ValueError):
        mc.wilson_interval(11, 10)
