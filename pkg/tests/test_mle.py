import time

import numpy as np
import pytest

from hidden_ou import (ParamSpec, SamplePath, SimConfig, SystemParams, grid_mle, log_likelihood,
                       model, one_step_process, one_step_vector, prelim_1d, prelim_2d, simulate,
                       two_step_process, zeta_trajectory)
from hidden_ou.harness import ExperimentConfig, run_experiment
from hidden_ou.mle import EstimatorTrajectory
from hidden_ou.prelim import PrelimResult
from hidden_ou.simulate import make_rng

SPEC_F = ParamSpec("F", 0.5, 2.0, 0.6)


def _pr(theta_bar, K, case="F"):
    return PrelimResult(theta_bar=theta_bar, K=K, statistic_S=np.nan, case=case)


def test_zero_score_keeps_prelim(unit_params):
    path = SamplePath(dt=0.01, X=np.zeros(100001))
    est = one_step_process(path, _pr(1.4, 63), SPEC_F, unit_params)
    assert np.all(est.theta_star == 1.4)
    vec = one_step_vector(path, _pr((1.4, 0.9), 63, "FB"),
                          ParamSpec("FB", (0.5, 0.5), (2.0, 2.0)), unit_params)
    assert np.all(vec.theta_star == np.array([1.4, 0.9]))


def test_online_property(long_path, unit_params):
    pr = prelim_1d(long_path, SPEC_F, unit_params)
    full = one_step_process(long_path, pr, SPEC_F, unit_params, tau_grid=[0.3, 0.6, 1.0])
    for tau in (0.3, 0.6):
        sub = long_path.truncate(tau * 1000.0)
        part = one_step_process(sub, pr, SPEC_F, unit_params, tau_grid=[1.0])
        assert part.theta_star[0] == full.at(tau)


def test_norm_options_are_rescalings(long_path, unit_params):
    pr = _pr(1.2, 63)
    tau = np.array([0.25, 0.5, 1.0])
    el = one_step_process(long_path, pr, SPEC_F, unit_params, tau_grid=tau)
    tm = one_step_process(long_path, pr, SPEC_F, unit_params, tau_grid=tau, norm="time")
    t = tau * 1000.0
    np.testing.assert_allclose((tm.theta_star - 1.2) * t, (el.theta_star - 1.2) * (t - 63),
                               rtol=1e-12)
    with pytest.raises(ValueError):
        one_step_process(long_path, pr, SPEC_F, unit_params, norm="bogus")


def test_tau_grid_validation(long_path, unit_params):
    pr = _pr(1.0, 63)
    with pytest.raises(ValueError):
        one_step_process(long_path, pr, SPEC_F, unit_params, tau_grid=[0.05, 1.0])
    with pytest.raises(ValueError):
        one_step_process(long_path, pr, SPEC_F, unit_params, tau_grid=[0.5, 0.4])
    with pytest.raises(ValueError):
        one_step_process(long_path, None, SPEC_F, unit_params)
    with pytest.raises(KeyError):
        one_step_process(long_path, pr, SPEC_F, unit_params, tau_grid=[0.5, 1.0]).at(0.7)


def test_default_grid_covers_every_point(short_path, unit_params):
    est = one_step_process(short_path, _pr(1.0, 24), SPEC_F, unit_params)
    assert est.tau_grid.size == short_path.n_steps - 2400
    assert est.tau_grid[-1] == 1.0


def test_one_step_scoring_formula(long_path, unit_params):
    # direct evaluation of the correction at tau = 1
    from hidden_ou import run_filter

    tb = 1.3
    tr = run_filter(long_path, tb, "F", unit_params)
    k0 = 6300
    s = np.sum(tr.mdot[0, k0:-1] * (long_path.dX[k0:] - tr.m[k0:-1] * 0.01))
    ref = tb + s / (model.fisher("F", tb, unit_params) * (1000.0 - 63))
    est = one_step_process(long_path, _pr(tb, 63), SPEC_F, unit_params, tau_grid=[1.0])
    assert est.theta_star[0] == pytest.approx(ref, rel=1e-12)


def test_case_a_uses_extended_score(long_path, unit_params):
    from hidden_ou import run_filter

    tr = run_filter(long_path, 1.1, "A", unit_params)
    np.testing.assert_allclose(tr.score()[0], tr.m + 1.1 * tr.mdot[0])


def test_csv_export(tmp_path, long_path, unit_params):
    est = one_step_process(long_path, _pr(1.0, 63), SPEC_F, unit_params, tau_grid=[0.5, 1.0])
    est.to_csv(tmp_path / "e.csv")
    lines = (tmp_path / "e.csv").read_text().splitlines()
    assert lines[0] == "tau,theta_star" and len(lines) == 3
    vec = one_step_vector(long_path, _pr((1.0, 1.0), 63, "FB"),
                          ParamSpec("FB", (0.5, 0.5), (2.0, 2.0)), unit_params,
                          tau_grid=[0.5, 1.0])
    vec.to_csv(tmp_path / "v.csv")
    assert (tmp_path / "v.csv").read_text().splitlines()[0] == "tau,theta_star,theta_star_2"


def test_one_step_improves_typical_error(unit_params):
    cfg = ExperimentConfig(unit_params, SPEC_F, SimConfig(horizon_T=1000.0), reps=200,
                           master_seed=3)
    rep = run_experiment(cfg)
    th = rep.theta_star_matrix()[:, -1, 0]
    tb = np.array([r["theta_bar"][0] for r in rep.included])
    assert np.median(np.abs(th - 1)) < 0.6 * np.median(np.abs(tb - 1))


@pytest.mark.slow
@pytest.mark.xfail(strict=True, reason="one-step MSE exceeds prelim MSE at T=1000 "
                                       "(outliers from clipped prelims); see decisions ledger")
def test_one_step_improves_mse(unit_params):
    cfg = ExperimentConfig(unit_params, SPEC_F, SimConfig(horizon_T=1000.0), reps=500)
    rep = run_experiment(cfg)
    th = rep.theta_star_matrix()[:, -1, 0]
    tb = np.array([r["theta_bar"][0] for r in rep.included])
    assert np.mean((th - 1) ** 2) < np.mean((tb - 1) ** 2)


def test_one_step_at_truth_is_efficient(unit_params):
    # with the preliminary value replaced by the truth only the first-order term remains
    cfg = ExperimentConfig(unit_params, SPEC_F, SimConfig(horizon_T=1000.0), reps=400,
                           prelim_at_truth=True, master_seed=1)
    agg = run_experiment(cfg).aggregates[0]
    inflation = 1 / (1 - 1000.0 ** (0.6 - 1))
    assert agg.variance / inflation == pytest.approx(1.0, abs=0.2)


# two-step ------------------------------------------------------------------


def test_two_step_domain(long_path, unit_params):
    with pytest.raises(ValueError):
        two_step_process(long_path, ParamSpec("F", 0.5, 2.0, 0.55), unit_params)
    est = two_step_process(long_path, ParamSpec("F", 0.5, 2.0, 0.45), unit_params, n_tau=4)
    np.testing.assert_allclose(est.tau_grid, [0.25, 0.5, 0.75, 1.0])
    assert np.all(np.isfinite(est.theta_star))


def test_second_stage_increment_centered(unit_params):
    from hidden_ou import run_filter

    vals = []
    for i in range(100):
        path = simulate(unit_params, SimConfig(horizon_T=200.0), rng=make_rng(44, i))
        ref = run_filter(path, 1.0, "F", unit_params)
        tr = run_filter(path, 1.0, "F", unit_params, with_mdot=False)
        vals.append(np.dot(ref.score()[0, 10:-1], tr.innovations(path.dX)[10:]))
    vals = np.array(vals)
    assert abs(vals.mean()) < 3 * vals.std() / np.sqrt(vals.size)


def test_two_step_matches_one_step_when_first_stage_is_fixed(long_path, unit_params):
    # if the first stage lands on theta_bar, the second stage repeats the first correction
    spec = ParamSpec("F", 0.5, 2.0, 0.45)
    pr = _pr(1.0, 22)
    first = one_step_process(long_path, pr, spec, unit_params, tau_grid=[1.0])
    two = two_step_process(long_path, spec, unit_params, tau_grid=[1.0], prelim=pr)
    assert np.isfinite(two.theta_star[0])
    assert abs(two.theta_star[0] - 1.0) < abs(first.theta_star[0] - 1.0) + 0.2


@pytest.mark.slow
@pytest.mark.xfail(strict=True, reason="K=30 prelim remainder dominates at T=2000; "
                                       "see decisions ledger")
def test_two_step_variance(unit_params):
    cfg = ExperimentConfig(unit_params, ParamSpec("F", 0.5, 2.0, 0.45),
                           SimConfig(horizon_T=2000.0), reps=500, estimator="twostep")
    agg = run_experiment(cfg).aggregates[0]
    assert abs(agg.variance - 1) <= 0.2


# vector --------------------------------------------------------------------


def test_vector_singular_information(long_path, unit_params):
    spec = ParamSpec("FB", (0.5, 0.5), (2.0, 2.0))
    with pytest.raises(np.linalg.LinAlgError):
        one_step_vector(long_path, _pr((1.0, 1.0), 63, "FB"), spec, unit_params,
                        info=np.ones((2, 2)))


def test_vector_deterministic(unit_params):
    spec = ParamSpec("FB", (0.5, 0.5), (2.0, 2.0))
    outs = []
    for _ in range(2):
        path = simulate(unit_params, SimConfig(horizon_T=300.0, seed=9))
        pr = prelim_2d(path, spec, unit_params)
        outs.append(one_step_vector(path, pr, spec, unit_params, tau_grid=[1.0]).theta_star)
    assert np.array_equal(outs[0], outs[1])


def test_vector_first_coordinate_matches_scalar_when_decoupled(long_path, unit_params):
    # with the b-gradient removed the f-update equals the scalar one-step update
    from hidden_ou.oracle import lyapunov_information_matrix

    spec = ParamSpec("FB", (0.5, 0.5), (2.0, 2.0))
    info = lyapunov_information_matrix("FB", (1.2, 1.0), unit_params)
    diag = np.diag(np.diag(info))
    vec = one_step_vector(long_path, _pr((1.2, 1.0), 63, "FB"), spec, unit_params,
                          tau_grid=[1.0], info=diag)
    sc = one_step_process(long_path, _pr(1.2, 63), SPEC_F, unit_params, tau_grid=[1.0])
    assert vec.theta_star[0, 0] == pytest.approx(sc.theta_star[0], rel=1e-10)


# grid MLE ------------------------------------------------------------------


def test_grid_mle_flat_likelihood_tie_break():
    p = SystemParams(b=0.0, d2=0.0, strict=False)
    path = simulate(p, SimConfig(horizon_T=50.0, seed=1))
    theta, grid, ll = grid_mle(path, SPEC_F, p, grid_size=7, return_curve=True)
    assert np.all(ll == 0.0)
    assert theta == pytest.approx(1.25)
    with pytest.raises(ValueError):
        grid_mle(path, SPEC_F, p, grid_size=2)


def test_log_likelihood_peaks_near_truth(long_path, unit_params):
    theta = grid_mle(long_path, SPEC_F, unit_params, grid_size=31)
    sd = 1 / np.sqrt(1000 * model.fisher("F", 1.0, unit_params))
    assert abs(theta - 1.0) < 4 * sd
    assert log_likelihood(long_path, 1.0, "F", unit_params) > \
        log_likelihood(long_path, 1.9, "F", unit_params)


def test_one_step_is_cheaper_than_grid(long_path, unit_params):
    one_step_process(long_path, _pr(1.0, 63), SPEC_F, unit_params, tau_grid=[1.0])
    t0 = time.perf_counter()
    pr = prelim_1d(long_path, SPEC_F, unit_params)
    one_step_process(long_path, pr, SPEC_F, unit_params, tau_grid=[1.0])
    t1 = time.perf_counter()
    grid_mle(long_path, SPEC_F, unit_params, grid_size=50)
    t2 = time.perf_counter()
    assert t1 - t0 < t2 - t1


# zeta ----------------------------------------------------------------------


def _flat_trajectory(unit_params, value):
    tau = np.array([0.25, 0.5, 1.0])
    return EstimatorTrajectory(tau, np.full(3, value), _pr(1.0, 63), 0.09, "F", 1000.0, 0.6,
                               unit_params)


def test_zeta_zero_at_truth(unit_params):
    z = zeta_trajectory(_flat_trajectory(unit_params, 1.0), 1.0, 0.25)
    assert np.all(z.zeta == 0)
    z = zeta_trajectory(_flat_trajectory(unit_params, 1.1), 1.0, 0.4)
    np.testing.assert_allclose(z.tau_grid, [0.5, 1.0])
    np.testing.assert_allclose(z.zeta, np.sqrt(1000 * model.fisher("F", 1.0, unit_params)) * 0.1)
    with pytest.raises(ValueError):
        zeta_trajectory(_flat_trajectory(unit_params, 1.0), 1.0, 0.05)


def _fourth_moment_constants(unit_params, T, prelim_at_truth):
    tau = (0.25, 0.5, 0.75, 1.0)
    cfg = ExperimentConfig(unit_params, SPEC_F, SimConfig(horizon_T=T), reps=200, tau_grid=tau,
                           master_seed=12, prelim_at_truth=prelim_at_truth)
    z = run_experiment(cfg).scaled_errors()[:, :, 0]
    return max(np.mean((z[:, j] - z[:, i]) ** 4) / (tau[j] - tau[i]) ** 2
               for i in range(4) for j in range(i + 1, 4))


@pytest.mark.slow
def test_zeta_fourth_moment_bound_uniform_in_t(unit_params):
    # at the truth the constant is stable in T; with a data-driven prelim it is
    # dominated by the prelim remainder, which decays in T, so the bound stays uniform
    c_small, c_large = (_fourth_moment_constants(unit_params, T, True) for T in (500.0, 2000.0))
    assert c_large < 2 * c_small and c_small < 2 * c_large
    d_small, d_large = (_fourth_moment_constants(unit_params, T, False) for T in (500.0, 2000.0))
    assert d_large <= d_small
