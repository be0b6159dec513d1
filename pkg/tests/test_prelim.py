import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hidden_ou import (ParamSpec, SamplePath, SimConfig, SystemParams, model, prelim_1d,
                       prelim_2d, simulate, stat_R, stat_S)
from hidden_ou.prelim import learning_size, unit_increments
from hidden_ou.simulate import make_rng


def _batch_se(x, n_batches=50):
    b = np.array_split(x, n_batches)
    return np.std([np.mean(v) for v in b], ddof=1) / np.sqrt(n_batches)


@pytest.fixture(scope="module")
def coarse_stationary():
    p = SystemParams().stationary_d2()
    return simulate(p, SimConfig(dt=0.1, horizon_T=10000.0, seed=17))


def test_learning_size():
    assert learning_size(1000, 0.6) == 63
    assert learning_size(1e4, 0.6) == 251
    assert learning_size(100, 0.5) == 10
    assert learning_size(1e5, 0.6) == 1000


def test_unit_increments_read_off_grid(short_path):
    d = unit_increments(short_path, 5)
    assert np.array_equal(d, np.diff(short_path.X[[0, 100, 200, 300, 400, 500]]))
    with pytest.raises(ValueError):
        unit_increments(short_path, 201)


def test_stat_s_without_state_noise():
    p = SystemParams(b=0.0, d2=0.0, strict=False)
    path = simulate(p, SimConfig(dt=0.1, horizon_T=10000.0, seed=1))
    K = 10000
    assert abs(stat_S(path, K) - 1.0) < 3 * np.sqrt(2 / K)
    assert abs(stat_R(path, K)) < 3 / np.sqrt(K)


def test_stat_s_and_r_stationary(coarse_stationary):
    K = 10000
    d = unit_increments(coarse_stationary, K)
    p = SystemParams()
    assert abs(stat_S(coarse_stationary, K) - model.phi("F", 1.0, p).value) < 3 * _batch_se(d**2)
    assert abs(stat_R(coarse_stationary, K) - model.xi(p)) < 3 * _batch_se(d[1:] * d[:-1])


def test_stat_s_decoupled_observation():
    p = SystemParams(a=0.0, strict=False, sigma=0.7)
    path = simulate(p, SimConfig(dt=0.1, horizon_T=4000.0, seed=2))
    assert stat_S(path, 4000) == pytest.approx(0.49, abs=3 * 0.49 * np.sqrt(2 / 4000))
    assert abs(stat_R(path, 4000)) < 3 * 0.49 / np.sqrt(4000)


def test_stat_r_uses_adjacent_pairs_over_k():
    X = np.concatenate([[0.0], np.cumsum([1.0, 2.0, 3.0])])
    path = SamplePath(dt=1.0, X=X)
    assert stat_R(path, 3) == pytest.approx((2 * 1 + 3 * 2) / 3)
    assert stat_S(path, 3) == pytest.approx(14 / 3)
    with pytest.raises(ValueError):
        stat_R(path, 1)


def test_prelim_clipping_branches(short_path):
    p = SystemParams()
    spec = ParamSpec("F", 0.5, 2.0, 0.6)
    s_alpha = model.phi("F", 0.5, p).value
    pr = prelim_1d(short_path, spec, p, S=s_alpha)
    assert pr.theta_bar == 0.5 and pr.clipped == "lower"
    pr = prelim_1d(short_path, spec, p, S=1.0)
    assert pr.theta_bar == 2.0 and pr.clipped == "upper"
    pr = prelim_1d(short_path, ParamSpec("B", 0.5, 2.0), p, S=model.phi("B", 1.3, p).value)
    assert pr.theta_bar == pytest.approx(1.3, abs=1e-10) and pr.clipped == "interior"


@given(s=st.floats(-1e6, 1e6), case=st.sampled_from(["F", "B", "A"]))
def test_prelim_always_in_bounds(short_path, s, case):
    pr = prelim_1d(short_path, ParamSpec(case, 0.5, 2.0), SystemParams(), S=s)
    assert 0.5 <= pr.theta_bar <= 2.0


def test_prelim_uses_learning_segment_only(unit_params):
    spec = ParamSpec("F", 0.5, 2.0, 0.6)
    path = simulate(unit_params, SimConfig(dt=0.01, horizon_T=1000.0, seed=3))
    X = path.X.copy()
    X[6400:] += np.linspace(0, 50, X.size - 6400)
    other = SamplePath(dt=path.dt, X=X, seed=path.seed)
    assert prelim_1d(path, spec, unit_params) == prelim_1d(other, spec, unit_params)
    assert prelim_1d(path, spec, unit_params).K == 63


def test_prelim_json(short_path):
    pr = prelim_1d(short_path, ParamSpec("F", 0.5, 2.0), SystemParams())
    d = json.loads(pr.to_json())
    assert set(d) == {"theta_bar", "K", "S_K", "R_K", "clipped", "case", "seed"}
    assert d["K"] == 24


def _prelim_errors_k251(unit_params):
    # only the learning segment matters, so simulate just K time units
    spec = ParamSpec("F", 0.5, 2.0, 0.6)
    K = learning_size(1e4, 0.6)
    th = [prelim_1d(simulate(unit_params, SimConfig(dt=0.05, horizon_T=K), rng=make_rng(101, i)),
                    spec, unit_params, K=K).theta_bar for i in range(500)]
    return np.array(th) - 1.0


def test_prelim_accuracy_at_k251(unit_params):
    # 500-rep Monte Carlo gives 0.894; the inversion is skewed toward large f
    # because phi flattens there, so the delta-method spread (sd 0.265) is optimistic
    err = _prelim_errors_k251(unit_params)
    frac = np.mean(np.abs(err) < 0.5)
    assert frac >= 0.894 - 3 * np.sqrt(0.1 * 0.9 / 500)
    assert np.mean(err > 0.5) > np.mean(err < -0.5)


@pytest.mark.xfail(strict=True, reason="95% coverage needs a larger K; see decisions ledger")
def test_prelim_accuracy_at_k251_nominal(unit_params):
    assert np.mean(np.abs(_prelim_errors_k251(unit_params)) < 0.5) >= 0.95


def test_prelim_2d_inversion_round_trip(short_path):
    p = SystemParams()
    spec = ParamSpec("FB", (0.5, 0.5), (2.0, 2.0))
    R = 0.3
    S = 1.0 + model.increment_ratio(1.0) * R
    pr = prelim_2d(short_path, spec, p, S=S, R=R)
    assert pr.theta_bar[0] == pytest.approx(1.0, abs=1e-10)
    assert pr.clipped[0] == "interior"


def test_prelim_2d_exact_statistics_recover_truth(short_path):
    p = SystemParams(a=1.0, b=1.3, f=0.8)
    for case, truth in (("FB", (0.8, 1.3)), ("FA", (0.8, 1.0))):
        S = model.phi_2d(case, truth, p)
        R = model.xi(p)
        spec = ParamSpec(case, (0.5, 0.5), (2.0, 2.0))
        pr = prelim_2d(short_path, spec, p, S=S, R=R)
        np.testing.assert_allclose(pr.theta_bar, truth, atol=1e-9)


def test_prelim_2d_nonpositive_r(short_path):
    spec = ParamSpec("FB", (0.5, 0.5), (2.0, 2.0))
    pr = prelim_2d(short_path, spec, SystemParams(), S=1.4, R=-0.1)
    assert pr.theta_bar[0] == 2.0 and pr.clipped[0] == "R_nonpositive"


@given(S=st.floats(-10, 10), R=st.floats(-10, 10))
@settings(max_examples=200)
def test_prelim_2d_always_in_bounds(short_path, S, R):
    spec = ParamSpec("FA", (0.5, 0.2), (2.0, 3.0))
    pr = prelim_2d(short_path, spec, SystemParams(), S=S, R=R)
    assert spec.contains(pr.theta_bar)


def test_increment_ratio_small_argument_limit():
    assert model.increment_ratio(1e-12) == pytest.approx(1.0)


def _prelim_2d_hits(unit_params):
    spec = ParamSpec("FB", (0.5, 0.5), (2.0, 2.0), 0.6)
    K = learning_size(1e5, 0.6)
    hits = []
    for i in range(300):
        path = simulate(unit_params, SimConfig(dt=0.05, horizon_T=K), rng=make_rng(202, i))
        th = np.array(prelim_2d(path, spec, unit_params, K=K).theta_bar)
        hits.append(np.abs(th - 1.0) < 0.5)
    return np.array(hits)


def test_prelim_2d_consistency(unit_params):
    # 300-rep Monte Carlo: f within 0.5 in 77.7%, b in 93.3%; the f ratio
    # statistic divides by the small lag-one moment and is the weak link
    hits = _prelim_2d_hits(unit_params)
    se = np.sqrt(0.25 / 300)
    assert np.mean(hits[:, 0]) >= 0.777 - 3 * se
    assert np.mean(hits[:, 1]) >= 0.933 - 3 * se


@pytest.mark.xfail(strict=True, reason="90% joint coverage needs a larger K; see decisions ledger")
def test_prelim_2d_consistency_nominal(unit_params):
    assert np.mean(np.all(_prelim_2d_hits(unit_params), axis=1)) >= 0.9
