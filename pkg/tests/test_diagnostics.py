import math

import numpy as np
import pytest

from cwgrpo.diagnostics import (
    DEFAULT_PERCENTILES,
    bandit_covariance,
    bandit_entropy,
    bandit_natural_step,
    bandit_vanilla_step,
    cov_report,
    covariance_percentiles,
    cumulative_contribution,
    entropy_exact_step,
    entropy_law,
    entropy_mc,
    format_percentile_table,
    predict_entropy_delta,
    top_share,
)
from cwgrpo.errors import ContractError
from cwgrpo.policy import Trajectory, logprob_trajectory, policy_init, sample_response

from oracles import enumerate_responses, random_params


def test_entropy_mc_definitions():
    assert entropy_mc([Trajectory((0,), (1,), np.array([-2.0]))]).value == 2.0
    assert entropy_mc([Trajectory((0,), (1, 1), np.zeros(2))]).value == 0.0
    est = entropy_mc([Trajectory((0,), (1, 2), np.array([-1.0, -3.0])),
                      Trajectory((0,), (1,), np.array([-4.0]))])
    assert est.value == 3.0            # mean of per-response means: (2 + 4) / 2
    assert est.token_count == 3 and est.method == "MonteCarlo"
    with pytest.raises(ContractError):
        entropy_mc([])


def test_entropy_mc_uniform_policy():
    p = policy_init(4, 2, 0, init_scale=0.0)
    rng = np.random.default_rng(0)
    trajs, n = [], 0
    while n < 10_000:
        tr = sample_response(p, (0, 1), 8, 1.0, rng)
        trajs.append(tr)
        n += len(tr)
    assert entropy_mc(trajs).value == pytest.approx(math.log(4), abs=1e-12)


def test_entropy_mc_converges_to_enumerated_expectation():
    p = random_params(np.random.default_rng(1), vocab=4, k=2, scale=1.0)
    prompt, max_len, eos = (0, 1), 4, 3
    exact = 0.0
    total_prob = 0.0
    for resp in enumerate_responses(4, max_len, eos):
        lp = logprob_trajectory(p, prompt, resp)
        prob = math.exp(lp.sum())
        total_prob += prob
        exact += prob * float(-lp.mean())
    assert total_prob == pytest.approx(1.0, abs=1e-12)

    rng = np.random.default_rng(2)
    per_response, n_tokens = [], 0
    trajs = []
    while n_tokens < 10_000:
        tr = sample_response(p, prompt, max_len, 1.0, rng)
        trajs.append(tr)
        per_response.append(float(-tr.logp_cur.mean()))
        n_tokens += len(tr)
    est = entropy_mc(trajs).value
    se = np.std(per_response) / math.sqrt(len(per_response))
    assert abs(est - exact) < 3 * se


@pytest.mark.parametrize("probs, expected", [
    ([0.25] * 4, math.log(4)),
    ([0, 0, 1, 0], 0.0),
    ([0.5, 0.5, 0, 0], math.log(2)),
])
def test_entropy_exact_step(probs, expected):
    assert entropy_exact_step(probs) == pytest.approx(expected, abs=1e-15)


def test_entropy_exact_step_bounds():
    rng = np.random.default_rng(3)
    for v in (2, 5, 32):
        for _ in range(100):
            p = rng.dirichlet(np.full(v, 0.3))
            assert 0 <= entropy_exact_step(p) <= math.log(v) + 1e-12


def test_percentile_simple():
    rows = covariance_percentiles([1.0, -1.0], [100.0])
    assert (rows[0].positive, rows[0].negative) == (1.0, -1.0)


def test_percentile_rank_oracle():
    c = np.concatenate([np.arange(1, 501) / 1000, -np.arange(1, 501) / 1000])
    np.random.default_rng(4).shuffle(c)
    rows = {r.percentile: r for r in covariance_percentiles(c)}
    pos = sorted(c[c > 0], reverse=True)
    neg = sorted(c[c < 0])
    assert rows[1.0].positive == pos[4]                 # 5th largest of 500
    assert rows[1.0].negative == neg[4]
    assert rows[0.01].positive == pos[0]
    assert rows[20.0].positive == pos[99]
    assert rows[100.0].positive == pos[-1] == 0.001


def test_percentile_table_layout():
    rows = covariance_percentiles(np.linspace(-2, 3, 101))
    assert [r.percentile for r in rows] == [0.01, 1.0, 20.0, 40.0, 100.0]
    assert tuple(DEFAULT_PERCENTILES) == (0.01, 1.0, 20.0, 40.0, 100.0)
    pos = [r.positive for r in rows]
    neg = [abs(r.negative) for r in rows]
    assert pos == sorted(pos, reverse=True) and neg == sorted(neg, reverse=True)
    lines = format_percentile_table(rows).splitlines()
    assert lines[0].split("  ")[0] == "Percentile"
    assert "Positive Covariance" in lines[0] and "Negative Covariance" in lines[0]
    assert [ln.split()[0] for ln in lines[1:]] == ["0.01%", "1.00%", "20.00%", "40.00%", "100.00%"]


def test_percentile_missing_sign_reported_absent():
    rows = covariance_percentiles([0.5, 0.2, 0.0])
    assert all(r.negative is None for r in rows)
    assert "n/a" in format_percentile_table(rows)
    empty = format_percentile_table(covariance_percentiles([0.0, 0.0]))
    assert "no nonzero covariances" in empty


def test_cumulative_examples():
    np.testing.assert_allclose(cumulative_contribution([3.0, -1.0]), [[0.5, 0.75], [1.0, 1.0]])
    flat = cumulative_contribution(np.full(8, -0.4))
    np.testing.assert_allclose(flat[:, 1], flat[:, 0], rtol=1e-15)
    one = cumulative_contribution([0, 0, 2.5, 0])
    np.testing.assert_array_equal(one[:, 1], 1.0)
    with pytest.raises(ContractError):
        cumulative_contribution([0.0, 0.0])


def test_cumulative_monotone_and_ends_at_one():
    rng = np.random.default_rng(5)
    for _ in range(100):
        curve = cumulative_contribution(rng.standard_t(2, rng.integers(1, 300)))
        assert np.all(np.diff(curve[:, 1]) >= 0)
        assert curve[-1, 1] == 1.0 and curve[-1, 0] == 1.0


def test_cov_report_curve_has_origin():
    rep = cov_report([0.3, -2.0, 1.0])
    assert tuple(rep.cumulative_curve[0]) == (0.0, 0.0)
    assert tuple(rep.cumulative_curve[-1]) == (1.0, 1.0)
    assert cov_report([0.0, 0.0]).cumulative_curve is None


def test_top_share():
    assert top_share([10.0] + [0.1] * 99, 0.01) == pytest.approx(10 / 19.9)
    assert top_share([0.0, 0.0]) == 0.0


def test_predict_entropy_delta():
    assert predict_entropy_delta(0.1, [1.0, -1.0]) == 0.0
    assert predict_entropy_delta(0.01, [0.5, 0.5]) == pytest.approx(-0.005, abs=1e-15)
    assert predict_entropy_delta(1.0, [1.0, 3.0], weights=[3, 1]) == -1.5


def test_bandit_helpers():
    z = np.array([0.3, -1.0, 2.0])
    adv = np.array([1.0, -0.5, 0.2])
    p = np.exp(z) / np.exp(z).sum()
    assert bandit_entropy(z) == pytest.approx(-(p * np.log(p)).sum(), abs=1e-15)
    c, w = bandit_covariance(z, adv)
    lp = np.log(p)
    cov = (p * (lp - p @ lp) * (adv - p @ adv)).sum()
    assert w @ c == pytest.approx(cov, abs=1e-15)
    # natural step shifts logits by eta * centered advantage; constant shifts are no-ops
    np.testing.assert_allclose(bandit_natural_step(z, adv, 0.1) - z, 0.1 * (adv - p @ adv))
    np.testing.assert_allclose(bandit_vanilla_step(z, adv, 0.1) - z, 0.1 * p * (adv - p @ adv))


def test_entropy_law_first_order():
    rng = np.random.default_rng(6)
    eta = 1e-3
    for _ in range(20):
        v = int(rng.integers(2, 33))
        z, adv = rng.normal(0, 1.5, v), rng.normal(0, 1, v)
        measured, predicted = entropy_law(z, adv, eta)
        assert abs(measured - predicted) <= 0.05 * abs(predicted) + 10 * eta ** 2
        m2, p2 = entropy_law(z, adv, eta / 2)
        assert abs(m2 - p2) * 3 <= abs(measured - predicted)


def test_vanilla_step_uses_pi_weighted_covariance():
    # Plain gradient on logits changes entropy by -eta * sum pi^2 (lp - E lp)(A - E A)
    rng = np.random.default_rng(7)
    eta = 1e-4
    for _ in range(10):
        v = int(rng.integers(2, 20))
        z, adv = rng.normal(0, 1, v), rng.normal(0, 1, v)
        c, p = bandit_covariance(z, adv)
        measured = bandit_entropy(bandit_vanilla_step(z, adv, eta)) - bandit_entropy(z)
        predicted = -eta * float((p * p * c).sum())
        assert abs(measured - predicted) <= 0.05 * abs(predicted) + 10 * eta ** 2
