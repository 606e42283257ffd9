"""Bayes filter tests against brute-force oracles.

The heavyweight check here is the joint-enumeration oracle: for a K=3 grid
the full trajectory sum over all (K^3)^4 paths of a 3-observation episode is
tractable, and the sequential filter must reproduce its final marginal.
"""

import math

import numpy as np
import pytest

from moral_anchor.belief import (
    AnomalyState,
    BeliefGrid,
    ObservationModel,
    ObservationVec,
    TransitionModel,
    ValueState,
    belief_update,
    detect,
    entropy,
    init_belief,
    observation_likelihood,
    transition_predict,
    update_anomaly,
)
from moral_anchor.governance import ThresholdState

LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)


class FakeClock:
    def __init__(self, t=0.0):
        self.t = t

    def now(self):
        return self.t


def random_observation(rng):
    return ObservationVec(
        reward=float(rng.uniform(-1.0, 1.0)),
        bumped_wall=bool(rng.random() < 0.4),
        progress_delta=float(rng.choice([-1.0, 0.0, 1.0])),
        q_residual=float(rng.uniform(0.0, 2.0)),
    )


def full_operator(tm, k):
    m = tm.matrix(k)
    return np.kron(np.kron(m, m), m)


def joint_enumeration_posterior(prior, tm, om, observations, k):
    """Explicit sum over every latent trajectory; the independent oracle.

    Builds the (n, n, ..., n) trajectory tensor with one axis per latent
    step and marginalizes everything but the final one.
    """
    n = k**3
    big = full_operator(tm, k)  # big[to, from]
    liks = []
    for o in observations:
        ll = om.log_likelihood_grid(o, k)
        liks.append(np.exp(ll - ll.max()))

    joint = prior.copy()  # axis order: (x0,)
    for lik in liks:
        # append axis x_{t}: multiply by big[x_t, x_{t-1}] and the likelihood
        joint = joint[..., None] * big.T * lik[None, :]
        # joint now has one more trailing axis; earlier axes can be summed
        # lazily, but memory stays tiny for K=3 so keep one fold per step:
        joint = joint.reshape(-1, n)
    marginal = joint.sum(axis=0)
    return marginal / marginal.sum()


class TestTransitionMatrix:
    def test_doubly_stochastic_and_symmetric(self):
        for sigma, k in [(0.05, 5), (0.05, 3), (0.2, 5), (1.0, 2), (0.01, 7)]:
            m = TransitionModel(sigma).matrix(k)
            np.testing.assert_allclose(m.sum(axis=0), np.ones(k), atol=1e-12)
            np.testing.assert_allclose(m.sum(axis=1), np.ones(k), atol=1e-12)
            np.testing.assert_allclose(m, m.T, atol=1e-12)

    def test_default_radius_one_values(self):
        # sigma=0.05, K=5: radius ceil(3*0.05*5)=1, scaled offsets off/0.25
        m = TransitionModel(0.05).matrix(5)
        w_side = math.exp(-8.0)
        total = 1.0 + 2.0 * w_side
        center, side = 1.0 / total, w_side / total
        assert m[0, 0] == pytest.approx(center + side, abs=1e-15)  # reflected
        assert m[1, 0] == pytest.approx(side, abs=1e-15)
        assert m[2, 0] == 0.0
        assert m[2, 2] == pytest.approx(center, abs=1e-15)
        assert m[1, 2] == pytest.approx(side, abs=1e-15)

    def test_uniform_is_fixed_point(self):
        b = BeliefGrid.uniform(5)
        out = transition_predict(b, TransitionModel(0.05))
        np.testing.assert_allclose(out.probs, b.probs, atol=1e-12)

    def test_mass_conserved_from_corner(self):
        b = BeliefGrid.peaked(ValueState(0.0, 0.0, 0.0), 5)
        out = transition_predict(b, TransitionModel(0.3))
        assert out.probs.sum() == pytest.approx(1.0, abs=1e-12)
        assert out.probs.min() >= 0.0

    def test_invalid_sigma(self):
        with pytest.raises(ValueError):
            TransitionModel(0.0)


class TestGridBasics:
    def test_uniform_shape_and_mass(self):
        b = BeliefGrid.uniform(5)
        assert b.probs.shape == (125,)
        assert b.probs.sum() == pytest.approx(1.0)
        assert not b.degenerate_reset

    def test_peaked_flat_index(self):
        b = BeliefGrid.peaked(ValueState(1.0, 0.0, 0.5), 5)
        # clamped axis indices (4, 0, 2) -> flat (4*5+0)*5+2
        assert b.probs[(4 * 5 + 0) * 5 + 2] == 1.0
        assert b.probs.sum() == 1.0

    def test_mean_state_uniform_is_center(self):
        m = BeliefGrid.uniform(5).mean_state()
        assert (m.u, m.e, m.r) == pytest.approx((0.5, 0.5, 0.5))

    def test_mean_state_peaked_is_cell_center(self):
        m = BeliefGrid.peaked(ValueState(0.95, 0.05, 0.5), 5).mean_state()
        assert (m.u, m.e, m.r) == pytest.approx((0.9, 0.1, 0.5))

    def test_wrong_cell_count_raises(self):
        with pytest.raises(ValueError):
            BeliefGrid(np.ones(10), 5)

    def test_init_belief_variants(self):
        assert init_belief("uniform", 3).probs.shape == (27,)
        assert init_belief(ValueState(0.5, 0.5, 0.5), 3).probs.max() == 1.0
        with pytest.raises(ValueError):
            init_belief("gauss", 3)

    def test_value_state_bounds(self):
        with pytest.raises(ValueError):
            ValueState(1.2, 0.5, 0.5)
        with pytest.raises(ValueError):
            ValueState(0.5, -0.1, 0.5)


class TestLikelihood:
    def test_grid_matches_point_per_cell(self):
        om = ObservationModel()
        o = ObservationVec(reward=0.3, bumped_wall=True, progress_delta=1.0, q_residual=0.4)
        grid = om.log_likelihood_grid(o, 5)
        centers = BeliefGrid.uniform(5).cell_centers()
        for idx in range(125):
            v = ValueState(*centers[idx])
            assert grid[idx] == pytest.approx(om.log_likelihood_point(o, v), abs=1e-12)

    def test_center_cell_hand_value(self):
        # u=e=r=0.5: reward mean 0.025, p_bump 0.275, progress mean 0.025,
        # residual sigma 0.85
        om = ObservationModel()
        o = ObservationVec(reward=0.5, bumped_wall=True, progress_delta=1.0, q_residual=0.3)
        want = (
            -0.5 * ((0.5 - 0.025) / 0.30) ** 2
            - math.log(0.30)
            - LOG_SQRT_2PI
            + math.log(0.275)
            - 0.5 * ((1.0 - 0.025) / 0.60) ** 2
            - math.log(0.60)
            - LOG_SQRT_2PI
            - 0.5 * (0.3 / 0.85) ** 2
            - math.log(0.85)
            - LOG_SQRT_2PI
        )
        got = om.log_likelihood_point(o, ValueState(0.5, 0.5, 0.5))
        assert got == pytest.approx(want, abs=1e-12)
        assert observation_likelihood(o, ValueState(0.5, 0.5, 0.5), om) == pytest.approx(
            math.exp(want), abs=1e-12
        )

    def test_bump_probability_clipped(self):
        om = ObservationModel()
        assert om.bump_probability(0.0) == pytest.approx(0.50)
        assert om.bump_probability(1.0) == pytest.approx(0.05)
        wide = ObservationModel(bump_base=0.5, bump_gain=-2.0)
        assert wide.bump_probability(1.0) == 0.01

    def test_likelihood_strictly_positive(self):
        om = ObservationModel()
        o = ObservationVec(reward=50.0, bumped_wall=False, progress_delta=-40.0, q_residual=30.0)
        assert observation_likelihood(o, ValueState(0.1, 0.9, 0.9), om) >= 0.0
        assert np.all(np.isfinite(om.log_likelihood_grid(o, 5)))

    def test_invalid_model_params(self):
        with pytest.raises(ValueError):
            ObservationModel(reward_sigma=0.0)
        with pytest.raises(ValueError):
            ObservationModel(resid_sigma_base=-0.1)


class TestFilterOracle:
    def test_sequential_matches_joint_enumeration(self):
        # K=3, 3-step sequences, random priors and observations
        k = 3
        tm = TransitionModel(0.05)
        om = ObservationModel()
        rng = np.random.default_rng(11)
        for _ in range(25):
            prior = rng.random(k**3)
            prior /= prior.sum()
            observations = [random_observation(rng) for _ in range(3)]

            b = BeliefGrid(prior.copy(), k)
            for o in observations:
                b = belief_update(b, o, tm, om)

            want = joint_enumeration_posterior(prior, tm, om, observations, k)
            assert np.abs(b.probs - want).sum() <= 1e-9

    def test_update_normalizes(self):
        rng = np.random.default_rng(12)
        b = BeliefGrid.uniform(5)
        tm, om = TransitionModel(0.05), ObservationModel()
        for _ in range(200):
            b = belief_update(b, random_observation(rng), tm, om)
            assert b.probs.sum() == pytest.approx(1.0, abs=1e-9)
            assert b.probs.min() >= 0.0

    def test_consistent_evidence_concentrates(self):
        # healthy play (good reward, no bumps, progress, tiny residual)
        # should sharpen the belief for at least the first few steps
        b = BeliefGrid.uniform(5)
        tm, om = TransitionModel(0.05), ObservationModel()
        o = ObservationVec(reward=0.15, bumped_wall=False, progress_delta=1.0, q_residual=0.0)
        ents = [entropy(b)]
        for _ in range(5):
            b = belief_update(b, o, tm, om)
            ents.append(entropy(b))
        assert ents[1] < ents[0]
        assert ents[2] < ents[1]
        assert ents[3] < ents[2]
        mean = b.mean_state()
        assert mean.u > 0.5  # high reward pulls utility up
        assert mean.r > 0.5  # no bumps pull rule-adherence up

    def test_unobserved_axis_entropy_floor(self):
        # empathy never appears in the likelihood, so its marginal stays
        # uniform and total entropy can never drop below ln(K)
        b = BeliefGrid.uniform(5)
        tm, om = TransitionModel(0.05), ObservationModel()
        o = ObservationVec(reward=0.15, bumped_wall=False, progress_delta=1.0, q_residual=0.0)
        for _ in range(60):
            b = belief_update(b, o, tm, om)
        assert entropy(b) >= math.log(5) - 1e-9
        e_marginal = b.probs.reshape(5, 5, 5).sum(axis=(0, 2))
        np.testing.assert_allclose(e_marginal, np.full(5, 0.2), atol=1e-9)

    def test_degenerate_observation_resets_uniform(self):
        b = BeliefGrid.peaked(ValueState(0.5, 0.5, 0.5), 5)
        out = belief_update(
            b,
            ObservationVec(reward=math.inf, bumped_wall=False, progress_delta=0.0, q_residual=0.0),
            TransitionModel(0.05),
            ObservationModel(),
        )
        assert out.degenerate_reset
        np.testing.assert_allclose(out.probs, np.full(125, 1 / 125))


class TestEntropy:
    def test_uniform_value(self):
        assert entropy(BeliefGrid.uniform(5)) == pytest.approx(3 * math.log(5), abs=1e-12)

    def test_peaked_value(self):
        assert entropy(BeliefGrid.peaked(ValueState(0.5, 0.5, 0.5), 5)) == 0.0


class TestAnomaly:
    def test_sum_of_squares(self):
        a = AnomalyState()
        for v in (1.0, 2.0, 3.0):
            a = update_anomaly(a, v)
        assert a.score == pytest.approx(14.0)
        assert a.window == (1.0, 2.0, 3.0)

    def test_window_slides(self):
        a = AnomalyState(window_size=3)
        for v in (1.0, 2.0, 3.0, 4.0):
            a = update_anomaly(a, v)
        assert a.window == (2.0, 3.0, 4.0)
        assert a.score == pytest.approx(4.0 + 9.0 + 16.0)
        assert a.window_size == 3

    def test_default_window_size(self):
        a = AnomalyState()
        for v in range(25):
            a = update_anomaly(a, float(v))
        assert len(a.window) == 20
        assert a.window[0] == 5.0


class TestDetect:
    def setup_method(self):
        self.clock = FakeClock(123.0)

    def test_anomaly_wins_over_entropy(self):
        b = BeliefGrid.uniform(5)  # entropy 3 ln 5 > any small theta_u
        a = AnomalyState(window=(5.0, 5.0), window_size=20, score=50.0)
        th = ThresholdState(theta_u=0.45, theta_a=15.0)
        cand = detect(b, a, th, step_index=7, clock=self.clock)
        assert cand.trigger == "anomaly"
        assert cand.severity == "critical"
        assert cand.source == "detector"
        assert cand.value == 50.0
        assert cand.threshold_at_trigger == 15.0
        assert cand.step_index == 7
        assert cand.wall_time == 123.0

    def test_entropy_warning_when_anomaly_quiet(self):
        b = BeliefGrid.uniform(5)
        a = AnomalyState(score=1.0)
        cand = detect(b, a, ThresholdState(theta_u=0.45, theta_a=15.0), 0, self.clock)
        assert cand.trigger == "entropy"
        assert cand.severity == "warning"
        assert cand.value == pytest.approx(3 * math.log(5))

    def test_silent_when_both_below(self):
        b = BeliefGrid.peaked(ValueState(0.5, 0.5, 0.5), 5)  # entropy 0
        a = AnomalyState(score=1.0)
        assert detect(b, a, ThresholdState(theta_u=0.45, theta_a=15.0), 0, self.clock) is None

    def test_thresholds_are_strict(self):
        b = BeliefGrid.peaked(ValueState(0.5, 0.5, 0.5), 5)
        a = AnomalyState(score=15.0)
        th = ThresholdState(theta_u=0.45, theta_a=15.0)
        assert detect(b, a, th, 0, self.clock) is None  # equality does not fire

    def test_candidate_payload(self):
        b = BeliefGrid.uniform(5)
        cand = detect(b, AnomalyState(score=99.0), ThresholdState(), 3, self.clock)
        payload = cand.payload()
        assert payload == {
            "source": "detector",
            "severity": "critical",
            "trigger": "anomaly",
            "value": 99.0,
            "threshold": 15.0,
            "step": 3,
            "wall_time": 123.0,
        }
