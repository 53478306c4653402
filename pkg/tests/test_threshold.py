import itertools
import json
import math

import numpy as np
import pytest

from streamdp.config import StreamConfig
from streamdp.errors import DegenerateParameterError, InvalidParameterError
from streamdp.rng import RandomSource
from streamdp.threshold import (
    PakParams,
    em_threshold,
    exceedance_counts,
    pak_threshold,
    quality_scores,
    sp_threshold,
    truncate,
)


def combined_range_error(theta, config, tail_fn, eps=None):
    """Oracle: the true combined error of the hierarchy at a threshold.

    (b-1) * log_b(r)**3 * 2*theta^2/eps^2 + ((r/3) * E[max(v - theta, 0)])^2
    with the expectation over the data distribution (``tail_fn``).
    """
    eps = config.epsilon if eps is None else eps
    b, r = config.fan_out, config.range_limit
    log_levels = math.log(r) / math.log(b)
    noise = (b - 1) * log_levels**3 * 2.0 * theta**2 / eps**2
    bias = (r / 3.0) * tail_fn(theta)
    return noise + bias**2


def empirical_tail(values):
    values = np.asarray(values, dtype=np.float64)

    def tail(theta):
        return float(np.maximum(values - theta, 0.0).mean())

    return tail


class TestQualityScores:
    def config(self, **kw):
        defaults = dict(upper=10.0, range_limit=2**20, fan_out=16, epsilon=0.5,
                        holdout=4, bias_scale=60.0)
        defaults.update(kw)
        return StreamConfig(**defaults)

    def test_saturated_threshold_has_zero_bias_term(self):
        # theta >= max(values): nothing would be truncated, so only the
        # noise term remains.
        config = self.config()
        values = np.array([1.0, 2.0, 3.0, 10.0])
        scores = quality_scores(values, config)
        noise_coeff = (
            3.0 * 4 / (60.0 * 2**20 * 0.5)
            * math.sqrt(2.0 * 15 * 5.0**3)
        )
        assert scores[-1] == pytest.approx(-noise_coeff * 10.0)
        assert exceedance_counts(values, config.grid)[-1] == 0

    def test_hand_evaluated_score(self):
        # values {1,2,3,10} at theta=3: one reading would be truncated.
        config = self.config()
        values = np.array([1.0, 2.0, 3.0, 10.0])
        scores = quality_scores(values, config)
        theta_index = 2  # grid is 1..10
        noise_coeff = (
            3.0 * 4 / (60.0 * 2**20 * 0.5)
            * math.sqrt(2.0 * 15 * 5.0**3)
        )
        assert scores[theta_index] == pytest.approx(-noise_coeff * 3.0 - 1.0)

    def test_empty_holdout_rejected(self):
        with pytest.raises(InvalidParameterError):
            quality_scores(np.array([]), self.config())

    def test_out_of_range_holdout_rejected(self):
        with pytest.raises(InvalidParameterError):
            quality_scores(np.array([11.0]), self.config())

    def test_neighboring_sensitivity_exhaustive(self):
        # All multisets of size <= 5 over integers 0..10, all single-value
        # changes, all grid thresholds: |delta q| <= 1 and every nonzero
        # delta has the same sign (the monotone-quality property).
        config = self.config(holdout=5)
        grid = config.grid
        for size in (1, 2, 3, 4, 5):
            for base in itertools.combinations_with_replacement(range(0, 11), size):
                base_counts = exceedance_counts(np.array(base, float), grid)
                for position in range(size):
                    for replacement in range(0, 11):
                        neighbor = list(base)
                        neighbor[position] = replacement
                        neighbor_counts = exceedance_counts(
                            np.array(neighbor, float), grid
                        )
                        delta = base_counts - neighbor_counts
                        assert np.max(np.abs(delta)) <= 1
                        assert not (np.any(delta > 0) and np.any(delta < 0))

    def test_structure_terms_monotone(self):
        config = self.config(holdout=6)
        values = np.array([0.5, 2.0, 3.5, 5.0, 7.0, 9.0])
        counts = exceedance_counts(values, config.grid)
        assert np.all(np.diff(counts) <= 0)  # bias term -m_theta non-decreasing
        scores = quality_scores(values, config)
        noise_term = scores + counts  # recover the deterministic part
        assert np.all(np.diff(noise_term) < 0)  # strictly decreasing in theta

    def test_interior_tradeoff_exists(self):
        # With enough data mass below a knee, the best score is interior.
        config = self.config(upper=100.0, epsilon=0.05, holdout=1000)
        rng = np.random.default_rng(0)
        values = np.minimum(rng.exponential(10.0, size=1000), 100.0)
        scores = quality_scores(values, config)
        best = int(np.argmax(scores))
        assert 0 < best < config.grid.shape[0] - 1


class TestEmThreshold:
    def test_huge_epsilon_returns_argmax(self):
        config = StreamConfig(upper=50.0, range_limit=2**20, fan_out=16,
                              epsilon=1.0, holdout=100)
        values = np.concatenate([np.full(50, 10.0), np.full(50, 20.0)])
        scores = quality_scores(values, config)
        decision = em_threshold(values, config, RandomSource(1), eps_select=1e9)
        assert decision.theta == config.grid[int(np.argmax(scores))]

    def test_trace_matches_offline_scores(self):
        config = StreamConfig(upper=30.0, range_limit=4096, fan_out=16,
                              epsilon=0.2, holdout=20)
        values = np.linspace(0, 25, 20)
        decision = em_threshold(values, config, RandomSource(2))
        np.testing.assert_array_equal(
            decision.trace["scores"], quality_scores(values, config)
        )

    def test_two_level_holdout_concentrates_at_error_minimizer(self):
        # Half the readings at 10, half at 20: the combined-error oracle is
        # minimized exactly at 20 (bias vanishes, noise grows above), and the
        # quality argmax must agree; the sampled threshold never dips below.
        config = StreamConfig(upper=1000.0, range_limit=2**20, fan_out=16,
                              epsilon=0.1, holdout=1000)
        values = np.concatenate([np.full(500, 10.0), np.full(500, 20.0)])
        tail = empirical_tail(values)
        errors = [combined_range_error(t, config, tail) for t in config.grid]
        oracle_theta = config.grid[int(np.argmin(errors))]
        assert oracle_theta == 20.0
        scores = quality_scores(values, config)
        assert config.grid[int(np.argmax(scores))] == oracle_theta
        picks = [
            em_threshold(values, config, RandomSource(seed)).theta
            for seed in range(30)
        ]
        assert min(picks) >= 20.0
        assert np.median(picks) <= 400.0  # within the flat basin above 20

    def test_skewed_holdout_tracks_measured_error(self):
        # Synthetic skew shaped like the DNS profile (p95 ~ 85, max 617,
        # B = 2000): the quality argmax's true combined error stays within a
        # small factor of the brute-force minimum.
        config = StreamConfig(upper=2000.0, range_limit=2**20, fan_out=16,
                              epsilon=0.1, holdout=2**14)
        gen = np.random.default_rng(7)
        body = gen.uniform(0, 85, size=int(0.95 * 2**14))
        tail_part = 85.0 + 532.0 * gen.beta(1.0, 3.0, size=2**14 - body.size)
        values = np.concatenate([body, tail_part])
        tail = empirical_tail(values)
        errors = np.array(
            [combined_range_error(t, config, tail) for t in config.grid]
        )
        theta_q = config.grid[int(np.argmax(quality_scores(values, config)))]
        best = errors.min()
        at_quality = errors[int(np.searchsorted(config.grid, theta_q))]
        assert at_quality <= 3.0 * best

    def test_propagates_empty_holdout(self):
        config = StreamConfig(upper=10.0, range_limit=1024, fan_out=16,
                              epsilon=1.0, holdout=1)
        with pytest.raises(InvalidParameterError):
            em_threshold(np.array([]), config, RandomSource(0))


class TestPakThreshold:
    def config(self, upper=2000.0):
        return StreamConfig(upper=upper, range_limit=2**20, fan_out=16,
                            epsilon=0.1, holdout=2**14)

    def heavy_tailed_holdout(self, seed, m=2**14):
        gen = np.random.default_rng(seed)
        body = gen.uniform(0, 100, size=int(0.995 * m))
        tail = gen.uniform(100, 2000, size=m - body.size)
        return np.concatenate([body, tail])

    def test_zero_inflation_returns_quantile(self):
        values = self.heavy_tailed_holdout(0)
        decision = pak_threshold(
            values, PakParams(), self.config(), RandomSource(1), inflation=0.0
        )
        assert decision.theta == pytest.approx(decision.trace["quantile_value"])

    def test_paper_defaults_overshoot_maximum(self):
        # The documented failure mode: at small epsilon the inflated
        # threshold lands above every observed value (usually at the clamp).
        config = self.config()
        overshoots = 0
        for seed in range(100):
            values = self.heavy_tailed_holdout(seed, m=1024)
            decision = pak_threshold(values, PakParams(), config, RandomSource(seed))
            if decision.theta >= values.max():
                overshoots += 1
        assert overshoots >= 90

    def test_fixed_seed_golden(self):
        # Interior (unclamped) value needs a budget large enough that the
        # inflation stays inside the domain.
        config = StreamConfig(upper=100000.0, range_limit=2**20, fan_out=16,
                              epsilon=5.0, holdout=2**14)
        values = self.heavy_tailed_holdout(42, m=2**14)
        decision = pak_threshold(values, PakParams(), config, RandomSource(9))
        assert decision.theta == pytest.approx(694.4597896530172, rel=0, abs=0)

    def test_kappa_degenerate_rejected(self):
        params = PakParams(failure_bound=0.006)
        with pytest.raises(DegenerateParameterError):
            params.kappa(smoothing=5.0, noise_scaler=0.05)

    def test_clamped_to_domain(self):
        values = self.heavy_tailed_holdout(3, m=512)
        decision = pak_threshold(values, PakParams(), self.config(), RandomSource(0))
        assert 0.0 <= decision.theta <= 2000.0


class TestSpThreshold:
    def test_below_inflated_variant_same_seed(self):
        gen = np.random.default_rng(11)
        values = gen.uniform(0, 100, size=4096)
        config = StreamConfig(upper=2000.0, range_limit=2**20, fan_out=16,
                              epsilon=0.1, holdout=4096)
        delta = 1.0 / 4096.0**2
        for seed in range(20):
            sp = sp_threshold(values, 99.575, 0.1, delta, 2000.0, RandomSource(seed))
            pak = pak_threshold(values, PakParams(), config, RandomSource(seed))
            assert sp.theta <= pak.theta

    def test_huge_epsilon_returns_quantile(self):
        values = np.sort(np.random.default_rng(1).uniform(0, 50, size=1000))
        sp = sp_threshold(values, 95.0, 1e9, 1e-6, 100.0, RandomSource(4))
        rank = math.ceil(0.95 * 1000)
        assert sp.theta == pytest.approx(values[rank - 1], rel=1e-6)

    def test_fixed_seed_golden(self):
        gen = np.random.default_rng(5)
        values = gen.uniform(0, 100, size=2048)
        sp = sp_threshold(values, 99.5, 5.0, 1e-6, 10000.0, RandomSource(21))
        assert sp.theta == pytest.approx(598.1167567071502, rel=0, abs=0)


class TestTruncate:
    def test_below(self):
        assert truncate(5.0, 10.0) == 5.0

    def test_above(self):
        assert truncate(15.0, 10.0) == 10.0

    def test_boundary(self):
        assert truncate(10.0, 10.0) == 10.0

    def test_vectorized(self):
        np.testing.assert_array_equal(
            truncate(np.array([1.0, 12.0]), 10.0), np.array([1.0, 10.0])
        )


class TestDecisionSerialization:
    def test_json_and_trace_roundtrip(self, tmp_path):
        config = StreamConfig(upper=10.0, range_limit=1024, fan_out=16,
                              epsilon=1.0, holdout=4)
        decision = em_threshold(
            np.array([1.0, 2.0, 3.0, 4.0]), config, RandomSource(1)
        )
        json_path = tmp_path / "decision.json"
        trace_path = tmp_path / "trace.csv"
        decision.to_json(path=json_path, trace_path=trace_path)
        record = json.loads(json_path.read_text())
        assert record["theta"] == decision.theta
        assert record["method"] == "em"
        assert record["m"] == 4
        assert record["trace_path"] == str(trace_path)
        lines = trace_path.read_text().strip().splitlines()
        assert lines[0] == "candidate,score"
        assert len(lines) == 1 + config.grid.shape[0]
        candidate, score = lines[3].split(",")
        assert float(candidate) == config.grid[2]
        assert float(score) == decision.trace["scores"][2]
