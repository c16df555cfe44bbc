"""Chain module: generator validation, exact simulation, martingale statistics."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import regimelq as rl
from regimelq.errors import DimensionMismatch, EmptySample, NegativeOffDiagonal
from regimelq.streams import derive_rng, derive_seed


class TestValidateGenerator:
    def test_valid_two_state(self):
        gen = rl.validate_generator([[-2.0, 2.0], [1.0, -1.0]])
        assert gen.size == 2
        np.testing.assert_array_equal(gen.rates, [[-2.0, 2.0], [1.0, -1.0]])

    def test_zero_generator_accepted(self):
        gen = rl.validate_generator([[0.0, 0.0], [0.0, 0.0]])
        assert gen.is_zero

    def test_diagonal_repaired(self):
        # row 1 sums to 1, so its diagonal is recomputed to -2
        gen = rl.validate_generator([[-1.0, 2.0], [1.0, -1.0]])
        np.testing.assert_allclose(gen.rates, [[-2.0, 2.0], [1.0, -1.0]])
        assert np.allclose(gen.rates.sum(axis=1), 0.0)

    def test_negative_off_diagonal(self):
        with pytest.raises(NegativeOffDiagonal):
            rl.validate_generator([[-1.0, -0.5], [1.0, -1.0]])

    def test_not_square(self):
        with pytest.raises(DimensionMismatch):
            rl.validate_generator([[0.0, 0.0]])


class TestSampleChainPath:
    def test_zero_generator_never_jumps(self):
        gen = rl.validate_generator([[0.0]])
        path = rl.sample_chain_path(gen, 0, 0.0, 5.0, derive_rng(1))
        assert len(path.jump_times) == 0
        assert path.regime_at(3.0) == 0

    def test_absorbing_state_stops(self):
        gen = rl.validate_generator([[-3.0, 3.0], [0.0, 0.0]])
        path = rl.sample_chain_path(gen, 0, 0.0, 100.0, derive_rng(2))
        assert len(path.jump_times) == 1
        assert path.states[0] == 1

    def test_path_invariants(self):
        gen = rl.validate_generator([[-2.0, 2.0], [2.0, -2.0]])
        for j in range(200):
            path = rl.sample_chain_path(gen, 0, 0.0, 1.0, derive_rng(3, j))
            assert np.all(np.diff(path.jump_times) > 0)
            assert np.all(path.jump_times > 0.0) and np.all(path.jump_times <= 1.0)
            seq = np.concatenate(([path.initial_regime], path.states))
            assert np.all(seq[:-1] != seq[1:])

    def test_holding_time_mean(self):
        # first holding time in state 0 is Exponential(2): mean 0.5
        gen = rl.validate_generator([[-2.0, 2.0], [2.0, -2.0]])
        n = 20_000
        first = np.array([
            rl.sample_chain_path(gen, 0, 0.0, 10.0, derive_rng(4, j)).jump_times[0]
            for j in range(n)
        ])
        assert abs(first.mean() - 0.5) <= 3.0 * 0.5 / np.sqrt(n)

    def test_deterministic_given_seed(self):
        gen = rl.validate_generator([[-2.0, 2.0], [1.0, -1.0]])
        a = rl.sample_chain_path(gen, 0, 0.0, 1.0, derive_rng(5))
        b = rl.sample_chain_path(gen, 0, 0.0, 1.0, derive_rng(5))
        np.testing.assert_array_equal(a.jump_times, b.jump_times)
        np.testing.assert_array_equal(a.states, b.states)


class TestBatchSampler:
    def test_matches_distribution_of_single_sampler(self):
        # occupation fraction of state 0 for the symmetric rate-2 chain is 1/2
        gen = rl.validate_generator([[-2.0, 2.0], [2.0, -2.0]])
        paths = rl.sample_chain_paths(gen, 0, 0.0, 1.0, derive_rng(6), 40_000)
        occ0 = np.array([p.occupation_times(2)[0] for p in paths])
        # exact mean occupation: 1/2 + (1 - e^{-4}) / 8 for the start-at-0 chain
        exact = 0.5 + (1.0 - np.exp(-4.0)) / 8.0
        assert abs(occ0.mean() - exact) <= 3.0 * occ0.std(ddof=1) / np.sqrt(len(occ0))

    def test_deterministic_given_seed(self):
        gen = rl.validate_generator([[-2.0, 2.0], [1.0, -1.0]])
        a = rl.sample_chain_paths(gen, 0, 0.0, 1.0, derive_rng(7), 50)
        b = rl.sample_chain_paths(gen, 0, 0.0, 1.0, derive_rng(7), 50)
        for pa, pb in zip(a, b):
            np.testing.assert_array_equal(pa.jump_times, pb.jump_times)
            np.testing.assert_array_equal(pa.states, pb.states)


class TestCountingProcess:
    def test_regimes_on_grid_right_continuous(self):
        path = rl.ChainPath(
            initial_regime=0,
            jump_times=np.array([0.25, 0.5]),
            states=np.array([1, 0]),
            t0=0.0,
            T=1.0,
        )
        times = np.array([0.0, 0.25, 0.4, 0.5, 1.0])
        np.testing.assert_array_equal(path.regimes_on_grid(times), [0, 1, 1, 0, 0])

    def test_occupation_and_counts(self):
        path = rl.ChainPath(
            initial_regime=0,
            jump_times=np.array([0.25, 0.5]),
            states=np.array([1, 0]),
            t0=0.0,
            T=1.0,
        )
        np.testing.assert_allclose(path.occupation_times(2), [0.75, 0.25])
        counts = path.jump_counts(2)
        np.testing.assert_array_equal(counts, [[0, 1], [1, 0]])


class TestMartingaleResidual:
    def test_zero_generator_exact(self):
        gen = rl.validate_generator([[0.0, 0.0], [0.0, 0.0]])
        paths = [rl.sample_chain_path(gen, 0, 0.0, 1.0, derive_rng(8, j)) for j in range(50)]
        res = rl.martingale_residual(paths, gen, 1.0)
        np.testing.assert_array_equal(res.mean, np.zeros((2, 2)))

    def test_symmetric_chain_within_three_stderr(self):
        gen = rl.validate_generator([[-1.0, 1.0], [1.0, -1.0]])
        paths = rl.sample_chain_paths(gen, 0, 0.0, 1.0, derive_rng(9), 100_000)
        res = rl.martingale_residual(paths, gen, 1.0)
        assert res.max_zscore() <= 3.0

    def test_compensator_identity(self):
        # E[N_01(1)] equals E[rate_01 * occupation of state 0]
        gen = rl.validate_generator([[-2.0, 2.0], [2.0, -2.0]])
        paths = rl.sample_chain_paths(gen, 0, 0.0, 1.0, derive_rng(10), 100_000)
        counts = np.array([p.jump_counts(2)[0, 1] for p in paths])
        comp = np.array([2.0 * p.occupation_times(2)[0] for p in paths])
        diff = counts - comp
        assert abs(diff.mean()) <= 3.0 * diff.std(ddof=1) / np.sqrt(len(diff))

    def test_single_path_stderr_flagged(self):
        gen = rl.validate_generator([[-1.0, 1.0], [1.0, -1.0]])
        res = rl.martingale_residual(
            [rl.sample_chain_path(gen, 0, 0.0, 1.0, derive_rng(11))], gen, 1.0
        )
        assert res.n == 1
        assert np.all(np.isfinite(res.mean))
        assert np.all(np.isnan(res.stderr))

    def test_empty_sample(self):
        gen = rl.validate_generator([[0.0]])
        with pytest.raises(EmptySample):
            rl.martingale_residual([], gen, 1.0)


@st.composite
def generators(draw, max_states=4, max_rate=5.0):
    d = draw(st.integers(min_value=2, max_value=max_states))
    entries = draw(
        st.lists(
            st.floats(min_value=0.0, max_value=max_rate),
            min_size=d * d,
            max_size=d * d,
        )
    )
    raw = np.array(entries).reshape(d, d)
    np.fill_diagonal(raw, 0.0)
    raw[np.diag_indices(d)] = -raw.sum(axis=1)
    return raw


@settings(max_examples=10, deadline=None, derandomize=True)
@given(generators())
def test_property_compensated_counts_mean_zero(raw):
    gen = rl.validate_generator(raw)
    seed = derive_seed(12, raw.tobytes().hex())
    paths = rl.sample_chain_paths(gen, 0, 0.0, 1.0, derive_rng(seed), 4000)
    for p in paths[:50]:
        assert np.all(np.diff(p.jump_times) > 0)
        assert np.all((p.jump_times > 0.0) & (p.jump_times <= 1.0))
        seq = np.concatenate(([p.initial_regime], p.states))
        assert np.all(seq[:-1] != seq[1:])
    res = rl.martingale_residual(paths, gen, 1.0)
    assert res.max_zscore() <= 3.0
