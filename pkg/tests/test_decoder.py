import math
from collections import Counter

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from lattix.decoder import (
    NE_PERSISTENT,
    NE_WIDE,
    UNBOUNDED,
    BatchedDecoder,
    DecoderConfig,
    DivergenceError,
    PosteriorWidthError,
    TokenBatch,
    contract_and_preprocess,
    decoder_state_bytes,
    expand_emitting,
    expand_nonemitting,
    set_beam_via_max_active,
)
from lattix.fst import CsrFst, build_fst, load_fst
from lattix.generate import random_fst
from lattix.posteriors import generate_synthetic
from lattix.reference import serial_decode
from lattix.scheduler import LaneSlot


def main_q(fst, states, costs, lane_counts=None, degree="emitting"):
    states = np.asarray(states, dtype=np.int64)
    deg = fst.emitting_degree if degree == "emitting" else fst.epsilon_degree
    return TokenBatch.from_columns(
        [len(states)] if lane_counts is None else lane_counts,
        state=states,
        cost=np.asarray(costs, dtype=np.float64),
        index=np.arange(len(states)),
        degree=deg[states],
    )


def aux_q(costs, lane_counts=None):
    costs = np.asarray(costs, dtype=np.float64)
    return TokenBatch.from_columns(
        [len(costs)] if lane_counts is None else lane_counts,
        state=np.zeros(len(costs), dtype=np.int64),
        cost=costs,
    )


class TestConfig:
    def test_defaults(self):
        c = DecoderConfig()
        assert (c.beam, c.lattice_beam, c.max_active) == (15.0, 8.0, 10000)
        assert c.ne_persistent_threshold == 4000

    @pytest.mark.parametrize(
        "kwargs",
        [
            {"beam": 0.0},
            {"lattice_beam": -1.0},
            {"beam": 5.0, "lattice_beam": 6.0},
            {"max_active": 0},
            {"n_lanes": 4, "n_channels": 2},
            {"n_lanes": 0},
            {"histogram_bins": 1},
        ],
    )
    def test_invalid(self, kwargs):
        with pytest.raises(ValueError):
            DecoderConfig(**kwargs)

    def test_unpruned(self):
        c = DecoderConfig.unpruned()
        assert math.isinf(c.beam) and c.max_active == UNBOUNDED


class TestStateBytes:
    def test_single_lane(self):
        assert decoder_state_bytes(10000, 1, 1) == 6_081_024

    def test_large_deployment(self):
        assert decoder_state_bytes(10000, 5000, 500) == 5_920_512_000

    def test_zero(self):
        assert decoder_state_bytes(0, 0, 0) == 0

    def test_config_property(self):
        c = DecoderConfig(max_active=100, n_lanes=2, n_channels=3)
        assert c.state_bytes == 64 * 100 * 3 + 544 * 100 * 2 + 1024 * 2


class TestExpandEmitting:
    def test_single_arc(self, three_state):
        aux = expand_emitting(three_state, main_q(three_state, [0], [0.0]), np.array([[0, 2.0, 0]]), 15.0)
        assert len(aux) == 1
        assert aux.state[0] == 1
        assert aux.cost[0] == pytest.approx(-1.5)
        assert aux.prev[0] == 0
        assert aux.acoustic[0] == -2.0

    def test_empty_main(self, three_state):
        aux = expand_emitting(three_state, TokenBatch.empty(1), np.zeros((1, 3)), 15.0)
        assert len(aux) == 0

    def test_zero_degree_tokens_produce_nothing(self, three_state):
        main = main_q(three_state, [0], [0.0])
        main.degree[:] = 0
        assert len(expand_emitting(three_state, main, np.zeros((1, 3)), 15.0)) == 0

    @pytest.mark.parametrize("seed", range(5))
    def test_matches_serial_expansion(self, seed):
        fst = random_fst(50, 250, epsilon_frac=0.2, seed=seed)
        rng = np.random.default_rng(seed)
        states = rng.choice(50, size=20, replace=False)
        costs = rng.uniform(0, 5, size=20)
        row = rng.standard_normal(fst.max_ilabel + 1)
        aux = expand_emitting(fst, main_q(fst, states, costs), row[None, :], math.inf)
        expected = Counter()
        for s, c in zip(states.tolist(), costs.tolist()):
            for a in range(fst.arc_offsets[s], fst.emitting_end[s]):
                expected[(int(fst.arc_next_state[a]), c + fst.arc_weight[a] + -row[fst.arc_ilabel[a]])] += 1
        assert Counter(zip(aux.state.tolist(), aux.cost.tolist())) == expected

    def test_lanes_are_independent(self):
        fst = random_fst(30, 120, seed=2)
        rng = np.random.default_rng(0)
        rows = rng.standard_normal((2, fst.max_ilabel + 1))
        a = main_q(fst, [0, 3, 5], [0.0, 1.0, 2.0])
        b = main_q(fst, [1, 2], [0.5, 0.25])
        both = expand_emitting(fst, TokenBatch.concat([a, b]), rows, 4.0)
        only_b = expand_emitting(fst, b, rows[1:], 4.0)
        assert np.array_equal(both.lane(1).cost, only_b.cost)
        assert np.array_equal(both.lane(1).state, only_b.state)


class TestMaxActive:
    def test_no_tightening(self):
        (b,) = set_beam_via_max_active(aux_q([1.0, 2.0, 3.0, 4.0, 5.0]), 15.0, 10000)
        assert b.effective_beam == 15.0
        assert b.cutoff == 16.0
        assert not b.tightened

    @pytest.mark.parametrize("seed", range(10))
    def test_cutoff_lands_in_alpha_bin(self, seed):
        bins, alpha, beam = 16, 10, 10.0
        costs = np.sort(np.random.default_rng(seed).uniform(0.0, beam, size=20))
        costs[0] = 0.0
        (b,) = set_beam_via_max_active(aux_q(costs), beam, alpha, bins)
        kept = int(np.sum(costs < b.cutoff))
        assert alpha <= kept <= alpha + math.ceil(20 / bins) + b.cutoff_bin_population
        # the alpha-th cheapest cost is in the cutoff bin
        width = beam / bins
        assert b.cutoff - width <= costs[alpha - 1] < b.cutoff

    def test_ties_survive(self):
        (b,) = set_beam_via_max_active(aux_q([3.0] * 7), 15.0, 1)
        assert b.cutoff_bin == 0
        assert np.sum(np.full(7, 3.0) < b.cutoff) == 7

    def test_infinite_beam_still_limits(self):
        costs = np.arange(100, dtype=float)
        (b,) = set_beam_via_max_active(aux_q(costs), math.inf, 10, 100)
        assert np.sum(costs < b.cutoff) == 10

    def test_empty_lane(self):
        states = set_beam_via_max_active(aux_q([1.0], lane_counts=[0, 1]), 5.0, 10)
        assert math.isinf(states[0].cutoff)
        assert states[1].cutoff == 6.0

    @given(
        costs=st.lists(st.floats(0, 100, allow_nan=False), min_size=1, max_size=300),
        alpha=st.integers(1, 50),
        bins=st.sampled_from([2, 7, 64, 256]),
    )
    def test_histogram_granularity_bound(self, costs, alpha, bins):
        costs = np.array(costs)
        (b,) = set_beam_via_max_active(aux_q(costs), 30.0, alpha, bins)
        kept = int(np.sum(costs < b.cutoff))
        assert kept <= alpha + b.cutoff_bin_population
        assert 0 < b.effective_beam <= 30.0
        assert b.cutoff == b.best_cost + b.effective_beam or b.tightened
        if b.tightened:
            assert kept >= alpha
            assert int(b.histogram[: b.cutoff_bin + 1].sum()) == kept


class TestContract:
    def test_drops_above_cutoff(self, three_state):
        main = contract_and_preprocess(three_state, aux_q([1.0, 99.0]), 16.0)
        assert list(main.cost) == [1.0]

    def test_all_under_cutoff(self, three_state):
        aux = aux_q([3.0, 1.0, 2.0])
        main = contract_and_preprocess(three_state, aux, 16.0)
        assert sorted(main.cost) == sorted(aux.cost)

    def test_degree_is_epsilon_degree(self, three_state):
        aux = TokenBatch.from_columns([2], state=[0, 1], cost=[0.0, 0.0])
        main = contract_and_preprocess(three_state, aux, 1.0)
        assert list(main.degree) == [1, 0]

    @given(st.lists(st.floats(-50, 50), max_size=100), st.floats(-50, 50))
    def test_matches_filter(self, costs, cutoff):
        main = contract_and_preprocess(load_fst("0 0.0\n"), aux_q(costs), cutoff)
        assert Counter(main.cost.tolist()) == Counter(c for c in costs if c < cutoff)


def bellman_ford_closure(fst, seeds, cutoff):
    dist = dict(seeds)
    for _ in range(fst.num_states + 1):
        changed = False
        for u in list(dist):
            for a in range(fst.emitting_end[u], fst.arc_offsets[u + 1]):
                v, c = int(fst.arc_next_state[a]), dist[u] + fst.arc_weight[a]
                if c < cutoff and c < dist.get(v, math.inf):
                    dist[v] = c
                    changed = True
        if not changed:
            return dist
    raise AssertionError("closure did not converge")


class TestNonEmitting:
    def test_single_relaxation(self, three_state):
        out, _ = expand_nonemitting(three_state, main_q(three_state, [0], [0.0], degree="eps"), 15.0)
        assert sorted(zip(out.state.tolist(), out.cost.tolist())) == [(0, 0.0), (2, 1.0)]
        eps = out.prev_state >= 0
        assert out.prev_state[eps].tolist() == [0]

    def test_chain(self):
        fst = load_fst("0 1 0 0 0.1\n1 2 0 0 0.1\n2 3 0 0 0.1\n3 0.0\n")
        out, _ = expand_nonemitting(fst, main_q(fst, [0], [0.0], degree="eps"), 15.0)
        got = dict(zip(out.state.tolist(), out.cost.tolist()))
        assert got == pytest.approx({0: 0.0, 1: 0.1, 2: 0.2, 3: 0.3})

    def test_cutoff_blocks_relaxation(self):
        fst = load_fst("0 1 0 0 0.1\n1 2 0 0 5.0\n2 0.0\n")
        out, _ = expand_nonemitting(fst, main_q(fst, [0], [0.0], degree="eps"), 1.0)
        assert sorted(out.state.tolist()) == [0, 1]

    @pytest.mark.parametrize("threshold", [1, 10**9])
    @pytest.mark.parametrize("seed", range(6))
    def test_matches_bellman_ford(self, seed, threshold):
        fst = random_fst(40, 200, epsilon_frac=0.5, seed=seed)
        rng = np.random.default_rng(seed)
        states = rng.choice(40, size=8, replace=False)
        costs = rng.uniform(0, 3, size=8)
        cutoff = 6.0
        out, stats = expand_nonemitting(fst, main_q(fst, states, costs, degree="eps"), cutoff, threshold)
        expected = bellman_ford_closure(fst, zip(states.tolist(), costs.tolist()), cutoff)
        got = {}
        for s, c in zip(out.state.tolist(), out.cost.tolist()):
            got[s] = min(c, got.get(s, math.inf))
        assert got.keys() == expected.keys()
        for s in got:
            assert got[s] == pytest.approx(expected[s], abs=1e-12)
        assert stats.modes[0] == (NE_WIDE if threshold == 1 else NE_PERSISTENT)

    @given(seed=st.integers(0, 5000), threshold=st.sampled_from([1, 2, 5]))
    def test_modes_produce_identical_tokens(self, seed, threshold):
        fst = random_fst(25, 100, epsilon_frac=0.5, seed=seed)
        rng = np.random.default_rng(seed)
        counts = [5, 3]
        states = np.concatenate([rng.choice(25, size=n, replace=False) for n in counts])
        main = main_q(fst, states, rng.uniform(0, 2, size=8), lane_counts=counts, degree="eps")
        wide, _ = expand_nonemitting(fst, main, [4.0, 5.0], threshold)
        scalar, _ = expand_nonemitting(fst, main, [4.0, 5.0], 10**9)
        for lane in range(2):
            a, b = wide.lane(lane), scalar.lane(lane)
            key_a = sorted(zip(a.state.tolist(), a.cost.tolist(), a.prev_state.tolist(), a.arc.tolist()))
            key_b = sorted(zip(b.state.tolist(), b.cost.tolist(), b.prev_state.tolist(), b.arc.tolist()))
            assert key_a == key_b

    def test_divergence_guard(self):
        # bypass load-time validation to build a negative epsilon cycle
        good = build_fst([(0, 1, 0, 0, 1.0), (1, 0, 0, 0, 1.0)], {0: 0.0})
        bad = CsrFst(
            num_states=good.num_states,
            arc_offsets=good.arc_offsets,
            emitting_end=good.emitting_end,
            arc_next_state=good.arc_next_state,
            arc_ilabel=good.arc_ilabel,
            arc_olabel=good.arc_olabel,
            arc_weight=-good.arc_weight,
            final_costs=good.final_costs,
        )
        for threshold in (1, 10**9):
            with pytest.raises(DivergenceError):
                expand_nonemitting(bad, main_q(bad, [0], [0.0], degree="eps"), math.inf, threshold)


def run_lanes(fst, rows_per_lane, config):
    dec = BatchedDecoder(fst, config)
    lanes = [LaneSlot(i, channel_key=i) for i in range(len(rows_per_lane))]
    return dec.advance_decoding(list(zip(lanes, rows_per_lane))), lanes


class TestAdvance:
    def test_three_state_matches_serial(self, three_state, three_state_loglikes):
        cfg = DecoderConfig(n_lanes=1, n_channels=1)
        summaries, _ = run_lanes(three_state, [three_state_loglikes], cfg)
        ref = serial_decode(three_state, three_state_loglikes, cfg.beam, cfg.max_active)
        assert [s.best_cost for s in summaries[0]] == ref.frame_best_costs
        assert [s.frame for s in summaries[0]] == [0, 1, 2]

    @pytest.mark.parametrize("seed", range(5))
    def test_random_matches_serial_frame_bests(self, seed):
        fst = random_fst(40, 160, epsilon_frac=0.2, seed=seed)
        ll = generate_synthetic(12, fst.max_ilabel + 1, seed=seed, sharpness=3.0).loglikes
        cfg = DecoderConfig(beam=8.0, lattice_beam=4.0, max_active=UNBOUNDED, n_lanes=1, n_channels=1)
        summaries, _ = run_lanes(fst, [ll], cfg)
        ref = serial_decode(fst, ll, cfg.beam)
        assert [s.best_cost for s in summaries[0]] == ref.frame_best_costs

    def test_identical_channels_identical_summaries(self, three_state, three_state_loglikes):
        cfg = DecoderConfig(n_lanes=4, n_channels=4)
        summaries, _ = run_lanes(three_state, [three_state_loglikes] * 4, cfg)
        assert summaries[0] == summaries[1] == summaries[2] == summaries[3]

    def test_zero_frame_batch_is_noop(self, three_state):
        dec = BatchedDecoder(three_state, DecoderConfig(n_lanes=1, n_channels=1))
        assert dec.advance_decoding([]) == {}
        lane = LaneSlot(0, channel_key=0)
        dec.advance_decoding([(lane, np.zeros((1, 3)))])
        before = (lane.frame_index, lane.next_index, lane.main_q)
        assert dec.advance_decoding([(lane, np.zeros((0, 3)))]) == {0: []}
        assert (lane.frame_index, lane.next_index, lane.main_q) == before

    def test_posterior_too_narrow(self, three_state):
        dec = BatchedDecoder(three_state, DecoderConfig(n_lanes=1, n_channels=1))
        with pytest.raises(PosteriorWidthError, match="max ilabel 2"):
            dec.advance_decoding([(LaneSlot(0, channel_key=0), np.zeros((1, 2)))])

    def test_ragged_lanes(self, three_state):
        cfg = DecoderConfig(n_lanes=2, n_channels=2)
        rows = np.array([[0, 2.0, 0], [0, 0, 1.0]])
        summaries, lanes = run_lanes(three_state, [rows, rows[:1]], cfg)
        assert len(summaries[0]) == 3 and len(summaries[1]) == 2
        assert lanes[0].frame_index == 2 and lanes[1].frame_index == 1

    def test_soft_prune_keeps_only_representatives_expanding(self):
        # two routes into state 3 per frame; only the cheaper one expands
        fst = load_fst("0 1 1 0 0.0\n0 2 1 0 0.5\n1 3 0 0 0.0\n2 3 0 0 0.0\n3 1 1 0 0.0\n3 2 1 0 0.5\n3 0.0\n")
        dec = BatchedDecoder(fst, DecoderConfig(n_lanes=1, n_channels=1))
        lane = LaneSlot(0, channel_key=0)
        dec.advance_decoding([(lane, np.zeros((1, 2)))])
        q = lane.main_q
        at3 = q.state == 3
        assert at3.sum() == 2
        assert sorted(q.degree[at3].tolist()) == [0, 2]
        assert q.degree[at3][q.rep[at3]].tolist() == [2]
