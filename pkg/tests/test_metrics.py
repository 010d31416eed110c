import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from lattix.lattice import Lattice, NoPathError
from lattix.metrics import (
    arc_slack,
    best_path,
    edit_distance,
    enumerate_paths,
    lattice_density,
    oracle_wer,
    wer,
)


def make_lattice(arcs, finals, num_nodes=None):
    """``arcs``: (from, to, olabel, cost); ``finals``: {node: cost}."""
    arcs = list(arcs)
    n = num_nodes or 1 + max([a[0] for a in arcs] + [a[1] for a in arcs] + list(finals))
    col = lambda i, dt: np.array([a[i] for a in arcs], dtype=dt)  # noqa: E731
    return Lattice(
        node_frame=np.arange(n, dtype=np.int64),
        node_state=np.arange(n, dtype=np.int64),
        arc_from=col(0, np.int64),
        arc_to=col(1, np.int64),
        arc_ilabel=np.ones(len(arcs), dtype=np.int64),
        arc_olabel=col(2, np.int64),
        arc_graph_cost=col(3, np.float64),
        arc_acoustic_cost=np.zeros(len(arcs)),
        arc_fst_arc=np.arange(len(arcs), dtype=np.int64),
        final_nodes=np.array(sorted(finals), dtype=np.int64),
        final_costs=np.array([finals[v] for v in sorted(finals)], dtype=np.float64),
    )


A, B, C = 1, 2, 3


@pytest.fixture
def two_paths():
    # 0 -a-> 1 -b-> 2 (cost 1) and 0 -a-> 1 -c-> 3 (cost 2)
    return make_lattice([(0, 1, A, 0.0), (1, 2, B, 1.0), (1, 3, C, 2.0)], {2: 0.0, 3: 0.0})


class TestBestPath:
    def test_epsilons_elided(self):
        lat = make_lattice([(0, 1, 5, 0.5), (1, 2, 0, 0.5), (2, 3, 7, 0.5)], {3: 0.25})
        assert best_path(lat) == ([5, 7], 1.75)

    def test_picks_cheaper_branch(self, two_paths):
        assert best_path(two_paths) == ([A, B], 1.0)

    def test_final_cost_counts(self):
        lat = make_lattice([(0, 1, A, 0.0), (0, 2, B, 1.0)], {1: 5.0, 2: 0.0})
        assert best_path(lat) == ([B], 1.0)

    def test_no_finals(self):
        with pytest.raises(NoPathError):
            best_path(make_lattice([(0, 1, A, 0.0)], {}))


class TestWer:
    @pytest.mark.parametrize(
        "hyp, ref, expected",
        [
            ([1, 2, 3], [1, 2, 3], 0.0),
            ([1, 2], [1, 2, 3], 1 / 3),
            ([1, 9, 3], [1, 2, 3], 1 / 3),
            ([1, 2, 3, 4], [1, 2, 3], 1 / 3),
            ([], [1, 2], 1.0),
            ([4, 5, 6, 7], [1], 4.0),
        ],
    )
    def test_examples(self, hyp, ref, expected):
        assert wer(hyp, ref) == pytest.approx(expected)

    def test_empty_reference(self):
        with pytest.raises(ValueError, match="empty reference"):
            wer([1], [])

    @given(st.lists(st.integers(0, 4), max_size=8), st.lists(st.integers(0, 4), max_size=8))
    def test_edit_distance_symmetric_and_bounded(self, a, b):
        d = edit_distance(a, b)
        assert d == edit_distance(b, a)
        assert abs(len(a) - len(b)) <= d <= max(len(a), len(b))


class TestOracleWer:
    def test_finds_better_path(self, two_paths):
        ref = [A, C]
        assert wer(best_path(two_paths)[0], ref) == 0.5
        assert oracle_wer(two_paths, ref) == 0.0

    def test_all_paths_wrong(self, two_paths):
        assert oracle_wer(two_paths, [B, B, B]) == pytest.approx(2 / 3)

    def test_empty_reference(self, two_paths):
        with pytest.raises(ValueError):
            oracle_wer(two_paths, [])

    @given(seed=st.integers(0, 10_000))
    def test_matches_path_enumeration(self, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(2, 7))
        arcs = [(int(u), int(u) + 1 + int(rng.integers(0, n - u - 1)) if u < n - 2 else n - 1,
                 int(rng.integers(0, 4)), float(rng.uniform(0, 1)))
                for u in rng.integers(0, n - 1, size=int(rng.integers(1, 10)))]
        arcs.append((0, n - 1, int(rng.integers(1, 4)), 1.0))
        lat = make_lattice(arcs, {n - 1: 0.0}, num_nodes=n)
        ref = rng.integers(1, 4, size=int(rng.integers(1, 4))).tolist()
        olabel = lat.arc_olabel.tolist()
        brute = min(wer([olabel[a] for a in p if olabel[a]], ref) for _, p in enumerate_paths(lat))
        assert oracle_wer(lat, ref) == pytest.approx(brute)


class TestDensityAndSlack:
    def test_density(self, two_paths):
        assert lattice_density(two_paths) == pytest.approx(3 / 4)

    def test_arc_slack(self, two_paths):
        assert arc_slack(two_paths).tolist() == [0.0, 0.0, 1.0]

    def test_enumerate_costs(self, two_paths):
        assert sorted(c for c, _ in enumerate_paths(two_paths)) == [1.0, 2.0]
