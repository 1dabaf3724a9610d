import numpy as np
import pytest

from etdkf.errors import ConfigurationError
from etdkf.graphs import (Graph, connected_components, find_minimal_potential_sets,
                          is_vertex_cut, laplacian, neighbors)
from etdkf.models import ProcessModel, SensorModel
from etdkf.scenario import example1_graph


def bfs_components(node_count, edges, removed):
    """Independent breadth-first-search oracle."""
    alive = [i for i in range(1, node_count + 1) if i not in removed]
    adj = {i: [] for i in alive}
    for a, b in edges:
        if a in adj and b in adj:
            adj[a].append(b)
            adj[b].append(a)
    seen, comps = set(), []
    for s in alive:
        if s in seen:
            continue
        comp, frontier = {s}, [s]
        seen.add(s)
        while frontier:
            nxt = []
            for u in frontier:
                for v in adj[u]:
                    if v not in seen:
                        seen.add(v)
                        comp.add(v)
                        nxt.append(v)
            frontier = nxt
        comps.append(comp)
    return comps


def random_graph(rng, n, p=0.4):
    edges = [(i, j) for i in range(1, n + 1) for j in range(i + 1, n + 1)
             if rng.random() < p]
    return Graph(n, edges)


class TestNeighbors:
    def test_path_graph(self):
        g = Graph(3, [(1, 2), (2, 3)])
        assert neighbors(g, 2) == {1, 3}

    def test_example1_node5(self):
        g = example1_graph()
        assert neighbors(g, 5) == {4, 6, 7}

    def test_matches_adjacency_row(self):
        rng = np.random.default_rng(0)
        for _ in range(10):
            g = random_graph(rng, 7)
            adj = g.adjacency()
            for i in g.nodes:
                want = {j + 1 for j in np.flatnonzero(adj[i - 1])}
                assert neighbors(g, i) == want

    def test_invalid_node(self):
        with pytest.raises(ConfigurationError):
            neighbors(Graph(2, [(1, 2)]), 5)


class TestLaplacian:
    def test_complete_k3(self):
        g = Graph(3, [(1, 2), (1, 3), (2, 3)])
        want = np.array([[2, -1, -1], [-1, 2, -1], [-1, -1, 2]], dtype=float)
        assert np.array_equal(laplacian(g), want)

    def test_single_node(self):
        assert np.array_equal(laplacian(Graph(1, [])), np.zeros((1, 1)))

    def test_smallest_eigenpair(self):
        rng = np.random.default_rng(1)
        for _ in range(10):
            g = random_graph(rng, 6)
            L = laplacian(g)
            assert np.allclose(L, L.T)
            assert np.allclose(L.sum(axis=1), 0.0, atol=1e-12)
            vals = np.linalg.eigvalsh(L)
            assert vals[0] == pytest.approx(0.0, abs=1e-9)
            assert vals.min() > -1e-9
            assert np.allclose(L @ np.ones(g.node_count), 0.0, atol=1e-12)


class TestComponents:
    def test_example1_cut(self):
        comps = connected_components(example1_graph(), removed={5, 6})
        assert len(comps) == 2
        assert {frozenset(c) for c in comps} == {frozenset({1, 2, 3, 4}),
                                                 frozenset({7, 8})}

    def test_connected_no_removal(self):
        assert len(connected_components(example1_graph())) == 1

    def test_matches_bfs_oracle(self):
        rng = np.random.default_rng(2)
        for _ in range(25):
            g = random_graph(rng, 8, p=0.25)
            removed = {int(i) for i in rng.choice(range(1, 9), size=2, replace=False)}
            got = {frozenset(c) for c in connected_components(g, removed)}
            want = {frozenset(c) for c in bfs_components(8, g.edges, removed)}
            assert got == want

    def test_partition_property(self):
        rng = np.random.default_rng(3)
        for _ in range(10):
            g = random_graph(rng, 9, p=0.3)
            removed = {1, 5}
            comps = connected_components(g, removed)
            union = set().union(*comps) if comps else set()
            assert union == set(g.nodes) - removed
            assert sum(len(c) for c in comps) == len(union)


class TestVertexCut:
    def test_example1(self):
        assert is_vertex_cut(example1_graph(), {5, 6})

    def test_empty_set_not_a_cut(self):
        assert not is_vertex_cut(example1_graph(), set())

    def test_exhaustive_small_graph(self):
        from itertools import combinations
        g = Graph(5, [(1, 2), (2, 3), (3, 4), (4, 5), (2, 4)])
        for size in (1, 2):
            for combo in combinations(range(1, 6), size):
                want = len(bfs_components(5, g.edges, set(combo))) >= 2
                assert is_vertex_cut(g, set(combo)) == want

    def test_monotone_in_supersets(self):
        rng = np.random.default_rng(4)
        for _ in range(10):
            g = random_graph(rng, 7, p=0.35)
            if len(connected_components(g)) != 1:
                continue
            for s in ({2}, {3, 5}):
                if is_vertex_cut(g, s):
                    comps = connected_components(g, removed=s)
                    extra = min(min(c) for c in comps[:1])
                    bigger = s | {extra}
                    survivors = set(g.nodes) - bigger
                    if len(survivors) >= 2:
                        assert is_vertex_cut(g, bigger) or \
                            len(connected_components(g, removed=bigger)) >= 2

    def test_disconnected_input_flagged(self):
        g = Graph(4, [(1, 2), (3, 4)])
        with pytest.raises(ConfigurationError):
            is_vertex_cut(g, {1})


def observable_sensor():
    return SensorModel(C=[[5.0, 0.0], [0.0, 2.0]], R=np.eye(2))


def blind_sensor():
    return SensorModel(C=np.zeros((2, 2)), R=np.eye(2))


def planar_model():
    th = np.pi / 200
    A = np.array([[np.cos(th), -np.sin(th)], [np.sin(th), np.cos(th)]])
    return ProcessModel(A=A, Q=np.eye(2), x0_mean=[0.5, 0.0], P0=np.eye(2))


class TestPotentialSets:
    def test_all_locally_observable_n4(self):
        g = Graph(4, [(1, 2), (2, 3), (3, 4), (4, 1)])
        model = planar_model()
        sensors = [observable_sensor() for _ in range(4)]
        got = find_minimal_potential_sets(g, model, sensors)
        # removing any 2 nodes leaves a non-majority complement
        want = [{1, 2}, {1, 3}, {1, 4}, {2, 3}, {2, 4}, {3, 4}]
        assert got == want

    def test_one_blind_sensor_n3(self):
        g = Graph(3, [(1, 2), (2, 3)])
        model = planar_model()
        sensors = [observable_sensor(), observable_sensor(), blind_sensor()]
        got = find_minimal_potential_sets(g, model, sensors)
        from itertools import combinations
        # independent enumeration oracle over all removal sets
        def potential(removed):
            rest = [i for i in (1, 2, 3) if i not in removed]
            if not rest:
                return True
            if len(rest) * 2 <= 3:
                return True
            from etdkf.models import observability_rank
            stacked = np.vstack([sensors[i - 1].C for i in rest])
            return observability_rank(model.A, stacked) < 2
        want = []
        for size in (1, 2, 3):
            for combo in combinations((1, 2, 3), size):
                s = set(combo)
                if potential(s) and not any(m <= s for m in want):
                    want.append(s)
        assert got == sorted(want, key=lambda s: (len(s), sorted(s)))

    def test_single_node(self):
        g = Graph(1, [])
        got = find_minimal_potential_sets(g, planar_model(), [observable_sensor()])
        assert got == [{1}]

    def test_size_guard(self):
        g = Graph(21, [(i, i + 1) for i in range(1, 21)])
        with pytest.raises(ConfigurationError):
            find_minimal_potential_sets(g, planar_model(),
                                        [observable_sensor()] * 21)
