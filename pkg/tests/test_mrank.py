import numpy as np
import pandas as pd
import pytest
from scipy.sparse import csr_matrix

from mrank import (
    AffinityGraph, GraphError, MrParams, SingularSystemError, boundary_sides, build_graph, dump_graph,
    dump_stage_scores, edge_distances, rank, rank_segments, saliency_from_features, solve_ranking,
    stage1_background, stage2_foreground,
)
from slic import SlicParams, SuperpixelMap, compute_superpixels


def block_grid(blocks: int = 3, size: int = 2) -> SuperpixelMap:
    """blocks x blocks grid of square segments, ids row-major."""
    ids = np.arange(blocks * blocks).reshape(blocks, blocks)
    return SuperpixelMap(labels=np.kron(ids, np.ones((size, size), dtype=int)))


def two_node_graph(w: float = 1.0) -> AffinityGraph:
    return AffinityGraph(weights=csr_matrix(np.array([[0.0, w], [w, 0.0]])))


def random_graph(rng, n: int) -> AffinityGraph:
    """Random symmetric weights on n nodes; a weighted chain keeps the graph connected."""
    dense = np.where(rng.uniform(size=(n, n)) < 0.3, rng.uniform(0.05, 1.0, size=(n, n)), 0.0)
    ring = np.roll(np.eye(n), 1, axis=1) * rng.uniform(0.05, 1.0, size=n)[:, None]
    dense = np.triu(dense + ring, 1)
    dense = dense + dense.T
    return AffinityGraph(weights=csr_matrix(dense))


def recomputed_weights(labels: np.ndarray, features: np.ndarray, sigma_sq: float) -> np.ndarray:
    """Affinity matrix rebuilt pixel by pixel: neighbours, shared neighbours and the boundary clique."""
    n = labels.max() + 1
    height, width = labels.shape
    adjacent = np.zeros((n, n), dtype=bool)
    for r in range(height):
        for c in range(width):
            for dr, dc in ((0, 1), (1, 0)):
                if r + dr < height and c + dc < width and labels[r, c] != labels[r + dr, c + dc]:
                    adjacent[labels[r, c], labels[r + dr, c + dc]] = True
                    adjacent[labels[r + dr, c + dc], labels[r, c]] = True
    border = set(labels[0]) | set(labels[-1]) | set(labels[:, 0]) | set(labels[:, -1])
    edges = []
    for i in range(n):
        for j in range(i + 1, n):
            shared = any(adjacent[i, k] and adjacent[k, j] for k in range(n))
            if adjacent[i, j] or shared or (i in border and j in border):
                edges.append((i, j, float(np.sqrt(((features[i] - features[j]) ** 2).sum()))))
    low = min(d for _, _, d in edges)
    high = max(d for _, _, d in edges)
    dense = np.zeros((n, n))
    for i, j, d in edges:
        scaled = (d - low) / (high - low) if high > low else 0.0
        dense[i, j] = dense[j, i] = np.exp(-scaled / sigma_sq)
    return dense


# ─── Graph Construction ──────────────────────────────────────────────────────

def test_boundary_sides_of_grid():
    sides = boundary_sides(block_grid())
    np.testing.assert_array_equal(sides["top"], [0, 1, 2])
    np.testing.assert_array_equal(sides["bottom"], [6, 7, 8])
    np.testing.assert_array_equal(sides["left"], [0, 3, 6])
    np.testing.assert_array_equal(sides["right"], [2, 5, 8])


def test_edge_distances_scaled():
    features = np.array([[0.0], [1.0], [3.0]])
    d = edge_distances(features, np.array([0, 0, 1]), np.array([1, 2, 2]))
    np.testing.assert_allclose(d, [0.0, 1.0, 0.5])
    assert not edge_distances(np.ones((3, 2)), np.array([0, 1]), np.array([1, 2])).any()


def test_identical_features_give_unit_weights():
    graph = build_graph(block_grid(), np.ones((9, 4)))
    assert graph.weights.nnz > 0
    np.testing.assert_allclose(graph.weights.data, 1.0)


def test_graph_symmetric_with_two_hop_and_boundary_edges(rng):
    graph = build_graph(block_grid(), rng.normal(size=(9, 3)))
    dense = graph.weights.toarray()
    np.testing.assert_allclose(dense, dense.T)
    assert not np.diag(dense).any()
    assert dense[0, 4] > 0  # diagonal neighbours share segment 1
    assert dense[4, 0] > 0
    assert dense[0, 8] > 0  # opposite corners via the boundary clique
    assert np.all(dense[dense > 0] <= 1.0)


@pytest.mark.parametrize("seed", range(10))
def test_weights_match_pixelwise_recomputation(seed):
    rng = np.random.default_rng(seed)
    smap = compute_superpixels(rng.normal(size=(12, 12, 2)), SlicParams(target_segments=9))
    features = rng.normal(size=(smap.num_segments, 5))
    graph = build_graph(smap, features, MrParams(sigma_sq=0.1))
    expected = recomputed_weights(smap.labels, features, 0.1)
    np.testing.assert_allclose(graph.weights.toarray(), expected, rtol=0, atol=1e-9)


def test_weights_ignore_feature_scale(rng):
    features = rng.normal(size=(9, 4))
    small = build_graph(block_grid(), features).weights.toarray()
    large = build_graph(block_grid(), 250.0 * features + 3.0).weights.toarray()
    np.testing.assert_allclose(small, large, atol=1e-12)


def test_graph_rejects_mismatched_features():
    with pytest.raises(GraphError):
        build_graph(block_grid(), np.zeros((5, 2)))
    with pytest.raises(GraphError):
        build_graph(block_grid(), np.full((9, 1), np.nan))


def test_invalid_params():
    with pytest.raises(GraphError):
        MrParams(alpha=1.0)
    with pytest.raises(GraphError):
        MrParams(sigma_sq=0.0)


# ─── Ranking ─────────────────────────────────────────────────────────────────

def test_rank_two_nodes():
    f = rank(two_node_graph(), np.array([1.0, 0.0]), alpha=0.99)
    np.testing.assert_allclose(f, [1 / 0.0199, 0.99 / 0.0199], rtol=1e-10)
    assert f[0] == pytest.approx(50.251, abs=1e-3)
    assert f[1] == pytest.approx(49.749, abs=1e-3)


def test_rank_zero_alpha_divides_by_degree(rng):
    graph = build_graph(block_grid(), rng.normal(size=(9, 2)))
    y = np.zeros(9)
    y[[0, 4]] = 1.0
    np.testing.assert_allclose(rank(graph, y, alpha=0.0), y / graph.degrees)


def test_rank_matches_dense_inverse(rng):
    graph = build_graph(block_grid(4), rng.normal(size=(16, 3)))
    y = (rng.uniform(size=16) > 0.6).astype(float)
    y[0] = 1.0
    dense = np.diag(graph.degrees) - 0.99 * graph.weights.toarray()
    np.testing.assert_allclose(rank(graph, y, 0.99), np.linalg.solve(dense, y), rtol=1e-8)


@pytest.mark.parametrize("seed", range(50))
def test_rank_matches_dense_inverse_on_random_graphs(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 21))
    graph = random_graph(rng, n)
    alpha = float(rng.choice([0.0, 0.5, 0.9, 0.99]))
    y = (rng.uniform(size=n) < 0.4).astype(float)
    y[rng.integers(n)] = 1.0
    expected = np.linalg.inv(np.diag(graph.degrees) - alpha * graph.weights.toarray()) @ y
    np.testing.assert_allclose(rank(graph, y, alpha), expected, rtol=1e-8, atol=1e-10)


@pytest.mark.parametrize("seed", range(10))
def test_ranking_is_linear_in_query(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(3, 21))
    graph = random_graph(rng, n)
    y = (rng.uniform(size=n) < 0.5).astype(float)
    y[0] = 1.0
    z = rng.uniform(size=n)
    f = rank(graph, y, 0.99)
    np.testing.assert_allclose(solve_ranking(graph, 2 * y, 0.99), 2 * f, rtol=1e-9)
    np.testing.assert_allclose(solve_ranking(graph, y + z, 0.99), f + solve_ranking(graph, z, 0.99), rtol=1e-8)


@pytest.mark.parametrize("seed", range(10))
def test_ranking_is_permutation_equivariant(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(3, 21))
    graph = random_graph(rng, n)
    y = (rng.uniform(size=n) < 0.5).astype(float)
    y[0] = 1.0
    perm = rng.permutation(n)
    dense = graph.weights.toarray()
    permuted = AffinityGraph(weights=csr_matrix(dense[np.ix_(perm, perm)]))
    np.testing.assert_allclose(rank(permuted, y[perm], 0.99), rank(graph, y, 0.99)[perm], rtol=1e-8)


def test_rank_rejects_bad_queries():
    with pytest.raises(GraphError):
        rank(two_node_graph(), np.zeros(2))
    with pytest.raises(GraphError):
        rank(two_node_graph(), np.array([0.5, 0.0]))
    with pytest.raises(GraphError):
        rank(two_node_graph(), np.ones(3))


def test_rank_isolated_node_is_singular():
    weights = csr_matrix(np.array([[0.0, 1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 0.0]]))
    with pytest.raises(SingularSystemError):
        rank(AffinityGraph(weights=weights), np.array([1.0, 0.0, 0.0]))


# ─── Two Stages ──────────────────────────────────────────────────────────────

def centre_grid_features() -> np.ndarray:
    features = np.zeros((9, 1))
    features[4] = 1.0
    return features


def test_centre_segment_is_most_salient():
    smap = block_grid()
    graph = build_graph(smap, centre_grid_features(), MrParams(sigma_sq=0.1))
    coarse = stage1_background(graph, MrParams(sigma_sq=0.1))
    assert coarse.min() == 0.0 and coarse.max() == 1.0
    assert np.argmax(coarse) == 4
    final = stage2_foreground(graph, coarse, MrParams(sigma_sq=0.1))
    assert np.argmax(final) == 4


def test_stage2_keeps_constant_coarse_map():
    graph = build_graph(block_grid(), np.zeros((9, 1)))
    coarse = np.full(9, 0.4)
    np.testing.assert_array_equal(stage2_foreground(graph, coarse), coarse)


def test_single_segment_is_all_zero():
    smap = SuperpixelMap(labels=np.zeros((4, 4), dtype=int))
    saliency = saliency_from_features(np.ones((4, 4, 2)), smap)
    assert saliency.shape == (4, 4)
    assert not saliency.any()


def test_saliency_constant_per_segment(rng):
    smap = block_grid()
    saliency = saliency_from_features(rng.normal(size=(6, 6, 3)), smap)
    assert saliency.min() >= 0.0 and saliency.max() <= 1.0
    for k in range(9):
        assert len(np.unique(saliency[smap.labels == k])) == 1


def test_synthetic_square_stands_out(scene):
    cube, mask = scene
    features = np.moveaxis(cube.data.astype(np.float64), 0, -1)
    smap = compute_superpixels(features, SlicParams(target_segments=64))
    saliency = saliency_from_features(features, smap)
    inside, outside = saliency[mask.values].mean(), saliency[~mask.values].mean()
    assert inside > 2 * outside


def test_rank_segments_shape_mismatch():
    with pytest.raises(GraphError):
        rank_segments(np.zeros((5, 5, 1)), block_grid())


# ─── Debug Dumps ─────────────────────────────────────────────────────────────

def test_dump_graph_upper_triangle(tmp_path):
    dump_graph(two_node_graph(0.25), tmp_path / "graph.txt")
    assert (tmp_path / "graph.txt").read_text() == "0 1 0.25\n"


def test_dump_stage_scores(tmp_path, rng):
    trace = rank_segments(rng.normal(size=(6, 6, 2)), block_grid())
    dump_stage_scores(trace, tmp_path / "scores.csv")
    frame = pd.read_csv(tmp_path / "scores.csv")
    assert list(frame.columns) == ["node", "stage1", "stage2"]
    np.testing.assert_allclose(frame["stage2"].to_numpy(), trace.final)
