"""
SUDF Saliency - Manifold Ranking
Two-stage graph-based saliency over superpixels: boundary background queries, then a foreground query
from the thresholded coarse map. Works on any per-pixel feature volume (CNN features or raw spectra).
"""
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np
import pandas as pd
from scipy.sparse import coo_matrix, csr_matrix, diags
from scipy.sparse.linalg import spsolve

from config import ALPHA, SIGMA_SQ, debug_log
from slic import SuperpixelMap, neighbor_pixel_pairs, segment_means


class GraphError(ValueError):
    """Empty segmentation or features that do not match the segmentation."""


class SingularSystemError(ArithmeticError):
    """The ranking system (D - alpha W) could not be solved."""


SIDES = ("top", "bottom", "left", "right")
RESIDUAL_TOLERANCE = 1e-8


# ─── Domain Types ────────────────────────────────────────────────────────────

class ThresholdRule(str, Enum):
    MEAN = "mean"


@dataclass(frozen=True)
class MrParams:
    alpha: float = ALPHA
    sigma_sq: float = SIGMA_SQ
    stage2_threshold_rule: ThresholdRule = ThresholdRule.MEAN

    def __post_init__(self):
        if not 0 < self.alpha < 1:
            raise GraphError(f"alpha must lie in (0, 1), got {self.alpha}")
        if self.sigma_sq <= 0:
            raise GraphError(f"sigma_sq must be positive, got {self.sigma_sq}")


@dataclass(frozen=True, eq=False)
class AffinityGraph:
    """Symmetric sparse affinity over superpixels plus the image-boundary side sets."""

    weights: csr_matrix
    sides: dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def num_nodes(self) -> int:
        return self.weights.shape[0]

    @property
    def degrees(self) -> np.ndarray:
        return np.asarray(self.weights.sum(axis=1)).ravel()

    @property
    def boundary_nodes(self) -> np.ndarray:
        return np.unique(np.concatenate([self.sides[s] for s in SIDES])) if self.sides else np.array([], dtype=np.int64)


@dataclass(frozen=True, eq=False)
class MrTrace:
    """Intermediate per-node scores of one ranking run."""

    graph: AffinityGraph
    coarse: np.ndarray
    final: np.ndarray


# ─── Graph Construction ──────────────────────────────────────────────────────

def _binary(matrix) -> csr_matrix:
    matrix = csr_matrix(matrix)
    matrix.data = np.ones_like(matrix.data, dtype=np.float64)
    return matrix


def boundary_sides(smap: SuperpixelMap) -> dict[str, np.ndarray]:
    labels = smap.labels
    return {
        "top": np.unique(labels[0, :]),
        "bottom": np.unique(labels[-1, :]),
        "left": np.unique(labels[:, 0]),
        "right": np.unique(labels[:, -1]),
    }


def edge_distances(features: np.ndarray, rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
    """
    Euclidean feature distance per edge, min-max scaled to [0, 1] over all edges of the graph.
    All-equal distances scale to 0.
    """
    dist = np.linalg.norm(features[rows] - features[cols], axis=1)
    if dist.size == 0:
        return dist
    low, high = dist.min(), dist.max()
    if high > low:
        return (dist - low) / (high - low)
    return np.zeros_like(dist)


def build_graph(smap: SuperpixelMap, segment_features: np.ndarray, params: MrParams = MrParams()) -> AffinityGraph:
    """
    Connect spatially adjacent segments, segments sharing a neighbor, and every pair of image-boundary
    segments; weight each edge by exp(-d / sigma_sq) on the scaled feature distance d.
    """
    segment_features = np.asarray(segment_features, dtype=np.float64)
    n = smap.num_segments
    if segment_features.ndim == 1:
        segment_features = segment_features[:, None]
    if segment_features.shape[0] != n:
        raise GraphError(f"Expected {n} segment feature vectors, got {segment_features.shape[0]}")
    if not np.isfinite(segment_features).all():
        raise GraphError("Segment features must be finite")

    a, b = neighbor_pixel_pairs(smap.labels, same=False)
    sa, sb = smap.labels.ravel()[a], smap.labels.ravel()[b]
    adjacency = coo_matrix((np.ones(sa.size), (sa, sb)), shape=(n, n))
    adjacency = _binary(adjacency + adjacency.T)
    structure = adjacency + adjacency @ adjacency

    sides = boundary_sides(smap)
    boundary = np.unique(np.concatenate([sides[s] for s in SIDES]))
    closure = coo_matrix((np.ones(boundary.size ** 2), (np.repeat(boundary, boundary.size), np.tile(boundary, boundary.size))),
                         shape=(n, n))
    structure = _binary(structure + closure).tocoo()

    upper = structure.row < structure.col
    rows, cols = structure.row[upper], structure.col[upper]
    weights = np.exp(-edge_distances(segment_features, rows, cols) / params.sigma_sq)
    w = coo_matrix((np.concatenate([weights, weights]), (np.concatenate([rows, cols]), np.concatenate([cols, rows]))),
                   shape=(n, n)).tocsr()
    debug_log("[mrank build_graph] %d nodes, %d edges, %d boundary nodes" % (n, rows.size, boundary.size))
    return AffinityGraph(weights=w, sides=sides)


# ─── Ranking ─────────────────────────────────────────────────────────────────

def rank(graph: AffinityGraph, query: np.ndarray, alpha: float = ALPHA) -> np.ndarray:
    """Solve (D - alpha W) f = y for the per-node ranking scores f of a 0/1 query indicator."""
    y = np.asarray(query, dtype=np.float64).ravel()
    if y.size != graph.num_nodes:
        raise GraphError(f"Query has {y.size} entries for {graph.num_nodes} nodes")
    if not np.isin(y, (0.0, 1.0)).all() or not y.any():
        raise GraphError("Query must be a 0/1 indicator with at least one nonzero entry")
    return solve_ranking(graph, y, alpha)


def solve_ranking(graph: AffinityGraph, y: np.ndarray, alpha: float = ALPHA) -> np.ndarray:
    """The linear solve behind rank() for any real right-hand side; f is linear in y."""
    y = np.asarray(y, dtype=np.float64).ravel()
    if y.size != graph.num_nodes:
        raise GraphError(f"Right-hand side has {y.size} entries for {graph.num_nodes} nodes")
    degrees = graph.degrees
    if np.any(degrees <= 0):
        raise SingularSystemError(f"{int(np.sum(degrees <= 0))} node(s) have zero degree")

    system = (diags(degrees) - alpha * graph.weights).tocsc()
    f = spsolve(system, y)
    residual = system @ f - y
    limit = RESIDUAL_TOLERANCE * np.abs(y).max()
    if np.abs(residual).max() > limit:
        # One step of iterative refinement
        f = f - spsolve(system, residual)
        residual = system @ f - y
    if not np.all(np.isfinite(f)) or np.abs(residual).max() > limit:
        raise SingularSystemError(f"Ranking residual {np.abs(residual).max():.3g} exceeds {limit:.3g}")
    return f


def _minmax(values: np.ndarray) -> np.ndarray:
    low, high = values.min(), values.max()
    if high > low:
        return (values - low) / (high - low)
    return np.zeros_like(values)


def stage1_background(graph: AffinityGraph, params: MrParams = MrParams()) -> np.ndarray:
    """Product of complemented boundary-side rankings, renormalized to [0, 1]."""
    n = graph.num_nodes
    side_sets = [graph.sides.get(s, np.array([], dtype=np.int64)) for s in SIDES]
    if any(len(s) == 0 for s in side_sets):
        debug_log("[mrank stage1_background] empty side set, using all boundary nodes as one query")
        side_sets = [graph.boundary_nodes]
    coarse = np.ones(n)
    for members in side_sets:
        y = np.zeros(n)
        y[members] = 1.0
        coarse *= 1.0 - _minmax(rank(graph, y, params.alpha))
    return _minmax(coarse)


def stage2_foreground(graph: AffinityGraph, coarse: np.ndarray, params: MrParams = MrParams()) -> np.ndarray:
    """Rank against the above-mean nodes of the coarse map; a constant coarse map is returned unchanged."""
    coarse = np.asarray(coarse, dtype=np.float64)
    y = (coarse > coarse.mean()).astype(np.float64)
    if not y.any():
        debug_log("[mrank stage2_foreground] empty foreground query, keeping coarse map")
        return coarse.copy()
    return _minmax(rank(graph, y, params.alpha))


# ─── Pipeline ────────────────────────────────────────────────────────────────

def rank_segments(features: np.ndarray, smap: SuperpixelMap, params: MrParams = MrParams()) -> MrTrace:
    """segment_means -> build_graph -> stage1 -> stage2, keeping every intermediate."""
    features = np.asarray(features, dtype=np.float64)
    if features.ndim == 2:
        features = features[:, :, None]
    if features.shape[:2] != smap.labels.shape:
        raise GraphError(f"Features {features.shape[:2]} do not match superpixel map {smap.labels.shape}")
    means, _ = segment_means(features, smap)
    graph = build_graph(smap, means, params)
    if graph.num_nodes == 1:
        debug_log("[mrank rank_segments] single segment, saliency is all zero")
        zero = np.zeros(1)
        return MrTrace(graph=graph, coarse=zero, final=zero)
    coarse = stage1_background(graph, params)
    final = stage2_foreground(graph, coarse, params)
    return MrTrace(graph=graph, coarse=coarse, final=final)


def saliency_from_features(features: np.ndarray, smap: SuperpixelMap, params: MrParams = MrParams()) -> np.ndarray:
    """Per-pixel saliency in [0, 1], constant within each superpixel."""
    trace = rank_segments(features, smap, params)
    return np.clip(trace.final, 0.0, 1.0)[smap.labels]


# ─── Debug Dumps ─────────────────────────────────────────────────────────────

def dump_graph(graph: AffinityGraph, path: Path) -> None:
    """Write the upper triangle of W as `i j w` lines."""
    upper = graph.weights.tocoo()
    keep = upper.row < upper.col
    order = np.lexsort((upper.col[keep], upper.row[keep]))
    rows, cols, vals = upper.row[keep][order], upper.col[keep][order], upper.data[keep][order]
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        for i, j, w in zip(rows, cols, vals):
            f.write(f"{int(i)} {int(j)} {float(w)!r}\n")


def dump_stage_scores(trace: MrTrace, path: Path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    frame = pd.DataFrame({"node": np.arange(trace.graph.num_nodes), "stage1": trace.coarse, "stage2": trace.final})
    frame.to_csv(path, index=False, float_format="%.17g")
