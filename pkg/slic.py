"""
SUDF Saliency - SLIC Superpixels
Localized k-means over standardized per-pixel feature vectors of any dimension, with connectivity enforcement,
segment statistics and majority-vote label refinement.
"""
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from skimage.segmentation import mark_boundaries

from config import COMPACTNESS, CONNECTIVITY_MIN_SIZE, SEGMENTS, SLIC_ITERATIONS, debug_log


class SlicError(ValueError):
    """Invalid superpixel parameters or mismatched inputs."""


# ─── Domain Types ────────────────────────────────────────────────────────────

@dataclass(frozen=True)
class SlicParams:
    target_segments: int = SEGMENTS
    compactness: float = COMPACTNESS
    max_iterations: int = SLIC_ITERATIONS
    connectivity_min_size: float = CONNECTIVITY_MIN_SIZE

    def __post_init__(self):
        if self.target_segments < 2:
            raise SlicError(f"target_segments must be >= 2, got {self.target_segments}")
        if self.max_iterations < 1:
            raise SlicError(f"max_iterations must be >= 1, got {self.max_iterations}")
        if self.compactness <= 0:
            raise SlicError(f"compactness must be positive, got {self.compactness}")
        if self.connectivity_min_size < 0:
            raise SlicError(f"connectivity_min_size must be >= 0, got {self.connectivity_min_size}")


@dataclass(frozen=True, eq=False)
class SuperpixelMap:
    """Per-pixel segment ids forming a partition with contiguous ids 0..num_segments-1."""

    labels: np.ndarray

    def __post_init__(self):
        labels = np.asarray(self.labels)
        if labels.ndim != 2 or labels.size == 0:
            raise SlicError(f"Superpixel labels must be a non-empty 2-D array, got shape {labels.shape}")
        labels = labels.astype(np.int64)
        if labels.min() != 0 or np.unique(labels).size != labels.max() + 1:
            raise SlicError("Superpixel ids must be contiguous from 0")
        labels.setflags(write=False)
        object.__setattr__(self, "labels", labels)

    @property
    def num_segments(self) -> int:
        return int(self.labels.max()) + 1

    @property
    def height(self) -> int:
        return self.labels.shape[0]

    @property
    def width(self) -> int:
        return self.labels.shape[1]


def _as_volume(features: np.ndarray) -> np.ndarray:
    features = np.asarray(features, dtype=np.float64)
    if features.ndim == 2:
        features = features[:, :, None]
    if features.ndim != 3 or features.shape[2] < 1:
        raise SlicError(f"Features must be (H, W, D) with D >= 1, got shape {features.shape}")
    return features


def relabel_first_appearance(labels: np.ndarray) -> np.ndarray:
    """Renumber ids 0..n-1 in row-major order of first appearance."""
    flat = np.asarray(labels).ravel()
    uniq, first = np.unique(flat, return_index=True)
    mapping = np.empty(uniq.size, dtype=np.int64)
    mapping[np.argsort(first, kind="stable")] = np.arange(uniq.size)
    return mapping[np.searchsorted(uniq, flat)].reshape(np.shape(labels))


# ─── Localized k-means ───────────────────────────────────────────────────────

def _standardize(features: np.ndarray) -> np.ndarray:
    flat = features.reshape(-1, features.shape[2])
    mean = flat.mean(axis=0)
    std = flat.std(axis=0)
    std[std == 0] = np.inf  # constant channels become all zeros
    return (features - mean) / std


def _gradient_magnitude(features: np.ndarray) -> np.ndarray:
    padded = np.pad(features, ((1, 1), (1, 1), (0, 0)), mode="edge")
    dy = padded[2:, 1:-1] - padded[:-2, 1:-1]
    dx = padded[1:-1, 2:] - padded[1:-1, :-2]
    return (dy ** 2).sum(axis=2) + (dx ** 2).sum(axis=2)


def _grid_shape(height: int, width: int, target: int) -> tuple[int, int]:
    rows = max(1, int(round(np.sqrt(target * height / width))))
    cols = max(1, int(round(target / rows)))
    return min(rows, height), min(cols, width)


def _seed_centers(features: np.ndarray, target: int) -> tuple[np.ndarray, np.ndarray]:
    """
    Regular-grid seeds moved to the lowest-gradient pixel of their 3x3 neighborhood. A seed only
    moves when some neighbor is strictly lower than its own pixel; otherwise it keeps its grid position.
    """
    height, width, _ = features.shape
    rows, cols = _grid_shape(height, width, target)
    step_y, step_x = height / rows, width / cols
    grad = _gradient_magnitude(features)
    positions, values = [], []
    for i in range(rows):
        for j in range(cols):
            y, x = (i + 0.5) * step_y - 0.5, (j + 0.5) * step_x - 0.5
            by = min(height - 1, int(np.floor(y + 0.5)))
            bx = min(width - 1, int(np.floor(x + 0.5)))
            y0, y1 = max(0, by - 1), min(height, by + 2)
            x0, x1 = max(0, bx - 1), min(width, bx + 2)
            window = grad[y0:y1, x0:x1]
            flat_min = int(window.argmin())
            my, mx = y0 + flat_min // window.shape[1], x0 + flat_min % window.shape[1]
            if grad[my, mx] < grad[by, bx]:
                y, x, by, bx = float(my), float(mx), my, mx
            positions.append((y, x))
            values.append(features[by, bx])
    return np.array(positions), np.array(values)


def slic_kmeans(features: np.ndarray, params: SlicParams) -> tuple[np.ndarray, list[float]]:
    """
    Localized k-means on d^2 = d_feat^2 + (m/S)^2 d_xy^2 with a 2S x 2S window per center.
    Returns raw cluster labels (before connectivity) and the objective after every assignment step.
    """
    volume = _standardize(_as_volume(features))
    height, width, depth = volume.shape
    if params.target_segments > height * width:
        raise SlicError(f"target_segments {params.target_segments} exceeds pixel count {height * width}")
    step = np.sqrt(height * width / params.target_segments)
    spatial_weight = (params.compactness / step) ** 2
    positions, centers = _seed_centers(volume, params.target_segments)
    n_centers = len(positions)
    yy, xx = np.mgrid[0:height, 0:width].astype(np.float64)
    flat_volume = volume.reshape(-1, depth)

    labels = np.full((height, width), -1, dtype=np.int64)
    objective = []
    for _ in range(params.max_iterations):
        dist = np.full((height, width), np.inf)
        new_labels = np.full((height, width), -1, dtype=np.int64)
        for k in range(n_centers):
            cy, cx = positions[k]
            y0, y1 = max(0, int(np.ceil(cy - step))), min(height, int(np.floor(cy + step)) + 1)
            x0, x1 = max(0, int(np.ceil(cx - step))), min(width, int(np.floor(cx + step)) + 1)
            if y0 >= y1 or x0 >= x1:
                continue
            d_feat = ((volume[y0:y1, x0:x1] - centers[k]) ** 2).sum(axis=2)
            d_xy = (yy[y0:y1, x0:x1] - cy) ** 2 + (xx[y0:y1, x0:x1] - cx) ** 2
            d = d_feat + spatial_weight * d_xy
            # Strict comparison: ties stay with the smaller center id
            better = d < dist[y0:y1, x0:x1]
            dist[y0:y1, x0:x1][better] = d[better]
            new_labels[y0:y1, x0:x1][better] = k

        orphans = new_labels < 0
        if orphans.any():
            oy, ox = np.nonzero(orphans)
            d_all = ((yy[oy, ox, None] - positions[:, 0]) ** 2 + (xx[oy, ox, None] - positions[:, 1]) ** 2)
            nearest = d_all.argmin(axis=1)
            new_labels[oy, ox] = nearest
            dist[oy, ox] = ((volume[oy, ox] - centers[nearest]) ** 2).sum(axis=1) + spatial_weight * d_all[np.arange(len(oy)), nearest]
        objective.append(float(dist.sum()))

        converged = np.array_equal(new_labels, labels)
        labels = new_labels
        if converged:
            break

        flat_labels = labels.ravel()
        counts = np.bincount(flat_labels, minlength=n_centers)
        occupied = counts > 0
        for d in range(depth):
            sums = np.bincount(flat_labels, weights=flat_volume[:, d], minlength=n_centers)
            centers[occupied, d] = sums[occupied] / counts[occupied]
        positions[occupied, 0] = np.bincount(flat_labels, weights=yy.ravel(), minlength=n_centers)[occupied] / counts[occupied]
        positions[occupied, 1] = np.bincount(flat_labels, weights=xx.ravel(), minlength=n_centers)[occupied] / counts[occupied]

    debug_log("[slic slic_kmeans] %d centers, %d iterations, objective %.6g" % (n_centers, len(objective), objective[-1]))
    return labels, objective


# ─── Connectivity ────────────────────────────────────────────────────────────

def neighbor_pixel_pairs(labels: np.ndarray, same: bool) -> tuple[np.ndarray, np.ndarray]:
    """Flat pixel index pairs of 4-neighbors whose labels are equal (same=True) or differ."""
    index = np.arange(labels.size).reshape(labels.shape)
    pairs_a, pairs_b = [], []
    for a, b, ia, ib in (
        (labels[:, :-1], labels[:, 1:], index[:, :-1], index[:, 1:]),
        (labels[:-1, :], labels[1:, :], index[:-1, :], index[1:, :]),
    ):
        mask = (a == b) if same else (a != b)
        pairs_a.append(ia[mask])
        pairs_b.append(ib[mask])
    return np.concatenate(pairs_a), np.concatenate(pairs_b)


def connected_regions(labels: np.ndarray) -> np.ndarray:
    """4-connected components of equal labels, numbered in order of first appearance."""
    labels = np.asarray(labels)
    a, b = neighbor_pixel_pairs(labels, same=True)
    graph = coo_matrix((np.ones(a.size, dtype=np.int8), (a, b)), shape=(labels.size, labels.size))
    _, components = connected_components(graph, directed=False)
    return relabel_first_appearance(components.reshape(labels.shape))


def enforce_connectivity(smap: SuperpixelMap, min_size: float = CONNECTIVITY_MIN_SIZE) -> SuperpixelMap:
    """
    Split segments into 4-connected components and merge every component smaller than
    min_size * (H*W / num_segments) into its largest adjacent segment (ties: smaller id).
    """
    labels = smap.labels
    threshold = min_size * labels.size / smap.num_segments
    components = connected_regions(labels)
    n_components = int(components.max()) + 1
    sizes = np.bincount(components.ravel(), minlength=n_components)

    a, b = neighbor_pixel_pairs(components, same=False)
    ca, cb = components.ravel()[a], components.ravel()[b]
    neighbors: list[set[int]] = [set() for _ in range(n_components)]
    for u, v in set(zip(ca.tolist(), cb.tolist())):
        neighbors[u].add(v)
        neighbors[v].add(u)

    parent = np.arange(n_components)

    def find(c: int) -> int:
        while parent[c] != c:
            parent[c] = parent[parent[c]]
            c = parent[c]
        return c

    group_size = sizes.astype(np.float64)
    merged = 0
    for c in sorted(range(n_components), key=lambda i: (sizes[i], i)):
        root = find(c)
        if group_size[root] >= threshold:
            continue
        candidates = {find(n) for n in neighbors[root]} - {root}
        if not candidates:
            continue
        target = max(candidates, key=lambda r: (group_size[r], -r))
        parent[root] = target
        group_size[target] += group_size[root]
        neighbors[target] |= neighbors[root]
        merged += 1

    roots = np.array([find(c) for c in range(n_components)])
    result = relabel_first_appearance(roots[components])
    if merged:
        debug_log("[slic enforce_connectivity] merged %d small components (threshold %.1f px)" % (merged, threshold))
    return SuperpixelMap(labels=result)


def compute_superpixels(features: np.ndarray, params: SlicParams = SlicParams()) -> SuperpixelMap:
    """SLIC on an (H, W, D) feature volume: localized k-means, then connectivity enforcement."""
    volume = _as_volume(features)
    height, width, _ = volume.shape
    if params.target_segments > height * width:
        raise SlicError(f"target_segments {params.target_segments} exceeds pixel count {height * width}")
    raw, _ = slic_kmeans(volume, params)
    smap = enforce_connectivity(SuperpixelMap(labels=relabel_first_appearance(raw)), params.connectivity_min_size)
    target = params.target_segments
    if not target / 2 <= smap.num_segments <= 2 * target:
        debug_log("[slic compute_superpixels] %d segments for target %d" % (smap.num_segments, target))
    return smap


# ─── Segment Statistics ──────────────────────────────────────────────────────

def segment_means(features: np.ndarray, smap: SuperpixelMap) -> tuple[np.ndarray, np.ndarray]:
    """Per-segment mean feature vectors (N, D) and (row, col) centroids (N, 2)."""
    volume = _as_volume(features)
    if volume.shape[:2] != smap.labels.shape:
        raise SlicError(f"Features {volume.shape[:2]} do not match superpixel map {smap.labels.shape}")
    n = smap.num_segments
    flat_labels = smap.labels.ravel()
    counts = np.bincount(flat_labels, minlength=n).astype(np.float64)
    flat = volume.reshape(-1, volume.shape[2])
    means = np.stack([np.bincount(flat_labels, weights=flat[:, d], minlength=n) for d in range(flat.shape[1])], axis=1)
    means /= counts[:, None]
    yy, xx = np.mgrid[0:smap.height, 0:smap.width]
    centroids = np.stack([
        np.bincount(flat_labels, weights=yy.ravel().astype(np.float64), minlength=n),
        np.bincount(flat_labels, weights=xx.ravel().astype(np.float64), minlength=n),
    ], axis=1) / counts[:, None]
    return means, centroids


def majority_label(smap: SuperpixelMap, labels: np.ndarray) -> np.ndarray:
    """Give every pixel of a segment the segment's most frequent class id (ties: smallest id)."""
    labels = np.asarray(labels)
    if labels.shape != smap.labels.shape:
        raise SlicError(f"Class labels {labels.shape} do not match superpixel map {smap.labels.shape}")
    n_classes = int(labels.max()) + 1
    counts = np.bincount(smap.labels.ravel() * n_classes + labels.ravel(),
                         minlength=smap.num_segments * n_classes).reshape(smap.num_segments, n_classes)
    modal = counts.argmax(axis=1)
    return modal[smap.labels].astype(labels.dtype)


# ─── Debug Output ────────────────────────────────────────────────────────────

def save_boundary_overlay(rgb: np.ndarray, smap: SuperpixelMap, path: Path) -> None:
    """Write an RGB preview with superpixel boundaries drawn in yellow."""
    overlay = mark_boundaries(np.asarray(rgb, dtype=np.float64) / 255.0, smap.labels, color=(1, 1, 0))
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(np.floor(overlay * 255.0 + 0.5).astype(np.uint8)).save(path)
