"""
SUDF Saliency - Self-supervision Driver
Iterates forward pass, argmax pseudo-labels, superpixel refinement, cross-entropy, backprop and SGD,
computing manifold-ranking saliency along the way until loss or saliency converges.
"""
import time
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Callable, Optional

import numpy as np
import pandas as pd

from config import (
    BN_EPSILON, CONTEXT_MARGIN, EPS1, EPS2, KAPPA, LEARNING_RATE, MIN_CLUSTERS, MOMENTUM, N_FEATURES,
    RECOMPUTE_SUPERPIXELS_EVERY, SALIENCY_EVERY, SEED, ConfigError, debug_log,
)
from hsio import HyperspectralCube
from mrank import MrParams, saliency_from_features
from nncore import OptimizerState, ShapeError, build_network, glorot_init, network_backward, network_forward, softmax_cross_entropy
from slic import SlicParams, SuperpixelMap, compute_superpixels, majority_label

LOG_COLUMNS = ["iter", "loss", "loss_delta", "sal_delta", "clusters", "ms"]


# ─── Domain Types ────────────────────────────────────────────────────────────

class Variant(str, Enum):
    HF_SLIC = "hf-slic"   # superpixels from the CNN features
    HS_SLIC = "hs-slic"   # superpixels from the hyperspectral input, computed once


class TerminationCause(str, Enum):
    LOSS_CONVERGED = "loss-converged"
    SALIENCY_CONVERGED = "saliency-converged"
    MAX_ITERATIONS = "max-iterations"
    MIN_CLUSTERS = "min-clusters"


@dataclass(frozen=True)
class SelfSupConfig:
    variant: Variant = Variant.HF_SLIC
    epsilon1: float = EPS1
    epsilon2: float = EPS2
    kappa: int = KAPPA
    slic: SlicParams = field(default_factory=SlicParams)
    mr: MrParams = field(default_factory=MrParams)
    learning_rate: float = LEARNING_RATE
    momentum: float = MOMENTUM
    n_features: int = N_FEATURES
    bn_epsilon: float = BN_EPSILON
    context_margin: int = CONTEXT_MARGIN
    recompute_superpixels_every: int = RECOMPUTE_SUPERPIXELS_EVERY
    saliency_every: int = SALIENCY_EVERY
    min_clusters: int = MIN_CLUSTERS
    seed: int = SEED

    def __post_init__(self):
        object.__setattr__(self, "variant", Variant(self.variant))
        if self.epsilon1 <= 0 or self.epsilon2 <= 0:
            raise ConfigError("epsilon1 and epsilon2 must be positive")
        if self.kappa < 1:
            raise ConfigError(f"kappa must be >= 1, got {self.kappa}")
        if self.recompute_superpixels_every < 1 or self.saliency_every < 1:
            raise ConfigError("recompute_superpixels_every and saliency_every must be >= 1")
        if self.context_margin < 0 or self.context_margin % 4:
            raise ConfigError(f"context_margin must be a non-negative multiple of 4, got {self.context_margin}")
        if self.min_clusters < 0:
            raise ConfigError(f"min_clusters must be >= 0, got {self.min_clusters}")

    @classmethod
    def from_settings(cls, settings: dict) -> "SelfSupConfig":
        """Build from a resolved settings dict (see config.resolve_settings)."""
        return cls(
            variant=Variant(settings["variant"]),
            epsilon1=settings["eps1"],
            epsilon2=settings["eps2"],
            kappa=settings["kappa"],
            slic=SlicParams(
                target_segments=settings["segments"],
                compactness=settings["compactness"],
                max_iterations=settings["slic_iterations"],
                connectivity_min_size=settings["connectivity_min_size"],
            ),
            mr=MrParams(alpha=settings["alpha"], sigma_sq=settings["sigma_sq"]),
            learning_rate=settings["learning_rate"],
            momentum=settings["momentum"],
            n_features=settings["n_features"],
            bn_epsilon=settings["bn_epsilon"],
            context_margin=settings["context_margin"],
            recompute_superpixels_every=settings["recompute_superpixels_every"],
            saliency_every=settings["saliency_every"],
            min_clusters=settings["min_clusters"],
            seed=settings["seed"],
        )


@dataclass(frozen=True, eq=False)
class ClusterLabels:
    labels: np.ndarray

    @property
    def count(self) -> int:
        return int(np.unique(self.labels).size)


@dataclass
class IterationRecord:
    iteration: int
    loss: float
    loss_delta: Optional[float]
    sal_delta: Optional[float]
    clusters: int
    ms: float


@dataclass
class ConvergenceLog:
    records: list[IterationRecord] = field(default_factory=list)
    cause: Optional[TerminationCause] = None

    @property
    def iterations(self) -> int:
        return len(self.records)

    def to_frame(self) -> pd.DataFrame:
        rows = [[r.iteration, r.loss, r.loss_delta, r.sal_delta, r.clusters, r.ms] for r in self.records]
        frame = pd.DataFrame(rows, columns=LOG_COLUMNS)
        frame["iter"] = frame["iter"].astype(int)
        frame["clusters"] = frame["clusters"].astype(int)
        return frame

    def write_csv(self, path: Path, provenance: Optional[list[str]] = None) -> None:
        """`# key=value` provenance lines, the per-iteration table, then a `# cause=...` footer."""
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="") as f:
            for item in provenance or []:
                f.write(f"# {item}\n")
            self.to_frame().to_csv(f, index=False, float_format="%.17g", lineterminator="\n")
            f.write(f"# cause={self.cause.value if self.cause else ''}\n")

    @classmethod
    def read_csv(cls, path: Path) -> "ConvergenceLog":
        with open(path, encoding="utf-8") as f:
            lines = f.read().splitlines()
        cause = None
        for line in lines:
            if line.startswith("# cause="):
                value = line[len("# cause="):].strip()
                cause = TerminationCause(value) if value else None
        frame = pd.read_csv(path, comment="#")
        log = cls(cause=cause)
        for row in frame.itertuples(index=False):
            log.records.append(IterationRecord(
                iteration=int(row.iter),
                loss=float(row.loss),
                loss_delta=None if pd.isna(row.loss_delta) else float(row.loss_delta),
                sal_delta=None if pd.isna(row.sal_delta) else float(row.sal_delta),
                clusters=int(row.clusters),
                ms=float(row.ms),
            ))
        return log


@dataclass
class IterationResult:
    iteration: int
    loss: float
    features: np.ndarray
    labels: ClusterLabels
    refined_labels: np.ndarray
    superpixels: SuperpixelMap
    saliency: Optional[np.ndarray]


class SelfSupState:
    """Everything one self-supervision run owns: network, optimizer and the superpixel cache."""

    def __init__(self, cube: HyperspectralCube, config: SelfSupConfig, superpixels: Optional[SuperpixelMap] = None):
        self.cube = cube
        self.config = config
        self.data = np.asarray(cube.data, dtype=np.float64)
        net = build_network(cube.bands, config.n_features, config.bn_epsilon, config.context_margin)
        self.net = glorot_init(net, config.seed)
        self.optimizer = OptimizerState(config.learning_rate, config.momentum)
        self.iteration = 0
        self.injected = superpixels is not None
        self.superpixels = superpixels
        if superpixels is not None and superpixels.labels.shape != (cube.height, cube.width):
            raise ShapeError(f"Superpixel map {superpixels.labels.shape} does not match cube {(cube.height, cube.width)}")
        if self.superpixels is None and config.variant == Variant.HS_SLIC:
            self.superpixels = compute_superpixels(self.data.transpose(1, 2, 0), config.slic)
            debug_log("[selfsup SelfSupState] cached %d input superpixels" % self.superpixels.num_segments)


# ─── Operations ──────────────────────────────────────────────────────────────

def argmax_labels(features: np.ndarray) -> ClusterLabels:
    """Index of the maximal channel per pixel; ties go to the smallest channel."""
    features = np.asarray(features)
    if not np.isfinite(features).all():
        raise ValueError("Features must be finite")
    return ClusterLabels(labels=np.argmax(features, axis=0))


def saliency_delta(a: np.ndarray, b: np.ndarray) -> float:
    """Mean absolute per-pixel difference."""
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"Saliency maps differ in shape: {a.shape} vs {b.shape}")
    return float(np.abs(a - b).mean())


def _current_superpixels(state: SelfSupState, features: np.ndarray) -> SuperpixelMap:
    if state.injected or state.config.variant == Variant.HS_SLIC:
        return state.superpixels
    if state.superpixels is None or (state.iteration - 1) % state.config.recompute_superpixels_every == 0:
        state.superpixels = compute_superpixels(features.transpose(1, 2, 0), state.config.slic)
    return state.superpixels


def run_iteration(state: SelfSupState) -> IterationResult:
    """One self-supervision step; the saliency is computed on the configured period only."""
    state.iteration += 1
    i = state.iteration
    features, cache = network_forward(state.net, state.data)
    labels = argmax_labels(features)
    superpixels = _current_superpixels(state, features)
    refined = majority_label(superpixels, labels.labels)
    loss, grad = softmax_cross_entropy(features, refined)
    state.net.step(state.optimizer, network_backward(state.net, cache, grad))

    if labels.count == 1:
        debug_log("[selfsup run_iteration] iteration %d: clusters collapsed to one label" % i)
    saliency = None
    if (i - 1) % state.config.saliency_every == 0:
        saliency = saliency_from_features(features.transpose(1, 2, 0), superpixels, state.config.mr)
    return IterationResult(i, loss, features, labels, refined, superpixels, saliency)


def _termination_cause(config: SelfSupConfig, i: int, loss_delta, sal_delta, clusters: int) -> Optional[TerminationCause]:
    if i >= 2:
        if loss_delta <= config.epsilon1:
            return TerminationCause.LOSS_CONVERGED
        if sal_delta is not None and sal_delta <= config.epsilon2:
            return TerminationCause.SALIENCY_CONVERGED
        if config.min_clusters and clusters <= config.min_clusters:
            return TerminationCause.MIN_CLUSTERS
    if i >= config.kappa:
        return TerminationCause.MAX_ITERATIONS
    return None


def run_selfsup(cube: HyperspectralCube, config: SelfSupConfig = SelfSupConfig(),
                superpixels: Optional[SuperpixelMap] = None,
                on_iteration: Optional[Callable[[SelfSupState, IterationResult], None]] = None):
    """
    Train the feature network on one cube until |dL| <= eps1, the saliency change <= eps2, or
    kappa iterations. Returns (saliency of the last iteration, ConvergenceLog).
    """
    state = SelfSupState(cube, config, superpixels)
    log = ConvergenceLog()
    prev_loss, prev_saliency = None, None
    while True:
        start = time.perf_counter()
        result = run_iteration(state)
        i = result.iteration
        loss_delta = abs(result.loss - prev_loss) if prev_loss is not None else None
        sal_delta = None
        if result.saliency is not None and prev_saliency is not None:
            sal_delta = saliency_delta(result.saliency, prev_saliency)
        cause = _termination_cause(config, i, loss_delta, sal_delta, result.labels.count)

        if cause is not None and result.saliency is None:
            result.saliency = saliency_from_features(result.features.transpose(1, 2, 0), result.superpixels, config.mr)
            if prev_saliency is not None:
                sal_delta = saliency_delta(result.saliency, prev_saliency)

        log.records.append(IterationRecord(i, result.loss, loss_delta, sal_delta, result.labels.count,
                                           (time.perf_counter() - start) * 1000.0))
        debug_log("[selfsup run_selfsup] iter %d loss %.6f dL %s dS %s clusters %d" % (
            i, result.loss, loss_delta, sal_delta, result.labels.count))
        if on_iteration is not None:
            on_iteration(state, result)
        if result.saliency is not None:
            prev_saliency = result.saliency
        prev_loss = result.loss
        if cause is not None:
            log.cause = cause
            debug_log("[selfsup run_selfsup] stopped after %d iterations: %s" % (i, cause.value))
            return result.saliency, log


def run_baseline(cube: HyperspectralCube, slic_params: SlicParams = SlicParams(), mr: MrParams = MrParams()) -> np.ndarray:
    """HS-MR baseline: superpixels and manifold ranking directly on the spectra, no network."""
    volume = np.asarray(cube.data, dtype=np.float64).transpose(1, 2, 0)
    return saliency_from_features(volume, compute_superpixels(volume, slic_params), mr)
