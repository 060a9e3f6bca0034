"""Restoration by gradient ascent on the learned field, optionally alternated
with graph-Laplacian smoothing solves.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import autodiff as ad
from .degradation import naive_upsample_init
from .errors import InvalidArgumentError, NumericalFailureError
from .geometry import PointCloud
from .graph import DEFAULT_K, DEFAULT_LAMBDA, build_knn_graph, laplacian, solve_regularized
from .network import GradientFieldModel, evaluate_field, extract_context_features

REGULARIZERS = ("none", "glr", "rglr")


@dataclass
class ResampleConfig:
    alpha1: float = 0.15
    decay: float = 0.95
    steps: int = 50
    regularizer: str = "none"
    lam: float = DEFAULT_LAMBDA
    graph_k: int = DEFAULT_K
    graph_sigma: Optional[float] = None

    def __post_init__(self):
        if not 0 < self.alpha1 < 1:
            raise InvalidArgumentError(f"alpha1 must be in (0, 1), got {self.alpha1}")
        if not 0 < self.decay <= 1:
            raise InvalidArgumentError(f"decay must be in (0, 1], got {self.decay}")
        if self.steps < 0:
            raise InvalidArgumentError("steps must be non-negative")
        if self.regularizer not in REGULARIZERS:
            raise InvalidArgumentError(f"regularizer must be one of {REGULARIZERS}")
        if self.lam < 0:
            raise InvalidArgumentError("lambda must be non-negative")

    def step_sizes(self):
        """``alpha_t = alpha1 * decay^(t-1)`` for t = 1..steps."""
        return self.alpha1 * self.decay ** np.arange(self.steps)


@dataclass
class ResampleStats:
    graph_builds: int = 0
    solves: int = 0
    trajectory: list = field(default_factory=list)


def model_field(model: GradientFieldModel, context: PointCloud):
    """Freeze the context features once and return ``positions -> g(positions)``."""
    with ad.no_grad():
        ctx = extract_context_features(model, context)
    return lambda pts: evaluate_field(model, pts, ctx)


def resample(field_fn: Callable, query: PointCloud, cfg: ResampleConfig,
             stats: Optional[ResampleStats] = None, dump_every=0) -> PointCloud:
    """Run ``cfg.steps`` synchronous ascent steps ``x <- x + alpha_t g(x)``.

    ``glr`` smooths after each step with a Laplacian built once from the input;
    ``rglr`` rebuilds graph and Laplacian from the intermediate cloud before
    every solve. ``field_fn`` maps an (N, 3) array to an (N, 3) array.
    """
    stats = stats if stats is not None else ResampleStats()
    x = query.points.copy()
    lap = None
    if cfg.regularizer == "glr" and cfg.steps > 0:
        lap = laplacian(build_knn_graph(x, cfg.graph_k, cfg.graph_sigma))
        stats.graph_builds += 1
    for t, alpha in enumerate(cfg.step_sizes(), start=1):
        x = x + alpha * field_fn(x)
        if cfg.regularizer == "rglr":
            lap = laplacian(build_knn_graph(x, cfg.graph_k, cfg.graph_sigma))
            stats.graph_builds += 1
        if cfg.regularizer != "none":
            try:
                x = solve_regularized(lap, x, cfg.lam)
            except NumericalFailureError as exc:
                raise NumericalFailureError("regularized solve failed", exc.residual, step=t) from exc
            stats.solves += 1
        if dump_every and t % dump_every == 0:
            stats.trajectory.append((t, x.copy()))
    return query.with_points(x)


def denoise(model: GradientFieldModel, noisy: PointCloud, cfg: ResampleConfig = ResampleConfig(),
            stats=None, dump_every=0) -> PointCloud:
    """Context and query are both the noisy cloud."""
    if cfg.steps == 0:
        return noisy.copy()
    return resample(model_field(model, noisy), noisy, cfg, stats, dump_every)


def upsample(model: GradientFieldModel, sparse: PointCloud, ratio=4, init_sigma=0.02, seed=0,
             cfg: ResampleConfig = ResampleConfig(), stats=None, dump_every=0) -> PointCloud:
    """Naive jittered init of ``ratio * N`` points, refined with the sparse cloud as context."""
    init = naive_upsample_init(sparse, ratio, init_sigma, seed)
    if cfg.steps == 0:
        return init
    return resample(model_field(model, sparse), init, cfg, stats, dump_every)
