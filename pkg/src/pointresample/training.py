"""Supervision target, query sampling, loss and the SGD training loop."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import autodiff as ad
from .degradation import NoiseSpec, apply_noise, make_rng, naive_upsample_init
from .errors import InvalidArgumentError, InvalidInputError
from .geometry import PointCloud, SpatialIndex, bounding_sphere_radius, patch_around
from .network import GradientFieldModel, ModelConfig, extract_context_features, gradient_field

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    lr: float = 5e-4
    iterations: int = 20000
    patch_size: int = 1024
    queries_per_point: int = 4
    # jitter std as a fraction of the aggregation radius
    jitter_factor: float = 1.0 / 3.0
    noise_lo: float = 0.005
    noise_hi: float = 0.03
    seed: int = 0
    # "denoise": context = noisy patch, target = clean patch
    # "upsample": context = sparse clean subset, queries from its naive dense init, target = dense clean patch
    task: str = "denoise"
    upsample_ratio: int = 4
    upsample_sigma: float = 0.02
    log_every: int = 0
    # tensor precision during training; parameters are returned as float64
    dtype: str = "float64"

    def __post_init__(self):
        if self.lr < 0 or self.iterations < 0:
            raise InvalidArgumentError("lr and iterations must be non-negative")
        if self.patch_size < 1 or self.queries_per_point < 1:
            raise InvalidArgumentError("patch_size and queries_per_point must be positive")
        if not 0 < self.noise_lo <= self.noise_hi:
            raise InvalidArgumentError("need 0 < noise_lo <= noise_hi")
        if self.task not in ("denoise", "upsample"):
            raise InvalidArgumentError(f"unknown task {self.task!r}")
        if self.dtype not in ("float32", "float64"):
            raise InvalidArgumentError(f"dtype must be float32 or float64, got {self.dtype!r}")


@dataclass
class TrainResult:
    model: GradientFieldModel
    losses: list = field(default_factory=list)


def target_gradient(x, targets, index: Optional[SpatialIndex] = None):
    """``NN(x, Y) - x`` for one query (shape (3,)) or a batch (shape (Q, 3))."""
    pts = targets.points if isinstance(targets, PointCloud) else np.asarray(targets, dtype=np.float64)
    if pts.size == 0:
        raise InvalidInputError("target cloud is empty")
    index = index or SpatialIndex(pts)
    q = np.asarray(x, dtype=np.float64)
    nn, _ = index.knn_batch(q.reshape(-1, 3), 1)
    out = pts[nn[:, 0]] - q.reshape(-1, 3)
    return out.reshape(q.shape)


def sample_queries(points, queries_per_point, jitter_std, rng):
    """Each point once, followed by ``queries_per_point - 1`` Gaussian-jittered copies."""
    pts = points.points if isinstance(points, PointCloud) else np.asarray(points, dtype=np.float64)
    if len(pts) == 0:
        raise InvalidInputError("cannot sample queries around an empty cloud")
    extra = queries_per_point - 1
    if extra <= 0:
        return pts.copy()
    jitter = np.tile(pts, (extra, 1))
    if jitter_std > 0:
        jitter = jitter + rng.normal(0.0, jitter_std, size=jitter.shape)
    return np.concatenate([pts, jitter])


def field_loss(model, ctx, queries, targets, index=None):
    """Mean squared distance between predicted and target gradients (a Tensor)."""
    s = target_gradient(queries, targets, index)
    g = gradient_field(model, queries, ctx)
    return ad.mse(g, s)


def _upsample_sample(clean_patch: PointCloud, cfg: TrainConfig, rng, radius):
    """Sparse context (a random 1/ratio subset) and its naive init, jittered relative to ``radius``."""
    n = len(clean_patch)
    m = max(cfg.upsample_ratio, 2)
    sparse_n = max(n // m, 1)
    sel = np.sort(rng.permutation(n)[:sparse_n])
    sparse = PointCloud(clean_patch.points[sel])
    init = naive_upsample_init(sparse, m, cfg.upsample_sigma, seed=int(rng.integers(2**63)), radius=radius)
    return sparse, init


def train(clouds, cfg: TrainConfig, model: Optional[GradientFieldModel] = None,
          model_config: ModelConfig = ModelConfig()) -> TrainResult:
    """One random patch per iteration: degrade, encode, query, loss, SGD step."""
    clouds = [c if isinstance(c, PointCloud) else PointCloud(c) for c in clouds]
    if not clouds:
        raise InvalidInputError("training needs at least one clean cloud")
    rng = make_rng(cfg.seed)
    if model is None:
        model = GradientFieldModel(model_config, seed=int(rng.integers(2**63)))
    dtype = np.dtype(cfg.dtype)
    model.astype(dtype)
    try:
        with ad.precision(dtype):
            return _train_loop(model, clouds, cfg, rng)
    finally:
        model.astype(np.float64)


def _train_loop(model, clouds, cfg, rng):
    params = list(model.parameters())
    indexes = [SpatialIndex(c.points) for c in clouds]
    radii = [bounding_sphere_radius(c.points) for c in clouds]
    result = TrainResult(model)
    for it in range(cfg.iterations):
        ci = int(rng.integers(len(clouds)))
        cloud = clouds[ci]
        size = min(cfg.patch_size, len(cloud))
        seed_index = int(rng.integers(len(cloud)))
        clean = patch_around(cloud, seed_index, size, indexes[ci]).cloud
        if cfg.task == "denoise":
            level = float(rng.uniform(cfg.noise_lo, cfg.noise_hi))
            noisy = apply_noise(clean, NoiseSpec("isotropic-gaussian", level, int(rng.integers(2**63))), radius=radii[ci])
            context, around = noisy, noisy.points
        else:
            context, init = _upsample_sample(clean, cfg, rng, radii[ci])
            around = init.points
        ctx = extract_context_features(model, context)
        queries = sample_queries(around, cfg.queries_per_point, cfg.jitter_factor * ctx.radius, rng)
        loss = field_loss(model, ctx, queries, clean)
        loss.backward()
        ad.sgd_step(params, cfg.lr)
        ad.zero_grad(params)
        result.losses.append(float(loss.data))
        if cfg.log_every and (it + 1) % cfg.log_every == 0:
            recent = np.mean(result.losses[-cfg.log_every:])
            log.info("iter %d loss %.6g", it + 1, recent)
    return result


def write_loss_trace(path, losses):
    with open(path, "w") as fh:
        for i, v in enumerate(losses, start=1):
            fh.write(f"{i} {v:.17g}\n")


def moving_average(values, window):
    v = np.asarray(values, dtype=np.float64)
    if len(v) < window:
        return np.array([v.mean()]) if len(v) else v
    c = np.cumsum(np.insert(v, 0, 0.0))
    return (c[window:] - c[:-window]) / window
