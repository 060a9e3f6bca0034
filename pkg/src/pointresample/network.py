"""Gradient-field network: edge-conv context encoder, relative-feature unit,
cosine-annealed aggregation and the global output head.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import autodiff as ad
from .degradation import make_rng
from .errors import InvalidArgumentError
from .geometry import PointCloud, SpatialIndex, knn_excluding_self, mean_nn_spacing


@dataclass(frozen=True)
class ModelConfig:
    k_feat: int = 16
    conv_widths: tuple = (32, 32, 32)
    f_hidden: int = 128
    f_out: int = 128
    m_hidden: int = 64
    k_max: int = 32
    # radius policy: fixed value if set, else radius_factor * mean NN spacing of the context
    radius: Optional[float] = None
    radius_factor: float = 3.0

    @property
    def context_width(self):
        return int(sum(self.conv_widths))


def cosine_weight(dist, r):
    """Scalar cosine-annealing weight ``0.5 (cos(pi d / r) + 1)``, zero past ``r``."""
    if dist > r:
        return 0.0
    return 0.5 * (math.cos(math.pi * dist / r) + 1.0)


class GradientFieldModel:
    """Parameters and hyper-parameters of the gradient-field estimator.

    ``params_H`` holds the edge-conv encoder, ``params_F`` the per-neighbor
    relative-feature MLP and ``params_M`` the global head.

    Weights use He-uniform initialization. With ``zero_output`` the last head
    layer starts at zero, so an untrained model predicts g = 0 everywhere.
    """

    def __init__(self, config: ModelConfig = ModelConfig(), seed=0, zero_output=True):
        self.config = config
        rng = make_rng(seed)
        self.params_H = ad.ParameterSet()
        self.params_F = ad.ParameterSet()
        self.params_M = ad.ParameterSet()

        def dense(pset, name, fan_in, fan_out, bias=True):
            pset.add(f"{name}.weight", ad.he_uniform(rng, fan_out, fan_in))
            if bias:
                pset.add(f"{name}.bias", np.zeros(fan_out))

        prev = None
        for layer, width in enumerate(config.conv_widths, start=1):
            fan_in = 3 if prev is None else 2 * prev
            dense(self.params_H, f"H.conv{layer}.lin0", fan_in, width)
            dense(self.params_H, f"H.conv{layer}.lin1", width, width)
            prev = width

        hc, hr = config.context_width, config.f_hidden
        # first F layer acts on [x - x_j ; h_j]; stored as two column blocks of one matrix
        limit = math.sqrt(6.0 / (3 + hc))
        self.params_F.add("F.lin0.weight_rel", rng.uniform(-limit, limit, size=(hr, 3)))
        self.params_F.add("F.lin0.weight_ctx", rng.uniform(-limit, limit, size=(hr, hc)))
        self.params_F.add("F.lin0.bias", np.zeros(hr))
        dense(self.params_F, "F.lin1", hr, config.f_out)

        dense(self.params_M, "M.lin0", config.f_out, config.m_hidden)
        dense(self.params_M, "M.lin1", config.m_hidden, 3)
        if zero_output:
            self.params_M["M.lin1.weight"].data[...] = 0.0

    def parameters(self):
        return ad.ParameterSet({**dict(self.params_H.items()), **dict(self.params_F.items()), **dict(self.params_M.items())})

    def astype(self, dtype):
        for pset in (self.params_H, self.params_F, self.params_M):
            pset.astype(dtype)

    def parameter_count(self):
        return self.params_H.count() + self.params_F.count() + self.params_M.count()

    def state(self):
        return self.parameters().state()

    def load_state(self, state):
        self.parameters().load_state(state)

    def radius_for(self, context: PointCloud):
        if self.config.radius is not None:
            return float(self.config.radius)
        spacing = mean_nn_spacing(context.points)
        if spacing <= 0:
            raise InvalidArgumentError("context has zero nearest-neighbor spacing; set a fixed radius")
        return self.config.radius_factor * spacing

    def _p(self, name):
        for pset in (self.params_H, self.params_F, self.params_M):
            if name in pset:
                return pset[name]
        raise KeyError(name)


@dataclass
class ContextFeatures:
    points: np.ndarray
    features: ad.Tensor
    radius: float
    index: SpatialIndex = field(repr=False)

    def __len__(self):
        return self.points.shape[0]


def _mlp2(model, prefix, x):
    h = ad.relu(ad.linear(x, model._p(f"{prefix}.lin0.weight"), model._p(f"{prefix}.lin0.bias")))
    return ad.relu(ad.linear(h, model._p(f"{prefix}.lin1.weight"), model._p(f"{prefix}.lin1.bias")))


def extract_context_features(model: GradientFieldModel, context: PointCloud, radius=None) -> ContextFeatures:
    """Per-point features from a stack of densely connected edge convolutions.

    Layer 1 sees only relative coordinates ``(x_j - x_i) / r`` so features are
    translation invariant; later layers see ``[h_i ; h_j - h_i]``. Each layer
    max-pools its edge messages over the ``k_feat`` nearest neighbors, and the
    outputs of all layers are concatenated.
    """
    cfg = model.config
    pts = context.points
    n = len(pts)
    if n < cfg.k_feat + 1:
        raise InvalidArgumentError(f"context needs at least {cfg.k_feat + 1} points, got {n}")
    r = model.radius_for(context) if radius is None else float(radius)
    index = SpatialIndex(pts)
    nbr, _ = knn_excluding_self(index, cfg.k_feat)
    k = cfg.k_feat
    center = np.repeat(np.arange(n), k)
    flat = nbr.reshape(-1)

    rel = ((pts[flat] - pts[center]) / r)
    h = None
    outputs = []
    for layer, width in enumerate(cfg.conv_widths, start=1):
        if h is None:
            edge_in = ad.Tensor(rel)
        else:
            hi = ad.gather(h, center)
            hj = ad.gather(h, flat)
            edge_in = ad.concat([hi, ad.sub(hj, hi)])
        msg = _mlp2(model, f"H.conv{layer}", edge_in)
        h = ad.max_over_set(ad.reshape(msg, (n, k, width)))
        outputs.append(h)
    return ContextFeatures(pts, ad.concat(outputs), r, index)


def neighbor_pairs(ctx: ContextFeatures, queries, k_max):
    """Flattened (query, context) pairs within the radius, at most ``k_max`` per query."""
    idx, _, counts = ctx.index.radius_batch(queries, ctx.radius, k_max)
    seg = np.repeat(np.arange(len(queries)), counts)
    nbr = idx[idx >= 0]
    return seg, nbr


def aggregate_features(model: GradientFieldModel, queries, ctx: ContextFeatures, pairs=None):
    """``F(x) = sum_j w_j F_mlp([x - x_j ; h_j])`` for every query row.

    The second F layer is affine, so ``sum_j w_j (W a_j + b)`` is evaluated as
    ``W (sum_j w_j a_j) + (sum_j w_j) b``; only the first layer runs per pair.
    The first layer is linear in ``x - x_j`` too, so its pre-activation splits
    into a per-query term and a per-context term that are summed per pair.
    """
    xq = queries if isinstance(queries, ad.Tensor) else ad.Tensor(np.atleast_2d(queries))
    nq = xq.shape[0]
    seg, nbr = neighbor_pairs(ctx, xq.data, model.config.k_max) if pairs is None else pairs
    p = model._p
    inv_r = 1.0 / ctx.radius
    rel = ad.sub(ad.gather(xq, seg), ad.Tensor(ctx.points[nbr]))
    w = ad.cosine_annealing(ad.row_norm(rel), ctx.radius)
    w_rel = p("F.lin0.weight_rel")
    q_part = ad.linear(ad.scale(xq, inv_r), w_rel, p("F.lin0.bias"))
    c_part = ad.sub(ad.linear(ctx.features, p("F.lin0.weight_ctx")),
                    ad.linear(ad.Tensor(ctx.points * inv_r), w_rel))
    pooled = ad.pair_relu_pool(q_part, c_part, seg, nbr, w, nq)
    wsum = ad.sum_weighted(ad.Tensor(np.ones(len(seg))), w, seg, nq)
    return ad.add(ad.linear(pooled, p("F.lin1.weight")), ad.outer(wsum, p("F.lin1.bias")))


def head(model: GradientFieldModel, feat):
    p = model._p
    hidden = ad.relu(ad.linear(feat, p("M.lin0.weight"), p("M.lin0.bias")))
    return ad.linear(hidden, p("M.lin1.weight"), p("M.lin1.bias"))


def gradient_field(model: GradientFieldModel, queries, ctx: ContextFeatures, pairs=None):
    """g(x) for a batch of query positions, as a (Q, 3) Tensor."""
    return head(model, aggregate_features(model, queries, ctx, pairs))


def estimate_gradient(model: GradientFieldModel, x, ctx: ContextFeatures):
    """g(x) for a single 3-vector; returns a numpy array."""
    with ad.no_grad():
        return gradient_field(model, np.asarray(x, dtype=np.float64).reshape(1, 3), ctx).data[0].copy()


def evaluate_field(model: GradientFieldModel, queries, ctx: ContextFeatures, chunk=4096):
    """Inference-only g(x) for many queries, as a numpy (Q, 3) array."""
    q = np.atleast_2d(np.asarray(queries, dtype=np.float64))
    out = np.empty_like(q)
    with ad.no_grad():
        for start in range(0, len(q), chunk):
            out[start : start + chunk] = gradient_field(model, q[start : start + chunk], ctx).data
    return out
