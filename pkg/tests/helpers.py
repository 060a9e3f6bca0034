"""Shared oracles for the network tests and the acceptance suite."""

import numpy as np

from pointresample import autodiff as ad
from pointresample.geometry import PointCloud
from pointresample.network import (
    GradientFieldModel,
    ModelConfig,
    aggregate_features,
    extract_context_features,
    gradient_field,
)


def boundary_configuration(rng, r=0.5, n_ctx=24, k_feat=16):
    """Context around a query with one point at distance exactly r - 1e-6.

    Returns (context points, query, radius). All context points are within
    2r of the query, fewer than K_max of them.
    """
    x = rng.uniform(-1, 1, size=3)
    dirs = rng.normal(size=(n_ctx, 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    radii = r * rng.uniform(0.05, 1.6, size=n_ctx)
    ctx = x + dirs * radii[:, None]
    # the boundary neighbor
    ctx[0] = x + dirs[0] * (r - 1e-6)
    return ctx, x, r


def field_scalar(model, ctx_pts, r, x, proj):
    """c . g(x) recomputed from scratch (context features included)."""
    ctx = extract_context_features(model, PointCloud(ctx_pts), radius=r)
    q = ad.Tensor(np.asarray(x, dtype=np.float64).reshape(1, 3), requires_grad=True)
    g = gradient_field(model, q, ctx)
    return ad.total(ad.mul(g, ad.Tensor(proj.reshape(1, 3)))), q


def kink_aware_derivative(f, old, steps=(1e-6, 1e-7, 1e-8), floor=1e-6):
    """Central difference of ``f`` at ``old``, shrinking the step past ReLU/max kinks.

    The network is piecewise smooth. A step whose interval contains a kink
    shows up as disagreement between the forward and backward one-sided
    slopes; the step is then reduced. Disagreement within the float64 rounding
    noise of ``f / h`` is not a kink. Returns the estimate at the last step tried.
    """
    f0 = f(old)
    scale = max(1.0, abs(old))
    eps = np.finfo(np.float64).eps
    for step in steps:
        h = step * scale
        up, down = f(old + h), f(old - h)
        fwd, bwd = (up - f0) / h, (f0 - down) / h
        noise = 16 * eps * max(abs(f0), abs(up), abs(down)) / h
        if abs(fwd - bwd) <= 1e-3 * max(abs(fwd), abs(bwd), floor) + noise:
            break
    return (up - down) / (2 * h)


def network_gradcheck(model, ctx_pts, x, r, rng, floor=1e-6, entries_per_tensor=1):
    """Max relative error between analytic and finite-difference gradients.

    Checks all three query coordinates and ``entries_per_tensor`` random
    entries of every parameter tensor. Relative error uses
    ``|a - n| / max(|a|, |n|, floor)``.
    """
    proj = rng.normal(size=3)
    params = model.parameters()
    ad.zero_grad(params)
    loss, q = field_scalar(model, ctx_pts, r, x, proj)
    loss.backward()
    x = np.asarray(x, dtype=np.float64)
    worst = 0.0

    def rel(a, n):
        return abs(a - n) / max(abs(a), abs(n), floor)

    for c in range(3):
        def f_x(v, c=c):
            xv = x.copy()
            xv[c] = v
            return field_scalar(model, ctx_pts, r, xv, proj)[0].item()

        worst = max(worst, rel(q.grad[0, c], kink_aware_derivative(f_x, x[c], floor=floor)))

    for name, t in params.items():
        for _ in range(entries_per_tensor):
            i = tuple(int(rng.integers(s)) for s in t.data.shape)
            old = float(t.data[i])

            def f_p(v, t=t, i=i):
                t.data[i] = v
                return field_scalar(model, ctx_pts, r, x, proj)[0].item()

            numeric = kink_aware_derivative(f_p, old, floor=floor)
            t.data[i] = old
            worst = max(worst, rel(t.grad[i], numeric))
    ad.zero_grad(params)
    return worst


def continuity_jump(model, rng, r=0.5, delta=1e-6):
    """Relative change of the aggregated feature when a query crosses the radius of one neighbor.

    The query moves by ``delta`` along the line to a context point sitting at
    distance ``r`` (+/- delta/2), so that point leaves the neighborhood.
    """
    x_mid = rng.uniform(-1, 1, size=3)
    u = rng.normal(size=3)
    u /= np.linalg.norm(u)
    dirs = rng.normal(size=(24, 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    ctx_pts = x_mid + dirs * (r * rng.uniform(0.05, 0.9, size=24))[:, None]
    ctx_pts[0] = x_mid + u * r
    ctx = extract_context_features(model, PointCloud(ctx_pts), radius=r)
    inside = x_mid + u * (delta / 2)
    outside = x_mid - u * (delta / 2)
    with ad.no_grad():
        f_in = aggregate_features(model, inside, ctx).data[0]
        f_out = aggregate_features(model, outside, ctx).data[0]
    d_in = np.linalg.norm(ctx_pts[0] - inside)
    d_out = np.linalg.norm(ctx_pts[0] - outside)
    assert d_in < r < d_out, "configuration must straddle the boundary"
    return float(np.linalg.norm(f_in - f_out) / np.linalg.norm(f_out))


def default_model(seed=0):
    return GradientFieldModel(ModelConfig(), seed=seed, zero_output=False)
