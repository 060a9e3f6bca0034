"""Synthetic degradations: additive noise models and naive upsampling init.

Random numbers come from numpy's Philox4x32 counter-based bit generator keyed
by the 64-bit seed, so every draw is a pure function of ``(seed, shape)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgumentError
from .geometry import PointCloud, bounding_sphere_radius

NOISE_KINDS = (
    "isotropic-gaussian",
    "laplace",
    "discrete",
    "anisotropic-gaussian",
    "unidirectional-gaussian",
    "uniform-ball",
)

# short names accepted by the command line
NOISE_ALIASES = {
    "gaussian": "isotropic-gaussian",
    "laplace": "laplace",
    "discrete": "discrete",
    "aniso": "anisotropic-gaussian",
    "unidir": "unidirectional-gaussian",
    "uniform": "uniform-ball",
}

# unit-scale covariance of the anisotropic model; multiplied by (s * R)^2
ANISOTROPIC_COVARIANCE = np.array(
    [
        [1.0, -0.5, -0.25],
        [-0.5, 1.0, -0.25],
        [-0.25, -0.25, 1.0],
    ]
)

_DISCRETE_STEPS = np.array(
    [
        [1.0, 0.0, 0.0],
        [-1.0, 0.0, 0.0],
        [0.0, 1.0, 0.0],
        [0.0, -1.0, 0.0],
        [0.0, 0.0, 1.0],
        [0.0, 0.0, -1.0],
        [0.0, 0.0, 0.0],
    ]
)
_DISCRETE_PROBS = np.array([0.1, 0.1, 0.1, 0.1, 0.1, 0.1, 0.4])


def make_rng(seed):
    """Philox-backed generator for a 64-bit seed."""
    return np.random.Generator(np.random.Philox(key=int(seed) & 0xFFFFFFFFFFFFFFFF))


@dataclass(frozen=True)
class NoiseSpec:
    kind: str
    scale: float
    seed: int = 0

    def __post_init__(self):
        kind = NOISE_ALIASES.get(self.kind, self.kind)
        if kind not in NOISE_KINDS:
            raise InvalidArgumentError(f"unknown noise kind {self.kind!r}")
        if not self.scale > 0:
            raise InvalidArgumentError(f"noise scale must be positive, got {self.scale}")
        object.__setattr__(self, "kind", kind)


def sample_displacements(kind, n, sigma, rng):
    """Draw ``n`` displacement vectors for a noise model at absolute scale ``sigma``."""
    if kind == "isotropic-gaussian":
        return rng.normal(0.0, sigma, size=(n, 3))
    if kind == "laplace":
        # 1-D density exp(-|x|/s)/(2s) applied independently per axis
        return rng.laplace(0.0, sigma, size=(n, 3))
    if kind == "discrete":
        choice = rng.choice(len(_DISCRETE_STEPS), size=n, p=_DISCRETE_PROBS)
        return _DISCRETE_STEPS[choice] * sigma
    if kind == "anisotropic-gaussian":
        chol = np.linalg.cholesky(ANISOTROPIC_COVARIANCE)
        return rng.normal(size=(n, 3)) @ chol.T * sigma
    if kind == "unidirectional-gaussian":
        out = np.zeros((n, 3))
        out[:, 0] = rng.normal(0.0, sigma, size=n)
        return out
    if kind == "uniform-ball":
        # radius-cubed inversion: r = s * u^(1/3) along a uniform direction
        direction = rng.normal(size=(n, 3))
        direction /= np.linalg.norm(direction, axis=1, keepdims=True)
        radius = sigma * np.cbrt(rng.uniform(size=n))
        return direction * radius[:, None]
    raise InvalidArgumentError(f"unknown noise kind {kind!r}")


def apply_noise(cloud: PointCloud, spec: NoiseSpec, radius=None) -> PointCloud:
    """Perturb every point; ``spec.scale`` is a fraction of the bounding-sphere radius.

    ``radius`` overrides the reference radius (used when noising a patch with
    the parent cloud's scale).
    """
    ref = bounding_sphere_radius(cloud.points) if radius is None else float(radius)
    rng = make_rng(spec.seed)
    disp = sample_displacements(spec.kind, len(cloud), spec.scale * ref, rng)
    if spec.kind == "unidirectional-gaussian":
        out = cloud.points.copy()
        out[:, 0] += disp[:, 0]
        return cloud.with_points(out)
    return cloud.with_points(cloud.points + disp)


def naive_upsample_init(cloud: PointCloud, ratio, sigma=0.02, seed=0, radius=None) -> PointCloud:
    """``ratio`` Gaussian-jittered copies of the cloud, stacked copy-major.

    ``sigma`` is a fraction of the bounding-sphere radius, or of ``radius`` when given.
    """
    if ratio < 2:
        raise InvalidArgumentError(f"upsampling ratio must be >= 2, got {ratio}")
    if sigma < 0:
        raise InvalidArgumentError("sigma must be non-negative")
    ref = bounding_sphere_radius(cloud.points) if radius is None else float(radius)
    base = np.tile(cloud.points, (int(ratio), 1))
    if sigma == 0:
        return PointCloud(base, cloud.transform)
    rng = make_rng(seed)
    return PointCloud(base + rng.normal(0.0, sigma * ref, size=base.shape), cloud.transform)
