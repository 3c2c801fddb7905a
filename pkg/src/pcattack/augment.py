"""Input-transformation gradient estimators (diverse inputs, translation
smoothing, scale copies) and their fixed composition."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from . import autodiff as ad


@dataclass(frozen=True)
class DimConfig:
    probability: float = 0.5
    max_expand_ratio: float = 330 / 299

    def __post_init__(self):
        if not 0.0 <= self.probability <= 1.0:
            raise ValueError("DIM probability must lie in [0, 1]")
        if not self.max_expand_ratio > 1.0:
            raise ValueError("DIM expansion ratio must exceed 1")


@dataclass(frozen=True)
class TimConfig:
    kernel_size: int = 7
    sigma: float | None = None  # defaults to kernel_size / 3

    def __post_init__(self):
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise ValueError("TIM kernel size must be a positive odd integer")
        if self.sigma is not None and not self.sigma > 0:
            raise ValueError("TIM sigma must be positive")

    @property
    def resolved_sigma(self):
        return self.kernel_size / 3 if self.sigma is None else self.sigma


@dataclass(frozen=True)
class SimConfig:
    copies: int = 5

    def __post_init__(self):
        if self.copies < 1:
            raise ValueError("SIM needs at least one copy")


@dataclass(frozen=True)
class AugmentConfig:
    dim: DimConfig | None = None
    tim: TimConfig | None = None
    sim: SimConfig | None = None
    stream: int = 0

    @property
    def active(self):
        return self.dim is not None or self.tim is not None or self.sim is not None


def example_rngs(seed, indices, stream=0):
    """One generator per example, keyed on (seed, stream, example index)."""
    return [np.random.default_rng([int(seed), int(stream), int(i)]) for i in indices]


def gaussian_kernel(size, sigma):
    if size < 1 or size % 2 == 0:
        raise ValueError(f"kernel size must be odd, got {size}")
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    r = np.arange(size) - size // 2
    k = np.exp(-(r[:, None] ** 2 + r[None, :] ** 2) / (2.0 * sigma**2))
    return k / k.sum()


def diverse_input_matrix(size, drawn, padded, offset):
    """Resize ``size -> drawn``, zero-pad to ``padded`` at ``offset``, resize back to ``size``."""
    m = ad.bilinear_matrix(drawn, size)
    m = ad.pad_matrix(padded, drawn, offset) @ m
    return ad.bilinear_matrix(size, padded) @ m


def _draw_dim(rng, cfg, h, w):
    """Returns (rows, cols) for one example, or None when the transform does not fire."""
    if not rng.random() < cfg.probability:
        return None
    side = max(h, w)
    padded = math.ceil(cfg.max_expand_ratio * side)
    drawn = int(rng.integers(side, padded))
    top = int(rng.integers(0, padded - drawn + 1))
    left = int(rng.integers(0, padded - drawn + 1))
    return diverse_input_matrix(h, drawn, padded, top), diverse_input_matrix(w, drawn, padded, left)


def _gradient_through(model, x, y, rows=None, cols=None):
    tape = ad.GradientTape()
    xv = tape.watch(x)
    inp = xv if rows is None else ad.resample(xv, rows, cols)
    loss = ad.softmax_cross_entropy(model.forward(inp, tape), y)
    (g,) = tape.gradient(loss, [xv])
    return g


def dim_gradient(model, x, y, cfg, rngs):
    """Input gradient through a random resize-and-pad transform applied per example."""
    x = np.asarray(x, dtype=np.float64)
    n, _, h, w = x.shape
    draws = [_draw_dim(rng, cfg, h, w) for rng in rngs]
    if all(d is None for d in draws):
        return _gradient_through(model, x, y)
    eye_h, eye_w = np.eye(h), np.eye(w)
    rows = np.stack([eye_h if d is None else d[0] for d in draws])
    cols = np.stack([eye_w if d is None else d[1] for d in draws])
    return _gradient_through(model, x, y, rows, cols)


def tim_smooth(grad, kernel):
    """Same-size, zero-padded per-channel convolution of a gradient batch."""
    k = kernel.shape[0]
    if k > grad.shape[-1] or k > grad.shape[-2]:
        raise ValueError(f"kernel {kernel.shape} larger than image {grad.shape[-2:]}")
    return ndimage.convolve(grad, kernel[None, None], mode="constant", cval=0.0)


def tim_gradient(model, x, y, cfg):
    return tim_smooth(_gradient_through(model, x, y), gaussian_kernel(cfg.kernel_size, cfg.resolved_sigma))


def sim_gradient(model, x, y, cfg):
    """Average of gradients taken at ``x / 2**i``, each with respect to the scaled copy."""
    total = None
    for i in range(cfg.copies):
        g = _gradient_through(model, x / 2.0**i, y)
        total = g if total is None else total + g
    return total / cfg.copies


class GradientEstimator:
    """Composed estimator: scale-copy averaging outermost, the diverse-input
    transform on each copy, translation smoothing applied last."""

    def __init__(self, augment=None):
        self.augment = augment or AugmentConfig()
        tim = self.augment.tim
        self.kernel = None if tim is None else gaussian_kernel(tim.kernel_size, tim.resolved_sigma)

    @property
    def passes_per_query(self):
        return 1 if self.augment.sim is None else self.augment.sim.copies

    def __call__(self, model, x, y, rngs=None):
        aug = self.augment
        if aug.dim is not None and rngs is None:
            raise ValueError("diverse-input estimator needs per-example generators")
        copies = 1 if aug.sim is None else aug.sim.copies
        total = None
        for i in range(copies):
            xi = x if aug.sim is None else x / 2.0**i
            g = _gradient_through(model, xi, y) if aug.dim is None else dim_gradient(model, xi, y, aug.dim, rngs)
            total = g if total is None else total + g
        if aug.sim is not None:
            total = total / copies
        if self.kernel is not None:
            total = tim_smooth(total, self.kernel)
        return total


def compose(*configs, stream=0):
    """Merge single-transform configs into one estimator."""
    merged = {"dim": None, "tim": None, "sim": None}
    for c in configs:
        key = {DimConfig: "dim", TimConfig: "tim", SimConfig: "sim"}.get(type(c))
        if key is None and c is not None:
            raise TypeError(f"not an augmentation config: {c!r}")
        if key:
            merged[key] = c
    return GradientEstimator(AugmentConfig(stream=stream, **merged))
