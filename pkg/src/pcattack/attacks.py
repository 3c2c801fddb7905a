"""Gradient-sign attacks and their prediction-correction variants.

Every attack works on a batch ``x`` of shape (N, ...) with integer labels
``y`` of shape (N,). Normalization, clipping and momentum are all per example,
so each row of the result is what the attack would produce on that example
alone. Randomness (only used by the diverse-input estimator) comes from one
generator per example keyed on ``(rng_seed, stream, index)``; pass the
examples' corpus ``indices`` to make results independent of batching.

Prediction-correction, in brief: starting from an anchor point, ``K`` clipped
sign steps produce predicted examples; their L1-normalized gradients are
averaged and added to the normalized gradient at the anchor. The corrected
direction replaces the raw gradient in the underlying update rule. For the
iterative variants the anchor is the current iterate (the Nesterov look-ahead
point for NI), the prediction step is the iteration step size, and predicted
examples are always clipped to the epsilon-ball of the clean input.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from .augment import AugmentConfig, DimConfig, GradientEstimator, SimConfig, TimConfig, example_rngs
from .models import FusedClassifier, predict

BASES = ("fgsm", "i", "mi", "ni")


@dataclass(frozen=True)
class AttackConfig:
    epsilon: float = 0.3
    step_alpha: float | None = None  # epsilon / iterations when unset
    iterations: int = 10
    predictions: int = 1
    momentum_mu: float = 1.0
    augment: AugmentConfig | None = None
    rng_seed: int = 0
    pc_anchor: str = "nes"  # NI-based PC: "nes" (look-ahead point) or "current"
    lo: float = 0.0
    hi: float = 1.0

    def __post_init__(self):
        if self.epsilon < 0:
            raise ValueError("epsilon must be non-negative")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.predictions < 0:
            raise ValueError("predictions must be >= 0")
        if self.momentum_mu < 0:
            raise ValueError("momentum must be non-negative")
        if self.pc_anchor not in ("nes", "current"):
            raise ValueError("pc_anchor must be 'nes' or 'current'")

    @property
    def alpha(self):
        return self.epsilon / self.iterations if self.step_alpha is None else self.step_alpha


@dataclass
class AttackResult:
    x_adv: np.ndarray
    grad_evals: int  # gradient queries per example
    source_label: np.ndarray
    success_on_source: np.ndarray
    degenerate: np.ndarray = field(default=None)  # rows whose first gradient was all zero
    backward_passes: int = 0  # per example, counts every scale copy


class _Oracle:
    """Gradient queries for one attack invocation, with accounting."""

    def __init__(self, model, y, cfg, indices):
        self.model = model
        self.y = np.asarray(y)
        self.estimator = GradientEstimator(cfg.augment)
        self.rngs = None
        if cfg.augment is not None and cfg.augment.dim is not None:
            idx = np.arange(len(self.y)) if indices is None else indices
            self.rngs = example_rngs(cfg.rng_seed, idx, cfg.augment.stream)
        self.queries = 0

    def __call__(self, x):
        self.queries += 1
        return self.estimator(self.model, x, self.y, self.rngs)

    def result(self, x, x_adv, degenerate=None):
        return AttackResult(
            x_adv=x_adv,
            grad_evals=self.queries,
            source_label=self.y.copy(),
            success_on_source=predict(self.model, x_adv) != self.y,
            degenerate=np.zeros(len(self.y), bool) if degenerate is None else degenerate,
            backward_passes=self.queries * self.estimator.passes_per_query,
        )


def _check(model, x, y):
    x = np.asarray(x, dtype=np.float64)
    if x.shape[1:] != tuple(model.input_shape):
        raise ad.ShapeError(f"expected a batch of {tuple(model.input_shape)}, got {x.shape}")
    y = np.asarray(y)
    if y.shape != (x.shape[0],):
        raise ad.ShapeError("one label per example required")
    return x, y


def _zero_rows(g):
    return ~np.any(g.reshape(len(g), -1) != 0, axis=1)


def _step(x, x_t, direction, size, cfg):
    return ad.clip_ball(x, x_t + size * ad.sign(direction), cfg.epsilon, cfg.lo, cfg.hi)


def _predict(oracle, anchor, original, k_total, step, cfg, anchor_grad, on_predict=None):
    g_pre = np.zeros_like(anchor)
    x_pre, grad = anchor, anchor_grad
    for k in range(k_total):
        x_pre = ad.clip_ball(original, x_pre + step * ad.sign(grad), cfg.epsilon, cfg.lo, cfg.hi)
        grad = oracle(x_pre)
        norm = np.abs(grad).reshape(len(grad), -1).sum(axis=1).reshape((-1,) + (1,) * (grad.ndim - 1))
        addend = np.where(norm < 1e-12, 0.0, grad / np.where(norm < 1e-12, 1.0, k_total * norm))
        g_pre = g_pre + addend
        if on_predict is not None:
            on_predict(k + 1, x_pre, g_pre)
    return g_pre


def fgsm(model, x, y, cfg, indices=None):
    x, y = _check(model, x, y)
    oracle = _Oracle(model, y, cfg, indices)
    g = oracle(x)
    return oracle.result(x, _step(x, x, g, cfg.epsilon, cfg), _zero_rows(g))


def i_fgsm(model, x, y, cfg, indices=None, on_step=None):
    x, y = _check(model, x, y)
    oracle = _Oracle(model, y, cfg, indices)
    x_t = x
    for t in range(cfg.iterations):
        x_t = _step(x, x_t, oracle(x_t), cfg.alpha, cfg)
        if on_step is not None:
            on_step(t + 1, x_t)
    return oracle.result(x, x_t)


def _momentum(model, x, y, cfg, indices, nesterov, on_step=None):
    x, y = _check(model, x, y)
    oracle = _Oracle(model, y, cfg, indices)
    x_t = x
    g = np.zeros_like(x)
    for t in range(cfg.iterations):
        point = x_t + cfg.alpha * cfg.momentum_mu * g if nesterov else x_t
        g = cfg.momentum_mu * g + ad.l1_normalize_rows(oracle(point))
        x_t = _step(x, x_t, g, cfg.alpha, cfg)
        if on_step is not None:
            on_step(t + 1, x_t, g)
    return oracle.result(x, x_t)


def mi_fgsm(model, x, y, cfg, indices=None, on_step=None):
    return _momentum(model, x, y, cfg, indices, False, on_step)


def ni_fgsm(model, x, y, cfg, indices=None, on_step=None):
    return _momentum(model, x, y, cfg, indices, True, on_step)


def pc_predict(model, anchor_x, original_x, y, k_total, step, epsilon, anchor_grad=None, cfg=None,
               indices=None, on_predict=None):  # fmt: skip
    """Average L1-normalized gradient over ``k_total`` predicted examples.

    ``anchor_grad`` is the gradient already known at the anchor; when omitted
    it is computed here at the cost of one extra query. Returns the
    accumulated predicted gradient.
    """
    if k_total < 1 or not step > 0:
        raise ValueError("need k_total >= 1 and step > 0")
    anchor_x, y = _check(model, anchor_x, y)
    cfg = replace(cfg or AttackConfig(), epsilon=epsilon)
    oracle = _Oracle(model, y, cfg, indices)
    if anchor_grad is None:
        anchor_grad = oracle(anchor_x)
    return _predict(oracle, anchor_x, np.asarray(original_x, dtype=np.float64), k_total, step, cfg,
                    anchor_grad, on_predict)  # fmt: skip


def pc_fgsm(model, x, y, cfg, indices=None, on_predict=None):
    x, y = _check(model, x, y)
    oracle = _Oracle(model, y, cfg, indices)
    g0 = oracle(x)
    corrected = ad.l1_normalize_rows(g0)
    if cfg.predictions:
        corrected = corrected + _predict(oracle, x, x, cfg.predictions, cfg.epsilon, cfg, g0, on_predict)
    return oracle.result(x, _step(x, x, corrected, cfg.epsilon, cfg), _zero_rows(g0))


def pc_iterative(base, model, x, y, cfg, indices=None, on_step=None):
    """PC-I / PC-MI / PC-NI-FGSM. ``base`` is one of "i", "mi", "ni"."""
    if base not in ("i", "mi", "ni"):
        raise ValueError(f"unknown base method {base!r}")
    x, y = _check(model, x, y)
    oracle = _Oracle(model, y, cfg, indices)
    alpha, mu = cfg.alpha, cfg.momentum_mu
    x_t = x
    g = np.zeros_like(x)
    for t in range(cfg.iterations):
        nes = x_t + alpha * mu * g if base == "ni" else x_t
        grad = oracle(nes)
        corrected = ad.l1_normalize_rows(grad)
        if cfg.predictions:
            if base == "ni" and cfg.pc_anchor == "current":
                anchor, anchor_grad = x_t, oracle(x_t)
            else:
                anchor, anchor_grad = nes, grad
            corrected = corrected + _predict(oracle, anchor, x, cfg.predictions, alpha, cfg, anchor_grad)
        if base == "i":
            direction = corrected
        else:
            g = mu * g + corrected
            direction = g
        x_t = _step(x, x_t, direction, alpha, cfg)
        if on_step is not None:
            on_step(t + 1, x_t)
    return oracle.result(x, x_t)


# ---------------------------------------------------------------- registry


@dataclass(frozen=True)
class AttackSpec:
    pc: bool
    base: str  # "fgsm" | "i" | "mi" | "ni"
    augment: frozenset  # subset of {"si", "ti", "di"}


_ID = re.compile(r"^(pc-)?((?:(?:si|ti|di)-)*)(?:(i|mi|ni)-)?fgsm$")


def parse_attack(attack_id):
    """``pc-si-ti-di-ni-fgsm`` -> AttackSpec(pc=True, base="ni", augment={si, ti, di})."""
    m = _ID.match(attack_id.strip().lower())
    if m is None:
        raise ValueError(f"unrecognised attack id {attack_id!r}")
    tokens = [t for t in m.group(2).split("-") if t]
    if len(set(tokens)) != len(tokens):
        raise ValueError(f"repeated augmentation in {attack_id!r}")
    return AttackSpec(bool(m.group(1)), m.group(3) or "fgsm", frozenset(tokens))


DEFAULT_AUGMENT = AugmentConfig(dim=DimConfig(), tim=TimConfig(), sim=SimConfig())


def configure(attack_id, cfg, settings=DEFAULT_AUGMENT):
    """Copy of ``cfg`` with only the augmentations named in ``attack_id`` switched on."""
    spec = parse_attack(attack_id)
    if not spec.augment:
        return replace(cfg, augment=None)
    aug = AugmentConfig(
        dim=(settings.dim or DimConfig()) if "di" in spec.augment else None,
        tim=(settings.tim or TimConfig()) if "ti" in spec.augment else None,
        sim=(settings.sim or SimConfig()) if "si" in spec.augment else None,
        stream=settings.stream,
    )
    return replace(cfg, augment=aug)


def expected_grad_evals(attack_id, cfg):
    """Closed-form gradient queries per example: 1, T, K+1 or T(K+1)."""
    spec = parse_attack(attack_id)
    k = cfg.predictions if spec.pc else 0
    if spec.pc and spec.base == "ni" and cfg.pc_anchor == "current" and k:
        return cfg.iterations * (k + 2)
    t = 1 if spec.base == "fgsm" else cfg.iterations
    return t * (k + 1)


def run_attack(attack_id, model, x, y, cfg, indices=None, settings=DEFAULT_AUGMENT):
    spec = parse_attack(attack_id)
    cfg = configure(attack_id, cfg, settings)
    if spec.base == "fgsm":
        return (pc_fgsm if spec.pc else fgsm)(model, x, y, cfg, indices)
    if spec.pc:
        return pc_iterative(spec.base, model, x, y, cfg, indices)
    return {"i": i_fgsm, "mi": mi_fgsm, "ni": ni_fgsm}[spec.base](model, x, y, cfg, indices)


def ensemble_attack(models, weights, attack, x, y, cfg, indices=None):
    """Run ``attack`` (an id or an attack function) against the weighted logit fusion of ``models``."""
    fused = FusedClassifier(models, weights)
    if isinstance(attack, str):
        return run_attack(attack, fused, x, y, cfg, indices)
    return attack(fused, x, y, cfg, indices)
