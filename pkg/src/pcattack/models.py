"""Small classifiers: architecture definitions, SGD training and prediction."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad

ARCHITECTURES = ("mlp-2", "cnn-small", "cnn-wide")


class TrainingError(RuntimeError):
    """Training diverged."""


@dataclass(frozen=True)
class ModelSpec:
    architecture_id: str
    input_shape: tuple = (1, 28, 28)
    class_count: int = 10
    init_seed: int = 0

    def __post_init__(self):
        if self.architecture_id not in ARCHITECTURES:
            raise ValueError(f"unknown architecture {self.architecture_id!r}; choose from {ARCHITECTURES}")
        object.__setattr__(self, "input_shape", tuple(int(v) for v in self.input_shape))


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 5
    batch_size: int = 32
    learning_rate: float = 0.05
    rng_seed: int = 0
    adversarial_epsilon: float | None = None  # enables FGSM-augmented batches

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if not self.learning_rate >= 0:
            raise ValueError("learning_rate must be non-negative")


def layer_plan(spec):
    """Ordered layer list: ('conv', k, c_in, c_out) | ('dense', d_in, d_out) | ('relu',) | ('pool',) | ('flatten',)."""
    c, h, w = spec.input_shape
    k = spec.class_count
    if spec.architecture_id == "mlp-2":
        return [("flatten",), ("dense", c * h * w, 128), ("relu",), ("dense", 128, 64), ("relu",), ("dense", 64, k)]
    if spec.architecture_id == "cnn-small":
        return [
            ("conv", 3, c, 8), ("relu",), ("pool",),
            ("conv", 3, 8, 16), ("relu",), ("pool",),
            ("flatten",), ("dense", 16 * (h // 4) * (w // 4), k),
        ]  # fmt: skip
    return [
        ("conv", 5, c, 16), ("relu",), ("pool",),
        ("conv", 3, 16, 32), ("relu",), ("pool",),
        ("flatten",), ("dense", 32 * (h // 4) * (w // 4), 64), ("relu",), ("dense", 64, k),
    ]  # fmt: skip


def init_weights(spec):
    """He-normal weights and zero biases drawn from ``spec.init_seed``, float32-exact."""
    rng = np.random.default_rng(spec.init_seed)
    weights = []
    for layer in layer_plan(spec):
        if layer[0] == "conv":
            _, k, cin, cout = layer
            weights.append(rng.normal(0.0, np.sqrt(2.0 / (cin * k * k)), (cout, cin, k, k)))
            weights.append(np.zeros(cout))
        elif layer[0] == "dense":
            _, din, dout = layer
            weights.append(rng.normal(0.0, np.sqrt(2.0 / din), (din, dout)))
            weights.append(np.zeros(dout))
    return round_to_f32(weights)


def weight_shapes(spec):
    shapes = []
    for layer in layer_plan(spec):
        if layer[0] == "conv":
            _, k, cin, cout = layer
            shapes += [(cout, cin, k, k), (cout,)]
        elif layer[0] == "dense":
            shapes += [(layer[1], layer[2]), (layer[2],)]
    return shapes


class Classifier:
    """Feed-forward network over a flat list of weight arrays."""

    def __init__(self, spec, weights=None):
        self.spec = spec
        self.weights = [np.asarray(w, dtype=np.float64) for w in (init_weights(spec) if weights is None else weights)]
        if [w.shape for w in self.weights] != weight_shapes(spec):
            raise ad.ShapeError(f"weight shapes {[w.shape for w in self.weights]} do not fit {spec}")

    @property
    def input_shape(self):
        return self.spec.input_shape

    @property
    def class_count(self):
        return self.spec.class_count

    def forward(self, x, tape=None, params=None):
        """Logits for a batch. ``params`` substitutes taped weight handles during training."""
        ws = self.weights if params is None else params
        it = iter(ws)
        h = x
        for layer in layer_plan(self.spec):
            kind = layer[0]
            if kind == "conv":
                h = ad.conv2d(h, next(it), next(it))
            elif kind == "dense":
                h = ad.dense(h, next(it), next(it))
            elif kind == "relu":
                h = ad.relu(h)
            elif kind == "pool":
                h = ad.maxpool2(h)
            else:
                h = ad.flatten(h)
        return h

    def logits(self, x):
        x = np.asarray(x, dtype=np.float64)
        single = x.shape == tuple(self.input_shape)
        out = self.forward(x[None] if single else x)
        return out[0] if single else out


class FusedClassifier:
    """Ensemble whose logits are the weighted sum of member logits."""

    def __init__(self, members, weights=None):
        if not members:
            raise ValueError("ensemble needs at least one member")
        weights = np.ones(len(members)) if weights is None else np.asarray(weights, dtype=np.float64)
        if len(weights) != len(members):
            raise ValueError("one weight per member required")
        if np.any(weights <= 0):
            raise ValueError("ensemble weights must be positive")
        shapes = {tuple(m.input_shape) for m in members}
        if len(shapes) != 1:
            raise ad.ShapeError(f"ensemble members disagree on input shape: {sorted(shapes)}")
        self.members = list(members)
        self.weights = [float(w) for w in weights / weights.sum()]

    @property
    def input_shape(self):
        return self.members[0].input_shape

    @property
    def class_count(self):
        return self.members[0].class_count

    def forward(self, x, tape=None):
        out = None
        for m, w in zip(self.members, self.weights):
            term = ad.scale(m.forward(x, tape), w)
            out = term if out is None else ad.add(out, term)
        return out

    def logits(self, x):
        return Classifier.logits(self, x)


class CountingClassifier:
    """Wraps a classifier and counts per-example gradient passes.

    A forward pass that records onto a tape is the first half of a gradient
    computation, so those are what get counted.
    """

    def __init__(self, model):
        self.model = model
        self.count = 0

    @property
    def input_shape(self):
        return self.model.input_shape

    @property
    def class_count(self):
        return self.model.class_count

    def forward(self, x, tape=None):
        out = self.model.forward(x, tape)
        if isinstance(x, ad.Var):
            self.count += x.shape[0]
        return out

    def logits(self, x):
        return self.model.logits(x)


def predict(model, x):
    """Argmax label(s); ties go to the lowest class index."""
    z = model.logits(x)
    return np.argmax(z, axis=-1)


def accuracy(model, dataset, batch=500):
    hits = 0
    for s in range(0, len(dataset), batch):
        hits += int((predict(model, dataset.images[s : s + batch]) == dataset.labels[s : s + batch]).sum())
    return hits / len(dataset)


def fgsm_batch(model, x, y, epsilon, lo=0.0, hi=1.0):
    g = ad.loss_gradient(model, x, y)
    return ad.clip_ball(x, x + epsilon * ad.sign(g), epsilon, lo, hi)


def round_to_f32(weights):
    return [w.astype(np.float32).astype(np.float64) for w in weights]


@dataclass
class Checkpoint:
    spec: ModelSpec
    weights: list
    epochs: int = 0
    train_accuracy: float = 0.0
    test_accuracy: float = 0.0
    adversarial: bool = False
    adversarial_epsilon: float = 0.0
    extra: dict = field(default_factory=dict)

    def classifier(self):
        return Classifier(self.spec, self.weights)

    def __eq__(self, other):
        if not isinstance(other, Checkpoint):
            return NotImplemented
        same_meta = (self.spec, self.epochs, self.train_accuracy, self.test_accuracy, self.adversarial,
                     self.adversarial_epsilon) == (other.spec, other.epochs, other.train_accuracy,
                                                   other.test_accuracy, other.adversarial,
                                                   other.adversarial_epsilon)  # fmt: skip
        return same_meta and len(self.weights) == len(other.weights) and all(
            a.shape == b.shape and np.array_equal(a, b) for a, b in zip(self.weights, other.weights)
        )


def train(spec, dataset, cfg, test_set=None):
    """Deterministic minibatch SGD on the mean cross-entropy.

    In adversarial mode the first half of every batch is replaced by FGSM
    examples crafted against the current weights at ``cfg.adversarial_epsilon``.
    The finished weights are rounded to float32 so that the checkpoint file
    round-trips exactly.
    """
    if tuple(dataset.input_shape) != tuple(spec.input_shape):
        raise ad.ShapeError(f"dataset shape {dataset.input_shape} does not match {spec.input_shape}")
    model = Classifier(spec)
    rng = np.random.default_rng(cfg.rng_seed)
    n = len(dataset)
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            xb = dataset.images[idx]
            yb = dataset.labels[idx]
            if cfg.adversarial_epsilon:
                half = len(idx) // 2
                xb = xb.copy()
                xb[:half] = fgsm_batch(model, xb[:half], yb[:half], cfg.adversarial_epsilon)
            tape = ad.GradientTape()
            params = [tape.watch(w) for w in model.weights]
            loss = ad.softmax_cross_entropy(model.forward(xb, tape, params), yb)
            if not np.isfinite(loss.value):
                raise TrainingError(f"loss became non-finite during epoch {epoch + 1}")
            grads = tape.gradient(loss, params)
            step = cfg.learning_rate / len(idx)
            model.weights = [w - step * g for w, g in zip(model.weights, grads)]
    model.weights = round_to_f32(model.weights)
    if not all(np.all(np.isfinite(w)) for w in model.weights):
        raise TrainingError(f"weights became non-finite by epoch {cfg.epochs}")
    return Checkpoint(
        spec=spec,
        weights=model.weights,
        epochs=cfg.epochs,
        train_accuracy=accuracy(model, dataset),
        test_accuracy=accuracy(model, test_set) if test_set is not None else 0.0,
        adversarial=bool(cfg.adversarial_epsilon),
        adversarial_epsilon=float(cfg.adversarial_epsilon or 0.0),
    )
