"""The shipped roster of checkpoints and ``architecture#seed`` name resolution."""

from __future__ import annotations

import os
import re
from pathlib import Path

from .checkpoint import load_checkpoint, save_checkpoint
from .data import synthetic_splits
from .models import ModelSpec, TrainConfig, train

ENV_VAR = "PCATTACK_CHECKPOINTS"
DATA_SEED = 2024
TRAIN_COUNT = 6000
TEST_COUNT = 1000
ADV_EPSILON = 0.3

# three architectures x two seeds, plus two FGSM-trained twins
ROSTER = [f"{a}#{s}" for a in ("mlp-2", "cnn-small", "cnn-wide") for s in (1, 2)] + [
    "cnn-small#1:adv",
    "cnn-wide#1:adv",
]

_REF = re.compile(r"^(mlp-2|cnn-small|cnn-wide)#(\d+)(:adv)?$")


class UnknownModelError(LookupError):
    pass


def parse_ref(ref):
    m = _REF.match(ref)
    if m is None:
        raise UnknownModelError(f"bad model reference {ref!r}; expected architecture#seed[:adv]")
    return m.group(1), int(m.group(2)), bool(m.group(3))


def filename(ref):
    arch, seed, adv = parse_ref(ref)
    return f"{arch}_{seed}{'_adv' if adv else ''}.advm"


def default_dir():
    env = os.environ.get(ENV_VAR)
    if env:
        return Path(env)
    return Path(__file__).resolve().parents[2] / "checkpoints"


def train_config(ref):
    _, seed, adv = parse_ref(ref)
    return TrainConfig(epochs=5, batch_size=32, learning_rate=0.05, rng_seed=seed,
                       adversarial_epsilon=ADV_EPSILON if adv else None)  # fmt: skip


def corpus():
    """The bundled train/test corpora every shipped checkpoint is trained on."""
    return synthetic_splits(TRAIN_COUNT, TEST_COUNT, DATA_SEED)


def build_checkpoint(ref, train_set=None, test_set=None):
    arch, seed, _ = parse_ref(ref)
    if train_set is None:
        train_set, test_set = corpus()
    return train(ModelSpec(arch, init_seed=seed), train_set, train_config(ref), test_set)


def ensure_zoo(directory=None, refs=ROSTER, log=None):
    """Train and save any roster checkpoint missing from ``directory``."""
    directory = Path(directory or default_dir())
    directory.mkdir(parents=True, exist_ok=True)
    missing = [r for r in refs if not (directory / filename(r)).exists()]
    if missing:
        train_set, test_set = corpus()
        for ref in missing:
            cp = build_checkpoint(ref, train_set, test_set)
            save_checkpoint(cp, directory / filename(ref))
            if log:
                log(f"{ref}: train acc {cp.train_accuracy:.4f}, test acc {cp.test_accuracy:.4f}")
    return directory


class Zoo:
    def __init__(self, directory=None):
        self.directory = Path(directory or default_dir())
        self._cache = {}

    def refs(self):
        found = []
        for ref in ROSTER:
            if (self.directory / filename(ref)).exists():
                found.append(ref)
        for path in sorted(self.directory.glob("*.advm")):
            m = re.match(r"^(mlp-2|cnn-small|cnn-wide)_(\d+)(_adv)?\.advm$", path.name)
            if m:
                ref = f"{m.group(1)}#{m.group(2)}{':adv' if m.group(3) else ''}"
                if ref not in found:
                    found.append(ref)
        return found

    def checkpoint(self, ref):
        if ref not in self._cache:
            path = self.directory / filename(ref)
            if not path.exists():
                raise UnknownModelError(f"no checkpoint for {ref} in {self.directory}")
            self._cache[ref] = load_checkpoint(path)
        return self._cache[ref]

    def model(self, ref):
        return self.checkpoint(ref).classifier()

    def resolve(self, spec):
        """Comma-separated refs, or "all" for every checkpoint present."""
        refs = self.refs() if spec.strip() == "all" else [r.strip() for r in spec.split(",") if r.strip()]
        return {r: self.model(r) for r in refs}
