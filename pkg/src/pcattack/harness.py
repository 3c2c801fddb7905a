"""Experiment drivers: success-rate matrices, sweeps and report writers.

Crafting is split into fixed-size chunks of the filtered corpus. The chunking
never depends on the worker count, and each chunk carries the corpus indices
of its examples, so a run with one worker and a run with eight produce the
same bytes.
"""

from __future__ import annotations

import csv
import io
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, replace

import numpy as np

from .attacks import DEFAULT_AUGMENT, expected_grad_evals, parse_attack, run_attack
from .data import EmptySubsetError
from .models import FusedClassifier, predict

CHUNK = 100
FIELDS = ("attack", "source_model", "target_model", "white_box", "n", "success_rate", "grad_evals_total")


class BudgetError(ValueError):
    """A gradient budget that an attack's count formula cannot hit exactly."""


class ReportError(OSError):
    pass


@dataclass(frozen=True)
class Cell:
    attack: str
    source_model: str
    target_model: str
    white_box: bool
    n: int
    success_rate: float
    grad_evals_total: int


@dataclass
class SuccessMatrix:
    cells: list

    @property
    def attacks(self):
        return list(dict.fromkeys(c.attack for c in self.cells))

    @property
    def targets(self):
        return list(dict.fromkeys(c.target_model for c in self.cells))

    def cell(self, attack, source, target):
        for c in self.cells:
            if (c.attack, c.source_model, c.target_model) == (attack, source, target):
                return c
        raise KeyError((attack, source, target))


@dataclass
class SweepResult:
    axis: str  # "K", "T" or "budget"
    xs: list
    points: list  # (x, Cell) pairs in axis order

    def series(self):
        """{(attack, source, target): [rate per x]} with one entry per axis value."""
        out = {}
        for x, c in self.points:
            out.setdefault((c.attack, c.source_model, c.target_model), {})[x] = c.success_rate
        return {k: [v.get(x) for x in self.xs] for k, v in out.items()}


def _chunked_predict(model, x):
    return np.concatenate([predict(model, x[s : s + CHUNK]) for s in range(0, len(x), CHUNK)])


def filter_correct(model, dataset):
    keep = np.flatnonzero(_chunked_predict(model, dataset.images) == dataset.labels)
    if keep.size == 0:
        raise EmptySubsetError("model classifies none of the examples correctly")
    return dataset.subset(keep)


def success_rate(model, x_adv, labels):
    labels = np.asarray(labels)
    if len(labels) == 0:
        raise EmptySubsetError("success rate of an empty set is undefined")
    return float(np.mean(_chunked_predict(model, np.asarray(x_adv)) != labels))


def _craft(job):
    attack, model, x, y, cfg, indices, settings = job
    res = run_attack(attack, model, x, y, cfg, indices, settings)
    return res.x_adv, res.grad_evals


def craft(attack, model, dataset, cfg, workers=1, settings=DEFAULT_AUGMENT):
    """Adversarial versions of every example plus the total gradient-query count."""
    jobs = [
        (attack, model, dataset.images[s : s + CHUNK], dataset.labels[s : s + CHUNK], cfg,
         dataset.indices[s : s + CHUNK], settings)
        for s in range(0, len(dataset), CHUNK)
    ]  # fmt: skip
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=min(workers, len(jobs))) as pool:
            outs = list(pool.map(_craft, jobs))
    else:
        outs = [_craft(j) for j in jobs]
    x_adv = np.concatenate([o[0] for o in outs])
    total = sum(o[1] * len(j[2]) for o, j in zip(outs, jobs))
    return x_adv, total


def build_matrix(attacks, sources, targets, dataset, cfg, workers=1, settings=DEFAULT_AUGMENT):
    """``sources`` and ``targets`` map model names to classifiers."""
    if not attacks or not sources or not targets:
        raise ValueError("attacks, sources and targets must all be non-empty")
    for a in attacks:
        parse_attack(a)
    cells = []
    for src_name, src in sources.items():
        subset = filter_correct(src, dataset)
        for attack in attacks:
            x_adv, evals = craft(attack, src, subset, cfg, workers, settings)
            expected = expected_grad_evals(attack, cfg) * len(subset)
            if evals != expected:
                raise RuntimeError(f"{attack}: counted {evals} gradient queries, expected {expected}")
            for tgt_name, tgt in targets.items():
                rate = success_rate(tgt, x_adv, subset.labels)
                cells.append(Cell(attack, src_name, tgt_name, src_name == tgt_name, len(subset), rate, evals))
    return SuccessMatrix(cells)


def ensemble_source(models, weights=None):
    """Name and fused classifier for an equal-weight (by default) logit ensemble."""
    names = list(models)
    return "ens(" + "+".join(names) + ")", FusedClassifier([models[n] for n in names], weights)


def ensemble_matrix(attacks, members, targets, dataset, cfg, workers=1, settings=DEFAULT_AUGMENT):
    """Attacks crafted on the fused ensemble of ``members``, evaluated on ``targets``
    (typically the adversarially trained checkpoints)."""
    name, fused = ensemble_source(members)
    return build_matrix(attacks, {name: fused}, targets, dataset, cfg, workers, settings)


def _sweep(axis, points_cfg, sources, targets, dataset, workers, settings):
    xs, points = [], []
    for x, attack, cfg in points_cfg:
        if x not in xs:
            xs.append(x)
        for c in build_matrix([attack], sources, targets, dataset, cfg, workers, settings).cells:
            points.append((x, c))
    return SweepResult(axis, xs, points)


def sweep_predictions(sources, targets, dataset, cfg, ks=range(1, 11), attack="pc-fgsm", workers=1,
                      settings=DEFAULT_AUGMENT):  # fmt: skip
    if not parse_attack(attack).pc:
        raise ValueError("a predictions sweep needs a prediction-correction attack")
    plan = [(k, attack, replace(cfg, predictions=k)) for k in ks]
    return _sweep("K", plan, sources, targets, dataset, workers, settings)


def sweep_iterations(attacks, sources, targets, dataset, cfg, ts=range(1, 11), workers=1,
                     settings=DEFAULT_AUGMENT):  # fmt: skip
    plan = [(t, a, replace(cfg, iterations=t)) for t in ts for a in attacks]
    return _sweep("T", plan, sources, targets, dataset, workers, settings)


def realize_budget(attack, budget, cfg):
    """Config that spends exactly ``budget`` gradient queries per example.

    Iterative attacks solve for T (keeping K fixed for PC variants); single-step
    PC-FGSM solves for K; plain FGSM only realizes a budget of one.
    """
    spec = parse_attack(attack)
    if budget < 1:
        raise BudgetError(f"budget must be positive, got {budget}")
    if spec.base == "fgsm":
        if not spec.pc:
            if budget != 1:
                raise BudgetError(f"fgsm always spends one gradient, cannot spend {budget}")
            return cfg
        return replace(cfg, predictions=budget - 1)
    per_iter = expected_grad_evals(attack, replace(cfg, iterations=1))
    if budget % per_iter:
        raise BudgetError(f"{attack} spends {per_iter} gradients per iteration; budget {budget} is not a multiple")
    out = replace(cfg, iterations=budget // per_iter)
    if expected_grad_evals(attack, out) != budget:
        raise BudgetError(f"{attack} cannot spend exactly {budget} gradients")
    return out


def sweep_budget(attacks, budgets, sources, targets, dataset, cfg, workers=1, settings=DEFAULT_AUGMENT):
    plan = [(b, a, realize_budget(a, b, cfg)) for b in budgets for a in attacks]
    return _sweep("budget", plan, sources, targets, dataset, workers, settings)


def _rows(obj):
    if isinstance(obj, SweepResult):
        return [{"axis": obj.axis, "x": x, **asdict(c)} for x, c in obj.points]
    if isinstance(obj, SuccessMatrix):
        return [asdict(c) for c in obj.cells]
    raise TypeError(f"cannot report a {type(obj).__name__}")


def _fmt(key, v):
    if key == "success_rate":
        return f"{v:.4f}"
    if key == "white_box":
        return "true" if v else "false"
    return str(v)


def render_report(obj, fmt="csv"):
    rows = _rows(obj)
    keys = (("axis", "x") if isinstance(obj, SweepResult) else ()) + FIELDS
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(keys)
        for r in rows:
            w.writerow([_fmt(k, r[k]) for k in keys])
        return buf.getvalue()
    if fmt == "json":
        out = [{k: (float(_fmt(k, r[k])) if k == "success_rate" else r[k]) for k in keys} for r in rows]
        return json.dumps(out, indent=1) + "\n"
    raise ValueError(f"unknown report format {fmt!r}")


def emit_report(obj, fmt="csv", path=None):
    """Render ``obj`` and write it to ``path`` when given; the text is returned either way."""
    text = render_report(obj, fmt)
    if path is not None:
        try:
            with open(path, "w", encoding="utf-8", newline="") as fh:
                fh.write(text)
        except OSError as e:
            raise ReportError(f"cannot write report to {path}: {e.strerror or e}") from e
    return text
