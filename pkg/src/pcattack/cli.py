"""Command-line entry point.

Exit status is 0 on success, 1 on a domain error (one ``pcattack: error:`` line
on stderr) and 2 on a usage error.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

import numpy as np

from . import harness
from .attacks import AttackConfig, parse_attack
from .augment import AugmentConfig, DimConfig, SimConfig, TimConfig
from .checkpoint import save_checkpoint
from .data import Dataset, import_idx, load_dataset, make_synthetic, save_dataset
from .models import ModelSpec, TrainConfig, train
from .ode import fgsm_correspondence_demo, order_table
from .zoo import ENV_VAR, Zoo, corpus, default_dir, filename

PUB = "(published setting)"
IMPL = "(implementation default)"
PUBLISHED_EPSILON = 16 / 255  # 16 on a 0..255 scale


class CliError(Exception):
    pass


def _epsilon(text):
    if text.strip().lower() == "published":
        return PUBLISHED_EPSILON
    return float(text)


def _int_list(text):
    """``1..10`` or ``1,2,5``."""
    text = text.strip()
    if ".." in text:
        lo, hi = text.split("..", 1)
        out = list(range(int(lo), int(hi) + 1))
    else:
        out = [int(t) for t in text.split(",") if t.strip()]
    if not out:
        raise argparse.ArgumentTypeError(f"empty range {text!r}")
    return out


def _bool(text):
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"not a boolean: {text!r}")


def _attack_flags(p):
    g = p.add_argument_group("attack settings")
    g.add_argument("--epsilon", type=_epsilon, default=0.3,
                   help=f"L-inf budget in [0,1] pixel units; 'published' gives 16/255 {IMPL}")
    g.add_argument("--alpha", type=float, default=None, help=f"step size; epsilon/iterations when unset {PUB}")
    g.add_argument("--iterations", type=int, default=10, help=f"iterations T {PUB}")
    g.add_argument("--predictions", type=int, default=1, help=f"predictions K {PUB}")
    g.add_argument("--mu", type=float, default=1.0, help=f"momentum decay {PUB}")
    g.add_argument("--dim-p", type=float, default=0.5, help=f"diverse-input transform probability {PUB}")
    g.add_argument("--tim-kernel", type=int, default=7,
                   help=f"translation kernel size, scaled down from 15 for 28-pixel inputs {IMPL}")
    g.add_argument("--sim-copies", type=int, default=5, help=f"scale copies {PUB}")
    g.add_argument("--pc-anchor", choices=("nes", "current"), default="nes",
                   help=f"anchor of PC-NI predictions {IMPL}")
    g.add_argument("--seed", type=int, default=0, help=f"master random seed {IMPL}")
    g.add_argument("--workers", type=int, default=os.cpu_count() or 1,
                   help=f"worker processes; defaults to available CPUs {IMPL}")  # fmt: skip


def _io_flags(p, report=True):
    g = p.add_argument_group("models and data")
    g.add_argument("--checkpoints", type=Path, default=None,
                   help=f"checkpoint directory; falls back to ${ENV_VAR}, then the bundled zoo {IMPL}")
    g.add_argument("--dataset", type=Path, default=None,
                   help=f"ADVD corpus; the bundled 1000-example test split when unset {IMPL}")
    g.add_argument("--count", type=int, default=1000, help=f"examples taken from the corpus {IMPL}")
    if report:
        g.add_argument("--format", choices=("csv", "json"), default="csv", help=f"report format {IMPL}")
        g.add_argument("--out", type=Path, default=None, help=f"report path; stdout when unset {IMPL}")
    g.add_argument("--config", type=Path, default=None,
                   help=f"flat key=value file of flag defaults; explicit flags win {IMPL}")  # fmt: skip


def build_parser():
    top = argparse.ArgumentParser(prog="pcattack", description="Prediction-correction adversarial attacks.")
    sub = top.add_subparsers(dest="command", metavar="command", required=True)
    fmt = argparse.ArgumentDefaultsHelpFormatter

    p = sub.add_parser("dataset-make", help="write a synthetic or imported corpus in ADVD format", formatter_class=fmt)
    p.add_argument("--count", type=int, default=1000, help=f"examples to generate {IMPL}")
    p.add_argument("--seed", type=int, default=0, help=f"generator seed {IMPL}")
    p.add_argument("--idx-images", type=Path, default=None, help=f"import this IDX image file instead {IMPL}")
    p.add_argument("--idx-labels", type=Path, default=None, help=f"IDX label file paired with --idx-images {IMPL}")
    p.add_argument("--out", type=Path, required=True, help="output .advd path")
    p.add_argument("--config", type=Path, default=None, help=f"flat key=value defaults file {IMPL}")

    p = sub.add_parser("train", help="train one classifier and save its checkpoint", formatter_class=fmt)
    p.add_argument("--arch", choices=("mlp-2", "cnn-small", "cnn-wide"), default="cnn-small",
                   help=f"architecture {IMPL}")
    p.add_argument("--seed", type=int, default=1, help=f"initialization and shuffling seed {IMPL}")
    p.add_argument("--epochs", type=int, default=5, help=f"training epochs {IMPL}")
    p.add_argument("--batch-size", type=int, default=32, help=f"minibatch size {IMPL}")
    p.add_argument("--lr", type=float, default=0.05, help=f"SGD learning rate {IMPL}")
    p.add_argument("--adversarial-epsilon", type=float, default=None,
                   help=f"train on FGSM examples at this budget {IMPL}")
    p.add_argument("--dataset", type=Path, default=None, help=f"ADVD training corpus; bundled split when unset {IMPL}")
    p.add_argument("--checkpoints", type=Path, default=None, help=f"directory for the default output name {IMPL}")
    p.add_argument("--out", type=Path, default=None, help=f"checkpoint path {IMPL}")
    p.add_argument("--config", type=Path, default=None, help=f"flat key=value defaults file {IMPL}")

    p = sub.add_parser("attack", help="craft adversarial examples against one source model", formatter_class=fmt)
    p.add_argument("--attack", default="pc-fgsm", help=f"attack id, e.g. pc-si-ti-di-ni-fgsm {IMPL}")
    p.add_argument("--source", default="cnn-small#1", help=f"source model reference {IMPL}")
    p.add_argument("--save-adv", type=Path, default=None, help=f"write adversarial examples as ADVD {IMPL}")
    _attack_flags(p)
    _io_flags(p)

    p = sub.add_parser("eval", help="success-rate matrix of attacks x source models x target models", formatter_class=fmt)
    p.add_argument("--attacks", default="fgsm,pc-fgsm", help=f"comma-separated attack ids {IMPL}")
    p.add_argument("--source", default="cnn-small#1", help=f"comma-separated source references {IMPL}")
    p.add_argument("--targets", default="all", help=f"comma-separated targets or 'all' {IMPL}")
    p.add_argument("--ensemble", action="store_true",
                   help=f"fuse the sources into one equal-weight ensemble {IMPL}")
    _attack_flags(p)
    _io_flags(p)

    p = sub.add_parser("sweep", help="success rate against K, T or gradient budget", formatter_class=fmt)
    p.add_argument("--mode", choices=("predictions", "iterations", "budget"), default="predictions",
                   help=f"swept quantity {IMPL}")
    p.add_argument("--k", type=_int_list, default=list(range(1, 11)), help=f"K values for predictions mode {PUB}")
    p.add_argument("--t", type=_int_list, default=list(range(1, 11)), help=f"T values for iterations mode {PUB}")
    p.add_argument("--budgets", type=_int_list, default=[2, 4, 6, 8, 10],
                   help=f"gradient budgets for budget mode {PUB}")
    p.add_argument("--attacks", default=None,
                   help=f"comma-separated attack ids; defaults depend on the mode {IMPL}")
    p.add_argument("--source", default="cnn-small#1", help=f"comma-separated source references {IMPL}")
    p.add_argument("--targets", default="all", help=f"comma-separated targets or 'all' {IMPL}")
    _attack_flags(p)
    _io_flags(p)

    p = sub.add_parser("ode-demo", help="convergence-order table, or the Euler/FGSM correspondence check", formatter_class=fmt)
    p.add_argument("--demo", choices=("orders", "correspondence"), default="orders", help=f"what to print {IMPL}")
    p.add_argument("--rate", type=float, default=-2.0, help=f"decay rate of the test equation {IMPL}")
    p.add_argument("--h-exponents", type=_int_list, default=[3, 4, 5, 6, 7],
                   help=f"step sizes 2**-e {IMPL}")
    p.add_argument("--source", default="cnn-small#1", help=f"model for the correspondence check {IMPL}")
    p.add_argument("--epsilon", type=_epsilon, default=0.3, help=f"Euler step for the correspondence check {IMPL}")
    _io_flags(p, report=False)
    return top, sub


def _read_config(path):
    values = {}
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as e:
        raise CliError(f"cannot read config {path}: {e.strerror or e}") from e
    for n, line in enumerate(lines, 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise CliError(f"{path}:{n}: expected key=value")
        key, val = line.split("=", 1)
        values[key.strip().lstrip("-").replace("-", "_")] = val.strip()
    return values


def _apply_config(subparser, values):
    actions = {a.dest: a for a in subparser._actions}
    defaults = {}
    for key, raw in values.items():
        a = actions.get(key)
        if a is None or key in ("help", "config"):
            subparser.error(f"unknown config key {key!r}")
        if isinstance(a, argparse._StoreTrueAction):
            defaults[key] = _bool(raw)
        elif a.type is not None:
            defaults[key] = a.type(raw)
        else:
            defaults[key] = raw
        if a.choices is not None and defaults[key] not in a.choices:
            subparser.error(f"config value {raw!r} not allowed for {key}")
        a.required = False
    subparser.set_defaults(**defaults)


def parse_args(argv):
    top, sub = build_parser()
    args = top.parse_args(argv)
    if getattr(args, "config", None) is not None:
        values = _read_config(args.config)
        top, sub = build_parser()
        _apply_config(sub.choices[args.command], values)
        args = top.parse_args(argv)
    return args


def _attack_config(args):
    return AttackConfig(epsilon=args.epsilon, step_alpha=args.alpha, iterations=args.iterations,
                        predictions=args.predictions, momentum_mu=args.mu, rng_seed=args.seed,
                        pc_anchor=args.pc_anchor)  # fmt: skip


def _settings(args):
    return AugmentConfig(dim=DimConfig(probability=args.dim_p), tim=TimConfig(kernel_size=args.tim_kernel),
                         sim=SimConfig(copies=args.sim_copies))  # fmt: skip


def _zoo(args):
    return Zoo(args.checkpoints)


def _corpus(args):
    ds = load_dataset(args.dataset) if args.dataset is not None else corpus()[1]
    if args.count < 1:
        raise CliError("--count must be positive")
    return ds.head(args.count)


def _report(obj, args):
    text = harness.emit_report(obj, args.format, args.out)
    if args.out is None:
        sys.stdout.write(text)


def cmd_dataset_make(args):
    if (args.idx_images is None) != (args.idx_labels is None):
        raise CliError("--idx-images and --idx-labels go together")
    if args.idx_images is not None:
        ds = import_idx(args.idx_images, args.idx_labels, limit=args.count)
    else:
        ds = make_synthetic(args.count, args.seed)
    save_dataset(ds, args.out)
    print(f"wrote {len(ds)} examples ({ds.provenance}) to {args.out}")


def cmd_train(args):
    spec = ModelSpec(args.arch, init_seed=args.seed)
    cfg = TrainConfig(epochs=args.epochs, batch_size=args.batch_size, learning_rate=args.lr, rng_seed=args.seed,
                      adversarial_epsilon=args.adversarial_epsilon)  # fmt: skip
    if args.dataset is not None:
        train_set, test_set = load_dataset(args.dataset), None
    else:
        train_set, test_set = corpus()
    cp = train(spec, train_set, cfg, test_set)
    ref = f"{args.arch}#{args.seed}{':adv' if args.adversarial_epsilon else ''}"
    out = args.out or Path(args.checkpoints or default_dir()) / filename(ref)
    save_checkpoint(cp, out)
    print(f"{ref}: train acc {cp.train_accuracy:.4f}, test acc {cp.test_accuracy:.4f} -> {out}")


def cmd_attack(args):
    zoo = _zoo(args)
    model = zoo.model(args.source)
    subset = harness.filter_correct(model, _corpus(args))
    cfg = _attack_config(args)
    parse_attack(args.attack)
    x_adv, evals = harness.craft(args.attack, model, subset, cfg, args.workers, _settings(args))
    if args.save_adv is not None:
        save_dataset(Dataset(np.clip(x_adv, 0.0, 1.0), subset.labels, "imported"), args.save_adv)
    rate = harness.success_rate(model, x_adv, subset.labels)
    cell = harness.Cell(args.attack, args.source, args.source, True, len(subset), rate, evals)
    _report(harness.SuccessMatrix([cell]), args)


def cmd_eval(args):
    zoo = _zoo(args)
    attacks = [a.strip() for a in args.attacks.split(",") if a.strip()]
    sources, targets = zoo.resolve(args.source), zoo.resolve(args.targets)
    if not targets:
        raise CliError(f"no target checkpoints found in {zoo.directory}")
    data, cfg = _corpus(args), _attack_config(args)
    if args.ensemble:
        m = harness.ensemble_matrix(attacks, sources, targets, data, cfg, args.workers, _settings(args))
    else:
        m = harness.build_matrix(attacks, sources, targets, data, cfg, args.workers, _settings(args))
    _report(m, args)


SWEEP_ATTACKS = {
    "predictions": ["pc-fgsm"],
    "iterations": ["i-fgsm", "pc-i-fgsm", "mi-fgsm", "pc-mi-fgsm", "ni-fgsm", "pc-ni-fgsm"],
    "budget": ["i-fgsm", "pc-i-fgsm", "mi-fgsm", "pc-mi-fgsm", "ni-fgsm", "pc-ni-fgsm"],
}


def cmd_sweep(args):
    zoo = _zoo(args)
    attacks = SWEEP_ATTACKS[args.mode] if args.attacks is None else [a.strip() for a in args.attacks.split(",")]
    sources, targets = zoo.resolve(args.source), zoo.resolve(args.targets)
    data, cfg, st = _corpus(args), _attack_config(args), _settings(args)
    if args.mode == "predictions":
        parts = [harness.sweep_predictions(sources, targets, data, cfg, args.k, a, args.workers, st) for a in attacks]
        res = harness.SweepResult("K", parts[0].xs, [p for r in parts for p in r.points])
    elif args.mode == "iterations":
        res = harness.sweep_iterations(attacks, sources, targets, data, cfg, args.t, args.workers, st)
    else:
        res = harness.sweep_budget(attacks, args.budgets, sources, targets, data, cfg, args.workers, st)
    _report(res, args)


def cmd_ode_demo(args):
    if args.demo == "orders":
        rows = order_table(tuple(2.0**-e for e in args.h_exponents), rate=args.rate)
        lines = ["scheme,h,error,slope"]
        lines += [f"{s},{h!r},{e:.6e},{'nan' if sl is None else f'{sl:.4f}'}" for s, h, e, sl in rows]
    else:
        model = _zoo(args).model(args.source)
        data = _corpus(args)
        lines = ["index,max_abs_diff,bit_identical"]
        for i in range(len(data)):
            a, b = fgsm_correspondence_demo(model, data.images[i : i + 1], data.labels[i : i + 1], args.epsilon)
            lines.append(f"{data.indices[i]},{float(np.max(np.abs(a - b))):.3e},{str(np.array_equal(a, b)).lower()}")
    sys.stdout.write("\n".join(lines) + "\n")


COMMANDS = {
    "dataset-make": cmd_dataset_make,
    "train": cmd_train,
    "attack": cmd_attack,
    "eval": cmd_eval,
    "sweep": cmd_sweep,
    "ode-demo": cmd_ode_demo,
}


def main(argv=None):
    try:
        args = parse_args(sys.argv[1:] if argv is None else argv)
    except SystemExit as e:
        return 2 if e.code not in (0, None) else 0
    except CliError as e:
        print(f"pcattack: error: {e}", file=sys.stderr)
        return 2
    try:
        COMMANDS[args.command](args)
    except (CliError, ValueError, LookupError, OSError, RuntimeError, ArithmeticError) as e:
        msg = " ".join(str(e).split())
        print(f"pcattack: error: {type(e).__name__}: {msg}", file=sys.stderr)
        return 1
    return 0
