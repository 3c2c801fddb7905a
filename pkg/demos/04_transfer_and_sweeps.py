# A small transfer matrix and the three sweeps, written as CSV. At eps=0.3
# every attack saturates on these digits, so the sweeps run at eps=0.08.

from pathlib import Path

from pcattack import harness as H
from pcattack.attacks import AttackConfig
from pcattack.zoo import Zoo, corpus

out = Path("demo_reports")
out.mkdir(exist_ok=True)

zoo = Zoo()
data = corpus()[1].head(300)
sources = {"cnn-small#1": zoo.model("cnn-small#1")}
targets = zoo.resolve("mlp-2#1,cnn-small#1,cnn-small#2,cnn-wide#1")
cfg = AttackConfig(epsilon=0.08, iterations=10, predictions=1)

m = H.build_matrix(["fgsm", "pc-fgsm", "i-fgsm", "pc-i-fgsm"], sources, targets, data, cfg)
print(H.emit_report(m, "csv", out / "matrix.csv"))

sw = H.sweep_predictions(sources, targets, data, cfg, ks=range(0, 6))
H.emit_report(sw, "csv", out / "sweep_k.csv")
for key, series in sw.series().items():
    print(key[2], " ".join(f"{r:.3f}" for r in series))

# same gradient budget: PC with K=1 runs half as many iterations
sb = H.sweep_budget(["i-fgsm", "pc-i-fgsm"], [2, 4, 6], sources, {"cnn-wide#1": targets["cnn-wide#1"]}, data, cfg)
H.emit_report(sb, "csv", out / "sweep_budget.csv")
for x, c in sb.points:
    print(f"budget {x}: {c.attack:10s} {c.success_rate:.4f}")
