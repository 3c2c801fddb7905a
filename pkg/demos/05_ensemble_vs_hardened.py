# Attack the fused logits of three normally trained models and score the
# result on the two FGSM-trained checkpoints.

from pcattack import harness as H
from pcattack.attacks import AttackConfig
from pcattack.zoo import Zoo, corpus

zoo = Zoo()
data = corpus()[1].head(200)
members = zoo.resolve("mlp-2#1,cnn-small#1,cnn-wide#1")
hardened = zoo.resolve("cnn-small#1:adv,cnn-wide#1:adv")

cfg = AttackConfig(epsilon=0.15, iterations=10, predictions=1)
m = H.ensemble_matrix(["ni-fgsm", "pc-ni-fgsm", "si-ti-di-ni-fgsm", "pc-si-ti-di-ni-fgsm"], members, hardened, data, cfg)
print(H.emit_report(m, "csv"))
