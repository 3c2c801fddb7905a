# PC-FGSM on a handful of digits, one prediction at a time.

import numpy as np

from pcattack import autodiff as ad
from pcattack.attacks import AttackConfig, fgsm, i_fgsm, pc_fgsm, pc_iterative
from pcattack.models import predict
from pcattack.zoo import Zoo, corpus

zoo = Zoo()
src, other = zoo.model("cnn-small#1"), zoo.model("cnn-wide#1")
test = corpus()[1]
x, y = test.images[:200], test.labels[:200]

# watch the predicted gradient accumulate: each addend carries 1/K of L1 mass
cfg = AttackConfig(epsilon=0.1, predictions=3)


def show(k, x_pre, g_pre):
    mass = np.abs(g_pre).reshape(len(g_pre), -1).sum(1)
    print(f"  after prediction {k}: |G_pre|_1 = {mass.max():.4f}, x_pre moved {np.abs(x_pre - x).max():.3f}")


res = pc_fgsm(src, x, y, cfg, on_predict=show)
print("gradient queries per example:", res.grad_evals)

# small epsilon keeps the comparison interesting
for eps in (0.05, 0.1):
    c = AttackConfig(epsilon=eps, predictions=1)
    a, b = fgsm(src, x, y, c).x_adv, pc_fgsm(src, x, y, c).x_adv
    print(f"eps={eps}: white-box fgsm {np.mean(predict(src, a) != y):.3f}  pc-fgsm {np.mean(predict(src, b) != y):.3f}"
          f" | transfer fgsm {np.mean(predict(other, a) != y):.3f}  pc-fgsm {np.mean(predict(other, b) != y):.3f}")

# the degenerate corners collapse exactly
k0 = AttackConfig(epsilon=0.1, predictions=0)
print("PC-FGSM(K=0) == FGSM:", np.array_equal(pc_fgsm(src, x, y, k0).x_adv, fgsm(src, x, y, k0).x_adv))
one = AttackConfig(epsilon=0.1, iterations=1, step_alpha=0.1)
print("I-FGSM(T=1) == FGSM:", np.array_equal(i_fgsm(src, x, y, one).x_adv, fgsm(src, x, y, one).x_adv))
print("PC-I(T=1) == PC-FGSM:", np.array_equal(pc_iterative("i", src, x, y, one).x_adv, pc_fgsm(src, x, y, one).x_adv))

# every result stays in the ball
print("max deviation", np.abs(res.x_adv - x).max(), "<= eps", cfg.epsilon + 2.0**-20)
print("clip is a projection:", np.array_equal(ad.clip_ball(x, res.x_adv, 0.1), res.x_adv))
