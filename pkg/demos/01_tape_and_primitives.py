# A tour of the tape: record a tiny network, pull gradients back, and
# check them against central differences.

import numpy as np

from pcattack import autodiff as ad
from pcattack.models import Classifier, ModelSpec

rng = np.random.default_rng(0)

# a 1x6x6 "image" through conv -> relu -> pool -> dense
x = rng.uniform(size=(1, 1, 6, 6))
w_conv = rng.normal(size=(2, 1, 3, 3))
w_dense = rng.normal(size=(18, 3))

tape = ad.GradientTape()
xv = tape.watch(x)
h = ad.maxpool2(ad.relu(ad.conv2d(xv, w_conv)))
logits = ad.dense(ad.flatten(h), w_dense)
loss = ad.softmax_cross_entropy(logits, np.array([1]))
(g,) = tape.gradient(loss, [xv])
print("loss", float(loss.value))
print("input gradient shape", g.shape)

# the tape is single use
try:
    tape.gradient(loss, [xv])
except ad.TapeConsumedError as e:
    print("second sweep refused:", e)

# the three elementwise pieces every attack is built from
t = np.array([-0.5, 0.0, 2.0])
print("sign", ad.sign(t))
print("clip_ball", ad.clip_ball(np.array([0.95]), np.array([1.30]), 0.2, 0.0, 1.0))
print("l1_normalize", ad.l1_normalize(np.array([3.0, -1.0])))

# finite differences on an untrained mlp: smooth almost everywhere, so
# the agreement is tight
model = Classifier(ModelSpec("mlp-2", init_seed=1))
img = rng.uniform(0.2, 0.8, size=(1, 28, 28))
exact = ad.loss_gradient(model, img, 3)
approx = ad.finite_diff_gradient(model, img, 3, h=1e-4)
print("mlp-2 max relative error", np.max(np.abs(exact - approx)) / np.max(np.abs(approx)))
