# Euler, trapezoid and improved Euler on u' = -2u, then the observation
# that one Euler step along the loss gradient is unsigned FGSM.

import math

import numpy as np

from pcattack.ode import OdeProblem, convergence_order, euler, fgsm_correspondence_demo, improved_euler, trapezoid
from pcattack.zoo import Zoo, corpus

p = OdeProblem(lambda t, u: -2.0 * u, 0.0, np.array(1.0), 1.0, 8)
exact = math.exp(-2.0)
for scheme in (euler, improved_euler, trapezoid):
    print(f"{scheme.__name__:15s} u(1) = {float(scheme(p).final):.6f}   exact {exact:.6f}")

hs = [1 / 8, 1 / 16, 1 / 32, 1 / 64, 1 / 128]
for scheme in (euler, improved_euler, trapezoid):
    slope = convergence_order(scheme, p, lambda t: math.exp(-2.0 * t), hs)
    print(f"{scheme.__name__:15s} fitted order {slope:.3f}")

# improved Euler predicts with Euler and corrects with the trapezoid rule;
# the attack variants reuse that shape with sign steps in place of h * f

model = Zoo().model("cnn-small#1")
test = corpus()[1]
x, y = test.images[:4], test.labels[:4]
step, fgsm_like = fgsm_correspondence_demo(model, x, y, 0.1)
print("euler step == x + eps * grad:", np.array_equal(step, fgsm_like))
