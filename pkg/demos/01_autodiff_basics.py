"""Tape-based autodiff in five minutes.

Builds a tiny computation, backpropagates it, and compares the analytic
gradients against central finite differences.
"""

import numpy as np

from dfnas import tensor as tz
from dfnas.tensor import SGD, Tape, Tensor

print("== forward + backward through a small graph ==")
rng = np.random.default_rng(0)
x = Tensor(rng.normal(size=(4, 3)), requires_grad=True)
w = Tensor(rng.normal(size=(3, 2)), requires_grad=True)
labels = np.array([0, 1, 1, 0])

tape = Tape()
logits = tz.matmul(tz.relu(x, tape), w, tape)
loss = tz.softmax_cross_entropy(logits, labels, tape)
tape.backward(loss)
print(f"loss = {loss.item():.6f}")
print(f"dL/dw row 0 = {w.grad[0].round(6)}")

print("\n== gradient check against finite differences ==")
h = 1e-5
fd = np.zeros_like(w.data)
for i in range(w.size):
    flat = w.data.ravel()
    orig = flat[i]
    flat[i] = orig + h
    up = tz.softmax_cross_entropy(tz.matmul(tz.relu(Tensor(x.data)), Tensor(w.data)), labels).item()
    flat[i] = orig - h
    down = tz.softmax_cross_entropy(tz.matmul(tz.relu(Tensor(x.data)), Tensor(w.data)), labels).item()
    flat[i] = orig
    fd.ravel()[i] = (up - down) / (2 * h)
print(f"max |analytic - fd| = {np.abs(w.grad - fd).max():.2e}")

print("\n== ten SGD steps on f(w) = (w - 3)^2 ==")
p = Tensor([0.0], requires_grad=True)
opt = SGD([p], lr=0.1)
for step in range(10):
    p.grad = 2.0 * (p.data - 3.0)
    opt.step()
    if step % 3 == 0 or step == 9:
        print(f"  step {step}: w = {p.data[0]:.4f}")
print("closed form predicts w = 3 - 3 * 0.8^10 =", round(3 - 3 * 0.8**10, 4))
