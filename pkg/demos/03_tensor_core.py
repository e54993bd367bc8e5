# ---
# jupyter:
#   jupytext:
#     formats: py:percent
#   kernelspec:
#     display_name: Python 3
#     language: python
#     name: python3
# ---

# %% [markdown]
# # A small reverse-mode autodiff core
#
# Tensors record the operations applied to them; `backward` replays the tape
# in reverse and accumulates vector-Jacobian products.

# %%
import numpy as np

from holofocus import tensor as T
from holofocus.tensor import Tensor
from holofocus.training import Adam, log_cosh_loss

x = Tensor(np.array([0.5, -2.0, 30.0]), requires_grad=True)
log_cosh_loss(x, np.zeros(3)).backward()
print("d/dx sum log cosh x =", x.grad, " tanh x =", np.tanh(x.data))

# %% [markdown]
# ## Checking a gradient by central differences

# %%
rng = np.random.default_rng(0)
a = Tensor(rng.standard_normal((2, 3, 6, 6)), requires_grad=True)
k = Tensor(rng.standard_normal((4, 3, 3, 3)), requires_grad=True)
w = rng.standard_normal((2, 4, 3, 3))
T.sum_(T.conv2d(a, k, None, 2, 1) * Tensor(w)).backward()

h = 1e-5
i = (1, 2, 0, 1)
kp, km = k.data.copy(), k.data.copy()
kp[i] += h
km[i] -= h
f = lambda kk: float(np.sum(T.conv2d(Tensor(a.data), Tensor(kk), None, 2, 1).data * w))  # noqa: E731
print("analytic", k.grad[i], " numeric", (f(kp) - f(km)) / (2 * h))

# %% [markdown]
# ## Fitting a line with Adam

# %%
xs = np.linspace(-1, 1, 50)
ys = 3.0 * xs - 0.5 + 0.05 * rng.standard_normal(50)
wt, bt = Tensor(np.zeros(1), requires_grad=True), Tensor(np.zeros(1), requires_grad=True)
opt = Adam([wt, bt], lr=0.05)
for step in range(300):
    opt.zero_grad()
    loss = log_cosh_loss(Tensor(xs) * wt + bt, ys, reduction="mean")
    loss.backward()
    opt.step()
print(f"slope {wt.data[0]:.3f}, intercept {bt.data[0]:.3f}, loss {loss.item():.5f}")
