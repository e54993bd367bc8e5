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
# # Three tiny regressors
#
# Each network maps one 128x128 hologram ROI to a distance in um: a small
# vision transformer, a small Swin transformer and a VGG-style CNN.

# %%
import numpy as np

from holofocus.models import AttentionParams, build, msa, shifted_window_mask
from holofocus.tensor import Tensor

for arch in ("tswint", "tvgg", "tvit"):
    print(f"{arch:7s} {build(arch).count_params():>10,} parameters")

# %% [markdown]
# ## Attention
#
# Rows of the attention matrix are probability vectors, and permuting the
# tokens permutes the output the same way.

# %%
rng = np.random.default_rng(0)
p = AttentionParams(Tensor(rng.standard_normal((16, 48))), Tensor(rng.standard_normal((16, 16))), heads=4)
x = rng.standard_normal((1, 9, 16))
out, attn = msa(Tensor(x), p, return_attention=True)
perm = rng.permutation(9)
print("row sums", np.round(attn.data.sum(-1)[0, 0], 12))
print("equivariant", np.allclose(msa(Tensor(x[:, perm]), p).data, out.data[:, perm]))

# %% [markdown]
# ## Shifted windows
#
# After a cyclic shift, tokens that wrapped around the border share a window
# with tokens they were never adjacent to.  The mask removes those pairs.

# %%
mask = shifted_window_mask(8, 8, 4, 2)
for w in range(4):
    print(f"window {w}: {int(np.isneginf(mask[w]).sum())} of {mask[w].size} pairs masked")

# %% [markdown]
# ## One prediction per ROI

# %%
roi = rng.random((128, 128)).astype(np.float32)
for arch in ("tvit", "tswint", "tvgg"):
    print(arch, build(arch).predict(roi))
