import math

import numpy as np
import pytest

from holofocus import tensor as T
from holofocus.models import (
    AttentionParams, ModelSpec, SwinConfig, TSwinT, TViT, VggConfig, ViTConfig, build, load_model,
    msa, patch_embed, patch_merge, relative_position_index, shifted_window_mask, sw_msa,
    window_partition, window_reverse, w_msa,
)
from holofocus.tensor import ShapeError, Tensor
from holofocus.training import log_cosh_loss

from conftest import fd_check, fd_check_params

TINY_VIT = ViTConfig(depth=1, heads=2, patch=8, hidden=16, mlp_dim=32, image=32)
TINY_SWIN = SwinConfig(embed=8, depths=(2, 2), heads=(2, 2), window=4, patch=4, mlp_ratio=2, image=32)
TINY_VGG = VggConfig(blocks=((4,), (6, 6)), image=16)


def attn_params(rng, dim, heads, scale=0.5):
    return AttentionParams(Tensor(rng.standard_normal((dim, 3 * dim)) * scale),
                           Tensor(rng.standard_normal((dim, dim)) * scale), heads)


def reference_msa(x, p: AttentionParams):
    """Per-head loop straight from the definition, using the per-head matrices."""
    d = p.head_dim
    heads = []
    for i in range(p.heads):
        q, k, v = (x @ p.head_matrix(w, i) for w in "qkv")
        s = q @ k.T / math.sqrt(d)
        a = np.exp(s - s.max(1, keepdims=True))
        a /= a.sum(1, keepdims=True)
        heads.append(a @ v)
    return np.concatenate(heads, axis=1) @ p.w_out.data


# --- MSA ---------------------------------------------------------------------------

def test_msa_two_token_example():
    eye = np.eye(2)
    p = AttentionParams.from_heads([eye], [eye], [eye], eye)
    out, attn = msa(Tensor(np.eye(2)[None]), p, return_attention=True)
    np.testing.assert_allclose(attn.data[0, 0], [[0.6698, 0.3302], [0.3302, 0.6698]], atol=5e-5)
    np.testing.assert_allclose(out.data[0, 0], [0.6698, 0.3302], atol=5e-5)


def test_msa_single_token(rng):
    p = attn_params(rng, 8, 2)
    x = rng.standard_normal((1, 1, 8))
    out, attn = msa(Tensor(x), p, return_attention=True)
    np.testing.assert_array_equal(attn.data, np.ones((1, 2, 1, 1)))
    v = np.concatenate([x[0] @ p.head_matrix("v", i) for i in range(2)], axis=1)
    np.testing.assert_allclose(out.data[0], v @ p.w_out.data, atol=1e-12)


def test_msa_matches_per_head_definition(rng):
    p = attn_params(rng, 12, 3)
    x = rng.standard_normal((2, 7, 12))
    out = msa(Tensor(x), p).data
    for b in range(2):
        np.testing.assert_allclose(out[b], reference_msa(x[b], p), atol=1e-12)


def test_attention_row_stochastic_and_equivariant(rng):
    p = attn_params(rng, 16, 4, scale=2.0)
    x = rng.standard_normal((3, 9, 16))
    out, attn = msa(Tensor(x), p, return_attention=True)
    assert np.abs(attn.data.sum(-1) - 1).max() < 1e-10
    perm = rng.permutation(9)
    np.testing.assert_allclose(msa(Tensor(x[:, perm]), p).data, out.data[:, perm], atol=1e-12)


def test_msa_errors(rng):
    p = attn_params(rng, 8, 2)
    with pytest.raises(ShapeError):
        msa(Tensor(np.zeros((1, 0, 8))), p)
    with pytest.raises(ShapeError):
        msa(Tensor(np.zeros((1, 3, 6))), p)
    with pytest.raises(ShapeError):
        AttentionParams(Tensor(np.zeros((6, 18))), Tensor(np.zeros((6, 6))), 4)


# --- windows -------------------------------------------------------------------------

def test_w_msa_locality_bit_exact(rng):
    p = attn_params(rng, 8, 2)
    x = rng.standard_normal((1, 8, 8, 8))
    base = w_msa(Tensor(x), p, 4).data
    y = x.copy()
    y[0, 1, 2] += 5.0  # window (0, 0)
    out = w_msa(Tensor(y), p, 4).data
    assert not np.array_equal(out[0, :4, :4], base[0, :4, :4])
    np.testing.assert_array_equal(out[0, 4:], base[0, 4:])
    np.testing.assert_array_equal(out[0, :4, 4:], base[0, :4, 4:])


def test_partition_shift_roundtrip(rng):
    x = Tensor(rng.standard_normal((2, 8, 12, 3)))
    rolled = T.roll(x, (-2, -2), (1, 2))
    back = T.roll(window_reverse(window_partition(rolled, 4), 4, 8, 12), (2, 2), (1, 2))
    np.testing.assert_array_equal(back.data, x.data)


def brute_force_allowed(h, w, window, shift):
    """For each shifted window: may token a attend to token b?  Yes iff they sat
    side by side in the original map with no wrap-around between them."""
    out = []
    for wy in range(h // window):
        for wx in range(w // window):
            cells = [(wy * window + i, wx * window + j) for i in range(window) for j in range(window)]
            orig = [((r + shift) % h, (c + shift) % w) for r, c in cells]
            allowed = np.zeros((len(cells), len(cells)), dtype=bool)
            for a in range(len(cells)):
                for b in range(len(cells)):
                    dr_shift = cells[a][0] - cells[b][0]
                    dc_shift = cells[a][1] - cells[b][1]
                    allowed[a, b] = (orig[a][0] - orig[b][0] == dr_shift and
                                     orig[a][1] - orig[b][1] == dc_shift)
            out.append(allowed)
    return np.stack(out)


def test_shifted_mask_matches_pair_enumeration():
    mask = shifted_window_mask(8, 8, 4, 2)
    oracle = brute_force_allowed(8, 8, 4, 2)
    np.testing.assert_array_equal(mask == 0, oracle)
    assert np.all(np.isneginf(mask[~oracle]))
    assert (~oracle).sum() > 0 and oracle[0].all()  # the top-left window never wraps


def test_sw_msa_matches_brute_force_attention(rng):
    """Token t attends exactly to the unwrapped members of its shifted window."""
    h = w = 8
    win, shift = 4, 2
    p = attn_params(rng, 6, 1)
    x = rng.standard_normal((1, h, w, 6))
    out = sw_msa(Tensor(x), p, win).data[0]
    flat = x[0].reshape(-1, 6)
    q, k, v = (flat @ p.head_matrix(c, 0) for c in "qkv")
    ref = np.zeros_like(flat)
    for t in range(h * w):
        r, c = divmod(t, w)
        rs, cs = (r - shift) % h, (c - shift) % w  # position after the cyclic shift
        peers = []
        for s in range(h * w):
            r2, c2 = divmod(s, w)
            rs2, cs2 = (r2 - shift) % h, (c2 - shift) % w
            same_window = rs // win == rs2 // win and cs // win == cs2 // win
            if same_window and r - r2 == rs - rs2 and c - c2 == cs - cs2:
                peers.append(s)
        logits = q[t] @ k[peers].T / math.sqrt(6)
        a = np.exp(logits - logits.max())
        ref[t] = (a / a.sum()) @ v[peers]
    np.testing.assert_allclose(out.reshape(-1, 6), ref @ p.w_out.data, atol=1e-12)


def test_window_errors(rng):
    p = attn_params(rng, 4, 1)
    with pytest.raises(ShapeError):
        w_msa(Tensor(np.zeros((1, 6, 8, 4))), p, 4)
    with pytest.raises(ValueError):
        w_msa(Tensor(np.zeros((1, 8, 8, 4))), p, 4, shift=1)


def test_relative_position_index_range():
    idx = relative_position_index(4)
    assert idx.shape == (16, 16) and idx.min() == 0 and idx.max() == 48
    assert np.all(np.diag(idx) == 24)


# --- patches ------------------------------------------------------------------------------

def test_patch_embed_counts(rng):
    img = Tensor(rng.random((1, 128, 128)))
    assert patch_embed(img, 16, Tensor(np.zeros((256, 8)))).shape == (1, 64, 8)
    assert patch_embed(img, 4, Tensor(np.zeros((16, 8)))).shape == (1, 1024, 8)
    zero = patch_embed(Tensor(np.zeros((1, 32, 32, 1))), 8, Tensor(rng.standard_normal((64, 5))),
                       Tensor(np.zeros(5)))
    assert np.all(zero.data == 0)
    with pytest.raises(ShapeError):
        patch_embed(Tensor(np.zeros((1, 30, 32))), 8, Tensor(np.zeros((64, 5))))


def test_patch_embed_is_row_major(rng):
    img = rng.random((1, 16, 16))
    w = Tensor(np.eye(64))
    tok = patch_embed(Tensor(img), 8, w).data[0]
    np.testing.assert_array_equal(tok[1], img[0, :8, 8:].ravel())
    np.testing.assert_array_equal(tok[2], img[0, 8:, :8].ravel())


def test_patch_merge_shapes_and_uniformity(rng):
    def merge(x, c):
        return patch_merge(x, Tensor(np.ones(4 * c)), Tensor(np.zeros(4 * c)),
                           Tensor(rng.standard_normal((4 * c, 2 * c))))

    x = Tensor(rng.standard_normal((1, 32, 32, 32)))
    y = merge(x, 32)
    assert y.shape == (1, 16, 16, 64)
    y = merge(merge(y, 64), 128)
    assert y.shape == (1, 4, 4, 256)
    u = np.broadcast_to(rng.standard_normal(8), (1, 4, 4, 8)).copy()
    out = merge(Tensor(u), 8).data
    np.testing.assert_allclose(out, np.broadcast_to(out[:, :1, :1], out.shape), atol=1e-12)
    with pytest.raises(ShapeError):
        merge(Tensor(np.zeros((1, 5, 4, 8))), 8)


# --- whole models --------------------------------------------------------------------------

def test_parameter_counts_and_order():
    counts = {a: build(a).count_params() for a in ("tvit", "tswint", "tvgg")}
    for arch, target in (("tvgg", 3e6), ("tvit", 4e6), ("tswint", 2.7e6)):
        assert abs(counts[arch] - target) <= 0.2 * target, (arch, counts[arch])
    assert counts["tswint"] < counts["tvgg"] < counts["tvit"]


def test_swin_geometry():
    c = SwinConfig()
    sides = [c.image // c.patch >> s for s in range(4)]
    assert sides == [32, 16, 8, 4]
    assert [c.embed << s for s in range(4)] == [32, 64, 128, 256]


@pytest.mark.parametrize("arch", ["tvit", "tswint", "tvgg"])
def test_forward_deterministic_and_shaped(arch, rng):
    roi = rng.random((128, 128, 1))
    a, b = build(arch, seed=3), build(arch, seed=3)
    for k in a.params:
        np.testing.assert_array_equal(a.params[k].data, b.params[k].data)
    ya = a.predict(roi[..., 0])
    with T.no_grad():
        yb = b.forward(roi)
    assert ya.shape == (1,) and np.isfinite(ya).all()
    np.testing.assert_array_equal(ya, yb.data)
    with pytest.raises(ShapeError):
        a.forward(rng.random((1, 64, 64)))


def test_different_seed_different_params():
    a, b = build("tvit", 0), build("tvit", 1)
    assert not np.array_equal(a.params["head.w"].data, b.params["head.w"].data)


def test_spec_json_roundtrip():
    spec = ModelSpec("tswint", TINY_SWIN, 4, 1.5, 2.0, "float64")
    assert ModelSpec.from_json(spec.to_json()) == spec
    with pytest.raises(ValueError):
        ModelSpec("alexnet")
    with pytest.raises(TypeError):
        ModelSpec("tvit", TINY_SWIN)
    with pytest.raises(ValueError):
        SwinConfig(window=3)


def test_save_load_roundtrip(tmp_path, rng):
    m = build(ModelSpec("tvit", TINY_VIT, 2, 10.0, 3.0))
    m.save(tmp_path / "m.tnsr")
    back = load_model(tmp_path / "m.tnsr")
    assert back.spec == m.spec
    x = rng.random((3, 32, 32))
    np.testing.assert_array_equal(back.predict(x), m.predict(x))


def test_astype_switches_precision(rng):
    m = build(ModelSpec("tvgg", TINY_VGG))
    x = rng.random((2, 16, 16))
    y32 = m.predict(x)
    m.astype("float64")
    assert all(p.dtype == np.float64 for p in m.parameters())
    np.testing.assert_allclose(m.predict(x), y32, rtol=1e-4)


def test_output_affine(rng):
    x = rng.random((2, 32, 32))
    plain = build(ModelSpec("tvit", TINY_VIT, 0)).predict(x)
    moved = build(ModelSpec("tvit", TINY_VIT, 0, 12.0, 4.0)).predict(x)
    np.testing.assert_allclose(moved, 12.0 + 4.0 * plain, rtol=1e-5)


# --- gradient checks at double precision ---------------------------------------------------

def test_grad_msa_block(rng):
    x = rng.standard_normal((2, 5, 8))
    wq, wo, bias = rng.standard_normal((8, 24)) * 0.5, rng.standard_normal((8, 8)) * 0.5, \
        rng.standard_normal((2, 5, 5))
    assert fd_check(lambda a, q, o, b: msa(a, AttentionParams(q, o, 2), b), [x, wq, wo, bias]) < 1e-4


def test_grad_window_attention(rng):
    x = rng.standard_normal((1, 8, 8, 4))
    wq, wo = rng.standard_normal((4, 12)) * 0.5, rng.standard_normal((4, 4)) * 0.5
    table = rng.standard_normal((49, 2))
    assert fd_check(lambda a, q, o, t: sw_msa(a, AttentionParams(q, o, 2), 4, t),
                    [x, wq, wo, table]) < 1e-4


def test_grad_patch_merge(rng):
    x = rng.standard_normal((1, 4, 4, 3))
    assert fd_check(patch_merge, [x, rng.standard_normal(12), rng.standard_normal(12),
                                  rng.standard_normal((12, 6))]) < 1e-4


def _kink_margin(model, x):
    """Smallest distance of any ReLU input from 0, or of any pool winner from the
    runner-up; central differences are only meaningful away from those kinks."""
    h = Tensor(x.reshape(len(x), 1, *x.shape[1:]))
    margin = np.inf
    for bi, block in enumerate(model.spec.config.blocks):
        for li in range(len(block)):
            pre = T.conv2d(h, model.params[f"b{bi}c{li}.w"], model.params[f"b{bi}c{li}.b"], 1, 1)
            margin = min(margin, np.abs(pre.data).min())
            h = T.relu(pre)
        b, c, hh, ww = h.shape
        win = np.sort(h.data.reshape(b, c, hh // 2, 2, ww // 2, 2).transpose(0, 1, 2, 4, 3, 5)
                      .reshape(b, c, hh // 2, ww // 2, 4), axis=-1)
        live = win[..., -1] > 0
        if live.any():
            margin = min(margin, (win[..., -1] - win[..., -2])[live].min())
        h = T.maxpool2d(h, 2)
    return margin


def _loss(model, x, y):
    return lambda: log_cosh_loss(model.forward(x), y, reduction="mean")


def test_grad_vit_encoder_block(rng):
    model = build(ModelSpec("tvit", TINY_VIT, dtype="float64"))
    h = rng.standard_normal((2, 17, 16))
    names = [n for n in model.params if n.startswith("enc0.")]
    sub = {n: model.params[n] for n in names}
    w = rng.standard_normal((2, 17, 16))
    err = fd_check_params(lambda: T.sum_(model.encoder(Tensor(h), 0) * Tensor(w)), sub, n_probe=8)
    assert err < 1e-4
    assert fd_check(lambda a: model.encoder(a, 0), [h]) < 1e-4


def test_grad_swin_block_pair(rng):
    model = build(ModelSpec("tswint", TINY_SWIN, dtype="float64"))
    h = rng.standard_normal((1, 8, 8, 8))
    sub = {n: p for n, p in model.params.items() if n.startswith("s0b")}
    w = rng.standard_normal((1, 8, 8, 8))
    pair = lambda: T.sum_(model.block(model.block(Tensor(h), 0, 0), 0, 1) * Tensor(w))
    assert fd_check_params(pair, sub, n_probe=8) < 1e-4


@pytest.mark.parametrize("spec,side", [(ModelSpec("tvit", TINY_VIT, dtype="float64"), 32),
                                       (ModelSpec("tswint", TINY_SWIN, dtype="float64"), 32),
                                       (ModelSpec("tvgg", TINY_VGG, dtype="float64"), 16)])
def test_grad_end_to_end(spec, side, rng):
    model = build(spec)
    x = rng.random((2, side, side))
    if spec.arch == "tvgg":
        while _kink_margin(model, x) < 1e-3:
            x = rng.random((2, side, side))
    y = np.array([0.3, -0.2])
    assert fd_check_params(_loss(model, x, y), model.params, n_probe=6) < 1e-3


def test_tiny_vit_overfits_ten_samples(rng):
    from holofocus.training import Adam

    model = build(ModelSpec("tvit", ViTConfig(depth=1, heads=2, patch=16, hidden=32, mlp_dim=64),
                            dtype="float64"))
    x = rng.random((10, 128, 128))
    y = rng.uniform(-1, 1, 10)
    opt = Adam(model.parameters(), 1e-3)
    for _ in range(500):
        opt.zero_grad()
        loss = log_cosh_loss(model.forward(x), y, reduction="mean")
        if loss.item() < 1e-3:
            break
        loss.backward()
        opt.step()
    assert loss.item() < 1e-3
