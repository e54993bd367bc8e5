"""Tiny regression networks: TViT, TSwinT and TVGG, and their attention blocks.

All models map a batch of single-channel 128x128 ROIs, scaled to [0, 1], to
one scalar per ROI: the predicted propagation distance in micrometres.
Parameters are built deterministically from ``ModelSpec.seed``.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Union

import numpy as np

from . import tensor as T
from .tensor import Tensor, ShapeError

__all__ = [
    "ViTConfig", "SwinConfig", "VggConfig", "ModelSpec", "AttentionParams",
    "Model", "TViT", "TSwinT", "TVGG", "build", "load_model",
    "msa", "w_msa", "sw_msa", "shifted_window_mask", "relative_position_index",
    "window_partition", "window_reverse", "patch_embed", "patch_merge",
]


# ---------------------------------------------------------------------------
# configurations

@dataclass(frozen=True)
class ViTConfig:
    depth: int = 12
    heads: int = 8
    patch: int = 16
    hidden: int = 128
    mlp_dim: int = 1024
    image: int = 128

    def __post_init__(self):
        if self.image % self.patch:
            raise ValueError(f"image side {self.image} not divisible by patch {self.patch}")
        if self.hidden % self.heads:
            raise ValueError(f"hidden {self.hidden} not divisible by heads {self.heads}")


@dataclass(frozen=True)
class SwinConfig:
    embed: int = 32
    depths: tuple[int, ...] = (2, 2, 4, 2)
    heads: tuple[int, ...] = (2, 4, 8, 8)
    window: int = 4
    patch: int = 4
    mlp_ratio: int = 4
    image: int = 128

    def __post_init__(self):
        object.__setattr__(self, "depths", tuple(self.depths))
        object.__setattr__(self, "heads", tuple(self.heads))
        if len(self.depths) != len(self.heads):
            raise ValueError("depths and heads must list one entry per stage")
        side = self.image // self.patch
        if self.image % self.patch or side % (1 << (len(self.depths) - 1)):
            raise ValueError(f"image {self.image} / patch {self.patch} cannot be merged "
                             f"{len(self.depths) - 1} times")
        for s, n in enumerate(self.heads):
            dim = self.embed << s
            if dim % n:
                raise ValueError(f"stage {s + 1}: dim {dim} not divisible by {n} heads")
            res = side >> s
            if res > self.window and res % self.window:
                raise ValueError(f"stage {s + 1}: window {self.window} does not divide side {res}")


# Five VGG blocks with halved filters; the last block keeps two convs so the
# total lands near 3e6 parameters.
TVGG_BLOCKS = ((32, 32), (64, 64), (128, 128, 128), (256, 256, 256), (256, 256))


@dataclass(frozen=True)
class VggConfig:
    blocks: tuple[tuple[int, ...], ...] = TVGG_BLOCKS
    image: int = 128

    def __post_init__(self):
        object.__setattr__(self, "blocks", tuple(tuple(b) for b in self.blocks))
        if self.image % (1 << len(self.blocks)):
            raise ValueError(f"image {self.image} not divisible by 2^{len(self.blocks)}")


ArchConfig = Union[ViTConfig, SwinConfig, VggConfig]
_CONFIGS = {"tvit": ViTConfig, "tswint": SwinConfig, "tvgg": VggConfig}


@dataclass(frozen=True)
class ModelSpec:
    """Everything needed to rebuild a model: architecture, dims, seed.

    ``target_offset``/``target_scale`` are a fixed affine on the regression
    output (set from the training labels) so the network itself works on
    unit-scale targets while predictions stay in micrometres.
    """

    arch: str = "tvit"
    config: ArchConfig | None = None
    seed: int = 0
    target_offset: float = 0.0
    target_scale: float = 1.0
    dtype: str = "float32"

    def __post_init__(self):
        arch = self.arch.lower()
        if arch not in _CONFIGS:
            raise ValueError(f"unknown architecture {self.arch!r}; expected one of {sorted(_CONFIGS)}")
        object.__setattr__(self, "arch", arch)
        if self.config is None:
            object.__setattr__(self, "config", _CONFIGS[arch]())
        elif not isinstance(self.config, _CONFIGS[arch]):
            raise TypeError(f"{arch} needs a {_CONFIGS[arch].__name__}")
        if self.dtype not in ("float32", "float64"):
            raise ValueError(f"dtype must be float32 or float64, got {self.dtype}")
        if not self.target_scale > 0:
            raise ValueError("target_scale must be positive")

    def to_dict(self) -> dict:
        return {"arch": self.arch, "config": asdict(self.config), "seed": self.seed,
                "target_offset": self.target_offset, "target_scale": self.target_scale,
                "dtype": self.dtype}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        cfg = _CONFIGS[d["arch"]](**d["config"])
        return cls(d["arch"], cfg, d.get("seed", 0), d.get("target_offset", 0.0),
                   d.get("target_scale", 1.0), d.get("dtype", "float32"))

    @classmethod
    def from_json(cls, text: str) -> "ModelSpec":
        return cls.from_dict(json.loads(text))


# ---------------------------------------------------------------------------
# attention

@dataclass
class AttentionParams:
    """Projections of one multi-head self-attention block.

    ``w_qkv`` (dim, 3*dim) stacks the per-head query, key and value
    matrices column-wise: [Q_1..Q_N | K_1..K_N | V_1..V_N], each head_dim
    wide.  ``w_out`` (N*head_dim, dim) maps the concatenated heads back.
    """

    w_qkv: Tensor
    w_out: Tensor
    heads: int

    def __post_init__(self):
        dim = self.w_qkv.shape[0]
        if self.w_qkv.shape != (dim, 3 * dim) or self.w_out.shape != (dim, dim):
            raise ShapeError(f"attention: w_qkv {self.w_qkv.shape} / w_out {self.w_out.shape} "
                             "inconsistent")
        if dim % self.heads:
            raise ShapeError(f"attention: model dim {dim} not divisible by {self.heads} heads")

    @property
    def dim(self) -> int:
        return self.w_qkv.shape[0]

    @property
    def head_dim(self) -> int:
        return self.dim // self.heads

    def head_matrix(self, which: str, i: int) -> np.ndarray:
        """Per-head projection ``which`` in {'q', 'k', 'v'} for head ``i``."""
        block = "qkv".index(which)
        d = self.head_dim
        start = block * self.dim + i * d
        return self.w_qkv.data[:, start:start + d]

    @classmethod
    def from_heads(cls, wq, wk, wv, w0, requires_grad: bool = False) -> "AttentionParams":
        w_qkv = np.concatenate([np.concatenate(list(m), axis=1) for m in (wq, wk, wv)], axis=1)
        return cls(Tensor(w_qkv, requires_grad), Tensor(np.asarray(w0), requires_grad), len(wq))


def msa(x: Tensor, params: AttentionParams, bias: Tensor | None = None,
        mask: np.ndarray | None = None, return_attention: bool = False):
    """Multi-head scaled dot-product self-attention over the token axis.

    x is (B, tokens, dim).  ``bias`` (heads, tokens, tokens) is added to the
    logits of every batch element; ``mask`` (nW, tokens, tokens) is added
    per window, with the batch axis laid out as (B', nW).
    """
    if x.ndim != 3:
        raise ShapeError(f"msa: expected (batch, tokens, dim), got {x.shape}")
    b, n, c = x.shape
    if n == 0:
        raise ShapeError("msa: token count is zero")
    if c != params.dim:
        raise ShapeError(f"msa: input dim {c} != attention dim {params.dim}")
    h, d = params.heads, params.head_dim
    qkv = T.linear(x, params.w_qkv).reshape(b, n, 3, h, d).transpose(2, 0, 3, 1, 4)
    q, k, v = qkv[0], qkv[1], qkv[2]
    logits = T.matmul(q, k.transpose(0, 1, 3, 2)) * (1.0 / math.sqrt(d))
    if bias is not None:
        logits = logits + bias
    if mask is not None:
        nw = mask.shape[0]
        logits = (logits.reshape(b // nw, nw, h, n, n)
                  + Tensor(mask[None, :, None].astype(x.dtype))).reshape(b, h, n, n)
    attn = T.softmax(logits, axis=-1)
    out = T.matmul(attn, v).transpose(0, 2, 1, 3).reshape(b, n, c)
    out = T.linear(out, params.w_out)
    return (out, attn) if return_attention else out


def window_partition(x: Tensor, window: int) -> Tensor:
    """(B, H, W, C) -> (B*nW, window*window, C), windows in row-major order."""
    b, h, w, c = x.shape
    if h % window or w % window:
        raise ShapeError(f"window_partition: window {window} does not divide {h}x{w}")
    x = x.reshape(b, h // window, window, w // window, window, c).transpose(0, 1, 3, 2, 4, 5)
    return x.reshape(b * (h // window) * (w // window), window * window, c)


def window_reverse(x: Tensor, window: int, h: int, w: int) -> Tensor:
    c = x.shape[-1]
    b = x.shape[0] // ((h // window) * (w // window))
    x = x.reshape(b, h // window, w // window, window, window, c).transpose(0, 1, 3, 2, 4, 5)
    return x.reshape(b, h, w, c)


def shifted_window_mask(h: int, w: int, window: int, shift: int) -> np.ndarray:
    """Additive mask (nW, T, T): 0 where attention is allowed, -inf elsewhere.

    After a cyclic shift by ``shift`` the map is labelled in three bands per
    axis; tokens in one window may attend to each other only if they carry
    the same label, i.e. they were not glued together by the wrap-around.
    """
    labels = np.zeros((h, w), dtype=np.int64)
    cnt = 0
    for hs in (slice(0, -window), slice(-window, -shift), slice(-shift, None)):
        for ws in (slice(0, -window), slice(-window, -shift), slice(-shift, None)):
            labels[hs, ws] = cnt
            cnt += 1
    win = labels.reshape(h // window, window, w // window, window).transpose(0, 2, 1, 3)
    win = win.reshape(-1, window * window)
    same = win[:, :, None] == win[:, None, :]
    return np.where(same, 0.0, -np.inf)


def relative_position_index(window: int) -> np.ndarray:
    """(T, T) index into a ((2w-1)^2, heads) relative-bias table."""
    coords = np.stack(np.meshgrid(np.arange(window), np.arange(window), indexing="ij")).reshape(2, -1)
    rel = coords[:, :, None] - coords[:, None, :] + (window - 1)
    return rel[0] * (2 * window - 1) + rel[1]


def w_msa(x: Tensor, params: AttentionParams, window: int, shift: int = 0,
          bias_table: Tensor | None = None) -> Tensor:
    """Window attention on a (B, H, W, C) map; ``shift`` > 0 gives SW-MSA."""
    if x.ndim != 4:
        raise ShapeError(f"w_msa: expected (batch, h, w, dim), got {x.shape}")
    _, h, w, _ = x.shape
    if h % window or w % window:
        raise ShapeError(f"w_msa: window {window} does not divide {h}x{w}")
    if shift not in (0, window // 2):
        raise ValueError(f"w_msa: shift must be 0 or window/2, got {shift}")
    if shift:
        x = T.roll(x, (-shift, -shift), (1, 2))
    windows = window_partition(x, window)
    bias = None
    if bias_table is not None:
        n = window * window
        idx = relative_position_index(window).reshape(-1)
        bias = T.take(bias_table, idx).reshape(n, n, params.heads).transpose(2, 0, 1)
    mask = shifted_window_mask(h, w, window, shift) if shift else None
    out = window_reverse(msa(windows, params, bias, mask), window, h, w)
    if shift:
        out = T.roll(out, (shift, shift), (1, 2))
    return out


def sw_msa(x: Tensor, params: AttentionParams, window: int,
           bias_table: Tensor | None = None) -> Tensor:
    return w_msa(x, params, window, window // 2, bias_table)


def patch_embed(image: Tensor, patch: int, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Flatten non-overlapping patches of a (B, H, W) image and project them.

    Returns (B, (H/patch)*(W/patch), dim), patches in row-major order.
    """
    if image.ndim == 4 and image.shape[-1] == 1:
        image = image.reshape(image.shape[:-1])
    b, h, w = image.shape
    if h % patch or w % patch:
        raise ShapeError(f"patch_embed: patch {patch} does not divide {h}x{w}")
    if weight.shape[0] != patch * patch:
        raise ShapeError(f"patch_embed: weight {weight.shape} expects {patch * patch} inputs")
    p = image.reshape(b, h // patch, patch, w // patch, patch).transpose(0, 1, 3, 2, 4)
    p = p.reshape(b, (h // patch) * (w // patch), patch * patch)
    return T.linear(p, weight, bias)


def patch_merge(x: Tensor, gamma: Tensor, beta: Tensor, weight: Tensor) -> Tensor:
    """(B, H, W, C) -> (B, H/2, W/2, 2C): concat 2x2 neighbours, norm, project."""
    b, h, w, c = x.shape
    if h % 2 or w % 2:
        raise ShapeError(f"patch_merge: spatial dims {h}x{w} must be even")
    x = x.reshape(b, h // 2, 2, w // 2, 2, c).transpose(0, 1, 3, 4, 2, 5)
    x = x.reshape(b, h // 2, w // 2, 4 * c)
    return T.linear(T.layer_norm(x, gamma, beta), weight)


# ---------------------------------------------------------------------------
# models

class Model:
    """Base class: parameter bookkeeping, input checks, output affine."""

    def __init__(self, spec: ModelSpec):
        self.spec = spec
        self.params: dict[str, Tensor] = {}
        self._rng = np.random.default_rng(spec.seed)
        self._dtype = np.dtype(spec.dtype)
        self._build()
        del self._rng

    # -- parameter creation ----------------------------------------------
    def _param(self, name: str, value: np.ndarray) -> Tensor:
        t = Tensor(np.asarray(value, dtype=self._dtype), requires_grad=True)
        self.params[name] = t
        return t

    def _normal(self, name: str, *shape, std: float = 0.02) -> Tensor:
        return self._param(name, T.trunc_normal(self._rng, shape, std))

    def _zeros(self, name: str, *shape) -> Tensor:
        return self._param(name, np.zeros(shape))

    def _ones(self, name: str, *shape) -> Tensor:
        return self._param(name, np.ones(shape))

    def _build(self) -> None:
        raise NotImplementedError

    # -- public API ------------------------------------------------------
    @property
    def arch(self) -> str:
        return self.spec.arch

    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    def named_parameters(self) -> dict[str, Tensor]:
        return dict(self.params)

    def count_params(self) -> int:
        return sum(p.size for p in self.params.values())

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.params.items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        missing = set(self.params) - set(state)
        extra = set(state) - set(self.params)
        if missing or extra:
            raise KeyError(f"state mismatch: missing {sorted(missing)}, unexpected {sorted(extra)}")
        for k, p in self.params.items():
            if state[k].shape != p.shape:
                raise ShapeError(f"{k}: checkpoint shape {state[k].shape} != {p.shape}")
            p.data = np.asarray(state[k], dtype=self._dtype).copy()

    def astype(self, dtype) -> "Model":
        """Switch parameter precision in place (float32 or float64)."""
        self._dtype = np.dtype(dtype)
        self.spec = replace(self.spec, dtype=self._dtype.name)
        for p in self.params.values():
            p.data = p.data.astype(self._dtype)
            p.grad = None
        return self

    def with_target(self, offset: float, scale: float) -> "Model":
        self.spec = replace(self.spec, target_offset=float(offset), target_scale=float(scale))
        return self

    def _prepare(self, roi) -> Tensor:
        x = roi if isinstance(roi, Tensor) else Tensor(np.asarray(roi, dtype=self._dtype))
        if x.dtype != self._dtype:
            x = Tensor(x.data.astype(self._dtype))
        side = self.spec.config.image
        if x.ndim == 2:
            x = x.reshape(1, *x.shape)
        elif x.ndim == 3 and x.shape[-1] == 1 and x.shape[0] == side and x.shape[1] == side:
            x = x.reshape(1, side, side)
        elif x.ndim == 4 and x.shape[-1] == 1:
            x = x.reshape(x.shape[:-1])
        if x.ndim != 3 or x.shape[1:] != (side, side):
            raise ShapeError(f"{self.arch}: expected ROI of {side}x{side}, got {roi.shape if hasattr(roi, 'shape') else roi}")
        return x

    def forward(self, roi) -> Tensor:
        """Predicted distance (um) for each ROI in the batch: shape (B,)."""
        x = self._prepare(roi)
        out = self._forward(x).reshape(x.shape[0])
        if self.spec.target_scale != 1.0:
            out = out * self.spec.target_scale
        if self.spec.target_offset != 0.0:
            out = out + self.spec.target_offset
        return out

    __call__ = forward

    def _forward(self, x: Tensor) -> Tensor:
        raise NotImplementedError

    def predict(self, rois: np.ndarray, batch_size: int = 64) -> np.ndarray:
        """Inference without recording a tape; returns float64 predictions."""
        rois = np.asarray(rois)
        if rois.ndim == 2:
            rois = rois[None]
        out = []
        with T.no_grad():
            for i in range(0, len(rois), batch_size):
                out.append(self.forward(rois[i:i + batch_size]).data.astype(np.float64))
        return np.concatenate(out) if out else np.zeros(0)

    def save(self, path: str | Path) -> None:
        """Write ``<path>`` (TNSR parameters) and ``<path>.json`` (ModelSpec)."""
        path = Path(path)
        T.save_checkpoint(path, self.state_dict())
        path.with_suffix(path.suffix + ".json").write_text(self.spec.to_json() + "\n")


class TViT(Model):
    """Class-token vision transformer regressing from the class token."""

    def _build(self) -> None:
        c: ViTConfig = self.spec.config
        n_tokens = (c.image // c.patch) ** 2 + 1
        self._normal("patch.w", c.patch * c.patch, c.hidden)
        self._zeros("patch.b", c.hidden)
        self._normal("cls", 1, 1, c.hidden)
        self._normal("pos", 1, n_tokens, c.hidden)
        for i in range(c.depth):
            p = f"enc{i}."
            self._ones(p + "ln1.g", c.hidden)
            self._zeros(p + "ln1.b", c.hidden)
            self._normal(p + "attn.qkv", c.hidden, 3 * c.hidden)
            self._normal(p + "attn.out", c.hidden, c.hidden)
            self._ones(p + "ln2.g", c.hidden)
            self._zeros(p + "ln2.b", c.hidden)
            self._normal(p + "mlp.w1", c.hidden, c.mlp_dim)
            self._zeros(p + "mlp.b1", c.mlp_dim)
            self._normal(p + "mlp.w2", c.mlp_dim, c.hidden)
            self._zeros(p + "mlp.b2", c.hidden)
        self._ones("norm.g", c.hidden)
        self._zeros("norm.b", c.hidden)
        self._normal("head.w", c.hidden, 1)
        self._zeros("head.b", 1)

    def attention(self, i: int) -> AttentionParams:
        P = self.params
        return AttentionParams(P[f"enc{i}.attn.qkv"], P[f"enc{i}.attn.out"], self.spec.config.heads)

    def encoder(self, x: Tensor, i: int) -> Tensor:
        P, p = self.params, f"enc{i}."
        x = x + msa(T.layer_norm(x, P[p + "ln1.g"], P[p + "ln1.b"]), self.attention(i))
        h = T.layer_norm(x, P[p + "ln2.g"], P[p + "ln2.b"])
        h = T.linear(T.gelu(T.linear(h, P[p + "mlp.w1"], P[p + "mlp.b1"])), P[p + "mlp.w2"], P[p + "mlp.b2"])
        return x + h

    def _forward(self, x: Tensor) -> Tensor:
        c: ViTConfig = self.spec.config
        P = self.params
        tokens = patch_embed(x, c.patch, P["patch.w"], P["patch.b"])
        b = tokens.shape[0]
        cls = P["cls"] + Tensor(np.zeros((b, 1, c.hidden), dtype=tokens.dtype))
        h = T.concat([cls, tokens], axis=1) + P["pos"]
        for i in range(c.depth):
            h = self.encoder(h, i)
        h = T.layer_norm(h[:, 0], P["norm.g"], P["norm.b"])
        return T.linear(h, P["head.w"], P["head.b"])


class TSwinT(Model):
    """Four-stage shifted-window transformer with a mean-pooled regression head."""

    def _build(self) -> None:
        c: SwinConfig = self.spec.config
        self._normal("patch.w", c.patch * c.patch, c.embed)
        self._zeros("patch.b", c.embed)
        self._ones("patch.ln.g", c.embed)
        self._zeros("patch.ln.b", c.embed)
        side = c.image // c.patch
        for s, (depth, heads) in enumerate(zip(c.depths, c.heads)):
            dim = c.embed << s
            if s > 0:
                self._ones(f"merge{s}.ln.g", 2 * dim)
                self._zeros(f"merge{s}.ln.b", 2 * dim)
                self._normal(f"merge{s}.w", 2 * dim, dim)
            win, _ = self._window(side >> s)
            for j in range(depth):
                p = f"s{s}b{j}."
                self._ones(p + "ln1.g", dim)
                self._zeros(p + "ln1.b", dim)
                self._normal(p + "attn.qkv", dim, 3 * dim)
                self._normal(p + "attn.out", dim, dim)
                self._normal(p + "attn.rel", (2 * win - 1) ** 2, heads)
                self._ones(p + "ln2.g", dim)
                self._zeros(p + "ln2.b", dim)
                self._normal(p + "mlp.w1", dim, c.mlp_ratio * dim)
                self._zeros(p + "mlp.b1", c.mlp_ratio * dim)
                self._normal(p + "mlp.w2", c.mlp_ratio * dim, dim)
                self._zeros(p + "mlp.b2", dim)
        final = c.embed << (len(c.depths) - 1)
        self._ones("norm.g", final)
        self._zeros("norm.b", final)
        self._normal("head.w", final, 1)
        self._zeros("head.b", 1)

    def _window(self, side: int) -> tuple[int, int]:
        """(window, shift) for a stage; a map no larger than the window is one unshifted window."""
        w = self.spec.config.window
        if side <= w:
            return side, 0
        return w, w // 2

    def block(self, x: Tensor, s: int, j: int) -> Tensor:
        c: SwinConfig = self.spec.config
        P, p = self.params, f"s{s}b{j}."
        win, shift = self._window(x.shape[1])
        attn = AttentionParams(P[p + "attn.qkv"], P[p + "attn.out"], c.heads[s])
        h = T.layer_norm(x, P[p + "ln1.g"], P[p + "ln1.b"])
        x = x + w_msa(h, attn, win, shift if j % 2 else 0, P[p + "attn.rel"])
        h = T.layer_norm(x, P[p + "ln2.g"], P[p + "ln2.b"])
        h = T.linear(T.gelu(T.linear(h, P[p + "mlp.w1"], P[p + "mlp.b1"])), P[p + "mlp.w2"], P[p + "mlp.b2"])
        return x + h

    def _forward(self, x: Tensor) -> Tensor:
        c: SwinConfig = self.spec.config
        P = self.params
        side = c.image // c.patch
        h = patch_embed(x, c.patch, P["patch.w"], P["patch.b"])
        h = T.layer_norm(h, P["patch.ln.g"], P["patch.ln.b"])
        h = h.reshape(h.shape[0], side, side, c.embed)
        for s, depth in enumerate(c.depths):
            if s > 0:
                h = patch_merge(h, P[f"merge{s}.ln.g"], P[f"merge{s}.ln.b"], P[f"merge{s}.w"])
            for j in range(depth):
                h = self.block(h, s, j)
        h = T.layer_norm(h, P["norm.g"], P["norm.b"])
        h = T.mean(h, axis=(1, 2))
        return T.linear(h, P["head.w"], P["head.b"])


class TVGG(Model):
    """VGG-style conv stack (3x3 convs, 2x2 max pools), global average pool, linear head."""

    def _build(self) -> None:
        c: VggConfig = self.spec.config
        cin = 1
        for bi, block in enumerate(c.blocks):
            for li, cout in enumerate(block):
                # He-normal keeps activations alive through a deep ReLU stack
                std = math.sqrt(2.0 / (cin * 9))
                self._param(f"b{bi}c{li}.w", T.trunc_normal(self._rng, (cout, cin, 3, 3), std))
                self._zeros(f"b{bi}c{li}.b", cout)
                cin = cout
        self._normal("head.w", cin, 1)
        self._zeros("head.b", 1)

    def _forward(self, x: Tensor) -> Tensor:
        c: VggConfig = self.spec.config
        P = self.params
        h = x.reshape(x.shape[0], 1, c.image, c.image)
        for bi, block in enumerate(c.blocks):
            for li in range(len(block)):
                h = T.relu(T.conv2d(h, P[f"b{bi}c{li}.w"], P[f"b{bi}c{li}.b"], stride=1, padding=1))
            h = T.maxpool2d(h, 2)
        h = T.mean(h, axis=(2, 3))
        return T.linear(h, P["head.w"], P["head.b"])


_MODELS = {"tvit": TViT, "tswint": TSwinT, "tvgg": TVGG}


def build(spec: ModelSpec | str, seed: int | None = None) -> Model:
    """Construct a model; ``spec`` may be an architecture name for defaults."""
    if isinstance(spec, str):
        spec = ModelSpec(spec)
    if seed is not None:
        spec = replace(spec, seed=seed)
    return _MODELS[spec.arch](spec)


def load_model(path: str | Path) -> Model:
    path = Path(path)
    spec = ModelSpec.from_json(path.with_suffix(path.suffix + ".json").read_text())
    model = build(spec)
    model.load_state_dict(T.load_checkpoint(path))
    return model
