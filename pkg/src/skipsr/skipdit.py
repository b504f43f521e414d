"""Skip-aware windowed transformer over latent ``1x2x2`` patches.

Tokens keep the coordinates and window assignments they had in the full grid,
so after skipped tokens are dropped every window simply holds fewer tokens.
Rotary embeddings use each token's position inside its window, derived from
its full-grid coordinate rather than from its position in the compacted
sequence.

Variants (for profiling alternatives to skipping the whole transformer):

``full_skip``
    only unskipped tokens are embedded and carried through the blocks.
``attention_mask_only``
    every token runs LayerNorm/FFN; skipped tokens are left out of attention.
``query_mask_only``
    skipped tokens act as keys/values but issue no queries.
``interleaved_dense``
    even layers are dense over all tokens, odd layers behave like full_skip.
``dense``
    no masking.
"""
from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .codec import LatentTensor
from .oracle import SkipMask
from .weights import load_weights, save_weights

VARIANTS = ("full_skip", "attention_mask_only", "query_mask_only", "interleaved_dense", "dense")
LN_EPS = 1e-6


@dataclass
class DiTConfig:
    dim: int = 128
    heads: int = 4
    layers: int = 4
    window: tuple[int, int, int] = (4, 8, 8)
    shift: tuple[int, int, int] | None = None  # odd-layer shift; None -> half window
    rope_base: float = 10000.0
    variant: str = "full_skip"
    seed: int = 0
    threads: int = 1
    dtype: str = "float64"

    def __post_init__(self):
        self.window = tuple(int(w) for w in self.window)
        if self.shift is None:
            self.shift = tuple(w // 2 for w in self.window)
        self.shift = tuple(int(s) for s in self.shift)
        if self.dim % self.heads:
            raise ValueError(f"dim {self.dim} not divisible by heads {self.heads}")
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; choose from {VARIANTS}")
        if any(w < 1 for w in self.window) or self.threads < 1:
            raise ValueError("window sizes and thread count must be positive")
        rope_dims(self.head_dim)

    @property
    def head_dim(self) -> int:
        return self.dim // self.heads

    def layer_shift(self, layer: int) -> tuple[int, int, int]:
        return (0, 0, 0) if layer % 2 == 0 else self.shift

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "DiTConfig":
        return cls(**json.loads(text))

    @classmethod
    def load(cls, path) -> "DiTConfig":
        return cls.from_json(Path(path).read_text())


def rope_dims(head_dim: int) -> tuple[int, int, int]:
    """Split ``head_dim`` into three even per-axis sizes (t gets the remainder)."""
    if head_dim % 2 or head_dim < 6:
        raise ValueError(f"head_dim must be even and >= 6, got {head_dim}")
    base = (head_dim // 3) // 2 * 2
    return (head_dim - 2 * base, base, base)


# --------------------------------------------------------------------------
# weights


@dataclass
class DiTWeights:
    embed_w: np.ndarray
    embed_b: np.ndarray
    blocks: list[dict[str, np.ndarray]]
    norm_s: np.ndarray
    norm_b: np.ndarray
    unembed_w: np.ndarray
    unembed_b: np.ndarray
    meta: dict = field(default_factory=dict)

    @property
    def patch_dim(self) -> int:
        return self.embed_w.shape[0]

    @classmethod
    def init(cls, cfg: DiTConfig, channels: int, seed: int | None = None,
             zero_unembed: bool = True, std: float = 0.02) -> "DiTWeights":
        rng = np.random.default_rng(cfg.seed if seed is None else seed)
        dt = np.dtype(cfg.dtype)
        d, p = cfg.dim, 4 * channels

        def normal(*shape):
            return (rng.standard_normal(shape) * std).astype(dt)

        blocks = []
        for _ in range(cfg.layers):
            blocks.append({
                "ln1_s": np.ones(d, dt), "ln1_b": np.zeros(d, dt),
                "qkv_w": normal(d, 3 * d), "qkv_b": np.zeros(3 * d, dt),
                "out_w": normal(d, d), "out_b": np.zeros(d, dt),
                "ln2_s": np.ones(d, dt), "ln2_b": np.zeros(d, dt),
                "ffn1_w": normal(d, 4 * d), "ffn1_b": np.zeros(4 * d, dt),
                "ffn2_w": normal(4 * d, d), "ffn2_b": np.zeros(d, dt),
            })
        if zero_unembed:
            un_w, un_b = np.zeros((d, p), dt), np.zeros(p, dt)
        else:
            un_w, un_b = normal(d, p), normal(p)
        return cls(normal(p, d), np.zeros(d, dt), blocks, np.ones(d, dt), np.zeros(d, dt),
                   un_w, un_b, {"channels": channels, "seed": cfg.seed if seed is None else seed})

    def tensors(self) -> dict[str, np.ndarray]:
        out = {"embed_w": self.embed_w, "embed_b": self.embed_b}
        for i, blk in enumerate(self.blocks):
            out.update({f"block{i}.{k}": v for k, v in blk.items()})
        out.update(norm_s=self.norm_s, norm_b=self.norm_b,
                   unembed_w=self.unembed_w, unembed_b=self.unembed_b)
        return out

    def astype(self, dtype) -> "DiTWeights":
        cast = {k: v.astype(dtype) for k, v in self.tensors().items()}
        return DiTWeights._from_tensors(cast, len(self.blocks), self.meta)

    @staticmethod
    def _from_tensors(t: dict, layers: int, meta: dict) -> "DiTWeights":
        blocks = []
        for i in range(layers):
            pre = f"block{i}."
            blocks.append({k[len(pre):]: v for k, v in t.items() if k.startswith(pre)})
        return DiTWeights(t["embed_w"], t["embed_b"], blocks, t["norm_s"], t["norm_b"],
                          t["unembed_w"], t["unembed_b"], dict(meta))

    def save(self, path, cfg: DiTConfig) -> None:
        manifest = {"kind": "dit", "config": json.loads(cfg.to_json()),
                    "channels": self.patch_dim // 4}
        save_weights(path, manifest, self.tensors())

    @classmethod
    def load(cls, path) -> tuple["DiTWeights", DiTConfig]:
        manifest, tensors = load_weights(path)
        if manifest.get("kind") != "dit":
            raise ValueError(f"{path} is not a DiT weights file")
        cfg = DiTConfig(**manifest["config"])
        w = cls._from_tensors(tensors, cfg.layers, {"channels": manifest["channels"]})
        return w.astype(np.dtype(cfg.dtype)), cfg


# --------------------------------------------------------------------------
# tokens and windows


@dataclass
class TokenSet:
    """Tokens with their full-grid coordinates and per-layer window ids.

    ``patches`` holds the raw ``2x2xC`` latent patch per token (flattened),
    ``tokens`` the embedded vectors (``None`` before embedding).
    ``window_id`` has shape ``(layers, n)``.
    """

    patches: np.ndarray
    orig_index: np.ndarray
    window_id: np.ndarray
    grid: tuple[int, int, int]
    tokens: np.ndarray | None = None

    def __len__(self):
        return self.orig_index.shape[0]

    def select(self, rows) -> "TokenSet":
        return TokenSet(self.patches[rows], self.orig_index[rows], self.window_id[:, rows],
                        self.grid, None if self.tokens is None else self.tokens[rows])


def latent_to_patches(l: LatentTensor) -> np.ndarray:
    t, h, w, C = l.dims
    if h % 2 or w % 2:
        raise ValueError(f"latent spatial dims must be even, got {h}x{w}")
    p = l.coeffs.reshape(t, h // 2, 2, w // 2, 2, C).transpose(0, 1, 3, 2, 4, 5)
    return p.reshape(t * (h // 2) * (w // 2), 4 * C)


def patches_to_cells(p: np.ndarray, channels: int) -> np.ndarray:
    return p.reshape(-1, 2, 2, channels)


def window_coords(grid, window, shift):
    """Per-axis window index and within-window position for every grid cell.

    Windows tile each axis from ``-offset`` with ``offset = (w - s) mod w``,
    so a shift ``s`` puts the first boundary at ``s``; windows are clamped at
    the grid edge instead of wrapping around.
    """
    idx, pos, counts = [], [], []
    for g, w, s in zip(grid, window, shift):
        off = (w - s % w) % w
        x = np.arange(g) + off
        idx.append(x // w)
        pos.append(x % w)
        counts.append((g - 1 + off) // w + 1)
    return idx, pos, counts


def assign_windows(grid, window, shift=(0, 0, 0)) -> np.ndarray:
    """Window id of every cell of ``grid`` (array shaped like the grid)."""
    idx, _, (_, nh, nw) = window_coords(grid, window, shift)
    it, ih, iw = np.meshgrid(*idx, indexing="ij")
    return (it * nh + ih) * nw + iw


def local_positions(orig_index: np.ndarray, grid, window, shift) -> np.ndarray:
    _, pos, _ = window_coords(grid, window, shift)
    return np.stack([pos[a][orig_index[:, a]] for a in range(3)], axis=1)


def grid_indices(grid) -> np.ndarray:
    return np.stack(np.unravel_index(np.arange(math.prod(grid)), grid), axis=1)


def tokenize(l: LatentTensor, weights: DiTWeights | None = None,
             cfg: DiTConfig | None = None) -> TokenSet:
    """Full-grid token set; tokens are embedded when ``weights`` is given."""
    cfg = cfg or DiTConfig()
    patches = latent_to_patches(l)
    t, h, w, _ = l.dims
    grid = (t, h // 2, w // 2)
    win = np.stack([assign_windows(grid, cfg.window, cfg.layer_shift(i)).ravel()
                    for i in range(cfg.layers)])
    ts = TokenSet(patches, grid_indices(grid), win, grid)
    if weights is not None:
        ts.tokens = embed(ts.patches, weights)
    return ts


def embed(patches: np.ndarray, weights: DiTWeights) -> np.ndarray:
    return patches.astype(weights.embed_w.dtype, copy=False) @ weights.embed_w + weights.embed_b


def route(tokens: TokenSet, m: SkipMask) -> tuple[TokenSet, np.ndarray]:
    """Split into the unskipped token set and the flat indices of skipped cells."""
    if tuple(m.grid_dims) != tuple(tokens.grid):
        raise ValueError(f"mask grid {m.grid_dims} != token grid {tokens.grid}")
    flat = np.ravel_multi_index(tokens.orig_index.T, tokens.grid)
    skipped = m.bits.ravel()[flat]
    return tokens.select(np.flatnonzero(~skipped)), flat[skipped]


# --------------------------------------------------------------------------
# rotary embedding


def rope_tables(positions: np.ndarray, head_dim: int, base: float, dtype=np.float64):
    """cos/sin tables of shape ``(n, head_dim // 2)`` for integer positions ``(n, 3)``."""
    angles = []
    for axis, sub in enumerate(rope_dims(head_dim)):
        freq = base ** (-np.arange(0, sub, 2, dtype=np.float64) / sub)
        angles.append(positions[:, axis:axis + 1].astype(np.float64) * freq)
    ang = np.concatenate(angles, axis=1)
    return np.cos(ang).astype(dtype), np.sin(ang).astype(dtype)


def apply_rope(x: np.ndarray, cos: np.ndarray, sin: np.ndarray) -> np.ndarray:
    """Rotate consecutive pairs of the last axis; ``x`` is ``(n, ..., head_dim)``."""
    extra = (slice(None),) + (None,) * (x.ndim - 2)
    c, s = cos[extra], sin[extra]
    x0, x1 = x[..., 0::2], x[..., 1::2]
    out = np.empty_like(x)
    out[..., 0::2] = x0 * c - x1 * s
    out[..., 1::2] = x0 * s + x1 * c
    return out


def rope_rotate(vec: np.ndarray, orig_index, grid, window, shift=(0, 0, 0),
                base: float = 10000.0) -> np.ndarray:
    """Rotate one head vector for the token at full-grid coordinate ``orig_index``."""
    vec = np.asarray(vec, dtype=np.float64)
    pos = local_positions(np.asarray(orig_index).reshape(1, 3), grid, window, shift)
    cos, sin = rope_tables(pos, vec.shape[-1], base)
    return apply_rope(vec[None], cos, sin)[0]


# --------------------------------------------------------------------------
# blocks


def layer_norm(x, scale, bias):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    return xc / np.sqrt(var + LN_EPS) * scale + bias


def gelu(x):
    return 0.5 * x * (1.0 + np.tanh(0.7978845608028654 * (x + 0.044715 * x * x * x)))


def _groups(win: np.ndarray) -> dict[int, np.ndarray]:
    order = np.argsort(win, kind="stable")
    ids, starts = np.unique(win[order], return_index=True)
    bounds = list(starts[1:]) + [order.size]
    return {int(i): order[s:e] for i, s, e in zip(ids, starts, bounds)}


def attend(q, k, v, q_win, kv_win, pool=None) -> np.ndarray:
    """Softmax attention restricted to tokens sharing a window id.

    ``q``: ``(nq, heads, hd)``; ``k``, ``v``: ``(nk, heads, hd)``.  Windows with
    queries but no keys produce zeros; empty windows cost nothing.
    """
    out = np.zeros_like(q)
    scale = 1.0 / math.sqrt(q.shape[-1])
    q_groups = _groups(q_win)
    kv_groups = _groups(kv_win)

    def one(item):
        wid, qi = item
        ki = kv_groups.get(wid)
        if ki is None:
            return
        qw = q[qi].transpose(1, 0, 2)
        kw = k[ki].transpose(1, 0, 2)
        vw = v[ki].transpose(1, 0, 2)
        s = (qw @ kw.transpose(0, 2, 1)) * scale
        s = np.exp(s - s.max(axis=-1, keepdims=True))
        s /= s.sum(axis=-1, keepdims=True)
        out[qi] = (s @ vw).transpose(1, 0, 2)

    if pool is None:
        for item in q_groups.items():
            one(item)
    else:
        list(pool.map(one, q_groups.items()))
    return out


@dataclass
class _LayerCtx:
    win: np.ndarray  # window id per carried token
    cos: np.ndarray
    sin: np.ndarray


def _rows(x, sel):
    return x if sel is None else x[sel]


def block_forward(x, blk, ctx: _LayerCtx, cfg: DiTConfig, q_sel=None, kv_sel=None,
                  ffn_sel=None, pool=None):
    """One pre-LN block applied in place to the carried tokens ``x``.

    ``q_sel``/``kv_sel``/``ffn_sel`` are row indices (``None`` = all rows);
    the query rows must be a subset of the key/value rows.
    """
    d, H, hd = cfg.dim, cfg.heads, cfg.head_dim
    hn = layer_norm(_rows(x, kv_sel), blk["ln1_s"], blk["ln1_b"])
    same = (q_sel is None and kv_sel is None) or (q_sel is kv_sel)
    if same:
        qkv = hn @ blk["qkv_w"] + blk["qkv_b"]
        q, k, v = qkv[:, :d], qkv[:, d:2 * d], qkv[:, 2 * d:]
    else:
        kv = hn @ blk["qkv_w"][:, d:] + blk["qkv_b"][d:]
        k, v = kv[:, :d], kv[:, d:]
        # kv_sel is None here (query_mask_only), so q_sel indexes hn directly
        q = hn[q_sel] @ blk["qkv_w"][:, :d] + blk["qkv_b"][:d]
    cos_k, sin_k = _rows(ctx.cos, kv_sel), _rows(ctx.sin, kv_sel)
    cos_q, sin_q = _rows(ctx.cos, q_sel), _rows(ctx.sin, q_sel)
    q = apply_rope(q.reshape(-1, H, hd), cos_q, sin_q)
    k = apply_rope(k.reshape(-1, H, hd), cos_k, sin_k)
    v = v.reshape(-1, H, hd)
    a = attend(q, k, v, _rows(ctx.win, q_sel), _rows(ctx.win, kv_sel), pool)
    a = a.reshape(-1, d) @ blk["out_w"] + blk["out_b"]
    if q_sel is None:
        x += a
    else:
        x[q_sel] += a

    h = _rows(x, ffn_sel)
    f = gelu(layer_norm(h, blk["ln2_s"], blk["ln2_b"]) @ blk["ffn1_w"] + blk["ffn1_b"])
    f = f @ blk["ffn2_w"] + blk["ffn2_b"]
    if ffn_sel is None:
        x += f
    else:
        x[ffn_sel] += f
    return x


def _layer_contexts(ts: TokenSet, cfg: DiTConfig, dtype):
    cache, ctxs = {}, []
    for i in range(cfg.layers):
        shift = cfg.layer_shift(i)
        if shift not in cache:
            pos = local_positions(ts.orig_index, ts.grid, cfg.window, shift)
            cache[shift] = rope_tables(pos, cfg.head_dim, cfg.rope_base, dtype)
        cos, sin = cache[shift]
        ctxs.append(_LayerCtx(ts.window_id[i], cos, sin))
    return ctxs


def run_blocks(ts: TokenSet, weights: DiTWeights, cfg: DiTConfig, q_sel=None,
               layer_sels=None) -> np.ndarray:
    """Run all blocks over ``ts.tokens`` and return the final hidden states.

    ``layer_sels`` optionally gives ``(q_sel, kv_sel, ffn_sel)`` per layer.
    """
    x = np.array(ts.tokens, dtype=np.dtype(cfg.dtype), copy=True)
    ctxs = _layer_contexts(ts, cfg, x.dtype)
    pool = ThreadPoolExecutor(cfg.threads) if cfg.threads > 1 else None
    try:
        for i, blk in enumerate(weights.blocks):
            sels = layer_sels[i] if layer_sels is not None else (None, None, None)
            block_forward(x, blk, ctxs[i], cfg, *sels, pool=pool)
    finally:
        if pool is not None:
            pool.shutdown()
    return x


def window_attention(unskipped: TokenSet, weights: DiTWeights, layer: int,
                     cfg: DiTConfig) -> np.ndarray:
    """Attention sublayer of block ``layer`` over the tokens present (no residual)."""
    blk = weights.blocks[layer]
    ctx = _layer_contexts(unskipped, cfg, np.dtype(cfg.dtype))[layer]
    d, H, hd = cfg.dim, cfg.heads, cfg.head_dim
    hn = layer_norm(unskipped.tokens, blk["ln1_s"], blk["ln1_b"])
    qkv = hn @ blk["qkv_w"] + blk["qkv_b"]
    q = apply_rope(qkv[:, :d].reshape(-1, H, hd), ctx.cos, ctx.sin)
    k = apply_rope(qkv[:, d:2 * d].reshape(-1, H, hd), ctx.cos, ctx.sin)
    v = qkv[:, 2 * d:].reshape(-1, H, hd)
    a = attend(q, k, v, ctx.win, ctx.win)
    return a.reshape(-1, d) @ blk["out_w"] + blk["out_b"]


def _variant_sels(variant: str, keep_rows: np.ndarray | None, layers: int):
    if keep_rows is None or variant in ("dense", "full_skip"):
        return None
    if variant == "attention_mask_only":
        return [(keep_rows, keep_rows, None)] * layers
    if variant == "query_mask_only":
        return [(keep_rows, None, None)] * layers
    if variant == "interleaved_dense":
        return [(None, None, None) if i % 2 == 0 else (keep_rows, keep_rows, keep_rows)
                for i in range(layers)]
    raise ValueError(f"unknown variant {variant!r}")


@dataclass
class RefinedCells:
    """DiT output for the unskipped positions only."""

    cells: np.ndarray  # (n, 2, 2, C)
    orig_index: np.ndarray  # (n, 3) token-grid coordinates
    grid: tuple[int, int, int]


def dit_forward(l: LatentTensor, m: SkipMask, cfg: DiTConfig, weights: DiTWeights) -> RefinedCells:
    """Refine the unskipped latent patches; skipped ones are not returned."""
    C = l.channels
    if weights.patch_dim != 4 * C:
        raise ValueError(f"weights expect {weights.patch_dim // 4} channels, latent has {C}")
    ts = tokenize(l, None, cfg)
    keep_flat = ~m.bits.ravel() if tuple(m.grid_dims) == ts.grid else None
    if keep_flat is None:
        raise ValueError(f"mask grid {m.grid_dims} != token grid {ts.grid}")
    keep_rows = np.flatnonzero(keep_flat)
    dense_equiv = keep_rows.size == len(ts)

    if cfg.variant == "full_skip":
        carried = ts if dense_equiv else route(ts, m)[0]
        carried.tokens = embed(carried.patches, weights)
        x = run_blocks(carried, weights, cfg)
        out_rows = None
    else:
        carried = ts
        carried.tokens = embed(carried.patches, weights)
        sels = _variant_sels(cfg.variant, None if dense_equiv else keep_rows, cfg.layers)
        x = run_blocks(carried, weights, cfg, layer_sels=sels)
        out_rows = None if dense_equiv else keep_rows

    hx = _rows(x, out_rows)
    patches = _rows(carried.patches, out_rows)
    index = _rows(carried.orig_index, out_rows)
    y = layer_norm(hx, weights.norm_s, weights.norm_b) @ weights.unembed_w + weights.unembed_b
    refined = patches.astype(y.dtype) + y
    return RefinedCells(patches_to_cells(refined, C), index, ts.grid)


def compose_output(refined: RefinedCells, l_skip_source: LatentTensor, m: SkipMask) -> LatentTensor:
    """Place refined cells at unskipped positions; copy the rest from the skip source."""
    t, h, w, C = l_skip_source.dims
    grid = (t, h // 2, w // 2)
    if tuple(m.grid_dims) != grid or tuple(refined.grid) != grid:
        raise ValueError(f"mask {m.grid_dims} / refined {refined.grid} vs latent grid {grid}")
    flat = np.ravel_multi_index(refined.orig_index.T, grid) if len(refined.orig_index) else \
        np.zeros(0, dtype=np.intp)
    if np.any(m.bits.ravel()[flat]) or flat.size != np.count_nonzero(~m.bits):
        raise ValueError("refined cells do not cover exactly the unskipped positions")
    out = l_skip_source.coeffs.copy()
    view = out.reshape(t, h // 2, 2, w // 2, 2, C).transpose(0, 1, 3, 2, 4, 5)
    view = view.reshape(-1, 2, 2, C)
    view[flat] = refined.cells
    out = view.reshape(t, h // 2, w // 2, 2, 2, C).transpose(0, 1, 3, 2, 4, 5).reshape(t, h, w, C)
    return LatentTensor(np.ascontiguousarray(out), l_skip_source.keep)


# --------------------------------------------------------------------------
# cost model


def attention_cost(grid, keep_bits, cfg: DiTConfig) -> int:
    """Sum over layers and windows of (tokens present in the window) squared."""
    keep = np.asarray(keep_bits, dtype=bool).reshape(grid)
    total = 0
    for i in range(cfg.layers):
        win = assign_windows(grid, cfg.window, cfg.layer_shift(i))
        counts = np.bincount(win[keep].ravel(), minlength=int(win.max()) + 1)
        total += int((counts.astype(np.int64) ** 2).sum())
    return total


def flop_cost(grid, keep_bits, cfg: DiTConfig, channels: int) -> int:
    """Multiply-add FLOPs of a full_skip forward over the kept tokens.

    Per layer: attention ``4 d * sum(len^2)`` (scores and weighted values),
    plus ``24 d^2`` per token for QKV, output projection and the 4x FFN.
    Patch embed and unembed add ``4 * (4C) * d`` per token.
    """
    d = cfg.dim
    n = int(np.count_nonzero(keep_bits))
    per_token = cfg.layers * 24 * d * d + 2 * 2 * (4 * channels) * d
    return 4 * d * attention_cost(grid, keep_bits, cfg) + n * per_token


def estimated_speedup(grid, skip_bits, cfg: DiTConfig, channels: int) -> float | None:
    """Dense cost over sparse cost; ``None`` when every token is skipped."""
    skip = np.asarray(skip_bits, dtype=bool)
    dense = flop_cost(grid, np.ones_like(skip), cfg, channels)
    sparse = flop_cost(grid, ~skip, cfg, channels)
    return None if sparse == 0 else dense / sparse
