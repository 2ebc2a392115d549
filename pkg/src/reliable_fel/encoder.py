"""Two-stream window cross-attention encoder producing the embedding ``e``.

Per level, image tokens are cut into non-overlapping windows; a landmark
map pooled to the window shape supplies the queries and the image window
supplies keys and values. The window outputs are stitched back into the
token grid, passed through a residual norm/MLP block, and the levels are
then concatenated, self-attended and pooled into a single vector.
"""

from __future__ import annotations

import math

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .exceptions import ConfigError, ContractError, ShapeError
from .nn import FeedForward, LayerNorm, Linear, Module, MultiHeadSelfAttention, attention


def _grid_side(n_tokens):
    side = math.isqrt(n_tokens)
    if side * side != n_tokens:
        raise ShapeError(f"{n_tokens} tokens do not form a square grid")
    return side


def partition_windows(tokens, window_size):
    """Split (..., N_p, D) grid tokens into (..., n_windows, M, D).

    Windows are ordered row-major over the grid and tokens row-major
    inside each window, with ``M = window_size ** 2``.
    """
    tokens = ag.as_tensor(tokens)
    *lead, n_p, d = tokens.shape
    g = _grid_side(n_p)
    if window_size < 1 or g % window_size:
        raise ShapeError(f"window side {window_size} does not divide grid side {g}")
    nw = g // window_size
    L = len(lead)
    x = ag.reshape(tokens, (*lead, nw, window_size, nw, window_size, d))
    x = ag.transpose(x, tuple(range(L)) + (L, L + 2, L + 1, L + 3, L + 4))
    return ag.reshape(x, (*lead, nw * nw, window_size * window_size, d))


def merge_windows(windows):
    """Inverse of :func:`partition_windows`."""
    windows = ag.as_tensor(windows)
    *lead, n_win, m, d = windows.shape
    nw, ws = _grid_side(n_win), _grid_side(m)
    L = len(lead)
    x = ag.reshape(windows, (*lead, nw, nw, ws, ws, d))
    x = ag.transpose(x, tuple(range(L)) + (L, L + 2, L + 1, L + 3, L + 4))
    return ag.reshape(x, (*lead, nw * ws * nw * ws, d))


def adaptive_pool_matrix(n_in, n_out):
    """(n_out, n_in) averaging matrix; bins tile the input exactly when n_out | n_in."""
    if n_out > n_in or n_out < 1:
        raise ShapeError(f"cannot pool {n_in} cells to {n_out}")
    P = np.zeros((n_out, n_in))
    for i in range(n_out):
        lo = (i * n_in) // n_out
        hi = -((-(i + 1) * n_in) // n_out)
        P[i, lo:hi] = 1.0 / (hi - lo)
    return P


def pool_landmarks(lm, target):
    """Mean-pool (..., A_c, H, W) maps to (..., h*w, A_c) tokens."""
    lm = np.asarray(lm, dtype=np.float64)
    h, w = target
    H, W = lm.shape[-2:]
    if h > H or w > W:
        raise ShapeError(f"target {h}x{w} exceeds landmark map {H}x{W}")
    pooled = adaptive_pool_matrix(H, h) @ lm @ adaptive_pool_matrix(W, w).T
    tokens = np.swapaxes(pooled.reshape(*pooled.shape[:-2], h * w), -1, -2)
    return np.ascontiguousarray(tokens)


def downsample_landmark(lm, target, projection=None):
    """Pool a landmark map to the window shape and map channels to width D.

    ``projection`` is a (A_c, D) matrix or :class:`Linear`; when omitted
    the pooled channels are returned as tokens unchanged.
    """
    tokens = Tensor(pool_landmarks(lm, target))
    if projection is None:
        return tokens
    if isinstance(projection, Module):
        return projection(tokens)
    return ag.matmul(tokens, projection)


def relative_position_index(window_size):
    """(M, M) index into a (2w-1)^2 offset table for every query/key pair."""
    coords = np.stack(np.meshgrid(np.arange(window_size), np.arange(window_size),
                                  indexing="ij")).reshape(2, -1)
    rel = coords[:, :, None] - coords[:, None, :] + (window_size - 1)
    return rel[0] * (2 * window_size - 1) + rel[1]


def window_cross_attention(z_img, z_lm, w_q, w_k, w_v, w_o, n_heads, bias=None):
    """Landmark-to-image attention inside each window.

    ``z_img`` is (..., n_windows, M, D); ``z_lm`` is (..., M, D) and is shared
    by all windows. ``bias`` is (heads, M, M) or None. Returns the
    (..., n_windows, M, D) output and the per-head attention weights.
    """
    z_img, z_lm = ag.as_tensor(z_img), ag.as_tensor(z_lm)
    d = z_img.shape[-1]
    if n_heads < 1 or d % n_heads:
        raise ConfigError(f"{n_heads} heads do not divide width {d}")
    if z_lm.shape[-2:] != z_img.shape[-2:]:
        raise ShapeError(f"landmark tokens {z_lm.shape} do not match window {z_img.shape[-2:]}")
    q = ag.matmul(z_lm, w_q)
    q = ag.reshape(q, (*q.shape[:-2], 1, *q.shape[-2:]))
    out, weights = attention(q, ag.matmul(z_img, w_k), ag.matmul(z_img, w_v), n_heads, bias)
    return ag.matmul(out, w_o), weights


class WindowCrossAttention(Module):
    def __init__(self, dim, n_heads, window_size, rng):
        if n_heads < 1 or dim % n_heads:
            raise ConfigError(f"{n_heads} heads do not divide width {dim}")
        self.n_heads = n_heads
        self.window_size = window_size
        s = 1.0 / math.sqrt(dim)
        self.w_q = Tensor(rng.uniform(-s, s, (dim, dim)), requires_grad=True)
        self.w_k = Tensor(rng.uniform(-s, s, (dim, dim)), requires_grad=True)
        self.w_v = Tensor(rng.uniform(-s, s, (dim, dim)), requires_grad=True)
        self.w_o = Tensor(rng.uniform(-s, s, (dim, dim)), requires_grad=True)
        self.bias_table = Tensor(0.02 * rng.standard_normal((n_heads, (2 * window_size - 1) ** 2)),
                                 requires_grad=True)
        self._index = relative_position_index(window_size)
        self.last_weights = None

    def bias(self):
        return self.bias_table[:, self._index]

    def forward(self, z_img, z_lm):
        out, self.last_weights = window_cross_attention(
            z_img, z_lm, self.w_q, self.w_k, self.w_v, self.w_o, self.n_heads, self.bias())
        return out


def cross_fusion_encode(x_img, oca, norm, mlp):
    """Residual fusion block: x' = oca + x, out = mlp(norm(x')) + x'."""
    x_img, oca = ag.as_tensor(x_img), ag.as_tensor(oca)
    if oca.shape != x_img.shape:
        raise ShapeError(f"re-assembled attention {oca.shape} does not match features {x_img.shape}")
    fused = oca + x_img
    return mlp(norm(fused)) + fused


def multiscale_combine(levels, mhsa, norm, mlp, projection):
    """Concatenate level tokens, self-attend, and pool to one embedding per sample.

    The MLP branch reads the normalized *concatenated* tokens while the
    residual carries the attended ones.
    """
    if not levels:
        raise ContractError("multiscale_combine needs at least one level")
    xo = ag.concat(levels, axis=-2) if len(levels) > 1 else ag.as_tensor(levels[0])
    attended = mhsa(xo) + xo
    out = mlp(norm(xo)) + attended
    return projection(ag.mean(out, axis=-2))


class FusionEncoder(Module):
    """Maps (images, landmark maps) batches to embeddings of width ``embed_dim``.

    Images are (B, S, S, C) in [0, 1]; landmark maps are (B, A_c, S, S).
    Images are average-pooled to ``pool_size`` and patchified per level
    with a learned linear projection, standing in for a pretrained backbone.
    """

    def __init__(self, image_channels=3, landmark_channels=4, pool_size=16,
                 levels=(8, 4, 2), windows=(4, 2, 2), dim=64, n_heads=4,
                 embed_dim=64, mlp_ratio=2, rng=None, input_mean=0.5, input_std=0.25,
                 pos_std=0.02):
        if len(levels) != len(windows) or not levels:
            raise ConfigError("levels and windows must be non-empty and equally long")
        for g, w in zip(levels, windows):
            if pool_size % g:
                raise ConfigError(f"level grid {g} does not divide pool size {pool_size}")
            if g % w:
                raise ConfigError(f"window side {w} does not divide level grid {g}")
        if dim % n_heads:
            raise ConfigError(f"{n_heads} heads do not divide width {dim}")
        rng = np.random.default_rng(0) if rng is None else rng
        self.levels, self.windows = tuple(levels), tuple(windows)
        self.pool_size = pool_size
        self.image_channels = image_channels
        self.input_mean, self.input_std = input_mean, input_std
        hidden = mlp_ratio * dim
        self.patch_embed, self.pos_embed, self.lm_proj = [], [], []
        self.cross_attn, self.norms, self.mlps = [], [], []
        for g, w in zip(levels, windows):
            patch = pool_size // g
            self.patch_embed.append(Linear(patch * patch * image_channels, dim, rng))
            self.pos_embed.append(_PositionTable(g * g, dim, rng, pos_std))
            self.lm_proj.append(Linear(landmark_channels, dim, rng))
            self.cross_attn.append(WindowCrossAttention(dim, n_heads, w, rng))
            self.norms.append(LayerNorm(dim))
            self.mlps.append(FeedForward(dim, hidden, rng))
        self.mhsa = MultiHeadSelfAttention(dim, n_heads, rng)
        self.norm = LayerNorm(dim)
        self.mlp = FeedForward(dim, hidden, rng)
        self.proj = Linear(dim, embed_dim, rng)

    def patchify(self, images):
        """(B, S, S, C) -> list of (B, g*g, p*p*C) patch arrays, one per level."""
        images = (np.asarray(images, dtype=np.float64) - self.input_mean) / self.input_std
        S = images.shape[1]
        P = adaptive_pool_matrix(S, self.pool_size)
        pooled = np.moveaxis(P @ np.moveaxis(images, -1, 1) @ P.T, 1, -1)
        out = []
        for g in self.levels:
            p = self.pool_size // g
            x = pooled.reshape(len(images), g, p, g, p, -1).transpose(0, 1, 3, 2, 4, 5)
            out.append(x.reshape(len(images), g * g, -1))
        return out

    def level_features(self, images, landmarks):
        """Per-level fused token grids (the combined features of each level)."""
        lm = (np.asarray(landmarks, dtype=np.float64) - self.input_mean) / self.input_std
        feats = []
        for i, patches in enumerate(self.patchify(images)):
            x_img = self.pos_embed[i](self.patch_embed[i](Tensor(patches)))
            w = self.windows[i]
            z_lm = downsample_landmark(lm, (w, w), self.lm_proj[i])
            oca = merge_windows(self.cross_attn[i](partition_windows(x_img, w), z_lm))
            feats.append(cross_fusion_encode(x_img, oca, self.norms[i], self.mlps[i]))
        return feats

    def forward(self, images, landmarks):
        return multiscale_combine(self.level_features(images, landmarks),
                                  self.mhsa, self.norm, self.mlp, self.proj)


class _PositionTable(Module):
    def __init__(self, n_tokens, dim, rng, std=0.02):
        self.table = Tensor(std * rng.standard_normal((n_tokens, dim)), requires_grad=True)

    def forward(self, x):
        return x + self.table
