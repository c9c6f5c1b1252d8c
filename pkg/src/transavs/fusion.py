"""Audio-query transformer: disentanglement, self-attention encoder,
round-robin cross-attention decoder.

Per-second audio embeddings are mixed into N independent queries by a
learned N x T matrix. The queries pass through N_1 self-attention layers,
then N_2 decoder layers whose keys and values come from the visual scale
ladder, cycling over scales with i = (l mod 3) + 1 where l counts from 1,
so layers consume scales 2, 3, 1, 2, 3, 1, ...

Layers are single-head scaled dot-product attention plus a residual and
nothing else. An optional two-layer feed-forward block with its own
residual can be appended per layer for experiments (off by default).
"""

from __future__ import annotations

import numpy as np

from . import tensor as T


def init_fusion_params(rng: np.random.Generator, n_queries: int, d: int, t_frames: int,
                       n_enc: int, n_dec: int, ffn: bool = False) -> dict[str, T.Tensor]:
    """Fresh fusion weights keyed by their checkpoint names (layers 1-indexed)."""
    params: dict[str, T.Tensor] = {}
    params["fusion.w1"] = T.Tensor(
        rng.normal(0.0, 1.0 / np.sqrt(t_frames), size=(n_queries, t_frames)),
        requires_grad=True)
    std = np.sqrt(1.0 / d)
    for n in range(1, n_enc + 1):
        for key in ("q", "k", "v"):
            params[f"fusion.enc.{n}.{key}"] = T.Tensor(
                rng.normal(0.0, std, size=(d, d)), requires_grad=True)
        if ffn:
            _ffn_params(params, f"fusion.enc.{n}", d, rng)
    for l in range(1, n_dec + 1):
        for key in ("q", "k", "v"):
            params[f"fusion.dec.{l}.{key}"] = T.Tensor(
                rng.normal(0.0, std, size=(d, d)), requires_grad=True)
        if ffn:
            _ffn_params(params, f"fusion.dec.{l}", d, rng)
    return params


def _ffn_params(params, prefix: str, d: int, rng) -> None:
    std = np.sqrt(1.0 / d)
    params[f"{prefix}.ffn1"] = T.Tensor(rng.normal(0.0, std, size=(d, 2 * d)),
                                        requires_grad=True)
    params[f"{prefix}.ffn2"] = T.Tensor(rng.normal(0.0, std, size=(2 * d, d)),
                                        requires_grad=True)


def disentangle(f_a: T.Tensor, w1: T.Tensor) -> T.Tensor:
    """Mix (T, d) audio embeddings into (N, d) initial queries."""
    if w1.shape[1] != f_a.shape[0]:
        raise T.ShapeError(
            f"disentangle: mixing matrix {w1.shape} does not fit audio {f_a.shape}")
    return T.matmul(w1, f_a)


def attention(q: T.Tensor, k: T.Tensor, v: T.Tensor) -> T.Tensor:
    """softmax(q k^T / sqrt(d)) v for row-sequence operands."""
    d = q.shape[1]
    scores = T.scale(T.matmul(q, T.transpose(k)), 1.0 / np.sqrt(d))
    return T.matmul(T.softmax_rows(scores), v)


def _maybe_ffn(params, prefix: str, x: T.Tensor) -> T.Tensor:
    w1 = params.get(f"{prefix}.ffn1")
    if w1 is None:
        return x
    return T.add(T.matmul(T.relu(T.matmul(x, w1)), params[f"{prefix}.ffn2"]), x)


def encoder_layer(params: dict[str, T.Tensor], n: int, a_q: T.Tensor) -> T.Tensor:
    """Self-attention over the queries plus residual."""
    prefix = f"fusion.enc.{n}"
    out = T.add(attention(T.matmul(a_q, params[f"{prefix}.q"]),
                          T.matmul(a_q, params[f"{prefix}.k"]),
                          T.matmul(a_q, params[f"{prefix}.v"])), a_q)
    return _maybe_ffn(params, prefix, out)


def decoder_layer(params: dict[str, T.Tensor], l: int, f_av: T.Tensor,
                  visual_seq: T.Tensor) -> T.Tensor:
    """Cross-attention from queries to one flattened visual scale, plus residual."""
    prefix = f"fusion.dec.{l}"
    out = T.add(attention(T.matmul(f_av, params[f"{prefix}.q"]),
                          T.matmul(visual_seq, params[f"{prefix}.k"]),
                          T.matmul(visual_seq, params[f"{prefix}.v"])), f_av)
    return _maybe_ffn(params, prefix, out)


def scale_for_layer(l: int) -> int:
    """Round-robin visual scale for decoder layer l (1-based): (l mod 3) + 1."""
    return (l % 3) + 1


def flatten_scale(f_v: T.Tensor) -> T.Tensor:
    """(d, h, w) feature map -> (h*w, d) sequence, pixels in row-major order."""
    d, h, w = f_v.shape
    return T.transpose(T.reshape(f_v, (d, h * w)))


def run_fusion(params: dict[str, T.Tensor], f_a: T.Tensor,
               visual_seqs: dict[int, T.Tensor], n_enc: int, n_dec: int,
               schedule=None, trace: list | None = None) -> T.Tensor:
    """Full pipeline: disentangle, N_1 encoder layers, N_2 decoder layers.

    visual_seqs maps scale index 1..3 to a flattened (h_i*w_i, d) sequence.
    ``schedule`` overrides the per-layer scale choice (callable l -> scale);
    ``trace`` collects (layer, scale, kv_rows) tuples for inspection.
    """
    if n_enc < 1 or n_dec < 1:
        raise ValueError(f"layer counts must be >= 1, got N_1={n_enc}, N_2={n_dec}")
    pick = schedule if schedule is not None else scale_for_layer
    a_q = disentangle(f_a, params["fusion.w1"])
    for n in range(1, n_enc + 1):
        a_q = encoder_layer(params, n, a_q)
    f_av = a_q
    for l in range(1, n_dec + 1):
        i = pick(l)
        if i not in (1, 2, 3):
            raise RuntimeError(f"decoder schedule produced scale {i} at layer {l}")
        seq = visual_seqs[i]
        if trace is not None:
            trace.append((l, i, seq.shape[0]))
        f_av = decoder_layer(params, l, f_av, seq)
    return f_av
