"""Mask and class heads over fused query features.

Masks: each query's d-vector is pushed through a d x d projection and
dotted with every pixel of the full-resolution visual map, then squashed
through a sigmoid. Classes: a d x K linear classifier plus softmax,
K = 2 with index 0 = sounding and index 1 = no-object; that ordering is
relied on by the losses and the inference fusion rule.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T

N_CLASSES = 2
SOUNDING = 0
NO_OBJECT = 1

# Prior probability the classifier assigns to "sounding" at initialization.
# Most queries in every frame are background, so starting them near the
# no-object prior keeps the focal term quiet on those easy negatives and
# lets the rare positive drive the classifier gradient from step one.
SOUNDING_PRIOR = 0.01


def init_head_params(rng: np.random.Generator, d: int) -> dict[str, T.Tensor]:
    prior_logit = float(np.log(SOUNDING_PRIOR / (1.0 - SOUNDING_PRIOR)))
    g_bias = np.array([prior_logit, 0.0])
    params = {
        # 1/d keeps initial mask logits small so the sigmoid starts in its
        # linear range; a wider init can saturate whole masks at birth and
        # the overlap loss then sees no gradient at all
        "head.w2": T.Tensor(rng.normal(0.0, 1.0 / d, size=(d, d)),
                            requires_grad=True),
        "head.g": T.Tensor(rng.normal(0.0, np.sqrt(1.0 / d), size=(d, N_CLASSES)),
                           requires_grad=True),
        "head.g_bias": T.Tensor(g_bias, requires_grad=True),
        "loss.h": T.Tensor(rng.normal(0.0, np.sqrt(1.0 / d), size=(d, d)),
                           requires_grad=True),
    }
    return params


def generate_masks(f_av: T.Tensor, f_v4: T.Tensor, w2: T.Tensor) -> T.Tensor:
    """(N, d) queries and (d, H, W) features -> (N, H, W) mask probabilities."""
    if f_av.shape[1] != w2.shape[0] or w2.shape[1] != f_v4.shape[0]:
        raise T.ShapeError(
            f"generate_masks: queries {f_av.shape}, projection {w2.shape}, "
            f"features {f_v4.shape} do not chain")
    d, h, w = f_v4.shape
    flat = T.reshape(f_v4, (d, h * w))
    logits = T.matmul(T.matmul(f_av, w2), flat)
    return T.reshape(T.sigmoid(logits), (f_av.shape[0], h, w))


def classify(f_av: T.Tensor, g: T.Tensor, g_bias: T.Tensor | None = None) -> T.Tensor:
    """(N, d) queries -> (N, K) class distributions."""
    logits = T.matmul(f_av, g)
    if g_bias is not None:
        logits = T.add_rowvec(logits, g_bias)
    return T.softmax_rows(logits)
