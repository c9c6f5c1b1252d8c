"""Trainable toy encoders for frames and spectrograms.

The visual encoder is a four-stage conv+relu pyramid: a full-resolution
stem followed by three stride-2 stages, tapped at strides 2, 4 and 8.
Each tap gets a learned channel projection to width d, giving the feature
ladder d x H/8 x W/8, d x H/4 x W/4, d x H/2 x W/2, plus a full-size map
built by 2x nearest upsampling of the stride-2 tap and its own
projection.

The audio encoder embeds each of the T spectrogram slices independently
with a shared two-layer perceptron, one d-vector per slice.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .data import F_BINS, T_BINS, T_FRAMES

VISUAL_STAGES = 4


def init_encoder_params(rng: np.random.Generator, d: int, c_v: int = 16,
                        audio_hidden: int = 64) -> dict[str, T.Tensor]:
    """Fresh encoder weights keyed by their checkpoint names."""
    params: dict[str, T.Tensor] = {}

    def conv(name, c_out, c_in, k=3):
        std = np.sqrt(2.0 / (c_in * k * k))
        params[f"enc.vis.stage{name}.w"] = T.Tensor(
            rng.normal(0.0, std, size=(c_out, c_in, k, k)), requires_grad=True)
        params[f"enc.vis.stage{name}.b"] = T.zeros((c_out,), requires_grad=True)

    conv(0, c_v, 3)
    for i in (1, 2, 3):
        conv(i, c_v, c_v)
    for i in (1, 2, 3, 4):
        params[f"enc.proj.{i}"] = T.Tensor(
            rng.normal(0.0, np.sqrt(1.0 / c_v), size=(d, c_v)), requires_grad=True)

    n_in = F_BINS * T_BINS
    params["enc.aud.w1"] = T.Tensor(
        rng.normal(0.0, np.sqrt(2.0 / n_in), size=(n_in, audio_hidden)), requires_grad=True)
    params["enc.aud.b1"] = T.zeros((audio_hidden,), requires_grad=True)
    params["enc.aud.w2"] = T.Tensor(
        rng.normal(0.0, np.sqrt(1.0 / audio_hidden), size=(audio_hidden, d)),
        requires_grad=True)
    params["enc.aud.b2"] = T.zeros((d,), requires_grad=True)
    return params


def channel_project(x: T.Tensor, w: T.Tensor) -> T.Tensor:
    """Apply a (d, c) matrix across the channel axis of a (c, h, w) map."""
    c, h, wd = x.shape
    flat = T.reshape(x, (c, h * wd))
    return T.reshape(T.matmul(w, flat), (w.shape[0], h, wd))


def encode_visual(params: dict[str, T.Tensor], frame) -> tuple[T.Tensor, ...]:
    """Frame (3, H, W) -> feature ladder (f1, f2, f3, f4) of widths d."""
    x = frame if isinstance(frame, T.Tensor) else T.Tensor(frame)
    if x.data.ndim != 3 or x.shape[0] != 3:
        raise T.ShapeError(f"encode_visual expects (3, H, W), got {x.shape}")
    h = T.relu(T.conv2d(x, params["enc.vis.stage0.w"], params["enc.vis.stage0.b"],
                        stride=1, padding=1))
    taps = []
    for i in (1, 2, 3):
        h = T.relu(T.conv2d(h, params[f"enc.vis.stage{i}.w"], params[f"enc.vis.stage{i}.b"],
                            stride=2, padding=1))
        taps.append(h)
    s2, s4, s8 = taps
    f1 = channel_project(s8, params["enc.proj.1"])
    f2 = channel_project(s4, params["enc.proj.2"])
    f3 = channel_project(s2, params["enc.proj.3"])
    f4 = channel_project(T.upsample_nearest2x(s2), params["enc.proj.4"])
    return f1, f2, f3, f4


def encode_audio(params: dict[str, T.Tensor], spectrogram) -> T.Tensor:
    """Spectrogram (T, F, T_b) -> per-slice embeddings (T, d)."""
    x = spectrogram if isinstance(spectrogram, T.Tensor) else T.Tensor(spectrogram)
    if x.shape != (T_FRAMES, F_BINS, T_BINS):
        raise T.ShapeError(
            f"encode_audio expects {(T_FRAMES, F_BINS, T_BINS)}, got {x.shape}")
    rows = T.reshape(x, (T_FRAMES, F_BINS * T_BINS))
    hidden = T.relu(T.add_rowvec(T.matmul(rows, params["enc.aud.w1"]),
                                 params["enc.aud.b1"]))
    return T.add_rowvec(T.matmul(hidden, params["enc.aud.w2"]), params["enc.aud.b2"])
