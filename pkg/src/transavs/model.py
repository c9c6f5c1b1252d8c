"""Parameter bundle, per-frame forward pass, and checkpointing.

Parameters live in one flat insertion-ordered dict keyed by checkpoint
name, so serialization is a direct dump and optimizer state can key off
the same names. The per-frame forward chains encoders, query fusion, and
the two heads into a prediction set.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

from . import container, encoders, fusion, heads
from . import tensor as T
from .data import T_FRAMES


@dataclass
class ModelConfig:
    n_queries: int = 100
    d: int = 32
    n_enc: int = 2
    n_dec: int = 6
    c_v: int = 16
    audio_hidden: int = 64
    ffn: bool = False

    def validate(self) -> None:
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name != "ffn" and v < 1:
                raise ValueError(f"model config {f.name} must be >= 1, got {v}")


@dataclass
class Predictions:
    """The per-frame prediction set: one (query, mask, class) triple per row."""

    queries: T.Tensor  # (N, d)
    masks: T.Tensor    # (N, H, W)
    probs: T.Tensor    # (N, K)


def init_params(cfg: ModelConfig, seed: int) -> dict[str, T.Tensor]:
    cfg.validate()
    rng = np.random.default_rng([seed, 2024])
    params = encoders.init_encoder_params(rng, cfg.d, cfg.c_v, cfg.audio_hidden)
    params.update(fusion.init_fusion_params(rng, cfg.n_queries, cfg.d, T_FRAMES,
                                            cfg.n_enc, cfg.n_dec, cfg.ffn))
    params.update(heads.init_head_params(rng, cfg.d))
    return params


def forward_frame(params: dict[str, T.Tensor], cfg: ModelConfig, frame,
                  spectrogram, trace: list | None = None) -> Predictions:
    """One frame plus the clip's audio -> prediction set."""
    f1, f2, f3, f4 = encoders.encode_visual(params, frame)
    f_a = encoders.encode_audio(params, spectrogram)
    seqs = {1: fusion.flatten_scale(f1), 2: fusion.flatten_scale(f2),
            3: fusion.flatten_scale(f3)}
    f_av = fusion.run_fusion(params, f_a, seqs, cfg.n_enc, cfg.n_dec, trace=trace)
    masks = heads.generate_masks(f_av, f4, params["head.w2"])
    probs = heads.classify(f_av, params["head.g"], params["head.g_bias"])
    return Predictions(f_av, masks, probs)


def predict_frame(params, cfg: ModelConfig, frame, spectrogram) -> np.ndarray:
    """Inference: fused boolean mask for one frame."""
    from .evaluation import fuse_predictions
    z = forward_frame(params, cfg, frame, spectrogram)
    return fuse_predictions(z.masks.data, z.probs.data)


def clip_predictor(params, cfg: ModelConfig):
    """Predictor closure consumed by evaluate_split."""
    def predict(frames, spectrogram):
        return np.stack([predict_frame(params, cfg, frames[t], spectrogram)
                         for t in range(frames.shape[0])])
    return predict


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

_META_FIELDS = ("n_queries", "d", "n_enc", "n_dec", "c_v", "audio_hidden")


def save_checkpoint(path, params: dict[str, T.Tensor], cfg: ModelConfig,
                    iteration: int, opt_state: dict | None = None) -> None:
    tensors: dict[str, np.ndarray] = {}
    for name, p in params.items():
        tensors[name] = p.data
    tensors["meta.iteration"] = np.array(float(iteration))
    for f in _META_FIELDS:
        tensors[f"meta.{f}"] = np.array(float(getattr(cfg, f)))
    tensors["meta.ffn"] = np.array(1.0 if cfg.ffn else 0.0)
    if opt_state is not None:
        tensors["opt.step"] = np.array(float(opt_state["step"]))
        for name, arr in opt_state["m"].items():
            tensors[f"opt.m.{name}"] = arr
        for name, arr in opt_state["v"].items():
            tensors[f"opt.v.{name}"] = arr
    container.write_tensors(path, tensors)


def load_checkpoint(path):
    """-> (params, ModelConfig, iteration, opt_state or None)."""
    raw = container.read_tensors(path)
    kwargs = {f: int(raw[f"meta.{f}"].reshape(-1)[0]) for f in _META_FIELDS}
    cfg = ModelConfig(ffn=bool(raw["meta.ffn"].reshape(-1)[0]), **kwargs)
    iteration = int(raw["meta.iteration"].reshape(-1)[0])
    params = {name: T.Tensor(arr, requires_grad=True) for name, arr in raw.items()
              if not name.startswith(("meta.", "opt."))}
    opt_state = None
    if "opt.step" in raw:
        opt_state = {
            "step": int(raw["opt.step"].reshape(-1)[0]),
            "m": {n[len("opt.m."):]: a for n, a in raw.items() if n.startswith("opt.m.")},
            "v": {n[len("opt.v."):]: a for n, a in raw.items() if n.startswith("opt.v.")},
        }
    return params, cfg, iteration, opt_state
