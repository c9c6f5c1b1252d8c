"""Training loop: batched forward/backward, optimizer stepping,
checkpoint cadence, and append-safe loss logging.

Batches are drawn statelessly: iteration k uses a generator seeded by
(seed, k), so a resumed run replays the exact sample sequence of an
uninterrupted one and two runs with the same config produce identical
logs byte for byte. The loss CSV carries one row per update with the
component values and the thresholds in effect.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from . import data, losses, model, optim, report
from . import tensor as T

LOSS_CSV_HEADER = "iter,loss,aqdl,aqml,class,dice,delta1,delta2"


class ConfigError(ValueError):
    def __init__(self, key: str, message: str):
        super().__init__(message)
        self.key = key


class TrainError(RuntimeError):
    def __init__(self, message: str, components: dict | None = None):
        super().__init__(message)
        self.components = components or {}


@dataclass
class TrainConfig:
    data: str = ""
    run_dir: str = ""
    base_lr: float = 1e-4
    encoder_lr_multiplier: float = 0.1
    # the lone per-frame sounding target is diluted by the mean over queries,
    # so the tiny classifier matrix may need a faster clock than the rest
    classifier_lr_multiplier: float = 1.0
    weight_decay: float = 1e-4
    batch_size: int = 4
    max_iterations: int = 2000
    seed: int = 0
    checkpoint_every: int = 500
    s4_first_frame_only: bool = False
    n_queries: int = 100
    d: int = 32
    n_enc: int = 2
    n_dec: int = 6
    c_v: int = 16
    audio_hidden: int = 64
    ffn: bool = False
    loss: losses.LossConfig = field(default_factory=losses.LossConfig)

    def validate(self) -> None:
        if not self.data:
            raise ConfigError("data", "config needs a data manifest path")
        if not self.run_dir:
            raise ConfigError("run_dir", "config needs a run directory")
        if self.batch_size < 1:
            raise ConfigError("batch_size", f"batch_size must be >= 1, got {self.batch_size}")
        if self.max_iterations < 0:
            raise ConfigError("max_iterations", "max_iterations must be >= 0")
        if self.base_lr <= 0:
            raise ConfigError("base_lr", f"base_lr must be positive, got {self.base_lr}")
        if self.checkpoint_every < 1:
            raise ConfigError("checkpoint_every", "checkpoint_every must be >= 1")
        self.loss.validate()

    def model_config(self) -> model.ModelConfig:
        return model.ModelConfig(n_queries=self.n_queries, d=self.d, n_enc=self.n_enc,
                                 n_dec=self.n_dec, c_v=self.c_v,
                                 audio_hidden=self.audio_hidden, ffn=self.ffn)


# ---------------------------------------------------------------------------
# Flat key=value config files
# ---------------------------------------------------------------------------

def _parse_scalar(key: str, raw: str, typ):
    raw = raw.strip()
    try:
        if typ is bool:
            if raw.lower() in ("true", "1"):
                return True
            if raw.lower() in ("false", "0"):
                return False
            raise ValueError(raw)
        return typ(raw)
    except ValueError:
        raise ConfigError(key, f"cannot parse {raw!r} as {typ.__name__} for key {key!r}")


def apply_kv(cfg: TrainConfig, key: str, raw: str) -> None:
    if key.startswith("loss."):
        sub = key[len("loss."):]
        for f in fields(losses.LossConfig):
            if f.name == sub:
                setattr(cfg.loss, sub, _parse_scalar(key, raw, type(getattr(cfg.loss, sub))))
                return
        raise ConfigError(key, f"unknown config key {key!r}")
    for f in fields(TrainConfig):
        if f.name == key and f.name != "loss":
            setattr(cfg, key, _parse_scalar(key, raw, type(getattr(cfg, key))))
            return
    raise ConfigError(key, f"unknown config key {key!r}")


def parse_config_text(text: str, overrides=()) -> TrainConfig:
    cfg = TrainConfig()
    for ln, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(line, f"line {ln}: expected key = value, got {line!r}")
        key, raw = line.split("=", 1)
        apply_kv(cfg, key.strip(), raw)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(item, f"override must be key=value, got {item!r}")
        key, raw = item.split("=", 1)
        apply_kv(cfg, key.strip(), raw)
    return cfg


def load_config(path, overrides=()) -> TrainConfig:
    return parse_config_text(Path(path).read_text(), overrides)


def config_to_text(cfg: TrainConfig) -> str:
    buf = io.StringIO()
    for f in fields(TrainConfig):
        if f.name == "loss":
            continue
        v = getattr(cfg, f.name)
        buf.write(f"{f.name} = {_fmt(v)}\n")
    for f in fields(losses.LossConfig):
        buf.write(f"loss.{f.name} = {_fmt(getattr(cfg.loss, f.name))}\n")
    return buf.getvalue()


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


# ---------------------------------------------------------------------------
# Steps and the fit loop
# ---------------------------------------------------------------------------

def train_step(params, model_cfg: model.ModelConfig, optimizer: optim.AdamW,
               samples, loss_cfg: losses.LossConfig, iteration: int) -> dict:
    """One batched update. samples: (frames, spectrogram, gt_masks, frame_idx)."""
    n = len(samples)
    comps_acc = {"aqdl": 0.0, "aqml": 0.0, "class": 0.0, "dice": 0.0,
                 "delta1": 0.0, "delta2": 0.0}
    with T.record() as tape:
        total = None
        for frames, spec, gt_masks, t in samples:
            z = model.forward_frame(params, model_cfg, frames[t], spec)
            if not (np.isfinite(z.masks.data).all()
                    and np.isfinite(z.probs.data).all()):
                tape.clear()
                raise TrainError(
                    f"non-finite forward outputs at iteration {iteration}", comps_acc)
            sample_loss, comps = losses.total_loss(
                z.queries, z.masks, z.probs, params["loss.h"], gt_masks[t],
                loss_cfg, iteration)
            total = sample_loss if total is None else T.add(total, sample_loss)
            for k in comps:
                comps_acc[k] += comps[k] / n
        total = T.scale(total, 1.0 / n)
        loss_value = total.item()
        if not np.isfinite(loss_value):
            tape.clear()
            raise TrainError(
                f"non-finite loss {loss_value} at iteration {iteration}; "
                f"components: {comps_acc}", comps_acc)
        tape.backward(total)
    optimizer.step()
    optimizer.zero_grad()
    comps_acc["loss"] = loss_value
    return comps_acc


def _format_row(it: int, comps: dict) -> str:
    cells = [str(it)] + [repr(comps[k]) for k in
                         ("loss", "aqdl", "aqml", "class", "dice", "delta1", "delta2")]
    return ",".join(cells)


class _ClipCache:
    def __init__(self, manifest_path, records):
        self.manifest_path = manifest_path
        self.records = records
        self._cache: dict[str, tuple] = {}

    def get(self, idx: int):
        rec = self.records[idx]
        if rec["dir"] not in self._cache:
            self._cache[rec["dir"]] = data.load_clip(
                data.manifest_clip_dir(self.manifest_path, rec))
        return self._cache[rec["dir"]]


def sample_batch(cache: _ClipCache, cfg: TrainConfig, iteration: int, mode: str):
    rng = np.random.default_rng([cfg.seed, iteration])
    clip_idx = rng.integers(0, len(cache.records), size=cfg.batch_size)
    frame_idx = rng.integers(0, data.T_FRAMES, size=cfg.batch_size)
    if cfg.s4_first_frame_only and mode == "S4":
        frame_idx = np.zeros_like(frame_idx)
    batch = []
    for ci, fi in zip(clip_idx, frame_idx):
        frames, spec, masks = cache.get(int(ci))
        batch.append((frames, spec, masks, int(fi)))
    return batch


def fit(cfg: TrainConfig, resume=None, log_every: int = 0, log_fn=print) -> Path:
    """Run the training loop; returns the final checkpoint path."""
    cfg.validate()
    run_dir = Path(cfg.run_dir)
    ckpt_dir = run_dir / "checkpoints"
    ckpt_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "config").write_text(config_to_text(cfg))

    records = [r for r in data.read_manifest(cfg.data) if r["split"] == "train"]
    if not records:
        raise TrainError(f"no training clips in manifest {cfg.data}")
    mode = records[0]["mode"]
    cache = _ClipCache(cfg.data, records)

    model_cfg = cfg.model_config()
    if resume is not None:
        params, ckpt_cfg, start_iter, opt_state = model.load_checkpoint(resume)
        if ckpt_cfg != model_cfg:
            raise TrainError(
                f"checkpoint model config {ckpt_cfg} does not match run config {model_cfg}")
    else:
        params = model.init_params(model_cfg, cfg.seed)
        start_iter, opt_state = 0, None

    optimizer = optim.AdamW(params, cfg.base_lr, weight_decay=cfg.weight_decay,
                            lr_scales={"enc.": cfg.encoder_lr_multiplier,
                                       "head.g": cfg.classifier_lr_multiplier})
    if opt_state is not None:
        optimizer.load_state(opt_state)
    if resume is None:
        model.save_checkpoint(ckpt_dir / "iter_000000.tavs", params, model_cfg, 0,
                              optimizer.state())

    loss_csv = run_dir / "loss.csv"
    kept = [LOSS_CSV_HEADER]
    if loss_csv.exists():
        for line in loss_csv.read_text().splitlines()[1:]:
            if line and int(line.split(",", 1)[0]) < start_iter:
                kept.append(line)
    loss_csv.write_text("".join(s + "\n" for s in kept))

    last_ckpt = ckpt_dir / f"iter_{start_iter:06d}.tavs"
    with open(loss_csv, "a") as log:
        for it in range(start_iter, cfg.max_iterations):
            batch = sample_batch(cache, cfg, it, mode)
            comps = train_step(params, model_cfg, optimizer, batch, cfg.loss, it)
            log.write(_format_row(it, comps) + "\n")
            if log_every and (it + 1) % log_every == 0:
                log_fn(f"iter {it + 1}/{cfg.max_iterations} loss {comps['loss']:.4f}")
            done = it + 1
            if done % cfg.checkpoint_every == 0 or done == cfg.max_iterations:
                log.flush()
                last_ckpt = ckpt_dir / f"iter_{done:06d}.tavs"
                model.save_checkpoint(last_ckpt, params, model_cfg, done,
                                      optimizer.state())

    rows = loss_csv.read_text().count("\n") - 1
    if rows > 0:
        report.plot_loss(loss_csv, run_dir / "loss.png")
    return last_ckpt
