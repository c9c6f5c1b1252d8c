"""Command-line entry point.

Subcommands: gen-data, train, eval, infer, verify. Every parsed run
appends one JSON manifest line to runs.log in the working directory.
Exit codes: 0 success, 1 runtime or data failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time


def _cap_threads():
    # Must run before numpy is imported anywhere in this process.
    n = os.environ.get("TRANSAVS_THREADS", "1")
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS",
                "NUMEXPR_NUM_THREADS", "VECLIB_MAXIMUM_THREADS"):
        os.environ.setdefault(var, n)


_cap_threads()

import numpy as np

from . import container, data, evaluation, model, netpbm, report, verify
from .trainer import ConfigError, TrainError, load_config, fit


def _parse_size(text: str) -> tuple[int, int]:
    try:
        h_s, w_s = text.lower().split("x")
        return int(h_s), int(w_s)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected HxW, got {text!r}")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="transavs")
    sub = p.add_subparsers(dest="cmd", required=True)

    g = sub.add_parser("gen-data", help="generate a synthetic clip corpus")
    g.add_argument("--mode", required=True, choices=data.MODES)
    g.add_argument("--out", required=True)
    g.add_argument("--train", type=int, required=True)
    g.add_argument("--valid", type=int, required=True)
    g.add_argument("--test", type=int, required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--size", type=_parse_size, default=(64, 64))

    t = sub.add_parser("train", help="train from a key=value config file")
    t.add_argument("--config", required=True)
    t.add_argument("--resume", default=None, help="checkpoint to continue from")
    t.add_argument("--set", dest="overrides", action="append", default=[],
                   metavar="KEY=VALUE", help="override a config key; wins over the file")
    t.add_argument("--log-every", type=int, default=100)

    e = sub.add_parser("eval", help="evaluate a checkpoint on a split")
    e.add_argument("--ckpt", required=True)
    e.add_argument("--data", required=True, help="manifest.jsonl path")
    e.add_argument("--split", default="test")
    e.add_argument("--out", required=True)
    e.add_argument("--save-masks", action="store_true")

    i = sub.add_parser("infer", help="run one clip through a checkpoint")
    i.add_argument("--ckpt", required=True)
    i.add_argument("--clip", required=True, help="clip directory")
    i.add_argument("--out", required=True)

    v = sub.add_parser("verify", help="run the oracle suite")
    v.add_argument("--checks", nargs="*", default=None,
                   help="subset of check names; default runs everything")
    return p


def cmd_gen_data(args) -> tuple[int, list[str]]:
    h, w = args.size
    manifest = data.write_dataset(args.out, args.train, args.valid, args.test,
                                  args.mode, args.seed, h, w)
    print(manifest)
    return 0, [str(manifest)]


def cmd_train(args) -> tuple[int, list[str]]:
    cfg = load_config(args.config, args.overrides)
    ckpt = fit(cfg, resume=args.resume, log_every=args.log_every)
    print(ckpt)
    return 0, [str(ckpt), os.path.join(cfg.run_dir, "loss.csv")]


def cmd_eval(args) -> tuple[int, list[str]]:
    params, cfg, _, _ = model.load_checkpoint(args.ckpt)
    predictor = model.clip_predictor(params, cfg)
    record = evaluation.evaluate_split(predictor, args.data, args.split,
                                       out_dir=args.out if args.save_masks else None,
                                       save_masks=args.save_masks)
    os.makedirs(args.out, exist_ok=True)
    csv_path, summary_path = evaluation.write_metrics(record, args.out)
    png_path = os.path.join(args.out, "metrics.png")
    report.plot_metrics(csv_path, png_path)
    print(f"MJ={record.mean_j!r} MF={record.mean_f!r}")
    return 0, [csv_path, summary_path, png_path]


def cmd_infer(args) -> tuple[int, list[str]]:
    params, cfg, _, _ = model.load_checkpoint(args.ckpt)
    frames, spectrogram, gt_masks = data.load_clip(args.clip)
    os.makedirs(args.out, exist_ok=True)
    artifacts = []
    dump = {}
    fused_all = []
    for t in range(frames.shape[0]):
        z = model.forward_frame(params, cfg, frames[t], spectrogram)
        masks = z.masks.data
        probs = z.probs.data
        fused = evaluation.fuse_predictions(masks, probs)
        fused_all.append(fused)
        path = os.path.join(args.out, f"fused_{t}.pgm")
        netpbm.write_mask(path, fused)
        artifacts.append(path)
        qdir = os.path.join(args.out, "queries", f"frame_{t}")
        os.makedirs(qdir, exist_ok=True)
        for q in range(masks.shape[0]):
            gray = np.clip(masks[q] * 255.0, 0, 255).astype(np.uint8)
            netpbm.write_pgm(os.path.join(qdir, f"q{q:03d}.pgm"), gray)
        dump[f"frame_{t}.queries"] = z.queries.data
        dump[f"frame_{t}.masks"] = masks
        dump[f"frame_{t}.probs"] = probs
    pred_path = os.path.join(args.out, "predictions.tavs")
    container.write_tensors(pred_path, dump)
    artifacts.append(pred_path)
    panel_path = os.path.join(args.out, "panel.png")
    report.clip_panel(frames, gt_masks, np.stack(fused_all), panel_path)
    artifacts.append(panel_path)
    return 0, artifacts


def cmd_verify(args) -> tuple[int, list[str]]:
    results = verify.run_checks(args.checks)
    width = max(len(r.name) for r in results)
    failed = []
    for r in results:
        status = "ok" if r.passed else "FAIL"
        print(f"{r.name:<{width}}  max_err={r.max_err:.3e}  "
              f"threshold={r.threshold:.1e}  {status}  ({r.seconds:.1f}s)")
        if not r.passed:
            failed.append(r.name)
    if failed:
        print("failed checks: " + ", ".join(failed))
        return 1, []
    return 0, []


def _write_manifest(cmd: str, args_dict: dict, artifacts: list[str],
                    seconds: float, status: int):
    line = {"cmd": cmd, "args": args_dict, "artifacts": artifacts,
            "seconds": round(seconds, 3), "exit": status}
    try:
        with open("runs.log", "a", encoding="ascii") as f:
            f.write(json.dumps(line, sort_keys=True) + "\n")
    except OSError:
        pass


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    handlers = {"gen-data": cmd_gen_data, "train": cmd_train, "eval": cmd_eval,
                "infer": cmd_infer, "verify": cmd_verify}
    args_dict = {k: v for k, v in vars(args).items() if k != "cmd"}
    args_dict = {k: (list(v) if isinstance(v, tuple) else v)
                 for k, v in args_dict.items()}
    t0 = time.perf_counter()
    artifacts: list[str] = []
    try:
        status, artifacts = handlers[args.cmd](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        status = 2
    except TrainError as exc:
        print(f"training aborted: {exc}", file=sys.stderr)
        status = 1
    except (OSError, ValueError, container.ContainerError, netpbm.NetpbmError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        status = 1
    _write_manifest(args.cmd, args_dict, artifacts, time.perf_counter() - t0, status)
    return status


if __name__ == "__main__":
    sys.exit(main())
