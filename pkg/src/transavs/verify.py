"""Self-contained oracle suite behind the `verify` subcommand.

Every check pits a fast implementation against an independent reference:
central finite differences for gradients, explicit per-element loops for
attention, losses, metrics, and the inference rule, and exhaustive
enumeration for the assignment. Each check reports its worst error and
the threshold it must beat.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass
from itertools import permutations

import numpy as np

from . import evaluation, fusion, heads, losses, model
from . import tensor as T
from .heads import SOUNDING


@dataclass
class CheckResult:
    name: str
    max_err: float
    threshold: float
    passed: bool
    seconds: float


def _rel(a: float, b: float) -> float:
    return abs(a - b) / max(1.0, abs(a), abs(b))


# ---------------------------------------------------------------------------
# Gradient checks
# ---------------------------------------------------------------------------

def check_op_gradients() -> tuple[float, float]:
    cases = [
        ("add", lambda a, b: T.tsum(T.square(T.add(a, b))), [(3, 4), (3, 4)], (-1, 1)),
        ("sub", lambda a, b: T.tsum(T.square(T.sub(a, b))), [(3, 4), (3, 4)], (-1, 1)),
        ("mul", lambda a, b: T.tsum(T.square(T.mul(a, b))), [(3, 4), (3, 4)], (-1, 1)),
        ("scale", lambda a: T.tsum(T.square(T.scale(a, -2.5))), [(3, 4)], (-1, 1)),
        ("add_scalar", lambda a: T.tsum(T.square(T.add_scalar(a, 0.7))), [(3, 4)], (-1, 1)),
        ("add_rowvec", lambda a, b: T.tsum(T.square(T.add_rowvec(a, b))),
         [(3, 4), (4,)], (-1, 1)),
        ("relu", lambda a: T.tsum(T.square(T.relu(a))), [(3, 4)], (0.1, 1)),
        ("log", lambda a: T.tsum(T.square(T.log(a))), [(3, 4)], (0.5, 2)),
        ("square", lambda a: T.tsum(T.square(T.square(a))), [(3, 4)], (-1, 1)),
        ("sqrt", lambda a: T.tsum(T.square(T.sqrt(a))), [(3, 4)], (0.5, 2)),
        ("reciprocal", lambda a: T.tsum(T.square(T.reciprocal(a))), [(3, 4)], (0.5, 2)),
        ("powc", lambda a: T.tsum(T.square(T.powc(a, 1.5))), [(3, 4)], (0.5, 2)),
        ("sigmoid", lambda a: T.tsum(T.square(T.sigmoid(a))), [(3, 4)], (-2, 2)),
        ("sum_axis", lambda a: T.tsum(T.square(T.tsum(a, axis=0))), [(3, 4)], (-1, 1)),
        ("mean", lambda a: T.square(T.mean(a)), [(3, 4)], (-1, 1)),
        ("reshape", lambda a: T.tsum(T.square(T.reshape(a, (4, 3)))), [(3, 4)], (-1, 1)),
        ("transpose", lambda a: T.tsum(T.square(T.transpose(a))), [(3, 4)], (-1, 1)),
        ("concat", lambda a, b: T.tsum(T.square(T.concat([a, b], axis=1))),
         [(3, 2), (3, 4)], (-1, 1)),
        ("gather_rows", lambda a: T.tsum(T.square(T.gather_rows(a, [0, 2, 2, 1]))),
         [(3, 4)], (-1, 1)),
        ("upsample", lambda a: T.tsum(T.square(T.upsample_nearest2x(a))),
         [(2, 3, 4)], (-1, 1)),
        ("matmul", lambda a, b: T.tsum(T.square(T.matmul(a, b))),
         [(3, 4), (4, 2)], (-1, 1)),
        ("softmax_rows", lambda a: T.tsum(T.square(T.softmax_rows(a))), [(3, 4)], (-2, 2)),
        ("conv2d", lambda x, w, b: T.tsum(T.square(T.conv2d(x, w, b, stride=2, padding=1))),
         [(2, 5, 5), (3, 2, 3, 3), (3,)], (-1, 1)),
    ]
    worst = 0.0
    for k, (name, fn, shapes, (lo, hi)) in enumerate(cases):
        rng = np.random.default_rng([99, k])
        args = [T.Tensor(rng.uniform(lo, hi, size=s)) for s in shapes]
        worst = max(worst, T.gradcheck(fn, *args))
    return worst, 1e-4


def check_fusion_gradient() -> tuple[float, float]:
    # Full pipeline on N=4 queries, d=8, two encoder and two decoder layers.
    rng = np.random.default_rng(1234)
    params = fusion.init_fusion_params(rng, 4, 8, 5, 2, 2)
    f_a = rng.normal(size=(5, 8))
    seqs = {1: rng.normal(size=(4, 8)), 2: rng.normal(size=(6, 8)),
            3: rng.normal(size=(5, 8))}
    names = sorted(params)

    def f(*weights):
        p = dict(zip(names, weights))
        vs = {i: T.Tensor(seqs[i]) for i in seqs}
        return T.tsum(T.square(fusion.run_fusion(p, T.Tensor(f_a), vs, 2, 2)))

    args = [T.Tensor(params[n].data.copy()) for n in names]
    return T.gradcheck(f, *args), 1e-4


def check_loss_gradient() -> tuple[float, float]:
    # Combined objective through the whole tiny model, every parameter
    # perturbed, with all selections frozen at the evaluation point.
    cfg = model.ModelConfig(n_queries=4, d=6, n_enc=1, n_dec=2, c_v=4, audio_hidden=4)
    params = model.init_params(cfg, seed=5)
    rng = np.random.default_rng(55)
    frame = rng.uniform(size=(3, 16, 16))
    spec = rng.uniform(size=(5, 32, 8))
    gt = rng.uniform(size=(16, 16)) > 0.6
    loss_cfg = losses.LossConfig(d0=8.0)
    # thresholds below the classifier's initial sounding prior so the
    # untrained model's queries populate S1 and S2
    loss_cfg.fixed_delta1 = loss_cfg.fixed_delta2 = 0.005
    loss_cfg.schedule_mode = "fixed"
    names = list(params)

    def forward(p):
        z = model.forward_frame(p, cfg, frame, spec)
        return z

    z0 = forward(params)
    frozen = losses.freeze_gates(z0.queries, z0.masks, z0.probs, params["loss.h"],
                                 gt, loss_cfg, 0)

    def f(*weights):
        p = dict(zip(names, weights))
        z = forward(p)
        total, _ = losses.total_loss(z.queries, z.masks, z.probs, p["loss.h"],
                                     gt, loss_cfg, 0, frozen=frozen)
        return total

    args = [T.Tensor(params[n].data.copy()) for n in names]
    return T.gradcheck(f, *args), 1e-4


# ---------------------------------------------------------------------------
# Brute-force oracles
# ---------------------------------------------------------------------------

def attention_reference(q, k, v):
    out = np.zeros((q.shape[0], v.shape[1]))
    for i in range(q.shape[0]):
        scores = np.array([float(np.dot(q[i], k[j])) / math.sqrt(q.shape[1])
                           for j in range(k.shape[0])])
        e = np.exp(scores - scores.max())
        w = e / e.sum()
        for j in range(k.shape[0]):
            out[i] += w[j] * v[j]
    return out


def check_attention_oracle() -> tuple[float, float]:
    worst = 0.0
    for seed in range(20):
        rng = np.random.default_rng([7, seed])
        params = fusion.init_fusion_params(rng, 3, 4, 5, 1, 1)
        a_q = rng.normal(size=(3, 4))
        seq = rng.normal(size=(9, 4))
        enc = fusion.encoder_layer(params, 1, T.Tensor(a_q)).data
        enc_ref = attention_reference(a_q @ params["fusion.enc.1.q"].data,
                                      a_q @ params["fusion.enc.1.k"].data,
                                      a_q @ params["fusion.enc.1.v"].data) + a_q
        dec = fusion.decoder_layer(params, 1, T.Tensor(a_q), T.Tensor(seq)).data
        dec_ref = attention_reference(a_q @ params["fusion.dec.1.q"].data,
                                      seq @ params["fusion.dec.1.k"].data,
                                      seq @ params["fusion.dec.1.v"].data) + a_q
        worst = max(worst, float(np.abs(enc - enc_ref).max()),
                    float(np.abs(dec - dec_ref).max()))
    return worst, 1e-12


def aqdl_reference(queries, probs, h, delta1, d0, norm="n(n+1)"):
    s1 = [k for k in range(queries.shape[0]) if probs[k, SOUNDING] > delta1]
    if len(s1) < 2:
        return 0.0
    total = 0.0
    for a in range(len(s1)):
        for b in range(a + 1, len(s1)):
            sq = float((((queries[s1[a]] - queries[s1[b]]) @ h) ** 2).sum())
            if sq < d0:
                total += 1.0 / max(sq, losses.TINY_DIST)
    n1 = len(s1)
    denom = n1 * (n1 - 1) if norm == "n(n-1)" else n1 * (n1 + 1)
    return 2.0 / denom * total


def check_aqdl_oracle() -> tuple[float, float]:
    cfg = losses.LossConfig(d0=8.0)
    worst = 0.0
    for seed in range(100):
        rng = np.random.default_rng([13, seed])
        n, d = 6, 4
        queries = rng.normal(size=(n, d))
        probs = rng.uniform(size=(n, 2))
        probs /= probs.sum(axis=1, keepdims=True)
        h = rng.normal(size=(d, d))
        delta1 = rng.uniform(0.3, 0.7)
        gates = losses.compute_aqdl_gates(queries, probs, h, delta1, cfg)
        got = losses.aqdl(T.Tensor(queries), T.Tensor(h), gates, cfg).item()
        ref = aqdl_reference(queries, probs, h, delta1, cfg.d0)
        worst = max(worst, _rel(got, ref))
    return worst, 1e-12


def aqml_reference(masks, probs, delta2, norm="n(n+1)"):
    s2 = [k for k in range(masks.shape[0]) if probs[k, SOUNDING] > delta2]
    if len(s2) < 2:
        return 0.0
    hh, ww = masks.shape[1:]
    total = 0.0
    for a in range(len(s2)):
        for b in range(a + 1, len(s2)):
            mi, mj = masks[s2[a]], masks[s2[b]]
            acc = 0.0
            for y in range(hh):
                for x in range(ww):
                    acc += (1.0 if mi[y, x] > 0.5 else 0.0) * mj[y, x]
                    acc += mi[y, x] * (1.0 if mj[y, x] > 0.5 else 0.0)
            total += acc / (2.0 * hh * ww)
    n2 = len(s2)
    denom = n2 * (n2 - 1) if norm == "n(n-1)" else n2 * (n2 + 1)
    return 2.0 / denom * total


def check_aqml_oracle() -> tuple[float, float]:
    cfg = losses.LossConfig()
    worst = 0.0
    for seed in range(100):
        rng = np.random.default_rng([17, seed])
        n = 4
        masks = rng.uniform(0.01, 0.99, size=(n, 8, 8))
        probs = rng.uniform(size=(n, 2))
        probs /= probs.sum(axis=1, keepdims=True)
        delta2 = rng.uniform(0.3, 0.7)
        gates = losses.compute_aqml_gates(masks, probs, delta2)
        got = losses.aqml(T.Tensor(masks), gates, cfg).item()
        ref = aqml_reference(masks, probs, delta2)
        worst = max(worst, _rel(got, ref))
    return worst, 1e-12


def check_threshold_schedule() -> tuple[float, float]:
    cfg = losses.LossConfig()
    errs = [abs(losses.threshold_at(0, cfg)[0] - 0.55),
            abs(losses.threshold_at(90000, cfg)[0] - 0.65),
            abs(losses.threshold_at(5000, cfg)[0] - (0.55 + 0.10 / 18.0))]
    prev = 0.0
    for it in range(0, 200001, 500):
        d1, d2 = losses.threshold_at(it, cfg)
        if d1 < prev or d1 != d2 or not (0.55 <= d1 <= 0.65):
            errs.append(1.0)
        prev = d1
    return max(errs), 1e-12


def check_round_robin() -> tuple[float, float]:
    rng = np.random.default_rng(21)
    params = fusion.init_fusion_params(rng, 4, 8, 5, 1, 6)
    seqs = {1: T.Tensor(rng.normal(size=(64, 8))),
            2: T.Tensor(rng.normal(size=(256, 8))),
            3: T.Tensor(rng.normal(size=(1024, 8)))}
    trace = []
    fusion.run_fusion(params, T.Tensor(rng.normal(size=(5, 8))), seqs, 1, 6,
                      trace=trace)
    order_ok = [s for (_, s, _) in trace] == [2, 3, 1, 2, 3, 1]
    rows_ok = [r for (_, _, r) in trace] == [256, 1024, 64, 256, 1024, 64]
    return (0.0 if order_ok and rows_ok else 1.0), 0.5


def check_region_metrics() -> tuple[float, float]:
    worst = 0.0
    beta_sq = 0.3
    for seed in range(1000):
        rng = np.random.default_rng([23, seed])
        m = rng.uniform(size=(16, 16)) > rng.uniform(0.2, 0.8)
        y = rng.uniform(size=(16, 16)) > rng.uniform(0.2, 0.8)
        inter = sum(1 for i in range(16) for j in range(16) if m[i, j] and y[i, j])
        union = sum(1 for i in range(16) for j in range(16) if m[i, j] or y[i, j])
        j_ref = 1.0 if union == 0 else inter / union
        worst = max(worst, _rel(evaluation.jaccard(m, y), j_ref))
        tp = inter
        fp = sum(1 for i in range(16) for j in range(16) if m[i, j] and not y[i, j])
        fn = sum(1 for i in range(16) for j in range(16) if y[i, j] and not m[i, j])
        if tp == 0 and fp == 0 and fn == 0:
            f_ref = 1.0
        elif tp == 0:
            f_ref = 0.0
        else:
            p = tp / (tp + fp)
            r = tp / (tp + fn)
            f_ref = (1 + beta_sq) * p * r / (beta_sq * p + r)
        worst = max(worst, _rel(evaluation.fscore(m, y, beta_sq), f_ref))
    empty = np.zeros((4, 4), dtype=bool)
    some = ~empty.copy()
    some[0, 0] = False
    if evaluation.jaccard(empty, empty) != 1.0 or evaluation.fscore(empty, empty) != 1.0:
        worst = max(worst, 1.0)
    if evaluation.jaccard(empty, some) != 0.0 or evaluation.fscore(empty, some) != 0.0:
        worst = max(worst, 1.0)
    return worst, 1e-12


def fuse_reference(masks, probs):
    n, h, w = masks.shape
    out = np.zeros((h, w), dtype=bool)
    for y in range(h):
        for x in range(w):
            best, best_score = 0, -1.0
            for i in range(n):
                c = int(np.argmax(probs[i]))
                s = probs[i, c] * masks[i, y, x]
                if s > best_score:
                    best, best_score = i, s
            out[y, x] = int(np.argmax(probs[best])) == SOUNDING
    return out


def check_fusion_rule() -> tuple[float, float]:
    worst = 0.0
    for seed in range(100):
        rng = np.random.default_rng([29, seed])
        masks = rng.uniform(size=(5, 8, 8))
        probs = rng.uniform(size=(5, 2))
        probs /= probs.sum(axis=1, keepdims=True)
        got = evaluation.fuse_predictions(masks, probs)
        ref = fuse_reference(masks, probs)
        worst = max(worst, float(np.mean(got != ref)))
    return worst, 1e-15


def check_matching() -> tuple[float, float]:
    cfg = losses.LossConfig()
    worst = 0.0
    for seed in range(200):
        rng = np.random.default_rng([31, seed])
        n = int(rng.integers(1, 5))
        m = int(rng.integers(1, n + 1))
        masks = rng.uniform(0.01, 0.99, size=(n, 6, 6))
        probs = rng.uniform(0.05, 0.95, size=(n, 2))
        probs /= probs.sum(axis=1, keepdims=True)
        gt = rng.uniform(size=(m, 6, 6)) > 0.5
        fast = losses.match(masks, probs, gt, cfg)
        cost = losses.matching_costs(masks, probs, gt, cfg)
        best = min(sum(cost[rows[j], j] for j in range(m))
                   for rows in permutations(range(n), m))
        worst = max(worst, abs(fast.cost - best))
    return worst, 1e-9


CHECKS = [
    ("op-gradients", check_op_gradients),
    ("fusion-gradient", check_fusion_gradient),
    ("loss-gradient", check_loss_gradient),
    ("attention-oracle", check_attention_oracle),
    ("query-distance-oracle", check_aqdl_oracle),
    ("mask-overlap-oracle", check_aqml_oracle),
    ("threshold-schedule", check_threshold_schedule),
    ("round-robin", check_round_robin),
    ("region-metrics", check_region_metrics),
    ("fusion-rule", check_fusion_rule),
    ("matching", check_matching),
]


def run_checks(names: list[str] | None = None) -> list[CheckResult]:
    selected = CHECKS if names is None else [c for c in CHECKS if c[0] in names]
    if names is not None and len(selected) != len(names):
        known = {c[0] for c in CHECKS}
        raise ValueError(f"unknown check names: {sorted(set(names) - known)}")
    results = []
    for name, fn in selected:
        t0 = time.perf_counter()
        err, threshold = fn()
        results.append(CheckResult(name, float(err), threshold,
                                   err < threshold, time.perf_counter() - t0))
    return results
