"""Training objective: distance and overlap penalties on confident
queries, focal classification, dice, and query-target matching.

Two penalties act on the set of queries whose sounding-class probability
clears a scheduled confidence threshold. The distance penalty charges
1 / squared-distance between confident query pairs in a learned projected
space, gated off once the squared distance reaches d_0. The overlap
penalty charges the pixel mass shared between confident query masks,
using 0.5-binarized masks on one side of each product. Set membership,
the distance gate, and the binarization are selections, not functions of
the parameters: gradients treat them as constants frozen at the
evaluation point, which is what `freeze_gates` captures explicitly.

Supervision assigns ground-truth masks to queries one-to-one by
minimizing lam3*focal + lam4*dice with the Hungarian algorithm; unmatched
queries are trained toward the no-object class.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import permutations

import numpy as np
from scipy.optimize import linear_sum_assignment

from . import tensor as T
from .heads import NO_OBJECT, SOUNDING

TINY_DIST = 1e-12
_LOG_FLOOR = 1e-12


@dataclass
class LossConfig:
    lambda1: float = 2.0
    lambda2: float = 2.0
    lambda3: float = 5.0
    lambda4: float = 5.0
    d0: float = 1.0
    schedule_mode: str = "increasing"  # "increasing" or "fixed"
    schedule_a: float = 0.55
    schedule_b: float = 0.65
    schedule_n_iter: int = 5000
    fixed_delta1: float = 0.6
    fixed_delta2: float = 0.6
    focal_gamma: float = 2.0
    focal_alpha: float = 0.25
    dice_eps: float = 1.0
    pair_norm: str = "n(n+1)"  # default denominator; "n(n-1)" counts true pairs

    def validate(self) -> None:
        if min(self.lambda1, self.lambda2, self.lambda3, self.lambda4) < 0:
            raise ValueError("loss weights must be non-negative")
        if not (0.0 < self.schedule_a <= self.schedule_b < 1.0):
            raise ValueError(
                f"schedule bounds need 0 < a <= b < 1, got a={self.schedule_a} "
                f"b={self.schedule_b}")
        if self.d0 <= 0:
            raise ValueError(f"d0 must be positive, got {self.d0}")
        if self.schedule_mode not in ("increasing", "fixed"):
            raise ValueError(f"unknown schedule mode {self.schedule_mode!r}")
        if self.pair_norm not in ("n(n+1)", "n(n-1)"):
            raise ValueError(f"unknown pair normalization {self.pair_norm!r}")


def threshold_at(iteration: int, cfg: LossConfig) -> tuple[float, float]:
    """Confidence thresholds (delta1, delta2) in effect at an iteration."""
    if iteration < 0:
        raise ValueError(f"iteration must be >= 0, got {iteration}")
    if cfg.schedule_mode == "fixed":
        return cfg.fixed_delta1, cfg.fixed_delta2
    a, b = cfg.schedule_a, cfg.schedule_b
    step = (b - a) / 18.0 * (iteration // cfg.schedule_n_iter)
    delta = min(a + step, b)
    return delta, delta


def pair_factor(n: int, cfg: LossConfig) -> float:
    if cfg.pair_norm == "n(n-1)":
        return 2.0 / (n * (n - 1))
    return 2.0 / (n * (n + 1))


# ---------------------------------------------------------------------------
# Gates: every non-differentiable selection, captured as plain arrays
# ---------------------------------------------------------------------------

@dataclass
class AqdlGates:
    s1: np.ndarray    # query indices with p(sounding) > delta1
    gate: np.ndarray  # (n_pairs,) 1.0 where projected sq distance < d0
    tiny: np.ndarray  # (n_pairs,) True where sq distance < TINY_DIST


@dataclass
class AqmlGates:
    s2: np.ndarray       # query indices with p(sounding) > delta2
    bin_flat: np.ndarray  # (n2, H*W) 0/1 binarized masks


@dataclass
class MatchResult:
    class_targets: np.ndarray          # (N,) class index per query
    pairs: list[tuple[int, int]]       # (query, target) matched pairs
    cost: float                        # total matching cost of the assignment


@dataclass
class FrozenGates:
    aqdl: AqdlGates
    aqml: AqmlGates
    match: MatchResult


def _pair_indices(n: int) -> tuple[np.ndarray, np.ndarray]:
    return np.triu_indices(n, k=1)


def compute_aqdl_gates(queries_np, probs_np, h_np, delta1: float,
                       cfg: LossConfig) -> AqdlGates:
    s1 = np.flatnonzero(probs_np[:, SOUNDING] > delta1)
    if len(s1) < 2:
        empty = np.zeros(0)
        return AqdlGates(s1, empty, empty.astype(bool))
    hq = queries_np[s1] @ h_np
    ii, jj = _pair_indices(len(s1))
    sq = np.sum((hq[ii] - hq[jj]) ** 2, axis=1)
    return AqdlGates(s1, (sq < cfg.d0).astype(np.float64), sq < TINY_DIST)


def compute_aqml_gates(masks_np, probs_np, delta2: float) -> AqmlGates:
    s2 = np.flatnonzero(probs_np[:, SOUNDING] > delta2)
    n = masks_np.shape[0]
    flat = masks_np.reshape(n, -1)
    return AqmlGates(s2, (flat[s2] > 0.5).astype(np.float64))


# ---------------------------------------------------------------------------
# Loss terms
# ---------------------------------------------------------------------------

def aqdl(queries: T.Tensor, h: T.Tensor, gates: AqdlGates, cfg: LossConfig) -> T.Tensor:
    """Inverse-squared-distance penalty over confident query pairs."""
    n1 = len(gates.s1)
    if n1 < 2:
        return T.Tensor(0.0)
    qs = T.gather_rows(queries, gates.s1)
    hq = T.matmul(qs, h)
    ii, jj = _pair_indices(n1)
    diff = T.sub(T.gather_rows(hq, ii), T.gather_rows(hq, jj))
    sq = T.tsum(T.square(diff), axis=1)
    # Coincident projections would divide by zero; clamp those entries to a
    # constant floor with no gradient.
    keep = (~gates.tiny).astype(np.float64)
    adj = T.add(T.mul(sq, T.Tensor(keep)),
                T.Tensor(gates.tiny.astype(np.float64) * TINY_DIST))
    gated = T.mul(T.reciprocal(adj), T.Tensor(gates.gate))
    return T.scale(T.tsum(gated), pair_factor(n1, cfg))


def aqml(masks: T.Tensor, gates: AqmlGates, cfg: LossConfig) -> T.Tensor:
    """Pairwise mask-intersection penalty over confident queries."""
    n2 = len(gates.s2)
    if n2 < 2:
        return T.Tensor(0.0)
    n, h, w = masks.shape
    ms = T.gather_rows(T.reshape(masks, (n, h * w)), gates.s2)
    b = T.Tensor(gates.bin_flat)
    cross = T.add(T.matmul(b, T.transpose(ms)), T.matmul(ms, T.transpose(b)))
    upper = np.triu(np.ones((n2, n2)), k=1)
    total = T.tsum(T.mul(cross, T.Tensor(upper)))
    return T.scale(total, pair_factor(n2, cfg) / (2.0 * h * w))


def _focal_cost_np(p_sound: np.ndarray, cfg: LossConfig) -> np.ndarray:
    p = np.maximum(p_sound, _LOG_FLOOR)
    return -cfg.focal_alpha * (1.0 - p_sound) ** cfg.focal_gamma * np.log(p)


def _dice_cost_np(masks_flat: np.ndarray, y_flat: np.ndarray, cfg: LossConfig) -> np.ndarray:
    inter = masks_flat @ y_flat
    num = 2.0 * inter + cfg.dice_eps
    den = masks_flat.sum(axis=1) + y_flat.sum() + cfg.dice_eps
    return 1.0 - num / den


def matching_costs(masks_np, probs_np, gt_masks: np.ndarray, cfg: LossConfig) -> np.ndarray:
    """(N, M) cost matrix: lam3*focal + lam4*dice per query-target pair."""
    n = masks_np.shape[0]
    flat = masks_np.reshape(n, -1)
    focal = cfg.lambda3 * _focal_cost_np(probs_np[:, SOUNDING], cfg)
    cost = np.empty((n, len(gt_masks)))
    for j, y in enumerate(gt_masks):
        cost[:, j] = focal + cfg.lambda4 * _dice_cost_np(
            flat, y.reshape(-1).astype(np.float64), cfg)
    return cost


def match(masks_np, probs_np, gt_masks: np.ndarray, cfg: LossConfig) -> MatchResult:
    """Optimal one-to-one query-target assignment (Hungarian algorithm)."""
    gt = np.asarray(gt_masks)
    if gt.ndim == 2:
        gt = gt[None]
    n = masks_np.shape[0]
    if len(gt) > n:
        raise ValueError(f"more targets ({len(gt)}) than queries ({n})")
    cost = matching_costs(masks_np, probs_np, gt, cfg)
    rows, cols = linear_sum_assignment(cost)
    targets = np.full(n, NO_OBJECT, dtype=np.intp)
    targets[rows] = SOUNDING
    order = np.argsort(cols)
    pairs = [(int(rows[k]), int(cols[k])) for k in order]
    return MatchResult(targets, pairs, float(cost[rows, cols].sum()))


def match_by_enumeration(masks_np, probs_np, gt_masks: np.ndarray,
                         cfg: LossConfig) -> MatchResult:
    """Exhaustive-search reference for the assignment; O(N!) so tiny N only."""
    gt = np.asarray(gt_masks)
    if gt.ndim == 2:
        gt = gt[None]
    n, m = masks_np.shape[0], len(gt)
    cost = matching_costs(masks_np, probs_np, gt, cfg)
    best, best_rows = None, None
    for rows in permutations(range(n), m):
        c = sum(cost[rows[j], j] for j in range(m))
        if best is None or c < best:
            best, best_rows = c, rows
    targets = np.full(n, NO_OBJECT, dtype=np.intp)
    targets[list(best_rows)] = SOUNDING
    return MatchResult(targets, [(int(best_rows[j]), j) for j in range(m)], float(best))


def focal_loss(probs: T.Tensor, class_targets: np.ndarray, cfg: LossConfig) -> T.Tensor:
    """Mean over queries of -alpha*(1-p_t)^gamma * log(p_t)."""
    n, k = probs.shape
    idx = np.arange(n) * k + np.asarray(class_targets, dtype=np.intp)
    p_t = T.gather_rows(T.reshape(probs, (n * k, 1)), idx)
    modulator = T.powc(1.0 - p_t, cfg.focal_gamma)
    per_query = T.scale(T.mul(modulator, T.log(p_t)), -cfg.focal_alpha)
    return T.mean(per_query)


def dice_loss(mask: T.Tensor, y: np.ndarray, eps: float) -> T.Tensor:
    """1 - (2*overlap + eps) / (mass(m) + mass(y) + eps)."""
    if mask.shape != y.shape:
        raise T.ShapeError(f"dice_loss: mask {mask.shape} vs target {y.shape}")
    yf = np.asarray(y, dtype=np.float64)
    inter = T.tsum(T.mul(mask, T.Tensor(yf)))
    num = T.scale(inter, 2.0) + eps
    den = T.tsum(mask) + (float(yf.sum()) + eps)
    return 1.0 - T.mul(num, T.reciprocal(den))


# ---------------------------------------------------------------------------
# Combined objective
# ---------------------------------------------------------------------------

def freeze_gates(queries: T.Tensor, masks: T.Tensor, probs: T.Tensor, h: T.Tensor,
                 gt_masks, cfg: LossConfig, iteration: int) -> FrozenGates:
    """Capture every selection the losses make, from the current outputs."""
    delta1, delta2 = threshold_at(iteration, cfg)
    return FrozenGates(
        aqdl=compute_aqdl_gates(queries.data, probs.data, h.data, delta1, cfg),
        aqml=compute_aqml_gates(masks.data, probs.data, delta2),
        match=match(masks.data, probs.data, gt_masks, cfg),
    )


def total_loss(queries: T.Tensor, masks: T.Tensor, probs: T.Tensor, h: T.Tensor,
               gt_masks, cfg: LossConfig, iteration: int,
               frozen: FrozenGates | None = None) -> tuple[T.Tensor, dict]:
    """Weighted sum of the four loss terms plus per-component values.

    ``frozen`` pins the gates to a previously captured state; by default
    they are recomputed from the current outputs, which is the training
    path.
    """
    delta1, delta2 = threshold_at(iteration, cfg)
    gates = frozen if frozen is not None else freeze_gates(
        queries, masks, probs, h, gt_masks, cfg, iteration)

    l_aqdl = aqdl(queries, h, gates.aqdl, cfg)
    l_aqml = aqml(masks, gates.aqml, cfg)
    l_class = focal_loss(probs, gates.match.class_targets, cfg)

    gt = np.asarray(gt_masks)
    if gt.ndim == 2:
        gt = gt[None]
    dice_terms = [dice_loss(_mask_row(masks, qi), gt[tj], cfg.dice_eps)
                  for qi, tj in gates.match.pairs]
    l_dice = T.scale(_sum_terms(dice_terms), 1.0 / max(len(dice_terms), 1))

    total = T.scale(l_aqdl, cfg.lambda1) + T.scale(l_aqml, cfg.lambda2) \
        + T.scale(l_class, cfg.lambda3) + T.scale(l_dice, cfg.lambda4)
    components = {
        "aqdl": l_aqdl.item(), "aqml": l_aqml.item(),
        "class": l_class.item(), "dice": l_dice.item(),
        "delta1": delta1, "delta2": delta2,
    }
    return total, components


def _mask_row(masks: T.Tensor, i: int) -> T.Tensor:
    n, h, w = masks.shape
    row = T.gather_rows(T.reshape(masks, (n, h * w)), np.array([i]))
    return T.reshape(row, (h, w))


def _sum_terms(terms: list[T.Tensor]) -> T.Tensor:
    if not terms:
        return T.Tensor(0.0)
    acc = terms[0]
    for t in terms[1:]:
        acc = T.add(acc, t)
    return acc
