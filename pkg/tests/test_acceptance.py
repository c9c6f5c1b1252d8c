"""Acceptance gate: every stated criterion, one labeled line each.

Criteria 1-7 delegate to the in-package oracle suite (independent
finite-difference, loop, and enumeration references). Criteria 8-10 run
real training: 8 trains the full desk configuration and scores held-out
clips, 9 compares the increasing threshold schedule against a fixed one
on multi-source clips over three seeds, 10 retrains twice and demands
bit-identical logs and checkpoints.
"""

import time

import numpy as np
import pytest

import conftest
from transavs import data, evaluation, model, trainer, verify


def _report(name: str, passed: bool, detail: str):
    line = f"[{'PASS' if passed else 'FAIL'}] {name}: {detail}"
    print(line)
    conftest.record_criterion(line)
    assert passed, f"{name}: {detail}"


def _run_check(name: str):
    t0 = time.perf_counter()
    res = verify.run_checks([name])[0]
    return res, time.perf_counter() - t0


class TestCriterion1Gradients:
    def test_every_op_gradient_matches_finite_differences(self):
        res, _ = _run_check("op-gradients")
        _report("1a op gradients", res.passed,
                f"max rel err {res.max_err:.2e} < {res.threshold:.0e}")

    def test_fusion_stack_gradient_matches_finite_differences(self):
        res, _ = _run_check("fusion-gradient")
        _report("1b fusion gradient", res.passed,
                f"max rel err {res.max_err:.2e} < {res.threshold:.0e}")

    def test_total_objective_gradient_matches_finite_differences(self):
        res, secs = _run_check("loss-gradient")
        ok = res.passed and secs < 120.0
        _report("1c combined objective gradient", ok,
                f"max rel err {res.max_err:.2e} < {res.threshold:.0e} "
                f"in {secs:.0f}s (< 120s)")


class TestCriterion2LossOracles:
    def test_query_distance_loss_matches_brute_force(self):
        res, _ = _run_check("query-distance-oracle")
        _report("2a distance loss vs double loop", res.passed,
                f"max rel err {res.max_err:.2e} < {res.threshold:.0e} over 100 draws")

    def test_mask_overlap_loss_matches_brute_force(self):
        res, _ = _run_check("mask-overlap-oracle")
        _report("2b overlap loss vs pixel loop", res.passed,
                f"max rel err {res.max_err:.2e} < {res.threshold:.0e} over 100 draws")


class TestCriterion3Schedule:
    def test_threshold_schedule_hits_stated_points(self):
        res, _ = _run_check("threshold-schedule")
        _report("3 threshold schedule", res.passed,
                f"max deviation {res.max_err:.2e} at endpoints, step 1, and sweep")


class TestCriterion4RoundRobin:
    def test_decoder_visits_scales_in_round_robin_order(self):
        res, _ = _run_check("round-robin")
        _report("4 round-robin order", res.passed,
                "six decoder layers attended scales 2,3,1,2,3,1 "
                "(detected via recorded kv row counts)")


class TestCriterion5Metrics:
    def test_region_metrics_match_pixel_loops(self):
        res, _ = _run_check("region-metrics")
        _report("5 J/F vs pixel loops", res.passed,
                f"max rel err {res.max_err:.2e} over 1000 random 16x16 pairs "
                "plus empty-mask conventions")


class TestCriterion6FusionRule:
    def test_fused_masks_match_exhaustive_evaluation(self):
        res, _ = _run_check("fusion-rule")
        _report("6 fusion rule vs exhaustive", res.passed,
                "identical masks on 100 random prediction sets (N=5, 8x8)")


class TestCriterion7Matching:
    def test_assignment_matches_permutation_enumeration(self):
        res, _ = _run_check("matching")
        _report("7 matching vs enumeration", res.passed,
                f"max cost gap {res.max_err:.2e} over 200 trials, N <= 4")


# ---------------------------------------------------------------------------
# Learning criteria: these train real models and take minutes, not seconds.
# ---------------------------------------------------------------------------

# The corpus, model sizes, batch, and iteration budget below are pinned by
# the stated targets; learning rate, weight decay, the feed-forward blocks,
# and the confidence gates are free settings chosen to maximize held-out
# quality inside that budget (measurements in the training-configuration
# notes). The best configuration found still falls short of the targets;
# this test reports the real numbers rather than relaxing them.
DESK_BASE_LR = 1e-3
DESK_WEIGHT_DECAY = 0.5
DESK_FFN = True


@pytest.fixture(scope="module")
def desk_run(tmp_path_factory):
    """Train the full desk configuration once; criteria 8 reads it."""
    root = tmp_path_factory.mktemp("desk")
    manifest = data.write_dataset(root / "corpus", 200, 40, 40, "S4",
                                  seed0=0, h=64, w=64)
    cfg = trainer.TrainConfig(data=str(manifest), run_dir=str(root / "run"),
                              base_lr=DESK_BASE_LR,
                              weight_decay=DESK_WEIGHT_DECAY, ffn=DESK_FFN,
                              batch_size=4, max_iterations=2000, seed=0,
                              checkpoint_every=500)
    # all pairs feel the mask-separation pressure from the start; the
    # disentanglement gate stays at its fixed default
    cfg.loss.schedule_mode = "fixed"
    cfg.loss.fixed_delta1 = 0.6
    cfg.loss.fixed_delta2 = 0.0
    t0 = time.perf_counter()
    final_ckpt = trainer.fit(cfg)
    fit_secs = time.perf_counter() - t0
    return root, cfg, final_ckpt, fit_secs


class TestCriterion8DeskScaleLearning:
    def test_held_out_segmentation_beats_targets(self, desk_run):
        root, cfg, final_ckpt, fit_secs = desk_run
        base_p, base_cfg, _, _ = model.load_checkpoint(
            root / "run" / "checkpoints" / "iter_000000.tavs")
        base = evaluation.evaluate_split(
            model.clip_predictor(base_p, base_cfg), cfg.data, "test")
        fin_p, fin_cfg, _, _ = model.load_checkpoint(final_ckpt)
        res = evaluation.evaluate_split(
            model.clip_predictor(fin_p, fin_cfg), cfg.data, "test")
        gain_j = res.mean_j - base.mean_j
        gain_f = res.mean_f - base.mean_f
        ok = (res.mean_j >= 0.70 and res.mean_f >= 0.75
              and gain_j >= 0.40 and gain_f >= 0.40 and fit_secs < 3600.0)
        _report("8 desk-scale learning", ok,
                f"MJ {res.mean_j:.3f} (>= 0.70), MF {res.mean_f:.3f} (>= 0.75), "
                f"gain +{gain_j:.3f}/+{gain_f:.3f} (>= 0.40), "
                f"train {fit_secs / 60:.1f} min (< 60)")


# Multi-source runs for the schedule comparison. Scale is not pinned here,
# so these use a smaller model and corpus to keep three paired runs cheap.
MS3_BASE_LR = 1e-3
MS3_ITERS = 1000
MS3_SEEDS = (0, 1, 2)


def _ms3_config(manifest, run_dir, seed: int) -> trainer.TrainConfig:
    cfg = trainer.TrainConfig(data=str(manifest), run_dir=str(run_dir),
                              base_lr=MS3_BASE_LR, batch_size=4,
                              max_iterations=MS3_ITERS, seed=seed,
                              checkpoint_every=MS3_ITERS,
                              n_queries=12, d=16, n_enc=1, n_dec=6,
                              c_v=8, audio_hidden=16, ffn=True)
    return cfg


@pytest.fixture(scope="module")
def ms3_runs(tmp_path_factory):
    root = tmp_path_factory.mktemp("ms3")
    manifest = data.write_dataset(root / "corpus", 60, 5, 10, "MS3",
                                  seed0=500, h=32, w=32)
    scores = {"increasing": [], "fixed": []}
    for seed in MS3_SEEDS:
        for arm in ("increasing", "fixed"):
            cfg = _ms3_config(manifest, root / f"{arm}_{seed}", seed)
            cfg.loss.schedule_mode = arm
            if arm == "increasing":
                # compress the 18-step ramp into the run so the thresholds
                # actually travel from a to b at this scale
                cfg.loss.schedule_n_iter = max(1, MS3_ITERS // 18)
            else:
                cfg.loss.fixed_delta1 = cfg.loss.fixed_delta2 = 0.6
            ckpt = trainer.fit(cfg)
            p, mcfg, _, _ = model.load_checkpoint(ckpt)
            res = evaluation.evaluate_split(
                model.clip_predictor(p, mcfg), cfg.data, "test")
            scores[arm].append(res.mean_j)
    return scores


class TestCriterion9ScheduleDirection:
    def test_increasing_thresholds_do_not_trail_fixed(self, ms3_runs):
        mean_inc = float(np.mean(ms3_runs["increasing"]))
        mean_fix = float(np.mean(ms3_runs["fixed"]))
        ok = mean_inc >= mean_fix - 0.02
        per_seed = ", ".join(
            f"seed {s}: {i:.3f}/{f:.3f}" for s, i, f in
            zip(MS3_SEEDS, ms3_runs["increasing"], ms3_runs["fixed"]))
        _report("9 schedule direction", ok,
                f"increasing mean MJ {mean_inc:.3f} >= fixed {mean_fix:.3f} - 0.02 "
                f"({per_seed})")


class TestCriterion10Reproducibility:
    def test_reruns_are_bit_identical_and_checkpoints_round_trip(self, tmp_path):
        manifest = data.write_dataset(tmp_path / "corpus", 6, 1, 2, "S4",
                                      seed0=900, h=32, w=32)

        def run(name: str):
            cfg = trainer.TrainConfig(data=str(manifest),
                                      run_dir=str(tmp_path / name),
                                      n_queries=6, d=8, n_enc=1, n_dec=2,
                                      c_v=4, audio_hidden=8, batch_size=2,
                                      max_iterations=30, checkpoint_every=10,
                                      seed=7, base_lr=1e-3)
            return trainer.fit(cfg)

        ck_a, ck_b = run("run_a"), run("run_b")
        same_csv = ((tmp_path / "run_a" / "loss.csv").read_bytes()
                    == (tmp_path / "run_b" / "loss.csv").read_bytes())
        same_ckpt = ck_a.read_bytes() == ck_b.read_bytes()

        params, mcfg, it, opt_state = model.load_checkpoint(ck_a)
        rec = [r for r in data.read_manifest(str(manifest))
               if r["split"] == "test"][0]
        frames, spec, _ = data.load_clip(data.manifest_clip_dir(str(manifest), rec))
        z1 = model.forward_frame(params, mcfg, frames[0], spec)
        model.save_checkpoint(tmp_path / "again.tavs", params, mcfg, it, opt_state)
        params2, mcfg2, _, _ = model.load_checkpoint(tmp_path / "again.tavs")
        z2 = model.forward_frame(params2, mcfg2, frames[0], spec)
        round_trip = (z1.masks.data.tobytes() == z2.masks.data.tobytes()
                      and z1.probs.data.tobytes() == z2.probs.data.tobytes())

        ok = same_csv and same_ckpt and round_trip
        _report("10 reproducibility", ok,
                f"loss.csv identical: {same_csv}, final checkpoint identical: "
                f"{same_ckpt}, save/load forward bit-exact: {round_trip}")
