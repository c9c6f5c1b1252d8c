import json
from pathlib import Path

import numpy as np
import pytest

from transavs import cli, container, data, evaluation, fusion, model, netpbm
from transavs import tensor as T

TRAIN_CONFIG = """
data = {manifest}
run_dir = {run_dir}
n_queries = 6
d = 8
n_enc = 1
n_dec = 2
c_v = 4
audio_hidden = 8
batch_size = 2
max_iterations = 6
checkpoint_every = 3
base_lr = 0.001
loss.d0 = 8.0
"""


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli_corpus")
    return data.write_dataset(root, 4, 1, 1, "S4", seed0=200, h=32, w=32)


@pytest.fixture(scope="module")
def trained(tmp_path_factory, corpus):
    import os
    run_dir = tmp_path_factory.mktemp("cli_run")
    cfg_path = run_dir / "config.txt"
    cfg_path.write_text(TRAIN_CONFIG.format(manifest=corpus, run_dir=run_dir / "out"))
    prev = os.getcwd()
    os.chdir(run_dir)  # keep runs.log out of the repo tree
    try:
        rc = cli.main(["train", "--config", str(cfg_path)])
    finally:
        os.chdir(prev)
    assert rc == 0
    return run_dir / "out" / "checkpoints" / "iter_000006.tavs"


class TestGenData:
    def test_counts_and_manifest(self, tmp_path, monkeypatch, capsys):
        monkeypatch.chdir(tmp_path)
        rc = cli.main(["gen-data", "--mode", "S4", "--out", "corpus",
                       "--train", "10", "--valid", "2", "--test", "2",
                       "--seed", "0", "--size", "32x32"])
        assert rc == 0
        printed = capsys.readouterr().out.strip()
        manifest = Path(printed)
        assert manifest.exists()
        assert len(manifest.read_text().splitlines()) == 14
        dirs = [p for p in (tmp_path / "corpus").rglob("frame_0.ppm")]
        assert len(dirs) == 14

    def test_rerun_is_byte_identical(self, tmp_path, monkeypatch):
        monkeypatch.chdir(tmp_path)
        argv = ["gen-data", "--mode", "MS3", "--out", "a", "--train", "2",
                "--valid", "1", "--test", "1", "--seed", "5", "--size", "32x32"]
        assert cli.main(argv) == 0
        argv[4] = "b"
        assert cli.main(argv) == 0
        a_files = sorted((tmp_path / "a").rglob("*.*"))
        b_files = sorted((tmp_path / "b").rglob("*.*"))
        assert [p.name for p in a_files] == [p.name for p in b_files]
        for pa, pb in zip(a_files, b_files):
            assert pa.read_bytes() == pb.read_bytes(), pa.name

    def test_missing_out_flag_is_usage_error(self, tmp_path, monkeypatch, capsys):
        monkeypatch.chdir(tmp_path)
        with pytest.raises(SystemExit) as ei:
            cli.main(["gen-data", "--mode", "S4", "--train", "1",
                      "--valid", "1", "--test", "1"])
        assert ei.value.code == 2

    def test_bad_size_is_usage_error(self, tmp_path, monkeypatch):
        monkeypatch.chdir(tmp_path)
        with pytest.raises(SystemExit) as ei:
            cli.main(["gen-data", "--mode", "S4", "--out", "c", "--train", "1",
                      "--valid", "1", "--test", "1", "--size", "64"])
        assert ei.value.code == 2


class TestTrain:
    def test_completes_and_prints_checkpoint(self, trained, capsys):
        assert trained.exists()

    def test_resume_leaves_no_iteration_gaps(self, tmp_path, monkeypatch, corpus):
        monkeypatch.chdir(tmp_path)
        cfg_path = tmp_path / "config.txt"
        cfg_path.write_text(TRAIN_CONFIG.format(manifest=corpus,
                                                run_dir=tmp_path / "run"))
        assert cli.main(["train", "--config", str(cfg_path)]) == 0
        mid = tmp_path / "run" / "checkpoints" / "iter_000006.tavs"
        assert cli.main(["train", "--config", str(cfg_path), "--resume", str(mid),
                        "--set", "max_iterations=9"]) == 0
        lines = (tmp_path / "run" / "loss.csv").read_text().splitlines()
        assert [int(l.split(",")[0]) for l in lines[1:]] == list(range(9))

    def test_override_wins_over_file(self, tmp_path, monkeypatch, corpus):
        monkeypatch.chdir(tmp_path)
        cfg_path = tmp_path / "config.txt"
        cfg_path.write_text(TRAIN_CONFIG.format(manifest=corpus,
                                                run_dir=tmp_path / "run"))
        assert cli.main(["train", "--config", str(cfg_path),
                        "--set", "max_iterations=2"]) == 0
        lines = (tmp_path / "run" / "loss.csv").read_text().splitlines()
        assert len(lines) == 3

    def test_unknown_config_key_exits_2_naming_it(self, tmp_path, monkeypatch,
                                                 corpus, capsys):
        monkeypatch.chdir(tmp_path)
        cfg_path = tmp_path / "config.txt"
        cfg_path.write_text("data = x\nrun_dir = y\nlearning_rate = 0.1\n")
        rc = cli.main(["train", "--config", str(cfg_path)])
        assert rc == 2
        assert "learning_rate" in capsys.readouterr().err

    def test_missing_config_file_exits_1(self, tmp_path, monkeypatch, capsys):
        monkeypatch.chdir(tmp_path)
        assert cli.main(["train", "--config", str(tmp_path / "nope.txt")]) == 1


class TestEval:
    def test_prints_means_and_writes_report(self, tmp_path, monkeypatch,
                                            corpus, trained, capsys):
        monkeypatch.chdir(tmp_path)
        rc = cli.main(["eval", "--ckpt", str(trained), "--data", str(corpus),
                       "--split", "test", "--out", "evalout"])
        assert rc == 0
        out = capsys.readouterr().out
        line = [l for l in out.splitlines() if l.startswith("MJ=")][0]
        mj_txt, mf_txt = line.split()
        mj = float(mj_txt.split("=")[1])
        mf = float(mf_txt.split("=")[1])
        assert 0.0 <= mj <= 1.0 and 0.0 <= mf <= 1.0
        assert (tmp_path / "evalout" / "metrics.csv").exists()
        assert (tmp_path / "evalout" / "summary.txt").exists()
        assert (tmp_path / "evalout" / "metrics.png").exists()
        summary = (tmp_path / "evalout" / "summary.txt").read_text()
        assert summary == f"MJ={mj!r}\nMF={mf!r}\n"

    def test_missing_checkpoint_exits_1(self, tmp_path, monkeypatch, corpus):
        monkeypatch.chdir(tmp_path)
        rc = cli.main(["eval", "--ckpt", "missing.tavs", "--data", str(corpus),
                       "--split", "test", "--out", "evalout"])
        assert rc == 1


class TestInfer:
    def _clip_dir(self, corpus):
        rec = data.read_manifest(corpus)[0]
        return data.manifest_clip_dir(corpus, rec)

    def test_writes_one_fused_mask_per_frame(self, tmp_path, monkeypatch,
                                             corpus, trained):
        monkeypatch.chdir(tmp_path)
        rc = cli.main(["infer", "--ckpt", str(trained),
                       "--clip", str(self._clip_dir(corpus)), "--out", "inf"])
        assert rc == 0
        fused = sorted((tmp_path / "inf").glob("fused_*.pgm"))
        assert len(fused) == data.T_FRAMES
        assert (tmp_path / "inf" / "panel.png").exists()
        # one probability map per query per frame
        qmaps = sorted((tmp_path / "inf" / "queries" / "frame_0").glob("q*.pgm"))
        assert len(qmaps) == 6

    def test_fused_mask_matches_dumped_prediction_set(self, tmp_path, monkeypatch,
                                                      corpus, trained):
        monkeypatch.chdir(tmp_path)
        clip = self._clip_dir(corpus)
        assert cli.main(["infer", "--ckpt", str(trained), "--clip", str(clip),
                        "--out", "inf"]) == 0
        dump = container.read_tensors(tmp_path / "inf" / "predictions.tavs")
        for t in range(data.T_FRAMES):
            expect = evaluation.fuse_predictions(dump[f"frame_{t}.masks"],
                                                 dump[f"frame_{t}.probs"])
            got = netpbm.read_mask(tmp_path / "inf" / f"fused_{t}.pgm")
            assert np.array_equal(got, expect)

    def test_everything_empty_checkpoint_gives_zero_masks(self, tmp_path,
                                                          monkeypatch, corpus,
                                                          trained):
        monkeypatch.chdir(tmp_path)
        params, cfg, it, _ = model.load_checkpoint(trained)
        # bias the classifier so every query lands in the no-object class
        params["head.g_bias"].data[:] = np.array([-50.0, 50.0])
        silent = tmp_path / "silent.tavs"
        model.save_checkpoint(silent, params, cfg, it)
        assert cli.main(["infer", "--ckpt", str(silent),
                        "--clip", str(self._clip_dir(corpus)),
                        "--out", "inf"]) == 0
        for t in range(data.T_FRAMES):
            mask = netpbm.read_mask(tmp_path / "inf" / f"fused_{t}.pgm")
            assert not mask.any()

    def test_missing_clip_exits_1(self, tmp_path, monkeypatch, trained):
        monkeypatch.chdir(tmp_path)
        assert cli.main(["infer", "--ckpt", str(trained),
                        "--clip", str(tmp_path / "nope"), "--out", "inf"]) == 1


class TestVerify:
    def test_fast_subset_passes(self, tmp_path, monkeypatch, capsys):
        monkeypatch.chdir(tmp_path)
        rc = cli.main(["verify", "--checks", "threshold-schedule", "round-robin",
                       "attention-oracle"])
        assert rc == 0
        out = capsys.readouterr().out
        assert "threshold-schedule" in out and "ok" in out

    def test_injected_wrong_attention_scale_fails_by_name(self, tmp_path,
                                                          monkeypatch, capsys):
        monkeypatch.chdir(tmp_path)
        true_attention = fusion.attention

        def skewed(q, k, v):
            scores = T.scale(T.matmul(q, T.transpose(k)), 1.0 / q.data.shape[1])
            return T.matmul(T.softmax_rows(scores), v)

        monkeypatch.setattr(fusion, "attention", skewed)
        rc = cli.main(["verify", "--checks", "attention-oracle"])
        monkeypatch.setattr(fusion, "attention", true_attention)
        assert rc == 1
        out = capsys.readouterr().out
        assert "failed checks: attention-oracle" in out

    def test_unknown_check_name_exits_1(self, tmp_path, monkeypatch, capsys):
        monkeypatch.chdir(tmp_path)
        assert cli.main(["verify", "--checks", "no-such-check"]) == 1


class TestRunsLog:
    def test_each_invocation_appends_a_manifest_line(self, tmp_path, monkeypatch):
        monkeypatch.chdir(tmp_path)
        cli.main(["gen-data", "--mode", "S4", "--out", "c", "--train", "1",
                  "--valid", "1", "--test", "1"])
        cli.main(["verify", "--checks", "round-robin"])
        lines = (tmp_path / "runs.log").read_text().splitlines()
        assert len(lines) == 2
        first = json.loads(lines[0])
        assert first["cmd"] == "gen-data"
        assert first["exit"] == 0
        assert first["artifacts"]
        second = json.loads(lines[1])
        assert second["cmd"] == "verify"
        assert second["seconds"] >= 0

    def test_failures_are_logged_too(self, tmp_path, monkeypatch, corpus):
        monkeypatch.chdir(tmp_path)
        cli.main(["eval", "--ckpt", "missing.tavs", "--data", str(corpus),
                  "--split", "test", "--out", "e"])
        line = json.loads((tmp_path / "runs.log").read_text().splitlines()[-1])
        assert line["cmd"] == "eval" and line["exit"] == 1
