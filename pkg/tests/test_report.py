import numpy as np
import pytest

from transavs import report


def test_loss_figure_from_csv(tmp_path):
    csv = tmp_path / "loss.csv"
    rows = ["iter,loss,aqdl,aqml,class,dice,delta1,delta2"]
    for i in range(20):
        v = 5.0 / (1 + i)
        rows.append(f"{i},{v!r},0.1,0.2,{v / 2!r},{v / 3!r},0.55,0.55")
    csv.write_text("".join(r + "\n" for r in rows))
    out = tmp_path / "loss.png"
    report.plot_loss(csv, out)
    blob = out.read_bytes()
    assert blob[:8] == b"\x89PNG\r\n\x1a\n"
    assert len(blob) > 1000


def test_loss_figure_rejects_empty_log(tmp_path):
    csv = tmp_path / "loss.csv"
    csv.write_text("iter,loss,aqdl,aqml,class,dice,delta1,delta2\n")
    with pytest.raises(ValueError):
        report.plot_loss(csv, tmp_path / "loss.png")


def test_metrics_figure_from_csv(tmp_path):
    csv = tmp_path / "metrics.csv"
    rng = np.random.default_rng(1)
    rows = ["clip,frame,J,F"]
    for i in range(10):
        rows.append(f"c{i},0,{rng.uniform()!r},{rng.uniform()!r}")
    csv.write_text("".join(r + "\n" for r in rows))
    out = tmp_path / "metrics.png"
    report.plot_metrics(csv, out)
    assert out.read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"


def test_clip_panel_renders_all_frames(tmp_path):
    rng = np.random.default_rng(2)
    frames = rng.uniform(size=(5, 3, 16, 16))
    gt = rng.uniform(size=(5, 16, 16)) > 0.5
    pred = rng.uniform(size=(5, 16, 16)) > 0.5
    out = tmp_path / "panel.png"
    report.clip_panel(frames, gt, pred, out)
    assert out.read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"
