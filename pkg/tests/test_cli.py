import csv
import io
import json
from pathlib import Path

import numpy as np
import pytest

from fbmatch.cli import main, read_config, run_bench
from fbmatch.core import load_mask, load_tensor, save_mask, save_tensor
from synthetic import synthetic_video

FIXTURE = Path(__file__).parent / "fixtures" / "match_small"


def _write_frames(tmp_path, rng, hw=(6, 5), c=3):
    e = rng.standard_normal(hw + (c,)).astype(np.float32)
    m = rng.integers(0, 3, hw).astype(np.uint16)
    save_tensor(e, tmp_path / "e.fbt")
    save_mask(m, tmp_path / "m.pgm")
    return e, m


def _match_argv(tmp_path, out):
    e, m = str(tmp_path / "e.fbt"), str(tmp_path / "m.pgm")
    return ["match", "--ref-embed", e, "--ref-mask", m, "--prev-embed", e, "--prev-mask", m,
            "--cur-embed", e, "--object", "1", "--out", out]


def test_match_self_zero_global_fg(tmp_path, rng):
    _, m = _write_frames(tmp_path, rng)
    out = tmp_path / "out"
    out.mkdir()
    assert main(_match_argv(tmp_path, str(out) + "/")) == 0
    g = load_tensor(out / "global_fg.fbt").data[:, :, 0]
    assert np.all(g[m == 1] == 0)
    lines = [json.loads(x) for x in (out / "summary.jsonl").read_text().splitlines()]
    assert lines[0]["event"] == "run" and lines[0]["windows"] == [1, 2, 3]
    names = {x["name"] for x in lines[1:]}
    assert names == {"global_fg", "global_bg", "local_fg_k1", "local_bg_k1", "local_fg_k2",
                     "local_bg_k2", "local_fg_k3", "local_bg_k3"}


def test_match_prefix_output(tmp_path, rng):
    _write_frames(tmp_path, rng)
    assert main(_match_argv(tmp_path, str(tmp_path / "run_")) + ["--windows", "2"]) == 0
    assert (tmp_path / "run_local_bg_k2.fbt").exists()
    assert (tmp_path / "run_summary.jsonl").exists()


def test_match_missing_flag(tmp_path, rng, capsys):
    _write_frames(tmp_path, rng)
    argv = _match_argv(tmp_path, str(tmp_path) + "/")
    i = argv.index("--cur-embed")
    del argv[i : i + 2]
    assert main(argv) == 1
    assert "--cur-embed" in capsys.readouterr().err


@pytest.mark.parametrize("oracle", [False, True])
def test_match_fixture(tmp_path, oracle):
    exp = json.loads((FIXTURE / "expected.json").read_text())
    argv = ["match", "--ref-embed", str(FIXTURE / "ref.fbt"), "--ref-mask", str(FIXTURE / "ref.pgm"),
            "--prev-embed", str(FIXTURE / "prev.fbt"), "--prev-mask", str(FIXTURE / "prev.pgm"),
            "--cur-embed", str(FIXTURE / "cur.fbt"), "--object", str(exp["object"]),
            "--windows", ",".join(map(str, exp["windows"])), "--atrous", str(exp["atrous"]),
            "--atrous-origin", str(exp["atrous_origin"]), "--bias-fg", str(exp["bias_fg"]),
            "--bias-bg", str(exp["bias_bg"]), "--out", str(tmp_path) + "/"]
    if oracle:
        argv.append("--oracle")
    assert main(argv) == 0
    for name, values in exp["maps"].items():
        got = load_tensor(tmp_path / f"{name}.fbt").data.reshape(-1)
        np.testing.assert_allclose(got, values, atol=1e-6, rtol=0, err_msg=name)


def test_match_dimension_mismatch_exit_3(tmp_path, rng):
    _write_frames(tmp_path, rng)
    save_tensor(np.zeros((6, 5, 4), np.float32), tmp_path / "e4.fbt")
    argv = _match_argv(tmp_path, str(tmp_path) + "/")
    argv[argv.index("--cur-embed") + 1] = str(tmp_path / "e4.fbt")
    assert main(argv) == 3


def test_match_missing_file_exit_2(tmp_path, rng):
    _write_frames(tmp_path, rng)
    argv = _match_argv(tmp_path, str(tmp_path) + "/")
    argv[argv.index("--ref-embed") + 1] = str(tmp_path / "nope.fbt")
    assert main(argv) == 2


def test_match_corrupt_file_exit_2(tmp_path, rng):
    _write_frames(tmp_path, rng)
    (tmp_path / "bad.fbt").write_bytes(b"XXXX" + bytes(30))
    argv = _match_argv(tmp_path, str(tmp_path) + "/")
    argv[argv.index("--ref-embed") + 1] = str(tmp_path / "bad.fbt")
    assert main(argv) == 2


def test_usage_errors(capsys):
    assert main([]) == 1
    assert main(["match", "--windows", "3,2"]) == 1
    assert main(["frobnicate"]) == 1


def test_config_file_and_precedence(tmp_path, rng):
    _write_frames(tmp_path, rng)
    e, m = tmp_path / "e.fbt", tmp_path / "m.pgm"
    cfg = tmp_path / "run.cfg"
    cfg.write_text(f"# shared inputs\nref_embed = {e}\nref-mask = {m}\nprev-embed = {e}\n"
                   f"prev-mask = {m}\ncur-embed = {e}\nobject = 1\nwindows = 1,2\n"
                   f"out = {tmp_path}/cfg_\n")
    assert main(["match", "--config", str(cfg)]) == 0
    assert json.loads((tmp_path / "cfg_summary.jsonl").read_text().splitlines()[0])["windows"] == [1, 2]
    assert main(["match", "--config", str(cfg), "--windows", "4"]) == 0
    assert json.loads((tmp_path / "cfg_summary.jsonl").read_text().splitlines()[0])["windows"] == [4]


def test_config_unknown_key(tmp_path):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("colour = blue\n")
    assert main(["info", "--config", str(cfg), "x"]) == 1
    assert read_config(cfg) == {"colour": "blue"}


def test_bench_counts_deterministic():
    a = run_bench(16, 16, 4, [1, 2], (2, 4), repeat=1, seed=3)
    b = run_bench(16, 16, 4, [1, 2], (2, 4), repeat=5, seed=3)
    assert [r["referred"] for r in a] == [r["referred"] for r in b]
    assert [(r["kind"], r["atrous"]) for r in a] == [("global", 1), ("global", 2), ("local", 1), ("local", 2)]


def test_bench_referred_ratio():
    rows = run_bench(64, 64, 2, [1, 2, 4], (8,), repeat=1, kinds=("global",), fg_fraction=1.0)
    counts = {r["atrous"]: r["referred"] for r in rows}
    assert counts[1] / counts[2] == 4
    assert counts[1] / counts[4] == 16


def test_bench_csv(capsys):
    assert main(["bench", "--height", "8", "--width", "8", "--channels", "2", "--atrous-list", "1,2",
                 "--windows", "2", "--repeat", "2"]) == 0
    rows = list(csv.DictReader(io.StringIO(capsys.readouterr().out)))
    assert len(rows) == 4
    assert set(rows[0]) == {"kind", "atrous", "height", "width", "channels", "windows", "referred",
                            "repeat", "median_s", "min_s", "speedup"}


def test_bench_bad_kind():
    assert main(["bench", "--kinds", "sideways"]) == 1


def _write_video(tmp_path, seed=0):
    embeds, masks = synthetic_video(seed, n_frames=4)
    src, gt = tmp_path / "src", tmp_path / "gt"
    src.mkdir()
    gt.mkdir()
    save_tensor(embeds[0], tmp_path / "ref.fbt")
    save_mask(masks[0], tmp_path / "ref.pgm")
    for i, (e, m) in enumerate(zip(embeds[1:], masks[1:]), 1):
        save_tensor(e, src / f"f{i:03d}.fbt")
        save_mask(m, gt / f"f{i:03d}.pgm")
    return masks


def test_propagate_and_eval(tmp_path, capsys):
    masks = _write_video(tmp_path)
    pred = tmp_path / "pred"
    assert main(["propagate", "--ref-embed", str(tmp_path / "ref.fbt"), "--ref-mask", str(tmp_path / "ref.pgm"),
                 "--embed-dir", str(tmp_path / "src"), "--out-dir", str(pred), "--windows", "1,2"]) == 0
    for i, m in enumerate(masks[1:], 1):
        assert np.array_equal(load_mask(pred / f"f{i:03d}.pgm").labels, m)
    assert main(["eval", "--pred-dir", str(pred), "--gt-dir", str(tmp_path / "gt")]) == 0
    rows = list(csv.reader(io.StringIO(capsys.readouterr().out)))
    assert rows[0] == ["frame", "object", "J", "F", "J&F"]
    assert len(rows) == 1 + 3 * 3
    assert all(r[2:] == ["1.000000"] * 3 for r in rows[1:])


def test_eval_to_file(tmp_path):
    _write_video(tmp_path)
    out = tmp_path / "scores.csv"
    assert main(["eval", "--pred-dir", str(tmp_path / "gt"), "--gt-dir", str(tmp_path / "gt"),
                 "--out", str(out), "--tol", "2"]) == 0
    assert out.read_text().startswith("frame,object,J,F,J&F\n")


def test_eval_missing_pred(tmp_path):
    _write_video(tmp_path)
    (tmp_path / "empty").mkdir()
    assert main(["eval", "--pred-dir", str(tmp_path / "empty"), "--gt-dir", str(tmp_path / "gt")]) == 2


def test_crop_deterministic(tmp_path, rng, capsys):
    frames = tmp_path / "frames"
    frames.mkdir()
    for i in range(3):
        save_tensor(rng.standard_normal((20, 18, 2)).astype(np.float32), frames / f"{i}.fbt")
        save_mask(rng.integers(0, 2, (20, 18)).astype(np.uint16), frames / f"{i}.pgm")
    outs = []
    for run in ("a", "b"):
        argv = ["crop", "--frames-dir", str(frames), "--out-dir", str(tmp_path / run), "--seed", "7",
                "--crop-height", "8", "--crop-width", "6"]
        assert main(argv) == 0
        outs.append(json.loads(capsys.readouterr().out))
    assert outs[0] == outs[1] and outs[0]["seed"] == 7
    for f in sorted((tmp_path / "a").iterdir()):
        assert f.read_bytes() == (tmp_path / "b" / f.name).read_bytes()
    assert load_tensor(tmp_path / "a" / "0.fbt").shape == (8, 6, 2)


def test_crop_all_background_exit_3(tmp_path):
    frames = tmp_path / "frames"
    frames.mkdir()
    save_tensor(np.zeros((10, 10, 1), np.float32), frames / "0.fbt")
    save_mask(np.zeros((10, 10), np.uint16), frames / "0.pgm")
    argv = ["crop", "--frames-dir", str(frames), "--out-dir", str(tmp_path / "o"), "--crop-height", "4",
            "--crop-width", "4", "--max-retries", "3"]
    assert main(argv) == 3


def test_info(tmp_path, capsys):
    save_tensor(np.zeros((2, 3, 4), np.float32), tmp_path / "t.fbt")
    save_mask(np.array([[0, 300]], np.uint16), tmp_path / "m.pgm")
    assert main(["info", str(tmp_path / "t.fbt"), str(tmp_path / "m.pgm")]) == 0
    t, m = (json.loads(x) for x in capsys.readouterr().out.splitlines())
    assert (t["height"], t["width"], t["channels"], t["payload_bytes"]) == (2, 3, 4, 96)
    assert (m["width"], m["height"], m["maxval"], m["objects"]) == (2, 1, 65535, [300])


def test_thread_cap_env(tmp_path, monkeypatch, rng):
    _write_frames(tmp_path, rng)
    import numba

    monkeypatch.setenv("FBMATCH_THREADS", "1")
    try:
        assert main(_match_argv(tmp_path, str(tmp_path) + "/")) == 0
        assert numba.get_num_threads() == 1
    finally:
        numba.set_num_threads(numba.config.NUMBA_NUM_THREADS)
    monkeypatch.setenv("FBMATCH_THREADS", "many")
    assert main(["info", str(tmp_path / "e.fbt")]) == 1
