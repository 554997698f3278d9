import csv
import json

import numpy as np
import pytest
from click.testing import CliRunner

from vidcurate.cli import main


@pytest.fixture
def run(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    runner = CliRunner()

    def invoke(*args, ok=True):
        r = runner.invoke(main, [str(a) for a in args], catch_exceptions=False)
        if ok:
            assert r.exit_code == 0, r.output
        else:
            assert r.exit_code != 0, r.output
        return r
    return invoke


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_video_pipeline(run, tmp_path):
    spec = {"hard-cut": 2, "static": 2, "width": 64, "height": 48, "frames": 60}
    run("make-corpus", "--spec", json.dumps(spec), "--seed", 0, "--out", "corpus")
    truth = json.loads((tmp_path / "corpus/truth.json").read_text())
    assert len(truth["videos"]) == 4

    vids = [f"corpus/{v['file']}" for v in truth["videos"]]
    run("make-pairs", *sum((["--input", v] for v in vids[2:]), []), "--n", 60,
        "--out", "pairs.csv")
    run("train-svm", "--pairs", "pairs.csv", "--out", "svm.json", "--epochs", 5)
    assert set(json.loads((tmp_path / "svm.json").read_text())) >= {"w_color", "w_struct", "bias"}

    r = run("features", "--input", vids[0])
    assert r.output.splitlines()[0].startswith("frame")
    assert len(r.output.splitlines()) == 60

    run("detect", "--input", vids[0], "--model", "svm.json", "--out", "ev.jsonl")
    run("split", "--events", "ev.jsonl", "--frames", 60, "--fps", "30", "--out", "man.json",
        "--min-clip-sec", "0.3")
    man = json.loads((tmp_path / "man.json").read_text())
    assert man["source_id"] == "ev" and man["clips"]
    clips = [{"clip_id": f"ev:{c['start_frame']}-{c['end_frame']}"} for c in man["clips"]]

    ext = tmp_path / "aes.csv"
    ext.write_text("clip_id,aesthetic\n" + "".join(f"{c['clip_id']},{i}.5\n"
                                                   for i, c in enumerate(clips))
                   + "ghost:0-1,1.0\n")
    r = run("metrics", "--input", vids[0], "--manifest", "man.json", "--out", "m.csv",
            "--external", ext, "--rejects", "rej.json")
    rows = read_csv(tmp_path / "m.csv")
    assert len(rows) == len(clips) and {"motion", "clarity", "aesthetic"} <= set(rows[0])
    assert json.loads((tmp_path / "rej.json").read_text())[0]["clip_id"] == "ghost:0-1"

    run("detect-corpus", "--corpus", "corpus", "--model", "svm.json", "--out", "all.jsonl")
    r = run("eval", "--pred", "all.jsonl", "--truth", "corpus/truth.json", "--tolerance", 2)
    score = json.loads(r.output)
    assert score["tolerance_frames"] == 2 and 0 <= score["recall"] <= 1


def test_score_pipeline(run, tmp_path):
    rng = np.random.default_rng(0)
    n = 300
    X = rng.random((n, 3))
    with open(tmp_path / "m.csv", "w") as fh:
        fh.write("clip_id,clarity,motion,aesthetic\n")
        for i, row in enumerate(X):
            fh.write(f"c{i}," + ",".join(repr(float(v)) for v in row) + "\n")
    with open(tmp_path / "ann.csv", "w") as fh:
        fh.write("video_id,annotator_id,score\n")
        for i in range(n):
            for a in range(3):
                s = np.clip(2 + 2 * X[i, 0] + 0.3 * a + rng.normal(0, 0.2), 1, 5)
                fh.write(f"c{i},a{a},{float(s)!r}\n")

    run("debias", "--annotations", "ann.csv", "--out", "vtss.csv")
    scores = read_csv(tmp_path / "vtss.csv")
    assert len(scores) == n and scores[0]["n_annotators"] == "3"

    r = run("distribution", "--scores", "vtss.csv", "--bins", 5)
    assert sum(int(row.split(",")[2]) for row in r.output.splitlines()[1:]) == n

    r = run("correlate", "--metrics", "m.csv")
    assert r.output.splitlines()[0] == "pair,pearson,spearman,n,skipped"
    assert len(r.output.splitlines()) == 4

    th = json.dumps({"clarity": 0.1, "motion": 0.1, "aesthetic": 0.1})
    r1 = run("simulate-cascade", "--metrics", "m.csv", "--thresholds", th, "--deviate", "clarity")
    r3 = run("simulate-cascade", "--metrics", "m.csv", "--thresholds", th,
             "--deviate", "clarity,motion,aesthetic")
    assert 0 <= int(r1.output) <= int(r3.output)

    r = run("fit-vtss-threshold", "--scores", "vtss.csv")
    doc = json.loads(r.output)
    assert doc["means"][0] <= doc["threshold"] <= doc["means"][1]
    r = run("filter", "--scores", "vtss.csv", "--threshold", "3.0", "--out", "keep.csv")
    kept = read_csv(tmp_path / "keep.csv")
    assert all((float(k["vtss"]) >= 3.0) == (k["kept"] == "1") for k in kept)
    run("filter", "--scores", "vtss.csv", "--out", "keep_auto.csv")

    run("fit-vtss", "--metrics", "m.csv", "--scores", "vtss.csv", "--lambda", 0.1,
        "--out", "ridge.json")
    run("score", "--model", "ridge.json", "--metrics", "m.csv", "--out", "pred.csv")
    r = run("eval-vtss", "--pred", "pred.csv", "--truth", "vtss.csv")
    plcc = float(r.output.splitlines()[0].split()[1])
    assert plcc > 0.8


def test_errors(run, tmp_path):
    (tmp_path / "ann.csv").write_text("video_id,annotator_id,score\nv,a,3\n")
    r = run("debias", "--annotations", "ann.csv", "--out", "x.csv", ok=False)
    assert "fewer than 2" in r.output
    r = run("bench", "--resolutions", "huge", ok=False)
    assert "bad resolution" in r.output
    (tmp_path / "s.csv").write_text("id,s\n" + "".join(f"v{i},2.0\n" for i in range(150)))
    r = run("fit-vtss-threshold", "--scores", "s.csv", ok=False)
    assert "Error" in r.output


def test_bench_cli(run, tmp_path):
    run("bench", "--resolutions", "64x48,128x96", "--frames", 100, "--warmup", 2,
        "--out", "b.csv")
    rows = read_csv(tmp_path / "b.csv")
    assert [(r["width"], r["height"]) for r in rows] == [("64", "48"), ("128", "96")]
    assert all(float(r["ms_per_frame"]) > 0 for r in rows)
