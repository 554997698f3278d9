"""Command line entry point: ``vidcurate <command>``."""

from __future__ import annotations

import csv
import json
import logging
import sys
from fractions import Fraction
from pathlib import Path

import click

from . import analytics, debias as debias_mod, detector, evaluation, features, frameio
from . import metrics as metrics_mod, splitter, suitability

log = logging.getLogger("vidcurate")


def _fps(ctx, param, value):
    if value is None:
        return None
    try:
        return frameio.parse_fps(value)
    except ValueError as e:
        raise click.BadParameter(str(e))


def _open(src, fmt, fps, max_dim):
    info, frames = frameio.open_source(src, fmt, fps or (30, 1))
    if max_dim:
        frames = (frameio.downscale(f, max_dim) for f in frames)
    return info, frames


def source_options(f):
    f = click.option("--downscale", "max_dim", type=int, default=None,
                     help="Box-filter frames so the longer side is at most MAXDIM.")(f)
    f = click.option("--fps", callback=_fps, default=None,
                     help="Frame rate N or N:D for pixmap directories (default 30).")(f)
    f = click.option("--format", "fmt", type=click.Choice(["auto", "y4m", "frames"]),
                     default="auto", show_default=True)(f)
    f = click.option("--input", "src", required=True,
                     help="y4m file, '-' for stdin, or a directory of .ppm frames.")(f)
    return f


def _json_arg(value):
    p = Path(value)
    return json.loads(p.read_text()) if p.exists() else json.loads(value)


@click.group()
@click.option("-v", "--verbose", count=True, help="More logging (repeatable).")
def main(verbose):
    """Video curation toolkit: shot detection, clip splitting, sub-metrics and filtering."""
    level = logging.WARNING - 10 * verbose
    logging.basicConfig(level=max(level, logging.DEBUG),
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")


# -- detection -----------------------------------------------------------------

@main.command("features")
@source_options
@click.option("--out", type=click.Path(dir_okay=False), default=None,
              help="Output CSV (default stdout).")
def features_cmd(src, fmt, fps, max_dim, out):
    """Per-pair colour and structure distances as CSV."""
    _, frames = _open(src, fmt, fps, max_dim)
    fh = open(out, "w", newline="") if out else sys.stdout
    try:
        w = csv.writer(fh)
        w.writerow(["frame", "d_color", "d_struct"])
        for pf in features.iter_pair_features(frames):
            w.writerow([pf.frame_index, repr(pf.d_color), repr(pf.d_struct)])
    finally:
        if out:
            fh.close()


@main.command("make-pairs")
@click.option("--input", "sources", multiple=True, required=True,
              help="Source video (repeat; at least two).")
@click.option("--n", "n_per_class", type=int, default=200, show_default=True,
              help="Pairs per class.")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--max-frames", type=int, default=300, show_default=True,
              help="Frames read per source.")
@click.option("--out", type=click.Path(dir_okay=False), required=True)
def make_pairs_cmd(sources, n_per_class, seed, max_frames, out):
    """Labelled training pairs: same-source consecutive frames (-1), cross-source frames (+1)."""
    loaded = []
    for s in sources:
        _, it = frameio.open_source(s)
        loaded.append([f for _, f in zip(range(max_frames), it)])
    pairs = detector.make_training_pairs(loaded, n_per_class, seed)
    detector.write_pairs_csv(out, pairs)
    click.echo(f"wrote {len(pairs)} pairs to {out}")


@main.command("train-svm")
@click.option("--pairs", "pairs_csv", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--out", type=click.Path(dir_okay=False), required=True)
@click.option("--epochs", type=int, default=20, show_default=True)
@click.option("--lambda", "lam", type=float, default=1e-3, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
def train_svm_cmd(pairs_csv, out, epochs, lam, seed):
    """Train the colour/structure SVM from a d_color,d_struct,label CSV."""
    pairs = detector.read_pairs_csv(pairs_csv)
    try:
        model = detector.train_svm(pairs, epochs, lam, seed)
    except detector.TrainingError as e:
        raise click.ClickException(str(e))
    detector.save_model(model, out)
    click.echo(f"training accuracy {model.train_accuracy:.4f}; model written to {out}")


def _detector_options(f):
    f = click.option("--gradual-window", type=int, default=15, show_default=True)(f)
    f = click.option("--tau0", type=float, default=0.5, show_default=True)(f)
    f = click.option("--warmup", type=int, default=12, show_default=True)(f)
    f = click.option("--window", type=int, default=30, show_default=True)(f)
    return f


def _config(window, warmup, tau0, gradual_window):
    return detector.DetectorConfig(window=window, warmup=warmup, tau0=tau0,
                                   gradual_window=gradual_window)


def _load_svm(path):
    try:
        return detector.load_model(path)
    except detector.ModelError as e:
        raise click.ClickException(str(e))


@main.command("detect")
@source_options
@click.option("--model", "model_path", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--out", type=click.Path(dir_okay=False), required=True)
@_detector_options
def detect_cmd(src, fmt, fps, max_dim, model_path, out, window, warmup, tau0, gradual_window):
    """Detect cuts and gradual transitions; writes JSON lines."""
    model = _load_svm(model_path)
    info, frames = _open(src, fmt, fps, max_dim)
    try:
        events = detector.detect(frames, model, _config(window, warmup, tau0, gradual_window),
                                 info.fps)
    except frameio.FrameIOError as e:
        raise click.ClickException(str(e))
    detector.write_events(out, events)
    click.echo(f"{len(events)} events written to {out}")


@main.command("detect-corpus")
@click.option("--corpus", type=click.Path(exists=True, file_okay=False), required=True)
@click.option("--model", "model_path", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--out", type=click.Path(dir_okay=False), required=True)
@_detector_options
def detect_corpus_cmd(corpus, model_path, out, window, warmup, tau0, gradual_window):
    """Run detection over every video of a generated corpus (JSONL with video_id)."""
    model = _load_svm(model_path)
    preds = evaluation.run_corpus(corpus, model, _config(window, warmup, tau0, gradual_window))
    with open(out, "w") as fh:
        for vid, events in preds.items():
            for e in events:
                fh.write(json.dumps({"video_id": vid, **e.to_json()}) + "\n")
    click.echo(f"{sum(map(len, preds.values()))} events over {len(preds)} videos")


@main.command("split")
@click.option("--events", "events_path", type=click.Path(exists=True, dir_okay=False),
              required=True)
@click.option("--frames", "total_frames", type=int, required=True)
@click.option("--fps", "fps_text", default="30", show_default=True)
@click.option("--out", type=click.Path(dir_okay=False), required=True)
@click.option("--source-id", default=None, help="Defaults to the events file stem.")
@click.option("--min-clip-sec", type=float, default=2.0, show_default=True)
@click.option("--max-clip-sec", type=float, default=30.0, show_default=True)
@click.option("--trim-frames", type=int, default=2, show_default=True)
def split_cmd(events_path, total_frames, fps_text, out, source_id, min_clip_sec, max_clip_sec,
              trim_frames):
    """Clip manifest from transition events."""
    num, den = frameio.parse_fps(fps_text)
    events = detector.read_events(events_path)
    sid = source_id or Path(events_path).stem
    cfg = splitter.SplitConfig(min_clip_sec, max_clip_sec, trim_frames)
    try:
        spans = splitter.split(events, Fraction(num, den), total_frames, cfg, sid)
    except splitter.InconsistentEventsError as e:
        raise click.ClickException(str(e))
    splitter.write_manifest(out, sid, spans)
    click.echo(f"{len(spans)} clips written to {out}")


# -- metrics and scores --------------------------------------------------------

@main.command("metrics")
@source_options
@click.option("--manifest", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--out", type=click.Path(dir_okay=False), required=True)
@click.option("--external", multiple=True, type=click.Path(exists=True, dir_okay=False),
              help="CSV clip_id,<metric>... to merge (repeatable).")
@click.option("--rejects", type=click.Path(dir_okay=False), default=None,
              help="Write unknown-clip rows from --external here as JSON.")
def metrics_cmd(src, fmt, fps, max_dim, manifest, out, external, rejects):
    """Motion and clarity per clip, plus merged external columns."""
    _, spans = splitter.read_manifest(manifest)
    info, frames = _open(src, fmt, fps, max_dim)
    vectors = metrics_mod.compute_metrics(frames, spans, info.fps)
    by_id = {v.clip_id: v for v in vectors}
    all_rejects = []
    for path in external:
        try:
            all_rejects += [{"file": path, **r} for r in metrics_mod.ingest_external(by_id, path)]
        except (metrics_mod.MetricParseError, metrics_mod.MetricCollisionError) as e:
            raise click.ClickException(f"{path}: {e}")
    metrics_mod.write_metrics_csv(out, vectors)
    if all_rejects:
        click.echo(f"{len(all_rejects)} external rows rejected (unknown clip_id)", err=True)
        if rejects:
            Path(rejects).write_text(json.dumps(all_rejects, indent=1) + "\n")
    click.echo(f"{len(vectors)} clips written to {out}")


@main.command("debias")
@click.option("--annotations", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--out", type=click.Path(dir_okay=False), required=True)
def debias_cmd(annotations, out):
    """Per-annotator standardisation and per-video averaging."""
    try:
        scores = debias_mod.debias(debias_mod.read_annotations(annotations))
    except debias_mod.DebiasError as e:
        raise click.ClickException(str(e))
    debias_mod.write_scores(out, scores)
    click.echo(f"{len(scores)} videos written to {out}")


@main.command("distribution")
@click.option("--scores", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--column", default=None, help="Score column (default: second column).")
@click.option("--bins", type=int, default=20, show_default=True)
@click.option("--out", type=click.Path(dir_okay=False), default=None)
def distribution_cmd(scores, column, bins, out):
    """Fixed-width histogram of a score column."""
    dist = debias_mod.score_distribution(list(debias_mod.read_scores(scores, column).values()), bins)
    if out:
        debias_mod.write_distribution(out, dist)
    else:
        w = csv.writer(sys.stdout)
        w.writerow(["bin_lo", "bin_hi", "count"])
        for lo, hi, c in dist:
            w.writerow([repr(lo), repr(hi), c])


@main.command("correlate")
@click.option("--metrics", "metrics_csv", type=click.Path(exists=True, dir_okay=False),
              required=True)
@click.option("--pairs", default="clarity:aesthetic,clarity:motion,motion:aesthetic",
              show_default=True)
def correlate_cmd(metrics_csv, pairs):
    """Pearson and Spearman between metric columns."""
    vectors = metrics_mod.read_metrics_csv(metrics_csv).values()
    pair_list = [tuple(p.split(":")) for p in pairs.split(",") if p]
    try:
        reports = analytics.correlate_metrics(vectors, pair_list)
    except (ValueError, analytics.DegenerateError) as e:
        raise click.ClickException(str(e))
    click.echo("pair,pearson,spearman,n,skipped")
    for r in reports:
        click.echo(f"{r.metric_pair[0]}:{r.metric_pair[1]},{r.pearson:.6f},{r.spearman:.6f},"
                   f"{r.n},{r.skipped}")


@main.command("simulate-cascade")
@click.option("--metrics", "metrics_csv", type=click.Path(exists=True, dir_okay=False),
              required=True)
@click.option("--thresholds", required=True, help="JSON object metric -> threshold, or a file.")
@click.option("--deviate", required=True, help="Comma-separated metrics to deviate.")
@click.option("--deviation", type=float, default=0.10, show_default=True)
def simulate_cascade_cmd(metrics_csv, thresholds, deviate, deviation):
    """Count clips whose keep/drop decision flips when thresholds deviate."""
    vectors = metrics_mod.read_metrics_csv(metrics_csv).values()
    try:
        flips = analytics.cascade_error(vectors, _json_arg(thresholds),
                                        [d for d in deviate.split(",") if d], deviation)
    except KeyError as e:
        raise click.ClickException(str(e))
    click.echo(flips)


@main.command("fit-vtss-threshold")
@click.option("--scores", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--column", default=None)
def fit_vtss_threshold_cmd(scores, column):
    """Fit a two-Gaussian mixture to scores and print the decomposition threshold."""
    vals = list(debias_mod.read_scores(scores, column).values())
    try:
        g = analytics.fit_gmm2(vals)
    except analytics.DegenerateError as e:
        raise click.ClickException(str(e))
    doc = g.to_dict()
    doc["threshold"] = analytics.decomposition_threshold(g)
    click.echo(json.dumps(doc, indent=2))


@main.command("filter")
@click.option("--scores", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--column", default=None)
@click.option("--threshold", default="auto", show_default=True,
              help="'auto' for the mixture decomposition threshold, or a number.")
@click.option("--out", type=click.Path(dir_okay=False), required=True)
def filter_cmd(scores, column, threshold, out):
    """Keep clips whose score is at or above the threshold (inclusive)."""
    vals = debias_mod.read_scores(scores, column)
    if threshold == "auto":
        t = analytics.decomposition_threshold(analytics.fit_gmm2(list(vals.values())))
    else:
        try:
            t = float(threshold)
        except ValueError:
            raise click.BadParameter("threshold must be 'auto' or a number")
    decisions = analytics.filter_by_vtss(vals, t)
    analytics.write_decisions(out, decisions)
    kept = sum(d.kept for d in decisions)
    click.echo(f"threshold {t:.6f}: kept {kept} of {len(decisions)}")


@main.command("fit-vtss")
@click.option("--metrics", "metrics_csv", type=click.Path(exists=True, dir_okay=False),
              required=True)
@click.option("--scores", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--column", default=None, help="Target column in SCORES (default second).")
@click.option("--lambda", "lam", type=float, default=1.0, show_default=True)
@click.option("--out", type=click.Path(dir_okay=False), required=True)
def fit_vtss_cmd(metrics_csv, scores, column, lam, out):
    """Ridge regression from sub-metrics to suitability scores."""
    vectors = list(metrics_mod.read_metrics_csv(metrics_csv).values())
    targets = debias_mod.read_scores(scores, column)
    try:
        model = suitability.fit_ridge(vectors, targets, lam)
    except (suitability.ClipMismatchError, ValueError, KeyError) as e:
        raise click.ClickException(str(e))
    suitability.save_model(model, out)
    click.echo(f"model over {', '.join(model.metrics)} written to {out}")


@main.command("score")
@click.option("--model", "model_path", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--metrics", "metrics_csv", type=click.Path(exists=True, dir_okay=False),
              required=True)
@click.option("--out", type=click.Path(dir_okay=False), required=True)
def score_cmd(model_path, metrics_csv, out):
    """Apply a suitability model to a metrics CSV."""
    model = suitability.load_model(model_path)
    vectors = metrics_mod.read_metrics_csv(metrics_csv)
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["clip_id", "vtss"])
        for cid, v in vectors.items():
            try:
                w.writerow([cid, repr(suitability.predict(model, v))])
            except KeyError as e:
                raise click.ClickException(f"{cid}: {e}")


@main.command("eval-vtss")
@click.option("--pred", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--truth", type=click.Path(exists=True, dir_okay=False), required=True)
def eval_vtss_cmd(pred, truth):
    """PLCC, SRCC, KRCC and RMSE of predictions against targets, joined on id."""
    p = debias_mod.read_scores(pred)
    t = debias_mod.read_scores(truth)
    ids = sorted(set(p) & set(t))
    if not ids:
        raise click.ClickException("no ids in common")
    if len(ids) < len(p) or len(ids) < len(t):
        click.echo(f"warning: {len(set(p) ^ set(t))} ids present in only one file", err=True)
    r = suitability.evaluate([p[i] for i in ids], [t[i] for i in ids])
    click.echo(f"PLCC {r.plcc:.6f}\nSRCC {r.srcc:.6f}\nKRCC {r.krcc:.6f}\nRMSE {r.rmse:.6f}")
    if r.degenerate:
        click.echo("warning: constant predictions; correlations undefined", err=True)


# -- evaluation harness --------------------------------------------------------

@main.command("make-corpus")
@click.option("--spec", "spec_arg", required=True, help="JSON object or file: scenario -> count.")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", type=click.Path(file_okay=False), required=True)
def make_corpus_cmd(spec_arg, seed, out):
    """Synthetic videos with ground-truth transitions."""
    doc = evaluation.make_corpus(_json_arg(spec_arg), seed, out)
    click.echo(f"{len(doc['videos'])} videos written to {out}")


@main.command("eval")
@click.option("--pred", type=click.Path(exists=True), required=True,
              help="JSONL with video_id per record, or a directory of <video_id>.jsonl.")
@click.option("--truth", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--tolerance", type=int, default=2, show_default=True)
def eval_cmd(pred, truth, tolerance):
    """Score predicted events against corpus ground truth."""
    truth_doc = evaluation.load_truth(truth)
    s = evaluation.score_detection(evaluation.read_predictions(pred),
                                   evaluation.truth_by_video(truth_doc), tolerance)
    click.echo(json.dumps(s.to_dict(), indent=2))


@main.command("bench")
@click.option("--resolutions", default="256,512,720p,1080p,4k", show_default=True)
@click.option("--frames", type=int, default=100, show_default=True)
@click.option("--warmup", type=int, default=10, show_default=True)
@click.option("--out", type=click.Path(dir_okay=False), default=None)
def bench_cmd(resolutions, frames, warmup, out):
    """Per-pair feature + decision time at several resolutions (single thread)."""
    try:
        res = [evaluation.parse_resolution(r) for r in resolutions.split(",") if r]
    except ValueError as e:
        raise click.BadParameter(str(e))
    records = evaluation.bench(res, frames=frames, warmup=warmup)
    rows = [["width", "height", "ms_per_frame", "frames_measured", "warmup_frames"]]
    rows += [[r.resolution[0], r.resolution[1], f"{r.ms_per_frame:.3f}", r.frames_measured,
              r.warmup_frames] for r in records]
    if out:
        with open(out, "w", newline="") as fh:
            csv.writer(fh).writerows(rows)
    for row in rows:
        click.echo(",".join(map(str, row)))


if __name__ == "__main__":
    main()
