"""Command-line pipeline: simulate -> train -> link -> score -> eval / compare -> plot-data.

Exit codes: 0 ok, 2 usage, 3 missing file, 4 schema violation,
5 dimension mismatch, 6 invalid config, 7 degenerate data. Errors are
reported as one JSON line on stderr.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from pathlib import Path

from . import __version__
from .config import PROFILES, ConfigError, PipelineConfig, load_file, load_profile
from .core import DetectionRecord
from .encoder import DegenerateBatch, DimensionMismatch, EncoderParams, label_records, train_encoder
from .evaluation import (
    RecallReport,
    compare_linkers,
    format_ap_report,
    format_recall_table,
    frame_map,
    tube_recall,
    video_map,
)
from .formats import (
    SchemaError,
    detection_from_dict,
    detection_to_dict,
    dumps,
    iter_jsonl,
    make_header,
    read_detections,
    read_gt,
    read_tracks,
    read_tubes,
    write_detections,
    write_gt,
    write_json,
    write_jsonl,
    write_scoreseqs,
    write_tracks,
    write_tubes,
)
from .linking import iou_link, qmm_link
from .scoring import build_tubes, oracle_scorer
from .sim import Scenario, generate_scenario

log = logging.getLogger("qmmtube")

EXIT_MISSING, EXIT_SCHEMA, EXIT_DIM, EXIT_CONFIG, EXIT_DEGENERATE = 3, 4, 5, 6, 7


class CliError(Exception):
    def __init__(self, code: int, kind: str, message: str, **extra):
        super().__init__(message)
        self.code, self.kind, self.extra = code, kind, extra


# -- helpers ----------------------------------------------------------------------

def _load_config(args) -> PipelineConfig:
    flat = {}
    if getattr(args, "profile", None):
        flat.update(load_profile(args.profile))
    if getattr(args, "config", None):
        flat.update(load_file(args.config))
    return PipelineConfig.from_flat(flat, seed=getattr(args, "seed", None))


def _header(kind: str, cfg: PipelineConfig, **extra) -> dict:
    return make_header(kind, {"config": cfg.flat, **extra}, cfg.seed)


def _out_dir(args) -> Path:
    d = Path(args.out_dir)
    d.mkdir(parents=True, exist_ok=True)
    return d


def _floats(text: str) -> list[float]:
    return [float(v) for v in str(text).split(",") if v.strip()]


def _read_params(path) -> EncoderParams:
    if not Path(path).exists():
        raise FileNotFoundError(str(path))
    try:
        obj = json.loads(Path(path).read_text(encoding="utf-8"))
        return EncoderParams.from_dict(obj)
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise SchemaError(path, 1, f"invalid encoder parameters: {exc}") from None


def _read_videos(path) -> list[list[DetectionRecord]]:
    """Detection records grouped by their optional ``video`` key, each group sorted by frame."""
    videos: dict[int, list[DetectionRecord]] = {}
    for lineno, obj in iter_jsonl(path):
        try:
            rec = detection_from_dict(obj)
            vid = int(obj.get("video", 0))
        except (KeyError, TypeError, ValueError) as exc:
            msg = f"missing key {exc}" if isinstance(exc, KeyError) else str(exc)
            raise SchemaError(path, lineno, msg) from None
        group = videos.setdefault(vid, [])
        if group and rec.frame < group[-1].frame:
            raise SchemaError(path, lineno, "records not sorted by frame within their video")
        group.append(rec)
    return [videos[k] for k in sorted(videos)]


# -- stages -----------------------------------------------------------------------

def cmd_simulate(args) -> None:
    cfg = _load_config(args)
    out = _out_dir(args)
    scen = generate_scenario(cfg.scenario())
    header = _header("detections", cfg)
    write_detections(out / "detections.jsonl", scen.records, header)
    write_gt(out / "gt.jsonl", scen.gts, _header("gt", cfg))
    doc = {"header": _header("scenario", cfg), "scenario": scen.config.to_dict()}
    n_train = cfg.train_videos
    if n_train:
        from .config import section

        n_persons = section(cfg.flat, "sim").get("train_persons")
        rows = []
        for i in range(n_train):
            tv = generate_scenario(cfg.scenario(seed_offset=1000 + i, n_persons=n_persons))
            rows.extend({"video": i, **detection_to_dict(r)} for r in tv.records)
        write_jsonl(out / "train_clips.jsonl", rows, _header("train_clips", cfg))
        doc["train_videos"] = n_train
    write_json(out / "scenario.json", doc)


def cmd_train(args) -> None:
    cfg = _load_config(args)
    videos = _read_videos(args.clips)
    if args.gt:
        gts = read_gt(args.gt)
        videos = [label_records(v, gts, cfg.train.tau_iou) for v in videos]
    params, history = train_encoder(videos, cfg.train, seed=cfg.seed)
    doc = params.to_dict()
    doc["header"] = _header("encoder", cfg)
    doc["config"] = cfg.train.to_dict()
    doc["training"] = {"epoch_losses": history}
    if args.out:
        path = Path(args.out)
        path.parent.mkdir(parents=True, exist_ok=True)
    else:
        path = _out_dir(args) / "params.json"
    write_json(path, doc)


def cmd_link(args) -> None:
    cfg = _load_config(args)
    records = read_detections(args.detections)
    if args.method == "qmm":
        if not args.params:
            raise CliError(EXIT_CONFIG, "config", "--params is required for --method qmm")
        tracks = qmm_link(records, _read_params(args.params), cfg.link)
        name = "tracks-qmm.jsonl"
    else:
        tracks = iou_link(records, args.iou_threshold, cfg.link)
        name = f"tracks-iou-{args.iou_threshold:g}.jsonl"
    header = _header("tracks", cfg, method=args.method, iou_threshold=args.iou_threshold)
    write_tracks(_out_dir(args) / (args.name or name), tracks, header)


def cmd_score(args) -> None:
    cfg = _load_config(args)
    tracks = read_tracks(args.tracks)
    gts = read_gt(args.gt)
    n_actions = cfg.scoring.no_action
    seqs, tubes = [], []
    for tr in tracks:
        seq = oracle_scorer(tr, gts, n_actions, sigma=cfg.score_sigma, seed=cfg.seed,
                            tau_iou=cfg.train.tau_iou)
        seqs.append((tr.id, seq))
        tubes.extend(build_tubes(tr, seq, cfg.scoring))
    out = _out_dir(args)
    write_scoreseqs(out / "scores.jsonl", seqs, _header("scores", cfg))
    write_tubes(out / "tubes.jsonl", tubes, _header("tubes", cfg))


def _write_report(out: Path, stem: str, doc: dict, text: str) -> None:
    write_json(out / f"{stem}.json", doc)
    (out / f"{stem}.txt").write_text(text + "\n", encoding="utf-8")


def cmd_eval(args) -> None:
    cfg = _load_config(args)
    gts = read_gt(args.gt)
    thetas = _floats(args.theta) if args.theta else [cfg.eval_theta]
    out = _out_dir(args)
    if args.metric == "recall":
        if not args.tracks and not args.tubes:
            raise CliError(EXIT_CONFIG, "config", "recall needs --tracks or --tubes")
        preds = read_tracks(args.tracks) if args.tracks else read_tubes(args.tubes)
        label = args.linker or Path(args.tracks or args.tubes).stem
        rows = [tube_recall(gts, preds, th, label) for th in thetas]
        doc = {"header": _header("recall", cfg), "metric": "recall",
               "rows": [r.to_dict() for r in rows]}
        text = format_recall_table(rows, categories=args.categories)
    else:
        if not args.tubes:
            raise CliError(EXIT_CONFIG, "config", f"{args.metric} needs --tubes")
        tubes = read_tubes(args.tubes)
        no_action = cfg.scoring.no_action
        if args.metric == "vmap":
            reports = [video_map(gts, tubes, th, no_action=no_action) for th in thetas]
        else:
            keyframes = None
            if args.keyframe_stride:
                keyframes = {t for g in gts for t in g.entries if t % args.keyframe_stride == 0}
            reports = [frame_map(gts, tubes, th, keyframes, no_action=no_action) for th in thetas]
        doc = {"header": _header(args.metric, cfg), "metric": args.metric,
               "reports": [r.to_dict() for r in reports]}
        text = "\n".join(format_ap_report(r) for r in reports)
    _write_report(out, args.name or f"report-{args.metric}", doc, text)


def cmd_compare(args) -> None:
    cfg = _load_config(args)
    records = read_detections(args.detections)
    gts = read_gt(args.gt)
    params = _read_params(args.params)
    thresholds = _floats(args.thresholds) if args.thresholds else list(cfg.iou_thresholds)
    theta = args.theta if args.theta is not None else cfg.eval_theta
    scen = Scenario(gts=gts, records=records, config=None)
    rows = compare_linkers(scen, cfg.link, params, thresholds, theta)
    doc = {"header": _header("compare", cfg, thresholds=thresholds, theta=theta), "metric": "recall",
           "rows": [r.to_dict() for r in rows]}
    _write_report(_out_dir(args), args.name or "compare", doc, format_recall_table(rows))


def plot_rows(report_paths) -> list[tuple[str, float, float]]:
    """Tidy ``(series, x, y)`` rows: recall vs 3D-IoU threshold per linker, loss vs epoch."""
    rows = []
    for path in report_paths:
        if not Path(path).exists():
            raise FileNotFoundError(str(path))
        try:
            doc = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise SchemaError(path, exc.lineno, "invalid JSON") from None
        if "rows" in doc:
            for r in doc["rows"]:
                rep = RecallReport.from_dict(r)
                y = rep.recall("All")
                rows.append((rep.linker, rep.theta, float("nan") if y is None else y))
        elif "training" in doc:
            for epoch, loss in enumerate(doc["training"]["epoch_losses"]):
                rows.append(("loss", float(epoch), float(loss)))
        elif "reports" in doc:
            for r in doc["reports"]:
                rows.append((r["metric"], float(r["theta"]), float(r["mean_ap"])))
        else:
            raise SchemaError(path, 1, "not a recall, AP or training report")
    return rows


def cmd_plot_data(args) -> None:
    rows = plot_rows(args.reports or [])
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["series", "x", "y"])
    for series, x, y in rows:
        w.writerow([series, repr(x), repr(y)])
    (_out_dir(args) / (args.name or "plot-data.csv")).write_text(buf.getvalue(), encoding="utf-8")


def run_pipeline(profile: str | None, out_dir, seed: int = 0, config: str | None = None) -> int:
    """Run every stage into ``out_dir``; returns the first non-zero exit code, else 0."""
    out = Path(out_dir)
    base = ["--seed", str(seed)]
    if profile:
        base += ["--profile", profile]
    if config:
        base += ["--config", str(config)]
    cfg = _load_config(argparse.Namespace(profile=profile, config=config, seed=seed))
    d = str(out)
    steps = [
        ["simulate", *base, "--out-dir", d],
        ["train", *base, "--clips", str(out / "train_clips.jsonl"), "--out", str(out / "params.json")],
        ["link", *base, "--detections", str(out / "detections.jsonl"), "--method", "qmm",
         "--params", str(out / "params.json"), "--out-dir", d],
    ]
    for thr in cfg.iou_thresholds:
        steps.append(["link", *base, "--detections", str(out / "detections.jsonl"), "--method", "iou",
                      "--iou-threshold", str(thr), "--out-dir", d])
    steps += [
        ["score", *base, "--tracks", str(out / "tracks-qmm.jsonl"), "--gt", str(out / "gt.jsonl"),
         "--out-dir", d],
        ["eval", *base, "--metric", "recall", "--gt", str(out / "gt.jsonl"),
         "--tracks", str(out / "tracks-qmm.jsonl"), "--theta", "0.2,0.5,0.75", "--linker", "QMM",
         "--categories", "--out-dir", d, "--name", "report-recall-qmm"],
        ["eval", *base, "--metric", "vmap", "--gt", str(out / "gt.jsonl"),
         "--tubes", str(out / "tubes.jsonl"), "--out-dir", d],
        ["eval", *base, "--metric", "fmap", "--gt", str(out / "gt.jsonl"),
         "--tubes", str(out / "tubes.jsonl"), "--out-dir", d],
        ["compare", *base, "--detections", str(out / "detections.jsonl"), "--gt", str(out / "gt.jsonl"),
         "--params", str(out / "params.json"), "--out-dir", d],
        ["plot-data", "--reports", str(out / "compare.json"), str(out / "report-recall-qmm.json"),
         str(out / "params.json"), "--out-dir", d],
    ]
    for argv in steps:
        code = main(argv)
        if code:
            return code
    return 0


def cmd_pipeline(args) -> None:
    code = run_pipeline(args.profile, args.out_dir, args.seed if args.seed is not None else 0, args.config)
    if code:
        raise SystemExit(code)


# -- argument parsing ---------------------------------------------------------------

def _common(p: argparse.ArgumentParser, out=True):
    p.add_argument("--config", help="flat key=value config file (overrides the profile)")
    p.add_argument("--profile", choices=PROFILES, help="bundled defaults")
    p.add_argument("--seed", type=int, default=None)
    if out:
        p.add_argument("--out-dir", required=True)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qmmtube", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"qmmtube {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate a synthetic scenario")
    _common(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("train", help="train the person-feature encoder")
    _common(p, out=False)
    p.add_argument("--clips", required=True, help="labelled detection JSONL (optional 'video' key)")
    p.add_argument("--gt", help="relabel detections from this ground truth")
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--out", help="output params JSON path")
    g.add_argument("--out-dir")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("link", help="link detections into person tracks")
    _common(p)
    p.add_argument("--detections", required=True)
    p.add_argument("--method", choices=("qmm", "iou"), default="qmm")
    p.add_argument("--params")
    p.add_argument("--iou-threshold", type=float, default=0.5)
    p.add_argument("--name")
    p.set_defaults(func=cmd_link)

    p = sub.add_parser("score", help="score tracks and build action tubes")
    _common(p)
    p.add_argument("--tracks", required=True)
    p.add_argument("--gt", required=True)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("eval", help="recall / video-mAP / frame-mAP")
    _common(p)
    p.add_argument("--gt", required=True)
    p.add_argument("--tracks")
    p.add_argument("--tubes")
    p.add_argument("--metric", choices=("recall", "vmap", "fmap"), default="recall")
    p.add_argument("--theta", help="3D-IoU threshold(s), comma separated")
    p.add_argument("--categories", action="store_true", help="show the L/M/S columns in the text report")
    p.add_argument("--keyframe-stride", type=int, default=0)
    p.add_argument("--linker")
    p.add_argument("--name")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("compare", help="query matching vs IoU linking recall table")
    _common(p)
    p.add_argument("--detections", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--params", required=True)
    p.add_argument("--thresholds", help="IoU-linking thresholds, comma separated")
    p.add_argument("--theta", type=float)
    p.add_argument("--name")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("plot-data", help="tidy CSV from report files")
    p.add_argument("--reports", nargs="*")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--name")
    p.set_defaults(func=cmd_plot_data)

    p = sub.add_parser("pipeline", help="run every stage for a profile")
    _common(p)
    p.set_defaults(func=cmd_pipeline)
    return parser


def _emit_error(kind: str, code: int, message: str, **extra) -> int:
    sys.stderr.write(dumps({"error": kind, "code": code, "message": message, **extra}) + "\n")
    return code


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING)
    try:
        args.func(args)
    except CliError as exc:
        return _emit_error(exc.kind, exc.code, str(exc), **exc.extra)
    except FileNotFoundError as exc:
        return _emit_error("missing_file", EXIT_MISSING, f"file not found: {exc.args[0] if exc.args else exc}",
                           file=str(exc.filename or (exc.args[0] if exc.args else "")))
    except SchemaError as exc:
        return _emit_error("schema", EXIT_SCHEMA, exc.message, file=exc.path, line=exc.line)
    except DimensionMismatch as exc:
        return _emit_error("dimension_mismatch", EXIT_DIM, str(exc))
    except DegenerateBatch as exc:
        return _emit_error("degenerate_data", EXIT_DEGENERATE, str(exc))
    except (ConfigError, ValueError) as exc:
        return _emit_error("config", EXIT_CONFIG, str(exc))
    except SystemExit as exc:
        return int(exc.code or 0)
    return 0


if __name__ == "__main__":
    sys.exit(main())
