"""Command-line front end: analyze, evaluate, simulate, bench.

Exit codes: 0 success, 1 analytic error, 2 usage or config error.
"""

from __future__ import annotations

import argparse
import gc
import json
import logging
import math
import sys
import time
from pathlib import Path
from typing import Optional

import numpy as np

from .composites import CombinationRule, RuleSet, DEFAULT_RULE_SETS
from .config import EngineConfig, load_config
from .emotions import ConfigError
from .evaluation import (
    AGGREGATORS,
    Ad,
    KpiReport,
    LabeledCorpus,
    ManifestAd,
    ManifestSession,
    Session,
    SingleClassError,
    ad_values,
    f1_score,
    load_manifest,
    roc_ad,
    roc_auc,
    roc_sent,
    slice_report,
    state_score_fn,
    write_manifest,
)
from .expressive import write_blink_events
from .pipeline import STAGES, analyze_corpus, analyze_observations, write_metric_records
from .stream import StreamError, format_for_path, parse_frame_stream, write_frame_stream
from .synth import ScenarioError, ScenarioSpec, generate_ad_corpus, generate_stream

log = logging.getLogger("affectstream")

EXIT_OK, EXIT_ANALYTIC, EXIT_USAGE = 0, 1, 2
KPI_CHOICES = ("roc-ad", "roc-sent", "f1", "auc")
F1_THRESHOLD = 50.0


class UsageError(Exception):
    pass


def _config(path: Optional[str]) -> EngineConfig:
    return EngineConfig() if path is None else load_config(path)


def _read_stream(path: str) -> list:
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"input file not found: {p}")
    return list(parse_frame_stream(p, format_for_path(p)))


def _open_out(path: Optional[str]):
    if path in (None, "-"):
        return sys.stdout, False
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    return open(path, "w", encoding="utf-8", newline=""), True


# --------------------------------------------------------------------------- analyze

def cmd_analyze(args) -> int:
    cfg = _config(args.config)
    obs = _read_stream(args.input)
    results = analyze_observations(obs, cfg, workers=args.workers, retrack_faces=args.retrack)
    fmt = args.format or ("jsonl" if args.output and format_for_path(args.output) == "jsonl" else "csv")
    out, owned = _open_out(args.output)
    try:
        n = write_metric_records(results, cfg, out, fmt)
    finally:
        if owned:
            out.close()
    if args.blinks:
        with open(args.blinks, "w", encoding="utf-8", newline="") as fh:
            write_blink_events([(r.video_id, r.face_id, e) for r in results for e in r.blinks], fh)
    log.info("analyzed %d records over %d tracks", n, len(results))
    return EXIT_OK


# --------------------------------------------------------------------------- evaluate

def corpus_from_manifest(path) -> LabeledCorpus:
    path = Path(path)
    if not path.is_file():
        raise UsageError(f"manifest not found: {path}")
    try:
        mads = load_manifest(path)
    except (KeyError, TypeError, json.JSONDecodeError) as exc:
        raise UsageError(f"{path}: malformed manifest ({exc})") from None
    ads = []
    for ma in mads:
        sessions = []
        for ms in ma.sessions:
            if not ms.path.is_file():
                raise UsageError(f"session {ms.session_id!r}: stream file not found: {ms.path}")
            obs = list(parse_frame_stream(ms.path, format_for_path(ms.path)))
            sessions.append(Session(ms.session_id, demographics=dict(ms.demographics), observations=obs))
        ads.append(Ad(ma.ad_id, ma.label, sessions, list(ma.moments)))
    return LabeledCorpus(ads)


def evaluate_corpus(corpus: LabeledCorpus, state: str, kpis, aggregator: str = "max",
                    min_support: int = 5) -> KpiReport:
    """KPIs on an analyzed corpus. Undefined KPIs become diagnostics instead of aborting."""
    rep = KpiReport(state)
    fn = state_score_fn(state)

    def attempt(name, f):
        try:
            return f()
        except (SingleClassError, ValueError) as exc:
            rep.diagnostics.append(f"{name}: {exc}")
            return None

    if "roc-ad" in kpis:
        rep.roc_ad = attempt("roc-ad", lambda: roc_ad(corpus, state, aggregator))
        rep.slices = slice_report(corpus, lambda c: roc_ad(c, state, aggregator), min_support=min_support)
    if "roc-sent" in kpis:
        rep.roc_sent = attempt("roc-sent", lambda: roc_sent(corpus, state))
    if "auc" in kpis or "f1" in kpis:
        vals = ad_values(corpus, fn, aggregator)
        keep = ~np.isnan(vals)
        labels = corpus.labels[keep]
        if "auc" in kpis:
            rep.auc = attempt("auc", lambda: roc_auc(vals[keep], labels))
        if "f1" in kpis:
            rep.f1 = f1_score(vals[keep], labels, F1_THRESHOLD)
    return rep


def cmd_evaluate(args) -> int:
    cfg = _config(args.config)
    states = [rs.state for rs in cfg.rule_sets]
    state = args.state or states[0]
    if state not in states:
        raise UsageError(f"state {state!r} is not defined in the config (have {', '.join(states)})")
    corpus = corpus_from_manifest(args.input)
    analyze_corpus(corpus, cfg, workers=args.workers)
    kpis = args.kpi or ["roc-ad", "roc-sent"]
    rep = evaluate_corpus(corpus, state, kpis, args.aggregator, args.min_support)
    out = Path(args.output or ".")
    out.mkdir(parents=True, exist_ok=True)
    (out / "kpi_report.json").write_text(json.dumps(rep.to_dict(), indent=2, sort_keys=True) + "\n",
                                         encoding="utf-8")
    (out / "kpi_report.csv").write_text(rep.kpi_csv(), encoding="utf-8")
    (out / "slices.csv").write_text(rep.slices_csv(), encoding="utf-8")
    (out / "report.txt").write_text(rep.text(), encoding="utf-8")
    sys.stdout.write(rep.text())
    for d in rep.diagnostics:
        print(f"affectstream: {d}", file=sys.stderr)
    return EXIT_ANALYTIC if rep.diagnostics else EXIT_OK


# --------------------------------------------------------------------------- simulate

def _planted(doc) -> RuleSet:
    if doc is None:
        return DEFAULT_RULE_SETS[0]
    if isinstance(doc, str):
        for rs in DEFAULT_RULE_SETS:
            if rs.state == doc:
                return rs
        raise ScenarioError(f"unknown built-in rule set {doc!r}")
    rules = tuple(CombinationRule.from_dict(r) for r in doc)
    return RuleSet("planted", rules)


_CORPUS_KEYS = {"kind", "seed", "n_pos", "n_neg", "sessions_per_ad", "planted", "duration_ms", "fps",
                "amplitude", "noise_sigma", "fire_prob", "n_moments", "moment_ms", "distractors"}


def simulate_corpus(doc: dict, out: Path, fmt: str = "csv") -> LabeledCorpus:
    unknown = set(doc) - _CORPUS_KEYS
    if unknown:
        raise ScenarioError(f"unknown corpus keys: {sorted(unknown)}")
    kw = {k: doc[k] for k in ("duration_ms", "fps", "amplitude", "noise_sigma", "fire_prob", "n_moments",
                              "distractors") if k in doc}
    if "moment_ms" in doc:
        kw["moment_ms"] = tuple(doc["moment_ms"])
    try:
        corpus = generate_ad_corpus(int(doc["n_pos"]), int(doc["n_neg"]), int(doc["sessions_per_ad"]),
                                    _planted(doc.get("planted")), int(doc.get("seed", 0)), **kw)
    except KeyError as exc:
        raise ScenarioError(f"corpus spec missing {exc}") from None
    ext = "jsonl" if fmt == "jsonl" else "csv"
    mads = []
    for ad in corpus.ads:
        d = out / ad.ad_id
        d.mkdir(parents=True, exist_ok=True)
        msess = []
        for s in ad.sessions:
            p = d / f"{s.session_id}.{ext}"
            write_frame_stream(s.observations, p, fmt)
            (d / f"{s.session_id}.truth.json").write_text(s.ground_truth.to_json(), encoding="utf-8")
            msess.append(ManifestSession(s.session_id, p.relative_to(out), s.demographics))
        mads.append(ManifestAd(ad.ad_id, ad.label, list(ad.moments), msess))
    write_manifest(mads, out / "manifest.json")
    return corpus


def cmd_simulate(args) -> int:
    p = Path(args.input)
    if not p.is_file():
        raise UsageError(f"spec file not found: {p}")
    try:
        doc = json.loads(p.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"{p}: invalid JSON ({exc.msg})") from None
    if not isinstance(doc, dict):
        raise ScenarioError(f"{p}: spec must be a JSON object")
    if args.seed is not None:
        doc["seed"] = args.seed
    out = Path(args.output or ".")
    out.mkdir(parents=True, exist_ok=True)
    fmt = args.format or "csv"
    kind = doc.get("kind", "scenario")
    if kind == "corpus":
        corpus = simulate_corpus(doc, out, fmt)
        print(f"wrote {len(corpus.ads)} ads, {corpus.n_sessions} sessions to {out}")
    elif kind == "scenario":
        spec = ScenarioSpec.from_dict(doc)
        frames, gt = generate_stream(spec)
        write_frame_stream(frames, out / f"stream.{'jsonl' if fmt == 'jsonl' else 'csv'}", fmt)
        (out / "ground_truth.json").write_text(gt.to_json(), encoding="utf-8")
        print(f"wrote {len(frames)} frames to {out}")
    else:
        raise ScenarioError(f"unknown spec kind {kind!r} (expected 'scenario' or 'corpus')")
    return EXIT_OK


# --------------------------------------------------------------------------- bench

def bench_workload(n_frames: int, faces: int, seed: int = 0, crops: bool = True, fps: float = 30.0) -> list:
    """Deterministic multi-face workload: one video, ``faces`` side-by-side tracks of ``n_frames`` each."""
    from dataclasses import replace

    from .stream import BoundingBox
    from .synth import ScenarioEvent, keyed_rng

    duration = int(math.ceil(n_frames * 1000.0 / fps))
    rng = keyed_rng(seed, 6)
    events = []
    t = 500
    while t + 3000 < duration:
        events.append(ScenarioEvent("au_pulse", t, 1500, ("AU12",), 70.0))
        events.append(ScenarioEvent("blink", t + 2000, 200, ("AU43",), 95.0))
        t += int(rng.integers(4000, 6000))
    spec = ScenarioSpec(seed=seed, duration_ms=duration, fps=fps, events=tuple(events), noise=4.0,
                        video_id="bench", crops=crops, crop_size=48)
    frames, _ = generate_stream(spec)
    frames = frames[:n_frames]
    out = []
    for k in range(faces):
        dx = 170.0 * k
        for o in frames:
            b = o.box
            box = BoundingBox(b.x + dx - 240.0 + 20.0, b.y, b.w, b.h)
            lm = None
            if o.landmarks is not None:
                lm = type(o.landmarks).from_array(o.landmarks.as_array() + np.array([dx - 220.0, 0.0]))
            out.append(replace(o, face_id=f"face{k}", box=box, landmarks=lm))
    return out


def run_bench(n_frames: int, faces: int, cfg: EngineConfig, repeats: int = 3, seed: int = 0,
              workers: int = 1, crops: bool = True) -> tuple[dict, list]:
    obs = bench_workload(n_frames, faces, seed, crops)
    totals, per_frame = [], {s: [] for s in ("tracking",) + STAGES}
    results = []
    for _ in range(repeats):
        # drop the previous repeat's output so it is neither live heap nor deferred garbage here
        tracked = results = None
        gc.collect()
        t0 = time.perf_counter()
        from .pipeline import retrack_all

        tracked = retrack_all(obs, cfg)
        t1 = time.perf_counter()
        results = analyze_observations(tracked, cfg, workers=workers)
        t2 = time.perf_counter()
        totals.append(t2 - t0)
        n = len(tracked)
        per_frame["tracking"].append((t1 - t0) / n * 1e6)
        for s in STAGES:
            per_frame[s].append(sum(r.timings.get(s, 0.0) for r in results) / n * 1e6)
    n_out = sum(len(r.frames) for r in results)
    best = min(totals)
    report = {
        "faces": faces,
        "frames_per_face": n_frames,
        "records": n_out,
        "repeats": repeats,
        "workers": workers,
        "seconds": {"min": best, "median": float(np.median(totals)), "max": max(totals)},
        "frames_per_second": n_out / best,
        "us_per_frame": {
            s: {"p50": float(np.percentile(v, 50)), "p90": float(np.percentile(v, 90)), "max": float(max(v))}
            for s, v in per_frame.items()
        },
    }
    return report, results


def cmd_bench(args) -> int:
    cfg = _config(args.config)
    report, results = run_bench(args.frames, args.faces, cfg, args.repeats, args.seed or 0, args.workers)
    text = json.dumps(report, indent=2, sort_keys=True) + "\n"
    if args.output:
        Path(args.output).write_text(text, encoding="utf-8")
    sys.stdout.write(text)
    if args.metrics_output:
        with open(args.metrics_output, "w", encoding="utf-8", newline="") as fh:
            write_metric_records(results, cfg, fh, "csv")
    return EXIT_OK


# --------------------------------------------------------------------------- entry point

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="affectstream", description="Facial affect analytics over per-frame AU streams.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, workers=True):
        sp.add_argument("--config", help="engine config JSON (defaults built in)")
        sp.add_argument("--input", required=True)
        sp.add_argument("--output")
        if workers:
            sp.add_argument("--workers", type=int, default=1)

    a = sub.add_parser("analyze", help="per-frame metrics for a frame stream")
    common(a)
    a.add_argument("--format", choices=("csv", "jsonl"))
    a.add_argument("--retrack", action="store_true", help="reassign face ids via the track orchestrator")
    a.add_argument("--blinks", help="also write the blink event log (CSV) here")
    a.set_defaults(func=cmd_analyze)

    e = sub.add_parser("evaluate", help="KPIs over a labelled corpus manifest")
    common(e)
    e.add_argument("--kpi", action="append", choices=KPI_CHOICES)
    e.add_argument("--state", help="composite state to score (default: first rule set)")
    e.add_argument("--aggregator", choices=AGGREGATORS, default="max")
    e.add_argument("--min-support", type=int, default=5)
    e.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("simulate", help="generate synthetic streams or corpora")
    common(s, workers=False)
    s.add_argument("--seed", type=int)
    s.add_argument("--format", choices=("csv", "jsonl"))
    s.set_defaults(func=cmd_simulate)

    b = sub.add_parser("bench", help="throughput benchmark")
    b.add_argument("--config")
    b.add_argument("--output")
    b.add_argument("--faces", type=int, default=1)
    b.add_argument("--frames", type=int, default=10_000)
    b.add_argument("--repeats", type=int, default=3)
    b.add_argument("--seed", type=int)
    b.add_argument("--workers", type=int, default=1)
    b.add_argument("--metrics-output", help="write the analytic records for determinism checks")
    b.set_defaults(func=cmd_bench)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(name)s: %(message)s")
    if getattr(args, "workers", 1) < 1:
        print("affectstream: --workers must be >= 1", file=sys.stderr)
        return EXIT_USAGE
    try:
        return args.func(args)
    except (ConfigError, UsageError, ScenarioError) as exc:
        print(f"affectstream: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (StreamError, SingleClassError, ValueError) as exc:
        print(f"affectstream: {exc}", file=sys.stderr)
        return EXIT_ANALYTIC
    except OSError as exc:
        print(f"affectstream: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
