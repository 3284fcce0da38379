import json
import subprocess
import sys
from pathlib import Path

import pytest

from affectstream.cli import main
from affectstream.config import EngineConfig
from affectstream.stream import write_frame_stream

FIXTURES = Path(__file__).parent / "fixtures"

CORPUS_SPEC = {"kind": "corpus", "seed": 3, "n_pos": 4, "n_neg": 4, "sessions_per_ad": 4, "duration_ms": 20_000}


def write_json(path, doc):
    path.write_text(json.dumps(doc))
    return path


@pytest.fixture(scope="module")
def corpus_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("corpus")
    spec = write_json(d / "spec.json", CORPUS_SPEC)
    assert main(["simulate", "--input", str(spec), "--output", str(d / "out")]) == 0
    return d / "out"


@pytest.fixture
def scenario_stream(tmp_path):
    spec = write_json(tmp_path / "s.json", {"seed": 1, "duration_ms": 3000, "fps": 10, "noise": 2.0,
                                            "events": [{"kind": "blink", "onset_ms": 1000, "duration_ms": 200}]})
    assert main(["simulate", "--input", str(spec), "--output", str(tmp_path / "sim")]) == 0
    return tmp_path / "sim" / "stream.csv"


def test_missing_config_exits_2_naming_path(tmp_path, capsys, scenario_stream):
    rc = main(["analyze", "--config", str(tmp_path / "absent.json"), "--input", str(scenario_stream)])
    assert rc == 2
    assert "absent.json" in capsys.readouterr().err


def test_invalid_config_exits_2(tmp_path, capsys, scenario_stream):
    cfg = write_json(tmp_path / "c.json", {"postprocess": {"smooth_window_frames": 2}})
    assert main(["analyze", "--config", str(cfg), "--input", str(scenario_stream)]) == 2


def test_usage_errors_exit_2(tmp_path, capsys):
    assert main([]) == 2
    assert main(["analyze"]) == 2
    assert main(["analyze", "--input", str(tmp_path / "none.csv")]) == 2
    assert "none.csv" in capsys.readouterr().err
    assert main(["evaluate", "--input", "x", "--kpi", "precision"]) == 2


def test_malformed_stream_exits_1(tmp_path, capsys, scenario_stream):
    lines = scenario_stream.read_text().splitlines()
    lines[2] = lines[2].replace(",100,", ",soon,", 1)
    p = tmp_path / "bad.csv"
    p.write_text("\n".join(lines) + "\n")
    assert main(["analyze", "--input", str(p)]) == 1
    assert "line 3" in capsys.readouterr().err


def test_analyze_writes_one_record_per_frame(tmp_path, scenario_stream):
    out = tmp_path / "m.csv"
    blinks = tmp_path / "b.csv"
    assert main(["analyze", "--input", str(scenario_stream), "--output", str(out), "--blinks", str(blinks)]) == 0
    lines = out.read_text().splitlines()
    assert len(lines) == 31
    assert lines[0].split(",") == __import__("affectstream.pipeline", fromlist=["x"]).output_columns(EngineConfig())
    assert blinks.read_text().splitlines()[0].startswith("video_id,face_id,onset_ms")
    jl = tmp_path / "m.jsonl"
    assert main(["analyze", "--input", str(scenario_stream), "--output", str(jl)]) == 0
    assert len(jl.read_text().splitlines()) == 30


def test_simulate_is_reproducible(tmp_path):
    spec = write_json(tmp_path / "s.json", {"kind": "corpus", "n_pos": 1, "n_neg": 1, "sessions_per_ad": 2,
                                            "duration_ms": 10_000})
    for d in ("a", "b"):
        assert main(["simulate", "--input", str(spec), "--seed", "4", "--output", str(tmp_path / d)]) == 0
    files = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file())
    assert len(files) == 9
    for f in files:
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_simulated_corpus_layout(corpus_dir):
    man = json.loads((corpus_dir / "manifest.json").read_text())
    assert len(man["ads"]) == 8
    assert sorted(p.name for p in corpus_dir.iterdir() if p.is_dir()) == [f"ad{i:03d}" for i in range(8)]
    for ad in man["ads"]:
        assert len(ad["sessions"]) == 4
        for s in ad["sessions"]:
            assert (corpus_dir / s["path"]).is_file()
            assert set(s["demographics"]) == {"age_band", "ethnicity", "gender", "glasses"}


@pytest.mark.parametrize("doc", [
    {"kind": "corpus", "n_pos": 1, "n_neg": 1, "sessions_per_ad": 0},
    {"kind": "corpus", "n_pos": 1},
    {"kind": "movie"},
    {"duration_ms": 1000, "events": [{"kind": "blink", "onset_ms": 900, "duration_ms": 200}]},
    {"seed": 1, "bogus": True},
])
def test_invalid_simulation_specs_exit_2(tmp_path, doc):
    spec = write_json(tmp_path / "s.json", doc)
    assert main(["simulate", "--input", str(spec), "--output", str(tmp_path / "o")]) == 2


def test_evaluate_planted_and_distractor_states(corpus_dir, tmp_path, capsys):
    rc = main(["evaluate", "--input", str(corpus_dir / "manifest.json"), "--output", str(tmp_path / "r"),
               "--kpi", "roc-ad", "--kpi", "roc-sent", "--kpi", "f1", "--kpi", "auc"])
    assert rc == 0
    rep = json.loads((tmp_path / "r" / "kpi_report.json").read_text())
    assert rep["roc_ad"] >= 95 and rep["roc_sent"] >= 90
    assert 0 <= rep["f1"] <= 1 and rep["auc"] == pytest.approx(rep["roc_ad"] / 100)
    for f in ("kpi_report.csv", "slices.csv", "report.txt"):
        assert (tmp_path / "r" / f).is_file()
    assert "ROC-Ad" in capsys.readouterr().out
    # a state built on AUs the corpus never plants never fires, so it cannot rank the ads
    cfg = write_json(tmp_path / "cfg.json", {"rule_sets": {"distractor": [{"conjuncts": ["AU9", "AU10"]},
                                                                          {"conjuncts": ["AU20", "AU26"]}]}})
    assert main(["evaluate", "--config", str(cfg), "--input", str(corpus_dir / "manifest.json"),
                 "--output", str(tmp_path / "n"), "--kpi", "roc-ad", "--aggregator", "active_fraction"]) == 0
    null = json.loads((tmp_path / "n" / "kpi_report.json").read_text())
    assert abs(null["roc_ad"] - 50) <= 10


def test_evaluate_unknown_state_and_missing_session(corpus_dir, tmp_path, capsys):
    assert main(["evaluate", "--input", str(corpus_dir / "manifest.json"), "--state", "glee"]) == 2
    man = json.loads((corpus_dir / "manifest.json").read_text())
    man["ads"][0]["sessions"][0]["path"] = "ad000/gone.csv"
    broken = corpus_dir / "broken.json"
    write_json(broken, man)
    assert main(["evaluate", "--input", str(broken), "--output", str(tmp_path / "r")]) == 2
    assert "gone.csv" in capsys.readouterr().err


def test_evaluate_single_class_gives_partial_report(corpus_dir, tmp_path, capsys):
    man = json.loads((corpus_dir / "manifest.json").read_text())
    for a in man["ads"]:
        a["label"] = 1
    one = corpus_dir / "oneclass.json"
    write_json(one, man)
    assert main(["evaluate", "--input", str(one), "--output", str(tmp_path / "r"), "--kpi", "roc-ad",
                 "--kpi", "roc-sent"]) == 1
    rep = json.loads((tmp_path / "r" / "kpi_report.json").read_text())
    assert rep["roc_ad"] is None and rep["diagnostics"]
    assert rep["roc_sent"] is not None


def test_bench_reports_stage_breakdown(tmp_path):
    out = tmp_path / "bench.json"
    assert main(["bench", "--frames", "600", "--faces", "2", "--repeats", "2", "--output", str(out)]) == 0
    rep = json.loads(out.read_text())
    assert rep["records"] == 1200 and rep["frames_per_second"] > 0
    stages = rep["us_per_frame"]
    assert set(stages) == {"tracking", "pose", "postprocess", "emotions", "composites", "expressive", "quality",
                           "assemble"}
    total_us = rep["seconds"]["max"] / rep["records"] * 1e6
    assert sum(v["p50"] for v in stages.values()) <= total_us * 1.05


def test_module_entry_point(tmp_path):
    r = subprocess.run([sys.executable, "-m", "affectstream", "--help"], capture_output=True, text=True)
    assert r.returncode == 0 and "analyze" in r.stdout


def test_reference_fixture_matches_its_generator(tmp_path):
    sys.path.insert(0, str(FIXTURES))
    try:
        from make_reference import reference_observations
    finally:
        sys.path.pop(0)
    out = tmp_path / "ref.csv"
    write_frame_stream(reference_observations(), out, "csv")
    assert out.read_bytes() == (FIXTURES / "reference_stream.csv").read_bytes()
