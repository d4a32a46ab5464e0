import json
import math

import pytest

from focusloop.archive import ArchiveReader
from focusloop.backends import MockEmbedder, ScriptedAnswerModel, uniform_logprobs
from focusloop.evidence import PipelineConfig, Query
from focusloop.pipeline import (
    ManifestError,
    format_footprint,
    footprint_comparison,
    interval_iou,
    load_candidates,
    load_manifest,
    normalize_answer,
    parse_manifest,
    run_dataset,
    run_pipeline,
    strip_volatile,
    token_footprint,
)
from focusloop.sampler import sample_preview
from focusloop.synth import make_manifest, make_video

EMB = MockEmbedder(64, 0)
SURE = {"text": "B", "token_logprobs": list(uniform_logprobs(0.99, 3))}


def unsure(text="hmm", **kw):
    return {"text": text, "token_logprobs": list(uniform_logprobs(0.9, 4)), **kw}


@pytest.fixture
def video(tmp_path):
    return make_video(tmp_path, "clip", duration_sec=60, fps=1.0, gold_interval=(29, 31), plant="none", seed=7)


def expected_preview(video, config=PipelineConfig()):
    with ArchiveReader(video.archive) as r:
        cands = load_candidates(r, video.sidecar)
    q = Query(video.query, EMB.embed_text(video.query))
    return {f.index for f in sample_preview(cands, q, config, video.duration_sec).frames}


def run(video, steps, config=PipelineConfig(), **kw):
    model = ScriptedAnswerModel(steps)
    res = run_pipeline(video.archive, video.sidecar, video.query, config, EMB, model, **kw)
    return res, model


def test_confident_first_pass_short_circuits(video):
    res, model = run(video, [SURE])
    assert model.calls == 1
    f = res.trace["final"]
    assert f["accepted_by"] == "gate" and f["rounds_used"] == 0
    assert set(f["evidence"]) == expected_preview(video)
    assert res.answer == "B" and res.evidence.rounds == 0


def test_cited_timestamp_golden_path(video):
    res, model = run(video, [unsure("probably at [00:30]"), SURE])
    assert model.calls == 2
    r0 = res.trace["rounds"][0]
    assert r0["grounding"] == {"target_sec": 30.0, "source": "regex", "raw_match": "[00:30]"}
    assert r0["window"]["frames"] == [29, 30, 31]
    assert (r0["window"]["lo_sec"], r0["window"]["hi_sec"]) == (28.5, 31.5)
    assert set(res.trace["final"]["evidence"]) == expected_preview(video) | {29, 30, 31}
    assert res.trace["final"]["accepted_by"] == "gate" and res.evidence.rounds == 1


def test_attention_fallback_centres_window(video):
    res, _ = run(video, [unsure(attention_peak_sec=42.0), SURE])
    r0 = res.trace["rounds"][0]
    # preview frames only; 42 s need not be among them, so the argmax is the nearest preview frame
    preview = sorted(expected_preview(video))
    nearest = min(preview, key=lambda i: (abs(i - 42), i))
    assert r0["grounding"]["source"] == "attention"
    assert r0["grounding"]["target_sec"] == float(nearest)


def test_never_confident_hits_round_cap(video):
    steps = [unsure(f"[00:{10 + 10 * i:02d}]") for i in range(4)]
    res, model = run(video, steps)
    f = res.trace["final"]
    assert model.calls == 4 and f["rounds_used"] == 3 and f["accepted_by"] == "round-cap"
    assert [r["window"]["target_sec"] for r in res.trace["rounds"][:3]] == [10.0, 20.0, 30.0]
    assert res.trace["rounds"][3]["window"] is None
    assert f["total_frames"] <= f["frame_budget"] == f["preview_size"] + 3 * (math.ceil(3.0) + 1)


def test_grounding_failure_accepts_current_answer(video):
    res, model = run(video, [unsure("no idea")], PipelineConfig(want_attention=False))
    assert model.calls == 1
    assert res.trace["final"]["accepted_by"] == "grounding-failure"
    assert "error" in res.trace["rounds"][0]["grounding"]


def test_trace_is_complete_and_evidence_monotone(video):
    steps = [unsure("[00:05]"), unsure("[00:05]"), unsure("[00:50]"), SURE]
    res, model = run(video, steps)
    rounds = res.trace["rounds"]
    assert len(rounds) == model.calls == 4
    sizes = [r["evidence_size"] for r in rounds]
    assert sizes == sorted(sizes)
    for prev, r in zip(rounds, rounds[1:]):
        assert r["evidence_size"] == prev["evidence_size"] + len(prev["new_frames"])
    assert rounds[1]["new_frames"] == []  # same window twice adds nothing
    json.dumps(res.trace)


def test_zero_cache_reads_only_evidence_payloads(video):
    res, _ = run(video, [unsure("[00:30]"), unsure("[00:45]"), SURE])
    with ArchiveReader(video.archive) as r:
        expected = sum(r.frames[i].payload_len for i in res.trace["final"]["evidence"])
        index_bytes = r.accounting.bytes_read
    f = res.trace["final"]
    assert f["payload_bytes"] == expected
    assert f["bytes_read"] == expected + index_bytes
    assert f["bytes_read"] < f["file_size"]


def test_preload_matches_zero_cache(video):
    steps = [unsure("[00:30]"), unsure(attention_peak_sec=3.0), SURE]
    zc, _ = run(video, steps, io="zero-cache")
    pre, _ = run(video, steps, io="preload")
    assert zc.answer == pre.answer and zc.evidence == pre.evidence
    assert strip_volatile(zc.trace) == strip_volatile(pre.trace)
    assert pre.trace["final"]["bytes_read"] == pre.trace["final"]["file_size"]
    assert zc.trace["final"]["bytes_read"] < pre.trace["final"]["bytes_read"]


def test_baseline_and_cot_only(video):
    res, model = run(video, [unsure("[00:30]"), SURE], mode="baseline")
    assert model.calls == 1 and res.trace["final"]["accepted_by"] == "round-cap"
    res, model = run(video, [unsure("[00:30]"), unsure(), SURE], mode="cot_only")
    assert model.calls == 2 and res.trace["final"]["rounds_used"] == 1
    assert res.trace["final"]["total_frames"] == res.trace["final"]["preview_size"]
    assert res.trace["final"]["payload_bytes"] == res.trace["preview"]["payload_bytes"]


def test_dense_oracle_uses_every_frame(video):
    res, model = run(video, [SURE], mode="dense_oracle")
    assert model.calls == 1 and res.trace["final"]["total_frames"] == 60
    res, _ = run(video, [SURE], PipelineConfig(dense_cap=16), mode="dense_oracle")
    assert res.trace["final"]["total_frames"] == 16


def test_random_retrieval_ignores_citation(video):
    steps = [unsure("[00:30]"), SURE]
    a, _ = run(video, steps, mode="random_retrieval", entry_seed=4)
    b, _ = run(video, steps, mode="random_retrieval", entry_seed=4)
    t = a.trace["rounds"][0]["grounding"]
    assert t["source"] == "random" and t["target_sec"] != 30.0
    assert t == b.trace["rounds"][0]["grounding"]


def test_scripted_replay_is_deterministic(video):
    steps = [unsure("[00:30]"), unsure(attention_peak_sec=50), SURE]
    a, _ = run(video, steps)
    b, _ = run(video, steps)
    assert strip_volatile(a.trace) == strip_volatile(b.trace)


# metrics ---------------------------------------------------------------------

def test_token_footprint():
    assert token_footprint(0, 256) == 0
    assert token_footprint(10, 256) == 2560
    assert token_footprint(340, 250) == 85_000
    assert token_footprint(10.4, 250) == pytest.approx(2600)
    with pytest.raises(ValueError):
        token_footprint(1, 0)


def test_footprint_report_text():
    cmp = footprint_comparison(340, 10.4, 250)
    assert cmp["ratio"] == pytest.approx(32.69, abs=0.01)
    text = format_footprint(cmp)
    assert "85,000" in text and "2,600" in text and "32.7×" in text and "~33×" in text


@pytest.mark.parametrize("a,b,expected", [
    ((0, 10), (0, 10), 1.0), ((0, 10), (5, 15), 1 / 3), ((0, 1), (2, 3), 0.0),
    ((4, 4), (4, 4), 1.0), ((4, 4), (5, 5), 0.0), ((4, 4), (0, 10), 0.0), ((20, 20), (0, 10), 0.0),
])
def test_interval_iou(a, b, expected):
    assert interval_iou(a, b) == pytest.approx(expected)


def test_interval_iou_rejects_inverted():
    with pytest.raises(ValueError):
        interval_iou((3, 1), (0, 1))


@pytest.mark.parametrize("a,b", [(" B. ", "b"), ("Paris", "paris"), ("yes.", "YES")])
def test_normalize_answer(a, b):
    assert normalize_answer(a) == normalize_answer(b)


# datasets --------------------------------------------------------------------

def test_empty_manifest(tmp_path):
    (tmp_path / "m.json").write_text("[]")
    rep = run_dataset(tmp_path / "m.json", PipelineConfig(), EMB, lambda e, i: None)
    assert rep.results == [] and rep.summary()["entries"] == 0 and rep.failures == 0


def test_manifest_validation(tmp_path, video):
    with pytest.raises(ManifestError):
        parse_manifest({"not": "a list"})
    with pytest.raises(ManifestError, match="missing"):
        parse_manifest([{"archive": "x"}], tmp_path)
    with pytest.raises(ManifestError, match="does not exist"):
        parse_manifest([{"archive": "nope.fafv", "sidecar": "clip.faem", "query": "q"}], tmp_path)
    with pytest.raises(ManifestError, match="gold_interval"):
        parse_manifest([{"archive": "clip.fafv", "sidecar": "clip.faem", "query": "q",
                         "gold_interval": [5, 1]}], tmp_path)


def test_entry_failures_are_recorded_and_run_continues(tmp_path, video):
    data = [
        {"archive": "clip.fafv", "sidecar": "clip.faem", "query": "q", "script": [SURE]},
        {"archive": "clip.fafv", "sidecar": "clip.faem", "query": "q", "script": []},
        {"archive": "clip.fafv", "sidecar": "clip.faem", "query": "q", "gold_interval": [10, 999],
         "script": [SURE]},
    ]
    entries = parse_manifest(data, tmp_path)
    rep = run_dataset(entries, PipelineConfig(), EMB, lambda e, i: ScriptedAnswerModel(e.script))
    assert [r.ok for r in rep.results] == [True, False, False]
    assert "exhausted" in rep.results[1].error and "duration" in rep.results[2].error
    assert rep.summary()["failed"] == 2


def test_workers_do_not_change_results(tmp_path):
    path = make_manifest(tmp_path / "m", 8, seed=3, backend="scripted")
    factory = lambda e, i: ScriptedAnswerModel(e.script)  # noqa: E731
    one = run_dataset(path, PipelineConfig(), EMB, factory, workers=1)
    four = run_dataset(path, PipelineConfig(), EMB, factory, workers=4)
    assert one.summary() == four.summary()
    assert [strip_volatile(r.trace) for r in one.results] == [strip_volatile(r.trace) for r in four.results]


def test_adafocus_uses_fewer_tokens_than_dense(tmp_path):
    path = make_manifest(tmp_path / "m", 4, seed=5, backend="scripted", durations=(200, 400))
    factory = lambda e, i: ScriptedAnswerModel(e.script)  # noqa: E731
    ada = run_dataset(path, PipelineConfig(), EMB, factory, "adafocus").summary()
    dense = run_dataset(path, PipelineConfig(), EMB, factory, "dense_oracle").summary()
    assert ada["mean_tokens"] < dense["mean_tokens"]


def test_load_manifest_bad_json(tmp_path):
    (tmp_path / "m.json").write_text("{oops")
    with pytest.raises(ManifestError):
        load_manifest(tmp_path / "m.json")
