"""End-to-end smoke tests for the Python surface of the C++ core."""

import json
import pathlib

import pytest

import cmie

REPO = pathlib.Path(__file__).resolve().parents[2]
FIXTURES = REPO / "tests" / "fixtures"


def test_extract_json_ladder():
    verbatim = cmie.extract_json('{"label": "Yes", "explanation": "x"}')
    assert not verbatim.repaired
    fenced = cmie.extract_json('```json\n{"score": 7.0, "explanation": "x"}\n```')
    assert fenced.repaired
    assert json.loads(fenced.text)["score"] == 7.0
    embedded = cmie.extract_json('model says: {"a": [1, 2]} hope that helps')
    assert json.loads(embedded.text) == {"a": [1, 2]}
    with pytest.raises(cmie.ParseFailure):
        cmie.extract_json("no json here at all")


def test_verdict_semantics_per_variant():
    raw = '{"label": "Yes", "explanation": "pairing looks wrong"}'
    assert cmie.parse_verdict(raw).semantic_label == "fake"
    assert cmie.parse_verdict(raw, variant="task_rewrite").semantic_label == "fake"
    assert cmie.parse_verdict(raw, variant="label_reversal").semantic_label == "real"
    assert cmie.parse_coexistence('{"score": 4, "explanation": "weak"}').score == 4.0


def test_catalog_renders_without_leftover_placeholders():
    catalog = cmie.load_catalog()
    assert len(catalog.digest) == 64
    item = cmie.NewsItem(id="it_1", image_ref="/nope.png", caption="A harbor at dawn.")
    prompt = catalog.render("direct", item)
    assert "A harbor at dawn." in prompt.text
    assert "{" not in prompt.text
    full = catalog.render(
        "final",
        item,
        titles=["alpha", "beta"],
        relation=cmie.ParsedCoexistence(score=6.2, explanation="shared scene"),
        entities=["harbor"],
    )
    assert "6.2" in full.text
    assert "harbor" in full.text


def test_corpus_and_metrics_roundtrip(tmp_path):
    corpus = cmie.load_dataset(FIXTURES / "corpus_100.jsonl")
    assert len(corpus) == 100
    out = tmp_path / "copy.jsonl"
    cmie.write_dataset(corpus, out)
    again = cmie.load_dataset(out)
    assert [i.id for i in again] == [i.id for i in corpus]

    gold = {i.id: i.label for i in corpus}
    perfect = [(i.id, i.label) for i in corpus]
    m = cmie.compute_metrics(perfect, gold)
    assert m.accuracy == 1.0
    assert m.fake.f1 == 1.0
    assert m.counts.abstentions == 0

    one_abstention = [(i.id, None if n == 0 else i.label) for n, i in enumerate(corpus)]
    m2 = cmie.compute_metrics(one_abstention, gold)
    assert m2.counts.abstentions == 1
    assert m2.accuracy == 1.0


def test_replay_batch_reproduces_recorded_run():
    results = cmie.replay_batch(
        corpus=FIXTURES / "corpus_100.jsonl",
        evidence=FIXTURES / "evidence",
        transcripts=FIXTURES / "transcripts" / "replay.jsonl",
        prompts_dir=cmie.catalog_dir(),
        model_name="scripted-mllm",
        workers=8,
    )
    assert len(results) == 100
    assert sum(r.fallback_used for r in results) == 20
    assert all(not r.abstained for r in results)

    corpus = cmie.load_dataset(FIXTURES / "corpus_100.jsonl")
    gold = {i.id: i.label for i in corpus}
    preds = [(r.item_id, r.verdict.semantic_label) for r in results]
    m = cmie.compute_metrics(preds, gold)
    assert m.accuracy == pytest.approx(0.85)

    report = cmie.error_propagation_analysis(results, gold, threshold=6.0)
    assert report.with_relation == 80
    assert report.affected_fake == 10
    assert report.affected_real == 10
    assert report.fake_share == pytest.approx(0.5)


def test_replay_batch_without_out_dir_writes_nothing(tmp_path, monkeypatch):
    # an empty default path becomes "." through pathlib and used to spill
    # item files and a manifest into the caller's working directory
    monkeypatch.chdir(tmp_path)
    cmie.replay_batch(
        corpus=FIXTURES / "corpus_100.jsonl",
        evidence=FIXTURES / "evidence",
        transcripts=FIXTURES / "transcripts" / "replay.jsonl",
        prompts_dir=cmie.catalog_dir(),
        model_name="scripted-mllm",
        workers=2,
    )
    assert list(tmp_path.iterdir()) == []

    out = tmp_path / "persisted"
    cmie.replay_batch(
        corpus=FIXTURES / "corpus_100.jsonl",
        evidence=FIXTURES / "evidence",
        transcripts=FIXTURES / "transcripts" / "replay.jsonl",
        prompts_dir=cmie.catalog_dir(),
        model_name="scripted-mllm",
        workers=2,
        out_dir=out,
    )
    assert (out / "manifest.json").exists()
    assert len(list(out.glob("item_*.json"))) == 100


def test_replay_miss_is_a_typed_error():
    with pytest.raises(cmie.ReplayMissError):
        cmie.replay_batch(
            corpus=FIXTURES / "corpus_100.jsonl",
            evidence=FIXTURES / "evidence",
            transcripts=FIXTURES / "transcripts" / "replay.jsonl",
            prompts_dir=cmie.catalog_dir(),
            model_name="some-other-model",
            workers=2,
        )


def test_request_hash_is_stable_and_sensitive():
    a = cmie.request_hash("prompt", "model-x", temperature=0.1)
    assert a == cmie.request_hash("prompt", "model-x", temperature=0.1)
    assert a != cmie.request_hash("prompt!", "model-x", temperature=0.1)
    assert a != cmie.request_hash("prompt", "model-y", temperature=0.1)
    assert a != cmie.request_hash("prompt", "model-x", temperature=0.2)
    with_image = cmie.request_hash(
        "prompt", "model-x", image_bytes=b"\x89PNG fake bytes"
    )
    assert a != with_image


def test_transcript_audit_on_shipped_store():
    audit = cmie.audit_transcripts(FIXTURES / "transcripts" / "replay.jsonl")
    assert audit.total_entries == audit.distinct_hashes
    assert audit.divergent_duplicates == 0
