#include <doctest.h>

#include <atomic>

#include <json.hpp>

#include "cmie/digest.hpp"
#include "cmie/errors.hpp"
#include "cmie/pipeline.hpp"
#include "support/paths.hpp"
#include "support/scripted_provider.hpp"

using namespace cmie;
using nlohmann::json;
using cmie::testing::FixtureModel;
using cmie::testing::ScriptedProvider;
using cmie::testing::TempDir;

namespace {

PromptCatalog& catalog() {
    static PromptCatalog c(cmie::testing::prompts_dir());
    return c;
}

NewsItem evidence_item() {
    NewsItem item;
    item.id = "item_0007";
    item.image_ref = "/does/not/exist.png";
    item.caption = FixtureModel::caption(7);
    item.gold_label = Label::Real;
    return item;
}

EvidenceBundle bundle_for(const NewsItem& item, std::size_t n_titles) {
    EvidenceBundle b;
    b.item_id = item.id;
    for (std::size_t t = 1; t <= n_titles; ++t) {
        b.titles.push_back("Title " + std::to_string(t) + " for " + item.id);
    }
    b.entities = {"someone", "somewhere"};
    b.provenance = EvidenceBundle::Provenance::Cache;
    return b;
}

PipelineConfig cmie_cfg() {
    PipelineConfig cfg;
    cfg.mode = Mode::Cmie;
    cfg.toggles = Toggles{true, true, true, true};
    cfg.model_name = FixtureModel::kModelName;
    cfg.validate_and_normalize();
    return cfg;
}

} // namespace

TEST_CASE("toggle strings parse in every documented form") {
    CHECK(toggles_from_string("TTTF") == Toggles{true, true, true, false});
    CHECK(toggles_from_string("tftf") == Toggles{true, false, true, false});
    CHECK(toggles_from_string("1110") == Toggles{true, true, true, false});
    CHECK(toggles_from_string("none") == Toggles{false, false, false, false});
    CHECK(toggles_from_string("image_title,crg") == Toggles{true, true, false, false});
    CHECK(toggles_from_string("entity") == Toggles{false, false, false, true});
    CHECK(to_string(Toggles{true, true, false, true}) == "TTFT");
    CHECK(toggles_from_string(to_string(Toggles{true, true, true, true})) ==
          Toggles{true, true, true, true});
    CHECK_THROWS_AS(toggles_from_string("TTX"), ConfigError);
    CHECK_THROWS_AS(toggles_from_string("image_title,unknown"), ConfigError);
}

TEST_CASE("mode follows from toggles") {
    CHECK(mode_from_toggles(Toggles{false, false, false, false}) == Mode::Direct);
    CHECK(mode_from_toggles(Toggles{true, false, false, false}) == Mode::Augmented);
    CHECK(mode_from_toggles(Toggles{true, true, false, false}) == Mode::Cmie);
    CHECK(mode_from_toggles(Toggles{true, true, true, true}) == Mode::Cmie);
}

TEST_CASE("config normalization enforces the mode/toggle coupling") {
    SUBCASE("direct clears toggles") {
        PipelineConfig cfg;
        cfg.mode = Mode::Direct;
        cfg.toggles = Toggles{true, true, true, true};
        cfg.validate_and_normalize();
        CHECK(cfg.toggles == Toggles{false, false, false, false});
    }
    SUBCASE("cmie forces the image title input on") {
        PipelineConfig cfg;
        cfg.mode = Mode::Cmie;
        cfg.toggles = Toggles{false, true, false, false};
        cfg.validate_and_normalize();
        CHECK(cfg.toggles.image_title);
    }
    SUBCASE("association scoring without the relation is rejected") {
        PipelineConfig cfg;
        cfg.mode = Mode::Cmie;
        cfg.toggles = Toggles{true, false, true, false};
        CHECK_THROWS_AS(cfg.validate_and_normalize(), ConfigError);
    }
    SUBCASE("final-prompt variants only exist under cmie") {
        PipelineConfig cfg;
        cfg.mode = Mode::Direct;
        cfg.toggles = Toggles{false, false, false, false};
        cfg.variant = Variant::LabelReversal;
        CHECK_THROWS_AS(cfg.validate_and_normalize(), ConfigError);
    }
    SUBCASE("range checks") {
        PipelineConfig cfg;
        cfg.strong_threshold = 11.0;
        CHECK_THROWS_AS(cfg.validate_and_normalize(), ConfigError);
        cfg = PipelineConfig{};
        cfg.evidence_cap = 0;
        CHECK_THROWS_AS(cfg.validate_and_normalize(), ConfigError);
        cfg = PipelineConfig{};
        cfg.workers = 0;
        CHECK_THROWS_AS(cfg.validate_and_normalize(), ConfigError);
    }
}

TEST_CASE("direct run parses a verdict and logs one transcript ref") {
    PipelineConfig cfg;
    cfg.mode = Mode::Direct;
    cfg.model_name = FixtureModel::kModelName;
    cfg.validate_and_normalize();
    auto provider = std::make_shared<ScriptedProvider>();
    Pipeline pipeline(cfg, provider, &catalog());

    const auto item = evidence_item(); // index 7: direct answer is correct
    const auto r = pipeline.run_direct(item);
    CHECK_FALSE(r.abstained);
    REQUIRE(r.verdict.has_value());
    CHECK(r.verdict->semantic_label == Label::Real);
    CHECK(r.variant == Variant::Original);
    REQUIRE(r.stage_transcripts.size() == 1);
    CHECK(r.stage_transcripts[0].stage == Stage::Direct);
    CHECK(pipeline.model_calls() == 1);

    // the logged hash is the hash of the exact request that was sent
    RenderInputs in;
    in.item = &item;
    const auto prompt = catalog().render(Stage::Direct, Variant::Original, in, 20);
    ChatRequest req;
    req.prompt_text = prompt.text;
    req.temperature = cfg.temperature;
    req.model_name = cfg.model_name;
    CHECK(r.stage_transcripts[0].request_hash == request_hash(req));
}

TEST_CASE("cmie run walks coexistence, scoring, final") {
    auto provider = std::make_shared<ScriptedProvider>();
    Pipeline pipeline(cmie_cfg(), provider, &catalog());
    const auto item = evidence_item();
    const auto r = pipeline.run_cmie(item, bundle_for(item, 3));

    CHECK_FALSE(r.abstained);
    CHECK_FALSE(r.degraded);
    CHECK_FALSE(r.fallback_used);
    REQUIRE(r.relation.has_value());
    CHECK(r.relation->score == doctest::Approx(FixtureModel::coexistence_score(7)));
    REQUIRE(r.evidence_scores.has_value());
    CHECK(r.evidence_scores->entries.size() == 3);
    REQUIRE(r.verdict.has_value());
    REQUIRE(r.stage_transcripts.size() == 3);
    CHECK(r.stage_transcripts[0].stage == Stage::Coexistence);
    CHECK(r.stage_transcripts[1].stage == Stage::Scoring);
    CHECK(r.stage_transcripts[2].stage == Stage::Final);
    CHECK(pipeline.model_calls() == 3);
}

TEST_CASE("a parse failure is re-asked once, then becomes an abstention") {
    std::atomic<int> calls{0};
    auto provider = std::make_shared<ScriptedProvider>([&](const ChatRequest&) {
        ++calls;
        return "this is not json";
    });
    PipelineConfig cfg;
    cfg.mode = Mode::Direct;
    cfg.validate_and_normalize();
    Pipeline pipeline(cfg, provider, &catalog());
    const auto r = pipeline.run_direct(evidence_item());

    CHECK(r.abstained);
    CHECK(r.abstain_reason.rfind("parse:", 0) == 0);
    CHECK_FALSE(r.verdict.has_value());
    CHECK(calls.load() == 2); // one ask, one identical re-ask
}

TEST_CASE("a flaky first answer recovers on the re-ask") {
    std::atomic<int> calls{0};
    auto provider = std::make_shared<ScriptedProvider>([&](const ChatRequest& req) {
        if (++calls == 1) return std::string("garbage");
        return FixtureModel::respond(req);
    });
    PipelineConfig cfg;
    cfg.mode = Mode::Direct;
    cfg.model_name = FixtureModel::kModelName;
    cfg.validate_and_normalize();
    Pipeline pipeline(cfg, provider, &catalog());
    const auto r = pipeline.run_direct(evidence_item());

    CHECK_FALSE(r.abstained);
    REQUIRE(r.verdict.has_value());
    CHECK(calls.load() == 2);
    CHECK(r.stage_transcripts.size() == 2); // both asks are on the record
}

TEST_CASE("refusals and transport faults become labelled abstentions") {
    SUBCASE("refusal") {
        auto provider = std::make_shared<ScriptedProvider>(
            [](const ChatRequest&) -> std::string { throw RefusalError("declined"); });
        PipelineConfig cfg;
        cfg.mode = Mode::Direct;
        cfg.validate_and_normalize();
        Pipeline pipeline(cfg, provider, &catalog());
        const auto r = pipeline.run_direct(evidence_item());
        CHECK(r.abstained);
        CHECK(r.abstain_reason.rfind("refusal:", 0) == 0);
    }
    SUBCASE("transport") {
        auto provider = std::make_shared<ScriptedProvider>(
            [](const ChatRequest&) -> std::string { throw TransportError("socket reset"); });
        PipelineConfig cfg;
        cfg.mode = Mode::Direct;
        cfg.validate_and_normalize();
        Pipeline pipeline(cfg, provider, &catalog());
        const auto r = pipeline.run_direct(evidence_item());
        CHECK(r.abstained);
        CHECK(r.abstain_reason.rfind("transport:", 0) == 0);
    }
    SUBCASE("auth failures abort instead of abstaining") {
        auto provider = std::make_shared<ScriptedProvider>(
            [](const ChatRequest&) -> std::string { throw AuthError("bad key"); });
        PipelineConfig cfg;
        cfg.mode = Mode::Direct;
        cfg.validate_and_normalize();
        Pipeline pipeline(cfg, provider, &catalog());
        CHECK_THROWS_AS(pipeline.run_direct(evidence_item()), AuthError);
    }
}

TEST_CASE("garbage coexistence degrades the run but still reaches a verdict") {
    auto provider = std::make_shared<ScriptedProvider>([](const ChatRequest& req) {
        if (FixtureModel::detect_stage(req.prompt_text) == Stage::Coexistence) {
            return std::string("no usable json");
        }
        return FixtureModel::respond(req);
    });
    Pipeline pipeline(cmie_cfg(), provider, &catalog());
    const auto item = evidence_item();
    const auto r = pipeline.run_cmie(item, bundle_for(item, 3));

    CHECK_FALSE(r.relation.has_value());
    CHECK_FALSE(r.evidence_scores.has_value()); // scoring needs the relation
    CHECK(r.degraded);
    CHECK_FALSE(r.abstained);
    CHECK(r.verdict.has_value());
}

TEST_CASE("batched scoring failure falls back to per-title prompts") {
    auto provider = std::make_shared<ScriptedProvider>([](const ChatRequest& req) {
        if (FixtureModel::detect_stage(req.prompt_text) == Stage::Scoring &&
            FixtureModel::titles_in_prompt(req.prompt_text).size() > 1) {
            return std::string("{\"broken\": true}"); // valid json, wrong shape
        }
        return FixtureModel::respond(req);
    });
    Pipeline pipeline(cmie_cfg(), provider, &catalog());
    const auto item = evidence_item();
    const auto r = pipeline.run_cmie(item, bundle_for(item, 3));

    CHECK_FALSE(r.degraded);
    REQUIRE(r.evidence_scores.has_value());
    REQUIRE(r.evidence_scores->entries.size() == 3);
    for (std::size_t t = 0; t < 3; ++t) {
        CHECK(r.evidence_scores->entries[t].index == static_cast<int>(t + 1));
        CHECK(r.evidence_scores->entries[t].original_title.find("Title " +
                                                                std::to_string(t + 1)) !=
              std::string::npos);
    }
    REQUIRE(r.verdict.has_value());
}

TEST_CASE("run_item falls back to direct when evidence is absent") {
    TempDir empty_store_dir;
    EvidenceStore store(empty_store_dir.path());
    auto provider = std::make_shared<ScriptedProvider>();
    Pipeline pipeline(cmie_cfg(), provider, &catalog());

    NewsItem item;
    item.id = "item_0004"; // planted as a no-evidence item
    item.image_ref = "/does/not/exist.png";
    item.caption = FixtureModel::caption(4);
    item.gold_label = FixtureModel::gold(4);

    const auto r = pipeline.run_item(item, store);
    CHECK(r.fallback_used);
    CHECK(r.mode == Mode::Cmie);
    CHECK(r.stage_transcripts.size() == 1);
    CHECK(pipeline.model_calls() == 1);
    REQUIRE(r.verdict.has_value());
}

TEST_CASE("stage cache reuses parse-accepted responses across pipelines") {
    StageCache cache;
    auto provider = std::make_shared<ScriptedProvider>();
    const auto item = evidence_item();
    const auto bundle = bundle_for(item, 3);

    Pipeline first(cmie_cfg(), provider, &catalog(), &cache);
    first.run_cmie(item, bundle);
    CHECK(first.model_calls() == 3);
    CHECK(cache.misses() == 3);

    Pipeline second(cmie_cfg(), provider, &catalog(), &cache);
    const auto r = second.run_cmie(item, bundle);
    CHECK(second.model_calls() == 0); // everything hits
    CHECK(cache.hits() == 3);
    CHECK(r.stage_transcripts.size() == 3);
    REQUIRE(r.verdict.has_value());
}

TEST_CASE("result json round-trips and never carries timestamps") {
    auto provider = std::make_shared<ScriptedProvider>();
    Pipeline pipeline(cmie_cfg(), provider, &catalog());
    const auto item = evidence_item();
    const auto r = pipeline.run_cmie(item, bundle_for(item, 3));

    const std::string text = result_to_json(r);
    CHECK(text.find("timestamp") == std::string::npos);
    CHECK(text.find("time\"") == std::string::npos);

    const auto back = result_from_json(text);
    CHECK(back.item_id == r.item_id);
    CHECK(back.mode == r.mode);
    CHECK(back.variant == r.variant);
    CHECK(back.abstained == r.abstained);
    REQUIRE(back.verdict.has_value());
    CHECK(back.verdict->raw_label == r.verdict->raw_label);
    CHECK(back.verdict->semantic_label == r.verdict->semantic_label);
    REQUIRE(back.relation.has_value());
    CHECK(back.relation->score == doctest::Approx(r.relation->score));
    REQUIRE(back.evidence_scores.has_value());
    CHECK(back.evidence_scores->entries.size() == r.evidence_scores->entries.size());
    CHECK(back.stage_transcripts.size() == r.stage_transcripts.size());
    CHECK(result_to_json(back) == text); // serialization is a fixed point
}

TEST_CASE("run_batch persists results, a manifest, and supports resume") {
    TempDir out;
    const auto corpus =
        load_dataset(cmie::testing::fixture_root() / "corpus_100.jsonl");
    EvidenceStore store(cmie::testing::fixture_root() / "evidence");
    auto provider = std::make_shared<ScriptedProvider>();
    Pipeline pipeline(cmie_cfg(), provider, &catalog());

    std::vector<NewsItem> slice(corpus.begin(), corpus.begin() + 10);
    BatchOptions opts;
    opts.out_dir = out.path() / "results";
    opts.workers = 4;
    opts.corpus_digest = "c";
    opts.config_digest = "k";
    opts.prompts_digest = "p";

    const auto summary = run_batch(slice, store, pipeline, opts);
    CHECK(summary.results.size() == 10);
    CHECK(summary.abstentions == 0);
    CHECK(summary.skipped_resume == 0);

    const json manifest =
        json::parse(cmie::testing::slurp(out.path() / "results" / "manifest.json"));
    CHECK(manifest["items"] == 10);
    CHECK(manifest["corpus_digest"] == "c");
    CHECK(manifest["config_digest"] == "k");
    CHECK(manifest["prompts_digest"] == "p");
    CHECK(manifest["mode"] == "cmie");
    CHECK_FALSE(manifest.contains("timestamp"));

    const auto loaded = load_results(out.path() / "results");
    REQUIRE(loaded.size() == 10);
    for (std::size_t i = 0; i + 1 < loaded.size(); ++i) {
        CHECK(loaded[i].item_id < loaded[i + 1].item_id);
    }

    SUBCASE("resume skips existing result files") {
        std::filesystem::remove(out.path() / "results" / "item_0003.json");
        auto provider2 = std::make_shared<ScriptedProvider>();
        Pipeline fresh(cmie_cfg(), provider2, &catalog());
        BatchOptions again = opts;
        again.resume = true;
        const auto s2 = run_batch(slice, store, fresh, again);
        CHECK(s2.skipped_resume == 9);
        CHECK(fresh.model_calls() == 3); // only item_0003 reruns, full three stages
        CHECK(s2.results[3].item_id == "item_0003");
    }
}

TEST_CASE("abstentions are counted and persisted by the batch runner") {
    TempDir out;
    auto provider = std::make_shared<ScriptedProvider>([](const ChatRequest& req) {
        if (FixtureModel::detect_stage(req.prompt_text) == Stage::Final) {
            return std::string("never json");
        }
        return FixtureModel::respond(req);
    });
    const auto corpus = load_dataset(cmie::testing::fixture_root() / "corpus_100.jsonl");
    EvidenceStore store(cmie::testing::fixture_root() / "evidence");
    Pipeline pipeline(cmie_cfg(), provider, &catalog());

    std::vector<NewsItem> slice(corpus.begin(), corpus.begin() + 4);
    BatchOptions opts;
    opts.out_dir = out.path() / "r";
    const auto summary = run_batch(slice, store, pipeline, opts);
    // items 0..3 all carry evidence, so every final ask fails
    CHECK(summary.abstentions == 4);
    const auto loaded = load_results(out.path() / "r");
    for (const auto& r : loaded) {
        CHECK(r.abstained);
        CHECK(r.abstain_reason.rfind("parse:", 0) == 0);
    }
}
