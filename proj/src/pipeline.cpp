#include "cmie/pipeline.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <functional>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "cmie/digest.hpp"
#include "cmie/errors.hpp"
#include "cmie/parsing.hpp"

namespace cmie {

namespace {

using nlohmann::json;

std::string lower(std::string s) {
    std::transform(s.begin(), s.end(), s.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return s;
}

// Runs fn and converts per-item failures into an abstention reason. Auth,
// quota, replay-miss and config problems propagate: they poison the whole
// batch, not one item.
template <typename Fn>
std::optional<std::string> guard_stage(Fn&& fn) {
    try {
        fn();
        return std::nullopt;
    } catch (const AuthError&) {
        throw;
    } catch (const QuotaError&) {
        throw;
    } catch (const ParseFailure& e) {
        return std::string("parse: ") + e.what();
    } catch (const RefusalError& e) {
        return std::string("refusal: ") + e.what();
    } catch (const TransportError& e) {
        return std::string("transport: ") + e.what();
    }
}

void write_atomic(const std::filesystem::path& path, const std::string& content) {
    const std::filesystem::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) {
            throw DataError("cannot write " + tmp.string());
        }
        out << content;
        out.flush();
        if (!out) {
            throw DataError("short write to " + tmp.string());
        }
    }
    std::filesystem::rename(tmp, path);
}

std::string read_file_text(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw DataError("cannot read " + path.string());
    }
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

std::string sniff_media_type(const std::string& bytes, const std::filesystem::path& ref) {
    if (bytes.rfind("\x89PNG", 0) == 0) return "image/png";
    if (bytes.size() >= 2 && static_cast<unsigned char>(bytes[0]) == 0xFF &&
        static_cast<unsigned char>(bytes[1]) == 0xD8) {
        return "image/jpeg";
    }
    if (bytes.rfind("GIF8", 0) == 0) return "image/gif";
    if (bytes.size() >= 12 && bytes.compare(0, 4, "RIFF") == 0 &&
        bytes.compare(8, 4, "WEBP") == 0) {
        return "image/webp";
    }
    const std::string ext = lower(ref.extension().string());
    if (ext == ".jpg" || ext == ".jpeg") return "image/jpeg";
    if (ext == ".gif") return "image/gif";
    if (ext == ".webp") return "image/webp";
    return "image/png";
}

json verdict_to_json(const ParsedVerdict& v) {
    json j;
    j["raw_label"] = v.raw_label;
    j["semantic_label"] = to_string(v.semantic_label);
    j["explanation"] = v.explanation;
    j["repaired"] = v.repaired;
    return j;
}

ParsedVerdict verdict_from_json(const json& j) {
    ParsedVerdict v;
    v.raw_label = j.at("raw_label").get<std::string>();
    v.semantic_label = label_from_string(j.at("semantic_label").get<std::string>());
    v.explanation = j.at("explanation").get<std::string>();
    v.repaired = j.at("repaired").get<bool>();
    return v;
}

} // namespace

std::string to_string(Mode m) {
    switch (m) {
    case Mode::Direct: return "direct";
    case Mode::Augmented: return "augmented";
    default: return "cmie";
    }
}

Mode mode_from_string(const std::string& s) {
    const std::string v = lower(s);
    if (v == "direct" || v == "dr") return Mode::Direct;
    if (v == "augmented" || v == "ar") return Mode::Augmented;
    if (v == "cmie") return Mode::Cmie;
    throw ConfigError("unknown mode '" + s + "' (expected direct, augmented or cmie)");
}

std::string to_string(const Toggles& t) {
    std::string s;
    for (bool b : {t.image_title, t.crg, t.as, t.entity}) s.push_back(b ? 'T' : 'F');
    return s;
}

Toggles toggles_from_string(const std::string& s) {
    Toggles t;
    const std::string v = lower(s);
    if (v.size() == 4 && v.find_first_not_of("tf01") == std::string::npos) {
        t.image_title = v[0] == 't' || v[0] == '1';
        t.crg = v[1] == 't' || v[1] == '1';
        t.as = v[2] == 't' || v[2] == '1';
        t.entity = v[3] == 't' || v[3] == '1';
        return t;
    }
    if (v == "none") return t;
    std::stringstream ss(v);
    std::string tok;
    bool any = false;
    while (std::getline(ss, tok, ',')) {
        std::string name;
        for (char c : tok) {
            if (!std::isspace(static_cast<unsigned char>(c)) && c != '_' && c != '-') {
                name.push_back(c);
            }
        }
        if (name.empty()) continue;
        any = true;
        if (name == "imagetitle") t.image_title = true;
        else if (name == "crg") t.crg = true;
        else if (name == "as") t.as = true;
        else if (name == "entity") t.entity = true;
        else throw ConfigError("unknown toggle '" + tok + "'");
    }
    if (!any) {
        throw ConfigError("empty toggle list '" + s + "' (use TTTF form or names)");
    }
    return t;
}

Mode mode_from_toggles(const Toggles& t) {
    if (!t.image_title && !t.crg && !t.as && !t.entity) return Mode::Direct;
    if (t.image_title && !t.crg && !t.as && !t.entity) return Mode::Augmented;
    return Mode::Cmie;
}

void PipelineConfig::validate_and_normalize() {
    if (strong_threshold < 0.0 || strong_threshold > 10.0) {
        throw ConfigError("strong_threshold must lie in [0,10]");
    }
    if (evidence_cap == 0) {
        throw ConfigError("evidence_cap must be positive");
    }
    if (workers < 1) {
        throw ConfigError("workers must be positive");
    }
    if (temperature < 0.0 || temperature > 2.0) {
        throw ConfigError("temperature must lie in [0,2]");
    }
    if (model_name.empty()) {
        throw ConfigError("model_name must be non-empty");
    }
    switch (mode) {
    case Mode::Direct:
        toggles = Toggles{};
        break;
    case Mode::Augmented:
        toggles = Toggles{true, false, false, false};
        break;
    case Mode::Cmie:
        toggles.image_title = true;
        if (toggles.as && !toggles.crg) {
            throw ConfigError("toggle 'as' requires 'crg': scoring consumes the relation");
        }
        break;
    }
    if (variant != Variant::Original && mode != Mode::Cmie) {
        throw ConfigError("prompt variants are defined for the final stage only; " +
                          to_string(mode) + " mode supports the original variant");
    }
}

PipelineConfig config_for_toggles(const PipelineConfig& base, const Toggles& row) {
    PipelineConfig cfg = base;
    cfg.toggles = row;
    cfg.mode = mode_from_toggles(row);
    cfg.validate_and_normalize();
    return cfg;
}

std::string result_to_json(const PipelineResult& r) {
    json j;
    j["item_id"] = r.item_id;
    j["mode"] = to_string(r.mode);
    j["variant"] = to_string(r.variant);
    j["abstained"] = r.abstained;
    if (!r.abstain_reason.empty()) j["abstain_reason"] = r.abstain_reason;
    j["fallback_used"] = r.fallback_used;
    j["degraded"] = r.degraded;
    if (r.verdict) j["verdict"] = verdict_to_json(*r.verdict);
    if (r.relation) {
        j["relation"] = {{"score", r.relation->score},
                         {"explanation", r.relation->explanation},
                         {"repaired", r.relation->repaired}};
    }
    if (r.evidence_scores) {
        json entries = json::array();
        for (const auto& e : r.evidence_scores->entries) {
            entries.push_back({{"index", e.index},
                               {"score", e.score},
                               {"explanation", e.explanation},
                               {"original_title", e.original_title}});
        }
        j["evidence_scores"] = {{"entries", entries},
                                {"repaired", r.evidence_scores->repaired}};
    }
    json refs = json::array();
    std::map<std::string, std::int64_t> timings;
    for (const auto& ref : r.stage_transcripts) {
        refs.push_back({{"stage", to_string(ref.stage)},
                        {"request_hash", ref.request_hash},
                        {"latency_ms", ref.latency_ms}});
        timings[to_string(ref.stage)] += ref.latency_ms;
    }
    j["stage_transcripts"] = refs;
    j["timings_ms"] = timings;
    return j.dump(2) + "\n";
}

PipelineResult result_from_json(const std::string& text) {
    json j = json::parse(text);
    PipelineResult r;
    r.item_id = j.at("item_id").get<std::string>();
    r.mode = mode_from_string(j.at("mode").get<std::string>());
    r.variant = variant_from_string(j.at("variant").get<std::string>());
    r.abstained = j.at("abstained").get<bool>();
    if (j.contains("abstain_reason")) r.abstain_reason = j["abstain_reason"].get<std::string>();
    r.fallback_used = j.at("fallback_used").get<bool>();
    r.degraded = j.at("degraded").get<bool>();
    if (j.contains("verdict")) r.verdict = verdict_from_json(j["verdict"]);
    if (j.contains("relation")) {
        ParsedCoexistence c;
        c.score = j["relation"].at("score").get<double>();
        c.explanation = j["relation"].at("explanation").get<std::string>();
        c.repaired = j["relation"].at("repaired").get<bool>();
        r.relation = c;
    }
    if (j.contains("evidence_scores")) {
        ParsedScores s;
        s.repaired = j["evidence_scores"].at("repaired").get<bool>();
        for (const auto& e : j["evidence_scores"].at("entries")) {
            ScoreEntry entry;
            entry.index = e.at("index").get<int>();
            entry.score = e.at("score").get<double>();
            entry.explanation = e.at("explanation").get<std::string>();
            entry.original_title = e.at("original_title").get<std::string>();
            s.entries.push_back(std::move(entry));
        }
        r.evidence_scores = std::move(s);
    }
    for (const auto& ref : j.at("stage_transcripts")) {
        r.stage_transcripts.push_back({stage_from_string(ref.at("stage").get<std::string>()),
                                       ref.at("request_hash").get<std::string>(),
                                       ref.at("latency_ms").get<std::int64_t>()});
    }
    return r;
}

std::optional<StageCache::Entry> StageCache::get(const std::string& key) {
    std::lock_guard<std::mutex> lock(mutex_);
    auto it = entries_.find(key);
    if (it == entries_.end()) {
        misses_.fetch_add(1);
        return std::nullopt;
    }
    hits_.fetch_add(1);
    return it->second;
}

void StageCache::put(const std::string& key, Entry entry) {
    std::lock_guard<std::mutex> lock(mutex_);
    entries_[key] = std::move(entry);
}

std::optional<ImagePayload> load_image(const NewsItem& item) {
    std::error_code ec;
    if (!std::filesystem::is_regular_file(item.image_ref, ec)) {
        return std::nullopt;
    }
    std::ifstream in(item.image_ref, std::ios::binary);
    if (!in) return std::nullopt;
    std::ostringstream buf;
    buf << in.rdbuf();
    ImagePayload img;
    img.bytes = buf.str();
    img.media_type = sniff_media_type(img.bytes, item.image_ref);
    return img;
}

Pipeline::Pipeline(PipelineConfig cfg, std::shared_ptr<Provider> provider,
                   const PromptCatalog* catalog, StageCache* cache)
    : cfg_(std::move(cfg)), provider_(std::move(provider)), catalog_(catalog), cache_(cache) {
    if (!provider_) throw ConfigError("pipeline requires a provider");
    if (catalog_ == nullptr) throw ConfigError("pipeline requires a prompt catalog");
    cfg_.validate_and_normalize();
}

ChatRequest Pipeline::make_request(const std::string& prompt_text,
                                   const std::optional<ImagePayload>& image) const {
    ChatRequest r;
    r.prompt_text = prompt_text;
    r.image = image;
    r.temperature = cfg_.temperature;
    r.model_name = cfg_.model_name;
    return r;
}

std::string Pipeline::call_provider(const ChatRequest& request, Stage stage,
                                    PipelineResult& result) {
    ProviderResponse resp = provider_->complete(request);
    model_calls_.fetch_add(1);
    result.stage_transcripts.push_back({stage, request_hash(request), resp.latency_ms});
    return resp.text;
}

std::string Pipeline::ask_checked(const NewsItem& item, Stage stage,
                                  const std::string& prompt_text,
                                  const std::optional<ImagePayload>& image,
                                  PipelineResult& result,
                                  const std::function<void(const std::string&)>& check) {
    const std::string key = item.id + '\0' + to_string(stage) + '\0' + sha256_hex(prompt_text);
    if (cache_) {
        if (auto hit = cache_->get(key)) {
            bool usable = true;
            try {
                check(hit->response_text);
            } catch (const ParseFailure&) {
                usable = false; // stale or junk memo; ask for real
            }
            if (usable) {
                const ChatRequest req = make_request(prompt_text, image);
                result.stage_transcripts.push_back({stage, request_hash(req), hit->latency_ms});
                return hit->response_text;
            }
        }
    }
    const ChatRequest req = make_request(prompt_text, image);
    std::string text = call_provider(req, stage, result);
    try {
        check(text);
    } catch (const ParseFailure&) {
        text = call_provider(req, stage, result);
        check(text); // second failure propagates to the stage guard
    }
    if (cache_) {
        cache_->put(key, {text, result.stage_transcripts.back().latency_ms});
    }
    return text;
}

PipelineResult Pipeline::run_direct(const NewsItem& item) {
    PipelineResult r;
    r.item_id = item.id;
    r.mode = cfg_.mode;
    // The direct prompt has no published variants, so its labels always
    // carry original semantics, fallback or not.
    r.variant = Variant::Original;
    const auto image = load_image(item);
    RenderInputs in;
    in.item = &item;
    const RenderedPrompt prompt =
        catalog_->render(Stage::Direct, Variant::Original, in, cfg_.evidence_cap);
    auto failure = guard_stage([&] {
        const std::string text = ask_checked(
            item, Stage::Direct, prompt.text, image, r,
            [](const std::string& t) { (void)parse_verdict(t, Variant::Original); });
        r.verdict = parse_verdict(text, Variant::Original);
    });
    if (failure) {
        r.abstained = true;
        r.abstain_reason = *failure;
    }
    return r;
}

PipelineResult Pipeline::run_augmented(const NewsItem& item, const EvidenceBundle& evidence) {
    PipelineResult r;
    r.item_id = item.id;
    r.mode = cfg_.mode;
    r.variant = Variant::Original;
    std::vector<std::string> titles = evidence.titles;
    if (titles.size() > cfg_.evidence_cap) titles.resize(cfg_.evidence_cap);
    if (titles.empty()) {
        throw PromptError("run_augmented requires titles; route empty evidence to run_direct");
    }
    const auto image = load_image(item);
    RenderInputs in;
    in.item = &item;
    in.titles = &titles;
    const RenderedPrompt prompt =
        catalog_->render(Stage::Augmented, Variant::Original, in, cfg_.evidence_cap);
    auto failure = guard_stage([&] {
        const std::string text = ask_checked(
            item, Stage::Augmented, prompt.text, image, r,
            [](const std::string& t) { (void)parse_verdict(t, Variant::Original); });
        r.verdict = parse_verdict(text, Variant::Original);
    });
    if (failure) {
        r.abstained = true;
        r.abstain_reason = *failure;
    }
    return r;
}

PipelineResult Pipeline::run_cmie(const NewsItem& item, const EvidenceBundle& evidence) {
    PipelineResult r;
    r.item_id = item.id;
    r.mode = Mode::Cmie;
    r.variant = cfg_.variant;
    std::vector<std::string> titles = evidence.titles;
    if (titles.size() > cfg_.evidence_cap) titles.resize(cfg_.evidence_cap);
    if (titles.empty()) {
        throw PromptError("run_cmie requires titles; route empty evidence to run_direct");
    }
    const auto image = load_image(item);

    // (a) coexistence relationship
    if (cfg_.toggles.crg) {
        RenderInputs in;
        in.item = &item;
        const RenderedPrompt prompt =
            catalog_->render(Stage::Coexistence, Variant::Original, in, cfg_.evidence_cap);
        guard_stage([&] {
            const std::string text = ask_checked(
                item, Stage::Coexistence, prompt.text, image, r,
                [](const std::string& t) { (void)parse_coexistence(t); });
            r.relation = parse_coexistence(text);
        });
    }

    // (b) association scoring, batched first, then the per-title form
    if (cfg_.toggles.as && r.relation) {
        RenderInputs in;
        in.item = &item;
        in.titles = &titles;
        in.relation = &*r.relation;
        const RenderedPrompt prompt =
            catalog_->render(Stage::Scoring, Variant::Original, in, cfg_.evidence_cap);
        const std::size_t n = titles.size();
        auto batched = guard_stage([&] {
            const std::string text = ask_checked(
                item, Stage::Scoring, prompt.text, image, r,
                [n](const std::string& t) { (void)parse_scores(t, n); });
            r.evidence_scores = parse_scores(text, n);
        });
        if (batched) {
            ParsedScores collected;
            for (std::size_t i = 0; i < titles.size(); ++i) {
                std::vector<std::string> single{titles[i]};
                RenderInputs one;
                one.item = &item;
                one.titles = &single;
                one.relation = &*r.relation;
                const RenderedPrompt p1 = catalog_->render(Stage::Scoring, Variant::Original,
                                                           one, cfg_.evidence_cap);
                guard_stage([&] {
                    const std::string text = ask_checked(
                        item, Stage::Scoring, p1.text, image, r,
                        [](const std::string& t) { (void)parse_scores(t, 1); });
                    ParsedScores parsed = parse_scores(text, 1);
                    ScoreEntry e = parsed.entries.front();
                    e.index = static_cast<int>(i + 1); // remap to the full list
                    if (e.original_title.empty()) e.original_title = titles[i];
                    collected.entries.push_back(std::move(e));
                    collected.repaired = collected.repaired || parsed.repaired;
                });
            }
            if (!collected.entries.empty()) {
                r.evidence_scores = std::move(collected);
            }
        }
    }

    // (c) final prediction
    RenderInputs in;
    in.item = &item;
    in.titles = &titles;
    if (r.relation) in.relation = &*r.relation;
    if (r.evidence_scores && !r.evidence_scores->entries.empty()) {
        in.scores = &r.evidence_scores->entries;
    }
    std::vector<std::string> entities;
    if (cfg_.toggles.entity && !evidence.entities.empty()) {
        entities = evidence.entities;
        in.entities = &entities;
    }
    const RenderedPrompt prompt =
        catalog_->render(Stage::Final, cfg_.variant, in, cfg_.evidence_cap);
    auto failure = guard_stage([&] {
        const Variant v = cfg_.variant;
        const std::string text = ask_checked(
            item, Stage::Final, prompt.text, image, r,
            [v](const std::string& t) { (void)parse_verdict(t, v); });
        r.verdict = parse_verdict(text, cfg_.variant);
    });
    if (failure) {
        r.abstained = true;
        r.abstain_reason = *failure;
    }
    r.degraded = (cfg_.toggles.crg && !r.relation) ||
                 (cfg_.toggles.as && r.relation.has_value() && !r.evidence_scores);
    return r;
}

PipelineResult Pipeline::run_item(const NewsItem& item, const EvidenceStore& store,
                                  const std::filesystem::path& persist_dir) {
    PipelineResult r;
    if (cfg_.mode == Mode::Direct) {
        r = run_direct(item);
    } else {
        const EvidenceBundle evidence = store.load(item.id);
        if (evidence.titles.empty()) {
            r = run_direct(item);
            r.fallback_used = true;
        } else if (cfg_.mode == Mode::Augmented) {
            r = run_augmented(item, evidence);
        } else {
            r = run_cmie(item, evidence);
        }
    }
    if (!persist_dir.empty()) {
        write_atomic(persist_dir / (item.id + ".json"), result_to_json(r));
    }
    return r;
}

BatchSummary run_batch(std::span<const NewsItem> corpus, const EvidenceStore& store,
                       Pipeline& pipeline, const BatchOptions& opts) {
    const bool persist = !opts.out_dir.empty();
    if (persist) {
        std::filesystem::create_directories(opts.out_dir);
    }
    BatchSummary summary;
    summary.results.resize(corpus.size());

    std::atomic<std::size_t> next{0};
    std::atomic<std::size_t> skipped{0};
    std::atomic<bool> failed{false};
    std::mutex error_mutex;
    std::exception_ptr first_error;

    auto worker = [&] {
        while (!failed.load()) {
            const std::size_t i = next.fetch_add(1);
            if (i >= corpus.size()) break;
            const NewsItem& item = corpus[i];
            try {
                const std::filesystem::path result_file =
                    persist ? opts.out_dir / (item.id + ".json") : std::filesystem::path{};
                if (opts.resume && persist && std::filesystem::exists(result_file)) {
                    summary.results[i] = result_from_json(read_file_text(result_file));
                    skipped.fetch_add(1);
                    continue;
                }
                summary.results[i] = pipeline.run_item(item, store, opts.out_dir);
            } catch (...) {
                std::lock_guard<std::mutex> lock(error_mutex);
                if (!first_error) first_error = std::current_exception();
                failed.store(true);
                break;
            }
        }
    };

    const int n_workers = std::max(1, std::min<int>(opts.workers,
                                                    static_cast<int>(std::max<std::size_t>(corpus.size(), 1))));
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(n_workers));
    for (int w = 0; w < n_workers; ++w) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
    if (first_error) std::rethrow_exception(first_error);

    summary.skipped_resume = skipped.load();
    for (const auto& r : summary.results) {
        if (r.abstained) ++summary.abstentions;
    }

    if (persist && opts.write_manifest) {
        json manifest;
        manifest["config_digest"] = opts.config_digest;
        manifest["corpus_digest"] = opts.corpus_digest;
        manifest["prompts_digest"] = opts.prompts_digest;
        manifest["items"] = corpus.size();
        manifest["abstentions"] = summary.abstentions;
        manifest["mode"] = to_string(pipeline.config().mode);
        manifest["variant"] = to_string(pipeline.config().variant);
        manifest["toggles"] = to_string(pipeline.config().toggles);
        write_atomic(opts.out_dir / "manifest.json", manifest.dump(2) + "\n");
    }
    return summary;
}

std::vector<PipelineResult> load_results(const std::filesystem::path& dir) {
    if (!std::filesystem::is_directory(dir)) {
        throw DataError("results directory not found: " + dir.string());
    }
    std::vector<PipelineResult> results;
    for (const auto& entry : std::filesystem::directory_iterator(dir)) {
        if (!entry.is_regular_file()) continue;
        const auto& p = entry.path();
        if (p.extension() != ".json" || p.filename() == "manifest.json") continue;
        results.push_back(result_from_json(read_file_text(p)));
    }
    std::sort(results.begin(), results.end(),
              [](const PipelineResult& a, const PipelineResult& b) {
                  return a.item_id < b.item_id;
              });
    return results;
}

} // namespace cmie
