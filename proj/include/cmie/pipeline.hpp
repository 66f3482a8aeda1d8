#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "cmie/corpus.hpp"
#include "cmie/gateway.hpp"
#include "cmie/prompting.hpp"
#include "cmie/types.hpp"

namespace cmie {

enum class Mode { Direct, Augmented, Cmie };

std::string to_string(Mode m);
Mode mode_from_string(const std::string& s);

/// Ablation switches in table column order.
struct Toggles {
    bool image_title = false;
    bool crg = false;
    bool as = false;
    bool entity = false;

    bool operator==(const Toggles&) const = default;
};

/// Parses "TTTF"/"1110" positional form or a comma list of toggle names.
Toggles toggles_from_string(const std::string& s);
std::string to_string(const Toggles& t);

struct PipelineConfig {
    Mode mode = Mode::Cmie;
    Toggles toggles{true, true, true, true};
    Variant variant = Variant::Original;
    double strong_threshold = 6.0;
    std::size_t evidence_cap = 20;
    int workers = 1;
    std::string model_name = "gpt-4o";
    double temperature = 0.1;

    /// Enforces the mode/toggle coupling: Direct forces all off, Augmented
    /// forces (T,F,F,F), CMIE forces image_title on and rejects as without
    /// crg (scoring consumes the relation). Range checks included.
    void validate_and_normalize();
};

/// Mode implied by a toggle row: all off is Direct, titles alone is
/// Augmented, anything else is CMIE.
Mode mode_from_toggles(const Toggles& t);

/// base with its mode/toggles replaced by the row and re-normalized.
PipelineConfig config_for_toggles(const PipelineConfig& base, const Toggles& row);

struct StageTranscriptRef {
    Stage stage = Stage::Direct;
    std::string request_hash;
    std::int64_t latency_ms = 0;
};

struct PipelineResult {
    std::string item_id;
    Mode mode = Mode::Direct;
    Variant variant = Variant::Original;
    bool abstained = false;
    std::string abstain_reason; // non-empty iff abstained
    std::optional<ParsedVerdict> verdict;
    std::optional<ParsedCoexistence> relation;
    std::optional<ParsedScores> evidence_scores;
    std::vector<StageTranscriptRef> stage_transcripts;
    bool fallback_used = false;
    bool degraded = false;
};

std::string result_to_json(const PipelineResult& r);
PipelineResult result_from_json(const std::string& text);

/// Cross-run stage memo keyed by (item id, stage, prompt digest). Ablation
/// rows sharing upstream prompts reuse responses instead of re-asking.
class StageCache {
public:
    struct Entry {
        std::string response_text;
        std::int64_t latency_ms = 0;
    };

    std::optional<Entry> get(const std::string& key);
    void put(const std::string& key, Entry entry);
    std::uint64_t hits() const { return hits_.load(); }
    std::uint64_t misses() const { return misses_.load(); }

private:
    std::mutex mutex_;
    std::unordered_map<std::string, Entry> entries_;
    std::atomic<std::uint64_t> hits_{0};
    std::atomic<std::uint64_t> misses_{0};
};

class Pipeline {
public:
    /// catalog must outlive the pipeline; cache may be null (no reuse).
    Pipeline(PipelineConfig cfg, std::shared_ptr<Provider> provider,
             const PromptCatalog* catalog, StageCache* cache = nullptr);

    PipelineResult run_direct(const NewsItem& item);
    PipelineResult run_augmented(const NewsItem& item, const EvidenceBundle& evidence);
    PipelineResult run_cmie(const NewsItem& item, const EvidenceBundle& evidence);

    /// Loads evidence, routes by mode with the empty-evidence fallback, and
    /// persists the result as <id>.json when persist_dir is non-empty.
    PipelineResult run_item(const NewsItem& item, const EvidenceStore& store,
                            const std::filesystem::path& persist_dir = {});

    const PipelineConfig& config() const { return cfg_; }
    std::uint64_t model_calls() const { return model_calls_.load(); }

private:
    PipelineConfig cfg_;
    std::shared_ptr<Provider> provider_;
    const PromptCatalog* catalog_;
    StageCache* cache_;
    std::atomic<std::uint64_t> model_calls_{0};

    ChatRequest make_request(const std::string& prompt_text,
                             const std::optional<ImagePayload>& image) const;

    /// One provider call with bookkeeping; appends the transcript ref.
    std::string call_provider(const ChatRequest& request, Stage stage,
                              PipelineResult& result);

    /// Asks with a cache consult first and one re-ask of the identical
    /// request when check throws ParseFailure; the second failure stands.
    std::string ask_checked(const NewsItem& item, Stage stage,
                            const std::string& prompt_text,
                            const std::optional<ImagePayload>& image,
                            PipelineResult& result,
                            const std::function<void(const std::string&)>& check);
};

/// Reads the image bytes behind item.image_ref. Unreadable refs (remote
/// URIs, missing files) yield nullopt and the request goes out text-only.
std::optional<ImagePayload> load_image(const NewsItem& item);

struct BatchOptions {
    std::filesystem::path out_dir;
    bool resume = false;
    int workers = 1;
    std::string corpus_digest;
    std::string config_digest;
    std::string prompts_digest;
    bool write_manifest = true;
};

struct BatchSummary {
    std::vector<PipelineResult> results; // corpus order
    std::size_t skipped_resume = 0;
    std::size_t abstentions = 0;
};

/// Bounded worker pool over the corpus. Item failures become abstention
/// results; configuration and storage failures abort. Result files are
/// written atomically; with resume, existing files are loaded not rerun.
BatchSummary run_batch(std::span<const NewsItem> corpus, const EvidenceStore& store,
                       Pipeline& pipeline, const BatchOptions& opts);

/// Loads every <id>.json under dir (manifest excluded), sorted by item id.
std::vector<PipelineResult> load_results(const std::filesystem::path& dir);

} // namespace cmie
