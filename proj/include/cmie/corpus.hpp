#pragma once

#include <filesystem>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "cmie/http.hpp"
#include "cmie/types.hpp"

namespace cmie {

/// Loads a dataset file: UTF-8, either one JSON object per line or a single
/// top-level array. Required keys: id, image, caption, label (real/fake,
/// case-insensitive); optional split (defaults to test). Relative image paths
/// are resolved against the dataset file's directory. Records failing the
/// NewsItem invariants are reported with their line number and field.
std::vector<NewsItem> load_dataset(const std::filesystem::path& path,
                                   std::optional<Split> split_filter = std::nullopt);

/// Writes items as one JSON object per line with the canonical key set.
/// load_dataset(write_dataset(items)) round-trips field-for-field.
void write_dataset(std::span<const NewsItem> items, const std::filesystem::path& path);

/// Title cleanup: trim, collapse internal whitespace runs, drop strings empty
/// after trimming, deduplicate exact matches preserving first occurrence.
std::vector<std::string> normalize_titles(std::span<const std::string> raw);

/// Entity cleanup: same trimming, no dedup (API order is relevance order).
std::vector<std::string> normalize_entities(std::span<const std::string> raw);

/// File-backed evidence store. Two readable layouts:
///   - directory of per-item files named <id>.json with keys titles, entities
///   - one consolidated JSON map file keyed by item id
/// The per-item directory is the write format. An empty path is a valid
/// always-absent store (direct-mode runs carry no evidence).
class EvidenceStore {
public:
    explicit EvidenceStore(std::filesystem::path path);

    /// Pure read. Missing key yields provenance=absent with empty lists;
    /// a present but schema-invalid record is an error.
    EvidenceBundle load(const std::string& item_id) const;

    /// Write-through of one bundle as <id>.json. Directory layout only.
    void put(const EvidenceBundle& bundle);

    const std::filesystem::path& path() const { return path_; }
    bool consolidated() const { return consolidated_; }

private:
    std::filesystem::path path_;
    bool consolidated_ = false;
    std::unordered_map<std::string, EvidenceBundle> consolidated_map_;
    std::mutex write_mutex_;
};

/// Convenience single-shot read.
EvidenceBundle load_evidence(const std::string& item_id, const std::filesystem::path& store_path);

struct EntityApiConfig {
    std::string endpoint; // vision-compatible web-entity-detection endpoint
    std::string api_key_env = "GOOGLE_VISION_API_KEY";
    int max_results = 10;
    RetryPolicy retry;
};

struct EntityFetchStats {
    int retries = 0;
};

/// Client for a vision-API-compatible web-entity-detection endpoint. Results
/// are written through to the evidence store when one is configured.
class EntityClient {
public:
    EntityClient(EntityApiConfig cfg, std::shared_ptr<HttpTransport> transport,
                 EvidenceStore* write_through = nullptr);

    /// Returns entity description strings in API-provided order. image_ref
    /// must be a readable file. Retries transient transport errors; auth
    /// failures are fatal; quota exhaustion surfaces as QuotaError.
    std::vector<std::string> fetch_entities(const std::string& image_ref,
                                            const std::string& item_id = {});

    /// fetch_entities plus bundle assembly: merges cached titles (if any)
    /// with the live entities, provenance=live.
    EvidenceBundle fetch_bundle(const std::string& item_id, const std::string& image_ref);

    const EntityFetchStats& last_stats() const { return stats_; }

private:
    EntityApiConfig cfg_;
    std::shared_ptr<HttpTransport> transport_;
    EvidenceStore* store_;
    EntityFetchStats stats_;
};

} // namespace cmie
