#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cmie/pipeline.hpp"
#include "cmie/types.hpp"

namespace cmie {

/// One evaluated prediction; nullopt marks an abstention.
struct ItemPrediction {
    std::string item_id;
    std::optional<Label> predicted;
};

/// Confusion cells with Fake as the positive class. Abstentions sit outside
/// the four cells by design.
struct ConfusionCounts {
    std::uint64_t tp = 0; // predicted fake, gold fake
    std::uint64_t fp = 0; // predicted fake, gold real
    std::uint64_t fn = 0; // predicted real, gold fake
    std::uint64_t tn = 0; // predicted real, gold real
    std::uint64_t abstentions = 0;

    std::uint64_t total() const { return tp + fp + fn + tn + abstentions; }
};

struct ClassMetrics {
    Label cls = Label::Fake;
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    std::uint64_t support = 0;
};

struct MetricsSummary {
    ClassMetrics real;
    ClassMetrics fake;
    double accuracy = 0.0;
    double abstention_rate = 0.0;
    ConfusionCounts counts;
};

std::map<std::string, Label> gold_map(std::span<const NewsItem> corpus);

std::vector<ItemPrediction> predictions_from_results(std::span<const PipelineResult> results);

/// Per-class one-vs-rest precision/recall/F1 plus accuracy over non-abstained
/// items. Duplicate prediction ids and ids missing from gold are errors.
/// Zero denominators yield zero, never NaN.
MetricsSummary compute_metrics(std::span<const ItemPrediction> predictions,
                               const std::map<std::string, Label>& gold);

/// Metrics computed straight from a confusion table; compute_metrics reduces
/// to this after tallying, and tests use it to pin published rows.
MetricsSummary metrics_from_counts(const ConfusionCounts& counts);

struct AblationRow {
    Toggles toggles;
    Mode mode = Mode::Direct;
    MetricsSummary metrics;
    std::uint64_t model_calls = 0;
    std::uint64_t cache_hits = 0;
};

/// The published ablation matrix rows in table order.
std::vector<Toggles> default_ablation_rows();

/// One batch per toggle row. With share_cache, rows reuse upstream stage
/// responses where prompt bytes match (the cache telemetry shows up per row).
std::vector<AblationRow> run_ablation(std::span<const NewsItem> corpus,
                                      const EvidenceStore& store,
                                      const PipelineConfig& base,
                                      std::shared_ptr<Provider> provider,
                                      const PromptCatalog& catalog,
                                      std::span<const Toggles> rows,
                                      bool share_cache = true);

struct PropagationReport {
    std::uint64_t affected_fake = 0;      // gold Fake scored at or above threshold
    std::uint64_t affected_real = 0;      // gold Real scored below threshold
    std::uint64_t with_relation = 0;      // results that entered the analysis
    std::optional<double> fake_share;     // absent when nothing is affected
    std::optional<MetricsSummary> affected_metrics; // over the affected union
};

/// Stage-1 error split per the stability analysis: misinformation items whose
/// coexistence score says "strong" and real items whose score says "weak".
/// Results without a relation never entered stage 1 and are skipped; an input
/// with no relations at all is an error.
PropagationReport error_propagation_analysis(std::span<const PipelineResult> results,
                                             const std::map<std::string, Label>& gold,
                                             double threshold);

/// CMIE batches under each final-prompt variant; map is ordered by variant.
std::map<Variant, MetricsSummary> prompt_sensitivity_run(std::span<const NewsItem> corpus,
                                                         const EvidenceStore& store,
                                                         const PipelineConfig& base,
                                                         std::shared_ptr<Provider> provider,
                                                         const PromptCatalog& catalog);

/// Aggregate of one externally collected 1-5 explanation quality file.
struct ExplanationScoreStats {
    std::string method;
    std::uint64_t count = 0;
    double mean = 0.0;
    double stddev = 0.0; // sample stddev; zero for a single rating
};

/// CSV with a method,score header; scores must lie in [1,5].
std::vector<ExplanationScoreStats> load_explanation_scores(const std::filesystem::path& path);

enum class ReportFormat { TableText, Delimited, Structured };

ReportFormat report_format_from_string(const std::string& s);

struct MethodRow {
    std::string name;
    MetricsSummary metrics;
};

/// Everything the reporting verbs may have produced; sections render only
/// when populated.
struct AnalysisBundle {
    std::vector<MethodRow> methods;
    std::vector<AblationRow> ablation;
    std::optional<PropagationReport> propagation;
    std::map<Variant, MetricsSummary> sensitivity;
    std::vector<ExplanationScoreStats> explanation_scores;
};

/// Deterministic serialization: metrics at two decimals in the textual
/// formats, full precision in the structured one.
std::string format_report(const AnalysisBundle& bundle, ReportFormat format);
void emit_report(const AnalysisBundle& bundle, const std::filesystem::path& path,
                 ReportFormat format);

/// Inverse of the structured format, used by the round-trip checks.
AnalysisBundle bundle_from_structured(const std::string& text);

} // namespace cmie
