#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "cmie/errors.hpp"

namespace cmie {

/// Semantic verdict label. Fake is the positive class for headline metrics.
enum class Label { Real, Fake };

enum class Split { Train, Val, Test };

/// Pipeline stage a prompt template belongs to.
enum class Stage { Direct, Augmented, Coexistence, Scoring, Final };

/// Prompt variant. Only the final-prediction prompt has published variants.
enum class Variant { Original, TaskRewrite, LabelReversal };

std::string to_string(Label v);
std::string to_string(Split v);
std::string to_string(Stage v);
std::string to_string(Variant v);

Label label_from_string(const std::string& s);
Split split_from_string(const std::string& s);
Stage stage_from_string(const std::string& s);
Variant variant_from_string(const std::string& s);

/// One image-caption record with gold label and split metadata.
struct NewsItem {
    std::string id;
    std::string image_ref; // path (resolved at load) or URI to the image bytes
    std::string caption;
    Label gold_label = Label::Real;
    Split split = Split::Test;

    bool operator==(const NewsItem&) const = default;
};

/// Retrieved page titles and image entities for one item. May be empty.
struct EvidenceBundle {
    enum class Provenance { Cache, Live, Absent };

    std::string item_id;
    std::vector<std::string> titles;
    std::vector<std::string> entities;
    Provenance provenance = Provenance::Absent;

    bool operator==(const EvidenceBundle&) const = default;
};

std::string to_string(EvidenceBundle::Provenance p);

/// Parsed final verdict: raw token as emitted plus the semantic label it maps
/// to under the active variant.
struct ParsedVerdict {
    std::string raw_label; // "Yes" / "No" as emitted
    Label semantic_label = Label::Real;
    std::string explanation;
    bool repaired = false;
};

/// Parsed coexistence relation: score in [0,10] plus the relation text.
struct ParsedCoexistence {
    double score = 0.0;
    std::string explanation;
    bool repaired = false;
};

/// Per-title relevance scores. Indices are 1-based positions into the title
/// list the prompt was rendered with; missing indices mean unscored titles.
struct ScoreEntry {
    int index = 0;
    double score = 0.0;
    std::string explanation;
    std::string original_title;
};

struct ParsedScores {
    std::vector<ScoreEntry> entries;
    bool repaired = false;
};

} // namespace cmie
