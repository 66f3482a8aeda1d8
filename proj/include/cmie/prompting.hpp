#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "cmie/types.hpp"

namespace cmie {

/// One catalog template. Original bodies are the catalog files verbatim.
struct PromptTemplate {
    Stage stage = Stage::Direct;
    Variant variant = Variant::Original;
    std::string body;
};

struct RenderedPrompt {
    Stage stage = Stage::Direct;
    std::string text;
    bool image_attached = true; // every stage receives the image
    std::map<std::string, std::size_t> placeholders_resolved; // name -> substituted length
};

/// Body split on the three section marker lines. Used for variant diff
/// locality checks; the trailer holds everything after the output block's
/// last formatting sentence (the response cue line).
struct PromptBlocks {
    std::string guidance;
    std::string input;
    std::string output_format;
};

PromptBlocks split_blocks(const std::string& body);

/// Names of the placeholders present in a body, e.g. {"caption","titles"}.
std::set<std::string> placeholders_in(const std::string& body);

/// Placeholder set a stage's body must carry, per the template contract.
const std::set<std::string>& required_placeholders(Stage stage);

std::string format_score_1dp(double v);
std::string render_titles(const std::vector<std::string>& titles);
std::string render_scored_evidence(const std::vector<ScoreEntry>& entries);
std::string render_entities(const std::vector<std::string>& entities);

/// Everything render may substitute. item is mandatory; the rest are
/// optional because ablation toggles drop whole input lines.
struct RenderInputs {
    const NewsItem* item = nullptr;
    const std::vector<std::string>* titles = nullptr;   // capped upstream
    const ParsedCoexistence* relation = nullptr;        // R_co (+ S_co for Final)
    const std::vector<ScoreEntry>* scores = nullptr;
    const std::vector<std::string>* entities = nullptr;
};

class PromptCatalog {
public:
    /// Loads and validates every (stage, variant) file under dir.
    explicit PromptCatalog(const std::filesystem::path& dir);

    const PromptTemplate& get(Stage stage, Variant variant = Variant::Original) const;

    /// Returns the stored variant body after checking the diff against the
    /// Original is confined to the block the variant is allowed to touch.
    PromptTemplate apply_variant(const PromptTemplate& tmpl, Variant variant) const;

    RenderedPrompt render(Stage stage, Variant variant, const RenderInputs& in,
                          std::size_t evidence_cap) const;

    /// Digest over sorted (name, bytes) pairs; pins the catalog in manifests.
    const std::string& digest() const { return digest_; }
    const std::filesystem::path& dir() const { return dir_; }

private:
    std::filesystem::path dir_;
    std::map<std::pair<Stage, Variant>, PromptTemplate> templates_;
    std::string digest_;

    void validate_template(const PromptTemplate& t) const;
    void validate_variant_locality(const PromptTemplate& original,
                                   const PromptTemplate& variant) const;
};

} // namespace cmie
