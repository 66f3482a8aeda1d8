#include "cmie/prompting.hpp"

#include <algorithm>
#include <array>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "cmie/digest.hpp"
#include "cmie/errors.hpp"

namespace cmie {

namespace {

constexpr std::array<const char*, 5> kPlaceholderNames = {
    "caption", "titles", "relation", "scored_evidence", "entities"};

const std::string kGuidanceMarker = "[Guidance]";
const std::string kInputMarker = "[Input]";
const std::string kOutputMarker = "[Output Format]";

std::vector<std::string> split_lines(const std::string& body) {
    std::vector<std::string> lines;
    std::string cur;
    for (char c : body) {
        if (c == '\n') {
            lines.push_back(cur);
            cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    if (!cur.empty()) lines.push_back(cur);
    return lines;
}

std::string read_file(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) {
        throw PromptError("cannot open prompt catalog file " + p.string());
    }
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

// Matches a known placeholder marker starting at body[pos] (which is '{').
// Returns the name or empty when it is not one of ours.
std::string match_placeholder(const std::string& text, size_t pos) {
    for (const char* name : kPlaceholderNames) {
        const size_t n = std::string::traits_type::length(name);
        if (pos + n + 2 <= text.size() && text[pos] == '{' &&
            text.compare(pos + 1, n, name) == 0 && text[pos + n + 1] == '}') {
            return name;
        }
    }
    return {};
}

std::filesystem::path catalog_file(const std::filesystem::path& dir, Stage s, Variant v) {
    return dir / (to_string(s) + "." + to_string(v) + ".txt");
}

} // namespace

PromptBlocks split_blocks(const std::string& body) {
    const auto lines = split_lines(body);
    int section = 0; // 0 = before guidance, 1..3 = the marked blocks
    PromptBlocks b;
    for (const auto& line : lines) {
        if (line == kGuidanceMarker) {
            section = 1;
            continue;
        }
        if (line == kInputMarker) {
            section = 2;
            continue;
        }
        if (line == kOutputMarker) {
            section = 3;
            continue;
        }
        std::string* target = nullptr;
        if (section == 1) target = &b.guidance;
        else if (section == 2) target = &b.input;
        else if (section == 3) target = &b.output_format;
        if (target) {
            *target += line;
            target->push_back('\n');
        }
    }
    return b;
}

std::set<std::string> placeholders_in(const std::string& body) {
    std::set<std::string> found;
    for (size_t i = 0; i < body.size(); ++i) {
        if (body[i] != '{') continue;
        std::string name = match_placeholder(body, i);
        if (!name.empty()) {
            found.insert(name);
            i += name.size() + 1;
        }
    }
    return found;
}

const std::set<std::string>& required_placeholders(Stage stage) {
    static const std::set<std::string> direct = {"caption"};
    static const std::set<std::string> augmented = {"caption", "titles"};
    static const std::set<std::string> scoring = {"caption", "titles", "relation"};
    static const std::set<std::string> final_set = {"caption", "titles", "relation",
                                                    "scored_evidence", "entities"};
    switch (stage) {
    case Stage::Direct: return direct;
    case Stage::Augmented: return augmented;
    case Stage::Coexistence: return direct;
    case Stage::Scoring: return scoring;
    default: return final_set;
    }
}

std::string format_score_1dp(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.1f", v);
    return buf;
}

std::string render_titles(const std::vector<std::string>& titles) {
    std::string out;
    for (size_t i = 0; i < titles.size(); ++i) {
        if (i > 0) out.push_back('\n');
        out += std::to_string(i + 1);
        out += ". ";
        out += titles[i];
    }
    return out;
}

std::string render_scored_evidence(const std::vector<ScoreEntry>& entries) {
    std::string out;
    for (size_t i = 0; i < entries.size(); ++i) {
        const auto& e = entries[i];
        if (i > 0) out.push_back('\n');
        out += "(index: " + std::to_string(e.index);
        out += ", score: " + format_score_1dp(e.score);
        out += ", explanation: " + e.explanation;
        out += ", original title: " + e.original_title + ")";
    }
    return out;
}

std::string render_entities(const std::vector<std::string>& entities) {
    std::string out;
    for (size_t i = 0; i < entities.size(); ++i) {
        if (i > 0) out += ", ";
        out += entities[i];
    }
    return out;
}

PromptCatalog::PromptCatalog(const std::filesystem::path& dir) : dir_(dir) {
    if (!std::filesystem::is_directory(dir)) {
        throw PromptError("prompt catalog directory not found: " + dir.string());
    }
    const std::vector<std::pair<Stage, Variant>> expected = {
        {Stage::Direct, Variant::Original},
        {Stage::Augmented, Variant::Original},
        {Stage::Coexistence, Variant::Original},
        {Stage::Scoring, Variant::Original},
        {Stage::Final, Variant::Original},
        {Stage::Final, Variant::TaskRewrite},
        {Stage::Final, Variant::LabelReversal},
    };
    std::string digest_input;
    for (auto [stage, variant] : expected) {
        const auto path = catalog_file(dir, stage, variant);
        PromptTemplate t{stage, variant, read_file(path)};
        validate_template(t);
        digest_input += path.filename().string();
        digest_input.push_back('\n');
        digest_input += t.body;
        digest_input.push_back('\0');
        templates_.emplace(std::make_pair(stage, variant), std::move(t));
    }
    const auto& original = templates_.at({Stage::Final, Variant::Original});
    validate_variant_locality(original, templates_.at({Stage::Final, Variant::TaskRewrite}));
    validate_variant_locality(original, templates_.at({Stage::Final, Variant::LabelReversal}));
    digest_ = sha256_hex(digest_input);
}

void PromptCatalog::validate_template(const PromptTemplate& t) const {
    if (t.body.empty()) {
        throw PromptError("empty prompt body for stage " + to_string(t.stage));
    }
    for (const auto& marker : {kGuidanceMarker, kInputMarker, kOutputMarker}) {
        if (t.body.find(marker + "\n") == std::string::npos) {
            throw PromptError("prompt for stage " + to_string(t.stage) +
                              " lacks required section " + marker);
        }
    }
    const auto found = placeholders_in(t.body);
    const auto& required = required_placeholders(t.stage);
    if (found != required) {
        std::string msg = "prompt for stage " + to_string(t.stage) +
                          " has placeholder set {";
        for (const auto& n : found) msg += n + ",";
        msg += "} but the stage requires {";
        for (const auto& n : required) msg += n + ",";
        msg += "}";
        throw PromptError(msg);
    }
}

void PromptCatalog::validate_variant_locality(const PromptTemplate& original,
                                              const PromptTemplate& variant) const {
    const PromptBlocks base = split_blocks(original.body);
    const PromptBlocks var = split_blocks(variant.body);
    const std::string name = to_string(variant.variant);
    if (variant.variant == Variant::TaskRewrite) {
        if (var.input != base.input || var.output_format != base.output_format) {
            throw PromptError("variant " + name +
                              " must only alter the guidance paragraph");
        }
        if (var.guidance == base.guidance) {
            throw PromptError("variant " + name + " does not rewrite the guidance");
        }
    } else if (variant.variant == Variant::LabelReversal) {
        if (var.guidance != base.guidance || var.input != base.input) {
            throw PromptError("variant " + name +
                              " must only alter the output format block");
        }
        if (var.output_format == base.output_format) {
            throw PromptError("variant " + name + " does not reverse the labels");
        }
    }
}

const PromptTemplate& PromptCatalog::get(Stage stage, Variant variant) const {
    auto it = templates_.find({stage, variant});
    if (it == templates_.end()) {
        throw PromptError("no " + to_string(variant) + " prompt defined for stage " +
                          to_string(stage));
    }
    return it->second;
}

PromptTemplate PromptCatalog::apply_variant(const PromptTemplate& tmpl,
                                            Variant variant) const {
    if (variant == Variant::Original) {
        throw PromptError("apply_variant requires a non-Original variant");
    }
    if (tmpl.stage != Stage::Final) {
        throw PromptError("stage " + to_string(tmpl.stage) +
                          " has no published prompt variants");
    }
    const PromptTemplate& out = get(tmpl.stage, variant);
    validate_variant_locality(tmpl, out);
    return out;
}

RenderedPrompt PromptCatalog::render(Stage stage, Variant variant,
                                     const RenderInputs& in,
                                     std::size_t evidence_cap) const {
    if (in.item == nullptr) {
        throw PromptError("render requires a news item");
    }
    const bool has_titles = in.titles != nullptr && !in.titles->empty();
    if (has_titles && in.titles->size() > evidence_cap) {
        throw PromptError("title list of " + std::to_string(in.titles->size()) +
                          " exceeds the evidence cap " + std::to_string(evidence_cap) +
                          "; truncate before rendering");
    }
    if ((stage == Stage::Augmented || stage == Stage::Scoring || stage == Stage::Final) &&
        !has_titles) {
        throw PromptError("stage " + to_string(stage) + " requires a non-empty title list");
    }
    if (stage == Stage::Scoring && in.relation == nullptr) {
        throw PromptError("scoring stage requires the coexistence relation");
    }

    std::map<std::string, std::string> values;
    values["caption"] = in.item->caption;
    if (has_titles) {
        values["titles"] = render_titles(*in.titles);
    }
    if (in.relation != nullptr) {
        // The final prompt carries the "given confidence score" next to the
        // relation text; the scoring prompt receives the relation alone.
        if (stage == Stage::Final) {
            values["relation"] = in.relation->explanation + " (coexistence score: " +
                                 format_score_1dp(in.relation->score) + ")";
        } else {
            values["relation"] = in.relation->explanation;
        }
    }
    if (in.scores != nullptr && !in.scores->empty()) {
        values["scored_evidence"] = render_scored_evidence(*in.scores);
    }
    if (in.entities != nullptr && !in.entities->empty()) {
        values["entities"] = render_entities(*in.entities);
    }

    const PromptTemplate& tmpl = get(stage, variant);
    RenderedPrompt out;
    out.stage = stage;

    // Substitute line by line so an input line whose placeholder has no
    // value vanishes entirely (ablation semantics). Substituted values are
    // never rescanned, so captions containing marker-like text stay inert.
    std::string text;
    size_t line_start = 0;
    while (line_start <= tmpl.body.size()) {
        size_t line_end = tmpl.body.find('\n', line_start);
        const bool has_newline = line_end != std::string::npos;
        if (!has_newline) line_end = tmpl.body.size();
        const std::string line = tmpl.body.substr(line_start, line_end - line_start);

        bool drop = false;
        std::string rendered;
        std::map<std::string, std::size_t> resolved_here;
        for (size_t i = 0; i < line.size();) {
            std::string name = line[i] == '{' ? match_placeholder(line, i) : std::string();
            if (name.empty()) {
                rendered.push_back(line[i]);
                ++i;
                continue;
            }
            auto vit = values.find(name);
            if (vit == values.end()) {
                drop = true;
                break;
            }
            rendered += vit->second;
            resolved_here[name] = vit->second.size();
            i += name.size() + 2;
        }
        if (!drop) {
            text += rendered;
            if (has_newline) text.push_back('\n');
            for (auto& [k, v] : resolved_here) out.placeholders_resolved[k] = v;
        }
        if (!has_newline) break;
        line_start = line_end + 1;
    }
    out.text = std::move(text);
    return out;
}

} // namespace cmie
