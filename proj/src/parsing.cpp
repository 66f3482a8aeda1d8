#include "cmie/parsing.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <set>
#include <vector>

#include <json.hpp>

#include "cmie/errors.hpp"

namespace cmie {

namespace {

using nlohmann::json;

bool accepts(const std::string& text) { return json::accept(text); }

std::string strip(const std::string& s) {
    size_t b = 0, e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return s.substr(b, e - b);
}

bool is_fence_line(const std::string& line) {
    const std::string t = strip(line);
    return t.rfind("```", 0) == 0;
}

// Step 2: drop a leading and/or trailing fence line, keep everything between.
std::string strip_fences(const std::string& raw) {
    std::vector<std::string> lines;
    std::string cur;
    for (char c : raw) {
        if (c == '\n') {
            lines.push_back(cur);
            cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    lines.push_back(cur);

    size_t b = 0, e = lines.size();
    while (b < e && strip(lines[b]).empty()) ++b;
    while (e > b && strip(lines[e - 1]).empty()) --e;
    if (b < e && is_fence_line(lines[b])) ++b;
    if (e > b && is_fence_line(lines[e - 1])) --e;

    std::string out;
    for (size_t i = b; i < e; ++i) {
        if (i > b) out.push_back('\n');
        out += lines[i];
    }
    return out;
}

// Step 3: the longest balanced {...} or [...] span that parses. Bracket
// depth is tracked outside JSON strings only.
std::string longest_balanced_json(const std::string& raw) {
    std::string best;
    for (size_t start = 0; start < raw.size(); ++start) {
        const char open = raw[start];
        if (open != '{' && open != '[') continue;
        int depth = 0;
        bool in_string = false;
        bool escaped = false;
        for (size_t i = start; i < raw.size(); ++i) {
            const char c = raw[i];
            if (in_string) {
                if (escaped) {
                    escaped = false;
                } else if (c == '\\') {
                    escaped = true;
                } else if (c == '"') {
                    in_string = false;
                }
                continue;
            }
            if (c == '"') {
                in_string = true;
            } else if (c == '{' || c == '[') {
                ++depth;
            } else if (c == '}' || c == ']') {
                --depth;
                if (depth == 0) {
                    const size_t len = i - start + 1;
                    if (len > best.size()) {
                        std::string candidate = raw.substr(start, len);
                        if (accepts(candidate)) {
                            best = std::move(candidate);
                        }
                    }
                    break;
                }
                if (depth < 0) break;
            }
        }
    }
    return best;
}

json parse_object(const std::string& raw, bool& repaired) {
    ExtractedJson extracted = extract_json(raw);
    repaired = extracted.repaired;
    return json::parse(extracted.text);
}

std::string lower(std::string s) {
    std::transform(s.begin(), s.end(), s.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return s;
}

double score_from_field(const json& v, const char* key) {
    double score = 0.0;
    if (v.is_number()) {
        score = v.get<double>();
    } else if (v.is_string()) {
        const std::string s = strip(v.get<std::string>());
        const char* first = s.data();
        const char* last = s.data() + s.size();
        auto [ptr, ec] = std::from_chars(first, last, score);
        if (ec != std::errc() || ptr != last) {
            throw ParseFailure(std::string("field '") + key + "' is not numeric: " + s);
        }
    } else {
        throw ParseFailure(std::string("field '") + key + "' is neither number nor string");
    }
    if (!(score >= 0.0 && score <= 10.0)) {
        throw ParseFailure(std::string("field '") + key + "' out of range [0,10]: " +
                           std::to_string(score));
    }
    return score;
}

int index_from_field(const json& v) {
    if (v.is_number_integer()) {
        return v.get<int>();
    }
    if (v.is_number()) {
        const double d = v.get<double>();
        const int i = static_cast<int>(d);
        if (static_cast<double>(i) != d) {
            throw ParseFailure("field 'index' is not an integer");
        }
        return i;
    }
    if (v.is_string()) {
        const std::string s = strip(v.get<std::string>());
        int i = 0;
        auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), i);
        if (ec != std::errc() || ptr != s.data() + s.size()) {
            throw ParseFailure("field 'index' is not an integer: " + s);
        }
        return i;
    }
    throw ParseFailure("field 'index' is neither integer nor string");
}

ScoreEntry entry_from_object(const json& obj, std::size_t n_titles) {
    if (!obj.is_object()) {
        throw ParseFailure("score entry is not an object");
    }
    if (!obj.contains("index")) {
        throw ParseFailure("score entry missing 'index'");
    }
    if (!obj.contains("score")) {
        throw ParseFailure("score entry missing 'score'");
    }
    ScoreEntry e;
    e.index = index_from_field(obj["index"]);
    if (e.index < 1 || static_cast<std::size_t>(e.index) > n_titles) {
        throw ParseFailure("score entry index " + std::to_string(e.index) +
                           " outside 1.." + std::to_string(n_titles));
    }
    e.score = score_from_field(obj["score"], "score");
    if (obj.contains("explanation") && obj["explanation"].is_string()) {
        e.explanation = obj["explanation"].get<std::string>();
    }
    if (obj.contains("original title") && obj["original title"].is_string()) {
        e.original_title = obj["original title"].get<std::string>();
    } else if (obj.contains("original_title") && obj["original_title"].is_string()) {
        e.original_title = obj["original_title"].get<std::string>();
    }
    return e;
}

} // namespace

ExtractedJson extract_json(const std::string& raw) {
    if (strip(raw).empty()) {
        throw ParseFailure("empty model output");
    }
    if (accepts(raw)) {
        return {raw, false};
    }
    std::string defenced = strip_fences(raw);
    if (!defenced.empty() && accepts(defenced)) {
        return {defenced, true};
    }
    std::string balanced = longest_balanced_json(raw);
    if (!balanced.empty()) {
        return {balanced, true};
    }
    throw ParseFailure("no parseable JSON found in model output");
}

ParsedVerdict parse_verdict(const std::string& raw, Variant variant) {
    bool repaired = false;
    json obj = parse_object(raw, repaired);
    if (!obj.is_object()) {
        throw ParseFailure("verdict output is not a JSON object");
    }
    if (!obj.contains("label") || !obj["label"].is_string()) {
        throw ParseFailure("verdict output missing 'label'");
    }
    if (!obj.contains("explanation") || !obj["explanation"].is_string()) {
        throw ParseFailure("verdict output missing 'explanation'");
    }
    ParsedVerdict v;
    v.raw_label = obj["label"].get<std::string>();
    v.explanation = obj["explanation"].get<std::string>();
    v.repaired = repaired;
    if (v.explanation.empty()) {
        throw ParseFailure("verdict explanation is empty");
    }
    const std::string token = lower(strip(v.raw_label));
    bool yes = false;
    if (token == "yes") {
        yes = true;
    } else if (token == "no") {
        yes = false;
    } else {
        throw ParseFailure("verdict label outside {Yes, No}: '" + v.raw_label + "'");
    }
    // Yes flags misinformation, except under the reversed output format.
    const bool fake = (variant == Variant::LabelReversal) ? !yes : yes;
    v.semantic_label = fake ? Label::Fake : Label::Real;
    return v;
}

ParsedCoexistence parse_coexistence(const std::string& raw) {
    bool repaired = false;
    json obj = parse_object(raw, repaired);
    if (!obj.is_object()) {
        throw ParseFailure("coexistence output is not a JSON object");
    }
    if (!obj.contains("score")) {
        throw ParseFailure("coexistence output missing 'score'");
    }
    if (!obj.contains("explanation") || !obj["explanation"].is_string()) {
        throw ParseFailure("coexistence output missing 'explanation'");
    }
    ParsedCoexistence c;
    c.score = score_from_field(obj["score"], "score");
    c.explanation = obj["explanation"].get<std::string>();
    c.repaired = repaired;
    return c;
}

ParsedScores parse_scores(const std::string& raw, std::size_t n_titles) {
    if (n_titles == 0) {
        throw ParseFailure("parse_scores requires at least one submitted title");
    }
    bool repaired = false;
    json val = parse_object(raw, repaired);

    ParsedScores scores;
    scores.repaired = repaired;
    if (val.is_object()) {
        scores.entries.push_back(entry_from_object(val, n_titles));
    } else if (val.is_array()) {
        for (const auto& e : val) {
            scores.entries.push_back(entry_from_object(e, n_titles));
        }
    } else {
        throw ParseFailure("scores output is neither object nor array");
    }
    if (scores.entries.empty()) {
        throw ParseFailure("scores output holds no entries");
    }
    std::set<int> seen;
    for (const auto& e : scores.entries) {
        if (!seen.insert(e.index).second) {
            throw ParseFailure("duplicate score entry for index " + std::to_string(e.index));
        }
    }
    return scores;
}

} // namespace cmie
