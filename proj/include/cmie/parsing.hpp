#pragma once

#include <cstddef>
#include <string>

#include "cmie/types.hpp"

namespace cmie {

struct ExtractedJson {
    std::string text;
    bool repaired = false; // true when the verbatim parse needed repair
};

/// Pulls the first well-formed top-level JSON value out of raw model text.
/// Repair ladder, in order:
///   1. verbatim parse
///   2. strip leading/trailing code-fence lines
///   3. longest brace-balanced substring that parses
/// Throws ParseFailure when nothing parseable remains.
ExtractedJson extract_json(const std::string& raw);

/// Parses the final-judgment object {"label": "Yes"|"No", "explanation": ...}
/// and maps the raw token to a semantic label under the active variant:
/// Original/TaskRewrite: Yes=Fake, No=Real; LabelReversal: Yes=Real, No=Fake.
/// Token matching is case-insensitive on the exact tokens only.
ParsedVerdict parse_verdict(const std::string& raw, Variant variant);

/// Parses {"score": s, "explanation": ...} with s in [0,10]. Numeric strings
/// are accepted and converted. Out-of-range is an error, never a clamp.
ParsedCoexistence parse_coexistence(const std::string& raw);

/// Parses association scores: a JSON array of entry objects, or a single
/// object (degenerate one-element list). Indices are 1-based against the
/// submitted title list; missing indices are simply unscored. Duplicate or
/// out-of-range indices and empty entry lists are errors.
ParsedScores parse_scores(const std::string& raw, std::size_t n_titles);

} // namespace cmie
