#include "cmie/types.hpp"

#include <algorithm>
#include <cctype>

namespace cmie {

namespace {

std::string lower(std::string s) {
    std::transform(s.begin(), s.end(), s.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return s;
}

} // namespace

std::string to_string(Label v) { return v == Label::Real ? "real" : "fake"; }

std::string to_string(Split v) {
    switch (v) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    default: return "test";
    }
}

std::string to_string(Stage v) {
    switch (v) {
    case Stage::Direct: return "direct";
    case Stage::Augmented: return "augmented";
    case Stage::Coexistence: return "coexistence";
    case Stage::Scoring: return "scoring";
    default: return "final";
    }
}

std::string to_string(Variant v) {
    switch (v) {
    case Variant::Original: return "original";
    case Variant::TaskRewrite: return "task_rewrite";
    default: return "label_reversal";
    }
}

std::string to_string(EvidenceBundle::Provenance p) {
    switch (p) {
    case EvidenceBundle::Provenance::Cache: return "cache";
    case EvidenceBundle::Provenance::Live: return "live";
    default: return "absent";
    }
}

Label label_from_string(const std::string& s) {
    const std::string v = lower(s);
    if (v == "real") return Label::Real;
    if (v == "fake") return Label::Fake;
    throw DataError("unknown label '" + s + "' (expected real or fake)");
}

Split split_from_string(const std::string& s) {
    const std::string v = lower(s);
    if (v == "train") return Split::Train;
    if (v == "val" || v == "valid" || v == "validation") return Split::Val;
    if (v == "test") return Split::Test;
    throw DataError("unknown split '" + s + "'");
}

Stage stage_from_string(const std::string& s) {
    const std::string v = lower(s);
    if (v == "direct") return Stage::Direct;
    if (v == "augmented") return Stage::Augmented;
    if (v == "coexistence") return Stage::Coexistence;
    if (v == "scoring") return Stage::Scoring;
    if (v == "final") return Stage::Final;
    throw ConfigError("unknown stage '" + s + "'");
}

Variant variant_from_string(const std::string& s) {
    const std::string v = lower(s);
    if (v == "original") return Variant::Original;
    if (v == "task_rewrite" || v == "task-rewrite") return Variant::TaskRewrite;
    if (v == "label_reversal" || v == "label-reversal") return Variant::LabelReversal;
    throw ConfigError("unknown variant '" + s + "'");
}

} // namespace cmie
