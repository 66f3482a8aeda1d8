#include "cmie/config.hpp"

#include <algorithm>
#include <cctype>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include <json.hpp>

#include "cmie/digest.hpp"
#include "cmie/errors.hpp"

namespace cmie {

namespace {

using nlohmann::json;

std::string lower(std::string s) {
    std::transform(s.begin(), s.end(), s.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return s;
}

double parse_double(const std::string& key, const std::string& value) {
    try {
        std::size_t used = 0;
        const double v = std::stod(value, &used);
        if (used != value.size()) throw std::invalid_argument(value);
        return v;
    } catch (const std::exception&) {
        throw ConfigError("key " + key + ": '" + value + "' is not a number");
    }
}

long parse_int(const std::string& key, const std::string& value) {
    try {
        std::size_t used = 0;
        const long v = std::stol(value, &used);
        if (used != value.size()) throw std::invalid_argument(value);
        return v;
    } catch (const std::exception&) {
        throw ConfigError("key " + key + ": '" + value + "' is not an integer");
    }
}

struct KeyEntry {
    const char* key;
    const char* doc;
    std::function<void(RunConfig&, const std::string&, const std::string&)> set;
};

const std::vector<KeyEntry>& key_table() {
    static const std::vector<KeyEntry> table = {
        {"provider.kind", "live, record or replay",
         [](RunConfig& c, const std::string&, const std::string& v) {
             c.provider.kind = provider_kind_from_string(v);
         }},
        {"provider.flavor", "live API dialect: openai or gemini",
         [](RunConfig& c, const std::string& k, const std::string& v) {
             const std::string f = lower(v);
             if (f == "openai") c.provider.live.flavor = LiveProviderConfig::Flavor::OpenAi;
             else if (f == "gemini") c.provider.live.flavor = LiveProviderConfig::Flavor::Gemini;
             else throw ConfigError("key " + k + ": unknown flavor '" + v + "'");
         }},
        {"provider.base_url", "live API base URL",
         [](RunConfig& c, const std::string&, const std::string& v) {
             c.provider.live.base_url = v;
         }},
        {"provider.model", "model name; also pins the request digest",
         [](RunConfig& c, const std::string&, const std::string& v) {
             c.provider.live.model = v;
             c.pipeline.model_name = v;
         }},
        {"provider.api_key_env", "environment variable holding the API key",
         [](RunConfig& c, const std::string&, const std::string& v) {
             c.provider.live.api_key_env = v;
         }},
        {"provider.timeout_s", "HTTP timeout in seconds",
         [](RunConfig& c, const std::string& k, const std::string& v) {
             c.provider.live.timeout_s = static_cast<int>(parse_int(k, v));
         }},
        {"provider.max_attempts", "transport retry attempts",
         [](RunConfig& c, const std::string& k, const std::string& v) {
             c.provider.live.retry.max_attempts = static_cast<int>(parse_int(k, v));
         }},
        {"provider.transcripts", "transcript file: replay source or record sink",
         [](RunConfig& c, const std::string&, const std::string& v) {
             c.provider.transcripts = v;
         }},
        {"pipeline.mode", "direct, augmented or cmie",
         [](RunConfig& c, const std::string&, const std::string& v) {
             c.pipeline.mode = mode_from_string(v);
         }},
        {"pipeline.variant", "original, task_rewrite or label_reversal",
         [](RunConfig& c, const std::string&, const std::string& v) {
             c.pipeline.variant = variant_from_string(v);
         }},
        {"pipeline.toggles", "TTTF positional form or comma list of names",
         [](RunConfig& c, const std::string&, const std::string& v) {
             c.pipeline.toggles = toggles_from_string(v);
             c.pipeline.mode = mode_from_toggles(c.pipeline.toggles);
         }},
        {"pipeline.strong_threshold", "strong-coexistence cut in [0,10]",
         [](RunConfig& c, const std::string& k, const std::string& v) {
             c.pipeline.strong_threshold = parse_double(k, v);
         }},
        {"pipeline.evidence_cap", "max titles passed downstream",
         [](RunConfig& c, const std::string& k, const std::string& v) {
             const long n = parse_int(k, v);
             if (n <= 0) throw ConfigError("key " + k + " must be positive");
             c.pipeline.evidence_cap = static_cast<std::size_t>(n);
         }},
        {"pipeline.workers", "worker pool size",
         [](RunConfig& c, const std::string& k, const std::string& v) {
             c.pipeline.workers = static_cast<int>(parse_int(k, v));
         }},
        {"pipeline.temperature", "sampling temperature in [0,2]",
         [](RunConfig& c, const std::string& k, const std::string& v) {
             c.pipeline.temperature = parse_double(k, v);
         }},
        {"prompts_dir", "prompt catalog directory",
         [](RunConfig& c, const std::string&, const std::string& v) { c.prompts_dir = v; }},
        {"entity_api.endpoint", "web entity detection endpoint",
         [](RunConfig& c, const std::string&, const std::string& v) {
             c.entity_api.endpoint = v;
         }},
        {"entity_api.api_key_env", "environment variable holding the vision key",
         [](RunConfig& c, const std::string&, const std::string& v) {
             c.entity_api.api_key_env = v;
         }},
        {"entity_api.max_results", "entity count requested per image",
         [](RunConfig& c, const std::string& k, const std::string& v) {
             c.entity_api.max_results = static_cast<int>(parse_int(k, v));
         }},
        {"abstention_ceiling", "abstention rate above which a run exits 2",
         [](RunConfig& c, const std::string& k, const std::string& v) {
             const double d = parse_double(k, v);
             if (d < 0.0 || d > 1.0) throw ConfigError("key " + k + " must lie in [0,1]");
             c.abstention_ceiling = d;
         }},
    };
    return table;
}

std::string scalar_to_string(const json& v) {
    if (v.is_string()) return v.get<std::string>();
    return v.dump();
}

void flatten_into(RunConfig& cfg, const json& obj, const std::string& prefix) {
    for (const auto& [key, value] : obj.items()) {
        const std::string dotted = prefix.empty() ? key : prefix + "." + key;
        if (value.is_object()) {
            flatten_into(cfg, value, dotted);
        } else {
            apply_override(cfg, dotted, scalar_to_string(value));
        }
    }
}

} // namespace

std::string to_string(ProviderSpec::Kind k) {
    switch (k) {
    case ProviderSpec::Kind::Live: return "live";
    case ProviderSpec::Kind::Record: return "record";
    default: return "replay";
    }
}

ProviderSpec::Kind provider_kind_from_string(const std::string& s) {
    const std::string v = lower(s);
    if (v == "live") return ProviderSpec::Kind::Live;
    if (v == "record") return ProviderSpec::Kind::Record;
    if (v == "replay") return ProviderSpec::Kind::Replay;
    throw ConfigError("unknown provider kind '" + s + "' (expected live, record or replay)");
}

RunConfig load_config_file(const std::optional<std::filesystem::path>& path) {
    RunConfig cfg;
    cfg.provider.live.base_url = "https://api.openai.com";
    if (!path) return cfg;
    std::ifstream in(*path);
    if (!in) {
        throw ConfigError("cannot read config file " + path->string());
    }
    json obj;
    try {
        in >> obj;
    } catch (const json::exception& e) {
        throw ConfigError("config file " + path->string() + ": " + e.what());
    }
    if (!obj.is_object()) {
        throw ConfigError("config file " + path->string() + " must hold a JSON object");
    }
    try {
        flatten_into(cfg, obj, "");
    } catch (const ConfigError& e) {
        throw ConfigError("config file " + path->string() + ": " + e.what());
    }
    return cfg;
}

void apply_override(RunConfig& cfg, const std::string& key, const std::string& value) {
    for (const auto& entry : key_table()) {
        if (key == entry.key) {
            entry.set(cfg, key, value);
            return;
        }
    }
    throw ConfigError("unknown config key '" + key + "' (see documented keys)");
}

void apply_env(RunConfig& cfg) {
    static const std::vector<std::pair<const char*, const char*>> env_map = {
        {"CMIE_PROVIDER", "provider.kind"},
        {"CMIE_FLAVOR", "provider.flavor"},
        {"CMIE_BASE_URL", "provider.base_url"},
        {"CMIE_MODEL", "provider.model"},
        {"CMIE_API_KEY_ENV", "provider.api_key_env"},
        {"CMIE_TIMEOUT_S", "provider.timeout_s"},
        {"CMIE_TRANSCRIPTS", "provider.transcripts"},
        {"CMIE_MODE", "pipeline.mode"},
        {"CMIE_VARIANT", "pipeline.variant"},
        {"CMIE_TOGGLES", "pipeline.toggles"},
        {"CMIE_STRONG_THRESHOLD", "pipeline.strong_threshold"},
        {"CMIE_EVIDENCE_CAP", "pipeline.evidence_cap"},
        {"CMIE_WORKERS", "pipeline.workers"},
        {"CMIE_TEMPERATURE", "pipeline.temperature"},
        {"CMIE_PROMPTS_DIR", "prompts_dir"},
        {"CMIE_ENTITY_ENDPOINT", "entity_api.endpoint"},
        {"CMIE_ABSTENTION_CEILING", "abstention_ceiling"},
    };
    for (const auto& [env_name, key] : env_map) {
        const char* value = std::getenv(env_name);
        if (value != nullptr && *value != '\0') {
            apply_override(cfg, key, value);
        }
    }
}

std::vector<std::string> documented_keys() {
    std::vector<std::string> out;
    for (const auto& entry : key_table()) {
        out.push_back(std::string(entry.key) + "  " + entry.doc);
    }
    return out;
}

std::string config_to_json(const RunConfig& cfg) {
    json j;
    j["provider"] = {
        {"kind", to_string(cfg.provider.kind)},
        {"flavor", cfg.provider.live.flavor == LiveProviderConfig::Flavor::OpenAi ? "openai"
                                                                                  : "gemini"},
        {"base_url", cfg.provider.live.base_url},
        {"model", cfg.provider.live.model},
        {"api_key_env", cfg.provider.live.api_key_env},
        {"timeout_s", cfg.provider.live.timeout_s},
        {"max_attempts", cfg.provider.live.retry.max_attempts},
        {"transcripts", cfg.provider.transcripts.string()},
    };
    j["pipeline"] = {
        {"mode", to_string(cfg.pipeline.mode)},
        {"variant", to_string(cfg.pipeline.variant)},
        {"toggles", to_string(cfg.pipeline.toggles)},
        {"strong_threshold", cfg.pipeline.strong_threshold},
        {"evidence_cap", cfg.pipeline.evidence_cap},
        {"workers", cfg.pipeline.workers},
        {"temperature", cfg.pipeline.temperature},
        {"model_name", cfg.pipeline.model_name},
    };
    j["prompts_dir"] = cfg.prompts_dir.string();
    j["entity_api"] = {
        {"endpoint", cfg.entity_api.endpoint},
        {"api_key_env", cfg.entity_api.api_key_env},
        {"max_results", cfg.entity_api.max_results},
    };
    j["abstention_ceiling"] = cfg.abstention_ceiling;
    return j.dump(2) + "\n";
}

std::string config_digest(const RunConfig& cfg) { return sha256_hex(config_to_json(cfg)); }

std::shared_ptr<Provider> make_provider(const ProviderSpec& spec) {
    switch (spec.kind) {
    case ProviderSpec::Kind::Replay:
        if (spec.transcripts.empty()) {
            throw ConfigError("replay provider requires provider.transcripts");
        }
        return std::make_shared<ReplayProvider>(spec.transcripts);
    case ProviderSpec::Kind::Live:
    case ProviderSpec::Kind::Record: {
        if (spec.live.base_url.empty()) {
            throw ConfigError("live provider requires provider.base_url");
        }
        if (spec.live.model.empty()) {
            throw ConfigError("live provider requires provider.model");
        }
        auto transport = std::make_shared<HttplibTransport>(spec.live.timeout_s);
        std::shared_ptr<Provider> live;
        if (spec.live.flavor == LiveProviderConfig::Flavor::OpenAi) {
            live = std::make_shared<OpenAiProvider>(spec.live, transport);
        } else {
            live = std::make_shared<GeminiProvider>(spec.live, transport);
        }
        if (spec.kind == ProviderSpec::Kind::Live) return live;
        if (spec.transcripts.empty()) {
            throw ConfigError("record provider requires provider.transcripts as a sink");
        }
        auto sink = std::make_shared<TranscriptWriter>(spec.transcripts);
        return std::make_shared<RecordingProvider>(live, sink);
    }
    }
    throw ConfigError("unhandled provider kind");
}

} // namespace cmie
