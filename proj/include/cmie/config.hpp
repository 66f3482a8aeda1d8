#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "cmie/corpus.hpp"
#include "cmie/gateway.hpp"
#include "cmie/pipeline.hpp"

namespace cmie {

struct ProviderSpec {
    enum class Kind { Live, Record, Replay };
    Kind kind = Kind::Replay;
    LiveProviderConfig live;
    std::filesystem::path transcripts; // replay source or record sink
};

std::string to_string(ProviderSpec::Kind k);
ProviderSpec::Kind provider_kind_from_string(const std::string& s);

/// Resolved run settings. Precedence: config file, then CMIE_* environment,
/// then explicit overrides, each layer applied through the same key table.
struct RunConfig {
    ProviderSpec provider;
    PipelineConfig pipeline;
    std::filesystem::path prompts_dir = "prompts";
    EntityApiConfig entity_api;
    double abstention_ceiling = 1.0; // batch exit 2 above this rate
};

/// Reads the JSON config file; a nullopt path yields pure defaults.
RunConfig load_config_file(const std::optional<std::filesystem::path>& path);

/// Applies one dotted-key override, e.g. "pipeline.evidence_cap=40".
/// Unknown keys are errors.
void apply_override(RunConfig& cfg, const std::string& key, const std::string& value);

/// Applies every recognized CMIE_* environment variable.
void apply_env(RunConfig& cfg);

/// The documented override keys, one "key  description" line each.
std::vector<std::string> documented_keys();

/// Canonical JSON of the resolved config (sorted keys, no secrets).
std::string config_to_json(const RunConfig& cfg);
std::string config_digest(const RunConfig& cfg);

/// Builds the provider the spec names. Record wraps a live provider with a
/// transcript sink; replay never touches the network.
std::shared_ptr<Provider> make_provider(const ProviderSpec& spec);

} // namespace cmie
