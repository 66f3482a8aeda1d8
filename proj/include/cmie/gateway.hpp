#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "cmie/http.hpp"

namespace cmie {

struct ImagePayload {
    std::string bytes;
    std::string media_type; // e.g. image/png
};

/// One multimodal chat call. Every MLLM invocation in the pipeline goes
/// through this shape.
struct ChatRequest {
    std::string prompt_text;
    std::optional<ImagePayload> image;
    double temperature = 0.1;
    std::string model_name;
    int max_output = 1024;
};

/// Stable digest of (prompt_text, image content digest, temperature,
/// model_name). Equal requests hash equally across runs and platforms.
std::string request_hash(const ChatRequest& request);

struct ProviderResponse {
    std::string text;
    std::int64_t latency_ms = 0; // provider-reported; zero under replay
    int retries = 0;
};

struct GatewayTelemetry {
    std::atomic<std::uint64_t> requests{0};
    std::atomic<std::uint64_t> retries{0};
    std::atomic<std::uint64_t> failures{0};
};

class Provider {
public:
    virtual ~Provider() = default;
    virtual ProviderResponse complete(const ChatRequest& request) = 0;
    virtual std::string id() const = 0;
};

struct Transcript {
    std::string request_hash;
    std::string response_text; // stored verbatim so replay is byte-exact
    std::int64_t latency_ms = 0;
    std::string provider_id;
    std::string timestamp; // ISO-8601 UTC at record time
};

/// Append-only line-delimited transcript sink. Appends are serialized.
class TranscriptWriter {
public:
    explicit TranscriptWriter(std::filesystem::path sink);
    void append(const Transcript& t);
    std::size_t count() const;
    const std::filesystem::path& sink() const { return sink_; }

private:
    std::filesystem::path sink_;
    std::ofstream out_;
    mutable std::mutex mutex_;
    std::size_t count_ = 0;
};

std::vector<Transcript> load_transcripts(const std::filesystem::path& path);

struct LiveProviderConfig {
    enum class Flavor { OpenAi, Gemini };
    Flavor flavor = Flavor::OpenAi;
    std::string base_url; // e.g. https://api.openai.com
    std::string model;
    std::string api_key_env = "OPENAI_API_KEY";
    int timeout_s = 120;
    RetryPolicy retry;
};

/// OpenAI-compatible chat-completions client.
class OpenAiProvider : public Provider {
public:
    OpenAiProvider(LiveProviderConfig cfg, std::shared_ptr<HttpTransport> transport);
    ProviderResponse complete(const ChatRequest& request) override;
    std::string id() const override { return "openai:" + cfg_.model; }
    const GatewayTelemetry& telemetry() const { return telemetry_; }

private:
    LiveProviderConfig cfg_;
    std::shared_ptr<HttpTransport> transport_;
    GatewayTelemetry telemetry_;
};

/// Gemini-compatible generateContent client.
class GeminiProvider : public Provider {
public:
    GeminiProvider(LiveProviderConfig cfg, std::shared_ptr<HttpTransport> transport);
    ProviderResponse complete(const ChatRequest& request) override;
    std::string id() const override { return "gemini:" + cfg_.model; }
    const GatewayTelemetry& telemetry() const { return telemetry_; }

private:
    LiveProviderConfig cfg_;
    std::shared_ptr<HttpTransport> transport_;
    GatewayTelemetry telemetry_;
};

/// Deterministic offline provider: answers from a loaded transcript store.
/// Lookups are lock-free reads after construction. A request with no stored
/// transcript raises ReplayMissError.
class ReplayProvider : public Provider {
public:
    explicit ReplayProvider(const std::filesystem::path& transcripts);
    ProviderResponse complete(const ChatRequest& request) override;
    std::string id() const override { return "replay"; }
    std::size_t size() const { return responses_.size(); }

private:
    std::unordered_map<std::string, std::string> responses_;
};

/// Wraps another provider and appends a transcript per successful call.
/// Detects request-hash collisions within the session (same hash, different
/// request bytes) and aborts: that indicates a digest bug.
class RecordingProvider : public Provider {
public:
    RecordingProvider(std::shared_ptr<Provider> inner, std::shared_ptr<TranscriptWriter> sink);
    ProviderResponse complete(const ChatRequest& request) override;
    std::string id() const override;
    std::size_t recorded_count() const;

private:
    std::shared_ptr<Provider> inner_;
    std::shared_ptr<TranscriptWriter> sink_;
    std::mutex mutex_;
    std::unordered_map<std::string, std::string> seen_; // hash -> prompt bytes
};

/// Transcript-store audit used by the record-check verb.
struct TranscriptAudit {
    std::size_t total_entries = 0;
    std::size_t distinct_hashes = 0;
    std::size_t exact_duplicates = 0;    // same hash, same response
    std::size_t divergent_duplicates = 0; // same hash, different response
};

TranscriptAudit audit_transcripts(const std::filesystem::path& path);

} // namespace cmie
