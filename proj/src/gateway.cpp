#include "cmie/gateway.hpp"

#include <charconv>
#include <chrono>
#include <cstdlib>
#include <ctime>

#include <json.hpp>

#include "cmie/digest.hpp"
#include "cmie/errors.hpp"

namespace cmie {

namespace {

using nlohmann::json;

std::string format_double(double v) {
    char buf[64];
    auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, end);
}

std::string now_iso8601_utc() {
    const auto now = std::chrono::system_clock::now();
    const std::time_t t = std::chrono::system_clock::to_time_t(now);
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

std::string api_key_from_env(const std::string& var) {
    const char* key = std::getenv(var.c_str());
    if (key == nullptr || *key == '\0') {
        throw AuthError("API key missing: set " + var);
    }
    return key;
}

// Shared retry loop for the live providers. send() performs one attempt and
// returns the response body on success; HTTP-level classification happens in
// classify().
template <typename SendFn>
std::pair<std::string, int> with_retries(const RetryPolicy& policy, GatewayTelemetry& telemetry,
                                         SendFn&& send) {
    int retries = 0;
    for (int attempt = 0;; ++attempt) {
        try {
            return {send(), retries};
        } catch (const AuthError&) {
            telemetry.failures++;
            throw;
        } catch (const RefusalError&) {
            throw;
        } catch (const TransportError&) {
            if (attempt + 1 >= policy.max_attempts) {
                telemetry.failures++;
                throw;
            }
            backoff_sleep(policy, attempt);
            ++retries;
            telemetry.retries++;
        }
    }
}

void check_status(const HttpResponse& res, const std::string& what) {
    if (res.status == 401 || res.status == 403) {
        throw AuthError(what + " rejected credentials (status " + std::to_string(res.status) +
                        ")");
    }
    if (retriable_status(res.status)) {
        throw TransportError(what + " transient failure (status " + std::to_string(res.status) +
                             ")");
    }
    if (res.status != 200) {
        throw TransportError(what + " failed (status " + std::to_string(res.status) +
                             "): " + res.body.substr(0, 256));
    }
}

} // namespace

std::string request_hash(const ChatRequest& request) {
    const std::string image_digest =
        request.image ? sha256_hex(request.image->bytes) : std::string("none");
    std::string canonical;
    canonical.reserve(request.prompt_text.size() + 128);
    canonical += "cmie-request-v1\n";
    canonical += request.model_name;
    canonical += '\n';
    canonical += format_double(request.temperature);
    canonical += '\n';
    canonical += image_digest;
    canonical += '\n';
    canonical += request.prompt_text;
    return sha256_hex(canonical);
}

TranscriptWriter::TranscriptWriter(std::filesystem::path sink) : sink_(std::move(sink)) {
    if (sink_.has_parent_path()) {
        std::filesystem::create_directories(sink_.parent_path());
    }
    out_.open(sink_, std::ios::binary | std::ios::app);
    if (!out_) {
        throw DataError("cannot open transcript sink: " + sink_.string());
    }
}

void TranscriptWriter::append(const Transcript& t) {
    std::lock_guard<std::mutex> lock(mutex_);
    json rec{{"request_hash", t.request_hash},
             {"response_text", t.response_text},
             {"latency_ms", t.latency_ms},
             {"provider_id", t.provider_id},
             {"timestamp", t.timestamp}};
    out_ << rec.dump() << "\n";
    out_.flush();
    if (!out_) {
        throw DataError("write failure on transcript sink: " + sink_.string());
    }
    ++count_;
}

std::size_t TranscriptWriter::count() const {
    std::lock_guard<std::mutex> lock(mutex_);
    return count_;
}

std::vector<Transcript> load_transcripts(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw DataError("cannot open transcript store: " + path.string());
    }
    std::vector<Transcript> out;
    std::string line;
    size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        json rec;
        try {
            rec = json::parse(line);
        } catch (const json::exception& e) {
            throw DataError("transcript line " + std::to_string(line_no) + ": invalid JSON: " +
                            e.what());
        }
        Transcript t;
        t.request_hash = rec.at("request_hash").get<std::string>();
        t.response_text = rec.at("response_text").get<std::string>();
        t.latency_ms = rec.value("latency_ms", 0);
        t.provider_id = rec.value("provider_id", "");
        t.timestamp = rec.value("timestamp", "");
        out.push_back(std::move(t));
    }
    return out;
}

OpenAiProvider::OpenAiProvider(LiveProviderConfig cfg, std::shared_ptr<HttpTransport> transport)
    : cfg_(std::move(cfg)), transport_(std::move(transport)) {}

ProviderResponse OpenAiProvider::complete(const ChatRequest& request) {
    telemetry_.requests++;
    const std::string key = api_key_from_env(cfg_.api_key_env);
    const std::string model = request.model_name.empty() ? cfg_.model : request.model_name;

    json content = json::array();
    content.push_back({{"type", "text"}, {"text", request.prompt_text}});
    if (request.image) {
        const std::string data_url = "data:" + request.image->media_type + ";base64," +
                                     base64_encode(request.image->bytes);
        content.push_back({{"type", "image_url"}, {"image_url", {{"url", data_url}}}});
    }
    json body{{"model", model},
              {"temperature", request.temperature},
              {"max_tokens", request.max_output},
              {"messages", json::array({{{"role", "user"}, {"content", content}}})}};

    const auto started = std::chrono::steady_clock::now();
    auto [text, retries] = with_retries(cfg_.retry, telemetry_, [&]() -> std::string {
        HttpResponse res = transport_->post_json(
            cfg_.base_url + "/v1/chat/completions",
            {{"Authorization", "Bearer " + key}}, body.dump());
        check_status(res, "openai provider");
        json parsed;
        try {
            parsed = json::parse(res.body);
        } catch (const json::exception& e) {
            throw TransportError(std::string("openai provider returned invalid JSON: ") +
                                 e.what());
        }
        if (!parsed.contains("choices") || parsed["choices"].empty()) {
            throw TransportError("openai provider response has no choices");
        }
        const auto& choice = parsed["choices"][0];
        const std::string finish = choice.value("finish_reason", "");
        const auto& message = choice.at("message");
        if (finish == "content_filter" ||
            (message.contains("refusal") && message["refusal"].is_string() &&
             !message["refusal"].get<std::string>().empty())) {
            throw RefusalError("provider declined to answer");
        }
        if (!message.contains("content") || !message["content"].is_string()) {
            throw TransportError("openai provider response has no text content");
        }
        return message["content"].get<std::string>();
    });
    const auto elapsed = std::chrono::duration_cast<std::chrono::milliseconds>(
        std::chrono::steady_clock::now() - started);
    return ProviderResponse{std::move(text), elapsed.count(), retries};
}

GeminiProvider::GeminiProvider(LiveProviderConfig cfg, std::shared_ptr<HttpTransport> transport)
    : cfg_(std::move(cfg)), transport_(std::move(transport)) {}

ProviderResponse GeminiProvider::complete(const ChatRequest& request) {
    telemetry_.requests++;
    const std::string key = api_key_from_env(cfg_.api_key_env);
    const std::string model = request.model_name.empty() ? cfg_.model : request.model_name;

    json parts = json::array();
    parts.push_back({{"text", request.prompt_text}});
    if (request.image) {
        parts.push_back({{"inline_data",
                          {{"mime_type", request.image->media_type},
                           {"data", base64_encode(request.image->bytes)}}}});
    }
    json body{{"contents", json::array({{{"parts", parts}}})},
              {"generationConfig",
               {{"temperature", request.temperature}, {"maxOutputTokens", request.max_output}}}};

    const std::string url =
        cfg_.base_url + "/v1beta/models/" + model + ":generateContent?key=" + key;

    const auto started = std::chrono::steady_clock::now();
    auto [text, retries] = with_retries(cfg_.retry, telemetry_, [&]() -> std::string {
        HttpResponse res = transport_->post_json(url, {}, body.dump());
        check_status(res, "gemini provider");
        json parsed;
        try {
            parsed = json::parse(res.body);
        } catch (const json::exception& e) {
            throw TransportError(std::string("gemini provider returned invalid JSON: ") +
                                 e.what());
        }
        if (parsed.contains("promptFeedback") &&
            parsed["promptFeedback"].contains("blockReason")) {
            throw RefusalError("provider declined to answer");
        }
        if (!parsed.contains("candidates") || parsed["candidates"].empty()) {
            throw TransportError("gemini provider response has no candidates");
        }
        std::string out;
        for (const auto& part : parsed["candidates"][0].at("content").at("parts")) {
            if (part.contains("text")) {
                out += part["text"].get<std::string>();
            }
        }
        if (out.empty()) {
            throw TransportError("gemini provider response has no text parts");
        }
        return out;
    });
    const auto elapsed = std::chrono::duration_cast<std::chrono::milliseconds>(
        std::chrono::steady_clock::now() - started);
    return ProviderResponse{std::move(text), elapsed.count(), retries};
}

ReplayProvider::ReplayProvider(const std::filesystem::path& transcripts) {
    for (auto& t : load_transcripts(transcripts)) {
        // First entry per hash wins; later exact duplicates come from re-asks.
        responses_.emplace(std::move(t.request_hash), std::move(t.response_text));
    }
}

ProviderResponse ReplayProvider::complete(const ChatRequest& request) {
    const std::string hash = request_hash(request);
    auto it = responses_.find(hash);
    if (it == responses_.end()) {
        throw ReplayMissError("no transcript for request hash " + hash);
    }
    return ProviderResponse{it->second, 0, 0};
}

RecordingProvider::RecordingProvider(std::shared_ptr<Provider> inner,
                                     std::shared_ptr<TranscriptWriter> sink)
    : inner_(std::move(inner)), sink_(std::move(sink)) {}

ProviderResponse RecordingProvider::complete(const ChatRequest& request) {
    const std::string hash = request_hash(request);
    {
        std::lock_guard<std::mutex> lock(mutex_);
        auto [it, inserted] = seen_.emplace(hash, request.prompt_text);
        if (!inserted && it->second != request.prompt_text) {
            throw HashCollisionError("two distinct requests share hash " + hash);
        }
    }
    ProviderResponse res = inner_->complete(request);
    Transcript t;
    t.request_hash = hash;
    t.response_text = res.text;
    t.latency_ms = res.latency_ms;
    t.provider_id = inner_->id();
    t.timestamp = now_iso8601_utc();
    sink_->append(t);
    return res;
}

std::string RecordingProvider::id() const { return "record(" + inner_->id() + ")"; }

std::size_t RecordingProvider::recorded_count() const { return sink_->count(); }

TranscriptAudit audit_transcripts(const std::filesystem::path& path) {
    TranscriptAudit audit;
    std::unordered_map<std::string, std::string> first;
    for (const auto& t : load_transcripts(path)) {
        ++audit.total_entries;
        auto [it, inserted] = first.emplace(t.request_hash, t.response_text);
        if (!inserted) {
            if (it->second == t.response_text) {
                ++audit.exact_duplicates;
            } else {
                ++audit.divergent_duplicates;
            }
        }
    }
    audit.distinct_hashes = first.size();
    return audit;
}

} // namespace cmie
