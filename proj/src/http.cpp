#include "cmie/http.hpp"

#include <random>
#include <thread>

#ifndef CPPHTTPLIB_OPENSSL_SUPPORT
#define CPPHTTPLIB_OPENSSL_SUPPORT
#endif
#include <httplib.h>

#include "cmie/errors.hpp"

namespace cmie {

namespace {

// Splits "https://host:port/path" into base ("scheme://host:port") and path.
std::pair<std::string, std::string> split_url(const std::string& url) {
    auto scheme_end = url.find("://");
    if (scheme_end == std::string::npos) {
        throw ConfigError("url missing scheme: " + url);
    }
    auto path_start = url.find('/', scheme_end + 3);
    if (path_start == std::string::npos) {
        return {url, "/"};
    }
    return {url.substr(0, path_start), url.substr(path_start)};
}

} // namespace

HttpResponse HttplibTransport::post_json(const std::string& url, const HttpHeaders& headers,
                                         const std::string& body) {
    auto [base, path] = split_url(url);
    httplib::Client client(base);
    client.set_connection_timeout(timeout_s_, 0);
    client.set_read_timeout(timeout_s_, 0);
    client.set_write_timeout(timeout_s_, 0);
    client.enable_server_certificate_verification(true);

    httplib::Headers h;
    for (const auto& [k, v] : headers) {
        h.emplace(k, v);
    }
    auto res = client.Post(path, h, body, "application/json");
    if (!res) {
        throw TransportError("http request failed: " + httplib::to_string(res.error()) +
                             " (" + url + ")");
    }
    return HttpResponse{res->status, res->body};
}

void backoff_sleep(const RetryPolicy& policy, int attempt) {
    auto delay = policy.base_delay * (1LL << attempt);
    if (policy.jitter && delay.count() > 0) {
        thread_local std::mt19937_64 rng{std::random_device{}()};
        std::uniform_int_distribution<std::int64_t> dist(0, delay.count() / 2);
        delay += std::chrono::milliseconds(dist(rng));
    }
    if (delay.count() > 0) {
        std::this_thread::sleep_for(delay);
    }
}

bool retriable_status(int status) {
    return status == 429 || status == 408 || (status >= 500 && status < 600);
}

} // namespace cmie
