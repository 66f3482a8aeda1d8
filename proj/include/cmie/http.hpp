#pragma once

#include <chrono>
#include <memory>
#include <string>
#include <utility>
#include <vector>

namespace cmie {

struct HttpResponse {
    int status = 0;
    std::string body;
};

using HttpHeaders = std::vector<std::pair<std::string, std::string>>;

/// Transport seam: live code goes through httplib, tests inject scripted
/// transports for fault injection.
class HttpTransport {
public:
    virtual ~HttpTransport() = default;
    virtual HttpResponse post_json(const std::string& url, const HttpHeaders& headers,
                                   const std::string& body) = 0;
};

class HttplibTransport final : public HttpTransport {
public:
    explicit HttplibTransport(int timeout_s = 60) : timeout_s_(timeout_s) {}
    HttpResponse post_json(const std::string& url, const HttpHeaders& headers,
                           const std::string& body) override;

private:
    int timeout_s_;
};

struct RetryPolicy {
    int max_attempts = 3;
    std::chrono::milliseconds base_delay{1000}; // doubled per attempt, jittered
    bool jitter = true;
};

/// Sleeps for base_delay * 2^attempt (plus jitter when enabled).
void backoff_sleep(const RetryPolicy& policy, int attempt);

/// True for statuses worth another attempt under the retry policy.
bool retriable_status(int status);

} // namespace cmie
