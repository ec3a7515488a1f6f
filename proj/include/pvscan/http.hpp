#pragma once

#include <chrono>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <string>

namespace pvscan {

struct HttpRequest {
    std::string method = "GET";
    std::string url;  // absolute: scheme://host[:port]/path?query
    std::map<std::string, std::string> headers;
    std::string body;
    std::string content_type;
};

struct HttpResponse {
    int status = 0;  // 0 = transport failure (no response)
    std::string body;
    std::map<std::string, std::string> headers;  // lowercase names
    std::string error;

    std::optional<std::string> header(const std::string& lower_name) const {
        auto it = headers.find(lower_name);
        if (it == headers.end()) return std::nullopt;
        return it->second;
    }
};

class HttpTransport {
public:
    virtual ~HttpTransport() = default;
    virtual HttpResponse send(const HttpRequest& request) = 0;
};

/// cpp-httplib backed transport (http and https).
std::shared_ptr<HttpTransport> make_http_transport(std::chrono::seconds timeout = std::chrono::seconds(60));

struct RetryPolicy {
    int max_attempts = 5;
    std::chrono::milliseconds initial_delay{1000};
    double factor = 2.0;
    double jitter = 0.25;  // +/- fraction of the nominal delay
    std::chrono::milliseconds max_delay{60000};
};

using Sleeper = std::function<void(std::chrono::milliseconds)>;
Sleeper real_sleeper();

bool is_transient_status(int status);

/// Delay before retry number `retry` (1-based): initial * factor^(retry-1),
/// jittered, capped at max_delay.
std::chrono::milliseconds backoff_delay(const RetryPolicy& policy, int retry, std::mt19937_64& rng);

/// Retry-After as delta-seconds. HTTP-date values are ignored.
std::optional<std::chrono::milliseconds> parse_retry_after(const std::string& value);

struct RetryOutcome {
    HttpResponse response;  // last response seen
    int attempts = 0;
};

/// Sends until a non-transient status or the attempt budget runs out. A
/// server-provided Retry-After takes precedence over the computed backoff.
RetryOutcome send_with_retry(HttpTransport& transport, const HttpRequest& request, const RetryPolicy& policy,
                             const Sleeper& sleep, std::uint64_t jitter_seed = 0);

struct UrlParts {
    std::string origin;  // scheme://host[:port]
    std::string target;  // /path?query
};
UrlParts split_url(const std::string& url);

std::string url_encode(const std::string& s);

}  // namespace pvscan
