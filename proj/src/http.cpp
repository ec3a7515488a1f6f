#include "pvscan/http.hpp"

#include <httplib.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <thread>

#include "pvscan/error.hpp"

namespace pvscan {

UrlParts split_url(const std::string& url) {
    auto scheme_end = url.find("://");
    if (scheme_end == std::string::npos) throw Error(Errc::invalid_argument, "URL lacks a scheme: " + url);
    auto path_start = url.find('/', scheme_end + 3);
    if (path_start == std::string::npos) return {url, "/"};
    return {url.substr(0, path_start), url.substr(path_start)};
}

std::string url_encode(const std::string& s) {
    static constexpr char kHex[] = "0123456789ABCDEF";
    std::string out;
    for (unsigned char c : s) {
        if (std::isalnum(c) || c == '-' || c == '_' || c == '.' || c == '~' || c == ',') {
            out.push_back(static_cast<char>(c));
        } else {
            out.push_back('%');
            out.push_back(kHex[c >> 4]);
            out.push_back(kHex[c & 0xF]);
        }
    }
    return out;
}

namespace {

class HttplibTransport : public HttpTransport {
public:
    explicit HttplibTransport(std::chrono::seconds timeout) : timeout_(timeout) {}

    HttpResponse send(const HttpRequest& request) override {
        UrlParts parts = split_url(request.url);
        httplib::Client client(parts.origin);
        client.set_connection_timeout(timeout_);
        client.set_read_timeout(timeout_);
        client.set_write_timeout(timeout_);

        httplib::Headers headers;
        for (const auto& [k, v] : request.headers) headers.emplace(k, v);

        httplib::Result res;
        if (request.method == "GET") {
            res = client.Get(parts.target, headers);
        } else if (request.method == "POST") {
            res = client.Post(parts.target, headers, request.body,
                              request.content_type.empty() ? "application/json" : request.content_type);
        } else {
            throw Error(Errc::invalid_argument, "unsupported HTTP method " + request.method);
        }

        HttpResponse out;
        if (!res) {
            out.status = 0;
            out.error = httplib::to_string(res.error());
            return out;
        }
        out.status = res->status;
        out.body = res->body;
        for (const auto& [k, v] : res->headers) {
            std::string key = k;
            std::transform(key.begin(), key.end(), key.begin(),
                           [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
            out.headers[key] = v;
        }
        return out;
    }

private:
    std::chrono::seconds timeout_;
};

}  // namespace

std::shared_ptr<HttpTransport> make_http_transport(std::chrono::seconds timeout) {
    return std::make_shared<HttplibTransport>(timeout);
}

Sleeper real_sleeper() {
    return [](std::chrono::milliseconds d) { std::this_thread::sleep_for(d); };
}

bool is_transient_status(int status) {
    return status == 0 || status == 408 || status == 429 || status == 500 || status == 502 || status == 503 ||
           status == 504;
}

std::chrono::milliseconds backoff_delay(const RetryPolicy& policy, int retry, std::mt19937_64& rng) {
    double nominal = static_cast<double>(policy.initial_delay.count()) * std::pow(policy.factor, retry - 1);
    double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
    double jittered = nominal * (1.0 + policy.jitter * (2.0 * u - 1.0));
    double capped = std::min(jittered, static_cast<double>(policy.max_delay.count()));
    return std::chrono::milliseconds(static_cast<std::int64_t>(std::max(0.0, capped)));
}

std::optional<std::chrono::milliseconds> parse_retry_after(const std::string& value) {
    if (value.empty() || !std::all_of(value.begin(), value.end(), [](unsigned char c) { return std::isdigit(c); })) {
        return std::nullopt;
    }
    return std::chrono::milliseconds(std::stoll(value) * 1000);
}

RetryOutcome send_with_retry(HttpTransport& transport, const HttpRequest& request, const RetryPolicy& policy,
                             const Sleeper& sleep, std::uint64_t jitter_seed) {
    std::mt19937_64 rng(jitter_seed);
    RetryOutcome out;
    const int budget = std::max(1, policy.max_attempts);
    for (int attempt = 1; attempt <= budget; ++attempt) {
        out.response = transport.send(request);
        out.attempts = attempt;
        if (!is_transient_status(out.response.status) || attempt == budget) break;
        std::chrono::milliseconds delay = backoff_delay(policy, attempt, rng);
        if (auto ra = out.response.header("retry-after")) {
            if (auto server_delay = parse_retry_after(*ra)) delay = std::min(*server_delay, policy.max_delay);
        }
        if (sleep) sleep(delay);
    }
    return out;
}

}  // namespace pvscan
