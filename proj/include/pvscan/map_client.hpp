#pragma once

#include <atomic>
#include <filesystem>
#include <future>
#include <memory>
#include <mutex>
#include <string>
#include <unordered_map>

#include "pvscan/http.hpp"
#include "pvscan/imagery.hpp"

namespace pvscan {

struct MapClientConfig {
    std::string provider = "static-maps";
    std::string base_url = "https://maps.googleapis.com";
    std::string path = "/maps/api/staticmap";
    std::string map_type = "satellite";
    std::string api_key_env = "MAPS_API_KEY";
    std::filesystem::path cache_dir;  // empty: memory cache only
    RetryPolicy retry;
};

struct SceneRequest {
    LatLon point;
    int zoom = 20;
    int size = 640;
    std::string region_name;
};

/// Static-map scene fetcher with a content-addressed disk cache and per-key
/// single flight: concurrent requests for one key share a single upstream call.
class MapClient {
public:
    MapClient(MapClientConfig config, std::shared_ptr<HttpTransport> transport, Sleeper sleeper = real_sleeper());

    /// Throws Error(precondition) for sizes not divisible by 4,
    /// Error(auth_error), Error(rate_limited), Error(backend_unavailable) or
    /// Error(decode_error).
    SceneImage fetch_scene(const SceneRequest& request);

    std::string cache_key(const SceneRequest& request) const;

    int network_calls() const { return network_calls_.load(); }
    int retries() const { return retries_.load(); }

private:
    SceneImage fetch_uncached(const SceneRequest& request, const std::string& key);
    std::filesystem::path cache_path(const std::string& key) const;

    MapClientConfig config_;
    std::shared_ptr<HttpTransport> transport_;
    Sleeper sleeper_;

    std::mutex mu_;
    std::unordered_map<std::string, std::shared_future<SceneImage>> flights_;
    std::atomic<int> network_calls_{0};
    std::atomic<int> retries_{0};
};

}  // namespace pvscan
