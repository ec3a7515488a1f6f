#include "pvscan/map_client.hpp"

#include <cstdio>
#include <cstdlib>

#include "pvscan/error.hpp"
#include "pvscan/store.hpp"

namespace pvscan {

using nlohmann::json;

MapClient::MapClient(MapClientConfig config, std::shared_ptr<HttpTransport> transport, Sleeper sleeper)
    : config_(std::move(config)), transport_(std::move(transport)), sleeper_(std::move(sleeper)) {}

std::string MapClient::cache_key(const SceneRequest& request) const {
    char buf[160];
    std::snprintf(buf, sizeof buf, "%s|%.6f|%.6f|%d|%d|%s", config_.provider.c_str(), request.point.lat,
                  request.point.lon, request.zoom, request.size, config_.map_type.c_str());
    return sha256_hex(std::string_view(buf)).substr(0, 24);
}

std::filesystem::path MapClient::cache_path(const std::string& key) const { return config_.cache_dir / (key + ".png"); }

SceneImage MapClient::fetch_scene(const SceneRequest& request) {
    if (request.size <= 0 || request.size % kGridSize != 0) {
        throw Error(Errc::precondition, "scene size must be a positive multiple of 4, got " +
                                            std::to_string(request.size));
    }
    const std::string key = cache_key(request);

    std::promise<SceneImage> promise;
    std::shared_future<SceneImage> flight;
    bool leader = false;
    {
        std::lock_guard<std::mutex> lock(mu_);
        auto it = flights_.find(key);
        if (it != flights_.end()) {
            flight = it->second;
        } else {
            flight = promise.get_future().share();
            flights_.emplace(key, flight);
            leader = true;
        }
    }
    if (!leader) {
        SceneImage scene = flight.get();
        scene.region_name = request.region_name;
        return scene;
    }
    try {
        SceneImage scene = fetch_uncached(request, key);
        promise.set_value(scene);
        return scene;
    } catch (...) {
        promise.set_exception(std::current_exception());
        std::lock_guard<std::mutex> lock(mu_);
        flights_.erase(key);  // failures may be retried by a later call
        throw;
    }
}

SceneImage MapClient::fetch_uncached(const SceneRequest& request, const std::string& key) {
    SceneImage scene;
    scene.center = request.point;
    scene.zoom = request.zoom;
    scene.region_name = request.region_name;

    if (!config_.cache_dir.empty() && std::filesystem::exists(cache_path(key))) {
        Bytes png = read_binary(cache_path(key));
        scene.raster = decode_png(png);
        scene.scene_id = scene_id_for(scene.raster);
        auto meta_path = config_.cache_dir / (key + ".json");
        scene.fetched_at = std::filesystem::exists(meta_path)
                               ? json::parse(read_text(meta_path)).value("fetched_at", std::string())
                               : std::string();
        return scene;
    }

    const char* api_key = std::getenv(config_.api_key_env.c_str());
    if (api_key == nullptr || *api_key == '\0') {
        throw Error(Errc::auth_error, "map credential missing: set " + config_.api_key_env);
    }

    char query[256];
    std::snprintf(query, sizeof query, "?center=%.6f,%.6f&zoom=%d&size=%dx%d&maptype=%s&format=png", request.point.lat,
                  request.point.lon, request.zoom, request.size, request.size, config_.map_type.c_str());
    HttpRequest http;
    http.url = config_.base_url + config_.path + query + "&key=" + url_encode(api_key);

    network_calls_.fetch_add(1);
    RetryOutcome out = send_with_retry(*transport_, http, config_.retry, sleeper_, std::hash<std::string>{}(key));
    retries_.fetch_add(out.attempts - 1);

    const HttpResponse& res = out.response;
    if (res.status == 401 || res.status == 403) {
        throw Error(Errc::auth_error, "map provider rejected the credential (HTTP " + std::to_string(res.status) + ")");
    }
    if (res.status == 429) {
        throw Error(Errc::rate_limited, "map provider rate limit persisted after " + std::to_string(out.attempts) +
                                            " attempts");
    }
    if (res.status != 200) {
        throw Error(Errc::backend_unavailable,
                    "map provider failed after " + std::to_string(out.attempts) + " attempts: HTTP " +
                        std::to_string(res.status) + (res.error.empty() ? "" : " (" + res.error + ")"));
    }

    Bytes body(res.body.begin(), res.body.end());
    scene.raster = decode_png(body);
    if (scene.raster.width != request.size || scene.raster.height != request.size) {
        throw Error(Errc::decode_error, "map provider returned " + std::to_string(scene.raster.width) + "x" +
                                            std::to_string(scene.raster.height) + ", expected " +
                                            std::to_string(request.size) + "x" + std::to_string(request.size));
    }
    scene.scene_id = scene_id_for(scene.raster);
    scene.fetched_at = utc_now_iso();

    if (!config_.cache_dir.empty()) {
        std::filesystem::create_directories(config_.cache_dir);
        write_binary_atomic(cache_path(key), encode_png(scene.raster));
        write_text_atomic(config_.cache_dir / (key + ".json"),
                          json{{"key", key}, {"fetched_at", scene.fetched_at}}.dump() + "\n");
    }
    return scene;
}

}  // namespace pvscan
