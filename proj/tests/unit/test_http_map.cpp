#include <doctest.h>

#include <httplib.h>

#include <cmath>
#include <cstdlib>
#include <functional>
#include <mutex>
#include <deque>
#include <filesystem>
#include <thread>

#include "pvscan/error.hpp"
#include "pvscan/http.hpp"
#include "pvscan/map_client.hpp"

using namespace pvscan;
using namespace std::chrono_literals;

namespace {

class ScriptedTransport : public HttpTransport {
public:
    std::deque<HttpResponse> script;
    HttpResponse fallback;
    std::vector<HttpRequest> seen;
    std::chrono::milliseconds delay{0};
    std::mutex mu;

    HttpResponse send(const HttpRequest& request) override {
        if (delay.count() > 0) std::this_thread::sleep_for(delay);
        std::lock_guard<std::mutex> lock(mu);
        seen.push_back(request);
        if (script.empty()) return fallback;
        HttpResponse r = script.front();
        script.pop_front();
        return r;
    }
};

HttpResponse png_response(int size) {
    Raster r(size, size);
    for (std::size_t i = 0; i < r.pixels.size(); ++i) r.pixels[i] = static_cast<std::uint8_t>(i * 7);
    Bytes png = encode_png(r);
    return HttpResponse{200, std::string(png.begin(), png.end()), {{"content-type", "image/png"}}, ""};
}

HttpResponse status_response(int status, std::map<std::string, std::string> headers = {}) {
    return HttpResponse{status, "", std::move(headers), ""};
}

struct Sleeps {
    std::vector<std::chrono::milliseconds> calls;
    Sleeper fn() {
        return [this](std::chrono::milliseconds d) { calls.push_back(d); };
    }
};

Sleeper quiet_sleeper() {
    return [](std::chrono::milliseconds) {};
}

Errc code_of(const std::function<void()>& f) {
    try {
        f();
    } catch (const Error& e) {
        return e.code();
    }
    FAIL("expected an Error");
    return Errc::precondition;
}

struct MapKey {
    MapKey() { setenv("PVSCAN_TEST_MAPS_KEY", "k3y", 1); }
    ~MapKey() { unsetenv("PVSCAN_TEST_MAPS_KEY"); }
};

MapClientConfig test_config() {
    MapClientConfig c;
    c.base_url = "http://maps.test";
    c.api_key_env = "PVSCAN_TEST_MAPS_KEY";
    return c;
}

}  // namespace

TEST_CASE("backoff doubles within the jitter band and respects the cap") {
    RetryPolicy p;
    std::mt19937_64 rng(1);
    for (int retry = 1; retry <= 5; ++retry) {
        double nominal = 1000.0 * std::pow(2.0, retry - 1);
        auto d = backoff_delay(p, retry, rng).count();
        CHECK(d >= nominal * 0.75 - 1);
        CHECK(d <= nominal * 1.25);
    }
    p.max_delay = 1500ms;
    CHECK(backoff_delay(p, 6, rng) == 1500ms);
}

TEST_CASE("parse_retry_after accepts delta seconds only") {
    CHECK(parse_retry_after("3") == 3000ms);
    CHECK(parse_retry_after("0") == 0ms);
    CHECK_FALSE(parse_retry_after("Wed, 21 Oct 2015 07:28:00 GMT").has_value());
    CHECK_FALSE(parse_retry_after("").has_value());
    CHECK_FALSE(parse_retry_after("-1").has_value());
}

TEST_CASE("transient statuses") {
    for (int s : {0, 408, 429, 500, 502, 503, 504}) CHECK(is_transient_status(s));
    for (int s : {200, 400, 401, 403, 404}) CHECK_FALSE(is_transient_status(s));
}

TEST_CASE("send_with_retry retries transient failures and honors Retry-After") {
    ScriptedTransport t;
    t.script = {status_response(503), status_response(429, {{"retry-after", "2"}}), status_response(200)};
    Sleeps sleeps;
    auto out = send_with_retry(t, HttpRequest{}, RetryPolicy{}, sleeps.fn());
    CHECK(out.attempts == 3);
    CHECK(out.response.status == 200);
    REQUIRE(sleeps.calls.size() == 2);
    CHECK(sleeps.calls[0] >= 750ms);
    CHECK(sleeps.calls[0] <= 1250ms);
    CHECK(sleeps.calls[1] == 2000ms);
}

TEST_CASE("send_with_retry stops at the budget and on non-transient errors") {
    ScriptedTransport t;
    t.fallback = status_response(500);
    Sleeps sleeps;
    auto out = send_with_retry(t, HttpRequest{}, RetryPolicy{}, sleeps.fn());
    CHECK(out.attempts == 5);
    CHECK(sleeps.calls.size() == 4);

    ScriptedTransport t2;
    t2.fallback = status_response(404);
    CHECK(send_with_retry(t2, HttpRequest{}, RetryPolicy{}, sleeps.fn()).attempts == 1);
}

TEST_CASE("split_url and url_encode") {
    auto p = split_url("http://127.0.0.1:8080/a/b?x=1");
    CHECK(p.origin == "http://127.0.0.1:8080");
    CHECK(p.target == "/a/b?x=1");
    CHECK(split_url("https://host").target == "/");
    CHECK_THROWS_AS(split_url("host/path"), Error);
    CHECK(url_encode("a b&c=d/é") == "a%20b%26c%3Dd%2F%C3%A9");
}

TEST_CASE("map client fetches once per key") {
    MapKey key;
    auto t = std::make_shared<ScriptedTransport>();
    t->fallback = png_response(64);
    Sleeps sleeps;
    MapClient client(test_config(), t, sleeps.fn());
    SceneRequest req{{33.7, -117.9}, 20, 64, "Santa Ana, CA"};
    SceneImage a = client.fetch_scene(req);
    SceneImage b = client.fetch_scene(req);
    CHECK(client.network_calls() == 1);
    CHECK(t->seen.size() == 1);
    CHECK(a.scene_id == b.scene_id);
    CHECK(a.raster.width == 64);
    CHECK(a.region_name == "Santa Ana, CA");
    const std::string& url = t->seen[0].url;
    CHECK(url.rfind("http://maps.test/maps/api/staticmap?", 0) == 0);
    CHECK(url.find("center=33.700000,-117.900000") != std::string::npos);
    CHECK(url.find("size=64x64") != std::string::npos);
    CHECK(url.find("maptype=satellite") != std::string::npos);
    CHECK(url.find("key=k3y") != std::string::npos);

    SceneRequest nearby = req;
    nearby.point.lat += 1e-8;
    CHECK(client.cache_key(nearby) == client.cache_key(req));
    SceneRequest other = req;
    other.zoom = 19;
    CHECK(client.cache_key(other) != client.cache_key(req));
}

TEST_CASE("429 then 200 succeeds with one retry recorded") {
    MapKey key;
    auto t = std::make_shared<ScriptedTransport>();
    t->script = {status_response(429)};
    t->fallback = png_response(32);
    Sleeps sleeps;
    MapClient client(test_config(), t, sleeps.fn());
    SceneImage s = client.fetch_scene({{1, 2}, 20, 32, ""});
    CHECK(s.raster.width == 32);
    CHECK(client.retries() == 1);
    CHECK(sleeps.calls.size() == 1);
}

TEST_CASE("map client error categories") {
    MapKey key;
    Sleeps sleeps;
    auto t = std::make_shared<ScriptedTransport>();
    MapClient client(test_config(), t, sleeps.fn());

    CHECK(code_of([&] { client.fetch_scene({{1, 2}, 20, 641, ""}); }) == Errc::precondition);
    CHECK(t->seen.empty());

    t->fallback = status_response(403);
    CHECK(code_of([&] { client.fetch_scene({{1, 2}, 20, 32, ""}); }) == Errc::auth_error);

    t->fallback = status_response(429);
    CHECK(code_of([&] { client.fetch_scene({{1, 3}, 20, 32, ""}); }) == Errc::rate_limited);

    t->fallback = HttpResponse{200, "<html>quota</html>", {}, ""};
    CHECK(code_of([&] { client.fetch_scene({{1, 4}, 20, 32, ""}); }) == Errc::decode_error);

    t->fallback = png_response(16);
    CHECK(code_of([&] { client.fetch_scene({{1, 5}, 20, 32, ""}); }) == Errc::decode_error);

    // A failed key is not cached; a later success goes through.
    t->fallback = png_response(32);
    CHECK_NOTHROW(client.fetch_scene({{1, 5}, 20, 32, ""}));
}

TEST_CASE("missing credential is an auth error without a network call") {
    unsetenv("PVSCAN_TEST_MAPS_KEY");
    auto t = std::make_shared<ScriptedTransport>();
    MapClient client(test_config(), t, quiet_sleeper());
    CHECK(code_of([&] { client.fetch_scene({{1, 2}, 20, 32, ""}); }) == Errc::auth_error);
    CHECK(t->seen.empty());
}

TEST_CASE("concurrent requests for one key share a single upstream call") {
    MapKey key;
    auto t = std::make_shared<ScriptedTransport>();
    t->fallback = png_response(32);
    t->delay = 100ms;
    MapClient client(test_config(), t, quiet_sleeper());
    std::vector<std::thread> workers;
    std::vector<std::string> ids(8);
    for (int i = 0; i < 8; ++i) {
        workers.emplace_back([&, i] { ids[i] = client.fetch_scene({{5, 6}, 20, 32, ""}).scene_id; });
    }
    for (auto& w : workers) w.join();
    CHECK(t->seen.size() == 1);
    for (const auto& id : ids) CHECK(id == ids[0]);
}

TEST_CASE("disk cache survives a new client") {
    MapKey key;
    auto dir = std::filesystem::temp_directory_path() / "pvscan_map_cache_test";
    std::filesystem::remove_all(dir);
    MapClientConfig cfg = test_config();
    cfg.cache_dir = dir;
    auto t = std::make_shared<ScriptedTransport>();
    t->fallback = png_response(32);
    std::string first_id;
    {
        MapClient client(cfg, t, quiet_sleeper());
        first_id = client.fetch_scene({{7, 8}, 20, 32, ""}).scene_id;
    }
    MapClient again(cfg, t, quiet_sleeper());
    SceneImage s = again.fetch_scene({{7, 8}, 20, 32, ""});
    CHECK(s.scene_id == first_id);
    CHECK_FALSE(s.fetched_at.empty());
    CHECK(t->seen.size() == 1);
    CHECK(again.network_calls() == 0);
    std::filesystem::remove_all(dir);
}

TEST_CASE("httplib transport talks to a local server") {
    httplib::Server server;
    server.Get("/hello", [](const httplib::Request& req, httplib::Response& res) {
        res.set_header("X-Echo", req.get_header_value("X-Token"));
        res.set_content("hi", "text/plain");
    });
    server.Post("/echo", [](const httplib::Request& req, httplib::Response& res) {
        res.status = 201;
        res.set_content(req.body, "application/json");
    });
    int port = server.bind_to_any_port("127.0.0.1");
    std::thread th([&] { server.listen_after_bind(); });
    server.wait_until_ready();

    auto transport = make_http_transport(5s);
    std::string base = "http://127.0.0.1:" + std::to_string(port);
    HttpRequest get;
    get.url = base + "/hello";
    get.headers["X-Token"] = "abc";
    auto r = transport->send(get);
    CHECK(r.status == 200);
    CHECK(r.body == "hi");
    CHECK(r.header("x-echo") == "abc");

    HttpRequest post;
    post.method = "POST";
    post.url = base + "/echo";
    post.body = "{\"a\":1}";
    auto p = transport->send(post);
    CHECK(p.status == 201);
    CHECK(p.body == post.body);

    server.stop();
    th.join();

    auto dead = transport->send(get);
    CHECK(dead.status == 0);
    CHECK_FALSE(dead.error.empty());
}
