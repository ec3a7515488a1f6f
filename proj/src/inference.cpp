#include "pvscan/inference.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <thread>

#include "pvscan/codec.hpp"
#include "pvscan/error.hpp"
#include "pvscan/store.hpp"

namespace pvscan {

using nlohmann::json;

std::string_view to_string(BackendKind kind) {
    switch (kind) {
        case BackendKind::remote: return "remote";
        case BackendKind::replay: return "replay";
        case BackendKind::mock: return "mock";
    }
    return "mock";
}

std::optional<BackendKind> backend_kind_from(std::string_view s) {
    if (s == "remote") return BackendKind::remote;
    if (s == "replay") return BackendKind::replay;
    if (s == "mock") return BackendKind::mock;
    return std::nullopt;
}

void validate(const BackendConfig& config) {
    if (config.parallelism < 1) throw Error(Errc::invalid_argument, "parallelism must be at least 1");
    if (config.max_retries < 1) throw Error(Errc::invalid_argument, "max_retries must be at least 1");
    if (config.kind == BackendKind::remote && (config.endpoint.empty() || config.model_id.empty())) {
        throw Error(Errc::invalid_argument, "remote backend needs an endpoint and a model id");
    }
    if (config.kind == BackendKind::replay && config.fixtures_dir.empty()) {
        throw Error(Errc::invalid_argument, "replay backend needs a fixtures directory");
    }
}

namespace {

class MockBackend : public Backend {
public:
    BackendKind kind() const override { return BackendKind::mock; }

    Completion complete(const PromptBundle& bundle) override {
        auto png = base64_decode(bundle.image_payload);
        if (!png) throw Error(Errc::decode_error, "image payload is not valid base64");
        Raster tile = decode_png(*png);
        return {serialize_assessment(mock_oracle_assess(tile)), 1};
    }
};

class ReplayBackend : public Backend {
public:
    explicit ReplayBackend(std::filesystem::path dir) : dir_(std::move(dir)) {}

    BackendKind kind() const override { return BackendKind::replay; }

    Completion complete(const PromptBundle& bundle) override {
        auto path = dir_ / (bundle.bundle_hash + ".txt");
        if (!std::filesystem::exists(path)) {
            throw Error(Errc::replay_miss, "no replay fixture for bundle " + bundle.bundle_hash);
        }
        return {read_text(path), 1};
    }

private:
    std::filesystem::path dir_;
};

class RemoteBackend : public Backend {
public:
    RemoteBackend(BackendConfig config, std::shared_ptr<HttpTransport> transport, Sleeper sleeper)
        : config_(std::move(config)), transport_(std::move(transport)), sleeper_(std::move(sleeper)) {
        config_.retry.max_attempts = config_.max_retries;
    }

    BackendKind kind() const override { return BackendKind::remote; }

    Completion complete(const PromptBundle& bundle) override {
        const char* key = std::getenv(config_.credential_env.c_str());
        if (key == nullptr || *key == '\0') {
            throw Error(Errc::auth_error, "model credential missing: set " + config_.credential_env);
        }
        json body{{"model", config_.model_id},
                  {"temperature", bundle.temperature},
                  {"messages", messages_to_json(render_messages(bundle), config_.image_style)}};
        HttpRequest req;
        req.method = "POST";
        req.url = config_.endpoint;
        req.body = body.dump();
        req.content_type = "application/json";
        req.headers["Authorization"] = std::string("Bearer ") + key;

        RetryOutcome out = send_with_retry(*transport_, req, config_.retry, sleeper_,
                                           std::hash<std::string>{}(bundle.bundle_hash));
        const auto& res = out.response;
        if (res.status == 401 || res.status == 403) {
            throw Error(Errc::auth_error, "model endpoint rejected the credential (HTTP " +
                                              std::to_string(res.status) + ")");
        }
        if (res.status != 200) {
            throw Error(Errc::backend_unavailable,
                        "model endpoint failed after " + std::to_string(out.attempts) + " attempts: HTTP " +
                            std::to_string(res.status) + (res.error.empty() ? "" : " (" + res.error + ")"));
        }
        std::string text = res.body;
        json doc = json::parse(res.body, nullptr, false);
        if (!doc.is_discarded() && doc.contains("choices") && doc["choices"].is_array() && !doc["choices"].empty()) {
            const json& choice = doc["choices"][0];
            if (choice.is_object() && choice.contains("message") && choice["message"].is_object()) {
                const json& msg = choice["message"];
                if (msg.contains("content") && msg["content"].is_string()) text = msg["content"].get<std::string>();
            }
        }
        if (!config_.record_dir.empty()) {
            write_text_atomic(config_.record_dir / (bundle.bundle_hash + ".txt"), text);
        }
        return {text, out.attempts};
    }

private:
    BackendConfig config_;
    std::shared_ptr<HttpTransport> transport_;
    Sleeper sleeper_;
};

}  // namespace

std::unique_ptr<Backend> make_backend(const BackendConfig& config, std::shared_ptr<HttpTransport> transport,
                                      Sleeper sleeper) {
    validate(config);
    switch (config.kind) {
        case BackendKind::mock: return std::make_unique<MockBackend>();
        case BackendKind::replay: return std::make_unique<ReplayBackend>(config.fixtures_dir);
        case BackendKind::remote:
            if (!transport) transport = make_http_transport();
            return std::make_unique<RemoteBackend>(config, std::move(transport), std::move(sleeper));
    }
    throw Error(Errc::invalid_argument, "unknown backend kind");
}

json to_json(const InferenceRecord& r) {
    json j{{"tile_id", r.tile_id},
           {"bundle_hash", r.bundle_hash},
           {"backend_kind", std::string(to_string(r.backend_kind))},
           {"raw_response", r.raw_response},
           {"outcome", to_json(r.outcome)},
           {"latency_ms", r.latency_ms},
           {"attempt_count", r.attempt_count},
           {"created_at", r.created_at}};
    if (!r.error.empty()) j["error"] = r.error;
    return j;
}

InferenceRecord inference_record_from_json(const json& j) {
    InferenceRecord r;
    r.tile_id = j.at("tile_id").get<std::string>();
    r.bundle_hash = j.value("bundle_hash", std::string());
    auto kind = backend_kind_from(j.value("backend_kind", std::string("mock")));
    if (!kind) throw Error(Errc::invalid_argument, "unknown backend kind in record");
    r.backend_kind = *kind;
    r.raw_response = j.value("raw_response", std::string());
    r.outcome = parse_outcome_from_json(j.at("outcome"));
    r.latency_ms = j.value("latency_ms", std::int64_t{0});
    r.attempt_count = j.value("attempt_count", 1);
    r.created_at = j.value("created_at", std::string());
    r.error = j.value("error", std::string());
    return r;
}

InferenceRecord run_inference(Backend& backend, const PromptBundle& bundle, const std::string& tile_id) {
    auto t0 = std::chrono::steady_clock::now();
    Completion completion = backend.complete(bundle);
    auto t1 = std::chrono::steady_clock::now();

    InferenceRecord r;
    r.tile_id = tile_id;
    r.bundle_hash = bundle.bundle_hash;
    r.backend_kind = backend.kind();
    r.raw_response = std::move(completion.text);
    r.outcome = parse_model_response(r.raw_response, ParseMode::lenient);
    r.latency_ms = std::chrono::duration_cast<std::chrono::milliseconds>(t1 - t0).count();
    r.attempt_count = std::max(1, completion.attempts);
    r.created_at = utc_now_iso();
    return r;
}

BatchResult run_batch(Backend& backend, const std::vector<TileInput>& tiles, const PromptTemplate& tmpl,
                      const std::vector<FewShotExample>& examples, std::size_t k, const BatchOptions& options) {
    if (k > examples.size()) {
        throw Error(Errc::not_enough_examples, "requested " + std::to_string(k) + " examples but only " +
                                                   std::to_string(examples.size()) + " available");
    }
    BatchResult result;
    result.records.resize(tiles.size());
    if (tiles.empty()) return result;

    std::unique_ptr<JsonlAppender> journal;
    if (options.journal) journal = std::make_unique<JsonlAppender>(*options.journal);

    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i = next.fetch_add(1); i < tiles.size(); i = next.fetch_add(1)) {
            const auto& tile = tiles[i];
            PromptBundle bundle = assemble_prompt(tmpl, examples, k, tile.image_payload, options.prompt);
            InferenceRecord rec;
            try {
                rec = run_inference(backend, bundle, tile.tile_id);
            } catch (const Error& e) {
                rec.tile_id = tile.tile_id;
                rec.bundle_hash = bundle.bundle_hash;
                rec.backend_kind = backend.kind();
                rec.outcome.status = ParseStatus::rejected;
                rec.outcome.diagnostic = "backend call failed";
                rec.error = std::string(to_string(e.code())) + ": " + e.what();
                rec.attempt_count = 1;
                rec.created_at = utc_now_iso();
            }
            if (journal) journal->append(to_json(rec));
            result.records[i] = std::move(rec);
        }
    };

    const int workers = std::clamp<int>(options.parallelism, 1, static_cast<int>(tiles.size()));
    std::vector<std::thread> pool;
    for (int w = 1; w < workers; ++w) pool.emplace_back(worker);
    worker();
    for (auto& t : pool) t.join();

    for (const auto& r : result.records) {
        if (!r.error.empty()) ++result.backend_failures;
        switch (r.outcome.status) {
            case ParseStatus::ok: ++result.ok; break;
            case ParseStatus::repaired: ++result.repaired; break;
            case ParseStatus::rejected: ++result.rejected; break;
        }
    }
    return result;
}

namespace {

double luminance(const std::uint8_t* p) { return 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2]; }

}  // namespace

OracleDetail mock_oracle_detail(const Raster& tile, const OracleParams& params) {
    if (tile.empty()) throw Error(Errc::decode_error, "tile has no pixel data");
    const int w = tile.width, h = tile.height;
    const std::size_t n = static_cast<std::size_t>(w) * h;

    std::vector<std::uint8_t> candidate(n, 0);
    double lum_total = 0.0;
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const std::uint8_t* p = tile.at(x, y);
            double lum = luminance(p);
            lum_total += lum;
            if (lum < params.max_luminance && static_cast<int>(p[2]) - static_cast<int>(p[0]) >= params.min_blue_lead) {
                candidate[static_cast<std::size_t>(y) * w + x] = 1;
            }
        }
    }

    // 4-connected components over candidate pixels; label 0 = unvisited.
    std::vector<int> label(n, 0);
    std::vector<std::size_t> stack;
    std::vector<std::size_t> pixels;
    const double min_area = params.min_area_fraction * static_cast<double>(n);

    std::int64_t sum_x = 0, sum_y = 0, area = 0;
    double comp_lum = 0.0, ring_lum = 0.0;
    std::int64_t ring_count = 0;
    int kept = 0;
    int next_label = 0;
    std::vector<int> ring_mark(n, 0);

    for (std::size_t start = 0; start < n; ++start) {
        if (!candidate[start] || label[start] != 0) continue;
        ++next_label;
        pixels.clear();
        stack.push_back(start);
        label[start] = next_label;
        while (!stack.empty()) {
            std::size_t idx = stack.back();
            stack.pop_back();
            pixels.push_back(idx);
            int x = static_cast<int>(idx % w), y = static_cast<int>(idx / w);
            const int nx[4] = {x - 1, x + 1, x, x};
            const int ny[4] = {y, y, y - 1, y + 1};
            for (int d = 0; d < 4; ++d) {
                if (nx[d] < 0 || ny[d] < 0 || nx[d] >= w || ny[d] >= h) continue;
                std::size_t j = static_cast<std::size_t>(ny[d]) * w + nx[d];
                if (candidate[j] && label[j] == 0) {
                    label[j] = next_label;
                    stack.push_back(j);
                }
            }
        }
        if (static_cast<double>(pixels.size()) < min_area) continue;
        ++kept;
        for (std::size_t idx : pixels) {
            int x = static_cast<int>(idx % w), y = static_cast<int>(idx / w);
            sum_x += 2 * x + 1;
            sum_y += 2 * y + 1;
            ++area;
            comp_lum += luminance(tile.at(x, y));
            const int nx[4] = {x - 1, x + 1, x, x};
            const int ny[4] = {y, y, y - 1, y + 1};
            for (int d = 0; d < 4; ++d) {
                if (nx[d] < 0 || ny[d] < 0 || nx[d] >= w || ny[d] >= h) continue;
                std::size_t j = static_cast<std::size_t>(ny[d]) * w + nx[d];
                if (candidate[j] || ring_mark[j] == next_label) continue;
                ring_mark[j] = next_label;
                ring_lum += luminance(tile.at(nx[d], ny[d]));
                ++ring_count;
            }
        }
    }

    OracleDetail out;
    out.components = kept;
    out.area_fraction = static_cast<double>(area) / static_cast<double>(n);
    if (kept > 0) {
        double inside = comp_lum / static_cast<double>(area);
        double outside = ring_count > 0 ? ring_lum / static_cast<double>(ring_count) : inside;
        out.contrast = (outside - inside) / 255.0;
    } else {
        // How clearly the tile as a whole sits above the dark-pixel cutoff.
        out.contrast = (lum_total / static_cast<double>(n) - params.max_luminance) / 255.0;
    }
    out.contrast = std::clamp(out.contrast, 0.0, 1.0);

    PvAssessment& a = out.assessment;
    a.present = kept > 0;
    if (a.present) {
        a.location = region_for_moments(sum_x, sum_y, area, w, h);
        a.quantity = bucket_for_count(static_cast<std::uint64_t>(kept));
    }
    a.likelihood = 1.0 / (1.0 + std::exp(-params.likelihood_slope * (out.area_fraction - params.min_area_fraction)));
    a.confidence = std::clamp(1.0 - std::exp(-out.contrast / params.contrast_scale), 0.0, 1.0);
    return out;
}

PvAssessment mock_oracle_assess(const Raster& tile, const OracleParams& params) {
    return mock_oracle_detail(tile, params).assessment;
}

PvAssessment mock_oracle_assess(const Tile& tile, const OracleParams& params) {
    return mock_oracle_assess(tile.raster, params);
}

}  // namespace pvscan
