#include "pvscan/service.hpp"

#include <httplib.h>

#include <thread>

#include "pvscan/autolabel.hpp"
#include "pvscan/error.hpp"
#include "pvscan/inference.hpp"

namespace pvscan {

using nlohmann::json;

namespace {

int status_for(Errc code) {
    switch (code) {
        case Errc::invalid_argument:
        case Errc::no_such_label: return 400;
        case Errc::not_found:
        case Errc::missing_tile: return 404;
        case Errc::already_resolved: return 409;
        default: return 500;
    }
}

void send_json(httplib::Response& res, int status, const json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, int status, std::string_view category, const std::string& message) {
    send_json(res, status, json{{"error", std::string(category)}, {"message", message}});
}

const char* kPlaceholderPage =
    "<!doctype html><html><head><title>pvscan review</title></head><body>"
    "<p>The review UI is not installed. The API is available under /api/.</p></body></html>";

}  // namespace

struct ReviewService::Impl {
    DataDir dir;
    ServiceConfig config;
    ReviewStore store;
    httplib::Server server;
    std::thread worker;
    int port = 0;

    Impl(DataDir d, ServiceConfig c) : dir(d), config(std::move(c)), store(std::move(d)) {}

    // Wraps a handler so library errors map onto HTTP status codes.
    template <typename F>
    httplib::Server::Handler guarded(F f) {
        return [f](const httplib::Request& req, httplib::Response& res) {
            try {
                f(req, res);
            } catch (const Error& e) {
                send_error(res, status_for(e.code()), to_string(e.code()), e.what());
            } catch (const std::exception& e) {
                send_error(res, 500, "Internal", e.what());
            }
        };
    }

    TriageConfig triage_config() const {
        if (!fs::exists(dir.triage_config())) return {};
        json j = json::parse(read_text(dir.triage_config()), nullptr, false);
        if (j.is_discarded()) throw Error(Errc::io_error, "triage config file is corrupt");
        return triage_config_from_json(j);
    }

    std::optional<InferenceRecord> latest_prediction(const std::string& tile_id) const {
        if (!fs::exists(dir.journal())) return std::nullopt;
        std::optional<InferenceRecord> found;
        for (const auto& line : read_jsonl(dir.journal(), true)) {
            if (line.value("tile_id", std::string()) != tile_id) continue;
            found = inference_record_from_json(line);
        }
        return found;
    }

    void routes() {
        server.Get("/api/queue", guarded([this](const httplib::Request& req, httplib::Response& res) {
            const std::string order = req.has_param("order") ? req.get_param_value("order") : "confidence_asc";
            if (order != "confidence_asc") {
                send_error(res, 400, to_string(Errc::invalid_argument), "unsupported order '" + order + "'");
                return;
            }
            std::optional<std::size_t> limit;
            if (req.has_param("limit")) {
                const std::string raw = req.get_param_value("limit");
                if (raw.empty() || raw.find_first_not_of("0123456789") != std::string::npos) {
                    send_error(res, 400, to_string(Errc::invalid_argument), "limit must be a non-negative integer");
                    return;
                }
                limit = std::stoul(raw);
            }
            auto all_pending = store.pending();
            const std::size_t total = all_pending.size();
            if (limit && all_pending.size() > *limit) all_pending.resize(*limit);
            json items = json::array();
            for (const auto& i : all_pending) items.push_back(to_json(i));
            send_json(res, 200, json{{"items", std::move(items)}, {"total", total}});
        }));

        server.Get(R"(/api/tiles/([^/]+)/image)", guarded([this](const httplib::Request& req, httplib::Response& res) {
            const std::string id = req.matches[1];
            auto index = dir.tile_index();
            auto it = index.find(id);
            if (it == index.end()) throw Error(Errc::not_found, "no tile '" + id + "'");
            Bytes png = read_binary(dir.root() / it->second.path);
            res.set_content(std::string(png.begin(), png.end()), "image/png");
        }));

        server.Get(R"(/api/tiles/([^/]+)/prediction)",
                   guarded([this](const httplib::Request& req, httplib::Response& res) {
                       const std::string id = req.matches[1];
                       auto rec = latest_prediction(id);
                       if (!rec) throw Error(Errc::not_found, "no prediction for tile '" + id + "'");
                       json body{{"tile_id", id},
                                 {"status", std::string(to_string(rec->outcome.status))},
                                 {"assessment", rec->outcome.assessment ? assessment_to_json(*rec->outcome.assessment)
                                                                        : json(nullptr)},
                                 {"bundle_hash", rec->bundle_hash},
                                 {"created_at", rec->created_at}};
                       send_json(res, 200, body);
                   }));

        server.Post(R"(/api/items/([^/]+)/correction)",
                    guarded([this](const httplib::Request& req, httplib::Response& res) {
                        const std::string id = req.matches[1];
                        json body = json::parse(req.body, nullptr, false);
                        if (body.is_discarded()) throw Error(Errc::invalid_argument, "request body is not JSON");
                        GroundTruthLabel label;
                        parse_label_fields(body, label.present, label.location, label.quantity);
                        std::string reviewer = "reviewer";
                        if (body.contains("reviewer")) {
                            if (!body["reviewer"].is_string()) {
                                throw Error(Errc::invalid_argument, "reviewer must be a string");
                            }
                            reviewer = body["reviewer"].get<std::string>();
                        }
                        ReviewItem item = store.apply_correction(id, label, reviewer);
                        send_json(res, 200, to_json(item));
                    }));

        server.Get("/api/reports/latest", guarded([this](const httplib::Request&, httplib::Response& res) {
            const fs::path path = dir.reports_dir() / "latest.json";
            if (!fs::exists(path)) throw Error(Errc::not_found, "no evaluation report yet");
            res.set_content(read_text(path), "application/json");
        }));

        server.Get("/api/triage/config", guarded([this](const httplib::Request&, httplib::Response& res) {
            send_json(res, 200, to_json(triage_config()));
        }));

        server.Put("/api/triage/config", guarded([this](const httplib::Request& req, httplib::Response& res) {
            json body = json::parse(req.body, nullptr, false);
            if (body.is_discarded()) throw Error(Errc::invalid_argument, "request body is not JSON");
            TriageConfig cfg = triage_config_from_json(body, triage_config());
            write_text_atomic(dir.triage_config(), to_json(cfg).dump(2) + "\n");
            send_json(res, 200, to_json(cfg));
        }));

        if (!config.static_dir.empty() && fs::is_directory(config.static_dir)) {
            server.set_mount_point("/", config.static_dir.string());
        } else {
            server.Get("/", [](const httplib::Request&, httplib::Response& res) {
                res.set_content(kPlaceholderPage, "text/html");
            });
        }
    }
};

ReviewService::ReviewService(DataDir dir, ServiceConfig config)
    : impl_(std::make_unique<Impl>(std::move(dir), std::move(config))) {
    impl_->routes();
}

ReviewService::~ReviewService() { stop(); }

int ReviewService::bind() {
    if (impl_->config.port == 0) {
        impl_->port = impl_->server.bind_to_any_port(impl_->config.host);
        if (impl_->port < 0) throw Error(Errc::io_error, "cannot bind " + impl_->config.host);
    } else {
        if (!impl_->server.bind_to_port(impl_->config.host, impl_->config.port)) {
            throw Error(Errc::io_error,
                        "cannot bind " + impl_->config.host + ":" + std::to_string(impl_->config.port));
        }
        impl_->port = impl_->config.port;
    }
    return impl_->port;
}

void ReviewService::run() { impl_->server.listen_after_bind(); }

int ReviewService::start_background() {
    int port = bind();
    impl_->worker = std::thread([this] { run(); });
    impl_->server.wait_until_ready();
    return port;
}

void ReviewService::stop() {
    if (!impl_) return;
    impl_->server.stop();
    if (impl_->worker.joinable()) impl_->worker.join();
}

}  // namespace pvscan
