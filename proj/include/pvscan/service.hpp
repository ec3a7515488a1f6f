#pragma once

#include <filesystem>
#include <memory>
#include <string>

#include "pvscan/store.hpp"

namespace pvscan {

struct ServiceConfig {
    std::string host = "127.0.0.1";
    int port = 8080;                     // 0 picks a free port
    std::filesystem::path static_dir;    // review UI build output; optional
};

/// HTTP+JSON API for the review loop:
///   GET  /api/queue?order=confidence_asc&limit=N
///   GET  /api/tiles/{id}/image
///   GET  /api/tiles/{id}/prediction
///   POST /api/items/{id}/correction
///   GET  /api/reports/latest
///   GET  /api/triage/config, PUT /api/triage/config
/// plus static assets at /. Errors are {"error": category, "message": text}.
class ReviewService {
public:
    ReviewService(DataDir dir, ServiceConfig config);
    ~ReviewService();
    ReviewService(const ReviewService&) = delete;
    ReviewService& operator=(const ReviewService&) = delete;

    /// Binds the socket and returns the bound port. Throws Error(io_error).
    int bind();
    /// Serves until stop(); call after bind().
    void run();
    /// bind() + run() on a background thread; returns the port.
    int start_background();
    void stop();

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

}  // namespace pvscan
