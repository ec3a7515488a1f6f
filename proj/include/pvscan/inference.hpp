#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "pvscan/assessment.hpp"
#include "pvscan/http.hpp"
#include "pvscan/imagery.hpp"
#include "pvscan/prompting.hpp"

namespace pvscan {

enum class BackendKind { remote, replay, mock };

std::string_view to_string(BackendKind kind);
std::optional<BackendKind> backend_kind_from(std::string_view s);

struct BackendConfig {
    BackendKind kind = BackendKind::mock;
    std::string endpoint;  // chat-completions URL (remote)
    std::string model_id;  // base or fine-tuned model identifier (remote)
    std::string credential_env = "LLM_API_KEY";
    int max_retries = 5;  // total attempts per request
    int parallelism = 1;
    std::filesystem::path fixtures_dir;  // replay: <bundle_hash>.txt
    std::filesystem::path record_dir;    // remote: save raw responses as fixtures when set
    ImageStyle image_style = ImageStyle::data_url;
    RetryPolicy retry;
};

/// Throws Error(invalid_argument) on inconsistent settings.
void validate(const BackendConfig& config);

struct Completion {
    std::string text;
    int attempts = 1;
};

/// A model endpoint. Implementations are safe to call from several workers.
class Backend {
public:
    virtual ~Backend() = default;
    virtual BackendKind kind() const = 0;
    virtual Completion complete(const PromptBundle& bundle) = 0;
};

std::unique_ptr<Backend> make_backend(const BackendConfig& config, std::shared_ptr<HttpTransport> transport = nullptr,
                                      Sleeper sleeper = real_sleeper());

struct InferenceRecord {
    std::string tile_id;
    std::string bundle_hash;
    BackendKind backend_kind = BackendKind::mock;
    std::string raw_response;
    ParseOutcome outcome;
    std::int64_t latency_ms = 0;
    int attempt_count = 1;
    std::string created_at;
    std::string error;  // "<Category>: message" when the backend call itself failed
};

nlohmann::json to_json(const InferenceRecord& r);
InferenceRecord inference_record_from_json(const nlohmann::json& j);

/// Sends one bundle and parses the reply leniently. Backend failures
/// propagate as Error(backend_unavailable | replay_miss | auth_error).
InferenceRecord run_inference(Backend& backend, const PromptBundle& bundle, const std::string& tile_id);

struct TileInput {
    std::string tile_id;
    std::string image_payload;  // base64 PNG
};

struct BatchOptions {
    int parallelism = 1;
    std::optional<std::filesystem::path> journal;  // appended as records complete
    PromptOptions prompt;
};

struct BatchResult {
    std::vector<InferenceRecord> records;  // input order
    std::size_t ok = 0;
    std::size_t repaired = 0;
    std::size_t rejected = 0;
    std::size_t backend_failures = 0;
};

/// Every input yields exactly one record; per-tile failures are recorded, never fatal.
BatchResult run_batch(Backend& backend, const std::vector<TileInput>& tiles, const PromptTemplate& tmpl,
                      const std::vector<FewShotExample>& examples, std::size_t k, const BatchOptions& options = {});

/// Pixel-heuristic stand-in for the remote model.
struct OracleParams {
    double max_luminance = 100.0;   // candidate pixels are darker than this
    int min_blue_lead = 15;         // and B - R at least this
    double min_area_fraction = 0.002;
    double likelihood_slope = 1500.0;
    double contrast_scale = 0.08;
};

struct OracleDetail {
    PvAssessment assessment;
    int components = 0;
    double area_fraction = 0.0;
    double contrast = 0.0;
};

OracleDetail mock_oracle_detail(const Raster& tile, const OracleParams& params = {});
PvAssessment mock_oracle_assess(const Raster& tile, const OracleParams& params = {});
PvAssessment mock_oracle_assess(const Tile& tile, const OracleParams& params = {});

}  // namespace pvscan
