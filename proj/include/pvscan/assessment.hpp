#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace pvscan {

// Where the panels sit inside a tile: nine thirds-grid regions plus NA.
enum class Location {
    top,
    bottom,
    left,
    right,
    center,
    top_left,
    top_right,
    bottom_left,
    bottom_right,
    na,
};

inline constexpr std::array<Location, 10> kAllLocations = {
    Location::top,       Location::bottom,      Location::left,
    Location::right,     Location::center,      Location::top_left,
    Location::top_right, Location::bottom_left, Location::bottom_right,
    Location::na,
};

enum class Quantity { zero_to_one, one_to_five, five_to_ten, ten_plus, na };

inline constexpr std::array<Quantity, 5> kAllQuantities = {
    Quantity::zero_to_one, Quantity::one_to_five, Quantity::five_to_ten,
    Quantity::ten_plus, Quantity::na,
};

std::string_view to_string(Location loc);
std::string_view to_string(Quantity q);

// Exact canonical spelling only ("top-left", "NA", "1 to 5").
std::optional<Location> location_from_canonical(std::string_view s);
std::optional<Quantity> quantity_from_canonical(std::string_view s);

/// Trims, lowercases and maps space/underscore to hyphen before matching the
/// ten canonical labels. Throws Error(no_such_label) on anything else.
Location canonicalize_location(std::string_view raw);

/// Upper-inclusive buckets: n <= 1, (1,5], (5,10], > 10.
Quantity bucket_for_count(std::uint64_t n);

namespace field {
inline constexpr const char* present = "solar_panels_present";
inline constexpr const char* location = "location";
inline constexpr const char* quantity = "quantity";
inline constexpr const char* likelihood = "likelihood_of_solar_panels_present";
inline constexpr const char* confidence = "confidence_of_solar_panels_present";
}  // namespace field

struct PvAssessment {
    bool present = false;
    Location location = Location::na;
    Quantity quantity = Quantity::na;
    double likelihood = 0.0;
    double confidence = 0.0;

    bool operator==(const PvAssessment&) const = default;
};

// Presence / location / quantity consistency; nullopt when consistent.
std::optional<std::string> label_violation(bool present, Location loc, Quantity q);
std::optional<std::string> assessment_violation(const PvAssessment& a);

struct GroundTruthLabel {
    std::string tile_id;
    bool present = false;
    Location location = Location::na;
    Quantity quantity = Quantity::na;
    std::string annotator;
    std::string annotated_at;

    bool operator==(const GroundTruthLabel&) const = default;
};

/// Projects a prediction onto the label fields (D, L, Q).
GroundTruthLabel label_from_assessment(const std::string& tile_id, const PvAssessment& a,
                                       std::string annotator, std::string annotated_at);

bool same_label(const GroundTruthLabel& a, const GroundTruthLabel& b);

enum class ParseMode { strict, lenient };
enum class ParseStatus { ok, repaired, rejected };

std::string_view to_string(ParseStatus s);
std::optional<ParseStatus> parse_status_from(std::string_view s);

struct ParseOutcome {
    ParseStatus status = ParseStatus::rejected;
    std::optional<PvAssessment> assessment;
    std::vector<std::string> warnings;
    std::string raw_excerpt;
    std::string diagnostic;  // set when rejected

    bool usable() const { return status != ParseStatus::rejected; }
};

/// Returns the first balanced `{...}` span that parses as a JSON object.
std::optional<std::string_view> find_first_json_object(std::string_view text);

ParseOutcome parse_model_response(std::string_view raw, ParseMode mode);

/// Canonical single-line JSON, prompt field order, two-decimal reals.
std::string serialize_assessment(const PvAssessment& a);

/// Strict validation of a label body {solar_panels_present, location, quantity}.
/// Throws Error(invalid_argument) with a diagnostic.
void parse_label_fields(const nlohmann::json& body, bool& present, Location& loc, Quantity& q);

nlohmann::json to_json(const GroundTruthLabel& label);
GroundTruthLabel label_from_json(const nlohmann::json& j);

nlohmann::json to_json(const ParseOutcome& outcome);
ParseOutcome parse_outcome_from_json(const nlohmann::json& j);

nlohmann::json assessment_to_json(const PvAssessment& a);

}  // namespace pvscan
