#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace pvscan {

struct LatLon {
    double lat = 0.0;
    double lon = 0.0;

    bool operator==(const LatLon&) const = default;
};

struct BoundingBox {
    double min_lat = 0.0;
    double min_lon = 0.0;
    double max_lat = 0.0;
    double max_lon = 0.0;

    bool contains(const LatLon& p) const {
        return p.lat >= min_lat && p.lat <= max_lat && p.lon >= min_lon && p.lon <= max_lon;
    }
    bool operator==(const BoundingBox&) const = default;
};

struct RegionSpec {
    std::string name;
    BoundingBox bbox;
    int sample_target = 1;
};

/// Throws Error(invalid_region).
void validate_region(const RegionSpec& region);

struct InstallationSite {
    std::string site_id;  // "<element type>/<osm id>"
    LatLon point;
    std::map<std::string, std::string> source_tags;

    bool operator==(const InstallationSite&) const = default;
};

struct SiteQueryOptions {
    int timeout_s = 60;
};

/// Overpass QL selecting power=generator + generator:source=solar nodes, ways and
/// relations inside the bbox, with `out center` so areas reduce to a point.
std::string build_site_query(const RegionSpec& region, const SiteQueryOptions& options = {});

struct SiteParseResult {
    std::vector<InstallationSite> sites;
    std::size_t skipped_no_coordinates = 0;
    std::size_t skipped_outside_bbox = 0;
};

/// Throws Error(malformed_response) when the payload is not JSON or has no
/// `elements` array. When `within` is given, points outside it are dropped.
SiteParseResult parse_site_response(std::string_view payload,
                                    const std::optional<BoundingBox>& within = std::nullopt);

/// Deterministic k-subset (original order preserved). Throws
/// Error(insufficient_sites) when k exceeds the input size.
std::vector<InstallationSite> sample_sites(const std::vector<InstallationSite>& sites, std::size_t k,
                                           std::uint64_t seed);

/// The six study regions shipped as defaults.
std::vector<RegionSpec> default_regions();

std::vector<RegionSpec> load_regions(const std::filesystem::path& path);
void save_regions(const std::filesystem::path& path, const std::vector<RegionSpec>& regions);

nlohmann::json to_json(const RegionSpec& region);
RegionSpec region_from_json(const nlohmann::json& j);
nlohmann::json to_json(const InstallationSite& site);
InstallationSite site_from_json(const nlohmann::json& j);

// Shortest decimal form with at most 6 fractional digits ("33.69", "-117.9").
std::string format_degrees(double value);

}  // namespace pvscan
