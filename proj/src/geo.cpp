#include "pvscan/geo.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <random>

#include "pvscan/error.hpp"
#include "pvscan/rng.hpp"
#include "pvscan/store.hpp"

namespace pvscan {

using nlohmann::json;

void validate_region(const RegionSpec& region) {
    const auto& b = region.bbox;
    auto bad = [&](const std::string& why) {
        throw Error(Errc::invalid_region, "region '" + region.name + "': " + why);
    };
    for (double v : {b.min_lat, b.min_lon, b.max_lat, b.max_lon}) {
        if (!std::isfinite(v)) bad("non-finite bbox coordinate");
    }
    if (b.min_lat < -90.0 || b.max_lat > 90.0) bad("latitude outside [-90, 90]");
    if (b.min_lon < -180.0 || b.max_lon > 180.0) bad("longitude outside [-180, 180]");
    if (!(b.min_lat < b.max_lat)) bad("min_lat must be below max_lat");
    if (!(b.min_lon < b.max_lon)) bad("min_lon must be below max_lon");
    if (region.sample_target < 1) bad("sample_target must be positive");
}

std::string format_degrees(double value) {
    char buf[48];
    std::snprintf(buf, sizeof buf, "%.6f", value);
    std::string s = buf;
    while (!s.empty() && s.back() == '0') s.pop_back();
    if (!s.empty() && s.back() == '.') s.pop_back();
    if (s == "-0") s = "0";
    return s;
}

std::string build_site_query(const RegionSpec& region, const SiteQueryOptions& options) {
    validate_region(region);
    const auto& b = region.bbox;
    const std::string bbox = "(" + format_degrees(b.min_lat) + "," + format_degrees(b.min_lon) + "," +
                             format_degrees(b.max_lat) + "," + format_degrees(b.max_lon) + ")";
    const std::string filter = R"(["power"="generator"]["generator:source"="solar"])";
    std::string q = "[out:json][timeout:" + std::to_string(options.timeout_s) + "];\n(\n";
    for (const char* kind : {"node", "way", "relation"}) {
        q += "  " + std::string(kind) + filter + bbox + ";\n";
    }
    q += ");\nout center;\n";
    return q;
}

SiteParseResult parse_site_response(std::string_view payload, const std::optional<BoundingBox>& within) {
    json doc = json::parse(payload, nullptr, false);
    if (doc.is_discarded()) throw Error(Errc::malformed_response, "site response is not valid JSON");
    if (!doc.is_object() || !doc.contains("elements") || !doc["elements"].is_array()) {
        throw Error(Errc::malformed_response, "site response lacks an 'elements' array");
    }
    SiteParseResult result;
    for (const auto& el : doc["elements"]) {
        std::optional<LatLon> point;
        if (el.contains("lat") && el.contains("lon") && el["lat"].is_number() && el["lon"].is_number()) {
            point = LatLon{el["lat"].get<double>(), el["lon"].get<double>()};
        } else if (el.contains("center") && el["center"].is_object()) {
            const auto& c = el["center"];
            if (c.contains("lat") && c.contains("lon") && c["lat"].is_number() && c["lon"].is_number()) {
                point = LatLon{c["lat"].get<double>(), c["lon"].get<double>()};
            }
        }
        if (!point) {
            ++result.skipped_no_coordinates;
            continue;
        }
        if (within && !within->contains(*point)) {
            ++result.skipped_outside_bbox;
            continue;
        }
        InstallationSite site;
        std::string type = el.value("type", std::string("node"));
        std::string id = el.contains("id") ? el["id"].dump() : std::to_string(result.sites.size());
        site.site_id = type + "/" + id;
        site.point = *point;
        if (el.contains("tags") && el["tags"].is_object()) {
            for (auto it = el["tags"].begin(); it != el["tags"].end(); ++it) {
                if (it.value().is_string()) site.source_tags[it.key()] = it.value().get<std::string>();
            }
        }
        result.sites.push_back(std::move(site));
    }
    return result;
}

std::vector<InstallationSite> sample_sites(const std::vector<InstallationSite>& sites, std::size_t k,
                                           std::uint64_t seed) {
    if (k > sites.size()) {
        throw Error(Errc::insufficient_sites, "requested " + std::to_string(k) + " sites but only " +
                                                  std::to_string(sites.size()) + " available");
    }
    std::vector<std::size_t> idx(sites.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::mt19937_64 rng(seed);
    for (std::size_t i = 0; i < k; ++i) {
        std::size_t j = i + bounded_draw(rng, idx.size() - i);
        std::swap(idx[i], idx[j]);
    }
    idx.resize(k);
    std::sort(idx.begin(), idx.end());
    std::vector<InstallationSite> out;
    out.reserve(k);
    for (std::size_t i : idx) out.push_back(sites[i]);
    return out;
}

std::vector<RegionSpec> default_regions() {
    return {
        {"Seattle, WA", {47.495, -122.435, 47.734, -122.236}, 50},
        {"Orlando, FL", {28.347, -81.507, 28.614, -81.227}, 50},
        {"Osage Beach, MO", {38.105, -92.698, 38.186, -92.573}, 50},
        {"Harlem, NY", {40.797, -73.959, 40.834, -73.928}, 50},
        {"Tempe, AZ", {33.320, -111.979, 33.450, -111.877}, 50},
        {"Santa Ana, CA", {33.683, -117.943, 33.777, -117.826}, 50},
    };
}

json to_json(const RegionSpec& region) {
    const auto& b = region.bbox;
    return json{{"name", region.name},
                {"bbox", {b.min_lat, b.min_lon, b.max_lat, b.max_lon}},
                {"sample_target", region.sample_target}};
}

RegionSpec region_from_json(const json& j) {
    RegionSpec r;
    try {
        r.name = j.at("name").get<std::string>();
        const auto& bb = j.at("bbox");
        if (!bb.is_array() || bb.size() != 4) throw Error(Errc::invalid_region, "bbox must have 4 numbers");
        r.bbox = {bb[0].get<double>(), bb[1].get<double>(), bb[2].get<double>(), bb[3].get<double>()};
        r.sample_target = j.at("sample_target").get<int>();
    } catch (const json::exception& e) {
        throw Error(Errc::invalid_region, std::string("bad region record: ") + e.what());
    }
    validate_region(r);
    return r;
}

std::vector<RegionSpec> load_regions(const std::filesystem::path& path) {
    std::vector<RegionSpec> out;
    for (const auto& j : read_jsonl(path)) out.push_back(region_from_json(j));
    return out;
}

void save_regions(const std::filesystem::path& path, const std::vector<RegionSpec>& regions) {
    std::vector<json> lines;
    for (const auto& r : regions) lines.push_back(to_json(r));
    write_jsonl_atomic(path, lines);
}

json to_json(const InstallationSite& site) {
    return json{{"site_id", site.site_id},
                {"lat", site.point.lat},
                {"lon", site.point.lon},
                {"tags", site.source_tags}};
}

InstallationSite site_from_json(const json& j) {
    InstallationSite s;
    s.site_id = j.at("site_id").get<std::string>();
    s.point = {j.at("lat").get<double>(), j.at("lon").get<double>()};
    if (j.contains("tags")) s.source_tags = j["tags"].get<std::map<std::string, std::string>>();
    return s;
}

}  // namespace pvscan
