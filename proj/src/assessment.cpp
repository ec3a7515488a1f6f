#include "pvscan/assessment.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>

#include "pvscan/error.hpp"

namespace pvscan {

using nlohmann::json;

std::string_view to_string(Errc code) {
    switch (code) {
        case Errc::precondition: return "Precondition";
        case Errc::no_such_label: return "NoSuchLabel";
        case Errc::invalid_region: return "InvalidRegion";
        case Errc::malformed_response: return "MalformedResponse";
        case Errc::insufficient_sites: return "InsufficientSites";
        case Errc::auth_error: return "AuthError";
        case Errc::rate_limited: return "RateLimited";
        case Errc::decode_error: return "DecodeError";
        case Errc::encode_error: return "EncodeError";
        case Errc::invalid_spec: return "InvalidSpec";
        case Errc::out_of_range: return "OutOfRange";
        case Errc::not_enough_examples: return "NotEnoughExamples";
        case Errc::backend_unavailable: return "BackendUnavailable";
        case Errc::replay_miss: return "ReplayMiss";
        case Errc::alignment_error: return "AlignmentError";
        case Errc::empty_evaluation: return "EmptyEvaluation";
        case Errc::empty_subset: return "EmptySubset";
        case Errc::length_mismatch: return "LengthMismatch";
        case Errc::empty_class: return "EmptyClass";
        case Errc::not_found: return "NotFound";
        case Errc::already_resolved: return "AlreadyResolved";
        case Errc::too_few_labels: return "TooFewLabels";
        case Errc::missing_tile: return "MissingTile";
        case Errc::missing_label: return "MissingLabel";
        case Errc::io_error: return "IoError";
        case Errc::invalid_argument: return "InvalidArgument";
        case Errc::locked: return "Locked";
    }
    return "Unknown";
}

std::string_view to_string(Location loc) {
    switch (loc) {
        case Location::top: return "top";
        case Location::bottom: return "bottom";
        case Location::left: return "left";
        case Location::right: return "right";
        case Location::center: return "center";
        case Location::top_left: return "top-left";
        case Location::top_right: return "top-right";
        case Location::bottom_left: return "bottom-left";
        case Location::bottom_right: return "bottom-right";
        case Location::na: return "NA";
    }
    return "NA";
}

std::string_view to_string(Quantity q) {
    switch (q) {
        case Quantity::zero_to_one: return "0 to 1";
        case Quantity::one_to_five: return "1 to 5";
        case Quantity::five_to_ten: return "5 to 10";
        case Quantity::ten_plus: return "10 to inf";
        case Quantity::na: return "NA";
    }
    return "NA";
}

std::optional<Location> location_from_canonical(std::string_view s) {
    for (Location loc : kAllLocations) {
        if (to_string(loc) == s) return loc;
    }
    return std::nullopt;
}

std::optional<Quantity> quantity_from_canonical(std::string_view s) {
    for (Quantity q : kAllQuantities) {
        if (to_string(q) == s) return q;
    }
    return std::nullopt;
}

namespace {

std::string_view trim(std::string_view s) {
    auto is_space = [](char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; };
    while (!s.empty() && is_space(s.front())) s.remove_prefix(1);
    while (!s.empty() && is_space(s.back())) s.remove_suffix(1);
    return s;
}

std::string lower(std::string_view s) {
    std::string out(s);
    std::transform(out.begin(), out.end(), out.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return out;
}

// Lowercased, trimmed, internal whitespace runs collapsed to one space.
std::string squeeze(std::string_view s) {
    std::string out;
    bool pending_space = false;
    for (char c : trim(s)) {
        if (std::isspace(static_cast<unsigned char>(c))) {
            pending_space = true;
            continue;
        }
        if (pending_space && !out.empty()) out.push_back(' ');
        pending_space = false;
        out.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    }
    return out;
}

std::string excerpt(std::string_view raw) {
    constexpr std::size_t kMax = 240;
    return std::string(raw.substr(0, kMax));
}

}  // namespace

Location canonicalize_location(std::string_view raw) {
    std::string s = lower(trim(raw));
    for (char& c : s) {
        if (c == ' ' || c == '_') c = '-';
    }
    if (s == "na") return Location::na;
    if (auto loc = location_from_canonical(s)) return *loc;
    throw Error(Errc::no_such_label, "no such location label: '" + std::string(raw) + "'");
}

Quantity bucket_for_count(std::uint64_t n) {
    if (n <= 1) return Quantity::zero_to_one;
    if (n <= 5) return Quantity::one_to_five;
    if (n <= 10) return Quantity::five_to_ten;
    return Quantity::ten_plus;
}

std::optional<std::string> label_violation(bool present, Location loc, Quantity q) {
    if (!present) {
        if (loc != Location::na) return "solar_panels_present is false but location is not NA";
        if (q != Quantity::na) return "solar_panels_present is false but quantity is not NA";
    } else {
        if (loc == Location::na) return "solar_panels_present is true but location is NA";
        if (q == Quantity::na) return "solar_panels_present is true but quantity is NA";
    }
    return std::nullopt;
}

std::optional<std::string> assessment_violation(const PvAssessment& a) {
    if (!(a.likelihood >= 0.0 && a.likelihood <= 1.0)) return "likelihood outside [0, 1]";
    if (!(a.confidence >= 0.0 && a.confidence <= 1.0)) return "confidence outside [0, 1]";
    return label_violation(a.present, a.location, a.quantity);
}

GroundTruthLabel label_from_assessment(const std::string& tile_id, const PvAssessment& a,
                                       std::string annotator, std::string annotated_at) {
    return GroundTruthLabel{tile_id,   a.present,           a.location,
                            a.quantity, std::move(annotator), std::move(annotated_at)};
}

bool same_label(const GroundTruthLabel& a, const GroundTruthLabel& b) {
    return a.present == b.present && a.location == b.location && a.quantity == b.quantity;
}

std::string_view to_string(ParseStatus s) {
    switch (s) {
        case ParseStatus::ok: return "ok";
        case ParseStatus::repaired: return "repaired";
        case ParseStatus::rejected: return "rejected";
    }
    return "rejected";
}

std::optional<ParseStatus> parse_status_from(std::string_view s) {
    if (s == "ok") return ParseStatus::ok;
    if (s == "repaired") return ParseStatus::repaired;
    if (s == "rejected") return ParseStatus::rejected;
    return std::nullopt;
}

std::optional<std::string_view> find_first_json_object(std::string_view text) {
    std::size_t start = text.find('{');
    while (start != std::string_view::npos) {
        int depth = 0;
        bool in_string = false;
        bool escaped = false;
        std::size_t end = std::string_view::npos;
        for (std::size_t i = start; i < text.size(); ++i) {
            char c = text[i];
            if (in_string) {
                if (escaped) {
                    escaped = false;
                } else if (c == '\\') {
                    escaped = true;
                } else if (c == '"') {
                    in_string = false;
                }
                continue;
            }
            if (c == '"') {
                in_string = true;
            } else if (c == '{') {
                ++depth;
            } else if (c == '}') {
                if (--depth == 0) {
                    end = i;
                    break;
                }
            }
        }
        if (end == std::string_view::npos) return std::nullopt;
        std::string_view candidate = text.substr(start, end - start + 1);
        if (json::accept(candidate)) return candidate;
        start = text.find('{', start + 1);
    }
    return std::nullopt;
}

namespace {

struct FieldReader {
    ParseMode mode;
    std::vector<std::string>& warnings;

    bool repaired = false;

    void warn(std::string msg) {
        warnings.push_back(std::move(msg));
        repaired = true;
    }

    // Each reader returns nullopt (with `why` set) when the value is unusable.
    std::optional<bool> boolean(const json& v, std::string& why) {
        if (v.is_boolean()) return v.get<bool>();
        if (mode == ParseMode::lenient && v.is_string()) {
            std::string s = squeeze(v.get<std::string>());
            if (s == "true" || s == "false") {
                warn(std::string(field::present) + " given as string; coerced to boolean");
                return s == "true";
            }
        }
        why = std::string(field::present) + " must be a boolean";
        return std::nullopt;
    }

    std::optional<Location> location(const json& v, std::string& why) {
        if (!v.is_string()) {
            why = "location must be a string";
            return std::nullopt;
        }
        const auto& s = v.get_ref<const std::string&>();
        if (auto loc = location_from_canonical(s)) return loc;
        if (mode == ParseMode::lenient) {
            try {
                Location loc = canonicalize_location(s);
                warn("location '" + s + "' normalized to '" + std::string(to_string(loc)) + "'");
                return loc;
            } catch (const Error&) {
            }
        }
        why = "location '" + s + "' is not in the label vocabulary";
        return std::nullopt;
    }

    std::optional<Quantity> quantity(const json& v, std::string& why) {
        if (v.is_string()) {
            const auto& s = v.get_ref<const std::string&>();
            if (auto q = quantity_from_canonical(s)) return q;
            if (mode == ParseMode::lenient) {
                std::string norm = squeeze(s);
                if (norm == "na") norm = "NA";
                if (auto q = quantity_from_canonical(norm)) {
                    warn("quantity '" + s + "' normalized to '" + norm + "'");
                    return q;
                }
            }
            why = "quantity '" + s + "' is not in the bucket vocabulary";
            return std::nullopt;
        }
        if (mode == ParseMode::lenient && v.is_number_unsigned()) {
            auto n = v.get<std::uint64_t>();
            Quantity q = bucket_for_count(n);
            warn("quantity given as count " + std::to_string(n) + "; bucketed to '" +
                 std::string(to_string(q)) + "'");
            return q;
        }
        why = "quantity must be a string bucket";
        return std::nullopt;
    }

    std::optional<double> unit_real(const json& v, const char* name, std::string& why) {
        std::optional<double> value;
        if (v.is_number()) {
            value = v.get<double>();
        } else if (mode == ParseMode::lenient && v.is_string()) {
            const auto& s = v.get_ref<const std::string&>();
            char* end = nullptr;
            double d = std::strtod(s.c_str(), &end);
            if (end != s.c_str() && *end == '\0') {
                warn(std::string(name) + " given as string; coerced to number");
                value = d;
            }
        }
        if (!value) {
            why = std::string(name) + " must be a number";
            return std::nullopt;
        }
        if (!std::isfinite(*value) || *value < 0.0 || *value > 1.0) {
            why = std::string(name) + " must lie in [0, 1]";
            return std::nullopt;
        }
        return value;
    }
};

ParseOutcome rejected(std::string excerpt_text, std::string why, std::vector<std::string> warnings) {
    ParseOutcome out;
    out.status = ParseStatus::rejected;
    out.raw_excerpt = std::move(excerpt_text);
    out.diagnostic = std::move(why);
    out.warnings = std::move(warnings);
    return out;
}

}  // namespace

ParseOutcome parse_model_response(std::string_view raw, ParseMode mode) {
    auto object_text = find_first_json_object(raw);
    if (!object_text) return rejected(excerpt(raw), "no JSON object found in response", {});

    std::string ex = excerpt(*object_text);
    json obj = json::parse(*object_text);

    std::vector<std::string> warnings;
    FieldReader reader{mode, warnings};

    static const std::array<const char*, 5> kFields = {field::present, field::location, field::quantity,
                                                       field::likelihood, field::confidence};
    for (const char* name : kFields) {
        if (!obj.contains(name)) return rejected(ex, std::string("missing field '") + name + "'", warnings);
    }
    for (auto it = obj.begin(); it != obj.end(); ++it) {
        bool known = std::find_if(kFields.begin(), kFields.end(),
                                  [&](const char* f) { return it.key() == f; }) != kFields.end();
        if (known) continue;
        if (mode == ParseMode::strict) return rejected(ex, "unexpected field '" + it.key() + "'", warnings);
        reader.warn("ignored unexpected field '" + it.key() + "'");
    }

    std::string why;
    auto present = reader.boolean(obj[field::present], why);
    if (!present) return rejected(ex, why, warnings);
    auto loc = reader.location(obj[field::location], why);
    if (!loc) return rejected(ex, why, warnings);
    auto qty = reader.quantity(obj[field::quantity], why);
    if (!qty) return rejected(ex, why, warnings);
    auto likelihood = reader.unit_real(obj[field::likelihood], field::likelihood, why);
    if (!likelihood) return rejected(ex, why, warnings);
    auto confidence = reader.unit_real(obj[field::confidence], field::confidence, why);
    if (!confidence) return rejected(ex, why, warnings);

    PvAssessment a{*present, *loc, *qty, *likelihood, *confidence};

    if (!a.present && (a.location != Location::na || a.quantity != Quantity::na)) {
        if (mode == ParseMode::strict) return rejected(ex, *label_violation(a.present, a.location, a.quantity), warnings);
        if (a.location != Location::na) {
            reader.warn("location '" + std::string(to_string(a.location)) +
                        "' coerced to NA because solar_panels_present is false");
            a.location = Location::na;
        }
        if (a.quantity != Quantity::na) {
            reader.warn("quantity '" + std::string(to_string(a.quantity)) +
                        "' coerced to NA because solar_panels_present is false");
            a.quantity = Quantity::na;
        }
    }
    // A positive verdict without a location or bucket cannot be repaired.
    if (auto v = label_violation(a.present, a.location, a.quantity)) return rejected(ex, *v, warnings);

    ParseOutcome out;
    out.status = reader.repaired ? ParseStatus::repaired : ParseStatus::ok;
    out.assessment = a;
    out.warnings = std::move(warnings);
    out.raw_excerpt = std::move(ex);
    return out;
}

std::string serialize_assessment(const PvAssessment& a) {
    char buf[320];
    std::snprintf(buf, sizeof buf,
                  "{\"%s\": %s, \"%s\": \"%s\", \"%s\": \"%s\", \"%s\": %.2f, \"%s\": %.2f}",
                  field::present, a.present ? "true" : "false", field::location,
                  std::string(to_string(a.location)).c_str(), field::quantity,
                  std::string(to_string(a.quantity)).c_str(), field::likelihood, a.likelihood,
                  field::confidence, a.confidence);
    return buf;
}

json assessment_to_json(const PvAssessment& a) { return json::parse(serialize_assessment(a)); }

void parse_label_fields(const json& body, bool& present, Location& loc, Quantity& q) {
    if (!body.is_object()) throw Error(Errc::invalid_argument, "label body must be a JSON object");
    for (const char* name : {field::present, field::location, field::quantity}) {
        if (!body.contains(name)) throw Error(Errc::invalid_argument, std::string("missing field '") + name + "'");
    }
    const json& p = body[field::present];
    if (!p.is_boolean()) throw Error(Errc::invalid_argument, "solar_panels_present must be a boolean");
    const json& l = body[field::location];
    const json& qq = body[field::quantity];
    if (!l.is_string()) throw Error(Errc::invalid_argument, "location must be a string");
    if (!qq.is_string()) throw Error(Errc::invalid_argument, "quantity must be a string");
    auto parsed_loc = location_from_canonical(l.get<std::string>());
    if (!parsed_loc) {
        throw Error(Errc::invalid_argument, "location '" + l.get<std::string>() + "' is not in the label vocabulary");
    }
    auto parsed_q = quantity_from_canonical(qq.get<std::string>());
    if (!parsed_q) {
        throw Error(Errc::invalid_argument, "quantity '" + qq.get<std::string>() + "' is not in the bucket vocabulary");
    }
    if (auto v = label_violation(p.get<bool>(), *parsed_loc, *parsed_q)) throw Error(Errc::invalid_argument, *v);
    present = p.get<bool>();
    loc = *parsed_loc;
    q = *parsed_q;
}

json to_json(const GroundTruthLabel& label) {
    json j;
    j["tile_id"] = label.tile_id;
    j[field::present] = label.present;
    j[field::location] = std::string(to_string(label.location));
    j[field::quantity] = std::string(to_string(label.quantity));
    j["annotator"] = label.annotator;
    j["annotated_at"] = label.annotated_at;
    return j;
}

GroundTruthLabel label_from_json(const json& j) {
    GroundTruthLabel label;
    if (!j.is_object() || !j.contains("tile_id") || !j["tile_id"].is_string()) {
        throw Error(Errc::invalid_argument, "label record needs a string tile_id");
    }
    label.tile_id = j["tile_id"].get<std::string>();
    parse_label_fields(j, label.present, label.location, label.quantity);
    label.annotator = j.value("annotator", std::string("unknown"));
    label.annotated_at = j.value("annotated_at", std::string());
    return label;
}

json to_json(const ParseOutcome& outcome) {
    json j;
    j["status"] = std::string(to_string(outcome.status));
    j["assessment"] = outcome.assessment ? assessment_to_json(*outcome.assessment) : json(nullptr);
    j["warnings"] = outcome.warnings;
    j["raw_excerpt"] = outcome.raw_excerpt;
    if (!outcome.diagnostic.empty()) j["diagnostic"] = outcome.diagnostic;
    return j;
}

ParseOutcome parse_outcome_from_json(const json& j) {
    ParseOutcome out;
    auto status = parse_status_from(j.at("status").get<std::string>());
    if (!status) throw Error(Errc::invalid_argument, "unknown parse status");
    out.status = *status;
    if (j.contains("assessment") && !j["assessment"].is_null()) {
        auto inner = parse_model_response(j["assessment"].dump(), ParseMode::strict);
        if (!inner.assessment) throw Error(Errc::invalid_argument, "stored assessment invalid: " + inner.diagnostic);
        out.assessment = inner.assessment;
    }
    out.warnings = j.value("warnings", std::vector<std::string>{});
    out.raw_excerpt = j.value("raw_excerpt", std::string());
    out.diagnostic = j.value("diagnostic", std::string());
    return out;
}

}  // namespace pvscan
