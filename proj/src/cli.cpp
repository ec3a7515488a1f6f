#include "pvscan/cli.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <cstdlib>
#include <iostream>
#include <random>
#include <set>

#include "pvscan/autolabel.hpp"
#include "pvscan/error.hpp"
#include "pvscan/evaluation.hpp"
#include "pvscan/finetune.hpp"
#include "pvscan/geo.hpp"
#include "pvscan/imagery.hpp"
#include "pvscan/inference.hpp"
#include "pvscan/map_client.hpp"
#include "pvscan/prompting.hpp"
#include "pvscan/service.hpp"
#include "pvscan/store.hpp"

namespace pvscan::cli {

using nlohmann::json;

json default_config() {
    return json::parse(R"({
  "ingest": {"overpass_url": "https://overpass-api.de/api/interpreter", "timeout_s": 60, "seed": 0, "regions": ""},
  "fetch": {"zoom": 20, "size": 640, "base_url": "https://maps.googleapis.com", "path": "/maps/api/staticmap",
            "map_type": "satellite", "api_key_env": "MAPS_API_KEY"},
  "predict": {"backend": "mock", "k": 5, "temperature": 0.0, "parallelism": 1, "endpoint": "", "model_id": "",
              "credential_env": "LLM_API_KEY", "max_retries": 5, "fixtures_dir": "", "record_dir": "",
              "image_style": "data-url", "template": "", "examples": "", "include_example_images": false},
  "evaluate": {"by_region": false, "reject_as_negative": false, "include_auto": false},
  "triage": {"confidence_threshold": 0.8, "likelihood_margin": 0.1},
  "export": {"ratio": 0.8, "seed": 0, "stratified": true, "image_style": "data-url", "include_auto": true},
  "serve": {"host": "127.0.0.1", "port": 8080, "static_dir": ""}
})");
}

std::string slug(const std::string& name) {
    std::string out;
    bool dash = false;
    for (unsigned char c : name) {
        if (std::isalnum(c)) {
            if (dash && !out.empty()) out.push_back('-');
            out.push_back(static_cast<char>(std::tolower(c)));
            dash = false;
        } else {
            dash = true;
        }
    }
    return out.empty() ? "region" : out;
}

namespace {

// Config file keys must already exist in the defaults, with a compatible type.
void merge_checked(json& base, const json& overlay, const std::string& where) {
    if (!overlay.is_object()) throw Error(Errc::invalid_argument, "config " + where + " must be an object");
    for (auto it = overlay.begin(); it != overlay.end(); ++it) {
        const std::string key = where.empty() ? it.key() : where + "." + it.key();
        if (!base.contains(it.key())) throw Error(Errc::invalid_argument, "unknown config key '" + key + "'");
        json& slot = base[it.key()];
        if (slot.is_object()) {
            merge_checked(slot, it.value(), key);
        } else if ((slot.is_number() && it.value().is_number()) || slot.type() == it.value().type()) {
            slot = it.value();
        } else {
            throw Error(Errc::invalid_argument, "config key '" + key + "' has the wrong type");
        }
    }
}

struct Context {
    DataDir dir;
    json config;
    std::ostream& out;
    std::ostream& err;
};

void raise_for_status(const HttpResponse& r, const std::string& what) {
    if (r.status >= 200 && r.status < 300) return;
    const std::string detail = r.status == 0 ? r.error : "HTTP " + std::to_string(r.status);
    if (r.status == 401 || r.status == 403) throw Error(Errc::auth_error, what + " rejected: " + detail);
    if (r.status == 429) throw Error(Errc::rate_limited, what + " still rate limited: " + detail);
    throw Error(Errc::backend_unavailable, what + " failed: " + detail);
}

std::string run_id() {
    std::random_device rd;
    std::uint64_t r = (static_cast<std::uint64_t>(rd()) << 32) ^ rd();
    auto now = std::chrono::system_clock::now().time_since_epoch().count();
    return sha256_hex(std::to_string(now) + ":" + std::to_string(r)).substr(0, 16);
}

std::string payload_for(const DataDir& dir, const TileRecord& t) {
    return base64_encode(read_binary(dir.root() / t.path));
}

std::map<std::string, InferenceRecord> latest_records(const DataDir& dir) {
    std::map<std::string, InferenceRecord> out;
    if (!fs::exists(dir.journal())) return out;
    for (const auto& j : read_jsonl(dir.journal(), true)) {
        InferenceRecord r = inference_record_from_json(j);
        out[r.tile_id] = std::move(r);
    }
    return out;
}

// Rewrites a manifest keyed by `key`, replacing records with the same key in place.
void upsert_manifest(const fs::path& path, const std::vector<json>& fresh, const char* key) {
    std::vector<json> lines;
    if (fs::exists(path)) lines = read_jsonl(path);
    std::map<std::string, std::size_t> pos;
    for (std::size_t i = 0; i < lines.size(); ++i) pos[lines[i].at(key).get<std::string>()] = i;
    for (const auto& j : fresh) {
        const std::string id = j.at(key).get<std::string>();
        auto it = pos.find(id);
        if (it != pos.end()) {
            lines[it->second] = j;
        } else {
            pos[id] = lines.size();
            lines.push_back(j);
        }
    }
    write_jsonl_atomic(path, lines);
}

// Appends labels, skipping any identical to the tile's current effective label.
std::size_t append_labels(const DataDir& dir, const std::vector<GroundTruthLabel>& labels) {
    auto current = dir.effective_labels(true);
    std::size_t written = 0;
    for (const auto& l : labels) {
        auto it = current.find(l.tile_id);
        if (it != current.end() && same_label(it->second, l) && it->second.annotator == l.annotator) continue;
        append_jsonl(dir.labels(), to_json(l));
        current[l.tile_id] = l;
        ++written;
    }
    return written;
}

std::vector<TileRecord> write_tiles(const DataDir& dir, const SceneImage& scene, const std::string& region) {
    std::vector<TileRecord> out;
    for (const auto& tile : slice_scene(scene)) {
        const fs::path png = dir.tile_png(tile.scene_id, tile.row, tile.col);
        write_binary_atomic(png, encode_png(tile.raster));
        out.push_back({tile.tile_id, tile.scene_id, tile.row, tile.col, tile.raster.width, tile.raster.height,
                       region, fs::relative(png, dir.root()).generic_string()});
    }
    return out;
}

SceneRecord write_scene(const DataDir& dir, const SceneImage& scene) {
    const fs::path png = dir.scene_png(scene.scene_id);
    if (!fs::exists(png)) write_binary_atomic(png, encode_png(scene.raster));
    return {scene.scene_id, scene.center,      scene.zoom,       scene.raster.width, scene.raster.height,
            scene.region_name, scene.fetched_at, fs::relative(png, dir.root()).generic_string()};
}

// ---- stages ----

json cmd_ingest(Context& ctx) {
    const json& c = ctx.config["ingest"];
    std::vector<RegionSpec> regions =
        c["regions"].get<std::string>().empty() ? default_regions() : load_regions(c["regions"].get<std::string>());
    auto transport = make_http_transport(std::chrono::seconds(c["timeout_s"].get<int>() + 30));
    SiteQueryOptions qopts;
    qopts.timeout_s = c["timeout_s"].get<int>();
    const auto seed = c["seed"].get<std::uint64_t>();

    std::vector<json> lines;
    json per_region = json::array();
    for (const auto& region : regions) {
        validate_region(region);
        HttpRequest req;
        req.method = "POST";
        req.url = c["overpass_url"].get<std::string>();
        req.content_type = "application/x-www-form-urlencoded";
        req.body = "data=" + url_encode(build_site_query(region, qopts));
        RetryOutcome got = send_with_retry(*transport, req, RetryPolicy{}, real_sleeper(), seed);
        raise_for_status(got.response, "site query for " + region.name);
        SiteParseResult parsed = parse_site_response(got.response.body, region.bbox);
        const std::size_t k = std::min<std::size_t>(static_cast<std::size_t>(region.sample_target), parsed.sites.size());
        if (k < static_cast<std::size_t>(region.sample_target)) {
            ctx.err << "warning: " << region.name << " has only " << parsed.sites.size() << " sites (target "
                    << region.sample_target << ")\n";
        }
        for (const auto& site : sample_sites(parsed.sites, k, seed)) {
            json j = to_json(site);
            j["region"] = region.name;
            lines.push_back(std::move(j));
        }
        per_region.push_back({{"region", region.name},
                              {"found", parsed.sites.size()},
                              {"sampled", k},
                              {"skipped_no_coordinates", parsed.skipped_no_coordinates},
                              {"skipped_outside_bbox", parsed.skipped_outside_bbox},
                              {"attempts", got.attempts}});
    }
    write_jsonl_atomic(ctx.dir.sites(), lines);
    return json{{"sites", lines.size()}, {"regions", std::move(per_region)}};
}

json cmd_fetch(Context& ctx) {
    const json& c = ctx.config["fetch"];
    if (!fs::exists(ctx.dir.sites())) throw Error(Errc::not_found, "no sites.jsonl; run ingest first");
    MapClientConfig mc;
    mc.base_url = c["base_url"];
    mc.path = c["path"];
    mc.map_type = c["map_type"];
    mc.api_key_env = c["api_key_env"];
    mc.cache_dir = ctx.dir.map_cache();
    MapClient client(mc, make_http_transport());

    std::vector<json> records;
    std::size_t failures = 0;
    json failed = json::array();
    const auto sites = read_jsonl(ctx.dir.sites());
    for (const auto& j : sites) {
        InstallationSite site = site_from_json(j);
        SceneRequest req{site.point, c["zoom"].get<int>(), c["size"].get<int>(), j.value("region", std::string())};
        try {
            SceneImage scene = client.fetch_scene(req);
            records.push_back(to_json(write_scene(ctx.dir, scene)));
        } catch (const Error& e) {
            if (e.code() == Errc::auth_error || e.code() == Errc::precondition) throw;
            ++failures;
            failed.push_back({{"site_id", site.site_id}, {"error", std::string(to_string(e.code())) + ": " + e.what()}});
        }
    }
    upsert_manifest(ctx.dir.scene_manifest(), records, "scene_id");
    return json{{"sites", sites.size()},
                {"scenes", records.size()},
                {"network_calls", client.network_calls()},
                {"retries", client.retries()},
                {"failures", failures},
                {"failed", std::move(failed)}};
}

json cmd_slice(Context& ctx) {
    std::vector<json> lines;
    const auto scenes = ctx.dir.load_scenes();
    for (const auto& rec : scenes) {
        SceneImage scene;
        scene.scene_id = rec.scene_id;
        scene.center = rec.center;
        scene.zoom = rec.zoom;
        scene.region_name = rec.region;
        scene.raster = decode_png(read_binary(ctx.dir.root() / rec.path));
        for (const auto& t : write_tiles(ctx.dir, scene, rec.region)) lines.push_back(to_json(t));
    }
    write_jsonl_atomic(ctx.dir.tile_manifest(), lines);
    return json{{"scenes", scenes.size()}, {"tiles", lines.size()}};
}

json cmd_labels_import(Context& ctx, const std::string& file) {
    std::vector<GroundTruthLabel> labels;
    std::size_t line = 0;
    for (const auto& j : read_jsonl(file)) {
        ++line;
        try {
            GroundTruthLabel l = label_from_json(j);
            if (!j.contains("annotator")) l.annotator = "import";
            if (l.annotated_at.empty()) l.annotated_at = utc_now_iso();
            labels.push_back(std::move(l));
        } catch (const std::exception& e) {
            throw Error(Errc::invalid_argument, file + " record " + std::to_string(line) + ": " + e.what());
        }
    }
    auto index = ctx.dir.tile_index();
    std::size_t unknown = 0;
    for (const auto& l : labels) unknown += index.count(l.tile_id) ? 0 : 1;
    if (unknown) ctx.err << "warning: " << unknown << " labels refer to tiles not in the manifest\n";
    const std::size_t written = append_labels(ctx.dir, labels);
    return json{{"records", labels.size()}, {"written", written}, {"unchanged", labels.size() - written},
                {"unknown_tiles", unknown}};
}

json cmd_predict(Context& ctx, std::size_t limit) {
    const json& c = ctx.config["predict"];
    BackendConfig bc;
    auto kind = backend_kind_from(c["backend"].get<std::string>());
    if (!kind) throw Error(Errc::invalid_argument, "unknown backend '" + c["backend"].get<std::string>() + "'");
    bc.kind = *kind;
    bc.endpoint = c["endpoint"];
    bc.model_id = c["model_id"];
    bc.credential_env = c["credential_env"];
    bc.max_retries = c["max_retries"];
    bc.retry.max_attempts = bc.max_retries;
    bc.parallelism = c["parallelism"];
    bc.fixtures_dir = c["fixtures_dir"].get<std::string>();
    bc.record_dir = c["record_dir"].get<std::string>();
    auto style = image_style_from(c["image_style"]);
    if (!style) throw Error(Errc::invalid_argument, "unknown image style '" + c["image_style"].get<std::string>() + "'");
    bc.image_style = *style;
    validate(bc);

    const PromptTemplate tmpl = c["template"].get<std::string>().empty() ? default_template()
                                                                         : load_template(c["template"].get<std::string>());
    const auto examples = c["examples"].get<std::string>().empty()
                              ? default_example_bank()
                              : load_example_bank(c["examples"].get<std::string>());
    const auto k = c["k"].get<std::size_t>();
    BatchOptions opts;
    opts.parallelism = bc.parallelism;
    opts.journal = ctx.dir.journal();
    opts.prompt.temperature = c["temperature"];
    opts.prompt.include_example_images = c["include_example_images"];

    auto tiles = ctx.dir.load_tiles();
    if (tiles.empty()) throw Error(Errc::not_found, "no tiles in the manifest; run slice or synth first");
    if (limit > 0 && tiles.size() > limit) tiles.resize(limit);
    auto done = latest_records(ctx.dir);
    std::vector<TileInput> todo;
    std::size_t current = 0;
    for (const auto& t : tiles) {
        std::string payload = payload_for(ctx.dir, t);
        auto it = done.find(t.tile_id);
        if (it != done.end() && it->second.error.empty() && it->second.backend_kind == bc.kind &&
            it->second.bundle_hash == assemble_prompt(tmpl, examples, k, payload, opts.prompt).bundle_hash) {
            ++current;
            continue;
        }
        todo.push_back({t.tile_id, std::move(payload)});
    }

    auto backend = make_backend(bc);
    BatchResult res = run_batch(*backend, todo, tmpl, examples, k, opts);
    if (!todo.empty() && res.backend_failures == todo.size()) {
        throw Error(Errc::backend_unavailable, "every request failed; first error: " + res.records.front().error);
    }
    return json{{"tiles", tiles.size()},      {"current", current},           {"ran", todo.size()},
                {"ok", res.ok},               {"repaired", res.repaired},     {"rejected", res.rejected},
                {"backend_failures", res.backend_failures}, {"backend", std::string(to_string(bc.kind))},
                {"k", k},                     {"template_version", tmpl.version}};
}

json cmd_evaluate(Context& ctx) {
    const json& c = ctx.config["evaluate"];
    const bool by_region = c["by_region"];
    const bool reject_as_negative = c["reject_as_negative"];
    auto truths = ctx.dir.effective_labels(c["include_auto"].get<bool>());
    auto records = latest_records(ctx.dir);
    auto tiles = ctx.dir.load_tiles();

    std::map<std::string, std::vector<EvalPair>> groups;
    std::map<std::string, std::int64_t> excluded;
    std::vector<EvalPair> all;
    std::int64_t excluded_all = 0, missing_predictions = 0;
    std::vector<InferenceRecord> usable;
    for (const auto& t : tiles) {
        auto truth = truths.find(t.tile_id);
        if (truth == truths.end()) continue;
        auto rec = records.find(t.tile_id);
        if (rec == records.end()) {
            ++missing_predictions;
            continue;
        }
        const std::string region = t.region.empty() ? "Unassigned" : t.region;
        std::optional<PvAssessment> pred = rec->second.outcome.usable() ? rec->second.outcome.assessment : std::nullopt;
        if (!pred && reject_as_negative) pred = PvAssessment{};
        if (!pred) {
            ++excluded[region];
            ++excluded_all;
            continue;
        }
        EvalPair p{t.tile_id, *pred, truth->second};
        groups[region].push_back(p);
        all.push_back(std::move(p));
        if (rec->second.outcome.usable()) usable.push_back(rec->second);
    }
    if (all.empty()) throw Error(Errc::empty_evaluation, "no tile has both a label and a usable prediction");

    fs::create_directories(ctx.dir.reports_dir());
    auto write = [&](const MetricsReport& r, const std::string& name) {
        write_text_atomic(ctx.dir.reports_dir() / (name + ".csv"), render_report(r, ReportFormat::csv));
        write_text_atomic(ctx.dir.reports_dir() / (name + ".json"), render_report(r, ReportFormat::json));
    };
    MetricsReport overall = build_report("All Regions", all, excluded_all);
    write(overall, "all");
    json latest = to_json(overall);
    latest["by_region"] = json::array();
    json summary_regions = json::array();
    if (by_region) {
        for (const auto& [region, pairs] : groups) {
            MetricsReport r = build_report(region, pairs, excluded[region]);
            write(r, slug(region));
            latest["by_region"].push_back(to_json(r));
            summary_regions.push_back({{"region", region},
                                       {"pairs", pairs.size()},
                                       {"weighted_f1", r.weighted.f1},
                                       {"report", "reports/" + slug(region) + ".csv"}});
        }
    }
    write_text_atomic(ctx.dir.reports_dir() / "latest.json", latest.dump(2) + "\n");

    json summary{{"pairs", all.size()},
                 {"excluded_rejected", excluded_all},
                 {"missing_predictions", missing_predictions},
                 {"weighted_f1", overall.weighted.f1},
                 {"solar_f1", overall.solar.f1},
                 {"no_solar_f1", overall.no_solar.f1},
                 {"location_accuracy_solar", overall.location_accuracy_solar ? json(*overall.location_accuracy_solar)
                                                                             : json(nullptr)},
                 {"calibration_bce", overall.calibration_bce},
                 {"regions", std::move(summary_regions)}};
    try {
        DistributionSummary dist = likelihood_summary(usable, truths);
        write_text_atomic(ctx.dir.analytics(), to_json(dist).dump(2) + "\n");
        summary["median_likelihood_true"] = dist.median_likelihood_true;
        summary["median_likelihood_false"] = dist.median_likelihood_false;
    } catch (const Error& e) {
        if (e.code() != Errc::empty_class) throw;
        ctx.err << "warning: likelihood summary skipped: " << e.what() << "\n";
    }
    return summary;
}

json cmd_triage(Context& ctx, bool include_labeled) {
    TriageConfig cfg = triage_config_from_json(ctx.config["triage"]);
    auto records_by_tile = latest_records(ctx.dir);
    auto human = ctx.dir.effective_labels(false);
    std::vector<InferenceRecord> records;
    std::size_t skipped_human = 0;
    for (auto& [id, r] : records_by_tile) {
        if (!include_labeled && human.count(id)) {
            ++skipped_human;
            continue;
        }
        records.push_back(r);
    }
    TriageResult res = triage_batch(records, cfg);

    // Auto labels are recomputed on every run; identical ones keep their timestamp.
    std::map<std::string, GroundTruthLabel> previous_auto;
    std::vector<json> kept;
    if (fs::exists(ctx.dir.labels())) {
        for (const auto& j : read_jsonl(ctx.dir.labels(), true)) {
            if (j.value("annotator", std::string()) == "auto") {
                auto l = label_from_json(j);
                previous_auto[l.tile_id] = l;
            } else {
                kept.push_back(j);
            }
        }
    }
    for (auto& l : res.accepted) {
        auto it = previous_auto.find(l.tile_id);
        if (it != previous_auto.end() && same_label(it->second, l)) l.annotated_at = it->second.annotated_at;
        kept.push_back(to_json(l));
    }
    write_jsonl_atomic(ctx.dir.labels(), kept);

    ReviewStore store(ctx.dir);
    store.merge_queue(res.queue);
    write_text_atomic(ctx.dir.triage_config(), to_json(cfg).dump(2) + "\n");
    std::size_t rejected = 0;
    for (const auto& i : res.queue) rejected += i.prediction ? 0 : 1;
    return json{{"records", records.size()},
                {"auto_accepted", res.accepted.size()},
                {"queued", res.queue.size()},
                {"queued_rejected", rejected},
                {"skipped_human_labeled", skipped_human},
                {"pending", store.pending().size()},
                {"config", to_json(cfg)}};
}

json cmd_export(Context& ctx, const std::string& out_dir) {
    const json& c = ctx.config["export"];
    auto style = image_style_from(c["image_style"]);
    if (!style) throw Error(Errc::invalid_argument, "unknown image style '" + c["image_style"].get<std::string>() + "'");
    auto index = ctx.dir.tile_index();
    auto truths = ctx.dir.effective_labels(c["include_auto"].get<bool>());
    std::vector<GroundTruthLabel> labels;
    std::map<std::string, std::string> payloads;
    std::size_t skipped = 0;
    for (const auto& [id, l] : truths) {
        auto t = index.find(id);
        if (t == index.end()) {
            ++skipped;
            continue;
        }
        labels.push_back(l);
        payloads[id] = payload_for(ctx.dir, t->second);
    }
    const auto seed = c["seed"].get<std::uint64_t>();
    DatasetSplit split = split_dataset(labels, c["ratio"].get<double>(), seed, c["stratified"].get<bool>());
    const fs::path dir = out_dir.empty() ? ctx.dir.export_dir() : fs::path(out_dir);
    const PromptTemplate tmpl = ctx.config["predict"]["template"].get<std::string>().empty()
                                    ? default_template()
                                    : load_template(ctx.config["predict"]["template"].get<std::string>());
    ExportOptions eo{*style};
    const std::size_t n_train = export_jsonl(split.train_ids, payloads, truths, tmpl, dir / "train.jsonl", eo);
    const std::size_t n_test = export_jsonl(split.test_ids, payloads, truths, tmpl, dir / "test.jsonl", eo);
    ValidationReport vt = validate_jsonl(dir / "train.jsonl");
    ValidationReport vs = validate_jsonl(dir / "test.jsonl");
    if (vt.valid != vt.lines || vs.valid != vs.lines) {
        throw Error(Errc::io_error, "exported files failed validation: " + to_json(vt).dump() + " " + to_json(vs).dump());
    }
    std::size_t positives = 0;
    for (const auto& id : split.train_ids) positives += truths.at(id).present ? 1 : 0;
    json manifest{{"seed", seed},
                  {"ratio", split.ratio},
                  {"stratified", split.stratified},
                  {"image_style", c["image_style"]},
                  {"template_version", tmpl.version},
                  {"counts", {{"train", n_train}, {"test", n_test}, {"train_positive", positives}}},
                  {"train_sha256", sha256_hex(std::string_view(read_text(dir / "train.jsonl")))},
                  {"test_sha256", sha256_hex(std::string_view(read_text(dir / "test.jsonl")))},
                  {"split", to_json(split)}};
    write_text_atomic(dir / "manifest.json", manifest.dump(2) + "\n");
    return json{{"train", n_train},
                {"test", n_test},
                {"skipped_without_tile", skipped},
                {"valid", vt.valid + vs.valid},
                {"out_dir", dir.string()},
                {"template_version", tmpl.version}};
}

std::uint64_t scene_seed(std::uint64_t seed, std::size_t region, std::size_t scene) {
    std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (region * 4096 + scene + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

json cmd_synth(Context& ctx, const std::string& spec_path, std::uint64_t seed) {
    json spec = json::parse(read_text(spec_path), nullptr, false);
    if (spec.is_discarded() || !spec.is_object()) throw Error(Errc::invalid_spec, "synth spec is not a JSON object");
    SynthOptions base;
    base.tile_px = spec.value("tile_px", 128);
    base.shadows = spec.value("shadows", true);
    const double empty_fraction = spec.value("empty_fraction", 0.35);
    const int max_panels = spec.value("max_panels", 12);

    struct Job {
        std::string region;
        std::vector<std::vector<PanelRect>> layouts;
        std::uint64_t seed;
    };
    std::vector<Job> jobs;
    if (spec.contains("regions")) {
        std::size_t r = 0;
        for (const auto& reg : spec["regions"]) {
            const std::string name = reg.at("name").get<std::string>();
            const int scenes = reg.at("scenes").get<int>();
            if (scenes < 1) throw Error(Errc::invalid_spec, "region '" + name + "' needs at least one scene");
            for (int s = 0; s < scenes; ++s) {
                std::uint64_t ss = scene_seed(seed, r, static_cast<std::size_t>(s));
                jobs.push_back({name, random_layouts(kTilesPerScene, empty_fraction, max_panels, ss), ss});
            }
            ++r;
        }
    }
    if (spec.contains("scenes")) {
        std::size_t s = 0;
        for (const auto& sc : spec["scenes"]) {
            Job job{sc.value("region", std::string("Synthetic")), {}, scene_seed(seed, 1u << 20, s++)};
            for (const auto& layout : sc.value("layouts", json::array())) {
                std::vector<PanelRect> rects;
                for (const auto& r : layout) rects.push_back(panel_rect_from_json(r));
                job.layouts.push_back(std::move(rects));
            }
            jobs.push_back(std::move(job));
        }
    }
    if (jobs.empty()) throw Error(Errc::invalid_spec, "synth spec defines no scenes");

    std::vector<json> scene_lines, tile_lines;
    std::vector<GroundTruthLabel> labels;
    std::size_t empty = 0;
    std::map<std::string, std::size_t> per_region;
    for (std::size_t i = 0; i < jobs.size(); ++i) {
        SynthOptions opts = base;
        opts.region_name = jobs[i].region;
        opts.center = {static_cast<double>(i % 90), static_cast<double>(i / 90)};
        SynthResult res = synthesize_scene(jobs[i].layouts, jobs[i].seed, opts);
        scene_lines.push_back(to_json(write_scene(ctx.dir, res.scene)));
        for (const auto& t : write_tiles(ctx.dir, res.scene, jobs[i].region)) {
            tile_lines.push_back(to_json(t));
            const SynthTileTruth& truth = res.truth.at(t.tile_id);
            GroundTruthLabel l{t.tile_id, truth.count > 0, truth.location, truth.quantity, "synth", "synthetic"};
            empty += l.present ? 0 : 1;
            labels.push_back(std::move(l));
            ++per_region[jobs[i].region];
        }
    }
    upsert_manifest(ctx.dir.scene_manifest(), scene_lines, "scene_id");
    upsert_manifest(ctx.dir.tile_manifest(), tile_lines, "tile_id");
    const std::size_t written = append_labels(ctx.dir, labels);
    return json{{"scenes", scene_lines.size()},
                {"tiles", tile_lines.size()},
                {"empty_tiles", empty},
                {"empty_fraction", static_cast<double>(empty) / static_cast<double>(tile_lines.size())},
                {"labels_written", written},
                {"tiles_per_region", per_region}};
}

int serve(Context& ctx) {
    const json& c = ctx.config["serve"];
    ServiceConfig sc;
    sc.host = c["host"];
    sc.port = c["port"];
    sc.static_dir = c["static_dir"].get<std::string>();
    ReviewService service(ctx.dir, sc);
    const int port = service.bind();
    ctx.out << json{{"listening", "http://" + sc.host + ":" + std::to_string(port)}, {"data_dir", ctx.dir.root().string()}}.dump()
            << std::endl;
    service.run();
    return 0;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Rooftop solar detection pipeline: ingest, imagery, prompting, evaluation and review.", "pvscan"};
    app.require_subcommand(1);
    std::string data_dir = ".";
    std::string config_path;
    app.add_option("--data-dir", data_dir, "Working directory holding manifests and images");
    app.add_option("--config", config_path, "Config file (default: <data-dir>/pvscan.json when present)");

    // Flags that override config keys, applied only when given.
    std::vector<std::function<void(json&)>> overrides;
    auto bind = [&overrides](CLI::App* sub, const std::string& flag, const char* section, const char* key,
                             auto* var, const std::string& help) {
        CLI::Option* opt = sub->add_option(flag, *var, help);
        overrides.push_back([opt, section, key, var](json& cfg) {
            if (opt->count() > 0) cfg[section][key] = *var;
        });
        return opt;
    };
    auto flag = [&overrides](CLI::App* sub, const std::string& name, const char* section, const char* key,
                             bool value, const std::string& help) {
        CLI::Option* opt = sub->add_flag(name, help);
        overrides.push_back([opt, section, key, value](json& cfg) {
            if (opt->count() > 0) cfg[section][key] = value;
        });
    };

    std::string s_regions, s_overpass, s_base_url, s_map_type, s_backend, s_endpoint, s_model, s_fixtures, s_record,
        s_style, s_template, s_examples, s_export_style, s_host, s_static, s_out;
    int i_timeout = 0, i_zoom = 0, i_size = 0, i_k = 0, i_parallel = 0, i_port = 0;
    std::uint64_t u_seed = 0, u_export_seed = 0, u_synth_seed = 0;
    double d_temp = 0, d_conf = 0, d_margin = 0, d_ratio = 0;
    std::size_t limit = 0;
    std::string labels_file, synth_spec;

    auto* ingest = app.add_subcommand("ingest", "Query known installations per region and sample sites");
    bind(ingest, "--regions", "ingest", "regions", &s_regions, "Region definitions (NDJSON)");
    bind(ingest, "--overpass-url", "ingest", "overpass_url", &s_overpass, "Overpass interpreter endpoint");
    bind(ingest, "--timeout", "ingest", "timeout_s", &i_timeout, "Query timeout in seconds");
    bind(ingest, "--seed", "ingest", "seed", &u_seed, "Sampling seed");

    auto* fetch = app.add_subcommand("fetch", "Download (or reuse cached) scenes for every sampled site");
    bind(fetch, "--zoom", "fetch", "zoom", &i_zoom, "Map zoom level");
    bind(fetch, "--size", "fetch", "size", &i_size, "Scene edge in pixels (multiple of 4)");
    bind(fetch, "--maps-url", "fetch", "base_url", &s_base_url, "Static map service origin");
    bind(fetch, "--map-type", "fetch", "map_type", &s_map_type, "Map type");

    auto* slice = app.add_subcommand("slice", "Cut every scene into a 4x4 tile grid");

    auto* labels = app.add_subcommand("labels", "Ground-truth label management");
    labels->require_subcommand(1);
    auto* labels_import = labels->add_subcommand("import", "Append labels from an NDJSON file");
    labels_import->add_option("file", labels_file, "Label records")->required();

    auto* predict = app.add_subcommand("predict", "Run the model over every tile and journal the responses");
    bind(predict, "--backend", "predict", "backend", &s_backend, "remote | replay | mock")
        ->check(CLI::IsMember({"remote", "replay", "mock"}));
    bind(predict, "--k", "predict", "k", &i_k, "Number of few-shot examples");
    bind(predict, "--temperature", "predict", "temperature", &d_temp, "Sampling temperature");
    bind(predict, "--parallelism", "predict", "parallelism", &i_parallel, "Concurrent requests");
    bind(predict, "--endpoint", "predict", "endpoint", &s_endpoint, "Chat completions URL (remote)");
    bind(predict, "--model", "predict", "model_id", &s_model, "Model identifier (remote)");
    bind(predict, "--fixtures", "predict", "fixtures_dir", &s_fixtures, "Recorded responses (replay)");
    bind(predict, "--record-dir", "predict", "record_dir", &s_record, "Save remote responses as fixtures");
    bind(predict, "--image-style", "predict", "image_style", &s_style, "data-url | base64-source");
    bind(predict, "--template", "predict", "template", &s_template, "Prompt template override (JSON)");
    bind(predict, "--examples", "predict", "examples", &s_examples, "Few-shot example bank (NDJSON)");
    flag(predict, "--include-example-images", "predict", "include_example_images", true,
         "Attach example images to the prompt");
    predict->add_option("--limit", limit, "Only the first N tiles (0 = all)");

    auto* evaluate = app.add_subcommand("evaluate", "Score the latest predictions against ground truth");
    flag(evaluate, "--by-region", "evaluate", "by_region", true, "Also write one report per region");
    flag(evaluate, "--reject-as-negative", "evaluate", "reject_as_negative", true,
         "Count unparseable responses as negative predictions instead of excluding them");
    flag(evaluate, "--include-auto", "evaluate", "include_auto", true, "Treat auto-accepted labels as ground truth");

    auto* triage_cmd = app.add_subcommand("triage", "Auto-accept confident predictions and queue the rest for review");
    bind(triage_cmd, "--confidence-threshold", "triage", "confidence_threshold", &d_conf, "Minimum confidence");
    bind(triage_cmd, "--likelihood-margin", "triage", "likelihood_margin", &d_margin,
         "Minimum distance of likelihood from 0.5");
    bool include_labeled = false;
    triage_cmd->add_flag("--include-labeled", include_labeled, "Also triage tiles that already carry a human label");

    auto* exp = app.add_subcommand("export-finetune", "Write train/test JSONL fine-tuning datasets");
    bind(exp, "--ratio", "export", "ratio", &d_ratio, "Training fraction in (0, 1)");
    bind(exp, "--seed", "export", "seed", &u_export_seed, "Split seed");
    bind(exp, "--image-style", "export", "image_style", &s_export_style, "data-url | base64-source");
    flag(exp, "--no-stratify", "export", "stratified", false, "Split without preserving the class ratio");
    flag(exp, "--human-only", "export", "include_auto", false, "Leave auto-accepted labels out");
    exp->add_option("--out", s_out, "Output directory (default: <data-dir>/finetune)");

    auto* synth = app.add_subcommand("synth", "Generate a synthetic labeled dataset");
    synth->add_option("--spec", synth_spec, "Synthesis spec (JSON)")->required();
    synth->add_option("--seed", u_synth_seed, "Generator seed");

    auto* serve_cmd = app.add_subcommand("serve", "Serve the review API and UI");
    bind(serve_cmd, "--port", "serve", "port", &i_port, "Listen port (0 = any free port)");
    bind(serve_cmd, "--host", "serve", "host", &s_host, "Listen address");
    bind(serve_cmd, "--static-dir", "serve", "static_dir", &s_static, "Review UI build directory");

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return 0;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return 0;
    } catch (const CLI::ParseError& e) {
        err << "usage error: " << e.what() << "\n\n";
        const CLI::App* failing = &app;
        for (auto* sub : app.get_subcommands()) failing = sub;
        err << failing->help();
        return 2;
    }

    std::string stage;
    try {
        DataDir dir{fs::path(data_dir)};
        fs::create_directories(dir.root());
        json config = default_config();
        fs::path cfg_file = config_path.empty() ? dir.config() : fs::path(config_path);
        if (!config_path.empty() || fs::exists(cfg_file)) {
            json file = json::parse(read_text(cfg_file), nullptr, false);
            if (file.is_discarded()) throw Error(Errc::invalid_argument, "config file is not valid JSON");
            merge_checked(config, file, "");
        }
        // Thresholds saved by the review service sit between the file and the flags.
        if (fs::exists(dir.triage_config())) {
            json saved = json::parse(read_text(dir.triage_config()), nullptr, false);
            if (saved.is_object()) {
                for (const char* key : {"confidence_threshold", "likelihood_margin"}) {
                    if (saved.contains(key) && saved[key].is_number()) config["triage"][key] = saved[key];
                }
            }
        }
        for (auto& f : overrides) f(config);

        Context ctx{dir, config, out, err};
        if (serve_cmd->parsed()) return serve(ctx);

        FileLock lock(dir.lock_file());
        json record{{"run_id", run_id()}, {"config", config}, {"started_at", utc_now_iso()}};
        json summary;
        try {
            if (ingest->parsed()) {
                stage = "ingest";
                summary = cmd_ingest(ctx);
            } else if (fetch->parsed()) {
                stage = "fetch";
                summary = cmd_fetch(ctx);
            } else if (slice->parsed()) {
                stage = "slice";
                summary = cmd_slice(ctx);
            } else if (labels_import->parsed()) {
                stage = "labels";
                summary = cmd_labels_import(ctx, labels_file);
            } else if (predict->parsed()) {
                stage = "predict";
                summary = cmd_predict(ctx, limit);
            } else if (evaluate->parsed()) {
                stage = "evaluate";
                summary = cmd_evaluate(ctx);
            } else if (triage_cmd->parsed()) {
                stage = "triage";
                summary = cmd_triage(ctx, include_labeled);
            } else if (exp->parsed()) {
                stage = "export";
                summary = cmd_export(ctx, s_out);
            } else if (synth->parsed()) {
                stage = "synth";
                summary = cmd_synth(ctx, synth_spec, u_synth_seed);
            }
        } catch (const Error& e) {
            record["stage"] = stage;
            record["finished_at"] = utc_now_iso();
            record["status"] = "failed";
            record["error"] = std::string(to_string(e.code())) + ": " + e.what();
            append_jsonl(dir.runs(), record);
            throw;
        }
        record["stage"] = stage;
        record["finished_at"] = utc_now_iso();
        record["status"] = "ok";
        record["counts"] = summary;
        append_jsonl(dir.runs(), record);
        summary["command"] = stage;
        summary["run_id"] = record["run_id"];
        out << summary.dump(2) << std::endl;
        return 0;
    } catch (const Error& e) {
        err << "error[" << to_string(e.code()) << "]: " << e.what() << "\n";
        return 1;
    } catch (const json::exception& e) {
        err << "error[" << to_string(Errc::invalid_argument) << "]: " << e.what() << "\n";
        return 1;
    } catch (const fs::filesystem_error& e) {
        err << "error[" << to_string(Errc::io_error) << "]: " << e.what() << "\n";
        return 1;
    }
}

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return run(args, std::cout, std::cerr);
}

}  // namespace pvscan::cli
