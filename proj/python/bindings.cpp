#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "pvscan/autolabel.hpp"
#include "pvscan/cli.hpp"
#include "pvscan/error.hpp"
#include "pvscan/evaluation.hpp"
#include "pvscan/finetune.hpp"
#include "pvscan/geo.hpp"
#include "pvscan/imagery.hpp"
#include "pvscan/inference.hpp"
#include "pvscan/prompting.hpp"

namespace py = pybind11;
using nlohmann::json;

namespace {

py::object to_py(const json& j) { return py::module_::import("json").attr("loads")(j.dump()); }

json from_py(const py::handle& obj) {
    return json::parse(py::module_::import("json").attr("dumps")(obj).cast<std::string>());
}

pvscan::PvAssessment assessment_from(const py::handle& obj) {
    auto outcome = pvscan::parse_model_response(from_py(obj).dump(), pvscan::ParseMode::strict);
    if (!outcome.assessment) throw pvscan::Error(pvscan::Errc::invalid_argument, outcome.diagnostic);
    return *outcome.assessment;
}

json metrics_json(const pvscan::ClassMetrics& m) {
    return json{{"precision", m.precision}, {"recall", m.recall},   {"f1", m.f1},
                {"accuracy", m.accuracy},   {"support", m.support}, {"degenerate", m.degenerate}};
}

pvscan::Raster raster_from(const py::bytes& png) {
    std::string s = png;
    return pvscan::decode_png(pvscan::as_bytes(s));
}

py::bytes png_bytes(const pvscan::Raster& r) {
    auto b = pvscan::encode_png(r);
    return py::bytes(reinterpret_cast<const char*>(b.data()), b.size());
}

}  // namespace

PYBIND11_MODULE(_pvscan, m) {
    m.doc() = "Rooftop solar detection pipeline core";

    static PyObject* error_type = nullptr;
    error_type = py::register_exception<pvscan::Error>(m, "PvscanError").ptr();
    py::register_exception_translator([](std::exception_ptr p) {
        try {
            if (p) std::rethrow_exception(p);
        } catch (const pvscan::Error& e) {
            // Keep the category visible to Python callers.
            PyErr_SetString(error_type, (std::string(pvscan::to_string(e.code())) + ": " + e.what()).c_str());
        }
    });

    m.def(
        "parse_model_response",
        [](const std::string& raw, bool strict) {
            return to_py(pvscan::to_json(
                pvscan::parse_model_response(raw, strict ? pvscan::ParseMode::strict : pvscan::ParseMode::lenient)));
        },
        py::arg("raw"), py::arg("strict") = false);

    m.def("serialize_assessment", [](const py::dict& a) { return pvscan::serialize_assessment(assessment_from(a)); });

    m.def("bucket_for_count", [](std::uint64_t n) { return std::string(pvscan::to_string(pvscan::bucket_for_count(n))); });

    m.def("region_for_centroid",
          [](double x, double y) { return std::string(pvscan::to_string(pvscan::region_for_centroid(x, y))); });

    m.def("f1_score", &pvscan::f1_score);

    m.def("class_metrics", [](std::int64_t tp, std::int64_t fp, std::int64_t fn, std::int64_t tn) {
        return to_py(metrics_json(pvscan::class_metrics(pvscan::ConfusionCounts{tp, fp, fn, tn})));
    });

    m.def("bce_loss", [](const std::vector<double>& probs, const std::vector<int>& labels) {
        return pvscan::bce_loss(probs, labels);
    });

    m.def(
        "render_report_from_rates",
        [](const std::string& region, const std::vector<double>& solar, const std::vector<double>& no_solar,
           const std::vector<double>& weighted) {
            auto rates = [](const std::vector<double>& v) {
                if (v.size() != 4) throw pvscan::Error(pvscan::Errc::invalid_argument, "rates need precision, recall, f1, accuracy");
                pvscan::ClassMetrics c;
                c.precision = v[0];
                c.recall = v[1];
                c.f1 = v[2];
                c.accuracy = v[3];
                return c;
            };
            pvscan::MetricsReport r;
            r.region = region;
            r.solar = rates(solar);
            r.no_solar = rates(no_solar);
            r.weighted = rates(weighted);
            return pvscan::render_report(r, pvscan::ReportFormat::csv);
        },
        py::arg("region"), py::arg("solar"), py::arg("no_solar"), py::arg("weighted"));

    m.def("build_site_query", [](const py::dict& region) {
        return pvscan::build_site_query(pvscan::region_from_json(from_py(region)));
    });

    m.def("parse_site_response", [](const std::string& payload) {
        json out = json::array();
        for (const auto& s : pvscan::parse_site_response(payload).sites) out.push_back(pvscan::to_json(s));
        return to_py(out);
    });

    m.def("default_regions", [] {
        json out = json::array();
        for (const auto& r : pvscan::default_regions()) out.push_back(pvscan::to_json(r));
        return to_py(out);
    });

    m.def("slice_png", [](const py::bytes& png) {
        pvscan::SceneImage scene;
        scene.raster = raster_from(png);
        scene.scene_id = pvscan::scene_id_for(scene.raster);
        py::list out;
        for (const auto& t : pvscan::slice_scene(scene)) {
            out.append(py::make_tuple(t.tile_id, t.row, t.col, png_bytes(t.raster)));
        }
        return out;
    });

    m.def(
        "synthesize_random_scene",
        [](std::uint64_t seed, int tile_px, double empty_fraction, int max_panels) {
            auto layouts = pvscan::random_layouts(pvscan::kTilesPerScene, empty_fraction, max_panels, seed);
            pvscan::SynthOptions opts;
            opts.tile_px = tile_px;
            auto res = pvscan::synthesize_scene(layouts, seed, opts);
            json truth = json::object();
            for (const auto& [id, t] : res.truth) {
                truth[id] = {{"count", t.count},
                             {"location", std::string(pvscan::to_string(t.location))},
                             {"quantity", std::string(pvscan::to_string(t.quantity))}};
            }
            return py::make_tuple(png_bytes(res.scene.raster), to_py(truth));
        },
        py::arg("seed"), py::arg("tile_px") = 128, py::arg("empty_fraction") = 0.35, py::arg("max_panels") = 12);

    m.def("mock_assess", [](const py::bytes& png) {
        return to_py(pvscan::assessment_to_json(pvscan::mock_oracle_assess(raster_from(png))));
    });

    m.def(
        "triage",
        [](const py::dict& a, double threshold, double margin) {
            pvscan::TriageConfig cfg{threshold, margin};
            pvscan::validate(cfg);
            return pvscan::triage(assessment_from(a), cfg) == pvscan::TriageDecision::auto_accept ? "auto_accept"
                                                                                                  : "review";
        },
        py::arg("assessment"), py::arg("confidence_threshold") = 0.8, py::arg("likelihood_margin") = 0.1);

    m.def("gaussian_kde", [](const std::vector<double>& samples) {
        auto g = pvscan::gaussian_kde(samples);
        return to_py(json{{"x", g.x}, {"density", g.density}, {"bandwidth", g.bandwidth},
                          {"integral", pvscan::trapezoid_integral(g)}});
    });

    m.def("system_prompt", [](std::size_t k) {
        auto bundle = pvscan::assemble_prompt(pvscan::default_template(), pvscan::default_example_bank(), k, "");
        return pvscan::system_text(bundle);
    }, py::arg("k") = 5);

    m.def("validate_jsonl", [](const std::string& path) { return to_py(pvscan::to_json(pvscan::validate_jsonl(path))); });

    m.def(
        "run_cli",
        [](const std::vector<std::string>& args) {
            std::ostringstream out, err;
            int code;
            {
                py::gil_scoped_release release;
                code = pvscan::cli::run(args, out, err);
            }
            return py::make_tuple(code, out.str(), err.str());
        },
        py::arg("args"));
}
