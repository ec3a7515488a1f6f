#pragma once

#include <cstdint>
#include <map>
#include <numeric>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "pvscan/assessment.hpp"
#include "pvscan/evaluation.hpp"

// Brute-force evaluation oracle kept independent of the library: counts come
// from a per-outcome tally and ratios are reduced by gcd before one division.
namespace pvscan::oracle {

struct Fraction {
    long long num = 0;
    long long den = 1;
};

inline Fraction reduce(long long num, long long den) {
    if (den == 0) return {0, 1};
    long long g = std::gcd(num, den);
    return g == 0 ? Fraction{0, 1} : Fraction{num / g, den / g};
}

inline double value(const Fraction& f) { return static_cast<double>(f.num) / static_cast<double>(f.den); }

struct Tally {
    std::map<std::pair<bool, bool>, long long> outcomes;  // (predicted, actual) -> count
    long long at(bool pred, bool truth) const {
        auto it = outcomes.find({pred, truth});
        return it == outcomes.end() ? 0 : it->second;
    }
};

inline Tally tally(const std::vector<EvalPair>& pairs) {
    Tally t;
    for (const auto& p : pairs) t.outcomes[{p.prediction.present, p.truth.present}] += 1;
    return t;
}

struct Expected {
    long long tp, fp, fn, tn;
    double weighted_precision, weighted_recall, weighted_f1;
    std::optional<double> loc_solar, loc_all, qty_solar, qty_all;
};

// Per-class precision, recall and F1 as fractions for the class treated as
// positive, where hit = predicted and actual, and so on.
inline std::vector<Fraction> class_fractions(long long hit, long long false_alarm, long long miss) {
    Fraction p = reduce(hit, hit + false_alarm);
    Fraction r = reduce(hit, hit + miss);
    // Harmonic mean of p and r as an exact fraction.
    Fraction f{0, 1};
    if (p.num != 0 && r.num != 0) {
        long long num = 2 * p.num * r.num;
        long long den = p.num * r.den + r.num * p.den;
        f = reduce(num, den);
    }
    return {p, r, f};
}

inline Fraction mix(const Fraction& a, long long wa, const Fraction& b, long long wb) {
    long long num = wa * a.num * b.den + wb * b.num * a.den;
    long long den = a.den * b.den * (wa + wb);
    return reduce(num, den);
}

inline std::optional<double> match_rate(const std::vector<EvalPair>& pairs, bool location, bool solar_only) {
    long long seen = 0, hits = 0;
    for (const auto& p : pairs) {
        if (solar_only && !p.truth.present) continue;
        ++seen;
        hits += location ? (to_string(p.prediction.location) == to_string(p.truth.location))
                         : (to_string(p.prediction.quantity) == to_string(p.truth.quantity));
    }
    if (seen == 0) return std::nullopt;
    return value(reduce(hits, seen));
}

inline Expected expected(const std::vector<EvalPair>& pairs) {
    Tally t = tally(pairs);
    Expected e{};
    e.tp = t.at(true, true);
    e.fp = t.at(true, false);
    e.fn = t.at(false, true);
    e.tn = t.at(false, false);
    auto solar = class_fractions(e.tp, e.fp, e.fn);
    auto none = class_fractions(e.tn, e.fn, e.fp);
    long long ws = e.tp + e.fn, wn = e.tn + e.fp;
    e.weighted_precision = value(mix(solar[0], ws, none[0], wn));
    e.weighted_recall = value(mix(solar[1], ws, none[1], wn));
    e.weighted_f1 = value(mix(solar[2], ws, none[2], wn));
    e.loc_solar = match_rate(pairs, true, true);
    e.loc_all = match_rate(pairs, true, false);
    e.qty_solar = match_rate(pairs, false, true);
    e.qty_all = match_rate(pairs, false, false);
    return e;
}

// A random aligned prediction/truth set whose labels respect the
// presence/NA consistency rule.
inline std::vector<EvalPair> random_pairs(std::mt19937_64& rng, std::size_t n) {
    auto label = [&](bool present, Location& loc, Quantity& q) {
        if (!present) {
            loc = Location::na;
            q = Quantity::na;
            return;
        }
        loc = kAllLocations[rng() % 9];
        q = kAllQuantities[rng() % 4];
    };
    // Skewed class balance per set so degenerate and lopsided cases appear.
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    double p_truth = unit(rng);
    double p_flip = unit(rng) * 0.5;
    std::vector<EvalPair> out;
    for (std::size_t i = 0; i < n; ++i) {
        EvalPair p;
        p.tile_id = "t" + std::to_string(i);
        p.truth.tile_id = p.tile_id;
        p.truth.present = unit(rng) < p_truth;
        label(p.truth.present, p.truth.location, p.truth.quantity);
        p.prediction.present = unit(rng) < p_flip ? !p.truth.present : p.truth.present;
        label(p.prediction.present, p.prediction.location, p.prediction.quantity);
        if (p.prediction.present && p.truth.present && unit(rng) < 0.7) {
            p.prediction.location = p.truth.location;
            p.prediction.quantity = p.truth.quantity;
        }
        p.prediction.likelihood = unit(rng);
        p.prediction.confidence = unit(rng);
        out.push_back(p);
    }
    return out;
}

}  // namespace pvscan::oracle
