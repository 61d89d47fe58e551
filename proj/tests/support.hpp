#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "stcn/stcn.hpp"

namespace testsupport {

using namespace stcn;

// Five-node two-slice network: weather drives one pollutant, pollutants drive
// two conditions, conditions carry autoregression.
inline GeneratorSpec five_node_spec(std::uint64_t seed, std::size_t locations = 30, std::size_t weeks = 150,
                                    double missing = 0.1) {
    GeneratorSpec s;
    s.n_locations = locations;
    s.n_weeks = weeks;
    s.missing_rate = missing;
    s.seed = seed;
    s.groups = {"A", "B", "C"};
    s.variables = {{"W", Tier::weather, false},
                   {"P1", Tier::pollutant, false},
                   {"P2", Tier::pollutant, false},
                   {"C1", Tier::condition, false},
                   {"C2", Tier::condition, false}};
    s.dag = TwoSliceDag({"W", "P1", "P2", "C1", "C2"});
    s.dag.add({"W", "W", true});
    s.dag.add({"W", "P1", false});
    s.dag.add({"P1", "C1", false});
    s.dag.add({"C1", "C1", true});
    s.dag.add({"C2", "C2", true});
    s.dag.add({"P2", "C2", true});
    s.dag.add({"C1", "C2", false});
    const KernelParams k{150.0, 0.3};
    s.nodes["W"] = {0.0, {{"W@t-1", 0.5}}, k, 1.0, {}};
    s.nodes["P1"] = {1.0, {{"W@t", 0.8}}, k, 1.0, {}};
    s.nodes["P2"] = {0.0, {}, k, 1.0, {}};
    s.nodes["C1"] = {0.0, {{"P1@t", 0.6}, {"C1@t-1", 0.4}}, k, 1.0, {{"A", 0.5}, {"C", 2.0}}};
    s.nodes["C2"] = {0.0, {{"C2@t-1", 0.4}, {"P2@t-1", 0.7}, {"C1@t", 0.5}}, k, 1.0, {}};
    return s;
}

// Single-node spec: y = mu + phi * y@t-1 + e.
inline GeneratorSpec ar1_spec(std::uint64_t seed, double phi, std::size_t locations, std::size_t weeks,
                              std::optional<KernelParams> kernel = std::nullopt) {
    GeneratorSpec s;
    s.n_locations = locations;
    s.n_weeks = weeks;
    s.seed = seed;
    s.variables = {{"Y", Tier::condition, false}};
    s.dag = TwoSliceDag({"Y"});
    if (phi != 0.0) s.dag.add({"Y", "Y", true});
    NodeSpec ns;
    ns.intercept = 2.0;
    if (phi != 0.0) ns.coefficients["Y@t-1"] = phi;
    ns.kernel = kernel;
    s.nodes["Y"] = ns;
    return s;
}

// Complete panel from a generator of values f(l, w, v).
template <class F>
PanelDataset grid_panel(std::size_t L, std::size_t W, const std::vector<VariableSpec>& vars, F f) {
    std::vector<Location> locs;
    for (std::size_t l = 0; l < L; ++l) {
        char id[16];
        std::snprintf(id, sizeof id, "S%03zu", l);
        locs.push_back({id, 35.0 + 0.37 * static_cast<double>(l % 7), -100.0 + 0.53 * static_cast<double>(l), l % 2 ? "odd" : "even"});
    }
    std::vector<Date> weeks;
    for (std::size_t w = 0; w < W; ++w) weeks.push_back(Date::parse("2022-01-03").plus_days(7 * static_cast<long>(w)));
    std::vector<double> vals(L * W * vars.size());
    std::vector<std::uint8_t> mask(vals.size(), 0);
    for (std::size_t l = 0; l < L; ++l)
        for (std::size_t w = 0; w < W; ++w)
            for (std::size_t v = 0; v < vars.size(); ++v) vals[(l * W + w) * vars.size() + v] = f(l, w, v);
    return PanelDataset(locs, weeks, vars, vals, mask);
}

inline double sample_corr(const std::vector<double>& a, const std::vector<double>& b) {
    double ma = 0, mb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        ma += a[i];
        mb += b[i];
    }
    ma /= static_cast<double>(a.size());
    mb /= static_cast<double>(b.size());
    double sab = 0, saa = 0, sbb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        sab += (a[i] - ma) * (b[i] - mb);
        saa += (a[i] - ma) * (a[i] - ma);
        sbb += (b[i] - mb) * (b[i] - mb);
    }
    return sab / std::sqrt(saa * sbb);
}

} // namespace testsupport
