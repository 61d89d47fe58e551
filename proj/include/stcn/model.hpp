#pragma once

#include <map>
#include <string>
#include <vector>

#include "stcn/dag.hpp"
#include "stcn/node_fit.hpp"
#include "stcn/panel_io.hpp"
#include "stcn/parallel.hpp"

namespace stcn {

struct Provenance {
    std::uint64_t dataset_hash = 0;
    double c = 0.0;
    std::uint64_t seed = 0;
    std::uint64_t config_hash = 0;
};

// A two-slice DAG plus one fitted regression per node.
struct CausalModel {
    TwoSliceDag dag;
    std::map<std::string, NodeEstimate> estimates;
    std::vector<VariableSpec> variables;
    std::vector<Location> locations;
    Provenance provenance;

    const NodeEstimate& estimate(const std::string& node) const {
        auto it = estimates.find(node);
        if (it == estimates.end()) fail(ErrorKind::UnfittedNode, "node '" + node + "' has no estimate");
        return it->second;
    }

    bool is_static(const std::string& node) const {
        for (const auto& v : variables)
            if (v.name == node) return v.is_static;
        return false;
    }

    const VariableSpec* variable(const std::string& node) const {
        for (const auto& v : variables)
            if (v.name == node) return &v;
        return nullptr;
    }

    void validate() const {
        for (const auto& n : dag.nodes()) {
            const auto& e = estimate(n);
            auto parents = dag.parents(n);
            auto ep = e.parents;
            std::sort(ep.begin(), ep.end());
            if (parents != ep) fail(ErrorKind::SchemaMismatch, "estimate parents of '" + n + "' differ from the DAG");
        }
        if (!dag.is_acyclic()) fail(ErrorKind::InvalidArgument, "model DAG has a contemporaneous cycle");
    }
};

inline CausalModel fit_model(const TwoSliceDag& dag, const PanelDataset& ds, const FitConfig& cfg = {},
                             unsigned threads = 1) {
    CausalModel m;
    m.dag = dag;
    m.variables = ds.variables();
    m.locations = ds.locations();
    m.provenance.dataset_hash = ds.hash();
    const DistanceMatrix dist(ds.locations());
    std::vector<NodeEstimate> fits(dag.nodes().size());
    parallel_for(fits.size(), threads, [&](std::size_t i) {
        const auto& n = dag.nodes()[i];
        fits[i] = fit_node(ds, dist, n, dag.parents(n), cfg);
    });
    for (auto& f : fits) m.estimates[f.node] = std::move(f);
    return m;
}

inline Json to_json(const TwoSliceDag& dag) {
    Json intra = Json::array(), inter = Json::array();
    for (const auto& a : dag.arcs()) (a.lagged ? inter : intra).push_back({a.from, a.to});
    return {{"nodes", dag.nodes()}, {"intra", intra}, {"inter", inter}};
}

inline TwoSliceDag dag_from_json(const Json& j) {
    TwoSliceDag dag(j.at("nodes").get<std::vector<std::string>>());
    for (const auto& a : j.value("intra", Json::array())) dag.add({a.at(0).get<std::string>(), a.at(1).get<std::string>(), false});
    for (const auto& a : j.value("inter", Json::array())) dag.add({a.at(0).get<std::string>(), a.at(1).get<std::string>(), true});
    return dag;
}

inline Json to_json(const KernelParams& k) { return {{"range_km", k.range_km}, {"nugget", k.nugget}}; }

inline Json to_json(const NodeEstimate& e) {
    Json parents = Json::array();
    for (const auto& p : e.parents) parents.push_back(p.label());
    return {{"node", e.node},
            {"parents", parents},
            {"intercept", e.intercept},
            {"intercept_se", e.intercept_se},
            {"coefficients", e.coefficients},
            {"std_errors", e.std_errors},
            {"kernel", e.kernel ? to_json(*e.kernel) : Json(nullptr)},
            {"group_variances", e.group_variances},
            {"n_used", e.n_used},
            {"loglik_avg", e.loglik_avg},
            {"converged", e.converged},
            {"iterations", e.iterations}};
}

inline NodeEstimate estimate_from_json(const Json& j) {
    NodeEstimate e;
    e.node = j.at("node").get<std::string>();
    for (const auto& p : j.at("parents")) e.parents.push_back(ParentTerm::parse(p.get<std::string>()));
    e.intercept = j.at("intercept").get<double>();
    e.intercept_se = j.value("intercept_se", 0.0);
    e.coefficients = j.at("coefficients").get<std::map<std::string, double>>();
    e.std_errors = j.value("std_errors", std::map<std::string, double>{});
    if (!j.at("kernel").is_null())
        e.kernel = KernelParams{j.at("kernel").at("range_km").get<double>(), j.at("kernel").at("nugget").get<double>()};
    e.group_variances = j.at("group_variances").get<std::map<std::string, double>>();
    e.n_used = j.value("n_used", std::size_t{0});
    e.loglik_avg = j.value("loglik_avg", 0.0);
    e.converged = j.value("converged", true);
    e.iterations = j.value("iterations", 0);
    for (const auto& p : e.parents)
        if (!e.coefficients.count(p.label())) fail(ErrorKind::SchemaMismatch, "missing coefficient " + p.label());
    return e;
}

inline std::string hex64(std::uint64_t x) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(x));
    return buf;
}

inline std::uint64_t parse_hex64(const std::string& s) { return std::stoull(s, nullptr, 16); }

inline Json to_json(const CausalModel& m) {
    Json est = Json::object();
    for (const auto& [n, e] : m.estimates) est[n] = to_json(e);
    Json vars = Json::array();
    for (const auto& v : m.variables) vars.push_back(to_json(v));
    Json locs = Json::array();
    for (const auto& l : m.locations) locs.push_back(to_json(l));
    return {{"format", "stcn.causal_model/1"},
            {"variables", vars},
            {"dag", to_json(m.dag)},
            {"estimates", est},
            {"locations", locs},
            {"provenance",
             {{"dataset_hash", hex64(m.provenance.dataset_hash)},
              {"c", m.provenance.c},
              {"seed", m.provenance.seed},
              {"config_hash", hex64(m.provenance.config_hash)}}},
            {"score_convention", "pnal = mean loglik over locally complete rows - c*log(n)/2*params/n_used; "
                                 "BF = exp(sum_i n_used_i * pnal_i difference)"}};
}

inline CausalModel model_from_json(const Json& j) {
    CausalModel m;
    for (const auto& v : j.at("variables")) m.variables.push_back(variable_from_json(v));
    m.dag = dag_from_json(j.at("dag"));
    for (const auto& [n, e] : j.at("estimates").items()) m.estimates[n] = estimate_from_json(e);
    for (const auto& l : j.value("locations", Json::array())) m.locations.push_back(location_from_json(l));
    if (j.contains("provenance")) {
        const auto& p = j.at("provenance");
        m.provenance.dataset_hash = parse_hex64(p.value("dataset_hash", std::string("0")));
        m.provenance.c = p.value("c", 0.0);
        m.provenance.seed = p.value("seed", std::uint64_t{0});
        m.provenance.config_hash = parse_hex64(p.value("config_hash", std::string("0")));
    }
    m.validate();
    return m;
}

} // namespace stcn
