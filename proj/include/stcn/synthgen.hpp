#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include "stcn/model.hpp"
#include "stcn/rng.hpp"
#include "stcn/spatial.hpp"

namespace stcn {

struct NodeSpec {
    double intercept = 0.0;
    std::map<std::string, double> coefficients; // ParentTerm label -> value
    std::optional<KernelParams> kernel;
    double variance = 1.0;                       // default for groups not listed
    std::map<std::string, double> group_variances;
};

enum class MissingMechanism { mcar };

struct GeneratorSpec {
    std::size_t n_locations = 30;
    std::size_t n_weeks = 100;
    std::vector<VariableSpec> variables;
    TwoSliceDag dag;
    std::map<std::string, NodeSpec> nodes;
    std::vector<std::string> groups{"G1"};
    double lat_min = 35.0, lat_max = 41.0;
    double lon_min = -100.0, lon_max = -92.0;
    double missing_rate = 0.0;
    MissingMechanism mechanism = MissingMechanism::mcar;
    std::size_t burn_in = 100;
    Date start = Date::parse("2021-01-04");
    std::uint64_t seed = 1;
};

struct GeneratedPanel {
    PanelDataset data;     // with missingness applied
    PanelDataset complete; // before missingness
    CausalModel truth;
};

namespace detail {

inline double node_variance(const NodeSpec& ns, const std::string& group) {
    auto it = ns.group_variances.find(group);
    return it != ns.group_variances.end() ? it->second : ns.variance;
}

// Reduced-form lag-1 transition over dynamic nodes: x_t = (I - A0)^{-1} A1 x_{t-1} + ...
inline Eigen::MatrixXd lag_transition(const TwoSliceDag& dag, const std::map<std::string, NodeSpec>& nodes,
                                      const std::vector<std::string>& dynamic) {
    const auto n = static_cast<Eigen::Index>(dynamic.size());
    Eigen::MatrixXd A0 = Eigen::MatrixXd::Zero(n, n), A1 = Eigen::MatrixXd::Zero(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const auto& ns = nodes.at(dynamic[i]);
        for (const auto& p : dag.parents(dynamic[i])) {
            auto it = std::find(dynamic.begin(), dynamic.end(), p.variable);
            if (it == dynamic.end()) continue;
            const auto j = static_cast<Eigen::Index>(it - dynamic.begin());
            (p.lag == 0 ? A0 : A1)(i, j) = ns.coefficients.at(p.label());
        }
    }
    return (Eigen::MatrixXd::Identity(n, n) - A0).lu().solve(A1);
}

} // namespace detail

inline double spectral_radius(const Eigen::MatrixXd& m) {
    if (m.size() == 0) return 0.0;
    Eigen::EigenSolver<Eigen::MatrixXd> es(m, false);
    return es.eigenvalues().cwiseAbs().maxCoeff();
}

inline void validate_spec(const GeneratorSpec& spec) {
    if (spec.n_locations == 0 || spec.n_weeks == 0) fail(ErrorKind::InvalidArgument, "generator needs locations and weeks");
    if (!(spec.missing_rate >= 0.0 && spec.missing_rate < 1.0)) fail(ErrorKind::InvalidRate, "missing_rate must lie in [0, 1)");
    if (spec.groups.empty()) fail(ErrorKind::InvalidArgument, "generator needs at least one group");
    if (!spec.dag.is_acyclic()) fail(ErrorKind::InvalidArgument, "generator DAG has a contemporaneous cycle");
    for (const auto& n : spec.dag.nodes()) {
        auto it = spec.nodes.find(n);
        if (it == spec.nodes.end()) fail(ErrorKind::InvalidArgument, "no parameters for node '" + n + "'");
        const auto parents = spec.dag.parents(n);
        if (parents.size() != it->second.coefficients.size())
            fail(ErrorKind::InvalidArgument, "coefficients of '" + n + "' do not match its parents");
        for (const auto& p : parents)
            if (!it->second.coefficients.count(p.label()))
                fail(ErrorKind::InvalidArgument, "missing coefficient " + p.label() + " for '" + n + "'");
        if (it->second.kernel) it->second.kernel->validate();
        for (const auto& g : spec.groups)
            if (!(detail::node_variance(it->second, g) > 0.0))
                fail(ErrorKind::InvalidArgument, "variances must be positive");
    }
    for (const auto& v : spec.variables)
        if (!spec.dag.has_node(v.name)) fail(ErrorKind::InvalidArgument, "variable '" + v.name + "' is not a DAG node");
    if (spec.variables.size() != spec.dag.nodes().size())
        fail(ErrorKind::InvalidArgument, "every DAG node needs a variable spec");
    std::vector<std::string> dynamic;
    for (const auto& v : spec.variables)
        if (!v.is_static) dynamic.push_back(v.name);
    if (spectral_radius(detail::lag_transition(spec.dag, spec.nodes, dynamic)) >= 1.0)
        fail(ErrorKind::UnstableSpec, "lag-1 dynamics have spectral radius >= 1");
}

// MCAR overlay on every cell.
inline PanelDataset inject_missing(const PanelDataset& ds, double rate,
                                   MissingMechanism mechanism = MissingMechanism::mcar, std::uint64_t seed = 0) {
    (void)mechanism;
    if (!(rate >= 0.0 && rate < 1.0)) fail(ErrorKind::InvalidRate, "missing rate must lie in [0, 1)");
    if (rate == 0.0) return ds;
    NormalSource src(make_stream(seed, 0x6d697373ULL));
    std::vector<std::uint8_t> extra(ds.n_cells(), 0);
    for (auto& e : extra) e = src.uniform() < rate ? 1 : 0;
    return ds.with_extra_missing(extra);
}

inline CausalModel truth_model(const GeneratorSpec& spec, const std::vector<Location>& locs) {
    CausalModel m;
    m.dag = spec.dag;
    m.variables = spec.variables;
    m.locations = locs;
    m.provenance.seed = spec.seed;
    for (const auto& n : spec.dag.nodes()) {
        const auto& ns = spec.nodes.at(n);
        NodeEstimate e;
        e.node = n;
        e.parents = spec.dag.parents(n);
        e.intercept = ns.intercept;
        e.coefficients = ns.coefficients;
        e.kernel = ns.kernel;
        for (const auto& g : spec.groups) e.group_variances[g] = detail::node_variance(ns, g);
        e.converged = true;
        m.estimates[n] = std::move(e);
    }
    return m;
}

inline GeneratedPanel generate(const GeneratorSpec& spec) {
    validate_spec(spec);
    const std::size_t L = spec.n_locations, W = spec.n_weeks;

    NormalSource place(make_stream(spec.seed, 1));
    std::vector<Location> locs(L);
    const int width = static_cast<int>(std::to_string(L).size());
    for (std::size_t i = 0; i < L; ++i) {
        std::string num = std::to_string(i + 1);
        locs[i].id = "L" + std::string(static_cast<std::size_t>(std::max(0, width - static_cast<int>(num.size()))), '0') + num;
        locs[i].lat = spec.lat_min + (spec.lat_max - spec.lat_min) * place.uniform();
        locs[i].lon = spec.lon_min + (spec.lon_max - spec.lon_min) * place.uniform();
    }
    std::vector<std::size_t> order(L);
    for (std::size_t i = 0; i < L; ++i) order[i] = i;
    std::shuffle(order.begin(), order.end(), place.engine());
    for (std::size_t k = 0; k < L; ++k) locs[order[k]].group = spec.groups[k % spec.groups.size()];

    // Variable order follows spec.variables; simulation follows the DAG.
    const auto topo = *spec.dag.topological_order();
    std::map<std::string, std::size_t> var_index;
    for (std::size_t v = 0; v < spec.variables.size(); ++v) var_index[spec.variables[v].name] = v;
    const std::size_t V = spec.variables.size();

    const DistanceMatrix dist(locs);
    std::map<std::string, Eigen::MatrixXd> chol;
    std::map<std::string, Eigen::VectorXd> sd;
    for (const auto& n : topo) {
        const auto& ns = spec.nodes.at(n);
        if (ns.kernel) chol[n] = factor_with_jitter(kernel_correlation(dist, *ns.kernel)).llt.matrixL();
        Eigen::VectorXd s(static_cast<Eigen::Index>(L));
        for (std::size_t l = 0; l < L; ++l) s(static_cast<Eigen::Index>(l)) = std::sqrt(detail::node_variance(ns, locs[l].group));
        sd[n] = s;
    }

    NormalSource noise(make_stream(spec.seed, 2));
    auto draw = [&](const std::string& n) {
        Eigen::VectorXd z(static_cast<Eigen::Index>(L));
        for (std::size_t l = 0; l < L; ++l) z(static_cast<Eigen::Index>(l)) = noise();
        if (auto it = chol.find(n); it != chol.end()) z = it->second * z;
        return Eigen::VectorXd(sd[n].cwiseProduct(z));
    };

    // state(v) holds the current week's values per location.
    std::vector<Eigen::VectorXd> prev(V, Eigen::VectorXd::Zero(static_cast<Eigen::Index>(L)));
    std::vector<Eigen::VectorXd> cur = prev;
    auto evaluate = [&](const std::string& n, bool with_noise) {
        const auto& ns = spec.nodes.at(n);
        Eigen::VectorXd x = Eigen::VectorXd::Constant(static_cast<Eigen::Index>(L), ns.intercept);
        for (const auto& p : spec.dag.parents(n)) {
            const auto& src = p.lag == 0 ? cur : prev;
            x += ns.coefficients.at(p.label()) * src[var_index.at(p.variable)];
        }
        if (with_noise) x += draw(n);
        return x;
    };
    for (const auto& n : topo)
        if (spec.variables[var_index.at(n)].is_static) cur[var_index.at(n)] = evaluate(n, true);
    prev = cur;

    std::vector<double> values(L * W * V);
    std::vector<std::uint8_t> mask(values.size(), 0);
    const std::size_t total = spec.burn_in + W;
    for (std::size_t step = 0; step < total; ++step) {
        for (const auto& n : topo) {
            const auto v = var_index.at(n);
            if (spec.variables[v].is_static) continue;
            cur[v] = evaluate(n, true);
        }
        if (step >= spec.burn_in) {
            const std::size_t w = step - spec.burn_in;
            for (std::size_t l = 0; l < L; ++l)
                for (std::size_t v = 0; v < V; ++v) values[(l * W + w) * V + v] = cur[v](static_cast<Eigen::Index>(l));
        }
        prev = cur;
    }

    std::vector<Date> weeks;
    for (std::size_t w = 0; w < W; ++w) weeks.push_back(spec.start.plus_days(static_cast<long>(w) * kDaysPerWeek));
    PanelDataset complete(locs, weeks, spec.variables, std::move(values), std::move(mask));
    PanelDataset data = inject_missing(complete, spec.missing_rate, spec.mechanism, splitmix64(spec.seed ^ 0x3));
    auto truth = truth_model(spec, locs);
    truth.provenance.dataset_hash = data.hash();
    return {std::move(data), std::move(complete), std::move(truth)};
}

// GeneratorSpec as JSON. The DAG is implied by the coefficient labels of
// each node ("X@t" or "X@t-1").
inline GeneratorSpec generator_spec_from_json(const Json& j) {
    GeneratorSpec s;
    s.n_locations = j.value("n_locations", s.n_locations);
    s.n_weeks = j.value("n_weeks", s.n_weeks);
    s.groups = j.value("groups", s.groups);
    if (j.contains("bbox")) {
        const auto& b = j.at("bbox");
        s.lat_min = b.value("lat_min", s.lat_min);
        s.lat_max = b.value("lat_max", s.lat_max);
        s.lon_min = b.value("lon_min", s.lon_min);
        s.lon_max = b.value("lon_max", s.lon_max);
    }
    s.missing_rate = j.value("missing_rate", 0.0);
    if (j.value("mechanism", std::string("mcar")) != "mcar")
        fail(ErrorKind::InvalidArgument, "only the mcar missingness mechanism is supported");
    s.burn_in = j.value("burn_in", s.burn_in);
    if (j.contains("start")) s.start = Date::parse(j.at("start").get<std::string>());
    s.seed = j.value("seed", s.seed);
    std::vector<std::string> names;
    for (const auto& v : j.at("variables")) {
        s.variables.push_back(variable_from_json(v));
        names.push_back(s.variables.back().name);
    }
    s.dag = TwoSliceDag(names);
    for (const auto& [name, nj] : j.at("nodes").items()) {
        if (!s.dag.has_node(name)) fail(ErrorKind::InvalidArgument, "node '" + name + "' is not a declared variable");
        NodeSpec ns;
        ns.intercept = nj.value("intercept", 0.0);
        ns.variance = nj.value("variance", 1.0);
        const Json coefs = nj.value("coefficients", Json::object());
        const Json gvars = nj.value("group_variances", Json::object());
        for (const auto& [label, b] : coefs.items()) {
            const auto term = ParentTerm::parse(label);
            ns.coefficients[term.label()] = b.get<double>();
            s.dag.add({term.variable, name, term.lag == 1});
        }
        if (nj.contains("kernel") && !nj.at("kernel").is_null())
            ns.kernel = KernelParams{nj.at("kernel").at("range_km").get<double>(), nj.at("kernel").at("nugget").get<double>()};
        for (const auto& [g, v] : gvars.items()) ns.group_variances[g] = v.get<double>();
        s.nodes[name] = std::move(ns);
    }
    for (const auto& n : names)
        if (!s.nodes.count(n)) s.nodes[n] = NodeSpec{};
    return s;
}

inline Json to_json(const GeneratorSpec& s) {
    Json vars = Json::array();
    for (const auto& v : s.variables) vars.push_back(to_json(v));
    Json nodes = Json::object();
    for (const auto& [name, ns] : s.nodes) {
        Json nj = {{"intercept", ns.intercept}, {"variance", ns.variance}, {"coefficients", ns.coefficients},
                   {"group_variances", ns.group_variances}};
        if (ns.kernel) nj["kernel"] = to_json(*ns.kernel);
        nodes[name] = std::move(nj);
    }
    return {{"n_locations", s.n_locations},
            {"n_weeks", s.n_weeks},
            {"groups", s.groups},
            {"bbox", {{"lat_min", s.lat_min}, {"lat_max", s.lat_max}, {"lon_min", s.lon_min}, {"lon_max", s.lon_max}}},
            {"missing_rate", s.missing_rate},
            {"mechanism", "mcar"},
            {"burn_in", s.burn_in},
            {"start", s.start.iso()},
            {"seed", s.seed},
            {"variables", vars},
            {"nodes", nodes}};
}

} // namespace stcn
