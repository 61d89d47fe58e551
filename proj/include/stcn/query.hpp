#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "stcn/model.hpp"
#include "stcn/parallel.hpp"
#include "stcn/rng.hpp"
#include "stcn/spatial.hpp"

namespace stcn {

// Locations (by id; empty = all) and horizon steps [first_step, last_step]
// (1-based; 0 = open end) where an intervention applies.
struct Scope {
    std::vector<std::string> locations;
    std::size_t first_step = 1;
    std::size_t last_step = 0;
};

struct InterventionSpec {
    enum class Kind { set, scale, clamp, sever };
    Kind kind = Kind::set;
    std::string target;     // node for set/scale/clamp
    std::vector<Arc> arcs;  // sever
    double value = 0.0;     // constant, factor or ceiling
    Scope scope;
};

inline std::string_view to_string(InterventionSpec::Kind k) {
    switch (k) {
    case InterventionSpec::Kind::set: return "set";
    case InterventionSpec::Kind::scale: return "scale";
    case InterventionSpec::Kind::clamp: return "clamp";
    case InterventionSpec::Kind::sever: return "sever";
    }
    return "unknown";
}

inline InterventionSpec::Kind parse_intervention_kind(std::string_view s) {
    if (s == "set") return InterventionSpec::Kind::set;
    if (s == "scale") return InterventionSpec::Kind::scale;
    if (s == "clamp") return InterventionSpec::Kind::clamp;
    if (s == "sever") return InterventionSpec::Kind::sever;
    fail(ErrorKind::ParseError, "unknown intervention kind '" + std::string(s) + "'");
}

// Per-node summaries, each a (steps + 1) x locations matrix; row 0 is the
// initial week.
struct NodeTrajectory {
    Eigen::MatrixXd mean, q05, q50, q95;
    Eigen::MatrixXd delta_mean, delta_q05, delta_q50, delta_q95; // empty without an intervention
};

struct QueryResult {
    std::vector<std::string> nodes;
    std::vector<std::string> locations;
    std::vector<Date> weeks;
    std::size_t draws = 0;
    std::uint64_t seed = 0;
    std::map<std::string, NodeTrajectory> trajectories;
    bool has_deltas = false;
};

namespace detail {

// Type-7 quantile of a sorted sample.
inline double quantile_sorted(const std::vector<double>& s, double q) {
    if (s.empty()) return std::numeric_limits<double>::quiet_NaN();
    const double h = (static_cast<double>(s.size()) - 1.0) * q;
    const auto lo = static_cast<std::size_t>(std::floor(h));
    const auto hi = std::min(lo + 1, s.size() - 1);
    return s[lo] + (h - static_cast<double>(lo)) * (s[hi] - s[lo]);
}

// Precomputed structural equations over a fixed location set.
class Simulator {
public:
    Simulator(const CausalModel& model, const PanelDataset& init) : model_(model) {
        model.validate();
        auto order = model.dag.topological_order();
        if (!order) fail(ErrorKind::InvalidArgument, "model DAG is cyclic");
        order_ = *order;
        nodes_ = model.dag.nodes();
        for (std::size_t i = 0; i < nodes_.size(); ++i) node_index_[nodes_[i]] = i;
        L_ = init.n_locations();
        locations_ = init.locations();
        const DistanceMatrix dist(locations_);
        for (const auto& n : nodes_) {
            const auto& e = model.estimate(n);
            Eq eq;
            eq.intercept = e.intercept;
            for (const auto& p : e.parents) eq.terms.push_back({node_index_.at(p.variable), p.lag, e.coefficient(p)});
            eq.sd.resize(static_cast<Eigen::Index>(L_));
            for (std::size_t l = 0; l < L_; ++l)
                eq.sd(static_cast<Eigen::Index>(l)) = std::sqrt(std::max(0.0, e.variance_for(locations_[l].group)));
            if (e.kernel && L_ > 1) eq.chol = factor_with_jitter(kernel_correlation(dist, *e.kernel)).llt.matrixL();
            eq.is_static = model.is_static(n);
            eqs_.push_back(std::move(eq));
        }
        // Initial state: last observed week for static nodes, final week for dynamic ones.
        x0_ = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(nodes_.size()), static_cast<Eigen::Index>(L_));
        for (std::size_t i = 0; i < nodes_.size(); ++i) {
            auto v = init.find_variable(nodes_[i]);
            if (!v) fail(ErrorKind::MissingInitialValues, "initial panel lacks node '" + nodes_[i] + "'");
            for (std::size_t l = 0; l < L_; ++l) {
                std::optional<double> val;
                const std::size_t last = init.n_weeks() - 1;
                if (!init.missing(l, last, *v)) val = init.value(l, last, *v);
                else if (eqs_[i].is_static)
                    for (std::size_t w = init.n_weeks(); w-- > 0 && !val;)
                        if (!init.missing(l, w, *v)) val = init.value(l, w, *v);
                if (!val)
                    fail(ErrorKind::MissingInitialValues,
                         "no initial value for '" + nodes_[i] + "' at location '" + locations_[l].id + "'");
                x0_(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(l)) = *val;
            }
        }
        start_ = init.weeks().back();
    }

    const std::vector<std::string>& nodes() const { return nodes_; }
    const std::vector<Location>& locations() const { return locations_; }
    std::size_t node_index(const std::string& n) const {
        auto it = node_index_.find(n);
        if (it == node_index_.end()) fail(ErrorKind::UnknownColumn, "unknown node '" + n + "'");
        return it->second;
    }
    Date start() const { return start_; }

    // One draw: states[s] is nodes x locations for s = 0..horizon. Noise for
    // every dynamic node and step is drawn in a fixed order whatever the
    // intervention, so runs sharing (seed, draw) share their noise.
    std::vector<Eigen::MatrixXd> run(std::size_t horizon, std::uint64_t seed, std::uint64_t draw,
                                     const InterventionSpec* iv, const std::vector<bool>& in_scope_loc) const {
        NormalSource rng(make_stream(seed, draw));
        std::vector<Eigen::MatrixXd> states{x0_};
        const auto L = static_cast<Eigen::Index>(L_);
        std::optional<std::size_t> target;
        if (iv && iv->kind != InterventionSpec::Kind::sever) target = node_index(iv->target);
        for (std::size_t s = 1; s <= horizon; ++s) {
            const Eigen::MatrixXd& prev = states.back();
            Eigen::MatrixXd cur = prev;
            const bool step_in = iv && s >= iv->scope.first_step && (iv->scope.last_step == 0 || s <= iv->scope.last_step);
            for (const auto& n : order_) {
                const std::size_t i = node_index_.at(n);
                const auto& eq = eqs_[i];
                if (eq.is_static) continue;
                Eigen::VectorXd z(L);
                for (Eigen::Index l = 0; l < L; ++l) z(l) = rng();
                if (eq.chol.size() > 0) z = eq.chol * z;
                Eigen::VectorXd x = eq.sd.cwiseProduct(z).array() + eq.intercept;
                for (const auto& t : eq.terms) {
                    const auto& src = t.lag == 0 ? cur : prev;
                    Eigen::VectorXd contrib = t.beta * src.row(static_cast<Eigen::Index>(t.parent)).transpose();
                    if (step_in && iv->kind == InterventionSpec::Kind::sever && severs(*iv, t, n))
                        for (Eigen::Index l = 0; l < L; ++l)
                            if (in_scope_loc[static_cast<std::size_t>(l)]) contrib(l) = 0.0;
                    x += contrib;
                }
                if (step_in && target && *target == i) {
                    for (Eigen::Index l = 0; l < L; ++l) {
                        if (!in_scope_loc[static_cast<std::size_t>(l)]) continue;
                        switch (iv->kind) {
                        case InterventionSpec::Kind::set: x(l) = iv->value; break;
                        case InterventionSpec::Kind::scale: x(l) *= iv->value; break;
                        case InterventionSpec::Kind::clamp: x(l) = std::min(x(l), iv->value); break;
                        case InterventionSpec::Kind::sever: break;
                        }
                    }
                }
                cur.row(static_cast<Eigen::Index>(i)) = x.transpose();
            }
            states.push_back(std::move(cur));
        }
        return states;
    }

private:
    struct Term {
        std::size_t parent;
        int lag;
        double beta;
    };
    struct Eq {
        double intercept = 0.0;
        std::vector<Term> terms;
        Eigen::VectorXd sd;
        Eigen::MatrixXd chol;
        bool is_static = false;
    };

    bool severs(const InterventionSpec& iv, const Term& t, const std::string& node) const {
        for (const auto& a : iv.arcs)
            if (a.to == node && a.from == nodes_[t.parent] && a.lagged == (t.lag == 1)) return true;
        return false;
    }

    const CausalModel& model_;
    std::vector<std::string> order_, nodes_;
    std::map<std::string, std::size_t> node_index_;
    std::vector<Eq> eqs_;
    std::vector<Location> locations_;
    std::size_t L_ = 0;
    Eigen::MatrixXd x0_;
    Date start_;
};

inline std::vector<bool> scope_mask(const Scope& scope, const std::vector<Location>& locs) {
    std::vector<bool> mask(locs.size(), scope.locations.empty());
    for (const auto& id : scope.locations)
        for (std::size_t l = 0; l < locs.size(); ++l)
            if (locs[l].id == id) mask[l] = true;
    return mask;
}

inline void validate_intervention(const InterventionSpec& iv, const CausalModel& model, const std::vector<Location>& locs,
                                  std::size_t horizon) {
    using K = InterventionSpec::Kind;
    if (iv.kind != K::sever && !model.dag.has_node(iv.target))
        fail(ErrorKind::UnknownColumn, "unknown intervention target '" + iv.target + "'");
    if (iv.kind == K::scale && !(iv.value > 0.0)) fail(ErrorKind::InvalidArgument, "scale factor must be positive");
    if ((iv.kind == K::clamp || iv.kind == K::set) && !std::isfinite(iv.value))
        fail(ErrorKind::InvalidArgument, "intervention value must be finite");
    if (iv.kind == K::sever) {
        if (iv.arcs.empty()) fail(ErrorKind::InvalidArgument, "sever needs at least one arc");
        for (const auto& a : iv.arcs)
            if (!model.dag.has(a)) fail(ErrorKind::InvalidArgument, "cannot sever missing arc " + a.label());
    }
    if (iv.kind != K::sever && model.is_static(iv.target))
        fail(ErrorKind::InvalidArgument, "interventions on static variables are not supported");
    const auto mask = scope_mask(iv.scope, locs);
    const bool any_loc = std::find(mask.begin(), mask.end(), true) != mask.end();
    const bool any_week = iv.scope.first_step >= 1 && iv.scope.first_step <= horizon &&
                          (iv.scope.last_step == 0 || iv.scope.last_step >= iv.scope.first_step);
    if (!any_loc || !any_week) fail(ErrorKind::ScopeDisjoint, "intervention scope selects no location-week");
}

inline QueryResult run_query(const CausalModel& model, const PanelDataset& init, std::size_t horizon, std::size_t draws,
                             std::uint64_t seed, const InterventionSpec* iv, unsigned threads) {
    if (horizon < 1) fail(ErrorKind::InvalidArgument, "horizon must be at least 1");
    if (draws < 1) fail(ErrorKind::InvalidArgument, "draws must be at least 1");
    const Simulator sim(model, init);
    std::vector<bool> mask(sim.locations().size(), true);
    if (iv) {
        validate_intervention(*iv, model, sim.locations(), horizon);
        mask = scope_mask(iv->scope, sim.locations());
    }
    std::vector<std::vector<Eigen::MatrixXd>> base(draws), alt(iv ? draws : 0);
    parallel_for(draws, threads, [&](std::size_t d) {
        base[d] = sim.run(horizon, seed, d, nullptr, mask);
        if (iv) alt[d] = sim.run(horizon, seed, d, iv, mask);
    });

    QueryResult out;
    out.nodes = sim.nodes();
    for (const auto& l : sim.locations()) out.locations.push_back(l.id);
    for (std::size_t s = 0; s <= horizon; ++s) out.weeks.push_back(sim.start().plus_days(static_cast<long>(s) * kDaysPerWeek));
    out.draws = draws;
    out.seed = seed;
    out.has_deltas = iv != nullptr;
    const auto S = static_cast<Eigen::Index>(horizon + 1), L = static_cast<Eigen::Index>(out.locations.size());
    std::vector<double> buf(draws), dbuf(draws);
    for (std::size_t i = 0; i < out.nodes.size(); ++i) {
        NodeTrajectory t;
        t.mean = t.q05 = t.q50 = t.q95 = Eigen::MatrixXd::Zero(S, L);
        if (iv) t.delta_mean = t.delta_q05 = t.delta_q50 = t.delta_q95 = Eigen::MatrixXd::Zero(S, L);
        const auto row = static_cast<Eigen::Index>(i);
        for (Eigen::Index s = 0; s < S; ++s)
            for (Eigen::Index l = 0; l < L; ++l) {
                double m = 0.0, dm = 0.0;
                for (std::size_t d = 0; d < draws; ++d) {
                    const auto& src = iv ? alt[d] : base[d];
                    buf[d] = src[static_cast<std::size_t>(s)](row, l);
                    m += buf[d];
                    if (iv) {
                        dbuf[d] = buf[d] - base[d][static_cast<std::size_t>(s)](row, l);
                        dm += dbuf[d];
                    }
                }
                t.mean(s, l) = m / static_cast<double>(draws);
                std::sort(buf.begin(), buf.end());
                t.q05(s, l) = quantile_sorted(buf, 0.05);
                t.q50(s, l) = quantile_sorted(buf, 0.50);
                t.q95(s, l) = quantile_sorted(buf, 0.95);
                if (iv) {
                    t.delta_mean(s, l) = dm / static_cast<double>(draws);
                    std::sort(dbuf.begin(), dbuf.end());
                    t.delta_q05(s, l) = quantile_sorted(dbuf, 0.05);
                    t.delta_q50(s, l) = quantile_sorted(dbuf, 0.50);
                    t.delta_q95(s, l) = quantile_sorted(dbuf, 0.95);
                }
            }
        out.trajectories[out.nodes[i]] = std::move(t);
    }
    return out;
}

} // namespace detail

// Forward simulation from the final week of `init` (static values may come
// from any week).
inline QueryResult simulate(const CausalModel& model, const PanelDataset& init, std::size_t horizon, std::size_t draws,
                            std::uint64_t seed, unsigned threads = 1) {
    return detail::run_query(model, init, horizon, draws, seed, nullptr, threads);
}

// Intervened simulation with deltas against a baseline that shares every
// noise draw.
inline QueryResult intervene(const CausalModel& model, const InterventionSpec& spec, const PanelDataset& init,
                             std::size_t horizon, std::size_t draws, std::uint64_t seed, unsigned threads = 1) {
    return detail::run_query(model, init, horizon, draws, seed, &spec, threads);
}

// Raw per-draw trajectories (nodes x locations per step), for callers that
// need more than the summaries.
inline std::vector<Eigen::MatrixXd> simulate_draw(const CausalModel& model, const PanelDataset& init, std::size_t horizon,
                                                  std::uint64_t seed, std::uint64_t draw,
                                                  const InterventionSpec* iv = nullptr) {
    const detail::Simulator sim(model, init);
    std::vector<bool> mask(sim.locations().size(), true);
    if (iv) {
        detail::validate_intervention(*iv, model, sim.locations(), horizon);
        mask = detail::scope_mask(iv->scope, sim.locations());
    }
    return sim.run(horizon, seed, draw, iv, mask);
}

// ------------------------------------------------------- stationary moments

// Covariance of (x_t, x_{t-1}) for every node at a single site, pooled over
// the groups of the model's locations. Static nodes are treated as drawn
// once per site; their lagged copy equals the current value.
struct StationaryMoments {
    std::vector<std::string> nodes;
    Eigen::MatrixXd cov; // 2N x 2N: [x_t ; x_{t-1}]

    std::size_t index(const ParentTerm& p) const {
        auto it = std::find(nodes.begin(), nodes.end(), p.variable);
        if (it == nodes.end()) fail(ErrorKind::UnknownColumn, "unknown node '" + p.variable + "'");
        return static_cast<std::size_t>(it - nodes.begin()) + (p.lag == 1 ? nodes.size() : 0);
    }
};

enum class MomentMethod { simulation, analytic };

struct MomentOptions {
    MomentMethod method = MomentMethod::simulation;
    std::size_t chains = 400;       // simulation: independent single-site chains
    std::size_t chain_length = 500; // kept steps per chain
    std::size_t burn_in = 200;
    std::uint64_t seed = 0;
};

namespace detail {

inline std::map<std::string, double> group_weights(const CausalModel& model) {
    std::map<std::string, double> w;
    for (const auto& l : model.locations) w[l.group] += 1.0;
    if (w.empty()) {
        // No location table: weight the groups named by the first estimate equally.
        const auto& e = model.estimate(model.dag.nodes().front());
        for (const auto& [g, v] : e.group_variances) w[g] = 1.0;
    }
    double s = 0.0;
    for (const auto& [g, v] : w) s += v;
    for (auto& [g, v] : w) v /= s;
    return w;
}

struct LinearSystem {
    std::vector<std::string> nodes;
    Eigen::MatrixXd A0, A1;
    std::vector<bool> is_static;
};

inline LinearSystem linear_system(const CausalModel& model) {
    LinearSystem sys;
    sys.nodes = model.dag.nodes();
    const auto N = static_cast<Eigen::Index>(sys.nodes.size());
    sys.A0 = Eigen::MatrixXd::Zero(N, N);
    sys.A1 = Eigen::MatrixXd::Zero(N, N);
    for (Eigen::Index i = 0; i < N; ++i) {
        const auto& e = model.estimate(sys.nodes[static_cast<std::size_t>(i)]);
        for (const auto& p : e.parents) {
            const auto j = static_cast<Eigen::Index>(std::find(sys.nodes.begin(), sys.nodes.end(), p.variable) - sys.nodes.begin());
            (p.lag == 0 ? sys.A0 : sys.A1)(i, j) += e.coefficient(p);
        }
        sys.is_static.push_back(model.is_static(sys.nodes[static_cast<std::size_t>(i)]));
    }
    return sys;
}

inline StationaryMoments analytic_moments(const CausalModel& model) {
    const auto sys = linear_system(model);
    const auto N = static_cast<Eigen::Index>(sys.nodes.size());
    std::vector<Eigen::Index> st, dy;
    for (Eigen::Index i = 0; i < N; ++i) (sys.is_static[static_cast<std::size_t>(i)] ? st : dy).push_back(i);
    auto sub = [](const Eigen::MatrixXd& m, const std::vector<Eigen::Index>& r, const std::vector<Eigen::Index>& c) {
        Eigen::MatrixXd out(static_cast<Eigen::Index>(r.size()), static_cast<Eigen::Index>(c.size()));
        for (std::size_t a = 0; a < r.size(); ++a)
            for (std::size_t b = 0; b < c.size(); ++b) out(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) = m(r[a], c[b]);
        return out;
    };
    const auto S = static_cast<Eigen::Index>(st.size()), D = static_cast<Eigen::Index>(dy.size());
    const Eigen::MatrixXd Bs = (Eigen::MatrixXd::Identity(S, S) - sub(sys.A0, st, st)).inverse();
    const Eigen::MatrixXd B = (Eigen::MatrixXd::Identity(D, D) - sub(sys.A0, dy, dy)).inverse();
    const Eigen::MatrixXd M = B * sub(sys.A1, dy, dy);
    if (D > 0) {
        Eigen::EigenSolver<Eigen::MatrixXd> es(M, false);
        if (es.eigenvalues().cwiseAbs().maxCoeff() >= 1.0) fail(ErrorKind::UnstableSpec, "model dynamics are not stationary");
    }
    const Eigen::MatrixXd K = (Eigen::MatrixXd::Identity(D, D) - M).inverse() * B * sub(sys.A0, dy, st);

    StationaryMoments out;
    out.nodes = sys.nodes;
    out.cov = Eigen::MatrixXd::Zero(2 * N, 2 * N);
    for (const auto& [g, wg] : group_weights(model)) {
        Eigen::VectorXd var(N);
        for (Eigen::Index i = 0; i < N; ++i) var(i) = model.estimate(sys.nodes[static_cast<std::size_t>(i)]).variance_for(g);
        Eigen::VectorXd vs(S), vd(D);
        for (Eigen::Index a = 0; a < S; ++a) vs(a) = var(st[static_cast<std::size_t>(a)]);
        for (Eigen::Index a = 0; a < D; ++a) vd(a) = var(dy[static_cast<std::size_t>(a)]);
        const Eigen::MatrixXd Sss = Bs * vs.asDiagonal() * Bs.transpose();
        // Discrete Lyapunov: vec(Se) = (I - M kron M)^{-1} vec(B V B').
        const Eigen::MatrixXd Q = B * vd.asDiagonal() * B.transpose();
        Eigen::MatrixXd kron(D * D, D * D);
        for (Eigen::Index a = 0; a < D; ++a)
            for (Eigen::Index b = 0; b < D; ++b) kron.block(a * D, b * D, D, D) = M(a, b) * M;
        const Eigen::VectorXd vecQ = Eigen::Map<const Eigen::VectorXd>(Q.data(), D * D);
        const Eigen::VectorXd vecS = (Eigen::MatrixXd::Identity(D * D, D * D) - kron).lu().solve(vecQ);
        const Eigen::MatrixXd Se = Eigen::Map<const Eigen::MatrixXd>(vecS.data(), D, D);
        const Eigen::MatrixXd Cdd0 = K * Sss * K.transpose() + Se;     // Cov(x_t, x_t), dynamic
        const Eigen::MatrixXd Cdd1 = K * Sss * K.transpose() + M * Se; // Cov(x_t, x_{t-1})
        const Eigen::MatrixXd Cds = K * Sss;                            // Cov(x_d, x_s)

        Eigen::MatrixXd C = Eigen::MatrixXd::Zero(2 * N, 2 * N);
        auto put = [&](Eigen::Index r, Eigen::Index c, double v) {
            C(r, c) = v;
            C(c, r) = v;
        };
        for (Eigen::Index a = 0; a < S; ++a)
            for (Eigen::Index b = 0; b < S; ++b)
                for (int la : {0, 1})
                    for (int lb : {0, 1}) put(st[a] + la * N, st[b] + lb * N, Sss(a, b));
        for (Eigen::Index a = 0; a < D; ++a) {
            for (Eigen::Index b = 0; b < D; ++b) {
                put(dy[a], dy[b], Cdd0(a, b));
                put(dy[a] + N, dy[b] + N, Cdd0(a, b));
                C(dy[a], dy[b] + N) = Cdd1(a, b);
                C(dy[b] + N, dy[a]) = Cdd1(a, b);
            }
            for (Eigen::Index b = 0; b < S; ++b)
                for (int la : {0, 1})
                    for (int lb : {0, 1}) put(dy[a] + la * N, st[b] + lb * N, Cds(a, b));
        }
        out.cov += wg * C;
    }
    return out;
}

inline StationaryMoments simulated_moments(const CausalModel& model, const MomentOptions& opt) {
    const auto sys = linear_system(model);
    const auto N = static_cast<Eigen::Index>(sys.nodes.size());
    auto order_names = *model.dag.topological_order();
    std::vector<Eigen::Index> order;
    for (const auto& n : order_names)
        order.push_back(static_cast<Eigen::Index>(std::find(sys.nodes.begin(), sys.nodes.end(), n) - sys.nodes.begin()));
    Eigen::VectorXd c(N);
    for (Eigen::Index i = 0; i < N; ++i) c(i) = model.estimate(sys.nodes[static_cast<std::size_t>(i)]).intercept;

    const auto weights = group_weights(model);
    std::vector<std::pair<std::string, std::size_t>> alloc;
    std::size_t assigned = 0;
    for (const auto& [g, w] : weights) {
        const auto k = static_cast<std::size_t>(std::llround(w * static_cast<double>(opt.chains)));
        alloc.emplace_back(g, k);
        assigned += k;
    }
    if (assigned == 0) alloc.front().second = assigned = 1;

    Eigen::VectorXd sum = Eigen::VectorXd::Zero(2 * N);
    Eigen::MatrixXd cross = Eigen::MatrixXd::Zero(2 * N, 2 * N);
    double count = 0.0;
    std::uint64_t chain_id = 0;
    for (const auto& [g, chains] : alloc) {
        Eigen::VectorXd sd(N);
        for (Eigen::Index i = 0; i < N; ++i)
            sd(i) = std::sqrt(std::max(0.0, model.estimate(sys.nodes[static_cast<std::size_t>(i)]).variance_for(g)));
        for (std::size_t ch = 0; ch < chains; ++ch, ++chain_id) {
            NormalSource rng(make_stream(opt.seed, chain_id));
            Eigen::VectorXd prev = Eigen::VectorXd::Zero(N), cur = prev;
            for (auto i : order)
                if (sys.is_static[static_cast<std::size_t>(i)])
                    cur(i) = c(i) + sys.A0.row(i).dot(cur) + sd(i) * rng();
            prev = cur;
            Eigen::VectorXd z(2 * N);
            for (std::size_t t = 0; t < opt.burn_in + opt.chain_length; ++t) {
                for (auto i : order) {
                    if (sys.is_static[static_cast<std::size_t>(i)]) continue;
                    cur(i) = c(i) + sys.A0.row(i).dot(cur) + sys.A1.row(i).dot(prev) + sd(i) * rng();
                }
                if (t >= opt.burn_in) {
                    z << cur, prev;
                    sum += z;
                    cross.noalias() += z * z.transpose();
                    count += 1.0;
                }
                prev = cur;
            }
        }
    }
    StationaryMoments out;
    out.nodes = sys.nodes;
    const Eigen::VectorXd mean = sum / count;
    out.cov = cross / count - mean * mean.transpose();
    return out;
}

} // namespace detail

inline StationaryMoments stationary_moments(const CausalModel& model, const MomentOptions& opt = {}) {
    return opt.method == MomentMethod::analytic ? detail::analytic_moments(model) : detail::simulated_moments(model, opt);
}

// ------------------------------------------------------ variance attribution

struct AttributionResult {
    std::string outcome;
    std::map<std::string, double> shares;    // by parent term label
    std::map<std::string, double> explained; // beta_j Cov(p_j, f)
    double fitted_variance = 0.0;            // Var(f), f = non-self part of the mean
    std::optional<double> self_coefficient;
};

inline AttributionResult attribution_from_moments(const CausalModel& model, const std::string& outcome,
                                                  const StationaryMoments& mom) {
    const auto& e = model.estimate(outcome);
    std::vector<ParentTerm> terms;
    AttributionResult r;
    r.outcome = outcome;
    for (const auto& p : e.parents) {
        if (p.variable == outcome && p.lag == 1) {
            r.self_coefficient = e.coefficient(p);
            continue;
        }
        terms.push_back(p);
    }
    if (terms.empty()) fail(ErrorKind::NoParents, "'" + outcome + "' has no parents besides its own lag");
    std::vector<std::size_t> idx;
    for (const auto& p : terms) idx.push_back(mom.index(p));
    std::vector<double> cov_f(terms.size(), 0.0);
    for (std::size_t j = 0; j < terms.size(); ++j)
        for (std::size_t k = 0; k < terms.size(); ++k)
            cov_f[j] += e.coefficient(terms[k]) * mom.cov(static_cast<Eigen::Index>(idx[j]), static_cast<Eigen::Index>(idx[k]));
    double var_f = 0.0;
    for (std::size_t j = 0; j < terms.size(); ++j) var_f += e.coefficient(terms[j]) * cov_f[j];
    if (!(var_f > 0.0)) fail(ErrorKind::NotApplicable, "parents of '" + outcome + "' explain no variance");
    r.fitted_variance = var_f;
    for (std::size_t j = 0; j < terms.size(); ++j) {
        const double ex = e.coefficient(terms[j]) * cov_f[j];
        r.explained[terms[j].label()] = ex;
        r.shares[terms[j].label()] = ex / var_f;
    }
    return r;
}

// Share of the outcome's non-autoregressive fitted variance carried by each
// parent term: beta_j Cov(p_j, f) / Var(f).
inline AttributionResult variance_attribution(const CausalModel& model, const std::string& outcome,
                                              const MomentOptions& opt = {}) {
    const auto& e = model.estimate(outcome);
    bool other = false;
    for (const auto& p : e.parents) other = other || !(p.variable == outcome && p.lag == 1);
    if (!other) fail(ErrorKind::NoParents, "'" + outcome + "' has no parents besides its own lag");
    return attribution_from_moments(model, outcome, stationary_moments(model, opt));
}

// -------------------------------------------------------------- mediation

struct MediationResult {
    bool no_effect = false;
    double factor = std::numeric_limits<double>::quiet_NaN();
    double intact_explained = 0.0;
    double severed_explained = 0.0;
    std::vector<double> intact_response, severed_response; // outcome impulse responses, k = 0..lag
};

// Outcome response to a unit innovation in `exposure` at step 0, for steps
// 0..lag. Static exposures keep the shock.
inline std::vector<double> impulse_response(const CausalModel& model, const std::string& exposure,
                                            const std::string& outcome, std::size_t lag,
                                            const std::vector<Arc>& severed = {}) {
    const auto sys = detail::linear_system(model);
    const auto N = static_cast<Eigen::Index>(sys.nodes.size());
    auto idx = [&](const std::string& n) {
        auto it = std::find(sys.nodes.begin(), sys.nodes.end(), n);
        if (it == sys.nodes.end()) fail(ErrorKind::UnknownColumn, "unknown node '" + n + "'");
        return static_cast<Eigen::Index>(it - sys.nodes.begin());
    };
    Eigen::MatrixXd A0 = sys.A0, A1 = sys.A1;
    for (const auto& a : severed) (a.lagged ? A1 : A0)(idx(a.to), idx(a.from)) = 0.0;
    const auto ex = idx(exposure), out = idx(outcome);
    std::vector<Eigen::Index> order;
    const auto topo = *model.dag.topological_order();
    for (const auto& n : topo) order.push_back(idx(n));
    std::vector<double> resp;
    Eigen::VectorXd prev = Eigen::VectorXd::Zero(N);
    for (std::size_t k = 0; k <= lag; ++k) {
        Eigen::VectorXd cur = Eigen::VectorXd::Zero(N);
        for (auto i : order) {
            if (sys.is_static[static_cast<std::size_t>(i)] && k > 0) {
                cur(i) = prev(i);
                continue;
            }
            cur(i) = A0.row(i).dot(cur) + A1.row(i).dot(prev) + (k == 0 && i == ex ? 1.0 : 0.0);
        }
        resp.push_back(cur(out));
        prev = cur;
    }
    return resp;
}

// Ratio of the outcome variance explained by exposure innovations over
// steps 0..lag with every exposure -> mediator arc severed, to the same
// quantity in the intact model. Explained variance is sum_k phi_k^2 times
// the exposure's innovation variance, phi_k being the impulse response.
inline MediationResult mediation_share(const CausalModel& model, const std::string& exposure,
                                       const std::vector<std::string>& mediators, const std::string& outcome,
                                       std::size_t lag) {
    if (exposure == outcome) fail(ErrorKind::InvalidArgument, "exposure and outcome must differ");
    for (const auto& m : mediators)
        if (m == exposure || m == outcome) fail(ErrorKind::InvalidArgument, "mediators must exclude exposure and outcome");
    std::vector<Arc> severed;
    for (const auto& a : model.dag.arcs())
        if (a.from == exposure && std::find(mediators.begin(), mediators.end(), a.to) != mediators.end())
            severed.push_back(a);
    double var_x = 0.0;
    for (const auto& [g, w] : detail::group_weights(model)) var_x += w * model.estimate(exposure).variance_for(g);
    MediationResult r;
    r.intact_response = impulse_response(model, exposure, outcome, lag);
    r.severed_response = impulse_response(model, exposure, outcome, lag, severed);
    for (double v : r.intact_response) r.intact_explained += v * v * var_x;
    for (double v : r.severed_response) r.severed_explained += v * v * var_x;
    double intact_ss = 0.0, severed_ss = 0.0;
    for (double v : r.intact_response) intact_ss += v * v;
    for (double v : r.severed_response) severed_ss += v * v;
    if (intact_ss == 0.0) {
        r.no_effect = true;
        return r;
    }
    r.factor = severed_ss / intact_ss;
    return r;
}

// ---------------------------------------------------------- counterfactual

struct CounterfactualResult {
    std::string node;
    std::string location;
    Date anchor;
    std::vector<Date> weeks;                  // anchor .. anchor + horizon
    std::map<std::string, Eigen::MatrixXd> delta; // (horizon + 1) x locations per node
    std::map<std::string, Eigen::MatrixXd> factual, counterfactual;
};

// Abduction keeps the residual of every observed cell (cells with a missing
// value or parent are imputed with residual 0), the action replaces `node`
// at the anchor cell, and prediction re-runs the structural equations from
// the anchor week with the retained residuals.
inline CounterfactualResult counterfactual(const CausalModel& model, const PanelDataset& realized, const std::string& node,
                                           const std::string& location, Date week, double value, std::size_t horizon) {
    model.validate();
    const auto vi = realized.find_variable(node);
    if (!vi) fail(ErrorKind::UnknownColumn, "unknown node '" + node + "'");
    const auto li = realized.find_location(location);
    const auto wi = realized.find_week(week);
    if (!li || !wi || realized.missing(*li, *wi, *vi))
        fail(ErrorKind::AnchorMissing, "anchor " + node + " at " + location + " / " + week.iso() + " is not observed");
    if (*wi + horizon >= realized.n_weeks()) fail(ErrorKind::InvalidArgument, "realized data does not cover the horizon");

    const auto order = *model.dag.topological_order();
    const auto& nodes = model.dag.nodes();
    const std::size_t L = realized.n_locations(), W = realized.n_weeks();
    std::map<std::string, std::size_t> col;
    for (const auto& n : nodes) {
        auto v = realized.find_variable(n);
        if (!v) fail(ErrorKind::UnknownColumn, "realized panel lacks node '" + n + "'");
        col[n] = *v;
    }
    // Factual world with imputation, plus retained residuals.
    std::map<std::string, Eigen::MatrixXd> x, eps;
    for (const auto& n : nodes) {
        x[n] = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(W), static_cast<Eigen::Index>(L));
        eps[n] = x[n];
    }
    auto predict = [&](const std::map<std::string, Eigen::MatrixXd>& world, const std::string& n, std::size_t w,
                       std::size_t l) {
        const auto& e = model.estimate(n);
        double m = e.intercept;
        for (const auto& p : e.parents) {
            if (p.lag > static_cast<int>(w)) return std::numeric_limits<double>::quiet_NaN();
            m += e.coefficient(p) * world.at(p.variable)(static_cast<Eigen::Index>(w - static_cast<std::size_t>(p.lag)),
                                                          static_cast<Eigen::Index>(l));
        }
        return m;
    };
    for (std::size_t w = 0; w < W; ++w)
        for (const auto& n : order)
            for (std::size_t l = 0; l < L; ++l) {
                const auto W_ = static_cast<Eigen::Index>(w), L_ = static_cast<Eigen::Index>(l);
                const bool obs = !realized.missing(l, w, col[n]);
                const double m = predict(x, n, w, l);
                if (obs) {
                    x[n](W_, L_) = realized.value(l, w, col[n]);
                    eps[n](W_, L_) = std::isnan(m) ? 0.0 : x[n](W_, L_) - m;
                } else {
                    x[n](W_, L_) = std::isnan(m) ? 0.0 : m;
                }
            }
    auto cf = x;
    for (std::size_t w = *wi; w <= *wi + horizon; ++w)
        for (const auto& n : order)
            for (std::size_t l = 0; l < L; ++l) {
                const auto W_ = static_cast<Eigen::Index>(w), L_ = static_cast<Eigen::Index>(l);
                if (w == *wi && l == *li && n == node) {
                    cf[n](W_, L_) = value;
                    continue;
                }
                if (model.is_static(n)) continue;
                const double m = predict(cf, n, w, l);
                if (!std::isnan(m)) cf[n](W_, L_) = m + eps[n](W_, L_);
            }
    CounterfactualResult r;
    r.node = node;
    r.location = location;
    r.anchor = week;
    for (std::size_t s = 0; s <= horizon; ++s) r.weeks.push_back(realized.weeks()[*wi + s]);
    for (const auto& n : nodes) {
        const auto rows = static_cast<Eigen::Index>(horizon + 1);
        r.factual[n] = x[n].middleRows(static_cast<Eigen::Index>(*wi), rows);
        r.counterfactual[n] = cf[n].middleRows(static_cast<Eigen::Index>(*wi), rows);
        r.delta[n] = r.counterfactual[n] - r.factual[n];
    }
    return r;
}

// ------------------------------------------------------------------ output

inline Json to_json(const QueryResult& q) {
    Json nodes = Json::object();
    auto mat = [](const Eigen::MatrixXd& m) {
        Json rows = Json::array();
        for (Eigen::Index s = 0; s < m.rows(); ++s) {
            Json r = Json::array();
            for (Eigen::Index l = 0; l < m.cols(); ++l) r.push_back(m(s, l));
            rows.push_back(std::move(r));
        }
        return rows;
    };
    for (const auto& [n, t] : q.trajectories) {
        Json e{{"mean", mat(t.mean)}, {"q05", mat(t.q05)}, {"q50", mat(t.q50)}, {"q95", mat(t.q95)}};
        if (q.has_deltas) {
            e["delta_mean"] = mat(t.delta_mean);
            e["delta_q05"] = mat(t.delta_q05);
            e["delta_q50"] = mat(t.delta_q50);
            e["delta_q95"] = mat(t.delta_q95);
        }
        nodes[n] = std::move(e);
    }
    Json weeks = Json::array();
    for (const auto& w : q.weeks) weeks.push_back(w.iso());
    return {{"format", "stcn.query_result/1"}, {"draws", q.draws}, {"seed", q.seed}, {"locations", q.locations},
            {"weeks", std::move(weeks)}, {"trajectories", std::move(nodes)}};
}

inline std::string to_csv(const QueryResult& q) {
    std::ostringstream os;
    os.precision(17);
    os << "node,location,step,week,mean,q05,q50,q95";
    if (q.has_deltas) os << ",delta_mean,delta_q05,delta_q50,delta_q95";
    os << "\n";
    for (const auto& n : q.nodes) {
        const auto& t = q.trajectories.at(n);
        for (Eigen::Index s = 0; s < t.mean.rows(); ++s)
            for (Eigen::Index l = 0; l < t.mean.cols(); ++l) {
                os << n << ',' << q.locations[static_cast<std::size_t>(l)] << ',' << s << ','
                   << q.weeks[static_cast<std::size_t>(s)].iso() << ',' << t.mean(s, l) << ',' << t.q05(s, l) << ','
                   << t.q50(s, l) << ',' << t.q95(s, l);
                if (q.has_deltas)
                    os << ',' << t.delta_mean(s, l) << ',' << t.delta_q05(s, l) << ',' << t.delta_q50(s, l) << ','
                       << t.delta_q95(s, l);
                os << "\n";
            }
    }
    return os.str();
}

inline Json to_json(const AttributionResult& a) {
    Json j{{"outcome", a.outcome}, {"shares", a.shares}, {"explained", a.explained}, {"fitted_variance", a.fitted_variance}};
    j["self_coefficient"] = a.self_coefficient ? Json(*a.self_coefficient) : Json(nullptr);
    return j;
}

inline Json to_json(const MediationResult& m) {
    Json j{{"no_effect", m.no_effect}, {"intact_explained", m.intact_explained},
           {"severed_explained", m.severed_explained}, {"intact_response", m.intact_response},
           {"severed_response", m.severed_response}};
    j["factor"] = m.no_effect ? Json(nullptr) : Json(m.factor);
    return j;
}

inline Json to_json(const CounterfactualResult& c) {
    Json weeks = Json::array();
    for (const auto& w : c.weeks) weeks.push_back(w.iso());
    Json delta = Json::object();
    for (const auto& [n, m] : c.delta) {
        Json rows = Json::array();
        for (Eigen::Index s = 0; s < m.rows(); ++s) {
            Json r = Json::array();
            for (Eigen::Index l = 0; l < m.cols(); ++l) r.push_back(m(s, l));
            rows.push_back(std::move(r));
        }
        delta[n] = std::move(rows);
    }
    return {{"format", "stcn.counterfactual/1"}, {"node", c.node}, {"location", c.location},
            {"anchor", c.anchor.iso()}, {"weeks", std::move(weeks)}, {"delta", std::move(delta)}};
}

} // namespace stcn
