#pragma once

#include <algorithm>
#include <cassert>
#include <deque>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include "stcn/dag.hpp"
#include "stcn/model.hpp"
#include "stcn/parallel.hpp"
#include "stcn/rng.hpp"
#include "stcn/score.hpp"

namespace stcn {

struct SearchConfig {
    std::size_t tenure = 10;
    std::size_t patience = 100;
    std::size_t restarts = 5;
    std::size_t perturb_moves = 4;
    std::size_t bootstrap = 100;
    double threshold = 0.5;
    std::uint64_t seed = 0;
    unsigned threads = 1;
    FitConfig fit;
};

enum class MoveKind { add, remove, reverse };

struct Move {
    MoveKind kind;
    Arc arc;

    friend auto operator<=>(const Move&, const Move&) = default;
};

struct LearnResult {
    TwoSliceDag dag;
    ScoreBreakdown score;
    std::vector<double> accepted_scores; // network score after every accepted move, first entry = start
    std::size_t moves = 0;
    std::size_t fits = 0;
};

namespace detail {

inline TwoSliceDag apply_move(TwoSliceDag dag, const Move& m) {
    switch (m.kind) {
    case MoveKind::add: dag.add(m.arc); break;
    case MoveKind::remove: dag.remove(m.arc); break;
    case MoveKind::reverse:
        dag.remove(m.arc);
        dag.add({m.arc.to, m.arc.from, false});
        break;
    }
    return dag;
}

// Moves that keep the DAG inside the constraint set, in a fixed order.
inline std::vector<Move> admissible_moves(const TwoSliceDag& dag, const ConstraintSet& cs) {
    std::vector<Move> out;
    const auto& nodes = dag.nodes();
    for (const auto& a : dag.arcs()) {
        if (cs.whitelist.count(a)) continue;
        out.push_back({MoveKind::remove, a});
        if (a.lagged) continue;
        const Arc rev{a.to, a.from, false};
        if (arc_violation(rev, cs)) continue;
        auto d = dag;
        d.remove(a);
        if (!d.reaches(a.to, a.from)) out.push_back({MoveKind::reverse, a});
    }
    for (const auto& f : nodes)
        for (const auto& t : nodes) {
            for (bool lagged : {false, true}) {
                if (!lagged && f == t) continue;
                const Arc a{f, t, lagged};
                if (dag.has(a) || arc_violation(a, cs)) continue;
                if (!lagged && (dag.has({t, f, false}) || dag.reaches(t, f))) continue;
                out.push_back({MoveKind::add, a});
            }
        }
    std::sort(out.begin(), out.end());
    return out;
}

inline std::vector<std::string> touched_nodes(const Move& m) {
    if (m.kind == MoveKind::reverse) return {m.arc.to, m.arc.from};
    return {m.arc.to};
}

class SearchState {
public:
    SearchState(ScoreCache& cache, TwoSliceDag dag) : cache_(cache), dag_(std::move(dag)) {
        for (const auto& n : dag_.nodes()) node_score_[n] = family(n, dag_.parents(n)).pnal;
    }

    const TwoSliceDag& dag() const { return dag_; }

    double total() const {
        double s = 0.0;
        for (const auto& [n, v] : node_score_) s += v;
        return s;
    }

    // Score change of a move; -inf when any refit fails.
    double delta(const Move& m) {
        const auto next = apply_move(dag_, m);
        double d = 0.0;
        for (const auto& n : touched_nodes(m)) d += family(n, next.parents(n)).pnal - node_score_.at(n);
        return d;
    }

    void apply(const Move& m) {
        dag_ = apply_move(dag_, m);
        for (const auto& n : touched_nodes(m)) node_score_[n] = family(n, dag_.parents(n)).pnal;
    }

    void reset(TwoSliceDag dag) {
        dag_ = std::move(dag);
        for (const auto& n : dag_.nodes()) node_score_[n] = family(n, dag_.parents(n)).pnal;
    }

    const ScoreCache::Entry& family(const std::string& node, const std::vector<ParentTerm>& parents) {
        WarmStart warm;
        const WarmStart* wp = nullptr;
        if (auto it = current_.find(node); it != current_.end() && it->second->ok) {
            warm.group_variances = it->second->est.group_variances;
            warm.kernel = it->second->est.kernel;
            wp = &warm;
        }
        const auto& e = cache_.family(node, parents, wp);
        if (parents == dag_.parents(node)) current_[node] = &e;
        return e;
    }

private:
    ScoreCache& cache_;
    TwoSliceDag dag_;
    std::map<std::string, double> node_score_;
    std::map<std::string, const ScoreCache::Entry*> current_;
};

inline TwoSliceDag starting_dag(const PanelDataset& ds, const ConstraintSet& cs) {
    std::vector<std::string> names;
    for (const auto& v : ds.variables()) names.push_back(v.name);
    TwoSliceDag dag(names);
    for (const auto& a : cs.whitelist) {
        if (!dag.has_node(a.from) || !dag.has_node(a.to))
            fail(ErrorKind::Unsatisfiable, "whitelisted arc " + a.label() + " names an unknown variable");
        if (auto v = arc_violation(a, cs)) fail(ErrorKind::Unsatisfiable, "whitelisted arc violates constraints: " + v->message);
        dag.add(a);
    }
    if (!dag.is_acyclic()) fail(ErrorKind::Unsatisfiable, "whitelisted arcs form a contemporaneous cycle");
    return dag;
}

inline ScoreBreakdown breakdown(ScoreCache& cache, const TwoSliceDag& dag) {
    ScoreBreakdown sb;
    sb.c = cache.c();
    sb.n = cache.n();
    sb.dataset_hash = cache.dataset().hash();
    for (const auto& n : dag.nodes()) {
        const auto& e = cache.family(n, dag.parents(n));
        if (!e.ok) fail(ErrorKind::RankDeficient, "final family of '" + n + "' could not be fitted");
        auto ns = node_score(e.est, sb.c, sb.n);
        sb.total += ns.pnal;
        sb.per_node[n] = ns;
    }
    return sb;
}

} // namespace detail

// Tabu search from the whitelist-only graph, followed by `restarts`
// perturbed restarts from the best graph found. Each pass takes the best
// non-tabu admissible move (ties go to the first move in arc order) and
// stops after `patience` moves without improving the pass's best score.
inline LearnResult tabu_learn(const PanelDataset& ds, const ConstraintSet& cs, double c, const SearchConfig& cfg,
                              ScoreCache* shared_cache = nullptr) {
    cs.validate();
    std::optional<ScoreCache> own;
    if (!shared_cache) own.emplace(ds, cfg.fit, c);
    ScoreCache& cache = shared_cache ? *shared_cache : *own;
    const std::size_t fits_before = cache.fit_count();

    const auto start = detail::starting_dag(ds, cs);
    if (detail::admissible_moves(start, cs).empty())
        fail(ErrorKind::Unsatisfiable, "no admissible move from the starting graph");

    detail::SearchState state(cache, start);
    LearnResult res;
    TwoSliceDag best = start;
    double best_score = state.total();
    res.accepted_scores.push_back(best_score);

    NormalSource rng(make_stream(cfg.seed, 0x74616275ULL));
    for (std::size_t pass = 0; pass <= cfg.restarts; ++pass) {
        if (pass > 0) {
            auto dag = best;
            for (std::size_t k = 0; k < cfg.perturb_moves; ++k) {
                const auto moves = detail::admissible_moves(dag, cs);
                if (moves.empty()) break;
                dag = detail::apply_move(dag, moves[static_cast<std::size_t>(rng.uniform() * static_cast<double>(moves.size()))]);
            }
            state.reset(dag);
        }
        std::deque<std::uint64_t> tabu{state.dag().signature()};
        double pass_best = state.total();
        std::size_t stale = 0;
        while (stale < cfg.patience) {
            const auto moves = detail::admissible_moves(state.dag(), cs);
            std::optional<Move> chosen;
            double chosen_delta = -std::numeric_limits<double>::infinity();
            for (const auto& m : moves) {
                const auto next = detail::apply_move(state.dag(), m);
                if (std::find(tabu.begin(), tabu.end(), next.signature()) != tabu.end()) continue;
                const double d = state.delta(m);
                if (d > chosen_delta) {
                    chosen_delta = d;
                    chosen = m;
                }
            }
            if (!chosen || !std::isfinite(chosen_delta)) break;
            state.apply(*chosen);
#ifndef NDEBUG
            assert(validate_constraints(state.dag(), cs).empty());
#endif
            ++res.moves;
            tabu.push_back(state.dag().signature());
            while (tabu.size() > cfg.tenure) tabu.pop_front();
            const double now = state.total();
            if (now > pass_best) {
                pass_best = now;
                stale = 0;
            } else {
                ++stale;
            }
            if (now > best_score) {
                best_score = now;
                best = state.dag();
                res.accepted_scores.push_back(now);
            }
        }
    }
    res.dag = best;
    res.score = detail::breakdown(cache, best);
    res.fits = cache.fit_count() - fits_before;
    return res;
}

struct AveragedDag {
    std::map<Arc, double> arc_strengths;
    double threshold = 0.5;
    std::size_t replicates = 0;
    TwoSliceDag consensus;

    double strength(const Arc& a) const {
        auto it = arc_strengths.find(a);
        return it == arc_strengths.end() ? 0.0 : it->second;
    }
};

// Resamples whole locations with replacement. Repeated draws of a site get
// the id suffix "#k" and replicate index k so they are treated as
// independent sites.
inline PanelDataset bootstrap_locations(const PanelDataset& ds, std::uint64_t seed, std::uint64_t replicate) {
    NormalSource rng(make_stream(seed, 0x626f6f74ULL + replicate));
    const std::size_t n = ds.n_locations();
    std::vector<std::size_t> pick(n);
    for (auto& p : pick) p = static_cast<std::size_t>(rng.uniform() * static_cast<double>(n)) % n;
    std::sort(pick.begin(), pick.end());
    const std::size_t W = ds.n_weeks(), V = ds.n_variables();
    std::vector<Location> locs;
    std::vector<double> vals;
    std::vector<std::uint8_t> mask;
    vals.reserve(n * W * V);
    mask.reserve(n * W * V);
    std::map<std::string, int> seen;
    for (auto p : pick) {
        Location l = ds.locations()[p];
        const int k = seen[l.id]++;
        if (k > 0) {
            l.id += "#" + std::to_string(k);
            l.replicate = k;
        }
        locs.push_back(std::move(l));
        for (std::size_t w = 0; w < W; ++w)
            for (std::size_t v = 0; v < V; ++v) {
                vals.push_back(ds.value(p, w, v));
                mask.push_back(ds.missing(p, w, v) ? 1 : 0);
            }
    }
    return PanelDataset(std::move(locs), ds.weeks(), ds.variables(), std::move(vals), std::move(mask));
}

// Drops the weakest arc on a contemporaneous cycle until the graph is
// acyclic. Ties drop the arc that sorts last.
inline void repair_cycles(TwoSliceDag& dag, const std::map<Arc, double>& strengths) {
    while (!dag.is_acyclic()) {
        std::optional<Arc> weakest;
        double w = std::numeric_limits<double>::infinity();
        for (const auto& a : dag.arcs()) {
            if (a.lagged || !dag.reaches(a.to, a.from)) continue;
            auto it = strengths.find(a);
            const double s = it == strengths.end() ? 0.0 : it->second;
            if (s <= w) {
                w = s;
                weakest = a;
            }
        }
        dag.remove(*weakest);
    }
}

inline AveragedDag consensus_dag(const std::vector<std::string>& nodes, std::map<Arc, double> strengths,
                                 double threshold, std::size_t replicates) {
    AveragedDag avg;
    avg.threshold = threshold;
    avg.replicates = replicates;
    avg.consensus = TwoSliceDag(nodes);
    for (const auto& [a, s] : strengths)
        if (s >= threshold) avg.consensus.add(a);
    repair_cycles(avg.consensus, strengths);
    avg.arc_strengths = std::move(strengths);
    return avg;
}

inline AveragedDag bootstrap_average(const PanelDataset& ds, const ConstraintSet& cs, double c, const SearchConfig& cfg) {
    if (cfg.bootstrap < 1) fail(ErrorKind::InvalidArgument, "bootstrap count must be at least 1");
    if (!(cfg.threshold >= 0.0 && cfg.threshold <= 1.0)) fail(ErrorKind::InvalidArgument, "threshold must lie in [0, 1]");
    std::vector<TwoSliceDag> found(cfg.bootstrap);
    parallel_for(cfg.bootstrap, cfg.threads, [&](std::size_t b) {
        auto sample = bootstrap_locations(ds, cfg.seed, b);
        SearchConfig sc = cfg;
        sc.seed = splitmix64(cfg.seed + 0x9e37ULL * (b + 1));
        found[b] = tabu_learn(sample, cs, c, sc).dag;
    });
    std::map<Arc, double> strengths;
    for (const auto& d : found)
        for (const auto& a : d.arcs()) strengths[a] += 1.0;
    for (auto& [a, s] : strengths) s /= static_cast<double>(cfg.bootstrap);
    std::vector<std::string> nodes;
    for (const auto& v : ds.variables()) nodes.push_back(v.name);
    return consensus_dag(nodes, std::move(strengths), cfg.threshold, cfg.bootstrap);
}

inline Json to_json(const Arc& a) { return {{"from", a.from}, {"to", a.to}, {"lagged", a.lagged}}; }

inline Arc arc_from_json(const Json& j) {
    return {j.at("from").get<std::string>(), j.at("to").get<std::string>(), j.at("lagged").get<bool>()};
}

inline Json to_json(const AveragedDag& avg) {
    Json arcs = Json::array();
    for (const auto& [a, s] : avg.arc_strengths) {
        Json e = to_json(a);
        e["strength"] = s;
        arcs.push_back(std::move(e));
    }
    return {{"format", "stcn.averaged_dag/1"},
            {"threshold", avg.threshold},
            {"replicates", avg.replicates},
            {"strengths", std::move(arcs)},
            {"consensus", to_json(avg.consensus)}};
}

inline AveragedDag averaged_dag_from_json(const Json& j) {
    AveragedDag avg;
    avg.threshold = j.at("threshold").get<double>();
    avg.replicates = j.at("replicates").get<std::size_t>();
    for (const auto& e : j.at("strengths")) avg.arc_strengths[arc_from_json(e)] = e.at("strength").get<double>();
    avg.consensus = dag_from_json(j.at("consensus"));
    return avg;
}

inline Json to_json(const ScoreBreakdown& sb) {
    Json nodes = Json::object();
    for (const auto& [n, s] : sb.per_node)
        nodes[n] = {{"loglik_avg", s.loglik_avg}, {"n_used", s.n_used}, {"param_count", s.param_count},
                    {"penalty", s.penalty}, {"pnal", s.pnal}};
    return {{"c", sb.c}, {"n", sb.n}, {"dataset_hash", hex64(sb.dataset_hash)}, {"total", sb.total},
            {"total_normalized", sb.total_normalized()}, {"nodes", std::move(nodes)}};
}

} // namespace stcn
