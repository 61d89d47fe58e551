#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <mutex>
#include <string>
#include <vector>

#include "stcn/model.hpp"

namespace stcn {

struct NodeScore {
    double loglik_avg = 0.0;
    std::size_t n_used = 0;
    std::size_t param_count = 0;
    double penalty = 0.0;
    double pnal = 0.0;
};

struct ScoreBreakdown {
    std::map<std::string, NodeScore> per_node;
    double total = 0.0; // sum of per-node pnal
    double c = 0.0;
    std::size_t n = 0;
    std::uint64_t dataset_hash = 0;

    // Network score used for Bayes factors: each node contributes its score
    // averaged over its own rows, whatever its row count. Same objective as
    // the structure search.
    double total_normalized() const { return total; }
};

inline double pnal_penalty(double c, std::size_t n) { return c * std::log(static_cast<double>(n)) / 2.0; }

inline NodeScore node_score(const NodeEstimate& est, double c, std::size_t n) {
    if (est.n_used == 0) fail(ErrorKind::ZeroRows, "node '" + est.node + "' has no usable rows");
    if (!(c > 0.0)) fail(ErrorKind::InvalidArgument, "penalty coefficient must be positive");
    if (n == 0) fail(ErrorKind::ZeroRows, "dataset has no rows");
    NodeScore s;
    s.loglik_avg = est.loglik_avg;
    s.n_used = est.n_used;
    s.param_count = est.param_count();
    s.penalty = pnal_penalty(c, n) * static_cast<double>(s.param_count) / static_cast<double>(est.n_used);
    s.pnal = s.loglik_avg - s.penalty;
    return s;
}

// Penalised node-averaged likelihood of one node; n is the dataset row count.
inline double pnal_node(const NodeEstimate& est, double c, std::size_t n) { return node_score(est, c, n).pnal; }

inline std::size_t dataset_rows(const PanelDataset& ds) { return ds.n_locations() * ds.n_weeks(); }

inline ScoreBreakdown pnal_network(const CausalModel& model, const PanelDataset& ds, double c) {
    ScoreBreakdown sb;
    sb.c = c;
    sb.n = dataset_rows(ds);
    sb.dataset_hash = ds.hash();
    for (const auto& node : model.dag.nodes()) {
        const auto& est = model.estimate(node);
        auto ns = node_score(est, c, sb.n);
        sb.total += ns.pnal;
        sb.per_node[node] = ns;
    }
    return sb;
}

inline double log_bayes_factor(const ScoreBreakdown& s1, const ScoreBreakdown& s2) {
    if (s1.dataset_hash != s2.dataset_hash || s1.n != s2.n)
        fail(ErrorKind::MismatchedDatasets, "scores were computed on different datasets");
    if (s1.c != s2.c) fail(ErrorKind::MismatchedDatasets, "scores use different penalty coefficients");
    return static_cast<double>(s1.n) * (s1.total_normalized() - s2.total_normalized());
}

// BF_12 > 1 favours the first model. May overflow to infinity; use
// log_bayes_factor for reporting.
inline double bayes_factor(const ScoreBreakdown& s1, const ScoreBreakdown& s2) {
    return std::exp(log_bayes_factor(s1, s2));
}

// Memoised node fits keyed by (node, parent set). Counts actual fits so
// decomposability can be checked.
class ScoreCache {
public:
    ScoreCache(const PanelDataset& ds, FitConfig cfg, double c)
        : ds_(ds), dist_(ds.locations()), cfg_(std::move(cfg)), c_(c), n_(dataset_rows(ds)) {}

    struct Entry {
        NodeEstimate est;
        double pnal = -std::numeric_limits<double>::infinity();
        bool ok = false;
    };

    const Entry& family(const std::string& node, std::vector<ParentTerm> parents, const WarmStart* warm = nullptr) {
        std::sort(parents.begin(), parents.end());
        std::string key = node + "|";
        for (const auto& p : parents) key += p.label() + ",";
        if (auto it = cache_.find(key); it != cache_.end()) return it->second;
        ++fits_;
        Entry e;
        try {
            e.est = fit_node(ds_, dist_, node, parents, cfg_, warm);
            e.pnal = pnal_node(e.est, c_, n_);
            e.ok = std::isfinite(e.pnal);
        } catch (const Error& err) {
            if (err.kind() != ErrorKind::RankDeficient && err.kind() != ErrorKind::TooFewRows &&
                err.kind() != ErrorKind::SingularKernel)
                throw;
            e.ok = false;
        }
        return cache_.emplace(std::move(key), std::move(e)).first->second;
    }

    double score(const std::string& node, const std::vector<ParentTerm>& parents, const WarmStart* warm = nullptr) {
        return family(node, parents, warm).pnal;
    }

    std::size_t fit_count() const { return fits_; }
    double c() const { return c_; }
    std::size_t n() const { return n_; }
    const PanelDataset& dataset() const { return ds_; }
    const DistanceMatrix& distances() const { return dist_; }
    const FitConfig& fit_config() const { return cfg_; }

private:
    const PanelDataset& ds_;
    DistanceMatrix dist_;
    FitConfig cfg_;
    double c_;
    std::size_t n_;
    std::size_t fits_ = 0;
    std::map<std::string, Entry> cache_;
};

} // namespace stcn
