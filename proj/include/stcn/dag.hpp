#pragma once

#include <algorithm>
#include <compare>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "stcn/error.hpp"
#include "stcn/panel.hpp"
#include "stcn/rng.hpp"

namespace stcn {

// A parent term of a node at time t: the variable at t (lag 0) or t-1 (lag 1).
struct ParentTerm {
    std::string variable;
    int lag = 0;

    std::string label() const { return variable + (lag == 0 ? "@t" : "@t-1"); }

    static ParentTerm parse(const std::string& label) {
        if (label.size() > 4 && label.ends_with("@t-1")) return {label.substr(0, label.size() - 4), 1};
        if (label.size() > 2 && label.ends_with("@t")) return {label.substr(0, label.size() - 2), 0};
        fail(ErrorKind::ParseError, "invalid parent term '" + label + "'");
    }

    friend auto operator<=>(const ParentTerm&, const ParentTerm&) = default;
};

// Intra-slice arc (from@t -> to@t) or lag-1 arc (from@t-1 -> to@t).
struct Arc {
    std::string from;
    std::string to;
    bool lagged = false;

    std::string label() const { return from + (lagged ? "@t-1" : "@t") + " -> " + to + "@t"; }

    friend auto operator<=>(const Arc&, const Arc&) = default;
};

class TwoSliceDag {
public:
    TwoSliceDag() = default;
    explicit TwoSliceDag(std::vector<std::string> nodes) : nodes_(std::move(nodes)) {
        std::set<std::string> seen;
        for (const auto& n : nodes_)
            if (!seen.insert(n).second) fail(ErrorKind::DuplicateKey, "duplicate node '" + n + "'");
    }

    const std::vector<std::string>& nodes() const { return nodes_; }
    bool has_node(const std::string& n) const { return std::find(nodes_.begin(), nodes_.end(), n) != nodes_.end(); }

    std::size_t node_index(const std::string& n) const {
        auto it = std::find(nodes_.begin(), nodes_.end(), n);
        if (it == nodes_.end()) fail(ErrorKind::UnknownColumn, "unknown node '" + n + "'");
        return static_cast<std::size_t>(it - nodes_.begin());
    }

    bool has(const Arc& a) const { return (a.lagged ? inter_ : intra_).count({a.from, a.to}) > 0; }

    void add(const Arc& a) {
        node_index(a.from);
        node_index(a.to);
        if (!a.lagged && a.from == a.to) fail(ErrorKind::InvalidArgument, "intra-slice self loop on '" + a.from + "'");
        (a.lagged ? inter_ : intra_).insert({a.from, a.to});
    }

    void remove(const Arc& a) { (a.lagged ? inter_ : intra_).erase({a.from, a.to}); }

    std::vector<Arc> arcs() const {
        std::vector<Arc> out;
        for (const auto& [f, t] : intra_) out.push_back({f, t, false});
        for (const auto& [f, t] : inter_) out.push_back({f, t, true});
        std::sort(out.begin(), out.end());
        return out;
    }

    std::size_t arc_count() const { return intra_.size() + inter_.size(); }

    std::vector<ParentTerm> parents(const std::string& node) const {
        std::vector<ParentTerm> out;
        for (const auto& [f, t] : intra_)
            if (t == node) out.push_back({f, 0});
        for (const auto& [f, t] : inter_)
            if (t == node) out.push_back({f, 1});
        std::sort(out.begin(), out.end());
        return out;
    }

    // Kahn's algorithm over intra arcs, ties broken by node order.
    std::optional<std::vector<std::string>> topological_order() const {
        std::map<std::string, int> indeg;
        for (const auto& n : nodes_) indeg[n] = 0;
        for (const auto& [f, t] : intra_) ++indeg[t];
        std::vector<std::string> order;
        std::vector<bool> done(nodes_.size(), false);
        while (order.size() < nodes_.size()) {
            bool progressed = false;
            for (std::size_t i = 0; i < nodes_.size(); ++i) {
                if (done[i] || indeg[nodes_[i]] != 0) continue;
                done[i] = true;
                order.push_back(nodes_[i]);
                for (const auto& [f, t] : intra_)
                    if (f == nodes_[i]) --indeg[t];
                progressed = true;
                break;
            }
            if (!progressed) return std::nullopt;
        }
        return order;
    }

    bool is_acyclic() const { return topological_order().has_value(); }

    // True if `to` can reach `from` through intra arcs (adding from->to would close a cycle).
    bool reaches(const std::string& start, const std::string& target) const {
        std::vector<std::string> stack{start};
        std::set<std::string> seen{start};
        while (!stack.empty()) {
            auto cur = stack.back();
            stack.pop_back();
            if (cur == target) return true;
            for (const auto& [f, t] : intra_)
                if (f == cur && seen.insert(t).second) stack.push_back(t);
        }
        return false;
    }

    std::uint64_t signature() const {
        std::uint64_t h = 0xcbf29ce484222325ULL;
        for (const auto& [f, t] : intra_) h = fnv1a(f + ">" + t + ";", h);
        h = fnv1a("|", h);
        for (const auto& [f, t] : inter_) h = fnv1a(f + ">" + t + ";", h);
        return h;
    }

    friend bool operator==(const TwoSliceDag& a, const TwoSliceDag& b) {
        return a.nodes_ == b.nodes_ && a.intra_ == b.intra_ && a.inter_ == b.inter_;
    }

private:
    std::vector<std::string> nodes_;
    std::set<std::pair<std::string, std::string>> intra_;
    std::set<std::pair<std::string, std::string>> inter_;
};

// Structural Hamming distance: a reversed intra arc counts once.
inline std::size_t structural_hamming_distance(const TwoSliceDag& a, const TwoSliceDag& b) {
    std::size_t d = 0;
    std::set<std::pair<std::string, std::string>> pairs;
    for (const auto& arc : a.arcs())
        if (!arc.lagged) pairs.insert(std::minmax(arc.from, arc.to));
    for (const auto& arc : b.arcs())
        if (!arc.lagged) pairs.insert(std::minmax(arc.from, arc.to));
    for (const auto& [x, y] : pairs) {
        const int sa = a.has({x, y, false}) ? 1 : (a.has({y, x, false}) ? 2 : 0);
        const int sb = b.has({x, y, false}) ? 1 : (b.has({y, x, false}) ? 2 : 0);
        if (sa != sb) ++d;
    }
    for (const auto& arc : a.arcs())
        if (arc.lagged && !b.has(arc)) ++d;
    for (const auto& arc : b.arcs())
        if (arc.lagged && !a.has(arc)) ++d;
    return d;
}

struct ConstraintSet {
    std::map<std::string, VariableSpec> variables;
    std::set<Arc> blacklist;
    std::set<Arc> whitelist;

    void validate() const {
        for (const auto& a : whitelist)
            if (blacklist.count(a)) fail(ErrorKind::Unsatisfiable, "arc " + a.label() + " is both black- and whitelisted");
    }
};

// Tier ordering from the variable specs, blacklists between distinct
// demographic variables and between distinct pollutants, and whitelisted
// autoregression for dynamic condition variables.
inline ConstraintSet default_constraints(const std::vector<VariableSpec>& vars, bool whitelist_condition_self_loops = true) {
    ConstraintSet cs;
    for (const auto& v : vars) cs.variables[v.name] = v;
    for (const auto& a : vars)
        for (const auto& b : vars) {
            if (a.name == b.name || a.tier != b.tier) continue;
            if (a.tier == Tier::demographic || a.tier == Tier::pollutant) {
                cs.blacklist.insert({a.name, b.name, false});
                cs.blacklist.insert({a.name, b.name, true});
            }
        }
    if (whitelist_condition_self_loops)
        for (const auto& v : vars)
            if (v.tier == Tier::condition && !v.is_static) cs.whitelist.insert({v.name, v.name, true});
    return cs;
}

struct Violation {
    enum class Kind { tier, blacklist, cycle, static_target };
    Kind kind;
    Arc arc;
    std::string message;
};

inline std::string_view to_string(Violation::Kind k) {
    switch (k) {
    case Violation::Kind::tier: return "tier";
    case Violation::Kind::blacklist: return "blacklist";
    case Violation::Kind::cycle: return "cycle";
    case Violation::Kind::static_target: return "static";
    }
    return "unknown";
}

// Violation of a single arc, ignoring acyclicity.
inline std::optional<Violation> arc_violation(const Arc& a, const ConstraintSet& cs) {
    if (cs.blacklist.count(a)) return Violation{Violation::Kind::blacklist, a, a.label() + " is blacklisted"};
    auto fi = cs.variables.find(a.from), ti = cs.variables.find(a.to);
    if (fi != cs.variables.end() && ti != cs.variables.end()) {
        if (tier_rank(fi->second.tier) > tier_rank(ti->second.tier))
            return Violation{Violation::Kind::tier, a,
                             a.label() + " points from tier " + std::string(to_string(fi->second.tier)) + " to tier " +
                                 std::string(to_string(ti->second.tier))};
        const bool from_static = fi->second.is_static, to_static = ti->second.is_static;
        if (to_static && !from_static)
            return Violation{Violation::Kind::static_target, a, a.label() + " points into a static variable"};
        if (a.lagged && (from_static || to_static))
            return Violation{Violation::Kind::static_target, a, a.label() + " is a lagged arc on a static variable"};
    }
    return std::nullopt;
}

inline std::vector<Violation> validate_constraints(const TwoSliceDag& dag, const ConstraintSet& cs) {
    std::vector<Violation> out;
    for (const auto& a : dag.arcs())
        if (auto v = arc_violation(a, cs)) out.push_back(*v);
    if (!dag.is_acyclic()) {
        for (const auto& a : dag.arcs())
            if (!a.lagged && dag.reaches(a.to, a.from))
                out.push_back({Violation::Kind::cycle, a, a.label() + " lies on a contemporaneous cycle"});
    }
    return out;
}

} // namespace stcn
