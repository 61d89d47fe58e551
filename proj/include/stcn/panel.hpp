#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "stcn/date.hpp"
#include "stcn/error.hpp"
#include "stcn/rng.hpp"

namespace stcn {

inline constexpr int kDaysPerWeek = 7;

enum class Tier { demographic, weather, pollutant, condition };

inline std::string_view to_string(Tier t) {
    switch (t) {
    case Tier::demographic: return "demographic";
    case Tier::weather: return "weather";
    case Tier::pollutant: return "pollutant";
    case Tier::condition: return "condition";
    }
    return "condition";
}

inline Tier parse_tier(std::string_view s) {
    if (s == "demographic") return Tier::demographic;
    if (s == "weather") return Tier::weather;
    if (s == "pollutant") return Tier::pollutant;
    if (s == "condition") return Tier::condition;
    fail(ErrorKind::ParseError, "unknown tier '" + std::string(s) + "'");
}

// Demographic and weather variables share the top of the ordering.
inline int tier_rank(Tier t) {
    switch (t) {
    case Tier::demographic:
    case Tier::weather: return 0;
    case Tier::pollutant: return 1;
    case Tier::condition: return 2;
    }
    return 2;
}

struct Location {
    std::string id;
    double lat = 0.0;
    double lon = 0.0;
    std::string group;
    // Bootstrap copy index. Sites on different replicates are modelled as
    // spatially independent.
    int replicate = 0;

    friend bool operator==(const Location&, const Location&) = default;
};

struct VariableSpec {
    std::string name;
    Tier tier = Tier::condition;
    bool is_static = false;

    friend bool operator==(const VariableSpec&, const VariableSpec&) = default;
};

inline double missing_value() { return std::numeric_limits<double>::quiet_NaN(); }

// Locations x weeks x variables with an explicit missingness mask. Immutable
// once constructed; every constructor path validates the invariants.
class PanelDataset {
public:
    PanelDataset() = default;

    PanelDataset(std::vector<Location> locations, std::vector<Date> weeks,
                 std::vector<VariableSpec> variables, std::vector<double> values,
                 std::vector<std::uint8_t> missing)
        : locations_(std::move(locations)), weeks_(std::move(weeks)),
          variables_(std::move(variables)), values_(std::move(values)), missing_(std::move(missing)) {
        validate();
    }

    std::size_t n_locations() const { return locations_.size(); }
    std::size_t n_weeks() const { return weeks_.size(); }
    std::size_t n_variables() const { return variables_.size(); }
    std::size_t n_cells() const { return values_.size(); }

    const std::vector<Location>& locations() const { return locations_; }
    const std::vector<Date>& weeks() const { return weeks_; }
    const std::vector<VariableSpec>& variables() const { return variables_; }
    const std::vector<double>& values() const { return values_; }
    const std::vector<std::uint8_t>& missing_mask() const { return missing_; }

    std::size_t index(std::size_t loc, std::size_t week, std::size_t var) const {
        return (loc * weeks_.size() + week) * variables_.size() + var;
    }

    bool missing(std::size_t loc, std::size_t week, std::size_t var) const {
        return missing_[index(loc, week, var)] != 0;
    }
    bool observed(std::size_t loc, std::size_t week, std::size_t var) const { return !missing(loc, week, var); }

    // NaN when missing.
    double value(std::size_t loc, std::size_t week, std::size_t var) const { return values_[index(loc, week, var)]; }

    std::optional<std::size_t> find_variable(std::string_view name) const {
        for (std::size_t v = 0; v < variables_.size(); ++v)
            if (variables_[v].name == name) return v;
        return std::nullopt;
    }

    std::size_t variable_index(std::string_view name) const {
        if (auto v = find_variable(name)) return *v;
        fail(ErrorKind::UnknownColumn, "unknown variable '" + std::string(name) + "'");
    }

    std::optional<std::size_t> find_location(std::string_view id) const {
        for (std::size_t l = 0; l < locations_.size(); ++l)
            if (locations_[l].id == id) return l;
        return std::nullopt;
    }

    std::optional<std::size_t> find_week(Date d) const {
        auto it = std::lower_bound(weeks_.begin(), weeks_.end(), d);
        if (it == weeks_.end() || *it != d) return std::nullopt;
        return static_cast<std::size_t>(it - weeks_.begin());
    }

    std::vector<std::string> groups() const {
        std::set<std::string> g;
        for (const auto& l : locations_) g.insert(l.group);
        return {g.begin(), g.end()};
    }

    std::size_t missing_count() const {
        return static_cast<std::size_t>(std::count(missing_.begin(), missing_.end(), std::uint8_t{1}));
    }

    // Selects locations, weeks and variables by index (each list in the
    // desired output order). Selected weeks must keep uniform spacing.
    PanelDataset subset(const std::vector<std::size_t>& locs, const std::vector<std::size_t>& wks,
                        const std::vector<std::size_t>& vars) const {
        std::vector<Location> l_out;
        for (auto l : locs) l_out.push_back(locations_.at(l));
        std::vector<Date> w_out;
        for (auto w : wks) w_out.push_back(weeks_.at(w));
        std::vector<VariableSpec> v_out;
        for (auto v : vars) v_out.push_back(variables_.at(v));
        std::vector<double> vals;
        std::vector<std::uint8_t> mask;
        vals.reserve(locs.size() * wks.size() * vars.size());
        mask.reserve(vals.capacity());
        for (auto l : locs)
            for (auto w : wks)
                for (auto v : vars) {
                    vals.push_back(values_[index(l, w, v)]);
                    mask.push_back(missing_[index(l, w, v)]);
                }
        return PanelDataset(std::move(l_out), std::move(w_out), std::move(v_out), std::move(vals), std::move(mask));
    }

    PanelDataset select_locations(const std::vector<std::size_t>& locs) const {
        return subset(locs, iota(weeks_.size()), iota(variables_.size()));
    }
    PanelDataset select_weeks(const std::vector<std::size_t>& wks) const {
        return subset(iota(locations_.size()), wks, iota(variables_.size()));
    }
    PanelDataset select_variables(const std::vector<std::size_t>& vars) const {
        return subset(iota(locations_.size()), iota(weeks_.size()), vars);
    }

    // Same data with a different location table (used for bootstrap copies).
    PanelDataset with_locations(std::vector<Location> locs) const {
        if (locs.size() != locations_.size())
            fail(ErrorKind::DimensionMismatch, "location table size mismatch");
        return PanelDataset(std::move(locs), weeks_, variables_, values_, missing_);
    }

    // Overlays an additional missingness mask (true = hide the cell).
    PanelDataset with_extra_missing(const std::vector<std::uint8_t>& extra) const {
        if (extra.size() != missing_.size()) fail(ErrorKind::DimensionMismatch, "mask size mismatch");
        auto vals = values_;
        auto mask = missing_;
        for (std::size_t i = 0; i < mask.size(); ++i)
            if (extra[i]) {
                mask[i] = 1;
                vals[i] = missing_value();
            }
        return PanelDataset(locations_, weeks_, variables_, std::move(vals), std::move(mask));
    }

    // Content hash over keys, coordinates, values and mask.
    std::uint64_t hash() const {
        std::uint64_t h = 0xcbf29ce484222325ULL;
        auto mix_u64 = [&](std::uint64_t x) {
            h = fnv1a(std::string_view(reinterpret_cast<const char*>(&x), sizeof x), h);
        };
        for (const auto& l : locations_) {
            h = fnv1a(l.id, h);
            h = fnv1a(l.group, h);
            mix_u64(std::bit_cast<std::uint64_t>(l.lat));
            mix_u64(std::bit_cast<std::uint64_t>(l.lon));
            mix_u64(static_cast<std::uint64_t>(l.replicate));
        }
        for (const auto& w : weeks_) mix_u64(static_cast<std::uint64_t>(w.days()));
        for (const auto& v : variables_) {
            h = fnv1a(v.name, h);
            mix_u64(static_cast<std::uint64_t>(tier_rank(v.tier)) * 2 + (v.is_static ? 1 : 0));
        }
        for (std::size_t i = 0; i < values_.size(); ++i) {
            mix_u64(missing_[i] ? 0x7ff8dead00000000ULL : std::bit_cast<std::uint64_t>(values_[i]));
        }
        return h;
    }

    friend bool operator==(const PanelDataset& a, const PanelDataset& b) {
        if (a.locations_ != b.locations_ || a.weeks_ != b.weeks_ || a.variables_ != b.variables_ ||
            a.missing_ != b.missing_)
            return false;
        for (std::size_t i = 0; i < a.values_.size(); ++i) {
            if (a.missing_[i]) continue;
            if (std::bit_cast<std::uint64_t>(a.values_[i]) != std::bit_cast<std::uint64_t>(b.values_[i])) return false;
        }
        return true;
    }

    static std::vector<std::size_t> iota(std::size_t n) {
        std::vector<std::size_t> out(n);
        for (std::size_t i = 0; i < n; ++i) out[i] = i;
        return out;
    }

private:
    void validate() {
        if (locations_.empty() || weeks_.empty() || variables_.empty())
            fail(ErrorKind::InvalidArgument, "dataset needs at least one location, week and variable");
        const std::size_t expected = locations_.size() * weeks_.size() * variables_.size();
        if (values_.size() != expected || missing_.size() != expected)
            fail(ErrorKind::DimensionMismatch, "value/mask size does not match locations x weeks x variables");

        std::set<std::string> ids;
        for (const auto& l : locations_) {
            if (!ids.insert(l.id).second) fail(ErrorKind::DuplicateKey, "duplicate location id '" + l.id + "'");
            if (!(l.lat >= -90.0 && l.lat <= 90.0) || !(l.lon >= -180.0 && l.lon <= 180.0))
                fail(ErrorKind::CoordinateOutOfBounds, "coordinates out of bounds for location '" + l.id + "'");
        }
        for (std::size_t w = 1; w < weeks_.size(); ++w) {
            if (weeks_[w].days() - weeks_[w - 1].days() != kDaysPerWeek)
                fail(ErrorKind::NonUniformWeeks, "week starts " + weeks_[w - 1].iso() + " and " + weeks_[w].iso() +
                                                     " are not 7 days apart");
        }
        std::set<std::string> names;
        for (const auto& v : variables_)
            if (!names.insert(v.name).second) fail(ErrorKind::DuplicateKey, "duplicate variable '" + v.name + "'");

        for (std::size_t i = 0; i < values_.size(); ++i) {
            if (missing_[i] > 1) fail(ErrorKind::InvalidArgument, "mask entries must be 0 or 1");
            if (missing_[i]) {
                values_[i] = missing_value();
            } else if (!std::isfinite(values_[i])) {
                fail(ErrorKind::InvalidArgument, "observed value is not finite");
            }
        }
        for (std::size_t v = 0; v < variables_.size(); ++v) {
            if (!variables_[v].is_static) continue;
            for (std::size_t l = 0; l < locations_.size(); ++l) {
                std::optional<double> first;
                for (std::size_t w = 0; w < weeks_.size(); ++w) {
                    if (missing(l, w, v)) continue;
                    double x = value(l, w, v);
                    if (!first) first = x;
                    else if (x != *first)
                        fail(ErrorKind::NonStaticValue, "static variable '" + variables_[v].name +
                                                            "' varies over time at '" + locations_[l].id + "'");
                }
            }
        }
    }

    std::vector<Location> locations_;
    std::vector<Date> weeks_;
    std::vector<VariableSpec> variables_;
    std::vector<double> values_;
    std::vector<std::uint8_t> missing_;
};

} // namespace stcn
