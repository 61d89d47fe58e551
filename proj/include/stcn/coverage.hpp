#pragma once

#include <string>
#include <vector>

#include "stcn/panel.hpp"

namespace stcn {

namespace detail {

struct CoverageCounts {
    std::vector<std::size_t> var_missing, loc_missing, week_missing;
};

inline CoverageCounts count_missing(const PanelDataset& ds, const std::vector<std::size_t>& locs,
                                    const std::vector<std::size_t>& weeks, const std::vector<std::size_t>& vars) {
    CoverageCounts c{std::vector<std::size_t>(vars.size(), 0), std::vector<std::size_t>(locs.size(), 0),
                     std::vector<std::size_t>(weeks.size(), 0)};
    for (std::size_t a = 0; a < locs.size(); ++a)
        for (std::size_t b = 0; b < weeks.size(); ++b)
            for (std::size_t v = 0; v < vars.size(); ++v)
                if (ds.missing(locs[a], weeks[b], vars[v])) {
                    ++c.var_missing[v];
                    ++c.loc_missing[a];
                    ++c.week_missing[b];
                }
    return c;
}

} // namespace detail

// Greedy coverage filter. Each round drops the worst offending variable; if
// none offends, the worst location; if none, the worse of the two boundary
// weeks (interior weeks are never dropped so spacing stays uniform). Ties go
// to the lexicographically smallest name/id, or the earlier week.
inline PanelDataset filter_coverage(const PanelDataset& ds, double max_missing = 0.5) {
    if (!(max_missing > 0.0 && max_missing <= 1.0)) fail(ErrorKind::InvalidArgument, "max_missing must lie in (0, 1]");
    auto locs = PanelDataset::iota(ds.n_locations());
    auto weeks = PanelDataset::iota(ds.n_weeks());
    auto vars = PanelDataset::iota(ds.n_variables());

    auto worst = [&](const std::vector<std::size_t>& missing, std::size_t cells, auto name_of) -> std::optional<std::size_t> {
        std::optional<std::size_t> best;
        double best_frac = max_missing;
        for (std::size_t i = 0; i < missing.size(); ++i) {
            const double f = static_cast<double>(missing[i]) / static_cast<double>(cells);
            if (f <= max_missing) continue;
            if (!best || f > best_frac || (f == best_frac && name_of(i) < name_of(*best))) {
                best = i;
                best_frac = f;
            }
        }
        return best;
    };

    while (!locs.empty() && !weeks.empty() && !vars.empty()) {
        const auto c = detail::count_missing(ds, locs, weeks, vars);
        if (auto v = worst(c.var_missing, locs.size() * weeks.size(),
                           [&](std::size_t i) { return ds.variables()[vars[i]].name; })) {
            vars.erase(vars.begin() + static_cast<std::ptrdiff_t>(*v));
            continue;
        }
        if (auto l = worst(c.loc_missing, weeks.size() * vars.size(),
                           [&](std::size_t i) { return ds.locations()[locs[i]].id; })) {
            locs.erase(locs.begin() + static_cast<std::ptrdiff_t>(*l));
            continue;
        }
        const double cells = static_cast<double>(locs.size() * vars.size());
        const double first = static_cast<double>(c.week_missing.front()) / cells;
        const double last = static_cast<double>(c.week_missing.back()) / cells;
        if (first > max_missing && first >= last) weeks.erase(weeks.begin());
        else if (last > max_missing) weeks.pop_back();
        else break;
    }
    if (locs.empty() || weeks.empty() || vars.empty())
        fail(ErrorKind::ExhaustedDataset, "coverage filter removed every location, week or variable");
    if (locs.size() == ds.n_locations() && weeks.size() == ds.n_weeks() && vars.size() == ds.n_variables()) return ds;
    return ds.subset(locs, weeks, vars);
}

} // namespace stcn
