#pragma once

#include <charconv>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <system_error>
#include <vector>

#include "json.hpp"
#include "stcn/panel.hpp"

namespace stcn {

using Json = nlohmann::json;

// Maps CSV columns onto roles. Columns not claimed by a role are variables;
// `variables` only carries metadata (tier, static flag) for them.
struct PanelSchema {
    std::string id_column = "id";
    std::string week_column = "week_start";
    std::string lat_column = "lat";
    std::string lon_column = "lon";
    std::string group_column = "group";
    std::map<std::string, VariableSpec> variables;

    static PanelSchema from_json(const Json& j) {
        PanelSchema s;
        if (j.contains("columns")) {
            const auto& c = j.at("columns");
            s.id_column = c.value("id", s.id_column);
            s.week_column = c.value("week_start", s.week_column);
            s.lat_column = c.value("lat", s.lat_column);
            s.lon_column = c.value("lon", s.lon_column);
            s.group_column = c.value("group", s.group_column);
        }
        if (j.contains("variables")) {
            for (const auto& [name, meta] : j.at("variables").items()) {
                VariableSpec v;
                v.name = name;
                v.tier = parse_tier(meta.value("tier", std::string("condition")));
                v.is_static = meta.value("static", false);
                s.variables[name] = v;
            }
        }
        return s;
    }

    Json to_json() const {
        Json vars = Json::object();
        for (const auto& [name, v] : variables)
            vars[name] = {{"tier", std::string(to_string(v.tier))}, {"static", v.is_static}};
        return {{"columns",
                 {{"id", id_column},
                  {"week_start", week_column},
                  {"lat", lat_column},
                  {"lon", lon_column},
                  {"group", group_column}}},
                {"variables", vars}};
    }
};

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        char c = line[i];
        if (quoted) {
            if (c == '"') {
                if (i + 1 < line.size() && line[i + 1] == '"') {
                    cur += '"';
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                cur += c;
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            out.push_back(std::move(cur));
            cur.clear();
        } else {
            cur += c;
        }
    }
    out.push_back(std::move(cur));
    return out;
}

inline double parse_double(const std::string& text, const std::string& what) {
    double x = 0.0;
    const char* begin = text.data();
    const char* end = text.data() + text.size();
    while (begin < end && *begin == ' ') ++begin;
    while (end > begin && end[-1] == ' ') --end;
    if (begin < end && *begin == '+') ++begin;
    auto [ptr, ec] = std::from_chars(begin, end, x);
    if (ec != std::errc{} || ptr != end || !std::isfinite(x))
        fail(ErrorKind::ParseError, "cannot parse '" + text + "' as a number in " + what);
    return x;
}

inline std::string format_double(double x) {
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, x);
    return std::string(buf, ptr);
}

inline std::string csv_escape(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + "\"";
}

} // namespace detail

inline PanelDataset read_panel_csv(std::istream& in, const PanelSchema& schema) {
    std::string line;
    if (!std::getline(in, line)) fail(ErrorKind::ParseError, "empty CSV (missing header)");
    if (line.size() >= 3 && static_cast<unsigned char>(line[0]) == 0xEF) line.erase(0, 3);
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto header = detail::split_csv_line(line);

    auto column_of = [&](const std::string& name) -> std::size_t {
        for (std::size_t i = 0; i < header.size(); ++i)
            if (header[i] == name) return i;
        fail(ErrorKind::UnknownColumn, "column '" + name + "' not found in CSV header");
    };
    const std::size_t c_id = column_of(schema.id_column);
    const std::size_t c_week = column_of(schema.week_column);
    const std::size_t c_lat = column_of(schema.lat_column);
    const std::size_t c_lon = column_of(schema.lon_column);
    const std::size_t c_group = column_of(schema.group_column);
    const std::set<std::size_t> role_cols{c_id, c_week, c_lat, c_lon, c_group};

    std::vector<std::size_t> var_cols;
    std::vector<VariableSpec> variables;
    for (std::size_t i = 0; i < header.size(); ++i) {
        if (role_cols.count(i)) continue;
        var_cols.push_back(i);
        auto it = schema.variables.find(header[i]);
        VariableSpec v = it != schema.variables.end() ? it->second : VariableSpec{};
        v.name = header[i];
        variables.push_back(v);
    }
    for (const auto& [name, spec] : schema.variables) {
        (void)spec;
        if (std::find(header.begin(), header.end(), name) == header.end())
            fail(ErrorKind::UnknownColumn, "schema variable '" + name + "' not found in CSV header");
    }
    if (variables.empty()) fail(ErrorKind::InvalidArgument, "CSV has no variable columns");

    struct Row {
        std::string id;
        Date week;
        std::vector<std::string> cells;
    };
    std::map<std::string, Location> locs;
    std::set<Date> week_set;
    std::set<std::pair<std::string, long>> keys;
    std::vector<Row> rows;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        auto cells = detail::split_csv_line(line);
        if (cells.size() != header.size())
            fail(ErrorKind::ParseError, "line " + std::to_string(line_no) + " has " + std::to_string(cells.size()) +
                                            " fields, expected " + std::to_string(header.size()));
        Location loc;
        loc.id = cells[c_id];
        loc.lat = detail::parse_double(cells[c_lat], "lat");
        loc.lon = detail::parse_double(cells[c_lon], "lon");
        loc.group = cells[c_group];
        if (!(loc.lat >= -90.0 && loc.lat <= 90.0) || !(loc.lon >= -180.0 && loc.lon <= 180.0))
            fail(ErrorKind::CoordinateOutOfBounds, "line " + std::to_string(line_no) + ": coordinates out of bounds");
        const Date week = Date::parse(cells[c_week]);
        if (!keys.insert({loc.id, week.days()}).second)
            fail(ErrorKind::DuplicateKey, "duplicate key (" + loc.id + ", " + week.iso() + ")");
        auto [it, inserted] = locs.emplace(loc.id, loc);
        if (!inserted && (it->second.lat != loc.lat || it->second.lon != loc.lon || it->second.group != loc.group))
            fail(ErrorKind::InconsistentLocation, "location '" + loc.id + "' has inconsistent coordinates or group");
        week_set.insert(week);
        std::vector<std::string> vals;
        vals.reserve(var_cols.size());
        for (auto c : var_cols) vals.push_back(cells[c]);
        rows.push_back({loc.id, week, std::move(vals)});
    }
    if (rows.empty()) fail(ErrorKind::InvalidArgument, "CSV has no data rows");

    std::vector<Location> locations;
    std::map<std::string, std::size_t> loc_index;
    for (auto& [id, loc] : locs) {
        loc_index[id] = locations.size();
        locations.push_back(loc);
    }
    std::vector<Date> weeks(week_set.begin(), week_set.end());
    for (std::size_t w = 1; w < weeks.size(); ++w)
        if (weeks[w].days() - weeks[w - 1].days() != kDaysPerWeek)
            fail(ErrorKind::NonUniformWeeks, "week starts " + weeks[w - 1].iso() + " and " + weeks[w].iso() +
                                                 " are not 7 days apart");

    const std::size_t W = weeks.size(), V = variables.size();
    std::vector<double> values(locations.size() * W * V, missing_value());
    std::vector<std::uint8_t> mask(values.size(), 1);
    for (const auto& r : rows) {
        const std::size_t l = loc_index[r.id];
        const std::size_t w = static_cast<std::size_t>((r.week.days() - weeks.front().days()) / kDaysPerWeek);
        for (std::size_t v = 0; v < V; ++v) {
            const std::string& cell = r.cells[v];
            if (cell.empty()) continue;
            const std::size_t i = (l * W + w) * V + v;
            values[i] = detail::parse_double(cell, "column '" + variables[v].name + "'");
            mask[i] = 0;
        }
    }
    return PanelDataset(std::move(locations), std::move(weeks), std::move(variables), std::move(values), std::move(mask));
}

inline PanelDataset load_panel_csv(const std::string& path, const PanelSchema& schema = {}) {
    std::ifstream in(path);
    if (!in) fail(ErrorKind::Io, "cannot open '" + path + "'");
    return read_panel_csv(in, schema);
}

// Writes one row per (location, week) using the default column names.
inline void write_panel_csv(std::ostream& out, const PanelDataset& ds) {
    out << "id,week_start,lat,lon,group";
    for (const auto& v : ds.variables()) out << ',' << detail::csv_escape(v.name);
    out << '\n';
    for (std::size_t l = 0; l < ds.n_locations(); ++l) {
        const auto& loc = ds.locations()[l];
        const std::string prefix = detail::csv_escape(loc.id);
        const std::string coords = detail::format_double(loc.lat) + "," + detail::format_double(loc.lon) + "," +
                                   detail::csv_escape(loc.group);
        for (std::size_t w = 0; w < ds.n_weeks(); ++w) {
            out << prefix << ',' << ds.weeks()[w].iso() << ',' << coords;
            for (std::size_t v = 0; v < ds.n_variables(); ++v) {
                out << ',';
                if (ds.observed(l, w, v)) out << detail::format_double(ds.value(l, w, v));
            }
            out << '\n';
        }
    }
}

inline void save_panel_csv(const std::string& path, const PanelDataset& ds) {
    std::ofstream out(path);
    if (!out) fail(ErrorKind::Io, "cannot write '" + path + "'");
    write_panel_csv(out, ds);
}

inline PanelSchema schema_of(const PanelDataset& ds) {
    PanelSchema s;
    for (const auto& v : ds.variables()) s.variables[v.name] = v;
    return s;
}

inline Json to_json(const Location& l) {
    Json j = {{"id", l.id}, {"lat", l.lat}, {"lon", l.lon}, {"group", l.group}};
    if (l.replicate != 0) j["replicate"] = l.replicate;
    return j;
}

inline Location location_from_json(const Json& j) {
    Location l;
    l.id = j.at("id").get<std::string>();
    l.lat = j.at("lat").get<double>();
    l.lon = j.at("lon").get<double>();
    l.group = j.at("group").get<std::string>();
    l.replicate = j.value("replicate", 0);
    return l;
}

inline Json to_json(const VariableSpec& v) {
    return {{"name", v.name}, {"tier", std::string(to_string(v.tier))}, {"static", v.is_static}};
}

inline VariableSpec variable_from_json(const Json& j) {
    return {j.at("name").get<std::string>(), parse_tier(j.at("tier").get<std::string>()), j.value("static", false)};
}

// Schema + row-major values (missing cells as null) + mask run lengths.
// Runs alternate observed/missing, starting with an observed run.
inline Json to_json(const PanelDataset& ds) {
    Json locs = Json::array();
    for (const auto& l : ds.locations()) locs.push_back(to_json(l));
    Json weeks = Json::array();
    for (const auto& w : ds.weeks()) weeks.push_back(w.iso());
    Json vars = Json::array();
    for (const auto& v : ds.variables()) vars.push_back(to_json(v));
    Json values = Json::array();
    const auto& mask = ds.missing_mask();
    for (std::size_t i = 0; i < ds.n_cells(); ++i) {
        if (mask[i]) values.push_back(nullptr);
        else values.push_back(ds.values()[i]);
    }
    Json runs = Json::array();
    std::uint8_t state = 0;
    std::size_t run = 0;
    for (auto m : mask) {
        if (m != state) {
            runs.push_back(run);
            state = m;
            run = 0;
        }
        ++run;
    }
    runs.push_back(run);
    return {{"format", "stcn.panel/1"},
            {"locations", locs},
            {"weeks", weeks},
            {"variables", vars},
            {"values", values},
            {"mask_rle", runs}};
}

inline PanelDataset panel_from_json(const Json& j) {
    std::vector<Location> locs;
    for (const auto& l : j.at("locations")) locs.push_back(location_from_json(l));
    std::vector<Date> weeks;
    for (const auto& w : j.at("weeks")) weeks.push_back(Date::parse(w.get<std::string>()));
    std::vector<VariableSpec> vars;
    for (const auto& v : j.at("variables")) vars.push_back(variable_from_json(v));
    const std::size_t n = locs.size() * weeks.size() * vars.size();
    std::vector<std::uint8_t> mask;
    mask.reserve(n);
    std::uint8_t state = 0;
    for (const auto& r : j.at("mask_rle")) {
        mask.insert(mask.end(), r.get<std::size_t>(), state);
        state ^= 1;
    }
    const auto& jv = j.at("values");
    if (mask.size() != n || jv.size() != n) fail(ErrorKind::DimensionMismatch, "panel JSON size mismatch");
    std::vector<double> values(n, missing_value());
    for (std::size_t i = 0; i < n; ++i) {
        if (!mask[i]) {
            if (jv[i].is_null()) fail(ErrorKind::ParseError, "observed cell is null in panel JSON");
            values[i] = jv[i].get<double>();
        }
    }
    return PanelDataset(std::move(locs), std::move(weeks), std::move(vars), std::move(values), std::move(mask));
}

} // namespace stcn
