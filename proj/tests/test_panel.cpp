#include <gtest/gtest.h>

#include <random>
#include <sstream>

#include "support.hpp"

using namespace stcn;
using testsupport::grid_panel;

namespace {

const char* kSmallCsv =
    "id,week_start,lat,lon,group,pm25,anx\n"
    "001,2022-01-03,40.1,-90.2,IL,5.5,1.0\n"
    "001,2022-01-10,40.1,-90.2,IL,6.5,1.5\n"
    "001,2022-01-17,40.1,-90.2,IL,7.5,2.0\n"
    "002,2022-01-03,41.0,-91.0,IA,3.0,0.5\n"
    "002,2022-01-10,41.0,-91.0,IA,4.0,0.25\n"
    "002,2022-01-17,41.0,-91.0,IA,5.0,0.125\n";

PanelDataset read(const std::string& text, const PanelSchema& schema = {}) {
    std::istringstream in(text);
    return read_panel_csv(in, schema);
}

ErrorKind kind_of(const std::function<void()>& f) {
    try {
        f();
    } catch (const Error& e) {
        return e.kind();
    }
    ADD_FAILURE() << "expected an error";
    return ErrorKind::Io;
}

std::vector<VariableSpec> vars(std::initializer_list<const char*> names) {
    std::vector<VariableSpec> out;
    for (auto n : names) out.push_back({n, Tier::condition, false});
    return out;
}

} // namespace

TEST(Date, ParsesAndFormats) {
    const auto d = Date::parse("2022-05-23");
    EXPECT_EQ(d.iso(), "2022-05-23");
    EXPECT_EQ(d.plus_days(7).iso(), "2022-05-30");
    EXPECT_EQ(Date::parse("1970-01-01").days(), 0);
    EXPECT_EQ(kind_of([] { Date::parse("2022-13-01"); }), ErrorKind::ParseError);
    EXPECT_EQ(kind_of([] { Date::parse("22-01-01"); }), ErrorKind::ParseError);
}

TEST(LoadCsv, CompleteFileHasEmptyMask) {
    const auto ds = read(kSmallCsv);
    EXPECT_EQ(ds.n_locations(), 2u);
    EXPECT_EQ(ds.n_weeks(), 3u);
    EXPECT_EQ(ds.n_variables(), 2u);
    EXPECT_EQ(ds.missing_count(), 0u);
    EXPECT_DOUBLE_EQ(ds.value(1, 2, 1), 0.125);
    EXPECT_EQ(ds.locations()[0].group, "IL");
}

TEST(LoadCsv, EmptyCellIsMissing) {
    std::string text = kSmallCsv;
    text.replace(text.find("6.5"), 3, "");
    const auto ds = read(text);
    EXPECT_EQ(ds.missing_count(), 1u);
    EXPECT_TRUE(ds.missing(0, 1, 0));
    EXPECT_TRUE(std::isnan(ds.values()[ds.index(0, 1, 0)]));
}

TEST(LoadCsv, RejectsBadInput) {
    std::string dup = std::string(kSmallCsv) + "001,2022-01-03,40.1,-90.2,IL,1,1\n";
    EXPECT_EQ(kind_of([&] { read(dup); }), ErrorKind::DuplicateKey);

    std::string gap = kSmallCsv;
    gap.replace(gap.find("2022-01-17"), 10, "2022-01-18");
    gap.replace(gap.find("2022-01-17"), 10, "2022-01-18");
    EXPECT_EQ(kind_of([&] { read(gap); }), ErrorKind::NonUniformWeeks);

    std::string far = kSmallCsv;
    far.replace(far.find("40.1"), 4, "91.0");
    EXPECT_EQ(kind_of([&] { read(far); }), ErrorKind::CoordinateOutOfBounds);

    PanelSchema schema;
    schema.id_column = "fips";
    EXPECT_EQ(kind_of([&] { read(kSmallCsv, schema); }), ErrorKind::UnknownColumn);

    PanelSchema extra;
    extra.variables["so2"] = {"so2", Tier::pollutant, false};
    EXPECT_EQ(kind_of([&] { read(kSmallCsv, extra); }), ErrorKind::UnknownColumn);
}

TEST(LoadCsv, StaticVariablesMustBeConstant) {
    PanelSchema schema;
    schema.variables["pm25"] = {"pm25", Tier::pollutant, true};
    EXPECT_EQ(kind_of([&] { read(kSmallCsv, schema); }), ErrorKind::NonStaticValue);
}

TEST(LoadCsv, SchemaTiersAreApplied) {
    PanelSchema schema = PanelSchema::from_json(Json::parse(R"({"variables":{"pm25":{"tier":"pollutant"}}})"));
    const auto ds = read(kSmallCsv, schema);
    EXPECT_EQ(ds.variables()[*ds.find_variable("pm25")].tier, Tier::pollutant);
    EXPECT_EQ(ds.variables()[*ds.find_variable("anx")].tier, Tier::condition);
}

TEST(Panel, RoundTripCsvAndJsonAreBitExact) {
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> u(-1e6, 1e6);
    auto ds = grid_panel(7, 9, vars({"a", "b", "c"}), [&](auto, auto, auto) { return u(rng) / 3.0; });
    std::vector<std::uint8_t> extra(ds.n_cells());
    for (auto& e : extra) e = (rng() % 5) == 0;
    ds = ds.with_extra_missing(extra);

    std::ostringstream out;
    write_panel_csv(out, ds);
    PanelSchema schema = schema_of(ds);
    const auto back = read(out.str(), schema);
    EXPECT_TRUE(back == ds);
    EXPECT_EQ(back.missing_mask(), ds.missing_mask());

    const auto j = to_json(ds);
    const auto again = panel_from_json(Json::parse(j.dump()));
    EXPECT_TRUE(again == ds);
    EXPECT_EQ(again.hash(), ds.hash());
}

TEST(Panel, HashChangesWithContent) {
    auto ds = grid_panel(3, 4, vars({"a"}), [](auto l, auto w, auto) { return double(l * 10 + w); });
    std::vector<std::uint8_t> extra(ds.n_cells(), 0);
    extra[5] = 1;
    EXPECT_NE(ds.hash(), ds.with_extra_missing(extra).hash());
}

TEST(Coverage, DropsTheSparseVariable) {
    // Per-variable missing rates {0.2, 0.7}, counted independently from the mask.
    auto ds = grid_panel(10, 20, vars({"good", "bad"}), [](auto, auto, auto) { return 1.0; });
    std::vector<std::uint8_t> extra(ds.n_cells(), 0);
    for (std::size_t l = 0; l < 10; ++l)
        for (std::size_t w = 0; w < 20; ++w) {
            extra[ds.index(l, w, 0)] = (l + 3 * w) % 5 == 0;
            extra[ds.index(l, w, 1)] = (l * 20 + w) % 10 < 7;
        }
    ds = ds.with_extra_missing(extra);
    std::vector<double> rate(2, 0.0);
    for (std::size_t i = 0; i < ds.n_cells(); ++i) rate[i % 2] += ds.missing_mask()[i];
    EXPECT_DOUBLE_EQ(rate[0] / 200.0, 0.2);
    EXPECT_DOUBLE_EQ(rate[1] / 200.0, 0.7);

    const auto out = filter_coverage(ds, 0.5);
    ASSERT_EQ(out.n_variables(), 1u);
    EXPECT_EQ(out.variables()[0].name, "good");
    EXPECT_EQ(out.n_locations(), 10u);
    EXPECT_EQ(out.n_weeks(), 20u);
}

TEST(Coverage, CompleteDatasetUnchanged) {
    const auto ds = grid_panel(4, 5, vars({"a", "b"}), [](auto l, auto w, auto v) { return double(l + w + v); });
    EXPECT_TRUE(filter_coverage(ds) == ds);
}

TEST(Coverage, EverythingMissingIsExhausted) {
    auto ds = grid_panel(2, 2, vars({"a"}), [](auto, auto, auto) { return 1.0; });
    ds = ds.with_extra_missing(std::vector<std::uint8_t>(ds.n_cells(), 1));
    EXPECT_EQ(kind_of([&] { filter_coverage(ds); }), ErrorKind::ExhaustedDataset);
    EXPECT_EQ(kind_of([&] { filter_coverage(ds, 0.0); }), ErrorKind::InvalidArgument);
}

TEST(Coverage, IdempotentAndWithinThresholdOnRandomMasks) {
    std::mt19937_64 rng(5);
    for (int trial = 0; trial < 30; ++trial) {
        const std::size_t L = 3 + rng() % 6, W = 3 + rng() % 8;
        auto ds = grid_panel(L, W, vars({"a", "b", "c"}), [](auto, auto, auto) { return 0.5; });
        std::vector<double> p{0.1 + 0.8 * (rng() % 100) / 100.0, 0.3, 0.6};
        std::vector<std::uint8_t> extra(ds.n_cells());
        for (std::size_t i = 0; i < extra.size(); ++i) extra[i] = (rng() % 1000) < 1000 * p[i % 3];
        ds = ds.with_extra_missing(extra);
        const double thr = 0.5;
        PanelDataset once;
        try {
            once = filter_coverage(ds, thr);
        } catch (const Error& e) {
            EXPECT_EQ(e.kind(), ErrorKind::ExhaustedDataset);
            continue;
        }
        EXPECT_TRUE(filter_coverage(once, thr) == once);
        for (std::size_t v = 0; v < once.n_variables(); ++v) {
            std::size_t miss = 0;
            for (std::size_t l = 0; l < once.n_locations(); ++l)
                for (std::size_t w = 0; w < once.n_weeks(); ++w) miss += once.missing(l, w, v);
            EXPECT_LE(double(miss) / double(once.n_locations() * once.n_weeks()), thr);
        }
    }
}

TEST(Splits, TemporalBufferIsExcluded) {
    const auto ds = grid_panel(3, 10, vars({"a"}), [](auto, auto w, auto) { return double(w); });
    const auto s = split_temporal(ds, ds.weeks()[3], ds.weeks()[7]);
    EXPECT_EQ(s.train.n_weeks(), 4u);
    EXPECT_EQ(s.validation.n_weeks(), 3u);
    EXPECT_EQ(s.buffer_weeks, 3u);
    EXPECT_EQ(s.train.n_weeks() + s.buffer_weeks + s.validation.n_weeks(), ds.n_weeks());
    for (const auto& w : s.validation.weeks())
        for (const auto& t : s.train.weeks()) EXPECT_LT(t, w);
    EXPECT_EQ(kind_of([&] { split_temporal(ds, ds.weeks()[5], ds.weeks()[5]); }), ErrorKind::InvalidSplit);
    EXPECT_EQ(kind_of([&] { split_temporal(ds, ds.weeks()[9], ds.weeks()[9].plus_days(7)); }), ErrorKind::InvalidSplit);
}

namespace {

PanelDataset at_sites(const std::vector<std::pair<double, double>>& coords) {
    std::vector<Location> locs;
    for (std::size_t i = 0; i < coords.size(); ++i)
        locs.push_back({"L" + std::to_string(100 + i), coords[i].first, coords[i].second, "g"});
    std::vector<Date> weeks{Date::parse("2022-01-03"), Date::parse("2022-01-10")};
    std::vector<VariableSpec> v{{"a", Tier::condition, false}};
    return PanelDataset(locs, weeks, v, std::vector<double>(coords.size() * 2, 1.0),
                        std::vector<std::uint8_t>(coords.size() * 2, 0));
}

} // namespace

TEST(Splits, TwoDistantClustersBecomeTheFolds) {
    std::vector<std::pair<double, double>> c;
    for (int i = 0; i < 5; ++i) c.push_back({38.0 + 0.05 * i, -100.0 + 0.05 * i});
    for (int i = 0; i < 5; ++i) c.push_back({38.0 + 0.05 * i, -94.0 + 0.05 * i});
    const auto folds = split_spatial_folds(at_sites(c), {2, 110.0});
    ASSERT_EQ(folds.size(), 2u);
    for (const auto& f : folds) {
        EXPECT_EQ(f.validation.n_locations(), 5u);
        EXPECT_EQ(f.train.n_locations(), 5u);
        EXPECT_TRUE(f.dropped_ids.empty());
    }
}

TEST(Splits, CloseTrainingSiteIsDropped) {
    // Two clusters whose inner edge sites (L105 west, L111 east) are 50 km apart.
    const double km_per_deg = 111.195 * std::cos(38.0 * std::numbers::pi / 180.0);
    std::vector<std::pair<double, double>> c;
    for (int i = 0; i < 5; ++i) c.push_back({38.0, -100.0 + 0.001 * i});
    c.push_back({38.0, -100.0 + 140.0 / km_per_deg});
    for (int i = 0; i < 5; ++i) c.push_back({38.0, -100.0 + 300.0 / km_per_deg + 0.001 * i});
    c.push_back({38.0, -100.0 + 190.0 / km_per_deg});
    const auto ds = at_sites(c);
    ASSERT_NEAR(haversine_km(ds.locations()[5], ds.locations()[11]), 50.0, 0.5);
    const auto folds = split_spatial_folds(ds, {2, 110.0});
    ASSERT_EQ(folds.size(), 2u);
    for (const auto& f : folds) {
        ASSERT_EQ(f.dropped_ids.size(), 1u);
        const bool west_held_out = f.validation_ids.front() == "L100";
        EXPECT_EQ(f.dropped_ids.front(), west_held_out ? "L111" : "L105");
        EXPECT_EQ(f.train.n_locations() + f.validation.n_locations() + 1, 12u);
    }
}

TEST(Splits, BufferHoldsOnRandomSites) {
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        std::mt19937_64 rng(seed);
        std::uniform_real_distribution<double> lat(35, 41), lon(-100, -92);
        std::vector<std::pair<double, double>> c;
        for (int i = 0; i < 30; ++i) c.push_back({lat(rng), lon(rng)});
        const auto ds = at_sites(c);
        const auto folds = split_spatial_folds(ds, {6, 110.0, seed});
        ASSERT_EQ(folds.size(), 6u);
        std::size_t total_val = 0;
        for (const auto& f : folds) {
            total_val += f.validation.n_locations();
            double min_d = 1e18;
            for (const auto& a : f.train.locations())
                for (const auto& b : f.validation.locations()) min_d = std::min(min_d, haversine_km(a, b));
            EXPECT_GT(min_d, 110.0);
        }
        EXPECT_EQ(total_val, 30u);
    }
}

TEST(Splits, TooManyFolds) {
    const auto ds = at_sites({{38, -100}, {39, -99}});
    EXPECT_EQ(kind_of([&] { split_spatial_folds(ds, {3, 110.0}); }), ErrorKind::InvalidFolds);
    EXPECT_EQ(kind_of([&] { split_spatial_folds(ds, {1, 110.0}); }), ErrorKind::InvalidFolds);
}
