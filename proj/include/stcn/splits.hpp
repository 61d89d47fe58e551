#pragma once

#include <array>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>
#include <vector>

#include "stcn/panel.hpp"
#include "stcn/rng.hpp"
#include "stcn/spatial.hpp"

namespace stcn {

struct TemporalSplit {
    PanelDataset train;
    PanelDataset validation;
    std::size_t buffer_weeks = 0;
};

// Train keeps weeks <= train_end, validation keeps weeks >= val_start; weeks
// in between are discarded as a buffer.
inline TemporalSplit split_temporal(const PanelDataset& ds, Date train_end, Date val_start) {
    if (!(train_end < val_start)) fail(ErrorKind::InvalidSplit, "train_end must precede val_start");
    std::vector<std::size_t> tr, va;
    std::size_t buffer = 0;
    for (std::size_t w = 0; w < ds.n_weeks(); ++w) {
        if (ds.weeks()[w] <= train_end) tr.push_back(w);
        else if (ds.weeks()[w] >= val_start) va.push_back(w);
        else ++buffer;
    }
    if (tr.empty() || va.empty()) fail(ErrorKind::InvalidSplit, "temporal split leaves an empty side");
    return {ds.select_weeks(tr), ds.select_weeks(va), buffer};
}

struct SpatialFold {
    PanelDataset train;
    PanelDataset validation;
    std::vector<std::string> validation_ids;
    std::vector<std::string> dropped_ids; // training sites inside the buffer
};

struct FoldOptions {
    std::size_t k = 6;
    double buffer_km = 110.0;
    std::uint64_t seed = 0;
    int restarts = 50;
    int max_iterations = 200;
};

// Local tangent-plane coordinates (km) around the centroid.
inline std::vector<std::array<double, 2>> tangent_plane_km(const std::vector<Location>& locs) {
    double lat0 = 0.0, lon0 = 0.0;
    for (const auto& l : locs) {
        lat0 += l.lat;
        lon0 += l.lon;
    }
    lat0 /= static_cast<double>(locs.size());
    lon0 /= static_cast<double>(locs.size());
    const double rad = std::numbers::pi / 180.0;
    std::vector<std::array<double, 2>> out;
    for (const auto& l : locs)
        out.push_back({kEarthRadiusKm * (l.lon - lon0) * rad * std::cos(lat0 * rad), kEarthRadiusKm * (l.lat - lat0) * rad});
    return out;
}

// k-means with k-means++ seeding, best of `restarts` by inertia. Returns a
// cluster label per point, relabelled by first appearance.
inline std::vector<std::size_t> kmeans_labels(const std::vector<std::array<double, 2>>& pts, std::size_t k,
                                              std::uint64_t seed, int restarts, int max_iterations) {
    const std::size_t n = pts.size();
    auto d2 = [&](const std::array<double, 2>& a, const std::array<double, 2>& b) {
        return (a[0] - b[0]) * (a[0] - b[0]) + (a[1] - b[1]) * (a[1] - b[1]);
    };
    std::vector<std::size_t> best;
    double best_inertia = std::numeric_limits<double>::infinity();
    for (int r = 0; r < restarts; ++r) {
        NormalSource rng(make_stream(seed, static_cast<std::uint64_t>(r)));
        std::vector<std::array<double, 2>> centers;
        centers.push_back(pts[static_cast<std::size_t>(rng.uniform() * static_cast<double>(n)) % n]);
        std::vector<double> dmin(n);
        while (centers.size() < k) {
            double total = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                dmin[i] = std::numeric_limits<double>::infinity();
                for (const auto& c : centers) dmin[i] = std::min(dmin[i], d2(pts[i], c));
                total += dmin[i];
            }
            std::size_t pick = 0;
            if (total > 0.0) {
                double u = rng.uniform() * total;
                for (pick = 0; pick + 1 < n; ++pick) {
                    u -= dmin[pick];
                    if (u < 0.0) break;
                }
            }
            centers.push_back(pts[pick]);
        }
        std::vector<std::size_t> label(n, 0);
        for (int it = 0; it < max_iterations; ++it) {
            bool changed = it == 0;
            for (std::size_t i = 0; i < n; ++i) {
                std::size_t arg = 0;
                for (std::size_t c = 1; c < k; ++c)
                    if (d2(pts[i], centers[c]) < d2(pts[i], centers[arg])) arg = c;
                if (arg != label[i]) {
                    label[i] = arg;
                    changed = true;
                }
            }
            // Empty clusters take the point farthest from its center.
            std::vector<std::size_t> count(k, 0);
            for (auto l : label) ++count[l];
            for (std::size_t c = 0; c < k; ++c) {
                if (count[c] > 0) continue;
                std::size_t far = 0;
                double fd = -1.0;
                for (std::size_t i = 0; i < n; ++i)
                    if (count[label[i]] > 1 && d2(pts[i], centers[label[i]]) > fd) {
                        fd = d2(pts[i], centers[label[i]]);
                        far = i;
                    }
                --count[label[far]];
                label[far] = c;
                ++count[c];
                changed = true;
            }
            for (std::size_t c = 0; c < k; ++c) centers[c] = {0.0, 0.0};
            for (std::size_t i = 0; i < n; ++i) {
                centers[label[i]][0] += pts[i][0];
                centers[label[i]][1] += pts[i][1];
            }
            for (std::size_t c = 0; c < k; ++c) {
                centers[c][0] /= static_cast<double>(count[c]);
                centers[c][1] /= static_cast<double>(count[c]);
            }
            if (!changed) break;
        }
        double inertia = 0.0;
        for (std::size_t i = 0; i < n; ++i) inertia += d2(pts[i], centers[label[i]]);
        if (inertia < best_inertia - 1e-9) {
            best_inertia = inertia;
            best = label;
        }
    }
    std::vector<std::size_t> remap(k, k), out(n);
    std::size_t next = 0;
    for (std::size_t i = 0; i < n; ++i) {
        if (remap[best[i]] == k) remap[best[i]] = next++;
        out[i] = remap[best[i]];
    }
    return out;
}

// Geographic folds: each k-means cluster is held out once; training sites
// within buffer_km of any held-out site are dropped.
inline std::vector<SpatialFold> split_spatial_folds(const PanelDataset& ds, const FoldOptions& opt = {}) {
    const std::size_t n = ds.n_locations();
    if (opt.k < 2) fail(ErrorKind::InvalidFolds, "need at least 2 folds");
    if (opt.k > n) fail(ErrorKind::InvalidFolds, "more folds than locations");
    const auto labels = kmeans_labels(tangent_plane_km(ds.locations()), opt.k, opt.seed, opt.restarts, opt.max_iterations);
    const DistanceMatrix dist(ds.locations());
    std::vector<SpatialFold> folds;
    for (std::size_t f = 0; f < opt.k; ++f) {
        std::vector<std::size_t> tr, va;
        SpatialFold fold;
        for (std::size_t i = 0; i < n; ++i)
            if (labels[i] == f) {
                va.push_back(i);
                fold.validation_ids.push_back(ds.locations()[i].id);
            }
        for (std::size_t i = 0; i < n; ++i) {
            if (labels[i] == f) continue;
            bool near = false;
            for (auto j : va) near = near || dist.km()(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) <= opt.buffer_km;
            if (near) fold.dropped_ids.push_back(ds.locations()[i].id);
            else tr.push_back(i);
        }
        if (tr.empty()) fail(ErrorKind::InvalidFolds, "fold " + std::to_string(f) + " leaves no training location outside the buffer");
        fold.train = ds.select_locations(tr);
        fold.validation = ds.select_locations(va);
        folds.push_back(std::move(fold));
    }
    return folds;
}

} // namespace stcn
