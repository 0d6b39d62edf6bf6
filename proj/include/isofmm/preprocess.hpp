#pragma once
// Image preprocessing: local-minimum background removal, total-intensity
// normalization, stabilized log2.

#include <algorithm>
#include <deque>
#include <limits>
#include <optional>

#include "core.hpp"

namespace isofmm {

namespace detail {

// Sliding minimum over the clipped window [i-h, i+h] on a strided sequence.
// Monotonic deque, O(n) total.
inline void sliding_min(const double* x, double* out, int n, std::ptrdiff_t stride, int h) {
    std::deque<int> q;  // indices with increasing values
    int added = 0;
    for (int i = 0; i < n; ++i) {
        int hi = std::min(n - 1, i + h);
        for (; added <= hi; ++added) {
            double val = x[added * stride];
            while (!q.empty() && x[q.back() * stride] >= val) q.pop_back();
            q.push_back(added);
        }
        while (q.front() < i - h) q.pop_front();
        out[i * stride] = x[q.front() * stride];
    }
}

}  // namespace detail

// Background estimate: minimum over the square window of +/- halfwidth around
// each pixel (window clipped at edges, center included). The square-window
// minimum separates into a per-row pass followed by a per-column pass.
inline ImageGrid background_estimate(const ImageGrid& img, int halfwidth) {
    if (halfwidth < 0) throw config_error("background halfwidth must be nonnegative");
    ImageGrid tmp(img.rows, img.cols);
    for (int r = 0; r < img.rows; ++r)
        detail::sliding_min(img.v.data() + r, tmp.v.data() + r, img.cols, img.rows, halfwidth);
    ImageGrid out(img.rows, img.cols);
    for (int c = 0; c < img.cols; ++c)
        detail::sliding_min(tmp.v.data() + std::size_t(c) * img.rows,
                            out.v.data() + std::size_t(c) * img.rows, img.rows, 1, halfwidth);
    return out;
}

inline ImageGrid background_correct(const ImageGrid& img, int halfwidth) {
    ImageGrid bg = background_estimate(img, halfwidth);
    ImageGrid out(img.rows, img.cols);
    for (std::size_t i = 0; i < img.v.size(); ++i) out.v[i] = img.v[i] - bg.v[i];
    return out;
}

// Divide by the total intensity so images share a common scale.
inline ImageGrid normalize_total(const ImageGrid& img) {
    double total = kahan_sum(img.v);
    if (!(total > 0.0) || !std::isfinite(total))
        throw data_error("degenerate image: zero total intensity");
    ImageGrid out(img.rows, img.cols);
    for (std::size_t i = 0; i < img.v.size(); ++i) out.v[i] = img.v[i] / total;
    return out;
}

// Smallest strictly positive value across a set of images; the default log offset.
inline std::optional<double> smallest_positive(const std::vector<ImageGrid>& images) {
    double best = std::numeric_limits<double>::infinity();
    bool found = false;
    for (const auto& g : images)
        for (double x : g.v)
            if (x > 0.0 && x < best) { best = x; found = true; }
    if (!found) return std::nullopt;
    return best;
}

inline ImageGrid log2_stabilize(const ImageGrid& img, double epsilon) {
    if (!(epsilon > 0.0)) throw config_error("log offset must be strictly positive");
    ImageGrid out(img.rows, img.cols);
    for (std::size_t i = 0; i < img.v.size(); ++i) out.v[i] = std::log2(img.v[i] + epsilon);
    return out;
}

// Full chain over a dataset: background, normalization, then log2 with a shared
// offset (dataset-wide smallest positive unless a fixed one is configured).
// Returns the offset actually used.
inline double preprocess_dataset(Dataset& ds, int halfwidth,
                                 std::optional<double> fixed_epsilon = std::nullopt) {
    ds.validate();
    for (std::size_t i = 0; i < ds.images.size(); ++i) {
        try {
            ds.images[i] = normalize_total(background_correct(ds.images[i], halfwidth));
        } catch (const data_error& e) {
            throw data_error(std::string(e.what()) + " (image '" + ds.image_ids[i] + "')");
        }
    }
    double eps;
    if (fixed_epsilon) {
        eps = *fixed_epsilon;
        if (!(eps > 0.0)) throw config_error("log offset must be strictly positive");
    } else {
        auto sp = smallest_positive(ds.images);
        if (!sp) throw data_error("no strictly positive intensity in dataset; cannot derive log offset");
        eps = *sp;
    }
    for (auto& g : ds.images) g = log2_stabilize(g, eps);
    return eps;
}

}  // namespace isofmm
