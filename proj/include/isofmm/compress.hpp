#pragma once
// Energy-based coefficient selection: keep, per image, the smallest prefix of
// coefficients in decreasing magnitude order whose energy reaches a fraction P,
// then take the union across images.

#include <algorithm>
#include <cstdint>
#include <numeric>

#include "core.hpp"
#include "wavelet.hpp"

namespace isofmm {

// Relative cumulative energy of one coefficient row, magnitudes sorted
// decreasing. Nondecreasing, ends at 1.
inline std::vector<double> energy_cusum(const double* coefs, std::size_t n) {
    std::vector<double> sq(n);
    for (std::size_t i = 0; i < n; ++i) sq[i] = coefs[i] * coefs[i];
    std::sort(sq.begin(), sq.end(), std::greater<double>());
    double total = kahan_sum(sq);
    if (!(total > 0.0)) throw data_error("image has zero energy in transform space");
    std::vector<double> out(n);
    double run = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        run += sq[i];
        out[i] = run / total;
    }
    // guard the tail against accumulation drift; the final entry is 1 exactly
    out[n - 1] = 1.0;
    return out;
}

inline std::vector<double> energy_cusum(const std::vector<double>& coefs) {
    return energy_cusum(coefs.data(), coefs.size());
}

struct CompressionMask {
    double P = 0.0;
    std::vector<std::int64_t> positions;       // sorted ascending, zero-based flat positions
    std::vector<double> per_image_energy;      // achieved fraction per image under the union

    std::size_t t_star() const { return positions.size(); }
};

namespace detail {

// Minimal decreasing-magnitude prefix of one image reaching fraction P.
// Ties in magnitude break toward the lower position. Marks kept positions.
inline void mark_prefix(const double* row, std::size_t n, double P, std::vector<std::uint8_t>& keep,
                        std::vector<std::int64_t>& order) {
    order.resize(n);
    std::iota(order.begin(), order.end(), std::int64_t(0));
    std::sort(order.begin(), order.end(), [&](std::int64_t a, std::int64_t b) {
        const double sa = row[a] * row[a], sb = row[b] * row[b];
        if (sa != sb) return sa > sb;
        return a < b;
    });
    const double total = kahan_sum([&] {
        std::vector<double> sq(n);
        for (std::size_t i = 0; i < n; ++i) sq[i] = row[i] * row[i];
        return sq;
    }());
    if (!(total > 0.0)) throw data_error("image has zero energy in transform space");
    const double target = P * total;
    double run = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const std::int64_t pos = order[i];
        run += row[pos] * row[pos];
        keep[std::size_t(pos)] = 1;
        if (run >= target) break;
    }
}

}  // namespace detail

// Union over images of per-image minimal energy prefixes. P = 1 retains every
// position. Monotone: a smaller P keeps a subset of a larger P's positions.
inline CompressionMask select_retained(const CoefSet& cs, double P) {
    if (!(P > 0.0) || P > 1.0) throw config_error("compression fraction P must be in (0, 1]");
    if (cs.n_images == 0) throw data_error("no images in coefficient set");
    const std::size_t n = cs.tpad();
    CompressionMask mask;
    mask.P = P;
    std::vector<std::uint8_t> keep(n, 0);
    if (P == 1.0) {
        std::fill(keep.begin(), keep.end(), std::uint8_t(1));
        // still reject degenerate all-zero images, matching the P < 1 path
        for (std::size_t i = 0; i < cs.n_images; ++i)
            if (!(sum_sq(cs.row(i), n) > 0.0))
                throw data_error("image has zero energy in transform space");
    } else {
        std::vector<std::int64_t> order;
        for (std::size_t i = 0; i < cs.n_images; ++i)
            detail::mark_prefix(cs.row(i), n, P, keep, order);
    }
    for (std::size_t t = 0; t < n; ++t)
        if (keep[t]) mask.positions.push_back(std::int64_t(t));
    mask.per_image_energy.resize(cs.n_images);
    for (std::size_t i = 0; i < cs.n_images; ++i) {
        const double* row = cs.row(i);
        std::vector<double> kept(mask.positions.size());
        for (std::size_t j = 0; j < mask.positions.size(); ++j) {
            const double x = row[std::size_t(mask.positions[j])];
            kept[j] = x * x;
        }
        mask.per_image_energy[i] = kahan_sum(kept) / sum_sq(row, n);
    }
    return mask;
}

struct CompressionRow {
    double P = 0.0;
    std::size_t t_star = 0;
    double ratio = 0.0;  // total positions / retained positions
};

inline std::vector<CompressionRow> compression_table(const CoefSet& cs,
                                                     const std::vector<double>& Ps) {
    std::vector<CompressionRow> rows;
    rows.reserve(Ps.size());
    for (double P : Ps) {
        CompressionMask m = select_retained(cs, P);
        rows.push_back({P, m.t_star(), double(cs.tpad()) / double(m.t_star())});
    }
    return rows;
}

// Column-major view of the retained coefficients: column j holds the N image
// values at retained position j. This is the sampler's input layout.
struct RetainedMatrix {
    std::size_t n_images = 0;
    std::vector<std::int64_t> positions;
    std::vector<double> values;  // column-major: value(i, j) = values[i + j*n_images]

    double value(std::size_t image, std::size_t col) const {
        return values[image + col * n_images];
    }
    const double* column(std::size_t col) const { return values.data() + col * n_images; }
};

inline RetainedMatrix apply_mask(const CoefSet& cs, const CompressionMask& mask) {
    RetainedMatrix rm;
    rm.n_images = cs.n_images;
    rm.positions = mask.positions;
    rm.values.resize(cs.n_images * mask.positions.size());
    for (std::size_t j = 0; j < mask.positions.size(); ++j)
        for (std::size_t i = 0; i < cs.n_images; ++i)
            rm.values[i + j * cs.n_images] = cs.row(i)[std::size_t(mask.positions[j])];
    return rm;
}

}  // namespace isofmm
