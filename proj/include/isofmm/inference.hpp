#pragma once
// Data-space inference on posterior draws: contrast reconstruction through the
// inverse transform, probability discovery images, the Bayesian FDR threshold,
// 8-connected flagged regions, and posterior-predictive virtual images.

#include <cstdint>
#include <optional>

#include "fmm.hpp"

namespace isofmm {

// Everything needed to take a retained-coefficient vector back to pixel space.
struct TransformGeometry {
    int t1 = 0, t2 = 0;  // observed dims
    int p1 = 0, p2 = 0;  // padded dims the transform ran on
    WaveletSpec spec;

    static TransformGeometry of(const CoefSet& cs) {
        return TransformGeometry{cs.t1, cs.t2, cs.p1, cs.p2, cs.spec};
    }
    std::size_t tpad() const { return std::size_t(p1) * p2; }
    std::size_t npix() const { return std::size_t(t1) * t2; }
};

namespace detail {

// Scatter one draw's contrast onto the padded grid (zeros elsewhere), invert,
// crop. pad is scratch sized tpad().
inline void reconstruct_into(const PosteriorDraws& draws, std::size_t draw,
                             const std::vector<double>& weights, const TransformGeometry& geo,
                             std::vector<double>& pad, double* out) {
    pad.assign(geo.tpad(), 0.0);
    for (std::size_t j = 0; j < draws.positions.size(); ++j) {
        double c = 0.0;
        for (int a = 0; a < draws.p; ++a) c += weights[std::size_t(a)] * draws.beta(draw, j, a);
        pad[std::size_t(draws.positions[j])] = c;
    }
    ImageGrid img = idwt2d_flat(pad, geo.t1, geo.t2, geo.p1, geo.p2, geo.spec);
    std::copy(img.v.begin(), img.v.end(), out);
}

}  // namespace detail

// Feed every reconstructed draw image to sink(draw_index, const double*) in
// increasing draw order. Blocks of draws are inverted in parallel but the sink
// always runs sequentially in index order, so any accumulation done inside it
// is reproducible for every worker count. Memory is O(block * pixels).
template <typename Sink>
inline void stream_effect_draws(const PosteriorDraws& draws, const std::vector<double>& weights,
                                const TransformGeometry& geo, Sink&& sink, unsigned workers = 0,
                                std::size_t block = 16) {
    if (weights.size() != std::size_t(draws.p))
        throw data_error("contrast weight count does not match covariate count");
    for (std::int64_t pos : draws.positions)
        if (pos < 0 || std::size_t(pos) >= geo.tpad())
            throw data_error("retained position outside the transform grid; mask and dims disagree");
    if (workers == 0) workers = worker_count();
    if (block == 0) block = 1;
    const std::size_t npix = geo.npix();
    std::vector<double> buf(block * npix);
    for (std::size_t base = 0; base < draws.n_draws; base += block) {
        const std::size_t count = std::min(block, draws.n_draws - base);
        parallel_for(count, workers, [&](std::size_t k) {
            std::vector<double> pad;
            detail::reconstruct_into(draws, base + k, weights, geo, pad, buf.data() + k * npix);
        });
        for (std::size_t k = 0; k < count; ++k) sink(base + k, buf.data() + k * npix);
    }
}

// In-memory stack of reconstructed draw images (draw-major). Fine for tests
// and moderate sizes; the pipeline streams instead when draws * pixels is big.
struct EffectDraws {
    std::size_t n_draws = 0;
    int rows = 0, cols = 0;
    std::vector<double> data;

    std::size_t npix() const { return std::size_t(rows) * cols; }
    const double* draw(std::size_t k) const { return data.data() + k * npix(); }
    double* draw(std::size_t k) { return data.data() + k * npix(); }
};

inline EffectDraws reconstruct_effect_draws(const PosteriorDraws& draws,
                                            const std::vector<double>& weights,
                                            const TransformGeometry& geo, unsigned workers = 0) {
    EffectDraws out;
    out.n_draws = draws.n_draws;
    out.rows = geo.t1;
    out.cols = geo.t2;
    out.data.resize(out.n_draws * out.npix());
    stream_effect_draws(
        draws, weights, geo,
        [&](std::size_t k, const double* img) { std::copy(img, img + out.npix(), out.draw(k)); },
        workers);
    return out;
}

// Pixelwise fraction of draws whose magnitude strictly exceeds delta.
inline ImageGrid prob_discovery(const EffectDraws& eff, double delta) {
    if (eff.n_draws == 0) throw data_error("no draws to compute discovery probabilities from");
    if (!(delta >= 0.0)) throw config_error("delta must be nonnegative");
    ImageGrid out{eff.rows, eff.cols, std::vector<double>(eff.npix(), 0.0)};
    for (std::size_t k = 0; k < eff.n_draws; ++k) {
        const double* img = eff.draw(k);
        for (std::size_t t = 0; t < eff.npix(); ++t)
            if (std::abs(img[t]) > delta) out.v[t] += 1.0;
    }
    for (double& x : out.v) x /= double(eff.n_draws);
    return out;
}

inline ImageGrid posterior_mean(const EffectDraws& eff) {
    if (eff.n_draws == 0) throw data_error("no draws to average");
    ImageGrid out{eff.rows, eff.cols, std::vector<double>(eff.npix(), 0.0)};
    std::vector<double> comp(eff.npix(), 0.0);
    for (std::size_t k = 0; k < eff.n_draws; ++k) {
        const double* img = eff.draw(k);
        for (std::size_t t = 0; t < eff.npix(); ++t) {
            const double y = img[t] - comp[t];
            const double s = out.v[t] + y;
            comp[t] = (s - out.v[t]) - y;
            out.v[t] = s;
        }
    }
    for (double& x : out.v) x /= double(eff.n_draws);
    return out;
}

// Linear-interpolation quantile on an already sorted vector.
inline double quantile_sorted(const std::vector<double>& v, double q) {
    if (v.empty()) throw data_error("quantile of an empty sample");
    if (!(q >= 0.0 && q <= 1.0)) throw config_error("quantile level must lie in [0,1]");
    const double h = q * double(v.size() - 1);
    const std::size_t lo = std::size_t(h);
    if (lo + 1 >= v.size()) return v.back();
    return v[lo] + (h - double(lo)) * (v[lo + 1] - v[lo]);
}

// ---------------------------------------------------------------------------
// Bayesian FDR threshold.

struct FdrResult {
    bool has_phi = false;
    double phi = 1.0;
    std::size_t xi = 0;  // size of the largest admissible prefix
};

// Sort probabilities descending; xi is the largest prefix whose average local
// false discovery rate (1 - p) stays at or below alpha, phi the xi-th value.
// No prefix admissible means no discoveries.
inline FdrResult fdr_threshold(std::vector<double> probs, double alpha) {
    if (!(alpha > 0.0 && alpha < 1.0)) throw config_error("alpha must lie strictly in (0,1)");
    for (double p : probs)
        if (!(p >= 0.0 && p <= 1.0)) throw data_error("discovery probabilities must lie in [0,1]");
    FdrResult out;
    if (probs.empty()) return out;
    std::sort(probs.begin(), probs.end(), std::greater<double>());
    double sum = 0.0, comp = 0.0;
    for (std::size_t j = 0; j < probs.size(); ++j) {
        const double y = (1.0 - probs[j]) - comp;
        const double t = sum + y;
        comp = (t - sum) - y;
        sum = t;
        if (sum <= alpha * double(j + 1)) {
            out.has_phi = true;
            out.xi = j + 1;
            out.phi = probs[j];
        }
    }
    return out;
}

inline FdrResult fdr_threshold(const ImageGrid& prob, double alpha) {
    return fdr_threshold(prob.v, alpha);
}

// ---------------------------------------------------------------------------
// Flagged regions.

struct Region {
    std::vector<std::int64_t> pixels;  // flat positions, ascending
    double centroid_r = 0.0, centroid_c = 0.0;  // zero-based means
    std::int64_t area = 0;
    double max_prob = 0.0;
    int r0 = 0, r1 = 0, c0 = 0, c1 = 0;  // inclusive bounding box
};

struct DiscoveryMap {
    ImageGrid prob;
    double delta = 0.0;
    double alpha = 0.0;
    bool has_phi = false;
    double phi = 1.0;
    std::size_t xi = 0;
    std::vector<std::uint8_t> flagged;
    std::vector<Region> regions;
};

// Threshold at phi (inclusive) and split the flagged mask into 8-connected
// components. Regions come back ordered by max probability descending, ties
// by centroid row then column.
inline DiscoveryMap flag_regions(const ImageGrid& prob, std::optional<double> phi, double delta,
                                 double alpha) {
    DiscoveryMap map;
    map.prob = prob;
    map.delta = delta;
    map.alpha = alpha;
    map.has_phi = phi.has_value();
    map.phi = phi.value_or(1.0);
    const std::size_t npix = prob.v.size();
    map.flagged.assign(npix, 0);
    if (!phi) return map;
    for (std::size_t t = 0; t < npix; ++t) map.flagged[t] = prob.v[t] >= *phi ? 1 : 0;
    const int R = prob.rows, C = prob.cols;
    std::vector<std::uint8_t> seen(npix, 0);
    std::vector<std::int64_t> stack;
    for (std::size_t start = 0; start < npix; ++start) {
        if (!map.flagged[start] || seen[start]) continue;
        Region reg;
        reg.r0 = R;
        reg.c0 = C;
        reg.r1 = -1;
        reg.c1 = -1;
        stack.assign(1, std::int64_t(start));
        seen[start] = 1;
        double sum_r = 0.0, sum_c = 0.0;
        while (!stack.empty()) {
            const std::int64_t t = stack.back();
            stack.pop_back();
            reg.pixels.push_back(t);
            const int r = int(t % R), c = int(t / R);
            sum_r += r;
            sum_c += c;
            reg.r0 = std::min(reg.r0, r);
            reg.r1 = std::max(reg.r1, r);
            reg.c0 = std::min(reg.c0, c);
            reg.c1 = std::max(reg.c1, c);
            reg.max_prob = std::max(reg.max_prob, prob.v[std::size_t(t)]);
            for (int dc = -1; dc <= 1; ++dc)
                for (int dr = -1; dr <= 1; ++dr) {
                    if (dr == 0 && dc == 0) continue;
                    const int nr = r + dr, nc = c + dc;
                    if (nr < 0 || nr >= R || nc < 0 || nc >= C) continue;
                    const std::size_t nt = std::size_t(nr) + std::size_t(nc) * std::size_t(R);
                    if (map.flagged[nt] && !seen[nt]) {
                        seen[nt] = 1;
                        stack.push_back(std::int64_t(nt));
                    }
                }
        }
        reg.area = std::int64_t(reg.pixels.size());
        reg.centroid_r = sum_r / double(reg.area);
        reg.centroid_c = sum_c / double(reg.area);
        std::sort(reg.pixels.begin(), reg.pixels.end());
        map.regions.push_back(std::move(reg));
    }
    std::sort(map.regions.begin(), map.regions.end(), [](const Region& a, const Region& b) {
        if (a.max_prob != b.max_prob) return a.max_prob > b.max_prob;
        if (a.centroid_r != b.centroid_r) return a.centroid_r < b.centroid_r;
        return a.centroid_c < b.centroid_c;
    });
    return map;
}

inline DiscoveryMap compute_discovery(const ImageGrid& prob, double delta, double alpha) {
    const FdrResult fr = fdr_threshold(prob, alpha);
    DiscoveryMap map = flag_regions(
        prob, fr.has_phi ? std::optional<double>(fr.phi) : std::nullopt, delta, alpha);
    map.xi = fr.xi;
    return map;
}

// ---------------------------------------------------------------------------
// Posterior-predictive virtual image.

// Take one retained draw of (B*, q, s); for each retained coefficient simulate
// unit effects u* ~ N(0, q I_m) and noise e* ~ N(0, s), assemble
// x'B* + z'u* + e*, zero-fill the dropped positions, invert the transform.
// The RNG consumption order is fixed (m unit normals then one noise normal per
// retained coefficient), so a given stream always yields the same image.
inline ImageGrid virtual_gel(const PosteriorDraws& draws, std::size_t draw,
                             const std::vector<double>& x_row, const std::vector<double>& z_row,
                             const TransformGeometry& geo, RngStream& rng) {
    if (x_row.size() != std::size_t(draws.p))
        throw data_error("covariate row length does not match covariate count");
    if (draw >= draws.n_draws) throw data_error("draw index out of range");
    for (std::int64_t pos : draws.positions)
        if (pos < 0 || std::size_t(pos) >= geo.tpad())
            throw data_error("retained position outside the transform grid; mask and dims disagree");
    std::vector<double> pad(geo.tpad(), 0.0);
    const std::size_t m = z_row.size();
    for (std::size_t j = 0; j < draws.positions.size(); ++j) {
        double val = 0.0;
        for (int a = 0; a < draws.p; ++a) val += x_row[std::size_t(a)] * draws.beta(draw, j, a);
        const double uq = std::sqrt(std::max(draws.qvar(draw, j), 0.0));
        for (std::size_t b = 0; b < m; ++b) val += z_row[b] * (uq * rng.normal());
        val += std::sqrt(std::max(draws.svar(draw, j), 0.0)) * rng.normal();
        pad[std::size_t(draws.positions[j])] = val;
    }
    return idwt2d_flat(pad, geo.t1, geo.t2, geo.p1, geo.p2, geo.spec);
}

}  // namespace isofmm
