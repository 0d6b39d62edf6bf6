#pragma once
// Orthonormal 2D wavelet transforms with periodic boundaries.
//
// Two kinds:
//   square      - nonseparable pyramid: one row pass + one column pass per
//                 scale, recursing on the approximation quadrant; detail
//                 orientations per scale are 1 (row details), 2 (column
//                 details), 3 (diagonal details), scaling band is orientation 0
//                 at scale levels+1.
//   rectangular - separable tensor product: a full multi-level transform of
//                 every column followed by one of every row; bands are indexed
//                 by the (row scale, column scale) pair.
//
// Dimensions that are not multiples of 2^levels are zero-padded up to the next
// multiple before transforming and cropped after inversion; padding is
// deterministic so the cropped round trip is exact. Energy is preserved on the
// padded domain (the transform is orthonormal and the padding adds zeros).

#include <algorithm>
#include <array>
#include <cstdint>
#include <map>
#include <utility>

#include "core.hpp"
#include "parallel.hpp"

namespace isofmm {

enum class TransformKind : std::int32_t { square = 0, rectangular = 1 };

struct WaveletSpec {
    int moments = 4;
    int levels = 6;
    TransformKind kind = TransformKind::square;

    void validate() const {
        if (moments < 1 || moments > 10)
            throw config_error("wavelet moments must be between 1 and 10");
        if (levels < 1) throw config_error("wavelet levels must be at least 1");
    }
    bool operator==(const WaveletSpec& o) const {
        return moments == o.moments && levels == o.levels && kind == o.kind;
    }
};

namespace detail {

// Daubechies extremal-phase scaling filters, 1..10 vanishing moments, computed
// by spectral factorization at 60-digit precision and rounded to double.
inline const std::vector<double>& daubechies_table(int moments) {
    static const std::array<std::vector<double>, 10> tables = {{
        {0.70710678118654752, 0.70710678118654752},
        {0.48296291314453414, 0.83651630373780791, 0.22414386804201338, -0.12940952255126038},
        {0.33267055295008262, 0.80689150931109258, 0.45987750211849157, -0.13501102001025459,
         -0.085441273882026662, 0.035226291885709537},
        {0.23037781330889650, 0.71484657055291565, 0.63088076792985891, -0.027983769416859854,
         -0.18703481171909308, 0.030841381835560764, 0.032883011666885200, -0.010597401785069032},
        {0.16010239797419291, 0.60382926979718967, 0.72430852843777293, 0.13842814590132073,
         -0.24229488706638203, -0.032244869584638375, 0.077571493840045714, -0.0062414902127982743,
         -0.012580751999081999, 0.0033357252854737713},
        {0.11154074335010946, 0.49462389039845309, 0.75113390802109535, 0.31525035170919763,
         -0.22626469396543982, -0.12976686756726194, 0.097501605587323049, 0.027522865530305729,
         -0.031582039317486030, 0.00055384220116149614, 0.0047772575109455106, -0.0010773010853084796},
        {0.077852054085009179, 0.39653931948191731, 0.72913209084623512, 0.46978228740519312,
         -0.14390600392856498, -0.22403618499387498, 0.071309219266830265, 0.080612609151083072,
         -0.038029936935014414, -0.016574541630666881, 0.012550998556099841, 0.00042957797292136652,
         -0.0018016407040474909, 0.00035371379997452025},
        {0.054415842243104010, 0.31287159091429997, 0.67563073629728981, 0.58535468365420671,
         -0.015829105256349306, -0.28401554296154693, 0.00047248457391328277, 0.12874742662047846,
         -0.017369301001807546, -0.044088253930794752, 0.013981027917398282, 0.0087460940474057767,
         -0.0048703529934515743, -0.00039174037337694705, 0.00067544940645056937, -0.00011747678412476953},
        {0.038077947363878347, 0.24383467461259035, 0.60482312369011111, 0.65728807805130054,
         0.13319738582500758, -0.29327378327917491, -0.096840783222976461, 0.14854074933810638,
         0.030725681479333379, -0.067632829061329974, 0.00025094711483145196, 0.022361662123679097,
         -0.0047232047577513973, -0.0042815036824634298, 0.0018476468830562265, 0.00023038576352319597,
         -0.00025196318894271014, 3.9347320316271599e-05},
        {0.026670057900555554, 0.18817680007769149, 0.52720118893172559, 0.68845903945360357,
         0.28117234366057746, -0.24984642432731538, -0.19594627437737704, 0.12736934033579326,
         0.093057364603572351, -0.071394147166397087, -0.029457536821875813, 0.033212674059341002,
         0.0036065535669561697, -0.010733175483330575, 0.0013953517470529012, 0.0019924052951850561,
         -0.00068585669495971163, -0.00011646685512928545, 9.3588670320069591e-05, -1.3264202894521245e-05},
    }};
    return tables[std::size_t(moments - 1)];
}

// Load-time filter validation: unit energy, sum sqrt(2), even-shift
// orthogonality. Guards the hand-entered table against transcription slips.
inline void validate_filter(const std::vector<double>& h) {
    const double rt2 = std::sqrt(2.0);
    double s = kahan_sum(h);
    if (std::abs(s - rt2) > 1e-12) throw numeric_error("wavelet filter sum violates sqrt(2)");
    if (std::abs(sum_sq(h) - 1.0) > 1e-12) throw numeric_error("wavelet filter energy violates 1");
    for (std::size_t k = 1; 2 * k < h.size(); ++k) {
        double dot = 0.0;
        for (std::size_t i = 0; i + 2 * k < h.size(); ++i) dot += h[i] * h[i + 2 * k];
        if (std::abs(dot) > 1e-12) throw numeric_error("wavelet filter shift orthogonality violated");
    }
}

struct FilterBank {
    std::vector<double> lo;  // scaling filter h
    std::vector<double> hi;  // wavelet filter g[n] = (-1)^n h[F-1-n]
};

inline const FilterBank& filter_bank(int moments) {
    static std::array<FilterBank, 10> banks;
    static std::array<bool, 10> ready{};
    auto& slot = banks[std::size_t(moments - 1)];
    if (!ready[std::size_t(moments - 1)]) {
        const auto& h = daubechies_table(moments);
        validate_filter(h);
        FilterBank fb;
        fb.lo = h;
        fb.hi.resize(h.size());
        for (std::size_t n = 0; n < h.size(); ++n)
            fb.hi[n] = ((n & 1) ? -1.0 : 1.0) * h[h.size() - 1 - n];
        slot = std::move(fb);
        ready[std::size_t(moments - 1)] = true;
    }
    return slot;
}

// One analysis level on a contiguous even-length span. Output layout is
// [approximation | detail]. Periodic indexing; the filter may wrap the span
// more than once when it is longer than the span.
inline void dwt_level(const double* x, double* out, int len, const FilterBank& fb) {
    const int half = len / 2;
    const int flen = int(fb.lo.size());
    for (int k = 0; k < half; ++k) {
        double a = 0.0, d = 0.0;
        for (int n = 0; n < flen; ++n) {
            int j = 2 * k + n;
            if (j >= len) j %= len;
            a += fb.lo[std::size_t(n)] * x[j];
            d += fb.hi[std::size_t(n)] * x[j];
        }
        out[k] = a;
        out[half + k] = d;
    }
}

// One synthesis level; adjoint of dwt_level (the transform is orthonormal).
inline void idwt_level(const double* c, double* out, int len, const FilterBank& fb) {
    const int half = len / 2;
    const int flen = int(fb.lo.size());
    std::fill(out, out + len, 0.0);
    for (int k = 0; k < half; ++k) {
        const double a = c[k], d = c[half + k];
        for (int n = 0; n < flen; ++n) {
            int j = 2 * k + n;
            if (j >= len) j %= len;
            out[j] += fb.lo[std::size_t(n)] * a + fb.hi[std::size_t(n)] * d;
        }
    }
}

struct Scratch {
    std::vector<double> a, b;
    void ensure(int n) {
        if (int(a.size()) < n) { a.resize(std::size_t(n)); b.resize(std::size_t(n)); }
    }
};

inline void dwt_span(double* x, std::ptrdiff_t stride, int len, int levels, const FilterBank& fb,
                     Scratch& sc) {
    sc.ensure(len);
    int cur = len;
    for (int j = 0; j < levels; ++j) {
        for (int i = 0; i < cur; ++i) sc.a[std::size_t(i)] = x[i * stride];
        dwt_level(sc.a.data(), sc.b.data(), cur, fb);
        for (int i = 0; i < cur; ++i) x[i * stride] = sc.b[std::size_t(i)];
        cur /= 2;
    }
}

inline void idwt_span(double* x, std::ptrdiff_t stride, int len, int levels, const FilterBank& fb,
                      Scratch& sc) {
    sc.ensure(len);
    int cur = len >> (levels - 1);
    for (int j = 0; j < levels; ++j) {
        for (int i = 0; i < cur; ++i) sc.a[std::size_t(i)] = x[i * stride];
        idwt_level(sc.a.data(), sc.b.data(), cur, fb);
        for (int i = 0; i < cur; ++i) x[i * stride] = sc.b[std::size_t(i)];
        cur *= 2;
    }
}

}  // namespace detail

// Smallest multiple of 2^levels that is >= extent.
inline int padded_extent(int extent, int levels) {
    const long long block = 1ll << levels;
    long long p = ((extent + block - 1) / block) * block;
    if (p > (1ll << 30)) throw config_error("padded extent overflows supported image size");
    return int(p);
}

// Full multi-level 1D transform. The signal length must allow an even split at
// every level, i.e. be a multiple of 2^levels; callers with other lengths pad
// first (the 2D entry points do this internally).
inline std::vector<double> dwt1d(const std::vector<double>& signal, const WaveletSpec& spec) {
    spec.validate();
    const int n = int(signal.size());
    if (n < (1 << spec.levels)) throw config_error("too many levels for signal length");
    if (n % (1 << spec.levels) != 0)
        throw config_error("signal length not a multiple of 2^levels; pad first");
    std::vector<double> out = signal;
    detail::Scratch sc;
    detail::dwt_span(out.data(), 1, n, spec.levels, detail::filter_bank(spec.moments), sc);
    return out;
}

inline std::vector<double> idwt1d(const std::vector<double>& coefs, const WaveletSpec& spec) {
    spec.validate();
    const int n = int(coefs.size());
    if (n < (1 << spec.levels)) throw config_error("too many levels for signal length");
    if (n % (1 << spec.levels) != 0)
        throw config_error("signal length not a multiple of 2^levels; pad first");
    std::vector<double> out = coefs;
    detail::Scratch sc;
    detail::idwt_span(out.data(), 1, n, spec.levels, detail::filter_bank(spec.moments), sc);
    return out;
}

// Coefficient label: (scale, orientation, location within band).
//   square:      scale 1..levels with orient in {1,2,3}; scaling band is
//                (levels+1, 0).
//   rectangular: scale = row-axis scale, orient = column-axis scale, each in
//                1..levels for details or levels+1 for that axis's scaling band.
// loc is the zero-based column-stacked position inside the band rectangle.
struct CoefIndex {
    std::int32_t scale = 0;
    std::int32_t orient = 0;
    std::int64_t loc = 0;

    bool operator==(const CoefIndex& o) const {
        return scale == o.scale && orient == o.orient && loc == o.loc;
    }
    std::pair<int, int> band() const { return {int(scale), int(orient)}; }
};

namespace detail {

// Dyadic band partition of one axis: len_of[j] is the approximation length
// after j levels (ceil halving, exact for multiples of 2^levels).
inline std::vector<int> axis_lengths(int extent, int levels) {
    std::vector<int> len(std::size_t(levels) + 1);
    len[0] = extent;
    for (int j = 1; j <= levels; ++j) len[std::size_t(j)] = (len[std::size_t(j - 1)] + 1) / 2;
    return len;
}

}  // namespace detail

// Labels every position of a t1 x t2 column-stacked coefficient array. The
// ceil/floor partition telescopes exactly, so the map always has t1*t2 entries
// regardless of divisibility; on dims that are multiples of 2^levels it
// coincides with the layout the transforms actually produce.
inline std::vector<CoefIndex> coef_index_map(int t1, int t2, const WaveletSpec& spec) {
    spec.validate();
    if (t1 < 1 || t2 < 1) throw data_error("coefficient map needs positive dims");
    std::vector<CoefIndex> map(std::size_t(t1) * std::size_t(t2));
    auto put = [&](int r0, int r1, int c0, int c1, int scale, int orient) {
        const std::int64_t band_rows = r1 - r0;
        for (int c = c0; c < c1; ++c)
            for (int r = r0; r < r1; ++r)
                map[std::size_t(r) + std::size_t(c) * t1] =
                    CoefIndex{scale, orient, (r - r0) + std::int64_t(c - c0) * band_rows};
    };
    if (spec.kind == TransformKind::square) {
        int rp = t1, cp = t2;
        for (int j = 1; j <= spec.levels; ++j) {
            const int rj = (rp + 1) / 2, cj = (cp + 1) / 2;
            put(0, rj, cj, cp, j, 1);
            put(rj, rp, 0, cj, j, 2);
            put(rj, rp, cj, cp, j, 3);
            rp = rj;
            cp = cj;
        }
        put(0, rp, 0, cp, spec.levels + 1, 0);
    } else {
        const auto lr = detail::axis_lengths(t1, spec.levels);
        const auto lc = detail::axis_lengths(t2, spec.levels);
        // band j occupies [len[j], len[j-1]); the scaling band is [0, len[levels])
        auto bounds = [&](const std::vector<int>& len, int band) -> std::pair<int, int> {
            if (band == spec.levels + 1) return {0, len[std::size_t(spec.levels)]};
            return {len[std::size_t(band)], len[std::size_t(band - 1)]};
        };
        for (int jr = 1; jr <= spec.levels + 1; ++jr) {
            auto [r0, r1] = bounds(lr, jr);
            for (int jc = 1; jc <= spec.levels + 1; ++jc) {
                auto [c0, c1] = bounds(lc, jc);
                put(r0, r1, c0, c1, jr, jc);
            }
        }
    }
    return map;
}

// Band sizes keyed by (scale, orient); convenience over the full map.
inline std::map<std::pair<int, int>, std::int64_t> band_counts(int t1, int t2,
                                                               const WaveletSpec& spec) {
    std::map<std::pair<int, int>, std::int64_t> out;
    for (const auto& ix : coef_index_map(t1, t2, spec)) ++out[ix.band()];
    return out;
}

// Transform of one image: coefficients live on the padded grid (column-major
// flat), original dims retained for cropping after inversion.
struct CoefGrid {
    int t1 = 0, t2 = 0;  // original dims
    int p1 = 0, p2 = 0;  // padded dims, multiples of 2^levels
    WaveletSpec spec;
    std::vector<double> coefs;  // length p1*p2

    std::vector<CoefIndex> index_map() const { return coef_index_map(p1, p2, spec); }
};

namespace detail {

inline void check_levels_2d(int t1, int t2, const WaveletSpec& spec) {
    if (std::min(t1, t2) < (1 << spec.levels))
        throw config_error("too many levels for image dimensions");
}

inline std::vector<double> pad_flat(const ImageGrid& img, int p1, int p2) {
    std::vector<double> buf(std::size_t(p1) * p2, 0.0);
    for (int c = 0; c < img.cols; ++c)
        std::copy_n(img.v.data() + std::size_t(c) * img.rows, std::size_t(img.rows),
                    buf.data() + std::size_t(c) * p1);
    return buf;
}

inline void square_forward(std::vector<double>& buf, int p1, int p2, const WaveletSpec& spec) {
    const auto& fb = filter_bank(spec.moments);
    Scratch sc;
    for (int j = 0; j < spec.levels; ++j) {
        const int rr = p1 >> j, cc = p2 >> j;
        for (int r = 0; r < rr; ++r) dwt_span(buf.data() + r, p1, cc, 1, fb, sc);
        for (int c = 0; c < cc; ++c) dwt_span(buf.data() + std::size_t(c) * p1, 1, rr, 1, fb, sc);
    }
}

inline void square_inverse(std::vector<double>& buf, int p1, int p2, const WaveletSpec& spec) {
    const auto& fb = filter_bank(spec.moments);
    Scratch sc;
    for (int j = spec.levels - 1; j >= 0; --j) {
        const int rr = p1 >> j, cc = p2 >> j;
        for (int c = 0; c < cc; ++c) idwt_span(buf.data() + std::size_t(c) * p1, 1, rr, 1, fb, sc);
        for (int r = 0; r < rr; ++r) idwt_span(buf.data() + r, p1, cc, 1, fb, sc);
    }
}

inline void rect_forward(std::vector<double>& buf, int p1, int p2, const WaveletSpec& spec) {
    const auto& fb = filter_bank(spec.moments);
    Scratch sc;
    for (int c = 0; c < p2; ++c)
        dwt_span(buf.data() + std::size_t(c) * p1, 1, p1, spec.levels, fb, sc);
    for (int r = 0; r < p1; ++r) dwt_span(buf.data() + r, p1, p2, spec.levels, fb, sc);
}

inline void rect_inverse(std::vector<double>& buf, int p1, int p2, const WaveletSpec& spec) {
    const auto& fb = filter_bank(spec.moments);
    Scratch sc;
    for (int r = 0; r < p1; ++r) idwt_span(buf.data() + r, p1, p2, spec.levels, fb, sc);
    for (int c = 0; c < p2; ++c)
        idwt_span(buf.data() + std::size_t(c) * p1, 1, p1, spec.levels, fb, sc);
}

}  // namespace detail

inline CoefGrid dwt2d(const ImageGrid& img, const WaveletSpec& spec) {
    spec.validate();
    detail::check_levels_2d(img.rows, img.cols, spec);
    CoefGrid out;
    out.t1 = img.rows;
    out.t2 = img.cols;
    out.p1 = padded_extent(img.rows, spec.levels);
    out.p2 = padded_extent(img.cols, spec.levels);
    out.spec = spec;
    out.coefs = detail::pad_flat(img, out.p1, out.p2);
    if (spec.kind == TransformKind::square)
        detail::square_forward(out.coefs, out.p1, out.p2, spec);
    else
        detail::rect_forward(out.coefs, out.p1, out.p2, spec);
    return out;
}

// Inverse from a flat padded coefficient vector; crops to the original dims.
inline ImageGrid idwt2d_flat(std::vector<double> coefs, int t1, int t2, int p1, int p2,
                             const WaveletSpec& spec) {
    spec.validate();
    if (coefs.size() != std::size_t(p1) * p2)
        throw data_error("coefficient length does not match padded dims");
    if (spec.kind == TransformKind::square)
        detail::square_inverse(coefs, p1, p2, spec);
    else
        detail::rect_inverse(coefs, p1, p2, spec);
    ImageGrid img(t1, t2);
    for (int c = 0; c < t2; ++c)
        std::copy_n(coefs.data() + std::size_t(c) * p1, std::size_t(t1),
                    img.v.data() + std::size_t(c) * t1);
    return img;
}

inline ImageGrid idwt2d(const CoefGrid& cg, const WaveletSpec& spec) {
    if (!(cg.spec == spec)) throw config_error("coefficient grid was built under a different spec");
    return idwt2d_flat(cg.coefs, cg.t1, cg.t2, cg.p1, cg.p2, spec);
}

inline ImageGrid idwt2d(const CoefGrid& cg) { return idwt2d(cg, cg.spec); }

// Transformed dataset: one flat coefficient row per image on the shared padded
// grid, plus the shared index map.
struct CoefSet {
    int t1 = 0, t2 = 0;
    int p1 = 0, p2 = 0;
    WaveletSpec spec;
    std::size_t n_images = 0;
    std::vector<double> coefs;  // image-major: image i at [i*tpad, (i+1)*tpad)
    std::vector<CoefIndex> index_map;

    std::size_t tpad() const { return std::size_t(p1) * p2; }
    const double* row(std::size_t i) const { return coefs.data() + i * tpad(); }
    double* row(std::size_t i) { return coefs.data() + i * tpad(); }
};

inline CoefSet transform_images(const std::vector<ImageGrid>& images, const WaveletSpec& spec,
                                unsigned workers = 0) {
    spec.validate();
    if (images.empty()) throw data_error("no images to transform");
    for (std::size_t i = 1; i < images.size(); ++i)
        if (!images[i].same_dims(images[0])) throw data_error("images do not share dimensions");
    detail::check_levels_2d(images[0].rows, images[0].cols, spec);
    CoefSet cs;
    cs.t1 = images[0].rows;
    cs.t2 = images[0].cols;
    cs.p1 = padded_extent(cs.t1, spec.levels);
    cs.p2 = padded_extent(cs.t2, spec.levels);
    cs.spec = spec;
    cs.n_images = images.size();
    cs.coefs.resize(cs.n_images * cs.tpad());
    if (workers == 0) workers = worker_count();
    parallel_for(images.size(), workers, [&](std::size_t i) {
        CoefGrid cg = dwt2d(images[i], spec);
        std::copy(cg.coefs.begin(), cg.coefs.end(), cs.row(i));
    });
    cs.index_map = coef_index_map(cs.p1, cs.p2, spec);
    return cs;
}

}  // namespace isofmm
