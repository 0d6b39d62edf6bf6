#pragma once
// Synthetic gel generator. Gels are built in log2 space as a shared background
// surface plus Gaussian spots, a per-unit scalar shift, and pixel noise, then
// exponentiated so the preprocessing chain sees raw intensities. Planted group
// effects add log2(fold) times the spot profile to the targeted group, which
// makes the group-mean log2 difference at a spot center exactly log2(fold).
//
// The background is itself a field of smooth bumps, not a constant: real gels
// carry several log2 units of multiscale texture, and on a flat phantom the
// scaling coefficient would hold essentially all of the energy, leaving the
// compression step nothing meaningful to rank.

#include <algorithm>
#include <cstdint>
#include <optional>

#include "core.hpp"
#include "rng.hpp"
#include "wavelet.hpp"

namespace isofmm {

struct PhantomSpot {
    double row = 0.0, col = 0.0;  // center, zero-based pixel coordinates
    double sd_r = 2.0, sd_c = 2.0;
    double peak = 2.0;  // amplitude at center, log2 units
    // When positive, the bell is replaced by its wavelet approximation at this
    // depth, so the shape carries zero detail energy at scales finer than
    // 2^smooth_levels pixels. A smoothed shape occupies only the coarse block
    // of the transform, which keeps its retention under energy compression
    // independent of where the threshold lands among the fine coefficients.
    int smooth_levels = 0;

    double profile(int r, int c) const {
        const double zr = (r - row) / sd_r, zc = (c - col) / sd_c;
        return std::exp(-0.5 * (zr * zr + zc * zc));
    }
};

namespace detail {

// Unit-peak field of one spot on the full grid, smoothed when requested.
inline ImageGrid spot_field(int rows, int cols, const PhantomSpot& sp) {
    ImageGrid f{rows, cols};
    for (int c = 0; c < cols; ++c)
        for (int r = 0; r < rows; ++r) f.at(r, c) = sp.profile(r, c);
    if (sp.smooth_levels > 0) {
        WaveletSpec ws;
        ws.levels = sp.smooth_levels;
        CoefGrid cg = dwt2d(f, ws);
        const auto map = coef_index_map(cg.p1, cg.p2, ws);
        for (std::size_t i = 0; i < cg.coefs.size(); ++i)
            if (map[i].orient != 0) cg.coefs[i] = 0.0;
        f = idwt2d(cg);
    }
    return f;
}

}  // namespace detail

struct PlantedEffect {
    int spot = 0;       // index into PhantomSpec::spots
    int group = 0;      // zero-based group index
    double fold = 1.0;  // multiplicative change for that group's spot
};

struct PhantomSpec {
    int rows = 64, cols = 64;
    int n_groups = 3;
    int units_per_group = 4;
    int gels_per_unit = 2;
    std::vector<PhantomSpot> spots;
    std::vector<PlantedEffect> planted;
    // shared structure added to every gel identically; peaks may be negative
    // (wells), and these are exempt from the overlap and null-field rules
    // because they cancel in every group contrast
    std::vector<PhantomSpot> background_spots;
    // iid per-pixel texture in [-h, +h] log2 units, drawn once per dataset and
    // shared by every gel; bounded range keeps the total-intensity
    // normalization stable while still spreading energy across fine scales.
    // The binary variant draws +h or -h with equal probability: it carries the
    // most fine-scale energy per unit of intensity-domain skew a bounded
    // amplitude can, which keeps the scaling coefficient's share of the total
    // energy down.
    double texture_halfwidth = 0.0;
    bool texture_binary = false;
    // optional keep-out disc: texture fades to zero inside radius tex_clear_r0
    // around (tex_clear_row, tex_clear_col), reaching full strength again at
    // tex_clear_r1; off when tex_clear_r0 is negative
    double tex_clear_row = 0.0, tex_clear_col = 0.0;
    double tex_clear_r0 = -1.0, tex_clear_r1 = -1.0;
    // Optional magnitude floor on every shared-surface wavelet coefficient
    // coarser than coarse_floor_levels (sign preserved, applied before the
    // per-group effects). On a small image the coarse atoms wrap around it, so
    // each coarse coefficient mixes all structural elements with quasi-random
    // phases, and a near cancellation can park a coefficient that carries
    // planted-effect energy at a magnitude where its retention under energy
    // compression flips with the texture draw. The floor pins every coarse
    // coefficient of the shared surface safely above such thresholds without
    // touching group contrasts. Off when zero.
    double coarse_floor = 0.0;
    int coarse_floor_levels = 4;
    double animal_sd = 0.1;     // SD of the per-unit shift, log2 units
    double noise_sd = 0.2;      // pixel noise SD, log2 units
    double background = 6.0;    // floor, log2 units
    double mask_min_fold = 1.5;  // truth masks record pixels changed at least this fold
    std::uint64_t seed = 1;
    // spot-free rectangle (inclusive bounds) kept for false-positive audits
    int null_r0 = 0, null_r1 = -1, null_c0 = 0, null_c1 = -1;

    int n_units() const { return n_groups * units_per_group; }
    int n_gels() const { return n_units() * gels_per_unit; }

    void validate() const {
        if (rows < 8 || cols < 8) throw config_error("phantom dims must be at least 8x8");
        if (n_groups < 1 || units_per_group < 1 || gels_per_unit < 1)
            throw config_error("phantom needs at least one group, unit and gel");
        if (!(animal_sd >= 0.0) || !(noise_sd >= 0.0))
            throw config_error("phantom SDs must be nonnegative");
        if (!(texture_halfwidth >= 0.0))
            throw config_error("texture halfwidth must be nonnegative");
        if (tex_clear_r0 >= 0.0) {
            if (tex_clear_r1 < tex_clear_r0)
                throw config_error("texture keep-out outer radius must be at least the inner");
            if (tex_clear_row < 0 || tex_clear_row >= rows || tex_clear_col < 0 ||
                tex_clear_col >= cols)
                throw config_error("texture keep-out center outside the image");
        }
        if (!(mask_min_fold > 1.0)) throw config_error("mask fold threshold must exceed 1");
        if (!(coarse_floor >= 0.0)) throw config_error("coarse floor must be nonnegative");
        if (coarse_floor > 0.0 &&
            (coarse_floor_levels < 1 || (1 << (coarse_floor_levels + 1)) > std::min(rows, cols)))
            throw config_error("coarse floor depth does not fit the image");
        for (const auto& sp : spots) {
            if (!(sp.sd_r > 0.0) || !(sp.sd_c > 0.0))
                throw config_error("spot widths must be positive");
            if (sp.row < 0 || sp.row >= rows || sp.col < 0 || sp.col >= cols)
                throw config_error("spot center outside the image");
            if (sp.smooth_levels < 0 || (1 << std::max(sp.smooth_levels, 0)) > std::min(rows, cols))
                throw config_error("spot smoothing depth does not fit the image");
        }
        for (const auto& sp : background_spots) {
            if (!(sp.sd_r > 0.0) || !(sp.sd_c > 0.0))
                throw config_error("background spot widths must be positive");
            if (sp.row < 0 || sp.row >= rows || sp.col < 0 || sp.col >= cols)
                throw config_error("background spot center outside the image");
            if (sp.smooth_levels < 0 || (1 << std::max(sp.smooth_levels, 0)) > std::min(rows, cols))
                throw config_error("background spot smoothing depth does not fit the image");
        }
        for (const auto& pe : planted) {
            if (pe.spot < 0 || std::size_t(pe.spot) >= spots.size())
                throw config_error("planted effect references a missing spot");
            if (pe.group < 0 || pe.group >= n_groups)
                throw config_error("planted effect references a missing group");
            if (!(pe.fold > 0.0)) throw config_error("fold changes must be positive");
        }
        // the same (spot, group) pair must not be planted twice with different
        // folds, and neither may two spatially overlapping planted spots
        // disagree within a group: the truth surface would be ambiguous
        for (std::size_t i = 0; i < planted.size(); ++i)
            for (std::size_t j = i + 1; j < planted.size(); ++j) {
                const auto& a = planted[i];
                const auto& b = planted[j];
                if (a.group != b.group || a.fold == b.fold) continue;
                if (a.spot == b.spot)
                    throw config_error("conflicting fold changes planted on one spot");
                const auto& sa = spots[std::size_t(a.spot)];
                const auto& sb = spots[std::size_t(b.spot)];
                const bool rsep = std::abs(sa.row - sb.row) > 3.0 * (sa.sd_r + sb.sd_r);
                const bool csep = std::abs(sa.col - sb.col) > 3.0 * (sa.sd_c + sb.sd_c);
                if (!rsep && !csep)
                    throw config_error("overlapping planted spots with conflicting fold changes");
            }
        if (null_r1 >= null_r0 || null_c1 >= null_c0) {
            if (null_r0 < 0 || null_r1 >= rows || null_c0 < 0 || null_c1 >= cols ||
                null_r1 < null_r0 || null_c1 < null_c0)
                throw config_error("null field rectangle outside the image");
            // the audit rectangle must stay clear of every spot's 3-sigma box
            for (const auto& sp : spots) {
                const double r0 = sp.row - 3.0 * sp.sd_r, r1 = sp.row + 3.0 * sp.sd_r;
                const double c0 = sp.col - 3.0 * sp.sd_c, c1 = sp.col + 3.0 * sp.sd_c;
                if (r1 >= null_r0 && r0 <= null_r1 && c1 >= null_c0 && c0 <= null_c1)
                    throw config_error("null field rectangle intersects a spot");
            }
        }
    }
    bool has_null_field() const { return null_r1 >= null_r0 && null_c1 >= null_c0; }
};

// What was actually planted, for scoring a fit against the ground truth.
struct PhantomTruth {
    std::vector<ImageGrid> group_log2;   // per group: noise-free log2 surface
    std::vector<ImageGrid> effect_log2;  // per planted entry: its log2 effect surface
    std::vector<std::vector<std::uint8_t>> spot_mask;  // per planted entry: profile >= half max
    // per planted entry: pixels whose change is at least mask_min_fold
    std::vector<std::vector<std::uint8_t>> effect_mask;
    int null_r0 = 0, null_r1 = -1, null_c0 = 0, null_c1 = -1;

    std::vector<std::uint8_t> null_mask(int rows, int cols) const {
        std::vector<std::uint8_t> m(std::size_t(rows) * cols, 0);
        for (int c = null_c0; c <= null_c1; ++c)
            for (int r = null_r0; r <= null_r1; ++r)
                m[std::size_t(r) + std::size_t(c) * std::size_t(rows)] = 1;
        return m;
    }
};

struct PhantomResult {
    Dataset data;  // raw-intensity gels plus ids, labels, units
    PhantomTruth truth;
};

// Deterministic in (spec, seed): one named substream drives the unit shifts,
// one more drives the pixel noise, consumed in a fixed order.
inline PhantomResult simulate_dataset(const PhantomSpec& spec) {
    spec.validate();
    const int R = spec.rows, C = spec.cols;
    const std::size_t npix = std::size_t(R) * C;
    PhantomResult out;

    // per-group amplitude of each spot in log2 units
    std::vector<std::vector<double>> amp(std::size_t(spec.n_groups),
                                         std::vector<double>(spec.spots.size()));
    for (int g = 0; g < spec.n_groups; ++g)
        for (std::size_t k = 0; k < spec.spots.size(); ++k) amp[std::size_t(g)][k] = spec.spots[k].peak;
    for (const auto& pe : spec.planted)
        amp[std::size_t(pe.group)][std::size_t(pe.spot)] += std::log2(pe.fold);

    std::vector<ImageGrid> spot_prof(spec.spots.size());
    for (std::size_t k = 0; k < spec.spots.size(); ++k)
        spot_prof[k] = detail::spot_field(R, C, spec.spots[k]);

    ImageGrid base{R, C, std::vector<double>(npix, spec.background)};
    for (const auto& sp : spec.background_spots) {
        if (sp.peak == 0.0) continue;
        const ImageGrid f = detail::spot_field(R, C, sp);
        for (std::size_t t = 0; t < npix; ++t) base.v[t] += sp.peak * f.v[t];
    }
    if (spec.texture_halfwidth > 0.0) {
        RngStream tex_rng = named_stream(spec.seed, 0x9E3u);
        for (int c = 0; c < C; ++c)
            for (int r = 0; r < R; ++r) {
                // one draw per pixel regardless of the window, so the field
                // outside the keep-out is invariant to the window settings
                const double z = tex_rng.uniform();
                const double u = spec.texture_halfwidth *
                                 (spec.texture_binary ? (z < 0.5 ? -1.0 : 1.0) : 2.0 * z - 1.0);
                double w = 1.0;
                if (spec.tex_clear_r0 >= 0.0) {
                    const double d = std::hypot(r - spec.tex_clear_row, c - spec.tex_clear_col);
                    if (d <= spec.tex_clear_r0)
                        w = 0.0;
                    else if (d < spec.tex_clear_r1)
                        w = 0.5 - 0.5 * std::cos(M_PI * (d - spec.tex_clear_r0) /
                                                 (spec.tex_clear_r1 - spec.tex_clear_r0));
                }
                base.at(r, c) += w * u;
            }
    }
    // fold the spots' group-invariant parts into the shared surface so the
    // coarse floor below sees the complete shared structure; the group loop
    // then adds only each group's departure from the common peaks
    for (std::size_t k = 0; k < spec.spots.size(); ++k) {
        const double a = spec.spots[k].peak;
        if (a == 0.0) continue;
        for (std::size_t t = 0; t < npix; ++t) base.v[t] += a * spot_prof[k].v[t];
    }
    if (spec.coarse_floor > 0.0) {
        WaveletSpec ws;
        int L = 0;
        while ((2 << L) <= std::min(R, C)) ++L;
        ws.levels = L;
        CoefGrid cg = dwt2d(base, ws);
        const auto map = coef_index_map(cg.p1, cg.p2, ws);
        for (std::size_t i = 0; i < cg.coefs.size(); ++i) {
            if (map[i].scale <= spec.coarse_floor_levels) continue;
            if (std::abs(cg.coefs[i]) < spec.coarse_floor)
                cg.coefs[i] = std::copysign(spec.coarse_floor, cg.coefs[i]);
        }
        base = idwt2d(cg);
    }

    out.truth.group_log2.resize(std::size_t(spec.n_groups));
    for (int g = 0; g < spec.n_groups; ++g) {
        ImageGrid surf = base;
        for (std::size_t k = 0; k < spec.spots.size(); ++k) {
            const double a = amp[std::size_t(g)][k] - spec.spots[k].peak;
            if (a == 0.0) continue;
            for (std::size_t t = 0; t < npix; ++t) surf.v[t] += a * spot_prof[k].v[t];
        }
        out.truth.group_log2[std::size_t(g)] = std::move(surf);
    }
    const double mask_log2 = std::log2(spec.mask_min_fold);
    for (const auto& pe : spec.planted) {
        const ImageGrid& prof = spot_prof[std::size_t(pe.spot)];
        const double half = 0.5 * *std::max_element(prof.v.begin(), prof.v.end());
        ImageGrid eff{R, C, std::vector<double>(npix, 0.0)};
        std::vector<std::uint8_t> mask(npix, 0), emask(npix, 0);
        const double a = std::log2(pe.fold);
        for (std::size_t t = 0; t < npix; ++t) {
            eff.v[t] = a * prof.v[t];
            if (prof.v[t] >= half) mask[t] = 1;
            if (std::abs(eff.v[t]) >= mask_log2) emask[t] = 1;
        }
        out.truth.effect_log2.push_back(std::move(eff));
        out.truth.spot_mask.push_back(std::move(mask));
        out.truth.effect_mask.push_back(std::move(emask));
    }
    out.truth.null_r0 = spec.null_r0;
    out.truth.null_r1 = spec.null_r1;
    out.truth.null_c0 = spec.null_c0;
    out.truth.null_c1 = spec.null_c1;

    RngStream unit_rng = named_stream(spec.seed, 0x9E1u);
    RngStream noise_rng = named_stream(spec.seed, 0x9E2u);
    std::vector<double> unit_shift(std::size_t(spec.n_units()));
    for (double& u : unit_shift) u = spec.animal_sd * unit_rng.normal();

    for (int g = 0; g < spec.n_groups; ++g)
        for (int uu = 0; uu < spec.units_per_group; ++uu) {
            const int unit = g * spec.units_per_group + uu;
            for (int rep = 0; rep < spec.gels_per_unit; ++rep) {
                ImageGrid gel{R, C, std::vector<double>(npix)};
                const ImageGrid& surf = out.truth.group_log2[std::size_t(g)];
                for (std::size_t t = 0; t < npix; ++t) {
                    const double L = surf.v[t] + unit_shift[std::size_t(unit)] +
                                     spec.noise_sd * noise_rng.normal();
                    gel.v[t] = std::exp2(L);
                }
                out.data.images.push_back(std::move(gel));
                out.data.image_ids.push_back("gel_g" + std::to_string(g + 1) + "_u" +
                                             std::to_string(uu + 1) + "_r" + std::to_string(rep + 1));
                out.data.group_labels.push_back("group" + std::to_string(g + 1));
                out.data.unit_ids.push_back("unit" + std::to_string(unit + 1));
            }
        }
    out.data.validate();
    return out;
}

// Default three-group layout used by the synthetic end-to-end checks: a
// textured shared background, a few group spots with one fold change planted
// in group 1, and a clear lower-right rectangle as the null field.
//
// The background has four deliberate features. A bounded iid texture spreads
// energy across fine scales so the compression prefix ranks a realistic
// spectrum instead of a lone scaling coefficient, and its hard range cap keeps
// the total-intensity normalization away from lognormal tail blowup. A sparse
// layer of wide bumps adds mid-scale structure. A smooth dark well in the
// upper-right corner pins the window minimum of every gel to a fixed spot-free
// location, keeping the near-zero pixels that the log2 step maps far downward
// confined there rather than at random noise minima. And the coarse block of
// the shared surface is floored in magnitude so every coefficient position
// that can carry planted-effect energy rides far above any compression
// threshold, for every seed.
inline PhantomSpec default_phantom(std::uint64_t seed, double fold = 2.0) {
    PhantomSpec spec;
    spec.rows = 64;
    spec.cols = 64;
    spec.n_groups = 3;
    spec.units_per_group = 4;
    spec.gels_per_unit = 2;
    spec.seed = seed;
    // The planted spot is wide enough that its wavelet energy concentrates in
    // a handful of coarse coefficients sitting far above the texture's
    // per-coefficient spread; retention of those coefficients is then stable
    // across compression levels instead of flipping with the texture draw.
    spec.spots = {
        {21.0, 21.0, 10.0, 10.0, 7.0, 4},  // planted spot, coarse-block shape
        {13.0, 47.0, 3.4, 2.6, 2.5},
        {46.0, 10.0, 2.6, 3.4, 2.7},
    };
    spec.planted = {{0, 0, fold}};
    spec.animal_sd = 0.05;
    spec.noise_sd = 0.30;
    spec.background = 14.0;
    // binary rather than uniform: at the energy needed to keep the scaling
    // coefficient's share of each gel's total below the working compression
    // levels, a binary field needs the smallest amplitude, which keeps the
    // intensity-domain skew of the texture manageable
    spec.texture_halfwidth = 13.0;
    spec.texture_binary = true;
    // the shape of the flagged region must be a property of the planted spot,
    // not of which texture coefficients a given compression level happens to
    // keep, so the texture stays outside the reach of any fine-scale atom that
    // touches the spot's footprint
    spec.tex_clear_row = 21.0;
    spec.tex_clear_col = 21.0;
    spec.tex_clear_r0 = 26.0;
    spec.tex_clear_r1 = 32.0;
    spec.null_r0 = 52;
    spec.null_r1 = 63;
    spec.null_c0 = 36;
    spec.null_c1 = 63;

    // every coefficient position that can carry planted-effect energy must
    // survive compression at any working retention level, for every seed; the
    // floor pins the shared surface's coarse block high enough that no
    // cancellation among background elements can drop one of those positions
    // near a retention threshold
    spec.coarse_floor = 65.0;
    spec.coarse_floor_levels = 4;

    const double spot_row = 21.0, spot_col = 21.0;
    const double well_row = 4.0, well_col = 59.0;
    spec.background_spots.push_back({well_row, well_col, 3.0, 3.0, -9.0});
    // deep dim pocket under the planted spot: it scales down the spot's share
    // of each gel's total intensity, so the planted fold barely moves the
    // total and the normalization stays common across groups
    spec.background_spots.push_back({spot_row, spot_col, 14.0, 14.0, -18.0, 4});
    // mid-scale clutter, kept away from the well (it must stay the darkest
    // point) and from the planted spot (a bump under it would inflate the
    // fold's contribution to the gel total)
    RngStream bump_rng = named_stream(seed, 0x9E4u);
    for (int k = 0; k < 60; ++k) {
        double r, c;
        do {
            r = 2.0 + 59.0 * bump_rng.uniform();
            c = 2.0 + 59.0 * bump_rng.uniform();
        } while ((r - well_row) * (r - well_row) + (c - well_col) * (c - well_col) < 14.0 * 14.0 ||
                 (r - spot_row) * (r - spot_row) + (c - spot_col) * (c - spot_col) < 30.0 * 30.0);
        const double sr = 2.0 + 3.0 * bump_rng.uniform();
        const double sc = 2.0 + 3.0 * bump_rng.uniform();
        const double a = 0.3 + 0.9 * bump_rng.uniform();
        spec.background_spots.push_back({r, c, sr, sc, a});
    }
    return spec;
}

}  // namespace isofmm
