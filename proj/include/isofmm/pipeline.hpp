#pragma once
// Run orchestration: preprocess -> transform -> compress -> fit -> infer, with
// every stage cached on disk and keyed by the run's config hash. Loading a
// cache with the wrong hash refuses rather than silently mixing runs; removing
// the output directory always gives a clean slate.

#include <iostream>

#include "inference.hpp"
#include "io.hpp"
#include "phantom.hpp"
#include "preprocess.hpp"

#include "json.hpp"

namespace isofmm {

// One run's worth of knobs. Defaults follow the reference analysis setup:
// db4 square transform at 6 levels, P = 0.975, halfwidth 100, 20,000 sweeps
// after 1,000 burn-in thinned by 10, alpha 0.10, primary delta log2(1.5).
struct RunConfig {
    WaveletSpec wavelet;
    double compression_p = 0.975;
    int halfwidth = 100;
    std::optional<double> epsilon;  // log offset; derived from the data when unset
    int burn_in = 1000;
    int iterations = 20000;
    int thin = 10;
    std::uint64_t seed = 20080501;
    double proposal_sd = 0.5;
    double alpha = 0.10;
    std::vector<double> deltas = {std::log2(1.25), std::log2(1.5), std::log2(2.0)};
    double primary_delta = std::log2(1.5);
    std::vector<double> quantiles = {0.005, 0.01, 0.025, 0.975, 0.99, 0.995};
    bool intercept_treatment = false;
    // extra contrasts as (name, sparse zero-based (covariate, weight) pairs)
    std::vector<std::pair<std::string, std::vector<std::pair<int, double>>>> extra_contrasts;
    int virtual_gels = 0;
    std::filesystem::path manifest, out_dir, cache_dir;

    void validate() const;
    std::uint64_t config_hash() const;
    std::filesystem::path cache_path(const char* name) const;
};

inline void RunConfig::validate() const {
    wavelet.validate();
    if (!(compression_p > 0.0 && compression_p <= 1.0))
        throw config_error("compression P must lie in (0,1]");
    if (halfwidth < 1) throw config_error("background halfwidth must be at least 1");
    if (epsilon && !(*epsilon > 0.0)) throw config_error("log offset must be strictly positive");
    if (burn_in < 0) throw config_error("burn_in must be nonnegative");
    if (iterations < 1) throw config_error("iterations must be positive");
    if (thin < 1 || thin > iterations)
        throw config_error("thin must lie in [1, iterations]");
    if (!(proposal_sd > 0.0)) throw config_error("proposal_sd must be positive");
    if (!(alpha > 0.0 && alpha < 1.0)) throw config_error("alpha must lie strictly in (0,1)");
    if (deltas.empty()) throw config_error("at least one delta is required");
    for (double d : deltas)
        if (!(d >= 0.0)) throw config_error("delta must be nonnegative");
    if (!(primary_delta >= 0.0)) throw config_error("delta must be nonnegative");
    for (double q : quantiles)
        if (!(q > 0.0 && q < 1.0)) throw config_error("quantile levels must lie strictly in (0,1)");
    if (virtual_gels < 0) throw config_error("virtual gel count must be nonnegative");
    if (out_dir.empty()) throw config_error("no output directory given");
}

// Hash of the parameters that determine the model artifacts (caches, mask,
// draws). Inference knobs (alpha, deltas, quantiles, contrasts) only label
// outputs and are deliberately left out, as are all paths, so the same model
// run is recognized wherever it lives.
inline std::uint64_t RunConfig::config_hash() const {
    nlohmann::json j;
    j["halfwidth"] = halfwidth;
    if (epsilon)
        j["epsilon"] = *epsilon;
    else
        j["epsilon"] = nullptr;
    j["moments"] = wavelet.moments;
    j["levels"] = wavelet.levels;
    j["kind"] = wavelet.kind == TransformKind::square ? "square" : "rectangular";
    j["compression_p"] = compression_p;
    j["burn_in"] = burn_in;
    j["iterations"] = iterations;
    j["thin"] = thin;
    j["seed"] = seed;
    j["proposal_sd"] = proposal_sd;
    j["coding"] = intercept_treatment ? "intercept_treatment" : "cell_means";
    return fnv1a(j.dump());
}

inline std::filesystem::path RunConfig::cache_path(const char* name) const {
    return (cache_dir.empty() ? out_dir : cache_dir) / name;
}

namespace detail {

// rethrow with the failing stage's name so aborts say where they happened
template <typename Fn>
auto stage(const char* name, std::ostream& log, Fn&& fn) -> decltype(fn()) {
    log << "[" << name << "] start\n";
    try {
        auto&& result = fn();
        log << "[" << name << "] done\n";
        return std::forward<decltype(result)>(result);
    } catch (const config_error& e) {
        throw config_error(std::string("stage ") + name + ": " + e.what());
    } catch (const data_error& e) {
        throw data_error(std::string("stage ") + name + ": " + e.what());
    } catch (const numeric_error& e) {
        throw numeric_error(std::string("stage ") + name + ": " + e.what());
    }
}

inline std::string delta_tag(double d) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4f", d);
    return std::string(buf);
}

// deltas to report on: configured list with the primary always present
inline std::vector<double> all_deltas(const RunConfig& cfg) {
    std::vector<double> ds = cfg.deltas;
    bool found = false;
    for (double d : ds)
        if (std::abs(d - cfg.primary_delta) < 1e-12) found = true;
    if (!found) ds.push_back(cfg.primary_delta);
    std::sort(ds.begin(), ds.end());
    ds.erase(std::unique(ds.begin(), ds.end()), ds.end());
    return ds;
}

}  // namespace detail

inline void write_config_echo(const RunConfig& cfg) {
    nlohmann::json j;
    j["config_hash"] = hash_hex(cfg.config_hash());
    j["halfwidth"] = cfg.halfwidth;
    if (cfg.epsilon)
        j["epsilon"] = *cfg.epsilon;
    else
        j["epsilon"] = nullptr;
    j["moments"] = cfg.wavelet.moments;
    j["levels"] = cfg.wavelet.levels;
    j["kind"] = cfg.wavelet.kind == TransformKind::square ? "square" : "rectangular";
    j["compression_p"] = cfg.compression_p;
    j["burn_in"] = cfg.burn_in;
    j["iterations"] = cfg.iterations;
    j["thin"] = cfg.thin;
    j["seed"] = cfg.seed;
    j["proposal_sd"] = cfg.proposal_sd;
    j["coding"] = cfg.intercept_treatment ? "intercept_treatment" : "cell_means";
    j["alpha"] = cfg.alpha;
    j["deltas"] = detail::all_deltas(cfg);
    j["primary_delta"] = cfg.primary_delta;
    j["quantiles"] = cfg.quantiles;
    j["virtual_gels"] = cfg.virtual_gels;
    nlohmann::json jc = nlohmann::json::array();
    for (const auto& [name, weights] : cfg.extra_contrasts) {
        nlohmann::json one;
        one["name"] = name;
        nlohmann::json w = nlohmann::json::array();
        for (const auto& [idx, val] : weights) w.push_back({{"covariate", idx + 1}, {"weight", val}});
        one["weights"] = w;
        jc.push_back(one);
    }
    j["contrasts"] = jc;
    j["manifest"] = cfg.manifest.string();
    j["out_dir"] = cfg.out_dir.string();
    detail::write_file_atomic(cfg.out_dir / "config.json", j.dump(2) + "\n");
}

inline PreprocCache stage_preprocess(const RunConfig& cfg, std::ostream& log) {
    return detail::stage("preprocess", log, [&]() -> PreprocCache {
        const auto path = cfg.cache_path("preprocessed.bin");
        const std::uint64_t hash = cfg.config_hash();
        if (std::filesystem::exists(path)) {
            log << "[preprocess] using cache " << path.string() << "\n";
            return read_preproc_cache(path, hash);
        }
        if (cfg.manifest.empty()) throw config_error("no manifest given; pass --manifest");
        Dataset ds = load_manifest(cfg.manifest);
        PreprocCache pc;
        pc.config_hash = hash;
        pc.epsilon = preprocess_dataset(ds, cfg.halfwidth, cfg.epsilon);
        pc.t1 = ds.images.front().rows;
        pc.t2 = ds.images.front().cols;
        pc.meta.image_ids = ds.image_ids;
        pc.meta.group_labels = ds.group_labels;
        pc.meta.unit_ids = ds.unit_ids;
        pc.images = std::move(ds.images);
        write_preproc_cache(path, pc);
        log << "[preprocess] " << pc.images.size() << " images, log offset " << pc.epsilon << "\n";
        return pc;
    });
}

inline CoefCache stage_transform(const RunConfig& cfg, std::ostream& log) {
    const auto path = cfg.cache_path("coefficients.bin");
    const std::uint64_t hash = cfg.config_hash();
    if (std::filesystem::exists(path)) {
        return detail::stage("transform", log, [&] {
            log << "[transform] using cache " << path.string() << "\n";
            return read_coef_cache(path, hash);
        });
    }
    PreprocCache pc = stage_preprocess(cfg, log);
    return detail::stage("transform", log, [&] {
        CoefCache cc;
        cc.config_hash = hash;
        cc.meta = pc.meta;
        cc.coefs = transform_images(pc.images, cfg.wavelet);
        write_coef_cache(path, cc);
        log << "[transform] " << cc.coefs.n_images << " images to " << cc.coefs.p1 << "x"
            << cc.coefs.p2 << " coefficient grids\n";
        return cc;
    });
}

// Retained-position mask plus the compression table report.
inline MaskFile stage_compress(const RunConfig& cfg, std::ostream& log) {
    const auto path = cfg.cache_path("mask.txt");
    const std::uint64_t hash = cfg.config_hash();
    if (std::filesystem::exists(path)) {
        return detail::stage("compress", log, [&] {
            log << "[compress] using mask " << path.string() << "\n";
            return read_mask_file(path, hash);
        });
    }
    CoefCache cc = stage_transform(cfg, log);
    return detail::stage("compress", log, [&] {
        std::vector<double> grid = {0.5, 0.8, 0.9, 0.95, 0.975, 0.99, 0.995, 1.0};
        grid.push_back(cfg.compression_p);
        std::sort(grid.begin(), grid.end());
        grid.erase(std::unique(grid.begin(), grid.end()), grid.end());
        write_compression_table(cfg.out_dir / "compression.csv", compression_table(cc.coefs, grid));
        MaskFile mf;
        mf.mask = select_retained(cc.coefs, cfg.compression_p);
        mf.p1 = cc.coefs.p1;
        mf.p2 = cc.coefs.p2;
        mf.config_hash = hash;
        write_mask_file(path, mf.mask, mf.p1, mf.p2, hash);
        log << "[compress] P=" << cfg.compression_p << " retains " << mf.mask.t_star()
            << " of " << cc.coefs.tpad() << " positions\n";
        return mf;
    });
}

inline DesignSpec design_from_meta(const DatasetMeta& meta, bool intercept_treatment) {
    DesignSpec ds = build_design(meta.group_labels, meta.unit_ids, intercept_treatment);
    ds.check_rank();
    return ds;
}

inline void stage_fit(const RunConfig& cfg, std::ostream& log) {
    const auto draws_path = cfg.cache_path("draws.bin");
    const std::uint64_t hash = cfg.config_hash();
    if (std::filesystem::exists(draws_path)) {
        detail::stage("fit", log, [&] {
            DrawsReader reader(draws_path);
            if (reader.header().config_hash != hash)
                throw data_error("draws file " + draws_path.string() +
                                 ": config hash mismatch; rebuild or change --out");
            log << "[fit] using draws " << draws_path.string() << "\n";
            return 0;
        });
        return;
    }
    CoefCache cc = stage_transform(cfg, log);
    MaskFile mf = stage_compress(cfg, log);
    detail::stage("fit", log, [&] {
        DesignSpec ds = design_from_meta(cc.meta, cfg.intercept_treatment);
        DesignWork dw(ds);
        RetainedMatrix rm = apply_mask(cc.coefs, mf.mask);
        std::vector<std::pair<int, int>> bands(rm.positions.size());
        for (std::size_t j = 0; j < rm.positions.size(); ++j)
            bands[j] = cc.coefs.index_map[std::size_t(rm.positions[j])].band();
        log << "[fit] moment starting values for " << rm.positions.size() << " columns\n";
        std::vector<ColumnInit> inits = init_estimates(rm, dw);
        HyperEstimate he = estimate_shrinkage_hyperparams(inits, bands, dw.p, cc.coefs.spec);
        for (const auto& w : he.warnings) log << "[fit] warning: " << w << "\n";
        write_hyper_csv(cfg.out_dir / "hyperparams.csv", he.hyper, ds.covariate_names);
        SamplerConfig sc;
        sc.burn_in = cfg.burn_in;
        sc.iterations = cfg.iterations;
        sc.thin = cfg.thin;
        sc.seed = cfg.seed;
        sc.proposal_sd = cfg.proposal_sd;
        log << "[fit] sampling " << sc.iterations << " sweeps (burn-in " << sc.burn_in
            << ", thin " << sc.thin << ") over " << rm.positions.size() << " columns\n";
        PosteriorDraws draws = run_sampler(rm, dw, he.hyper, inits, bands, sc);
        DrawsHeader h;
        h.config_hash = hash;
        h.mask_hash = mask_hash(mf.mask, mf.p1, mf.p2);
        h.design_hash = design_hash(ds);
        h.seed = cfg.seed;
        h.burn_in = cfg.burn_in;
        h.iterations = cfg.iterations;
        h.thin = cfg.thin;
        h.t1 = cc.coefs.t1;
        h.t2 = cc.coefs.t2;
        h.p1 = cc.coefs.p1;
        h.p2 = cc.coefs.p2;
        h.moments = cfg.wavelet.moments;
        h.levels = cfg.wavelet.levels;
        h.kind = int(cfg.wavelet.kind);
        h.N = dw.N;
        h.p = dw.p;
        h.m = dw.m;
        h.n_draws = draws.n_draws;
        h.t_star = draws.positions.size();
        h.covariate_names = ds.covariate_names;
        h.positions = draws.positions;
        h.acceptance = draws.acceptance;
        write_draws_file(draws_path, h, draws.data);
        double acc = 0.0;
        for (double a : draws.acceptance) acc += a;
        if (!draws.acceptance.empty()) acc /= double(draws.acceptance.size());
        log << "[fit] wrote " << draws.n_draws << " draws per column; mean variance-step "
            << "acceptance " << acc << "\n";
        return 0;
    });
}

namespace detail {

struct ContrastPlan {
    std::string name;
    std::vector<double> weights;
};

inline std::vector<ContrastPlan> plan_contrasts(const RunConfig& cfg, const DrawsHeader& h) {
    std::vector<ContrastPlan> plans;
    for (int a = 0; a < h.p; ++a) {
        ContrastPlan cp;
        cp.name = h.covariate_names[std::size_t(a)];
        cp.weights.assign(std::size_t(h.p), 0.0);
        cp.weights[std::size_t(a)] = 1.0;
        plans.push_back(std::move(cp));
    }
    for (const auto& [name, sparse] : cfg.extra_contrasts) {
        ContrastPlan cp;
        cp.name = name;
        cp.weights.assign(std::size_t(h.p), 0.0);
        for (const auto& [idx, val] : sparse) {
            if (idx < 0 || idx >= h.p)
                throw config_error("contrast '" + name + "' references covariate " +
                                   std::to_string(idx + 1) + " but the design has " +
                                   std::to_string(h.p));
            cp.weights[std::size_t(idx)] += val;
        }
        plans.push_back(std::move(cp));
    }
    // names become file stems; keep them unambiguous
    for (std::size_t i = 0; i < plans.size(); ++i)
        for (std::size_t j = i + 1; j < plans.size(); ++j)
            if (plans[i].name == plans[j].name)
                throw config_error("duplicate contrast name '" + plans[i].name + "'");
    return plans;
}

inline std::string sanitize_stem(const std::string& s) {
    std::string out;
    for (char c : s)
        out += (std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_') ? c : '_';
    return out.empty() ? std::string("contrast") : out;
}

}  // namespace detail

inline void stage_infer(const RunConfig& cfg, std::ostream& log) {
    stage_fit(cfg, log);
    detail::stage("infer", log, [&] {
        DrawsReader reader(cfg.cache_path("draws.bin"));
        const DrawsHeader& h = reader.header();
        if (h.config_hash != cfg.config_hash())
            throw data_error("draws file config hash mismatch; rebuild or change --out");
        // the mask currently on disk must be the one the draws were fit from
        MaskFile mf = read_mask_file(cfg.cache_path("mask.txt"), cfg.config_hash());
        if (mask_hash(mf.mask, mf.p1, mf.p2) != h.mask_hash)
            throw data_error("draws file was fit from a different mask; refusing to mix artifacts");
        PosteriorDraws draws = reader.load();
        const TransformGeometry geo = reader.geometry();
        const std::vector<double> deltas = detail::all_deltas(cfg);
        const std::size_t npix = geo.npix();
        nlohmann::json report;
        report["config_hash"] = hash_hex(h.config_hash);
        report["alpha"] = cfg.alpha;
        report["n_draws"] = draws.n_draws;
        nlohmann::json jcontrasts = nlohmann::json::array();
        for (const auto& plan : detail::plan_contrasts(cfg, h)) {
            const std::string stem = detail::sanitize_stem(plan.name);
            log << "[infer] contrast " << plan.name << "\n";
            ScratchMatrixFile scratch(cfg.cache_path(("scratch_" + stem + ".tmp").c_str()), npix);
            std::vector<double> mean(npix, 0.0), comp(npix, 0.0);
            std::vector<std::vector<double>> exceed(deltas.size(),
                                                    std::vector<double>(npix, 0.0));
            stream_effect_draws(draws, plan.weights, geo, [&](std::size_t, const double* img) {
                scratch.append_row(img);
                for (std::size_t t = 0; t < npix; ++t) {
                    const double y = img[t] - comp[t];
                    const double s = mean[t] + y;
                    comp[t] = (s - mean[t]) - y;
                    mean[t] = s;
                }
                for (std::size_t di = 0; di < deltas.size(); ++di) {
                    std::vector<double>& cnt = exceed[di];
                    for (std::size_t t = 0; t < npix; ++t)
                        if (std::abs(img[t]) > deltas[di]) cnt[t] += 1.0;
                }
            });
            ImageGrid mean_img{geo.t1, geo.t2, std::move(mean)};
            for (double& x : mean_img.v) x /= double(draws.n_draws);
            write_csv_matrix(cfg.out_dir / (stem + "_mean.csv"), mean_img);
            double lo = mean_img.v[0], hi = mean_img.v[0];
            for (double x : mean_img.v) {
                lo = std::min(lo, x);
                hi = std::max(hi, x);
            }
            write_pgm(cfg.out_dir / (stem + "_mean.pgm"), mean_img, lo, hi);

            nlohmann::json jc;
            jc["name"] = plan.name;
            nlohmann::json jdeltas = nlohmann::json::array();
            for (std::size_t di = 0; di < deltas.size(); ++di) {
                ImageGrid prob{geo.t1, geo.t2, std::move(exceed[di])};
                for (double& x : prob.v) x /= double(draws.n_draws);
                const std::string tag = detail::delta_tag(deltas[di]);
                write_csv_matrix(cfg.out_dir / (stem + "_prob_d" + tag + ".csv"), prob);
                write_pgm(cfg.out_dir / (stem + "_prob_d" + tag + ".pgm"), prob, 0.0, 1.0);
                const FdrResult fr = fdr_threshold(prob, cfg.alpha);
                nlohmann::json jd;
                jd["delta"] = deltas[di];
                jd["phi"] = fr.has_phi ? nlohmann::json(fr.phi) : nlohmann::json("none");
                jd["xi"] = fr.xi;
                if (std::abs(deltas[di] - cfg.primary_delta) < 1e-12) {
                    DiscoveryMap map = flag_regions(
                        prob, fr.has_phi ? std::optional<double>(fr.phi) : std::nullopt,
                        deltas[di], cfg.alpha);
                    map.xi = fr.xi;
                    std::size_t n_flag = 0;
                    for (auto f : map.flagged) n_flag += f;
                    jd["n_flagged"] = n_flag;
                    jd["n_regions"] = map.regions.size();
                    write_region_csv(cfg.out_dir / (stem + "_regions.csv"), map.regions);
                    ImageGrid flag_img{geo.t1, geo.t2, std::vector<double>(npix, 0.0)};
                    for (std::size_t t = 0; t < npix; ++t) flag_img.v[t] = map.flagged[t];
                    write_pgm(cfg.out_dir / (stem + "_flagged.pgm"), flag_img, 0.0, 1.0);
                }
                jdeltas.push_back(jd);
            }
            jc["deltas"] = jdeltas;
            jcontrasts.push_back(jc);

            // pointwise credible band images from the scratch draws
            if (!cfg.quantiles.empty()) {
                std::vector<ImageGrid> qimgs(cfg.quantiles.size(),
                                             ImageGrid{geo.t1, geo.t2,
                                                       std::vector<double>(npix, 0.0)});
                const std::size_t tile =
                    std::max<std::size_t>(1, (64u << 20) / (sizeof(double) * draws.n_draws));
                std::vector<double> tilebuf;
                std::vector<double> col(draws.n_draws);
                for (std::size_t c0 = 0; c0 < npix; c0 += tile) {
                    const std::size_t count = std::min(tile, npix - c0);
                    scratch.read_tile(c0, count, tilebuf);
                    for (std::size_t c = 0; c < count; ++c) {
                        std::copy(tilebuf.begin() + std::ptrdiff_t(c * draws.n_draws),
                                  tilebuf.begin() + std::ptrdiff_t((c + 1) * draws.n_draws),
                                  col.begin());
                        std::sort(col.begin(), col.end());
                        for (std::size_t qi = 0; qi < cfg.quantiles.size(); ++qi)
                            qimgs[qi].v[c0 + c] = quantile_sorted(col, cfg.quantiles[qi]);
                    }
                }
                for (std::size_t qi = 0; qi < cfg.quantiles.size(); ++qi) {
                    char tag[32];
                    std::snprintf(tag, sizeof tag, "%.4g", cfg.quantiles[qi]);
                    write_csv_matrix(cfg.out_dir / (stem + "_q" + tag + ".csv"), qimgs[qi]);
                }
            }
        }
        report["contrasts"] = jcontrasts;
        detail::write_file_atomic(cfg.out_dir / "inference.json", report.dump(2) + "\n");

        // posterior-predictive images for a fresh unit of each group
        if (cfg.virtual_gels > 0) {
            for (int a = 0; a < h.p; ++a) {
                std::vector<double> x(std::size_t(h.p), 0.0);
                x[std::size_t(a)] = 1.0;
                const std::vector<double> z = {1.0};
                for (int k = 0; k < cfg.virtual_gels; ++k) {
                    RngStream rng = named_stream(cfg.seed,
                                                 0x76670000ull + std::uint64_t(a) * 4096 +
                                                     std::uint64_t(k));
                    const std::size_t draw_idx =
                        std::min<std::size_t>(draws.n_draws - 1,
                                              std::size_t(rng.uniform() * double(draws.n_draws)));
                    ImageGrid gel = virtual_gel(draws, draw_idx, x, z, geo, rng);
                    const std::string stem =
                        detail::sanitize_stem(h.covariate_names[std::size_t(a)]);
                    write_csv_matrix(cfg.out_dir /
                                         ("virtual_" + stem + "_" + std::to_string(k + 1) + ".csv"),
                                     gel);
                }
            }
        }
        return 0;
    });
}

inline void run_pipeline(const RunConfig& cfg, std::ostream& log) {
    cfg.validate();
    std::filesystem::create_directories(cfg.out_dir);
    if (!cfg.cache_dir.empty()) std::filesystem::create_directories(cfg.cache_dir);
    write_config_echo(cfg);
    stage_infer(cfg, log);
}

}  // namespace isofmm
