// Command line front end. Subcommands mirror the pipeline stages so each one
// can be run, inspected and rerun on its own; `pipeline` chains them all.
// Exit codes: 0 success, 2 bad configuration, 3 bad data, 4 numerical failure.

#include <cmath>
#include <iostream>
#include <limits>

#include "CLI11.hpp"
#include "isofmm/pipeline.hpp"

namespace {

using namespace isofmm;

// every stage takes the full configuration so the config hash, which keys the
// stage caches, is the same no matter which subcommand wrote an artifact
void add_run_options(CLI::App* cmd, RunConfig& cfg, double& epsilon_flag, std::string& kind_str,
                     std::vector<double>& deltas, std::vector<std::string>& contrasts) {
    cmd->add_option("--manifest", cfg.manifest, "dataset manifest (path,image_id,group_label,unit_id)");
    cmd->add_option("--out", cfg.out_dir, "output directory")->required();
    cmd->add_option("--cache", cfg.cache_dir, "cache directory (default: the output directory)");
    cmd->add_option("--halfwidth", cfg.halfwidth, "background window half width (default 100)");
    cmd->add_option("--epsilon", epsilon_flag, "fixed log offset (default: smallest positive intensity)");
    cmd->add_option("--moments", cfg.wavelet.moments, "Daubechies vanishing moments 1..10 (default 4)");
    cmd->add_option("--levels", cfg.wavelet.levels, "decomposition levels (default 6)");
    cmd->add_option("--kind", kind_str, "transform kind: square or rectangular (default square)");
    cmd->add_option("--compression-p", cfg.compression_p, "energy fraction P in (0,1] (default 0.975)");
    cmd->add_option("--burn-in", cfg.burn_in, "burn-in sweeps (default 1000)");
    cmd->add_option("--iterations", cfg.iterations, "post burn-in sweeps (default 20000)");
    cmd->add_option("--thin", cfg.thin, "keep every thin-th sweep (default 10)");
    cmd->add_option("--seed", cfg.seed, "run seed");
    cmd->add_option("--proposal-sd", cfg.proposal_sd, "variance-step proposal scale (default 0.5)");
    cmd->add_option("--alpha", cfg.alpha, "target false discovery rate (default 0.10)");
    cmd->add_option("--delta", deltas,
                    "effect size threshold in log2 units, repeatable; the first value "
                    "drives region flagging (default log2 1.25, 1.5, 2.0 with 1.5 primary)");
    cmd->add_option("--contrast", contrasts,
                    "extra contrast as comma separated one-based index:weight pairs, "
                    "e.g. --contrast 1:1,3:-1; repeatable");
    cmd->add_flag("--intercept-treatment", cfg.intercept_treatment,
                  "use intercept plus treatment coding instead of cell means");
    cmd->add_option("--virtual-gels", cfg.virtual_gels,
                    "posterior-predictive images to draw per group (default 0)");
}

void finish_config(RunConfig& cfg, double epsilon_flag, const std::string& kind_str,
                   const std::vector<double>& deltas, const std::vector<std::string>& contrasts) {
    if (!std::isnan(epsilon_flag)) cfg.epsilon = epsilon_flag;
    if (!kind_str.empty()) {
        if (kind_str == "square")
            cfg.wavelet.kind = TransformKind::square;
        else if (kind_str == "rectangular")
            cfg.wavelet.kind = TransformKind::rectangular;
        else
            throw config_error("--kind must be 'square' or 'rectangular'");
    }
    if (!deltas.empty()) {
        cfg.deltas = deltas;
        cfg.primary_delta = deltas.front();
    }
    int k = 0;
    for (const std::string& spec : contrasts) {
        std::vector<std::pair<int, double>> pairs;
        std::size_t i = 0;
        while (i < spec.size()) {
            std::size_t j = spec.find(',', i);
            if (j == std::string::npos) j = spec.size();
            const std::string item = spec.substr(i, j - i);
            const std::size_t colon = item.find(':');
            if (colon == std::string::npos)
                throw config_error("contrast item '" + item + "' is not index:weight");
            try {
                const int idx = std::stoi(item.substr(0, colon));
                const double w = std::stod(item.substr(colon + 1));
                if (idx < 1) throw config_error("contrast covariate indices are one-based");
                pairs.emplace_back(idx - 1, w);
            } catch (const config_error&) {
                throw;
            } catch (const std::exception&) {
                throw config_error("cannot parse contrast item '" + item + "'");
            }
            i = j + 1;
        }
        if (pairs.empty()) throw config_error("empty contrast specification");
        ++k;
        cfg.extra_contrasts.emplace_back("contrast_" + std::to_string(k), std::move(pairs));
    }
}

PhantomSpec phantom_from_json(const std::filesystem::path& path) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(detail::read_file(path));
    } catch (const nlohmann::json::parse_error& e) {
        throw data_error("phantom spec " + path.string() + ": " + e.what());
    }
    PhantomSpec spec;
    try {
        spec.rows = j.value("rows", spec.rows);
        spec.cols = j.value("cols", spec.cols);
        spec.n_groups = j.value("groups", spec.n_groups);
        spec.units_per_group = j.value("units_per_group", spec.units_per_group);
        spec.gels_per_unit = j.value("gels_per_unit", spec.gels_per_unit);
        spec.animal_sd = j.value("animal_sd", spec.animal_sd);
        spec.noise_sd = j.value("noise_sd", spec.noise_sd);
        spec.background = j.value("background", spec.background);
        spec.seed = j.value("seed", spec.seed);
        if (j.contains("spots")) {
            spec.spots.clear();
            for (const auto& s : j.at("spots"))
                spec.spots.push_back(PhantomSpot{s.at("row").get<double>(), s.at("col").get<double>(),
                                                 s.value("sd_r", 2.0), s.value("sd_c", 2.0),
                                                 s.value("peak", 2.0)});
        }
        if (j.contains("planted")) {
            spec.planted.clear();
            for (const auto& s : j.at("planted"))
                spec.planted.push_back(PlantedEffect{s.at("spot").get<int>(),
                                                     s.at("group").get<int>(),
                                                     s.at("fold").get<double>()});
        }
        if (j.contains("null")) {
            const auto& n = j.at("null");
            spec.null_r0 = n.at(0).get<int>();
            spec.null_r1 = n.at(1).get<int>();
            spec.null_c0 = n.at(2).get<int>();
            spec.null_c1 = n.at(3).get<int>();
        }
    } catch (const nlohmann::json::exception& e) {
        throw data_error("phantom spec " + path.string() + ": " + e.what());
    }
    return spec;
}

int run_simulate(const std::filesystem::path& out_dir, const PhantomSpec& spec) {
    std::filesystem::create_directories(out_dir);
    PhantomResult res = simulate_dataset(spec);
    std::string manifest = "path,image_id,group_label,unit_id\n";
    for (std::size_t i = 0; i < res.data.images.size(); ++i) {
        const std::string name = res.data.image_ids[i] + ".csv";
        write_csv_matrix(out_dir / name, res.data.images[i]);
        manifest += name + "," + res.data.image_ids[i] + "," + res.data.group_labels[i] + "," +
                    res.data.unit_ids[i] + "\n";
    }
    detail::write_file_atomic(out_dir / "manifest.csv", manifest);
    nlohmann::json truth;
    truth["null"] = {spec.null_r0, spec.null_r1, spec.null_c0, spec.null_c1};
    nlohmann::json planted = nlohmann::json::array();
    for (std::size_t i = 0; i < spec.planted.size(); ++i) {
        const std::string eff_name = "truth_effect_" + std::to_string(i + 1) + ".csv";
        const std::string mask_name = "truth_mask_" + std::to_string(i + 1) + ".csv";
        write_csv_matrix(out_dir / eff_name, res.truth.effect_log2[i]);
        ImageGrid mask{spec.rows, spec.cols,
                       std::vector<double>(res.truth.spot_mask[i].begin(),
                                           res.truth.spot_mask[i].end())};
        write_csv_matrix(out_dir / mask_name, mask);
        planted.push_back({{"spot", spec.planted[i].spot},
                           {"group", spec.planted[i].group},
                           {"fold", spec.planted[i].fold},
                           {"effect", eff_name},
                           {"mask", mask_name}});
    }
    truth["planted"] = planted;
    nlohmann::json groups = nlohmann::json::array();
    for (std::size_t g = 0; g < res.truth.group_log2.size(); ++g) {
        const std::string name = "truth_group_" + std::to_string(g + 1) + ".csv";
        write_csv_matrix(out_dir / name, res.truth.group_log2[g]);
        groups.push_back(name);
    }
    truth["groups"] = groups;
    detail::write_file_atomic(out_dir / "truth.json", truth.dump(2) + "\n");
    std::cout << "[simulate] wrote " << res.data.images.size() << " gels to " << out_dir.string()
              << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"isomorphic functional mixed models for quantitative image data"};
    app.require_subcommand(1);

    RunConfig cfg;
    double epsilon_flag = std::numeric_limits<double>::quiet_NaN();
    std::string kind_str;
    std::vector<double> deltas;
    std::vector<std::string> contrasts;

    CLI::App* c_pre = app.add_subcommand("preprocess", "background, normalization, log2");
    CLI::App* c_tr = app.add_subcommand("transform", "2D wavelet transform of the dataset");
    CLI::App* c_cp = app.add_subcommand("compress-plot", "compression table and retained mask");
    CLI::App* c_fit = app.add_subcommand("fit", "spike-slab mixed model MCMC over retained columns");
    CLI::App* c_inf = app.add_subcommand("infer", "effect images, discovery maps, regions");
    CLI::App* c_pipe = app.add_subcommand("pipeline", "all stages in order");
    for (CLI::App* c : {c_pre, c_tr, c_cp, c_fit, c_inf, c_pipe})
        add_run_options(c, cfg, epsilon_flag, kind_str, deltas, contrasts);

    CLI::App* c_sim = app.add_subcommand("simulate", "generate a synthetic gel dataset");
    std::filesystem::path sim_out;
    std::filesystem::path sim_spec;
    std::uint64_t sim_seed = 1;
    double sim_fold = 2.0;
    c_sim->add_option("--out", sim_out, "output directory")->required();
    c_sim->add_option("--spec", sim_spec, "phantom spec JSON (overrides the built-in layout)");
    c_sim->add_option("--seed", sim_seed, "phantom seed (built-in layout)");
    c_sim->add_option("--fold", sim_fold, "planted fold change (built-in layout)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (c_sim->parsed()) {
            PhantomSpec spec = sim_spec.empty() ? default_phantom(sim_seed, sim_fold)
                                                : phantom_from_json(sim_spec);
            return run_simulate(sim_out, spec);
        }
        finish_config(cfg, epsilon_flag, kind_str, deltas, contrasts);
        cfg.validate();
        std::filesystem::create_directories(cfg.out_dir);
        if (!cfg.cache_dir.empty()) std::filesystem::create_directories(cfg.cache_dir);
        write_config_echo(cfg);
        if (c_pre->parsed()) {
            stage_preprocess(cfg, std::cout);
        } else if (c_tr->parsed()) {
            stage_transform(cfg, std::cout);
        } else if (c_cp->parsed()) {
            stage_compress(cfg, std::cout);
        } else if (c_fit->parsed()) {
            stage_fit(cfg, std::cout);
        } else if (c_inf->parsed()) {
            stage_infer(cfg, std::cout);
        } else if (c_pipe->parsed()) {
            run_pipeline(cfg, std::cout);
        }
        return 0;
    } catch (const isofmm::config_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const isofmm::data_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const isofmm::numeric_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 4;
    }
}
