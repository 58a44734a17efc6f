// gmf: simulate graphon-coupled particle systems, solve their mean-field
// limits on a label grid, and measure convergence with exact empirical
// Wasserstein distances. See README.md for the config schema.

#include <cstdio>
#include <exception>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "gmf/experiments.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitDiverged = 3;
constexpr int kExitSelftest = 4;

int cmd_run(const std::string& config_path) {
    gmf::ExperimentConfig cfg;
    try {
        cfg = gmf::ExperimentConfig::from_json_file(config_path);
    } catch (const gmf::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    }
    gmf::SweepResult result;
    try {
        result = gmf::run_experiment(cfg);
    } catch (const gmf::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    }
    gmf::write_result_files(cfg, result);
    std::cout << "wrote " << cfg.out_dir << "/result.csv (" << result.rows.size() << " rows)\n";
    if (result.all_cells_diverged()) {
        std::cerr << "numerical divergence in all cells\n";
        return kExitDiverged;
    }
    return kExitOk;
}

int cmd_selftest() {
    gmf::ExperimentConfig cfg;
    cfg.experiment = "ot_selftest";
    cfg.seed = 20240601;
    const gmf::SweepResult result = gmf::run_ot_selftest(cfg);
    int failures = 0;
    for (const auto& row : result.rows) {
        std::printf("%-28s %.17g\n", row.metric.c_str(), row.value);
        if (row.metric.find("failures") != std::string::npos) failures += static_cast<int>(row.value);
    }
    if (failures > 0) {
        std::cerr << "selftest FAILED (" << failures << " mismatches)\n";
        return kExitSelftest;
    }
    std::cout << "selftest passed\n";
    return kExitOk;
}

int cmd_info(const std::string& preset) {
    if (preset == "sgd_quadratic") {
        std::cout << "sgd_quadratic: distributed stochastic gradient descent with per-node\n"
                     "quadratic costs V(p,z) = q/2 ||z - c(p)||^2, c(p) = c_a + c_b p.\n"
                     "F = alpha1(t)(z - y), G = -alpha2(t) grad V(p,y), H = -alpha2(t) Sigma1.\n"
                     "params: dim, alpha1, alpha2, alpha2_decay, q, c_a, c_b, sigma1,\n"
                     "        init, init_a, init_b, init_value, init_std\n";
        return kExitOk;
    }
    if (preset == "consensus_only") {
        std::cout << "consensus_only: pure consensus coupling F = alpha1 (z - y), G = H = 0.\n"
                     "params: dim, alpha1, init, init_a, init_b, init_value, init_std\n";
        return kExitOk;
    }
    if (preset == "kuramoto_like") {
        std::cout << "kuramoto_like: scalar sine coupling F = kappa sin(z - y), G = 0,\n"
                     "H = sigma_w. params: kappa, sigma_w, init...\n";
        return kExitOk;
    }
    if (preset == "ou_driven") {
        std::cout << "ou_driven: G = -a y + eta with eta an exact Ornstein-Uhlenbeck process\n"
                     "(theta, sigma), F = 0, H = sigma_w I. params: dim, a, theta, sigma,\n"
                     "sigma_w, init...\n";
        return kExitOk;
    }
    if (preset == "graphons") {
        std::cout << "graphon families: constant (param c), product (pq), min, cosine\n"
                     "((1 + cos(pi (p - q))) / 2).\n";
        return kExitOk;
    }
    std::cerr << "unknown preset '" << preset
              << "'; try: sgd_quadratic, consensus_only, kuramoto_like, ou_driven, graphons\n";
    return kExitConfig;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"graphon mean-field particle system toolkit"};
    app.require_subcommand(1);

    std::string config_path;
    auto* run = app.add_subcommand("run", "run an experiment described by a JSON config");
    run->add_option("config", config_path, "path to the config file")->required();

    auto* selftest = app.add_subcommand("selftest", "run the optimal-transport selftest suite");

    std::string preset;
    auto* info = app.add_subcommand("info", "describe a model preset or the graphon families");
    info->add_option("preset", preset, "preset name")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (run->parsed()) return cmd_run(config_path);
        if (selftest->parsed()) return cmd_selftest();
        if (info->parsed()) return cmd_info(preset);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return kExitOk;
}
