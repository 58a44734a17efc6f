#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "gmf/graphon.hpp"
#include "gmf/meanfield.hpp"
#include "gmf/model.hpp"
#include "gmf/parallel.hpp"
#include "gmf/rng.hpp"
#include "gmf/simulator.hpp"
#include "gmf/transport.hpp"

namespace gmf {

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Flat experiment description; see README for the JSON schema.
struct ExperimentConfig {
    std::string experiment;  // lln_n_sweep | lln_k_sweep | sgd_demo | ot_selftest | em_order
    std::string model_name = "consensus_only";
    ModelParams model_params;
    std::string graphon_name = "constant";
    std::map<std::string, double> graphon_params;
    std::vector<int> n_list;
    std::vector<int> k_list;
    double horizon = 1.0;
    int replications = 1;
    uint64_t seed = 0;
    MeanFieldConfig meanfield;
    std::string out_dir = "out";

    static ExperimentConfig from_json(const nlohmann::json& j);
    static ExperimentConfig from_json_file(const std::string& path);
    nlohmann::json to_json() const;
    void validate() const;
};

inline ExperimentConfig ExperimentConfig::from_json(const nlohmann::json& j) {
    static const std::vector<std::string> known = {"experiment", "model", "graphon", "N", "k", "T",
                                                   "replications", "seed", "meanfield", "out_dir"};
    if (!j.is_object()) throw ConfigError("config must be a JSON object");
    for (auto it = j.begin(); it != j.end(); ++it)
        if (std::find(known.begin(), known.end(), it.key()) == known.end())
            throw ConfigError("unknown config key '" + it.key() + "'");
    ExperimentConfig cfg;
    try {
        cfg.experiment = j.at("experiment").get<std::string>();
        if (j.contains("model")) {
            const auto& m = j.at("model");
            cfg.model_name = m.at("name").get<std::string>();
            if (m.contains("params"))
                for (auto it = m.at("params").begin(); it != m.at("params").end(); ++it) {
                    if (it.value().is_number())
                        cfg.model_params.num[it.key()] = it.value().get<double>();
                    else if (it.value().is_boolean())
                        cfg.model_params.num[it.key()] = it.value().get<bool>() ? 1.0 : 0.0;
                    else if (it.value().is_string())
                        cfg.model_params.str[it.key()] = it.value().get<std::string>();
                    else
                        throw ConfigError("model param '" + it.key() + "' must be number or string");
                }
        }
        if (j.contains("graphon")) {
            const auto& g = j.at("graphon");
            cfg.graphon_name = g.at("name").get<std::string>();
            if (g.contains("params"))
                for (auto it = g.at("params").begin(); it != g.at("params").end(); ++it)
                    cfg.graphon_params[it.key()] = it.value().get<double>();
        }
        if (j.contains("N")) cfg.n_list = j.at("N").get<std::vector<int>>();
        if (j.contains("k")) cfg.k_list = j.at("k").get<std::vector<int>>();
        if (j.contains("T")) cfg.horizon = j.at("T").get<double>();
        if (j.contains("replications")) cfg.replications = j.at("replications").get<int>();
        if (j.contains("seed")) cfg.seed = j.at("seed").get<uint64_t>();
        if (j.contains("meanfield")) {
            const auto& mf = j.at("meanfield");
            if (mf.contains("P")) cfg.meanfield.label_grid_size = mf.at("P").get<int>();
            if (mf.contains("M")) cfg.meanfield.samples_per_node = mf.at("M").get<int>();
            if (mf.contains("max_iters")) cfg.meanfield.picard_max_iters = mf.at("max_iters").get<int>();
            if (mf.contains("tol")) cfg.meanfield.picard_tol = mf.at("tol").get<double>();
        }
        if (j.contains("out_dir")) cfg.out_dir = j.at("out_dir").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("malformed config: ") + e.what());
    }
    cfg.validate();
    return cfg;
}

inline ExperimentConfig ExperimentConfig::from_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file '" + path + "'");
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("invalid JSON: ") + e.what());
    }
    return from_json(j);
}

inline nlohmann::json ExperimentConfig::to_json() const {
    nlohmann::json params;
    for (const auto& [k, v] : model_params.num) params[k] = v;
    for (const auto& [k, v] : model_params.str) params[k] = v;
    nlohmann::json gparams;
    for (const auto& [k, v] : graphon_params) gparams[k] = v;
    return nlohmann::json{{"experiment", experiment},
                          {"model", {{"name", model_name}, {"params", params}}},
                          {"graphon", {{"name", graphon_name}, {"params", gparams}}},
                          {"N", n_list},
                          {"k", k_list},
                          {"T", horizon},
                          {"replications", replications},
                          {"seed", seed},
                          {"meanfield",
                           {{"P", meanfield.label_grid_size},
                            {"M", meanfield.samples_per_node},
                            {"max_iters", meanfield.picard_max_iters},
                            {"tol", meanfield.picard_tol}}},
                          {"out_dir", out_dir}};
}

inline void ExperimentConfig::validate() const {
    static const std::vector<std::string> kinds = {"lln_n_sweep", "lln_k_sweep", "sgd_demo",
                                                   "ot_selftest", "em_order"};
    if (std::find(kinds.begin(), kinds.end(), experiment) == kinds.end())
        throw ConfigError("unknown experiment kind '" + experiment + "'");
    if (!(horizon > 0.0)) throw ConfigError("T must be positive");
    if (replications < 1) throw ConfigError("replications must be >= 1");
    const bool needs_sweep_lists = experiment == "lln_n_sweep" || experiment == "lln_k_sweep" ||
                                   experiment == "sgd_demo" || experiment == "em_order";
    if (needs_sweep_lists) {
        if (experiment != "em_order" && n_list.empty()) throw ConfigError("N list must be nonempty");
        if (k_list.empty()) throw ConfigError("k list must be nonempty");
        for (int n : n_list)
            if (n < 1) throw ConfigError("N entries must be positive");
        for (int k : k_list)
            if (k < 1) throw ConfigError("k entries must be positive");
    }
    try {
        meanfield.validate();
    } catch (const std::exception& e) {
        throw ConfigError(e.what());
    }
}

struct SweepRow {
    std::string experiment;
    int n = 0;
    int k = 0;
    int replication = -1;  // -1 marks cell-level aggregates
    std::string metric;
    double value = 0.0;
    double std_error = 0.0;
    double wall_ms = 0.0;
    std::string seed_lineage;
};

struct SweepResult {
    std::vector<SweepRow> rows;
    int cells_total = 0;
    int cells_diverged = 0;

    bool all_cells_diverged() const { return cells_total > 0 && cells_diverged == cells_total; }

    double value_of(const std::string& metric, int n, int k) const {
        for (const auto& r : rows)
            if (r.metric == metric && r.n == n && r.k == k) return r.value;
        throw std::out_of_range("metric not found: " + metric);
    }
    const SweepRow& row_of(const std::string& metric, int n, int k) const {
        for (const auto& r : rows)
            if (r.metric == metric && r.n == n && r.k == k) return r;
        throw std::out_of_range("metric not found: " + metric);
    }

    void write_csv(std::ostream& os) const {
        os << "experiment,N,k,replication,metric,value,std_error,wall_time_ms,seed_lineage\n";
        char buf[256];
        for (const auto& r : rows) {
            std::snprintf(buf, sizeof(buf), "%s,%d,%d,%d,%s,%.17g,%.17g,%.3f,%s\n",
                          r.experiment.c_str(), r.n, r.k, r.replication, r.metric.c_str(), r.value,
                          r.std_error, r.wall_ms, r.seed_lineage.c_str());
            os << buf;
        }
    }
};

namespace detail {

inline std::string lineage(uint64_t seed, int cell, int rep) {
    std::ostringstream os;
    os << "m" << seed << "/c" << cell;
    if (rep >= 0) os << "/r" << rep;
    return os.str();
}

inline double elapsed_ms(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
}

struct MeanSe {
    double mean = 0.0;
    double se = 0.0;
};

inline MeanSe mean_se(const std::vector<double>& xs) {
    MeanSe r;
    const double n = static_cast<double>(xs.size());
    for (double x : xs) r.mean += x;
    r.mean /= n;
    if (xs.size() > 1) {
        double ss = 0.0;
        for (double x : xs) ss += (x - r.mean) * (x - r.mean);
        r.se = std::sqrt(ss / (n - 1.0) / n);
    }
    return r;
}

/// Least-squares slope of log(y) vs log(x).
inline double loglog_slope(const std::vector<double>& x, const std::vector<double>& y) {
    const int n = static_cast<int>(x.size());
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (int i = 0; i < n; ++i) {
        const double lx = std::log(x[i]);
        const double ly = std::log(y[i]);
        sx += lx;
        sy += ly;
        sxx += lx * lx;
        sxy += lx * ly;
    }
    return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Spatial law of large numbers: W1 between the N-particle empirical path
// measure and the mixture of the solved mean-field laws, plus (for
// deterministic initial data and no exogenous process) the label-paired
// mean-square sup metric against the nearest reference node.

inline SweepResult run_lln_n_sweep(const ExperimentConfig& cfg, const CoefficientModel& model,
                                   const Graphon& graphon) {
    SweepResult result;
    const int k_fix = *std::max_element(cfg.k_list.begin(), cfg.k_list.end());
    const int max_n = *std::max_element(cfg.n_list.begin(), cfg.n_list.end());
    result.cells_total = static_cast<int>(cfg.n_list.size());

    SimConfig mf_sim;
    mf_sim.horizon = cfg.horizon;
    mf_sim.steps = k_fix;
    mf_sim.particles = 1;
    mf_sim.dim = model.dim;
    mf_sim.seed = cfg.seed;
    GridMeanField mf;
    EmpiricalPathMeasure reference;
    try {
        mf = picard_solve(cfg.meanfield, mf_sim, model, graphon);
        reference = sample_mixture(mf, 4 * max_n, plain_key(cfg.seed, 1, StreamDomain::subsample));
    } catch (const IntegrationDivergedError& e) {
        result.rows.push_back({cfg.experiment, 0, k_fix, -1, "error_diverged_reference",
                               static_cast<double>(e.step_index), 0.0, 0.0,
                               detail::lineage(cfg.seed, -1, -1)});
        result.cells_diverged = result.cells_total;
        return result;
    }

    const bool pair_metric = model.init_spec.is_deterministic() && model.eta_spec.is_zero();

    // Replications of one cell are independent; run them in a pool and build
    // the rows afterwards in replication order so the output is deterministic.
    struct RepOutcome {
        bool ok = false;
        EmpiricalPathMeasure run;
        double ms_value = 0.0;
        int diverged_step = -1;
    };

    for (int cell = 0; cell < static_cast<int>(cfg.n_list.size()); ++cell) {
        const int n_particles = cfg.n_list[cell];
        const auto t0 = std::chrono::steady_clock::now();
        std::vector<RepOutcome> outcomes(cfg.replications);
        parallel_for(cfg.replications, [&](int rep) {
            SimConfig sim;
            sim.horizon = cfg.horizon;
            sim.steps = k_fix;
            sim.particles = n_particles;
            sim.dim = model.dim;
            sim.seed = cfg.seed;
            sim.path_salt = static_cast<uint64_t>(rep);
            auto& out = outcomes[rep];
            try {
                const ParticleEnsemble ens = simulate(sim, model, graphon);
                out.run = ens.as_path_measure();
                if (pair_metric) {
                    double acc = 0.0;
                    for (int i = 0; i < n_particles; ++i) {
                        const int node = mf.nearest_node(sim.label(i + 1));
                        const auto ref_path = mf.path(node, rep % mf.samples());
                        double sup = 0.0;
                        for (int m = 0; m <= k_fix; ++m)
                            sup = std::max(sup, dist2(ens.state(m, i),
                                                      ref_path.subspan(static_cast<size_t>(m) * model.dim,
                                                                       model.dim)));
                        acc += sup * sup;
                    }
                    out.ms_value = acc / n_particles;
                }
                out.ok = true;
            } catch (const IntegrationDivergedError& e) {
                out.diverged_step = e.step_index;
            }
        });

        std::vector<EmpiricalPathMeasure> runs;
        std::vector<int> run_reps;
        std::vector<double> ms_values;
        std::vector<SweepRow> cell_rows;
        bool cell_diverged = false;
        for (int rep = 0; rep < cfg.replications; ++rep) {
            if (outcomes[rep].ok) {
                runs.push_back(std::move(outcomes[rep].run));
                run_reps.push_back(rep);
                if (pair_metric) ms_values.push_back(outcomes[rep].ms_value);
            } else {
                cell_rows.push_back({cfg.experiment, n_particles, k_fix, rep, "error_diverged",
                                     static_cast<double>(outcomes[rep].diverged_step), 0.0, 0.0,
                                     detail::lineage(cfg.seed, cell, rep)});
                cell_diverged = true;
            }
        }
        if (runs.size() >= 2) {
            const auto w1 = mean_w1_estimate(runs, reference, plain_key(cfg.seed, 100 + cell, StreamDomain::subsample));
            for (size_t idx = 0; idx < w1.per_run.size(); ++idx)
                cell_rows.push_back({cfg.experiment, n_particles, k_fix, run_reps[idx], "w1_path",
                                     w1.per_run[idx], 0.0, 0.0,
                                     detail::lineage(cfg.seed, cell, run_reps[idx])});
            cell_rows.push_back({cfg.experiment, n_particles, k_fix, -1, "w1_path_mean", w1.mean,
                                 w1.std_error, 0.0, detail::lineage(cfg.seed, cell, -1)});
        }
        if (!ms_values.empty()) {
            for (size_t idx = 0; idx < ms_values.size(); ++idx)
                cell_rows.push_back({cfg.experiment, n_particles, k_fix, run_reps[idx],
                                     "ms_sup_label", ms_values[idx], 0.0, 0.0,
                                     detail::lineage(cfg.seed, cell, run_reps[idx])});
            const auto agg = detail::mean_se(ms_values);
            cell_rows.push_back({cfg.experiment, n_particles, k_fix, -1, "ms_sup_label_mean", agg.mean,
                                 agg.se, 0.0, detail::lineage(cfg.seed, cell, -1)});
        }
        const double ms = detail::elapsed_ms(t0);
        for (auto& r : cell_rows) r.wall_ms = ms;
        result.rows.insert(result.rows.end(), cell_rows.begin(), cell_rows.end());
        if (cell_diverged && runs.empty()) ++result.cells_diverged;
    }
    return result;
}

// ---------------------------------------------------------------------------
// Temporal law of large numbers: refinement-coupled ensembles across the k
// list; the finest entry is the reference; per-particle sup over the coarse
// grid times of the squared distance, averaged over particles.

inline SweepResult run_lln_k_sweep(const ExperimentConfig& cfg, const CoefficientModel& model,
                                   const Graphon& graphon) {
    SweepResult result;
    const int n_particles = cfg.n_list.front();
    const int k_ref = *std::max_element(cfg.k_list.begin(), cfg.k_list.end());
    for (int k : cfg.k_list)
        if (k_ref % k != 0) throw ConfigError("lln_k_sweep: k entries must divide the largest entry");

    result.cells_total = static_cast<int>(cfg.k_list.size());

    struct RepOutcome {
        int ref_diverged_step = -1;
        std::vector<double> cell_metric;   // NaN-free only where cell_ok
        std::vector<int> cell_diverged_step;
    };
    std::vector<RepOutcome> outcomes(cfg.replications);
    parallel_for(cfg.replications, [&](int rep) {
        auto& out = outcomes[rep];
        out.cell_metric.assign(cfg.k_list.size(), 0.0);
        out.cell_diverged_step.assign(cfg.k_list.size(), -1);
        SimConfig sim;
        sim.horizon = cfg.horizon;
        sim.steps = k_ref;
        sim.particles = n_particles;
        sim.dim = model.dim;
        sim.seed = cfg.seed;
        sim.path_salt = static_cast<uint64_t>(rep);
        sim.base_steps = k_ref;  // every resolution shares the same Brownian paths
        ParticleEnsemble ref;
        try {
            ref = simulate(sim, model, graphon);
        } catch (const IntegrationDivergedError& e) {
            out.ref_diverged_step = e.step_index;
            return;
        }
        for (size_t cell = 0; cell < cfg.k_list.size(); ++cell) {
            const int k = cfg.k_list[cell];
            SimConfig coarse = sim;
            coarse.steps = k;
            try {
                const ParticleEnsemble ens = simulate(coarse, model, graphon);
                const int stride = k_ref / k;
                double acc = 0.0;
                for (int i = 0; i < n_particles; ++i) {
                    double sup = 0.0;
                    for (int m = 0; m <= k; ++m)
                        sup = std::max(sup, dist2(ens.state(m, i), ref.state(m * stride, i)));
                    acc += sup * sup;
                }
                out.cell_metric[cell] = acc / n_particles;
            } catch (const IntegrationDivergedError& e) {
                out.cell_diverged_step[cell] = e.step_index;
            }
        }
    });

    std::vector<std::vector<double>> metric(cfg.k_list.size());
    std::vector<SweepRow> error_rows;
    for (int rep = 0; rep < cfg.replications; ++rep) {
        const auto& out = outcomes[rep];
        if (out.ref_diverged_step >= 0) {
            error_rows.push_back({cfg.experiment, n_particles, k_ref, rep, "error_diverged_reference",
                                  static_cast<double>(out.ref_diverged_step), 0.0, 0.0,
                                  detail::lineage(cfg.seed, -1, rep)});
            continue;
        }
        for (size_t cell = 0; cell < cfg.k_list.size(); ++cell) {
            if (out.cell_diverged_step[cell] >= 0)
                error_rows.push_back({cfg.experiment, n_particles, cfg.k_list[cell], rep,
                                      "error_diverged", static_cast<double>(out.cell_diverged_step[cell]),
                                      0.0, 0.0, detail::lineage(cfg.seed, static_cast<int>(cell), rep)});
            else
                metric[cell].push_back(out.cell_metric[cell]);
        }
    }
    int diverged_cells = 0;
    for (size_t cell = 0; cell < cfg.k_list.size(); ++cell)
        if (metric[cell].empty()) ++diverged_cells;

    const auto t_all = std::chrono::steady_clock::now();
    std::vector<double> dts, rms;
    for (size_t cell = 0; cell < cfg.k_list.size(); ++cell) {
        const int k = cfg.k_list[cell];
        for (size_t rep = 0; rep < metric[cell].size(); ++rep)
            result.rows.push_back({cfg.experiment, n_particles, k, static_cast<int>(rep),
                                   "ms_sup_vs_kref", metric[cell][rep], 0.0, 0.0,
                                   detail::lineage(cfg.seed, static_cast<int>(cell), static_cast<int>(rep))});
        if (!metric[cell].empty()) {
            const auto agg = detail::mean_se(metric[cell]);
            result.rows.push_back({cfg.experiment, n_particles, k, -1, "ms_sup_vs_kref_mean", agg.mean,
                                   agg.se, 0.0, detail::lineage(cfg.seed, static_cast<int>(cell), -1)});
            if (k < k_ref && agg.mean > 0.0) {
                dts.push_back(cfg.horizon / k);
                rms.push_back(std::sqrt(agg.mean));
            }
        }
    }
    // slope of the RMS metric vs dt (strong order); needs >= 2 distinct points
    std::vector<double> uniq = dts;
    std::sort(uniq.begin(), uniq.end());
    uniq.erase(std::unique(uniq.begin(), uniq.end()), uniq.end());
    if (uniq.size() >= 2)
        result.rows.push_back({cfg.experiment, n_particles, k_ref, -1, "strong_order_slope",
                               detail::loglog_slope(dts, rms), 0.0, detail::elapsed_ms(t_all),
                               detail::lineage(cfg.seed, -1, -1)});
    else
        result.rows.push_back({cfg.experiment, n_particles, k_ref, -1, "flag_insufficient_dt_points", 1.0,
                               0.0, 0.0, detail::lineage(cfg.seed, -1, -1)});
    result.rows.insert(result.rows.end(), error_rows.begin(), error_rows.end());
    result.cells_diverged = diverged_cells;
    return result;
}

// ---------------------------------------------------------------------------
// SGD demo: distance of the particle mean to the global minimizer and the
// inter-particle disagreement along the run. Convergence *to* the minimizer
// is not asserted here; this reports the trajectory statistics only.

inline SweepResult run_sgd_demo(const ExperimentConfig& cfg, const CoefficientModel& model,
                                const Graphon& graphon, const QuadraticCostFamily& costs) {
    SweepResult result;
    const int n_particles = cfg.n_list.front();
    const int k = *std::max_element(cfg.k_list.begin(), cfg.k_list.end());
    const Vec z_star = global_minimizer(costs, midpoint_grid(1000));
    result.cells_total = 1;

    const auto t0 = std::chrono::steady_clock::now();
    const std::vector<double> checkpoints = {0.25, 0.5, 0.75, 1.0};

    struct RepOutcome {
        bool ok = false;
        int diverged_step = -1;
        std::vector<double> mean_dist;     // per checkpoint
        std::vector<double> disagreement;  // per checkpoint
    };
    std::vector<RepOutcome> outcomes(cfg.replications);
    parallel_for(cfg.replications, [&](int rep) {
        auto& out = outcomes[rep];
        SimConfig sim;
        sim.horizon = cfg.horizon;
        sim.steps = k;
        sim.particles = n_particles;
        sim.dim = model.dim;
        sim.seed = cfg.seed;
        sim.path_salt = static_cast<uint64_t>(rep);
        try {
            const ParticleEnsemble ens = simulate(sim, model, graphon);
            for (double frac : checkpoints) {
                const int m = static_cast<int>(std::lround(frac * k));
                Vec mean(model.dim, 0.0);
                for (int i = 0; i < n_particles; ++i)
                    axpy(1.0 / n_particles, ens.state(m, i), std::span<double>(mean));
                double dev = 0.0;
                for (int i = 0; i < n_particles; ++i) {
                    const double d = dist2(ens.state(m, i), mean);
                    dev += d * d;
                }
                out.mean_dist.push_back(dist2(mean, z_star));
                out.disagreement.push_back(std::sqrt(dev / n_particles));
            }
            out.ok = true;
        } catch (const IntegrationDivergedError& e) {
            out.diverged_step = e.step_index;
        }
    });

    std::vector<double> final_dist;
    std::vector<SweepRow> rows;
    for (int rep = 0; rep < cfg.replications; ++rep) {
        const auto& out = outcomes[rep];
        if (!out.ok) {
            rows.push_back({cfg.experiment, n_particles, k, rep, "error_diverged",
                            static_cast<double>(out.diverged_step), 0.0, 0.0,
                            detail::lineage(cfg.seed, 0, rep)});
            continue;
        }
        for (size_t c = 0; c < checkpoints.size(); ++c) {
            const double t = cfg.horizon * checkpoints[c];
            char name[64];
            std::snprintf(name, sizeof(name), "mean_dist_zstar_t%g", t);
            rows.push_back({cfg.experiment, n_particles, k, rep, name, out.mean_dist[c], 0.0, 0.0,
                            detail::lineage(cfg.seed, 0, rep)});
            std::snprintf(name, sizeof(name), "disagreement_t%g", t);
            rows.push_back({cfg.experiment, n_particles, k, rep, name, out.disagreement[c], 0.0, 0.0,
                            detail::lineage(cfg.seed, 0, rep)});
        }
        final_dist.push_back(out.mean_dist.back());
    }
    if (!final_dist.empty()) {
        const auto agg = detail::mean_se(final_dist);
        rows.push_back({cfg.experiment, n_particles, k, -1, "final_mean_dist_zstar", agg.mean, agg.se,
                        0.0, detail::lineage(cfg.seed, 0, -1)});
    } else {
        result.cells_diverged = 1;
    }
    for (int d = 0; d < model.dim; ++d) {
        char name[32];
        std::snprintf(name, sizeof(name), "zstar_%d", d);
        rows.push_back({cfg.experiment, n_particles, k, -1, name, z_star[d], 0.0, 0.0,
                        detail::lineage(cfg.seed, 0, -1)});
    }
    const double ms = detail::elapsed_ms(t0);
    for (auto& r : rows) r.wall_ms = ms;
    result.rows = std::move(rows);
    return result;
}

// ---------------------------------------------------------------------------
// Transport selftest: oracle equivalence and metric axioms on randomized
// instances. Any mismatch is recorded as a failure row.

namespace detail {

inline EmpiricalMeasure random_measure(CounterStream& st, int m, int dim) {
    std::vector<double> pts(static_cast<size_t>(m) * dim);
    for (double& v : pts) v = 2.0 * st.normal();
    return EmpiricalMeasure(dim, std::move(pts));
}

inline EmpiricalPathMeasure random_path_measure(CounterStream& st, int m, int steps, int dim) {
    std::vector<double> pts(static_cast<size_t>(m) * (steps + 1) * dim);
    for (int i = 0; i < m; ++i)
        for (int d = 0; d < dim; ++d) {
            double v = st.normal();
            for (int s = 0; s <= steps; ++s) {
                pts[(static_cast<size_t>(i) * (steps + 1) + s) * dim + d] = v;
                v += 0.5 * st.normal();
            }
        }
    return EmpiricalPathMeasure(dim, steps, 1.0, std::move(pts));
}

}  // namespace detail

inline SweepResult run_ot_selftest(const ExperimentConfig& cfg) {
    SweepResult result;
    result.cells_total = 1;
    const auto t0 = std::chrono::steady_clock::now();
    CounterStream st(plain_key(cfg.seed, 7, StreamDomain::probe));
    const double tol = 1e-12;

    int oracle_total = 0, oracle_fail = 0;
    double oracle_max_diff = 0.0;
    for (int i = 0; i < 200; ++i) {
        const int m = 1 + static_cast<int>(st.index(5));
        const int dim = 1 + static_cast<int>(st.index(3));
        const int order = 1 + static_cast<int>(st.index(2));
        if (i % 2 == 0) {
            const auto mu = detail::random_measure(st, m, dim);
            const auto nu = detail::random_measure(st, m, dim);
            const double w = wasserstein_p(mu, nu, order);
            const double b = brute_force_ot(mu, nu, order);
            oracle_max_diff = std::max(oracle_max_diff, std::fabs(w - b));
            if (std::fabs(w - b) > tol) ++oracle_fail;
        } else {
            const int steps = 2 + static_cast<int>(st.index(3));
            const auto mu = detail::random_path_measure(st, m, steps, std::min(dim, 2));
            const auto nu = detail::random_path_measure(st, m, steps, std::min(dim, 2));
            const double w = wasserstein_path(mu, nu, order, mu.horizon);
            const double b = brute_force_ot(mu, nu, order, mu.horizon);
            oracle_max_diff = std::max(oracle_max_diff, std::fabs(w - b));
            if (std::fabs(w - b) > tol) ++oracle_fail;
        }
        ++oracle_total;
    }

    int sym_fail = 0, lyapunov_fail = 0, triangle_fail = 0, dual_fail = 0, dirac_fail = 0;
    double sym_max = 0.0;
    for (int i = 0; i < 100; ++i) {
        const int m = 2 + static_cast<int>(st.index(7));
        const int dim = 1 + static_cast<int>(st.index(3));
        const auto mu = detail::random_measure(st, m, dim);
        const auto nu = detail::random_measure(st, m, dim);
        const auto rho = detail::random_measure(st, m, dim);
        const double w12 = wasserstein_p(mu, nu, 2);
        const double w21 = wasserstein_p(nu, mu, 2);
        sym_max = std::max(sym_max, std::fabs(w12 - w21));
        if (w12 != w21) ++sym_fail;
        if (wasserstein_p(mu, nu, 1) > w12 + 1e-12) ++lyapunov_fail;
        if (w12 > wasserstein_p(mu, rho, 2) + wasserstein_p(rho, nu, 2) + 1e-9) ++triangle_fail;
        // dual direction that is checkable: any 1-Lipschitz f gives a lower bound
        const auto anchor = detail::random_measure(st, 1, dim);
        double int_mu = 0.0, int_nu = 0.0;
        for (int s = 0; s < m; ++s) {
            int_mu += dist2(mu.point(s), anchor.point(0)) / m;
            int_nu += dist2(nu.point(s), anchor.point(0)) / m;
        }
        if (std::fabs(int_mu - int_nu) > wasserstein_p(mu, nu, 1) + 1e-9) ++dual_fail;
    }
    for (int i = 0; i < 50; ++i) {
        const int steps = 2 + static_cast<int>(st.index(4));
        const int dim = 1 + static_cast<int>(st.index(2));
        const auto mu = detail::random_path_measure(st, 1, steps, dim);
        const auto nu = detail::random_path_measure(st, 1, steps, dim);
        const double w = wasserstein_path(mu, nu, 2, mu.horizon);
        const double d = sup_norm_dist(mu, 0, nu, 0);
        if (w != d) ++dirac_fail;
    }

    const double ms = detail::elapsed_ms(t0);
    auto add = [&](const std::string& metric, double value) {
        result.rows.push_back({cfg.experiment, 0, 0, -1, metric, value, 0.0, ms,
                               detail::lineage(cfg.seed, 0, -1)});
    };
    add("oracle_total", oracle_total);
    add("oracle_failures", oracle_fail);
    add("oracle_max_abs_diff", oracle_max_diff);
    add("symmetry_failures", sym_fail);
    add("symmetry_max_abs_diff", sym_max);
    add("lyapunov_failures", lyapunov_fail);
    add("triangle_failures", triangle_fail);
    add("dual_bound_failures", dual_fail);
    add("dirac_identity_failures", dirac_fail);
    return result;
}

// ---------------------------------------------------------------------------
// Euler-Maruyama strong-order check on the scalar OU equation
// dz = -theta z dt + sigma dW against the exact solution reconstructed from
// the same increments (stochastic integral summed on a 16x finer grid).

inline SweepResult run_em_order(const ExperimentConfig& cfg) {
    SweepResult result;
    const double theta = cfg.model_params.get("theta", 1.0);
    const double sigma = cfg.model_params.get("sigma", 1.0);
    const double z0 = cfg.model_params.get("z0", 1.0);
    const double horizon = cfg.horizon;
    const int paths = cfg.replications;
    const int k_max = *std::max_element(cfg.k_list.begin(), cfg.k_list.end());
    for (int k : cfg.k_list)
        if (k_max % k != 0) throw ConfigError("em_order: k entries must divide the largest entry");
    const int k_base = 16 * k_max;
    result.cells_total = static_cast<int>(cfg.k_list.size());

    const auto t0 = std::chrono::steady_clock::now();
    BrownianSource brownian(cfg.seed);
    std::vector<std::vector<double>> sq_err(cfg.k_list.size());
    std::vector<double> incr;
    for (int j = 0; j < paths; ++j) {
        brownian.increments(0.5, static_cast<uint64_t>(j), horizon, 1, k_base, k_base, incr);
        // exact solution via the integrating factor, integral on the base grid
        double stoch = 0.0;
        const double dt_base = horizon / k_base;
        for (int m = 0; m < k_base; ++m)
            stoch += std::exp(-theta * (horizon - m * dt_base)) * incr[m];
        const double z_exact = z0 * std::exp(-theta * horizon) + sigma * stoch;
        for (size_t cell = 0; cell < cfg.k_list.size(); ++cell) {
            const int k = cfg.k_list[cell];
            const int stride = k_base / k;
            const double dt = horizon / k;
            double z = z0;
            for (int m = 0; m < k; ++m) {
                double dw = 0.0;
                for (int f = 0; f < stride; ++f) dw += incr[static_cast<size_t>(m) * stride + f];
                z = z - theta * z * dt + sigma * dw;
            }
            const double e = z - z_exact;
            sq_err[cell].push_back(e * e);
        }
    }
    std::vector<double> dts, rms;
    for (size_t cell = 0; cell < cfg.k_list.size(); ++cell) {
        const auto agg = detail::mean_se(sq_err[cell]);
        const double value = std::sqrt(agg.mean);
        result.rows.push_back({cfg.experiment, 0, cfg.k_list[cell], -1, "strong_rms_error", value,
                               agg.se, 0.0, detail::lineage(cfg.seed, static_cast<int>(cell), -1)});
        if (value > 0.0) {
            dts.push_back(horizon / cfg.k_list[cell]);
            rms.push_back(value);
        }
    }
    std::vector<double> uniq = dts;
    std::sort(uniq.begin(), uniq.end());
    uniq.erase(std::unique(uniq.begin(), uniq.end()), uniq.end());
    if (uniq.size() >= 2)
        result.rows.push_back({cfg.experiment, 0, k_max, -1, "strong_order_slope",
                               detail::loglog_slope(dts, rms), 0.0, 0.0, detail::lineage(cfg.seed, -1, -1)});
    else
        result.rows.push_back({cfg.experiment, 0, k_max, -1, "flag_insufficient_dt_points", 1.0, 0.0,
                               0.0, detail::lineage(cfg.seed, -1, -1)});
    const double ms = detail::elapsed_ms(t0);
    for (auto& r : result.rows) r.wall_ms = ms;
    return result;
}

// ---------------------------------------------------------------------------

/// Resolves presets from the config and dispatches to the experiment kind.
inline SweepResult run_experiment(const ExperimentConfig& cfg) {
    cfg.validate();
    if (cfg.experiment == "ot_selftest") return run_ot_selftest(cfg);
    if (cfg.experiment == "em_order") return run_em_order(cfg);
    const CoefficientModel model = make_model(cfg.model_name, cfg.model_params);
    const Graphon graphon = make_graphon(cfg.graphon_name, cfg.graphon_params);
    graphon.validate();
    if (cfg.experiment == "lln_n_sweep") return run_lln_n_sweep(cfg, model, graphon);
    if (cfg.experiment == "lln_k_sweep") return run_lln_k_sweep(cfg, model, graphon);
    if (cfg.experiment == "sgd_demo") {
        if (cfg.model_name != "sgd_quadratic")
            throw ConfigError("sgd_demo requires the sgd_quadratic model");
        return run_sgd_demo(cfg, model, graphon, make_quadratic_costs(cfg.model_params, model.dim));
    }
    throw ConfigError("unknown experiment kind '" + cfg.experiment + "'");
}

inline void write_manifest(const ExperimentConfig& cfg, std::ostream& os) {
    os << "gmf " << "0.1.0" << "\n";
    os << "resolved config:\n" << cfg.to_json().dump(2) << "\n";
}

/// Writes result.csv and manifest.txt under out_dir (created if missing).
inline void write_result_files(const ExperimentConfig& cfg, const SweepResult& result) {
    namespace fs = std::filesystem;
    fs::create_directories(cfg.out_dir);
    std::ofstream csv(fs::path(cfg.out_dir) / "result.csv");
    if (!csv) throw std::runtime_error("cannot write result.csv under " + cfg.out_dir);
    result.write_csv(csv);
    std::ofstream manifest(fs::path(cfg.out_dir) / "manifest.txt");
    write_manifest(cfg, manifest);
}

}  // namespace gmf
