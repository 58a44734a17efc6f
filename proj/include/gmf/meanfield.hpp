#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <ostream>
#include <span>
#include <stdexcept>
#include <vector>

#include "gmf/graphon.hpp"
#include "gmf/linalg.hpp"
#include "gmf/model.hpp"
#include "gmf/parallel.hpp"
#include "gmf/rng.hpp"
#include "gmf/simulator.hpp"
#include "gmf/transport.hpp"

namespace gmf {

struct MeanFieldConfig {
    int label_grid_size = 32;   // P
    int samples_per_node = 200; // M
    int picard_max_iters = 12;
    /// W2 stopping threshold on consecutive time-T marginals, maxed over
    /// nodes. <= 0 selects 1e-3 * (1 + init-field spread).
    double picard_tol = -1.0;

    void validate() const {
        if (label_grid_size < 1 || samples_per_node < 2 || picard_max_iters < 1)
            throw std::invalid_argument("MeanFieldConfig: bad sizes");
    }
};

/// Per-label-grid-node sample ensembles approximating the limiting laws: for
/// each node label p_a (cell midpoints a = 1..P) the solver stores M
/// discretized sample paths of the decoupled dynamics under the converged
/// measure flow.
struct GridMeanField {
    MeanFieldConfig mf_config;
    SimConfig sim_config;
    int dim = 1;
    std::vector<double> labels;            // P midpoints
    std::vector<double> paths;             // P x M x (k+1) x n
    std::vector<double> residual_history;  // max-over-nodes W2 per iteration
    std::vector<double> node_residuals;    // per node, last completed iteration
    int iterations = 0;
    bool converged = false;
    double tolerance_used = 0.0;

    int nodes() const { return mf_config.label_grid_size; }
    int samples() const { return mf_config.samples_per_node; }

    std::span<const double> path(int node, int sample) const {
        const size_t stride = static_cast<size_t>(sim_config.steps + 1) * dim;
        const size_t off = (static_cast<size_t>(node) * samples() + sample) * stride;
        return {paths.data() + off, stride};
    }

    /// M-sample empirical marginal of node `node` at grid index m.
    EmpiricalMeasure node_marginal_at(int node, int m) const {
        std::vector<double> pts(static_cast<size_t>(samples()) * dim);
        for (int s = 0; s < samples(); ++s) {
            const auto pth = path(node, s);
            for (int d = 0; d < dim; ++d)
                pts[static_cast<size_t>(s) * dim + d] = pth[static_cast<size_t>(m) * dim + d];
        }
        return EmpiricalMeasure(dim, std::move(pts));
    }

    /// Nearest grid node to a label, ties toward the smaller label.
    int nearest_node(double label) const {
        int best = 0;
        double best_d = std::fabs(label - labels[0]);
        for (int a = 1; a < nodes(); ++a) {
            const double d = std::fabs(label - labels[a]);
            if (d < best_d - 1e-15) {
                best = a;
                best_d = d;
            }
        }
        return best;
    }

    /// Time-T marginal samples, one row per (node, sample, component).
    void write_marginal_csv(std::ostream& os) const {
        os << "node,label,sample,component,value\n";
        char buf[128];
        for (int a = 0; a < nodes(); ++a)
            for (int s = 0; s < samples(); ++s) {
                const auto pth = path(a, s);
                for (int d = 0; d < dim; ++d) {
                    std::snprintf(buf, sizeof(buf), "%d,%.17g,%d,%d,%.17g\n", a + 1, labels[a], s, d,
                                  pth[static_cast<size_t>(sim_config.steps) * dim + d]);
                    os << buf;
                }
            }
    }

    void write_summary_csv(std::ostream& os) const {
        os << "node,iterations,residual\n";
        char buf[96];
        for (int a = 0; a < nodes(); ++a) {
            std::snprintf(buf, sizeof(buf), "%d,%d,%.17g\n", a + 1, iterations, node_residuals[a]);
            os << buf;
        }
    }
};

namespace detail {

struct NodeNoise {
    std::vector<double> increments;  // M x k x n
    std::vector<double> eta;         // M x (k+1) x n, empty for zero process
    std::vector<double> init;        // M x n
};

}  // namespace detail

/// Approximates the limiting laws on a label grid by fixed-point iteration on
/// the measure flow: iteration 0 freezes the laws at the (constant-in-time)
/// initial law; each following round re-simulates every node's decoupled SDE
/// with the previous round's laws frozen inside the mean-field drift,
///   (1/P) sum_b A(p_a, q_b) (1/M) sum_s F(t, p_a, q_b, Z_{b,s}(t), y),
/// i.e. midpoint label quadrature and sample averages. Brownian increments,
/// initial draws and exogenous values are shared across rounds (common random
/// numbers), so the iteration is a deterministic map and residuals are
/// noise-free. Stops when the max-over-nodes W2 distance between consecutive
/// rounds' time-T marginals drops below tolerance.
inline GridMeanField picard_solve(const MeanFieldConfig& mf_config, const SimConfig& sim_config,
                                  const CoefficientModel& model, const Graphon& graphon) {
    mf_config.validate();
    sim_config.validate();
    model.validate();
    if (model.dim != sim_config.dim) throw std::invalid_argument("picard_solve: dim mismatch");

    const int grid_nodes = mf_config.label_grid_size;
    const int samples = mf_config.samples_per_node;
    const int k = sim_config.steps;
    const int n = model.dim;
    const double dt = sim_config.dt();
    const double horizon = sim_config.horizon;

    GridMeanField mf;
    mf.mf_config = mf_config;
    mf.sim_config = sim_config;
    mf.dim = n;
    mf.labels.resize(grid_nodes);
    for (int a = 0; a < grid_nodes; ++a) mf.labels[a] = (a + 0.5) / grid_nodes;

    // Graphon sampled once at node labels (midpoint quadrature of the true kernel).
    std::vector<double> coupling_weight(static_cast<size_t>(grid_nodes) * grid_nodes);
    for (int a = 0; a < grid_nodes; ++a)
        for (int b = 0; b < grid_nodes; ++b)
            coupling_weight[static_cast<size_t>(a) * grid_nodes + b] =
                graphon.kernel(mf.labels[a], mf.labels[b]);

    // Frozen randomness, shared by every Picard round.
    BrownianSource brownian(sim_config.seed);
    OuSampler ou{model.eta_spec.theta, model.eta_spec.sigma};
    std::vector<detail::NodeNoise> noise(grid_nodes);
    parallel_for(grid_nodes, [&](int a) {
        auto& nn = noise[a];
        nn.increments.resize(static_cast<size_t>(samples) * k * n);
        nn.init.resize(static_cast<size_t>(samples) * n);
        if (!model.eta_spec.is_zero()) nn.eta.resize(static_cast<size_t>(samples) * (k + 1) * n);
        std::vector<double> one;
        for (int s = 0; s < samples; ++s) {
            const uint64_t salt = sim_config.path_salt + static_cast<uint64_t>(s);
            brownian.increments(mf.labels[a], salt, horizon, n, k, sim_config.effective_base(), one);
            std::copy(one.begin(), one.end(), nn.increments.begin() + static_cast<size_t>(s) * k * n);
            const Vec z0 = model.init_spec.draw(
                mf.labels[a], stream_key(sim_config.seed, mf.labels[a], salt, StreamDomain::initial));
            std::copy(z0.begin(), z0.end(), nn.init.begin() + static_cast<size_t>(s) * n);
            if (!model.eta_spec.is_zero()) {
                // base-grid sampling + subsampling, same convention as simulate()
                const int k_base = sim_config.effective_base();
                const int stride = k_base / k;
                ou.sample_grid(stream_key(sim_config.seed, mf.labels[a], salt, StreamDomain::exogenous),
                               horizon, k_base, n, one);
                for (int m = 0; m <= k; ++m)
                    for (int d = 0; d < n; ++d)
                        nn.eta[static_cast<size_t>(s) * (k + 1) * n + static_cast<size_t>(m) * n + d] =
                            one[(static_cast<size_t>(m) * stride) * n + d];
            }
        }
    });

    const size_t path_stride = static_cast<size_t>(k + 1) * n;
    const size_t node_stride = static_cast<size_t>(samples) * path_stride;
    std::vector<double> prev(static_cast<size_t>(grid_nodes) * node_stride);
    std::vector<double> cur(prev.size());

    // Round 0: laws frozen at the initial law, constant in time.
    for (int a = 0; a < grid_nodes; ++a)
        for (int s = 0; s < samples; ++s) {
            const double* z0 = noise[a].init.data() + static_cast<size_t>(s) * n;
            double* dst = prev.data() + static_cast<size_t>(a) * node_stride + s * path_stride;
            for (int m = 0; m <= k; ++m)
                for (int d = 0; d < n; ++d) dst[static_cast<size_t>(m) * n + d] = z0[d];
        }

    double tol = mf_config.picard_tol;
    if (tol <= 0.0) {
        double lo = std::numeric_limits<double>::infinity(), hi = 0.0;
        for (int a = 0; a < grid_nodes; ++a)
            for (int s = 0; s < samples; ++s) {
                const double v = norm2(std::span<const double>(
                    noise[a].init.data() + static_cast<size_t>(s) * n, static_cast<size_t>(n)));
                lo = std::min(lo, v);
                hi = std::max(hi, v);
            }
        tol = 1e-3 * (1.0 + (hi - lo));
    }
    mf.tolerance_used = tol;

    // Per-step node sample means of the frozen round, used directly when F is
    // affine in z (the sample average of F then equals F at the sample mean).
    std::vector<double> prev_means(static_cast<size_t>(k + 1) * grid_nodes * n);
    auto refresh_means = [&](const std::vector<double>& snap) {
        parallel_for(grid_nodes, [&](int b) {
            for (int m = 0; m <= k; ++m) {
                double* mean = prev_means.data() + (static_cast<size_t>(m) * grid_nodes + b) * n;
                std::fill(mean, mean + n, 0.0);
                for (int s = 0; s < samples; ++s) {
                    const double* v =
                        snap.data() + static_cast<size_t>(b) * node_stride + s * path_stride + static_cast<size_t>(m) * n;
                    for (int d = 0; d < n; ++d) mean[d] += v[d];
                }
                for (int d = 0; d < n; ++d) mean[d] /= samples;
            }
        });
    };

    mf.node_residuals.assign(grid_nodes, 0.0);
    const double inv_nodes = 1.0 / grid_nodes;

    for (int round = 1; round <= mf_config.picard_max_iters; ++round) {
        if (model.coupling_affine_in_z) refresh_means(prev);
        std::vector<int> diverged(grid_nodes, -1);
        parallel_for(grid_nodes, [&](int a) {
            const double p_a = mf.labels[a];
            Vec f_buf(n), mf_drift(n), g_buf(n), hw(n);
            Mat h(n, n);
            const Vec zeros(n, 0.0);
            for (int s = 0; s < samples; ++s) {
                double* dst = cur.data() + static_cast<size_t>(a) * node_stride + s * path_stride;
                const double* z0 = noise[a].init.data() + static_cast<size_t>(s) * n;
                std::copy(z0, z0 + n, dst);
                for (int m = 0; m < k; ++m) {
                    const double t_m = horizon * m / k;
                    const std::span<const double> y_m(dst + static_cast<size_t>(m) * n,
                                                      static_cast<size_t>(n));
                    std::fill(mf_drift.begin(), mf_drift.end(), 0.0);
                    for (int b = 0; b < grid_nodes; ++b) {
                        const double w = coupling_weight[static_cast<size_t>(a) * grid_nodes + b];
                        const double q_b = mf.labels[b];
                        if (model.coupling_affine_in_z) {
                            const std::span<const double> zbar(
                                prev_means.data() + (static_cast<size_t>(m) * grid_nodes + b) * n,
                                static_cast<size_t>(n));
                            model.coupling(t_m, p_a, q_b, zbar, y_m, std::span<double>(f_buf));
                            axpy(w, f_buf, std::span<double>(mf_drift));
                        } else {
                            for (int sp = 0; sp < samples; ++sp) {
                                const std::span<const double> z_sp(
                                    prev.data() + static_cast<size_t>(b) * node_stride +
                                        sp * path_stride + static_cast<size_t>(m) * n,
                                    static_cast<size_t>(n));
                                model.coupling(t_m, p_a, q_b, z_sp, y_m, std::span<double>(f_buf));
                                axpy(w / samples, f_buf, std::span<double>(mf_drift));
                            }
                        }
                    }
                    for (int d = 0; d < n; ++d) mf_drift[d] *= inv_nodes;
                    const std::span<const double> eta_m =
                        noise[a].eta.empty()
                            ? std::span<const double>(zeros.data(), static_cast<size_t>(n))
                            : std::span<const double>(noise[a].eta.data() +
                                                          static_cast<size_t>(s) * (k + 1) * n +
                                                          static_cast<size_t>(m) * n,
                                                      static_cast<size_t>(n));
                    model.drift(t_m, p_a, eta_m, y_m, std::span<double>(g_buf));
                    model.diffusion(t_m, p_a, eta_m, y_m, h);
                    matvec(h,
                           std::span<const double>(noise[a].increments.data() +
                                                       static_cast<size_t>(s) * k * n +
                                                       static_cast<size_t>(m) * n,
                                                   static_cast<size_t>(n)),
                           std::span<double>(hw));
                    double* nxt = dst + static_cast<size_t>(m + 1) * n;
                    for (int d = 0; d < n; ++d) nxt[d] = y_m[d] + dt * (g_buf[d] + mf_drift[d]) + hw[d];
                    if (!all_finite(std::span<const double>(nxt, static_cast<size_t>(n))) &&
                        diverged[a] < 0)
                        diverged[a] = m;
                }
            }
        });
        for (int a = 0; a < grid_nodes; ++a)
            if (diverged[a] >= 0) throw IntegrationDivergedError(diverged[a]);

        // Residual: W2 between consecutive rounds' time-T marginals, per node.
        std::vector<double> res(grid_nodes, 0.0);
        parallel_for(grid_nodes, [&](int a) {
            std::vector<double> xs(static_cast<size_t>(samples) * n), ys(xs.size());
            for (int s = 0; s < samples; ++s)
                for (int d = 0; d < n; ++d) {
                    const size_t off = static_cast<size_t>(a) * node_stride + s * path_stride +
                                       static_cast<size_t>(k) * n + d;
                    xs[static_cast<size_t>(s) * n + d] = cur[off];
                    ys[static_cast<size_t>(s) * n + d] = prev[off];
                }
            res[a] = wasserstein_p(EmpiricalMeasure(n, std::move(xs)), EmpiricalMeasure(n, std::move(ys)), 2);
        });
        const double max_res = *std::max_element(res.begin(), res.end());
        mf.residual_history.push_back(max_res);
        mf.node_residuals = res;
        mf.iterations = round;
        std::swap(prev, cur);
        if (max_res <= tol) {
            mf.converged = true;
            break;
        }
    }
    mf.paths = std::move(prev);
    return mf;
}

/// Draws `count` paths from the mixture of node laws: node uniform over the
/// grid, then a stored sample path uniform within the node, with replacement.
inline EmpiricalPathMeasure sample_mixture(const GridMeanField& mf, int count, uint64_t seed) {
    if (count < 1) throw std::invalid_argument("sample_mixture: count must be >= 1");
    CounterStream st(plain_key(seed, 0, StreamDomain::subsample));
    const size_t stride = static_cast<size_t>(mf.sim_config.steps + 1) * mf.dim;
    std::vector<double> out;
    out.reserve(static_cast<size_t>(count) * stride);
    for (int i = 0; i < count; ++i) {
        const int a = static_cast<int>(st.index(static_cast<uint64_t>(mf.nodes())));
        const int s = static_cast<int>(st.index(static_cast<uint64_t>(mf.samples())));
        const auto p = mf.path(a, s);
        out.insert(out.end(), p.begin(), p.end());
    }
    return EmpiricalPathMeasure(mf.dim, mf.sim_config.steps, mf.sim_config.horizon, std::move(out));
}

/// Empirical marginal of the nearest grid node at a grid time. No time
/// interpolation of measures: t must sit on the grid.
inline EmpiricalMeasure node_marginal(const GridMeanField& mf, double p, double t) {
    if (!(p >= 0.0 && p <= 1.0)) throw std::domain_error("node_marginal: label outside [0,1]");
    const double pos = t / mf.sim_config.horizon * mf.sim_config.steps;
    const double rounded = std::round(pos);
    if (!(t >= 0.0 && t <= mf.sim_config.horizon) || std::fabs(pos - rounded) > 1e-9)
        throw std::domain_error("node_marginal: t not on the time grid");
    return mf.node_marginal_at(mf.nearest_node(p), static_cast<int>(rounded));
}

}  // namespace gmf
