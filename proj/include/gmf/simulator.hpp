#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "gmf/graphon.hpp"
#include "gmf/linalg.hpp"
#include "gmf/model.hpp"
#include "gmf/rng.hpp"
#include "gmf/transport.hpp"

namespace gmf {

struct SimConfig {
    double horizon = 1.0;   // T
    int steps = 1;          // k, step size T/k
    int particles = 1;      // N
    int dim = 1;            // n
    uint64_t seed = 0;
    /// Brownian base resolution; increments at `steps` are exact partial sums
    /// of base increments, which is what couples refined runs. 0 means steps.
    int base_steps = 0;
    /// Separates replications / sample indices that must be independent.
    uint64_t path_salt = 0;

    int effective_base() const { return base_steps == 0 ? steps : base_steps; }
    double dt() const { return horizon / static_cast<double>(steps); }
    double label(int particle_index) const {  // 1-based index i -> i/N
        return static_cast<double>(particle_index) / particles;
    }

    void validate() const {
        if (!(horizon > 0.0)) throw std::invalid_argument("SimConfig: horizon must be positive");
        if (steps < 1 || particles < 1 || dim < 1) throw std::invalid_argument("SimConfig: bad sizes");
        if (effective_base() % steps != 0)
            throw std::invalid_argument("SimConfig: steps must divide base_steps");
    }
};

struct IntegrationDivergedError : std::runtime_error {
    int step_index;
    explicit IntegrationDivergedError(int step)
        : std::runtime_error("integration diverged at step " + std::to_string(step)),
          step_index(step) {}
};

/// N particle trajectories on the uniform grid t_m = m T / k, plus the
/// exogenous-process values seen at grid times. Immutable after simulation.
struct ParticleEnsemble {
    SimConfig config;
    std::vector<double> states;     // (k+1) x N x n
    std::vector<double> eta_trace;  // (k+1) x N x n, empty when eta is the zero process

    std::span<const double> state(int m, int i) const {
        const size_t off = (static_cast<size_t>(m) * config.particles + i) * config.dim;
        return {states.data() + off, static_cast<size_t>(config.dim)};
    }
    /// Empty span when the exogenous process is the zero process.
    std::span<const double> eta(int m, int i) const {
        if (eta_trace.empty()) return {};
        const size_t off = (static_cast<size_t>(m) * config.particles + i) * config.dim;
        return {eta_trace.data() + off, static_cast<size_t>(config.dim)};
    }

    /// Discretized paths as a uniformly weighted empirical path measure.
    EmpiricalPathMeasure as_path_measure() const {
        const int k = config.steps, n_p = config.particles, n = config.dim;
        std::vector<double> paths(static_cast<size_t>(n_p) * (k + 1) * n);
        for (int i = 0; i < n_p; ++i)
            for (int m = 0; m <= k; ++m) {
                const auto s = state(m, i);
                std::copy(s.begin(), s.end(),
                          paths.begin() + (static_cast<size_t>(i) * (k + 1) + m) * n);
            }
        return EmpiricalPathMeasure(n, k, config.horizon, std::move(paths));
    }

    /// CSV export with columns t,particle,component,value.
    void write_csv(std::ostream& os) const {
        os << "t,particle,component,value\n";
        char buf[96];
        for (int m = 0; m <= config.steps; ++m) {
            const double t = config.horizon * m / config.steps;
            for (int i = 0; i < config.particles; ++i) {
                const auto s = state(m, i);
                for (int d = 0; d < config.dim; ++d) {
                    std::snprintf(buf, sizeof(buf), "%.17g,%d,%d,%.17g\n", t, i + 1, d, s[d]);
                    os << buf;
                }
            }
        }
    }

    /// Binary snapshot: 32-byte header (magic, N, k, n, T), then the state
    /// array as little-endian f64, step-major.
    void write_snapshot(std::ostream& os) const {
        char header[32] = {};
        std::memcpy(header, "GMFSNAP1", 8);
        const uint32_t n_u = static_cast<uint32_t>(config.particles);
        const uint32_t k_u = static_cast<uint32_t>(config.steps);
        const uint32_t d_u = static_cast<uint32_t>(config.dim);
        std::memcpy(header + 8, &n_u, 4);
        std::memcpy(header + 12, &k_u, 4);
        std::memcpy(header + 16, &d_u, 4);
        std::memcpy(header + 24, &config.horizon, 8);
        os.write(header, sizeof(header));
        os.write(reinterpret_cast<const char*>(states.data()),
                 static_cast<std::streamsize>(states.size() * sizeof(double)));
    }
};

/// One explicit Euler-Maruyama step for the N-particle system: all of F, G, H
/// and eta are evaluated at the left endpoint t_m,
///   z_i' = z_i + dt [ G(t_m, i/N, eta_i, z_i)
///                     + (1/N) sum_j a_ij F(t_m, i/N, j/N, z_j, z_i) ]
///        + H(t_m, i/N, eta_i, z_i) dW_i.
/// noise_m holds the Brownian increments dW (N x n), eta_m the exogenous
/// values at t_m (N x n; ignored size-0 span means zero process).
inline void em_step(std::span<const double> states_m, double t_m, double dt,
                    const CoefficientModel& model, const StepGraphon& weights,
                    std::span<const double> noise_m, std::span<const double> eta_m,
                    std::span<double> out) {
    const int n = model.dim;
    const int n_p = weights.n_blocks;
    if (static_cast<int>(states_m.size()) != n_p * n || out.size() != states_m.size())
        throw std::invalid_argument("em_step: shape mismatch");
    if (!(dt > 0.0)) throw std::invalid_argument("em_step: dt must be positive");
    const Vec zeros(n, 0.0);

    Vec f_buf(n), drift(n), hw(n);
    Mat h(n, n);
    const double inv_n = 1.0 / static_cast<double>(n_p);
    for (int i = 0; i < n_p; ++i) {
        const double p = static_cast<double>(i + 1) / n_p;
        const auto z_i = states_m.subspan(static_cast<size_t>(i) * n, n);
        const auto eta_i = eta_m.empty() ? std::span<const double>(zeros.data(), n)
                                         : eta_m.subspan(static_cast<size_t>(i) * n, n);
        std::fill(drift.begin(), drift.end(), 0.0);
        for (int j = 0; j < n_p; ++j) {
            const double a_ij = weights.block(i + 1, j + 1);
            const double q = static_cast<double>(j + 1) / n_p;
            const auto z_j = states_m.subspan(static_cast<size_t>(j) * n, n);
            model.coupling(t_m, p, q, z_j, z_i, std::span<double>(f_buf));
            axpy(a_ij, f_buf, std::span<double>(drift));
        }
        for (int d = 0; d < n; ++d) drift[d] *= inv_n;
        model.drift(t_m, p, eta_i, z_i, std::span<double>(f_buf));
        for (int d = 0; d < n; ++d) drift[d] += f_buf[d];
        model.diffusion(t_m, p, eta_i, z_i, h);
        matvec(h, noise_m.subspan(static_cast<size_t>(i) * n, n), std::span<double>(hw));
        for (int d = 0; d < n; ++d) out[static_cast<size_t>(i) * n + d] = z_i[d] + dt * drift[d] + hw[d];
    }
    if (!all_finite(out)) throw IntegrationDivergedError(static_cast<int>(std::lround(t_m / dt)));
}

namespace detail {

/// Exogenous values at grid times for every particle, or empty for the zero
/// process. Label-keyed streams like the Brownian ones. The process is
/// sampled by exact transitions on the base grid and subsampled to the run's
/// grid, so refinement-coupled runs see the same exogenous path.
inline std::vector<double> generate_eta_trace(const SimConfig& cfg, const ExogenousSpec& eta) {
    if (eta.is_zero()) return {};
    OuSampler sampler{eta.theta, eta.sigma};
    const int k = cfg.steps, n_p = cfg.particles, n = cfg.dim;
    const int k_base = cfg.effective_base();
    const int stride = k_base / k;
    std::vector<double> trace(static_cast<size_t>(k + 1) * n_p * n, 0.0);
    std::vector<double> node;
    for (int i = 0; i < n_p; ++i) {
        const uint64_t key = stream_key(cfg.seed, cfg.label(i + 1), cfg.path_salt, StreamDomain::exogenous);
        sampler.sample_grid(key, cfg.horizon, k_base, n, node);
        for (int m = 0; m <= k; ++m)
            for (int d = 0; d < n; ++d)
                trace[(static_cast<size_t>(m) * n_p + i) * n + d] =
                    node[(static_cast<size_t>(m) * stride) * n + d];
    }
    return trace;
}

}  // namespace detail

/// Integrates the N-particle system: discretizes the graphon to N blocks,
/// draws initial states and exogenous values at the labels i/N, and iterates
/// em_step. Fully deterministic given the config seed.
inline ParticleEnsemble simulate(const SimConfig& config, const CoefficientModel& model,
                                 const Graphon& graphon) {
    config.validate();
    model.validate();
    if (model.dim != config.dim) throw std::invalid_argument("simulate: model/config dim mismatch");
    const int k = config.steps, n_p = config.particles, n = config.dim;
    const double dt = config.dt();
    const StepGraphon weights = discretize(graphon, n_p);
    BrownianSource brownian(config.seed);

    ParticleEnsemble ens;
    ens.config = config;
    ens.states.assign(static_cast<size_t>(k + 1) * n_p * n, 0.0);
    ens.eta_trace = detail::generate_eta_trace(config, model.eta_spec);

    for (int i = 0; i < n_p; ++i) {
        const double label = config.label(i + 1);
        const uint64_t key = stream_key(config.seed, label, config.path_salt, StreamDomain::initial);
        const Vec z0 = model.init_spec.draw(label, key);
        std::copy(z0.begin(), z0.end(), ens.states.begin() + static_cast<size_t>(i) * n);
    }

    // Pre-generate all increments; the per-step update then only reads them.
    std::vector<double> incr(static_cast<size_t>(k) * n_p * n, 0.0);
    std::vector<double> one;
    for (int i = 0; i < n_p; ++i) {
        brownian.increments(config.label(i + 1), config.path_salt, config.horizon, n, k,
                            config.effective_base(), one);
        for (int m = 0; m < k; ++m)
            for (int d = 0; d < n; ++d)
                incr[(static_cast<size_t>(m) * n_p + i) * n + d] = one[static_cast<size_t>(m) * n + d];
    }

    const size_t frame = static_cast<size_t>(n_p) * n;
    for (int m = 0; m < k; ++m) {
        const double t_m = config.horizon * m / k;
        const std::span<const double> cur(ens.states.data() + static_cast<size_t>(m) * frame, frame);
        const std::span<double> next(ens.states.data() + static_cast<size_t>(m + 1) * frame, frame);
        const std::span<const double> noise(incr.data() + static_cast<size_t>(m) * frame, frame);
        const std::span<const double> eta =
            ens.eta_trace.empty()
                ? std::span<const double>{}
                : std::span<const double>(ens.eta_trace.data() + static_cast<size_t>(m) * frame, frame);
        try {
            em_step(cur, t_m, dt, model, weights, noise, eta, next);
        } catch (const IntegrationDivergedError&) {
            throw IntegrationDivergedError(m);  // rethrow with the exact step index
        }
    }
    return ens;
}

/// State at (t, p): label p maps to particle ceil(N p) (p = 0 to particle 1),
/// values are piecewise-linear in t between grid points. The in-step
/// Brownian-bridge contribution is deliberately not reconstructed.
inline Vec interpolate(const ParticleEnsemble& ensemble, double t, double p) {
    const auto& cfg = ensemble.config;
    if (!(t >= 0.0 && t <= cfg.horizon)) throw std::domain_error("interpolate: t outside [0,T]");
    const int i = cell_index(p, cfg.particles) - 1;  // throws outside [0,1]
    const double pos = t / cfg.horizon * cfg.steps;
    const int m0 = std::min(static_cast<int>(pos), cfg.steps - 1);
    const double w = pos - m0;
    const auto a = ensemble.state(m0, i);
    const auto b = ensemble.state(m0 + 1, i);
    Vec out(cfg.dim);
    for (int d = 0; d < cfg.dim; ++d) out[d] = (1.0 - w) * a[d] + w * b[d];
    return out;
}

/// Simulates the same system at every step count in k_list with shared
/// per-particle Brownian paths (increments at each k are exact partial sums
/// of increments at the largest k). Entries must divide the largest entry.
inline std::vector<ParticleEnsemble> refine_coupled(const SimConfig& config,
                                                    const CoefficientModel& model,
                                                    const Graphon& graphon,
                                                    const std::vector<int>& k_list) {
    if (k_list.empty()) throw std::invalid_argument("refine_coupled: empty k list");
    const int k_max = *std::max_element(k_list.begin(), k_list.end());
    for (int k : k_list)
        if (k < 1 || k_max % k != 0)
            throw std::invalid_argument("refine_coupled: k list entries must divide the largest entry");
    std::vector<ParticleEnsemble> out;
    out.reserve(k_list.size());
    for (int k : k_list) {
        SimConfig cfg = config;
        cfg.steps = k;
        cfg.base_steps = k_max;
        out.push_back(simulate(cfg, model, graphon));
    }
    return out;
}

}  // namespace gmf
