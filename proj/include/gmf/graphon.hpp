#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <numbers>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "gmf/rng.hpp"

namespace gmf {

/// Symmetric measurable kernel [0,1]^2 -> [0,1] encoding coupling strength
/// between particle labels. Values are immutable after construction.
struct Graphon {
    std::function<double(double, double)> kernel;
    std::string name;

    double operator()(double p, double q) const { return kernel(p, q); }

    /// Random-probe check of symmetry (tolerance 1e-12) and range [0,1].
    /// Throws std::runtime_error on the first violated probe.
    void validate(int probes = 256, uint64_t seed = 0x5EEDu) const {
        CounterStream st(plain_key(seed, 0, StreamDomain::probe));
        for (int i = 0; i < probes; ++i) {
            const double p = st.uniform();
            const double q = st.uniform();
            const double v = kernel(p, q);
            const double w = kernel(q, p);
            if (std::fabs(v - w) > 1e-12)
                throw std::runtime_error("Graphon '" + name + "' failed symmetry probe");
            if (!(v >= 0.0 && v <= 1.0))
                throw std::runtime_error("Graphon '" + name + "' out of [0,1] on probe");
        }
    }
};

/// Label -> block index for the uniform partition into half-open cells
/// ((i-1)/N, i/N]; the 1-based index is ceil(N p), and p = 0 maps to block 1.
inline int cell_index(double p, int n_blocks) {
    if (!(p >= 0.0 && p <= 1.0)) throw std::domain_error("label outside [0,1]");
    if (p == 0.0) return 1;
    const int i = static_cast<int>(std::ceil(p * n_blocks));
    return std::clamp(i, 1, n_blocks);
}

/// Piecewise-constant graphon on an N x N uniform cell grid; equivalently a
/// weighted graph on N nodes with weights in [0,1].
struct StepGraphon {
    int n_blocks = 0;
    std::vector<double> weights;  // row-major N x N, symmetric

    StepGraphon() = default;
    StepGraphon(int n, std::vector<double> w) : n_blocks(n), weights(std::move(w)) {
        if (n_blocks < 1 || weights.size() != static_cast<size_t>(n_blocks) * n_blocks)
            throw std::invalid_argument("StepGraphon: bad shape");
    }

    /// 1-based block lookup (adjacency-matrix style indexing).
    double block(int i, int j) const { return weights[static_cast<size_t>(i - 1) * n_blocks + (j - 1)]; }

    double evaluate(double p, double q) const {
        return block(cell_index(p, n_blocks), cell_index(q, n_blocks));
    }

    Graphon as_graphon() const {
        StepGraphon copy = *this;
        return Graphon{[copy](double p, double q) { return copy.evaluate(p, q); },
                       "step[" + std::to_string(n_blocks) + "]"};
    }

    /// CSV export, row-major, header `i,j,weight` (1-based indices).
    void write_csv(std::ostream& os) const {
        os << "i,j,weight\n";
        for (int i = 1; i <= n_blocks; ++i)
            for (int j = 1; j <= n_blocks; ++j) {
                char buf[64];
                std::snprintf(buf, sizeof(buf), "%d,%d,%.17g\n", i, j, block(i, j));
                os << buf;
            }
    }
};

/// Step-graphon discretization a_{N,ij} = A(i/N, j/N). The matrix is built
/// from the upper triangle and mirrored, so symmetry is exact regardless of
/// floating-point quirks in the kernel.
inline StepGraphon discretize(const Graphon& graphon, int n_blocks) {
    if (n_blocks < 1) throw std::invalid_argument("discretize: n_blocks must be >= 1");
    std::vector<double> w(static_cast<size_t>(n_blocks) * n_blocks, 0.0);
    for (int i = 1; i <= n_blocks; ++i)
        for (int j = i; j <= n_blocks; ++j) {
            const double v = graphon.kernel(static_cast<double>(i) / n_blocks, static_cast<double>(j) / n_blocks);
            w[static_cast<size_t>(i - 1) * n_blocks + (j - 1)] = v;
            w[static_cast<size_t>(j - 1) * n_blocks + (i - 1)] = v;
        }
    return StepGraphon(n_blocks, std::move(w));
}

inline double evaluate_step(const StepGraphon& sg, double p, double q) { return sg.evaluate(p, q); }

/// Lower-bound estimate of the infinity-to-one norm of the difference of two
/// kernels, computed on a uniform grid of cell midpoints by alternating
/// +/-1-vector maximization of y^T B x with random restarts. Deterministic
/// given the seed. Exact computation is combinatorially hard; a consistent
/// lower-bound estimator is all the convergence checks need.
inline double infty_to_one_diff(const std::function<double(double, double)>& a,
                                const std::function<double(double, double)>& b, int grid_resolution,
                                int restarts, uint64_t seed = 0x5EEDu) {
    if (grid_resolution < 1) throw std::invalid_argument("infty_to_one_diff: bad resolution");
    if (restarts < 1) throw std::invalid_argument("infty_to_one_diff: need at least one restart");
    const int r = grid_resolution;
    std::vector<double> diff(static_cast<size_t>(r) * r);
    for (int u = 0; u < r; ++u) {
        const double pu = (u + 0.5) / r;
        for (int v = 0; v < r; ++v) {
            const double qv = (v + 0.5) / r;
            diff[static_cast<size_t>(u) * r + v] = a(pu, qv) - b(pu, qv);
        }
    }
    std::vector<double> x(r), y(r), bty(r);
    double best = 0.0;
    for (int trial = 0; trial < restarts; ++trial) {
        CounterStream st(plain_key(seed, static_cast<uint64_t>(trial), StreamDomain::norm_restart));
        for (int v = 0; v < r; ++v) x[v] = st.uniform() < 0.5 ? -1.0 : 1.0;
        double value = -1.0;
        for (int iter = 0; iter < 64; ++iter) {
            for (int u = 0; u < r; ++u) {
                double s = 0.0;
                for (int v = 0; v < r; ++v) s += diff[static_cast<size_t>(u) * r + v] * x[v];
                y[u] = s >= 0.0 ? 1.0 : -1.0;
            }
            for (int v = 0; v < r; ++v) {
                double s = 0.0;
                for (int u = 0; u < r; ++u) s += diff[static_cast<size_t>(u) * r + v] * y[u];
                bty[v] = s;
                x[v] = s >= 0.0 ? 1.0 : -1.0;
            }
            double cur = 0.0;
            for (int v = 0; v < r; ++v) cur += std::fabs(bty[v]);
            if (cur <= value) break;
            value = cur;
        }
        best = std::max(best, value);
    }
    return best / (static_cast<double>(r) * r);
}

inline double infty_to_one_diff(const Graphon& a, const Graphon& b, int grid_resolution, int restarts,
                                uint64_t seed = 0x5EEDu) {
    return infty_to_one_diff(a.kernel, b.kernel, grid_resolution, restarts, seed);
}

inline double infty_to_one_diff(const Graphon& a, const StepGraphon& b, int grid_resolution, int restarts,
                                uint64_t seed = 0x5EEDu) {
    if (grid_resolution < b.n_blocks) throw std::invalid_argument("grid_resolution below block count");
    return infty_to_one_diff(a.kernel, [&b](double p, double q) { return b.evaluate(p, q); },
                             grid_resolution, restarts, seed);
}

inline double infty_to_one_diff(const StepGraphon& a, const Graphon& b, int grid_resolution, int restarts,
                                uint64_t seed = 0x5EEDu) {
    if (grid_resolution < a.n_blocks) throw std::invalid_argument("grid_resolution below block count");
    return infty_to_one_diff([&a](double p, double q) { return a.evaluate(p, q); }, b.kernel,
                             grid_resolution, restarts, seed);
}

inline double infty_to_one_diff(const StepGraphon& a, const StepGraphon& b, int grid_resolution,
                                int restarts, uint64_t seed = 0x5EEDu) {
    if (grid_resolution < std::max(a.n_blocks, b.n_blocks))
        throw std::invalid_argument("grid_resolution below block count");
    return infty_to_one_diff([&a](double p, double q) { return a.evaluate(p, q); },
                             [&b](double p, double q) { return b.evaluate(p, q); }, grid_resolution,
                             restarts, seed);
}

// Built-in continuous family: constant, product, min, and a smooth cosine
// kernel. All are continuous on [0,1]^2 and map into [0,1].

inline Graphon constant_graphon(double c) {
    if (!(c >= 0.0 && c <= 1.0)) throw std::invalid_argument("constant graphon needs c in [0,1]");
    return Graphon{[c](double, double) { return c; }, "constant"};
}

inline Graphon product_graphon() {
    return Graphon{[](double p, double q) { return p * q; }, "product"};
}

inline Graphon min_graphon() {
    return Graphon{[](double p, double q) { return std::min(p, q); }, "min"};
}

inline Graphon cosine_graphon() {
    return Graphon{[](double p, double q) { return 0.5 * (1.0 + std::cos(std::numbers::pi * (p - q))); },
                   "cosine"};
}

inline Graphon make_graphon(const std::string& name, const std::map<std::string, double>& params = {}) {
    if (name == "constant") {
        const auto it = params.find("c");
        return constant_graphon(it == params.end() ? 1.0 : it->second);
    }
    if (name == "product") return product_graphon();
    if (name == "min") return min_graphon();
    if (name == "cosine") return cosine_graphon();
    throw std::invalid_argument("unknown graphon '" + name + "'");
}

}  // namespace gmf
