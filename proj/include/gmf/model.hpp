#pragma once

#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "gmf/linalg.hpp"
#include "gmf/rng.hpp"

namespace gmf {

// Coefficient functions write into caller-provided buffers; they must be pure
// (no hidden state) so the simulator may evaluate them concurrently.

/// Pairwise interaction kernel (t, p, q, z, y) -> R^n.
using PairFn = std::function<void(double t, double p, double q, std::span<const double> z,
                                  std::span<const double> y, std::span<double> out)>;
/// Self drift (t, p, eta, y) -> R^n.
using SelfFn = std::function<void(double t, double p, std::span<const double> eta,
                                  std::span<const double> y, std::span<double> out)>;
/// Diffusion matrix (t, p, eta, y) -> R^{n x n}; `out` arrives preallocated.
using DiffusionFn = std::function<void(double t, double p, std::span<const double> eta,
                                       std::span<const double> y, Mat& out)>;

/// Exogenous per-label process; labels carry independent copies.
struct ExogenousSpec {
    enum class Kind { zero, ornstein_uhlenbeck };
    Kind kind = Kind::zero;
    double theta = 1.0;
    double sigma = 1.0;

    static ExogenousSpec none() { return {}; }
    static ExogenousSpec ou(double theta, double sigma) {
        if (theta < 0.0 || sigma < 0.0) throw std::invalid_argument("ou: negative parameter");
        return {Kind::ornstein_uhlenbeck, theta, sigma};
    }
    bool is_zero() const { return kind == Kind::zero; }
};

/// Initial law, per label.
struct InitialLawSpec {
    enum class Kind { deterministic, deterministic_field, gaussian };
    Kind kind = Kind::deterministic;
    Vec point;                                  // deterministic
    std::function<Vec(double)> field;           // deterministic_field / gaussian mean field
    Mat cov;                                    // gaussian
    Mat cov_chol;                               // cached factor

    static InitialLawSpec deterministic(Vec value) {
        InitialLawSpec s;
        s.kind = Kind::deterministic;
        s.point = std::move(value);
        return s;
    }
    static InitialLawSpec deterministic_field(std::function<Vec(double)> f) {
        InitialLawSpec s;
        s.kind = Kind::deterministic_field;
        s.field = std::move(f);
        return s;
    }
    static InitialLawSpec gaussian(std::function<Vec(double)> mean_field, Mat covariance) {
        InitialLawSpec s;
        s.kind = Kind::gaussian;
        s.field = std::move(mean_field);
        s.cov = covariance;
        s.cov_chol = cholesky(covariance);
        return s;
    }

    bool is_deterministic() const { return kind != Kind::gaussian; }

    int dim() const {
        if (kind == Kind::deterministic) return static_cast<int>(point.size());
        return static_cast<int>(field(0.0).size());
    }

    /// Draw z_p(0); deterministic kinds ignore the stream key.
    Vec draw(double label, uint64_t key) const {
        switch (kind) {
            case Kind::deterministic: return point;
            case Kind::deterministic_field: return field(label);
            case Kind::gaussian: {
                Vec mean = field(label);
                const int n = static_cast<int>(mean.size());
                Vec xi(n);
                for (int d = 0; d < n; ++d) xi[d] = normal_at(key, static_cast<uint64_t>(d));
                Vec noise(n, 0.0);
                matvec(cov_chol, xi, noise);
                for (int d = 0; d < n; ++d) mean[d] += noise[d];
                return mean;
            }
        }
        throw std::logic_error("unreachable");
    }
};

/// Time-varying algorithm gains; both must stay positive on [0, T].
struct GainSchedule {
    std::function<double(double)> alpha1;
    std::function<double(double)> alpha2;

    static GainSchedule constants(double a1, double a2) {
        return {[a1](double) { return a1; }, [a2](double) { return a2; }};
    }

    /// Probe positivity on a uniform grid; throws on the first violation.
    void validate(double horizon, int probes = 256) const {
        for (int i = 0; i <= probes; ++i) {
            const double t = horizon * i / probes;
            if (!(alpha1(t) > 0.0) || !(alpha2(t) > 0.0))
                throw std::runtime_error("GainSchedule: gain not positive at probed t");
        }
    }
};

/// The (F, G, H) triple plus exogenous-process and initial-law specs; the
/// full coefficient data of the graphon particle dynamics.
struct CoefficientModel {
    int dim = 1;
    PairFn coupling;     // F
    SelfFn drift;        // G
    DiffusionFn diffusion;  // H
    ExogenousSpec eta_spec;
    InitialLawSpec init_spec;
    /// F affine in its z argument: sample averages of F over z collapse to F
    /// at the sample mean, which the mean-field solver exploits.
    bool coupling_affine_in_z = false;
    std::string name = "custom";

    void validate() const {
        if (dim < 1) throw std::invalid_argument("CoefficientModel: dim must be >= 1");
        if (!coupling || !drift || !diffusion) throw std::invalid_argument("CoefficientModel: missing coefficient");
        if (init_spec.dim() != dim) throw std::invalid_argument("CoefficientModel: init dim mismatch");
    }
};

inline PairFn zero_pair(int) {
    return [](double, double, double, std::span<const double>, std::span<const double>,
              std::span<double> out) { std::fill(out.begin(), out.end(), 0.0); };
}
inline SelfFn zero_self(int) {
    return [](double, double, std::span<const double>, std::span<const double>, std::span<double> out) {
        std::fill(out.begin(), out.end(), 0.0);
    };
}
inline DiffusionFn zero_diffusion(int) {
    return [](double, double, std::span<const double>, std::span<const double>, Mat& out) {
        std::fill(out.a.begin(), out.a.end(), 0.0);
    };
}

/// Family of per-node strongly convex quadratics
/// V(p,z) = 1/2 (z - c(p))^T Q(p) (z - c(p)) with Q(p) symmetric positive
/// definite; gradients are Lipschitz with constant sup_p ||Q(p)||.
struct QuadraticCostFamily {
    int dim = 1;
    std::function<Vec(double)> target;        // c(p)
    std::function<Mat(double)> quadratic;     // Q(p)

    double value(double p, std::span<const double> z) const {
        const Vec c = target(p);
        const Mat q = quadratic(p);
        Vec d(dim);
        for (int i = 0; i < dim; ++i) d[i] = z[i] - c[i];
        Vec qd(dim, 0.0);
        matvec(q, d, qd);
        return 0.5 * dot(d, qd);
    }

    void gradient(double p, std::span<const double> z, std::span<double> out) const {
        const Vec c = target(p);
        const Mat q = quadratic(p);
        Vec d(dim);
        for (int i = 0; i < dim; ++i) d[i] = z[i] - c[i];
        matvec(q, d, out);
    }

    static QuadraticCostFamily isotropic(int dim, double weight, std::function<Vec(double)> target) {
        QuadraticCostFamily f;
        f.dim = dim;
        f.target = std::move(target);
        f.quadratic = [dim, weight](double) { return Mat::scaled_identity(dim, weight); };
        return f;
    }
};

/// Assembles the distributed-SGD dynamics as a coefficient model:
/// F = alpha1(t) (z - y), G = -alpha2(t) grad V(p, y), H = -alpha2(t) Sigma1,
/// with no exogenous process.
inline CoefficientModel sgd_model(const QuadraticCostFamily& costs, const GainSchedule& gains,
                                  const Mat& sigma1, InitialLawSpec init) {
    const int n = costs.dim;
    if (sigma1.rows != n || sigma1.cols != n)
        throw std::invalid_argument("sgd_model: Sigma1 dimension mismatch");
    if (init.dim() != n) throw std::invalid_argument("sgd_model: init dimension mismatch");
    CoefficientModel m;
    m.dim = n;
    m.name = "sgd_quadratic";
    m.coupling_affine_in_z = true;
    auto a1 = gains.alpha1;
    auto a2 = gains.alpha2;
    m.coupling = [a1](double t, double, double, std::span<const double> z, std::span<const double> y,
                      std::span<double> out) {
        const double g = a1(t);
        for (size_t i = 0; i < out.size(); ++i) out[i] = g * (z[i] - y[i]);
    };
    m.drift = [a2, costs](double t, double p, std::span<const double>, std::span<const double> y,
                          std::span<double> out) {
        costs.gradient(p, y, out);
        const double g = -a2(t);
        for (size_t i = 0; i < out.size(); ++i) out[i] *= g;
    };
    m.diffusion = [a2, sigma1](double t, double, std::span<const double>, std::span<const double>,
                               Mat& out) {
        const double g = -a2(t);
        for (size_t i = 0; i < out.a.size(); ++i) out.a[i] = g * sigma1.a[i];
    };
    m.eta_spec = ExogenousSpec::none();
    m.init_spec = std::move(init);
    return m;
}

/// Riemann approximation of the minimizer of the aggregate cost
/// integral V(p, z) dp over the given label grid:
/// (sum Q(p_i))^{-1} sum Q(p_i) c(p_i). Throws on a singular aggregate.
inline Vec global_minimizer(const QuadraticCostFamily& costs, const std::vector<double>& label_grid) {
    if (label_grid.empty()) throw std::invalid_argument("global_minimizer: empty grid");
    const int n = costs.dim;
    Mat q_sum(n, n, 0.0);
    Vec qc_sum(n, 0.0);
    Vec qc(n, 0.0);
    for (double p : label_grid) {
        const Mat q = costs.quadratic(p);
        const Vec c = costs.target(p);
        for (size_t i = 0; i < q.a.size(); ++i) q_sum.a[i] += q.a[i];
        matvec(q, c, qc);
        for (int i = 0; i < n; ++i) qc_sum[i] += qc[i];
    }
    return solve_linear(q_sum, qc_sum);
}

inline std::vector<double> midpoint_grid(int cells) {
    std::vector<double> g(cells);
    for (int i = 0; i < cells; ++i) g[i] = (i + 0.5) / cells;
    return g;
}

/// Probe-based diagnostics for the standing regularity conditions: estimated
/// Lipschitz constants and growth ratios over randomized probes. Purely
/// informational; the analytic assumptions cannot be certified numerically.
struct AssumptionReport {
    double lip_G = 0.0;        // joint (eta, y) Lipschitz estimate for G
    double lip_G_y = 0.0;      // y-only Lipschitz estimate for G
    double lip_H = 0.0;        // joint (eta, y) Lipschitz estimate for H
    double lip_F = 0.0;        // (z, y) Lipschitz estimate for F, additive form
    double growth_G_H = 0.0;   // max (||G|| + ||H||) / (1 + ||eta|| + ||y||)
    double growth_F = 0.0;     // max ||F|| / (1 + ||z|| + ||y||)
    int probes = 0;
    bool growth_ok = true;     // against the supplied C1, C2
};

struct ProbeThresholds {
    double c1 = std::numeric_limits<double>::infinity();
    double c2 = std::numeric_limits<double>::infinity();
    double horizon = 1.0;
};

inline AssumptionReport probe_assumptions(const CoefficientModel& model, int probes, uint64_t seed,
                                          ProbeThresholds thresholds = {}) {
    if (probes < 1) throw std::invalid_argument("probe_assumptions: probes must be >= 1");
    model.validate();
    const int n = model.dim;
    AssumptionReport rep;
    rep.probes = probes;
    CounterStream st(plain_key(seed, 0, StreamDomain::probe));
    auto gauss_vec = [&](Vec& v) {
        for (double& x : v) x = st.normal();
    };
    Vec eta1(n), eta2(n), y1(n), y2(n), z1(n), z2(n);
    Vec g1(n), g2(n), f1(n), f2(n);
    Mat h1(n, n), h2(n, n);
    for (int i = 0; i < probes; ++i) {
        const double t = thresholds.horizon * st.uniform();
        const double p = st.uniform();
        const double q = st.uniform();
        gauss_vec(eta1);
        gauss_vec(eta2);
        gauss_vec(y1);
        gauss_vec(y2);
        gauss_vec(z1);
        gauss_vec(z2);

        model.drift(t, p, eta1, y1, std::span<double>(g1));
        model.drift(t, p, eta2, y2, std::span<double>(g2));
        model.diffusion(t, p, eta1, y1, h1);
        model.diffusion(t, p, eta2, y2, h2);
        model.coupling(t, p, q, z1, y1, std::span<double>(f1));
        model.coupling(t, p, q, z2, y2, std::span<double>(f2));

        const double d_state = std::sqrt(dist2(eta1, eta2) * dist2(eta1, eta2) + dist2(y1, y2) * dist2(y1, y2));
        double dg = 0.0, dh = 0.0, df = 0.0;
        for (int d = 0; d < n; ++d) {
            const double e = g1[d] - g2[d];
            dg += e * e;
        }
        for (size_t d = 0; d < h1.a.size(); ++d) {
            const double e = h1.a[d] - h2.a[d];
            dh += e * e;
        }
        for (int d = 0; d < n; ++d) {
            const double e = f1[d] - f2[d];
            df += e * e;
        }
        if (d_state > 1e-12) {
            rep.lip_G = std::max(rep.lip_G, std::sqrt(dg) / d_state);
            rep.lip_H = std::max(rep.lip_H, std::sqrt(dh) / d_state);
        }
        const double d_zy = dist2(z1, z2) + dist2(y1, y2);
        if (d_zy > 1e-12) rep.lip_F = std::max(rep.lip_F, std::sqrt(df) / d_zy);

        // y-only variation for G
        model.drift(t, p, eta1, y2, std::span<double>(g2));
        double dgy = 0.0;
        for (int d = 0; d < n; ++d) {
            const double e = g1[d] - g2[d];
            dgy += e * e;
        }
        if (dist2(y1, y2) > 1e-12) rep.lip_G_y = std::max(rep.lip_G_y, std::sqrt(dgy) / dist2(y1, y2));

        double hn = 0.0;
        for (double v : h1.a) hn += v * v;
        rep.growth_G_H =
            std::max(rep.growth_G_H, (norm2(g1) + std::sqrt(hn)) / (1.0 + norm2(eta1) + norm2(y1)));
        rep.growth_F = std::max(rep.growth_F, norm2(f1) / (1.0 + norm2(z1) + norm2(y1)));
    }
    rep.growth_ok = rep.growth_G_H <= thresholds.c1 && rep.growth_F <= thresholds.c2;
    return rep;
}

// ---------------------------------------------------------------------------
// Named presets, selectable from experiment configs.

struct ModelParams {
    std::map<std::string, double> num;
    std::map<std::string, std::string> str;

    double get(const std::string& k, double fallback) const {
        const auto it = num.find(k);
        return it == num.end() ? fallback : it->second;
    }
    std::string get(const std::string& k, const std::string& fallback) const {
        const auto it = str.find(k);
        return it == str.end() ? fallback : it->second;
    }
};

inline InitialLawSpec make_init_spec(const ModelParams& params, int dim) {
    const std::string kind = params.get("init", std::string("linear_field"));
    if (kind == "point") {
        return InitialLawSpec::deterministic(Vec(dim, params.get("init_value", 0.0)));
    }
    if (kind == "linear_field") {
        const double a = params.get("init_a", 0.0);
        const double b = params.get("init_b", 1.0);
        return InitialLawSpec::deterministic_field([a, b, dim](double p) { return Vec(dim, a + b * p); });
    }
    if (kind == "gaussian") {
        const double a = params.get("init_a", 0.0);
        const double b = params.get("init_b", 1.0);
        const double sd = params.get("init_std", 1.0);
        return InitialLawSpec::gaussian([a, b, dim](double p) { return Vec(dim, a + b * p); },
                                        Mat::scaled_identity(dim, sd * sd));
    }
    throw std::invalid_argument("unknown init kind '" + kind + "'");
}

inline QuadraticCostFamily make_quadratic_costs(const ModelParams& params, int dim) {
    const double q = params.get("q", 1.0);
    const double c_a = params.get("c_a", 0.0);
    const double c_b = params.get("c_b", 1.0);
    return QuadraticCostFamily::isotropic(dim, q,
                                          [c_a, c_b, dim](double p) { return Vec(dim, c_a + c_b * p); });
}

inline GainSchedule make_gains(const ModelParams& params) {
    const double a1 = params.get("alpha1", 1.0);
    const double a2 = params.get("alpha2", 1.0);
    if (params.get("alpha2_decay", 0.0) != 0.0)
        return {[a1](double) { return a1; }, [a2](double t) { return a2 / (1.0 + t); }};
    return GainSchedule::constants(a1, a2);
}

/// Presets: sgd_quadratic, consensus_only, kuramoto_like, ou_driven.
inline CoefficientModel make_model(const std::string& name, const ModelParams& params) {
    const int dim = static_cast<int>(params.get("dim", 1.0));
    if (name == "sgd_quadratic") {
        auto m = sgd_model(make_quadratic_costs(params, dim), make_gains(params),
                           Mat::scaled_identity(dim, params.get("sigma1", 0.0)),
                           make_init_spec(params, dim));
        return m;
    }
    if (name == "consensus_only") {
        const double a1 = params.get("alpha1", 1.0);
        CoefficientModel m;
        m.dim = dim;
        m.name = "consensus_only";
        m.coupling_affine_in_z = true;
        m.coupling = [a1](double, double, double, std::span<const double> z, std::span<const double> y,
                          std::span<double> out) {
            for (size_t i = 0; i < out.size(); ++i) out[i] = a1 * (z[i] - y[i]);
        };
        m.drift = zero_self(dim);
        m.diffusion = zero_diffusion(dim);
        m.eta_spec = ExogenousSpec::none();
        m.init_spec = make_init_spec(params, dim);
        return m;
    }
    if (name == "kuramoto_like") {
        const double kappa = params.get("kappa", 1.0);
        const double sigma_w = params.get("sigma_w", 0.0);
        CoefficientModel m;
        m.dim = 1;
        m.name = "kuramoto_like";
        m.coupling = [kappa](double, double, double, std::span<const double> z,
                             std::span<const double> y, std::span<double> out) {
            out[0] = kappa * std::sin(z[0] - y[0]);
        };
        m.drift = zero_self(1);
        m.diffusion = [sigma_w](double, double, std::span<const double>, std::span<const double>,
                                Mat& out) { out(0, 0) = sigma_w; };
        m.eta_spec = ExogenousSpec::none();
        m.init_spec = make_init_spec(params, 1);
        return m;
    }
    if (name == "ou_driven") {
        const double damping = params.get("a", 1.0);
        const double sigma_w = params.get("sigma_w", 0.0);
        CoefficientModel m;
        m.dim = dim;
        m.name = "ou_driven";
        m.coupling_affine_in_z = true;
        m.coupling = zero_pair(dim);
        m.drift = [damping](double, double, std::span<const double> eta, std::span<const double> y,
                            std::span<double> out) {
            for (size_t i = 0; i < out.size(); ++i) out[i] = -damping * y[i] + eta[i];
        };
        m.diffusion = [sigma_w, dim](double, double, std::span<const double>, std::span<const double>,
                                     Mat& out) {
            std::fill(out.a.begin(), out.a.end(), 0.0);
            for (int i = 0; i < dim; ++i) out(i, i) = sigma_w;
        };
        m.eta_spec = ExogenousSpec::ou(params.get("theta", 1.0), params.get("sigma", 1.0));
        m.init_spec = make_init_spec(params, dim);
        return m;
    }
    throw std::invalid_argument("unknown model preset '" + name + "'");
}

}  // namespace gmf
