#include <doctest.h>

#include <cmath>

#include "gmf/model.hpp"

using namespace gmf;

namespace {

QuadraticCostFamily identity_costs_1d() {
    // V(p,z) = (z - p)^2 / 2
    return QuadraticCostFamily::isotropic(1, 1.0, [](double p) { return Vec{p}; });
}

}  // namespace

TEST_SUITE("model") {

TEST_CASE("sgd coupling is alpha1 (z - y)") {
    auto m = sgd_model(identity_costs_1d(), GainSchedule::constants(2.0, 1.0),
                       Mat::scaled_identity(1, 0.0), InitialLawSpec::deterministic({0.0}));
    Vec out(1);
    const Vec z = {1.0}, y = {0.0};
    m.coupling(0.3, 0.1, 0.9, z, y, std::span<double>(out));
    CHECK(out[0] == 2.0);
}

TEST_CASE("sgd drift is minus alpha2 grad V") {
    auto m = sgd_model(identity_costs_1d(), GainSchedule::constants(1.0, 1.0),
                       Mat::scaled_identity(1, 0.0), InitialLawSpec::deterministic({0.0}));
    Vec out(1);
    const Vec y = {0.5}, eta = {0.0};
    m.drift(0.0, 0.25, eta, y, std::span<double>(out));
    CHECK(out[0] == doctest::Approx(-0.25).epsilon(1e-15));
}

TEST_CASE("sgd diffusion is minus alpha2 Sigma1") {
    auto costs = QuadraticCostFamily::isotropic(2, 1.0, [](double) { return Vec{0.0, 0.0}; });
    auto m = sgd_model(costs, GainSchedule::constants(1.0, 3.0), Mat::identity(2),
                       InitialLawSpec::deterministic({0.0, 0.0}));
    Mat h(2, 2);
    const Vec y = {0.0, 0.0}, eta = {0.0, 0.0};
    m.diffusion(0.0, 0.5, eta, y, h);
    CHECK(h(0, 0) == -3.0);
    CHECK(h(1, 1) == -3.0);
    CHECK(h(0, 1) == 0.0);
}

TEST_CASE("sgd model rejects dimension mismatches") {
    CHECK_THROWS_AS(sgd_model(identity_costs_1d(), GainSchedule::constants(1, 1), Mat::identity(2),
                              InitialLawSpec::deterministic({0.0})),
                    std::invalid_argument);
    CHECK_THROWS_AS(sgd_model(identity_costs_1d(), GainSchedule::constants(1, 1), Mat::identity(1),
                              InitialLawSpec::deterministic({0.0, 0.0})),
                    std::invalid_argument);
}

TEST_CASE("zero gains freeze the sgd vector field") {
    // the Eq-shape check: with both gains zero, F = G = H = 0 pointwise
    auto gains = GainSchedule{[](double) { return 0.0; }, [](double) { return 0.0; }};
    auto m = sgd_model(identity_costs_1d(), gains, Mat::scaled_identity(1, 2.0),
                       InitialLawSpec::deterministic({0.0}));
    CounterStream st(plain_key(3, 0, StreamDomain::probe));
    Vec f(1), g(1);
    Mat h(1, 1);
    for (int i = 0; i < 32; ++i) {
        const Vec z = {st.normal()}, y = {st.normal()}, eta = {st.normal()};
        m.coupling(st.uniform(), st.uniform(), st.uniform(), z, y, std::span<double>(f));
        m.drift(st.uniform(), st.uniform(), eta, y, std::span<double>(g));
        m.diffusion(st.uniform(), st.uniform(), eta, y, h);
        CHECK(f[0] == 0.0);
        CHECK(g[0] == 0.0);
        CHECK(h(0, 0) == 0.0);
    }
}

TEST_CASE("quadratic gradient matches finite differences") {
    auto costs = QuadraticCostFamily::isotropic(2, 1.7, [](double p) { return Vec{p, -p}; });
    CounterStream st(plain_key(8, 0, StreamDomain::probe));
    const double h = 1e-5;
    for (int i = 0; i < 50; ++i) {
        const double p = st.uniform();
        Vec z = {2.0 * st.normal(), 2.0 * st.normal()};
        Vec grad(2);
        costs.gradient(p, z, std::span<double>(grad));
        double z_sq = z[0] * z[0] + z[1] * z[1];
        for (int d = 0; d < 2; ++d) {
            Vec zp = z, zm = z;
            zp[d] += h;
            zm[d] -= h;
            const double fd = (costs.value(p, zp) - costs.value(p, zm)) / (2.0 * h);
            CHECK(std::fabs(grad[d] - fd) <= 10.0 * h * (1.0 + z_sq));
        }
    }
}

TEST_CASE("global minimizer on a midpoint grid") {
    // Q = I, c(p) = p: minimizer of the integral is 1/2
    auto costs = identity_costs_1d();
    const Vec z1 = global_minimizer(costs, midpoint_grid(1000));
    CHECK(z1[0] == doctest::Approx(0.5).epsilon(1e-6));

    auto constant = QuadraticCostFamily::isotropic(1, 2.0, [](double) { return Vec{0.75}; });
    CHECK(global_minimizer(constant, midpoint_grid(10))[0] == doctest::Approx(0.75).epsilon(1e-15));
}

TEST_CASE("global minimizer is grid-stable under refinement") {
    QuadraticCostFamily costs;
    costs.dim = 1;
    costs.target = [](double p) { return Vec{std::sin(3.0 * p)}; };
    costs.quadratic = [](double p) { return Mat::scaled_identity(1, 1.0 + p * p); };
    // fit C on the coarsest pair, then doubling must stay within C / grid
    const double z16 = global_minimizer(costs, midpoint_grid(16))[0];
    const double z32 = global_minimizer(costs, midpoint_grid(32))[0];
    const double c_fit = std::fabs(z32 - z16) * 16.0;
    int grid = 32;
    double prev = z32;
    for (int round = 0; round < 4; ++round) {
        grid *= 2;
        const double cur = global_minimizer(costs, midpoint_grid(grid))[0];
        CHECK(std::fabs(cur - prev) <= c_fit / (grid / 2) + 1e-12);
        prev = cur;
    }
}

TEST_CASE("global minimizer with label-dependent curvature") {
    // Q(p) = 1 + p, c(p) = p: the limit is (integral (1+p)p) / (integral 1+p) = 5/9.
    QuadraticCostFamily costs;
    costs.dim = 1;
    costs.target = [](double p) { return Vec{p}; };
    costs.quadratic = [](double p) { return Mat::scaled_identity(1, 1.0 + p); };

    // independent Riemann oracle at 1e6 cells
    double num = 0.0, den = 0.0;
    const int cells = 1000000;
    for (int i = 0; i < cells; ++i) {
        const double p = (i + 0.5) / cells;
        num += (1.0 + p) * p;
        den += 1.0 + p;
    }
    const double oracle = num / den;
    CHECK(oracle == doctest::Approx(5.0 / 9.0).epsilon(1e-9));
    CHECK(global_minimizer(costs, midpoint_grid(20000))[0] == doctest::Approx(oracle).epsilon(1e-6));

    QuadraticCostFamily degenerate;
    degenerate.dim = 1;
    degenerate.target = [](double) { return Vec{0.0}; };
    degenerate.quadratic = [](double) { return Mat::scaled_identity(1, 0.0); };
    CHECK_THROWS_AS(global_minimizer(degenerate, midpoint_grid(4)), std::runtime_error);
}

TEST_CASE("assumption probes recover known lipschitz constants") {
    auto m = sgd_model(identity_costs_1d(), GainSchedule::constants(1.0, 1.0),
                       Mat::scaled_identity(1, 0.5), InitialLawSpec::deterministic({0.0}));
    const auto rep = probe_assumptions(m, 2000, 99);
    // G = -(y - p): Lipschitz constant in y is exactly sup ||Q|| = 1
    CHECK(rep.lip_G_y == doctest::Approx(1.0).epsilon(0.10));
    // F = z - y in n = 1: the additive-form constant is 1
    CHECK(rep.lip_F == doctest::Approx(1.0).epsilon(0.10));
    // H constant in (eta, y)
    CHECK(rep.lip_H == 0.0);
    CHECK(rep.probes == 2000);
}

TEST_CASE("growth thresholds flag violations") {
    auto m = sgd_model(identity_costs_1d(), GainSchedule::constants(1.0, 1.0),
                       Mat::scaled_identity(1, 0.0), InitialLawSpec::deterministic({0.0}));
    ProbeThresholds strict;
    strict.c1 = 1e-6;
    CHECK_FALSE(probe_assumptions(m, 200, 1, strict).growth_ok);
    ProbeThresholds loose;
    loose.c1 = 100.0;
    loose.c2 = 100.0;
    CHECK(probe_assumptions(m, 200, 1, loose).growth_ok);
}

TEST_CASE("gain schedules must stay positive") {
    CHECK_NOTHROW(GainSchedule::constants(1.0, 0.5).validate(10.0));
    GainSchedule decaying{[](double) { return 1.0; }, [](double t) { return 1.0 - t; }};
    CHECK_THROWS_AS(decaying.validate(2.0), std::runtime_error);
}

TEST_CASE("initial law draws") {
    const auto point = InitialLawSpec::deterministic({1.5});
    CHECK(point.draw(0.3, 123)[0] == 1.5);

    const auto field = InitialLawSpec::deterministic_field([](double p) { return Vec{2.0 * p}; });
    CHECK(field.draw(0.25, 9)[0] == 0.5);

    const auto gauss = InitialLawSpec::gaussian([](double) { return Vec{0.0}; }, Mat::scaled_identity(1, 4.0));
    // moment probe: E||z||^{2+u} finite and the sample variance is near 4
    double sum_sq = 0.0, sum_pow = 0.0;
    const int draws = 20000;
    for (int i = 0; i < draws; ++i) {
        const double v = gauss.draw(0.5, plain_key(4, i, StreamDomain::initial))[0];
        sum_sq += v * v;
        sum_pow += std::pow(std::fabs(v), 2.5);
    }
    CHECK(sum_sq / draws == doctest::Approx(4.0).epsilon(0.05));
    CHECK(std::isfinite(sum_pow / draws));
}

TEST_CASE("exogenous spec zero-mean contract") {
    CHECK(ExogenousSpec::none().is_zero());
    const auto ou = ExogenousSpec::ou(2.0, 1.0);
    CHECK_FALSE(ou.is_zero());
    CHECK_THROWS_AS(ExogenousSpec::ou(-1.0, 1.0), std::invalid_argument);
}

TEST_CASE("presets resolve and validate") {
    ModelParams params;
    params.num["alpha1"] = 4.0;
    const auto consensus = make_model("consensus_only", params);
    consensus.validate();
    CHECK(consensus.coupling_affine_in_z);

    const auto kuramoto = make_model("kuramoto_like", {});
    kuramoto.validate();
    CHECK_FALSE(kuramoto.coupling_affine_in_z);

    const auto ou = make_model("ou_driven", {});
    ou.validate();
    CHECK_FALSE(ou.eta_spec.is_zero());

    CHECK_THROWS_AS(make_model("not_a_model", {}), std::invalid_argument);
}

}  // TEST_SUITE
