#include <doctest.h>

#include <cmath>
#include <sstream>

#include "gmf/meanfield.hpp"

using namespace gmf;

namespace {

ModelParams linear_init_params() {
    ModelParams p;
    p.str["init"] = "linear_field";
    p.num["init_a"] = 0.0;
    p.num["init_b"] = 1.0;
    return p;
}

SimConfig small_sim(int k, double horizon, uint64_t seed) {
    SimConfig cfg;
    cfg.horizon = horizon;
    cfg.steps = k;
    cfg.particles = 1;
    cfg.dim = 1;
    cfg.seed = seed;
    return cfg;
}

}  // namespace

TEST_SUITE("meanfield") {

TEST_CASE("decoupled models freeze after the first round") {
    // F == 0: round 1 already solves the fixed point; with common random
    // numbers round 2 reproduces it bitwise and the residual hits zero.
    ModelParams p = linear_init_params();
    p.num["a"] = 1.0;
    p.num["sigma_w"] = 0.4;
    p.num["theta"] = 1.0;
    p.num["sigma"] = 0.5;
    auto model = make_model("ou_driven", p);
    model.coupling_affine_in_z = false;  // exercise the generic quadrature path

    MeanFieldConfig mf_cfg;
    mf_cfg.label_grid_size = 3;
    mf_cfg.samples_per_node = 16;
    mf_cfg.picard_max_iters = 4;
    mf_cfg.picard_tol = 1e-300;  // never satisfied: run all rounds
    const SimConfig sim = small_sim(32, 1.0, 99);
    const auto mf = picard_solve(mf_cfg, sim, model, constant_graphon(1.0));

    REQUIRE(mf.residual_history.size() >= 2);
    CHECK(mf.residual_history[1] == 0.0);  // rounds 1 and 2 identical

    // independent decoupled oracle: hand-rolled EM per (node, sample) with
    // the same streams, no solver machinery
    BrownianSource brownian(sim.seed);
    OuSampler ou{1.0, 0.5};
    std::vector<double> incr, eta;
    for (int a = 0; a < mf.nodes(); ++a) {
        const double label = mf.labels[a];
        for (int s = 0; s < mf.samples(); ++s) {
            brownian.increments(label, s, sim.horizon, 1, sim.steps, sim.steps, incr);
            ou.sample_grid(stream_key(sim.seed, label, s, StreamDomain::exogenous), sim.horizon,
                           sim.steps, 1, eta);
            double z = label;  // linear_field init
            const double dt = sim.horizon / sim.steps;
            const auto path = mf.path(a, s);
            CHECK(path[0] == z);
            for (int m = 0; m < sim.steps; ++m) {
                const double g = -1.0 * z + eta[m];
                const double mf_term = 0.0;
                z = z + dt * (g + mf_term) + 0.4 * incr[m];
                CHECK(path[m + 1] == z);  // bitwise
            }
        }
    }
}

TEST_CASE("consensus mean-field matches the closed-form flow") {
    // A == 1, F = alpha1 (z - y), deterministic init z_p(0) = p, H = 0:
    // node means follow dz_p = (zbar - z_p) dt with zbar = 1/2 on the
    // midpoint grid, so z_p(t) = 1/2 + (p - 1/2) e^{-t}.
    const auto model = make_model("consensus_only", linear_init_params());
    MeanFieldConfig mf_cfg;
    mf_cfg.label_grid_size = 8;
    mf_cfg.samples_per_node = 4;
    mf_cfg.picard_max_iters = 12;
    mf_cfg.picard_tol = 1e-10;
    const double horizon = 2.0;
    const auto mf = picard_solve(mf_cfg, small_sim(256, horizon, 5), model, constant_graphon(1.0));
    CHECK(mf.converged);
    for (int a = 0; a < mf.nodes(); ++a) {
        const double p = mf.labels[a];
        const auto path = mf.path(a, 0);
        for (int m = 0; m <= 256; m += 64) {
            const double t = horizon * m / 256.0;
            const double exact = 0.5 + (p - 0.5) * std::exp(-t);
            CHECK(std::fabs(path[m] - exact) <= 0.02 * std::max(0.1, std::fabs(exact)));
        }
    }
}

TEST_CASE("residuals contract over early rounds") {
    // the product graphon keeps the mean flow moving every round, so all four
    // rounds produce a nonzero, shrinking residual
    const auto model = make_model("consensus_only", linear_init_params());
    MeanFieldConfig mf_cfg;
    mf_cfg.label_grid_size = 8;
    mf_cfg.samples_per_node = 4;
    mf_cfg.picard_max_iters = 4;
    mf_cfg.picard_tol = 1e-300;
    const auto mf = picard_solve(mf_cfg, small_sim(128, 1.0, 5), model, product_graphon());
    REQUIRE(mf.residual_history.size() >= 2);
    for (size_t r = 1; r < mf.residual_history.size(); ++r)
        CHECK(mf.residual_history[r] <= mf.residual_history[r - 1]);
    CHECK(mf.residual_history[1] < mf.residual_history[0]);
}

TEST_CASE("symmetric consensus hits a bitwise fixed point in two rounds") {
    // with A == 1 and a dyadic-symmetric init field the frozen mean flow is
    // exactly 1/2 every round, so round 2 reproduces round 1 bit for bit
    const auto model = make_model("consensus_only", linear_init_params());
    MeanFieldConfig mf_cfg;
    mf_cfg.label_grid_size = 8;
    mf_cfg.samples_per_node = 4;
    mf_cfg.picard_max_iters = 6;
    mf_cfg.picard_tol = 1e-300;
    const auto mf = picard_solve(mf_cfg, small_sim(128, 1.0, 5), model, constant_graphon(1.0));
    CHECK(mf.converged);
    CHECK(mf.residual_history.back() == 0.0);
}

TEST_CASE("decoupled sgd nodes solve their own gradient flow") {
    // alpha1 = 0, Sigma1 = 0, Q = I, c(p) = p: dz = -(z - p) dt per node,
    // z_p(t) = p + (z_p(0) - p) e^{-t}; start from z_p(0) = 0.
    ModelParams p;
    p.num["alpha1"] = 0.0;
    p.num["alpha2"] = 1.0;
    p.num["sigma1"] = 0.0;
    p.str["init"] = "point";
    p.num["init_value"] = 0.0;
    const auto model = make_model("sgd_quadratic", p);
    MeanFieldConfig mf_cfg;
    mf_cfg.label_grid_size = 6;
    mf_cfg.samples_per_node = 2;
    mf_cfg.picard_max_iters = 6;
    mf_cfg.picard_tol = 1e-12;
    const double horizon = 1.5;
    const auto mf = picard_solve(mf_cfg, small_sim(512, horizon, 8), model, constant_graphon(1.0));
    for (int a = 0; a < mf.nodes(); ++a) {
        const double label = mf.labels[a];
        const double exact = label + (0.0 - label) * std::exp(-horizon);
        const double got = mf.path(a, 0)[512];
        CHECK(std::fabs(got - exact) <= 0.01 * std::max(0.1, std::fabs(exact)));
    }
}

TEST_CASE("sample mixture draws from the stored ensembles") {
    const auto model = make_model("consensus_only", linear_init_params());
    MeanFieldConfig mf_cfg;
    mf_cfg.label_grid_size = 1;
    mf_cfg.samples_per_node = 5;
    mf_cfg.picard_max_iters = 3;
    mf_cfg.picard_tol = 1e-9;
    const auto mf = picard_solve(mf_cfg, small_sim(16, 1.0, 4), model, constant_graphon(1.0));

    // P = 1: plain resampling of node 1's ensemble
    const auto mix = sample_mixture(mf, 12, 77);
    CHECK(mix.count() == 12);
    for (int i = 0; i < mix.count(); ++i) {
        bool found = false;
        for (int s = 0; s < mf.samples(); ++s) {
            const auto stored = mf.path(0, s);
            const auto drawn = mix.path(i);
            if (std::equal(stored.begin(), stored.end(), drawn.begin())) found = true;
        }
        CHECK(found);
    }
    CHECK_THROWS_AS(sample_mixture(mf, 0, 1), std::invalid_argument);
}

TEST_CASE("mixture of identical deterministic paths is a point mass") {
    ModelParams p;
    p.str["init"] = "point";
    p.num["init_value"] = 0.25;
    p.num["alpha1"] = 1.0;
    const auto model = make_model("consensus_only", p);
    MeanFieldConfig mf_cfg;
    mf_cfg.label_grid_size = 4;
    mf_cfg.samples_per_node = 3;
    mf_cfg.picard_max_iters = 3;
    mf_cfg.picard_tol = 1e-9;
    const auto mf = picard_solve(mf_cfg, small_sim(8, 1.0, 2), model, constant_graphon(1.0));
    const auto mix = sample_mixture(mf, mf.nodes() * mf.samples(), 5);
    const auto first = mix.path(0);
    for (int i = 1; i < mix.count(); ++i) {
        const auto cur = mix.path(i);
        CHECK(std::equal(first.begin(), first.end(), cur.begin()));
    }
}

TEST_CASE("mixture time-0 mean approximates the init-field mean") {
    const auto model = make_model("consensus_only", linear_init_params());
    MeanFieldConfig mf_cfg;
    mf_cfg.label_grid_size = 16;
    mf_cfg.samples_per_node = 4;
    mf_cfg.picard_max_iters = 4;
    mf_cfg.picard_tol = 1e-6;
    const auto mf = picard_solve(mf_cfg, small_sim(32, 1.0, 6), model, constant_graphon(1.0));
    const int draws = 4000;
    const auto mix = sample_mixture(mf, draws, 11);
    double mean = 0.0;
    for (int i = 0; i < draws; ++i) mean += mix.path(i)[0] / draws;
    // node labels are uniform on midpoints: sd of one draw < 0.29
    CHECK(std::fabs(mean - 0.5) <= 3.0 * 0.29 / std::sqrt(static_cast<double>(draws)));
}

TEST_CASE("node marginals follow the nearest-label rule") {
    const auto model = make_model("consensus_only", linear_init_params());
    MeanFieldConfig mf_cfg;
    mf_cfg.label_grid_size = 4;  // labels 0.125, 0.375, 0.625, 0.875
    mf_cfg.samples_per_node = 3;
    mf_cfg.picard_max_iters = 3;
    mf_cfg.picard_tol = 1e-9;
    const auto mf = picard_solve(mf_cfg, small_sim(8, 1.0, 3), model, constant_graphon(1.0));

    // deterministic init: marginal at t = 0 is a Dirac at the node label
    const auto dirac = node_marginal(mf, 0.2, 0.0);
    for (int s = 0; s < dirac.count(); ++s) CHECK(dirac.point(s)[0] == 0.125);

    // ties resolve toward the smaller label: 0.25 sits between nodes 1 and 2
    const auto tie = node_marginal(mf, 0.25, 0.0);
    CHECK(tie.point(0)[0] == 0.125);

    CHECK(mf.nearest_node(0.4) == 1);
    CHECK(mf.nearest_node(0.0) == 0);
    CHECK(mf.nearest_node(1.0) == 3);

    CHECK_THROWS_AS(node_marginal(mf, 0.5, 0.3333), std::domain_error);  // off-grid time
    CHECK_THROWS_AS(node_marginal(mf, 1.5, 0.0), std::domain_error);
}

TEST_CASE("adjacent node marginals tighten as the grid refines") {
    // continuity of p -> law: max adjacent-node W2 at the final time shrinks
    // as P doubles (deterministic smooth field, so this is exact geometry)
    ModelParams p;
    p.num["alpha1"] = 1.0;
    p.num["alpha2"] = 1.0;
    p.num["sigma1"] = 0.0;
    p.str["init"] = "linear_field";
    p.num["init_a"] = 0.0;
    p.num["init_b"] = 1.0;
    const auto model = make_model("sgd_quadratic", p);
    double prev = 1e9;
    for (int grid : {4, 8, 16}) {
        MeanFieldConfig mf_cfg;
        mf_cfg.label_grid_size = grid;
        mf_cfg.samples_per_node = 2;
        mf_cfg.picard_max_iters = 8;
        mf_cfg.picard_tol = 1e-8;
        const auto mf = picard_solve(mf_cfg, small_sim(64, 1.0, 9), model, cosine_graphon());
        double worst = 0.0;
        for (int a = 0; a + 1 < mf.nodes(); ++a) {
            const auto ma = mf.node_marginal_at(a, 64);
            const auto mb = mf.node_marginal_at(a + 1, 64);
            worst = std::max(worst, wasserstein_p(ma, mb, 2));
        }
        CHECK(worst <= prev * 1.15);
        prev = worst;
    }
}

TEST_CASE("summary and marginal exports") {
    const auto model = make_model("consensus_only", linear_init_params());
    MeanFieldConfig mf_cfg;
    mf_cfg.label_grid_size = 2;
    mf_cfg.samples_per_node = 2;
    mf_cfg.picard_max_iters = 3;
    mf_cfg.picard_tol = 1e-9;
    const auto mf = picard_solve(mf_cfg, small_sim(4, 1.0, 1), model, constant_graphon(1.0));
    std::ostringstream sum, marg;
    mf.write_summary_csv(sum);
    mf.write_marginal_csv(marg);
    CHECK(sum.str().substr(0, 25) == "node,iterations,residual\n");
    CHECK(marg.str().substr(0, 34) == "node,label,sample,component,value\n");
}

}  // TEST_SUITE
