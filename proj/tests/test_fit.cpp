#include <doctest.h>

#include <cmath>

#include <Eigen/Dense>

#include "common.hpp"
#include "joint_model.hpp"
#include "oracles.hpp"
#include "rng.hpp"
#include "scenario.hpp"

using namespace mbsma;

namespace {

// EM for the gaussian random-intercept+slope linear mixed model; independent
// of the joint-model code path (direct conjugate updates).
struct EmLmm {
    Eigen::VectorXd beta;
    double sigma2 = 1.0;
    Eigen::MatrixXd b_cov;
};

EmLmm em_lmm(const Dataset& ds, int marker_id, int max_iter = 20000, double tol = 1e-11) {
    struct Block {
        Eigen::MatrixXd w, z;
        Eigen::VectorXd y;
    };
    std::vector<Block> blocks;
    int n_total = 0;
    for (int si = 0; si < ds.n_subjects(); ++si) {
        std::vector<double> times, values;
        for (int i = ds.obs_begin[si]; i < ds.obs_end[si]; ++i)
            if (ds.observations[i].marker_id == marker_id) {
                times.push_back(ds.observations[i].time);
                values.push_back(ds.observations[i].value);
            }
        if (times.empty()) continue;
        Block b;
        const int n = static_cast<int>(times.size());
        b.w.resize(n, 2);
        b.z.resize(n, 2);
        b.y.resize(n);
        for (int j = 0; j < n; ++j) {
            b.w(j, 0) = b.z(j, 0) = 1.0;
            b.w(j, 1) = b.z(j, 1) = times[j];
            b.y[j] = values[j];
        }
        n_total += n;
        blocks.push_back(std::move(b));
    }

    EmLmm fit;
    fit.beta = Eigen::VectorXd::Zero(2);
    fit.sigma2 = 1.0;
    fit.b_cov = Eigen::MatrixXd::Identity(2, 2);

    for (int iter = 0; iter < max_iter; ++iter) {
        const Eigen::MatrixXd b_inv = fit.b_cov.inverse();
        std::vector<Eigen::VectorXd> mu(blocks.size());
        std::vector<Eigen::MatrixXd> cov(blocks.size());
        for (size_t i = 0; i < blocks.size(); ++i) {
            const auto& b = blocks[i];
            cov[i] = (b.z.transpose() * b.z / fit.sigma2 + b_inv).inverse();
            mu[i] = cov[i] * b.z.transpose() * (b.y - b.w * fit.beta) / fit.sigma2;
        }

        Eigen::MatrixXd wtw = Eigen::MatrixXd::Zero(2, 2);
        Eigen::VectorXd wty = Eigen::VectorXd::Zero(2);
        for (size_t i = 0; i < blocks.size(); ++i) {
            wtw += blocks[i].w.transpose() * blocks[i].w;
            wty += blocks[i].w.transpose() * (blocks[i].y - blocks[i].z * mu[i]);
        }
        const Eigen::VectorXd beta_new = wtw.ldlt().solve(wty);

        double rss = 0.0;
        Eigen::MatrixXd b_new = Eigen::MatrixXd::Zero(2, 2);
        for (size_t i = 0; i < blocks.size(); ++i) {
            const Eigen::VectorXd r = blocks[i].y - blocks[i].w * beta_new - blocks[i].z * mu[i];
            rss += r.squaredNorm() + (blocks[i].z * cov[i] * blocks[i].z.transpose()).trace();
            b_new += mu[i] * mu[i].transpose() + cov[i];
        }
        const double sigma2_new = rss / n_total;
        b_new /= static_cast<double>(blocks.size());

        const double delta = (beta_new - fit.beta).cwiseAbs().maxCoeff() + std::abs(sigma2_new - fit.sigma2) +
                             (b_new - fit.b_cov).cwiseAbs().maxCoeff();
        fit.beta = beta_new;
        fit.sigma2 = sigma2_new;
        fit.b_cov = b_new;
        if (delta < tol) break;
    }
    return fit;
}

Dataset lmm_dataset(int n, uint64_t seed) {
    Rng rng(seed);
    Dataset d;
    d.markers = {{"m1", Family::gaussian}};
    const Eigen::Matrix2d b_true = (Eigen::Matrix2d() << 0.9, 0.3, 0.3, 0.5).finished();
    const Eigen::Matrix2d l = b_true.llt().matrixL();
    for (int i = 0; i < n; ++i) {
        SurvivalRecord r;
        r.subject_id = "s" + std::to_string(1000 + i);
        r.observed_time = 2.0;
        r.event = i % 4 == 0 ? 1 : 0;
        r.covariates = Eigen::VectorXd::Zero(0);
        d.subjects.push_back(r);
        const Eigen::Vector2d b = l * Eigen::Vector2d(rng.normal(), rng.normal());
        for (int j = 0; j < 5; ++j) {
            const double t = 0.4 * j;
            const double mean = (0.5 + b[0]) + (-1.0 + b[1]) * t;
            d.observations.push_back({r.subject_id, 1, t, mean + 0.6 * rng.normal()});
        }
    }
    return validate(d);
}

}  // namespace

TEST_CASE("fit with null association matches the EM mixed-model oracle") {
    Dataset ds = lmm_dataset(150, 21);

    ModelSpec spec;
    MarkerDesign mk;
    mk.marker_id = 1;
    spec.markers = {mk};

    FitOptions opts;
    opts.fix_alpha_zero = true;
    opts.grad_tol = 1e-4;
    opts.compute_covariance = false;
    FittedJointModel fitted = fit(ds, spec, opts);
    CHECK(fitted.converged);

    EmLmm oracle = em_lmm(ds, 1);

    auto rel = [](double a, double b) { return std::abs(a - b) / std::max(std::abs(b), 0.05); };
    CHECK(rel(fitted.estimate.beta[0][0], oracle.beta[0]) < 1e-4);
    CHECK(rel(fitted.estimate.beta[0][1], oracle.beta[1]) < 1e-4);
    CHECK(rel(fitted.estimate.sigma2[0], oracle.sigma2) < 1e-4);
    CHECK(rel(fitted.estimate.B(0, 0), oracle.b_cov(0, 0)) < 1e-4);
    CHECK(rel(fitted.estimate.B(0, 1), oracle.b_cov(0, 1)) < 1e-4);
    CHECK(rel(fitted.estimate.B(1, 1), oracle.b_cov(1, 1)) < 1e-4);
}

TEST_CASE("fit refuses a dataset with no events") {
    Dataset ds = lmm_dataset(20, 22);
    for (auto& s : ds.subjects) s.event = 0;
    ModelSpec spec;
    MarkerDesign mk;
    mk.marker_id = 1;
    spec.markers = {mk};
    CHECK_THROWS_WITH_AS(fit(ds, spec), doctest::Contains("no events"), Error);
}

TEST_CASE("optimizer trace is nondecreasing and the model serializes") {
    ScenarioConfig cfg = scenario_registry("I.1");
    cfg.families.resize(1);
    cfg.beta.resize(1);
    cfg.sigma2.resize(1);
    cfg.b_cov = cfg.b_cov.topLeftCorner(2, 2).eval();
    cfg.alpha0 = Eigen::VectorXd::Constant(1, -0.5);
    cfg.alpha1 = Eigen::VectorXd::Zero(1);
    cfg.n_subjects = 120;
    GeneratedData gen = generate_dataset(cfg, 77);

    ModelSpec spec;
    MarkerDesign mk;
    mk.marker_id = 1;
    spec.markers = {mk};
    spec.knots = 3;
    FittedJointModel fitted = fit(gen.dataset, spec);

    for (size_t i = 1; i < fitted.trace.size(); ++i) CHECK(fitted.trace[i] >= fitted.trace[i - 1]);
    CHECK(fitted.loglik == fitted.trace.back());

    const std::string path = "/tmp/mbsma_model_roundtrip.json";
    save_model(fitted, path);
    FittedJointModel back = load_model(path);
    CHECK(back.loglik == fitted.loglik);
    CHECK(back.model_id == fitted.model_id);
    CHECK((back.theta - fitted.theta).cwiseAbs().maxCoeff() == 0.0);
    CHECK((back.covariance - fitted.covariance).cwiseAbs().maxCoeff() == 0.0);
    CHECK(back.model.knot_bounds == fitted.model.knot_bounds);

    ResolvedModel rm = back.model;
    CHECK(joint_loglik(gen.dataset, rm, back.estimate, fitted.quad_points) ==
          doctest::Approx(fitted.loglik).epsilon(1e-10));
}

TEST_CASE("fit handles a binary marker") {
    ScenarioConfig cfg = scenario_registry("M.1");
    cfg.n_subjects = 100;
    GeneratedData gen = generate_dataset(cfg, 5);

    ModelSpec spec;
    MarkerDesign mk;
    mk.marker_id = 3;  // the binary one
    spec.markers = {mk};
    spec.knots = 2;
    FitOptions opts;
    opts.max_iter = 150;
    FittedJointModel fitted = fit(gen.dataset, spec, opts);
    CHECK(std::isfinite(fitted.loglik));
    CHECK(fitted.estimate.sigma2[0] == 1.0);  // binary family has unit dispersion
}
