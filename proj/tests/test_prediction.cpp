#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "common.hpp"
#include "joint_model.hpp"
#include "oracles.hpp"
#include "prediction.hpp"
#include "rng.hpp"

using namespace mbsma;

namespace {

// hand-built fitted model: no refitting needed for prediction tests
struct Rig {
    Dataset ds;
    FittedJointModel fitted;
};

Rig make_rig(bool random_slope, double alpha, uint64_t seed, int n_subjects = 6) {
    Rng rng(seed);
    Dataset d;
    d.markers = {{"m1", Family::gaussian}};
    for (int i = 0; i < n_subjects; ++i) {
        SurvivalRecord r;
        r.subject_id = "s" + std::to_string(100 + i);
        r.observed_time = 1.2 + rng.uniform();
        r.event = rng.bernoulli(0.6);
        r.covariates = Eigen::VectorXd::Zero(0);
        d.subjects.push_back(r);
        for (int j = 0; j < 4; ++j)
            d.observations.push_back({r.subject_id, 1, 0.3 * j, 0.3 - 0.4 * (0.3 * j) + 0.5 * rng.normal()});
    }

    Rig rig;
    rig.ds = validate(d);
    ModelSpec spec;
    MarkerDesign mk;
    mk.marker_id = 1;
    mk.random_slope = random_slope;
    spec.markers = {mk};
    spec.knots = 2;
    rig.fitted.model = resolve_model(rig.ds, spec);

    ParameterVector p;
    p.beta = {Eigen::Vector2d(0.3, -0.4)};
    p.sigma2 = {0.25};
    const int dim = rig.fitted.model.re_dim;
    p.B = Eigen::MatrixXd::Identity(dim, dim) * 0.6;
    if (dim == 2) {
        p.B(0, 1) = p.B(1, 0) = 0.1;
        p.B(1, 1) = 0.3;
    }
    p.gamma = Eigen::VectorXd::Zero(0);
    p.alpha = Eigen::VectorXd::Constant(1, alpha);
    p.lambda0 = Eigen::VectorXd::Constant(rig.fitted.model.n_pieces(), 0.2);

    ParameterLayout layout(rig.fitted.model);
    rig.fitted.estimate = p;
    rig.fitted.theta = layout.pack(p);
    rig.fitted.covariance = Eigen::MatrixXd::Zero(layout.size(), layout.size());
    rig.fitted.converged = true;
    rig.fitted.loglik = 0.0;
    rig.fitted.model_id = "jm1:m1";
    return rig;
}

}  // namespace

TEST_CASE("draw_parameters") {
    Rig rig = make_rig(true, -0.4, 1);

    SUBCASE("zero covariance collapses all draws to the estimate") {
        ParameterDraws draws = draw_parameters(rig.fitted, 20, 7);
        for (const auto& p : draws.draws) {
            CHECK((p.B - rig.fitted.estimate.B).cwiseAbs().maxCoeff() < 1e-14);
            CHECK(p.alpha[0] == rig.fitted.estimate.alpha[0]);
        }
    }
    SUBCASE("same seed gives identical sequences") {
        ParameterLayout layout(rig.fitted.model);
        rig.fitted.covariance = Eigen::MatrixXd::Identity(layout.size(), layout.size()) * 0.01;
        ParameterDraws a = draw_parameters(rig.fitted, 10, 3);
        ParameterDraws b = draw_parameters(rig.fitted, 10, 3);
        for (int m = 0; m < 10; ++m) {
            CHECK(a.draws[m].alpha[0] == b.draws[m].alpha[0]);
            CHECK(a.draws[m].beta[0] == b.draws[m].beta[0]);
        }
        ParameterDraws c = draw_parameters(rig.fitted, 10, 4);
        CHECK(a.draws[0].alpha[0] != c.draws[0].alpha[0]);
    }
    SUBCASE("draw means concentrate at the estimate (CLT bound)") {
        ParameterLayout layout(rig.fitted.model);
        const int n = layout.size();
        rig.fitted.covariance = Eigen::MatrixXd::Identity(n, n) * 0.04;
        const int m = 10000;
        ParameterDraws draws = draw_parameters(rig.fitted, m, 5);
        double mean_alpha = 0.0;
        for (const auto& p : draws.draws) mean_alpha += p.alpha[0];
        mean_alpha /= m;
        CHECK(std::abs(mean_alpha - rig.fitted.estimate.alpha[0]) < 4.0 * 0.2 / std::sqrt((double)m));
    }
    SUBCASE("non-PSD covariance falls back to the diagonal with a flag") {
        ParameterLayout layout(rig.fitted.model);
        const int n = layout.size();
        Eigen::MatrixXd bad = Eigen::MatrixXd::Identity(n, n) * 0.01;
        bad(0, 1) = bad(1, 0) = 5.0;  // breaks positive definiteness
        rig.fitted.covariance = bad;
        ParameterDraws draws = draw_parameters(rig.fitted, 50, 6);
        CHECK(draws.diagonal_fallback);
    }
}

TEST_CASE("sample_random_effects recovers the prior with no data") {
    Rig rig = make_rig(true, 0.0, 2);
    // subject at s=0 with no observations: target is the prior N(0, B)
    Dataset d = rig.ds;
    d.observations.clear();
    SurvivalRecord extra;
    extra.subject_id = "zzz";
    extra.observed_time = 2.0;
    extra.event = 0;
    extra.covariates = Eigen::VectorXd::Zero(0);
    d.subjects.push_back(extra);
    d = validate(d);
    SubjectHistory h = truncate_history(d, std::string("zzz"), 0.0);

    const int n = 20000;
    Eigen::Vector2d mean = Eigen::Vector2d::Zero();
    double accept = 0.0;
    for (int i = 0; i < n; ++i) {
        MhSample s = sample_random_effects(rig.fitted.model, rig.fitted.estimate, h, 40, 1000 + i);
        mean += s.b;
        accept += s.accept_rate;
    }
    mean /= n;
    accept /= n;
    for (int j = 0; j < 2; ++j)
        CHECK(std::abs(mean[j]) < 4.0 * std::sqrt(rig.fitted.estimate.B(j, j) / n));
    CHECK(accept > 0.1);
    CHECK(accept < 0.95);
}

TEST_CASE("sample_random_effects matches the conjugate gaussian posterior") {
    Rig rig = make_rig(true, 0.0, 3);  // alpha = 0: survival factor constant in b
    const double s = 1.0;
    SubjectHistory h = truncate_history(rig.ds, std::string("s100"), s);

    // closed-form posterior: Sigma = (Z'Z/s2 + B^-1)^-1, mu = Sigma Z'(y-Wb)/s2
    Eigen::MatrixXd ztz = Eigen::MatrixXd::Zero(2, 2);
    Eigen::Vector2d ztr = Eigen::Vector2d::Zero();
    const auto& p = rig.fitted.estimate;
    for (const auto& o : h.marker_values) {
        Eigen::Vector2d z(1.0, o.time);
        const double r = o.value - (p.beta[0][0] + p.beta[0][1] * o.time);
        ztz += z * z.transpose() / p.sigma2[0];
        ztr += z * r / p.sigma2[0];
    }
    const Eigen::Matrix2d post_cov = (ztz + p.B.inverse()).inverse();
    const Eigen::Vector2d post_mean = post_cov * ztr;

    const int n = 20000;
    Eigen::Vector2d mean = Eigen::Vector2d::Zero();
    Eigen::Matrix2d second = Eigen::Matrix2d::Zero();
    for (int i = 0; i < n; ++i) {
        MhSample smp = sample_random_effects(rig.fitted.model, p, h, 60, 5000 + i);
        mean += smp.b;
        second += smp.b * smp.b.transpose();
    }
    mean /= n;
    const Eigen::Matrix2d cov = second / n - mean * mean.transpose();

    for (int j = 0; j < 2; ++j) {
        CHECK(std::abs(mean[j] - post_mean[j]) < 4.0 * std::sqrt(post_cov(j, j) / n));
        // var of a sample variance ~ 2 sigma^4 / n
        CHECK(std::abs(cov(j, j) - post_cov(j, j)) < 4.0 * post_cov(j, j) * std::sqrt(2.0 / n));
    }
}

TEST_CASE("1-D sampler passes a Kolmogorov check against the grid target") {
    Rig rig = make_rig(false, -0.5, 4);
    const double s = 1.0;
    SubjectHistory h = truncate_history(rig.ds, std::string("s101"), s);

    // grid-normalized target CDF
    const auto& model = rig.fitted.model;
    const auto& p = rig.fitted.estimate;
    std::vector<double> times, values;
    for (const auto& o : h.marker_values) {
        times.push_back(o.time);
        values.push_back(o.value);
    }
    auto log_target = [&](double b) {
        Eigen::VectorXd bv = Eigen::VectorXd::Constant(1, b);
        double lp = test::mvn_logpdf(bv, Eigen::VectorXd::Zero(1), p.B);
        lp += marker_loglik(model, p, 0, bv, times, values, Eigen::VectorXd());
        lp -= cumulative_hazard(model, p, bv, Eigen::VectorXd(), s);
        return lp;
    };
    const int g = 40000;
    const double lo = -8.0, hi = 8.0;
    std::vector<double> xs(g), cdf(g);
    double mx = -1e300;
    for (int i = 0; i < g; ++i) {
        xs[i] = lo + (hi - lo) * i / (g - 1);
        cdf[i] = log_target(xs[i]);
        mx = std::max(mx, cdf[i]);
    }
    double acc = 0.0;
    for (int i = 0; i < g; ++i) {
        acc += std::exp(cdf[i] - mx);
        cdf[i] = acc;
    }
    for (int i = 0; i < g; ++i) cdf[i] /= acc;

    const int n = 20000;
    std::vector<double> draws(n);
    for (int i = 0; i < n; ++i)
        draws[i] = sample_random_effects(model, p, h, 60, 91000 + i).b[0];
    std::sort(draws.begin(), draws.end());

    double ks = 0.0;
    for (int i = 0; i < n; ++i) {
        const double x = draws[i];
        const int gi = std::clamp(static_cast<int>((x - lo) / (hi - lo) * (g - 1)), 0, g - 1);
        ks = std::max(ks, std::abs((i + 1.0) / n - cdf[gi]));
    }
    CHECK(ks < 0.02);
}

TEST_CASE("conditional_survival_ratio") {
    Rig rig = make_rig(true, -0.4, 5);
    Eigen::VectorXd b(2);
    b << 0.2, -0.1;

    SUBCASE("t=0 gives 1") {
        CHECK(conditional_survival_ratio(rig.fitted.model, rig.fitted.estimate, b, Eigen::VectorXd(), 0.8, 0.0) ==
              1.0);
    }
    SUBCASE("constant hazard") {
        ParameterVector p = rig.fitted.estimate;
        p.alpha[0] = 0.0;
        p.lambda0.setConstant(0.2);
        CHECK(conditional_survival_ratio(rig.fitted.model, p, b, Eigen::VectorXd(), 1.0, 0.5) ==
              doctest::Approx(std::exp(-0.1)).epsilon(1e-13));
    }
    SUBCASE("matches the trapezoid oracle") {
        const auto& p = rig.fitted.estimate;
        const double ratio = conditional_survival_ratio(rig.fitted.model, p, b, Eigen::VectorXd(), 0.7, 0.9);
        const double trap = std::exp(-test::trapezoid_cumhaz(rig.fitted.model, p, b, Eigen::VectorXd(), 0.7, 1.6));
        CHECK(ratio == doctest::Approx(trap).epsilon(1e-8));
    }
}

TEST_CASE("predict_risk basics") {
    Rig rig = make_rig(true, -0.4, 6);
    SubjectHistory h = truncate_history(rig.ds, std::string("s102"), 0.9);

    SUBCASE("t=0 gives exactly 0") {
        PredictionQuery q;
        q.s = 0.9;
        q.t = 0.0;
        q.mc_draws = 50;
        RiskPrediction rp = predict_risk(rig.fitted, h, q);
        CHECK(rp.point == 0.0);
        CHECK(rp.mc_se == 0.0);
    }
    SUBCASE("null association, fixed parameters: marker-independent hazard") {
        ParameterVector p = rig.fitted.estimate;
        p.alpha[0] = 0.0;
        p.lambda0.setConstant(0.15);
        ParameterLayout layout(rig.fitted.model);
        rig.fitted.estimate = p;
        rig.fitted.theta = layout.pack(p);
        PredictionQuery q;
        q.s = 0.9;
        q.t = 0.6;
        q.mc_draws = 40;
        RiskPrediction rp = predict_risk(rig.fitted, h, q);
        CHECK(rp.point == doctest::Approx(1.0 - std::exp(-0.15 * 0.6)).epsilon(1e-12));
        CHECK(rp.draw_var < 1e-20);  // ratio is deterministic
    }
    SUBCASE("deterministic given the query seed") {
        PredictionQuery q;
        q.s = 0.9;
        q.t = 0.5;
        q.mc_draws = 100;
        q.seed = 33;
        RiskPrediction a = predict_risk(rig.fitted, h, q);
        RiskPrediction b = predict_risk(rig.fitted, h, q);
        CHECK(a.point == b.point);
        CHECK(a.mc_se == b.mc_se);
        q.seed = 34;
        RiskPrediction c = predict_risk(rig.fitted, h, q);
        CHECK(a.point != c.point);
    }
    SUBCASE("nondecreasing in t with shared draws") {
        std::vector<double> windows{0.0, 0.2, 0.4, 0.6, 0.8, 1.0};
        auto preds = predict_risk_grid(rig.fitted, h, 0.9, windows, 150, 100, 77);
        for (size_t i = 1; i < preds.size(); ++i) CHECK(preds[i].point >= preds[i - 1].point);
        CHECK(preds[0].point == 0.0);
        for (const auto& rp : preds) {
            CHECK(rp.point >= 0.0);
            CHECK(rp.point <= 1.0);
        }
    }
}

TEST_CASE("predict_risk matches deterministic grid integration (1-D)") {
    Rig rig = make_rig(false, -0.5, 7);
    const double s = 1.0, t = 0.6;
    SubjectHistory h = truncate_history(rig.ds, std::string("s103"), s);

    const auto& model = rig.fitted.model;
    const auto& p = rig.fitted.estimate;
    std::vector<double> times, values;
    for (const auto& o : h.marker_values) {
        times.push_back(o.time);
        values.push_back(o.value);
    }
    // pi = 1 - E[ratio | T>s, Y(s)] with the posterior over b on a fine grid
    const int g = 60000;
    const double lo = -8.0, hi = 8.0;
    double norm = 0.0, mean_ratio = 0.0, mx = -1e300;
    std::vector<double> lts(g), ratios(g);
    for (int i = 0; i < g; ++i) {
        const double b = lo + (hi - lo) * i / (g - 1);
        Eigen::VectorXd bv = Eigen::VectorXd::Constant(1, b);
        double lp = test::mvn_logpdf(bv, Eigen::VectorXd::Zero(1), p.B);
        lp += marker_loglik(model, p, 0, bv, times, values, Eigen::VectorXd());
        lp -= cumulative_hazard(model, p, bv, Eigen::VectorXd(), s);
        lts[i] = lp;
        ratios[i] = conditional_survival_ratio(model, p, bv, Eigen::VectorXd(), s, t);
        mx = std::max(mx, lp);
    }
    for (int i = 0; i < g; ++i) {
        const double w = std::exp(lts[i] - mx);
        norm += w;
        mean_ratio += w * ratios[i];
    }
    const double pi_grid = 1.0 - mean_ratio / norm;

    PredictionQuery q;
    q.s = s;
    q.t = t;
    q.mc_draws = 2000;
    q.seed = 99;
    RiskPrediction rp = predict_risk(rig.fitted, h, q);
    CHECK(std::abs(rp.point - pi_grid) < 3.0 * std::max(rp.mc_se, 1e-6));
}

TEST_CASE("mc_se shrinks with more draws") {
    Rig rig = make_rig(true, -0.4, 8);
    SubjectHistory h = truncate_history(rig.ds, std::string("s104"), 0.9);
    PredictionQuery q;
    q.s = 0.9;
    q.t = 0.5;
    q.seed = 5;
    q.mc_draws = 250;
    const double se_small = predict_risk(rig.fitted, h, q).mc_se;
    q.mc_draws = 4000;
    const double se_big = predict_risk(rig.fitted, h, q).mc_se;
    CHECK(se_big < se_small);
}
