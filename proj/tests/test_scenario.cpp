#include <doctest.h>

#include <cmath>
#include <set>

#include "common.hpp"
#include "rng.hpp"
#include "scenario.hpp"

using namespace mbsma;

TEST_CASE("scenario registry reproduces the configured constants exactly") {
    SUBCASE("I.1 / I.2 / I.3") {
        ScenarioConfig i1 = scenario_registry("I.1");
        CHECK(i1.n_markers() == 3);
        for (int m = 0; m < 3; ++m) {
            CHECK(i1.families[m] == Family::gaussian);
            CHECK(i1.beta[m][0] == 0.0);
            CHECK(i1.beta[m][1] == -1.0);
            CHECK(i1.sigma2[m] == 0.5);
            CHECK(i1.alpha0[m] == -0.5);
            CHECK(i1.alpha1[m] == 0.0);
        }
        for (int m = 0; m < 3; ++m) {
            CHECK(i1.b_cov(2 * m, 2 * m) == 1.0);
            CHECK(i1.b_cov(2 * m, 2 * m + 1) == 0.5);
            CHECK(i1.b_cov(2 * m + 1, 2 * m + 1) == 1.0);
        }
        CHECK(i1.b_cov(0, 2) == 0.0);  // independent markers
        ScenarioConfig i2 = scenario_registry("I.2");
        CHECK(i2.alpha0[0] == 0.0);
        CHECK(i2.alpha0[1] == -0.5);
        CHECK(i2.alpha0[2] == -0.5);
        ScenarioConfig i3 = scenario_registry("I.3");
        CHECK(i3.alpha0[2] == -1.0);
    }
    SUBCASE("D variants share alpha but couple the blocks with 0.5") {
        ScenarioConfig d1 = scenario_registry("D.1");
        CHECK(d1.b_cov(0, 2) == 0.5);
        CHECK(d1.b_cov(0, 3) == 0.5);
        CHECK(d1.b_cov(1, 4) == 0.5);
        CHECK(d1.b_cov(0, 0) == 1.0);
        CHECK(d1.b_cov(0, 1) == 0.5);
    }
    SUBCASE("M variants flip the third marker to binary") {
        ScenarioConfig m2 = scenario_registry("M.2");
        CHECK(m2.families[0] == Family::gaussian);
        CHECK(m2.families[1] == Family::gaussian);
        CHECK(m2.families[2] == Family::binary);
        CHECK(m2.alpha0[0] == 0.0);
        CHECK(m2.b_cov(0, 2) == 0.5);
    }
    SUBCASE("S.1 and S.2: seven markers, first binary") {
        ScenarioConfig s1 = scenario_registry("S.1");
        CHECK(s1.n_markers() == 7);
        CHECK(s1.families[0] == Family::binary);
        for (int m = 1; m < 7; ++m) CHECK(s1.families[m] == Family::gaussian);
        Eigen::VectorXd expected(7);
        expected << -0.5, -0.5, -0.5, 0.0, 0.0, 0.0, 0.0;
        CHECK((s1.alpha0 - expected).cwiseAbs().maxCoeff() == 0.0);
        ScenarioConfig s2 = scenario_registry("S.2");
        expected[2] = -1.0;
        CHECK((s2.alpha0 - expected).cwiseAbs().maxCoeff() == 0.0);
    }
    SUBCASE("scenario4 time-dependent association constants") {
        ScenarioConfig s4 = scenario_registry("scenario4");
        CHECK(s4.n_markers() == 2);
        CHECK(s4.beta[0][0] == 0.13);
        CHECK(s4.beta[0][1] == -0.76);
        CHECK(s4.beta[1][0] == 0.18);
        CHECK(s4.beta[1][1] == -0.62);
        CHECK(s4.sigma2[0] == doctest::Approx(0.56 * 0.56).epsilon(1e-15));
        CHECK(s4.sigma2[1] == doctest::Approx(0.65 * 0.65).epsilon(1e-15));
        CHECK(s4.alpha0[0] == -0.8);
        CHECK(s4.alpha0[1] == 0.0);
        CHECK(s4.alpha1[0] == 0.4);
        CHECK(s4.alpha1[1] == -0.4);
        CHECK(s4.b_cov(0, 0) == 0.69);
        CHECK(s4.b_cov(0, 1) == 0.01);
        CHECK(s4.b_cov(1, 1) == 0.26);
        CHECK(s4.b_cov(2, 2) == 0.74);
        CHECK(s4.b_cov(2, 3) == -0.01);
        CHECK(s4.b_cov(3, 3) == 0.20);
        CHECK(s4.b_cov(0, 2) == 0.0);
    }
    SUBCASE("unknown scenario is a config error") {
        CHECK_THROWS_AS(scenario_registry("X.9"), Error);
    }
}

TEST_CASE("scenario JSON round-trip with overrides") {
    nlohmann::json j{{"scenario", "D.2"}, {"n_subjects", 77}, {"seed", 9}, {"cens_target", 0.3}};
    ScenarioConfig cfg = parse_scenario(j);
    CHECK(cfg.name == "D.2");
    CHECK(cfg.n_subjects == 77);
    CHECK(cfg.seed == 9);
    CHECK(cfg.cens_target == 0.3);

    ScenarioConfig back = parse_scenario(scenario_to_json(cfg));
    CHECK(back.n_subjects == cfg.n_subjects);
    CHECK((back.b_cov - cfg.b_cov).cwiseAbs().maxCoeff() == 0.0);
    CHECK((back.alpha0 - cfg.alpha0).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("homogeneous exponential special case") {
    // no random effects, null association: everyone has hazard lambda0
    nlohmann::json j;
    j["families"] = {"gaussian"};
    j["beta"] = {{0.0, -1.0}};
    j["sigma2"] = {0.5};
    j["b_cov"] = {{0.0, 0.0}, {0.0, 0.0}};
    j["alpha0"] = {0.0};
    j["n_subjects"] = 4000;
    j["lambda0"] = 0.4;
    j["cens_target"] = 0.0;
    ScenarioConfig cfg = parse_scenario(j);
    GeneratedData gen = generate_dataset(cfg, 3);

    for (double t : {0.5, 1.0, 1.5}) {
        int alive = 0;
        for (const auto& s : gen.dataset.subjects)
            if (s.observed_time > t) ++alive;
        const double p = std::exp(-0.4 * t);
        const double se = std::sqrt(p * (1.0 - p) / cfg.n_subjects);
        CHECK(std::abs(static_cast<double>(alive) / cfg.n_subjects - p) <= 3.0 * se);
    }
}

TEST_CASE("drawn random effects match the configured covariance (D.1 moments)") {
    ScenarioConfig cfg = scenario_registry("D.1");
    cfg.n_subjects = 20000;
    cfg.cens_target = 0.0;
    GeneratedData gen = generate_dataset(cfg, 11);

    const Eigen::MatrixXd& b = gen.true_effects;
    Eigen::MatrixXd emp = (b.transpose() * b) / cfg.n_subjects;
    for (int r = 0; r < 6; ++r)
        for (int c = 0; c < 6; ++c) {
            const double se = std::sqrt((cfg.b_cov(r, r) * cfg.b_cov(c, c) + cfg.b_cov(r, c) * cfg.b_cov(r, c)) /
                                        cfg.n_subjects);
            CHECK(std::abs(emp(r, c) - cfg.b_cov(r, c)) <= 4.0 * se);
        }
}

TEST_CASE("inverse-transform fidelity for a fixed random effect") {
    ScenarioConfig cfg = scenario_registry("I.1");
    Eigen::VectorXd b(6);
    b << 0.4, -0.2, -0.3, 0.1, 0.2, 0.05;

    Rng rng(17);
    const int n = 4000;
    std::vector<double> events;
    for (int i = 0; i < n; ++i) events.push_back(scenario_event_time(cfg, b, rng.exponential(), 50.0));

    for (double t : {0.5, 1.0, 1.5, 2.0}) {
        int alive = 0;
        for (double e : events)
            if (e > t) ++alive;
        const double p = std::exp(-scenario_cumulative_hazard(cfg, b, t));
        const double se = std::sqrt(std::max(p * (1.0 - p), 1e-9) / n);
        CHECK(std::abs(static_cast<double>(alive) / n - p) <= 3.5 * se);
    }
}

TEST_CASE("binary markers follow expit(m) at the visit grid for fixed effects") {
    ScenarioConfig cfg = scenario_registry("M.1");
    cfg.b_cov.setZero();  // fix b = 0
    cfg.n_subjects = 5000;
    cfg.lambda0 = 1e-9;  // keep everyone under observation to the cutoff
    cfg.cens_target = 0.0;
    GeneratedData gen = generate_dataset(cfg, 21);

    for (double t : {0.0, 1.0, 2.0}) {
        int ones = 0, total = 0;
        for (const auto& o : gen.dataset.observations) {
            if (o.marker_id != 3 || o.time != t) continue;
            ++total;
            ones += o.value == 1.0;
        }
        REQUIRE(total > 4000);
        const double m = cfg.beta[2][0] + cfg.beta[2][1] * t;
        const double p = 1.0 / (1.0 + std::exp(-m));
        const double se = std::sqrt(p * (1.0 - p) / total);
        CHECK(std::abs(static_cast<double>(ones) / total - p) <= 3.5 * se);
    }
}

TEST_CASE("true_risk") {
    ScenarioConfig cfg = scenario_registry("scenario4");
    Eigen::VectorXd b(4);
    b << 0.3, -0.1, -0.2, 0.15;

    SUBCASE("t=0 gives 0") { CHECK(true_risk(cfg, b, 0.7, 0.0) == 0.0); }

    SUBCASE("null association is marker-free") {
        ScenarioConfig null_cfg = scenario_registry("I.1");
        null_cfg.alpha0.setZero();
        Eigen::VectorXd b6 = Eigen::VectorXd::Random(6);
        const double expected = 1.0 - std::exp(-null_cfg.lambda0 * 0.5);
        CHECK(true_risk(null_cfg, b6, 1.0, 0.5) == doctest::Approx(expected).epsilon(1e-12));
    }

    SUBCASE("scenario4 matches a fine trapezoid oracle") {
        auto lam = [&](double u) {
            double expo = 0.0;
            for (int k = 0; k < 2; ++k) {
                const double m = cfg.beta[k][0] + b[2 * k] + (cfg.beta[k][1] + b[2 * k + 1]) * u;
                expo += (cfg.alpha0[k] + cfg.alpha1[k] * u) * m;
            }
            return cfg.lambda0 * std::exp(expo);
        };
        for (auto [s, t] : std::vector<std::pair<double, double>>{{0.0, 0.5}, {1.0, 0.5}, {0.3, 1.2}}) {
            const int n = 100000;
            const double h = t / n;
            double acc = 0.5 * (lam(s) + lam(s + t));
            for (int i = 1; i < n; ++i) acc += lam(s + i * h);
            const double oracle = 1.0 - std::exp(-acc * h);
            CHECK(true_risk(cfg, b, s, t) == doctest::Approx(oracle).epsilon(1e-7));
        }
    }
}

TEST_CASE("administrative censoring and censoring-rate monotonicity") {
    ScenarioConfig cfg = scenario_registry("I.2");
    cfg.n_subjects = 800;
    cfg.cens_weibull_rate = 0.1;
    GeneratedData low = generate_dataset(cfg, 5);
    for (const auto& s : low.dataset.subjects) CHECK(s.observed_time <= cfg.admin_cutoff + 1e-12);

    cfg.cens_weibull_rate = 0.6;
    GeneratedData high = generate_dataset(cfg, 5);
    CHECK(high.realized_censoring > low.realized_censoring);
}

TEST_CASE("censoring-rate calibration hits the target roughly") {
    ScenarioConfig cfg = scenario_registry("D.1");
    cfg.n_subjects = 3000;
    cfg.cens_target = 0.25;
    GeneratedData gen = generate_dataset(cfg, 9);
    CHECK(gen.cens_rate_used > 0.0);
    CHECK(std::abs(gen.realized_censoring - 0.25) < 0.05);
}

TEST_CASE("bootstrap_mimic") {
    ScenarioConfig cfg = scenario_registry("I.1");
    cfg.n_subjects = 200;
    GeneratedData gen = generate_dataset(cfg, 31);

    SUBCASE("deterministic given the seed, preserves N") {
        Dataset a = bootstrap_mimic(gen.dataset, 4);
        Dataset b = bootstrap_mimic(gen.dataset, 4);
        REQUIRE(a.n_subjects() == 200);
        for (int i = 0; i < 200; ++i) {
            CHECK(a.subjects[i].subject_id == b.subjects[i].subject_id);
            CHECK(a.subjects[i].observed_time == b.subjects[i].observed_time);
        }
    }
    SUBCASE("single subject resamples to itself") {
        Dataset one = subset_subjects(gen.dataset, {0});
        Dataset res = bootstrap_mimic(one, 1);
        CHECK(res.n_subjects() == 1);
        CHECK(res.subjects[0].observed_time == one.subjects[0].observed_time);
    }
    SUBCASE("expected fraction of distinct source subjects") {
        // unique observed times so each source subject is identifiable
        Dataset src;
        src.markers = {{"m1", Family::gaussian}};
        const int n = 200;
        for (int i = 0; i < n; ++i) {
            SurvivalRecord r;
            r.subject_id = "u" + std::to_string(1000 + i);
            r.observed_time = 0.01 * (i + 1);
            r.event = 1;
            r.covariates = Eigen::VectorXd::Zero(0);
            src.subjects.push_back(r);
        }
        src = validate(src);

        const double expected = 1.0 - std::pow(1.0 - 1.0 / n, n);
        const int reps = 150;
        double mean = 0.0;
        std::vector<double> fracs;
        for (int r = 0; r < reps; ++r) {
            Dataset res = bootstrap_mimic(src, 100 + r);
            std::set<double> distinct;
            for (const auto& s : res.subjects) distinct.insert(s.observed_time);
            fracs.push_back(static_cast<double>(distinct.size()) / n);
            mean += fracs.back();
        }
        mean /= reps;
        double sd = 0.0;
        for (double f : fracs) sd += (f - mean) * (f - mean);
        sd = std::sqrt(sd / (reps - 1));
        CHECK(std::abs(mean - expected) <= 3.0 * sd / std::sqrt(static_cast<double>(reps)) + 1e-3);
    }
}

TEST_CASE("generated datasets validate and stay within the visit grid") {
    ScenarioConfig cfg = scenario_registry("M.3");
    cfg.n_subjects = 300;
    GeneratedData gen = generate_dataset(cfg, 77);
    CHECK(gen.dataset.n_markers() == 3);
    for (const auto& o : gen.dataset.observations) {
        const int si = gen.dataset.subject_index(o.subject_id);
        CHECK(o.time <= gen.dataset.subjects[si].observed_time);
    }
    // true effects align with subjects
    CHECK(gen.true_effects.rows() == gen.dataset.n_subjects());
}
