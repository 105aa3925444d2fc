#include "scenario.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/Cholesky>

#include "common.hpp"
#include "csv.hpp"
#include "rng.hpp"

namespace mbsma {

namespace {

Eigen::MatrixXd block_cov(int k, bool dependent) {
    Eigen::MatrixXd bstar(2, 2);
    bstar << 1.0, 0.5, 0.5, 1.0;
    Eigen::MatrixXd bdag = Eigen::MatrixXd::Constant(2, 2, 0.5);
    Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(2 * k, 2 * k);
    for (int i = 0; i < k; ++i)
        for (int j = 0; j < k; ++j) {
            if (i == j)
                cov.block(2 * i, 2 * j, 2, 2) = bstar;
            else if (dependent)
                cov.block(2 * i, 2 * j, 2, 2) = bdag;
        }
    return cov;
}

std::vector<double> default_grid() {
    std::vector<double> g;
    for (int i = 0; i <= 10; ++i) g.push_back(0.2 * i);
    return g;
}

ScenarioConfig base_config(int k, bool dependent) {
    ScenarioConfig cfg;
    cfg.families.assign(k, Family::gaussian);
    cfg.beta.assign(k, Eigen::Vector2d(0.0, -1.0));
    cfg.sigma2.assign(k, 0.5);
    cfg.b_cov = block_cov(k, dependent);
    cfg.alpha1 = Eigen::VectorXd::Zero(k);
    cfg.lambda0 = 0.1;
    cfg.admin_cutoff = 2.0;
    cfg.visit_grid = default_grid();
    return cfg;
}

}  // namespace

std::vector<std::string> scenario_names() {
    return {"I.1", "I.2", "I.3", "D.1", "D.2", "D.3", "M.1", "M.2", "M.3", "S.1", "S.2", "scenario4"};
}

ScenarioConfig scenario_registry(const std::string& name) {
    auto alpha3 = [](int variant) {
        Eigen::VectorXd a(3);
        if (variant == 1) a << -0.5, -0.5, -0.5;
        if (variant == 2) a << 0.0, -0.5, -0.5;
        if (variant == 3) a << 0.0, -0.5, -1.0;
        return a;
    };

    if (name.size() == 3 && (name[0] == 'I' || name[0] == 'D' || name[0] == 'M') && name[1] == '.') {
        const int variant = name[2] - '0';
        if (variant < 1 || variant > 3) throw_config("unknown scenario '" + name + "'");
        ScenarioConfig cfg = base_config(3, name[0] != 'I');
        cfg.name = name;
        cfg.alpha0 = alpha3(variant);
        if (name[0] == 'M') cfg.families[2] = Family::binary;
        return cfg;
    }
    if (name == "S.1" || name == "S.2") {
        ScenarioConfig cfg = base_config(7, true);
        cfg.name = name;
        cfg.families[0] = Family::binary;
        cfg.alpha0 = Eigen::VectorXd::Zero(7);
        cfg.alpha0[0] = -0.5;
        cfg.alpha0[1] = -0.5;
        cfg.alpha0[2] = name == "S.1" ? -0.5 : -1.0;
        return cfg;
    }
    if (name == "scenario4") {
        ScenarioConfig cfg;
        cfg.name = name;
        cfg.families.assign(2, Family::gaussian);
        cfg.beta = {Eigen::Vector2d(0.13, -0.76), Eigen::Vector2d(0.18, -0.62)};
        cfg.sigma2 = {0.56 * 0.56, 0.65 * 0.65};
        cfg.b_cov = Eigen::MatrixXd::Zero(4, 4);
        cfg.b_cov.block(0, 0, 2, 2) << 0.69, 0.01, 0.01, 0.26;
        cfg.b_cov.block(2, 2, 2, 2) << 0.74, -0.01, -0.01, 0.20;
        cfg.alpha0 = Eigen::VectorXd(2);
        cfg.alpha0 << -0.8, 0.0;
        cfg.alpha1 = Eigen::VectorXd(2);
        cfg.alpha1 << 0.4, -0.4;
        cfg.lambda0 = 0.25;
        cfg.admin_cutoff = 2.0;
        cfg.visit_grid = default_grid();
        return cfg;
    }
    throw_config("unknown scenario '" + name + "'");
}

ScenarioConfig parse_scenario(const nlohmann::json& j) {
    ScenarioConfig cfg;
    if (j.contains("scenario")) {
        cfg = scenario_registry(j.at("scenario").get<std::string>());
    } else {
        const int k = static_cast<int>(j.at("families").size());
        for (const auto& f : j.at("families")) {
            const std::string fam = f.get<std::string>();
            if (fam == "gaussian")
                cfg.families.push_back(Family::gaussian);
            else if (fam == "binary")
                cfg.families.push_back(Family::binary);
            else
                throw_config("unknown family '" + fam + "'");
        }
        for (const auto& b : j.at("beta")) cfg.beta.emplace_back(b[0].get<double>(), b[1].get<double>());
        cfg.sigma2 = j.value("sigma2", std::vector<double>(k, 0.5));
        cfg.b_cov.resize(2 * k, 2 * k);
        const auto& rows = j.at("b_cov");
        for (int r = 0; r < 2 * k; ++r)
            for (int c = 0; c < 2 * k; ++c) cfg.b_cov(r, c) = rows[r][c].get<double>();
        cfg.alpha0.resize(k);
        cfg.alpha1 = Eigen::VectorXd::Zero(k);
        for (int m = 0; m < k; ++m) cfg.alpha0[m] = j.at("alpha0")[m].get<double>();
        if (j.contains("alpha1"))
            for (int m = 0; m < k; ++m) cfg.alpha1[m] = j.at("alpha1")[m].get<double>();
        cfg.visit_grid = j.value("visit_grid", default_grid());
        cfg.name = j.value("name", std::string("custom"));
    }
    if (j.contains("n_subjects")) cfg.n_subjects = j.at("n_subjects").get<int>();
    if (j.contains("lambda0")) cfg.lambda0 = j.at("lambda0").get<double>();
    if (j.contains("cens_weibull_shape")) cfg.cens_weibull_shape = j.at("cens_weibull_shape").get<double>();
    if (j.contains("cens_weibull_rate")) cfg.cens_weibull_rate = j.at("cens_weibull_rate").get<double>();
    if (j.contains("cens_target")) cfg.cens_target = j.at("cens_target").get<double>();
    if (j.contains("admin_cutoff")) cfg.admin_cutoff = j.at("admin_cutoff").get<double>();
    if (j.contains("visit_grid")) cfg.visit_grid = j.at("visit_grid").get<std::vector<double>>();
    if (j.contains("seed")) cfg.seed = j.at("seed").get<uint64_t>();
    if (j.contains("replicates")) cfg.replicates = j.at("replicates").get<int>();

    if (cfg.n_subjects < 1) throw_config("n_subjects must be >= 1");
    if (cfg.lambda0 <= 0.0) throw_config("lambda0 must be positive");
    if (cfg.visit_grid.empty() || cfg.visit_grid.front() != 0.0) throw_config("visit grid must start at 0");
    for (size_t i = 1; i < cfg.visit_grid.size(); ++i)
        if (cfg.visit_grid[i] <= cfg.visit_grid[i - 1]) throw_config("visit grid must be increasing");
    if (std::abs(cfg.visit_grid.back() - cfg.admin_cutoff) > 1e-12)
        throw_config("visit grid must end at the administrative cutoff");
    if (cfg.replicates < 1) throw_config("replicates must be >= 1");
    return cfg;
}

nlohmann::json scenario_to_json(const ScenarioConfig& cfg) {
    nlohmann::json j;
    j["name"] = cfg.name;
    j["n_subjects"] = cfg.n_subjects;
    nlohmann::json fams = nlohmann::json::array();
    for (auto f : cfg.families) fams.push_back(f == Family::gaussian ? "gaussian" : "binary");
    j["families"] = fams;
    nlohmann::json beta = nlohmann::json::array();
    for (const auto& b : cfg.beta) beta.push_back({b[0], b[1]});
    j["beta"] = beta;
    j["sigma2"] = cfg.sigma2;
    nlohmann::json cov = nlohmann::json::array();
    for (int r = 0; r < cfg.b_cov.rows(); ++r) {
        nlohmann::json row = nlohmann::json::array();
        for (int c = 0; c < cfg.b_cov.cols(); ++c) row.push_back(cfg.b_cov(r, c));
        cov.push_back(row);
    }
    j["b_cov"] = cov;
    j["alpha0"] = std::vector<double>(cfg.alpha0.data(), cfg.alpha0.data() + cfg.alpha0.size());
    j["alpha1"] = std::vector<double>(cfg.alpha1.data(), cfg.alpha1.data() + cfg.alpha1.size());
    j["lambda0"] = cfg.lambda0;
    j["cens_weibull_shape"] = cfg.cens_weibull_shape;
    j["cens_weibull_rate"] = cfg.cens_weibull_rate;
    j["cens_target"] = cfg.cens_target;
    j["admin_cutoff"] = cfg.admin_cutoff;
    j["visit_grid"] = cfg.visit_grid;
    j["seed"] = cfg.seed;
    j["replicates"] = cfg.replicates;
    return j;
}

// ---------------------------------------------------------------------------
// Hazard under the generating law

namespace {

// exponent of the hazard: q0 + q1 u + q2 u^2 given fixed b
struct HazardPoly {
    double q0 = 0.0, q1 = 0.0, q2 = 0.0;
    bool quadratic = false;
};

HazardPoly hazard_poly(const ScenarioConfig& cfg, const Eigen::VectorXd& b) {
    HazardPoly hp;
    for (int k = 0; k < cfg.n_markers(); ++k) {
        const double a = cfg.beta[k][0] + b[2 * k];      // m_k(u) = a + c u
        const double c = cfg.beta[k][1] + b[2 * k + 1];
        hp.q0 += cfg.alpha0[k] * a;
        hp.q1 += cfg.alpha0[k] * c + cfg.alpha1[k] * a;
        hp.q2 += cfg.alpha1[k] * c;
    }
    hp.quadratic = hp.q2 != 0.0;
    return hp;
}

double simpson(const std::function<double(double)>& f, double lo, double hi, int depth, double fl, double fm,
               double fh, double whole, double tol) {
    const double mid = 0.5 * (lo + hi);
    const double lm = 0.5 * (lo + mid), rm = 0.5 * (mid + hi);
    const double flm = f(lm), frm = f(rm);
    const double left = (mid - lo) / 6.0 * (fl + 4.0 * flm + fm);
    const double right = (hi - mid) / 6.0 * (fm + 4.0 * frm + fh);
    if (depth <= 0 || std::abs(left + right - whole) < 15.0 * tol) return left + right + (left + right - whole) / 15.0;
    return simpson(f, lo, mid, depth - 1, fl, flm, fm, left, tol / 2) +
           simpson(f, mid, hi, depth - 1, fm, frm, fh, right, tol / 2);
}

double adaptive_simpson(const std::function<double(double)>& f, double lo, double hi, double tol) {
    if (!(hi > lo)) return 0.0;
    const double fl = f(lo), fh = f(hi), fm = f(0.5 * (lo + hi));
    const double whole = (hi - lo) / 6.0 * (fl + 4.0 * fm + fh);
    return simpson(f, lo, hi, 40, fl, fm, fh, whole, tol);
}

double cum_hazard_poly(const ScenarioConfig& cfg, const HazardPoly& hp, double lo, double hi) {
    if (!(hi > lo)) return 0.0;
    if (!hp.quadratic) {
        // lambda0 * exp(q0 + q1 u): closed form
        if (std::abs(hp.q1 * (hi - lo)) < 1e-9)
            return cfg.lambda0 * std::exp(hp.q0 + hp.q1 * lo) * (hi - lo);
        return cfg.lambda0 / hp.q1 * (std::exp(hp.q0 + hp.q1 * hi) - std::exp(hp.q0 + hp.q1 * lo));
    }
    auto f = [&](double u) { return cfg.lambda0 * std::exp(hp.q0 + u * (hp.q1 + u * hp.q2)); };
    return adaptive_simpson(f, lo, hi, 1e-12);
}

}  // namespace

double scenario_cumulative_hazard(const ScenarioConfig& cfg, const Eigen::VectorXd& b, double t) {
    return cum_hazard_poly(cfg, hazard_poly(cfg, b), 0.0, t);
}

double true_risk(const ScenarioConfig& cfg, const Eigen::VectorXd& b, double s, double t) {
    const HazardPoly hp = hazard_poly(cfg, b);
    return 1.0 - std::exp(-cum_hazard_poly(cfg, hp, s, s + t));
}

double scenario_event_time(const ScenarioConfig& cfg, const Eigen::VectorXd& b, double exp_draw, double horizon) {
    const HazardPoly hp = hazard_poly(cfg, b);
    if (cum_hazard_poly(cfg, hp, 0.0, horizon) < exp_draw) return std::numeric_limits<double>::infinity();
    double lo = 0.0, hi = horizon;
    while (hi - lo > 1e-10) {
        const double mid = 0.5 * (lo + hi);
        if (cum_hazard_poly(cfg, hp, 0.0, mid) < exp_draw)
            lo = mid;
        else
            hi = mid;
    }
    return 0.5 * (lo + hi);
}

// ---------------------------------------------------------------------------
// Generation

namespace {

double calibrate_censoring_rate(const ScenarioConfig& cfg, uint64_t seed) {
    if (cfg.cens_weibull_rate >= 0.0) return cfg.cens_weibull_rate;
    if (cfg.cens_target <= 0.0) return 0.0;

    // pilot sample of latent event times and censoring uniforms; rate is
    // monotone in the censoring fraction, so bisect
    const int n_pilot = 2000;
    Rng rng(SeedStream(seed).mix("cens_calibration").get());
    Eigen::LLT<Eigen::MatrixXd> llt(cfg.b_cov);
    if (llt.info() != Eigen::Success) throw_config("scenario random-effect covariance not positive definite");
    const Eigen::MatrixXd l = llt.matrixL();

    std::vector<double> t_event(n_pilot), u_cens(n_pilot);
    for (int i = 0; i < n_pilot; ++i) {
        const Eigen::VectorXd b = l * rng.normal_vector(static_cast<int>(cfg.b_cov.rows()));
        t_event[i] = scenario_event_time(cfg, b, rng.exponential(), cfg.admin_cutoff);
        u_cens[i] = rng.exponential();  // C = u^(1/shape) / rate
    }
    auto fraction = [&](double rate) {
        int censored = 0;
        for (int i = 0; i < n_pilot; ++i) {
            const double c = std::pow(u_cens[i], 1.0 / cfg.cens_weibull_shape) / rate;
            if (c < std::min(t_event[i], cfg.admin_cutoff)) ++censored;
        }
        return static_cast<double>(censored) / n_pilot;
    };
    double lo = 1e-6, hi = 1e3;
    for (int it = 0; it < 200; ++it) {
        const double mid = std::sqrt(lo * hi);
        if (fraction(mid) < cfg.cens_target)
            lo = mid;
        else
            hi = mid;
    }
    return std::sqrt(lo * hi);
}

}  // namespace

GeneratedData generate_dataset(const ScenarioConfig& cfg) { return generate_dataset(cfg, cfg.seed); }

GeneratedData generate_dataset(const ScenarioConfig& cfg, uint64_t seed) {
    const int k = cfg.n_markers();
    const int d = 2 * k;
    Eigen::LLT<Eigen::MatrixXd> llt(cfg.b_cov);
    Eigen::MatrixXd l = Eigen::MatrixXd::Zero(d, d);
    if (llt.info() == Eigen::Success) {
        l = llt.matrixL();
    } else if (cfg.b_cov.cwiseAbs().maxCoeff() > 0.0) {
        throw_config("scenario random-effect covariance not positive definite");
    }

    GeneratedData out;
    out.cens_rate_used = calibrate_censoring_rate(cfg, seed);
    out.true_effects.resize(cfg.n_subjects, d);

    Dataset& ds = out.dataset;
    for (int m = 0; m < k; ++m)
        ds.markers.push_back({"m" + std::to_string(m + 1), cfg.families[m]});

    int width = 1;
    for (int n = cfg.n_subjects; n >= 10; n /= 10) ++width;
    int n_cens_precutoff = 0, n_events = 0;

    for (int i = 0; i < cfg.n_subjects; ++i) {
        std::string id = std::to_string(i + 1);
        id = "s" + std::string(width - id.size() > 0 ? width - id.size() : 0, '0') + id;
        Rng rng(SeedStream(seed).mix("subject").mix(static_cast<uint64_t>(i)).get());

        const Eigen::VectorXd b = l * rng.normal_vector(d);
        out.true_effects.row(i) = b.transpose();

        const double t_event = scenario_event_time(cfg, b, rng.exponential(), cfg.admin_cutoff);
        double t_cens = cfg.admin_cutoff;
        if (out.cens_rate_used > 0.0)
            t_cens = std::min(t_cens, rng.weibull(cfg.cens_weibull_shape, out.cens_rate_used));
        const double t_obs = std::min(t_event, t_cens);
        const int event = t_event <= t_cens ? 1 : 0;
        if (event == 0 && t_obs < cfg.admin_cutoff) ++n_cens_precutoff;
        n_events += event;

        SurvivalRecord rec;
        rec.subject_id = id;
        rec.observed_time = t_obs;
        rec.event = event;
        rec.covariates = Eigen::VectorXd::Zero(0);
        ds.subjects.push_back(rec);

        for (double t : cfg.visit_grid) {
            if (t > t_obs) break;
            for (int m = 0; m < k; ++m) {
                const double mean = cfg.beta[m][0] + b[2 * m] + (cfg.beta[m][1] + b[2 * m + 1]) * t;
                LongitudinalObservation o;
                o.subject_id = id;
                o.marker_id = m + 1;
                o.time = t;
                if (cfg.families[m] == Family::gaussian) {
                    o.value = mean + std::sqrt(cfg.sigma2[m]) * rng.normal();
                } else {
                    o.value = rng.bernoulli(1.0 / (1.0 + std::exp(-mean)));
                }
                ds.observations.push_back(o);
            }
        }
    }
    out.realized_censoring = static_cast<double>(n_cens_precutoff) / cfg.n_subjects;
    out.realized_events = static_cast<double>(n_events) / cfg.n_subjects;
    out.dataset = validate(std::move(out.dataset));
    return out;
}

Dataset bootstrap_mimic(const Dataset& ds, uint64_t seed) {
    const int n = ds.n_subjects();
    if (n == 0) throw_data("cannot bootstrap an empty dataset");
    Rng rng(SeedStream(seed).mix("bootstrap").get());

    Dataset out;
    out.markers = ds.markers;
    out.covariate_names = ds.covariate_names;
    int width = 1;
    for (int m = n; m >= 10; m /= 10) ++width;
    for (int i = 0; i < n; ++i) {
        const int src = static_cast<int>(rng.below(static_cast<uint64_t>(n)));
        std::string id = std::to_string(i + 1);
        id = "r" + std::string(width - id.size() > 0 ? width - id.size() : 0, '0') + id;
        SurvivalRecord rec = ds.subjects[src];
        rec.subject_id = id;
        out.subjects.push_back(rec);
        for (int j = ds.obs_begin[src]; j < ds.obs_end[src]; ++j) {
            LongitudinalObservation o = ds.observations[j];
            o.subject_id = id;
            out.observations.push_back(o);
        }
    }
    return validate(std::move(out));
}

void write_true_effects(const GeneratedData& gen, const std::string& path) {
    CsvTable t;
    t.header = {"subject_id"};
    const int d = static_cast<int>(gen.true_effects.cols());
    for (int m = 0; m < d / 2; ++m) {
        t.header.push_back("b0." + std::to_string(m + 1));
        t.header.push_back("b1." + std::to_string(m + 1));
    }
    for (int i = 0; i < gen.dataset.n_subjects(); ++i) {
        std::vector<std::string> row{gen.dataset.subjects[i].subject_id};
        for (int j = 0; j < d; ++j) row.push_back(format_double(gen.true_effects(i, j)));
        t.rows.push_back(std::move(row));
    }
    write_csv(path, t);
}

Eigen::MatrixXd read_true_effects(const std::string& path, const Dataset& ds) {
    CsvTable t = read_csv(path);
    const int d = static_cast<int>(t.header.size()) - 1;
    Eigen::MatrixXd out(ds.n_subjects(), d);
    out.setZero();
    const int c_id = t.col_required("subject_id", path);
    for (const auto& row : t.rows) {
        const int si = ds.subject_index(row[c_id]);
        if (si < 0) continue;
        for (int j = 0; j < d; ++j) out(si, j) = parse_double(row[j + 1], path);
    }
    return out;
}

}  // namespace mbsma
