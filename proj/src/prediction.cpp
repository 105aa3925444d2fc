#include "prediction.hpp"

#include <cmath>

#include <Eigen/Cholesky>

#include "common.hpp"
#include "csv.hpp"
#include "likelihood.hpp"
#include "rng.hpp"

namespace mbsma {

ParameterDraws draw_parameters(const FittedJointModel& fitted, int m, uint64_t seed) {
    if (!fitted.converged) log_warn("drawing parameters from a non-converged fit (" + fitted.model_id + ")");
    ParameterLayout layout(fitted.model);
    const int n = layout.size();

    ParameterDraws out;
    Eigen::MatrixXd l = Eigen::MatrixXd::Zero(n, n);
    if (fitted.covariance.cwiseAbs().maxCoeff() > 0.0) {
        Eigen::LLT<Eigen::MatrixXd> llt(fitted.covariance);
        if (llt.info() == Eigen::Success) {
            l = llt.matrixL();
        } else {
            out.diagonal_fallback = true;
            for (int i = 0; i < n; ++i) l(i, i) = std::sqrt(std::max(fitted.covariance(i, i), 0.0));
            log_warn("covariance not positive definite for " + fitted.model_id + ", using diagonal draws");
        }
    }

    Rng rng(SeedStream(seed).mix("param_draws").get());
    out.draws.reserve(m);
    for (int i = 0; i < m; ++i) {
        Eigen::VectorXd theta = fitted.theta + l * rng.normal_vector(n);
        out.draws.push_back(layout.unpack(theta));
    }
    return out;
}

namespace {

struct TProposal {
    Eigen::VectorXd mu;
    Eigen::MatrixXd l;          // lower Cholesky of the scale matrix
    Eigen::MatrixXd precision;  // inverse scale matrix
    static constexpr double nu = 4.0;

    double logpdf_shape(const Eigen::VectorXd& b) const {
        const Eigen::VectorXd d = b - mu;
        const double quad = d.dot(precision * d);
        return -0.5 * (nu + mu.size()) * std::log1p(quad / nu);
    }
    Eigen::VectorXd draw(Rng& rng) const {
        const Eigen::VectorXd z = rng.normal_vector(static_cast<int>(mu.size()));
        const double u = rng.chisq_even(4);
        return mu + l * z * std::sqrt(nu / u);
    }
};

// Runs the independence chain against an explicit target.
MhSample run_mh(const SubjectTarget& target, int n_mh, uint64_t seed) {
    Eigen::VectorXd mu;
    Eigen::MatrixXd curv;
    if (!target.mode(mu, curv))
        throw_numeric("random-effect mode search failed for subject '" + target.subject_id() + "'");

    TProposal prop;
    prop.mu = mu;
    prop.precision = curv;
    Eigen::MatrixXd sigma;
    {
        Eigen::LLT<Eigen::MatrixXd> llt(curv);
        for (int tries = 0; llt.info() != Eigen::Success && tries < 4; ++tries) {
            curv.diagonal().array() += 1e-8 * (1.0 + curv.diagonal().cwiseAbs().maxCoeff());
            llt.compute(curv);
        }
        if (llt.info() != Eigen::Success)
            throw_numeric("proposal scaling failed for subject '" + target.subject_id() + "'");
        sigma = llt.solve(Eigen::MatrixXd::Identity(mu.size(), mu.size()));
    }
    Eigen::LLT<Eigen::MatrixXd> llt_s(sigma);
    for (int tries = 0; llt_s.info() != Eigen::Success && tries < 4; ++tries) {
        sigma.diagonal().array() += 1e-12 * (1.0 + sigma.diagonal().cwiseAbs().maxCoeff());
        llt_s.compute(sigma);
    }
    prop.l = llt_s.matrixL();

    Rng rng(seed);
    Eigen::VectorXd x = mu;
    double lp_x = target.value(x);
    double lq_x = prop.logpdf_shape(x);
    int accepted = 0;
    for (int step = 0; step < n_mh; ++step) {
        Eigen::VectorXd y = prop.draw(rng);
        const double lp_y = target.value(y);
        if (std::isfinite(lp_y)) {
            const double lq_y = prop.logpdf_shape(y);
            const double log_ratio = (lp_y - lp_x) + (lq_x - lq_y);
            if (log_ratio >= 0.0 || std::log(rng.uniform()) < log_ratio) {
                x = std::move(y);
                lp_x = lp_y;
                lq_x = lq_y;
                ++accepted;
            }
        }
    }
    MhSample out;
    out.b = std::move(x);
    out.accept_rate = n_mh > 0 ? static_cast<double>(accepted) / n_mh : 1.0;
    return out;
}

}  // namespace

MhSample sample_random_effects(const ResolvedModel& model, const ParameterVector& p, const SubjectHistory& history,
                               int n_mh, uint64_t seed) {
    SubjectData sd = make_subject_data(history, model);
    SubjectTarget target(model, p, sd, history.landmark, false, true);
    return run_mh(target, n_mh, seed);
}

double conditional_survival_ratio(const ResolvedModel& model, const ParameterVector& p, const Eigen::VectorXd& b,
                                  const Eigen::VectorXd& x_full, double s, double t) {
    return std::exp(-cumulative_hazard_between(model, p, b, x_full, s, s + t));
}

std::vector<RiskPrediction> predict_risk_grid(const FittedJointModel& fitted, const SubjectHistory& history,
                                              double s, const std::vector<double>& windows, int mc_draws,
                                              int mh_burnin, uint64_t seed) {
    if (mc_draws < 1) throw_config("mc_draws must be >= 1");
    for (double w : windows)
        if (w < 0.0) throw_config("prediction window must be nonnegative");

    ParameterDraws pdraws = draw_parameters(fitted, mc_draws, SeedStream(seed).mix("xi").get());
    SubjectData sd = make_subject_data(history, fitted.model);

    const int n_w = static_cast<int>(windows.size());
    Eigen::MatrixXd ratios(mc_draws, n_w);
    double accept_acc = 0.0;
    for (int m = 0; m < mc_draws; ++m) {
        const ParameterVector& pm = pdraws.draws[m];
        SubjectTarget target(fitted.model, pm, sd, s, false, true);
        MhSample mh = run_mh(target, mh_burnin, SeedStream(seed).mix("b").mix(static_cast<uint64_t>(m)).get());
        accept_acc += mh.accept_rate;
        for (int w = 0; w < n_w; ++w)
            ratios(m, w) = std::exp(-target.cumulative_hazard_between(mh.b, s, s + windows[w]));
    }
    const double accept_rate = accept_acc / mc_draws;
    if (accept_rate < 0.1 || accept_rate > 0.9)
        log_warn("MH acceptance rate " + format_double(accept_rate) + " for subject '" + history.subject_id + "'");

    std::vector<RiskPrediction> out;
    for (int w = 0; w < n_w; ++w) {
        RiskPrediction rp;
        rp.subject_id = history.subject_id;
        const double mean_ratio = ratios.col(w).mean();
        rp.point = 1.0 - mean_ratio;
        rp.draw_mean = rp.point;
        if (mc_draws > 1) {
            const double var = (ratios.col(w).array() - mean_ratio).square().sum() / (mc_draws - 1);
            rp.draw_var = var;
            rp.mc_se = std::sqrt(var / mc_draws);
        }
        rp.mh_accept_rate = accept_rate;
        rp.used_diagonal_covariance = pdraws.diagonal_fallback;
        out.push_back(rp);
    }
    return out;
}

RiskPrediction predict_risk(const FittedJointModel& fitted, const SubjectHistory& history,
                            const PredictionQuery& query) {
    if (!(query.t >= 0.0)) throw_config("prediction window must be nonnegative");
    return predict_risk_grid(fitted, history, query.s, {query.t}, query.mc_draws, query.mh_burnin, query.seed)[0];
}

}  // namespace mbsma
