#include "joint_model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <json.hpp>

#include "common.hpp"
#include "csv.hpp"
#include "likelihood.hpp"
#include "optimizer.hpp"

namespace mbsma {

std::string ResolvedModel::model_id(const Dataset& ds) const {
    if (n_markers() == ds.n_markers() && n_markers() > 2) return "jm_all";
    std::string id = "jm" + std::to_string(n_markers()) + ":";
    for (int m = 0; m < n_markers(); ++m) {
        if (m) id += "+";
        id += ds.markers[spec.markers[m].marker_id - 1].name;
    }
    return id;
}

ResolvedModel resolve_model(const Dataset& ds, const ModelSpec& spec) {
    if (spec.markers.empty()) throw_config("model spec has no markers");
    ResolvedModel rm;
    rm.spec = spec;

    std::set<int> seen;
    for (const auto& mk : spec.markers) {
        if (mk.marker_id < 1 || mk.marker_id > ds.n_markers())
            throw_config("marker id " + std::to_string(mk.marker_id) + " not in dataset (K=" +
                         std::to_string(ds.n_markers()) + ")");
        if (!seen.insert(mk.marker_id).second) throw_config("duplicate marker id in model spec");
        rm.families.push_back(ds.markers[mk.marker_id - 1].family);
        std::vector<int> idx;
        for (const auto& name : mk.covariates) {
            int c = ds.covariate_index(name);
            if (c < 0) throw_config("unknown covariate '" + name + "' in fixed design");
            idx.push_back(c);
        }
        rm.fixed_cov_idx.push_back(idx);
        rm.re_offset.push_back(rm.re_dim);
        rm.re_size.push_back(mk.random_slope ? 2 : 1);
        rm.re_dim += mk.random_slope ? 2 : 1;
    }
    if (rm.re_dim > 6)
        throw_capability("random-effect dimension " + std::to_string(rm.re_dim) + " exceeds cap 6");

    for (const auto& name : spec.survival_covariates) {
        int c = ds.covariate_index(name);
        if (c < 0) throw_config("unknown survival covariate '" + name + "'");
        rm.surv_cov_idx.push_back(c);
    }

    // baseline knots at event-time quantiles, spanning (0, max T*]
    if (spec.knots < 1) throw_config("baseline hazard needs at least one piece");
    double max_t = 0.0;
    std::vector<double> event_times;
    for (const auto& s : ds.subjects) {
        max_t = std::max(max_t, s.observed_time);
        if (s.event == 1) event_times.push_back(s.observed_time);
    }
    std::sort(event_times.begin(), event_times.end());

    rm.knot_bounds.push_back(0.0);
    if (!event_times.empty()) {
        for (int j = 1; j < spec.knots; ++j) {
            const double q = static_cast<double>(j) / spec.knots;
            const double pos = q * (event_times.size() - 1);
            const size_t lo = static_cast<size_t>(pos);
            const double frac = pos - lo;
            double val = event_times[lo];
            if (lo + 1 < event_times.size()) val = (1.0 - frac) * val + frac * event_times[lo + 1];
            if (val > rm.knot_bounds.back() && val < max_t) rm.knot_bounds.push_back(val);
        }
    }
    rm.knot_bounds.push_back(max_t);
    if (static_cast<int>(rm.knot_bounds.size()) - 1 < spec.knots)
        log_info("reduced baseline pieces to " + std::to_string(rm.knot_bounds.size() - 1) +
                 " (too few distinct event times)");
    return rm;
}

// ---------------------------------------------------------------------------
// Parameter layout

ParameterLayout::ParameterLayout(const ResolvedModel& model) : model_(&model) {
    int off = 0;
    for (int m = 0; m < model.n_markers(); ++m) {
        beta_off_.push_back(off);
        const int p = 2 + static_cast<int>(model.fixed_cov_idx[m].size());
        const std::string tag = "m" + std::to_string(model.spec.markers[m].marker_id);
        names_.push_back("beta." + tag + ".intercept");
        names_.push_back("beta." + tag + ".time");
        for (size_t c = 0; c < model.fixed_cov_idx[m].size(); ++c)
            names_.push_back("beta." + tag + "." + model.spec.markers[m].covariates[c]);
        off += p;
    }
    for (int m = 0; m < model.n_markers(); ++m) {
        const std::string tag = "m" + std::to_string(model.spec.markers[m].marker_id);
        if (model.families[m] == Family::gaussian) {
            sigma_off_.push_back(off++);
            names_.push_back("log_sigma2." + tag);
        } else {
            sigma_off_.push_back(-1);
        }
    }
    chol_off_ = off;
    const int d = model.re_dim;
    for (int i = 0; i < d; ++i)
        for (int j = 0; j <= i; ++j)
            names_.push_back(i == j ? "cholB.log." + std::to_string(i)
                                    : "cholB." + std::to_string(i) + "." + std::to_string(j));
    off += d * (d + 1) / 2;
    gamma_off_ = off;
    for (const auto& name : model.spec.survival_covariates) names_.push_back("gamma." + name);
    off += static_cast<int>(model.spec.survival_covariates.size());
    alpha_off_ = off;
    for (int m = 0; m < model.n_markers(); ++m)
        names_.push_back("alpha.m" + std::to_string(model.spec.markers[m].marker_id));
    off += model.n_markers();
    lambda_off_ = off;
    for (int j = 0; j < model.n_pieces(); ++j) names_.push_back("log_lambda0." + std::to_string(j));
    off += model.n_pieces();
    size_ = off;

    for (int m = 0; m < model.n_markers(); ++m) {
        const std::string tag = "m" + std::to_string(model.spec.markers[m].marker_id);
        natural_names_.push_back("beta." + tag + ".intercept");
        natural_names_.push_back("beta." + tag + ".time");
        for (size_t c = 0; c < model.fixed_cov_idx[m].size(); ++c)
            natural_names_.push_back("beta." + tag + "." + model.spec.markers[m].covariates[c]);
    }
    for (int m = 0; m < model.n_markers(); ++m)
        if (model.families[m] == Family::gaussian)
            natural_names_.push_back("sigma2.m" + std::to_string(model.spec.markers[m].marker_id));
    for (int i = 0; i < d; ++i)
        for (int j = 0; j <= i; ++j)
            natural_names_.push_back("B." + std::to_string(i) + "." + std::to_string(j));
    for (const auto& name : model.spec.survival_covariates) natural_names_.push_back("gamma." + name);
    for (int m = 0; m < model.n_markers(); ++m)
        natural_names_.push_back("alpha.m" + std::to_string(model.spec.markers[m].marker_id));
    for (int j = 0; j < model.n_pieces(); ++j) natural_names_.push_back("lambda0." + std::to_string(j));
}

Eigen::VectorXd ParameterLayout::pack(const ParameterVector& p) const {
    Eigen::VectorXd theta(size_);
    const auto& model = *model_;
    for (int m = 0; m < model.n_markers(); ++m) theta.segment(beta_off_[m], p.beta[m].size()) = p.beta[m];
    for (int m = 0; m < model.n_markers(); ++m)
        if (sigma_off_[m] >= 0) theta[sigma_off_[m]] = std::log(p.sigma2[m]);
    Eigen::LLT<Eigen::MatrixXd> llt(p.B);
    if (llt.info() != Eigen::Success) throw_numeric("cannot factor random-effect covariance");
    Eigen::MatrixXd l = llt.matrixL();
    int k = chol_off_;
    for (int i = 0; i < model.re_dim; ++i)
        for (int j = 0; j <= i; ++j) theta[k++] = (i == j) ? std::log(l(i, i)) : l(i, j);
    theta.segment(gamma_off_, p.gamma.size()) = p.gamma;
    theta.segment(alpha_off_, p.alpha.size()) = p.alpha;
    for (int j = 0; j < model.n_pieces(); ++j) theta[lambda_off_ + j] = std::log(p.lambda0[j]);
    return theta;
}

ParameterVector ParameterLayout::unpack(const Eigen::VectorXd& theta) const {
    const auto& model = *model_;
    ParameterVector p;
    for (int m = 0; m < model.n_markers(); ++m) {
        const int pk = 2 + static_cast<int>(model.fixed_cov_idx[m].size());
        p.beta.push_back(theta.segment(beta_off_[m], pk));
    }
    p.sigma2.resize(model.n_markers(), 1.0);
    for (int m = 0; m < model.n_markers(); ++m)
        if (sigma_off_[m] >= 0) p.sigma2[m] = std::exp(theta[sigma_off_[m]]);
    const int d = model.re_dim;
    Eigen::MatrixXd l = Eigen::MatrixXd::Zero(d, d);
    int k = chol_off_;
    for (int i = 0; i < d; ++i)
        for (int j = 0; j <= i; ++j) l(i, j) = (i == j) ? std::exp(theta[k++]) : theta[k++];
    p.B = l * l.transpose();
    p.gamma = theta.segment(gamma_off_, model.spec.survival_covariates.size());
    p.alpha = theta.segment(alpha_off_, model.n_markers());
    p.lambda0.resize(model.n_pieces());
    for (int j = 0; j < model.n_pieces(); ++j) p.lambda0[j] = std::exp(theta[lambda_off_ + j]);
    return p;
}

Eigen::VectorXd ParameterLayout::natural(const ParameterVector& p) const {
    const auto& model = *model_;
    Eigen::VectorXd nat(natural_size());
    int k = 0;
    for (int m = 0; m < model.n_markers(); ++m)
        for (int j = 0; j < p.beta[m].size(); ++j) nat[k++] = p.beta[m][j];
    for (int m = 0; m < model.n_markers(); ++m)
        if (model.families[m] == Family::gaussian) nat[k++] = p.sigma2[m];
    for (int i = 0; i < model.re_dim; ++i)
        for (int j = 0; j <= i; ++j) nat[k++] = p.B(i, j);
    for (int j = 0; j < p.gamma.size(); ++j) nat[k++] = p.gamma[j];
    for (int j = 0; j < p.alpha.size(); ++j) nat[k++] = p.alpha[j];
    for (int j = 0; j < p.lambda0.size(); ++j) nat[k++] = p.lambda0[j];
    return nat;
}

std::vector<int> ParameterLayout::alpha_indices() const {
    std::vector<int> idx;
    for (int m = 0; m < model_->n_markers(); ++m) idx.push_back(alpha_off_ + m);
    return idx;
}

// ---------------------------------------------------------------------------
// Elementary model functions

double linear_predictor(const ResolvedModel& model, const ParameterVector& p, int marker_pos,
                        const Eigen::VectorXd& b, const Eigen::VectorXd& x_full, double t) {
    if (b.size() != model.re_dim) throw_data("random-effect dimension mismatch");
    const int off = model.re_offset[marker_pos];
    double m = p.beta[marker_pos][0] + p.beta[marker_pos][1] * t + b[off];
    if (model.re_size[marker_pos] == 2) m += b[off + 1] * t;
    for (size_t c = 0; c < model.fixed_cov_idx[marker_pos].size(); ++c)
        m += p.beta[marker_pos][2 + c] * x_full[model.fixed_cov_idx[marker_pos][c]];
    return m;
}

double marker_loglik(const ResolvedModel& model, const ParameterVector& p, int marker_pos, const Eigen::VectorXd& b,
                     const std::vector<double>& times, const std::vector<double>& values,
                     const Eigen::VectorXd& x_full) {
    if (times.size() != values.size() || times.empty()) throw_data("marker_loglik needs matching non-empty series");
    double ll = 0.0;
    for (size_t j = 0; j < times.size(); ++j) {
        const double m = linear_predictor(model, p, marker_pos, b, x_full, times[j]);
        if (model.families[marker_pos] == Family::gaussian) {
            const double s2 = p.sigma2[marker_pos];
            const double r = values[j] - m;
            ll += -0.5 * std::log(2.0 * M_PI * s2) - r * r / (2.0 * s2);
        } else {
            ll += values[j] * m - (std::max(m, 0.0) + std::log1p(std::exp(-std::abs(m))));
        }
    }
    return ll;
}

double hazard(const ResolvedModel& model, const ParameterVector& p, const Eigen::VectorXd& b,
              const Eigen::VectorXd& x_full, double t) {
    const HazardCoeffs hc = hazard_coeffs(model, p, x_full);
    const int n_pieces = model.n_pieces();
    int piece = n_pieces - 1;
    for (int j = 0; j < n_pieces; ++j)
        if (t >= model.knot_bounds[j] && t < model.knot_bounds[j + 1]) {
            piece = j;
            break;
        }
    return p.lambda0[piece] * std::exp(hc.a0 + hc.avec.dot(b) + (hc.c0 + hc.cvec.dot(b)) * t);
}

double cumulative_hazard_between(const ResolvedModel& model, const ParameterVector& p, const Eigen::VectorXd& b,
                                 const Eigen::VectorXd& x_full, double t1, double t2) {
    SubjectData stub;
    stub.x_full = x_full;
    stub.markers.resize(model.n_markers());
    SubjectTarget tgt(model, p, stub, 0.0, false, true);
    return tgt.cumulative_hazard_between(b, t1, t2);
}

double cumulative_hazard(const ResolvedModel& model, const ParameterVector& p, const Eigen::VectorXd& b,
                         const Eigen::VectorXd& x_full, double t) {
    return cumulative_hazard_between(model, p, b, x_full, 0.0, t);
}

double joint_loglik(const Dataset& ds, const ResolvedModel& model, const ParameterVector& p, int quad_points) {
    JointLoglikEvaluator eval(ds, model, quad_points);
    return eval(p);
}

int auto_quad_points(int re_dim) {
    if (re_dim <= 2) return 9;
    if (re_dim <= 4) return 5;
    return 3;
}

// ---------------------------------------------------------------------------
// Maximum-likelihood fit

namespace {

struct FixedMask {
    std::vector<int> free_idx;
    Eigen::VectorXd base;

    Eigen::VectorXd expand(const Eigen::VectorXd& free) const {
        Eigen::VectorXd full = base;
        for (size_t i = 0; i < free_idx.size(); ++i) full[free_idx[i]] = free[i];
        return full;
    }
    Eigen::VectorXd reduce(const Eigen::VectorXd& full) const {
        Eigen::VectorXd out(free_idx.size());
        for (size_t i = 0; i < free_idx.size(); ++i) out[i] = full[free_idx[i]];
        return out;
    }
};

FixedMask make_mask(int size, const std::vector<int>& fixed, const Eigen::VectorXd& base) {
    FixedMask mask;
    mask.base = base;
    std::vector<bool> is_fixed(size, false);
    for (int i : fixed) is_fixed[i] = true;
    for (int i = 0; i < size; ++i)
        if (!is_fixed[i]) mask.free_idx.push_back(i);
    return mask;
}

// Per-marker mixed sub-model fit ignoring the event (initialization step).
struct SubmodelFit {
    Eigen::VectorXd beta;
    double sigma2 = 1.0;
    Eigen::MatrixXd b_cov;
};

SubmodelFit fit_marker_submodel(const Dataset& ds, const MarkerDesign& design, Family family) {
    ModelSpec sub_spec;
    sub_spec.markers = {design};
    sub_spec.knots = 1;
    ResolvedModel sub = resolve_model(ds, sub_spec);
    ParameterLayout layout(sub);

    // moment-based start
    const int p_fix = 2 + static_cast<int>(design.covariates.size());
    std::vector<double> ys;
    std::vector<Eigen::VectorXd> ws;
    for (int si = 0; si < ds.n_subjects(); ++si) {
        for (int i = ds.obs_begin[si]; i < ds.obs_end[si]; ++i) {
            const auto& o = ds.observations[i];
            if (o.marker_id != design.marker_id) continue;
            Eigen::VectorXd w(p_fix);
            w[0] = 1.0;
            w[1] = o.time;
            for (size_t c = 0; c < design.covariates.size(); ++c)
                w[2 + c] = ds.subjects[si].covariates[ds.covariate_index(design.covariates[c])];
            ws.push_back(w);
            ys.push_back(o.value);
        }
    }
    if (ys.empty()) throw_data("no observations for marker " + std::to_string(design.marker_id));

    ParameterVector p0;
    Eigen::VectorXd beta0 = Eigen::VectorXd::Zero(p_fix);
    double resid_var = 1.0;
    if (family == Family::gaussian) {
        Eigen::MatrixXd w_all(ws.size(), p_fix);
        Eigen::VectorXd y_all(ys.size());
        for (size_t i = 0; i < ws.size(); ++i) {
            w_all.row(i) = ws[i];
            y_all[i] = ys[i];
        }
        beta0 = w_all.colPivHouseholderQr().solve(y_all);
        resid_var = std::max((y_all - w_all * beta0).squaredNorm() / std::max<size_t>(1, ys.size()), 1e-3);
    } else {
        double mean = 0.0;
        for (double y : ys) mean += y;
        mean = std::clamp(mean / ys.size(), 0.05, 0.95);
        beta0[0] = std::log(mean / (1.0 - mean));
    }
    p0.beta = {beta0};
    p0.sigma2 = {family == Family::gaussian ? 0.6 * resid_var : 1.0};
    const int d = sub.re_dim;
    p0.B = Eigen::MatrixXd::Identity(d, d);
    p0.B(0, 0) = family == Family::gaussian ? std::max(0.5 * resid_var, 0.05) : 1.0;
    if (d == 2) p0.B(1, 1) = family == Family::gaussian ? std::max(0.25 * resid_var, 0.02) : 0.25;
    p0.gamma = Eigen::VectorXd::Zero(0);
    p0.alpha = Eigen::VectorXd::Zero(1);
    p0.lambda0 = Eigen::VectorXd::Ones(1);

    Eigen::VectorXd theta0 = layout.pack(p0);
    std::vector<int> fixed = layout.alpha_indices();
    fixed.push_back(layout.size() - 1);  // single lambda0, unused without the survival factor
    FixedMask mask = make_mask(layout.size(), fixed, theta0);

    JointLoglikEvaluator eval_surv_off(ds, sub, auto_quad_points(d));
    // marker-only likelihood: drop the survival factor by zeroing alpha and
    // noting the survival factor is then a constant shared across parameters
    auto f = [&](const Eigen::VectorXd& free) { return eval_surv_off(layout.unpack(mask.expand(free))); };
    auto g = [&](const Eigen::VectorXd& free) { return fd_gradient(f, free); };

    MaximizeOptions mopts;
    mopts.max_iter = 150;
    mopts.grad_tol = 1e-2;
    MaximizeResult res = bfgs_maximize(f, g, mask.reduce(theta0), mopts);

    ParameterVector p_hat = layout.unpack(mask.expand(res.x));
    SubmodelFit out;
    out.beta = p_hat.beta[0];
    out.sigma2 = p_hat.sigma2[0];
    out.b_cov = p_hat.B;
    return out;
}

}  // namespace

FittedJointModel fit(const Dataset& ds, const ModelSpec& spec_in, const FitOptions& options) {
    ModelSpec spec = spec_in;
    if (options.knots > 0) spec.knots = options.knots;
    ResolvedModel model = resolve_model(ds, spec);

    int n_events = 0;
    for (const auto& s : ds.subjects) n_events += s.event;
    if (n_events == 0) throw_data("no events: survival parameters unidentifiable");

    const int q = options.quad_points > 0 ? options.quad_points : auto_quad_points(model.re_dim);
    ParameterLayout layout(model);

    // initialization: marker sub-models ignoring the event, Nelson-Aalen-style
    // baseline, alpha = 0
    ParameterVector p0;
    p0.B = Eigen::MatrixXd::Zero(model.re_dim, model.re_dim);
    for (int m = 0; m < model.n_markers(); ++m) {
        SubmodelFit sub = fit_marker_submodel(ds, model.spec.markers[m], model.families[m]);
        p0.beta.push_back(sub.beta);
        p0.sigma2.push_back(sub.sigma2);
        const int off = model.re_offset[m];
        const int sz = model.re_size[m];
        p0.B.block(off, off, sz, sz) = sub.b_cov;
    }
    for (int i = 0; i < model.re_dim; ++i) p0.B(i, i) = std::max(p0.B(i, i), 1e-4);
    p0.gamma = Eigen::VectorXd::Zero(model.spec.survival_covariates.size());
    p0.alpha = Eigen::VectorXd::Zero(model.n_markers());
    p0.lambda0.resize(model.n_pieces());
    for (int j = 0; j < model.n_pieces(); ++j) {
        double events = 0.0, exposure = 0.0;
        for (const auto& s : ds.subjects) {
            const double lo = model.knot_bounds[j];
            const double hi = model.knot_bounds[j + 1];
            exposure += std::max(0.0, std::min(s.observed_time, hi) - lo);
            if (s.event == 1 && s.observed_time > lo && (s.observed_time <= hi || j + 1 == model.n_pieces()))
                events += 1.0;
        }
        p0.lambda0[j] = std::max(events / std::max(exposure, 1e-9), 1e-6);
    }

    JointLoglikEvaluator eval(ds, model, q);
    Eigen::VectorXd theta0 = layout.pack(p0);

    std::vector<int> fixed;
    if (options.fix_alpha_zero) fixed = layout.alpha_indices();
    FixedMask mask = make_mask(layout.size(), fixed, theta0);
    auto f = [&](const Eigen::VectorXd& free) { return eval(layout.unpack(mask.expand(free))); };
    auto g = [&](const Eigen::VectorXd& free) { return fd_gradient(f, free); };

    Eigen::VectorXd x0 = mask.reduce(theta0);
    bool finite_start = std::isfinite(f(x0));
    for (int attempt = 0; !finite_start && attempt < 10; ++attempt) {
        for (int j = 0; j < model.n_pieces(); ++j) p0.lambda0[j] *= 0.3;
        p0.B *= 0.5;
        for (int i = 0; i < model.re_dim; ++i) p0.B(i, i) = std::max(p0.B(i, i), 1e-6);
        theta0 = layout.pack(p0);
        mask.base = theta0;
        x0 = mask.reduce(theta0);
        finite_start = std::isfinite(f(x0));
    }
    if (!finite_start) throw_numeric("initialization failure: likelihood not finite after 10 re-scalings");

    MaximizeOptions mopts;
    mopts.max_iter = options.max_iter;
    mopts.grad_tol = options.grad_tol;
    MaximizeResult res = bfgs_maximize(f, g, x0, mopts);
    std::vector<double> trace = res.trace;
    int iterations = res.iterations;
    for (int restart = 0; restart < 2 && !res.converged; ++restart) {
        MaximizeResult again = bfgs_maximize(f, g, res.x, mopts);
        iterations += again.iterations;
        if (again.f < res.f) break;
        trace.insert(trace.end(), again.trace.begin() + 1, again.trace.end());
        const bool progressed = again.f > res.f + 1e-9;
        res = std::move(again);
        res.trace = trace;
        if (!progressed) break;
    }

    FittedJointModel out;
    out.model = model;
    out.theta = mask.expand(res.x);
    out.estimate = layout.unpack(out.theta);
    out.loglik = res.f;
    out.converged = res.converged;
    out.iterations = iterations;
    out.grad_norm = res.grad.lpNorm<Eigen::Infinity>();
    out.trace = std::move(trace);
    out.quad_points = q;
    out.model_id = model.model_id(ds);

    out.covariance = Eigen::MatrixXd::Zero(layout.size(), layout.size());
    if (options.compute_covariance) {
        Eigen::MatrixXd h = fd_hessian(f, res.x);
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(-h);
        const double floor = 1e-10 * std::max(1.0, es.eigenvalues().cwiseAbs().maxCoeff());
        out.covariance_psd = es.eigenvalues().minCoeff() > 0.0;
        Eigen::VectorXd inv_ev(es.eigenvalues().size());
        for (int i = 0; i < inv_ev.size(); ++i) inv_ev[i] = 1.0 / std::max(es.eigenvalues()[i], floor);
        Eigen::MatrixXd cov_free = es.eigenvectors() * inv_ev.asDiagonal() * es.eigenvectors().transpose();
        for (size_t a = 0; a < mask.free_idx.size(); ++a)
            for (size_t b = 0; b < mask.free_idx.size(); ++b)
                out.covariance(mask.free_idx[a], mask.free_idx[b]) = cov_free(a, b);
        if (!out.covariance_psd) log_warn("observed information not positive definite for " + out.model_id);
    }

    // natural-scale estimates and delta-method standard errors
    out.natural = layout.natural(out.estimate);
    Eigen::MatrixXd jac(layout.natural_size(), layout.size());
    for (int i = 0; i < layout.size(); ++i) {
        const double h = 1e-6 * (1.0 + std::abs(out.theta[i]));
        Eigen::VectorXd tp = out.theta, tm = out.theta;
        tp[i] += h;
        tm[i] -= h;
        jac.col(i) = (layout.natural(layout.unpack(tp)) - layout.natural(layout.unpack(tm))) / (2.0 * h);
    }
    Eigen::MatrixXd nat_cov = jac * out.covariance * jac.transpose();
    out.natural_se.resize(layout.natural_size());
    for (int i = 0; i < layout.natural_size(); ++i) out.natural_se[i] = std::sqrt(std::max(nat_cov(i, i), 0.0));

    return out;
}

// ---------------------------------------------------------------------------
// Serialization

static nlohmann::json matrix_to_json(const Eigen::MatrixXd& m) {
    nlohmann::json rows = nlohmann::json::array();
    for (int i = 0; i < m.rows(); ++i) {
        nlohmann::json row = nlohmann::json::array();
        for (int j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
        rows.push_back(row);
    }
    return rows;
}

static Eigen::MatrixXd matrix_from_json(const nlohmann::json& j) {
    const int r = static_cast<int>(j.size());
    const int c = r == 0 ? 0 : static_cast<int>(j[0].size());
    Eigen::MatrixXd m(r, c);
    for (int i = 0; i < r; ++i)
        for (int k = 0; k < c; ++k) m(i, k) = j[i][k].get<double>();
    return m;
}

void save_model(const FittedJointModel& fm, const std::string& path) {
    nlohmann::json j;
    j["model_id"] = fm.model_id;
    nlohmann::json markers = nlohmann::json::array();
    for (const auto& mk : fm.model.spec.markers)
        markers.push_back({{"marker_id", mk.marker_id}, {"covariates", mk.covariates}, {"random_slope", mk.random_slope}});
    j["spec"] = {{"markers", markers},
                 {"survival_covariates", fm.model.spec.survival_covariates},
                 {"knots", fm.model.spec.knots}};
    nlohmann::json fams = nlohmann::json::array();
    for (auto f : fm.model.families) fams.push_back(f == Family::gaussian ? "gaussian" : "binary");
    j["families"] = fams;
    nlohmann::json cov_idx = nlohmann::json::array();
    for (const auto& v : fm.model.fixed_cov_idx) cov_idx.push_back(v);
    j["fixed_cov_idx"] = cov_idx;
    j["surv_cov_idx"] = fm.model.surv_cov_idx;
    j["knot_bounds"] = fm.model.knot_bounds;
    j["theta"] = std::vector<double>(fm.theta.data(), fm.theta.data() + fm.theta.size());
    j["covariance"] = matrix_to_json(fm.covariance);
    j["log_likelihood"] = fm.loglik;
    j["converged"] = fm.converged;
    j["iterations"] = fm.iterations;
    j["grad_norm"] = fm.grad_norm;
    j["covariance_psd"] = fm.covariance_psd;
    j["quad_points"] = fm.quad_points;
    j["natural"] = std::vector<double>(fm.natural.data(), fm.natural.data() + fm.natural.size());
    j["natural_se"] = std::vector<double>(fm.natural_se.data(), fm.natural_se.data() + fm.natural_se.size());
    ParameterLayout layout(fm.model);
    j["natural_names"] = layout.natural_names();
    j["estimation"] = "maximum_likelihood_asymptotic_draws";

    std::ofstream out(path);
    if (!out) throw_data("cannot write " + path);
    out << j.dump(2) << '\n';
}

FittedJointModel load_model(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw_data("cannot open " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const std::exception& e) {
        throw_config(std::string("invalid model file: ") + e.what());
    }

    FittedJointModel fm;
    fm.model_id = j.at("model_id").get<std::string>();
    for (const auto& mk : j.at("spec").at("markers")) {
        MarkerDesign d;
        d.marker_id = mk.at("marker_id").get<int>();
        d.covariates = mk.at("covariates").get<std::vector<std::string>>();
        d.random_slope = mk.at("random_slope").get<bool>();
        fm.model.spec.markers.push_back(d);
    }
    fm.model.spec.survival_covariates = j.at("spec").at("survival_covariates").get<std::vector<std::string>>();
    fm.model.spec.knots = j.at("spec").at("knots").get<int>();
    for (const auto& f : j.at("families"))
        fm.model.families.push_back(f.get<std::string>() == "gaussian" ? Family::gaussian : Family::binary);
    fm.model.fixed_cov_idx = j.at("fixed_cov_idx").get<std::vector<std::vector<int>>>();
    fm.model.surv_cov_idx = j.at("surv_cov_idx").get<std::vector<int>>();
    fm.model.knot_bounds = j.at("knot_bounds").get<std::vector<double>>();
    fm.model.re_dim = 0;
    for (const auto& mk : fm.model.spec.markers) {
        fm.model.re_offset.push_back(fm.model.re_dim);
        fm.model.re_size.push_back(mk.random_slope ? 2 : 1);
        fm.model.re_dim += mk.random_slope ? 2 : 1;
    }

    auto theta = j.at("theta").get<std::vector<double>>();
    fm.theta = Eigen::Map<Eigen::VectorXd>(theta.data(), theta.size());
    fm.covariance = matrix_from_json(j.at("covariance"));
    fm.loglik = j.at("log_likelihood").get<double>();
    fm.converged = j.at("converged").get<bool>();
    fm.iterations = j.at("iterations").get<int>();
    fm.grad_norm = j.at("grad_norm").get<double>();
    fm.covariance_psd = j.at("covariance_psd").get<bool>();
    fm.quad_points = j.at("quad_points").get<int>();
    auto nat = j.at("natural").get<std::vector<double>>();
    fm.natural = Eigen::Map<Eigen::VectorXd>(nat.data(), nat.size());
    auto nse = j.at("natural_se").get<std::vector<double>>();
    fm.natural_se = Eigen::Map<Eigen::VectorXd>(nse.data(), nse.size());

    ParameterLayout layout(fm.model);
    fm.estimate = layout.unpack(fm.theta);
    return fm;
}

}  // namespace mbsma
