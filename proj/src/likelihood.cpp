#include "likelihood.hpp"

#include <cmath>

#include <Eigen/Cholesky>

#include "common.hpp"
#include "quadrature.hpp"

namespace mbsma {

namespace {

constexpr double kExpGuard = 700.0;  // exponents above this mean Lambda overflows

// phi_r(w) = integral_0^1 v^(r-1) exp(w v) dv, stable near w = 0
double phi1(double w) {
    if (w == 0.0) return 1.0;
    return std::expm1(w) / w;
}

double phi2(double w) {
    if (std::abs(w) < 0.5) {
        double term = 1.0, acc = 0.5;  // m = 0 term
        for (int m = 1; m < 24; ++m) {
            term *= w / m;
            const double add = term / (m + 2);
            acc += add;
            if (std::abs(add) < 1e-17 * std::abs(acc)) break;
        }
        return acc;
    }
    return (std::exp(w) * (w - 1.0) + 1.0) / (w * w);
}

double phi3(double w) {
    if (std::abs(w) < 0.5) {
        double term = 1.0, acc = 1.0 / 3.0;
        for (int m = 1; m < 24; ++m) {
            term *= w / m;
            const double add = term / (m + 3);
            acc += add;
            if (std::abs(add) < 1e-17 * std::abs(acc)) break;
        }
        return acc;
    }
    return (std::exp(w) * (w * w - 2.0 * w + 2.0) - 2.0) / (w * w * w);
}

double softplus(double m) { return std::max(m, 0.0) + std::log1p(std::exp(-std::abs(m))); }

struct PieceSpan {
    double lo, hi, lam;
};

// pieces of the baseline hazard restricted to [from, to]; the last piece
// extends past the final knot
std::vector<PieceSpan> make_pieces(const std::vector<double>& bounds, const Eigen::VectorXd& lambda0, double from,
                                   double to) {
    std::vector<PieceSpan> out;
    if (!(to > from)) return out;
    const int n_pieces = static_cast<int>(bounds.size()) - 1;
    for (int j = 0; j < n_pieces; ++j) {
        const double lo = std::max(bounds[j], from);
        const double hi = (j + 1 == n_pieces) ? to : std::min(bounds[j + 1], to);
        if (hi > lo) out.push_back({lo, hi, lambda0[j]});
    }
    return out;
}

template <typename Pieces>
double cum_hazard_ac(double a, double c, const Pieces& pieces) {
    double acc = 0.0;
    for (const auto& p : pieces) {
        const double e_lo = a + c * p.lo;
        const double e_hi = a + c * p.hi;
        if (std::max(e_lo, e_hi) > kExpGuard) return std::numeric_limits<double>::infinity();
        const double w = e_hi - e_lo;
        if (std::abs(w) < 1e-3) {
            acc += p.lam * (p.hi - p.lo) * std::exp(e_lo) * phi1(w);
        } else {
            acc += p.lam * (std::exp(e_hi) - std::exp(e_lo)) / c;
        }
    }
    return acc;
}

template <typename Pieces>
void hazard_integrals_ac(double a, double c, const Pieces& pieces, double& i0, double& i1, double& i2) {
    i0 = i1 = i2 = 0.0;
    for (const auto& p : pieces) {
        const double d = p.hi - p.lo;
        const double e_lo = a + c * p.lo;
        const double w = c * d;
        const double base = p.lam * d * std::exp(e_lo);
        const double f1 = phi1(w), f2 = phi2(w), f3 = phi3(w);
        i0 += base * f1;
        i1 += base * (p.lo * f1 + d * f2);
        i2 += base * (p.lo * p.lo * f1 + 2.0 * p.lo * d * f2 + d * d * f3);
    }
}

}  // namespace

SubjectData make_subject_data(const Dataset& ds, const ResolvedModel& model, int si) {
    const auto& rec = ds.subjects[si];
    SubjectData out;
    out.id = rec.subject_id;
    out.obs_time = rec.observed_time;
    out.event = rec.event;
    out.x_full = rec.covariates;
    out.x_surv.resize(model.surv_cov_idx.size());
    for (size_t j = 0; j < model.surv_cov_idx.size(); ++j) out.x_surv[j] = rec.covariates[model.surv_cov_idx[j]];

    out.markers.resize(model.n_markers());
    for (int m = 0; m < model.n_markers(); ++m) {
        const int marker_id = model.spec.markers[m].marker_id;
        std::vector<double> times, values;
        for (int i = ds.obs_begin[si]; i < ds.obs_end[si]; ++i) {
            if (ds.observations[i].marker_id != marker_id) continue;
            times.push_back(ds.observations[i].time);
            values.push_back(ds.observations[i].value);
        }
        auto& mk = out.markers[m];
        const int n = static_cast<int>(times.size());
        const auto& cov_idx = model.fixed_cov_idx[m];
        mk.times = Eigen::Map<Eigen::VectorXd>(times.data(), n);
        mk.values = Eigen::Map<Eigen::VectorXd>(values.data(), n);
        mk.w.resize(n, 2 + cov_idx.size());
        for (int j = 0; j < n; ++j) {
            mk.w(j, 0) = 1.0;
            mk.w(j, 1) = times[j];
            for (size_t cidx = 0; cidx < cov_idx.size(); ++cidx) mk.w(j, 2 + cidx) = rec.covariates[cov_idx[cidx]];
        }
    }
    return out;
}

SubjectData make_subject_data(const SubjectHistory& h, const ResolvedModel& model) {
    SubjectData out;
    out.id = h.subject_id;
    out.obs_time = h.landmark;  // history carries data up to the landmark only
    out.event = 0;
    out.x_full = h.covariates;
    out.x_surv.resize(model.surv_cov_idx.size());
    for (size_t j = 0; j < model.surv_cov_idx.size(); ++j) out.x_surv[j] = h.covariates[model.surv_cov_idx[j]];

    out.markers.resize(model.n_markers());
    for (int m = 0; m < model.n_markers(); ++m) {
        const int marker_id = model.spec.markers[m].marker_id;
        std::vector<double> times, values;
        for (const auto& o : h.marker_values) {
            if (o.marker_id != marker_id) continue;
            times.push_back(o.time);
            values.push_back(o.value);
        }
        auto& mk = out.markers[m];
        const int n = static_cast<int>(times.size());
        const auto& cov_idx = model.fixed_cov_idx[m];
        mk.times = Eigen::Map<Eigen::VectorXd>(times.data(), n);
        mk.values = Eigen::Map<Eigen::VectorXd>(values.data(), n);
        mk.w.resize(n, 2 + cov_idx.size());
        for (int j = 0; j < n; ++j) {
            mk.w(j, 0) = 1.0;
            mk.w(j, 1) = times[j];
            for (size_t cidx = 0; cidx < cov_idx.size(); ++cidx) mk.w(j, 2 + cidx) = h.covariates[cov_idx[cidx]];
        }
    }
    return out;
}

HazardCoeffs hazard_coeffs(const ResolvedModel& model, const ParameterVector& p, const Eigen::VectorXd& x_full) {
    HazardCoeffs hc;
    hc.avec = Eigen::VectorXd::Zero(model.re_dim);
    hc.cvec = Eigen::VectorXd::Zero(model.re_dim);
    for (size_t j = 0; j < model.surv_cov_idx.size(); ++j) hc.a0 += p.gamma[j] * x_full[model.surv_cov_idx[j]];
    for (int m = 0; m < model.n_markers(); ++m) {
        const double alpha = p.alpha[m];
        double a_fix = p.beta[m][0];
        for (size_t cidx = 0; cidx < model.fixed_cov_idx[m].size(); ++cidx)
            a_fix += p.beta[m][2 + cidx] * x_full[model.fixed_cov_idx[m][cidx]];
        hc.a0 += alpha * a_fix;
        hc.c0 += alpha * p.beta[m][1];
        hc.avec[model.re_offset[m]] = alpha;
        if (model.re_size[m] == 2) hc.cvec[model.re_offset[m] + 1] = alpha;
    }
    return hc;
}

SubjectTarget::SubjectTarget(const ResolvedModel& model, const ParameterVector& p, const SubjectData& data,
                             double tau, bool include_event, bool include_survival)
    : dim_(model.re_dim), id_(data.id) {
    c0q_ = 0.0;
    rq_ = Eigen::VectorXd::Zero(dim_);
    mq_ = Eigen::MatrixXd::Zero(dim_, dim_);

    // longitudinal observations up to tau
    for (int m = 0; m < model.n_markers(); ++m) {
        const auto& mk = data.markers[m];
        const int off = model.re_offset[m];
        const int zdim = model.re_size[m];
        if (model.families[m] == Family::gaussian) {
            const double s2 = p.sigma2[m];
            const double lognorm = -0.5 * std::log(2.0 * M_PI * s2);
            for (int j = 0; j < mk.times.size(); ++j) {
                if (mk.times[j] > tau) continue;
                const double r0 = mk.values[j] - mk.w.row(j).dot(p.beta[m]);
                c0q_ += lognorm - r0 * r0 / (2.0 * s2);
                const double t = mk.times[j];
                rq_[off] += r0 / s2;
                mq_(off, off) += 1.0 / s2;
                if (zdim == 2) {
                    rq_[off + 1] += t * r0 / s2;
                    mq_(off, off + 1) += t / s2;
                    mq_(off + 1, off) += t / s2;
                    mq_(off + 1, off + 1) += t * t / s2;
                }
            }
        } else {
            for (int j = 0; j < mk.times.size(); ++j) {
                if (mk.times[j] > tau) continue;
                bin_.push_back({off, zdim, mk.times[j], mk.values[j], mk.w.row(j).dot(p.beta[m])});
            }
        }
    }

    // prior
    Eigen::LLT<Eigen::MatrixXd> lltB(p.B);
    if (lltB.info() != Eigen::Success) throw_numeric("random-effect covariance not positive definite");
    Eigen::MatrixXd binv = lltB.solve(Eigen::MatrixXd::Identity(dim_, dim_));
    mq_ += binv;
    double logdet = 0.0;
    for (int i = 0; i < dim_; ++i) logdet += 2.0 * std::log(lltB.matrixL()(i, i));
    c0q_ += -0.5 * (dim_ * std::log(2.0 * M_PI) + logdet);

    survival_ = include_survival;
    if (survival_) {
        hz_ = hazard_coeffs(model, p, data.x_full);
        knot_bounds_ = model.knot_bounds;
        lambda0_ = p.lambda0;
        auto spans = make_pieces(knot_bounds_, lambda0_, 0.0, tau);
        for (const auto& s : spans) pieces_.push_back({s.lo, s.hi, s.lam, std::log(s.lam)});

        if (include_event && data.event == 1) {
            // event factor log lambda(T*|b), affine in b
            const double te = data.obs_time;
            const int n_pieces = model.n_pieces();
            int piece = n_pieces - 1;
            for (int j = 0; j < n_pieces; ++j)
                if (te >= model.knot_bounds[j] && te < model.knot_bounds[j + 1]) {
                    piece = j;
                    break;
                }
            c0q_ += std::log(p.lambda0[piece]) + hz_.a0 + hz_.c0 * te;
            rq_ += hz_.avec + hz_.cvec * te;
        }
    }
}

void SubjectTarget::hazard_integrals(const Eigen::VectorXd& b, double& i0, double& i1, double& i2) const {
    const double a = hz_.a0 + hz_.avec.dot(b);
    const double c = hz_.c0 + hz_.cvec.dot(b);
    hazard_integrals_ac(a, c, pieces_, i0, i1, i2);
}

double SubjectTarget::value(const Eigen::VectorXd& b) const {
    double v = c0q_ + rq_.dot(b) - 0.5 * b.dot(mq_ * b);
    for (const auto& o : bin_) {
        const double m = o.o + b[o.off] + (o.zdim == 2 ? o.t * b[o.off + 1] : 0.0);
        v += o.y * m - softplus(m);
    }
    if (survival_ && !pieces_.empty()) {
        const double a = hz_.a0 + hz_.avec.dot(b);
        const double c = hz_.c0 + hz_.cvec.dot(b);
        v -= cum_hazard_ac(a, c, pieces_);
    }
    return v;
}

double SubjectTarget::value_grad_hess(const Eigen::VectorXd& b, Eigen::VectorXd& grad, Eigen::MatrixXd& hess) const {
    double v = c0q_ + rq_.dot(b) - 0.5 * b.dot(mq_ * b);
    grad = rq_ - mq_ * b;
    hess = -mq_;
    for (const auto& o : bin_) {
        const double m = o.o + b[o.off] + (o.zdim == 2 ? o.t * b[o.off + 1] : 0.0);
        v += o.y * m - softplus(m);
        const double p = 1.0 / (1.0 + std::exp(-m));
        const double res = o.y - p;
        const double wgt = p * (1.0 - p);
        grad[o.off] += res;
        hess(o.off, o.off) -= wgt;
        if (o.zdim == 2) {
            grad[o.off + 1] += o.t * res;
            hess(o.off, o.off + 1) -= o.t * wgt;
            hess(o.off + 1, o.off) -= o.t * wgt;
            hess(o.off + 1, o.off + 1) -= o.t * o.t * wgt;
        }
    }
    if (survival_ && !pieces_.empty()) {
        double i0, i1, i2;
        hazard_integrals(b, i0, i1, i2);
        v -= i0;
        grad -= hz_.avec * i0 + hz_.cvec * i1;
        hess -= hz_.avec * hz_.avec.transpose() * i0 +
                (hz_.avec * hz_.cvec.transpose() + hz_.cvec * hz_.avec.transpose()) * i1 +
                hz_.cvec * hz_.cvec.transpose() * i2;
    }
    return v;
}

void SubjectTarget::value_batch(const Eigen::MatrixXd& bpts, Eigen::VectorXd& out) const {
    const int n = static_cast<int>(bpts.rows());
    out = ((bpts * mq_).cwiseProduct(bpts).rowwise().sum() * -0.5);
    out.array() += c0q_;
    out.noalias() += bpts * rq_;

    Eigen::ArrayXd m(n);
    for (const auto& o : bin_) {
        m = o.o + bpts.col(o.off).array();
        if (o.zdim == 2) m += o.t * bpts.col(o.off + 1).array();
        out.array() += o.y * m - (m.max(0.0) + (-m.abs()).exp().log1p());
    }

    if (survival_ && !pieces_.empty()) {
        Eigen::ArrayXd av = hz_.a0 + (bpts * hz_.avec).array();
        Eigen::ArrayXd cv = hz_.c0 + (bpts * hz_.cvec).array();
        Eigen::ArrayXd lam = Eigen::ArrayXd::Zero(n);
        Eigen::ArrayXd e_prev = (av + cv * pieces_.front().lo).exp();
        double max_width = 0.0;
        for (const auto& pc : pieces_) {
            Eigen::ArrayXd e_next = (av + cv * pc.hi).exp();
            lam += pc.lam * (e_next - e_prev) / cv;
            e_prev.swap(e_next);
            max_width = std::max(max_width, pc.hi - pc.lo);
        }
        for (int i = 0; i < n; ++i) {
            if (std::isfinite(lam[i]) && std::abs(cv[i]) * max_width >= 1e-3) continue;
            lam[i] = cum_hazard_ac(av[i], cv[i], pieces_);
        }
        out.array() -= lam;
        for (int i = 0; i < n; ++i)
            if (!std::isfinite(out[i])) out[i] = -std::numeric_limits<double>::infinity();
    }
}

double SubjectTarget::cumulative_hazard_between(const Eigen::VectorXd& b, double t1, double t2) const {
    if (!survival_) throw_numeric("survival part not active for this target");
    const double a = hz_.a0 + hz_.avec.dot(b);
    const double c = hz_.c0 + hz_.cvec.dot(b);
    return cum_hazard_ac(a, c, make_pieces(knot_bounds_, lambda0_, t1, t2));
}

bool SubjectTarget::mode(Eigen::VectorXd& b, Eigen::MatrixXd& curvature, const Eigen::VectorXd* warm) const {
    b = (warm && warm->size() == dim_ && warm->allFinite()) ? *warm : Eigen::VectorXd::Zero(dim_);
    double v = value(b);
    if (!std::isfinite(v)) {
        b.setZero();
        v = value(b);
        if (!std::isfinite(v)) return false;
    }

    Eigen::VectorXd grad(dim_), dir(dim_);
    Eigen::MatrixXd hess(dim_, dim_);
    for (int iter = 0; iter < 100; ++iter) {
        v = value_grad_hess(b, grad, hess);
        if (!grad.allFinite() || !hess.allFinite())
            throw_numeric("mode search failed for subject '" + id_ + "' (non-finite derivatives)");
        Eigen::MatrixXd h = -hess;
        Eigen::LLT<Eigen::MatrixXd> llt(h);
        for (int tries = 0; llt.info() != Eigen::Success && tries < 4; ++tries) {
            h.diagonal().array() += 1e-8 * (1.0 + h.diagonal().cwiseAbs().maxCoeff());
            llt.compute(h);
        }
        if (llt.info() != Eigen::Success) throw_numeric("mode search failed for subject '" + id_ + "' (curvature)");

        const double gnorm = grad.lpNorm<Eigen::Infinity>();
        if (gnorm <= 1e-10 * (1.0 + std::abs(v))) {
            curvature = -hess;
            return true;
        }
        dir = llt.solve(grad);
        double step = 1.0;
        bool moved = false;
        for (int ls = 0; ls < 50; ++ls) {
            const double v_new = value(b + step * dir);
            if (std::isfinite(v_new) && v_new >= v) {
                b += step * dir;
                v = v_new;
                moved = true;
                break;
            }
            step *= 0.5;
        }
        if (!moved) {
            if (gnorm <= 1e-6 * (1.0 + std::abs(v))) {
                curvature = -hess;
                return true;
            }
            throw_numeric("mode search failed for subject '" + id_ + "' (line search)");
        }
    }
    Eigen::VectorXd g2(dim_);
    const double v2 = value_grad_hess(b, g2, hess);
    if (g2.lpNorm<Eigen::Infinity>() <= 1e-5 * (1.0 + std::abs(v2))) {
        curvature = -hess;
        return true;
    }
    throw_numeric("mode search failed for subject '" + id_ + "' (no convergence)");
}

double SubjectTarget::log_integral(int q, Eigen::VectorXd* mode_out, Eigen::MatrixXd* curvature_out,
                                   const Eigen::VectorXd* warm) const {
    Eigen::VectorXd bhat;
    Eigen::MatrixXd curv;
    if (!mode(bhat, curv, warm)) return -std::numeric_limits<double>::infinity();
    if (mode_out) *mode_out = bhat;
    if (curvature_out) *curvature_out = curv;

    Eigen::LLT<Eigen::MatrixXd> llt_h(curv);
    for (int tries = 0; llt_h.info() != Eigen::Success && tries < 4; ++tries) {
        curv.diagonal().array() += 1e-8 * (1.0 + curv.diagonal().cwiseAbs().maxCoeff());
        llt_h.compute(curv);
    }
    if (llt_h.info() != Eigen::Success)
        throw_numeric("quadrature scaling failed for subject '" + id_ + "'");
    Eigen::MatrixXd sigma = llt_h.solve(Eigen::MatrixXd::Identity(dim_, dim_));
    Eigen::LLT<Eigen::MatrixXd> llt_s(sigma);
    for (int tries = 0; llt_s.info() != Eigen::Success && tries < 4; ++tries) {
        sigma.diagonal().array() += 1e-12 * (1.0 + sigma.diagonal().cwiseAbs().maxCoeff());
        llt_s.compute(sigma);
    }
    if (llt_s.info() != Eigen::Success)
        throw_numeric("quadrature scaling failed for subject '" + id_ + "'");
    Eigen::MatrixXd l = llt_s.matrixL();

    const TensorRule& rule = tensor_rule(q, dim_);
    Eigen::MatrixXd bpts = rule.z * l.transpose() * std::sqrt(2.0);
    bpts.rowwise() += bhat.transpose();

    Eigen::VectorXd vals;
    value_batch(bpts, vals);
    vals += rule.logw;
    const double vmax = vals.maxCoeff();
    if (!std::isfinite(vmax)) return -std::numeric_limits<double>::infinity();
    const double lse = vmax + std::log((vals.array() - vmax).exp().sum());

    double logdet_l = 0.0;
    for (int i = 0; i < dim_; ++i) logdet_l += std::log(l(i, i));
    return 0.5 * dim_ * std::log(2.0) + logdet_l + lse;
}

JointLoglikEvaluator::JointLoglikEvaluator(const Dataset& ds, const ResolvedModel& model, int q)
    : model_(model), q_(q) {
    const int n = ds.n_subjects();
    data_.reserve(n);
    for (int i = 0; i < n; ++i) data_.push_back(make_subject_data(ds, model, i));
    warm_.resize(n);
    has_warm_.assign(n, false);
}

double JointLoglikEvaluator::operator()(const ParameterVector& p) {
    double total = 0.0;
    for (size_t i = 0; i < data_.size(); ++i) {
        SubjectTarget tgt(model_, p, data_[i], data_[i].obs_time, data_[i].event == 1, true);
        Eigen::VectorXd mode_i;
        const double ll = tgt.log_integral(q_, &mode_i, nullptr, has_warm_[i] ? &warm_[i] : nullptr);
        if (!std::isfinite(ll)) return -std::numeric_limits<double>::infinity();
        warm_[i] = mode_i;
        has_warm_[i] = true;
        total += ll;
    }
    return total;
}

}  // namespace mbsma
