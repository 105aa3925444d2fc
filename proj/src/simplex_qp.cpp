#include "simplex_qp.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include <Eigen/Dense>

#include "common.hpp"

namespace mbsma {

Eigen::VectorXd project_simplex(const Eigen::VectorXd& v) {
    const int n = static_cast<int>(v.size());
    std::vector<double> u(v.data(), v.data() + n);
    std::sort(u.begin(), u.end(), std::greater<double>());
    double css = 0.0, tau = 0.0;
    int rho = -1;
    for (int j = 0; j < n; ++j) {
        css += u[j];
        const double cand = (css - 1.0) / (j + 1);
        if (u[j] - cand > 0.0) {
            rho = j;
            tau = cand;
        }
    }
    (void)rho;
    Eigen::VectorXd w(n);
    for (int i = 0; i < n; ++i) w[i] = std::max(v[i] - tau, 0.0);
    return w;
}

namespace {

double kkt_residual(const Eigen::MatrixXd& q, const Eigen::VectorXd& c, const Eigen::VectorXd& w) {
    const Eigen::VectorXd g = 2.0 * (q * w - c);
    const double mu = w.dot(g);
    double res = 0.0;
    for (int k = 0; k < w.size(); ++k) {
        if (w[k] > 0.0)
            res = std::max(res, std::abs(g[k] - mu));
        else
            res = std::max(res, std::max(0.0, mu - g[k]));
    }
    return res;
}

double objective(const Eigen::MatrixXd& q, const Eigen::VectorXd& c, const Eigen::VectorXd& w) {
    return w.dot(q * w) - 2.0 * c.dot(w);
}

// equality-constrained solve on a candidate active set; empty result on failure
bool polish_active_set(const Eigen::MatrixXd& q, const Eigen::VectorXd& c, std::vector<int> active,
                       Eigen::VectorXd& out) {
    const int n = static_cast<int>(c.size());
    for (int round = 0; round < n + 1 && !active.empty(); ++round) {
        const int m = static_cast<int>(active.size());
        Eigen::MatrixXd kkt = Eigen::MatrixXd::Zero(m + 1, m + 1);
        Eigen::VectorXd rhs(m + 1);
        for (int i = 0; i < m; ++i) {
            for (int j = 0; j < m; ++j) kkt(i, j) = 2.0 * q(active[i], active[j]);
            kkt(i, m) = 1.0;
            kkt(m, i) = 1.0;
            rhs[i] = 2.0 * c[active[i]];
        }
        rhs[m] = 1.0;
        Eigen::VectorXd sol = kkt.fullPivLu().solve(rhs);
        if (!sol.allFinite()) return false;

        int worst = -1;
        double worst_val = -1e-12;
        for (int i = 0; i < m; ++i)
            if (sol[i] < worst_val) {
                worst_val = sol[i];
                worst = i;
            }
        if (worst < 0) {
            out = Eigen::VectorXd::Zero(n);
            double total = 0.0;
            for (int i = 0; i < m; ++i) {
                out[active[i]] = std::max(sol[i], 0.0);
                total += out[active[i]];
            }
            out /= total;
            return true;
        }
        active.erase(active.begin() + worst);
    }
    return false;
}

}  // namespace

SimplexQpResult solve_simplex_qp(const Eigen::MatrixXd& q, const Eigen::VectorXd& c, double ridge, double kkt_tol,
                                 int max_iter) {
    const int n = static_cast<int>(c.size());
    if (n < 1) throw_config("empty weight problem");
    SimplexQpResult res;
    if (n == 1) {
        res.w = Eigen::VectorXd::Ones(1);
        res.objective = objective(q, c, res.w);
        res.kkt_residual = 0.0;
        return res;
    }

    Eigen::MatrixXd qr = q;
    qr.diagonal().array() += ridge;

    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(qr);
    const double lip = 2.0 * std::max(es.eigenvalues().maxCoeff(), ridge);
    const double step = 1.0 / lip;

    Eigen::VectorXd x = Eigen::VectorXd::Constant(n, 1.0 / n);
    Eigen::VectorXd y = x;
    double tk = 1.0;
    int iter = 0;
    for (; iter < max_iter; ++iter) {
        const Eigen::VectorXd grad = 2.0 * (qr * y - c);
        Eigen::VectorXd x_new = project_simplex(y - step * grad);
        if ((y - x_new).dot(x_new - x) > 0.0) {
            tk = 1.0;  // adaptive restart
            y = x_new;
        } else {
            const double t_next = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * tk * tk));
            y = x_new + ((tk - 1.0) / t_next) * (x_new - x);
            tk = t_next;
        }
        const double move = (x_new - x).lpNorm<Eigen::Infinity>();
        x = std::move(x_new);
        if ((iter & 31) == 0 || move < 1e-16) {
            if (kkt_residual(qr, c, x) <= 0.5 * kkt_tol) break;
            if (move < 1e-16 && iter > 64) break;
        }
    }

    // active-set polish for an exact stationary point
    std::vector<int> active;
    for (int k = 0; k < n; ++k)
        if (x[k] > 1e-10) active.push_back(k);
    Eigen::VectorXd polished;
    if (!active.empty() && polish_active_set(qr, c, active, polished)) {
        const double r_pol = kkt_residual(qr, c, polished);
        const double r_x = kkt_residual(qr, c, x);
        if (r_pol <= r_x || objective(qr, c, polished) <= objective(qr, c, x)) x = polished;
    }

    for (int k = 0; k < n; ++k)
        if (x[k] < 0.0) x[k] = 0.0;
    x /= x.sum();

    res.w = x;
    res.objective = objective(q, c, x);
    res.kkt_residual = kkt_residual(q, c, x);
    res.iterations = iter;
    return res;
}

}  // namespace mbsma
