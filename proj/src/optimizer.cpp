#include "optimizer.hpp"

#include <cmath>

#include "common.hpp"

namespace mbsma {

Eigen::VectorXd fd_gradient(const std::function<double(const Eigen::VectorXd&)>& f, const Eigen::VectorXd& x,
                            double rel_step) {
    const int n = static_cast<int>(x.size());
    Eigen::VectorXd g(n);
    Eigen::VectorXd xp = x;
    for (int i = 0; i < n; ++i) {
        const double h = rel_step * (1.0 + std::abs(x[i]));
        xp[i] = x[i] + h;
        const double fp = f(xp);
        xp[i] = x[i] - h;
        const double fm = f(xp);
        xp[i] = x[i];
        g[i] = (fp - fm) / (2.0 * h);
    }
    return g;
}

Eigen::MatrixXd fd_hessian(const std::function<double(const Eigen::VectorXd&)>& f, const Eigen::VectorXd& x,
                           double rel_step) {
    const int n = static_cast<int>(x.size());
    Eigen::MatrixXd h(n, n);
    Eigen::VectorXd step(n);
    for (int i = 0; i < n; ++i) step[i] = rel_step * (1.0 + std::abs(x[i]));

    const double f0 = f(x);
    Eigen::VectorXd xp = x;
    for (int i = 0; i < n; ++i) {
        xp[i] = x[i] + step[i];
        const double fp = f(xp);
        xp[i] = x[i] - step[i];
        const double fm = f(xp);
        xp[i] = x[i];
        h(i, i) = (fp - 2.0 * f0 + fm) / (step[i] * step[i]);
    }
    for (int i = 0; i < n; ++i) {
        for (int j = i + 1; j < n; ++j) {
            xp[i] = x[i] + step[i];
            xp[j] = x[j] + step[j];
            const double fpp = f(xp);
            xp[j] = x[j] - step[j];
            const double fpm = f(xp);
            xp[i] = x[i] - step[i];
            const double fmm = f(xp);
            xp[j] = x[j] + step[j];
            const double fmp = f(xp);
            xp[i] = x[i];
            xp[j] = x[j];
            h(i, j) = h(j, i) = (fpp - fpm - fmp + fmm) / (4.0 * step[i] * step[j]);
        }
    }
    return h;
}

MaximizeResult bfgs_maximize(const std::function<double(const Eigen::VectorXd&)>& f,
                             const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& grad,
                             Eigen::VectorXd x0, const MaximizeOptions& opts) {
    const int n = static_cast<int>(x0.size());
    MaximizeResult res;
    res.x = std::move(x0);
    res.f = f(res.x);
    if (!std::isfinite(res.f)) throw_numeric("objective not finite at the starting point");
    res.grad = grad(res.x);
    res.trace.push_back(res.f);

    Eigen::MatrixXd hinv = Eigen::MatrixXd::Identity(n, n);
    const double g0 = res.grad.lpNorm<Eigen::Infinity>();
    if (g0 > 1.0) hinv *= 1.0 / g0;

    int stalls = 0;
    for (int iter = 0; iter < opts.max_iter; ++iter) {
        res.iterations = iter;
        if (res.grad.lpNorm<Eigen::Infinity>() <= opts.grad_tol) {
            res.converged = true;
            return res;
        }

        Eigen::VectorXd dir = hinv * res.grad;
        double slope = dir.dot(res.grad);
        if (!(slope > 0.0) || !dir.allFinite()) {
            hinv = Eigen::MatrixXd::Identity(n, n);
            dir = res.grad;
            slope = dir.squaredNorm();
        }

        // Armijo backtracking on the ascent direction
        const double c1 = 1e-4;
        double step = 1.0;
        double f_new = -std::numeric_limits<double>::infinity();
        Eigen::VectorXd x_new;
        bool accepted = false;
        for (int ls = 0; ls < 40; ++ls) {
            x_new = res.x + step * dir;
            f_new = f(x_new);
            if (std::isfinite(f_new) && f_new >= res.f + c1 * step * slope) {
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if (!accepted) {
            ++stalls;
            if (stalls >= opts.stall_limit) return res;
            hinv = Eigen::MatrixXd::Identity(n, n) * (1.0 / std::max(1.0, res.grad.lpNorm<Eigen::Infinity>()));
            continue;
        }

        Eigen::VectorXd g_new = grad(x_new);
        Eigen::VectorXd s = x_new - res.x;
        Eigen::VectorXd y = res.grad - g_new;  // gradient of -f increases along s
        const double sy = s.dot(y);
        if (sy > 1e-12 * s.norm() * y.norm()) {
            // standard BFGS update of the inverse Hessian (minimization form on -f)
            Eigen::VectorXd hy = hinv * y;
            const double yhy = y.dot(hy);
            hinv += ((sy + yhy) / (sy * sy)) * (s * s.transpose());
            hinv -= (hy * s.transpose() + s * hy.transpose()) / sy;
        }

        const double improvement = f_new - res.f;
        res.x = std::move(x_new);
        res.f = f_new;
        res.grad = std::move(g_new);
        res.trace.push_back(res.f);

        if (improvement <= opts.f_tol * (std::abs(res.f) + 1.0)) {
            if (++stalls >= opts.stall_limit) {
                res.converged = res.grad.lpNorm<Eigen::Infinity>() <= opts.grad_tol;
                return res;
            }
        } else {
            stalls = 0;
        }
    }
    res.converged = res.grad.lpNorm<Eigen::Infinity>() <= opts.grad_tol;
    return res;
}

}  // namespace mbsma
