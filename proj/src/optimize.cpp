#include "peerfx/optimize.hpp"

#include <algorithm>
#include <cmath>

#include "peerfx/types.hpp"

namespace peerfx {

namespace {

double inf_norm(const std::vector<double>& v) {
    double m = 0.0;
    for (double x : v) m = std::max(m, std::fabs(x));
    return m;
}

// Cholesky solve for the damped normal equations; returns false when the
// matrix is not positive definite.
bool try_cholesky_solve(Matrix h, std::vector<double> b, std::vector<double>* out) {
    const int n = h.rows;
    for (int k = 0; k < n; ++k) {
        double d = h(k, k);
        for (int j = 0; j < k; ++j) d -= h(k, j) * h(k, j);
        if (!(d > 0.0)) return false;
        const double r = std::sqrt(d);
        h(k, k) = r;
        for (int i = k + 1; i < n; ++i) {
            double s = h(i, k);
            for (int j = 0; j < k; ++j) s -= h(i, j) * h(k, j);
            h(i, k) = s / r;
        }
    }
    for (int i = 0; i < n; ++i) {
        double s = b[i];
        for (int j = 0; j < i; ++j) s -= h(i, j) * b[j];
        b[i] = s / h(i, i);
    }
    for (int i = n - 1; i >= 0; --i) {
        double s = b[i];
        for (int j = i + 1; j < n; ++j) s -= h(j, i) * b[j];
        b[i] = s / h(i, i);
    }
    *out = std::move(b);
    return true;
}

}  // namespace

LMResult levenberg_marquardt(const LeastSquaresFunction& f, std::vector<double> x0,
                             const LMOptions& opts) {
    const int p = f.dim();
    LMResult res;
    res.x = std::move(x0);

    std::vector<double> grad(p, 0.0);
    Matrix gn(p, p);
    double ssr = f.eval(res.x, &grad, &gn);
    double lambda = opts.lambda0;

    int iter = 0;
    for (; iter < opts.max_iterations; ++iter) {
        if (inf_norm(grad) <= opts.grad_tol) {
            res.converged = true;
            break;
        }
        // (J^T J + lambda diag(J^T J)) step = -J^T r
        bool stepped = false;
        double step_norm = 0.0;
        while (lambda <= 1e12) {
            Matrix damped = gn;
            for (int i = 0; i < p; ++i) {
                const double d = damped(i, i);
                damped(i, i) = d + lambda * (d > 0.0 ? d : 1.0);
            }
            std::vector<double> rhs(p);
            for (int i = 0; i < p; ++i) rhs[i] = -grad[i];
            std::vector<double> step;
            if (!try_cholesky_solve(damped, rhs, &step)) {
                lambda *= 4.0;
                continue;
            }
            std::vector<double> trial(res.x);
            for (int i = 0; i < p; ++i) trial[i] += step[i];
            const double trial_ssr = f.eval(trial, nullptr, nullptr);
            if (trial_ssr <= ssr) {
                step_norm = inf_norm(step);
                res.x = std::move(trial);
                ssr = trial_ssr;
                lambda = std::max(lambda / 3.0, 1e-12);
                stepped = true;
                break;
            }
            lambda *= 4.0;
        }
        if (!stepped) {
            // No damping level improves the objective: local minimum to
            // working precision.
            res.converged = true;
            break;
        }
        ssr = f.eval(res.x, &grad, &gn);
        if (step_norm <= opts.step_tol * (1.0 + inf_norm(res.x))) {
            res.converged = true;
            ++iter;
            break;
        }
    }
    res.objective = ssr;
    res.grad_norm = inf_norm(grad);
    res.iterations = iter;
    if (res.grad_norm <= opts.grad_tol) res.converged = true;
    return res;
}

NewtonResult minimize_newton(
    const std::function<double(std::span<const double>, std::vector<double>*)>& value_and_grad,
    std::vector<double> x0, const NewtonOptions& opts) {
    const int p = static_cast<int>(x0.size());
    NewtonResult res;
    res.x = std::move(x0);

    std::vector<double> grad(p, 0.0);
    double value = value_and_grad(res.x, &grad);

    int iter = 0;
    for (; iter < opts.max_iterations; ++iter) {
        if (inf_norm(grad) <= opts.grad_tol) {
            res.converged = true;
            break;
        }
        // Hessian by central differences of the analytic gradient.
        Matrix hess(p, p);
        std::vector<double> gp(p), gm(p);
        for (int j = 0; j < p; ++j) {
            const double h = 1e-5 * std::max(1.0, std::fabs(res.x[j]));
            std::vector<double> xp(res.x), xm(res.x);
            xp[j] += h;
            xm[j] -= h;
            value_and_grad(xp, &gp);
            value_and_grad(xm, &gm);
            for (int i = 0; i < p; ++i) hess(i, j) = (gp[i] - gm[i]) / (2.0 * h);
        }
        for (int i = 0; i < p; ++i) {
            for (int j = i + 1; j < p; ++j) {
                const double s = 0.5 * (hess(i, j) + hess(j, i));
                hess(i, j) = hess(j, i) = s;
            }
        }
        // Regularize until the factorization goes through.
        std::vector<double> step;
        double mu = 0.0;
        double hscale = 0.0;
        for (int i = 0; i < p; ++i) hscale = std::max(hscale, std::fabs(hess(i, i)));
        if (hscale == 0.0) hscale = 1.0;
        for (int attempt = 0; attempt < 60; ++attempt) {
            Matrix damped = hess;
            for (int i = 0; i < p; ++i) damped(i, i) += mu;
            std::vector<double> rhs(p);
            for (int i = 0; i < p; ++i) rhs[i] = -grad[i];
            if (try_cholesky_solve(damped, rhs, &step)) break;
            step.clear();
            mu = (mu == 0.0) ? 1e-8 * hscale : mu * 10.0;
        }
        if (step.empty()) {
            for (int i = 0; i < p; ++i) step.push_back(-grad[i] / hscale);
        }
        // Backtracking line search.
        double t = 1.0;
        bool accepted = false;
        for (int ls = 0; ls < 40; ++ls) {
            std::vector<double> trial(res.x);
            for (int i = 0; i < p; ++i) trial[i] = clamp_z(trial[i] + t * step[i]);
            const double tv = value_and_grad(trial, nullptr);
            if (tv < value) {
                const double moved = inf_norm(step) * t;
                res.x = std::move(trial);
                value = tv;
                accepted = true;
                if (moved <= opts.step_tol * (1.0 + inf_norm(res.x))) {
                    value = value_and_grad(res.x, &grad);
                    res.converged = true;
                }
                break;
            }
            t *= 0.5;
        }
        if (!accepted) {
            res.converged = true;  // no descent available at working precision
            break;
        }
        value = value_and_grad(res.x, &grad);
        if (res.converged) break;
    }
    res.value = value;
    res.grad_norm = inf_norm(grad);
    res.iterations = iter;
    if (res.grad_norm <= opts.grad_tol) res.converged = true;
    return res;
}

}  // namespace peerfx
