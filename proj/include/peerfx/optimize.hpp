#pragma once

#include <cmath>
#include <functional>
#include <span>
#include <vector>

#include "peerfx/linalg.hpp"

namespace peerfx {

// Smooth bijections used to run unconstrained optimizers over bounded
// parameters. z is clamped to +/-37: beyond that the mapped value is
// indistinguishable from the bound in double precision.

inline double clamp_z(double z) { return z < -37.0 ? -37.0 : (z > 37.0 ? 37.0 : z); }

struct TanhBox {  // symmetric open interval (-bound, bound)
    double bound = 1.0 - 1e-6;
    double to_model(double z) const { return bound * std::tanh(clamp_z(z)); }
    double from_model(double b) const {
        double t = b / bound;
        if (t >= 1.0) return 37.0;
        if (t <= -1.0) return -37.0;
        return std::atanh(t);
    }
    double deriv(double z) const {
        const double t = std::tanh(clamp_z(z));
        return bound * (1.0 - t * t);
    }
};

struct LogisticBox {  // interval [lo, hi], approached asymptotically
    double lo = 0.0;
    double hi = 1.0;
    double to_model(double z) const { return lo + (hi - lo) / (1.0 + std::exp(-clamp_z(z))); }
    double from_model(double v) const {
        const double t = (v - lo) / (hi - lo);
        if (t <= 0.0) return -37.0;
        if (t >= 1.0) return 37.0;
        return std::log(t / (1.0 - t));
    }
    double deriv(double z) const {
        const double s = 1.0 / (1.0 + std::exp(-clamp_z(z)));
        return (hi - lo) * s * (1.0 - s);
    }
};

struct LMOptions {
    int max_iterations = 500;
    double grad_tol = 1e-9;
    double step_tol = 1e-12;
    double lambda0 = 1e-3;
};

struct LMResult {
    std::vector<double> x;
    double objective = 0.0;  // sum of squared residuals
    double grad_norm = 0.0;  // infinity norm of J^T r
    bool converged = false;
    int iterations = 0;
};

// A sum-of-squares objective evaluated through its normal equations: eval
// returns the SSR and, when requested, fills grad = J^T r and gn = J^T J so
// large row counts never materialize the Jacobian.
class LeastSquaresFunction {
  public:
    virtual ~LeastSquaresFunction() = default;
    virtual int dim() const = 0;
    virtual double eval(std::span<const double> x, std::vector<double>* grad,
                        Matrix* gn) const = 0;
};

// Levenberg-Marquardt with Marquardt diagonal scaling.
LMResult levenberg_marquardt(const LeastSquaresFunction& f, std::vector<double> x0,
                             const LMOptions& opts = {});

struct NewtonOptions {
    int max_iterations = 500;
    double grad_tol = 1e-11;
    double step_tol = 1e-12;
};

struct NewtonResult {
    std::vector<double> x;
    double value = 0.0;
    double grad_norm = 0.0;
    bool converged = false;
    int iterations = 0;
};

// Damped Newton minimizer for small smooth problems. The Hessian is built
// by central differences of the supplied gradient and regularized until the
// factorization succeeds; steps are backtracked on the objective.
NewtonResult minimize_newton(
    const std::function<double(std::span<const double>, std::vector<double>*)>& value_and_grad,
    std::vector<double> x0, const NewtonOptions& opts = {});

}  // namespace peerfx
