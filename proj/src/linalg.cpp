#include "peerfx/linalg.hpp"

#include <cmath>
#include <utility>

#include "peerfx/types.hpp"

namespace peerfx {

std::vector<double> solve_dense(Matrix a, std::vector<double> b) {
    const int n = a.rows;
    if (a.cols != n || static_cast<int>(b.size()) != n) {
        throw std::invalid_argument("solve_dense: shape mismatch");
    }
    double scale = 0.0;
    for (double v : a.a) scale = std::max(scale, std::fabs(v));
    const double tiny = (scale > 0.0 ? scale : 1.0) * 1e-14;

    for (int k = 0; k < n; ++k) {
        int piv = k;
        double best = std::fabs(a(k, k));
        for (int i = k + 1; i < n; ++i) {
            const double v = std::fabs(a(i, k));
            if (v > best) {
                best = v;
                piv = i;
            }
        }
        if (best < tiny) {
            throw NumericalError("solve_dense: singular system");
        }
        if (piv != k) {
            for (int j = k; j < n; ++j) std::swap(a(piv, j), a(k, j));
            std::swap(b[piv], b[k]);
        }
        const double inv = 1.0 / a(k, k);
        for (int i = k + 1; i < n; ++i) {
            const double f = a(i, k) * inv;
            if (f == 0.0) continue;
            a(i, k) = 0.0;
            for (int j = k + 1; j < n; ++j) a(i, j) -= f * a(k, j);
            b[i] -= f * b[k];
        }
    }
    std::vector<double> x(n, 0.0);
    for (int i = n - 1; i >= 0; --i) {
        double s = b[i];
        for (int j = i + 1; j < n; ++j) s -= a(i, j) * x[j];
        x[i] = s / a(i, i);
    }
    return x;
}

std::vector<double> solve_upper_triangular(const Matrix& u, std::span<const double> b) {
    const int n = u.rows;
    if (u.cols != n || static_cast<int>(b.size()) != n) {
        throw std::invalid_argument("solve_upper_triangular: shape mismatch");
    }
    std::vector<double> x(n, 0.0);
    for (int i = n - 1; i >= 0; --i) {
        const double d = u(i, i);
        if (d == 0.0) throw NumericalError("solve_upper_triangular: zero diagonal");
        double s = b[i];
        for (int j = i + 1; j < n; ++j) s -= u(i, j) * x[j];
        x[i] = s / d;
    }
    return x;
}

double dot(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

}  // namespace peerfx
