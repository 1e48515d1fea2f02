#pragma once

#include <span>
#include <vector>

namespace peerfx {

// Minimal dense row-major matrix. Everything in this project is tiny
// (per-group systems up to a few dozen rows, mixing matrices up to
// nbar x nbar), so a hand-rolled solver keeps the dependency surface flat
// and the elimination order fully deterministic.
struct Matrix {
    int rows = 0;
    int cols = 0;
    std::vector<double> a;

    Matrix() = default;
    Matrix(int r, int c) : rows(r), cols(c), a(static_cast<std::size_t>(r) * c, 0.0) {}

    double& operator()(int i, int j) { return a[static_cast<std::size_t>(i) * cols + j]; }
    double operator()(int i, int j) const { return a[static_cast<std::size_t>(i) * cols + j]; }

    static Matrix identity(int n) {
        Matrix m(n, n);
        for (int i = 0; i < n; ++i) m(i, i) = 1.0;
        return m;
    }
};

// Solves A x = b by Gaussian elimination with partial pivoting.
// A and b are taken by value and consumed. Throws NumericalError on a
// (numerically) singular system.
std::vector<double> solve_dense(Matrix a, std::vector<double> b);

// Back-substitution for an upper-triangular system U x = b.
std::vector<double> solve_upper_triangular(const Matrix& u, std::span<const double> b);

double dot(std::span<const double> a, std::span<const double> b);

}  // namespace peerfx
