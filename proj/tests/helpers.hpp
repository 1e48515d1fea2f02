#pragma once

#include <cmath>
#include <functional>
#include <map>
#include <set>
#include <vector>

#include "peerfx/linalg.hpp"
#include "peerfx/rng.hpp"
#include "peerfx/types.hpp"

namespace testutil {

// Determinant by plain LU without pivog-free shortcuts; independent of the
// library's triangular-product reasoning.
inline double det_oracle(peerfx::Matrix a) {
    const int n = a.rows;
    double det = 1.0;
    for (int k = 0; k < n; ++k) {
        int piv = k;
        for (int i = k + 1; i < n; ++i) {
            if (std::fabs(a(i, k)) > std::fabs(a(piv, k))) piv = i;
        }
        if (a(piv, k) == 0.0) return 0.0;
        if (piv != k) {
            for (int j = 0; j < n; ++j) std::swap(a(piv, j), a(k, j));
            det = -det;
        }
        det *= a(k, k);
        for (int i = k + 1; i < n; ++i) {
            const double f = a(i, k) / a(k, k);
            for (int j = k; j < n; ++j) a(i, j) -= f * a(k, j);
        }
    }
    return det;
}

inline double binom_oracle(int n, int k) {
    if (k < 0 || k > n) return 0.0;
    double r = 1.0;
    for (int i = 1; i <= k; ++i) {
        r = r * static_cast<double>(n - k + i) / static_cast<double>(i);
    }
    return r;
}

// Second singular-value bound via Gram-Schmidt on the columns: the largest
// residual norm after projecting out the first column direction.
inline double rank_one_defect(const peerfx::Matrix& b) {
    const int n = b.rows;
    std::vector<double> u(static_cast<std::size_t>(n), 0.0);
    double best = 0.0;
    int ref = 0;
    for (int j = 0; j < n; ++j) {
        double norm = 0.0;
        for (int i = 0; i < n; ++i) norm += b(i, j) * b(i, j);
        if (norm > best) {
            best = norm;
            ref = j;
        }
    }
    if (best == 0.0) return 0.0;
    const double unorm = std::sqrt(best);
    for (int i = 0; i < n; ++i) u[static_cast<std::size_t>(i)] = b(i, ref) / unorm;
    double defect = 0.0;
    for (int j = 0; j < n; ++j) {
        double proj = 0.0;
        for (int i = 0; i < n; ++i) proj += u[static_cast<std::size_t>(i)] * b(i, j);
        double rnorm = 0.0;
        for (int i = 0; i < n; ++i) {
            const double r = b(i, j) - proj * u[static_cast<std::size_t>(i)];
            rnorm += r * r;
        }
        defect = std::max(defect, std::sqrt(rnorm));
    }
    return defect;
}

// Connected components by breadth-first search over an explicit adjacency
// map; oracle for the union-find implementation. Vertices are (side, size).
inline std::vector<std::set<std::pair<int, int>>> bfs_components(
    const std::vector<std::pair<int, int>>& edges) {
    std::map<std::pair<int, int>, std::set<std::pair<int, int>>> adj;
    for (const auto& [l, r] : edges) {
        const std::pair<int, int> a{0, l}, b{1, r};
        adj[a].insert(b);
        adj[b].insert(a);
    }
    std::set<std::pair<int, int>> seen;
    std::vector<std::set<std::pair<int, int>>> comps;
    for (const auto& [v, nbrs] : adj) {
        if (seen.count(v)) continue;
        std::set<std::pair<int, int>> comp;
        std::vector<std::pair<int, int>> stack{v};
        while (!stack.empty()) {
            const auto cur = stack.back();
            stack.pop_back();
            if (!comp.insert(cur).second) continue;
            for (const auto& nb : adj[cur]) {
                if (!comp.count(nb)) stack.push_back(nb);
            }
        }
        for (const auto& x : comp) seen.insert(x);
        comps.push_back(std::move(comp));
    }
    return comps;
}

inline double central_diff(const std::function<double(double)>& f, double x, double h) {
    return (f(x + h) - f(x - h)) / (2.0 * h);
}

}  // namespace testutil
