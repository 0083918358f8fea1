// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <vector>

#include "attnflow/linalg.hpp"
#include "attnflow/rng.hpp"

namespace attnflow {

// n tokens on S^{d-1}, stored column-wise in a d x n matrix.
struct SphereConfiguration {
    Matrix tokens;  // column i is token i

    SphereConfiguration() = default;
    explicit SphereConfiguration(Matrix t) : tokens(std::move(t)) {}

    int d() const { return static_cast<int>(tokens.rows()); }
    int n() const { return static_cast<int>(tokens.cols()); }
    Vector token(int i) const { return tokens.col(i); }

    double max_norm_deviation() const {
        double dev = 0.0;
        for (int i = 0; i < n(); ++i) dev = std::max(dev, std::abs(tokens.col(i).norm() - 1.0));
        return dev;
    }

    void require_unit(double tol = 1e-9) const {
        if (d() < 2 || n() < 1) {
            throw ContractViolation("SphereConfiguration: need d >= 2 and n >= 1");
        }
        if (max_norm_deviation() > tol) {
            throw ContractViolation("SphereConfiguration: token norms deviate from 1 by " +
                                    std::to_string(max_norm_deviation()));
        }
    }
};

inline void require_unit_vector(const Vector& x, const char* where, double tol = 1e-9) {
    if (std::abs(x.norm() - 1.0) > tol) {
        throw ContractViolation(std::string(where) + ": expected a unit vector, norm is " +
                                std::to_string(x.norm()));
    }
}

// y - <x,y> x, the tangent-space component of y at x.
inline Vector project_tangent(const Vector& x, const Vector& y) {
    require_unit_vector(x, "project_tangent");
    if (x.size() != y.size()) throw ContractViolation("project_tangent: dimension mismatch");
    return y - x.dot(y) * x;
}

// Rescale every token to unit norm. Tokens that collapsed below 1e-8 mean
// the integrator stepped too far; that state is not recoverable.
inline SphereConfiguration renormalize(const SphereConfiguration& config) {
    SphereConfiguration out = config;
    for (int i = 0; i < out.n(); ++i) {
        const double norm = out.tokens.col(i).norm();
        if (!(norm >= 1e-8)) {
            throw DegenerateState("renormalize: token " + std::to_string(i) +
                                  " has norm " + std::to_string(norm));
        }
        out.tokens.col(i) /= norm;
    }
    return out;
}

// n i.i.d. points, each a normalized standard Gaussian vector. Fully
// determined by the seed.
inline SphereConfiguration sample_uniform_sphere(int d, int n, std::uint64_t seed) {
    if (d < 2 || n < 1) throw ContractViolation("sample_uniform_sphere: need d >= 2, n >= 1");
    SplitMix64 rng(seed);
    Matrix tokens(d, n);
    for (int i = 0; i < n; ++i) {
        for (int r = 0; r < d; ++r) tokens(r, i) = rng.next_gaussian();
    }
    SphereConfiguration config(std::move(tokens));
    return renormalize(config);
}

struct ClusterPartition {
    std::vector<int> assignment;  // token -> cluster label, labels 0..m-1
    Matrix representatives;       // d x m, normalized cluster means
    int m = 0;
};

// Single-linkage grouping under chordal distance: tokens i, j join one
// cluster when some chain of pairs each closer than tol_cluster connects
// them. Labels are ordered by first token occurrence.
inline ClusterPartition detect_clusters(const SphereConfiguration& config, double tol_cluster = 1e-5) {
    if (!(tol_cluster > 0.0 && tol_cluster < 0.5)) {
        throw ContractViolation("detect_clusters: tol_cluster must lie in (0, 0.5)");
    }
    const int n = config.n();
    std::vector<int> parent(n);
    std::iota(parent.begin(), parent.end(), 0);
    auto find = [&parent](int a) {
        while (parent[a] != a) {
            parent[a] = parent[parent[a]];
            a = parent[a];
        }
        return a;
    };
    for (int i = 0; i < n; ++i) {
        for (int j = i + 1; j < n; ++j) {
            if ((config.tokens.col(i) - config.tokens.col(j)).norm() < tol_cluster) {
                parent[find(i)] = find(j);
            }
        }
    }

    ClusterPartition part;
    part.assignment.assign(n, -1);
    std::vector<int> root_label(n, -1);
    for (int i = 0; i < n; ++i) {
        const int root = find(i);
        if (root_label[root] < 0) root_label[root] = part.m++;
        part.assignment[i] = root_label[root];
    }
    part.representatives = Matrix::Zero(config.d(), part.m);
    for (int i = 0; i < n; ++i) part.representatives.col(part.assignment[i]) += config.tokens.col(i);
    for (int c = 0; c < part.m; ++c) {
        const double norm = part.representatives.col(c).norm();
        if (!(norm >= 1e-8)) {
            // Cannot happen for tol_cluster < 0.5 (antipodal tokens never merge),
            // but guard against a caller handing in junk.
            throw NumericalFailure("detect_clusters: degenerate cluster mean");
        }
        part.representatives.col(c) /= norm;
    }
    return part;
}

struct AlignmentResult {
    std::optional<int> k;    // 1-based eigenvector index, empty when unaligned
    std::vector<int> signs;  // +1 / -1 per token (valid only when k is set)
    double score = 0.0;      // min_i |<x_i, v_k>| for the best k
};

// Does every token sit on +-v_k for a common k? Returns the index maximizing
// the worst-token overlap, or none when that overlap is below 1 - tol_align.
inline AlignmentResult alignment(const SphereConfiguration& config, const ValueSpectrum& spectrum,
                                 double tol_align = 1e-6) {
    const int d = spectrum.dim();
    if (config.d() != d) throw ContractViolation("alignment: dimension mismatch");
    AlignmentResult best;
    for (int k = 1; k <= d; ++k) {
        const Vector overlaps = config.tokens.transpose() * spectrum.vec(k);
        const double score = overlaps.cwiseAbs().minCoeff();
        if (score > best.score) {
            best.score = score;
            best.k = k;
            best.signs.resize(config.n());
            for (int i = 0; i < config.n(); ++i) best.signs[i] = overlaps(i) >= 0.0 ? 1 : -1;
        }
    }
    if (best.score < 1.0 - tol_align) {
        best.k.reset();
        best.signs.clear();
    }
    return best;
}

}  // namespace attnflow
