// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <complex>
#include <string>
#include <vector>

#include "attnflow/common.hpp"

namespace attnflow {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Complex = std::complex<double>;

inline void require_finite(const Matrix& m, const char* name) {
    if (!m.allFinite()) {
        throw ContractViolation(std::string(name) + ": non-finite entries");
    }
}

inline void require_square(const Matrix& m, const char* name) {
    if (m.rows() == 0 || m.rows() != m.cols()) {
        throw ContractViolation(std::string(name) + ": expected square matrix, got " +
                                std::to_string(m.rows()) + "x" + std::to_string(m.cols()));
    }
}

inline double symmetry_residual(const Matrix& m) {
    return (m - m.transpose()).cwiseAbs().maxCoeff();
}

// Orthonormal eigenpairs of a symmetric matrix, eigenvalues in descending
// order. Sign convention: the first component of each eigenvector whose
// magnitude exceeds 1e-9 times the largest one is made positive.
struct ValueSpectrum {
    Vector eigenvalues;   // descending
    Matrix eigenvectors;  // column k pairs with eigenvalues[k]

    int dim() const { return static_cast<int>(eigenvalues.size()); }
    double lambda(int k) const { return eigenvalues(k - 1); }          // 1-based
    Vector vec(int k) const { return eigenvectors.col(k - 1); }        // 1-based
    double spectral_gap() const {
        return dim() > 1 ? eigenvalues(0) - eigenvalues(1) : std::abs(eigenvalues(0));
    }
};

namespace detail {
inline void fix_eigenvector_sign(Eigen::Ref<Vector> v) {
    const double scale = v.cwiseAbs().maxCoeff();
    for (Eigen::Index i = 0; i < v.size(); ++i) {
        if (std::abs(v(i)) > 1e-9 * scale) {
            if (v(i) < 0.0) v = -v;
            return;
        }
    }
}
}  // namespace detail

inline ValueSpectrum symmetric_eigen(const Matrix& m, double sym_tol = 1e-12) {
    require_square(m, "symmetric_eigen");
    require_finite(m, "symmetric_eigen");
    const double scale = std::max(1.0, m.cwiseAbs().maxCoeff());
    if (symmetry_residual(m) > sym_tol * scale) {
        throw ContractViolation("symmetric_eigen: matrix is not symmetric (residual " +
                                std::to_string(symmetry_residual(m)) + ")");
    }
    Eigen::SelfAdjointEigenSolver<Matrix> solver(m);
    if (solver.info() != Eigen::Success) {
        throw NumericalFailure("symmetric_eigen: solver failed on " +
                               std::to_string(m.rows()) + "x" + std::to_string(m.cols()));
    }
    const int d = static_cast<int>(m.rows());
    ValueSpectrum s;
    s.eigenvalues.resize(d);
    s.eigenvectors.resize(d, d);
    // SelfAdjointEigenSolver returns ascending order; flip to descending.
    for (int k = 0; k < d; ++k) {
        s.eigenvalues(k) = solver.eigenvalues()(d - 1 - k);
        s.eigenvectors.col(k) = solver.eigenvectors().col(d - 1 - k);
        detail::fix_eigenvector_sign(s.eigenvectors.col(k));
    }
    return s;
}

// Eigenvalues of a general real matrix, descending by real part, ties by
// descending imaginary part.
inline std::vector<Complex> general_eigenvalues(const Matrix& m) {
    require_square(m, "general_eigenvalues");
    require_finite(m, "general_eigenvalues");
    Eigen::EigenSolver<Matrix> solver(m, /*computeEigenvectors=*/false);
    if (solver.info() != Eigen::Success) {
        // Eigen's real Schur iteration caps at 40 sweeps per row.
        throw NumericalFailure("general_eigenvalues: QR iteration did not converge on " +
                               std::to_string(m.rows()) + "x" + std::to_string(m.cols()) +
                               " matrix");
    }
    std::vector<Complex> ev(m.rows());
    for (Eigen::Index i = 0; i < m.rows(); ++i) ev[i] = solver.eigenvalues()(i);
    std::sort(ev.begin(), ev.end(), [](const Complex& a, const Complex& b) {
        if (a.real() != b.real()) return a.real() > b.real();
        return a.imag() > b.imag();
    });
    return ev;
}

inline Vector singular_values(const Matrix& m) {
    return Eigen::JacobiSVD<Matrix>(m).singularValues();
}

// Number of singular values above tol * sigma_max. Relative so that matrices
// with uniformly tiny entries still classify by shape, not magnitude.
inline int numerical_rank(const Matrix& m, double tol) {
    if (!(tol > 0.0)) throw ContractViolation("numerical_rank: tol must be positive");
    require_finite(m, "numerical_rank");
    const Vector sv = singular_values(m);
    if (sv.size() == 0) return 0;
    const double cutoff = tol * sv(0);
    int rank = 0;
    for (Eigen::Index i = 0; i < sv.size(); ++i) {
        if (sv(i) > cutoff && sv(i) > 0.0) ++rank;
    }
    return rank;
}

inline double smallest_singular_value(const Matrix& m) {
    require_square(m, "smallest_singular_value");
    require_finite(m, "smallest_singular_value");
    const Vector sv = singular_values(m);
    return sv(sv.size() - 1);
}

// Greedy nearest-pair multiset comparison. Deterministic: left values are
// taken in sorted order and matched to the closest unused right value.
struct MultisetMatch {
    bool ok = false;
    double worst_distance = 0.0;
    Complex worst_left{0, 0};
    Complex worst_right{0, 0};
};

inline MultisetMatch match_eigenvalue_multisets(std::vector<Complex> lhs,
                                                std::vector<Complex> rhs, double tol) {
    MultisetMatch result;
    if (lhs.size() != rhs.size()) {
        result.ok = false;
        result.worst_distance = std::numeric_limits<double>::infinity();
        return result;
    }
    auto order = [](const Complex& a, const Complex& b) {
        if (a.real() != b.real()) return a.real() > b.real();
        return a.imag() > b.imag();
    };
    std::sort(lhs.begin(), lhs.end(), order);
    std::vector<bool> used(rhs.size(), false);
    for (const Complex& a : lhs) {
        double best = std::numeric_limits<double>::infinity();
        std::size_t best_idx = 0;
        for (std::size_t j = 0; j < rhs.size(); ++j) {
            if (used[j]) continue;
            const double dist = std::abs(a - rhs[j]);
            if (dist < best) {
                best = dist;
                best_idx = j;
            }
        }
        used[best_idx] = true;
        if (best > result.worst_distance) {
            result.worst_distance = best;
            result.worst_left = a;
            result.worst_right = rhs[best_idx];
        }
    }
    result.ok = result.worst_distance <= tol;
    return result;
}

inline std::vector<Complex> to_complex(const std::vector<double>& xs) {
    std::vector<Complex> out(xs.size());
    for (std::size_t i = 0; i < xs.size(); ++i) out[i] = Complex(xs[i], 0.0);
    return out;
}

}  // namespace attnflow
