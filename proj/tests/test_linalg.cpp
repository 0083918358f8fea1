#include <catch2/catch_amalgamated.hpp>

#include <attnflow/linalg.hpp>

#include "testutil.hpp"

using namespace attnflow;

TEST_CASE("symmetric_eigen on a diagonal matrix") {
    Matrix m = Matrix::Zero(3, 3);
    m(0, 0) = 2.0;
    m(1, 1) = 1.0;
    m(2, 2) = -3.0;
    const ValueSpectrum s = symmetric_eigen(m);
    REQUIRE(s.eigenvalues(0) == Catch::Approx(2.0).margin(1e-14));
    REQUIRE(s.eigenvalues(1) == Catch::Approx(1.0).margin(1e-14));
    REQUIRE(s.eigenvalues(2) == Catch::Approx(-3.0).margin(1e-14));
    // Eigenvectors are the standard basis, sign-normalized.
    for (int k = 0; k < 3; ++k) {
        Vector expect = Vector::Zero(3);
        expect(k == 0 ? 0 : (k == 1 ? 1 : 2)) = 1.0;
        REQUIRE((s.eigenvectors.col(k) - expect).cwiseAbs().maxCoeff() < 1e-14);
    }
}

TEST_CASE("symmetric_eigen on the 2x2 exchange matrix") {
    Matrix m(2, 2);
    m << 0, 1, 1, 0;
    const ValueSpectrum s = symmetric_eigen(m);
    const double inv_sqrt2 = 1.0 / std::sqrt(2.0);
    REQUIRE(s.eigenvalues(0) == Catch::Approx(1.0).margin(1e-14));
    REQUIRE(s.eigenvalues(1) == Catch::Approx(-1.0).margin(1e-14));
    REQUIRE((s.eigenvectors.col(0) - Vector::Constant(2, inv_sqrt2)).norm() < 1e-14);
    Vector flip(2);
    flip << inv_sqrt2, -inv_sqrt2;
    REQUIRE((s.eigenvectors.col(1) - flip).norm() < 1e-14);
}

TEST_CASE("symmetric_eigen reconstruction and orthonormality") {
    for (const int d : {2, 6, 17, 50}) {
        const Matrix m = testutil::random_symmetric(d, 40 + d);
        const ValueSpectrum s = symmetric_eigen(m);

        Matrix rebuilt = Matrix::Zero(d, d);
        for (int k = 0; k < d; ++k) {
            rebuilt += s.eigenvalues(k) * s.eigenvectors.col(k) * s.eigenvectors.col(k).transpose();
        }
        const double scale = std::max(1.0, m.cwiseAbs().maxCoeff());
        REQUIRE((rebuilt - m).cwiseAbs().maxCoeff() < 1e-10 * scale);

        const Matrix gram = s.eigenvectors.transpose() * s.eigenvectors;
        REQUIRE((gram - Matrix::Identity(d, d)).cwiseAbs().maxCoeff() < 1e-10);
        for (int k = 0; k + 1 < d; ++k) REQUIRE(s.eigenvalues(k) >= s.eigenvalues(k + 1));
        // Residual per pair.
        for (int k = 1; k <= d; ++k) {
            REQUIRE((m * s.vec(k) - s.lambda(k) * s.vec(k)).norm() < 1e-10 * scale);
        }
    }
}

TEST_CASE("symmetric_eigen rejects bad input") {
    REQUIRE_THROWS_AS(symmetric_eigen(Matrix::Zero(2, 3)), ContractViolation);
    Matrix skew(2, 2);
    skew << 0, 1, -1, 0;
    REQUIRE_THROWS_AS(symmetric_eigen(skew), ContractViolation);
}

TEST_CASE("general_eigenvalues basics") {
    REQUIRE(general_eigenvalues(Matrix::Identity(3, 3)) ==
            std::vector<Complex>{Complex(1, 0), Complex(1, 0), Complex(1, 0)});

    Matrix rot(2, 2);
    rot << 0, -1, 1, 0;
    const auto ev = general_eigenvalues(rot);
    REQUIRE(std::abs(ev[0] - Complex(0, 1)) < 1e-12);
    REQUIRE(std::abs(ev[1] - Complex(0, -1)) < 1e-12);
}

TEST_CASE("general_eigenvalues of the z^3 - 1 companion matrix") {
    // Roots of z^3 = 1, computed by hand: 1 and -1/2 +- i sqrt(3)/2.
    Matrix companion = Matrix::Zero(3, 3);
    companion(0, 2) = 1.0;
    companion(1, 0) = 1.0;
    companion(2, 1) = 1.0;
    const auto ev = general_eigenvalues(companion);
    const double half_sqrt3 = std::sqrt(3.0) / 2.0;
    REQUIRE(std::abs(ev[0] - Complex(1, 0)) < 1e-10);
    REQUIRE(std::abs(ev[1] - Complex(-0.5, half_sqrt3)) < 1e-10);
    REQUIRE(std::abs(ev[2] - Complex(-0.5, -half_sqrt3)) < 1e-10);
}

TEST_CASE("general_eigenvalues agrees with symmetric_eigen on symmetric input") {
    for (const int d : {3, 8, 15}) {
        const Matrix m = testutil::random_symmetric(d, 90 + d);
        const ValueSpectrum s = symmetric_eigen(m);
        std::vector<double> expected(s.eigenvalues.data(), s.eigenvalues.data() + d);
        const auto match = match_eigenvalue_multisets(general_eigenvalues(m), to_complex(expected), 1e-8);
        INFO("worst pair distance " << match.worst_distance);
        REQUIRE(match.ok);
    }
}

TEST_CASE("numerical_rank") {
    const int n = 7;
    REQUIRE(numerical_rank(Matrix::Constant(n, n, 1.0 / n), 1e-8) == 1);
    REQUIRE(numerical_rank(Matrix::Zero(4, 4), 1e-8) == 0);
    REQUIRE_THROWS_AS(numerical_rank(Matrix::Zero(2, 2), 0.0), ContractViolation);

    // Two distinct row types with distinct scalings: rank exactly 2.
    const double a1 = 0.9, a2 = 0.3;
    const int n1 = 3, n2 = 2;
    const double b1 = n1 * a1 + n2 * a2, b2 = n1 * a2 + n2 * a1;
    Matrix bipart(n1 + n2, n1 + n2);
    for (int i = 0; i < n1 + n2; ++i) {
        for (int j = 0; j < n1 + n2; ++j) {
            const bool ip = i < n1, jp = j < n1;
            bipart(i, j) = ip ? (jp ? a1 / b1 : a2 / b1) : (jp ? a2 / b2 : a1 / b2);
        }
    }
    REQUIRE(numerical_rank(bipart, 1e-8) == 2);

    // Rank is invariant under row/column permutation.
    Eigen::PermutationMatrix<Eigen::Dynamic> perm(n1 + n2);
    perm.setIdentity();
    std::swap(perm.indices()(0), perm.indices()(3));
    std::swap(perm.indices()(1), perm.indices()(4));
    REQUIRE(numerical_rank(perm * bipart, 1e-8) == 2);
    REQUIRE(numerical_rank(bipart * perm, 1e-8) == 2);

    // Relative threshold: uniformly tiny entries classify the same.
    REQUIRE(numerical_rank(1e-14 * bipart, 1e-8) == 2);
}

TEST_CASE("smallest_singular_value") {
    REQUIRE(smallest_singular_value(Matrix::Identity(4, 4)) == Catch::Approx(1.0).margin(1e-14));

    Matrix repeated = testutil::random_matrix(4, 4, 7);
    repeated.row(3) = repeated.row(1);
    REQUIRE(smallest_singular_value(repeated) < 1e-12);

    // |det M| = product of singular values; determinant through LU as oracle.
    const Matrix m = testutil::random_matrix(5, 5, 11);
    const Vector sv = singular_values(m);
    const double det = Eigen::FullPivLU<Matrix>(m).determinant();
    REQUIRE(std::abs(std::abs(det) - sv.prod()) < 1e-8 * std::abs(det));
}

TEST_CASE("multiset matching reports the worst pair") {
    const std::vector<Complex> a{{1.0, 0.0}, {2.0, 0.0}};
    const std::vector<Complex> b{{2.0 + 5e-9, 0.0}, {1.0, 0.0}};
    const auto ok = match_eigenvalue_multisets(a, b, 1e-8);
    REQUIRE(ok.ok);
    const auto bad = match_eigenvalue_multisets(a, {{1.0, 0.0}, {3.0, 0.0}}, 1e-8);
    REQUIRE_FALSE(bad.ok);
    REQUIRE(bad.worst_distance >= 1.0);
    const auto size_mismatch = match_eigenvalue_multisets(a, {{1.0, 0.0}}, 1e-8);
    REQUIRE_FALSE(size_mismatch.ok);
}
