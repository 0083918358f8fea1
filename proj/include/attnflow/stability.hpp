// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "attnflow/attention.hpp"
#include "attnflow/dynamics.hpp"
#include "attnflow/geometry.hpp"
#include "attnflow/linalg.hpp"

namespace attnflow {

// ---------------------------------------------------------------------------
// Jacobians (ambient nd x nd, token blocks in row-major block order)
// ---------------------------------------------------------------------------

// Jacobian of the multiagent Oja field:
//   diagonal block  (1/n) [ (I - x_i x_i^T) V - (x_i^T V s) I - x_i s^T V ]
//   off-diagonal    (1/n) (I - x_i x_i^T) V
// with s = sum_j x_j.
inline Matrix jacobian_moja_entries(const Matrix& tokens, const Matrix& v) {
    const int d = static_cast<int>(tokens.rows());
    const int n = static_cast<int>(tokens.cols());
    const Vector s = tokens.rowwise().sum();
    const Vector vs = v * s;
    Matrix jac(n * d, n * d);
    for (int i = 0; i < n; ++i) {
        const Vector xi = tokens.col(i);
        const Matrix proj_v = (v - xi * (xi.transpose() * v)) / n;
        for (int h = 0; h < n; ++h) jac.block(i * d, h * d, d, d) = proj_v;
        jac.block(i * d, i * d, d, d) -=
            (xi.dot(vs) * Matrix::Identity(d, d) + xi * vs.transpose()) / n;
    }
    return jac;
}

inline Matrix jacobian_moja(const SphereConfiguration& config, const Matrix& v) {
    config.require_unit();
    return jacobian_moja_entries(config.tokens, v);
}

// Jacobian of the self-attention field, assembled from the attention
// gradient slices:
//   block(i,h) = (I - x_i x_i^T) V (A_ih I + sum_j x_j dA_ij/dx_h)
//   block(i,i) gets the extra  -(x_i^T y_i) I - x_i y_i^T.
inline Matrix jacobian_self_entries(const Matrix& tokens, const ModelParams& params) {
    require_tokens_match(tokens, params, "jacobian_self");
    const int d = params.d;
    const int n = params.n;
    const Matrix a = attention_entries(tokens, params);
    const Matrix y = params.V * (tokens * a.transpose());
    Matrix jac(n * d, n * d);
    const Matrix eye = Matrix::Identity(d, d);
    for (int i = 0; i < n; ++i) {
        const Vector xi = tokens.col(i);
        const Matrix proj_v = params.V - xi * (xi.transpose() * params.V);
        const AttentionJacobianSlice slice = attention_jacobian_slices_entries(tokens, params, i);
        for (int h = 0; h < n; ++h) {
            jac.block(i * d, h * d, d, d) = proj_v * (a(i, h) * eye + tokens * slice.grad[h]);
        }
        jac.block(i * d, i * d, d, d) -= xi.dot(y.col(i)) * eye + xi * y.col(i).transpose();
    }
    return jac;
}

inline Matrix jacobian_self(const SphereConfiguration& config, const ModelParams& params) {
    config.require_unit();
    return jacobian_self_entries(config.tokens, params);
}

inline Matrix system_jacobian(const Matrix& tokens, SystemKind system, const ModelParams& params) {
    switch (system) {
        case SystemKind::oja:
            if (tokens.cols() != 1) throw ContractViolation("oja system is single-token (n = 1)");
            return jacobian_moja_entries(tokens, params.V);
        case SystemKind::moja:
            return jacobian_moja_entries(tokens, params.V);
        case SystemKind::self_attention:
            return jacobian_self_entries(tokens, params);
    }
    throw ContractViolation("system_jacobian: bad system");
}

// ---------------------------------------------------------------------------
// Closed-form spectra at consensus / bipartite consensus points
// ---------------------------------------------------------------------------

enum class EigClass { radial, transversal, bulk };

inline const char* to_string(EigClass c) {
    switch (c) {
        case EigClass::radial: return "radial";
        case EigClass::transversal: return "transversal";
        case EigClass::bulk: return "bulk";
    }
    return "?";
}

struct AnalyticSpectrum {
    struct Entry {
        double value = 0.0;
        int multiplicity = 0;
        EigClass cls = EigClass::bulk;
    };
    std::vector<Entry> entries;
    int k = 0;       // 1-based eigenvector index of the equilibrium
    int n1 = 0;      // bipartite split; n1 == n, n2 == 0 encodes consensus
    int n2 = 0;

    int total_multiplicity() const {
        int total = 0;
        for (const Entry& e : entries) total += e.multiplicity;
        return total;
    }
    double max_value() const {
        double mx = -std::numeric_limits<double>::infinity();
        for (const Entry& e : entries)
            if (e.multiplicity > 0) mx = std::max(mx, e.value);
        return mx;
    }
    std::vector<double> expand() const {
        std::vector<double> out;
        out.reserve(total_multiplicity());
        for (const Entry& e : entries) out.insert(out.end(), e.multiplicity, e.value);
        std::sort(out.begin(), out.end(), std::greater<double>());
        return out;
    }
};

// Consensus at v_k: -2 lambda_k (n times), lambda_h - lambda_k for h != k,
// -lambda_k with multiplicity nd - n - d + 1. Identical for the multiagent
// Oja flow and the self-attention flow at any beta.
inline AnalyticSpectrum consensus_spectrum(const ValueSpectrum& spectrum, int k, int n) {
    const int d = spectrum.dim();
    if (k < 1 || k > d) throw ContractViolation("consensus_spectrum: k out of range");
    if (n < 1) throw ContractViolation("consensus_spectrum: n must be >= 1");
    const double lam_k = spectrum.lambda(k);
    AnalyticSpectrum out;
    out.k = k;
    out.n1 = n;
    out.entries.push_back({-2.0 * lam_k, n, EigClass::radial});
    for (int h = 1; h <= d; ++h) {
        if (h == k) continue;
        out.entries.push_back({spectrum.lambda(h) - lam_k, 1, EigClass::transversal});
    }
    out.entries.push_back({-lam_k, n * d - n - d + 1, EigClass::bulk});
    return out;
}

// Scalars entering the bipartite-consensus spectrum. With c = v_k^T Q^T K v_k:
//   alpha1 = exp(beta c), alpha2 = exp(-beta c)
//   beta1  = n1 alpha1 + n2 alpha2,   beta2 = n1 alpha2 + n2 alpha1
//   delta1 = (n1 alpha1 - n2 alpha2)/beta1, delta2 = (n2 alpha1 - n1 alpha2)/beta2
// and per off-index j the 2x2 system (a_j, b_j; c_j, d_j) whose roots are
// gamma_{j,+-}. b_j c_j >= 0, so the roots are always real.
struct BipartiteCoefficients {
    double exponent = 0.0;  // beta * v_k^T Q^T K v_k
    double alpha1 = 1.0;
    double alpha2 = 1.0;
    double beta1 = 0.0;
    double beta2 = 0.0;
    double delta1 = 0.0;
    double delta2 = 0.0;
    struct PerJ {
        int j = 0;  // 1-based, j != k
        double a = 0.0, b = 0.0, c = 0.0, d = 0.0;
        double gamma_plus = 0.0, gamma_minus = 0.0;
    };
    std::vector<PerJ> per_j;
};

inline BipartiteCoefficients bipartite_coefficients(const ModelParams& params,
                                                    const ValueSpectrum& spectrum, int k,
                                                    int n1, int n2) {
    const int d = spectrum.dim();
    if (k < 1 || k > d) throw ContractViolation("bipartite_coefficients: k out of range");
    if (n1 < 1 || n2 < 1 || n1 + n2 != params.n) {
        throw ContractViolation("bipartite_coefficients: need n1, n2 >= 1 with n1 + n2 = n");
    }
    const Vector vk = spectrum.vec(k);
    const double lam_k = spectrum.lambda(k);

    BipartiteCoefficients bc;
    bc.exponent = params.beta * vk.dot(params.Q.transpose() * (params.K * vk));
    bc.alpha1 = std::exp(bc.exponent);
    bc.alpha2 = std::exp(-bc.exponent);
    bc.beta1 = n1 * bc.alpha1 + n2 * bc.alpha2;
    bc.beta2 = n1 * bc.alpha2 + n2 * bc.alpha1;
    bc.delta1 = (n1 * bc.alpha1 - n2 * bc.alpha2) / bc.beta1;
    bc.delta2 = (n2 * bc.alpha1 - n1 * bc.alpha2) / bc.beta2;
    for (int j = 1; j <= d; ++j) {
        if (j == k) continue;
        const double lam_j = spectrum.lambda(j);
        BipartiteCoefficients::PerJ pj;
        pj.j = j;
        pj.a = -bc.delta1 * lam_k + lam_j * n1 * bc.alpha1 / bc.beta1;
        pj.b = lam_j * n2 * bc.alpha2 / bc.beta1;
        pj.c = lam_j * n1 * bc.alpha2 / bc.beta2;
        pj.d = -bc.delta2 * lam_k + lam_j * n2 * bc.alpha1 / bc.beta2;
        const double disc = (pj.a - pj.d) * (pj.a - pj.d) + 4.0 * pj.c * pj.b;
        const double root = std::sqrt(std::max(disc, 0.0));
        pj.gamma_plus = 0.5 * (pj.a + pj.d + root);
        pj.gamma_minus = 0.5 * (pj.a + pj.d - root);
        bc.per_j.push_back(pj);
    }
    return bc;
}

// Bipartite point with n1 tokens at +v_k and n2 at -v_k:
//   -2 delta1 lambda_k (n1 times), -2 delta2 lambda_k (n2 times),
//   gamma_{j,+-} for j != k,
//   -delta1 lambda_k ((n1-1)(d-1) times), -delta2 lambda_k ((n2-1)(d-1) times).
// The two bulk groups total nd - n - 2d + 2.
inline std::pair<BipartiteCoefficients, AnalyticSpectrum> bipartite_spectrum(
    const ModelParams& params, const ValueSpectrum& spectrum, int k, int n1, int n2) {
    const BipartiteCoefficients bc = bipartite_coefficients(params, spectrum, k, n1, n2);
    const int d = spectrum.dim();
    const double lam_k = spectrum.lambda(k);

    AnalyticSpectrum out;
    out.k = k;
    out.n1 = n1;
    out.n2 = n2;
    out.entries.push_back({-2.0 * bc.delta1 * lam_k, n1, EigClass::radial});
    out.entries.push_back({-2.0 * bc.delta2 * lam_k, n2, EigClass::radial});
    for (const auto& pj : bc.per_j) {
        out.entries.push_back({pj.gamma_plus, 1, EigClass::transversal});
        out.entries.push_back({pj.gamma_minus, 1, EigClass::transversal});
    }
    out.entries.push_back({-bc.delta1 * lam_k, (n1 - 1) * (d - 1), EigClass::bulk});
    out.entries.push_back({-bc.delta2 * lam_k, (n2 - 1) * (d - 1), EigClass::bulk});
    return {bc, out};
}

// ---------------------------------------------------------------------------
// Stability verdicts
// ---------------------------------------------------------------------------

enum class Verdict { stable, unstable, marginal };

inline const char* to_string(Verdict v) {
    switch (v) {
        case Verdict::stable: return "stable";
        case Verdict::unstable: return "unstable";
        case Verdict::marginal: return "marginal";
    }
    return "?";
}

inline Verdict verdict_from_abscissa(double abscissa, double tol_margin = 1e-7) {
    if (abscissa < -tol_margin) return Verdict::stable;
    if (abscissa > tol_margin) return Verdict::unstable;
    return Verdict::marginal;
}

// Stable iff delta_l lambda_k > 0 for l = 1,2 and, for every j != k,
// a_j + d_j < 0 with a_j d_j > b_j c_j (equivalent to gamma_{j,+-} < 0).
// The minimum of the tested quantities decides; a minimum inside the margin
// band is reported marginal, never silently coerced.
inline Verdict bipartite_stability_test(const ModelParams& params, const ValueSpectrum& spectrum,
                                        int k, int n1, int n2, double tol_margin = 1e-7) {
    const BipartiteCoefficients bc = bipartite_coefficients(params, spectrum, k, n1, n2);
    const double lam_k = spectrum.lambda(k);
    double min_quantity = std::min(bc.delta1 * lam_k, bc.delta2 * lam_k);
    for (const auto& pj : bc.per_j) {
        min_quantity = std::min(min_quantity, -(pj.a + pj.d));
        min_quantity = std::min(min_quantity, pj.a * pj.d - pj.b * pj.c);
    }
    if (min_quantity > tol_margin) return Verdict::stable;
    if (min_quantity < -tol_margin) return Verdict::unstable;
    return Verdict::marginal;
}

inline Verdict consensus_stability_test(const ValueSpectrum& spectrum, int k, int n,
                                        double tol_margin = 1e-7) {
    return verdict_from_abscissa(consensus_spectrum(spectrum, k, n).max_value(), tol_margin);
}

// ---------------------------------------------------------------------------
// Equilibrium classification
// ---------------------------------------------------------------------------

struct ClassifyTolerances {
    double tol_equilibrium = 1e-6;   // precondition: max_i ||f_i|| below this
    double tol_align = 1e-6;         // eigenvector alignment slack
    double tol_cluster = 1e-5;       // chordal single-linkage radius
    double tol_polygonal = 1e-6;     // all ||y_i|| below this => polygonal
    double collinearity_rel = 1e-3;  // clustering needs ||f_i|| <= rel * ||y_i||
    double rank_tol = 1e-6;          // relative singular-value threshold
    double tol_margin = 1e-7;        // stable/unstable/marginal band
    double tol_zero_mode = 1e-8;     // |Re| below this discarded on polygonal sets
};

struct EquilibriumReport {
    enum class Class { consensus, bipartite, m_clustering, polygonal, near_equilibrium_unclassified };

    Class cls = Class::near_equilibrium_unclassified;
    int k = 0;             // 1-based eigenvector index (consensus / bipartite)
    int n1 = 0, n2 = 0;    // bipartite split sizes
    int m = 0;             // cluster count (m_clustering)
    int attention_rank = 0;
    double spectral_abscissa = 0.0;
    Verdict verdict = Verdict::marginal;
    double residual = 0.0;  // max_i ||f_i||_2 at the classified state
};

inline const char* to_string(EquilibriumReport::Class c) {
    switch (c) {
        case EquilibriumReport::Class::consensus: return "consensus";
        case EquilibriumReport::Class::bipartite: return "bipartite";
        case EquilibriumReport::Class::m_clustering: return "clustering";
        case EquilibriumReport::Class::polygonal: return "polygonal";
        case EquilibriumReport::Class::near_equilibrium_unclassified: return "unclassified";
    }
    return "?";
}

// Decision cascade over a near-equilibrium state:
//   1. common eigenvector, uniform signs        -> consensus(k)
//   2. common eigenvector, mixed signs          -> bipartite(k, n1, n2)
//   3. all influence vectors vanish             -> polygonal
//   4. clusters with y_i collinear to x_i       -> m_clustering(m)
//   5. otherwise                                -> near_equilibrium_unclassified
// The report carries the attention rank and the ambient Jacobian's spectral
// abscissa (zero modes of the polygonal equilibrium set discarded).
inline EquilibriumReport classify_equilibrium(const SphereConfiguration& config, SystemKind system,
                                              const ModelParams& params, const ValueSpectrum& spectrum,
                                              const ClassifyTolerances& tols = {}) {
    config.require_unit();
    require_tokens_match(config.tokens, params, "classify_equilibrium");

    const Matrix a = system_attention(config.tokens, system, params);
    const Matrix y = params.V * (config.tokens * a.transpose());

    EquilibriumReport report;
    double max_field = 0.0;
    double max_influence = 0.0;
    bool collinear = true;
    for (int i = 0; i < config.n(); ++i) {
        const double radial = config.tokens.col(i).dot(y.col(i));
        const double field_norm = (y.col(i) - radial * config.tokens.col(i)).norm();
        max_field = std::max(max_field, field_norm);
        max_influence = std::max(max_influence, y.col(i).norm());
        if (field_norm > tols.collinearity_rel * y.col(i).norm()) collinear = false;
    }
    report.residual = max_field;
    if (max_field >= tols.tol_equilibrium) {
        throw ContractViolation("classify_equilibrium: residual " + std::to_string(max_field) +
                                " exceeds tol_equilibrium");
    }

    report.attention_rank = numerical_rank(a, tols.rank_tol);

    const AlignmentResult aligned = alignment(config, spectrum, tols.tol_align);
    if (aligned.k.has_value()) {
        const int plus = static_cast<int>(std::count(aligned.signs.begin(), aligned.signs.end(), 1));
        report.k = *aligned.k;
        if (plus == 0 || plus == config.n()) {
            report.cls = EquilibriumReport::Class::consensus;
            report.n1 = config.n();
        } else {
            report.cls = EquilibriumReport::Class::bipartite;
            report.n1 = plus;
            report.n2 = config.n() - plus;
        }
    } else if (max_influence < tols.tol_polygonal) {
        report.cls = EquilibriumReport::Class::polygonal;
    } else if (collinear) {
        report.cls = EquilibriumReport::Class::m_clustering;
        report.m = detect_clusters(config, tols.tol_cluster).m;
    } else {
        report.cls = EquilibriumReport::Class::near_equilibrium_unclassified;
    }

    const Matrix jac = system_jacobian(config.tokens, system, params);
    const std::vector<Complex> eigenvalues = general_eigenvalues(jac);
    double abscissa = -std::numeric_limits<double>::infinity();
    for (const Complex& ev : eigenvalues) {
        if (report.cls == EquilibriumReport::Class::polygonal &&
            std::abs(ev.real()) < tols.tol_zero_mode) {
            continue;  // tangent modes of the polygonal equilibrium set
        }
        abscissa = std::max(abscissa, ev.real());
    }
    report.spectral_abscissa = abscissa;
    report.verdict = verdict_from_abscissa(abscissa, tols.tol_margin);
    return report;
}

// ---------------------------------------------------------------------------
// Certificates
// ---------------------------------------------------------------------------

// Witness for a clustering equilibrium. gamma_i = <x_i, y_i> are the
// per-token collinearity factors; the certificate matrix
//   M = I_{nd} - (diag(1/gamma_i) (x) I_d)(A (x) I_d)(I_n (x) V)
// must be singular at an exact clustering equilibrium, so the smallest
// singular value is the witnessed residual.
struct ClusteringCertificate {
    Vector gammas;
    double collinearity_residual = 0.0;  // max_i ||y_i - gamma_i x_i||
    double singularity_residual = 0.0;   // sigma_min(M)
};

inline ClusteringCertificate clustering_certificate(const SphereConfiguration& config,
                                                    SystemKind system, const ModelParams& params) {
    config.require_unit();
    const int d = config.d();
    const int n = config.n();
    const Matrix a = system_attention(config.tokens, system, params);
    const Matrix y = params.V * (config.tokens * a.transpose());

    ClusteringCertificate cert;
    cert.gammas.resize(n);
    for (int i = 0; i < n; ++i) {
        cert.gammas(i) = config.tokens.col(i).dot(y.col(i));
        if (std::abs(cert.gammas(i)) < 1e-12) {
            throw NumericalFailure("clustering_certificate: gamma_" + std::to_string(i) +
                                   " vanishes, reciprocal undefined");
        }
        cert.collinearity_residual =
            std::max(cert.collinearity_residual,
                     (y.col(i) - cert.gammas(i) * config.tokens.col(i)).norm());
    }

    Matrix m = Matrix::Identity(n * d, n * d);
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) {
            m.block(i * d, j * d, d, d) -= (a(i, j) / cert.gammas(i)) * params.V;
        }
    }
    cert.singularity_residual = smallest_singular_value(m);
    return cert;
}

// Instability witness for polygonal (vanishing-influence) equilibria: the
// spectral abscissa of the numerically assembled Jacobian after discarding
// the zero modes tangent to the equilibrium set.
struct PolygonalCertificate {
    double max_real_part = 0.0;
    bool unstable = false;
    int discarded_modes = 0;
};

inline PolygonalCertificate polygonal_certificate(const SphereConfiguration& config, SystemKind system,
                                                  const ModelParams& params,
                                                  double tol_zero_mode = 1e-8,
                                                  double tol_margin = 1e-7) {
    config.require_unit();
    const Matrix jac = system_jacobian(config.tokens, system, params);
    const std::vector<Complex> eigenvalues = general_eigenvalues(jac);
    PolygonalCertificate cert;
    cert.max_real_part = -std::numeric_limits<double>::infinity();
    for (const Complex& ev : eigenvalues) {
        if (std::abs(ev.real()) < tol_zero_mode) {
            ++cert.discarded_modes;
            continue;
        }
        cert.max_real_part = std::max(cert.max_real_part, ev.real());
    }
    cert.unstable = cert.max_real_part > tol_margin;
    return cert;
}

// ---------------------------------------------------------------------------
// Constructors for the equilibrium states used across tests and scans
// ---------------------------------------------------------------------------

inline SphereConfiguration make_consensus_state(const ValueSpectrum& spectrum, int k, int n,
                                                int sign = 1) {
    if (k < 1 || k > spectrum.dim()) throw ContractViolation("make_consensus_state: k out of range");
    Matrix tokens(spectrum.dim(), n);
    const Vector v = sign >= 0 ? Vector(spectrum.vec(k)) : Vector(-spectrum.vec(k));
    for (int i = 0; i < n; ++i) tokens.col(i) = v;
    return SphereConfiguration(std::move(tokens));
}

// First n1 tokens at +v_k, remaining n2 at -v_k.
inline SphereConfiguration make_bipartite_state(const ValueSpectrum& spectrum, int k, int n1, int n2) {
    if (k < 1 || k > spectrum.dim()) throw ContractViolation("make_bipartite_state: k out of range");
    if (n1 < 1 || n2 < 1) throw ContractViolation("make_bipartite_state: need n1, n2 >= 1");
    Matrix tokens(spectrum.dim(), n1 + n2);
    for (int i = 0; i < n1; ++i) tokens.col(i) = spectrum.vec(k);
    for (int i = n1; i < n1 + n2; ++i) tokens.col(i) = -spectrum.vec(k);
    return SphereConfiguration(std::move(tokens));
}

}  // namespace attnflow
