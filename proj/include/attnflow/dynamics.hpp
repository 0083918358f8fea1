// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "attnflow/attention.hpp"
#include "attnflow/geometry.hpp"
#include "attnflow/linalg.hpp"

namespace attnflow {

enum class SystemKind { oja, moja, self_attention };

inline const char* to_string(SystemKind s) {
    switch (s) {
        case SystemKind::oja: return "oja";
        case SystemKind::moja: return "moja";
        case SystemKind::self_attention: return "self_attention";
    }
    return "?";
}

inline SystemKind system_from_string(const std::string& s) {
    if (s == "oja") return SystemKind::oja;
    if (s == "moja") return SystemKind::moja;
    if (s == "self_attention") return SystemKind::self_attention;
    throw ContractViolation("unknown system '" + s + "' (expected oja|moja|self_attention)");
}

// The uniform matrix softmax produces at beta = 0: every entry is the same
// double 1/n, so the multiagent Oja flow and the beta = 0 self-attention
// flow run through bit-identical arithmetic.
inline Matrix uniform_attention(int n) { return Matrix::Constant(n, n, 1.0 / n); }

// f_i = (I - x_i x_i^T) V sum_j A_ij x_j, columns of the returned d x n matrix.
inline Matrix field_from_attention(const Matrix& tokens, const Matrix& v, const Matrix& a) {
    const Matrix y = v * (tokens * a.transpose());
    Matrix f(tokens.rows(), tokens.cols());
    for (int i = 0; i < tokens.cols(); ++i) {
        const double radial = tokens.col(i).dot(y.col(i));
        f.col(i) = y.col(i) - radial * tokens.col(i);
    }
    return f;
}

inline Matrix system_attention(const Matrix& tokens, SystemKind system, const ModelParams& params) {
    switch (system) {
        case SystemKind::oja:
            if (tokens.cols() != 1) throw ContractViolation("oja system is single-token (n = 1)");
            return Matrix::Ones(1, 1);
        case SystemKind::moja:
            return uniform_attention(static_cast<int>(tokens.cols()));
        case SystemKind::self_attention:
            return attention_entries(tokens, params);
    }
    throw ContractViolation("system_attention: bad system");
}

// Ambient vector field of the chosen system; valid slightly off-sphere,
// which the finite-difference oracles rely on.
inline Matrix system_field(const Matrix& tokens, SystemKind system, const ModelParams& params) {
    return field_from_attention(tokens, params.V, system_attention(tokens, system, params));
}

// Per-token influence vectors y_i of the chosen system (moja sees uniform
// weights, i.e. y_i = V * mean for every i).
inline Matrix system_influence(const Matrix& tokens, SystemKind system, const ModelParams& params) {
    return params.V * (tokens * system_attention(tokens, system, params).transpose());
}

inline Vector vf_oja(const Vector& x, const Matrix& v) {
    require_unit_vector(x, "vf_oja");
    const Vector y = v * x;
    return y - x.dot(y) * x;
}

inline Matrix vf_multiagent_oja(const SphereConfiguration& config, const Matrix& v) {
    config.require_unit();
    return field_from_attention(config.tokens, v, uniform_attention(config.n()));
}

inline Matrix vf_self_attention(const SphereConfiguration& config, const ModelParams& params) {
    config.require_unit();
    return field_from_attention(config.tokens, params.V, attention_entries(config.tokens, params));
}

struct IntegrationOptions {
    double step = 0.05;
    double max_time = 500.0;
    double convergence_tol = 1e-9;
    int record_stride = 10;

    void validate() const {
        if (!(step > 0.0) || step > 0.5) throw ContractViolation("IntegrationOptions: need 0 < step <= 0.5");
        if (!(convergence_tol > 0.0)) throw ContractViolation("IntegrationOptions: convergence_tol must be positive");
        if (!(max_time > 0.0)) throw ContractViolation("IntegrationOptions: max_time must be positive");
        if (record_stride < 1) throw ContractViolation("IntegrationOptions: record_stride must be >= 1");
    }
};

enum class Termination { converged, max_time, degenerate };

inline const char* to_string(Termination t) {
    switch (t) {
        case Termination::converged: return "converged";
        case Termination::max_time: return "max_time";
        case Termination::degenerate: return "degenerate";
    }
    return "?";
}

struct Trajectory {
    std::vector<double> times;
    std::vector<SphereConfiguration> states;
    Termination termination = Termination::max_time;
    long steps = 0;
    double final_residual = 0.0;  // max_i ||f_i||_inf at the last state

    const SphereConfiguration& final_state() const { return states.back(); }
    double final_time() const { return times.back(); }
};

// Classical RK4 in ambient space, renormalized after every step so the
// iterates stay on the product of spheres. Convergence is declared on the
// vector-field norm, not on state displacement, so slow transients are not
// mistaken for equilibria.
inline Trajectory integrate(const SphereConfiguration& config0, SystemKind system,
                            const ModelParams& params, const IntegrationOptions& opts) {
    opts.validate();
    config0.require_unit();
    require_tokens_match(config0.tokens, params, "integrate");

    const double h = opts.step;
    Matrix x = config0.tokens;
    double t = 0.0;

    Trajectory traj;
    traj.times.push_back(0.0);
    traj.states.emplace_back(x);

    auto record = [&traj](double time, const Matrix& state) {
        traj.times.push_back(time);
        traj.states.emplace_back(state);
    };

    while (true) {
        const Matrix k1 = system_field(x, system, params);
        const double residual = k1.cwiseAbs().maxCoeff();
        if (residual < opts.convergence_tol) {
            traj.termination = Termination::converged;
            traj.final_residual = residual;
            break;
        }
        if (t >= opts.max_time) {
            traj.termination = Termination::max_time;
            traj.final_residual = residual;
            break;
        }
        const Matrix k2 = system_field(x + (0.5 * h) * k1, system, params);
        const Matrix k3 = system_field(x + (0.5 * h) * k2, system, params);
        const Matrix k4 = system_field(x + h * k3, system, params);
        Matrix next = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        for (int i = 0; i < next.cols(); ++i) {
            const double norm = next.col(i).norm();
            if (!(norm >= 1e-8)) {
                traj.termination = Termination::degenerate;
                throw DegenerateState("integrate: token " + std::to_string(i) +
                                      " collapsed at t = " + std::to_string(t));
            }
            next.col(i) /= norm;
        }
        x = std::move(next);
        t += h;
        ++traj.steps;
        if (traj.steps % opts.record_stride == 0) record(t, x);
    }

    // The final state is always stored exactly.
    if (traj.times.back() != t) record(t, x);
    return traj;
}

// W(x) = (lambda_1 - x^T V x) / 2, evaluated through the spectrum so only
// eigenpairs are needed: x^T V x = sum_k lambda_k <v_k, x>^2.
inline double lyapunov_oja(const Vector& x, const ValueSpectrum& spectrum) {
    require_unit_vector(x, "lyapunov_oja");
    const Vector coords = spectrum.eigenvectors.transpose() * x;
    const double rayleigh = coords.array().square().matrix().dot(spectrum.eigenvalues);
    return 0.5 * (spectrum.eigenvalues(0) - rayleigh);
}

// Summed form: W(x) = (lambda_1 - (1/n) s^T V s) / 2 with s = sum_j x_j.
inline double lyapunov_moja(const SphereConfiguration& config, const ValueSpectrum& spectrum) {
    config.require_unit();
    const Vector s = config.tokens.rowwise().sum();
    const Vector coords = spectrum.eigenvectors.transpose() * s;
    const double quad = coords.array().square().matrix().dot(spectrum.eigenvalues);
    return 0.5 * (spectrum.eigenvalues(0) - quad / config.n());
}

}  // namespace attnflow
