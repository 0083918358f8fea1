// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "attnflow/geometry.hpp"
#include "attnflow/linalg.hpp"

namespace attnflow {

// One dynamical-system instance: query/key maps, symmetric value matrix,
// inverse temperature. beta = 0 is a valid setting and makes the attention
// exactly uniform, which is how the multiagent Oja flow is realized through
// the same code path.
struct ModelParams {
    Matrix Q;
    Matrix K;
    Matrix V;
    double beta = 1.0;
    int d = 0;
    int n = 0;

    void validate() const {
        if (d < 2 || n < 1) throw ContractViolation("ModelParams: need d >= 2, n >= 1");
        if (Q.rows() != d || Q.cols() != d || K.rows() != d || K.cols() != d ||
            V.rows() != d || V.cols() != d) {
            throw ContractViolation("ModelParams: Q, K, V must all be d x d");
        }
        if (!(beta >= 0.0) || !std::isfinite(beta)) {
            throw ContractViolation("ModelParams: beta must be finite and >= 0");
        }
        const double vscale = std::max(1.0, V.cwiseAbs().maxCoeff());
        if (symmetry_residual(V) > 1e-12 * vscale) {
            throw ContractViolation("ModelParams: V must be symmetric within 1e-12");
        }
    }

    // Assumption-level sanity for the analytic results: lambda_1 simple,
    // positive, separated from lambda_2.
    bool satisfies_gap_assumption(const ValueSpectrum& spectrum, double gap_min = 1e-6) const {
        return spectrum.lambda(1) > 0.0 &&
               (spectrum.dim() < 2 || spectrum.lambda(1) - spectrum.lambda(2) > gap_min);
    }
};

struct AttentionMatrix {
    Matrix entries;  // n x n, strictly positive, rows sum to 1

    double row_sum_deviation() const {
        return (entries.rowwise().sum() - Vector::Ones(entries.rows())).cwiseAbs().maxCoeff();
    }
};

inline void require_tokens_match(const Matrix& tokens, const ModelParams& params, const char* where) {
    if (tokens.rows() != params.d || tokens.cols() != params.n) {
        throw ContractViolation(std::string(where) + ": configuration is " +
                                std::to_string(tokens.rows()) + "x" + std::to_string(tokens.cols()) +
                                ", params expect " + std::to_string(params.d) + "x" +
                                std::to_string(params.n));
    }
}

// Softmax rows of beta * <Q x_i, K x_j>, stabilized by subtracting the row
// max inside the exponent. At beta = 0 all logits vanish and every entry is
// exactly 1/n.
inline Matrix attention_entries(const Matrix& tokens, const ModelParams& params) {
    require_tokens_match(tokens, params, "attention_entries");
    const int n = params.n;
    Matrix logits = params.beta * ((params.Q * tokens).transpose() * (params.K * tokens));
    Matrix a(n, n);
    for (int i = 0; i < n; ++i) {
        const double row_max = logits.row(i).maxCoeff();
        double denom = 0.0;
        for (int j = 0; j < n; ++j) {
            a(i, j) = std::exp(logits(i, j) - row_max);
            denom += a(i, j);
        }
        a.row(i) /= denom;
    }
    return a;
}

inline AttentionMatrix attention_matrix(const SphereConfiguration& config, const ModelParams& params) {
    config.require_unit();
    return AttentionMatrix{attention_entries(config.tokens, params)};
}

// Gradients of row i of the attention matrix. grad[h] is n x d with row j
// holding dA_ij / dx_h. The inverse temperature enters as a chain-rule
// factor on every Q^T K term:
//   dA_ij/dx_i = beta * [ (x_j^T K^T Q - A_ii x_i^T Q^T K
//                          - sum_l A_il x_l^T K^T Q) A_ij
//                         + delta_ij A_ii x_i^T Q^T K ]
//   dA_ij/dx_h = beta * A_ih (delta_jh - A_ij) x_i^T Q^T K,  h != i.
struct AttentionJacobianSlice {
    int i = 0;
    std::vector<Matrix> grad;  // size n, each n x d
};

inline AttentionJacobianSlice attention_jacobian_slices_entries(const Matrix& tokens,
                                                                const ModelParams& params, int i) {
    require_tokens_match(tokens, params, "attention_jacobian_slices");
    const int n = params.n;
    const int d = params.d;
    if (i < 0 || i >= n) throw ContractViolation("attention_jacobian_slices: token index out of range");

    const Matrix a = attention_entries(tokens, params);
    const Matrix qtk = params.Q.transpose() * params.K;
    const Eigen::RowVectorXd ci = params.beta * (tokens.col(i).transpose() * qtk);  // beta x_i^T Q^T K
    // Row j of e_rows is beta x_j^T K^T Q.
    const Matrix e_rows = params.beta * (tokens.transpose() * qtk.transpose());
    const Eigen::RowVectorXd weighted = a.row(i) * e_rows;  // beta sum_l A_il x_l^T K^T Q

    AttentionJacobianSlice slice;
    slice.i = i;
    slice.grad.assign(n, Matrix::Zero(n, d));
    for (int j = 0; j < n; ++j) {
        slice.grad[i].row(j) = (e_rows.row(j) - a(i, i) * ci - weighted) * a(i, j);
    }
    slice.grad[i].row(i) += a(i, i) * ci;
    for (int h = 0; h < n; ++h) {
        if (h == i) continue;
        for (int j = 0; j < n; ++j) {
            slice.grad[h].row(j) = a(i, h) * ((j == h ? 1.0 : 0.0) - a(i, j)) * ci;
        }
    }
    return slice;
}

inline AttentionJacobianSlice attention_jacobian_slices(const SphereConfiguration& config,
                                                        const ModelParams& params, int i) {
    config.require_unit();
    return attention_jacobian_slices_entries(config.tokens, params, i);
}

// y_i = V sum_j A_ij x_j, returned column-wise (d x n).
inline Matrix influence_entries(const Matrix& tokens, const ModelParams& params) {
    const Matrix a = attention_entries(tokens, params);
    return params.V * (tokens * a.transpose());
}

inline Matrix influence_vectors(const SphereConfiguration& config, const ModelParams& params) {
    config.require_unit();
    return influence_entries(config.tokens, params);
}

}  // namespace attnflow
