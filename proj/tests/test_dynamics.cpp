#include <catch2/catch_amalgamated.hpp>

#include <attnflow/dynamics.hpp>

#include "testutil.hpp"

using namespace attnflow;

TEST_CASE("vf_oja") {
    SECTION("eigenvectors are equilibria") {
        const Matrix v = testutil::random_symmetric(5, 400);
        const ValueSpectrum spectrum = symmetric_eigen(v);
        for (int k = 1; k <= 5; ++k) {
            REQUIRE(vf_oja(spectrum.vec(k), v).norm() < 1e-13);
        }
    }

    SECTION("hand-checked 2x2 case") {
        Matrix v(2, 2);
        v << 2, 0, 0, -1;
        Vector x(2);
        x << 1.0 / std::sqrt(2.0), 1.0 / std::sqrt(2.0);
        // Direct arithmetic: y = Vx = (2,-1)/sqrt(2), x.y = 1/2,
        // f = y - (x.y) x = (3, -3) / (2 sqrt(2)).
        const Vector y = v * x;
        const Vector oracle = y - x.dot(y) * x;
        const double c = 3.0 / (2.0 * std::sqrt(2.0));
        REQUIRE(oracle(0) == Catch::Approx(c).margin(1e-15));
        REQUIRE(oracle(1) == Catch::Approx(-c).margin(1e-15));
        REQUIRE((vf_oja(x, v) - oracle).norm() < 1e-15);
    }

    SECTION("linearity in V: negating V negates the field") {
        const Matrix v = testutil::random_symmetric(4, 410);
        const Vector x = testutil::random_unit_vector(4, 411);
        REQUIRE((vf_oja(x, v) + vf_oja(x, Matrix(-v))).norm() < 1e-14);
    }
}

TEST_CASE("vf_multiagent_oja") {
    const Matrix v = testutil::random_symmetric(4, 420);
    const ValueSpectrum spectrum = symmetric_eigen(v);

    SECTION("consensus at any eigenvector is an equilibrium") {
        for (int k = 1; k <= 4; ++k) {
            const SphereConfiguration state = make_consensus_state(spectrum, k, 7);
            REQUIRE(vf_multiagent_oja(state, v).cwiseAbs().maxCoeff() < 1e-13);
        }
    }

    SECTION("n = 1 reduces to vf_oja exactly") {
        const Vector x = testutil::random_unit_vector(4, 421);
        const SphereConfiguration single{Matrix(x)};
        const Matrix f = vf_multiagent_oja(single, v);
        REQUIRE((f.col(0) - vf_oja(x, v)).norm() == 0.0);
    }

    SECTION("vanishing token sum is an equilibrium") {
        const SphereConfiguration state = testutil::antipodal_pairs(4, 3, 422);
        REQUIRE(vf_multiagent_oja(state, v).cwiseAbs().maxCoeff() < 1e-14);
    }

    SECTION("matches the (1/n) P V s formula") {
        const SphereConfiguration config = sample_uniform_sphere(4, 6, 423);
        const Matrix f = vf_multiagent_oja(config, v);
        const Vector s = config.tokens.rowwise().sum();
        for (int i = 0; i < 6; ++i) {
            const Vector xi = config.tokens.col(i);
            const Vector expect = (v * s - xi.dot(v * s) * xi) / 6.0;
            REQUIRE((f.col(i) - expect).norm() < 1e-13);
        }
    }
}

TEST_CASE("vf_self_attention") {
    const int d = 4, n = 6;
    const ModelParams params = testutil::params_from(testutil::random_matrix(d, d, 430),
                                                     testutil::random_matrix(d, d, 431),
                                                     testutil::random_symmetric(d, 432), 1.2, n);
    const ValueSpectrum spectrum = symmetric_eigen(params.V);

    SECTION("beta = 0 field is bit-identical to the multiagent Oja field") {
        ModelParams cold = params;
        cold.beta = 0.0;
        const SphereConfiguration config = sample_uniform_sphere(d, n, 433);
        REQUIRE(vf_self_attention(config, cold) == vf_multiagent_oja(config, cold.V));
    }

    SECTION("consensus is an equilibrium") {
        for (int k = 1; k <= d; ++k) {
            const SphereConfiguration state = make_consensus_state(spectrum, k, n);
            REQUIRE(vf_self_attention(state, params).cwiseAbs().maxCoeff() < 1e-13);
        }
    }

    SECTION("oddness under global sign flip") {
        for (int trial = 0; trial < 5; ++trial) {
            const SphereConfiguration config = sample_uniform_sphere(d, n, 440 + trial);
            SphereConfiguration negated = config;
            negated.tokens = -negated.tokens;
            const Matrix f = vf_self_attention(config, params);
            const Matrix g = vf_self_attention(negated, params);
            REQUIRE((f + g).cwiseAbs().maxCoeff() < 1e-13);
        }
    }

    SECTION("tangency of all three fields") {
        const SphereConfiguration config = sample_uniform_sphere(d, n, 450);
        const Matrix fs = vf_self_attention(config, params);
        const Matrix fm = vf_multiagent_oja(config, params.V);
        for (int i = 0; i < n; ++i) {
            REQUIRE(std::abs(config.tokens.col(i).dot(fs.col(i))) < 1e-12);
            REQUIRE(std::abs(config.tokens.col(i).dot(fm.col(i))) < 1e-12);
        }
        const Vector x = testutil::random_unit_vector(d, 451);
        REQUIRE(std::abs(x.dot(vf_oja(x, params.V))) < 1e-12);
    }
}

TEST_CASE("integrate: Oja flow finds the principal eigenvector") {
    Matrix v = Matrix::Zero(3, 3);
    v.diagonal() << 3.0, 1.0, -1.0;
    IntegrationOptions opts;
    opts.max_time = 200.0;
    for (int trial = 0; trial < 5; ++trial) {
        const SphereConfiguration x0 = sample_uniform_sphere(3, 1, 460 + trial);
        const Trajectory traj = integrate(x0, SystemKind::oja, testutil::moja_params(v, 1), opts);
        REQUIRE(traj.termination == Termination::converged);
        const Vector xf = traj.final_state().token(0);
        const double dist = std::min((xf - Vector::Unit(3, 0)).norm(), (xf + Vector::Unit(3, 0)).norm());
        REQUIRE(dist < 1e-6);
    }
}

TEST_CASE("integrate: trajectory invariants and step-halving consistency") {
    const int d = 4, n = 5;
    const ModelParams params = testutil::params_from(testutil::random_matrix(d, d, 470),
                                                     testutil::random_matrix(d, d, 471),
                                                     testutil::random_symmetric(d, 472), 1.0, n);
    const SphereConfiguration x0 = sample_uniform_sphere(d, n, 473);
    IntegrationOptions opts;
    opts.max_time = 300.0;
    const Trajectory traj = integrate(x0, SystemKind::self_attention, params, opts);
    REQUIRE(traj.termination == Termination::converged);

    for (std::size_t s = 0; s < traj.states.size(); ++s) {
        REQUIRE(traj.states[s].max_norm_deviation() < 1e-9);
        if (s > 0) REQUIRE(traj.times[s] > traj.times[s - 1]);
    }

    IntegrationOptions half = opts;
    half.step = opts.step / 2.0;
    const Trajectory traj2 = integrate(x0, SystemKind::self_attention, params, half);
    REQUIRE(traj2.termination == Termination::converged);
    REQUIRE((traj.final_state().tokens - traj2.final_state().tokens).cwiseAbs().maxCoeff() < 1e-7);
}

TEST_CASE("integrate: max_time termination and option validation") {
    const Matrix v = testutil::random_symmetric(3, 480);
    const ModelParams params = testutil::moja_params(v, 4);
    const SphereConfiguration x0 = sample_uniform_sphere(3, 4, 481);
    IntegrationOptions opts;
    opts.max_time = 0.5;
    const Trajectory traj = integrate(x0, SystemKind::moja, params, opts);
    REQUIRE(traj.termination == Termination::max_time);
    REQUIRE(traj.final_time() >= 0.5);
    // Final state stored exactly even off the record stride.
    REQUIRE(traj.times.back() == traj.final_time());

    IntegrationOptions bad = opts;
    bad.step = 0.9;
    REQUIRE_THROWS_AS(integrate(x0, SystemKind::moja, params, bad), ContractViolation);
    bad = opts;
    bad.convergence_tol = 0.0;
    REQUIRE_THROWS_AS(integrate(x0, SystemKind::moja, params, bad), ContractViolation);
}

TEST_CASE("beta = 0 trajectories coincide with multiagent Oja trajectories") {
    const int d = 5, n = 8;
    ModelParams params = testutil::params_from(testutil::random_matrix(d, d, 490),
                                               testutil::random_matrix(d, d, 491),
                                               testutil::random_symmetric(d, 492), 0.0, n);
    const SphereConfiguration x0 = sample_uniform_sphere(d, n, 493);
    IntegrationOptions opts;
    opts.max_time = 200.0;
    const Trajectory ta = integrate(x0, SystemKind::self_attention, params, opts);
    const Trajectory tb = integrate(x0, SystemKind::moja, params, opts);
    REQUIRE(ta.times == tb.times);
    for (std::size_t s = 0; s < ta.states.size(); ++s) {
        REQUIRE((ta.states[s].tokens - tb.states[s].tokens).cwiseAbs().maxCoeff() <= 1e-10);
    }
}

TEST_CASE("Lyapunov functions") {
    const Matrix v = testutil::random_symmetric(5, 500);
    const ValueSpectrum spectrum = symmetric_eigen(v);

    SECTION("values at eigenvectors") {
        REQUIRE(lyapunov_oja(spectrum.vec(1), spectrum) == Catch::Approx(0.0).margin(1e-12));
        const double expect = 0.5 * (spectrum.lambda(1) - spectrum.lambda(5));
        REQUIRE(lyapunov_oja(spectrum.vec(5), spectrum) == Catch::Approx(expect).margin(1e-12));
        REQUIRE(expect >= 0.0);
    }

    SECTION("descent along Oja trajectories") {
        const ModelParams params = testutil::moja_params(v, 1);
        IntegrationOptions opts;
        opts.record_stride = 1;
        opts.max_time = 200.0;
        const SphereConfiguration x0 = sample_uniform_sphere(5, 1, 501);
        const Trajectory traj = integrate(x0, SystemKind::oja, params, opts);
        for (std::size_t s = 1; s < traj.states.size(); ++s) {
            const double before = lyapunov_oja(traj.states[s - 1].token(0), spectrum);
            const double after = lyapunov_oja(traj.states[s].token(0), spectrum);
            REQUIRE(after <= before + 1e-9);
        }
    }

    SECTION("descent along multiagent trajectories, summed form") {
        const ModelParams params = testutil::moja_params(v, 6);
        IntegrationOptions opts;
        opts.record_stride = 1;
        opts.max_time = 200.0;
        const SphereConfiguration x0 = sample_uniform_sphere(5, 6, 502);
        const Trajectory traj = integrate(x0, SystemKind::moja, params, opts);
        REQUIRE(traj.termination == Termination::converged);
        for (std::size_t s = 1; s < traj.states.size(); ++s) {
            REQUIRE(lyapunov_moja(traj.states[s], spectrum) <=
                    lyapunov_moja(traj.states[s - 1], spectrum) + 1e-9);
        }
    }
}
