// SPDX-License-Identifier: Apache-2.0
//
// attnflow command line: seeded experiments over the sphere dynamics.
//   simulate  integrate one run and classify the endpoint
//   census    instances x runs sweep with JSONL / CSV / SVG outputs
//   scan      stability verdicts for all consensus / bipartite patterns
//   spectrum  closed-form vs numerical Jacobian spectrum at one point
//   certify   classify one converged run and attach its certificate
//
// Exit codes: 0 ok, 1 usage / contract error, 2 numerical failure, 3 I/O.

#include <CLI11.hpp>

#include <cstdio>
#include <cstring>
#include <iostream>
#include <string>
#include <vector>

#include <attnflow/attnflow.hpp>

namespace {

using namespace attnflow;

struct CliOptions {
    std::string system = "self_attention";
    int d = 3;
    int n = 10;
    double beta = 1.0;
    std::uint64_t seed = 1;
    int instances = 1;
    int runs = 1;
    double step = 0.05;
    double tmax = 500.0;
    double tol = 1e-9;
    int threads = 0;
    std::string out;
    std::string csv;
    std::string svg;
    bool raw = false;     // scan
    long samples = 0;     // scan
    int k = 1;            // spectrum
    int n1 = -1;          // spectrum
    int run_index = 0;    // simulate / certify
};

// A single JSON document provides defaults; explicit flags override it.
void apply_config_file(const std::string& path, CliOptions& opt) {
    const ordered_json j = ordered_json::parse(read_text_file(path));
    opt.system = j.value("system", opt.system);
    opt.d = j.value("d", opt.d);
    opt.n = j.value("n", opt.n);
    opt.beta = j.value("beta", opt.beta);
    opt.seed = j.value("seed", opt.seed);
    opt.instances = j.value("instances", opt.instances);
    opt.runs = j.value("runs", opt.runs);
    opt.step = j.value("h", opt.step);
    opt.tmax = j.value("tmax", opt.tmax);
    opt.tol = j.value("tol", opt.tol);
    opt.threads = j.value("threads", opt.threads);
    opt.out = j.value("out", opt.out);
    opt.csv = j.value("csv", opt.csv);
    opt.svg = j.value("svg", opt.svg);
    opt.samples = j.value("samples", opt.samples);
    opt.k = j.value("k", opt.k);
    opt.n1 = j.value("n1", opt.n1);
    opt.run_index = j.value("run", opt.run_index);
}

void add_common_flags(CLI::App* cmd, CliOptions& opt) {
    cmd->set_help_flag("--help", "print help");  // frees -h / --h for the step size
    static std::string config_sink;  // applied in a pre-parse pass
    cmd->add_option("--config", config_sink, "JSON document with defaults for all flags");
    cmd->add_option("--system", opt.system, "oja | moja | self_attention");
    cmd->add_option("--d", opt.d, "ambient dimension");
    cmd->add_option("--n", opt.n, "token count");
    cmd->add_option("--beta", opt.beta, "inverse temperature (0 = uniform attention)");
    cmd->add_option("--seed", opt.seed, "master seed");
    cmd->add_option("--h", opt.step, "integration step");
    cmd->add_option("--tmax", opt.tmax, "integration time horizon");
    cmd->add_option("--tol", opt.tol, "convergence tolerance on max_i ||f_i||_inf");
    cmd->add_option("--threads", opt.threads, "worker threads (0 = hardware)");
}

IntegrationOptions integration_from(const CliOptions& opt) {
    IntegrationOptions io;
    io.step = opt.step;
    io.max_time = opt.tmax;
    io.convergence_tol = opt.tol;
    return io;
}

ordered_json report_to_json(const EquilibriumReport& report) {
    ordered_json j;
    j["class"] = to_string(report.cls);
    j["k"] = report.k;
    j["n1"] = report.n1;
    j["n2"] = report.n2;
    j["m"] = report.m;
    j["attention_rank"] = report.attention_rank;
    j["spectral_abscissa"] = report.spectral_abscissa;
    j["verdict"] = to_string(report.verdict);
    j["residual"] = report.residual;
    return j;
}

int cmd_simulate(const CliOptions& opt, bool certify) {
    const SystemKind system = system_from_string(opt.system);
    const int n = system == SystemKind::oja ? 1 : opt.n;
    const ModelParams params = random_instance(opt.d, n, opt.beta, derive_seed(opt.seed, 1, 0));
    const ValueSpectrum spectrum = symmetric_eigen(params.V);
    const SphereConfiguration x0 =
        sample_uniform_sphere(opt.d, n, derive_seed(opt.seed, 1, opt.run_index + 1));
    const Trajectory traj = integrate(x0, system, params, integration_from(opt));

    ordered_json j;
    j["system"] = opt.system;
    j["d"] = opt.d;
    j["n"] = n;
    j["beta"] = opt.beta;
    j["seed"] = opt.seed;
    j["run"] = opt.run_index;
    j["termination"] = to_string(traj.termination);
    j["time"] = traj.final_time();
    j["steps"] = traj.steps;
    j["eigenvalues"] =
        std::vector<double>(spectrum.eigenvalues.data(), spectrum.eigenvalues.data() + spectrum.dim());

    if (traj.termination == Termination::converged) {
        const EquilibriumReport report =
            classify_equilibrium(traj.final_state(), system, params, spectrum);
        j["report"] = report_to_json(report);
        if (certify) {
            switch (report.cls) {
                case EquilibriumReport::Class::polygonal: {
                    const PolygonalCertificate cert =
                        polygonal_certificate(traj.final_state(), system, params);
                    j["certificate"] = {{"type", "polygonal"},
                                        {"max_real_part", cert.max_real_part},
                                        {"unstable", cert.unstable},
                                        {"discarded_modes", cert.discarded_modes}};
                    break;
                }
                case EquilibriumReport::Class::consensus: {
                    const AnalyticSpectrum analytic = consensus_spectrum(spectrum, report.k, n);
                    j["certificate"] = {{"type", "consensus_spectrum"},
                                        {"analytic_abscissa", analytic.max_value()}};
                    break;
                }
                case EquilibriumReport::Class::bipartite: {
                    const Verdict verdict =
                        bipartite_stability_test(params, spectrum, report.k, report.n1, report.n2);
                    j["certificate"] = {{"type", "bipartite_analytic"},
                                        {"verdict", to_string(verdict)}};
                    break;
                }
                default: {
                    const ClusteringCertificate cert =
                        clustering_certificate(traj.final_state(), system, params);
                    j["certificate"] = {{"type", "clustering_singularity"},
                                        {"collinearity_residual", cert.collinearity_residual},
                                        {"singularity_residual", cert.singularity_residual}};
                    break;
                }
            }
        }
    }

    std::cout << j.dump(2) << "\n";
    if (!opt.svg.empty()) write_text_file(opt.svg, trajectory_to_svg(traj));
    if (!opt.out.empty()) write_text_file(opt.out, j.dump() + "\n");
    return 0;
}

int cmd_census(const CliOptions& opt) {
    ExperimentSpec spec;
    spec.system = system_from_string(opt.system);
    spec.d = opt.d;
    spec.n = spec.system == SystemKind::oja ? 1 : opt.n;
    spec.beta = opt.beta;
    spec.instances = opt.instances;
    spec.runs_per_instance = opt.runs;
    spec.seed = opt.seed;
    spec.integration = integration_from(opt);
    spec.threads = opt.threads;

    const std::vector<CensusRecord> records = run_census(spec);
    if (!opt.out.empty()) write_text_file(opt.out, census_to_jsonl(records));
    const std::string csv = census_to_csv(records);
    if (!opt.csv.empty()) write_text_file(opt.csv, csv);
    std::cout << csv;
    return 0;
}

int cmd_scan(const CliOptions& opt) {
    const ModelParams params = random_instance(opt.d, opt.n, opt.beta, derive_seed(opt.seed, 1, 0));
    const ValueSpectrum spectrum = symmetric_eigen(params.V);
    ScanOptions scan;
    if (opt.samples > 0) {
        scan.mode = ScanMode::sample;
        scan.samples = opt.samples;
        scan.seed = derive_seed(opt.seed, 2, 0);
    } else {
        scan.mode = opt.raw ? ScanMode::exhaustive_raw : ScanMode::exhaustive;
    }
    const std::vector<ScanRow> rows = scan_bipartite(params, spectrum, scan);
    const std::string csv = scan_to_csv(rows);
    if (!opt.out.empty()) {
        write_text_file(opt.out, csv);
    } else {
        std::cout << csv;
    }

    unsigned long long total = 0, stable = 0;
    for (const ScanRow& row : rows) {
        total += row.count;
        if (row.verdict == Verdict::stable) stable += row.count;
    }
    std::fprintf(stdout, "patterns %llu, stable %llu\n", total, stable);
    return 0;
}

int cmd_spectrum(const CliOptions& opt) {
    const ModelParams params = random_instance(opt.d, opt.n, opt.beta, derive_seed(opt.seed, 1, 0));
    const ValueSpectrum spectrum = symmetric_eigen(params.V);
    const bool bipartite = opt.n1 >= 1 && opt.n1 < opt.n;

    ordered_json j;
    j["k"] = opt.k;
    AnalyticSpectrum analytic;
    SphereConfiguration state;
    if (bipartite) {
        const auto [bc, spec_out] = bipartite_spectrum(params, spectrum, opt.k, opt.n1, opt.n - opt.n1);
        analytic = spec_out;
        state = make_bipartite_state(spectrum, opt.k, opt.n1, opt.n - opt.n1);
        j["n1"] = opt.n1;
        j["n2"] = opt.n - opt.n1;
        j["delta1"] = bc.delta1;
        j["delta2"] = bc.delta2;
        j["verdict"] =
            to_string(bipartite_stability_test(params, spectrum, opt.k, opt.n1, opt.n - opt.n1));
    } else {
        analytic = consensus_spectrum(spectrum, opt.k, opt.n);
        state = make_consensus_state(spectrum, opt.k, opt.n);
        j["verdict"] = to_string(consensus_stability_test(spectrum, opt.k, opt.n));
    }

    ordered_json entries = ordered_json::array();
    for (const auto& e : analytic.entries) {
        entries.push_back(
            {{"value", e.value}, {"multiplicity", e.multiplicity}, {"class", to_string(e.cls)}});
    }
    j["analytic"] = entries;

    const auto numerical = general_eigenvalues(jacobian_self(state, params));
    ordered_json numeric = ordered_json::array();
    for (const Complex& ev : numerical) numeric.push_back({{"re", ev.real()}, {"im", ev.imag()}});
    j["numerical"] = numeric;

    const auto match = match_eigenvalue_multisets(numerical, to_complex(analytic.expand()), 1e-7);
    j["match"] = match.ok;
    j["worst_pair_distance"] = match.worst_distance;

    std::cout << j.dump(2) << "\n";
    if (!opt.out.empty()) write_text_file(opt.out, j.dump() + "\n");
    return match.ok ? 0 : 2;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"continuous-time self-attention dynamics on spheres"};
    app.set_help_flag("--help", "print help");
    app.require_subcommand(1);

    CliOptions opt;
    std::string config_path;

    // The config file is applied before flag parsing so flags override it.
    for (int i = 1; i + 1 < argc; ++i) {
        if (std::strcmp(argv[i], "--config") == 0) config_path = argv[i + 1];
    }
    try {
        if (!config_path.empty()) apply_config_file(config_path, opt);
    } catch (const IoFailure& e) {
        std::cerr << "i/o error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "bad config: " << e.what() << "\n";
        return 1;
    }

    app.add_option("--config", config_path, "JSON document with defaults for all flags");

    CLI::App* simulate = app.add_subcommand("simulate", "integrate one run and classify it");
    add_common_flags(simulate, opt);
    simulate->add_option("--run", opt.run_index, "run index within the instance");
    simulate->add_option("--out", opt.out, "write the report as one JSONL line");
    simulate->add_option("--svg", opt.svg, "write a d = 3 trajectory plot");

    CLI::App* census = app.add_subcommand("census", "sweep instances x runs and classify endpoints");
    add_common_flags(census, opt);
    census->add_option("--instances", opt.instances, "number of (Q, K, V) instances");
    census->add_option("--runs", opt.runs, "runs per instance");
    census->add_option("--out", opt.out, "JSONL output path");
    census->add_option("--csv", opt.csv, "CSV summary path");

    CLI::App* scan = app.add_subcommand("scan", "stability verdicts over sign patterns");
    add_common_flags(scan, opt);
    scan->add_flag("--raw", opt.raw, "enumerate every pattern instead of (k, n1) groups");
    scan->add_option("--samples", opt.samples, "sample this many random patterns instead");
    scan->add_option("--out", opt.out, "CSV output path");

    CLI::App* spectrum = app.add_subcommand("spectrum", "analytic vs numerical spectrum at a point");
    add_common_flags(spectrum, opt);
    spectrum->add_option("--k", opt.k, "eigenvector index (1-based)");
    spectrum->add_option("--n1", opt.n1, "tokens at +v_k (omit for consensus)");
    spectrum->add_option("--out", opt.out, "JSON output path");

    CLI::App* certify = app.add_subcommand("certify", "classify one run and attach a certificate");
    add_common_flags(certify, opt);
    certify->add_option("--run", opt.run_index, "run index within the instance");
    certify->add_option("--out", opt.out, "write the report as one JSONL line");
    certify->add_option("--svg", opt.svg, "write a d = 3 trajectory plot");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (simulate->parsed()) return cmd_simulate(opt, false);
        if (census->parsed()) return cmd_census(opt);
        if (scan->parsed()) return cmd_scan(opt);
        if (spectrum->parsed()) return cmd_spectrum(opt);
        if (certify->parsed()) return cmd_simulate(opt, true);
        std::cerr << "no subcommand\n";
        return 1;
    } catch (const ContractViolation& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const IoFailure& e) {
        std::cerr << "i/o error: " << e.what() << "\n";
        return 3;
    } catch (const NumericalFailure& e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "failure: " << e.what() << "\n";
        return 2;
    }
}
