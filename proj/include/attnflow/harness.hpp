// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "attnflow/dynamics.hpp"
#include "attnflow/rng.hpp"
#include "attnflow/stability.hpp"

namespace attnflow {

using ordered_json = nlohmann::ordered_json;

// ---------------------------------------------------------------------------
// Instance generation
// ---------------------------------------------------------------------------

// Q, K with i.i.d. standard normal entries; V a symmetrized Gaussian,
// resampled (not shifted) until lambda_1 > 0 and lambda_1 - lambda_2 >
// assumption_gap, so the eigenvalue dispersion stays natural. Entries are
// drawn row by row, which pins the stream layout for reproduction elsewhere.
inline ModelParams random_instance(int d, int n, double beta, std::uint64_t seed,
                                   double assumption_gap = 1e-3, int resample_cap = 1000) {
    if (d < 2) throw ContractViolation("random_instance: d must be >= 2");
    if (n < 1) throw ContractViolation("random_instance: n must be >= 1");
    SplitMix64 rng(seed);
    auto draw = [&rng](int rows, int cols) {
        Matrix m(rows, cols);
        for (int r = 0; r < rows; ++r)
            for (int c = 0; c < cols; ++c) m(r, c) = rng.next_gaussian();
        return m;
    };

    ModelParams params;
    params.d = d;
    params.n = n;
    params.beta = beta;
    params.Q = draw(d, d);
    params.K = draw(d, d);
    for (int attempt = 0; attempt < resample_cap; ++attempt) {
        const Matrix raw = draw(d, d);
        params.V = 0.5 * (raw + raw.transpose());
        const ValueSpectrum spectrum = symmetric_eigen(params.V);
        if (spectrum.lambda(1) > 0.0 && spectrum.spectral_gap() > assumption_gap) {
            params.validate();
            return params;
        }
    }
    throw NumericalFailure("random_instance: no admissible V after " +
                           std::to_string(resample_cap) + " resamples (seed " +
                           std::to_string(seed) + ")");
}

// ---------------------------------------------------------------------------
// Census sweeps
// ---------------------------------------------------------------------------

struct ExperimentSpec {
    SystemKind system = SystemKind::self_attention;
    int d = 3;
    int n = 10;
    double beta = 1.0;
    int instances = 1;
    int runs_per_instance = 1;
    std::uint64_t seed = 1;
    IntegrationOptions integration;
    ClassifyTolerances tolerances;
    int threads = 0;  // 0 = hardware concurrency

    void validate() const {
        if (instances < 1 || runs_per_instance < 1) {
            throw ContractViolation("ExperimentSpec: instances and runs must be >= 1");
        }
        if (system == SystemKind::oja && n != 1) {
            throw ContractViolation("ExperimentSpec: the oja system is single-token, set n = 1");
        }
        if (d < 2 || n < 1) throw ContractViolation("ExperimentSpec: need d >= 2, n >= 1");
        integration.validate();
    }
};

struct CensusRecord {
    int instance = 0;
    int run = 0;
    std::uint64_t seed = 0;
    std::string status;  // "ok" | "unconverged" | "error"
    std::string error;   // message when status == "error"
    EquilibriumReport report;
    long steps = 0;
    double wall_ms = 0.0;
};

inline std::string census_class_label(const CensusRecord& rec) {
    if (rec.status == "ok") return to_string(rec.report.cls);
    return rec.status;
}

// Index-addressed work loop; worker results land in pre-assigned slots so
// thread scheduling cannot reorder them.
inline void parallel_for_index(std::size_t count, int threads, const std::function<void(std::size_t)>& body) {
    unsigned int workers = threads > 0 ? static_cast<unsigned int>(threads)
                                       : std::max(1u, std::thread::hardware_concurrency());
    workers = static_cast<unsigned int>(std::min<std::size_t>(workers, count));
    if (workers <= 1) {
        for (std::size_t i = 0; i < count; ++i) body(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    std::exception_ptr first_error;
    std::mutex error_mutex;
    pool.reserve(workers);
    for (unsigned int w = 0; w < workers; ++w) {
        pool.emplace_back([&]() {
            while (true) {
                const std::size_t i = next.fetch_add(1);
                if (i >= count) return;
                try {
                    body(i);
                } catch (...) {
                    std::lock_guard<std::mutex> lock(error_mutex);
                    if (!first_error) first_error = std::current_exception();
                }
            }
        });
    }
    for (auto& t : pool) t.join();
    if (first_error) std::rethrow_exception(first_error);
}

// One record per (instance, run): sample an initial condition, integrate,
// classify. Failures are recorded in-stream and never abort the sweep.
// Output order is (instance, run) regardless of thread count.
inline std::vector<CensusRecord> run_census(const ExperimentSpec& spec) {
    spec.validate();

    std::vector<ModelParams> params(spec.instances);
    std::vector<ValueSpectrum> spectra(spec.instances);
    for (int i = 0; i < spec.instances; ++i) {
        params[i] = random_instance(spec.d, spec.n, spec.beta, derive_seed(spec.seed, i + 1, 0));
        spectra[i] = symmetric_eigen(params[i].V);
    }

    const std::size_t total = static_cast<std::size_t>(spec.instances) * spec.runs_per_instance;
    std::vector<CensusRecord> records(total);
    parallel_for_index(total, spec.threads, [&](std::size_t slot) {
        const int instance = static_cast<int>(slot) / spec.runs_per_instance;
        const int run = static_cast<int>(slot) % spec.runs_per_instance;
        CensusRecord& rec = records[slot];
        rec.instance = instance;
        rec.run = run;
        rec.seed = derive_seed(spec.seed, instance + 1, run + 1);
        const auto started = std::chrono::steady_clock::now();
        try {
            const SphereConfiguration config0 = sample_uniform_sphere(spec.d, spec.n, rec.seed);
            const Trajectory traj = integrate(config0, spec.system, params[instance], spec.integration);
            rec.steps = traj.steps;
            if (traj.termination == Termination::converged) {
                rec.status = "ok";
                rec.report = classify_equilibrium(traj.final_state(), spec.system, params[instance],
                                                  spectra[instance], spec.tolerances);
            } else {
                rec.status = "unconverged";
                rec.report.residual = traj.final_residual;
            }
        } catch (const std::exception& e) {
            rec.status = "error";
            rec.error = e.what();
        }
        rec.wall_ms = std::chrono::duration<double, std::milli>(
                          std::chrono::steady_clock::now() - started)
                          .count();
    });
    return records;
}

// ---------------------------------------------------------------------------
// Bipartite / consensus stability scans
// ---------------------------------------------------------------------------

enum class ScanMode { exhaustive, exhaustive_raw, sample };

struct ScanOptions {
    ScanMode mode = ScanMode::exhaustive;
    long samples = 0;          // sample mode
    std::uint64_t seed = 0;    // sample mode
    double tol_margin = 1e-7;

    void validate(int n) const {
        if ((mode == ScanMode::exhaustive || mode == ScanMode::exhaustive_raw) && n > 20) {
            throw ContractViolation("scan: exhaustive enumeration requires n <= 20");
        }
        if (mode == ScanMode::sample && samples < 1) {
            throw ContractViolation("scan: sample mode needs a positive sample count");
        }
    }
};

struct ScanRow {
    int k = 0;
    int n1 = 0;
    int n2 = 0;
    unsigned long long count = 1;  // sign patterns covered by this row
    std::string pattern;           // raw / sample modes only
    Verdict verdict = Verdict::marginal;
};

inline unsigned long long binomial(int n, int r) {
    unsigned long long acc = 1;
    for (int i = 1; i <= r; ++i) acc = acc * (n - r + i) / i;
    return acc;
}

namespace detail {
inline Verdict scan_verdict(const ModelParams& params, const ValueSpectrum& spectrum, int k, int n1,
                            int n2, double tol_margin) {
    if (n1 == 0 || n2 == 0) return consensus_stability_test(spectrum, k, params.n, tol_margin);
    return bipartite_stability_test(params, spectrum, k, n1, n2, tol_margin);
}
}  // namespace detail

// Enumerates the d * 2^n consensus / bipartite sign patterns. Verdicts
// depend only on (k, n1, n2), so exhaustive mode tests one representative
// per (k, n1) group and carries the C(n, n1) pattern count; raw mode visits
// every pattern individually and is kept for cross-validation on small n.
inline std::vector<ScanRow> scan_bipartite(const ModelParams& params, const ValueSpectrum& spectrum,
                                           const ScanOptions& opts) {
    opts.validate(params.n);
    const int n = params.n;
    const int d = spectrum.dim();
    std::vector<ScanRow> rows;

    if (opts.mode == ScanMode::exhaustive) {
        rows.reserve(static_cast<std::size_t>(d) * (n + 1));
        for (int k = 1; k <= d; ++k) {
            for (int n1 = n; n1 >= 0; --n1) {
                ScanRow row;
                row.k = k;
                row.n1 = n1;
                row.n2 = n - n1;
                row.count = binomial(n, n1);
                row.verdict = detail::scan_verdict(params, spectrum, k, n1, row.n2, opts.tol_margin);
                rows.push_back(row);
            }
        }
        return rows;
    }

    auto pattern_string = [n](std::uint64_t mask) {
        std::string s(n, '+');
        for (int i = 0; i < n; ++i)
            if ((mask >> i) & 1u) s[i] = '-';
        return s;
    };

    if (opts.mode == ScanMode::exhaustive_raw) {
        rows.reserve(static_cast<std::size_t>(d) << n);
        for (int k = 1; k <= d; ++k) {
            for (std::uint64_t mask = 0; mask < (1ULL << n); ++mask) {
                ScanRow row;
                row.k = k;
                row.n2 = static_cast<int>(__builtin_popcountll(mask));
                row.n1 = n - row.n2;
                row.pattern = pattern_string(mask);
                row.verdict = detail::scan_verdict(params, spectrum, k, row.n1, row.n2, opts.tol_margin);
                rows.push_back(row);
            }
        }
        return rows;
    }

    SplitMix64 rng(opts.seed);
    rows.reserve(static_cast<std::size_t>(opts.samples));
    for (long s = 0; s < opts.samples; ++s) {
        ScanRow row;
        row.k = 1 + static_cast<int>(rng.next_u64() % d);
        const std::uint64_t mask = n >= 64 ? rng.next_u64() : (rng.next_u64() & ((1ULL << n) - 1));
        row.n2 = static_cast<int>(__builtin_popcountll(mask));
        row.n1 = n - row.n2;
        row.pattern = pattern_string(mask);
        row.verdict = detail::scan_verdict(params, spectrum, row.k, row.n1, row.n2, opts.tol_margin);
        rows.push_back(row);
    }
    return rows;
}

// ---------------------------------------------------------------------------
// Serialization: JSONL records, CSV summaries, SVG trajectory plots
// ---------------------------------------------------------------------------

inline ordered_json census_record_to_json(const CensusRecord& rec) {
    ordered_json j;
    j["schema"] = 1;
    j["instance"] = rec.instance;
    j["run"] = rec.run;
    j["seed"] = rec.seed;
    j["class"] = census_class_label(rec);
    j["k"] = rec.status == "ok" ? rec.report.k : 0;
    j["n1"] = rec.status == "ok" ? rec.report.n1 : 0;
    j["n2"] = rec.status == "ok" ? rec.report.n2 : 0;
    j["m"] = rec.status == "ok" ? rec.report.m : 0;
    j["attention_rank"] = rec.status == "ok" ? rec.report.attention_rank : 0;
    j["spectral_abscissa"] = rec.status == "ok" ? rec.report.spectral_abscissa : 0.0;
    j["verdict"] = rec.status == "ok" ? to_string(rec.report.verdict) : "";
    j["residual"] = rec.report.residual;
    j["steps"] = rec.steps;
    if (!rec.error.empty()) j["error"] = rec.error;
    j["wall_ms"] = rec.wall_ms;  // timing metadata, excluded from determinism checks
    return j;
}

inline CensusRecord census_record_from_json(const ordered_json& j) {
    CensusRecord rec;
    rec.instance = j.at("instance").get<int>();
    rec.run = j.at("run").get<int>();
    rec.seed = j.at("seed").get<std::uint64_t>();
    const std::string cls = j.at("class").get<std::string>();
    rec.steps = j.at("steps").get<long>();
    rec.wall_ms = j.value("wall_ms", 0.0);
    rec.error = j.value("error", "");
    rec.report.residual = j.at("residual").get<double>();
    if (cls == "unconverged" || cls == "error") {
        rec.status = cls;
        return rec;
    }
    rec.status = "ok";
    if (cls == "consensus") rec.report.cls = EquilibriumReport::Class::consensus;
    else if (cls == "bipartite") rec.report.cls = EquilibriumReport::Class::bipartite;
    else if (cls == "clustering") rec.report.cls = EquilibriumReport::Class::m_clustering;
    else if (cls == "polygonal") rec.report.cls = EquilibriumReport::Class::polygonal;
    else rec.report.cls = EquilibriumReport::Class::near_equilibrium_unclassified;
    rec.report.k = j.at("k").get<int>();
    rec.report.n1 = j.at("n1").get<int>();
    rec.report.n2 = j.at("n2").get<int>();
    rec.report.m = j.at("m").get<int>();
    rec.report.attention_rank = j.at("attention_rank").get<int>();
    rec.report.spectral_abscissa = j.at("spectral_abscissa").get<double>();
    const std::string verdict = j.at("verdict").get<std::string>();
    rec.report.verdict = verdict == "stable"   ? Verdict::stable
                         : verdict == "unstable" ? Verdict::unstable
                                                 : Verdict::marginal;
    return rec;
}

inline std::string census_to_jsonl(const std::vector<CensusRecord>& records) {
    std::string out;
    for (const CensusRecord& rec : records) {
        out += census_record_to_json(rec).dump();
        out += '\n';
    }
    return out;
}

inline std::vector<CensusRecord> census_from_jsonl(const std::string& text) {
    std::vector<CensusRecord> records;
    std::istringstream stream(text);
    std::string line;
    while (std::getline(stream, line)) {
        if (line.empty()) continue;
        records.push_back(census_record_from_json(ordered_json::parse(line)));
    }
    return records;
}

// Re-serializes every line without its wall_ms timing field. Two censuses
// with the same spec and seed agree byte for byte after this.
inline std::string strip_timing_fields(const std::string& jsonl) {
    std::istringstream stream(jsonl);
    std::string line;
    std::string out;
    while (std::getline(stream, line)) {
        if (line.empty()) continue;
        ordered_json j = ordered_json::parse(line);
        j.erase("wall_ms");
        out += j.dump();
        out += '\n';
    }
    return out;
}

// class,k,count summary over the record stream, ordered by class then k.
inline std::string census_to_csv(const std::vector<CensusRecord>& records) {
    std::map<std::pair<std::string, int>, long> counts;
    for (const CensusRecord& rec : records) {
        const int k = rec.status == "ok" ? rec.report.k : 0;
        ++counts[{census_class_label(rec), k}];
    }
    std::string out = "class,k,count\n";
    for (const auto& [key, count] : counts) {
        out += key.first + "," + std::to_string(key.second) + "," + std::to_string(count) + "\n";
    }
    return out;
}

inline std::string scan_to_csv(const std::vector<ScanRow>& rows) {
    std::string out = "k,n1,n2,count,pattern,verdict\n";
    for (const ScanRow& row : rows) {
        out += std::to_string(row.k) + "," + std::to_string(row.n1) + "," + std::to_string(row.n2) +
               "," + std::to_string(row.count) + "," + row.pattern + "," + to_string(row.verdict) +
               "\n";
    }
    return out;
}

namespace detail {
inline std::string fmt2(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.2f", v);
    return buf;
}
}  // namespace detail

// Orthographic (x, y) projection of a d = 3 trajectory: one polyline per
// token plus a solid endpoint dot, 800x800 viewBox, unit-sphere outline.
inline std::string trajectory_to_svg(const Trajectory& traj) {
    if (traj.states.empty() || traj.states.front().d() != 3) {
        throw ContractViolation("trajectory_to_svg: needs a d = 3 trajectory");
    }
    const int n = traj.states.front().n();
    const double cx = 400.0, cy = 400.0, radius = 370.0;
    auto px = [&](double x) { return cx + radius * x; };
    auto py = [&](double y) { return cy - radius * y; };

    std::string svg;
    svg += "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 800 800\">\n";
    svg += "  <rect width=\"800\" height=\"800\" fill=\"white\"/>\n";
    svg += "  <circle class=\"outline\" cx=\"400\" cy=\"400\" r=\"370\" fill=\"none\" "
           "stroke=\"#888\" stroke-width=\"1\"/>\n";
    for (int i = 0; i < n; ++i) {
        const int hue = (i * 360) / std::max(n, 1);
        svg += "  <polyline class=\"token\" fill=\"none\" stroke=\"hsl(" + std::to_string(hue) +
               ",70%,45%)\" stroke-width=\"1.2\" points=\"";
        for (std::size_t s = 0; s < traj.states.size(); ++s) {
            if (s > 0) svg += ' ';
            const Vector x = traj.states[s].token(i);
            svg += detail::fmt2(px(x(0))) + "," + detail::fmt2(py(x(1)));
        }
        svg += "\"/>\n";
    }
    for (int i = 0; i < n; ++i) {
        const int hue = (i * 360) / std::max(n, 1);
        const Vector x = traj.states.back().token(i);
        svg += "  <circle class=\"endpoint\" cx=\"" + detail::fmt2(px(x(0))) + "\" cy=\"" +
               detail::fmt2(py(x(1))) + "\" r=\"6\" fill=\"hsl(" + std::to_string(hue) +
               ",70%,35%)\"/>\n";
    }
    svg += "</svg>\n";
    return svg;
}

inline void write_text_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoFailure("cannot open '" + path + "' for writing");
    out << content;
    if (!out) throw IoFailure("write failed on '" + path + "'");
}

inline std::string read_text_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoFailure("cannot open '" + path + "' for reading");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace attnflow
