#pragma once

// Experiment runner behind the lbf_cli tool: JSON configuration, scenario
// grid expansion, a worker pool over (scenario, seed) and CSV emission.

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <exception>
#include <fstream>
#include <iostream>
#include <mutex>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "lbf/basis.hpp"
#include "lbf/experiment.hpp"

namespace lbf::cli {

using json = nlohmann::json;

/// Configuration problem tied to a dotted key path of the JSON document.
class ConfigError : public std::runtime_error {
public:
    ConfigError(std::string key, const std::string& what)
        : std::runtime_error("config error at '" + key + "': " + what), key_(std::move(key)) {}
    const std::string& key() const { return key_; }

private:
    std::string key_;
};

struct ExperimentSpec {
    sim::ChannelConfig channel{};
    sim::NoiseConfig::Kind noise_kind{sim::NoiseConfig::Kind::ContaminatedGaussian};
    double sigma1_sq{0.032};
    double sigma2_sq{32.0};
    double sigma{0.09};
    std::vector<double> noise_grid{0.0};  // eps values or alpha values
    std::vector<int> K{151};
    std::vector<Algorithm> algorithms{};
    std::vector<double> bank_mu{0.005, 0.05, 0.15};
    int bank_L{40};
    BankConfig::Ranking ranking{BankConfig::Ranking::Shared};
    MPolicy policy{MPolicy::adaptive()};
    int m_init{0};
    bool phi_known{false};
    double eta0{0.99};
    LadConfig lad{};
    InitMethod init{InitMethod::Lad};
    std::optional<ParameterModel> hypermodel{};
    std::size_t T{20000};
    std::size_t max_frames{0};
    std::vector<std::uint64_t> seeds{1, 2, 3};
    std::string out{};
    int threads{1};
    // mopt table inputs; unset values fall back to the nominal noise variance
    // and the total channel power
    std::optional<double> mopt_sigma_e_sq{};
    std::optional<double> mopt_sigma_theta_sq{};

    std::string noise_kind_name() const {
        return noise_kind == sim::NoiseConfig::Kind::ContaminatedGaussian ? "contaminated" : "alpha-stable";
    }

    sim::NoiseConfig noise_at(double param) const {
        return noise_kind == sim::NoiseConfig::Kind::ContaminatedGaussian
                   ? sim::NoiseConfig::contaminated(sigma1_sq, sigma2_sq, param)
                   : sim::NoiseConfig::alpha_stable(param, sigma);
    }

    Scenario scenario(int K_value, double noise_param, std::uint64_t seed) const {
        Scenario sc;
        sc.channel = channel;
        sc.noise = noise_at(noise_param);
        sc.K = K_value;
        sc.T = T;
        sc.seed = seed;
        sc.algorithms = algorithms;
        sc.bank_mu = bank_mu;
        sc.bank_L = bank_L;
        sc.ranking = ranking;
        sc.policy = policy;
        sc.m_init = m_init;
        sc.phi_known = phi_known;
        sc.eta0 = eta0;
        sc.lad = lad;
        sc.init = init;
        sc.hypermodel = hypermodel;
        sc.max_frames = max_frames;
        return sc;
    }

    ParameterModel model() const { return scenario(K.front(), noise_grid.front(), 0).model(); }
};

namespace detail {

// Reads one JSON object while remembering which keys were consumed, so that
// misspelled keys are reported instead of silently ignored.
class Reader {
public:
    Reader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
        if (!j_.is_object()) throw ConfigError(path_.empty() ? "<root>" : path_, "expected an object");
    }

    std::string key(const std::string& name) const { return path_.empty() ? name : path_ + "." + name; }
    bool has(const std::string& name) const { return j_.contains(name); }

    const json& raw(const std::string& name) {
        seen_.insert(name);
        return j_.at(name);
    }

    template <class T>
    void get(const std::string& name, T& dst) {
        if (!has(name)) return;
        try {
            dst = raw(name).get<T>();
        } catch (const json::exception&) {
            throw ConfigError(key(name), "wrong type");
        }
    }

    template <class T>
    void get_list(const std::string& name, std::vector<T>& dst) {
        if (!has(name)) return;
        const json& v = raw(name);
        try {
            if (v.is_array()) {
                dst = v.get<std::vector<T>>();
            } else {
                dst = {v.get<T>()};
            }
        } catch (const json::exception&) {
            throw ConfigError(key(name), "wrong type");
        }
        if (dst.empty()) throw ConfigError(key(name), "list must not be empty");
    }

    void finish() const {
        for (auto it = j_.begin(); it != j_.end(); ++it)
            if (!seen_.count(it.key())) throw ConfigError(key(it.key()), "unknown key");
    }

private:
    const json& j_;
    std::string path_;
    std::set<std::string> seen_;
};

inline MPolicy parse_policy(const std::string& s, const std::string& key) {
    if (s == "adaptive") return MPolicy::adaptive();
    if (s == "known") return MPolicy::known();
    if (s.rfind("fixed:", 0) == 0) {
        try {
            std::size_t used = 0;
            const int m = std::stoi(s.substr(6), &used);
            if (used == s.size() - 6 && m >= 1) return MPolicy::fixed(m);
        } catch (const std::exception&) {
        }
    }
    throw ConfigError(key, "expected 'adaptive', 'known' or 'fixed:<m>'");
}

inline void check(bool ok, const std::string& key, const std::string& what) {
    if (!ok) throw ConfigError(key, what);
}

}  // namespace detail

/// Checks that every (K, algorithm) pair in the grid is identifiable.
inline void validate(const ExperimentSpec& spec) {
    using detail::check;
    check(spec.channel.n >= 1, "channel.n", "must be positive");
    check(spec.channel.decay > 0.0, "channel.decay", "must be positive");
    check(spec.channel.bandwidth > 0.0 && spec.channel.bandwidth < 0.5, "channel.bandwidth", "must lie in (0, 0.5)");
    check(spec.channel.filter_order >= 1 && spec.channel.filter_order % 2 == 1, "channel.filter_order",
          "must be odd and positive");
    check(spec.T >= 1, "T", "must be positive");
    check(spec.threads >= 1, "threads", "must be positive");
    check(spec.bank_L >= 1, "bank.L", "must be positive");
    check(spec.eta0 > 0.0 && spec.eta0 < 1.0, "eta0", "must lie in (0, 1)");
    check(spec.lad.max_iters >= 1, "lad.max_iters", "must be positive");
    check(spec.lad.epsilon_reg > 0.0, "lad.epsilon", "must be positive");
    check(spec.m_init >= 0, "m_init", "must be non-negative");
    for (double mu : spec.bank_mu) check(mu >= 0.0 && mu < 1.0, "bank.mu", "values must lie in [0, 1)");
    check(std::is_sorted(spec.bank_mu.begin(), spec.bank_mu.end()), "bank.mu", "values must increase");
    for (double v : spec.noise_grid) {
        if (spec.noise_kind == sim::NoiseConfig::Kind::ContaminatedGaussian) {
            check(v >= 0.0 && v < 1.0, "noise.eps", "values must lie in [0, 1)");
        } else {
            check(v > 0.0 && v <= 2.0, "noise.alpha", "values must lie in (0, 2]");
        }
    }
    check(spec.sigma1_sq >= 0.0, "noise.sigma1_sq", "must be non-negative");
    check(spec.sigma2_sq >= 0.0, "noise.sigma2_sq", "must be non-negative");
    check(spec.sigma > 0.0, "noise.sigma", "must be positive");
    if (spec.hypermodel) {
        try {
            spec.hypermodel->validate();
        } catch (const std::invalid_argument& ex) {
            throw ConfigError("hypermodel", ex.what());
        }
    }
    const int n = spec.channel.n;
    const int m_min = spec.policy.kind == MPolicy::Kind::Fixed ? spec.policy.fixed_m : 1;
    for (int K : spec.K) {
        check(K >= 3 && K % 2 == 1, "K", "values must be odd and at least 3");
        check(static_cast<std::size_t>(K) <= spec.T, "K", "window longer than the record");
        for (const auto& a : spec.algorithms) {
            int delta = 0;
            std::string key = "algorithms";
            if (a.kind == Algorithm::Kind::Trimmed) delta = TrimConfig::from_mu(a.mu, K).delta;
            if (a.kind == Algorithm::Kind::Bank) {
                delta = TrimConfig::from_mu(spec.bank_mu.back(), K).delta;
                key = "bank.mu";
                auto cfg = BankConfig::from_mu(spec.bank_mu, K, spec.bank_L);
                for (std::size_t i = 1; i < cfg.deltas.size(); ++i)
                    check(cfg.deltas[i] > cfg.deltas[i - 1], key,
                          "trimming levels collapse at K = " + std::to_string(K));
            }
            check(K - delta >= m_min * n, spec.policy.kind == MPolicy::Kind::Fixed ? "m_policy" : key,
                  "retained samples below m*n at K = " + std::to_string(K) + " for " + a.name());
        }
    }
}

/// Builds a spec from a parsed JSON document.
inline ExperimentSpec parse_spec(const json& doc) {
    ExperimentSpec spec;
    detail::Reader root(doc, "");
    root.get("T", spec.T);
    root.get_list("K", spec.K);
    root.get_list("seeds", spec.seeds);
    root.get("out", spec.out);
    root.get("threads", spec.threads);
    root.get("m_init", spec.m_init);
    root.get("phi_known", spec.phi_known);
    root.get("eta0", spec.eta0);
    root.get("max_frames", spec.max_frames);

    if (root.has("channel")) {
        detail::Reader r(root.raw("channel"), "channel");
        r.get("n", spec.channel.n);
        r.get("decay", spec.channel.decay);
        r.get("bandwidth", spec.channel.bandwidth);
        r.get("filter_order", spec.channel.filter_order);
        r.finish();
    }

    if (root.has("noise")) {
        detail::Reader r(root.raw("noise"), "noise");
        std::string kind = "contaminated";
        r.get("kind", kind);
        if (kind == "contaminated") {
            spec.noise_kind = sim::NoiseConfig::Kind::ContaminatedGaussian;
            r.get("sigma1_sq", spec.sigma1_sq);
            r.get("sigma2_sq", spec.sigma2_sq);
            r.get_list("eps", spec.noise_grid);
        } else if (kind == "alpha-stable") {
            spec.noise_kind = sim::NoiseConfig::Kind::AlphaStable;
            spec.noise_grid = {2.0};
            r.get("sigma", spec.sigma);
            r.get_list("alpha", spec.noise_grid);
        } else {
            throw ConfigError("noise.kind", "expected 'contaminated' or 'alpha-stable'");
        }
        r.finish();
    }

    std::vector<std::string> names{"lbf", "adaptive-bank"};
    root.get_list("algorithms", names);
    spec.algorithms.clear();
    for (const auto& name : names) {
        try {
            spec.algorithms.push_back(Algorithm::parse(name));
        } catch (const std::invalid_argument&) {
            throw ConfigError("algorithms", "unknown algorithm '" + name + "'");
        }
    }

    if (root.has("bank")) {
        detail::Reader r(root.raw("bank"), "bank");
        r.get_list("mu", spec.bank_mu);
        r.get("L", spec.bank_L);
        if (r.has("ranking")) {
            std::string ranking;
            r.get("ranking", ranking);
            if (ranking == "shared") {
                spec.ranking = BankConfig::Ranking::Shared;
            } else if (ranking == "per-member") {
                spec.ranking = BankConfig::Ranking::PerMember;
            } else {
                throw ConfigError("bank.ranking", "expected 'shared' or 'per-member'");
            }
        }
        r.finish();
    }

    if (root.has("m_policy")) {
        std::string policy;
        root.get("m_policy", policy);
        spec.policy = detail::parse_policy(policy, "m_policy");
    }

    if (root.has("lad")) {
        detail::Reader r(root.raw("lad"), "lad");
        r.get("max_iters", spec.lad.max_iters);
        r.get("epsilon", spec.lad.epsilon_reg);
        r.finish();
    }

    if (root.has("init")) {
        std::string init;
        root.get("init", init);
        if (init == "lad") {
            spec.init = InitMethod::Lad;
        } else if (init == "iterated-trim") {
            spec.init = InitMethod::IteratedTrim;
        } else {
            throw ConfigError("init", "expected 'lad' or 'iterated-trim'");
        }
    }

    if (root.has("hypermodel")) {
        detail::Reader r(root.raw("hypermodel"), "hypermodel");
        ParameterModel model{};
        std::string kind = "flat";
        r.get("kind", kind);
        if (kind == "flat") {
            model.kind = SpectrumKind::FlatDoppler;
        } else if (kind == "jakes") {
            model.kind = SpectrumKind::Jakes;
        } else {
            throw ConfigError("hypermodel.kind", "expected 'flat' or 'jakes'");
        }
        model.rate = 2.0 * std::numbers::pi * spec.channel.bandwidth;
        model.sigma_theta_sq = spec.channel.total_power();
        r.get("rate", model.rate);
        r.get("sigma_theta_sq", model.sigma_theta_sq);
        r.finish();
        spec.hypermodel = model;
    }

    if (root.has("mopt")) {
        detail::Reader r(root.raw("mopt"), "mopt");
        if (r.has("sigma_e_sq")) {
            double v = 0.0;
            r.get("sigma_e_sq", v);
            detail::check(v >= 0.0, "mopt.sigma_e_sq", "must be non-negative");
            spec.mopt_sigma_e_sq = v;
        }
        if (r.has("sigma_theta_sq")) {
            double v = 0.0;
            r.get("sigma_theta_sq", v);
            detail::check(v >= 0.0, "mopt.sigma_theta_sq", "must be non-negative");
            spec.mopt_sigma_theta_sq = v;
        }
        r.finish();
    }

    root.finish();
    validate(spec);
    return spec;
}

inline ExperimentSpec load_spec(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("--config", "cannot open '" + path + "'");
    json doc;
    try {
        doc = json::parse(in);
    } catch (const json::parse_error& ex) {
        throw ConfigError("--config", std::string("malformed JSON: ") + ex.what());
    }
    return parse_spec(doc);
}

struct CsvRow {
    std::string algorithm;
    int algorithm_rank{0};
    int K{0};
    std::string m_policy;
    std::string noise_kind;
    double noise_param{0.0};
    std::uint64_t seed{0};
    std::size_t T{0};
    double mse{0.0};
    double mean_m{0.0};
    double mean_delta_selected{0.0};
    std::optional<double> wall_time_ms{};
};

/// RFC 4180 field quoting.
inline std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\r\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + "\"";
}

inline std::string format_number(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.10g", v);
    return buf;
}

inline void write_csv(std::ostream& os, std::vector<CsvRow> rows) {
    std::stable_sort(rows.begin(), rows.end(), [](const CsvRow& a, const CsvRow& b) {
        if (a.K != b.K) return a.K < b.K;
        if (a.noise_param != b.noise_param) return a.noise_param < b.noise_param;
        if (a.seed != b.seed) return a.seed < b.seed;
        return a.algorithm_rank < b.algorithm_rank;
    });
    os << "algorithm,K,m_policy,noise_kind,noise_param,seed,T,mse,mean_m,mean_delta_selected,wall_time_ms\r\n";
    for (const auto& r : rows) {
        os << csv_field(r.algorithm) << ',' << r.K << ',' << csv_field(r.m_policy) << ',' << csv_field(r.noise_kind)
           << ',' << format_number(r.noise_param) << ',' << r.seed << ',' << r.T << ',' << format_number(r.mse) << ','
           << format_number(r.mean_m) << ',' << format_number(r.mean_delta_selected) << ','
           << (r.wall_time_ms ? format_number(*r.wall_time_ms) : std::string{}) << "\r\n";
    }
}

struct Job {
    int K;
    double noise_param;
    std::uint64_t seed;
};

inline std::vector<Job> expand_grid(const ExperimentSpec& spec) {
    std::vector<Job> jobs;
    for (int K : spec.K)
        for (double v : spec.noise_grid)
            for (auto seed : spec.seeds) jobs.push_back({K, v, seed});
    return jobs;
}

/// Runs every (K, noise point, seed) scenario on a pool of worker threads.
/// With `timing` set, the per-frame mean estimator time is reported.
inline std::vector<CsvRow> run_grid(const ExperimentSpec& spec, bool timing) {
    const auto jobs = expand_grid(spec);
    std::vector<std::vector<CsvRow>> results(jobs.size());
    std::vector<std::exception_ptr> errors(jobs.size());
    std::atomic<std::size_t> next{0};

    auto worker = [&]() {
        for (std::size_t i = next++; i < jobs.size(); i = next++) {
            try {
                const Job& job = jobs[i];
                const RunResult res = run_experiment(spec.scenario(job.K, job.noise_param, job.seed));
                for (std::size_t a = 0; a < res.algorithms.size(); ++a) {
                    const auto& ar = res.algorithms[a];
                    CsvRow row;
                    row.algorithm = ar.algorithm.name();
                    row.algorithm_rank = static_cast<int>(a);
                    row.K = job.K;
                    row.m_policy = spec.policy.label();
                    row.noise_kind = spec.noise_kind_name();
                    row.noise_param = job.noise_param;
                    row.seed = job.seed;
                    row.T = spec.T;
                    row.mse = ar.mse;
                    row.mean_m = ar.mean_m;
                    row.mean_delta_selected = ar.mean_delta_selected;
                    if (timing) row.wall_time_ms = ar.wall_time_ms / static_cast<double>(ar.frames);
                    results[i].push_back(std::move(row));
                }
            } catch (...) {
                errors[i] = std::current_exception();
            }
        }
    };

    const int workers = std::max(1, std::min<int>(spec.threads, static_cast<int>(jobs.size())));
    std::vector<std::thread> pool;
    for (int w = 1; w < workers; ++w) pool.emplace_back(worker);
    worker();
    for (auto& th : pool) th.join();

    for (std::size_t i = 0; i < jobs.size(); ++i) {
        if (!errors[i]) continue;
        try {
            std::rethrow_exception(errors[i]);
        } catch (const NumericalError& ex) {
            throw NumericalError(std::string(ex.what()) + " (K = " + std::to_string(jobs[i].K) +
                                     ", seed = " + std::to_string(jobs[i].seed) + ")",
                                 ex.window());
        }
    }
    std::vector<CsvRow> rows;
    for (auto& r : results) rows.insert(rows.end(), r.begin(), r.end());
    return rows;
}

struct MoptRow {
    int K;
    int M;
    int m_opt;
};

/// Optimal basis count per window size for the configured hypermodel, with
/// known noise variance, white unit-power input and M = floor(K / n).
inline std::vector<MoptRow> mopt_table(const ExperimentSpec& spec) {
    const ParameterModel model = spec.model();
    const double sigma_e_sq = spec.mopt_sigma_e_sq.value_or(spec.noise_at(spec.noise_grid.front()).nominal_variance());
    const double sigma_theta_sq = spec.mopt_sigma_theta_sq.value_or(model.sigma_theta_sq);
    const int n = spec.channel.n;
    std::vector<int> Ks = spec.K;
    std::sort(Ks.begin(), Ks.end());
    std::vector<MoptRow> rows;
    for (int K : Ks) {
        const int M = identifiability_bound(K, n);
        const auto family = eigenbasis(model, K, std::max(1, std::min(K, M)));
        const int m = select_m_optimal(family.lambdas(), sigma_e_sq, sigma_theta_sq, static_cast<double>(n), M);
        rows.push_back({K, M, m});
    }
    return rows;
}

inline void write_mopt(std::ostream& os, const std::vector<MoptRow>& rows) {
    os << "K,M,m_opt\r\n";
    for (const auto& r : rows) os << r.K << ',' << r.M << ',' << r.m_opt << "\r\n";
}

/// Entry point shared by the tool and the tests. Exit codes: 0 success,
/// 1 other failure, 2 configuration error, 3 numerical failure.
inline int run_cli(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
    CLI::App app{"Robust local basis function identification experiments", "lbf_cli"};
    app.require_subcommand(1);
    std::string config, out_path, seeds_arg;
    int threads = 0;
    for (auto* sub : {app.add_subcommand("run", "MSE experiment grid"),
                      app.add_subcommand("bench", "per-frame processing time per algorithm"),
                      app.add_subcommand("mopt", "optimal basis count versus window size")}) {
        sub->add_option("--config", config, "JSON experiment file")->required();
        sub->add_option("--out", out_path, "CSV destination (default: config 'out' or stdout)");
        sub->add_option("--seeds", seeds_arg, "comma-separated seed list");
        sub->add_option("--threads", threads, "worker threads");
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return 0;
    } catch (const CLI::ParseError& ex) {
        err << "error: " << ex.what() << "\n";
        return 2;
    }

    try {
        ExperimentSpec spec = load_spec(config);
        if (!seeds_arg.empty()) {
            spec.seeds.clear();
            std::stringstream ss(seeds_arg);
            std::string item;
            while (std::getline(ss, item, ',')) {
                try {
                    std::size_t used = 0;
                    const auto v = std::stoull(item, &used);
                    if (used != item.size()) throw std::invalid_argument(item);
                    spec.seeds.push_back(v);
                } catch (const std::exception&) {
                    throw ConfigError("--seeds", "'" + item + "' is not an unsigned integer");
                }
            }
            if (spec.seeds.empty()) throw ConfigError("--seeds", "empty seed list");
        }
        if (threads != 0) {
            if (threads < 1) throw ConfigError("--threads", "must be positive");
            spec.threads = threads;
        }
        if (!out_path.empty()) spec.out = out_path;

        std::ostringstream csv;
        const std::string mode = app.get_subcommands().front()->get_name();
        if (mode == "mopt") {
            write_mopt(csv, mopt_table(spec));
        } else {
            write_csv(csv, run_grid(spec, mode == "bench"));
        }

        if (spec.out.empty()) {
            out << csv.str();
        } else {
            std::ofstream file(spec.out, std::ios::binary);
            if (!file) throw ConfigError("out", "cannot write '" + spec.out + "'");
            file << csv.str();
        }
        return 0;
    } catch (const ConfigError& ex) {
        err << "error: " << ex.what() << "\n";
        return 2;
    } catch (const NumericalError& ex) {
        err << "numerical failure at window " << ex.window() << ": " << ex.what() << "\n";
        return 3;
    } catch (const std::exception& ex) {
        err << "error: " << ex.what() << "\n";
        return 1;
    }
}

}  // namespace lbf::cli
