// Command-line harness: `gen` emits synthetic dataset files, `run` executes a
// benchmark over trials, `sweep` repeats a run over one swept axis, `verify`
// runs the exact small-instance checks.

#include <CLI11.hpp>

#include <cstdint>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "rankcp/experiment.hpp"
#include "rankcp/verify.hpp"

namespace {

using namespace rankcp;

struct Overrides {
    std::string config;
    std::optional<double> alpha;
    std::optional<int> n;
    std::optional<int> m;
    std::optional<int> trials;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> methods;
    std::optional<std::string> score;
    std::optional<std::string> envelope;
    std::optional<double> delta;
    std::optional<int> sim_count;
    std::optional<std::string> out_dir;
    std::optional<int> parallelism;
};

void add_common_options(CLI::App* sub, Overrides& o) {
    sub->add_option("--config", o.config, "config file with key = value lines");
    sub->add_option("--alpha", o.alpha, "target miscoverage rate");
    sub->add_option("--n", o.n, "calibration set size");
    sub->add_option("--m", o.m, "test set size");
    sub->add_option("--trials", o.trials, "number of independent trials");
    sub->add_option("--seed", o.seed, "base seed");
    sub->add_option("--methods", o.methods, "comma list from DCR,MDCR,TCPR,Oracle");
    sub->add_option("--score", o.score, "score family: RA or VA");
    sub->add_option("--envelope", o.envelope, "TCPR envelope: theoretical|linear|quantile");
    sub->add_option("--delta", o.delta, "TCPR confidence slack (default alpha/10)");
    sub->add_option("--K", o.sim_count, "TCPR simulation count");
    sub->add_option("--out-dir", o.out_dir, "output directory");
    sub->add_option("--parallelism", o.parallelism, "worker count");
}

ExperimentConfig build_config(const Overrides& o) {
    ExperimentConfig cfg;
    if (!o.config.empty()) cfg = load_config_file(o.config);
    if (o.alpha) cfg.alpha = *o.alpha;
    if (o.n) cfg.n = *o.n;
    if (o.m) cfg.m = *o.m;
    if (o.trials) cfg.trials = *o.trials;
    if (o.seed) cfg.base_seed = *o.seed;
    if (o.methods) cfg.methods = parse_methods(*o.methods);
    if (o.score) apply_config_entry(cfg, "score", *o.score);
    if (o.envelope) apply_config_entry(cfg, "envelope", *o.envelope);
    if (o.delta) cfg.delta = *o.delta;
    if (o.sim_count) cfg.sim_count = *o.sim_count;
    if (o.out_dir) cfg.out_dir = *o.out_dir;
    if (o.parallelism) cfg.parallelism = *o.parallelism;
    return cfg;
}

int run_gen(const ExperimentConfig& cfg) {
    const GeneratedDataset ds = generate_dataset(cfg);
    const std::filesystem::path dir(cfg.out_dir);
    write_file(dir / "population.csv", population_csv_string(ds));
    write_file(dir / "predictions.csv", predictions_csv_string(ds));
    nlohmann::json meta;
    meta["seed"] = cfg.base_seed;
    meta["config"] = config_json(cfg);
    write_file(dir / "meta.json", meta.dump(2) + "\n");
    std::cout << "wrote " << (dir / "population.csv").string() << ", "
              << (dir / "predictions.csv").string() << ", " << (dir / "meta.json").string() << "\n";
    return 0;
}

int run_run(const ExperimentConfig& cfg) {
    const ExperimentResult result = run_experiment(cfg);
    const std::filesystem::path dir(cfg.out_dir);
    write_file(dir / "trials.csv", trials_csv(result.trials));
    write_file(dir / "timings.csv", timings_csv(result.timings));
    write_file(dir / "report.json", report_json(cfg, result).dump(2) + "\n");
    if (!result.has_truth) {
        std::vector<int> test_ids;
        const ExternalData data = load_external(cfg.population_csv, cfg.predictions_csv, cfg.score_kind);
        for (std::size_t i = 0; i < data.split.size(); ++i)
            if (data.split[i] == Split::Test) test_ids.push_back(static_cast<int>(data.item_ids[i]));
        write_file(dir / "sets.csv", sets_csv(result.sets, test_ids));
    }
    if (result.has_truth) {
        for (const auto& s : result.report.methods) {
            std::cout << method_name(s.method) << ": coverage " << format_double(s.coverage_mean)
                      << " (sd " << format_double(s.coverage_std) << "), rel_length "
                      << format_double(s.rel_length_mean) << ", inf thresholds "
                      << s.inf_threshold_count << "\n";
        }
    } else {
        std::cout << "no test truth available; wrote prediction sets only\n";
    }
    std::cout << "outputs in " << dir.string() << "\n";
    return 0;
}

int run_sweep_cmd(const ExperimentConfig& cfg) {
    const std::vector<SweepPoint> points = run_sweep(cfg);
    const std::filesystem::path dir(cfg.out_dir);
    write_file(dir / "sweep.csv", sweep_csv(cfg.sweep_axis, points));
    nlohmann::json all = nlohmann::json::array();
    for (const auto& point : points) {
        ExperimentConfig point_cfg = cfg;
        point_cfg.sweep_axis = SweepAxis::None;
        point_cfg.sweep_values.clear();
        nlohmann::json pj;
        pj["axis"] = sweep_axis_name(cfg.sweep_axis);
        pj["axis_value"] = point.axis_value;
        pj["report"] = report_json(point_cfg, point.result);
        all.push_back(pj);
    }
    write_file(dir / "points.json", all.dump(2) + "\n");
    std::cout << "swept " << points.size() << " values of " << sweep_axis_name(cfg.sweep_axis)
              << "; outputs in " << dir.string() << "\n";
    return 0;
}

// Deterministic small instance for the exact checks: Gaussian values plus a
// noisy value ranker.
struct VerifyCase {
    std::vector<double> values;
    std::optional<Predictions> preds;
    int n = 0;
    PredKind kind = PredKind::RA;
    Rational alpha;
};

VerifyCase make_verify_case(int N, int n, PredKind kind, Rational alpha, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    VerifyCase vc;
    vc.n = n;
    vc.kind = kind;
    vc.alpha = alpha;
    vc.values.resize(N);
    for (double& v : vc.values) v = gauss(rng);
    std::vector<double> noisy(N);
    for (int i = 0; i < N; ++i) noisy[i] = vc.values[i] + 0.5 * gauss(rng);
    Predictions va = Predictions::from_values(noisy, rng);
    if (kind == PredKind::VA) {
        vc.preds = std::move(va);
    } else {
        std::vector<int> ranks(N);
        for (int i = 0; i < N; ++i) ranks[i] = va.predicted_abs_rank(i);
        vc.preds = Predictions::from_ranks(std::move(ranks));
    }
    return vc;
}

int run_verify(int max_n) {
    bool all_pass = true;
    const auto report = [&](bool pass, const std::string& text) {
        std::cout << (pass ? "PASS " : "FAIL ") << text << "\n";
        if (!pass) all_pass = false;
    };

    // Exact pmf identity: counting argument vs closed form, as rationals.
    {
        int checked = 0;
        bool ok = true;
        std::string detail;
        for (int N = 2; N <= max_n && ok; ++N) {
            for (int n = 1; n < N && ok; ++n) {
                const int m = N - n;
                for (int r = 1; r <= n && ok; ++r) {
                    const ExactPmf enumerated = enumerate_rank_pmf(N, n, r);
                    for (int k = 0; k <= m; ++k) {
                        const Rational formula = nh_pmf_exact(N, m, r, k);
                        if (formula != enumerated.probs[k]) {
                            ok = false;
                            detail = "N=" + std::to_string(N) + " n=" + std::to_string(n) +
                                     " r=" + std::to_string(r) + " k=" + std::to_string(k) +
                                     ": formula " + formula.str() + " vs enumeration " +
                                     enumerated.probs[k].str();
                            break;
                        }
                    }
                    ++checked;
                }
            }
        }
        report(ok, "rank pmf formula == subset enumeration for all N <= " + std::to_string(max_n) +
                       " (" + std::to_string(checked) + " distributions)" +
                       (ok ? "" : "; first mismatch " + detail));
    }

    // Exact marginal coverage of the distribution-informed threshold and of
    // the oracle baseline, over every calibration/test partition.
    const std::vector<std::tuple<int, int, PredKind, Rational>> cases = {
        {6, 3, PredKind::RA, Rational(1, 4)},  {6, 3, PredKind::VA, Rational(1, 4)},
        {7, 4, PredKind::RA, Rational(1, 4)},  {8, 5, PredKind::VA, Rational(1, 10)},
        {9, 5, PredKind::RA, Rational(1, 2)},  {10, 6, PredKind::VA, Rational(1, 10)},
        {10, 4, PredKind::RA, Rational(1, 10)}, {10, 7, PredKind::VA, Rational(1, 2)},
    };
    std::uint64_t seed = 20260809;
    for (const auto& [N, n, kind, alpha] : cases) {
        const VerifyCase vc = make_verify_case(N, n, kind, alpha, seed++);
        const Rational target = Rational(1) - alpha;
        for (ExactMethod method : {ExactMethod::DCR, ExactMethod::Oracle}) {
            const Rational cov = exact_marginal_coverage(vc.values, *vc.preds, n, method, alpha);
            const bool pass = cov >= target;
            report(pass, std::string(method == ExactMethod::DCR ? "dcr" : "oracle") +
                             " exact coverage N=" + std::to_string(N) + " n=" + std::to_string(n) +
                             " " + pred_kind_name(kind) + " alpha=" + alpha.str() + ": " + cov.str() +
                             (pass ? " >= " : " < ") + target.str());
        }
    }

    return all_pass ? 0 : 3;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Distribution-informed conformal prediction benchmark for full ranking"};
    app.require_subcommand(1);

    Overrides gen_opts, run_opts, sweep_opts;
    CLI::App* gen = app.add_subcommand("gen", "emit a synthetic population + predictions CSV pair");
    add_common_options(gen, gen_opts);
    CLI::App* run = app.add_subcommand("run", "run a benchmark experiment");
    add_common_options(run, run_opts);
    CLI::App* sweep = app.add_subcommand("sweep", "run an experiment over one swept axis");
    add_common_options(sweep, sweep_opts);

    int verify_max_n = 10;
    CLI::App* verify = app.add_subcommand("verify", "run the exact small-instance checks");
    verify->add_option("--max-n", verify_max_n, "largest population size for the pmf sweep")
        ->check(CLI::Range(2, 14));

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 1;
    }

    try {
        if (gen->parsed()) return run_gen(build_config(gen_opts));
        if (run->parsed()) return run_run(build_config(run_opts));
        if (sweep->parsed()) return run_sweep_cmd(build_config(sweep_opts));
        if (verify->parsed()) return run_verify(verify_max_n);
    } catch (const rankcp::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 1;
    } catch (const rankcp::DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "internal error: " << e.what() << "\n";
        return 3;
    }
    return 0;
}
