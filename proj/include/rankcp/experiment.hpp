#pragma once

#include <nlohmann/json.hpp>

#include <atomic>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "rankcp/core.hpp"
#include "rankcp/datagen.hpp"
#include "rankcp/dcr.hpp"
#include "rankcp/metrics.hpp"
#include "rankcp/scores.hpp"
#include "rankcp/tcpr.hpp"

namespace rankcp {

// Exit-code mapping: ConfigError -> 1, DataError -> 2, anything else -> 3.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

enum class GeneratorKind { Linear, Logistic, External };
enum class RankerKind { NoisyValue, LinearLsq };
enum class SweepAxis { None, Alpha, CalibCount, TestCount, ModelSigma };

struct ExperimentConfig {
    GeneratorKind generator = GeneratorKind::Linear;
    int dim = 0;                // 0: generator default (linear 20, logistic 10)
    double noise_sigma = -1.0;  // negative: generator default (linear 0.2, logistic 0.1)
    RankerKind ranker = RankerKind::NoisyValue;
    double model_sigma = 0.2;
    double train_fraction = 0.4;
    PredKind score_kind = PredKind::RA;
    int n = 100;
    int m = 500;
    double alpha = 0.1;
    std::vector<Method> methods = {Method::DCR, Method::MDCR, Method::TCPR, Method::Oracle};
    EnvelopeKind envelope = EnvelopeKind::Quantile;
    double delta = 0.0;  // 0: alpha / 10
    int sim_count = 100000;
    int trials = 100;
    std::uint64_t base_seed = 1;
    int parallelism = 1;
    std::string out_dir = "out";
    std::string population_csv;
    std::string predictions_csv;
    SweepAxis sweep_axis = SweepAxis::None;
    std::vector<double> sweep_values;
    double jitter_epsilon = 1e-9;
    JitterForm jitter_form = JitterForm::Symmetric;
};

// ---------------------------------------------------------------------------
// Formatting helpers (shortest round-trip, locale-free; CSV output must be
// byte-stable across runs and platforms with the same libc++)
// ---------------------------------------------------------------------------

inline std::string format_double(double v) {
    if (std::isnan(v)) return "";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[40];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

// ---------------------------------------------------------------------------
// Config parsing
// ---------------------------------------------------------------------------

namespace detail {

inline std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    const auto b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

inline std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> parts;
    std::string cur;
    for (char c : s) {
        if (c == sep) {
            parts.push_back(cur);
            cur.clear();
        } else {
            cur += c;
        }
    }
    parts.push_back(cur);
    return parts;
}

inline double parse_double(const std::string& key, const std::string& value) {
    try {
        std::size_t pos = 0;
        const double v = std::stod(value, &pos);
        if (pos != value.size()) throw std::invalid_argument(value);
        return v;
    } catch (const std::exception&) {
        throw ConfigError("config field '" + key + "': expected a number, got '" + value + "'");
    }
}

inline long long parse_int(const std::string& key, const std::string& value) {
    try {
        std::size_t pos = 0;
        const long long v = std::stoll(value, &pos);
        if (pos != value.size()) throw std::invalid_argument(value);
        return v;
    } catch (const std::exception&) {
        throw ConfigError("config field '" + key + "': expected an integer, got '" + value + "'");
    }
}

}  // namespace detail

inline Method parse_method(const std::string& name) {
    if (name == "DCR") return Method::DCR;
    if (name == "MDCR") return Method::MDCR;
    if (name == "TCPR") return Method::TCPR;
    if (name == "Oracle") return Method::Oracle;
    throw ConfigError("config field 'methods': unknown method '" + name + "'");
}

inline std::vector<Method> parse_methods(const std::string& list) {
    std::vector<Method> methods;
    for (const auto& part : detail::split(list, ',')) {
        const std::string name = detail::trim(part);
        if (name.empty()) continue;
        methods.push_back(parse_method(name));
    }
    if (methods.empty()) throw ConfigError("config field 'methods': empty method list");
    return methods;
}

inline void apply_config_entry(ExperimentConfig& cfg, const std::string& key, const std::string& value) {
    using detail::parse_double;
    using detail::parse_int;
    if (key == "generator") {
        if (value == "linear") cfg.generator = GeneratorKind::Linear;
        else if (value == "logistic") cfg.generator = GeneratorKind::Logistic;
        else if (value == "external") cfg.generator = GeneratorKind::External;
        else throw ConfigError("config field 'generator': expected linear|logistic|external");
    } else if (key == "d") {
        cfg.dim = static_cast<int>(parse_int(key, value));
    } else if (key == "noise_sigma") {
        cfg.noise_sigma = parse_double(key, value);
    } else if (key == "ranker") {
        if (value == "noisy") cfg.ranker = RankerKind::NoisyValue;
        else if (value == "lsq") cfg.ranker = RankerKind::LinearLsq;
        else throw ConfigError("config field 'ranker': expected noisy|lsq");
    } else if (key == "model_sigma") {
        cfg.model_sigma = parse_double(key, value);
    } else if (key == "train_fraction") {
        cfg.train_fraction = parse_double(key, value);
    } else if (key == "score") {
        if (value == "RA") cfg.score_kind = PredKind::RA;
        else if (value == "VA") cfg.score_kind = PredKind::VA;
        else throw ConfigError("config field 'score': expected RA|VA");
    } else if (key == "n") {
        cfg.n = static_cast<int>(parse_int(key, value));
    } else if (key == "m") {
        cfg.m = static_cast<int>(parse_int(key, value));
    } else if (key == "alpha") {
        cfg.alpha = parse_double(key, value);
    } else if (key == "methods") {
        cfg.methods = parse_methods(value);
    } else if (key == "envelope") {
        if (value == "theoretical") cfg.envelope = EnvelopeKind::Theoretical;
        else if (value == "linear") cfg.envelope = EnvelopeKind::Linear;
        else if (value == "quantile") cfg.envelope = EnvelopeKind::Quantile;
        else throw ConfigError("config field 'envelope': expected theoretical|linear|quantile");
    } else if (key == "delta") {
        cfg.delta = parse_double(key, value);
    } else if (key == "K") {
        cfg.sim_count = static_cast<int>(parse_int(key, value));
    } else if (key == "trials") {
        cfg.trials = static_cast<int>(parse_int(key, value));
    } else if (key == "seed") {
        cfg.base_seed = static_cast<std::uint64_t>(parse_int(key, value));
    } else if (key == "parallelism") {
        cfg.parallelism = static_cast<int>(parse_int(key, value));
    } else if (key == "out_dir") {
        cfg.out_dir = value;
    } else if (key == "population_csv") {
        cfg.population_csv = value;
    } else if (key == "predictions_csv") {
        cfg.predictions_csv = value;
    } else if (key == "sweep_axis") {
        if (value == "none") cfg.sweep_axis = SweepAxis::None;
        else if (value == "alpha") cfg.sweep_axis = SweepAxis::Alpha;
        else if (value == "n") cfg.sweep_axis = SweepAxis::CalibCount;
        else if (value == "m") cfg.sweep_axis = SweepAxis::TestCount;
        else if (value == "model_sigma") cfg.sweep_axis = SweepAxis::ModelSigma;
        else throw ConfigError("config field 'sweep_axis': expected none|alpha|n|m|model_sigma");
    } else if (key == "sweep_values") {
        cfg.sweep_values.clear();
        for (const auto& part : detail::split(value, ',')) {
            const std::string v = detail::trim(part);
            if (!v.empty()) cfg.sweep_values.push_back(parse_double(key, v));
        }
    } else if (key == "jitter_epsilon") {
        cfg.jitter_epsilon = parse_double(key, value);
    } else if (key == "jitter_form") {
        if (value == "symmetric") cfg.jitter_form = JitterForm::Symmetric;
        else if (value == "one_sided") cfg.jitter_form = JitterForm::OneSided;
        else throw ConfigError("config field 'jitter_form': expected symmetric|one_sided");
    } else {
        throw ConfigError("unknown config key '" + key + "'");
    }
}

inline ExperimentConfig load_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file '" + path + "'");
    ExperimentConfig cfg;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = detail::trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config line " + std::to_string(line_no) + ": expected key = value");
        apply_config_entry(cfg, detail::trim(line.substr(0, eq)), detail::trim(line.substr(eq + 1)));
    }
    return cfg;
}

// Resolved per-run knobs: generator defaults and the TCPR slack.
inline int resolved_dim(const ExperimentConfig& cfg) {
    if (cfg.dim > 0) return cfg.dim;
    return cfg.generator == GeneratorKind::Logistic ? 10 : 20;
}

inline double resolved_noise_sigma(const ExperimentConfig& cfg) {
    if (cfg.noise_sigma >= 0.0) return cfg.noise_sigma;
    return cfg.generator == GeneratorKind::Logistic ? 0.1 : 0.2;
}

inline double resolved_delta(const ExperimentConfig& cfg) {
    return cfg.delta > 0.0 ? cfg.delta : cfg.alpha / 10.0;
}

inline bool uses_method(const ExperimentConfig& cfg, Method m) {
    return std::find(cfg.methods.begin(), cfg.methods.end(), m) != cfg.methods.end();
}

inline void validate_config(const ExperimentConfig& cfg) {
    if (cfg.trials < 1) throw ConfigError("config field 'trials': must be >= 1");
    if (cfg.parallelism < 1) throw ConfigError("config field 'parallelism': must be >= 1");
    if (!(cfg.alpha > 0.0 && cfg.alpha < 1.0)) throw ConfigError("config field 'alpha': must be in (0, 1)");
    if (cfg.generator != GeneratorKind::External) {
        if (cfg.n < 1) throw ConfigError("config field 'n': must be >= 1");
        if (cfg.m < 1) throw ConfigError("config field 'm': must be >= 1");
    } else if (cfg.population_csv.empty() || cfg.predictions_csv.empty()) {
        throw ConfigError("external generator requires population_csv and predictions_csv");
    }
    if (cfg.model_sigma < 0.0) throw ConfigError("config field 'model_sigma': must be >= 0");
    if (cfg.ranker == RankerKind::LinearLsq &&
        !(cfg.train_fraction > 0.0 && cfg.train_fraction < 1.0))
        throw ConfigError("config field 'train_fraction': must be in (0, 1)");
    if (cfg.sweep_axis != SweepAxis::None && cfg.sweep_values.empty())
        throw ConfigError("config field 'sweep_values': required when sweep_axis is set");
    if (cfg.sweep_axis == SweepAxis::None && !cfg.sweep_values.empty())
        throw ConfigError("config field 'sweep_values': set sweep_axis to use them");
    if (uses_method(cfg, Method::TCPR)) {
        double min_alpha = cfg.alpha;
        if (cfg.sweep_axis == SweepAxis::Alpha)
            for (double a : cfg.sweep_values) min_alpha = std::min(min_alpha, a);
        if (cfg.delta > 0.0 && !(cfg.delta < min_alpha))
            throw ConfigError("config field 'delta': must be below every alpha when TCPR is enabled");
        if (cfg.sim_count < 1) throw ConfigError("config field 'K': must be >= 1");
    }
    if (cfg.sweep_axis == SweepAxis::Alpha)
        for (double a : cfg.sweep_values)
            if (!(a > 0.0 && a < 1.0)) throw ConfigError("config field 'sweep_values': alpha values must be in (0, 1)");
}

inline nlohmann::json config_json(const ExperimentConfig& cfg) {
    nlohmann::json j;
    j["generator"] = cfg.generator == GeneratorKind::Linear      ? "linear"
                     : cfg.generator == GeneratorKind::Logistic ? "logistic"
                                                                : "external";
    j["d"] = resolved_dim(cfg);
    j["noise_sigma"] = resolved_noise_sigma(cfg);
    j["ranker"] = cfg.ranker == RankerKind::NoisyValue ? "noisy" : "lsq";
    j["model_sigma"] = cfg.model_sigma;
    j["train_fraction"] = cfg.train_fraction;
    j["score"] = pred_kind_name(cfg.score_kind);
    j["n"] = cfg.n;
    j["m"] = cfg.m;
    j["alpha"] = cfg.alpha;
    std::vector<std::string> names;
    for (Method m : cfg.methods) names.emplace_back(method_name(m));
    j["methods"] = names;
    j["envelope"] = envelope_name(cfg.envelope);
    j["delta"] = resolved_delta(cfg);
    j["K"] = cfg.sim_count;
    j["trials"] = cfg.trials;
    j["seed"] = cfg.base_seed;
    j["parallelism"] = cfg.parallelism;
    if (!cfg.population_csv.empty()) j["population_csv"] = cfg.population_csv;
    if (!cfg.predictions_csv.empty()) j["predictions_csv"] = cfg.predictions_csv;
    j["jitter_epsilon"] = cfg.jitter_epsilon;
    j["jitter_form"] = cfg.jitter_form == JitterForm::Symmetric ? "symmetric" : "one_sided";
    return j;
}

// ---------------------------------------------------------------------------
// External data (CSV ingestion)
// ---------------------------------------------------------------------------

struct ExternalData {
    std::vector<long long> item_ids;  // ascending
    std::vector<double> y;            // NaN where absent
    std::vector<char> y_present;
    std::vector<Split> split;
    std::vector<double> pred_values;   // VA
    std::vector<long long> pred_ranks; // RA
    PredKind kind = PredKind::RA;
    bool full_truth = false;
    int file_n = 0;
    int file_m = 0;
};

namespace detail {

struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    int column(const std::string& name, const std::string& path) const {
        const auto it = std::find(header.begin(), header.end(), name);
        if (it == header.end())
            throw DataError(path + ": missing required column '" + name + "'");
        return static_cast<int>(it - header.begin());
    }
};

inline CsvTable read_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open '" + path + "'");
    CsvTable table;
    std::string line;
    bool first = true;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (first && line.empty()) continue;
        std::vector<std::string> cells;
        for (auto& cell : split(line, ',')) cells.push_back(trim(cell));
        if (first) {
            table.header = std::move(cells);
            first = false;
        } else if (!(cells.size() == 1 && cells[0].empty())) {
            table.rows.push_back(std::move(cells));
        }
    }
    if (first) throw DataError(path + ": empty file");
    return table;
}

}  // namespace detail

inline ExternalData load_external(const std::string& population_csv,
                                  const std::string& predictions_csv, PredKind kind) {
    using detail::CsvTable;
    const CsvTable pop = detail::read_csv(population_csv);
    const int id_col = pop.column("item_id", population_csv);
    const int split_col = pop.column("split", population_csv);
    const int y_col = pop.column("y_true", population_csv);

    struct Row {
        long long id;
        Split split;
        double y;
        bool present;
    };
    std::vector<Row> rows;
    rows.reserve(pop.rows.size());
    for (std::size_t i = 0; i < pop.rows.size(); ++i) {
        const auto& cells = pop.rows[i];
        const std::string where = population_csv + " row " + std::to_string(i + 2);
        if (static_cast<int>(cells.size()) <= std::max({id_col, split_col, y_col}))
            throw DataError(where + ": too few columns");
        Row row{};
        try {
            std::size_t pos = 0;
            row.id = std::stoll(cells[id_col], &pos);
            if (pos != cells[id_col].size()) throw std::invalid_argument("");
        } catch (const std::exception&) {
            throw DataError(where + ": item_id must be an integer, got '" + cells[id_col] + "'");
        }
        if (cells[split_col] == "cal") row.split = Split::Calibration;
        else if (cells[split_col] == "test") row.split = Split::Test;
        else throw DataError(where + ": split must be cal|test, got '" + cells[split_col] + "'");
        if (cells[y_col].empty()) {
            row.present = false;
            row.y = std::numeric_limits<double>::quiet_NaN();
            if (row.split == Split::Calibration)
                throw DataError(where + ": calibration rows must have y_true");
        } else {
            row.present = true;
            try {
                std::size_t pos = 0;
                row.y = std::stod(cells[y_col], &pos);
                if (pos != cells[y_col].size()) throw std::invalid_argument("");
            } catch (const std::exception&) {
                throw DataError(where + ": y_true must be a number, got '" + cells[y_col] + "'");
            }
        }
        rows.push_back(row);
    }
    if (rows.empty()) throw DataError(population_csv + ": no data rows");
    std::sort(rows.begin(), rows.end(), [](const Row& a, const Row& b) { return a.id < b.id; });
    for (std::size_t i = 1; i < rows.size(); ++i)
        if (rows[i].id == rows[i - 1].id)
            throw DataError(population_csv + ": duplicate item_id " + std::to_string(rows[i].id));

    ExternalData data;
    data.kind = kind;
    data.full_truth = true;
    for (const Row& row : rows) {
        data.item_ids.push_back(row.id);
        data.y.push_back(row.y);
        data.y_present.push_back(row.present ? 1 : 0);
        data.split.push_back(row.split);
        if (!row.present) data.full_truth = false;
        if (row.split == Split::Calibration) ++data.file_n;
        else ++data.file_m;
    }
    if (data.file_n < 1) throw DataError(population_csv + ": no calibration rows");
    if (data.file_m < 1) throw DataError(population_csv + ": no test rows");

    const CsvTable preds = detail::read_csv(predictions_csv);
    const int pid_col = preds.column("item_id", predictions_csv);
    const int pred_col = preds.column("pred", predictions_csv);
    std::map<long long, std::string> by_id;
    for (std::size_t i = 0; i < preds.rows.size(); ++i) {
        const auto& cells = preds.rows[i];
        const std::string where = predictions_csv + " row " + std::to_string(i + 2);
        if (static_cast<int>(cells.size()) <= std::max(pid_col, pred_col))
            throw DataError(where + ": too few columns");
        long long id = 0;
        try {
            std::size_t pos = 0;
            id = std::stoll(cells[pid_col], &pos);
            if (pos != cells[pid_col].size()) throw std::invalid_argument("");
        } catch (const std::exception&) {
            throw DataError(where + ": item_id must be an integer, got '" + cells[pid_col] + "'");
        }
        if (!by_id.emplace(id, cells[pred_col]).second)
            throw DataError(where + ": duplicate item_id " + std::to_string(id));
    }
    for (std::size_t i = 0; i < data.item_ids.size(); ++i) {
        const auto it = by_id.find(data.item_ids[i]);
        if (it == by_id.end())
            throw DataError(predictions_csv + ": missing prediction for item_id " +
                            std::to_string(data.item_ids[i]));
        const std::string& cell = it->second;
        if (kind == PredKind::RA) {
            try {
                std::size_t pos = 0;
                data.pred_ranks.push_back(std::stoll(cell, &pos));
                if (pos != cell.size()) throw std::invalid_argument("");
            } catch (const std::exception&) {
                throw DataError(predictions_csv + ": item_id " + std::to_string(data.item_ids[i]) +
                                ": RA prediction must be an integer, got '" + cell + "'");
            }
        } else {
            try {
                std::size_t pos = 0;
                data.pred_values.push_back(std::stod(cell, &pos));
                if (pos != cell.size()) throw std::invalid_argument("");
            } catch (const std::exception&) {
                throw DataError(predictions_csv + ": item_id " + std::to_string(data.item_ids[i]) +
                                ": VA prediction must be a number, got '" + cell + "'");
            }
        }
    }
    if (by_id.size() != data.item_ids.size())
        throw DataError(predictions_csv + ": prediction rows do not match population item_ids");
    return data;
}

// ---------------------------------------------------------------------------
// Experiment runner
// ---------------------------------------------------------------------------

struct TrialTiming {
    int trial = 0;
    Method method = Method::DCR;
    double threshold_ms = 0.0;
    double sets_ms = 0.0;
};

struct TrialSets {
    int trial = 0;
    Method method = Method::DCR;
    std::vector<RankInterval> sets;  // test items in population order
};

struct ExperimentResult {
    std::vector<TrialResult> trials;  // trial-major, methods in config order
    std::vector<TrialTiming> timings;
    AggregateReport report;
    double envelope_fit_ms = 0.0;
    bool has_truth = true;
    std::vector<TrialSets> sets;  // populated only when truth is unavailable
    int clamped_predictions = 0;
};

namespace detail {

struct TrialContext {
    std::optional<Population> pop;
    std::optional<RankView> view;
    std::optional<Predictions> preds;
    std::vector<int> calib_items;
    std::vector<int> test_items;
    std::vector<int> rel_ranks;
    int n = 0;
    int m = 0;
    bool has_truth = true;
};

inline double ms_since(std::chrono::steady_clock::time_point start) {
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
}

inline Predictions build_external_predictions(const ExternalData& data, const ExperimentConfig& cfg) {
    if (data.kind == PredKind::RA) {
        std::vector<int> ranks;
        ranks.reserve(data.pred_ranks.size());
        for (long long r : data.pred_ranks) {
            const long long clamped =
                std::clamp<long long>(r, 1, static_cast<long long>(data.pred_ranks.size()));
            ranks.push_back(static_cast<int>(clamped));
        }
        return Predictions::from_ranks(std::move(ranks));
    }
    auto rng = make_rng(cfg.base_seed, 0, SeedPurpose::Jitter);
    return Predictions::from_values(data.pred_values, rng, cfg.jitter_epsilon);
}

inline TrialContext build_trial(const ExperimentConfig& cfg, int trial, double model_sigma,
                                const ExternalData* external,
                                const std::optional<Predictions>& external_preds) {
    TrialContext ctx;
    if (external != nullptr) {
        ctx.n = external->file_n;
        ctx.m = external->file_m;
        ctx.preds = *external_preds;
        if (external->full_truth) {
            // Fresh exchangeable split each trial; the file's split column
            // fixes only the calibration/test counts.
            std::vector<double> values(external->y.begin(), external->y.end());
            if (has_ties(values)) {
                auto jr = make_rng(cfg.base_seed, trial, SeedPurpose::Jitter);
                values = jitter_ties(values, cfg.jitter_epsilon, jr, cfg.jitter_form);
            }
            auto sr = make_rng(cfg.base_seed, trial, SeedPurpose::SplitAssign);
            ctx.pop = split_population(std::move(values), ctx.n, sr);
            ctx.view = rank_view(*ctx.pop);
            ctx.calib_items = ctx.pop->calib_indices();
            ctx.test_items = ctx.pop->test_indices();
            ctx.rel_ranks = ctx.view->rel_calib_ranks;
        } else {
            // Sets-only mode: the file split is the split, coverage cannot be
            // scored because test values are hidden.
            ctx.has_truth = false;
            std::vector<double> calib_values;
            for (std::size_t i = 0; i < external->split.size(); ++i) {
                if (external->split[i] == Split::Calibration) {
                    ctx.calib_items.push_back(static_cast<int>(i));
                    calib_values.push_back(external->y[i]);
                } else {
                    ctx.test_items.push_back(static_cast<int>(i));
                }
            }
            if (has_ties(calib_values)) {
                auto jr = make_rng(cfg.base_seed, trial, SeedPurpose::Jitter);
                calib_values = jitter_ties(calib_values, cfg.jitter_epsilon, jr, cfg.jitter_form);
            }
            ctx.rel_ranks.resize(calib_values.size());
            for (std::size_t i = 0; i < calib_values.size(); ++i)
                ctx.rel_ranks[i] = compute_rank(calib_values[i], calib_values);
        }
        return ctx;
    }

    ctx.n = cfg.n;
    ctx.m = cfg.m;
    const int total = cfg.n + cfg.m;
    SyntheticConfig gen_cfg;
    gen_cfg.dim = resolved_dim(cfg);
    gen_cfg.noise_sigma = resolved_noise_sigma(cfg);
    gen_cfg.link = cfg.generator == GeneratorKind::Logistic ? LinkKind::Logistic : LinkKind::Linear;

    const int train_count =
        cfg.ranker == RankerKind::LinearLsq
            ? std::max(gen_cfg.dim,
                       static_cast<int>(std::llround(cfg.train_fraction * total /
                                                     (1.0 - cfg.train_fraction))))
            : 0;

    auto pop_rng = make_rng(cfg.base_seed, trial, SeedPurpose::Population);
    const Dataset ds = generate(gen_cfg, train_count + total, pop_rng);

    std::vector<double> values(ds.y.begin() + train_count, ds.y.end());
    if (has_ties(values)) {
        auto jr = make_rng(cfg.base_seed, trial, SeedPurpose::Jitter);
        values = jitter_ties(values, cfg.jitter_epsilon, jr, cfg.jitter_form);
    }

    auto ranker_rng = make_rng(cfg.base_seed, trial, SeedPurpose::Ranker);
    if (cfg.ranker == RankerKind::NoisyValue) {
        ctx.preds = noisy_value_ranker(values, model_sigma, ranker_rng, cfg.score_kind);
    } else {
        Dataset train;
        train.dim = ds.dim;
        train.x.assign(ds.x.begin(), ds.x.begin() + static_cast<std::size_t>(train_count) * ds.dim);
        train.y.assign(ds.y.begin(), ds.y.begin() + train_count);
        const LinearRanker ranker = train_linear_ranker(train);
        std::vector<double> predicted = predict_values(ranker, ds, train_count, train_count + total);
        Predictions va = Predictions::from_values(std::move(predicted), ranker_rng, cfg.jitter_epsilon);
        if (cfg.score_kind == PredKind::VA) {
            ctx.preds = std::move(va);
        } else {
            std::vector<int> ranks(total);
            for (int i = 0; i < total; ++i) ranks[i] = va.predicted_abs_rank(i);
            ctx.preds = Predictions::from_ranks(std::move(ranks));
        }
    }

    auto split_rng = make_rng(cfg.base_seed, trial, SeedPurpose::SplitAssign);
    ctx.pop = split_population(std::move(values), cfg.n, split_rng);
    ctx.view = rank_view(*ctx.pop);
    ctx.calib_items = ctx.pop->calib_indices();
    ctx.test_items = ctx.pop->test_indices();
    ctx.rel_ranks = ctx.view->rel_calib_ranks;
    return ctx;
}

struct TrialOutput {
    std::vector<TrialResult> results;
    std::vector<TrialTiming> timings;
    std::vector<TrialSets> sets;
};

inline TrialOutput run_one_trial(const ExperimentConfig& cfg, int trial, double alpha,
                                 double model_sigma, const Envelope* envelope,
                                 const ExternalData* external,
                                 const std::optional<Predictions>& external_preds) {
    const TrialContext ctx = build_trial(cfg, trial, model_sigma, external, external_preds);
    const int total = ctx.n + ctx.m;
    const std::uint64_t trial_seed = derive_seed(cfg.base_seed, trial, SeedPurpose::Population);
    const double delta = resolved_delta(cfg);

    TrialOutput out;
    for (Method method : cfg.methods) {
        const auto t0 = std::chrono::steady_clock::now();
        Threshold threshold;
        switch (method) {
            case Method::DCR:
                threshold = dcr_threshold(*ctx.preds, ctx.calib_items, ctx.rel_ranks, ctx.n, ctx.m, alpha);
                break;
            case Method::MDCR: {
                auto rng = make_rng(cfg.base_seed, trial, SeedPurpose::MdcrSampling);
                threshold = mdcr_threshold(*ctx.preds, ctx.calib_items, ctx.rel_ranks, ctx.n, ctx.m,
                                           alpha, rng);
                break;
            }
            case Method::TCPR:
                threshold = tcpr_threshold(
                    proxy_scores(*envelope, *ctx.preds, ctx.calib_items, ctx.rel_ranks, total),
                    alpha, delta);
                break;
            case Method::Oracle: {
                std::vector<double> true_scores(ctx.n);
                for (int i = 0; i < ctx.n; ++i)
                    true_scores[i] =
                        ctx.preds->score(ctx.calib_items[i], ctx.view->true_abs_ranks[ctx.calib_items[i]]);
                threshold = oracle_threshold(std::move(true_scores), alpha);
                break;
            }
        }
        const double threshold_ms = ms_since(t0);

        const auto t1 = std::chrono::steady_clock::now();
        std::vector<RankInterval> sets;
        sets.reserve(ctx.test_items.size());
        for (int item : ctx.test_items) sets.push_back(prediction_set(*ctx.preds, item, threshold, total));
        const double sets_ms = ms_since(t1);

        out.timings.push_back(TrialTiming{trial, method, threshold_ms, sets_ms});
        if (ctx.has_truth) {
            out.results.push_back(
                score_trial(method, trial_seed, sets, *ctx.pop, *ctx.view, threshold.value));
        } else {
            TrialResult r;
            r.method = method;
            r.seed = trial_seed;
            r.coverage = std::numeric_limits<double>::quiet_NaN();
            r.fcp = std::numeric_limits<double>::quiet_NaN();
            long long width_sum = 0;
            for (const auto& s : sets) width_sum += s.width();
            r.mean_set_size = static_cast<double>(width_sum) / sets.size();
            r.relative_length = r.mean_set_size / total;
            r.threshold = threshold.value;
            out.results.push_back(r);
            out.sets.push_back(TrialSets{trial, method, std::move(sets)});
        }
    }
    return out;
}

}  // namespace detail

inline ExperimentResult run_experiment(const ExperimentConfig& cfg) {
    validate_config(cfg);

    std::optional<ExternalData> external;
    std::optional<Predictions> external_preds;
    if (cfg.generator == GeneratorKind::External) {
        external = load_external(cfg.population_csv, cfg.predictions_csv, cfg.score_kind);
        if (cfg.n > 0 && cfg.n != external->file_n)
            throw DataError("population split counts inconsistent with config: file has n=" +
                            std::to_string(external->file_n));
        if (cfg.m > 0 && cfg.m != external->file_m)
            throw DataError("population split counts inconsistent with config: file has m=" +
                            std::to_string(external->file_m));
        if (!external->full_truth && uses_method(cfg, Method::Oracle))
            throw ConfigError("Oracle requires test y_true in the population file");
        external_preds = detail::build_external_predictions(*external, cfg);
    }

    const int n = external ? external->file_n : cfg.n;
    const int m = external ? external->file_m : cfg.m;

    ExperimentResult result;
    std::optional<Envelope> envelope;
    if (uses_method(cfg, Method::TCPR)) {
        // The envelope depends only on (n, m, K, delta); it is fitted once per
        // run and shared across trials.
        TcprConfig tcfg{resolved_delta(cfg), cfg.sim_count};
        auto rng = make_rng(cfg.base_seed, 0, SeedPurpose::EnvelopeFit);
        const auto t0 = std::chrono::steady_clock::now();
        envelope = fit_envelope(cfg.envelope, n, m, tcfg, rng);
        result.envelope_fit_ms = detail::ms_since(t0);
    }

    std::vector<std::optional<detail::TrialOutput>> outputs(cfg.trials);
    std::atomic<int> next{0};
    std::exception_ptr error;
    std::mutex error_mutex;
    auto worker = [&]() {
        while (true) {
            const int t = next.fetch_add(1);
            if (t >= cfg.trials) break;
            try {
                outputs[t] = detail::run_one_trial(cfg, t, cfg.alpha, cfg.model_sigma,
                                                   envelope ? &*envelope : nullptr,
                                                   external ? &*external : nullptr, external_preds);
            } catch (...) {
                std::lock_guard<std::mutex> lock(error_mutex);
                if (!error) error = std::current_exception();
                break;
            }
        }
    };
    const int workers = std::min(cfg.parallelism, cfg.trials);
    if (workers <= 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        pool.reserve(workers);
        for (int w = 0; w < workers; ++w) pool.emplace_back(worker);
        for (auto& th : pool) th.join();
    }
    if (error) std::rethrow_exception(error);

    for (int t = 0; t < cfg.trials; ++t) {
        auto& out = *outputs[t];
        result.has_truth = result.has_truth && out.sets.empty();
        for (auto& r : out.results) result.trials.push_back(r);
        for (auto& timing : out.timings) result.timings.push_back(timing);
        for (auto& s : out.sets) result.sets.push_back(std::move(s));
    }
    if (external_preds) result.clamped_predictions = external_preds->clamped_count();
    if (result.has_truth) result.report = aggregate(result.trials);
    return result;
}

// One experiment per grid point; points share the base seed, so trials are
// paired across the axis.
struct SweepPoint {
    double axis_value = 0.0;
    ExperimentResult result;
};

inline const char* sweep_axis_name(SweepAxis axis) {
    switch (axis) {
        case SweepAxis::None: return "none";
        case SweepAxis::Alpha: return "alpha";
        case SweepAxis::CalibCount: return "n";
        case SweepAxis::TestCount: return "m";
        case SweepAxis::ModelSigma: return "model_sigma";
    }
    return "?";
}

inline std::vector<SweepPoint> run_sweep(const ExperimentConfig& cfg) {
    validate_config(cfg);
    if (cfg.sweep_axis == SweepAxis::None) throw ConfigError("sweep requires sweep_axis");
    std::vector<SweepPoint> points;
    for (double value : cfg.sweep_values) {
        ExperimentConfig point_cfg = cfg;
        point_cfg.sweep_axis = SweepAxis::None;
        point_cfg.sweep_values.clear();
        switch (cfg.sweep_axis) {
            case SweepAxis::Alpha: point_cfg.alpha = value; break;
            case SweepAxis::CalibCount: point_cfg.n = static_cast<int>(std::llround(value)); break;
            case SweepAxis::TestCount: point_cfg.m = static_cast<int>(std::llround(value)); break;
            case SweepAxis::ModelSigma: point_cfg.model_sigma = value; break;
            case SweepAxis::None: break;
        }
        points.push_back(SweepPoint{value, run_experiment(point_cfg)});
    }
    return points;
}

// ---------------------------------------------------------------------------
// Output files
// ---------------------------------------------------------------------------

inline std::string trials_csv(const std::vector<TrialResult>& trials) {
    std::string out = "seed,method,coverage,fcp,rel_length,threshold\n";
    for (const auto& t : trials) {
        out += std::to_string(t.seed);
        out += ',';
        out += method_name(t.method);
        out += ',';
        out += format_double(t.coverage);
        out += ',';
        out += format_double(t.fcp);
        out += ',';
        out += format_double(t.relative_length);
        out += ',';
        out += format_double(t.threshold);
        out += '\n';
    }
    return out;
}

inline std::string timings_csv(const std::vector<TrialTiming>& timings) {
    std::string out = "trial,method,threshold_ms,sets_ms\n";
    for (const auto& t : timings) {
        out += std::to_string(t.trial);
        out += ',';
        out += method_name(t.method);
        out += ',';
        out += format_double(t.threshold_ms);
        out += ',';
        out += format_double(t.sets_ms);
        out += '\n';
    }
    return out;
}

inline std::string sets_csv(const std::vector<TrialSets>& sets, const std::vector<int>& test_ids) {
    std::string out = "trial,method,item_id,lo,hi\n";
    for (const auto& record : sets) {
        for (std::size_t j = 0; j < record.sets.size(); ++j) {
            out += std::to_string(record.trial);
            out += ',';
            out += method_name(record.method);
            out += ',';
            out += std::to_string(test_ids[j]);
            out += ',';
            out += std::to_string(record.sets[j].lo);
            out += ',';
            out += std::to_string(record.sets[j].hi);
            out += '\n';
        }
    }
    return out;
}

inline nlohmann::json report_json(const ExperimentConfig& cfg, const ExperimentResult& result) {
    nlohmann::json j;
    j["config"] = config_json(cfg);
    j["trials"] = cfg.trials;
    j["has_truth"] = result.has_truth;
    if (result.clamped_predictions > 0) j["clamped_predictions"] = result.clamped_predictions;
    nlohmann::json methods = nlohmann::json::array();
    if (result.has_truth) {
        for (const auto& s : result.report.methods) {
            nlohmann::json mj;
            mj["name"] = method_name(s.method);
            mj["coverage_mean"] = s.coverage_mean;
            mj["coverage_std"] = s.coverage_std;
            mj["fcp_mean"] = s.fcp_mean;
            mj["fcp_std"] = s.fcp_std;
            mj["rel_length_mean"] = s.rel_length_mean;
            mj["rel_length_std"] = s.rel_length_std;
            mj["set_size_mean"] = s.set_size_mean;
            mj["threshold_mean"] = s.threshold_mean;
            mj["threshold_std"] = s.threshold_std;
            mj["inf_threshold_count"] = s.inf_threshold_count;
            mj["trials"] = s.trials;
            if (s.single_trial) mj["single_trial"] = true;
            methods.push_back(mj);
        }
    } else {
        // Coverage cannot be scored without test truth; lengths still can.
        std::map<Method, std::vector<double>> rel;
        for (const auto& t : result.trials) rel[t.method].push_back(t.relative_length);
        for (Method method : cfg.methods) {
            nlohmann::json mj;
            mj["name"] = method_name(method);
            mj["coverage_mean"] = nullptr;
            mj["coverage_std"] = nullptr;
            mj["fcp_mean"] = nullptr;
            mj["fcp_std"] = nullptr;
            const auto [mean, sd] = detail::mean_std(rel[method]);
            mj["rel_length_mean"] = mean;
            mj["rel_length_std"] = sd;
            mj["trials"] = static_cast<int>(rel[method].size());
            methods.push_back(mj);
        }
    }
    j["methods"] = methods;
    return j;
}

inline std::string sweep_csv(SweepAxis axis, const std::vector<SweepPoint>& points) {
    std::string out = "axis_value,method,metric,mean,std\n";
    (void)axis;
    for (const auto& point : points) {
        for (const auto& s : point.result.report.methods) {
            const auto emit = [&](const char* metric, double mean, double sd) {
                out += format_double(point.axis_value);
                out += ',';
                out += method_name(s.method);
                out += ',';
                out += metric;
                out += ',';
                out += format_double(mean);
                out += ',';
                out += format_double(sd);
                out += '\n';
            };
            emit("coverage", s.coverage_mean, s.coverage_std);
            emit("fcp", s.fcp_mean, s.fcp_std);
            emit("rel_length", s.rel_length_mean, s.rel_length_std);
            emit("set_size", s.set_size_mean, s.set_size_std);
            emit("threshold", s.threshold_mean, s.threshold_std);
        }
    }
    return out;
}

inline void write_file(const std::filesystem::path& path, const std::string& contents) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write '" + path.string() + "'");
    out << contents;
}

// ---------------------------------------------------------------------------
// Dataset emission (`gen` subcommand): one population + prediction pair built
// from the trial-0 streams, so a later external run reproduces trial 0.
// ---------------------------------------------------------------------------

struct GeneratedDataset {
    std::vector<double> values;       // population order
    std::vector<Split> split;
    std::vector<double> pred_values;  // VA
    std::vector<int> pred_ranks;      // RA
    PredKind kind = PredKind::RA;
};

inline GeneratedDataset generate_dataset(const ExperimentConfig& cfg) {
    validate_config(cfg);
    if (cfg.generator == GeneratorKind::External)
        throw ConfigError("gen requires a synthetic generator");
    const detail::TrialContext ctx = detail::build_trial(cfg, 0, cfg.model_sigma, nullptr, std::nullopt);
    GeneratedDataset ds;
    ds.values = ctx.pop->values();
    ds.split = ctx.pop->assignment();
    ds.kind = cfg.score_kind;
    const int total = ctx.pop->size();
    if (cfg.score_kind == PredKind::RA) {
        ds.pred_ranks.resize(total);
        for (int i = 0; i < total; ++i) ds.pred_ranks[i] = ctx.preds->predicted_abs_rank(i);
    } else {
        ds.pred_values.resize(total);
        for (int i = 0; i < total; ++i) ds.pred_values[i] = ctx.preds->value(i);
    }
    return ds;
}

inline std::string population_csv_string(const GeneratedDataset& ds) {
    std::string out = "item_id,split,y_true\n";
    for (std::size_t i = 0; i < ds.values.size(); ++i) {
        out += std::to_string(i + 1);
        out += ',';
        out += ds.split[i] == Split::Calibration ? "cal" : "test";
        out += ',';
        out += format_double(ds.values[i]);
        out += '\n';
    }
    return out;
}

inline std::string predictions_csv_string(const GeneratedDataset& ds) {
    std::string out = "item_id,pred\n";
    const std::size_t total = ds.kind == PredKind::RA ? ds.pred_ranks.size() : ds.pred_values.size();
    for (std::size_t i = 0; i < total; ++i) {
        out += std::to_string(i + 1);
        out += ',';
        out += ds.kind == PredKind::RA ? std::to_string(ds.pred_ranks[i])
                                       : format_double(ds.pred_values[i]);
        out += '\n';
    }
    return out;
}

}  // namespace rankcp
