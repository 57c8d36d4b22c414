#include "irrcast/harness.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <condition_variable>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <numeric>
#include <sstream>
#include <thread>
#include <tuple>

#include <json.hpp>

#include "irrcast/logging.hpp"

namespace irrcast {

using nlohmann::json;

namespace {

std::string fmt17(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return std::string(buf);
}

std::string fmt_short(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%g", v);
    return std::string(buf);
}

} // namespace

void ExperimentConfig::validate() const {
    if (seeds.empty()) throw BadConfig("seeds must be nonempty");
    for (double r : missing_rates)
        if (r < 0.0 || r >= 1.0) throw BadConfig("missing rates must lie in [0,1)");
    if (missing_rate < 0.0 || missing_rate >= 1.0) throw BadConfig("missing_rate in [0,1)");
    if (horizons.empty()) throw BadConfig("horizons must be nonempty");
    if (lookback < 2) throw BadConfig("lookback must be >= 2");
    if (pe_methods.empty()) throw BadConfig("pe_methods must be nonempty");
    for (const auto& m : pe_methods) pe_method_from_string(m); // throws on unknown
    pe_method_from_string(pe_method);
}

// --- config parsing -----------------------------------------------------------------

ExperimentConfig parse_config_text(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw BadConfig(std::string("config parse: ") + e.what());
    }

    ExperimentConfig c;
    if (j.contains("dataset")) {
        const auto& d = j["dataset"];
        c.dataset.kind = d.value("kind", c.dataset.kind);
        c.dataset.csv_path = d.value("path", c.dataset.csv_path);
        c.dataset.generator = d.value("generator", c.dataset.generator);
        c.dataset.length = d.value("length", c.dataset.length);
        c.dataset.synth_seed = d.value("seed", c.dataset.synth_seed);
        c.dataset.synth.dims = d.value("dims", c.dataset.synth.dims);
        if (d.contains("periods_hours"))
            c.dataset.synth.periods_hours = d["periods_hours"].get<std::vector<double>>();
        c.dataset.synth.amplitude = d.value("amplitude", c.dataset.synth.amplitude);
        c.dataset.synth.trend_per_kstep = d.value("trend", c.dataset.synth.trend_per_kstep);
        c.dataset.synth.noise_stddev = d.value("noise", c.dataset.synth.noise_stddev);
        c.dataset.synth.ar_coeff = d.value("ar_coeff", c.dataset.synth.ar_coeff);
    }
    if (j.contains("window")) {
        const auto& w = j["window"];
        c.lookback = w.value("lookback", c.lookback);
        if (w.contains("horizons")) c.horizons = w["horizons"].get<std::vector<std::size_t>>();
        else if (w.contains("horizon")) c.horizons = {w["horizon"].get<std::size_t>()};
        c.stride = w.value("stride", c.stride);
        if (w.contains("label_len")) c.model.label_len = w["label_len"].get<std::int64_t>();
    }
    if (j.contains("split")) {
        auto v = j["split"].get<std::vector<double>>();
        if (v.size() != 3) throw BadConfig("split must have 3 fractions");
        c.split_fractions = {v[0], v[1], v[2]};
    }
    if (j.contains("missing_rates"))
        c.missing_rates = j["missing_rates"].get<std::vector<double>>();
    c.missing_rate = j.value("missing_rate", c.missing_rate);
    if (j.contains("pe_methods"))
        c.pe_methods = j["pe_methods"].get<std::vector<std::string>>();
    if (j.contains("seeds")) c.seeds = j["seeds"].get<std::vector<std::uint64_t>>();
    if (j.contains("model")) {
        const auto& m = j["model"];
        c.model.d_model = m.value("d_model", c.model.d_model);
        c.model.n_heads = m.value("n_heads", c.model.n_heads);
        c.model.encoder_depth = m.value("encoder_depth", c.model.encoder_depth);
        c.model.decoder_depth = m.value("decoder_depth", c.model.decoder_depth);
        c.model.feedforward_width = m.value("feedforward_width", c.model.feedforward_width);
        c.model.dropout_rate = m.value("dropout", c.model.dropout_rate);
    }
    if (j.contains("training")) {
        const auto& t = j["training"];
        c.training.epochs = t.value("epochs", c.training.epochs);
        c.training.batch_size = t.value("batch_size", c.training.batch_size);
        c.training.learning_rate = t.value("learning_rate", c.training.learning_rate);
        c.training.patience = t.value("patience", c.training.patience);
    }
    if (j.contains("pe")) {
        const auto& p = j["pe"];
        c.pe_method = p.value("method", c.pe_method);
        c.model.pe.grid_resolution = p.value("grid_resolution", c.model.pe.grid_resolution);
        c.model.pe.max_len = p.value("max_len", c.model.pe.max_len);
        c.model.pe.time_scale = p.value("time_scale", c.model.pe.time_scale);
        c.model.pe.ncde_train_mode = p.value("ncde_train_mode", c.model.pe.ncde_train_mode);
        c.model.pe.ncde_substeps = p.value("ncde_substeps", c.model.pe.ncde_substeps);
        if (c.model.pe.ncde_train_mode != "single_epoch" && c.model.pe.ncde_train_mode != "joint")
            throw BadConfig("pe.ncde_train_mode must be single_epoch or joint");
    }
    c.output_dir = j.value("output_dir", c.output_dir);
    c.model.pe.d_model = c.model.d_model;
    c.validate();
    return c;
}

ExperimentConfig load_config(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open config " + path);
    std::ostringstream ss;
    ss << f.rdbuf();
    return parse_config_text(ss.str());
}

IrregularSeries load_dataset(const ExperimentConfig& config) {
    if (config.dataset.kind == "csv") return load_csv(config.dataset.csv_path);
    if (config.dataset.kind == "synthetic")
        return synth_generate(synth_kind_from_string(config.dataset.generator),
                              config.dataset.synth, config.dataset.length,
                              config.dataset.synth_seed);
    throw BadConfig("dataset.kind must be synthetic or csv");
}

// --- result rows -----------------------------------------------------------------------

std::string result_csv_header() {
    return "pe_method,missing_rate,prediction_length,seed,split,mse,mae,wall_time_seconds";
}

std::string to_csv(const ResultRow& r) {
    std::ostringstream os;
    os << r.pe_method << "," << fmt_short(r.missing_rate) << "," << r.prediction_length << ","
       << r.seed << "," << r.split << "," << fmt17(r.mse) << "," << fmt17(r.mae) << ","
       << fmt_short(r.wall_time_seconds);
    return os.str();
}

ResultRow result_row_from_csv(const std::string& line) {
    std::vector<std::string> cells;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            cells.push_back(cur);
            cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    cells.push_back(cur);
    if (cells.size() != 8) throw ParseError("result row wants 8 cells: '" + line + "'");
    ResultRow r;
    r.pe_method = cells[0];
    r.missing_rate = std::stod(cells[1]);
    r.prediction_length = static_cast<std::size_t>(std::stoull(cells[2]));
    r.seed = std::stoull(cells[3]);
    r.split = cells[4];
    r.mse = std::stod(cells[5]);
    r.mae = std::stod(cells[6]);
    r.wall_time_seconds = std::stod(cells[7]);
    return r;
}

std::vector<AggregateCell> aggregate(const std::vector<ResultRow>& rows) {
    std::map<std::tuple<std::string, double, std::size_t>, std::vector<const ResultRow*>> cells;
    for (const auto& r : rows) {
        if (r.split == "error") continue;
        cells[{r.pe_method, r.missing_rate, r.prediction_length}].push_back(&r);
    }
    if (cells.empty()) throw EmptyCell("aggregate: no valid rows");

    std::vector<AggregateCell> out;
    for (const auto& [key, cell_rows] : cells) {
        AggregateCell c;
        c.pe_method = std::get<0>(key);
        c.missing_rate = std::get<1>(key);
        c.prediction_length = std::get<2>(key);
        c.n = cell_rows.size();
        const double n = static_cast<double>(cell_rows.size());
        for (const auto* r : cell_rows) {
            c.mse_mean += r->mse;
            c.mae_mean += r->mae;
        }
        c.mse_mean /= n;
        c.mae_mean /= n;
        for (const auto* r : cell_rows) {
            c.mse_std += (r->mse - c.mse_mean) * (r->mse - c.mse_mean);
            c.mae_std += (r->mae - c.mae_mean) * (r->mae - c.mae_mean);
        }
        c.mse_std = std::sqrt(c.mse_std / n); // population std, Table-1 style
        c.mae_std = std::sqrt(c.mae_std / n);
        out.push_back(c);
    }
    return out;
}

// --- sweep --------------------------------------------------------------------------------

std::vector<SweepCell> sweep_cells(const ExperimentConfig& config) {
    std::vector<SweepCell> cells;
    for (const auto& method : config.pe_methods)
        for (double rate : config.missing_rates)
            for (std::size_t horizon : config.horizons)
                for (auto seed : config.seeds)
                    cells.push_back({method, rate, horizon, seed});
    return cells;
}

namespace {

std::uint64_t rate_key(double rate) {
    return static_cast<std::uint64_t>(std::llround(rate * 1000.0));
}

std::uint64_t method_key(const std::string& name) {
    std::uint64_t h = 1469598103934665603ULL;
    for (char c : name) {
        h ^= static_cast<unsigned char>(c);
        h *= 1099511628211ULL;
    }
    return h;
}

} // namespace

ResultRow run_cell(const ExperimentConfig& config, const IrregularSeries& base,
                   const SweepCell& cell) {
    ResultRow row;
    row.pe_method = cell.pe_method;
    row.missing_rate = cell.missing_rate;
    row.prediction_length = cell.horizon;
    row.seed = cell.seed;

    const auto t0 = std::chrono::steady_clock::now();
    try {
        // the drop pattern depends on (rate, seed) only, so every method
        // faces the same irregular series at a given cell
        IrregularSeries dropped =
            cell.missing_rate > 0.0
                ? drop_random(base, cell.missing_rate,
                              mix_seed(cell.seed, rate_key(cell.missing_rate), 0xd60bULL))
                : base;

        DataContext data = DataContext::from_series(dropped, median_observation_gap(base));
        const auto tb = data.time_base();
        SplitSeries splits = split_chronological(dropped, config.split_fractions);
        auto train_w = make_windows(splits.train, config.lookback, cell.horizon, config.stride, tb);
        auto val_w = make_windows(splits.val, config.lookback, cell.horizon, config.stride, tb);
        auto test_w = make_windows(splits.test, config.lookback, cell.horizon, config.stride, tb);

        ModelConfig mc = config.model;
        mc.pe.method = pe_method_from_string(cell.pe_method);
        mc.pe.d_model = mc.d_model;
        mc.label_len = std::min<std::int64_t>(mc.label_len, static_cast<std::int64_t>(config.lookback));
        mc.pe.max_len = std::max<std::int64_t>(
            mc.pe.max_len, static_cast<std::int64_t>(
                               std::max(config.lookback, static_cast<std::size_t>(mc.label_len) +
                                                             cell.horizon)));

        const std::uint64_t cell_seed = mix_seed(cell.seed, method_key(cell.pe_method),
                                                 rate_key(cell.missing_rate), cell.horizon);
        Forecaster model(mc, static_cast<std::int64_t>(base.n_variables()), data, cell_seed);
        TrainingConfig tc = config.training;
        tc.seed = cell_seed;
        train(model, train_w, val_w, tc);

        EvalMetrics m = evaluate(model, test_w);
        row.mse = m.mse;
        row.mae = m.mae;
    } catch (const std::exception& e) {
        log::error("cell (" + cell.pe_method + ", " + fmt_short(cell.missing_rate) + ", " +
                   std::to_string(cell.horizon) + ", " + std::to_string(cell.seed) +
                   ") failed: " + e.what());
        row.split = "error";
        row.mse = std::numeric_limits<double>::quiet_NaN();
        row.mae = std::numeric_limits<double>::quiet_NaN();
    }
    row.wall_time_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return row;
}

void ensure_directory(const std::string& path) {
    std::error_code ec;
    std::filesystem::create_directories(path, ec);
    if (ec) throw IoError("cannot create directory " + path + ": " + ec.message());
}

std::vector<ResultRow> run_experiment(const ExperimentConfig& config, int threads) {
    config.validate();
    ensure_directory(config.output_dir);
    const std::string results_path = config.output_dir + "/results.csv";

    // resume: previously completed cells are not recomputed
    std::map<std::string, ResultRow> done;
    auto cell_id = [](const std::string& m, double rate, std::size_t len, std::uint64_t seed) {
        return m + "|" + fmt_short(rate) + "|" + std::to_string(len) + "|" + std::to_string(seed);
    };
    bool had_file = false;
    {
        std::ifstream f(results_path);
        if (f) {
            had_file = true;
            std::string line;
            std::getline(f, line); // header
            while (std::getline(f, line)) {
                if (line.empty()) continue;
                ResultRow r = result_row_from_csv(line);
                done[cell_id(r.pe_method, r.missing_rate, r.prediction_length, r.seed)] = r;
            }
        }
    }

    IrregularSeries base = load_dataset(config);
    std::vector<SweepCell> cells = sweep_cells(config);

    std::ofstream out(results_path, std::ios::app);
    if (!out) throw IoError("cannot open " + results_path);
    if (!had_file) out << result_csv_header() << "\n";

    std::vector<ResultRow> rows;
    std::vector<std::size_t> pending;
    for (std::size_t i = 0; i < cells.size(); ++i) {
        const auto id = cell_id(cells[i].pe_method, cells[i].missing_rate, cells[i].horizon,
                                cells[i].seed);
        auto it = done.find(id);
        if (it != done.end()) {
            rows.push_back(it->second);
        } else {
            rows.emplace_back(); // placeholder, filled below
            pending.push_back(i);
        }
    }

    if (threads <= 1) {
        for (std::size_t idx : pending) {
            ResultRow r = run_cell(config, base, cells[idx]);
            rows[idx] = r;
            out << to_csv(r) << "\n";
            out.flush();
            log::info("cell " + std::to_string(idx + 1) + "/" + std::to_string(cells.size()) +
                      " " + to_csv(r));
        }
        return rows;
    }

    // parallel workers with an ordered committer: rows enter the file in
    // deterministic cell order no matter which worker finishes first
    std::mutex mu;
    std::condition_variable cv;
    std::map<std::size_t, ResultRow> finished;
    std::atomic<std::size_t> next{0};
    std::size_t commit_pos = 0;

    auto worker = [&]() {
        for (;;) {
            const std::size_t k = next.fetch_add(1);
            if (k >= pending.size()) return;
            const std::size_t idx = pending[k];
            ResultRow r = run_cell(config, base, cells[idx]);
            {
                std::lock_guard<std::mutex> lock(mu);
                finished[k] = r;
            }
            cv.notify_all();
        }
    };

    std::vector<std::thread> pool;
    const int n_workers = std::min<int>(threads, static_cast<int>(pending.size()));
    pool.reserve(static_cast<std::size_t>(n_workers));
    for (int i = 0; i < n_workers; ++i) pool.emplace_back(worker);

    {
        std::unique_lock<std::mutex> lock(mu);
        while (commit_pos < pending.size()) {
            cv.wait(lock, [&]() { return finished.count(commit_pos) > 0; });
            while (finished.count(commit_pos)) {
                const ResultRow& r = finished[commit_pos];
                rows[pending[commit_pos]] = r;
                out << to_csv(r) << "\n";
                out.flush();
                finished.erase(commit_pos);
                ++commit_pos;
            }
        }
    }
    for (auto& t : pool) t.join();
    return rows;
}

// --- probes --------------------------------------------------------------------------------

std::optional<double> spearman(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size() || a.size() < 2) return std::nullopt;
    auto ranks = [](const std::vector<double>& v) {
        const std::size_t n = v.size();
        std::vector<std::size_t> idx(n);
        std::iota(idx.begin(), idx.end(), 0);
        std::sort(idx.begin(), idx.end(), [&v](std::size_t i, std::size_t j) { return v[i] < v[j]; });
        std::vector<double> r(n);
        std::size_t i = 0;
        while (i < n) {
            std::size_t j = i;
            while (j + 1 < n && v[idx[j + 1]] == v[idx[i]]) ++j;
            const double avg = 0.5 * static_cast<double>(i + j) + 1.0; // average rank of ties
            for (std::size_t k = i; k <= j; ++k) r[idx[k]] = avg;
            i = j + 1;
        }
        return r;
    };
    const auto ra = ranks(a);
    const auto rb = ranks(b);
    const double n = static_cast<double>(a.size());
    double ma = 0.0, mb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        ma += ra[i];
        mb += rb[i];
    }
    ma /= n;
    mb /= n;
    double cov = 0.0, va = 0.0, vb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        cov += (ra[i] - ma) * (rb[i] - mb);
        va += (ra[i] - ma) * (ra[i] - ma);
        vb += (rb[i] - mb) * (rb[i] - mb);
    }
    if (va <= 0.0 || vb <= 0.0) return std::nullopt;
    return cov / std::sqrt(va * vb);
}

DistanceGapReport distance_gap_report(const PeFunction& pe, const std::vector<double>& times) {
    if (times.size() < 3) throw TooFewSamples("distance_gap_report: need >= 3 times");
    std::vector<std::vector<double>> rows;
    rows.reserve(times.size());
    for (double t : times) rows.push_back(pe(t));

    DistanceGapReport report;
    std::vector<double> gaps, dists;
    for (std::size_t i = 0; i < times.size(); ++i) {
        for (std::size_t j = i + 1; j < times.size(); ++j) {
            const double gap = std::abs(times[i] - times[j]);
            const double dist = pe_distance(rows[i], rows[j]);
            report.pairs.emplace_back(gap, dist);
            gaps.push_back(gap);
            dists.push_back(dist);
        }
    }
    const auto rho = spearman(gaps, dists);
    if (!rho) {
        report.degenerate = true;
        report.spearman = std::numeric_limits<double>::quiet_NaN();
    } else {
        report.spearman = *rho;
    }
    return report;
}

std::vector<double> r_squared_per_dimension(const std::vector<double>& times,
                                            const std::vector<std::vector<double>>& rows) {
    if (times.size() != rows.size() || times.size() < 3)
        throw TooFewSamples("r_squared: need >= 3 aligned samples");
    const std::size_t n = times.size();
    const std::size_t d = rows.front().size();
    const double nn = static_cast<double>(n);

    double tm = 0.0, tv = 0.0;
    for (double t : times) tm += t;
    tm /= nn;
    for (double t : times) tv += (t - tm) * (t - tm);

    std::vector<double> out(d);
    for (std::size_t c = 0; c < d; ++c) {
        double ym = 0.0;
        for (std::size_t i = 0; i < n; ++i) ym += rows[i][c];
        ym /= nn;
        double cov = 0.0, ss_tot = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double dy = rows[i][c] - ym;
            cov += (times[i] - tm) * dy;
            ss_tot += dy * dy;
        }
        const double slope = tv > 0.0 ? cov / tv : 0.0;
        double ss_res = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double fit = ym + slope * (times[i] - tm);
            const double r = rows[i][c] - fit;
            ss_res += r * r;
        }
        out[c] = ss_tot <= 1e-300 ? 1.0 : 1.0 - ss_res / ss_tot;
    }
    return out;
}

LinearityProbe linearity_probe(const NcdeParams& params, const DataContext& data,
                               const std::vector<double>& probe_times) {
    if (probe_times.size() < 3) throw TooFewSamples("linearity_probe: need >= 3 probe times");

    std::vector<TimeFeatureVector> features;
    features.reserve(probe_times.size());
    for (double tau : probe_times) {
        const double t = data.t_min + tau * (data.t_max - data.t_min);
        features.push_back(time_features(t, data.t_min, data.t_max, data.time_base()));
    }
    Tensor pe = ncde_pe_forward(params, probe_times, features);

    std::vector<std::vector<double>> rows;
    rows.reserve(static_cast<std::size_t>(pe.dim(0)));
    for (std::int64_t i = 0; i < pe.dim(0); ++i) {
        std::vector<double> row(static_cast<std::size_t>(pe.dim(1)));
        for (std::int64_t c = 0; c < pe.dim(1); ++c) row[static_cast<std::size_t>(c)] = pe.at(i, c);
        rows.push_back(std::move(row));
    }

    LinearityProbe probe;
    probe.r2_per_dimension = r_squared_per_dimension(probe_times, rows);

    std::vector<double> sorted = probe.r2_per_dimension;
    std::sort(sorted.begin(), sorted.end());
    const std::size_t m = sorted.size() / 2;
    probe.median_r2 = sorted.size() % 2 ? sorted[m] : 0.5 * (sorted[m - 1] + sorted[m]);
    probe.median_above_0_8 = probe.median_r2 > 0.8;
    return probe;
}

// --- property suite ---------------------------------------------------------------------------

std::string property_outcome_to_string(PropertyOutcome o) {
    switch (o) {
    case PropertyOutcome::Pass: return "pass";
    case PropertyOutcome::Fail: return "fail";
    case PropertyOutcome::NotApplicable: return "n/a";
    }
    return "?";
}

namespace {

/// Method state + evaluators used by the property executors. Times are in
/// hours over a working span; calendar-feature methods map them onto an
/// hourly grid starting 2021-01-01.
class SuitePe {
public:
    SuitePe(PeMethod method, std::int64_t d_model, std::uint64_t seed)
        : method_(method), d_(d_model), rng_(mix_seed(seed, method_key_of(method))) {
        base_epoch_ = epoch_from_civil(2021, 1, 1, 0, 0, 0);
        switch (method_) {
        case PeMethod::Ctlpe:
        case PeMethod::CtlpeNoBias:
            ctlpe_ = CtlpeParams::init(d_, rng_);
            break;
        case PeMethod::Uniform:
            uniform_ = UniformPeTables::init(d_, rng_);
            break;
        case PeMethod::TimeFeature:
            tf_ = TimeFeaturePeParams::init(d_, rng_);
            break;
        case PeMethod::Simple:
            simple_ = SimplePeTable::init(0.0, kSpanHours * 1.1, 1.0, d_, rng_);
            break;
        case PeMethod::SimpleOverlap:
            overlap_ = SimpleOverlapPeTable::init(64, d_, rng_);
            break;
        case PeMethod::Ncde: {
            NcdeConfig nc;
            nc.hidden_width = d_;
            nc.substeps = 2;
            ncde_ = NcdeParams::init(nc, rng_);
            auto features_at = [this](double t) { return features_of(t); };
            ncde_table_ = pe_table_build(ncde_, 0.0, kSpanHours, kSpanHours / 512.0, features_at);
            break;
        }
        default: break;
        }
    }

    static constexpr double kSpanHours = 200.0;

    bool order_based() const {
        return method_ == PeMethod::Sinusoidal || method_ == PeMethod::SimpleOverlap;
    }

    bool has_parameters() const {
        return !(method_ == PeMethod::Sinusoidal || method_ == PeMethod::IrrSinusoidal);
    }

    /// Scalar real-time view; only for methods that define one.
    PeFunction scalar() const {
        switch (method_) {
        case PeMethod::Ctlpe:
        case PeMethod::CtlpeNoBias:
            return [this](double t) {
                return row_of(ctlpe({t}, ctlpe_, method_ == PeMethod::Ctlpe), 0);
            };
        case PeMethod::IrrSinusoidal:
            return [this](double t) { return row_of(irr_sinusoidal_pe({t}, d_, 1.0), 0); };
        case PeMethod::Uniform:
            return [this](double t) {
                return row_of(uniform_pe({features_of(t)}, uniform_, d_), 0);
            };
        case PeMethod::TimeFeature:
            return [this](double t) { return row_of(time_feature_pe({features_of(t)}, tf_), 0); };
        case PeMethod::Simple:
            return [this](double t) { return row_of(simple_pe({t}, simple_), 0); };
        case PeMethod::Ncde:
            return [this](double t) { return ncde_table_->lookup(t); };
        default:
            throw BadParams("no scalar view for order-based method");
        }
    }

    /// Vector interface for a whole strictly-increasing time set.
    std::vector<std::vector<double>> rows(const std::vector<double>& times) const {
        switch (method_) {
        case PeMethod::Ctlpe:
        case PeMethod::CtlpeNoBias:
            return all_rows(ctlpe(times, ctlpe_, method_ == PeMethod::Ctlpe));
        case PeMethod::Sinusoidal: {
            std::vector<std::int64_t> pos(times.size());
            std::iota(pos.begin(), pos.end(), 0);
            return all_rows(sinusoidal_pe(pos, d_));
        }
        case PeMethod::IrrSinusoidal:
            return all_rows(irr_sinusoidal_pe(times, d_, 1.0));
        case PeMethod::Uniform: {
            return all_rows(uniform_pe(features_of_all(times), uniform_, d_));
        }
        case PeMethod::TimeFeature:
            return all_rows(time_feature_pe(features_of_all(times), tf_));
        case PeMethod::Simple:
            return all_rows(simple_pe(times, simple_));
        case PeMethod::SimpleOverlap:
            return all_rows(simple_overlap_pe(times.size(), overlap_));
        case PeMethod::Ncde:
            return all_rows(ncde_pe_forward(ncde_, times, features_of_all(times)));
        }
        throw BadParams("rows: unhandled method");
    }

    /// Inductive probe: evaluate beyond the working span / table capacity.
    void evaluate_beyond_training() const {
        switch (method_) {
        case PeMethod::Simple:
            simple_pe({kSpanHours * 2.0}, simple_); // throws TimeOutOfTableRange
            return;
        case PeMethod::SimpleOverlap:
            simple_overlap_pe(static_cast<std::size_t>(overlap_.max_len()) + 1, overlap_);
            return; // throws WindowTooLong
        case PeMethod::Sinusoidal: {
            sinusoidal_pe({overlap_max_probe()}, d_);
            return;
        }
        default: {
            std::vector<double> far = {kSpanHours * 2.0, kSpanHours * 2.0 + 1.0,
                                       kSpanHours * 2.0 + 2.5};
            rows(far);
            return;
        }
        }
    }

    TimeFeatureVector features_of(double t_hours) const {
        const double epoch = base_epoch_ + t_hours * 3600.0;
        return time_features(epoch, base_epoch_, base_epoch_ + kSpanHours * 3600.0,
                             TimeBase{base_epoch_, kSpanHours * 3600.0});
    }

    PeMethod method() const { return method_; }

private:
    static std::uint64_t method_key_of(PeMethod m) {
        return static_cast<std::uint64_t>(m) * 0x9e37ULL + 17ULL;
    }

    static std::int64_t overlap_max_probe() { return 100000; }

    std::vector<TimeFeatureVector> features_of_all(const std::vector<double>& times) const {
        std::vector<TimeFeatureVector> fs;
        fs.reserve(times.size());
        for (double t : times) fs.push_back(features_of(t));
        return fs;
    }

    static std::vector<double> row_of(const Tensor& t, std::int64_t r) {
        std::vector<double> out(static_cast<std::size_t>(t.dim(1)));
        for (std::int64_t c = 0; c < t.dim(1); ++c) out[static_cast<std::size_t>(c)] = t.at(r, c);
        return out;
    }

    static std::vector<std::vector<double>> all_rows(const Tensor& t) {
        std::vector<std::vector<double>> out;
        out.reserve(static_cast<std::size_t>(t.dim(0)));
        for (std::int64_t r = 0; r < t.dim(0); ++r) out.push_back(row_of(t, r));
        return out;
    }

    PeMethod method_;
    std::int64_t d_;
    mutable Rng rng_;
    double base_epoch_ = 0.0;

    CtlpeParams ctlpe_;
    UniformPeTables uniform_;
    TimeFeaturePeParams tf_;
    SimplePeTable simple_{};
    SimpleOverlapPeTable overlap_{};
    NcdeParams ncde_;
    std::optional<PETable> ncde_table_;
};

std::vector<double> random_times(Rng& rng, std::size_t n, double lo, double hi) {
    std::vector<double> t(n);
    for (auto& x : t) x = uniform(rng, lo, hi);
    std::sort(t.begin(), t.end());
    t.erase(std::unique(t.begin(), t.end()), t.end());
    return t;
}

PropertyResult check_data_driven(const std::string& method_name, std::uint64_t seed) {
    PropertyResult res{method_name, "data_driven", PropertyOutcome::Fail, ""};
    const PeMethod method = pe_method_from_string(method_name);

    if (method == PeMethod::Sinusoidal || method == PeMethod::IrrSinusoidal) {
        res.outcome = PropertyOutcome::Fail;
        res.witness = "fixed embedding, no learnable parameters";
        return res;
    }

    // tiny forecasting task; one backward pass must reach the PE parameters
    SynthParams sp;
    sp.dims = 1;
    sp.noise_stddev = 0.05;
    IrregularSeries series = synth_generate(SynthKind::SineMixture, sp, 64, seed);
    DataContext data = DataContext::from_series(series, 3600.0);

    ModelConfig mc;
    mc.d_model = 8;
    mc.n_heads = 2;
    mc.encoder_depth = 1;
    mc.decoder_depth = 1;
    mc.feedforward_width = 16;
    mc.label_len = 4;
    mc.dropout_rate = 0.0;
    mc.pe.method = method;
    mc.pe.d_model = 8;
    mc.pe.max_len = 64;
    mc.pe.ncde_substeps = 2;
    mc.pe.ncde_train_mode = "joint";

    Forecaster model(mc, 1, data, seed);
    auto windows = make_windows(series, 8, 4, 8, data.time_base());
    if (windows.empty()) throw SeriesTooShort("property suite: no windows");
    ForecastBatch batch = make_batch(windows.front(), mc.label_len);

    Tape tape;
    {
        TapeScope scope(tape);
        Tensor loss = model.forecast_loss(batch);
        tape.backward(loss);
    }
    double gn = 0.0;
    for (const auto& p : model.pe_parameters()) gn = std::max(gn, p.grad_norm());
    if (gn > 0.0) {
        res.outcome = PropertyOutcome::Pass;
    } else {
        res.witness = "zero gradient reached the embedding parameters";
    }
    return res;
}

} // namespace

std::vector<PropertyResult> run_property_suite(const std::vector<std::string>& methods,
                                               std::int64_t d_model, std::uint64_t seed) {
    std::vector<PropertyResult> results;

    for (const auto& name : methods) {
        const PeMethod method = pe_method_from_string(name);
        SuitePe pe(method, d_model, seed);
        Rng rng(mix_seed(seed, 0x9a0bULL, method_key(name)));

        auto times = random_times(rng, 30, 0.0, SuitePe::kSpanHours);

        // 1. monotonicity
        {
            PropertyResult r{name, "monotonicity", PropertyOutcome::NotApplicable, ""};
            if (pe.order_based()) {
                r.witness = "order-indexed embedding has no real-time definition";
            } else {
                auto report = check_monotonicity(pe.scalar(), times);
                if (report.violations == 0) {
                    r.outcome = PropertyOutcome::Pass;
                } else {
                    r.outcome = PropertyOutcome::Fail;
                    const auto& w = report.witnesses.front();
                    r.witness = std::to_string(report.violations) + " violating triples, e.g. (" +
                                fmt_short(w[0]) + ", " + fmt_short(w[1]) + ", " + fmt_short(w[2]) +
                                ")";
                }
            }
            results.push_back(r);
        }

        // 2. translation invariance
        {
            PropertyResult r{name, "translation_invariance", PropertyOutcome::NotApplicable, ""};
            if (pe.order_based()) {
                r.witness = "order-indexed embedding has no real-time definition";
            } else {
                auto base = random_times(rng, 16, 0.0, SuitePe::kSpanHours * 0.4);
                const double lag = 13.7;
                const double dev = check_translation_invariance(pe.scalar(), base, lag);
                if (dev < 1e-9) {
                    r.outcome = PropertyOutcome::Pass;
                } else {
                    r.outcome = PropertyOutcome::Fail;
                    r.witness = "max deviation " + fmt_short(dev) + " at lag " + fmt_short(lag);
                }
            }
            results.push_back(r);
        }

        // 3. symmetry of the distance measure on embedding rows
        {
            PropertyResult r{name, "symmetry", PropertyOutcome::Pass, ""};
            auto rows = pe.rows(times);
            for (std::size_t i = 0; i < rows.size() && r.outcome == PropertyOutcome::Pass; ++i)
                for (std::size_t j = 0; j < rows.size(); ++j)
                    if (pe_distance(rows[i], rows[j]) != pe_distance(rows[j], rows[i])) {
                        r.outcome = PropertyOutcome::Fail;
                        r.witness = "asymmetric pair (" + std::to_string(i) + "," +
                                    std::to_string(j) + ")";
                        break;
                    }
            results.push_back(r);
        }

        // 4. inductive: evaluation beyond the training span must not fail
        {
            PropertyResult r{name, "inductive", PropertyOutcome::Pass, ""};
            try {
                pe.evaluate_beyond_training();
            } catch (const TimeOutOfTableRange& e) {
                r.outcome = PropertyOutcome::Fail;
                r.witness = e.what();
            } catch (const WindowTooLong& e) {
                r.outcome = PropertyOutcome::Fail;
                r.witness = e.what();
            }
            results.push_back(r);
        }

        // 5. data-driven
        results.push_back(check_data_driven(name, seed));

        // 6. irregularity-adaptable: output must depend on the actual
        // timestamps, not only their count/order
        {
            PropertyResult r{name, "irregularity_adaptable", PropertyOutcome::Pass, ""};
            auto t1 = random_times(rng, 20, 0.0, SuitePe::kSpanHours);
            auto t2 = random_times(rng, t1.size(), 0.0, SuitePe::kSpanHours);
            t2.resize(t1.size());
            auto r1 = pe.rows(t1);
            auto r2 = pe.rows(t2);
            bool differs = false;
            for (std::size_t i = 0; i < r1.size() && !differs; ++i)
                for (std::size_t c = 0; c < r1[i].size(); ++c)
                    if (r1[i][c] != r2[i][c]) {
                        differs = true;
                        break;
                    }
            if (!differs) {
                r.outcome = PropertyOutcome::Fail;
                r.witness = "identical embeddings for two different irregular time sets";
            }
            results.push_back(r);
        }
    }
    return results;
}

// --- report emission ------------------------------------------------------------------------

void emit_report(const std::vector<ResultRow>& rows, const std::vector<AggregateCell>& aggregates,
                 const std::string& out_dir) {
    ensure_directory(out_dir);
    ensure_directory(out_dir + "/plotdata");

    {
        std::ofstream f(out_dir + "/results.csv");
        if (!f) throw IoError("cannot write results.csv");
        f << result_csv_header() << "\n";
        for (const auto& r : rows) f << to_csv(r) << "\n";
    }
    {
        std::ofstream f(out_dir + "/summary.csv");
        if (!f) throw IoError("cannot write summary.csv");
        f << "pe_method,missing_rate,prediction_length,n,mse_mean,mse_std,mae_mean,mae_std\n";
        for (const auto& c : aggregates)
            f << c.pe_method << "," << fmt_short(c.missing_rate) << "," << c.prediction_length
              << "," << c.n << "," << fmt17(c.mse_mean) << "," << fmt17(c.mse_std) << ","
              << fmt17(c.mae_mean) << "," << fmt17(c.mae_std) << "\n";
    }
}

} // namespace irrcast
