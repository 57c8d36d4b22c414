// irrcast: experiment harness for irregular time-series forecasting with
// continuous-time positional embeddings.
//
// Subcommands: train, eval, sweep, probe, distgap, proptest, report.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <numeric>

#include <CLI11.hpp>

#include "irrcast/harness.hpp"
#include "irrcast/logging.hpp"

using namespace irrcast;

namespace {

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return std::string(buf);
}

struct CommonOpts {
    std::string config_path;
    std::string out_dir;
    std::uint64_t seed = 0;
    bool seed_set = false;
    int threads = 1;
};

ExperimentConfig configure(const CommonOpts& opts) {
    ExperimentConfig config =
        opts.config_path.empty() ? ExperimentConfig{} : load_config(opts.config_path);
    if (!opts.out_dir.empty()) config.output_dir = opts.out_dir;
    if (opts.seed_set) config.seeds = {opts.seed};
    config.model.pe.d_model = config.model.d_model;
    config.validate();
    return config;
}

/// Builds the single-run pieces shared by train/eval/probe: dropped series,
/// data context, per-split windows, the model config for config.pe_method.
struct SingleRun {
    IrregularSeries series;
    DataContext data;
    std::vector<WindowPair> train_windows, val_windows, test_windows;
    ModelConfig model_config;
    std::uint64_t seed;
};

SingleRun prepare_single_run(const ExperimentConfig& config) {
    SingleRun run;
    run.seed = config.seeds.front();
    IrregularSeries base = load_dataset(config);
    run.series = config.missing_rate > 0.0
                     ? drop_random(base, config.missing_rate, mix_seed(run.seed, 0xd60bULL))
                     : base;
    run.data = DataContext::from_series(run.series, median_observation_gap(base));
    const auto tb = run.data.time_base();
    const std::size_t horizon = config.horizons.front();
    SplitSeries splits = split_chronological(run.series, config.split_fractions);
    run.train_windows = make_windows(splits.train, config.lookback, horizon, config.stride, tb);
    run.val_windows = make_windows(splits.val, config.lookback, horizon, config.stride, tb);
    run.test_windows = make_windows(splits.test, config.lookback, horizon, config.stride, tb);

    run.model_config = config.model;
    run.model_config.pe.method = pe_method_from_string(config.pe_method);
    run.model_config.pe.d_model = run.model_config.d_model;
    run.model_config.label_len =
        std::min<std::int64_t>(run.model_config.label_len,
                               static_cast<std::int64_t>(config.lookback));
    run.model_config.pe.max_len = std::max<std::int64_t>(
        run.model_config.pe.max_len,
        static_cast<std::int64_t>(std::max(
            config.lookback, static_cast<std::size_t>(run.model_config.label_len) + horizon)));
    return run;
}

void write_training_curve(const TrainingLog& log, const std::string& out_dir) {
    ensure_directory(out_dir + "/plotdata");
    std::ofstream f(out_dir + "/plotdata/training_curve.csv");
    f << "epoch,train_mse,val_mse,val_mae\n";
    for (const auto& e : log.epochs)
        f << e.epoch << "," << fmt(e.train_mse) << "," << fmt(e.val_mse) << "," << fmt(e.val_mae)
          << "\n";
}

int cmd_train(const CommonOpts& opts) {
    ExperimentConfig config = configure(opts);
    SingleRun run = prepare_single_run(config);

    Forecaster model(run.model_config, static_cast<std::int64_t>(run.series.n_variables()),
                     run.data, run.seed);
    TrainingConfig tc = config.training;
    tc.seed = run.seed;
    TrainingLog log = train(model, run.train_windows, run.val_windows, tc);

    ensure_directory(config.output_dir);
    model.save_checkpoint(config.output_dir + "/model.ckpt");
    write_training_curve(log, config.output_dir);
    if (model.uses_ncde() && model.encoder_pe_table())
        model.encoder_pe_table()->save(config.output_dir + "/pe_table_encoder.txt");
    if (model.uses_ncde() && model.decoder_pe_table())
        model.decoder_pe_table()->save(config.output_dir + "/pe_table_decoder.txt");

    EvalMetrics val = run.val_windows.empty() ? EvalMetrics{} : evaluate(model, run.val_windows);
    std::cout << "trained pe=" << config.pe_method << " rate=" << config.missing_rate
              << " best_epoch=" << log.best_epoch << " val_mse=" << fmt(val.mse)
              << " val_mae=" << fmt(val.mae) << "\n";
    std::cout << "checkpoint: " << config.output_dir << "/model.ckpt\n";
    return 0;
}

int cmd_eval(const CommonOpts& opts, const std::string& ckpt_path) {
    ExperimentConfig config = configure(opts);
    SingleRun run = prepare_single_run(config);
    const std::string path =
        ckpt_path.empty() ? config.output_dir + "/model.ckpt" : ckpt_path;
    Forecaster model = Forecaster::load_checkpoint(path);
    EvalMetrics m = evaluate(model, run.test_windows);
    std::cout << "test_mse=" << fmt(m.mse) << " test_mae=" << fmt(m.mae)
              << " windows=" << m.windows << "\n";
    return 0;
}

int cmd_sweep(const CommonOpts& opts) {
    ExperimentConfig config = configure(opts);
    auto rows = run_experiment(config, opts.threads);
    auto aggregates = aggregate(rows);
    emit_report(rows, aggregates, config.output_dir);
    std::cout << "sweep complete: " << rows.size() << " cells -> " << config.output_dir
              << "/results.csv\n";
    return 0;
}

int cmd_probe(const CommonOpts& opts) {
    ExperimentConfig config = configure(opts);
    config.pe_method = "ncde";
    SingleRun run = prepare_single_run(config);

    Forecaster model(run.model_config, static_cast<std::int64_t>(run.series.n_variables()),
                     run.data, run.seed);
    TrainingConfig tc = config.training;
    tc.seed = run.seed;
    TrainingLog log;
    Optimizer optimizer(OptimizerKind::Adam, tc.learning_rate);
    ncde_pe_train_single_epoch(model, run.train_windows, optimizer, tc, log);

    std::vector<double> probe_times(200);
    for (std::size_t i = 0; i < probe_times.size(); ++i)
        probe_times[i] = static_cast<double>(i) / static_cast<double>(probe_times.size() - 1);
    LinearityProbe probe = linearity_probe(model.ncde_encoder_params(), run.data, probe_times);

    ensure_directory(config.output_dir + "/plotdata");
    {
        std::ofstream f(config.output_dir + "/plotdata/linearity.csv");
        f << "dimension,r2\n";
        for (std::size_t i = 0; i < probe.r2_per_dimension.size(); ++i)
            f << i << "," << fmt(std::max(0.0, probe.r2_per_dimension[i])) << "\n";
    }
    {
        std::ofstream f(config.output_dir + "/plotdata/linearity_summary.csv");
        f << "median_r2,median_above_0.8,ncde_first_batch_loss,ncde_last_batch_loss\n";
        f << fmt(probe.median_r2) << "," << (probe.median_above_0_8 ? 1 : 0) << ","
          << fmt(log.ncde_first_batch_loss) << "," << fmt(log.ncde_last_batch_loss) << "\n";
    }
    std::cout << "linearity probe: median_r2=" << fmt(probe.median_r2)
              << " above_0.8=" << (probe.median_above_0_8 ? "yes" : "no") << " ("
              << probe.r2_per_dimension.size() << " dimensions)\n";
    return 0;
}

int cmd_distgap(const CommonOpts& opts) {
    ExperimentConfig config = configure(opts);
    ensure_directory(config.output_dir + "/plotdata");

    Rng rng(mix_seed(config.seeds.front(), 0xd157ULL));
    std::ofstream summary(config.output_dir + "/plotdata/distgap_summary.csv");
    summary << "pe_method,spearman,pairs\n";

    for (const auto& name : config.pe_methods) {
        const PeMethod method = pe_method_from_string(name);
        const auto d = config.model.d_model;

        std::vector<double> times(60);
        for (auto& t : times) t = uniform(rng, 0.0, 200.0);
        std::sort(times.begin(), times.end());

        PeFunction fn;
        CtlpeParams ctlpe_params; // keep alive through the report
        if (method == PeMethod::Ctlpe || method == PeMethod::CtlpeNoBias) {
            Rng prng(mix_seed(config.seeds.front(), 0xc71ULL));
            ctlpe_params = CtlpeParams::init(d, prng);
            const bool bias = method == PeMethod::Ctlpe;
            fn = [&ctlpe_params, bias](double t) {
                Tensor r = ctlpe({t}, ctlpe_params, bias);
                return std::vector<double>(r.values().begin(), r.values().end());
            };
        } else if (method == PeMethod::IrrSinusoidal) {
            fn = [d](double t) {
                Tensor r = irr_sinusoidal_pe({t}, d, 1.0);
                return std::vector<double>(r.values().begin(), r.values().end());
            };
        } else {
            log::info("distgap: skipping " + name + " (no scalar real-time view)");
            continue;
        }

        DistanceGapReport report = distance_gap_report(fn, times);
        std::ofstream f(config.output_dir + "/plotdata/distgap_" + name + ".csv");
        f << "gap,distance\n";
        for (const auto& [gap, dist] : report.pairs) f << fmt(gap) << "," << fmt(dist) << "\n";
        if (report.degenerate) {
            summary << name << ",error,degenerate distance distribution\n";
            std::cout << name << ": degenerate (constant distances)\n";
        } else {
            summary << name << "," << fmt(report.spearman) << "," << report.pairs.size() << "\n";
            std::cout << name << ": spearman=" << fmt(report.spearman) << "\n";
        }
    }
    return 0;
}

int cmd_proptest(const CommonOpts& opts) {
    ExperimentConfig config = configure(opts);
    ensure_directory(config.output_dir);

    std::ofstream f(config.output_dir + "/proptest.csv");
    f << "pe_method,property,outcome,witness\n";
    auto results = run_property_suite(config.pe_methods, config.model.d_model,
                                      config.seeds.front());
    std::string current;
    for (const auto& r : results) {
        if (r.method != current) {
            current = r.method;
            std::cout << current << ":\n";
        }
        std::cout << "  " << r.property << ": " << property_outcome_to_string(r.outcome);
        if (!r.witness.empty()) std::cout << "  [" << r.witness << "]";
        std::cout << "\n";
        std::string witness = r.witness;
        std::replace(witness.begin(), witness.end(), ',', ';');
        f << r.method << "," << r.property << "," << property_outcome_to_string(r.outcome) << ","
          << witness << "\n";
    }
    return 0;
}

int cmd_report(const CommonOpts& opts) {
    ExperimentConfig config = configure(opts);
    const std::string results_path = config.output_dir + "/results.csv";
    std::ifstream f(results_path);
    if (!f) throw IoError("no results at " + results_path);
    std::string line;
    std::getline(f, line); // header
    std::vector<ResultRow> rows;
    while (std::getline(f, line))
        if (!line.empty()) rows.push_back(result_row_from_csv(line));

    auto aggregates = aggregate(rows);
    emit_report(rows, aggregates, config.output_dir);

    std::cout << "method          rate  len   n  mse (std)            mae (std)\n";
    for (const auto& c : aggregates) {
        char buf[160];
        std::snprintf(buf, sizeof(buf), "%-15s %4.2f %4zu %3zu  %.3f (+/-%.3f)   %.3f (+/-%.3f)",
                      c.pe_method.c_str(), c.missing_rate, c.prediction_length, c.n, c.mse_mean,
                      c.mse_std, c.mae_mean, c.mae_std);
        std::cout << buf << "\n";
    }
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"irregular time-series forecasting harness"};
    app.require_subcommand(1);

    CommonOpts opts;
    app.add_option("--config", opts.config_path, "experiment config file (JSON)");
    app.add_option("--out", opts.out_dir, "output directory (overrides config)");
    auto* seed_opt = app.add_option("--seed", opts.seed, "override config seeds with one seed");
    app.add_option("--threads", opts.threads, "worker threads for sweep cells");

    std::string ckpt_path;
    auto* train_cmd = app.add_subcommand("train", "train one model per the config");
    auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on the test split");
    eval_cmd->add_option("--ckpt", ckpt_path, "checkpoint path (default <out>/model.ckpt)");
    auto* sweep_cmd =
        app.add_subcommand("sweep", "run the full method x rate x horizon x seed grid");
    auto* probe_cmd =
        app.add_subcommand("probe", "single-epoch NCDE-PE training + per-dimension linearity R^2");
    auto* distgap_cmd =
        app.add_subcommand("distgap", "time-gap vs embedding-distance pairs + rank correlation");
    auto* proptest_cmd =
        app.add_subcommand("proptest", "run the six ideal-PE property checks per method");
    auto* report_cmd = app.add_subcommand("report", "re-aggregate results.csv into summary.csv");

    CLI11_PARSE(app, argc, argv);
    opts.seed_set = seed_opt->count() > 0;

    try {
        if (train_cmd->parsed()) return cmd_train(opts);
        if (eval_cmd->parsed()) return cmd_eval(opts, ckpt_path);
        if (sweep_cmd->parsed()) return cmd_sweep(opts);
        if (probe_cmd->parsed()) return cmd_probe(opts);
        if (distgap_cmd->parsed()) return cmd_distgap(opts);
        if (proptest_cmd->parsed()) return cmd_proptest(opts);
        if (report_cmd->parsed()) return cmd_report(opts);
    } catch (const std::exception& e) {
        std::cerr << "irrcast: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
