#ifndef IRRCAST_HARNESS_HPP
#define IRRCAST_HARNESS_HPP

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "irrcast/positional.hpp"
#include "irrcast/timeseries.hpp"
#include "irrcast/transformer.hpp"

namespace irrcast {

struct DatasetSpec {
    std::string kind = "synthetic"; // or "csv"
    std::string csv_path;
    std::string generator = "sine_mixture";
    std::size_t length = 2000;
    SynthParams synth;
    std::uint64_t synth_seed = 7;
};

struct ExperimentConfig {
    DatasetSpec dataset;
    std::size_t lookback = 48;         // N
    std::vector<std::size_t> horizons = {24, 48}; // M sweep axis
    std::size_t stride = 4;
    std::array<double, 3> split_fractions = {0.6, 0.2, 0.2};
    std::vector<double> missing_rates = {0.0, 0.2, 0.4, 0.6};
    std::vector<std::string> pe_methods = {"ctlpe", "simple_overlap", "irr_sinusoidal"};
    std::vector<std::uint64_t> seeds = {0, 1, 2};
    ModelConfig model;
    TrainingConfig training;
    std::string output_dir = "out";
    // single-run commands (train/eval/probe/distgap) use these
    double missing_rate = 0.0;
    std::string pe_method = "ctlpe";

    void validate() const;
};

ExperimentConfig load_config(const std::string& path);
ExperimentConfig parse_config_text(const std::string& text);

struct ResultRow {
    std::string pe_method;
    double missing_rate = 0.0;
    std::size_t prediction_length = 0;
    std::uint64_t seed = 0;
    std::string split = "test"; // or "error"
    double mse = 0.0;
    double mae = 0.0;
    double wall_time_seconds = 0.0;
};

std::string result_csv_header();
std::string to_csv(const ResultRow& row);
ResultRow result_row_from_csv(const std::string& line);

struct AggregateCell {
    std::string pe_method;
    double missing_rate = 0.0;
    std::size_t prediction_length = 0;
    std::size_t n = 0;
    double mse_mean = 0.0, mse_std = 0.0;
    double mae_mean = 0.0, mae_std = 0.0;
};

/// Sample mean and population standard deviation per (method, rate, length)
/// cell; error rows are excluded. Throws EmptyCell when nothing remains.
std::vector<AggregateCell> aggregate(const std::vector<ResultRow>& rows);

// --- sweep ------------------------------------------------------------------------

struct SweepCell {
    std::string pe_method;
    double missing_rate;
    std::size_t horizon;
    std::uint64_t seed;
};

std::vector<SweepCell> sweep_cells(const ExperimentConfig& config);

/// Runs one cell end to end (irregularize, split, window, train, evaluate
/// test split) and returns its row; failures come back as split="error" rows.
ResultRow run_cell(const ExperimentConfig& config, const IrregularSeries& base,
                   const SweepCell& cell);

/// Full sweep with incremental, resumable, deterministic-order CSV output.
/// Rows land in results.csv under config.output_dir; completed cells found
/// there on startup are skipped. Returns all rows (existing + new).
std::vector<ResultRow> run_experiment(const ExperimentConfig& config, int threads = 1);

/// Loads the dataset named by the config (synthetic or CSV).
IrregularSeries load_dataset(const ExperimentConfig& config);

// --- analysis probes -----------------------------------------------------------------

struct LinearityProbe {
    std::vector<double> r2_per_dimension;
    double median_r2 = 0.0;
    bool median_above_0_8 = false;
};

/// Least-squares line fit per embedding dimension of the NCDE-PE evaluated
/// at the probe times; R^2 = 1 - SS_res/SS_tot (1 when the dimension is
/// exactly linear, including constant-and-exactly-fit edge cases).
LinearityProbe linearity_probe(const NcdeParams& params, const DataContext& data,
                               const std::vector<double>& probe_times);

/// R^2 of the per-column simple linear regression rows[:,c] ~ a + b*times.
std::vector<double> r_squared_per_dimension(const std::vector<double>& times,
                                            const std::vector<std::vector<double>>& rows);

struct DistanceGapReport {
    std::vector<std::pair<double, double>> pairs; // (|dt|, embedding distance)
    double spearman = 0.0;
    bool degenerate = false; // constant distances: correlation undefined
};

DistanceGapReport distance_gap_report(const PeFunction& pe, const std::vector<double>& times);

/// Spearman rank correlation with average ranks on ties; returns nullopt
/// when either side is constant.
std::optional<double> spearman(const std::vector<double>& a, const std::vector<double>& b);

// --- property suite ---------------------------------------------------------------------

enum class PropertyOutcome { Pass, Fail, NotApplicable };

struct PropertyResult {
    std::string method;
    std::string property;
    PropertyOutcome outcome = PropertyOutcome::NotApplicable;
    std::string witness; // human-readable failure evidence
};

/// Executes the six ideal-PE property checks (monotonicity, translation
/// invariance, symmetry, inductive, data-driven, irregularity-adaptable)
/// for each method. Outcomes depend on method structure, not training.
std::vector<PropertyResult> run_property_suite(const std::vector<std::string>& methods,
                                               std::int64_t d_model, std::uint64_t seed);

std::string property_outcome_to_string(PropertyOutcome o);

// --- report emission -----------------------------------------------------------------------

void ensure_directory(const std::string& path);

/// results.csv + summary.csv + plotdata/ CSVs under `out_dir`.
void emit_report(const std::vector<ResultRow>& rows, const std::vector<AggregateCell>& aggregates,
                 const std::string& out_dir);

} // namespace irrcast

#endif // IRRCAST_HARNESS_HPP
