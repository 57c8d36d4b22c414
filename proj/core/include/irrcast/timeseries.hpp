#ifndef IRRCAST_TIMESERIES_HPP
#define IRRCAST_TIMESERIES_HPP

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "irrcast/errors.hpp"
#include "irrcast/rng.hpp"

namespace irrcast {

/// Timestamped multivariate observations with optional nulls (stored as NaN).
/// Timestamps are epoch seconds (UTC) and strictly increasing.
struct IrregularSeries {
    std::vector<double> timestamps;
    std::vector<std::vector<double>> values; // values[i] has one entry per variable
    std::vector<std::string> variable_names;

    std::size_t length() const { return timestamps.size(); }
    std::size_t n_variables() const { return variable_names.size(); }

    void validate() const; // throws NonMonotonicTimestamps / ShapeMismatch
};

bool is_null(double v);

/// Per-observation time features: relative time within a window span in
/// [0,1], normalized epoch, and calendar fields scaled to [-0.5, 0.5].
struct TimeFeatureVector {
    double relative_time = 0.0;
    double absolute_time = 0.0;
    double month = 0.0;
    double day = 0.0;
    double weekday = 0.0;
    double hour = 0.0;
    double minute = 0.0;

    static constexpr std::size_t kDim = 7;
    std::array<double, kDim> as_array() const {
        return {relative_time, absolute_time, month, day, weekday, hour, minute};
    }
};

/// One forecasting instance: N past observations and M future targets with
/// their timestamps and time features. Windows count observations, not
/// wall-clock span, so gaps stay irregular after dropping.
struct WindowPair {
    std::vector<double> past_times;
    std::vector<std::vector<double>> past_values;   // N x l, NaN = null
    std::vector<TimeFeatureVector> past_features;
    std::vector<double> future_times;
    std::vector<std::vector<double>> future_values; // M x l
    std::vector<TimeFeatureVector> future_features;
    std::vector<std::vector<bool>> target_mask;     // M x l, true = observed

    std::size_t lookback() const { return past_times.size(); }
    std::size_t horizon() const { return future_times.size(); }
};

// --- calendar helpers (UTC, proleptic Gregorian) ------------------------------

struct CivilTime {
    int year;
    int month;   // 1..12
    int day;     // 1..31
    int weekday; // 0 = Monday .. 6 = Sunday
    int hour;    // 0..23
    int minute;  // 0..59
    int second;  // 0..59
};

CivilTime civil_from_epoch(double epoch_seconds);
double epoch_from_civil(int year, int month, int day, int hour, int minute, int second);

// --- operations ----------------------------------------------------------------

/// Column schema for CSV ingestion: column 0 must be named `date` and hold
/// ISO-8601 `YYYY-MM-DD HH:MM:SS`; remaining columns are numeric variables
/// where an empty cell means null.
struct CsvSchema {
    std::string time_column = "date";
};

IrregularSeries load_csv(const std::string& path, const CsvSchema& schema = {});
IrregularSeries parse_csv_text(const std::string& text, const CsvSchema& schema = {});

/// Removes floor(rate*N) whole observations uniformly at random (seeded);
/// the first and last observations always survive so window and spline
/// boundaries stay well-defined.
IrregularSeries drop_random(const IrregularSeries& series, double missing_rate,
                            std::uint64_t seed);

/// Sliding (lookback=N, horizon=M) windows by observation count with
/// relative time computed over each window's combined N+M span.
/// absolute_time is normalized against `time_base` when given (harness
/// passes the full series span) and falls back to raw-epoch normalization.
struct TimeBase {
    double origin = 0.0;
    double span = 1.0; // seconds mapped to one unit of absolute_time
};

std::vector<WindowPair> make_windows(const IrregularSeries& series, std::size_t lookback,
                                     std::size_t horizon, std::size_t stride,
                                     const std::optional<TimeBase>& time_base = std::nullopt);

struct SplitSeries {
    IrregularSeries train;
    IrregularSeries val;
    IrregularSeries test;
};

SplitSeries split_chronological(const IrregularSeries& series,
                                const std::array<double, 3>& fractions);

TimeFeatureVector time_features(double epoch_seconds, double span_start, double span_end,
                                const std::optional<TimeBase>& time_base = std::nullopt);

/// Median gap between consecutive observations, in seconds.
double median_observation_gap(const IrregularSeries& series);

// --- synthetic generators ---------------------------------------------------------

enum class SynthKind { SineMixture, TrendSeason, ArProcess };

struct SynthParams {
    std::size_t dims = 3;
    // sine_mixture: per-dimension mixture of two incommensurate periods
    std::vector<double> periods_hours = {24.0, 33.941125496954285}; // 24*sqrt(2)
    double amplitude = 1.0;
    double trend_per_kstep = 0.2;   // linear trend per 1000 hours
    double noise_stddev = 0.1;
    // ar_process
    double ar_coeff = 0.8;
};

IrregularSeries synth_generate(SynthKind kind, const SynthParams& params, std::size_t length,
                               std::uint64_t seed);

SynthKind synth_kind_from_string(const std::string& name);

} // namespace irrcast

#endif // IRRCAST_TIMESERIES_HPP
