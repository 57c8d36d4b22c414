#include "irrcast/timeseries.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

namespace irrcast {

bool is_null(double v) {
    return std::isnan(v);
}

void IrregularSeries::validate() const {
    if (values.size() != timestamps.size())
        throw ShapeMismatch("series: values length " + std::to_string(values.size()) +
                            " vs timestamps " + std::to_string(timestamps.size()));
    for (std::size_t i = 1; i < timestamps.size(); ++i)
        if (!(timestamps[i] > timestamps[i - 1]))
            throw NonMonotonicTimestamps("at index " + std::to_string(i));
    for (const auto& row : values)
        if (row.size() != variable_names.size())
            throw ShapeMismatch("series: row width mismatch");
}

// --- calendar -------------------------------------------------------------------
// Days/civil conversion via the standard proleptic-Gregorian algorithms.

namespace {

std::int64_t days_from_civil(int y, int m, int d) {
    y -= m <= 2;
    const std::int64_t era = (y >= 0 ? y : y - 399) / 400;
    const unsigned yoe = static_cast<unsigned>(y - era * 400);
    const unsigned doy = (153u * static_cast<unsigned>(m + (m > 2 ? -3 : 9)) + 2u) / 5u +
                         static_cast<unsigned>(d) - 1u;
    const unsigned doe = yoe * 365u + yoe / 4u - yoe / 100u + doy;
    return era * 146097 + static_cast<std::int64_t>(doe) - 719468;
}

void civil_from_days(std::int64_t z, int& y, int& m, int& d) {
    z += 719468;
    const std::int64_t era = (z >= 0 ? z : z - 146096) / 146097;
    const unsigned doe = static_cast<unsigned>(z - era * 146097);
    const unsigned yoe = (doe - doe / 1460 + doe / 36524 - doe / 146096) / 365;
    const std::int64_t yy = static_cast<std::int64_t>(yoe) + era * 400;
    const unsigned doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
    const unsigned mp = (5 * doy + 2) / 153;
    d = static_cast<int>(doy - (153 * mp + 2) / 5 + 1);
    m = static_cast<int>(mp + (mp < 10 ? 3 : -9));
    y = static_cast<int>(yy + (m <= 2));
}

} // namespace

CivilTime civil_from_epoch(double epoch_seconds) {
    const auto total = static_cast<std::int64_t>(std::floor(epoch_seconds));
    std::int64_t days = total / 86400;
    std::int64_t sod = total % 86400;
    if (sod < 0) {
        sod += 86400;
        days -= 1;
    }
    CivilTime ct{};
    civil_from_days(days, ct.year, ct.month, ct.day);
    // 1970-01-01 was a Thursday; weekday 0 = Monday
    ct.weekday = static_cast<int>(((days % 7) + 7 + 3) % 7);
    ct.hour = static_cast<int>(sod / 3600);
    ct.minute = static_cast<int>((sod % 3600) / 60);
    ct.second = static_cast<int>(sod % 60);
    return ct;
}

double epoch_from_civil(int year, int month, int day, int hour, int minute, int second) {
    return static_cast<double>(days_from_civil(year, month, day)) * 86400.0 + hour * 3600.0 +
           minute * 60.0 + second;
}

// --- CSV ------------------------------------------------------------------------

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> cells;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            cells.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur.push_back(c);
        }
    }
    cells.push_back(cur);
    return cells;
}

double parse_iso8601(const std::string& s, std::size_t row) {
    int y, mo, d, h, mi, se;
    if (std::sscanf(s.c_str(), "%d-%d-%d %d:%d:%d", &y, &mo, &d, &h, &mi, &se) != 6)
        throw ParseError("row " + std::to_string(row) + ": bad timestamp '" + s + "'");
    if (mo < 1 || mo > 12 || d < 1 || d > 31 || h < 0 || h > 23 || mi < 0 || mi > 59 ||
        se < 0 || se > 60)
        throw ParseError("row " + std::to_string(row) + ": timestamp field out of range '" + s +
                         "'");
    return epoch_from_civil(y, mo, d, h, mi, se);
}

} // namespace

IrregularSeries parse_csv_text(const std::string& text, const CsvSchema& schema) {
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line)) throw ParseError("row 0: empty input");
    auto header = split_csv_line(line);
    if (header.empty() || header[0] != schema.time_column)
        throw ParseError("row 0: first column must be named '" + schema.time_column + "'");

    IrregularSeries series;
    series.variable_names.assign(header.begin() + 1, header.end());

    struct Row {
        double t;
        std::vector<double> v;
    };
    std::vector<Row> rows;
    std::size_t row_no = 0;
    while (std::getline(in, line)) {
        ++row_no;
        if (line.empty()) continue;
        auto cells = split_csv_line(line);
        if (cells.size() != header.size())
            throw ParseError("row " + std::to_string(row_no) + ": expected " +
                             std::to_string(header.size()) + " cells, got " +
                             std::to_string(cells.size()));
        Row r;
        r.t = parse_iso8601(cells[0], row_no);
        for (std::size_t c = 1; c < cells.size(); ++c) {
            if (cells[c].empty()) {
                r.v.push_back(std::numeric_limits<double>::quiet_NaN());
            } else {
                try {
                    std::size_t pos = 0;
                    double v = std::stod(cells[c], &pos);
                    if (pos != cells[c].size())
                        throw ParseError("row " + std::to_string(row_no) + ": bad number '" +
                                         cells[c] + "'");
                    r.v.push_back(v);
                } catch (const std::invalid_argument&) {
                    throw ParseError("row " + std::to_string(row_no) + ": bad number '" +
                                     cells[c] + "'");
                }
            }
        }
        rows.push_back(std::move(r));
    }

    std::stable_sort(rows.begin(), rows.end(),
                     [](const Row& a, const Row& b) { return a.t < b.t; });
    for (std::size_t i = 1; i < rows.size(); ++i)
        if (!(rows[i].t > rows[i - 1].t))
            throw NonMonotonicTimestamps("duplicate timestamp at sorted index " +
                                         std::to_string(i));

    for (auto& r : rows) {
        series.timestamps.push_back(r.t);
        series.values.push_back(std::move(r.v));
    }
    series.validate();
    return series;
}

IrregularSeries load_csv(const std::string& path, const CsvSchema& schema) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open " + path);
    std::ostringstream ss;
    ss << f.rdbuf();
    return parse_csv_text(ss.str(), schema);
}

// --- irregularization -------------------------------------------------------------

IrregularSeries drop_random(const IrregularSeries& series, double missing_rate,
                            std::uint64_t seed) {
    if (missing_rate < 0.0 || missing_rate >= 1.0)
        throw RateOutOfRange("missing_rate " + std::to_string(missing_rate));
    if (series.length() < 2) throw SeriesTooShort("drop_random needs >= 2 observations");

    const std::size_t n = series.length();
    std::size_t k = static_cast<std::size_t>(std::floor(missing_rate * static_cast<double>(n)));
    k = std::min(k, n - 2); // endpoints always survive

    // partial Fisher-Yates over interior indices, deterministic under seed
    std::vector<std::size_t> interior(n - 2);
    std::iota(interior.begin(), interior.end(), 1);
    Rng rng(seed);
    for (std::size_t i = 0; i < k; ++i) {
        std::uniform_int_distribution<std::size_t> pick(i, interior.size() - 1);
        std::swap(interior[i], interior[pick(rng)]);
    }
    std::vector<bool> dropped(n, false);
    for (std::size_t i = 0; i < k; ++i) dropped[interior[i]] = true;

    IrregularSeries out;
    out.variable_names = series.variable_names;
    for (std::size_t i = 0; i < n; ++i) {
        if (dropped[i]) continue;
        out.timestamps.push_back(series.timestamps[i]);
        out.values.push_back(series.values[i]);
    }
    return out;
}

// --- windows and features ----------------------------------------------------------

TimeFeatureVector time_features(double epoch_seconds, double span_start, double span_end,
                                const std::optional<TimeBase>& time_base) {
    if (!(span_end > span_start)) throw DegenerateSpan("window span must have positive length");
    TimeFeatureVector f;
    f.relative_time = (epoch_seconds - span_start) / (span_end - span_start);
    if (time_base) {
        f.absolute_time = (epoch_seconds - time_base->origin) / time_base->span;
    } else {
        f.absolute_time = epoch_seconds / 1e9;
    }
    const CivilTime ct = civil_from_epoch(epoch_seconds);
    f.month = (ct.month - 1) / 11.0 - 0.5;
    f.day = (ct.day - 1) / 30.0 - 0.5;
    f.weekday = ct.weekday / 6.0 - 0.5;
    f.hour = ct.hour / 23.0 - 0.5;
    f.minute = ct.minute / 59.0 - 0.5;
    return f;
}

std::vector<WindowPair> make_windows(const IrregularSeries& series, std::size_t lookback,
                                     std::size_t horizon, std::size_t stride,
                                     const std::optional<TimeBase>& time_base) {
    if (stride < 1) throw BadParams("make_windows: stride must be >= 1");
    const std::size_t total = lookback + horizon;
    if (total > series.length())
        throw SeriesTooShort("make_windows: need " + std::to_string(total) + " observations, have " +
                             std::to_string(series.length()));

    std::vector<WindowPair> windows;
    for (std::size_t start = 0; start + total <= series.length(); start += stride) {
        WindowPair w;
        const double span_start = series.timestamps[start];
        const double span_end = series.timestamps[start + total - 1];
        for (std::size_t i = 0; i < lookback; ++i) {
            const std::size_t idx = start + i;
            w.past_times.push_back(series.timestamps[idx]);
            w.past_values.push_back(series.values[idx]);
            w.past_features.push_back(
                time_features(series.timestamps[idx], span_start, span_end, time_base));
        }
        for (std::size_t i = 0; i < horizon; ++i) {
            const std::size_t idx = start + lookback + i;
            w.future_times.push_back(series.timestamps[idx]);
            w.future_values.push_back(series.values[idx]);
            w.future_features.push_back(
                time_features(series.timestamps[idx], span_start, span_end, time_base));
            std::vector<bool> mask_row;
            mask_row.reserve(series.n_variables());
            for (double v : series.values[idx]) mask_row.push_back(!is_null(v));
            w.target_mask.push_back(std::move(mask_row));
        }
        windows.push_back(std::move(w));
    }
    return windows;
}

SplitSeries split_chronological(const IrregularSeries& series,
                                const std::array<double, 3>& fractions) {
    double s = 0.0;
    for (double f : fractions) {
        if (f < 0.0) throw BadFractions("fractions must be nonnegative");
        s += f;
    }
    if (std::abs(s - 1.0) > 1e-9) throw BadFractions("fractions sum to " + std::to_string(s));

    const auto n = series.length();
    const auto n_train = static_cast<std::size_t>(std::floor(fractions[0] * static_cast<double>(n)));
    const auto n_val = static_cast<std::size_t>(std::floor(fractions[1] * static_cast<double>(n)));

    auto take = [&](std::size_t from, std::size_t count) {
        IrregularSeries part;
        part.variable_names = series.variable_names;
        for (std::size_t i = from; i < from + count; ++i) {
            part.timestamps.push_back(series.timestamps[i]);
            part.values.push_back(series.values[i]);
        }
        return part;
    };

    SplitSeries out;
    out.train = take(0, n_train);
    out.val = take(n_train, n_val);
    out.test = take(n_train + n_val, n - n_train - n_val);
    return out;
}

double median_observation_gap(const IrregularSeries& series) {
    if (series.length() < 2) throw SeriesTooShort("median gap needs >= 2 observations");
    std::vector<double> gaps;
    gaps.reserve(series.length() - 1);
    for (std::size_t i = 1; i < series.length(); ++i)
        gaps.push_back(series.timestamps[i] - series.timestamps[i - 1]);
    std::sort(gaps.begin(), gaps.end());
    const std::size_t m = gaps.size() / 2;
    return gaps.size() % 2 ? gaps[m] : 0.5 * (gaps[m - 1] + gaps[m]);
}

// --- synthetic data ------------------------------------------------------------------

SynthKind synth_kind_from_string(const std::string& name) {
    if (name == "sine_mixture") return SynthKind::SineMixture;
    if (name == "trend_season") return SynthKind::TrendSeason;
    if (name == "ar_process") return SynthKind::ArProcess;
    throw BadParams("unknown synthetic generator '" + name + "'");
}

IrregularSeries synth_generate(SynthKind kind, const SynthParams& params, std::size_t length,
                               std::uint64_t seed) {
    if (length < 2) throw BadParams("synth_generate: length must be >= 2");
    if (params.dims < 1) throw BadParams("synth_generate: dims must be >= 1");
    for (double p : params.periods_hours)
        if (!(p > 0.0)) throw BadParams("synth_generate: periods must be positive");

    const double start = epoch_from_civil(2021, 1, 1, 0, 0, 0);
    Rng rng(mix_seed(seed, 0x5eedULL));

    IrregularSeries s;
    for (std::size_t v = 0; v < params.dims; ++v) s.variable_names.push_back("v" + std::to_string(v));

    // fixed per-dimension phases drawn once so dimensions differ
    std::vector<double> phases(params.dims);
    std::vector<double> ar_state(params.dims, 0.0);
    for (auto& p : phases) p = uniform(rng, 0.0, 2.0 * M_PI);

    for (std::size_t i = 0; i < length; ++i) {
        const double hours = static_cast<double>(i);
        s.timestamps.push_back(start + hours * 3600.0);
        std::vector<double> row(params.dims);
        for (std::size_t v = 0; v < params.dims; ++v) {
            double x = 0.0;
            switch (kind) {
            case SynthKind::SineMixture: {
                for (std::size_t pi = 0; pi < params.periods_hours.size(); ++pi) {
                    const double w = 2.0 * M_PI / params.periods_hours[pi];
                    x += params.amplitude * std::sin(w * hours + phases[v] * (pi + 1.0));
                }
                x += params.trend_per_kstep * hours / 1000.0;
                break;
            }
            case SynthKind::TrendSeason: {
                const double w = 2.0 * M_PI / params.periods_hours.front();
                x = params.amplitude * std::sin(w * hours + phases[v]) +
                    params.trend_per_kstep * hours / 1000.0 * (1.0 + static_cast<double>(v));
                break;
            }
            case SynthKind::ArProcess: {
                ar_state[v] = params.ar_coeff * ar_state[v] + gaussian(rng, 0.0, 1.0);
                x = ar_state[v];
                break;
            }
            }
            if (params.noise_stddev > 0.0) x += gaussian(rng, 0.0, params.noise_stddev);
            row[v] = x;
        }
        s.values.push_back(std::move(row));
    }
    return s;
}

} // namespace irrcast
