#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "irrcast/revin.hpp"
#include "irrcast/timeseries.hpp"

using namespace irrcast;

TEST_CASE("csv parsing: rows, nulls, errors") {
    const std::string text =
        "date,a,b\n"
        "2021-01-01 00:00:00,1.5,2\n"
        "2021-01-01 01:00:00,,3\n"
        "2021-01-01 02:00:00,2.5,4\n";
    IrregularSeries s = parse_csv_text(text);
    CHECK(s.length() == 3);
    CHECK(s.variable_names == std::vector<std::string>{"a", "b"});
    CHECK(s.values[0][0] == 1.5);
    CHECK(is_null(s.values[1][0]));
    CHECK(s.values[1][1] == 3.0);
    CHECK(s.timestamps[1] - s.timestamps[0] == 3600.0);

    // duplicate timestamps are rejected
    CHECK_THROWS_AS(parse_csv_text("date,a\n"
                                   "2021-01-01 00:00:00,1\n"
                                   "2021-01-01 00:00:00,2\n"),
                    NonMonotonicTimestamps);

    // out-of-order rows are sorted, not rejected
    IrregularSeries s2 = parse_csv_text("date,a\n"
                                        "2021-01-01 02:00:00,2\n"
                                        "2021-01-01 01:00:00,1\n");
    CHECK(s2.values[0][0] == 1.0);

    CHECK_THROWS_AS(parse_csv_text("time,a\n2021-01-01 00:00:00,1\n"), ParseError);
    CHECK_THROWS_AS(parse_csv_text("date,a\nnot-a-date,1\n"), ParseError);
    CHECK_THROWS_AS(parse_csv_text("date,a\n2021-01-01 00:00:00,abc\n"), ParseError);
    CHECK_THROWS_WITH_AS(parse_csv_text("date,a\n2021-01-01 00:00:00,1\n2021-99-01 00:00:00,2\n"),
                         doctest::Contains("row 2"), ParseError);
}

TEST_CASE("calendar round trip") {
    const double epoch = epoch_from_civil(2021, 3, 14, 15, 9, 26);
    CivilTime ct = civil_from_epoch(epoch);
    CHECK(ct.year == 2021);
    CHECK(ct.month == 3);
    CHECK(ct.day == 14);
    CHECK(ct.hour == 15);
    CHECK(ct.minute == 9);
    CHECK(ct.second == 26);
    CHECK(ct.weekday == 6); // 2021-03-14 was a Sunday
    CHECK(civil_from_epoch(0.0).year == 1970);
    CHECK(civil_from_epoch(0.0).weekday == 3); // Thursday
}

namespace {

IrregularSeries regular_series(std::size_t n, std::size_t dims = 1) {
    SynthParams p;
    p.dims = dims;
    p.noise_stddev = 0.0;
    p.trend_per_kstep = 0.0;
    return synth_generate(SynthKind::SineMixture, p, n, 1);
}

} // namespace

TEST_CASE("drop_random semantics") {
    IrregularSeries s = regular_series(100);

    IrregularSeries same = drop_random(s, 0.0, 7);
    CHECK(same.length() == 100);

    IrregularSeries dropped = drop_random(s, 0.4, 7);
    CHECK(dropped.length() == 60);
    CHECK(dropped.timestamps.front() == s.timestamps.front());
    CHECK(dropped.timestamps.back() == s.timestamps.back());
    dropped.validate(); // strictly increasing, no invented values

    IrregularSeries again = drop_random(s, 0.4, 7);
    CHECK(again.timestamps == dropped.timestamps);

    IrregularSeries other = drop_random(s, 0.4, 8);
    CHECK(other.timestamps != dropped.timestamps);

    // surviving observations keep their original values
    for (std::size_t i = 0; i < dropped.length(); ++i) {
        auto it = std::find(s.timestamps.begin(), s.timestamps.end(), dropped.timestamps[i]);
        CHECK(it != s.timestamps.end());
        const auto idx = static_cast<std::size_t>(std::distance(s.timestamps.begin(), it));
        CHECK(dropped.values[i] == s.values[idx]);
    }

    CHECK_THROWS_AS(drop_random(s, 1.0, 0), RateOutOfRange);
    CHECK_THROWS_AS(drop_random(s, -0.1, 0), RateOutOfRange);
}

TEST_CASE("make_windows counting and feature spans") {
    IrregularSeries s = regular_series(10);
    auto w1 = make_windows(s, 4, 2, 6);
    CHECK(w1.size() == 1);
    auto w5 = make_windows(s, 4, 2, 1);
    CHECK(w5.size() == 5);
    CHECK_THROWS_AS(make_windows(regular_series(5), 4, 2, 1), SeriesTooShort);

    for (const auto& w : w5) {
        CHECK(w.lookback() == 4);
        CHECK(w.horizon() == 2);
        CHECK(w.past_times.back() < w.future_times.front());
        CHECK(w.past_features.front().relative_time == 0.0);
        CHECK(w.future_features.back().relative_time == doctest::Approx(1.0));
    }

    // windows over a dropped series still carry exactly N past points
    IrregularSeries irr = drop_random(regular_series(100), 0.4, 3);
    auto wirr = make_windows(irr, 8, 4, 5);
    CHECK(!wirr.empty());
    bool saw_irregular_gap = false;
    for (const auto& w : wirr) {
        CHECK(w.lookback() == 8);
        CHECK(w.horizon() == 4);
        for (std::size_t i = 1; i < w.past_times.size(); ++i) {
            CHECK(w.past_times[i] > w.past_times[i - 1]);
            if (w.past_times[i] - w.past_times[i - 1] > 3600.0) saw_irregular_gap = true;
        }
    }
    CHECK(saw_irregular_gap);
}

TEST_CASE("split_chronological") {
    IrregularSeries s = regular_series(100);
    SplitSeries split = split_chronological(s, {0.6, 0.2, 0.2});
    CHECK(split.train.length() == 60);
    CHECK(split.val.length() == 20);
    CHECK(split.test.length() == 20);
    CHECK(split.train.timestamps.back() < split.val.timestamps.front());
    CHECK(split.val.timestamps.back() < split.test.timestamps.front());

    // union reproduces the series exactly
    std::vector<double> merged = split.train.timestamps;
    merged.insert(merged.end(), split.val.timestamps.begin(), split.val.timestamps.end());
    merged.insert(merged.end(), split.test.timestamps.begin(), split.test.timestamps.end());
    CHECK(merged == s.timestamps);

    SplitSeries all_train = split_chronological(s, {1.0, 0.0, 0.0});
    CHECK(all_train.train.length() == 100);
    CHECK(all_train.test.length() == 0);

    CHECK_THROWS_AS(split_chronological(s, {0.5, 0.2, 0.2}), BadFractions);
}

TEST_CASE("time_features scaling and covariance") {
    const double start = epoch_from_civil(2021, 1, 1, 0, 0, 0);
    const double end = start + 10 * 3600.0;

    TimeFeatureVector at_start = time_features(start, start, end);
    CHECK(at_start.relative_time == 0.0);
    CHECK(at_start.month == doctest::Approx(-0.5)); // January
    CHECK(at_start.day == doctest::Approx(-0.5));   // the 1st
    CHECK(at_start.hour == doctest::Approx(-0.5));  // midnight
    CHECK(at_start.minute == doctest::Approx(-0.5));

    TimeFeatureVector at_end = time_features(end, start, end);
    CHECK(at_end.relative_time == 1.0);

    // calendar fields stay within their scaled range
    for (int k = 0; k < 50; ++k) {
        TimeFeatureVector f = time_features(start + k * 97 * 3600.0, start, start + 5000 * 3600.0);
        for (double v : {f.month, f.day, f.weekday, f.hour, f.minute}) {
            CHECK(v >= -0.5);
            CHECK(v <= 0.5);
        }
    }

    // translation covariance of relative time
    const double delta = 86400.0 * 13 + 3600.0 * 5;
    TimeFeatureVector a = time_features(start + 3600.0 * 3, start, end);
    TimeFeatureVector b = time_features(start + 3600.0 * 3 + delta, start + delta, end + delta);
    CHECK(a.relative_time == doctest::Approx(b.relative_time).epsilon(1e-12));

    CHECK_THROWS_AS(time_features(start, start, start), DegenerateSpan);
}

TEST_CASE("revin normalize/denormalize") {
    // constant series -> zeros under the eps-regularized sigma
    RevinStats stats;
    Tensor z = revin_normalize({{5.0}, {5.0}, {5.0}}, stats);
    for (double v : z.values()) CHECK(v == 0.0);

    // [1,3] -> [-1,1] with population std
    RevinStats st2;
    Tensor n2 = revin_normalize({{1.0}, {3.0}}, st2);
    CHECK(n2.at(0, 0) == doctest::Approx(-1.0).epsilon(1e-12));
    CHECK(n2.at(1, 0) == doctest::Approx(1.0).epsilon(1e-12));

    // round trip within 1e-6
    std::vector<std::vector<double>> window = {{1.0, 10.0}, {2.0, 14.0}, {4.0, 12.0}};
    RevinStats st3;
    Tensor norm = revin_normalize(window, st3);
    Tensor back = revin_denormalize(norm, st3);
    for (std::size_t i = 0; i < window.size(); ++i)
        for (std::size_t j = 0; j < 2; ++j)
            CHECK(std::abs(back.at(static_cast<std::int64_t>(i), static_cast<std::int64_t>(j)) -
                           window[i][j]) < 1e-6);

    // normalized observed entries have near-zero per-variable mean
    for (std::int64_t j = 0; j < 2; ++j) {
        double m = 0;
        for (std::int64_t i = 0; i < 3; ++i) m += norm.at(i, j);
        CHECK(std::abs(m / 3.0) < 1e-7);
    }

    // denormalize(0) returns the per-variable mean
    Tensor zero = Tensor::zeros({1, 2});
    Tensor mu = revin_denormalize(zero, st3);
    CHECK(mu.at(0, 0) == doctest::Approx((1.0 + 2.0 + 4.0) / 3.0));
    CHECK(mu.at(0, 1) == doctest::Approx(12.0));

    CHECK_THROWS_AS(revin_denormalize(Tensor::zeros({1, 3}), st3), ShapeMismatch);
}

TEST_CASE("revin with learnable affine stays exactly invertible") {
    RevinStats stats;
    stats.gain = Tensor::from({2}, {2.0, 0.5});
    stats.bias = Tensor::from({2}, {0.3, -1.0});
    std::vector<std::vector<double>> window = {{1.0, -3.0}, {5.0, 2.0}, {2.0, 0.0}};
    Tensor norm = revin_normalize(window, stats);
    Tensor back = revin_denormalize(norm, stats);
    for (std::size_t i = 0; i < window.size(); ++i)
        for (std::size_t j = 0; j < 2; ++j)
            CHECK(std::abs(back.at(static_cast<std::int64_t>(i), static_cast<std::int64_t>(j)) -
                           window[i][j]) < 1e-6);
}

TEST_CASE("revin excludes nulls and rejects all-null variables") {
    RevinStats stats;
    const double nan = std::numeric_limits<double>::quiet_NaN();
    Tensor norm = revin_normalize({{1.0}, {nan}, {3.0}}, stats);
    CHECK(stats.mean[0] == doctest::Approx(2.0));
    CHECK(norm.at(1, 0) == 0.0); // null standardizes to the mean's image

    CHECK_THROWS_AS(revin_normalize({{nan}, {nan}}, stats), AllNullVariable);
}

TEST_CASE("synthetic generators") {
    SynthParams quiet;
    quiet.dims = 2;
    quiet.amplitude = 0.0;
    quiet.trend_per_kstep = 0.0;
    quiet.noise_stddev = 0.0;
    IrregularSeries constant = synth_generate(SynthKind::SineMixture, quiet, 50, 9);
    for (const auto& row : constant.values)
        for (double v : row) CHECK(v == 0.0);

    SynthParams p;
    p.dims = 1;
    p.periods_hours = {24.0};
    p.trend_per_kstep = 0.0;
    p.noise_stddev = 0.0;
    IrregularSeries wave = synth_generate(SynthKind::SineMixture, p, 100, 4);
    IrregularSeries wave2 = synth_generate(SynthKind::SineMixture, p, 100, 4);
    CHECK(wave.values == wave2.values); // deterministic under seed
    for (std::size_t i = 0; i + 24 < wave.length(); ++i)
        CHECK(std::abs(wave.values[i][0] - wave.values[i + 24][0]) < 1e-9);

    CHECK(wave.timestamps[1] - wave.timestamps[0] == 3600.0); // hourly base grid

    CHECK_THROWS_AS(synth_generate(SynthKind::SineMixture, p, 1, 0), BadParams);
    SynthParams bad;
    bad.periods_hours = {0.0};
    CHECK_THROWS_AS(synth_generate(SynthKind::SineMixture, bad, 10, 0), BadParams);
    CHECK_THROWS_AS(synth_kind_from_string("nope"), BadParams);
}
