#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "irrcast/gradcheck.hpp"
#include "irrcast/optimizer.hpp"
#include "irrcast/positional.hpp"

using namespace irrcast;

namespace {

std::vector<double> row_of(const Tensor& t, std::int64_t r) {
    std::vector<double> out(static_cast<std::size_t>(t.dim(1)));
    for (std::int64_t c = 0; c < t.dim(1); ++c) out[static_cast<std::size_t>(c)] = t.at(r, c);
    return out;
}

TimeFeatureVector features_at(double hours) {
    const double base = epoch_from_civil(2021, 1, 1, 0, 0, 0);
    return time_features(base + hours * 3600.0, base, base + 200.0 * 3600.0);
}

} // namespace

TEST_CASE("ctlpe closed form") {
    CtlpeParams unit;
    unit.slope = Tensor::parameter({3}, {1, 1, 1});
    unit.bias = Tensor::parameter({3}, {0, 0, 0});
    Tensor rows = ctlpe({0.0, 1.0, 2.0}, unit, true);
    for (std::int64_t j = 0; j < 3; ++j)
        for (std::int64_t c = 0; c < 3; ++c)
            CHECK(rows.at(j, c) == doctest::Approx(static_cast<double>(j)));

    CtlpeParams p;
    p.slope = Tensor::parameter({1}, {2.0});
    p.bias = Tensor::parameter({1}, {1.0});
    CHECK(ctlpe({3.0}, p, true).item() == doctest::Approx(7.0));
    CHECK(ctlpe({3.0}, p, false).item() == doctest::Approx(6.0));

    CHECK_THROWS_AS(ctlpe({std::nan("")}, p, true), NonFiniteInput);
}

TEST_CASE("ctlpe distance is |lag| * |slope| for all tested offsets") {
    Rng rng(21);
    CtlpeParams p = CtlpeParams::init(16, rng);
    double slope_norm = 0.0;
    for (double s : p.slope.values()) slope_norm += s * s;
    slope_norm = std::sqrt(slope_norm);

    for (int k = 0; k < 30; ++k) {
        const double t = uniform(rng, -50, 50);
        const double lag = uniform(rng, -20, 20);
        Tensor rows = ctlpe({std::min(t, t + lag), std::max(t, t + lag)}, p, true);
        const double d = pe_distance(row_of(rows, 0), row_of(rows, 1));
        CHECK(d == doctest::Approx(std::abs(lag) * slope_norm).epsilon(1e-9));
    }
}

TEST_CASE("ctlpe gradient flows to slope and bias") {
    Rng rng(5);
    CtlpeParams p = CtlpeParams::init(4, rng);
    Tape tape;
    {
        TapeScope scope(tape);
        tape.backward(sum(ctlpe({0.5, 1.5, 2.0}, p, true)));
    }
    CHECK(p.slope.grad_norm() > 0.0);
    CHECK(p.bias.grad_norm() > 0.0);
    // d(sum)/d(slope_c) = sum of times
    CHECK(p.slope.grad()[0] == doctest::Approx(4.0));
    CHECK(p.bias.grad()[0] == doctest::Approx(3.0));
}

TEST_CASE("sinusoidal_pe formula") {
    Tensor z = sinusoidal_pe({0}, 6);
    for (std::int64_t c = 0; c < 6; c += 2) {
        CHECK(z.at(0, c) == 0.0);     // sin 0
        CHECK(z.at(0, c + 1) == 1.0); // cos 0
    }

    // every row has squared norm d/2
    Tensor rows = sinusoidal_pe({0, 1, 5, 1000}, 16);
    for (std::int64_t r = 0; r < 4; ++r) {
        double sq = 0.0;
        for (std::int64_t c = 0; c < 16; ++c) sq += rows.at(r, c) * rows.at(r, c);
        CHECK(std::abs(sq - 8.0) < 1e-9);
    }

    Tensor one = sinusoidal_pe({1}, 4);
    CHECK(one.at(0, 0) == doctest::Approx(std::sin(1.0)));
    CHECK(one.at(0, 1) == doctest::Approx(std::cos(1.0)));
    CHECK(one.at(0, 2) == doctest::Approx(std::sin(0.01)));
    CHECK(one.at(0, 3) == doctest::Approx(std::cos(0.01)));

    CHECK_THROWS_AS(sinusoidal_pe({0}, 5), OddDimension);
    CHECK_THROWS_AS(sinusoidal_pe({-1}, 4), BadParams);
}

TEST_CASE("irr_sinusoidal_pe reduces to sinusoidal on integer times") {
    Tensor a = sinusoidal_pe({0, 1, 2, 3}, 8);
    Tensor b = irr_sinusoidal_pe({0.0, 1.0, 2.0, 3.0}, 8, 1.0);
    for (std::int64_t r = 0; r < 4; ++r)
        for (std::int64_t c = 0; c < 8; ++c)
            CHECK(a.at(r, c) == doctest::Approx(b.at(r, c)).epsilon(1e-15));

    Tensor z = irr_sinusoidal_pe({0.0}, 4, 3.7);
    CHECK(z.at(0, 0) == 0.0);
    CHECK(z.at(0, 1) == 1.0);

    CHECK_THROWS_AS(irr_sinusoidal_pe({0.0}, 3, 1.0), OddDimension);
}

TEST_CASE("irr_sinusoidal violates gap ordering on wide spans") {
    // brute-force search for |t1-t2| > |t1-t3| with d12 < d13
    Rng rng(77);
    const std::int64_t d = 8;
    std::vector<double> times(40);
    for (auto& t : times) t = uniform(rng, 0.0, 5000.0);
    std::sort(times.begin(), times.end());

    Tensor rows = irr_sinusoidal_pe(times, d, 1.0);
    bool found = false;
    for (std::size_t i = 0; i < times.size() && !found; ++i)
        for (std::size_t j = 0; j < times.size() && !found; ++j)
            for (std::size_t k = 0; k < times.size() && !found; ++k) {
                if (i == j || i == k || j == k) continue;
                const double g12 = std::abs(times[i] - times[j]);
                const double g13 = std::abs(times[i] - times[k]);
                if (g12 > g13 &&
                    pe_distance(row_of(rows, static_cast<std::int64_t>(i)),
                                row_of(rows, static_cast<std::int64_t>(j))) <
                        pe_distance(row_of(rows, static_cast<std::int64_t>(i)),
                                    row_of(rows, static_cast<std::int64_t>(k))))
                    found = true;
            }
    CHECK(found);
}

TEST_CASE("uniform_pe composition") {
    const std::int64_t d = 8;
    std::vector<TimeFeatureVector> fs = {features_at(0.0), features_at(5.0), features_at(29.0)};

    UniformPeTables zero;
    zero.month = Tensor::parameter({12, d}, std::vector<double>(12 * d, 0.0));
    zero.day = Tensor::parameter({31, d}, std::vector<double>(31 * d, 0.0));
    zero.weekday = Tensor::parameter({7, d}, std::vector<double>(7 * d, 0.0));
    zero.hour = Tensor::parameter({24, d}, std::vector<double>(24 * d, 0.0));
    zero.minute = Tensor::parameter({60, d}, std::vector<double>(60 * d, 0.0));

    Tensor rows = uniform_pe(fs, zero, d);
    Tensor sinus = sinusoidal_pe({0, 1, 2}, d);
    for (std::int64_t r = 0; r < 3; ++r)
        for (std::int64_t c = 0; c < d; ++c)
            CHECK(rows.at(r, c) == doctest::Approx(sinus.at(r, c)));

    // identical calendar fields + order give identical rows
    Rng rng(31);
    UniformPeTables tables = UniformPeTables::init(d, rng);
    std::vector<TimeFeatureVector> dup = {features_at(3.0), features_at(3.0)};
    Tensor same = uniform_pe(dup, tables, d);
    // rows differ only via the order term; subtract it to compare the lookups
    Tensor orders = sinusoidal_pe({0, 1}, d);
    for (std::int64_t c = 0; c < d; ++c)
        CHECK(same.at(0, c) - orders.at(0, c) ==
              doctest::Approx(same.at(1, c) - orders.at(1, c)).epsilon(1e-12));

    // gradient flows into the month table
    auto f = [&](const Tensor& month) {
        UniformPeTables t2 = tables;
        t2.month = reshape(month, {12, d});
        return sum(uniform_pe(fs, t2, d));
    };
    std::vector<double> mv(tables.month.values().begin(), tables.month.values().end());
    CHECK(finite_difference_check(f, Tensor::from({12 * d}, mv), 1e-5) < 1e-4);

    TimeFeatureVector broken = features_at(0.0);
    broken.month = 0.73; // not a scaled calendar value
    CHECK_THROWS_AS(uniform_pe({broken}, tables, d), FieldOutOfRange);
}

TEST_CASE("time_feature_pe affine map") {
    const std::int64_t d = 6;
    const auto m = static_cast<std::int64_t>(TimeFeatureVector::kDim);
    std::vector<TimeFeatureVector> fs = {features_at(1.0), features_at(7.5)};

    TimeFeaturePeParams zero;
    zero.projection = Tensor::parameter({m, d}, std::vector<double>(static_cast<std::size_t>(m * d), 0.0));
    zero.bias = Tensor::parameter({d}, std::vector<double>(static_cast<std::size_t>(d), 0.0));
    Tensor z = time_feature_pe(fs, zero);
    for (double v : z.values()) CHECK(v == 0.0);

    // a projection that copies relative_time into column 0
    TimeFeaturePeParams copy = zero;
    std::vector<double> proj(static_cast<std::size_t>(m * d), 0.0);
    proj[0] = 1.0; // feature 0 (relative_time) -> column 0
    copy.projection = Tensor::parameter({m, d}, proj);
    Tensor r = time_feature_pe(fs, copy);
    CHECK(r.at(0, 0) == doctest::Approx(fs[0].relative_time));
    CHECK(r.at(1, 0) == doctest::Approx(fs[1].relative_time));

    Rng rng(18);
    TimeFeaturePeParams params = TimeFeaturePeParams::init(d, rng);
    auto f = [&](const Tensor& p) {
        TimeFeaturePeParams p2 = params;
        p2.projection = reshape(p, {m, d});
        return sum(time_feature_pe(fs, p2));
    };
    std::vector<double> pv(params.projection.values().begin(), params.projection.values().end());
    CHECK(finite_difference_check(f, Tensor::from({m * d}, pv), 1e-5) < 1e-4);
}

TEST_CASE("simple_pe quantized table") {
    Rng rng(10);
    SimplePeTable table = SimplePeTable::init(0.0, 100.0, 1.0, 4, rng);
    CHECK(table.rows() == 101);

    Tensor two = simple_pe({13.0, 13.2}, table); // both quantize to cell 13
    for (std::int64_t c = 0; c < 4; ++c)
        CHECK(two.at(0, c) == two.at(1, c));

    CHECK_THROWS_AS(simple_pe({150.0}, table), TimeOutOfTableRange);
    CHECK_THROWS_AS(simple_pe({-3.0}, table), TimeOutOfTableRange);

    // one SGD step only changes the touched cells
    std::vector<double> before(table.table.values().begin(), table.table.values().end());
    {
        Tape tape;
        TapeScope scope(tape);
        tape.backward(sum(simple_pe({7.0, 42.0}, table)));
    }
    Optimizer sgd(OptimizerKind::SGD, 0.5);
    sgd.step({table.table});
    auto after = table.table.values();
    for (std::int64_t r = 0; r < table.rows(); ++r) {
        const bool touched = (r == 7 || r == 42);
        for (std::int64_t c = 0; c < 4; ++c) {
            const auto i = static_cast<std::size_t>(r * 4 + c);
            if (touched) CHECK(after[i] != before[i]);
            else CHECK(after[i] == before[i]);
        }
    }
}

TEST_CASE("simple_overlap_pe is order-only") {
    Rng rng(12);
    SimpleOverlapPeTable table = SimpleOverlapPeTable::init(8, 4, rng);

    Tensor a = simple_overlap_pe(5, table);
    Tensor b = simple_overlap_pe(5, table); // "different timestamps", same length
    for (std::int64_t r = 0; r < 5; ++r)
        for (std::int64_t c = 0; c < 4; ++c) CHECK(a.at(r, c) == b.at(r, c));

    Tensor full = simple_overlap_pe(8, table);
    CHECK(full.dim(0) == 8);
    CHECK_THROWS_AS(simple_overlap_pe(9, table), WindowTooLong);
}

TEST_CASE("pe_distance is a metric") {
    std::vector<double> p = {0, 0}, q = {3, 4};
    CHECK(pe_distance(p, p) == 0.0);
    CHECK(pe_distance(p, q) == doctest::Approx(5.0));
    CHECK(pe_distance(p, q) == pe_distance(q, p));
    CHECK_THROWS_AS(pe_distance(p, std::vector<double>{1, 2, 3}), ShapeMismatch);

    // triangle inequality over sampled triples
    Rng rng(9);
    for (int k = 0; k < 200; ++k) {
        std::vector<double> a(4), b(4), c(4);
        for (int i = 0; i < 4; ++i) {
            a[static_cast<std::size_t>(i)] = uniform(rng, -5, 5);
            b[static_cast<std::size_t>(i)] = uniform(rng, -5, 5);
            c[static_cast<std::size_t>(i)] = uniform(rng, -5, 5);
        }
        CHECK(pe_distance(a, c) <= pe_distance(a, b) + pe_distance(b, c) + 1e-12);
    }
}

TEST_CASE("check_monotonicity outcomes") {
    Rng rng(17);
    CtlpeParams p = CtlpeParams::init(8, rng);
    PeFunction linear = [&p](double t) {
        Tensor r = ctlpe({t}, p, true);
        return std::vector<double>(r.values().begin(), r.values().end());
    };

    std::vector<double> times(50);
    for (auto& t : times) t = uniform(rng, 0.0, 100.0);
    auto report = check_monotonicity(linear, times);
    CHECK(report.violations == 0);
    CHECK(report.comparable_triples > 0);

    PeFunction sine = [](double t) {
        Tensor r = irr_sinusoidal_pe({t}, 8, 1.0);
        return std::vector<double>(r.values().begin(), r.values().end());
    };
    std::vector<double> wide(40);
    for (auto& t : wide) t = uniform(rng, 0.0, 5000.0);
    CHECK(check_monotonicity(sine, wide).violations > 0);

    // degenerate constant embedding: every comparable triple violates
    PeFunction constant = [](double) { return std::vector<double>{1.0, 2.0}; };
    auto degenerate = check_monotonicity(constant, {0.0, 1.0, 3.0, 7.0});
    CHECK(degenerate.violations == degenerate.comparable_triples);

    CHECK_THROWS_AS(check_monotonicity(linear, {0.0, 1.0}), TooFewSamples);
}

TEST_CASE("check_translation_invariance outcomes") {
    Rng rng(23);
    CtlpeParams p = CtlpeParams::init(8, rng);
    PeFunction linear = [&p](double t) {
        Tensor r = ctlpe({t}, p, true);
        return std::vector<double>(r.values().begin(), r.values().end());
    };
    std::vector<double> base(20);
    for (auto& t : base) t = uniform(rng, -40.0, 40.0);
    CHECK(check_translation_invariance(linear, base, 7.3) < 1e-9);

    PeFunction sine = [](double t) {
        Tensor r = irr_sinusoidal_pe({t}, 8, 1.0);
        return std::vector<double>(r.values().begin(), r.values().end());
    };
    CHECK(check_translation_invariance(sine, base, 7.3) < 1e-9);

    Rng prng(29);
    SimplePeTable table = SimplePeTable::init(-100.0, 100.0, 1.0, 8, prng);
    PeFunction lookup = [&table](double t) {
        Tensor r = simple_pe({t}, table);
        return std::vector<double>(r.values().begin(), r.values().end());
    };
    CHECK(check_translation_invariance(lookup, base, 7.3) > 1e-3);

    CHECK_THROWS_AS(check_translation_invariance(linear, {}, 1.0), TooFewSamples);
    CHECK_THROWS_AS(check_translation_invariance(linear, base, 0.0), BadParams);
}

TEST_CASE("ctlpe time-rescaling keeps the distance ordering") {
    Rng rng(41);
    const std::int64_t d = 8;
    CtlpeParams p = CtlpeParams::init(d, rng);
    const double c = 3.7;
    CtlpeParams scaled;
    std::vector<double> sv(p.slope.values().begin(), p.slope.values().end());
    for (auto& s : sv) s /= c;
    scaled.slope = Tensor::parameter({d}, sv);
    scaled.bias = p.bias;

    std::vector<double> times(12);
    for (auto& t : times) t = uniform(rng, 0.0, 10.0);
    std::vector<double> scaled_times = times;
    for (auto& t : scaled_times) t *= c;

    Tensor r1 = ctlpe(times, p, true);
    Tensor r2 = ctlpe(scaled_times, scaled, true);

    // pairwise distance ordering is identical under (t*c, slope/c)
    std::vector<double> d1, d2;
    for (std::size_t i = 0; i < times.size(); ++i)
        for (std::size_t j = i + 1; j < times.size(); ++j) {
            d1.push_back(pe_distance(row_of(r1, static_cast<std::int64_t>(i)),
                                     row_of(r1, static_cast<std::int64_t>(j))));
            d2.push_back(pe_distance(row_of(r2, static_cast<std::int64_t>(i)),
                                     row_of(r2, static_cast<std::int64_t>(j))));
        }
    std::vector<std::size_t> o1(d1.size()), o2(d2.size());
    std::iota(o1.begin(), o1.end(), 0);
    std::iota(o2.begin(), o2.end(), 0);
    std::sort(o1.begin(), o1.end(), [&d1](std::size_t a, std::size_t b) { return d1[a] < d1[b]; });
    std::sort(o2.begin(), o2.end(), [&d2](std::size_t a, std::size_t b) { return d2[a] < d2[b]; });
    CHECK(o1 == o2);
}
