#include "irrcast/positional.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace irrcast {

PeMethod pe_method_from_string(const std::string& name) {
    if (name == "ctlpe") return PeMethod::Ctlpe;
    if (name == "ctlpe_no_bias") return PeMethod::CtlpeNoBias;
    if (name == "sinusoidal") return PeMethod::Sinusoidal;
    if (name == "irr_sinusoidal") return PeMethod::IrrSinusoidal;
    if (name == "uniform") return PeMethod::Uniform;
    if (name == "time_feature") return PeMethod::TimeFeature;
    if (name == "simple") return PeMethod::Simple;
    if (name == "simple_overlap") return PeMethod::SimpleOverlap;
    if (name == "ncde") return PeMethod::Ncde;
    throw BadConfig("unknown pe method '" + name + "'");
}

std::string pe_method_to_string(PeMethod m) {
    switch (m) {
    case PeMethod::Ctlpe: return "ctlpe";
    case PeMethod::CtlpeNoBias: return "ctlpe_no_bias";
    case PeMethod::Sinusoidal: return "sinusoidal";
    case PeMethod::IrrSinusoidal: return "irr_sinusoidal";
    case PeMethod::Uniform: return "uniform";
    case PeMethod::TimeFeature: return "time_feature";
    case PeMethod::Simple: return "simple";
    case PeMethod::SimpleOverlap: return "simple_overlap";
    case PeMethod::Ncde: return "ncde";
    }
    throw BadConfig("unknown pe method enum");
}

// --- CTLPE ------------------------------------------------------------------------

CtlpeParams CtlpeParams::init(std::int64_t d_model, Rng& rng) {
    CtlpeParams p;
    std::vector<double> s(static_cast<std::size_t>(d_model));
    for (auto& v : s) v = uniform(rng, -0.1, 0.1);
    p.slope = Tensor::parameter({d_model}, std::move(s));
    p.bias = Tensor::parameter({d_model},
                               std::vector<double>(static_cast<std::size_t>(d_model), 0.0));
    return p;
}

Tensor ctlpe(const std::vector<double>& times, const CtlpeParams& params, bool use_bias) {
    for (double t : times)
        if (!std::isfinite(t)) throw NonFiniteInput("ctlpe: non-finite time");
    const auto n = static_cast<std::int64_t>(times.size());
    const auto d = params.slope.numel();
    Tensor t_col = Tensor::from({n, 1}, times);
    Tensor rows = matmul(t_col, reshape(params.slope, {1, d}));
    if (use_bias) rows = add_rowvec(rows, params.bias);
    return rows;
}

// --- sinusoidal family ---------------------------------------------------------------

namespace {

void sinusoidal_row(double pos, std::int64_t d_model, double* out) {
    for (std::int64_t i = 0; i < d_model; i += 2) {
        const double freq = std::pow(10000.0, -static_cast<double>(i) / static_cast<double>(d_model));
        out[i] = std::sin(pos * freq);
        out[i + 1] = std::cos(pos * freq);
    }
}

} // namespace

Tensor sinusoidal_pe(const std::vector<std::int64_t>& positions, std::int64_t d_model) {
    if (d_model % 2 != 0) throw OddDimension("sinusoidal_pe: d_model " + std::to_string(d_model));
    for (auto p : positions)
        if (p < 0) throw BadParams("sinusoidal_pe: negative position");
    const auto n = static_cast<std::int64_t>(positions.size());
    std::vector<double> out(static_cast<std::size_t>(n * d_model));
    for (std::int64_t j = 0; j < n; ++j)
        sinusoidal_row(static_cast<double>(positions[static_cast<std::size_t>(j)]), d_model,
                       out.data() + j * d_model);
    return Tensor::from({n, d_model}, std::move(out));
}

Tensor irr_sinusoidal_pe(const std::vector<double>& times, std::int64_t d_model,
                         double time_scale) {
    if (d_model % 2 != 0)
        throw OddDimension("irr_sinusoidal_pe: d_model " + std::to_string(d_model));
    const auto n = static_cast<std::int64_t>(times.size());
    std::vector<double> out(static_cast<std::size_t>(n * d_model));
    for (std::int64_t j = 0; j < n; ++j)
        sinusoidal_row(times[static_cast<std::size_t>(j)] * time_scale, d_model,
                       out.data() + j * d_model);
    return Tensor::from({n, d_model}, std::move(out));
}

// --- uniform (Informer temporal) -------------------------------------------------------

UniformPeTables UniformPeTables::init(std::int64_t d_model, Rng& rng) {
    auto make = [&](std::int64_t rows) {
        std::vector<double> v(static_cast<std::size_t>(rows * d_model));
        for (auto& x : v) x = gaussian(rng, 0.0, 0.02);
        return Tensor::parameter({rows, d_model}, std::move(v));
    };
    UniformPeTables t;
    t.month = make(12);
    t.day = make(31);
    t.weekday = make(7);
    t.hour = make(24);
    t.minute = make(60);
    return t;
}

namespace {

std::int64_t field_index(double scaled, std::int64_t cardinality, const char* field) {
    const double raw = (scaled + 0.5) * static_cast<double>(cardinality - 1);
    const auto idx = static_cast<std::int64_t>(std::llround(raw));
    if (idx < 0 || idx >= cardinality || std::abs(raw - static_cast<double>(idx)) > 1e-6)
        throw FieldOutOfRange(std::string(field) + " value " + std::to_string(scaled));
    return idx;
}

} // namespace

Tensor uniform_pe(const std::vector<TimeFeatureVector>& features, const UniformPeTables& tables,
                  std::int64_t d_model) {
    const auto n = features.size();
    std::vector<std::int64_t> months, days, weekdays, hours, minutes, orders;
    months.reserve(n);
    for (std::size_t j = 0; j < n; ++j) {
        const auto& f = features[j];
        months.push_back(field_index(f.month, 12, "month"));
        days.push_back(field_index(f.day, 31, "day"));
        weekdays.push_back(field_index(f.weekday, 7, "weekday"));
        hours.push_back(field_index(f.hour, 24, "hour"));
        minutes.push_back(field_index(f.minute, 60, "minute"));
        orders.push_back(static_cast<std::int64_t>(j));
    }
    Tensor rows = gather_rows(tables.month, months);
    rows = add(rows, gather_rows(tables.day, days));
    rows = add(rows, gather_rows(tables.weekday, weekdays));
    rows = add(rows, gather_rows(tables.hour, hours));
    rows = add(rows, gather_rows(tables.minute, minutes));
    rows = add(rows, sinusoidal_pe(orders, d_model));
    return rows;
}

// --- time-feature affine ---------------------------------------------------------------

TimeFeaturePeParams TimeFeaturePeParams::init(std::int64_t d_model, Rng& rng) {
    TimeFeaturePeParams p;
    p.projection = Tensor::xavier(static_cast<std::int64_t>(TimeFeatureVector::kDim), d_model, rng);
    p.bias = Tensor::parameter({d_model},
                               std::vector<double>(static_cast<std::size_t>(d_model), 0.0));
    return p;
}

Tensor time_feature_pe(const std::vector<TimeFeatureVector>& features,
                       const TimeFeaturePeParams& params) {
    if (!params.projection.defined()) throw BadParams("time_feature_pe: uninitialized projection");
    const auto n = static_cast<std::int64_t>(features.size());
    const auto m = static_cast<std::int64_t>(TimeFeatureVector::kDim);
    std::vector<double> x(static_cast<std::size_t>(n * m));
    for (std::int64_t j = 0; j < n; ++j) {
        const auto arr = features[static_cast<std::size_t>(j)].as_array();
        std::copy(arr.begin(), arr.end(), x.begin() + j * m);
    }
    return add_rowvec(matmul(Tensor::from({n, m}, std::move(x)), params.projection), params.bias);
}

// --- simple / simple-overlap -------------------------------------------------------------

SimplePeTable SimplePeTable::init(double t_origin, double t_end, double resolution,
                                  std::int64_t d_model, Rng& rng) {
    if (resolution <= 0.0) throw BadParams("simple_pe: resolution must be > 0");
    if (t_end < t_origin) throw BadParams("simple_pe: span end before start");
    SimplePeTable t;
    t.t_origin = t_origin;
    t.resolution = resolution;
    const auto rows =
        static_cast<std::int64_t>(std::floor((t_end - t_origin) / resolution + 1e-9)) + 1;
    std::vector<double> v(static_cast<std::size_t>(rows * d_model));
    for (auto& x : v) x = gaussian(rng, 0.0, 0.02);
    t.table = Tensor::parameter({rows, d_model}, std::move(v));
    return t;
}

Tensor simple_pe(const std::vector<double>& times, const SimplePeTable& table) {
    std::vector<std::int64_t> rows;
    rows.reserve(times.size());
    for (double t : times) {
        const auto idx =
            static_cast<std::int64_t>(std::llround((t - table.t_origin) / table.resolution));
        if (idx < 0 || idx >= table.rows())
            throw TimeOutOfTableRange("time " + std::to_string(t) + " outside table span");
        rows.push_back(idx);
    }
    return gather_rows(table.table, rows);
}

SimpleOverlapPeTable SimpleOverlapPeTable::init(std::int64_t max_len, std::int64_t d_model,
                                                Rng& rng) {
    if (max_len < 1) throw BadParams("simple_overlap_pe: max_len must be >= 1");
    SimpleOverlapPeTable t;
    std::vector<double> v(static_cast<std::size_t>(max_len * d_model));
    for (auto& x : v) x = gaussian(rng, 0.0, 0.02);
    t.table = Tensor::parameter({max_len, d_model}, std::move(v));
    return t;
}

Tensor simple_overlap_pe(std::size_t count, const SimpleOverlapPeTable& table) {
    if (static_cast<std::int64_t>(count) > table.max_len())
        throw WindowTooLong("window of " + std::to_string(count) + " exceeds max_len " +
                            std::to_string(table.max_len()));
    std::vector<std::int64_t> rows(count);
    std::iota(rows.begin(), rows.end(), 0);
    return gather_rows(table.table, rows);
}

// --- distance and property checks -----------------------------------------------------------

double pe_distance(std::span<const double> p, std::span<const double> q) {
    if (p.size() != q.size())
        throw ShapeMismatch("pe_distance: " + std::to_string(p.size()) + " vs " +
                            std::to_string(q.size()));
    double s = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        const double d = p[i] - q[i];
        s += d * d;
    }
    return std::sqrt(s);
}

MonotonicityReport check_monotonicity(const PeFunction& pe,
                                      const std::vector<double>& sample_times) {
    if (sample_times.size() < 3) throw TooFewSamples("check_monotonicity: need >= 3 times");
    const std::size_t n = sample_times.size();

    std::vector<std::vector<double>> rows(n);
    for (std::size_t i = 0; i < n; ++i) rows[i] = pe(sample_times[i]);

    std::vector<double> dist(n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) {
            const double d = pe_distance(rows[i], rows[j]);
            dist[i * n + j] = d;
            dist[j * n + i] = d;
        }

    constexpr double kTol = 1e-9;
    MonotonicityReport report;
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            if (j == i) continue;
            const double gap_ij = std::abs(sample_times[i] - sample_times[j]);
            for (std::size_t k = 0; k < n; ++k) {
                if (k == i || k == j) continue;
                const double gap_ik = std::abs(sample_times[i] - sample_times[k]);
                if (gap_ij > gap_ik) {
                    ++report.comparable_triples;
                    if (dist[i * n + j] <= dist[i * n + k] + kTol) {
                        ++report.violations;
                        if (report.witnesses.size() < 16)
                            report.witnesses.push_back(
                                {sample_times[i], sample_times[j], sample_times[k]});
                    }
                }
            }
        }
    }
    return report;
}

double check_translation_invariance(const PeFunction& pe, const std::vector<double>& base_times,
                                    double lag) {
    if (base_times.empty()) throw TooFewSamples("check_translation_invariance: no base times");
    if (lag == 0.0) throw BadParams("check_translation_invariance: lag must be nonzero");

    const double ref = pe_distance(pe(base_times.front()), pe(base_times.front() + lag));
    double max_dev = 0.0;
    for (double t : base_times) {
        const double d = pe_distance(pe(t), pe(t + lag));
        max_dev = std::max(max_dev, std::abs(d - ref));
    }
    return max_dev;
}

} // namespace irrcast
