#ifndef IRRCAST_POSITIONAL_HPP
#define IRRCAST_POSITIONAL_HPP

#include <functional>
#include <string>
#include <vector>

#include "irrcast/tensor.hpp"
#include "irrcast/timeseries.hpp"

namespace irrcast {

enum class PeMethod {
    Ctlpe,
    CtlpeNoBias,
    Sinusoidal,
    IrrSinusoidal,
    Uniform,
    TimeFeature,
    Simple,
    SimpleOverlap,
    Ncde,
};

PeMethod pe_method_from_string(const std::string& name);
std::string pe_method_to_string(PeMethod m);

struct PeMethodConfig {
    PeMethod method = PeMethod::Ctlpe;
    std::int64_t d_model = 32;
    double grid_resolution = 0.0; // simple: 0 => base sampling interval of the data
    std::int64_t max_len = 512;   // simple_overlap / sinusoidal order tables
    double time_scale = 0.0;      // irr_sinusoidal: 0 => 1/median observation gap
    std::string ncde_train_mode = "single_epoch"; // or "joint"
    int ncde_substeps = 4;
};

/// Per-embedding-dimension slope vector a and bias vector b of the linear
/// continuous-time embedding p(t) = a*t + b.
struct CtlpeParams {
    Tensor slope;
    Tensor bias;

    /// Slope components uniform in [-0.1, 0.1], bias zero.
    static CtlpeParams init(std::int64_t d_model, Rng& rng);
    std::vector<Tensor> parameters() const { return {slope, bias}; }
};

/// rows[j] = slope * times[j] (+ bias); differentiable wrt the parameters.
Tensor ctlpe(const std::vector<double>& times, const CtlpeParams& params, bool use_bias = true);

/// Classic transformer embedding indexed by integer order.
Tensor sinusoidal_pe(const std::vector<std::int64_t>& positions, std::int64_t d_model);

/// Sinusoidal formula with position replaced by times[j] * time_scale.
Tensor irr_sinusoidal_pe(const std::vector<double>& times, std::int64_t d_model,
                         double time_scale);

/// Learnable per-calendar-field tables summed with the fixed sinusoidal
/// order term (Informer-style temporal embedding).
struct UniformPeTables {
    Tensor month;   // 12 x d
    Tensor day;     // 31 x d
    Tensor weekday; // 7 x d
    Tensor hour;    // 24 x d
    Tensor minute;  // 60 x d

    static UniformPeTables init(std::int64_t d_model, Rng& rng);
    std::vector<Tensor> parameters() const { return {month, day, weekday, hour, minute}; }
};

Tensor uniform_pe(const std::vector<TimeFeatureVector>& features, const UniformPeTables& tables,
                  std::int64_t d_model);

/// Single affine map applied to the full time-feature vector of each row.
struct TimeFeaturePeParams {
    Tensor projection; // (m+1) x d
    Tensor bias;       // d

    static TimeFeaturePeParams init(std::int64_t d_model, Rng& rng);
    std::vector<Tensor> parameters() const { return {projection, bias}; }
};

Tensor time_feature_pe(const std::vector<TimeFeatureVector>& features,
                       const TimeFeaturePeParams& params);

/// Learnable table keyed by quantized observation time over a fixed span;
/// queries outside the covered span throw TimeOutOfTableRange.
struct SimplePeTable {
    Tensor table;      // rows x d
    double t_origin = 0.0;
    double resolution = 1.0;

    static SimplePeTable init(double t_origin, double t_end, double resolution,
                              std::int64_t d_model, Rng& rng);
    std::vector<Tensor> parameters() const { return {table}; }
    std::int64_t rows() const { return table.dim(0); }
};

Tensor simple_pe(const std::vector<double>& times, const SimplePeTable& table);

/// Order-only learnable table: row j for the j-th observation of a window,
/// regardless of its timestamp.
struct SimpleOverlapPeTable {
    Tensor table; // max_len x d

    static SimpleOverlapPeTable init(std::int64_t max_len, std::int64_t d_model, Rng& rng);
    std::vector<Tensor> parameters() const { return {table}; }
    std::int64_t max_len() const { return table.dim(0); }
};

Tensor simple_overlap_pe(std::size_t count, const SimpleOverlapPeTable& table);

// --- distance and property utilities ----------------------------------------------

double pe_distance(std::span<const double> p, std::span<const double> q);

/// Scalar-time view of a positional embedding, used by the property checks.
using PeFunction = std::function<std::vector<double>(double)>;

struct MonotonicityReport {
    std::size_t comparable_triples = 0;
    std::size_t violations = 0;
    /// Up to 16 witness triples (t1, t2, t3) with |t1-t2| > |t1-t3| but
    /// d(p1,p2) <= d(p1,p3) + 1e-9.
    std::vector<std::array<double, 3>> witnesses;
};

MonotonicityReport check_monotonicity(const PeFunction& pe,
                                      const std::vector<double>& sample_times);

/// max_t |d(p(t), p(t+lag)) - d(p(t0), p(t0+lag))| over the base times.
double check_translation_invariance(const PeFunction& pe, const std::vector<double>& base_times,
                                    double lag);

} // namespace irrcast

#endif // IRRCAST_POSITIONAL_HPP
