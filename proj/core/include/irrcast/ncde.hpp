#ifndef IRRCAST_NCDE_HPP
#define IRRCAST_NCDE_HPP

#include <functional>
#include <string>
#include <vector>

#include "irrcast/spline.hpp"
#include "irrcast/tensor.hpp"
#include "irrcast/timeseries.hpp"

namespace irrcast {

/// Vector field of the controlled equation: maps a hidden state [1,w] to the
/// matrix [w, channels] that multiplies the control derivative.
using CdeField = std::function<Tensor(const Tensor&)>;

struct NcdeConfig {
    std::int64_t hidden_width = 32;                    // w (= d_model when used as PE)
    std::int64_t channels = TimeFeatureVector::kDim;   // control path dimension m+1
    std::int64_t field_hidden = 64;
    int substeps = 4;                                  // RK4 steps per inter-query interval
};

/// Parameters of the CDE-based embedding: a two-layer tanh MLP for the
/// vector field (output tanh-bounded) and an affine initial-state map from
/// the first observation's time features.
struct NcdeParams {
    NcdeConfig config;
    Tensor field_w1, field_b1; // w -> hidden
    Tensor field_w2, field_b2; // hidden -> w*channels
    Tensor init_w, init_b;     // channels -> w

    static NcdeParams init(const NcdeConfig& config, Rng& rng);

    std::vector<Tensor> parameters() const;
    /// f(p): [1,w] -> [w, channels]
    Tensor field(const Tensor& state) const;
    /// zeta(d0): channel vector -> [1,w]
    Tensor initial_state(const std::vector<double>& features0) const;
    void set_requires_grad(bool on);
};

/// Integrates dp/ds = field(p) * D'(s) with fixed-step RK4, `substeps` steps
/// per inter-query interval, differentiable through every step. Returns the
/// hidden state [1,w] at each query time; the first query time carries p0.
/// Throws NonFiniteState when a hidden component leaves [-1e6, 1e6] or goes
/// non-finite.
std::vector<Tensor> cde_solve(const CdeField& field, const SplinePath& path, const Tensor& p0,
                              const std::vector<double>& query_times, int substeps);

/// Full NCDE positional embedding for one window: spline over the window's
/// time features, initial state from the first feature vector, hidden states
/// at every observation stacked into an [n, w] matrix.
Tensor ncde_pe_forward(const NcdeParams& params, const std::vector<double>& times,
                       const std::vector<TimeFeatureVector>& features);

/// Precomputed embedding table over a uniform time grid; lookups are O(1)
/// with linear interpolation between neighbors and clamping outside the span.
struct PETable {
    double t_start = 0.0;
    double t_end = 0.0;
    double resolution = 0.0;
    std::vector<double> grid_times;
    std::vector<std::vector<double>> grid_values;

    std::int64_t width() const {
        return grid_values.empty() ? 0 : static_cast<std::int64_t>(grid_values.front().size());
    }
    std::vector<double> lookup(double t) const;

    void save(const std::string& path) const;
    static PETable load(const std::string& path);
};

/// One long integration pass over [t_start, t_end] sampled at `resolution`,
/// using feature vectors supplied per grid time. Zero-length spans produce a
/// single-entry table.
PETable pe_table_build(const NcdeParams& params, double t_start, double t_end, double resolution,
                       const std::function<TimeFeatureVector(double)>& features_at);

} // namespace irrcast

#endif // IRRCAST_NCDE_HPP
