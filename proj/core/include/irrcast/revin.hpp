#ifndef IRRCAST_REVIN_HPP
#define IRRCAST_REVIN_HPP

#include <vector>

#include "irrcast/tensor.hpp"

namespace irrcast {

/// Per-window instance-normalization statistics plus the (shared, learnable)
/// affine transform. Statistics are computed over observed entries of the
/// lookback window only; sigma is regularized to at least kEps.
struct RevinStats {
    std::vector<double> mean;
    std::vector<double> stddev;
    Tensor gain; // optional; undefined => identity affine
    Tensor bias;

    static constexpr double kEps = 1e-5;
};

/// Fits mean/std per variable over the observed (non-null) entries of a raw
/// lookback window. Throws AllNullVariable when a variable has no
/// observation in the window.
RevinStats revin_fit(const std::vector<std::vector<double>>& window_values);

/// Standardizes raw rows with the given stats; nulls become 0 (the image of
/// the per-variable mean). Returns a constant tensor [rows, l].
Tensor revin_standardize(const RevinStats& stats,
                         const std::vector<std::vector<double>>& values);

/// Fit + standardize + learnable affine. stats_out receives the fitted
/// statistics for the later inverse; its gain/bias (when defined) are applied
/// differentiably.
Tensor revin_normalize(const std::vector<std::vector<double>>& window_values,
                       RevinStats& stats_out);

/// Exact inverse: undo the affine, then de-standardize with the stored
/// mean/std. Differentiable wrt predictions and the affine parameters.
Tensor revin_denormalize(const Tensor& predictions, const RevinStats& stats);

} // namespace irrcast

#endif // IRRCAST_REVIN_HPP
