#ifndef IRRCAST_GRADCHECK_HPP
#define IRRCAST_GRADCHECK_HPP

#include <functional>
#include <optional>

#include "irrcast/tensor.hpp"

namespace irrcast {

/// Scalar-valued function of one tensor, evaluated under a caller-provided
/// tape (the checker manages tapes itself; f must just run ops).
using ScalarFn = std::function<Tensor(const Tensor&)>;

/// Compares the analytic gradient of f at x against central finite
/// differences with the given step. Returns the max over checked coordinates
/// of |analytic - numeric| / (|analytic| + |numeric| + 1e-12).
///
/// When coords is given, only those flat coordinates are probed; this keeps
/// the check affordable on large parameter tensors.
double finite_difference_check(const ScalarFn& f, const Tensor& x, double step,
                               const std::vector<std::int64_t>* coords = nullptr);

/// Convenience: probes `n_coords` coordinates drawn without replacement.
double finite_difference_check_sampled(const ScalarFn& f, const Tensor& x, double step,
                                       std::int64_t n_coords, Rng& rng);

} // namespace irrcast

#endif // IRRCAST_GRADCHECK_HPP
