#ifndef IRRCAST_SPLINE_HPP
#define IRRCAST_SPLINE_HPP

#include <vector>

#include "irrcast/errors.hpp"

namespace irrcast {

/// Piecewise-cubic C2 interpolant with natural boundary conditions
/// (zero second derivative at both end knots), one polynomial set per
/// channel. Outside the knot span it extrapolates linearly with the
/// boundary derivative, so evaluation is total on the reals.
class SplinePath {
public:
    struct Cubic {
        double a, b, c, d; // value = a + b*dt + c*dt^2 + d*dt^3, dt = t - t_i
    };

    SplinePath(std::vector<double> knot_times,
               std::vector<std::vector<Cubic>> channel_coeffs);

    std::size_t channels() const { return coeffs_.size(); }
    std::size_t knot_count() const { return knot_times_.size(); }
    double t_begin() const { return knot_times_.front(); }
    double t_end() const { return knot_times_.back(); }
    const std::vector<double>& knot_times() const { return knot_times_; }
    /// coefficients()[channel][interval]
    const std::vector<std::vector<Cubic>>& coefficients() const { return coeffs_; }

    std::vector<double> eval(double t) const;
    std::vector<double> derivative(double t) const;
    void eval_into(double t, std::vector<double>& out) const;
    void derivative_into(double t, std::vector<double>& out) const;

private:
    std::size_t interval_of(double t) const;

    std::vector<double> knot_times_;
    std::vector<std::vector<Cubic>> coeffs_; // channels x (n-1)
};

/// Builds the natural cubic spline through (knot_times[i], knot_values[i])
/// with knot_values[i] a channel vector; standard tridiagonal solve for the
/// interior second derivatives. Two knots degenerate to the linear segment.
SplinePath natural_cubic_spline(const std::vector<double>& knot_times,
                                const std::vector<std::vector<double>>& knot_values);

} // namespace irrcast

#endif // IRRCAST_SPLINE_HPP
