#include "irrcast/spline.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace irrcast {

SplinePath::SplinePath(std::vector<double> knot_times,
                       std::vector<std::vector<Cubic>> channel_coeffs)
    : knot_times_(std::move(knot_times)), coeffs_(std::move(channel_coeffs)) {}

std::size_t SplinePath::interval_of(double t) const {
    // clamped index of the interval whose [t_i, t_{i+1}) contains t
    const auto it = std::upper_bound(knot_times_.begin(), knot_times_.end(), t);
    auto idx = static_cast<std::size_t>(std::distance(knot_times_.begin(), it));
    if (idx == 0) return 0;
    if (idx >= knot_times_.size()) return knot_times_.size() - 2;
    return idx - 1;
}

void SplinePath::eval_into(double t, std::vector<double>& out) const {
    out.resize(channels());
    if (t < t_begin() || t > t_end()) {
        // linear extrapolation using the boundary value and derivative
        const double tb = t < t_begin() ? t_begin() : t_end();
        std::vector<double> d;
        derivative_into(tb, d);
        const std::size_t iv = t < t_begin() ? 0 : knot_times_.size() - 2;
        const double dt = tb - knot_times_[iv];
        for (std::size_t ch = 0; ch < channels(); ++ch) {
            const Cubic& c = coeffs_[ch][iv];
            const double vb = c.a + dt * (c.b + dt * (c.c + dt * c.d));
            out[ch] = vb + d[ch] * (t - tb);
        }
        return;
    }
    const std::size_t iv = interval_of(t);
    const double dt = t - knot_times_[iv];
    for (std::size_t ch = 0; ch < channels(); ++ch) {
        const Cubic& c = coeffs_[ch][iv];
        out[ch] = c.a + dt * (c.b + dt * (c.c + dt * c.d));
    }
}

void SplinePath::derivative_into(double t, std::vector<double>& out) const {
    out.resize(channels());
    const double tc = std::clamp(t, t_begin(), t_end());
    const std::size_t iv = interval_of(tc);
    const double dt = tc - knot_times_[iv];
    for (std::size_t ch = 0; ch < channels(); ++ch) {
        const Cubic& c = coeffs_[ch][iv];
        out[ch] = c.b + dt * (2.0 * c.c + dt * 3.0 * c.d);
    }
}

std::vector<double> SplinePath::eval(double t) const {
    std::vector<double> out;
    eval_into(t, out);
    return out;
}

std::vector<double> SplinePath::derivative(double t) const {
    std::vector<double> out;
    derivative_into(t, out);
    return out;
}

SplinePath natural_cubic_spline(const std::vector<double>& knot_times,
                                const std::vector<std::vector<double>>& knot_values) {
    const std::size_t n = knot_times.size();
    if (n < 2) throw TooFewKnots("natural_cubic_spline: need >= 2 knots, got " + std::to_string(n));
    if (knot_values.size() != n) throw ShapeMismatch("natural_cubic_spline: values/times length");
    for (std::size_t i = 1; i < n; ++i)
        if (!(knot_times[i] > knot_times[i - 1]))
            throw NonMonotonicKnots("at index " + std::to_string(i));
    const std::size_t channels = knot_values.front().size();
    for (const auto& v : knot_values) {
        if (v.size() != channels) throw ShapeMismatch("natural_cubic_spline: channel width");
        for (double x : v)
            if (!std::isfinite(x)) throw NonFiniteInput("natural_cubic_spline: knot value");
    }

    std::vector<double> h(n - 1);
    for (std::size_t i = 0; i + 1 < n; ++i) h[i] = knot_times[i + 1] - knot_times[i];

    std::vector<std::vector<SplinePath::Cubic>> coeffs(
        channels, std::vector<SplinePath::Cubic>(n - 1));

    // second-derivative (M) formulation; M_0 = M_{n-1} = 0 (natural boundary)
    std::vector<double> m(n, 0.0), cp(n, 0.0), dp(n, 0.0);
    for (std::size_t ch = 0; ch < channels; ++ch) {
        auto y = [&](std::size_t i) { return knot_values[i][ch]; };
        if (n == 2) {
            coeffs[ch][0] = {y(0), (y(1) - y(0)) / h[0], 0.0, 0.0};
            continue;
        }
        // Thomas algorithm over interior rows i = 1..n-2:
        //   h[i-1] M_{i-1} + 2(h[i-1]+h[i]) M_i + h[i] M_{i+1} = rhs_i
        std::fill(m.begin(), m.end(), 0.0);
        for (std::size_t i = 1; i + 1 < n; ++i) {
            const double rhs =
                6.0 * ((y(i + 1) - y(i)) / h[i] - (y(i) - y(i - 1)) / h[i - 1]);
            const double diag = 2.0 * (h[i - 1] + h[i]);
            const double lower = (i == 1) ? 0.0 : h[i - 1];
            const double denom = diag - lower * cp[i - 1];
            cp[i] = (i + 2 < n) ? h[i] / denom : 0.0;
            dp[i] = (rhs - lower * dp[i - 1]) / denom;
        }
        for (std::size_t i = n - 2; i >= 1; --i) {
            m[i] = dp[i] - cp[i] * m[i + 1];
            if (i == 1) break;
        }
        for (std::size_t i = 0; i + 1 < n; ++i) {
            const double bi =
                (y(i + 1) - y(i)) / h[i] - h[i] * (2.0 * m[i] + m[i + 1]) / 6.0;
            coeffs[ch][i] = {y(i), bi, m[i] / 2.0, (m[i + 1] - m[i]) / (6.0 * h[i])};
        }
    }

    return SplinePath(knot_times, std::move(coeffs));
}

} // namespace irrcast
