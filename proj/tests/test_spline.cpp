#include <doctest.h>

#include <cmath>
#include <vector>

#include "irrcast/rng.hpp"
#include "irrcast/spline.hpp"

using namespace irrcast;

namespace {

// Independent oracle: dense Gaussian elimination for the second derivatives
// M (natural boundary rows pinned to zero), then Hermite-style evaluation
//   S(t) = M_i (t_{i+1}-t)^3/(6h) + M_{i+1}(t-t_i)^3/(6h)
//        + (y_i/h - M_i h/6)(t_{i+1}-t) + (y_{i+1}/h - M_{i+1} h/6)(t-t_i),
// a different code path from the production tridiagonal solve.
class DenseNaturalSpline {
public:
    DenseNaturalSpline(std::vector<double> t, std::vector<double> y)
        : t_(std::move(t)), y_(std::move(y)) {
        const std::size_t n = t_.size();
        std::vector<std::vector<double>> a(n, std::vector<double>(n + 1, 0.0));
        a[0][0] = 1.0;
        a[n - 1][n - 1] = 1.0;
        for (std::size_t i = 1; i + 1 < n; ++i) {
            const double h0 = t_[i] - t_[i - 1];
            const double h1 = t_[i + 1] - t_[i];
            a[i][i - 1] = h0;
            a[i][i] = 2.0 * (h0 + h1);
            a[i][i + 1] = h1;
            a[i][n] = 6.0 * ((y_[i + 1] - y_[i]) / h1 - (y_[i] - y_[i - 1]) / h0);
        }
        // naive partial-pivot elimination
        for (std::size_t col = 0; col < n; ++col) {
            std::size_t piv = col;
            for (std::size_t r = col + 1; r < n; ++r)
                if (std::abs(a[r][col]) > std::abs(a[piv][col])) piv = r;
            std::swap(a[col], a[piv]);
            for (std::size_t r = 0; r < n; ++r) {
                if (r == col || a[r][col] == 0.0) continue;
                const double f = a[r][col] / a[col][col];
                for (std::size_t c = col; c <= n; ++c) a[r][c] -= f * a[col][c];
            }
        }
        m_.resize(n);
        for (std::size_t i = 0; i < n; ++i) m_[i] = a[i][n] / a[i][i];
    }

    double eval(double t) const {
        std::size_t i = 0;
        while (i + 2 < t_.size() && t > t_[i + 1]) ++i;
        const double h = t_[i + 1] - t_[i];
        const double u = t_[i + 1] - t;
        const double v = t - t_[i];
        return m_[i] * u * u * u / (6.0 * h) + m_[i + 1] * v * v * v / (6.0 * h) +
               (y_[i] / h - m_[i] * h / 6.0) * u + (y_[i + 1] / h - m_[i + 1] * h / 6.0) * v;
    }

private:
    std::vector<double> t_, y_;
    std::vector<double> m_;
};

SplinePath spline_1d(const std::vector<double>& t, const std::vector<double>& y) {
    std::vector<std::vector<double>> vals;
    vals.reserve(y.size());
    for (double v : y) vals.push_back({v});
    return natural_cubic_spline(t, vals);
}

} // namespace

TEST_CASE("two knots give the exact linear segment") {
    SplinePath s = spline_1d({0.0, 2.0}, {1.0, 5.0});
    CHECK(s.eval(0.0)[0] == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(s.eval(1.0)[0] == doctest::Approx(3.0).epsilon(1e-15));
    CHECK(s.eval(2.0)[0] == doctest::Approx(5.0).epsilon(1e-15));
    CHECK(s.derivative(0.7)[0] == doctest::Approx(2.0).epsilon(1e-15));
}

TEST_CASE("knots on a line reproduce the line") {
    std::vector<double> t = {0.0, 0.7, 1.1, 2.9, 4.0};
    std::vector<double> y;
    for (double x : t) y.push_back(3.0 * x - 1.0);
    SplinePath s = spline_1d(t, y);
    for (std::size_t i = 0; i + 1 < t.size(); ++i) {
        const double mid = 0.5 * (t[i] + t[i + 1]);
        CHECK(std::abs(s.eval(mid)[0] - (3.0 * mid - 1.0)) < 1e-10);
    }
    // constant derivative everywhere, zero curvature at the ends
    CHECK(s.derivative(1.7)[0] == doctest::Approx(3.0).epsilon(1e-12));
}

TEST_CASE("hat-knot spline matches the independent dense oracle") {
    std::vector<double> t = {0.0, 1.0, 2.0};
    std::vector<double> y = {0.0, 1.0, 0.0};
    DenseNaturalSpline oracle(t, y);
    SplinePath s = spline_1d(t, y);

    const double at_half = oracle.eval(0.5);
    CHECK(at_half == doctest::Approx(0.6875).epsilon(1e-12)); // frozen from the oracle
    CHECK(s.eval(0.5)[0] == doctest::Approx(at_half).epsilon(1e-12));
    for (double q : {0.1, 0.25, 0.5, 0.9, 1.3, 1.75})
        CHECK(s.eval(q)[0] == doctest::Approx(oracle.eval(q)).epsilon(1e-11));
}

TEST_CASE("random knot sets match the dense oracle") {
    Rng rng(314);
    for (int trial = 0; trial < 25; ++trial) {
        const std::size_t n = 3 + static_cast<std::size_t>(trial % 8);
        std::vector<double> t(n), y(n);
        double acc = uniform(rng, -5, 5);
        for (std::size_t i = 0; i < n; ++i) {
            t[i] = acc;
            acc += uniform(rng, 0.2, 2.0);
            y[i] = uniform(rng, -10, 10);
        }
        DenseNaturalSpline oracle(t, y);
        SplinePath s = spline_1d(t, y);
        for (int q = 0; q < 12; ++q) {
            const double tt = uniform(rng, t.front(), t.back());
            CHECK(std::abs(s.eval(tt)[0] - oracle.eval(tt)) < 1e-9);
        }
    }
}

TEST_CASE("typed invariants hold over 100 random knot sets") {
    // interpolation exactness < 1e-10, interior C2 continuity < 1e-8 and
    // natural boundaries < 1e-8, all at coefficient level
    Rng rng(2718);
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t n = 2 + static_cast<std::size_t>(trial % 12);
        std::vector<double> t(n);
        std::vector<std::vector<double>> y(n, std::vector<double>(2));
        double acc = uniform(rng, -3, 3);
        for (std::size_t i = 0; i < n; ++i) {
            t[i] = acc;
            acc += uniform(rng, 0.1, 1.5);
            y[i][0] = uniform(rng, -5, 5);
            y[i][1] = uniform(rng, -5, 5);
        }
        SplinePath s = natural_cubic_spline(t, y);

        for (std::size_t i = 0; i < n; ++i) {
            auto v = s.eval(t[i]);
            CHECK(std::abs(v[0] - y[i][0]) < 1e-10);
            CHECK(std::abs(v[1] - y[i][1]) < 1e-10);
        }

        for (std::size_t ch = 0; ch < 2; ++ch) {
            const auto& cubics = s.coefficients()[ch];
            // S'' = 2c + 6 d dt; continuity at interior knots
            for (std::size_t i = 1; i + 1 < n; ++i) {
                const double h = t[i] - t[i - 1];
                const double left = 2.0 * cubics[i - 1].c + 6.0 * cubics[i - 1].d * h;
                const double right = 2.0 * cubics[i].c;
                CHECK(std::abs(left - right) < 1e-8);
            }
            // natural boundary: zero curvature at both end knots
            CHECK(std::abs(2.0 * cubics.front().c) < 1e-8);
            const double hl = t[n - 1] - t[n - 2];
            CHECK(std::abs(2.0 * cubics.back().c + 6.0 * cubics.back().d * hl) < 1e-8);
        }
    }
}

TEST_CASE("spline_eval edge behavior and derivative oracle") {
    std::vector<double> t = {0.0, 1.0, 3.0, 4.5};
    std::vector<double> y = {2.0, -1.0, 0.5, 3.0};
    SplinePath s = spline_1d(t, y);

    // knot times reproduce knot values
    for (std::size_t i = 0; i < t.size(); ++i)
        CHECK(std::abs(s.eval(t[i])[0] - y[i]) < 1e-10);

    // beyond the last knot: last value + boundary slope * dt
    const double slope_end = s.derivative(4.5)[0];
    CHECK(s.eval(5.5)[0] == doctest::Approx(3.0 + slope_end * 1.0).epsilon(1e-12));
    const double slope_begin = s.derivative(0.0)[0];
    CHECK(s.eval(-2.0)[0] == doctest::Approx(2.0 + slope_begin * -2.0).epsilon(1e-12));

    // analytic derivative matches central differences of eval
    Rng rng(55);
    for (int q = 0; q < 40; ++q) {
        const double tt = uniform(rng, 0.05, 4.45);
        const double h = 1e-6;
        const double numeric = (s.eval(tt + h)[0] - s.eval(tt - h)[0]) / (2.0 * h);
        CHECK(std::abs(s.derivative(tt)[0] - numeric) < 1e-6);
    }
}

TEST_CASE("spline error contracts") {
    CHECK_THROWS_AS(spline_1d({0.0}, {1.0}), TooFewKnots);
    CHECK_THROWS_AS(spline_1d({0.0, 0.0}, {1.0, 2.0}), NonMonotonicKnots);
    CHECK_THROWS_AS(spline_1d({1.0, 0.5}, {1.0, 2.0}), NonMonotonicKnots);
    CHECK_THROWS_AS(spline_1d({0.0, 1.0}, {1.0, std::nan("")}), NonFiniteInput);
}
