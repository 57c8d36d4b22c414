#include "irrcast/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace irrcast {

double finite_difference_check(const ScalarFn& f, const Tensor& x, double step,
                               const std::vector<std::int64_t>* coords) {
    if (step <= 0.0) throw BadParams("finite_difference_check: step must be > 0");
    if (!std::all_of(x.values().begin(), x.values().end(),
                     [](double v) { return std::isfinite(v); }))
        throw NonFiniteInput("finite_difference_check: x not finite");

    std::vector<double> base(x.values().begin(), x.values().end());

    // analytic gradient on a fresh tape
    Tensor p = Tensor::parameter(x.shape(), base);
    std::vector<double> analytic;
    {
        Tape tape;
        TapeScope scope(tape);
        Tensor loss = f(p);
        if (loss.numel() != 1) throw NotScalar("finite_difference_check: f must be scalar");
        tape.backward(loss);
        analytic = p.grad();
    }

    auto eval_at = [&](const std::vector<double>& v) {
        Tensor c = Tensor::from(x.shape(), v);
        Tensor out = f(c);
        return out.item();
    };

    std::vector<std::int64_t> all;
    if (!coords) {
        all.resize(static_cast<std::size_t>(x.numel()));
        std::iota(all.begin(), all.end(), 0);
        coords = &all;
    }

    double max_rel = 0.0;
    for (auto ci : *coords) {
        auto i = static_cast<std::size_t>(ci);
        std::vector<double> plus = base, minus = base;
        plus[i] += step;
        minus[i] -= step;
        const double numeric = (eval_at(plus) - eval_at(minus)) / (2.0 * step);
        if (!std::isfinite(numeric))
            throw NonFiniteInput("finite_difference_check: non-finite numeric derivative");
        const double rel = std::abs(analytic[i] - numeric) /
                           (std::abs(analytic[i]) + std::abs(numeric) + 1e-12);
        max_rel = std::max(max_rel, rel);
    }
    return max_rel;
}

double finite_difference_check_sampled(const ScalarFn& f, const Tensor& x, double step,
                                       std::int64_t n_coords, Rng& rng) {
    std::vector<std::int64_t> all(static_cast<std::size_t>(x.numel()));
    std::iota(all.begin(), all.end(), 0);
    if (n_coords < x.numel()) {
        // partial Fisher-Yates keeps coordinate choice deterministic per rng
        for (std::int64_t i = 0; i < n_coords; ++i) {
            std::uniform_int_distribution<std::int64_t> pick(i, x.numel() - 1);
            std::swap(all[static_cast<std::size_t>(i)], all[static_cast<std::size_t>(pick(rng))]);
        }
        all.resize(static_cast<std::size_t>(n_coords));
    }
    return finite_difference_check(f, x, step, &all);
}

} // namespace irrcast
