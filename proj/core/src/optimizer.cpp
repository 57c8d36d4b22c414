#include "irrcast/optimizer.hpp"

#include <cmath>

namespace irrcast {

Optimizer::Optimizer(OptimizerKind kind, double learning_rate, double beta1, double beta2,
                     double eps, double max_grad_norm)
    : kind_(kind), lr_(learning_rate), beta1_(beta1), beta2_(beta2), eps_(eps),
      max_grad_norm_(max_grad_norm) {
    if (lr_ <= 0.0) throw BadParams("optimizer: learning rate must be positive");
}

double clip_global_grad_norm(const std::vector<Tensor>& params, double max_norm) {
    double sq = 0.0;
    for (const auto& p : params) {
        const double n = p.grad_norm();
        sq += n * n;
    }
    const double norm = std::sqrt(sq);
    if (max_norm > 0.0 && norm > max_norm) {
        const double s = max_norm / norm;
        for (const auto& p : params) {
            auto* d = p.data_ptr();
            for (auto& g : d->grad) g *= s;
        }
    }
    return norm;
}

void Optimizer::step(const std::vector<Tensor>& params) {
    for (const auto& p : params)
        if (!p.has_grad_buffer())
            throw MissingGradient("optimizer_step: parameter of shape " + shape_str(p.shape()) +
                                  " has no gradient");

    clip_global_grad_norm(params, max_grad_norm_);
    ++step_count_;

    for (const auto& p : params) {
        auto* d = p.data_ptr();
        const std::size_t n = d->values.size();
        if (kind_ == OptimizerKind::SGD) {
            for (std::size_t i = 0; i < n; ++i) d->values[i] -= lr_ * d->grad[i];
        } else {
            auto& mom = moments_[d];
            if (mom.m.empty()) {
                mom.m.assign(n, 0.0);
                mom.v.assign(n, 0.0);
            }
            const double t = static_cast<double>(step_count_);
            const double bc1 = 1.0 - std::pow(beta1_, t);
            const double bc2 = 1.0 - std::pow(beta2_, t);
            for (std::size_t i = 0; i < n; ++i) {
                const double g = d->grad[i];
                mom.m[i] = beta1_ * mom.m[i] + (1.0 - beta1_) * g;
                mom.v[i] = beta2_ * mom.v[i] + (1.0 - beta2_) * g * g;
                const double mhat = mom.m[i] / bc1;
                const double vhat = mom.v[i] / bc2;
                d->values[i] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
            }
        }
        std::fill(d->grad.begin(), d->grad.end(), 0.0);
    }
}

} // namespace irrcast
