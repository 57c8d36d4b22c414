#ifndef IRRCAST_OPTIMIZER_HPP
#define IRRCAST_OPTIMIZER_HPP

#include <unordered_map>
#include <vector>

#include "irrcast/tensor.hpp"

namespace irrcast {

enum class OptimizerKind { SGD, Adam };

/// Parameter updater. Adam keeps first/second moment buffers per parameter,
/// created lazily on the first step; step() also clips the global gradient
/// norm and zeroes gradients after applying the update.
class Optimizer {
public:
    explicit Optimizer(OptimizerKind kind, double learning_rate = 1e-3,
                       double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8,
                       double max_grad_norm = 5.0);

    void step(const std::vector<Tensor>& params);

    std::int64_t step_count() const { return step_count_; }
    OptimizerKind kind() const { return kind_; }
    double learning_rate() const { return lr_; }
    void set_learning_rate(double lr) { lr_ = lr; }

private:
    struct Moments {
        std::vector<double> m;
        std::vector<double> v;
    };

    OptimizerKind kind_;
    double lr_;
    double beta1_;
    double beta2_;
    double eps_;
    double max_grad_norm_;
    std::int64_t step_count_ = 0;
    std::unordered_map<detail::TensorData*, Moments> moments_;
};

/// Scales all gradients by min(1, max_norm/global_norm). Returns the
/// pre-clip global norm.
double clip_global_grad_norm(const std::vector<Tensor>& params, double max_norm);

} // namespace irrcast

#endif // IRRCAST_OPTIMIZER_HPP
