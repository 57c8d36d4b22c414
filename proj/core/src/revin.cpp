#include "irrcast/revin.hpp"

#include <cmath>

#include "irrcast/timeseries.hpp"

namespace irrcast {

RevinStats revin_fit(const std::vector<std::vector<double>>& window_values) {
    if (window_values.empty()) throw EmptyDataset("revin_fit: empty window");
    const std::size_t l = window_values.front().size();
    RevinStats stats;
    stats.mean.assign(l, 0.0);
    stats.stddev.assign(l, 0.0);
    for (std::size_t v = 0; v < l; ++v) {
        double sum = 0.0;
        std::size_t count = 0;
        for (const auto& row : window_values) {
            if (is_null(row[v])) continue;
            sum += row[v];
            ++count;
        }
        if (count == 0)
            throw AllNullVariable("variable " + std::to_string(v) + " has no observed entry");
        const double mu = sum / static_cast<double>(count);
        double var = 0.0;
        for (const auto& row : window_values) {
            if (is_null(row[v])) continue;
            const double d = row[v] - mu;
            var += d * d;
        }
        var /= static_cast<double>(count); // population variance
        stats.mean[v] = mu;
        stats.stddev[v] = std::max(std::sqrt(var), RevinStats::kEps);
    }
    return stats;
}

Tensor revin_standardize(const RevinStats& stats,
                         const std::vector<std::vector<double>>& values) {
    const auto rows = static_cast<std::int64_t>(values.size());
    const auto cols = static_cast<std::int64_t>(stats.mean.size());
    std::vector<double> out(static_cast<std::size_t>(rows * cols), 0.0);
    for (std::int64_t i = 0; i < rows; ++i) {
        if (static_cast<std::int64_t>(values[static_cast<std::size_t>(i)].size()) != cols)
            throw ShapeMismatch("revin_standardize: row width");
        for (std::int64_t v = 0; v < cols; ++v) {
            const double x = values[static_cast<std::size_t>(i)][static_cast<std::size_t>(v)];
            out[static_cast<std::size_t>(i * cols + v)] =
                is_null(x) ? 0.0
                           : (x - stats.mean[static_cast<std::size_t>(v)]) /
                                 stats.stddev[static_cast<std::size_t>(v)];
        }
    }
    return Tensor::from({rows, cols}, std::move(out));
}

Tensor revin_normalize(const std::vector<std::vector<double>>& window_values,
                       RevinStats& stats_out) {
    const RevinStats fitted = revin_fit(window_values);
    stats_out.mean = fitted.mean;
    stats_out.stddev = fitted.stddev;
    Tensor x = revin_standardize(stats_out, window_values);
    if (stats_out.gain.defined()) {
        x = add_rowvec(mul_rowvec(x, stats_out.gain), stats_out.bias);
    }
    return x;
}

Tensor revin_denormalize(const Tensor& predictions, const RevinStats& stats) {
    if (predictions.rank() != 2 ||
        predictions.dim(1) != static_cast<std::int64_t>(stats.mean.size()))
        throw ShapeMismatch("revin_denormalize: predictions " + shape_str(predictions.shape()) +
                            " vs " + std::to_string(stats.mean.size()) + " variables");
    Tensor x = predictions;
    if (stats.gain.defined()) {
        Tensor neg_bias = scale(stats.bias, -1.0);
        x = mul_rowvec(add_rowvec(x, neg_bias), recip(stats.gain));
    }
    const auto cols = static_cast<std::int64_t>(stats.mean.size());
    Tensor sigma = Tensor::from({cols}, stats.stddev);
    Tensor mu = Tensor::from({cols}, stats.mean);
    return add_rowvec(mul_rowvec(x, sigma), mu);
}

} // namespace irrcast
