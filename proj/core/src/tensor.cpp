#include "irrcast/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace irrcast {

namespace {

thread_local Tape* t_active = nullptr;

using detail::TensorData;

bool all_finite(std::span<const double> v) {
    return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape())
        throw ShapeMismatch(std::string(op) + ": " + shape_str(a.shape()) +
                            " vs " + shape_str(b.shape()));
}

} // namespace

std::int64_t shape_numel(const Shape& shape) {
    std::int64_t n = 1;
    for (auto d : shape) n *= d;
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ",";
        os << shape[i];
    }
    os << "]";
    return os.str();
}

// --- Tensor -----------------------------------------------------------------

Tensor make_op_output(Shape shape, std::vector<double> values,
                      const std::vector<Tensor>& inputs) {
    auto d = std::make_shared<TensorData>();
    d->shape = std::move(shape);
    d->values = std::move(values);
    Tape* tape = t_active;
    if (tape) {
        for (const auto& in : inputs) {
            if (in.defined() && in.requires_grad()) {
                d->requires_grad = true;
                d->tape = tape;
                break;
            }
        }
    }
    return Tensor(std::move(d));
}

Tensor Tensor::from(Shape shape, std::vector<double> values) {
    if (shape.empty()) throw ShapeMismatch("tensor_from: empty shape");
    for (auto d : shape)
        if (d <= 0) throw ShapeMismatch("tensor_from: nonpositive dim in " + shape_str(shape));
    if (shape_numel(shape) != static_cast<std::int64_t>(values.size()))
        throw ShapeMismatch("tensor_from: shape " + shape_str(shape) + " wants " +
                            std::to_string(shape_numel(shape)) + " values, got " +
                            std::to_string(values.size()));
    auto d = std::make_shared<TensorData>();
    d->shape = std::move(shape);
    d->values = std::move(values);
    return Tensor(std::move(d));
}

Tensor Tensor::zeros(Shape shape) {
    return full(std::move(shape), 0.0);
}

Tensor Tensor::full(Shape shape, double value) {
    auto n = shape_numel(shape);
    return from(std::move(shape), std::vector<double>(static_cast<std::size_t>(n), value));
}

Tensor Tensor::scalar(double value) {
    return from({1}, {value});
}

Tensor Tensor::parameter(Shape shape, std::vector<double> values) {
    Tensor t = from(std::move(shape), std::move(values));
    t.d_->requires_grad = true;
    t.d_->ensure_grad();
    return t;
}

Tensor Tensor::xavier(std::int64_t fan_in, std::int64_t fan_out, Rng& rng) {
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    std::vector<double> w(static_cast<std::size_t>(fan_in * fan_out));
    for (auto& x : w) x = uniform(rng, -limit, limit);
    return parameter({fan_in, fan_out}, std::move(w));
}

std::vector<double> Tensor::grad() const {
    if (d_->grad.empty()) return std::vector<double>(d_->values.size(), 0.0);
    return d_->grad;
}

double Tensor::item() const {
    if (numel() != 1) throw NotScalar("item() on tensor of shape " + shape_str(shape()));
    return d_->values[0];
}

double Tensor::at(std::int64_t r, std::int64_t c) const {
    return d_->values[static_cast<std::size_t>(r * dim(rank() - 1) + c)];
}

void Tensor::apply_update(std::span<const double> delta) {
    if (delta.size() != d_->values.size())
        throw ShapeMismatch("apply_update: size mismatch");
    for (std::size_t i = 0; i < delta.size(); ++i) d_->values[i] += delta[i];
}

void Tensor::set_values(std::span<const double> vals) {
    if (vals.size() != d_->values.size())
        throw ShapeMismatch("set_values: size mismatch");
    std::copy(vals.begin(), vals.end(), d_->values.begin());
}

void Tensor::zero_grad() {
    if (!d_->grad.empty()) std::fill(d_->grad.begin(), d_->grad.end(), 0.0);
}

double Tensor::grad_norm() const {
    double s = 0.0;
    for (double g : d_->grad) s += g * g;
    return std::sqrt(s);
}

// --- Tape -------------------------------------------------------------------

void Tape::record(const char* kind, std::function<void()> apply) {
    nodes_.push_back(Node{kind, std::move(apply)});
}

void Tape::backward(const Tensor& loss) {
    if (loss.numel() != 1)
        throw NotScalar("backward: loss has shape " + shape_str(loss.shape()));
    if (loss.data_ptr()->tape != this)
        throw DetachedTensor("backward: loss was not produced on this tape");
    if (consumed_)
        throw TapeConsumed("backward: tape already consumed; re-run forward first");
    consumed_ = true;
    loss.data_ptr()->ensure_grad();
    loss.data_ptr()->grad[0] = 1.0;
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) it->apply();
}

TapeScope::TapeScope(Tape& tape) : previous_(t_active) {
    t_active = &tape;
}

TapeScope::~TapeScope() {
    t_active = previous_;
}

Tape* active_tape() {
    return t_active;
}

void backward(const Tensor& loss) {
    Tape* tape = loss.data_ptr()->tape;
    if (!tape) throw DetachedTensor("backward: loss is not attached to a tape");
    tape->backward(loss);
}

// --- op helpers ---------------------------------------------------------------

namespace {

// Backward lambdas capture shared ownership of participating TensorData so a
// tape outliving the forward pass's local Tensor objects stays valid.
std::shared_ptr<TensorData> share(const Tensor& t) {
    return t.storage();
}

} // namespace

// --- elementwise family -------------------------------------------------------

namespace {

template <typename FwdOp>
Tensor binary_same_shape(const Tensor& a, const Tensor& b, const char* kind, FwdOp op,
                         void (*backprop)(TensorData*, TensorData*, TensorData*)) {
    check_same_shape(a, b, kind);
    std::vector<double> out(a.values().size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = op(a.values()[i], b.values()[i]);
    Tensor r = make_op_output(a.shape(), std::move(out), {a, b});
    if (r.requires_grad()) {
        auto pa = a.data_ptr(), pb = b.data_ptr(), pr = r.data_ptr();
        // keep storage alive through the tape
        auto ka = share(a); auto kb = share(b); auto kr = share(r);
        active_tape()->record(kind, [pa, pb, pr, backprop, ka, kb, kr]() {
            if (pr->grad.empty()) return;
            backprop(pa, pb, pr);
        });
    }
    return r;
}

} // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    return binary_same_shape(
        a, b, "add", [](double x, double y) { return x + y; },
        [](TensorData* pa, TensorData* pb, TensorData* pr) {
            if (pa->requires_grad) {
                pa->ensure_grad();
                for (std::size_t i = 0; i < pr->grad.size(); ++i) pa->grad[i] += pr->grad[i];
            }
            if (pb->requires_grad) {
                pb->ensure_grad();
                for (std::size_t i = 0; i < pr->grad.size(); ++i) pb->grad[i] += pr->grad[i];
            }
        });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    return binary_same_shape(
        a, b, "sub", [](double x, double y) { return x - y; },
        [](TensorData* pa, TensorData* pb, TensorData* pr) {
            if (pa->requires_grad) {
                pa->ensure_grad();
                for (std::size_t i = 0; i < pr->grad.size(); ++i) pa->grad[i] += pr->grad[i];
            }
            if (pb->requires_grad) {
                pb->ensure_grad();
                for (std::size_t i = 0; i < pr->grad.size(); ++i) pb->grad[i] -= pr->grad[i];
            }
        });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    return binary_same_shape(
        a, b, "mul", [](double x, double y) { return x * y; },
        [](TensorData* pa, TensorData* pb, TensorData* pr) {
            if (pa->requires_grad) {
                pa->ensure_grad();
                for (std::size_t i = 0; i < pr->grad.size(); ++i)
                    pa->grad[i] += pr->grad[i] * pb->values[i];
            }
            if (pb->requires_grad) {
                pb->ensure_grad();
                for (std::size_t i = 0; i < pr->grad.size(); ++i)
                    pb->grad[i] += pr->grad[i] * pa->values[i];
            }
        });
}

namespace {

template <typename Fwd, typename Bwd>
Tensor unary_op(const Tensor& a, const char* kind, Fwd fwd, Bwd bwd) {
    std::vector<double> out(a.values().size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(a.values()[i]);
    Tensor r = make_op_output(a.shape(), std::move(out), {a});
    if (r.requires_grad()) {
        auto pa = a.data_ptr();
        auto pr = r.data_ptr();
        auto ka = share(a); auto kr = share(r);
        active_tape()->record(kind, [pa, pr, bwd, ka, kr]() {
            if (pr->grad.empty()) return;
            pa->ensure_grad();
            for (std::size_t i = 0; i < pr->grad.size(); ++i)
                pa->grad[i] += pr->grad[i] * bwd(pa->values[i], pr->values[i]);
        });
    }
    return r;
}

} // namespace

Tensor add(const Tensor& a, double b) {
    return unary_op(
        a, "add_scalar", [b](double x) { return x + b; },
        [](double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, double b) {
    return add(a, -b);
}

Tensor scale(const Tensor& a, double s) {
    return unary_op(
        a, "scale", [s](double x) { return x * s; },
        [s](double, double) { return s; });
}

Tensor tanh(const Tensor& a) {
    return unary_op(
        a, "tanh", [](double x) { return std::tanh(x); },
        [](double, double y) { return 1.0 - y * y; });
}

Tensor relu(const Tensor& a) {
    return unary_op(
        a, "relu", [](double x) { return x > 0.0 ? x : 0.0; },
        [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor exp(const Tensor& a) {
    return unary_op(
        a, "exp", [](double x) { return std::exp(x); },
        [](double, double y) { return y; });
}

Tensor recip(const Tensor& a) {
    return unary_op(
        a, "recip", [](double x) { return 1.0 / x; },
        [](double, double y) { return -y * y; });
}

// --- softmax ------------------------------------------------------------------

Tensor softmax(const Tensor& x, int axis) {
    const auto rank = x.rank();
    if (axis < 0) axis += static_cast<int>(rank);
    if (axis < 0 || axis >= rank)
        throw ShapeMismatch("softmax: axis " + std::to_string(axis) + " out of rank " +
                            std::to_string(rank));
    if (!all_finite(x.values())) throw NonFiniteInput("softmax: non-finite input");

    const auto& shape = x.shape();
    std::int64_t axis_len = shape[static_cast<std::size_t>(axis)];
    std::int64_t inner = 1;
    for (auto i = axis + 1; i < rank; ++i) inner *= shape[static_cast<std::size_t>(i)];
    std::int64_t outer = x.numel() / (axis_len * inner);

    std::vector<double> out(x.values().size());
    auto xv = x.values();
    for (std::int64_t o = 0; o < outer; ++o) {
        for (std::int64_t in = 0; in < inner; ++in) {
            const std::int64_t base = o * axis_len * inner + in;
            double mx = -std::numeric_limits<double>::infinity();
            for (std::int64_t k = 0; k < axis_len; ++k)
                mx = std::max(mx, xv[static_cast<std::size_t>(base + k * inner)]);
            double z = 0.0;
            for (std::int64_t k = 0; k < axis_len; ++k) {
                auto idx = static_cast<std::size_t>(base + k * inner);
                out[idx] = std::exp(xv[idx] - mx);
                z += out[idx];
            }
            for (std::int64_t k = 0; k < axis_len; ++k)
                out[static_cast<std::size_t>(base + k * inner)] /= z;
        }
    }

    Tensor r = make_op_output(shape, std::move(out), {x});
    if (r.requires_grad()) {
        auto px = x.data_ptr();
        auto pr = r.data_ptr();
        auto kx = share(x); auto kr = share(r);
        active_tape()->record("softmax", [px, pr, outer, axis_len, inner, kx, kr]() {
            if (pr->grad.empty()) return;
            px->ensure_grad();
            // dx = (dy - sum_k dy_k y_k) * y per slice
            for (std::int64_t o = 0; o < outer; ++o) {
                for (std::int64_t in = 0; in < inner; ++in) {
                    const std::int64_t base = o * axis_len * inner + in;
                    double dot = 0.0;
                    for (std::int64_t k = 0; k < axis_len; ++k) {
                        auto idx = static_cast<std::size_t>(base + k * inner);
                        dot += pr->grad[idx] * pr->values[idx];
                    }
                    for (std::int64_t k = 0; k < axis_len; ++k) {
                        auto idx = static_cast<std::size_t>(base + k * inner);
                        px->grad[idx] += (pr->grad[idx] - dot) * pr->values[idx];
                    }
                }
            }
        });
    }
    return r;
}

// --- layer norm -----------------------------------------------------------------

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
    const std::int64_t d = x.dim(x.rank() - 1);
    if (gain.numel() != d || bias.numel() != d)
        throw ShapeMismatch("layer_norm: gain/bias must match last dim " + std::to_string(d));
    const std::int64_t rows = x.numel() / d;

    std::vector<double> out(x.values().size());
    std::vector<double> xhat(x.values().size());
    std::vector<double> inv_sigma(static_cast<std::size_t>(rows));
    auto xv = x.values();
    auto gv = gain.values();
    auto bv = bias.values();
    for (std::int64_t r = 0; r < rows; ++r) {
        const auto base = static_cast<std::size_t>(r * d);
        double mu = 0.0;
        for (std::int64_t c = 0; c < d; ++c) mu += xv[base + static_cast<std::size_t>(c)];
        mu /= static_cast<double>(d);
        double var = 0.0;
        for (std::int64_t c = 0; c < d; ++c) {
            double t = xv[base + static_cast<std::size_t>(c)] - mu;
            var += t * t;
        }
        var /= static_cast<double>(d);
        const double is = 1.0 / std::sqrt(var + eps);
        inv_sigma[static_cast<std::size_t>(r)] = is;
        for (std::int64_t c = 0; c < d; ++c) {
            auto i = base + static_cast<std::size_t>(c);
            xhat[i] = (xv[i] - mu) * is;
            out[i] = xhat[i] * gv[static_cast<std::size_t>(c)] + bv[static_cast<std::size_t>(c)];
        }
    }

    Tensor r = make_op_output(x.shape(), std::move(out), {x, gain, bias});
    if (r.requires_grad()) {
        auto px = x.data_ptr();
        auto pg = gain.data_ptr();
        auto pb = bias.data_ptr();
        auto pr = r.data_ptr();
        auto kx = share(x); auto kg = share(gain); auto kb = share(bias); auto kr = share(r);
        active_tape()->record("layer_norm",
                              [px, pg, pb, pr, rows, d, xhat = std::move(xhat),
                               inv_sigma = std::move(inv_sigma), kx, kg, kb, kr]() {
            if (pr->grad.empty()) return;
            const double dd = static_cast<double>(d);
            for (std::int64_t row = 0; row < rows; ++row) {
                const auto base = static_cast<std::size_t>(row * d);
                const double is = inv_sigma[static_cast<std::size_t>(row)];
                double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
                for (std::int64_t c = 0; c < d; ++c) {
                    auto i = base + static_cast<std::size_t>(c);
                    const double dy = pr->grad[i];
                    const double dxh = dy * pg->values[static_cast<std::size_t>(c)];
                    sum_dxhat += dxh;
                    sum_dxhat_xhat += dxh * xhat[i];
                }
                if (px->requires_grad) {
                    px->ensure_grad();
                    for (std::int64_t c = 0; c < d; ++c) {
                        auto i = base + static_cast<std::size_t>(c);
                        const double dxh = pr->grad[i] * pg->values[static_cast<std::size_t>(c)];
                        px->grad[i] += is * (dxh - sum_dxhat / dd - xhat[i] * sum_dxhat_xhat / dd);
                    }
                }
                if (pg->requires_grad) {
                    pg->ensure_grad();
                    for (std::int64_t c = 0; c < d; ++c) {
                        auto i = base + static_cast<std::size_t>(c);
                        pg->grad[static_cast<std::size_t>(c)] += pr->grad[i] * xhat[i];
                    }
                }
                if (pb->requires_grad) {
                    pb->ensure_grad();
                    for (std::int64_t c = 0; c < d; ++c) {
                        auto i = base + static_cast<std::size_t>(c);
                        pb->grad[static_cast<std::size_t>(c)] += pr->grad[i];
                    }
                }
            }
        });
    }
    return r;
}

// --- matmul ---------------------------------------------------------------------

namespace {

// C[m,n] += A[m,k] * B[k,n] over raw buffers.
void gemm_acc(const double* a, const double* b, double* c,
              std::int64_t m, std::int64_t k, std::int64_t n) {
    for (std::int64_t i = 0; i < m; ++i) {
        for (std::int64_t p = 0; p < k; ++p) {
            const double av = a[i * k + p];
            if (av == 0.0) continue;
            const double* brow = b + p * n;
            double* crow = c + i * n;
            for (std::int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

// C[k,n] += A^T * B where A is [m,k], B is [m,n]
void gemm_tn_acc(const double* a, const double* b, double* c,
                 std::int64_t m, std::int64_t k, std::int64_t n) {
    for (std::int64_t p = 0; p < m; ++p) {
        const double* arow = a + p * k;
        const double* brow = b + p * n;
        for (std::int64_t i = 0; i < k; ++i) {
            const double av = arow[i];
            if (av == 0.0) continue;
            double* crow = c + i * n;
            for (std::int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

} // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
    const auto ra = a.rank();
    const auto rb = b.rank();
    if (ra < 2 || rb < 2)
        throw ShapeMismatch("matmul: inputs must have rank >= 2, got " +
                            shape_str(a.shape()) + " x " + shape_str(b.shape()));

    const std::int64_t m = a.dim(ra - 2);
    const std::int64_t k = a.dim(ra - 1);
    const std::int64_t kb = b.dim(rb - 2);
    const std::int64_t n = b.dim(rb - 1);
    if (k != kb)
        throw ShapeMismatch("matmul: inner dims " + shape_str(a.shape()) + " x " +
                            shape_str(b.shape()));

    std::int64_t batch_a = 1;
    for (std::int64_t i = 0; i < ra - 2; ++i) batch_a *= a.dim(i);
    std::int64_t batch_b = 1;
    for (std::int64_t i = 0; i < rb - 2; ++i) batch_b *= b.dim(i);

    bool b_broadcast;
    if (rb == 2) {
        b_broadcast = true;           // [..,m,k] x [k,n]
    } else if (ra == rb) {
        Shape lead_a(a.shape().begin(), a.shape().end() - 2);
        Shape lead_b(b.shape().begin(), b.shape().end() - 2);
        if (lead_a != lead_b)
            throw ShapeMismatch("matmul: batch dims " + shape_str(a.shape()) + " x " +
                                shape_str(b.shape()));
        b_broadcast = false;          // [B..,m,k] x [B..,k,n]
    } else {
        throw ShapeMismatch("matmul: unsupported rank combination " +
                            shape_str(a.shape()) + " x " + shape_str(b.shape()));
    }

    Shape out_shape(a.shape().begin(), a.shape().end() - 1);
    out_shape.push_back(n);
    std::vector<double> out(static_cast<std::size_t>(batch_a * m * n), 0.0);

    const double* av = a.values().data();
    const double* bvd = b.values().data();
    for (std::int64_t bi = 0; bi < batch_a; ++bi) {
        const double* bptr = b_broadcast ? bvd : bvd + bi * k * n;
        gemm_acc(av + bi * m * k, bptr, out.data() + bi * m * n, m, k, n);
    }

    Tensor r = make_op_output(std::move(out_shape), std::move(out), {a, b});
    if (r.requires_grad()) {
        auto pa = a.data_ptr();
        auto pb = b.data_ptr();
        auto pr = r.data_ptr();
        auto ka = share(a); auto kb2 = share(b); auto kr = share(r);
        active_tape()->record("matmul",
                              [pa, pb, pr, batch_a, m, k, n, b_broadcast, ka, kb2, kr]() {
            if (pr->grad.empty()) return;
            const double* g = pr->grad.data();
            if (pa->requires_grad) {
                pa->ensure_grad();
                for (std::int64_t bi = 0; bi < batch_a; ++bi) {
                    const double* bptr =
                        b_broadcast ? pb->values.data() : pb->values.data() + bi * k * n;
                    // dA = dC * B^T ; B^T is [n,k] view of row-major [k,n] -> use nt on B rows
                    // dA[i,p] = sum_j dC[i,j] * B[p,j]
                    const double* gb = g + bi * m * n;
                    double* da = pa->grad.data() + bi * m * k;
                    for (std::int64_t i = 0; i < m; ++i)
                        for (std::int64_t p = 0; p < k; ++p) {
                            double s = 0.0;
                            for (std::int64_t j = 0; j < n; ++j)
                                s += gb[i * n + j] * bptr[p * n + j];
                            da[i * k + p] += s;
                        }
                }
            }
            if (pb->requires_grad) {
                pb->ensure_grad();
                for (std::int64_t bi = 0; bi < batch_a; ++bi) {
                    double* db =
                        b_broadcast ? pb->grad.data() : pb->grad.data() + bi * k * n;
                    // dB = A^T * dC
                    gemm_tn_acc(pa->values.data() + bi * m * k, g + bi * m * n, db, m, k, n);
                }
            }
        });
    }
    return r;
}

// --- structural ops --------------------------------------------------------------

Tensor transpose(const Tensor& a) {
    if (a.rank() != 2) throw ShapeMismatch("transpose: rank-2 only, got " + shape_str(a.shape()));
    const std::int64_t r = a.dim(0), c = a.dim(1);
    std::vector<double> out(a.values().size());
    for (std::int64_t i = 0; i < r; ++i)
        for (std::int64_t j = 0; j < c; ++j)
            out[static_cast<std::size_t>(j * r + i)] = a.values()[static_cast<std::size_t>(i * c + j)];
    Tensor t = make_op_output({c, r}, std::move(out), {a});
    if (t.requires_grad()) {
        auto pa = a.data_ptr();
        auto pt = t.data_ptr();
        auto ka = share(a); auto kt = share(t);
        active_tape()->record("transpose", [pa, pt, r, c, ka, kt]() {
            if (pt->grad.empty()) return;
            pa->ensure_grad();
            for (std::int64_t i = 0; i < r; ++i)
                for (std::int64_t j = 0; j < c; ++j)
                    pa->grad[static_cast<std::size_t>(i * c + j)] +=
                        pt->grad[static_cast<std::size_t>(j * r + i)];
        });
    }
    return t;
}

Tensor reshape(const Tensor& a, Shape shape) {
    if (shape_numel(shape) != a.numel())
        throw ShapeMismatch("reshape: " + shape_str(a.shape()) + " -> " + shape_str(shape));
    Tensor t = make_op_output(std::move(shape), std::vector<double>(a.values().begin(), a.values().end()), {a});
    if (t.requires_grad()) {
        auto pa = a.data_ptr();
        auto pt = t.data_ptr();
        auto ka = share(a); auto kt = share(t);
        active_tape()->record("reshape", [pa, pt, ka, kt]() {
            if (pt->grad.empty()) return;
            pa->ensure_grad();
            for (std::size_t i = 0; i < pt->grad.size(); ++i) pa->grad[i] += pt->grad[i];
        });
    }
    return t;
}

Tensor slice_cols(const Tensor& a, std::int64_t start, std::int64_t count) {
    if (a.rank() != 2) throw ShapeMismatch("slice_cols: rank-2 only");
    const std::int64_t rows = a.dim(0), cols = a.dim(1);
    if (start < 0 || count <= 0 || start + count > cols)
        throw ShapeMismatch("slice_cols: range [" + std::to_string(start) + "," +
                            std::to_string(start + count) + ") of " + std::to_string(cols));
    std::vector<double> out(static_cast<std::size_t>(rows * count));
    for (std::int64_t i = 0; i < rows; ++i)
        for (std::int64_t j = 0; j < count; ++j)
            out[static_cast<std::size_t>(i * count + j)] =
                a.values()[static_cast<std::size_t>(i * cols + start + j)];
    Tensor t = make_op_output({rows, count}, std::move(out), {a});
    if (t.requires_grad()) {
        auto pa = a.data_ptr();
        auto pt = t.data_ptr();
        auto ka = share(a); auto kt = share(t);
        active_tape()->record("slice_cols", [pa, pt, rows, cols, start, count, ka, kt]() {
            if (pt->grad.empty()) return;
            pa->ensure_grad();
            for (std::int64_t i = 0; i < rows; ++i)
                for (std::int64_t j = 0; j < count; ++j)
                    pa->grad[static_cast<std::size_t>(i * cols + start + j)] +=
                        pt->grad[static_cast<std::size_t>(i * count + j)];
        });
    }
    return t;
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw ShapeMismatch("concat_cols: no parts");
    const std::int64_t rows = parts[0].dim(0);
    std::int64_t cols = 0;
    for (const auto& p : parts) {
        if (p.rank() != 2 || p.dim(0) != rows)
            throw ShapeMismatch("concat_cols: row mismatch");
        cols += p.dim(1);
    }
    std::vector<double> out(static_cast<std::size_t>(rows * cols));
    std::int64_t off = 0;
    for (const auto& p : parts) {
        const std::int64_t pc = p.dim(1);
        for (std::int64_t i = 0; i < rows; ++i)
            for (std::int64_t j = 0; j < pc; ++j)
                out[static_cast<std::size_t>(i * cols + off + j)] =
                    p.values()[static_cast<std::size_t>(i * pc + j)];
        off += pc;
    }
    Tensor t = make_op_output({rows, cols}, std::move(out), parts);
    if (t.requires_grad()) {
        std::vector<TensorData*> srcs;
        std::vector<std::int64_t> widths;
        std::vector<std::shared_ptr<TensorData>> keep;
        for (const auto& p : parts) {
            srcs.push_back(p.data_ptr());
            widths.push_back(p.dim(1));
            keep.push_back(share(p));
        }
        auto pt = t.data_ptr();
        keep.push_back(share(t));
        active_tape()->record("concat_cols", [srcs, widths, pt, rows, cols, keep]() {
            if (pt->grad.empty()) return;
            std::int64_t off2 = 0;
            for (std::size_t pi = 0; pi < srcs.size(); ++pi) {
                auto* src = srcs[pi];
                const std::int64_t pc = widths[pi];
                if (src->requires_grad) {
                    src->ensure_grad();
                    for (std::int64_t i = 0; i < rows; ++i)
                        for (std::int64_t j = 0; j < pc; ++j)
                            src->grad[static_cast<std::size_t>(i * pc + j)] +=
                                pt->grad[static_cast<std::size_t>(i * cols + off2 + j)];
                }
                off2 += pc;
            }
        });
    }
    return t;
}

Tensor slice_rows(const Tensor& a, std::int64_t start, std::int64_t count) {
    if (a.rank() != 2) throw ShapeMismatch("slice_rows: rank-2 only");
    const std::int64_t rows = a.dim(0), cols = a.dim(1);
    if (start < 0 || count <= 0 || start + count > rows)
        throw ShapeMismatch("slice_rows: range [" + std::to_string(start) + "," +
                            std::to_string(start + count) + ") of " + std::to_string(rows));
    std::vector<double> out(a.values().begin() + start * cols,
                            a.values().begin() + (start + count) * cols);
    Tensor t = make_op_output({count, cols}, std::move(out), {a});
    if (t.requires_grad()) {
        auto pa = a.data_ptr();
        auto pt = t.data_ptr();
        auto ka = share(a); auto kt = share(t);
        active_tape()->record("slice_rows", [pa, pt, cols, start, ka, kt]() {
            if (pt->grad.empty()) return;
            pa->ensure_grad();
            const auto off = static_cast<std::size_t>(start * cols);
            for (std::size_t i = 0; i < pt->grad.size(); ++i) pa->grad[off + i] += pt->grad[i];
        });
    }
    return t;
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw ShapeMismatch("concat_rows: no parts");
    const std::int64_t cols = parts[0].dim(parts[0].rank() - 1);
    std::int64_t rows = 0;
    for (const auto& p : parts) {
        if (p.rank() != 2 || p.dim(1) != cols) throw ShapeMismatch("concat_rows: col mismatch");
        rows += p.dim(0);
    }
    std::vector<double> out;
    out.reserve(static_cast<std::size_t>(rows * cols));
    for (const auto& p : parts) out.insert(out.end(), p.values().begin(), p.values().end());
    Tensor t = make_op_output({rows, cols}, std::move(out), parts);
    if (t.requires_grad()) {
        std::vector<TensorData*> srcs;
        std::vector<std::int64_t> sizes;
        std::vector<std::shared_ptr<TensorData>> keep;
        for (const auto& p : parts) {
            srcs.push_back(p.data_ptr());
            sizes.push_back(p.numel());
            keep.push_back(share(p));
        }
        auto pt = t.data_ptr();
        keep.push_back(share(t));
        active_tape()->record("concat_rows", [srcs, sizes, pt, keep]() {
            if (pt->grad.empty()) return;
            std::size_t off = 0;
            for (std::size_t pi = 0; pi < srcs.size(); ++pi) {
                auto* src = srcs[pi];
                const auto n = static_cast<std::size_t>(sizes[pi]);
                if (src->requires_grad) {
                    src->ensure_grad();
                    for (std::size_t i = 0; i < n; ++i) src->grad[i] += pt->grad[off + i];
                }
                off += n;
            }
        });
    }
    return t;
}

Tensor add_rowvec(const Tensor& m, const Tensor& v) {
    if (m.rank() != 2 || v.numel() != m.dim(1))
        throw ShapeMismatch("add_rowvec: " + shape_str(m.shape()) + " + " + shape_str(v.shape()));
    const std::int64_t rows = m.dim(0), cols = m.dim(1);
    std::vector<double> out(m.values().size());
    for (std::int64_t i = 0; i < rows; ++i)
        for (std::int64_t j = 0; j < cols; ++j)
            out[static_cast<std::size_t>(i * cols + j)] =
                m.values()[static_cast<std::size_t>(i * cols + j)] + v.values()[static_cast<std::size_t>(j)];
    Tensor t = make_op_output(m.shape(), std::move(out), {m, v});
    if (t.requires_grad()) {
        auto pm = m.data_ptr();
        auto pv = v.data_ptr();
        auto pt = t.data_ptr();
        auto km = share(m); auto kv = share(v); auto kt = share(t);
        active_tape()->record("add_rowvec", [pm, pv, pt, rows, cols, km, kv, kt]() {
            if (pt->grad.empty()) return;
            if (pm->requires_grad) {
                pm->ensure_grad();
                for (std::size_t i = 0; i < pt->grad.size(); ++i) pm->grad[i] += pt->grad[i];
            }
            if (pv->requires_grad) {
                pv->ensure_grad();
                for (std::int64_t i = 0; i < rows; ++i)
                    for (std::int64_t j = 0; j < cols; ++j)
                        pv->grad[static_cast<std::size_t>(j)] +=
                            pt->grad[static_cast<std::size_t>(i * cols + j)];
            }
        });
    }
    return t;
}

Tensor mul_rowvec(const Tensor& m, const Tensor& v) {
    if (m.rank() != 2 || v.numel() != m.dim(1))
        throw ShapeMismatch("mul_rowvec: " + shape_str(m.shape()) + " * " + shape_str(v.shape()));
    const std::int64_t rows = m.dim(0), cols = m.dim(1);
    std::vector<double> out(m.values().size());
    for (std::int64_t i = 0; i < rows; ++i)
        for (std::int64_t j = 0; j < cols; ++j)
            out[static_cast<std::size_t>(i * cols + j)] =
                m.values()[static_cast<std::size_t>(i * cols + j)] * v.values()[static_cast<std::size_t>(j)];
    Tensor t = make_op_output(m.shape(), std::move(out), {m, v});
    if (t.requires_grad()) {
        auto pm = m.data_ptr();
        auto pv = v.data_ptr();
        auto pt = t.data_ptr();
        auto km = share(m); auto kv = share(v); auto kt = share(t);
        active_tape()->record("mul_rowvec", [pm, pv, pt, rows, cols, km, kv, kt]() {
            if (pt->grad.empty()) return;
            if (pm->requires_grad) {
                pm->ensure_grad();
                for (std::int64_t i = 0; i < rows; ++i)
                    for (std::int64_t j = 0; j < cols; ++j)
                        pm->grad[static_cast<std::size_t>(i * cols + j)] +=
                            pt->grad[static_cast<std::size_t>(i * cols + j)] *
                            pv->values[static_cast<std::size_t>(j)];
            }
            if (pv->requires_grad) {
                pv->ensure_grad();
                for (std::int64_t i = 0; i < rows; ++i)
                    for (std::int64_t j = 0; j < cols; ++j)
                        pv->grad[static_cast<std::size_t>(j)] +=
                            pt->grad[static_cast<std::size_t>(i * cols + j)] *
                            pm->values[static_cast<std::size_t>(i * cols + j)];
            }
        });
    }
    return t;
}

Tensor gather_rows(const Tensor& table, const std::vector<std::int64_t>& rows) {
    if (table.rank() != 2) throw ShapeMismatch("gather_rows: table must be rank-2");
    const std::int64_t nrows = table.dim(0), cols = table.dim(1);
    for (auto r : rows)
        if (r < 0 || r >= nrows)
            throw ShapeMismatch("gather_rows: row " + std::to_string(r) + " outside table of " +
                                std::to_string(nrows));
    std::vector<double> out(rows.size() * static_cast<std::size_t>(cols));
    for (std::size_t i = 0; i < rows.size(); ++i)
        for (std::int64_t j = 0; j < cols; ++j)
            out[i * static_cast<std::size_t>(cols) + static_cast<std::size_t>(j)] =
                table.values()[static_cast<std::size_t>(rows[i] * cols + j)];
    Tensor t = make_op_output({static_cast<std::int64_t>(rows.size()), cols}, std::move(out),
                              {table});
    if (t.requires_grad()) {
        auto ptab = table.data_ptr();
        auto pt = t.data_ptr();
        auto ktab = share(table); auto kt = share(t);
        active_tape()->record("gather_rows", [ptab, pt, rows, cols, ktab, kt]() {
            if (pt->grad.empty()) return;
            ptab->ensure_grad();
            for (std::size_t i = 0; i < rows.size(); ++i)
                for (std::int64_t j = 0; j < cols; ++j)
                    ptab->grad[static_cast<std::size_t>(rows[i] * cols + j)] +=
                        pt->grad[i * static_cast<std::size_t>(cols) + static_cast<std::size_t>(j)];
        });
    }
    return t;
}

Tensor sum(const Tensor& a) {
    double s = 0.0;
    for (double v : a.values()) s += v;
    Tensor t = make_op_output({1}, {s}, {a});
    if (t.requires_grad()) {
        auto pa = a.data_ptr();
        auto pt = t.data_ptr();
        auto ka = share(a); auto kt = share(t);
        active_tape()->record("sum", [pa, pt, ka, kt]() {
            if (pt->grad.empty()) return;
            pa->ensure_grad();
            const double g = pt->grad[0];
            for (auto& x : pa->grad) x += g;
        });
    }
    return t;
}

Tensor mean(const Tensor& a) {
    return scale(sum(a), 1.0 / static_cast<double>(a.numel()));
}

} // namespace irrcast
