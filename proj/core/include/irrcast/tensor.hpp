#ifndef IRRCAST_TENSOR_HPP
#define IRRCAST_TENSOR_HPP

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "irrcast/errors.hpp"
#include "irrcast/rng.hpp"

namespace irrcast {

using Shape = std::vector<std::int64_t>;

std::int64_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

class Tape;

namespace detail {

/// Shared storage behind a Tensor. Values are immutable after the op that
/// produced them; only the grad buffer mutates (during backward / zero_grad).
struct TensorData {
    Shape shape;
    std::vector<double> values;
    std::vector<double> grad;   // empty until gradient flows (or param created)
    bool requires_grad = false;
    Tape* tape = nullptr;       // tape whose node produced this tensor

    std::int64_t numel() const { return static_cast<std::int64_t>(values.size()); }
    void ensure_grad() {
        if (grad.empty()) grad.assign(values.size(), 0.0);
    }
};

} // namespace detail

/// Dense row-major 64-bit tensor participating in reverse-mode autodiff.
///
/// Copying a Tensor copies a handle to shared storage (a tape may also hold
/// the storage alive). Construct constants with from()/zeros() and learnable
/// leaves with parameter(); leaves allocate a zero grad buffer up front so
/// parameters unreachable from a loss still read gradient zero.
class Tensor {
public:
    Tensor() = default;

    static Tensor from(Shape shape, std::vector<double> values);
    static Tensor zeros(Shape shape);
    static Tensor full(Shape shape, double value);
    static Tensor scalar(double value);
    static Tensor parameter(Shape shape, std::vector<double> values);
    /// Xavier-uniform weight matrix [fan_in, fan_out].
    static Tensor xavier(std::int64_t fan_in, std::int64_t fan_out, Rng& rng);

    bool defined() const { return d_ != nullptr; }
    const Shape& shape() const { return d_->shape; }
    std::int64_t rank() const { return static_cast<std::int64_t>(d_->shape.size()); }
    std::int64_t numel() const { return d_->numel(); }
    std::int64_t dim(std::int64_t i) const { return d_->shape[static_cast<std::size_t>(i)]; }

    std::span<const double> values() const { return d_->values; }
    /// Gradient buffer; zeros of the tensor's size when no gradient has flowed.
    std::vector<double> grad() const;
    bool has_grad_buffer() const { return !d_->grad.empty(); }
    bool requires_grad() const { return d_->requires_grad; }

    double item() const;                    // scalar tensors only
    double at(std::int64_t r, std::int64_t c) const; // rank-2 convenience

    /// In-place value update for optimizer steps; never used on tape outputs.
    void apply_update(std::span<const double> delta);
    void set_values(std::span<const double> vals);
    void zero_grad();

    double grad_norm() const;

    detail::TensorData* data_ptr() const { return d_.get(); }
    /// Shared ownership handle; backward closures capture this so a tape can
    /// outlive the local Tensor objects of a forward pass.
    std::shared_ptr<detail::TensorData> storage() const { return d_; }

private:
    friend class Tape;
    friend Tensor make_op_output(Shape shape, std::vector<double> values,
                                 const std::vector<Tensor>& inputs);
    explicit Tensor(std::shared_ptr<detail::TensorData> d) : d_(std::move(d)) {}
    std::shared_ptr<detail::TensorData> d_;
};

/// Reverse-mode gradient tape. Nodes are recorded in construction order and
/// replayed exactly once in reverse by backward(); a second backward without
/// a fresh forward throws TapeConsumed.
class Tape {
public:
    struct Node {
        const char* kind;
        std::function<void()> apply;
    };

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    void record(const char* kind, std::function<void()> apply);
    void backward(const Tensor& loss);

    std::size_t node_count() const { return nodes_.size(); }
    bool consumed() const { return consumed_; }

private:
    std::vector<Node> nodes_;
    bool consumed_ = false;
};

/// RAII scope making `tape` the thread's recording target. Ops record a node
/// only when a tape is active and some input requires grad, so inference
/// outside any scope is tape-free.
class TapeScope {
public:
    explicit TapeScope(Tape& tape);
    ~TapeScope();
    TapeScope(const TapeScope&) = delete;
    TapeScope& operator=(const TapeScope&) = delete;

private:
    Tape* previous_;
};

Tape* active_tape();

// ---------------------------------------------------------------------------
// Elementwise family (add/sub/mul with equal shapes, scalar broadcast forms,
// unary tanh/relu/exp/recip) and the remaining differentiable ops.
// ---------------------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, double b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, double b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor tanh(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor recip(const Tensor& a);

/// Numerically stabilized softmax along `axis` (negative axes count from the
/// back). Throws NonFiniteInput on NaN/inf entries.
Tensor softmax(const Tensor& x, int axis);

/// Layer normalization over the last dimension with affine gain/bias of that
/// dimension's length. Variance is population variance, regularized by eps.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double eps = 1e-5);

/// Matrix product. Supports [m,k]x[k,n], batched [...,m,k]x[k,n] (leading
/// dims collapsed), and [B,m,k]x[B,k,n] with equal batch dims.
Tensor matmul(const Tensor& a, const Tensor& b);

Tensor transpose(const Tensor& a);           // rank-2
Tensor reshape(const Tensor& a, Shape shape);
Tensor slice_cols(const Tensor& a, std::int64_t start, std::int64_t count);
Tensor concat_cols(const std::vector<Tensor>& parts);
Tensor slice_rows(const Tensor& a, std::int64_t start, std::int64_t count);
Tensor concat_rows(const std::vector<Tensor>& parts);
/// Adds/multiplies a length-C vector into every row of an [R,C] matrix.
Tensor add_rowvec(const Tensor& m, const Tensor& v);
Tensor mul_rowvec(const Tensor& m, const Tensor& v);
/// Gathers rows of a [R,C] table; gradient scatters back into the table,
/// so only touched rows receive gradient.
Tensor gather_rows(const Tensor& table, const std::vector<std::int64_t>& rows);
Tensor sum(const Tensor& a);                 // scalar result
Tensor mean(const Tensor& a);

/// Seeds d(loss)/d(loss)=1 and propagates through the loss's tape.
/// Throws NotScalar / DetachedTensor / TapeConsumed per contract.
void backward(const Tensor& loss);

} // namespace irrcast

#endif // IRRCAST_TENSOR_HPP
