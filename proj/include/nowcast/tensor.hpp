#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace nowcast {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

/// Shared storage behind a Tensor handle. Data is treated as immutable while
/// a GradTape holds references to the node; the gradient buffer is allocated
/// lazily on first accumulation.
struct TensorNode {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;
    bool requires_grad = false;

    std::size_t numel() const { return data.size(); }
    void ensure_grad() {
        if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
    }
};

using NodePtr = std::shared_ptr<TensorNode>;

}  // namespace detail

/// Dense N-dimensional tensor of 64-bit floats in row-major order.
/// Copies share storage; use clone() for a deep copy.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double value, bool requires_grad = false);
    static Tensor from_data(Shape shape, std::vector<double> data, bool requires_grad = false);
    static Tensor scalar(double value);

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    std::size_t rank() const { return node_->shape.size(); }
    std::size_t numel() const { return node_->data.size(); }
    std::size_t extent(std::size_t axis) const { return node_->shape[axis]; }

    std::span<const double> data() const { return node_->data; }
    /// Direct write access to storage. Never mutate a tensor that participates
    /// in a live GradTape.
    std::span<double> mutable_data() { return node_->data; }

    double value() const;  // scalar tensors only
    double at(std::initializer_list<std::size_t> idx) const;

    bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool on) { node_->requires_grad = on; }

    /// Accumulated gradient; empty span if none has been produced yet.
    std::span<const double> grad() const;
    void zero_grad();

    Tensor clone() const;

    detail::TensorNode* node() const { return node_.get(); }
    const detail::NodePtr& node_ptr() const { return node_; }

private:
    explicit Tensor(detail::NodePtr node) : node_(std::move(node)) {}
    detail::NodePtr node_;

    friend Tensor make_tensor(detail::NodePtr);
};

Tensor make_tensor(detail::NodePtr node);

/// Ordered record of executed operations, replayed in reverse for reverse-mode
/// differentiation. Constructing a tape activates recording on this thread;
/// destruction restores the previously active tape. One graph per tape.
class GradTape {
public:
    GradTape();
    ~GradTape();
    GradTape(const GradTape&) = delete;
    GradTape& operator=(const GradTape&) = delete;

    /// Seeds d(loss)/d(loss)=1 and pulls adjoints through every recorded
    /// operation exactly once, newest first. `loss` must be scalar.
    void backward(const Tensor& loss);

    std::size_t size() const { return records_.size(); }

    static GradTape* active();

    struct Record {
        detail::NodePtr out;
        std::function<void()> pull;
    };
    void push(detail::NodePtr out, std::function<void()> pull);

private:
    std::vector<Record> records_;
    GradTape* previous_ = nullptr;
};

namespace detail {
/// True when a tape is active and any input carries requires_grad.
bool should_record(std::initializer_list<const Tensor*> inputs);
/// Marks `out` as grad-carrying and appends the pull closure to the active tape.
void record(Tensor& out, std::function<void()> pull);
}  // namespace detail

// ---- elementwise arithmetic (same-shape operands) ----
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor add_scalar(const Tensor& x, double s);
Tensor mul_scalar(const Tensor& x, double s);

// ---- elementwise functions ----
Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor tanh_op(const Tensor& x);
Tensor exp_op(const Tensor& x);
Tensor log_op(const Tensor& x);
Tensor pow_scalar(const Tensor& x, double exponent);
Tensor clamp_min(const Tensor& x, double floor);

// ---- reductions and shape ops ----
Tensor sum(const Tensor& x);                     // -> scalar
Tensor mean(const Tensor& x);                    // -> scalar
Tensor channel_mean(const Tensor& x);            // mean over all non-channel axes -> (C)
Tensor channel_broadcast(const Tensor& v, const Shape& like);  // (C) -> like
Tensor add_channel_bias(const Tensor& x, const Tensor& bias);
Tensor concat_channels(const Tensor& a, const Tensor& b);
Tensor slice_channels(const Tensor& x, std::size_t from, std::size_t count);
Tensor stack_first(const std::vector<Tensor>& parts);  // k tensors (s...) -> (k, s...)
Tensor permute(const Tensor& x, const std::vector<std::size_t>& perm);
Tensor reshape(const Tensor& x, Shape new_shape);  // same numel, same element order
Tensor softmax(const Tensor& x, std::size_t axis);

/// Deterministic RNG (splitmix64 core, Box-Muller normals). Self-contained so
/// streams are bit-identical across platforms and standard-library versions.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next_u64();
    double uniform();                 // [0, 1)
    double normal();                  // N(0, 1)
    std::uint64_t uniform_int(std::uint64_t bound);  // [0, bound)

    /// Independent child stream; deterministic in (seed, stream).
    Rng fork(std::uint64_t stream) const;

private:
    std::uint64_t state_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace nowcast
