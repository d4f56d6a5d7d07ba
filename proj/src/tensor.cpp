#include "nowcast/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace nowcast {

std::size_t shape_numel(const Shape& shape) {
    std::size_t n = 1;
    for (std::size_t e : shape) n *= e;
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << "(";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ",";
        os << shape[i];
    }
    os << ")";
    return os.str();
}

namespace {

void check_positive_extents(const Shape& shape) {
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (shape[i] == 0) {
            throw std::invalid_argument("tensor: zero extent on axis " + std::to_string(i));
        }
    }
}

void check_same_shape(const char* op, const Tensor& a, const Tensor& b) {
    if (a.shape() == b.shape()) return;
    const Shape& sa = a.shape();
    const Shape& sb = b.shape();
    std::size_t axis = 0;
    for (; axis < std::min(sa.size(), sb.size()); ++axis) {
        if (sa[axis] != sb[axis]) break;
    }
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(sa) + " vs " +
                                shape_str(sb) + " (first differing axis " + std::to_string(axis) +
                                ")");
}

thread_local GradTape* g_active_tape = nullptr;

}  // namespace

Tensor make_tensor(detail::NodePtr node) { return Tensor(std::move(node)); }

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    check_positive_extents(shape);
    auto node = std::make_shared<detail::TensorNode>();
    node->data.assign(shape_numel(shape), 0.0);
    node->shape = std::move(shape);
    node->requires_grad = requires_grad;
    return make_tensor(std::move(node));
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
    Tensor t = zeros(std::move(shape), requires_grad);
    std::fill(t.node_->data.begin(), t.node_->data.end(), value);
    return t;
}

Tensor Tensor::from_data(Shape shape, std::vector<double> data, bool requires_grad) {
    check_positive_extents(shape);
    if (shape_numel(shape) != data.size()) {
        throw std::invalid_argument("tensor: data length " + std::to_string(data.size()) +
                                    " does not match shape " + shape_str(shape));
    }
    auto node = std::make_shared<detail::TensorNode>();
    node->shape = std::move(shape);
    node->data = std::move(data);
    node->requires_grad = requires_grad;
    return make_tensor(std::move(node));
}

Tensor Tensor::scalar(double value) { return from_data({1}, {value}); }

double Tensor::value() const {
    if (numel() != 1) {
        throw std::invalid_argument("tensor: value() requires a scalar, got " + shape_str(shape()));
    }
    return node_->data[0];
}

double Tensor::at(std::initializer_list<std::size_t> idx) const {
    const Shape& s = node_->shape;
    if (idx.size() != s.size()) {
        throw std::invalid_argument("tensor: index rank " + std::to_string(idx.size()) +
                                    " does not match tensor rank " + std::to_string(s.size()));
    }
    std::size_t flat = 0;
    std::size_t axis = 0;
    for (std::size_t i : idx) {
        if (i >= s[axis]) {
            throw std::out_of_range("tensor: index " + std::to_string(i) + " out of range on axis " +
                                    std::to_string(axis));
        }
        flat = flat * s[axis] + i;
        ++axis;
    }
    return node_->data[flat];
}

std::span<const double> Tensor::grad() const {
    if (node_->grad.empty()) return {};
    return node_->grad;
}

void Tensor::zero_grad() { node_->grad.clear(); }

Tensor Tensor::clone() const {
    auto node = std::make_shared<detail::TensorNode>();
    node->shape = node_->shape;
    node->data = node_->data;
    node->requires_grad = node_->requires_grad;
    return make_tensor(std::move(node));
}

GradTape::GradTape() {
    previous_ = g_active_tape;
    g_active_tape = this;
}

GradTape::~GradTape() { g_active_tape = previous_; }

GradTape* GradTape::active() { return g_active_tape; }

void GradTape::push(detail::NodePtr out, std::function<void()> pull) {
    records_.push_back(Record{std::move(out), std::move(pull)});
}

void GradTape::backward(const Tensor& loss) {
    if (loss.numel() != 1) {
        throw std::invalid_argument("backward: loss must be scalar, got " + shape_str(loss.shape()));
    }
    detail::TensorNode* root = loss.node();
    root->ensure_grad();
    root->grad[0] += 1.0;
    for (auto it = records_.rbegin(); it != records_.rend(); ++it) {
        if (it->out->grad.empty()) continue;  // zero adjoint, nothing to pull
        it->pull();
    }
}

namespace detail {

bool should_record(std::initializer_list<const Tensor*> inputs) {
    if (g_active_tape == nullptr) return false;
    for (const Tensor* t : inputs) {
        if (t->requires_grad()) return true;
    }
    return false;
}

void record(Tensor& out, std::function<void()> pull) {
    out.set_requires_grad(true);
    g_active_tape->push(out.node_ptr(), std::move(pull));
}

}  // namespace detail

namespace {

/// Accumulate `src` scaled by each element of factor-closure into node grads.
inline void axpy(std::vector<double>& dst, const std::vector<double>& src) {
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

using detail::NodePtr;

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    check_same_shape("add", a, b);
    Tensor out = Tensor::zeros(a.shape());
    const std::size_t n = a.numel();
    const double* pa = a.data().data();
    const double* pb = b.data().data();
    double* po = out.mutable_data().data();
    for (std::size_t i = 0; i < n; ++i) po[i] = pa[i] + pb[i];
    if (detail::should_record({&a, &b})) {
        NodePtr na = a.node_ptr(), nb = b.node_ptr(), no = out.node_ptr();
        detail::record(out, [na, nb, no] {
            const std::vector<double>& g = no->grad;
            if (na->requires_grad) {
                na->ensure_grad();
                axpy(na->grad, g);
            }
            if (nb->requires_grad) {
                nb->ensure_grad();
                axpy(nb->grad, g);
            }
        });
    }
    return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
    check_same_shape("sub", a, b);
    Tensor out = Tensor::zeros(a.shape());
    const std::size_t n = a.numel();
    const double* pa = a.data().data();
    const double* pb = b.data().data();
    double* po = out.mutable_data().data();
    for (std::size_t i = 0; i < n; ++i) po[i] = pa[i] - pb[i];
    if (detail::should_record({&a, &b})) {
        NodePtr na = a.node_ptr(), nb = b.node_ptr(), no = out.node_ptr();
        detail::record(out, [na, nb, no] {
            const std::vector<double>& g = no->grad;
            if (na->requires_grad) {
                na->ensure_grad();
                axpy(na->grad, g);
            }
            if (nb->requires_grad) {
                nb->ensure_grad();
                for (std::size_t i = 0; i < g.size(); ++i) nb->grad[i] -= g[i];
            }
        });
    }
    return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
    check_same_shape("mul", a, b);
    Tensor out = Tensor::zeros(a.shape());
    const std::size_t n = a.numel();
    const double* pa = a.data().data();
    const double* pb = b.data().data();
    double* po = out.mutable_data().data();
    for (std::size_t i = 0; i < n; ++i) po[i] = pa[i] * pb[i];
    if (detail::should_record({&a, &b})) {
        NodePtr na = a.node_ptr(), nb = b.node_ptr(), no = out.node_ptr();
        detail::record(out, [na, nb, no] {
            const std::vector<double>& g = no->grad;
            if (na->requires_grad) {
                na->ensure_grad();
                for (std::size_t i = 0; i < g.size(); ++i) na->grad[i] += g[i] * nb->data[i];
            }
            if (nb->requires_grad) {
                nb->ensure_grad();
                for (std::size_t i = 0; i < g.size(); ++i) nb->grad[i] += g[i] * na->data[i];
            }
        });
    }
    return out;
}

Tensor add_scalar(const Tensor& x, double s) {
    Tensor out = Tensor::zeros(x.shape());
    const std::size_t n = x.numel();
    const double* px = x.data().data();
    double* po = out.mutable_data().data();
    for (std::size_t i = 0; i < n; ++i) po[i] = px[i] + s;
    if (detail::should_record({&x})) {
        NodePtr nx = x.node_ptr(), no = out.node_ptr();
        detail::record(out, [nx, no] {
            nx->ensure_grad();
            axpy(nx->grad, no->grad);
        });
    }
    return out;
}

Tensor mul_scalar(const Tensor& x, double s) {
    Tensor out = Tensor::zeros(x.shape());
    const std::size_t n = x.numel();
    const double* px = x.data().data();
    double* po = out.mutable_data().data();
    for (std::size_t i = 0; i < n; ++i) po[i] = px[i] * s;
    if (detail::should_record({&x})) {
        NodePtr nx = x.node_ptr(), no = out.node_ptr();
        detail::record(out, [nx, no, s] {
            nx->ensure_grad();
            for (std::size_t i = 0; i < no->grad.size(); ++i) nx->grad[i] += no->grad[i] * s;
        });
    }
    return out;
}

namespace {

template <typename Fwd, typename Dfn>
Tensor unary_op(const Tensor& x, Fwd fwd, Dfn dfn) {
    Tensor out = Tensor::zeros(x.shape());
    const std::size_t n = x.numel();
    const double* px = x.data().data();
    double* po = out.mutable_data().data();
    for (std::size_t i = 0; i < n; ++i) po[i] = fwd(px[i]);
    if (detail::should_record({&x})) {
        NodePtr nx = x.node_ptr(), no = out.node_ptr();
        detail::record(out, [nx, no, dfn] {
            nx->ensure_grad();
            for (std::size_t i = 0; i < no->grad.size(); ++i) {
                nx->grad[i] += no->grad[i] * dfn(nx->data[i], no->data[i]);
            }
        });
    }
    return out;
}

}  // namespace

Tensor relu(const Tensor& x) {
    return unary_op(
        x, [](double v) { return v > 0.0 ? v : 0.0; },
        [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor sigmoid(const Tensor& x) {
    return unary_op(
        x,
        [](double v) {
            if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
            const double e = std::exp(v);
            return e / (1.0 + e);
        },
        [](double, double y) { return y * (1.0 - y); });
}

Tensor tanh_op(const Tensor& x) {
    return unary_op(
        x, [](double v) { return std::tanh(v); }, [](double, double y) { return 1.0 - y * y; });
}

Tensor exp_op(const Tensor& x) {
    return unary_op(
        x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Tensor log_op(const Tensor& x) {
    return unary_op(
        x, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

Tensor pow_scalar(const Tensor& x, double exponent) {
    return unary_op(
        x, [exponent](double v) { return std::pow(v, exponent); },
        [exponent](double v, double) {
            if (v == 0.0) return exponent > 1.0 ? 0.0 : (exponent == 1.0 ? 1.0 : 0.0);
            return exponent * std::pow(v, exponent - 1.0);
        });
}

Tensor clamp_min(const Tensor& x, double floor) {
    return unary_op(
        x, [floor](double v) { return v < floor ? floor : v; },
        [floor](double v, double) { return v >= floor ? 1.0 : 0.0; });
}

Tensor sum(const Tensor& x) {
    double acc = 0.0;
    for (double v : x.data()) acc += v;
    Tensor out = Tensor::scalar(acc);
    if (detail::should_record({&x})) {
        NodePtr nx = x.node_ptr(), no = out.node_ptr();
        detail::record(out, [nx, no] {
            nx->ensure_grad();
            const double g = no->grad[0];
            for (double& v : nx->grad) v += g;
        });
    }
    return out;
}

Tensor mean(const Tensor& x) { return mul_scalar(sum(x), 1.0 / static_cast<double>(x.numel())); }

Tensor channel_mean(const Tensor& x) {
    if (x.rank() < 2) {
        throw std::invalid_argument("channel_mean: tensor rank must be >= 2, got " +
                                    std::to_string(x.rank()));
    }
    const std::size_t channels = x.shape().back();
    const std::size_t rows = x.numel() / channels;
    Tensor out = Tensor::zeros({channels});
    const double* px = x.data().data();
    double* po = out.mutable_data().data();
    for (std::size_t r = 0; r < rows; ++r) {
        const double* row = px + r * channels;
        for (std::size_t c = 0; c < channels; ++c) po[c] += row[c];
    }
    const double inv = 1.0 / static_cast<double>(rows);
    for (std::size_t c = 0; c < channels; ++c) po[c] *= inv;
    if (detail::should_record({&x})) {
        NodePtr nx = x.node_ptr(), no = out.node_ptr();
        detail::record(out, [nx, no, rows, channels, inv] {
            nx->ensure_grad();
            for (std::size_t r = 0; r < rows; ++r) {
                double* row = nx->grad.data() + r * channels;
                for (std::size_t c = 0; c < channels; ++c) row[c] += no->grad[c] * inv;
            }
        });
    }
    return out;
}

Tensor channel_broadcast(const Tensor& v, const Shape& like) {
    if (v.rank() != 1 || like.empty() || like.back() != v.extent(0)) {
        throw std::invalid_argument("channel_broadcast: vector " + shape_str(v.shape()) +
                                    " does not match channel axis of " + shape_str(like));
    }
    const std::size_t channels = v.extent(0);
    const std::size_t rows = shape_numel(like) / channels;
    Tensor out = Tensor::zeros(like);
    const double* pv = v.data().data();
    double* po = out.mutable_data().data();
    for (std::size_t r = 0; r < rows; ++r) {
        double* row = po + r * channels;
        for (std::size_t c = 0; c < channels; ++c) row[c] = pv[c];
    }
    if (detail::should_record({&v})) {
        NodePtr nv = v.node_ptr(), no = out.node_ptr();
        detail::record(out, [nv, no, rows, channels] {
            nv->ensure_grad();
            for (std::size_t r = 0; r < rows; ++r) {
                const double* row = no->grad.data() + r * channels;
                for (std::size_t c = 0; c < channels; ++c) nv->grad[c] += row[c];
            }
        });
    }
    return out;
}

Tensor add_channel_bias(const Tensor& x, const Tensor& bias) {
    return add(x, channel_broadcast(bias, x.shape()));
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
    if (a.rank() != b.rank() || a.rank() < 1) {
        throw std::invalid_argument("concat_channels: rank mismatch " + shape_str(a.shape()) +
                                    " vs " + shape_str(b.shape()));
    }
    for (std::size_t axis = 0; axis + 1 < a.rank(); ++axis) {
        if (a.extent(axis) != b.extent(axis)) {
            throw std::invalid_argument("concat_channels: extent mismatch on axis " +
                                        std::to_string(axis) + ": " + shape_str(a.shape()) + " vs " +
                                        shape_str(b.shape()));
        }
    }
    const std::size_t ca = a.shape().back();
    const std::size_t cb = b.shape().back();
    Shape out_shape = a.shape();
    out_shape.back() = ca + cb;
    Tensor out = Tensor::zeros(out_shape);
    const std::size_t rows = a.numel() / ca;
    const double* pa = a.data().data();
    const double* pb = b.data().data();
    double* po = out.mutable_data().data();
    for (std::size_t r = 0; r < rows; ++r) {
        std::copy(pa + r * ca, pa + (r + 1) * ca, po + r * (ca + cb));
        std::copy(pb + r * cb, pb + (r + 1) * cb, po + r * (ca + cb) + ca);
    }
    if (detail::should_record({&a, &b})) {
        NodePtr na = a.node_ptr(), nb = b.node_ptr(), no = out.node_ptr();
        detail::record(out, [na, nb, no, rows, ca, cb] {
            for (std::size_t r = 0; r < rows; ++r) {
                const double* g = no->grad.data() + r * (ca + cb);
                if (na->requires_grad) {
                    na->ensure_grad();
                    for (std::size_t c = 0; c < ca; ++c) na->grad[r * ca + c] += g[c];
                }
                if (nb->requires_grad) {
                    nb->ensure_grad();
                    for (std::size_t c = 0; c < cb; ++c) nb->grad[r * cb + c] += g[ca + c];
                }
            }
        });
    }
    return out;
}

Tensor slice_channels(const Tensor& x, std::size_t from, std::size_t count) {
    const std::size_t cx = x.shape().back();
    if (from + count > cx || count == 0) {
        throw std::invalid_argument("slice_channels: range [" + std::to_string(from) + "," +
                                    std::to_string(from + count) + ") out of " + std::to_string(cx) +
                                    " channels");
    }
    Shape out_shape = x.shape();
    out_shape.back() = count;
    Tensor out = Tensor::zeros(out_shape);
    const std::size_t rows = x.numel() / cx;
    const double* px = x.data().data();
    double* po = out.mutable_data().data();
    for (std::size_t r = 0; r < rows; ++r) {
        std::copy(px + r * cx + from, px + r * cx + from + count, po + r * count);
    }
    if (detail::should_record({&x})) {
        NodePtr nx = x.node_ptr(), no = out.node_ptr();
        detail::record(out, [nx, no, rows, cx, from, count] {
            nx->ensure_grad();
            for (std::size_t r = 0; r < rows; ++r) {
                for (std::size_t c = 0; c < count; ++c) {
                    nx->grad[r * cx + from + c] += no->grad[r * count + c];
                }
            }
        });
    }
    return out;
}

Tensor stack_first(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw std::invalid_argument("stack_first: empty input");
    const Shape& base = parts.front().shape();
    for (std::size_t i = 1; i < parts.size(); ++i) {
        check_same_shape("stack_first", parts.front(), parts[i]);
    }
    Shape out_shape;
    out_shape.reserve(base.size() + 1);
    out_shape.push_back(parts.size());
    out_shape.insert(out_shape.end(), base.begin(), base.end());
    Tensor out = Tensor::zeros(out_shape);
    const std::size_t slab = parts.front().numel();
    double* po = out.mutable_data().data();
    for (std::size_t k = 0; k < parts.size(); ++k) {
        std::copy(parts[k].data().begin(), parts[k].data().end(), po + k * slab);
    }
    bool any_grad = false;
    for (const Tensor& p : parts) any_grad = any_grad || p.requires_grad();
    if (GradTape::active() != nullptr && any_grad) {
        std::vector<NodePtr> ins;
        ins.reserve(parts.size());
        for (const Tensor& p : parts) ins.push_back(p.node_ptr());
        NodePtr no = out.node_ptr();
        detail::record(out, [ins, no, slab] {
            for (std::size_t k = 0; k < ins.size(); ++k) {
                if (!ins[k]->requires_grad) continue;
                ins[k]->ensure_grad();
                const double* g = no->grad.data() + k * slab;
                for (std::size_t i = 0; i < slab; ++i) ins[k]->grad[i] += g[i];
            }
        });
    }
    return out;
}

namespace {

std::vector<std::size_t> row_major_strides(const Shape& shape) {
    std::vector<std::size_t> strides(shape.size(), 1);
    for (std::size_t i = shape.size(); i-- > 1;) strides[i - 1] = strides[i] * shape[i];
    return strides;
}

}  // namespace

Tensor permute(const Tensor& x, const std::vector<std::size_t>& perm) {
    if (perm.size() != x.rank()) {
        throw std::invalid_argument("permute: permutation rank " + std::to_string(perm.size()) +
                                    " does not match tensor rank " + std::to_string(x.rank()));
    }
    std::vector<bool> seen(perm.size(), false);
    for (std::size_t p : perm) {
        if (p >= perm.size() || seen[p]) throw std::invalid_argument("permute: invalid permutation");
        seen[p] = true;
    }
    Shape out_shape(perm.size());
    for (std::size_t i = 0; i < perm.size(); ++i) out_shape[i] = x.extent(perm[i]);
    Tensor out = Tensor::zeros(out_shape);
    const auto in_strides = row_major_strides(x.shape());
    // out index i advances -> in flat offset advances by in_strides[perm[i]]
    std::vector<std::size_t> step(perm.size());
    for (std::size_t i = 0; i < perm.size(); ++i) step[i] = in_strides[perm[i]];
    const std::size_t n = x.numel();
    const double* px = x.data().data();
    double* po = out.mutable_data().data();
    std::vector<std::size_t> idx(perm.size(), 0);
    std::size_t in_flat = 0;
    for (std::size_t o = 0; o < n; ++o) {
        po[o] = px[in_flat];
        for (std::size_t ax = perm.size(); ax-- > 0;) {
            ++idx[ax];
            in_flat += step[ax];
            if (idx[ax] < out_shape[ax]) break;
            in_flat -= step[ax] * out_shape[ax];
            idx[ax] = 0;
        }
    }
    if (detail::should_record({&x})) {
        NodePtr nx = x.node_ptr(), no = out.node_ptr();
        detail::record(out, [nx, no, out_shape, step, n] {
            nx->ensure_grad();
            std::vector<std::size_t> idx(out_shape.size(), 0);
            std::size_t in_flat = 0;
            for (std::size_t o = 0; o < n; ++o) {
                nx->grad[in_flat] += no->grad[o];
                for (std::size_t ax = out_shape.size(); ax-- > 0;) {
                    ++idx[ax];
                    in_flat += step[ax];
                    if (idx[ax] < out_shape[ax]) break;
                    in_flat -= step[ax] * out_shape[ax];
                    idx[ax] = 0;
                }
            }
        });
    }
    return out;
}

Tensor reshape(const Tensor& x, Shape new_shape) {
    if (shape_numel(new_shape) != x.numel()) {
        throw std::invalid_argument("reshape: new shape " + shape_str(new_shape) +
                                    " does not preserve element count " +
                                    std::to_string(x.numel()));
    }
    Tensor out = Tensor::from_data(std::move(new_shape),
                                   std::vector<double>(x.data().begin(), x.data().end()));
    if (detail::should_record({&x})) {
        NodePtr nx = x.node_ptr(), no = out.node_ptr();
        detail::record(out, [nx, no] {
            nx->ensure_grad();
            axpy(nx->grad, no->grad);
        });
    }
    return out;
}

Tensor softmax(const Tensor& x, std::size_t axis) {
    if (axis >= x.rank()) {
        throw std::invalid_argument("softmax: axis " + std::to_string(axis) + " out of rank " +
                                    std::to_string(x.rank()));
    }
    const Shape& s = x.shape();
    const std::size_t k = s[axis];
    std::size_t inner = 1;
    for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
    const std::size_t outer = x.numel() / (k * inner);
    Tensor out = Tensor::zeros(s);
    const double* px = x.data().data();
    double* po = out.mutable_data().data();
    for (std::size_t a = 0; a < outer; ++a) {
        for (std::size_t b = 0; b < inner; ++b) {
            const std::size_t base = a * k * inner + b;
            double mx = px[base];
            for (std::size_t c = 1; c < k; ++c) mx = std::max(mx, px[base + c * inner]);
            double z = 0.0;
            for (std::size_t c = 0; c < k; ++c) {
                const double e = std::exp(px[base + c * inner] - mx);
                po[base + c * inner] = e;
                z += e;
            }
            const double inv = 1.0 / z;
            for (std::size_t c = 0; c < k; ++c) po[base + c * inner] *= inv;
        }
    }
    if (detail::should_record({&x})) {
        NodePtr nx = x.node_ptr(), no = out.node_ptr();
        detail::record(out, [nx, no, outer, inner, k] {
            nx->ensure_grad();
            for (std::size_t a = 0; a < outer; ++a) {
                for (std::size_t b = 0; b < inner; ++b) {
                    const std::size_t base = a * k * inner + b;
                    double dot = 0.0;
                    for (std::size_t c = 0; c < k; ++c) {
                        dot += no->grad[base + c * inner] * no->data[base + c * inner];
                    }
                    for (std::size_t c = 0; c < k; ++c) {
                        const std::size_t i = base + c * inner;
                        nx->grad[i] += no->data[i] * (no->grad[i] - dot);
                    }
                }
            }
        });
    }
    return out;
}

std::uint64_t Rng::next_u64() {
    // splitmix64
    std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

double Rng::uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double Rng::normal() {
    if (has_spare_) {
        has_spare_ = false;
        return spare_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double two_pi = 6.283185307179586476925286766559;
    spare_ = r * std::sin(two_pi * u2);
    has_spare_ = true;
    return r * std::cos(two_pi * u2);
}

std::uint64_t Rng::uniform_int(std::uint64_t bound) {
    if (bound == 0) throw std::invalid_argument("uniform_int: bound must be positive");
    const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % bound);
    std::uint64_t v = next_u64();
    while (v >= limit) v = next_u64();
    return v % bound;
}

Rng Rng::fork(std::uint64_t stream) const {
    Rng child(state_ ^ (0xD6E8FEB86659FD93ULL * (stream + 1)));
    child.next_u64();
    return child;
}

}  // namespace nowcast
