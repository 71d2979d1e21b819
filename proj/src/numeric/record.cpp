#include "pfedgpa/record.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>

#include "pfedgpa/parallel.hpp"

namespace pfedgpa {

const char* op_name(OpKind kind) {
    switch (kind) {
        case OpKind::Input: return "input";
        case OpKind::Param: return "param";
        case OpKind::Affine: return "affine";
        case OpKind::Conv1d: return "conv1d";
        case OpKind::Conv2d: return "conv2d";
        case OpKind::Relu: return "relu";
        case OpKind::Gelu: return "gelu";
        case OpKind::Silu: return "silu";
        case OpKind::Add: return "add";
        case OpKind::Mul: return "mul";
        case OpKind::Scale: return "scale";
        case OpKind::AddChannel: return "add_channel";
        case OpKind::LayerNorm: return "layer_norm";
        case OpKind::Reshape: return "reshape";
        case OpKind::ConcatChannels: return "concat_channels";
        case OpKind::Upsample1d: return "upsample1d";
        case OpKind::SoftmaxXent: return "softmax_xent";
        case OpKind::SquaredError: return "squared_error";
        case OpKind::Mean: return "mean";
        case OpKind::Sum: return "sum";
    }
    return "?";
}

// ---------------------------------------------------------------------------
// record construction

NodeId Record::push(Node n) {
    nodes_.push_back(std::move(n));
    return {static_cast<std::uint32_t>(nodes_.size() - 1)};
}

const Node& Record::get(NodeId n) const {
    if (n.index >= nodes_.size()) {
        throw LayoutError("node id " + std::to_string(n.index) + " out of range");
    }
    return nodes_[n.index];
}

NodeId Record::input(Shape feature_shape) {
    Node n;
    n.kind = OpKind::Input;
    n.shape = feature_shape;
    n.batched = true;
    n.slot = input_shapes_.size();
    input_shapes_.push_back(std::move(feature_shape));
    return push(std::move(n));
}

NodeId Record::param(const std::string& name, Shape shape) {
    Node n;
    n.kind = OpKind::Param;
    n.param_offset = layout_.append(name, shape);
    n.shape = std::move(shape);
    return push(std::move(n));
}

namespace {
void require(bool ok, const std::string& what) {
    if (!ok) {
        throw LayoutError(what);
    }
}
}  // namespace

NodeId Record::affine(NodeId x, NodeId w, NodeId b) {
    const auto& X = get(x);
    const auto& W = get(w);
    const auto& Bn = get(b);
    require(X.batched && X.shape.size() == 1, "affine: input must be [B,in]");
    require(W.kind == OpKind::Param && W.shape.size() == 2 && W.shape[1] == X.shape[0],
            "affine: weight shape " + shape_str(W.shape) + " incompatible with input " + shape_str(X.shape));
    require(Bn.kind == OpKind::Param && Bn.shape == Shape{W.shape[0]}, "affine: bias shape mismatch");
    Node n;
    n.kind = OpKind::Affine;
    n.in0 = static_cast<std::int32_t>(x.index);
    n.in1 = static_cast<std::int32_t>(w.index);
    n.in2 = static_cast<std::int32_t>(b.index);
    n.shape = {W.shape[0]};
    n.batched = true;
    return push(std::move(n));
}

NodeId Record::conv1d(NodeId x, NodeId w, NodeId b, std::size_t stride, std::size_t pad) {
    const auto& X = get(x);
    const auto& W = get(w);
    const auto& Bn = get(b);
    require(X.batched && X.shape.size() == 2, "conv1d: input must be [B,C,L]");
    require(W.kind == OpKind::Param && W.shape.size() == 3 && W.shape[1] == X.shape[0],
            "conv1d: weight shape " + shape_str(W.shape) + " incompatible with input " + shape_str(X.shape));
    require(Bn.kind == OpKind::Param && Bn.shape == Shape{W.shape[0]}, "conv1d: bias shape mismatch");
    require(stride >= 1, "conv1d: stride must be positive");
    const std::size_t K = W.shape[2];
    require(X.shape[1] + 2 * pad >= K, "conv1d: kernel longer than padded input");
    Node n;
    n.kind = OpKind::Conv1d;
    n.in0 = static_cast<std::int32_t>(x.index);
    n.in1 = static_cast<std::int32_t>(w.index);
    n.in2 = static_cast<std::int32_t>(b.index);
    n.stride = stride;
    n.pad = pad;
    n.shape = {W.shape[0], (X.shape[1] + 2 * pad - K) / stride + 1};
    n.batched = true;
    return push(std::move(n));
}

NodeId Record::conv2d(NodeId x, NodeId w, NodeId b, std::size_t stride, std::size_t pad) {
    const auto& X = get(x);
    const auto& W = get(w);
    const auto& Bn = get(b);
    require(X.batched && X.shape.size() == 3, "conv2d: input must be [B,C,H,W]");
    require(W.kind == OpKind::Param && W.shape.size() == 4 && W.shape[1] == X.shape[0] && W.shape[2] == W.shape[3],
            "conv2d: weight shape " + shape_str(W.shape) + " incompatible with input " + shape_str(X.shape));
    require(Bn.kind == OpKind::Param && Bn.shape == Shape{W.shape[0]}, "conv2d: bias shape mismatch");
    require(stride >= 1, "conv2d: stride must be positive");
    const std::size_t K = W.shape[2];
    require(X.shape[1] + 2 * pad >= K && X.shape[2] + 2 * pad >= K, "conv2d: kernel larger than padded input");
    Node n;
    n.kind = OpKind::Conv2d;
    n.in0 = static_cast<std::int32_t>(x.index);
    n.in1 = static_cast<std::int32_t>(w.index);
    n.in2 = static_cast<std::int32_t>(b.index);
    n.stride = stride;
    n.pad = pad;
    n.shape = {W.shape[0], (X.shape[1] + 2 * pad - K) / stride + 1, (X.shape[2] + 2 * pad - K) / stride + 1};
    n.batched = true;
    return push(std::move(n));
}

namespace {
Node unary(OpKind kind, NodeId x, const Node& X) {
    Node n;
    n.kind = kind;
    n.in0 = static_cast<std::int32_t>(x.index);
    n.shape = X.shape;
    n.batched = X.batched;
    return n;
}
}  // namespace

NodeId Record::relu(NodeId x) { return push(unary(OpKind::Relu, x, get(x))); }
NodeId Record::gelu(NodeId x) { return push(unary(OpKind::Gelu, x, get(x))); }
NodeId Record::silu(NodeId x) { return push(unary(OpKind::Silu, x, get(x))); }

NodeId Record::scale(NodeId x, double c) {
    Node n = unary(OpKind::Scale, x, get(x));
    n.scalar = c;
    return push(std::move(n));
}

NodeId Record::add(NodeId a, NodeId b) {
    const auto& A = get(a);
    const auto& Bn = get(b);
    require(A.shape == Bn.shape && A.batched == Bn.batched,
            "add: operand shapes differ " + shape_str(A.shape) + " vs " + shape_str(Bn.shape));
    Node n = unary(OpKind::Add, a, A);
    n.in1 = static_cast<std::int32_t>(b.index);
    return push(std::move(n));
}

NodeId Record::mul(NodeId a, NodeId b) {
    const auto& A = get(a);
    const auto& Bn = get(b);
    require(A.shape == Bn.shape && A.batched == Bn.batched,
            "mul: operand shapes differ " + shape_str(A.shape) + " vs " + shape_str(Bn.shape));
    Node n = unary(OpKind::Mul, a, A);
    n.in1 = static_cast<std::int32_t>(b.index);
    return push(std::move(n));
}

NodeId Record::add_channel(NodeId x, NodeId e) {
    const auto& X = get(x);
    const auto& E = get(e);
    require(X.batched && E.batched && X.shape.size() >= 2 && E.shape == Shape{X.shape[0]},
            "add_channel: expected x:[B,C,...] and e:[B,C]");
    Node n = unary(OpKind::AddChannel, x, X);
    n.in1 = static_cast<std::int32_t>(e.index);
    return push(std::move(n));
}

NodeId Record::layer_norm(NodeId x, NodeId gamma, NodeId beta) {
    const auto& X = get(x);
    require(X.batched, "layer_norm: input must be batched");
    require(get(gamma).kind == OpKind::Param && get(gamma).shape == X.shape, "layer_norm: gamma shape mismatch");
    require(get(beta).kind == OpKind::Param && get(beta).shape == X.shape, "layer_norm: beta shape mismatch");
    Node n = unary(OpKind::LayerNorm, x, X);
    n.in1 = static_cast<std::int32_t>(gamma.index);
    n.in2 = static_cast<std::int32_t>(beta.index);
    return push(std::move(n));
}

NodeId Record::reshape(NodeId x, Shape feature_shape) {
    const auto& X = get(x);
    require(numel(X.shape) == numel(feature_shape),
            "reshape: " + shape_str(X.shape) + " -> " + shape_str(feature_shape) + " changes the element count");
    Node n = unary(OpKind::Reshape, x, X);
    n.shape = std::move(feature_shape);
    return push(std::move(n));
}

NodeId Record::concat_channels(NodeId a, NodeId b) {
    const auto& A = get(a);
    const auto& Bn = get(b);
    require(A.batched && Bn.batched && A.shape.size() >= 2 && A.shape.size() == Bn.shape.size() &&
                std::equal(A.shape.begin() + 1, A.shape.end(), Bn.shape.begin() + 1),
            "concat_channels: incompatible shapes " + shape_str(A.shape) + " and " + shape_str(Bn.shape));
    Node n = unary(OpKind::ConcatChannels, a, A);
    n.in1 = static_cast<std::int32_t>(b.index);
    n.shape[0] = A.shape[0] + Bn.shape[0];
    return push(std::move(n));
}

NodeId Record::upsample1d(NodeId x) {
    const auto& X = get(x);
    require(X.batched && X.shape.size() == 2, "upsample1d: input must be [B,C,L]");
    Node n = unary(OpKind::Upsample1d, x, X);
    n.shape[1] *= 2;
    return push(std::move(n));
}

NodeId Record::softmax_xent(NodeId logits) {
    const auto& L = get(logits);
    require(L.batched && L.shape.size() == 1 && L.shape[0] >= 1, "softmax_xent: logits must be [B,K]");
    Node n = unary(OpKind::SoftmaxXent, logits, L);
    n.shape = {};
    n.batched = false;
    return push(std::move(n));
}

NodeId Record::squared_error(NodeId pred, NodeId target) {
    const auto& P = get(pred);
    const auto& Tn = get(target);
    require(P.batched && Tn.batched && P.shape == Tn.shape, "squared_error: prediction/target shape mismatch");
    Node n = unary(OpKind::SquaredError, pred, P);
    n.in1 = static_cast<std::int32_t>(target.index);
    n.shape = {};
    n.batched = false;
    return push(std::move(n));
}

NodeId Record::mean(NodeId x) {
    Node n = unary(OpKind::Mean, x, get(x));
    n.shape = {};
    n.batched = false;
    return push(std::move(n));
}

NodeId Record::sum(NodeId x) {
    Node n = unary(OpKind::Sum, x, get(x));
    n.shape = {};
    n.batched = false;
    return push(std::move(n));
}

void Record::set_loss(NodeId n) {
    const auto& L = get(n);
    require(!L.batched && numel(L.shape) == 1, "loss node must be an unbatched scalar");
    loss_ = n.index;
    has_loss_ = true;
}

// ---------------------------------------------------------------------------
// replay

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using CMap = Eigen::Map<const RowMat<T>>;
template <typename T>
using MMap = Eigen::Map<RowMat<T>>;

constexpr double kLayerNormEps = 1e-5;

template <typename T>
T sigmoid(T x) {
    return T(1) / (T(1) + std::exp(-x));
}

// tanh approximation of GeLU
template <typename T>
T gelu_fwd(T x) {
    const T c = T(0.7978845608028654);
    const T u = c * (x + T(0.044715) * x * x * x);
    return T(0.5) * x * (T(1) + std::tanh(u));
}

template <typename T>
T gelu_grad(T x) {
    const T c = T(0.7978845608028654);
    const T u = c * (x + T(0.044715) * x * x * x);
    const T th = std::tanh(u);
    const T du = c * (T(1) + T(3) * T(0.044715) * x * x);
    return T(0.5) * (T(1) + th) + T(0.5) * x * (T(1) - th * th) * du;
}

template <typename T>
class Replay {
public:
    Replay(const Record& rec, std::span<const T> params, const Batch<T>& batch)
        : rec_(rec), params_(params), batch_(batch), val_(rec.nodes().size()), grad_(rec.nodes().size()) {
        if (params.size() != rec.layout().total()) {
            throw LayoutError("parameter vector has length " + std::to_string(params.size()) +
                              ", record layout expects " + std::to_string(rec.layout().total()));
        }
        B_ = batch.size;
    }

    void run_forward(std::uint32_t target) {
        std::vector<char> need(rec_.nodes().size(), 0);
        need[target] = 1;
        for (std::int64_t i = target; i >= 0; --i) {
            if (!need[i]) {
                continue;
            }
            const Node& n = rec_.nodes()[i];
            for (std::int32_t in : {n.in0, n.in1, n.in2}) {
                if (in >= 0) {
                    need[in] = 1;
                }
            }
        }
        for (std::uint32_t i = 0; i <= target; ++i) {
            if (need[i]) {
                forward_node(i);
            }
        }
    }

    const T* value(std::uint32_t i) const {
        const Node& n = rec_.nodes()[i];
        if (n.kind == OpKind::Param) {
            return params_.data() + n.param_offset;
        }
        return val_[i].data();
    }

    std::size_t count(std::uint32_t i) const {
        const Node& n = rec_.nodes()[i];
        return n.batched ? B_ * numel(n.shape) : numel(n.shape);
    }

    Tensor<T> tensor(std::uint32_t i) const {
        const Node& n = rec_.nodes()[i];
        Shape s = n.shape;
        if (n.batched) {
            s.insert(s.begin(), B_);
        }
        return Tensor<T>(s, std::vector<T>(value(i), value(i) + count(i)));
    }

    std::vector<T> run_backward(std::uint32_t loss) {
        grad_[loss].assign(1, T(1));
        for (std::int64_t i = loss; i >= 0; --i) {
            if (grad_[i].empty()) {
                continue;
            }
            backward_node(static_cast<std::uint32_t>(i));
        }
        std::vector<T> out(rec_.layout().total(), T(0));
        for (std::uint32_t i = 0; i < rec_.nodes().size(); ++i) {
            const Node& n = rec_.nodes()[i];
            if (n.kind == OpKind::Param && !grad_[i].empty()) {
                std::copy(grad_[i].begin(), grad_[i].end(), out.begin() + static_cast<std::ptrdiff_t>(n.param_offset));
            }
        }
        return out;
    }

private:
    T* acc(std::int32_t i) {
        auto& g = grad_[i];
        if (g.empty()) {
            g.assign(count(static_cast<std::uint32_t>(i)), T(0));
        }
        return g.data();
    }

    void forward_node(std::uint32_t i) {
        const Node& n = rec_.nodes()[i];
        if (n.kind == OpKind::Param) {
            return;
        }
        auto& out = val_[i];
        out.assign(count(i), T(0));
        const std::size_t B = B_;
        switch (n.kind) {
            case OpKind::Input: {
                if (n.slot >= batch_.inputs.size()) {
                    throw LayoutError("batch is missing input slot " + std::to_string(n.slot));
                }
                const auto& t = batch_.inputs[n.slot];
                Shape want = n.shape;
                want.insert(want.begin(), B);
                if (t.shape != want) {
                    throw LayoutError("input slot " + std::to_string(n.slot) + " expects " + shape_str(want) +
                                      ", got " + shape_str(t.shape));
                }
                std::copy(t.data.begin(), t.data.end(), out.begin());
                break;
            }
            case OpKind::Affine: {
                const Node& W = rec_.nodes()[n.in1];
                const std::size_t O = W.shape[0];
                const std::size_t I = W.shape[1];
                CMap<T> x(value(n.in0), B, I);
                CMap<T> w(value(n.in1), O, I);
                Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>> b(value(n.in2), O);
                MMap<T> y(out.data(), B, O);
                y.noalias() = x * w.transpose();
                y.rowwise() += b;
                break;
            }
            case OpKind::Conv1d: conv1d_forward(n, out); break;
            case OpKind::Conv2d: conv2d_forward(n, out); break;
            case OpKind::Relu: {
                const T* x = value(n.in0);
                for (std::size_t k = 0; k < out.size(); ++k) out[k] = x[k] > T(0) ? x[k] : T(0);
                break;
            }
            case OpKind::Gelu: {
                const T* x = value(n.in0);
                for (std::size_t k = 0; k < out.size(); ++k) out[k] = gelu_fwd(x[k]);
                break;
            }
            case OpKind::Silu: {
                const T* x = value(n.in0);
                for (std::size_t k = 0; k < out.size(); ++k) out[k] = x[k] * sigmoid(x[k]);
                break;
            }
            case OpKind::Add: {
                const T* a = value(n.in0);
                const T* b = value(n.in1);
                for (std::size_t k = 0; k < out.size(); ++k) out[k] = a[k] + b[k];
                break;
            }
            case OpKind::Mul: {
                const T* a = value(n.in0);
                const T* b = value(n.in1);
                for (std::size_t k = 0; k < out.size(); ++k) out[k] = a[k] * b[k];
                break;
            }
            case OpKind::Scale: {
                const T* a = value(n.in0);
                const T c = static_cast<T>(n.scalar);
                for (std::size_t k = 0; k < out.size(); ++k) out[k] = c * a[k];
                break;
            }
            case OpKind::AddChannel: {
                const T* x = value(n.in0);
                const T* e = value(n.in1);
                const std::size_t C = n.shape[0];
                const std::size_t inner = numel(n.shape) / C;
                for (std::size_t bc = 0; bc < B * C; ++bc) {
                    for (std::size_t k = 0; k < inner; ++k) out[bc * inner + k] = x[bc * inner + k] + e[bc];
                }
                break;
            }
            case OpKind::LayerNorm: {
                const T* x = value(n.in0);
                const T* g = value(n.in1);
                const T* be = value(n.in2);
                const std::size_t F = numel(n.shape);
                for (std::size_t b = 0; b < B; ++b) {
                    const T* xb = x + b * F;
                    double mu = 0.0;
                    for (std::size_t k = 0; k < F; ++k) mu += xb[k];
                    mu /= static_cast<double>(F);
                    double var = 0.0;
                    for (std::size_t k = 0; k < F; ++k) var += (xb[k] - mu) * (xb[k] - mu);
                    var /= static_cast<double>(F);
                    const double rstd = 1.0 / std::sqrt(var + kLayerNormEps);
                    for (std::size_t k = 0; k < F; ++k) {
                        out[b * F + k] = static_cast<T>((xb[k] - mu) * rstd) * g[k] + be[k];
                    }
                }
                break;
            }
            case OpKind::Reshape: {
                const T* x = value(n.in0);
                std::copy(x, x + out.size(), out.begin());
                break;
            }
            case OpKind::ConcatChannels: {
                const Node& A = rec_.nodes()[n.in0];
                const std::size_t na = numel(A.shape);
                const std::size_t nb = numel(n.shape) - na;
                const T* a = value(n.in0);
                const T* bb = value(n.in1);
                for (std::size_t b = 0; b < B; ++b) {
                    std::copy(a + b * na, a + (b + 1) * na, out.begin() + b * (na + nb));
                    std::copy(bb + b * nb, bb + (b + 1) * nb, out.begin() + b * (na + nb) + na);
                }
                break;
            }
            case OpKind::Upsample1d: {
                const T* x = value(n.in0);
                const std::size_t rows = count(n.in0) / rec_.nodes()[n.in0].shape[1];
                const std::size_t L = rec_.nodes()[n.in0].shape[1];
                for (std::size_t r = 0; r < rows; ++r) {
                    for (std::size_t l = 0; l < L; ++l) {
                        out[r * 2 * L + 2 * l] = x[r * L + l];
                        out[r * 2 * L + 2 * l + 1] = x[r * L + l];
                    }
                }
                break;
            }
            case OpKind::SoftmaxXent: {
                const T* z = value(n.in0);
                const std::size_t K = rec_.nodes()[n.in0].shape[0];
                if (batch_.labels.size() != B) {
                    throw LayoutError("softmax_xent needs one label per example (" + std::to_string(B) + "), got " +
                                      std::to_string(batch_.labels.size()));
                }
                double total = 0.0;
                for (std::size_t b = 0; b < B; ++b) {
                    const int y = batch_.labels[b];
                    if (y < 0 || static_cast<std::size_t>(y) >= K) {
                        throw LayoutError("label " + std::to_string(y) + " outside [0," + std::to_string(K) + ")");
                    }
                    const T* zb = z + b * K;
                    const double m = *std::max_element(zb, zb + K);
                    double s = 0.0;
                    for (std::size_t k = 0; k < K; ++k) s += std::exp(zb[k] - m);
                    total += (m + std::log(s)) - zb[y];
                }
                out[0] = static_cast<T>(total / static_cast<double>(B));
                break;
            }
            case OpKind::SquaredError: {
                const T* p = value(n.in0);
                const T* t = value(n.in1);
                const std::size_t cnt = count(n.in0);
                double total = 0.0;
                for (std::size_t k = 0; k < cnt; ++k) {
                    const double d = static_cast<double>(p[k]) - static_cast<double>(t[k]);
                    total += d * d;
                }
                out[0] = static_cast<T>(total / static_cast<double>(B));
                break;
            }
            case OpKind::Mean:
            case OpKind::Sum: {
                const T* x = value(n.in0);
                const std::size_t cnt = count(n.in0);
                double total = 0.0;
                for (std::size_t k = 0; k < cnt; ++k) total += x[k];
                const bool batched = rec_.nodes()[n.in0].batched;
                const double denom = n.kind == OpKind::Mean ? static_cast<double>(cnt)
                                                            : (batched ? static_cast<double>(B) : 1.0);
                out[0] = static_cast<T>(total / denom);
                break;
            }
            case OpKind::Param: break;
        }
        if (!all_finite<T>(out)) {
            throw NumericError(std::string("non-finite value produced by op #") + std::to_string(i) + " (" +
                                   op_name(n.kind) + ")",
                               i);
        }
    }

    // im2col helpers; cols is [C*K, Lout] (1-D) or [C*K*K, Ho*Wo] (2-D)
    void im2col1d(const T* x, std::size_t C, std::size_t L, std::size_t K, std::size_t s, std::size_t p,
                  std::size_t Lo, T* cols) const {
        for (std::size_t c = 0; c < C; ++c) {
            for (std::size_t k = 0; k < K; ++k) {
                T* row = cols + (c * K + k) * Lo;
                for (std::size_t l = 0; l < Lo; ++l) {
                    const std::ptrdiff_t pos = static_cast<std::ptrdiff_t>(l * s + k) - static_cast<std::ptrdiff_t>(p);
                    row[l] = (pos >= 0 && pos < static_cast<std::ptrdiff_t>(L)) ? x[c * L + pos] : T(0);
                }
            }
        }
    }

    void col2im1d(const T* cols, std::size_t C, std::size_t L, std::size_t K, std::size_t s, std::size_t p,
                  std::size_t Lo, T* dx) const {
        for (std::size_t c = 0; c < C; ++c) {
            for (std::size_t k = 0; k < K; ++k) {
                const T* row = cols + (c * K + k) * Lo;
                for (std::size_t l = 0; l < Lo; ++l) {
                    const std::ptrdiff_t pos = static_cast<std::ptrdiff_t>(l * s + k) - static_cast<std::ptrdiff_t>(p);
                    if (pos >= 0 && pos < static_cast<std::ptrdiff_t>(L)) dx[c * L + pos] += row[l];
                }
            }
        }
    }

    void im2col2d(const T* x, std::size_t C, std::size_t H, std::size_t Wd, std::size_t K, std::size_t s,
                  std::size_t p, std::size_t Ho, std::size_t Wo, T* cols) const {
        for (std::size_t c = 0; c < C; ++c) {
            for (std::size_t ki = 0; ki < K; ++ki) {
                for (std::size_t kj = 0; kj < K; ++kj) {
                    T* row = cols + ((c * K + ki) * K + kj) * Ho * Wo;
                    for (std::size_t i = 0; i < Ho; ++i) {
                        const std::ptrdiff_t r = static_cast<std::ptrdiff_t>(i * s + ki) - static_cast<std::ptrdiff_t>(p);
                        for (std::size_t j = 0; j < Wo; ++j) {
                            const std::ptrdiff_t q =
                                static_cast<std::ptrdiff_t>(j * s + kj) - static_cast<std::ptrdiff_t>(p);
                            const bool inside = r >= 0 && r < static_cast<std::ptrdiff_t>(H) && q >= 0 &&
                                                q < static_cast<std::ptrdiff_t>(Wd);
                            row[i * Wo + j] = inside ? x[(c * H + r) * Wd + q] : T(0);
                        }
                    }
                }
            }
        }
    }

    void col2im2d(const T* cols, std::size_t C, std::size_t H, std::size_t Wd, std::size_t K, std::size_t s,
                  std::size_t p, std::size_t Ho, std::size_t Wo, T* dx) const {
        for (std::size_t c = 0; c < C; ++c) {
            for (std::size_t ki = 0; ki < K; ++ki) {
                for (std::size_t kj = 0; kj < K; ++kj) {
                    const T* row = cols + ((c * K + ki) * K + kj) * Ho * Wo;
                    for (std::size_t i = 0; i < Ho; ++i) {
                        const std::ptrdiff_t r = static_cast<std::ptrdiff_t>(i * s + ki) - static_cast<std::ptrdiff_t>(p);
                        if (r < 0 || r >= static_cast<std::ptrdiff_t>(H)) continue;
                        for (std::size_t j = 0; j < Wo; ++j) {
                            const std::ptrdiff_t q =
                                static_cast<std::ptrdiff_t>(j * s + kj) - static_cast<std::ptrdiff_t>(p);
                            if (q >= 0 && q < static_cast<std::ptrdiff_t>(Wd)) dx[(c * H + r) * Wd + q] += row[i * Wo + j];
                        }
                    }
                }
            }
        }
    }

    void conv1d_forward(const Node& n, std::vector<T>& out) {
        const Node& X = rec_.nodes()[n.in0];
        const Node& W = rec_.nodes()[n.in1];
        const std::size_t C = X.shape[0], L = X.shape[1], O = W.shape[0], K = W.shape[2], Lo = n.shape[1];
        std::vector<T> cols(C * K * Lo);
        CMap<T> w(value(n.in1), O, C * K);
        const T* bias = value(n.in2);
        for (std::size_t b = 0; b < B_; ++b) {
            im2col1d(value(n.in0) + b * C * L, C, L, K, n.stride, n.pad, Lo, cols.data());
            MMap<T> y(out.data() + b * O * Lo, O, Lo);
            y.noalias() = w * CMap<T>(cols.data(), C * K, Lo);
            for (std::size_t o = 0; o < O; ++o) y.row(o).array() += bias[o];
        }
    }

    void conv2d_forward(const Node& n, std::vector<T>& out) {
        const Node& X = rec_.nodes()[n.in0];
        const Node& W = rec_.nodes()[n.in1];
        const std::size_t C = X.shape[0], H = X.shape[1], Wd = X.shape[2], O = W.shape[0], K = W.shape[2];
        const std::size_t Ho = n.shape[1], Wo = n.shape[2];
        std::vector<T> cols(C * K * K * Ho * Wo);
        CMap<T> w(value(n.in1), O, C * K * K);
        const T* bias = value(n.in2);
        for (std::size_t b = 0; b < B_; ++b) {
            im2col2d(value(n.in0) + b * C * H * Wd, C, H, Wd, K, n.stride, n.pad, Ho, Wo, cols.data());
            MMap<T> y(out.data() + b * O * Ho * Wo, O, Ho * Wo);
            y.noalias() = w * CMap<T>(cols.data(), C * K * K, Ho * Wo);
            for (std::size_t o = 0; o < O; ++o) y.row(o).array() += bias[o];
        }
    }

    void backward_node(std::uint32_t i) {
        const Node& n = rec_.nodes()[i];
        const std::vector<T>& g = grad_[i];
        const std::size_t B = B_;
        switch (n.kind) {
            case OpKind::Input:
            case OpKind::Param: break;
            case OpKind::Affine: {
                const Node& W = rec_.nodes()[n.in1];
                const std::size_t O = W.shape[0];
                const std::size_t I = W.shape[1];
                CMap<T> dy(g.data(), B, O);
                CMap<T> x(value(n.in0), B, I);
                CMap<T> w(value(n.in1), O, I);
                if (rec_.nodes()[n.in0].kind != OpKind::Input) {
                    MMap<T> dx(acc(n.in0), B, I);
                    dx.noalias() += dy * w;
                }
                MMap<T> dw(acc(n.in1), O, I);
                dw.noalias() += dy.transpose() * x;
                Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>> db(acc(n.in2), O);
                db += dy.colwise().sum();
                break;
            }
            case OpKind::Conv1d: {
                const Node& X = rec_.nodes()[n.in0];
                const Node& W = rec_.nodes()[n.in1];
                const std::size_t C = X.shape[0], L = X.shape[1], O = W.shape[0], K = W.shape[2], Lo = n.shape[1];
                const bool need_dx = X.kind != OpKind::Input;
                std::vector<T> cols(C * K * Lo);
                std::vector<T> dcols(need_dx ? C * K * Lo : 0);
                CMap<T> w(value(n.in1), O, C * K);
                MMap<T> dw(acc(n.in1), O, C * K);
                T* db = acc(n.in2);
                T* dx = need_dx ? acc(n.in0) : nullptr;
                for (std::size_t b = 0; b < B; ++b) {
                    CMap<T> dy(g.data() + b * O * Lo, O, Lo);
                    im2col1d(value(n.in0) + b * C * L, C, L, K, n.stride, n.pad, Lo, cols.data());
                    dw.noalias() += dy * CMap<T>(cols.data(), C * K, Lo).transpose();
                    for (std::size_t o = 0; o < O; ++o) db[o] += dy.row(o).sum();
                    if (need_dx) {
                        MMap<T>(dcols.data(), C * K, Lo).noalias() = w.transpose() * dy;
                        col2im1d(dcols.data(), C, L, K, n.stride, n.pad, Lo, dx + b * C * L);
                    }
                }
                break;
            }
            case OpKind::Conv2d: {
                const Node& X = rec_.nodes()[n.in0];
                const Node& W = rec_.nodes()[n.in1];
                const std::size_t C = X.shape[0], H = X.shape[1], Wd = X.shape[2], O = W.shape[0], K = W.shape[2];
                const std::size_t Ho = n.shape[1], Wo = n.shape[2];
                const bool need_dx = X.kind != OpKind::Input;
                std::vector<T> cols(C * K * K * Ho * Wo);
                std::vector<T> dcols(need_dx ? cols.size() : 0);
                CMap<T> w(value(n.in1), O, C * K * K);
                MMap<T> dw(acc(n.in1), O, C * K * K);
                T* db = acc(n.in2);
                T* dx = need_dx ? acc(n.in0) : nullptr;
                for (std::size_t b = 0; b < B; ++b) {
                    CMap<T> dy(g.data() + b * O * Ho * Wo, O, Ho * Wo);
                    im2col2d(value(n.in0) + b * C * H * Wd, C, H, Wd, K, n.stride, n.pad, Ho, Wo, cols.data());
                    dw.noalias() += dy * CMap<T>(cols.data(), C * K * K, Ho * Wo).transpose();
                    for (std::size_t o = 0; o < O; ++o) db[o] += dy.row(o).sum();
                    if (need_dx) {
                        MMap<T>(dcols.data(), C * K * K, Ho * Wo).noalias() = w.transpose() * dy;
                        col2im2d(dcols.data(), C, H, Wd, K, n.stride, n.pad, Ho, Wo, dx + b * C * H * Wd);
                    }
                }
                break;
            }
            case OpKind::Relu: {
                const T* x = value(n.in0);
                T* dx = acc(n.in0);
                for (std::size_t k = 0; k < g.size(); ++k) dx[k] += x[k] > T(0) ? g[k] : T(0);
                break;
            }
            case OpKind::Gelu: {
                const T* x = value(n.in0);
                T* dx = acc(n.in0);
                for (std::size_t k = 0; k < g.size(); ++k) dx[k] += g[k] * gelu_grad(x[k]);
                break;
            }
            case OpKind::Silu: {
                const T* x = value(n.in0);
                T* dx = acc(n.in0);
                for (std::size_t k = 0; k < g.size(); ++k) {
                    const T s = sigmoid(x[k]);
                    dx[k] += g[k] * (s + x[k] * s * (T(1) - s));
                }
                break;
            }
            case OpKind::Add: {
                T* da = acc(n.in0);
                for (std::size_t k = 0; k < g.size(); ++k) da[k] += g[k];
                T* db = acc(n.in1);
                for (std::size_t k = 0; k < g.size(); ++k) db[k] += g[k];
                break;
            }
            case OpKind::Mul: {
                const T* a = value(n.in0);
                const T* b = value(n.in1);
                T* da = acc(n.in0);
                for (std::size_t k = 0; k < g.size(); ++k) da[k] += g[k] * b[k];
                T* db = acc(n.in1);
                for (std::size_t k = 0; k < g.size(); ++k) db[k] += g[k] * a[k];
                break;
            }
            case OpKind::Scale: {
                const T c = static_cast<T>(n.scalar);
                T* da = acc(n.in0);
                for (std::size_t k = 0; k < g.size(); ++k) da[k] += c * g[k];
                break;
            }
            case OpKind::AddChannel: {
                const std::size_t C = n.shape[0];
                const std::size_t inner = numel(n.shape) / C;
                T* dx = acc(n.in0);
                for (std::size_t k = 0; k < g.size(); ++k) dx[k] += g[k];
                T* de = acc(n.in1);
                for (std::size_t bc = 0; bc < B * C; ++bc) {
                    T s = T(0);
                    for (std::size_t k = 0; k < inner; ++k) s += g[bc * inner + k];
                    de[bc] += s;
                }
                break;
            }
            case OpKind::LayerNorm: {
                const T* x = value(n.in0);
                const T* gam = value(n.in1);
                const std::size_t F = numel(n.shape);
                T* dx = acc(n.in0);
                T* dg = acc(n.in1);
                T* dbeta = acc(n.in2);
                std::vector<double> xhat(F);
                std::vector<double> dxhat(F);
                for (std::size_t b = 0; b < B; ++b) {
                    const T* xb = x + b * F;
                    const T* gb = g.data() + b * F;
                    double mu = 0.0;
                    for (std::size_t k = 0; k < F; ++k) mu += xb[k];
                    mu /= static_cast<double>(F);
                    double var = 0.0;
                    for (std::size_t k = 0; k < F; ++k) var += (xb[k] - mu) * (xb[k] - mu);
                    var /= static_cast<double>(F);
                    const double rstd = 1.0 / std::sqrt(var + kLayerNormEps);
                    double s1 = 0.0;
                    double s2 = 0.0;
                    for (std::size_t k = 0; k < F; ++k) {
                        xhat[k] = (xb[k] - mu) * rstd;
                        dxhat[k] = static_cast<double>(gb[k]) * gam[k];
                        dg[k] += static_cast<T>(gb[k] * xhat[k]);
                        dbeta[k] += gb[k];
                        s1 += dxhat[k];
                        s2 += dxhat[k] * xhat[k];
                    }
                    const double inv_f = 1.0 / static_cast<double>(F);
                    for (std::size_t k = 0; k < F; ++k) {
                        dx[b * F + k] += static_cast<T>(rstd * (dxhat[k] - inv_f * s1 - xhat[k] * inv_f * s2));
                    }
                }
                break;
            }
            case OpKind::Reshape: {
                T* dx = acc(n.in0);
                for (std::size_t k = 0; k < g.size(); ++k) dx[k] += g[k];
                break;
            }
            case OpKind::ConcatChannels: {
                const Node& A = rec_.nodes()[n.in0];
                const std::size_t na = numel(A.shape);
                const std::size_t nb = numel(n.shape) - na;
                T* da = acc(n.in0);
                T* db = acc(n.in1);
                for (std::size_t b = 0; b < B; ++b) {
                    for (std::size_t k = 0; k < na; ++k) da[b * na + k] += g[b * (na + nb) + k];
                    for (std::size_t k = 0; k < nb; ++k) db[b * nb + k] += g[b * (na + nb) + na + k];
                }
                break;
            }
            case OpKind::Upsample1d: {
                const std::size_t L = rec_.nodes()[n.in0].shape[1];
                const std::size_t rows = count(n.in0) / L;
                T* dx = acc(n.in0);
                for (std::size_t r = 0; r < rows; ++r) {
                    for (std::size_t l = 0; l < L; ++l) dx[r * L + l] += g[r * 2 * L + 2 * l] + g[r * 2 * L + 2 * l + 1];
                }
                break;
            }
            case OpKind::SoftmaxXent: {
                const T* z = value(n.in0);
                const std::size_t K = rec_.nodes()[n.in0].shape[0];
                T* dz = acc(n.in0);
                const double scale = static_cast<double>(g[0]) / static_cast<double>(B);
                for (std::size_t b = 0; b < B; ++b) {
                    const T* zb = z + b * K;
                    const double m = *std::max_element(zb, zb + K);
                    double s = 0.0;
                    for (std::size_t k = 0; k < K; ++k) s += std::exp(zb[k] - m);
                    for (std::size_t k = 0; k < K; ++k) {
                        const double p = std::exp(zb[k] - m) / s;
                        const double y = static_cast<std::size_t>(batch_.labels[b]) == k ? 1.0 : 0.0;
                        dz[b * K + k] += static_cast<T>(scale * (p - y));
                    }
                }
                break;
            }
            case OpKind::SquaredError: {
                const T* p = value(n.in0);
                const T* t = value(n.in1);
                const T c = static_cast<T>(2.0 * static_cast<double>(g[0]) / static_cast<double>(B));
                T* dp = acc(n.in0);
                for (std::size_t k = 0; k < count(n.in0); ++k) dp[k] += c * (p[k] - t[k]);
                if (rec_.nodes()[n.in1].kind != OpKind::Input) {
                    T* dt = acc(n.in1);
                    for (std::size_t k = 0; k < count(n.in1); ++k) dt[k] -= c * (p[k] - t[k]);
                }
                break;
            }
            case OpKind::Mean:
            case OpKind::Sum: {
                const std::size_t cnt = count(n.in0);
                const bool batched = rec_.nodes()[n.in0].batched;
                const double denom = n.kind == OpKind::Mean ? static_cast<double>(cnt)
                                                            : (batched ? static_cast<double>(B) : 1.0);
                const T c = static_cast<T>(static_cast<double>(g[0]) / denom);
                T* dx = acc(n.in0);
                for (std::size_t k = 0; k < cnt; ++k) dx[k] += c;
                break;
            }
        }
    }

    const Record& rec_;
    std::span<const T> params_;
    const Batch<T>& batch_;
    std::size_t B_ = 0;
    std::vector<std::vector<T>> val_;
    std::vector<std::vector<T>> grad_;
};

template <typename T>
void check_batch(const Batch<T>& batch) {
    if (batch.size == 0) {
        throw LayoutError("batch is empty");
    }
}

}  // namespace

template <typename T>
LossAndGrad<T> value_and_grad(const Record& record, std::span<const T> params, const Batch<T>& batch) {
    if (!record.has_loss()) {
        throw LayoutError("record has no loss node");
    }
    check_batch(batch);
    Replay<T> replay(record, params, batch);
    replay.run_forward(record.loss().index);
    LossAndGrad<T> out;
    out.loss = replay.value(record.loss().index)[0];
    out.grads = replay.run_backward(record.loss().index);
    return out;
}

template <typename T>
Tensor<T> forward(const Record& record, std::span<const T> params, const Batch<T>& batch, NodeId node) {
    check_batch(batch);
    Replay<T> replay(record, params, batch);
    replay.run_forward(node.index);
    return replay.tensor(node.index);
}

template <typename T>
Tensor<T> forward(const Record& record, std::span<const T> params, const Batch<T>& batch) {
    return forward(record, params, batch, record.output());
}

template <typename T>
T loss_value(const Record& record, std::span<const T> params, const Batch<T>& batch) {
    if (!record.has_loss()) {
        throw LayoutError("record has no loss node");
    }
    return forward(record, params, batch, record.loss()).data[0];
}

template <typename T>
Batch<T> slice_batch(const Batch<T>& batch, std::size_t begin, std::size_t end) {
    if (begin > end || end > batch.size) {
        throw LayoutError("batch slice out of range");
    }
    Batch<T> out;
    out.size = end - begin;
    for (const auto& t : batch.inputs) {
        const std::size_t row = t.size() / batch.size;
        Shape s = t.shape;
        s[0] = out.size;
        out.inputs.emplace_back(
            s, std::vector<T>(t.data.begin() + static_cast<std::ptrdiff_t>(begin * row),
                              t.data.begin() + static_cast<std::ptrdiff_t>(end * row)));
    }
    if (!batch.labels.empty()) {
        out.labels.assign(batch.labels.begin() + static_cast<std::ptrdiff_t>(begin),
                          batch.labels.begin() + static_cast<std::ptrdiff_t>(end));
    }
    return out;
}

template <typename T>
LossAndGrad<T> value_and_grad_chunked(const Record& record, std::span<const T> params, const Batch<T>& batch,
                                      std::size_t chunk, std::size_t workers) {
    check_batch(batch);
    if (chunk == 0 || chunk >= batch.size) {
        return value_and_grad(record, params, batch);
    }
    const std::size_t n_chunks = (batch.size + chunk - 1) / chunk;
    std::vector<LossAndGrad<T>> parts(n_chunks);
    parallel_for(n_chunks, workers, [&](std::size_t c) {
        const std::size_t begin = c * chunk;
        const std::size_t end = std::min(batch.size, begin + chunk);
        parts[c] = value_and_grad(record, params, slice_batch(batch, begin, end));
    });
    LossAndGrad<T> out;
    out.grads.assign(params.size(), T(0));
    double loss = 0.0;
    for (std::size_t c = 0; c < n_chunks; ++c) {
        const std::size_t begin = c * chunk;
        const std::size_t end = std::min(batch.size, begin + chunk);
        const T w = static_cast<T>(static_cast<double>(end - begin) / static_cast<double>(batch.size));
        loss += static_cast<double>(w) * static_cast<double>(parts[c].loss);
        for (std::size_t k = 0; k < out.grads.size(); ++k) out.grads[k] += w * parts[c].grads[k];
    }
    out.loss = static_cast<T>(loss);
    return out;
}

template <typename T>
std::vector<T> sgd_step(std::span<const T> params, std::span<const T> grads, T lr) {
    if (params.size() != grads.size()) {
        throw LayoutError("sgd_step: params has " + std::to_string(params.size()) + " entries, grads has " +
                          std::to_string(grads.size()));
    }
    std::vector<T> out(params.size());
    for (std::size_t k = 0; k < params.size(); ++k) out[k] = params[k] - lr * grads[k];
    return out;
}

#define PFEDGPA_INSTANTIATE(T)                                                                                 \
    template LossAndGrad<T> value_and_grad(const Record&, std::span<const T>, const Batch<T>&);                \
    template Tensor<T> forward(const Record&, std::span<const T>, const Batch<T>&);                            \
    template Tensor<T> forward(const Record&, std::span<const T>, const Batch<T>&, NodeId);                    \
    template T loss_value(const Record&, std::span<const T>, const Batch<T>&);                                 \
    template LossAndGrad<T> value_and_grad_chunked(const Record&, std::span<const T>, const Batch<T>&,         \
                                                   std::size_t, std::size_t);                                  \
    template Batch<T> slice_batch(const Batch<T>&, std::size_t, std::size_t);                                  \
    template std::vector<T> sgd_step(std::span<const T>, std::span<const T>, T);

PFEDGPA_INSTANTIATE(float)
PFEDGPA_INSTANTIATE(double)
#undef PFEDGPA_INSTANTIATE

}  // namespace pfedgpa
