#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "pfedgpa/layout.hpp"
#include "pfedgpa/tensor.hpp"

namespace pfedgpa {

struct NodeId {
    std::uint32_t index = 0;
};

enum class OpKind : std::uint8_t {
    Input,
    Param,
    Affine,
    Conv1d,
    Conv2d,
    Relu,
    Gelu,
    Silu,
    Add,
    Mul,
    Scale,
    AddChannel,
    LayerNorm,
    Reshape,
    ConcatChannels,
    Upsample1d,
    SoftmaxXent,
    SquaredError,
    Mean,
    Sum,
};

const char* op_name(OpKind kind);

/// One primitive in a ComputationRecord. Batched nodes carry a leading batch
/// dimension at replay time; `shape` is the per-example feature shape.
struct Node {
    OpKind kind{};
    std::int32_t in0 = -1;
    std::int32_t in1 = -1;
    std::int32_t in2 = -1;
    Shape shape;
    bool batched = false;
    std::size_t param_offset = 0;  // Param
    std::size_t slot = 0;          // Input
    std::size_t stride = 1;        // Conv*
    std::size_t pad = 0;           // Conv*
    double scalar = 0.0;           // Scale
};

/// Labeled examples fed to a record: one tensor per declared input slot,
/// each with a leading batch dimension, plus integer labels when the record
/// contains a softmax-cross-entropy node.
template <typename T>
struct Batch {
    std::size_t size = 0;
    std::vector<Tensor<T>> inputs;
    std::vector<int> labels;
};

/// An ordered list of primitive operations over a flat parameter vector.
/// Records are precision-agnostic; replay picks float or double.
class Record {
public:
    NodeId input(Shape feature_shape);
    NodeId param(const std::string& name, Shape shape);

    /// x:[B,in] W:[out,in] b:[out] -> [B,out]
    NodeId affine(NodeId x, NodeId w, NodeId b);
    /// x:[B,C,L] W:[O,C,K] b:[O] -> [B,O,L']
    NodeId conv1d(NodeId x, NodeId w, NodeId b, std::size_t stride = 1, std::size_t pad = 0);
    /// x:[B,C,H,W] W:[O,C,K,K] b:[O] -> [B,O,H',W']
    NodeId conv2d(NodeId x, NodeId w, NodeId b, std::size_t stride = 1, std::size_t pad = 0);
    NodeId relu(NodeId x);
    NodeId gelu(NodeId x);
    NodeId silu(NodeId x);
    NodeId add(NodeId a, NodeId b);
    NodeId mul(NodeId a, NodeId b);
    NodeId scale(NodeId x, double c);
    /// x:[B,C,...] + e:[B,C], broadcast over trailing positions.
    NodeId add_channel(NodeId x, NodeId e);
    /// Normalizes each example over all its features; gamma/beta match the feature shape.
    NodeId layer_norm(NodeId x, NodeId gamma, NodeId beta);
    NodeId reshape(NodeId x, Shape feature_shape);
    NodeId concat_channels(NodeId a, NodeId b);
    /// Nearest-neighbour x2 along the last axis of [B,C,L].
    NodeId upsample1d(NodeId x);
    /// Mean over the batch of -log softmax(logits)[label].
    NodeId softmax_xent(NodeId logits);
    /// Mean over the batch of the per-example squared L2 distance to `target`.
    NodeId squared_error(NodeId pred, NodeId target);
    /// Mean of every element.
    NodeId mean(NodeId x);
    /// Per-example sum, averaged over the batch (plain sum for unbatched nodes).
    NodeId sum(NodeId x);

    void set_output(NodeId n) { output_ = n.index; }
    void set_loss(NodeId n);

    NodeId output() const { return {output_}; }
    NodeId loss() const { return {loss_}; }
    bool has_loss() const { return has_loss_; }
    const Layout& layout() const noexcept { return layout_; }
    const std::vector<Node>& nodes() const noexcept { return nodes_; }
    std::size_t input_count() const noexcept { return input_shapes_.size(); }
    const Shape& input_shape(std::size_t slot) const { return input_shapes_.at(slot); }
    const Node& node(NodeId n) const { return nodes_.at(n.index); }

private:
    NodeId push(Node n);
    const Node& get(NodeId n) const;

    std::vector<Node> nodes_;
    std::vector<Shape> input_shapes_;
    Layout layout_;
    std::uint32_t output_ = 0;
    std::uint32_t loss_ = 0;
    bool has_loss_ = false;
};

template <typename T>
struct LossAndGrad {
    T loss{};
    std::vector<T> grads;
};

/// Replays `record` forward and backward over `batch`. The loss is the
/// record's loss node (already a batch mean); grads follow record.layout().
template <typename T>
LossAndGrad<T> value_and_grad(const Record& record, std::span<const T> params, const Batch<T>& batch);

/// Forward replay returning the value of `out` (defaults to the record's output node).
template <typename T>
Tensor<T> forward(const Record& record, std::span<const T> params, const Batch<T>& batch);
template <typename T>
Tensor<T> forward(const Record& record, std::span<const T> params, const Batch<T>& batch, NodeId out);

/// Forward replay returning only the loss value.
template <typename T>
T loss_value(const Record& record, std::span<const T> params, const Batch<T>& batch);

/// Splits the batch into fixed-size chunks, replays each (possibly on
/// several workers) and reduces in chunk order. The result depends on
/// `chunk` but never on `workers`.
template <typename T>
LossAndGrad<T> value_and_grad_chunked(const Record& record, std::span<const T> params, const Batch<T>& batch,
                                      std::size_t chunk, std::size_t workers);

/// Rows [begin, end) of every input tensor and label.
template <typename T>
Batch<T> slice_batch(const Batch<T>& batch, std::size_t begin, std::size_t end);

/// params - lr * grads.
template <typename T>
std::vector<T> sgd_step(std::span<const T> params, std::span<const T> grads, T lr);

}  // namespace pfedgpa
