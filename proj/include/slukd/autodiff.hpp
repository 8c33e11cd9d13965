#pragma once

#include <string>
#include <vector>

#include "slukd/tensor.hpp"

namespace slukd::ad {

using NodeId = int;

enum class Op {
    Input,
    Matmul,
    Add,
    Sub,
    Mul,
    AddRowVec,
    ScaleRows,
    Tanh,
    Sigmoid,
    Relu,
    Log,
    SoftmaxRows,
    LogSoftmaxRows,
    Square,
    HuberUnit,
    Transpose,
    SliceRows,
    SliceCols,
    ConcatRows,
    ConcatCols,
    MaxPoolRows,
    MeanRows,
    MeanAll,
    SumAll,
    Scale,
    Embedding,
    PickPerRow,
    LayerNormRows,
};

const char* op_name(Op op);

struct Node {
    Op op = Op::Input;
    NodeId a = -1;
    NodeId b = -1;
    std::vector<NodeId> rest;  // extra parents for concat
    Tensor val;
    Tensor grad;
    std::vector<int> aux;  // embedding ids, pick columns, slice offsets, argmax cache
    double factor = 0.0;   // Scale
};

// Eagerly evaluated computation tape. Values are computed at node creation;
// backward() walks the tape in reverse. One graph per batch, then discarded.
class Graph {
public:
    explicit Graph(size_t reserve_hint = 0) {
        if (reserve_hint) nodes_.reserve(reserve_hint);
    }

    NodeId input(Tensor v);
    NodeId constant(Tensor v) { return input(std::move(v)); }
    NodeId scalar(double v) { return input(Tensor::scalar(v)); }

    NodeId matmul(NodeId a, NodeId b);
    NodeId add(NodeId a, NodeId b);
    NodeId sub(NodeId a, NodeId b);
    NodeId mul(NodeId a, NodeId b);
    // (RxC) + (1xC), bias broadcast over rows.
    NodeId add_rowvec(NodeId x, NodeId row);
    // Row i of x scaled by col[i, 0].
    NodeId scale_rows(NodeId x, NodeId col);
    NodeId tanh(NodeId a);
    NodeId sigmoid(NodeId a);
    NodeId relu(NodeId a);
    NodeId log(NodeId a);
    NodeId softmax_rows(NodeId a);
    NodeId log_softmax_rows(NodeId a);
    NodeId square(NodeId a);
    // Elementwise smooth-L1 kernel with unit transition: 0.5*x^2 if |x|<1 else |x|-0.5.
    NodeId huber_unit(NodeId a);
    NodeId transpose(NodeId a);
    NodeId slice_rows(NodeId a, int from, int count);
    NodeId slice_cols(NodeId a, int from, int count);
    NodeId concat_rows(const std::vector<NodeId>& parts);
    NodeId concat_cols(const std::vector<NodeId>& parts);
    // Max over the row (sequence) axis: (RxC) -> (1xC). Ties go to the lowest row.
    NodeId max_pool_rows(NodeId a);
    // Mean over the row (batch) axis: (RxC) -> (1xC).
    NodeId mean_rows(NodeId a);
    NodeId mean_all(NodeId a);
    NodeId sum_all(NodeId a);
    NodeId scale(NodeId a, double factor);
    // Row lookup: out[i, :] = table[ids[i], :].
    NodeId embedding(NodeId table, const std::vector<int>& ids);
    // out[i, 0] = x[i, cols[i]].
    NodeId pick_per_row(NodeId x, const std::vector<int>& cols);
    // Row-wise normalization to zero mean / unit variance, then gain and bias
    // (both 1xC): out[i,:] = norm(x[i,:]) * gain + bias.
    NodeId layer_norm_rows(NodeId x, NodeId gain, NodeId bias);

    // Reverse-mode pass from a scalar loss; fills grad of every node up to it.
    void backward(NodeId loss);

    const Tensor& value(NodeId id) const { return nodes_[id].val; }
    const Tensor& grad(NodeId id) const { return nodes_[id].grad; }
    size_t node_count() const { return nodes_.size(); }

private:
    std::vector<Node> nodes_;

    NodeId push(Node n) {
        nodes_.push_back(std::move(n));
        return static_cast<NodeId>(nodes_.size()) - 1;
    }
    const Tensor& val_of(NodeId id) const { return nodes_[id].val; }
    void check_id(NodeId id, const char* op) const;
    [[noreturn]] static void shape_error(const char* op, const Tensor& a, const Tensor& b);
    [[noreturn]] static void shape_error(const char* op, const Tensor& a, const std::string& what);
};

}  // namespace slukd::ad
