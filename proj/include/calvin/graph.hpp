#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "calvin/tensor.hpp"

namespace calvin {

// The closed op set. Nothing outside this list is recorded or differentiated.
enum class Op : uint8_t {
    kLeaf,
    kInput,
    kAdd,
    kSub,
    kMul,
    kMulConst,
    kScale,
    kAddScalar,
    kConv2d,
    kChannelMax,
    kSoftmaxTail,
    kSoftmaxCe,
    kSigmoid,
    kRelu,
    kSum,
    kSumTail,
    kReshape,
    kSliceRange,
    kConcat0,
    kGatherState,
};

const char* op_name(Op op);

class Graph;

// Lightweight handle to a recorded node. Invalid (default) handles are used
// for "no bias" style optional arguments.
struct Val {
    Graph* g = nullptr;
    int id = -1;

    bool valid() const { return g != nullptr && id >= 0; }
    const Tensor& value() const;
    const Tensor& grad() const;
    const std::vector<int>& shape() const;
};

// Reverse-mode tape over Tensors. Nodes are appended in topological order;
// backward walks the tape once in reverse. A Graph is confined to one thread.
class Graph {
  public:
    Graph() = default;
    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;

    // Trainable parameter; receives a gradient on backward.
    Val leaf(Tensor t);
    // Constant input; never differentiated.
    Val input(Tensor t);

    // b may have the same shape as a, be a scalar (numel 1), match a leading
    // prefix of a's shape, or match a trailing suffix of it.
    Val add(Val a, Val b);
    Val sub(Val a, Val b);
    Val mul(Val a, Val b);
    // As mul, but c is plain data, not a node.
    Val mul_const(Val a, Tensor c);
    Val scale(Val a, float c);
    Val add_scalar(Val a, float c);

    // x: C×H×W, kernel: O×C×K×K (K odd), optional bias [O]; zero padding
    // (K-1)/2 so spatial extents are preserved. Dot products accumulate in
    // 64-bit.
    Val conv2d(Val x, Val kernel, Val bias = {});

    struct MaxOut {
        Val v;             // max over axis 0
        Val argmax_holder; // node owning the argmax data
        const std::vector<int>& argmax() const;
    };
    // q: A×REST -> v: REST. Gradient routes only to the argmax entry; ties
    // break to the lowest index along axis 0.
    MaxOut channel_max(Val q);

    // Softmax over all axes after the first `lead_axes` axes, normalized per
    // leading group. lead_axes = 0 treats the whole tensor as one group.
    Val softmax_tail(Val x, int lead_axes);

    // -weight * log softmax(flat(logits))[target], as a scalar node.
    Val softmax_ce(Val logits, int target, float weight);

    Val sigmoid(Val x);
    Val relu(Val x);

    Val sum(Val x);                     // scalar
    Val sum_tail(Val x, int lead_axes); // shape = leading axes

    Val reshape(Val x, std::vector<int> shape);
    Val slice_range(Val x, int begin, int end); // along axis 0
    Val concat0(const std::vector<Val>& xs);
    // q: A×REST -> [A] column at flat index `state` into REST.
    Val gather_state(Val q, int state);

    // Gradients for every node reachable from `loss` (a scalar). Each node's
    // backward rule runs exactly once. Call at most once per recorded tape.
    void backward(Val loss);

    void clear();

    size_t size() const { return nodes_.size(); }
    const Tensor& value(int id) const { return nodes_[id].value; }
    const Tensor& grad(int id) const { return nodes_[id].grad; }

    // NaN/Inf anywhere in an op output raises; disable only in tests probing
    // the error path itself.
    void set_check_finite(bool on) { check_finite_ = on; }

  private:
    struct Node {
        Op op = Op::kInput;
        bool requires_grad = false;
        Tensor value;
        Tensor grad;
        std::vector<int> inputs;
        int i0 = 0, i1 = 0; // op-specific: axes / range / target / state
        float f0 = 0.0f;    // op-specific: scale / weight
        Tensor cdata;       // op-specific: constant operand
        std::vector<int> idx; // op-specific: argmax table
    };

    int push(Node n);
    void require(Val v, const char* op) const;
    Val make_val(int id) { return Val{this, id}; }
    const Node& node(int id) const { return nodes_[id]; }
    Node& node(int id) { return nodes_[id]; }
    bool any_requires_grad(const std::vector<int>& ids) const;
    void check_node_finite(const Node& n) const;
    void backprop_node(int id);

    std::vector<Node> nodes_;
    bool check_finite_ = true;
    bool backward_done_ = false;

    friend struct Val;
};

}  // namespace calvin
