#include "calvin/graph.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace calvin {

namespace {

enum class Bcast { kSame, kScalar, kPrefix, kSuffix };

// How b's elements map onto a's flat index space.
struct BcastPlan {
    Bcast mode;
    size_t tail = 1; // prefix: elements of a per element of b
    size_t bn = 1;   // numel of b
};

BcastPlan classify_bcast(const std::vector<int>& a, const std::vector<int>& b, const char* op) {
    const size_t an = Tensor::shape_numel(a);
    const size_t bn = Tensor::shape_numel(b);
    if (a == b) return {Bcast::kSame, 1, bn};
    if (bn == 1) return {Bcast::kScalar, an, 1};
    if (b.size() < a.size()) {
        if (std::equal(b.begin(), b.end(), a.begin()))
            return {Bcast::kPrefix, an / bn, bn};
        if (std::equal(b.rbegin(), b.rend(), a.rbegin()))
            return {Bcast::kSuffix, an / bn, bn};
    }
    throw std::invalid_argument(std::string(op) + ": shapes not broadcastable " +
                                Tensor::shape_str(a) + " vs " + Tensor::shape_str(b));
}

inline size_t bcast_index(const BcastPlan& p, size_t i) {
    switch (p.mode) {
        case Bcast::kSame: return i;
        case Bcast::kScalar: return 0;
        case Bcast::kPrefix: return i / p.tail;
        case Bcast::kSuffix: return i % p.bn;
    }
    return 0;
}

// Accumulate per-element contributions onto b's index space in 64-bit, then
// fold into the float gradient.
template <typename ContribFn>
void reduce_into(Tensor& gb, const BcastPlan& p, size_t an, ContribFn contrib) {
    std::vector<double> acc(gb.numel(), 0.0);
    for (size_t i = 0; i < an; ++i) acc[bcast_index(p, i)] += contrib(i);
    for (size_t j = 0; j < gb.numel(); ++j) gb[j] += static_cast<float>(acc[j]);
}

double stable_lse(const float* x, size_t n) {
    double m = -INFINITY;
    for (size_t i = 0; i < n; ++i) m = std::max(m, static_cast<double>(x[i]));
    double s = 0.0;
    for (size_t i = 0; i < n; ++i) s += std::exp(static_cast<double>(x[i]) - m);
    return m + std::log(s);
}

}  // namespace

const char* op_name(Op op) {
    switch (op) {
        case Op::kLeaf: return "leaf";
        case Op::kInput: return "input";
        case Op::kAdd: return "add";
        case Op::kSub: return "sub";
        case Op::kMul: return "mul";
        case Op::kMulConst: return "mul_const";
        case Op::kScale: return "scale";
        case Op::kAddScalar: return "add_scalar";
        case Op::kConv2d: return "conv2d";
        case Op::kChannelMax: return "channel_max";
        case Op::kSoftmaxTail: return "softmax_tail";
        case Op::kSoftmaxCe: return "softmax_cross_entropy";
        case Op::kSigmoid: return "sigmoid";
        case Op::kRelu: return "relu";
        case Op::kSum: return "sum";
        case Op::kSumTail: return "sum_tail";
        case Op::kReshape: return "reshape";
        case Op::kSliceRange: return "slice_range";
        case Op::kConcat0: return "concat0";
        case Op::kGatherState: return "gather_state";
    }
    return "?";
}

const Tensor& Val::value() const { return g->value(id); }
const Tensor& Val::grad() const { return g->grad(id); }
const std::vector<int>& Val::shape() const { return g->value(id).shape(); }

const std::vector<int>& Graph::MaxOut::argmax() const {
    return argmax_holder.g->node(argmax_holder.id).idx;
}

int Graph::push(Node n) {
    if (check_finite_) check_node_finite(n);
    nodes_.push_back(std::move(n));
    return static_cast<int>(nodes_.size()) - 1;
}

void Graph::require(Val v, const char* op) const {
    if (v.g != this || v.id < 0 || v.id >= static_cast<int>(nodes_.size()))
        throw std::invalid_argument(std::string(op) + ": operand is not a node of this graph");
}

bool Graph::any_requires_grad(const std::vector<int>& ids) const {
    for (int id : ids)
        if (nodes_[id].requires_grad) return true;
    return false;
}

void Graph::check_node_finite(const Node& n) const {
    if (!n.value.all_finite())
        throw std::runtime_error(std::string("non-finite value produced by op '") +
                                 op_name(n.op) + "'");
}

void Graph::clear() {
    nodes_.clear();
    backward_done_ = false;
}

Val Graph::leaf(Tensor t) {
    Node n;
    n.op = Op::kLeaf;
    n.requires_grad = true;
    n.value = std::move(t);
    return make_val(push(std::move(n)));
}

Val Graph::input(Tensor t) {
    Node n;
    n.op = Op::kInput;
    n.requires_grad = false;
    n.value = std::move(t);
    return make_val(push(std::move(n)));
}

Val Graph::add(Val a, Val b) {
    require(a, "add");
    require(b, "add");
    const Tensor& ta = value(a.id);
    const Tensor& tb = value(b.id);
    const BcastPlan p = classify_bcast(ta.shape(), tb.shape(), "add");
    Node n;
    n.op = Op::kAdd;
    n.inputs = {a.id, b.id};
    n.requires_grad = any_requires_grad(n.inputs);
    n.value = Tensor(ta.shape());
    for (size_t i = 0; i < ta.numel(); ++i) n.value[i] = ta[i] + tb[bcast_index(p, i)];
    return make_val(push(std::move(n)));
}

Val Graph::sub(Val a, Val b) {
    require(a, "sub");
    require(b, "sub");
    const Tensor& ta = value(a.id);
    const Tensor& tb = value(b.id);
    const BcastPlan p = classify_bcast(ta.shape(), tb.shape(), "sub");
    Node n;
    n.op = Op::kSub;
    n.inputs = {a.id, b.id};
    n.requires_grad = any_requires_grad(n.inputs);
    n.value = Tensor(ta.shape());
    for (size_t i = 0; i < ta.numel(); ++i) n.value[i] = ta[i] - tb[bcast_index(p, i)];
    return make_val(push(std::move(n)));
}

Val Graph::mul(Val a, Val b) {
    require(a, "mul");
    require(b, "mul");
    const Tensor& ta = value(a.id);
    const Tensor& tb = value(b.id);
    const BcastPlan p = classify_bcast(ta.shape(), tb.shape(), "mul");
    Node n;
    n.op = Op::kMul;
    n.inputs = {a.id, b.id};
    n.requires_grad = any_requires_grad(n.inputs);
    n.value = Tensor(ta.shape());
    for (size_t i = 0; i < ta.numel(); ++i) n.value[i] = ta[i] * tb[bcast_index(p, i)];
    return make_val(push(std::move(n)));
}

Val Graph::mul_const(Val a, Tensor c) {
    require(a, "mul_const");
    const Tensor& ta = value(a.id);
    const BcastPlan p = classify_bcast(ta.shape(), c.shape(), "mul_const");
    Node n;
    n.op = Op::kMulConst;
    n.inputs = {a.id};
    n.requires_grad = nodes_[a.id].requires_grad;
    n.value = Tensor(ta.shape());
    for (size_t i = 0; i < ta.numel(); ++i) n.value[i] = ta[i] * c[bcast_index(p, i)];
    n.cdata = std::move(c);
    return make_val(push(std::move(n)));
}

Val Graph::scale(Val a, float c) {
    require(a, "scale");
    const Tensor& ta = value(a.id);
    Node n;
    n.op = Op::kScale;
    n.inputs = {a.id};
    n.requires_grad = nodes_[a.id].requires_grad;
    n.f0 = c;
    n.value = Tensor(ta.shape());
    for (size_t i = 0; i < ta.numel(); ++i) n.value[i] = ta[i] * c;
    return make_val(push(std::move(n)));
}

Val Graph::add_scalar(Val a, float c) {
    require(a, "add_scalar");
    const Tensor& ta = value(a.id);
    Node n;
    n.op = Op::kAddScalar;
    n.inputs = {a.id};
    n.requires_grad = nodes_[a.id].requires_grad;
    n.f0 = c;
    n.value = Tensor(ta.shape());
    for (size_t i = 0; i < ta.numel(); ++i) n.value[i] = ta[i] + c;
    return make_val(push(std::move(n)));
}

Val Graph::conv2d(Val x, Val kernel, Val bias) {
    require(x, "conv2d");
    require(kernel, "conv2d");
    if (bias.valid()) require(bias, "conv2d");
    const Tensor& tx = value(x.id);
    const Tensor& tk = value(kernel.id);
    if (tx.rank() != 3) throw std::invalid_argument("conv2d: input must be C×H×W");
    if (tk.rank() != 4) throw std::invalid_argument("conv2d: kernel must be O×C×K×K");
    const int C = tx.extent(0), H = tx.extent(1), W = tx.extent(2);
    const int O = tk.extent(0), K = tk.extent(2);
    if (tk.extent(1) != C)
        throw std::invalid_argument("conv2d: kernel channels " + std::to_string(tk.extent(1)) +
                                    " do not match input channels " + std::to_string(C));
    if (tk.extent(3) != K || K % 2 == 0)
        throw std::invalid_argument("conv2d: kernel must be square with odd extent");
    if (bias.valid() && static_cast<int>(value(bias.id).numel()) != O)
        throw std::invalid_argument("conv2d: bias length must equal output channels");

    const int P = (K - 1) / 2;
    std::vector<double> acc(static_cast<size_t>(O) * H * W, 0.0);
    for (int o = 0; o < O; ++o) {
        double* acco = acc.data() + static_cast<size_t>(o) * H * W;
        for (int c = 0; c < C; ++c) {
            const float* xc = tx.data() + static_cast<size_t>(c) * H * W;
            const float* kk = tk.data() + (static_cast<size_t>(o) * C + c) * K * K;
            for (int u = 0; u < K; ++u) {
                const int ys = std::max(0, P - u), ye = std::min(H, H + P - u);
                for (int v = 0; v < K; ++v) {
                    const float w = kk[u * K + v];
                    if (w == 0.0f) continue;
                    const int xs = std::max(0, P - v), xe = std::min(W, W + P - v);
                    for (int y = ys; y < ye; ++y) {
                        const float* xrow = xc + static_cast<size_t>(y + u - P) * W + (v - P);
                        double* arow = acco + static_cast<size_t>(y) * W;
                        for (int px = xs; px < xe; ++px) arow[px] += static_cast<double>(w) * xrow[px];
                    }
                }
            }
        }
    }

    Node n;
    n.op = Op::kConv2d;
    n.inputs = bias.valid() ? std::vector<int>{x.id, kernel.id, bias.id}
                            : std::vector<int>{x.id, kernel.id};
    n.requires_grad = any_requires_grad(n.inputs);
    n.value = Tensor({O, H, W});
    const float* b = bias.valid() ? value(bias.id).data() : nullptr;
    for (int o = 0; o < O; ++o) {
        const float bo = b ? b[o] : 0.0f;
        for (int i = 0; i < H * W; ++i)
            n.value[static_cast<size_t>(o) * H * W + i] =
                static_cast<float>(acc[static_cast<size_t>(o) * H * W + i]) + bo;
    }
    return make_val(push(std::move(n)));
}

Graph::MaxOut Graph::channel_max(Val q) {
    require(q, "channel_max");
    const Tensor& tq = value(q.id);
    if (tq.rank() < 1 || tq.extent(0) < 1)
        throw std::invalid_argument("channel_max: empty action axis");
    const size_t A = tq.extent(0);
    const size_t R = tq.numel() / A;
    std::vector<int> rest_shape(tq.shape().begin() + 1, tq.shape().end());
    if (rest_shape.empty()) rest_shape = {1};

    Node n;
    n.op = Op::kChannelMax;
    n.inputs = {q.id};
    n.requires_grad = nodes_[q.id].requires_grad;
    n.value = Tensor(rest_shape);
    n.idx.resize(R);
    for (size_t r = 0; r < R; ++r) {
        float best = tq[r];
        int arg = 0;
        for (size_t a = 1; a < A; ++a) {
            const float v = tq[a * R + r];
            if (v > best) {
                best = v;
                arg = static_cast<int>(a);
            }
        }
        n.value[r] = best;
        n.idx[r] = arg;
    }
    Val v = make_val(push(std::move(n)));
    return MaxOut{v, v};
}

Val Graph::softmax_tail(Val x, int lead_axes) {
    require(x, "softmax_tail");
    const Tensor& tx = value(x.id);
    if (lead_axes < 0 || lead_axes > tx.rank())
        throw std::invalid_argument("softmax_tail: bad lead_axes");
    size_t groups = 1;
    for (int i = 0; i < lead_axes; ++i) groups *= tx.extent(i);
    const size_t tail = tx.numel() / groups;

    Node n;
    n.op = Op::kSoftmaxTail;
    n.inputs = {x.id};
    n.requires_grad = nodes_[x.id].requires_grad;
    n.i0 = lead_axes;
    n.value = Tensor(tx.shape());
    for (size_t g = 0; g < groups; ++g) {
        const float* xs = tx.data() + g * tail;
        float* ys = n.value.data() + g * tail;
        const double lse = stable_lse(xs, tail);
        for (size_t i = 0; i < tail; ++i)
            ys[i] = static_cast<float>(std::exp(static_cast<double>(xs[i]) - lse));
    }
    return make_val(push(std::move(n)));
}

Val Graph::softmax_ce(Val logits, int target, float weight) {
    require(logits, "softmax_cross_entropy");
    const Tensor& tl = value(logits.id);
    const size_t N = tl.numel();
    if (target < 0 || static_cast<size_t>(target) >= N)
        throw std::invalid_argument("softmax_cross_entropy: target " + std::to_string(target) +
                                    " out of range for " + std::to_string(N) + " classes");
    if (weight < 0.0f) throw std::invalid_argument("softmax_cross_entropy: negative weight");

    Node n;
    n.op = Op::kSoftmaxCe;
    n.inputs = {logits.id};
    n.requires_grad = nodes_[logits.id].requires_grad;
    n.i0 = target;
    n.f0 = weight;
    const double lse = stable_lse(tl.data(), N);
    n.value = Tensor::scalar(static_cast<float>(weight * (lse - tl[target])));
    return make_val(push(std::move(n)));
}

Val Graph::sigmoid(Val x) {
    require(x, "sigmoid");
    const Tensor& tx = value(x.id);
    Node n;
    n.op = Op::kSigmoid;
    n.inputs = {x.id};
    n.requires_grad = nodes_[x.id].requires_grad;
    n.value = Tensor(tx.shape());
    for (size_t i = 0; i < tx.numel(); ++i) {
        const float v = tx[i];
        if (v >= 0.0f) {
            n.value[i] = 1.0f / (1.0f + std::exp(-v));
        } else {
            const float e = std::exp(v);
            n.value[i] = e / (1.0f + e);
        }
    }
    return make_val(push(std::move(n)));
}

Val Graph::relu(Val x) {
    require(x, "relu");
    const Tensor& tx = value(x.id);
    Node n;
    n.op = Op::kRelu;
    n.inputs = {x.id};
    n.requires_grad = nodes_[x.id].requires_grad;
    n.value = Tensor(tx.shape());
    for (size_t i = 0; i < tx.numel(); ++i) n.value[i] = tx[i] > 0.0f ? tx[i] : 0.0f;
    return make_val(push(std::move(n)));
}

Val Graph::sum(Val x) {
    require(x, "sum");
    const Tensor& tx = value(x.id);
    Node n;
    n.op = Op::kSum;
    n.inputs = {x.id};
    n.requires_grad = nodes_[x.id].requires_grad;
    double acc = 0.0;
    for (size_t i = 0; i < tx.numel(); ++i) acc += tx[i];
    n.value = Tensor::scalar(static_cast<float>(acc));
    return make_val(push(std::move(n)));
}

Val Graph::sum_tail(Val x, int lead_axes) {
    require(x, "sum_tail");
    const Tensor& tx = value(x.id);
    if (lead_axes < 0 || lead_axes > tx.rank())
        throw std::invalid_argument("sum_tail: bad lead_axes");
    std::vector<int> lead_shape(tx.shape().begin(), tx.shape().begin() + lead_axes);
    if (lead_shape.empty()) lead_shape = {1};
    const size_t groups = Tensor::shape_numel(lead_shape);
    const size_t tail = tx.numel() / groups;

    Node n;
    n.op = Op::kSumTail;
    n.inputs = {x.id};
    n.requires_grad = nodes_[x.id].requires_grad;
    n.i0 = lead_axes;
    n.value = Tensor(lead_shape);
    for (size_t g = 0; g < groups; ++g) {
        double acc = 0.0;
        const float* xs = tx.data() + g * tail;
        for (size_t i = 0; i < tail; ++i) acc += xs[i];
        n.value[g] = static_cast<float>(acc);
    }
    return make_val(push(std::move(n)));
}

Val Graph::reshape(Val x, std::vector<int> shape) {
    require(x, "reshape");
    const Tensor& tx = value(x.id);
    if (Tensor::shape_numel(shape) != tx.numel())
        throw std::invalid_argument("reshape: element count mismatch " +
                                    Tensor::shape_str(tx.shape()) + " -> " +
                                    Tensor::shape_str(shape));
    Node n;
    n.op = Op::kReshape;
    n.inputs = {x.id};
    n.requires_grad = nodes_[x.id].requires_grad;
    n.value = Tensor(std::move(shape), tx.vec());
    return make_val(push(std::move(n)));
}

Val Graph::slice_range(Val x, int begin, int end) {
    require(x, "slice_range");
    const Tensor& tx = value(x.id);
    if (tx.rank() < 1 || begin < 0 || end <= begin || end > tx.extent(0))
        throw std::invalid_argument("slice_range: bad range");
    const size_t R = tx.numel() / tx.extent(0);
    std::vector<int> shape = tx.shape();
    shape[0] = end - begin;

    Node n;
    n.op = Op::kSliceRange;
    n.inputs = {x.id};
    n.requires_grad = nodes_[x.id].requires_grad;
    n.i0 = begin;
    n.i1 = end;
    n.value = Tensor(shape);
    std::copy(tx.data() + begin * R, tx.data() + end * R, n.value.data());
    return make_val(push(std::move(n)));
}

Val Graph::concat0(const std::vector<Val>& xs) {
    if (xs.empty()) throw std::invalid_argument("concat0: no inputs");
    for (const Val& v : xs) require(v, "concat0");
    const Tensor& t0 = value(xs[0].id);
    std::vector<int> shape = t0.shape();
    int total = t0.extent(0);
    const size_t R = t0.numel() / t0.extent(0);
    for (size_t i = 1; i < xs.size(); ++i) {
        const Tensor& ti = value(xs[i].id);
        if (ti.rank() != t0.rank() ||
            !std::equal(ti.shape().begin() + 1, ti.shape().end(), shape.begin() + 1))
            throw std::invalid_argument("concat0: trailing shape mismatch");
        total += ti.extent(0);
    }
    shape[0] = total;

    Node n;
    n.op = Op::kConcat0;
    for (const Val& v : xs) n.inputs.push_back(v.id);
    n.requires_grad = any_requires_grad(n.inputs);
    n.value = Tensor(shape);
    size_t off = 0;
    for (const Val& v : xs) {
        const Tensor& ti = value(v.id);
        std::copy(ti.data(), ti.data() + ti.numel(), n.value.data() + off);
        off += ti.numel();
    }
    (void)R;
    return make_val(push(std::move(n)));
}

Val Graph::gather_state(Val q, int state) {
    require(q, "gather_state");
    const Tensor& tq = value(q.id);
    if (tq.rank() < 2) throw std::invalid_argument("gather_state: input must be A×REST");
    const int A = tq.extent(0);
    const size_t R = tq.numel() / A;
    if (state < 0 || static_cast<size_t>(state) >= R)
        throw std::invalid_argument("gather_state: state index out of range");

    Node n;
    n.op = Op::kGatherState;
    n.inputs = {q.id};
    n.requires_grad = nodes_[q.id].requires_grad;
    n.i0 = state;
    n.value = Tensor({A});
    for (int a = 0; a < A; ++a) n.value[a] = tq[static_cast<size_t>(a) * R + state];
    return make_val(push(std::move(n)));
}

void Graph::backward(Val loss) {
    if (!loss.valid() || loss.g != this) throw std::invalid_argument("backward: bad loss handle");
    if (backward_done_) throw std::runtime_error("backward: tape already consumed");
    const Node& ln = nodes_[loss.id];
    if (ln.value.numel() != 1) throw std::invalid_argument("backward: loss must be scalar");
    if (!ln.requires_grad)
        throw std::invalid_argument("backward: loss is detached from every leaf");
    backward_done_ = true;

    // Reachability: nodes that influence the loss and require grad.
    std::vector<char> reach(nodes_.size(), 0);
    std::vector<int> stack = {loss.id};
    reach[loss.id] = 1;
    while (!stack.empty()) {
        const int id = stack.back();
        stack.pop_back();
        for (int in : nodes_[id].inputs) {
            if (!reach[in] && nodes_[in].requires_grad) {
                reach[in] = 1;
                stack.push_back(in);
            }
        }
    }

    // Leaves always end up with a (possibly zero) gradient.
    for (size_t i = 0; i < nodes_.size(); ++i)
        if (reach[i] || nodes_[i].op == Op::kLeaf) nodes_[i].grad = Tensor(nodes_[i].value.shape());

    nodes_[loss.id].grad[0] = 1.0f;
    for (int id = loss.id; id >= 0; --id)
        if (reach[id] && !nodes_[id].inputs.empty()) backprop_node(id);
}

void Graph::backprop_node(int id) {
    Node& n = nodes_[id];
    const Tensor& go = n.grad;
    auto grad_of = [&](int in) -> Tensor& { return nodes_[in].grad; };
    auto wants = [&](int in) { return nodes_[in].requires_grad; };

    switch (n.op) {
        case Op::kAdd:
        case Op::kSub: {
            const Tensor& ta = nodes_[n.inputs[0]].value;
            const Tensor& tb = nodes_[n.inputs[1]].value;
            const BcastPlan p = classify_bcast(ta.shape(), tb.shape(), "add");
            if (wants(n.inputs[0])) {
                Tensor& ga = grad_of(n.inputs[0]);
                for (size_t i = 0; i < go.numel(); ++i) ga[i] += go[i];
            }
            if (wants(n.inputs[1])) {
                const float sgn = n.op == Op::kSub ? -1.0f : 1.0f;
                reduce_into(grad_of(n.inputs[1]), p, ta.numel(),
                            [&](size_t i) { return static_cast<double>(sgn * go[i]); });
            }
            break;
        }
        case Op::kMul: {
            const Tensor& ta = nodes_[n.inputs[0]].value;
            const Tensor& tb = nodes_[n.inputs[1]].value;
            const BcastPlan p = classify_bcast(ta.shape(), tb.shape(), "mul");
            if (wants(n.inputs[0])) {
                Tensor& ga = grad_of(n.inputs[0]);
                for (size_t i = 0; i < ta.numel(); ++i) ga[i] += go[i] * tb[bcast_index(p, i)];
            }
            if (wants(n.inputs[1])) {
                reduce_into(grad_of(n.inputs[1]), p, ta.numel(),
                            [&](size_t i) { return static_cast<double>(go[i]) * ta[i]; });
            }
            break;
        }
        case Op::kMulConst: {
            if (!wants(n.inputs[0])) break;
            const Tensor& ta = nodes_[n.inputs[0]].value;
            const BcastPlan p = classify_bcast(ta.shape(), n.cdata.shape(), "mul_const");
            Tensor& ga = grad_of(n.inputs[0]);
            for (size_t i = 0; i < ta.numel(); ++i) ga[i] += go[i] * n.cdata[bcast_index(p, i)];
            break;
        }
        case Op::kScale: {
            if (!wants(n.inputs[0])) break;
            Tensor& ga = grad_of(n.inputs[0]);
            for (size_t i = 0; i < go.numel(); ++i) ga[i] += go[i] * n.f0;
            break;
        }
        case Op::kAddScalar: {
            if (!wants(n.inputs[0])) break;
            Tensor& ga = grad_of(n.inputs[0]);
            for (size_t i = 0; i < go.numel(); ++i) ga[i] += go[i];
            break;
        }
        case Op::kConv2d: {
            const Tensor& tx = nodes_[n.inputs[0]].value;
            const Tensor& tk = nodes_[n.inputs[1]].value;
            const int C = tx.extent(0), H = tx.extent(1), W = tx.extent(2);
            const int O = tk.extent(0), K = tk.extent(2), P = (K - 1) / 2;
            if (wants(n.inputs[0])) {
                std::vector<double> gx(tx.numel(), 0.0);
                for (int o = 0; o < O; ++o) {
                    const float* go_o = go.data() + static_cast<size_t>(o) * H * W;
                    for (int c = 0; c < C; ++c) {
                        double* gxc = gx.data() + static_cast<size_t>(c) * H * W;
                        const float* kk = tk.data() + (static_cast<size_t>(o) * C + c) * K * K;
                        for (int u = 0; u < K; ++u) {
                            const int ys = std::max(0, P - u), ye = std::min(H, H + P - u);
                            for (int v = 0; v < K; ++v) {
                                const float w = kk[u * K + v];
                                if (w == 0.0f) continue;
                                const int xs = std::max(0, P - v), xe = std::min(W, W + P - v);
                                for (int y = ys; y < ye; ++y) {
                                    double* grow = gxc + static_cast<size_t>(y + u - P) * W + (v - P);
                                    const float* orow = go_o + static_cast<size_t>(y) * W;
                                    for (int px = xs; px < xe; ++px)
                                        grow[px] += static_cast<double>(w) * orow[px];
                                }
                            }
                        }
                    }
                }
                Tensor& g = grad_of(n.inputs[0]);
                for (size_t i = 0; i < g.numel(); ++i) g[i] += static_cast<float>(gx[i]);
            }
            if (wants(n.inputs[1])) {
                Tensor& gk = grad_of(n.inputs[1]);
                for (int o = 0; o < O; ++o) {
                    const float* go_o = go.data() + static_cast<size_t>(o) * H * W;
                    for (int c = 0; c < C; ++c) {
                        const float* xc = tx.data() + static_cast<size_t>(c) * H * W;
                        for (int u = 0; u < K; ++u) {
                            const int ys = std::max(0, P - u), ye = std::min(H, H + P - u);
                            for (int v = 0; v < K; ++v) {
                                const int xs = std::max(0, P - v), xe = std::min(W, W + P - v);
                                double acc = 0.0;
                                for (int y = ys; y < ye; ++y) {
                                    const float* xrow = xc + static_cast<size_t>(y + u - P) * W + (v - P);
                                    const float* orow = go_o + static_cast<size_t>(y) * W;
                                    for (int px = xs; px < xe; ++px)
                                        acc += static_cast<double>(orow[px]) * xrow[px];
                                }
                                gk[(static_cast<size_t>(o) * C + c) * K * K + u * K + v] +=
                                    static_cast<float>(acc);
                            }
                        }
                    }
                }
            }
            if (n.inputs.size() == 3 && wants(n.inputs[2])) {
                Tensor& gb = grad_of(n.inputs[2]);
                for (int o = 0; o < O; ++o) {
                    double acc = 0.0;
                    const float* go_o = go.data() + static_cast<size_t>(o) * H * W;
                    for (int i = 0; i < H * W; ++i) acc += go_o[i];
                    gb[o] += static_cast<float>(acc);
                }
            }
            break;
        }
        case Op::kChannelMax: {
            if (!wants(n.inputs[0])) break;
            const Tensor& tq = nodes_[n.inputs[0]].value;
            const size_t R = tq.numel() / tq.extent(0);
            Tensor& gq = grad_of(n.inputs[0]);
            for (size_t r = 0; r < R; ++r)
                gq[static_cast<size_t>(n.idx[r]) * R + r] += go[r];
            break;
        }
        case Op::kSoftmaxTail: {
            if (!wants(n.inputs[0])) break;
            const Tensor& y = n.value;
            size_t groups = 1;
            for (int i = 0; i < n.i0; ++i) groups *= y.extent(i);
            const size_t tail = y.numel() / groups;
            Tensor& gx = grad_of(n.inputs[0]);
            for (size_t g = 0; g < groups; ++g) {
                const float* ys = y.data() + g * tail;
                const float* gos = go.data() + g * tail;
                double dot = 0.0;
                for (size_t i = 0; i < tail; ++i) dot += static_cast<double>(gos[i]) * ys[i];
                float* gxs = gx.data() + g * tail;
                for (size_t i = 0; i < tail; ++i)
                    gxs[i] += static_cast<float>(ys[i] * (gos[i] - dot));
            }
            break;
        }
        case Op::kSoftmaxCe: {
            if (!wants(n.inputs[0])) break;
            const Tensor& tl = nodes_[n.inputs[0]].value;
            const size_t N = tl.numel();
            const double lse = stable_lse(tl.data(), N);
            const float g0 = go[0] * n.f0;
            Tensor& gl = grad_of(n.inputs[0]);
            for (size_t i = 0; i < N; ++i) {
                const double p = std::exp(static_cast<double>(tl[i]) - lse);
                const double ind = (static_cast<int>(i) == n.i0) ? 1.0 : 0.0;
                gl[i] += static_cast<float>(g0 * (p - ind));
            }
            break;
        }
        case Op::kSigmoid: {
            if (!wants(n.inputs[0])) break;
            Tensor& gx = grad_of(n.inputs[0]);
            for (size_t i = 0; i < go.numel(); ++i) {
                const float y = n.value[i];
                gx[i] += go[i] * y * (1.0f - y);
            }
            break;
        }
        case Op::kRelu: {
            if (!wants(n.inputs[0])) break;
            const Tensor& tx = nodes_[n.inputs[0]].value;
            Tensor& gx = grad_of(n.inputs[0]);
            for (size_t i = 0; i < go.numel(); ++i)
                if (tx[i] > 0.0f) gx[i] += go[i];
            break;
        }
        case Op::kSum: {
            if (!wants(n.inputs[0])) break;
            Tensor& gx = grad_of(n.inputs[0]);
            for (size_t i = 0; i < gx.numel(); ++i) gx[i] += go[0];
            break;
        }
        case Op::kSumTail: {
            if (!wants(n.inputs[0])) break;
            Tensor& gx = grad_of(n.inputs[0]);
            const size_t groups = go.numel();
            const size_t tail = gx.numel() / groups;
            for (size_t g = 0; g < groups; ++g) {
                float* gxs = gx.data() + g * tail;
                for (size_t i = 0; i < tail; ++i) gxs[i] += go[g];
            }
            break;
        }
        case Op::kReshape: {
            if (!wants(n.inputs[0])) break;
            Tensor& gx = grad_of(n.inputs[0]);
            for (size_t i = 0; i < go.numel(); ++i) gx[i] += go[i];
            break;
        }
        case Op::kSliceRange: {
            if (!wants(n.inputs[0])) break;
            const Tensor& tx = nodes_[n.inputs[0]].value;
            const size_t R = tx.numel() / tx.extent(0);
            Tensor& gx = grad_of(n.inputs[0]);
            const size_t off = static_cast<size_t>(n.i0) * R;
            for (size_t i = 0; i < go.numel(); ++i) gx[off + i] += go[i];
            break;
        }
        case Op::kConcat0: {
            size_t off = 0;
            for (int in : n.inputs) {
                const size_t cnt = nodes_[in].value.numel();
                if (wants(in)) {
                    Tensor& gx = grad_of(in);
                    for (size_t i = 0; i < cnt; ++i) gx[i] += go[off + i];
                }
                off += cnt;
            }
            break;
        }
        case Op::kGatherState: {
            if (!wants(n.inputs[0])) break;
            const Tensor& tq = nodes_[n.inputs[0]].value;
            const int A = tq.extent(0);
            const size_t R = tq.numel() / A;
            Tensor& gq = grad_of(n.inputs[0]);
            for (int a = 0; a < A; ++a)
                gq[static_cast<size_t>(a) * R + n.i0] += go[a];
            break;
        }
        case Op::kLeaf:
        case Op::kInput:
            break;
    }
}

}  // namespace calvin
