#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <limits>
#include <span>
#include <string_view>
#include <vector>

#include "latefuse/core/tensor.hpp"

namespace latefuse {

enum class OpKind : std::uint8_t {
    leaf,
    matmul,
    matmul_nt,
    add,
    add_row,
    mul,
    scale,
    gelu,
    layer_norm,
    softmax,
    cross_entropy,
    embedding,
    slice_cols,
    concat_cols,
    kron_mix,
    sum,
};

std::string_view op_name(OpKind kind);

// Handle to a node on a Tape. Only meaningful for the tape that issued it.
struct Var {
    static constexpr std::uint32_t npos = std::numeric_limits<std::uint32_t>::max();
    std::uint32_t id = npos;

    bool valid() const noexcept { return id != npos; }
    friend bool operator==(Var, Var) = default;
};

// Reverse-mode tape. Nodes are appended in evaluation order, so node ids are
// already a topological order and backward() simply walks them downwards.
//
// A tape is confined to one thread. Separate tapes share nothing except
// borrowed parameter tensors, which the tape never writes.
template <typename T>
class Tape {
public:
    using TensorT = BasicTensor<T>;
    using BackwardFn = std::function<void(Tape&, Var)>;

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;
    Tape(Tape&&) = default;
    Tape& operator=(Tape&&) = default;

    // Leaf that owns its value and never receives a gradient.
    Var constant(TensorT value);
    // Leaf that owns its value and accumulates a gradient.
    Var variable(TensorT value);
    // Leaf whose value lives outside the tape and must outlive it.
    Var borrow(const TensorT& value, bool requires_grad);

    // Append an op result. The backward function is dropped when no input
    // requires a gradient. Non-finite results raise NumericalError.
    Var record(OpKind kind, TensorT value, std::vector<Var> inputs, BackwardFn backward);

    const TensorT& value(Var v) const { return *node(v).view; }
    bool requires_grad(Var v) const { return node(v).requires_grad; }
    bool has_grad(Var v) const { return node(v).grad_ready; }
    const TensorT& grad(Var v) const;
    // Gradient accumulator for v, zero-initialised on first access.
    TensorT& grad_buffer(Var v);

    OpKind kind(Var v) const { return node(v).kind; }
    std::span<const Var> inputs(Var v) const { return node(v).inputs; }
    std::size_t size() const noexcept { return nodes_.size(); }

    // Seeds d(root)/d(root) = 1 for a single-element root and propagates.
    // Each node's backward function runs at most once.
    void backward(Var root);

private:
    struct Node {
        OpKind kind = OpKind::leaf;
        TensorT value;
        const TensorT* view = nullptr;
        TensorT grad;
        bool grad_ready = false;
        bool requires_grad = false;
        std::vector<Var> inputs;
        BackwardFn backward;
    };

    Node& node(Var v);
    const Node& node(Var v) const;
    Var push(Node&& n);

    std::deque<Node> nodes_;
};

extern template class Tape<float>;
extern template class Tape<double>;

}  // namespace latefuse
