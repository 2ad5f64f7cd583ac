#include "latefuse/core/autodiff.hpp"

#include <string>

namespace latefuse {

std::string_view op_name(OpKind kind) {
    switch (kind) {
        case OpKind::leaf: return "leaf";
        case OpKind::matmul: return "matmul";
        case OpKind::matmul_nt: return "matmul_nt";
        case OpKind::add: return "add";
        case OpKind::add_row: return "add_row";
        case OpKind::mul: return "mul";
        case OpKind::scale: return "scale";
        case OpKind::gelu: return "gelu";
        case OpKind::layer_norm: return "layer_norm";
        case OpKind::softmax: return "softmax";
        case OpKind::cross_entropy: return "cross_entropy";
        case OpKind::embedding: return "embedding";
        case OpKind::slice_cols: return "slice_cols";
        case OpKind::concat_cols: return "concat_cols";
        case OpKind::kron_mix: return "kron_mix";
        case OpKind::sum: return "sum";
    }
    return "unknown";
}

template <typename T>
typename Tape<T>::Node& Tape<T>::node(Var v) {
    if (v.id >= nodes_.size()) {
        throw IndexError("var " + std::to_string(v.id) + " is not on this tape");
    }
    return nodes_[v.id];
}

template <typename T>
const typename Tape<T>::Node& Tape<T>::node(Var v) const {
    if (v.id >= nodes_.size()) {
        throw IndexError("var " + std::to_string(v.id) + " is not on this tape");
    }
    return nodes_[v.id];
}

template <typename T>
Var Tape<T>::push(Node&& n) {
    const bool borrowed = n.view != nullptr;
    nodes_.push_back(std::move(n));
    Node& back = nodes_.back();
    if (!borrowed) {
        back.view = &back.value;
    }
    return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

template <typename T>
Var Tape<T>::constant(TensorT value) {
    Node n;
    n.value = std::move(value);
    return push(std::move(n));
}

template <typename T>
Var Tape<T>::variable(TensorT value) {
    Node n;
    n.value = std::move(value);
    n.requires_grad = true;
    return push(std::move(n));
}

template <typename T>
Var Tape<T>::borrow(const TensorT& value, bool requires_grad) {
    Node n;
    n.view = &value;
    n.requires_grad = requires_grad;
    return push(std::move(n));
}

template <typename T>
Var Tape<T>::record(OpKind kind, TensorT value, std::vector<Var> inputs, BackwardFn backward) {
    if (!value.all_finite()) {
        throw NumericalError("non-finite value produced by " + std::string(op_name(kind)));
    }
    Node n;
    n.kind = kind;
    n.value = std::move(value);
    for (const Var in : inputs) {
        n.requires_grad = n.requires_grad || node(in).requires_grad;
    }
    n.inputs = std::move(inputs);
    if (n.requires_grad) {
        n.backward = std::move(backward);
    }
    return push(std::move(n));
}

template <typename T>
const typename Tape<T>::TensorT& Tape<T>::grad(Var v) const {
    const Node& n = node(v);
    if (!n.grad_ready) {
        throw IndexError("no gradient recorded for var " + std::to_string(v.id));
    }
    return n.grad;
}

template <typename T>
typename Tape<T>::TensorT& Tape<T>::grad_buffer(Var v) {
    Node& n = node(v);
    if (!n.grad_ready) {
        n.grad = TensorT(n.view->shape());
        n.grad_ready = true;
    }
    return n.grad;
}

template <typename T>
void Tape<T>::backward(Var root) {
    Node& r = node(root);
    if (r.view->size() != 1) {
        throw DimensionError("backward root must hold a single value, got " +
                             shape_string(r.view->shape()));
    }
    grad_buffer(root)[0] += T{1};
    for (std::uint32_t id = root.id + 1; id-- > 0;) {
        Node& n = nodes_[id];
        if (!n.grad_ready || !n.backward) {
            continue;
        }
        n.backward(*this, Var{id});
        if (!n.grad.all_finite()) {
            throw NumericalError("non-finite gradient at " + std::string(op_name(n.kind)));
        }
    }
}

template class Tape<float>;
template class Tape<double>;

}  // namespace latefuse
