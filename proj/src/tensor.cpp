#include "chromaflow/tensor.hpp"

#include <algorithm>
#include <sstream>

namespace chromaflow::nn {

std::string shape_string(const Shape& s) {
    std::ostringstream os;
    os << '(';
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << ')';
    return os.str();
}

namespace {

void check_shape(const Shape& s) {
    if (s.empty() || s.size() > 4) throw ShapeError("tensor rank must be 1..4, got " + shape_string(s));
    for (int d : s) {
        if (d <= 0) throw ShapeError("tensor dimensions must be positive: " + shape_string(s));
    }
}

}  // namespace

Tensor::Tensor(Shape shape, float fill) : shape_(std::move(shape)) {
    check_shape(shape_);
    data_.assign(numel(shape_), fill);
}

Tensor::Tensor(Shape shape, std::vector<float> data) : shape_(std::move(shape)), data_(std::move(data)) {
    check_shape(shape_);
    if (data_.size() != numel(shape_)) {
        throw ShapeError("tensor data length does not match shape " + shape_string(shape_));
    }
}

std::span<float> Tensor::grad() {
    if (grad_.size() != data_.size()) grad_.assign(data_.size(), 0.0f);
    return grad_;
}

void Tensor::zero_grad() { std::fill(grad_.begin(), grad_.end(), 0.0f); }

const Tensor& Var::value() const { return tape->value(id); }
bool Var::requires_grad() const { return tape->requires_grad(id); }

Var Tape::constant(Tensor value) {
    nodes_.push_back(Node{std::move(value), {}, {}, nullptr, false});
    return Var{this, static_cast<int>(nodes_.size()) - 1};
}

Var Tape::variable(Tensor& source) {
    nodes_.push_back(Node{source, {}, {}, &source, true});
    return Var{this, static_cast<int>(nodes_.size()) - 1};
}

Var Tape::push(Tensor value, std::initializer_list<Var> parents, Backward fn) {
    return push(std::move(value), std::span<const Var>(parents.begin(), parents.size()), std::move(fn));
}

Var Tape::push(Tensor value, std::span<const Var> parents, Backward fn) {
    bool needs = false;
    for (const Var& p : parents) {
        if (p.tape != this) throw ShapeError("operands recorded on different tapes");
        needs = needs || requires_grad(p.id);
    }
    nodes_.push_back(Node{std::move(value), {}, needs ? std::move(fn) : Backward{}, nullptr, needs});
    return Var{this, static_cast<int>(nodes_.size()) - 1};
}

std::span<float> Tape::grad(int id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (n.grad.size() != n.value.size()) n.grad.assign(n.value.size(), 0.0f);
    return n.grad;
}

void Tape::backward(Var loss) {
    if (loss.tape != this) throw ShapeError("loss belongs to a different tape");
    if (value(loss.id).size() != 1) throw ShapeError("backward needs a scalar loss, got " +
                                                     shape_string(value(loss.id).shape()));
    for (auto& n : nodes_) n.grad.clear();
    if (!requires_grad(loss.id)) return;
    grad(loss.id)[0] = 1.0f;
    for (int i = loss.id; i >= 0; --i) {
        Node& n = nodes_[static_cast<std::size_t>(i)];
        if (!n.requires_grad || n.grad.empty()) continue;
        if (n.fn) n.fn(*this, i);
        if (n.sink) {
            auto g = n.sink->grad();
            for (std::size_t k = 0; k < g.size(); ++k) g[k] += n.grad[k];
        }
    }
    for (auto& n : nodes_) {
        n.grad.clear();
        n.grad.shrink_to_fit();
    }
}

}  // namespace chromaflow::nn
