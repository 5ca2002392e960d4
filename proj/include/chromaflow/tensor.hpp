#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace chromaflow::nn {

class ShapeError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

using Shape = std::vector<int>;

inline std::size_t numel(const Shape& s) {
    return std::accumulate(s.begin(), s.end(), std::size_t{1},
                           [](std::size_t a, int d) { return a * static_cast<std::size_t>(d); });
}

std::string shape_string(const Shape& s);

/// Dense float32 array of rank 1..4 with an optional gradient accumulator.
/// Images travel as rank-3 (channels, height, width).
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape, float fill = 0.0f);
    Tensor(Shape shape, std::vector<float> data);

    static Tensor scalar(float v) { return Tensor({1}, v); }

    const Shape& shape() const { return shape_; }
    int rank() const { return static_cast<int>(shape_.size()); }
    int dim(int i) const { return shape_.at(static_cast<std::size_t>(i)); }
    std::size_t size() const { return data_.size(); }

    std::span<float> data() { return data_; }
    std::span<const float> data() const { return data_; }
    float& operator[](std::size_t i) { return data_[i]; }
    float operator[](std::size_t i) const { return data_[i]; }

    bool has_grad() const { return !grad_.empty(); }
    std::span<float> grad();
    std::span<const float> grad() const { return grad_; }
    void zero_grad();

private:
    Shape shape_;
    std::vector<float> data_;
    std::vector<float> grad_;
};

class Tape;

/// Handle to a node recorded on a Tape.
struct Var {
    Tape* tape = nullptr;
    int id = -1;

    const Tensor& value() const;
    const Shape& shape() const { return value().shape(); }
    bool requires_grad() const;
};

/// Single-writer record of one forward pass. backward() sweeps the nodes in
/// reverse order and adds the resulting gradients into every Tensor that was
/// registered through variable(); calling it twice therefore sums.
class Tape {
public:
    using Backward = std::function<void(Tape&, int self)>;

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var constant(Tensor value);
    /// Records a leaf whose gradient flows back into `source.grad()`.
    Var variable(Tensor& source);

    /// Records an op result. `parents` decide whether the node needs a gradient.
    Var push(Tensor value, std::initializer_list<Var> parents, Backward fn);
    Var push(Tensor value, std::span<const Var> parents, Backward fn);

    const Tensor& value(int id) const { return nodes_[static_cast<std::size_t>(id)].value; }
    bool requires_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].requires_grad; }
    /// Gradient buffer of a node; valid only during backward().
    std::span<float> grad(int id);

    void backward(Var loss);

    std::size_t node_count() const { return nodes_.size(); }

private:
    struct Node {
        Tensor value;
        std::vector<float> grad;
        Backward fn;
        Tensor* sink = nullptr;
        bool requires_grad = false;
    };
    std::deque<Node> nodes_;
};

}  // namespace chromaflow::nn
