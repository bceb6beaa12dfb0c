#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace efraft {

std::size_t shape_size(const std::vector<int>& shape);
std::string shape_str(const std::vector<int>& shape);

class Tape;

// Dense row-major array of doubles. Tensors are plain values: copying one
// copies its data, and no op mutates its inputs. When an op runs under a
// Tape, the result remembers its tape node so gradients can be pulled out
// after a backward pass.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::vector<int> shape);
    Tensor(std::vector<int> shape, std::vector<double> values);

    static Tensor full(std::vector<int> shape, double value);
    static Tensor scalar(double value);  // shape {1}

    const std::vector<int>& shape() const { return shape_; }
    int ndim() const { return static_cast<int>(shape_.size()); }
    int dim(int i) const { return shape_[static_cast<std::size_t>(i)]; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    std::vector<double>& values() { return data_; }
    const std::vector<double>& values() const { return data_; }

    double operator[](std::size_t i) const { return data_[i]; }
    double& operator[](std::size_t i) { return data_[i]; }

    double& at(int i) { return data_[static_cast<std::size_t>(i)]; }
    double at(int i) const { return data_[static_cast<std::size_t>(i)]; }
    double& at(int i, int j) { return data_[flat2(i, j)]; }
    double at(int i, int j) const { return data_[flat2(i, j)]; }
    double& at(int i, int j, int k) { return data_[flat3(i, j, k)]; }
    double at(int i, int j, int k) const { return data_[flat3(i, j, k)]; }
    double& at(int i, int j, int k, int l) { return data_[flat4(i, j, k, l)]; }
    double at(int i, int j, int k, int l) const { return data_[flat4(i, j, k, l)]; }

    bool all_finite() const;

    // Autodiff bookkeeping: which tape (by id) recorded this value and at
    // which node. A tensor created outside any tape has tape_id 0.
    std::uint64_t tape_id = 0;
    int node = -1;

private:
    std::size_t flat2(int i, int j) const {
        return static_cast<std::size_t>(i) * static_cast<std::size_t>(shape_[1]) + static_cast<std::size_t>(j);
    }
    std::size_t flat3(int i, int j, int k) const {
        return (static_cast<std::size_t>(i) * static_cast<std::size_t>(shape_[1]) + static_cast<std::size_t>(j)) *
                   static_cast<std::size_t>(shape_[2]) +
               static_cast<std::size_t>(k);
    }
    std::size_t flat4(int i, int j, int k, int l) const {
        return ((static_cast<std::size_t>(i) * static_cast<std::size_t>(shape_[1]) + static_cast<std::size_t>(j)) *
                    static_cast<std::size_t>(shape_[2]) +
                static_cast<std::size_t>(k)) *
                   static_cast<std::size_t>(shape_[3]) +
               static_cast<std::size_t>(l);
    }

    std::vector<int> shape_;
    std::vector<double> data_;
};

// Reverse-mode tape. Ops append nodes in execution order; node ids are
// therefore already a topological order and the backward pass walks them
// in reverse. A node's gradient buffer accumulates contributions from all
// of its uses before its own backward fires. The tape is confined to one
// thread of execution.
class Tape {
public:
    using Backward = std::function<void(const std::vector<double>& grad_out, Tape& tape)>;

    Tape();

    std::uint64_t id() const { return id_; }

    // Registers t as a differentiable leaf of this tape.
    void watch(Tensor& t);

    // Appends an op node and returns its id. The backward callback receives
    // the node's output gradient and accumulates into the input buffers via
    // grad_buffer(). Pass nullptr for nodes with nothing to propagate.
    int record(std::size_t output_size, Backward backward);

    // Reverse pass seeded with d(output)/d(output) = 1. Output must be a
    // scalar recorded on this tape.
    void backward(const Tensor& output);

    // Accumulated gradient of a watched/recorded tensor (zeros if the value
    // never influenced the backward root).
    std::vector<double> grad(const Tensor& t) const;

    std::vector<double>& grad_buffer(int node);

    std::size_t node_count() const { return nodes_.size(); }

private:
    struct Node {
        std::size_t size;
        Backward backward;
    };

    std::uint64_t id_;
    std::vector<Node> nodes_;
    std::vector<std::vector<double>> grads_;
};

// Node id of t as seen by the given tape; -1 when t is untracked or belongs
// to a different tape.
inline int node_on(const Tensor& t, const Tape* tape) {
    if (tape == nullptr || t.node < 0 || t.tape_id != tape->id()) return -1;
    return t.node;
}

// While a ProbeGuard is alive, ops with gradient kinks (relu/abs at zero,
// pooling ties, bilinear samples on lattice lines) throw instead of silently
// returning a one-sided derivative. gradient_check enables it so that a
// failed probe asks for re-randomization rather than reporting noise.
class ProbeGuard {
public:
    ProbeGuard();
    ~ProbeGuard();
    ProbeGuard(const ProbeGuard&) = delete;
    ProbeGuard& operator=(const ProbeGuard&) = delete;
    static bool active();
};

}  // namespace efraft
