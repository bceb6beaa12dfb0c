#include "efraft/tensor.hpp"

#include <atomic>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace efraft {

std::size_t shape_size(const std::vector<int>& shape) {
    std::size_t n = 1;
    for (int d : shape) {
        if (d <= 0) throw std::invalid_argument("tensor shape has non-positive extent " + std::to_string(d));
        n *= static_cast<std::size_t>(d);
    }
    return n;
}

std::string shape_str(const std::vector<int>& shape) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ",";
        os << shape[i];
    }
    os << "]";
    return os.str();
}

Tensor::Tensor(std::vector<int> shape) : shape_(std::move(shape)), data_(shape_size(shape_), 0.0) {}

Tensor::Tensor(std::vector<int> shape, std::vector<double> values) : shape_(std::move(shape)), data_(std::move(values)) {
    if (data_.size() != shape_size(shape_)) {
        throw std::invalid_argument("tensor data length " + std::to_string(data_.size()) + " does not match shape " +
                                    shape_str(shape_));
    }
}

Tensor Tensor::full(std::vector<int> shape, double value) {
    Tensor t(std::move(shape));
    for (auto& v : t.data_) v = value;
    return t;
}

Tensor Tensor::scalar(double value) { return Tensor({1}, {value}); }

bool Tensor::all_finite() const {
    for (double v : data_) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

namespace {
std::atomic<std::uint64_t> g_tape_counter{1};
thread_local int g_probe_depth = 0;
}  // namespace

Tape::Tape() : id_(g_tape_counter.fetch_add(1)) {}

void Tape::watch(Tensor& t) {
    nodes_.push_back(Node{t.size(), nullptr});
    grads_.emplace_back();
    t.tape_id = id_;
    t.node = static_cast<int>(nodes_.size()) - 1;
}

int Tape::record(std::size_t output_size, Backward backward) {
    nodes_.push_back(Node{output_size, std::move(backward)});
    grads_.emplace_back();
    return static_cast<int>(nodes_.size()) - 1;
}

std::vector<double>& Tape::grad_buffer(int node) {
    auto& g = grads_[static_cast<std::size_t>(node)];
    if (g.empty()) g.assign(nodes_[static_cast<std::size_t>(node)].size, 0.0);
    return g;
}

void Tape::backward(const Tensor& output) {
    if (output.tape_id != id_ || output.node < 0) {
        throw std::invalid_argument("backward: output tensor is not recorded on this tape");
    }
    if (nodes_[static_cast<std::size_t>(output.node)].size != 1) {
        throw std::invalid_argument("backward: output must be scalar, node has size " +
                                    std::to_string(nodes_[static_cast<std::size_t>(output.node)].size));
    }
    grad_buffer(output.node)[0] = 1.0;
    for (int id = output.node; id >= 0; --id) {
        auto& g = grads_[static_cast<std::size_t>(id)];
        if (g.empty()) continue;  // never reached from the root
        auto& fn = nodes_[static_cast<std::size_t>(id)].backward;
        if (fn) fn(g, *this);
    }
}

std::vector<double> Tape::grad(const Tensor& t) const {
    if (t.tape_id != id_ || t.node < 0) {
        throw std::invalid_argument("grad: tensor is not tracked by this tape");
    }
    const auto& g = grads_[static_cast<std::size_t>(t.node)];
    if (g.empty()) return std::vector<double>(t.size(), 0.0);
    return g;
}

ProbeGuard::ProbeGuard() { ++g_probe_depth; }
ProbeGuard::~ProbeGuard() { --g_probe_depth; }
bool ProbeGuard::active() { return g_probe_depth > 0; }

}  // namespace efraft
