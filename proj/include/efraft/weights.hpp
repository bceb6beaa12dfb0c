#pragma once

#include <cstdint>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include "efraft/config.hpp"
#include "efraft/rng.hpp"
#include "efraft/tensor.hpp"

namespace efraft {

// Ordered name -> tensor store for every learned parameter. Creation order
// is fixed by build_model, which makes initialization and serialization
// reproducible byte for byte. Optional access tracking lets tests and the
// bench report find out which parameters a given configuration consumes.
class ModelWeights {
public:
    // Creates a parameter initialized uniformly in [-1/sqrt(fan_in), +1/sqrt(fan_in)].
    Tensor& create(const std::string& name, std::vector<int> shape, int fan_in, SplitMix64& rng);
    Tensor& create_raw(const std::string& name, Tensor value);  // used by deserialization

    Tensor& get(const std::string& name);
    const Tensor& get(const std::string& name) const;
    bool has(const std::string& name) const { return index_.count(name) != 0; }

    const std::vector<std::string>& names() const { return order_; }
    std::size_t entry_count() const { return order_.size(); }
    std::uint64_t parameter_count() const;

    void watch_all(Tape& tape);

    void start_tracking() const;
    void stop_tracking() const;
    std::set<std::string> consumed() const { return consumed_; }

private:
    std::vector<std::string> order_;
    std::unordered_map<std::string, std::size_t> index_;
    std::vector<Tensor> tensors_;
    mutable bool tracking_ = false;
    mutable std::set<std::string> consumed_;
};

struct Model {
    ModelConfig config;
    ModelWeights weights;
};

// Creates every parameter of the network (both encoder trunks, the axis
// attention projections, the adaptive-lookup head, the motion encoder, the
// GRU and the flow head) in a fixed order, drawing from one splitmix64
// stream seeded with cfg.seed.
Model build_model(const ModelConfig& cfg);

// Closed-form element count of the parameters build_model creates.
std::uint64_t analytic_parameter_count(const ModelConfig& cfg);

// Binary container: magic "EFRW", u32 version, u32 entry count, then per
// entry u16 name length + name, u8 ndim, ndim x u32 extents and row-major
// little-endian f32 data; an 8-byte hash of the embedded config entries
// closes the file. Config values travel as reserved "config.*" entries, so
// a weights file reconstructs its own ModelConfig on load.
void save_model(const Model& model, const std::string& path);
Model load_model(const std::string& path);

}  // namespace efraft
