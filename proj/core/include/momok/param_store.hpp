#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace momok {

// One named tensor of trainable values. Parameters are stored in 32-bit;
// gradients and Adam moments accumulate in 64-bit.
struct ParamGroup {
    std::string name;
    std::vector<std::size_t> shape;
    std::vector<float> value;
    std::vector<double> grad;
    std::vector<double> adam_m;
    std::vector<double> adam_v;

    std::size_t size() const { return value.size(); }
};

class ParamStore {
public:
    ParamGroup& add(const std::string& name, std::vector<std::size_t> shape);
    bool has(const std::string& name) const;
    ParamGroup& at(const std::string& name);
    const ParamGroup& at(const std::string& name) const;

    std::span<const float> values(const std::string& name) const;
    std::span<float> values(const std::string& name);
    std::span<double> grads(const std::string& name);

    std::vector<ParamGroup>& groups() { return groups_; }
    const std::vector<ParamGroup>& groups() const { return groups_; }

    void zero_grads();
    std::size_t param_count() const;

private:
    std::vector<ParamGroup> groups_;
    std::unordered_map<std::string, std::size_t> index_;
};

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// Bias-corrected Adam over every group; `step_index` is 1-based. Gradient
// buffers are zeroed afterwards. Throws NumericError naming the group on a
// non-finite gradient.
void adam_step(ParamStore& store, const AdamConfig& cfg, std::int64_t step_index);

}  // namespace momok
