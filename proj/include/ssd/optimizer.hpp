#pragma once

#include "ssd/autodiff.hpp"

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace ssd {

struct AdamConfig {
    double learning_rate = 0.001;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    /// Global gradient-norm clip over the parameters of one step; <= 0 disables.
    double clip_norm = 5.0;
};

/// Adam with per-parameter bias correction. Moment slots are keyed by
/// parameter name so they survive checkpointing; a parameter's step count only
/// advances when that parameter is part of a step.
class Adam {
public:
    struct Slot {
        Matrix m;
        Matrix v;
        std::int64_t t = 0;
    };

    Adam() = default;
    explicit Adam(const AdamConfig& cfg) : config_(cfg) {}

    /// Clips, applies one update to `params`, then zeroes their gradients.
    /// Returns the pre-clip gradient norm.
    double step(const std::vector<ad::Parameter*>& params);

    void reset(const std::string& name) { slots_.erase(name); }
    const AdamConfig& config() const { return config_; }
    std::map<std::string, Slot>& slots() { return slots_; }
    const std::map<std::string, Slot>& slots() const { return slots_; }

private:
    AdamConfig config_;
    std::map<std::string, Slot> slots_;
};

void zero_grads(const std::vector<ad::Parameter*>& params);

}  // namespace ssd
