#pragma once
// Adam optimizer over an explicit, ordered parameter list. Update order is
// the registration order, so steps are deterministic. Moment math runs in
// double; moments are stored as float32 like everything else.

#include <cstdint>
#include <vector>

#include "fw/tensor.hpp"

namespace fw {

struct AdamConfig {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

class Adam {
public:
    Adam(std::vector<Tensor> params, AdamConfig cfg = {});

    // One update from the gradients currently stored on the parameters.
    // Rejects parameters with missing gradient buffers. Zeroes grads after.
    void step();

    std::int64_t step_count() const { return step_count_; }
    const AdamConfig& config() const { return cfg_; }

    // Adjust the learning rate between steps (for decay schedules).
    void set_lr(double lr);

private:
    std::vector<Tensor> params_;
    std::vector<std::vector<float>> m_, v_;
    AdamConfig cfg_;
    std::int64_t step_count_ = 0;
};

}  // namespace fw
