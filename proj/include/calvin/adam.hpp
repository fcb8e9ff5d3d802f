#pragma once

#include <map>
#include <string>

#include "calvin/tensor.hpp"

namespace calvin {

struct AdamConfig {
    float lr = 0.001f;
    float beta1 = 0.9f;
    float beta2 = 0.999f;
    float eps = 1e-8f;
};

// Adam with bias correction over a named parameter set. Moments are keyed by
// parameter name so they can travel with checkpoints.
class Adam {
  public:
    explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

    const AdamConfig& config() const { return cfg_; }
    int64_t step_count() const { return step_; }

    // One update for a single parameter. Deterministic given inputs.
    void step_param(const std::string& name, Tensor& param, const Tensor& grad);

    // Call once after updating every parameter of a training step.
    void advance() { ++step_; }

    // Serialization hooks: moments plus the step counter.
    std::map<std::string, Tensor> state() const;
    void load_state(const std::map<std::string, Tensor>& state);

  private:
    AdamConfig cfg_;
    int64_t step_ = 0; // completed steps; the in-flight step is step_+1
    std::map<std::string, Tensor> m_;
    std::map<std::string, Tensor> v_;
};

}  // namespace calvin
