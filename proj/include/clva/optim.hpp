#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include <torch/torch.h>

namespace clva::optim {

struct AdamOptions {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// Adam moments for one parameter group, keyed by parameter name.
struct AdamState {
    std::int64_t step = 0;
    std::vector<std::pair<std::string, torch::Tensor>> first_moment;
    std::vector<std::pair<std::string, torch::Tensor>> second_moment;
};

/// Adaptive moment estimation over a fixed, named parameter group.
class Adam {
public:
    Adam(std::vector<std::pair<std::string, torch::Tensor>> params, AdamOptions options);

    void zero_grad();
    /// Applies one update from the parameters' current gradients. Parameters
    /// without a gradient are left untouched.
    void step();

    const AdamOptions& options() const { return options_; }
    std::int64_t steps() const { return step_; }

    AdamState state() const;
    /// Restores moments saved by state(); names and shapes must match.
    void load_state(const AdamState& state);

private:
    std::vector<std::pair<std::string, torch::Tensor>> params_;
    std::vector<torch::Tensor> m_;
    std::vector<torch::Tensor> v_;
    AdamOptions options_;
    std::int64_t step_ = 0;
};

/// Scales gradients so their global L2 norm is at most `max_norm`; returns the
/// norm before scaling.
double clip_grad_norm(const std::vector<torch::Tensor>& params, double max_norm);

}  // namespace clva::optim
