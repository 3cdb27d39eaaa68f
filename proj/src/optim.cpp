#include "clva/optim.hpp"

#include <cmath>

#include "clva/errors.hpp"

namespace clva::optim {

Adam::Adam(std::vector<std::pair<std::string, torch::Tensor>> params, AdamOptions options)
    : params_(std::move(params)), options_(options) {
    if (!(options_.lr >= 0.0)) throw ArgumentError("Adam: learning rate must be >= 0");
    m_.reserve(params_.size());
    v_.reserve(params_.size());
    for (const auto& [name, p] : params_) {
        m_.push_back(torch::zeros_like(p.detach()));
        v_.push_back(torch::zeros_like(p.detach()));
    }
}

void Adam::zero_grad() {
    for (auto& [name, p] : params_)
        if (p.grad().defined()) p.mutable_grad() = torch::Tensor();
}

void Adam::step() {
    torch::NoGradGuard no_grad;
    ++step_;
    const double correction1 = 1.0 - std::pow(options_.beta1, static_cast<double>(step_));
    const double correction2 = 1.0 - std::pow(options_.beta2, static_cast<double>(step_));
    const double step_size = options_.lr / correction1;
    const double sqrt_correction2 = std::sqrt(correction2);
    for (std::size_t i = 0; i < params_.size(); ++i) {
        auto& p = params_[i].second;
        const auto& g = p.grad();
        if (!g.defined()) continue;
        m_[i].mul_(options_.beta1).add_(g, 1.0 - options_.beta1);
        v_[i].mul_(options_.beta2).addcmul_(g, g, 1.0 - options_.beta2);
        auto denom = (v_[i].sqrt() / sqrt_correction2).add_(options_.eps);
        if (step_size != 0.0) p.addcdiv_(m_[i], denom, -step_size);
    }
}

AdamState Adam::state() const {
    AdamState s;
    s.step = step_;
    for (std::size_t i = 0; i < params_.size(); ++i) {
        s.first_moment.emplace_back(params_[i].first, m_[i].clone());
        s.second_moment.emplace_back(params_[i].first, v_[i].clone());
    }
    return s;
}

void Adam::load_state(const AdamState& state) {
    if (state.first_moment.size() != params_.size() || state.second_moment.size() != params_.size())
        throw ArgumentError("Adam::load_state: parameter count mismatch");
    torch::NoGradGuard no_grad;
    for (std::size_t i = 0; i < params_.size(); ++i) {
        const auto& [m_name, m] = state.first_moment[i];
        const auto& [v_name, v] = state.second_moment[i];
        if (m_name != params_[i].first || v_name != params_[i].first)
            throw ArgumentError("Adam::load_state: parameter name mismatch at " + params_[i].first);
        if (m.sizes() != m_[i].sizes() || v.sizes() != v_[i].sizes())
            throw ArgumentError("Adam::load_state: shape mismatch at " + params_[i].first);
        m_[i].copy_(m);
        v_[i].copy_(v);
    }
    step_ = state.step;
}

double clip_grad_norm(const std::vector<torch::Tensor>& params, double max_norm) {
    torch::NoGradGuard no_grad;
    double total = 0.0;
    for (const auto& p : params)
        if (p.grad().defined()) total += p.grad().to(torch::kFloat64).pow(2).sum().item<double>();
    const double norm = std::sqrt(total);
    if (max_norm > 0.0 && norm > max_norm) {
        const double scale = max_norm / (norm + 1e-6);
        for (const auto& p : params)
            if (p.grad().defined()) p.grad().mul_(scale);
    }
    return norm;
}

}  // namespace clva::optim
