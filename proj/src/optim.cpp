#include "bga/optim.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace bga {

std::size_t warmup_steps_for(double ratio, std::size_t total_steps) {
  if (!(ratio >= 0.0)) throw std::invalid_argument("warmup ratio must be non-negative");
  const auto w = static_cast<std::size_t>(std::ceil(ratio * static_cast<double>(total_steps)));
  return std::max<std::size_t>(w, 1);
}

bool AdamW::default_decay_rule(const std::string& name) {
  auto ends_with = [&](const std::string& s) {
    return name.size() >= s.size() && name.compare(name.size() - s.size(), s.size(), s) == 0;
  };
  return ends_with(".weight") && name.find("norm") == std::string::npos;
}

AdamW::AdamW(nn::ParamList params, AdamWConfig cfg, std::function<bool(const std::string&)> decays)
    : params_(std::move(params)), cfg_(cfg) {
  if (cfg_.warmup_steps == 0) throw std::invalid_argument("adamw: warmup_steps must be at least 1");
  for (const auto& [name, t] : params_) {
    if (!t.is_leaf() || !t.requires_grad()) throw std::invalid_argument("adamw: " + name + " is not a trainable leaf");
    decay_.push_back(decays(name));
    m_.emplace_back(t.numel(), 0.0);
    v_.emplace_back(t.numel(), 0.0);
  }
}

double AdamW::learning_rate(std::size_t step) const {
  if (step < cfg_.warmup_steps) {
    return cfg_.lr * static_cast<double>(step + 1) / static_cast<double>(cfg_.warmup_steps);
  }
  return cfg_.lr;
}

void AdamW::step() {
  const double lr = learning_rate(step_);
  ++step_;
  const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
  const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
  for (std::size_t k = 0; k < params_.size(); ++k) {
    Tensor& t = params_[k].second;
    if (!t.has_grad()) continue;
    auto g = t.grad();
    auto w = t.values_mut();
    auto& m = m_[k];
    auto& v = v_[k];
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g[i];
      v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
      const double update = (m[i] / c1) / (std::sqrt(v[i] / c2) + cfg_.eps);
      if (decay_[k]) w[i] -= lr * cfg_.weight_decay * w[i];
      w[i] -= lr * update;
    }
  }
  zero_grad();
}

void AdamW::zero_grad() {
  for (auto& [name, t] : params_) t.zero_grad();
}

}  // namespace bga
