#include "softcbm/schedule.hpp"

#include <algorithm>
#include <cmath>

#include "softcbm/error.hpp"

namespace softcbm {

StagePlan staged_schedule(int epoch, const TrainConfig& cfg) {
  require(epoch >= 0, "epoch must be >= 0");
  if (epoch < cfg.freeze_epochs) return {{}, true, cfg.base_lr};
  return {cfg.unfreeze_stages, true, cfg.unfreeze_lr};
}

PlateauScheduler::PlateauScheduler(double lr, double factor, int patience, double min_lr, double threshold)
    : lr_(lr), factor_(factor), patience_(patience), min_lr_(min_lr), threshold_(threshold) {
  require(lr > 0.0, "learning rate must be positive");
  require(factor > 0.0 && factor < 1.0, "plateau factor must lie in (0, 1)");
  require(patience >= 0 && min_lr > 0.0 && threshold >= 0.0, "invalid plateau settings");
}

double PlateauScheduler::step(double loss) {
  require(std::isfinite(loss), "plateau scheduler needs a finite loss");
  if (loss < best_ - threshold_) {
    best_ = loss;
    bad_ = 0;
  } else if (++bad_ > patience_) {
    lr_ = std::max(lr_ * factor_, min_lr_);
    bad_ = 0;
  }
  return lr_;
}

void PlateauScheduler::reset(double lr) {
  require(lr > 0.0, "learning rate must be positive");
  lr_ = lr;
  best_ = std::numeric_limits<double>::infinity();
  bad_ = 0;
}

template <typename T>
Adam<T>::Adam(std::vector<nn::Parameter<T>*> params, double beta1, double beta2, double eps, double weight_decay)
    : params_(std::move(params)), state_(params_.size()), beta1_(beta1), beta2_(beta2), eps_(eps),
      weight_decay_(weight_decay) {}

template <typename T>
void Adam<T>::step(double lr) {
  require(lr >= 0.0, "learning rate must be >= 0");
  for (std::size_t i = 0; i < params_.size(); ++i) {
    nn::Parameter<T>& p = *params_[i];
    if (!p.trainable || p.is_buffer()) continue;
    State& s = state_[i];
    if (s.m.empty()) {
      s.m.assign(p.value.size(), 0.0);
      s.v.assign(p.value.size(), 0.0);
    }
    ++s.t;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(s.t));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(s.t));
    for (std::size_t j = 0; j < p.value.size(); ++j) {
      const double g = static_cast<double>(p.grad[j]) + weight_decay_ * p.value[j];
      s.m[j] = beta1_ * s.m[j] + (1.0 - beta1_) * g;
      s.v[j] = beta2_ * s.v[j] + (1.0 - beta2_) * g * g;
      if (lr == 0.0) continue;
      const double update = lr * (s.m[j] / c1) / (std::sqrt(s.v[j] / c2) + eps_);
      p.value[j] = static_cast<T>(p.value[j] - update);
    }
  }
}

template class Adam<float>;
template class Adam<double>;

}  // namespace softcbm
