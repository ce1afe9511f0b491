#pragma once

#include <limits>
#include <set>
#include <string>
#include <vector>

#include "softcbm/nn.hpp"
#include "softcbm/train_config.hpp"

namespace softcbm {

struct StagePlan {
  std::set<std::string> stages;
  bool heads_trainable = true;
  double lr = 0.0;

  bool encoder_frozen() const { return stages.empty(); }
};

/// Before `freeze_epochs`: encoder frozen, heads at base_lr. From then on the
/// configured stages and the heads train at unfreeze_lr (before plateau decay).
StagePlan staged_schedule(int epoch, const TrainConfig& cfg);

/// Reduce-on-plateau. An epoch counts as an improvement when the monitored loss
/// drops below best - threshold. Once more than `patience` consecutive epochs
/// fail to improve, lr becomes max(lr * factor, min_lr) and the count restarts.
class PlateauScheduler {
 public:
  PlateauScheduler(double lr, double factor, int patience, double min_lr, double threshold);
  explicit PlateauScheduler(double lr, const TrainConfig& cfg)
      : PlateauScheduler(lr, cfg.plateau_factor, cfg.plateau_patience, cfg.plateau_min_lr, cfg.plateau_threshold) {}

  /// Feeds one epoch's loss and returns the learning rate for the next epoch.
  double step(double loss);
  /// Restarts tracking at a new learning rate (used when the encoder unfreezes).
  void reset(double lr);

  double lr() const { return lr_; }
  double best() const { return best_; }
  int bad_epochs() const { return bad_; }

 private:
  double lr_, factor_;
  int patience_;
  double min_lr_, threshold_;
  double best_ = std::numeric_limits<double>::infinity();
  int bad_ = 0;
};

/// Adam with optional L2 weight decay folded into the gradient. Only
/// parameters flagged trainable are touched; moment state is created the
/// first time a parameter is updated and kept per parameter.
template <typename T>
class Adam {
 public:
  Adam(std::vector<nn::Parameter<T>*> params, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8,
       double weight_decay = 0.0);

  void step(double lr);

 private:
  struct State {
    std::vector<double> m, v;
    long long t = 0;
  };
  std::vector<nn::Parameter<T>*> params_;
  std::vector<State> state_;
  double beta1_, beta2_, eps_, weight_decay_;
};

}  // namespace softcbm
