#include "softcbm/train_config.hpp"

#include <charconv>

#include "softcbm/error.hpp"

namespace softcbm {

std::uint64_t parse_seed(std::string_view text) {
  const std::string t = trim(text);
  std::uint64_t v = 0;
  const auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (ec != std::errc() || ptr != t.data() + t.size() || t.empty())
    throw ValidationError("seed must be an unsigned 64-bit integer, got '" + t + "'");
  return v;
}

void TrainConfig::validate() const {
  require(alpha >= 0.0 && beta >= 0.0, "alpha and beta must be >= 0");
  require(gamma >= 0.0, "gamma must be >= 0");
  require(smoothing >= 0.0 && smoothing < 1.0, "smoothing must lie in [0, 1)");
  require(base_lr > 0.0 && unfreeze_lr > 0.0, "learning rates must be positive");
  require(freeze_epochs >= 0, "freeze_epochs must be >= 0");
  require(epochs >= 0, "epochs must be >= 0");
  require(batch_size >= 2, "batch_size must be >= 2 for batch normalization");
  require(dropout >= 0.0 && dropout < 1.0, "dropout must lie in [0, 1)");
  require(weight_decay >= 0.0, "weight_decay must be >= 0");
  require(oversample_target > 0, "oversample_target must be positive");
  require(plateau_factor > 0.0 && plateau_factor < 1.0, "plateau_factor must lie in (0, 1)");
  require(plateau_patience >= 0, "plateau_patience must be >= 0");
  require(plateau_min_lr > 0.0, "plateau_min_lr must be positive");
  require(plateau_threshold >= 0.0, "plateau_threshold must be >= 0");
  require(folds >= 2, "folds must be >= 2");
  require(n_concepts >= 1, "n_concepts must be >= 1");
  require(tta_passes >= 0, "tta_passes must be >= 0");
}

std::string to_string(LeakagePolicy policy) { return policy == LeakagePolicy::filter ? "filter" : "admit"; }

LeakagePolicy parse_leakage_policy(const std::string& text) {
  if (text == "filter") return LeakagePolicy::filter;
  if (text == "admit") return LeakagePolicy::admit;
  throw ValidationError("leakage policy must be filter or admit, got " + text);
}

std::string join_stages(const std::set<std::string>& stages) {
  std::string out;
  for (const auto& s : stages) out += (out.empty() ? "" : " ") + s;
  return out;
}

std::set<std::string> parse_stages(const std::string& text) {
  std::set<std::string> out;
  for (auto part : split(text, ' ')) {
    part = trim(part);
    if (part == "all") {
      out.insert({"stem", "stage1", "stage2", "stage3", "stage4"});
    } else if (!part.empty()) {
      out.insert(part);
    }
  }
  return out;
}

void TrainConfig::write(KeyValueDocument& doc) const {
  doc.set("train.alpha", alpha);
  doc.set("train.beta", beta);
  doc.set("train.gamma", gamma);
  doc.set("train.smoothing", smoothing);
  doc.set("train.base_lr", base_lr);
  doc.set("train.unfreeze_lr", unfreeze_lr);
  doc.set("train.freeze_epochs", freeze_epochs);
  doc.set("train.unfreeze_stages", join_stages(unfreeze_stages));
  doc.set("train.epochs", epochs);
  doc.set("train.batch_size", batch_size);
  doc.set("train.dropout", dropout);
  doc.set("train.weight_decay", weight_decay);
  doc.set("train.seed", std::to_string(seed));
  doc.set("train.oversample_target", oversample_target);
  doc.set("train.plateau_factor", plateau_factor);
  doc.set("train.plateau_patience", plateau_patience);
  doc.set("train.plateau_min_lr", plateau_min_lr);
  doc.set("train.plateau_threshold", plateau_threshold);
  doc.set("train.folds", folds);
  doc.set("train.n_concepts", n_concepts);
  doc.set("train.leakage", to_string(leakage));
  doc.set("train.augment", augment);
  doc.set("train.tta_passes", tta_passes);
}

void TrainConfig::read(const KeyValueDocument& doc) {
  auto d = [&](const char* key, double& v) {
    if (doc.contains(key)) v = doc.get_double(key);
  };
  auto i = [&](const char* key, int& v) {
    if (doc.contains(key)) v = static_cast<int>(doc.get_int(key));
  };
  d("train.alpha", alpha);
  d("train.beta", beta);
  d("train.gamma", gamma);
  d("train.smoothing", smoothing);
  d("train.base_lr", base_lr);
  d("train.unfreeze_lr", unfreeze_lr);
  i("train.freeze_epochs", freeze_epochs);
  if (auto s = doc.get("train.unfreeze_stages")) unfreeze_stages = parse_stages(*s);
  i("train.epochs", epochs);
  i("train.batch_size", batch_size);
  d("train.dropout", dropout);
  d("train.weight_decay", weight_decay);
  if (auto s = doc.get("train.seed")) seed = parse_seed(*s);
  i("train.oversample_target", oversample_target);
  d("train.plateau_factor", plateau_factor);
  i("train.plateau_patience", plateau_patience);
  d("train.plateau_min_lr", plateau_min_lr);
  d("train.plateau_threshold", plateau_threshold);
  i("train.folds", folds);
  i("train.n_concepts", n_concepts);
  if (auto s = doc.get("train.leakage")) leakage = parse_leakage_policy(*s);
  if (doc.contains("train.augment")) augment = doc.get_bool("train.augment");
  i("train.tta_passes", tta_passes);
}

}  // namespace softcbm
