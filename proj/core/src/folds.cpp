#include "softcbm/folds.hpp"

#include <algorithm>
#include <map>

#include <json.hpp>

#include "softcbm/error.hpp"
#include "softcbm/rng.hpp"

namespace softcbm {

FoldPlan stratified_kfold(std::span<const int> labels, int k, std::uint64_t seed) {
  require(k >= 2, "k must be >= 2");
  std::vector<std::size_t> by_class[2];
  for (std::size_t i = 0; i < labels.size(); ++i) {
    require(labels[i] == 0 || labels[i] == 1, "labels must be 0 or 1");
    by_class[labels[i]].push_back(i);
  }
  for (int c = 0; c < 2; ++c)
    require(by_class[c].size() >= static_cast<std::size_t>(k),
            "class " + std::to_string(c) + " has " + std::to_string(by_class[c].size()) +
                " members, fewer than k = " + std::to_string(k));

  FoldPlan plan;
  plan.k = k;
  plan.seed = seed;
  plan.folds.resize(static_cast<std::size_t>(k));
  plan.oversample_log.resize(static_cast<std::size_t>(k));

  std::size_t cursor = 0;
  for (int c : {1, 0}) {
    auto members = by_class[c];
    Rng rng(derive_seed({seed, static_cast<std::uint64_t>(c)}));
    rng.shuffle(members);
    for (std::size_t idx : members) {
      plan.folds[cursor].val.push_back(idx);
      cursor = (cursor + 1) % static_cast<std::size_t>(k);
    }
  }
  for (auto& fold : plan.folds) {
    std::sort(fold.val.begin(), fold.val.end());
    std::vector<bool> in_val(labels.size(), false);
    for (std::size_t idx : fold.val) in_val[idx] = true;
    for (std::size_t i = 0; i < labels.size(); ++i)
      if (!in_val[i]) fold.train.push_back(i);
  }
  return plan;
}

std::vector<TrainEntry> oversample_controls(std::span<const std::size_t> train_indices, std::span<const int> labels,
                                            int target, std::uint64_t seed, std::vector<OversampleEntry>* log) {
  require(target > 0, "oversample target must be positive");
  std::vector<TrainEntry> out;
  std::vector<std::size_t> controls;
  for (std::size_t idx : train_indices) {
    require(idx < labels.size(), "training index out of range");
    out.push_back({idx, false});
    if (labels[idx] == 0) controls.push_back(idx);
  }
  require(!controls.empty(), "training fold has no controls to oversample");
  if (log) log->clear();
  if (controls.size() >= static_cast<std::size_t>(target)) return out;

  Rng rng(derive_seed({seed, 0x6F7673ULL}));
  rng.shuffle(controls);
  std::map<std::size_t, int> counts;
  const std::size_t missing = static_cast<std::size_t>(target) - controls.size();
  for (std::size_t j = 0; j < missing; ++j) {
    const std::size_t src = controls[j % controls.size()];
    out.push_back({src, true});
    ++counts[src];
  }
  if (log)
    for (const auto& [src, n] : counts) log->push_back({src, n});
  return out;
}

std::string FoldPlan::to_json(std::span<const std::string> subject_ids) const {
  nlohmann::ordered_json j;
  j["k"] = k;
  j["seed"] = seed;
  auto& arr = j["folds"] = nlohmann::ordered_json::array();
  for (std::size_t f = 0; f < folds.size(); ++f) {
    nlohmann::ordered_json fj;
    fj["fold"] = f;
    fj["train"] = folds[f].train;
    fj["val"] = folds[f].val;
    if (!subject_ids.empty()) {
      auto ids = [&](const std::vector<std::size_t>& idx) {
        std::vector<std::string> out;
        for (std::size_t i : idx) out.push_back(subject_ids[i]);
        return out;
      };
      fj["train_ids"] = ids(folds[f].train);
      fj["val_ids"] = ids(folds[f].val);
    }
    auto& log = fj["oversample_log"] = nlohmann::ordered_json::array();
    if (f < oversample_log.size())
      for (const auto& e : oversample_log[f]) log.push_back({{"source", e.source}, {"duplicates", e.duplicates}});
    arr.push_back(std::move(fj));
  }
  return j.dump(2) + "\n";
}

FoldPlan FoldPlan::from_json(std::string_view text) {
  try {
    const auto j = nlohmann::json::parse(text);
    FoldPlan plan;
    plan.k = j.at("k").get<int>();
    plan.seed = j.at("seed").get<std::uint64_t>();
    for (const auto& fj : j.at("folds")) {
      Fold f;
      f.train = fj.at("train").get<std::vector<std::size_t>>();
      f.val = fj.at("val").get<std::vector<std::size_t>>();
      plan.folds.push_back(std::move(f));
      std::vector<OversampleEntry> log;
      for (const auto& e : fj.at("oversample_log"))
        log.push_back({e.at("source").get<std::size_t>(), e.at("duplicates").get<int>()});
      plan.oversample_log.push_back(std::move(log));
    }
    if (plan.folds.size() != static_cast<std::size_t>(plan.k)) throw FormatError("fold count does not match k");
    return plan;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("bad fold plan: ") + e.what());
  }
}

}  // namespace softcbm
