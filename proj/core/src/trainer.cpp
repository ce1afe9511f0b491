#include "softcbm/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "softcbm/augment.hpp"
#include "softcbm/error.hpp"
#include "softcbm/rng.hpp"
#include "softcbm/schedule.hpp"

namespace softcbm {

namespace {

constexpr std::uint64_t kShuffleTag = 0x73687566;
constexpr std::uint64_t kDropoutTag = 0x64726f70;
constexpr std::uint64_t kOversampleTag = 0x6f766572;
constexpr double kProbeLearningRate = 0.5;

Tensor<float> target_batch(const std::vector<std::vector<double>>& targets, const std::vector<std::size_t>& rows) {
  const int k = static_cast<int>(targets.at(rows.front()).size());
  Tensor<float> t({static_cast<int>(rows.size()), k});
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (int j = 0; j < k; ++j) t[i * static_cast<std::size_t>(k) + static_cast<std::size_t>(j)] =
        static_cast<float>(targets[rows[i]][static_cast<std::size_t>(j)]);
  return t;
}

int count_correct(const Tensor<float>& logits, const std::vector<int>& labels) {
  int correct = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int pred = patient_probability(logits[2 * i], logits[2 * i + 1]) >= kDecisionThreshold ? 1 : 0;
    correct += pred == labels[i];
  }
  return correct;
}

// Splits [0, n) into batches of `size`; a trailing batch of one joins its predecessor.
std::vector<std::pair<std::size_t, std::size_t>> batch_ranges(std::size_t n, std::size_t size) {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  for (std::size_t s = 0; s < n; s += size) out.emplace_back(s, std::min(n, s + size));
  if (out.size() > 1 && out.back().second - out.back().first == 1) {
    out[out.size() - 2].second = out.back().second;
    out.pop_back();
  }
  return out;
}

// Logistic readout over the true normalized concepts, fitted by plain gradient
// descent on the same batches as the model. It never touches the model.
class ConceptProbe {
 public:
  explicit ConceptProbe(std::size_t k) : w_(k, 0.0) {}

  double probability(const std::vector<double>& x) const {
    double s = b_;
    for (std::size_t j = 0; j < w_.size(); ++j) s += w_[j] * x[j];
    return 1.0 / (1.0 + std::exp(-s));
  }

  void step(const std::vector<std::vector<double>>& targets, const std::vector<std::size_t>& rows,
            const std::vector<int>& labels) {
    std::vector<double> gw(w_.size(), 0.0);
    double gb = 0.0;
    for (std::size_t i = 0; i < rows.size(); ++i) {
      const auto& x = targets[rows[i]];
      const double r = probability(x) - labels[i];
      for (std::size_t j = 0; j < w_.size(); ++j) gw[j] += r * x[j];
      gb += r;
    }
    const double scale = kProbeLearningRate / static_cast<double>(rows.size());
    for (std::size_t j = 0; j < w_.size(); ++j) w_[j] -= scale * gw[j];
    b_ -= scale * gb;
  }

  double accuracy(const std::vector<std::vector<double>>& targets, const std::vector<std::size_t>& rows,
                  const std::vector<int>& labels) const {
    int correct = 0;
    for (std::size_t r : rows) correct += (probability(targets[r]) >= kDecisionThreshold ? 1 : 0) == labels[r];
    return static_cast<double>(correct) / static_cast<double>(rows.size());
  }

 private:
  std::vector<double> w_;
  double b_ = 0.0;
};

}  // namespace

std::uint64_t oversample_seed(std::uint64_t seed) { return derive_seed({seed, kOversampleTag}); }

std::vector<std::vector<double>> concept_targets(const CohortData& cohort, const ConceptSelection& selection) {
  std::vector<std::vector<double>> out;
  out.reserve(cohort.size());
  for (std::size_t r = 0; r < cohort.size(); ++r) out.push_back(normalize_row(selection, cohort.table, r));
  return out;
}

EvalResult evaluate_indices(const Model& model, const CohortData& cohort, const std::vector<std::size_t>& indices,
                            const std::vector<std::vector<double>>& targets, const TrainConfig& cfg) {
  require(!indices.empty(), "evaluation needs at least one subject");
  EvalResult res;
  double task_sum = 0.0, concept_sum = 0.0;
  int correct = 0;
  for (auto [s, e] : batch_ranges(indices.size(), static_cast<std::size_t>(cfg.batch_size))) {
    std::vector<std::size_t> rows(indices.begin() + static_cast<std::ptrdiff_t>(s),
                                  indices.begin() + static_cast<std::ptrdiff_t>(e));
    std::vector<const Volume*> vols;
    std::vector<int> labels;
    for (std::size_t r : rows) {
      vols.push_back(&cohort.volumes.at(r));
      labels.push_back(cohort.records.at(r).label);
    }
    const auto fwd = model.forward(make_batch(vols), nn::Mode::eval);
    const Tensor<float> tgt = target_batch(targets, rows);
    const double n = static_cast<double>(rows.size());
    task_sum += focal_loss(fwd.logits, labels, cfg.gamma, cfg.smoothing) * n;
    concept_sum += concept_mse(fwd.c, tgt) * n;
    correct += count_correct(fwd.logits, labels);
    for (std::size_t i = 0; i < rows.size(); ++i) {
      PredictionRecord p;
      p.subject_id = cohort.records[rows[i]].subject_id;
      p.true_label = labels[i];
      p.logits = {fwd.logits[2 * i], fwd.logits[2 * i + 1]};
      p.probability = patient_probability(p.logits[0], p.logits[1]);
      p.predicted_label = p.probability >= kDecisionThreshold ? 1 : 0;
      for (int j = 0; j < fwd.c.dim(1); ++j) p.predicted_concepts.push_back(fwd.c[i * fwd.c.dim(1) + j]);
      res.predictions.push_back(std::move(p));
    }
  }
  const double total = static_cast<double>(indices.size());
  res.loss = total_loss(task_sum / total, concept_sum / total, cfg.alpha, cfg.beta);
  res.accuracy = correct / total;
  res.auc = compute_metrics(res.predictions).auc;
  return res;
}

TrainResult train_run(const CohortData& cohort, const Fold& fold, const ConceptSelection& selection,
                      const TrainConfig& cfg, Model& model, const EpochCallback& on_epoch) {
  cfg.validate();
  require(!fold.train.empty(), "training set is empty");
  require(!fold.val.empty(), "validation set is empty");
  require(static_cast<int>(selection.size()) == model.n_concepts(),
          "concept selection size does not match the model");
  for (std::size_t i : fold.train) require(i < cohort.size(), "training index out of range");
  for (std::size_t i : fold.val) require(i < cohort.size(), "validation index out of range");

  TrainResult result;
  if (cfg.epochs == 0) return result;

  const std::vector<int> labels = cohort.labels();
  const auto targets = concept_targets(cohort, selection);
  const auto entries = oversample_controls(fold.train, labels, cfg.oversample_target,
                                           oversample_seed(cfg.seed), &result.oversample_log);
  const PolicySet policies = default_policies();

  Adam<float> adam(model.parameters(), 0.9, 0.999, 1e-8, cfg.weight_decay);
  PlateauScheduler plateau(staged_schedule(0, cfg).lr, cfg);
  std::set<std::string> current_stages;
  double best_loss = std::numeric_limits<double>::infinity();
  std::vector<std::vector<float>> best_weights;
  nn::Tape<float> tape;
  ConceptProbe probe(selection.size());

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const StagePlan plan = staged_schedule(epoch, cfg);
    if (epoch == 0 || plan.stages != current_stages) {
      model.set_trainable_stages(plan.stages, plan.heads_trainable);
      if (epoch > 0) plateau.reset(plan.lr);
      current_stages = plan.stages;
    }
    const double lr = plateau.lr();

    std::vector<std::size_t> order(entries.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng shuffle_rng(derive_seed({cfg.seed, kShuffleTag, static_cast<std::uint64_t>(epoch)}));
    shuffle_rng.shuffle(order);

    double task_sum = 0.0, concept_sum = 0.0;
    int correct = 0;
    std::size_t batch_index = 0;
    for (auto [s, e] : batch_ranges(order.size(), static_cast<std::size_t>(cfg.batch_size))) {
      std::vector<Volume> augmented;
      std::vector<std::size_t> rows;
      std::vector<int> batch_labels;
      augmented.reserve(e - s);
      for (std::size_t p = s; p < e; ++p) {
        const TrainEntry& entry = entries[order[p]];
        const Volume& src = cohort.volumes[entry.index];
        if (cfg.augment) {
          const AugmentPolicy& policy = entry.synthetic ? policies.control : policies.train;
          augmented.push_back(apply_augment(src, policy, cfg.seed, epoch, order[p]));
        } else {
          augmented.push_back(src);
        }
        rows.push_back(entry.index);
        batch_labels.push_back(labels[entry.index]);
      }
      std::vector<const Volume*> ptrs;
      for (const auto& v : augmented) ptrs.push_back(&v);

      Rng dropout_rng(derive_seed({cfg.seed, kDropoutTag, static_cast<std::uint64_t>(epoch), batch_index++}));
      tape.clear();
      const auto fwd = model.forward(make_batch(ptrs), nn::Mode::train, &tape, &dropout_rng);
      Tensor<float> d_logits, d_c;
      const Tensor<float> tgt = target_batch(targets, rows);
      double task, concepts;
      try {
        task = focal_loss(fwd.logits, batch_labels, cfg.gamma, cfg.smoothing, &d_logits);
        concepts = concept_mse(fwd.c, tgt, &d_c);
      } catch (const NumericError& err) {
        throw NumericError("epoch " + std::to_string(epoch) + ", batch " + std::to_string(batch_index - 1) +
                           " (lr " + format_exact(lr) + "): " + err.what());
      }
      for (float& g : d_logits.values()) g *= static_cast<float>(cfg.beta);
      for (float& g : d_c.values()) g *= static_cast<float>(cfg.alpha);
      model.zero_grad();
      model.backward(d_logits, d_c, tape);
      adam.step(lr);
      probe.step(targets, rows, batch_labels);

      const double n = static_cast<double>(rows.size());
      task_sum += task * n;
      concept_sum += concepts * n;
      correct += count_correct(fwd.logits, batch_labels);
    }

    const EvalResult val = evaluate_indices(model, cohort, fold.val, targets, cfg);
    EpochRecord rec;
    rec.epoch = epoch;
    const double total = static_cast<double>(entries.size());
    rec.train_loss = total_loss(task_sum / total, concept_sum / total, cfg.alpha, cfg.beta);
    rec.val_loss = val.loss;
    rec.train_acc = correct / total;
    rec.val_acc = val.accuracy;
    rec.lr = lr;
    rec.encoder_frozen = plan.encoder_frozen();
    rec.val_auc = val.auc;
    rec.val_concept_informed_acc = probe.accuracy(targets, fold.val, labels);
    result.epochs.push_back(rec);

    if (rec.val_loss.total < best_loss) {
      best_loss = rec.val_loss.total;
      result.best_epoch = epoch;
      best_weights.clear();
      for (const auto* p : model.parameters()) best_weights.emplace_back(p->value.values().begin(), p->value.values().end());
    }
    plateau.step(rec.val_loss.total);
    if (on_epoch) on_epoch(rec, model);
  }

  const auto& params = model.parameters();
  for (std::size_t i = 0; i < params.size(); ++i) std::copy(best_weights[i].begin(), best_weights[i].end(), params[i]->value.data());
  model.zero_grad();
  return result;
}

}  // namespace softcbm
